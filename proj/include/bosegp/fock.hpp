#pragma once

#include <bosegp/fock/basis.hpp>
#include <bosegp/fock/excitation.hpp>
#include <bosegp/fock/matrix_function.hpp>
#include <bosegp/fock/operators.hpp>
