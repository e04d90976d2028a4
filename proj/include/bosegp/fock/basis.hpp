#pragma once

#include <bosegp/common.hpp>

#include <algorithm>
#include <memory>
#include <optional>
#include <span>
#include <sstream>

namespace bosegp::fock {

using Occupation = std::vector<int>;

// Occupation-number basis over M modes. Mode 0 is the condensate; a restricted
// basis keeps only states with m_0 = 0. States are stored lexicographically.
class FockBasis {
 public:
  static constexpr std::size_t kDefaultCap = 1'000'000;

  // States with total occupation <= max_particles, or == when fixed_total.
  FockBasis(int num_modes, int max_particles, bool restrict_to_excitations,
            bool fixed_total = false, std::size_t cap = kDefaultCap)
      : num_modes_(num_modes),
        max_particles_(max_particles),
        restricted_(restrict_to_excitations),
        fixed_total_(fixed_total) {
    require(num_modes >= 1, "FockBasis: need at least one mode");
    require(max_particles >= 0, "FockBasis: negative particle number");
    const std::uint64_t dim = count(num_modes, max_particles, restricted_, fixed_total_);
    if (dim > cap) {
      std::ostringstream os;
      os << "FockBasis: dimension " << dim << " exceeds cap " << cap << " (M=" << num_modes
         << ", n=" << max_particles << ")";
      throw ResourceLimit(os.str());
    }
    flat_.reserve(static_cast<std::size_t>(dim) * num_modes_);
    totals_.reserve(static_cast<std::size_t>(dim));
    Occupation cur(num_modes_, 0);
    enumerate(0, max_particles_, cur);
  }

  static std::uint64_t count(int num_modes, int n, bool restricted, bool fixed_total) {
    const int active = num_modes - (restricted ? 1 : 0);
    if (active <= 0) return (fixed_total && n > 0) ? 0 : 1;  // only the vacuum survives
    if (fixed_total) return binomial(n + active - 1, active - 1);
    return binomial(n + active, active);
  }

  int num_modes() const { return num_modes_; }
  int max_particles() const { return max_particles_; }
  bool restricted() const { return restricted_; }
  bool fixed_total() const { return fixed_total_; }
  std::size_t dimension() const { return totals_.size(); }

  std::span<const int> state(std::size_t k) const {
    return {flat_.data() + k * num_modes_, static_cast<std::size_t>(num_modes_)};
  }
  int occupation(std::size_t k, int mode) const { return flat_[k * num_modes_ + mode]; }
  int total(std::size_t k) const { return totals_[k]; }

  bool admits(std::span<const int> occ) const {
    if (static_cast<int>(occ.size()) != num_modes_) return false;
    int tot = 0;
    for (int m : occ) {
      if (m < 0) return false;
      tot += m;
    }
    if (restricted_ && occ[0] != 0) return false;
    return fixed_total_ ? tot == max_particles_ : tot <= max_particles_;
  }

  std::optional<std::size_t> find(std::span<const int> occ) const {
    if (!admits(occ)) return std::nullopt;
    std::size_t lo = 0, hi = dimension();
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      const auto s = state(mid);
      if (std::lexicographical_compare(s.begin(), s.end(), occ.begin(), occ.end()))
        lo = mid + 1;
      else
        hi = mid;
    }
    if (lo < dimension()) {
      const auto s = state(lo);
      if (std::equal(s.begin(), s.end(), occ.begin())) return lo;
    }
    return std::nullopt;
  }

  std::size_t index(std::span<const int> occ) const {
    auto k = find(occ);
    if (!k) throw InvalidArgument("FockBasis: occupation vector not in basis");
    return *k;
  }

  // Modes carrying particles in this basis (all but 0 when restricted).
  std::vector<int> active_modes() const {
    std::vector<int> out;
    for (int p = restricted_ ? 1 : 0; p < num_modes_; ++p) out.push_back(p);
    return out;
  }

  void check_mode(int mode) const {
    if (mode < 0 || mode >= num_modes_)
      throw InvalidArgument("invalid mode index " + std::to_string(mode));
    if (restricted_ && mode == 0)
      throw InvalidArgument("mode 0 is excluded from an excitation basis");
  }

  bool operator==(const FockBasis& o) const {
    return num_modes_ == o.num_modes_ && max_particles_ == o.max_particles_ &&
           restricted_ == o.restricted_ && fixed_total_ == o.fixed_total_;
  }

 private:
  void enumerate(int mode, int remaining, Occupation& cur) {
    if (mode == num_modes_) {
      if (fixed_total_ && remaining != 0) return;
      flat_.insert(flat_.end(), cur.begin(), cur.end());
      totals_.push_back(max_particles_ - remaining);
      return;
    }
    if (restricted_ && mode == 0) {
      cur[0] = 0;
      enumerate(1, remaining, cur);
      return;
    }
    if (fixed_total_ && mode == num_modes_ - 1) {
      cur[mode] = remaining;
      enumerate(mode + 1, 0, cur);
      cur[mode] = 0;
      return;
    }
    for (int m = 0; m <= remaining; ++m) {
      cur[mode] = m;
      enumerate(mode + 1, remaining - m, cur);
    }
    cur[mode] = 0;
  }

  int num_modes_;
  int max_particles_;
  bool restricted_;
  bool fixed_total_;
  std::vector<int> flat_;
  std::vector<int> totals_;
};

using BasisPtr = std::shared_ptr<const FockBasis>;

inline BasisPtr build_basis(int num_modes, int max_particles, bool restrict_to_excitations,
                            std::size_t cap = FockBasis::kDefaultCap) {
  return std::make_shared<const FockBasis>(num_modes, max_particles, restrict_to_excitations,
                                           false, cap);
}

// Fixed particle-number sector, used for number-conserving Hamiltonians.
inline BasisPtr build_sector(int num_modes, int total, std::size_t cap = FockBasis::kDefaultCap) {
  return std::make_shared<const FockBasis>(num_modes, total, false, true, cap);
}

}  // namespace bosegp::fock
