#pragma once

// Independent reference implementations used as test oracles. None of these
// call into the code under test beyond plain data types.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "engage/distdp.hpp"
#include "engage/simenv.hpp"

namespace engage::testing {

// One state, one action, self-loop.
sim::SyntheticMDP single_state_mdp(double click, double term);

// Uniform tables over n_states x n_actions with constant click and term.
sim::SyntheticMDP uniform_mdp(std::size_t n_states, std::size_t n_actions, double click,
                              double term);

// Brute-force operator: enumerates every (reward, successor, next action,
// atom) outcome, and for each midpoint scans all distinct values for the
// smallest one whose mixture CDF reaches the midpoint (within 1e-12).
dist::ValueTable brute_force_operator(const dist::ValueTable& z, const sim::SyntheticMDP& mdp,
                                      const dist::DiscountSpec& disc);

// Max over pairs of the per-pair distance, looping without sup_wasserstein.
double brute_force_sup(const dist::ValueTable& lhs, const dist::ValueTable& rhs, double p);

// Independent rollout of the termination-aware return from (s, a): keeps its
// own RNG and walks the tables directly.
double brute_force_mc_mean(const sim::SyntheticMDP& mdp, StateId s, ActionId a, double eta,
                           std::size_t n_rollouts, std::uint64_t seed);

// Pearson chi-square statistic of observed session lengths against
// Geometric(p) on support {1, 2, ...}; tail cells are merged so every
// expected count is at least 5. Returns {statistic, degrees of freedom}.
std::pair<double, std::size_t> geometric_chi_square(std::span<const std::size_t> lengths,
                                                    double p);

// Upper critical value of the chi-square distribution.
double chi_square_critical(std::size_t dof, double alpha);

// Kendall tau-a by direct pair counting; a second implementation for
// cross-checking tau-b on tie-free inputs.
double kendall_tau_a(std::span<const double> x, std::span<const double> y);

// Scoped temporary directory, removed on destruction.
class TempDir {
  public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace engage::testing
