#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "engage/common.hpp"
#include "engage/simenv.hpp"

namespace engage::dist {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Quantile midpoints (2i - 1) / (2M), i = 1..M.
std::vector<double> quantile_midpoints(std::size_t m);

// M equally weighted atoms; atom i estimates the quantile at midpoint i.
class QuantileDistribution {
  public:
    explicit QuantileDistribution(std::vector<double> atoms);

    std::size_t size() const noexcept { return atoms_.size(); }
    std::span<const double> atoms() const noexcept { return atoms_; }

    // Mean of the atoms, summed in ascending order so it does not depend on
    // the atom order.
    double mean() const;
    QuantileDistribution sorted() const;

    bool operator==(const QuantileDistribution&) const = default;

  private:
    std::vector<double> atoms_;
};

double mean_of_atoms(std::span<const double> atoms);

// Order statistics of `samples` at the M quantile midpoints: the sorted
// sample at index floor(tau_i * N).
std::vector<double> empirical_quantiles(std::span<const double> samples, std::size_t m);

// One quantile distribution per (state, action), stored [s][a][i].
class ValueTable {
  public:
    ValueTable() = default;
    ValueTable(std::size_t n_states, std::size_t n_actions, std::size_t quantiles,
               double fill = 0.0);

    std::size_t n_states() const noexcept { return n_states_; }
    std::size_t n_actions() const noexcept { return n_actions_; }
    std::size_t quantiles() const noexcept { return m_; }

    std::span<double> at(StateId s, ActionId a) {
        return {atoms_.data() + (s * n_actions_ + a) * m_, m_};
    }
    std::span<const double> at(StateId s, ActionId a) const {
        return {atoms_.data() + (s * n_actions_ + a) * m_, m_};
    }
    QuantileDistribution distribution(StateId s, ActionId a) const;

    std::span<double> data() noexcept { return atoms_; }
    std::span<const double> data() const noexcept { return atoms_; }

    bool same_shape(const ValueTable& other) const noexcept {
        return n_states_ == other.n_states_ && n_actions_ == other.n_actions_ &&
               m_ == other.m_;
    }

    bool operator==(const ValueTable&) const = default;

  private:
    std::size_t n_states_ = 0;
    std::size_t n_actions_ = 0;
    std::size_t m_ = 0;
    std::vector<double> atoms_;
};

enum class DiscountMode {
    constant_gamma,     // gamma' = eta everywhere
    termination_aware,  // gamma'(s, a) = min(1 - ell(s, a), eta)
};

enum class Backup {
    // r + gamma'(s', a') Z(s', a') for every outcome.
    discounted,
    // With probability term_prob(s, a) the session ends and the value is r;
    // otherwise as `discounted`. This is what a learner bootstrapping only on
    // non-terminal logged transitions converges to.
    data_terminal,
};

struct DiscountSpec {
    double eta = 0.95;
    std::vector<double> ell_table;  // [s][a]; ignored in constant_gamma mode
    DiscountMode mode = DiscountMode::termination_aware;
    Backup backup = Backup::discounted;

    double gamma(std::size_t pair) const;
    void validate(std::size_t n_pairs) const;

    // Termination-aware discounts with ell taken from the mdp's term_prob.
    static DiscountSpec from_mdp(const sim::SyntheticMDP& mdp, double eta,
                                 Backup backup = Backup::discounted);
    static DiscountSpec constant(double eta, Backup backup = Backup::discounted);
};

// p >= 1, or kInfinity. Atoms are compared after sorting.
double wasserstein(std::span<const double> lhs, std::span<const double> rhs, double p);
double wasserstein(const QuantileDistribution& lhs, const QuantileDistribution& rhs,
                   double p);

double sup_wasserstein(const ValueTable& lhs, const ValueTable& rhs, double p);

struct WeightedAtom {
    double value;
    double weight;
};

// Left-continuous inverse CDF of a finite mixture at the M quantile
// midpoints. Sorts `mixture` in place. A midpoint landing on a CDF flat
// (within 1e-12) resolves to the smaller value.
std::vector<double> project_quantiles(std::vector<WeightedAtom>& mixture, std::size_t m);

// One application of the (termination-aware) distributional Bellman operator
// followed by quantile projection. Output atoms are sorted ascending.
ValueTable apply_operator(const ValueTable& z, const sim::SyntheticMDP& mdp,
                          const DiscountSpec& disc);

struct FixedPoint {
    ValueTable table;
    // d_inf(Z_k, Z_{k+1}) for each application, starting from Z_0 = 0.
    std::vector<double> trace;
};

// Iterates apply_operator from the all-zero table until successive tables are
// within `tol` in sup d_inf. Throws ConvergenceError carrying the trace.
FixedPoint solve_fixed_point(const sim::SyntheticMDP& mdp, const DiscountSpec& disc,
                             std::size_t m, double tol, std::size_t max_iter);

struct ContractionOptions {
    std::size_t quantiles = 16;
    double p = kInfinity;
    // Atoms are drawn uniformly from [low, high]; high <= 0 means 1 / (1 - eta).
    double low = 0.0;
    double high = 0.0;
};

struct ContractionReport {
    std::vector<std::pair<double, double>> distances;  // (before, after)
    double max_ratio = 0.0;
};

ContractionReport check_contraction(const sim::SyntheticMDP& mdp, const DiscountSpec& disc,
                                    std::size_t trials, std::uint64_t seed,
                                    const ContractionOptions& options = {});

// Expected return per pair [s][a] from the linear Bellman expectation
// equation with the same discounts and backup as apply_operator.
std::vector<double> expected_returns(const sim::SyntheticMDP& mdp, const DiscountSpec& disc);

}  // namespace engage::dist
