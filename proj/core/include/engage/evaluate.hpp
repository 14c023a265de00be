#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "engage/distdp.hpp"
#include "engage/network.hpp"
#include "engage/simenv.hpp"

namespace engage::eval {

// Value-distribution atoms and termination probability over simulator ids.
struct ModelView {
    std::function<std::vector<double>(StateId, ActionId)> quantiles;
    // Empty when the model has no termination head.
    std::function<double(StateId, ActionId)> termination;
};

ModelView view_model(const learn::EngagementModel& model, const sim::Featurizer& featurizer);

// Kendall tau-b; 0 when either side is constant.
double kendall_tau(std::span<const double> x, std::span<const double> y);

enum class BaseScore {
    none,        // g_b = 0: rank by engagement alone
    click_prob,  // g_b = true click probability: a myopic pCTR ranker
};

struct RankingPolicy {
    BaseScore base = BaseScore::none;
    double w = 1.0;
};

// Shows the top-ranked item (all actions are candidates) at every step of
// simulated sessions. `engagement` may be empty when w = 0.
sim::PolicyStats evaluate_ranking(const sim::SyntheticMDP& mdp,
                                  const std::function<double(StateId, ActionId)>& engagement,
                                  const RankingPolicy& policy, std::size_t n_sessions,
                                  std::uint64_t seed);

struct OracleOptions {
    double eta = 0.95;
    dist::DiscountMode mode = dist::DiscountMode::termination_aware;
    std::size_t mc_rollouts = 10'000;
    std::uint64_t seed = 0;
    double dp_tol = 1e-9;
    std::size_t dp_max_iter = 100'000;
};

struct OracleReport {
    double mean_value_error = 0.0;  // mean over pairs of |g - oracle mean|
    double max_value_error = 0.0;
    double mean_w1_to_mc = 0.0;  // W1 between model atoms and Monte Carlo quantiles
    double max_w1_to_mc = 0.0;
    std::optional<double> ell_calibration_error;  // max |ell_hat - term_prob|
    double kendall_tau = 0.0;  // mean over states, model vs oracle action order
};

// The oracle is the data-terminal fixed point with the model's atom count,
// under the discount mode in `options`.
OracleReport compare_to_oracle(const sim::SyntheticMDP& mdp, const ModelView& model,
                               std::size_t quantiles, const OracleOptions& options);

struct CalibrationReport {
    std::size_t pairs = 0;
    double max_error = 0.0;
    double mean_error = 0.0;
};

// |ell_hat - empirical termination rate| over pairs with at least
// `min_visits` logged visits.
CalibrationReport termination_calibration(const learn::EngagementModel& model,
                                          std::span<const sim::Transition> logs,
                                          std::size_t min_visits);

}  // namespace engage::eval
