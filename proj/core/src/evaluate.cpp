#include "engage/evaluate.hpp"

#include <algorithm>
#include <cmath>

#include "engage/ranker.hpp"

namespace engage::eval {

ModelView view_model(const learn::EngagementModel& model, const sim::Featurizer& featurizer) {
    ModelView view;
    view.quantiles = [&model, featurizer](StateId s, ActionId a) {
        auto input = featurizer.state_features(s);
        input.push_back(a);
        const auto q = model.forward(input).quantiles;
        return std::vector<double>(q.begin(), q.end());
    };
    if (model.architecture().termination_head) {
        view.termination = [&model, featurizer](StateId s, ActionId a) {
            auto input = featurizer.state_features(s);
            input.push_back(a);
            return double(*model.forward(input).termination());
        };
    }
    return view;
}

double kendall_tau(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ValidationError("kendall_tau needs equal-length inputs");
    double concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = i + 1; j < x.size(); ++j) {
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            if (dx == 0 && dy == 0) continue;
            if (dx == 0) {
                ++ties_x;
            } else if (dy == 0) {
                ++ties_y;
            } else if ((dx > 0) == (dy > 0)) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    }
    const double denom = std::sqrt((concordant + discordant + ties_x) *
                                   (concordant + discordant + ties_y));
    return denom > 0 ? (concordant - discordant) / denom : 0.0;
}

sim::PolicyStats evaluate_ranking(const sim::SyntheticMDP& mdp,
                                  const std::function<double(StateId, ActionId)>& engagement,
                                  const RankingPolicy& policy, std::size_t n_sessions,
                                  std::uint64_t seed) {
    if (policy.w != 0.0 && !engagement) {
        throw ValidationError("a non-zero blend weight needs an engagement scorer");
    }
    // Rankings only depend on the state, so they are computed once.
    std::vector<ActionId> top(mdp.n_states);
    std::vector<ranking::Candidate> candidates(mdp.n_actions);
    std::vector<double> scores(mdp.n_actions);
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        for (std::size_t a = 0; a < mdp.n_actions; ++a) {
            const double base =
                policy.base == BaseScore::click_prob ? mdp.click(StateId(s), ActionId(a)) : 0.0;
            candidates[a] = {ActionId(a), base};
            scores[a] = policy.w != 0.0 ? engagement(StateId(s), ActionId(a)) : 0.0;
        }
        top[s] = ranking::rank_scored(candidates, scores, policy.w).front().action;
    }
    return sim::simulate_policy(
        mdp, [&top](StateId s) { return top[s]; }, n_sessions, seed);
}

OracleReport compare_to_oracle(const sim::SyntheticMDP& mdp, const ModelView& model,
                               std::size_t quantiles, const OracleOptions& options) {
    const auto disc =
        options.mode == dist::DiscountMode::constant_gamma
            ? dist::DiscountSpec::constant(options.eta, dist::Backup::data_terminal)
            : dist::DiscountSpec::from_mdp(mdp, options.eta, dist::Backup::data_terminal);
    const auto oracle =
        dist::solve_fixed_point(mdp, disc, quantiles, options.dp_tol, options.dp_max_iter).table;

    OracleReport report;
    double ell_error = 0.0;
    double tau_sum = 0.0;
    const double pairs = double(mdp.n_pairs());
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        std::vector<double> model_means(mdp.n_actions);
        std::vector<double> oracle_means(mdp.n_actions);
        for (std::size_t a = 0; a < mdp.n_actions; ++a) {
            const auto st = StateId(s);
            const auto ac = ActionId(a);
            const auto atoms = model.quantiles(st, ac);
            model_means[a] = dist::mean_of_atoms(atoms);
            oracle_means[a] = dist::mean_of_atoms(oracle.at(st, ac));
            const double err = std::abs(model_means[a] - oracle_means[a]);
            report.mean_value_error += err / pairs;
            report.max_value_error = std::max(report.max_value_error, err);

            const auto samples = sim::mc_return_samples(
                mdp, st, ac, options.eta, options.mc_rollouts,
                options.seed + mdp.pair_index(st, ac));
            const auto mc = dist::empirical_quantiles(samples, atoms.size());
            const double w1 = dist::wasserstein(atoms, mc, 1.0);
            report.mean_w1_to_mc += w1 / pairs;
            report.max_w1_to_mc = std::max(report.max_w1_to_mc, w1);

            if (model.termination) {
                ell_error = std::max(ell_error, std::abs(model.termination(st, ac) - mdp.term(st, ac)));
            }
        }
        tau_sum += kendall_tau(model_means, oracle_means);
    }
    if (model.termination) report.ell_calibration_error = ell_error;
    report.kendall_tau = tau_sum / double(mdp.n_states);
    return report;
}

CalibrationReport termination_calibration(const learn::EngagementModel& model,
                                          std::span<const sim::Transition> logs,
                                          std::size_t min_visits) {
    if (!model.architecture().termination_head) {
        throw ValidationError("model has no termination head");
    }
    CalibrationReport report;
    for (const auto& [key, counts] : sim::pair_counts(logs)) {
        if (counts.visits < min_visits) continue;
        auto input = key.state;
        input.push_back(key.action);
        const double ell = *model.forward(input).termination();
        const double err = std::abs(ell - double(counts.terminals) / double(counts.visits));
        ++report.pairs;
        report.max_error = std::max(report.max_error, err);
        report.mean_error += err;
    }
    if (report.pairs > 0) report.mean_error /= double(report.pairs);
    return report;
}

}  // namespace engage::eval
