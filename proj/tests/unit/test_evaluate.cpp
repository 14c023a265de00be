#include "doctest.h"

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "engage/evaluate.hpp"
#include "engage/qrlearn.hpp"
#include "oracles.hpp"

using namespace engage;
using namespace engage::eval;

namespace {

// Expected clicks per session of a deterministic stationary policy, from the
// linear system V = c + diag(1 - term) P V, taken independently of the
// simulator.
double closed_form_vv(const sim::SyntheticMDP& mdp, const std::vector<ActionId>& policy) {
    const auto n = Eigen::Index(mdp.n_states);
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd c(n);
    for (Eigen::Index s = 0; s < n; ++s) {
        const auto act = policy[std::size_t(s)];
        const auto st = StateId(s);
        c(s) = mdp.click(st, act);
        const auto row = mdp.next_state_row(st, act);
        for (Eigen::Index t = 0; t < n; ++t) a(s, t) -= (1.0 - mdp.term(st, act)) * row[std::size_t(t)];
    }
    const Eigen::VectorXd v = a.partialPivLu().solve(c);
    double vv = 0.0;
    for (Eigen::Index s = 0; s < n; ++s) vv += mdp.initial_state_dist[std::size_t(s)] * v(s);
    return vv;
}

ModelView table_view(const dist::ValueTable& table, const sim::SyntheticMDP* ell_source,
                     double shift = 0.0) {
    ModelView view;
    view.quantiles = [&table, shift](StateId s, ActionId a) {
        const auto atoms = table.at(s, a);
        std::vector<double> out(atoms.begin(), atoms.end());
        for (double& v : out) v += shift;
        return out;
    };
    if (ell_source) {
        view.termination = [ell_source](StateId s, ActionId a) { return ell_source->term(s, a); };
    }
    return view;
}

learn::EngagementModel constant_termination_model(std::uint32_t n_states, std::uint32_t n_actions,
                                                   double ell) {
    learn::Architecture arch;
    arch.vocab = {n_states, n_actions};
    arch.embedding_dim = 2;
    arch.hidden = {4};
    arch.quantiles = 3;
    learn::EngagementModel model(arch);
    model.initialize(1);
    for (const auto& t : model.tensors()) {
        if (t.name == "termination_head.bias") {
            model.parameters()[t.offset] = float(std::log(ell / (1.0 - ell)));
        }
    }
    return model;
}

}  // namespace

TEST_SUITE("evaluate") {

TEST_CASE("kendall tau: hand cases") {
    const std::vector<double> x{1, 2, 3, 4};
    CHECK(kendall_tau(x, x) == doctest::Approx(1.0));
    CHECK(kendall_tau(x, std::vector<double>{4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(kendall_tau(x, std::vector<double>{5, 5, 5, 5}) == 0.0);
    // Pairs: (1,2) tie in y, remaining five concordant. tau-b = 5 / sqrt(6 * 5).
    CHECK(kendall_tau(x, std::vector<double>{1, 1, 2, 3}) == doctest::Approx(5.0 / std::sqrt(30.0)));
    CHECK_THROWS_AS(kendall_tau(x, std::vector<double>{1, 2}), ValidationError);
}

TEST_CASE("kendall tau: equals tau-a without ties and is centered under a permutation null") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0.0, 1.0);
    double sum = 0.0;
    const int trials = 2000;
    for (int trial = 0; trial < trials; ++trial) {
        std::vector<double> x(10), y(10);
        for (auto& v : x) v = n(rng);
        for (auto& v : y) v = n(rng);
        const double tau = kendall_tau(x, y);
        CHECK(tau == doctest::Approx(engage::testing::kendall_tau_a(x, y)).epsilon(1e-12));
        sum += tau;
    }
    // Var(tau) = 2(2n + 5) / (9 n (n - 1)) for n = 10.
    const double se = std::sqrt(2.0 * 25.0 / (9.0 * 90.0) / trials);
    CHECK(std::abs(sum / trials) < 4.0 * se);
}

TEST_CASE("compare_to_oracle: the oracle itself scores zero error") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto mdp = sim::random_mdp(4, 3, seed);
        const auto disc = dist::DiscountSpec::from_mdp(mdp, 0.9, dist::Backup::data_terminal);
        const auto oracle = dist::solve_fixed_point(mdp, disc, 16, 1e-12, 100'000).table;
        OracleOptions options;
        options.eta = 0.9;
        options.dp_tol = 1e-12;
        options.mc_rollouts = 4000;
        options.seed = seed;

        const auto report = compare_to_oracle(mdp, table_view(oracle, &mdp), 16, options);
        CHECK(report.mean_value_error < 1e-9);
        CHECK(report.max_value_error < 1e-9);
        REQUIRE(report.ell_calibration_error.has_value());
        CHECK(*report.ell_calibration_error == 0.0);
        CHECK(report.kendall_tau == doctest::Approx(1.0));
        CHECK(report.max_w1_to_mc < 0.25);

        const auto shifted = compare_to_oracle(mdp, table_view(oracle, nullptr, 0.5), 16, options);
        CHECK(shifted.mean_value_error == doctest::Approx(0.5).epsilon(1e-9));
        CHECK(shifted.max_value_error == doctest::Approx(0.5).epsilon(1e-9));
        CHECK_FALSE(shifted.ell_calibration_error.has_value());
        CHECK(shifted.mean_w1_to_mc > report.mean_w1_to_mc);
    }
}

TEST_CASE("compare_to_oracle: random scores give tau near zero") {
    const auto mdp = sim::random_mdp(80, 6, 4);
    std::mt19937_64 rng(5);
    std::vector<double> noise(mdp.n_pairs());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : noise) v = u(rng);
    ModelView view;
    view.quantiles = [&](StateId s, ActionId a) {
        return std::vector<double>(4, noise[mdp.pair_index(s, a)]);
    };
    OracleOptions options;
    options.eta = 0.8;
    options.mc_rollouts = 10;
    const auto report = compare_to_oracle(mdp, view, 4, options);
    // Per-state tau over 6 items has variance 2 * 17 / (9 * 30); averaged over 80 states.
    const double se = std::sqrt(34.0 / 270.0 / 80.0);
    CHECK(std::abs(report.kendall_tau) < 4.0 * se);
}

TEST_CASE("evaluate_ranking: click-greedy matches the simulator and the closed form") {
    const auto mdp = sim::clickbait_mdp();
    const std::size_t sessions = 20'000;
    RankingPolicy greedy{BaseScore::click_prob, 0.0};
    const auto stats = evaluate_ranking(mdp, {}, greedy, sessions, 3);
    const auto direct = sim::simulate_policy(
        mdp, [](StateId) { return ActionId(0); }, sessions, 3);
    CHECK(stats.clicks == direct.clicks);
    CHECK(stats.impressions == direct.impressions);
    CHECK(stats.sessions == sessions);

    const double expected = closed_form_vv(mdp, {0, 0});
    // Clicks per session are bounded by session length, whose variance is
    // at most 1 / p^2 with p the smallest termination rate.
    const double se = std::sqrt(1.0 / (0.05 * 0.05) / double(sessions));
    CHECK(std::abs(stats.vv() - expected) < 4.0 * se);
}

TEST_CASE("evaluate_ranking: long-term engagement beats click-greedy on the clickbait environment") {
    const auto mdp = sim::clickbait_mdp();
    const auto values =
        dist::expected_returns(mdp, dist::DiscountSpec::from_mdp(mdp, 0.95, dist::Backup::data_terminal));
    auto engagement = [&](StateId s, ActionId a) { return values[mdp.pair_index(s, a)]; };
    const auto engaged = evaluate_ranking(mdp, engagement, RankingPolicy{BaseScore::none, 1.0}, 20'000, 7);
    const auto greedy = evaluate_ranking(mdp, {}, RankingPolicy{BaseScore::click_prob, 0.0}, 20'000, 7);
    CHECK(closed_form_vv(mdp, {1, 1}) > closed_form_vv(mdp, {0, 0}));
    CHECK(engaged.vv() > greedy.vv());
    CHECK(engaged.ctr() < greedy.ctr());

    CHECK_THROWS_AS(evaluate_ranking(mdp, {}, RankingPolicy{BaseScore::none, 1.0}, 10, 1),
                    ValidationError);
}

TEST_CASE("termination_calibration") {
    const auto mdp = engage::testing::uniform_mdp(3, 2, 0.3, 0.3);
    const auto logs = sim::generate_logs(mdp, 20'000, 9);

    const auto calibrated = termination_calibration(constant_termination_model(3, 2, 0.3), logs, 500);
    CHECK(calibrated.pairs == 6);
    // Each pair sees thousands of visits; the binomial error is below 0.03.
    CHECK(calibrated.max_error < 0.03);
    CHECK(calibrated.mean_error <= calibrated.max_error);

    const auto off = termination_calibration(constant_termination_model(3, 2, 0.5), logs, 500);
    CHECK(off.max_error == doctest::Approx(0.2).epsilon(0.15));

    CHECK(termination_calibration(constant_termination_model(3, 2, 0.3), logs, 10'000'000).pairs == 0);

    learn::Architecture arch;
    arch.vocab = {3, 2};
    arch.termination_head = false;
    arch.quantiles = 2;
    arch.embedding_dim = 2;
    arch.hidden = {2};
    learn::EngagementModel headless(arch);
    headless.initialize(1);
    CHECK_THROWS_AS(termination_calibration(headless, logs, 1), ValidationError);
}

}  // TEST_SUITE
