#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "engage/common.hpp"

namespace engage::sim {

// Tabular recommendation environment. Tables are row-major:
//   transition         [s][a][s']
//   click_prob         [s][a]    reward ~ Bernoulli(click_prob)
//   term_prob          [s][a]    probability the session ends after (s, a)
//   behavior_policy    [s][a]
//   initial_state_dist [s]
struct SyntheticMDP {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    std::vector<double> transition;
    std::vector<double> click_prob;
    std::vector<double> term_prob;
    std::vector<double> behavior_policy;
    std::vector<double> initial_state_dist;

    std::size_t pair_index(StateId s, ActionId a) const { return s * n_actions + a; }
    std::size_t n_pairs() const { return n_states * n_actions; }

    std::span<const double> next_state_row(StateId s, ActionId a) const {
        return {transition.data() + pair_index(s, a) * n_states, n_states};
    }
    std::span<const double> policy_row(StateId s) const {
        return {behavior_policy.data() + s * n_actions, n_actions};
    }
    double click(StateId s, ActionId a) const { return click_prob[pair_index(s, a)]; }
    double term(StateId s, ActionId a) const { return term_prob[pair_index(s, a)]; }

    // Throws ValidationError naming the first offending table row. Session
    // generation needs term_floor > 0; the DP and rollout oracles accept 0.
    void validate(double term_floor = 0.0) const;

    bool operator==(const SyntheticMDP&) const = default;
};

// Maps state ids to categorical feature ids.
//   tabular: {s}, one field with vocabulary n_states
//   hashed:  `fields` ids in [0, vocab), each a seeded hash of (s, field)
struct Featurizer {
    enum class Mode { tabular, hashed };

    Mode mode = Mode::tabular;
    std::uint32_t fields = 4;
    std::uint32_t vocab = 64;
    std::uint64_t seed = 0;

    FeatureIds state_features(StateId s) const;
    std::vector<std::uint32_t> vocab_sizes(std::size_t n_states) const;

    bool operator==(const Featurizer&) const = default;
};

struct Transition {
    std::uint64_t session_id = 0;
    std::uint32_t step = 0;
    FeatureIds state;
    ActionId action = 0;
    std::uint8_t reward = 0;
    bool terminal = false;
    std::optional<FeatureIds> next_state;
    std::optional<ActionId> next_action;

    bool operator==(const Transition&) const = default;
};

struct GenerateOptions {
    Featurizer featurizer{};
    double term_floor = 1e-6;
    std::size_t max_session_length = 1'000'000;
    unsigned threads = 1;
};

// Samples sessions from the behavior policy. Session k draws from the
// stream derive_seed(seed, k), so output is identical for any thread count.
std::vector<Transition> generate_logs(const SyntheticMDP& mdp, std::size_t n_sessions,
                                      std::uint64_t seed, const GenerateOptions& options = {});

// Monte Carlo samples of the termination-aware return from the forced pair
// (s, a) under the behavior policy:
//   G = r_0 + sum_{t>=1} [alive at t] * prod_{k=1..t} gamma'(s_k, a_k) * r_t
// with gamma'(s, a) = min(1 - term_prob(s, a), eta). A rollout stops once the
// discount product drops below `truncation`.
std::vector<double> mc_return_samples(const SyntheticMDP& mdp, StateId s, ActionId a,
                                      double eta, std::size_t n_rollouts,
                                      std::uint64_t seed, double truncation = 1e-9);

using PairTable = std::map<PairKey, double>;

struct PairCounts {
    std::size_t visits = 0;
    std::size_t terminals = 0;
};

std::map<PairKey, PairCounts> pair_counts(std::span<const Transition> logs);

// #terminal / #visits for every visited pair; unvisited pairs are absent.
PairTable empirical_termination_rate(std::span<const Transition> logs);

struct PolicyStats {
    std::size_t sessions = 0;
    std::size_t impressions = 0;
    std::size_t clicks = 0;

    double vv() const { return sessions ? double(clicks) / double(sessions) : 0.0; }
    double imp() const { return sessions ? double(impressions) / double(sessions) : 0.0; }
    double ctr() const { return impressions ? double(clicks) / double(impressions) : 0.0; }
};

// Runs sessions in the simulator with `policy` choosing the shown item.
PolicyStats simulate_policy(const SyntheticMDP& mdp,
                            const std::function<ActionId(StateId)>& policy,
                            std::size_t n_sessions, std::uint64_t seed,
                            std::size_t max_session_length = 1'000'000);

struct RandomMdpOptions {
    double click_min = 0.05;
    double click_max = 0.6;
    double term_min = 0.1;
    double term_max = 0.5;
    // Fraction of successor states with non-zero probability per pair.
    double transition_density = 1.0;
    bool uniform_behavior = false;
};

SyntheticMDP random_mdp(std::size_t n_states, std::size_t n_actions, std::uint64_t seed,
                        const RandomMdpOptions& options = {});

// Two states ("engaged", "bored") and two items. Item 0 has the higher click
// probability but moves users to the bored state, where sessions end quickly;
// item 1 clicks less often and keeps users engaged.
SyntheticMDP clickbait_mdp();

}  // namespace engage::sim
