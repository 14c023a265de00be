#include "engage/simenv.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include "engage/rng.hpp"

namespace engage::sim {

namespace {

constexpr double kRowTolerance = 1e-9;

void check_probabilities(std::span<const double> row, const std::string& name) {
    double sum = 0.0;
    for (double p : row) {
        if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
            std::ostringstream msg;
            msg << name << " has entry " << p << " outside [0, 1]";
            throw ValidationError(msg.str());
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > kRowTolerance) {
        std::ostringstream msg;
        msg.precision(17);
        msg << name << " sums to " << sum << ", expected 1";
        throw ValidationError(msg.str());
    }
}

std::string pair_name(const std::string& table, std::size_t s, std::size_t a) {
    return table + " row (state " + std::to_string(s) + ", action " + std::to_string(a) + ")";
}

void check_size(const std::vector<double>& table, std::size_t expected, const char* name) {
    if (table.size() != expected) {
        throw ValidationError(std::string(name) + " has " + std::to_string(table.size()) +
                              " entries, expected " + std::to_string(expected));
    }
}

// Cumulative tables reused by every sampler.
struct Samplers {
    std::vector<double> initial;
    std::vector<double> policy;      // [s][a]
    std::vector<double> transition;  // [s][a][s']

    explicit Samplers(const SyntheticMDP& mdp)
        : initial(mdp.n_states),
          policy(mdp.behavior_policy.size()),
          transition(mdp.transition.size()) {
        build_cdf(mdp.initial_state_dist, initial);
        for (std::size_t s = 0; s < mdp.n_states; ++s) {
            build_cdf(mdp.policy_row(StateId(s)),
                      std::span(policy).subspan(s * mdp.n_actions, mdp.n_actions));
        }
        for (std::size_t p = 0; p < mdp.n_pairs(); ++p) {
            build_cdf(std::span(mdp.transition).subspan(p * mdp.n_states, mdp.n_states),
                      std::span(transition).subspan(p * mdp.n_states, mdp.n_states));
        }
    }

    StateId initial_state(Engine& rng) const { return StateId(sample_cdf(initial, rng)); }

    ActionId action(const SyntheticMDP& mdp, StateId s, Engine& rng) const {
        return ActionId(sample_cdf(
            std::span(policy).subspan(s * mdp.n_actions, mdp.n_actions), rng));
    }

    StateId next_state(const SyntheticMDP& mdp, StateId s, ActionId a, Engine& rng) const {
        return StateId(sample_cdf(
            std::span(transition).subspan(mdp.pair_index(s, a) * mdp.n_states, mdp.n_states),
            rng));
    }
};

void generate_range(const SyntheticMDP& mdp, const Samplers& samplers,
                    const GenerateOptions& options, std::uint64_t seed, std::size_t begin,
                    std::size_t end, std::vector<Transition>& out) {
    std::vector<std::pair<StateId, ActionId>> visited;
    for (std::size_t k = begin; k < end; ++k) {
        Engine rng = stream_engine(seed, k);
        StateId s = samplers.initial_state(rng);
        ActionId a = samplers.action(mdp, s, rng);
        for (std::uint32_t step = 0;; ++step) {
            Transition t;
            t.session_id = k;
            t.step = step;
            t.state = options.featurizer.state_features(s);
            t.action = a;
            t.reward = bernoulli(rng, mdp.click(s, a)) ? 1 : 0;
            const bool ends = bernoulli(rng, mdp.term(s, a)) ||
                              step + 1 >= options.max_session_length;
            t.terminal = ends;
            if (!ends) {
                s = samplers.next_state(mdp, s, a, rng);
                a = samplers.action(mdp, s, rng);
                t.next_state = options.featurizer.state_features(s);
                t.next_action = a;
            }
            out.push_back(std::move(t));
            if (ends) break;
        }
    }
}

}  // namespace

void SyntheticMDP::validate(double term_floor) const {
    if (n_states == 0 || n_actions == 0) {
        throw ValidationError("mdp must have at least one state and one action");
    }
    check_size(transition, n_states * n_actions * n_states, "transition");
    check_size(click_prob, n_pairs(), "click_prob");
    check_size(term_prob, n_pairs(), "term_prob");
    check_size(behavior_policy, n_pairs(), "behavior_policy");
    check_size(initial_state_dist, n_states, "initial_state_dist");

    check_probabilities(initial_state_dist, "initial_state_dist");
    for (std::size_t s = 0; s < n_states; ++s) {
        check_probabilities(policy_row(StateId(s)),
                            "behavior_policy row (state " + std::to_string(s) + ")");
        for (std::size_t a = 0; a < n_actions; ++a) {
            check_probabilities(next_state_row(StateId(s), ActionId(a)),
                                pair_name("transition", s, a));
            const double c = click(StateId(s), ActionId(a));
            if (!std::isfinite(c) || c < 0.0 || c > 1.0) {
                throw ValidationError(pair_name("click_prob", s, a) + " is outside [0, 1]");
            }
            const double l = term(StateId(s), ActionId(a));
            if (!std::isfinite(l) || l < 0.0 || l > 1.0) {
                throw ValidationError(pair_name("term_prob", s, a) + " is outside [0, 1]");
            }
            if (l < term_floor) {
                std::ostringstream msg;
                msg << pair_name("term_prob", s, a) << " = " << l << " is below the floor "
                    << term_floor;
                throw ValidationError(msg.str());
            }
        }
    }
}

FeatureIds Featurizer::state_features(StateId s) const {
    if (mode == Mode::tabular) return {s};
    FeatureIds ids(fields);
    for (std::uint32_t f = 0; f < fields; ++f) {
        ids[f] = std::uint32_t(derive_seed(seed ^ (std::uint64_t(f) << 32), s) % vocab);
    }
    return ids;
}

std::vector<std::uint32_t> Featurizer::vocab_sizes(std::size_t n_states) const {
    if (mode == Mode::tabular) return {std::uint32_t(n_states)};
    return std::vector<std::uint32_t>(fields, vocab);
}

std::vector<Transition> generate_logs(const SyntheticMDP& mdp, std::size_t n_sessions,
                                      std::uint64_t seed, const GenerateOptions& options) {
    if (n_sessions == 0) throw ValidationError("n_sessions must be at least 1");
    if (!(options.term_floor > 0.0)) throw ValidationError("term_floor must be positive");
    mdp.validate(options.term_floor);
    const Samplers samplers(mdp);

    const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, n_sessions);
    std::vector<std::vector<Transition>> parts(threads);
    const std::size_t chunk = (n_sessions + threads - 1) / threads;
    auto work = [&](std::size_t t) {
        const std::size_t begin = std::min(n_sessions, t * chunk);
        const std::size_t end = std::min(n_sessions, begin + chunk);
        generate_range(mdp, samplers, options, seed, begin, end, parts[t]);
    };
    if (threads == 1) {
        work(0);
        return std::move(parts[0]);
    }
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    }
    std::vector<Transition> logs;
    for (auto& part : parts) {
        logs.insert(logs.end(), std::make_move_iterator(part.begin()),
                    std::make_move_iterator(part.end()));
    }
    return logs;
}

std::vector<double> mc_return_samples(const SyntheticMDP& mdp, StateId s, ActionId a,
                                      double eta, std::size_t n_rollouts, std::uint64_t seed,
                                      double truncation) {
    if (!(eta > 0.0 && eta < 1.0)) throw ValidationError("eta must lie in (0, 1)");
    if (n_rollouts == 0) throw ValidationError("n_rollouts must be at least 1");
    mdp.validate();
    if (s >= mdp.n_states || a >= mdp.n_actions) {
        throw ValidationError("rollout start pair is out of range");
    }
    const Samplers samplers(mdp);
    std::vector<double> gamma(mdp.n_pairs());
    for (std::size_t p = 0; p < gamma.size(); ++p) {
        gamma[p] = std::min(1.0 - mdp.term_prob[p], eta);
    }

    constexpr std::size_t kBlock = 1024;
    std::vector<double> samples(n_rollouts);
    Engine rng;
    for (std::size_t i = 0; i < n_rollouts; ++i) {
        if (i % kBlock == 0) rng = stream_engine(seed, i / kBlock);
        StateId st = s;
        ActionId at = a;
        double ret = bernoulli(rng, mdp.click(st, at)) ? 1.0 : 0.0;
        double discount = 1.0;
        while (!bernoulli(rng, mdp.term(st, at))) {
            st = samplers.next_state(mdp, st, at, rng);
            at = samplers.action(mdp, st, rng);
            discount *= gamma[mdp.pair_index(st, at)];
            if (discount < truncation) break;
            if (bernoulli(rng, mdp.click(st, at))) ret += discount;
        }
        samples[i] = ret;
    }
    return samples;
}

std::map<PairKey, PairCounts> pair_counts(std::span<const Transition> logs) {
    std::map<PairKey, PairCounts> counts;
    for (const auto& t : logs) {
        auto& c = counts[PairKey{t.state, t.action}];
        ++c.visits;
        if (t.terminal) ++c.terminals;
    }
    return counts;
}

PairTable empirical_termination_rate(std::span<const Transition> logs) {
    PairTable rates;
    for (const auto& [key, c] : pair_counts(logs)) {
        rates.emplace(key, double(c.terminals) / double(c.visits));
    }
    return rates;
}

PolicyStats simulate_policy(const SyntheticMDP& mdp,
                            const std::function<ActionId(StateId)>& policy,
                            std::size_t n_sessions, std::uint64_t seed,
                            std::size_t max_session_length) {
    mdp.validate();
    const Samplers samplers(mdp);
    PolicyStats stats;
    stats.sessions = n_sessions;
    for (std::size_t k = 0; k < n_sessions; ++k) {
        Engine rng = stream_engine(seed, k);
        StateId s = samplers.initial_state(rng);
        for (std::size_t step = 0; step < max_session_length; ++step) {
            const ActionId a = policy(s);
            if (a >= mdp.n_actions) throw ValidationError("policy chose an unknown action");
            ++stats.impressions;
            if (bernoulli(rng, mdp.click(s, a))) ++stats.clicks;
            if (bernoulli(rng, mdp.term(s, a))) break;
            s = samplers.next_state(mdp, s, a, rng);
        }
    }
    return stats;
}

SyntheticMDP random_mdp(std::size_t n_states, std::size_t n_actions, std::uint64_t seed,
                        const RandomMdpOptions& options) {
    if (n_states == 0 || n_actions == 0) {
        throw ValidationError("random_mdp needs at least one state and one action");
    }
    Engine rng(seed);
    std::exponential_distribution<double> expo(1.0);
    std::uniform_real_distribution<double> click(options.click_min, options.click_max);
    std::uniform_real_distribution<double> term(options.term_min, options.term_max);

    auto normalize = [](std::span<double> row) {
        double sum = 0.0;
        for (double v : row) sum += v;
        for (double& v : row) v /= sum;
    };

    SyntheticMDP mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.transition.resize(n_states * n_actions * n_states);
    mdp.click_prob.resize(n_states * n_actions);
    mdp.term_prob.resize(n_states * n_actions);
    mdp.behavior_policy.resize(n_states * n_actions);
    mdp.initial_state_dist.resize(n_states);

    for (std::size_t p = 0; p < mdp.n_pairs(); ++p) {
        auto row = std::span(mdp.transition).subspan(p * n_states, n_states);
        const std::size_t keep_from = std::size_t(rng() % n_states);
        for (std::size_t j = 0; j < n_states; ++j) {
            const bool keep =
                j == keep_from || uniform01(rng) < options.transition_density;
            row[j] = keep ? expo(rng) + 1e-3 : 0.0;
        }
        normalize(row);
        mdp.click_prob[p] = click(rng);
        mdp.term_prob[p] = term(rng);
    }
    for (std::size_t s = 0; s < n_states; ++s) {
        auto row = std::span(mdp.behavior_policy).subspan(s * n_actions, n_actions);
        for (double& v : row) v = options.uniform_behavior ? 1.0 : expo(rng) + 0.1;
        normalize(row);
        mdp.initial_state_dist[s] = expo(rng) + 0.1;
    }
    normalize(mdp.initial_state_dist);
    return mdp;
}

SyntheticMDP clickbait_mdp() {
    SyntheticMDP mdp;
    mdp.n_states = 2;
    mdp.n_actions = 2;
    // state 0 = engaged, state 1 = bored; action 0 = clickbait, action 1 = quality
    mdp.transition = {
        0.1, 0.9,  // engaged, clickbait
        0.9, 0.1,  // engaged, quality
        0.1, 0.9,  // bored, clickbait
        0.9, 0.1,  // bored, quality
    };
    mdp.click_prob = {0.6, 0.35, 0.5, 0.3};
    mdp.term_prob = {0.05, 0.05, 0.4, 0.4};
    mdp.behavior_policy = {0.5, 0.5, 0.5, 0.5};
    mdp.initial_state_dist = {0.5, 0.5};
    return mdp;
}

}  // namespace engage::sim
