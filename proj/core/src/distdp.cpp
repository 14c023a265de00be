#include "engage/distdp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "engage/rng.hpp"

namespace engage::dist {

namespace {

constexpr double kFlatTolerance = 1e-12;

void check_order(double p) {
    if (!(p >= 1.0)) throw ValidationError("wasserstein order must be >= 1 or infinity");
}

}  // namespace

std::vector<double> quantile_midpoints(std::size_t m) {
    std::vector<double> taus(m);
    for (std::size_t i = 0; i < m; ++i) taus[i] = double(2 * i + 1) / double(2 * m);
    return taus;
}

double mean_of_atoms(std::span<const double> atoms) {
    std::vector<double> sorted(atoms.begin(), atoms.end());
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    return sum / double(sorted.size());
}

std::vector<double> empirical_quantiles(std::span<const double> samples, std::size_t m) {
    if (samples.empty() || m == 0) throw ValidationError("empirical quantiles need samples and M >= 1");
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double tau = double(2 * i + 1) / double(2 * m);
        const auto k = std::min(sorted.size() - 1, std::size_t(tau * double(sorted.size())));
        out[i] = sorted[k];
    }
    return out;
}

QuantileDistribution::QuantileDistribution(std::vector<double> atoms)
    : atoms_(std::move(atoms)) {
    if (atoms_.empty()) throw ValidationError("a quantile distribution needs M >= 1 atoms");
    for (double v : atoms_) {
        if (!std::isfinite(v)) throw ValidationError("quantile atoms must be finite");
    }
}

double QuantileDistribution::mean() const { return mean_of_atoms(atoms_); }

QuantileDistribution QuantileDistribution::sorted() const {
    std::vector<double> copy = atoms_;
    std::sort(copy.begin(), copy.end());
    return QuantileDistribution(std::move(copy));
}

ValueTable::ValueTable(std::size_t n_states, std::size_t n_actions, std::size_t quantiles,
                       double fill)
    : n_states_(n_states),
      n_actions_(n_actions),
      m_(quantiles),
      atoms_(n_states * n_actions * quantiles, fill) {
    if (quantiles == 0) throw ValidationError("a value table needs M >= 1");
}

QuantileDistribution ValueTable::distribution(StateId s, ActionId a) const {
    auto span = at(s, a);
    return QuantileDistribution(std::vector<double>(span.begin(), span.end()));
}

double DiscountSpec::gamma(std::size_t pair) const {
    if (mode == DiscountMode::constant_gamma) return eta;
    return std::min(1.0 - ell_table[pair], eta);
}

void DiscountSpec::validate(std::size_t n_pairs) const {
    if (!(eta > 0.0 && eta < 1.0)) throw ValidationError("eta must lie in (0, 1)");
    if (mode == DiscountMode::constant_gamma) return;
    if (ell_table.size() != n_pairs) {
        throw ValidationError("ell table has " + std::to_string(ell_table.size()) +
                              " entries, expected " + std::to_string(n_pairs));
    }
    for (double l : ell_table) {
        if (!(l >= 0.0 && l <= 1.0)) throw ValidationError("ell entries must lie in [0, 1]");
    }
}

DiscountSpec DiscountSpec::from_mdp(const sim::SyntheticMDP& mdp, double eta, Backup backup) {
    return DiscountSpec{eta, mdp.term_prob, DiscountMode::termination_aware, backup};
}

DiscountSpec DiscountSpec::constant(double eta, Backup backup) {
    return DiscountSpec{eta, {}, DiscountMode::constant_gamma, backup};
}

double wasserstein(std::span<const double> lhs, std::span<const double> rhs, double p) {
    check_order(p);
    if (lhs.size() != rhs.size()) {
        throw ValidationError("wasserstein needs equal atom counts (" +
                              std::to_string(lhs.size()) + " vs " +
                              std::to_string(rhs.size()) + ")");
    }
    if (lhs.empty()) throw ValidationError("wasserstein needs M >= 1");
    std::vector<double> a(lhs.begin(), lhs.end());
    std::vector<double> b(rhs.begin(), rhs.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());

    if (std::isinf(p)) {
        double worst = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
        return worst;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(a[i] - b[i]);
        acc += p == 1.0 ? d : std::pow(d, p);
    }
    acc /= double(a.size());
    return p == 1.0 ? acc : std::pow(acc, 1.0 / p);
}

double wasserstein(const QuantileDistribution& lhs, const QuantileDistribution& rhs,
                   double p) {
    return wasserstein(lhs.atoms(), rhs.atoms(), p);
}

double sup_wasserstein(const ValueTable& lhs, const ValueTable& rhs, double p) {
    check_order(p);
    if (!lhs.same_shape(rhs)) throw ValidationError("value tables differ in shape");
    double worst = 0.0;
    for (std::size_t s = 0; s < lhs.n_states(); ++s) {
        for (std::size_t a = 0; a < lhs.n_actions(); ++a) {
            worst = std::max(worst, wasserstein(lhs.at(StateId(s), ActionId(a)),
                                                rhs.at(StateId(s), ActionId(a)), p));
        }
    }
    return worst;
}

std::vector<double> project_quantiles(std::vector<WeightedAtom>& mixture, std::size_t m) {
    if (mixture.empty()) throw ValidationError("cannot project an empty mixture");
    std::sort(mixture.begin(), mixture.end(),
              [](const WeightedAtom& x, const WeightedAtom& y) { return x.value < y.value; });
    std::vector<double> atoms(m);
    std::size_t k = 0;
    double cdf = mixture[0].weight;
    for (std::size_t i = 0; i < m; ++i) {
        const double tau = double(2 * i + 1) / double(2 * m);
        while (cdf < tau - kFlatTolerance && k + 1 < mixture.size()) {
            ++k;
            cdf += mixture[k].weight;
        }
        atoms[i] = mixture[k].value;
    }
    return atoms;
}

ValueTable apply_operator(const ValueTable& z, const sim::SyntheticMDP& mdp,
                          const DiscountSpec& disc) {
    if (z.n_states() != mdp.n_states || z.n_actions() != mdp.n_actions) {
        throw ValidationError("value table shape does not match the mdp");
    }
    disc.validate(mdp.n_pairs());

    const std::size_t m = z.quantiles();
    const double inv_m = 1.0 / double(m);
    ValueTable out(mdp.n_states, mdp.n_actions, m);
    std::vector<WeightedAtom> mixture;

    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        for (std::size_t a = 0; a < mdp.n_actions; ++a) {
            const auto pair = mdp.pair_index(StateId(s), ActionId(a));
            const double click = mdp.click_prob[pair];
            const double ends =
                disc.backup == Backup::data_terminal ? mdp.term_prob[pair] : 0.0;
            const double continues = 1.0 - ends;
            const auto successors = mdp.next_state_row(StateId(s), ActionId(a));

            mixture.clear();
            for (int r = 0; r <= 1; ++r) {
                const double pr = r == 1 ? click : 1.0 - click;
                if (pr <= 0.0) continue;
                if (ends > 0.0) mixture.push_back({double(r), pr * ends});
                if (continues <= 0.0) continue;
                for (std::size_t s2 = 0; s2 < mdp.n_states; ++s2) {
                    if (successors[s2] <= 0.0) continue;
                    const auto policy = mdp.policy_row(StateId(s2));
                    for (std::size_t a2 = 0; a2 < mdp.n_actions; ++a2) {
                        if (policy[a2] <= 0.0) continue;
                        const double g = disc.gamma(mdp.pair_index(StateId(s2), ActionId(a2)));
                        const double w = pr * continues * successors[s2] * policy[a2] * inv_m;
                        for (double theta : z.at(StateId(s2), ActionId(a2))) {
                            mixture.push_back({r + g * theta, w});
                        }
                    }
                }
            }
            const auto atoms = project_quantiles(mixture, m);
            std::copy(atoms.begin(), atoms.end(), out.at(StateId(s), ActionId(a)).begin());
        }
    }
    return out;
}

FixedPoint solve_fixed_point(const sim::SyntheticMDP& mdp, const DiscountSpec& disc,
                             std::size_t m, double tol, std::size_t max_iter) {
    if (!(tol > 0.0)) throw ValidationError("tol must be positive");
    mdp.validate();
    disc.validate(mdp.n_pairs());

    FixedPoint result{ValueTable(mdp.n_states, mdp.n_actions, m), {}};
    for (std::size_t k = 0; k < max_iter; ++k) {
        ValueTable next = apply_operator(result.table, mdp, disc);
        const double d = sup_wasserstein(result.table, next, kInfinity);
        result.trace.push_back(d);
        result.table = std::move(next);
        if (d < tol) return result;
    }
    std::ostringstream msg;
    msg << "fixed-point iteration did not reach tol " << tol << " within " << max_iter
        << " iterations (last distance "
        << (result.trace.empty() ? kInfinity : result.trace.back()) << ")";
    throw ConvergenceError(msg.str(), std::move(result.trace));
}

ContractionReport check_contraction(const sim::SyntheticMDP& mdp, const DiscountSpec& disc,
                                    std::size_t trials, std::uint64_t seed,
                                    const ContractionOptions& options) {
    if (trials == 0) throw ValidationError("trials must be at least 1");
    mdp.validate();
    disc.validate(mdp.n_pairs());
    const double high = options.high > 0.0 ? options.high : 1.0 / (1.0 - disc.eta);
    std::uniform_real_distribution<double> atom(options.low, high);
    Engine rng(seed);

    auto random_table = [&] {
        ValueTable table(mdp.n_states, mdp.n_actions, options.quantiles);
        for (std::size_t s = 0; s < mdp.n_states; ++s) {
            for (std::size_t a = 0; a < mdp.n_actions; ++a) {
                auto atoms = table.at(StateId(s), ActionId(a));
                for (double& v : atoms) v = atom(rng);
                std::sort(atoms.begin(), atoms.end());
            }
        }
        return table;
    };

    ContractionReport report;
    for (std::size_t t = 0; t < trials; ++t) {
        const ValueTable z1 = random_table();
        const ValueTable z2 = random_table();
        const double before = sup_wasserstein(z1, z2, options.p);
        const double after = sup_wasserstein(apply_operator(z1, mdp, disc),
                                             apply_operator(z2, mdp, disc), options.p);
        report.distances.emplace_back(before, after);
        if (before > 0.0) report.max_ratio = std::max(report.max_ratio, after / before);
    }
    return report;
}

std::vector<double> expected_returns(const sim::SyntheticMDP& mdp, const DiscountSpec& disc) {
    mdp.validate();
    disc.validate(mdp.n_pairs());
    const auto n = Eigen::Index(mdp.n_pairs());
    Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd rewards(n);

    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        for (std::size_t a = 0; a < mdp.n_actions; ++a) {
            const auto row = mdp.pair_index(StateId(s), ActionId(a));
            rewards(Eigen::Index(row)) = mdp.click_prob[row];
            const double continues =
                disc.backup == Backup::data_terminal ? 1.0 - mdp.term_prob[row] : 1.0;
            const auto successors = mdp.next_state_row(StateId(s), ActionId(a));
            for (std::size_t s2 = 0; s2 < mdp.n_states; ++s2) {
                const auto policy = mdp.policy_row(StateId(s2));
                for (std::size_t a2 = 0; a2 < mdp.n_actions; ++a2) {
                    const auto col = mdp.pair_index(StateId(s2), ActionId(a2));
                    system(Eigen::Index(row), Eigen::Index(col)) -=
                        continues * successors[s2] * policy[a2] * disc.gamma(col);
                }
            }
        }
    }
    const Eigen::VectorXd values = system.partialPivLu().solve(rewards);
    return std::vector<double>(values.data(), values.data() + values.size());
}

}  // namespace engage::dist
