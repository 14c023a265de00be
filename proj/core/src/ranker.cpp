#include "engage/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "engage/distdp.hpp"

namespace engage::ranking {

double engagement_score(std::span<const float> quantiles) {
    std::vector<double> atoms(quantiles.begin(), quantiles.end());
    return dist::mean_of_atoms(atoms);
}

double engagement_score(const learn::EngagementModel& model, const FeatureIds& state,
                        ActionId action) {
    FeatureIds input = state;
    input.push_back(action);
    return engagement_score(model.forward(input).quantiles);
}

std::vector<ScoredItem> rank_scored(std::span<const Candidate> candidates,
                                    std::span<const double> engagement, double w) {
    if (candidates.empty()) throw ValidationError("rank needs at least one candidate");
    if (!std::isfinite(w)) throw ValidationError("blend weight w must be finite");
    if (engagement.size() != candidates.size()) {
        throw ValidationError("one engagement score per candidate");
    }
    std::set<ActionId> seen;
    std::vector<ScoredItem> items;
    items.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& c = candidates[i];
        if (!seen.insert(c.action).second) {
            throw ValidationError("duplicate candidate action " + std::to_string(c.action));
        }
        items.push_back({c.action, engagement[i], c.base, c.base + w * engagement[i]});
    }
    std::sort(items.begin(), items.end(), [](const ScoredItem& x, const ScoredItem& y) {
        if (x.combined != y.combined) return x.combined > y.combined;
        return x.action < y.action;
    });
    return items;
}

std::vector<ScoredItem> rank(const FeatureIds& state, std::span<const Candidate> candidates,
                             const learn::EngagementModel& model, double w) {
    std::vector<double> engagement;
    engagement.reserve(candidates.size());
    for (const auto& c : candidates) engagement.push_back(engagement_score(model, state, c.action));
    return rank_scored(candidates, engagement, w);
}

}  // namespace engage::ranking
