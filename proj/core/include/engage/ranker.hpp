#pragma once

#include <span>
#include <vector>

#include "engage/common.hpp"
#include "engage/network.hpp"

namespace engage::ranking {

struct ScoredItem {
    ActionId action = 0;
    double engagement = 0.0;  // g(s, a)
    double base = 0.0;        // existing ranker score g_b(s, a)
    double combined = 0.0;    // base + w * engagement

    bool operator==(const ScoredItem&) const = default;
};

struct Candidate {
    ActionId action = 0;
    double base = 0.0;
};

// Mean of the quantile outputs, summed in ascending order.
double engagement_score(std::span<const float> quantiles);
double engagement_score(const learn::EngagementModel& model, const FeatureIds& state,
                        ActionId action);

// Candidates ordered by combined score, highest first; ties go to the lower
// action id. Throws ValidationError on duplicate actions, an empty list, or a
// non-finite w.
std::vector<ScoredItem> rank(const FeatureIds& state, std::span<const Candidate> candidates,
                             const learn::EngagementModel& model, double w);

// Same ordering over precomputed engagement scores (one per candidate).
std::vector<ScoredItem> rank_scored(std::span<const Candidate> candidates,
                                    std::span<const double> engagement, double w);

}  // namespace engage::ranking
