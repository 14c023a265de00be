#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "engage/ranker.hpp"

using namespace engage;
using namespace engage::ranking;

namespace {

std::vector<ActionId> order_of(const std::vector<ScoredItem>& items) {
    std::vector<ActionId> out;
    for (const auto& i : items) out.push_back(i.action);
    return out;
}

learn::EngagementModel random_model(std::uint64_t seed) {
    learn::Architecture arch;
    arch.vocab = {4, 6};
    arch.embedding_dim = 4;
    arch.hidden = {8};
    arch.quantiles = 5;
    learn::EngagementModel model(arch);
    model.initialize(seed, false);
    return model;
}

}  // namespace

TEST_SUITE("ranker") {

TEST_CASE("engagement score is the mean of the quantiles") {
    CHECK(engagement_score(std::vector<float>{0.2f, 0.4f, 0.6f}) == doctest::Approx(0.4).epsilon(1e-7));
    CHECK(engagement_score(std::vector<float>{0, 0, 0, 0}) == 0.0);

    std::mt19937_64 rng(4);
    std::normal_distribution<float> n(0.0f, 3.0f);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<float> q(17);
        for (auto& v : q) v = n(rng);
        const double score = engagement_score(q);
        std::shuffle(q.begin(), q.end(), rng);
        CHECK(engagement_score(q) == score);
    }
}

TEST_CASE("engagement score from a model") {
    const auto model = random_model(3);
    const auto out = model.forward(std::vector<std::uint32_t>{2, 5});
    CHECK(engagement_score(model, {2}, 5) == engagement_score(out.quantiles));
}

TEST_CASE("rank: hand arithmetic") {
    const std::vector<Candidate> candidates{{0, 1.0}, {1, 1.0}};
    const auto items = rank_scored(candidates, std::vector<double>{0.4, 0.8}, 0.5);
    REQUIRE(items.size() == 2);
    CHECK(items[0].action == 1);
    CHECK(items[0].combined == doctest::Approx(1.4).epsilon(1e-15));
    CHECK(items[1].combined == doctest::Approx(1.2).epsilon(1e-15));
    for (const auto& i : items) CHECK(i.combined == i.base + 0.5 * i.engagement);
}

TEST_CASE("rank: w = 0 follows the base order") {
    const std::vector<Candidate> candidates{{3, 0.2}, {1, 0.9}, {4, 0.5}, {0, 0.1}};
    const auto items = rank_scored(candidates, std::vector<double>{9, -3, 7, 100}, 0.0);
    CHECK(order_of(items) == std::vector<ActionId>{1, 4, 3, 0});
}

TEST_CASE("rank: single candidate") {
    const auto model = random_model(5);
    const std::vector<Candidate> one{{2, 0.25}};
    const auto items = rank({1}, one, model, 2.0);
    REQUIRE(items.size() == 1);
    CHECK(items[0].action == 2);
    CHECK(items[0].base == 0.25);
    CHECK(items[0].combined == 0.25 + 2.0 * items[0].engagement);
}

TEST_CASE("rank: ties go to the lower action id") {
    const std::vector<Candidate> candidates{{5, 1.0}, {2, 1.0}, {9, 1.0}};
    const auto items = rank_scored(candidates, std::vector<double>{0.5, 0.5, 0.5}, 1.0);
    CHECK(order_of(items) == std::vector<ActionId>{2, 5, 9});
}

TEST_CASE("rank: validation") {
    const auto model = random_model(1);
    CHECK_THROWS_AS(rank({0}, std::vector<Candidate>{}, model, 1.0), ValidationError);
    CHECK_THROWS_AS(rank({0}, std::vector<Candidate>{{1, 0}, {1, 2}}, model, 1.0), ValidationError);
    CHECK_THROWS_AS(rank({0}, std::vector<Candidate>{{1, 0}}, model, NAN), ValidationError);
    CHECK_THROWS_AS(rank({0}, std::vector<Candidate>{{1, 0}}, model, INFINITY), ValidationError);
    CHECK_THROWS_AS(rank_scored(std::vector<Candidate>{{1, 0}}, std::vector<double>{1, 2}, 1.0), ValidationError);
}

TEST_CASE("rank: properties on random inputs") {
    const auto model = random_model(7);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<Candidate> candidates;
        for (ActionId a = 0; a < 6; ++a) candidates.push_back({a, n(rng)});
        std::shuffle(candidates.begin(), candidates.end(), rng);
        const FeatureIds state{StateId(trial % 4)};
        const double w = std::abs(n(rng)) + 0.1;

        const auto items = rank(state, candidates, model, w);
        CHECK(rank(state, candidates, model, w) == items);
        for (std::size_t i = 1; i < items.size(); ++i) CHECK(items[i - 1].combined >= items[i].combined);

        // A common shift of the base scores leaves the order alone.
        auto shifted = candidates;
        for (auto& c : shifted) c.base += 4.0;
        CHECK(order_of(rank(state, shifted, model, w)) == order_of(items));

        auto flat = candidates;
        for (auto& c : flat) c.base = 0.5;
        const auto by_engagement = rank(state, flat, model, w);
        for (std::size_t i = 1; i < by_engagement.size(); ++i) {
            CHECK(by_engagement[i - 1].engagement >= by_engagement[i].engagement);
        }
    }
}

}  // TEST_SUITE
