#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "engage/dataset.hpp"
#include "engage/distdp.hpp"
#include "engage/qrlearn.hpp"
#include "engage/ranker.hpp"
#include "engage/simenv.hpp"

namespace engage::io {

using Json = nlohmann::json;

inline constexpr int kModelFormatVersion = 1;

// Transition logs: JSON Lines, keys session_id, step, state, action, reward,
// terminal, next_state, next_action (the last two only when terminal = 0).
// A state is an integer id or an array of feature ids.
void write_transitions(std::ostream& out, std::span<const sim::Transition> logs);
// Fails fast with the offending line number.
std::vector<sim::Transition> read_transitions(std::istream& in);

// Raw session rows: session_id, step, state, action, reward.
std::vector<SessionRecord> read_records(std::istream& in);
void write_records(std::ostream& out, std::span<const SessionRecord> records);

Json mdp_to_json(const sim::SyntheticMDP& mdp);
sim::SyntheticMDP mdp_from_json(const Json& j);

// {M, states, actions, atoms[s][a][i]}
Json value_table_to_json(const dist::ValueTable& table);
dist::ValueTable value_table_from_json(const Json& j);

// Every key is optional; unknown keys are rejected.
Json config_to_json(const learn::TrainingConfig& config);
learn::TrainingConfig config_from_json(const Json& j);

Json featurizer_to_json(const sim::Featurizer& f);
sim::Featurizer featurizer_from_json(const Json& j);

struct ModelFile {
    learn::EngagementModel model;
    learn::TrainingConfig config;
    sim::Featurizer featurizer;
    Json provenance = Json::object();

    bool operator==(const ModelFile&) const = default;
};

// "ENGMODEL", u64 little-endian manifest length, JSON manifest (format
// version, architecture, config echo, featurizer, provenance, tensor names
// and shapes), then each tensor as little-endian float32 in manifest order.
void write_model(std::ostream& out, const ModelFile& file);
ModelFile read_model(std::istream& in);

// CSV: step,quantile_loss,bce_loss,total
void write_trace(std::ostream& out, std::span<const learn::TraceRow> trace);
std::vector<learn::TraceRow> read_trace(std::istream& in);

struct RankRequest {
    FeatureIds state;
    std::vector<ranking::Candidate> candidates;
};

std::vector<RankRequest> read_rank_requests(std::istream& in);
void write_rank_requests(std::ostream& out, std::span<const RankRequest> requests);
// One {"items": [{action, base, engagement, combined}, ...]} line per response.
void write_rank_response(std::ostream& out, std::span<const ranking::ScoredItem> items);
std::vector<std::vector<ranking::ScoredItem>> read_rank_responses(std::istream& in);

// Shortest round-trip decimal.
std::string format_double(double v);

// File helpers; throw DataError when a file cannot be opened.
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);
std::vector<sim::Transition> read_transitions_file(const std::filesystem::path& path);
void write_transitions_file(const std::filesystem::path& path,
                            std::span<const sim::Transition> logs);
ModelFile read_model_file(const std::filesystem::path& path);
void write_model_file(const std::filesystem::path& path, const ModelFile& file);

}  // namespace engage::io
