#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "engage/dataio.hpp"
#include "engage/distdp.hpp"
#include "engage/evaluate.hpp"
#include "engage/qrlearn.hpp"

namespace engage::cli {

namespace fs = std::filesystem;

enum class Variant {
    FD,        // scalar head, squared loss, gamma' = eta
    RR,        // quantile head, gamma' = eta, no termination head
    Proposed,  // quantile head, termination head, gamma' = min(1 - ell, eta)
};

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

// Overwrites the knobs that define a variant and leaves the rest alone.
void apply_variant(learn::TrainingConfig& config, Variant v);

dist::DiscountMode parse_mode(const std::string& name);
std::string mode_name(dist::DiscountMode mode);
dist::Backup parse_backup(const std::string& name);
std::string backup_name(dist::Backup backup);

// Sidecar written next to every output file: `<path>.manifest.json`.
fs::path manifest_path(const fs::path& output);

struct SimulateArgs {
    fs::path mdp;
    std::size_t sessions = 1000;
    std::uint64_t seed = 0;
    fs::path out;
    std::optional<fs::path> featurizer;  // JSON; tabular when absent
    unsigned threads = 1;
};

// Returns the number of transitions written.
std::size_t cmd_simulate(const SimulateArgs& args);

struct DpArgs {
    fs::path mdp;
    double eta = 0.95;
    std::size_t quantiles = 200;
    dist::DiscountMode mode = dist::DiscountMode::termination_aware;
    dist::Backup backup = dist::Backup::discounted;
    double tol = 1e-9;
    std::size_t max_iter = 100'000;
    fs::path out;
    std::optional<fs::path> trace;  // CSV iteration,distance
};

dist::FixedPoint cmd_dp(const DpArgs& args);

// Flags that override the config file.
struct TrainOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<double> eta;
    std::optional<std::uint32_t> quantiles;
    std::optional<std::size_t> batch_size;
    std::optional<double> lr;
    std::optional<std::size_t> target_copy;
    std::optional<std::size_t> epochs;
    std::optional<double> kappa;
};

struct TrainArgs {
    fs::path logs;
    std::optional<fs::path> config;
    Variant variant = Variant::Proposed;
    TrainOverrides overrides;
    fs::path out;
    std::optional<fs::path> trace;
};

// Config resolution order: defaults, config file, flag overrides, variant.
// When the logs carry a simulate manifest, the featurizer and vocabulary are
// taken from it so that unvisited ids still get embeddings.
learn::TrainingConfig resolve_config(const TrainArgs& args);

io::ModelFile cmd_train(const TrainArgs& args);

struct EvalArgs {
    fs::path model;
    std::optional<fs::path> mdp;
    std::optional<fs::path> logs;
    fs::path out;
    std::size_t sessions = 10'000;
    std::uint64_t seed = 0;
    double w = 1.0;
    eval::BaseScore base = eval::BaseScore::none;
    std::optional<double> eta;  // oracle eta; the model's training eta by default
    dist::DiscountMode mode = dist::DiscountMode::termination_aware;
    std::size_t mc_rollouts = 10'000;
    std::size_t min_visits = 500;
};

io::Json cmd_eval(const EvalArgs& args);

struct RankArgs {
    fs::path model;
    fs::path requests;
    double w = 1.0;
    fs::path out;
};

std::size_t cmd_rank(const RankArgs& args);

struct MakeMdpArgs {
    std::string kind = "random";  // random | clickbait
    std::size_t states = 5;
    std::size_t actions = 3;
    std::uint64_t seed = 0;
    sim::RandomMdpOptions options;
    fs::path out;
};

sim::SyntheticMDP cmd_make_mdp(const MakeMdpArgs& args);

struct BuildTransitionsArgs {
    fs::path records;
    fs::path out;
};

std::size_t cmd_build_transitions(const BuildTransitionsArgs& args);

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitConvergence = 4;

// Parses argv, dispatches, and maps exceptions to exit codes with a message
// on `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace engage::cli
