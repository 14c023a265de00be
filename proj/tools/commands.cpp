#include "commands.hpp"

#include <fstream>
#include <ostream>

#include "CLI11.hpp"

#include "engage/dataset.hpp"
#include "engage/ranker.hpp"
#include "engage/simenv.hpp"

namespace engage::cli {

namespace {

using io::Json;

std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

sim::SyntheticMDP load_mdp(const fs::path& path) {
    sim::SyntheticMDP mdp;
    try {
        mdp = io::mdp_from_json(io::read_json_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    try {
        mdp.validate();
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return mdp;
}

Json stats_json(const sim::PolicyStats& stats) {
    return Json{{"sessions", stats.sessions},
                {"impressions", stats.impressions},
                {"clicks", stats.clicks},
                {"vv", stats.vv()},
                {"imp", stats.imp()},
                {"ctr", stats.ctr()}};
}

std::string base_name(eval::BaseScore base) {
    return base == eval::BaseScore::none ? "none" : "click-prob";
}

eval::BaseScore parse_base(const std::string& name) {
    if (name == "none") return eval::BaseScore::none;
    if (name == "click-prob") return eval::BaseScore::click_prob;
    throw ValidationError("unknown base score '" + name + "' (none, click-prob)");
}

}  // namespace

Variant parse_variant(const std::string& name) {
    if (name == "FD") return Variant::FD;
    if (name == "RR") return Variant::RR;
    if (name == "Proposed") return Variant::Proposed;
    throw ValidationError("unknown variant '" + name + "' (FD, RR, Proposed)");
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::FD: return "FD";
        case Variant::RR: return "RR";
        case Variant::Proposed: return "Proposed";
    }
    return "?";
}

void apply_variant(learn::TrainingConfig& config, Variant v) {
    switch (v) {
        case Variant::FD:
            config.quantiles = 1;
            config.value_loss = learn::ValueLoss::squared;
            config.discount = learn::TargetDiscount::constant;
            config.termination_head = false;
            break;
        case Variant::RR:
            config.value_loss = learn::ValueLoss::quantile_huber;
            config.discount = learn::TargetDiscount::constant;
            config.termination_head = false;
            break;
        case Variant::Proposed:
            config.value_loss = learn::ValueLoss::quantile_huber;
            config.discount = learn::TargetDiscount::termination_aware;
            config.termination_head = true;
            break;
    }
}

dist::DiscountMode parse_mode(const std::string& name) {
    if (name == "termination-aware") return dist::DiscountMode::termination_aware;
    if (name == "constant-gamma") return dist::DiscountMode::constant_gamma;
    throw ValidationError("unknown mode '" + name + "' (termination-aware, constant-gamma)");
}

std::string mode_name(dist::DiscountMode mode) {
    return mode == dist::DiscountMode::termination_aware ? "termination-aware" : "constant-gamma";
}

dist::Backup parse_backup(const std::string& name) {
    if (name == "discounted") return dist::Backup::discounted;
    if (name == "data-terminal") return dist::Backup::data_terminal;
    throw ValidationError("unknown backup '" + name + "' (discounted, data-terminal)");
}

std::string backup_name(dist::Backup backup) {
    return backup == dist::Backup::discounted ? "discounted" : "data-terminal";
}

fs::path manifest_path(const fs::path& output) {
    fs::path p = output;
    p += ".manifest.json";
    return p;
}

std::size_t cmd_simulate(const SimulateArgs& args) {
    const auto mdp = load_mdp(args.mdp);
    sim::GenerateOptions options;
    options.threads = args.threads;
    if (args.featurizer) options.featurizer = io::featurizer_from_json(io::read_json_file(*args.featurizer));
    try {
        mdp.validate(options.term_floor);
    } catch (const ValidationError& e) {
        throw ValidationError(args.mdp.string() + ": " + e.what());
    }

    const auto logs = sim::generate_logs(mdp, args.sessions, args.seed, options);
    io::write_transitions_file(args.out, logs);
    io::write_json_file(manifest_path(args.out),
                        Json{{"command", "simulate"},
                             {"mdp", args.mdp.string()},
                             {"n_states", mdp.n_states},
                             {"n_actions", mdp.n_actions},
                             {"featurizer", io::featurizer_to_json(options.featurizer)},
                             {"flags", {{"seed", args.seed}, {"sessions", args.sessions}}},
                             {"transitions", logs.size()}});
    return logs.size();
}

dist::FixedPoint cmd_dp(const DpArgs& args) {
    const auto mdp = load_mdp(args.mdp);
    dist::DiscountSpec disc = args.mode == dist::DiscountMode::termination_aware
                                  ? dist::DiscountSpec::from_mdp(mdp, args.eta, args.backup)
                                  : dist::DiscountSpec::constant(args.eta, args.backup);
    auto fp = dist::solve_fixed_point(mdp, disc, args.quantiles, args.tol, args.max_iter);

    Json doc = io::value_table_to_json(fp.table);
    doc["manifest"] = Json{{"command", "dp"},
                           {"mdp", args.mdp.string()},
                           {"flags",
                            {{"eta", args.eta},
                             {"quantiles", args.quantiles},
                             {"mode", mode_name(args.mode)},
                             {"backup", backup_name(args.backup)},
                             {"tol", args.tol}}},
                           {"iterations", fp.trace.size()}};
    io::write_json_file(args.out, doc);
    if (args.trace) {
        auto out = open_out(*args.trace);
        out << "iteration,distance\n";
        for (std::size_t k = 0; k < fp.trace.size(); ++k) {
            out << k << ',' << io::format_double(fp.trace[k]) << '\n';
        }
    }
    return fp;
}

learn::TrainingConfig resolve_config(const TrainArgs& args) {
    learn::TrainingConfig config;
    if (args.config) {
        try {
            config = io::config_from_json(io::read_json_file(*args.config));
        } catch (const ValidationError& e) {
            throw ValidationError(args.config->string() + ": " + e.what());
        }
    }
    const auto& o = args.overrides;
    if (o.seed) config.seed = *o.seed;
    if (o.eta) config.eta = *o.eta;
    if (o.quantiles) config.quantiles = *o.quantiles;
    if (o.batch_size) config.batch_size = *o.batch_size;
    if (o.lr) config.learning_rate = *o.lr;
    if (o.target_copy) config.target_copy = *o.target_copy;
    if (o.epochs) config.epochs = *o.epochs;
    if (o.kappa) config.kappa = *o.kappa;
    apply_variant(config, args.variant);

    const auto sidecar = manifest_path(args.logs);
    if (config.vocab.empty() && fs::exists(sidecar)) {
        const auto manifest = io::read_json_file(sidecar);
        const auto featurizer = io::featurizer_from_json(manifest.at("featurizer"));
        config.vocab = featurizer.vocab_sizes(manifest.at("n_states").get<std::size_t>());
        config.vocab.push_back(manifest.at("n_actions").get<std::uint32_t>());
    }
    config.validate();
    return config;
}

io::ModelFile cmd_train(const TrainArgs& args) {
    const auto config = resolve_config(args);
    const auto logs = io::read_transitions_file(args.logs);

    io::ModelFile file;
    const auto sidecar = manifest_path(args.logs);
    if (fs::exists(sidecar)) {
        file.featurizer = io::featurizer_from_json(io::read_json_file(sidecar).at("featurizer"));
    }
    auto result = learn::train(logs, config);
    file.model = std::move(result.model);
    file.config = config;
    const auto& o = args.overrides;
    file.provenance = Json{{"command", "train"},
                           {"logs", args.logs.string()},
                           {"variant", variant_name(args.variant)},
                           {"flags",
                            {{"seed", config.seed},
                             {"eta", config.eta},
                             {"quantiles", config.quantiles},
                             {"batch-size", config.batch_size},
                             {"lr", config.learning_rate},
                             {"target-copy", config.target_copy},
                             {"epochs", config.epochs},
                             {"kappa", config.kappa}}},
                           {"overridden",
                            {{"seed", o.seed.has_value()},
                             {"eta", o.eta.has_value()},
                             {"quantiles", o.quantiles.has_value()},
                             {"batch-size", o.batch_size.has_value()},
                             {"lr", o.lr.has_value()},
                             {"target-copy", o.target_copy.has_value()},
                             {"epochs", o.epochs.has_value()},
                             {"kappa", o.kappa.has_value()}}},
                           {"transitions", logs.size()},
                           {"steps", result.trace.size()}};
    io::write_model_file(args.out, file);
    if (args.trace) {
        auto out = open_out(*args.trace);
        io::write_trace(out, result.trace);
    }
    return file;
}

io::Json cmd_eval(const EvalArgs& args) {
    if (!args.mdp && !args.logs) throw ValidationError("eval needs --mdp, --logs, or both");
    const auto file = io::read_model_file(args.model);
    const auto& model = file.model;
    const double eta = args.eta.value_or(file.config.eta);

    Json report{{"command", "eval"},
                {"model", args.model.string()},
                {"flags",
                 {{"seed", args.seed},
                  {"eta", eta},
                  {"w", args.w},
                  {"base", base_name(args.base)},
                  {"mode", mode_name(args.mode)},
                  {"sessions", args.sessions}}}};

    if (args.mdp) {
        const auto mdp = load_mdp(*args.mdp);
        const auto view = eval::view_model(model, file.featurizer);
        auto engagement = [&view](StateId s, ActionId a) {
            return dist::mean_of_atoms(view.quantiles(s, a));
        };
        const auto ranked = eval::evaluate_ranking(
            mdp, engagement, eval::RankingPolicy{args.base, args.w}, args.sessions, args.seed);
        const auto greedy = eval::evaluate_ranking(
            mdp, {}, eval::RankingPolicy{eval::BaseScore::click_prob, 0.0}, args.sessions, args.seed);
        report["ranking"] = stats_json(ranked);
        report["baselines"] = Json{{"click_greedy", stats_json(greedy)}};

        eval::OracleOptions options;
        options.eta = eta;
        options.mode = args.mode;
        options.mc_rollouts = args.mc_rollouts;
        options.seed = args.seed;
        const auto oracle =
            eval::compare_to_oracle(mdp, view, model.architecture().quantiles, options);
        report["oracle"] = Json{{"mean_value_error", oracle.mean_value_error},
                                {"max_value_error", oracle.max_value_error},
                                {"mean_w1_to_mc", oracle.mean_w1_to_mc},
                                {"max_w1_to_mc", oracle.max_w1_to_mc},
                                {"kendall_tau", oracle.kendall_tau}};
        report["oracle"]["ell_calibration_error"] =
            oracle.ell_calibration_error ? Json(*oracle.ell_calibration_error) : Json(nullptr);
    }
    if (args.logs) {
        const auto logs = io::read_transitions_file(*args.logs);
        if (model.architecture().termination_head) {
            const auto cal = eval::termination_calibration(model, logs, args.min_visits);
            report["termination_calibration"] = Json{{"pairs", cal.pairs},
                                                     {"min_visits", args.min_visits},
                                                     {"max_error", cal.max_error},
                                                     {"mean_error", cal.mean_error}};
        } else {
            report["termination_calibration"] = nullptr;
        }
    }
    io::write_json_file(args.out, report);
    return report;
}

std::size_t cmd_rank(const RankArgs& args) {
    const auto file = io::read_model_file(args.model);
    auto in = open_in(args.requests);
    const auto requests = io::read_rank_requests(in);
    auto out = open_out(args.out);
    for (const auto& request : requests) {
        io::write_rank_response(out, ranking::rank(request.state, request.candidates, file.model,
                                                   args.w));
    }
    return requests.size();
}

sim::SyntheticMDP cmd_make_mdp(const MakeMdpArgs& args) {
    sim::SyntheticMDP mdp;
    if (args.kind == "random") {
        mdp = sim::random_mdp(args.states, args.actions, args.seed, args.options);
    } else if (args.kind == "clickbait") {
        mdp = sim::clickbait_mdp();
    } else {
        throw ValidationError("unknown mdp kind '" + args.kind + "' (random, clickbait)");
    }
    io::write_json_file(args.out, io::mdp_to_json(mdp));
    return mdp;
}

std::size_t cmd_build_transitions(const BuildTransitionsArgs& args) {
    auto in = open_in(args.records);
    const auto records = io::read_records(in);
    const auto logs = io::build_transitions(records);
    io::write_transitions_file(args.out, logs);
    return logs.size();
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Engagement value learning toolkit"};
    app.require_subcommand(1);

    SimulateArgs sim_args;
    std::string sim_mdp, sim_out, sim_feat;
    auto* simulate = app.add_subcommand("simulate", "Generate session logs from an MDP");
    simulate->add_option("--mdp", sim_mdp, "MDP JSON")->required();
    simulate->add_option("--sessions", sim_args.sessions, "Number of sessions");
    simulate->add_option("--seed", sim_args.seed, "Master seed");
    simulate->add_option("--featurizer", sim_feat, "Featurizer JSON (tabular by default)");
    simulate->add_option("--threads", sim_args.threads, "Worker threads");
    simulate->add_option("--out", sim_out, "Output JSONL")->required();

    DpArgs dp_args;
    std::string dp_mdp, dp_out, dp_trace, dp_mode = "termination-aware", dp_backup = "discounted";
    auto* dp = app.add_subcommand("dp", "Solve the distributional fixed point");
    dp->add_option("--mdp", dp_mdp, "MDP JSON")->required();
    dp->add_option("--eta", dp_args.eta, "Discount cap");
    dp->add_option("--quantiles", dp_args.quantiles, "Atoms per distribution");
    dp->add_option("--mode", dp_mode, "termination-aware | constant-gamma");
    dp->add_option("--backup", dp_backup, "discounted | data-terminal");
    dp->add_option("--tol", dp_args.tol, "Stop when sup d_inf between iterates falls below");
    dp->add_option("--max-iter", dp_args.max_iter, "Iteration limit");
    dp->add_option("--out", dp_out, "Value table JSON")->required();
    dp->add_option("--trace", dp_trace, "Convergence trace CSV");

    TrainArgs train_args;
    std::string tr_logs, tr_config, tr_out, tr_trace, tr_variant = "Proposed";
    auto* train = app.add_subcommand("train", "Fit an engagement model to logged transitions");
    train->add_option("--logs", tr_logs, "Transitions JSONL")->required();
    train->add_option("--config", tr_config, "TrainingConfig JSON");
    train->add_option("--variant", tr_variant, "FD | RR | Proposed");
    train->add_option("--seed", train_args.overrides.seed, "Training seed");
    train->add_option("--eta", train_args.overrides.eta, "Discount cap");
    train->add_option("--quantiles", train_args.overrides.quantiles, "Quantile atoms");
    train->add_option("--batch-size", train_args.overrides.batch_size, "Minibatch size");
    train->add_option("--lr", train_args.overrides.lr, "Learning rate");
    train->add_option("--target-copy", train_args.overrides.target_copy, "Target refresh period");
    train->add_option("--epochs", train_args.overrides.epochs, "Passes over the logs");
    train->add_option("--kappa", train_args.overrides.kappa, "Huber threshold");
    train->add_option("--out", tr_out, "Model file")->required();
    train->add_option("--trace", tr_trace, "Loss trace CSV");

    EvalArgs eval_args;
    std::string ev_model, ev_mdp, ev_logs, ev_out, ev_base = "none", ev_mode = "termination-aware";
    std::optional<double> ev_eta;
    auto* evaluate = app.add_subcommand("eval", "Score a model against an MDP and/or logs");
    evaluate->add_option("--model", ev_model, "Model file")->required();
    evaluate->add_option("--mdp", ev_mdp, "MDP JSON for simulation and oracle metrics");
    evaluate->add_option("--logs", ev_logs, "Transitions JSONL for termination calibration");
    evaluate->add_option("--sessions", eval_args.sessions, "Simulated sessions");
    evaluate->add_option("--seed", eval_args.seed, "Simulation and rollout seed");
    evaluate->add_option("--w", eval_args.w, "Engagement blend weight");
    evaluate->add_option("--base", ev_base, "none | click-prob");
    evaluate->add_option("--eta", ev_eta, "Oracle discount cap (model's by default)");
    evaluate->add_option("--mode", ev_mode, "termination-aware | constant-gamma");
    evaluate->add_option("--rollouts", eval_args.mc_rollouts, "Monte Carlo rollouts per pair");
    evaluate->add_option("--min-visits", eval_args.min_visits, "Calibration visit threshold");
    evaluate->add_option("--out", ev_out, "Report JSON")->required();

    RankArgs rank_args;
    std::string rk_model, rk_requests, rk_out;
    auto* rank = app.add_subcommand("rank", "Re-rank candidate lists");
    rank->add_option("--model", rk_model, "Model file")->required();
    rank->add_option("--requests", rk_requests, "Rank requests JSONL")->required();
    rank->add_option("--w", rank_args.w, "Engagement blend weight");
    rank->add_option("--out", rk_out, "Rank responses JSONL")->required();

    MakeMdpArgs mk_args;
    std::string mk_out;
    auto* make_mdp = app.add_subcommand("make-mdp", "Write a random or crafted MDP");
    make_mdp->add_option("--kind", mk_args.kind, "random | clickbait");
    make_mdp->add_option("--states", mk_args.states, "State count");
    make_mdp->add_option("--actions", mk_args.actions, "Action count");
    make_mdp->add_option("--seed", mk_args.seed, "Seed");
    make_mdp->add_option("--click-min", mk_args.options.click_min);
    make_mdp->add_option("--click-max", mk_args.options.click_max);
    make_mdp->add_option("--term-min", mk_args.options.term_min);
    make_mdp->add_option("--term-max", mk_args.options.term_max);
    make_mdp->add_option("--density", mk_args.options.transition_density, "Successor density");
    make_mdp->add_flag("--uniform-behavior", mk_args.options.uniform_behavior);
    make_mdp->add_option("--out", mk_out, "MDP JSON")->required();

    BuildTransitionsArgs bt_args;
    std::string bt_records, bt_out;
    auto* build = app.add_subcommand("build-transitions", "Pair session records into transitions");
    build->add_option("--records", bt_records, "Session records JSONL")->required();
    build->add_option("--out", bt_out, "Transitions JSONL")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*simulate) {
            sim_args.mdp = sim_mdp;
            sim_args.out = sim_out;
            if (!sim_feat.empty()) sim_args.featurizer = sim_feat;
            out << cmd_simulate(sim_args) << " transitions -> " << sim_out << '\n';
        } else if (*dp) {
            dp_args.mdp = dp_mdp;
            dp_args.out = dp_out;
            dp_args.mode = parse_mode(dp_mode);
            dp_args.backup = parse_backup(dp_backup);
            if (!dp_trace.empty()) dp_args.trace = dp_trace;
            const auto fp = cmd_dp(dp_args);
            out << "converged in " << fp.trace.size() << " iterations -> " << dp_out << '\n';
        } else if (*train) {
            train_args.logs = tr_logs;
            train_args.out = tr_out;
            train_args.variant = parse_variant(tr_variant);
            if (!tr_config.empty()) train_args.config = tr_config;
            if (!tr_trace.empty()) train_args.trace = tr_trace;
            cmd_train(train_args);
            out << "model -> " << tr_out << '\n';
        } else if (*evaluate) {
            eval_args.model = ev_model;
            eval_args.out = ev_out;
            eval_args.base = parse_base(ev_base);
            eval_args.mode = parse_mode(ev_mode);
            eval_args.eta = ev_eta;
            if (!ev_mdp.empty()) eval_args.mdp = ev_mdp;
            if (!ev_logs.empty()) eval_args.logs = ev_logs;
            out << cmd_eval(eval_args).dump(2) << '\n';
        } else if (*rank) {
            rank_args.model = rk_model;
            rank_args.requests = rk_requests;
            rank_args.out = rk_out;
            out << cmd_rank(rank_args) << " responses -> " << rk_out << '\n';
        } else if (*make_mdp) {
            mk_args.out = mk_out;
            cmd_make_mdp(mk_args);
            out << "mdp -> " << mk_out << '\n';
        } else if (*build) {
            bt_args.records = bt_records;
            bt_args.out = bt_out;
            out << cmd_build_transitions(bt_args) << " transitions -> " << bt_out << '\n';
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const ConvergenceError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConvergence;
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConvergence;
    } catch (const io::Json::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitOk;
}

}  // namespace engage::cli
