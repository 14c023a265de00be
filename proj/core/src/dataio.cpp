#include "engage/dataio.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace engage::io {

namespace {

constexpr std::array<char, 8> kModelMagic{'E', 'N', 'G', 'M', 'O', 'D', 'E', 'L'};

[[noreturn]] void fail(std::size_t line, const std::string& what) {
    throw DataError("line " + std::to_string(line) + ": " + what);
}

const Json& require(const Json& j, const char* key) {
    if (!j.is_object()) throw DataError("expected a JSON object");
    auto it = j.find(key);
    if (it == j.end()) throw DataError(std::string("missing key '") + key + "'");
    return *it;
}

std::uint64_t as_uint(const Json& v, const char* what) {
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw DataError(std::string(what) + " must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

std::uint32_t as_u32(const Json& v, const char* what) {
    const auto x = as_uint(v, what);
    if (x > 0xFFFFFFFFULL) throw DataError(std::string(what) + " exceeds 32 bits");
    return std::uint32_t(x);
}

double as_double(const Json& v, const char* what) {
    if (!v.is_number()) throw DataError(std::string(what) + " must be a number");
    return v.get<double>();
}

bool as_flag(const Json& v, const char* what) {
    if (v.is_boolean()) return v.get<bool>();
    const auto x = as_uint(v, what);
    if (x > 1) throw DataError(std::string(what) + " must be 0 or 1");
    return x == 1;
}

Json state_to_json(const FeatureIds& s) {
    if (s.size() == 1) return s.front();
    return Json(s);
}

FeatureIds state_from_json(const Json& v, const char* what) {
    if (v.is_array()) {
        if (v.empty()) throw DataError(std::string(what) + " must not be empty");
        FeatureIds ids;
        for (const auto& x : v) ids.push_back(as_u32(x, what));
        return ids;
    }
    return {as_u32(v, what)};
}

template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        Json j;
        try {
            j = Json::parse(text);
        } catch (const Json::parse_error& e) {
            fail(line, std::string("malformed JSON: ") + e.what());
        }
        try {
            fn(j);
        } catch (const DataError& e) {
            fail(line, e.what());
        } catch (const Json::exception& e) {
            fail(line, e.what());
        }
    }
}

Json table2(std::span<const double> flat, std::size_t rows, std::size_t cols) {
    Json out = Json::array();
    for (std::size_t r = 0; r < rows; ++r) {
        out.push_back(std::vector<double>(flat.begin() + std::ptrdiff_t(r * cols),
                                          flat.begin() + std::ptrdiff_t((r + 1) * cols)));
    }
    return out;
}

std::vector<double> flatten(const Json& v, std::vector<std::size_t> shape, const char* what) {
    std::vector<double> out;
    auto rec = [&](auto&& self, const Json& node, std::size_t depth) -> void {
        if (depth == shape.size()) {
            out.push_back(as_double(node, what));
            return;
        }
        if (!node.is_array() || node.size() != shape[depth]) {
            throw DataError(std::string(what) + " has the wrong shape");
        }
        for (const auto& child : node) self(self, child, depth + 1);
    };
    rec(rec, v, 0);
    return out;
}

const char* to_string(learn::ValueLoss v) {
    return v == learn::ValueLoss::quantile_huber ? "quantile_huber" : "squared";
}

const char* to_string(learn::TargetDiscount d) {
    return d == learn::TargetDiscount::constant ? "constant" : "termination_aware";
}

void put_u64(std::ostream& out, std::uint64_t v) {
    std::array<char, 8> bytes{};
    for (std::size_t i = 0; i < 8; ++i) bytes[i] = char((v >> (8 * i)) & 0xFF);
    out.write(bytes.data(), bytes.size());
}

std::uint64_t get_u64(std::istream& in) {
    std::array<unsigned char, 8> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
        throw DataError("model file is truncated");
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < 8; ++i) v |= std::uint64_t(bytes[i]) << (8 * i);
    return v;
}

Json architecture_to_json(const learn::Architecture& a) {
    return Json{{"vocab", a.vocab},
                {"embedding_dim", a.embedding_dim},
                {"hidden", a.hidden},
                {"quantiles", a.quantiles},
                {"termination_head", a.termination_head}};
}

learn::Architecture architecture_from_json(const Json& j) {
    learn::Architecture a;
    a.vocab.clear();
    for (const auto& v : require(j, "vocab")) a.vocab.push_back(as_u32(v, "vocab"));
    a.embedding_dim = as_u32(require(j, "embedding_dim"), "embedding_dim");
    a.hidden.clear();
    for (const auto& v : require(j, "hidden")) a.hidden.push_back(as_u32(v, "hidden"));
    a.quantiles = as_u32(require(j, "quantiles"), "quantiles");
    a.termination_head = as_flag(require(j, "termination_head"), "termination_head");
    return a;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) throw DataError("cannot open " + path.string() + " for reading");
    return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    return out;
}

}  // namespace

std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), end);
}

void write_transitions(std::ostream& out, std::span<const sim::Transition> logs) {
    for (const auto& t : logs) {
        Json j{{"session_id", t.session_id},
               {"step", t.step},
               {"state", state_to_json(t.state)},
               {"action", t.action},
               {"reward", int(t.reward)},
               {"terminal", t.terminal ? 1 : 0}};
        if (!t.terminal) {
            j["next_state"] = state_to_json(*t.next_state);
            j["next_action"] = *t.next_action;
        }
        out << j.dump() << '\n';
    }
}

std::vector<sim::Transition> read_transitions(std::istream& in) {
    std::vector<sim::Transition> logs;
    for_each_line(in, [&](const Json& j) {
        sim::Transition t;
        t.session_id = as_uint(require(j, "session_id"), "session_id");
        t.step = as_u32(require(j, "step"), "step");
        t.state = state_from_json(require(j, "state"), "state");
        t.action = as_u32(require(j, "action"), "action");
        t.reward = as_flag(require(j, "reward"), "reward") ? 1 : 0;
        t.terminal = as_flag(require(j, "terminal"), "terminal");
        const bool has_next_state = j.contains("next_state");
        const bool has_next_action = j.contains("next_action");
        if (t.terminal && (has_next_state || has_next_action)) {
            throw DataError("terminal transition must not carry next_state/next_action");
        }
        if (!t.terminal) {
            if (!has_next_state || !has_next_action) {
                throw DataError("non-terminal transition needs next_state and next_action");
            }
            t.next_state = state_from_json(j["next_state"], "next_state");
            t.next_action = as_u32(j["next_action"], "next_action");
        }
        logs.push_back(std::move(t));
    });
    return logs;
}

std::vector<SessionRecord> read_records(std::istream& in) {
    std::vector<SessionRecord> records;
    for_each_line(in, [&](const Json& j) {
        SessionRecord r;
        r.session_id = as_uint(require(j, "session_id"), "session_id");
        r.step = as_u32(require(j, "step"), "step");
        r.state = state_from_json(require(j, "state"), "state");
        r.action = as_u32(require(j, "action"), "action");
        r.reward = as_flag(require(j, "reward"), "reward") ? 1 : 0;
        records.push_back(std::move(r));
    });
    return records;
}

void write_records(std::ostream& out, std::span<const SessionRecord> records) {
    for (const auto& r : records) {
        out << Json{{"session_id", r.session_id},
                    {"step", r.step},
                    {"state", state_to_json(r.state)},
                    {"action", r.action},
                    {"reward", int(r.reward)}}
                   .dump()
            << '\n';
    }
}

Json mdp_to_json(const sim::SyntheticMDP& mdp) {
    Json transition = Json::array();
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        transition.push_back(table2(
            std::span(mdp.transition).subspan(s * mdp.n_actions * mdp.n_states,
                                              mdp.n_actions * mdp.n_states),
            mdp.n_actions, mdp.n_states));
    }
    return Json{{"n_states", mdp.n_states},
                {"n_actions", mdp.n_actions},
                {"transition", transition},
                {"click_prob", table2(mdp.click_prob, mdp.n_states, mdp.n_actions)},
                {"term_prob", table2(mdp.term_prob, mdp.n_states, mdp.n_actions)},
                {"behavior_policy", table2(mdp.behavior_policy, mdp.n_states, mdp.n_actions)},
                {"initial_state_dist", mdp.initial_state_dist}};
}

sim::SyntheticMDP mdp_from_json(const Json& j) {
    sim::SyntheticMDP mdp;
    mdp.n_states = as_uint(require(j, "n_states"), "n_states");
    mdp.n_actions = as_uint(require(j, "n_actions"), "n_actions");
    const std::size_t s = mdp.n_states;
    const std::size_t a = mdp.n_actions;
    mdp.transition = flatten(require(j, "transition"), {s, a, s}, "transition");
    mdp.click_prob = flatten(require(j, "click_prob"), {s, a}, "click_prob");
    mdp.term_prob = flatten(require(j, "term_prob"), {s, a}, "term_prob");
    mdp.behavior_policy = flatten(require(j, "behavior_policy"), {s, a}, "behavior_policy");
    mdp.initial_state_dist = flatten(require(j, "initial_state_dist"), {s}, "initial_state_dist");
    return mdp;
}

Json value_table_to_json(const dist::ValueTable& table) {
    Json atoms = Json::array();
    for (std::size_t s = 0; s < table.n_states(); ++s) {
        Json row = Json::array();
        for (std::size_t a = 0; a < table.n_actions(); ++a) {
            auto span = table.at(StateId(s), ActionId(a));
            row.push_back(std::vector<double>(span.begin(), span.end()));
        }
        atoms.push_back(std::move(row));
    }
    return Json{{"M", table.quantiles()},
                {"states", table.n_states()},
                {"actions", table.n_actions()},
                {"atoms", atoms}};
}

dist::ValueTable value_table_from_json(const Json& j) {
    const std::size_t m = as_uint(require(j, "M"), "M");
    const std::size_t s = as_uint(require(j, "states"), "states");
    const std::size_t a = as_uint(require(j, "actions"), "actions");
    if (m == 0) throw DataError("M must be at least 1");
    const auto flat = flatten(require(j, "atoms"), {s, a, m}, "atoms");
    dist::ValueTable table(s, a, m);
    std::copy(flat.begin(), flat.end(), table.data().begin());
    return table;
}

Json config_to_json(const learn::TrainingConfig& c) {
    return Json{{"quantiles", c.quantiles},
                {"kappa", c.kappa},
                {"eta", c.eta},
                {"target_copy", c.target_copy},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"lr_final", c.lr_final ? Json(*c.lr_final) : Json(nullptr)},
                {"adam_beta1", c.adam_beta1},
                {"adam_beta2", c.adam_beta2},
                {"adam_eps", c.adam_eps},
                {"epochs", c.epochs},
                {"seed", c.seed},
                {"w_clip", c.w_clip ? Json(*c.w_clip) : Json(nullptr)},
                {"embedding_dim", c.embedding_dim},
                {"hidden", c.hidden},
                {"value_loss", to_string(c.value_loss)},
                {"discount", to_string(c.discount)},
                {"termination_head", c.termination_head},
                {"vocab", c.vocab}};
}

learn::TrainingConfig config_from_json(const Json& j) {
    if (!j.is_object()) throw ValidationError("training config must be a JSON object");
    learn::TrainingConfig c;
    try {
        for (const auto& [key, v] : j.items()) {
            const char* k = key.c_str();
            if (key == "quantiles") c.quantiles = as_u32(v, k);
            else if (key == "kappa") c.kappa = as_double(v, k);
            else if (key == "eta") c.eta = as_double(v, k);
            else if (key == "target_copy") c.target_copy = as_uint(v, k);
            else if (key == "batch_size") c.batch_size = as_uint(v, k);
            else if (key == "learning_rate") c.learning_rate = as_double(v, k);
            else if (key == "lr_final") c.lr_final = v.is_null() ? std::nullopt : std::optional(as_double(v, k));
            else if (key == "adam_beta1") c.adam_beta1 = as_double(v, k);
            else if (key == "adam_beta2") c.adam_beta2 = as_double(v, k);
            else if (key == "adam_eps") c.adam_eps = as_double(v, k);
            else if (key == "epochs") c.epochs = as_uint(v, k);
            else if (key == "seed") c.seed = as_uint(v, k);
            else if (key == "w_clip") c.w_clip = v.is_null() ? std::nullopt : std::optional(as_double(v, k));
            else if (key == "embedding_dim") c.embedding_dim = as_u32(v, k);
            else if (key == "hidden") {
                c.hidden.clear();
                for (const auto& h : v) c.hidden.push_back(as_u32(h, k));
            } else if (key == "value_loss") {
                const auto s = v.get<std::string>();
                if (s == "quantile_huber") c.value_loss = learn::ValueLoss::quantile_huber;
                else if (s == "squared") c.value_loss = learn::ValueLoss::squared;
                else throw ValidationError("unknown value_loss '" + s + "'");
            } else if (key == "discount") {
                const auto s = v.get<std::string>();
                if (s == "constant") c.discount = learn::TargetDiscount::constant;
                else if (s == "termination_aware") c.discount = learn::TargetDiscount::termination_aware;
                else throw ValidationError("unknown discount '" + s + "'");
            } else if (key == "termination_head") c.termination_head = as_flag(v, k);
            else if (key == "vocab") {
                c.vocab.clear();
                for (const auto& x : v) c.vocab.push_back(as_u32(x, k));
            } else {
                throw ValidationError("unknown training config key '" + key + "'");
            }
        }
    } catch (const DataError& e) {
        throw ValidationError(std::string("training config: ") + e.what());
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("training config: ") + e.what());
    }
    return c;
}

Json featurizer_to_json(const sim::Featurizer& f) {
    if (f.mode == sim::Featurizer::Mode::tabular) return Json{{"mode", "tabular"}};
    return Json{{"mode", "hashed"}, {"fields", f.fields}, {"vocab", f.vocab}, {"seed", f.seed}};
}

sim::Featurizer featurizer_from_json(const Json& j) {
    sim::Featurizer f;
    const auto mode = require(j, "mode").get<std::string>();
    if (mode == "tabular") return f;
    if (mode != "hashed") throw DataError("unknown featurizer mode '" + mode + "'");
    f.mode = sim::Featurizer::Mode::hashed;
    f.fields = as_u32(require(j, "fields"), "fields");
    f.vocab = as_u32(require(j, "vocab"), "vocab");
    f.seed = as_uint(require(j, "seed"), "seed");
    return f;
}

void write_model(std::ostream& out, const ModelFile& file) {
    const auto& model = file.model;
    Json tensors = Json::array();
    for (const auto& t : model.tensors()) tensors.push_back(Json{{"name", t.name}, {"shape", t.shape}});
    const Json manifest{{"format_version", kModelFormatVersion},
                        {"architecture", architecture_to_json(model.architecture())},
                        {"config", config_to_json(file.config)},
                        {"featurizer", featurizer_to_json(file.featurizer)},
                        {"provenance", file.provenance},
                        {"tensors", tensors}};
    const std::string text = manifest.dump();
    out.write(kModelMagic.data(), kModelMagic.size());
    put_u64(out, text.size());
    out.write(text.data(), std::streamsize(text.size()));

    std::vector<char> bytes;
    bytes.reserve(model.parameter_count() * 4);
    for (float v : model.parameters()) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int i = 0; i < 4; ++i) bytes.push_back(char((bits >> (8 * i)) & 0xFF));
    }
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw DataError("failed to write model");
}

ModelFile read_model(std::istream& in) {
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kModelMagic) {
        throw DataError("not an engagement model file");
    }
    const auto length = get_u64(in);
    if (length > (std::uint64_t(1) << 32)) throw DataError("model manifest is implausibly large");
    std::string text(length, '\0');
    if (!in.read(text.data(), std::streamsize(length))) throw DataError("model manifest is truncated");

    Json manifest;
    try {
        manifest = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw DataError(std::string("model manifest is not JSON: ") + e.what());
    }
    const auto version = as_uint(require(manifest, "format_version"), "format_version");
    if (version != kModelFormatVersion) {
        throw DataError("unsupported model format version " + std::to_string(version));
    }

    ModelFile file;
    try {
        file.model = learn::EngagementModel(architecture_from_json(require(manifest, "architecture")));
        file.config = config_from_json(require(manifest, "config"));
    } catch (const ValidationError& e) {
        throw DataError(std::string("model manifest: ") + e.what());
    }
    file.featurizer = featurizer_from_json(require(manifest, "featurizer"));
    file.provenance = require(manifest, "provenance");

    const auto& tensors = require(manifest, "tensors");
    const auto& expected = file.model.tensors();
    if (!tensors.is_array() || tensors.size() != expected.size()) {
        throw DataError("model tensor list does not match its architecture");
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (require(tensors[i], "name").get<std::string>() != expected[i].name ||
            require(tensors[i], "shape").get<std::vector<std::size_t>>() != expected[i].shape) {
            throw DataError("model tensor '" + expected[i].name + "' does not match its architecture");
        }
    }

    auto params = file.model.parameters();
    std::vector<unsigned char> bytes(params.size() * 4);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()))) {
        throw DataError("model tensor data is truncated");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= std::uint32_t(bytes[i * 4 + b]) << (8 * b);
        params[i] = std::bit_cast<float>(bits);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after model tensors");
    return file;
}

void write_trace(std::ostream& out, std::span<const learn::TraceRow> trace) {
    out << "step,quantile_loss,bce_loss,total\n";
    for (const auto& r : trace) {
        out << r.step << ',' << format_double(r.quantile_loss) << ',' << format_double(r.bce_loss)
            << ',' << format_double(r.total) << '\n';
    }
}

std::vector<learn::TraceRow> read_trace(std::istream& in) {
    std::string text;
    std::size_t line = 1;
    if (!std::getline(in, text) || text != "step,quantile_loss,bce_loss,total") {
        fail(line, "expected trace header 'step,quantile_loss,bce_loss,total'");
    }
    std::vector<learn::TraceRow> rows;
    while (std::getline(in, text)) {
        ++line;
        if (text.empty()) continue;
        learn::TraceRow r;
        const char* p = text.data();
        const char* end = text.data() + text.size();
        auto next_field = [&](auto& value) {
            auto [ptr, ec] = std::from_chars(p, end, value);
            if (ec != std::errc()) fail(line, "malformed trace row");
            p = ptr;
            if (p != end) {
                if (*p != ',') fail(line, "malformed trace row");
                ++p;
            }
        };
        next_field(r.step);
        next_field(r.quantile_loss);
        next_field(r.bce_loss);
        next_field(r.total);
        if (p != end) fail(line, "trailing fields in trace row");
        rows.push_back(r);
    }
    return rows;
}

std::vector<RankRequest> read_rank_requests(std::istream& in) {
    std::vector<RankRequest> requests;
    for_each_line(in, [&](const Json& j) {
        RankRequest r;
        r.state = state_from_json(require(j, "state"), "state");
        const auto& candidates = require(j, "candidates");
        if (!candidates.is_array()) throw DataError("candidates must be an array");
        for (const auto& c : candidates) {
            r.candidates.push_back({as_u32(require(c, "action"), "action"),
                                    as_double(require(c, "base"), "base")});
        }
        requests.push_back(std::move(r));
    });
    return requests;
}

void write_rank_requests(std::ostream& out, std::span<const RankRequest> requests) {
    for (const auto& r : requests) {
        Json candidates = Json::array();
        for (const auto& c : r.candidates) candidates.push_back(Json{{"action", c.action}, {"base", c.base}});
        out << Json{{"state", state_to_json(r.state)}, {"candidates", candidates}}.dump() << '\n';
    }
}

void write_rank_response(std::ostream& out, std::span<const ranking::ScoredItem> items) {
    Json list = Json::array();
    for (const auto& it : items) {
        list.push_back(Json{{"action", it.action},
                            {"base", it.base},
                            {"engagement", it.engagement},
                            {"combined", it.combined}});
    }
    out << Json{{"items", list}}.dump() << '\n';
}

std::vector<std::vector<ranking::ScoredItem>> read_rank_responses(std::istream& in) {
    std::vector<std::vector<ranking::ScoredItem>> responses;
    for_each_line(in, [&](const Json& j) {
        std::vector<ranking::ScoredItem> items;
        for (const auto& it : require(j, "items")) {
            items.push_back({as_u32(require(it, "action"), "action"),
                             as_double(require(it, "engagement"), "engagement"),
                             as_double(require(it, "base"), "base"),
                             as_double(require(it, "combined"), "combined")});
        }
        responses.push_back(std::move(items));
    });
    return responses;
}

Json read_json_file(const std::filesystem::path& path) {
    auto in = open_in(path);
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw DataError(path.string() + ": malformed JSON: " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

std::vector<sim::Transition> read_transitions_file(const std::filesystem::path& path) {
    auto in = open_in(path);
    try {
        return read_transitions(in);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_transitions_file(const std::filesystem::path& path,
                            std::span<const sim::Transition> logs) {
    auto out = open_out(path);
    write_transitions(out, logs);
}

ModelFile read_model_file(const std::filesystem::path& path) {
    auto in = open_in(path, std::ios::in | std::ios::binary);
    return read_model(in);
}

void write_model_file(const std::filesystem::path& path, const ModelFile& file) {
    auto out = open_out(path, std::ios::out | std::ios::binary);
    write_model(out, file);
}

}  // namespace engage::io
