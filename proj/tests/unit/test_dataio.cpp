#include "doctest.h"

#include <bit>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "engage/dataio.hpp"
#include "engage/qrlearn.hpp"
#include "oracles.hpp"

using namespace engage;
using engage::io::Json;

namespace {

template <class T, class Write, class Read>
T round_trip(const T& value, Write write, Read read) {
    std::stringstream buf;
    write(buf, value);
    return read(buf);
}

io::ModelFile sample_model_file(bool termination_head = true) {
    learn::TrainingConfig config;
    config.quantiles = 7;
    config.embedding_dim = 3;
    config.hidden = {5, 4};
    config.termination_head = termination_head;
    config.lr_final = 1e-5;
    config.vocab = {6, 2};
    io::ModelFile file;
    file.model = learn::EngagementModel(learn::make_architecture(config, config.vocab));
    file.model.initialize(13, false);
    file.config = config;
    file.featurizer.mode = sim::Featurizer::Mode::hashed;
    file.featurizer.fields = 1;
    file.featurizer.vocab = 6;
    file.featurizer.seed = 99;
    file.provenance = Json{{"command", "test"}, {"seed", 13}};
    return file;
}

std::string model_bytes(const io::ModelFile& file) {
    std::stringstream buf;
    io::write_model(buf, file);
    return buf.str();
}

}  // namespace

TEST_SUITE("dataio") {

TEST_CASE("format_double is shortest round-trip") {
    CHECK(io::format_double(0.1) == "0.1");
    CHECK(io::format_double(1.0) == "1");
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1e3);
    for (int i = 0; i < 1000; ++i) {
        const double v = n(rng);
        CHECK(std::stod(io::format_double(v)) == v);
    }
}

TEST_CASE("transition logs round-trip") {
    SUBCASE("tabular") {
        const auto logs = sim::generate_logs(sim::random_mdp(6, 3, 1), 300, 2);
        const auto back = round_trip(logs, [](std::ostream& o, const auto& l) { io::write_transitions(o, l); },
                                     [](std::istream& i) { return io::read_transitions(i); });
        CHECK(back == logs);
    }
    SUBCASE("hashed features") {
        sim::GenerateOptions options;
        options.featurizer.mode = sim::Featurizer::Mode::hashed;
        options.featurizer.fields = 3;
        const auto logs = sim::generate_logs(sim::random_mdp(6, 3, 1), 100, 2, options);
        const auto back = round_trip(logs, [](std::ostream& o, const auto& l) { io::write_transitions(o, l); },
                                     [](std::istream& i) { return io::read_transitions(i); });
        CHECK(back == logs);
    }
}

TEST_CASE("transition log format") {
    sim::Transition t;
    t.session_id = 3;
    t.step = 1;
    t.state = {4};
    t.action = 2;
    t.reward = 1;
    t.terminal = true;
    std::stringstream buf;
    io::write_transitions(buf, std::vector<sim::Transition>{t});
    const auto j = Json::parse(buf.str());
    CHECK(j["state"] == 4);
    CHECK(j["terminal"] == 1);
    CHECK_FALSE(j.contains("next_state"));
    CHECK_FALSE(j.contains("next_action"));
}

TEST_CASE("transition log parse errors carry the line number") {
    const std::string good = R"({"session_id":0,"step":0,"state":1,"action":0,"reward":1,"terminal":1})";
    auto parse = [](const std::string& text) {
        std::istringstream in(text);
        return io::read_transitions(in);
    };
    CHECK(parse(good + "\n").size() == 1);
    CHECK_THROWS_WITH_AS(parse(good + "\n{not json\n"), doctest::Contains("line 2"), DataError);
    CHECK_THROWS_WITH_AS(parse(good + "\n" + good + "\n{\"step\":0}\n"), doctest::Contains("line 3"), DataError);
    CHECK_THROWS_AS(parse(R"({"session_id":0,"step":0,"state":1,"action":0,"reward":1,"terminal":0})"), DataError);
    CHECK_THROWS_AS(parse(R"({"session_id":0,"step":0,"state":1,"action":0,"reward":1,"terminal":1,"next_state":2,"next_action":0})"),
                    DataError);
    CHECK_THROWS_AS(parse(R"({"session_id":0,"step":0,"state":1,"action":0,"reward":2,"terminal":1})"), DataError);
    CHECK_THROWS_AS(parse(R"({"session_id":-1,"step":0,"state":1,"action":0,"reward":1,"terminal":1})"), DataError);
    CHECK_THROWS_AS(parse(R"({"session_id":0,"step":0,"state":"x","action":0,"reward":1,"terminal":1})"), DataError);
}

TEST_CASE("session records round-trip") {
    std::vector<io::SessionRecord> records{{1, 0, {3}, 2, 1}, {1, 1, {4, 7}, 0, 0}};
    const auto back = round_trip(records, [](std::ostream& o, const auto& r) { io::write_records(o, r); },
                                 [](std::istream& i) { return io::read_records(i); });
    CHECK(back == records);
}

TEST_CASE("mdp specs round-trip") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto mdp = sim::random_mdp(4, 3, seed);
        CHECK(io::mdp_from_json(io::mdp_to_json(mdp)) == mdp);
        CHECK(io::mdp_from_json(Json::parse(io::mdp_to_json(mdp).dump())) == mdp);
    }
    const auto bait = sim::clickbait_mdp();
    CHECK(io::mdp_from_json(Json::parse(io::mdp_to_json(bait).dump())) == bait);
}

TEST_CASE("value tables round-trip") {
    dist::ValueTable z(3, 2, 5);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 10.0);
    for (double& v : z.data()) v = n(rng);
    const auto j = io::value_table_to_json(z);
    CHECK(j["M"] == 5);
    CHECK(j["states"] == 3);
    CHECK(j["actions"] == 2);
    CHECK(j["atoms"][2][1][4] == z.at(2, 1)[4]);
    CHECK(io::value_table_from_json(Json::parse(j.dump())) == z);
}

TEST_CASE("training configs") {
    SUBCASE("the empty document gives the defaults") {
        CHECK(io::config_from_json(Json::object()) == learn::TrainingConfig{});
    }
    SUBCASE("round-trip with every knob changed") {
        learn::TrainingConfig c;
        c.quantiles = 32;
        c.kappa = 0.05;
        c.eta = 0.8;
        c.target_copy = 50;
        c.batch_size = 64;
        c.learning_rate = 1e-3;
        c.lr_final = 2e-5;
        c.adam_beta1 = 0.8;
        c.adam_beta2 = 0.99;
        c.adam_eps = 1e-6;
        c.epochs = 5;
        c.seed = 123456789012345ULL;
        c.w_clip = 10.0;
        c.embedding_dim = 8;
        c.hidden = {16};
        c.value_loss = learn::ValueLoss::squared;
        c.discount = learn::TargetDiscount::constant;
        c.termination_head = false;
        c.vocab = {20, 10};
        CHECK(io::config_from_json(Json::parse(io::config_to_json(c).dump())) == c);
        CHECK(io::config_from_json(io::config_to_json(learn::TrainingConfig{})) == learn::TrainingConfig{});
    }
    SUBCASE("unknown keys and bad values are rejected") {
        CHECK_THROWS_AS(io::config_from_json(Json{{"learning_rte", 0.1}}), ValidationError);
        CHECK_THROWS_AS(io::config_from_json(Json{{"quantiles", -3}}), ValidationError);
        CHECK_THROWS_AS(io::config_from_json(Json{{"value_loss", "l1"}}), ValidationError);
        CHECK_THROWS_AS(io::config_from_json(Json::array()), ValidationError);
    }
}

TEST_CASE("featurizers round-trip") {
    sim::Featurizer tab;
    CHECK(io::featurizer_from_json(io::featurizer_to_json(tab)) == tab);
    sim::Featurizer hashed;
    hashed.mode = sim::Featurizer::Mode::hashed;
    hashed.fields = 5;
    hashed.vocab = 100;
    hashed.seed = 17;
    CHECK(io::featurizer_from_json(io::featurizer_to_json(hashed)) == hashed);
}

TEST_CASE("model files round-trip bit-exactly") {
    for (bool head : {true, false}) {
        const auto file = sample_model_file(head);
        const auto bytes = model_bytes(file);
        std::istringstream in(bytes);
        const auto back = io::read_model(in);
        CHECK(back == file);
        CHECK(model_bytes(back) == bytes);
    }
}

TEST_CASE("model file layout") {
    const auto file = sample_model_file();
    const auto bytes = model_bytes(file);
    REQUIRE(bytes.size() > 16);
    CHECK(bytes.substr(0, 8) == "ENGMODEL");
    std::uint64_t length = 0;
    for (int i = 0; i < 8; ++i) length |= std::uint64_t(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    const auto manifest = Json::parse(bytes.substr(16, length));
    CHECK(manifest["format_version"] == io::kModelFormatVersion);
    CHECK(manifest["tensors"].size() == file.model.tensors().size());
    CHECK(manifest["config"]["quantiles"] == 7);
    CHECK(bytes.size() == 16 + length + 4 * file.model.parameter_count());

    // The first tensor value, little-endian float32.
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= std::uint32_t(static_cast<unsigned char>(bytes[16 + length + i])) << (8 * i);
    CHECK(std::bit_cast<float>(bits) == file.model.parameters()[0]);
}

TEST_CASE("model files without a termination head list no termination tensors") {
    const auto bytes = model_bytes(sample_model_file(false));
    std::uint64_t length = 0;
    for (int i = 0; i < 8; ++i) length |= std::uint64_t(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    const auto manifest = Json::parse(bytes.substr(16, length));
    for (const auto& t : manifest["tensors"]) {
        CHECK(t["name"].get<std::string>().find("termination") == std::string::npos);
    }
}

TEST_CASE("corrupted model files are rejected") {
    const auto bytes = model_bytes(sample_model_file());
    auto read = [](const std::string& b) {
        std::istringstream in(b);
        return io::read_model(in);
    };
    CHECK_THROWS_AS(read("NOTMODEL" + bytes.substr(8)), DataError);
    CHECK_THROWS_AS(read(bytes.substr(0, bytes.size() - 3)), DataError);
    CHECK_THROWS_AS(read(bytes + "x"), DataError);
    CHECK_THROWS_AS(read(bytes.substr(0, 12)), DataError);

    std::uint64_t length = 0;
    for (int i = 0; i < 8; ++i) length |= std::uint64_t(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    auto manifest = Json::parse(bytes.substr(16, length));
    auto rebuild = [&](const Json& m) {
        const std::string text = m.dump();
        std::string out = "ENGMODEL";
        for (int i = 0; i < 8; ++i) out.push_back(char((text.size() >> (8 * i)) & 0xFF));
        return out + text + bytes.substr(16 + length);
    };
    CHECK_NOTHROW(read(rebuild(manifest)));
    auto versioned = manifest;
    versioned["format_version"] = 99;
    CHECK_THROWS_WITH_AS(read(rebuild(versioned)), doctest::Contains("version"), DataError);
    auto reshaped = manifest;
    reshaped["tensors"][0]["shape"][1] = 4;
    CHECK_THROWS_AS(read(rebuild(reshaped)), DataError);
}

TEST_CASE("training traces round-trip") {
    const auto logs = sim::generate_logs(sim::random_mdp(3, 2, 1), 100, 1);
    learn::TrainingConfig config;
    config.quantiles = 4;
    config.hidden = {8};
    config.embedding_dim = 4;
    config.epochs = 1;
    const auto trace = learn::train(logs, config).trace;
    std::stringstream buf;
    io::write_trace(buf, trace);
    CHECK(buf.str().starts_with("step,quantile_loss,bce_loss,total\n"));
    CHECK(io::read_trace(buf) == trace);

    std::istringstream bad("step,quantile_loss,bce_loss,total\n1,0.5,x,1\n");
    CHECK_THROWS_WITH_AS(io::read_trace(bad), doctest::Contains("line 2"), DataError);
    std::istringstream headless("1,2,3,4\n");
    CHECK_THROWS_AS(io::read_trace(headless), DataError);
}

TEST_CASE("rank requests and responses round-trip") {
    const std::vector<io::RankRequest> requests{{{3}, {{0, 0.5}, {2, -1.25}}}, {{1, 9}, {{4, 0.1}}}};
    std::stringstream buf;
    io::write_rank_requests(buf, requests);
    const auto back = io::read_rank_requests(buf);
    REQUIRE(back.size() == 2);
    CHECK(back[0].state == requests[0].state);
    CHECK(back[1].state == requests[1].state);
    CHECK(back[0].candidates.size() == 2);
    CHECK(back[0].candidates[1].action == 2);
    CHECK(back[0].candidates[1].base == -1.25);

    const std::vector<ranking::ScoredItem> items{{2, 0.3, 1.0, 1.3}, {0, 0.1, 0.1, 0.2}};
    std::stringstream out;
    io::write_rank_response(out, items);
    io::write_rank_response(out, items);
    const auto responses = io::read_rank_responses(out);
    REQUIRE(responses.size() == 2);
    CHECK(responses[0] == items);
    CHECK(responses[1] == items);
}

TEST_CASE("file helpers") {
    engage::testing::TempDir dir;
    CHECK_THROWS_AS(io::read_json_file(dir / "missing.json"), DataError);
    engage::testing::write_file(dir / "bad.json", "{");
    CHECK_THROWS_AS(io::read_json_file(dir / "bad.json"), DataError);

    const auto file = sample_model_file();
    io::write_model_file(dir / "m.bin", file);
    CHECK(io::read_model_file(dir / "m.bin") == file);
    io::write_model_file(dir / "m2.bin", file);
    CHECK(engage::testing::read_file(dir / "m.bin") == engage::testing::read_file(dir / "m2.bin"));

    const auto logs = sim::generate_logs(sim::random_mdp(3, 2, 1), 50, 1);
    io::write_transitions_file(dir / "l.jsonl", logs);
    CHECK(io::read_transitions_file(dir / "l.jsonl") == logs);
}

}  // TEST_SUITE
