#include <bit>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "voplab/cli/commands.hpp"
#include "voplab/corpus/tensor_file.hpp"
#include "voplab/io/json_fields.hpp"
#include "voplab/protocols/ledger.hpp"

using namespace voplab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("voplab_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

json small_config(const std::string& protocol = "vop") {
    return json{{"protocol", protocol},
                {"corpus", {{"n_pairs", 40}, {"n_val", 12}}},
                {"train", {{"epochs", 2}, {"batch_size", 8}}},
                {"dataset", "data"},
                {"output", "run"}};
}

ExperimentConfig parsed(const json& j, const fs::path& base) { return parse_experiment(j, base); }

int guarded(const std::function<void()>& f, std::string* err = nullptr) {
    std::ostringstream e;
    const int rc = run_guarded(f, e);
    if (err) *err = e.str();
    return rc;
}

std::vector<std::string> lines_of(const fs::path& p) {
    std::istringstream in(read_file_bytes(p));
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::string first_line(const fs::path& p) { return lines_of(p).front(); }

void generate(const ExperimentConfig& c) {
    std::ostringstream sink;
    cmd_generate(c, {}, sink);
}

RunOutcome train(const ExperimentConfig& c, CommandOptions o = {}) {
    std::ostringstream sink;
    return cmd_train(c, o, sink);
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("config parsing rejects typos and conflicting modes") {
    CHECK_THROWS_AS(parse_experiment(json{{"protocl", "vop"}}), ConfigError);
    CHECK_THROWS_AS(parse_experiment(json{{"train", {{"epoch", 3}}}}), ConfigError);
    CHECK_THROWS_AS(parse_experiment(json{{"protocol", "vop_p"}, {"prompts", {{"mode", "context"}}}}),
                    ConfigError);
    CHECK_THROWS_AS(parse_experiment(json{{"protocol", "nonsense"}}), ConfigError);
    const auto c = parse_experiment(json{{"protocol", "vop_fc"}});
    CHECK(c.prompts.mode == PromptMode::function_context);
    CHECK(c.prompts.split_depth == 3);
    CHECK(parse_experiment(json{{"protocol", "bias"}}).prompts.mode == PromptMode::none);
    const auto rel = parse_experiment(json{{"dataset", "d"}, {"output", "/abs/o"}}, "/cfg/dir");
    CHECK(rel.dataset == fs::path("/cfg/dir/d"));
    CHECK(rel.output == fs::path("/abs/o"));
}

TEST_CASE("config round trips through its own JSON") {
    const auto c = parse_experiment(json{{"protocol", "vop_c"}, {"prompts", {{"cmm", "lstm"}}}});
    CHECK(to_json(parse_experiment(to_json(c))) == to_json(c));
}

TEST_CASE("generate: success, constraint violation, clobber refusal") {
    TempDir tmp;
    const auto c = parsed(small_config(), tmp.path);
    CHECK(guarded([&] { generate(c); }) == kExitOk);
    CHECK(fs::exists(tmp.path / "data" / "manifest.json"));

    std::string err;
    CHECK(guarded([&] { generate(c); }, &err) == kExitClobber);
    CHECK(err.find("--force") != std::string::npos);
    CommandOptions force;
    force.force = true;
    std::ostringstream sink;
    CHECK(guarded([&] { cmd_generate(c, force, sink); }) == kExitOk);

    auto bad = small_config();
    bad["corpus"]["n_pairs"] = 1;
    CHECK(guarded([&] { generate(parsed(bad, tmp.path)); }, &err) == kExitConfig);
    CHECK(err.find("n_pairs") != std::string::npos);
}

TEST_CASE("train writes its artifacts with versioned CSV and step counts") {
    TempDir tmp;
    const auto c = parsed(small_config(), tmp.path);
    generate(c);
    const auto outcome = train(c);
    const fs::path run = tmp.path / "run";
    for (const char* f : {"resolved_config.json", "log.jsonl", "checkpoint.bin", "report.csv", "run_info.json"}) {
        CHECK(fs::exists(run / f));
    }
    CHECK(json::parse(read_file_bytes(run / "resolved_config.json")) == to_json(c));
    CHECK(first_line(run / "report.csv") == kReportSchema);
    CHECK(lines_of(run / "report.csv")[2].find(kToyBanner) != std::string::npos);

    std::size_t steps = 0, epochs = 0;
    for (const auto& l : lines_of(run / "log.jsonl")) {
        const auto r = json::parse(l);
        steps += r["kind"] == "step";
        epochs += r["kind"] == "epoch";
    }
    const std::size_t n_train = 40 - 12;
    CHECK(steps == 2 * ((n_train + 7) / 8));
    CHECK(epochs == 2);
    CHECK(outcome.steps == steps);
    CHECK(outcome.trainable == ledger_for(c.model, c.prompts, c.protocol).trainable_total);
}

TEST_CASE("train clobber, missing dataset and resume without checkpoint") {
    TempDir tmp;
    const auto c = parsed(small_config(), tmp.path);
    std::string err;
    CHECK(guarded([&] { train(c); }, &err) == kExitConfig);
    CHECK(err.find("generate") != std::string::npos);
    generate(c);
    CommandOptions resume;
    resume.resume = true;
    CHECK(guarded([&] { train(c, resume); }) == kExitConfig);
    CHECK(guarded([&] { train(c); }) == kExitOk);
    CHECK(guarded([&] { train(c); }) == kExitClobber);
}

TEST_CASE("protocols share the dataset hash and differ in ledger") {
    TempDir tmp;
    auto vop = parsed(small_config("vop"), tmp.path);
    auto full = parsed(small_config("full"), tmp.path);
    full.output = tmp.path / "run_full";
    generate(vop);
    train(vop);
    train(full);
    const auto head_vop = json::parse(lines_of(vop.output / "log.jsonl").front());
    const auto head_full = json::parse(lines_of(full.output / "log.jsonl").front());
    CHECK(head_vop["dataset"] == head_full["dataset"]);
    CHECK(head_vop["trainable_params"] != head_full["trainable_params"]);
}

TEST_CASE("resume bitwise-extends an interrupted run") {
    TempDir tmp;
    auto c = parsed(small_config(), tmp.path);
    generate(c);
    train(c);
    const auto ref_log = read_file_bytes(c.output / "log.jsonl");
    const auto ref_ckpt = read_file_bytes(c.output / "checkpoint.bin");
    const auto ref_report = read_file_bytes(c.output / "report.csv");

    for (std::size_t cut : {2u, 4u, 5u}) {
        CAPTURE(cut);
        auto part = c;
        part.output = tmp.path / ("cut" + std::to_string(cut));
        CommandOptions stop;
        stop.max_steps = cut;
        train(part, stop);
        // A crash after the checkpoint leaves extra log lines that resume must drop.
        std::ofstream(part.output / "log.jsonl", std::ios::app) << R"({"kind":"step","step":99})" << "\n";
        CommandOptions resume;
        resume.resume = true;
        train(part, resume);
        CHECK(read_file_bytes(part.output / "log.jsonl") == ref_log);
        CHECK(read_file_bytes(part.output / "checkpoint.bin") == ref_ckpt);
        CHECK(read_file_bytes(part.output / "report.csv") == ref_report);
    }
}

TEST_CASE("resume refuses a changed config") {
    TempDir tmp;
    auto c = parsed(small_config(), tmp.path);
    generate(c);
    CommandOptions stop;
    stop.max_steps = 2;
    train(c, stop);
    c.train.lr = 5e-4;
    CommandOptions resume;
    resume.resume = true;
    CHECK(guarded([&] { train(c, resume); }) == kExitConfig);
}

TEST_CASE("forced reruns are byte identical outside the sidecar") {
    TempDir tmp;
    const auto c = parsed(small_config(), tmp.path);
    generate(c);
    train(c);
    std::map<std::string, std::string> first;
    for (const char* f : {"resolved_config.json", "log.jsonl", "checkpoint.bin", "report.csv"}) {
        first[f] = read_file_bytes(c.output / f);
    }
    CommandOptions force;
    force.force = true;
    train(c, force);
    for (const auto& [f, bytes] : first) CHECK(read_file_bytes(c.output / f) == bytes);
    CHECK(json::parse(read_file_bytes(c.output / "run_info.json")).contains("started"));
}

TEST_CASE("non-finite loss exits 4 naming the step") {
    TempDir tmp;
    auto c = parsed(small_config(), tmp.path);
    generate(c);
    const Corpus corpus = load_corpus(c.dataset);
    VopModel<float> poisoned(c.model, c.prompts, c.protocol, 0);
    auto& emb = poisoned.params().get("text.token_embedding").value_mut();
    for (std::size_t i = 0; i < emb.numel(); ++i) emb[i] = std::numeric_limits<float>::quiet_NaN();
    Trainer t(poisoned, corpus, c.train);
    save_checkpoint(tmp.path / "poisoned.bin", t);
    c.backbone = tmp.path / "poisoned.bin";
    std::string err;
    CHECK(guarded([&] { train(c); }, &err) == kExitNonFinite);
    CHECK(err.find("step 0") != std::string::npos);
}

TEST_CASE("lr search picks the best grid point by validation R@1") {
    TempDir tmp;
    auto j = small_config();
    j["train"]["lr_grid"] = {1e-4, 1e-2};
    j["train"]["epochs"] = 1;
    const auto c = parsed(j, tmp.path);
    generate(c);
    CommandOptions search;
    search.lr_search = true;
    const auto outcome = train(c, search);
    const auto rows = lines_of(c.output / "lr_search.csv");
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == kLrSearchSchema);
    const bool first = rows[2].back() == '1';
    CHECK(first != (rows[3].back() == '1'));
    CHECK(outcome.lr == (first ? 1e-4 : 1e-2));
    CHECK(json::parse(read_file_bytes(c.output / "resolved_config.json"))["train"]["lr"] == outcome.lr);
}

TEST_CASE("count-params reproduces the CLIP ledger") {
    ExperimentConfig c;
    c.model = ModelSpec::clip_vit_b32();
    c.prompts = PromptSpec::defaults(PromptMode::vop, c.model);
    CommandOptions o;
    o.protocols = {"vop", "vop_p", "proj", "adapter_ffn", "full"};
    std::ostringstream out;
    cmd_count_params(c, o, out);
    std::istringstream in(out.str());
    std::vector<std::string> rows;
    for (std::string l; std::getline(in, l);) rows.push_back(l);
    REQUIRE(rows.size() == 7);
    CHECK(rows[0] == kParamsSchema);
    CHECK(rows[2].rfind("vop,122880,", 0) == 0);
    CHECK(rows[2].find(",0.103,") != std::string::npos);
    CHECK(rows[3].rfind("vop_p,528384,", 0) == 0);
    CHECK(rows[4].rfind("proj,655360,", 0) == 0);
    CHECK(rows[5].rfind("adapter_ffn,1982976,", 0) == 0);
    CHECK(rows[5].find(",1.655,") != std::string::npos);
    CHECK(rows[6].find(",100.000,") != std::string::npos);

    o.protocols = {"vop", "not_a_protocol"};
    std::ostringstream sink;
    CHECK(guarded([&] { cmd_count_params(c, o, sink); }) == kExitConfig);
}

TEST_CASE("ablation over k_split includes a row equal to plain VoP") {
    TempDir tmp;
    auto base = small_config("vop");
    base["train"]["epochs"] = 1;
    const auto plain = parsed(base, tmp.path);
    generate(plain);
    train(plain);

    auto j = base;
    j["protocol"] = "vop_f";
    j["output"] = "sweep";
    auto c = parsed(j, tmp.path);
    CommandOptions o;
    o.axis = "k_split";
    o.values = json::array({0, 2, 4});
    std::ostringstream sink;
    cmd_ablate(c, o, sink);
    const auto rows = lines_of(tmp.path / "sweep" / "ablation.csv");
    REQUIRE(rows.size() == 5);
    CHECK(rows[0] == kAblationSchema);

    const auto a = load_checkpoint(plain.output / "checkpoint.bin");
    const auto b = load_checkpoint(tmp.path / "sweep" / "k_split_4" / "checkpoint.bin");
    std::size_t shared = 0;
    for (const auto& [name, t] : a.params) {
        CAPTURE(name);
        REQUIRE(b.params.count(name));
        CHECK(same_bits(t, b.params.at(name)));
        ++shared;
    }
    CHECK(shared == a.params.size());
    const auto report_plain = lines_of(plain.output / "report.csv")[2];
    const auto report_point = lines_of(tmp.path / "sweep" / "k_split_4" / "report.csv")[2];
    auto metrics = [](const std::string& row) { return row.substr(row.find(",val,") + 5); };
    const auto mp = metrics(report_plain), mq = metrics(report_point);
    CHECK(mp.substr(mp.find(',', mp.find(',') + 1)) == mq.substr(mq.find(',', mq.find(',') + 1)));
}

TEST_CASE("ablation over cmm reports differing ledger sizes") {
    TempDir tmp;
    auto j = small_config("vop_c");
    j["train"]["epochs"] = 1;
    const auto c = parsed(j, tmp.path);
    generate(c);
    CommandOptions o;
    o.axis = "cmm";
    o.values = json::array({"bilstm", "lstm", "transformer"});
    o.max_steps = 1;
    std::ostringstream sink;
    cmd_ablate(c, o, sink);
    const auto rows = lines_of(c.output / "ablation.csv");
    REQUIRE(rows.size() == 5);
    std::set<std::string> sizes;
    for (std::size_t i = 2; i < 5; ++i) {
        std::istringstream row(rows[i]);
        std::vector<std::string> cells;
        for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
        sizes.insert(cells[6]);  // banner occupies two cells after splitting
    }
    CHECK(sizes.size() == 3);
}

TEST_CASE("ablation rows over depth are ordered by layer count; bad grids exit 2") {
    TempDir tmp;
    auto j = small_config();
    j["train"]["epochs"] = 1;
    const auto c = parsed(j, tmp.path);
    generate(c);
    CommandOptions o;
    o.axis = "depth";
    o.values = json::array({json::array({1, 4}), json::array({2, 2}), json::array({1, 2})});
    o.max_steps = 1;
    std::ostringstream sink;
    cmd_ablate(c, o, sink);
    const auto rows = lines_of(c.output / "ablation.csv");
    REQUIRE(rows.size() == 5);
    CHECK(rows[2].find(",depth,2-2,") != std::string::npos);
    CHECK(rows[3].find(",depth,1-2,") != std::string::npos);
    CHECK(rows[4].find(",depth,1-4,") != std::string::npos);

    o.values = json::array();
    CHECK(guarded([&] { cmd_ablate(c, o, sink); }) == kExitConfig);
    o.values = json::array({json::array({3, 9})});
    CHECK(guarded([&] { cmd_ablate(c, o, sink); }) == kExitConfig);
    o.axis = "k_split";
    o.values = json::array({2});
    CHECK(guarded([&] { cmd_ablate(c, o, sink); }) == kExitConfig);
    o.axis = "colour";
    CHECK(guarded([&] { cmd_ablate(c, o, sink); }) == kExitConfig);
}

TEST_CASE("the executable maps failures to exit codes") {
    TempDir tmp;
    const std::string exe = VOPLAB_CLI_PATH;
    auto run = [&](const std::string& args) {
        const int status = std::system((exe + " " + args + " >/dev/null 2>&1").c_str());
        return WEXITSTATUS(status);
    };
    std::ofstream(tmp.path / "exp.json") << small_config().dump();
    std::ofstream(tmp.path / "typo.json") << json{{"protcol", "vop"}}.dump();
    const std::string cfg = (tmp.path / "exp.json").string();
    CHECK(run("generate --config " + cfg) == 0);
    CHECK(run("generate --config " + cfg) == 3);
    CHECK(run("generate --config " + cfg + " --force --seed 3") == 0);
    CHECK(run("generate --config " + (tmp.path / "typo.json").string()) == 2);
    CHECK(run("count-params --protocols vop,adapter_attn") == 0);
    CHECK(run("count-params --protocols nope") == 2);
    CHECK(run("frobnicate") == 2);
}
