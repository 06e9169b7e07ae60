#include <bit>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "doctest.h"
#include "voplab/corpus/tensor_file.hpp"
#include "voplab/train/loss.hpp"
#include "voplab/train/trainer.hpp"

using namespace voplab;
namespace fs = std::filesystem;

namespace {

const Corpus& tiny_corpus() {
    static const Corpus corpus = [] {
        auto c = CorpusConfig::for_model(ModelSpec::toy());
        c.n_pairs = 24;
        c.n_val = 8;
        return generate_corpus(c);
    }();
    return corpus;
}

TrainConfig tiny_train(std::size_t epochs = 2) {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = 6;  // 16 train pairs -> 3 steps per epoch, last one partial
    t.lr = 1e-3;
    return t;
}

std::unique_ptr<VopModel<float>> toy_model(ProtocolKind kind, std::uint64_t seed = 5) {
    const ModelSpec m = ModelSpec::toy();
    const PromptMode mode = prompt_mode_for(kind);
    PromptSpec p = mode == PromptMode::none ? PromptSpec{} : PromptSpec::defaults(mode, m);
    return std::make_unique<VopModel<float>>(m, p, Protocol{kind}, seed);
}

std::map<std::string, Tensor<float>> snapshot(const VopModel<float>& model) {
    std::map<std::string, Tensor<float>> out;
    for (const auto& g : model.params().groups()) out[g.name] = g.tensor.value();
    return out;
}

bool bitwise_equal(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
    }
    return true;
}

std::vector<std::string> run_log(Trainer& trainer, std::optional<std::size_t> stop = std::nullopt) {
    std::vector<std::string> lines;
    trainer.set_log([&](const nlohmann::json& r) { lines.push_back(r.dump()); });
    trainer.run(stop);
    return lines;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
    CHECK(cosine_lr(0, 100, 0.5) == 0.5);
    CHECK(cosine_lr(100, 100, 0.5) == 0.0);
    CHECK(cosine_lr(50, 100, 0.5) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(cosine_lr(25, 100, 1.0) == doctest::Approx(0.5 * (1 + std::sqrt(0.5))).epsilon(1e-15));
    for (std::size_t s = 1; s <= 100; ++s) CHECK(cosine_lr(s, 100, 1.0) < cosine_lr(s - 1, 100, 1.0));
    CHECK_THROWS_AS(cosine_lr(101, 100, 1.0), std::invalid_argument);
}

TEST_CASE("AdamW matches a hand-computed step and an independent reference") {
    ParamRegistry<double> reg;
    auto p = reg.add("p", Tensor<double>({1}, 1.0), true);
    auto frozen = reg.add("frozen", Tensor<double>({1}, 3.0), false);
    AdamW<double> opt(AdamWConfig{0.9, 0.999, 1e-8, 0.2});
    auto loss = mul(p, Var<double>(Tensor<double>({1}, 0.5)));
    backward(sum_all(loss));
    opt.step(reg, 0.1);
    // m^ = 0.5, v^ = 0.25
    CHECK(p.value()[0] == doctest::Approx(0.98 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
    CHECK(frozen.value()[0] == 3.0);
    CHECK(opt.last_decayed() == std::set<std::string>{"p"});

    // Reference recurrence on a quadratic, written out independently.
    ParamRegistry<double> r2;
    auto w = r2.add("w", Tensor<double>({3}, std::vector<double>{0.5, -1.0, 2.0}), true);
    AdamW<double> opt2(AdamWConfig{0.8, 0.99, 1e-6, 0.1});
    std::vector<double> x = {0.5, -1.0, 2.0}, m(3, 0), v(3, 0);
    for (int t = 1; t <= 7; ++t) {
        r2.zero_grad();
        backward(sum_all(mul(w, w)));
        const double lr = 0.05 / t;
        opt2.step(r2, lr);
        for (int i = 0; i < 3; ++i) {
            const double g = 2 * x[i];
            m[i] = 0.8 * m[i] + 0.2 * g;
            v[i] = 0.99 * v[i] + 0.01 * g * g;
            const double mh = m[i] / (1 - std::pow(0.8, t)), vh = v[i] / (1 - std::pow(0.99, t));
            x[i] = x[i] * (1 - lr * 0.1) - lr * mh / (std::sqrt(vh) + 1e-6);
        }
    }
    for (int i = 0; i < 3; ++i) CHECK(w.value()[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("config validation") {
    TrainConfig t;
    CHECK_NOTHROW(t.validate());
    t.batch_size = 1;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = TrainConfig{};
    t.lr_grid = {1e-7};
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("zero steps leave parameters untouched") {
    auto model = toy_model(ProtocolKind::vop);
    const auto before = snapshot(*model);
    auto cfg = tiny_train(0);
    Trainer trainer(*model, tiny_corpus(), cfg);
    CHECK(trainer.total_steps() == 0);
    auto lines = run_log(trainer);
    REQUIRE(lines.size() == 1);
    for (const auto& [name, t] : snapshot(*model)) CHECK(bitwise_equal(t, before.at(name)));
}

TEST_CASE("log has one record per step and one per epoch") {
    auto model = toy_model(ProtocolKind::vop);
    Trainer trainer(*model, tiny_corpus(), tiny_train(2));
    CHECK(trainer.steps_per_epoch() == 3);
    auto lines = run_log(trainer);
    std::size_t steps = 0, epochs = 0;
    for (const auto& l : lines) {
        auto j = nlohmann::json::parse(l);
        if (j["kind"] == "step") {
            CHECK(j["step"] == steps);
            CHECK(j["lr"].get<double>() == cosine_lr(steps, 6, 1e-3));
            ++steps;
        }
        if (j["kind"] == "epoch") ++epochs;
    }
    CHECK(steps == 2 * 3);
    CHECK(epochs == 2);
    auto header = nlohmann::json::parse(lines.front());
    CHECK(header["kind"] == "run");
    CHECK(header["dataset"] == hex64(tiny_corpus().fingerprint()));
}

TEST_CASE("frozen groups stay bitwise fixed and decay touches exactly the trainable set") {
    for (auto kind : all_protocols()) {
        if (kind == ProtocolKind::full) continue;
        CAPTURE(to_string(kind));
        auto model = toy_model(kind);
        const auto before = snapshot(*model);
        Trainer trainer(*model, tiny_corpus(), tiny_train(1));
        std::set<std::string> trainable;
        for (const auto& g : model->params().groups()) {
            if (g.trainable) trainable.insert(g.name);
        }
        trainer.step();
        CHECK(trainer.optimizer().last_decayed() == trainable);
        // Zero-initialized adapter up-projections block the first gradient
        // to the down-projections; connectivity is a prompt-mode property.
        for (const auto& g : model->params().groups()) {
            if (g.trainable && Protocol{kind}.is_prompt_kind()) {
                CHECK_MESSAGE(g.tensor.has_grad(), g.name);
                double norm = 0;
                for (float v : g.tensor.grad().values()) norm += std::abs(v);
                CHECK_MESSAGE(norm > 0, g.name);
            }
        }
        trainer.run();
        for (const auto& g : model->params().groups()) {
            if (!g.trainable) CHECK_MESSAGE(bitwise_equal(g.tensor.value(), before.at(g.name)), g.name);
        }
    }
}

TEST_CASE("full fine-tuning moves every group") {
    auto model = toy_model(ProtocolKind::full);
    const auto before = snapshot(*model);
    Trainer trainer(*model, tiny_corpus(), tiny_train(1));
    trainer.run();
    std::size_t changed = 0;
    for (const auto& g : model->params().groups()) changed += !bitwise_equal(g.tensor.value(), before.at(g.name));
    CHECK(changed == model->params().size());
}

TEST_CASE("identical seeds give identical logs, different seeds do not") {
    auto run = [](std::uint64_t seed) {
        auto model = toy_model(ProtocolKind::vop_c);
        auto cfg = tiny_train(1);
        cfg.seed = seed;
        Trainer trainer(*model, tiny_corpus(), cfg);
        return run_log(trainer);
    };
    const auto a = run(3);
    CHECK(a == run(3));
    CHECK(a != run(4));
}

TEST_CASE("checkpoint resume extends the log bitwise") {
    const auto dir = fs::temp_directory_path() / "voplab_test_trainer";
    fs::create_directories(dir);
    for (std::size_t cut : {std::size_t{2}, std::size_t{3}}) {  // mid-epoch and at an epoch boundary
        CAPTURE(cut);
        auto full_model = toy_model(ProtocolKind::vop_fc);
        Trainer reference(*full_model, tiny_corpus(), tiny_train(2));
        const auto expected = run_log(reference);

        auto first_model = toy_model(ProtocolKind::vop_fc);
        Trainer first(*first_model, tiny_corpus(), tiny_train(2));
        auto lines = run_log(first, cut);
        save_checkpoint(dir / "ck.bin", first);

        auto resumed_model = toy_model(ProtocolKind::vop_fc, 999);  // different init, overwritten by the load
        Trainer resumed(*resumed_model, tiny_corpus(), tiny_train(2));
        restore_trainer(resumed, load_checkpoint(dir / "ck.bin"));
        CHECK(resumed.state().step == cut);
        auto rest = run_log(resumed);
        lines.insert(lines.end(), rest.begin(), rest.end());
        CHECK(lines == expected);
        for (const auto& g : full_model->params().groups()) {
            CHECK(bitwise_equal(g.tensor.value(), resumed_model->params().get(g.name).value()));
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("checkpoint rejects corruption and mismatched models") {
    const auto dir = fs::temp_directory_path() / "voplab_test_trainer_bad";
    fs::create_directories(dir);
    auto model = toy_model(ProtocolKind::vop);
    Trainer trainer(*model, tiny_corpus(), tiny_train(1));
    trainer.step();
    save_checkpoint(dir / "ck.bin", trainer);
    const auto bytes = read_file_bytes(dir / "ck.bin");
    const auto ck = load_checkpoint(dir / "ck.bin");
    CHECK(ck.state.step == 1);
    CHECK(ck.moments.size() == model->params().trainable_groups().size());

    write_file_atomic(dir / "bad.bin", "XPCK" + bytes.substr(4));
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.bin"), FormatError);
    write_file_atomic(dir / "bad.bin", bytes.substr(0, bytes.size() - 4));
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.bin"), FormatError);

    auto other = toy_model(ProtocolKind::vop_p);
    Trainer mismatch(*other, tiny_corpus(), tiny_train(1));
    CHECK_THROWS_AS(restore_trainer(mismatch, ck), std::invalid_argument);
    auto same = toy_model(ProtocolKind::vop);
    Trainer longer(*same, tiny_corpus(), tiny_train(3));
    CHECK_THROWS_AS(restore_trainer(longer, ck), std::invalid_argument);
    fs::remove_all(dir);
}

TEST_CASE("non-finite loss aborts with the step and batch, before any update") {
    auto model = toy_model(ProtocolKind::vop);
    Trainer trainer(*model, tiny_corpus(), tiny_train(1));
    trainer.step();
    auto emb = model->params().get("text.token_embedding");
    emb.value_mut().fill(std::numeric_limits<float>::quiet_NaN());
    const auto before = snapshot(*model);
    try {
        trainer.step();
        FAIL("expected NonFiniteLoss");
    } catch (const NonFiniteLoss& e) {
        CHECK(e.step == 1);
        CHECK(e.batch == 1);
    }
    for (const auto& g : model->params().groups()) {
        if (g.name != "text.token_embedding") CHECK(bitwise_equal(g.tensor.value(), before.at(g.name)));
    }
}

TEST_CASE("backbone transfer by name") {
    auto source = toy_model(ProtocolKind::full, 1);
    Trainer t(*source, tiny_corpus(), tiny_train(1));
    t.step();
    const auto dir = fs::temp_directory_path() / "voplab_test_transfer";
    fs::create_directories(dir);
    save_checkpoint(dir / "b.bin", t);
    auto target = toy_model(ProtocolKind::vop, 2);
    const auto prompts_before = snapshot(*target);
    const auto ck = load_checkpoint(dir / "b.bin");
    CHECK_THROWS_AS(load_parameters(*target, ck, true), std::invalid_argument);
    const std::size_t copied = load_parameters(*target, ck, false);
    CHECK(copied == source->params().size());
    for (const auto& g : target->params().groups()) {
        if (source->params().contains(g.name)) {
            CHECK(bitwise_equal(g.tensor.value(), source->params().get(g.name).value()));
        } else {
            CHECK(bitwise_equal(g.tensor.value(), prompts_before.at(g.name)));
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("evaluation of a split matches direct encoding") {
    auto model = toy_model(ProtocolKind::vop);
    const auto& val = tiny_corpus().split("val");
    const auto a = evaluate_split(*model, val, 64);
    const auto b = evaluate_split(*model, val, 3);
    CHECK(a.t2v.mean_rank == b.t2v.mean_rank);
    CHECK(a.v2t.recall_at == b.v2t.recall_at);
    CHECK(a.t2v.queries == val.size());
}
