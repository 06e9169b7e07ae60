#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "pipeline_check.hpp"
#include "voplab/model/dual_encoder.hpp"
#include "voplab/train/loss.hpp"

using namespace voplab;

namespace {

ModelSpec small_spec(std::mt19937_64& rng) {
    auto pick = [&](std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    ModelSpec m;
    m.layers = pick(1, 4);
    m.text_width = 8;
    m.vision_width = 8;
    m.embed_dim = 4;
    m.text_heads = 2;
    m.vision_heads = 2;
    m.max_text_len = 8;
    m.frames = pick(1, 3);
    m.patch = 2;
    m.image_side = 2 * pick(1, 2);
    m.vocab = 16;
    m.mlp_ratio = 2;
    return m;
}

const PromptMode kModes[] = {PromptMode::vop,      PromptMode::position,          PromptMode::context,
                             PromptMode::function, PromptMode::function_position, PromptMode::function_context};

template <typename T>
std::unique_ptr<VopModel<T>> make(const ModelSpec& m, const PromptSpec& p, std::uint64_t seed = 3) {
    return std::make_unique<VopModel<T>>(m, p, Protocol{p.enabled() ? fixtures::protocol_for(p.mode) : ProtocolKind::full},
                                         seed);
}

bool reaches_only_through(const Var<float>& start, const void* stop, const std::set<std::string>& allowed) {
    std::vector<Var<float>> stack{start};
    while (!stack.empty()) {
        auto v = stack.back();
        stack.pop_back();
        if (v.id() == stop) continue;
        if (!allowed.count(v.op())) return false;
        for (const auto& p : v.parents()) stack.push_back(p);
    }
    return true;
}

}  // namespace

TEST_CASE("output shapes for every mode") {
    const ModelSpec m = ModelSpec::toy();
    std::mt19937_64 rng(1);
    auto text = fixtures::random_text(m, 3, 6, rng);
    auto video = fixtures::random_video<float>(m, 2, rng);
    for (auto mode : kModes) {
        CAPTURE(to_string(mode));
        auto model = make<float>(m, PromptSpec::defaults(mode, m));
        CHECK(model->encode_text(text).shape() == Shape{3, m.embed_dim});
        CHECK(model->encode_frames(video).shape() == Shape{2, m.frames, m.embed_dim});
        auto sim = cosine_similarity(model->encode_text(text), model->encode_video(video));
        CHECK(sim.shape() == Shape{3, 2});
        for (float v : sim.value().values()) CHECK(std::abs(v) <= 1.0f + 1e-5f);
    }
}

TEST_CASE("prompt outputs are discarded at every layer for random configurations") {
    std::mt19937_64 rng(11);
    auto pick = [&](std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    for (int trial = 0; trial < 100; ++trial) {
        CAPTURE(trial);
        ModelSpec m = small_spec(rng);
        PromptSpec p = PromptSpec::defaults(kModes[pick(0, 5)], m);
        p.text_len = pick(0, 4);
        p.visual_len = pick(0, 4);
        p.video_len = pick(0, p.visual_len);
        p.depth_first = pick(1, m.layers);
        p.depth_last = pick(p.depth_first, m.layers);
        p.split_depth = pick(0, m.layers);
        p.cmm = static_cast<CmmKind>(pick(0, 2));
        p.cmm_layers = 1;
        CAPTURE(to_string(p.mode));
        auto model = make<float>(m, p, trial);
        const std::size_t n = pick(1, m.max_text_len), b = pick(1, 2);
        auto text = fixtures::random_text(m, b, n, rng);
        auto video = fixtures::random_video<float>(m, b, rng);
        EncoderTrace<float> trace;
        model->encode_text(text, &trace);
        model->encode_frames(video, &trace);

        REQUIRE(trace.text.size() == m.layers);
        for (const auto& rec : trace.text) {
            const std::size_t np = p.prompted(rec.layer) ? p.text_len : 0;
            CHECK(rec.tokens_in == n + np);
            CHECK(rec.prompt_tokens == np);
            CHECK(rec.tokens_out == n);
        }
        REQUIRE(trace.vision.size() == m.layers);
        const std::size_t M = m.patches(), F = m.frames;
        const std::size_t split = p.per_frame_depth(m.layers);
        for (const auto& rec : trace.vision) {
            CAPTURE(rec.layer);
            const std::size_t np = p.prompted(rec.layer) ? p.visual_len : 0;
            CHECK(rec.prompt_tokens == np);
            CHECK(rec.joint == (rec.layer > split));
            if (rec.joint) {
                CHECK(rec.tokens_in == F + np + F * M);
                CHECK(rec.tokens_out == F + F * M);
            } else {
                CHECK(rec.tokens_in == 1 + np + M);
                CHECK(rec.tokens_out == 1 + M);
            }
            CHECK(rec.output.shape()[1] == rec.tokens_in);
        }
    }
}

TEST_CASE("joint sequence length at CLIP dimensions") {
    const ModelSpec m = ModelSpec::clip_vit_b32();
    auto p = PromptSpec::defaults(PromptMode::function, m);
    CHECK(joint_layer_tokens(m, p, p.split_depth + 1) == 608);
    CHECK(joint_layer_tokens(m, p, m.layers) == m.frames + p.visual_len + m.frames * m.patches());
    CHECK(frame_layer_tokens(m, p, 1) == 1 + 8 + 49);
    CHECK(text_layer_tokens(m, p, 1, 32) == 40);
}

TEST_CASE("degenerate configurations reproduce plain deep prompting bitwise") {
    const ModelSpec m = ModelSpec::toy();
    std::mt19937_64 rng(5);
    auto text = fixtures::random_text(m, 2, 7, rng);
    auto video = fixtures::random_video<float>(m, 2, rng);
    auto vop = make<float>(m, PromptSpec::defaults(PromptMode::vop, m));
    const auto ref_text = vop->encode_text(text).value();
    const auto ref_video = vop->encode_frames(video).value();

    SUBCASE("split at the last layer") {
        for (auto mode : {PromptMode::function, PromptMode::function_position, PromptMode::function_context}) {
            auto p = PromptSpec::defaults(mode, m);
            p.split_depth = m.layers;
            p.video_len = 0;
            auto model = make<float>(m, p);
            CHECK(model->encode_frames(video).value() == ref_video);
            CHECK(model->encode_text(text).value() == ref_text);
        }
    }
    SUBCASE("no video tokens") {
        for (auto mode : {PromptMode::position, PromptMode::context}) {
            auto p = PromptSpec::defaults(mode, m);
            p.video_len = 0;
            auto model = make<float>(m, p);
            CHECK(model->encode_frames(video).value() == ref_video);
            CHECK(model->encode_text(text).value() == ref_text);
        }
    }
    SUBCASE("zero-length prompts equal the unprompted encoder") {
        auto plain = make<float>(m, PromptSpec{});
        for (auto mode : kModes) {
            auto p = PromptSpec::defaults(mode, m);
            p.text_len = 0;
            p.visual_len = 0;
            p.video_len = 0;
            p.split_depth = m.layers;
            auto model = make<float>(m, p);
            CHECK(model->encode_frames(video).value() == plain->encode_frames(video).value());
            CHECK(model->encode_text(text).value() == plain->encode_text(text).value());
        }
    }
    SUBCASE("adapters are transparent at initialization") {
        auto plain = std::make_unique<VopModel<float>>(m, PromptSpec{}, Protocol{ProtocolKind::proj}, 3);
        for (auto k : {ProtocolKind::adapter_attn, ProtocolKind::adapter_ffn}) {
            auto model = std::make_unique<VopModel<float>>(m, PromptSpec{}, Protocol{k}, 3);
            CHECK(model->encode_frames(video).value() == plain->encode_frames(video).value());
            CHECK(model->encode_text(text).value() == plain->encode_text(text).value());
        }
    }
}

TEST_CASE("generated context prompts are never carried to the next layer") {
    const ModelSpec m = ModelSpec::toy();
    std::mt19937_64 rng(8);
    auto video = fixtures::random_video<float>(m, 2, rng);
    for (auto mode : {PromptMode::context, PromptMode::function_context}) {
        CAPTURE(to_string(mode));
        auto p = PromptSpec::defaults(mode, m);
        auto model = make<float>(m, p);
        EncoderTrace<float> trace;
        model->encode_frames(video, &trace);
        const std::size_t split = p.per_frame_depth(m.layers);
        std::set<const void*> generated;
        for (std::size_t i = 0; i < split; ++i) {
            const auto& rec = trace.vision[i];
            REQUIRE(rec.generated.defined());
            CHECK(rec.generated.shape() == Shape{2, m.frames, p.video_len, m.vision_width});
            generated.insert(rec.generated.id());
        }
        for (std::size_t i = 1; i < split; ++i) {
            const auto& prev = trace.vision[i - 1];
            const auto& cur = trace.vision[i];
            // The carried state is a pure row selection of the previous block output.
            CHECK(reaches_only_through(cur.cls_in, prev.output.id(), {"slice", "concat", "reshape"}));
            CHECK(generated.count(cur.cls_in.id()) == 0);
            // Row 0 of each frame's output is exactly the next [CLS] input.
            const auto& out = prev.output.value();
            const std::size_t S = out.shape()[1], d = m.vision_width;
            for (std::size_t bf = 0; bf < 2 * m.frames; ++bf) {
                for (std::size_t c = 0; c < d; ++c) {
                    REQUIRE(cur.cls_in.value()[bf * d + c] == out[bf * S * d + c]);
                }
            }
        }
    }
}

TEST_CASE("one generator serves every prompted layer") {
    const ModelSpec m = ModelSpec::toy();
    for (auto cmm : {CmmKind::bilstm, CmmKind::lstm, CmmKind::transformer}) {
        auto p = PromptSpec::defaults(PromptMode::context, m);
        p.cmm = cmm;
        p.cmm_layers = 2;
        auto model = make<float>(m, p);
        std::set<std::string> names;
        for (const auto& g : model->params().groups()) {
            if (g.name.rfind("context.", 0) == 0) names.insert(g.name);
        }
        CHECK(!names.empty());
        for (const auto& n : names) {
            for (std::size_t i = 1; i <= m.layers; ++i) {
                CHECK(n.find("prompt." + std::to_string(i)) == std::string::npos);
            }
        }
        CHECK(model->bank().generator() != nullptr);
    }
}

TEST_CASE("generated prompts depend on frame order") {
    const ModelSpec m = ModelSpec::toy();
    std::mt19937_64 rng(2);
    for (auto cmm : {CmmKind::bilstm, CmmKind::lstm, CmmKind::transformer}) {
        CAPTURE(to_string(cmm));
        auto p = PromptSpec::defaults(PromptMode::context, m);
        p.cmm = cmm;
        p.cmm_layers = 2;
        auto model = make<float>(m, p);
        Tensor<float> cls({1, m.frames, m.vision_width});
        std::normal_distribution<float> nd(0.f, 1.f);
        for (auto& v : cls.values()) v = nd(rng);
        // Reverse the frames, then compare prompts for the same frame content.
        Tensor<float> rev(cls.shape());
        const std::size_t d = m.vision_width, F = m.frames;
        for (std::size_t f = 0; f < F; ++f) {
            for (std::size_t c = 0; c < d; ++c) rev[(F - 1 - f) * d + c] = cls[f * d + c];
        }
        auto a = model->bank().generator()->generate(constant(cls)).value();
        auto b = model->bank().generator()->generate(constant(rev)).value();
        const std::size_t block = p.video_len * d;
        double max_diff = 0;
        for (std::size_t f = 0; f < F; ++f) {
            for (std::size_t k = 0; k < block; ++k) {
                max_diff = std::max(max_diff, double(std::abs(a[f * block + k] - b[(F - 1 - f) * block + k])));
            }
        }
        CHECK(max_diff > 1e-6);
    }
}

TEST_CASE("bidirectional LSTM generator matches a direct recurrence") {
    const ModelSpec m = ModelSpec::toy();
    auto p = PromptSpec::defaults(PromptMode::context, m);
    p.cmm_hidden = 6;
    auto model = make<double>(m, p);
    const auto& reg = model->params();
    const std::size_t F = m.frames, d = m.vision_width, h = 6, B = 2;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd(0.0, 1.0);
    Tensor<double> cls({B, F, d});
    for (auto& v : cls.values()) v = nd(rng);

    auto sigm = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    auto run = [&](const std::string& dir, bool reversed) {
        const auto& wih = reg.get("context.cmm." + dir + ".weight_ih").value();
        const auto& whh = reg.get("context.cmm." + dir + ".weight_hh").value();
        const auto& bih = reg.get("context.cmm." + dir + ".bias_ih").value();
        const auto& bhh = reg.get("context.cmm." + dir + ".bias_hh").value();
        std::vector<double> out(B * F * h);
        for (std::size_t b = 0; b < B; ++b) {
            std::vector<double> hs(h, 0.0), cs(h, 0.0);
            for (std::size_t s = 0; s < F; ++s) {
                const std::size_t t = reversed ? F - 1 - s : s;
                std::vector<double> z(4 * h);
                for (std::size_t g = 0; g < 4 * h; ++g) {
                    double acc = bih[g] + bhh[g];
                    for (std::size_t i = 0; i < d; ++i) acc += cls[(b * F + t) * d + i] * wih[i * 4 * h + g];
                    for (std::size_t i = 0; i < h; ++i) acc += hs[i] * whh[i * 4 * h + g];
                    z[g] = acc;
                }
                for (std::size_t j = 0; j < h; ++j) {
                    cs[j] = sigm(z[h + j]) * cs[j] + sigm(z[j]) * std::tanh(z[2 * h + j]);
                    hs[j] = sigm(z[3 * h + j]) * std::tanh(cs[j]);
                    out[(b * F + t) * h + j] = hs[j];
                }
            }
        }
        return out;
    };
    auto fw = run("fwd", false), bw = run("bwd", true);
    const auto& fcw = reg.get("context.fc.weight").value();
    const auto& fcb = reg.get("context.fc.bias").value();
    const std::size_t out_w = p.video_len * d;
    auto got = model->bank().generator()->generate(constant(cls)).value();
    REQUIRE(got.shape() == Shape{B, F, p.video_len, d});
    double worst = 0;
    for (std::size_t r = 0; r < B * F; ++r) {
        for (std::size_t o = 0; o < out_w; ++o) {
            double acc = fcb[o];
            for (std::size_t j = 0; j < h; ++j) acc += fw[r * h + j] * fcw[j * out_w + o];
            for (std::size_t j = 0; j < h; ++j) acc += bw[r * h + j] * fcw[(h + j) * out_w + o];
            worst = std::max(worst, std::abs(acc - got[r * out_w + o]));
        }
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("position prompts only touch frames at their index") {
    const ModelSpec m = ModelSpec::toy();
    std::mt19937_64 rng(6);
    auto video = fixtures::random_video<float>(m, 2, rng);
    auto model = make<float>(m, PromptSpec::defaults(PromptMode::position, m));
    const auto before = model->encode_frames(video).value();
    auto block = model->params().get(vision_position_prompt_name(1, 2));
    for (auto& v : block.value_mut().values()) v += 0.5f;
    const auto after = model->encode_frames(video).value();
    const std::size_t F = m.frames, d = m.embed_dim;
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t f = 0; f < F; ++f) {
            bool same = true;
            for (std::size_t c = 0; c < d; ++c) same = same && before[(b * F + f) * d + c] == after[(b * F + f) * d + c];
            CAPTURE(f);
            CHECK(same == (f != 1));
        }
    }
}

TEST_CASE("per-frame encoders are equivariant to frame order, joint ones are not") {
    const ModelSpec m = ModelSpec::toy();
    std::mt19937_64 rng(9);
    auto video = fixtures::random_video<float>(m, 1, rng);
    auto swapped = video;
    const std::size_t frame = 3 * m.image_side * m.image_side;
    for (std::size_t i = 0; i < frame; ++i) std::swap(swapped.frames[i], swapped.frames[frame + i]);
    const std::size_t d = m.embed_dim;

    auto vop = make<float>(m, PromptSpec::defaults(PromptMode::vop, m));
    auto a = vop->encode_frames(video).value(), b = vop->encode_frames(swapped).value();
    for (std::size_t c = 0; c < d; ++c) {
        CHECK(a[c] == b[d + c]);
        CHECK(a[d + c] == b[c]);
    }

    auto p = PromptSpec::defaults(PromptMode::function, m);
    p.split_depth = 1;
    auto fn = make<float>(m, p);
    // Frame positions break the symmetry once they are non-zero.
    auto pos = fn->params().get(kFramePositionalEmbedding);
    std::normal_distribution<float> nd(0.f, 0.5f);
    for (auto& v : pos.value_mut().values()) v = nd(rng);
    auto c0 = fn->encode_frames(video).value(), c1 = fn->encode_frames(swapped).value();
    double diff = 0;
    for (std::size_t c = 0; c < d; ++c) diff = std::max(diff, double(std::abs(c0[c] - c1[d + c])));
    CHECK(diff > 1e-6);
}

TEST_CASE("text after the end token does not change the text embedding") {
    const ModelSpec m = ModelSpec::toy();
    std::mt19937_64 rng(10);
    auto model = make<float>(m, PromptSpec::defaults(PromptMode::vop, m));
    auto text = fixtures::random_text(m, 1, 6, rng);
    text.eos_index = {3};
    auto a = model->encode_text(text).value();
    text.token_ids[5] = (text.token_ids[5] + 1) % static_cast<int>(m.vocab);
    CHECK(model->encode_text(text).value() == a);
    text.token_ids[2] = (text.token_ids[2] + 1) % static_cast<int>(m.vocab);
    CHECK_FALSE(model->encode_text(text).value() == a);
}

TEST_CASE("batch validation reports bad inputs") {
    const ModelSpec m = ModelSpec::toy();
    auto model = make<float>(m, PromptSpec::defaults(PromptMode::vop, m));
    VideoBatch<float> bad{Tensor<float>({1, m.frames + 1, 3, m.image_side, m.image_side})};
    CHECK_THROWS_AS(model->encode_frames(bad), ShapeError);
    TextBatch t{1, 3, {1, 2, 3}, {5}};
    CHECK_THROWS_AS(model->encode_text(t), std::invalid_argument);
}

TEST_CASE("contrastive loss and logits") {
    Tensor<double> eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye[i * 4] = 10.0;
    auto loss = symmetric_contrastive_loss(constant(eye)).value().item();
    const double expected = -std::log(std::exp(10.0) / (std::exp(10.0) + 2.0));
    CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
    Tensor<double> flat({4, 4}, 1.0);
    CHECK(symmetric_contrastive_loss(constant(flat)).value().item() == doctest::Approx(std::log(4.0)));
    CHECK_THROWS_AS(symmetric_contrastive_loss(constant(Tensor<double>({2, 3}))), ShapeError);

    Tensor<double> t({2, 2}, std::vector<double>{1, 0, 0, 1});
    auto big = constant(Tensor<double>::scalar(std::log(1000.0)));
    auto logits = retrieval_logits(constant(t), constant(t), big).value();
    CHECK(logits[0] == doctest::Approx(100.0));
    CHECK(logits[1] == doctest::Approx(0.0));
}

TEST_CASE("pipeline gradients in every mode, light sample") {
    for (auto mode : kModes) {
        CAPTURE(to_string(mode));
        auto r = fixtures::check_pipeline(mode, 24, 2);
        CHECK(r.double_precision.entries.size() == 24);
        CHECK(r.double_precision.passed(1e-5));
        CHECK(r.single_precision.passed(1e-2));
    }
}

TEST_CASE("default split keeps joint layers at every depth above one") {
    CHECK(PromptSpec::defaults(PromptMode::function, ModelSpec::clip_vit_b32()).split_depth == 8);
    const ModelSpec toy = ModelSpec::toy();
    for (auto mode : {PromptMode::function, PromptMode::function_position, PromptMode::function_context}) {
        const auto p = PromptSpec::defaults(mode, toy);
        CHECK(p.split_depth == 3);
        CHECK(p.per_frame_depth(toy.layers) < toy.layers);
    }
}
