#include "voplab/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "voplab/corpus/tensor_file.hpp"
#include "voplab/io/spec_json.hpp"
#include "voplab/train/loss.hpp"

namespace voplab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[4] = {'V', 'P', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string rng_state(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

Tensor<float> stack_rows(const std::vector<Tensor<float>>& parts, std::size_t width) {
    std::size_t n = 0;
    for (const auto& p : parts) n += p.dim(0);
    Tensor<float> out({n, width});
    std::size_t at = 0;
    for (const auto& p : parts) {
        std::copy(p.values().begin(), p.values().end(), out.data() + at);
        at += p.numel();
    }
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
    if (batch_size < 2) fail("batch_size must be >= 2");
    if (!(lr >= 0) || !std::isfinite(lr)) fail("lr must be finite and >= 0");
    if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must lie in [0, 1)");
    if (!(eps > 0)) fail("eps must be > 0");
    if (eval_batch == 0) fail("eval_batch must be >= 1");
    for (double v : lr_grid) {
        if (!(v >= 1e-6 && v <= 1e-2)) fail("lr_grid values must lie in [1e-6, 1e-2]");
    }
}

json to_json(const RetrievalReport& r) {
    json recall = json::object();
    for (const auto& [k, v] : r.recall_at) recall["R@" + std::to_string(k)] = v;
    return json{{"direction", std::string(to_string(r.direction))},
                {"recall", recall},
                {"mean_rank", r.mean_rank},
                {"median_rank", r.median_rank},
                {"queries", r.queries}};
}

SplitReport evaluate_split(const VopModel<float>& model, const CorpusSplit& split, std::size_t chunk) {
    if (split.size() == 0) throw std::invalid_argument("evaluate_split: split '" + split.name + "' is empty");
    NoGradGuard no_grad;
    std::vector<Tensor<float>> texts, videos;
    for (std::size_t lo = 0; lo < split.size(); lo += chunk) {
        std::vector<std::size_t> rows;
        for (std::size_t i = lo; i < std::min(split.size(), lo + chunk); ++i) rows.push_back(i);
        texts.push_back(model.encode_text(split.text_rows(rows)).value());
        videos.push_back(model.encode_video(split.video_rows<float>(rows)).value());
    }
    const std::size_t d = model.spec().embed_dim;
    const auto sim = cosine_similarity(Var<float>(stack_rows(texts, d)), Var<float>(stack_rows(videos, d)));
    const auto matrix = SimilarityMatrix::from(sim.value());
    return {evaluate(matrix, Direction::t2v), evaluate(matrix, Direction::v2t)};
}

Trainer::Trainer(VopModel<float>& model, const Corpus& corpus, TrainConfig config)
    : model_(model),
      corpus_(corpus),
      config_(std::move(config)),
      optimizer_(AdamWConfig{config_.beta1, config_.beta2, config_.eps, config_.weight_decay}),
      rng_(derive_seed(config_.seed, "shuffle")) {
    config_.validate();
    corpus_.config.check_model(model_.spec());
    if (corpus_.split("train").size() < 2) throw std::invalid_argument("trainer: train split needs >= 2 pairs");
    state_.rng = rng_state(rng_);
}

std::size_t Trainer::steps_per_epoch() const {
    const std::size_t n = corpus_.split("train").size();
    return (n + config_.batch_size - 1) / config_.batch_size;
}

void Trainer::rng_from_state() {
    std::istringstream is(state_.rng);
    is >> rng_;
    if (!is) throw std::invalid_argument("trainer: unreadable rng state");
}

std::vector<std::size_t> Trainer::batch_rows() {
    const std::size_t n = corpus_.split("train").size();
    if (state_.order.empty()) {
        state_.order.resize(n);
        std::iota(state_.order.begin(), state_.order.end(), std::size_t{0});
        std::shuffle(state_.order.begin(), state_.order.end(), rng_);
        state_.rng = rng_state(rng_);
    }
    const std::size_t pos = state_.step % steps_per_epoch();
    const std::size_t lo = pos * config_.batch_size, hi = std::min(n, lo + config_.batch_size);
    return {state_.order.begin() + static_cast<std::ptrdiff_t>(lo), state_.order.begin() + static_cast<std::ptrdiff_t>(hi)};
}

double Trainer::step() {
    if (state_.step >= total_steps()) throw std::logic_error("trainer: schedule already complete");
    const std::size_t spe = steps_per_epoch();
    const std::size_t pos = state_.step % spe, epoch = state_.step / spe;
    const auto rows = batch_rows();
    const auto& train = corpus_.split("train");
    const double lr = cosine_lr(state_.step, total_steps(), config_.lr);

    auto& params = model_.params();
    params.zero_grad();
    auto text = model_.encode_text(train.text_rows(rows));
    auto video = model_.encode_video(train.video_rows<float>(rows));
    auto loss = symmetric_contrastive_loss(retrieval_logits(text, video, model_.logit_scale()));
    const double value = loss.value().item();
    if (!std::isfinite(value)) throw NonFiniteLoss(state_.step, pos);
    backward(loss);
    optimizer_.step(params, lr);

    emit(json{{"kind", "step"}, {"step", state_.step}, {"epoch", epoch}, {"batch", pos}, {"loss", value}, {"lr", lr}});
    ++state_.step;
    if (pos + 1 == spe) state_.order.clear();
    return value;
}

std::optional<SplitReport> Trainer::run(std::optional<std::size_t> stop_step) {
    const std::size_t stop = std::min(stop_step.value_or(total_steps()), total_steps());
    const std::size_t spe = steps_per_epoch();
    if (state_.step == 0) {
        const auto& p = model_.params();
        emit(json{{"kind", "run"},
                  {"protocol", std::string(to_string(model_.protocol().kind))},
                  {"prompt_mode", std::string(to_string(model_.prompts().mode))},
                  {"trainable_params", p.count(true)},
                  {"total_params", p.count(false)},
                  {"dataset", hex64(corpus_.fingerprint())},
                  {"train_pairs", corpus_.split("train").size()},
                  {"steps_per_epoch", spe},
                  {"total_steps", total_steps()},
                  {"train", to_json(config_)}});
    }
    std::optional<SplitReport> last;
    const auto& val = corpus_.split("val");
    while (state_.step < stop) {
        step();
        if (state_.step % spe == 0 && val.size() > 0) {
            last = evaluate_split(model_, val, config_.eval_batch);
            emit(json{{"kind", "epoch"},
                      {"epoch", state_.step / spe - 1},
                      {"step", state_.step},
                      {"val", {{"t2v", to_json(last->t2v)}, {"v2t", to_json(last->v2t)}}}});
        }
    }
    return last;
}

void save_checkpoint(const fs::path& path, const Trainer& trainer) {
    const auto& model = trainer.model();
    json groups = json::array(), moments = json::array();
    std::string payload;
    for (const auto& g : model.params().groups()) {
        groups.push_back({{"name", g.name}, {"shape", g.tensor.shape()}, {"trainable", g.trainable}});
        for (float v : g.tensor.value().values()) put_f32(payload, v);
    }
    for (const auto& [name, m] : trainer.optimizer().moments()) {
        moments.push_back({{"name", name}, {"shape", m.m.shape()}, {"steps", m.steps}});
        for (float v : m.m.values()) put_f32(payload, v);
        for (float v : m.v.values()) put_f32(payload, v);
    }
    const auto& s = trainer.state();
    json manifest = {{"format", "voplab-checkpoint"},
                     {"model", to_json(model.spec())},
                     {"prompts", to_json(model.prompts())},
                     {"protocol", to_json(model.protocol())},
                     {"train", to_json(trainer.config())},
                     {"model_seed", model.seed()},
                     {"state", {{"step", s.step}, {"rng", s.rng}, {"order", s.order}}},
                     {"groups", groups},
                     {"moments", moments}};
    const std::string text = manifest.dump();
    std::string out(kCheckpointMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u64(out, text.size());
    out += text;
    out += payload;
    write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const fs::path& path) {
    const std::string bytes = read_file_bytes(path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::string where = "checkpoint '" + path.string() + "'";
    if (bytes.size() < 16 || std::memcmp(p, kCheckpointMagic, 4) != 0) throw FormatError(where + ": bad magic");
    if (get_u32(p + 4) != kCheckpointVersion) throw FormatError(where + ": unsupported version");
    const std::uint64_t len = get_u64(p + 8);
    if (bytes.size() < 16 + len) throw FormatError(where + ": truncated manifest");
    Checkpoint c;
    try {
        c.manifest = json::parse(bytes.substr(16, len));
        c.model = model_spec_from_json(c.manifest.at("model"), ModelSpec{});
        c.prompts = prompt_spec_from_json(c.manifest.at("prompts"), PromptSpec{});
        c.protocol = protocol_from_json(c.manifest.at("protocol"));
        c.train = train_config_from_json(c.manifest.at("train"));
        c.model_seed = c.manifest.at("model_seed").get<std::uint64_t>();
        const auto& s = c.manifest.at("state");
        c.state.step = s.at("step").get<std::size_t>();
        c.state.rng = s.at("rng").get<std::string>();
        c.state.order = s.at("order").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw FormatError(where + ": " + e.what());
    }
    std::size_t at = 16 + len;
    auto take = [&](const Shape& shape) {
        Tensor<float> t(shape);
        if (bytes.size() < at + 4 * t.numel()) throw FormatError(where + ": truncated payload");
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = get_f32(p + at + 4 * i);
        at += 4 * t.numel();
        return t;
    };
    for (const auto& g : c.manifest.at("groups")) {
        c.params[g.at("name").get<std::string>()] = take(g.at("shape").get<Shape>());
    }
    for (const auto& m : c.manifest.at("moments")) {
        const auto shape = m.at("shape").get<Shape>();
        AdamMoments<float> mom;
        mom.m = take(shape);
        mom.v = take(shape);
        mom.steps = m.at("steps").get<std::size_t>();
        c.moments[m.at("name").get<std::string>()] = std::move(mom);
    }
    if (at != bytes.size()) throw FormatError(where + ": trailing bytes");
    return c;
}

std::size_t load_parameters(VopModel<float>& model, const Checkpoint& ckpt, bool require_all) {
    std::size_t copied = 0;
    for (auto& g : model.params().groups()) {
        auto it = ckpt.params.find(g.name);
        if (it == ckpt.params.end()) {
            if (require_all) throw std::invalid_argument("checkpoint lacks parameter '" + g.name + "'");
            continue;
        }
        if (it->second.shape() != g.tensor.shape()) {
            throw std::invalid_argument("checkpoint parameter '" + g.name + "' has shape " +
                                        shape_str(it->second.shape()) + ", model expects " +
                                        shape_str(g.tensor.shape()));
        }
        g.tensor.value_mut() = it->second;
        ++copied;
    }
    return copied;
}

void restore_trainer(Trainer& trainer, const Checkpoint& ckpt) {
    auto& model = trainer.model();
    if (to_json(model.spec()) != to_json(ckpt.model) || to_json(model.prompts()) != to_json(ckpt.prompts) ||
        to_json(model.protocol()) != to_json(ckpt.protocol)) {
        throw std::invalid_argument("checkpoint was written for a different model, prompt spec or protocol");
    }
    if (to_json(trainer.config()) != to_json(ckpt.train)) {
        throw std::invalid_argument("checkpoint was written with a different train config");
    }
    load_parameters(model, ckpt, true);
    trainer.optimizer().moments() = ckpt.moments;
    trainer.restore(ckpt.state);
}

}  // namespace voplab
