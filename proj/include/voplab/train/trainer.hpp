#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "voplab/corpus/corpus.hpp"
#include "voplab/eval/retrieval.hpp"
#include "voplab/model/dual_encoder.hpp"
#include "voplab/train/optimizer.hpp"

namespace voplab {

struct TrainConfig {
    std::size_t epochs = 5;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double weight_decay = 0.2;
    std::uint64_t seed = 0;
    double logit_scale_init = 2.659260036932778;  // ln(1 / 0.07)
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t eval_batch = 64;
    std::vector<double> lr_grid = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2};

    // Throws std::invalid_argument naming the violated constraint.
    void validate() const;
};

class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(std::size_t step, std::size_t batch)
        : std::runtime_error("non-finite loss at step " + std::to_string(step) + " (batch " +
                             std::to_string(batch) + ")"),
          step(step),
          batch(batch) {}
    std::size_t step;
    std::size_t batch;
};

struct SplitReport {
    RetrievalReport t2v;
    RetrievalReport v2t;
};

SplitReport evaluate_split(const VopModel<float>& model, const CorpusSplit& split, std::size_t chunk = 64);
nlohmann::json to_json(const RetrievalReport& r);

// Everything besides parameters that a bitwise resume needs.
struct TrainerState {
    std::size_t step = 0;
    std::string rng;                 // std::mt19937_64 textual state
    std::vector<std::size_t> order;  // current epoch's permutation, empty at an epoch boundary
};

using LogSink = std::function<void(const nlohmann::json&)>;

// Contrastive fine-tuning of the model's trainable groups on the corpus's
// train split, one shuffled pass per epoch, cosine-decayed AdamW.
class Trainer {
public:
    Trainer(VopModel<float>& model, const Corpus& corpus, TrainConfig config);

    std::size_t steps_per_epoch() const;
    std::size_t total_steps() const { return steps_per_epoch() * config_.epochs; }
    const TrainConfig& config() const { return config_; }
    const TrainerState& state() const { return state_; }
    const AdamW<float>& optimizer() const { return optimizer_; }
    AdamW<float>& optimizer() { return optimizer_; }
    VopModel<float>& model() { return model_; }
    const VopModel<float>& model() const { return model_; }

    void set_log(LogSink sink) { log_ = std::move(sink); }

    // One optimizer step; throws NonFiniteLoss before touching parameters.
    double step();
    // Runs up to `stop_step` (default: the whole schedule), logging a run
    // header at step 0, every step, and validation after each epoch.
    std::optional<SplitReport> run(std::optional<std::size_t> stop_step = std::nullopt);

    void restore(const TrainerState& state) { state_ = state; rng_from_state(); }

private:
    void emit(const nlohmann::json& record) const {
        if (log_) log_(record);
    }
    void rng_from_state();
    std::vector<std::size_t> batch_rows();

    VopModel<float>& model_;
    const Corpus& corpus_;
    TrainConfig config_;
    AdamW<float> optimizer_;
    std::mt19937_64 rng_;
    TrainerState state_;
    LogSink log_;
};

// Container: "VPCK", uint32 version, uint64 manifest length, JSON manifest,
// then float32 little-endian payloads in manifest order (parameters, then
// first and second moments).
void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer);

struct Checkpoint {
    nlohmann::json manifest;
    ModelSpec model;
    PromptSpec prompts;
    Protocol protocol;
    TrainConfig train;
    std::uint64_t model_seed = 0;
    TrainerState state;
    std::map<std::string, Tensor<float>> params;
    std::map<std::string, AdamMoments<float>> moments;
};

// Throws FormatError on a malformed container.
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Copies every parameter present in both, by name; shapes must agree.
// Returns how many groups were copied.
std::size_t load_parameters(VopModel<float>& model, const Checkpoint& ckpt, bool require_all = true);
// Parameters, moments and counters back into a live trainer.
void restore_trainer(Trainer& trainer, const Checkpoint& ckpt);

}  // namespace voplab
