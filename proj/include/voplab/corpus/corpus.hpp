#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voplab/eval/retrieval.hpp"
#include "voplab/model/spec.hpp"

namespace voplab {

enum class TemporalStructure { static_mix, drifting };

std::string_view to_string(TemporalStructure s);
TemporalStructure parse_temporal_structure(std::string_view name);

struct CorpusConfig {
    std::size_t n_pairs = 320;  // distinct concept pairs, all splits together
    std::size_t n_val = 64;     // pairs held out for validation
    std::size_t n_test = 0;
    std::size_t n_concepts = 24;
    double noise_std = 0.1;
    std::size_t text_len = 8;
    std::size_t frames = 4;
    std::size_t image_side = 12;
    std::size_t patch = 4;
    std::size_t vocab = 64;
    std::uint64_t seed = 0;
    TemporalStructure temporal = TemporalStructure::drifting;
    // Concept patterns and the order in which concept pairs are dealt come
    // from the world seed; corpora sharing it and dealing from disjoint
    // offsets share the visual vocabulary but no pair.
    std::optional<std::uint64_t> world_seed;  // defaults to seed
    std::size_t pair_offset = 0;
    std::size_t draws = 1;  // noisy samples per pair, kept in the same split

    std::uint64_t resolved_world_seed() const { return world_seed.value_or(seed); }
    std::size_t n_train() const { return n_pairs - n_val - n_test; }
    // Throws std::invalid_argument naming the violated constraint.
    void validate() const;
    // Throws std::invalid_argument when the model cannot consume this corpus.
    void check_model(const ModelSpec& model) const;
    // Corpus geometry taken from a model spec.
    static CorpusConfig for_model(const ModelSpec& model);
};

// Token layout: 0 pad, 1..C primary concept, C+1..2C secondary concept,
// 2C+1..vocab-2 distractors, vocab-1 end of text.
struct TokenLayout {
    std::size_t concepts;
    std::size_t vocab;
    int primary(std::size_t c) const { return static_cast<int>(1 + c); }
    int secondary(std::size_t c) const { return static_cast<int>(1 + concepts + c); }
    int first_distractor() const { return static_cast<int>(1 + 2 * concepts); }
    int eos() const { return static_cast<int>(vocab - 1); }
};

struct CorpusSplit {
    std::string name;
    std::vector<std::uint32_t> ids;              // sample ids (pair * draws + draw)
    TextBatch text;                              // (n, N)
    Tensor<float> frames;                        // (n, F, 3, side, side)
    std::vector<std::array<int, 2>> concepts;    // (primary, secondary) per pair

    std::size_t size() const { return ids.size(); }
    TextBatch text_rows(const std::vector<std::size_t>& rows) const;
    template <typename T>
    VideoBatch<T> video_rows(const std::vector<std::size_t>& rows) const;
    template <typename T>
    VideoBatch<T> video_all() const;
};

struct Corpus {
    CorpusConfig config;
    Tensor<float> patterns;                        // (C, 3, side, side), unit RMS
    std::vector<std::array<float, 2>> trajectory;  // per frame (primary, secondary) intensity
    std::vector<CorpusSplit> splits;               // train, val, test (empty splits kept)

    const CorpusSplit& split(const std::string& name) const;
    // FNV-1a over every data file, in a fixed order.
    std::uint64_t fingerprint() const;
};

// Every pair's pixels and tokens come from its own stream, so the result does
// not depend on `threads`.
Corpus generate_corpus(const CorpusConfig& config, unsigned threads = 1);

// Writes manifest.json plus one tensor file per split and field.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
// Verifies every checksum; throws FormatError on mismatch.
Corpus load_corpus(const std::filesystem::path& dir);

// Planted-matching oracle: least-squares concept intensities per frame,
// scored against each text's planted trajectory (negative squared error).
SimilarityMatrix oracle_similarity(const Corpus& corpus, const CorpusSplit& split);

}  // namespace voplab
