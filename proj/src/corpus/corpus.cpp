#include "voplab/corpus/corpus.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <thread>

#include "voplab/corpus/config_json.hpp"
#include "voplab/corpus/tensor_file.hpp"
#include "voplab/io/json_fields.hpp"
#include "voplab/model/layout.hpp"

namespace voplab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;
const char* const kSplitNames[] = {"train", "val", "test"};

void fill_pattern(float* out, std::size_t side, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> freq(0, 2);
    std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
    std::normal_distribution<double> amp(0.0, 1.0);
    const std::size_t plane = side * side;
    for (std::size_t ch = 0; ch < 3; ++ch) {
        for (int wave = 0; wave < 2; ++wave) {
            int kx = freq(rng), ky = freq(rng);
            if (kx == 0 && ky == 0) kx = 1;
            const double ph = phase(rng), a = amp(rng);
            for (std::size_t y = 0; y < side; ++y) {
                for (std::size_t x = 0; x < side; ++x) {
                    const double t = 2 * std::numbers::pi * double(kx * x + ky * y) / double(side);
                    out[ch * plane + y * side + x] += static_cast<float>(a * std::cos(t + ph));
                }
            }
        }
    }
    double ss = 0;
    for (std::size_t i = 0; i < 3 * plane; ++i) ss += double(out[i]) * out[i];
    const double rms = std::sqrt(ss / double(3 * plane));
    for (std::size_t i = 0; i < 3 * plane; ++i) out[i] = static_cast<float>(out[i] / rms);
}

std::vector<std::array<float, 2>> make_trajectory(const CorpusConfig& c) {
    std::vector<std::array<float, 2>> t(c.frames);
    for (std::size_t f = 0; f < c.frames; ++f) {
        const float secondary = c.temporal == TemporalStructure::drifting
                                    ? static_cast<float>(f + 1) / static_cast<float>(c.frames)
                                    : 0.5f;
        t[f] = {1.0f, secondary};
    }
    return t;
}

struct PairData {
    std::vector<int> tokens;
    std::vector<float> pixels;
};

// Streams are keyed by the pair's position in the world's deal, so corpora
// dealing from disjoint offsets never share noise either.
PairData make_pair(const CorpusConfig& c, std::size_t sample, const std::array<int, 2>& concepts,
                   const Tensor<float>& patterns, const std::vector<std::array<float, 2>>& trajectory) {
    const std::size_t pair = c.pair_offset + sample / c.draws, draw = sample % c.draws;
    std::mt19937_64 rng(derive_seed(c.seed, "pair." + std::to_string(pair) + "." + std::to_string(draw)));
    const TokenLayout layout{c.n_concepts, c.vocab};
    PairData d;
    d.tokens.assign(c.text_len, 0);
    std::uniform_int_distribution<int> distractor(layout.first_distractor(), layout.eos() - 1);
    for (std::size_t i = 0; i + 1 < c.text_len; ++i) d.tokens[i] = distractor(rng);
    std::vector<std::size_t> slots(c.text_len - 1);
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
    std::shuffle(slots.begin(), slots.end(), rng);
    d.tokens[slots[0]] = layout.primary(concepts[0]);
    d.tokens[slots[1]] = layout.secondary(concepts[1]);
    d.tokens[c.text_len - 1] = layout.eos();

    const std::size_t frame_size = 3 * c.image_side * c.image_side;
    d.pixels.assign(c.frames * frame_size, 0.0f);
    std::normal_distribution<double> noise(0.0, 1.0);
    const float* pa = patterns.data() + concepts[0] * frame_size;
    const float* pb = patterns.data() + concepts[1] * frame_size;
    for (std::size_t f = 0; f < c.frames; ++f) {
        float* out = d.pixels.data() + f * frame_size;
        const auto [wa, wb] = trajectory[f];
        for (std::size_t i = 0; i < frame_size; ++i) {
            out[i] = static_cast<float>(double(wa) * pa[i] + double(wb) * pb[i] + c.noise_std * noise(rng));
        }
    }
    return d;
}

std::string file_name(const std::string& split, const char* field) { return split + "." + field + ".vpt"; }

}  // namespace

std::string_view to_string(TemporalStructure s) {
    return s == TemporalStructure::drifting ? "drifting" : "static";
}

TemporalStructure parse_temporal_structure(std::string_view name) {
    if (name == "drifting") return TemporalStructure::drifting;
    if (name == "static") return TemporalStructure::static_mix;
    throw std::invalid_argument("unknown temporal structure '" + std::string(name) + "' (static|drifting)");
}

void CorpusConfig::validate() const {
    std::string err;
    auto check = [&](bool ok, const std::string& what) {
        if (err.empty() && !ok) err = what;
    };
    check(n_pairs >= 2, "n_pairs must be >= 2 (contrastive loss needs at least two pairs)");
    check(n_val + n_test + 2 <= n_pairs, "n_pairs - n_val - n_test must be >= 2 (training split)");
    check(n_concepts >= 2, "n_concepts must be >= 2");
    check(n_concepts <= vocab, "n_concepts must be <= vocab");
    check(vocab >= 2 * n_concepts + 3, "vocab must be >= 2*n_concepts + 3 (pad, distractor, end token)");
    check(pair_offset + n_pairs <= n_concepts * (n_concepts - 1),
          "pair_offset + n_pairs exceeds the number of distinct concept pairs n_concepts*(n_concepts-1)");
    check(draws >= 1, "draws must be >= 1");
    check(std::isfinite(noise_std) && noise_std >= 0, "noise_std must be finite and >= 0");
    check(text_len >= 3, "text_len must be >= 3 (two concept tokens and an end token)");
    check(frames >= 1, "frames must be >= 1");
    check(patch >= 1 && image_side >= patch && image_side % patch == 0, "image_side must be a positive multiple of patch");
    if (!err.empty()) throw std::invalid_argument("corpus config: " + err);
}

void CorpusConfig::check_model(const ModelSpec& m) const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("corpus/model mismatch: " + what); };
    if (frames != m.frames) fail("frames " + std::to_string(frames) + " vs model " + std::to_string(m.frames));
    if (image_side != m.image_side) fail("image_side differs from the model");
    if (patch != m.patch) fail("patch differs from the model");
    if (vocab > m.vocab) fail("corpus vocab exceeds model vocab");
    if (text_len > m.max_text_len) fail("text_len exceeds model max_text_len");
}

CorpusConfig CorpusConfig::for_model(const ModelSpec& m) {
    CorpusConfig c;
    c.text_len = m.max_text_len;
    c.frames = m.frames;
    c.image_side = m.image_side;
    c.patch = m.patch;
    c.vocab = m.vocab;
    return c;
}

TextBatch CorpusSplit::text_rows(const std::vector<std::size_t>& rows) const {
    TextBatch b;
    b.batch = rows.size();
    b.length = text.length;
    b.token_ids.reserve(rows.size() * text.length);
    for (auto r : rows) {
        auto first = text.token_ids.begin() + static_cast<std::ptrdiff_t>(r * text.length);
        b.token_ids.insert(b.token_ids.end(), first, first + static_cast<std::ptrdiff_t>(text.length));
        b.eos_index.push_back(text.eos_index.at(r));
    }
    return b;
}

template <typename T>
VideoBatch<T> CorpusSplit::video_rows(const std::vector<std::size_t>& rows) const {
    Shape shape = frames.shape();
    shape[0] = rows.size();
    const std::size_t per = frames.numel() / frames.dim(0);
    Tensor<T> out(shape);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const float* src = frames.data() + rows[i] * per;
        std::copy(src, src + per, out.data() + i * per);
    }
    return {std::move(out)};
}

template <typename T>
VideoBatch<T> CorpusSplit::video_all() const {
    std::vector<std::size_t> rows(size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return video_rows<T>(rows);
}

template VideoBatch<float> CorpusSplit::video_rows<float>(const std::vector<std::size_t>&) const;
template VideoBatch<double> CorpusSplit::video_rows<double>(const std::vector<std::size_t>&) const;
template VideoBatch<float> CorpusSplit::video_all<float>() const;
template VideoBatch<double> CorpusSplit::video_all<double>() const;

const CorpusSplit& Corpus::split(const std::string& name) const {
    for (const auto& s : splits) {
        if (s.name == name) return s;
    }
    throw std::out_of_range("corpus has no split '" + name + "'");
}

std::uint64_t Corpus::fingerprint() const {
    std::string bytes;
    auto add = [&](const Tensor<float>& t) {
        for (auto d : t.shape()) put_u64(bytes, d);
        for (float v : t.values()) put_f32(bytes, v);
    };
    add(patterns);
    for (const auto& s : splits) {
        for (auto id : s.ids) put_u32(bytes, id);
        for (int tok : s.text.token_ids) put_u32(bytes, static_cast<std::uint32_t>(tok));
        add(s.frames);
    }
    return fnv1a64({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
}

Corpus generate_corpus(const CorpusConfig& config, unsigned threads) {
    config.validate();
    Corpus corpus;
    corpus.config = config;
    const std::size_t side = config.image_side, frame_size = 3 * side * side;
    const std::uint64_t world = config.resolved_world_seed();

    corpus.patterns = Tensor<float>({config.n_concepts, 3, side, side});
    for (std::size_t c = 0; c < config.n_concepts; ++c) {
        std::mt19937_64 rng(derive_seed(world, "pattern." + std::to_string(c)));
        fill_pattern(corpus.patterns.data() + c * frame_size, side, rng);
    }
    corpus.trajectory = make_trajectory(config);

    // Distinct ordered concept pairs, so the planted matching is unambiguous.
    std::vector<std::array<int, 2>> all;
    for (std::size_t a = 0; a < config.n_concepts; ++a) {
        for (std::size_t b = 0; b < config.n_concepts; ++b) {
            if (a != b) all.push_back({int(a), int(b)});
        }
    }
    std::mt19937_64 assign(derive_seed(world, "assign"));
    std::shuffle(all.begin(), all.end(), assign);
    all.erase(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(config.pair_offset));
    all.resize(config.n_pairs);

    const std::size_t n_samples = config.n_pairs * config.draws;
    std::vector<PairData> samples(n_samples);
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n_samples)));
    auto shard = [&](unsigned w) {
        const std::size_t lo = n_samples * w / workers, hi = n_samples * (w + 1) / workers;
        for (std::size_t id = lo; id < hi; ++id) {
            samples[id] = make_pair(config, id, all[id / config.draws], corpus.patterns,
                                    corpus.trajectory);
        }
    };
    if (workers == 1) {
        shard(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(shard, w);
        for (auto& t : pool) t.join();
    }

    std::vector<std::uint32_t> order(config.n_pairs);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
    std::mt19937_64 split_rng(derive_seed(config.seed, "split"));
    std::shuffle(order.begin(), order.end(), split_rng);
    const std::size_t sizes[] = {config.n_train(), config.n_val, config.n_test};

    std::size_t cursor = 0;
    for (int s = 0; s < 3; ++s) {
        CorpusSplit split;
        split.name = kSplitNames[s];
        std::vector<std::uint32_t> pairs(order.begin() + cursor, order.begin() + cursor + sizes[s]);
        std::sort(pairs.begin(), pairs.end());
        cursor += sizes[s];
        for (auto p : pairs) {
            for (std::size_t d = 0; d < config.draws; ++d) split.ids.push_back(static_cast<std::uint32_t>(p * config.draws + d));
        }
        const std::size_t n = split.ids.size();
        split.text.batch = n;
        split.text.length = config.text_len;
        split.frames = Tensor<float>({n, config.frames, 3, side, side});
        for (std::size_t i = 0; i < n; ++i) {
            const auto& p = samples[split.ids[i]];
            split.text.token_ids.insert(split.text.token_ids.end(), p.tokens.begin(), p.tokens.end());
            split.text.eos_index.push_back(config.text_len - 1);
            std::copy(p.pixels.begin(), p.pixels.end(), split.frames.data() + i * p.pixels.size());
            split.concepts.push_back(all[split.ids[i] / config.draws]);
        }
        corpus.splits.push_back(std::move(split));
    }
    return corpus;
}

nlohmann::json to_json(const CorpusConfig& c) {
    return json{{"n_pairs", c.n_pairs},       {"n_val", c.n_val},
                {"n_test", c.n_test},         {"n_concepts", c.n_concepts},
                {"noise_std", c.noise_std},   {"text_len", c.text_len},
                {"frames", c.frames},         {"image_side", c.image_side},
                {"patch", c.patch},           {"vocab", c.vocab},
                {"seed", c.seed},             {"temporal_structure", std::string(to_string(c.temporal))},
                {"world_seed", c.world_seed ? json(*c.world_seed) : json(nullptr)},
                {"pair_offset", c.pair_offset},
                {"draws", c.draws}};
}

CorpusConfig corpus_config_from_json(const nlohmann::json& j, CorpusConfig c) {
    JsonFields f(j, "corpus");
    f.read("n_pairs", c.n_pairs);
    f.read("n_val", c.n_val);
    f.read("n_test", c.n_test);
    f.read("n_concepts", c.n_concepts);
    f.read("noise_std", c.noise_std);
    f.read("text_len", c.text_len);
    f.read("frames", c.frames);
    f.read("image_side", c.image_side);
    f.read("patch", c.patch);
    f.read("vocab", c.vocab);
    f.read("seed", c.seed);
    if (const auto* w = f.child("world_seed"); w && !w->is_null()) {
        if (!w->is_number_unsigned()) throw ConfigError("corpus.world_seed: expected a non-negative integer or null");
        c.world_seed = w->get<std::uint64_t>();
    }
    f.read("pair_offset", c.pair_offset);
    f.read("draws", c.draws);
    std::string temporal(to_string(c.temporal));
    f.read("temporal_structure", temporal);
    try {
        c.temporal = parse_temporal_structure(temporal);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("corpus.temporal_structure: ") + e.what());
    }
    f.finish();
    return c;
}

void write_corpus(const Corpus& corpus, const fs::path& dir) {
    fs::create_directories(dir);
    json files = json::object();
    auto emit = [&](const std::string& name, const Tensor<float>& t) {
        write_tensor_file(dir / name, t);
        files[name] = {{"fnv1a64", hex64(file_checksum(dir / name))}, {"shape", t.shape()}};
    };
    emit("patterns.vpt", corpus.patterns);

    json splits = json::object();
    for (const auto& s : corpus.splits) {
        const std::size_t n = s.size();
        Tensor<float> ids({n}), text({n, s.text.length}), concepts({n, 2});
        for (std::size_t i = 0; i < n; ++i) {
            ids[i] = static_cast<float>(s.ids[i]);
            concepts[2 * i] = static_cast<float>(s.concepts[i][0]);
            concepts[2 * i + 1] = static_cast<float>(s.concepts[i][1]);
        }
        for (std::size_t i = 0; i < s.text.token_ids.size(); ++i) text[i] = static_cast<float>(s.text.token_ids[i]);
        emit(file_name(s.name, "ids"), ids);
        emit(file_name(s.name, "text"), text);
        emit(file_name(s.name, "frames"), s.frames);
        emit(file_name(s.name, "concepts"), concepts);
        splits[s.name] = {{"size", n}, {"ids", s.ids}};
    }

    json trajectory = json::array();
    for (const auto& t : corpus.trajectory) trajectory.push_back({{"primary", t[0]}, {"secondary", t[1]}});
    const TokenLayout layout{corpus.config.n_concepts, corpus.config.vocab};
    json manifest = {
        {"format", "voplab-corpus"},
        {"version", kManifestVersion},
        {"config", to_json(corpus.config)},
        {"trajectory", trajectory},
        {"tokens",
         {{"pad", 0},
          {"primary_first", layout.primary(0)},
          {"secondary_first", layout.secondary(0)},
          {"distractor_first", layout.first_distractor()},
          {"eos", layout.eos()}}},
        {"splits", splits},
        {"files", files},
        {"fingerprint", hex64(corpus.fingerprint())},
    };
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Corpus load_corpus(const fs::path& dir) {
    json manifest;
    try {
        manifest = json::parse(read_file_bytes(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw FormatError("corpus manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "voplab-corpus" || manifest.value("version", 0) != kManifestVersion) {
        throw FormatError("corpus manifest: unsupported format or version");
    }
    Corpus corpus;
    corpus.config = corpus_config_from_json(manifest.at("config"));
    corpus.config.validate();
    const auto& files = manifest.at("files");
    auto load = [&](const std::string& name) {
        const auto expected = files.at(name).at("fnv1a64").get<std::string>();
        if (hex64(file_checksum(dir / name)) != expected) {
            throw FormatError("corpus file '" + name + "' fails its checksum");
        }
        return read_tensor_file(dir / name);
    };
    corpus.patterns = load("patterns.vpt");
    corpus.trajectory = make_trajectory(corpus.config);
    for (const char* name : kSplitNames) {
        CorpusSplit s;
        s.name = name;
        const auto ids = load(file_name(name, "ids"));
        const auto text = load(file_name(name, "text"));
        const auto concepts = load(file_name(name, "concepts"));
        s.frames = load(file_name(name, "frames"));
        const std::size_t n = ids.numel();
        for (std::size_t i = 0; i < n; ++i) {
            s.ids.push_back(static_cast<std::uint32_t>(ids[i]));
            s.concepts.push_back({static_cast<int>(concepts[2 * i]), static_cast<int>(concepts[2 * i + 1])});
        }
        s.text.batch = n;
        s.text.length = corpus.config.text_len;
        for (float v : text.values()) s.text.token_ids.push_back(static_cast<int>(v));
        s.text.eos_index.assign(n, corpus.config.text_len - 1);
        corpus.splits.push_back(std::move(s));
    }
    if (hex64(corpus.fingerprint()) != manifest.value("fingerprint", "")) {
        throw FormatError("corpus fingerprint mismatch");
    }
    return corpus;
}

SimilarityMatrix oracle_similarity(const Corpus& corpus, const CorpusSplit& split) {
    const auto& c = corpus.config;
    const std::size_t C = c.n_concepts, D = 3 * c.image_side * c.image_side, n = split.size(), F = c.frames;
    Eigen::MatrixXd basis(D, C);
    for (std::size_t k = 0; k < C; ++k) {
        for (std::size_t i = 0; i < D; ++i) basis(i, k) = corpus.patterns[k * D + i];
    }
    Eigen::MatrixXd frames(D, n * F);
    for (std::size_t j = 0; j < n * F; ++j) {
        for (std::size_t i = 0; i < D; ++i) frames(i, j) = split.frames[j * D + i];
    }
    const Eigen::MatrixXd coef = basis.colPivHouseholderQr().solve(frames);  // (C, n*F)

    // Token ids carry the planted concepts; recover them from the text alone.
    const TokenLayout layout{C, c.vocab};
    SimilarityMatrix sim;
    sim.rows = n;
    sim.cols = n;
    sim.scores.resize(n * n);
    for (std::size_t t = 0; t < n; ++t) {
        int a = -1, b = -1;
        for (std::size_t k = 0; k < split.text.length; ++k) {
            const int tok = split.text.token_ids[t * split.text.length + k];
            if (tok >= layout.primary(0) && tok < layout.secondary(0)) a = tok - layout.primary(0);
            if (tok >= layout.secondary(0) && tok < layout.first_distractor()) b = tok - layout.secondary(0);
        }
        for (std::size_t v = 0; v < n; ++v) {
            double err = 0;
            for (std::size_t f = 0; f < F; ++f) {
                for (std::size_t k = 0; k < C; ++k) {
                    double target = 0;
                    if (int(k) == a) target += corpus.trajectory[f][0];
                    if (int(k) == b) target += corpus.trajectory[f][1];
                    const double d = coef(k, v * F + f) - target;
                    err += d * d;
                }
            }
            sim.scores[t * n + v] = -err;
        }
    }
    return sim;
}

}  // namespace voplab
