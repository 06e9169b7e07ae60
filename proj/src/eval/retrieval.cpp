#include "voplab/eval/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace voplab {

std::string_view to_string(Direction d) { return d == Direction::t2v ? "t2v" : "v2t"; }

SimilarityMatrix SimilarityMatrix::transposed() const {
    SimilarityMatrix t{cols, rows, std::vector<double>(scores.size())};
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) t.scores[c * rows + r] = at(r, c);
    }
    return t;
}

void SimilarityMatrix::validate() const {
    if (scores.size() != rows * cols) {
        throw std::invalid_argument("similarity matrix: " + std::to_string(scores.size()) + " scores for " +
                                    std::to_string(rows) + "x" + std::to_string(cols));
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) {
            throw std::invalid_argument("similarity matrix: non-finite score at (" + std::to_string(i / cols) +
                                        ", " + std::to_string(i % cols) + ")");
        }
    }
}

template <typename T>
SimilarityMatrix SimilarityMatrix::from(const Tensor<T>& t) {
    if (t.rank() != 2) throw shape_error("similarity matrix", t.shape(), "must be 2-D");
    SimilarityMatrix s{t.dim(0), t.dim(1), {}};
    s.scores.assign(t.values().begin(), t.values().end());
    return s;
}

template SimilarityMatrix SimilarityMatrix::from<float>(const Tensor<float>&);
template SimilarityMatrix SimilarityMatrix::from<double>(const Tensor<double>&);

std::vector<std::size_t> ranks(const SimilarityMatrix& sim, Direction direction,
                               const std::optional<std::vector<std::size_t>>& match) {
    sim.validate();
    const bool t2v = direction == Direction::t2v;
    const std::size_t queries = t2v ? sim.rows : sim.cols;
    const std::size_t candidates = t2v ? sim.cols : sim.rows;
    if (!match && sim.rows != sim.cols) {
        throw std::invalid_argument("ranks: " + std::to_string(sim.rows) + "x" + std::to_string(sim.cols) +
                                    " matrix needs an explicit match map");
    }
    if (match && match->size() != queries) {
        throw std::invalid_argument("ranks: match map has " + std::to_string(match->size()) + " entries for " +
                                    std::to_string(queries) + " queries");
    }
    auto score = [&](std::size_t q, std::size_t c) { return t2v ? sim.at(q, c) : sim.at(c, q); };
    std::vector<std::size_t> out(queries);
    for (std::size_t q = 0; q < queries; ++q) {
        const std::size_t m = match ? (*match)[q] : q;
        if (m >= candidates) throw std::invalid_argument("ranks: match index out of range");
        const double target = score(q, m);
        std::size_t above = 0;
        for (std::size_t c = 0; c < candidates; ++c) {
            if (c != m && score(q, c) > target) ++above;
        }
        out[q] = above + 1;
    }
    return out;
}

RetrievalReport metrics(const std::vector<std::size_t>& ranks, Direction direction,
                        const std::vector<std::size_t>& ks) {
    if (ranks.empty()) throw std::invalid_argument("metrics: no ranks");
    RetrievalReport r;
    r.direction = direction;
    r.queries = ranks.size();
    for (std::size_t k : ks) {
        const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t x) { return x <= k; });
        r.recall_at[k] = 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
    }
    r.mean_rank = std::accumulate(ranks.begin(), ranks.end(), 0.0) / static_cast<double>(ranks.size());
    auto sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    r.median_rank = static_cast<double>(sorted[(sorted.size() - 1) / 2]);
    return r;
}

}  // namespace voplab
