#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "voplab/tensor/tensor.hpp"

namespace voplab {

enum class Direction { t2v, v2t };

std::string_view to_string(Direction d);

// Scores of texts (rows) against videos (columns).
struct SimilarityMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> scores;  // row-major

    double at(std::size_t r, std::size_t c) const { return scores[r * cols + c]; }
    SimilarityMatrix transposed() const;
    // Throws std::invalid_argument on a size mismatch or a non-finite score.
    void validate() const;

    template <typename T>
    static SimilarityMatrix from(const Tensor<T>& t);
};

// 1 + number of non-matching candidates scoring strictly above the match, so
// ties go to the match. Query i matches candidate i unless `match` maps each
// query to its candidate; a non-square matrix requires the map.
std::vector<std::size_t> ranks(const SimilarityMatrix& sim, Direction direction,
                               const std::optional<std::vector<std::size_t>>& match = std::nullopt);

struct RetrievalReport {
    Direction direction = Direction::t2v;
    std::map<std::size_t, double> recall_at;  // K -> percent
    double mean_rank = 0;
    double median_rank = 0;  // lower median for even counts
    std::size_t queries = 0;
};

// Throws std::invalid_argument on an empty rank list.
RetrievalReport metrics(const std::vector<std::size_t>& ranks, Direction direction,
                        const std::vector<std::size_t>& ks = {1, 5, 10});

inline RetrievalReport evaluate(const SimilarityMatrix& sim, Direction direction,
                                const std::vector<std::size_t>& ks = {1, 5, 10}) {
    return metrics(ranks(sim, direction), direction, ks);
}

}  // namespace voplab
