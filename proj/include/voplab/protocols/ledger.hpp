#pragma once

// Trainability policies and exact parameter accounting.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voplab/model/layout.hpp"
#include "voplab/protocols/protocol.hpp"
#include "voplab/tensor/params.hpp"

namespace voplab {

// Backbone size used as the default percentage denominator.
inline constexpr double kReferenceBackboneParams = 119.8e6;

using TrainabilityMask = std::map<std::string, bool>;

// Classifies every name exactly once.
//   full         everything
//   bias         every backbone ".bias" leaf, LayerNorm shifts included
//   proj         text.projection and vision.projection
//   partial      last vision block plus both projections
//   adapter_*    the injected adapter tensors
//   vop*         prompt blocks, the context generator and frame positions
TrainabilityMask apply_protocol(const std::vector<std::string>& names, const Protocol& protocol,
                                std::size_t layers);

// Sets flags on a layout / registry in place; returns the mask used.
TrainabilityMask apply_protocol(std::vector<ParamDecl>& layout, const Protocol& protocol,
                                std::size_t layers);
template <typename T>
TrainabilityMask apply_protocol(ParamRegistry<T>& registry, const Protocol& protocol,
                                std::size_t layers);

struct LedgerGroup {
    std::string name;
    std::size_t count = 0;
    bool trainable = false;
};

struct ParameterLedger {
    std::vector<LedgerGroup> groups;
    std::size_t trainable_total = 0;
    std::size_t model_total = 0;
    double denominator = kReferenceBackboneParams;
    double percent = 0.0;  // trainable_total / denominator * 100

    double percent_of_model() const {
        return model_total == 0 ? 0.0 : 100.0 * double(trainable_total) / double(model_total);
    }
};

// Throws std::invalid_argument if a group is missing from the mask.
ParameterLedger count_parameters(const std::vector<std::pair<std::string, std::size_t>>& groups,
                                 const TrainabilityMask& mask,
                                 double denominator = kReferenceBackboneParams);

template <typename T>
ParameterLedger count_parameters(const ParamRegistry<T>& registry, const TrainabilityMask& mask,
                                 double denominator = kReferenceBackboneParams);

// Layout-only accounting; nothing is allocated.
ParameterLedger ledger_for(const ModelSpec& model, const PromptSpec& prompts, const Protocol& protocol,
                           double denominator = kReferenceBackboneParams);

// Percentage printed for each method in the reference results table.
double reference_percent(ProtocolKind kind);

// "12.345" style formatting used in reports.
std::string format_percent(double percent);

}  // namespace voplab
