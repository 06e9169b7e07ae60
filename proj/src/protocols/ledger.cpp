#include "voplab/protocols/ledger.hpp"

#include <cstdio>
#include <stdexcept>

namespace voplab {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

bool is_prompt_side(const std::string& name) {
    return contains(name, ".prompt.") || starts_with(name, "context.") || name == kFramePositionalEmbedding;
}

bool is_adapter(const std::string& name) { return contains(name, ".adapter_"); }

bool trainable_under(const std::string& name, const Protocol& protocol, std::size_t layers) {
    switch (protocol.kind) {
        case ProtocolKind::full: return true;
        case ProtocolKind::bias:
            return ends_with(name, ".bias") && !is_adapter(name) && !is_prompt_side(name);
        case ProtocolKind::proj: return name == "text.projection" || name == "vision.projection";
        case ProtocolKind::partial:
            return name == "text.projection" || name == "vision.projection" ||
                   starts_with(name, vision_layer_prefix(layers) + ".");
        case ProtocolKind::adapter_attn:
        case ProtocolKind::adapter_ffn: return is_adapter(name);
        default: return is_prompt_side(name);
    }
}

}  // namespace

TrainabilityMask apply_protocol(const std::vector<std::string>& names, const Protocol& protocol,
                                std::size_t layers) {
    protocol.validate();
    TrainabilityMask mask;
    for (const auto& n : names) {
        if (!mask.emplace(n, trainable_under(n, protocol, layers)).second) {
            throw std::invalid_argument("parameter '" + n + "' listed twice");
        }
    }
    return mask;
}

TrainabilityMask apply_protocol(std::vector<ParamDecl>& layout, const Protocol& protocol,
                                std::size_t layers) {
    std::vector<std::string> names;
    for (const auto& d : layout) names.push_back(d.name);
    TrainabilityMask mask = apply_protocol(names, protocol, layers);
    for (auto& d : layout) d.trainable = mask.at(d.name);
    return mask;
}

template <typename T>
TrainabilityMask apply_protocol(ParamRegistry<T>& registry, const Protocol& protocol,
                                std::size_t layers) {
    std::vector<std::string> names;
    for (const auto& g : registry.groups()) names.push_back(g.name);
    TrainabilityMask mask = apply_protocol(names, protocol, layers);
    for (const auto& [n, t] : mask) registry.set_trainable(n, t);
    return mask;
}

ParameterLedger count_parameters(const std::vector<std::pair<std::string, std::size_t>>& groups,
                                 const TrainabilityMask& mask, double denominator) {
    if (!(denominator > 0)) throw std::invalid_argument("ledger denominator must be positive");
    ParameterLedger ledger;
    ledger.denominator = denominator;
    for (const auto& [name, count] : groups) {
        auto it = mask.find(name);
        if (it == mask.end()) {
            throw std::invalid_argument("parameter group '" + name + "' missing from trainability mask");
        }
        ledger.groups.push_back({name, count, it->second});
        ledger.model_total += count;
        if (it->second) ledger.trainable_total += count;
    }
    ledger.percent = 100.0 * double(ledger.trainable_total) / denominator;
    return ledger;
}

template <typename T>
ParameterLedger count_parameters(const ParamRegistry<T>& registry, const TrainabilityMask& mask,
                                 double denominator) {
    std::vector<std::pair<std::string, std::size_t>> groups;
    for (const auto& g : registry.groups()) groups.emplace_back(g.name, g.tensor.numel());
    return count_parameters(groups, mask, denominator);
}

ParameterLedger ledger_for(const ModelSpec& model, const PromptSpec& prompts, const Protocol& protocol,
                           double denominator) {
    auto layout = parameter_layout(model, prompts, protocol);
    TrainabilityMask mask = apply_protocol(layout, protocol, model.layers);
    std::vector<std::pair<std::string, std::size_t>> groups;
    for (const auto& d : layout) groups.emplace_back(d.name, d.numel());
    return count_parameters(groups, mask, denominator);
}

double reference_percent(ProtocolKind kind) {
    switch (kind) {
        case ProtocolKind::full: return 100.0;
        case ProtocolKind::bias: return 0.104;
        case ProtocolKind::proj: return 0.547;
        case ProtocolKind::partial: return 6.410;
        case ProtocolKind::adapter_attn:
        case ProtocolKind::adapter_ffn: return 1.655;
        case ProtocolKind::vop: return 0.103;
        case ProtocolKind::vop_p: return 0.441;
        case ProtocolKind::vop_c: return 11.898;
        case ProtocolKind::vop_f: return 0.103;
        case ProtocolKind::vop_fp: return 0.328;
        case ProtocolKind::vop_fc: return 11.785;
    }
    return 0.0;
}

std::string format_percent(double percent) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", percent);
    return buf;
}

template TrainabilityMask apply_protocol<float>(ParamRegistry<float>&, const Protocol&, std::size_t);
template TrainabilityMask apply_protocol<double>(ParamRegistry<double>&, const Protocol&, std::size_t);
template ParameterLedger count_parameters<float>(const ParamRegistry<float>&, const TrainabilityMask&, double);
template ParameterLedger count_parameters<double>(const ParamRegistry<double>&, const TrainabilityMask&, double);

}  // namespace voplab
