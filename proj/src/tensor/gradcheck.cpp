#include "voplab/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <map>
#include <set>
#include <stdexcept>

namespace voplab {

namespace {

struct Coord {
    std::size_t param;
    std::size_t index;
    bool operator<(const Coord& o) const {
        return param != o.param ? param < o.param : index < o.index;
    }
};

template <typename T>
std::vector<Coord> pick_coords(const std::vector<NamedVar<T>>& params, const GradCheckOptions& opt) {
    std::size_t total = 0;
    for (const auto& [_, v] : params) total += v.numel();
    std::vector<Coord> coords;
    if (opt.samples == 0 || opt.samples >= total) {
        for (std::size_t p = 0; p < params.size(); ++p) {
            for (std::size_t i = 0; i < params[p].second.numel(); ++i) coords.push_back({p, i});
        }
        return coords;
    }
    std::mt19937_64 rng(opt.seed);
    std::set<Coord> chosen;
    for (std::size_t p = 0; p < params.size() && chosen.size() < opt.samples; ++p) {
        const std::size_t n = params[p].second.numel();
        if (n == 0) continue;
        chosen.insert({p, std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)});
    }
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    while (chosen.size() < opt.samples) {
        std::size_t flat = pick(rng);
        std::size_t p = 0;
        while (flat >= params[p].second.numel()) flat -= params[p++].second.numel();
        chosen.insert({p, flat});
    }
    return {chosen.begin(), chosen.end()};
}

}  // namespace

namespace {

template <typename T>
std::vector<Tensor<T>> analytic_grads(const std::function<Var<T>()>& fn, const std::vector<NamedVar<T>>& params) {
    for (auto [_, v] : params) v.zero_grad();
    backward(fn());
    std::vector<Tensor<T>> out;
    for (auto [_, v] : params) {
        out.push_back(v.has_grad() ? v.grad() : Tensor<T>(v.shape()));
        v.zero_grad();
    }
    return out;
}

// Finite differences of `fn` over `params`, compared with `analytic`.
template <typename A, typename R>
CheckReport probe(const std::vector<Tensor<A>>& analytic, const std::function<Var<R>()>& fn,
                  const std::vector<NamedVar<R>>& params, const GradCheckOptions& options) {
    if (options.stencil != 2 && options.stencil != 4) {
        throw std::invalid_argument("grad_check: stencil must be 2 or 4");
    }
    CheckReport report;
    const R eps = static_cast<R>(options.epsilon);
    NoGradGuard no_grad;
    for (const Coord& c : pick_coords(params, options)) {
        Var<R> v = params[c.param].second;
        R& slot = v.value_mut()[c.index];
        const R saved = slot;
        auto at = [&](int k) {
            slot = saved + static_cast<R>(k) * eps;
            return static_cast<double>(fn().value().item());
        };
        double numeric = 0;
        if (options.stencil == 4) {
            numeric = (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * static_cast<double>(eps));
        } else {
            numeric = (at(1) - at(-1)) / (2.0 * static_cast<double>(eps));
        }
        slot = saved;

        GradCheckEntry e;
        e.param = params[c.param].first;
        e.index = c.index;
        e.analytic = static_cast<double>(analytic[c.param][c.index]);
        e.numeric = numeric;
        e.finite = std::isfinite(e.analytic) && std::isfinite(e.numeric);
        if (e.finite) {
            const double denom =
                std::max({std::abs(e.analytic), std::abs(e.numeric), options.abs_floor});
            e.rel_error = std::abs(e.analytic - e.numeric) / denom;
            report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
        } else {
            ++report.non_finite;
        }
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace

template <typename T>
CheckReport grad_check(const std::function<Var<T>()>& fn, const std::vector<NamedVar<T>>& params,
                       const GradCheckOptions& options) {
    return probe<T, T>(analytic_grads(fn, params), fn, params, options);
}

template <typename T, typename R>
CheckReport grad_check_against(const std::function<Var<T>()>& fn, const std::vector<NamedVar<T>>& params,
                               const std::function<Var<R>()>& reference,
                               const std::vector<NamedVar<R>>& reference_params,
                               const GradCheckOptions& options) {
    if (params.size() != reference_params.size()) {
        throw std::invalid_argument("grad_check_against: parameter lists differ in length");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Var<R> r = reference_params[i].second;
        if (r.shape() != params[i].second.shape()) {
            throw shape_error("grad_check_against", params[i].second.shape(), r.shape());
        }
        r.value_mut() = tensor_cast<R>(params[i].second.value());
    }
    return probe<T, R>(analytic_grads(fn, params), reference, reference_params, options);
}

template CheckReport grad_check_against<float, double>(const std::function<Var<float>()>&,
                                                       const std::vector<NamedVar<float>>&,
                                                       const std::function<Var<double>()>&,
                                                       const std::vector<NamedVar<double>>&,
                                                       const GradCheckOptions&);

template <typename T>
CheckReport rescore(const CheckReport& reference, const std::function<Var<T>()>& fn,
                    const std::vector<NamedVar<T>>& params, double abs_floor) {
    const auto analytic = analytic_grads(fn, params);
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < params.size(); ++i) index[params[i].first] = i;
    CheckReport report;
    for (GradCheckEntry e : reference.entries) {
        auto it = index.find(e.param);
        if (it == index.end()) throw std::invalid_argument("rescore: unknown parameter '" + e.param + "'");
        e.analytic = static_cast<double>(analytic[it->second][e.index]);
        e.finite = std::isfinite(e.analytic) && std::isfinite(e.numeric);
        if (e.finite) {
            e.rel_error = std::abs(e.analytic - e.numeric) /
                          std::max({std::abs(e.analytic), std::abs(e.numeric), abs_floor});
            report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
        } else {
            e.rel_error = 0;
            ++report.non_finite;
        }
        report.entries.push_back(std::move(e));
    }
    return report;
}

template CheckReport rescore<float>(const CheckReport&, const std::function<Var<float>()>&,
                                    const std::vector<NamedVar<float>>&, double);
template CheckReport rescore<double>(const CheckReport&, const std::function<Var<double>()>&,
                                     const std::vector<NamedVar<double>>&, double);

template CheckReport grad_check<float>(const std::function<Var<float>()>&,
                                       const std::vector<NamedVar<float>>&,
                                       const GradCheckOptions&);
template CheckReport grad_check<double>(const std::function<Var<double>()>&,
                                        const std::vector<NamedVar<double>>&,
                                        const GradCheckOptions&);

}  // namespace voplab
