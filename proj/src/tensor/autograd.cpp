#include "voplab/tensor/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "voplab/simd/kernels.hpp"

namespace voplab {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Tensor<T>& grad_of(Node<T>& n) {
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
}

// dst += src over n values
template <typename T>
void acc_into(T* dst, const T* src, std::size_t n) {
    simd::kernels<T>().add(dst, src, dst, n);
}

template <typename T>
Var<T> make_op(Tensor<T> value, const std::vector<Var<T>>& inputs, const char* op,
               std::function<void(Node<T>&)> fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = op;
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backward = std::move(fn);
    }
    return Var<T>(std::move(node));
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

template <typename T>
void check_broadcast(const char* op, const Var<T>& a, const Var<T>& b) {
    if (!is_suffix(b.shape(), a.shape())) throw shape_error(op, a.shape(), b.shape());
}

template <typename T, typename F, typename G>
Var<T> unary(const Var<T>& a, const char* op, F fwd, G dfdx) {
    Tensor<T> out(a.shape());
    const T* x = a.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = fwd(x[i]);
    return make_op<T>(std::move(out), {a}, op, [dfdx](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor<T>& gp = grad_of(p);
        const T* g = self.grad.data();
        const T* x = p.value.data();
        const T* y = self.value.data();
        for (std::size_t i = 0; i < gp.numel(); ++i) gp[i] += g[i] * dfdx(x[i], y[i]);
    });
}

}  // namespace

std::size_t resolve_axis(int axis, std::size_t rank, const char* op) {
    long a = axis < 0 ? static_cast<long>(rank) + axis : axis;
    if (a < 0 || a >= static_cast<long>(rank)) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
    }
    return static_cast<std::size_t>(a);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

template <typename T>
std::vector<Var<T>> Var<T>::parents() const {
    std::vector<Var> out;
    for (const auto& p : node_->parents) out.emplace_back(p);
    return out;
}

template <typename T>
std::vector<Var<T>> backward(const Var<T>& loss) {
    if (loss.numel() != 1) throw shape_error("backward", loss.shape(), "is not a scalar loss");
    std::vector<Var<T>> leaves;
    if (!loss.requires_grad()) return leaves;

    // Iterative post-order DFS gives a topological order.
    std::vector<NodePtr<T>> order;
    std::unordered_set<const Node<T>*> seen;
    std::vector<std::pair<NodePtr<T>, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& top = stack.back();
        if (top.second < top.first->parents.size()) {
            NodePtr<T> p = top.first->parents[top.second++];
            if (p->requires_grad && !seen.count(p.get())) {
                seen.insert(p.get());
                stack.emplace_back(std::move(p), 0);
            }
        } else {
            order.push_back(top.first);
            stack.pop_back();
        }
    }

    grad_of(*loss.node()).fill(T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>& n = **it;
        if (n.backward && !n.grad.empty()) n.backward(n);
    }
    for (auto& n : order) {
        if (n->backward) {
            n->backward = nullptr;
            n->parents.clear();
            n->grad = Tensor<T>();
        } else if (!n->grad.empty()) {
            leaves.emplace_back(n);
        }
    }
    return leaves;
}

// ---- elementwise -----------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_broadcast("add", a, b);
    const std::size_t n = b.numel();
    const std::size_t reps = n == 0 ? 0 : a.numel() / n;
    Tensor<T> out(a.shape());
    const auto& kt = simd::kernels<T>();
    for (std::size_t r = 0; r < reps; ++r) {
        kt.add(a.value().data() + r * n, b.value().data(), out.data() + r * n, n);
    }
    return make_op<T>(std::move(out), {a, b}, "add", [reps, n](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        if (pa.requires_grad) acc_into(grad_of(pa).data(), self.grad.data(), self.grad.numel());
        if (pb.requires_grad) {
            T* gb = grad_of(pb).data();
            for (std::size_t r = 0; r < reps; ++r) acc_into(gb, self.grad.data() + r * n, n);
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_broadcast("sub", a, b);
    const std::size_t n = b.numel();
    const std::size_t reps = n == 0 ? 0 : a.numel() / n;
    Tensor<T> out(a.shape());
    for (std::size_t r = 0; r < reps; ++r) {
        const T* x = a.value().data() + r * n;
        const T* y = b.value().data();
        T* o = out.data() + r * n;
        for (std::size_t i = 0; i < n; ++i) o[i] = x[i] - y[i];
    }
    return make_op<T>(std::move(out), {a, b}, "sub", [reps, n](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        if (pa.requires_grad) acc_into(grad_of(pa).data(), self.grad.data(), self.grad.numel());
        if (pb.requires_grad) {
            T* gb = grad_of(pb).data();
            for (std::size_t r = 0; r < reps; ++r) {
                const T* g = self.grad.data() + r * n;
                for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
            }
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_broadcast("mul", a, b);
    const std::size_t n = b.numel();
    const std::size_t reps = n == 0 ? 0 : a.numel() / n;
    Tensor<T> out(a.shape());
    const auto& kt = simd::kernels<T>();
    for (std::size_t r = 0; r < reps; ++r) {
        kt.mul(a.value().data() + r * n, b.value().data(), out.data() + r * n, n);
    }
    return make_op<T>(std::move(out), {a, b}, "mul", [reps, n](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        const auto& kt = simd::kernels<T>();
        std::vector<T> tmp(n);
        if (pa.requires_grad) {
            T* ga = grad_of(pa).data();
            for (std::size_t r = 0; r < reps; ++r) {
                kt.mul(self.grad.data() + r * n, pb.value.data(), tmp.data(), n);
                acc_into(ga + r * n, tmp.data(), n);
            }
        }
        if (pb.requires_grad) {
            T* gb = grad_of(pb).data();
            for (std::size_t r = 0; r < reps; ++r) {
                kt.mul(self.grad.data() + r * n, pa.value.data() + r * n, tmp.data(), n);
                acc_into(gb, tmp.data(), n);
            }
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out(a.shape());
    simd::kernels<T>().scale(s, a.value().data(), out.data(), out.numel());
    return make_op<T>(std::move(out), {a}, "scale", [s](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        simd::kernels<T>().axpy(s, self.grad.data(), grad_of(p).data(), self.grad.numel());
    });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
    return scale(a, T(-1));
}

template <typename T>
Var<T> exp(const Var<T>& a) {
    return unary(
        a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
    const T inv_sqrt2 = T(0.70710678118654752440);
    const T inv_sqrt2pi = T(0.39894228040143267794);
    return unary(
        a, "gelu", [=](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [=](T x, T) {
            return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) +
                   x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
        });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    return unary(
        a, "relu", [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    return unary(
        a, "sigmoid",
        [](T x) {
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
    return unary(
        a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> clamp_max(const Var<T>& a, T limit) {
    return unary(
        a, "clamp_max", [limit](T x) { return x > limit ? limit : x; },
        [limit](T x, T) { return x > limit ? T(0) : T(1); });
}

// ---- matmul ----------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2) throw shape_error("matmul", as, bs);
    const std::size_t m = as[as.size() - 2];
    const std::size_t k = as.back();
    const std::size_t bk = transpose_b ? bs.back() : bs[bs.size() - 2];
    const std::size_t n = transpose_b ? bs[bs.size() - 2] : bs.back();
    if (bk != k) throw shape_error("matmul", as, bs);
    const bool shared_b = bs.size() == 2;
    if (!shared_b) {
        if (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) {
            throw shape_error("matmul", as, bs);
        }
    }
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];

    Shape os(as.begin(), as.end() - 2);
    os.push_back(m);
    os.push_back(n);
    Tensor<T> out(os);
    const std::size_t b_stride = shared_b ? 0 : k * n;
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* ap = a.value().data() + bi * m * k;
        const T* bp = b.value().data() + bi * b_stride;
        T* cp = out.data() + bi * m * n;
        if (transpose_b) {
            simd::gemm_bt(ap, bp, cp, m, k, n, false);
        } else {
            simd::gemm(ap, bp, cp, m, k, n, false);
        }
    }
    return make_op<T>(std::move(out), {a, b}, "matmul",
                      [=](Node<T>& self) {
                          Node<T>& pa = *self.parents[0];
                          Node<T>& pb = *self.parents[1];
                          for (std::size_t bi = 0; bi < batch; ++bi) {
                              const T* g = self.grad.data() + bi * m * n;
                              const T* ap = pa.value.data() + bi * m * k;
                              const T* bp = pb.value.data() + bi * b_stride;
                              if (pa.requires_grad) {
                                  T* ga = grad_of(pa).data() + bi * m * k;
                                  if (transpose_b) {
                                      simd::gemm(g, bp, ga, m, n, k, true);
                                  } else {
                                      simd::gemm_bt(g, bp, ga, m, n, k, true);
                                  }
                              }
                              if (pb.requires_grad) {
                                  T* gb = grad_of(pb).data() + bi * b_stride;
                                  if (transpose_b) {
                                      simd::gemm_at(g, ap, gb, n, m, k, true);
                                  } else {
                                      simd::gemm_at(ap, g, gb, k, m, n, true);
                                  }
                              }
                          }
                      });
}

// ---- axis-wise ops ------------------------------------------------------------

template <typename T>
Var<T> softmax(const Var<T>& x, int axis) {
    const std::size_t ax = resolve_axis(axis, x.shape().size(), "softmax");
    const AxisSplit sp = split_at(x.shape(), ax);
    Tensor<T> out(x.shape());
    const T* in = x.value().data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, in[base + j * sp.inner]);
            T total = 0;
            for (std::size_t j = 0; j < sp.n; ++j) {
                T e = std::exp(in[base + j * sp.inner] - mx);
                out[base + j * sp.inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < sp.n; ++j) out[base + j * sp.inner] /= total;
        }
    }
    return make_op<T>(std::move(out), {x}, "softmax", [sp](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor<T>& gp = grad_of(p);
        const T* y = self.value.data();
        const T* g = self.grad.data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = o * sp.n * sp.inner + i;
                T dotgy = 0;
                for (std::size_t j = 0; j < sp.n; ++j) {
                    dotgy += g[base + j * sp.inner] * y[base + j * sp.inner];
                }
                for (std::size_t j = 0; j < sp.n; ++j) {
                    const std::size_t idx = base + j * sp.inner;
                    gp[idx] += y[idx] * (g[idx] - dotgy);
                }
            }
        }
    });
}

template <typename T>
Var<T> log_softmax(const Var<T>& x, int axis) {
    const std::size_t ax = resolve_axis(axis, x.shape().size(), "log_softmax");
    const AxisSplit sp = split_at(x.shape(), ax);
    Tensor<T> out(x.shape());
    const T* in = x.value().data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, in[base + j * sp.inner]);
            T total = 0;
            for (std::size_t j = 0; j < sp.n; ++j) total += std::exp(in[base + j * sp.inner] - mx);
            const T lse = mx + std::log(total);
            for (std::size_t j = 0; j < sp.n; ++j) {
                out[base + j * sp.inner] = in[base + j * sp.inner] - lse;
            }
        }
    }
    return make_op<T>(std::move(out), {x}, "log_softmax", [sp](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor<T>& gp = grad_of(p);
        const T* y = self.value.data();
        const T* g = self.grad.data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = o * sp.n * sp.inner + i;
                T gsum = 0;
                for (std::size_t j = 0; j < sp.n; ++j) gsum += g[base + j * sp.inner];
                for (std::size_t j = 0; j < sp.n; ++j) {
                    const std::size_t idx = base + j * sp.inner;
                    gp[idx] += g[idx] - std::exp(y[idx]) * gsum;
                }
            }
        }
    });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    if (x.shape().empty()) throw shape_error("layer_norm", x.shape(), "has no feature axis");
    const std::size_t d = x.shape().back();
    if (gamma.shape() != Shape{d}) throw shape_error("layer_norm", x.shape(), gamma.shape());
    if (beta.shape() != Shape{d}) throw shape_error("layer_norm", x.shape(), beta.shape());
    const std::size_t rows = d == 0 ? 0 : x.numel() / d;

    Tensor<T> out(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto rstd = std::make_shared<std::vector<T>>(rows);
    const T* in = x.value().data();
    const T* gm = gamma.value().data();
    const T* bt = beta.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = in + r * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= T(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= T(d);
        const T rs = T(1) / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const T xh = (row[j] - mu) * rs;
            (*xhat)[r * d + j] = xh;
            out[r * d + j] = xh * gm[j] + bt[j];
        }
    }
    return make_op<T>(std::move(out), {x, gamma, beta}, "layer_norm",
                      [xhat, rstd, rows, d](Node<T>& self) {
                          Node<T>& px = *self.parents[0];
                          Node<T>& pg = *self.parents[1];
                          Node<T>& pb = *self.parents[2];
                          const T* g = self.grad.data();
                          const T* gm = pg.value.data();
                          std::vector<T> gxh(d);
                          for (std::size_t r = 0; r < rows; ++r) {
                              const T* gr = g + r * d;
                              const T* xh = xhat->data() + r * d;
                              if (pg.requires_grad) {
                                  T* gg = grad_of(pg).data();
                                  for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xh[j];
                              }
                              if (pb.requires_grad) acc_into(grad_of(pb).data(), gr, d);
                              if (px.requires_grad) {
                                  T m1 = 0, m2 = 0;
                                  for (std::size_t j = 0; j < d; ++j) {
                                      gxh[j] = gr[j] * gm[j];
                                      m1 += gxh[j];
                                      m2 += gxh[j] * xh[j];
                                  }
                                  m1 /= T(d);
                                  m2 /= T(d);
                                  T* gx = grad_of(px).data() + r * d;
                                  const T rs = (*rstd)[r];
                                  for (std::size_t j = 0; j < d; ++j) {
                                      gx[j] += rs * (gxh[j] - m1 - xh[j] * m2);
                                  }
                              }
                          }
                      });
}

template <typename T>
Var<T> l2_normalize(const Var<T>& x) {
    if (x.shape().empty()) throw shape_error("l2_normalize", x.shape(), "has no feature axis");
    const std::size_t d = x.shape().back();
    const std::size_t rows = d == 0 ? 0 : x.numel() / d;
    Tensor<T> out(x.shape());
    auto norms = std::make_shared<std::vector<T>>(rows);
    const auto& kt = simd::kernels<T>();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = x.value().data() + r * d;
        const T nrm = std::sqrt(kt.dot(row, row, d));
        if (nrm == T(0)) {
            throw std::domain_error("l2_normalize: row " + std::to_string(r) +
                                    " has zero norm (dead embedding)");
        }
        (*norms)[r] = nrm;
        kt.scale(T(1) / nrm, row, out.data() + r * d, d);
    }
    return make_op<T>(std::move(out), {x}, "l2_normalize", [norms, rows, d](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        const auto& kt = simd::kernels<T>();
        T* gp = grad_of(p).data();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = self.value.data() + r * d;
            const T* g = self.grad.data() + r * d;
            const T gy = kt.dot(g, y, d);
            const T inv = T(1) / (*norms)[r];
            for (std::size_t j = 0; j < d; ++j) gp[r * d + j] += (g[j] - y[j] * gy) * inv;
        }
    });
}

// ---- reductions ---------------------------------------------------------------

template <typename T>
Var<T> mean(const Var<T>& x, int axis) {
    const std::size_t ax = resolve_axis(axis, x.shape().size(), "mean");
    const AxisSplit sp = split_at(x.shape(), ax);
    if (sp.n == 0) throw shape_error("mean", x.shape(), "has an empty reduction axis");
    Shape os = x.shape();
    os.erase(os.begin() + static_cast<long>(ax));
    Tensor<T> out(os);
    const T* in = x.value().data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t j = 0; j < sp.n; ++j) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                out[o * sp.inner + i] += in[(o * sp.n + j) * sp.inner + i];
            }
        }
    }
    const T inv = T(1) / T(sp.n);
    for (auto& v : out.values()) v *= inv;
    return make_op<T>(std::move(out), {x}, "mean", [sp, inv](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        T* gp = grad_of(p).data();
        const T* g = self.grad.data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t j = 0; j < sp.n; ++j) {
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    gp[(o * sp.n + j) * sp.inner + i] += g[o * sp.inner + i] * inv;
                }
            }
        }
    });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
    T total = 0;
    for (T v : x.value().values()) total += v;
    return make_op<T>(Tensor<T>::scalar(total), {x}, "sum_all", [](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        const T g = self.grad[0];
        for (auto& v : grad_of(p).values()) v += g;
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    if (x.numel() == 0) throw shape_error("mean_all", x.shape(), "is empty");
    return scale(sum_all(x), T(1) / T(x.numel()));
}

// ---- indexing / layout ------------------------------------------------------

template <typename T>
Var<T> embedding(const Var<T>& table, const std::vector<int>& ids, const Shape& ids_shape) {
    if (table.shape().size() != 2) throw shape_error("embedding", table.shape(), "is not (V, D)");
    if (shape_numel(ids_shape) != ids.size()) {
        throw ShapeError("embedding: id shape " + shape_str(ids_shape) + " does not match " +
                         std::to_string(ids.size()) + " ids");
    }
    const std::size_t vocab = table.shape()[0];
    const std::size_t d = table.shape()[1];
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw std::out_of_range("embedding: token id " + std::to_string(id) +
                                    " outside vocabulary of " + std::to_string(vocab));
        }
    }
    Shape os = ids_shape;
    os.push_back(d);
    Tensor<T> out(os);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * d, d,
                    out.data() + i * d);
    }
    return make_op<T>(std::move(out), {table}, "embedding", [ids, d](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        T* gp = grad_of(p).data();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            acc_into(gp + static_cast<std::size_t>(ids[i]) * d, self.grad.data() + i * d, d);
        }
    });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no operands");
    const Shape& ref = parts[0].shape();
    const std::size_t ax = resolve_axis(axis, ref.size(), "concat");
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == ref.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == ref[i];
        if (!ok) throw shape_error("concat", ref, s);
        total += s[ax];
    }
    Shape os = ref;
    os[ax] = total;
    const AxisSplit sp = split_at(os, ax);
    Tensor<T> out(os);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t len = p.shape()[ax];
        for (std::size_t o = 0; o < sp.outer; ++o) {
            std::copy_n(p.value().data() + o * len * sp.inner, len * sp.inner,
                        out.data() + (o * total + off) * sp.inner);
        }
        off += len;
    }
    return make_op<T>(std::move(out), parts, "concat", [sp, total, offsets, ax](Node<T>& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node<T>& p = *self.parents[k];
            if (!p.requires_grad) continue;
            const std::size_t len = p.value.shape()[ax];
            T* gp = grad_of(p).data();
            for (std::size_t o = 0; o < sp.outer; ++o) {
                acc_into(gp + o * len * sp.inner,
                         self.grad.data() + (o * total + offsets[k]) * sp.inner, len * sp.inner);
            }
        }
    });
}

template <typename T>
Var<T> slice(const Var<T>& x, int axis, std::size_t start, std::size_t length) {
    const std::size_t ax = resolve_axis(axis, x.shape().size(), "slice");
    const AxisSplit sp = split_at(x.shape(), ax);
    if (start + length > sp.n) {
        throw shape_error("slice", x.shape(),
                          "cannot take [" + std::to_string(start) + ", " +
                              std::to_string(start + length) + ") along axis " +
                              std::to_string(ax));
    }
    Shape os = x.shape();
    os[ax] = length;
    Tensor<T> out(os);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(x.value().data() + (o * sp.n + start) * sp.inner, length * sp.inner,
                    out.data() + o * length * sp.inner);
    }
    return make_op<T>(std::move(out), {x}, "slice", [sp, start, length](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        T* gp = grad_of(p).data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            acc_into(gp + (o * sp.n + start) * sp.inner, self.grad.data() + o * length * sp.inner,
                     length * sp.inner);
        }
    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) throw shape_error("reshape", x.shape(), shape);
    return make_op<T>(x.value().reshaped(std::move(shape)), {x}, "reshape", [](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        acc_into(grad_of(p).data(), self.grad.data(), self.grad.numel());
    });
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm) {
    const Shape& s = x.shape();
    const std::size_t rank = s.size();
    if (perm.size() != rank) throw shape_error("permute", s, "does not match permutation rank");
    std::vector<bool> used(rank, false);
    for (std::size_t p : perm) {
        if (p >= rank || used[p]) throw shape_error("permute", s, "got an invalid permutation");
        used[p] = true;
    }
    Shape os(rank);
    for (std::size_t i = 0; i < rank; ++i) os[i] = s[perm[i]];
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
    // Runs along the last axis stay contiguous when it is not moved.
    const bool keeps_last = rank > 0 && perm.back() == rank - 1;
    const std::size_t inner = keeps_last ? s[rank - 1] : 1;
    const std::size_t outer_rank = keeps_last ? rank - 1 : rank;
    const std::size_t runs = inner == 0 ? 0 : x.numel() / inner;
    // src[r] = flat input offset of output run r
    auto src = std::make_shared<std::vector<std::size_t>>(runs);
    std::vector<std::size_t> idx(outer_rank, 0);
    std::size_t off = 0;
    for (std::size_t r = 0; r < runs; ++r) {
        (*src)[r] = off;
        for (std::size_t i = outer_rank; i-- > 0;) {
            const std::size_t stride = in_strides[perm[i]];
            off += stride;
            if (++idx[i] < os[i]) break;
            off -= stride * os[i];
            idx[i] = 0;
        }
    }
    Tensor<T> out(os);
    const T* xv = x.value().data();
    for (std::size_t r = 0; r < runs; ++r) std::copy_n(xv + (*src)[r], inner, out.data() + r * inner);
    return make_op<T>(std::move(out), {x}, "permute", [src, inner](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        T* gp = grad_of(p).data();
        const auto& kt = simd::kernels<T>();
        for (std::size_t r = 0; r < src->size(); ++r) {
            kt.add(gp + (*src)[r], self.grad.data() + r * inner, gp + (*src)[r], inner);
        }
    });
}

template <typename T>
Var<T> expand(const Var<T>& x, std::size_t n) {
    Shape os = x.shape();
    os.insert(os.begin(), n);
    Tensor<T> out(os);
    const std::size_t m = x.numel();
    for (std::size_t r = 0; r < n; ++r) std::copy_n(x.value().data(), m, out.data() + r * m);
    return make_op<T>(std::move(out), {x}, "expand", [n, m](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        T* gp = grad_of(p).data();
        for (std::size_t r = 0; r < n; ++r) acc_into(gp, self.grad.data() + r * m, m);
    });
}

template <typename T>
Var<T> diagonal(const Var<T>& x) {
    const Shape& s = x.shape();
    if (s.size() != 2 || s[0] != s[1]) throw shape_error("diagonal", s, "is not square");
    const std::size_t n = s[0];
    Tensor<T> out(Shape{n});
    for (std::size_t i = 0; i < n; ++i) out[i] = x.value()[i * n + i];
    return make_op<T>(std::move(out), {x}, "diagonal", [n](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        T* gp = grad_of(p).data();
        for (std::size_t i = 0; i < n; ++i) gp[i * n + i] += self.grad[i];
    });
}

template <typename T>
Var<T> take_rows(const Var<T>& x, const std::vector<std::size_t>& rows) {
    const Shape& s = x.shape();
    if (s.size() != 3 || rows.size() != s[0]) {
        throw shape_error("take_rows", s, "needs (B, S, D) with one row index per batch entry");
    }
    const std::size_t seq = s[1], d = s[2];
    Tensor<T> out(Shape{s[0], d});
    for (std::size_t b = 0; b < rows.size(); ++b) {
        if (rows[b] >= seq) {
            throw std::out_of_range("take_rows: row " + std::to_string(rows[b]) +
                                    " outside sequence of " + std::to_string(seq));
        }
        std::copy_n(x.value().data() + (b * seq + rows[b]) * d, d, out.data() + b * d);
    }
    return make_op<T>(std::move(out), {x}, "take_rows", [rows, seq, d](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        T* gp = grad_of(p).data();
        for (std::size_t b = 0; b < rows.size(); ++b) {
            acc_into(gp + (b * seq + rows[b]) * d, self.grad.data() + b * d, d);
        }
    });
}

#define VOPLAB_INSTANTIATE_AUTOGRAD(T)                                                     \
    template class Var<T>;                                                                 \
    template std::vector<Var<T>> backward<T>(const Var<T>&);                               \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                  \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                  \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                  \
    template Var<T> scale<T>(const Var<T>&, T);                                            \
    template Var<T> neg<T>(const Var<T>&);                                                 \
    template Var<T> exp<T>(const Var<T>&);                                                 \
    template Var<T> gelu<T>(const Var<T>&);                                                \
    template Var<T> relu<T>(const Var<T>&);                                                \
    template Var<T> sigmoid<T>(const Var<T>&);                                             \
    template Var<T> tanh<T>(const Var<T>&);                                                \
    template Var<T> clamp_max<T>(const Var<T>&, T);                                        \
    template Var<T> matmul<T>(const Var<T>&, const Var<T>&, bool);                         \
    template Var<T> softmax<T>(const Var<T>&, int);                                        \
    template Var<T> log_softmax<T>(const Var<T>&, int);                                    \
    template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);         \
    template Var<T> l2_normalize<T>(const Var<T>&);                                        \
    template Var<T> mean<T>(const Var<T>&, int);                                           \
    template Var<T> sum_all<T>(const Var<T>&);                                             \
    template Var<T> mean_all<T>(const Var<T>&);                                            \
    template Var<T> embedding<T>(const Var<T>&, const std::vector<int>&, const Shape&);    \
    template Var<T> concat<T>(const std::vector<Var<T>>&, int);                            \
    template Var<T> slice<T>(const Var<T>&, int, std::size_t, std::size_t);                \
    template Var<T> reshape<T>(const Var<T>&, Shape);                                      \
    template Var<T> permute<T>(const Var<T>&, const std::vector<std::size_t>&);            \
    template Var<T> expand<T>(const Var<T>&, std::size_t);                                 \
    template Var<T> diagonal<T>(const Var<T>&);                                            \
    template Var<T> take_rows<T>(const Var<T>&, const std::vector<std::size_t>&);

VOPLAB_INSTANTIATE_AUTOGRAD(float)
VOPLAB_INSTANTIATE_AUTOGRAD(double)

#undef VOPLAB_INSTANTIATE_AUTOGRAD


}  // namespace voplab
