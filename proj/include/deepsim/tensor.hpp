#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "deepsim/common.hpp"

namespace deepsim {

using Shape = std::vector<int>;

inline std::int64_t numel_of(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

// One recorded operation result. Nodes form a DAG through `parents`; the
// backward pass walks it in reverse topological order, visiting each node
// exactly once. Gradients accumulate additively and are only cleared by an
// explicit zero_grad, which is what makes multi-pass gradient accumulation
// work.
struct Node {
    Shape shape;
    std::vector<real> values;
    std::vector<real> grad;  // empty until first accumulation; then numel-sized
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // null for leaves

    std::int64_t numel() const { return numel_of(shape); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(static_cast<std::size_t>(numel()), real(0));
    }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor from_values(Shape shape, std::vector<real> values, bool requires_grad = false) {
        DEEPSIM_CHECK(static_cast<std::int64_t>(values.size()) == numel_of(shape),
                      "tensor: ", values.size(), " values for shape ", shape_str(shape));
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->values = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<real> v(static_cast<std::size_t>(numel_of(shape)), real(0));
        return from_values(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor full(Shape shape, real value, bool requires_grad = false) {
        std::vector<real> v(static_cast<std::size_t>(numel_of(shape)), value);
        return from_values(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor scalar(real value, bool requires_grad = false) {
        return from_values({1}, {value}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, real stddev = real(1), bool requires_grad = false) {
        std::normal_distribution<double> dist(0.0, 1.0);
        std::vector<real> v(static_cast<std::size_t>(numel_of(shape)));
        for (auto& x : v) x = static_cast<real>(dist(rng)) * stddev;
        return from_values(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor uniform(Shape shape, Rng& rng, real lo, real hi, bool requires_grad = false) {
        std::uniform_real_distribution<double> dist(lo, hi);
        std::vector<real> v(static_cast<std::size_t>(numel_of(shape)));
        for (auto& x : v) x = static_cast<real>(dist(rng));
        return from_values(std::move(shape), std::move(v), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    const std::vector<real>& values() const { return node_->values; }
    std::vector<real>& mutable_values() { return node_->values; }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<real>& grad() const {
        DEEPSIM_CHECK(has_grad(), "tensor has no populated gradient");
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(static_cast<std::size_t>(numel()), real(0)); }
    void clear_grad() { node_->grad.clear(); }

    real item() const {
        DEEPSIM_CHECK(numel() == 1, "item() requires a scalar tensor, shape is ", shape_str(shape()));
        return node_->values[0];
    }

    real at(std::initializer_list<int> idx) const {
        const Shape& s = shape();
        DEEPSIM_CHECK(idx.size() == s.size(), "index rank mismatch");
        std::int64_t flat = 0;
        std::size_t k = 0;
        for (int i : idx) {
            DEEPSIM_CHECK(i >= 0 && i < s[k], "index out of bounds");
            flat = flat * s[k] + i;
            ++k;
        }
        return node_->values[static_cast<std::size_t>(flat)];
    }

    // Same values, detached from the graph.
    Tensor detach() const { return from_values(shape(), values(), false); }

    // Deep copy preserving requires_grad (used for checkpoint snapshots).
    Tensor clone() const { return from_values(shape(), values(), requires_grad()); }

    // Reverse-mode pass from a scalar loss. Gradients are accumulated, not
    // overwritten: calling backward twice without zeroing doubles them.
    void backward() const;

    // Stable identity of the underlying buffer, used to key optimizer state.
    const void* id() const { return node_.get(); }

    detail::NodePtr node() const { return node_; }
    explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

private:
    detail::NodePtr node_;
};

namespace detail {

inline NodePtr make_result(Shape shape, std::vector<real> values,
                           std::vector<NodePtr> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

}  // namespace detail

inline void Tensor::backward() const {
    DEEPSIM_CHECK(defined(), "backward on an undefined tensor");
    DEEPSIM_CHECK(numel() == 1, "backward requires a scalar loss, shape is ", shape_str(shape()));
    DEEPSIM_CHECK(requires_grad(), "backward on a tensor that does not require gradients");

    // Iterative post-order DFS gives a topological order of the DAG.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    // Interior nodes get fresh pass-local buffers; only leaves accumulate
    // across backward calls (that is the k-pass accumulation contract).
    for (detail::Node* n : order)
        if (n->backprop) n->grad.assign(static_cast<std::size_t>(n->numel()), real(0));

    node_->ensure_grad();
    node_->grad[0] += real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic with right-aligned broadcasting (singleton or missing
// leading dimensions only).
// ---------------------------------------------------------------------------

namespace detail {

inline bool broadcast_shape(const Shape& a, const Shape& b, Shape& out) {
    std::size_t nd = std::max(a.size(), b.size());
    out.assign(nd, 1);
    for (std::size_t i = 0; i < nd; ++i) {
        int da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
        int db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
        if (da == db) {
            out[i] = da;
        } else if (da == 1 || db == 1) {
            out[i] = std::max(da, db);
        } else {
            return false;
        }
    }
    return true;
}

inline std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
    std::size_t nd = out.size();
    std::vector<std::int64_t> st(nd, 0);
    std::int64_t acc = 1;
    for (std::size_t i = 0; i < s.size(); ++i) {
        std::size_t k = s.size() - 1 - i;
        std::size_t ko = nd - 1 - i;
        st[ko] = (s[k] == 1) ? 0 : acc;
        acc *= s[k];
    }
    return st;
}

// Sums `g` (shaped `gshape`) down to `target`, reversing a broadcast.
inline std::vector<real> reduce_to_shape(const std::vector<real>& g, const Shape& gshape,
                                         const Shape& target) {
    if (gshape == target) return g;
    std::vector<real> out(static_cast<std::size_t>(numel_of(target)), real(0));
    auto tstrides = broadcast_strides(target, gshape);
    std::size_t nd = gshape.size();
    std::vector<std::int64_t> idx(nd, 0);
    std::int64_t toff = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        out[static_cast<std::size_t>(toff)] += g[i];
        for (std::size_t d = nd; d-- > 0;) {
            if (++idx[d] < gshape[d]) {
                toff += tstrides[d];
                break;
            }
            toff -= tstrides[d] * (gshape[d] - 1);
            idx[d] = 0;
        }
    }
    return out;
}

template <typename FwdFn, typename BwdFn>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* name,
                          const FwdFn& fwd, const BwdFn& bwd) {
    Shape out_shape;
    DEEPSIM_CHECK(broadcast_shape(a.shape(), b.shape(), out_shape),
                  name, ": incompatible shapes ", shape_str(a.shape()), " vs ",
                  shape_str(b.shape()));
    NodePtr an = a.node(), bn = b.node();
    std::int64_t n = numel_of(out_shape);
    std::vector<real> out(static_cast<std::size_t>(n));

    const bool same = a.shape() == b.shape();
    if (same) {
        const auto& av = an->values;
        const auto& bv = bn->values;
        for (std::int64_t i = 0; i < n; ++i)
            out[static_cast<std::size_t>(i)] =
                fwd(av[static_cast<std::size_t>(i)], bv[static_cast<std::size_t>(i)]);
    } else {
        auto sa = broadcast_strides(an->shape, out_shape);
        auto sb = broadcast_strides(bn->shape, out_shape);
        std::size_t nd = out_shape.size();
        std::vector<std::int64_t> idx(nd, 0);
        std::int64_t oa = 0, ob = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            out[static_cast<std::size_t>(i)] =
                fwd(an->values[static_cast<std::size_t>(oa)], bn->values[static_cast<std::size_t>(ob)]);
            for (std::size_t d = nd; d-- > 0;) {
                if (++idx[d] < out_shape[d]) {
                    oa += sa[d];
                    ob += sb[d];
                    break;
                }
                oa -= sa[d] * (out_shape[d] - 1);
                ob -= sb[d] * (out_shape[d] - 1);
                idx[d] = 0;
            }
        }
    }

    detail::Node* ap = an.get();
    detail::Node* bp = bn.get();
    auto node = make_result(
        out_shape, std::move(out), {an, bn},
        [ap, bp, out_shape, bwd, same](Node& self) {
            std::int64_t n = self.numel();
            std::vector<real> ga, gb;
            if (ap->requires_grad) ga.assign(static_cast<std::size_t>(n), real(0));
            if (bp->requires_grad) gb.assign(static_cast<std::size_t>(n), real(0));
            if (same) {
                for (std::int64_t i = 0; i < n; ++i) {
                    auto [da, db] = bwd(ap->values[static_cast<std::size_t>(i)],
                                        bp->values[static_cast<std::size_t>(i)],
                                        self.values[static_cast<std::size_t>(i)]);
                    if (!ga.empty()) ga[static_cast<std::size_t>(i)] = da * self.grad[static_cast<std::size_t>(i)];
                    if (!gb.empty()) gb[static_cast<std::size_t>(i)] = db * self.grad[static_cast<std::size_t>(i)];
                }
            } else {
                auto sa = broadcast_strides(ap->shape, out_shape);
                auto sb = broadcast_strides(bp->shape, out_shape);
                std::size_t nd = out_shape.size();
                std::vector<std::int64_t> idx(nd, 0);
                std::int64_t oa = 0, ob = 0;
                for (std::int64_t i = 0; i < n; ++i) {
                    auto [da, db] = bwd(ap->values[static_cast<std::size_t>(oa)],
                                        bp->values[static_cast<std::size_t>(ob)],
                                        self.values[static_cast<std::size_t>(i)]);
                    if (!ga.empty()) ga[static_cast<std::size_t>(i)] = da * self.grad[static_cast<std::size_t>(i)];
                    if (!gb.empty()) gb[static_cast<std::size_t>(i)] = db * self.grad[static_cast<std::size_t>(i)];
                    for (std::size_t d = nd; d-- > 0;) {
                        if (++idx[d] < out_shape[d]) {
                            oa += sa[d];
                            ob += sb[d];
                            break;
                        }
                        oa -= sa[d] * (out_shape[d] - 1);
                        ob -= sb[d] * (out_shape[d] - 1);
                        idx[d] = 0;
                    }
                }
            }
            if (!ga.empty()) {
                auto r = reduce_to_shape(ga, out_shape, ap->shape);
                ap->ensure_grad();
                for (std::size_t i = 0; i < r.size(); ++i) ap->grad[i] += r[i];
            }
            if (!gb.empty()) {
                auto r = reduce_to_shape(gb, out_shape, bp->shape);
                bp->ensure_grad();
                for (std::size_t i = 0; i < r.size(); ++i) bp->grad[i] += r[i];
            }
        });
    return Tensor(node);
}

template <typename FwdFn, typename BwdFn>
Tensor elementwise_unary(const Tensor& a, const FwdFn& fwd, const BwdFn& bwd) {
    NodePtr an = a.node();
    std::int64_t n = a.numel();
    std::vector<real> out(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = fwd(an->values[static_cast<std::size_t>(i)]);
    detail::Node* ap = an.get();
    auto node = make_result(a.shape(), std::move(out), {an}, [ap, bwd](Node& self) {
        if (!ap->requires_grad) return;
        ap->ensure_grad();
        std::int64_t n = self.numel();
        for (std::int64_t i = 0; i < n; ++i) {
            std::size_t k = static_cast<std::size_t>(i);
            ap->grad[k] += bwd(ap->values[k], self.values[k]) * self.grad[k];
        }
    });
    return Tensor(node);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::elementwise_binary(
        a, b, "add", [](real x, real y) { return x + y; },
        [](real, real, real) { return std::pair<real, real>(real(1), real(1)); });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::elementwise_binary(
        a, b, "sub", [](real x, real y) { return x - y; },
        [](real, real, real) { return std::pair<real, real>(real(1), real(-1)); });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::elementwise_binary(
        a, b, "mul", [](real x, real y) { return x * y; },
        [](real x, real y, real) { return std::pair<real, real>(y, x); });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::elementwise_binary(
        a, b, "div", [](real x, real y) { return x / y; },
        [](real x, real y, real) {
            return std::pair<real, real>(real(1) / y, -x / (y * y));
        });
}

inline Tensor scalar_mul(const Tensor& a, real s) {
    return detail::elementwise_unary(
        a, [s](real x) { return x * s; }, [s](real, real) { return s; });
}

inline Tensor scalar_add(const Tensor& a, real s) {
    return detail::elementwise_unary(
        a, [s](real x) { return x + s; }, [](real, real) { return real(1); });
}

inline Tensor square(const Tensor& a) {
    return detail::elementwise_unary(
        a, [](real x) { return x * x; }, [](real x, real) { return real(2) * x; });
}

inline Tensor sqrt(const Tensor& a) {
    return detail::elementwise_unary(
        a, [](real x) { return std::sqrt(x); },
        [](real, real y) { return real(0.5) / y; });
}

inline Tensor log(const Tensor& a) {
    return detail::elementwise_unary(
        a, [](real x) { return std::log(x); }, [](real x, real) { return real(1) / x; });
}

inline Tensor clamp_min(const Tensor& a, real floor) {
    return detail::elementwise_unary(
        a, [floor](real x) { return x > floor ? x : floor; },
        [floor](real x, real) { return x > floor ? real(1) : real(0); });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, real s) { return scalar_mul(a, s); }
inline Tensor operator*(real s, const Tensor& a) { return scalar_mul(a, s); }

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    detail::NodePtr an = a.node();
    double acc = 0;
    for (real v : an->values) acc += static_cast<double>(v);
    detail::Node* ap = an.get();
    auto node = detail::make_result({1}, {static_cast<real>(acc)}, {an}, [ap](detail::Node& self) {
        if (!ap->requires_grad) return;
        ap->ensure_grad();
        real g = self.grad[0];
        for (auto& x : ap->grad) x += g;
    });
    return Tensor(node);
}

inline Tensor mean(const Tensor& a) {
    std::int64_t n = a.numel();
    DEEPSIM_CHECK(n > 0, "mean of an empty tensor");
    detail::NodePtr an = a.node();
    double acc = 0;
    for (real v : an->values) acc += static_cast<double>(v);
    detail::Node* ap = an.get();
    real inv = real(1) / static_cast<real>(n);
    auto node = detail::make_result({1}, {static_cast<real>(acc / static_cast<double>(n))}, {an},
                                    [ap, inv](detail::Node& self) {
                                        if (!ap->requires_grad) return;
                                        ap->ensure_grad();
                                        real g = self.grad[0] * inv;
                                        for (auto& x : ap->grad) x += g;
                                    });
    return Tensor(node);
}

// [N,C,H,W] -> [N,1,H,W], summing across channels.
inline Tensor sum_channels(const Tensor& a) {
    DEEPSIM_CHECK(a.shape().size() == 4, "sum_channels expects NCHW, got ", shape_str(a.shape()));
    const Shape& s = a.shape();
    int N = s[0], C = s[1], H = s[2], W = s[3];
    std::int64_t hw = std::int64_t(H) * W;
    detail::NodePtr an = a.node();
    std::vector<real> out(static_cast<std::size_t>(N) * hw, real(0));
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const real* src = an->values.data() + (std::int64_t(n) * C + c) * hw;
            real* dst = out.data() + std::int64_t(n) * hw;
            for (std::int64_t i = 0; i < hw; ++i) dst[i] += src[i];
        }
    }
    detail::Node* ap = an.get();
    auto node = detail::make_result({N, 1, H, W}, std::move(out), {an},
                                    [ap, N, C, hw](detail::Node& self) {
                                        if (!ap->requires_grad) return;
                                        ap->ensure_grad();
                                        for (int n = 0; n < N; ++n) {
                                            const real* g = self.grad.data() + std::int64_t(n) * hw;
                                            for (int c = 0; c < C; ++c) {
                                                real* dst = ap->grad.data() + (std::int64_t(n) * C + c) * hw;
                                                for (std::int64_t i = 0; i < hw; ++i) dst[i] += g[i];
                                            }
                                        }
                                    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    DEEPSIM_CHECK(a.shape().size() == 4 && b.shape().size() == 4,
                  "concat_channels expects NCHW tensors");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    DEEPSIM_CHECK(sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3],
                  "concat_channels: mismatched extents ", shape_str(sa), " vs ", shape_str(sb));
    int N = sa[0], Ca = sa[1], Cb = sb[1], H = sa[2], W = sa[3];
    std::int64_t hw = std::int64_t(H) * W;
    detail::NodePtr an = a.node(), bn = b.node();
    std::vector<real> out(static_cast<std::size_t>(N) * (Ca + Cb) * hw);
    for (int n = 0; n < N; ++n) {
        std::copy_n(an->values.data() + std::int64_t(n) * Ca * hw, Ca * hw,
                    out.data() + std::int64_t(n) * (Ca + Cb) * hw);
        std::copy_n(bn->values.data() + std::int64_t(n) * Cb * hw, Cb * hw,
                    out.data() + (std::int64_t(n) * (Ca + Cb) + Ca) * hw);
    }
    detail::Node* ap = an.get();
    detail::Node* bp = bn.get();
    auto node = detail::make_result({N, Ca + Cb, H, W}, std::move(out), {an, bn},
                                    [ap, bp, N, Ca, Cb, hw](detail::Node& self) {
                                        for (int n = 0; n < N; ++n) {
                                            const real* g = self.grad.data() + std::int64_t(n) * (Ca + Cb) * hw;
                                            if (ap->requires_grad) {
                                                ap->ensure_grad();
                                                real* dst = ap->grad.data() + std::int64_t(n) * Ca * hw;
                                                for (std::int64_t i = 0; i < Ca * hw; ++i) dst[i] += g[i];
                                            }
                                            if (bp->requires_grad) {
                                                bp->ensure_grad();
                                                real* dst = bp->grad.data() + std::int64_t(n) * Cb * hw;
                                                for (std::int64_t i = 0; i < Cb * hw; ++i) dst[i] += g[Ca * hw + i];
                                            }
                                        }
                                    });
    return Tensor(node);
}

// Channels [c0, c1) of an NCHW tensor.
inline Tensor slice_channels(const Tensor& a, int c0, int c1) {
    DEEPSIM_CHECK(a.shape().size() == 4, "slice_channels expects NCHW");
    const Shape& s = a.shape();
    DEEPSIM_CHECK(0 <= c0 && c0 < c1 && c1 <= s[1], "slice_channels: bad range [", c0, ",", c1,
                  ") for ", s[1], " channels");
    int N = s[0], C = s[1], H = s[2], W = s[3], Cs = c1 - c0;
    std::int64_t hw = std::int64_t(H) * W;
    detail::NodePtr an = a.node();
    std::vector<real> out(static_cast<std::size_t>(N) * Cs * hw);
    for (int n = 0; n < N; ++n)
        std::copy_n(an->values.data() + (std::int64_t(n) * C + c0) * hw, Cs * hw,
                    out.data() + std::int64_t(n) * Cs * hw);
    detail::Node* ap = an.get();
    auto node = detail::make_result({N, Cs, H, W}, std::move(out), {an},
                                    [ap, N, C, c0, Cs, hw](detail::Node& self) {
                                        if (!ap->requires_grad) return;
                                        ap->ensure_grad();
                                        for (int n = 0; n < N; ++n) {
                                            const real* g = self.grad.data() + std::int64_t(n) * Cs * hw;
                                            real* dst = ap->grad.data() + (std::int64_t(n) * C + c0) * hw;
                                            for (std::int64_t i = 0; i < Cs * hw; ++i) dst[i] += g[i];
                                        }
                                    });
    return Tensor(node);
}

// Stacks same-shaped [1,C,H,W] tensors along the batch dimension. Data
// assembly only; inputs must not require gradients.
inline Tensor concat_batch(const std::vector<Tensor>& parts) {
    DEEPSIM_CHECK(!parts.empty(), "concat_batch: empty input");
    const Shape& s0 = parts[0].shape();
    DEEPSIM_CHECK(s0.size() == 4, "concat_batch expects NCHW tensors");
    std::vector<real> out;
    int total_n = 0;
    for (const auto& p : parts) {
        DEEPSIM_CHECK(!p.requires_grad(), "concat_batch is not differentiable");
        DEEPSIM_CHECK(p.shape().size() == 4 && p.shape()[1] == s0[1] && p.shape()[2] == s0[2] &&
                          p.shape()[3] == s0[3],
                      "concat_batch: mismatched shapes");
        out.insert(out.end(), p.values().begin(), p.values().end());
        total_n += p.shape()[0];
    }
    return Tensor::from_values({total_n, s0[1], s0[2], s0[3]}, std::move(out));
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Activation { linear, leaky_relu, sigmoid, softmax_channels };

inline Tensor leaky_relu(const Tensor& a, real alpha) {
    return detail::elementwise_unary(
        a, [alpha](real x) { return x > 0 ? x : alpha * x; },
        [alpha](real x, real) { return x > 0 ? real(1) : alpha; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::elementwise_unary(
        a, [](real x) { return real(1) / (real(1) + std::exp(-x)); },
        [](real, real y) { return y * (real(1) - y); });
}

inline Tensor softmax_channels(const Tensor& a) {
    DEEPSIM_CHECK(a.shape().size() == 4, "softmax_channels expects NCHW, got ",
                  shape_str(a.shape()));
    const Shape& s = a.shape();
    int N = s[0], C = s[1], H = s[2], W = s[3];
    std::int64_t hw = std::int64_t(H) * W;
    detail::NodePtr an = a.node();
    std::vector<real> out(an->values.size());
    for (int n = 0; n < N; ++n) {
        const real* src = an->values.data() + std::int64_t(n) * C * hw;
        real* dst = out.data() + std::int64_t(n) * C * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            real mx = src[i];
            for (int c = 1; c < C; ++c) mx = std::max(mx, src[c * hw + i]);
            real denom = 0;
            for (int c = 0; c < C; ++c) {
                real e = std::exp(src[c * hw + i] - mx);
                dst[c * hw + i] = e;
                denom += e;
            }
            real inv = real(1) / denom;
            for (int c = 0; c < C; ++c) dst[c * hw + i] *= inv;
        }
    }
    detail::Node* ap = an.get();
    auto node = detail::make_result(s, std::move(out), {an}, [ap, N, C, hw](detail::Node& self) {
        if (!ap->requires_grad) return;
        ap->ensure_grad();
        for (int n = 0; n < N; ++n) {
            const real* y = self.values.data() + std::int64_t(n) * C * hw;
            const real* g = self.grad.data() + std::int64_t(n) * C * hw;
            real* dst = ap->grad.data() + std::int64_t(n) * C * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                real dot = 0;
                for (int c = 0; c < C; ++c) dot += g[c * hw + i] * y[c * hw + i];
                for (int c = 0; c < C; ++c)
                    dst[c * hw + i] += y[c * hw + i] * (g[c * hw + i] - dot);
            }
        }
    });
    return Tensor(node);
}

inline Tensor map_activation(const Tensor& a, Activation kind, real alpha = real(0.2)) {
    switch (kind) {
        case Activation::linear: return a;
        case Activation::leaky_relu: return leaky_relu(a, alpha);
        case Activation::sigmoid: return sigmoid(a);
        case Activation::softmax_channels: return softmax_channels(a);
    }
    DEEPSIM_CHECK(false, "unknown activation");
    return a;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation semantics, stride 1, symmetric zero padding.
// ---------------------------------------------------------------------------

namespace detail {

inline void conv2d_forward_kernel(const real* in, const real* w, const real* bias, real* out,
                                  int N, int Cin, int H, int W, int Cout, int K, int P,
                                  int Ho, int Wo) {
    parallel_for(std::int64_t(N) * Cout, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t nc = lo; nc < hi; ++nc) {
            int n = static_cast<int>(nc / Cout);
            int co = static_cast<int>(nc % Cout);
            real* outp = out + (std::int64_t(n) * Cout + co) * Ho * Wo;
            real b = bias ? bias[co] : real(0);
            std::fill(outp, outp + std::int64_t(Ho) * Wo, b);
            for (int ci = 0; ci < Cin; ++ci) {
                const real* inp = in + (std::int64_t(n) * Cin + ci) * H * W;
                const real* wp = w + ((std::int64_t(co) * Cin + ci) * K) * K;
                for (int kh = 0; kh < K; ++kh) {
                    for (int kw = 0; kw < K; ++kw) {
                        real wv = wp[kh * K + kw];
                        if (wv == real(0)) continue;
                        int ow0 = std::max(0, P - kw);
                        int ow1 = std::min(Wo, W + P - kw);
                        if (ow0 >= ow1) continue;
                        for (int oh = 0; oh < Ho; ++oh) {
                            int ih = oh + kh - P;
                            if (ih < 0 || ih >= H) continue;
                            const real* ip = inp + std::int64_t(ih) * W + (ow0 + kw - P);
                            real* op = outp + std::int64_t(oh) * Wo + ow0;
                            for (int ow = ow0; ow < ow1; ++ow) *op++ += wv * *ip++;
                        }
                    }
                }
            }
        }
    }, 4);
}

}  // namespace detail

inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int padding) {
    DEEPSIM_CHECK(input.shape().size() == 4, "conv2d: input must be NCHW, got ",
                  shape_str(input.shape()));
    DEEPSIM_CHECK(weight.shape().size() == 4, "conv2d: weight must be [Cout,Cin,k,k], got ",
                  shape_str(weight.shape()));
    const Shape& si = input.shape();
    const Shape& sw = weight.shape();
    int N = si[0], Cin = si[1], H = si[2], W = si[3];
    int Cout = sw[0], K = sw[2];
    DEEPSIM_CHECK(sw[2] == sw[3] && K % 2 == 1, "conv2d: kernel must be square with odd extent, got ",
                  shape_str(sw));
    DEEPSIM_CHECK(sw[1] == Cin, "conv2d: input channels ", Cin, " do not match weight ",
                  shape_str(sw), " (expects Cin=", sw[1], ")");
    DEEPSIM_CHECK(padding >= 0, "conv2d: negative padding");
    int Ho = H + 2 * padding - K + 1;
    int Wo = W + 2 * padding - K + 1;
    DEEPSIM_CHECK(Ho >= 1 && Wo >= 1, "conv2d: kernel ", K, " too large for input ",
                  shape_str(si), " with padding ", padding);
    const bool has_bias = bias.defined();
    if (has_bias)
        DEEPSIM_CHECK(bias.shape() == Shape{Cout}, "conv2d: bias shape ", shape_str(bias.shape()),
                      " does not match Cout=", Cout);

    detail::NodePtr in_n = input.node(), w_n = weight.node();
    detail::NodePtr b_n = has_bias ? bias.node() : nullptr;
    std::vector<real> out(static_cast<std::size_t>(N) * Cout * Ho * Wo);
    detail::conv2d_forward_kernel(in_n->values.data(), w_n->values.data(),
                                  has_bias ? b_n->values.data() : nullptr, out.data(), N, Cin, H,
                                  W, Cout, K, padding, Ho, Wo);

    detail::Node* ip = in_n.get();
    detail::Node* wp = w_n.get();
    detail::Node* bp = b_n.get();
    std::vector<detail::NodePtr> parents = {in_n, w_n};
    if (has_bias) parents.push_back(b_n);
    int P = padding;
    auto node = detail::make_result(
        {N, Cout, Ho, Wo}, std::move(out), std::move(parents),
        [ip, wp, bp, N, Cin, H, W, Cout, K, P, Ho, Wo](detail::Node& self) {
            const real* g = self.grad.data();
            if (ip->requires_grad) {
                ip->ensure_grad();
                real* gin = ip->grad.data();
                const real* w = wp->values.data();
                parallel_for(std::int64_t(N) * Cin, [&](std::int64_t lo, std::int64_t hi) {
                    for (std::int64_t nc = lo; nc < hi; ++nc) {
                        int n = static_cast<int>(nc / Cin);
                        int ci = static_cast<int>(nc % Cin);
                        real* ginp = gin + (std::int64_t(n) * Cin + ci) * H * W;
                        for (int co = 0; co < Cout; ++co) {
                            const real* gp = g + (std::int64_t(n) * Cout + co) * Ho * Wo;
                            const real* wrow = w + ((std::int64_t(co) * Cin + ci) * K) * K;
                            for (int kh = 0; kh < K; ++kh) {
                                for (int kw = 0; kw < K; ++kw) {
                                    real wv = wrow[kh * K + kw];
                                    if (wv == real(0)) continue;
                                    int ow0 = std::max(0, P - kw);
                                    int ow1 = std::min(Wo, W + P - kw);
                                    if (ow0 >= ow1) continue;
                                    for (int oh = 0; oh < Ho; ++oh) {
                                        int ih = oh + kh - P;
                                        if (ih < 0 || ih >= H) continue;
                                        real* dst = ginp + std::int64_t(ih) * W + (ow0 + kw - P);
                                        const real* src = gp + std::int64_t(oh) * Wo + ow0;
                                        for (int ow = ow0; ow < ow1; ++ow) *dst++ += wv * *src++;
                                    }
                                }
                            }
                        }
                    }
                }, 4);
            }
            if (wp->requires_grad) {
                wp->ensure_grad();
                real* gw = wp->grad.data();
                const real* in = ip->values.data();
                parallel_for(Cout, [&](std::int64_t lo, std::int64_t hi) {
                    for (std::int64_t co = lo; co < hi; ++co) {
                        for (int ci = 0; ci < Cin; ++ci) {
                            for (int kh = 0; kh < K; ++kh) {
                                for (int kw = 0; kw < K; ++kw) {
                                    double acc = 0;
                                    int ow0 = std::max(0, P - kw);
                                    int ow1 = std::min(Wo, W + P - kw);
                                    for (int n = 0; n < N; ++n) {
                                        const real* gp = g + (std::int64_t(n) * Cout + co) * Ho * Wo;
                                        const real* inp = in + (std::int64_t(n) * Cin + ci) * H * W;
                                        for (int oh = 0; oh < Ho; ++oh) {
                                            int ih = oh + kh - P;
                                            if (ih < 0 || ih >= H || ow0 >= ow1) continue;
                                            const real* a = gp + std::int64_t(oh) * Wo + ow0;
                                            const real* b = inp + std::int64_t(ih) * W + (ow0 + kw - P);
                                            real dot = 0;
                                            for (int ow = ow0; ow < ow1; ++ow) dot += *a++ * *b++;
                                            acc += dot;
                                        }
                                    }
                                    gw[((std::int64_t(co) * Cin + ci) * K + kh) * K + kw] +=
                                        static_cast<real>(acc);
                                }
                            }
                        }
                    }
                }, 1);
            }
            if (bp && bp->requires_grad) {
                bp->ensure_grad();
                for (int n = 0; n < N; ++n) {
                    for (int co = 0; co < Cout; ++co) {
                        const real* gp = g + (std::int64_t(n) * Cout + co) * Ho * Wo;
                        double acc = 0;
                        for (std::int64_t i = 0; i < std::int64_t(Ho) * Wo; ++i) acc += gp[i];
                        bp->grad[static_cast<std::size_t>(co)] += static_cast<real>(acc);
                    }
                }
            }
        });
    return Tensor(node);
}

inline Tensor conv2d(const Tensor& input, const Tensor& weight, int padding) {
    return conv2d(input, weight, Tensor(), padding);
}

// ---------------------------------------------------------------------------
// Pooling / upsampling
// ---------------------------------------------------------------------------

inline Tensor pool_avg2x2(const Tensor& a) {
    DEEPSIM_CHECK(a.shape().size() == 4, "pool_avg2x2 expects NCHW, got ", shape_str(a.shape()));
    const Shape& s = a.shape();
    int N = s[0], C = s[1], H = s[2], W = s[3];
    DEEPSIM_CHECK(H % 2 == 0 && W % 2 == 0, "pool_avg2x2: spatial extents must be even, got ",
                  shape_str(s));
    int Ho = H / 2, Wo = W / 2;
    detail::NodePtr an = a.node();
    std::vector<real> out(static_cast<std::size_t>(N) * C * Ho * Wo);
    for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
        const real* src = an->values.data() + nc * H * W;
        real* dst = out.data() + nc * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh) {
            const real* r0 = src + std::int64_t(2 * oh) * W;
            const real* r1 = r0 + W;
            for (int ow = 0; ow < Wo; ++ow)
                dst[std::int64_t(oh) * Wo + ow] =
                    (r0[2 * ow] + r0[2 * ow + 1] + r1[2 * ow] + r1[2 * ow + 1]) * real(0.25);
        }
    }
    detail::Node* ap = an.get();
    auto node = detail::make_result({N, C, Ho, Wo}, std::move(out), {an},
                                    [ap, N, C, H, W, Ho, Wo](detail::Node& self) {
                                        if (!ap->requires_grad) return;
                                        ap->ensure_grad();
                                        for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
                                            const real* g = self.grad.data() + nc * Ho * Wo;
                                            real* dst = ap->grad.data() + nc * H * W;
                                            for (int oh = 0; oh < Ho; ++oh) {
                                                for (int ow = 0; ow < Wo; ++ow) {
                                                    real q = g[std::int64_t(oh) * Wo + ow] * real(0.25);
                                                    dst[std::int64_t(2 * oh) * W + 2 * ow] += q;
                                                    dst[std::int64_t(2 * oh) * W + 2 * ow + 1] += q;
                                                    dst[std::int64_t(2 * oh + 1) * W + 2 * ow] += q;
                                                    dst[std::int64_t(2 * oh + 1) * W + 2 * ow + 1] += q;
                                                }
                                            }
                                        }
                                    });
    return Tensor(node);
}

inline Tensor upsample_nn2x(const Tensor& a) {
    DEEPSIM_CHECK(a.shape().size() == 4, "upsample_nn2x expects NCHW, got ", shape_str(a.shape()));
    const Shape& s = a.shape();
    int N = s[0], C = s[1], H = s[2], W = s[3];
    int Ho = 2 * H, Wo = 2 * W;
    detail::NodePtr an = a.node();
    std::vector<real> out(static_cast<std::size_t>(N) * C * Ho * Wo);
    for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
        const real* src = an->values.data() + nc * H * W;
        real* dst = out.data() + nc * Ho * Wo;
        for (int h = 0; h < H; ++h) {
            for (int w = 0; w < W; ++w) {
                real v = src[std::int64_t(h) * W + w];
                dst[std::int64_t(2 * h) * Wo + 2 * w] = v;
                dst[std::int64_t(2 * h) * Wo + 2 * w + 1] = v;
                dst[std::int64_t(2 * h + 1) * Wo + 2 * w] = v;
                dst[std::int64_t(2 * h + 1) * Wo + 2 * w + 1] = v;
            }
        }
    }
    detail::Node* ap = an.get();
    auto node = detail::make_result({N, C, Ho, Wo}, std::move(out), {an},
                                    [ap, N, C, H, W, Ho, Wo](detail::Node& self) {
                                        if (!ap->requires_grad) return;
                                        ap->ensure_grad();
                                        for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
                                            const real* g = self.grad.data() + nc * Ho * Wo;
                                            real* dst = ap->grad.data() + nc * H * W;
                                            for (int h = 0; h < H; ++h) {
                                                for (int w = 0; w < W; ++w) {
                                                    dst[std::int64_t(h) * W + w] +=
                                                        g[std::int64_t(2 * h) * Wo + 2 * w] +
                                                        g[std::int64_t(2 * h) * Wo + 2 * w + 1] +
                                                        g[std::int64_t(2 * h + 1) * Wo + 2 * w] +
                                                        g[std::int64_t(2 * h + 1) * Wo + 2 * w + 1];
                                                }
                                            }
                                        }
                                    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

// Train mode normalizes with batch statistics (biased variance) and updates
// the caller-owned running statistics in place (unbiased variance, momentum
// blend). Eval mode applies the running statistics as a fixed affine map.
inline Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           std::vector<real>& running_mean, std::vector<real>& running_var,
                           bool train, real eps = real(1e-5), real momentum = real(0.1)) {
    DEEPSIM_CHECK(x.shape().size() == 4, "batch_norm2d expects NCHW, got ", shape_str(x.shape()));
    const Shape& s = x.shape();
    int N = s[0], C = s[1], H = s[2], W = s[3];
    DEEPSIM_CHECK(gamma.shape() == Shape{C} && beta.shape() == Shape{C},
                  "batch_norm2d: gamma/beta must have shape [C=", C, "]");
    DEEPSIM_CHECK(static_cast<int>(running_mean.size()) == C &&
                      static_cast<int>(running_var.size()) == C,
                  "batch_norm2d: running statistics not sized for ", C, " channels");
    std::int64_t m = std::int64_t(N) * H * W;
    if (train) DEEPSIM_CHECK(m >= 2, "batch_norm2d: train mode needs at least 2 values per channel");

    detail::NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
    std::int64_t hw = std::int64_t(H) * W;

    std::vector<real> mean_c(C), inv_std_c(C);
    for (int c = 0; c < C; ++c) {
        if (train) {
            double acc = 0;
            for (int n = 0; n < N; ++n) {
                const real* p = xn->values.data() + (std::int64_t(n) * C + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
            }
            double mu = acc / static_cast<double>(m);
            double var = 0;
            for (int n = 0; n < N; ++n) {
                const real* p = xn->values.data() + (std::int64_t(n) * C + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    double d = p[i] - mu;
                    var += d * d;
                }
            }
            double var_biased = var / static_cast<double>(m);
            double var_unbiased = m > 1 ? var / static_cast<double>(m - 1) : var_biased;
            running_mean[c] = (real(1) - momentum) * running_mean[c] + momentum * static_cast<real>(mu);
            running_var[c] = (real(1) - momentum) * running_var[c] + momentum * static_cast<real>(var_unbiased);
            mean_c[c] = static_cast<real>(mu);
            inv_std_c[c] = static_cast<real>(1.0 / std::sqrt(var_biased + static_cast<double>(eps)));
        } else {
            mean_c[c] = running_mean[c];
            inv_std_c[c] = static_cast<real>(1.0 / std::sqrt(static_cast<double>(running_var[c]) +
                                                             static_cast<double>(eps)));
        }
    }

    std::vector<real> out(xn->values.size());
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const real* p = xn->values.data() + (std::int64_t(n) * C + c) * hw;
            real* o = out.data() + (std::int64_t(n) * C + c) * hw;
            real g = gn->values[static_cast<std::size_t>(c)];
            real b = bn->values[static_cast<std::size_t>(c)];
            real mu = mean_c[c], is = inv_std_c[c];
            for (std::int64_t i = 0; i < hw; ++i) o[i] = (p[i] - mu) * is * g + b;
        }
    }

    detail::Node* xp = xn.get();
    detail::Node* gp = gn.get();
    detail::Node* bp = bn.get();
    auto node = detail::make_result(
        s, std::move(out), {xn, gn, bn},
        [xp, gp, bp, N, C, hw, m, mean_c, inv_std_c, train](detail::Node& self) {
            for (int c = 0; c < C; ++c) {
                real mu = mean_c[c], is = inv_std_c[c];
                real g = gp->values[static_cast<std::size_t>(c)];
                // Channel-wise sums of dy and dy*xhat feed every gradient.
                double sum_dy = 0, sum_dy_xhat = 0;
                for (int n = 0; n < N; ++n) {
                    const real* xv = xp->values.data() + (std::int64_t(n) * C + c) * hw;
                    const real* dy = self.grad.data() + (std::int64_t(n) * C + c) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) {
                        sum_dy += dy[i];
                        sum_dy_xhat += dy[i] * (xv[i] - mu) * is;
                    }
                }
                if (gp->requires_grad) {
                    gp->ensure_grad();
                    gp->grad[static_cast<std::size_t>(c)] += static_cast<real>(sum_dy_xhat);
                }
                if (bp->requires_grad) {
                    bp->ensure_grad();
                    bp->grad[static_cast<std::size_t>(c)] += static_cast<real>(sum_dy);
                }
                if (xp->requires_grad) {
                    xp->ensure_grad();
                    real mean_dy = static_cast<real>(sum_dy / static_cast<double>(m));
                    real mean_dy_xhat = static_cast<real>(sum_dy_xhat / static_cast<double>(m));
                    for (int n = 0; n < N; ++n) {
                        const real* xv = xp->values.data() + (std::int64_t(n) * C + c) * hw;
                        const real* dy = self.grad.data() + (std::int64_t(n) * C + c) * hw;
                        real* dx = xp->grad.data() + (std::int64_t(n) * C + c) * hw;
                        if (train) {
                            for (std::int64_t i = 0; i < hw; ++i) {
                                real xhat = (xv[i] - mu) * is;
                                dx[i] += g * is * (dy[i] - mean_dy - xhat * mean_dy_xhat);
                            }
                        } else {
                            for (std::int64_t i = 0; i < hw; ++i) dx[i] += g * is * dy[i];
                        }
                    }
                }
            }
        });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

inline Tensor dropout(const Tensor& a, real p, bool train, Rng& rng) {
    DEEPSIM_CHECK(p >= 0 && p < 1, "dropout: probability must be in [0,1), got ", p);
    if (!train || p == real(0)) return a;
    detail::NodePtr an = a.node();
    std::int64_t n = a.numel();
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    auto mask = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(n));
    real scale = real(1) / (real(1) - p);
    std::vector<real> out(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        bool keep = dist(rng) >= static_cast<double>(p);
        (*mask)[static_cast<std::size_t>(i)] = keep;
        out[static_cast<std::size_t>(i)] =
            keep ? an->values[static_cast<std::size_t>(i)] * scale : real(0);
    }
    detail::Node* ap = an.get();
    auto node = detail::make_result(a.shape(), std::move(out), {an},
                                    [ap, mask, scale](detail::Node& self) {
                                        if (!ap->requires_grad) return;
                                        ap->ensure_grad();
                                        for (std::size_t i = 0; i < self.grad.size(); ++i)
                                            if ((*mask)[i]) ap->grad[i] += self.grad[i] * scale;
                                    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    real lr = real(1e-4);
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);
    std::int64_t step = 0;

    struct Moments {
        std::vector<real> m, v;
    };
    std::unordered_map<const void*, Moments> moments;
};

// One Adam update with bias correction. Gradients are left untouched; the
// caller decides when to zero them (gradient accumulation relies on this).
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
    for (const auto& p : params)
        DEEPSIM_CHECK(p.has_grad(), "adam_step: parameter missing gradient");
    state.step += 1;
    double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.step));
    for (auto& p : params) {
        auto& mom = state.moments[p.id()];
        std::size_t n = static_cast<std::size_t>(p.numel());
        if (mom.m.empty()) {
            mom.m.assign(n, real(0));
            mom.v.assign(n, real(0));
        }
        const auto& g = p.grad();
        auto& val = p.mutable_values();
        for (std::size_t i = 0; i < n; ++i) {
            mom.m[i] = state.beta1 * mom.m[i] + (real(1) - state.beta1) * g[i];
            mom.v[i] = state.beta2 * mom.v[i] + (real(1) - state.beta2) * g[i] * g[i];
            double mhat = static_cast<double>(mom.m[i]) / bc1;
            double vhat = static_cast<double>(mom.v[i]) / bc2;
            val[i] -= static_cast<real>(static_cast<double>(state.lr) * mhat /
                                        (std::sqrt(vhat) + static_cast<double>(state.eps)));
        }
    }
}

inline void zero_grads(std::vector<Tensor>& params) {
    for (auto& p : params) p.zero_grad();
}

}  // namespace deepsim
