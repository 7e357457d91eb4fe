#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "diffir/tensor.hpp"

namespace diffir::ag {

// Reverse-mode autodiff on a dynamic graph. Each op allocates a node holding
// the forward value and a closure that scatters the node's gradient into its
// parents. Graphs are built per forward pass and dropped when the root goes
// out of scope; parameter leaves persist across passes and accumulate grads
// until zero_grad().
struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand, same shape as value
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    Tensor& g() {
        if (grad.data.empty()) grad = Tensor::zeros(value.shape);
        return grad;
    }
    void zero_grad() {
        if (!grad.data.empty()) std::fill(grad.data.begin(), grad.data.end(), 0.0);
    }
};

using Var = std::shared_ptr<Node>;

inline Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

inline Var param(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return n;
}

inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->is_leaf = false;
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

// Runs reverse-mode accumulation from a scalar root.
inline void backward(const Var& root) {
    if (root->value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!root->requires_grad) return;

    // iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->g().data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// ---- elementwise ----

inline Var add(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    return make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            auto& ga = a->g();
            for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += n.grad[i];
        }
        if (b->requires_grad) {
            auto& gb = b->g();
            for (int64_t i = 0; i < n.grad.numel(); ++i) gb[i] += n.grad[i];
        }
    });
}

inline Var sub(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "sub");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    return make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            auto& ga = a->g();
            for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += n.grad[i];
        }
        if (b->requires_grad) {
            auto& gb = b->g();
            for (int64_t i = 0; i < n.grad.numel(); ++i) gb[i] -= n.grad[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            auto& ga = a->g();
            for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            auto& gb = b->g();
            for (int64_t i = 0; i < n.grad.numel(); ++i) gb[i] += n.grad[i] * a->value[i];
        }
    });
}

inline Var scale(const Var& a, double s) {
    Tensor out = a->value;
    for (auto& v : out.data) v *= s;
    return make_op(std::move(out), {a}, [a, s](Node& n) {
        auto& ga = a->g();
        for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += n.grad[i] * s;
    });
}

inline Var detach(const Var& a) { return constant(a->value); }

inline Var leaky_relu(const Var& a, double slope = 0.2) {
    Tensor out = a->value;
    for (auto& v : out.data) v = v > 0 ? v : slope * v;
    return make_op(std::move(out), {a}, [a, slope](Node& n) {
        auto& ga = a->g();
        for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += n.grad[i] * (a->value[i] > 0 ? 1.0 : slope);
    });
}

inline Var gelu(const Var& a) {
    static constexpr double kInvSqrt2 = 0.70710678118654752440;
    static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    Tensor out = a->value;
    for (auto& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    return make_op(std::move(out), {a}, [a](Node& n) {
        auto& ga = a->g();
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            double x = a->value[i];
            double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            ga[i] += n.grad[i] * (cdf + x * pdf);
        }
    });
}

// ---- linear algebra ----

// x: (in), w: (out, in), b: (out)
inline Var linear(const Var& x, const Var& w, const Var& b) {
    int64_t in = x->value.numel();
    if (w->value.rank() != 2 || w->value.dim(1) != in || b->value.numel() != w->value.dim(0))
        throw std::invalid_argument("linear: weight/bias/input width mismatch");
    int64_t out_n = w->value.dim(0);
    Tensor out({out_n});
    for (int64_t o = 0; o < out_n; ++o) {
        double s = b->value[o];
        const double* wr = &w->value.data[static_cast<size_t>(o * in)];
        for (int64_t i = 0; i < in; ++i) s += wr[i] * x->value[i];
        out[o] = s;
    }
    return make_op(std::move(out), {x, w, b}, [x, w, b, in, out_n](Node& n) {
        if (x->requires_grad) {
            auto& gx = x->g();
            for (int64_t o = 0; o < out_n; ++o) {
                double g = n.grad[o];
                const double* wr = &w->value.data[static_cast<size_t>(o * in)];
                for (int64_t i = 0; i < in; ++i) gx[i] += g * wr[i];
            }
        }
        if (w->requires_grad) {
            auto& gw = w->g();
            for (int64_t o = 0; o < out_n; ++o) {
                double g = n.grad[o];
                double* gwr = &gw.data[static_cast<size_t>(o * in)];
                for (int64_t i = 0; i < in; ++i) gwr[i] += g * x->value[i];
            }
        }
        if (b->requires_grad) {
            auto& gb = b->g();
            for (int64_t o = 0; o < out_n; ++o) gb[o] += n.grad[o];
        }
    });
}

// a: (N, Ca), b: (N, Cb) -> a^T b: (Ca, Cb)
inline Var matmul_tn(const Var& a, const Var& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(0) != b->value.dim(0))
        throw std::invalid_argument("matmul_tn: shape mismatch");
    int64_t n = a->value.dim(0), ca = a->value.dim(1), cb = b->value.dim(1);
    Tensor out({ca, cb});
    for (int64_t k = 0; k < n; ++k) {
        const double* ar = &a->value.data[static_cast<size_t>(k * ca)];
        const double* br = &b->value.data[static_cast<size_t>(k * cb)];
        for (int64_t i = 0; i < ca; ++i) {
            double av = ar[i];
            double* orow = &out.data[static_cast<size_t>(i * cb)];
            for (int64_t j = 0; j < cb; ++j) orow[j] += av * br[j];
        }
    }
    return make_op(std::move(out), {a, b}, [a, b, n, ca, cb](Node& nd) {
        // dA = B G^T  (N,Cb)x(Cb,Ca); dB = A G (N,Ca)x(Ca,Cb)
        if (a->requires_grad) {
            auto& ga = a->g();
            for (int64_t k = 0; k < n; ++k) {
                const double* br = &b->value.data[static_cast<size_t>(k * cb)];
                double* gar = &ga.data[static_cast<size_t>(k * ca)];
                for (int64_t i = 0; i < ca; ++i) {
                    const double* grow = &nd.grad.data[static_cast<size_t>(i * cb)];
                    double s = 0;
                    for (int64_t j = 0; j < cb; ++j) s += grow[j] * br[j];
                    gar[i] += s;
                }
            }
        }
        if (b->requires_grad) {
            auto& gb = b->g();
            for (int64_t k = 0; k < n; ++k) {
                const double* ar = &a->value.data[static_cast<size_t>(k * ca)];
                double* gbr = &gb.data[static_cast<size_t>(k * cb)];
                for (int64_t i = 0; i < ca; ++i) {
                    double av = ar[i];
                    const double* grow = &nd.grad.data[static_cast<size_t>(i * cb)];
                    for (int64_t j = 0; j < cb; ++j) gbr[j] += av * grow[j];
                }
            }
        }
    });
}

// a: (N, C), b: (R, C) -> a b^T: (N, R)
inline Var matmul_nt(const Var& a, const Var& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(1))
        throw std::invalid_argument("matmul_nt: shape mismatch");
    int64_t n = a->value.dim(0), c = a->value.dim(1), r = b->value.dim(0);
    Tensor out({n, r});
    for (int64_t k = 0; k < n; ++k) {
        const double* ar = &a->value.data[static_cast<size_t>(k * c)];
        double* orow = &out.data[static_cast<size_t>(k * r)];
        for (int64_t j = 0; j < r; ++j) {
            const double* br = &b->value.data[static_cast<size_t>(j * c)];
            double s = 0;
            for (int64_t i = 0; i < c; ++i) s += ar[i] * br[i];
            orow[j] = s;
        }
    }
    return make_op(std::move(out), {a, b}, [a, b, n, c, r](Node& nd) {
        if (a->requires_grad) {
            auto& ga = a->g();
            for (int64_t k = 0; k < n; ++k) {
                const double* grow = &nd.grad.data[static_cast<size_t>(k * r)];
                double* gar = &ga.data[static_cast<size_t>(k * c)];
                for (int64_t j = 0; j < r; ++j) {
                    double g = grow[j];
                    const double* br = &b->value.data[static_cast<size_t>(j * c)];
                    for (int64_t i = 0; i < c; ++i) gar[i] += g * br[i];
                }
            }
        }
        if (b->requires_grad) {
            auto& gb = b->g();
            for (int64_t k = 0; k < n; ++k) {
                const double* grow = &nd.grad.data[static_cast<size_t>(k * r)];
                const double* ar = &a->value.data[static_cast<size_t>(k * c)];
                for (int64_t j = 0; j < r; ++j) {
                    double g = grow[j];
                    double* gbr = &gb.data[static_cast<size_t>(j * c)];
                    for (int64_t i = 0; i < c; ++i) gbr[i] += g * ar[i];
                }
            }
        }
    });
}

// ---- convolutions ----

// x: (H, W, Ci), w: (Co, k, k, Ci), b: (Co)
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride = 1, int pad = 1) {
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    if (xv.rank() != 3 || wv.rank() != 4 || xv.dim(2) != wv.dim(3))
        throw std::invalid_argument("conv2d: channel/shape mismatch");
    int64_t h = xv.dim(0), wd = xv.dim(1), ci = xv.dim(2);
    int64_t co = wv.dim(0), k = wv.dim(1);
    if (b->value.numel() != co) throw std::invalid_argument("conv2d: bias width mismatch");
    int64_t ho = (h + 2 * pad - k) / stride + 1;
    int64_t wo = (wd + 2 * pad - k) / stride + 1;
    Tensor out({ho, wo, co});
    for (int64_t oy = 0; oy < ho; ++oy) {
        for (int64_t ox = 0; ox < wo; ++ox) {
            double* orow = &out.data[static_cast<size_t>((oy * wo + ox) * co)];
            for (int64_t c = 0; c < co; ++c) orow[c] = b->value[c];
            for (int64_t ky = 0; ky < k; ++ky) {
                int64_t iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= h) continue;
                for (int64_t kx = 0; kx < k; ++kx) {
                    int64_t ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= wd) continue;
                    const double* xi = &xv.data[static_cast<size_t>((iy * wd + ix) * ci)];
                    const double* wk = &wv.data[static_cast<size_t>(((ky * k + kx) * ci) )];
                    for (int64_t c = 0; c < co; ++c) {
                        const double* wr = wk + c * k * k * ci;
                        double s = 0;
                        for (int64_t i = 0; i < ci; ++i) s += xi[i] * wr[i];
                        orow[c] += s;
                    }
                }
            }
        }
    }
    return make_op(std::move(out), {x, w, b}, [x, w, b, stride, pad, h, wd, ci, co, k, ho, wo](Node& n) {
        const Tensor& xv = x->value;
        const Tensor& wv = w->value;
        const bool gx_on = x->requires_grad, gw_on = w->requires_grad, gb_on = b->requires_grad;
        Tensor* gx = gx_on ? &x->g() : nullptr;
        Tensor* gw = gw_on ? &w->g() : nullptr;
        Tensor* gb = gb_on ? &b->g() : nullptr;
        for (int64_t oy = 0; oy < ho; ++oy) {
            for (int64_t ox = 0; ox < wo; ++ox) {
                const double* grow = &n.grad.data[static_cast<size_t>((oy * wo + ox) * co)];
                if (gb_on)
                    for (int64_t c = 0; c < co; ++c) gb->data[static_cast<size_t>(c)] += grow[c];
                for (int64_t ky = 0; ky < k; ++ky) {
                    int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int64_t kx = 0; kx < k; ++kx) {
                        int64_t ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= wd) continue;
                        const size_t xoff = static_cast<size_t>((iy * wd + ix) * ci);
                        const double* xi = &xv.data[xoff];
                        for (int64_t c = 0; c < co; ++c) {
                            double g = grow[c];
                            if (g == 0.0) continue;
                            const size_t woff = static_cast<size_t>(((c * k + ky) * k + kx) * ci);
                            if (gx_on) {
                                const double* wr = &wv.data[woff];
                                double* gxi = &gx->data[xoff];
                                for (int64_t i = 0; i < ci; ++i) gxi[i] += g * wr[i];
                            }
                            if (gw_on) {
                                double* gwr = &gw->data[woff];
                                for (int64_t i = 0; i < ci; ++i) gwr[i] += g * xi[i];
                            }
                        }
                    }
                }
            }
        }
    });
}

// depthwise: x: (H, W, C), w: (C, k, k), b: (C)
inline Var dwconv2d(const Var& x, const Var& w, const Var& b, int pad = 1) {
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    if (xv.rank() != 3 || wv.rank() != 3 || xv.dim(2) != wv.dim(0))
        throw std::invalid_argument("dwconv2d: channel mismatch");
    int64_t h = xv.dim(0), wd = xv.dim(1), c = xv.dim(2), k = wv.dim(1);
    if (b->value.numel() != c) throw std::invalid_argument("dwconv2d: bias width mismatch");
    Tensor out({h, wd, c});
    for (int64_t oy = 0; oy < h; ++oy) {
        for (int64_t ox = 0; ox < wd; ++ox) {
            double* orow = &out.data[static_cast<size_t>((oy * wd + ox) * c)];
            for (int64_t ch = 0; ch < c; ++ch) orow[ch] = b->value[ch];
            for (int64_t ky = 0; ky < k; ++ky) {
                int64_t iy = oy - pad + ky;
                if (iy < 0 || iy >= h) continue;
                for (int64_t kx = 0; kx < k; ++kx) {
                    int64_t ix = ox - pad + kx;
                    if (ix < 0 || ix >= wd) continue;
                    const double* xi = &xv.data[static_cast<size_t>((iy * wd + ix) * c)];
                    for (int64_t ch = 0; ch < c; ++ch) orow[ch] += xi[ch] * wv.data[static_cast<size_t>((ch * k + ky) * k + kx)];
                }
            }
        }
    }
    return make_op(std::move(out), {x, w, b}, [x, w, b, h, wd, c, k, pad](Node& n) {
        const Tensor& xv = x->value;
        const Tensor& wv = w->value;
        const bool gx_on = x->requires_grad, gw_on = w->requires_grad, gb_on = b->requires_grad;
        Tensor* gx = gx_on ? &x->g() : nullptr;
        Tensor* gw = gw_on ? &w->g() : nullptr;
        Tensor* gb = gb_on ? &b->g() : nullptr;
        for (int64_t oy = 0; oy < h; ++oy) {
            for (int64_t ox = 0; ox < wd; ++ox) {
                const double* grow = &n.grad.data[static_cast<size_t>((oy * wd + ox) * c)];
                if (gb_on)
                    for (int64_t ch = 0; ch < c; ++ch) gb->data[static_cast<size_t>(ch)] += grow[ch];
                for (int64_t ky = 0; ky < k; ++ky) {
                    int64_t iy = oy - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int64_t kx = 0; kx < k; ++kx) {
                        int64_t ix = ox - pad + kx;
                        if (ix < 0 || ix >= wd) continue;
                        const size_t xoff = static_cast<size_t>((iy * wd + ix) * c);
                        for (int64_t ch = 0; ch < c; ++ch) {
                            const size_t woff = static_cast<size_t>((ch * k + ky) * k + kx);
                            if (gx_on) gx->data[xoff + ch] += grow[ch] * wv.data[woff];
                            if (gw_on) gw->data[woff] += grow[ch] * xv.data[xoff + ch];
                        }
                    }
                }
            }
        }
    });
}

// ---- normalization / attention ----

// LayerNorm over the channel axis at each spatial position, no affine.
inline Var layer_norm_channels(const Var& x, double eps = 1e-6) {
    const Tensor& xv = x->value;
    if (xv.rank() != 3) throw std::invalid_argument("layer_norm_channels: expected (H,W,C)");
    int64_t np = xv.dim(0) * xv.dim(1), c = xv.dim(2);
    Tensor out(xv.shape);
    for (int64_t p = 0; p < np; ++p) {
        const double* xi = &xv.data[static_cast<size_t>(p * c)];
        double* oi = &out.data[static_cast<size_t>(p * c)];
        double mu = 0;
        for (int64_t i = 0; i < c; ++i) mu += xi[i];
        mu /= static_cast<double>(c);
        double var = 0;
        for (int64_t i = 0; i < c; ++i) var += (xi[i] - mu) * (xi[i] - mu);
        var /= static_cast<double>(c);
        double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t i = 0; i < c; ++i) oi[i] = (xi[i] - mu) * inv;
    }
    return make_op(std::move(out), {x}, [x, np, c, eps](Node& n) {
        auto& gx = x->g();
        const Tensor& xv = x->value;
        for (int64_t p = 0; p < np; ++p) {
            const double* xi = &xv.data[static_cast<size_t>(p * c)];
            const double* gi = &n.grad.data[static_cast<size_t>(p * c)];
            const double* yi = &n.value.data[static_cast<size_t>(p * c)];
            double mu = 0;
            for (int64_t i = 0; i < c; ++i) mu += xi[i];
            mu /= static_cast<double>(c);
            double var = 0;
            for (int64_t i = 0; i < c; ++i) var += (xi[i] - mu) * (xi[i] - mu);
            var /= static_cast<double>(c);
            double inv = 1.0 / std::sqrt(var + eps);
            double gmean = 0, gydot = 0;
            for (int64_t i = 0; i < c; ++i) {
                gmean += gi[i];
                gydot += gi[i] * yi[i];
            }
            gmean /= static_cast<double>(c);
            gydot /= static_cast<double>(c);
            double* gxo = &gx.data[static_cast<size_t>(p * c)];
            for (int64_t i = 0; i < c; ++i) gxo[i] += inv * (gi[i] - gmean - yi[i] * gydot);
        }
    });
}

// x: (H,W,C), s: (C), t: (C): out = x*s + t, broadcast over positions
inline Var channel_affine(const Var& x, const Var& s, const Var& t) {
    const Tensor& xv = x->value;
    if (xv.rank() != 3 || s->value.numel() != xv.dim(2) || t->value.numel() != xv.dim(2))
        throw std::invalid_argument("channel_affine: width mismatch");
    int64_t np = xv.dim(0) * xv.dim(1), c = xv.dim(2);
    Tensor out(xv.shape);
    for (int64_t p = 0; p < np; ++p)
        for (int64_t i = 0; i < c; ++i)
            out.data[static_cast<size_t>(p * c + i)] = xv.data[static_cast<size_t>(p * c + i)] * s->value[i] + t->value[i];
    return make_op(std::move(out), {x, s, t}, [x, s, t, np, c](Node& n) {
        if (x->requires_grad) {
            auto& gx = x->g();
            for (int64_t p = 0; p < np; ++p)
                for (int64_t i = 0; i < c; ++i)
                    gx.data[static_cast<size_t>(p * c + i)] += n.grad.data[static_cast<size_t>(p * c + i)] * s->value[i];
        }
        if (s->requires_grad) {
            auto& gs = s->g();
            for (int64_t p = 0; p < np; ++p)
                for (int64_t i = 0; i < c; ++i)
                    gs[i] += n.grad.data[static_cast<size_t>(p * c + i)] * x->value.data[static_cast<size_t>(p * c + i)];
        }
        if (t->requires_grad) {
            auto& gt = t->g();
            for (int64_t p = 0; p < np; ++p)
                for (int64_t i = 0; i < c; ++i) gt[i] += n.grad.data[static_cast<size_t>(p * c + i)];
        }
    });
}

// softmax along the last axis of a matrix, per row
inline Var softmax_rows(const Var& x) {
    if (x->value.rank() != 2) throw std::invalid_argument("softmax_rows: expected matrix");
    int64_t r = x->value.dim(0), c = x->value.dim(1);
    Tensor out(x->value.shape);
    for (int64_t i = 0; i < r; ++i) {
        const double* xi = &x->value.data[static_cast<size_t>(i * c)];
        double* oi = &out.data[static_cast<size_t>(i * c)];
        double mx = xi[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
        double z = 0;
        for (int64_t j = 0; j < c; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            z += oi[j];
        }
        for (int64_t j = 0; j < c; ++j) oi[j] /= z;
    }
    return make_op(std::move(out), {x}, [x, r, c](Node& n) {
        auto& gx = x->g();
        for (int64_t i = 0; i < r; ++i) {
            const double* pi = &n.value.data[static_cast<size_t>(i * c)];
            const double* gi = &n.grad.data[static_cast<size_t>(i * c)];
            double dot = 0;
            for (int64_t j = 0; j < c; ++j) dot += pi[j] * gi[j];
            double* gxo = &gx.data[static_cast<size_t>(i * c)];
            for (int64_t j = 0; j < c; ++j) gxo[j] += pi[j] * (gi[j] - dot);
        }
    });
}

// out = x / g, g a positive scalar parameter (attention temperature)
inline Var div_by_scalar_param(const Var& x, const Var& g) {
    if (g->value.numel() != 1) throw std::invalid_argument("div_by_scalar_param: scalar expected");
    double gv = g->value[0];
    Tensor out = x->value;
    for (auto& v : out.data) v /= gv;
    return make_op(std::move(out), {x, g}, [x, g, gv](Node& n) {
        if (x->requires_grad) {
            auto& gx = x->g();
            for (int64_t i = 0; i < n.grad.numel(); ++i) gx[i] += n.grad[i] / gv;
        }
        if (g->requires_grad) {
            double s = 0;
            for (int64_t i = 0; i < n.grad.numel(); ++i) s += n.grad[i] * x->value[i];
            g->g()[0] += -s / (gv * gv);
        }
    });
}

// ---- shape ops ----

inline Var reshape(const Var& x, std::vector<int64_t> shape) {
    if (Tensor::numel_of(shape) != x->value.numel()) throw std::invalid_argument("reshape: numel mismatch");
    Tensor out(std::move(shape), x->value.data);
    return make_op(std::move(out), {x}, [x](Node& n) {
        auto& gx = x->g();
        for (int64_t i = 0; i < n.grad.numel(); ++i) gx[i] += n.grad[i];
    });
}

// space-to-depth by factor r; (H,W,C) -> (H/r, W/r, C*r^2), block row-major
inline Var pixel_unshuffle(const Var& x, int r) {
    const Tensor& xv = x->value;
    if (xv.rank() != 3) throw std::invalid_argument("pixel_unshuffle: expected (H,W,C)");
    int64_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    if (r <= 0 || h % r || w % r) throw std::invalid_argument("pixel_unshuffle: dims not divisible by r");
    int64_t ho = h / r, wo = w / r, co = c * r * r;
    Tensor out({ho, wo, co});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x2 = 0; x2 < w; ++x2)
            for (int64_t ch = 0; ch < c; ++ch)
                out.at3(y / r, x2 / r, ch * r * r + (y % r) * r + (x2 % r)) = xv.at3(y, x2, ch);
    return make_op(std::move(out), {x}, [x, h, w, c, r](Node& n) {
        auto& gx = x->g();
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x2 = 0; x2 < w; ++x2)
                for (int64_t ch = 0; ch < c; ++ch)
                    gx.at3(y, x2, ch) += n.grad.at3(y / r, x2 / r, ch * r * r + (y % r) * r + (x2 % r));
    });
}

// depth-to-space by factor r; inverse of pixel_unshuffle
inline Var pixel_shuffle(const Var& x, int r) {
    const Tensor& xv = x->value;
    if (xv.rank() != 3) throw std::invalid_argument("pixel_shuffle: expected (H,W,C)");
    int64_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    if (r <= 0 || c % (r * r)) throw std::invalid_argument("pixel_shuffle: channels not divisible by r^2");
    int64_t co = c / (r * r);
    Tensor out({h * r, w * r, co});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x2 = 0; x2 < w; ++x2)
            for (int64_t ch = 0; ch < co; ++ch)
                for (int64_t dy = 0; dy < r; ++dy)
                    for (int64_t dx = 0; dx < r; ++dx)
                        out.at3(y * r + dy, x2 * r + dx, ch) = xv.at3(y, x2, ch * r * r + dy * r + dx);
    return make_op(std::move(out), {x}, [x, h, w, co, r](Node& n) {
        auto& gx = x->g();
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x2 = 0; x2 < w; ++x2)
                for (int64_t ch = 0; ch < co; ++ch)
                    for (int64_t dy = 0; dy < r; ++dy)
                        for (int64_t dx = 0; dx < r; ++dx)
                            gx.at3(y, x2, ch * r * r + dy * r + dx) += n.grad.at3(y * r + dy, x2 * r + dx, ch);
    });
}

inline Var global_avg_pool(const Var& x) {
    const Tensor& xv = x->value;
    if (xv.rank() != 3) throw std::invalid_argument("global_avg_pool: expected (H,W,C)");
    int64_t np = xv.dim(0) * xv.dim(1), c = xv.dim(2);
    Tensor out({c});
    for (int64_t p = 0; p < np; ++p)
        for (int64_t i = 0; i < c; ++i) out[i] += xv.data[static_cast<size_t>(p * c + i)];
    for (int64_t i = 0; i < c; ++i) out[i] /= static_cast<double>(np);
    return make_op(std::move(out), {x}, [x, np, c](Node& n) {
        auto& gx = x->g();
        double inv = 1.0 / static_cast<double>(np);
        for (int64_t p = 0; p < np; ++p)
            for (int64_t i = 0; i < c; ++i) gx.data[static_cast<size_t>(p * c + i)] += n.grad[i] * inv;
    });
}

inline Var concat_channels(const Var& a, const Var& b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(1) != bv.dim(1))
        throw std::invalid_argument("concat_channels: spatial mismatch");
    int64_t np = av.dim(0) * av.dim(1), ca = av.dim(2), cb = bv.dim(2);
    Tensor out({av.dim(0), av.dim(1), ca + cb});
    for (int64_t p = 0; p < np; ++p) {
        for (int64_t i = 0; i < ca; ++i) out.data[static_cast<size_t>(p * (ca + cb) + i)] = av.data[static_cast<size_t>(p * ca + i)];
        for (int64_t i = 0; i < cb; ++i) out.data[static_cast<size_t>(p * (ca + cb) + ca + i)] = bv.data[static_cast<size_t>(p * cb + i)];
    }
    return make_op(std::move(out), {a, b}, [a, b, np, ca, cb](Node& n) {
        if (a->requires_grad) {
            auto& ga = a->g();
            for (int64_t p = 0; p < np; ++p)
                for (int64_t i = 0; i < ca; ++i) ga.data[static_cast<size_t>(p * ca + i)] += n.grad.data[static_cast<size_t>(p * (ca + cb) + i)];
        }
        if (b->requires_grad) {
            auto& gb = b->g();
            for (int64_t p = 0; p < np; ++p)
                for (int64_t i = 0; i < cb; ++i) gb.data[static_cast<size_t>(p * cb + i)] += n.grad.data[static_cast<size_t>(p * (ca + cb) + ca + i)];
        }
    });
}

inline Var concat_vec(const std::vector<Var>& parts) {
    int64_t total = 0;
    for (const auto& p : parts) total += p->value.numel();
    Tensor out({total});
    int64_t off = 0;
    for (const auto& p : parts) {
        for (int64_t i = 0; i < p->value.numel(); ++i) out[off + i] = p->value[i];
        off += p->value.numel();
    }
    return make_op(std::move(out), parts, [parts](Node& n) {
        int64_t off = 0;
        for (const auto& p : parts) {
            if (p->requires_grad) {
                auto& gp = p->g();
                for (int64_t i = 0; i < p->value.numel(); ++i) gp[i] += n.grad[off + i];
            }
            off += p->value.numel();
        }
    });
}

// column slice of a matrix: (N, C) -> (N, c1-c0)
inline Var slice_cols(const Var& x, int64_t c0, int64_t c1) {
    if (x->value.rank() != 2 || c0 < 0 || c1 > x->value.dim(1) || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range");
    int64_t n = x->value.dim(0), w = c1 - c0;
    Tensor out({n, w});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < w; ++j) out.at2(i, j) = x->value.at2(i, c0 + j);
    return make_op(std::move(out), {x}, [x, n, c0, w](Node& nd) {
        auto& gx = x->g();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < w; ++j) gx.at2(i, c0 + j) += nd.grad.at2(i, j);
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    int64_t n = parts.front()->value.dim(0);
    int64_t ct = 0;
    for (const auto& p : parts) {
        if (p->value.rank() != 2 || p->value.dim(0) != n) throw std::invalid_argument("concat_cols: row mismatch");
        ct += p->value.dim(1);
    }
    Tensor out({n, ct});
    int64_t off = 0;
    for (const auto& p : parts) {
        int64_t w = p->value.dim(1);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < w; ++j) out.at2(i, off + j) = p->value.at2(i, j);
        off += w;
    }
    return make_op(std::move(out), parts, [parts, n](Node& nd) {
        int64_t off = 0;
        for (const auto& p : parts) {
            int64_t w = p->value.dim(1);
            if (p->requires_grad) {
                auto& gp = p->g();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < w; ++j) gp.at2(i, j) += nd.grad.at2(i, off + j);
            }
            off += w;
        }
    });
}

// pred, base: (H,W,3); mask: (H,W,1), 1 = missing. out = base where known, pred in holes.
inline Var composite_masked(const Var& pred, const Tensor& base, const Tensor& mask) {
    const Tensor& pv = pred->value;
    if (pv.rank() != 3 || base.shape != pv.shape || mask.rank() != 3 || mask.dim(0) != pv.dim(0) || mask.dim(1) != pv.dim(1) || mask.dim(2) != 1)
        throw std::invalid_argument("composite_masked: shape mismatch");
    int64_t np = pv.dim(0) * pv.dim(1), c = pv.dim(2);
    Tensor out(pv.shape);
    for (int64_t p = 0; p < np; ++p) {
        double m = mask.data[static_cast<size_t>(p)];
        for (int64_t i = 0; i < c; ++i)
            out.data[static_cast<size_t>(p * c + i)] = (1.0 - m) * base.data[static_cast<size_t>(p * c + i)] + m * pv.data[static_cast<size_t>(p * c + i)];
    }
    return make_op(std::move(out), {pred}, [pred, mask, np, c](Node& n) {
        auto& gp = pred->g();
        for (int64_t p = 0; p < np; ++p) {
            double m = mask.data[static_cast<size_t>(p)];
            for (int64_t i = 0; i < c; ++i) gp.data[static_cast<size_t>(p * c + i)] += n.grad.data[static_cast<size_t>(p * c + i)] * m;
        }
    });
}

// ---- losses (scalar outputs) ----

// mean |a - b|; subgradient at 0 is 0
inline Var l1_mean(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "l1_mean");
    int64_t n = a->value.numel();
    double s = 0;
    for (int64_t i = 0; i < n; ++i) s += std::abs(a->value[i] - b->value[i]);
    Tensor out = Tensor::scalar(s / static_cast<double>(n));
    return make_op(std::move(out), {a, b}, [a, b, n](Node& nd) {
        double g = nd.grad[0] / static_cast<double>(n);
        Tensor* ga = a->requires_grad ? &a->g() : nullptr;
        Tensor* gb = b->requires_grad ? &b->g() : nullptr;
        for (int64_t i = 0; i < n; ++i) {
            double d = a->value[i] - b->value[i];
            double sg = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            if (ga) (*ga)[i] += g * sg;
            if (gb) (*gb)[i] -= g * sg;
        }
    });
}

// mean (a - b)^2
inline Var mse_mean(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "mse_mean");
    int64_t n = a->value.numel();
    double s = 0;
    for (int64_t i = 0; i < n; ++i) {
        double d = a->value[i] - b->value[i];
        s += d * d;
    }
    Tensor out = Tensor::scalar(s / static_cast<double>(n));
    return make_op(std::move(out), {a, b}, [a, b, n](Node& nd) {
        double g = 2.0 * nd.grad[0] / static_cast<double>(n);
        Tensor* ga = a->requires_grad ? &a->g() : nullptr;
        Tensor* gb = b->requires_grad ? &b->g() : nullptr;
        for (int64_t i = 0; i < n; ++i) {
            double d = a->value[i] - b->value[i];
            if (ga) (*ga)[i] += g * d;
            if (gb) (*gb)[i] -= g * d;
        }
    });
}

// KL(softmax(z) || softmax(zhat)), natural log
inline Var kl_softmax(const Var& zhat, const Var& z) {
    require_same_shape(zhat->value, z->value, "kl_softmax");
    int64_t n = z->value.numel();
    auto softmax = [n](const Tensor& v) {
        std::vector<double> p(static_cast<size_t>(n));
        double mx = v[0];
        for (int64_t i = 1; i < n; ++i) mx = std::max(mx, v[i]);
        double s = 0;
        for (int64_t i = 0; i < n; ++i) {
            p[static_cast<size_t>(i)] = std::exp(v[i] - mx);
            s += p[static_cast<size_t>(i)];
        }
        for (auto& x : p) x /= s;
        return p;
    };
    auto p = softmax(z->value);
    auto q = softmax(zhat->value);
    double kl = 0;
    for (int64_t i = 0; i < n; ++i) kl += p[static_cast<size_t>(i)] * std::log(p[static_cast<size_t>(i)] / q[static_cast<size_t>(i)]);
    Tensor out = Tensor::scalar(kl);
    return make_op(std::move(out), {zhat, z}, [zhat, z, p, q, n, kl](Node& nd) {
        double g = nd.grad[0];
        if (zhat->requires_grad) {
            auto& gz = zhat->g();
            for (int64_t i = 0; i < n; ++i) gz[i] += g * (q[static_cast<size_t>(i)] - p[static_cast<size_t>(i)]);
        }
        if (z->requires_grad) {
            auto& gz = z->g();
            for (int64_t i = 0; i < n; ++i) {
                double lr = std::log(p[static_cast<size_t>(i)] / q[static_cast<size_t>(i)]);
                gz[i] += g * p[static_cast<size_t>(i)] * (lr - kl);
            }
        }
    });
}

inline Var add_scalar_vars(const Var& a, const Var& b) {
    if (a->value.numel() != 1 || b->value.numel() != 1) throw std::invalid_argument("add_scalar_vars: scalars expected");
    return add(a, b);
}

}  // namespace diffir::ag
