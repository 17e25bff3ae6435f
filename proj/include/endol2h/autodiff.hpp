#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "endol2h/errors.hpp"
#include "endol2h/rng.hpp"
#include "endol2h/tensor.hpp"

namespace endol2h {

// Define-by-run reverse-mode tape. Nodes are created in topological order;
// backward() replays them in reverse. Templated on the scalar so training
// runs in float (bit-exact checkpoints) while oracle tests run in double.
// Inner products accumulate in double regardless of T.
template <typename T>
class Tape {
public:
    using Id = int;

    Id input(Tensor<T> v, bool needs_grad = false, std::string name = "") {
        nodes_.push_back(Node{std::move(v), {}, nullptr, needs_grad, std::move(name)});
        return static_cast<Id>(nodes_.size() - 1);
    }

    Tensor<T>& value(Id id) { return nodes_[id].value; }
    const Tensor<T>& value(Id id) const { return nodes_[id].value; }

    // Gradient buffers are allocated on first touch so that pure-eval
    // forwards on large images cost no extra memory.
    Tensor<T>& grad(Id id) {
        Node& n = nodes_[id];
        if (n.grad.shape.empty()) n.grad = Tensor<T>(n.value.shape);
        return n.grad;
    }
    bool needs_grad(Id id) const { return nodes_[id].needs_grad; }

    void backward(Id loss) {
        if (nodes_[loss].value.size() != 1)
            throw NumericalError("backward: loss must be scalar");
        grad(loss).data[0] = T(1);
        for (Id i = loss; i >= 0; --i) {
            Node& n = nodes_[i];
            // Untouched grad means the node did not feed the loss.
            if (n.needs_grad && n.backward && !n.grad.shape.empty()) n.backward(*this, n);
        }
    }

    // NaN gradient -> numerical-failure error naming the layer.
    void check_finite_grads() const {
        for (const Node& n : nodes_)
            if (n.needs_grad && !n.grad.shape.empty() && !n.grad.all_finite())
                throw NumericalError("non-finite gradient in " +
                                     (n.name.empty() ? std::string("<unnamed>") : n.name));
    }

    std::size_t node_count() const { return nodes_.size(); }

    // ---- elementwise ----

    Id add(Id a, Id b) {
        Tensor<T> out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += value(b).data[i];
        return make(std::move(out), {a, b}, [a, b](Tape& t, Node& n) {
            accumulate(t.grad(a), n.grad, 1.0);
            accumulate(t.grad(b), n.grad, 1.0);
        });
    }

    Id sub(Id a, Id b) {
        Tensor<T> out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= value(b).data[i];
        return make(std::move(out), {a, b}, [a, b](Tape& t, Node& n) {
            accumulate(t.grad(a), n.grad, 1.0);
            accumulate(t.grad(b), n.grad, -1.0);
        });
    }

    Id mul(Id a, Id b) {
        Tensor<T> out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= value(b).data[i];
        return make(std::move(out), {a, b}, [a, b](Tape& t, Node& n) {
            const auto& va = t.value(a);
            const auto& vb = t.value(b);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                t.grad(a).data[i] += n.grad.data[i] * vb.data[i];
                t.grad(b).data[i] += n.grad.data[i] * va.data[i];
            }
        });
    }

    Id scale(Id a, double c) {
        Tensor<T> out = value(a);
        for (T& v : out.data) v = static_cast<T>(v * c);
        return make(std::move(out), {a},
                    [a, c](Tape& t, Node& n) { accumulate(t.grad(a), n.grad, c); });
    }

    Id add_const(Id a, double c) {
        Tensor<T> out = value(a);
        for (T& v : out.data) v = static_cast<T>(v + c);
        return make(std::move(out), {a},
                    [a](Tape& t, Node& n) { accumulate(t.grad(a), n.grad, 1.0); });
    }

    Id sqrt_fn(Id a) {
        Tensor<T> out = value(a);
        for (T& v : out.data) v = static_cast<T>(std::sqrt(static_cast<double>(v)));
        Id id = make(std::move(out), {a}, nullptr);
        nodes_[id].backward = [a, id](Tape& t, Node& n) {
            const auto& y = t.value(id);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                double denom = std::max(2.0 * static_cast<double>(y.data[i]), 1e-12);
                t.grad(a).data[i] += static_cast<T>(n.grad.data[i] / denom);
            }
        };
        return id;
    }

    Id relu(Id a) { return leaky_relu(a, 0.0); }

    Id leaky_relu(Id a, double slope) {
        Tensor<T> out = value(a);
        for (T& v : out.data)
            if (v < T(0)) v = static_cast<T>(v * slope);
        return make(std::move(out), {a}, [a, slope](Tape& t, Node& n) {
            const auto& x = t.value(a);
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                t.grad(a).data[i] +=
                    static_cast<T>(n.grad.data[i] * (x.data[i] > T(0) ? 1.0 : slope));
        });
    }

    Id tanh_fn(Id a) {
        Tensor<T> out = value(a);
        for (T& v : out.data) v = static_cast<T>(std::tanh(static_cast<double>(v)));
        Id id = make(std::move(out), {a}, nullptr);
        nodes_[id].backward = [a, id](Tape& t, Node& n) {
            const auto& y = t.value(id);
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                t.grad(a).data[i] += static_cast<T>(
                    n.grad.data[i] * (1.0 - static_cast<double>(y.data[i]) * y.data[i]));
        };
        return id;
    }

    Id sigmoid_fn(Id a) {
        Tensor<T> out = value(a);
        for (T& v : out.data)
            v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
        Id id = make(std::move(out), {a}, nullptr);
        nodes_[id].backward = [a, id](Tape& t, Node& n) {
            const auto& y = t.value(id);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                double s = static_cast<double>(y.data[i]);
                t.grad(a).data[i] += static_cast<T>(n.grad.data[i] * s * (1.0 - s));
            }
        };
        return id;
    }

    // ---- reductions ----

    Id sum_all(Id a) {
        double s = 0.0;
        for (T v : value(a).data) s += static_cast<double>(v);
        Tensor<T> out({1});
        out.data[0] = static_cast<T>(s);
        return make(std::move(out), {a}, [a](Tape& t, Node& n) {
            T g = n.grad.data[0];
            for (T& v : t.grad(a).data) v += g;
        });
    }

    Id mean_all(Id a) { return scale(sum_all(a), 1.0 / value(a).size()); }

    // ---- shape ----

    Id reshape(Id a, std::vector<int> shape) {
        if (Tensor<T>::numel(shape) != value(a).size())
            throw ConfigError("reshape: element count mismatch");
        Tensor<T> out = value(a);
        out.shape = std::move(shape);
        return make(std::move(out), {a}, [a](Tape& t, Node& n) {
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                t.grad(a).data[i] += n.grad.data[i];
        });
    }

    Id transpose2(Id a) {
        const auto& x = value(a);
        int r = x.shape[0], c = x.shape[1];
        Tensor<T> out({c, r});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) out.at2(j, i) = x.at2(i, j);
        return make(std::move(out), {a}, [a, r, c](Tape& t, Node& n) {
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) t.grad(a).at2(i, j) += n.grad.at2(j, i);
        });
    }

    Id concat_channels(Id a, Id b) {
        const auto& xa = value(a);
        const auto& xb = value(b);
        int N = xa.shape[0], Ca = xa.shape[1], Cb = xb.shape[1], H = xa.shape[2],
            W = xa.shape[3];
        if (xb.shape[0] != N || xb.shape[2] != H || xb.shape[3] != W)
            throw ConfigError("concat_channels: spatial/batch mismatch");
        Tensor<T> out({N, Ca + Cb, H, W});
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < Ca; ++c)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) out.at4(n, c, y, x) = xa.at4(n, c, y, x);
            for (int c = 0; c < Cb; ++c)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) out.at4(n, Ca + c, y, x) = xb.at4(n, c, y, x);
        }
        return make(std::move(out), {a, b}, [a, b, N, Ca, Cb, H, W](Tape& t, Node& n) {
            for (int i = 0; i < N; ++i) {
                for (int c = 0; c < Ca; ++c)
                    for (int y = 0; y < H; ++y)
                        for (int x = 0; x < W; ++x)
                            t.grad(a).at4(i, c, y, x) += n.grad.at4(i, c, y, x);
                for (int c = 0; c < Cb; ++c)
                    for (int y = 0; y < H; ++y)
                        for (int x = 0; x < W; ++x)
                            t.grad(b).at4(i, c, y, x) += n.grad.at4(i, Ca + c, y, x);
            }
        });
    }

    Id pad2d(Id a, int top, int bottom, int left, int right) {
        const auto& x = value(a);
        int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
        Tensor<T> out({N, C, H + top + bottom, W + left + right});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx)
                        out.at4(n, c, y + top, xx + left) = x.at4(n, c, y, xx);
        return make(std::move(out), {a}, [a, N, C, H, W, top, left](Tape& t, Node& n) {
            for (int i = 0; i < N; ++i)
                for (int c = 0; c < C; ++c)
                    for (int y = 0; y < H; ++y)
                        for (int xx = 0; xx < W; ++xx)
                            t.grad(a).at4(i, c, y, xx) += n.grad.at4(i, c, y + top, xx + left);
        });
    }

    Id crop2d(Id a, int y0, int x0, int H, int W) {
        const auto& x = value(a);
        int N = x.shape[0], C = x.shape[1];
        Tensor<T> out({N, C, H, W});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx)
                        out.at4(n, c, y, xx) = x.at4(n, c, y + y0, xx + x0);
        return make(std::move(out), {a}, [a, N, C, H, W, y0, x0](Tape& t, Node& n) {
            for (int i = 0; i < N; ++i)
                for (int c = 0; c < C; ++c)
                    for (int y = 0; y < H; ++y)
                        for (int xx = 0; xx < W; ++xx)
                            t.grad(a).at4(i, c, y + y0, xx + x0) += n.grad.at4(i, c, y, xx);
        });
    }

    // Resize to exactly (H,W); matches decoder shapes for odd input sizes.
    Id fit2d(Id a, int H, int W) {
        const auto& x = value(a);
        Id cur = a;
        if (x.shape[2] > H || x.shape[3] > W)
            cur = crop2d(cur, 0, 0, std::min(x.shape[2], H), std::min(x.shape[3], W));
        const auto& c = value(cur);
        if (c.shape[2] < H || c.shape[3] < W)
            cur = pad2d(cur, 0, H - c.shape[2], 0, W - c.shape[3]);
        return cur;
    }

    // ---- matmul / softmax ----

    Id matmul(Id a, Id b) {
        const auto& A = value(a);
        const auto& B = value(b);
        int m = A.shape[0], k = A.shape[1], n2 = B.shape[1];
        if (B.shape[0] != k) throw ConfigError("matmul: inner dims mismatch");
        Tensor<T> out({m, n2});
        // ikj order keeps the inner loop streaming over contiguous rows; the
        // SAB affinity matrices are N x N with N in the thousands, so this
        // matters even single-threaded.
        std::vector<double> row(n2);
        for (int i = 0; i < m; ++i) {
            std::fill(row.begin(), row.end(), 0.0);
            const T* arow = &A.data[static_cast<std::size_t>(i) * k];
            for (int p = 0; p < k; ++p) {
                double av = static_cast<double>(arow[p]);
                if (av == 0.0) continue;
                const T* brow = &B.data[static_cast<std::size_t>(p) * n2];
                for (int j = 0; j < n2; ++j) row[j] += av * brow[j];
            }
            T* orow = &out.data[static_cast<std::size_t>(i) * n2];
            for (int j = 0; j < n2; ++j) orow[j] = static_cast<T>(row[j]);
        }
        return make(std::move(out), {a, b}, [a, b, m, k, n2](Tape& t, Node& n) {
            const auto& A = t.value(a);
            const auto& B = t.value(b);
            auto& ga = t.grad(a);
            auto& gb = t.grad(b);
            // dA = dY * B^T : for each (i,p) dot contiguous rows of dY and B.
            for (int i = 0; i < m; ++i) {
                const T* grow = &n.grad.data[static_cast<std::size_t>(i) * n2];
                T* garow = &ga.data[static_cast<std::size_t>(i) * k];
                for (int p = 0; p < k; ++p) {
                    const T* brow = &B.data[static_cast<std::size_t>(p) * n2];
                    double acc = 0.0;
                    for (int j = 0; j < n2; ++j)
                        acc += static_cast<double>(grow[j]) * brow[j];
                    garow[p] += static_cast<T>(acc);
                }
                // dB += A^T * dY : scatter row i of dY scaled by A(i,p).
                const T* arow = &A.data[static_cast<std::size_t>(i) * k];
                for (int p = 0; p < k; ++p) {
                    double av = static_cast<double>(arow[p]);
                    if (av == 0.0) continue;
                    T* gbrow = &gb.data[static_cast<std::size_t>(p) * n2];
                    for (int j = 0; j < n2; ++j)
                        gbrow[j] += static_cast<T>(av * grow[j]);
                }
            }
        });
    }

    // ---- batch handling ----

    // {N,C,H,W} -> {1,C,H,W} view copy of sample n0.
    Id slice_batch(Id a, int n0) {
        const auto& x = value(a);
        int C = x.shape[1], H = x.shape[2], W = x.shape[3];
        std::size_t per = static_cast<std::size_t>(C) * H * W;
        Tensor<T> out({1, C, H, W});
        std::copy_n(x.data.begin() + static_cast<std::size_t>(n0) * per, per, out.data.begin());
        return make(std::move(out), {a}, [a, n0, per](Tape& t, Node& n) {
            auto& g = t.grad(a);
            for (std::size_t i = 0; i < per; ++i)
                g.data[static_cast<std::size_t>(n0) * per + i] += n.grad.data[i];
        });
    }

    // Inverse of slice_batch: concatenates {1,C,H,W} samples along dim 0.
    Id stack_batch(const std::vector<Id>& parts) {
        if (parts.empty()) throw ConfigError("stack_batch: empty list");
        const auto& first = value(parts[0]);
        int C = first.shape[1], H = first.shape[2], W = first.shape[3];
        std::size_t per = static_cast<std::size_t>(C) * H * W;
        Tensor<T> out({static_cast<int>(parts.size()), C, H, W});
        for (std::size_t s = 0; s < parts.size(); ++s) {
            const auto& p = value(parts[s]);
            if (p.shape != first.shape) throw ConfigError("stack_batch: shape mismatch");
            std::copy_n(p.data.begin(), per, out.data.begin() + s * per);
        }
        return make(std::move(out), parts, [parts, per](Tape& t, Node& n) {
            for (std::size_t s = 0; s < parts.size(); ++s) {
                auto& g = t.grad(parts[s]);
                for (std::size_t i = 0; i < per; ++i) g.data[i] += n.grad.data[s * per + i];
            }
        });
    }

    // Softmax of a {N,C} matrix normalized over the N axis (per column).
    Id softmax_dim0(Id a) {
        const auto& x = value(a);
        int N = x.shape[0], C = x.shape[1];
        Tensor<T> out({N, C});
        for (int c = 0; c < C; ++c) {
            double mx = -1e300;
            for (int i = 0; i < N; ++i) mx = std::max(mx, static_cast<double>(x.at2(i, c)));
            double z = 0.0;
            for (int i = 0; i < N; ++i) z += std::exp(static_cast<double>(x.at2(i, c)) - mx);
            for (int i = 0; i < N; ++i)
                out.at2(i, c) =
                    static_cast<T>(std::exp(static_cast<double>(x.at2(i, c)) - mx) / z);
        }
        Id id = make(std::move(out), {a}, nullptr);
        nodes_[id].backward = [a, id, N, C](Tape& t, Node& n) {
            const auto& y = t.value(id);
            for (int c = 0; c < C; ++c) {
                double dot = 0.0;
                for (int i = 0; i < N; ++i)
                    dot += static_cast<double>(n.grad.at2(i, c)) * y.at2(i, c);
                for (int i = 0; i < N; ++i)
                    t.grad(a).at2(i, c) += static_cast<T>(
                        static_cast<double>(y.at2(i, c)) * (n.grad.at2(i, c) - dot));
            }
        };
        return id;
    }

    // ---- convolutions ----

    // x {N,Cin,H,W}, w {Cout,Cin,k,k}, b {Cout}; zero padding.
    Id conv2d(Id xi, Id wi, Id bi, int stride, int pad, std::string name = "") {
        const auto& x = value(xi);
        const auto& w = value(wi);
        int N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
        int Cout = w.shape[0], k = w.shape[2];
        if (w.shape[1] != Cin)
            throw ConfigError("conv2d " + name + ": channel mismatch, input " + x.shape_str() +
                              " weights " + w.shape_str());
        int Ho = (H + 2 * pad - k) / stride + 1;
        int Wo = (W + 2 * pad - k) / stride + 1;
        if (Ho < 1 || Wo < 1)
            throw ConfigError("conv2d " + name + ": output collapses for input " + x.shape_str());
        Tensor<T> out({N, Cout, Ho, Wo});
        const auto& b = value(bi);
        for (int n = 0; n < N; ++n)
            for (int co = 0; co < Cout; ++co)
                for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox) {
                        double acc = static_cast<double>(b.data[co]);
                        for (int ci = 0; ci < Cin; ++ci)
                            for (int ky = 0; ky < k; ++ky) {
                                int iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= H) continue;
                                for (int kx = 0; kx < k; ++kx) {
                                    int ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= W) continue;
                                    acc += static_cast<double>(x.at4(n, ci, iy, ix)) *
                                           w.at4(co, ci, ky, kx);
                                }
                            }
                        out.at4(n, co, oy, ox) = static_cast<T>(acc);
                    }
        Id id = make(std::move(out), {xi, wi, bi},
                     [xi, wi, bi, N, Cin, H, W, Cout, k, Ho, Wo, stride, pad](Tape& t, Node& nd) {
                         const auto& x = t.value(xi);
                         const auto& w = t.value(wi);
                         auto& gx = t.grad(xi);
                         auto& gw = t.grad(wi);
                         auto& gb = t.grad(bi);
                         for (int n = 0; n < N; ++n)
                             for (int co = 0; co < Cout; ++co)
                                 for (int oy = 0; oy < Ho; ++oy)
                                     for (int ox = 0; ox < Wo; ++ox) {
                                         T g = nd.grad.at4(n, co, oy, ox);
                                         if (g == T(0)) continue;
                                         gb.data[co] += g;
                                         for (int ci = 0; ci < Cin; ++ci)
                                             for (int ky = 0; ky < k; ++ky) {
                                                 int iy = oy * stride + ky - pad;
                                                 if (iy < 0 || iy >= H) continue;
                                                 for (int kx = 0; kx < k; ++kx) {
                                                     int ix = ox * stride + kx - pad;
                                                     if (ix < 0 || ix >= W) continue;
                                                     gx.at4(n, ci, iy, ix) +=
                                                         g * w.at4(co, ci, ky, kx);
                                                     gw.at4(co, ci, ky, kx) +=
                                                         g * x.at4(n, ci, iy, ix);
                                                 }
                                             }
                                     }
                     });
        nodes_[id].name = std::move(name);
        return id;
    }

    // x {N,Cin,H,W}, w {Cin,Cout,k,k}, b {Cout}; out = (H-1)*stride - 2*pad + k.
    Id conv_transpose2d(Id xi, Id wi, Id bi, int stride, int pad, std::string name = "") {
        const auto& x = value(xi);
        const auto& w = value(wi);
        int N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
        int Cout = w.shape[1], k = w.shape[2];
        if (w.shape[0] != Cin)
            throw ConfigError("conv_transpose2d " + name + ": channel mismatch");
        int Ho = (H - 1) * stride - 2 * pad + k;
        int Wo = (W - 1) * stride - 2 * pad + k;
        if (Ho < 1 || Wo < 1) throw ConfigError("conv_transpose2d " + name + ": bad dims");
        Tensor<T> out({N, Cout, Ho, Wo});
        const auto& b = value(bi);
        for (int n = 0; n < N; ++n)
            for (int co = 0; co < Cout; ++co)
                for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox) out.at4(n, co, oy, ox) = b.data[co];
        for (int n = 0; n < N; ++n)
            for (int ci = 0; ci < Cin; ++ci)
                for (int iy = 0; iy < H; ++iy)
                    for (int ix = 0; ix < W; ++ix) {
                        T v = x.at4(n, ci, iy, ix);
                        for (int co = 0; co < Cout; ++co)
                            for (int ky = 0; ky < k; ++ky) {
                                int oy = iy * stride + ky - pad;
                                if (oy < 0 || oy >= Ho) continue;
                                for (int kx = 0; kx < k; ++kx) {
                                    int ox = ix * stride + kx - pad;
                                    if (ox < 0 || ox >= Wo) continue;
                                    out.at4(n, co, oy, ox) +=
                                        static_cast<T>(static_cast<double>(v) * w.at4(ci, co, ky, kx));
                                }
                            }
                    }
        Id id = make(std::move(out), {xi, wi, bi},
                     [xi, wi, bi, N, Cin, H, W, Cout, k, Ho, Wo, stride, pad](Tape& t, Node& nd) {
                         const auto& x = t.value(xi);
                         const auto& w = t.value(wi);
                         auto& gx = t.grad(xi);
                         auto& gw = t.grad(wi);
                         auto& gb = t.grad(bi);
                         for (int co = 0; co < Cout; ++co) {
                             double acc = 0.0;
                             for (int n = 0; n < N; ++n)
                                 for (int oy = 0; oy < Ho; ++oy)
                                     for (int ox = 0; ox < Wo; ++ox)
                                         acc += static_cast<double>(nd.grad.at4(n, co, oy, ox));
                             gb.data[co] += static_cast<T>(acc);
                         }
                         for (int n = 0; n < N; ++n)
                             for (int ci = 0; ci < Cin; ++ci)
                                 for (int iy = 0; iy < H; ++iy)
                                     for (int ix = 0; ix < W; ++ix) {
                                         double gxa = 0.0;
                                         T xv = x.at4(n, ci, iy, ix);
                                         for (int co = 0; co < Cout; ++co)
                                             for (int ky = 0; ky < k; ++ky) {
                                                 int oy = iy * stride + ky - pad;
                                                 if (oy < 0 || oy >= Ho) continue;
                                                 for (int kx = 0; kx < k; ++kx) {
                                                     int ox = ix * stride + kx - pad;
                                                     if (ox < 0 || ox >= Wo) continue;
                                                     T g = nd.grad.at4(n, co, oy, ox);
                                                     gxa += static_cast<double>(g) *
                                                            w.at4(ci, co, ky, kx);
                                                     gw.at4(ci, co, ky, kx) += g * xv;
                                                 }
                                             }
                                         gx.at4(n, ci, iy, ix) += static_cast<T>(gxa);
                                     }
                     });
        nodes_[id].name = std::move(name);
        return id;
    }

    // ---- batchnorm / dropout ----

    // Per-channel normalization over (N,H,W). Running stats live outside the
    // tape and are updated as a forward side effect in training mode.
    Id batchnorm2d(Id xi, Id gi, Id bi, Tensor<T>* running_mean, Tensor<T>* running_var,
                   bool training, double momentum = 0.1, double eps = 1e-5,
                   std::string name = "") {
        const auto& x = value(xi);
        int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
        int M = N * H * W;
        std::vector<double> mean(C, 0.0), var(C, 0.0);
        if (training) {
            for (int c = 0; c < C; ++c) {
                double s = 0.0;
                for (int n = 0; n < N; ++n)
                    for (int y = 0; y < H; ++y)
                        for (int xx = 0; xx < W; ++xx) s += static_cast<double>(x.at4(n, c, y, xx));
                mean[c] = s / M;
                double v = 0.0;
                for (int n = 0; n < N; ++n)
                    for (int y = 0; y < H; ++y)
                        for (int xx = 0; xx < W; ++xx) {
                            double d = static_cast<double>(x.at4(n, c, y, xx)) - mean[c];
                            v += d * d;
                        }
                var[c] = v / M;
                running_mean->data[c] = static_cast<T>((1.0 - momentum) * running_mean->data[c] +
                                                       momentum * mean[c]);
                running_var->data[c] = static_cast<T>((1.0 - momentum) * running_var->data[c] +
                                                      momentum * var[c]);
            }
        } else {
            for (int c = 0; c < C; ++c) {
                mean[c] = static_cast<double>(running_mean->data[c]);
                var[c] = static_cast<double>(running_var->data[c]);
            }
        }
        const auto& g = value(gi);
        const auto& b = value(bi);
        Tensor<T> out(x.shape);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                double inv = 1.0 / std::sqrt(var[c] + eps);
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx)
                        out.at4(n, c, y, xx) = static_cast<T>(
                            (static_cast<double>(x.at4(n, c, y, xx)) - mean[c]) * inv *
                                g.data[c] +
                            b.data[c]);
            }
        Id id = make(std::move(out), {xi, gi, bi},
                     [xi, gi, bi, N, C, H, W, M, mean, var, eps, training](Tape& t, Node& nd) {
                         const auto& x = t.value(xi);
                         const auto& g = t.value(gi);
                         for (int c = 0; c < C; ++c) {
                             double inv = 1.0 / std::sqrt(var[c] + eps);
                             double sum_dy = 0.0, sum_dy_xhat = 0.0;
                             for (int n = 0; n < N; ++n)
                                 for (int y = 0; y < H; ++y)
                                     for (int xx = 0; xx < W; ++xx) {
                                         double dy = static_cast<double>(nd.grad.at4(n, c, y, xx));
                                         double xhat =
                                             (static_cast<double>(x.at4(n, c, y, xx)) - mean[c]) *
                                             inv;
                                         sum_dy += dy;
                                         sum_dy_xhat += dy * xhat;
                                     }
                             t.grad(gi).data[c] += static_cast<T>(sum_dy_xhat);
                             t.grad(bi).data[c] += static_cast<T>(sum_dy);
                             double gc = static_cast<double>(g.data[c]);
                             for (int n = 0; n < N; ++n)
                                 for (int y = 0; y < H; ++y)
                                     for (int xx = 0; xx < W; ++xx) {
                                         double dy = static_cast<double>(nd.grad.at4(n, c, y, xx));
                                         double dx;
                                         if (training) {
                                             double xhat = (static_cast<double>(x.at4(n, c, y, xx)) -
                                                            mean[c]) *
                                                           inv;
                                             dx = gc * inv / M *
                                                  (M * dy - sum_dy - xhat * sum_dy_xhat);
                                         } else {
                                             dx = gc * inv * dy;
                                         }
                                         t.grad(xi).at4(n, c, y, xx) += static_cast<T>(dx);
                                     }
                         }
                     });
        nodes_[id].name = std::move(name);
        return id;
    }

    // Inverted dropout; identity in eval mode.
    Id dropout(Id a, double rate, Rng& rng, bool training) {
        if (!training || rate == 0.0) return a;
        const auto& x = value(a);
        std::vector<T> mask(x.size());
        double keep = 1.0 - rate;
        for (std::size_t i = 0; i < mask.size(); ++i)
            mask[i] = rng.uniform() < keep ? static_cast<T>(1.0 / keep) : T(0);
        Tensor<T> out = x;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask[i];
        return make(std::move(out), {a}, [a, mask = std::move(mask)](Tape& t, Node& n) {
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                t.grad(a).data[i] += n.grad.data[i] * mask[i];
        });
    }

    // ---- resampling ----

    Id resize_bilinear(Id a, int Ho, int Wo) {
        const auto& x = value(a);
        int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
        struct Tap {
            int i0, i1;
            double w0, w1;
        };
        auto taps_for = [](int in, int out) {
            std::vector<Tap> taps(out);
            for (int o = 0; o < out; ++o) {
                double c = (o + 0.5) * in / static_cast<double>(out) - 0.5;
                c = std::clamp(c, 0.0, in - 1.0);
                int i0 = static_cast<int>(std::floor(c));
                int i1 = std::min(i0 + 1, in - 1);
                double f = c - i0;
                taps[o] = {i0, i1, 1.0 - f, f};
            }
            return taps;
        };
        auto ty = taps_for(H, Ho);
        auto tx = taps_for(W, Wo);
        Tensor<T> out({N, C, Ho, Wo});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox)
                        out.at4(n, c, oy, ox) = static_cast<T>(
                            ty[oy].w0 * (tx[ox].w0 * x.at4(n, c, ty[oy].i0, tx[ox].i0) +
                                         tx[ox].w1 * x.at4(n, c, ty[oy].i0, tx[ox].i1)) +
                            ty[oy].w1 * (tx[ox].w0 * x.at4(n, c, ty[oy].i1, tx[ox].i0) +
                                         tx[ox].w1 * x.at4(n, c, ty[oy].i1, tx[ox].i1)));
        return make(std::move(out), {a}, [a, N, C, Ho, Wo, ty, tx](Tape& t, Node& nd) {
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int oy = 0; oy < Ho; ++oy)
                        for (int ox = 0; ox < Wo; ++ox) {
                            double g = static_cast<double>(nd.grad.at4(n, c, oy, ox));
                            t.grad(a).at4(n, c, ty[oy].i0, tx[ox].i0) +=
                                static_cast<T>(g * ty[oy].w0 * tx[ox].w0);
                            t.grad(a).at4(n, c, ty[oy].i0, tx[ox].i1) +=
                                static_cast<T>(g * ty[oy].w0 * tx[ox].w1);
                            t.grad(a).at4(n, c, ty[oy].i1, tx[ox].i0) +=
                                static_cast<T>(g * ty[oy].w1 * tx[ox].w0);
                            t.grad(a).at4(n, c, ty[oy].i1, tx[ox].i1) +=
                                static_cast<T>(g * ty[oy].w1 * tx[ox].w1);
                        }
        });
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void(Tape&, Node&)> backward;
        bool needs_grad = false;
        std::string name;
    };

    std::deque<Node> nodes_;

    Id make(Tensor<T> out, std::vector<Id> parents, std::function<void(Tape&, Node&)> bw) {
        bool ng = false;
        for (Id p : parents) ng = ng || nodes_[p].needs_grad;
        nodes_.push_back(Node{std::move(out), {}, nullptr, ng, ""});
        Node& n = nodes_.back();
        if (ng && bw) n.backward = std::move(bw);
        return static_cast<Id>(nodes_.size() - 1);
    }

    static void accumulate(Tensor<T>& dst, const Tensor<T>& src, double c) {
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst.data[i] += static_cast<T>(static_cast<double>(src.data[i]) * c);
    }
};

}  // namespace endol2h
