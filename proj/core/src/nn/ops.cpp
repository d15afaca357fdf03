#include "alamo/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace alamo::nn {

std::string shape_string(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

namespace {

void require_rank3(const Shape& s, const char* op) {
    if (s.size() != 3) throw ShapeError(std::string(op) + ": expected [C,H,W], got " + shape_string(s));
}

}  // namespace

namespace kernels {

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride,
                         std::size_t pad) {
    require_rank3(x.shape(), "conv2d");
    if (w.rank() != 4) throw ShapeError("conv2d: weights must be [Cout,Cin,kh,kw]");
    const std::size_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Cin) {
        throw ShapeError("conv2d: weight input channels " + std::to_string(w.dim(1)) + " != input channels " +
                         std::to_string(Cin));
    }
    if (!b.empty() && b.size() != Cout) throw ShapeError("conv2d: bias length != output channels");
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    if (H + 2 * pad < kh || W + 2 * pad < kw) throw ShapeError("conv2d: kernel larger than padded input");
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor<T> out({Cout, Ho, Wo});
    const auto P = static_cast<std::ptrdiff_t>(pad);

    for (std::size_t o = 0; o < Cout; ++o) {
        T* op = out.data() + o * Ho * Wo;
        std::fill(op, op + Ho * Wo, b.empty() ? T{0} : b[o]);
        for (std::size_t i = 0; i < Cin; ++i) {
            const T* ip = x.data() + i * H * W;
            const T* wp = w.data() + (o * Cin + i) * kh * kw;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const T wv = wp[ky * kw + kx];
                    const std::ptrdiff_t offy = static_cast<std::ptrdiff_t>(ky) - P;
                    const std::ptrdiff_t offx = static_cast<std::ptrdiff_t>(kx) - P;
                    if (stride == 1) {
                        const auto lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -offx));
                        const auto hi = static_cast<std::size_t>(
                            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(Wo), static_cast<std::ptrdiff_t>(W) - offx));
                        for (std::size_t oy = 0; oy < Ho; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) + offy;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            T* orow = op + oy * Wo;
                            const T* irow = ip + static_cast<std::size_t>(iy) * W;
                            for (std::size_t ox = lo; ox < hi; ++ox) {
                                orow[ox] += wv * irow[static_cast<std::ptrdiff_t>(ox) + offx];
                            }
                        }
                    } else {
                        for (std::size_t oy = 0; oy < Ho; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride) + offy;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t ox = 0; ox < Wo; ++ox) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride) + offx;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                op[oy * Wo + ox] += wv * ip[static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, std::size_t stride,
                     std::size_t pad, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
    const std::size_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t Ho = gout.dim(1), Wo = gout.dim(2);
    const auto P = static_cast<std::ptrdiff_t>(pad);

    if (gb) {
        for (std::size_t o = 0; o < Cout; ++o) {
            const T* g = gout.data() + o * Ho * Wo;
            T acc{0};
            for (std::size_t k = 0; k < Ho * Wo; ++k) acc += g[k];
            (*gb)[o] += acc;
        }
    }
    if (!gx && !gw) return;

    std::vector<T> rowacc(Wo);
    for (std::size_t o = 0; o < Cout; ++o) {
        const T* gp = gout.data() + o * Ho * Wo;
        for (std::size_t i = 0; i < Cin; ++i) {
            const T* ip = x.data() + i * H * W;
            T* gip = gx ? gx->data() + i * H * W : nullptr;
            const std::size_t widx = (o * Cin + i) * kh * kw;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const T wv = w[widx + ky * kw + kx];
                    const std::ptrdiff_t offy = static_cast<std::ptrdiff_t>(ky) - P;
                    const std::ptrdiff_t offx = static_cast<std::ptrdiff_t>(kx) - P;
                    if (stride == 1) {
                        const auto lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -offx));
                        const auto hi = static_cast<std::size_t>(
                            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(Wo), static_cast<std::ptrdiff_t>(W) - offx));
                        if (gw) std::fill(rowacc.begin(), rowacc.end(), T{0});
                        for (std::size_t oy = 0; oy < Ho; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) + offy;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            const T* grow = gp + oy * Wo;
                            const std::size_t ibase = static_cast<std::size_t>(iy) * W;
                            if (gip) {
                                T* girow = gip + ibase;
                                for (std::size_t ox = lo; ox < hi; ++ox) {
                                    girow[static_cast<std::ptrdiff_t>(ox) + offx] += wv * grow[ox];
                                }
                            }
                            if (gw) {
                                const T* irow = ip + ibase;
                                for (std::size_t ox = lo; ox < hi; ++ox) {
                                    rowacc[ox] += grow[ox] * irow[static_cast<std::ptrdiff_t>(ox) + offx];
                                }
                            }
                        }
                        if (gw) {
                            T acc{0};
                            for (std::size_t ox = lo; ox < hi; ++ox) acc += rowacc[ox];
                            (*gw)[widx + ky * kw + kx] += acc;
                        }
                    } else {
                        T acc{0};
                        for (std::size_t oy = 0; oy < Ho; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride) + offy;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t ox = 0; ox < Wo; ++ox) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride) + offx;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                const std::size_t ii = static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix);
                                const T g = gp[oy * Wo + ox];
                                if (gip) gip[ii] += wv * g;
                                acc += g * ip[ii];
                            }
                        }
                        if (gw) (*gw)[widx + ky * kw + kx] += acc;
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor<T> conv_transpose2_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    require_rank3(x.shape(), "transposed_conv2");
    if (w.rank() != 4 || w.dim(2) != 2 || w.dim(3) != 2) throw ShapeError("transposed_conv2: weights must be [Cin,Cout,2,2]");
    const std::size_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (w.dim(0) != Cin) throw ShapeError("transposed_conv2: weight input channels mismatch");
    const std::size_t Cout = w.dim(1);
    if (!b.empty() && b.size() != Cout) throw ShapeError("transposed_conv2: bias length mismatch");
    const std::size_t Ho = 2 * H, Wo = 2 * W;
    Tensor<T> out({Cout, Ho, Wo});
    for (std::size_t o = 0; o < Cout; ++o) {
        T* op = out.data() + o * Ho * Wo;
        std::fill(op, op + Ho * Wo, b.empty() ? T{0} : b[o]);
        for (std::size_t i = 0; i < Cin; ++i) {
            const T* ip = x.data() + i * H * W;
            const T* wp = w.data() + (i * Cout + o) * 4;
            for (std::size_t y = 0; y < H; ++y) {
                const T* irow = ip + y * W;
                for (std::size_t a = 0; a < 2; ++a) {
                    T* orow = op + (2 * y + a) * Wo;
                    const T w0 = wp[a * 2 + 0];
                    const T w1 = wp[a * 2 + 1];
                    for (std::size_t xx = 0; xx < W; ++xx) {
                        orow[2 * xx] += w0 * irow[xx];
                        orow[2 * xx + 1] += w1 * irow[xx];
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
void conv_transpose2_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, Tensor<T>* gx,
                              Tensor<T>* gw, Tensor<T>* gb) {
    const std::size_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t Cout = w.dim(1);
    const std::size_t Ho = 2 * H, Wo = 2 * W;
    for (std::size_t o = 0; o < Cout; ++o) {
        const T* gp = gout.data() + o * Ho * Wo;
        if (gb) {
            T acc{0};
            for (std::size_t k = 0; k < Ho * Wo; ++k) acc += gp[k];
            (*gb)[o] += acc;
        }
        for (std::size_t i = 0; i < Cin; ++i) {
            const T* ip = x.data() + i * H * W;
            T* gip = gx ? gx->data() + i * H * W : nullptr;
            const std::size_t widx = (i * Cout + o) * 4;
            for (std::size_t a = 0; a < 2; ++a) {
                const T w0 = w[widx + a * 2 + 0];
                const T w1 = w[widx + a * 2 + 1];
                T acc0{0}, acc1{0};
                for (std::size_t y = 0; y < H; ++y) {
                    const T* grow = gp + (2 * y + a) * Wo;
                    const T* irow = ip + y * W;
                    if (gip) {
                        T* girow = gip + y * W;
                        for (std::size_t xx = 0; xx < W; ++xx) girow[xx] += w0 * grow[2 * xx] + w1 * grow[2 * xx + 1];
                    }
                    if (gw) {
                        for (std::size_t xx = 0; xx < W; ++xx) {
                            acc0 += irow[xx] * grow[2 * xx];
                            acc1 += irow[xx] * grow[2 * xx + 1];
                        }
                    }
                }
                if (gw) {
                    (*gw)[widx + a * 2 + 0] += acc0;
                    (*gw)[widx + a * 2 + 1] += acc1;
                }
            }
        }
    }
}

template <typename T>
Tensor<T> avg_pool2_forward(const Tensor<T>& x) {
    require_rank3(x.shape(), "avg_pool2");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (H % 2 != 0 || W % 2 != 0) {
        throw ShapeError("avg_pool2: odd spatial dims " + shape_string(x.shape()));
    }
    Tensor<T> out({C, H / 2, W / 2});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H / 2; ++y)
            for (std::size_t xx = 0; xx < W / 2; ++xx) {
                out.at(c, y, xx) = (x.at(c, 2 * y, 2 * xx) + x.at(c, 2 * y, 2 * xx + 1) + x.at(c, 2 * y + 1, 2 * xx) +
                                    x.at(c, 2 * y + 1, 2 * xx + 1)) *
                                   T(0.25);
            }
    return out;
}

template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
    require_rank3(x.shape(), "upsample_nearest2");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor<T> out({C, 2 * H, 2 * W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < 2 * H; ++y)
            for (std::size_t xx = 0; xx < 2 * W; ++xx) out.at(c, y, xx) = x.at(c, y / 2, xx / 2);
    return out;
}

}  // namespace kernels

// ---------------------------------------------------------------------------

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
    auto out = kernels::conv2d_forward(tape.value(x), tape.value(w), tape.value(b), stride, pad);
    return tape.push(std::move(out), {x, w, b}, [x, w, b, stride, pad](Tape<T>& t, const Tensor<T>& g) {
        kernels::conv2d_backward(t.value(x), t.value(w), g, stride, pad, t.grad_sink(x), t.grad_sink(w),
                                 t.grad_sink(b));
    });
}

template <typename T>
Var conv_transpose2(Tape<T>& tape, Var x, Var w, Var b) {
    auto out = kernels::conv_transpose2_forward(tape.value(x), tape.value(w), tape.value(b));
    return tape.push(std::move(out), {x, w, b}, [x, w, b](Tape<T>& t, const Tensor<T>& g) {
        kernels::conv_transpose2_backward(t.value(x), t.value(w), g, t.grad_sink(x), t.grad_sink(w), t.grad_sink(b));
    });
}

template <typename T>
Var elu(Tape<T>& tape, Var x) {
    const Tensor<T>& in = tape.value(x);
    Tensor<T> out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= T{0} ? in[i] : std::expm1(in[i]);
    const Var y{tape.size()};  // id of the node about to be pushed
    return tape.push(std::move(out), {x}, [x, y](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>* gx = t.grad_sink(x);
        if (!gx) return;
        const Tensor<T>& in = t.value(x);
        const Tensor<T>& out = t.value(y);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += in[i] >= T{0} ? g[i] : g[i] * (out[i] + T{1});
    });
}

template <typename T>
Var avg_pool2(Tape<T>& tape, Var x) {
    auto out = kernels::avg_pool2_forward(tape.value(x));
    return tape.push(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>* gx = t.grad_sink(x);
        if (!gx) return;
        const std::size_t C = g.dim(0), Hh = g.dim(1), Wh = g.dim(2);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < 2 * Hh; ++y)
                for (std::size_t xx = 0; xx < 2 * Wh; ++xx) gx->at(c, y, xx) += g.at(c, y / 2, xx / 2) * T(0.25);
    });
}

template <typename T>
Var concat_channels(Tape<T>& tape, const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape& s0 = tape.value(xs.front()).shape();
    require_rank3(s0, "concat_channels");
    std::size_t C = 0;
    for (Var v : xs) {
        const Shape& s = tape.value(v).shape();
        require_rank3(s, "concat_channels");
        if (s[1] != s0[1] || s[2] != s0[2]) throw ShapeError("concat_channels: spatial dims differ");
        C += s[0];
    }
    Tensor<T> out({C, s0[1], s0[2]});
    std::size_t off = 0;
    for (Var v : xs) {
        const Tensor<T>& in = tape.value(v);
        std::copy(in.data(), in.data() + in.size(), out.data() + off);
        off += in.size();
    }
    return tape.push(std::move(out), xs, [xs](Tape<T>& t, const Tensor<T>& g) {
        std::size_t off = 0;
        for (Var v : xs) {
            const std::size_t n = t.value(v).size();
            if (Tensor<T>* gx = t.grad_sink(v)) {
                for (std::size_t i = 0; i < n; ++i) (*gx)[i] += g[off + i];
            }
            off += n;
        }
    });
}

template <typename T>
Var softmax_groups(Tape<T>& tape, Var logits, std::size_t group) {
    const Tensor<T>& in = tape.value(logits);
    require_rank3(in.shape(), "softmax_groups");
    if (group == 0 || in.dim(0) % group != 0) throw ShapeError("softmax_groups: channels not divisible by group");
    const std::size_t G = in.dim(0) / group, P = in.dim(1) * in.dim(2);
    Tensor<T> out(in.shape());
    for (std::size_t gi = 0; gi < G; ++gi) {
        const T* ip = in.data() + gi * group * P;
        T* op = out.data() + gi * group * P;
        for (std::size_t p = 0; p < P; ++p) {
            T m = ip[p];
            for (std::size_t k = 1; k < group; ++k) m = std::max(m, ip[k * P + p]);
            T s{0};
            for (std::size_t k = 0; k < group; ++k) {
                op[k * P + p] = std::exp(ip[k * P + p] - m);
                s += op[k * P + p];
            }
            const T inv = T{1} / s;
            for (std::size_t k = 0; k < group; ++k) op[k * P + p] *= inv;
        }
    }
    const Var y{tape.size()};
    return tape.push(std::move(out), {logits}, [logits, y, group, G, P](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>* gx = t.grad_sink(logits);
        if (!gx) return;
        const Tensor<T>& pr = t.value(y);
        for (std::size_t gi = 0; gi < G; ++gi) {
            const std::size_t base = gi * group * P;
            for (std::size_t p = 0; p < P; ++p) {
                T dot{0};
                for (std::size_t k = 0; k < group; ++k) dot += g[base + k * P + p] * pr[base + k * P + p];
                for (std::size_t k = 0; k < group; ++k) {
                    const std::size_t i = base + k * P + p;
                    (*gx)[i] += pr[i] * (g[i] - dot);
                }
            }
        }
    });
}

template <typename T>
Var cross_entropy_groups(Tape<T>& tape, Var logits, std::span<const std::uint8_t> labels, std::size_t group) {
    const Tensor<T>& in = tape.value(logits);
    require_rank3(in.shape(), "cross_entropy");
    if (group == 0 || in.dim(0) % group != 0) throw ShapeError("cross_entropy: channels not divisible by group");
    const std::size_t G = in.dim(0) / group, P = in.dim(1) * in.dim(2);
    if (labels.size() != G * P) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(G * P) +
                         " predicted voxels");
    }
    for (std::uint8_t l : labels) {
        if (l >= group) throw std::out_of_range("cross_entropy: label id " + std::to_string(l) + " >= class count");
    }
    const std::size_t N = G * P;
    // Softmax probabilities are stored for the backward pass.
    auto probs = std::make_shared<std::vector<T>>(in.size());
    double total = 0.0;
    for (std::size_t gi = 0; gi < G; ++gi) {
        const T* ip = in.data() + gi * group * P;
        T* pp = probs->data() + gi * group * P;
        for (std::size_t p = 0; p < P; ++p) {
            T m = ip[p];
            for (std::size_t k = 1; k < group; ++k) m = std::max(m, ip[k * P + p]);
            T s{0};
            for (std::size_t k = 0; k < group; ++k) {
                pp[k * P + p] = std::exp(ip[k * P + p] - m);
                s += pp[k * P + p];
            }
            const T inv = T{1} / s;
            for (std::size_t k = 0; k < group; ++k) pp[k * P + p] *= inv;
            const std::size_t l = labels[gi * P + p];
            total += -(static_cast<double>(ip[l * P + p] - m) - std::log(static_cast<double>(s)));
        }
    }
    Tensor<T> out(Shape{}, static_cast<T>(total / static_cast<double>(N)));
    std::vector<std::uint8_t> lab(labels.begin(), labels.end());
    return tape.push(std::move(out), {logits},
                     [logits, probs, lab = std::move(lab), group, G, P, N](Tape<T>& t, const Tensor<T>& g) {
                         Tensor<T>* gx = t.grad_sink(logits);
                         if (!gx) return;
                         const T scale = g[0] / static_cast<T>(N);
                         for (std::size_t gi = 0; gi < G; ++gi) {
                             const std::size_t base = gi * group * P;
                             for (std::size_t k = 0; k < group; ++k)
                                 for (std::size_t p = 0; p < P; ++p) {
                                     const std::size_t i = base + k * P + p;
                                     const T onehot = lab[gi * P + p] == k ? T{1} : T{0};
                                     (*gx)[i] += ((*probs)[i] - onehot) * scale;
                                 }
                         }
                     });
}

template <typename T>
Var normalize_batch(Tape<T>& tape, Var x, Var scale, Var shift, StatScope scope, double eps,
                    NormStats<T>* stats_out) {
    const Tensor<T>& in = tape.value(x);
    require_rank3(in.shape(), "normalize");
    const std::size_t C = in.dim(0), P = in.dim(1) * in.dim(2);
    if (tape.value(scale).size() != C || tape.value(shift).size() != C) {
        throw ShapeError("normalize: scale/shift length != channels");
    }
    // Groups of voxels sharing statistics: one per channel, or one for the whole sample.
    const std::size_t groups = scope == StatScope::PerChannel ? C : 1;
    const std::size_t gsize = scope == StatScope::PerChannel ? P : C * P;
    std::vector<double> mean(groups), inv(groups);
    NormStats<T> stats;
    stats.mean.resize(C);
    stats.var.resize(C);
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const T* p = in.data() + gi * gsize;
        double m = 0.0;
        for (std::size_t i = 0; i < gsize; ++i) m += p[i];
        m /= static_cast<double>(gsize);
        double v = 0.0;
        for (std::size_t i = 0; i < gsize; ++i) v += (p[i] - m) * (p[i] - m);
        v /= static_cast<double>(gsize);
        mean[gi] = m;
        inv[gi] = 1.0 / std::sqrt(v + eps);
        if (scope == StatScope::PerChannel) {
            stats.mean[gi] = m;
            stats.var[gi] = v;
        } else {
            std::fill(stats.mean.begin(), stats.mean.end(), m);
            std::fill(stats.var.begin(), stats.var.end(), v);
        }
    }
    if (stats_out) *stats_out = stats;

    const Tensor<T>& gamma = tape.value(scale);
    const Tensor<T>& beta = tape.value(shift);
    auto xhat = std::make_shared<Tensor<T>>(in.shape());
    Tensor<T> out(in.shape());
    for (std::size_t c = 0; c < C; ++c) {
        const std::size_t gi = scope == StatScope::PerChannel ? c : 0;
        for (std::size_t i = 0; i < P; ++i) {
            const std::size_t k = c * P + i;
            const T h = static_cast<T>((in[k] - mean[gi]) * inv[gi]);
            (*xhat)[k] = h;
            out[k] = h * gamma[c] + beta[c];
        }
    }
    return tape.push(std::move(out), {x, scale, shift},
                     [x, scale, shift, xhat, inv, scope, C, P, groups, gsize](Tape<T>& t, const Tensor<T>& g) {
                         const Tensor<T>& gamma = t.value(scale);
                         if (Tensor<T>* gb = t.grad_sink(shift)) {
                             for (std::size_t c = 0; c < C; ++c) {
                                 T acc{0};
                                 for (std::size_t i = 0; i < P; ++i) acc += g[c * P + i];
                                 (*gb)[c] += acc;
                             }
                         }
                         if (Tensor<T>* gg = t.grad_sink(scale)) {
                             for (std::size_t c = 0; c < C; ++c) {
                                 T acc{0};
                                 for (std::size_t i = 0; i < P; ++i) acc += g[c * P + i] * (*xhat)[c * P + i];
                                 (*gg)[c] += acc;
                             }
                         }
                         Tensor<T>* gx = t.grad_sink(x);
                         if (!gx) return;
                         for (std::size_t gi = 0; gi < groups; ++gi) {
                             double s1 = 0.0, s2 = 0.0;
                             for (std::size_t i = 0; i < gsize; ++i) {
                                 const std::size_t k = gi * gsize + i;
                                 const std::size_t c = scope == StatScope::PerChannel ? gi : k / P;
                                 const double dh = static_cast<double>(g[k]) * gamma[c];
                                 s1 += dh;
                                 s2 += dh * (*xhat)[k];
                             }
                             const double n = static_cast<double>(gsize);
                             const double m1 = s1 / n, m2 = s2 / n;
                             for (std::size_t i = 0; i < gsize; ++i) {
                                 const std::size_t k = gi * gsize + i;
                                 const std::size_t c = scope == StatScope::PerChannel ? gi : k / P;
                                 const double dh = static_cast<double>(g[k]) * gamma[c];
                                 (*gx)[k] += static_cast<T>(inv[gi] * (dh - m1 - (*xhat)[k] * m2));
                             }
                         }
                     });
}

template <typename T>
Var normalize_fixed(Tape<T>& tape, Var x, Var scale, Var shift, std::span<const T> mean, std::span<const T> var,
                    double eps) {
    const Tensor<T>& in = tape.value(x);
    require_rank3(in.shape(), "normalize");
    const std::size_t C = in.dim(0), P = in.dim(1) * in.dim(2);
    if (mean.size() != C || var.size() != C) throw ShapeError("normalize: running statistics length != channels");
    std::vector<double> inv(C), mu(C);
    for (std::size_t c = 0; c < C; ++c) {
        mu[c] = mean[c];
        inv[c] = 1.0 / std::sqrt(static_cast<double>(var[c]) + eps);
    }
    const Tensor<T>& gamma = tape.value(scale);
    const Tensor<T>& beta = tape.value(shift);
    Tensor<T> out(in.shape());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < P; ++i) {
            const std::size_t k = c * P + i;
            out[k] = static_cast<T>((in[k] - mu[c]) * inv[c]) * gamma[c] + beta[c];
        }
    return tape.push(std::move(out), {x, scale, shift}, [x, scale, shift, mu, inv, C, P](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& in = t.value(x);
        const Tensor<T>& gamma = t.value(scale);
        if (Tensor<T>* gb = t.grad_sink(shift)) {
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < P; ++i) (*gb)[c] += g[c * P + i];
        }
        if (Tensor<T>* gg = t.grad_sink(scale)) {
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < P; ++i) {
                    (*gg)[c] += g[c * P + i] * static_cast<T>((in[c * P + i] - mu[c]) * inv[c]);
                }
        }
        if (Tensor<T>* gx = t.grad_sink(x)) {
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < P; ++i) (*gx)[c * P + i] += g[c * P + i] * gamma[c] * static_cast<T>(inv[c]);
        }
    });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& weights) {
    const Tensor<T>& in = tape.value(x);
    if (in.size() != weights.size()) throw ShapeError("weighted_sum: weight count mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) acc += static_cast<double>(in[i]) * weights[i];
    return tape.push(Tensor<T>(Shape{}, static_cast<T>(acc)), {x}, [x, weights](Tape<T>& t, const Tensor<T>& g) {
        if (Tensor<T>* gx = t.grad_sink(x)) {
            for (std::size_t i = 0; i < weights.size(); ++i) (*gx)[i] += g[0] * weights[i];
        }
    });
}

template <typename T>
Var linear_combination(Tape<T>& tape, const std::vector<Var>& xs, const std::vector<T>& coeffs) {
    if (xs.size() != coeffs.size()) throw ShapeError("linear_combination: size mismatch");
    T acc{0};
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (tape.value(xs[i]).size() != 1) throw ShapeError("linear_combination: inputs must be scalars");
        acc += coeffs[i] * tape.value(xs[i])[0];
    }
    return tape.push(Tensor<T>(Shape{}, acc), xs, [xs, coeffs](Tape<T>& t, const Tensor<T>& g) {
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (Tensor<T>* gx = t.grad_sink(xs[i])) (*gx)[0] += g[0] * coeffs[i];
        }
    });
}

#define ALAMO_INSTANTIATE_OPS(T)                                                                                   \
    template Tensor<T> kernels::conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                                               std::size_t);                                                       \
    template void kernels::conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,      \
                                           std::size_t, Tensor<T>*, Tensor<T>*, Tensor<T>*);                       \
    template Tensor<T> kernels::conv_transpose2_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
    template void kernels::conv_transpose2_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                                    Tensor<T>*, Tensor<T>*, Tensor<T>*);                           \
    template Tensor<T> kernels::avg_pool2_forward(const Tensor<T>&);                                               \
    template Tensor<T> kernels::upsample_nearest2(const Tensor<T>&);                                               \
    template Var conv2d(Tape<T>&, Var, Var, Var, std::size_t, std::size_t);                                        \
    template Var conv_transpose2(Tape<T>&, Var, Var, Var);                                                         \
    template Var elu(Tape<T>&, Var);                                                                               \
    template Var avg_pool2(Tape<T>&, Var);                                                                         \
    template Var concat_channels(Tape<T>&, const std::vector<Var>&);                                               \
    template Var softmax_groups(Tape<T>&, Var, std::size_t);                                                       \
    template Var cross_entropy_groups(Tape<T>&, Var, std::span<const std::uint8_t>, std::size_t);                  \
    template Var normalize_batch(Tape<T>&, Var, Var, Var, StatScope, double, NormStats<T>*);                       \
    template Var normalize_fixed(Tape<T>&, Var, Var, Var, std::span<const T>, std::span<const T>, double);         \
    template Var weighted_sum(Tape<T>&, Var, const Tensor<T>&);                                                    \
    template Var linear_combination(Tape<T>&, const std::vector<Var>&, const std::vector<T>&);

ALAMO_INSTANTIATE_OPS(float)
ALAMO_INSTANTIATE_OPS(double)

#undef ALAMO_INSTANTIATE_OPS

}  // namespace alamo::nn
