#include "proxyattn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace proxyattn {

namespace {

Tape& same_tape(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) throw InvariantError("operands live on different tapes");
    return *a.tape;
}

// ---------------------------------------------------------------------------
// GEMM kernels on row-major blocks. All accumulate into C.

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t r = 0; r < m; ++r) {
        double* crow = c + r * n;
        const double* arow = a + r * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,k] += A[m,n] * B[k,n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t r = 0; r < m; ++r) {
        const double* arow = a + r * n;
        double* crow = c + r * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
            crow[p] += s;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t r = 0; r < m; ++r) {
        const double* arow = a + r * k;
        const double* brow = b + r * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

struct MatmulGeom {
    std::size_t m = 0, k = 0, n = 0;
    std::size_t nb_out = 1, nb_a = 1, nb_b = 1;
    Shape out;
};

bool is_suffix(const Shape& shorter, const Shape& longer, std::size_t skip_tail = 0) {
    const std::size_t ls = shorter.size() - skip_tail;
    const std::size_t ll = longer.size() - skip_tail;
    if (ls > ll) return false;
    return std::equal(shorter.begin(), shorter.begin() + static_cast<std::ptrdiff_t>(ls),
                      longer.begin() + static_cast<std::ptrdiff_t>(ll - ls));
}

MatmulGeom matmul_geom(const Shape& sa, const Shape& sb) {
    auto fail = [&]() {
        return ShapeError("matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb));
    };
    if (sa.size() < 2 || sb.size() < 2) throw fail();
    MatmulGeom g;
    g.m = sa[sa.size() - 2];
    g.k = sa.back();
    g.n = sb.back();
    if (sb[sb.size() - 2] != g.k) throw fail();
    const Shape ba(sa.begin(), sa.end() - 2);
    const Shape bb(sb.begin(), sb.end() - 2);
    const Shape& longer = ba.size() >= bb.size() ? ba : bb;
    const Shape& shorter = ba.size() >= bb.size() ? bb : ba;
    if (!is_suffix(shorter, longer)) throw fail();
    g.nb_a = numel_of(ba);
    g.nb_b = numel_of(bb);
    g.nb_out = numel_of(longer);
    g.out = longer;
    g.out.push_back(g.m);
    g.out.push_back(g.n);
    return g;
}

enum class Bcast { same, suffix, scalar };

void check_broadcast(const Shape& sa, const Shape& sb, const char* op) {
    if (sa == sb) return;
    if (numel_of(sb) == 1) return;
    if (is_suffix(sb, sa)) return;
    throw ShapeError(std::string(op) + " shape mismatch: " + shape_str(sa) + " vs " + shape_str(sb));
}

template <typename Fwd>
Tensor map_unary(const Tensor& x, Fwd f) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
    return y;
}

}  // namespace

// ---------------------------------------------------------------------------
namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto g = matmul_geom(a.shape(), b.shape());
    Tensor c(g.out);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* cd = c.data().data();
    for (std::size_t i = 0; i < g.nb_out; ++i) {
        gemm_nn(ad + (i % g.nb_a) * g.m * g.k, bd + (i % g.nb_b) * g.k * g.n, cd + i * g.m * g.n, g.m, g.k,
                g.n);
    }
    return c;
}

Tensor softmax_last(const Tensor& x) {
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    Tensor y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * d;
        double* yr = y.data().data() + r * d;
        const double mx = *std::max_element(xr, xr + d);
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        const double inv = 1.0 / s;
        for (std::size_t j = 0; j < d; ++j) yr[j] *= inv;
    }
    return y;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
    const auto& s = x.shape();
    const std::size_t r = s.size();
    if (perm.size() != r) throw ShapeError("permute: rank mismatch for " + shape_str(s));
    std::vector<bool> seen(r, false);
    for (auto p : perm) {
        if (p >= r || seen[p]) throw ShapeError("permute: invalid axis permutation for " + shape_str(s));
        seen[p] = true;
    }
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) out[i] = s[perm[i]];
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * s[i + 1];
    // Stride in the input for a step along each output axis.
    std::vector<std::size_t> step(r);
    for (std::size_t i = 0; i < r; ++i) step[i] = in_stride[perm[i]];

    Tensor y(out);
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    const std::size_t inner = out.back();
    const std::size_t inner_step = step.back();
    const std::size_t n = y.numel();
    for (std::size_t o = 0; o < n; o += inner) {
        for (std::size_t j = 0; j < inner; ++j) y[o + j] = x[src + j * inner_step];
        // Advance the multi-index over all but the last axis.
        for (std::size_t ax = r - 1; ax-- > 0;) {
            ++idx[ax];
            src += step[ax];
            if (idx[ax] < out[ax]) break;
            src -= step[ax] * out[ax];
            idx[ax] = 0;
        }
    }
    return y;
}

}  // namespace kernels

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b);
    const auto g = matmul_geom(a.shape(), b.shape());
    Tensor out = kernels::matmul(a.value(), b.value());
    return t.record(std::move(out), {a.id, b.id}, [g, ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
        const double f = backward_fault_factor("matmul");
        Tensor dy = tp.grad(self);
        if (f != 1.0)
            for (auto& v : dy.storage()) v *= f;
        const double* dyd = dy.data().data();
        const double* ad = tp.value(ia).data().data();
        const double* bd = tp.value(ib).data().data();
        if (tp.requires_grad(ia)) {
            double* da = tp.grad(ia).data().data();
            for (std::size_t i = 0; i < g.nb_out; ++i) {
                gemm_nt(dyd + i * g.m * g.n, bd + (i % g.nb_b) * g.k * g.n, da + (i % g.nb_a) * g.m * g.k, g.m,
                        g.n, g.k);
            }
        }
        if (tp.requires_grad(ib)) {
            double* db = tp.grad(ib).data().data();
            for (std::size_t i = 0; i < g.nb_out; ++i) {
                gemm_tn(ad + (i % g.nb_a) * g.m * g.k, dyd + i * g.m * g.n, db + (i % g.nb_b) * g.k * g.n, g.m,
                        g.k, g.n);
            }
        }
    });
}

Var softmax_last(Var x) {
    Tensor y = kernels::softmax_last(x.value());
    const std::size_t d = y.shape().back();
    return x.tape->record(std::move(y), {x.id}, [d, ix = x.id](Tape& tp, std::size_t self) {
        const double f = backward_fault_factor("softmax");
        const Tensor& yv = tp.value(self);
        const Tensor& dy = tp.grad(self);
        Tensor& dx = tp.grad(ix);
        const std::size_t rows = yv.numel() / d;
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t o = r * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += dy[o + j] * yv[o + j];
            for (std::size_t j = 0; j < d; ++j) dx[o + j] += f * yv[o + j] * (dy[o + j] - dot);
        }
    });
}

Var add(Var a, Var b) {
    Tape& t = same_tape(a, b);
    check_broadcast(a.shape(), b.shape(), "add");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t nb = bv.numel();
    Tensor y(av.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] + bv[i % nb];
    return t.record(std::move(y), {a.id, b.id}, [nb, ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
        const Tensor& dy = tp.grad(self);
        if (tp.requires_grad(ia)) {
            Tensor& da = tp.grad(ia);
            for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
        }
        if (tp.requires_grad(ib)) {
            Tensor& db = tp.grad(ib);
            for (std::size_t i = 0; i < dy.numel(); ++i) db[i % nb] += dy[i];
        }
    });
}

Var sub(Var a, Var b) {
    Tape& t = same_tape(a, b);
    check_broadcast(a.shape(), b.shape(), "sub");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t nb = bv.numel();
    Tensor y(av.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] - bv[i % nb];
    return t.record(std::move(y), {a.id, b.id}, [nb, ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
        const Tensor& dy = tp.grad(self);
        if (tp.requires_grad(ia)) {
            Tensor& da = tp.grad(ia);
            for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
        }
        if (tp.requires_grad(ib)) {
            Tensor& db = tp.grad(ib);
            for (std::size_t i = 0; i < dy.numel(); ++i) db[i % nb] -= dy[i];
        }
    });
}

Var mul(Var a, Var b) {
    Tape& t = same_tape(a, b);
    check_broadcast(a.shape(), b.shape(), "mul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t nb = bv.numel();
    Tensor y(av.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] * bv[i % nb];
    return t.record(std::move(y), {a.id, b.id}, [nb, ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
        const Tensor& dy = tp.grad(self);
        const Tensor& av = tp.value(ia);
        const Tensor& bv = tp.value(ib);
        if (tp.requires_grad(ia)) {
            Tensor& da = tp.grad(ia);
            for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * bv[i % nb];
        }
        if (tp.requires_grad(ib)) {
            Tensor& db = tp.grad(ib);
            for (std::size_t i = 0; i < dy.numel(); ++i) db[i % nb] += dy[i] * av[i];
        }
    });
}

Var scale(Var x, double c) {
    Tensor y = map_unary(x.value(), [c](double v) { return v * c; });
    return x.tape->record(std::move(y), {x.id}, [c, ix = x.id](Tape& tp, std::size_t self) {
        const Tensor& dy = tp.grad(self);
        Tensor& dx = tp.grad(ix);
        for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += c * dy[i];
    });
}

Var add_scalar(Var x, double c) {
    Tensor y = map_unary(x.value(), [c](double v) { return v + c; });
    return x.tape->record(std::move(y), {x.id}, [ix = x.id](Tape& tp, std::size_t self) {
        const Tensor& dy = tp.grad(self);
        Tensor& dx = tp.grad(ix);
        for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    });
}

Var sigmoid(Var x) {
    Tensor y = map_unary(x.value(), [](double v) {
        // Branch keeps exp() from overflowing for large |v|.
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
    });
    return x.tape->record(std::move(y), {x.id}, [ix = x.id](Tape& tp, std::size_t self) {
        const double f = backward_fault_factor("sigmoid");
        const Tensor& yv = tp.value(self);
        const Tensor& dy = tp.grad(self);
        Tensor& dx = tp.grad(ix);
        for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += f * dy[i] * yv[i] * (1.0 - yv[i]);
    });
}

Var tanh(Var x) {
    Tensor y = map_unary(x.value(), [](double v) { return std::tanh(v); });
    return x.tape->record(std::move(y), {x.id}, [ix = x.id](Tape& tp, std::size_t self) {
        const double f = backward_fault_factor("tanh");
        const Tensor& yv = tp.value(self);
        const Tensor& dy = tp.grad(self);
        Tensor& dx = tp.grad(ix);
        for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += f * dy[i] * (1.0 - yv[i] * yv[i]);
    });
}

Var linear(Var x, Var w, std::optional<Var> b) {
    Tape& t = same_tape(x, w);
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (ws.size() != 2 || xs.back() != ws[0]) {
        throw ShapeError("linear shape mismatch: input " + shape_str(xs) + " with weight " + shape_str(ws));
    }
    const std::size_t din = ws[0];
    const std::size_t dout = ws[1];
    if (b && (b->shape().size() != 1 || b->shape()[0] != dout)) {
        throw ShapeError("linear bias shape " + shape_str(b->shape()) + " does not match weight " + shape_str(ws));
    }
    const std::size_t rows = x.value().numel() / din;
    Shape out_shape = xs;
    out_shape.back() = dout;
    Tensor y(out_shape);
    if (b) {
        const Tensor& bv = b->value();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy(bv.data().begin(), bv.data().end(), y.data().begin() + static_cast<std::ptrdiff_t>(r * dout));
    }
    gemm_nn(x.value().data().data(), w.value().data().data(), y.data().data(), rows, din, dout);

    std::vector<std::size_t> inputs{x.id, w.id};
    if (b) {
        same_tape(x, *b);
        inputs.push_back(b->id);
    }
    const std::size_t ib = b ? b->id : 0;
    return t.record(std::move(y), std::move(inputs),
                    [rows, din, dout, has_b = b.has_value(), ix = x.id, iw = w.id, ib](Tape& tp, std::size_t self) {
                        const double f = backward_fault_factor("linear");
                        Tensor dy = tp.grad(self);
                        if (f != 1.0)
                            for (auto& v : dy.storage()) v *= f;
                        if (tp.requires_grad(ix)) {
                            gemm_nt(dy.data().data(), tp.value(iw).data().data(), tp.grad(ix).data().data(), rows,
                                    dout, din);
                        }
                        if (tp.requires_grad(iw)) {
                            gemm_tn(tp.value(ix).data().data(), dy.data().data(), tp.grad(iw).data().data(), rows,
                                    din, dout);
                        }
                        if (has_b && tp.requires_grad(ib)) {
                            Tensor& db = tp.grad(ib);
                            for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t j = 0; j < dout; ++j) db[j] += dy[r * dout + j];
                        }
                    });
}

Var layer_norm(Var x, Var gain, Var bias) {
    Tape& t = same_tape(x, gain);
    same_tape(x, bias);
    const std::size_t d = x.shape().back();
    if (d < 2) throw ShapeError("layer_norm needs a last dimension >= 2, got " + shape_str(x.shape()));
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
        throw ShapeError("layer_norm affine shape mismatch for input " + shape_str(x.shape()));
    }
    const Tensor& xv = x.value();
    const std::size_t rows = xv.numel() / d;
    auto xhat = std::make_shared<Tensor>(xv.shape());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    Tensor y(xv.shape());
    const Tensor& g = gain.value();
    const Tensor& bb = bias.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t o = r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xv[o + j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xv[o + j] - mu) * (xv[o + j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xv[o + j] - mu) * is;
            (*xhat)[o + j] = h;
            y[o + j] = h * g[j] + bb[j];
        }
    }
    return t.record(std::move(y), {x.id, gain.id, bias.id},
                    [d, rows, xhat, inv_std, ix = x.id, ig = gain.id, ibias = bias.id](Tape& tp, std::size_t self) {
                        const double f = backward_fault_factor("layer_norm");
                        const Tensor& dy = tp.grad(self);
                        const Tensor& g = tp.value(ig);
                        const bool need_x = tp.requires_grad(ix);
                        const bool need_g = tp.requires_grad(ig);
                        const bool need_b = tp.requires_grad(ibias);
                        std::vector<double> dxhat(d);
                        for (std::size_t r = 0; r < rows; ++r) {
                            const std::size_t o = r * d;
                            if (need_g) {
                                Tensor& dg = tp.grad(ig);
                                for (std::size_t j = 0; j < d; ++j) dg[j] += dy[o + j] * (*xhat)[o + j];
                            }
                            if (need_b) {
                                Tensor& db = tp.grad(ibias);
                                for (std::size_t j = 0; j < d; ++j) db[j] += dy[o + j];
                            }
                            if (!need_x) continue;
                            double m1 = 0.0, m2 = 0.0;
                            for (std::size_t j = 0; j < d; ++j) {
                                dxhat[j] = dy[o + j] * g[j];
                                m1 += dxhat[j];
                                m2 += dxhat[j] * (*xhat)[o + j];
                            }
                            m1 /= static_cast<double>(d);
                            m2 /= static_cast<double>(d);
                            Tensor& dx = tp.grad(ix);
                            const double is = (*inv_std)[r] * f;
                            for (std::size_t j = 0; j < d; ++j)
                                dx[o + j] += is * (dxhat[j] - m1 - (*xhat)[o + j] * m2);
                        }
                    });
}

Var reshape(Var x, Shape shape) {
    Tensor y = x.value().reshaped(std::move(shape));
    return x.tape->record(std::move(y), {x.id}, [ix = x.id](Tape& tp, std::size_t self) {
        const Tensor& dy = tp.grad(self);
        Tensor& dx = tp.grad(ix);
        for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    });
}

Var permute(Var x, const std::vector<std::size_t>& perm) {
    Tensor y = kernels::permute(x.value(), perm);
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    return x.tape->record(std::move(y), {x.id}, [inv, ix = x.id](Tape& tp, std::size_t self) {
        Tensor back = kernels::permute(tp.grad(self), inv);
        Tensor& dx = tp.grad(ix);
        for (std::size_t i = 0; i < back.numel(); ++i) dx[i] += back[i];
    });
}

Var transpose_last(Var x) {
    const std::size_t r = x.shape().size();
    if (r < 2) throw ShapeError("transpose_last needs rank >= 2, got " + shape_str(x.shape()));
    std::vector<std::size_t> perm(r);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::swap(perm[r - 1], perm[r - 2]);
    return permute(x, perm);
}

Var slice0(Var x, std::size_t begin, std::size_t end) {
    const auto& s = x.shape();
    if (begin >= end || end > s[0]) {
        throw ShapeError("slice0 [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         shape_str(s));
    }
    const std::size_t row = x.value().numel() / s[0];
    Shape out = s;
    out[0] = end - begin;
    const auto first = x.value().data().begin() + static_cast<std::ptrdiff_t>(begin * row);
    Tensor y(out, std::vector<double>(first, first + static_cast<std::ptrdiff_t>((end - begin) * row)));
    return x.tape->record(std::move(y), {x.id}, [off = begin * row, ix = x.id](Tape& tp, std::size_t self) {
        const Tensor& dy = tp.grad(self);
        Tensor& dx = tp.grad(ix);
        for (std::size_t i = 0; i < dy.numel(); ++i) dx[off + i] += dy[i];
    });
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return x.tape->record(Tensor::scalar(s), {x.id}, [ix = x.id](Tape& tp, std::size_t self) {
        const double g = tp.grad(self)[0];
        Tensor& dx = tp.grad(ix);
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += g;
    });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var norm_last(Var x) {
    const auto& s = x.shape();
    const std::size_t d = s.back();
    const std::size_t rows = x.value().numel() / d;
    Shape out = s.size() > 1 ? Shape(s.begin(), s.end() - 1) : Shape{1};
    Tensor y(out);
    const Tensor& xv = x.value();
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += xv[r * d + j] * xv[r * d + j];
        y[r] = std::sqrt(acc);
    }
    return x.tape->record(std::move(y), {x.id}, [d, rows, ix = x.id](Tape& tp, std::size_t self) {
        const double f = backward_fault_factor("norm");
        const Tensor& yv = tp.value(self);
        const Tensor& dy = tp.grad(self);
        const Tensor& xv = tp.value(ix);
        Tensor& dx = tp.grad(ix);
        for (std::size_t r = 0; r < rows; ++r) {
            // Subgradient 0 at the origin.
            if (yv[r] == 0.0) continue;
            const double c = f * dy[r] / yv[r];
            for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += c * xv[r * d + j];
        }
    });
}

}  // namespace proxyattn
