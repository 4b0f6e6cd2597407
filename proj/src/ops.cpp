#include "cseg/ops.hpp"

#include "cseg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace cseg::ops {
namespace {

using IndexVec = std::vector<std::int64_t>;

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
}

void require_rank(const char* op, const Tensor& x, int rank) {
    if (x.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(x.shape()));
    }
}

void accumulate(Tape& t, Var v, const Tensor& g) {
    if (!t.requires_grad(v)) return;
    Tensor& dst = t.grad_mut(v);
    auto d = dst.values();
    auto s = g.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <typename F>
Var unary(Tape& t, const char* name, Var x, F&& f, std::function<double(double, double)> dfdx) {
    const Tensor& xv = t.value(x);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return t.record(name, std::move(out), t.requires_grad(x), [x, dfdx](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x);
        Tensor& dx = t.grad_mut(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * dfdx(xv[i], g[i]);
    });
}

void check_indices(const char* op, std::span<const std::int64_t> idx, std::int64_t limit, bool allow_negative) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto v = idx[i];
        if ((v < 0 && !(allow_negative && v == -1)) || v >= limit) {
            throw DataError(std::string(op) + ": index " + std::to_string(v) + " at position " + std::to_string(i) +
                            " out of range [0, " + std::to_string(limit) + ")");
        }
    }
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_rank("matmul", av, 2);
    require_rank("matmul", bv, 2);
    if (av.dim(1) != bv.dim(0)) shape_fail("matmul", av, bv);
    Tensor out({av.dim(0), bv.dim(1)});
    out.mat().noalias() = av.mat() * bv.mat();
    return t.record("matmul", std::move(out), any_requires_grad(t, a, b), [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.grad_mut(a).mat().noalias() += g.mat() * t.value(b).mat().transpose();
        if (t.requires_grad(b)) t.grad_mut(b).mat().noalias() += t.value(a).mat().transpose() * g.mat();
    });
}

Var linear(Tape& t, Var x, Var w, Var b) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    require_rank("linear", xv, 2);
    require_rank("linear", wv, 2);
    if (xv.dim(1) != wv.dim(0)) shape_fail("linear", xv, wv);
    if (bv.rank() != 1 || bv.dim(0) != wv.dim(1)) shape_fail("linear", wv, bv);
    Tensor out({xv.dim(0), wv.dim(1)});
    auto om = out.mat();
    om.noalias() = xv.mat() * wv.mat();
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data(), bv.dim(0));
    return t.record("linear", std::move(out), any_requires_grad(t, x, w, b), [x, w, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(x)) t.grad_mut(x).mat().noalias() += g.mat() * t.value(w).mat().transpose();
        if (t.requires_grad(w)) t.grad_mut(w).mat().noalias() += t.value(x).mat().transpose() * g.mat();
        if (t.requires_grad(b)) {
            Tensor& db = t.grad_mut(b);
            Eigen::Map<Eigen::RowVectorXd>(db.data(), db.size()) += g.mat().colwise().sum();
        }
    });
}

Var add(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.shape() != bv.shape()) shape_fail("add", av, bv);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return t.record("add", std::move(out), any_requires_grad(t, a, b), [a, b](Tape& t, const Tensor& g) {
        accumulate(t, a, g);
        accumulate(t, b, g);
    });
}

Var sub(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.shape() != bv.shape()) shape_fail("sub", av, bv);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return t.record("sub", std::move(out), any_requires_grad(t, a, b), [a, b](Tape& t, const Tensor& g) {
        accumulate(t, a, g);
        if (t.requires_grad(b)) {
            Tensor& db = t.grad_mut(b);
            for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g[i];
        }
    });
}

Var mul(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.shape() != bv.shape()) shape_fail("mul", av, bv);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return t.record("mul", std::move(out), any_requires_grad(t, a, b), [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            Tensor& da = t.grad_mut(a);
            const Tensor& bv = t.value(b);
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * bv[i];
        }
        if (t.requires_grad(b)) {
            Tensor& db = t.grad_mut(b);
            const Tensor& av = t.value(a);
            for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * av[i];
        }
    });
}

Var scale(Tape& t, Var a, double c) {
    const Tensor& av = t.value(a);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * av[i];
    return t.record("scale", std::move(out), t.requires_grad(a), [a, c](Tape& t, const Tensor& g) {
        Tensor& da = t.grad_mut(a);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += c * g[i];
    });
}

Var sum(Tape& t, Var x) {
    const Tensor& xv = t.value(x);
    double s = 0.0;
    for (double v : xv.values()) s += v;
    return t.record("sum", Tensor::scalar(s), t.requires_grad(x), [x](Tape& t, const Tensor& g) {
        Tensor& dx = t.grad_mut(x);
        for (double& v : dx.values()) v += g[0];
    });
}

Var relu(Tape& t, Var x) {
    return unary(
        t, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Tape& t, Var x) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    const Tensor& xv = t.value(x);
    Tensor out(xv.shape());
    const bool rg = t.requires_grad(x);
    std::vector<double> slope(rg ? xv.size() : 0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xv[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        out[i] = v * cdf;
        if (rg) slope[i] = cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
    }
    return t.record("gelu", std::move(out), rg, [x, slope = std::move(slope)](Tape& t, const Tensor& g) {
        Tensor& dx = t.grad_mut(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * slope[i];
    });
}

Var sigmoid(Tape& t, Var x) {
    const Tensor& xv = t.value(x);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xv[i];
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    const int id = static_cast<int>(t.size());
    return t.record("sigmoid", std::move(out), t.requires_grad(x), [x, id](Tape& t, const Tensor& g) {
        const Tensor& y = t.value(Var{id});
        Tensor& dx = t.grad_mut(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

Var softmax(Tape& t, Var x, int axis) {
    const Tensor& xv = t.value(x);
    if (xv.rank() == 0) throw ShapeError("softmax: scalar input");
    if (axis < 0) axis += xv.rank();
    if (axis < 0 || axis >= xv.rank()) throw ShapeError("softmax: axis out of range for " + to_string(xv.shape()));
    const std::int64_t n = xv.dim(axis);
    if (n == 0) throw ShapeError("softmax: empty axis");
    std::int64_t outer = 1;
    std::int64_t inner = 1;
    for (int a = 0; a < axis; ++a) outer *= xv.dim(a);
    for (int a = axis + 1; a < xv.rank(); ++a) inner *= xv.dim(a);

    Tensor out(xv.shape());
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * n * inner + in;
            double mx = xv[base];
            for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
            double z = 0.0;
            for (std::int64_t j = 0; j < n; ++j) {
                const double e = std::exp(xv[base + j * inner] - mx);
                out[base + j * inner] = e;
                z += e;
            }
            for (std::int64_t j = 0; j < n; ++j) out[base + j * inner] /= z;
        }
    }
    const int id = static_cast<int>(t.size());
    return t.record("softmax", std::move(out), t.requires_grad(x),
                    [x, id, n, outer, inner](Tape& t, const Tensor& g) {
                        const Tensor& y = t.value(Var{id});
                        Tensor& dx = t.grad_mut(x);
                        for (std::int64_t o = 0; o < outer; ++o) {
                            for (std::int64_t in = 0; in < inner; ++in) {
                                const std::int64_t base = o * n * inner + in;
                                double dot = 0.0;
                                for (std::int64_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
                                for (std::int64_t j = 0; j < n; ++j) {
                                    const auto k = base + j * inner;
                                    dx[k] += y[k] * (g[k] - dot);
                                }
                            }
                        }
                    });
}

Var rms_norm_rows(Tape& t, Var x, double eps) {
    const Tensor& xv = t.value(x);
    require_rank("rms_norm_rows", xv, 2);
    const auto n = xv.dim(0), d = xv.dim(1);
    Tensor out(xv.shape());
    std::vector<double> inv(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        double ss = 0.0;
        for (std::int64_t j = 0; j < d; ++j) ss += xv[i * d + j] * xv[i * d + j];
        inv[i] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
        for (std::int64_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] * inv[i];
    }
    const int id = static_cast<int>(t.size());
    return t.record("rms_norm_rows", std::move(out), t.requires_grad(x),
                    [x, id, n, d, inv = std::move(inv)](Tape& t, const Tensor& g) {
                        const Tensor& y = t.value(Var{id});
                        Tensor& dx = t.grad_mut(x);
                        for (std::int64_t i = 0; i < n; ++i) {
                            double gy = 0.0;
                            for (std::int64_t j = 0; j < d; ++j) gy += g[i * d + j] * y[i * d + j];
                            gy /= static_cast<double>(d);
                            for (std::int64_t j = 0; j < d; ++j) {
                                dx[i * d + j] += (g[i * d + j] - y[i * d + j] * gy) * inv[i];
                            }
                        }
                    });
}

Var concat_cols(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_rank("concat_cols", av, 2);
    require_rank("concat_cols", bv, 2);
    if (av.dim(0) != bv.dim(0)) shape_fail("concat_cols", av, bv);
    const auto ca = av.dim(1);
    const auto cb = bv.dim(1);
    Tensor out({av.dim(0), ca + cb});
    out.mat().leftCols(ca) = av.mat();
    out.mat().rightCols(cb) = bv.mat();
    return t.record("concat_cols", std::move(out), any_requires_grad(t, a, b), [a, b, ca, cb](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.grad_mut(a).mat() += g.mat().leftCols(ca);
        if (t.requires_grad(b)) t.grad_mut(b).mat() += g.mat().rightCols(cb);
    });
}

Var concat_rows(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_rank("concat_rows", av, 2);
    require_rank("concat_rows", bv, 2);
    if (av.dim(1) != bv.dim(1)) shape_fail("concat_rows", av, bv);
    const auto ra = av.dim(0);
    const auto rb = bv.dim(0);
    Tensor out({ra + rb, av.dim(1)});
    std::copy_n(av.data(), av.size(), out.data());
    std::copy_n(bv.data(), bv.size(), out.data() + av.size());
    return t.record("concat_rows", std::move(out), any_requires_grad(t, a, b), [a, b, ra, rb](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.grad_mut(a).mat() += g.mat().topRows(ra);
        if (t.requires_grad(b)) t.grad_mut(b).mat() += g.mat().bottomRows(rb);
    });
}

Var reshape(Tape& t, Var x, Shape shape) {
    Tensor out = t.value(x).reshaped(std::move(shape));
    return t.record("reshape", std::move(out), t.requires_grad(x), [x](Tape& t, const Tensor& g) {
        Tensor& dx = t.grad_mut(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
    });
}

Var gather_rows(Tape& t, Var x, std::span<const std::int64_t> idx) {
    const Tensor& xv = t.value(x);
    require_rank("gather_rows", xv, 2);
    check_indices("gather_rows", idx, xv.dim(0), true);
    const auto d = xv.dim(1);
    Tensor out({static_cast<std::int64_t>(idx.size()), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        std::copy_n(xv.data() + idx[i] * d, d, out.data() + i * d);
    }
    IndexVec keep(idx.begin(), idx.end());
    return t.record("gather_rows", std::move(out), t.requires_grad(x), [x, keep, d](Tape& t, const Tensor& g) {
        Tensor& dx = t.grad_mut(x);
        for (std::size_t i = 0; i < keep.size(); ++i) {
            if (keep[i] < 0) continue;
            double* dst = dx.data() + keep[i] * d;
            const double* src = g.data() + i * d;
            for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
        }
    });
}

Var segment_mean(Tape& t, Var x, std::span<const std::int64_t> seg, std::int64_t num_segments) {
    const Tensor& xv = t.value(x);
    require_rank("segment_mean", xv, 2);
    if (static_cast<std::int64_t>(seg.size()) != xv.dim(0)) {
        throw ShapeError("segment_mean: " + std::to_string(seg.size()) + " segment ids for " + to_string(xv.shape()));
    }
    check_indices("segment_mean", seg, num_segments, true);
    const auto d = xv.dim(1);
    Tensor out({num_segments, d});
    std::vector<double> count(static_cast<std::size_t>(num_segments), 0.0);
    // Counting sort by segment, then each segment summed in lexicographic row
    // order so the result does not depend on the input permutation.
    std::vector<std::int64_t> start(static_cast<std::size_t>(num_segments) + 1, 0);
    for (auto s : seg) {
        if (s >= 0) ++start[s + 1];
    }
    for (std::int64_t s = 0; s < num_segments; ++s) {
        count[s] = static_cast<double>(start[s + 1]);
        start[s + 1] += start[s];
    }
    std::vector<std::int64_t> rows(static_cast<std::size_t>(start.back()));
    {
        auto fill = start;
        for (std::size_t i = 0; i < seg.size(); ++i) {
            if (seg[i] >= 0) rows[fill[seg[i]]++] = static_cast<std::int64_t>(i);
        }
    }
    const double* xd = xv.data();
    const auto row_less = [xd, d](std::int64_t a, std::int64_t b) {
        return std::lexicographical_compare(xd + a * d, xd + a * d + d, xd + b * d, xd + b * d + d);
    };
    for (std::int64_t s = 0; s < num_segments; ++s) {
        if (count[s] == 0.0) continue;
        auto first = rows.begin() + start[s];
        auto last = rows.begin() + start[s + 1];
        if (last - first > 1) std::sort(first, last, row_less);
        double* dst = out.data() + s * d;
        for (auto it = first; it != last; ++it) {
            const double* src = xd + *it * d;
            for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
        }
        for (std::int64_t c = 0; c < d; ++c) dst[c] /= count[s];
    }
    IndexVec keep(seg.begin(), seg.end());
    return t.record("segment_mean", std::move(out), t.requires_grad(x),
                    [x, keep, count = std::move(count), d](Tape& t, const Tensor& g) {
                        Tensor& dx = t.grad_mut(x);
                        for (std::size_t i = 0; i < keep.size(); ++i) {
                            if (keep[i] < 0) continue;
                            const double inv = 1.0 / count[keep[i]];
                            double* dst = dx.data() + i * d;
                            const double* src = g.data() + keep[i] * d;
                            for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c] * inv;
                        }
                    });
}

Var scatter_mean(Tape& t, Var points, std::span<const std::int64_t> cells, GridShape grid) {
    check_indices("scatter_mean", cells, grid.cells(), false);
    const Var flat = segment_mean(t, points, cells, grid.cells());
    return reshape(t, flat, {grid.h, grid.w, t.value(points).dim(1)});
}

Var gather(Tape& t, Var grid, std::span<const std::int64_t> cells) {
    const Tensor& gv = t.value(grid);
    require_rank("gather", gv, 3);
    check_indices("gather", cells, gv.dim(0) * gv.dim(1), false);
    const Var flat = reshape(t, grid, {gv.dim(0) * gv.dim(1), gv.dim(2)});
    return gather_rows(t, flat, cells);
}

namespace {

// [H*W x k*k*Cin] patch matrix with zero padding.
RowMatrix im2col(const Tensor& grid, std::int64_t k) {
    const auto h = grid.dim(0), w = grid.dim(1), c = grid.dim(2);
    const std::int64_t pad = k / 2;
    RowMatrix col = RowMatrix::Zero(h * w, k * k * c);
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            double* row = col.data() + (y * w + x) * k * k * c;
            for (std::int64_t ky = 0; ky < k; ++ky) {
                const auto sy = y + ky - pad;
                if (sy < 0 || sy >= h) continue;
                for (std::int64_t kx = 0; kx < k; ++kx) {
                    const auto sx = x + kx - pad;
                    if (sx < 0 || sx >= w) continue;
                    std::copy_n(grid.data() + (sy * w + sx) * c, c, row + (ky * k + kx) * c);
                }
            }
        }
    }
    return col;
}

void col2im_add(const RowMatrix& dcol, std::int64_t k, Tensor& dgrid) {
    const auto h = dgrid.dim(0), w = dgrid.dim(1), c = dgrid.dim(2);
    const std::int64_t pad = k / 2;
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const double* row = dcol.data() + (y * w + x) * k * k * c;
            for (std::int64_t ky = 0; ky < k; ++ky) {
                const auto sy = y + ky - pad;
                if (sy < 0 || sy >= h) continue;
                for (std::int64_t kx = 0; kx < k; ++kx) {
                    const auto sx = x + kx - pad;
                    if (sx < 0 || sx >= w) continue;
                    double* dst = dgrid.data() + (sy * w + sx) * c;
                    const double* src = row + (ky * k + kx) * c;
                    for (std::int64_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                }
            }
        }
    }
}

}  // namespace

Var conv2d(Tape& t, Var grid, Var kernel, Var bias) {
    const Tensor& gv = t.value(grid);
    const Tensor& kv = t.value(kernel);
    require_rank("conv2d", gv, 3);
    require_rank("conv2d", kv, 4);
    const auto k = kv.dim(0);
    if (k != 1 && k != 3) throw ConfigError("conv2d: unsupported kernel size " + std::to_string(k));
    if (kv.dim(1) != k || kv.dim(2) != gv.dim(2)) shape_fail("conv2d", gv, kv);
    const auto h = gv.dim(0), w = gv.dim(1), cin = gv.dim(2), cout = kv.dim(3);
    if (bias.valid()) {
        const Tensor& bv = t.value(bias);
        if (bv.rank() != 1 || bv.dim(0) != cout) shape_fail("conv2d", kv, bv);
    }

    const Eigen::Map<const RowMatrix> kmat(kv.data(), k * k * cin, cout);
    Tensor out({h, w, cout});
    auto om = Eigen::Map<RowMatrix>(out.data(), h * w, cout);
    if (k == 1) {
        om.noalias() = Eigen::Map<const RowMatrix>(gv.data(), h * w, cin) * kmat;
    } else {
        om.noalias() = im2col(gv, k) * kmat;
    }
    if (bias.valid()) {
        const Tensor& bv = t.value(bias);
        om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data(), cout);
    }
    const bool rg = t.requires_grad(grid) || t.requires_grad(kernel) || (bias.valid() && t.requires_grad(bias));
    return t.record("conv2d", std::move(out), rg, [grid, kernel, bias, k, h, w, cin, cout](Tape& t, const Tensor& g) {
        const Eigen::Map<const RowMatrix> gm(g.data(), h * w, cout);
        const Tensor& gv = t.value(grid);
        const Tensor& kv = t.value(kernel);
        const Eigen::Map<const RowMatrix> kmat(kv.data(), k * k * cin, cout);
        if (k == 1) {
            const Eigen::Map<const RowMatrix> xm(gv.data(), h * w, cin);
            if (t.requires_grad(kernel)) {
                Tensor& dk = t.grad_mut(kernel);
                Eigen::Map<RowMatrix>(dk.data(), cin, cout).noalias() += xm.transpose() * gm;
            }
            if (t.requires_grad(grid)) {
                Tensor& dg = t.grad_mut(grid);
                Eigen::Map<RowMatrix>(dg.data(), h * w, cin).noalias() += gm * kmat.transpose();
            }
        } else {
            if (t.requires_grad(kernel)) {
                Tensor& dk = t.grad_mut(kernel);
                Eigen::Map<RowMatrix>(dk.data(), k * k * cin, cout).noalias() += im2col(gv, k).transpose() * gm;
            }
            if (t.requires_grad(grid)) {
                RowMatrix dcol = gm * kmat.transpose();
                col2im_add(dcol, k, t.grad_mut(grid));
            }
        }
        if (bias.valid() && t.requires_grad(bias)) {
            Tensor& db = t.grad_mut(bias);
            Eigen::Map<Eigen::RowVectorXd>(db.data(), cout) += gm.colwise().sum();
        }
    });
}

Var max_pool_groups(Tape& t, Var x, std::int64_t k) {
    const Tensor& xv = t.value(x);
    require_rank("max_pool_groups", xv, 2);
    if (k < 1 || xv.dim(0) % k != 0) {
        throw ShapeError("max_pool_groups: " + to_string(xv.shape()) + " rows not divisible by " + std::to_string(k));
    }
    const auto n = xv.dim(0) / k;
    const auto d = xv.dim(1);
    Tensor out({n, d});
    std::vector<std::int64_t> arg(static_cast<std::size_t>(n * d));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t c = 0; c < d; ++c) {
            std::int64_t best = i * k;
            for (std::int64_t j = 1; j < k; ++j) {
                if (xv[(i * k + j) * d + c] > xv[best * d + c]) best = i * k + j;
            }
            out[i * d + c] = xv[best * d + c];
            arg[i * d + c] = best;
        }
    }
    return t.record("max_pool_groups", std::move(out), t.requires_grad(x),
                    [x, arg = std::move(arg), d](Tape& t, const Tensor& g) {
                        Tensor& dx = t.grad_mut(x);
                        for (std::size_t i = 0; i < arg.size(); ++i) {
                            dx[arg[i] * d + static_cast<std::int64_t>(i) % d] += g[i];
                        }
                    });
}

Var apf_fuse(Tape& t, Var p, Var pc, Var s) {
    const Tensor& pv = t.value(p);
    const Tensor& cv = t.value(pc);
    const Tensor& sv = t.value(s);
    require_rank("apf_fuse", pv, 2);
    if (pv.shape() != cv.shape()) shape_fail("apf_fuse", pv, cv);
    if (sv.rank() != 2 || sv.dim(0) != pv.dim(0) || sv.dim(1) != 1) shape_fail("apf_fuse", pv, sv);
    const auto n = pv.dim(0), c = pv.dim(1);
    Tensor out(pv.shape());
    for (std::int64_t i = 0; i < n; ++i) {
        const double si = sv[i];
        for (std::int64_t j = 0; j < c; ++j) out[i * c + j] = (1.0 - si) * pv[i * c + j] + si * cv[i * c + j];
    }
    return t.record("apf_fuse", std::move(out), any_requires_grad(t, p, pc, s), [p, pc, s, n, c](Tape& t, const Tensor& g) {
        const Tensor& sv = t.value(s);
        if (t.requires_grad(p)) {
            Tensor& dp = t.grad_mut(p);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < c; ++j) dp[i * c + j] += (1.0 - sv[i]) * g[i * c + j];
        }
        if (t.requires_grad(pc)) {
            Tensor& dc = t.grad_mut(pc);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < c; ++j) dc[i * c + j] += sv[i] * g[i * c + j];
        }
        if (t.requires_grad(s)) {
            const Tensor& pv = t.value(p);
            const Tensor& cv = t.value(pc);
            Tensor& ds = t.grad_mut(s);
            for (std::int64_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < c; ++j) acc += g[i * c + j] * (cv[i * c + j] - pv[i * c + j]);
                ds[i] += acc;
            }
        }
    });
}

Var grouped_weighted_sum(Tape& t, Var weights, Var values, std::int64_t k) {
    const Tensor& av = t.value(weights);
    const Tensor& vv = t.value(values);
    require_rank("grouped_weighted_sum", av, 2);
    require_rank("grouped_weighted_sum", vv, 2);
    if (av.dim(0) != vv.dim(0) || k < 1 || av.dim(0) % k != 0) shape_fail("grouped_weighted_sum", av, vv);
    const auto h = av.dim(1);
    const auto d = vv.dim(1);
    if (h < 1 || d % h != 0) {
        throw ConfigError("grouped_weighted_sum: " + std::to_string(d) + " channels not divisible into " +
                          std::to_string(h) + " groups");
    }
    const auto n = av.dim(0) / k;
    const auto dg = d / h;
    Tensor out({n, d});
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < k; ++j) {
            const auto r = i * k + j;
            for (std::int64_t gi = 0; gi < h; ++gi) {
                const double a = av[r * h + gi];
                for (std::int64_t m = 0; m < dg; ++m) out[i * d + gi * dg + m] += a * vv[r * d + gi * dg + m];
            }
        }
    }
    return t.record("grouped_weighted_sum", std::move(out), any_requires_grad(t, weights, values),
                    [weights, values, k, n, h, d, dg](Tape& t, const Tensor& g) {
                        const Tensor& av = t.value(weights);
                        const Tensor& vv = t.value(values);
                        const bool ga = t.requires_grad(weights);
                        const bool gv = t.requires_grad(values);
                        Tensor* da = ga ? &t.grad_mut(weights) : nullptr;
                        Tensor* dv = gv ? &t.grad_mut(values) : nullptr;
                        for (std::int64_t i = 0; i < n; ++i) {
                            for (std::int64_t j = 0; j < k; ++j) {
                                const auto r = i * k + j;
                                for (std::int64_t gi = 0; gi < h; ++gi) {
                                    double acc = 0.0;
                                    for (std::int64_t m = 0; m < dg; ++m) {
                                        const auto col = gi * dg + m;
                                        acc += g[i * d + col] * vv[r * d + col];
                                        if (dv) (*dv)[r * d + col] += av[r * h + gi] * g[i * d + col];
                                    }
                                    if (da) (*da)[r * h + gi] += acc;
                                }
                            }
                        }
                    });
}

Var cross_entropy(Tape& t, Var logits, std::span<const int> targets, int ignore_index) {
    const Tensor& lv = t.value(logits);
    require_rank("cross_entropy", lv, 2);
    const auto n = lv.dim(0), c = lv.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != n) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + to_string(lv.shape()));
    }
    Tensor probs(lv.shape());
    double total = 0.0;
    std::int64_t valid = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = lv.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::int64_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        for (std::int64_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - mx) / z;
        const int y = targets[i];
        if (y == ignore_index) continue;
        if (y < 0 || y >= c) throw DataError("cross_entropy: target " + std::to_string(y) + " out of range");
        total += (mx + std::log(z)) - row[y];
        ++valid;
    }
    if (valid == 0) throw DataError("cross_entropy: undefined loss, every target is ignored");
    std::vector<int> tg(targets.begin(), targets.end());
    const double inv = 1.0 / static_cast<double>(valid);
    return t.record("cross_entropy", Tensor::scalar(total * inv), t.requires_grad(logits),
                    [logits, probs = std::move(probs), tg = std::move(tg), inv, c, ignore_index](Tape& t,
                                                                                               const Tensor& g) {
                        Tensor& dl = t.grad_mut(logits);
                        for (std::size_t i = 0; i < tg.size(); ++i) {
                            if (tg[i] == ignore_index) continue;
                            for (std::int64_t j = 0; j < c; ++j) {
                                const double onehot = (j == tg[i]) ? 1.0 : 0.0;
                                dl[i * c + j] += g[0] * inv * (probs[i * c + j] - onehot);
                            }
                        }
                    });
}

Var lovasz_softmax(Tape& t, Var probs, std::span<const int> targets, int ignore_index) {
    const Tensor& pv = t.value(probs);
    require_rank("lovasz_softmax", pv, 2);
    const auto n = pv.dim(0), c = pv.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != n) {
        throw ShapeError("lovasz_softmax: " + std::to_string(targets.size()) + " targets for " +
                         to_string(pv.shape()));
    }
    std::vector<std::int64_t> rows;
    for (std::int64_t i = 0; i < n; ++i) {
        if (targets[i] == ignore_index) continue;
        if (targets[i] < 0 || targets[i] >= c) {
            throw DataError("lovasz_softmax: target " + std::to_string(targets[i]) + " out of range");
        }
        double s = 0.0;
        for (std::int64_t j = 0; j < c; ++j) s += pv[i * c + j];
        if (std::abs(s - 1.0) > 1e-6) {
            throw DataError("lovasz_softmax: probabilities of row " + std::to_string(i) + " sum to " +
                            std::to_string(s));
        }
        rows.push_back(i);
    }
    if (rows.empty()) throw DataError("lovasz_softmax: undefined loss, every target is ignored");

    std::vector<char> present(static_cast<std::size_t>(c), 0);
    for (auto i : rows) present[targets[i]] = 1;
    const auto n_present = std::count(present.begin(), present.end(), 1);

    // Per-class d loss / d p(i, c), gathered while evaluating.
    Tensor dprob(pv.shape());
    double loss = 0.0;
    const auto m = rows.size();
    std::vector<double> err(m);
    std::vector<char> fg(m);
    std::vector<std::size_t> order(m);
    std::vector<double> grad(m);
    for (std::int64_t cls = 0; cls < c; ++cls) {
        if (!present[cls]) continue;
        double gts = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            fg[r] = targets[rows[r]] == cls;
            const double p = pv[rows[r] * c + cls];
            err[r] = fg[r] ? 1.0 - p : p;
            gts += fg[r];
        }
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });
        // Lovasz extension gradient of the Jaccard loss along the sorted errors.
        double cum_fg = 0.0;
        double cum_bg = 0.0;
        double prev_jacc = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t q = order[r];
            cum_fg += fg[q];
            cum_bg += 1.0 - fg[q];
            const double jacc = 1.0 - (gts - cum_fg) / (gts + cum_bg);
            grad[r] = jacc - prev_jacc;
            prev_jacc = jacc;
            loss += err[q] * grad[r];
            const double derr_dp = fg[q] ? -1.0 : 1.0;
            dprob[rows[q] * c + cls] += grad[r] * derr_dp;
        }
    }
    const double inv = 1.0 / static_cast<double>(n_present);
    return t.record("lovasz_softmax", Tensor::scalar(loss * inv), t.requires_grad(probs),
                    [probs, dprob = std::move(dprob), inv](Tape& t, const Tensor& g) {
                        Tensor& dp = t.grad_mut(probs);
                        for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += g[0] * inv * dprob[i];
                    });
}

}  // namespace cseg::ops
