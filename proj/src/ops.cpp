#include "pcdiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pcd::ad {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw_shape_error(op, a.shape(), b.shape());
}

void require_rank2(const char* op, const Tensor& t) {
    if (t.rank() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " +
                                    shape_str(t.shape()));
    }
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        const double z = std::exp(-x);
        return 1.0 / (1.0 + z);
    }
    const double z = std::exp(x);
    return z / (1.0 + z);
}

void axpy(std::span<double> out, double a, std::span<const double> x) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * x[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.size());
    const double* pa = a.raw();
    const double* pb = b.raw();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
    return make_op(a.shape(), std::move(out), {&a, &b},
                   [](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (!gin[0].empty()) axpy(gin[0], 1.0, g);
                       if (!gin[1].empty()) axpy(gin[1], 1.0, g);
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a.size());
    const double* pa = a.raw();
    const double* pb = b.raw();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
    return make_op(a.shape(), std::move(out), {&a, &b},
                   [](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (!gin[0].empty()) axpy(gin[0], 1.0, g);
                       if (!gin[1].empty()) axpy(gin[1], -1.0, g);
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.size());
    const double* pa = a.raw();
    const double* pb = b.raw();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
    auto ha = a.handle();
    auto hb = b.handle();
    return make_op(a.shape(), std::move(out), {&a, &b},
                   [ha, hb](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (!gin[0].empty()) {
                           for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * hb->values[i];
                       }
                       if (!gin[1].empty()) {
                           for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] += g[i] * ha->values[i];
                       }
                   });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    const double* pa = a.raw();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * c;
    return make_op(a.shape(), std::move(out), {&a},
                   [c](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (!gin[0].empty()) axpy(gin[0], c, g);
                   });
}

Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    const double* pa = a.raw();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + c;
    return make_op(a.shape(), std::move(out), {&a},
                   [](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (!gin[0].empty()) axpy(gin[0], 1.0, g);
                   });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor silu(const Tensor& x) {
    std::vector<double> out(x.size());
    const double* px = x.raw();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] * sigmoid_scalar(px[i]);
    auto hx = x.handle();
    return make_op(x.shape(), std::move(out), {&x},
                   [hx](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (gin[0].empty()) return;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                           const double s = sigmoid_scalar(hx->values[i]);
                           gin[0][i] += g[i] * s * (1.0 + hx->values[i] * (1.0 - s));
                       }
                   });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    const double* px = x.raw();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(px[i]);
    auto hx = x.handle();
    return make_op(x.shape(), std::move(out), {&x},
                   [hx](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (gin[0].empty()) return;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                           const double s = sigmoid_scalar(hx->values[i]);
                           gin[0][i] += g[i] * s * (1.0 - s);
                       }
                   });
}

Tensor softplus(const Tensor& x) {
    std::vector<double> out(x.size());
    const double* px = x.raw();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = px[i];
        out[i] = v > 30.0 ? v : std::log1p(std::exp(v));
    }
    auto hx = x.handle();
    return make_op(x.shape(), std::move(out), {&x},
                   [hx](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (gin[0].empty()) return;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                           gin[0][i] += g[i] * sigmoid_scalar(hx->values[i]);
                       }
                   });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    const double* px = x.raw();
    for (std::size_t i = 0; i < x.size(); ++i) total += px[i];
    return make_op(Shape{}, {total}, {&x},
                   [](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (!gin[0].empty()) {
                           for (double& v : gin[0]) v += g[0];
                       }
                   });
}

Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.size());
    double total = 0.0;
    const double* px = x.raw();
    for (std::size_t i = 0; i < x.size(); ++i) total += px[i];
    return make_op(Shape{}, {total * inv}, {&x},
                   [inv](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (!gin[0].empty()) {
                           for (double& v : gin[0]) v += g[0] * inv;
                       }
                   });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size()) throw_shape_error("reshape", x.shape(), shape);
    std::vector<double> out(x.values().begin(), x.values().end());
    return make_op(std::move(shape), std::move(out), {&x},
                   [](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (!gin[0].empty()) axpy(gin[0], 1.0, g);
                   });
}

Tensor transpose2d(const Tensor& x) {
    require_rank2("transpose2d", x);
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    std::vector<double> out(x.size());
    const double* px = x.raw();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = px[i * c + j];
    return make_op(Shape{c, r}, std::move(out), {&x},
                   [r, c](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (gin[0].empty()) return;
                       for (std::size_t j = 0; j < c; ++j)
                           for (std::size_t i = 0; i < r; ++i) gin[0][i * c + j] += g[j * r + i];
                   });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_rank2("concat_cols", a);
    require_rank2("concat_cols", b);
    if (a.shape()[0] != b.shape()[0]) throw_shape_error("concat_cols", a.shape(), b.shape());
    const std::size_t rows = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
    std::vector<double> out(rows * (ca + cb));
    const double* pa = a.raw();
    const double* pb = b.raw();
    for (std::size_t i = 0; i < rows; ++i) {
        std::copy(pa + i * ca, pa + (i + 1) * ca, out.begin() + static_cast<std::ptrdiff_t>(i * (ca + cb)));
        std::copy(pb + i * cb, pb + (i + 1) * cb, out.begin() + static_cast<std::ptrdiff_t>(i * (ca + cb) + ca));
    }
    return make_op(Shape{rows, ca + cb}, std::move(out), {&a, &b},
                   [rows, ca, cb](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       for (std::size_t i = 0; i < rows; ++i) {
                           if (!gin[0].empty())
                               for (std::size_t j = 0; j < ca; ++j) gin[0][i * ca + j] += g[i * (ca + cb) + j];
                           if (!gin[1].empty())
                               for (std::size_t j = 0; j < cb; ++j) gin[1][i * cb + j] += g[i * (ca + cb) + ca + j];
                       }
                   });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
    require_rank2("gather_rows", x);
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    for (std::size_t i : idx) {
        if (i >= rows) {
            throw std::out_of_range("gather_rows: index " + std::to_string(i) + " out of " +
                                    std::to_string(rows) + " rows");
        }
    }
    std::vector<double> out(idx.size() * cols);
    const double* px = x.raw();
    for (std::size_t m = 0; m < idx.size(); ++m) {
        std::copy(px + idx[m] * cols, px + (idx[m] + 1) * cols,
                  out.begin() + static_cast<std::ptrdiff_t>(m * cols));
    }
    std::vector<std::size_t> idx_copy(idx.begin(), idx.end());
    return make_op(Shape{idx.size(), cols}, std::move(out), {&x},
                   [idx_copy = std::move(idx_copy), cols](std::span<const double> g,
                                                          const std::vector<std::span<double>>& gin) {
                       if (gin[0].empty()) return;
                       for (std::size_t m = 0; m < idx_copy.size(); ++m) {
                           for (std::size_t j = 0; j < cols; ++j)
                               gin[0][idx_copy[m] * cols + j] += g[m * cols + j];
                       }
                   });
}

Tensor reverse_cols(const Tensor& x) {
    require_rank2("reverse_cols", x);
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    std::vector<double> out(x.size());
    const double* px = x.raw();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = px[i * c + (c - 1 - j)];
    return make_op(x.shape(), std::move(out), {&x},
                   [r, c](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (gin[0].empty()) return;
                       for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j) gin[0][i * c + j] += g[i * c + (c - 1 - j)];
                   });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
    require_rank2("scale_rows", x);
    if (s.size() != x.shape()[0]) throw_shape_error("scale_rows", x.shape(), s.shape());
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    std::vector<double> out(x.size());
    const double* px = x.raw();
    const double* ps = s.raw();
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = px[i * cols + j] * ps[i];
    auto hx = x.handle();
    auto hs = s.handle();
    return make_op(x.shape(), std::move(out), {&x, &s},
                   [hx, hs, rows, cols](std::span<const double> g,
                                        const std::vector<std::span<double>>& gin) {
                       for (std::size_t i = 0; i < rows; ++i) {
                           if (!gin[0].empty()) {
                               for (std::size_t j = 0; j < cols; ++j)
                                   gin[0][i * cols + j] += g[i * cols + j] * hs->values[i];
                           }
                           if (!gin[1].empty()) {
                               double acc = 0.0;
                               for (std::size_t j = 0; j < cols; ++j)
                                   acc += g[i * cols + j] * hx->values[i * cols + j];
                               gin[1][i] += acc;
                           }
                       }
                   });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    require_rank2("add_rowvec", x);
    if (v.size() != x.shape()[1]) throw_shape_error("add_rowvec", x.shape(), v.shape());
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    std::vector<double> out(x.size());
    const double* px = x.raw();
    const double* pv = v.raw();
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = px[i * cols + j] + pv[j];
    return make_op(x.shape(), std::move(out), {&x, &v},
                   [rows, cols](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (!gin[0].empty()) axpy(gin[0], 1.0, g);
                       if (!gin[1].empty()) {
                           for (std::size_t i = 0; i < rows; ++i)
                               for (std::size_t j = 0; j < cols; ++j) gin[1][j] += g[i * cols + j];
                       }
                   });
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
    require_rank2("mul_rowvec", x);
    if (v.size() != x.shape()[1]) throw_shape_error("mul_rowvec", x.shape(), v.shape());
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    std::vector<double> out(x.size());
    const double* px = x.raw();
    const double* pv = v.raw();
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = px[i * cols + j] * pv[j];
    auto hx = x.handle();
    auto hv = v.handle();
    return make_op(x.shape(), std::move(out), {&x, &v},
                   [hx, hv, rows, cols](std::span<const double> g,
                                        const std::vector<std::span<double>>& gin) {
                       if (!gin[0].empty()) {
                           for (std::size_t i = 0; i < rows; ++i)
                               for (std::size_t j = 0; j < cols; ++j)
                                   gin[0][i * cols + j] += g[i * cols + j] * hv->values[j];
                       }
                       if (!gin[1].empty()) {
                           for (std::size_t i = 0; i < rows; ++i)
                               for (std::size_t j = 0; j < cols; ++j)
                                   gin[1][j] += g[i * cols + j] * hx->values[i * cols + j];
                       }
                   });
}

Tensor add_colvec(const Tensor& x, const Tensor& v) {
    require_rank2("add_colvec", x);
    if (v.size() != x.shape()[0]) throw_shape_error("add_colvec", x.shape(), v.shape());
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    std::vector<double> out(x.size());
    const double* px = x.raw();
    const double* pv = v.raw();
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = px[i * cols + j] + pv[i];
    return make_op(x.shape(), std::move(out), {&x, &v},
                   [rows, cols](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (!gin[0].empty()) axpy(gin[0], 1.0, g);
                       if (!gin[1].empty()) {
                           for (std::size_t i = 0; i < rows; ++i) {
                               double acc = 0.0;
                               for (std::size_t j = 0; j < cols; ++j) acc += g[i * cols + j];
                               gin[1][i] += acc;
                           }
                       }
                   });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2("matmul", a);
    require_rank2("matmul", b);
    if (a.shape()[1] != b.shape()[0]) throw_shape_error("matmul", a.shape(), b.shape());
    const std::size_t p = a.shape()[0], q = a.shape()[1], r = b.shape()[1];
    std::vector<double> out(p * r, 0.0);
    const double* pa = a.raw();
    const double* pb = b.raw();
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t k = 0; k < q; ++k) {
            const double av = pa[i * q + k];
            const double* brow = pb + k * r;
            double* orow = out.data() + i * r;
            for (std::size_t j = 0; j < r; ++j) orow[j] += av * brow[j];
        }
    }
    auto ha = a.handle();
    auto hb = b.handle();
    return make_op(Shape{p, r}, std::move(out), {&a, &b},
                   [ha, hb, p, q, r](std::span<const double> g,
                                     const std::vector<std::span<double>>& gin) {
                       if (!gin[0].empty()) {
                           // dA = G . B^T
                           for (std::size_t i = 0; i < p; ++i) {
                               for (std::size_t k = 0; k < q; ++k) {
                                   const double* grow = g.data() + i * r;
                                   const double* brow = hb->values.data() + k * r;
                                   double acc = 0.0;
                                   for (std::size_t j = 0; j < r; ++j) acc += grow[j] * brow[j];
                                   gin[0][i * q + k] += acc;
                               }
                           }
                       }
                       if (!gin[1].empty()) {
                           // dB = A^T . G
                           for (std::size_t i = 0; i < p; ++i) {
                               for (std::size_t k = 0; k < q; ++k) {
                                   const double av = ha->values[i * q + k];
                                   const double* grow = g.data() + i * r;
                                   double* brow = gin[1].data() + k * r;
                                   for (std::size_t j = 0; j < r; ++j) brow[j] += av * grow[j];
                               }
                           }
                       }
                   });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank2("linear", w);
    if (x.rank() < 1) throw std::invalid_argument("linear: input must have rank >= 1");
    const std::size_t in = w.shape()[0], out_dim = w.shape()[1];
    if (x.shape().back() != in) throw_shape_error("linear", x.shape(), w.shape());
    if (b.size() != out_dim) throw_shape_error("linear", w.shape(), b.shape());
    const std::size_t rows = x.size() / in;
    std::vector<double> out(rows * out_dim);
    const double* px = x.raw();
    const double* pw = w.raw();
    const double* pbias = b.raw();
    for (std::size_t i = 0; i < rows; ++i) {
        double* orow = out.data() + i * out_dim;
        std::copy(pbias, pbias + out_dim, orow);
        const double* xrow = px + i * in;
        for (std::size_t k = 0; k < in; ++k) {
            const double xv = xrow[k];
            const double* wrow = pw + k * out_dim;
            for (std::size_t j = 0; j < out_dim; ++j) orow[j] += xv * wrow[j];
        }
    }
    Shape out_shape = x.shape();
    out_shape.back() = out_dim;
    auto hx = x.handle();
    auto hw = w.handle();
    return make_op(std::move(out_shape), std::move(out), {&x, &w, &b},
                   [hx, hw, rows, in, out_dim](std::span<const double> g,
                                               const std::vector<std::span<double>>& gin) {
                       if (!gin[0].empty()) {
                           for (std::size_t i = 0; i < rows; ++i) {
                               const double* grow = g.data() + i * out_dim;
                               double* xg = gin[0].data() + i * in;
                               for (std::size_t k = 0; k < in; ++k) {
                                   const double* wrow = hw->values.data() + k * out_dim;
                                   double acc = 0.0;
                                   for (std::size_t j = 0; j < out_dim; ++j) acc += grow[j] * wrow[j];
                                   xg[k] += acc;
                               }
                           }
                       }
                       if (!gin[1].empty()) {
                           for (std::size_t i = 0; i < rows; ++i) {
                               const double* grow = g.data() + i * out_dim;
                               const double* xrow = hx->values.data() + i * in;
                               for (std::size_t k = 0; k < in; ++k) {
                                   const double xv = xrow[k];
                                   double* wg = gin[1].data() + k * out_dim;
                                   for (std::size_t j = 0; j < out_dim; ++j) wg[j] += xv * grow[j];
                               }
                           }
                       }
                       if (!gin[2].empty()) {
                           for (std::size_t i = 0; i < rows; ++i) {
                               const double* grow = g.data() + i * out_dim;
                               for (std::size_t j = 0; j < out_dim; ++j) gin[2][j] += grow[j];
                           }
                       }
                   });
}

Tensor mul_bscalar(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) throw_shape_error("mul_bscalar", x.shape(), s.shape());
    const double sv = s.flat(0);
    std::vector<double> out(x.size());
    const double* px = x.raw();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] * sv;
    auto hx = x.handle();
    return make_op(x.shape(), std::move(out), {&x, &s},
                   [hx, sv](std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (!gin[0].empty()) axpy(gin[0], sv, g);
                       if (!gin[1].empty()) {
                           double acc = 0.0;
                           for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * hx->values[i];
                           gin[1][0] += acc;
                       }
                   });
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, bool causal) {
    require_rank2("conv1d", x);
    require_rank2("conv1d", kernel);
    if (kernel.shape()[0] != x.shape()[0]) throw_shape_error("conv1d", x.shape(), kernel.shape());
    const std::size_t C = x.shape()[0], L = x.shape()[1], W = kernel.shape()[1];
    if (W < 1) throw std::invalid_argument("conv1d: kernel width must be positive");
    // Kernel tap j multiplies x[t - (W-1) + j + shift]; causal shift = 0,
    // centered shift = (W-1)/2 rounded down from the right edge.
    const std::ptrdiff_t shift = causal ? 0 : static_cast<std::ptrdiff_t>(W / 2);
    std::vector<double> out(x.size(), 0.0);
    const double* px = x.raw();
    const double* pk = kernel.raw();
    for (std::size_t c = 0; c < C; ++c) {
        const double* xrow = px + c * L;
        const double* krow = pk + c * W;
        double* orow = out.data() + c * L;
        for (std::size_t t = 0; t < L; ++t) {
            double acc = 0.0;
            for (std::size_t j = 0; j < W; ++j) {
                const std::ptrdiff_t s =
                    static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(W - 1) +
                    static_cast<std::ptrdiff_t>(j) + shift;
                if (s >= 0 && s < static_cast<std::ptrdiff_t>(L)) acc += krow[j] * xrow[s];
            }
            orow[t] = acc;
        }
    }
    auto hx = x.handle();
    auto hk = kernel.handle();
    return make_op(x.shape(), std::move(out), {&x, &kernel},
                   [hx, hk, C, L, W, shift](std::span<const double> g,
                                            const std::vector<std::span<double>>& gin) {
                       for (std::size_t c = 0; c < C; ++c) {
                           const double* grow = g.data() + c * L;
                           const double* xrow = hx->values.data() + c * L;
                           const double* krow = hk->values.data() + c * W;
                           for (std::size_t t = 0; t < L; ++t) {
                               for (std::size_t j = 0; j < W; ++j) {
                                   const std::ptrdiff_t s =
                                       static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(W - 1) +
                                       static_cast<std::ptrdiff_t>(j) + shift;
                                   if (s < 0 || s >= static_cast<std::ptrdiff_t>(L)) continue;
                                   if (!gin[0].empty()) gin[0][c * L + static_cast<std::size_t>(s)] += grow[t] * krow[j];
                                   if (!gin[1].empty()) gin[1][c * W + j] += grow[t] * xrow[s];
                               }
                           }
                       }
                   });
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t padding) {
    if (x.rank() != 4) throw std::invalid_argument("conv3d: input must be [C,L,L,L], got " + shape_str(x.shape()));
    if (w.rank() != 5) throw std::invalid_argument("conv3d: weights must be [Cout,Cin,k,k,k], got " + shape_str(w.shape()));
    const std::size_t Cin = x.shape()[0], L = x.shape()[1];
    if (x.shape()[2] != L || x.shape()[3] != L) {
        throw std::invalid_argument("conv3d: input volume must be cubic, got " + shape_str(x.shape()));
    }
    const std::size_t Cout = w.shape()[0], K = w.shape()[2];
    if (w.shape()[1] != Cin || w.shape()[3] != K || w.shape()[4] != K) {
        throw_shape_error("conv3d", x.shape(), w.shape());
    }
    if (b.size() != Cout) throw_shape_error("conv3d", w.shape(), b.shape());
    if (stride == 0) throw std::invalid_argument("conv3d: stride must be positive");
    const std::ptrdiff_t span = static_cast<std::ptrdiff_t>(L) + 2 * static_cast<std::ptrdiff_t>(padding) -
                                static_cast<std::ptrdiff_t>(K);
    if (span < 0 || span % static_cast<std::ptrdiff_t>(stride) != 0) {
        throw std::invalid_argument("conv3d: output extent (" + std::to_string(L) + " + 2*" +
                                    std::to_string(padding) + " - " + std::to_string(K) + ")/" +
                                    std::to_string(stride) + " + 1 is not integral");
    }
    const std::size_t Lo = static_cast<std::size_t>(span) / stride + 1;
    const std::size_t in_plane = L * L, in_vol = L * L * L;
    const std::size_t out_plane = Lo * Lo, out_vol = Lo * Lo * Lo;
    std::vector<double> out(Cout * out_vol);
    const double* px = x.raw();
    const double* pw = w.raw();
    const double* pb = b.raw();

    const auto in_index = [L, in_plane, in_vol](std::size_t ci, std::ptrdiff_t z, std::ptrdiff_t y,
                                                std::ptrdiff_t xx) {
        return ci * in_vol + static_cast<std::size_t>(z) * in_plane + static_cast<std::size_t>(y) * L +
               static_cast<std::size_t>(xx);
    };

    for (std::size_t co = 0; co < Cout; ++co) {
        for (std::size_t oz = 0; oz < Lo; ++oz) {
            for (std::size_t oy = 0; oy < Lo; ++oy) {
                for (std::size_t ox = 0; ox < Lo; ++ox) {
                    double acc = pb[co];
                    for (std::size_t ci = 0; ci < Cin; ++ci) {
                        const double* wk = pw + ((co * Cin + ci) * K * K * K);
                        for (std::size_t kz = 0; kz < K; ++kz) {
                            const std::ptrdiff_t z = static_cast<std::ptrdiff_t>(oz * stride + kz) -
                                                     static_cast<std::ptrdiff_t>(padding);
                            if (z < 0 || z >= static_cast<std::ptrdiff_t>(L)) continue;
                            for (std::size_t ky = 0; ky < K; ++ky) {
                                const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                         static_cast<std::ptrdiff_t>(padding);
                                if (y < 0 || y >= static_cast<std::ptrdiff_t>(L)) continue;
                                for (std::size_t kx = 0; kx < K; ++kx) {
                                    const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                              static_cast<std::ptrdiff_t>(padding);
                                    if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(L)) continue;
                                    acc += wk[(kz * K + ky) * K + kx] * px[in_index(ci, z, y, xx)];
                                }
                            }
                        }
                    }
                    out[co * out_vol + oz * out_plane + oy * Lo + ox] = acc;
                }
            }
        }
    }

    auto hx = x.handle();
    auto hw = w.handle();
    return make_op(Shape{Cout, Lo, Lo, Lo}, std::move(out), {&x, &w, &b},
                   [hx, hw, Cin, Cout, L, K, Lo, stride, padding, in_plane, in_vol, out_plane,
                    out_vol, in_index](std::span<const double> g,
                                       const std::vector<std::span<double>>& gin) {
                       for (std::size_t co = 0; co < Cout; ++co) {
                           for (std::size_t oz = 0; oz < Lo; ++oz) {
                               for (std::size_t oy = 0; oy < Lo; ++oy) {
                                   for (std::size_t ox = 0; ox < Lo; ++ox) {
                                       const double gv = g[co * out_vol + oz * out_plane + oy * Lo + ox];
                                       if (gv == 0.0) continue;
                                       if (!gin[2].empty()) gin[2][co] += gv;
                                       for (std::size_t ci = 0; ci < Cin; ++ci) {
                                           const std::size_t wbase = (co * Cin + ci) * K * K * K;
                                           for (std::size_t kz = 0; kz < K; ++kz) {
                                               const std::ptrdiff_t z =
                                                   static_cast<std::ptrdiff_t>(oz * stride + kz) -
                                                   static_cast<std::ptrdiff_t>(padding);
                                               if (z < 0 || z >= static_cast<std::ptrdiff_t>(L)) continue;
                                               for (std::size_t ky = 0; ky < K; ++ky) {
                                                   const std::ptrdiff_t y =
                                                       static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                       static_cast<std::ptrdiff_t>(padding);
                                                   if (y < 0 || y >= static_cast<std::ptrdiff_t>(L)) continue;
                                                   for (std::size_t kx = 0; kx < K; ++kx) {
                                                       const std::ptrdiff_t xx =
                                                           static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                           static_cast<std::ptrdiff_t>(padding);
                                                       if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(L)) continue;
                                                       const std::size_t xi = in_index(ci, z, y, xx);
                                                       const std::size_t wi = wbase + (kz * K + ky) * K + kx;
                                                       if (!gin[0].empty()) gin[0][xi] += gv * hw->values[wi];
                                                       if (!gin[1].empty()) gin[1][wi] += gv * hx->values[xi];
                                                   }
                                               }
                                           }
                                       }
                                   }
                               }
                           }
                       }
                   });
}

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gain, const Tensor& bias,
                  double eps) {
    if (x.rank() < 1) throw std::invalid_argument("group_norm: input must have rank >= 1");
    const std::size_t C = x.shape()[0];
    if (groups == 0 || C % groups != 0) {
        throw std::invalid_argument("group_norm: " + std::to_string(C) +
                                    " channels not divisible by " + std::to_string(groups) +
                                    " groups");
    }
    if (gain.size() != C || bias.size() != C) throw_shape_error("group_norm", x.shape(), gain.shape());
    const std::size_t spatial = x.size() / C;
    const std::size_t gc = C / groups;           // channels per group
    const std::size_t m = gc * spatial;          // elements per group
    std::vector<double> out(x.size());
    std::vector<double> mu(groups), inv_sigma(groups);
    const double* px = x.raw();
    const double* pg = gain.raw();
    const double* pbias = bias.raw();
    for (std::size_t g = 0; g < groups; ++g) {
        const double* base = px + g * gc * spatial;
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += base[i];
        const double mean_g = s / static_cast<double>(m);
        double var = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double d = base[i] - mean_g;
            var += d * d;
        }
        var /= static_cast<double>(m);
        mu[g] = mean_g;
        inv_sigma[g] = 1.0 / std::sqrt(var + eps);
    }
    for (std::size_t c = 0; c < C; ++c) {
        const std::size_t g = c / gc;
        for (std::size_t i = 0; i < spatial; ++i) {
            const double xhat = (px[c * spatial + i] - mu[g]) * inv_sigma[g];
            out[c * spatial + i] = xhat * pg[c] + pbias[c];
        }
    }
    auto hx = x.handle();
    auto hg = gain.handle();
    return make_op(x.shape(), std::move(out), {&x, &gain, &bias},
                   [hx, hg, groups, gc, spatial, m, mu, inv_sigma](
                       std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       const double* px2 = hx->values.data();
                       const double* pg2 = hg->values.data();
                       for (std::size_t grp = 0; grp < groups; ++grp) {
                           // Group sums needed by the dx formula.
                           double sum_dy = 0.0, sum_dy_xhat = 0.0;
                           for (std::size_t c = grp * gc; c < (grp + 1) * gc; ++c) {
                               for (std::size_t i = 0; i < spatial; ++i) {
                                   const std::size_t k = c * spatial + i;
                                   const double xhat = (px2[k] - mu[grp]) * inv_sigma[grp];
                                   const double dy = g[k] * pg2[c];
                                   sum_dy += dy;
                                   sum_dy_xhat += dy * xhat;
                                   if (!gin[1].empty()) gin[1][c] += g[k] * xhat;
                                   if (!gin[2].empty()) gin[2][c] += g[k];
                               }
                           }
                           if (gin[0].empty()) continue;
                           const double inv_m = 1.0 / static_cast<double>(m);
                           for (std::size_t c = grp * gc; c < (grp + 1) * gc; ++c) {
                               for (std::size_t i = 0; i < spatial; ++i) {
                                   const std::size_t k = c * spatial + i;
                                   const double xhat = (px2[k] - mu[grp]) * inv_sigma[grp];
                                   const double dy = g[k] * pg2[c];
                                   gin[0][k] += inv_sigma[grp] *
                                                (dy - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
                               }
                           }
                       }
                   });
}

namespace {

Tensor layer_norm_impl(const Tensor& x, const Tensor* gain, const Tensor* bias, double eps) {
    if (x.rank() < 1) throw std::invalid_argument("layer_norm: input must have rank >= 1");
    const std::size_t D = x.shape().back();
    const std::size_t rows = x.size() / D;
    if (gain && (gain->size() != D || bias->size() != D)) {
        throw_shape_error("layer_norm", x.shape(), gain->shape());
    }
    std::vector<double> out(x.size());
    std::vector<double> mu(rows), inv_sigma(rows);
    const double* px = x.raw();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = px + r * D;
        double s = 0.0;
        for (std::size_t j = 0; j < D; ++j) s += row[j];
        const double mean_r = s / static_cast<double>(D);
        double var = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            const double d = row[j] - mean_r;
            var += d * d;
        }
        var /= static_cast<double>(D);
        mu[r] = mean_r;
        inv_sigma[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < D; ++j) {
            double v = (row[j] - mean_r) * inv_sigma[r];
            if (gain) v = v * gain->raw()[j] + bias->raw()[j];
            out[r * D + j] = v;
        }
    }
    auto hx = x.handle();
    std::shared_ptr<detail::TensorData> hg = gain ? gain->handle() : nullptr;
    auto backward = [hx, hg, rows, D, mu, inv_sigma](std::span<const double> g,
                                                     const std::vector<std::span<double>>& gin) {
        const double* px2 = hx->values.data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* row = px2 + r * D;
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t j = 0; j < D; ++j) {
                const double xhat = (row[j] - mu[r]) * inv_sigma[r];
                const double dy = hg ? g[r * D + j] * hg->values[j] : g[r * D + j];
                sum_dy += dy;
                sum_dy_xhat += dy * xhat;
                if (gin.size() > 1 && !gin[1].empty()) gin[1][j] += g[r * D + j] * xhat;
                if (gin.size() > 2 && !gin[2].empty()) gin[2][j] += g[r * D + j];
            }
            if (gin[0].empty()) continue;
            const double inv_d = 1.0 / static_cast<double>(D);
            for (std::size_t j = 0; j < D; ++j) {
                const double xhat = (row[j] - mu[r]) * inv_sigma[r];
                const double dy = hg ? g[r * D + j] * hg->values[j] : g[r * D + j];
                gin[0][r * D + j] += inv_sigma[r] * (dy - inv_d * sum_dy - xhat * inv_d * sum_dy_xhat);
            }
        }
    };
    if (gain) return make_op(x.shape(), std::move(out), {&x, gain, bias}, backward);
    return make_op(x.shape(), std::move(out), {&x}, backward);
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    return layer_norm_impl(x, &gain, &bias, eps);
}

Tensor layer_norm(const Tensor& x, double eps) { return layer_norm_impl(x, nullptr, nullptr, eps); }

Tensor scatter_mean_rows(const Tensor& x, std::span<const std::size_t> bucket,
                         std::size_t bucket_count) {
    require_rank2("scatter_mean_rows", x);
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    if (bucket.size() != rows) {
        throw std::invalid_argument("scatter_mean_rows: bucket list length " +
                                    std::to_string(bucket.size()) + " != row count " +
                                    std::to_string(rows));
    }
    std::vector<double> counts(bucket_count, 0.0);
    for (std::size_t i : bucket) {
        if (i >= bucket_count) {
            throw std::out_of_range("scatter_mean_rows: bucket " + std::to_string(i) + " out of " +
                                    std::to_string(bucket_count));
        }
        counts[i] += 1.0;
    }
    std::vector<double> out(bucket_count * cols, 0.0);
    const double* px = x.raw();
    for (std::size_t i = 0; i < rows; ++i) {
        double* orow = out.data() + bucket[i] * cols;
        const double* xrow = px + i * cols;
        for (std::size_t j = 0; j < cols; ++j) orow[j] += xrow[j];
    }
    for (std::size_t b = 0; b < bucket_count; ++b) {
        if (counts[b] > 0.0) {
            const double inv = 1.0 / counts[b];
            for (std::size_t j = 0; j < cols; ++j) out[b * cols + j] *= inv;
        }
    }
    std::vector<std::size_t> bucket_copy(bucket.begin(), bucket.end());
    return make_op(Shape{bucket_count, cols}, std::move(out), {&x},
                   [bucket_copy = std::move(bucket_copy), counts = std::move(counts), cols](
                       std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (gin[0].empty()) return;
                       for (std::size_t i = 0; i < bucket_copy.size(); ++i) {
                           const std::size_t b = bucket_copy[i];
                           const double inv = 1.0 / counts[b];
                           for (std::size_t j = 0; j < cols; ++j)
                               gin[0][i * cols + j] += g[b * cols + j] * inv;
                       }
                   });
}

Tensor blend_rows(const Tensor& table, std::span<const std::size_t> idx, std::span<const double> w,
                  std::size_t K) {
    require_rank2("blend_rows", table);
    if (K == 0 || idx.size() != w.size() || idx.size() % K != 0) {
        throw std::invalid_argument("blend_rows: index/weight lists must be M*K long");
    }
    const std::size_t M = idx.size() / K;
    const std::size_t rows = table.shape()[0], cols = table.shape()[1];
    for (std::size_t i : idx) {
        if (i >= rows) {
            throw std::out_of_range("blend_rows: index " + std::to_string(i) + " out of " +
                                    std::to_string(rows) + " rows");
        }
    }
    std::vector<double> out(M * cols, 0.0);
    const double* pt = table.raw();
    for (std::size_t m = 0; m < M; ++m) {
        double* orow = out.data() + m * cols;
        for (std::size_t k = 0; k < K; ++k) {
            const double wv = w[m * K + k];
            const double* trow = pt + idx[m * K + k] * cols;
            for (std::size_t j = 0; j < cols; ++j) orow[j] += wv * trow[j];
        }
    }
    std::vector<std::size_t> idx_copy(idx.begin(), idx.end());
    std::vector<double> w_copy(w.begin(), w.end());
    return make_op(Shape{M, cols}, std::move(out), {&table},
                   [idx_copy = std::move(idx_copy), w_copy = std::move(w_copy), K, cols, M](
                       std::span<const double> g, const std::vector<std::span<double>>& gin) {
                       if (gin[0].empty()) return;
                       for (std::size_t m = 0; m < M; ++m) {
                           const double* grow = g.data() + m * cols;
                           for (std::size_t k = 0; k < K; ++k) {
                               const double wv = w_copy[m * K + k];
                               double* trow = gin[0].data() + idx_copy[m * K + k] * cols;
                               for (std::size_t j = 0; j < cols; ++j) trow[j] += wv * grow[j];
                           }
                       }
                   });
}

}  // namespace pcd::ad
