#include "roma/ops.hpp"

#include <cmath>

#include "roma/kernels.hpp"

namespace roma {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

bool recording(std::initializer_list<const Tensor*> inputs) {
    if (!current_tape()) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

void require_2d(const Tensor& t, const char* who) {
    if (t.ndim() != 2) throw ShapeError(std::string(who) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (recording({&a, &b})) {
        out.set_requires_grad(true);
        current_tape()->record("add", out, [a, b, out]() mutable {
            const double* g = out.grad();
            if (a.requires_grad()) {
                double* ga = a.grad();
                for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad();
                for (std::size_t i = 0; i < b.numel(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (recording({&a, &b})) {
        out.set_requires_grad(true);
        current_tape()->record("sub", out, [a, b, out]() mutable {
            const double* g = out.grad();
            if (a.requires_grad()) {
                double* ga = a.grad();
                for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad();
                for (std::size_t i = 0; i < b.numel(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (recording({&a, &b})) {
        out.set_requires_grad(true);
        current_tape()->record("mul", out, [a, b, out]() mutable {
            const double* g = out.grad();
            if (a.requires_grad()) {
                double* ga = a.grad();
                for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad();
                for (std::size_t i = 0; i < b.numel(); ++i) gb[i] += g[i] * a.data()[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * c;
    if (recording({&a})) {
        out.set_requires_grad(true);
        current_tape()->record("scale", out, [a, c, out]() mutable {
            const double* g = out.grad();
            double* ga = a.grad();
            for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    require_2d(x, "add_rowvec");
    if (v.numel() != x.cols())
        throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) + " vs row width " + std::to_string(x.cols()));
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] = x.data()[i * n + j] + v.data()[j];
    if (recording({&x, &v})) {
        out.set_requires_grad(true);
        current_tape()->record("add_rowvec", out, [x, v, out, m, n]() mutable {
            const double* g = out.grad();
            if (x.requires_grad()) {
                double* gx = x.grad();
                for (std::size_t i = 0; i < m * n; ++i) gx[i] += g[i];
            }
            if (v.requires_grad()) {
                double* gv = v.grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
            }
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    kern::mm_nn(a.data(), b.data(), out.data(), m, k, n);
    if (recording({&a, &b})) {
        out.set_requires_grad(true);
        current_tape()->record("matmul", out, [a, b, out, m, k, n]() mutable {
            const double* g = out.grad();
            if (a.requires_grad()) kern::mm_nt(g, b.data(), a.grad(), m, n, k);
            if (b.requires_grad()) kern::mm_tn(a.data(), g, b.grad(), m, k, n);
        });
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_nt");
    require_2d(b, "matmul_nt");
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out = Tensor::zeros({m, n});
    kern::mm_nt(a.data(), b.data(), out.data(), m, k, n);
    if (recording({&a, &b})) {
        out.set_requires_grad(true);
        current_tape()->record("matmul_nt", out, [a, b, out, m, k, n]() mutable {
            const double* g = out.grad();  // [m x n]
            if (a.requires_grad()) kern::mm_nn(g, b.data(), a.grad(), m, n, k);
            if (b.requires_grad()) kern::mm_tn(g, a.data(), b.grad(), m, n, k);
        });
    }
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    require_2d(x, "softmax_rows");
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < m; ++i) {
        const double* xi = x.data() + i * n;
        double* yi = out.data() + i * n;
        double mx = xi[0];
        for (std::size_t j = 0; j < n; ++j) {
            if (std::isnan(xi[j])) throw NumericError("softmax_rows: NaN input");
            if (xi[j] > mx) mx = xi[j];
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            sum += yi[j];
        }
        for (std::size_t j = 0; j < n; ++j) yi[j] /= sum;
    }
    if (recording({&x})) {
        out.set_requires_grad(true);
        current_tape()->record("softmax_rows", out, [x, out, m, n]() mutable {
            const double* g = out.grad();
            double* gx = x.grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double* yi = out.data() + i * n;
                const double* gi = g + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += gi[j] * yi[j];
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += yi[j] * (gi[j] - dot);
            }
        });
    }
    return out;
}

Tensor prefix_softmax_rows(const Tensor& x) {
    require_2d(x, "prefix_softmax_rows");
    if (x.rows() != x.cols())
        throw ShapeError("prefix_softmax_rows: expected square scores, got " + shape_str(x.shape()));
    const std::size_t m = x.rows();
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 1; i < m; ++i) {
        const double* xi = x.data() + i * m;
        double* yi = out.data() + i * m;
        double mx = xi[0];
        for (std::size_t j = 0; j < i; ++j) {
            if (std::isnan(xi[j])) throw NumericError("prefix_softmax_rows: NaN input");
            if (xi[j] > mx) mx = xi[j];
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < i; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            sum += yi[j];
        }
        for (std::size_t j = 0; j < i; ++j) yi[j] /= sum;
    }
    if (recording({&x})) {
        out.set_requires_grad(true);
        current_tape()->record("prefix_softmax_rows", out, [x, out, m]() mutable {
            const double* g = out.grad();
            double* gx = x.grad();
            for (std::size_t i = 1; i < m; ++i) {
                const double* yi = out.data() + i * m;
                const double* gi = g + i * m;
                double dot = 0.0;
                for (std::size_t j = 0; j < i; ++j) dot += gi[j] * yi[j];
                for (std::size_t j = 0; j < i; ++j) gx[i * m + j] += yi[j] * (gi[j] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t d = gamma.numel();
    if (d == 0) throw ShapeError("layer_norm: zero-width feature dimension");
    if (beta.numel() != d)
        throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape()) + " vs beta " + shape_str(beta.shape()));
    if (x.numel() % d != 0)
        throw ShapeError("layer_norm: " + shape_str(x.shape()) + " not divisible by feature width " +
                         std::to_string(d));
    const std::size_t rows = x.numel() / d;
    Tensor out = Tensor::zeros(x.shape());
    // Normalized activations and per-row inverse stddev are kept for backward.
    auto xhat = std::make_shared<DBuf>(x.numel());
    auto inv_std = std::make_shared<DBuf>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = xr[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        double* hr = xhat->data() + r * d;
        double* yr = out.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            hr[j] = (xr[j] - mu) * is;
            yr[j] = gamma.data()[j] * hr[j] + beta.data()[j];
        }
    }
    if (recording({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        current_tape()->record("layer_norm", out, [x, gamma, beta, out, xhat, inv_std, rows, d]() mutable {
            const double* g = out.grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g + r * d;
                const double* hr = xhat->data() + r * d;
                if (gamma.requires_grad()) {
                    double* gg = gamma.grad();
                    for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * hr[j];
                }
                if (beta.requires_grad()) {
                    double* gb = beta.grad();
                    for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
                }
                if (x.requires_grad()) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = gr[j] * gamma.data()[j];
                        m1 += dh;
                        m2 += dh * hr[j];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    double* gx = x.grad() + r * d;
                    const double is = (*inv_std)[r];
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = gr[j] * gamma.data()[j];
                        gx[j] += is * (dh - m1 - hr[j] * m2);
                    }
                }
            }
        });
    }
    return out;
}

Tensor silu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x.data()[i];
        out.data()[i] = v / (1.0 + std::exp(-v));
    }
    if (recording({&x})) {
        out.set_requires_grad(true);
        current_tape()->record("silu", out, [x, out]() mutable {
            const double* g = out.grad();
            double* gx = x.grad();
            for (std::size_t i = 0; i < x.numel(); ++i) {
                const double v = x.data()[i];
                const double s = 1.0 / (1.0 + std::exp(-v));
                gx[i] += g[i] * s * (1.0 + v * (1.0 - s));
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x.data()[i];
        out.data()[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    if (recording({&x})) {
        out.set_requires_grad(true);
        current_tape()->record("gelu", out, [x, out]() mutable {
            const double* g = out.grad();
            double* gx = x.grad();
            for (std::size_t i = 0; i < x.numel(); ++i) {
                const double v = x.data()[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                gx[i] += g[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

Tensor softplus(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x.data()[i];
        out.data()[i] = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    }
    if (recording({&x})) {
        out.set_requires_grad(true);
        current_tape()->record("softplus", out, [x, out]() mutable {
            const double* g = out.grad();
            double* gx = x.grad();
            for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[i] / (1.0 + std::exp(-x.data()[i]));
        });
    }
    return out;
}

Tensor exp_elem(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = std::exp(x.data()[i]);
    if (recording({&x})) {
        out.set_requires_grad(true);
        current_tape()->record("exp", out, [x, out]() mutable {
            const double* g = out.grad();
            double* gx = x.grad();
            for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[i] * out.data()[i];
        });
    }
    return out;
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor sum_all(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    double s = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x.data()[i];
    out.data()[0] = s;
    if (recording({&x})) {
        out.set_requires_grad(true);
        current_tape()->record("sum_all", out, [x, out]() mutable {
            const double g = out.grad()[0];
            double* gx = x.grad();
            for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    double s = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x.data()[i];
    const double inv = 1.0 / static_cast<double>(x.numel());
    out.data()[0] = s * inv;
    if (recording({&x})) {
        out.set_requires_grad(true);
        current_tape()->record("mean_all", out, [x, out, inv]() mutable {
            const double g = out.grad()[0] * inv;
            double* gx = x.grad();
            for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    Tensor out = Tensor::zeros({1});
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double dlt = a.data()[i] - b.data()[i];
        s += dlt * dlt;
    }
    const double inv = 1.0 / static_cast<double>(a.numel());
    out.data()[0] = s * inv;
    if (recording({&a, &b})) {
        out.set_requires_grad(true);
        current_tape()->record("mse", out, [a, b, out, inv]() mutable {
            const double g = out.grad()[0] * 2.0 * inv;
            if (a.requires_grad()) {
                double* ga = a.grad();
                for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g * (a.data()[i] - b.data()[i]);
            }
            if (b.requires_grad()) {
                double* gb = b.grad();
                for (std::size_t i = 0; i < b.numel(); ++i) gb[i] -= g * (a.data()[i] - b.data()[i]);
            }
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
    require_2d(x, "slice_rows");
    if (r0 >= r1 || r1 > x.rows())
        throw ShapeError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " +
                         shape_str(x.shape()));
    const std::size_t n = x.cols(), m = r1 - r0;
    Tensor out = Tensor::zeros({m, n});
    std::copy(x.data() + r0 * n, x.data() + r1 * n, out.data());
    if (recording({&x})) {
        out.set_requires_grad(true);
        current_tape()->record("slice_rows", out, [x, out, r0, m, n]() mutable {
            const double* g = out.grad();
            double* gx = x.grad();
            for (std::size_t i = 0; i < m * n; ++i) gx[r0 * n + i] += g[i];
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
    require_2d(x, "slice_cols");
    if (c0 >= c1 || c1 > x.cols())
        throw ShapeError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " +
                         shape_str(x.shape()));
    const std::size_t m = x.rows(), n = x.cols(), w = c1 - c0;
    Tensor out = Tensor::zeros({m, w});
    for (std::size_t i = 0; i < m; ++i)
        std::copy(x.data() + i * n + c0, x.data() + i * n + c1, out.data() + i * w);
    if (recording({&x})) {
        out.set_requires_grad(true);
        current_tape()->record("slice_cols", out, [x, out, c0, m, n, w]() mutable {
            const double* g = out.grad();
            double* gx = x.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) gx[i * n + c0 + j] += g[i * w + j];
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no tensors");
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.rows() != m)
            throw ShapeError("concat_cols: row mismatch, got " + shape_str(p.shape()));
        total += p.cols();
    }
    Tensor out = Tensor::zeros({m, total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            std::copy(p.data() + i * w, p.data() + (i + 1) * w, out.data() + i * total + off);
        off += w;
    }
    bool rec = false;
    if (current_tape())
        for (const auto& p : parts) rec = rec || p.requires_grad();
    if (rec) {
        out.set_requires_grad(true);
        std::vector<Tensor> held = parts;
        current_tape()->record("concat_cols", out, [held, out, m, total]() mutable {
            const double* g = out.grad();
            std::size_t off = 0;
            for (auto& p : held) {
                const std::size_t w = p.cols();
                if (p.requires_grad()) {
                    double* gp = p.grad();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + off + j];
                }
                off += w;
            }
        });
    }
    return out;
}

Tensor add_to_rows(const Tensor& x, const std::vector<std::size_t>& rows, const Tensor& v) {
    require_2d(x, "add_to_rows");
    if (v.numel() != x.cols())
        throw ShapeError("add_to_rows: vector " + shape_str(v.shape()) + " vs row width " + std::to_string(x.cols()));
    const std::size_t m = x.rows(), n = x.cols();
    for (std::size_t r : rows)
        if (r >= m) throw ContractError("add_to_rows: row " + std::to_string(r) + " out of range");
    Tensor out = Tensor::zeros(x.shape());
    std::copy(x.data(), x.data() + x.numel(), out.data());
    for (std::size_t r : rows)
        for (std::size_t j = 0; j < n; ++j) out.data()[r * n + j] += v.data()[j];
    if (recording({&x, &v})) {
        out.set_requires_grad(true);
        std::vector<std::size_t> idx = rows;
        current_tape()->record("add_to_rows", out, [x, v, out, idx, n]() mutable {
            const double* g = out.grad();
            if (x.requires_grad()) {
                double* gx = x.grad();
                for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[i];
            }
            if (v.requires_grad()) {
                double* gv = v.grad();
                for (std::size_t r : idx)
                    for (std::size_t j = 0; j < n; ++j) gv[j] += g[r * n + j];
            }
        });
    }
    return out;
}

Tensor group_mean_rows(const Tensor& x, const std::vector<std::vector<std::size_t>>& groups) {
    require_2d(x, "group_mean_rows");
    const std::size_t n = x.cols(), m = x.rows();
    Tensor out = Tensor::zeros({groups.size(), n});
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) throw ContractError("group_mean_rows: empty group " + std::to_string(g));
        double* o = out.data() + g * n;
        for (std::size_t r : groups[g]) {
            if (r >= m) throw ContractError("group_mean_rows: row " + std::to_string(r) + " out of range");
            const double* xr = x.data() + r * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += xr[j];
        }
        const double inv = 1.0 / static_cast<double>(groups[g].size());
        for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
    }
    if (recording({&x})) {
        out.set_requires_grad(true);
        auto held = std::make_shared<std::vector<std::vector<std::size_t>>>(groups);
        current_tape()->record("group_mean_rows", out, [x, out, held, n]() mutable {
            const double* g = out.grad();
            double* gx = x.grad();
            for (std::size_t gi = 0; gi < held->size(); ++gi) {
                const double inv = 1.0 / static_cast<double>((*held)[gi].size());
                for (std::size_t r : (*held)[gi])
                    for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[gi * n + j] * inv;
            }
        });
    }
    return out;
}

Tensor ssm_scan(const Tensor& u, const Tensor& delta, const Tensor& B, const Tensor& C, const Tensor& A,
                const Tensor& D) {
    require_2d(u, "ssm_scan");
    require_same_shape(u, delta, "ssm_scan(u,delta)");
    require_2d(B, "ssm_scan");
    require_same_shape(B, C, "ssm_scan(B,C)");
    const std::size_t K = u.rows(), ch = u.cols(), n = B.cols();
    if (B.rows() != K) throw ShapeError("ssm_scan: B rows " + shape_str(B.shape()) + " vs K=" + std::to_string(K));
    if (A.rows() != ch || A.cols() != n)
        throw ShapeError("ssm_scan: A " + shape_str(A.shape()) + " vs expected [" + std::to_string(ch) + "x" +
                         std::to_string(n) + "]");
    if (D.numel() != ch) throw ShapeError("ssm_scan: D " + shape_str(D.shape()) + " vs channels " + std::to_string(ch));

    const bool rec = recording({&u, &delta, &B, &C, &A, &D});
    Tensor out = Tensor::zeros({K, ch});
    // State and decay histories are only materialized when a tape is active;
    // forward-only calls keep a single running state row.
    auto hist_h = std::make_shared<DBuf>();
    auto hist_a = std::make_shared<DBuf>();
    if (rec) {
        hist_h->assign(K * ch * n, 0.0);
        hist_a->assign(K * ch * n, 0.0);
    }
    DBuf state(ch * n, 0.0);
    for (std::size_t t = 0; t < K; ++t) {
        const double* ut = u.data() + t * ch;
        const double* dt = delta.data() + t * ch;
        const double* Bt = B.data() + t * n;
        const double* Ct = C.data() + t * n;
        double* yt = out.data() + t * ch;
        for (std::size_t c = 0; c < ch; ++c) {
            const double dv = dt[c];
            const double uv = ut[c];
            const double* Ac = A.data() + c * n;
            double* hc = state.data() + c * n;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double decay = std::exp(dv * Ac[i]);
                hc[i] = decay * hc[i] + dv * Bt[i] * uv;
                acc += Ct[i] * hc[i];
                if (rec) {
                    (*hist_a)[(t * ch + c) * n + i] = decay;
                    (*hist_h)[(t * ch + c) * n + i] = hc[i];
                }
            }
            yt[c] = acc + D.data()[c] * uv;
        }
    }
    out.check_finite("ssm_scan");

    if (rec) {
        out.set_requires_grad(true);
        current_tape()->record("ssm_scan", out, [u, delta, B, C, A, D, out, hist_h, hist_a, K, ch, n]() mutable {
            const double* G = out.grad();
            double* gu = u.requires_grad() ? u.grad() : nullptr;
            double* gd = delta.requires_grad() ? delta.grad() : nullptr;
            double* gB = B.requires_grad() ? B.grad() : nullptr;
            double* gC = C.requires_grad() ? C.grad() : nullptr;
            double* gA = A.requires_grad() ? A.grad() : nullptr;
            double* gD = D.requires_grad() ? D.grad() : nullptr;
            // lam[c,i] carries decay[t+1]*dL/dh[t+1] while sweeping t downward.
            DBuf lam(ch * n, 0.0);
            for (std::size_t tt = K; tt-- > 0;) {
                const double* ut = u.data() + tt * ch;
                const double* dt = delta.data() + tt * ch;
                const double* Bt = B.data() + tt * n;
                const double* Ct = C.data() + tt * n;
                const double* Gt = G + tt * ch;
                for (std::size_t c = 0; c < ch; ++c) {
                    const double gy = Gt[c];
                    const double dv = dt[c];
                    const double uv = ut[c];
                    const double* Ac = A.data() + c * n;
                    const double* ht = hist_h->data() + (tt * ch + c) * n;
                    const double* at = hist_a->data() + (tt * ch + c) * n;
                    const double* hprev = tt > 0 ? hist_h->data() + ((tt - 1) * ch + c) * n : nullptr;
                    double* lc = lam.data() + c * n;
                    if (gD) gD[c] += gy * uv;
                    if (gu) gu[tt * ch + c] += gy * D.data()[c];
                    double dd = 0.0;
                    double du_drive = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double l = gy * Ct[i] + lc[i];
                        if (gC) gC[tt * n + i] += gy * ht[i];
                        const double hp = hprev ? hprev[i] : 0.0;
                        dd += l * (hp * Ac[i] * at[i] + Bt[i] * uv);
                        if (gA) gA[c * n + i] += l * hp * dv * at[i];
                        if (gB) gB[tt * n + i] += l * dv * uv;
                        du_drive += l * Bt[i];
                        lc[i] = at[i] * l;
                    }
                    if (gd) gd[tt * ch + c] += dd;
                    if (gu) gu[tt * ch + c] += du_drive * dv;
                }
            }
        });
    }
    return out;
}

}  // namespace roma
