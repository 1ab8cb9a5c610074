#include "odelm/ops.hpp"

#include <algorithm>
#include <cmath>

#include "odelm/errors.hpp"

namespace odelm::ops {

namespace {

Tensor make_out(std::vector<int> shape, std::vector<Tensor> parents) {
    bool rg = false;
    if (grad_enabled())
        for (const Tensor& p : parents)
            if (p.requires_grad) rg = true;
    Tensor out = Tensor::zeros(std::move(shape), rg);
    if (rg) {
        out.node = std::make_shared<Node>();
        out.node->parents = std::move(parents);
    }
    return out;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw config_error(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                           shape_str(b.shape));
}

void check_2d(const Tensor& t, const char* op) {
    if (t.shape.size() != 2)
        throw config_error(std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape));
}

double erf_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = make_out(a.shape, {a, b});
    for (std::size_t i = 0; i < a.numel(); ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
    if (out.node)
        out.node->backward = [](const Tensor& o) {
            auto& pa = o.node->parents[0];
            auto& pb = o.node->parents[1];
            for (std::size_t i = 0; i < o.numel(); ++i) {
                if (pa.requires_grad) (*pa.grad)[i] += (*o.grad)[i];
                if (pb.requires_grad) (*pb.grad)[i] += (*o.grad)[i];
            }
        };
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = make_out(a.shape, {a, b});
    for (std::size_t i = 0; i < a.numel(); ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
    if (out.node)
        out.node->backward = [](const Tensor& o) {
            auto& pa = o.node->parents[0];
            auto& pb = o.node->parents[1];
            for (std::size_t i = 0; i < o.numel(); ++i) {
                if (pa.requires_grad) (*pa.grad)[i] += (*o.grad)[i];
                if (pb.requires_grad) (*pb.grad)[i] -= (*o.grad)[i];
            }
        };
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = make_out(a.shape, {a});
    for (std::size_t i = 0; i < a.numel(); ++i) (*out.data)[i] = c * (*a.data)[i];
    if (out.node)
        out.node->backward = [c](const Tensor& o) {
            auto& pa = o.node->parents[0];
            if (!pa.requires_grad) return;
            for (std::size_t i = 0; i < o.numel(); ++i) (*pa.grad)[i] += c * (*o.grad)[i];
        };
    return out;
}

Tensor add_scaled(const Tensor& a, const Tensor& b, double c) {
    check_same_shape(a, b, "add_scaled");
    Tensor out = make_out(a.shape, {a, b});
    for (std::size_t i = 0; i < a.numel(); ++i) (*out.data)[i] = (*a.data)[i] + c * (*b.data)[i];
    if (out.node)
        out.node->backward = [c](const Tensor& o) {
            auto& pa = o.node->parents[0];
            auto& pb = o.node->parents[1];
            for (std::size_t i = 0; i < o.numel(); ++i) {
                if (pa.requires_grad) (*pa.grad)[i] += (*o.grad)[i];
                if (pb.requires_grad) (*pb.grad)[i] += c * (*o.grad)[i];
            }
        };
    return out;
}

Tensor lerp(const Tensor& a, const Tensor& b, double w) {
    check_same_shape(a, b, "lerp");
    Tensor out = make_out(a.shape, {a, b});
    for (std::size_t i = 0; i < a.numel(); ++i)
        (*out.data)[i] = (*a.data)[i] + w * ((*b.data)[i] - (*a.data)[i]);
    if (out.node)
        out.node->backward = [w](const Tensor& o) {
            auto& pa = o.node->parents[0];
            auto& pb = o.node->parents[1];
            for (std::size_t i = 0; i < o.numel(); ++i) {
                if (pa.requires_grad) (*pa.grad)[i] += (1.0 - w) * (*o.grad)[i];
                if (pb.requires_grad) (*pb.grad)[i] += w * (*o.grad)[i];
            }
        };
    return out;
}

Tensor slice_rows(const Tensor& x, int start, int count) {
    check_2d(x, "slice_rows");
    const int m = x.rows(), n = x.cols();
    if (start < 0 || count <= 0 || start + count > m)
        throw config_error("slice_rows: range [" + std::to_string(start) + "," +
                           std::to_string(start + count) + ") out of " + std::to_string(m));
    Tensor out = make_out({count, n}, {x});
    std::copy_n(x.data->begin() + static_cast<std::size_t>(start) * n,
                static_cast<std::size_t>(count) * n, out.data->begin());
    if (out.node)
        out.node->backward = [start, n](const Tensor& o) {
            auto& px = o.node->parents[0];
            if (!px.requires_grad) return;
            for (std::size_t i = 0; i < o.numel(); ++i)
                (*px.grad)[static_cast<std::size_t>(start) * n + i] += (*o.grad)[i];
        };
    return out;
}

Tensor slice_cols(const Tensor& x, int start, int count) {
    check_2d(x, "slice_cols");
    const int m = x.rows(), n = x.cols();
    if (start < 0 || count <= 0 || start + count > n)
        throw config_error("slice_cols: range [" + std::to_string(start) + "," +
                           std::to_string(start + count) + ") out of " + std::to_string(n));
    Tensor out = make_out({m, count}, {x});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < count; ++j) out.at(i, j) = x.at(i, start + j);
    if (out.node)
        out.node->backward = [start, m, n, count](const Tensor& o) {
            auto& px = o.node->parents[0];
            if (!px.requires_grad) return;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < count; ++j)
                    (*px.grad)[static_cast<std::size_t>(i) * n + start + j] +=
                        (*o.grad)[static_cast<std::size_t>(i) * count + j];
        };
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw config_error("concat_cols: no parts");
    const int m = parts[0].rows();
    int n = 0;
    for (const Tensor& p : parts) {
        check_2d(p, "concat_cols");
        if (p.rows() != m) throw config_error("concat_cols: row count mismatch");
        n += p.cols();
    }
    Tensor out = make_out({m, n}, parts);
    int off = 0;
    for (const Tensor& p : parts) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
        off += p.cols();
    }
    if (out.node)
        out.node->backward = [m, n](const Tensor& o) {
            int off2 = 0;
            for (Tensor& p : o.node->parents) {
                const int pc = p.cols();
                if (p.requires_grad)
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < pc; ++j)
                            (*p.grad)[static_cast<std::size_t>(i) * pc + j] +=
                                (*o.grad)[static_cast<std::size_t>(i) * n + off2 + j];
                off2 += pc;
            }
        };
    return out;
}

namespace {

// c[m,n] += a[m,k] * b[k,n], raw row-major buffers
void mm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * k;
        double* ci = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T
void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * k;
        double* ci = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * k;
        const double* bi = b + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            double* cp = c + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    if (a.cols() != b.rows())
        throw config_error("matmul: inner dim mismatch " + shape_str(a.shape) + " x " +
                           shape_str(b.shape));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = make_out({m, n}, {a, b});
    mm_acc(a.data->data(), b.data->data(), out.data->data(), m, k, n);
    if (out.node)
        out.node->backward = [m, k, n](const Tensor& o) {
            auto& pa = o.node->parents[0];
            auto& pb = o.node->parents[1];
            if (pa.requires_grad)  // dA += G * B^T
                mm_nt_acc(o.grad->data(), pb.data->data(), pa.grad->data(), m, n, k);
            if (pb.requires_grad)  // dB += A^T * G
                mm_tn_acc(pa.data->data(), o.grad->data(), pb.grad->data(), m, k, n);
        };
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul_nt");
    check_2d(b, "matmul_nt");
    if (a.cols() != b.cols())
        throw config_error("matmul_nt: inner dim mismatch " + shape_str(a.shape) + " x " +
                           shape_str(b.shape) + "^T");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out = make_out({m, n}, {a, b});
    mm_nt_acc(a.data->data(), b.data->data(), out.data->data(), m, k, n);
    if (out.node)
        out.node->backward = [m, k, n](const Tensor& o) {
            auto& pa = o.node->parents[0];
            auto& pb = o.node->parents[1];
            if (pa.requires_grad)  // dA += G * B
                mm_acc(o.grad->data(), pb.data->data(), pa.grad->data(), m, n, k);
            if (pb.requires_grad)  // dB += G^T * A
                mm_tn_acc(o.grad->data(), pa.data->data(), pb.grad->data(), m, n, k);
        };
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_2d(x, "linear");
    check_2d(w, "linear");
    if (x.cols() != w.rows() || b.numel() != static_cast<std::size_t>(w.cols()))
        throw config_error("linear: shapes x" + shape_str(x.shape) + " w" + shape_str(w.shape) +
                           " b" + shape_str(b.shape) + " do not conform");
    const int m = x.rows(), k = x.cols(), n = w.cols();
    Tensor out = make_out({m, n}, {x, w, b});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = b.at(j);
    mm_acc(x.data->data(), w.data->data(), out.data->data(), m, k, n);
    if (out.node)
        out.node->backward = [m, k, n](const Tensor& o) {
            auto& px = o.node->parents[0];
            auto& pw = o.node->parents[1];
            auto& pb = o.node->parents[2];
            if (px.requires_grad) mm_nt_acc(o.grad->data(), pw.data->data(), px.grad->data(), m, n, k);
            if (pw.requires_grad) mm_tn_acc(px.data->data(), o.grad->data(), pw.grad->data(), m, k, n);
            if (pb.requires_grad)
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        (*pb.grad)[j] += (*o.grad)[static_cast<std::size_t>(i) * n + j];
        };
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    check_2d(x, "layer_norm");
    const int m = x.rows(), n = x.cols();
    if (gain.numel() != static_cast<std::size_t>(n) || bias.numel() != static_cast<std::size_t>(n))
        throw config_error("layer_norm: gain/bias " + shape_str(gain.shape) + "/" +
                           shape_str(bias.shape) + " do not match width " + std::to_string(n));
    Tensor out = make_out({m, n}, {x, gain, bias});
    // save normalized rows and inverse sigma for the backward pass
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_sigma = std::make_shared<std::vector<double>>(m);
    for (int i = 0; i < m; ++i) {
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += x.at(i, j);
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            double d = x.at(i, j) - mu;
            var += d * d;
        }
        var /= n;
        double is = 1.0 / std::sqrt(var + kLayerNormEps);
        (*inv_sigma)[i] = is;
        for (int j = 0; j < n; ++j) {
            double xh = (x.at(i, j) - mu) * is;
            (*xhat)[static_cast<std::size_t>(i) * n + j] = xh;
            out.at(i, j) = xh * gain.at(j) + bias.at(j);
        }
    }
    if (out.node)
        out.node->backward = [m, n, xhat, inv_sigma](const Tensor& o) {
            auto& px = o.node->parents[0];
            auto& pg = o.node->parents[1];
            auto& pb = o.node->parents[2];
            for (int i = 0; i < m; ++i) {
                const double* g = o.grad->data() + static_cast<std::size_t>(i) * n;
                const double* xh = xhat->data() + static_cast<std::size_t>(i) * n;
                if (pg.requires_grad || pb.requires_grad)
                    for (int j = 0; j < n; ++j) {
                        if (pg.requires_grad) (*pg.grad)[j] += g[j] * xh[j];
                        if (pb.requires_grad) (*pb.grad)[j] += g[j];
                    }
                if (px.requires_grad) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (int j = 0; j < n; ++j) {
                        double d = g[j] * pg.at(j);
                        mean_d += d;
                        mean_dx += d * xh[j];
                    }
                    mean_d /= n;
                    mean_dx /= n;
                    const double is = (*inv_sigma)[i];
                    for (int j = 0; j < n; ++j) {
                        double d = g[j] * pg.at(j);
                        (*px.grad)[static_cast<std::size_t>(i) * n + j] +=
                            is * (d - mean_d - xh[j] * mean_dx);
                    }
                }
            }
        };
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = make_out(x.shape, {x});
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double v = (*x.data)[i];
        (*out.data)[i] = v * erf_cdf(v);
    }
    if (out.node)
        out.node->backward = [](const Tensor& o) {
            auto& px = o.node->parents[0];
            if (!px.requires_grad) return;
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (std::size_t i = 0; i < o.numel(); ++i) {
                double v = (*px.data)[i];
                double d = erf_cdf(v) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
                (*px.grad)[i] += d * (*o.grad)[i];
            }
        };
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    check_2d(x, "softmax_rows");
    const int m = x.rows(), n = x.cols();
    Tensor out = make_out({m, n}, {x});
    for (int i = 0; i < m; ++i) {
        double mx = x.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            double e = std::exp(x.at(i, j) - mx);
            out.at(i, j) = e;
            z += e;
        }
        for (int j = 0; j < n; ++j) out.at(i, j) /= z;
    }
    if (out.node)
        out.node->backward = [m, n](const Tensor& o) {
            auto& px = o.node->parents[0];
            if (!px.requires_grad) return;
            for (int i = 0; i < m; ++i) {
                const double* p = o.data->data() + static_cast<std::size_t>(i) * n;
                const double* g = o.grad->data() + static_cast<std::size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += g[j] * p[j];
                for (int j = 0; j < n; ++j)
                    (*px.grad)[static_cast<std::size_t>(i) * n + j] += p[j] * (g[j] - dot);
            }
        };
    return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    check_2d(table, "embedding");
    const int v = table.rows(), d = table.cols();
    for (int id : ids)
        if (id < 0 || id >= v)
            throw data_error("embedding: token id " + std::to_string(id) + " outside vocab " +
                             std::to_string(v));
    const int m = static_cast<int>(ids.size());
    Tensor out = make_out({m, d}, {table});
    for (int i = 0; i < m; ++i)
        std::copy_n(table.data->begin() + static_cast<std::size_t>(ids[i]) * d, d,
                    out.data->begin() + static_cast<std::size_t>(i) * d);
    if (out.node)
        out.node->backward = [ids, d](const Tensor& o) {
            auto& pt = o.node->parents[0];
            if (!pt.requires_grad) return;
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < d; ++j)
                    (*pt.grad)[static_cast<std::size_t>(ids[i]) * d + j] += (*o.grad)[i * d + j];
        };
    return out;
}

Tensor attention(const Tensor& x, const Tensor& wq, const Tensor& bq, const Tensor& wk,
                 const Tensor& bk, const Tensor& wv, const Tensor& bv, const Tensor& wo,
                 const Tensor& bo, int n_heads, bool causal) {
    check_2d(x, "attention");
    const int seq = x.rows(), d = x.cols();
    if (n_heads <= 0 || d % n_heads != 0)
        throw config_error("attention: d_model " + std::to_string(d) + " not divisible by heads " +
                           std::to_string(n_heads));
    const int hd = d / n_heads;
    Tensor q = linear(x, wq, bq);
    Tensor k = linear(x, wk, bk);
    Tensor v = linear(x, wv, bv);

    Tensor mask;  // constant, shared across heads
    if (causal) {
        mask = Tensor::zeros({seq, seq});
        for (int i = 0; i < seq; ++i)
            for (int j = i + 1; j < seq; ++j) mask.at(i, j) = -1e30;
    }

    std::vector<Tensor> heads;
    heads.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h) {
        Tensor qh = slice_cols(q, h * hd, hd);
        Tensor kh = slice_cols(k, h * hd, hd);
        Tensor vh = slice_cols(v, h * hd, hd);
        Tensor scores = scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(hd)));
        if (causal) scores = add(scores, mask);
        Tensor probs = softmax_rows(scores);
        heads.push_back(matmul(probs, vh));
    }
    return linear(concat_cols(heads), wo, bo);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    check_2d(logits, "cross_entropy");
    const int m = logits.rows(), n = logits.cols();
    if (static_cast<int>(targets.size()) != m)
        throw config_error("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                           std::to_string(m) + " rows");
    int count = 0;
    for (int t : targets) {
        if (t >= n) throw data_error("cross_entropy: target id " + std::to_string(t) +
                                     " outside vocab " + std::to_string(n));
        if (t >= 0) ++count;
    }
    if (count == 0) throw std::domain_error("cross_entropy: no predicted positions");
    Tensor out = make_out({1}, {logits});
    // cache row softmax for backward
    auto probs = std::make_shared<std::vector<double>>(logits.numel());
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
        const double* row = logits.data->data() + static_cast<std::size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        double logz = mx + std::log(z);
        for (int j = 0; j < n; ++j)
            (*probs)[static_cast<std::size_t>(i) * n + j] = std::exp(row[j] - logz);
        if (targets[i] >= 0) total += logz - row[targets[i]];
    }
    (*out.data)[0] = total / count;
    if (out.node)
        out.node->backward = [m, n, targets, probs, count](const Tensor& o) {
            auto& pl = o.node->parents[0];
            if (!pl.requires_grad) return;
            const double g = (*o.grad)[0] / count;
            for (int i = 0; i < m; ++i) {
                if (targets[i] < 0) continue;
                for (int j = 0; j < n; ++j)
                    (*pl.grad)[static_cast<std::size_t>(i) * n + j] +=
                        g * (*probs)[static_cast<std::size_t>(i) * n + j];
                (*pl.grad)[static_cast<std::size_t>(i) * n + targets[i]] -= g;
            }
        };
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out = make_out({1}, {x});
    double s = 0.0;
    for (double v : *x.data) s += v;
    (*out.data)[0] = s;
    if (out.node)
        out.node->backward = [](const Tensor& o) {
            auto& px = o.node->parents[0];
            if (!px.requires_grad) return;
            for (std::size_t i = 0; i < px.numel(); ++i) (*px.grad)[i] += (*o.grad)[0];
        };
    return out;
}

}  // namespace odelm::ops
