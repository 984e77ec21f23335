#include "seal/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "seal/core.hpp"

namespace seal::ad {

namespace {

void check(bool ok, const char* what) {
    if (!ok) fail(ErrorKind::validation, std::string("tensor op: ") + what);
}

bool any_grad(std::initializer_list<Var> vars) {
    for (const auto& v : vars) {
        if (v && v.requires_grad()) return true;
    }
    return false;
}

void gemm_nn(const double* a, const double* b, double* out, int n, int k, int m);

// out[n][m] += sum_k a[n][k] * b[m][k]
void gemm_nt(const double* a, const double* b, double* out, int n, int k, int m) {
    if (n >= 4) {
        // Row-major b^T turns the inner loop into a contiguous axpy.
        std::vector<double> bt(static_cast<std::size_t>(k) * m);
        for (int j = 0; j < m; ++j)
            for (int p = 0; p < k; ++p) bt[static_cast<std::size_t>(p) * m + j] = b[static_cast<std::size_t>(j) * k + p];
        gemm_nn(a, bt.data(), out, n, k, m);
        return;
    }
    for (int i = 0; i < n; ++i) {
        const double* ar = a + static_cast<std::size_t>(i) * k;
        double* orow = out + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const double* br = b + static_cast<std::size_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ar[p] * br[p];
            orow[j] += s;
        }
    }
}

// out[n][m] += sum_k a[n][k] * b[k][m]
void gemm_nn(const double* a, const double* b, double* out, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
        const double* ar = a + static_cast<std::size_t>(i) * k;
        double* orow = out + static_cast<std::size_t>(i) * m;
        for (int p = 0; p < k; ++p) {
            const double av = ar[p];
            const double* br = b + static_cast<std::size_t>(p) * m;
            for (int j = 0; j < m; ++j) orow[j] += av * br[j];
        }
    }
}

// out[k][m] += sum_n a[n][k] * b[n][m]
void gemm_tn(const double* a, const double* b, double* out, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
        const double* ar = a + static_cast<std::size_t>(i) * k;
        const double* br = b + static_cast<std::size_t>(i) * m;
        for (int p = 0; p < k; ++p) {
            const double av = ar[p];
            double* orow = out + static_cast<std::size_t>(p) * m;
            for (int j = 0; j < m; ++j) orow[j] += av * br[j];
        }
    }
}

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::vector<double>& Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

std::vector<double> Var::grad() const {
    if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
    return node_->grad;
}

Var Tape::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    check(numel(shape) == values.size(), "leaf size does not match shape");
    auto node = std::make_unique<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var(nodes_.back().get());
}

Var Tape::make(Shape shape, bool requires_grad) {
    auto node = std::make_unique<Node>();
    node->value.assign(numel(shape), 0.0);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var(nodes_.back().get());
}

void Tape::backward(Var root) {
    check(root.size() == 1, "backward root must be a scalar");
    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        if (n.requires_grad && n.backward && !n.grad.empty()) n.backward(n);
    }
}

// ---------------------------------------------------------------- elementwise

Var add(Tape& tape, Var a, Var b) {
    check(a.size() == b.size(), "add size mismatch");
    Var out = tape.make(a.shape(), any_grad({a, b}));
    auto& o = out.node()->value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.value()[i] + b.value()[i];
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), pb = b.node()](Node& self) {
            for (Node* p : {pa, pb}) {
                if (!p->requires_grad) continue;
                auto& g = p->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
        };
    }
    return out;
}

Var sub(Tape& tape, Var a, Var b) {
    check(a.size() == b.size(), "sub size mismatch");
    Var out = tape.make(a.shape(), any_grad({a, b}));
    auto& o = out.node()->value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.value()[i] - b.value()[i];
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), pb = b.node()](Node& self) {
            if (pa->requires_grad) {
                auto& g = pa->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                auto& g = pb->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
            }
        };
    }
    return out;
}

Var mul(Tape& tape, Var a, Var b) {
    check(a.size() == b.size(), "mul size mismatch");
    Var out = tape.make(a.shape(), any_grad({a, b}));
    auto& o = out.node()->value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.value()[i] * b.value()[i];
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), pb = b.node()](Node& self) {
            if (pa->requires_grad) {
                auto& g = pa->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
            }
            if (pb->requires_grad) {
                auto& g = pb->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
            }
        };
    }
    return out;
}

Var scale(Tape& tape, Var a, double c) {
    Var out = tape.make(a.shape(), a.requires_grad());
    auto& o = out.node()->value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.value()[i] * c;
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), c](Node& self) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
        };
    }
    return out;
}

Var add_scalar(Tape& tape, Var a, double c) {
    Var out = tape.make(a.shape(), a.requires_grad());
    auto& o = out.node()->value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.value()[i] + c;
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node()](Node& self) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        };
    }
    return out;
}

Var square(Tape& tape, Var a) {
    Var out = tape.make(a.shape(), a.requires_grad());
    auto& o = out.node()->value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.value()[i] * a.value()[i];
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node()](Node& self) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * pa->value[i] * self.grad[i];
        };
    }
    return out;
}

Var silu(Tape& tape, Var a) {
    Var out = tape.make(a.shape(), a.requires_grad());
    auto& o = out.node()->value;
    for (std::size_t i = 0; i < o.size(); ++i) {
        double x = a.value()[i];
        o[i] = x / (1.0 + std::exp(-x));
    }
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node()](Node& self) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                double x = pa->value[i];
                double s = 1.0 / (1.0 + std::exp(-x));
                g[i] += self.grad[i] * s * (1.0 + x * (1.0 - s));
            }
        };
    }
    return out;
}

Var mul_const(Tape& tape, Var a, std::span<const double> c) {
    check(a.size() == c.size(), "mul_const size mismatch");
    Var out = tape.make(a.shape(), a.requires_grad());
    auto& o = out.node()->value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.value()[i] * c[i];
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), cv = std::vector<double>(c.begin(), c.end())](Node& self) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * cv[i];
        };
    }
    return out;
}

Var div_scalar(Tape& tape, Var a, Var s) {
    check(s.size() == 1, "div_scalar divisor must be a scalar");
    Var out = tape.make(a.shape(), any_grad({a, s}));
    const double d = s.item();
    auto& o = out.node()->value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.value()[i] / d;
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), ps = s.node()](Node& self) {
            const double d = ps->value[0];
            if (pa->requires_grad) {
                auto& g = pa->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / d;
            }
            if (ps->requires_grad) {
                // d(a/s)/ds = -a/s^2 = -out/s
                double acc = 0.0;
                for (std::size_t i = 0; i < self.value.size(); ++i) acc += self.grad[i] * self.value[i];
                ps->grad_buffer()[0] -= acc / d;
            }
        };
    }
    return out;
}

Var reshape(Tape& tape, Var a, Shape shape) {
    check(numel(shape) == a.size(), "reshape size mismatch");
    Var out = tape.make(std::move(shape), a.requires_grad());
    out.node()->value = a.value();
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node()](Node& self) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        };
    }
    return out;
}

// ---------------------------------------------------------------- reductions

Var sum(Tape& tape, Var a) {
    Var out = tape.make({1}, a.requires_grad());
    double s = 0.0;
    for (double v : a.value()) s += v;
    out.node()->value[0] = s;
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node()](Node& self) {
            auto& g = pa->grad_buffer();
            for (auto& x : g) x += self.grad[0];
        };
    }
    return out;
}

Var mean(Tape& tape, Var a) { return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.size())); }

Var mse(Tape& tape, Var a, std::span<const double> target) {
    check(a.size() == target.size(), "mse size mismatch");
    Var out = tape.make({1}, a.requires_grad());
    double s = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        double d = a.value()[i] - target[i];
        s += d * d;
    }
    const double n = static_cast<double>(target.size());
    out.node()->value[0] = s / n;
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), tv = std::vector<double>(target.begin(), target.end()),
                                n](Node& self) {
            auto& g = pa->grad_buffer();
            const double c = 2.0 * self.grad[0] / n;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * (pa->value[i] - tv[i]);
        };
    }
    return out;
}

Var average(Tape& tape, std::span<const Var> parts) {
    check(!parts.empty(), "average of nothing");
    bool rg = false;
    for (const auto& p : parts) {
        check(p.size() == parts[0].size(), "average size mismatch");
        rg = rg || p.requires_grad();
    }
    Var out = tape.make(parts[0].shape(), rg);
    auto& o = out.node()->value;
    const double inv = 1.0 / static_cast<double>(parts.size());
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] += p.value()[i];
    }
    for (auto& x : o) x *= inv;
    if (rg) {
        std::vector<Node*> ps;
        for (const auto& p : parts) ps.push_back(p.node());
        out.node()->backward = [ps, inv](Node& self) {
            for (Node* p : ps) {
                if (!p->requires_grad) continue;
                auto& g = p->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * inv;
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------- image ops

namespace {

// Patch matrix [Ci*k*k, H*W] of a zero-padded [Ci, H, W] input.
std::vector<double> im2col(const double* x, int ci_n, int h, int w, int k) {
    const int pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> cols(static_cast<std::size_t>(ci_n) * k * k * plane, 0.0);
    for (int ci = 0; ci < ci_n; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int dy = ky - pad, dx = kx - pad;
                double* row = cols.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * plane;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                for (int y = y0; y < y1; ++y) {
                    const double* src = x + ci * plane + static_cast<std::size_t>(y + dy) * w + dx;
                    double* dst = row + static_cast<std::size_t>(y) * w;
                    for (int xx = x0; xx < x1; ++xx) dst[xx] = src[xx];
                }
            }
    return cols;
}

// Adjoint of im2col: scatter-add patch gradients back onto the input.
void col2im(const double* cols, double* gx, int ci_n, int h, int w, int k) {
    const int pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int ci = 0; ci < ci_n; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int dy = ky - pad, dx = kx - pad;
                const double* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * plane;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                for (int y = y0; y < y1; ++y) {
                    double* dst = gx + ci * plane + static_cast<std::size_t>(y + dy) * w + dx;
                    const double* src = row + static_cast<std::size_t>(y) * w;
                    for (int xx = x0; xx < x1; ++xx) dst[xx] += src[xx];
                }
            }
}

}  // namespace

Var conv2d(Tape& tape, Var x, Var weight, Var bias) {
    check(x.shape().size() == 3 && weight.shape().size() == 4, "conv2d expects [C,H,W] and [Co,Ci,k,k]");
    const int ci_n = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int co_n = weight.dim(0), k = weight.dim(2);
    check(weight.dim(1) == ci_n && weight.dim(3) == k && k % 2 == 1, "conv2d weight shape");
    check(bias.size() == static_cast<std::size_t>(co_n), "conv2d bias shape");
    const int hw = h * w;
    const int ck = ci_n * k * k;

    Var out = tape.make({co_n, h, w}, any_grad({x, weight, bias}));
    auto& o = out.node()->value;
    for (int co = 0; co < co_n; ++co) std::fill(o.begin() + co * hw, o.begin() + (co + 1) * hw, bias.value()[co]);
    auto cols = std::make_shared<std::vector<double>>(im2col(x.value().data(), ci_n, h, w, k));
    gemm_nn(weight.value().data(), cols->data(), o.data(), co_n, ck, hw);
    if (out.requires_grad()) {
        out.node()->backward = [px = x.node(), pw = weight.node(), pb = bias.node(), cols, ci_n, co_n, h, w, k, hw,
                                ck](Node& self) {
            const double* g = self.grad.data();
            if (pb->requires_grad) {
                auto& gb = pb->grad_buffer();
                for (int co = 0; co < co_n; ++co) {
                    double s = 0.0;
                    for (int i = 0; i < hw; ++i) s += g[co * hw + i];
                    gb[co] += s;
                }
            }
            if (pw->requires_grad) gemm_nt(g, cols->data(), pw->grad_buffer().data(), co_n, hw, ck);
            if (px->requires_grad) {
                std::vector<double> gcols(static_cast<std::size_t>(ck) * hw, 0.0);
                gemm_tn(pw->value.data(), g, gcols.data(), co_n, ck, hw);
                col2im(gcols.data(), px->grad_buffer().data(), ci_n, h, w, k);
            }
        };
    }
    return out;
}

Var group_norm(Tape& tape, Var x, int groups, Var gamma, Var beta, double eps) {
    check(x.shape().size() == 3, "group_norm expects [C,H,W]");
    const int c = x.dim(0);
    check(groups >= 1 && c % groups == 0, "group_norm channels must divide into groups");
    check(gamma.size() == static_cast<std::size_t>(c) && beta.size() == static_cast<std::size_t>(c),
          "group_norm affine shape");
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    const int cpg = c / groups;
    const std::size_t gsize = plane * cpg;

    Var out = tape.make(x.shape(), any_grad({x, gamma, beta}));
    auto& o = out.node()->value;
    std::vector<double> xhat(x.size());
    std::vector<double> rstd(groups);
    const auto& xv = x.value();
    for (int g = 0; g < groups; ++g) {
        const std::size_t base = g * gsize;
        double m = 0.0;
        for (std::size_t i = 0; i < gsize; ++i) m += xv[base + i];
        m /= static_cast<double>(gsize);
        double var = 0.0;
        for (std::size_t i = 0; i < gsize; ++i) {
            double d = xv[base + i] - m;
            var += d * d;
        }
        var /= static_cast<double>(gsize);
        rstd[g] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < gsize; ++i) xhat[base + i] = (xv[base + i] - m) * rstd[g];
    }
    for (int ch = 0; ch < c; ++ch) {
        const double ga = gamma.value()[ch], be = beta.value()[ch];
        for (std::size_t i = 0; i < plane; ++i) o[ch * plane + i] = ga * xhat[ch * plane + i] + be;
    }
    if (out.requires_grad()) {
        out.node()->backward = [px = x.node(), pg = gamma.node(), pb = beta.node(), xhat = std::move(xhat),
                                rstd = std::move(rstd), groups, c, plane, cpg, gsize](Node& self) {
            const auto& g = self.grad;
            if (pg->requires_grad || pb->requires_grad) {
                for (int ch = 0; ch < c; ++ch) {
                    double sg = 0.0, sgx = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        sg += g[ch * plane + i];
                        sgx += g[ch * plane + i] * xhat[ch * plane + i];
                    }
                    if (pg->requires_grad) pg->grad_buffer()[ch] += sgx;
                    if (pb->requires_grad) pb->grad_buffer()[ch] += sg;
                }
            }
            if (!px->requires_grad) return;
            auto& gx = px->grad_buffer();
            const auto& gam = pg->value;
            const double n = static_cast<double>(gsize);
            for (int gr = 0; gr < groups; ++gr) {
                double s1 = 0.0, s2 = 0.0;
                for (int cc = 0; cc < cpg; ++cc) {
                    const int ch = gr * cpg + cc;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const std::size_t idx = ch * plane + i;
                        const double d = g[idx] * gam[ch];
                        s1 += d;
                        s2 += d * xhat[idx];
                    }
                }
                for (int cc = 0; cc < cpg; ++cc) {
                    const int ch = gr * cpg + cc;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const std::size_t idx = ch * plane + i;
                        const double d = g[idx] * gam[ch];
                        gx[idx] += rstd[gr] * (d - s1 / n - xhat[idx] * s2 / n);
                    }
                }
            }
        };
    }
    return out;
}

Var avg_pool2(Tape& tape, Var x) {
    check(x.shape().size() == 3 && x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0, "avg_pool2 expects even [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2), ho = h / 2, wo = w / 2;
    Var out = tape.make({c, ho, wo}, x.requires_grad());
    auto& o = out.node()->value;
    const auto& xv = x.value();
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx) {
                const std::size_t b = (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * xx;
                o[(static_cast<std::size_t>(ch) * ho + y) * wo + xx] =
                    0.25 * (xv[b] + xv[b + 1] + xv[b + w] + xv[b + w + 1]);
            }
    if (out.requires_grad()) {
        out.node()->backward = [px = x.node(), c, h, w, ho, wo](Node& self) {
            auto& g = px->grad_buffer();
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < ho; ++y)
                    for (int xx = 0; xx < wo; ++xx) {
                        const double d = 0.25 * self.grad[(static_cast<std::size_t>(ch) * ho + y) * wo + xx];
                        const std::size_t b = (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * xx;
                        g[b] += d;
                        g[b + 1] += d;
                        g[b + w] += d;
                        g[b + w + 1] += d;
                    }
        };
    }
    return out;
}

Var upsample2(Tape& tape, Var x) {
    check(x.shape().size() == 3, "upsample2 expects [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2), ho = 2 * h, wo = 2 * w;
    Var out = tape.make({c, ho, wo}, x.requires_grad());
    auto& o = out.node()->value;
    const auto& xv = x.value();
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx)
                o[(static_cast<std::size_t>(ch) * ho + y) * wo + xx] =
                    xv[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2];
    if (out.requires_grad()) {
        out.node()->backward = [px = x.node(), c, h, w, ho, wo](Node& self) {
            auto& g = px->grad_buffer();
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < ho; ++y)
                    for (int xx = 0; xx < wo; ++xx)
                        g[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2] +=
                            self.grad[(static_cast<std::size_t>(ch) * ho + y) * wo + xx];
        };
    }
    return out;
}

Var concat_channels(Tape& tape, Var a, Var b) {
    check(a.shape().size() == 3 && b.shape().size() == 3 && a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
          "concat_channels spatial mismatch");
    Var out = tape.make({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, any_grad({a, b}));
    auto& o = out.node()->value;
    std::copy(a.value().begin(), a.value().end(), o.begin());
    std::copy(b.value().begin(), b.value().end(), o.begin() + static_cast<std::ptrdiff_t>(a.size()));
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), pb = b.node()](Node& self) {
            const std::size_t na = pa->value.size();
            if (pa->requires_grad) {
                auto& g = pa->grad_buffer();
                for (std::size_t i = 0; i < na; ++i) g[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                auto& g = pb->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[na + i];
            }
        };
    }
    return out;
}

Var add_channel_bias(Tape& tape, Var x, Var v) {
    check(x.shape().size() == 3 && v.size() == static_cast<std::size_t>(x.dim(0)), "add_channel_bias shape");
    const int c = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    Var out = tape.make(x.shape(), any_grad({x, v}));
    auto& o = out.node()->value;
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) o[ch * plane + i] = x.value()[ch * plane + i] + v.value()[ch];
    if (out.requires_grad()) {
        out.node()->backward = [px = x.node(), pv = v.node(), c, plane](Node& self) {
            if (px->requires_grad) {
                auto& g = px->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
            if (pv->requires_grad) {
                auto& g = pv->grad_buffer();
                for (int ch = 0; ch < c; ++ch) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) s += self.grad[ch * plane + i];
                    g[ch] += s;
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------- matrix ops

Var matmul_nt(Tape& tape, Var a, Var b) {
    check(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(1) == b.dim(1), "matmul_nt shape");
    const int n = a.dim(0), k = a.dim(1), m = b.dim(0);
    Var out = tape.make({n, m}, any_grad({a, b}));
    gemm_nt(a.value().data(), b.value().data(), out.node()->value.data(), n, k, m);
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), pb = b.node(), n, k, m](Node& self) {
            if (pa->requires_grad) gemm_nn(self.grad.data(), pb->value.data(), pa->grad_buffer().data(), n, m, k);
            if (pb->requires_grad) gemm_tn(self.grad.data(), pa->value.data(), pb->grad_buffer().data(), n, m, k);
        };
    }
    return out;
}

Var linear(Tape& tape, Var x, Var weight, Var bias) {
    check(x.shape().size() == 2 && weight.shape().size() == 2 && x.dim(1) == weight.dim(1), "linear shape");
    Var y = matmul_nt(tape, x, weight);
    if (!bias) return y;
    const int n = y.dim(0), m = y.dim(1);
    check(bias.size() == static_cast<std::size_t>(m), "linear bias shape");
    Var out = tape.make({n, m}, any_grad({y, bias}));
    auto& o = out.node()->value;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) o[static_cast<std::size_t>(i) * m + j] = y.value()[static_cast<std::size_t>(i) * m + j] + bias.value()[j];
    if (out.requires_grad()) {
        out.node()->backward = [py = y.node(), pb = bias.node(), n, m](Node& self) {
            if (py->requires_grad) {
                auto& g = py->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                auto& g = pb->grad_buffer();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < m; ++j) g[j] += self.grad[static_cast<std::size_t>(i) * m + j];
            }
        };
    }
    return out;
}

Var matmul(Tape& tape, Var a, Var b) {
    check(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(1) == b.dim(0), "matmul shape");
    const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Var out = tape.make({n, m}, any_grad({a, b}));
    gemm_nn(a.value().data(), b.value().data(), out.node()->value.data(), n, k, m);
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), pb = b.node(), n, k, m](Node& self) {
            // da = g b^T, db = a^T g
            if (pa->requires_grad) gemm_nt(self.grad.data(), pb->value.data(), pa->grad_buffer().data(), n, m, k);
            if (pb->requires_grad) gemm_tn(pa->value.data(), self.grad.data(), pb->grad_buffer().data(), n, k, m);
        };
    }
    return out;
}

Var transpose(Tape& tape, Var a) {
    check(a.shape().size() == 2, "transpose expects a matrix");
    const int r = a.dim(0), c = a.dim(1);
    Var out = tape.make({c, r}, a.requires_grad());
    auto& o = out.node()->value;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) o[static_cast<std::size_t>(j) * r + i] = a.value()[static_cast<std::size_t>(i) * c + j];
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), r, c](Node& self) {
            auto& g = pa->grad_buffer();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) g[static_cast<std::size_t>(i) * c + j] += self.grad[static_cast<std::size_t>(j) * r + i];
        };
    }
    return out;
}

Var softmax_rows(Tape& tape, Var a) {
    check(a.shape().size() == 2, "softmax_rows expects a matrix");
    const int n = a.dim(0), m = a.dim(1);
    Var out = tape.make(a.shape(), a.requires_grad());
    auto& o = out.node()->value;
    for (int i = 0; i < n; ++i) {
        const double* row = a.value().data() + static_cast<std::size_t>(i) * m;
        double* orow = o.data() + static_cast<std::size_t>(i) * m;
        double mx = row[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < m; ++j) {
            orow[j] = std::exp(row[j] - mx);
            s += orow[j];
        }
        for (int j = 0; j < m; ++j) orow[j] /= s;
    }
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), n, m](Node& self) {
            auto& g = pa->grad_buffer();
            for (int i = 0; i < n; ++i) {
                const std::size_t b = static_cast<std::size_t>(i) * m;
                double dot = 0.0;
                for (int j = 0; j < m; ++j) dot += self.grad[b + j] * self.value[b + j];
                for (int j = 0; j < m; ++j) g[b + j] += self.value[b + j] * (self.grad[b + j] - dot);
            }
        };
    }
    return out;
}

Var rms_norm_rows(Tape& tape, Var a, double eps) {
    check(a.shape().size() == 2, "rms_norm_rows expects a matrix");
    const int n = a.dim(0), d = a.dim(1);
    Var out = tape.make(a.shape(), a.requires_grad());
    std::vector<double> inv(n);
    auto& o = out.node()->value;
    for (int i = 0; i < n; ++i) {
        const double* row = a.value().data() + static_cast<std::size_t>(i) * d;
        double ms = 0.0;
        for (int j = 0; j < d; ++j) ms += row[j] * row[j];
        inv[i] = 1.0 / std::sqrt(ms / d + eps);
        for (int j = 0; j < d; ++j) o[static_cast<std::size_t>(i) * d + j] = row[j] * inv[i];
    }
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), inv = std::move(inv), n, d](Node& self) {
            auto& g = pa->grad_buffer();
            for (int i = 0; i < n; ++i) {
                const std::size_t b = static_cast<std::size_t>(i) * d;
                double gx = 0.0;
                for (int j = 0; j < d; ++j) gx += self.grad[b + j] * pa->value[b + j];
                const double r = inv[i], r3 = r * r * r;
                for (int j = 0; j < d; ++j) g[b + j] += r * self.grad[b + j] - r3 * pa->value[b + j] * gx / d;
            }
        };
    }
    return out;
}

Var slice_cols(Tape& tape, Var a, int begin, int end) {
    check(a.shape().size() == 2 && 0 <= begin && begin < end && end <= a.dim(1), "slice_cols range");
    const int n = a.dim(0), m = a.dim(1), w = end - begin;
    Var out = tape.make({n, w}, a.requires_grad());
    auto& o = out.node()->value;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j) o[static_cast<std::size_t>(i) * w + j] = a.value()[static_cast<std::size_t>(i) * m + begin + j];
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), n, m, w, begin](Node& self) {
            auto& g = pa->grad_buffer();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < w; ++j) g[static_cast<std::size_t>(i) * m + begin + j] += self.grad[static_cast<std::size_t>(i) * w + j];
        };
    }
    return out;
}

Var concat_cols(Tape& tape, std::span<const Var> parts) {
    check(!parts.empty(), "concat_cols of nothing");
    const int n = parts[0].dim(0);
    int m = 0;
    bool rg = false;
    for (const auto& p : parts) {
        check(p.shape().size() == 2 && p.dim(0) == n, "concat_cols row mismatch");
        m += p.dim(1);
        rg = rg || p.requires_grad();
    }
    Var out = tape.make({n, m}, rg);
    auto& o = out.node()->value;
    int off = 0;
    std::vector<std::pair<Node*, int>> ps;
    for (const auto& p : parts) {
        const int w = p.dim(1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j) o[static_cast<std::size_t>(i) * m + off + j] = p.value()[static_cast<std::size_t>(i) * w + j];
        ps.emplace_back(p.node(), off);
        off += w;
    }
    if (rg) {
        out.node()->backward = [ps, n, m](Node& self) {
            for (auto [p, off] : ps) {
                if (!p->requires_grad) continue;
                const int w = p->shape[1];
                auto& g = p->grad_buffer();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < w; ++j) g[static_cast<std::size_t>(i) * w + j] += self.grad[static_cast<std::size_t>(i) * m + off + j];
            }
        };
    }
    return out;
}

Var column(Tape& tape, Var a, int j) {
    check(a.shape().size() == 2 && 0 <= j && j < a.dim(1), "column index");
    const int n = a.dim(0), m = a.dim(1);
    Var out = tape.make({n}, a.requires_grad());
    auto& o = out.node()->value;
    for (int i = 0; i < n; ++i) o[i] = a.value()[static_cast<std::size_t>(i) * m + j];
    if (out.requires_grad()) {
        out.node()->backward = [pa = a.node(), n, m, j](Node& self) {
            auto& g = pa->grad_buffer();
            for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i) * m + j] += self.grad[i];
        };
    }
    return out;
}

Var gather_rows(Tape& tape, Var table, std::span<const int> ids, int override_row, Var override_value) {
    check(table.shape().size() == 2, "gather_rows expects a [V, d] table");
    const int v = table.dim(0), d = table.dim(1), n = static_cast<int>(ids.size());
    check(n > 0, "gather_rows needs at least one id");
    if (override_row >= 0) {
        check(override_row < n && override_value && override_value.size() == static_cast<std::size_t>(d),
              "gather_rows override shape");
    }
    Var out = tape.make({n, d}, any_grad({table, override_value}));
    auto& o = out.node()->value;
    for (int i = 0; i < n; ++i) {
        const double* src;
        if (i == override_row) {
            src = override_value.value().data();
        } else {
            check(ids[i] >= 0 && ids[i] < v, "gather_rows id out of range");
            src = table.value().data() + static_cast<std::size_t>(ids[i]) * d;
        }
        std::copy(src, src + d, o.begin() + static_cast<std::ptrdiff_t>(i) * d);
    }
    if (out.requires_grad()) {
        out.node()->backward = [pt = table.node(), po = override_value.node(),
                                idv = std::vector<int>(ids.begin(), ids.end()), override_row, d](Node& self) {
            for (int i = 0; i < static_cast<int>(idv.size()); ++i) {
                const double* g = self.grad.data() + static_cast<std::size_t>(i) * d;
                Node* target = (i == override_row) ? po : pt;
                if (!target->requires_grad) continue;
                double* dst = target->grad_buffer().data() +
                              (i == override_row ? 0 : static_cast<std::size_t>(idv[i]) * d);
                for (int j = 0; j < d; ++j) dst[j] += g[j];
            }
        };
    }
    return out;
}

}  // namespace seal::ad
