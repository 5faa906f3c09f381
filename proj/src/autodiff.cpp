#include "autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace dhm::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape == b.shape, ErrorCode::invalid_argument,
            std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

int Graph::input(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Graph::make(Tensor value, std::vector<int> parents, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(fn);
    for (int p : n.parents)
        if (nodes_[static_cast<std::size_t>(p)].requires_grad) n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Graph::grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_ready) {
        if (n.grad.shape != n.value.shape)
            n.grad = Tensor(n.value.shape);
        else
            n.grad.fill(0.0);
        n.grad_ready = true;
    }
    return n.grad;
}

void Graph::backward(int root) {
    for (auto& n : nodes_) n.grad_ready = false;
    Node& r = nodes_[static_cast<std::size_t>(root)];
    require(r.value.numel() == 1, ErrorCode::invalid_argument,
            "backward root must be scalar");
    if (!r.requires_grad) return;
    grad_buffer(root)[0] = 1.0;
    for (int i = root; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.grad_ready || !n.backward || !n.requires_grad) continue;
        n.backward(*this, i);
    }
}

// ---------------------------------------------------------------------------

int add(Graph& g, int a, int b) {
    check_same_shape(g.value(a), g.value(b), "add");
    Tensor out = g.value(a);
    const Tensor& vb = g.value(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    return g.make(std::move(out), {a, b}, [a, b](Graph& gg, int self) {
        const Tensor& go = gg.grad(self);
        for (int p : {a, b}) {
            if (!gg.requires_grad(p)) continue;
            Tensor& gp = gg.grad_buffer(p);
            for (std::int64_t i = 0; i < go.numel(); ++i) gp[i] += go[i];
        }
    });
}

int sub(Graph& g, int a, int b) {
    check_same_shape(g.value(a), g.value(b), "sub");
    Tensor out = g.value(a);
    const Tensor& vb = g.value(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
    return g.make(std::move(out), {a, b}, [a, b](Graph& gg, int self) {
        const Tensor& go = gg.grad(self);
        if (gg.requires_grad(a)) {
            Tensor& ga = gg.grad_buffer(a);
            for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
        }
        if (gg.requires_grad(b)) {
            Tensor& gb = gg.grad_buffer(b);
            for (std::int64_t i = 0; i < go.numel(); ++i) gb[i] -= go[i];
        }
    });
}

int mul(Graph& g, int a, int b) {
    check_same_shape(g.value(a), g.value(b), "mul");
    Tensor out = g.value(a);
    const Tensor& vb = g.value(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
    return g.make(std::move(out), {a, b}, [a, b](Graph& gg, int self) {
        const Tensor& go = gg.grad(self);
        const Tensor& va = gg.value(a);
        const Tensor& vb2 = gg.value(b);
        if (gg.requires_grad(a)) {
            Tensor& ga = gg.grad_buffer(a);
            for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * vb2[i];
        }
        if (gg.requires_grad(b)) {
            Tensor& gb = gg.grad_buffer(b);
            for (std::int64_t i = 0; i < go.numel(); ++i) gb[i] += go[i] * va[i];
        }
    });
}

int scale(Graph& g, int a, double c) {
    Tensor out = g.value(a);
    for (double& v : out.data) v *= c;
    return g.make(std::move(out), {a}, [a, c](Graph& gg, int self) {
        if (!gg.requires_grad(a)) return;
        const Tensor& go = gg.grad(self);
        Tensor& ga = gg.grad_buffer(a);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += c * go[i];
    });
}

int add_const(Graph& g, int a, double c) {
    Tensor out = g.value(a);
    for (double& v : out.data) v += c;
    return g.make(std::move(out), {a}, [a](Graph& gg, int self) {
        if (!gg.requires_grad(a)) return;
        const Tensor& go = gg.grad(self);
        Tensor& ga = gg.grad_buffer(a);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    });
}

namespace {

template <typename F, typename DF>
int unary_op(Graph& g, int a, F f, DF df) {
    Tensor out = g.value(a);
    for (double& v : out.data) v = f(v);
    return g.make(std::move(out), {a}, [a, df](Graph& gg, int self) {
        if (!gg.requires_grad(a)) return;
        const Tensor& go = gg.grad(self);
        const Tensor& vin = gg.value(a);
        const Tensor& vout = gg.value(self);
        Tensor& ga = gg.grad_buffer(a);
        for (std::int64_t i = 0; i < go.numel(); ++i)
            ga[i] += go[i] * df(vin[i], vout[i]);
    });
}

}  // namespace

int exp_op(Graph& g, int a) {
    return unary_op(
        g, a, [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

int log_op(Graph& g, int a) {
    return unary_op(
        g, a, [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

int tanh_op(Graph& g, int a) {
    return unary_op(
        g, a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

int sigmoid(Graph& g, int a) {
    return unary_op(
        g, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

int relu(Graph& g, int a) {
    return unary_op(
        g, a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

int leaky_relu(Graph& g, int a, double slope) {
    return unary_op(
        g, a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

int abs_op(Graph& g, int a) {
    return unary_op(
        g, a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

int reshape(Graph& g, int a, std::vector<int> shape) {
    require(Tensor::numel_of(shape) == g.value(a).numel(), ErrorCode::invalid_argument,
            "reshape: element count mismatch");
    Tensor out(std::move(shape), g.value(a).data);
    return g.make(std::move(out), {a}, [a](Graph& gg, int self) {
        if (!gg.requires_grad(a)) return;
        const Tensor& go = gg.grad(self);
        Tensor& ga = gg.grad_buffer(a);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    });
}

int slice_cols(Graph& g, int a, int c0, int c1) {
    const Tensor& v = g.value(a);
    require(v.rank() == 2 && c0 >= 0 && c1 <= v.dim(1) && c0 < c1,
            ErrorCode::invalid_argument, "slice_cols: bad range");
    int n = v.dim(0), c = v.dim(1), w = c1 - c0;
    Tensor out({n, w});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j) out[i * w + j] = v[i * c + c0 + j];
    return g.make(std::move(out), {a}, [a, c0, w, c](Graph& gg, int self) {
        if (!gg.requires_grad(a)) return;
        const Tensor& go = gg.grad(self);
        Tensor& ga = gg.grad_buffer(a);
        int n2 = go.dim(0);
        for (int i = 0; i < n2; ++i)
            for (int j = 0; j < w; ++j) ga[i * c + c0 + j] += go[i * w + j];
    });
}

int concat_cols(Graph& g, int a, int b) {
    const Tensor& va = g.value(a);
    const Tensor& vb = g.value(b);
    require(va.rank() == 2 && vb.rank() == 2 && va.dim(0) == vb.dim(0),
            ErrorCode::invalid_argument, "concat_cols: row mismatch");
    int n = va.dim(0), ca = va.dim(1), cb = vb.dim(1);
    Tensor out({n, ca + cb});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < ca; ++j) out[i * (ca + cb) + j] = va[i * ca + j];
        for (int j = 0; j < cb; ++j) out[i * (ca + cb) + ca + j] = vb[i * cb + j];
    }
    return g.make(std::move(out), {a, b}, [a, b, ca, cb](Graph& gg, int self) {
        const Tensor& go = gg.grad(self);
        int n2 = go.dim(0);
        if (gg.requires_grad(a)) {
            Tensor& ga = gg.grad_buffer(a);
            for (int i = 0; i < n2; ++i)
                for (int j = 0; j < ca; ++j) ga[i * ca + j] += go[i * (ca + cb) + j];
        }
        if (gg.requires_grad(b)) {
            Tensor& gb = gg.grad_buffer(b);
            for (int i = 0; i < n2; ++i)
                for (int j = 0; j < cb; ++j) gb[i * cb + j] += go[i * (ca + cb) + ca + j];
        }
    });
}

int sum(Graph& g, int a) {
    double s = 0.0;
    for (double v : g.value(a).data) s += v;
    return g.make(Tensor::scalar(s), {a}, [a](Graph& gg, int self) {
        if (!gg.requires_grad(a)) return;
        double go = gg.grad(self)[0];
        Tensor& ga = gg.grad_buffer(a);
        for (double& v : ga.data) v += go;
    });
}

int sum_abs(Graph& g, int a) {
    double s = 0.0;
    for (double v : g.value(a).data) s += std::fabs(v);
    return g.make(Tensor::scalar(s), {a}, [a](Graph& gg, int self) {
        if (!gg.requires_grad(a)) return;
        double go = gg.grad(self)[0];
        const Tensor& vin = gg.value(a);
        Tensor& ga = gg.grad_buffer(a);
        for (std::int64_t i = 0; i < vin.numel(); ++i) {
            double x = vin[i];
            ga[i] += go * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
        }
    });
}

int sum_sq(Graph& g, int a) {
    double s = 0.0;
    for (double v : g.value(a).data) s += v * v;
    return g.make(Tensor::scalar(s), {a}, [a](Graph& gg, int self) {
        if (!gg.requires_grad(a)) return;
        double go = gg.grad(self)[0];
        const Tensor& vin = gg.value(a);
        Tensor& ga = gg.grad_buffer(a);
        for (std::int64_t i = 0; i < vin.numel(); ++i) ga[i] += 2.0 * go * vin[i];
    });
}

int add_scalars(Graph& g, const std::vector<int>& terms, const std::vector<double>& weights) {
    require(terms.size() == weights.size() && !terms.empty(), ErrorCode::invalid_argument,
            "add_scalars: arity mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        require(g.value(terms[i]).numel() == 1, ErrorCode::invalid_argument,
                "add_scalars: non-scalar term");
        s += weights[i] * g.value(terms[i])[0];
    }
    std::vector<int> parents = terms;
    std::vector<double> w = weights;
    return g.make(Tensor::scalar(s), parents, [parents, w](Graph& gg, int self) {
        double go = gg.grad(self)[0];
        for (std::size_t i = 0; i < parents.size(); ++i) {
            if (!gg.requires_grad(parents[i])) continue;
            gg.grad_buffer(parents[i])[0] += go * w[i];
        }
    });
}

int matmul(Graph& g, int a, int b) {
    const Tensor& va = g.value(a);
    const Tensor& vb = g.value(b);
    require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(0),
            ErrorCode::invalid_argument, "matmul: incompatible shapes");
    int m = va.dim(0), k = va.dim(1), n = vb.dim(1);
    Tensor out({m, n});
    {
        CMatMap A(va.data.data(), m, k), B(vb.data.data(), k, n);
        MatMap C(out.data.data(), m, n);
        C.noalias() = A * B;
    }
    return g.make(std::move(out), {a, b}, [a, b, m, k, n](Graph& gg, int self) {
        const Tensor& go = gg.grad(self);
        CMatMap G(go.data.data(), m, n);
        if (gg.requires_grad(a)) {
            CMatMap B(gg.value(b).data.data(), k, n);
            MatMap GA(gg.grad_buffer(a).data.data(), m, k);
            GA.noalias() += G * B.transpose();
        }
        if (gg.requires_grad(b)) {
            CMatMap A(gg.value(a).data.data(), m, k);
            MatMap GB(gg.grad_buffer(b).data.data(), k, n);
            GB.noalias() += A.transpose() * G;
        }
    });
}

int add_row_bias(Graph& g, int a, int b) {
    const Tensor& va = g.value(a);
    const Tensor& vb = g.value(b);
    require(va.rank() == 2 && vb.rank() == 1 && va.dim(1) == vb.dim(0),
            ErrorCode::invalid_argument, "add_row_bias: incompatible shapes");
    int m = va.dim(0), n = va.dim(1);
    Tensor out = va;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[i * n + j] += vb[j];
    return g.make(std::move(out), {a, b}, [a, b, m, n](Graph& gg, int self) {
        const Tensor& go = gg.grad(self);
        if (gg.requires_grad(a)) {
            Tensor& ga = gg.grad_buffer(a);
            for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
        }
        if (gg.requires_grad(b)) {
            Tensor& gb = gg.grad_buffer(b);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) gb[j] += go[i * n + j];
        }
    });
}

namespace {

struct ConvDims {
    int n, c, h, w, oc, kh, kw, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
    require(x.rank() == 4 && w.rank() == 4, ErrorCode::invalid_argument,
            "conv2d: x and w must be rank 4");
    require(x.dim(1) == w.dim(1), ErrorCode::invalid_argument,
            "conv2d: channel mismatch");
    ConvDims d;
    d.n = x.dim(0); d.c = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
    d.oc = w.dim(0); d.kh = w.dim(2); d.kw = w.dim(3);
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    require(d.oh > 0 && d.ow > 0, ErrorCode::invalid_argument, "conv2d: empty output");
    return d;
}

void im2col(const double* x, const ConvDims& d, int stride, int pad, double* col) {
    // col is [c*kh*kw, oh*ow]
    const int cols = d.oh * d.ow;
    for (int c = 0; c < d.c; ++c) {
        for (int i = 0; i < d.kh; ++i) {
            for (int j = 0; j < d.kw; ++j) {
                double* dst = col + ((c * d.kh + i) * d.kw + j) * cols;
                for (int oh = 0; oh < d.oh; ++oh) {
                    int ih = oh * stride - pad + i;
                    const bool row_ok = ih >= 0 && ih < d.h;
                    for (int ow = 0; ow < d.ow; ++ow) {
                        int iw = ow * stride - pad + j;
                        dst[oh * d.ow + ow] = (row_ok && iw >= 0 && iw < d.w)
                                                  ? x[(c * d.h + ih) * d.w + iw]
                                                  : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvDims& d, int stride, int pad, double* x) {
    const int cols = d.oh * d.ow;
    for (int c = 0; c < d.c; ++c) {
        for (int i = 0; i < d.kh; ++i) {
            for (int j = 0; j < d.kw; ++j) {
                const double* src = col + ((c * d.kh + i) * d.kw + j) * cols;
                for (int oh = 0; oh < d.oh; ++oh) {
                    int ih = oh * stride - pad + i;
                    if (ih < 0 || ih >= d.h) continue;
                    for (int ow = 0; ow < d.ow; ++ow) {
                        int iw = ow * stride - pad + j;
                        if (iw < 0 || iw >= d.w) continue;
                        x[(c * d.h + ih) * d.w + iw] += src[oh * d.ow + ow];
                    }
                }
            }
        }
    }
}

}  // namespace

int conv2d(Graph& g, int x, int w, int bias, int stride, int pad) {
    const Tensor& vx = g.value(x);
    const Tensor& vw = g.value(w);
    const Tensor& vb = g.value(bias);
    ConvDims d = conv_dims(vx, vw, stride, pad);
    require(vb.rank() == 1 && vb.dim(0) == d.oc, ErrorCode::invalid_argument,
            "conv2d: bias shape");

    const int patch = d.c * d.kh * d.kw;
    const int cols = d.oh * d.ow;
    Tensor out({d.n, d.oc, d.oh, d.ow});
    std::vector<double> col(static_cast<std::size_t>(patch) * cols);
    CMatMap W(vw.data.data(), d.oc, patch);
    for (int n = 0; n < d.n; ++n) {
        im2col(vx.data.data() + static_cast<std::size_t>(n) * d.c * d.h * d.w, d, stride,
               pad, col.data());
        CMatMap Col(col.data(), patch, cols);
        MatMap Y(out.data.data() + static_cast<std::size_t>(n) * d.oc * cols, d.oc, cols);
        Y.noalias() = W * Col;
        for (int oc = 0; oc < d.oc; ++oc) Y.row(oc).array() += vb[oc];
    }

    return g.make(std::move(out), {x, w, bias},
                  [x, w, bias, d, stride, pad, patch, cols](Graph& gg, int self) {
        const Tensor& go = gg.grad(self);
        const Tensor& vx2 = gg.value(x);
        const Tensor& vw2 = gg.value(w);
        std::vector<double> col(static_cast<std::size_t>(patch) * cols);
        std::vector<double> dcol(static_cast<std::size_t>(patch) * cols);
        const bool need_x = gg.requires_grad(x);
        const bool need_w = gg.requires_grad(w);
        const bool need_b = gg.requires_grad(bias);
        for (int n = 0; n < d.n; ++n) {
            CMatMap G(go.data.data() + static_cast<std::size_t>(n) * d.oc * cols, d.oc, cols);
            if (need_w || need_x)
                im2col(vx2.data.data() + static_cast<std::size_t>(n) * d.c * d.h * d.w, d,
                       stride, pad, col.data());
            if (need_w) {
                MatMap GW(gg.grad_buffer(w).data.data(), d.oc, patch);
                CMatMap Col(col.data(), patch, cols);
                GW.noalias() += G * Col.transpose();
            }
            if (need_b) {
                Tensor& gb = gg.grad_buffer(bias);
                for (int oc = 0; oc < d.oc; ++oc) gb[oc] += G.row(oc).sum();
            }
            if (need_x) {
                CMatMap W2(vw2.data.data(), d.oc, patch);
                MatMap DCol(dcol.data(), patch, cols);
                DCol.noalias() = W2.transpose() * G;
                col2im_add(dcol.data(), d, stride, pad,
                           gg.grad_buffer(x).data.data() +
                               static_cast<std::size_t>(n) * d.c * d.h * d.w);
            }
        }
    });
}

int upsample2x(Graph& g, int x) {
    const Tensor& vx = g.value(x);
    require(vx.rank() == 4, ErrorCode::invalid_argument, "upsample2x: rank 4 expected");
    int n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    Tensor out({n, c, 2 * h, 2 * w});
    for (int i = 0; i < n * c; ++i) {
        const double* src = vx.data.data() + static_cast<std::size_t>(i) * h * w;
        double* dst = out.data.data() + static_cast<std::size_t>(i) * 4 * h * w;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                double v = src[y * w + xx];
                dst[(2 * y) * 2 * w + 2 * xx] = v;
                dst[(2 * y) * 2 * w + 2 * xx + 1] = v;
                dst[(2 * y + 1) * 2 * w + 2 * xx] = v;
                dst[(2 * y + 1) * 2 * w + 2 * xx + 1] = v;
            }
    }
    return g.make(std::move(out), {x}, [x, n, c, h, w](Graph& gg, int self) {
        if (!gg.requires_grad(x)) return;
        const Tensor& go = gg.grad(self);
        Tensor& gx = gg.grad_buffer(x);
        for (int i = 0; i < n * c; ++i) {
            const double* src = go.data.data() + static_cast<std::size_t>(i) * 4 * h * w;
            double* dst = gx.data.data() + static_cast<std::size_t>(i) * h * w;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    dst[y * w + xx] += src[(2 * y) * 2 * w + 2 * xx] +
                                       src[(2 * y) * 2 * w + 2 * xx + 1] +
                                       src[(2 * y + 1) * 2 * w + 2 * xx] +
                                       src[(2 * y + 1) * 2 * w + 2 * xx + 1];
        }
    });
}

int channel_l2_normalize(Graph& g, int x, double eps) {
    const Tensor& vx = g.value(x);
    require(vx.rank() == 4, ErrorCode::invalid_argument, "channel_l2_normalize: rank 4");
    int n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    int hw = h * w;
    Tensor out(vx.shape);
    for (int b = 0; b < n; ++b)
        for (int p = 0; p < hw; ++p) {
            double s = eps;
            for (int ch = 0; ch < c; ++ch) {
                double v = vx[(static_cast<std::int64_t>(b) * c + ch) * hw + p];
                s += v * v;
            }
            double inv = 1.0 / std::sqrt(s);
            for (int ch = 0; ch < c; ++ch) {
                std::int64_t idx = (static_cast<std::int64_t>(b) * c + ch) * hw + p;
                out[idx] = vx[idx] * inv;
            }
        }
    return g.make(std::move(out), {x}, [x, n, c, hw, eps](Graph& gg, int self) {
        if (!gg.requires_grad(x)) return;
        const Tensor& go = gg.grad(self);
        const Tensor& vin = gg.value(x);
        const Tensor& vout = gg.value(self);
        Tensor& gx = gg.grad_buffer(x);
        for (int b = 0; b < n; ++b)
            for (int p = 0; p < hw; ++p) {
                double s = eps, dot = 0.0;
                for (int ch = 0; ch < c; ++ch) {
                    std::int64_t idx = (static_cast<std::int64_t>(b) * c + ch) * hw + p;
                    s += vin[idx] * vin[idx];
                    dot += go[idx] * vout[idx];
                }
                double inv = 1.0 / std::sqrt(s);
                for (int ch = 0; ch < c; ++ch) {
                    std::int64_t idx = (static_cast<std::int64_t>(b) * c + ch) * hw + p;
                    gx[idx] += inv * (go[idx] - vout[idx] * dot);
                }
            }
    });
}

}  // namespace dhm::ad
