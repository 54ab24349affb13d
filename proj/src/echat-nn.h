#pragma once

// templated neural building blocks: dense, layernorm, gelu, multi-head
// attention (batched and kv-cached paths), feed-forward, pre-ln transformer
// block, strided 1d convolution, sinusoidal positions.  forward passes write
// activations into caller-owned cache structs so backward never touches the
// parameter object; gradients accumulate into a parallel instance of the same
// layer type.  everything is templated on the scalar so the gradient checker
// can run the identical code in double precision.

#include "echat-common.h"

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace echat::nn {

template <typename T>
using mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using row = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
using col = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
inline bool all_finite(const mat<T> & m) {
    return m.allFinite();
}

// sinusoidal position table, rows [0, len)
template <typename T>
mat<T> positional_table(int len, int dim) {
    mat<T> pe(len, dim);
    for (int t = 0; t < len; t++) {
        for (int i = 0; i < dim; i += 2) {
            double w = std::pow(10000.0, -double(i) / double(dim));
            pe(t, i) = T(std::sin(double(t) * w));
            if (i + 1 < dim) {
                pe(t, i + 1) = T(std::cos(double(t) * w));
            }
        }
    }
    return pe;
}

//
// dense
//

template <typename T>
struct dense {
    mat<T> w;  // out x in
    row<T> b;

    void setup(int in, int out) {
        w.setZero(out, in);
        b.setZero(out);
    }

    void init(rng & g, int in, int out) {
        setup(in, out);
        const T scale = T(1.0 / std::sqrt(double(in)));
        for (int i = 0; i < w.rows(); i++) {
            for (int j = 0; j < w.cols(); j++) {
                w(i, j) = T(g.normal()) * scale;
            }
        }
    }

    mat<T> forward(const mat<T> & x) const {
        return (x * w.transpose()).rowwise() + b;
    }

    // accumulates into g, returns dx
    mat<T> backward(const mat<T> & x, const mat<T> & dy, dense & g) const {
        g.w.noalias() += dy.transpose() * x;
        g.b += dy.colwise().sum();
        return dy * w;
    }
};

//
// layer norm
//

template <typename T>
struct layernorm {
    row<T> g;
    row<T> b;

    struct cache {
        mat<T> xhat;
        col<T> rstd;
    };

    // setup allocates zeroed storage (shared with gradient nets); init sets
    // the identity transform
    void setup(int dim) {
        g.setZero(dim);
        b.setZero(dim);
    }

    void init(rng &, int dim) {
        setup(dim);
        g.setOnes(dim);
    }

    mat<T> forward(const mat<T> & x, cache & c) const {
        const int n = (int) x.rows();
        const int d = (int) x.cols();
        c.xhat.resize(n, d);
        c.rstd.resize(n);
        mat<T> y(n, d);
        for (int i = 0; i < n; i++) {
            T mu  = x.row(i).mean();
            T var = (x.row(i).array() - mu).square().mean();
            T rs  = T(1) / std::sqrt(var + T(1e-5));
            c.rstd(i)   = rs;
            c.xhat.row(i) = (x.row(i).array() - mu) * rs;
            y.row(i) = c.xhat.row(i).cwiseProduct(g) + b;
        }
        return y;
    }

    mat<T> backward(const cache & c, const mat<T> & dy, layernorm & grad) const {
        const int n = (int) dy.rows();
        const int d = (int) dy.cols();
        mat<T> dx(n, d);
        for (int i = 0; i < n; i++) {
            row<T> dxh = dy.row(i).cwiseProduct(g);
            T m1 = dxh.mean();
            T m2 = dxh.cwiseProduct(c.xhat.row(i)).mean();
            dx.row(i) = (dxh.array() - m1 - c.xhat.row(i).array() * m2) * c.rstd(i);
            grad.g += dy.row(i).cwiseProduct(c.xhat.row(i));
            grad.b += dy.row(i);
        }
        return dx;
    }
};

//
// gelu (tanh approximation)
//

template <typename T>
inline mat<T> gelu_forward(const mat<T> & x) {
    const T k = T(0.7978845608028654);  // sqrt(2/pi)
    return x.unaryExpr([k](T v) {
        T u = k * (v + T(0.044715) * v * v * v);
        return T(0.5) * v * (T(1) + std::tanh(u));
    });
}

template <typename T>
inline mat<T> gelu_backward(const mat<T> & x, const mat<T> & dy) {
    const T k = T(0.7978845608028654);
    mat<T> dx = x;
    for (int i = 0; i < dx.rows(); i++) {
        for (int j = 0; j < dx.cols(); j++) {
            T v  = x(i, j);
            T u  = k * (v + T(0.044715) * v * v * v);
            T th = std::tanh(u);
            T du = k * (T(1) + T(3) * T(0.044715) * v * v);
            T gp = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
            dx(i, j) = dy(i, j) * gp;
        }
    }
    return dx;
}

//
// multi-head attention
//

template <typename T>
struct mha {
    int heads = 1;
    dense<T> wq, wk, wv, wo;

    struct cache {
        mat<T> x;      // input (post-norm), n x d
        mat<T> q, k, v;
        mat<T> o;      // concatenated head outputs, pre-wo
        std::vector<mat<T>> p;  // per-head attention probs, n x n
    };

    void setup(int dim, int h) {
        heads = h;
        wq.setup(dim, dim);
        wk.setup(dim, dim);
        wv.setup(dim, dim);
        wo.setup(dim, dim);
    }

    void init(rng & g, int dim, int h) {
        heads = h;
        wq.init(g, dim, dim);
        wk.init(g, dim, dim);
        wv.init(g, dim, dim);
        wo.init(g, dim, dim);
    }

    mat<T> forward(const mat<T> & x, bool causal, cache & c) const {
        const int n  = (int) x.rows();
        const int d  = (int) x.cols();
        const int dh = d / heads;
        const T scale = T(1.0 / std::sqrt(double(dh)));

        c.x = x;
        c.q = wq.forward(x);
        c.k = wk.forward(x);
        c.v = wv.forward(x);
        c.o.resize(n, d);
        c.p.assign(heads, {});

        for (int h = 0; h < heads; h++) {
            auto qh = c.q.middleCols(h * dh, dh);
            auto kh = c.k.middleCols(h * dh, dh);
            auto vh = c.v.middleCols(h * dh, dh);
            mat<T> s = qh * kh.transpose() * scale;
            if (causal) {
                for (int i = 0; i < n; i++) {
                    for (int j = i + 1; j < n; j++) {
                        s(i, j) = T(-1e9);
                    }
                }
            }
            mat<T> & p = c.p[h];
            p.resize(n, n);
            for (int i = 0; i < n; i++) {
                T mx = s.row(i).maxCoeff();
                row<T> e = (s.row(i).array() - mx).exp();
                p.row(i) = e / e.sum();
            }
            c.o.middleCols(h * dh, dh).noalias() = p * vh;
        }
        return wo.forward(c.o);
    }

    mat<T> backward(const cache & c, const mat<T> & dy, bool causal, mha & grad) const {
        (void) causal;  // masked probs are exactly zero; gradients vanish there
        const int n  = (int) c.x.rows();
        const int d  = (int) c.x.cols();
        const int dh = d / heads;
        const T scale = T(1.0 / std::sqrt(double(dh)));

        mat<T> d_o = wo.backward(c.o, dy, grad.wo);
        mat<T> dq(n, d), dk(n, d), dv(n, d);
        for (int h = 0; h < heads; h++) {
            auto qh = c.q.middleCols(h * dh, dh);
            auto kh = c.k.middleCols(h * dh, dh);
            auto vh = c.v.middleCols(h * dh, dh);
            auto doh = d_o.middleCols(h * dh, dh);
            const mat<T> & p = c.p[h];

            dv.middleCols(h * dh, dh).noalias() = p.transpose() * doh;
            mat<T> dp = doh * vh.transpose();
            // softmax backward per row: ds = p .* (dp - rowsum(dp .* p))
            mat<T> ds(n, n);
            for (int i = 0; i < n; i++) {
                T dot = dp.row(i).cwiseProduct(p.row(i)).sum();
                ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
            }
            dq.middleCols(h * dh, dh).noalias() = ds * kh * scale;
            dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qh * scale;
        }
        mat<T> dx = wq.backward(c.x, dq, grad.wq);
        dx += wk.backward(c.x, dk, grad.wk);
        dx += wv.backward(c.x, dv, grad.wv);
        return dx;
    }
};

//
// feed-forward
//

template <typename T>
struct ffn {
    dense<T> fc1, fc2;

    struct cache {
        mat<T> x;
        mat<T> h;   // pre-activation
        mat<T> a;   // post-activation
    };

    void setup(int dim, int hidden) {
        fc1.setup(dim, hidden);
        fc2.setup(hidden, dim);
    }

    void init(rng & g, int dim, int hidden) {
        fc1.init(g, dim, hidden);
        fc2.init(g, hidden, dim);
    }

    mat<T> forward(const mat<T> & x, cache & c) const {
        c.x = x;
        c.h = fc1.forward(x);
        c.a = gelu_forward(c.h);
        return fc2.forward(c.a);
    }

    mat<T> backward(const cache & c, const mat<T> & dy, ffn & grad) const {
        mat<T> da = fc2.backward(c.a, dy, grad.fc2);
        mat<T> dh = gelu_backward(c.h, da);
        return fc1.backward(c.x, dh, grad.fc1);
    }
};

//
// pre-ln transformer block: x + mha(ln1(x)), then a + ffn(ln2(a))
//

template <typename T>
struct block {
    layernorm<T> ln1, ln2;
    mha<T> att;
    ffn<T> mlp;

    struct cache {
        typename layernorm<T>::cache c_ln1, c_ln2;
        typename mha<T>::cache c_att;
        typename ffn<T>::cache c_mlp;
        mat<T> n1;  // ln1 output
        mat<T> a;   // post-attention residual
        mat<T> n2;  // ln2 output
    };

    void setup(int dim, int heads, int hidden) {
        ln1.setup(dim);
        ln2.setup(dim);
        att.setup(dim, heads);
        mlp.setup(dim, hidden);
    }

    void init(rng & g, int dim, int heads, int hidden) {
        ln1.init(g, dim);
        ln2.init(g, dim);
        att.init(g, dim, heads);
        mlp.init(g, dim, hidden);
    }

    mat<T> forward(const mat<T> & x, bool causal, cache & c) const {
        c.n1 = ln1.forward(x, c.c_ln1);
        c.a  = x + att.forward(c.n1, causal, c.c_att);
        c.n2 = ln2.forward(c.a, c.c_ln2);
        return c.a + mlp.forward(c.n2, c.c_mlp);
    }

    mat<T> backward(const cache & c, const mat<T> & dy, bool causal, block & grad) const {
        mat<T> dn2 = mlp.backward(c.c_mlp, dy, grad.mlp);
        mat<T> da  = dy + ln2.backward(c.c_ln2, dn2, grad.ln2);
        mat<T> dn1 = att.backward(c.c_att, da, causal, grad.att);
        return da + ln1.backward(c.c_ln1, dn1, grad.ln1);
    }

    // incremental path: feed m new rows given len_prev cached rows.
    // causal layout: new row i attends to cached rows plus new rows <= i.
    struct kv {
        mat<T> k, v;
        int len = 0;

        void reset(int max_len, int dim) {
            k.setZero(max_len, dim);
            v.setZero(max_len, dim);
            len = 0;
        }
    };

    mat<T> feed(const mat<T> & x, kv & s) const {
        const int m  = (int) x.rows();
        const int d  = (int) x.cols();
        const int dh = d / att.heads;
        const T scale = T(1.0 / std::sqrt(double(dh)));

        typename layernorm<T>::cache ln_tmp;
        mat<T> n1 = ln1.forward(x, ln_tmp);
        mat<T> q = att.wq.forward(n1);
        s.k.middleRows(s.len, m) = att.wk.forward(n1);
        s.v.middleRows(s.len, m) = att.wv.forward(n1);
        const int total = s.len + m;

        mat<T> o(m, d);
        for (int h = 0; h < att.heads; h++) {
            auto qh = q.middleCols(h * dh, dh);
            auto kh = s.k.topRows(total).middleCols(h * dh, dh);
            auto vh = s.v.topRows(total).middleCols(h * dh, dh);
            mat<T> sc = qh * kh.transpose() * scale;
            for (int i = 0; i < m; i++) {
                for (int j = s.len + i + 1; j < total; j++) {
                    sc(i, j) = T(-1e9);
                }
            }
            for (int i = 0; i < m; i++) {
                T mx = sc.row(i).maxCoeff();
                row<T> e = (sc.row(i).array() - mx).exp();
                o.row(i).segment(h * dh, dh) = (e / e.sum()) * vh;
            }
        }
        s.len = total;
        mat<T> a = x + att.wo.forward(o);
        mat<T> n2 = ln2.forward(a, ln_tmp);
        typename ffn<T>::cache mlp_tmp;
        return a + mlp.forward(n2, mlp_tmp);
    }
};

//
// strided 1d convolution, kernel 3, right-edge zero padding.
// output length = ceil(n / stride); window for output t starts at t*stride.
//

template <typename T>
struct conv1d {
    int stride = 1;
    int ksize  = 3;
    dense<T> proj;  // w: out x (ksize*in)

    static int out_len(int n, int stride) { return (n + stride - 1) / stride; }

    struct cache {
        mat<T> xcol;
        int in_rows = 0;
        int in_ch   = 0;
    };

    void setup(int in, int out, int s) {
        stride = s;
        proj.setup(ksize * in, out);
    }

    void init(rng & g, int in, int out, int s) {
        stride = s;
        proj.init(g, ksize * in, out);
    }

    mat<T> forward(const mat<T> & x, cache & c) const {
        const int n  = (int) x.rows();
        const int ci = (int) x.cols();
        const int m  = out_len(n, stride);
        c.in_rows = n;
        c.in_ch   = ci;
        c.xcol.setZero(m, ksize * ci);
        for (int t = 0; t < m; t++) {
            for (int j = 0; j < ksize; j++) {
                int src = t * stride + j;
                if (src < n) {
                    c.xcol.row(t).segment(j * ci, ci) = x.row(src);
                }
            }
        }
        return proj.forward(c.xcol);
    }

    mat<T> backward(const cache & c, const mat<T> & dy, conv1d & grad) const {
        mat<T> dcol = proj.backward(c.xcol, dy, grad.proj);
        mat<T> dx;
        dx.setZero(c.in_rows, c.in_ch);
        const int m = (int) dy.rows();
        for (int t = 0; t < m; t++) {
            for (int j = 0; j < ksize; j++) {
                int src = t * stride + j;
                if (src < c.in_rows) {
                    dx.row(src) += dcol.row(t).segment(j * c.in_ch, c.in_ch);
                }
            }
        }
        return dx;
    }
};

}  // namespace echat::nn
