#include "rescuenet/layers.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <memory>

namespace rescuenet {

namespace {

template <typename T>
using EigenMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Gathers the conv patches of one batch item into a [C*kh*kw, OH*OW] matrix.
template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int dilation, int padding,
            int oh, int ow, T* cols) {
    const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;
    std::int64_t row = 0;
    for (int ch = 0; ch < c; ++ch) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++row) {
                T* dst = cols + row * ohw;
                const int iy0 = ki * dilation - padding;
                const int ix0 = kj * dilation - padding;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + iy0;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = T(0);
                        continue;
                    }
                    const T* src = x + (static_cast<std::int64_t>(ch) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + ix0;
                        dst[oy * ow + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// C[m x n] = A[m x k] * B[k x n], all row-major. The k loop is sequential
// per output element, so a kernel row of exact zeros contributes nothing at
// all: convolution with a zero-inflated kernel is bit-identical to the
// dilated convolution it expands. Eigen's blocked GEMM does not give that
// guarantee, so the convolution forward path uses this kernel instead.
template <typename T>
void gemm_ikj(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] = T(0);
        const T* arow = a + static_cast<std::int64_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            const T* brow = b + static_cast<std::int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// Scatter-add of patch gradients back onto the input plane.
template <typename T>
void col2im(const T* cols, int c, int h, int w, int kh, int kw, int stride, int dilation,
            int padding, int oh, int ow, T* gx) {
    const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;
    std::int64_t row = 0;
    for (int ch = 0; ch < c; ++ch) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++row) {
                const T* src = cols + row * ohw;
                const int iy0 = ki * dilation - padding;
                const int ix0 = kj * dilation - padding;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + iy0;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = gx + (static_cast<std::int64_t>(ch) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + ix0;
                        if (ix >= 0 && ix < w) dst[ix] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

std::pair<int, int> conv2d_output_hw(int in_h, int in_w, int kh, int kw, int stride, int dilation,
                                     int padding) {
    if (stride < 1 || dilation < 1 || padding < 0) {
        throw ValueError("conv2d requires stride>=1, dilation>=1, padding>=0");
    }
    const int eh = (kh - 1) * dilation + 1;
    const int ew = (kw - 1) * dilation + 1;
    const int oh = (in_h + 2 * padding - eh) / stride + 1;
    const int ow = (in_w + 2 * padding - ew) / stride + 1;
    if (in_h + 2 * padding < eh || in_w + 2 * padding < ew || oh <= 0 || ow <= 0) {
        throw ValueError("conv2d output size would be non-positive for input " +
                         std::to_string(in_h) + "x" + std::to_string(in_w) + ", kernel extent " +
                         std::to_string(eh) + "x" + std::to_string(ew));
    }
    return {oh, ow};
}

template <typename T>
TensorT<T> conv2d_forward(TapeT<T>& tape, const TensorT<T>& x, const Conv2dLayerT<T>& layer) {
    if (x.rank() != 4) throw ShapeError("conv2d input must be [N,C,H,W], got " + shape_str(x.shape()));
    if (layer.weight.rank() != 4) {
        throw ShapeError("conv2d weight must be [O,C,kh,kw], got " + shape_str(layer.weight.shape()));
    }
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int o = layer.weight.dim(0), wc = layer.weight.dim(1), kh = layer.weight.dim(2),
              kw = layer.weight.dim(3);
    if (c != wc) {
        throw ShapeError("conv2d channel mismatch: input has " + std::to_string(c) +
                         ", weight expects " + std::to_string(wc));
    }
    if (layer.bias && (layer.bias->rank() != 1 || layer.bias->dim(0) != o)) {
        throw ShapeError("conv2d bias must be [out_ch]");
    }
    const auto [oh, ow] = conv2d_output_hw(h, w, kh, kw, layer.stride, layer.dilation, layer.padding);
    const std::int64_t ckk = static_cast<std::int64_t>(c) * kh * kw;
    const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;

    auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * ckk * ohw);
    TensorT<T> out(Shape{n, o, oh, ow});
    for (int b = 0; b < n; ++b) {
        T* colb = cols->data() + static_cast<std::int64_t>(b) * ckk * ohw;
        im2col(x.data() + static_cast<std::int64_t>(b) * c * h * w, c, h, w, kh, kw, layer.stride,
               layer.dilation, layer.padding, oh, ow, colb);
        gemm_ikj(layer.weight.data(), colb, out.data() + static_cast<std::int64_t>(b) * o * ohw, o,
                 static_cast<int>(ckk), static_cast<int>(ohw));
    }
    if (layer.bias) {
        const T* pb = layer.bias->data();
        T* po = out.data();
        for (int b = 0; b < n; ++b) {
            for (int oc = 0; oc < o; ++oc) {
                const T bv = pb[oc];
                T* row = po + (static_cast<std::int64_t>(b) * o + oc) * ohw;
                for (std::int64_t i = 0; i < ohw; ++i) row[i] += bv;
            }
        }
    }

    std::vector<TensorT<T>> inputs{x, layer.weight};
    if (layer.bias) inputs.push_back(*layer.bias);
    const int stride = layer.stride, dilation = layer.dilation, padding = layer.padding;
    const bool has_bias = layer.bias.has_value();
    auto bwd = [=](const TensorT<T>& outp, std::vector<TensorT<T>>& ins) {
        const std::vector<T>& g = outp.grad();
        TensorT<T>& xin = ins[0];
        TensorT<T>& wt = ins[1];
        const bool need_dx = xin.requires_grad();
        const bool need_dw = wt.requires_grad();
        std::vector<T> gw(need_dw ? static_cast<std::size_t>(o) * ckk : 0, T(0));
        std::vector<T> gx(need_dx ? static_cast<std::size_t>(n) * c * h * w : 0, T(0));
        std::vector<T> gcols(need_dx ? static_cast<std::size_t>(ckk) * ohw : 0);
        Eigen::Map<const EigenMat<T>> wmat2(wt.data(), o, ckk);
        for (int b = 0; b < n; ++b) {
            Eigen::Map<const EigenMat<T>> gmat(g.data() + static_cast<std::int64_t>(b) * o * ohw, o,
                                               ohw);
            const T* colb = cols->data() + static_cast<std::int64_t>(b) * ckk * ohw;
            if (need_dw) {
                Eigen::Map<const EigenMat<T>> mcols(colb, ckk, ohw);
                Eigen::Map<EigenMat<T>> mgw(gw.data(), o, ckk);
                mgw.noalias() += gmat * mcols.transpose();
            }
            if (need_dx) {
                Eigen::Map<EigenMat<T>> mgc(gcols.data(), ckk, ohw);
                mgc.noalias() = wmat2.transpose() * gmat;
                col2im(gcols.data(), c, h, w, kh, kw, stride, dilation, padding, oh, ow,
                       gx.data() + static_cast<std::int64_t>(b) * c * h * w);
            }
        }
        if (need_dw) TapeT<T>::accumulate(wt, gw);
        if (need_dx) TapeT<T>::accumulate(xin, gx);
        if (has_bias && ins[2].requires_grad()) {
            std::vector<T> gb(static_cast<std::size_t>(o), T(0));
            for (int b = 0; b < n; ++b) {
                for (int oc = 0; oc < o; ++oc) {
                    const T* row = g.data() + (static_cast<std::int64_t>(b) * o + oc) * ohw;
                    T acc = T(0);
                    for (std::int64_t i = 0; i < ohw; ++i) acc += row[i];
                    gb[static_cast<std::size_t>(oc)] += acc;
                }
            }
            TapeT<T>::accumulate(ins[2], gb);
        }
    };
    tape.record(std::move(inputs), out, std::move(bwd));
    return out;
}

template <typename T>
TensorT<T> batchnorm_forward(TapeT<T>& tape, const TensorT<T>& x, BatchNormLayerT<T>& layer,
                             Mode mode) {
    if (x.rank() != 4) throw ShapeError("batchnorm input must be [N,C,H,W]");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (layer.gamma.numel() != c || layer.beta.numel() != c || layer.running_mean.numel() != c ||
        layer.running_var.numel() != c) {
        throw ShapeError("batchnorm parameter channel count does not match input channels " +
                         std::to_string(c));
    }
    const Shape chan{1, c, 1, 1};
    TensorT<T> gamma = tape.reshape(layer.gamma, chan);
    TensorT<T> beta = tape.reshape(layer.beta, chan);

    if (mode == Mode::kTrain) {
        const std::int64_t count = static_cast<std::int64_t>(n) * h * w;
        if (count <= 1) {
            throw ValueError("batchnorm train mode needs more than one value per channel "
                             "(batch with spatial size 1)");
        }
        TensorT<T> mu = tape.div_scalar(tape.sum_axes(x, {0, 2, 3}, true), static_cast<T>(count));
        TensorT<T> xc = tape.sub(x, mu);
        TensorT<T> var =
            tape.div_scalar(tape.sum_axes(tape.mul(xc, xc), {0, 2, 3}, true), static_cast<T>(count));
        TensorT<T> xhat = tape.div(xc, tape.sqrt(tape.add_scalar(var, layer.eps)));
        TensorT<T> y = tape.add(tape.mul(xhat, gamma), beta);

        // EMA bookkeeping, outside the recorded graph.
        const T m = layer.momentum;
        T* rm = layer.running_mean.data();
        T* rv = layer.running_var.data();
        const T* pm = mu.data();
        const T* pv = var.data();
        for (int i = 0; i < c; ++i) {
            rm[i] = (T(1) - m) * rm[i] + m * pm[i];
            rv[i] = (T(1) - m) * rv[i] + m * pv[i];
        }
        return y;
    }

    TensorT<T> rm = tape.reshape(layer.running_mean.detached(), chan);
    TensorT<T> rv = tape.reshape(layer.running_var.detached(), chan);
    TensorT<T> xhat = tape.div(tape.sub(x, rm), tape.sqrt(tape.add_scalar(rv, layer.eps)));
    return tape.add(tape.mul(xhat, gamma), beta);
}

template <typename T>
TensorT<T> bilinear_upsample(TapeT<T>& tape, const TensorT<T>& x, int factor) {
    if (x.rank() != 4) throw ShapeError("bilinear_upsample input must be [N,C,H,W]");
    if (factor < 1) throw ValueError("upsample factor must be >= 1");
    if (factor == 1) {
        // identity; still recorded so gradients flow
        TensorT<T> out(x.shape(), x.values());
        auto bwd = [](const TensorT<T>& o, std::vector<TensorT<T>>& ins) {
            TapeT<T>::accumulate(ins[0], o.grad());
        };
        std::vector<TensorT<T>> inputs{x};
        tape.record(std::move(inputs), out, std::move(bwd));
        return out;
    }
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = h * factor, ow = w * factor;

    struct Tap {
        int i0, i1;
        T w0, w1;
    };
    auto make_taps = [factor](int out_len, int in_len) {
        std::vector<Tap> taps(static_cast<std::size_t>(out_len));
        for (int i = 0; i < out_len; ++i) {
            const double src = (i + 0.5) / factor - 0.5;
            int i0 = static_cast<int>(std::floor(src));
            const double w1 = src - i0;
            int i1 = i0 + 1;
            if (i0 < 0) i0 = 0;
            if (i1 > in_len - 1) i1 = in_len - 1;
            if (i0 > in_len - 1) i0 = in_len - 1;
            taps[static_cast<std::size_t>(i)] = Tap{i0, i1, static_cast<T>(1.0 - w1),
                                                    static_cast<T>(w1)};
        }
        return taps;
    };
    auto ytaps = std::make_shared<std::vector<Tap>>(make_taps(oh, h));
    auto xtaps = std::make_shared<std::vector<Tap>>(make_taps(ow, w));

    TensorT<T> out(Shape{n, c, oh, ow});
    const T* px = x.data();
    T* po = out.data();
    for (int b = 0; b < n * c; ++b) {
        const T* plane = px + static_cast<std::int64_t>(b) * h * w;
        T* oplane = po + static_cast<std::int64_t>(b) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            const Tap& ty = (*ytaps)[static_cast<std::size_t>(oy)];
            for (int ox = 0; ox < ow; ++ox) {
                const Tap& tx = (*xtaps)[static_cast<std::size_t>(ox)];
                oplane[oy * ow + ox] = ty.w0 * (tx.w0 * plane[ty.i0 * w + tx.i0] +
                                                tx.w1 * plane[ty.i0 * w + tx.i1]) +
                                       ty.w1 * (tx.w0 * plane[ty.i1 * w + tx.i0] +
                                                tx.w1 * plane[ty.i1 * w + tx.i1]);
            }
        }
    }
    auto bwd = [=](const TensorT<T>& o, std::vector<TensorT<T>>& ins) {
        if (!ins[0].requires_grad()) return;
        const std::vector<T>& g = o.grad();
        std::vector<T> gx(static_cast<std::size_t>(ins[0].numel()), T(0));
        for (int b = 0; b < n * c; ++b) {
            const T* gplane = g.data() + static_cast<std::int64_t>(b) * oh * ow;
            T* gxplane = gx.data() + static_cast<std::int64_t>(b) * h * w;
            for (int oy = 0; oy < oh; ++oy) {
                const Tap& ty = (*ytaps)[static_cast<std::size_t>(oy)];
                for (int ox = 0; ox < ow; ++ox) {
                    const Tap& tx = (*xtaps)[static_cast<std::size_t>(ox)];
                    const T gv = gplane[oy * ow + ox];
                    gxplane[ty.i0 * w + tx.i0] += ty.w0 * tx.w0 * gv;
                    gxplane[ty.i0 * w + tx.i1] += ty.w0 * tx.w1 * gv;
                    gxplane[ty.i1 * w + tx.i0] += ty.w1 * tx.w0 * gv;
                    gxplane[ty.i1 * w + tx.i1] += ty.w1 * tx.w1 * gv;
                }
            }
        }
        TapeT<T>::accumulate(ins[0], gx);
    };
    std::vector<TensorT<T>> inputs{x};
    tape.record(std::move(inputs), out, std::move(bwd));
    return out;
}

template <typename T>
TensorT<T> global_avg_pool(TapeT<T>& tape, const TensorT<T>& x) {
    if (x.rank() != 4) throw ShapeError("global_avg_pool input must be [N,C,H,W]");
    const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    return tape.div_scalar(tape.sum_axes(x, {2, 3}, true), static_cast<T>(hw));
}

template TensorT<float> conv2d_forward<float>(TapeT<float>&, const TensorT<float>&,
                                              const Conv2dLayerT<float>&);
template TensorT<double> conv2d_forward<double>(TapeT<double>&, const TensorT<double>&,
                                                const Conv2dLayerT<double>&);
template TensorT<float> batchnorm_forward<float>(TapeT<float>&, const TensorT<float>&,
                                                 BatchNormLayerT<float>&, Mode);
template TensorT<double> batchnorm_forward<double>(TapeT<double>&, const TensorT<double>&,
                                                   BatchNormLayerT<double>&, Mode);
template TensorT<float> bilinear_upsample<float>(TapeT<float>&, const TensorT<float>&, int);
template TensorT<double> bilinear_upsample<double>(TapeT<double>&, const TensorT<double>&, int);
template TensorT<float> global_avg_pool<float>(TapeT<float>&, const TensorT<float>&);
template TensorT<double> global_avg_pool<double>(TapeT<double>&, const TensorT<double>&);

}  // namespace rescuenet
