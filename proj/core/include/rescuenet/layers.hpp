#pragma once

#include <optional>

#include "rescuenet/tape.hpp"

namespace rescuenet {

enum class Mode { kTrain, kEval };

// 2-D convolution with cross-correlation semantics (no kernel flip),
// zero padding, arbitrary stride and dilation. The effective kernel extent
// is (k-1)*dilation + 1.
template <typename T>
struct Conv2dLayerT {
    TensorT<T> weight;                // [out_ch, in_ch, kh, kw]
    std::optional<TensorT<T>> bias;   // [out_ch]
    int stride = 1;
    int dilation = 1;
    int padding = 0;
};

template <typename T>
struct BatchNormLayerT {
    TensorT<T> gamma, beta;                  // [ch], learned
    TensorT<T> running_mean, running_var;    // [ch], EMA of batch statistics
    T momentum = T(0.1);
    T eps = T(1e-5);
};

using Conv2dLayer = Conv2dLayerT<float>;
using BatchNormLayer = BatchNormLayerT<float>;

// floor((in + 2*padding - ((k-1)*dilation + 1)) / stride) + 1; throws
// ValueError when the result would not be positive.
std::pair<int, int> conv2d_output_hw(int in_h, int in_w, int kh, int kw, int stride, int dilation,
                                     int padding);

// x: [N,C,H,W] -> [N,O,H',W']. Lowered to a matrix product over gathered
// patches; the backward rule produces gradients for input, weight and bias.
template <typename T>
TensorT<T> conv2d_forward(TapeT<T>& tape, const TensorT<T>& x, const Conv2dLayerT<T>& layer);

// Train mode normalizes by batch statistics over (N,H,W) per channel and
// updates the layer's running statistics in place (EMA with `momentum`).
// Eval mode is a pure function of x and the running statistics.
// A train-mode batch with N*H*W == 1 has no usable variance and throws.
template <typename T>
TensorT<T> batchnorm_forward(TapeT<T>& tape, const TensorT<T>& x, BatchNormLayerT<T>& layer,
                             Mode mode);

// Bilinear interpolation by an integer factor, align-corners=false: output
// pixel i samples source coordinate (i+0.5)/factor - 0.5, edge-clamped.
template <typename T>
TensorT<T> bilinear_upsample(TapeT<T>& tape, const TensorT<T>& x, int factor);

// Per-channel spatial mean: [N,C,H,W] -> [N,C,1,1].
template <typename T>
TensorT<T> global_avg_pool(TapeT<T>& tape, const TensorT<T>& x);

extern template TensorT<float> conv2d_forward<float>(TapeT<float>&, const TensorT<float>&,
                                                     const Conv2dLayerT<float>&);
extern template TensorT<double> conv2d_forward<double>(TapeT<double>&, const TensorT<double>&,
                                                       const Conv2dLayerT<double>&);
extern template TensorT<float> batchnorm_forward<float>(TapeT<float>&, const TensorT<float>&,
                                                        BatchNormLayerT<float>&, Mode);
extern template TensorT<double> batchnorm_forward<double>(TapeT<double>&, const TensorT<double>&,
                                                          BatchNormLayerT<double>&, Mode);
extern template TensorT<float> bilinear_upsample<float>(TapeT<float>&, const TensorT<float>&, int);
extern template TensorT<double> bilinear_upsample<double>(TapeT<double>&, const TensorT<double>&,
                                                          int);
extern template TensorT<float> global_avg_pool<float>(TapeT<float>&, const TensorT<float>&);
extern template TensorT<double> global_avg_pool<double>(TapeT<double>&, const TensorT<double>&);

}  // namespace rescuenet
