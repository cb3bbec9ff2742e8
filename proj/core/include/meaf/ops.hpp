#pragma once

#include <span>
#include <string_view>

#include "meaf/tape.hpp"
#include "meaf/tensor.hpp"

// Forward operations of the numeric core. Every op takes an optional tape as
// its last argument; when the tape is non-null and any input requires a
// gradient, the op records its backward closure.

namespace meaf {

enum class ActivationKind { ReLU, Sigmoid, SiLU, Identity };

std::string_view to_string(ActivationKind kind);
ActivationKind parse_activation(std::string_view name);

enum class ElementwiseMode { Add, Mul };
enum class ResizeMode { UpNearest, DownAvg };

/// Numerically stable logistic function.
template <typename T>
T stable_sigmoid(T x);

/// 2-D cross-correlation with zero padding. `bias` may be an undefined tensor.
/// input [N,Cin,H,W], weight [Cout,Cin,kh,kw] -> [N,Cout,H',W'].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding,
                 Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> activation(const Tensor<T>& input, ActivationKind kind, Tape<T>* tape = nullptr);

/// [N,C,H,W] -> [N,2,H,W]: channel 0 is the mean over C, channel 1 the max.
template <typename T>
Tensor<T> channel_stats(const Tensor<T>& input, Tape<T>* tape = nullptr);

/// [N,C,H,W] -> [N,C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input, Tape<T>* tape = nullptr);

/// input [N,Din], weight [Dout,Din], bias [Dout] -> [N,Dout]
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                          Tape<T>* tape = nullptr);

/// Channels of `a` precede channels of `b`.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

/// Channels [begin, end) of a [N,C,H,W] tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, int begin, int end, Tape<T>* tape = nullptr);

/// a (op) b where b has a's shape, or broadcasts as: a single element;
/// [N,1,H,W] over channels; [N,C] over spatial positions.
template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, ElementwiseMode mode, Tape<T>* tape = nullptr);

/// Nearest-neighbour upsampling or block-average downsampling by `factor`.
template <typename T>
Tensor<T> resize_spatial(const Tensor<T>& input, int factor, ResizeMode mode, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> sum(const Tensor<T>& input, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> mean(const Tensor<T>& input, Tape<T>* tape = nullptr);

/// mean(|a - b|) over all elements; shapes must match.
template <typename T>
Tensor<T> mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

/// Σ weights[i] · terms[i] over single-element tensors.
template <typename T>
Tensor<T> weighted_sum(std::span<const Tensor<T>> terms, std::span<const double> weights, Tape<T>* tape = nullptr);

}  // namespace meaf
