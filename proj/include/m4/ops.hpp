#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "m4/tensor.hpp"

// Differentiable primitives. Every op takes the tape it records onto as the
// first argument; on an inference tape nothing is recorded.
namespace m4::ad {

enum class Activation { Relu, Tanh, Sigmoid };

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& x);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);
// x[m×p] + bias[1×p], bias broadcast over rows.
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);

// relu'(0) is taken as 0.
Tensor activation(Tape& tape, const Tensor& x, Activation kind);
inline Tensor relu(Tape& tape, const Tensor& x) { return activation(tape, x, Activation::Relu); }
inline Tensor tanh(Tape& tape, const Tensor& x) { return activation(tape, x, Activation::Tanh); }
inline Tensor sigmoid(Tape& tape, const Tensor& x) { return activation(tape, x, Activation::Sigmoid); }

// Max-subtracted softmax along `axis`.
Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis);

// Sum of all entries, shape [1].
Tensor sum(Tape& tape, const Tensor& x);

// Column-wise mean / max of an N×d matrix, shape 1×d. N = 0 is an
// EmptyBagError. max_rows routes gradient to the first maximal row.
Tensor mean_rows(Tape& tape, const Tensor& x);
Tensor max_rows(Tape& tape, const Tensor& x);

Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t begin, std::size_t length);
Tensor concat(Tape& tape, std::span<const Tensor> parts, std::size_t axis);

// Row i of the result is row index[i] of x (x viewed as rows over its first
// axis). Repeated indices accumulate gradient onto the source row.
Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> index);

// Equal contiguous slices of the last axis; concat_channels is the inverse.
std::vector<Tensor> split_channels(Tape& tape, const Tensor& x, std::size_t parts);
Tensor concat_channels(Tape& tape, std::span<const Tensor> parts);

// ceil(sqrt(n)) in integer arithmetic.
std::size_t grid_side(std::size_t n);

struct GridLayout {
  Tensor grid;            // side × side × d_f
  std::size_t pad_count;  // side² − N duplicated leading tokens
};

// Lays N tokens out row-major on a side×side grid, filling the trailing
// side²−N cells with copies of tokens 0..pad_count−1.
GridLayout grid_restore(Tape& tape, const Tensor& tokens);
// Inverse of grid_restore: row-major cells, trailing padding dropped.
Tensor grid_flatten(Tape& tape, const Tensor& grid, std::size_t original_n);

struct ConvGeometry {
  std::size_t pad = 0;
  std::size_t stride = 1;
};

// floor((side + 2·pad − k)/stride) + 1, or ShapeError when that is < 1.
std::size_t conv_output_side(std::size_t side, std::size_t k, ConvGeometry geom);

// Per-channel zero-padded spatial convolution. x: S×S×c, kernels: k×k×c.
Tensor depthwise_conv2d(Tape& tape, const Tensor& x, const Tensor& kernels, ConvGeometry geom);

// Depthwise stage followed by a 1×1 channel map point[c_in×c_out]; no bias.
Tensor depthwise_separable_conv2d(Tape& tape, const Tensor& x, const Tensor& depth_kernels,
                                  const Tensor& point_weights, ConvGeometry geom);

// Nearest-neighbour resize of an s×s×c grid to side×side×c.
Tensor upsample_nearest(Tape& tape, const Tensor& x, std::size_t side);

// Σ_i weight_i · BCE(label_i, sigmoid(logit_i)), computed from the logits
// as max(z,0) − z·y + log1p(exp(−|z|)). Returns shape [1].
Tensor bce_with_logits(Tape& tape, const Tensor& logits, std::span<const double> labels,
                       std::span<const double> weights);

double stable_sigmoid(double z);

}  // namespace m4::ad
