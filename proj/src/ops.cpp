#include "m4/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "m4/errors.hpp"

namespace m4::ad {

namespace {

struct AxisView {
  std::size_t outer;
  std::size_t length;
  std::size_t inner;
};

AxisView view_along(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisView v{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

void require_matrix(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a matrix, got " + shape_str(x.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      if (aik == 0.0) continue;
      const double* brow = bv.data() + kk * p;
      for (std::size_t j = 0; j < p; ++j) row[j] += aik * brow[j];
    }
  }
  return tape.emit({m, p}, std::move(out), {a, b},
                   [a, b, m, k, p](std::span<const double> g) mutable {
                     auto av = a.values();
                     auto bv = b.values();
                     if (a.requires_grad()) {
                       auto ga = a.grad_buffer();
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* grow = g.data() + i * p;
                         for (std::size_t kk = 0; kk < k; ++kk) {
                           const double* brow = bv.data() + kk * p;
                           double acc = 0.0;
                           for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
                           ga[i * k + kk] += acc;
                         }
                       }
                     }
                     if (b.requires_grad()) {
                       auto gb = b.grad_buffer();
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* grow = g.data() + i * p;
                         for (std::size_t kk = 0; kk < k; ++kk) {
                           const double aik = av[i * k + kk];
                           if (aik == 0.0) continue;
                           double* gbrow = gb.data() + kk * p;
                           for (std::size_t j = 0; j < p; ++j) gbrow[j] += aik * grow[j];
                         }
                       }
                     }
                   });
}

Tensor transpose(Tape& tape, const Tensor& x) {
  require_matrix(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  auto xv = x.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return tape.emit({c, r}, std::move(out), {x}, [x, r, c](std::span<const double> g) mutable {
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.emit(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto gt = t->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape.emit(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
    auto av = a.values();
    auto bv = b.values();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return tape.emit(x.shape(), std::move(out), {x}, [x, factor](std::span<const double> g) mutable {
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  if (bias.rank() != 2 || bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " +
                     shape_str(x.shape()));
  }
  const std::size_t m = x.rows(), p = x.cols();
  auto xv = x.values();
  auto bv = bias.values();
  std::vector<double> out(m * p);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) out[i * p + j] = xv[i * p + j] + bv[j];
  return tape.emit(x.shape(), std::move(out), {x, bias},
                   [x, bias, m, p](std::span<const double> g) mutable {
                     if (x.requires_grad()) {
                       auto gx = x.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     }
                     if (bias.requires_grad()) {
                       auto gb = bias.grad_buffer();
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < p; ++j) gb[j] += g[i * p + j];
                     }
                   });
}

Tensor activation(Tape& tape, const Tensor& x, Activation kind) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  switch (kind) {
    case Activation::Relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
      break;
    case Activation::Tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(xv[i]);
      break;
  }
  // The backward pass reads the saved output, so keep a copy alongside x.
  std::vector<double> saved = kind == Activation::Relu ? std::vector<double>{} : out;
  return tape.emit(x.shape(), std::move(out), {x},
                   [x, kind, saved = std::move(saved)](std::span<const double> g) mutable {
                     auto gx = x.grad_buffer();
                     auto xv = x.values();
                     switch (kind) {
                       case Activation::Relu:
                         for (std::size_t i = 0; i < g.size(); ++i)
                           if (xv[i] > 0.0) gx[i] += g[i];
                         break;
                       case Activation::Tanh:
                         for (std::size_t i = 0; i < g.size(); ++i)
                           gx[i] += g[i] * (1.0 - saved[i] * saved[i]);
                         break;
                       case Activation::Sigmoid:
                         for (std::size_t i = 0; i < g.size(); ++i)
                           gx[i] += g[i] * saved[i] * (1.0 - saved[i]);
                         break;
                     }
                   });
}

Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  const auto v = view_along(x.shape(), axis);
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.length * v.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < v.length; ++l) mx = std::max(mx, xv[base + l * v.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < v.length; ++l) {
        double e = std::exp(xv[base + l * v.inner] - mx);
        out[base + l * v.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < v.length; ++l) out[base + l * v.inner] /= total;
    }
  }
  std::vector<double> saved = out;
  return tape.emit(x.shape(), std::move(out), {x},
                   [x, v, saved = std::move(saved)](std::span<const double> g) mutable {
                     auto gx = x.grad_buffer();
                     for (std::size_t o = 0; o < v.outer; ++o) {
                       for (std::size_t in = 0; in < v.inner; ++in) {
                         const std::size_t base = o * v.length * v.inner + in;
                         double dot = 0.0;
                         for (std::size_t l = 0; l < v.length; ++l) {
                           const std::size_t i = base + l * v.inner;
                           dot += g[i] * saved[i];
                         }
                         for (std::size_t l = 0; l < v.length; ++l) {
                           const std::size_t i = base + l * v.inner;
                           gx[i] += saved[i] * (g[i] - dot);
                         }
                       }
                     }
                   });
}

Tensor sum(Tape& tape, const Tensor& x) {
  auto xv = x.values();
  double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  return tape.emit({1}, {total}, {x}, [x](std::span<const double> g) mutable {
    auto gx = x.grad_buffer();
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean_rows(Tape& tape, const Tensor& x) {
  require_matrix(x, "mean_rows");
  const std::size_t n = x.rows(), d = x.cols();
  if (n == 0) throw EmptyBagError("mean_rows on an empty bag");
  auto xv = x.values();
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += xv[i * d + j];
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : out) v *= inv;
  return tape.emit({1, d}, std::move(out), {x}, [x, n, d, inv](std::span<const double> g) mutable {
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j] * inv;
  });
}

Tensor max_rows(Tape& tape, const Tensor& x) {
  require_matrix(x, "max_rows");
  const std::size_t n = x.rows(), d = x.cols();
  if (n == 0) throw EmptyBagError("max_rows on an empty bag");
  auto xv = x.values();
  std::vector<double> out(xv.begin(), xv.begin() + static_cast<std::ptrdiff_t>(d));
  std::vector<std::size_t> argmax(d, 0);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (xv[i * d + j] > out[j]) {
        out[j] = xv[i * d + j];
        argmax[j] = i;
      }
    }
  }
  return tape.emit({1, d}, std::move(out), {x},
                   [x, d, argmax = std::move(argmax)](std::span<const double> g) mutable {
                     auto gx = x.grad_buffer();
                     for (std::size_t j = 0; j < d; ++j) gx[argmax[j] * d + j] += g[j];
                   });
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  auto xv = x.values();
  return tape.emit(std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                   [x](std::span<const double> g) mutable {
                     auto gx = x.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                   });
}

Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t begin, std::size_t length) {
  const auto v = view_along(x.shape(), axis);
  if (length == 0 || begin + length > v.length) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                     ") out of range for axis of size " + std::to_string(v.length));
  }
  auto xv = x.values();
  std::vector<double> out(v.outer * length * v.inner);
  const std::size_t chunk = length * v.inner;
  for (std::size_t o = 0; o < v.outer; ++o) {
    const double* src = xv.data() + o * v.length * v.inner + begin * v.inner;
    std::copy(src, src + chunk, out.data() + o * chunk);
  }
  Shape shape = x.shape();
  shape[axis] = length;
  return tape.emit(std::move(shape), std::move(out), {x},
                   [x, v, begin, chunk](std::span<const double> g) mutable {
                     auto gx = x.grad_buffer();
                     for (std::size_t o = 0; o < v.outer; ++o) {
                       double* dst = gx.data() + o * v.length * v.inner + begin * v.inner;
                       const double* src = g.data() + o * chunk;
                       for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                     }
                   });
}

Tensor concat(Tape& tape, std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range for " + shape_str(first));
  Shape shape = first;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(first) +
                       " along axis " + std::to_string(axis));
    }
    total += s[axis];
  }
  shape[axis] = total;
  const auto ov = view_along(shape, axis);
  std::vector<double> out(shape_size(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.dim(axis) * ov.inner;
    auto pv = p.values();
    for (std::size_t o = 0; o < ov.outer; ++o) {
      std::copy(pv.data() + o * chunk, pv.data() + (o + 1) * chunk,
                out.data() + o * total * ov.inner + offset * ov.inner);
    }
    offset += p.dim(axis);
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  auto captured = inputs;
  return tape.emit(std::move(shape), std::move(out), std::move(inputs),
                   [parts = std::move(captured), offsets = std::move(offsets), ov, total,
                    axis](std::span<const double> g) mutable {
                     for (std::size_t k = 0; k < parts.size(); ++k) {
                       if (!parts[k].requires_grad()) continue;
                       auto gp = parts[k].grad_buffer();
                       const std::size_t chunk = parts[k].dim(axis) * ov.inner;
                       for (std::size_t o = 0; o < ov.outer; ++o) {
                         const double* src = g.data() + o * total * ov.inner + offsets[k] * ov.inner;
                         double* dst = gp.data() + o * chunk;
                         for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                       }
                     }
                   });
}

Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> index) {
  const std::size_t n = x.dim(0);
  const std::size_t width = x.size() / n;
  if (index.empty()) throw ShapeError("gather_rows with an empty index");
  auto xv = x.values();
  std::vector<double> out(index.size() * width);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n) throw ShapeError("gather_rows index out of range");
    std::copy(xv.data() + index[r] * width, xv.data() + (index[r] + 1) * width,
              out.data() + r * width);
  }
  Shape shape = x.shape();
  shape[0] = index.size();
  return tape.emit(std::move(shape), std::move(out), {x},
                   [x, width, idx = std::vector<std::size_t>(index.begin(), index.end())](
                       std::span<const double> g) mutable {
                     auto gx = x.grad_buffer();
                     for (std::size_t r = 0; r < idx.size(); ++r) {
                       double* dst = gx.data() + idx[r] * width;
                       const double* src = g.data() + r * width;
                       for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
                     }
                   });
}

std::vector<Tensor> split_channels(Tape& tape, const Tensor& x, std::size_t parts) {
  const std::size_t axis = x.rank() - 1;
  const std::size_t channels = x.dim(axis);
  if (parts == 0 || channels % parts != 0) {
    throw ConfigError("cannot split " + std::to_string(channels) + " channels into " +
                      std::to_string(parts) + " equal parts");
  }
  const std::size_t width = channels / parts;
  std::vector<Tensor> out;
  out.reserve(parts);
  for (std::size_t p = 0; p < parts; ++p) out.push_back(slice(tape, x, axis, p * width, width));
  return out;
}

Tensor concat_channels(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels of zero tensors");
  return concat(tape, parts, parts[0].rank() - 1);
}

std::size_t grid_side(std::size_t n) {
  auto s = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (s * s < n) ++s;
  while (s > 0 && (s - 1) * (s - 1) >= n) --s;
  return s;
}

GridLayout grid_restore(Tape& tape, const Tensor& tokens) {
  require_matrix(tokens, "grid_restore");
  const std::size_t n = tokens.rows();
  if (n == 0) throw EmptyBagError("grid_restore on an empty bag");
  const std::size_t side = grid_side(n);
  const std::size_t pad = side * side - n;
  std::vector<std::size_t> index(side * side);
  std::iota(index.begin(), index.begin() + static_cast<std::ptrdiff_t>(n), std::size_t{0});
  for (std::size_t j = 0; j < pad; ++j) index[n + j] = j % n;
  Tensor rows = gather_rows(tape, tokens, index);
  return {reshape(tape, rows, {side, side, tokens.cols()}), pad};
}

Tensor grid_flatten(Tape& tape, const Tensor& grid, std::size_t original_n) {
  if (grid.rank() != 3 || grid.dim(0) != grid.dim(1)) {
    throw ShapeError("grid_flatten expects a square side×side×c grid, got " +
                     shape_str(grid.shape()));
  }
  const std::size_t cells = grid.dim(0) * grid.dim(1);
  if (original_n == 0) throw EmptyBagError("grid_flatten with zero tokens");
  if (original_n > cells) throw ShapeError("grid_flatten: more tokens than grid cells");
  Tensor flat = reshape(tape, grid, {cells, grid.dim(2)});
  if (original_n == cells) return flat;
  return slice(tape, flat, 0, 0, original_n);
}

std::size_t conv_output_side(std::size_t side, std::size_t k, ConvGeometry geom) {
  auto describe = [&] {
    return "S=" + std::to_string(side) + ", k=" + std::to_string(k) +
           ", pad=" + std::to_string(geom.pad) + ", stride=" + std::to_string(geom.stride);
  };
  if (k % 2 == 0) throw ShapeError("convolution kernel size must be odd (" + describe() + ")");
  if (geom.stride == 0) throw ShapeError("convolution stride must be >= 1 (" + describe() + ")");
  const std::size_t padded = side + 2 * geom.pad;
  if (padded < k) throw ShapeError("convolution output size < 1 (" + describe() + ")");
  return (padded - k) / geom.stride + 1;
}

Tensor depthwise_conv2d(Tape& tape, const Tensor& x, const Tensor& kernels, ConvGeometry geom) {
  if (x.rank() != 3 || x.dim(0) != x.dim(1)) {
    throw ShapeError("depthwise_conv2d expects an S×S×c input, got " + shape_str(x.shape()));
  }
  if (kernels.rank() != 3 || kernels.dim(0) != kernels.dim(1) || kernels.dim(2) != x.dim(2)) {
    throw ShapeError("depthwise kernels " + shape_str(kernels.shape()) + " do not fit input " +
                     shape_str(x.shape()));
  }
  const std::size_t side = x.dim(0), c = x.dim(2), k = kernels.dim(0);
  const std::size_t out_side = conv_output_side(side, k, geom);
  const auto pad = static_cast<std::ptrdiff_t>(geom.pad);
  const auto stride = geom.stride;
  auto xv = x.values();
  auto kv = kernels.values();
  std::vector<double> out(out_side * out_side * c, 0.0);

  // Visits every (output cell, kernel tap) pair whose input lies inside the
  // grid; zero padding contributes nothing.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t orow = 0; orow < out_side; ++orow) {
      for (std::size_t ocol = 0; ocol < out_side; ++ocol) {
        for (std::size_t u = 0; u < k; ++u) {
          const auto irow = static_cast<std::ptrdiff_t>(orow * stride + u) - pad;
          if (irow < 0 || irow >= static_cast<std::ptrdiff_t>(side)) continue;
          for (std::size_t w = 0; w < k; ++w) {
            const auto icol = static_cast<std::ptrdiff_t>(ocol * stride + w) - pad;
            if (icol < 0 || icol >= static_cast<std::ptrdiff_t>(side)) continue;
            fn((orow * out_side + ocol) * c, (static_cast<std::size_t>(irow) * side +
                                              static_cast<std::size_t>(icol)) * c,
               (u * k + w) * c);
          }
        }
      }
    }
  };

  for_each_tap([&](std::size_t o, std::size_t i, std::size_t t) {
    for (std::size_t ch = 0; ch < c; ++ch) out[o + ch] += kv[t + ch] * xv[i + ch];
  });

  return tape.emit({out_side, out_side, c}, std::move(out), {x, kernels},
                   [x, kernels, c, for_each_tap](std::span<const double> g) mutable {
                     auto xv = x.values();
                     auto kv = kernels.values();
                     const bool want_x = x.requires_grad();
                     const bool want_k = kernels.requires_grad();
                     std::span<double> gx = want_x ? x.grad_buffer() : std::span<double>{};
                     std::span<double> gk = want_k ? kernels.grad_buffer() : std::span<double>{};
                     for_each_tap([&](std::size_t o, std::size_t i, std::size_t t) {
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         if (want_x) gx[i + ch] += g[o + ch] * kv[t + ch];
                         if (want_k) gk[t + ch] += g[o + ch] * xv[i + ch];
                       }
                     });
                   });
}

Tensor depthwise_separable_conv2d(Tape& tape, const Tensor& x, const Tensor& depth_kernels,
                                  const Tensor& point_weights, ConvGeometry geom) {
  const std::size_t c = x.rank() == 3 ? x.dim(2) : 0;
  if (point_weights.rank() != 2 || point_weights.rows() != c) {
    throw ShapeError("pointwise weights " + shape_str(point_weights.shape()) +
                     " do not fit input " + shape_str(x.shape()));
  }
  Tensor spatial = depthwise_conv2d(tape, x, depth_kernels, geom);
  const std::size_t side = spatial.dim(0);
  Tensor flat = reshape(tape, spatial, {side * side, c});
  Tensor mixed = matmul(tape, flat, point_weights);
  return reshape(tape, mixed, {side, side, point_weights.cols()});
}

Tensor upsample_nearest(Tape& tape, const Tensor& x, std::size_t side) {
  if (x.rank() != 3 || x.dim(0) != x.dim(1)) {
    throw ShapeError("upsample_nearest expects an s×s×c grid, got " + shape_str(x.shape()));
  }
  if (side == 0) throw ShapeError("upsample_nearest to an empty grid");
  const std::size_t src = x.dim(0), c = x.dim(2);
  if (src == side) return x;
  std::vector<std::size_t> index(side * side);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t q = 0; q < side; ++q) {
      index[r * side + q] = (r * src / side) * src + (q * src / side);
    }
  }
  Tensor rows = gather_rows(tape, reshape(tape, x, {src * src, c}), index);
  return reshape(tape, rows, {side, side, c});
}

Tensor bce_with_logits(Tape& tape, const Tensor& logits, std::span<const double> labels,
                       std::span<const double> weights) {
  const std::size_t n = logits.size();
  if (labels.size() != n || weights.size() != n) {
    throw ShapeError("bce_with_logits: " + std::to_string(n) + " logits but " +
                     std::to_string(labels.size()) + " labels and " +
                     std::to_string(weights.size()) + " weights");
  }
  auto z = logits.values();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == 0.0) continue;
    const double term = std::max(z[i], 0.0) - z[i] * labels[i] + std::log1p(std::exp(-std::abs(z[i])));
    total += weights[i] * term;
  }
  return tape.emit({1}, {total}, {logits},
                   [logits, y = std::vector<double>(labels.begin(), labels.end()),
                    w = std::vector<double>(weights.begin(), weights.end())](
                       std::span<const double> g) mutable {
                     auto z = logits.values();
                     auto gz = logits.grad_buffer();
                     for (std::size_t i = 0; i < z.size(); ++i) {
                       gz[i] += g[0] * w[i] * (stable_sigmoid(z[i]) - y[i]);
                     }
                   });
}

}  // namespace m4::ad
