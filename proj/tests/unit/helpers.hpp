#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <functional>
#include <vector>

#include "m4/finite_diff.hpp"
#include "m4/mil_layers.hpp"
#include "m4/ops.hpp"
#include "m4/random.hpp"
#include "m4/tensor.hpp"

namespace testing {

using m4::ad::Tape;
using m4::ad::Tensor;

inline Tensor uniform_tensor(m4::ad::Shape shape, m4::Rng& rng, bool requires_grad = true,
                             double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(m4::ad::shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Relative error between backward() and central differences for a scalar
// function of one tensor argument.
inline double grad_error(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x) {
  Tensor leaf = x.clone(true);
  Tape tape;
  tape.backward(f(tape, leaf));
  const Tensor numeric = m4::ad::finite_diff_grad(
      [&](const Tensor& probe) {
        Tape t(Tape::Mode::Inference);
        return f(t, probe).item();
      },
      x);
  return m4::ad::max_relative_error(leaf.grad(), numeric.values());
}

// Σ out ⊙ w for a fixed weight, so every output coordinate matters.
inline Tensor dot(Tape& tape, const Tensor& out, const Tensor& w) {
  return m4::ad::sum(tape, m4::ad::mul(tape, out, w));
}

// Worst relative error over every tensor in `params` for a scalar loss that
// closes over them.
inline double params_grad_error(const m4::ParameterList& params, const std::function<Tensor(Tape&)>& loss) {
  for (const auto& p : params) p.tensor.zero_grad();
  Tape tape;
  tape.backward(loss(tape));
  double worst = 0.0;
  for (const auto& p : params) {
    std::vector<double> analytic(p.tensor.size(), 0.0);
    if (p.tensor.has_grad()) analytic.assign(p.tensor.grad().begin(), p.tensor.grad().end());
    Tensor probe = p.tensor;
    const Tensor numeric = m4::ad::finite_diff_grad_inplace(
        [&] {
          Tape t(Tape::Mode::Inference);
          return loss(t).item();
        },
        probe);
    worst = std::max(worst, m4::ad::max_relative_error(analytic, numeric.values()));
  }
  return worst;
}

inline double row_sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("m4test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
