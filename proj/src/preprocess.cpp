#include <algorithm>
#include <cmath>
#include <limits>

#include "m4/data.hpp"
#include "m4/errors.hpp"
#include "m4/random.hpp"

namespace m4 {

void FeatureScaler::fit(std::span<const double> features, std::size_t cols) {
  if (cols == 0 || features.size() % cols != 0) {
    throw ShapeError("feature matrix size is not a multiple of its column count");
  }
  lo_.assign(cols, std::numeric_limits<double>::infinity());
  hi_.assign(cols, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < features.size(); ++i) {
    const std::size_t c = i % cols;
    if (!std::isfinite(features[i])) throw NumericError("cannot normalize non-finite features");
    lo_[c] = std::min(lo_[c], features[i]);
    hi_[c] = std::max(hi_[c], features[i]);
  }
}

FeatureScaler FeatureScaler::from_bounds(std::vector<double> lower, std::vector<double> upper) {
  if (lower.size() != upper.size() || lower.empty()) {
    throw ShapeError("scaler bounds must be two equal, non-empty vectors");
  }
  for (std::size_t c = 0; c < lower.size(); ++c) {
    if (!(lower[c] <= upper[c])) throw ConfigError("scaler lower bound exceeds upper bound");
  }
  FeatureScaler s;
  s.lo_ = std::move(lower);
  s.hi_ = std::move(upper);
  return s;
}

void FeatureScaler::fit(const std::vector<Bag>& bags) {
  if (bags.empty()) throw ConfigError("cannot fit a scaler on zero bags");
  const std::size_t cols = bags.front().d;
  std::vector<double> all;
  for (const auto& b : bags) {
    if (b.d != cols) throw ShapeError("bags in one dataset must share a feature width");
    all.insert(all.end(), b.features.begin(), b.features.end());
  }
  fit(all, cols);
}

void FeatureScaler::transform(std::span<double> features) const {
  const std::size_t cols = lo_.size();
  if (cols == 0) throw ConfigError("scaler used before fit");
  if (features.size() % cols != 0) throw ShapeError("feature width does not match the fitted scaler");
  for (std::size_t i = 0; i < features.size(); ++i) {
    const std::size_t c = i % cols;
    const double range = hi_[c] - lo_[c];
    if (range == 0.0) {
      features[i] = 0.0;
    } else {
      const double v = 2.0 * (features[i] - lo_[c]) / range - 1.0;
      features[i] = std::clamp(v, -1.0, 1.0);
    }
  }
}

void FeatureScaler::transform(std::vector<Bag>& bags) const {
  for (auto& b : bags) transform(b.features);
}

std::vector<double> normalize_features(std::span<const double> features, std::size_t cols) {
  FeatureScaler scaler;
  scaler.fit(features, cols);
  std::vector<double> out(features.begin(), features.end());
  scaler.transform(out);
  return out;
}

void normalize_bags(std::vector<Bag>& bags) {
  FeatureScaler scaler;
  scaler.fit(bags);
  scaler.transform(bags);
}

TrainTestSplit split_train_test(const std::vector<std::string>& ids, std::uint64_t seed,
                                std::size_t train_parts, std::size_t test_parts) {
  if (train_parts == 0 || test_parts == 0) throw ConfigError("split ratio parts must be positive");
  const std::size_t total = train_parts + test_parts;
  const std::size_t n_test = (ids.size() * test_parts + total / 2) / total;
  if (n_test == 0 || n_test >= ids.size()) {
    throw ConfigError("too few ids (" + std::to_string(ids.size()) + ") for a " +
                      std::to_string(train_parts) + ":" + std::to_string(test_parts) + " split");
  }
  std::vector<std::string> shuffled = ids;
  Rng rng(derive_seed(seed, 0x5151));
  std::shuffle(shuffled.begin(), shuffled.end(), rng.engine());
  TrainTestSplit split;
  const auto cut = static_cast<std::ptrdiff_t>(ids.size() - n_test);
  split.train.assign(shuffled.begin(), shuffled.begin() + cut);
  split.test.assign(shuffled.begin() + cut, shuffled.end());
  return split;
}

std::vector<std::vector<std::string>> kfold(const std::vector<std::string>& ids, std::size_t k,
                                            std::uint64_t seed) {
  if (k == 0) throw ConfigError("k-fold needs k >= 1");
  if (ids.size() < k) {
    throw ConfigError("too few ids (" + std::to_string(ids.size()) + ") for " + std::to_string(k) +
                      " folds");
  }
  std::vector<std::string> shuffled = ids;
  Rng rng(derive_seed(seed, 0xf01d));
  std::shuffle(shuffled.begin(), shuffled.end(), rng.engine());
  std::vector<std::vector<std::string>> folds(k);
  const std::size_t base = ids.size() / k, extra = ids.size() % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    folds[f].assign(shuffled.begin() + static_cast<std::ptrdiff_t>(pos),
                    shuffled.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return folds;
}

}  // namespace m4
