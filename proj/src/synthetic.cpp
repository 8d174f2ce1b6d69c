#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "m4/data.hpp"
#include "m4/errors.hpp"
#include "m4/ops.hpp"
#include "m4/random.hpp"

namespace m4 {

namespace {

std::string bag_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "bag%05zu", i);
  return buf;
}

std::vector<double> unit(std::vector<double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) throw ConfigError("task loading row produces a zero signal direction");
  for (double& x : v) x /= norm;
  return v;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (tasks == 0) throw ConfigError("synthetic spec needs at least one task");
  if (bags == 0) throw ConfigError("synthetic spec needs at least one bag");
  if (dim == 0) throw ConfigError("synthetic feature width must be >= 1");
  if (min_instances == 0 || min_instances > max_instances) {
    throw ConfigError("synthetic instance range must satisfy 1 <= min <= max");
  }
  if (max_instances > 65535) throw ConfigError("synthetic bags are limited to 65535 instances");
  if (prevalence.size() != tasks) {
    throw ConfigError("expected " + std::to_string(tasks) + " prevalence targets, got " +
                      std::to_string(prevalence.size()));
  }
  for (double p : prevalence) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("prevalence targets must lie in (0, 1)");
  }
  if (latent_dim == 0) throw ConfigError("latent_dim must be >= 1");
  if (task_loadings.size() != tasks * latent_dim) {
    throw ConfigError("task_loadings must hold tasks × latent_dim values");
  }
  if (!(signal_fraction > 0.0 && signal_fraction <= 1.0)) {
    throw ConfigError("signal_fraction must lie in (0, 1]");
  }
  if (signal_strength < 0.0 || noise_sd < 0.0 || label_noise_sd < 0.0) {
    throw ConfigError("signal_strength, noise_sd and label_noise_sd must be non-negative");
  }
}

std::vector<double> SyntheticSpec::correlated_loadings(std::size_t tasks, std::size_t shared,
                                                       double shared_weight) {
  const std::size_t width = shared + tasks;
  std::vector<double> loadings(tasks * width, 0.0);
  for (std::size_t i = 0; i < tasks; ++i) {
    if (shared > 0) loadings[i * width + i % shared] = shared_weight;
    loadings[i * width + shared + i] = 1.0;
  }
  return loadings;
}

std::vector<double> SyntheticSpec::descending_prevalence(std::size_t tasks, double first,
                                                         double last) {
  std::vector<double> out(tasks, first);
  if (tasks == 1) return out;
  for (std::size_t i = 0; i < tasks; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(tasks - 1);
    out[i] = first * std::pow(last / first, t);
  }
  return out;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t n_tasks = spec.tasks, latent = spec.latent_dim, d = spec.dim;

  // Random latent basis in feature space; each task's signal direction is its
  // loading row applied to the basis.
  std::vector<std::vector<double>> basis(latent, std::vector<double>(d));
  for (auto& b : basis) {
    for (auto& x : b) x = rng.normal();
    b = unit(std::move(b));
  }
  std::vector<std::vector<double>> direction(n_tasks, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n_tasks; ++i) {
    for (std::size_t j = 0; j < latent; ++j) {
      const double w = spec.task_loadings[i * latent + j];
      for (std::size_t k = 0; k < d; ++k) direction[i][k] += w * basis[j][k];
    }
    direction[i] = unit(std::move(direction[i]));
  }

  std::vector<double> scores(spec.bags * n_tasks);
  for (std::size_t b = 0; b < spec.bags; ++b) {
    std::vector<double> z(latent);
    for (auto& v : z) v = rng.normal();
    for (std::size_t i = 0; i < n_tasks; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < latent; ++j) s += spec.task_loadings[i * latent + j] * z[j];
      scores[b * n_tasks + i] = s + spec.label_noise_sd * rng.normal();
    }
  }

  SyntheticDataset out;
  out.achieved_prevalence.resize(n_tasks);
  std::vector<std::int8_t> labels(spec.bags * n_tasks, 0);
  for (std::size_t i = 0; i < n_tasks; ++i) {
    const auto positives = static_cast<std::size_t>(
        std::llround(spec.prevalence[i] * static_cast<double>(spec.bags)));
    const double achieved = static_cast<double>(positives) / static_cast<double>(spec.bags);
    if (positives == 0 || positives == spec.bags) {
      std::ostringstream msg;
      msg << "cannot calibrate prevalence " << spec.prevalence[i] << " for task " << i + 1
          << " over " << spec.bags << " bags (achieved rate would be " << achieved << ")";
      throw ConfigError(msg.str());
    }
    // The top `positives` scores are labelled positive.
    std::vector<std::size_t> order(spec.bags);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores[a * n_tasks + i] > scores[b * n_tasks + i];
    });
    for (std::size_t r = 0; r < positives; ++r) labels[order[r] * n_tasks + i] = 1;
    out.achieved_prevalence[i] = achieved;
  }

  for (std::size_t i = 0; i < n_tasks; ++i) out.task_names.push_back("task" + std::to_string(i + 1));

  out.bags.reserve(spec.bags);
  out.signal_mask.reserve(spec.bags);
  for (std::size_t b = 0; b < spec.bags; ++b) {
    Bag bag;
    bag.id = bag_id(b);
    bag.n = spec.min_instances + rng.index(spec.max_instances - spec.min_instances + 1);
    bag.d = d;
    bag.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(b * n_tasks),
                      labels.begin() + static_cast<std::ptrdiff_t>((b + 1) * n_tasks));
    bag.features.resize(bag.n * d);
    for (auto& x : bag.features) x = spec.noise_sd * rng.normal();

    std::vector<std::size_t> order(bag.n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    const auto planted = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(spec.signal_fraction * static_cast<double>(bag.n))));
    std::vector<std::uint8_t> mask(bag.n, 0);
    for (std::size_t r = 0; r < planted; ++r) mask[order[r]] = 1;

    for (std::size_t k = 0; k < bag.n; ++k) {
      if (!mask[k]) continue;
      for (std::size_t i = 0; i < n_tasks; ++i) {
        if (bag.labels[i] != 1) continue;
        for (std::size_t j = 0; j < d; ++j) {
          bag.features[k * d + j] += spec.signal_strength * direction[i][j];
        }
      }
    }
    // Stored as float32 on disk; round now so memory and file agree exactly.
    for (auto& x : bag.features) x = static_cast<double>(static_cast<float>(x));

    const std::size_t side = ad::grid_side(bag.n);
    bag.grid.resize(bag.n);
    for (std::size_t k = 0; k < bag.n; ++k) {
      bag.grid[k] = {static_cast<std::uint16_t>(k / side), static_cast<std::uint16_t>(k % side)};
    }
    out.bags.push_back(std::move(bag));
    out.signal_mask.push_back(std::move(mask));
  }
  return out;
}

Manifest write_dataset(const SyntheticDataset& data, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "bags", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "bags").string() + ": " + ec.message());
  Manifest manifest;
  manifest.task_names = data.task_names;
  for (const auto& bag : data.bags) {
    const std::string rel = "bags/" + bag.id + ".mbg";
    write_bag(bag, out_dir / rel);
    manifest.entries.push_back({bag.id, rel, bag.labels});
  }
  write_manifest(manifest, out_dir / "manifest.csv");

  std::ofstream signal(out_dir / "signal.csv", std::ios::trunc);
  if (!signal) throw IoError("cannot write " + (out_dir / "signal.csv").string());
  signal << "id,signal_instances\n";
  for (std::size_t b = 0; b < data.bags.size(); ++b) {
    signal << data.bags[b].id << ',';
    bool first = true;
    for (std::size_t k = 0; k < data.signal_mask[b].size(); ++k) {
      if (!data.signal_mask[b][k]) continue;
      if (!first) signal << ';';
      signal << k;
      first = false;
    }
    signal << '\n';
  }
  if (!signal) throw IoError("short write to signal.csv");
  return manifest;
}

}  // namespace m4
