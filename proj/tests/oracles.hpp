// Loop-based reference implementations used only by the tests. They share no
// code with the library beyond plain Eigen storage.
#pragma once

#include "mosaic/correspondence.hpp"
#include "mosaic/random.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using mosaic::Index;
using mosaic::Matrix;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

inline Matrix softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    double m = x(i, 0);
    for (Index j = 1; j < x.cols(); ++j) m = std::max(m, x(i, j));
    double z = 0.0;
    for (Index j = 0; j < x.cols(); ++j) z += std::exp(x(i, j) - m);
    for (Index j = 0; j < x.cols(); ++j) y(i, j) = std::exp(x(i, j) - m) / z;
  }
  return y;
}

inline double safe_log(double p) { return std::log(std::max(p, 1e-12)); }

/// Offset of slot k (1-based) in the concatenated reference stream.
inline Index offset(const std::vector<Index>& counts, int slot) {
  Index o = 0;
  for (int k = 1; k < slot; ++k) o += counts[static_cast<std::size_t>(k - 1)];
  return o;
}

inline std::vector<int> effective(const mosaic::SampleAnnotation& ann) {
  std::vector<int> out;
  for (std::size_t k = 0; k < ann.sets.size(); ++k) {
    if (ann.valid_mask[k] && !ann.sets[k].pairs.empty()) out.push_back(static_cast<int>(k) + 1);
  }
  return out;
}

inline double sca(const Matrix& attn, const mosaic::SampleAnnotation& ann) {
  const auto slots = effective(ann);
  std::vector<Index> counts;
  for (const auto& g : ann.ref_grids) counts.push_back(g.rows * g.cols);
  double outer = 0.0;
  for (int k : slots) {
    const auto& pairs = ann.sets[static_cast<std::size_t>(k - 1)].pairs;
    double inner = 0.0;
    for (const auto& p : pairs) inner += safe_log(attn(offset(counts, k) + p.u, p.v));
    outer += inner / static_cast<double>(pairs.size());
  }
  return -outer / static_cast<double>(slots.size());
}

inline std::vector<double> aggregate(const Matrix& attn, const mosaic::SampleAnnotation& ann, int slot) {
  std::vector<Index> counts;
  for (const auto& g : ann.ref_grids) counts.push_back(g.rows * g.cols);
  const auto& pairs = ann.sets[static_cast<std::size_t>(slot - 1)].pairs;
  std::vector<double> a(static_cast<std::size_t>(attn.cols()), 0.0);
  for (const auto& p : pairs) {
    for (Index j = 0; j < attn.cols(); ++j) a[static_cast<std::size_t>(j)] += attn(offset(counts, slot) + p.u, j);
  }
  double total = 0.0;
  for (auto& x : a) {
    x /= static_cast<double>(pairs.size());
    total += x;
  }
  for (auto& x : a) x /= total;
  return a;
}

inline double sym_kl(const std::vector<double>& a, const std::vector<double>& b) {
  double kl_ab = 0.0, kl_ba = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    kl_ab += a[i] * (safe_log(a[i]) - safe_log(b[i]));
    kl_ba += b[i] * (safe_log(b[i]) - safe_log(a[i]));
  }
  return 0.5 * (kl_ab + kl_ba);
}

inline double md(const std::vector<std::vector<double>>& aggs) {
  const double k = static_cast<double>(aggs.size());
  if (aggs.size() < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < aggs.size(); ++i) {
    for (std::size_t j = 0; j < aggs.size(); ++j) {
      if (i != j) s += sym_kl(aggs[i], aggs[j]);
    }
  }
  return -s / (k * (k - 1.0));
}

inline double mse(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) s += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  }
  return s / static_cast<double>(a.size());
}

/// Row-stochastic matrix with strictly positive entries.
inline Matrix random_stochastic(Index rows, Index cols, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    double s = 0.0;
    for (Index j = 0; j < cols; ++j) s += (m(i, j) = u(gen));
    for (Index j = 0; j < cols; ++j) m(i, j) /= s;
  }
  return m;
}

/// Random disjoint annotation with some padded slots, built without the
/// synthetic data generator.
inline mosaic::SampleAnnotation random_annotation(std::mt19937_64& gen, int max_k, Index max_tgt, Index max_p) {
  std::uniform_int_distribution<int> kd(1, max_k);
  const int k = kd(gen);
  std::uniform_int_distribution<Index> side(2, 6);
  mosaic::SampleAnnotation ann;
  for (;;) {
    const Index h = side(gen), w = side(gen);
    if (h * w <= max_tgt && h * w >= k) {
      ann.target_grid = {h, w};
      break;
    }
  }
  const Index n_tgt = ann.target_grid.rows * ann.target_grid.cols;
  std::vector<Index> free(static_cast<std::size_t>(n_tgt));
  for (Index i = 0; i < n_tgt; ++i) free[static_cast<std::size_t>(i)] = i;
  std::shuffle(free.begin(), free.end(), gen);
  std::size_t next = 0;
  std::bernoulli_distribution pad(0.2);
  for (int s = 1; s <= k; ++s) {
    mosaic::GridSize g{side(gen), side(gen)};
    ann.ref_grids.push_back(g);
    const bool valid = s == 1 || !pad(gen);
    ann.valid_mask.push_back(valid);
    mosaic::CorrespondenceSet set;
    set.slot = s;
    if (valid) {
      const Index left = static_cast<Index>(free.size() - next) - (k - s);
      const Index cap = std::min({max_p, g.rows * g.cols, left});
      std::uniform_int_distribution<Index> pd(1, cap);
      const Index p = pd(gen);
      std::vector<Index> us(static_cast<std::size_t>(g.rows * g.cols));
      for (Index i = 0; i < g.rows * g.cols; ++i) us[static_cast<std::size_t>(i)] = i;
      std::shuffle(us.begin(), us.end(), gen);
      for (Index j = 0; j < p; ++j) set.pairs.push_back({us[static_cast<std::size_t>(j)], free[next++]});
    }
    ann.sets.push_back(set);
  }
  return ann;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("mosaic_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace oracle
