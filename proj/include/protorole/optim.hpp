#pragma once

// Projected-gradient building blocks: AdaGrad steps and the Euclidean
// projections used to keep parameters feasible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "protorole/errors.hpp"

namespace protorole {

/// Diagonal AdaGrad. Each coordinate moves by lr * g / (sqrt(G) + eps),
/// where G accumulates squared gradients.
class AdaGrad {
 public:
  AdaGrad(std::size_t dim, double learning_rate, double eps = 1e-8)
      : accum_(dim, 0.0), lr_(learning_rate), eps_(eps) {}

  void descend(std::span<double> x, std::span<const double> grad) { step(x, grad, -1.0); }
  void ascend(std::span<double> x, std::span<const double> grad) { step(x, grad, 1.0); }

  double learning_rate() const { return lr_; }

 private:
  void step(std::span<double> x, std::span<const double> grad, double sign) {
    if (x.size() != accum_.size() || grad.size() != accum_.size())
      throw ContractViolation("AdaGrad: dimension mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
      accum_[i] += grad[i] * grad[i];
      x[i] += sign * lr_ * grad[i] / (std::sqrt(accum_[i]) + eps_);
    }
  }

  std::vector<double> accum_;
  double lr_;
  double eps_;
};

/// Euclidean projection onto the probability simplex (sort and threshold).
inline std::vector<double> project_simplex(std::span<const double> x) {
  if (x.empty()) throw ContractViolation("project_simplex: empty vector");
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumsum += sorted[k];
    const double t = (cumsum - 1.0) / static_cast<double>(k + 1);
    if (sorted[k] - t > 0.0) theta = t;
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::max(x[i] - theta, 0.0);
  return out;
}

inline void project_simplex_inplace(std::span<double> x) {
  auto p = project_simplex(x);
  std::copy(p.begin(), p.end(), x.begin());
}

/// Least-squares projection onto nondecreasing sequences via
/// pool-adjacent-violators.
inline std::vector<double> isotonic_projection(std::span<const double> y) {
  struct Block {
    double sum;
    std::size_t count;
    double mean() const { return sum / static_cast<double>(count); }
  };
  std::vector<Block> blocks;
  blocks.reserve(y.size());
  for (double v : y) {
    blocks.push_back({v, 1});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].mean() > blocks.back().mean()) {
      auto last = blocks.back();
      blocks.pop_back();
      blocks.back().sum += last.sum;
      blocks.back().count += last.count;
    }
  }
  std::vector<double> out;
  out.reserve(y.size());
  for (const auto& b : blocks) out.insert(out.end(), b.count, b.mean());
  return out;
}

inline double clamp_open_unit(double x, double eps) { return std::clamp(x, eps, 1.0 - eps); }

}  // namespace protorole
