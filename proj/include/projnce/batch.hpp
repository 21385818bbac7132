#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "projnce/errors.hpp"
#include "projnce/numerics.hpp"

namespace projnce {

/// Mini-batch of unit-sphere embeddings, their class labels and the critic
/// temperature.
struct EmbeddingBatch {
  Mat z;
  std::vector<int> labels;
  double temperature = 0.07;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return z.cols(); }

  int num_classes() const {
    int mx = -1;
    for (int l : labels) mx = std::max(mx, l);
    return mx + 1;
  }

  void validate(double norm_tol = 1e-10) const {
    if (z.rows() != labels.size()) throw DimensionError("batch: embedding/label count mismatch");
    if (labels.size() < 2) throw DimensionError("batch: needs at least 2 samples");
    if (!(temperature > 0.0)) throw DomainError("batch: temperature must be positive");
    for (int l : labels) {
      if (l < 0) throw DimensionError("batch: negative label");
    }
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const double n = norm2(z.row(i));
      if (!std::isfinite(n) || std::abs(n - 1.0) > norm_tol) {
        throw DomainError("batch: row " + std::to_string(i) + " is not on the unit sphere");
      }
    }
  }
};

}  // namespace projnce
