#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "projnce/binio.hpp"
#include "projnce/errors.hpp"
#include "projnce/numerics.hpp"
#include "projnce/rng.hpp"

namespace projnce {

/// Fully connected network parameters stored in one flat buffer so the
/// optimizer can treat them as a single vector. Layer l holds a weight matrix
/// (out x in, row-major) followed by its bias vector.
class MLPParams {
 public:
  MLPParams() = default;
  explicit MLPParams(std::vector<std::size_t> layer_sizes) : sizes_(std::move(layer_sizes)) {
    if (sizes_.size() < 2) throw ConfigError("MLP needs at least input and output sizes");
    for (std::size_t s : sizes_) {
      if (s == 0) throw ConfigError("MLP layer sizes must be positive");
    }
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      weight_offsets_.push_back(off);
      off += sizes_[l + 1] * sizes_[l];
      bias_offsets_.push_back(off);
      off += sizes_[l + 1];
    }
    values_.assign(off, 0.0);
  }

  const std::vector<std::size_t>& layer_sizes() const noexcept { return sizes_; }
  std::size_t num_layers() const noexcept { return sizes_.empty() ? 0 : sizes_.size() - 1; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }
  std::size_t size() const noexcept { return values_.size(); }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  std::span<double> weights(std::size_t l) {
    return {values_.data() + weight_offsets_[l], sizes_[l + 1] * sizes_[l]};
  }
  std::span<const double> weights(std::size_t l) const {
    return {values_.data() + weight_offsets_[l], sizes_[l + 1] * sizes_[l]};
  }
  std::span<double> biases(std::size_t l) {
    return {values_.data() + bias_offsets_[l], sizes_[l + 1]};
  }
  std::span<const double> biases(std::size_t l) const {
    return {values_.data() + bias_offsets_[l], sizes_[l + 1]};
  }

  bool same_shape(const MLPParams& other) const { return sizes_ == other.sizes_; }

  bool operator==(const MLPParams&) const = default;

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> weight_offsets_;
  std::vector<std::size_t> bias_offsets_;
  std::vector<double> values_;
};

/// He-uniform weights (bound sqrt(6 / fan_in)) and zero biases.
inline MLPParams init_mlp(const std::vector<std::size_t>& layer_sizes, Rng& rng) {
  MLPParams p(layer_sizes);
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer_sizes[l]));
    for (double& w : p.weights(l)) w = rng.uniform(-bound, bound);
  }
  return p;
}

/// Parses "5,16,16,2".
inline std::vector<std::size_t> parse_architecture(const std::string& text) {
  std::vector<std::size_t> sizes;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string tok = text.substr(start, comma == std::string::npos ? std::string::npos
                                                                          : comma - start);
    try {
      std::size_t used = 0;
      const long v = std::stol(tok, &used);
      if (used != tok.size() || v <= 0) throw ConfigError("bad layer size '" + tok + "'");
      sizes.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw ConfigError("bad layer size '" + tok + "' in architecture '" + text + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (sizes.size() < 2) throw ConfigError("architecture needs at least two sizes");
  return sizes;
}

inline std::string format_architecture(const std::vector<std::size_t>& sizes) {
  std::string s;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(sizes[i]);
  }
  return s;
}

/// Everything backward() needs: a copy of the parameters, per-layer inputs and
/// pre-activations, the raw outputs u, their norms and the sphere embeddings z.
struct ForwardTape {
  MLPParams params;
  std::vector<Mat> inputs;           // input to layer l (x for l = 0)
  std::vector<Mat> preactivations;   // affine output of layer l
  Mat raw_output;                    // u
  Vec output_norms;                  // ||u|| per row
  Mat embeddings;                    // z = u / ||u||
};

inline ForwardTape forward(const MLPParams& params, const Mat& x) {
  if (x.cols() != params.input_dim()) {
    throw DimensionError("forward: input has " + std::to_string(x.cols()) +
                         " columns, network expects " + std::to_string(params.input_dim()));
  }
  ForwardTape tape;
  tape.params = params;
  const std::size_t n = x.rows();
  const auto& sizes = params.layer_sizes();
  Mat current = x;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    const auto w = params.weights(l);
    const auto b = params.biases(l);
    Mat pre(n, out);
    for (std::size_t i = 0; i < n; ++i) {
      const auto xi = current.row(i);
      auto pi = pre.row(i);
      for (std::size_t o = 0; o < out; ++o) {
        double s = b[o];
        const double* wo = w.data() + o * in;
        for (std::size_t k = 0; k < in; ++k) s += wo[k] * xi[k];
        pi[o] = s;
      }
    }
    tape.inputs.push_back(std::move(current));
    const bool hidden = l + 1 < params.num_layers();
    if (hidden) {
      current = pre;
      for (double& v : current.data()) v = v > 0.0 ? v : 0.0;
    } else {
      tape.raw_output = pre;
    }
    tape.preactivations.push_back(std::move(pre));
  }
  const std::size_t dz = params.output_dim();
  tape.output_norms.resize(n);
  tape.embeddings = Mat(n, dz);
  for (std::size_t i = 0; i < n; ++i) {
    const double nrm = norm2(tape.raw_output.row(i));
    if (!(nrm > kNormEpsilon)) {
      throw DegenerateNorm("encoder output row " + std::to_string(i) + " has norm " +
                           std::to_string(nrm));
    }
    tape.output_norms[i] = nrm;
    for (std::size_t k = 0; k < dz; ++k) tape.embeddings(i, k) = tape.raw_output(i, k) / nrm;
  }
  return tape;
}

/// Convenience: embeddings only.
inline Mat embed(const MLPParams& params, const Mat& x) { return forward(params, x).embeddings; }

/// Gradient of a scalar loss with respect to every parameter, given dLoss/dZ.
/// The sphere normalization is differentiated exactly: dL/du = (I - z z^T) dL/dz / ||u||.
inline MLPParams backward(const ForwardTape& tape, const Mat& d_embeddings) {
  const MLPParams& params = tape.params;
  const std::size_t n = tape.embeddings.rows();
  const std::size_t dz = tape.embeddings.cols();
  if (d_embeddings.rows() != n || d_embeddings.cols() != dz) {
    throw DimensionError("backward: dLoss/dZ shape does not match embeddings");
  }
  MLPParams grad(params.layer_sizes());
  Mat delta(n, dz);
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = tape.embeddings.row(i);
    const auto g = d_embeddings.row(i);
    const double zg = dot(z, g);
    const double inv = 1.0 / tape.output_norms[i];
    for (std::size_t k = 0; k < dz; ++k) delta(i, k) = (g[k] - z[k] * zg) * inv;
  }
  const auto& sizes = params.layer_sizes();
  for (std::size_t l = params.num_layers(); l-- > 0;) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    const Mat& input = tape.inputs[l];
    auto gw = grad.weights(l);
    auto gb = grad.biases(l);
    for (std::size_t i = 0; i < n; ++i) {
      const auto di = delta.row(i);
      const auto xi = input.row(i);
      for (std::size_t o = 0; o < out; ++o) {
        const double d = di[o];
        if (d == 0.0) continue;
        gb[o] += d;
        double* gwo = gw.data() + o * in;
        for (std::size_t k = 0; k < in; ++k) gwo[k] += d * xi[k];
      }
    }
    if (l == 0) break;
    const auto w = params.weights(l);
    const Mat& pre_prev = tape.preactivations[l - 1];
    Mat next(n, in);
    for (std::size_t i = 0; i < n; ++i) {
      const auto di = delta.row(i);
      auto ni = next.row(i);
      for (std::size_t o = 0; o < out; ++o) {
        const double d = di[o];
        if (d == 0.0) continue;
        const double* wo = w.data() + o * in;
        for (std::size_t k = 0; k < in; ++k) ni[k] += d * wo[k];
      }
      const auto pi = pre_prev.row(i);
      for (std::size_t k = 0; k < in; ++k) {
        if (!(pi[k] > 0.0)) ni[k] = 0.0;
      }
    }
    delta = std::move(next);
  }
  return grad;
}

struct AdamWConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// AdamW with bias correction; weight decay is applied to the parameters
/// directly (theta *= 1 - lr * wd) before the adaptive step.
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::size_t num_params, AdamWConfig config)
      : config_(config), m_(num_params, 0.0), v_(num_params, 0.0) {}

  const AdamWConfig& config() const noexcept { return config_; }
  std::uint64_t step_count() const noexcept { return step_; }
  const std::vector<double>& first_moment() const noexcept { return m_; }
  const std::vector<double>& second_moment() const noexcept { return v_; }

  void step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size() || params.size() != m_.size()) {
      throw DimensionError("adamw: parameter, gradient and state sizes differ");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (!std::isfinite(grads[i])) {
        throw NonFiniteGradient("gradient entry " + std::to_string(i) + " is not finite");
      }
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    const double decay = 1.0 - config_.lr * config_.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m_[i] / bc1;
      const double v_hat = v_[i] / bc2;
      params[i] = params[i] * decay - config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }

 private:
  AdamWConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t step_ = 0;
};

inline void adamw_step(MLPParams& params, const MLPParams& grads, AdamW& state) {
  if (!params.same_shape(grads)) throw DimensionError("adamw_step: gradient shape mismatch");
  state.step(params.values(), grads.values());
}

// ---------------------------------------------------------------------------
// Linear probe

struct ProbeResult {
  Mat weights;  // num_classes x (dim + 1), last column is the bias
  double accuracy = 0.0;        // held-out
  double train_accuracy = 0.0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

namespace detail {

inline void softmax_scores(const Mat& w, std::span<const double> x, std::span<double> out) {
  const std::size_t d = x.size();
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < w.rows(); ++c) {
    double s = w(c, d);
    for (std::size_t k = 0; k < d; ++k) s += w(c, k) * x[k];
    out[c] = s;
    mx = std::max(mx, s);
  }
  double total = 0.0;
  for (double& s : out) {
    s = std::exp(s - mx);
    total += s;
  }
  for (double& s : out) s /= total;
}

inline double probe_accuracy(const Mat& w, const Mat& x, const std::vector<int>& y) {
  if (y.empty()) return 0.0;
  std::vector<double> p(w.rows());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    softmax_scores(w, x.row(i), p);
    const auto best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    correct += (best == y[i]);
  }
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

}  // namespace detail

/// Multinomial logistic regression on frozen features, trained by full-batch
/// gradient descent on the mean cross-entropy, evaluated on a separate set.
inline ProbeResult linear_probe(const Mat& train_x, const std::vector<int>& train_y,
                                const Mat& test_x, const std::vector<int>& test_y,
                                std::size_t epochs = 100, double lr = 0.1,
                                std::size_t num_classes = 0) {
  if (train_x.rows() != train_y.size() || test_x.rows() != test_y.size()) {
    throw DimensionError("linear_probe: feature and label counts differ");
  }
  if (train_x.cols() != test_x.cols() && test_x.rows() > 0) {
    throw DimensionError("linear_probe: train and test dims differ");
  }
  int max_label = -1;
  for (int y : train_y) max_label = std::max(max_label, y);
  for (int y : test_y) max_label = std::max(max_label, y);
  const std::size_t m = std::max<std::size_t>(num_classes, static_cast<std::size_t>(max_label + 1));
  std::vector<std::size_t> counts(m, 0);
  for (int y : train_y) ++counts[static_cast<std::size_t>(y)];
  if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2) {
    throw DegenerateLabels("linear probe needs at least two classes in the training split");
  }
  const std::size_t d = train_x.cols();
  const std::size_t n = train_x.rows();
  ProbeResult res;
  res.weights = Mat(m, d + 1);
  Mat grad(m, d + 1);
  std::vector<double> p(m);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    grad.fill(0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto xi = train_x.row(i);
      detail::softmax_scores(res.weights, xi, p);
      p[static_cast<std::size_t>(train_y[i])] -= 1.0;
      for (std::size_t c = 0; c < m; ++c) {
        const double pc = p[c];
        for (std::size_t k = 0; k < d; ++k) grad(c, k) += pc * xi[k];
        grad(c, d) += pc;
      }
    }
    const double scale = lr / static_cast<double>(n);
    for (std::size_t j = 0; j < grad.data().size(); ++j) {
      res.weights.data()[j] -= scale * grad.data()[j];
    }
  }
  res.train_accuracy = detail::probe_accuracy(res.weights, train_x, train_y);
  res.accuracy = detail::probe_accuracy(res.weights, test_x, test_y);
  res.train_size = n;
  res.test_size = test_y.size();
  return res;
}

/// Random 80/20 split of the given embeddings, then the probe above.
inline ProbeResult linear_probe(const Mat& embeddings, const std::vector<int>& labels,
                                std::size_t epochs, double lr, Rng& rng,
                                std::size_t num_classes = 0) {
  if (embeddings.rows() != labels.size()) {
    throw DimensionError("linear_probe: embedding and label counts differ");
  }
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  const std::size_t n_train = (labels.size() * 4) / 5;
  const std::size_t d = embeddings.cols();
  Mat tx(n_train, d), vx(labels.size() - n_train, d);
  std::vector<int> ty, vy;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto src = embeddings.row(order[r]);
    if (r < n_train) {
      std::copy(src.begin(), src.end(), tx.row(r).begin());
      ty.push_back(labels[order[r]]);
    } else {
      std::copy(src.begin(), src.end(), vx.row(r - n_train).begin());
      vy.push_back(labels[order[r]]);
    }
  }
  return linear_probe(tx, ty, vx, vy, epochs, lr, num_classes);
}

// ---------------------------------------------------------------------------
// Checkpoints: "PJNW", u32 version, u32 count, u64 layer sizes, f64 params.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const MLPParams& params) {
  binio::write_magic(os, "PJNW");
  binio::write_le<std::uint32_t>(os, kCheckpointVersion);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.layer_sizes().size()));
  for (std::size_t s : params.layer_sizes()) binio::write_le<std::uint64_t>(os, s);
  for (double v : params.values()) binio::write_f64(os, v);
}

inline MLPParams read_checkpoint(std::istream& is) {
  binio::expect_magic(is, "PJNW");
  const auto version = binio::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported PJNW version " + std::to_string(version));
  }
  const auto count = binio::read_le<std::uint32_t>(is);
  if (count < 2 || count > 64) throw FormatError("implausible layer count in checkpoint");
  std::vector<std::size_t> sizes(count);
  for (auto& s : sizes) s = static_cast<std::size_t>(binio::read_le<std::uint64_t>(is));
  MLPParams p(sizes);
  for (double& v : p.values()) v = binio::read_f64(is);
  return p;
}

}  // namespace projnce
