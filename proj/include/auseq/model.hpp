#pragma once

// Single-layer LSTM -> inverted dropout on the last hidden state -> one
// sigmoid output, with backpropagation through time.
//
// Per timestep (gates f, i, o sigmoid; candidate g tanh):
//   c_t = f * c_{t-1} + i * g
//   h_t = o * tanh(c_t)
// logit = w . dropout(h_T) + b

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>

#include <Eigen/Dense>

#include "auseq/core.hpp"
#include "auseq/random.hpp"

namespace auseq {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum Gate : std::size_t { kForget = 0, kInput = 1, kOutput = 2, kCandidate = 3 };
inline constexpr std::array<char, 4> kGateLetters = {'f', 'i', 'o', 'g'};

inline constexpr double kProbabilityEpsilon = 1e-12;

struct ModelConfig {
  int input_dim = 32;
  int hidden_dim = 64;
  int num_layers = 1;

  void validate() const {
    if (input_dim < 1 || hidden_dim < 1) throw Error(ErrorKind::Spec, "input and hidden dimensions must be >= 1");
    if (num_layers != 1)
      throw Error(ErrorKind::Spec, "only a single LSTM layer is supported, got " + std::to_string(num_layers));
  }
};

/// All trainable values. Gradients share this type.
struct ModelParams {
  int input_dim = 0;
  int hidden_dim = 0;
  std::array<RowMatrix, 4> W;        // H x D per gate
  std::array<RowMatrix, 4> U;        // H x H per gate
  std::array<Eigen::VectorXd, 4> b;  // H per gate
  Eigen::VectorXd w;                 // dense weights, H
  double dense_bias = 0.0;

  static ModelParams zeros(int input_dim, int hidden_dim) {
    ModelParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    for (std::size_t k = 0; k < 4; ++k) {
      p.W[k] = RowMatrix::Zero(hidden_dim, input_dim);
      p.U[k] = RowMatrix::Zero(hidden_dim, hidden_dim);
      p.b[k] = Eigen::VectorXd::Zero(hidden_dim);
    }
    p.w = Eigen::VectorXd::Zero(hidden_dim);
    return p;
  }

  static std::size_t count(int input_dim, int hidden_dim) {
    const auto d = static_cast<std::size_t>(input_dim);
    const auto h = static_cast<std::size_t>(hidden_dim);
    return 4 * (h * d + h * h + h) + h + 1;
  }

  std::size_t count() const { return count(input_dim, hidden_dim); }

  /// Visits every block in checkpoint order:
  /// W_f, W_i, W_o, W_g, U_f, U_i, U_o, U_g, b_f, b_i, b_o, b_g, w, b.
  /// Matrix blocks are row-major.
  template <typename Fn>
  void for_each_block(Fn&& fn) {
    for (std::size_t k = 0; k < 4; ++k) fn(std::string("W_") + kGateLetters[k], std::span<double>(W[k].data(), static_cast<std::size_t>(W[k].size())));
    for (std::size_t k = 0; k < 4; ++k) fn(std::string("U_") + kGateLetters[k], std::span<double>(U[k].data(), static_cast<std::size_t>(U[k].size())));
    for (std::size_t k = 0; k < 4; ++k) fn(std::string("b_") + kGateLetters[k], std::span<double>(b[k].data(), static_cast<std::size_t>(b[k].size())));
    fn(std::string("w"), std::span<double>(w.data(), static_cast<std::size_t>(w.size())));
    fn(std::string("b"), std::span<double>(&dense_bias, 1));
  }

  template <typename Fn>
  void for_each_block(Fn&& fn) const {
    const_cast<ModelParams*>(this)->for_each_block([&](const std::string& name, std::span<double> s) {
      fn(name, std::span<const double>(s.data(), s.size()));
    });
  }

  bool all_finite() const {
    bool ok = true;
    for_each_block([&](const std::string&, std::span<const double> s) {
      for (double v : s) ok = ok && std::isfinite(v);
    });
    return ok;
  }

  bool same_shape(const ModelParams& o) const { return input_dim == o.input_dim && hidden_dim == o.hidden_dim; }

  bool operator==(const ModelParams& o) const {
    if (!same_shape(o) || dense_bias != o.dense_bias || w != o.w) return false;
    for (std::size_t k = 0; k < 4; ++k)
      if (W[k] != o.W[k] || U[k] != o.U[k] || b[k] != o.b[k]) return false;
    return true;
  }
};

using Gradients = ModelParams;

/// Uniform(-1/sqrt(H), 1/sqrt(H)) for input, recurrent and dense weights;
/// biases zero except the forget gate, which starts at 1.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  auto p = ModelParams::zeros(config.input_dim, config.hidden_dim);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
  const auto fill = [&](double* data, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) data[i] = uniform(rng, -bound, bound);
  };
  for (auto& m : p.W) fill(m.data(), m.size());
  for (auto& m : p.U) fill(m.data(), m.size());
  fill(p.w.data(), p.w.size());
  p.b[kForget].setOnes();
  return p;
}

inline ModelParams init_params(int input_dim, int hidden_dim, std::uint64_t seed) {
  return init_params(ModelConfig{input_dim, hidden_dim, 1}, seed);
}

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct Prediction {
  double probability = 0.5;
  double logit = 0.0;
  int label_hat = 1;

  static Prediction from_logit(double logit) {
    Prediction p;
    p.logit = logit;
    p.probability = std::clamp(logistic(logit), kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
    p.label_hat = p.probability >= 0.5 ? 1 : 0;
    return p;
  }
};

/// Everything backward needs from one Train-mode forward pass.
struct ForwardCache {
  int input_dim = 0;
  int hidden_dim = 0;
  RowMatrix x;                       // T x D
  std::array<RowMatrix, 4> gates;    // T x H activations per gate
  RowMatrix c;                       // (T+1) x H, row 0 = c_0
  RowMatrix h;                       // (T+1) x H, row 0 = h_0
  RowMatrix tanh_c;                  // T x H
  Eigen::VectorXd dropout_mask;      // H, entries 0 or 1/(1-rate)
  Eigen::VectorXd dropped;           // mask * h_T
  double probability = 0.5;

  Eigen::Index steps() const { return x.rows(); }
};

struct EvalMode {};

struct TrainMode {
  double dropout_rate = 0.5;
  Rng* rng = nullptr;
};

using ForwardMode = std::variant<EvalMode, TrainMode>;

struct ForwardResult {
  Prediction prediction;
  std::optional<ForwardCache> cache;
};

namespace detail {

inline double sigmoid_unclamped(double x) { return logistic(x); }

}  // namespace detail

template <typename Derived>
ForwardResult lstm_forward(const ModelParams& params, const Eigen::MatrixBase<Derived>& chunk, ForwardMode mode) {
  if (chunk.cols() != params.input_dim)
    throw Error(ErrorKind::Shape, "chunk width " + std::to_string(chunk.cols()) + " does not match model input " +
                                      std::to_string(params.input_dim));
  const bool training = std::holds_alternative<TrainMode>(mode);
  double rate = 0.0;
  if (training) {
    rate = std::get<TrainMode>(mode).dropout_rate;
    if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorKind::Spec, "dropout rate must be in [0,1)");
    if (rate > 0.0 && std::get<TrainMode>(mode).rng == nullptr)
      throw Error(ErrorKind::Spec, "training mode needs a random generator for dropout");
  }

  const Eigen::Index T = chunk.rows();
  const Eigen::Index H = params.hidden_dim;

  ForwardCache cache;
  cache.input_dim = params.input_dim;
  cache.hidden_dim = params.hidden_dim;
  cache.x = chunk;

  // Input projections for all timesteps at once: T x H per gate.
  std::array<RowMatrix, 4> pre;
  for (std::size_t k = 0; k < 4; ++k) {
    pre[k] = cache.x * params.W[k].transpose();
    pre[k].rowwise() += params.b[k].transpose();
  }

  if (training) {
    for (auto& g : cache.gates) g.resize(T, H);
    cache.c = RowMatrix::Zero(T + 1, H);
    cache.h = RowMatrix::Zero(T + 1, H);
    cache.tanh_c.resize(T, H);
  }

  Eigen::VectorXd h = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd z(H);
  std::array<Eigen::VectorXd, 4> act;
  for (Eigen::Index t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < 4; ++k) {
      z.noalias() = params.U[k] * h;
      z += pre[k].row(t).transpose();
      if (k == kCandidate)
        act[k] = z.array().tanh();
      else
        act[k] = z.unaryExpr(&detail::sigmoid_unclamped);
    }
    c = act[kForget].cwiseProduct(c) + act[kInput].cwiseProduct(act[kCandidate]);
    const Eigen::VectorXd tc = c.array().tanh();
    h = act[kOutput].cwiseProduct(tc);
    if (training) {
      for (std::size_t k = 0; k < 4; ++k) cache.gates[k].row(t) = act[k].transpose();
      cache.c.row(t + 1) = c.transpose();
      cache.h.row(t + 1) = h.transpose();
      cache.tanh_c.row(t) = tc.transpose();
    }
  }

  double logit = 0.0;
  if (training) {
    cache.dropout_mask = Eigen::VectorXd::Ones(H);
    if (rate > 0.0) {
      auto& rng = *std::get<TrainMode>(mode).rng;
      const double scale = 1.0 / (1.0 - rate);
      for (Eigen::Index j = 0; j < H; ++j) cache.dropout_mask(j) = uniform01(rng) >= rate ? scale : 0.0;
    }
    cache.dropped = cache.dropout_mask.cwiseProduct(h);
    logit = params.w.dot(cache.dropped) + params.dense_bias;
  } else {
    logit = params.w.dot(h) + params.dense_bias;
  }

  ForwardResult result{Prediction::from_logit(logit), std::nullopt};
  if (training) {
    cache.probability = result.prediction.probability;
    result.cache = std::move(cache);
  }
  return result;
}

/// Eval-mode forward; dropout inactive.
template <typename Derived>
Prediction predict_chunk(const ModelParams& params, const Eigen::MatrixBase<Derived>& chunk) {
  return lstm_forward(params, chunk, EvalMode{}).prediction;
}

/// Binary cross-entropy with the probability clamped to [1e-12, 1 - 1e-12].
inline double bce_loss(double probability, int label) {
  const double p = std::clamp(probability, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

/// Exact gradient of bce_loss(forward(params, x), label) with respect to every
/// parameter, through the dropout mask recorded in the cache.
inline Gradients backward(const ModelParams& params, const ForwardCache& cache, int label) {
  if (cache.input_dim != params.input_dim || cache.hidden_dim != params.hidden_dim)
    throw Error(ErrorKind::Shape, "forward cache does not match parameter dimensions");
  const Eigen::Index T = cache.steps();
  const Eigen::Index H = params.hidden_dim;

  auto grad = Gradients::zeros(params.input_dim, params.hidden_dim);
  const double dlogit = cache.probability - static_cast<double>(label);
  grad.dense_bias = dlogit;
  grad.w = dlogit * cache.dropped;

  Eigen::VectorXd dh = dlogit * params.w.cwiseProduct(cache.dropout_mask);
  Eigen::VectorXd dc = Eigen::VectorXd::Zero(H);
  std::array<Eigen::VectorXd, 4> dz;
  // Pre-activation gradients per timestep, so the weight gradients become two GEMMs.
  std::array<RowMatrix, 4> dZ;
  for (auto& m : dZ) m.resize(T, H);

  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const auto f = cache.gates[kForget].row(t).transpose().array();
    const auto i = cache.gates[kInput].row(t).transpose().array();
    const auto o = cache.gates[kOutput].row(t).transpose().array();
    const auto g = cache.gates[kCandidate].row(t).transpose().array();
    const auto tc = cache.tanh_c.row(t).transpose().array();
    const auto c_prev = cache.c.row(t).transpose().array();

    dc.array() += dh.array() * o * (1.0 - tc.square());
    dz[kOutput] = (dh.array() * tc * o * (1.0 - o)).matrix();
    dz[kInput] = (dc.array() * g * i * (1.0 - i)).matrix();
    dz[kCandidate] = (dc.array() * i * (1.0 - g.square())).matrix();
    dz[kForget] = (dc.array() * c_prev * f * (1.0 - f)).matrix();

    dh.setZero();
    for (std::size_t k = 0; k < 4; ++k) {
      dZ[k].row(t) = dz[k].transpose();
      dh.noalias() += params.U[k].transpose() * dz[k];
    }
    dc.array() *= f;
  }

  const auto h_prev = cache.h.topRows(T);
  for (std::size_t k = 0; k < 4; ++k) {
    grad.W[k].noalias() = dZ[k].transpose() * cache.x;
    grad.U[k].noalias() = dZ[k].transpose() * h_prev;
    grad.b[k] = dZ[k].colwise().sum().transpose();
  }
  return grad;
}

}  // namespace auseq
