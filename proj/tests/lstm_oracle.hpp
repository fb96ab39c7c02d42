#pragma once

// Test-only reference LSTM: plain scalar loops over std::vector, no Eigen
// expressions, used as the finite-difference oracle for backward().

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "auseq/model.hpp"

namespace oracle {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Probability of the reference forward with an explicit dropout mask
/// (mask entries already include the 1/(1-rate) scale).
inline double probability(const auseq::ModelParams& p, const Eigen::MatrixXd& x, const std::vector<double>& mask) {
  const int H = p.hidden_dim, D = p.input_dim;
  std::vector<double> h(static_cast<std::size_t>(H), 0.0), c(static_cast<std::size_t>(H), 0.0);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    std::vector<double> nh(static_cast<std::size_t>(H)), nc(static_cast<std::size_t>(H));
    for (int j = 0; j < H; ++j) {
      double z[4];
      for (int k = 0; k < 4; ++k) {
        double s = p.b[static_cast<std::size_t>(k)](j);
        for (int d = 0; d < D; ++d) s += p.W[static_cast<std::size_t>(k)](j, d) * x(t, d);
        for (int m = 0; m < H; ++m) s += p.U[static_cast<std::size_t>(k)](j, m) * h[static_cast<std::size_t>(m)];
        z[k] = s;
      }
      const double f = sigmoid(z[0]), i = sigmoid(z[1]), o = sigmoid(z[2]), g = std::tanh(z[3]);
      nc[static_cast<std::size_t>(j)] = f * c[static_cast<std::size_t>(j)] + i * g;
      nh[static_cast<std::size_t>(j)] = o * std::tanh(nc[static_cast<std::size_t>(j)]);
    }
    h = nh;
    c = nc;
  }
  double logit = p.dense_bias;
  for (int j = 0; j < H; ++j) logit += p.w(j) * mask[static_cast<std::size_t>(j)] * h[static_cast<std::size_t>(j)];
  return sigmoid(logit);
}

inline double loss(const auseq::ModelParams& p, const Eigen::MatrixXd& x, const std::vector<double>& mask, int label) {
  const double q = probability(p, x, mask);
  return label == 1 ? -std::log(q) : -std::log(1.0 - q);
}

/// Central differences of the reference loss for every parameter, in block order.
inline std::vector<double> finite_difference(const auseq::ModelParams& p, const Eigen::MatrixXd& x,
                                             const std::vector<double>& mask, int label, double step = 1e-5) {
  std::vector<double> out;
  auseq::ModelParams work = p;
  std::vector<std::span<double>> blocks;
  work.for_each_block([&](const std::string&, std::span<double> s) { blocks.push_back(s); });
  for (auto block : blocks) {
    for (double& v : block) {
      const double saved = v;
      v = saved + step;
      const double up = loss(work, x, mask, label);
      v = saved - step;
      const double down = loss(work, x, mask, label);
      v = saved;
      out.push_back((up - down) / (2 * step));
    }
  }
  return out;
}

inline std::vector<double> flatten(const auseq::ModelParams& g) {
  std::vector<double> out;
  g.for_each_block([&](const std::string&, std::span<const double> s) { out.insert(out.end(), s.begin(), s.end()); });
  return out;
}

/// Random parameters on [-scale, scale], every entry (biases included).
inline auseq::ModelParams random_params(int D, int H, auseq::Rng& rng, double scale = 0.8) {
  auto p = auseq::ModelParams::zeros(D, H);
  p.for_each_block([&](const std::string&, std::span<double> s) {
    for (double& v : s) v = auseq::uniform(rng, -scale, scale);
  });
  return p;
}

struct GradCheck {
  double max_relative_error = 0.0;
  std::size_t components = 0;
};

/// One randomized instance: Train-mode forward with dropout, analytic backward,
/// then the reference finite differences under the same mask.
/// `floor` bounds the relative-error denominator from below.
inline GradCheck check_instance(std::uint64_t seed, int D = 3, int H = 2, int T = 4, double rate = 0.5,
                                double floor = 1e-8) {
  auseq::Rng rng(seed);
  const auto params = random_params(D, H, rng);
  Eigen::MatrixXd x(T, D);
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < D; ++d) x(t, d) = auseq::normal01(rng);
  const int label = static_cast<int>(rng() & 1);

  auseq::Rng dropout_rng(seed ^ 0x5555);
  const auto fwd = auseq::lstm_forward(params, x, auseq::TrainMode{rate, &dropout_rng});
  const auto analytic = flatten(auseq::backward(params, *fwd.cache, label));
  std::vector<double> mask(fwd.cache->dropout_mask.data(), fwd.cache->dropout_mask.data() + H);
  const auto numeric = finite_difference(params, x, mask, label);

  GradCheck r;
  r.components = analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]) / std::max(std::abs(numeric[i]), floor);
    r.max_relative_error = std::max(r.max_relative_error, err);
  }
  return r;
}

}  // namespace oracle
