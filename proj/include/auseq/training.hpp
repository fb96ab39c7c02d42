#pragma once

// Mini-batch training with Adam, per-epoch history, and the AULSTM1
// checkpoint format.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "auseq/binary_io.hpp"
#include "auseq/core.hpp"
#include "auseq/model.hpp"
#include "auseq/preprocess.hpp"
#include "auseq/random.hpp"

namespace auseq {

struct TrainConfig {
  int epochs = 60;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double dropout_rate = 0.5;
  int hidden_dim = 64;
  std::uint64_t seed = 0;
  bool shuffle_each_epoch = true;
  /// Worker threads for per-chunk forward/backward; 0 = hardware concurrency.
  /// Reduction order is fixed, so the result does not depend on this.
  int jobs = 1;

  void validate() const {
    const auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, m); };
    if (epochs < 1) fail("epochs must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(learning_rate > 0)) fail("learning_rate must be > 0");
    if (!(beta1 > 0 && beta1 < 1)) fail("beta1 must be in (0,1)");
    if (!(beta2 > 0 && beta2 < 1)) fail("beta2 must be in (0,1)");
    if (!(epsilon > 0)) fail("epsilon must be > 0");
    if (!(dropout_rate >= 0 && dropout_rate < 1)) fail("dropout_rate must be in [0,1)");
    if (hidden_dim < 1) fail("hidden_dim must be >= 1");
    if (jobs < 0) fail("jobs must be >= 0");
  }
};

struct OptimizerState {
  ModelParams m;
  ModelParams v;
  std::uint64_t t = 0;

  static OptimizerState for_params(const ModelParams& p) {
    return {ModelParams::zeros(p.input_dim, p.hidden_dim), ModelParams::zeros(p.input_dim, p.hidden_dim), 0};
  }
};

namespace detail {

/// Calls fn(name, p, g, m, v) for each block of four same-shaped parameter sets.
template <typename Fn>
void zip_blocks(ModelParams& p, const Gradients& g, ModelParams& m, ModelParams& v, Fn&& fn) {
  std::vector<std::pair<std::string, std::span<double>>> pb, mb, vb;
  std::vector<std::span<const double>> gb;
  p.for_each_block([&](const std::string& n, std::span<double> s) { pb.emplace_back(n, s); });
  m.for_each_block([&](const std::string& n, std::span<double> s) { mb.emplace_back(n, s); });
  v.for_each_block([&](const std::string& n, std::span<double> s) { vb.emplace_back(n, s); });
  g.for_each_block([&](const std::string&, std::span<const double> s) { gb.push_back(s); });
  for (std::size_t i = 0; i < pb.size(); ++i) fn(pb[i].first, pb[i].second, gb[i], mb[i].second, vb[i].second);
}

}  // namespace detail

/// One bias-corrected Adam step. An element whose gradient is exactly zero
/// keeps its value; its moments still decay.
inline void optimizer_step(ModelParams& params, const Gradients& grads, OptimizerState& state,
                           const TrainConfig& config) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v))
    throw Error(ErrorKind::Shape, "optimizer: parameter, gradient and state shapes differ");
  grads.for_each_block([](const std::string& name, std::span<const double> s) {
    for (double v : s)
      if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "non-finite gradient in block " + name);
  });

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  detail::zip_blocks(params, grads, state.m, state.v,
                     [&](const std::string&, std::span<double> p, std::span<const double> g, std::span<double> m,
                         std::span<double> v) {
                       for (std::size_t i = 0; i < p.size(); ++i) {
                         m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
                         v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
                         if (g[i] == 0.0) continue;
                         const double m_hat = m[i] / correction1;
                         const double v_hat = v[i] / correction2;
                         p[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
                       }
                     });
}

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_ccr = 0.0;
  std::optional<double> validation_ccr;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

namespace detail {

inline void accumulate(Gradients& into, const Gradients& g) {
  for (std::size_t k = 0; k < 4; ++k) {
    into.W[k] += g.W[k];
    into.U[k] += g.U[k];
    into.b[k] += g.b[k];
  }
  into.w += g.w;
  into.dense_bias += g.dense_bias;
}

inline void scale(Gradients& g, double factor) {
  g.for_each_block([&](const std::string&, std::span<double> s) {
    for (double& v : s) v *= factor;
  });
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  std::size_t workers = jobs == 0 ? std::max(1u, std::thread::hardware_concurrency()) : static_cast<std::size_t>(jobs);
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Fraction of chunks whose eval-mode label matches.
inline double chunk_accuracy(const ModelParams& params, const std::vector<Chunk>& chunks, int jobs = 1) {
  if (chunks.empty()) return 0.0;
  std::vector<int> correct(chunks.size(), 0);
  detail::parallel_for(chunks.size(), jobs, [&](std::size_t i) {
    correct[i] = predict_chunk(params, chunks[i].features).label_hat == to_int(chunks[i].label) ? 1 : 0;
  });
  std::size_t total = 0;
  for (int c : correct) total += static_cast<std::size_t>(c);
  return static_cast<double>(total) / static_cast<double>(chunks.size());
}

/// Trains from a fresh initialization. Validation accuracy on `prepared.test`
/// is recorded when the test split is non-empty and never affects training.
/// `on_epoch` (optional) is called after each epoch, e.g. for logging.
inline TrainResult train(const PreparedData& prepared, const TrainConfig& config,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  config.validate();
  if (prepared.train.empty()) throw Error(ErrorKind::Spec, "training set is empty");
  const auto& chunks = prepared.train;
  const int input_dim = static_cast<int>(chunks.front().features.cols());

  TrainResult result{init_params(input_dim, config.hidden_dim, derive_seed(config.seed, "init")), {}};
  auto& params = result.params;
  auto state = OptimizerState::for_params(params);

  std::vector<std::size_t> order(chunks.size());
  std::vector<double> losses(chunks.size());
  std::vector<Gradients> grads(chunks.size());

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (config.shuffle_each_epoch) {
      Rng rng(derive_seed(config.seed, "epoch", static_cast<std::uint64_t>(epoch)));
      shuffle(order, rng);
    }

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      detail::parallel_for(end - start, config.jobs, [&](std::size_t j) {
        const std::size_t slot = start + j;
        const auto& chunk = chunks[order[slot]];
        // Each position in each epoch gets its own dropout stream.
        Rng rng(derive_seed(config.seed, "dropout",
                            static_cast<std::uint64_t>(epoch) * 0x100000000ULL + static_cast<std::uint64_t>(slot)));
        auto fwd = lstm_forward(params, chunk.features, TrainMode{config.dropout_rate, &rng});
        const int label = to_int(chunk.label);
        losses[slot] = bce_loss(fwd.prediction.probability, label);
        grads[slot] = backward(params, *fwd.cache, label);
      });

      auto batch_grad = Gradients::zeros(params.input_dim, params.hidden_dim);
      double batch_loss = 0.0;
      for (std::size_t slot = start; slot < end; ++slot) {
        detail::accumulate(batch_grad, grads[slot]);
        batch_loss += losses[slot];
      }
      if (!std::isfinite(batch_loss))
        throw Error(ErrorKind::NonFinite, "training diverged at epoch " + std::to_string(epoch) + " after " +
                                              std::to_string(result.history.epochs.size()) + " completed epochs");
      detail::scale(batch_grad, 1.0 / static_cast<double>(end - start));
      optimizer_step(params, batch_grad, state, config);
      loss_sum += batch_loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(chunks.size());
    rec.train_ccr = chunk_accuracy(params, chunks, config.jobs);
    if (!prepared.test.empty()) rec.validation_ccr = chunk_accuracy(params, prepared.test, config.jobs);
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

inline std::string history_csv(const TrainHistory& history) {
  std::string out = "epoch,mean_loss,train_ccr,validation_ccr\n";
  for (const auto& e : history.epochs) {
    out += std::to_string(e.epoch) + "," + detail::format_double(e.mean_loss, 10) + "," +
           detail::format_double(e.train_ccr, 10) + "," +
           (e.validation_ccr ? detail::format_double(*e.validation_ccr, 10) : std::string()) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint
//
//   "AULSTM1\n"
//   "<D> <H>\n"
//   f64 LE blocks: W_f W_i W_o W_g U_f U_i U_o U_g b_f b_i b_o b_g w b
//   u32 selection count, u32 indices
//   u8 normalization flag (0 absent, 1 present), then D means and D stddevs

inline constexpr std::string_view kCheckpointMagic = "AULSTM1\n";

struct Checkpoint {
  ModelParams params;
  std::vector<int> kept_indices;
  std::optional<Normalization> normalization;

  FeatureSelection selection() const {
    FeatureSelection s;
    s.kept_indices = kept_indices;
    std::vector<int> drop;
    for (int i = 0, j = 0; i < static_cast<int>(kFeatureCount); ++i) {
      if (j < static_cast<int>(kept_indices.size()) && kept_indices[static_cast<std::size_t>(j)] == i)
        ++j;
      else
        drop.push_back(i);
    }
    s.policy = SelectionPolicy::explicit_drop(std::move(drop));
    return s;
  }
};

inline std::string encode_checkpoint(const ModelParams& params, const std::vector<int>& kept_indices,
                                     const std::optional<Normalization>& normalization) {
  if (normalization && normalization->mean.size() != params.input_dim)
    throw Error(ErrorKind::Shape, "normalization width does not match model input");
  std::string out(kCheckpointMagic);
  out += std::to_string(params.input_dim) + " " + std::to_string(params.hidden_dim) + "\n";
  params.for_each_block([&](const std::string&, std::span<const double> s) {
    for (double v : s) binary::put<double>(out, v);
  });
  binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(kept_indices.size()));
  for (int i : kept_indices) binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(i));
  binary::put<std::uint8_t>(out, normalization ? 1 : 0);
  if (normalization) {
    for (Eigen::Index j = 0; j < normalization->mean.size(); ++j) binary::put<double>(out, normalization->mean(j));
    for (Eigen::Index j = 0; j < normalization->stddev.size(); ++j) binary::put<double>(out, normalization->stddev(j));
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint") {
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
    throw Error(ErrorKind::Checkpoint, what + ": magic mismatch");
  bytes.remove_prefix(kCheckpointMagic.size());
  const auto eol = bytes.find('\n');
  if (eol == std::string_view::npos || eol > 32) throw Error(ErrorKind::Checkpoint, what + ": missing dimension header");
  const auto header = bytes.substr(0, eol);
  bytes.remove_prefix(eol + 1);
  long long d = 0, h = 0;
  const auto space = header.find(' ');
  if (space == std::string_view::npos) throw Error(ErrorKind::Checkpoint, what + ": malformed dimension header");
  const auto r1 = std::from_chars(header.data(), header.data() + space, d);
  const auto r2 = std::from_chars(header.data() + space + 1, header.data() + header.size(), h);
  if (r1.ec != std::errc{} || r2.ec != std::errc{} || r1.ptr != header.data() + space ||
      r2.ptr != header.data() + header.size() || d < 1 || h < 1 || d > 1 << 20 || h > 1 << 20)
    throw Error(ErrorKind::Checkpoint, what + ": malformed dimension header");

  Checkpoint ck{ModelParams::zeros(static_cast<int>(d), static_cast<int>(h)), {}, std::nullopt};
  const std::size_t param_bytes = ck.params.count() * sizeof(double);
  // Smallest valid tail: selection count + D indices + flag byte.
  const std::size_t min_tail = sizeof(std::uint32_t) + static_cast<std::size_t>(d) * sizeof(std::uint32_t) + 1;
  if (bytes.size() < param_bytes + min_tail)
    throw Error(ErrorKind::Checkpoint, what + ": length mismatch: header D=" + std::to_string(d) + " H=" +
                                           std::to_string(h) + " needs at least " +
                                           std::to_string(param_bytes + min_tail) + " payload bytes, found " +
                                           std::to_string(bytes.size()));

  binary::Reader in(bytes, ErrorKind::Checkpoint, what);
  ck.params.for_each_block([&](const std::string&, std::span<double> s) {
    for (double& v : s) v = in.get<double>();
  });
  const auto count = in.get<std::uint32_t>();
  if (count != static_cast<std::uint32_t>(d))
    throw Error(ErrorKind::Checkpoint, what + ": selection has " + std::to_string(count) + " indices but D=" +
                                           std::to_string(d));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto idx = in.get<std::uint32_t>();
    if (idx >= kFeatureCount || (!ck.kept_indices.empty() && static_cast<int>(idx) <= ck.kept_indices.back()))
      throw Error(ErrorKind::Checkpoint, what + ": invalid selection index " + std::to_string(idx));
    ck.kept_indices.push_back(static_cast<int>(idx));
  }
  const auto flag = in.get<std::uint8_t>();
  if (flag > 1) throw Error(ErrorKind::Checkpoint, what + ": bad normalization flag");
  if (flag == 1) {
    Normalization n{Eigen::VectorXd(d), Eigen::VectorXd(d)};
    for (Eigen::Index j = 0; j < d; ++j) n.mean(j) = in.get<double>();
    for (Eigen::Index j = 0; j < d; ++j) n.stddev(j) = in.get<double>();
    ck.normalization = std::move(n);
  }
  if (in.remaining() != 0)
    throw Error(ErrorKind::Checkpoint, what + ": length mismatch: " + std::to_string(in.remaining()) + " trailing bytes");
  if (!ck.params.all_finite()) throw Error(ErrorKind::Checkpoint, what + ": non-finite parameter");
  return ck;
}

inline void save_checkpoint(const ModelParams& params, const FeatureSelection& selection,
                            const std::optional<Normalization>& normalization, const std::filesystem::path& path) {
  if (static_cast<int>(selection.width()) != params.input_dim)
    throw Error(ErrorKind::Shape, "selection width does not match model input");
  detail::write_file(path, encode_checkpoint(params, selection.kept_indices, normalization));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path), path.string());
}

}  // namespace auseq
