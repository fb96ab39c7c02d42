#pragma once

// Feature significance and selection, fixed-window chunking, per-dataset
// class balancing, seeded train/test splitting and train-only z-scoring.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/beta.hpp>

#include "auseq/binary_io.hpp"
#include "auseq/core.hpp"
#include "auseq/ingest.hpp"
#include "auseq/random.hpp"

namespace auseq {

// ---------------------------------------------------------------------------
// Significance

/// Two-sided Welch t-test p-value from per-class moments (sample variances).
/// Zero standard error: 1.0 if the means are equal, 0.0 otherwise.
inline double welch_p_value(double mean_a, double var_a, std::size_t n_a, double mean_b, double var_b,
                            std::size_t n_b) {
  const double se2 = var_a / static_cast<double>(n_a) + var_b / static_cast<double>(n_b);
  if (se2 <= 0.0) return mean_a == mean_b ? 1.0 : 0.0;
  const double diff = mean_a - mean_b;
  const double t2 = diff * diff / se2;
  const double qa = var_a / static_cast<double>(n_a);
  const double qb = var_b / static_cast<double>(n_b);
  // Welch-Satterthwaite degrees of freedom.
  const double df = se2 * se2 / (qa * qa / static_cast<double>(n_a - 1) + qb * qb / static_cast<double>(n_b - 1));
  if (t2 == 0.0) return 1.0;
  const double p = boost::math::ibeta(df / 2.0, 0.5, df / (df + t2));
  return std::clamp(p, 0.0, 1.0);
}

/// Per-feature Welch p-values between truthful and deceptive frames, pooled
/// over every frame of every record.
inline std::array<double, kFeatureCount> compute_significance(const std::vector<ConfessionRecord>& records) {
  std::array<std::vector<const AUFrame*>, 2> by_class;
  for (const auto& r : records)
    for (const auto& f : r.frames) by_class[static_cast<std::size_t>(to_int(r.label))].push_back(&f);
  if (by_class[0].empty() || by_class[1].empty())
    throw Error(ErrorKind::SingleClass, "significance needs frames from both classes");
  if (by_class[0].size() < 2 || by_class[1].size() < 2)
    throw Error(ErrorKind::SingleClass, "significance needs at least 2 frames per class");

  std::array<double, kFeatureCount> p{};
  for (std::size_t k = 0; k < kFeatureCount; ++k) {
    std::array<double, 2> mean{};
    std::array<double, 2> var{};
    for (std::size_t c = 0; c < 2; ++c) {
      const auto& frames = by_class[c];
      double sum = 0.0;
      for (const auto* f : frames) sum += f->feature(k);
      mean[c] = sum / static_cast<double>(frames.size());
      double ss = 0.0;
      for (const auto* f : frames) {
        const double d = f->feature(k) - mean[c];
        ss += d * d;
      }
      var[c] = ss / static_cast<double>(frames.size() - 1);
    }
    p[k] = welch_p_value(mean[0], var[0], by_class[0].size(), mean[1], var[1], by_class[1].size());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Selection

struct SelectionPolicy {
  enum class Kind { DropKLeastSignificant, ExplicitDrop, KeepAll };

  Kind kind = Kind::DropKLeastSignificant;
  int k = 3;
  std::vector<int> drop;

  static SelectionPolicy drop_least_significant(int k) { return {Kind::DropKLeastSignificant, k, {}}; }
  static SelectionPolicy explicit_drop(std::vector<int> indices) { return {Kind::ExplicitDrop, 0, std::move(indices)}; }
  static SelectionPolicy keep_all() { return {Kind::KeepAll, 0, {}}; }

  std::string describe() const {
    switch (kind) {
      case Kind::DropKLeastSignificant: return "drop_k:" + std::to_string(k);
      case Kind::KeepAll: return "keep_all";
      case Kind::ExplicitDrop: {
        std::string s = "explicit_drop:";
        for (std::size_t i = 0; i < drop.size(); ++i) s += (i ? ";" : "") + std::to_string(drop[i]);
        return s;
      }
    }
    return {};
  }
};

struct FeatureSelection {
  std::vector<int> kept_indices;
  /// Empty when the selection was restored from a checkpoint.
  std::vector<double> p_values;
  SelectionPolicy policy;

  std::size_t width() const { return kept_indices.size(); }
};

inline FeatureSelection select_features(const std::array<double, kFeatureCount>& p_values,
                                        const SelectionPolicy& policy) {
  FeatureSelection sel;
  sel.p_values.assign(p_values.begin(), p_values.end());
  sel.policy = policy;
  std::vector<bool> dropped(kFeatureCount, false);

  switch (policy.kind) {
    case SelectionPolicy::Kind::KeepAll:
      break;
    case SelectionPolicy::Kind::DropKLeastSignificant: {
      if (policy.k < 0 || policy.k >= static_cast<int>(kFeatureCount))
        throw Error(ErrorKind::Spec, "drop-k must be in [0,34], got " + std::to_string(policy.k));
      std::vector<int> order(kFeatureCount);
      std::iota(order.begin(), order.end(), 0);
      // Largest p first; equal p drops the lower index first.
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p_values[a] > p_values[b]; });
      for (int i = 0; i < policy.k; ++i) dropped[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
      break;
    }
    case SelectionPolicy::Kind::ExplicitDrop:
      for (int idx : policy.drop) {
        if (idx < 0 || idx >= static_cast<int>(kFeatureCount))
          throw Error(ErrorKind::Spec, "feature index out of range: " + std::to_string(idx));
        dropped[static_cast<std::size_t>(idx)] = true;
      }
      break;
  }
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    if (!dropped[i]) sel.kept_indices.push_back(static_cast<int>(i));
  if (sel.kept_indices.empty()) throw Error(ErrorKind::Spec, "selection drops every feature");
  return sel;
}

inline FeatureSelection select_features(const std::vector<ConfessionRecord>& records, const SelectionPolicy& policy) {
  return select_features(compute_significance(records), policy);
}

// ---------------------------------------------------------------------------
// Chunks

struct Chunk {
  Eigen::MatrixXd features;  // window_len x feature_width
  Label label = Label::Truthful;
  std::string confession_id;
  std::string dataset;
  /// Position of the window within its confession (0-based).
  int index = 0;

  /// Identity used for partition and leakage checks.
  std::tuple<std::string, std::string, int> key() const { return {dataset, confession_id, index}; }
};

/// Non-overlapping windows of exactly `window_len` frames, trailing remainder
/// dropped, columns restricted to the selection.
inline std::vector<Chunk> chunk_confession(const ConfessionRecord& record, const FeatureSelection& selection,
                                           int window_len) {
  if (window_len < 1) throw Error(ErrorKind::Spec, "window length must be >= 1");
  const auto n_chunks = record.frames.size() / static_cast<std::size_t>(window_len);
  const auto width = static_cast<Eigen::Index>(selection.width());
  std::vector<Chunk> chunks;
  chunks.reserve(n_chunks);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    Chunk chunk{Eigen::MatrixXd(window_len, width), record.label, record.id, record.dataset, static_cast<int>(c)};
    for (int t = 0; t < window_len; ++t) {
      const auto& frame = record.frames[c * static_cast<std::size_t>(window_len) + static_cast<std::size_t>(t)];
      for (Eigen::Index j = 0; j < width; ++j)
        chunk.features(t, j) = frame.feature(static_cast<std::size_t>(selection.kept_indices[static_cast<std::size_t>(j)]));
    }
    chunks.push_back(std::move(chunk));
  }
  return chunks;
}

/// Down-samples the majority class uniformly at random to the minority count.
/// The minority class and the relative order of survivors are preserved.
inline std::vector<Chunk> balance_chunks(std::vector<Chunk> chunks, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, 2> idx;
  for (std::size_t i = 0; i < chunks.size(); ++i) idx[static_cast<std::size_t>(to_int(chunks[i].label))].push_back(i);
  if (idx[0].empty() || idx[1].empty())
    throw Error(ErrorKind::SingleClass, std::string("cannot balance: no ") +
                                            (idx[0].empty() ? "truthful" : "deceptive") + " chunks");
  if (idx[0].size() == idx[1].size()) return chunks;

  const std::size_t major = idx[0].size() > idx[1].size() ? 0 : 1;
  auto& pool = idx[major];
  Rng rng(seed);
  shuffle(pool, rng);
  std::vector<bool> keep(chunks.size(), true);
  for (std::size_t i = idx[1 - major].size(); i < pool.size(); ++i) keep[pool[i]] = false;

  std::vector<Chunk> out;
  out.reserve(2 * idx[1 - major].size());
  for (std::size_t i = 0; i < chunks.size(); ++i)
    if (keep[i]) out.push_back(std::move(chunks[i]));
  return out;
}

/// Seeded shuffle, then the first floor(train_fraction * n) chunks train.
inline std::pair<std::vector<Chunk>, std::vector<Chunk>> split_chunks(std::vector<Chunk> chunks,
                                                                      double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw Error(ErrorKind::Spec, "train fraction must be in (0,1)");
  if (chunks.size() < 2) throw Error(ErrorKind::Spec, "need at least 2 chunks to split, got " + std::to_string(chunks.size()));
  Rng rng(seed);
  shuffle(chunks, rng);
  const auto n_train =
      static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(chunks.size())));
  std::vector<Chunk> train(std::make_move_iterator(chunks.begin()),
                           std::make_move_iterator(chunks.begin() + static_cast<std::ptrdiff_t>(n_train)));
  std::vector<Chunk> test(std::make_move_iterator(chunks.begin() + static_cast<std::ptrdiff_t>(n_train)),
                          std::make_move_iterator(chunks.end()));
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Normalization

struct Normalization {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;

  bool operator==(const Normalization& o) const {
    return mean.size() == o.mean.size() && stddev.size() == o.stddev.size() && mean == o.mean && stddev == o.stddev;
  }
};

/// Per-column population moments over every row of every chunk. A zero
/// standard deviation is stored as 1 so the column passes through centred.
inline Normalization fit_normalization(const std::vector<Chunk>& chunks) {
  if (chunks.empty()) throw Error(ErrorKind::Spec, "cannot fit normalization on zero chunks");
  const auto width = chunks.front().features.cols();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(width);
  double rows = 0.0;
  for (const auto& c : chunks) {
    sum += c.features.colwise().sum().transpose();
    rows += static_cast<double>(c.features.rows());
  }
  Normalization n{sum / rows, Eigen::VectorXd::Zero(width)};
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(width);
  for (const auto& c : chunks) ss += (c.features.rowwise() - n.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  n.stddev = (ss / rows).array().sqrt();
  for (Eigen::Index j = 0; j < width; ++j)
    if (!(n.stddev(j) > 0.0)) n.stddev(j) = 1.0;
  return n;
}

inline void apply_normalization(const Normalization& norm, Chunk& chunk) {
  if (norm.mean.size() != chunk.features.cols())
    throw Error(ErrorKind::Shape, "normalization width " + std::to_string(norm.mean.size()) +
                                      " does not match chunk width " + std::to_string(chunk.features.cols()));
  chunk.features = ((chunk.features.rowwise() - norm.mean.transpose()).array().rowwise() /
                    norm.stddev.transpose().array())
                       .matrix();
}

// ---------------------------------------------------------------------------
// Pipeline

struct PrepareConfig {
  int window_len = 30;
  double train_fraction = 0.7;
  SelectionPolicy policy = SelectionPolicy::drop_least_significant(3);
  bool balance = true;
  bool normalize = true;
  double min_confidence = 0.0;
  std::uint64_t seed = 0;
};

struct ClassCounts {
  std::size_t truthful = 0;
  std::size_t deceptive = 0;

  std::size_t total() const { return truthful + deceptive; }
  bool operator==(const ClassCounts&) const = default;
};

inline ClassCounts count_classes(const std::vector<Chunk>& chunks) {
  ClassCounts c;
  for (const auto& ch : chunks) (ch.label == Label::Deceptive ? c.deceptive : c.truthful)++;
  return c;
}

struct PreparedData {
  std::vector<Chunk> train;
  std::vector<Chunk> test;
  FeatureSelection selection;
  std::optional<Normalization> normalization;
  std::uint64_t seed = 0;
  int window_len = 30;
  double train_fraction = 0.7;
  bool balanced = true;

  ClassCounts train_counts() const { return count_classes(train); }
  ClassCounts test_counts() const { return count_classes(test); }
};

/// One dataset's records together with its balancing rule.
struct DatasetRecords {
  std::string name;
  bool balancing_exempt = false;
  std::vector<ConfessionRecord> records;
};

inline std::vector<ConfessionRecord> validate_all(const std::vector<ConfessionRecord>& records, double min_confidence) {
  std::vector<ConfessionRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(validate_record(r, min_confidence).record);
  return out;
}

/// Chunks every record with a fixed selection and optional normalization,
/// without balancing. Used to score datasets outside a training subset.
inline std::vector<Chunk> chunk_records(const std::vector<ConfessionRecord>& records, const FeatureSelection& selection,
                                        int window_len, const std::optional<Normalization>& normalization) {
  std::vector<Chunk> out;
  for (const auto& r : records) {
    auto chunks = chunk_confession(r, selection, window_len);
    for (auto& c : chunks) {
      if (normalization) apply_normalization(*normalization, c);
      out.push_back(std::move(c));
    }
  }
  return out;
}

/// validate -> significance -> select -> chunk -> per-dataset balance -> pooled split -> normalize.
inline PreparedData prepare(const std::vector<DatasetRecords>& datasets, const PrepareConfig& config) {
  if (datasets.empty()) throw Error(ErrorKind::Spec, "prepare needs at least one dataset");
  if (config.window_len < 1) throw Error(ErrorKind::Spec, "window length must be >= 1");

  std::vector<std::vector<ConfessionRecord>> valid;
  std::vector<ConfessionRecord> all;
  for (const auto& ds : datasets) {
    valid.push_back(validate_all(ds.records, config.min_confidence));
    all.insert(all.end(), valid.back().begin(), valid.back().end());
  }

  PreparedData out;
  out.seed = config.seed;
  out.window_len = config.window_len;
  out.train_fraction = config.train_fraction;
  out.balanced = config.balance;
  out.selection = select_features(all, config.policy);

  std::vector<Chunk> pool;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    auto chunks = chunk_records(valid[d], out.selection, config.window_len, std::nullopt);
    if (config.balance && !datasets[d].balancing_exempt)
      chunks = balance_chunks(std::move(chunks), derive_seed(config.seed, "balance:" + datasets[d].name));
    pool.insert(pool.end(), std::make_move_iterator(chunks.begin()), std::make_move_iterator(chunks.end()));
  }

  std::tie(out.train, out.test) = split_chunks(std::move(pool), config.train_fraction, derive_seed(config.seed, "split"));
  if (config.normalize) {
    out.normalization = fit_normalization(out.train);
    for (auto& c : out.train) apply_normalization(*out.normalization, c);
    for (auto& c : out.test) apply_normalization(*out.normalization, c);
  }
  return out;
}

inline DatasetRecords load_dataset(const DatasetManifest& manifest) {
  return {manifest.name, manifest.balancing_exempt, load_records(manifest)};
}

inline PreparedData prepare(const std::vector<DatasetManifest>& manifests, const PrepareConfig& config) {
  std::vector<DatasetRecords> datasets;
  for (const auto& m : manifests) datasets.push_back(load_dataset(m));
  return prepare(datasets, config);
}

// ---------------------------------------------------------------------------
// On-disk form: meta.csv + train.bin/test.bin

inline constexpr std::string_view kChunkMagic = "AUCHUNK1\n";

inline std::string encode_chunks(const std::vector<Chunk>& chunks, int window_len, std::size_t width) {
  std::string out(kChunkMagic);
  binary::put<std::uint64_t>(out, chunks.size());
  binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(window_len));
  binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(width));
  for (const auto& c : chunks) {
    binary::put<std::uint8_t>(out, static_cast<std::uint8_t>(to_int(c.label)));
    binary::put_string(out, c.dataset);
    binary::put_string(out, c.confession_id);
    binary::put<std::int32_t>(out, c.index);
    for (Eigen::Index t = 0; t < c.features.rows(); ++t)
      for (Eigen::Index j = 0; j < c.features.cols(); ++j) binary::put<double>(out, c.features(t, j));
  }
  return out;
}

inline std::vector<Chunk> decode_chunks(std::string_view bytes, const std::string& what) {
  if (bytes.substr(0, kChunkMagic.size()) != kChunkMagic) throw Error(ErrorKind::Format, what + ": bad magic");
  binary::Reader in(bytes.substr(kChunkMagic.size()), ErrorKind::Format, what);
  const auto n = in.get<std::uint64_t>();
  const auto rows = static_cast<Eigen::Index>(in.get<std::uint32_t>());
  const auto cols = static_cast<Eigen::Index>(in.get<std::uint32_t>());
  std::vector<Chunk> chunks;
  for (std::uint64_t i = 0; i < n; ++i) {
    Chunk c;
    const auto label = in.get<std::uint8_t>();
    if (label > 1) throw Error(ErrorKind::Format, what + ": bad label byte");
    c.label = static_cast<Label>(label);
    c.dataset = in.get_string();
    c.confession_id = in.get_string();
    c.index = in.get<std::int32_t>();
    c.features.resize(rows, cols);
    for (Eigen::Index t = 0; t < rows; ++t)
      for (Eigen::Index j = 0; j < cols; ++j) c.features(t, j) = in.get<double>();
    chunks.push_back(std::move(c));
  }
  if (in.remaining() != 0) throw Error(ErrorKind::Format, what + ": trailing bytes");
  return chunks;
}

inline std::string encode_meta(const PreparedData& data) {
  using detail::format_double;
  std::string out = "key,index,value\n";
  const auto row = [&](std::string_view key, std::string_view index, const std::string& value) {
    out.append(key).append(",").append(index).append(",").append(value).append("\n");
  };
  row("seed", "", std::to_string(data.seed));
  row("window_len", "", std::to_string(data.window_len));
  row("train_fraction", "", format_double(data.train_fraction, 17));
  row("policy", "", data.selection.policy.describe());
  row("balanced", "", data.balanced ? "true" : "false");
  row("feature_width", "", std::to_string(data.selection.width()));
  for (std::size_t i = 0; i < data.selection.kept_indices.size(); ++i)
    row("kept_index", std::to_string(i), std::to_string(data.selection.kept_indices[i]));
  for (std::size_t i = 0; i < data.selection.p_values.size(); ++i)
    row("p_value", feature_name(i), format_double(data.selection.p_values[i], 17));
  row("normalized", "", data.normalization ? "true" : "false");
  if (data.normalization) {
    for (Eigen::Index j = 0; j < data.normalization->mean.size(); ++j)
      row("norm_mean", std::to_string(j), format_double(data.normalization->mean(j), 17));
    for (Eigen::Index j = 0; j < data.normalization->stddev.size(); ++j)
      row("norm_std", std::to_string(j), format_double(data.normalization->stddev(j), 17));
  }
  const auto tc = data.train_counts();
  const auto sc = data.test_counts();
  row("count", "train_truthful", std::to_string(tc.truthful));
  row("count", "train_deceptive", std::to_string(tc.deceptive));
  row("count", "test_truthful", std::to_string(sc.truthful));
  row("count", "test_deceptive", std::to_string(sc.deceptive));
  return out;
}

inline void save_prepared(const PreparedData& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  detail::write_file(dir / "meta.csv", encode_meta(data));
  detail::write_file(dir / "train.bin", encode_chunks(data.train, data.window_len, data.selection.width()));
  detail::write_file(dir / "test.bin", encode_chunks(data.test, data.window_len, data.selection.width()));
}

inline SelectionPolicy parse_policy(std::string_view text) {
  if (text == "keep_all") return SelectionPolicy::keep_all();
  if (text.starts_with("drop_k:")) {
    auto k = detail::parse_double(text.substr(7));
    if (!k) throw Error(ErrorKind::Format, "bad policy '" + std::string(text) + "'");
    return SelectionPolicy::drop_least_significant(static_cast<int>(*k));
  }
  if (text.starts_with("explicit_drop:")) {
    std::vector<int> drop;
    auto rest = text.substr(14);
    while (!rest.empty()) {
      const auto semi = rest.find(';');
      auto v = detail::parse_double(rest.substr(0, semi));
      if (!v) throw Error(ErrorKind::Format, "bad policy '" + std::string(text) + "'");
      drop.push_back(static_cast<int>(*v));
      if (semi == std::string_view::npos) break;
      rest.remove_prefix(semi + 1);
    }
    return SelectionPolicy::explicit_drop(std::move(drop));
  }
  throw Error(ErrorKind::Format, "bad policy '" + std::string(text) + "'");
}

inline PreparedData load_prepared(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.csv";
  const auto text = detail::read_file(meta_path);
  PreparedData data;
  std::vector<double> mean;
  std::vector<double> stddev;
  const auto number = [&](std::string_view v) {
    auto d = detail::parse_double(v);
    if (!d) throw Error(ErrorKind::Format, meta_path.string() + ": bad number '" + std::string(v) + "'");
    return *d;
  };
  bool first = true;
  for (const auto& [line_no, line] : detail::split_lines(text)) {
    if (first) {
      first = false;
      continue;
    }
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 3) throw Error(ErrorKind::Format, meta_path.string() + ": line " + std::to_string(line_no));
    const auto key = cells[0];
    const auto value = cells[2];
    if (key == "seed") {
      std::uint64_t s = 0;
      std::from_chars(value.data(), value.data() + value.size(), s);
      data.seed = s;
    } else if (key == "window_len") {
      data.window_len = static_cast<int>(number(value));
    } else if (key == "train_fraction") {
      data.train_fraction = number(value);
    } else if (key == "policy") {
      data.selection.policy = parse_policy(value);
    } else if (key == "balanced") {
      data.balanced = value == "true";
    } else if (key == "kept_index") {
      data.selection.kept_indices.push_back(static_cast<int>(number(value)));
    } else if (key == "p_value") {
      data.selection.p_values.push_back(number(value));
    } else if (key == "norm_mean") {
      mean.push_back(number(value));
    } else if (key == "norm_std") {
      stddev.push_back(number(value));
    }
  }
  if (!mean.empty()) {
    if (mean.size() != stddev.size() || mean.size() != data.selection.width())
      throw Error(ErrorKind::Format, meta_path.string() + ": normalization width mismatch");
    data.normalization = Normalization{Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                                       Eigen::Map<Eigen::VectorXd>(stddev.data(), static_cast<Eigen::Index>(stddev.size()))};
  }
  data.train = decode_chunks(detail::read_file(dir / "train.bin"), (dir / "train.bin").string());
  data.test = decode_chunks(detail::read_file(dir / "test.bin"), (dir / "test.bin").string());
  return data;
}

}  // namespace auseq
