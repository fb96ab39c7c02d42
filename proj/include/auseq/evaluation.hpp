#pragma once

// Chunk-level CCR, confession verdicts, and the cross-dataset matrix.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "auseq/core.hpp"
#include "auseq/model.hpp"
#include "auseq/preprocess.hpp"
#include "auseq/training.hpp"

namespace auseq {

/// confusion[actual][predicted], 0 = truthful, 1 = deceptive.
using Confusion = std::array<std::array<std::size_t, 2>, 2>;

struct ConfessionSummary {
  std::string dataset;
  std::string id;
  Label label = Label::Truthful;
  Label verdict = Label::Truthful;
  double mean_probability = 0.0;
  /// Fraction of chunks individually classified deceptive.
  double deceptive_fraction = 0.0;
  std::size_t n_chunks = 0;
};

struct EvalReport {
  double ccr = 0.0;
  std::size_t n_chunks = 0;
  Confusion confusion{};
  std::vector<ConfessionSummary> per_confession;
};

struct Verdict {
  Label verdict = Label::Truthful;
  double mean_probability = 0.0;
  double deceptive_fraction = 0.0;
  std::size_t n_chunks = 0;
};

/// Mean-probability fusion: deceptive iff the mean chunk probability >= 0.5.
inline Verdict aggregate_verdict(const std::vector<double>& probabilities) {
  if (probabilities.empty()) throw Error(ErrorKind::TooShort, "no chunks to aggregate");
  Verdict v;
  double sum = 0.0;
  std::size_t deceptive = 0;
  for (double p : probabilities) {
    sum += p;
    if (p >= 0.5) ++deceptive;
  }
  v.n_chunks = probabilities.size();
  v.mean_probability = sum / static_cast<double>(v.n_chunks);
  v.deceptive_fraction = static_cast<double>(deceptive) / static_cast<double>(v.n_chunks);
  v.verdict = v.mean_probability >= 0.5 ? Label::Deceptive : Label::Truthful;
  return v;
}

/// Confusion matrix and CCR from parallel label vectors.
inline EvalReport tally(const std::vector<int>& predicted, const std::vector<int>& actual) {
  if (predicted.size() != actual.size()) throw Error(ErrorKind::Shape, "prediction and label counts differ");
  if (predicted.empty()) throw Error(ErrorKind::Spec, "cannot evaluate zero chunks");
  EvalReport r;
  r.n_chunks = predicted.size();
  for (std::size_t i = 0; i < predicted.size(); ++i)
    ++r.confusion[static_cast<std::size_t>(actual[i])][static_cast<std::size_t>(predicted[i])];
  r.ccr = static_cast<double>(r.confusion[0][0] + r.confusion[1][1]) / static_cast<double>(r.n_chunks);
  return r;
}

inline EvalReport evaluate_chunks(const ModelParams& params, const std::vector<Chunk>& chunks, int jobs = 1) {
  if (chunks.empty()) throw Error(ErrorKind::Spec, "cannot evaluate zero chunks");
  std::vector<Prediction> preds(chunks.size());
  detail::parallel_for(chunks.size(), jobs, [&](std::size_t i) { preds[i] = predict_chunk(params, chunks[i].features); });

  std::vector<int> predicted(chunks.size());
  std::vector<int> actual(chunks.size());
  std::map<std::pair<std::string, std::string>, std::pair<Label, std::vector<double>>> groups;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    predicted[i] = preds[i].label_hat;
    actual[i] = to_int(chunks[i].label);
    auto& g = groups[{chunks[i].dataset, chunks[i].confession_id}];
    g.first = chunks[i].label;
    g.second.push_back(preds[i].probability);
  }
  auto report = tally(predicted, actual);
  for (const auto& [key, group] : groups) {
    const auto v = aggregate_verdict(group.second);
    report.per_confession.push_back(
        {key.first, key.second, group.first, v.verdict, v.mean_probability, v.deceptive_fraction, v.n_chunks});
  }
  return report;
}

/// Scores a whole confession with the model's stored selection and
/// normalization. Frames with success == false (or below min_confidence) are
/// removed first.
inline Verdict confession_verdict(const ModelParams& params, const ConfessionRecord& record,
                                  const FeatureSelection& selection, const std::optional<Normalization>& normalization,
                                  int window_len = 30, double min_confidence = 0.0) {
  const auto valid = validate_record(record, min_confidence).record;
  if (valid.frames.size() < static_cast<std::size_t>(window_len))
    throw Error(ErrorKind::TooShort, "confession '" + record.id + "' is too short: " +
                                         std::to_string(valid.frames.size()) + " valid frames, need at least " +
                                         std::to_string(window_len));
  const auto chunks = chunk_records({valid}, selection, window_len, normalization);
  std::vector<double> probabilities;
  for (const auto& c : chunks) probabilities.push_back(predict_chunk(params, c.features).probability);
  return aggregate_verdict(probabilities);
}

inline std::string eval_report_csv(const EvalReport& report) {
  using detail::format_double;
  std::string out = "section,dataset,id,label,verdict,mean_probability,deceptive_fraction,n_chunks,value\n";
  out += "summary,,,,,,,," + std::to_string(report.n_chunks) + "\n";
  out += "ccr,,,,,,,," + format_double(report.ccr, 10) + "\n";
  const std::array<const char*, 2> names = {"truthful", "deceptive"};
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t p = 0; p < 2; ++p)
      out += std::string("confusion,,,") + names[a] + "," + names[p] + ",,,," + std::to_string(report.confusion[a][p]) + "\n";
  for (const auto& c : report.per_confession) {
    out += "confession," + c.dataset + "," + c.id + "," + to_string(c.label) + "," + to_string(c.verdict) + "," +
           format_double(c.mean_probability, 10) + "," + format_double(c.deceptive_fraction, 10) + "," +
           std::to_string(c.n_chunks) + ",\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-dataset matrix

struct CrossCell {
  std::optional<double> accuracy;
  std::size_t n_chunks = 0;
  std::string missing_reason;
};

struct CrossRow {
  std::vector<bool> in_train;
  std::vector<CrossCell> cells;
};

struct CrossMatrix {
  std::vector<std::string> datasets;
  std::vector<CrossRow> rows;
};

struct CrossConfig {
  PrepareConfig prepare;
  TrainConfig train;
};

/// All non-empty subsets of {0..n-1}: by size, then lexicographically.
inline std::vector<std::vector<bool>> enumerate_subsets(std::size_t n) {
  std::vector<std::vector<bool>> out;
  for (std::size_t size = 1; size <= n; ++size) {
    std::vector<bool> pick(n, false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(size), true);
    do {
      out.push_back(pick);
    } while (std::prev_permutation(pick.begin(), pick.end()));
  }
  return out;
}

struct SubsetRun {
  PreparedData prepared;
  ModelParams params;
  std::vector<CrossCell> cells;
  /// Chunks each cell was scored on, for leakage auditing.
  std::vector<std::vector<Chunk>> scored;
};

/// Trains on the datasets flagged in `in_train` and scores every dataset:
/// held-out test chunks for members, all chunks for non-members (using the
/// subset's selection and normalization).
inline SubsetRun run_subset(const std::vector<DatasetRecords>& registry, const std::vector<bool>& in_train,
                            const CrossConfig& config) {
  std::vector<DatasetRecords> members;
  for (std::size_t d = 0; d < registry.size(); ++d)
    if (in_train[d]) members.push_back(registry[d]);
  if (members.empty()) throw Error(ErrorKind::Spec, "training subset is empty");

  SubsetRun run;
  run.prepared = prepare(members, config.prepare);
  run.params = train(run.prepared, config.train).params;

  for (std::size_t d = 0; d < registry.size(); ++d) {
    std::vector<Chunk> chunks;
    std::string reason;
    if (in_train[d]) {
      for (const auto& c : run.prepared.test)
        if (c.dataset == registry[d].name) chunks.push_back(c);
      if (chunks.empty()) reason = "no held-out test chunks for " + registry[d].name;
    } else {
      try {
        chunks = chunk_records(validate_all(registry[d].records, config.prepare.min_confidence), run.prepared.selection,
                               config.prepare.window_len, run.prepared.normalization);
        if (chunks.empty()) reason = "every confession in " + registry[d].name + " is shorter than one window";
      } catch (const Error& e) {
        reason = e.what();
      }
    }
    CrossCell cell;
    cell.n_chunks = chunks.size();
    if (chunks.empty())
      cell.missing_reason = reason;
    else
      cell.accuracy = evaluate_chunks(run.params, chunks, config.train.jobs).ccr;
    run.cells.push_back(std::move(cell));
    run.scored.push_back(std::move(chunks));
  }
  return run;
}

/// One row per non-empty training subset. Each subset trains with seeds
/// derived from the configured seeds and the subset's membership mask.
inline CrossMatrix cross_dataset_matrix(const std::vector<DatasetRecords>& registry, const CrossConfig& config,
                                        const std::function<void(std::size_t, const CrossRow&)>& on_row = {}) {
  if (registry.empty()) throw Error(ErrorKind::Spec, "cross-dataset matrix needs at least one dataset");
  CrossMatrix matrix;
  for (const auto& d : registry) matrix.datasets.push_back(d.name);
  std::size_t r = 0;
  for (const auto& subset : enumerate_subsets(registry.size())) {
    std::uint64_t mask = 0;
    for (std::size_t d = 0; d < subset.size(); ++d)
      if (subset[d]) mask |= std::uint64_t{1} << d;
    CrossConfig cfg = config;
    cfg.prepare.seed = derive_seed(config.prepare.seed, "subset", mask);
    cfg.train.seed = derive_seed(config.train.seed, "subset", mask);
    CrossRow row{subset, {}};
    try {
      row.cells = run_subset(registry, subset, cfg).cells;
    } catch (const Error& e) {
      // A subset that cannot be prepared or trained still gets a row.
      row.cells.assign(registry.size(), CrossCell{std::nullopt, 0, std::string("training failed: ") + e.what()});
    }
    matrix.rows.push_back(std::move(row));
    if (on_row) on_row(r, matrix.rows.back());
    ++r;
  }
  return matrix;
}

inline std::string cross_matrix_csv(const CrossMatrix& m) {
  std::string out;
  for (const auto& d : m.datasets) out += d + "_in_train,";
  for (const auto& d : m.datasets) out += d + "_accuracy,";
  out += "notes\n";
  for (const auto& row : m.rows) {
    for (bool b : row.in_train) out += b ? "YES," : "NO,";
    std::string notes;
    for (std::size_t d = 0; d < row.cells.size(); ++d) {
      const auto& c = row.cells[d];
      out += c.accuracy ? detail::format_double(*c.accuracy, 6) : std::string("NA");
      out += ',';
      if (!c.accuracy) notes += (notes.empty() ? "" : "; ") + m.datasets[d] + ": " + c.missing_reason;
    }
    // Notes may contain commas; keep the column count fixed.
    std::replace(notes.begin(), notes.end(), ',', ' ');
    out += notes + "\n";
  }
  return out;
}

}  // namespace auseq
