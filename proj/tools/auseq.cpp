// auseq: command-line driver for the AU sequence deception pipeline.
//
//   auseq synth   --out DIR [--seed N] [--confessions N] ...
//   auseq prepare --manifest M [--manifest M2 ...] --out DIR [--drop-k 3] [--window 30] [--split 0.7]
//   auseq train   --data DIR --out DIR [--epochs N] ...
//   auseq eval    --model FILE --data DIR --out DIR
//   auseq predict --model FILE --csv FILE [--window 30]
//   auseq cross   --manifest M1 --manifest M2 ... --out DIR [--jobs N]

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "auseq/auseq.hpp"
#include "auseq/run_config.hpp"

namespace fs = std::filesystem;
using namespace auseq;

namespace {

void log_line(const std::string& msg) { std::cerr << "[auseq] " << msg << '\n'; }

/// Flag values collected from the command line, keyed by RunConfig key.
struct Flags {
  std::map<std::string, std::string> values;
  std::string config_file;
};

void add_value(CLI::App* cmd, Flags& flags, const std::string& flag, const std::string& key, const std::string& help) {
  cmd->add_option_function<std::string>(flag, [&flags, key](const std::string& v) { flags.values[key] = v; }, help);
}

void add_switch(CLI::App* cmd, Flags& flags, const std::string& flag, const std::string& key, const std::string& value,
                const std::string& help) {
  cmd->add_flag_callback(flag, [&flags, key, value] { flags.values[key] = value; }, help);
}

void add_common(CLI::App* cmd, Flags& flags) {
  cmd->add_option("--config", flags.config_file, "key=value config file");
  add_value(cmd, flags, "--seed", "seed", "master seed (all stage seeds derive from it)");
}

void add_prepare_flags(CLI::App* cmd, Flags& flags) {
  add_value(cmd, flags, "--drop-k", "drop_k", "drop the k least significant AU features (default 3)");
  add_value(cmd, flags, "--window", "window", "chunk length in frames (default 30)");
  add_value(cmd, flags, "--split", "split", "train fraction (default 0.7)");
  add_value(cmd, flags, "--min-confidence", "min_confidence", "drop frames below this tracker confidence");
  add_switch(cmd, flags, "--no-balance", "balance", "false", "skip 1:1 class balancing");
  add_switch(cmd, flags, "--no-normalize", "normalize", "false", "skip z-score normalization");
}

void add_train_flags(CLI::App* cmd, Flags& flags) {
  add_value(cmd, flags, "--epochs", "epochs", "training epochs");
  add_value(cmd, flags, "--batch-size", "batch_size", "mini-batch size");
  add_value(cmd, flags, "--lr", "learning_rate", "Adam learning rate");
  add_value(cmd, flags, "--dropout", "dropout", "dropout rate");
  add_value(cmd, flags, "--hidden", "hidden", "LSTM hidden width");
  add_value(cmd, flags, "--jobs", "jobs", "worker threads (results do not depend on it)");
}

RunConfig resolve(const Flags& flags) {
  RunConfig cfg;
  cfg.apply_environment();
  if (!flags.config_file.empty()) cfg.apply_file(flags.config_file);
  for (const auto& [k, v] : flags.values) cfg.set(k, v);
  return cfg;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

void echo_config(const RunConfig& cfg, const fs::path& dir, const std::string& command,
                 const std::vector<std::string>& inputs) {
  std::string text = "# command=" + command + "\n";
  for (const auto& in : inputs) text += "# input=" + in + "\n";
  text += cfg.to_text();
  detail::write_file(dir / "run_config.txt", text);
}

std::vector<DatasetManifest> load_manifests(const std::vector<std::string>& paths) {
  if (paths.empty()) throw Error(ErrorKind::Config, "at least one --manifest is required");
  std::vector<DatasetManifest> out;
  for (const auto& p : paths) out.push_back(load_manifest(p));
  return out;
}

int cmd_synth(const Flags& flags, const std::string& out) {
  const auto cfg = resolve(flags);
  const auto spec = cfg.synthetic_spec();
  const auto manifest = generate_synthetic(spec, out);
  echo_config(cfg, out, "synth", {});
  log_line("wrote " + std::to_string(manifest.entries.size()) + " confessions to " + out);
  return 0;
}

int cmd_prepare(const Flags& flags, const std::vector<std::string>& manifests, const std::string& out) {
  const auto cfg = resolve(flags);
  const auto config = cfg.prepare_config();
  const auto data = prepare(load_manifests(manifests), config);
  make_dir(out);
  save_prepared(data, out);
  echo_config(cfg, out, "prepare", manifests);
  const auto tc = data.train_counts();
  const auto sc = data.test_counts();
  log_line("kept " + std::to_string(data.selection.width()) + " features; train " + std::to_string(tc.truthful) +
           "T/" + std::to_string(tc.deceptive) + "D, test " + std::to_string(sc.truthful) + "T/" +
           std::to_string(sc.deceptive) + "D");
  return 0;
}

int cmd_train(const Flags& flags, const std::string& data_dir, const std::string& out) {
  const auto cfg = resolve(flags);
  const auto config = cfg.train_config();
  const auto data = load_prepared(data_dir);
  make_dir(out);
  const auto result = train(data, config, [](const EpochRecord& e) {
    std::string line = "epoch " + std::to_string(e.epoch) + " loss=" + detail::format_double(e.mean_loss, 6) +
                       " train_ccr=" + detail::format_double(e.train_ccr, 6);
    if (e.validation_ccr) line += " test_ccr=" + detail::format_double(*e.validation_ccr, 6);
    log_line(line);
  });
  save_checkpoint(result.params, data.selection, data.normalization, fs::path(out) / "model.ckpt");
  detail::write_file(fs::path(out) / "history.csv", history_csv(result.history));
  echo_config(cfg, out, "train", {data_dir});
  return 0;
}

int cmd_eval(const Flags& flags, const std::string& model, const std::string& data_dir, const std::string& out) {
  const auto cfg = resolve(flags);
  const auto ck = load_checkpoint(model);
  const auto data = load_prepared(data_dir);
  if (data.selection.kept_indices != ck.kept_indices)
    throw Error(ErrorKind::Shape, "prepared data selection does not match the checkpoint");
  const auto report = evaluate_chunks(ck.params, data.test, cfg.get_int("jobs"));
  make_dir(out);
  detail::write_file(fs::path(out) / "eval_report.csv", eval_report_csv(report));
  echo_config(cfg, out, "eval", {model, data_dir});
  std::cout << "ccr," << detail::format_double(report.ccr, 6) << "," << report.n_chunks << "\n";
  return 0;
}

int cmd_predict(const Flags& flags, const std::string& model, const std::string& csv) {
  const auto cfg = resolve(flags);
  const auto ck = load_checkpoint(model);
  const auto id = fs::path(csv).stem().string();
  const auto record = make_record(id, "", Label::Truthful, 30.0, parse_au_csv_file(csv));
  const auto v = confession_verdict(ck.params, record, ck.selection(), ck.normalization, cfg.get_int("window"),
                                    cfg.get_double("min_confidence"));
  std::cout << to_string(v.verdict) << "," << detail::format_double(v.mean_probability, 6) << "," << v.n_chunks << "\n";
  return 0;
}

int cmd_cross(const Flags& flags, const std::vector<std::string>& manifests, const std::string& out) {
  const auto cfg = resolve(flags);
  CrossConfig config{cfg.prepare_config(), cfg.train_config()};
  std::vector<DatasetRecords> registry;
  for (const auto& m : load_manifests(manifests)) registry.push_back(load_dataset(m));
  const auto matrix = cross_dataset_matrix(registry, config, [&](std::size_t r, const CrossRow& row) {
    std::string line = "subset " + std::to_string(r + 1) + ":";
    for (std::size_t d = 0; d < row.cells.size(); ++d)
      line += " " + registry[d].name + (row.in_train[d] ? "*" : "") + "=" +
              (row.cells[d].accuracy ? detail::format_double(*row.cells[d].accuracy, 4) : "NA");
    log_line(line);
  });
  make_dir(out);
  detail::write_file(fs::path(out) / "cross_matrix.csv", cross_matrix_csv(matrix));
  echo_config(cfg, out, "cross", manifests);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AU sequence LSTM deception-detection pipeline"};
  app.require_subcommand(1);

  Flags flags;
  std::string out, data_dir, model, csv;
  std::vector<std::string> manifests;

  auto* synth = app.add_subcommand("synth", "generate a seeded synthetic AU dataset");
  add_common(synth, flags);
  synth->add_option("--out", out, "output directory")->required();
  add_value(synth, flags, "--confessions", "confessions", "number of confessions (>= 2)");
  add_value(synth, flags, "--frames-min", "frames_min", "minimum frames per confession");
  add_value(synth, flags, "--frames-max", "frames_max", "maximum frames per confession");
  add_value(synth, flags, "--discriminative", "n_discriminative", "number of shifted channels");
  add_value(synth, flags, "--mean-shift", "mean_shift", "deceptive-class mean shift");
  add_value(synth, flags, "--ar", "ar_coefficient", "AR(1) coefficient in [0,1)");
  add_value(synth, flags, "--noise-sd", "noise_sd", "intensity noise standard deviation");
  add_value(synth, flags, "--channel-offset", "channel_offset", "first shifted channel");
  add_value(synth, flags, "--dataset", "dataset", "dataset name");
  add_value(synth, flags, "--fps", "fps", "frames per second");
  add_value(synth, flags, "--window", "window", "window length the data must support");
  add_switch(synth, flags, "--balancing-exempt", "balancing_exempt", "true", "mark the manifest exempt from balancing");

  auto* prep = app.add_subcommand("prepare", "select features, chunk, balance and split");
  add_common(prep, flags);
  prep->add_option("--manifest", manifests, "dataset manifest (repeatable)")->required();
  prep->add_option("--out", out, "output directory")->required();
  add_prepare_flags(prep, flags);

  auto* tr = app.add_subcommand("train", "train the LSTM on prepared data");
  add_common(tr, flags);
  tr->add_option("--data", data_dir, "prepared data directory")->required();
  tr->add_option("--out", out, "output directory")->required();
  add_train_flags(tr, flags);

  auto* ev = app.add_subcommand("eval", "score a checkpoint on the prepared test split");
  add_common(ev, flags);
  ev->add_option("--model", model, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "prepared data directory")->required();
  ev->add_option("--out", out, "output directory")->required();
  add_value(ev, flags, "--jobs", "jobs", "worker threads");

  auto* pr = app.add_subcommand("predict", "verdict for one AU CSV");
  add_common(pr, flags);
  pr->add_option("--model", model, "checkpoint file")->required();
  pr->add_option("--csv", csv, "OpenFace AU CSV")->required();
  add_value(pr, flags, "--window", "window", "chunk length in frames (default 30)");
  add_value(pr, flags, "--min-confidence", "min_confidence", "drop frames below this tracker confidence");

  auto* cr = app.add_subcommand("cross", "cross-dataset validation matrix");
  add_common(cr, flags);
  cr->add_option("--manifest", manifests, "dataset manifest (repeatable)")->required();
  cr->add_option("--out", out, "output directory")->required();
  add_prepare_flags(cr, flags);
  add_train_flags(cr, flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(flags, out);
    if (prep->parsed()) return cmd_prepare(flags, manifests, out);
    if (tr->parsed()) return cmd_train(flags, data_dir, out);
    if (ev->parsed()) return cmd_eval(flags, model, data_dir, out);
    if (pr->parsed()) return cmd_predict(flags, model, csv);
    if (cr->parsed()) return cmd_cross(flags, manifests, out);
  } catch (const std::exception& e) {
    std::cerr << "auseq: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
