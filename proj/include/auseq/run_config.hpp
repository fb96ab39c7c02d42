#pragma once

// Flat key=value run configuration: defaults < AUSEQ_SEED < config file < flags.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "auseq/core.hpp"
#include "auseq/evaluation.hpp"
#include "auseq/ingest.hpp"
#include "auseq/preprocess.hpp"
#include "auseq/training.hpp"

namespace auseq {

class RunConfig {
 public:
  RunConfig() : values_(defaults()) {}

  static const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        {"seed", "0"},
        // synthetic generator
        {"confessions", "20"},
        {"frames_min", "300"},
        {"frames_max", "300"},
        {"n_discriminative", "4"},
        {"mean_shift", "2"},
        {"ar_coefficient", "0.5"},
        {"noise_sd", "1"},
        {"channel_offset", "0"},
        {"dataset", "synthetic"},
        {"fps", "30"},
        {"balancing_exempt", "false"},
        // preprocessing
        {"window", "30"},
        {"split", "0.7"},
        {"drop_k", "3"},
        {"balance", "true"},
        {"normalize", "true"},
        {"min_confidence", "0"},
        // training
        {"epochs", "60"},
        {"batch_size", "32"},
        {"learning_rate", "0.001"},
        {"beta1", "0.9"},
        {"beta2", "0.999"},
        {"epsilon", "1e-08"},
        {"dropout", "0.5"},
        {"hidden", "64"},
        {"shuffle", "true"},
        {"jobs", "1"},
    };
    return d;
  }

  static bool known(std::string_view key) { return defaults().contains(std::string(key)); }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw Error(ErrorKind::Config, "unknown key '" + key + "'");
    values_[key] = value;
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(ErrorKind::Config, "unknown key '" + key + "'");
    return it->second;
  }

  /// Applies AUSEQ_SEED if set in the environment.
  void apply_environment() {
    if (const char* s = std::getenv("AUSEQ_SEED"); s != nullptr && *s != '\0') set("seed", s);
  }

  void apply_text(std::string_view text, const std::string& origin) {
    for (const auto& [line_no, raw] : detail::split_lines(text)) {
      const auto line = detail::trim(raw);
      if (line.front() == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw Error(ErrorKind::Config, origin + " line " + std::to_string(line_no) + ": expected key=value");
      const std::string key(detail::trim(line.substr(0, eq)));
      if (!known(key))
        throw Error(ErrorKind::Config, origin + " line " + std::to_string(line_no) + ": unknown key '" + key + "'");
      values_[key] = std::string(detail::trim(line.substr(eq + 1)));
    }
  }

  void apply_file(const std::filesystem::path& path) { apply_text(detail::read_file(path), path.string()); }

  /// Effective configuration, one sorted key=value per line; replayable via apply_file.
  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  // Typed access. Every getter validates the value and names the key on failure.

  std::uint64_t get_u64(const std::string& key) const {
    const auto& v = get(key);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) fail(key, "expected an unsigned integer");
    return out;
  }

  int get_int(const std::string& key) const {
    const auto& v = get(key);
    int out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) fail(key, "expected an integer");
    return out;
  }

  double get_double(const std::string& key) const {
    auto d = detail::parse_double(get(key));
    if (!d || !std::isfinite(*d)) fail(key, "expected a number");
    return *d;
  }

  bool get_bool(const std::string& key) const {
    const auto v = detail::lower(get(key));
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(key, "expected true or false");
  }

  std::uint64_t stage_seed(std::string_view stage) const { return derive_seed(get_u64("seed"), stage); }

  SyntheticSpec synthetic_spec() const {
    SyntheticSpec s;
    s.dataset = get("dataset");
    s.n_confessions = get_int("confessions");
    s.frames_min = get_int("frames_min");
    s.frames_max = get_int("frames_max");
    s.n_discriminative = get_int("n_discriminative");
    s.mean_shift = get_double("mean_shift");
    s.ar_coefficient = get_double("ar_coefficient");
    s.noise_sd = get_double("noise_sd");
    s.channel_offset = get_int("channel_offset");
    s.fps = get_double("fps");
    s.balancing_exempt = get_bool("balancing_exempt");
    s.window_len = get_int("window");
    s.seed = stage_seed("synth");
    s.validate();
    return s;
  }

  PrepareConfig prepare_config() const {
    PrepareConfig p;
    p.window_len = get_int("window");
    if (p.window_len < 1) fail("window", "must be >= 1");
    p.train_fraction = get_double("split");
    if (!(p.train_fraction > 0 && p.train_fraction < 1)) fail("split", "must be in (0,1)");
    const int k = get_int("drop_k");
    if (k < 0 || k >= static_cast<int>(kFeatureCount)) fail("drop_k", "must be in [0,34]");
    p.policy = SelectionPolicy::drop_least_significant(k);
    p.balance = get_bool("balance");
    p.normalize = get_bool("normalize");
    p.min_confidence = get_double("min_confidence");
    if (p.min_confidence < 0 || p.min_confidence > 1) fail("min_confidence", "must be in [0,1]");
    p.seed = stage_seed("prepare");
    return p;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.epochs = get_int("epochs");
    t.batch_size = get_int("batch_size");
    t.learning_rate = get_double("learning_rate");
    t.beta1 = get_double("beta1");
    t.beta2 = get_double("beta2");
    t.epsilon = get_double("epsilon");
    t.dropout_rate = get_double("dropout");
    t.hidden_dim = get_int("hidden");
    t.shuffle_each_epoch = get_bool("shuffle");
    t.jobs = get_int("jobs");
    t.seed = stage_seed("train");
    t.validate();
    return t;
  }

 private:
  [[noreturn]] static void fail(const std::string& key, const std::string& msg) {
    throw Error(ErrorKind::Config, "invalid value for '" + key + "': " + msg);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace auseq
