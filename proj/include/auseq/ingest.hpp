#pragma once

// OpenFace-format AU CSV parsing, confession records, dataset manifests and
// the seeded synthetic dataset generator.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "auseq/core.hpp"
#include "auseq/random.hpp"

namespace auseq {

inline constexpr std::size_t kIntensityCount = 17;
inline constexpr std::size_t kPresenceCount = 18;
inline constexpr std::size_t kFeatureCount = kIntensityCount + kPresenceCount;

/// AU numbers of the OpenFace intensity (`_r`) channels, ascending.
inline constexpr std::array<int, kIntensityCount> kIntensityAUs = {
    1, 2, 4, 5, 6, 7, 9, 10, 12, 14, 15, 17, 20, 23, 25, 26, 45};
/// AU numbers of the OpenFace presence (`_c`) channels, ascending. AU28 has no intensity.
inline constexpr std::array<int, kPresenceCount> kPresenceAUs = {
    1, 2, 4, 5, 6, 7, 9, 10, 12, 14, 15, 17, 20, 23, 25, 26, 28, 45};

inline std::string au_column_name(int au, char suffix) {
  std::string name = "AU";
  if (au < 10) name += '0';
  name += std::to_string(au);
  name += '_';
  name += suffix;
  return name;
}

/// Name of concatenated feature `index` (intensities first, then presences).
inline std::string feature_name(std::size_t index) {
  if (index < kIntensityCount) return au_column_name(kIntensityAUs[index], 'r');
  return au_column_name(kPresenceAUs[index - kIntensityCount], 'c');
}

struct AUFrame {
  std::int64_t frame_index = 0;
  double timestamp_s = 0.0;
  double confidence = 0.0;
  bool success = false;
  std::array<double, kIntensityCount> au_intensity{};
  std::array<double, kPresenceCount> au_presence{};

  /// The 35-wide feature vector: 17 intensities followed by 18 presences.
  std::array<double, kFeatureCount> features() const {
    std::array<double, kFeatureCount> out{};
    std::copy(au_intensity.begin(), au_intensity.end(), out.begin());
    std::copy(au_presence.begin(), au_presence.end(), out.begin() + kIntensityCount);
    return out;
  }

  double feature(std::size_t index) const {
    return index < kIntensityCount ? au_intensity[index] : au_presence[index - kIntensityCount];
  }

  bool operator==(const AUFrame&) const = default;
};

struct ConfessionRecord {
  std::string id;
  std::string dataset;
  Label label = Label::Truthful;
  double fps = 30.0;
  std::vector<AUFrame> frames;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      return cells;
    }
    cells.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

/// Splits on LF, strips an optional CR, skips blank lines. Line numbers are 1-based.
inline std::vector<std::pair<std::size_t, std::string_view>> split_lines(std::string_view text) {
  std::vector<std::pair<std::size_t, std::string_view>> lines;
  std::size_t number = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++number;
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!trim(line).empty()) lines.emplace_back(number, line);
    start = end + 1;
  }
  return lines;
}

inline std::optional<double> parse_double(std::string_view s) {
  double value = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return value;
}

/// Returns the AU number for headers like `AU04_r`, or nullopt.
inline std::optional<int> au_number(std::string_view name, char suffix) {
  if (name.size() < 5 || name.substr(0, 2) != "AU") return std::nullopt;
  if (name[name.size() - 2] != '_' || name.back() != suffix) return std::nullopt;
  const auto digits = name.substr(2, name.size() - 4);
  int au = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), au);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) return std::nullopt;
  return au;
}

/// Shortest-enough general format with `digits` significant digits, locale-independent.
inline std::string format_double(double v, int digits) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, digits);
  return std::string(buf, res.ptr);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error(ErrorKind::Io, "short write to " + path.string());
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace detail

/// Parses an OpenFace AU CSV. AU columns are located by header name, so
/// landmark/gaze/pose columns may appear anywhere and are ignored. Invalid
/// frames (success == 0) are kept; see validate_record.
inline std::vector<AUFrame> parse_au_csv(std::string_view bytes) {
  const auto lines = detail::split_lines(bytes);
  if (lines.empty()) throw Error(ErrorKind::Format, "missing header: expected column 'frame'");

  const auto header = detail::split_csv_line(lines.front().second);
  std::map<std::string, std::size_t, std::less<>> by_name;
  std::map<int, std::size_t> intensity_cols;
  std::map<int, std::size_t> presence_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    by_name.emplace(std::string(header[i]), i);
    if (auto au = detail::au_number(header[i], 'r')) intensity_cols[*au] = i;
    if (auto au = detail::au_number(header[i], 'c')) presence_cols[*au] = i;
  }

  std::array<std::size_t, 4> meta{};
  const std::array<const char*, 4> meta_names = {"frame", "timestamp", "confidence", "success"};
  for (std::size_t k = 0; k < meta_names.size(); ++k) {
    auto it = by_name.find(meta_names[k]);
    if (it == by_name.end())
      throw Error(ErrorKind::Format, std::string("missing header column '") + meta_names[k] + "'");
    meta[k] = it->second;
  }

  const auto check_au = [](const std::map<int, std::size_t>& cols, auto const& expected, char suffix) {
    if (cols.size() >= expected.size()) {
      if (cols.size() > expected.size())
        throw Error(ErrorKind::Format, "too many _" + std::string(1, suffix) + " AU columns: found " +
                                           std::to_string(cols.size()) + ", expected " +
                                           std::to_string(expected.size()));
      return;
    }
    for (int au : expected) {
      if (!cols.contains(au))
        throw Error(ErrorKind::Format, "missing header column '" + au_column_name(au, suffix) + "' (found " +
                                           std::to_string(cols.size()) + " of " +
                                           std::to_string(expected.size()) + " _" + suffix + " columns)");
    }
    throw Error(ErrorKind::Format, "fewer than " + std::to_string(expected.size()) + " _" + suffix + " AU columns");
  };
  check_au(intensity_cols, kIntensityAUs, 'r');
  check_au(presence_cols, kPresenceAUs, 'c');

  std::vector<std::size_t> intensity_idx;
  std::vector<std::size_t> presence_idx;
  for (auto [au, col] : intensity_cols) intensity_idx.push_back(col);
  for (auto [au, col] : presence_cols) presence_idx.push_back(col);

  std::vector<AUFrame> frames;
  frames.reserve(lines.size() - 1);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto [line_no, line] = lines[li];
    const auto cells = detail::split_csv_line(line);
    const auto row_error = [&](const std::string& msg) {
      return Error(ErrorKind::Row, "row " + std::to_string(line_no) + ": " + msg);
    };
    if (cells.size() != header.size())
      throw row_error("expected " + std::to_string(header.size()) + " cells, found " +
                      std::to_string(cells.size()));
    const auto number = [&](std::size_t col) {
      auto v = detail::parse_double(cells[col]);
      if (!v || !std::isfinite(*v))
        throw row_error("non-numeric value '" + std::string(cells[col]) + "' in column '" +
                        std::string(header[col]) + "'");
      return *v;
    };

    AUFrame f;
    const double frame = number(meta[0]);
    if (frame < 0 || frame != std::floor(frame)) throw row_error("frame must be a non-negative integer");
    f.frame_index = static_cast<std::int64_t>(frame);
    f.timestamp_s = number(meta[1]);
    if (f.timestamp_s < 0) throw row_error("negative timestamp");
    f.confidence = number(meta[2]);
    if (f.confidence < 0 || f.confidence > 1) throw row_error("confidence outside [0,1]");
    f.success = number(meta[3]) != 0.0;
    for (std::size_t k = 0; k < kIntensityCount; ++k) {
      const double v = number(intensity_idx[k]);
      if (v < 0 || v > 5) throw row_error("intensity outside [0,5] in column '" + std::string(header[intensity_idx[k]]) + "'");
      f.au_intensity[k] = v;
    }
    for (std::size_t k = 0; k < kPresenceCount; ++k) {
      const double v = number(presence_idx[k]);
      if (v != 0.0 && v != 1.0) throw row_error("presence not 0/1 in column '" + std::string(header[presence_idx[k]]) + "'");
      f.au_presence[k] = v;
    }
    frames.push_back(f);
  }
  return frames;
}

inline std::vector<AUFrame> parse_au_csv_file(const std::filesystem::path& path) {
  try {
    return parse_au_csv(detail::read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io) throw;
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

/// Serializes frames in the layout parse_au_csv reads, 6 significant digits.
inline std::string write_au_csv(const std::vector<AUFrame>& frames) {
  std::string out = "frame,face_id,timestamp,confidence,success";
  for (int au : kIntensityAUs) out += "," + au_column_name(au, 'r');
  for (int au : kPresenceAUs) out += "," + au_column_name(au, 'c');
  out += '\n';
  for (const auto& f : frames) {
    out += std::to_string(f.frame_index);
    out += ",0,";
    out += detail::format_double(f.timestamp_s, 6);
    out += ',';
    out += detail::format_double(f.confidence, 6);
    out += f.success ? ",1" : ",0";
    for (double v : f.au_intensity) {
      out += ',';
      out += detail::format_double(v, 6);
    }
    for (double v : f.au_presence) out += v != 0.0 ? ",1" : ",0";
    out += '\n';
  }
  return out;
}

/// Builds a record, enforcing strictly increasing frame indices.
inline ConfessionRecord make_record(std::string id, std::string dataset, Label label, double fps,
                                    std::vector<AUFrame> frames) {
  if (!(fps > 0)) throw Error(ErrorKind::Spec, "fps must be positive for " + id);
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].frame_index <= frames[i - 1].frame_index)
      throw Error(ErrorKind::Format, id + ": frame indices not strictly increasing at frame " +
                                         std::to_string(frames[i].frame_index));
  }
  return ConfessionRecord{std::move(id), std::move(dataset), label, fps, std::move(frames)};
}

struct ValidationResult {
  ConfessionRecord record;
  std::size_t removed = 0;
};

/// Drops frames with success == false or confidence below `min_confidence`.
inline ValidationResult validate_record(const ConfessionRecord& record, double min_confidence = 0.0) {
  ValidationResult result{ConfessionRecord{record.id, record.dataset, record.label, record.fps, {}}, 0};
  for (const auto& f : record.frames) {
    if (f.success && f.confidence >= min_confidence)
      result.record.frames.push_back(f);
    else
      ++result.removed;
  }
  if (result.record.frames.empty())
    throw Error(ErrorKind::EmptyRecord, record.id + ": no valid frames left after filtering");
  return result;
}

struct ManifestEntry {
  std::string id;
  std::filesystem::path csv_path;
  Label label = Label::Truthful;
  double fps = 30.0;
};

struct DatasetManifest {
  std::string name;
  bool balancing_exempt = false;
  std::vector<ManifestEntry> entries;
};

inline Label parse_label(std::string_view token) {
  const auto t = detail::lower(detail::trim(token));
  if (t == "truthful" || t == "t") return Label::Truthful;
  if (t == "deceptive" || t == "d") return Label::Deceptive;
  throw Error(ErrorKind::Manifest, "unknown label token '" + std::string(token) + "'");
}

/// Reads a manifest CSV with header `id,path,label,dataset,fps`. Relative
/// paths resolve against the manifest's directory. A leading comment line
/// `# balancing_exempt=true` marks the dataset exempt from class balancing.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::Io, "manifest not found: " + path.string());
  const auto text = detail::read_file(path);
  const auto base = path.parent_path();

  DatasetManifest manifest;
  bool have_header = false;
  std::set<std::string> ids;
  for (const auto& [line_no, raw] : detail::split_lines(text)) {
    const auto line = detail::trim(raw);
    if (line.front() == '#') {
      auto directive = detail::trim(line.substr(1));
      const auto eq = directive.find('=');
      if (eq != std::string_view::npos && detail::trim(directive.substr(0, eq)) == "balancing_exempt") {
        const auto v = detail::lower(detail::trim(directive.substr(eq + 1)));
        if (v != "true" && v != "false")
          throw Error(ErrorKind::Manifest, "balancing_exempt must be true or false, got '" + v + "'");
        manifest.balancing_exempt = v == "true";
      }
      continue;
    }
    const auto cells = detail::split_csv_line(line);
    if (!have_header) {
      const std::array<std::string_view, 5> expected = {"id", "path", "label", "dataset", "fps"};
      if (cells.size() != expected.size() || !std::equal(cells.begin(), cells.end(), expected.begin()))
        throw Error(ErrorKind::Manifest, path.string() + ": header must be id,path,label,dataset,fps");
      have_header = true;
      continue;
    }
    const auto where = path.string() + " line " + std::to_string(line_no);
    if (cells.size() != 5) throw Error(ErrorKind::Manifest, where + ": expected 5 cells");
    ManifestEntry entry;
    entry.id = std::string(cells[0]);
    if (entry.id.empty()) throw Error(ErrorKind::Manifest, where + ": empty id");
    if (!ids.insert(entry.id).second) throw Error(ErrorKind::Manifest, "duplicate id '" + entry.id + "'");
    entry.csv_path = std::filesystem::path(std::string(cells[1]));
    if (entry.csv_path.is_relative()) entry.csv_path = base / entry.csv_path;
    try {
      entry.label = parse_label(cells[2]);
    } catch (const Error& e) {
      throw Error(ErrorKind::Manifest, where + ": unknown label token '" + std::string(cells[2]) + "'");
    }
    const std::string dataset(cells[3]);
    if (manifest.entries.empty() && manifest.name.empty())
      manifest.name = dataset;
    else if (dataset != manifest.name)
      throw Error(ErrorKind::Manifest, where + ": dataset '" + dataset + "' differs from '" + manifest.name + "'");
    const auto fps = detail::parse_double(cells[4]);
    if (!fps || !(*fps > 0)) throw Error(ErrorKind::Manifest, where + ": fps must be a positive number");
    entry.fps = *fps;
    if (!std::filesystem::exists(entry.csv_path))
      throw Error(ErrorKind::Manifest, where + ": missing file " + entry.csv_path.string());
    manifest.entries.push_back(std::move(entry));
  }
  if (!have_header) throw Error(ErrorKind::Manifest, path.string() + ": missing header");
  if (manifest.name.empty()) manifest.name = path.stem().string();
  return manifest;
}

/// Writes a manifest; paths are written as given (relative paths stay relative).
inline std::string write_manifest(const DatasetManifest& manifest) {
  std::string out;
  if (manifest.balancing_exempt) out += "# balancing_exempt=true\n";
  out += "id,path,label,dataset,fps\n";
  for (const auto& e : manifest.entries) {
    out += e.id + "," + e.csv_path.generic_string() + "," + to_string(e.label) + "," + manifest.name + "," +
           detail::format_double(e.fps, 6) + "\n";
  }
  return out;
}

inline ConfessionRecord load_record(const ManifestEntry& entry, const std::string& dataset) {
  return make_record(entry.id, dataset, entry.label, entry.fps, parse_au_csv_file(entry.csv_path));
}

inline std::vector<ConfessionRecord> load_records(const DatasetManifest& manifest) {
  std::vector<ConfessionRecord> records;
  records.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) records.push_back(load_record(e, manifest.name));
  return records;
}

struct SyntheticSpec {
  std::string dataset = "synthetic";
  int n_confessions = 20;
  int frames_min = 300;
  int frames_max = 300;
  int n_discriminative = 4;
  double mean_shift = 2.0;
  double ar_coefficient = 0.5;
  std::uint64_t seed = 0;
  int window_len = 30;
  double fps = 30.0;
  /// Per-frame innovation scale of the intensity channels.
  double noise_sd = 1.0;
  /// Shifted channels are [channel_offset, channel_offset + n_discriminative) of the 35.
  int channel_offset = 0;
  bool balancing_exempt = false;

  void validate() const {
    const auto fail = [](const std::string& m) { throw Error(ErrorKind::Spec, m); };
    if (n_confessions < 2) fail("n_confessions must be >= 2 so both classes are present");
    if (window_len < 1) fail("window length must be >= 1");
    if (frames_min < window_len)
      fail("frames_min (" + std::to_string(frames_min) + ") is below the window length (" +
           std::to_string(window_len) + ")");
    if (frames_min > frames_max) fail("frames_min must not exceed frames_max");
    if (n_discriminative < 1 || n_discriminative > static_cast<int>(kFeatureCount))
      fail("n_discriminative must be in [1,35]");
    if (channel_offset < 0 || channel_offset + n_discriminative > static_cast<int>(kFeatureCount))
      fail("channel_offset + n_discriminative must not exceed 35");
    if (!(mean_shift >= 0) || !std::isfinite(mean_shift)) fail("mean_shift must be finite and >= 0");
    if (!(ar_coefficient >= 0 && ar_coefficient < 1)) fail("ar_coefficient must be in [0,1)");
    if (!(noise_sd >= 0) || !std::isfinite(noise_sd)) fail("noise_sd must be finite and >= 0");
    if (!(fps > 0)) fail("fps must be positive");
  }
};

namespace detail {

inline constexpr double kSynthBaseIntensity = 1.0;
inline constexpr double kSynthBasePresence = 0.3;

inline double clamp_round6(double v, double lo, double hi) {
  v = std::clamp(v, lo, hi);
  // Round-trip through the 6-digit text form so in-memory and on-disk values agree.
  return *parse_double(format_double(v, 6));
}

}  // namespace detail

/// Generates one confession's frames. Confession `index` is deceptive iff odd,
/// which guarantees both classes for n_confessions >= 2.
inline ConfessionRecord synthesize_confession(const SyntheticSpec& spec, int index) {
  Rng rng(derive_seed(spec.seed, "synthetic-confession", static_cast<std::uint64_t>(index)));
  const Label label = index % 2 == 1 ? Label::Deceptive : Label::Truthful;
  const bool deceptive = label == Label::Deceptive;
  const int n_frames =
      spec.frames_min + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec.frames_max - spec.frames_min + 1)));

  const auto shifted = [&](std::size_t ch) {
    const auto c = static_cast<int>(ch);
    return deceptive && c >= spec.channel_offset && c < spec.channel_offset + spec.n_discriminative;
  };
  std::array<double, kIntensityCount> mean{};
  for (std::size_t k = 0; k < kIntensityCount; ++k)
    mean[k] = detail::kSynthBaseIntensity + (shifted(k) ? spec.mean_shift : 0.0);
  std::array<double, kPresenceCount> presence_p{};
  for (std::size_t k = 0; k < kPresenceCount; ++k)
    presence_p[k] = std::min(1.0, detail::kSynthBasePresence + (shifted(kIntensityCount + k) ? spec.mean_shift / 10.0 : 0.0));

  // Stationary AR(1): innovations scaled so the marginal sd equals noise_sd.
  const double a = spec.ar_coefficient;
  const double innovation = spec.noise_sd * std::sqrt(1.0 - a * a);
  std::array<double, kIntensityCount> state{};
  for (std::size_t k = 0; k < kIntensityCount; ++k) state[k] = spec.noise_sd * normal01(rng);

  std::vector<AUFrame> frames(static_cast<std::size_t>(n_frames));
  for (int t = 0; t < n_frames; ++t) {
    auto& f = frames[static_cast<std::size_t>(t)];
    f.frame_index = t + 1;
    f.timestamp_s = detail::clamp_round6(t / spec.fps, 0.0, 1e300);
    f.confidence = detail::clamp_round6(0.9 + 0.1 * uniform01(rng), 0.0, 1.0);
    f.success = true;
    for (std::size_t k = 0; k < kIntensityCount; ++k) {
      if (t > 0) state[k] = a * state[k] + innovation * normal01(rng);
      f.au_intensity[k] = detail::clamp_round6(mean[k] + state[k], 0.0, 5.0);
    }
    for (std::size_t k = 0; k < kPresenceCount; ++k) f.au_presence[k] = uniform01(rng) < presence_p[k] ? 1.0 : 0.0;
  }

  char id[32];
  std::snprintf(id, sizeof(id), "c%03d", index);
  return make_record(id, spec.dataset, label, spec.fps, std::move(frames));
}

/// Writes `manifest.csv` plus one AU CSV per confession into `out_dir` and
/// returns the manifest (with absolute csv paths).
inline DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest relative{spec.dataset, spec.balancing_exempt, {}};
  DatasetManifest absolute = relative;
  for (int i = 0; i < spec.n_confessions; ++i) {
    const auto record = synthesize_confession(spec, i);
    const std::string file = record.id + ".csv";
    detail::write_file(out_dir / file, write_au_csv(record.frames));
    relative.entries.push_back({record.id, file, record.label, record.fps});
    absolute.entries.push_back({record.id, out_dir / file, record.label, record.fps});
  }
  detail::write_file(out_dir / "manifest.csv", write_manifest(relative));
  return absolute;
}

}  // namespace auseq
