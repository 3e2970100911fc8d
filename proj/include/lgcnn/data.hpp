#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lgcnn/error.hpp"
#include "lgcnn/tensor.hpp"

// Time-series ingestion, windowing into single-channel images, train-set
// normalization, correlation maps, and a synthetic fault generator.

namespace lgcnn::data {

/// One simulation run: time-ordered rows of process variables.
struct SimulationRecord {
  int fault_id = 0;
  std::string run_id;
  std::vector<std::string> variables;
  std::vector<double> samples;  // rows x variables, row-major

  std::size_t num_variables() const { return variables.size(); }
  std::size_t rows() const { return variables.empty() ? 0 : samples.size() / variables.size(); }
  double at(std::size_t row, std::size_t var) const { return samples[row * variables.size() + var]; }
};

inline std::size_t total_samples(const std::vector<SimulationRecord>& records) {
  std::size_t n = 0;
  for (const auto& r : records) n += r.rows();
  return n;
}

// ---------------------------------------------------------------------------
// Ingestion
//
// Delimited text, one file per run (or several runs per file). The header row
// names every column; the metadata columns `fault_id` and `run_id` are
// required, an optional `time` column must be strictly increasing within a
// run, and every other column is a process variable.

inline constexpr const char* kFaultColumn = "fault_id";
inline constexpr const char* kRunColumn = "run_id";
inline constexpr const char* kTimeColumn = "time";

namespace detail {

inline std::vector<std::string> split_row(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, delim)) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(context + ": not a number: '" + s + "'");
  }
}

}  // namespace detail

inline std::vector<SimulationRecord> ingest_file(const std::filesystem::path& file, char delim = ',') {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read '" + file.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    header = detail::split_row(line, delim);
  }
  if (header.empty()) return {};
  int fault_col = -1, run_col = -1, time_col = -1;
  std::vector<std::size_t> var_cols;
  std::vector<std::string> var_names;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == kFaultColumn) fault_col = static_cast<int>(i);
    else if (header[i] == kRunColumn) run_col = static_cast<int>(i);
    else if (header[i] == kTimeColumn) time_col = static_cast<int>(i);
    else {
      var_cols.push_back(i);
      var_names.push_back(header[i]);
    }
  }
  const std::string where = file.string();
  if (fault_col < 0 || run_col < 0) {
    throw ParseError(where + ":" + std::to_string(lineno) + ": header lacks '" + kFaultColumn + "' or '" +
                     kRunColumn + "' column");
  }
  if (var_cols.empty()) throw ParseError(where + ": no variable columns");

  std::vector<SimulationRecord> records;
  std::map<std::pair<int, std::string>, std::size_t> index;
  std::map<std::size_t, double> last_time;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string ctx = where + ":" + std::to_string(lineno);
    const auto cells = detail::split_row(line, delim);
    if (cells.size() != header.size()) {
      throw ParseError(ctx + ": expected " + std::to_string(header.size()) + " columns, found " +
                       std::to_string(cells.size()));
    }
    const double fault = detail::parse_double(cells[static_cast<std::size_t>(fault_col)], ctx);
    if (fault != std::floor(fault) || fault < 0) throw ParseError(ctx + ": fault_id must be a non-negative integer");
    const std::pair<int, std::string> key{static_cast<int>(fault), cells[static_cast<std::size_t>(run_col)]};
    auto [it, inserted] = index.try_emplace(key, records.size());
    if (inserted) {
      SimulationRecord r;
      r.fault_id = key.first;
      r.run_id = key.second;
      r.variables = var_names;
      records.push_back(std::move(r));
    }
    SimulationRecord& rec = records[it->second];
    if (time_col >= 0) {
      const double t = detail::parse_double(cells[static_cast<std::size_t>(time_col)], ctx);
      auto lt = last_time.find(it->second);
      if (lt != last_time.end() && !(t > lt->second)) throw ParseError(ctx + ": time is not strictly increasing");
      last_time[it->second] = t;
    }
    for (std::size_t c : var_cols) rec.samples.push_back(detail::parse_double(cells[c], ctx));
  }
  return records;
}

/**
 * Reads every regular file in `dir` (sorted by name). Records are returned in
 * order of first appearance. An empty directory yields an empty list.
 */
inline std::vector<SimulationRecord> ingest(const std::filesystem::path& dir, char delim = ',') {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a readable directory: '" + dir.string() + "'");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir, ec)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  if (ec) throw IoError("cannot list '" + dir.string() + "': " + ec.message());
  std::sort(files.begin(), files.end());
  std::vector<SimulationRecord> all;
  for (const auto& f : files) {
    auto recs = ingest_file(f, delim);
    for (auto& r : recs) all.push_back(std::move(r));
  }
  return all;
}

/// Writes records in the ingestion layout (header, then fault_id, run_id, variables).
inline void write_records_csv(const std::filesystem::path& file, const std::vector<SimulationRecord>& records) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write '" + file.string() + "'");
  if (records.empty()) return;
  out << kFaultColumn << ',' << kRunColumn;
  for (const auto& v : records.front().variables) out << ',' << v;
  out << '\n';
  out.precision(9);
  for (const auto& r : records) {
    if (r.variables != records.front().variables) throw ParseError("records disagree on variable names");
    for (std::size_t t = 0; t < r.rows(); ++t) {
      out << r.fault_id << ',' << r.run_id;
      for (std::size_t v = 0; v < r.num_variables(); ++v) out << ',' << r.at(t, v);
      out << '\n';
    }
  }
  if (!out) throw IoError("failed writing '" + file.string() + "'");
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Default dropped variables: the compressor recycle valve and the stripper steam valve.
inline std::vector<std::string> default_drop_list() { return {"xmv_5", "xmv_9"}; }

/// Fault-introduction sample index per split (1 h into training runs, 8 h into testing runs at 3 min sampling).
inline constexpr std::size_t kDefaultTrainFaultIndex = 20;
inline constexpr std::size_t kDefaultTestFaultIndex = 160;

struct PreprocessOptions {
  std::vector<std::string> drop;
  std::size_t fault_index = 0;  // samples before this index are removed
};

inline std::vector<SimulationRecord> preprocess(std::vector<SimulationRecord> records, const PreprocessOptions& opt) {
  for (auto& r : records) {
    std::vector<bool> keep(r.num_variables(), true);
    for (const auto& name : opt.drop) {
      auto it = std::find(r.variables.begin(), r.variables.end(), name);
      if (it == r.variables.end()) {
        throw ParseError("record fault " + std::to_string(r.fault_id) + " run '" + r.run_id +
                         "' has no variable named '" + name + "' to drop");
      }
      keep[static_cast<std::size_t>(it - r.variables.begin())] = false;
    }
    const std::size_t V = r.num_variables();
    const std::size_t start = std::min(opt.fault_index, r.rows());
    std::vector<std::string> names;
    for (std::size_t v = 0; v < V; ++v) {
      if (keep[v]) names.push_back(r.variables[v]);
    }
    std::vector<double> samples;
    samples.reserve((r.rows() - start) * names.size());
    for (std::size_t t = start; t < r.rows(); ++t) {
      for (std::size_t v = 0; v < V; ++v) {
        if (keep[v]) samples.push_back(r.at(t, v));
      }
    }
    r.variables = std::move(names);
    r.samples = std::move(samples);
  }
  return records;
}

// ---------------------------------------------------------------------------
// Images

enum class StatsMode { per_variable, global };

inline const char* stats_mode_name(StatsMode m) { return m == StatsMode::per_variable ? "per-variable" : "global"; }

inline StatsMode parse_stats_mode(const std::string& s) {
  if (s == "per-variable") return StatsMode::per_variable;
  if (s == "global") return StatsMode::global;
  throw ParseError("unknown stats mode '" + s + "' (expected per-variable or global)");
}

/// Normalization statistics: one (mean, std) per image column, or a single pair.
struct NormStats {
  StatsMode mode = StatsMode::per_variable;
  std::vector<double> mean;
  std::vector<double> stddev;

  double mean_for(std::size_t col) const { return mode == StatsMode::global ? mean.at(0) : mean.at(col); }
  double std_for(std::size_t col) const { return mode == StatsMode::global ? stddev.at(0) : stddev.at(col); }
};

/// Windowed single-channel images (rows = time, columns = variables) with labels.
struct ImageDataset {
  std::string split = "train";
  std::size_t height = 20;
  std::size_t width = 50;
  std::vector<float> pixels;  // count x height x width
  std::vector<int> labels;    // class indices into class_ids
  std::vector<int> class_ids; // fault id of each class index
  bool normalized = false;
  NormStats stats;
  std::vector<std::string> warnings;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return height * width; }
  std::size_t num_classes() const { return class_ids.size(); }

  /// (n, 1, height, width) batch of the given image indices.
  Tensor<float> batch(const std::vector<std::size_t>& indices) const {
    if (indices.empty()) throw ShapeError("empty batch");
    Tensor<float> t({indices.size(), 1, height, width});
    for (std::size_t k = 0; k < indices.size(); ++k) {
      std::copy_n(&pixels[indices[k] * image_size()], image_size(), &t[k * image_size()]);
    }
    return t;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(num_classes(), 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    return counts;
  }
};

/// Sorted distinct fault ids of a record set.
inline std::vector<int> fault_ids(const std::vector<SimulationRecord>& records) {
  std::vector<int> ids;
  for (const auto& r : records) ids.push_back(r.fault_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

struct WindowOptions {
  std::size_t window = 20;
  std::size_t stride = 20;
};

/**
 * Cuts each record into windows of `window` consecutive samples, one image
 * per window; windows never cross record boundaries and a trailing remainder
 * shorter than a window is dropped. Records shorter than one window are
 * skipped with a warning. `class_ids` fixes the label mapping (pass the
 * training set's mapping for the test split); empty derives it from the records.
 */
inline ImageDataset windowize(const std::vector<SimulationRecord>& records, const WindowOptions& opt = {},
                              std::vector<int> class_ids = {}, const std::string& split = "train") {
  if (opt.window == 0 || opt.stride == 0) throw DomainError("window and stride must be positive");
  ImageDataset ds;
  ds.split = split;
  ds.height = opt.window;
  ds.class_ids = class_ids.empty() ? fault_ids(records) : std::move(class_ids);
  ds.width = records.empty() ? 0 : records.front().num_variables();
  for (const auto& r : records) {
    if (r.num_variables() != ds.width) {
      throw ShapeError("record fault " + std::to_string(r.fault_id) + " run '" + r.run_id + "' has " +
                       std::to_string(r.num_variables()) + " variables, expected " + std::to_string(ds.width));
    }
    auto cls = std::find(ds.class_ids.begin(), ds.class_ids.end(), r.fault_id);
    if (cls == ds.class_ids.end()) {
      throw DomainError("fault id " + std::to_string(r.fault_id) + " is not among the known classes");
    }
    if (r.rows() < opt.window) {
      ds.warnings.push_back("skipped fault " + std::to_string(r.fault_id) + " run '" + r.run_id + "': " +
                            std::to_string(r.rows()) + " samples is shorter than one window");
      continue;
    }
    const int label = static_cast<int>(cls - ds.class_ids.begin());
    for (std::size_t start = 0; start + opt.window <= r.rows(); start += opt.stride) {
      for (std::size_t t = 0; t < opt.window; ++t) {
        for (std::size_t v = 0; v < ds.width; ++v) ds.pixels.push_back(static_cast<float>(r.at(start + t, v)));
      }
      ds.labels.push_back(label);
    }
  }
  return ds;
}

inline constexpr double kStdFloor = 1e-6;

/// Column (or global) moments over every row of every training image.
inline NormStats compute_norm_stats(const ImageDataset& train, StatsMode mode, std::vector<std::string>* warnings = nullptr) {
  if (train.size() == 0) throw DomainError("cannot compute normalization statistics of an empty training set");
  const std::size_t W = train.width, rows = train.size() * train.height;
  NormStats s;
  s.mode = mode;
  const std::size_t groups = mode == StatsMode::global ? 1 : W;
  std::vector<double> sum(groups, 0.0), ss(groups, 0.0);
  const double per_group = mode == StatsMode::global ? static_cast<double>(rows * W) : static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < W; ++c) sum[mode == StatsMode::global ? 0 : c] += train.pixels[r * W + c];
  }
  s.mean.resize(groups);
  for (std::size_t g = 0; g < groups; ++g) s.mean[g] = sum[g] / per_group;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      const std::size_t g = mode == StatsMode::global ? 0 : c;
      const double d = train.pixels[r * W + c] - s.mean[g];
      ss[g] += d * d;
    }
  }
  s.stddev.resize(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    s.stddev[g] = std::sqrt(ss[g] / per_group);
    if (s.stddev[g] < kStdFloor) {
      if (warnings) warnings->push_back("variable column " + std::to_string(g) + " is constant in the training set; std floored");
      s.stddev[g] = kStdFloor;
    }
  }
  return s;
}

/// Applies stats in place. Normalizing twice is a misuse and throws.
inline void apply_normalization(ImageDataset& ds, const NormStats& stats) {
  if (ds.normalized) throw StateError("dataset '" + ds.split + "' is already normalized");
  const std::size_t W = ds.width;
  if (!ds.pixels.empty() && stats.mode == StatsMode::per_variable && stats.mean.size() != W) {
    throw ShapeError("normalization statistics cover " + std::to_string(stats.mean.size()) + " columns, images have " +
                     std::to_string(W));
  }
  for (std::size_t i = 0; i < ds.pixels.size(); ++i) {
    const std::size_t c = i % W;
    ds.pixels[i] = static_cast<float>((ds.pixels[i] - stats.mean_for(c)) / stats.std_for(c));
  }
  ds.normalized = true;
  ds.stats = stats;
}

inline void denormalize(ImageDataset& ds) {
  if (!ds.normalized) throw StateError("dataset '" + ds.split + "' is not normalized");
  const std::size_t W = ds.width;
  for (std::size_t i = 0; i < ds.pixels.size(); ++i) {
    const std::size_t c = i % W;
    ds.pixels[i] = static_cast<float>(ds.pixels[i] * ds.stats.std_for(c) + ds.stats.mean_for(c));
  }
  ds.normalized = false;
}

/// Normalizes both splits with statistics of the training split only.
inline NormStats normalize(ImageDataset& train, ImageDataset& test, StatsMode mode = StatsMode::per_variable) {
  const NormStats stats = compute_norm_stats(train, mode, &train.warnings);
  apply_normalization(train, stats);
  apply_normalization(test, stats);
  return stats;
}

// ---------------------------------------------------------------------------
// Correlation map

struct CorrelationMatrix {
  std::size_t size = 0;
  std::vector<double> values;  // size x size
  std::vector<std::string> variables;
  std::vector<std::string> warnings;
  double at(std::size_t i, std::size_t j) const { return values[i * size + j]; }
};

/**
 * Pearson coefficients between variables over all samples of the records
 * (two-pass: means first, then centered cross products). A constant variable
 * gets an all-zero row and column, diagonal included, plus a warning.
 */
inline CorrelationMatrix correlation_matrix(const std::vector<SimulationRecord>& records) {
  if (records.empty()) throw DomainError("correlation_matrix needs at least one record");
  const std::size_t V = records.front().num_variables();
  const std::size_t N = total_samples(records);
  if (N < 2) throw DomainError("correlation_matrix needs at least two samples");
  std::vector<double> mean(V, 0.0);
  for (const auto& r : records) {
    if (r.num_variables() != V) throw ShapeError("records disagree on variable count");
    for (std::size_t t = 0; t < r.rows(); ++t) {
      for (std::size_t v = 0; v < V; ++v) mean[v] += r.at(t, v);
    }
  }
  for (auto& m : mean) m /= static_cast<double>(N);

  std::vector<double> cov(V * V, 0.0), centered(V);
  for (const auto& r : records) {
    for (std::size_t t = 0; t < r.rows(); ++t) {
      for (std::size_t v = 0; v < V; ++v) centered[v] = r.at(t, v) - mean[v];
      for (std::size_t i = 0; i < V; ++i) {
        const double ci = centered[i];
        for (std::size_t j = i; j < V; ++j) cov[i * V + j] += ci * centered[j];
      }
    }
  }
  CorrelationMatrix out;
  out.size = V;
  out.variables = records.front().variables;
  out.values.assign(V * V, 0.0);
  std::vector<bool> constant(V);
  for (std::size_t i = 0; i < V; ++i) {
    constant[i] = !(cov[i * V + i] > 0.0);
    if (constant[i]) out.warnings.push_back("variable '" + out.variables[i] + "' is constant; correlations reported as 0");
  }
  for (std::size_t i = 0; i < V; ++i) {
    if (constant[i]) continue;
    out.values[i * V + i] = 1.0;
    for (std::size_t j = i + 1; j < V; ++j) {
      if (constant[j]) continue;
      double r = cov[i * V + j] / std::sqrt(cov[i * V + i] * cov[j * V + j]);
      r = std::clamp(r, -1.0, 1.0);
      out.values[i * V + j] = r;
      out.values[j * V + i] = r;
    }
  }
  return out;
}

inline void write_correlation_csv(const std::filesystem::path& file, const CorrelationMatrix& m) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write '" + file.string() + "'");
  out << "variable";
  for (const auto& v : m.variables) out << ',' << v;
  out << '\n';
  out.precision(6);
  out << std::fixed;
  for (std::size_t i = 0; i < m.size; ++i) {
    out << m.variables[i];
    for (std::size_t j = 0; j < m.size; ++j) out << ',' << m.at(i, j);
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + file.string() + "'");
}

/// Grayscale heat map (binary PGM); -1 is black, +1 white, `cell` pixels per entry.
inline void write_correlation_pgm(const std::filesystem::path& file, const CorrelationMatrix& m, std::size_t cell = 8) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write '" + file.string() + "'");
  const std::size_t side = m.size * cell;
  out << "P5\n" << side << ' ' << side << "\n255\n";
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double v = m.at(y / cell, x / cell);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround((v + 1.0) * 127.5))));
    }
  }
  if (!out) throw IoError("failed writing '" + file.string() + "'");
}

// ---------------------------------------------------------------------------
// Synthetic faults

struct SynthOptions {
  std::size_t classes = 4;
  std::size_t runs_per_class = 10;
  std::size_t samples_per_run = 200;
  std::size_t variables = 50;
  std::uint64_t seed = 0;
  double noise = 0.5;          // shared white-noise floor
  double shift = 1.0;          // mean shift of a class's variable block
  double persistence = 0.0;    // AR(1) coefficient of the common latent factor; 0 is white
};

/// Variables loaded on the common latent factor: every 7th, starting at 2.
inline std::vector<std::size_t> synth_loaded_variables(std::size_t variables) {
  std::vector<std::size_t> out;
  for (std::size_t v = 2; v < variables; v += 7) out.push_back(v);
  if (out.empty()) out.push_back(0);
  return out;
}

/// Index of the first class of the correlation-only pair, or `classes` if there is none.
inline std::size_t synth_correlation_pair(std::size_t classes) { return classes >= 3 ? classes - 2 : classes; }

/**
 * Stationary multivariate processes, one per class. Every variable carries
 * white noise; the variables of synth_loaded_variables() also carry a shared
 * AR(1) latent factor with a class-specific sign per variable.
 *
 * With three or more classes, the last two form a correlation-only pair: no
 * mean shift, identical per-variable marginals, loadings all +1 vs.
 * alternating +1/-1. Loaded variables are 7 columns apart, so only a
 * receptive field spanning distant columns can tell the pair apart. Every
 * other class k shifts the mean of its own block of variables and uses +1
 * loadings. Fault ids are 1..classes.
 */
inline std::vector<SimulationRecord> synth_faults(const SynthOptions& opt) {
  if (opt.classes == 0 || opt.runs_per_class == 0 || opt.samples_per_run == 0 || opt.variables == 0) {
    throw DomainError("synth_faults counts must all be at least 1");
  }
  const std::size_t V = opt.variables;
  const auto loaded = synth_loaded_variables(V);
  const std::size_t pair = synth_correlation_pair(opt.classes);
  const std::size_t shifted_classes = std::max<std::size_t>(pair, 1);
  const std::size_t block = std::max<std::size_t>(1, V / shifted_classes);

  std::vector<std::string> names;
  for (std::size_t v = 0; v < V; ++v) names.push_back("v" + std::to_string(v + 1));

  std::vector<SimulationRecord> records;
  for (std::size_t c = 0; c < opt.classes; ++c) {
    std::vector<double> shift(V, 0.0), loading(V, 0.0);
    for (std::size_t k = 0; k < loaded.size(); ++k) {
      const bool alternate = pair < opt.classes && c == pair + 1;
      loading[loaded[k]] = (alternate && k % 2 == 1) ? -1.0 : 1.0;
    }
    if (c < pair) {
      for (std::size_t v = c * block; v < std::min(V, (c + 1) * block); ++v) shift[v] = opt.shift;
    }
    for (std::size_t run = 0; run < opt.runs_per_class; ++run) {
      std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(opt.seed >> 32),
                        static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(run)};
      std::mt19937_64 rng(seq);
      std::normal_distribution<double> normal(0.0, 1.0);
      SimulationRecord r;
      r.fault_id = static_cast<int>(c + 1);
      r.run_id = "run" + std::to_string(run + 1);
      r.variables = names;
      r.samples.resize(opt.samples_per_run * V);
      const double phi = opt.persistence;
      const double innovation = std::sqrt(1.0 - phi * phi);
      double z = normal(rng);
      for (std::size_t t = 0; t < opt.samples_per_run; ++t) {
        if (t > 0) z = phi * z + innovation * normal(rng);
        for (std::size_t v = 0; v < V; ++v) {
          r.samples[t * V + v] = shift[v] + loading[v] * z + opt.noise * normal(rng);
        }
      }
      records.push_back(std::move(r));
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Dataset archive: both splits, statistics and provenance metadata.

struct DatasetArchive {
  ImageDataset train;
  ImageDataset test;
  std::map<std::string, std::string> metadata;
};

namespace detail {

inline void write_f64(std::ostream& os, double v) { io::write_u64(os, std::bit_cast<std::uint64_t>(v)); }
inline double read_f64(std::istream& is) { return std::bit_cast<double>(io::read_u64(is)); }

inline void write_split(std::ostream& os, const ImageDataset& ds) {
  io::write_string(os, ds.split);
  io::write_u64(os, ds.size());
  io::write_u64(os, ds.height);
  io::write_u64(os, ds.width);
  io::write_u64(os, ds.class_ids.size());
  for (int id : ds.class_ids) io::write_u64(os, static_cast<std::uint64_t>(id));
  for (int l : ds.labels) io::write_u32(os, static_cast<std::uint32_t>(l));
  io::write_u32(os, ds.normalized ? 1 : 0);
  io::write_string(os, stats_mode_name(ds.stats.mode));
  io::write_u64(os, ds.stats.mean.size());
  for (double m : ds.stats.mean) write_f64(os, m);
  for (double s : ds.stats.stddev) write_f64(os, s);
  if (ds.size() > 0) write_tensor(os, Tensor<float>({ds.size(), 1, ds.height, ds.width}, ds.pixels));
}

inline ImageDataset read_split(std::istream& is) {
  ImageDataset ds;
  ds.split = io::read_string(is, 64);
  const std::uint64_t n = io::read_u64(is);
  ds.height = io::read_u64(is);
  ds.width = io::read_u64(is);
  const std::uint64_t classes = io::read_u64(is);
  if (n > (1u << 30) || classes > (1u << 16) || ds.height > (1u << 16) || ds.width > (1u << 16)) {
    throw IoError("corrupt dataset archive header");
  }
  for (std::uint64_t i = 0; i < classes; ++i) ds.class_ids.push_back(static_cast<int>(io::read_u64(is)));
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint32_t l = io::read_u32(is);
    if (l >= classes) throw IoError("corrupt dataset archive: label out of range");
    ds.labels.push_back(static_cast<int>(l));
  }
  ds.normalized = io::read_u32(is) != 0;
  ds.stats.mode = parse_stats_mode(io::read_string(is, 64));
  const std::uint64_t groups = io::read_u64(is);
  if (groups > (1u << 16)) throw IoError("corrupt dataset archive: statistics");
  ds.stats.mean.resize(groups);
  ds.stats.stddev.resize(groups);
  for (auto& m : ds.stats.mean) m = read_f64(is);
  for (auto& s : ds.stats.stddev) s = read_f64(is);
  if (n > 0) {
    Tensor<float> t = read_tensor(is);
    if (t.shape() != Shape{n, 1, ds.height, ds.width}) throw IoError("corrupt dataset archive: image tensor shape");
    ds.pixels.assign(t.data().begin(), t.data().end());
  }
  return ds;
}

}  // namespace detail

inline constexpr char kArchiveMagic[8] = {'L', 'G', 'D', 'S', 'E', 'T', '0', '1'};
inline constexpr std::uint32_t kArchiveVersion = 1;

inline void save_archive(const std::filesystem::path& path, const DatasetArchive& archive) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(kArchiveMagic, sizeof kArchiveMagic);
  io::write_u32(out, kArchiveVersion);
  std::ostringstream meta;
  for (const auto& [k, v] : archive.metadata) meta << k << '=' << v << '\n';
  io::write_string(out, meta.str());
  detail::write_split(out, archive.train);
  detail::write_split(out, archive.test);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline DatasetArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset archive '" + path.string() + "'");
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kArchiveMagic)) {
    throw IoError("'" + path.string() + "' is not a dataset archive");
  }
  if (const auto v = io::read_u32(in); v != kArchiveVersion) {
    throw IoError("unsupported dataset archive version " + std::to_string(v));
  }
  DatasetArchive a;
  std::istringstream meta(io::read_string(in));
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) a.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  a.train = detail::read_split(in);
  a.test = detail::read_split(in);
  return a;
}

}  // namespace lgcnn::data
