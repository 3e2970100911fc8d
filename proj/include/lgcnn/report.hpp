#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lgcnn/error.hpp"
#include "lgcnn/model_spec.hpp"
#include "lgcnn/training.hpp"

// Machine-readable key=value records and human-readable tables for audits,
// training runs, evaluations, comparisons and run manifests.

namespace lgcnn::report {

/// Ordered key=value record. Lines starting with '#' are comments.
class KeyValues {
 public:
  void set(const std::string& key, const std::string& value) {
    if (key.empty() || key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw DomainError("invalid key/value '" + key + "'");
    }
    for (auto& kv : entries_) {
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    }
    entries_.emplace_back(key, value);
  }

  bool has(const std::string& key) const {
    for (const auto& kv : entries_) {
      if (kv.first == key) return true;
    }
    return false;
  }

  const std::string& get(const std::string& key) const {
    for (const auto& kv : entries_) {
      if (kv.first == key) return kv.second;
    }
    throw ParseError("missing key '" + key + "'");
  }

  double get_double(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "nan") return std::nan("");
    try {
      return std::stod(v);
    } catch (const std::exception&) {
      throw ParseError("key '" + key + "': not a number: '" + v + "'");
    }
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
  }

  static KeyValues parse(const std::string& text, const std::string& origin = "<kv>") {
    KeyValues kv;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ParseError(origin + ":" + std::to_string(lineno) + ": expected key=value");
      }
      kv.set(line.substr(0, eq), line.substr(eq + 1));
    }
    return kv;
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << to_text();
    if (!out) throw IoError("failed writing '" + path.string() + "'");
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Fixed-point rendering; FDRs use 3 places. NaN renders as "nan".
inline std::string fixed(double v, int places = 3) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", places, v);
  return buf;
}

/// Round-trip-exact rendering of a double.
inline std::string exact(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Seq>
std::string join(const Seq& seq, const char* sep = ",") {
  std::ostringstream os;
  bool first = true;
  for (const auto& v : seq) {
    if (!first) os << sep;
    os << v;
    first = false;
  }
  return os.str();
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  return out;
}

// ---------------------------------------------------------------------------
// Audit

inline KeyValues audit_to_kv(const ModelSpec& spec, const ParamAudit& audit) {
  KeyValues kv;
  kv.set("kind", "audit");
  kv.set("model", spec.name);
  const auto rf = receptive_fields(spec);
  for (std::size_t i = 0; i < audit.layers.size(); ++i) {
    const auto& l = audit.layers[i];
    const std::string p = "layer." + l.name;
    kv.set(p + ".kind", kind_name(l.kind));
    kv.set(p + ".shape", std::to_string(l.output.channels) + "x" + std::to_string(l.output.height) + "x" +
                             std::to_string(l.output.width));
    kv.set(p + ".params", std::to_string(l.params()));
    kv.set(p + ".rf", std::to_string(rf[i].height) + "x" + std::to_string(rf[i].width));
  }
  kv.set("total", std::to_string(audit.total));
  return kv;
}

inline std::string audit_table(const ModelSpec& spec, const ParamAudit& audit) {
  const auto rf = receptive_fields(spec);
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %-16s %-16s %12s %10s\n", "layer", "kind", "output (C,H,W)", "params", "RF");
  os << "model " << spec.name << "  input " << to_string(spec.input) << "\n" << line;
  for (std::size_t i = 0; i < audit.layers.size(); ++i) {
    const auto& l = audit.layers[i];
    const std::string rfs = std::to_string(rf[i].height) + "x" + std::to_string(rf[i].width);
    std::snprintf(line, sizeof line, "%-16s %-16s %-16s %12zu %10s\n", l.name.c_str(), kind_name(l.kind),
                  to_string(l.output).c_str(), l.params(), rfs.c_str());
    os << line;
  }
  os << "total trainable parameters: " << audit.total << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Training and evaluation

inline KeyValues train_report_to_kv(const TrainReport& r) {
  KeyValues kv;
  kv.set("kind", "train_report");
  kv.set("epochs", std::to_string(r.epoch_loss.size()));
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    kv.set("epoch." + std::to_string(e + 1) + ".loss", exact(r.epoch_loss[e]));
    kv.set("epoch." + std::to_string(e + 1) + ".accuracy", exact(r.epoch_accuracy[e]));
  }
  return kv;
}

inline KeyValues eval_report_to_kv(const EvalReport& r, const std::string& model = {}) {
  KeyValues kv;
  kv.set("kind", "eval_report");
  if (!model.empty()) kv.set("model", model);
  kv.set("classes", join(r.class_ids));
  kv.set("sample_count", std::to_string(r.sample_count));
  kv.set("mean_fdr", fixed(r.mean_fdr));
  for (std::size_t c = 0; c < r.class_ids.size(); ++c) {
    const std::string id = std::to_string(r.class_ids[c]);
    kv.set("count." + id, std::to_string(r.counts[c]));
    kv.set("fdr." + id, fixed(r.fdr[c]));
  }
  for (std::size_t c = 0; c < r.class_ids.size(); ++c) {
    kv.set("confusion." + std::to_string(r.class_ids[c]), join(r.confusion[c]));
  }
  return kv;
}

/// Reads the per-class FDR table of an eval report (confusion is optional).
inline EvalReport eval_report_from_kv(const KeyValues& kv) {
  EvalReport r;
  for (const auto& id : split_list(kv.get("classes"))) {
    try {
      r.class_ids.push_back(std::stoi(id));
    } catch (const std::exception&) {
      throw ParseError("bad class id '" + id + "'");
    }
  }
  const std::size_t C = r.class_ids.size();
  r.sample_count = kv.has("sample_count") ? static_cast<std::size_t>(kv.get_double("sample_count")) : 0;
  for (int id : r.class_ids) {
    const std::string s = std::to_string(id);
    r.fdr.push_back(kv.get_double("fdr." + s));
    r.counts.push_back(kv.has("count." + s) ? static_cast<std::size_t>(kv.get_double("count." + s)) : 0);
    if (kv.has("confusion." + s)) {
      std::vector<std::size_t> row;
      for (const auto& v : split_list(kv.get("confusion." + s))) row.push_back(std::stoull(v));
      if (row.size() != C) throw ParseError("confusion row for class " + s + " has wrong length");
      r.confusion.push_back(std::move(row));
    }
  }
  r.mean_fdr = kv.get_double("mean_fdr");
  return r;
}

/// Per-fault FDR table laid out in two side-by-side column groups.
inline std::string fdr_table(const EvalReport& r, const std::string& column = "FDR") {
  std::ostringstream os;
  const std::size_t C = r.class_ids.size();
  const std::size_t half = (C + 1) / 2;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %8s | %-8s %8s\n", "Fault ID", column.c_str(), "Fault ID", column.c_str());
  os << line;
  for (std::size_t i = 0; i < half; ++i) {
    const std::string right_id = i + half < C ? std::to_string(r.class_ids[i + half]) : "";
    const std::string right_v = i + half < C ? fixed(r.fdr[i + half]) : "";
    std::snprintf(line, sizeof line, "%-8d %8s | %-8s %8s\n", r.class_ids[i], fixed(r.fdr[i]).c_str(),
                  right_id.c_str(), right_v.c_str());
    os << line;
  }
  os << "mean FDR: " << fixed(r.mean_fdr) << " over " << r.sample_count << " samples\n";
  return os.str();
}

inline std::string confusion_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "true\\predicted";
  for (int id : r.class_ids) os << ',' << id;
  os << '\n';
  for (std::size_t c = 0; c < r.class_ids.size(); ++c) {
    os << r.class_ids[c];
    for (std::size_t v : r.confusion[c]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Comparison of two eval reports

struct Comparison {
  std::vector<int> class_ids;
  std::vector<double> fdr_a, fdr_b, delta;  // delta = b - a
  std::vector<char> winner;                 // 'a', 'b' or '='
  double mean_a = 0.0, mean_b = 0.0, mean_delta = 0.0;
};

inline Comparison compare(const EvalReport& a, const EvalReport& b) {
  if (a.class_ids != b.class_ids) throw DomainError("reports cover different class sets");
  Comparison c;
  c.class_ids = a.class_ids;
  double sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < a.class_ids.size(); ++i) {
    const bool empty_a = std::isnan(a.fdr[i]) || (!a.counts.empty() && a.counts[i] == 0 && a.sample_count > 0);
    const bool empty_b = std::isnan(b.fdr[i]) || (!b.counts.empty() && b.counts[i] == 0 && b.sample_count > 0);
    if (empty_a || empty_b) {
      throw DomainError("class " + std::to_string(a.class_ids[i]) + " has no samples in report " +
                        (empty_a ? "A" : "B"));
    }
    c.fdr_a.push_back(a.fdr[i]);
    c.fdr_b.push_back(b.fdr[i]);
    c.delta.push_back(b.fdr[i] - a.fdr[i]);
    c.winner.push_back(b.fdr[i] > a.fdr[i] ? 'b' : (a.fdr[i] > b.fdr[i] ? 'a' : '='));
    sa += a.fdr[i];
    sb += b.fdr[i];
  }
  const double n = static_cast<double>(a.class_ids.size());
  c.mean_a = sa / n;
  c.mean_b = sb / n;
  c.mean_delta = c.mean_b - c.mean_a;
  return c;
}

/// Winner per class is marked with '*', as bold type marks it in a printed table.
inline std::string comparison_table(const Comparison& c, const std::string& name_a, const std::string& name_b) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %10s %10s %8s\n", "Fault ID", name_a.c_str(), name_b.c_str(), "delta");
  os << line;
  for (std::size_t i = 0; i < c.class_ids.size(); ++i) {
    const std::string va = fixed(c.fdr_a[i]) + (c.winner[i] == 'a' ? "*" : " ");
    const std::string vb = fixed(c.fdr_b[i]) + (c.winner[i] == 'b' ? "*" : " ");
    std::snprintf(line, sizeof line, "%-8d %10s %10s %+8.3f\n", c.class_ids[i], va.c_str(), vb.c_str(), c.delta[i]);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-8s %10s %10s %+8.3f\n", "mean", fixed(c.mean_a).c_str(),
                fixed(c.mean_b).c_str(), c.mean_delta);
  os << line;
  return os.str();
}

inline KeyValues comparison_to_kv(const Comparison& c) {
  KeyValues kv;
  kv.set("kind", "comparison");
  kv.set("classes", join(c.class_ids));
  for (std::size_t i = 0; i < c.class_ids.size(); ++i) {
    const std::string id = std::to_string(c.class_ids[i]);
    kv.set("delta." + id, fixed(c.delta[i]));
    kv.set("winner." + id, std::string(1, c.winner[i]));
  }
  kv.set("mean_a", fixed(c.mean_a));
  kv.set("mean_b", fixed(c.mean_b));
  kv.set("mean_delta", fixed(c.mean_delta));
  return kv;
}

// ---------------------------------------------------------------------------
// Run manifest

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    h = fnv1a(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
  }
  return h;
}

/// Hash of every regular file below `path` (names and contents, sorted order).
inline std::uint64_t hash_tree(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(path)) return hash_file(path);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    h = fnv1a(fs::relative(f, path).generic_string(), h);
    h = fnv1a(hex64(hash_file(f)), h);
  }
  return h;
}

/**
 * One record per CLI run: command, effective configuration, seed, inputs and
 * outputs with content hashes. The timestamp comes from SOURCE_DATE_EPOCH
 * when set, so pinned reruns produce byte-identical manifests; it is left
 * out of manifest_hash either way.
 */
struct RunManifest {
  std::string command;
  KeyValues config;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;   // path, hash
  std::vector<std::pair<std::string, std::string>> outputs;  // path, hash

  void add_input(const std::filesystem::path& p) { inputs.emplace_back(p.string(), hex64(hash_tree(p))); }
  void add_output(const std::filesystem::path& p) { outputs.emplace_back(p.string(), hex64(hash_tree(p))); }

  KeyValues body() const {
    KeyValues kv;
    kv.set("kind", "manifest");
    kv.set("command", command);
    kv.set("seed", std::to_string(seed));
    for (const auto& [k, v] : config.entries()) kv.set("config." + k, v);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      kv.set("input." + std::to_string(i) + ".path", inputs[i].first);
      kv.set("input." + std::to_string(i) + ".hash", inputs[i].second);
    }
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      kv.set("output." + std::to_string(i) + ".path", outputs[i].first);
      kv.set("output." + std::to_string(i) + ".hash", outputs[i].second);
    }
    return kv;
  }

  std::uint64_t manifest_hash() const { return fnv1a(body().to_text()); }

  std::string to_text(const std::string& timestamp) const {
    KeyValues kv = body();
    kv.set("timestamp", timestamp);
    kv.set("manifest_hash", hex64(manifest_hash()));
    return kv.to_text();
  }
};

}  // namespace lgcnn::report
