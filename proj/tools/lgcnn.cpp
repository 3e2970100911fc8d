// Command-line entry point: prepare, synth, audit, train, eval, compare, corrmap.
//
// Exit codes: 0 success, 1 failed expectation or divergence, 2 bad input or I/O.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "lgcnn/lgcnn.hpp"

namespace fs = std::filesystem;
using namespace lgcnn;
using report::KeyValues;
using report::RunManifest;

namespace {

constexpr int kExitExpectation = 1;
constexpr int kExitInput = 2;

/// Thrown for a failed user-stated expectation (exit code 1).
struct ExpectationFailed : Error {
  using Error::Error;
};

std::string timestamp() {
  std::time_t t;
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) {
    t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// A relative input that is missing here is looked up under $LGCNN_DATA_DIR.
fs::path resolve_input(const fs::path& p) {
  if (p.is_absolute() || fs::exists(p)) return p;
  if (const char* dir = std::getenv("LGCNN_DATA_DIR"); dir && *dir) {
    const fs::path candidate = fs::path(dir) / p;
    if (fs::exists(candidate)) return candidate;
  }
  return p;
}

fs::path data_dir_default(const std::string& leaf) {
  if (const char* dir = std::getenv("LGCNN_DATA_DIR"); dir && *dir) return fs::path(dir) / leaf;
  return leaf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_manifest(const RunManifest& m, const fs::path& path) {
  write_text(path, m.to_text(timestamp()));
  std::cerr << "manifest: " << path.string() << "\n";
}

// ---------------------------------------------------------------------------
// synthetic dataset options: "classes=4 runs=10 len=200 vars=50"

struct SynthArgs {
  data::SynthOptions train;
  std::size_t test_runs = 0;  // 0: same as train
};

SynthArgs parse_synth_args(const std::string& text, std::uint64_t seed) {
  SynthArgs a;
  a.train.seed = seed;
  std::string normalized = text;
  for (char& c : normalized) {
    if (c == ',') c = ' ';
  }
  std::istringstream is(normalized);
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ParseError("synthetic option '" + tok + "' is not key=value");
    const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
    std::size_t n = 0;
    double x = 0;
    try {
      if (key == "noise" || key == "shift" || key == "persistence") {
        x = std::stod(value);
      } else {
        n = std::stoull(value);
      }
    } catch (const std::exception&) {
      throw ParseError("synthetic option '" + tok + "': bad number");
    }
    if (key == "classes") a.train.classes = n;
    else if (key == "runs") a.train.runs_per_class = n;
    else if (key == "test_runs") a.test_runs = n;
    else if (key == "len") a.train.samples_per_run = n;
    else if (key == "vars") a.train.variables = n;
    else if (key == "noise") a.train.noise = x;
    else if (key == "shift") a.train.shift = x;
    else if (key == "persistence") a.train.persistence = x;
    else throw ParseError("unknown synthetic option '" + key + "'");
  }
  return a;
}

std::pair<std::vector<data::SimulationRecord>, std::vector<data::SimulationRecord>> synth_splits(const SynthArgs& a) {
  data::SynthOptions test = a.train;
  test.seed = a.train.seed ^ 0x5bd1e995ULL;  // independent runs for the test split
  if (a.test_runs > 0) test.runs_per_class = a.test_runs;
  return {data::synth_faults(a.train), data::synth_faults(test)};
}

std::string synth_description(const SynthArgs& a) {
  const auto& o = a.train;
  return "classes=" + std::to_string(o.classes) + " runs=" + std::to_string(o.runs_per_class) +
         " test_runs=" + std::to_string(a.test_runs ? a.test_runs : o.runs_per_class) +
         " len=" + std::to_string(o.samples_per_run) + " vars=" + std::to_string(o.variables) +
         " noise=" + report::exact(o.noise) + " shift=" + report::exact(o.shift) +
         " persistence=" + report::exact(o.persistence);
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareArgs {
  std::string raw_dir;
  std::string out = "dataset.lgds";
  std::string synthetic;
  std::uint64_t seed = 0;
  std::string stats_mode = "per-variable";
  std::vector<std::string> drop;
  bool no_drop = false;
  std::size_t fault_index_train = data::kDefaultTrainFaultIndex;
  std::size_t fault_index_test = data::kDefaultTestFaultIndex;
  std::size_t window = 20;
};

int cmd_prepare(const PrepareArgs& a) {
  const data::StatsMode mode = data::parse_stats_mode(a.stats_mode);
  RunManifest m;
  m.command = "prepare";
  m.seed = a.seed;
  std::vector<data::SimulationRecord> train_recs, test_recs;
  data::DatasetArchive archive;
  std::vector<std::string> drop;

  if (!a.synthetic.empty()) {
    const SynthArgs s = parse_synth_args(a.synthetic, a.seed);
    std::tie(train_recs, test_recs) = synth_splits(s);
    archive.metadata["source"] = "synthetic " + synth_description(s);
    m.config.set("synthetic", synth_description(s));
  } else {
    const fs::path raw = resolve_input(a.raw_dir.empty() ? data_dir_default("raw") : fs::path(a.raw_dir));
    if (!fs::is_directory(raw)) throw IoError("raw data directory '" + raw.string() + "' does not exist");
    if (!fs::is_directory(raw / "train") || !fs::is_directory(raw / "test")) {
      throw IoError("raw data directory '" + raw.string() + "' must contain train/ and test/ subdirectories");
    }
    train_recs = data::ingest(raw / "train");
    test_recs = data::ingest(raw / "test");
    if (train_recs.empty()) throw IoError("no training records under '" + (raw / "train").string() + "'");
    drop = a.no_drop ? std::vector<std::string>{} : (a.drop.empty() ? data::default_drop_list() : a.drop);
    train_recs = data::preprocess(std::move(train_recs), {drop, a.fault_index_train});
    test_recs = data::preprocess(std::move(test_recs), {drop, a.fault_index_test});
    archive.metadata["source"] = raw.string();
    m.add_input(raw);
    m.config.set("raw_dir", raw.string());
  }

  const data::WindowOptions wo{a.window, a.window};
  archive.train = data::windowize(train_recs, wo, {}, "train");
  archive.test = data::windowize(test_recs, wo, archive.train.class_ids, "test");
  data::normalize(archive.train, archive.test, mode);

  archive.metadata["window"] = std::to_string(a.window);
  archive.metadata["stride"] = std::to_string(a.window);
  archive.metadata["stats_mode"] = data::stats_mode_name(mode);
  archive.metadata["drop"] = report::join(drop);
  archive.metadata["fault_index_train"] = std::to_string(a.synthetic.empty() ? a.fault_index_train : 0);
  archive.metadata["fault_index_test"] = std::to_string(a.synthetic.empty() ? a.fault_index_test : 0);
  archive.metadata["train_samples"] = std::to_string(data::total_samples(train_recs));
  archive.metadata["test_samples"] = std::to_string(data::total_samples(test_recs));

  // write beside the destination, then rename: no partial archive on failure
  const fs::path out = a.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const fs::path tmp = out.string() + ".tmp";
  try {
    data::save_archive(tmp, archive);
    fs::rename(tmp, out);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }

  for (const auto* w : {&archive.train.warnings, &archive.test.warnings}) {
    for (const auto& msg : *w) std::cerr << "warning: " << msg << "\n";
  }
  std::cout << "train: " << archive.train.size() << " images (" << archive.metadata["train_samples"] << " samples)\n"
            << "test: " << archive.test.size() << " images (" << archive.metadata["test_samples"] << " samples)\n"
            << "image: " << archive.train.height << "x" << archive.train.width << ", "
            << archive.train.num_classes() << " classes, " << data::stats_mode_name(mode) << " statistics\n";

  for (const auto& [k, v] : archive.metadata) m.config.set(k, v);
  m.add_output(out);
  write_manifest(m, out.string() + ".manifest");
  return 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthCmdArgs {
  std::string out = "synthetic";
  std::string spec = "classes=4 runs=10 len=200 vars=50";
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthCmdArgs& a) {
  const SynthArgs s = parse_synth_args(a.spec, a.seed);
  const auto [train, test] = synth_splits(s);
  const fs::path out = a.out;
  fs::create_directories(out / "train");
  fs::create_directories(out / "test");
  data::write_records_csv(out / "train" / "runs.csv", train);
  data::write_records_csv(out / "test" / "runs.csv", test);
  std::cout << "wrote " << train.size() << " training and " << test.size() << " testing runs to " << out.string()
            << "\n";
  RunManifest m;
  m.command = "synth";
  m.seed = a.seed;
  m.config.set("synthetic", synth_description(s));
  m.add_output(out / "train");
  m.add_output(out / "test");
  write_manifest(m, out / "manifest.txt");
  return 0;
}

// ---------------------------------------------------------------------------
// audit

struct ModelArgs {
  std::size_t divisor = 1;
  std::size_t hidden = 300;
  std::size_t classes = 20;
  std::size_t height = 20;
  std::size_t width = 50;
};

PresetOptions preset_options(const ModelArgs& a) {
  PresetOptions o;
  o.channel_divisor = a.divisor;
  o.hidden = a.hidden;
  o.classes = a.classes;
  o.height = a.height;
  o.width = a.width;
  return o;
}

ModelSpec load_model_arg(const std::string& model, const PresetOptions& opt) {
  return load_model(is_preset(model) ? model : resolve_input(model).string(), opt);
}

struct AuditArgs {
  std::string model;
  std::optional<std::size_t> expect;
  std::string out;
  std::string manifest;
  ModelArgs model_args;
};

int cmd_audit(const AuditArgs& a) {
  const ModelSpec spec = load_model_arg(a.model, preset_options(a.model_args));
  const ParamAudit audit = audit_parameters(spec);
  std::cout << report::audit_table(spec, audit);
  RunManifest m;
  m.command = "audit";
  m.config.set("model", a.model);
  m.config.set("spec_hash", report::hex64(spec_hash(spec)));
  if (a.expect) m.config.set("expect", std::to_string(*a.expect));
  if (!is_preset(a.model)) m.add_input(resolve_input(a.model));
  if (!a.out.empty()) {
    report::audit_to_kv(spec, audit).save(a.out);
    m.add_output(a.out);
  }
  write_manifest(m, !a.manifest.empty() ? fs::path(a.manifest)
                                        : (!a.out.empty() ? fs::path(a.out + ".manifest") : fs::path("audit.manifest")));
  if (a.expect && *a.expect != audit.total) {
    throw ExpectationFailed("expected " + std::to_string(*a.expect) + " trainable parameters, counted " +
                            std::to_string(audit.total));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string archive;
  std::string model = "lgcnn-1";
  std::string out = "run";
  std::size_t repeats = 1;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::string optimizer = "adam";
  double momentum = 0.9;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;
  ModelArgs model_args;
  bool quiet = false;
};

KeyValues aggregate_kv(const std::vector<EvalReport>& reports, const std::string& model) {
  KeyValues kv;
  kv.set("kind", "aggregate");
  kv.set("model", model);
  kv.set("repeats", std::to_string(reports.size()));
  const double n = static_cast<double>(reports.size());
  double mean = 0.0;
  for (const auto& r : reports) mean += r.mean_fdr;
  mean /= n;
  double var = 0.0;
  for (const auto& r : reports) var += (r.mean_fdr - mean) * (r.mean_fdr - mean);
  const double sd = reports.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  for (std::size_t i = 0; i < reports.size(); ++i) kv.set("mean_fdr." + std::to_string(i + 1), report::fixed(reports[i].mean_fdr));
  kv.set("mean_fdr.mean", report::fixed(mean));
  kv.set("mean_fdr.std", report::fixed(sd));
  kv.set("classes", report::join(reports.front().class_ids));
  for (std::size_t c = 0; c < reports.front().class_ids.size(); ++c) {
    double s = 0.0;
    for (const auto& r : reports) s += r.fdr[c];
    kv.set("fdr." + std::to_string(reports.front().class_ids[c]), report::fixed(s / n));
  }
  return kv;
}

int cmd_train(const TrainArgs& a) {
  if (a.repeats == 0) throw DomainError("--repeats must be at least 1");
  const fs::path archive_path = resolve_input(a.archive.empty() ? data_dir_default("dataset.lgds") : fs::path(a.archive));
  const data::DatasetArchive archive = data::load_archive(archive_path);
  ModelArgs ma = a.model_args;
  ma.classes = archive.train.num_classes();
  ma.height = archive.train.height;
  ma.width = archive.train.width;
  const ModelSpec spec = load_model_arg(a.model, preset_options(ma));

  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.learning_rate = a.lr;
  cfg.optimizer = parse_optimizer(a.optimizer);
  cfg.momentum = a.momentum;
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.validate();

  RunManifest m;
  m.command = "train";
  m.seed = a.seed;
  m.config.set("model", a.model);
  m.config.set("spec_hash", report::hex64(spec_hash(spec)));
  m.config.set("repeats", std::to_string(a.repeats));
  m.config.set("epochs", std::to_string(cfg.epochs));
  m.config.set("batch_size", std::to_string(cfg.batch_size));
  m.config.set("lr", report::exact(cfg.learning_rate));
  m.config.set("optimizer", optimizer_name(cfg.optimizer));
  m.config.set("momentum", report::exact(cfg.momentum));
  m.config.set("checkpoint_every", std::to_string(cfg.checkpoint_every));
  m.config.set("divisor", std::to_string(ma.divisor));
  m.config.set("hidden", std::to_string(ma.hidden));
  m.add_input(archive_path);
  if (!is_preset(a.model)) m.add_input(resolve_input(a.model));

  const fs::path out = a.out;
  fs::create_directories(out);
  std::vector<EvalReport> reports;
  for (std::size_t r = 0; r < a.repeats; ++r) {
    const std::uint64_t seed = a.seed + r;
    const fs::path dir = a.repeats == 1 ? out : out / ("repeat_" + std::to_string(r + 1));
    fs::create_directories(dir);
    cfg.seed = seed;
    cfg.checkpoint_dir = dir / "checkpoints";
    Network<float> net = make_network(spec, seed);
    const auto on_epoch = [&](std::size_t e, double loss, double acc) {
      if (!a.quiet) {
        std::fprintf(stderr, "repeat %zu epoch %zu/%zu loss %.4f accuracy %.3f\n", r + 1, e, cfg.epochs, loss, acc);
      }
    };
    const TrainReport tr = train(net, archive.train, cfg, on_epoch);
    save_checkpoint(net, dir / "model.lgck");
    const EvalReport er = evaluate(net, archive.test);
    report::train_report_to_kv(tr).save(dir / "train_report.txt");
    report::eval_report_to_kv(er, spec.name).save(dir / "eval_report.txt");
    write_text(dir / "confusion.csv", report::confusion_csv(er));
    std::cout << (a.repeats > 1 ? "repeat " + std::to_string(r + 1) + ": " : std::string{})
              << "test mean FDR " << report::fixed(er.mean_fdr) << "\n";
    for (const auto& c : tr.checkpoints) m.add_output(c);
    for (const char* f : {"model.lgck", "train_report.txt", "eval_report.txt", "confusion.csv"}) m.add_output(dir / f);
    reports.push_back(er);
  }
  if (a.repeats > 1) {
    const KeyValues agg = aggregate_kv(reports, spec.name);
    agg.save(out / "aggregate.txt");
    m.add_output(out / "aggregate.txt");
    std::cout << "aggregate mean FDR " << agg.get("mean_fdr.mean") << " +/- " << agg.get("mean_fdr.std") << " over "
              << a.repeats << " repeats\n";
  } else {
    std::cout << report::fdr_table(reports.front());
  }
  write_manifest(m, out / "manifest.txt");
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string archive;
  std::string checkpoint;
  std::string model;
  std::string out;
  ModelArgs model_args;
};

int cmd_eval(const EvalArgs& a) {
  const fs::path ckpt = resolve_input(a.checkpoint);
  if (!fs::exists(ckpt)) throw IoError("checkpoint '" + ckpt.string() + "' does not exist");
  const fs::path archive_path = resolve_input(a.archive);
  const data::DatasetArchive archive = data::load_archive(archive_path);
  Network<float> net = [&] {
    if (a.model.empty()) return load_checkpoint(ckpt);
    ModelArgs ma = a.model_args;
    ma.classes = archive.test.num_classes();
    ma.height = archive.test.height;
    ma.width = archive.test.width;
    Network<float> n(load_model_arg(a.model, preset_options(ma)));
    load_checkpoint_into(n, ckpt);
    return n;
  }();
  const EvalReport r = evaluate(net, archive.test);
  std::cout << report::fdr_table(r);

  RunManifest m;
  m.command = "eval";
  m.config.set("model", net.spec().name);
  m.config.set("spec_hash", report::hex64(spec_hash(net.spec())));
  m.add_input(archive_path);
  m.add_input(ckpt);
  const fs::path out = a.out.empty() ? fs::path("eval") : fs::path(a.out);
  fs::create_directories(out);
  report::eval_report_to_kv(r, net.spec().name).save(out / "eval_report.txt");
  write_text(out / "confusion.csv", report::confusion_csv(r));
  m.add_output(out / "eval_report.txt");
  m.add_output(out / "confusion.csv");
  write_manifest(m, out / "manifest.txt");
  return 0;
}

// ---------------------------------------------------------------------------
// compare

struct CompareArgs {
  std::string a, b;
  std::string name_a, name_b;
  std::string out;
  std::string manifest;
};

EvalReport load_report(const fs::path& p) {
  const KeyValues kv = KeyValues::load(p);
  if (kv.has("kind") && kv.get("kind") == "aggregate") {
    // aggregates carry per-class mean FDRs in the same keys
    return report::eval_report_from_kv(KeyValues::parse("mean_fdr=" + kv.get("mean_fdr.mean") + "\n" + kv.to_text()));
  }
  return report::eval_report_from_kv(kv);
}

int cmd_compare(const CompareArgs& a) {
  const fs::path pa = resolve_input(a.a), pb = resolve_input(a.b);
  const KeyValues ka = KeyValues::load(pa), kb = KeyValues::load(pb);
  const EvalReport ra = load_report(pa), rb = load_report(pb);
  const std::string na = !a.name_a.empty() ? a.name_a : (ka.has("model") ? ka.get("model") : "A");
  const std::string nb = !a.name_b.empty() ? a.name_b : (kb.has("model") ? kb.get("model") : "B");
  const report::Comparison c = report::compare(ra, rb);
  std::cout << report::comparison_table(c, na, nb);
  RunManifest m;
  m.command = "compare";
  m.config.set("name_a", na);
  m.config.set("name_b", nb);
  m.add_input(pa);
  m.add_input(pb);
  if (!a.out.empty()) {
    KeyValues kv = report::comparison_to_kv(c);
    kv.set("name_a", na);
    kv.set("name_b", nb);
    kv.save(a.out);
    m.add_output(a.out);
  }
  write_manifest(m, !a.manifest.empty() ? fs::path(a.manifest)
                                        : (!a.out.empty() ? fs::path(a.out + ".manifest") : fs::path("compare.manifest")));
  return 0;
}

// ---------------------------------------------------------------------------
// corrmap

struct CorrmapArgs {
  std::string raw_dir;
  std::string synthetic;
  std::uint64_t seed = 0;
  int fault = 1;
  std::vector<std::string> drop;
  bool no_drop = false;
  std::size_t fault_index = data::kDefaultTrainFaultIndex;
  std::string out = "corrmap";
  std::size_t cell = 8;
};

int cmd_corrmap(const CorrmapArgs& a) {
  RunManifest m;
  m.command = "corrmap";
  m.seed = a.seed;
  std::vector<data::SimulationRecord> recs;
  if (!a.synthetic.empty()) {
    const SynthArgs s = parse_synth_args(a.synthetic, a.seed);
    recs = data::synth_faults(s.train);
    m.config.set("synthetic", synth_description(s));
  } else {
    const fs::path raw = resolve_input(a.raw_dir.empty() ? data_dir_default("raw") : fs::path(a.raw_dir));
    if (!fs::is_directory(raw)) throw IoError("raw data directory '" + raw.string() + "' does not exist");
    const fs::path train_dir = fs::is_directory(raw / "train") ? raw / "train" : raw;
    recs = data::ingest(train_dir);
    const auto drop = a.no_drop ? std::vector<std::string>{} : (a.drop.empty() ? data::default_drop_list() : a.drop);
    recs = data::preprocess(std::move(recs), {drop, a.fault_index});
    m.config.set("drop", report::join(drop));
    m.config.set("fault_index", std::to_string(a.fault_index));
    m.add_input(train_dir);
  }
  std::vector<data::SimulationRecord> selected;
  for (auto& r : recs) {
    if (r.fault_id == a.fault) selected.push_back(std::move(r));
  }
  if (selected.empty()) throw DomainError("no records of fault " + std::to_string(a.fault));
  const data::CorrelationMatrix cm = data::correlation_matrix(selected);
  for (const auto& w : cm.warnings) std::cerr << "warning: " << w << "\n";
  const fs::path csv = a.out + ".csv", pgm = a.out + ".pgm";
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  data::write_correlation_csv(csv, cm);
  data::write_correlation_pgm(pgm, cm, a.cell);
  std::cout << "fault " << a.fault << ": " << cm.size << "x" << cm.size << " correlation map over "
            << data::total_samples(selected) << " samples -> " << csv.string() << ", " << pgm.string() << "\n";
  m.config.set("fault", std::to_string(a.fault));
  m.add_output(csv);
  m.add_output(pgm);
  write_manifest(m, a.out + ".manifest");
  return 0;
}

void add_model_options(CLI::App* cmd, ModelArgs& ma, bool geometry) {
  cmd->add_option("--divisor", ma.divisor, "Divide preset channel widths by this factor")->capture_default_str();
  cmd->add_option("--hidden", ma.hidden, "Hidden units of the two-layer preset heads")->capture_default_str();
  if (geometry) {
    cmd->add_option("--classes", ma.classes, "Output classes of a preset")->capture_default_str();
    cmd->add_option("--height", ma.height, "Image height of a preset")->capture_default_str();
    cmd->add_option("--width", ma.width, "Image width of a preset")->capture_default_str();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local-global CNN toolkit for multivariate fault diagnosis"};
  app.set_config("--config", "", "key=value config file; [command] sections, flags take precedence");
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "Build a normalized dataset archive from raw runs or a synthetic generator");
  prepare->add_option("raw_dir", prep.raw_dir, "Directory with train/ and test/ CSV runs (default $LGCNN_DATA_DIR/raw)");
  prepare->add_option("-o,--out", prep.out, "Archive path")->capture_default_str();
  prepare->add_option("--synthetic", prep.synthetic, "Generate instead of ingesting, e.g. \"classes=4 runs=10 len=200 vars=50\"");
  prepare->add_option("--seed", prep.seed, "Synthetic generator seed")->capture_default_str();
  prepare->add_option("--stats-mode", prep.stats_mode, "per-variable or global")->capture_default_str();
  prepare->add_option("--drop", prep.drop, "Variables to drop (default xmv_5,xmv_9)")->delimiter(',');
  prepare->add_flag("--no-drop", prep.no_drop, "Keep every variable");
  prepare->add_option("--fault-index-train", prep.fault_index_train, "Samples removed from the start of each training run")
      ->capture_default_str();
  prepare->add_option("--fault-index-test", prep.fault_index_test, "Samples removed from the start of each test run")
      ->capture_default_str();
  prepare->add_option("--window", prep.window, "Rows per image")->capture_default_str();

  SynthCmdArgs syn;
  auto* synth = app.add_subcommand("synth", "Write a synthetic raw dataset as CSV runs");
  synth->add_option("out", syn.out, "Output directory")->capture_default_str();
  synth->add_option("--spec", syn.spec, "Generator options")->capture_default_str();
  synth->add_option("--seed", syn.seed, "Generator seed")->capture_default_str();

  AuditArgs aud;
  std::size_t expect = 0;
  auto* audit = app.add_subcommand("audit", "Per-layer shapes, parameter counts and receptive fields");
  audit->add_option("model", aud.model, "Preset name or model spec file")->required();
  auto* expect_opt = audit->add_option("--expect", expect, "Exit 1 unless the total matches");
  audit->add_option("-o,--out", aud.out, "Also write the audit as key=value text");
  audit->add_option("--manifest", aud.manifest, "Manifest path");
  add_model_options(audit, aud.model_args, true);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train, checkpoint and evaluate one or more seeded repeats");
  train_cmd->add_option("archive", tr.archive, "Dataset archive (default $LGCNN_DATA_DIR/dataset.lgds)");
  train_cmd->add_option("-m,--model", tr.model, "Preset name or model spec file")->capture_default_str();
  train_cmd->add_option("-o,--out", tr.out, "Output directory")->capture_default_str();
  train_cmd->add_option("--repeats", tr.repeats, "Independent runs with seeds seed, seed+1, ...")->capture_default_str();
  train_cmd->add_option("--epochs", tr.epochs, "Epochs; 0 evaluates the initialized model")->capture_default_str();
  train_cmd->add_option("--batch-size", tr.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", tr.lr, "Learning rate")->capture_default_str();
  train_cmd->add_option("--optimizer", tr.optimizer, "sgd, momentum or adam")->capture_default_str();
  train_cmd->add_option("--momentum", tr.momentum)->capture_default_str();
  train_cmd->add_option("--seed", tr.seed)->capture_default_str();
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every, "Epochs between checkpoints; 0 disables")
      ->capture_default_str();
  train_cmd->add_flag("-q,--quiet", tr.quiet, "No per-epoch progress");
  add_model_options(train_cmd, tr.model_args, false);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Per-class FDR table and confusion matrix of a checkpoint");
  eval_cmd->add_option("archive", ev.archive, "Dataset archive")->required();
  eval_cmd->add_option("checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("-m,--model", ev.model, "Require the checkpoint to match this model");
  eval_cmd->add_option("-o,--out", ev.out, "Output directory (default ./eval)");
  add_model_options(eval_cmd, ev.model_args, false);

  CompareArgs cmp;
  auto* compare_cmd = app.add_subcommand("compare", "Per-class FDR deltas of two reports (B minus A)");
  compare_cmd->add_option("report_a", cmp.a)->required();
  compare_cmd->add_option("report_b", cmp.b)->required();
  compare_cmd->add_option("--name-a", cmp.name_a);
  compare_cmd->add_option("--name-b", cmp.name_b);
  compare_cmd->add_option("-o,--out", cmp.out, "Also write the comparison as key=value text");
  compare_cmd->add_option("--manifest", cmp.manifest, "Manifest path");

  CorrmapArgs cor;
  auto* corrmap = app.add_subcommand("corrmap", "Pearson correlation map of one fault's variables");
  corrmap->add_option("raw_dir", cor.raw_dir, "Raw CSV directory (its train/ subdirectory if present)");
  corrmap->add_option("--synthetic", cor.synthetic, "Use the synthetic generator instead");
  corrmap->add_option("--seed", cor.seed)->capture_default_str();
  corrmap->add_option("--fault", cor.fault, "Fault id")->capture_default_str();
  corrmap->add_option("--drop", cor.drop)->delimiter(',');
  corrmap->add_flag("--no-drop", cor.no_drop);
  corrmap->add_option("--fault-index", cor.fault_index)->capture_default_str();
  corrmap->add_option("-o,--out", cor.out, "Output prefix for .csv and .pgm")->capture_default_str();
  corrmap->add_option("--cell", cor.cell, "Pixels per matrix cell in the image")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*prepare) return cmd_prepare(prep);
    if (*synth) return cmd_synth(syn);
    if (*audit) {
      if (*expect_opt) aud.expect = expect;
      return cmd_audit(aud);
    }
    if (*train_cmd) return cmd_train(tr);
    if (*eval_cmd) return cmd_eval(ev);
    if (*compare_cmd) return cmd_compare(cmp);
    if (*corrmap) return cmd_corrmap(cor);
  } catch (const ExpectationFailed& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitExpectation;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitExpectation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}
