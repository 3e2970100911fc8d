// Acceptance suite: one PASS/FAIL/SKIP line per criterion. Exit status is 0
// only when nothing failed.
//
//   acceptance [work_dir [criterion ...]]
//
// Criteria 7 and 9 drive the command-line tool (LGCNN_CLI) in a scratch
// directory; everything else calls the library directly.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lgcnn/lgcnn.hpp"
#include "support/gradient_checks.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace lgcnn;

namespace {

struct Outcome {
  enum { pass, fail, skip } status = fail;
  std::string detail;
};

int failures = 0;

void report_line(int id, const char* title, const Outcome& o) {
  const char* tag = o.status == Outcome::pass ? "PASS" : o.status == Outcome::skip ? "SKIP" : "FAIL";
  if (o.status == Outcome::fail) ++failures;
  std::printf("%s  %d  %s: %s\n", tag, id, title, o.detail.c_str());
  std::fflush(stdout);
}

std::vector<int> selected;  // empty: all

void run_criterion(int id, const char* title, const std::function<Outcome()>& body) {
  if (!selected.empty() && std::find(selected.begin(), selected.end(), id) == selected.end()) return;
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {Outcome::fail, std::string("exception: ") + e.what()};
  }
  report_line(id, title, o);
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int shell(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && SOURCE_DATE_EPOCH=1700000000 '" LGCNN_CLI "' " + args +
                          " >> log.txt 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ---------------------------------------------------------------------------
// 1-3: model arithmetic

Outcome parameter_counts() {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<std::pair<std::string, std::size_t>> golden{
      {"lgcnn-1", 321668}, {"lgcnn-2", 719952}, {"lgcnn-3", 1509552},
      {"cnn-1", 320212},   {"cnn-2", 716528},   {"cnn-3", 1500656}};
  bool ok = true;
  std::string detail;
  for (const auto& [name, expected] : golden) {
    const std::size_t total = audit_parameters(preset(name)).total;
    ok = ok && total == expected;
    detail += name + "=" + std::to_string(total) + " ";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ok = ok && secs < 1.0;
  // instantiated networks agree with the static audit
  for (const auto& [name, expected] : golden) ok = ok && Network<float>(preset(name)).parameter_count() == expected;
  return verdict(ok, detail + fmt("in %.3f s", secs));
}

std::size_t shape_hw(const ModelSpec& spec, const std::string& layer, std::size_t* w) {
  const auto shapes = propagate_shapes(spec);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].name == layer) {
      *w = shapes[i].width;
      return shapes[i].height;
    }
  }
  throw ShapeError("no layer " + layer);
}

Outcome shapes() {
  bool ok = true;
  std::string detail = "flatten";
  const std::vector<std::size_t> flat{16000, 2304, 4608};
  for (int d = 1; d <= 3; ++d) {
    for (const char* family : {"lgcnn-", "cnn-"}) {
      const auto spec = preset(family + std::to_string(d));
      const std::size_t n = flatten_size(spec).value_or(0);
      ok = ok && n == flat[static_cast<std::size_t>(d - 1)];
      if (family[0] == 'l') detail += " " + std::to_string(n);
    }
  }
  for (const char* name : {"lgcnn-2", "lgcnn-3", "cnn-2", "cnn-3"}) {
    const auto spec = preset(name);
    std::size_t w0 = 0, w1 = 0, w2 = 0;
    const std::size_t h0 = shape_hw(spec, "local_relu", &w0);
    const std::size_t h1 = shape_hw(spec, "pool", &w1);
    const std::size_t h2 = shape_hw(spec, "reduce_conv", &w2);
    ok = ok && h0 == 20 && w0 == 50 && h1 == 10 && w1 == 25 && h2 == 4 && w2 == 9;
  }
  // the running network produces the propagated shapes
  Network<float> net(preset("lgcnn-2", {.channel_divisor = 8}));
  net.initialize(1);
  net.forward(Tensor<float>({2, 1, 20, 50}), Mode::eval);
  ok = ok && net.layer_output("fuse").shape() == Shape{2, 4, 20, 50} &&
       net.layer_output("pool").shape() == Shape{2, 4, 10, 25} &&
       net.layer_output("reduce_conv").shape() == Shape{2, 8, 4, 9};
  return verdict(ok, detail + "; 20x50 -> pool 10x25 -> s3 conv 4x9");
}

// Does perturbing input pixel (r, c) change any channel of `layer` at (oy, ox)?
bool influences(Network<float>& net, const std::string& layer, std::size_t r, std::size_t c, std::size_t oy,
                std::size_t ox) {
  std::mt19937_64 rng(9);
  auto x = oracle::random_tensor<float>({1, 1, 20, 50}, rng, 0.5, 1.5);
  net.forward(x, Mode::eval);
  const Tensor<float> before = net.layer_output(layer);
  x(0, 0, r, c) += 1.0f;
  net.forward(x, Mode::eval);
  const Tensor<float>& after = net.layer_output(layer);
  for (std::size_t ch = 0; ch < before.dim(1); ++ch) {
    if (before(0, ch, oy, ox) != after(0, ch, oy, ox)) return true;
  }
  return false;
}

Outcome receptive_fields_check() {
  bool ok = true;
  std::string detail;
  for (int d = 1; d <= 3; ++d) {
    const auto lg = preset("lgcnn-" + std::to_string(d));
    const auto cnn = preset("cnn-" + std::to_string(d));
    const auto fused = receptive_field(lg, "fuse");
    const auto local = receptive_field(cnn, "local_relu");
    ok = ok && fused.height == 20 && fused.width == 50 && local.height * local.width < 20 * 50 &&
         (local.height < 20 || local.width < 50);
    if (d == 1) {
      detail = "fuse " + std::to_string(fused.height) + "x" + std::to_string(fused.width) + " vs cnn " +
               std::to_string(local.height) + "x" + std::to_string(local.width);
    }
  }
  // measured: opposite corners of the image reach the fused output at the far corner, but not the
  // same-depth CNN activation
  Network<float> lg(preset("lgcnn-1")), cnn(preset("cnn-1"));
  lg.initialize(2);
  cnn.initialize(2);
  const bool lg_reach = influences(lg, "fuse", 0, 49, 19, 49) && influences(lg, "fuse", 19, 0, 19, 49);
  const bool cnn_reach = influences(cnn, "local_relu", 0, 49, 19, 49) || influences(cnn, "local_relu", 19, 0, 19, 49);
  ok = ok && lg_reach && !cnn_reach;
  return verdict(ok, detail + (lg_reach && !cnn_reach ? "; perturbation agrees" : "; perturbation disagrees"));
}

// ---------------------------------------------------------------------------
// 4-5: numerics

Outcome gradients() {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<std::pair<const char*, double (*)(int, std::uint64_t)>> checks{
      {"conv2d", gradcheck::conv2d},       {"full_span", gradcheck::full_span},
      {"outer_fuse", gradcheck::outer_fuse}, {"batch_norm", gradcheck::batch_norm},
      {"max_pool", gradcheck::max_pool},   {"fc", gradcheck::fully_connected},
      {"relu", gradcheck::relu},           {"softmax", gradcheck::softmax}};
  double worst = 0;
  std::string worst_name;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const double e = checks[i].second(20, 500 + i);
    if (e >= worst) {
      worst = e;
      worst_name = checks[i].first;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return verdict(worst < 1e-4 && secs < 120,
                 "8 layer types x 20 configs, worst rel err " + fmt("%.2e", worst) + " (" + worst_name + ")" +
                     fmt(", %.1f s", secs));
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

Outcome oracles() {
  std::mt19937_64 rng(77);
  double conv_err = 0, span_err = 0, pool_err = 0, fuse_err = 0;
  for (int cfg = 0; cfg < 20; ++cfg) {
    const std::size_t k = gradcheck::pick(rng, 1, 4), s = gradcheck::pick(rng, 1, 3);
    const std::size_t H = gradcheck::pick(rng, 4, 9), W = gradcheck::pick(rng, 4, 9);
    const Padding pad = cfg % 2 ? Padding::same : Padding::valid;
    auto p = ConvParams<double>::make(k, k, 2, 3, s, pad);
    p.weights = oracle::random_tensor<double>(p.weights.shape(), rng);
    p.bias = oracle::random_tensor<double>(p.bias.shape(), rng);
    const auto x = oracle::random_tensor<double>({2, 2, H, W}, rng);
    std::size_t pt = 0, pb = 0, pl = 0, pr = 0;
    if (pad == Padding::same) {
      const std::size_t oh = (H + s - 1) / s, ow = (W + s - 1) / s;
      const std::size_t th = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((oh - 1) * s + k) - static_cast<std::ptrdiff_t>(H));
      const std::size_t tw = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((ow - 1) * s + k) - static_cast<std::ptrdiff_t>(W));
      pt = th / 2, pb = th - pt, pl = tw / 2, pr = tw - pl;
    }
    conv_err = std::max(conv_err, max_abs_diff(conv2d(x, p), oracle::naive_conv2d(x, p.weights, p.bias, s, pt, pb, pl, pr)));

    // full-span kernels are the valid-padding conv2d with a whole-axis kernel
    auto fat = ConvParams<double>::make(1, W, 2, 3, 1, Padding::valid);
    auto tall = ConvParams<double>::make(H, 1, 2, 3, 1, Padding::valid);
    fat.weights = oracle::random_tensor<double>(fat.weights.shape(), rng);
    tall.weights = oracle::random_tensor<double>(tall.weights.shape(), rng);
    span_err = std::max({span_err, max_abs_diff(conv_fat_1d(x, fat), oracle::naive_conv2d(x, fat.weights, fat.bias, 1, 0, 0, 0, 0)),
                         max_abs_diff(conv_tall_1d(x, tall), oracle::naive_conv2d(x, tall.weights, tall.bias, 1, 0, 0, 0, 0))});

    const std::size_t win = gradcheck::pick(rng, 1, 3);
    pool_err = std::max(pool_err, max_abs_diff(max_pool2d(x, win, s), oracle::region_max_pool(x, win, s)));

    const auto phi = oracle::random_tensor<double>({2, 3, H, 1}, rng);
    const auto omega = oracle::random_tensor<double>({2, 3, 1, W}, rng);
    fuse_err = std::max(fuse_err, max_abs_diff(outer_product_fuse(phi, omega), oracle::nested_outer_product(phi, omega)));
  }

  data::SynthOptions so;
  so.classes = 3;
  so.runs_per_class = 2;
  so.variables = 12;
  so.seed = 4;
  const auto recs = data::synth_faults(so);
  const auto corr = data::correlation_matrix(recs);
  double pearson_err = 0;
  for (std::size_t i = 0; i < corr.size; ++i)
    for (std::size_t j = 0; j < corr.size; ++j)
      pearson_err = std::max(pearson_err, std::abs(corr.at(i, j) - oracle::two_pass_pearson(recs, i, j)));

  const bool ok = conv_err < 1e-12 && span_err < 1e-12 && pool_err == 0 && fuse_err == 0 && pearson_err <= 1e-10;
  return verdict(ok, "conv " + fmt("%.1e", conv_err) + ", tall/fat " + fmt("%.1e", span_err) + ", pool " +
                         fmt("%.1e", pool_err) + ", outer " + fmt("%.1e", fuse_err) + ", pearson " +
                         fmt("%.1e", pearson_err));
}

// ---------------------------------------------------------------------------
// 6: data pipeline

std::vector<data::SimulationRecord> protocol_records(std::size_t runs, std::size_t samples, std::uint64_t seed) {
  std::vector<std::string> names;
  for (int i = 1; i <= 41; ++i) names.push_back("xmeas_" + std::to_string(i));
  for (int i = 1; i <= 11; ++i) names.push_back("xmv_" + std::to_string(i));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<data::SimulationRecord> out;
  for (int fault = 1; fault <= 20; ++fault)
    for (std::size_t run = 0; run < runs; ++run) {
      data::SimulationRecord r;
      r.fault_id = fault;
      r.run_id = std::to_string(run);
      r.variables = names;
      r.samples.resize(samples * names.size());
      for (auto& v : r.samples) v = n(rng) + fault;
      out.push_back(std::move(r));
    }
  return out;
}

struct PipelineResult {
  std::size_t train_raw = 0, test_raw = 0, train_trimmed = 0, test_trimmed = 0, variables = 0;
  std::size_t train_images = 0, test_images = 0;
  std::string manifest;
};

// Runs the protocol pipeline and writes the archive plus its manifest into `dir`.
PipelineResult protocol_pipeline(const fs::path& dir) {
  PipelineResult r;
  auto train = protocol_records(40, 500, 1);
  auto test = protocol_records(7, 960, 2);
  r.train_raw = data::total_samples(train);
  r.test_raw = data::total_samples(test);
  train = data::preprocess(std::move(train), {data::default_drop_list(), data::kDefaultTrainFaultIndex});
  test = data::preprocess(std::move(test), {data::default_drop_list(), data::kDefaultTestFaultIndex});
  r.train_trimmed = data::total_samples(train);
  r.test_trimmed = data::total_samples(test);
  r.variables = train.front().num_variables();
  data::DatasetArchive archive;
  archive.train = data::windowize(train);
  archive.test = data::windowize(test, {}, archive.train.class_ids, "test");
  train.clear();
  test.clear();
  data::normalize(archive.train, archive.test);
  r.train_images = archive.train.size();
  r.test_images = archive.test.size();

  fs::create_directories(dir);
  data::save_archive(dir / "protocol.lgds", archive);
  report::RunManifest m;
  m.command = "acceptance protocol";
  m.seed = 1;
  m.config.set("fault_index_train", std::to_string(data::kDefaultTrainFaultIndex));
  m.config.set("fault_index_test", std::to_string(data::kDefaultTestFaultIndex));
  m.outputs.emplace_back("protocol.lgds", report::hex64(report::hash_file(dir / "protocol.lgds")));
  r.manifest = m.to_text("2023-11-14T22:13:20Z");
  std::ofstream(dir / "protocol.manifest") << r.manifest;
  return r;
}

Outcome pipeline(const fs::path& dir) {
  const auto r = protocol_pipeline(dir);
  const bool ok = r.train_raw == 400000 && r.test_raw == 134400 && r.variables == 50 && r.train_trimmed == 384000 &&
                  r.test_trimmed == 112000 && r.train_images == 19200 && r.test_images == 5600;
  return verdict(ok, "52->" + std::to_string(r.variables) + " vars, samples " + std::to_string(r.train_raw) + "->" +
                         std::to_string(r.train_trimmed) + " / " + std::to_string(r.test_raw) + "->" +
                         std::to_string(r.test_trimmed) + ", images " + std::to_string(r.train_images) + " / " +
                         std::to_string(r.test_images));
}

// ---------------------------------------------------------------------------
// 7: desk-scale end to end, through the CLI

constexpr int kSeeds = 5;
const std::string kDeskData = "--synthetic 'classes=4 runs=40 len=200 vars=50 persistence=0' --seed 0 -o desk.lgds";
const std::string kDeskTrain = "--divisor 8 --optimizer adam --lr 0.001 --batch-size 32 --epochs 30 -q --seed 0 --repeats 5";

// Prepares the desk dataset and trains both reduced models in `dir`.
void desk_runs(const fs::path& dir) {
  fs::create_directories(dir);
  if (shell(dir, "prepare " + kDeskData) != 0) throw Error("prepare failed, see " + (dir / "log.txt").string());
  for (const char* model : {"lgcnn-1", "cnn-1"}) {
    if (shell(dir, std::string("train desk.lgds -m ") + model + " " + kDeskTrain + " -o " + model) != 0) {
      throw Error(std::string("train ") + model + " failed, see " + (dir / "log.txt").string());
    }
  }
}

EvalReport repeat_report(const fs::path& dir, const std::string& model, int r) {
  return report::eval_report_from_kv(
      report::KeyValues::load(dir / model / ("repeat_" + std::to_string(r + 1)) / "eval_report.txt"));
}

Outcome desk_scale(const fs::path& dir) {
  const auto start = std::chrono::steady_clock::now();
  desk_runs(dir);
  const std::size_t pair = data::synth_correlation_pair(4);  // class indices pair, pair + 1
  double lg_min = 1, lg_mean = 0, lg_pair = 0, cnn_pair = 0;
  for (int r = 0; r < kSeeds; ++r) {
    const auto lg = repeat_report(dir, "lgcnn-1", r);
    const auto cnn = repeat_report(dir, "cnn-1", r);
    lg_min = std::min(lg_min, lg.mean_fdr);
    lg_mean += lg.mean_fdr / kSeeds;
    lg_pair += (lg.fdr[pair] + lg.fdr[pair + 1]) / (2.0 * kSeeds);
    cnn_pair += (cnn.fdr[pair] + cnn.fdr[pair + 1]) / (2.0 * kSeeds);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool ok = lg_min >= 0.95 && lg_pair - cnn_pair >= 0.05;
  return verdict(ok, "lgcnn-1/8 mean FDR " + fmt("%.3f", lg_mean) + " (min seed " + fmt("%.3f", lg_min) +
                         "); pair FDR lgcnn " + fmt("%.3f", lg_pair) + " vs cnn " + fmt("%.3f", cnn_pair) +
                         fmt(", %.0f s", secs));
}

// ---------------------------------------------------------------------------
// 8: optional full-size run

Outcome full_size(const fs::path& dir) {
  const char* tep = std::getenv("LGCNN_TEP_DIR");
  if (!tep || !*tep) return {Outcome::skip, "set LGCNN_TEP_DIR to a raw dataset directory to run (hours)"};
  fs::create_directories(dir);
  if (shell(dir, "prepare '" + std::string(tep) + "' -o tep.lgds") != 0) return {Outcome::fail, "prepare failed"};
  for (const char* model : {"lgcnn-3", "cnn-3"}) {
    if (shell(dir, std::string("train tep.lgds -q --repeats 10 -m ") + model + " -o " + model) != 0) {
      return {Outcome::fail, std::string("train ") + model + " failed"};
    }
  }
  if (shell(dir, "compare lgcnn-3/aggregate.txt cnn-3/aggregate.txt --name-a LG-CNN-3 --name-b CNN-3 -o comparison.txt") !=
      0) {
    return {Outcome::fail, "compare failed"};
  }
  std::printf("%s", slurp(dir / "comparison.txt").c_str());
  return {Outcome::pass, "tables in " + (dir / "comparison.txt").string() + "; no numeric gate"};
}

// ---------------------------------------------------------------------------
// 9: determinism

std::vector<std::string> desk_artifacts() {
  std::vector<std::string> files{"desk.lgds", "desk.lgds.manifest"};
  for (const char* model : {"lgcnn-1", "cnn-1"}) {
    const std::string m = model;
    files.push_back(m + "/manifest.txt");
    files.push_back(m + "/aggregate.txt");
    for (int r = 0; r < kSeeds; ++r) {
      const std::string rep = m + "/repeat_" + std::to_string(r + 1) + "/";
      for (const char* f : {"eval_report.txt", "train_report.txt", "confusion.csv", "model.lgck"}) files.push_back(rep + f);
    }
  }
  return files;
}

Outcome determinism(const fs::path& first, const fs::path& second) {
  const auto rerun = protocol_pipeline(second / "protocol");
  std::size_t compared = 0, differing = 0;
  std::string which;
  const auto check = [&](const fs::path& a, const fs::path& b, const std::string& label) {
    ++compared;
    if (!fs::exists(a) || !fs::exists(b) || slurp(a) != slurp(b)) {
      ++differing;
      if (which.empty()) which = label;
    }
  };
  for (const char* f : {"protocol.lgds", "protocol.manifest"})
    check(first / "protocol" / f, second / "protocol" / f, f);

  desk_runs(second / "desk");
  for (const auto& f : desk_artifacts()) check(first / "desk" / f, second / "desk" / f, f);
  return verdict(differing == 0 && !rerun.manifest.empty(),
                 std::to_string(compared - differing) + "/" + std::to_string(compared) + " files bit-identical" +
                     (which.empty() ? "" : ", first mismatch " + which));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "lgcnn_acceptance";
  for (int i = 2; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  fs::remove_all(work);
  fs::create_directories(work);
  std::printf("work directory %s\n", work.string().c_str());

  run_criterion(1, "parameter counts", parameter_counts);
  run_criterion(2, "shapes", shapes);
  run_criterion(3, "receptive fields", receptive_fields_check);
  run_criterion(4, "gradient checks", gradients);
  run_criterion(5, "oracle equivalence", oracles);
  run_criterion(6, "data pipeline arithmetic", [&] { return pipeline(work / "run_a" / "protocol"); });
  run_criterion(7, "desk-scale end to end", [&] { return desk_scale(work / "run_a" / "desk"); });
  run_criterion(8, "full-size reproduction", [&] { return full_size(work / "full"); });
  run_criterion(9, "pinned-seed determinism", [&] { return determinism(work / "run_a", work / "run_b"); });

  std::printf("%s\n", failures == 0 ? "acceptance: all criteria met" : "acceptance: some criteria failed");
  return failures == 0 ? 0 : 1;
}
