#pragma once

#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "lgcnn/error.hpp"
#include "lgcnn/model_spec.hpp"

// The six reference architectures: lgcnn-1..3 (local + global branches) and
// cnn-1..3 (local branch only).
//
// LG-CNN batch-norm placement: after the local 3x3 conv, after the outer
// product (all depths), after the strided trunk conv, and after the extra
// trunk 3x3 conv of depth 3. The fat/tall branches carry no BN. This is the
// placement under which the parameter totals 321,668 / 719,952 / 1,509,552
// come out exactly.
//
// The CNN baselines drop the 1x1 squeeze conv so that their totals come out
// at 320,212 / 716,528 / 1,500,656.
//
// ReLU follows every convolution except the 1x1 convolutions that feed the
// channel concatenation.

namespace lgcnn {

struct PresetOptions {
  std::size_t channels = 1;
  std::size_t height = 20;
  std::size_t width = 50;
  std::size_t classes = 20;
  /// Divides every convolution channel count (rounded up, at least 1).
  std::size_t channel_divisor = 1;
  std::size_t hidden = 300;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"lgcnn-1", "lgcnn-2", "lgcnn-3", "cnn-1", "cnn-2", "cnn-3"};
  return names;
}

inline bool is_preset(const std::string& name) {
  for (const auto& n : preset_names()) {
    if (n == name) return true;
  }
  return false;
}

namespace detail {

inline std::size_t scaled(std::size_t c, std::size_t divisor) {
  return std::max<std::size_t>(1, (c + divisor - 1) / divisor);
}

}  // namespace detail

/// Text form of a preset, in the model spec format.
inline std::string preset_text(const std::string& name, const PresetOptions& opt = {}) {
  if (!is_preset(name)) throw ParseError("unknown preset '" + name + "'");
  if (opt.channel_divisor == 0 || opt.classes == 0) throw ParseError("preset options must be positive");
  const bool global = name.rfind("lgcnn", 0) == 0;
  const int depth = name.back() - '0';
  const std::size_t base = std::size_t{16} << (depth - 1);  // 16, 32, 64
  auto ch = [&](std::size_t c) { return detail::scaled(c, opt.channel_divisor); };

  const std::size_t local = ch(base);
  const std::size_t squeeze = ch(base / 2);
  const std::size_t trunk3 = ch(64);
  const std::size_t reduce = ch(depth == 2 ? 64 : 128);

  std::ostringstream os;
  std::string model_name = name;
  if (opt.channel_divisor != 1) model_name += "-div" + std::to_string(opt.channel_divisor);
  os << "model " << model_name << "\n";
  os << "input (" << opt.channels << ", " << opt.height << ", " << opt.width << ")\n";

  os << "local_conv = C((3,3)," << local << ") <- input\n";
  os << "local_bn = BN\n";
  os << "local_relu = ReLU\n";
  std::size_t channels = local;
  std::string last = "local_relu";
  if (global) {
    os << "local_squeeze = C((1,1)," << squeeze << ")\n";
    os << "fat_conv = C((1," << opt.width << ")," << local << ") <- input\n";
    os << "fat_relu = ReLU\n";
    os << "tall_conv = C((" << opt.height << ",1)," << local << ") <- input\n";
    os << "tall_relu = ReLU\n";
    os << "fuse = Mul(fat_relu, tall_relu)\n";
    os << "fuse_bn = BN\n";
    os << "fuse_relu = ReLU\n";
    os << "global_squeeze = C((1,1)," << squeeze << ")\n";
    os << "merge = Concat(local_squeeze, global_squeeze)\n";
    channels = 2 * squeeze;
    last = "merge";
  }
  std::size_t h = opt.height, w = opt.width;
  if (depth == 3) {
    os << "trunk_conv = C((3,3)," << trunk3 << ") <- " << last << "\n";
    os << "trunk_bn = BN\n";
    os << "trunk_relu = ReLU\n";
    last = "trunk_relu";
    channels = trunk3;
  }
  if (depth >= 2) {
    os << "pool = P((2,2),2) <- " << last << "\n";
    os << "reduce_conv = C((3,3)," << reduce << ",s=3)\n";
    os << "reduce_bn = BN\n";
    os << "reduce_relu = ReLU\n";
    last = "reduce_relu";
    channels = reduce;
    if (h < 2 || w < 2) throw ShapeError("input too small for a 2x2 pool");
    h = ((h - 2) / 2 + 1 + 2) / 3;
    w = ((w - 2) / 2 + 1 + 2) / 3;
  }
  const std::size_t features = channels * h * w;
  os << "flatten = Flatten <- " << last << "\n";
  if (depth == 1) {
    os << "fc = FC(" << features << "," << opt.classes << ")\n";
  } else {
    os << "fc1 = FC(" << features << "," << opt.hidden << ")\n";
    os << "fc1_relu = ReLU\n";
    os << "fc2 = FC(" << opt.hidden << "," << opt.classes << ")\n";
  }
  os << "prob = Softmax\n";
  return os.str();
}

inline ModelSpec preset(const std::string& name, const PresetOptions& opt = {}) {
  ModelSpec spec = parse_model_spec(preset_text(name, opt), name);
  resolve(spec);  // validates, including the computed FC width
  return spec;
}

/// Preset name or path to a spec file.
inline ModelSpec load_model(const std::string& name_or_path, const PresetOptions& opt = {}) {
  if (is_preset(name_or_path)) return preset(name_or_path, opt);
  return load_model_spec(name_or_path);
}

}  // namespace lgcnn
