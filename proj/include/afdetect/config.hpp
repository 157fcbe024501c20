#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "afdetect/errors.hpp"

namespace afdetect {

enum class ModelKind { CwtMbResnet, CwtResnet, Cnn1dMb, Cnn1d };

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "cwt_mb_resnet") return ModelKind::CwtMbResnet;
  if (s == "cwt_resnet") return ModelKind::CwtResnet;
  if (s == "cnn1d_mb") return ModelKind::Cnn1dMb;
  if (s == "cnn1d") return ModelKind::Cnn1d;
  throw ConfigError("unknown model kind: " + s);
}

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::CwtMbResnet: return "cwt_mb_resnet";
    case ModelKind::CwtResnet: return "cwt_resnet";
    case ModelKind::Cnn1dMb: return "cnn1d_mb";
    default: return "cnn1d";
  }
}

inline bool uses_cwt(ModelKind k) {
  return k == ModelKind::CwtMbResnet || k == ModelKind::CwtResnet;
}
inline bool uses_branching(ModelKind k) {
  return k == ModelKind::CwtMbResnet || k == ModelKind::Cnn1dMb;
}

// Resolved run configuration. Defaults here are the documented defaults of
// the toolkit; a TOML-style key = value file overrides them and command-line
// flags override the file. The fully resolved set is what gets snapshotted.
struct RunConfig {
  ModelKind model = ModelKind::CwtMbResnet;
  std::string train_manifest;
  std::string out_dir = "run";
  std::uint64_t seed = 1;

  // data
  double record_fs = 300.0;
  double test_fraction = 0.2;
  bool denoise = true;

  // preprocess
  double highpass_hz = 0.5;
  double notch_hz = 60.0;
  double lowpass_hz = 40.0;
  int filter_order = 4;
  double notch_q = 30.0;
  std::size_t target_length = 3000;
  double target_fs = 300.0;

  // cwt
  int n_scales = 64;
  double f_min = 1.0;
  double f_max = 40.0;
  int image_size = 128;
  std::string scalogram_mode = "absolute";  // or "signed"

  // training
  std::string n_branches = "auto";  // "auto" or positive integer
  int epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  bool repartition_each_epoch = false;
  std::string precision = "float64";  // "float64" reference, "float32" fast

  int threads = 1;

  void validate() const {
    if (test_fraction < 0.0 || test_fraction > 1.0)
      throw ConfigError("test_fraction must be in [0,1]");
    if (epochs < 1 || batch_size < 1) throw ConfigError("bad training sizes");
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    if (image_size < 8) throw ConfigError("image_size must be >= 8");
    if (precision != "float64" && precision != "float32")
      throw ConfigError("precision must be float64 or float32");
    if (scalogram_mode != "absolute" && scalogram_mode != "signed")
      throw ConfigError("scalogram_mode must be absolute or signed");
    if (n_branches != "auto") {
      const int nb = std::atoi(n_branches.c_str());
      if (nb < 1 || nb > 32) throw ConfigError("n_branches must be auto or in [1,32]");
    }
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto issp = [](unsigned char c) { return std::isspace(c); };
  while (!s.empty() && issp(s.front())) s.erase(s.begin());
  while (!s.empty() && issp(s.back())) s.pop_back();
  return s;
}

inline std::string unquote(std::string s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
    return s.substr(1, s.size() - 2);
  return s;
}

}  // namespace detail

// Minimal TOML-style parser: `key = value` lines, `#` comments, quoted or
// bare values. Section headers are rejected to keep the schema flat.
inline std::map<std::string, std::string> parse_config_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[')
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": sections are not supported; use flat keys");
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::unquote(detail::trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(path + ": empty key");
    kv[key] = value;
  }
  return kv;
}

inline void apply_config_map(RunConfig& cfg,
                             const std::map<std::string, std::string>& kv) {
  auto want_double = [](const std::string& k, const std::string& v) {
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
      throw ConfigError("config key " + k + ": expected number, got '" + v + "'");
    return d;
  };
  auto want_bool = [](const std::string& k, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("config key " + k + ": expected true/false");
  };
  for (const auto& [k, v] : kv) {
    if (k == "model") cfg.model = model_kind_from_string(v);
    else if (k == "train_manifest") cfg.train_manifest = v;
    else if (k == "out_dir") cfg.out_dir = v;
    else if (k == "seed") cfg.seed = static_cast<std::uint64_t>(want_double(k, v));
    else if (k == "record_fs") cfg.record_fs = want_double(k, v);
    else if (k == "test_fraction") cfg.test_fraction = want_double(k, v);
    else if (k == "denoise") cfg.denoise = want_bool(k, v);
    else if (k == "highpass_hz") cfg.highpass_hz = want_double(k, v);
    else if (k == "notch_hz") cfg.notch_hz = want_double(k, v);
    else if (k == "lowpass_hz") cfg.lowpass_hz = want_double(k, v);
    else if (k == "filter_order") cfg.filter_order = static_cast<int>(want_double(k, v));
    else if (k == "notch_q") cfg.notch_q = want_double(k, v);
    else if (k == "target_length") cfg.target_length = static_cast<std::size_t>(want_double(k, v));
    else if (k == "target_fs") cfg.target_fs = want_double(k, v);
    else if (k == "n_scales") cfg.n_scales = static_cast<int>(want_double(k, v));
    else if (k == "f_min") cfg.f_min = want_double(k, v);
    else if (k == "f_max") cfg.f_max = want_double(k, v);
    else if (k == "image_size") cfg.image_size = static_cast<int>(want_double(k, v));
    else if (k == "scalogram_mode") cfg.scalogram_mode = v;
    else if (k == "n_branches") cfg.n_branches = v;
    else if (k == "epochs") cfg.epochs = static_cast<int>(want_double(k, v));
    else if (k == "batch_size") cfg.batch_size = static_cast<std::size_t>(want_double(k, v));
    else if (k == "lr") cfg.lr = want_double(k, v);
    else if (k == "repartition_each_epoch") cfg.repartition_each_epoch = want_bool(k, v);
    else if (k == "precision") cfg.precision = v;
    else if (k == "threads") cfg.threads = static_cast<int>(want_double(k, v));
    else throw ConfigError("unknown config key: " + k);
  }
}

// The resolved snapshot fully determines a rerun.
inline void write_resolved_config(const RunConfig& cfg,
                                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out.precision(17);
  out << "model = \"" << to_string(cfg.model) << "\"\n";
  out << "train_manifest = \"" << cfg.train_manifest << "\"\n";
  out << "out_dir = \"" << cfg.out_dir << "\"\n";
  out << "seed = " << cfg.seed << "\n";
  out << "record_fs = " << cfg.record_fs << "\n";
  out << "test_fraction = " << cfg.test_fraction << "\n";
  out << "denoise = " << (cfg.denoise ? "true" : "false") << "\n";
  out << "highpass_hz = " << cfg.highpass_hz << "\n";
  out << "notch_hz = " << cfg.notch_hz << "\n";
  out << "lowpass_hz = " << cfg.lowpass_hz << "\n";
  out << "filter_order = " << cfg.filter_order << "\n";
  out << "notch_q = " << cfg.notch_q << "\n";
  out << "target_length = " << cfg.target_length << "\n";
  out << "target_fs = " << cfg.target_fs << "\n";
  out << "n_scales = " << cfg.n_scales << "\n";
  out << "f_min = " << cfg.f_min << "\n";
  out << "f_max = " << cfg.f_max << "\n";
  out << "image_size = " << cfg.image_size << "\n";
  out << "scalogram_mode = \"" << cfg.scalogram_mode << "\"\n";
  out << "n_branches = \"" << cfg.n_branches << "\"\n";
  out << "epochs = " << cfg.epochs << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "lr = " << cfg.lr << "\n";
  out << "repartition_each_epoch = "
      << (cfg.repartition_each_epoch ? "true" : "false") << "\n";
  out << "precision = \"" << cfg.precision << "\"\n";
  out << "threads = " << cfg.threads << "\n";
}

}  // namespace afdetect
