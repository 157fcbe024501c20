#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "afdetect/errors.hpp"
#include "afdetect/models.hpp"
#include "afdetect/nn/adam.hpp"

namespace afdetect {

// Checkpoint container, version 1. Byte layout:
//   bytes 0..3   magic "AFCK"
//   bytes 4..7   format version, uint32 little-endian
//   bytes 8..15  JSON header length, uint64 little-endian
//   header       UTF-8 JSON: model kind, architecture descriptor, ordered
//                parameter and buffer manifests, optimizer hyperparameters
//   payload      for each listed parameter, then each buffer, the values as
//                little-endian float64; if the header marks an optimizer,
//                the Adam m then v arrays follow in parameter order
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::string model_kind;
  json arch;
  bool has_optimizer = false;
};

namespace detail {

inline void write_f64(std::ofstream& out, const double* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), n * sizeof(double));
}

template <class Real>
void write_values(std::ofstream& out, const std::vector<Real>& v) {
  if constexpr (std::is_same_v<Real, double>) {
    write_f64(out, v.data(), v.size());
  } else {
    std::vector<double> tmp(v.begin(), v.end());
    write_f64(out, tmp.data(), tmp.size());
  }
}

template <class Real>
void read_values(std::ifstream& in, std::vector<Real>& v, std::size_t n) {
  std::vector<double> tmp(n);
  in.read(reinterpret_cast<char*>(tmp.data()), n * sizeof(double));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(double))
    throw MalformedFile("checkpoint: truncated payload");
  v.assign(tmp.begin(), tmp.end());
}

inline json read_header_json(std::ifstream& in, const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "AFCK", 4) != 0)
    throw MalformedFile(path + ": not a checkpoint file");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != kCheckpointVersion)
    throw ArchitectureMismatch(path + ": unsupported checkpoint version");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(in.gcount()) != len)
    throw MalformedFile(path + ": truncated header");
  return json::parse(text);
}

}  // namespace detail

template <class Real, class Model>
void save_checkpoint(Model& model, const std::string& model_kind,
                     const std::string& path,
                     const nn::AdamState<Real>* adam = nullptr) {
  json header;
  header["version"] = kCheckpointVersion;
  header["model_kind"] = model_kind;
  header["arch"] = model.config().to_json();
  header["params"] = json::array();
  header["buffers"] = json::array();
  model.visit([&header](const std::string& name, nn::Tensor<Real>& t) {
    header["params"].push_back({{"name", name}, {"shape", t.shape()}});
  });
  model.visit_buffers([&header](const std::string& name,
                                std::vector<Real>& buf) {
    header["buffers"].push_back({{"name", name}, {"size", buf.size()}});
  });
  header["has_optimizer"] = adam != nullptr;
  if (adam) {
    header["optimizer"] = {{"step", adam->step},
                           {"lr", static_cast<double>(adam->lr)},
                           {"beta1", static_cast<double>(adam->beta1)},
                           {"beta2", static_cast<double>(adam->beta2)},
                           {"eps", static_cast<double>(adam->eps)}};
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write("AFCK", 4);
  const std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), 4);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(len));

  model.visit([&out](const std::string&, nn::Tensor<Real>& t) {
    detail::write_values(out, t.values());
  });
  model.visit_buffers([&out](const std::string&, std::vector<Real>& buf) {
    detail::write_values(out, buf);
  });
  if (adam) {
    for (const auto& m : adam->m) detail::write_values(out, m);
    for (const auto& v : adam->v) detail::write_values(out, v);
  }
  if (!out) throw DataError("write failure on " + path);
}

inline CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  const json header = detail::read_header_json(in, path);
  CheckpointHeader h;
  h.model_kind = header.at("model_kind");
  h.arch = header.at("arch");
  h.has_optimizer = header.at("has_optimizer");
  return h;
}

// Rebuilds the model from the stored architecture descriptor and loads its
// weights and running statistics. Optionally restores Adam state.
template <class Real, class Model>
Model load_checkpoint(const std::string& path,
                      const std::string& expected_kind,
                      nn::AdamState<Real>* adam = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  const json header = detail::read_header_json(in, path);
  if (header.at("model_kind") != expected_kind)
    throw ArchitectureMismatch(path + ": checkpoint holds model kind '" +
                               header.at("model_kind").get<std::string>() +
                               "', expected '" + expected_kind + "'");
  Model model = Model::build(
      Model::config_type::from_json(header.at("arch")), /*seed=*/0);

  std::size_t pi = 0;
  const auto& params = header.at("params");
  model.visit([&](const std::string& name, nn::Tensor<Real>& t) {
    if (pi >= params.size() || params[pi].at("name") != name ||
        params[pi].at("shape").get<std::vector<int>>() != t.shape())
      throw ArchitectureMismatch(path + ": parameter layout mismatch at " +
                                 name);
    detail::read_values(in, t.values(), t.size());
    ++pi;
  });
  if (pi != params.size())
    throw ArchitectureMismatch(path + ": extra parameters in checkpoint");

  std::size_t bi = 0;
  const auto& buffers = header.at("buffers");
  model.visit_buffers([&](const std::string& name, std::vector<Real>& buf) {
    if (bi >= buffers.size() || buffers[bi].at("name") != name ||
        buffers[bi].at("size").get<std::size_t>() != buf.size())
      throw ArchitectureMismatch(path + ": buffer layout mismatch at " + name);
    detail::read_values(in, buf, buf.size());
    ++bi;
  });

  if (adam) {
    if (!header.at("has_optimizer").get<bool>())
      throw ArchitectureMismatch(path + ": no optimizer state stored");
    auto params_vec = model.parameters();
    adam->init_for(params_vec);
    const auto& opt = header.at("optimizer");
    adam->step = opt.at("step");
    adam->lr = static_cast<Real>(opt.at("lr").get<double>());
    adam->beta1 = static_cast<Real>(opt.at("beta1").get<double>());
    adam->beta2 = static_cast<Real>(opt.at("beta2").get<double>());
    adam->eps = static_cast<Real>(opt.at("eps").get<double>());
    for (auto& m : adam->m) detail::read_values(in, m, m.size());
    for (auto& v : adam->v) detail::read_values(in, v, v.size());
  }
  return model;
}

}  // namespace afdetect
