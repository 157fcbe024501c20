#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "afdetect/errors.hpp"
#include "afdetect/rng.hpp"

namespace afdetect {

enum class Label { Normal, AF, Unlabeled };

inline std::string to_string(Label l) {
  switch (l) {
    case Label::Normal: return "Normal";
    case Label::AF: return "AF";
    default: return "Unlabeled";
  }
}

inline Label label_from_string(const std::string& s) {
  if (s == "Normal" || s == "N" || s == "normal") return Label::Normal;
  if (s == "AF" || s == "A" || s == "af") return Label::AF;
  if (s == "Unlabeled" || s == "" || s == "~") return Label::Unlabeled;
  throw MalformedFile("unknown label: " + s);
}

// One labeled single-lead recording.
struct EcgRecord {
  std::string id;
  std::vector<double> samples;  // amplitude, arbitrary units
  double fs = 0.0;              // sampling frequency, Hz
  Label label = Label::Unlabeled;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / fs;
  }
};

// ---------------------------------------------------------------------------
// Numeric record IO
//
// Two formats are accepted:
//   - one-column CSV of decimal amplitudes
//   - raw binary: 8-byte header (magic "ECG1", little-endian uint32 sample
//     count), then count little-endian float32 samples
// ---------------------------------------------------------------------------

namespace detail {

inline bool looks_binary(std::istream& in) {
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  const bool bin = in.gcount() == 4 && std::memcmp(magic, "ECG1", 4) == 0;
  in.clear();
  in.seekg(0);
  return bin;
}

}  // namespace detail

inline EcgRecord load_numeric_record(const std::string& path, double fs,
                                     Label label = Label::Unlabeled) {
  if (fs <= 0.0) throw MalformedFile("sampling frequency must be positive");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MalformedFile("cannot open " + path);

  EcgRecord rec;
  rec.id = std::filesystem::path(path).stem().string();
  rec.fs = fs;
  rec.label = label;

  if (detail::looks_binary(in)) {
    char header[8];
    in.read(header, 8);
    std::uint32_t count = 0;
    std::memcpy(&count, header + 4, 4);
    rec.samples.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      float v = 0.0f;
      in.read(reinterpret_cast<char*>(&v), 4);
      if (in.gcount() != 4) throw MalformedFile(path + ": truncated payload");
      if (!std::isfinite(v)) throw MalformedFile(path + ": non-finite sample");
      rec.samples.push_back(static_cast<double>(v));
    }
  } else {
    std::string line;
    while (std::getline(in, line)) {
      // strip trailing CR and surrounding blanks
      while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
        line.pop_back();
      if (line.empty()) continue;
      char* end = nullptr;
      const double v = std::strtod(line.c_str(), &end);
      if (end == line.c_str() || *end != '\0' || !std::isfinite(v))
        throw MalformedFile(path + ": non-numeric line '" + line + "'");
      rec.samples.push_back(v);
    }
  }
  if (rec.samples.empty()) throw EmptySignal(path + ": zero samples");
  return rec;
}

inline void save_record_csv(const EcgRecord& rec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out.precision(12);
  for (double v : rec.samples) out << v << "\n";
}

inline void save_record_binary(const EcgRecord& rec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write("ECG1", 4);
  const std::uint32_t count = static_cast<std::uint32_t>(rec.samples.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (double v : rec.samples) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  }
}

// ---------------------------------------------------------------------------
// Dataset manifest and stratified splitting
// ---------------------------------------------------------------------------

enum class Split { Train, Test };

struct ManifestEntry {
  std::string id;
  std::string path;
  Label label = Label::Unlabeled;
  Split split = Split::Train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t split_seed = 0;

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].split == s) out.push_back(i);
    return out;
  }
};

// Stratified split: per-class test counts are round(fraction * class size),
// so class proportions in the test set stay within one sample of overall.
inline DatasetManifest split_dataset(DatasetManifest manifest,
                                     double test_fraction, std::uint64_t seed) {
  if (manifest.entries.size() < 2)
    throw InsufficientData("need at least 2 entries to split");
  if (test_fraction < 0.0 || test_fraction > 1.0)
    throw ConfigError("test fraction must be in [0,1]");

  std::map<Label, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i)
    by_class[manifest.entries[i].label].push_back(i);
  for (auto& [label, idx] : by_class)
    if (idx.empty()) throw InsufficientData("class with 0 entries");
  if (by_class.size() < 2)
    throw InsufficientData("need at least one entry per class");

  for (auto& e : manifest.entries) e.split = Split::Train;
  Rng rng(seed);
  for (auto& [label, idx] : by_class) {
    rng.shuffle(idx);
    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < n_test; ++i)
      manifest.entries[idx[i]].split = Split::Test;
  }
  manifest.split_seed = seed;
  return manifest;
}

// CSV with columns id,path,label,split
inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "id,path,label,split\n";
  for (const auto& e : m.entries) {
    out << e.id << "," << e.path << "," << to_string(e.label) << ","
        << (e.split == Split::Test ? "test" : "train") << "\n";
  }
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  DatasetManifest m;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    while (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("id,", 0) == 0) continue;  // header row present
    }
    std::stringstream ss(line);
    std::string id, p, lab, split;
    std::getline(ss, id, ',');
    std::getline(ss, p, ',');
    std::getline(ss, lab, ',');
    std::getline(ss, split, ',');
    ManifestEntry e;
    e.id = id;
    e.path = p;
    e.label = label_from_string(lab);
    e.split = (split == "test") ? Split::Test : Split::Train;
    m.entries.push_back(e);
  }
  if (m.entries.empty()) throw DataError(path + ": empty manifest");
  return m;
}

}  // namespace afdetect
