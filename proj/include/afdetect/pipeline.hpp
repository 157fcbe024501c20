#pragma once

#include <string>
#include <vector>

#include "afdetect/config.hpp"
#include "afdetect/cwt.hpp"
#include "afdetect/ecg.hpp"
#include "afdetect/preprocess.hpp"
#include "afdetect/train.hpp"

namespace afdetect {

// Record -> fixed-shape network input per the run configuration:
// optional denoise chain, standardize, and for CWT models the scalogram
// image; otherwise the standardized series itself.
template <class Real>
std::vector<Real> record_to_feature(const EcgRecord& rec,
                                    const RunConfig& cfg) {
  EcgRecord work = rec;
  if (cfg.denoise) {
    DenoiseConfig d;
    d.highpass_hz = cfg.highpass_hz;
    d.notch_hz = cfg.notch_hz;
    d.lowpass_hz = cfg.lowpass_hz;
    d.order = cfg.filter_order;
    d.notch_q = cfg.notch_q;
    work = denoise_chain(work, d);
  }
  const StandardizedSignal std_sig =
      standardize(work, cfg.target_length, cfg.target_fs);

  if (uses_cwt(cfg.model)) {
    const WaveletConfig wcfg =
        make_wavelet_config(cfg.target_fs, cfg.n_scales, cfg.f_min, cfg.f_max);
    const Scalogram scal = cwt_transform(std_sig.samples, wcfg);
    const ScalogramImage img = scalogram_to_image(
        scal, cfg.image_size, cfg.image_size,
        cfg.scalogram_mode == "signed" ? ScalogramMode::Signed
                                       : ScalogramMode::Absolute);
    return std::vector<Real>(img.values.begin(), img.values.end());
  }
  return std::vector<Real>(std_sig.samples.begin(), std_sig.samples.end());
}

template <class Real>
nn::Shape feature_shape(const RunConfig& cfg) {
  if (uses_cwt(cfg.model)) return {1, cfg.image_size, cfg.image_size};
  return {1, static_cast<int>(cfg.target_length)};
}

// Materialize one split of a manifest.
template <class Real>
FeatureDataset<Real> build_features(const DatasetManifest& manifest,
                                    Split split, const RunConfig& cfg) {
  FeatureDataset<Real> ds;
  ds.sample_shape = feature_shape<Real>(cfg);
  for (const auto& entry : manifest.entries) {
    if (entry.split != split) continue;
    const EcgRecord rec =
        load_numeric_record(entry.path, cfg.record_fs, entry.label);
    ds.features.push_back(record_to_feature<Real>(rec, cfg));
    ds.labels.push_back(entry.label == Label::AF ? 1 : 0);
    ds.ids.push_back(entry.id);
  }
  if (ds.features.empty())
    throw DataError("no records in requested split");
  return ds;
}

inline int resolve_branch_count(const RunConfig& cfg, std::size_t n_neg,
                                std::size_t n_pos) {
  if (!uses_branching(cfg.model)) return 1;
  if (cfg.n_branches == "auto") return default_branch_count(n_neg, n_pos);
  return std::atoi(cfg.n_branches.c_str());
}

}  // namespace afdetect
