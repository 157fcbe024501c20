// afdetect: ECG atrial-fibrillation detection toolkit.
//
// Subcommands: digitize, preprocess, cwt, train, evaluate, predict.
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal.

#include <CLI11.hpp>
#include <Eigen/Core>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "afdetect/checkpoint.hpp"
#include "afdetect/config.hpp"
#include "afdetect/cwt.hpp"
#include "afdetect/digitize.hpp"
#include "afdetect/ecg.hpp"
#include "afdetect/image.hpp"
#include "afdetect/metrics.hpp"
#include "afdetect/models.hpp"
#include "afdetect/pipeline.hpp"
#include "afdetect/preprocess.hpp"
#include "afdetect/train.hpp"

namespace fs = std::filesystem;
using namespace afdetect;

namespace {

struct CliOverrides {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
  int threads = 0;

  void apply(RunConfig& cfg) const {
    if (!config_path.empty()) apply_config_map(cfg, parse_config_file(config_path));
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (threads > 0) cfg.threads = threads;
  }
};

RunConfig resolve_config(const CliOverrides& ov) {
  RunConfig cfg;
  ov.apply(cfg);
  cfg.validate();
  Eigen::setNbThreads(cfg.threads);
  return cfg;
}

// ---------------------------------------------------------------------------
// digitize
// ---------------------------------------------------------------------------

int cmd_digitize(const std::string& in_dir, const std::string& out_dir,
                 double fs, double threshold) {
  fs::create_directories(out_dir);
  std::vector<fs::path> inputs;
  for (const auto& entry : fs::directory_iterator(in_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      inputs.push_back(entry.path());
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) throw DataError("no .pgm files in " + in_dir);

  DatasetManifest manifest;
  std::size_t ok = 0;
  for (const auto& path : inputs) {
    try {
      const PixelMatrix img = load_pgm(path.string());
      EcgRecord rec = digitize_image(img, fs, threshold);
      rec.id = path.stem().string();
      const fs::path out = fs::path(out_dir) / (rec.id + ".csv");
      save_record_csv(rec, out.string());
      manifest.entries.push_back(
          {rec.id, out.string(), Label::Unlabeled, Split::Train});
      ++ok;
      std::cout << rec.id << ": " << rec.samples.size() << " samples\n";
    } catch (const Error& e) {
      std::cerr << path.filename().string() << ": skipped (" << e.what()
                << ")\n";
    }
  }
  if (ok == 0) throw DataError("no image could be digitized");
  save_manifest(manifest, (fs::path(out_dir) / "manifest.csv").string());
  std::cout << ok << "/" << inputs.size() << " images digitized\n";
  return 0;
}

// ---------------------------------------------------------------------------
// preprocess / cwt
// ---------------------------------------------------------------------------

int cmd_preprocess(const RunConfig& cfg, const std::string& in,
                   const std::string& out) {
  EcgRecord rec = load_numeric_record(in, cfg.record_fs);
  DenoiseConfig d{cfg.highpass_hz, cfg.notch_hz, cfg.lowpass_hz,
                  cfg.filter_order, cfg.notch_q};
  rec = denoise_chain(rec, d);
  save_record_csv(rec, out);
  std::cout << "wrote " << out << " (" << rec.samples.size() << " samples)\n";
  return 0;
}

int cmd_cwt(const RunConfig& cfg, const std::string& in, const std::string& out,
            const std::string& raw_out) {
  EcgRecord rec = load_numeric_record(in, cfg.record_fs);
  const StandardizedSignal sig =
      standardize(rec, cfg.target_length, cfg.target_fs);
  const WaveletConfig wcfg =
      make_wavelet_config(cfg.target_fs, cfg.n_scales, cfg.f_min, cfg.f_max);
  const Scalogram scal = cwt_transform(sig.samples, wcfg);
  const ScalogramImage img = scalogram_to_image(
      scal, cfg.image_size, cfg.image_size,
      cfg.scalogram_mode == "signed" ? ScalogramMode::Signed
                                     : ScalogramMode::Absolute);
  save_scalogram_pgm(img, out);
  if (!raw_out.empty()) save_scalogram_raw(img, raw_out);
  std::cout << "wrote " << out << " (" << img.height << "x" << img.width
            << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

template <class Real, class Model>
void train_and_save(Model model, RunConfig& cfg, const DatasetManifest& manifest,
                    const FeatureDataset<Real>& train_set,
                    const FeatureDataset<Real>& test_set, int n_branches) {
  const fs::path out(cfg.out_dir);
  std::ofstream loss_log((out / "train_log.txt").string());

  TrainOptions opts;
  opts.epochs = cfg.epochs;
  opts.batch_size = cfg.batch_size;
  opts.lr = cfg.lr;
  opts.seed = cfg.seed;
  opts.repartition_each_epoch = cfg.repartition_each_epoch;
  opts.log = &loss_log;

  // partition dump for reproducibility audits
  {
    std::vector<std::size_t> ids(train_set.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    save_partition(partition(ids, train_set.labels, n_branches, cfg.seed),
                   (out / "partition.csv").string());
  }

  train_model<Real>(model, train_set, n_branches, opts,
                    test_set.size() ? &test_set : nullptr);
  save_checkpoint<Real>(model, to_string(cfg.model),
                        (out / "checkpoint.afck").string());

  if (test_set.size()) {
    const auto scores = score_dataset<Real>(model, test_set, cfg.batch_size);
    const EvalReport report = evaluate_scores(scores);
    std::ofstream rj((out / "report.json").string());
    rj << report_to_json(report).dump(2) << "\n";
    save_curves_csv(report, (out / "roc.csv").string(),
                    (out / "pr.csv").string());
    std::cout << "test auroc " << report.auroc << " auprc " << report.auprc
              << " f1 " << report.f1 << "\n";
  }
  save_manifest(manifest, (out / "split_manifest.csv").string());
  std::cout << "artifacts written to " << out.string() << "\n";
}

template <class Real>
void run_train(RunConfig cfg) {
  if (cfg.train_manifest.empty())
    throw ConfigError("train requires train_manifest");
  DatasetManifest manifest = load_manifest(cfg.train_manifest);
  const bool has_split = !manifest.indices(Split::Test).empty();
  if (!has_split)
    manifest = split_dataset(manifest, cfg.test_fraction, cfg.seed);

  const auto train_set = build_features<Real>(manifest, Split::Train, cfg);
  FeatureDataset<Real> test_set;
  test_set.sample_shape = train_set.sample_shape;
  if (!manifest.indices(Split::Test).empty())
    test_set = build_features<Real>(manifest, Split::Test, cfg);

  const int n_branches =
      resolve_branch_count(cfg, train_set.count(0), train_set.count(1));
  cfg.n_branches = std::to_string(n_branches);

  fs::create_directories(cfg.out_dir);
  write_resolved_config(cfg,
                        (fs::path(cfg.out_dir) / "config_resolved.toml").string());

  if (uses_cwt(cfg.model)) {
    ResNetConfig rc;
    rc.input_height = rc.input_width = cfg.image_size;
    rc.n_branches = n_branches;
    train_and_save<Real>(ResNetMb<Real>::build(rc, cfg.seed), cfg, manifest,
                         train_set, test_set, n_branches);
  } else {
    Cnn1dConfig cc;
    cc.input_length = static_cast<int>(cfg.target_length);
    cc.n_branches = n_branches;
    train_and_save<Real>(Cnn1dMb<Real>::build(cc, cfg.seed), cfg, manifest,
                         train_set, test_set, n_branches);
  }
}

// ---------------------------------------------------------------------------
// evaluate / predict
// ---------------------------------------------------------------------------

template <class Real>
std::vector<ScoredSample> score_manifest(const RunConfig& cfg,
                                         const std::string& checkpoint,
                                         const DatasetManifest& manifest,
                                         Split split) {
  const CheckpointHeader header = read_checkpoint_header(checkpoint);
  if (header.model_kind != to_string(cfg.model))
    throw ArchitectureMismatch("checkpoint holds " + header.model_kind +
                               " but config requests " + to_string(cfg.model));
  const auto ds = build_features<Real>(manifest, split, cfg);
  if (uses_cwt(cfg.model)) {
    auto model = load_checkpoint<Real, ResNetMb<Real>>(checkpoint,
                                                       header.model_kind);
    return score_dataset<Real>(model, ds, cfg.batch_size);
  }
  auto model =
      load_checkpoint<Real, Cnn1dMb<Real>>(checkpoint, header.model_kind);
  return score_dataset<Real>(model, ds, cfg.batch_size);
}

template <class Real>
void run_evaluate(const RunConfig& cfg, const std::string& checkpoint,
                  const std::string& manifest_path, const std::string& split) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  const Split s = split == "train" ? Split::Train : Split::Test;
  const auto scores = score_manifest<Real>(cfg, checkpoint, manifest, s);
  const EvalReport report = evaluate_scores(scores);

  fs::create_directories(cfg.out_dir);
  const fs::path out(cfg.out_dir);
  {
    std::ofstream rj((out / "report.json").string());
    rj << report_to_json(report).dump(2) << "\n";
    std::ofstream sc((out / "scores.csv").string());
    sc << "id,label,score\n";
    sc.precision(17);
    for (const auto& e : scores)
      sc << e.id << "," << e.label << "," << e.score << "\n";
  }
  save_curves_csv(report, (out / "roc.csv").string(), (out / "pr.csv").string());
  std::cout << "auroc " << report.auroc << " auprc " << report.auprc << " f1 "
            << report.f1 << " (tp " << report.confusion.tp << " fp "
            << report.confusion.fp << " tn " << report.confusion.tn << " fn "
            << report.confusion.fn << ")\n";
}

template <class Real>
void run_predict(const RunConfig& cfg, const std::string& checkpoint,
                 const std::string& record_path, double threshold) {
  const CheckpointHeader header = read_checkpoint_header(checkpoint);
  if (header.model_kind != to_string(cfg.model))
    throw ArchitectureMismatch("checkpoint holds " + header.model_kind +
                               " but config requests " + to_string(cfg.model));
  const EcgRecord rec = load_numeric_record(record_path, cfg.record_fs);
  FeatureDataset<Real> ds;
  ds.sample_shape = feature_shape<Real>(cfg);
  ds.features.push_back(record_to_feature<Real>(rec, cfg));
  ds.labels.push_back(0);
  ds.ids.push_back(rec.id);

  std::vector<ScoredSample> scores;
  if (uses_cwt(cfg.model)) {
    auto model = load_checkpoint<Real, ResNetMb<Real>>(checkpoint,
                                                       header.model_kind);
    scores = score_dataset<Real>(model, ds);
  } else {
    auto model =
        load_checkpoint<Real, Cnn1dMb<Real>>(checkpoint, header.model_kind);
    scores = score_dataset<Real>(model, ds);
  }
  const double p = scores[0].score;
  std::cout.precision(12);
  std::cout << "probability " << p << "\n"
            << "label " << (p >= threshold ? "AF" : "Normal") << "\n";
}

int dispatch_exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 1;
  if (dynamic_cast<const DataError*>(&e) ||
      dynamic_cast<const MalformedFile*>(&e) ||
      dynamic_cast<const EmptySignal*>(&e) ||
      dynamic_cast<const NoSignalPixels*>(&e) ||
      dynamic_cast<const InsufficientData*>(&e) ||
      dynamic_cast<const ArchitectureMismatch*>(&e))
    return 2;
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ECG atrial-fibrillation detection toolkit"};
  app.require_subcommand(1);

  CliOverrides ov;
  app.add_option("--config", ov.config_path, "TOML-style config file");
  app.add_option("--seed", ov.seed, "random seed override");
  app.add_option("--out", ov.out_dir, "output directory override");
  app.add_option("--threads", ov.threads, "worker thread count");

  // digitize
  auto* digitize = app.add_subcommand("digitize", "chart images to records");
  std::string dg_in, dg_out;
  double dg_fs = 60.0, dg_threshold = 0.99;
  digitize->add_option("--in", dg_in, "directory of PGM strips")->required();
  digitize->add_option("--out-dir", dg_out, "output directory")->required();
  digitize->add_option("--fs", dg_fs, "sampling rate of digitized series");
  digitize->add_option("--threshold", dg_threshold, "trace intensity threshold");

  // preprocess
  auto* preprocess = app.add_subcommand("preprocess", "denoise a record");
  std::string pp_in, pp_out;
  preprocess->add_option("--in", pp_in, "input record")->required();
  preprocess->add_option("--out-file", pp_out, "output CSV")->required();

  // cwt
  auto* cwt = app.add_subcommand("cwt", "scalogram image of a record");
  std::string cw_in, cw_out, cw_raw;
  cwt->add_option("--in", cw_in, "input record")->required();
  cwt->add_option("--out-file", cw_out, "output PGM")->required();
  cwt->add_option("--raw", cw_raw, "optional float32 grid output");

  // train
  auto* train = app.add_subcommand("train", "train a classifier");
  std::string tr_manifest, tr_model;
  int tr_epochs = -1;
  train->add_option("--manifest", tr_manifest, "training manifest CSV");
  train->add_option("--model", tr_model,
                    "cwt_mb_resnet|cwt_resnet|cnn1d_mb|cnn1d");
  train->add_option("--epochs", tr_epochs, "epoch count override");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "metrics on a test split");
  std::string ev_checkpoint, ev_manifest, ev_split = "test";
  evaluate->add_option("--checkpoint", ev_checkpoint)->required();
  evaluate->add_option("--manifest", ev_manifest)->required();
  evaluate->add_option("--split", ev_split, "train or test (default test)");

  // predict
  auto* predict = app.add_subcommand("predict", "score one record");
  std::string pr_checkpoint, pr_record;
  double pr_threshold = 0.5;
  predict->add_option("--checkpoint", pr_checkpoint)->required();
  predict->add_option("--record", pr_record)->required();
  predict->add_option("--threshold", pr_threshold);

  CLI11_PARSE(app, argc, argv);

  try {
    if (digitize->parsed()) {
      resolve_config(ov);
      return cmd_digitize(dg_in, dg_out, dg_fs, dg_threshold);
    }
    RunConfig cfg = resolve_config(ov);
    if (preprocess->parsed()) return cmd_preprocess(cfg, pp_in, pp_out);
    if (cwt->parsed()) return cmd_cwt(cfg, cw_in, cw_out, cw_raw);
    if (train->parsed()) {
      if (!tr_manifest.empty()) cfg.train_manifest = tr_manifest;
      if (!tr_model.empty()) cfg.model = model_kind_from_string(tr_model);
      if (tr_epochs > 0) cfg.epochs = tr_epochs;
      cfg.validate();
      if (cfg.precision == "float32")
        run_train<float>(cfg);
      else
        run_train<double>(cfg);
      return 0;
    }
    if (evaluate->parsed()) {
      if (ev_split != "train" && ev_split != "test")
        throw ConfigError("--split must be train or test");
      if (cfg.precision == "float32")
        run_evaluate<float>(cfg, ev_checkpoint, ev_manifest, ev_split);
      else
        run_evaluate<double>(cfg, ev_checkpoint, ev_manifest, ev_split);
      return 0;
    }
    if (predict->parsed()) {
      if (cfg.precision == "float32")
        run_predict<float>(cfg, pr_checkpoint, pr_record, pr_threshold);
      else
        run_predict<double>(cfg, pr_checkpoint, pr_record, pr_threshold);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return dispatch_exit_code(e);
  }
  return 0;
}
