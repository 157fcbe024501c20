#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "afdetect/metrics.hpp"
#include "afdetect/models.hpp"
#include "afdetect/nn/adam.hpp"
#include "afdetect/sampler.hpp"

namespace afdetect {

// In-memory dataset of fixed-shape network inputs.
template <class Real>
struct FeatureDataset {
  nn::Shape sample_shape;  // per-sample, e.g. {1,H,W} or {1,L}
  std::vector<std::vector<Real>> features;
  std::vector<int> labels;  // 0 = Normal, 1 = AF
  std::vector<std::string> ids;

  std::size_t size() const { return features.size(); }
  std::size_t count(int label) const {
    std::size_t n = 0;
    for (int l : labels) n += (l == label);
    return n;
  }
};

template <class Real>
nn::Tensor<Real> stack_batch(const FeatureDataset<Real>& ds,
                             const std::vector<std::size_t>& indices) {
  nn::Shape shape;
  shape.push_back(static_cast<int>(indices.size()));
  for (int d : ds.sample_shape) shape.push_back(d);
  std::vector<Real> data;
  data.reserve(indices.size() * ds.features[0].size());
  for (std::size_t i : indices)
    data.insert(data.end(), ds.features[i].begin(), ds.features[i].end());
  return nn::Tensor<Real>(std::move(shape), std::move(data));
}

// Eval-mode scores with branch outputs averaged per sample.
template <class Real, class Model>
std::vector<ScoredSample> score_dataset(Model& model,
                                        const FeatureDataset<Real>& ds,
                                        std::size_t batch_size = 32) {
  std::vector<ScoredSample> out;
  out.reserve(ds.size());
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, ds.size());
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    auto probs = model.forward(stack_batch(ds, idx), /*training=*/false);
    const int k = probs.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::vector<double> branch(k);
      for (int j = 0; j < k; ++j)
        branch[j] =
            static_cast<double>(probs.values()[r * static_cast<std::size_t>(k) + j]);
      ScoredSample s;
      s.id = ds.ids[idx[r]];
      s.label = ds.labels[idx[r]];
      s.score = mb_predict(branch);
      out.push_back(std::move(s));
    }
  }
  return out;
}

struct TrainOptions {
  int epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  bool repartition_each_epoch = false;
  // early stop once both targets are met on the eval set (negative = off)
  double stop_auroc = -1.0;
  double stop_f1 = -1.0;
  std::ostream* log = nullptr;
};

struct EpochStat {
  int epoch = 0;
  double mean_loss = 0.0;
  double eval_auroc = std::nan("");
  double eval_f1 = std::nan("");
};

// MB training loop: per-branch shuffled batches, mb_loss, Adam.
template <class Real, class Model>
std::vector<EpochStat> train_model(Model& model,
                                   const FeatureDataset<Real>& train_set,
                                   int n_branches, const TrainOptions& opts,
                                   const FeatureDataset<Real>* eval_set = nullptr) {
  std::vector<std::size_t> ids(train_set.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  MbTrainingSet part =
      partition(ids, train_set.labels, n_branches, opts.seed);

  auto params = model.parameters();
  nn::AdamState<Real> adam;
  adam.lr = static_cast<Real>(opts.lr);
  adam.init_for(params);

  std::vector<EpochStat> stats;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    if (opts.repartition_each_epoch && epoch > 0)
      part = partition(ids, train_set.labels, n_branches,
                       opts.seed + static_cast<std::uint64_t>(epoch));
    const auto batches =
        branch_batches(part, opts.batch_size,
                       opts.seed * 7919 + static_cast<std::uint64_t>(epoch));
    double loss_acc = 0.0;
    std::size_t sample_acc = 0;
    for (const auto& batch : batches) {
      auto x = stack_batch(train_set, batch.sample_ids);
      std::vector<Real> y;
      std::vector<std::uint32_t> membership;
      for (std::size_t i : batch.sample_ids) {
        y.push_back(static_cast<Real>(train_set.labels[i]));
        membership.push_back(1u << batch.branch);
      }
      auto probs = model.forward(x, /*training=*/true);
      auto loss = mb_loss(probs, y, membership);
      nn::backward(loss);
      adam_step(params, adam);
      nn::zero_grads(params);
      loss_acc += static_cast<double>(loss.item());
      sample_acc += batch.sample_ids.size();
    }

    EpochStat st;
    st.epoch = epoch;
    st.mean_loss = loss_acc / static_cast<double>(sample_acc);
    if (eval_set) {
      const auto scores = score_dataset<Real>(model, *eval_set, opts.batch_size);
      st.eval_auroc = roc_curve(scores).second;
      st.eval_f1 = f1_at(scores).first;
    }
    if (opts.log) {
      (*opts.log) << "epoch " << epoch << " loss " << st.mean_loss;
      if (eval_set)
        (*opts.log) << " eval_auroc " << st.eval_auroc << " eval_f1 "
                    << st.eval_f1;
      (*opts.log) << "\n";
      opts.log->flush();
    }
    stats.push_back(st);
    if (eval_set && opts.stop_auroc >= 0.0 && opts.stop_f1 >= 0.0 &&
        st.eval_auroc >= opts.stop_auroc && st.eval_f1 >= opts.stop_f1)
      break;
  }
  return stats;
}

}  // namespace afdetect
