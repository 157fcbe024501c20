#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "afdetect/errors.hpp"

namespace afdetect {

struct ScoredSample {
  std::string id;
  int label = 0;        // y in {0,1}
  double score = 0.0;   // predicted probability in [0,1]
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct EvalReport {
  std::vector<RocPoint> roc;
  std::vector<PrPoint> pr;
  double auroc = 0.0;
  double auprc = 0.0;
  double f1 = 0.0;
  double threshold = 0.5;
  ConfusionCounts confusion;
};

namespace detail {

// samples sorted by score descending, tied scores grouped
inline std::vector<ScoredSample> sorted_desc(std::vector<ScoredSample> s) {
  std::stable_sort(s.begin(), s.end(),
                   [](const ScoredSample& a, const ScoredSample& b) {
                     return a.score > b.score;
                   });
  return s;
}

}  // namespace detail

// Threshold sweep over the distinct scores; ties grouped so the curve is
// permutation invariant. AUROC by trapezoidal integration, which equals the
// Mann-Whitney pair statistic with ties counted 1/2.
inline std::pair<std::vector<RocPoint>, double> roc_curve(
    const std::vector<ScoredSample>& samples) {
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& s : samples) (s.label ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw SingleClassInput("roc_curve needs both classes");

  const auto sorted = detail::sorted_desc(samples);
  std::vector<RocPoint> pts{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  double auroc = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      (sorted[j].label ? tp : fp)++;
      ++j;
    }
    const RocPoint prev = pts.back();
    const RocPoint cur{static_cast<double>(fp) / n_neg,
                       static_cast<double>(tp) / n_pos};
    auroc += (cur.fpr - prev.fpr) * (cur.tpr + prev.tpr) / 2.0;
    pts.push_back(cur);
    i = j;
  }
  return {pts, auroc};
}

// Precision/recall at each grouped threshold. AUPRC by the step-wise
// (rectangular, right-continuous) rule: sum over thresholds of
// (R_k - R_{k-1}) * P_k. The recall=0 anchor takes the precision of the
// highest-score group.
inline std::pair<std::vector<PrPoint>, double> pr_curve(
    const std::vector<ScoredSample>& samples) {
  std::size_t n_pos = 0;
  for (const auto& s : samples) n_pos += s.label ? 1 : 0;
  if (n_pos == 0) throw NoPositives("pr_curve needs at least one positive");

  const auto sorted = detail::sorted_desc(samples);
  std::vector<PrPoint> pts;
  double auprc = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, pred_pos = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      tp += sorted[j].label ? 1 : 0;
      ++pred_pos;
      ++j;
    }
    const double recall = static_cast<double>(tp) / n_pos;
    const double precision = static_cast<double>(tp) / pred_pos;
    if (pts.empty()) pts.push_back({0.0, precision});  // recall=0 anchor
    pts.push_back({recall, precision});
    auprc += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return {pts, auprc};
}

// Predict positive iff score >= threshold. F1 = 0 when TP = 0.
inline std::pair<double, ConfusionCounts> f1_at(
    const std::vector<ScoredSample>& samples, double threshold = 0.5) {
  if (threshold < 0.0 || threshold > 1.0)
    throw ConfigError("threshold must lie in [0,1]");
  ConfusionCounts c;
  for (const auto& s : samples) {
    const bool pred = s.score >= threshold;
    if (pred && s.label) ++c.tp;
    else if (pred && !s.label) ++c.fp;
    else if (!pred && s.label) ++c.fn;
    else ++c.tn;
  }
  double f1 = 0.0;
  if (c.tp > 0) {
    const double precision = static_cast<double>(c.tp) / (c.tp + c.fp);
    const double recall = static_cast<double>(c.tp) / (c.tp + c.fn);
    f1 = 2.0 * precision * recall / (precision + recall);
  }
  return {f1, c};
}

inline EvalReport evaluate_scores(const std::vector<ScoredSample>& samples,
                                  double threshold = 0.5) {
  EvalReport r;
  std::tie(r.roc, r.auroc) = roc_curve(samples);
  std::tie(r.pr, r.auprc) = pr_curve(samples);
  std::tie(r.f1, r.confusion) = f1_at(samples, threshold);
  r.threshold = threshold;
  return r;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["auroc"] = r.auroc;
  j["auprc"] = r.auprc;
  j["f1"] = r.f1;
  j["threshold"] = r.threshold;
  j["confusion"] = {{"tp", r.confusion.tp},
                    {"fp", r.confusion.fp},
                    {"tn", r.confusion.tn},
                    {"fn", r.confusion.fn}};
  return j;
}

inline void save_curves_csv(const EvalReport& r, const std::string& roc_path,
                            const std::string& pr_path) {
  std::ofstream roc(roc_path);
  if (!roc) throw DataError("cannot write " + roc_path);
  roc << "fpr,tpr\n";
  for (const auto& p : r.roc) roc << p.fpr << "," << p.tpr << "\n";
  std::ofstream pr(pr_path);
  if (!pr) throw DataError("cannot write " + pr_path);
  pr << "recall,precision\n";
  for (const auto& p : r.pr) pr << p.recall << "," << p.precision << "\n";
}

}  // namespace afdetect
