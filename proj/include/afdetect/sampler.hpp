#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "afdetect/errors.hpp"
#include "afdetect/rng.hpp"

namespace afdetect {

// Partition of an imbalanced training set into N_b balanced branch datasets
// D_i = D_-^i  union  D_+. The negative subsets are pairwise disjoint and
// exactly cover D_-; positives are shared by every branch.
struct MbTrainingSet {
  std::vector<std::size_t> positives;                 // D_+
  std::vector<std::vector<std::size_t>> negatives;    // D_-^1 .. D_-^{N_b}
  int n_branches = 0;

  std::size_t branch_size(int i) const {
    return positives.size() + negatives[i].size();
  }
  std::size_t total_negatives() const {
    std::size_t n = 0;
    for (const auto& s : negatives) n += s.size();
    return n;
  }
};

// Negatives are shuffled once (seeded) and dealt round-robin, so the subsets
// differ in size by at most one and their union is exact.
inline MbTrainingSet partition(const std::vector<std::size_t>& ids,
                               const std::vector<int>& labels, int n_branches,
                               std::uint64_t seed) {
  if (ids.size() != labels.size())
    throw ShapeMismatch("partition: ids/labels length mismatch");
  if (n_branches < 1) throw ConfigError("n_branches must be >= 1");
  MbTrainingSet set;
  set.n_branches = n_branches;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (labels[i]) {
      set.positives.push_back(ids[i]);
    } else {
      neg.push_back(ids[i]);
    }
  }
  if (set.positives.empty()) throw NoPositives("no positive samples");
  if (neg.size() < static_cast<std::size_t>(n_branches))
    throw TooFewNegatives("fewer negatives than branches");
  Rng rng(seed);
  rng.shuffle(neg);
  set.negatives.assign(n_branches, {});
  for (std::size_t i = 0; i < neg.size(); ++i)
    set.negatives[i % n_branches].push_back(neg[i]);
  return set;
}

// N_b from the class ratio, capped at 16.
inline int default_branch_count(std::size_t n_neg, std::size_t n_pos) {
  if (n_pos == 0) throw NoPositives("no positive samples");
  const int nb = static_cast<int>(std::llround(
      static_cast<double>(n_neg) / static_cast<double>(n_pos)));
  return std::clamp(nb, 1, 16);
}

struct BranchBatch {
  std::vector<std::size_t> sample_ids;
  int branch = 0;
};

// One epoch of shuffled mini-batches: branch datasets are visited in order,
// each fully consumed before moving on, so batch-norm statistics stay
// coherent within a branch pass. Every sample is tagged with the branch
// whose dataset it was drawn from.
inline std::vector<BranchBatch> branch_batches(const MbTrainingSet& set,
                                               std::size_t batch_size,
                                               std::uint64_t epoch_seed) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  Rng rng(epoch_seed);
  std::vector<BranchBatch> out;
  for (int i = 0; i < set.n_branches; ++i) {
    std::vector<std::size_t> pool = set.negatives[i];
    pool.insert(pool.end(), set.positives.begin(), set.positives.end());
    rng.shuffle(pool);
    for (std::size_t start = 0; start < pool.size(); start += batch_size) {
      BranchBatch b;
      b.branch = i;
      const std::size_t end = std::min(start + batch_size, pool.size());
      b.sample_ids.assign(pool.begin() + start, pool.begin() + end);
      out.push_back(std::move(b));
    }
  }
  return out;
}

// CSV dump (sample id, branch index) for reproducibility audits; positives
// appear once per branch.
inline void save_partition(const MbTrainingSet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "sample,branch\n";
  for (int i = 0; i < set.n_branches; ++i) {
    for (std::size_t id : set.negatives[i]) out << id << "," << i << "\n";
    for (std::size_t id : set.positives) out << id << "," << i << "\n";
  }
}

}  // namespace afdetect
