#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "afdetect/sampler.hpp"

using namespace afdetect;

namespace {

// ids 0..n-1 with the first n_pos labeled positive
std::pair<std::vector<std::size_t>, std::vector<int>> dataset(
    std::size_t n_pos, std::size_t n_neg) {
  std::vector<std::size_t> ids(n_pos + n_neg);
  std::vector<int> labels(n_pos + n_neg, 0);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  for (std::size_t i = 0; i < n_pos; ++i) labels[i] = 1;
  return {ids, labels};
}

}  // namespace

TEST_CASE("partition deals negatives round-robin across branches") {
  SECTION("70 negatives over 7 branches gives 10 each, positives shared") {
    const auto [ids, labels] = dataset(10, 70);
    const MbTrainingSet set = partition(ids, labels, 7, 1);
    REQUIRE(set.n_branches == 7);
    REQUIRE(set.positives.size() == 10);
    for (int i = 0; i < 7; ++i) {
      REQUIRE(set.negatives[i].size() == 10);
      REQUIRE(set.branch_size(i) == 20);
    }
  }
  SECTION("sizes differ by at most one when the split is uneven") {
    const auto [ids, labels] = dataset(2, 10);
    const MbTrainingSet set = partition(ids, labels, 3, 9);
    std::multiset<std::size_t> sizes;
    for (const auto& s : set.negatives) sizes.insert(s.size());
    REQUIRE(sizes == std::multiset<std::size_t>{4, 3, 3});
  }
  SECTION("one branch keeps everything together") {
    const auto [ids, labels] = dataset(3, 5);
    const MbTrainingSet set = partition(ids, labels, 1, 4);
    REQUIRE(set.negatives.size() == 1);
    REQUIRE(set.negatives[0].size() == 5);
    REQUIRE(set.branch_size(0) == 8);
  }
}

TEST_CASE("negative subsets are disjoint and cover all negatives exactly") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n_pos = 1 + rng.below(8);
    const std::size_t n_neg = 8 + rng.below(120);
    const int nb = 1 + static_cast<int>(rng.below(8));
    const auto [ids, labels] = dataset(n_pos, n_neg);
    const MbTrainingSet set = partition(ids, labels, nb, trial);

    std::set<std::size_t> seen;
    for (const auto& branch : set.negatives)
      for (std::size_t id : branch) {
        REQUIRE(labels[id] == 0);
        REQUIRE(seen.insert(id).second);  // disjointness
      }
    REQUIRE(seen.size() == n_neg);  // exact cover
    REQUIRE(set.total_negatives() == n_neg);
  }
}

TEST_CASE("partition is deterministic in the seed") {
  const auto [ids, labels] = dataset(5, 37);
  const MbTrainingSet a = partition(ids, labels, 4, 99);
  const MbTrainingSet b = partition(ids, labels, 4, 99);
  const MbTrainingSet c = partition(ids, labels, 4, 100);
  REQUIRE(a.negatives == b.negatives);
  REQUIRE(a.negatives != c.negatives);
}

TEST_CASE("partition input validation") {
  const auto [ids, labels] = dataset(3, 4);
  REQUIRE_THROWS_AS(partition(ids, labels, 0, 1), ConfigError);
  REQUIRE_THROWS_AS(partition(ids, labels, 5, 1), TooFewNegatives);
  REQUIRE_THROWS_AS(partition(ids, std::vector<int>(3, 0), 1, 1),
                    ShapeMismatch);
  const auto [nids, nlabels] = dataset(0, 6);
  REQUIRE_THROWS_AS(partition(nids, nlabels, 2, 1), NoPositives);
}

TEST_CASE("default_branch_count follows the class ratio") {
  REQUIRE(default_branch_count(5050, 738) == 7);
  REQUIRE(default_branch_count(10, 10) == 1);
  REQUIRE(default_branch_count(5, 10) == 1);   // floor at 1
  REQUIRE(default_branch_count(1000, 10) == 16);  // cap at 16
  REQUIRE(default_branch_count(25, 10) == 3);  // round half away: 2.5 -> 3
  REQUIRE_THROWS_AS(default_branch_count(10, 0), NoPositives);
}

TEST_CASE("branch_batches covers each branch dataset exactly once per epoch") {
  const auto [ids, labels] = dataset(6, 20);
  const MbTrainingSet set = partition(ids, labels, 4, 3);
  const auto batches = branch_batches(set, 5, 42);

  std::size_t expected = 0;
  for (int i = 0; i < set.n_branches; ++i) expected += set.branch_size(i);
  std::size_t seen = 0;
  std::vector<std::set<std::size_t>> per_branch(4);
  for (const auto& b : batches) {
    REQUIRE(b.branch >= 0);
    REQUIRE(b.branch < 4);
    REQUIRE(b.sample_ids.size() <= 5);
    seen += b.sample_ids.size();
    for (std::size_t id : b.sample_ids)
      REQUIRE(per_branch[b.branch].insert(id).second);
  }
  REQUIRE(seen == expected);
  for (int i = 0; i < 4; ++i) {
    // each branch saw its own negatives plus every positive
    std::set<std::size_t> want(set.positives.begin(), set.positives.end());
    want.insert(set.negatives[i].begin(), set.negatives[i].end());
    REQUIRE(per_branch[i] == want);
  }
}

TEST_CASE("branch_batches order is seed-deterministic and epoch-varying") {
  const auto [ids, labels] = dataset(4, 16);
  const MbTrainingSet set = partition(ids, labels, 2, 7);
  const auto a = branch_batches(set, 4, 100);
  const auto b = branch_batches(set, 4, 100);
  const auto c = branch_batches(set, 4, 101);
  REQUIRE(a.size() == b.size());
  bool same_ab = true, same_ac = true;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same_ab = same_ab && a[i].sample_ids == b[i].sample_ids;
    same_ac = same_ac && a[i].sample_ids == c[i].sample_ids;
  }
  REQUIRE(same_ab);
  REQUIRE_FALSE(same_ac);
}
