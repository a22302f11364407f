#include "mosaic/correspondence.hpp"
#include "mosaic/synthdata.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>

using namespace mosaic;

namespace {

SampleAnnotation two_slots(std::vector<Index> v1, std::vector<Index> v2) {
  SampleAnnotation a;
  a.target_grid = {4, 4};
  a.ref_grids = {{2, 2}, {2, 2}};
  a.valid_mask = {true, true};
  CorrespondenceSet s1{1, {}}, s2{2, {}};
  for (std::size_t i = 0; i < v1.size(); ++i) s1.pairs.push_back({static_cast<Index>(i), v1[i]});
  for (std::size_t i = 0; i < v2.size(); ++i) s2.pairs.push_back({static_cast<Index>(i), v2[i]});
  a.sets = {s1, s2};
  return a;
}

Sample with_payload(SampleAnnotation ann, std::int64_t id) {
  Sample s;
  s.id = id;
  Rng rng(static_cast<std::uint64_t>(id));
  s.target_tokens = rng.normal_matrix(ann.target_token_count(), 3);
  for (const auto& g : ann.ref_grids) s.ref_tokens.push_back(rng.normal_matrix(g.count(), 3));
  s.annotation = std::move(ann);
  return s;
}

}  // namespace

TEST(Disjointness, Examples) {
  EXPECT_TRUE(validate_disjointness(two_slots({3, 7}, {1, 9})).ok());

  const auto r = validate_disjointness(two_slots({3, 7}, {7, 9}));
  ASSERT_EQ(r.collisions.size(), 1u);
  EXPECT_EQ(r.collisions[0], (Collision{7, 1, 2}));

  SampleAnnotation one;
  one.target_grid = {2, 2};
  one.ref_grids = {{2, 2}};
  one.valid_mask = {true};
  one.sets = {{1, {{0, 1}, {1, 2}, {2, 3}}}};
  EXPECT_TRUE(validate_disjointness(one).ok());
  EXPECT_TRUE(annotation_problems(one).empty());
}

TEST(Disjointness, MatchesBruteForce) {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<Index> vd(0, 15);
  for (int trial = 0; trial < 500; ++trial) {
    SampleAnnotation a;
    a.target_grid = {4, 4};
    const int k = 1 + trial % 4;
    for (int s = 1; s <= k; ++s) {
      a.ref_grids.push_back({3, 3});
      a.valid_mask.push_back(true);
      CorrespondenceSet set{s, {}};
      std::set<Index> used;
      for (Index u = 0; u < 3; ++u) {
        const Index v = vd(gen);
        if (used.insert(v).second) set.pairs.push_back({u, v});
      }
      a.sets.push_back(set);
    }
    bool collide = false;
    for (int i = 0; i < k; ++i) {
      for (int j = i + 1; j < k; ++j) {
        for (const auto& p : a.sets[i].pairs) {
          for (const auto& q : a.sets[j].pairs) collide = collide || p.v == q.v;
        }
      }
    }
    ASSERT_EQ(validate_disjointness(a).ok(), !collide);
  }
}

TEST(SetInvariants, Violations) {
  auto a = two_slots({1, 1}, {2});
  EXPECT_FALSE(set_invariant_violations(a).empty());

  a = two_slots({1}, {2});
  a.sets[0].pairs[0].u = 4;  // 2x2 reference
  EXPECT_FALSE(set_invariant_violations(a).empty());

  a = two_slots({16}, {2});
  EXPECT_FALSE(set_invariant_violations(a).empty());

  a = two_slots({1}, {2});
  a.valid_mask[1] = false;
  EXPECT_FALSE(set_invariant_violations(a).empty());  // padded slot with pairs

  a = two_slots({1}, {});
  a.valid_mask[1] = false;
  EXPECT_TRUE(set_invariant_violations(a).empty());

  a = two_slots({1}, {2});
  a.sets[1].slot = 5;
  EXPECT_FALSE(set_invariant_violations(a).empty());

  a = two_slots({1}, {2});
  a.valid_mask.pop_back();
  EXPECT_FALSE(set_invariant_violations(a).empty());
  EXPECT_THROW(require_valid(a), InvalidAnnotation);
}

TEST(GlobalIndex, Examples) {
  const std::vector<Index> c2{4, 4}, c3{4, 4, 4};
  EXPECT_EQ(global_index(1, 2, c2), 2);
  EXPECT_EQ(global_index(2, 1, c2), 5);
  EXPECT_EQ(global_index(3, 2, c3), 10);
  EXPECT_THROW(global_index(0, 0, c2), std::out_of_range);
  EXPECT_THROW(global_index(3, 0, c2), std::out_of_range);
  EXPECT_THROW(global_index(1, 4, c2), std::out_of_range);
  EXPECT_THROW(global_index(1, -1, c2), std::out_of_range);
}

TEST(GlobalIndex, InjectiveProperty) {
  std::mt19937_64 gen(17);
  std::uniform_int_distribution<Index> cd(1, 20);
  std::uniform_int_distribution<int> kd(1, 6);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Index> counts(static_cast<std::size_t>(kd(gen)));
    for (auto& c : counts) c = cd(gen);
    std::set<Index> seen;
    Index total = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      for (Index u = 0; u < counts[k]; ++u) {
        const Index g = global_index(static_cast<int>(k) + 1, u, counts);
        ASSERT_TRUE(seen.insert(g).second);
        ASSERT_EQ(g, oracle::offset(counts, static_cast<int>(k) + 1) + u);
      }
      total += counts[k];
    }
    ASSERT_EQ(*seen.rbegin(), total - 1);
  }
}

TEST(Dataset, LoadsWellFormedFile) {
  oracle::TempDir dir("corr");
  std::vector<Sample> samples{with_payload(two_slots({3, 7}, {1, 9}), 0), with_payload(two_slots({0}, {5}), 1)};
  save_dataset(dir / "d.jsonl", samples);
  const auto loaded = load_dataset(dir / "d.jsonl");
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[0], samples[0]);
  EXPECT_EQ(loaded[1], samples[1]);
}

TEST(Dataset, DuplicateAcrossSlotsIsRejected) {
  oracle::TempDir dir("corr");
  std::vector<Sample> samples{with_payload(two_slots({3, 7}, {1, 9}), 0), with_payload(two_slots({3, 7}, {7, 9}), 42)};
  save_dataset(dir / "d.jsonl", samples);
  try {
    load_dataset(dir / "d.jsonl");
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.kind(), DatasetError::Kind::invariant);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("sample 42"), std::string::npos) << msg;
    EXPECT_NE(msg.find("v=7"), std::string::npos) << msg;
  }
}

TEST(Dataset, ParseErrorsCarryLineNumber) {
  oracle::TempDir dir("corr");
  const std::string good = serialize_sample(with_payload(two_slots({3}, {1}), 0));
  {
    std::ofstream f(dir / "d.jsonl");
    f << good << "\n\n" << good.substr(0, good.size() / 2) << "\n";
  }
  try {
    load_dataset(dir / "d.jsonl");
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.kind(), DatasetError::Kind::parse);
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(load_dataset(dir / "missing.jsonl"), DatasetError);
}

TEST(Dataset, RoundTripOfSyntheticSet) {
  oracle::TempDir dir("corr");
  SynthConfig cfg;
  cfg.min_valid_slots = 1;
  cfg.seed = 9;
  const auto samples = generate_samples(cfg, 25);
  save_dataset(dir / "d.jsonl", samples);
  const auto loaded = load_dataset(dir / "d.jsonl");
  ASSERT_EQ(loaded.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) EXPECT_EQ(loaded[i], samples[i]);
}

TEST(Dataset, ScanReportsEveryBadRecord) {
  oracle::TempDir dir("corr");
  std::vector<Sample> samples{with_payload(two_slots({3, 7}, {7, 9}), 0), with_payload(two_slots({1}, {2}), 1),
                              with_payload(two_slots({2, 2}, {4}), 2)};
  save_dataset(dir / "d.jsonl", samples);
  const auto records = scan_dataset(dir / "d.jsonl");
  ASSERT_EQ(records.size(), 3u);
  EXPECT_FALSE(records[0].problems.empty());
  EXPECT_TRUE(records[1].problems.empty());
  EXPECT_FALSE(records[2].problems.empty());
  EXPECT_EQ(records[2].line, 3u);
}
