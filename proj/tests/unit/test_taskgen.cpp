#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "gessl/taskgen.hpp"
#include "temp_dir.hpp"

using namespace gessl;
using gessl::testing::TempDir;

TEST(Synthetic, SizesAndBalancedLabels) {
  const Dataset d = generate_synthetic({8, 100, 16, 1.0, 1.5}, 3);
  EXPECT_EQ(d.rows(), 800u);
  EXPECT_EQ(d.dim(), 16u);
  ASSERT_TRUE(d.true_labels);
  std::map<int, int> counts;
  for (int l : *d.true_labels) ++counts[l];
  ASSERT_EQ(counts.size(), 8u);
  for (const auto& [label, count] : counts) EXPECT_EQ(count, 100);
}

TEST(Synthetic, ZeroWithinSigmaCollapsesEachClass) {
  const Dataset d = generate_synthetic({3, 5, 4, 1.0, 0.0}, 1);
  const auto& labels = *d.true_labels;
  for (std::size_t i = 0; i < d.rows(); ++i)
    for (std::size_t j = 0; j < d.rows(); ++j)
      if (labels[i] == labels[j])
        for (std::size_t c = 0; c < d.dim(); ++c) EXPECT_EQ(d.features.at(i, c), d.features.at(j, c));
}

TEST(Synthetic, DeterministicPerSeed) {
  const Dataset a = generate_synthetic({}, 9);
  const Dataset b = generate_synthetic({}, 9);
  EXPECT_TRUE(std::equal(a.features.values().begin(), a.features.values().end(), b.features.values().begin()));
  EXPECT_THROW(generate_synthetic({1, 10, 4, 1.0, 1.0}, 0), std::invalid_argument);
}

TEST(Augment, IdentitySpecReturnsInput) {
  RngStream rng(1);
  const std::vector<double> row{1.5, -2.0, 0.25};
  EXPECT_EQ(augment(row, AugmentationSpec::identity(), rng), row);
}

TEST(Augment, FixedStreamIsReproducible) {
  const std::vector<double> row{1.0, 2.0, 3.0, 4.0};
  RngStream a(77), b(77);
  EXPECT_EQ(augment(row, {}, a), augment(row, {}, b));
}

TEST(Augment, DropoutCountMatchesBinomial) {
  const double p = 0.999;
  const std::size_t d = 1000;
  const std::vector<double> row(d, 1.0);
  const AugmentationSpec spec{0.0, p, 1.0, 1.0};
  const double mean = d * p;
  const double sd = std::sqrt(d * p * (1.0 - p));
  double total = 0.0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    RngStream rng = RngStream::derive(5, StreamPurpose::data, {static_cast<std::uint64_t>(t)});
    const auto out = augment(row, spec, rng);
    total += static_cast<double>(std::count(out.begin(), out.end(), 0.0));
  }
  EXPECT_NEAR(total / trials, mean, 3.0 * sd / std::sqrt(trials));
}

TEST(MakeTask, LabelMultisetAndShape) {
  const Dataset d = generate_synthetic({4, 10, 6, 1.0, 1.0}, 0);
  RngStream rng(3);
  const TaskBatch t = make_task(d, 4, 2, {}, rng);
  EXPECT_EQ(t.views.rows(), 8u);
  EXPECT_EQ(t.pseudo_labels, (std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3}));
  EXPECT_NO_THROW(validate_task(t));
}

TEST(MakeTask, SameStreamIdenticalBatch) {
  const Dataset d = generate_synthetic({}, 0);
  RngStream a(11), b(11);
  const TaskBatch x = make_task(d, 16, 2, {}, a);
  const TaskBatch y = make_task(d, 16, 2, {}, b);
  EXPECT_EQ(x.source_indices, y.source_indices);
  EXPECT_TRUE(std::equal(x.views.values().begin(), x.views.values().end(), y.views.values().begin()));
}

TEST(MakeTask, Errors) {
  const Dataset d = generate_synthetic({2, 2, 2, 1.0, 1.0}, 0);
  RngStream rng(0);
  EXPECT_THROW(make_task(d, 5, 2, {}, rng), std::invalid_argument);
  EXPECT_THROW(make_task(d, 2, 1, {}, rng), std::invalid_argument);
}

TEST(MakeTask, ValidateRejectsBrokenTasks) {
  const Dataset d = generate_synthetic({4, 10, 6, 1.0, 1.0}, 0);
  RngStream rng(3);
  TaskBatch t = make_task(d, 4, 2, {}, rng);
  TaskBatch dup = t;
  dup.source_indices[1] = dup.source_indices[0];
  EXPECT_THROW(validate_task(dup), std::logic_error);
  TaskBatch relabeled = t;
  relabeled.pseudo_labels[0] = 1;
  EXPECT_THROW(validate_task(relabeled), std::logic_error);
}

TEST(MakeEpisode, TasksMatchIndependentConstruction) {
  const Dataset d = generate_synthetic({}, 0);
  const auto episode = make_episode(d, 8, 16, 2, {}, 42, 3);
  ASSERT_EQ(episode.size(), 8u);
  for (std::uint64_t l = 0; l < 8; ++l) {
    RngStream rng = task_stream(42, 3, l);
    const TaskBatch t = make_task(d, 16, 2, {}, rng);
    EXPECT_EQ(t.source_indices, episode[l].source_indices);
    EXPECT_EQ(t.key, episode[l].key);
    EXPECT_TRUE(std::equal(t.views.values().begin(), t.views.values().end(), episode[l].views.values().begin()));
  }
  const auto single = make_episode(d, 1, 16, 2, {}, 42, 3);
  EXPECT_EQ(single[0].source_indices, episode[0].source_indices);
}

TEST(MakeEpisode, ThousandTasksSatisfyInvariants) {
  const Dataset d = generate_synthetic({}, 0);
  for (std::uint64_t e = 0; e < 125; ++e) {
    for (const TaskBatch& t : make_episode(d, 8, 16, 2, {}, 1, e)) {
      ASSERT_NO_THROW(validate_task(t));
      ASSERT_EQ(std::set<std::size_t>(t.source_indices.begin(), t.source_indices.end()).size(), 16u);
    }
  }
}

TEST(DatasetIo, RoundTripIsFloat32Exact) {
  TempDir dir("dataset");
  const Dataset d = generate_synthetic({3, 4, 5, 1.0, 1.0}, 2);
  save_raw_dataset(d, dir / "d.gsds");
  const Dataset back = load_raw_dataset(dir / "d.gsds");
  ASSERT_EQ(back.rows(), d.rows());
  ASSERT_EQ(back.dim(), d.dim());
  EXPECT_EQ(*back.true_labels, *d.true_labels);
  for (std::size_t i = 0; i < d.features.size(); ++i)
    EXPECT_EQ(back.features[i], static_cast<double>(static_cast<float>(d.features[i])));
}

TEST(DatasetIo, DistinctErrors) {
  TempDir dir("dataset-errors");
  const Dataset d = generate_synthetic({3, 4, 5, 1.0, 1.0}, 2);
  save_raw_dataset(d, dir / "d.gsds");
  const auto bytes = gessl::testing::read_bytes(dir / "d.gsds");

  auto code_of = [&](const std::vector<char>& data, std::optional<std::size_t> dim = std::nullopt) {
    gessl::testing::write_bytes(dir / "x.gsds", data);
    try {
      load_raw_dataset(dir / "x.gsds", dim);
    } catch (const DatasetFormatError& e) {
      return static_cast<int>(e.code());
    }
    return -1;
  };
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(code_of(magic), static_cast<int>(DatasetErrorCode::bad_magic));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 7);
  EXPECT_EQ(code_of(truncated), static_cast<int>(DatasetErrorCode::truncated));
  EXPECT_EQ(code_of(bytes, 6), static_cast<int>(DatasetErrorCode::dim_mismatch));
  auto version = bytes;
  version[4] = 2;
  EXPECT_EQ(code_of(version), static_cast<int>(DatasetErrorCode::bad_version));
  EXPECT_THROW(load_raw_dataset(dir / "missing.gsds"), DatasetFormatError);
}

TEST(DatasetIo, CifarBatchRecords) {
  TempDir dir("cifar");
  std::vector<char> bytes(2 * 3073, 0);
  bytes[0] = 3;
  bytes[1] = static_cast<char>(255);
  bytes[3073] = 9;
  gessl::testing::write_bytes(dir / "batch.bin", bytes);
  const Dataset d = load_cifar10_batch(dir / "batch.bin");
  EXPECT_EQ(d.rows(), 2u);
  EXPECT_EQ(d.dim(), 3072u);
  EXPECT_EQ((*d.true_labels)[0], 3);
  EXPECT_EQ((*d.true_labels)[1], 9);
  EXPECT_EQ(d.features.at(0, 0), 1.0);
  EXPECT_EQ(load_cifar10_batch(dir / "batch.bin", 1).rows(), 1u);
  bytes.pop_back();
  gessl::testing::write_bytes(dir / "bad.bin", bytes);
  EXPECT_THROW(load_cifar10_batch(dir / "bad.bin"), DatasetFormatError);
}
