#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <set>
#include <stdexcept>
#include <string>

#include "oslolab/dataset.hpp"

using namespace oslolab;

namespace {

std::string tmp_path(const char* name) { return std::string("dataset_test_") + name; }

SynthSpec small_spec() {
  SynthSpec s;
  s.classes = 4;
  s.per_class = 50;
  s.label_noise = 0.0;
  return s;
}

}  // namespace

TEST_CASE("synth dataset shape and balance") {
  const LabeledDataset ds = synth_dataset(small_spec(), 1);
  CHECK(ds.size() == 200);
  CHECK(ds.num_classes == 4);
  std::vector<int> counts(4, 0);
  for (int64_t y : ds.labels) counts[static_cast<size_t>(y)]++;
  for (int c : counts) CHECK(c == 50);
  for (const Tensor& img : ds.images) {
    REQUIRE(img.shape == std::vector<int64_t>({1, 16, 16}));
    for (double v : img.data) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }
  ds.validate();
}

TEST_CASE("synth dataset is seed-deterministic") {
  const LabeledDataset a = synth_dataset(small_spec(), 7);
  const LabeledDataset b = synth_dataset(small_spec(), 7);
  REQUIRE(a.size() == b.size());
  CHECK(a.labels == b.labels);
  for (int64_t i = 0; i < a.size(); ++i)
    CHECK(a.images[static_cast<size_t>(i)].data == b.images[static_cast<size_t>(i)].data);
  const LabeledDataset c = synth_dataset(small_spec(), 8);
  bool identical = a.labels == c.labels;
  for (int64_t i = 0; identical && i < a.size(); ++i)
    identical = a.images[static_cast<size_t>(i)].data == c.images[static_cast<size_t>(i)].data;
  CHECK_FALSE(identical);
}

TEST_CASE("label noise flips an exact count to other classes") {
  SynthSpec clean = small_spec();
  SynthSpec noisy = clean;
  noisy.label_noise = 0.1;
  const LabeledDataset a = synth_dataset(clean, 3);
  const LabeledDataset b = synth_dataset(noisy, 3);
  REQUIRE(a.size() == b.size());
  int flipped = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    if (a.labels[static_cast<size_t>(i)] != b.labels[static_cast<size_t>(i)]) ++flipped;
    // images untouched
    REQUIRE(a.images[static_cast<size_t>(i)].data == b.images[static_cast<size_t>(i)].data);
    REQUIRE(b.labels[static_cast<size_t>(i)] >= 0);
    REQUIRE(b.labels[static_cast<size_t>(i)] < 4);
  }
  CHECK(flipped == 20);  // exact count, not Bernoulli
  b.validate();
}

TEST_CASE("idx round trip and errors") {
  const LabeledDataset ds = synth_dataset(small_spec(), 2);
  const std::string ip = tmp_path("img.idx"), lp = tmp_path("lab.idx");
  save_idx_dataset(ds, ip, lp);
  const LabeledDataset back = load_idx_dataset(ip, lp);
  REQUIRE(back.size() == ds.size());
  CHECK(back.labels == ds.labels);
  CHECK(back.num_classes == ds.num_classes);
  for (int64_t i = 0; i < ds.size(); ++i) {
    const Tensor& x = ds.images[static_cast<size_t>(i)];
    const Tensor& y = back.images[static_cast<size_t>(i)];
    REQUIRE(x.shape == y.shape);
    for (size_t j = 0; j < x.data.size(); ++j)
      REQUIRE(std::abs(x.data[j] - y.data[j]) <= 0.5 / 255.0);  // u8 quantization
  }
  // corrupt the image magic
  {
    FILE* f = std::fopen(ip.c_str(), "r+b");
    REQUIRE(f != nullptr);
    const unsigned char bad[4] = {1, 2, 3, 4};
    std::fwrite(bad, 1, 4, f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_idx_dataset(ip, lp), std::invalid_argument);
  CHECK_THROWS_AS(load_idx_dataset("missing.idx", lp), std::invalid_argument);
  std::remove(ip.c_str());
  std::remove(lp.c_str());
}

TEST_CASE("split invariants") {
  const LabeledDataset ds = synth_dataset(small_spec(), 1);
  SplitSizes sizes;
  sizes.target_train = 80;
  sizes.surrogate_train = 80;
  sizes.eval_per_side = 20;
  const SplitPlan plan = make_split(ds, sizes, 5);
  plan.validate(ds.size());
  CHECK(plan.target_train.size() == 80);
  CHECK(plan.surrogate_train.size() == 80);
  CHECK(plan.eval_members.size() == 20);
  CHECK(plan.eval_nonmembers.size() == 20);

  std::set<int64_t> tt(plan.target_train.begin(), plan.target_train.end());
  std::set<int64_t> st(plan.surrogate_train.begin(), plan.surrogate_train.end());
  for (int64_t i : st) CHECK(tt.count(i) == 0);
  for (int64_t i : plan.eval_members) CHECK(tt.count(i) == 1);
  for (int64_t i : plan.eval_nonmembers) {
    CHECK(tt.count(i) == 0);
    CHECK(st.count(i) == 0);
  }

  // determinism + seed sensitivity
  CHECK(make_split(ds, sizes, 5).target_train == plan.target_train);
  CHECK(make_split(ds, sizes, 6).target_train != plan.target_train);

  SplitSizes bad = sizes;
  bad.surrogate_train = 200;
  CHECK_THROWS_AS(make_split(ds, bad, 1), std::invalid_argument);
}

TEST_CASE("split json round trip") {
  const LabeledDataset ds = synth_dataset(small_spec(), 1);
  SplitSizes sizes;
  sizes.target_train = 60;
  sizes.surrogate_train = 60;
  sizes.eval_per_side = 10;
  const SplitPlan plan = make_split(ds, sizes, 9);
  const SplitPlan back = SplitPlan::from_json(plan.to_json());
  CHECK(back.target_train == plan.target_train);
  CHECK(back.surrogate_train == plan.surrogate_train);
  CHECK(back.eval_members == plan.eval_members);
  CHECK(back.eval_nonmembers == plan.eval_nonmembers);
}

TEST_CASE("augment identities") {
  const LabeledDataset ds = synth_dataset(small_spec(), 4);
  const Tensor& x = ds.images[0];

  const Tensor r0 = augment_rotate(x, 0.0);
  CHECK(r0.data == x.data);

  // rotate 90 four times restores a square image
  Tensor r = x;
  for (int i = 0; i < 4; ++i) r = augment_rotate(r, 90.0);
  for (size_t i = 0; i < x.data.size(); ++i) CHECK(r.data[i] == doctest::Approx(x.data[i]));

  // translate there and back restores the interior
  const Tensor t1 = augment_translate(x, 0, 1);
  const Tensor t2 = augment_translate(t1, 0, -1);
  const int64_t H = x.shape[1], W = x.shape[2];
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 1; j < W - 1; ++j)
      CHECK(t2[i * W + j] == doctest::Approx(x[i * W + j]));

  for (double v : augment_rotate(x, 33.0).data) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("validate catches bad labels and values") {
  LabeledDataset ds = synth_dataset(small_spec(), 1);
  ds.labels[0] = 9;  // >= num_classes
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
  ds.labels[0] = 0;
  ds.images[0].data[0] = 1.5;
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
}
