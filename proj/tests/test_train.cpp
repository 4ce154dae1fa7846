#include <doctest.h>

#include "wnlab/train.hpp"

using namespace wnlab;

namespace {

TwoBranchModel fresh_model(uint64_t seed) {
  Rng rng(seed);
  return TwoBranchModel::init(NetworkSpec::mlp(2, 8, 4, 2), rng);
}

TrainConfig quick_config(uint64_t seed) {
  TrainConfig tc;
  tc.alternations = 2;
  tc.epochs_linear = 4;
  tc.epochs_wnll = 2;
  tc.batch_size = 16;
  tc.lr = 0.2;
  tc.knn = 5;
  tc.template_size = 8;
  tc.seed = seed;
  return tc;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("standard training is deterministic and learns blobs") {
  Dataset d = gen_synthetic("blobs", 160, 0.08, 111);
  TrainConfig tc;
  tc.epochs_linear = 15;
  tc.batch_size = 16;
  tc.lr = 0.2;
  tc.seed = 5;
  TwoBranchModel m1 = fresh_model(5);
  TwoBranchModel m2 = fresh_model(5);
  TrainingLog l1 = standard_train(m1, d, tc);
  TrainingLog l2 = standard_train(m2, d, tc);
  CHECK(m1.theta.checksum() == m2.theta.checksum());
  CHECK(m1.w_buffer.checksum() == m2.w_buffer.checksum());
  CHECK(m1.w_linear.checksum() == m2.w_linear.checksum());
  REQUIRE(l1.entries.size() == l2.entries.size());
  for (size_t i = 0; i < l1.entries.size(); ++i) {
    CHECK(l1.entries[i].loss == l2.entries[i].loss);
    CHECK(l1.entries[i].acc == l2.entries[i].acc);
  }
  CHECK(accuracy(predict_linear(m1, d), d.y) >= 0.9);
  // loss decreases overall
  CHECK(l1.entries.back().loss < l1.entries.front().loss);
}

TEST_CASE("different seeds give different trajectories") {
  Dataset d = gen_synthetic("blobs", 120, 0.08, 112);
  TrainConfig tc;
  tc.epochs_linear = 5;
  tc.seed = 1;
  TwoBranchModel m1 = fresh_model(1);
  standard_train(m1, d, tc);
  tc.seed = 2;
  TwoBranchModel m2 = fresh_model(2);
  standard_train(m2, d, tc);
  CHECK(m1.w_linear.checksum() != m2.w_linear.checksum());
}

TEST_CASE("augmentation modes produce the documented dataset sizes") {
  Dataset d = gen_grating_images(6, 8, 0.2, 113);
  TvmConfig tvm;
  tvm.iters = 10;
  Rng rng(114);
  Dataset orig = augment_dataset(d, "original", tvm, rng);
  CHECK(orig.n() == 6);
  CHECK((orig.x - d.x).cwiseAbs().maxCoeff() == 0.0);
  Dataset t = augment_dataset(d, "tvm", tvm, rng);
  CHECK(t.n() == 6);
  CHECK(t.y == d.y);
  CHECK((t.x - d.x).cwiseAbs().maxCoeff() > 0.0);
  Dataset both = augment_dataset(d, "original_plus_tvm", tvm, rng);
  CHECK(both.n() == 12);
  for (int i = 0; i < 6; ++i) CHECK(both.y[i] == both.y[i + 6]);
  CHECK_THROWS_AS(augment_dataset(d, "mystery", tvm, rng), std::invalid_argument);
}

TEST_CASE("alternating training logs both phases deterministically") {
  Dataset d = gen_synthetic("blobs", 120, 0.08, 115);
  TwoBranchModel m1 = fresh_model(7);
  TwoBranchModel m2 = fresh_model(7);
  TrainingLog l1 = train_alternating(m1, d, quick_config(7));
  TrainingLog l2 = train_alternating(m2, d, quick_config(7));
  bool saw_linear = false, saw_wnll = false;
  for (const auto& e : l1.entries) {
    if (e.phase == "linear") saw_linear = true;
    if (e.phase == "wnll") saw_wnll = true;
  }
  CHECK(saw_linear);
  CHECK(saw_wnll);
  REQUIRE(l1.checksums.size() == l2.checksums.size());
  for (size_t i = 0; i < l1.checksums.size(); ++i) {
    CHECK(l1.checksums[i].theta == l2.checksums[i].theta);
    CHECK(l1.checksums[i].buffer == l2.checksums[i].buffer);
    CHECK(l1.checksums[i].linear == l2.checksums[i].linear);
  }
}

TEST_CASE("adversarial training with a disabled inner loop matches clean training") {
  Dataset d = gen_synthetic("blobs", 120, 0.08, 116);
  TrainConfig tc = quick_config(9);
  tc.epsilon = 0.0;
  tc.ifgsm_iters = 0;
  TwoBranchModel clean = fresh_model(9);
  TwoBranchModel adv = fresh_model(9);
  train_alternating(clean, d, tc);
  pgd_adv_train(adv, d, tc);
  CHECK(clean.theta.checksum() == adv.theta.checksum());
  CHECK(clean.w_buffer.checksum() == adv.w_buffer.checksum());
  CHECK(clean.w_linear.checksum() == adv.w_linear.checksum());
}

TEST_CASE("adversarial training with a live inner loop changes the outcome") {
  Dataset d = gen_synthetic("blobs", 120, 0.08, 117);
  TrainConfig tc = quick_config(9);
  TwoBranchModel clean = fresh_model(9);
  train_alternating(clean, d, tc);
  tc.epsilon = 0.05;
  tc.ifgsm_iters = 3;
  TwoBranchModel adv = fresh_model(9);
  TrainingLog log = pgd_adv_train(adv, d, tc);
  CHECK(clean.w_linear.checksum() != adv.w_linear.checksum());
  CHECK_FALSE(log.entries.empty());
}

TEST_CASE("template size default is stratified and bounded") {
  TrainConfig tc;
  tc.template_size = 0;
  // max(2m, n/5)
  CHECK(tc.effective_template_size(100, 2) == 20);
  CHECK(tc.effective_template_size(15, 4) == 8);
  tc.template_size = 12;
  CHECK(tc.effective_template_size(1000, 2) == 12);
}

TEST_CASE("config validation rejects inconsistent settings") {
  TrainConfig tc;
  tc.epochs_linear = -1;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = TrainConfig{};
  tc.epsilon = -0.5;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = TrainConfig{};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = TrainConfig{};
  tc.augmentation = "unknown";
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

}  // TEST_SUITE
