#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dcdr/checkpoint.hpp"

using namespace dcdr;
namespace fs = std::filesystem;

namespace {

Checkpoint small_checkpoint() {
  Checkpoint ck;
  ck.output_length = 4;
  ck.model = ModelConfig{.dim = 4, .hidden = 3, .tau = 0.2, .init_range = 0.5, .position_scale = 0.1};
  ck.train.schedule = NoiseSchedule(0.3, 4);
  ck.train.learning_rate = 2e-3;
  ck.vocab = Vocabulary(std::vector<ItemId>{7, 9, 12, 40, 41});
  Rng rng(5);
  ck.denoiser = ModelParams(ck.vocab.table_rows(), ck.model, rng);
  ck.evaluator = EvaluatorParams(ck.vocab.table_rows(), ck.model, rng);
  ck.seed = 17;
  ck.step = 250;
  return ck;
}

fs::path scratch_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "dcdr_test_checkpoint";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Checkpoint, RoundTripIsFloat32Exact) {
  auto ck = small_checkpoint();
  const auto path = scratch_file("round.json");
  save_checkpoint(path, ck);
  auto back = load_checkpoint(path);
  EXPECT_EQ(back.output_length, 4u);
  EXPECT_EQ(back.model.dim, 4u);
  EXPECT_EQ(back.model.hidden, 3u);
  EXPECT_EQ(back.model.tau, 0.2);
  EXPECT_EQ(back.model.position_scale, 0.1);
  EXPECT_EQ(back.train.schedule.beta, 0.3);
  EXPECT_EQ(back.train.schedule.steps, 4u);
  EXPECT_EQ(back.train.learning_rate, 2e-3);
  EXPECT_EQ(back.vocab.ids(), ck.vocab.ids());
  EXPECT_EQ(back.seed, 17u);
  EXPECT_EQ(back.step, 250u);
  EXPECT_EQ(back.denoiser.tau, 0.2);
  EXPECT_EQ(back.evaluator.encoder.position_scale, 0.1);

  const auto a = ck.denoiser.params(), b = back.denoiser.params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i]->value.rows(), b[i]->value.rows());
    for (Eigen::Index k = 0; k < a[i]->value.size(); ++k)
      EXPECT_EQ(static_cast<float>(a[i]->value(k)), b[i]->value(k)) << a[i]->name;
  }

  // Reloading an already rounded checkpoint changes nothing.
  const auto again = scratch_file("again.json");
  save_checkpoint(again, back);
  auto third = load_checkpoint(again);
  const auto c = third.evaluator.params(), d = back.evaluator.params();
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_TRUE(c[i]->value == d[i]->value) << c[i]->name;
}

TEST(Checkpoint, LoadedModelsScoreIdentically) {
  auto ck = small_checkpoint();
  const auto path = scratch_file("score.json");
  save_checkpoint(path, ck);
  auto x = load_checkpoint(path), y = load_checkpoint(path);
  const auto seq = ItemSequence::identity({7, 9, 12, 40});
  const std::vector<ItemId> hist{41, 3};
  EXPECT_EQ(evaluator_score(x.evaluator, x.vocab, seq, hist).probs,
            evaluator_score(y.evaluator, y.vocab, seq, hist).probs);
  InferenceConfig ic;
  ic.beam = 3;
  ic.steps = 3;
  const auto rx = rerank(x.denoiser, x.evaluator, x.vocab, seq, hist, ic);
  const auto ry = rerank(y.denoiser, y.evaluator, y.vocab, seq, hist, ic);
  EXPECT_EQ(rx.output, ry.output);
  EXPECT_EQ(rx.utilities, ry.utilities);
}

TEST(Checkpoint, RejectsVersionMismatchAndDamage) {
  auto ck = small_checkpoint();
  auto j = checkpoint_to_json(ck);

  auto wrong = j;
  wrong["format_version"] = kCheckpointFormatVersion + 1;
  EXPECT_THROW(checkpoint_from_json(wrong), IntegrityError);

  auto missing = j;
  missing.erase("format_version");
  EXPECT_THROW(checkpoint_from_json(missing), IntegrityError);

  auto shape = j;
  shape["arrays"]["evaluator.mlp.w1"]["cols"] = 4;
  EXPECT_THROW(checkpoint_from_json(shape), IntegrityError);

  auto truncated = j;
  truncated["arrays"]["denoiser.logit_scale"]["data"] = "AAAA";
  EXPECT_THROW(checkpoint_from_json(truncated), IntegrityError);

  auto absent = j;
  absent["arrays"].erase("denoiser.query_positions");
  EXPECT_THROW(checkpoint_from_json(absent), IntegrityError);

  const auto path = scratch_file("garbage.json");
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(load_checkpoint(path), ParseError);
  EXPECT_THROW(load_checkpoint(scratch_file("does_not_exist.json")), InvalidArgument);
}
