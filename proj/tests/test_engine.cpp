#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "dcdr/engine.hpp"

using namespace dcdr;

namespace {

struct Models {
  Vocabulary vocab{std::vector<ItemId>{1, 2, 3, 4, 5, 6, 7, 8, 9}};
  ModelConfig cfg{.dim = 8, .hidden = 8, .tau = 0.1, .init_range = 0.5};
  Rng rng;
  ModelParams model;
  EvaluatorParams evaluator;
  explicit Models(std::uint64_t seed)
      : rng(seed), model(vocab.table_rows(), cfg, rng), evaluator(vocab.table_rows(), cfg, rng) {}
};

SyntheticWorldConfig bench_world(std::size_t sessions) {
  SyntheticWorldConfig c;
  c.n_users = 40;
  c.n_items = 80;
  c.n_sessions = sessions;
  c.output_length = 4;
  c.seed = 21;
  return c;
}

}  // namespace

TEST(BeamState, DedupSortTruncate) {
  const ItemSequence a({1, 2, 3}, {0, 1, 2}), b({1, 2, 3}, {1, 0, 2}), c({1, 2, 3}, {0, 2, 1});
  BeamState beam(2);
  beam.assign({{a, -1.0}, {b, -0.5}, {a, -0.2}, {c, -0.5}});
  ASSERT_EQ(beam.candidates().size(), 2u);
  EXPECT_EQ(beam.best().seq, a);
  EXPECT_DOUBLE_EQ(beam.best().log_prob, -0.2);
  EXPECT_EQ(beam.candidates()[1].seq, c);  // tie at -0.5 goes to the lower rank index
  EXPECT_LT(*c.rank_index(), *b.rank_index());
  EXPECT_THROW(BeamState(0), InvalidArgument);
}

TEST(ConditionLikelihood, Examples) {
  EXPECT_NEAR(condition_likelihood(std::vector<double>{0.9, 0.4}, ConditionSequence({1, 1})), 0.6, 1e-15);
  EXPECT_NEAR(condition_likelihood(std::vector<double>{0.97, 0.97, 0.97}, ConditionSequence({1, 1, 1})), 0.97, 1e-15);
  EXPECT_NEAR(condition_likelihood(std::vector<double>{0.9, 0.4}, ConditionSequence({1, 0})), std::sqrt(0.9 * 0.6),
              1e-15);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> p(5);
    for (auto& x : p) x = 0.01 + 0.98 * uniform01(rng);
    const double base = condition_likelihood(p, ConditionSequence::all_positive(5));
    EXPECT_GT(base, 0.0);
    EXPECT_LT(base, 1.0);
    p[uniform_index(rng, 5)] += 0.005;
    EXPECT_GT(condition_likelihood(p, ConditionSequence::all_positive(5)), base);
  }
}

TEST(Rerank, PermContracts) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Models m(seed);
    const ItemSequence input = ItemSequence::identity({3, 1, 4, 5, 9});
    const std::vector<ItemId> hist{2, 6};
    InferenceConfig cfg;
    cfg.beam = 4;
    cfg.steps = 4;
    cfg.early_stop = seed % 2 == 0;
    const auto r = rerank(m.model, m.evaluator, m.vocab, input, hist, cfg);
    EXPECT_TRUE(r.output.is_permutation_sequence());
    auto sorted_out = r.output.items(), sorted_in = input.items();
    std::sort(sorted_out.begin(), sorted_out.end());
    std::sort(sorted_in.begin(), sorted_in.end());
    EXPECT_EQ(sorted_out, sorted_in);
    EXPECT_LE(r.steps_executed, cfg.steps);
    ASSERT_EQ(r.trace.size(), r.steps_executed + 1);
    ASSERT_EQ(r.likelihoods.size(), r.steps_executed + 1);
    for (std::size_t s = 1; s < r.trace.size(); ++s) {
      const auto& beam = r.trace[s].beam;
      EXPECT_LE(beam.size(), cfg.beam);
      for (std::size_t i = 1; i < beam.size(); ++i) EXPECT_GE(beam[i - 1].log_prob, beam[i].log_prob);
      for (const auto& child : beam) {
        bool reachable = false;
        for (const auto& parent : r.trace[s - 1].beam) {
          const auto d = seq_distance(child.seq.positions(), parent.seq.positions());
          reachable |= d == 0 || d == 2;
        }
        EXPECT_TRUE(reachable);
      }
    }
    if (cfg.early_stop)
      for (std::size_t s = 1; s + 1 < r.likelihoods.size(); ++s)
        EXPECT_GE(r.likelihoods[s] - r.likelihoods[s - 1], cfg.epsilon);
    EXPECT_EQ(r.utilities.size(), r.trace.back().beam.size());
    EXPECT_EQ(r.output, r.trace.back().beam[r.chosen].seq);
    EXPECT_EQ(*std::max_element(r.utilities.begin(), r.utilities.end()), r.utilities[r.chosen]);
    const auto again = rerank(m.model, m.evaluator, m.vocab, input, hist, cfg);
    EXPECT_EQ(again.output, r.output);
    EXPECT_EQ(again.likelihoods, r.likelihoods);
  }
}

TEST(Rerank, GreedySingleStepIsDenoiserArgmax) {
  Models m(3);
  const ItemSequence input = ItemSequence::identity({1, 2, 3, 4});
  InferenceConfig cfg;
  cfg.beam = 1;
  cfg.steps = 1;
  const auto r = rerank(m.model, m.evaluator, m.vocab, input, {}, cfg);
  const auto support = perm_support(input);
  const auto dist =
      denoise_distribution(m.model, m.vocab, input, ConditionSequence::all_positive(4), support, std::vector<ItemId>{});
  const auto best = std::max_element(dist.probs.begin(), dist.probs.end()) - dist.probs.begin();
  EXPECT_EQ(r.output, support[best]);
  EXPECT_EQ(r.utilities.size(), 1u);
}

TEST(Rerank, ExhaustiveAgreementForThreeItems) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Models m(seed);
    const ItemSequence input = ItemSequence::identity({4, 7, 2});
    const std::vector<ItemId> hist{1};
    const ConditionSequence c = ConditionSequence::all_positive(3);
    for (std::size_t steps : {2u, 3u}) {
      InferenceConfig cfg;
      cfg.beam = 6;
      cfg.steps = steps;
      cfg.early_stop = false;
      const auto r = rerank(m.model, m.evaluator, m.vocab, input, hist, cfg);
      // Best trajectory log-probability to each endpoint over every path.
      std::map<Perm, double> frontier{{input.positions(), 0.0}};
      for (std::size_t s = 0; s < steps; ++s) {
        std::map<Perm, double> next;
        for (const auto& [pos, lp] : frontier) {
          const ItemSequence rt = input.with_positions(pos);
          const auto support = perm_support(rt);
          const auto d = denoise_distribution(m.model, m.vocab, rt, c, support, hist);
          for (std::size_t i = 0; i < support.size(); ++i) {
            const double v = lp + std::log(d.probs[i]);
            auto [it, fresh] = next.emplace(support[i].positions(), v);
            if (!fresh) it->second = std::max(it->second, v);
          }
        }
        frontier = std::move(next);
      }
      ASSERT_EQ(frontier.size(), 6u);
      std::vector<std::pair<double, Perm>> ranked;
      for (const auto& [pos, lp] : frontier) ranked.emplace_back(lp, pos);
      std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      const auto& beam = r.trace.back().beam;
      ASSERT_EQ(beam.size(), 6u);
      for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(beam[i].seq.positions(), ranked[i].second);
        EXPECT_NEAR(beam[i].log_prob, ranked[i].first, 1e-12);
      }
    }
  }
}

TEST(Rerank, TokenOutputsHaveNoDuplicates) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Models m(seed);
    const ItemSequence input = ItemSequence::identity({3, 1, 4, 5, 9});
    InferenceConfig cfg;
    cfg.op = NoiseOp::kToken;
    cfg.beam = 4;
    cfg.steps = 3;
    cfg.early_stop = false;
    const auto r = rerank(m.model, m.evaluator, m.vocab, input, std::vector<ItemId>{2}, cfg);
    EXPECT_FALSE(r.output.has_duplicates());
    for (const auto& step : r.trace)
      for (const auto& cand : step.beam) EXPECT_FALSE(cand.seq.has_duplicates());
    const auto again = rerank(m.model, m.evaluator, m.vocab, input, std::vector<ItemId>{2}, cfg);
    EXPECT_EQ(again.output, r.output);
  }
}

TEST(Rerank, TokenFallsBackToParentWhenEveryComboRepeats) {
  Models m(4);
  // All items share one embedding so every position prefers the same slot.
  for (Eigen::Index r = 0; r < m.model.encoder.item_emb.value.rows(); ++r)
    m.model.encoder.item_emb.value.row(r) = m.model.encoder.item_emb.value.row(1);
  const ItemSequence input = ItemSequence::identity({1, 2, 3});
  InferenceConfig cfg;
  cfg.op = NoiseOp::kToken;
  cfg.token_top_m = 1;
  cfg.beam = 2;
  cfg.steps = 2;
  cfg.early_stop = false;
  const auto r = rerank(m.model, m.evaluator, m.vocab, input, {}, cfg);
  EXPECT_FALSE(r.output.has_duplicates());
  EXPECT_FALSE(r.trace.back().beam.empty());
}

TEST(Rerank, InvalidConfig) {
  Models m(5);
  InferenceConfig cfg;
  cfg.beam = 0;
  EXPECT_THROW(rerank(m.model, m.evaluator, m.vocab, ItemSequence::identity({1, 2}), {}, cfg), InvalidArgument);
  cfg = {};
  cfg.policy = ConditionPolicy::kMask;
  cfg.condition_mask = {1, 0, 1};
  EXPECT_THROW(rerank(m.model, m.evaluator, m.vocab, ItemSequence::identity({1, 2}), {}, cfg), InvalidArgument);
  cfg.condition_mask = {1, 0};
  EXPECT_NO_THROW(rerank(m.model, m.evaluator, m.vocab, ItemSequence::identity({1, 2}), {}, cfg));
}

TEST(Evaluation, ScoreOutputByPosition) {
  Session s{1, 1, {}, ItemSequence::identity({10, 11, 12}), ConditionSequence({0, 1, 1})};
  const auto logged = score_output(s, s.displayed);
  // scores (3, 2, 1) with labels (0, 1, 1): both positives below the negative.
  ASSERT_TRUE(logged.auc.has_value());
  EXPECT_DOUBLE_EQ(*logged.auc, 0.0);
  EXPECT_NEAR(logged.ndcg3, (1 / std::log2(3.0) + 0.5) / (1 + 1 / std::log2(3.0)), 1e-12);
  const auto flipped = score_output(s, s.displayed.with_positions({2, 1, 0}));
  EXPECT_DOUBLE_EQ(*flipped.auc, 1.0);
  EXPECT_DOUBLE_EQ(flipped.ndcg3, 1.0);
  Session single{2, 1, {}, ItemSequence::identity({10, 11}), ConditionSequence({1, 1})};
  EXPECT_FALSE(score_output(single, single.displayed).auc.has_value());
}

TEST(Evaluation, PointwiseGreedySortsBySingletonScore) {
  Models m(6);
  const ItemSequence input = ItemSequence::identity({1, 2, 3, 4, 5});
  const std::vector<ItemId> hist{6};
  const auto out = pointwise_greedy(m.evaluator, m.vocab, input, hist);
  double prev = 2.0;
  for (ItemId id : out.items()) {
    const double sc = evaluator_score(m.evaluator, m.vocab, ItemSequence::identity({id}), hist).probs[0];
    EXPECT_LE(sc, prev);
    prev = sc;
  }
}

TEST(Evaluation, ParallelMatchesSerial) {
  const auto d = generate_synthetic(bench_world(60));
  Models m(7);
  Vocabulary vocab = build_vocabulary(d.train);
  Rng rng(2);
  ModelParams model(vocab.table_rows(), m.cfg, rng);
  EvaluatorParams ev(vocab.table_rows(), m.cfg, rng);
  InferenceConfig cfg;
  auto gen = [&](const Session& s) { return rerank(model, ev, vocab, s.displayed, s.history, cfg).output; };
  const auto a = evaluate_generator(d.test, gen, 1);
  const auto b = evaluate_generator(d.test, gen, 3);
  EXPECT_EQ(a.per_session_ndcg3, b.per_session_ndcg3);
  EXPECT_EQ(a.auc, b.auc);
}

TEST(Training, ZeroLearningRateLeavesLossUnchanged) {
  const auto d = generate_synthetic(bench_world(20));
  Vocabulary vocab = build_vocabulary(d.train);
  Rng rng(3);
  ModelConfig mc{.dim = 8, .hidden = 8};
  ModelParams model(vocab.table_rows(), mc, rng);
  EvaluatorParams ev(vocab.table_rows(), mc, rng);
  TrainConfig tc;
  tc.learning_rate = 0.0;
  Trainer trainer(model, ev, vocab, 4, tc);
  Rng a(99), b(99);
  const double l1 = trainer.train_step(d.train[0], 3, a);
  const double l2 = trainer.train_step(d.train[0], 3, b);
  EXPECT_EQ(l1, l2);
}

TEST(Training, StepOneIsCrossEntropyOnLoggedList) {
  const auto d = generate_synthetic(bench_world(20));
  Vocabulary vocab = build_vocabulary(d.train);
  Rng rng(4);
  ModelConfig mc{.dim = 8, .hidden = 8};
  ModelParams model(vocab.table_rows(), mc, rng);
  EvaluatorParams ev(vocab.table_rows(), mc, rng);
  TrainConfig tc;
  tc.learning_rate = 0.0;
  Trainer trainer(model, ev, vocab, 4, tc);
  const Session& s = d.train[1];
  Rng a(5), b(5);
  const double loss = trainer.train_step(s, 1, a);
  PermTransitionModel tm(4, tc.schedule);
  const ItemSequence r1 = sample_forward(tm, s.displayed, 1, b);
  const auto support = perm_support(r1);
  const auto dist = denoise_distribution(model, vocab, r1, s.feedback, support, s.history);
  const auto it = std::find(support.begin(), support.end(), s.displayed);
  ASSERT_NE(it, support.end());
  EXPECT_NEAR(loss, -std::log(dist.probs[it - support.begin()]), 1e-12);
}

TEST(Training, EpochLossDecreasesOnSmallBenchmark) {
  auto wc = bench_world(500);
  wc.output_length = 5;
  const auto d = generate_synthetic(wc);
  Vocabulary vocab = build_vocabulary(d.train);
  Rng rng(8);
  ModelConfig mc{.dim = 16, .hidden = 16};
  ModelParams model(vocab.table_rows(), mc, rng);
  EvaluatorParams ev(vocab.table_rows(), mc, rng);
  TrainConfig tc;
  tc.learning_rate = 3e-3;
  Trainer trainer(model, ev, vocab, 5, tc);
  std::vector<double> losses;
  for (int e = 0; e < 5; ++e) losses.push_back(trainer.run_epoch(d.train).mean_loss);
  for (std::size_t e = 1; e < losses.size(); ++e) EXPECT_LT(losses[e], losses[e - 1]) << "epoch " << e + 1;
  EXPECT_EQ(trainer.skipped(), 0u);
}
