#pragma once

/**
 * Training loop for the denoiser and evaluator, conditional beam-search
 * reranking, baselines and the offline evaluation protocol.
 */

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <thread>
#include <variant>
#include <vector>

#include "dcdr/data.hpp"
#include "dcdr/errors.hpp"
#include "dcdr/forward.hpp"
#include "dcdr/metrics.hpp"
#include "dcdr/model.hpp"
#include "dcdr/optim.hpp"
#include "dcdr/random.hpp"
#include "dcdr/session.hpp"

namespace dcdr {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double evaluator_learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  NoiseOp op = NoiseOp::kPerm;
  NoiseSchedule schedule;
  std::uint64_t seed = 7;

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw InvalidArgument("epochs and batch size must be positive");
    if (learning_rate < 0.0 || evaluator_learning_rate < 0.0)
      throw InvalidArgument("learning rates must be non-negative");
    schedule.validate();
  }
};

enum class ConditionPolicy { kAllPositive, kMask };

struct InferenceConfig {
  std::size_t beam = 6;   // K
  std::size_t steps = 5;  // T
  double epsilon = 1e-3;
  bool early_stop = true;
  NoiseOp op = NoiseOp::kPerm;
  ConditionPolicy policy = ConditionPolicy::kAllPositive;
  std::vector<int> condition_mask;  // used with ConditionPolicy::kMask
  std::size_t token_top_m = 4;

  void validate() const {
    if (beam < 1) throw InvalidArgument("beam size K must be >= 1");
    if (steps < 1) throw InvalidArgument("reverse steps T must be >= 1");
    if (!(epsilon >= 0.0)) throw InvalidArgument("early-stop epsilon must be >= 0");
    if (token_top_m < 1) throw InvalidArgument("token top-m must be >= 1");
    if (policy == ConditionPolicy::kMask) (void)ConditionSequence(condition_mask);
  }

  ConditionSequence condition(std::size_t length) const {
    if (policy == ConditionPolicy::kAllPositive) return ConditionSequence::all_positive(length);
    if (condition_mask.size() != length)
      throw InvalidArgument("condition mask has " + std::to_string(condition_mask.size()) +
                            " entries for a list of length " + std::to_string(length));
    return ConditionSequence(condition_mask);
  }
};

// ---------------------------------------------------------------------------
// Beam

struct BeamCandidate {
  ItemSequence seq;
  double log_prob = 0.0;
};

/// Up to K candidates sorted by descending log-probability; ties go to the
/// lexicographically smaller position list (lower rank index for permutations).
class BeamState {
 public:
  explicit BeamState(std::size_t capacity) : capacity_(capacity) {
    if (capacity < 1) throw InvalidArgument("beam capacity must be >= 1");
  }

  /// Deduplicates (keeping the best log-probability), sorts and truncates.
  void assign(std::vector<BeamCandidate> pool) {
    std::map<Perm, std::size_t> best;
    std::vector<BeamCandidate> unique;
    for (auto& c : pool) {
      auto [it, fresh] = best.try_emplace(c.seq.positions(), unique.size());
      if (fresh)
        unique.push_back(std::move(c));
      else if (c.log_prob > unique[it->second].log_prob)
        unique[it->second] = std::move(c);
    }
    std::sort(unique.begin(), unique.end(), [](const BeamCandidate& a, const BeamCandidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      return a.seq.positions() < b.seq.positions();
    });
    if (unique.size() > capacity_) unique.resize(capacity_);
    candidates_ = std::move(unique);
  }

  const std::vector<BeamCandidate>& candidates() const noexcept { return candidates_; }
  std::size_t capacity() const noexcept { return capacity_; }
  const BeamCandidate& best() const { return candidates_.at(0); }

 private:
  std::size_t capacity_;
  std::vector<BeamCandidate> candidates_;
};

// ---------------------------------------------------------------------------
// Inference

/// Geometric mean over positions of the evaluator's probability that the
/// position matches the condition (p_k for a positive label, 1 - p_k otherwise).
inline double condition_likelihood(std::span<const double> probs, const ConditionSequence& c) {
  if (probs.size() != c.size() || probs.empty()) throw InvalidArgument("condition_likelihood: length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) s += std::log(c[k] ? probs[k] : 1.0 - probs[k]);
  return std::exp(s / static_cast<double>(probs.size()));
}

inline double condition_likelihood(const EvaluatorParams& ev, const Vocabulary& vocab, const ItemSequence& seq,
                                   std::span<const ItemId> history, const ConditionSequence& c) {
  return condition_likelihood(evaluator_score(ev, vocab, seq, history).probs, c);
}

inline double condition_likelihood(const EvaluatorParams& ev, const Vocabulary& vocab, const ItemSequence& seq,
                                   std::span<const ItemId> history) {
  return condition_likelihood(ev, vocab, seq, history, ConditionSequence::all_positive(seq.size()));
}

struct StepRecord {
  std::size_t step = 0;
  double likelihood = 0.0;
  std::vector<BeamCandidate> beam;
};

struct RerankResult {
  ItemSequence output;
  std::size_t steps_executed = 0;
  bool early_stopped = false;
  std::vector<double> likelihoods;  // [0] = input sequence, then one per executed step
  std::vector<StepRecord> trace;
  std::vector<double> utilities;  // evaluator utility of each final beam candidate
  std::size_t chosen = 0;         // index into trace.back().beam
};

namespace detail {

inline std::vector<BeamCandidate> perm_children(const ModelParams& p, const Vocabulary& vocab,
                                                const BeamCandidate& parent, const ConditionSequence& c,
                                                std::span<const ItemId> history, std::size_t k) {
  const auto support = perm_support(parent.seq);
  const auto dist = denoise_distribution(p, vocab, parent.seq, c, support, history);
  std::vector<std::size_t> order(support.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dist.probs[a] != dist.probs[b]) return dist.probs[a] > dist.probs[b];
    return support[a].positions() < support[b].positions();
  });
  std::vector<BeamCandidate> out;
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i)
    out.push_back({support[order[i]], parent.log_prob + std::log(dist.probs[order[i]])});
  return out;
}

/// Best-first enumeration of per-position slot combinations (top-m per
/// position), skipping combinations that repeat an item.
inline std::vector<BeamCandidate> token_children(const ModelParams& p, const Vocabulary& vocab,
                                                 const BeamCandidate& parent, const ConditionSequence& c,
                                                 std::span<const ItemId> history, std::size_t k, std::size_t top_m) {
  const auto dists = denoise_token_distribution(p, vocab, parent.seq, c, history);
  const std::size_t n = dists.size();
  const auto& base = parent.seq.base_items();
  std::vector<std::vector<std::pair<double, std::size_t>>> opts(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t j = 0; j < dists[pos].probs.size(); ++j) opts[pos].emplace_back(std::log(dists[pos].probs[j]), j);
    std::stable_sort(opts[pos].begin(), opts[pos].end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    opts[pos].resize(std::min(top_m, opts[pos].size()));
  }
  using Idx = std::vector<std::size_t>;
  auto score = [&](const Idx& idx) {
    double s = 0.0;
    for (std::size_t pos = 0; pos < n; ++pos) s += opts[pos][idx[pos]].first;
    return s;
  };
  auto cmp = [](const std::pair<double, Idx>& a, const std::pair<double, Idx>& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second > b.second;
  };
  std::priority_queue<std::pair<double, Idx>, std::vector<std::pair<double, Idx>>, decltype(cmp)> heap(cmp);
  std::set<Idx> seen;
  Idx start(n, 0);
  heap.emplace(score(start), start);
  seen.insert(start);
  std::vector<BeamCandidate> out;
  const std::size_t max_pops = 64 * k + 64;
  for (std::size_t pops = 0; !heap.empty() && out.size() < k && pops < max_pops; ++pops) {
    auto [s, idx] = heap.top();
    heap.pop();
    Perm slots(n);
    std::set<ItemId> items;
    for (std::size_t pos = 0; pos < n; ++pos) {
      slots[pos] = opts[pos][idx[pos]].second;
      items.insert(base[slots[pos]]);
    }
    if (items.size() == n) out.push_back({parent.seq.with_positions(slots), parent.log_prob + s});
    for (std::size_t pos = 0; pos < n; ++pos) {
      if (idx[pos] + 1 >= opts[pos].size()) continue;
      Idx next = idx;
      ++next[pos];
      if (seen.insert(next).second) heap.emplace(score(next), next);
    }
  }
  if (out.empty()) out.push_back(parent);
  return out;
}

}  // namespace detail

/// Conditional beam search from the previous-stage ranking, followed by
/// evaluator selection among the surviving candidates.
inline RerankResult rerank(const ModelParams& p, const EvaluatorParams& ev, const Vocabulary& vocab,
                           const ItemSequence& input, std::span<const ItemId> history, const InferenceConfig& cfg) {
  cfg.validate();
  if (cfg.op == NoiseOp::kPerm && !input.is_permutation_sequence())
    throw InvalidArgument("perm-op rerank needs an input that is a permutation of its base items");
  if (cfg.op == NoiseOp::kToken && input.has_duplicates())
    throw InvalidArgument("token-op rerank needs an input without duplicate items");
  const ConditionSequence c = cfg.condition(input.size());
  RerankResult r;
  BeamState beam(cfg.beam);
  beam.assign({{input, 0.0}});
  r.likelihoods.push_back(condition_likelihood(ev, vocab, input, history, c));
  r.trace.push_back({0, r.likelihoods.back(), beam.candidates()});
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<BeamCandidate> pool;
    for (const auto& cand : beam.candidates()) {
      auto kids = cfg.op == NoiseOp::kPerm
                      ? detail::perm_children(p, vocab, cand, c, history, cfg.beam)
                      : detail::token_children(p, vocab, cand, c, history, cfg.beam, cfg.token_top_m);
      pool.insert(pool.end(), std::make_move_iterator(kids.begin()), std::make_move_iterator(kids.end()));
    }
    beam.assign(std::move(pool));
    const double like = condition_likelihood(ev, vocab, beam.best().seq, history, c);
    r.likelihoods.push_back(like);
    r.trace.push_back({step, like, beam.candidates()});
    r.steps_executed = step;
    if (cfg.early_stop && like - r.likelihoods[r.likelihoods.size() - 2] < cfg.epsilon) {
      r.early_stopped = step < cfg.steps;
      break;
    }
  }
  const auto& final_beam = beam.candidates();
  for (const auto& cand : final_beam) r.utilities.push_back(evaluator_score(ev, vocab, cand.seq, history).utility);
  r.chosen = static_cast<std::size_t>(std::max_element(r.utilities.begin(), r.utilities.end()) - r.utilities.begin());
  r.output = final_beam[r.chosen].seq;
  return r;
}

// ---------------------------------------------------------------------------
// Baselines and evaluation

/// Each item scored in isolation (a one-item list) by the evaluator, sorted
/// descending; ties keep the input order.
inline ItemSequence pointwise_greedy(const EvaluatorParams& ev, const Vocabulary& vocab, const ItemSequence& input,
                                     std::span<const ItemId> history) {
  const auto items = input.items();
  std::vector<double> score(items.size());
  for (std::size_t k = 0; k < items.size(); ++k)
    score[k] = evaluator_score(ev, vocab, ItemSequence::identity({items[k]}), history).probs[0];
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  Perm pos(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) pos[k] = input.positions()[order[k]];
  return input.with_positions(pos);
}

struct SessionScore {
  std::optional<double> auc;
  double ndcg3 = 0.0;
};

/// Scores a reranked output against the session's logged feedback: an item at
/// output position k gets score l_o - k, base items left out score 0.
inline SessionScore score_output(const Session& s, const ItemSequence& output) {
  if (output.base_items() != s.displayed.base_items())
    throw InvalidArgument("output of session " + std::to_string(s.session_id) + " is over a different item set");
  const auto& base = s.displayed.base_items();
  std::vector<int> label_of_slot(base.size(), 0);
  for (std::size_t k = 0; k < s.displayed.size(); ++k) label_of_slot[s.displayed.positions()[k]] = s.feedback[k];
  std::vector<double> score(base.size(), 0.0);
  std::vector<double> gains;
  const double lo = static_cast<double>(output.size());
  for (std::size_t k = 0; k < output.size(); ++k) {
    const std::size_t slot = output.positions()[k];
    score[slot] = std::max(score[slot], lo - static_cast<double>(k));
    gains.push_back(label_of_slot[slot]);
  }
  std::vector<ScoredLabel> sl;
  for (std::size_t j = 0; j < base.size(); ++j) sl.push_back({score[j], label_of_slot[j]});
  return {auc(sl), ndcg_at_k(gains, 3)};
}

struct EvalSummary {
  double auc = 0.0;  // mean over sessions where AUC is defined
  double ndcg3 = 0.0;
  std::size_t sessions = 0;
  std::size_t undefined_auc = 0;
  std::vector<double> per_session_ndcg3;
  std::vector<std::optional<double>> per_session_auc;
};

/// Runs fn(i) for i in [0, n) over up to `threads` workers.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline EvalSummary evaluate_generator(std::span<const Session> sessions,
                                      const std::function<ItemSequence(const Session&)>& generate,
                                      std::size_t threads = 1) {
  std::vector<SessionScore> scores(sessions.size());
  parallel_for(sessions.size(), threads, [&](std::size_t i) { scores[i] = score_output(sessions[i], generate(sessions[i])); });
  EvalSummary out;
  out.sessions = sessions.size();
  std::vector<double> aucs;
  for (const auto& s : scores) {
    out.per_session_ndcg3.push_back(s.ndcg3);
    out.per_session_auc.push_back(s.auc);
    if (s.auc)
      aucs.push_back(*s.auc);
    else
      ++out.undefined_auc;
  }
  out.auc = aucs.empty() ? 0.0 : mean(aucs);
  out.ndcg3 = out.per_session_ndcg3.empty() ? 0.0 : mean(out.per_session_ndcg3);
  return out;
}

// ---------------------------------------------------------------------------
// Training

inline Vocabulary build_vocabulary(std::span<const Session> sessions) {
  std::set<ItemId> ids;
  for (const auto& s : sessions) {
    for (ItemId i : s.displayed.base_items()) ids.insert(i);
    for (ItemId i : s.history) ids.insert(i);
  }
  return Vocabulary(std::vector<ItemId>(ids.begin(), ids.end()));
}

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double evaluator_loss = 0.0;
  std::size_t examples = 0;
  std::size_t skipped = 0;
};

/// Alg. 1 driver: denoiser updates on forward-noised logged lists with the
/// logged feedback as condition, and evaluator updates on the same batches.
class Trainer {
 public:
  Trainer(ModelParams& model, EvaluatorParams& evaluator, const Vocabulary& vocab, std::size_t list_length,
          TrainConfig cfg)
      : model_(model),
        evaluator_(evaluator),
        vocab_(vocab),
        cfg_(std::move(cfg)),
        rng_(cfg_.seed),
        model_opt_(model.params(), {cfg_.optimizer, cfg_.learning_rate}),
        eval_opt_(evaluator.params(), {cfg_.optimizer, cfg_.evaluator_learning_rate}),
        kernel_(make_kernel(list_length, cfg_)) {}

  const TrainConfig& config() const noexcept { return cfg_; }
  std::size_t skipped() const noexcept { return skipped_; }
  std::size_t updates() const noexcept { return model_opt_.steps(); }
  Rng& rng() noexcept { return rng_; }

  /// Noises one session at step t, applies a single denoiser update and
  /// returns the pre-update loss L_t.
  double train_step(const Session& s, std::size_t t, Rng& rng) {
    std::vector<DenoiseExample> batch;
    if (!make_example(s, t, rng, batch)) return 0.0;
    const double loss = gradients(batch);
    model_opt_.step();
    return loss;
  }

  EpochStats run_epoch(std::span<const Session> sessions) {
    if (sessions.empty()) throw InvalidArgument("training set is empty");
    EpochStats st;
    st.epoch = ++epoch_;
    std::vector<std::size_t> order(sessions.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(rng_, order);
    double loss_sum = 0.0, eval_sum = 0.0;
    std::size_t eval_n = 0;
    const std::size_t skipped_before = skipped_;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
      std::vector<DenoiseExample> batch;
      std::vector<Session> eval_batch;
      for (std::size_t i = start; i < end; ++i) {
        const Session& s = sessions[order[i]];
        make_example(s, 1 + uniform_index(rng_, cfg_.schedule.steps), rng_, batch);
        eval_batch.push_back(s);
      }
      if (!batch.empty()) {
        loss_sum += gradients(batch) * static_cast<double>(batch.size());
        st.examples += batch.size();
        model_opt_.step();
      }
      eval_sum += evaluator_loss(evaluator_, vocab_, eval_batch) * static_cast<double>(eval_batch.size());
      eval_n += eval_batch.size();
      eval_opt_.step();
    }
    st.skipped = skipped_ - skipped_before;
    st.mean_loss = st.examples ? loss_sum / static_cast<double>(st.examples) : 0.0;
    st.evaluator_loss = eval_sum / static_cast<double>(eval_n);
    return st;
  }

 private:
  using Kernel = std::variant<PermTransitionModel, TokenTransitionModel>;

  static Kernel make_kernel(std::size_t list_length, const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.op == NoiseOp::kPerm) return PermTransitionModel(list_length, cfg.schedule);
    return TokenTransitionModel(list_length, cfg.schedule);
  }

  bool make_example(const Session& s, std::size_t t, Rng& rng, std::vector<DenoiseExample>& out) {
    DenoiseExample ex;
    ex.r0 = s.displayed;
    ex.t = t;
    ex.condition = s.feedback;
    ex.history = s.history;
    try {
      std::visit(
          [&](const auto& tm) {
            ex.rt = sample_forward(tm, ex.r0, t, rng);
            using K = std::decay_t<decltype(tm)>;
            if constexpr (std::is_same_v<K, PermTransitionModel>)
              (void)posterior_perm(ex.rt, ex.r0, t, tm);
            else
              (void)posterior_token(ex.rt, ex.r0, t, tm);
          },
          kernel_);
    } catch (const InconsistentEvidence&) {
      ++skipped_;
      return false;
    }
    out.push_back(std::move(ex));
    return true;
  }

  double gradients(std::span<const DenoiseExample> batch) {
    return std::visit([&](const auto& tm) { return model_gradients(model_, vocab_, batch, tm); }, kernel_);
  }

  ModelParams& model_;
  EvaluatorParams& evaluator_;
  const Vocabulary& vocab_;
  TrainConfig cfg_;
  Rng rng_;
  Optimizer model_opt_;
  Optimizer eval_opt_;
  Kernel kernel_;
  std::size_t skipped_ = 0;
  std::size_t epoch_ = 0;
};

struct TrainedModels {
  Vocabulary vocab;
  ModelParams denoiser;
  EvaluatorParams evaluator;
  std::vector<EpochStats> epochs;
};

/// Builds the vocabulary from the training sessions, initializes both models
/// from the run seed and runs cfg.epochs epochs. on_epoch sees the models
/// after every epoch.
inline TrainedModels train_models(std::span<const Session> train, const ModelConfig& mc, const TrainConfig& tc,
                                  const std::function<void(const EpochStats&, TrainedModels&)>& on_epoch = {}) {
  tc.validate();
  if (train.empty()) throw InvalidArgument("training set is empty");
  const std::size_t length = train.front().displayed.size();
  for (const auto& s : train)
    if (s.displayed.size() != length)
      throw IntegrityError("session " + std::to_string(s.session_id) + " has " + std::to_string(s.displayed.size()) +
                           " items; training needs a fixed list length of " + std::to_string(length));
  TrainedModels out;
  out.vocab = build_vocabulary(train);
  Rng init(tc.seed ^ 0x2545f4914f6cdd1dULL);
  out.denoiser = ModelParams(out.vocab.table_rows(), mc, init);
  out.evaluator = EvaluatorParams(out.vocab.table_rows(), mc, init);
  Trainer trainer(out.denoiser, out.evaluator, out.vocab, length, tc);
  for (std::size_t e = 0; e < tc.epochs; ++e) {
    out.epochs.push_back(trainer.run_epoch(train));
    if (on_epoch) on_epoch(out.epochs.back(), out);
  }
  return out;
}

}  // namespace dcdr
