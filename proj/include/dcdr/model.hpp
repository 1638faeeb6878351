#pragma once

/**
 * Conditional denoising model and listwise sequence evaluator.
 *
 * Both share the same contextual encoder layout (independent weights):
 *   X      = item embeddings of the list (+ sinusoidal positions for the evaluator)
 *   S      = X + softmax(X Wq (X Wk)^T / sqrt(D)) X Wv           self attention
 *   H      = softmax(X Hq (Hist Hk)^T / sqrt(D)) Hist Hv          history attention
 *   C      = [S | H]                                              l x 2D
 *
 * Denoiser: condition embeddings (plus a learned per-position query offset)
 * attend over C(R_t) to give the expected representation E of R_{t-1}. A
 * candidate's score is the mean positionwise cosine between E and the
 * candidate's own contextual encoding; probabilities are a softmax of
 * score * exp(logit_scale) / tau over the candidate set.
 *
 * Evaluator: per-position MLP on C (tanh hidden layer) gives a positive
 * feedback probability; utility is sum_k p_k / log2(k + 1), k from 1.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "dcdr/autodiff.hpp"
#include "dcdr/errors.hpp"
#include "dcdr/forward.hpp"
#include "dcdr/permutation.hpp"
#include "dcdr/random.hpp"
#include "dcdr/session.hpp"

namespace dcdr {

using ad::Mat;
using ad::Param;
using ad::Var;

struct ModelConfig {
  std::size_t dim = 32;
  std::size_t hidden = 64;
  double tau = 0.1;
  double init_range = 0.05;
  double position_scale = 0.05;  // multiplier on the evaluator's sinusoidal encodings
};

/// Item id -> embedding row. Row 0 is the shared out-of-vocabulary slot.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<ItemId> ids) {
    for (ItemId id : ids) add(id);
  }

  void add(ItemId id) {
    if (index_.contains(id)) return;
    ids_.push_back(id);
    index_.emplace(id, static_cast<int>(ids_.size()));
  }

  int row(ItemId id) const {
    auto it = index_.find(id);
    return it == index_.end() ? 0 : it->second;
  }

  std::vector<int> rows(std::span<const ItemId> ids) const {
    std::vector<int> out;
    out.reserve(ids.size());
    for (ItemId id : ids) out.push_back(row(id));
    return out;
  }

  std::size_t table_rows() const noexcept { return ids_.size() + 1; }
  const std::vector<ItemId>& ids() const noexcept { return ids_; }

 private:
  std::vector<ItemId> ids_;
  std::unordered_map<ItemId, int> index_;
};

namespace detail {

inline Mat uniform_init(Eigen::Index r, Eigen::Index c, double range, Rng& rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = (2.0 * uniform01(rng) - 1.0) * range;
  return m;
}

}  // namespace detail

struct ContextEncoder {
  Param item_emb;
  Param self_q, self_k, self_v;
  Param hist_q, hist_k, hist_v;
  bool positional = false;
  double position_scale = 0.05;

  ContextEncoder() = default;
  ContextEncoder(const std::string& prefix, std::size_t vocab_rows, std::size_t dim, bool use_positions,
                 double range, Rng& rng)
      : positional(use_positions) {
    const auto d = static_cast<Eigen::Index>(dim);
    item_emb = Param(prefix + "item_embeddings", detail::uniform_init(static_cast<Eigen::Index>(vocab_rows), d, range, rng));
    self_q = Param(prefix + "self_attn.query", detail::uniform_init(d, d, range, rng));
    self_k = Param(prefix + "self_attn.key", detail::uniform_init(d, d, range, rng));
    self_v = Param(prefix + "self_attn.value", detail::uniform_init(d, d, range, rng));
    hist_q = Param(prefix + "history_attn.query", detail::uniform_init(d, d, range, rng));
    hist_k = Param(prefix + "history_attn.key", detail::uniform_init(d, d, range, rng));
    hist_v = Param(prefix + "history_attn.value", detail::uniform_init(d, d, range, rng));
  }

  std::size_t dim() const { return static_cast<std::size_t>(item_emb.value.cols()); }

  std::vector<Param*> params() { return {&item_emb, &self_q, &self_k, &self_v, &hist_q, &hist_k, &hist_v}; }
};

struct ModelParams {
  ContextEncoder encoder;
  Param condition_emb;  // 2 x 2D, row = feedback label
  Param query_pos;      // kMaxOutputLength x 2D
  Param logit_scale;    // 1 x 1, multiplier exp(logit_scale)
  double tau = 0.1;

  ModelParams() = default;
  ModelParams(std::size_t vocab_rows, const ModelConfig& cfg, Rng& rng)
      : encoder("denoiser.", vocab_rows, cfg.dim, false, cfg.init_range, rng), tau(cfg.tau) {
    if (!(cfg.tau > 0.0)) throw InvalidArgument("temperature must be positive");
    const auto d2 = static_cast<Eigen::Index>(2 * cfg.dim);
    condition_emb = Param("denoiser.condition_embeddings", detail::uniform_init(2, d2, cfg.init_range, rng));
    query_pos = Param("denoiser.query_positions",
                      detail::uniform_init(static_cast<Eigen::Index>(kMaxOutputLength), d2, cfg.init_range, rng));
    logit_scale = Param("denoiser.logit_scale", Mat::Zero(1, 1));
  }

  std::vector<Param*> params() {
    auto p = encoder.params();
    p.insert(p.end(), {&condition_emb, &query_pos, &logit_scale});
    return p;
  }
};

struct EvaluatorParams {
  ContextEncoder encoder;
  Param w1, b1, w2, b2;

  EvaluatorParams() = default;
  EvaluatorParams(std::size_t vocab_rows, const ModelConfig& cfg, Rng& rng)
      : encoder("evaluator.", vocab_rows, cfg.dim, true, cfg.init_range, rng) {
    encoder.position_scale = cfg.position_scale;
    const auto d2 = static_cast<Eigen::Index>(2 * cfg.dim);
    const auto h = static_cast<Eigen::Index>(cfg.hidden);
    w1 = Param("evaluator.mlp.w1", detail::uniform_init(d2, h, cfg.init_range, rng));
    b1 = Param("evaluator.mlp.b1", Mat::Zero(1, h));
    w2 = Param("evaluator.mlp.w2", detail::uniform_init(h, 1, cfg.init_range, rng));
    b2 = Param("evaluator.mlp.b2", Mat::Zero(1, 1));
  }

  std::vector<Param*> params() {
    auto p = encoder.params();
    p.insert(p.end(), {&w1, &b1, &w2, &b2});
    return p;
  }
};

inline void zero_grads(std::span<Param* const> ps) {
  for (Param* p : ps) p->zero_grad();
}

inline Mat sinusoidal_positions(std::size_t length, std::size_t dim) {
  Mat pe(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(dim));
  for (std::size_t k = 0; k < length; ++k)
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) =
          i % 2 == 0 ? std::sin(static_cast<double>(k) * freq) : std::cos(static_cast<double>(k) * freq);
    }
  return pe;
}

/// History keys/values, shared by every list encoded within one graph.
struct HistoryMemory {
  Var keys, values;
  bool empty() const { return !keys.valid(); }
};

inline HistoryMemory encode_history(ad::Graph& g, ContextEncoder& enc, const Vocabulary& vocab,
                                    std::span<const ItemId> history) {
  if (history.empty()) return {};
  const auto rows = vocab.rows(history);
  const Var h = g.lookup(enc.item_emb, rows);
  return {g.matmul(h, g.param(enc.hist_k)), g.matmul(h, g.param(enc.hist_v))};
}

/// Contextual encoding (l x 2D) of the list given by embedding rows.
inline Var encode_rows(ad::Graph& g, ContextEncoder& enc, std::span<const int> rows, const HistoryMemory& mem) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(enc.dim()));
  Var x = g.lookup(enc.item_emb, rows);
  if (enc.positional) x = g.add(x, g.constant(enc.position_scale * sinusoidal_positions(rows.size(), enc.dim())));
  const Var q = g.matmul(x, g.param(enc.self_q));
  const Var k = g.matmul(x, g.param(enc.self_k));
  const Var v = g.matmul(x, g.param(enc.self_v));
  const Var attn = g.softmax_rows(g.scale(g.matmul_bt(q, k), inv_sqrt_d));
  const Var self_out = g.add(x, g.matmul(attn, v));
  Var hist_out;
  if (mem.empty()) {
    hist_out = g.constant(Mat::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(enc.dim())));
  } else {
    const Var hq = g.matmul(x, g.param(enc.hist_q));
    const Var ha = g.softmax_rows(g.scale(g.matmul_bt(hq, mem.keys), inv_sqrt_d));
    hist_out = g.matmul(ha, mem.values);
  }
  return g.concat_cols(self_out, hist_out);
}

/// Per-position contextual vectors (l x 2D) for `seq` with `history`.
inline Mat encode_context(const ContextEncoder& enc, const Vocabulary& vocab, const ItemSequence& seq,
                          std::span<const ItemId> history) {
  ad::Graph g(false);
  auto& e = const_cast<ContextEncoder&>(enc);  // non-recording graph never writes grads
  const auto mem = encode_history(g, e, vocab, history);
  const auto items = seq.items();
  const auto rows = vocab.rows(items);
  return g.value(encode_rows(g, e, rows, mem));
}

inline Mat encode_context(const ModelParams& p, const Vocabulary& vocab, const ItemSequence& seq,
                          std::span<const ItemId> history) {
  return encode_context(p.encoder, vocab, seq, history);
}

namespace detail {

inline void check_condition(const ItemSequence& rt, const ConditionSequence& c) {
  if (c.size() != rt.size())
    throw InvalidArgument("condition length " + std::to_string(c.size()) + " differs from list length " +
                          std::to_string(rt.size()));
  if (rt.size() > kMaxOutputLength) throw CapacityError("list longer than the positional query table");
}

/// Expected representation of R_{t-1}: condition queries attending over C(R_t).
inline Var expected_representation(ad::Graph& g, ModelParams& p, Var context, const ConditionSequence& c) {
  std::vector<int> pos(c.size());
  for (std::size_t k = 0; k < c.size(); ++k) pos[k] = static_cast<int>(k);
  const Var queries = g.add(g.lookup(p.condition_emb, c.labels()), g.lookup(p.query_pos, pos));
  const double inv = 1.0 / std::sqrt(static_cast<double>(g.value(context).cols()));
  const Var attn = g.softmax_rows(g.scale(g.matmul_bt(queries, context), inv));
  return g.matmul(attn, context);
}

inline Var logit_multiplier(ad::Graph& g, ModelParams& p) { return g.scale(g.exp(g.param(p.logit_scale)), 1.0 / p.tau); }

/// For each position of `cand`, the row of `rt` holding the same base slot.
inline std::vector<int> row_mapping(const ItemSequence& rt, const ItemSequence& cand) {
  if (cand.size() != rt.size() || cand.base_items() != rt.base_items())
    throw InvalidArgument("denoise support candidate is not over the same candidates as R_t");
  std::vector<int> out(cand.size());
  for (std::size_t k = 0; k < cand.size(); ++k) {
    const auto it = std::find(rt.positions().begin(), rt.positions().end(), cand.positions()[k]);
    if (it == rt.positions().end())
      throw InvalidArgument("permutation support candidate is not a rearrangement of R_t");
    out[k] = static_cast<int>(it - rt.positions().begin());
  }
  std::vector<bool> used(out.size(), false);
  for (int r : out) {
    if (used[r]) throw InvalidArgument("permutation support candidate repeats an item");
    used[r] = true;
  }
  return out;
}

}  // namespace detail

/// log p_theta(candidate | R_t, c) over the permutation-level support (n x 1).
inline Var perm_log_probs(ad::Graph& g, ModelParams& p, const Vocabulary& vocab, const ItemSequence& rt,
                          const ConditionSequence& c, std::span<const ItemSequence> support,
                          std::span<const ItemId> history) {
  if (support.empty()) throw InvalidArgument("denoise support is empty");
  detail::check_condition(rt, c);
  const auto mem = encode_history(g, p.encoder, vocab, history);
  const auto items = rt.items();
  const Var context = encode_rows(g, p.encoder, vocab.rows(items), mem);
  const Var expected = detail::expected_representation(g, p, context, c);
  // No positional signal in the encoder: a rearranged list encodes to rearranged rows.
  std::vector<Var> scores;
  scores.reserve(support.size());
  for (const auto& cand : support) {
    const auto map = detail::row_mapping(rt, cand);
    scores.push_back(g.mean(g.cosine_rows(expected, g.gather_rows(context, map))));
  }
  return g.log_softmax(g.mul_scalar(g.stack(scores), detail::logit_multiplier(g, p)));
}

/// Per-position log p_theta over the l_s base slots (each l_s x 1).
inline std::vector<Var> token_log_probs(ad::Graph& g, ModelParams& p, const Vocabulary& vocab,
                                        const ItemSequence& rt, const ConditionSequence& c,
                                        std::span<const ItemId> history) {
  detail::check_condition(rt, c);
  const auto mem = encode_history(g, p.encoder, vocab, history);
  const auto items = rt.items();
  const auto rows = vocab.rows(items);
  const Var context = encode_rows(g, p.encoder, rows, mem);
  const Var expected = detail::expected_representation(g, p, context, c);
  const Var mult = detail::logit_multiplier(g, p);
  const auto& base = rt.base_items();
  std::vector<Var> out;
  for (std::size_t k = 0; k < rt.size(); ++k) {
    const int kk = static_cast<int>(k);
    const Var target = g.gather_rows(expected, std::span<const int>(&kk, 1));
    std::vector<Var> scores;
    for (std::size_t j = 0; j < base.size(); ++j) {
      std::vector<int> sub = rows;
      sub[k] = vocab.row(base[j]);
      const Var ctx = sub == rows ? context : encode_rows(g, p.encoder, sub, mem);
      scores.push_back(g.mean(g.cosine_rows(target, g.gather_rows(ctx, std::span<const int>(&kk, 1)))));
    }
    out.push_back(g.log_softmax(g.mul_scalar(g.stack(scores), mult)));
  }
  return out;
}

namespace detail {

inline std::vector<double> exp_column(const Mat& logp) {
  std::vector<double> out(static_cast<std::size_t>(logp.rows()));
  for (Eigen::Index i = 0; i < logp.rows(); ++i) out[i] = std::exp(logp(i, 0));
  return out;
}

}  // namespace detail

/// p_theta(R_{t-1} | R_t, c) over `support` (perm op).
inline Categorical<ItemSequence> denoise_distribution(const ModelParams& p, const Vocabulary& vocab,
                                                      const ItemSequence& rt, const ConditionSequence& c,
                                                      std::span<const ItemSequence> support,
                                                      std::span<const ItemId> history) {
  ad::Graph g(false);
  const Var lp = perm_log_probs(g, const_cast<ModelParams&>(p), vocab, rt, c, support, history);
  return {std::vector<ItemSequence>(support.begin(), support.end()), detail::exp_column(g.value(lp))};
}

/// Per-position p_theta over base slots (token op).
inline std::vector<Categorical<std::size_t>> denoise_token_distribution(const ModelParams& p, const Vocabulary& vocab,
                                                                        const ItemSequence& rt,
                                                                        const ConditionSequence& c,
                                                                        std::span<const ItemId> history) {
  ad::Graph g(false);
  const auto lps = token_log_probs(g, const_cast<ModelParams&>(p), vocab, rt, c, history);
  std::vector<Categorical<std::size_t>> out;
  for (const Var& lp : lps) {
    Categorical<std::size_t> cat;
    for (std::size_t j = 0; j < rt.base_items().size(); ++j) cat.support.push_back(j);
    cat.probs = detail::exp_column(g.value(lp));
    out.push_back(std::move(cat));
  }
  return out;
}

/// KL(q || p) over a shared support; 0 log(0/p) = 0.
template <typename T>
double kl_loss(const Categorical<T>& q, const Categorical<T>& p) {
  if (q.support != p.support) throw InvalidArgument("kl_loss: supports differ");
  double v = 0.0;
  for (std::size_t i = 0; i < q.probs.size(); ++i)
    if (q.probs[i] > 0.0) v += q.probs[i] * std::log(q.probs[i] / p.probs[i]);
  return v;
}

/// One denoising training example.
struct DenoiseExample {
  ItemSequence rt;
  ItemSequence r0;
  std::size_t t = 1;
  ConditionSequence condition;
  std::vector<ItemId> history;
};

/// Loss graph for one example against an explicit target over perm_support(rt).
inline Var perm_example_loss(ad::Graph& g, ModelParams& p, const Vocabulary& vocab, const DenoiseExample& ex,
                             std::span<const double> target) {
  const auto support = perm_support(ex.rt);
  const Var lp = perm_log_probs(g, p, vocab, ex.rt, ex.condition, support, ex.history);
  return g.kl(target, lp);
}

inline Var token_example_loss(ad::Graph& g, ModelParams& p, const Vocabulary& vocab, const DenoiseExample& ex,
                              const std::vector<Categorical<std::size_t>>& target) {
  const auto lps = token_log_probs(g, p, vocab, ex.rt, ex.condition, ex.history);
  std::vector<Var> kls;
  for (std::size_t k = 0; k < lps.size(); ++k) kls.push_back(g.kl(target[k].probs, lps[k]));
  return g.average(kls);
}

namespace detail {

template <typename Kernel>
Var batch_loss(ad::Graph& g, ModelParams& p, const Vocabulary& vocab, std::span<const DenoiseExample> batch,
               const Kernel& tm) {
  if (batch.empty()) throw InvalidArgument("denoising loss: empty batch");
  std::vector<Var> losses;
  for (const auto& ex : batch) {
    if constexpr (std::is_same_v<Kernel, PermTransitionModel>) {
      const auto post = posterior_perm(ex.rt, ex.r0, ex.t, tm);
      losses.push_back(perm_example_loss(g, p, vocab, ex, post.probs));
    } else {
      losses.push_back(token_example_loss(g, p, vocab, ex, posterior_token(ex.rt, ex.r0, ex.t, tm)));
    }
  }
  const Var loss = g.average(losses);
  if (!std::isfinite(g.scalar(loss)))
    throw NumericalError("non-finite denoising loss " + std::to_string(g.scalar(loss)) + " over a batch of " +
                         std::to_string(batch.size()) + " examples (first session t=" +
                         std::to_string(batch.front().t) + ")");
  return loss;
}

}  // namespace detail

/// Mean KL between forward posterior and model over the batch, no gradients.
template <typename Kernel>
double model_loss(const ModelParams& p, const Vocabulary& vocab, std::span<const DenoiseExample> batch,
                  const Kernel& tm) {
  ad::Graph g(false);
  return g.scalar(detail::batch_loss(g, const_cast<ModelParams&>(p), vocab, batch, tm));
}

/// Mean KL over the batch; gradients land in each Param::grad (zeroed first).
template <typename Kernel>
double model_gradients(ModelParams& p, const Vocabulary& vocab, std::span<const DenoiseExample> batch,
                       const Kernel& tm) {
  ad::Graph g;
  const Var loss = detail::batch_loss(g, p, vocab, batch, tm);
  zero_grads(p.params());
  g.backward(loss);
  return g.scalar(loss);
}

// ---------------------------------------------------------------------------
// Evaluator

inline double position_weight(std::size_t k) { return 1.0 / std::log2(static_cast<double>(k) + 2.0); }

/// sum_k score_k / log2(k + 1) with k counted from 1.
inline double rank_weighted_utility(std::span<const double> scores) {
  double u = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) u += position_weight(k) * scores[k];
  return u;
}

struct EvaluatorOutput {
  std::vector<double> probs;
  double utility = 0.0;
};

inline Var evaluator_logits(ad::Graph& g, EvaluatorParams& p, const Vocabulary& vocab, std::span<const ItemId> items,
                            std::span<const ItemId> history) {
  const auto mem = encode_history(g, p.encoder, vocab, history);
  const Var ctx = encode_rows(g, p.encoder, vocab.rows(items), mem);
  const Var hidden = g.tanh(g.add_row(g.matmul(ctx, g.param(p.w1)), g.param(p.b1)));
  return g.add_row(g.matmul(hidden, g.param(p.w2)), g.param(p.b2));
}

inline EvaluatorOutput evaluator_score(const EvaluatorParams& p, const Vocabulary& vocab, const ItemSequence& seq,
                                       std::span<const ItemId> history) {
  ad::Graph g(false);
  const auto items = seq.items();
  const Var z = evaluator_logits(g, const_cast<EvaluatorParams&>(p), vocab, items, history);
  EvaluatorOutput out;
  for (Eigen::Index k = 0; k < g.value(z).rows(); ++k) out.probs.push_back(1.0 / (1.0 + std::exp(-g.value(z)(k, 0))));
  out.utility = rank_weighted_utility(out.probs);
  return out;
}

namespace detail {

inline Var evaluator_batch_loss(ad::Graph& g, EvaluatorParams& p, const Vocabulary& vocab,
                                std::span<const Session> sessions) {
  if (sessions.empty()) throw InvalidArgument("evaluator_loss: no sessions");
  std::vector<Var> losses;
  for (const auto& s : sessions) {
    if (s.feedback.size() != s.displayed.size())
      throw InvalidArgument("session " + std::to_string(s.session_id) + " lacks a label for every position");
    const auto items = s.displayed.items();
    const Var z = evaluator_logits(g, p, vocab, items, s.history);
    losses.push_back(g.bce_with_logits(z, s.feedback.labels()));
  }
  const Var loss = g.average(losses);
  if (!std::isfinite(g.scalar(loss))) throw NumericalError("non-finite evaluator loss");
  return loss;
}

}  // namespace detail

inline double evaluator_loss_value(const EvaluatorParams& p, const Vocabulary& vocab,
                                   std::span<const Session> sessions) {
  ad::Graph g(false);
  return g.scalar(detail::evaluator_batch_loss(g, const_cast<EvaluatorParams&>(p), vocab, sessions));
}

/// Mean per-position BCE over the sessions; gradients land in Param::grad.
inline double evaluator_loss(EvaluatorParams& p, const Vocabulary& vocab, std::span<const Session> sessions) {
  ad::Graph g;
  const Var loss = detail::evaluator_batch_loss(g, p, vocab, sessions);
  zero_grads(p.params());
  g.backward(loss);
  return g.scalar(loss);
}

inline double evaluator_loss(EvaluatorParams& p, const Vocabulary& vocab, const Session& s) {
  return evaluator_loss(p, vocab, std::span<const Session>(&s, 1));
}

}  // namespace dcdr
