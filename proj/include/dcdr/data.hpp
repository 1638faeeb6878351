#pragma once

/**
 * Synthetic logged-session generator and CSV ingestion.
 *
 * World: every item has a unit topic vector and a quality offset, every user a
 * preference vector over topics. The previous-stage ranker orders a session's
 * candidates by affinity plus ranker noise, and feedback at position k is
 *
 *   P(positive) = sigmoid(intercept + affinity(u, i) - lambda * maxsim(i, earlier)
 *                         + bias_k + noise * N(0, 1))
 *
 * so an item shown after a near duplicate is suppressed.
 *
 * CSV schema (LF line endings, header row, decimal integers):
 *   sessions.csv   session_id,user_id,position,item_id,feedback
 *   histories.csv  user_id,seq_no,item_id          (seq_no 0 = most recent)
 */

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dcdr/errors.hpp"
#include "dcdr/permutation.hpp"
#include "dcdr/random.hpp"
#include "dcdr/session.hpp"

namespace dcdr {

inline constexpr std::size_t kHistoryCap = 50;

struct SyntheticWorldConfig {
  std::size_t n_users = 100;
  std::size_t n_items = 500;
  std::size_t n_sessions = 2000;
  std::size_t output_length = 6;
  std::size_t n_topics = 8;
  std::vector<double> position_bias;  // empty = 1 / (k + 1)
  double redundancy_penalty = 2.0;    // lambda
  double noise = 0.5;
  double ranker_noise = 1.0;
  double intercept = -0.5;
  double topic_jitter = 0.25;
  double quality_scale = 0.5;     // std of the per-item quality offset
  double preference_scale = 1.0;  // std of user preference entries
  std::size_t history_min = 5;
  std::size_t history_max = 30;
  std::uint64_t seed = 7;

  std::vector<double> bias_vector() const {
    if (!position_bias.empty()) return position_bias;
    std::vector<double> b(output_length);
    for (std::size_t k = 0; k < b.size(); ++k) b[k] = 1.0 / static_cast<double>(k + 1);
    return b;
  }

  void validate() const {
    if (n_users == 0 || n_items == 0 || n_sessions == 0 || n_topics == 0)
      throw InvalidArgument("synthetic world counts must be positive");
    (void)SequenceSpec(output_length, output_length);
    if (n_items < output_length) throw InvalidArgument("n_items must be at least the list length");
    if (!position_bias.empty() && position_bias.size() != output_length)
      throw InvalidArgument("position_bias must have one entry per list position");
    for (double b : position_bias)
      if (!(b >= 0.0 && b <= 1.0)) throw InvalidArgument("position_bias entries must lie in [0, 1]");
    if (redundancy_penalty < 0.0 || noise < 0.0 || ranker_noise < 0.0 || topic_jitter < 0.0 ||
        quality_scale < 0.0 || preference_scale < 0.0)
      throw InvalidArgument("penalty and noise levels must be non-negative");
    if (history_min > history_max) throw InvalidArgument("history_min exceeds history_max");
  }
};

/// Ground-truth latent state of a generated world.
struct SyntheticWorld {
  SyntheticWorldConfig cfg;
  std::vector<std::vector<double>> item_topics;  // index = item id - 1
  std::vector<double> item_quality;
  std::vector<std::vector<double>> user_prefs;
  std::vector<std::vector<ItemId>> histories;  // per user, most recent first

  static double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  }

  double affinity(std::size_t user, ItemId item) const {
    return dot(user_prefs.at(user), item_topics.at(item - 1)) + item_quality.at(item - 1);
  }

  double similarity(ItemId a, ItemId b) const {
    return std::max(0.0, dot(item_topics.at(a - 1), item_topics.at(b - 1)));
  }

  /// Logit of positive feedback at position k, excluding the noise term.
  double feedback_logit(std::size_t user, std::span<const ItemId> list, std::size_t k) const {
    double maxsim = 0.0;
    for (std::size_t j = 0; j < k; ++j) maxsim = std::max(maxsim, similarity(list[j], list[k]));
    return cfg.intercept + affinity(user, list[k]) - cfg.redundancy_penalty * maxsim + cfg.bias_vector().at(k);
  }

  std::vector<int> sample_feedback(std::size_t user, std::span<const ItemId> list, Rng& rng) const {
    std::vector<int> out(list.size());
    for (std::size_t k = 0; k < list.size(); ++k) {
      const double z = feedback_logit(user, list, k) + cfg.noise * standard_normal(rng);
      out[k] = uniform01(rng) < 1.0 / (1.0 + std::exp(-z)) ? 1 : 0;
    }
    return out;
  }

  /// Candidate list for a user (distinct items drawn by softmax affinity),
  /// ordered by affinity plus ranker noise.
  std::vector<ItemId> sample_candidates(std::size_t user, Rng& rng) const {
    std::vector<double> w(item_topics.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(affinity(user, i + 1));
    std::vector<std::pair<double, ItemId>> picked;
    for (std::size_t k = 0; k < cfg.output_length; ++k) {
      const std::size_t i = sample_discrete(rng, w);
      w[i] = 0.0;
      picked.emplace_back(affinity(user, i + 1) + cfg.ranker_noise * standard_normal(rng), i + 1);
    }
    std::stable_sort(picked.begin(), picked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<ItemId> out;
    for (const auto& [score, id] : picked) out.push_back(id);
    return out;
  }
};

inline SyntheticWorld generate_world(const SyntheticWorldConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SyntheticWorld w;
  w.cfg = cfg;
  for (std::size_t i = 0; i < cfg.n_items; ++i) {
    std::vector<double> v(cfg.n_topics);
    for (auto& x : v) x = cfg.topic_jitter * standard_normal(rng);
    v[uniform_index(rng, cfg.n_topics)] += 1.0;
    const double norm = std::sqrt(SyntheticWorld::dot(v, v));
    for (auto& x : v) x /= norm;
    w.item_topics.push_back(std::move(v));
    w.item_quality.push_back(cfg.quality_scale * standard_normal(rng));
  }
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    std::vector<double> p(cfg.n_topics);
    for (auto& x : p) x = cfg.preference_scale * standard_normal(rng);
    w.user_prefs.push_back(std::move(p));
  }
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    const std::size_t len =
        std::min(kHistoryCap, cfg.history_min + uniform_index(rng, cfg.history_max - cfg.history_min + 1));
    std::vector<double> wts(cfg.n_items);
    for (std::size_t i = 0; i < cfg.n_items; ++i) wts[i] = std::exp(2.0 * w.affinity(u, i + 1));
    std::vector<ItemId> h;
    for (std::size_t k = 0; k < len; ++k) h.push_back(sample_discrete(rng, wts) + 1);
    w.histories.push_back(std::move(h));
  }
  return w;
}

/// Logged sessions of a world, in session-time order. Users and item ids are 1-based.
inline std::vector<Session> generate_sessions(const SyntheticWorld& w) {
  Rng rng(w.cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Session> out;
  for (std::size_t s = 0; s < w.cfg.n_sessions; ++s) {
    const std::size_t user = uniform_index(rng, w.cfg.n_users);
    auto items = w.sample_candidates(user, rng);
    auto fb = w.sample_feedback(user, items, rng);
    out.push_back({s + 1, user + 1, w.histories[user], ItemSequence::identity(std::move(items)),
                   ConditionSequence(std::move(fb))});
  }
  return out;
}

struct Dataset {
  std::vector<Session> train;
  std::vector<Session> test;
};

/// Time split: sessions ordered by id, the last `test_fraction` go to test.
inline Dataset split_by_time(std::vector<Session> sessions, double test_fraction = 0.2) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw InvalidArgument("test_fraction must lie in [0, 1)");
  std::stable_sort(sessions.begin(), sessions.end(),
                   [](const Session& a, const Session& b) { return a.session_id < b.session_id; });
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(sessions.size())));
  Dataset d;
  const auto cut = sessions.begin() + static_cast<std::ptrdiff_t>(sessions.size() - n_test);
  d.train.assign(sessions.begin(), cut);
  d.test.assign(cut, sessions.end());
  return d;
}

inline Dataset generate_synthetic(const SyntheticWorldConfig& cfg) {
  return split_by_time(generate_sessions(generate_world(cfg)));
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kSessionsHeader = "session_id,user_id,position,item_id,feedback";
inline constexpr const char* kHistoriesHeader = "user_id,seq_no,item_id";

/// Writes sessions.csv and histories.csv into `dir` (created if missing).
inline void write_sessions_csv(const std::filesystem::path& dir, std::span<const Session> sessions) {
  std::filesystem::create_directories(dir);
  std::map<std::uint64_t, const std::vector<ItemId>*> histories;
  std::ofstream s(dir / "sessions.csv", std::ios::binary);
  if (!s) throw Error("cannot write " + (dir / "sessions.csv").string());
  s << kSessionsHeader << '\n';
  for (const auto& sess : sessions) {
    const auto [it, fresh] = histories.emplace(sess.user_id, &sess.history);
    if (!fresh && *it->second != sess.history)
      throw IntegrityError("user " + std::to_string(sess.user_id) + " has conflicting histories");
    const auto items = sess.displayed.items();
    if (sess.feedback.size() != items.size())
      throw IntegrityError("session " + std::to_string(sess.session_id) + " has mismatched feedback length");
    for (std::size_t k = 0; k < items.size(); ++k)
      s << sess.session_id << ',' << sess.user_id << ',' << k << ',' << items[k] << ',' << sess.feedback[k] << '\n';
  }
  std::ofstream h(dir / "histories.csv", std::ios::binary);
  if (!h) throw Error("cannot write " + (dir / "histories.csv").string());
  h << kHistoriesHeader << '\n';
  for (const auto& [user, hist] : histories)
    for (std::size_t k = 0; k < hist->size(); ++k) h << user << ',' << k << ',' << (*hist)[k] << '\n';
}

namespace detail {

/// Splits a CSV file into integer rows, checking the header and column count.
inline std::vector<std::vector<std::uint64_t>> read_int_csv(const std::filesystem::path& path,
                                                            const std::string& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::size_t ncols = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
  std::vector<std::vector<std::uint64_t>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != header) throw ParseError(path.filename().string() + ": expected header '" + header + "'", 1, 1);
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::uint64_t> row;
    std::size_t start = 0;
    for (std::size_t col = 1;; ++col) {
      const std::size_t end = std::min(line.find(',', start), line.size());
      if (col > ncols)
        throw ParseError(path.filename().string() + ": too many fields", lineno, start + 1);
      std::uint64_t v = 0;
      const char* b = line.data() + start;
      const char* e = line.data() + end;
      const auto res = std::from_chars(b, e, v);
      if (b == e || res.ec != std::errc() || res.ptr != e)
        throw ParseError(path.filename().string() + ": field " + std::to_string(col) + " is not a non-negative integer",
                         lineno, start + 1);
      row.push_back(v);
      if (end == line.size()) break;
      start = end + 1;
    }
    if (row.size() != ncols)
      throw ParseError(path.filename().string() + ": expected " + std::to_string(ncols) + " fields, got " +
                           std::to_string(row.size()),
                       lineno, line.size() + 1);
    row.push_back(lineno);  // trailing entry carries the line number
    rows.push_back(std::move(row));
  }
  if (lineno == 0) throw ParseError(path.filename().string() + ": missing header", 1, 1);
  return rows;
}

}  // namespace detail

/// Loads sessions (ordered by session_id) with their users' histories.
inline std::vector<Session> load_sessions_csv(const std::filesystem::path& sessions_path,
                                              const std::filesystem::path& histories_path) {
  std::map<std::uint64_t, std::map<std::uint64_t, ItemId>> hist;
  for (const auto& r : detail::read_int_csv(histories_path, kHistoriesHeader)) {
    if (!hist[r[0]].emplace(r[1], r[2]).second)
      throw IntegrityError("histories.csv line " + std::to_string(r[3]) + ": duplicate (user_id, seq_no)");
  }
  struct Pending {
    std::uint64_t user;
    std::size_t first_line;
    std::map<std::uint64_t, std::pair<ItemId, int>> rows;
  };
  std::map<std::uint64_t, Pending> pending;
  for (const auto& r : detail::read_int_csv(sessions_path, kSessionsHeader)) {
    const std::string where = "sessions.csv line " + std::to_string(r[5]);
    if (r[4] > 1) throw IntegrityError(where + ": feedback " + std::to_string(r[4]) + " is not 0 or 1");
    auto [it, fresh] = pending.try_emplace(r[0], Pending{r[1], r[5], {}});
    if (it->second.user != r[1]) throw IntegrityError(where + ": user_id differs within session " + std::to_string(r[0]));
    if (!it->second.rows.emplace(r[2], std::make_pair(r[3], static_cast<int>(r[4]))).second)
      throw IntegrityError(where + ": duplicate (session_id, position)");
  }
  std::vector<Session> out;
  for (auto& [sid, p] : pending) {
    std::vector<ItemId> items;
    std::vector<int> fb;
    std::uint64_t expect = 0;
    for (const auto& [pos, v] : p.rows) {
      if (pos != expect++)
        throw IntegrityError("session " + std::to_string(sid) + " (from line " + std::to_string(p.first_line) +
                             "): positions are not contiguous from 0");
      items.push_back(v.first);
      fb.push_back(v.second);
    }
    if (items.size() > kMaxOutputLength)
      throw IntegrityError("session " + std::to_string(sid) + " has " + std::to_string(items.size()) +
                           " positions, more than " + std::to_string(kMaxOutputLength));
    std::vector<ItemId> h;
    if (auto hit = hist.find(p.user); hit != hist.end()) {
      std::uint64_t seq = 0;
      for (const auto& [no, item] : hit->second) {
        if (no != seq++)
          throw IntegrityError("histories.csv: seq_no of user " + std::to_string(p.user) + " not contiguous from 0");
        if (h.size() < kHistoryCap) h.push_back(item);
      }
    }
    out.push_back({sid, p.user, std::move(h), ItemSequence::identity(std::move(items)), ConditionSequence(std::move(fb))});
  }
  return out;
}

inline std::vector<Session> load_sessions_dir(const std::filesystem::path& dir) {
  return load_sessions_csv(dir / "sessions.csv", dir / "histories.csv");
}

}  // namespace dcdr
