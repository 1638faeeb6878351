// dcdr: command line front end for data generation, training, reranking,
// evaluation, kernel analysis and parameter sweeps.
//
// Exit codes: 0 success, 1 runtime or data error, 2 usage error.

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "dcdr/chain_analysis.hpp"
#include "dcdr/checkpoint.hpp"
#include "dcdr/data.hpp"
#include "dcdr/engine.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dcdr;

namespace {

/// JSON config files for CLI11. Top-level keys set options of the selected
/// subcommand; an object named after that subcommand may hold them instead.
/// Sections for other subcommands are ignored.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return echo(*app, default_also).dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    const auto selected = root_->get_subcommands();
    if (selected.empty()) return {};
    const std::string name = selected.front()->get_name();
    std::vector<CLI::ConfigItem> out;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it->is_object()) {
        if (it.key() == name) flatten(*it, {name}, out);
        continue;
      }
      flatten(json{{it.key(), *it}}, {name}, out);
    }
    return out;
  }

  static json echo(const CLI::App& app, bool default_also = true) {
    json j = json::object();
    for (const CLI::Option* opt : app.get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames()[0];
      if (name == "help" || name == "config") continue;
      if (opt->get_type_size() == 0) {
        j[name] = opt->count() > 0;
        continue;
      }
      std::vector<std::string> vals = opt->count() ? opt->results() : std::vector<std::string>{};
      if (vals.empty() && default_also && !opt->get_default_str().empty()) vals = {opt->get_default_str()};
      if (vals.empty()) continue;
      if (vals.size() == 1 && opt->get_items_expected_max() <= 1) {
        j[name] = typed(vals[0]);
      } else {
        json arr = json::array();
        for (const auto& v : vals) arr.push_back(typed(v));
        j[name] = arr;
      }
    }
    return j;
  }

 private:
  static json typed(const std::string& s) {
    std::int64_t i = 0;
    if (auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), i); ec == std::errc() && p == s.data() + s.size())
      return i;
    double d = 0.0;
    if (auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), d); ec == std::errc() && p == s.data() + s.size())
      return d;
    if (s == "true") return true;
    if (s == "false") return false;
    return s;
  }

  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConversionError("config values must be scalars or arrays of scalars");
  }

  static void flatten(const json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it->is_object()) throw CLI::ConversionError("unexpected nested object '" + it.key() + "' in config");
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array())
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(*it));
      out.push_back(std::move(item));
    }
  }

  const CLI::App* root_;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void echo_config(const CLI::App& sub, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "config.echo.json", JsonConfig::echo(sub).dump(2) + "\n");
}

/// DIR/train and DIR/test when present, otherwise DIR itself.
std::vector<Session> load_split(const fs::path& dir, const std::string& split) {
  if (fs::exists(dir / split / "sessions.csv")) return load_sessions_dir(dir / split);
  if (fs::exists(dir / "sessions.csv")) return load_sessions_dir(dir);
  throw InvalidArgument("no sessions.csv under " + dir.string() + " or " + (dir / split).string());
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

// ---------------------------------------------------------------------------
// Option groups shared by several subcommands

void add_world_options(CLI::App* sub, SyntheticWorldConfig& w, double& test_fraction) {
  sub->add_option("--users", w.n_users, "Number of users")->capture_default_str();
  sub->add_option("--items", w.n_items, "Number of items")->capture_default_str();
  sub->add_option("--sessions", w.n_sessions, "Number of sessions")->capture_default_str();
  sub->add_option("--length", w.output_length, "Displayed list length l_o")->capture_default_str();
  sub->add_option("--topics", w.n_topics, "Number of latent topics")->capture_default_str();
  sub->add_option("--position-bias", w.position_bias, "Per-position logit bias (default 1/(k+1))")->delimiter(',');
  sub->add_option("--lambda", w.redundancy_penalty, "Redundancy penalty")->capture_default_str();
  sub->add_option("--noise", w.noise, "Feedback logit noise")->capture_default_str();
  sub->add_option("--ranker-noise", w.ranker_noise, "Upstream ranker noise")->capture_default_str();
  sub->add_option("--intercept", w.intercept, "Feedback logit intercept")->capture_default_str();
  sub->add_option("--topic-jitter", w.topic_jitter, "Item spread around its topic")->capture_default_str();
  sub->add_option("--quality-scale", w.quality_scale, "Item quality scale")->capture_default_str();
  sub->add_option("--preference-scale", w.preference_scale, "User preference scale")->capture_default_str();
  sub->add_option("--history-min", w.history_min, "Minimum history length")->capture_default_str();
  sub->add_option("--history-max", w.history_max, "Maximum history length")->capture_default_str();
  sub->add_option("--test-fraction", test_fraction, "Fraction of the latest sessions held out")->capture_default_str();
  sub->add_option("--seed", w.seed, "World seed")->capture_default_str();
}

struct TrainOpts {
  ModelConfig model;
  TrainConfig train;
  std::string optimizer = "adam";
  std::string op = "perm";

  void finish() {
    train.optimizer = parse_optimizer(optimizer);
    train.op = parse_noise_op(op);
    train.validate();
  }
};

void add_train_options(CLI::App* sub, TrainOpts& t) {
  sub->add_option("--dim", t.model.dim, "Embedding size D")->capture_default_str();
  sub->add_option("--hidden", t.model.hidden, "Evaluator MLP hidden size")->capture_default_str();
  sub->add_option("--tau", t.model.tau, "Denoiser softmax temperature")->capture_default_str();
  sub->add_option("--init-range", t.model.init_range, "Uniform init half-width")->capture_default_str();
  sub->add_option("--position-scale", t.model.position_scale, "Evaluator positional encoding scale")
      ->capture_default_str();
  sub->add_option("--epochs", t.train.epochs, "Training epochs")->capture_default_str();
  sub->add_option("--batch", t.train.batch_size, "Batch size")->capture_default_str();
  sub->add_option("--lr", t.train.learning_rate, "Denoiser learning rate")->capture_default_str();
  sub->add_option("--evaluator-lr", t.train.evaluator_learning_rate, "Evaluator learning rate")
      ->capture_default_str();
  sub->add_option("--optimizer", t.optimizer, "adam or sgd")->check(CLI::IsMember({"adam", "sgd"}))
      ->capture_default_str();
  sub->add_option("--op", t.op, "Noising operation")->check(CLI::IsMember({"perm", "token"}))->capture_default_str();
  sub->add_option("--beta", t.train.schedule.beta, "Noise rate beta")->capture_default_str();
  sub->add_option("--diffusion-steps", t.train.schedule.steps, "Diffusion steps T")->capture_default_str();
  sub->add_option("--seed", t.train.seed, "Run seed")->capture_default_str();
}

struct InferOpts {
  std::size_t beam = 6;
  std::optional<std::size_t> steps;
  double epsilon = 1e-3;
  bool no_early_stop = false;
  std::size_t top_m = 4;
  std::vector<int> mask;

  InferenceConfig make(const Checkpoint& ck) const {
    InferenceConfig ic;
    ic.beam = beam;
    ic.steps = steps.value_or(ck.train.schedule.steps);
    ic.epsilon = epsilon;
    ic.early_stop = !no_early_stop;
    ic.op = ck.train.op;
    ic.token_top_m = top_m;
    if (!mask.empty()) {
      ic.policy = ConditionPolicy::kMask;
      ic.condition_mask = mask;
    }
    ic.validate();
    return ic;
  }
};

void add_infer_options(CLI::App* sub, InferOpts& o) {
  sub->add_option("--beam", o.beam, "Beam size K")->capture_default_str();
  sub->add_option("--steps", o.steps, "Reverse steps (default: the checkpoint's T)");
  sub->add_option("--epsilon", o.epsilon, "Early-stop likelihood improvement threshold")->capture_default_str();
  sub->add_flag("--no-early-stop", o.no_early_stop, "Always run every reverse step");
  sub->add_option("--top-m", o.top_m, "Token-op joint assignments tried per candidate")->capture_default_str();
  sub->add_option("--condition", o.mask, "Explicit condition mask, e.g. 1,1,0,1 (default all positive)")
      ->delimiter(',');
}

// ---------------------------------------------------------------------------
// Diagnostics

json sequence_json(const ItemSequence& seq, NoiseOp op) {
  json j = {{"items", seq.items()}, {"positions", seq.positions()}};
  if (op == NoiseOp::kPerm) j["rank"] = rank(seq.positions());
  return j;
}

json diagnostics_json(const RerankResult& r, NoiseOp op, std::optional<std::uint64_t> session_id = {}) {
  json j;
  if (session_id) j["session_id"] = *session_id;
  j["output"] = r.output.items();
  j["steps_executed"] = r.steps_executed;
  j["early_stopped"] = r.early_stopped;
  j["likelihoods"] = r.likelihoods;
  json steps = json::array();
  for (const auto& st : r.trace) {
    json beam = json::array();
    for (const auto& c : st.beam) {
      auto cj = sequence_json(c.seq, op);
      cj["log_prob"] = c.log_prob;
      beam.push_back(cj);
    }
    steps.push_back({{"step", st.step}, {"likelihood", st.likelihood}, {"beam", beam}});
  }
  j["trace"] = steps;
  j["utilities"] = r.utilities;
  j["chosen"] = r.chosen;
  return j;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

struct Comparison {
  EvalSummary logged, pointwise, dcdr;
  BootstrapResult vs_logged, vs_pointwise;
};

Comparison compare(Checkpoint& ck, std::span<const Session> test, const InferenceConfig& ic, std::size_t threads,
                   std::size_t resamples, std::uint64_t seed) {
  Comparison c;
  c.logged = evaluate_generator(test, [](const Session& s) { return s.displayed; }, threads);
  c.pointwise = evaluate_generator(
      test, [&](const Session& s) { return pointwise_greedy(ck.evaluator, ck.vocab, s.displayed, s.history); },
      threads);
  c.dcdr = evaluate_generator(
      test,
      [&](const Session& s) { return rerank(ck.denoiser, ck.evaluator, ck.vocab, s.displayed, s.history, ic).output; },
      threads);
  c.vs_logged = paired_bootstrap(c.dcdr.per_session_ndcg3, c.logged.per_session_ndcg3, resamples, seed);
  c.vs_pointwise = paired_bootstrap(c.dcdr.per_session_ndcg3, c.pointwise.per_session_ndcg3, resamples, seed);
  return c;
}

Checkpoint to_checkpoint(TrainedModels& m, const TrainOpts& t, std::size_t length, std::uint64_t step) {
  Checkpoint ck;
  ck.output_length = length;
  ck.model = t.model;
  ck.train = t.train;
  ck.vocab = m.vocab;
  ck.denoiser = m.denoiser;
  ck.evaluator = m.evaluator;
  ck.seed = t.train.seed;
  ck.step = step;
  return ck;
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenData {
  SyntheticWorldConfig world;
  double test_fraction = 0.2;
  std::string out;

  void run(const CLI::App& sub) const {
    const auto w = generate_world(world);
    const auto d = split_by_time(generate_sessions(w), test_fraction);
    write_sessions_csv(fs::path(out) / "train", d.train);
    write_sessions_csv(fs::path(out) / "test", d.test);
    echo_config(sub, out);
    std::printf("wrote %zu train and %zu test sessions to %s\n", d.train.size(), d.test.size(), out.c_str());
  }
};

struct Train {
  TrainOpts opts;
  InferOpts infer;
  std::string data, out;
  std::size_t threads = 1;
  bool skip_eval = false;

  void run(const CLI::App& sub) {
    opts.finish();
    Checkpoint probe;
    probe.train = opts.train;
    (void)infer.make(probe);
    const auto train = load_split(data, "train");
    std::vector<Session> test;
    if (!skip_eval && fs::exists(fs::path(data) / "test" / "sessions.csv")) test = load_sessions_dir(fs::path(data) / "test");
    fs::create_directories(out);
    echo_config(sub, out);
    std::ofstream metrics(fs::path(out) / "metrics.csv", std::ios::binary);
    metrics << "epoch,mean_loss,evaluator_loss,eval_auc,eval_ndcg3\n";
    const std::size_t length = train.front().displayed.size();
    const std::size_t per_epoch = (train.size() + opts.train.batch_size - 1) / opts.train.batch_size;
    auto models = train_models(train, opts.model, opts.train, [&](const EpochStats& st, TrainedModels& m) {
      auto ck = to_checkpoint(m, opts, length, st.epoch * per_epoch);
      std::string auc = "", ndcg = "";
      if (!test.empty()) {
        const auto ic = infer.make(ck);
        const auto ev = evaluate_generator(
            test,
            [&](const Session& s) { return rerank(ck.denoiser, ck.evaluator, ck.vocab, s.displayed, s.history, ic).output; },
            threads);
        auc = fmt(ev.auc);
        ndcg = fmt(ev.ndcg3);
      }
      metrics << st.epoch << ',' << fmt(st.mean_loss) << ',' << fmt(st.evaluator_loss) << ',' << auc << ',' << ndcg
              << '\n';
      metrics.flush();
      save_checkpoint(fs::path(out) / ("checkpoint_epoch_" + std::to_string(st.epoch) + ".json"), ck);
      std::printf("epoch %zu loss %.6f evaluator %.6f", st.epoch, st.mean_loss, st.evaluator_loss);
      if (!test.empty()) std::printf(" test auc %.4f ndcg@3 %.4f", std::stod(auc), std::stod(ndcg));
      std::printf(" skipped %zu\n", st.skipped);
    });
    auto ck = to_checkpoint(models, opts, length, opts.train.epochs * per_epoch);
    save_checkpoint(fs::path(out) / "checkpoint.json", ck);
  }
};

struct Rerank {
  InferOpts infer;
  std::string checkpoint, data, session, out, diagnostics;
  std::size_t threads = 1;

  void run(const CLI::App& sub) {
    auto ck = load_checkpoint(checkpoint);
    const auto ic = infer.make(ck);
    if (!session.empty()) {
      std::ifstream in(session, std::ios::binary);
      if (!in) throw InvalidArgument("cannot read session file " + session);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ParseError(std::string("session file is not valid JSON: ") + e.what(), 1);
      }
      if (!j.contains("items")) throw InvalidArgument("session JSON needs an \"items\" array");
      const auto items = j.at("items").get<std::vector<ItemId>>();
      const auto history = j.value("history", std::vector<ItemId>{});
      const auto r = rerank(ck.denoiser, ck.evaluator, ck.vocab, ItemSequence::identity(items), history, ic);
      const auto d = diagnostics_json(r, ic.op).dump(2);
      if (out.empty())
        std::cout << d << '\n';
      else
        write_text(out, d + "\n");
      return;
    }
    const auto sessions = load_split(data, "test");
    std::vector<RerankResult> results(sessions.size());
    parallel_for(sessions.size(), threads, [&](std::size_t i) {
      results[i] = rerank(ck.denoiser, ck.evaluator, ck.vocab, sessions[i].displayed, sessions[i].history, ic);
    });
    const fs::path dest = out.empty() ? fs::path("reranked.csv") : fs::path(out);
    std::ostringstream csv;
    csv << "session_id,position,item_id\n";
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      const auto items = results[i].output.items();
      for (std::size_t k = 0; k < items.size(); ++k) csv << sessions[i].session_id << ',' << k << ',' << items[k] << '\n';
    }
    write_text(dest, csv.str());
    if (!diagnostics.empty()) {
      std::ostringstream lines;
      for (std::size_t i = 0; i < sessions.size(); ++i)
        lines << diagnostics_json(results[i], ic.op, sessions[i].session_id).dump() << '\n';
      write_text(diagnostics, lines.str());
    }
    echo_config(sub, dest.has_parent_path() ? dest.parent_path() : fs::path("."));
    std::printf("reranked %zu sessions into %s\n", sessions.size(), dest.string().c_str());
  }
};

struct Evaluate {
  InferOpts infer;
  std::string checkpoint, data, out;
  std::size_t threads = 1, resamples = 2000;
  std::uint64_t seed = 1;

  void run(const CLI::App& sub) {
    auto ck = load_checkpoint(checkpoint);
    const auto test = load_split(data, "test");
    const auto ic = infer.make(ck);
    const auto c = compare(ck, test, ic, threads, resamples, seed);
    std::printf("%-10s %8s %8s\n", "generator", "AUC", "NDCG@3");
    std::printf("%-10s %8.4f %8.4f\n", "logged", c.logged.auc, c.logged.ndcg3);
    std::printf("%-10s %8.4f %8.4f\n", "pointwise", c.pointwise.auc, c.pointwise.ndcg3);
    std::printf("%-10s %8.4f %8.4f\n", "dcdr", c.dcdr.auc, c.dcdr.ndcg3);
    std::printf("dcdr - logged    NDCG@3 %+.4f  p = %.4f\n", c.vs_logged.mean_difference, c.vs_logged.p_value);
    std::printf("dcdr - pointwise NDCG@3 %+.4f  p = %.4f\n", c.vs_pointwise.mean_difference, c.vs_pointwise.p_value);
    if (!out.empty()) {
      auto row = [](const EvalSummary& e) {
        return json{{"auc", e.auc}, {"ndcg3", e.ndcg3}, {"sessions", e.sessions}, {"undefined_auc", e.undefined_auc}};
      };
      json j = {{"logged", row(c.logged)},
                {"pointwise", row(c.pointwise)},
                {"dcdr", row(c.dcdr)},
                {"bootstrap",
                 {{"resamples", resamples},
                  {"vs_logged", {{"mean_difference", c.vs_logged.mean_difference}, {"p_value", c.vs_logged.p_value}}},
                  {"vs_pointwise",
                   {{"mean_difference", c.vs_pointwise.mean_difference}, {"p_value", c.vs_pointwise.p_value}}}}}};
      write_text(out, j.dump(2) + "\n");
      echo_config(sub, fs::path(out).has_parent_path() ? fs::path(out).parent_path() : fs::path("."));
    }
  }
};

struct AnalyzeChain {
  std::string op = "perm", out;
  std::size_t length = 4, t_max = 200;
  double beta = 0.1, threshold = 1e-3;

  void run(const CLI::App& sub) const {
    const NoiseSchedule sched(beta, 1);
    const ChainReport r = parse_noise_op(op) == NoiseOp::kPerm
                              ? stationary_gap(PermTransitionModel(length, sched), t_max, threshold)
                              : stationary_gap(TokenTransitionModel(length, sched), t_max, threshold);
    fs::create_directories(out);
    std::ostringstream csv;
    csv << "t,tv_distance\n";
    bool monotone = true;
    for (std::size_t i = 0; i < r.tv_curve.size(); ++i) {
      csv << r.tv_curve[i].t << ',' << fmt(r.tv_curve[i].tv) << '\n';
      if (i > 0 && r.tv_curve[i].tv > r.tv_curve[i - 1].tv + 1e-15) monotone = false;
    }
    write_text(fs::path(out) / "tv_curve.csv", csv.str());
    json s = {{"op", op},
              {"length", length},
              {"beta", beta},
              {"t_max", t_max},
              {"threshold", threshold},
              {"doubly_stochastic",
               {{"ok", r.doubly_stochastic.ok},
                {"max_row_deviation", r.doubly_stochastic.max_row_deviation},
                {"max_col_deviation", r.doubly_stochastic.max_col_deviation}}},
              {"ergodic", r.ergodic},
              {"tv_monotone_non_increasing", monotone},
              {"final_tv", r.tv_curve.back().tv},
              {"mixing_step", r.mixing_step ? json(*r.mixing_step) : json(nullptr)}};
    write_text(fs::path(out) / "summary.json", s.dump(2) + "\n");
    echo_config(sub, out);
    std::printf("doubly stochastic %s, ergodic %s, TV monotone %s, TV < %g at t = %s\n",
                r.doubly_stochastic.ok ? "yes" : "no", r.ergodic ? "yes" : "no", monotone ? "yes" : "no", threshold,
                r.mixing_step ? std::to_string(*r.mixing_step).c_str() : "never (within t_max)");
  }
};

struct Sweep {
  TrainOpts opts;
  InferOpts infer;
  std::string checkpoint, data, param, out;
  std::vector<double> values;
  std::size_t threads = 1;

  void run(const CLI::App& sub) {
    opts.finish();
    Checkpoint probe;
    probe.train = opts.train;
    (void)infer.make(probe);
    const auto test = load_split(data, "test");
    std::optional<Checkpoint> fixed;
    if (param != "beta") {
      if (!checkpoint.empty()) {
        fixed = load_checkpoint(checkpoint);
      } else {
        const auto train = load_split(data, "train");
        auto m = train_models(train, opts.model, opts.train);
        fixed = to_checkpoint(m, opts, train.front().displayed.size(), 0);
      }
    }
    std::vector<Session> train;
    if (param == "beta") train = load_split(data, "train");
    std::ostringstream csv;
    csv << param << ",auc,ndcg3\n";
    for (double v : values) {
      Checkpoint ck;
      InferOpts io = infer;
      if (param == "beta") {
        TrainOpts t = opts;
        t.train.schedule = NoiseSchedule(v, opts.train.schedule.steps);
        auto m = train_models(train, t.model, t.train);
        ck = to_checkpoint(m, t, train.front().displayed.size(), 0);
      } else {
        ck = *fixed;
        if (v < 1 || v != std::floor(v)) throw InvalidArgument(param + " values must be positive integers");
        if (param == "steps")
          io.steps = static_cast<std::size_t>(v);
        else
          io.beam = static_cast<std::size_t>(v);
      }
      const auto ic = io.make(ck);
      const auto ev = evaluate_generator(
          test,
          [&](const Session& s) { return rerank(ck.denoiser, ck.evaluator, ck.vocab, s.displayed, s.history, ic).output; },
          threads);
      csv << fmt(v) << ',' << fmt(ev.auc) << ',' << fmt(ev.ndcg3) << '\n';
      std::printf("%s = %g  AUC %.4f  NDCG@3 %.4f\n", param.c_str(), v, ev.auc, ev.ndcg3);
    }
    write_text(out, csv.str());
    echo_config(sub, fs::path(out).has_parent_path() ? fs::path(out).parent_path() : fs::path("."));
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete conditional diffusion reranking"};
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.set_config("--config", "", "JSON config; command-line flags override it");
  app.fallthrough();
  app.require_subcommand(1);

  GenData gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic session dataset (train/ and test/ CSVs)");
  add_world_options(gen_cmd, gen.world, gen.test_fraction);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  Train train;
  auto* train_cmd = app.add_subcommand("train", "Train the denoiser and evaluator");
  add_train_options(train_cmd, train.opts);
  add_infer_options(train_cmd, train.infer);
  train_cmd->add_option("--data", train.data, "Dataset directory")->required();
  train_cmd->add_option("--out", train.out, "Run directory for checkpoints and metrics.csv")->required();
  train_cmd->add_flag("--skip-eval", train.skip_eval, "Do not rerank the test split after each epoch");
  train_cmd->add_option("--threads", train.threads, "Worker threads for evaluation")->capture_default_str();

  Rerank rr;
  auto* rerank_cmd = app.add_subcommand("rerank", "Rerank a dataset or a single session");
  add_infer_options(rerank_cmd, rr.infer);
  rerank_cmd->add_option("--checkpoint", rr.checkpoint, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
  auto* data_opt = rerank_cmd->add_option("--data", rr.data, "Dataset directory (batch mode)");
  auto* session_opt =
      rerank_cmd->add_option("--session", rr.session, "Session JSON {items, history} (debug mode)")->check(CLI::ExistingFile);
  data_opt->excludes(session_opt);
  rerank_cmd->add_option("--out", rr.out, "Output CSV (batch) or diagnostics JSON (single session)");
  rerank_cmd->add_option("--diagnostics", rr.diagnostics, "Batch mode: JSON-lines diagnostics file");
  rerank_cmd->add_option("--threads", rr.threads, "Worker threads")->capture_default_str();

  Evaluate ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Compare logged order, pointwise-greedy and DCDR");
  add_infer_options(eval_cmd, ev.infer);
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--out", ev.out, "Write the comparison as JSON");
  eval_cmd->add_option("--threads", ev.threads, "Worker threads")->capture_default_str();
  eval_cmd->add_option("--resamples", ev.resamples, "Bootstrap resamples")->capture_default_str();
  eval_cmd->add_option("--seed", ev.seed, "Bootstrap seed")->capture_default_str();

  AnalyzeChain ac;
  auto* chain_cmd = app.add_subcommand("analyze-chain", "Check a noising kernel and write its TV-to-uniform curve");
  chain_cmd->add_option("--op", ac.op, "Noising operation")->check(CLI::IsMember({"perm", "token"}))->capture_default_str();
  chain_cmd->add_option("--length", ac.length, "l_o for perm, l_s for token")->capture_default_str();
  chain_cmd->add_option("--beta", ac.beta, "Noise rate beta")->capture_default_str();
  chain_cmd->add_option("--t-max", ac.t_max, "Last step of the TV curve")->capture_default_str();
  chain_cmd->add_option("--threshold", ac.threshold, "Mixing threshold")->capture_default_str();
  chain_cmd->add_option("--out", ac.out, "Output directory")->required();

  Sweep sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Evaluate DCDR over a range of one parameter");
  add_train_options(sweep_cmd, sw.opts);
  add_infer_options(sweep_cmd, sw.infer);
  sweep_cmd->add_option("--checkpoint", sw.checkpoint, "Checkpoint for steps/beam sweeps (trained if absent)")
      ->check(CLI::ExistingFile);
  sweep_cmd->add_option("--data", sw.data, "Dataset directory")->required();
  sweep_cmd->add_option("--param", sw.param, "Parameter to sweep")->required()->check(
      CLI::IsMember({"steps", "beam", "beta"}));
  sweep_cmd->add_option("--values", sw.values, "Comma-separated values")->required()->delimiter(',');
  sweep_cmd->add_option("--out", sw.out, "Output CSV")->required();
  sweep_cmd->add_option("--threads", sw.threads, "Worker threads")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen_cmd) gen.run(*gen_cmd);
    if (*train_cmd) train.run(*train_cmd);
    if (*rerank_cmd) {
      if (rr.data.empty() && rr.session.empty()) throw InvalidArgument("rerank needs --data or --session");
      rr.run(*rerank_cmd);
    }
    if (*eval_cmd) ev.run(*eval_cmd);
    if (*chain_cmd) ac.run(*chain_cmd);
    if (*sweep_cmd) sw.run(*sweep_cmd);
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
