#include "minielm/online.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "minielm/common.hpp"
#include "minielm/rng.hpp"

namespace minielm::online {

using policy::PolicyParameters;
using rewards::PreferencePair;
using rewards::RewardVector;
using rewards::ScoredRewrite;

std::vector<double> smooth_series(std::span<const double> values, int window) {
  if (window < 1) throw std::invalid_argument("smooth_series: window must be >= 1");
  std::vector<double> out(values.size());
  double running = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    running += values[i];
    if (i >= static_cast<size_t>(window)) running -= values[i - static_cast<size_t>(window)];
    const auto count = std::min<size_t>(i + 1, static_cast<size_t>(window));
    out[i] = running / static_cast<double>(count);
  }
  return out;
}

namespace {

void check_deps(const OnlineDeps& deps) {
  if (!deps.vocab || !deps.index || !deps.judge || !deps.scorer || !deps.catalog) {
    throw std::invalid_argument("online: missing dependency");
  }
  if (deps.profiles.empty()) throw std::invalid_argument("online: empty profile pool");
}

ScoredRewrite score_rewrite(const policy::TokenSequence& tokens, const std::string& query_text,
                            const search::RetrievalResult& baseline, const OnlineDeps& deps,
                            const OnlineConfig& config, const feedback::UserProfile& profile,
                            uint64_t judge_seed) {
  ScoredRewrite scored;
  scored.tokens = tokens;
  scored.text = deps.vocab->decode_to_text(tokens.ids);
  const auto retrieved = deps.index->retrieve(scored.text, config.top_k);

  scored.reward.relevance =
      rewards::relevance_score(*deps.scorer, query_text, retrieved, *deps.catalog);
  scored.reward.diversity = rewards::diversity_score(baseline, retrieved);
  const auto engagement =
      feedback::engagement_scores(*deps.judge, profile, query_text, retrieved, *deps.catalog,
                                  config.judge_temperature, judge_seed);
  scored.reward.click = engagement.click;
  scored.reward.add2cart = engagement.add_to_cart;
  scored.reward.purchase = engagement.purchase;
  scored.aggregate = rewards::aggregate_reward(scored.reward, config.weights);
  return scored;
}

}  // namespace

OnlineResult run_online(PolicyParameters params, const OnlineDeps& deps,
                        const OnlineConfig& config, const RunLogSink& log_sink,
                        const EvalSink& eval_sink, const CheckpointSink& checkpoint_sink) {
  check_deps(deps);
  if (deps.train_queries.empty()) throw DataError("run_online: empty training query stream");
  if (config.batch_size < 1) throw std::invalid_argument("run_online: batch_size must be >= 1");
  if (config.eval_every < 1) throw std::invalid_argument("run_online: eval_every must be >= 1");

  training::TrainingConfig opt_config;
  opt_config.learning_rate = config.learning_rate;
  opt_config.clip_norm = config.clip_norm;
  opt_config.optimizer = config.optimizer;
  opt_config.momentum = config.momentum;
  training::Optimizer optimizer(opt_config, params.config);

  // The printed DPO objective is reference-free; the optional variant freezes
  // the incoming policy as the reference.
  std::optional<PolicyParameters> reference;
  if (config.dpo_use_reference) reference = params;

  OnlineResult result{std::move(params), {}};
  evalmetrics::OnlineEvalConfig eval_config;
  eval_config.top_k = config.top_k;
  eval_config.weights = config.weights;
  eval_config.seed = derive_seed(config.seed, "online_eval");
  eval_config.judge_temperature = config.judge_temperature;
  eval_config.jobs = config.jobs;

  Rng query_rng(derive_seed(config.seed, "query_stream"));

  auto run_iteration = [&](int iteration) {
    IterationRecord record;
    record.iteration = iteration;

    std::vector<PreferencePair> pairs;
    double chosen_sum = 0.0;
    double rejected_sum = 0.0;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto& query = deps.train_queries[query_rng.index(deps.train_queries.size())];
      record.query_ids.push_back(query.query_id);
      const auto prompt = policy::make_prompt(*deps.vocab, query.text);
      const auto baseline = deps.index->retrieve(query.text, config.top_k);
      const auto& profile =
          deps.profiles[derive_seed(config.seed, "profile/" + query.query_id,
                                    static_cast<uint64_t>(iteration)) %
                        deps.profiles.size()];

      const uint64_t tag = static_cast<uint64_t>(iteration) * 1000 + static_cast<uint64_t>(b);
      const auto rewrite_a = policy::sample_rewrite(
          result.params, prompt, config.temperature, derive_seed(config.seed, "rewrite_a", tag));
      const auto rewrite_b = policy::sample_rewrite(
          result.params, prompt, config.temperature, derive_seed(config.seed, "rewrite_b", tag));

      const auto scored_a = score_rewrite(rewrite_a, query.text, baseline, deps, config, profile,
                                          derive_seed(config.seed, "judge_a", tag));
      const auto scored_b = score_rewrite(rewrite_b, query.text, baseline, deps, config, profile,
                                          derive_seed(config.seed, "judge_b", tag));
      record.rewrites.push_back(scored_a.text);
      record.rewrites.push_back(scored_b.text);
      record.reward_vectors.push_back(scored_a.reward);
      record.reward_vectors.push_back(scored_b.reward);

      auto pair = rewards::make_preference_pair(query.text, prompt, scored_a, scored_b,
                                                derive_seed(config.seed, "tie", tag));
      if (!pair || pair->tie) {
        ++record.tie_count;
        continue;
      }
      chosen_sum += pair->chosen.aggregate;
      rejected_sum += pair->rejected.aggregate;
      pairs.push_back(std::move(*pair));
    }

    if (!pairs.empty()) {
      auto report = training::dpo_loss(result.params, pairs, config.beta,
                                       reference ? &*reference : nullptr);
      if (!std::isfinite(report.loss)) {
        throw DivergenceError("run_online: non-finite DPO loss at iteration " +
                              std::to_string(iteration));
      }
      optimizer.step(result.params, report.gradient);
      record.loss = report.loss;
      record.grad_norm = report.grad_norm;
      record.pairs_used = static_cast<int>(pairs.size());
      result.state.chosen_aggregate.push_back(chosen_sum / static_cast<double>(pairs.size()));
      result.state.rejected_aggregate.push_back(rejected_sum / static_cast<double>(pairs.size()));
      result.state.dpo_loss.push_back(report.loss);
    } else {
      result.state.chosen_aggregate.push_back(0.0);
      result.state.rejected_aggregate.push_back(0.0);
      result.state.dpo_loss.push_back(0.0);
    }
    result.state.tie_counts.push_back(record.tie_count);
    result.state.iterations_completed = iteration;

    if (log_sink) log_sink(record);

    if (iteration % config.eval_every == 0 && !deps.eval_queries.empty()) {
      const auto report = evalmetrics::online_eval(result.params, *deps.vocab, deps.eval_queries,
                                                   *deps.index, *deps.judge, *deps.scorer,
                                                   deps.profiles, *deps.catalog, eval_config);
      result.state.evaluations.emplace_back(iteration, report);
      if (eval_sink) eval_sink(iteration, report);
      if (checkpoint_sink) checkpoint_sink(iteration, result.params);
    }
  };

  for (int iteration = 1; iteration <= config.iterations; ++iteration) {
    try {
      run_iteration(iteration);
    } catch (const std::exception&) {
      // Judge/scorer hard failures and divergence abort with a state
      // checkpoint so the run can be inspected.
      if (checkpoint_sink) checkpoint_sink(iteration, result.params);
      throw;
    }
  }
  return result;
}

std::vector<TraceRow> trace_query(const std::string& query_text,
                                  std::span<const std::pair<std::string, PolicyParameters>> checkpoints,
                                  const OnlineDeps& deps, const OnlineConfig& config) {
  check_deps(deps);
  if (checkpoints.empty()) throw std::invalid_argument("trace_query: no checkpoints");
  const int vocab_size = checkpoints.front().second.config.vocab_size;
  for (const auto& [name, params] : checkpoints) {
    if (params.config.vocab_size != vocab_size) {
      throw DataError("trace_query: checkpoint '" + name + "' uses a different vocabulary");
    }
  }

  const auto prompt = policy::make_prompt(*deps.vocab, query_text);
  const auto baseline = deps.index->retrieve(query_text, config.top_k);
  const auto& profile = deps.profiles[derive_seed(config.seed, "trace_profile") % deps.profiles.size()];

  std::vector<TraceRow> rows;
  for (const auto& [name, params] : checkpoints) {
    const auto rewrite = policy::greedy_decode(params, prompt);
    auto scored = score_rewrite(rewrite, query_text, baseline, deps, config, profile,
                                derive_seed(config.seed, "trace_judge/" + name));
    TraceRow row;
    row.checkpoint_name = name;
    row.rewrite = scored.text;
    row.reward = scored.reward;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace minielm::online
