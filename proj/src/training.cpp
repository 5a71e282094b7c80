#include "minielm/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "minielm/common.hpp"
#include "minielm/rng.hpp"

namespace minielm::training {

using policy::ParameterSet;
using policy::PolicyParameters;
using policy::PositionGradient;
using policy::TokenSequence;

std::vector<SftExample> to_sft_examples(std::span<const q2q::DirectedPair> pairs,
                                        const corpus::Vocabulary& vocab) {
  std::vector<SftExample> out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs) {
    SftExample ex;
    ex.prompt = policy::make_prompt(vocab, pair.source_text);
    ex.target.ids = vocab.encode_text(pair.target_text);
    ex.target.ids.push_back(corpus::Vocabulary::kEos);
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

// Contexts for every teacher-forced position of one example, under the given
// context window.
std::vector<std::vector<int32_t>> forced_contexts(const SftExample& ex, int n) {
  std::vector<int32_t> prefix = ex.prompt;
  std::vector<std::vector<int32_t>> contexts;
  contexts.reserve(ex.target.ids.size());
  for (int32_t token : ex.target.ids) {
    contexts.push_back(policy::window_context(prefix, n));
    prefix.push_back(token);
  }
  return contexts;
}

size_t total_positions(std::span<const SftExample> batch) {
  size_t n = 0;
  for (const auto& ex : batch) {
    if (!ex.target.terminal()) {
      throw std::invalid_argument("training target must end with EOS");
    }
    n += ex.target.ids.size();
  }
  return n;
}

}  // namespace

LossReport sft_loss(const PolicyParameters& params, std::span<const SftExample> batch) {
  if (batch.empty()) throw std::invalid_argument("sft_loss: empty batch");
  const size_t positions = total_positions(batch);
  const double inv = 1.0 / static_cast<double>(positions);
  const auto v = static_cast<size_t>(params.config.vocab_size);

  double loss = 0.0;
  std::vector<PositionGradient> grads;
  grads.reserve(positions);
  for (const auto& ex : batch) {
    const auto contexts = forced_contexts(ex, params.config.context_window);
    for (size_t i = 0; i < contexts.size(); ++i) {
      const auto probs = policy::next_token_distribution(params, contexts[i]);
      const auto target = static_cast<size_t>(ex.target.ids[i]);
      loss -= std::log(probs[target]) * inv;
      PositionGradient pg;
      pg.context = contexts[i];
      pg.dlogits.resize(v);
      for (size_t k = 0; k < v; ++k) pg.dlogits[k] = probs[k] * inv;
      pg.dlogits[target] -= inv;
      grads.push_back(std::move(pg));
    }
  }

  LossReport report;
  report.loss = loss;
  report.gradient = policy::backprop(params, grads);
  report.grad_norm = std::sqrt(report.gradient.squared_norm());
  return report;
}

double sft_loss_value(const PolicyParameters& params, std::span<const SftExample> batch) {
  if (batch.empty()) throw std::invalid_argument("sft_loss_value: empty batch");
  const size_t positions = total_positions(batch);
  double loss = 0.0;
  for (const auto& ex : batch) {
    const auto contexts = forced_contexts(ex, params.config.context_window);
    for (size_t i = 0; i < contexts.size(); ++i) {
      const auto probs = policy::next_token_distribution(params, contexts[i]);
      loss -= std::log(probs[static_cast<size_t>(ex.target.ids[i])]);
    }
  }
  return loss / static_cast<double>(positions);
}

namespace {

void check_same_vocab(const PolicyParameters& student, const PolicyParameters& teacher) {
  if (student.config.vocab_size != teacher.config.vocab_size) {
    throw std::invalid_argument("reverse_kl_loss: student and teacher vocabularies differ (" +
                                std::to_string(student.config.vocab_size) + " vs " +
                                std::to_string(teacher.config.vocab_size) + ")");
  }
}

}  // namespace

LossReport reverse_kl_loss(const PolicyParameters& student, const PolicyParameters& teacher,
                           std::span<const SftExample> batch) {
  if (batch.empty()) throw std::invalid_argument("reverse_kl_loss: empty batch");
  check_same_vocab(student, teacher);
  const size_t positions = total_positions(batch);
  const double inv = 1.0 / static_cast<double>(positions);
  const auto v = static_cast<size_t>(student.config.vocab_size);

  double loss = 0.0;
  std::vector<PositionGradient> grads;
  grads.reserve(positions);
  for (const auto& ex : batch) {
    const auto student_contexts = forced_contexts(ex, student.config.context_window);
    const auto teacher_contexts = forced_contexts(ex, teacher.config.context_window);
    for (size_t i = 0; i < student_contexts.size(); ++i) {
      const auto q = policy::next_token_distribution(student, student_contexts[i]);
      const auto p = policy::next_token_distribution(teacher, teacher_contexts[i]);
      // KL(q || p) with the teacher floored inside the log.
      double kl = 0.0;
      std::vector<double> log_ratio(v);
      for (size_t k = 0; k < v; ++k) {
        log_ratio[k] = std::log(q[k]) - std::log(std::max(p[k], kTeacherFloor));
        kl += q[k] * log_ratio[k];
      }
      loss += kl * inv;
      PositionGradient pg;
      pg.context = student_contexts[i];
      pg.dlogits.resize(v);
      for (size_t k = 0; k < v; ++k) pg.dlogits[k] = q[k] * (log_ratio[k] - kl) * inv;
      grads.push_back(std::move(pg));
    }
  }

  LossReport report;
  report.loss = loss;
  report.gradient = policy::backprop(student, grads);
  report.grad_norm = std::sqrt(report.gradient.squared_norm());
  return report;
}

double reverse_kl_loss_value(const PolicyParameters& student, const PolicyParameters& teacher,
                             std::span<const SftExample> batch) {
  if (batch.empty()) throw std::invalid_argument("reverse_kl_loss_value: empty batch");
  check_same_vocab(student, teacher);
  const size_t positions = total_positions(batch);
  double loss = 0.0;
  for (const auto& ex : batch) {
    const auto student_contexts = forced_contexts(ex, student.config.context_window);
    const auto teacher_contexts = forced_contexts(ex, teacher.config.context_window);
    for (size_t i = 0; i < student_contexts.size(); ++i) {
      const auto q = policy::next_token_distribution(student, student_contexts[i]);
      const auto p = policy::next_token_distribution(teacher, teacher_contexts[i]);
      for (size_t k = 0; k < q.size(); ++k) {
        loss += q[k] * (std::log(q[k]) - std::log(std::max(p[k], kTeacherFloor)));
      }
    }
  }
  return loss / static_cast<double>(positions);
}

double dpo_pair_loss(double gap, double beta) {
  // -log sigmoid(beta * gap) = softplus(-beta * gap)
  const double x = -beta * gap;
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

namespace {

struct PairPositions {
  double logprob = 0.0;
  std::vector<std::vector<int32_t>> contexts;
  std::vector<std::vector<double>> probs;
  std::vector<int32_t> targets;
};

PairPositions forced_logprob(const PolicyParameters& params, std::span<const int32_t> prompt,
                             const TokenSequence& response) {
  PairPositions out;
  std::vector<int32_t> prefix(prompt.begin(), prompt.end());
  for (int32_t token : response.ids) {
    auto context = policy::window_context(prefix, params.config.context_window);
    auto probs = policy::next_token_distribution(params, context);
    out.logprob += std::log(probs[static_cast<size_t>(token)]);
    out.contexts.push_back(std::move(context));
    out.probs.push_back(std::move(probs));
    out.targets.push_back(token);
    prefix.push_back(token);
  }
  return out;
}

void check_dpo_batch(std::span<const rewards::PreferencePair> batch) {
  if (batch.empty()) throw std::invalid_argument("dpo_loss: empty batch");
  for (const auto& pair : batch) {
    if (pair.chosen.tokens == pair.rejected.tokens) {
      throw std::invalid_argument("dpo_loss: degenerate pair (chosen equals rejected) for query '" +
                                  pair.query + "'");
    }
    if (!pair.chosen.tokens.terminal() || !pair.rejected.tokens.terminal()) {
      throw std::invalid_argument("dpo_loss: rewrites must end with EOS");
    }
  }
}

double reference_margin(const PolicyParameters* reference, const rewards::PreferencePair& pair) {
  if (!reference) return 0.0;
  const double ref_chosen = policy::sequence_logprob(*reference, pair.prompt, pair.chosen.tokens);
  const double ref_rejected =
      policy::sequence_logprob(*reference, pair.prompt, pair.rejected.tokens);
  return ref_chosen - ref_rejected;
}

}  // namespace

LossReport dpo_loss(const PolicyParameters& params, std::span<const rewards::PreferencePair> batch,
                    double beta, const PolicyParameters* reference) {
  check_dpo_batch(batch);
  if (beta <= 0.0) throw std::invalid_argument("dpo_loss: beta must be > 0");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const auto v = static_cast<size_t>(params.config.vocab_size);

  double loss = 0.0;
  std::vector<PositionGradient> grads;
  for (const auto& pair : batch) {
    const auto chosen = forced_logprob(params, pair.prompt, pair.chosen.tokens);
    const auto rejected = forced_logprob(params, pair.prompt, pair.rejected.tokens);
    const double gap = chosen.logprob - rejected.logprob - reference_margin(reference, pair);
    loss += dpo_pair_loss(gap, beta) * inv_b;

    // dL/dgap = -beta * sigmoid(-beta * gap), then dgap/dlogits is the usual
    // (onehot - p) at chosen positions and its negation at rejected ones.
    const double dgap = -beta / (1.0 + std::exp(beta * gap)) * inv_b;
    auto emit = [&](const PairPositions& side, double sign) {
      for (size_t i = 0; i < side.contexts.size(); ++i) {
        PositionGradient pg;
        pg.context = side.contexts[i];
        pg.dlogits.resize(v);
        const double scale = sign * dgap;
        for (size_t k = 0; k < v; ++k) pg.dlogits[k] = -scale * side.probs[i][k];
        pg.dlogits[static_cast<size_t>(side.targets[i])] += scale;
        grads.push_back(std::move(pg));
      }
    };
    emit(chosen, 1.0);
    emit(rejected, -1.0);
  }

  LossReport report;
  report.loss = loss;
  report.gradient = policy::backprop(params, grads);
  report.grad_norm = std::sqrt(report.gradient.squared_norm());
  return report;
}

double dpo_loss_value(const PolicyParameters& params,
                      std::span<const rewards::PreferencePair> batch, double beta,
                      const PolicyParameters* reference) {
  check_dpo_batch(batch);
  if (beta <= 0.0) throw std::invalid_argument("dpo_loss: beta must be > 0");
  double loss = 0.0;
  for (const auto& pair : batch) {
    const double gap = policy::sequence_logprob(params, pair.prompt, pair.chosen.tokens) -
                       policy::sequence_logprob(params, pair.prompt, pair.rejected.tokens) -
                       reference_margin(reference, pair);
    loss += dpo_pair_loss(gap, beta);
  }
  return loss / static_cast<double>(batch.size());
}

double clip_gradient(ParameterSet& gradient, double clip_norm) {
  const double norm = std::sqrt(gradient.squared_norm());
  if (clip_norm > 0.0 && norm > clip_norm) gradient.scale(clip_norm / norm);
  return norm;
}

Optimizer::Optimizer(const TrainingConfig& config, const policy::PolicyConfig& shape)
    : config_(config),
      momentum_(ParameterSet::zeros_like(shape)),
      second_moment_(ParameterSet::zeros_like(shape)) {
  if (config.learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
}

void Optimizer::step(PolicyParameters& params, const ParameterSet& gradient) {
  if (!gradient.same_shape(params.tensors)) {
    throw std::invalid_argument("optimizer step: gradient shape mismatch");
  }
  if (!gradient.all_finite()) {
    throw DivergenceError("optimizer step: non-finite gradient");
  }
  ParameterSet clipped = gradient;
  clip_gradient(clipped, config_.clip_norm);
  ++step_count_;

  if (config_.optimizer == OptimizerKind::sgd) {
    if (config_.momentum != 0.0) {
      momentum_.scale(config_.momentum);
      momentum_.add_scaled(clipped, 1.0);
      params.tensors.add_scaled(momentum_, -config_.learning_rate);
    } else {
      params.tensors.add_scaled(clipped, -config_.learning_rate);
    }
    return;
  }

  // Adam with bias correction.
  const double b1 = config_.adam_beta1;
  const double b2 = config_.adam_beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));

  std::vector<double>* m_tensors[] = {&momentum_.embedding, &momentum_.hidden_w,
                                      &momentum_.hidden_b, &momentum_.output_w,
                                      &momentum_.output_b};
  std::vector<double>* v_tensors[] = {&second_moment_.embedding, &second_moment_.hidden_w,
                                      &second_moment_.hidden_b, &second_moment_.output_w,
                                      &second_moment_.output_b};
  const std::vector<double>* g_tensors[] = {&clipped.embedding, &clipped.hidden_w,
                                            &clipped.hidden_b, &clipped.output_w,
                                            &clipped.output_b};
  std::vector<double>* p_tensors[] = {&params.tensors.embedding, &params.tensors.hidden_w,
                                      &params.tensors.hidden_b, &params.tensors.output_w,
                                      &params.tensors.output_b};
  for (int t = 0; t < 5; ++t) {
    auto& m = *m_tensors[t];
    auto& vv = *v_tensors[t];
    const auto& g = *g_tensors[t];
    auto& p = *p_tensors[t];
    for (size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      vv[i] = b2 * vv[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = vv[i] / correction2;
      p[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.adam_eps);
    }
  }
}

namespace {

// One SFT training stage: epochs of seeded-shuffled minibatches.
PolicyParameters run_sft_stage(PolicyParameters params, std::span<const SftExample> train,
                               std::span<const SftExample> eval, const TrainingConfig& config,
                               const std::string& stage, const MetricsSink& metrics) {
  Optimizer optimizer(config, params.config);
  Rng shuffle_rng(derive_seed(config.seed, stage + "/shuffle"));
  for (int epoch = 1; epoch <= config.offline_epochs; ++epoch) {
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    double epoch_norm = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<SftExample> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) batch.push_back(train[order[i]]);
      auto report = sft_loss(params, batch);
      if (!std::isfinite(report.loss)) {
        throw DivergenceError(stage + ": non-finite loss at epoch " + std::to_string(epoch));
      }
      optimizer.step(params, report.gradient);
      epoch_loss += report.loss;
      epoch_norm += report.grad_norm;
      ++batches;
    }
    const double eval_xent = eval.empty() ? 0.0 : sft_loss_value(params, eval);
    if (metrics) {
      metrics(stage, epoch, epoch_loss / static_cast<double>(batches),
              epoch_norm / static_cast<double>(batches), eval_xent);
    }
  }
  return params;
}

}  // namespace

OfflineResult train_offline(const policy::PolicyConfig& teacher_cfg,
                            const policy::PolicyConfig& student_cfg,
                            const q2q::Q2QDataset& dataset, const TrainingConfig& config,
                            const corpus::Vocabulary& vocab, const MetricsSink& metrics,
                            const StageSink& stage_sink,
                            const policy::PolicyParameters* resume_teacher,
                            const policy::PolicyParameters* resume_student_sft) {
  if (dataset.train.empty() || dataset.eval.empty()) {
    throw DataError("train_offline: Q2Q dataset needs non-empty train and eval splits");
  }
  const auto train = to_sft_examples(dataset.train, vocab);
  const auto eval = to_sft_examples(dataset.eval, vocab);

  // Stage 1: SFT the teacher.
  PolicyParameters teacher =
      resume_teacher ? *resume_teacher
                     : run_sft_stage(policy::init_params(teacher_cfg, derive_seed(config.seed, "init/teacher")),
                                     train, eval, config, "sft_teacher", metrics);
  if (stage_sink && !resume_teacher) stage_sink("sft_teacher", teacher);

  // Stage 2: SFT the student.
  PolicyParameters student =
      resume_student_sft
          ? *resume_student_sft
          : run_sft_stage(policy::init_params(student_cfg, derive_seed(config.seed, "init/student")),
                          train, eval, config, "sft_student", metrics);
  if (stage_sink && !resume_student_sft) stage_sink("sft_student", student);

  // Stage 3: distill against the frozen teacher.
  Optimizer optimizer(config, student.config);
  Rng shuffle_rng(derive_seed(config.seed, "distill/shuffle"));
  for (int epoch = 1; epoch <= config.distill_epochs; ++epoch) {
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    double epoch_norm = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<SftExample> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) batch.push_back(train[order[i]]);

      auto kd = reverse_kl_loss(student, teacher, batch);
      double loss = kd.loss * config.lambda_kd;
      ParameterSet gradient = kd.gradient;
      gradient.scale(config.lambda_kd);
      if (config.lambda_kd < 1.0) {
        auto sft = sft_loss(student, batch);
        loss += sft.loss * (1.0 - config.lambda_kd);
        gradient.add_scaled(sft.gradient, 1.0 - config.lambda_kd);
      }
      if (!std::isfinite(loss)) {
        throw DivergenceError("distill: non-finite loss at epoch " + std::to_string(epoch));
      }
      optimizer.step(student, gradient);
      epoch_loss += loss;
      epoch_norm += std::sqrt(gradient.squared_norm());
      ++batches;
    }
    const double eval_xent = sft_loss_value(student, eval);
    if (metrics) {
      metrics("distill", epoch, epoch_loss / static_cast<double>(batches),
              epoch_norm / static_cast<double>(batches), eval_xent);
    }
  }
  if (stage_sink) stage_sink("distill", student);

  return OfflineResult{std::move(teacher), std::move(student)};
}

}  // namespace minielm::training
