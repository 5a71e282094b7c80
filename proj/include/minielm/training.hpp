#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "minielm/corpus.hpp"
#include "minielm/policy.hpp"
#include "minielm/q2q.hpp"
#include "minielm/rewards.hpp"

namespace minielm::training {

enum class OptimizerKind : uint8_t { sgd, adam };

struct TrainingConfig {
  double learning_rate = 0.05;
  int batch_size = 16;
  double beta = 0.5;              // DPO inverse-temperature
  int offline_epochs = 30;        // SFT epochs per model
  int distill_epochs = 30;
  int online_iterations = 1000;
  int eval_every = 50;
  uint64_t seed = 42;
  double clip_norm = 1.0;         // global-norm gradient clip
  OptimizerKind optimizer = OptimizerKind::sgd;
  double momentum = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda_kd = 1.0;         // stage-3 mix: 1 = pure reverse KL, 0 = pure SFT
  double sample_temperature = 0.8;
  bool dpo_use_reference = false; // off: the printed reference-free objective
};

struct LossReport {
  double loss = 0.0;
  double grad_norm = 0.0;
  policy::ParameterSet gradient;
};

// One supervised example: prompt ids (query tokens + BOS) and the EOS-
// terminated target sequence.
struct SftExample {
  std::vector<int32_t> prompt;
  policy::TokenSequence target;
};

std::vector<SftExample> to_sft_examples(std::span<const q2q::DirectedPair> pairs,
                                        const corpus::Vocabulary& vocab);

// Mean per-token negative log-likelihood under teacher forcing.
LossReport sft_loss(const policy::PolicyParameters& params, std::span<const SftExample> batch);

// Loss only, no gradient; shared by evaluation paths.
double sft_loss_value(const policy::PolicyParameters& params, std::span<const SftExample> batch);

// Token-level reverse KL D(P_S || P_T) over the full vocabulary at every
// teacher-forced position, averaged over positions. Teacher probabilities are
// floored at kTeacherFloor before the log; the teacher is a constant.
inline constexpr double kTeacherFloor = 1e-12;

LossReport reverse_kl_loss(const policy::PolicyParameters& student,
                           const policy::PolicyParameters& teacher,
                           std::span<const SftExample> batch);
double reverse_kl_loss_value(const policy::PolicyParameters& student,
                             const policy::PolicyParameters& teacher,
                             std::span<const SftExample> batch);

// -log sigmoid(beta * gap); numerically stable softplus form.
double dpo_pair_loss(double gap, double beta);

// L = -(1/B) sum log sigmoid(beta * [log pi(chosen|Q) - log pi(rejected|Q)]).
// With `reference` present the gap uses log-probability margins against the
// frozen reference policy instead.
LossReport dpo_loss(const policy::PolicyParameters& params,
                    std::span<const rewards::PreferencePair> batch, double beta,
                    const policy::PolicyParameters* reference = nullptr);
double dpo_loss_value(const policy::PolicyParameters& params,
                      std::span<const rewards::PreferencePair> batch, double beta,
                      const policy::PolicyParameters* reference = nullptr);

// SGD-with-momentum / Adam with global-norm clipping. Holds the moment state;
// callers serialize updates.
class Optimizer {
 public:
  Optimizer(const TrainingConfig& config, const policy::PolicyConfig& shape);

  // Clips, then updates parameters in place. Non-finite gradients are an error.
  void step(policy::PolicyParameters& params, const policy::ParameterSet& gradient);

 private:
  TrainingConfig config_;
  policy::ParameterSet momentum_;
  policy::ParameterSet second_moment_;
  int64_t step_count_ = 0;
};

// Scales the gradient to global norm `clip_norm` when it exceeds it.
// Returns the pre-clip norm.
double clip_gradient(policy::ParameterSet& gradient, double clip_norm);

using MetricsSink = std::function<void(const std::string& stage, int step, double loss,
                                       double grad_norm, double eval_xentropy)>;
using StageSink = std::function<void(const std::string& stage, const policy::PolicyParameters&)>;

struct OfflineResult {
  policy::PolicyParameters teacher;
  policy::PolicyParameters student;  // MiniELM
};

// Stage 1: SFT the teacher. Stage 2: SFT the student. Stage 3: distill the
// student against the frozen teacher (reverse KL, optionally mixed with SFT
// by lambda_kd). Emits one metrics record per epoch per stage and calls
// stage_sink ("sft_teacher" / "sft_student" / "distill") as each stage
// completes, so an interrupted run keeps its last finished stage.
OfflineResult train_offline(const policy::PolicyConfig& teacher_cfg,
                            const policy::PolicyConfig& student_cfg,
                            const q2q::Q2QDataset& dataset, const TrainingConfig& config,
                            const corpus::Vocabulary& vocab, const MetricsSink& metrics,
                            const StageSink& stage_sink = {},
                            const policy::PolicyParameters* resume_teacher = nullptr,
                            const policy::PolicyParameters* resume_student_sft = nullptr);

}  // namespace minielm::training
