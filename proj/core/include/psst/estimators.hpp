#pragma once

#include <optional>
#include <string>
#include <vector>

#include "psst/rng.hpp"
#include "psst/tape.hpp"

namespace psst {

// The five strategies for propagating gradients through the discrete
// stochastic token layer.
enum class EstimatorKind {
  kReinforce,
  kStMultinomial,
  kStGumbel,
  kPsstMultinomial,
  kPsstGumbel,
};

enum class BaselineKind { kNone, kGreedy, kGroundTruth };

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::kStMultinomial;
  double rho = 0.0;  // relaxed fraction, PSST kinds only
  double tau = 1.0;  // Gumbel-softmax temperature, Gumbel kinds only
  BaselineKind baseline = BaselineKind::kNone;
  // Experimental: draw the relax gate per token instead of per example.
  bool per_token_gate = false;

  bool is_psst() const {
    return kind == EstimatorKind::kPsstMultinomial ||
           kind == EstimatorKind::kPsstGumbel;
  }
  bool is_gumbel() const {
    return kind == EstimatorKind::kStGumbel ||
           kind == EstimatorKind::kPsstGumbel;
  }

  void validate() const;
};

// CLI names: reinforce, st-mn, st-gs, psst-mn, psst-gs.
std::string method_name(EstimatorKind kind);
EstimatorKind method_from_name(const std::string& name);
std::string baseline_name(BaselineKind kind);
BaselineKind baseline_from_name(const std::string& name);

// Per-step distribution over the vocabulary. probs is the softmax of logits
// and lives on the same tape.
struct CategoricalDist {
  ad::Node* logits = nullptr;
  ad::Node* probs = nullptr;

  std::size_t size() const { return probs->value.numel(); }
};

CategoricalDist make_dist(ad::Tape& tape, ad::Node* logits);

enum class EmissionMode { kOneHot, kDense };

// One emitted token position. ONE_HOT carries a one-hot [1, V] vector and
// the sampled index; DENSE carries a full distribution vector. In
// straight-through modes the vector's backward path is bound so gradients
// flow as if the continuous distribution had been emitted.
struct TokenEmission {
  EmissionMode mode = EmissionMode::kOneHot;
  ad::Node* vector = nullptr;
  std::optional<int> token_index;
};

struct PathDecision {
  bool relaxed = false;
};

// Standard Gumbel noise, g = -log(-log(u)) for u in (0, 1).
double gumbel_noise(double u);

// Exact categorical sample via argmax of g_i + log p_i. Probabilities are
// clamped below at 1e-12 before the log.
int gumbel_max_sample(const CategoricalDist& dist, Rng& rng);

// Inverse-CDF categorical sample; one uniform draw.
int multinomial_sample(const CategoricalDist& dist, Rng& rng);

// Differentiable relaxation y_i = exp((log p_i + g_i)/tau) / sum_j(...).
ad::Node* gumbel_softmax_relax(ad::Tape& tape, const CategoricalDist& dist,
                               const std::vector<double>& noise, double tau);

// Bernoulli(rho) relax decision. Exact 0 and 1 short-circuit without
// consuming randomness so the rho=0 and rho=1 reductions share the stream
// of the corresponding ST method.
PathDecision psst_gate(double rho, Rng& rng);

TokenEmission emit_token(ad::Tape& tape, const CategoricalDist& dist,
                         const EstimatorConfig& config,
                         const PathDecision& decision, Rng& rng);

// Score-function surrogate: minimizing it maximizes expected reward. The
// advantage (reward - baseline) scales log_prob_sum as a detached constant,
// so backward yields the score-function gradient estimate.
ad::Node* reinforce_surrogate(ad::Tape& tape, ad::Node* log_prob_sum,
                              double reward, double baseline);

// Context values are rewards computed by the caller; which one is needed
// depends on the baseline kind.
struct BaselineContext {
  std::optional<double> greedy_reward;
  std::optional<double> reference_reward;
};

double baseline_value(BaselineKind kind, const BaselineContext& context);

}  // namespace psst
