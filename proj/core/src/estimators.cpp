#include "psst/estimators.hpp"

#include <algorithm>
#include <cmath>

#include "psst/errors.hpp"

namespace psst {

namespace {

constexpr double kProbFloor = 1e-12;

ad::Node* one_hot_constant(ad::Tape& tape, std::size_t v, int index) {
  return tape.constant(
      ad::Tensor::one_hot(v, static_cast<std::size_t>(index)));
}

}  // namespace

void EstimatorConfig::validate() const {
  if (is_psst() && (rho < 0.0 || rho > 1.0)) {
    throw ConfigError("estimator: rho must lie in [0, 1]");
  }
  if (is_gumbel() && tau <= 0.0) {
    throw ConfigError("estimator: tau must be positive");
  }
}

std::string method_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::kReinforce: return "reinforce";
    case EstimatorKind::kStMultinomial: return "st-mn";
    case EstimatorKind::kStGumbel: return "st-gs";
    case EstimatorKind::kPsstMultinomial: return "psst-mn";
    case EstimatorKind::kPsstGumbel: return "psst-gs";
  }
  throw ContractError("method_name: unknown kind");
}

EstimatorKind method_from_name(const std::string& name) {
  if (name == "reinforce") return EstimatorKind::kReinforce;
  if (name == "st-mn") return EstimatorKind::kStMultinomial;
  if (name == "st-gs") return EstimatorKind::kStGumbel;
  if (name == "psst-mn") return EstimatorKind::kPsstMultinomial;
  if (name == "psst-gs") return EstimatorKind::kPsstGumbel;
  throw ConfigError("unknown method: " + name);
}

std::string baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kNone: return "none";
    case BaselineKind::kGreedy: return "greedy";
    case BaselineKind::kGroundTruth: return "ground-truth";
  }
  throw ContractError("baseline_name: unknown kind");
}

BaselineKind baseline_from_name(const std::string& name) {
  if (name == "none") return BaselineKind::kNone;
  if (name == "greedy") return BaselineKind::kGreedy;
  if (name == "ground-truth") return BaselineKind::kGroundTruth;
  throw ConfigError("unknown baseline: " + name);
}

CategoricalDist make_dist(ad::Tape& tape, ad::Node* logits) {
  CategoricalDist dist;
  dist.logits = logits;
  dist.probs = tape.softmax(
      logits, logits->value.rank() == 2 ? 1 : 0);
  return dist;
}

double gumbel_noise(double u) {
  if (u <= 0.0 || u >= 1.0) {
    throw DomainError("gumbel_noise: u must lie in (0, 1)");
  }
  return -std::log(-std::log(u));
}

int gumbel_max_sample(const CategoricalDist& dist, Rng& rng) {
  const auto& p = dist.probs->value;
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double g = gumbel_noise(rng.uniform_open());
    const double score = g + std::log(std::max(p[i], kProbFloor));
    if (score > best_score) {
      best_score = score;
      best = static_cast<int>(i);
    }
  }
  return best;
}

int multinomial_sample(const CategoricalDist& dist, Rng& rng) {
  const auto& p = dist.probs->value;
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.numel()) - 1;
}

ad::Node* gumbel_softmax_relax(ad::Tape& tape, const CategoricalDist& dist,
                               const std::vector<double>& noise, double tau) {
  if (tau <= 0.0) throw DomainError("gumbel_softmax_relax: tau must be > 0");
  if (noise.size() != dist.size()) {
    throw ShapeError("gumbel_softmax_relax: noise length != vocabulary size");
  }
  // softmax((log p + g) / tau); the noise enters as a constant.
  ad::Node* logp = tape.log(dist.probs);
  ad::Node* g = tape.constant(
      ad::Tensor(dist.probs->value.shape(), std::vector<double>(noise)));
  ad::Node* shifted = tape.add(logp, g);
  ad::Node* scaled = tape.scale(shifted, 1.0 / tau);
  return tape.softmax(scaled, scaled->value.rank() == 2 ? 1 : 0);
}

PathDecision psst_gate(double rho, Rng& rng) {
  if (rho < 0.0 || rho > 1.0) {
    throw DomainError("psst_gate: rho must lie in [0, 1]");
  }
  if (rho <= 0.0) return {false};
  if (rho >= 1.0) return {true};
  return {rng.bernoulli(rho)};
}

TokenEmission emit_token(ad::Tape& tape, const CategoricalDist& dist,
                         const EstimatorConfig& config,
                         const PathDecision& decision, Rng& rng) {
  const std::size_t v = dist.size();
  switch (config.kind) {
    case EstimatorKind::kReinforce: {
      // Sampled one-hot constant; the score-function term carries the
      // gradient, not the emission.
      const int tok = multinomial_sample(dist, rng);
      return {EmissionMode::kOneHot, one_hot_constant(tape, v, tok), tok};
    }
    case EstimatorKind::kPsstMultinomial:
      if (decision.relaxed) {
        // Fully differentiable: the distribution itself is the emission.
        return {EmissionMode::kDense, dist.probs, std::nullopt};
      }
      [[fallthrough]];
    case EstimatorKind::kStMultinomial: {
      const int tok = multinomial_sample(dist, rng);
      ad::Node* st = tape.straight_through(
          dist.probs, ad::Tensor::one_hot(v, static_cast<std::size_t>(tok)));
      return {EmissionMode::kOneHot, st, tok};
    }
    case EstimatorKind::kPsstGumbel:
    case EstimatorKind::kStGumbel: {
      std::vector<double> noise(v);
      for (double& x : noise) x = gumbel_noise(rng.uniform_open());
      ad::Node* relaxed = gumbel_softmax_relax(tape, dist, noise, config.tau);
      if (config.kind == EstimatorKind::kPsstGumbel && decision.relaxed) {
        return {EmissionMode::kDense, relaxed, std::nullopt};
      }
      const auto& y = relaxed->value;
      int tok = 0;
      for (std::size_t i = 1; i < v; ++i) {
        if (y[i] > y[tok]) tok = static_cast<int>(i);
      }
      ad::Node* st = tape.straight_through(
          relaxed, ad::Tensor::one_hot(v, static_cast<std::size_t>(tok)));
      return {EmissionMode::kOneHot, st, tok};
    }
  }
  throw ContractError("emit_token: unknown estimator kind");
}

ad::Node* reinforce_surrogate(ad::Tape& tape, ad::Node* log_prob_sum,
                              double reward, double baseline) {
  if (log_prob_sum->value.numel() != 1) {
    throw ContractError("reinforce_surrogate: log_prob_sum is not scalar");
  }
  return tape.scale(log_prob_sum, baseline - reward);
}

double baseline_value(BaselineKind kind, const BaselineContext& context) {
  switch (kind) {
    case BaselineKind::kNone:
      return 0.0;
    case BaselineKind::kGreedy:
      if (!context.greedy_reward) {
        throw ContractError("baseline_value: greedy rollout reward missing");
      }
      return *context.greedy_reward;
    case BaselineKind::kGroundTruth:
      if (!context.reference_reward) {
        throw ContractError("baseline_value: reference reward missing");
      }
      return *context.reference_reward;
  }
  throw ContractError("baseline_value: unknown kind");
}

}  // namespace psst
