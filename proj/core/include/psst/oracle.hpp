#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psst/agents.hpp"
#include "psst/estimators.hpp"

namespace psst {

// A caption problem small enough to enumerate every sequence: V^T <= 64.
// Sequences have fixed length T (no EOS semantics) so the space is a clean
// product. The loss is supplied twice: as a per-sequence scalar and as a
// differentiable function of the emission vectors that agrees with it on
// one-hot inputs (the multilinear extension for tables, the network itself
// for a frozen listener).
struct EnumInstance {
  int vocab_size = 2;
  int length = 1;
  AgentConfig agent_config;
  ad::Tensor scene;  // fixed conditioning input

  std::function<double(std::span<const int>)> seq_loss;
  std::function<ad::Node*(ad::Tape&, const std::vector<TokenEmission>&)>
      dense_loss;
  std::optional<std::vector<int>> reference;

  void validate() const;
  std::size_t sequence_count() const;

  // Loss-table instance; table indexed by the base-V sequence code with the
  // first token most significant.
  static EnumInstance from_table(int vocab_size, int length,
                                 std::vector<double> table,
                                 std::optional<std::vector<int>> reference,
                                 const AgentConfig& agent_config);

  // Frozen one-step listener: loss = -cosine(listener(caption), scene).
  static EnumInstance from_frozen_listener(int vocab_size, int length,
                                           ListenerParams listener,
                                           ad::Tensor listener_scene,
                                           std::optional<std::vector<int>> ref,
                                           const AgentConfig& agent_config);
};

// Exact E[loss] = sum over sequences of p(w) * l(w), with p chained from
// the speaker's per-step distributions under teacher forcing.
double exact_expected_loss(const EnumInstance& instance,
                           SpeakerParams& speaker);

// Gradient of exact_expected_loss w.r.t. every speaker parameter, computed
// by differentiating through the enumerated sum; canonical tensor order,
// flattened.
std::vector<double> exact_gradient(const EnumInstance& instance,
                                   SpeakerParams& speaker);

std::vector<std::string> speaker_coordinate_names(SpeakerParams& speaker);

struct GradientReport {
  EstimatorKind kind = EstimatorKind::kReinforce;
  std::size_t n_samples = 0;
  std::vector<double> exact;
  std::vector<double> mean;
  std::vector<double> std_err;  // sample std / sqrt(n)
  std::vector<double> bias;     // mean - exact

  // Per-coordinate |bias| <= z * std_err (std_err floored at a tiny value
  // so exactly-deterministic estimators do not divide by zero).
  bool unbiasedness_gate(double z = 3.0) const;
  double max_abs_bias() const;
  double mean_variance() const;  // mean per-coordinate sample variance
  std::string to_text(const std::vector<std::string>& names) const;
};

// Runs the configured estimator n_samples times from fixed parameters and
// reports per-coordinate mean, standard error, and bias against the exact
// gradient.
GradientReport estimator_report(const EnumInstance& instance,
                                SpeakerParams& speaker,
                                const EstimatorConfig& config,
                                std::size_t n_samples, Rng& rng);

}  // namespace psst
