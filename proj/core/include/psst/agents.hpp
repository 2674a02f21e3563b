#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psst/checkpoint.hpp"
#include "psst/estimators.hpp"
#include "psst/tape.hpp"
#include "psst/world.hpp"

namespace psst {

struct AgentConfig {
  int vocab_size = 0;
  int scene_dim = 0;   // one-hot-per-attribute concatenation width
  int embed_dim = 16;
  int hidden_dim = 32;  // speaker hidden h == listener embedding d
};

struct GruParams {
  ad::Tensor wz, uz, bz;
  ad::Tensor wr, ur, br;
  ad::Tensor wh, uh, bh;
};

// Speaker phi: scene encoder initializes the recurrent state, a GRU over
// token embeddings produces per-step vocabulary logits.
struct SpeakerParams {
  ad::Tensor scene_w, scene_b;
  ad::Tensor embed;
  GruParams gru;
  ad::Tensor head_w, head_b;

  static SpeakerParams init(const AgentConfig& config, Rng& rng);
  std::vector<std::pair<std::string, ad::Tensor*>> named_tensors();
  std::vector<ad::NamedTensor> to_checkpoint() const;
  static SpeakerParams from_checkpoint(
      const std::vector<ad::NamedTensor>& records);
};

// Listener theta: GRU caption encoder plus a linear scene encoder sharing
// the embedding dimension, scored by cosine.
struct ListenerParams {
  ad::Tensor embed;
  GruParams gru;
  ad::Tensor scene_w, scene_b;

  static ListenerParams init(const AgentConfig& config, Rng& rng);
  std::vector<std::pair<std::string, ad::Tensor*>> named_tensors();
  std::vector<ad::NamedTensor> to_checkpoint() const;
  static ListenerParams from_checkpoint(
      const std::vector<ad::NamedTensor>& records);
};

void save_params(const std::filesystem::path& file,
                 const std::vector<ad::NamedTensor>& records);

// One parameter tensor and its leaf node on a live tape.
struct BoundParam {
  ad::Tensor* tensor;
  ad::Node* node;
};

struct GruNodes {
  ad::Node *wz, *uz, *bz, *wr, *ur, *br, *wh, *uh, *bh;
};

ad::Node* gru_step(ad::Tape& tape, const GruNodes& g, ad::Node* x,
                   ad::Node* h);

struct SpeakerGraph {
  ad::Node *scene_w, *scene_b, *embed, *head_w, *head_b;
  GruNodes gru;
  std::vector<BoundParam> bindings;

  static SpeakerGraph bind(ad::Tape& tape, SpeakerParams& params,
                           bool requires_grad);

  ad::Node* encode_scene(ad::Tape& tape, const ad::Tensor& scene_input) const;
  // One decoder step: previous-token embedding and hidden state to
  // (distribution, next hidden).
  std::pair<CategoricalDist, ad::Node*> step(ad::Tape& tape, ad::Node* x,
                                             ad::Node* h) const;
  ad::Node* bos_input(ad::Tape& tape) const;
  ad::Node* token_input(ad::Tape& tape, int token) const;
  ad::Node* emission_input(ad::Tape& tape, const TokenEmission& e) const;
};

struct ListenerGraph {
  ad::Node *embed, *scene_w, *scene_b;
  GruNodes gru;
  std::vector<BoundParam> bindings;

  static ListenerGraph bind(ad::Tape& tape, ListenerParams& params,
                            bool requires_grad);

  ad::Node* encode_caption(ad::Tape& tape,
                           std::span<const TokenEmission> emissions) const;
  ad::Node* encode_scene(ad::Tape& tape, const ad::Tensor& scene_input) const;
};

// The random sequence emitted by the speaker for one scene.
struct Caption {
  std::vector<TokenEmission> emissions;
  ad::Node* log_prob = nullptr;  // sum of log p over ONE_HOT steps
  bool relaxed = false;          // PSST path decision for this example

  bool empty() const { return emissions.empty(); }
  std::vector<int> token_indices() const;
};

// One-hot-per-attribute scene encoding.
ad::Tensor scene_input(const Scene& scene, int values_per_attribute);

// Wrap a token sequence as constant one-hot emissions (reference captions,
// decoded captions).
std::vector<TokenEmission> emissions_from_tokens(ad::Tape& tape,
                                                 std::span<const int> tokens,
                                                 int vocab_size);

struct RolloutOptions {
  int max_len = 8;
  // Sampled rollouts stop at EOS; relaxed (dense) rollouts always run to
  // max_len. Enumerable instances disable the stop to keep the sequence
  // space a clean product.
  bool stop_at_eos = true;
};

Caption speaker_rollout(ad::Tape& tape, const SpeakerGraph& graph,
                        const ad::Tensor& scene_in,
                        const EstimatorConfig& config,
                        const RolloutOptions& options, Rng& rng);

// Teacher-forced negative log-likelihood, mean over time steps.
ad::Node* speaker_mle_loss(ad::Tape& tape, const SpeakerGraph& graph,
                           const ad::Tensor& scene_in,
                           std::span<const int> reference_tokens);

// Deterministic beam search over log-probabilities; returns the
// highest-scoring completed sequence (EOS-terminated unless max_len hit).
std::vector<int> beam_decode(SpeakerParams& params, const AgentConfig& config,
                             const ad::Tensor& scene_in, int width,
                             int max_len);

// Cosine compatibility of a caption and a scene, in [-1, 1].
ad::Node* listener_score(ad::Tape& tape, const ListenerGraph& graph,
                         std::span<const TokenEmission> emissions,
                         const ad::Tensor& scene_in);

}  // namespace psst
