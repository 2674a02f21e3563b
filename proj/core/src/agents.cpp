#include "psst/agents.hpp"

#include <algorithm>
#include <cmath>

#include "psst/errors.hpp"

namespace psst {

namespace {

ad::Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in,
                        Rng& rng) {
  ad::Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.numel(); ++i) {
    t[i] = (2.0 * rng.uniform() - 1.0) * bound;
  }
  return t;
}

GruParams init_gru(std::size_t in, std::size_t hidden, Rng& rng) {
  GruParams g;
  g.wz = uniform_init({in, hidden}, in, rng);
  g.uz = uniform_init({hidden, hidden}, hidden, rng);
  g.bz = uniform_init({1, hidden}, hidden, rng);
  g.wr = uniform_init({in, hidden}, in, rng);
  g.ur = uniform_init({hidden, hidden}, hidden, rng);
  g.br = uniform_init({1, hidden}, hidden, rng);
  g.wh = uniform_init({in, hidden}, in, rng);
  g.uh = uniform_init({hidden, hidden}, hidden, rng);
  g.bh = uniform_init({1, hidden}, hidden, rng);
  return g;
}

std::vector<std::pair<std::string, ad::Tensor*>> gru_named(
    const std::string& prefix, GruParams& g) {
  return {
      {prefix + ".wz", &g.wz}, {prefix + ".uz", &g.uz}, {prefix + ".bz", &g.bz},
      {prefix + ".wr", &g.wr}, {prefix + ".ur", &g.ur}, {prefix + ".br", &g.br},
      {prefix + ".wh", &g.wh}, {prefix + ".uh", &g.uh}, {prefix + ".bh", &g.bh},
  };
}

std::vector<ad::NamedTensor> to_records(
    std::vector<std::pair<std::string, ad::Tensor*>> named) {
  std::vector<ad::NamedTensor> out;
  out.reserve(named.size());
  for (auto& [name, tensor] : named) out.push_back({name, *tensor});
  return out;
}

void from_records(const std::vector<ad::NamedTensor>& records,
                  std::vector<std::pair<std::string, ad::Tensor*>> named) {
  if (records.size() != named.size()) {
    throw IoError("checkpoint: record count mismatch");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (records[i].name != named[i].first) {
      throw IoError("checkpoint: expected record '" + named[i].first +
                    "', found '" + records[i].name + "'");
    }
    *named[i].second = records[i].tensor;
  }
}

GruNodes bind_gru(ad::Tape& tape, GruParams& g, bool rg,
                  std::vector<BoundParam>& bindings) {
  auto one = [&](ad::Tensor& t) {
    ad::Node* n = tape.leaf(t, rg);
    bindings.push_back({&t, n});
    return n;
  };
  GruNodes n;
  n.wz = one(g.wz); n.uz = one(g.uz); n.bz = one(g.bz);
  n.wr = one(g.wr); n.ur = one(g.ur); n.br = one(g.br);
  n.wh = one(g.wh); n.uh = one(g.uh); n.bh = one(g.bh);
  return n;
}

}  // namespace

SpeakerParams SpeakerParams::init(const AgentConfig& config, Rng& rng) {
  const auto s = static_cast<std::size_t>(config.scene_dim);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto e = static_cast<std::size_t>(config.embed_dim);
  const auto h = static_cast<std::size_t>(config.hidden_dim);
  SpeakerParams p;
  p.scene_w = uniform_init({s, h}, s, rng);
  p.scene_b = uniform_init({1, h}, s, rng);
  p.embed = uniform_init({v, e}, e, rng);
  p.gru = init_gru(e, h, rng);
  p.head_w = uniform_init({h, v}, h, rng);
  p.head_b = uniform_init({1, v}, h, rng);
  return p;
}

std::vector<std::pair<std::string, ad::Tensor*>>
SpeakerParams::named_tensors() {
  std::vector<std::pair<std::string, ad::Tensor*>> out = {
      {"speaker.scene_enc.w", &scene_w},
      {"speaker.scene_enc.b", &scene_b},
      {"speaker.embed", &embed},
  };
  for (auto& kv : gru_named("speaker.gru", gru)) out.push_back(kv);
  out.push_back({"speaker.head.w", &head_w});
  out.push_back({"speaker.head.b", &head_b});
  return out;
}

std::vector<ad::NamedTensor> SpeakerParams::to_checkpoint() const {
  return to_records(const_cast<SpeakerParams*>(this)->named_tensors());
}

SpeakerParams SpeakerParams::from_checkpoint(
    const std::vector<ad::NamedTensor>& records) {
  SpeakerParams p;
  from_records(records, p.named_tensors());
  return p;
}

ListenerParams ListenerParams::init(const AgentConfig& config, Rng& rng) {
  const auto s = static_cast<std::size_t>(config.scene_dim);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto e = static_cast<std::size_t>(config.embed_dim);
  const auto d = static_cast<std::size_t>(config.hidden_dim);
  ListenerParams p;
  p.embed = uniform_init({v, e}, e, rng);
  p.gru = init_gru(e, d, rng);
  p.scene_w = uniform_init({s, d}, s, rng);
  p.scene_b = uniform_init({1, d}, s, rng);
  return p;
}

std::vector<std::pair<std::string, ad::Tensor*>>
ListenerParams::named_tensors() {
  std::vector<std::pair<std::string, ad::Tensor*>> out = {
      {"listener.embed", &embed},
  };
  for (auto& kv : gru_named("listener.gru", gru)) out.push_back(kv);
  out.push_back({"listener.scene_enc.w", &scene_w});
  out.push_back({"listener.scene_enc.b", &scene_b});
  return out;
}

std::vector<ad::NamedTensor> ListenerParams::to_checkpoint() const {
  return to_records(const_cast<ListenerParams*>(this)->named_tensors());
}

ListenerParams ListenerParams::from_checkpoint(
    const std::vector<ad::NamedTensor>& records) {
  ListenerParams p;
  from_records(records, p.named_tensors());
  return p;
}

void save_params(const std::filesystem::path& file,
                 const std::vector<ad::NamedTensor>& records) {
  ad::save_checkpoint(file, records);
}

ad::Node* gru_step(ad::Tape& tape, const GruNodes& g, ad::Node* x,
                   ad::Node* h) {
  ad::Node* z = tape.sigmoid(tape.add(
      tape.add(tape.matmul(x, g.wz), tape.matmul(h, g.uz)), g.bz));
  ad::Node* r = tape.sigmoid(tape.add(
      tape.add(tape.matmul(x, g.wr), tape.matmul(h, g.ur)), g.br));
  ad::Node* cand = tape.tanh(tape.add(
      tape.add(tape.matmul(x, g.wh), tape.matmul(tape.mul(r, h), g.uh)),
      g.bh));
  // h' = (1 - z) * h + z * cand
  return tape.add(h, tape.mul(z, tape.sub(cand, h)));
}

SpeakerGraph SpeakerGraph::bind(ad::Tape& tape, SpeakerParams& params,
                                bool requires_grad) {
  SpeakerGraph g;
  auto one = [&](ad::Tensor& t) {
    ad::Node* n = tape.leaf(t, requires_grad);
    g.bindings.push_back({&t, n});
    return n;
  };
  g.scene_w = one(params.scene_w);
  g.scene_b = one(params.scene_b);
  g.embed = one(params.embed);
  g.gru = bind_gru(tape, params.gru, requires_grad, g.bindings);
  g.head_w = one(params.head_w);
  g.head_b = one(params.head_b);
  return g;
}

ad::Node* SpeakerGraph::encode_scene(ad::Tape& tape,
                                     const ad::Tensor& scene_in) const {
  ad::Node* x = tape.constant(scene_in);
  return tape.add(tape.matmul(x, scene_w), scene_b);
}

std::pair<CategoricalDist, ad::Node*> SpeakerGraph::step(ad::Tape& tape,
                                                         ad::Node* x,
                                                         ad::Node* h) const {
  ad::Node* h_next = gru_step(tape, gru, x, h);
  ad::Node* logits = tape.add(tape.matmul(h_next, head_w), head_b);
  return {make_dist(tape, logits), h_next};
}

ad::Node* SpeakerGraph::bos_input(ad::Tape& tape) const {
  return tape.row(embed, Vocabulary::kBos);
}

ad::Node* SpeakerGraph::token_input(ad::Tape& tape, int token) const {
  return tape.row(embed, static_cast<std::size_t>(token));
}

ad::Node* SpeakerGraph::emission_input(ad::Tape& tape,
                                       const TokenEmission& e) const {
  // Expected embedding: exact for DENSE, plain lookup for one-hot, and the
  // straight-through binding rides along for ST emissions.
  return tape.matmul(e.vector, embed);
}

ListenerGraph ListenerGraph::bind(ad::Tape& tape, ListenerParams& params,
                                  bool requires_grad) {
  ListenerGraph g;
  auto one = [&](ad::Tensor& t) {
    ad::Node* n = tape.leaf(t, requires_grad);
    g.bindings.push_back({&t, n});
    return n;
  };
  g.embed = one(params.embed);
  g.gru = bind_gru(tape, params.gru, requires_grad, g.bindings);
  g.scene_w = one(params.scene_w);
  g.scene_b = one(params.scene_b);
  return g;
}

ad::Node* ListenerGraph::encode_caption(
    ad::Tape& tape, std::span<const TokenEmission> emissions) const {
  if (emissions.empty()) {
    throw ContractError("listener: empty caption");
  }
  const std::size_t d = scene_b->value.cols();
  ad::Node* h = tape.constant(ad::Tensor({1, d}));
  for (const TokenEmission& e : emissions) {
    ad::Node* x = tape.matmul(e.vector, embed);
    h = gru_step(tape, gru, x, h);
  }
  return h;
}

ad::Node* ListenerGraph::encode_scene(ad::Tape& tape,
                                      const ad::Tensor& scene_in) const {
  ad::Node* x = tape.constant(scene_in);
  return tape.add(tape.matmul(x, scene_w), scene_b);
}

std::vector<int> Caption::token_indices() const {
  std::vector<int> out;
  out.reserve(emissions.size());
  for (const TokenEmission& e : emissions) {
    if (e.token_index) out.push_back(*e.token_index);
  }
  return out;
}

ad::Tensor scene_input(const Scene& scene, int values_per_attribute) {
  const std::size_t a = scene.attributes.size();
  ad::Tensor t({1, a * static_cast<std::size_t>(values_per_attribute)});
  for (std::size_t i = 0; i < a; ++i) {
    t[i * values_per_attribute + scene.attributes[i]] = 1.0;
  }
  return t;
}

std::vector<TokenEmission> emissions_from_tokens(ad::Tape& tape,
                                                 std::span<const int> tokens,
                                                 int vocab_size) {
  std::vector<TokenEmission> out;
  out.reserve(tokens.size());
  for (int tok : tokens) {
    out.push_back({EmissionMode::kOneHot,
                   tape.constant(ad::Tensor::one_hot(
                       static_cast<std::size_t>(vocab_size),
                       static_cast<std::size_t>(tok))),
                   tok});
  }
  return out;
}

Caption speaker_rollout(ad::Tape& tape, const SpeakerGraph& graph,
                        const ad::Tensor& scene_in,
                        const EstimatorConfig& config,
                        const RolloutOptions& options, Rng& rng) {
  config.validate();
  Caption caption;
  if (options.max_len <= 0) return caption;

  PathDecision decision{false};
  if (config.is_psst() && !config.per_token_gate) {
    decision = psst_gate(config.rho, rng);
    caption.relaxed = decision.relaxed;
  }

  ad::Node* h = graph.encode_scene(tape, scene_in);
  ad::Node* x = graph.bos_input(tape);
  std::vector<ad::Node*> log_probs;

  for (int t = 0; t < options.max_len; ++t) {
    auto [dist, h_next] = graph.step(tape, x, h);
    h = h_next;
    if (config.is_psst() && config.per_token_gate) {
      decision = psst_gate(config.rho, rng);
    }
    TokenEmission e = emit_token(tape, dist, config, decision, rng);
    if (e.mode == EmissionMode::kOneHot) {
      log_probs.push_back(tape.log(tape.gather(
          dist.probs, {static_cast<std::size_t>(*e.token_index)})));
    }
    caption.emissions.push_back(e);
    if (options.stop_at_eos && e.mode == EmissionMode::kOneHot &&
        *e.token_index == Vocabulary::kEos) {
      break;
    }
    x = graph.emission_input(tape, e);
  }
  if (!log_probs.empty()) caption.log_prob = tape.add_n(log_probs);
  return caption;
}

ad::Node* speaker_mle_loss(ad::Tape& tape, const SpeakerGraph& graph,
                           const ad::Tensor& scene_in,
                           std::span<const int> reference_tokens) {
  if (reference_tokens.empty()) {
    throw ContractError("speaker_mle_loss: empty reference");
  }
  ad::Node* h = graph.encode_scene(tape, scene_in);
  ad::Node* x = graph.bos_input(tape);
  std::vector<ad::Node*> log_probs;
  for (int tok : reference_tokens) {
    auto [dist, h_next] = graph.step(tape, x, h);
    h = h_next;
    log_probs.push_back(
        tape.log(tape.gather(dist.probs, {static_cast<std::size_t>(tok)})));
    x = graph.token_input(tape, tok);
  }
  return tape.scale(tape.add_n(log_probs),
                    -1.0 / static_cast<double>(log_probs.size()));
}

std::vector<int> beam_decode(SpeakerParams& params, const AgentConfig& config,
                             const ad::Tensor& scene_in, int width,
                             int max_len) {
  if (width < 1) throw ContractError("beam_decode: width must be >= 1");
  if (max_len <= 0) return {};

  ad::Tape tape;
  SpeakerGraph graph = SpeakerGraph::bind(tape, params, false);

  struct Hyp {
    std::vector<int> tokens;
    double log_prob = 0.0;
    ad::Node* hidden = nullptr;
    ad::Node* input = nullptr;
  };
  struct Done {
    std::vector<int> tokens;
    double log_prob = 0.0;
  };

  std::vector<Hyp> live;
  live.push_back(
      {{}, 0.0, graph.encode_scene(tape, scene_in), graph.bos_input(tape)});
  std::vector<Done> completed;

  for (int t = 0; t < max_len && !live.empty(); ++t) {
    struct Cand {
      double log_prob;
      std::size_t hyp;
      int token;
    };
    std::vector<Cand> cands;
    std::vector<std::pair<CategoricalDist, ad::Node*>> stepped;
    stepped.reserve(live.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
      stepped.push_back(graph.step(tape, live[i].input, live[i].hidden));
      const auto& p = stepped[i].first.probs->value;
      for (std::size_t tok = 0; tok < p.numel(); ++tok) {
        cands.push_back(
            {live[i].log_prob + std::log(p[tok]), i, static_cast<int>(tok)});
      }
    }
    const std::size_t keep =
        std::min<std::size_t>(static_cast<std::size_t>(width), cands.size());
    std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                      [](const Cand& a, const Cand& b) {
                        if (a.log_prob != b.log_prob)
                          return a.log_prob > b.log_prob;
                        if (a.hyp != b.hyp) return a.hyp < b.hyp;
                        return a.token < b.token;
                      });
    std::vector<Hyp> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const Cand& cand = cands[c];
      std::vector<int> tokens = live[cand.hyp].tokens;
      tokens.push_back(cand.token);
      if (cand.token == Vocabulary::kEos ||
          static_cast<int>(tokens.size()) == max_len) {
        completed.push_back({std::move(tokens), cand.log_prob});
      } else {
        Hyp h;
        h.tokens = std::move(tokens);
        h.log_prob = cand.log_prob;
        h.hidden = stepped[cand.hyp].second;
        h.input = graph.token_input(tape, cand.token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }

  if (completed.empty()) throw ContractError("beam_decode: no hypotheses");
  const Done* best = &completed[0];
  for (const Done& d : completed) {
    if (d.log_prob > best->log_prob ||
        (d.log_prob == best->log_prob && d.tokens < best->tokens)) {
      best = &d;
    }
  }
  return best->tokens;
}

ad::Node* listener_score(ad::Tape& tape, const ListenerGraph& graph,
                         std::span<const TokenEmission> emissions,
                         const ad::Tensor& scene_in) {
  ad::Node* cap = graph.encode_caption(tape, emissions);
  ad::Node* scn = graph.encode_scene(tape, scene_in);
  return tape.cosine(cap, scn);
}

}  // namespace psst
