#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "psst/agents.hpp"
#include "support/finite_diff.hpp"

using namespace psst;
using ad::Node;
using ad::Tape;
using ad::Tensor;

namespace {

AgentConfig tiny_config(int vocab = 5, int scene_dim = 4) {
  AgentConfig c;
  c.vocab_size = vocab;
  c.scene_dim = scene_dim;
  c.embed_dim = 3;
  c.hidden_dim = 4;
  return c;
}

SpeakerParams zeroed_speaker(const AgentConfig& c) {
  Rng rng(0);
  SpeakerParams p = SpeakerParams::init(c, rng);
  for (auto& [name, tensor] : p.named_tensors()) tensor->fill(0.0);
  return p;
}

Tensor unit_scene(int dim) {
  Tensor t({1, static_cast<std::size_t>(dim)});
  t[0] = 1.0;
  return t;
}

}  // namespace

TEST_CASE("rollout respects max_len zero") {
  const AgentConfig cfg = tiny_config();
  Rng rng(1);
  SpeakerParams params = SpeakerParams::init(cfg, rng);
  Tape tape;
  SpeakerGraph graph = SpeakerGraph::bind(tape, params, false);
  EstimatorConfig est;
  est.kind = EstimatorKind::kStMultinomial;
  Caption cap = speaker_rollout(tape, graph, unit_scene(cfg.scene_dim), est,
                                {0, true}, rng);
  CHECK(cap.empty());
  CHECK(cap.log_prob == nullptr);
}

TEST_CASE("fully relaxed rollouts are dense and bit-deterministic") {
  const AgentConfig cfg = tiny_config();
  Rng init_rng(2);
  SpeakerParams params = SpeakerParams::init(cfg, init_rng);
  EstimatorConfig est;
  est.kind = EstimatorKind::kPsstMultinomial;
  est.rho = 1.0;

  auto run = [&](std::vector<Tensor>* vectors) {
    Rng rng(3);
    Tape tape;
    SpeakerGraph graph = SpeakerGraph::bind(tape, params, false);
    Caption cap = speaker_rollout(tape, graph, unit_scene(cfg.scene_dim),
                                  est, {6, true}, rng);
    CHECK(cap.relaxed);
    CHECK(cap.log_prob == nullptr);
    CHECK(cap.emissions.size() == 6);  // dense rollouts run to max_len
    for (const TokenEmission& e : cap.emissions) {
      CHECK(e.mode == EmissionMode::kDense);
      CHECK_FALSE(e.token_index.has_value());
      vectors->push_back(e.vector->value);
    }
  };
  std::vector<Tensor> a, b;
  run(&a);
  run(&b);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::memcmp(a[i].data().data(), b[i].data().data(),
                      a[i].numel() * sizeof(double)) == 0);
  }
}

TEST_CASE("dense emissions are valid distributions at every step") {
  const AgentConfig cfg = tiny_config(10, 6);
  EstimatorConfig est;
  est.kind = EstimatorKind::kPsstMultinomial;
  est.rho = 1.0;
  Rng init_rng(4);
  for (int rollout = 0; rollout < 1000; ++rollout) {
    SpeakerParams params = SpeakerParams::init(cfg, init_rng);
    Tape tape;
    SpeakerGraph graph = SpeakerGraph::bind(tape, params, false);
    Rng rng(rollout);
    Tensor scene({1, 6});
    scene[rollout % 6] = 1.0;
    Caption cap =
        speaker_rollout(tape, graph, scene, est, {4, true}, rng);
    for (const TokenEmission& e : cap.emissions) {
      double total = 0.0;
      for (std::size_t i = 0; i < e.vector->value.numel(); ++i) {
        CHECK(e.vector->value[i] > 0.0);
        total += e.vector->value[i];
      }
      CHECK(std::fabs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("sampled rollouts stop at EOS and accumulate log_prob") {
  const AgentConfig cfg = tiny_config();
  SpeakerParams params = zeroed_speaker(cfg);
  // force EOS immediately
  params.head_b[Vocabulary::kEos] = 50.0;
  EstimatorConfig est;
  est.kind = EstimatorKind::kStMultinomial;
  Rng rng(5);
  Tape tape;
  SpeakerGraph graph = SpeakerGraph::bind(tape, params, false);
  Caption cap = speaker_rollout(tape, graph, unit_scene(cfg.scene_dim), est,
                                {8, true}, rng);
  REQUIRE(cap.emissions.size() == 1);
  CHECK(*cap.emissions[0].token_index == Vocabulary::kEos);
  REQUIRE(cap.log_prob != nullptr);
  CHECK(cap.log_prob->value[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("mle loss fixtures") {
  const AgentConfig cfg = tiny_config();
  SUBCASE("forced reference probability one gives zero loss") {
    SpeakerParams params = zeroed_speaker(cfg);
    params.head_b[3] = 60.0;  // token 3 emitted with certainty
    Tape tape;
    SpeakerGraph graph = SpeakerGraph::bind(tape, params, false);
    const std::vector<int> ref{3, 3, 3};
    Node* loss =
        speaker_mle_loss(tape, graph, unit_scene(cfg.scene_dim), ref);
    CHECK(loss->value[0] == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("uniform head at init gives log V per step") {
    SpeakerParams params = zeroed_speaker(cfg);
    Tape tape;
    SpeakerGraph graph = SpeakerGraph::bind(tape, params, false);
    const std::vector<int> ref{1, 4, 2};
    Node* loss =
        speaker_mle_loss(tape, graph, unit_scene(cfg.scene_dim), ref);
    CHECK(loss->value[0] ==
          doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }
  SUBCASE("empty reference is a contract error") {
    SpeakerParams params = zeroed_speaker(cfg);
    Tape tape;
    SpeakerGraph graph = SpeakerGraph::bind(tape, params, false);
    CHECK_THROWS_AS(speaker_mle_loss(tape, graph, unit_scene(cfg.scene_dim),
                                     std::vector<int>{}),
                    ContractError);
  }
}

TEST_CASE("mle loss gradient matches finite differences") {
  const AgentConfig cfg = tiny_config();
  Rng rng(6);
  SpeakerParams params = SpeakerParams::init(cfg, rng);
  const std::vector<int> ref{3, Vocabulary::kEos};
  const Tensor scene = unit_scene(cfg.scene_dim);

  Tape tape;
  SpeakerGraph graph = SpeakerGraph::bind(tape, params, true);
  Node* loss = speaker_mle_loss(tape, graph, scene, ref);
  tape.backward(loss);

  auto f = [&]() {
    Tape t2;
    SpeakerGraph g2 = SpeakerGraph::bind(t2, params, false);
    return speaker_mle_loss(t2, g2, scene, ref)->value[0];
  };
  std::vector<std::pair<Tensor*, const Tensor*>> pairs;
  auto named = params.named_tensors();
  for (std::size_t i = 0; i < named.size(); ++i) {
    pairs.push_back({named[i].second, &graph.bindings[i].node->grad});
  }
  CHECK(test_fd::max_rel_error(f, pairs) < 1e-5);
}

TEST_CASE("beam decoding") {
  const AgentConfig cfg = tiny_config(3, 4);
  Rng rng(7);
  SpeakerParams params = SpeakerParams::init(cfg, rng);
  // scale up the head so distributions are peaked enough to be interesting
  for (std::size_t i = 0; i < params.head_w.numel(); ++i) {
    params.head_w[i] *= 4.0;
  }
  const Tensor scene = unit_scene(cfg.scene_dim);

  SUBCASE("width one equals greedy decoding") {
    const std::vector<int> beam1 = beam_decode(params, cfg, scene, 1, 4);
    // greedy by hand
    Tape tape;
    SpeakerGraph graph = SpeakerGraph::bind(tape, params, false);
    Node* h = graph.encode_scene(tape, scene);
    Node* x = graph.bos_input(tape);
    std::vector<int> greedy;
    for (int t = 0; t < 4; ++t) {
      auto [dist, h2] = graph.step(tape, x, h);
      h = h2;
      int best = 0;
      for (std::size_t i = 1; i < dist.probs->value.numel(); ++i) {
        if (dist.probs->value[i] > dist.probs->value[best]) {
          best = static_cast<int>(i);
        }
      }
      greedy.push_back(best);
      if (best == Vocabulary::kEos) break;
      x = graph.token_input(tape, best);
    }
    CHECK(beam1 == greedy);
  }

  SUBCASE("exhaustive width finds the global argmax sequence") {
    const int max_len = 2;
    const std::vector<int> best = beam_decode(params, cfg, scene, 9, max_len);

    // enumerate every sequence with EOS termination semantics
    Tape tape;
    SpeakerGraph graph = SpeakerGraph::bind(tape, params, false);
    std::vector<std::pair<double, std::vector<int>>> completions;
    std::function<void(Node*, Node*, std::vector<int>, double)> expand =
        [&](Node* x, Node* h, std::vector<int> prefix, double lp) {
          auto [dist, h2] = graph.step(tape, x, h);
          for (int tok = 0; tok < 3; ++tok) {
            std::vector<int> seq = prefix;
            seq.push_back(tok);
            const double lp2 =
                lp + std::log(dist.probs->value[tok]);
            if (tok == Vocabulary::kEos ||
                static_cast<int>(seq.size()) == max_len) {
              completions.push_back({lp2, seq});
            } else {
              expand(graph.token_input(tape, tok), h2, seq, lp2);
            }
          }
        };
    expand(graph.bos_input(tape), graph.encode_scene(tape, scene), {}, 0.0);
    auto best_it = std::max_element(
        completions.begin(), completions.end(),
        [](const auto& a, const auto& b) { return a.first < b.first; });
    CHECK(best == best_it->second);
  }

  SUBCASE("decoding is deterministic") {
    CHECK(beam_decode(params, cfg, scene, 2, 5) ==
          beam_decode(params, cfg, scene, 2, 5));
  }
  SUBCASE("width below one is a contract error") {
    CHECK_THROWS_AS(beam_decode(params, cfg, scene, 0, 4), ContractError);
  }
}

TEST_CASE("listener scoring") {
  const AgentConfig cfg = tiny_config();
  Rng rng(8);
  ListenerParams params = ListenerParams::init(cfg, rng);
  const Tensor scene = unit_scene(cfg.scene_dim);
  const std::vector<int> tokens{3, 4, Vocabulary::kEos};

  SUBCASE("same caption and scene give identical scores") {
    auto score = [&]() {
      Tape tape;
      ListenerGraph graph = ListenerGraph::bind(tape, params, false);
      auto emissions = emissions_from_tokens(tape, tokens, cfg.vocab_size);
      return listener_score(tape, graph, emissions, scene)->value[0];
    };
    const double a = score(), b = score();
    CHECK(std::memcmp(&a, &b, sizeof a) == 0);
  }

  SUBCASE("empty caption is a contract error") {
    Tape tape;
    ListenerGraph graph = ListenerGraph::bind(tape, params, false);
    CHECK_THROWS_AS(
        listener_score(tape, graph, std::vector<TokenEmission>{}, scene),
        ContractError);
  }

  SUBCASE("score is within [-1, 1]") {
    Tape tape;
    ListenerGraph graph = ListenerGraph::bind(tape, params, false);
    auto emissions = emissions_from_tokens(tape, tokens, cfg.vocab_size);
    const double s = listener_score(tape, graph, emissions, scene)->value[0];
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }

  SUBCASE("gradient w.r.t. listener parameters matches finite differences") {
    Tape tape;
    ListenerGraph graph = ListenerGraph::bind(tape, params, true);
    auto emissions = emissions_from_tokens(
        tape, std::vector<int>{3, 4}, cfg.vocab_size);
    Node* score = listener_score(tape, graph, emissions, scene);
    tape.backward(score);
    auto f = [&]() {
      Tape t2;
      ListenerGraph g2 = ListenerGraph::bind(t2, params, false);
      auto e2 =
          emissions_from_tokens(t2, std::vector<int>{3, 4}, cfg.vocab_size);
      return listener_score(t2, g2, e2, scene)->value[0];
    };
    std::vector<std::pair<Tensor*, const Tensor*>> pairs;
    auto named = params.named_tensors();
    for (std::size_t i = 0; i < named.size(); ++i) {
      pairs.push_back({named[i].second, &graph.bindings[i].node->grad});
    }
    CHECK(test_fd::max_rel_error(f, pairs) < 1e-5);
  }
}

TEST_CASE("fully relaxed speaker-listener pass is exactly differentiable") {
  // rho = 1: the whole forward pass is deterministic; end-to-end gradient
  // against finite differences at 1e-4.
  const AgentConfig cfg = tiny_config();
  Rng rng(9);
  SpeakerParams speaker = SpeakerParams::init(cfg, rng);
  ListenerParams listener = ListenerParams::init(cfg, rng);
  const Tensor scene = unit_scene(cfg.scene_dim);
  EstimatorConfig est;
  est.kind = EstimatorKind::kPsstMultinomial;
  est.rho = 1.0;

  auto forward = [&](bool rg, std::vector<const Tensor*>* grads) {
    Rng roll_rng(10);
    Tape tape;
    SpeakerGraph sg = SpeakerGraph::bind(tape, speaker, rg);
    ListenerGraph lg = ListenerGraph::bind(tape, listener, rg);
    Caption cap =
        speaker_rollout(tape, sg, scene, est, {3, true}, roll_rng);
    Node* score = listener_score(tape, lg, cap.emissions, scene);
    Node* loss = tape.scale(score, -1.0);
    if (rg) {
      tape.backward(loss);
      for (const BoundParam& b : sg.bindings) grads->push_back(&b.node->grad);
      for (const BoundParam& b : lg.bindings) grads->push_back(&b.node->grad);
    }
    return loss->value[0];
  };

  std::vector<const Tensor*> grads;
  forward(true, &grads);
  auto f = [&]() { return forward(false, nullptr); };
  std::vector<std::pair<Tensor*, const Tensor*>> pairs;
  std::size_t gi = 0;
  for (auto& [name, tensor] : speaker.named_tensors()) {
    pairs.push_back({tensor, grads[gi++]});
  }
  for (auto& [name, tensor] : listener.named_tensors()) {
    pairs.push_back({tensor, grads[gi++]});
  }
  CHECK(test_fd::max_rel_error(f, pairs, 1e-5, 1e-6) < 1e-4);
}

TEST_CASE("checkpoint round-trip reproduces forward outputs bit-exactly") {
  const AgentConfig cfg = tiny_config();
  Rng rng(11);
  SpeakerParams params = SpeakerParams::init(cfg, rng);
  const auto file =
      std::filesystem::temp_directory_path() / "psst_agents_ckpt.ckpt";
  save_params(file, params.to_checkpoint());
  SpeakerParams loaded =
      SpeakerParams::from_checkpoint(ad::load_checkpoint(file));

  const Tensor scene = unit_scene(cfg.scene_dim);
  auto logits = [&](SpeakerParams& p) {
    Tape tape;
    SpeakerGraph graph = SpeakerGraph::bind(tape, p, false);
    auto [dist, h] = graph.step(tape, graph.bos_input(tape),
                                graph.encode_scene(tape, scene));
    return dist.logits->value;
  };
  const Tensor a = logits(params), b = logits(loaded);
  CHECK(std::memcmp(a.data().data(), b.data().data(),
                    a.numel() * sizeof(double)) == 0);
  std::filesystem::remove(file);
}

TEST_CASE("speaker and listener checkpoints are not interchangeable") {
  const AgentConfig cfg = tiny_config();
  Rng rng(12);
  SpeakerParams params = SpeakerParams::init(cfg, rng);
  const auto file =
      std::filesystem::temp_directory_path() / "psst_agents_mismatch.ckpt";
  save_params(file, params.to_checkpoint());
  CHECK_THROWS_AS(ListenerParams::from_checkpoint(ad::load_checkpoint(file)),
                  IoError);
  std::filesystem::remove(file);
}
