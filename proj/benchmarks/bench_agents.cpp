#include <benchmark/benchmark.h>

#include "psst/agents.hpp"

using namespace psst;

namespace {

AgentConfig bench_config() {
  AgentConfig c;
  c.vocab_size = 35;
  c.scene_dim = 16;
  c.embed_dim = 16;
  c.hidden_dim = 32;
  return c;
}

ad::Tensor bench_scene() {
  ad::Tensor t({1, 16});
  t[0] = t[5] = t[9] = t[14] = 1.0;
  return t;
}

}  // namespace

static void BM_SpeakerRollout(benchmark::State& state) {
  const AgentConfig cfg = bench_config();
  Rng init(3);
  SpeakerParams params = SpeakerParams::init(cfg, init);
  EstimatorConfig est;
  est.kind = state.range(0) == 0 ? EstimatorKind::kStMultinomial
                                 : EstimatorKind::kPsstMultinomial;
  est.rho = state.range(0) == 0 ? 0.0 : 1.0;
  const ad::Tensor scene = bench_scene();
  Rng rng(4);
  for (auto _ : state) {
    ad::Tape tape;
    SpeakerGraph graph = SpeakerGraph::bind(tape, params, true);
    Caption cap = speaker_rollout(tape, graph, scene, est, {8, true}, rng);
    benchmark::DoNotOptimize(cap.emissions.data());
  }
}
BENCHMARK(BM_SpeakerRollout)->Arg(0)->Arg(1);

static void BM_ListenerScore(benchmark::State& state) {
  const AgentConfig cfg = bench_config();
  Rng init(5);
  ListenerParams params = ListenerParams::init(cfg, init);
  const ad::Tensor scene = bench_scene();
  const std::vector<int> tokens{4, 11, 19, 27, Vocabulary::kEos};
  for (auto _ : state) {
    ad::Tape tape;
    ListenerGraph graph = ListenerGraph::bind(tape, params, true);
    auto emissions = emissions_from_tokens(tape, tokens, cfg.vocab_size);
    ad::Node* score = listener_score(tape, graph, emissions, scene);
    tape.backward(score);
    benchmark::DoNotOptimize(score->value[0]);
  }
}
BENCHMARK(BM_ListenerScore);

static void BM_BeamDecode(benchmark::State& state) {
  const AgentConfig cfg = bench_config();
  Rng init(6);
  SpeakerParams params = SpeakerParams::init(cfg, init);
  const ad::Tensor scene = bench_scene();
  const int width = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto tokens = beam_decode(params, cfg, scene, width, 8);
    benchmark::DoNotOptimize(tokens.data());
  }
}
BENCHMARK(BM_BeamDecode)->Arg(1)->Arg(2)->Arg(4);
