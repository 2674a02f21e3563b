#include <benchmark/benchmark.h>

#include "psst/metrics.hpp"
#include "psst/rng.hpp"

using namespace psst;

static void BM_Cider(benchmark::State& state) {
  Rng rng(7);
  std::vector<std::vector<std::vector<int>>> docs;
  for (int d = 0; d < 192; ++d) {
    std::vector<std::vector<int>> doc;
    for (int r = 0; r < 5; ++r) {
      std::vector<int> cap(5);
      for (int& t : cap) t = 3 + static_cast<int>(rng.uniform_int(32));
      doc.push_back(std::move(cap));
    }
    docs.push_back(std::move(doc));
  }
  const NGramStats stats = NGramStats::from_documents(docs);
  const std::vector<std::vector<int>>& refs = docs[0];
  std::vector<int> cand(5);
  for (int& t : cand) t = 3 + static_cast<int>(rng.uniform_int(32));
  for (auto _ : state) {
    benchmark::DoNotOptimize(cider(cand, refs, stats));
  }
}
BENCHMARK(BM_Cider);

static void BM_HingeLoss(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0));
  Rng rng(8);
  std::vector<double> values(b * b);
  for (double& v : values) v = 2.0 * rng.uniform() - 1.0;
  for (auto _ : state) {
    ad::Tape tape;
    ScoreMatrix m(b);
    for (std::size_t i = 0; i < b * b; ++i) {
      m.scores[i] = tape.leaf(ad::Tensor::scalar(values[i]), true);
    }
    ad::Node* loss = disc_hinge_loss(tape, m);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss->value[0]);
  }
}
BENCHMARK(BM_HingeLoss)->Arg(8)->Arg(32);
