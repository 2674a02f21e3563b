#include <benchmark/benchmark.h>

#include "psst/rng.hpp"
#include "psst/tape.hpp"

using namespace psst;

namespace {

ad::Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  ad::Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) {
    t[i] = 2.0 * rng.uniform() - 1.0;
  }
  return t;
}

}  // namespace

static void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const ad::Tensor av = random_tensor({n, n}, rng);
  const ad::Tensor bv = random_tensor({n, n}, rng);
  for (auto _ : state) {
    ad::Tape tape;
    ad::Node* a = tape.leaf(av, true);
    ad::Node* b = tape.leaf(bv, true);
    ad::Node* loss = tape.mean(tape.matmul(a, b));
    tape.backward(loss);
    benchmark::DoNotOptimize(a->grad.data().data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(8)->Arg(16)->Arg(32);

static void BM_SoftmaxChain(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const ad::Tensor z = random_tensor({1, 32}, rng);
  for (auto _ : state) {
    ad::Tape tape;
    ad::Node* x = tape.leaf(z, true);
    ad::Node* loss = nullptr;
    for (std::size_t i = 0; i < len; ++i) {
      ad::Node* y = tape.softmax(x, 1);
      ad::Node* s = tape.mean(tape.log(y));
      loss = loss ? tape.add(loss, s) : s;
    }
    tape.backward(loss);
    benchmark::DoNotOptimize(x->grad.data().data());
  }
}
BENCHMARK(BM_SoftmaxChain)->Arg(1)->Arg(8);

BENCHMARK_MAIN();
