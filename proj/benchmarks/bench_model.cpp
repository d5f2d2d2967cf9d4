// Forward pass, loss + gradient and one training epoch on synthetic data.
#include <benchmark/benchmark.h>

#include "protex/losses.hpp"
#include "protex/synthetic.hpp"
#include "protex/trainer.hpp"

using namespace protex;

namespace {

struct Setup {
  Dataset ds;
  TrainConfig cfg;
  Model model;
  PatchedData data;

  Setup(Mode mode, std::size_t m) {
    PlantedSpec ps;
    ps.mode = mode;
    ps.dim = 32;
    ps.n_train = 256;
    ps.seed = 1;
    ds = make_planted_task(ps).data;
    cfg.prototypes = m;
    cfg.selector.k = 3;
    cfg.epochs = 10;
    model = init_model(cfg, ds);
    data = prepare_dataset(ds, mode, cfg.selector);
  }
};

Mode mode_of(const benchmark::State& st) { return st.range(0) ? Mode::word : Mode::sentence; }

void BM_Forward(benchmark::State& st) {
  const Setup s(mode_of(st), static_cast<std::size_t>(st.range(1)));
  for (auto _ : st)
    for (const auto& ex : s.data.train.examples) benchmark::DoNotOptimize(forward(ex, s.model));
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * s.data.train.examples.size()));
}
BENCHMARK(BM_Forward)->Args({0, 10})->Args({1, 10})->Args({1, 40});

void BM_LossAndGrad(benchmark::State& st) {
  const Setup s(mode_of(st), static_cast<std::size_t>(st.range(1)));
  std::vector<const PatchedExample*> all;
  for (const auto& ex : s.data.train.examples) all.push_back(&ex);
  const BatchView batch(all.data(), 32);
  const auto cw = class_weights(s.data.train.labels(), s.model.classes);
  for (auto _ : st) benchmark::DoNotOptimize(total_loss(batch, all, s.model, s.cfg.loss, cw, nullptr));
}
BENCHMARK(BM_LossAndGrad)->Args({0, 10})->Args({1, 10});

void BM_TrainEpoch(benchmark::State& st) {
  const Setup s(mode_of(st), 10);
  for (auto _ : st) {
    Model m = s.model;
    RunOptions opts;
    opts.epochs = 1;
    opts.lr = [](std::size_t) { return 1e-3; };
    benchmark::DoNotOptimize(optimize(m, s.data.train, s.cfg, OptimizeScope{}, opts));
  }
}
BENCHMARK(BM_TrainEpoch)->Arg(0)->Arg(1);

}  // namespace
