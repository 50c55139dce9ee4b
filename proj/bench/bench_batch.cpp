/*
 Copyright 2026 The trajlayer Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

// Serial reference vs OpenMP batch kernels: QP solves, DTO forward passes and
// one training batch.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "trajlayer/dataset.hpp"
#include "trajlayer/dto.hpp"
#include "trajlayer/qp.hpp"
#include "trajlayer/training.hpp"

using namespace trajlayer;

namespace {

Matrix uniform(std::mt19937_64& rng, Index rows, Index cols, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = d(rng);
  }
  return m;
}

std::vector<qp::QpProblem> random_qps(int count, Index n, Index m) {
  std::mt19937_64 rng(1);
  std::vector<qp::QpProblem> out;
  for (int k = 0; k < count; ++k) {
    const Matrix M = uniform(rng, n, n, -1, 1);
    const Matrix G = uniform(rng, m, n, -1, 1);
    const Vector h = G * uniform(rng, n, 1, -0.5, 0.5) + uniform(rng, m, 1, 0.0, 0.5);
    out.emplace_back(M.transpose() * M + Matrix::Identity(n, n), uniform(rng, n, 1, -2, 2), G, h);
  }
  return out;
}

struct DtoSetup {
  dto::DtoLayer layer;
  Matrix E;
  Matrix positions;
};

DtoSetup dto_setup(int batch) {
  std::mt19937_64 rng(2);
  const dataset::Normalizer norm{Vector::Constant(3, 0.5), {0, 1}};
  dto::DtoParams p = training::make_dto_params(training::TrainConfig{}, norm, dataset::TaskConfig{});
  p.L = Matrix(uniform(rng, p.n(), p.n(), -0.5, 0.5).triangularView<Eigen::Lower>()) +
        Matrix::Identity(p.n(), p.n());
  return {dto::DtoLayer(p), uniform(rng, p.n(), batch, -3, 3), uniform(rng, 2, batch, 0.1, 0.9)};
}

void BM_SolveBatchSerial(benchmark::State& state) {
  const auto qps = random_qps(static_cast<int>(state.range(0)), 12, 40);
  for (auto _ : state) benchmark::DoNotOptimize(qp::solve_batch_serial(qps));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_SolveBatchParallel(benchmark::State& state) {
  const auto qps = random_qps(static_cast<int>(state.range(0)), 12, 40);
  for (auto _ : state) benchmark::DoNotOptimize(qp::solve_batch(qps));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_DtoForwardSerial(benchmark::State& state) {
  const DtoSetup s = dto_setup(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(dto::forward_batch_serial(s.layer, s.E, s.positions, dto::Mode::train()));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_DtoForwardParallel(benchmark::State& state) {
  const DtoSetup s = dto_setup(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(dto::forward_batch(s.layer, s.E, s.positions, dto::Mode::train()));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_TrainingBatch(benchmark::State& state) {
  const dataset::Dataset data = dataset::make_dataset(dataset::TaskConfig{}, 20, 0);
  training::TrainConfig cfg;
  const training::Model model = training::init_model(cfg, data.normalizer, data.task);
  const auto demos = dataset::normalize_demos(data.demos, data.normalizer);
  const auto windows = dataset::sample_windows(demos, cfg.T_s, cfg.T_p, 1);
  std::vector<const dataset::SequenceSample*> batch;
  for (int k = 0; k < cfg.batch_size; ++k) batch.push_back(&windows[static_cast<std::size_t>(7 * k)]);
  for (auto _ : state) benchmark::DoNotOptimize(training::batch_loss(model, batch));
  state.SetItemsProcessed(state.iterations() * cfg.batch_size);
}

}  // namespace

BENCHMARK(BM_SolveBatchSerial)->Arg(16)->Arg(128);
BENCHMARK(BM_SolveBatchParallel)->Arg(16)->Arg(128);
BENCHMARK(BM_DtoForwardSerial)->Arg(16)->Arg(128);
BENCHMARK(BM_DtoForwardParallel)->Arg(16)->Arg(128);
BENCHMARK(BM_TrainingBatch);

BENCHMARK_MAIN();
