// Serial reference kernels against the blocked parallel ones.
#include <benchmark/benchmark.h>

#include "ltcl/datasets.hpp"
#include "ltcl/kernels.hpp"
#include "ltcl/models.hpp"

namespace {

struct Fixture {
    ltcl::LabeledDataset data;
    ltcl::Model linear;
    ltcl::Model mlp;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture x;
        x.data = ltcl::synthetic_gaussian(10, 196, 400, 2.0, 7);
        x.linear = ltcl::make_mlp({196, 10}, 3);
        x.linear = ltcl::Model(ltcl::ModelKind::Linear, x.linear.params());
        x.mlp = ltcl::make_mlp({196, 100, 10}, 3);
        return x;
    }();
    return f;
}

void BM_CrossEntropySerial(benchmark::State& state) {
    const auto& f = fixture();
    const auto& model = state.range(0) == 0 ? f.linear : f.mlp;
    for (auto _ : state) {
        benchmark::DoNotOptimize(ltcl::kernels::cross_entropy_serial(model, f.data.features(), f.data.labels()));
    }
}

void BM_CrossEntropyParallel(benchmark::State& state) {
    const auto& f = fixture();
    const auto& model = state.range(0) == 0 ? f.linear : f.mlp;
    ltcl::kernels::set_workers(static_cast<int>(state.range(1)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(ltcl::kernels::cross_entropy(model, f.data.features(), f.data.labels()));
    }
}

void BM_HessianVectorSerial(benchmark::State& state) {
    const auto& f = fixture();
    const ltcl::Vector v = ltcl::Vector::Ones(f.linear.params().values().size());
    for (auto _ : state) {
        benchmark::DoNotOptimize(ltcl::kernels::linear_hessian_vector_serial(f.linear, f.data.features(), v));
    }
}

void BM_HessianVectorParallel(benchmark::State& state) {
    const auto& f = fixture();
    const ltcl::Vector v = ltcl::Vector::Ones(f.linear.params().values().size());
    ltcl::kernels::set_workers(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(ltcl::kernels::linear_hessian_vector(f.linear, f.data.features(), v));
    }
}

void BM_HessianSerial(benchmark::State& state) {
    const auto& f = fixture();
    for (auto _ : state) {
        benchmark::DoNotOptimize(ltcl::kernels::linear_hessian_serial(f.linear, f.data.features()));
    }
}

void BM_HessianParallel(benchmark::State& state) {
    const auto& f = fixture();
    ltcl::kernels::set_workers(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(ltcl::kernels::linear_hessian(f.linear, f.data.features()));
    }
}

}  // namespace

BENCHMARK(BM_CrossEntropySerial)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CrossEntropyParallel)->ArgsProduct({{0, 1}, {1, 2, 4}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_HessianVectorSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_HessianVectorParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_HessianSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_HessianParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
