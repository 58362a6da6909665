#include <benchmark/benchmark.h>

#include <filesystem>
#include <vector>

#include "bafo/cvae.hpp"
#include "bafo/dataset.hpp"
#include "bafo/image_io.hpp"
#include "bafo/rng.hpp"
#include "bafo/tape.hpp"

namespace {

bafo::Tensor random_tensor(const bafo::Shape& shape, std::uint64_t seed) {
    bafo::Pcg32 rng(seed);
    std::vector<double> v(static_cast<std::size_t>(bafo::numel(shape)));
    for (double& x : v) x = 2.0 * rng.next_double() - 1.0;
    return bafo::Tensor::from_values(shape, v);
}

void MatMul(benchmark::State& state) {
    bafo::set_engine_mode(bafo::NumericMode::f32);
    std::int64_t n = state.range(0);
    bafo::Tensor a = random_tensor({n, n}, 1);
    bafo::Tensor b = random_tensor({n, n}, 2);
    for (auto _ : state) {
        bafo::Tensor c = bafo::matmul(bafo::Var::constant(a),
                                      bafo::Var::constant(b))
                             .value();
        benchmark::DoNotOptimize(c);
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(MatMul)->Arg(64)->Arg(128)->Arg(256);

void Conv2dForward(benchmark::State& state) {
    bafo::set_engine_mode(bafo::NumericMode::f32);
    std::int64_t batch = state.range(0);
    bafo::Tensor x = random_tensor({batch, 32, 14, 14}, 3);
    bafo::Tensor k = random_tensor({64, 32, 4, 4}, 4);
    for (auto _ : state) {
        bafo::Tensor y = bafo::conv2d(bafo::Var::constant(x),
                                      bafo::Var::constant(k), 2, 1)
                             .value();
        benchmark::DoNotOptimize(y);
    }
}
BENCHMARK(Conv2dForward)->Arg(1)->Arg(32);

void TrainStep(benchmark::State& state) {
    bafo::set_engine_mode(bafo::NumericMode::f32);
    bafo::CvaeConfig config;
    config.latent_dim = 16;
    config.image_side = 28;
    config.batch_size = static_cast<int>(state.range(0));
    config.epochs = 1;
    config.seed = 5;
    config.numeric_mode = bafo::NumericMode::f32;
    bafo::CvaeModel model = bafo::make_cvae_model(config, 32);
    bafo::DatasetSplit data = bafo::synth_generate(
        std::max(20, config.batch_size), 28, 7);
    std::vector<bafo::LabeledImage> batch(
        data.train.begin(),
        data.train.begin() + std::min<std::size_t>(data.train.size(),
                                                   config.batch_size));
    for (auto _ : state) {
        bafo::CvaeModel step_model = model;
        bafo::train(step_model, batch, config);
        benchmark::DoNotOptimize(step_model);
    }
}
BENCHMARK(TrainStep)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void EncodeImage(benchmark::State& state) {
    bafo::set_engine_mode(bafo::NumericMode::f32);
    bafo::CvaeConfig config;
    config.latent_dim = 16;
    config.image_side = 28;
    config.seed = 5;
    config.numeric_mode = bafo::NumericMode::f32;
    bafo::CvaeModel model = bafo::make_cvae_model(config, 32);
    bafo::Tensor image = random_tensor({1, 3, 28, 28}, 9);
    for (auto _ : state) {
        bafo::EncodeOut out = bafo::encode(model, image);
        benchmark::DoNotOptimize(out);
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(EncodeImage);

void PngRoundTrip(benchmark::State& state) {
    bafo::set_engine_mode(bafo::NumericMode::f32);
    bafo::Pcg32 rng(11);
    std::vector<double> v(3 * 56 * 56);
    for (double& x : v) x = rng.next_double();
    bafo::Tensor img = bafo::Tensor::from_values({3, 56, 56}, v);
    auto path = std::filesystem::temp_directory_path() / "bafo_bench.png";
    for (auto _ : state) {
        bafo::image_write(path, img);
        bafo::Tensor back = bafo::image_read(path);
        benchmark::DoNotOptimize(back);
    }
    std::filesystem::remove(path);
}
BENCHMARK(PngRoundTrip);

}  // namespace

BENCHMARK_MAIN();
