// Serial reference vs OpenMP-parallel kernel variants on the shapes the
// model actually runs. Each pair shares one body; the speedup column is the
// whole point, the bitwise-equality guarantee is covered by the test suite.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "gtf/kernels.hpp"
#include "gtf/model.hpp"
#include "gtf/rng.hpp"
#include "gtf/tensor.hpp"

using namespace gtf;

namespace {

std::vector<float> randu(size_t n, std::uint64_t seed) {
    RngState rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

struct ModeScope {
    explicit ModeScope(kern::Mode m) { kern::set_mode(m); }
    ~ModeScope() { kern::set_mode(kern::Mode::parallel); }
};

// stage-2 token/channel geometry at 512x512 input: T=4096, C=64
void bm_matmul(benchmark::State& st, kern::Mode m) {
    ModeScope scope(m);
    const kern::i64 T = 4096, C = 64;
    const auto a = randu(static_cast<size_t>(T * C), 1);
    const auto b = randu(static_cast<size_t>(C * C), 2);
    std::vector<float> c(static_cast<size_t>(T * C));
    for (auto _ : st) {
        kern::matmul(a.data(), b.data(), c.data(), 1, T, C, C, false);
        benchmark::DoNotOptimize(c.data());
    }
    st.SetItemsProcessed(st.iterations() * T * C * C);
}

// attention scores q·kᵀ at stage-3 geometry with R=2 (Tq=1024, Tk=256, dh=32)
void bm_matmul_nt(benchmark::State& st, kern::Mode m) {
    ModeScope scope(m);
    const kern::i64 B = 5, Tq = 1024, Tk = 256, dh = 32;
    const auto q = randu(static_cast<size_t>(B * Tq * dh), 3);
    const auto k = randu(static_cast<size_t>(B * Tk * dh), 4);
    std::vector<float> s(static_cast<size_t>(B * Tq * Tk));
    for (auto _ : st) {
        kern::matmul_nt(q.data(), k.data(), s.data(), B, Tq, Tk, dh, true);
        benchmark::DoNotOptimize(s.data());
    }
    st.SetItemsProcessed(st.iterations() * B * Tq * Tk * dh);
}

// stage-1 patch embed: 7x7/s4 conv, 3->32 channels on a 512x512 frame
void bm_conv2d(benchmark::State& st, kern::Mode m) {
    ModeScope scope(m);
    const kern::i64 H = 512, W = 512, Ci = 3, Co = 32, kk = 7, s = 4, p = 3;
    const kern::i64 OH = (H + 2 * p - kk) / s + 1, OW = (W + 2 * p - kk) / s + 1;
    const auto in = randu(static_cast<size_t>(Ci * H * W), 5);
    const auto w = randu(static_cast<size_t>(Co * Ci * kk * kk), 6);
    const auto b = randu(static_cast<size_t>(Co), 7);
    std::vector<float> out(static_cast<size_t>(Co * OH * OW));
    for (auto _ : st) {
        kern::conv2d_fwd(in.data(), w.data(), b.data(), out.data(), 1, Ci, H, W,
                         Co, kk, kk, OH, OW, s, s, p, p, 1);
        benchmark::DoNotOptimize(out.data());
    }
    st.SetItemsProcessed(st.iterations() * Co * OH * OW * Ci * kk * kk);
}

void bm_softmax(benchmark::State& st, kern::Mode m) {
    ModeScope scope(m);
    const kern::i64 rows = 4096, n = 1024;
    const auto x = randu(static_cast<size_t>(rows * n), 8);
    std::vector<float> y(x.size());
    for (auto _ : st) {
        kern::softmax_rows(x.data(), y.data(), rows, n);
        benchmark::DoNotOptimize(y.data());
    }
    st.SetItemsProcessed(st.iterations() * rows * n);
}

void bm_layer_norm(benchmark::State& st, kern::Mode m) {
    ModeScope scope(m);
    const kern::i64 rows = 16384, n = 64;
    const auto x = randu(static_cast<size_t>(rows * n), 9);
    const auto g = randu(static_cast<size_t>(n), 10);
    const auto b = randu(static_cast<size_t>(n), 11);
    std::vector<float> y(x.size()), mean(static_cast<size_t>(rows)),
        rstd(static_cast<size_t>(rows));
    for (auto _ : st) {
        kern::layer_norm_rows(x.data(), g.data(), b.data(), y.data(), mean.data(),
                              rstd.data(), rows, n, 1e-5f);
        benchmark::DoNotOptimize(y.data());
    }
    st.SetItemsProcessed(st.iterations() * rows * n);
}

// decoder upsample: 128 planes 16x16 -> 128x128
void bm_bilinear(benchmark::State& st, kern::Mode m) {
    ModeScope scope(m);
    const kern::i64 planes = 128, H = 16, W = 16, OH = 128, OW = 128;
    const auto in = randu(static_cast<size_t>(planes * H * W), 12);
    std::vector<float> out(static_cast<size_t>(planes * OH * OW));
    for (auto _ : st) {
        kern::bilinear_fwd(in.data(), out.data(), planes, H, W, OH, OW);
        benchmark::DoNotOptimize(out.data());
    }
    st.SetItemsProcessed(st.iterations() * planes * OH * OW);
}

// whole default model, inference pass on one 128x128 frame
void bm_model_forward(benchmark::State& st, kern::Mode m) {
    ModeScope scope(m);
    ModelConfig cfg;
    cfg.input_h = cfg.input_w = 128;
    RngState rng(13);
    GasTwinFormer model(cfg, rng);
    Tensor x = Tensor::uniform({1, 3, 128, 128}, rng, 0.0, 1.0);
    NoGradGuard ng;
    RngState unused(0);
    for (auto _ : st) {
        auto out = model.forward(x, false, unused);
        benchmark::DoNotOptimize(out.seg);
    }
}

} // namespace

BENCHMARK_CAPTURE(bm_matmul, serial, kern::Mode::serial);
BENCHMARK_CAPTURE(bm_matmul, parallel, kern::Mode::parallel);
BENCHMARK_CAPTURE(bm_matmul_nt, serial, kern::Mode::serial);
BENCHMARK_CAPTURE(bm_matmul_nt, parallel, kern::Mode::parallel);
BENCHMARK_CAPTURE(bm_conv2d, serial, kern::Mode::serial);
BENCHMARK_CAPTURE(bm_conv2d, parallel, kern::Mode::parallel);
BENCHMARK_CAPTURE(bm_softmax, serial, kern::Mode::serial);
BENCHMARK_CAPTURE(bm_softmax, parallel, kern::Mode::parallel);
BENCHMARK_CAPTURE(bm_layer_norm, serial, kern::Mode::serial);
BENCHMARK_CAPTURE(bm_layer_norm, parallel, kern::Mode::parallel);
BENCHMARK_CAPTURE(bm_bilinear, serial, kern::Mode::serial);
BENCHMARK_CAPTURE(bm_bilinear, parallel, kern::Mode::parallel);
BENCHMARK_CAPTURE(bm_model_forward, serial, kern::Mode::serial);
BENCHMARK_CAPTURE(bm_model_forward, parallel, kern::Mode::parallel);

BENCHMARK_MAIN();
