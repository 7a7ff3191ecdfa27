// Benchmark: full forward pass through the shared kernels (OpenMP when
// enabled) against the serial reference implementation, on one synthetic
// record. Also reports the largest logit difference so the speed numbers
// come with an agreement check attached.
//
// Usage: bench_attention [length] [dim] [heads] [iters]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "vaxpred/descriptors.hpp"
#include "vaxpred/embedio.hpp"
#include "vaxpred/model.hpp"
#include "vaxpred/reference.hpp"
#include "vaxpred/rng.hpp"

using namespace vaxpred;

namespace {

ProteinRecord synth_record(std::size_t length, std::uint64_t seed) {
    SplitMix64 rng(seed);
    ProteinRecord rec;
    rec.id = "bench";
    rec.source = "bacteria";
    rec.label = 1;
    rec.sequence.reserve(length);
    for (std::size_t i = 0; i < length; ++i) {
        rec.sequence.push_back(kResidueAlphabet[rng.next_below(kResidueCount)]);
    }
    return rec;
}

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace

int main(int argc, char** argv) {
    std::size_t length = 512, dim = 64, heads = 8, iters = 20;
    if (argc > 1) length = std::strtoull(argv[1], nullptr, 10);
    if (argc > 2) dim = std::strtoull(argv[2], nullptr, 10);
    if (argc > 3) heads = std::strtoull(argv[3], nullptr, 10);
    if (argc > 4) iters = std::strtoull(argv[4], nullptr, 10);

    ModelConfig config;
    config.dim = dim;
    config.n_heads = heads;
    config.validate();

    const ProteinRecord rec = synth_record(length, 7);
    const EmbeddingBundle bundle = synthetic_bundle(rec, dim, 7);
    const Mat descriptors = sequence_descriptors(rec.sequence);
    const ModelParams params = init_params(config, 7);

    std::printf("length=%zu dim=%zu heads=%zu iters=%zu\n", length, dim, heads, iters);

    DropoutMode eval;
    // Warm up once so allocator and thread-pool startup stay out of the timings.
    auto trace = model_forward(bundle, descriptors, params, config, eval);
    auto ref_logits = reference::forward_logits(bundle, descriptors, params, config);

    const double t0 = now_ms();
    for (std::size_t i = 0; i < iters; ++i) {
        trace = model_forward(bundle, descriptors, params, config, eval);
    }
    const double kernel_ms = (now_ms() - t0) / static_cast<double>(iters);

    const double t1 = now_ms();
    for (std::size_t i = 0; i < iters; ++i) {
        ref_logits = reference::forward_logits(bundle, descriptors, params, config);
    }
    const double reference_ms = (now_ms() - t1) / static_cast<double>(iters);

    const double diff0 = std::abs(trace.logits[0] - ref_logits[0]);
    const double diff1 = std::abs(trace.logits[1] - ref_logits[1]);
    const double max_diff = diff0 > diff1 ? diff0 : diff1;

    std::printf("kernel forward:    %10.3f ms/iter\n", kernel_ms);
    std::printf("reference forward: %10.3f ms/iter\n", reference_ms);
    std::printf("speedup:           %10.2fx\n", reference_ms / kernel_ms);
    std::printf("max logit diff:    %10.3e\n", max_diff);
    return max_diff < 1e-9 ? 0 : 1;
}
