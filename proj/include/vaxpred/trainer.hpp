#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "vaxpred/checkpoint.hpp"
#include "vaxpred/dataset.hpp"
#include "vaxpred/embedio.hpp"
#include "vaxpred/metrics.hpp"
#include "vaxpred/model.hpp"

namespace vaxpred {

struct TrainConfig {
    double lr = 5e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t max_tokens = 4000;  // residue budget per batch
    std::size_t grad_accum = 1;     // batches accumulated per optimizer step
    std::size_t max_epochs = 50;
    std::size_t patience = 5;       // epochs without improvement before stopping
    std::uint64_t seed = 1;

    void validate() const;
};

/// Adam moment estimates, one tensor pair per parameter tensor.
struct OptimState {
    ModelParams m, v;
    long step = 0;

    static OptimState for_config(const ModelConfig& config);
};

/// One AdamW update with decoupled weight decay:
///   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
/// The step counter increments before the bias corrections.
/// Errors: shape mismatch; non-finite gradient entries (NumericError, before
/// any tensor is touched).
void adamw_step(ModelParams& params, const GradSet& grads, OptimState& state,
                const TrainConfig& config);

/// Greedy in-order packing of record indices into batches whose total length
/// stays within max_tokens. A record longer than the whole budget forms a
/// singleton batch; order is never changed.
std::vector<std::vector<std::size_t>> batch_by_token_budget(
    const std::vector<std::size_t>& lengths, std::size_t max_tokens);

/// One record resolved against its embedding bundle, with descriptors built
/// from the sequence. Produced by resolve_records, consumed by the batch ops.
struct ResolvedRecord {
    const ProteinRecord* record = nullptr;
    const EmbeddingBundle* bundle = nullptr;
    Mat descriptors;
};

/// Errors: record without a bundle, bundle length differing from the sequence,
/// bundle width differing from config.dim.
std::vector<ResolvedRecord> resolve_records(const std::vector<ProteinRecord>& records,
                                            const BundleMap& bundles,
                                            const ModelConfig& config);

/// Summed (not averaged) loss and gradients over a batch. Dropout for each
/// record is keyed by (dropout_seed, id hash), so a record's mask does not
/// depend on its batch position.
std::pair<double, GradSet> loss_and_grad_sum(const std::vector<const ResolvedRecord*>& batch,
                                             const ModelParams& params,
                                             const ModelConfig& config,
                                             std::uint64_t dropout_seed);

/// Mean loss and mean gradients over a batch. Errors: empty batch.
std::pair<double, GradSet> loss_and_grad(const std::vector<const ResolvedRecord*>& batch,
                                         const ModelParams& params, const ModelConfig& config,
                                         std::uint64_t dropout_seed);

/// Tracks the best validation accuracy; improvement means strictly greater.
struct EarlyStopper {
    std::size_t patience = 5;
    double best = -1.0;
    std::size_t best_epoch = 0;
    std::size_t streak = 0;

    /// Returns true when `acc` improves on the best seen so far.
    bool observe(double acc, std::size_t epoch);
    bool should_stop() const { return streak >= patience; }
};

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double valid_acc = 0.0;
};

struct TrainResult {
    Checkpoint best;
    double best_valid_acc = 0.0;
    std::size_t best_epoch = 0;
    std::vector<EpochStats> history;
    bool stopped_early = false;
};

/// Full training loop: seeded init, per-epoch shuffle, token-budget batches,
/// gradient accumulation, AdamW, early stopping on validation accuracy. The
/// returned checkpoint is a copy of the parameters from the best epoch, never
/// a later one. Bit-reproducible for fixed data and seed.
TrainResult train(const std::vector<ProteinRecord>& train_records,
                  const std::vector<ProteinRecord>& valid_records, const BundleMap& bundles,
                  const ModelConfig& mconfig, const TrainConfig& tconfig);

/// Eval-mode positive-class probabilities for every record.
std::vector<ScoredLabel> score_records(const std::vector<ProteinRecord>& records,
                                       const BundleMap& bundles, const ModelParams& params,
                                       const ModelConfig& config);

/// Fraction of records whose thresholded prediction matches the label.
/// A score exactly at the threshold counts as a negative prediction.
double accuracy_at_threshold(const std::vector<ScoredLabel>& scored, double threshold = 0.5);

struct RepeatedEval {
    std::vector<MetricReport> reports;
    std::vector<double> mean, sd;
};

/// Score once, then build a metric report on n_repeats seeded subsamples
/// (without replacement) of ceil(fraction * N) records each.
RepeatedEval evaluate_repeated(const std::vector<ProteinRecord>& records, const BundleMap& bundles,
                               const ModelParams& params, const ModelConfig& config,
                               std::size_t n_repeats, double fraction, std::uint64_t seed,
                               double threshold = 0.5, std::size_t top_k = 30);

}  // namespace vaxpred
