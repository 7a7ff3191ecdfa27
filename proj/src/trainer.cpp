#include "vaxpred/trainer.hpp"

#include <cmath>

#include "vaxpred/descriptors.hpp"
#include "vaxpred/kernels.hpp"
#include "vaxpred/rng.hpp"

namespace vaxpred {

namespace {

constexpr std::uint64_t kShuffleDomain = 0x45504f43ULL;
constexpr std::uint64_t kDropoutEpochDomain = 0x64726f70ULL;

void add_grads(GradSet& total, const GradSet& g) {
    auto dst = tensor_list(total);
    auto src = tensor_list(g);
    for (std::size_t t = 0; t < dst.size(); ++t) add_inplace(*dst[t].second, *src[t].second);
}

void scale_grads(GradSet& total, double factor) {
    for (auto& [name, mat] : tensor_list(total)) scale_inplace(*mat, factor);
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ValidationError("train config: lr must be positive");
    if (weight_decay < 0.0) throw ValidationError("train config: weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ValidationError("train config: betas must be in [0, 1)");
    }
    if (!(eps > 0.0)) throw ValidationError("train config: eps must be positive");
    if (max_tokens < 1) throw ValidationError("train config: max_tokens must be at least 1");
    if (grad_accum < 1) throw ValidationError("train config: grad_accum must be at least 1");
    if (max_epochs < 1) throw ValidationError("train config: max_epochs must be at least 1");
    if (patience < 1) throw ValidationError("train config: patience must be at least 1");
}

OptimState OptimState::for_config(const ModelConfig& config) {
    OptimState s;
    s.m = zero_params(config);
    s.v = zero_params(config);
    s.step = 0;
    return s;
}

void adamw_step(ModelParams& params, const GradSet& grads, OptimState& state,
                const TrainConfig& config) {
    config.validate();
    auto p_list = tensor_list(params);
    auto g_list = tensor_list(const_cast<GradSet&>(grads));
    auto m_list = tensor_list(state.m);
    auto v_list = tensor_list(state.v);

    // Refuse the whole step before touching any state, so a bad gradient
    // cannot leave parameters and moments half-updated.
    for (std::size_t t = 0; t < g_list.size(); ++t) {
        if (!p_list[t].second->same_shape(*g_list[t].second)) {
            throw ValidationError("adamw_step: gradient shape mismatch for " + p_list[t].first);
        }
        if (!g_list[t].second->all_finite()) {
            throw NumericError("adamw_step: non-finite gradient in " + g_list[t].first);
        }
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < p_list.size(); ++t) {
        auto& p = p_list[t].second->data();
        const auto& g = g_list[t].second->data();
        auto& m = m_list[t].second->data();
        auto& v = v_list[t].second->data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= config.lr * (m_hat / (std::sqrt(v_hat) + config.eps) +
                                 config.weight_decay * p[i]);
        }
    }
}

std::vector<std::vector<std::size_t>> batch_by_token_budget(
    const std::vector<std::size_t>& lengths, std::size_t max_tokens) {
    if (max_tokens < 1) throw ValidationError("batch_by_token_budget: budget must be positive");
    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::size_t> current;
    std::size_t current_tokens = 0;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        if (!current.empty() && current_tokens + lengths[i] > max_tokens) {
            batches.push_back(std::move(current));
            current.clear();
            current_tokens = 0;
        }
        current.push_back(i);
        current_tokens += lengths[i];
    }
    if (!current.empty()) batches.push_back(std::move(current));
    return batches;
}

std::vector<ResolvedRecord> resolve_records(const std::vector<ProteinRecord>& records,
                                            const BundleMap& bundles,
                                            const ModelConfig& config) {
    std::vector<ResolvedRecord> out;
    out.reserve(records.size());
    for (const auto& rec : records) {
        const auto it = bundles.find(rec.id);
        if (it == bundles.end()) {
            throw ValidationError("no embedding bundle for record '" + rec.id + "'");
        }
        const EmbeddingBundle& b = it->second;
        if (b.seq_embedding.rows() != rec.sequence.size()) {
            throw ValidationError("bundle '" + rec.id + "' has " +
                                  std::to_string(b.seq_embedding.rows()) +
                                  " rows but the sequence has " +
                                  std::to_string(rec.sequence.size()) + " residues");
        }
        if (b.seq_embedding.cols() != config.dim) {
            throw ValidationError("bundle '" + rec.id + "' width " +
                                  std::to_string(b.seq_embedding.cols()) +
                                  " does not match model width " + std::to_string(config.dim));
        }
        ResolvedRecord r;
        r.record = &rec;
        r.bundle = &b;
        r.descriptors = sequence_descriptors(rec.sequence);
        out.push_back(std::move(r));
    }
    return out;
}

std::pair<double, GradSet> loss_and_grad_sum(const std::vector<const ResolvedRecord*>& batch,
                                             const ModelParams& params,
                                             const ModelConfig& config,
                                             std::uint64_t dropout_seed) {
    if (batch.empty()) throw ValidationError("loss_and_grad: empty batch");
    GradSet total = zero_params(config);
    double loss_sum = 0.0;
    for (const ResolvedRecord* item : batch) {
        DropoutMode mode{true, mix_seed(dropout_seed, fnv1a64(item->record->id))};
        const ForwardTrace trace =
            model_forward(*item->bundle, item->descriptors, params, config, mode);
        const double loss = cross_entropy_from_logits(trace.logits, item->record->label);
        if (!std::isfinite(loss)) {
            throw NumericError("non-finite loss for record '" + item->record->id + "'");
        }
        loss_sum += loss;
        add_grads(total, model_backward(trace, item->record->label, params, config));
    }
    return {loss_sum, std::move(total)};
}

std::pair<double, GradSet> loss_and_grad(const std::vector<const ResolvedRecord*>& batch,
                                         const ModelParams& params, const ModelConfig& config,
                                         std::uint64_t dropout_seed) {
    auto [loss_sum, grads] = loss_and_grad_sum(batch, params, config, dropout_seed);
    const double inv = 1.0 / static_cast<double>(batch.size());
    scale_grads(grads, inv);
    return {loss_sum * inv, std::move(grads)};
}

bool EarlyStopper::observe(double acc, std::size_t epoch) {
    if (acc > best) {
        best = acc;
        best_epoch = epoch;
        streak = 0;
        return true;
    }
    ++streak;
    return false;
}

TrainResult train(const std::vector<ProteinRecord>& train_records,
                  const std::vector<ProteinRecord>& valid_records, const BundleMap& bundles,
                  const ModelConfig& mconfig, const TrainConfig& tconfig) {
    mconfig.validate();
    tconfig.validate();
    if (train_records.empty()) throw ValidationError("train: no training records");
    if (valid_records.empty()) throw ValidationError("train: no validation records");

    const auto train_items = resolve_records(train_records, bundles, mconfig);
    ModelParams params = init_params(mconfig, tconfig.seed);
    OptimState state = OptimState::for_config(mconfig);

    EarlyStopper stopper{tconfig.patience};
    TrainResult result;
    ModelParams best_params = params;

    std::vector<std::size_t> order(train_items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= tconfig.max_epochs; ++epoch) {
        seeded_shuffle(order, mix_seed(tconfig.seed, kShuffleDomain, epoch));
        std::vector<std::size_t> lengths(order.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            lengths[i] = train_items[order[i]].record->sequence.size();
        }
        const auto batches = batch_by_token_budget(lengths, tconfig.max_tokens);
        const std::uint64_t dropout_seed =
            mix_seed(tconfig.seed, kDropoutEpochDomain, epoch);

        double epoch_loss_sum = 0.0;
        // Batches are consumed in groups of grad_accum per optimizer step;
        // sums are divided by the group's record count only once, so an
        // accumulated group equals the same records as one large batch.
        std::size_t b = 0;
        while (b < batches.size()) {
            GradSet group = zero_params(mconfig);
            std::size_t group_count = 0;
            for (std::size_t a = 0; a < tconfig.grad_accum && b < batches.size(); ++a, ++b) {
                std::vector<const ResolvedRecord*> batch;
                batch.reserve(batches[b].size());
                for (std::size_t pos : batches[b]) batch.push_back(&train_items[order[pos]]);
                auto [loss_sum, grads] = loss_and_grad_sum(batch, params, mconfig, dropout_seed);
                epoch_loss_sum += loss_sum;
                add_grads(group, grads);
                group_count += batch.size();
            }
            scale_grads(group, 1.0 / static_cast<double>(group_count));
            adamw_step(params, group, state, tconfig);
        }

        const double train_loss = epoch_loss_sum / static_cast<double>(train_items.size());
        const auto valid_scored = score_records(valid_records, bundles, params, mconfig);
        const double valid_acc = accuracy_at_threshold(valid_scored, 0.5);
        result.history.push_back({epoch, train_loss, valid_acc});

        if (stopper.observe(valid_acc, epoch)) {
            best_params = params;
        }
        if (stopper.should_stop()) {
            result.stopped_early = true;
            break;
        }
    }

    result.best = Checkpoint{mconfig, std::move(best_params)};
    result.best_valid_acc = stopper.best;
    result.best_epoch = stopper.best_epoch;
    return result;
}

std::vector<ScoredLabel> score_records(const std::vector<ProteinRecord>& records,
                                       const BundleMap& bundles, const ModelParams& params,
                                       const ModelConfig& config) {
    const auto items = resolve_records(records, bundles, config);
    std::vector<ScoredLabel> out(items.size());
    const std::int64_t n = static_cast<std::int64_t>(items.size());
    std::string error_msg;
    int error_kind = 0;
    // One output slot per record; exceptions may not cross the parallel
    // region, so the first one is stashed and rethrown after the loop.
#pragma omp parallel for schedule(static) if (n > 4)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& item = items[static_cast<std::size_t>(i)];
        try {
            DropoutMode eval;
            const ForwardTrace trace =
                model_forward(*item.bundle, item.descriptors, params, config, eval);
            out[static_cast<std::size_t>(i)] = {item.record->id,
                                                positive_probability(trace.logits),
                                                item.record->label};
        } catch (const std::exception& e) {
#pragma omp critical
            {
                if (error_kind == 0) {
                    error_msg = e.what();
                    error_kind = dynamic_cast<const NumericError*>(&e) ? 2 : 1;
                }
            }
        }
    }
    if (error_kind == 2) throw NumericError(error_msg);
    if (error_kind == 1) throw ValidationError(error_msg);
    return out;
}

double accuracy_at_threshold(const std::vector<ScoredLabel>& scored, double threshold) {
    if (scored.empty()) throw ValidationError("accuracy_at_threshold: empty input");
    std::size_t correct = 0;
    for (const auto& s : scored) {
        const int pred = s.score > threshold ? 1 : 0;
        correct += pred == s.label;
    }
    return static_cast<double>(correct) / static_cast<double>(scored.size());
}

RepeatedEval evaluate_repeated(const std::vector<ProteinRecord>& records, const BundleMap& bundles,
                               const ModelParams& params, const ModelConfig& config,
                               std::size_t n_repeats, double fraction, std::uint64_t seed,
                               double threshold, std::size_t top_k) {
    if (n_repeats < 1) throw ValidationError("evaluate_repeated: n_repeats must be at least 1");
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ValidationError("evaluate_repeated: fraction must be in (0, 1]");
    }
    if (records.empty()) throw ValidationError("evaluate_repeated: no records");

    const auto scored = score_records(records, bundles, params, config);
    const std::size_t n = scored.size();
    const std::size_t take = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(n)));

    RepeatedEval out;
    out.reports.reserve(n_repeats);
    std::vector<std::size_t> indices(n);
    for (std::size_t i = 0; i < n; ++i) indices[i] = i;
    for (std::size_t r = 0; r < n_repeats; ++r) {
        seeded_shuffle(indices, mix_seed(seed, r));
        std::vector<ScoredLabel> subset;
        subset.reserve(take);
        for (std::size_t i = 0; i < take; ++i) subset.push_back(scored[indices[i]]);
        out.reports.push_back(build_report(subset, threshold, top_k));
    }
    auto [mean, sd] = aggregate_reports(out.reports);
    out.mean = std::move(mean);
    out.sd = std::move(sd);
    return out;
}

}  // namespace vaxpred
