#include "vaxpred/model.hpp"

#include <cmath>
#include <numeric>

#include "vaxpred/kernels.hpp"
#include "vaxpred/rng.hpp"

namespace vaxpred {

namespace {

// Score assigned to masked rows before the max-subtracted softmax. Large
// enough that exp() underflows to an exact zero weight.
constexpr double kMaskScore = -1e9;
constexpr std::uint64_t kDropoutDomain = 0x64726f70ULL;

template <typename T>
Matrix<T> rope_rotate_t(const Matrix<T>& vectors, const std::vector<std::int64_t>& positions,
                        double base) {
    if (vectors.cols() == 0 || vectors.cols() % 2 != 0) {
        throw ValidationError("rope_rotate: vector width must be even and positive");
    }
    if (positions.size() != vectors.rows()) {
        throw ValidationError("rope_rotate: one position per row required");
    }
    if (!(base > 0.0)) throw ValidationError("rope_rotate: base must be positive");

    const std::size_t width = vectors.cols();
    const std::size_t pairs = width / 2;
    std::vector<double> freq(pairs);
    for (std::size_t t = 0; t < pairs; ++t) {
        freq[t] = std::pow(base, -2.0 * static_cast<double>(t) / static_cast<double>(width));
    }

    Matrix<T> out(vectors.rows(), width);
    const std::int64_t rows = static_cast<std::int64_t>(vectors.rows());
#pragma omp parallel for schedule(static) if (rows * static_cast<std::int64_t>(width) > 16384)
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::size_t i = static_cast<std::size_t>(r);
        const double pos = static_cast<double>(positions[i]);
        for (std::size_t t = 0; t < pairs; ++t) {
            const double angle = pos * freq[t];
            const T c = static_cast<T>(std::cos(angle));
            const T s = static_cast<T>(std::sin(angle));
            const T x = vectors(i, 2 * t);
            const T y = vectors(i, 2 * t + 1);
            out(i, 2 * t) = x * c - y * s;
            out(i, 2 * t + 1) = x * s + y * c;
        }
    }
    return out;
}

template <typename T, typename Token>
Matrix<T> gather_rows(const Matrix<T>& table, const std::vector<Token>& tokens) {
    Matrix<T> out(tokens.size(), table.cols());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::size_t row = tokens[i];
        if (row >= table.rows()) {
            throw ValidationError("embedding token " + std::to_string(row) +
                                  " out of table range");
        }
        for (std::size_t j = 0; j < table.cols(); ++j) out(i, j) = table(row, j);
    }
    return out;
}

template <typename T>
struct BlockTraceT {
    Matrix<T> q_rot, k_rot, v;
    std::vector<Matrix<T>> probs;
    Matrix<T> concat, out;
};

template <typename T>
BlockTraceT<T> attention_block_forward(const Matrix<T>& query_emb, const Matrix<T>& seq_emb,
                                       const AttnParamsT<T>& attn, const ModelConfig& config) {
    const std::size_t len = query_emb.rows();
    const std::size_t dim = config.dim;
    const std::size_t dk = config.head_width();

    BlockTraceT<T> tr;
    Matrix<T> q = matmul(query_emb, attn.w_query);
    Matrix<T> k = matmul(seq_emb, attn.w_key);
    tr.v = matmul(seq_emb, attn.w_value);
    tr.q_rot = Matrix<T>(len, dim);
    tr.k_rot = Matrix<T>(len, dim);
    tr.concat = Matrix<T>(len, dim);
    tr.probs.reserve(config.n_heads);

    std::vector<std::int64_t> positions(len);
    std::iota(positions.begin(), positions.end(), 0);
    const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));

    for (std::size_t h = 0; h < config.n_heads; ++h) {
        const std::size_t c0 = h * dk;
        Matrix<T> qh = rope_rotate_t(take_cols(q, c0, dk), positions, config.rope_base);
        Matrix<T> kh = rope_rotate_t(take_cols(k, c0, dk), positions, config.rope_base);
        copy_cols_inplace(tr.q_rot, qh, c0);
        copy_cols_inplace(tr.k_rot, kh, c0);

        Matrix<T> scores = matmul_nt(qh, kh);
        scale_inplace(scores, inv_sqrt_dk);
        softmax_rows_inplace(scores);
        Matrix<T> head_out = matmul(scores, take_cols(tr.v, c0, dk));
        copy_cols_inplace(tr.concat, head_out, c0);
        tr.probs.push_back(std::move(scores));
    }
    tr.out = matmul(tr.concat, attn.w_out);
    return tr;
}

template <typename T>
struct PoolTraceT {
    std::vector<T> alpha, pooled;
};

template <typename T>
PoolTraceT<T> pool_forward(const Matrix<T>& features, const std::vector<std::uint8_t>& mask,
                           const Matrix<T>& pool_weight, T pool_bias) {
    const std::size_t len = features.rows();
    const std::size_t width = features.cols();
    if (len == 0) throw ValidationError("attention_pool: no feature rows");
    if (mask.size() != len) throw ValidationError("attention_pool: mask size mismatch");
    if (pool_weight.rows() != width || pool_weight.cols() != 1) {
        throw ValidationError("attention_pool: pooling weight must be feature_width x 1");
    }
    bool any = false;
    for (std::uint8_t m : mask) any = any || m != 0;
    if (!any) throw ValidationError("attention_pool: all rows masked");

    std::vector<T> scores(len);
    for (std::size_t i = 0; i < len; ++i) {
        if (mask[i]) {
            T acc = pool_bias;
            const T* row = features.row_ptr(i);
            for (std::size_t j = 0; j < width; ++j) acc += row[j] * pool_weight(j, 0);
            scores[i] = acc;
        } else {
            scores[i] = static_cast<T>(kMaskScore);
        }
    }

    PoolTraceT<T> tr;
    tr.alpha.resize(len);
    T mx = scores[0];
    for (T s : scores) mx = s > mx ? s : mx;
    T sum{};
    for (std::size_t i = 0; i < len; ++i) {
        tr.alpha[i] = std::exp(scores[i] - mx);
        sum += tr.alpha[i];
    }
    for (T& a : tr.alpha) a /= sum;

    tr.pooled.assign(width, T{});
    for (std::size_t i = 0; i < len; ++i) {
        const T a = tr.alpha[i];
        const T* row = features.row_ptr(i);
        for (std::size_t j = 0; j < width; ++j) tr.pooled[j] += a * row[j];
    }
    return tr;
}

template <typename T>
struct HeadTraceT {
    std::vector<T> pre_hidden, dropout_mask, dropped, activated;
    T scale = T{1};
    std::array<T, 2> logits{};
};

template <typename T>
HeadTraceT<T> head_core(const std::vector<T>& pooled, const ModelParamsT<T>& p,
                        const ModelConfig& config, const DropoutMode& mode) {
    const std::size_t width = config.feature_width();
    const std::size_t hidden = config.hidden_width();
    if (pooled.size() != width) throw ValidationError("head_forward: pooled width mismatch");

    HeadTraceT<T> tr;
    tr.pre_hidden.resize(hidden);
    for (std::size_t h = 0; h < hidden; ++h) {
        T acc = p.head_bias1(0, h);
        for (std::size_t j = 0; j < width; ++j) acc += pooled[j] * p.head_weight1(j, h);
        tr.pre_hidden[h] = acc;
    }

    const bool drop = mode.train && config.dropout_p > 0.0;
    tr.dropout_mask.assign(hidden, T{1});
    if (drop) {
        // Inverted dropout: surviving units are scaled so eval needs no rescale.
        SplitMix64 g(mix_seed(mode.key, kDropoutDomain));
        for (std::size_t h = 0; h < hidden; ++h) {
            tr.dropout_mask[h] = g.next_unit() >= config.dropout_p ? T{1} : T{0};
        }
        tr.scale = static_cast<T>(1.0 / (1.0 - config.dropout_p));
    }
    tr.dropped.resize(hidden);
    for (std::size_t h = 0; h < hidden; ++h) {
        tr.dropped[h] = tr.pre_hidden[h] * tr.dropout_mask[h] * tr.scale;
    }
    tr.activated.resize(hidden);
    for (std::size_t h = 0; h < hidden; ++h) {
        tr.activated[h] = tr.dropped[h] > T{} ? tr.dropped[h] : T{};
    }
    for (std::size_t c = 0; c < 2; ++c) {
        T acc = p.head_bias2(0, c);
        for (std::size_t h = 0; h < hidden; ++h) acc += tr.activated[h] * p.head_weight2(h, c);
        tr.logits[c] = acc;
    }
    return tr;
}

template <typename T>
void validate_param_shapes_t(const ModelParamsT<T>& p, const ModelConfig& config) {
    const std::size_t dim = config.dim;
    const std::size_t width = config.feature_width();
    const std::size_t hidden = config.hidden_width();
    auto check = [](bool ok, const char* what) {
        if (!ok) throw ValidationError(std::string("parameter shape mismatch: ") + what);
    };
    check(p.fine_table.rows() == kFineVocab && p.fine_table.cols() == dim, "fine_table");
    check(p.coarse_table.rows() == kCoarseVocab && p.coarse_table.cols() == dim, "coarse_table");
    for (const auto* attn : {&p.fine_attn, &p.coarse_attn}) {
        check(attn->w_query.rows() == dim && attn->w_query.cols() == dim, "w_query");
        check(attn->w_key.rows() == dim && attn->w_key.cols() == dim, "w_key");
        check(attn->w_value.rows() == dim && attn->w_value.cols() == dim, "w_value");
        check(attn->w_out.rows() == dim && attn->w_out.cols() == dim, "w_out");
    }
    check(p.pool_weight.rows() == width && p.pool_weight.cols() == 1, "pool_weight");
    check(p.pool_bias.rows() == 1 && p.pool_bias.cols() == 1, "pool_bias");
    check(p.head_weight1.rows() == width && p.head_weight1.cols() == hidden, "head_weight1");
    check(p.head_bias1.rows() == 1 && p.head_bias1.cols() == hidden, "head_bias1");
    check(p.head_weight2.rows() == hidden && p.head_weight2.cols() == 2, "head_weight2");
    check(p.head_bias2.rows() == 1 && p.head_bias2.cols() == 2, "head_bias2");
}

template <typename T>
struct CoreOut {
    Matrix<T> seq_emb, fine_emb, coarse_emb, descriptors;
    BlockTraceT<T> fine, coarse;
    Matrix<T> features;
    std::vector<std::uint8_t> mask;
    PoolTraceT<T> pool;
    HeadTraceT<T> head;
};

template <typename T>
CoreOut<T> forward_core(const EmbeddingBundle& bundle, const Matrix<T>& descriptors,
                        const ModelParamsT<T>& p, const ModelConfig& config,
                        const DropoutMode& mode) {
    config.validate();
    validate_param_shapes_t(p, config);
    const std::size_t len = bundle.seq_embedding.rows();
    if (bundle.seq_embedding.cols() != config.dim) {
        throw ValidationError("bundle '" + bundle.id + "': embedding width " +
                              std::to_string(bundle.seq_embedding.cols()) +
                              " must equal model width " + std::to_string(config.dim));
    }
    if (descriptors.rows() != len ||
        descriptors.cols() != static_cast<std::size_t>(kDescriptorWidth)) {
        throw ValidationError("bundle '" + bundle.id + "': descriptor matrix must be L x 8");
    }

    CoreOut<T> out;
    out.seq_emb = Matrix<T>(len, config.dim);
    for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t j = 0; j < config.dim; ++j) {
            out.seq_emb(i, j) = static_cast<T>(bundle.seq_embedding(i, j));
        }
    }
    out.descriptors = descriptors;
    out.fine_emb = gather_rows(p.fine_table, bundle.fine_tokens);
    out.coarse_emb = gather_rows(p.coarse_table, bundle.coarse_tokens);

    out.fine = attention_block_forward(out.fine_emb, out.seq_emb, p.fine_attn, config);
    out.coarse = attention_block_forward(out.coarse_emb, out.seq_emb, p.coarse_attn, config);

    // Feature rows: [sequence embedding | fine attention | coarse attention | descriptors].
    out.features = Matrix<T>(len, config.feature_width());
    copy_cols_inplace(out.features, out.seq_emb, 0);
    copy_cols_inplace(out.features, out.fine.out, config.dim);
    copy_cols_inplace(out.features, out.coarse.out, 2 * config.dim);
    copy_cols_inplace(out.features, out.descriptors, 3 * config.dim);

    out.mask.assign(len, 1);
    out.pool = pool_forward(out.features, out.mask, p.pool_weight, p.pool_bias(0, 0));
    out.head = head_core(out.pool.pooled, p, config, mode);
    return out;
}

BlockTrace to_public(BlockTraceT<double>&& tr) {
    BlockTrace out;
    out.q_rot = std::move(tr.q_rot);
    out.k_rot = std::move(tr.k_rot);
    out.v = std::move(tr.v);
    out.probs = std::move(tr.probs);
    out.concat = std::move(tr.concat);
    out.out = std::move(tr.out);
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    if (dim < 1) throw ValidationError("model config: dim must be at least 1");
    if (n_heads < 1) throw ValidationError("model config: n_heads must be at least 1");
    if (dim % n_heads != 0) {
        throw ValidationError("model config: dim must be divisible by n_heads");
    }
    if (head_width() % 2 != 0) {
        throw ValidationError("model config: per-head width must be even for rotary channels");
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
        throw ValidationError("model config: dropout_p must be in [0, 1)");
    }
    if (!(rope_base > 0.0)) throw ValidationError("model config: rope_base must be positive");
}

std::vector<std::pair<std::string, Mat*>> tensor_list(ModelParams& p) {
    return {
        {"fine_table", &p.fine_table},
        {"coarse_table", &p.coarse_table},
        {"fine_attn.w_query", &p.fine_attn.w_query},
        {"fine_attn.w_key", &p.fine_attn.w_key},
        {"fine_attn.w_value", &p.fine_attn.w_value},
        {"fine_attn.w_out", &p.fine_attn.w_out},
        {"coarse_attn.w_query", &p.coarse_attn.w_query},
        {"coarse_attn.w_key", &p.coarse_attn.w_key},
        {"coarse_attn.w_value", &p.coarse_attn.w_value},
        {"coarse_attn.w_out", &p.coarse_attn.w_out},
        {"pool_weight", &p.pool_weight},
        {"pool_bias", &p.pool_bias},
        {"head_weight1", &p.head_weight1},
        {"head_bias1", &p.head_bias1},
        {"head_weight2", &p.head_weight2},
        {"head_bias2", &p.head_bias2},
    };
}

std::vector<std::pair<std::string, const Mat*>> tensor_list(const ModelParams& p) {
    std::vector<std::pair<std::string, const Mat*>> out;
    for (auto& [name, mat] : tensor_list(const_cast<ModelParams&>(p))) {
        out.emplace_back(name, mat);
    }
    return out;
}

ModelParams zero_params(const ModelConfig& config) {
    config.validate();
    const std::size_t dim = config.dim;
    const std::size_t width = config.feature_width();
    const std::size_t hidden = config.hidden_width();
    ModelParams p;
    p.fine_table = Mat(kFineVocab, dim);
    p.coarse_table = Mat(kCoarseVocab, dim);
    for (auto* attn : {&p.fine_attn, &p.coarse_attn}) {
        attn->w_query = Mat(dim, dim);
        attn->w_key = Mat(dim, dim);
        attn->w_value = Mat(dim, dim);
        attn->w_out = Mat(dim, dim);
    }
    p.pool_weight = Mat(width, 1);
    p.pool_bias = Mat(1, 1);
    p.head_weight1 = Mat(width, hidden);
    p.head_bias1 = Mat(1, hidden);
    p.head_weight2 = Mat(hidden, 2);
    p.head_bias2 = Mat(1, 2);
    return p;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    ModelParams p = zero_params(config);
    std::uint64_t ordinal = 0;
    for (auto& [name, mat] : tensor_list(p)) {
        SplitMix64 g(mix_seed(seed, ordinal++));
        if (name == "fine_table" || name == "coarse_table") {
            for (double& v : mat->data()) v = 0.02 * g.next_gaussian();
        } else if (name.find("bias") != std::string::npos) {
            continue;  // biases start at zero
        } else {
            const double bound = 1.0 / std::sqrt(static_cast<double>(mat->rows()));
            for (double& v : mat->data()) v = bound * (2.0 * g.next_unit() - 1.0);
        }
    }
    return p;
}

ModelParamsT<float> params_to_f32(const ModelParams& p) {
    auto cast = [](const Mat& m) {
        MatF out(m.rows(), m.cols());
        for (std::size_t i = 0; i < m.size(); ++i) {
            out.data()[i] = static_cast<float>(m.data()[i]);
        }
        return out;
    };
    ModelParamsT<float> out;
    out.fine_table = cast(p.fine_table);
    out.coarse_table = cast(p.coarse_table);
    for (auto [src, dst] : {std::pair{&p.fine_attn, &out.fine_attn},
                            std::pair{&p.coarse_attn, &out.coarse_attn}}) {
        dst->w_query = cast(src->w_query);
        dst->w_key = cast(src->w_key);
        dst->w_value = cast(src->w_value);
        dst->w_out = cast(src->w_out);
    }
    out.pool_weight = cast(p.pool_weight);
    out.pool_bias = cast(p.pool_bias);
    out.head_weight1 = cast(p.head_weight1);
    out.head_bias1 = cast(p.head_bias1);
    out.head_weight2 = cast(p.head_weight2);
    out.head_bias2 = cast(p.head_bias2);
    return out;
}

void validate_param_shapes(const ModelParams& p, const ModelConfig& config) {
    validate_param_shapes_t(p, config);
}

Mat rope_rotate(const Mat& vectors, const std::vector<std::int64_t>& positions, double base) {
    return rope_rotate_t(vectors, positions, base);
}

Mat cross_attention(const Mat& query_emb, const Mat& seq_emb, const AttnParamsT<double>& attn,
                    const ModelConfig& config) {
    config.validate();
    if (query_emb.rows() != seq_emb.rows()) {
        throw ValidationError("cross_attention: query and sequence lengths differ");
    }
    if (query_emb.cols() != config.dim || seq_emb.cols() != config.dim) {
        throw ValidationError("cross_attention: input width must equal config dim");
    }
    return attention_block_forward(query_emb, seq_emb, attn, config).out;
}

PoolResult attention_pool(const Mat& features, const std::vector<std::uint8_t>& mask,
                          const Mat& pool_weight, double pool_bias) {
    auto tr = pool_forward(features, mask, pool_weight, pool_bias);
    return {std::move(tr.pooled), std::move(tr.alpha)};
}

std::array<double, 2> head_forward(const std::vector<double>& pooled, const ModelParams& p,
                                   const ModelConfig& config, const DropoutMode& mode) {
    return head_core(pooled, p, config, mode).logits;
}

ForwardTrace model_forward(const EmbeddingBundle& bundle, const Mat& descriptors,
                           const ModelParams& p, const ModelConfig& config,
                           const DropoutMode& mode) {
    CoreOut<double> core = forward_core(bundle, descriptors, p, config, mode);
    ForwardTrace tr;
    tr.seq_emb = std::move(core.seq_emb);
    tr.fine_emb = std::move(core.fine_emb);
    tr.coarse_emb = std::move(core.coarse_emb);
    tr.descriptors = std::move(core.descriptors);
    tr.fine_tokens = bundle.fine_tokens;
    tr.coarse_tokens = bundle.coarse_tokens;
    tr.fine = to_public(std::move(core.fine));
    tr.coarse = to_public(std::move(core.coarse));
    tr.features = std::move(core.features);
    tr.mask = std::move(core.mask);
    tr.alpha = std::move(core.pool.alpha);
    tr.pooled = std::move(core.pool.pooled);
    tr.pre_hidden = std::move(core.head.pre_hidden);
    tr.dropout_mask = std::move(core.head.dropout_mask);
    tr.dropped = std::move(core.head.dropped);
    tr.activated = std::move(core.head.activated);
    tr.dropout_scale = core.head.scale;
    tr.train = mode.train;
    tr.logits = core.head.logits;
    return tr;
}

std::array<float, 2> model_forward_f32(const EmbeddingBundle& bundle, const Mat& descriptors,
                                       const ModelParamsT<float>& p, const ModelConfig& config) {
    MatF desc(descriptors.rows(), descriptors.cols());
    for (std::size_t i = 0; i < descriptors.size(); ++i) {
        desc.data()[i] = static_cast<float>(descriptors.data()[i]);
    }
    DropoutMode eval;
    return forward_core(bundle, desc, p, config, eval).head.logits;
}

GradSet model_backward(const ForwardTrace& trace, int label, const ModelParams& p,
                       const ModelConfig& config) {
    if (label != 0 && label != 1) throw ValidationError("model_backward: label must be 0 or 1");
    config.validate();
    validate_param_shapes(p, config);
    const std::size_t len = trace.features.rows();
    const std::size_t dim = config.dim;
    const std::size_t width = config.feature_width();
    const std::size_t hidden = config.hidden_width();
    if (trace.alpha.size() != len || trace.pooled.size() != width ||
        trace.activated.size() != hidden) {
        throw ValidationError("model_backward: trace does not match config");
    }

    GradSet g = zero_params(config);

    // Cross-entropy + softmax: d logits = probabilities - one-hot(label).
    std::array<double, 2> dlogits = softmax2(trace.logits);
    dlogits[static_cast<std::size_t>(label)] -= 1.0;

    std::vector<double> d_activated(hidden, 0.0);
    for (std::size_t c = 0; c < 2; ++c) {
        g.head_bias2(0, c) = dlogits[c];
        for (std::size_t h = 0; h < hidden; ++h) {
            g.head_weight2(h, c) = trace.activated[h] * dlogits[c];
            d_activated[h] += p.head_weight2(h, c) * dlogits[c];
        }
    }

    std::vector<double> d_pre(hidden);
    for (std::size_t h = 0; h < hidden; ++h) {
        const double d_dropped = trace.dropped[h] > 0.0 ? d_activated[h] : 0.0;
        d_pre[h] = d_dropped * trace.dropout_mask[h] * trace.dropout_scale;
    }

    std::vector<double> d_pooled(width, 0.0);
    for (std::size_t h = 0; h < hidden; ++h) {
        g.head_bias1(0, h) = d_pre[h];
        for (std::size_t j = 0; j < width; ++j) {
            g.head_weight1(j, h) = trace.pooled[j] * d_pre[h];
            d_pooled[j] += p.head_weight1(j, h) * d_pre[h];
        }
    }

    // Attention pooling backward. Masked rows have alpha exactly 0, so they
    // contribute nothing and receive zero score gradient automatically.
    Mat d_features(len, width);
    std::vector<double> d_alpha(len, 0.0);
    for (std::size_t i = 0; i < len; ++i) {
        const double a = trace.alpha[i];
        const double* row = trace.features.row_ptr(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            d_features(i, j) = a * d_pooled[j];
            dot += d_pooled[j] * row[j];
        }
        d_alpha[i] = dot;
    }
    double alpha_dot = 0.0;
    for (std::size_t i = 0; i < len; ++i) alpha_dot += trace.alpha[i] * d_alpha[i];
    for (std::size_t i = 0; i < len; ++i) {
        const double d_score = trace.alpha[i] * (d_alpha[i] - alpha_dot);
        g.pool_bias(0, 0) += d_score;
        const double* row = trace.features.row_ptr(i);
        for (std::size_t j = 0; j < width; ++j) {
            g.pool_weight(j, 0) += d_score * row[j];
            d_features(i, j) += d_score * p.pool_weight(j, 0);
        }
    }

    // Feature concatenation: columns [dim, 2*dim) came from the fine block,
    // [2*dim, 3*dim) from the coarse block. Sequence-embedding and descriptor
    // columns are inputs, so their gradients stop here.
    const Mat d_fine_out = take_cols(d_features, dim, dim);
    const Mat d_coarse_out = take_cols(d_features, 2 * dim, dim);

    auto block_backward = [&](const BlockTrace& tr, const Mat& query_emb,
                              const AttnParamsT<double>& attn, const Mat& d_out,
                              AttnParamsT<double>& grads) {
        const std::size_t dk = config.head_width();
        grads.w_out = matmul_tn(tr.concat, d_out);
        const Mat d_concat = matmul_nt(d_out, attn.w_out);

        std::vector<std::int64_t> neg_positions(len);
        for (std::size_t i = 0; i < len; ++i) neg_positions[i] = -static_cast<std::int64_t>(i);

        Mat dq(len, dim), dkk(len, dim), dv(len, dim);
        const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
        for (std::size_t h = 0; h < config.n_heads; ++h) {
            const std::size_t c0 = h * dk;
            const Mat d_head = take_cols(d_concat, c0, dk);
            const Mat vh = take_cols(tr.v, c0, dk);
            const Mat& probs = tr.probs[h];

            Mat d_probs = matmul_nt(d_head, vh);
            copy_cols_inplace(dv, matmul_tn(probs, d_head), c0);

            // Softmax rows backward, then the 1/sqrt(dk) score scaling.
            Mat d_scores(len, len);
            for (std::size_t i = 0; i < len; ++i) {
                double rowdot = 0.0;
                for (std::size_t j = 0; j < len; ++j) rowdot += d_probs(i, j) * probs(i, j);
                for (std::size_t j = 0; j < len; ++j) {
                    d_scores(i, j) = probs(i, j) * (d_probs(i, j) - rowdot) * inv_sqrt_dk;
                }
            }

            Mat dq_rot = matmul(d_scores, take_cols(tr.k_rot, c0, dk));
            Mat dk_rot = matmul_tn(d_scores, take_cols(tr.q_rot, c0, dk));
            // Rotation is orthonormal, so the adjoint is rotation by -position.
            copy_cols_inplace(dq, rope_rotate(dq_rot, neg_positions, config.rope_base), c0);
            copy_cols_inplace(dkk, rope_rotate(dk_rot, neg_positions, config.rope_base), c0);
        }
        grads.w_query = matmul_tn(query_emb, dq);
        grads.w_key = matmul_tn(trace.seq_emb, dkk);
        grads.w_value = matmul_tn(trace.seq_emb, dv);
        return matmul_nt(dq, attn.w_query);  // gradient w.r.t. the query embedding rows
    };

    const Mat d_fine_emb = block_backward(trace.fine, trace.fine_emb, p.fine_attn, d_fine_out,
                                          g.fine_attn);
    const Mat d_coarse_emb = block_backward(trace.coarse, trace.coarse_emb, p.coarse_attn,
                                            d_coarse_out, g.coarse_attn);

    // Scatter-add into the embedding tables; rows never referenced stay zero.
    for (std::size_t i = 0; i < len; ++i) {
        const std::size_t fine_row = trace.fine_tokens[i];
        const std::size_t coarse_row = trace.coarse_tokens[i];
        for (std::size_t j = 0; j < dim; ++j) {
            g.fine_table(fine_row, j) += d_fine_emb(i, j);
            g.coarse_table(coarse_row, j) += d_coarse_emb(i, j);
        }
    }
    return g;
}

std::array<double, 2> softmax2(const std::array<double, 2>& logits) {
    const double mx = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - mx);
    const double e1 = std::exp(logits[1] - mx);
    const double sum = e0 + e1;
    return {e0 / sum, e1 / sum};
}

double cross_entropy_from_logits(const std::array<double, 2>& logits, int label) {
    if (label != 0 && label != 1) {
        throw ValidationError("cross_entropy_from_logits: label must be 0 or 1");
    }
    const double mx = std::max(logits[0], logits[1]);
    const double lse = mx + std::log(std::exp(logits[0] - mx) + std::exp(logits[1] - mx));
    return lse - logits[static_cast<std::size_t>(label)];
}

double positive_probability(const std::array<double, 2>& logits) {
    return softmax2(logits)[1];
}

std::vector<AttentionRow> export_attention(const ForwardTrace& trace,
                                           const ProteinRecord& record) {
    if (record.sequence.size() != trace.alpha.size()) {
        throw ValidationError("export_attention: record '" + record.id +
                              "' length differs from trace");
    }
    std::vector<AttentionRow> rows(trace.alpha.size());
    for (std::size_t i = 0; i < trace.alpha.size(); ++i) {
        rows[i] = {i + 1, record.sequence[i], trace.alpha[i]};
    }
    return rows;
}

}  // namespace vaxpred
