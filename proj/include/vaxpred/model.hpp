#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vaxpred/common.hpp"
#include "vaxpred/dataset.hpp"
#include "vaxpred/embedio.hpp"
#include "vaxpred/matrix.hpp"

namespace vaxpred {

/// Architecture hyperparameters. `dim` is the shared width of the sequence
/// embedding, the two structure-token tables, and all attention projections.
struct ModelConfig {
    std::size_t dim = 16;
    std::size_t n_heads = 8;
    std::size_t hidden = 0;  // width of the head's hidden layer; 0 means dim
    double dropout_p = 0.1;
    double rope_base = 10000.0;

    std::size_t head_width() const { return dim / n_heads; }
    std::size_t hidden_width() const { return hidden == 0 ? dim : hidden; }
    /// Width of the pooled feature row: sequence embedding, two attention
    /// outputs, and the 8 physicochemical descriptor columns.
    std::size_t feature_width() const { return 3 * dim + kDescriptorWidth; }

    /// Errors: dim or n_heads < 1, dim not divisible by n_heads, odd per-head
    /// width (the rotary map needs channel pairs), dropout outside [0, 1),
    /// or rope_base <= 0.
    void validate() const;
};

template <typename T>
struct AttnParamsT {
    Matrix<T> w_query, w_key, w_value, w_out;  // each dim x dim
};

template <typename T>
struct ModelParamsT {
    Matrix<T> fine_table;    // 20 x dim
    Matrix<T> coarse_table;  // 4096 x dim
    AttnParamsT<T> fine_attn;
    AttnParamsT<T> coarse_attn;
    Matrix<T> pool_weight;   // feature_width x 1
    Matrix<T> pool_bias;     // 1 x 1
    Matrix<T> head_weight1;  // feature_width x hidden
    Matrix<T> head_bias1;    // 1 x hidden
    Matrix<T> head_weight2;  // hidden x 2
    Matrix<T> head_bias2;    // 1 x 2
};

using ModelParams = ModelParamsT<double>;
/// Gradients mirror the parameter tensors one-to-one.
using GradSet = ModelParamsT<double>;

/// All 16 parameter tensors in a fixed order shared by the optimizer, the
/// checkpoint format, and the finite-difference tests.
std::vector<std::pair<std::string, Mat*>> tensor_list(ModelParams& p);
std::vector<std::pair<std::string, const Mat*>> tensor_list(const ModelParams& p);

/// All-zero parameters with the shapes implied by the config.
ModelParams zero_params(const ModelConfig& config);

/// Seeded initialization: linear weights uniform in +-1/sqrt(fan_in), biases
/// zero, token embedding tables gaussian with standard deviation 0.02.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

ModelParamsT<float> params_to_f32(const ModelParams& p);

/// Throws ValidationError if any tensor shape disagrees with the config.
void validate_param_shapes(const ModelParams& p, const ModelConfig& config);

/// Dropout behaviour for one forward pass. In train mode the mask is a pure
/// function of `key`, so replaying a key reproduces the exact mask.
struct DropoutMode {
    bool train = false;
    std::uint64_t key = 0;
};

/// Rotary position map: channel pair (2t, 2t+1) of row r is rotated by angle
/// positions[r] * base^(-2t / width). Norm-preserving; position 0 is identity.
/// Errors: odd width, positions size differing from rows, base <= 0.
Mat rope_rotate(const Mat& vectors, const std::vector<std::int64_t>& positions, double base);

/// One cross-attention block: queries from `query_emb`, keys and values from
/// `seq_emb`, rotary positions applied per head to queries and keys, softmax
/// rows scaled by 1/sqrt(head_width), head outputs concatenated and passed
/// through the output projection. Both inputs are L x dim; so is the result.
Mat cross_attention(const Mat& query_emb, const Mat& seq_emb, const AttnParamsT<double>& attn,
                    const ModelConfig& config);

struct PoolResult {
    std::vector<double> pooled;  // feature-width row mixed by alpha
    std::vector<double> alpha;   // attention weights; exactly 0 at masked rows
};

/// Attention pooling over feature rows. mask[i] == 1 keeps row i; masked rows
/// get score -1e9 before the max-subtracted softmax, which underflows to an
/// exact zero weight. Errors: empty input, mask size mismatch, all rows masked.
PoolResult attention_pool(const Mat& features, const std::vector<std::uint8_t>& mask,
                          const Mat& pool_weight, double pool_bias);

/// Prediction head: linear -> dropout -> relu -> linear to two logits.
std::array<double, 2> head_forward(const std::vector<double>& pooled, const ModelParams& p,
                                   const ModelConfig& config, const DropoutMode& mode);

/// Everything backward needs, captured during the forward pass.
struct BlockTrace {
    Mat q_rot, k_rot, v;     // L x dim, queries/keys already rotated per head
    std::vector<Mat> probs;  // per head, L x L softmax rows
    Mat concat;              // L x dim, heads side by side before w_out
    Mat out;                 // L x dim
};

struct ForwardTrace {
    Mat seq_emb;                             // L x dim
    Mat fine_emb, coarse_emb;                // L x dim, gathered table rows
    Mat descriptors;                         // L x 8
    std::vector<std::uint8_t> fine_tokens;
    std::vector<std::uint16_t> coarse_tokens;
    BlockTrace fine, coarse;
    Mat features;                            // L x feature_width
    std::vector<std::uint8_t> mask;
    std::vector<double> alpha;
    std::vector<double> pooled;
    std::vector<double> pre_hidden;          // first linear output
    std::vector<double> dropout_mask;        // 0/1 per hidden unit (train only)
    std::vector<double> dropped;             // after dropout scaling
    std::vector<double> activated;           // after relu
    double dropout_scale = 1.0;
    bool train = false;
    std::array<double, 2> logits{};
};

/// Full forward pass for one record. `descriptors` must be L x 8 for the same
/// sequence the bundle was built from. Errors: embedding width != config.dim,
/// descriptor shape mismatch, parameter shape mismatch.
ForwardTrace model_forward(const EmbeddingBundle& bundle, const Mat& descriptors,
                           const ModelParams& p, const ModelConfig& config,
                           const DropoutMode& mode);

/// Reverse-mode gradients of the cross-entropy loss at `label` with respect to
/// every parameter tensor. Embedding-table gradients are scatter-adds into the
/// rows named by the token streams; untouched rows stay exactly zero.
GradSet model_backward(const ForwardTrace& trace, int label, const ModelParams& p,
                       const ModelConfig& config);

/// Float32 inference path (eval mode only); roughly twice the kernel
/// throughput, excluded from every tolerance-bearing contract.
std::array<float, 2> model_forward_f32(const EmbeddingBundle& bundle, const Mat& descriptors,
                                       const ModelParamsT<float>& p, const ModelConfig& config);

std::array<double, 2> softmax2(const std::array<double, 2>& logits);
double cross_entropy_from_logits(const std::array<double, 2>& logits, int label);
/// Probability of the positive class.
double positive_probability(const std::array<double, 2>& logits);

struct AttentionRow {
    std::size_t position = 0;  // 1-based residue position
    char residue = 0;
    double alpha = 0.0;
};

/// Per-residue pooling weights for one record, for inspection and export.
/// Errors: record length differs from the trace.
std::vector<AttentionRow> export_attention(const ForwardTrace& trace, const ProteinRecord& record);

}  // namespace vaxpred
