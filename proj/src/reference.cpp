#include "vaxpred/reference.hpp"

#include <cmath>
#include <vector>

// Everything here is written as directly as possible: gather, project, rotate,
// score, softmax, mix, pool, head, in one pass of plain loops over
// std::vector buffers. No code is shared with the kernel path on purpose.

namespace vaxpred::reference {

namespace {

using Grid = std::vector<std::vector<double>>;

Grid make_grid(std::size_t rows, std::size_t cols) {
    return Grid(rows, std::vector<double>(cols, 0.0));
}

// out[i][j] = sum_t in[i][t] * weight(t, j)
Grid project(const Grid& in, const Mat& weight) {
    Grid out = make_grid(in.size(), weight.cols());
    for (std::size_t i = 0; i < in.size(); ++i) {
        for (std::size_t j = 0; j < weight.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < weight.rows(); ++t) {
                acc += in[i][t] * weight(t, j);
            }
            out[i][j] = acc;
        }
    }
    return out;
}

// Rotate channel pair (2t, 2t+1) of columns [c0, c0+dk) by row * base^(-2t/dk).
void rotate_head(Grid& g, std::size_t c0, std::size_t dk, double base) {
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (std::size_t t = 0; t < dk / 2; ++t) {
            const double angle =
                static_cast<double>(i) *
                std::pow(base, -2.0 * static_cast<double>(t) / static_cast<double>(dk));
            const double c = std::cos(angle);
            const double s = std::sin(angle);
            const double x = g[i][c0 + 2 * t];
            const double y = g[i][c0 + 2 * t + 1];
            g[i][c0 + 2 * t] = x * c - y * s;
            g[i][c0 + 2 * t + 1] = x * s + y * c;
        }
    }
}

Grid attention_block(const Grid& query_emb, const Grid& seq_emb, const AttnParamsT<double>& attn,
                     const ModelConfig& config) {
    const std::size_t len = query_emb.size();
    const std::size_t dim = config.dim;
    const std::size_t dk = config.head_width();

    Grid q = project(query_emb, attn.w_query);
    Grid k = project(seq_emb, attn.w_key);
    Grid v = project(seq_emb, attn.w_value);

    Grid mixed = make_grid(len, dim);
    for (std::size_t h = 0; h < config.n_heads; ++h) {
        const std::size_t c0 = h * dk;
        rotate_head(q, c0, dk, config.rope_base);
        rotate_head(k, c0, dk, config.rope_base);

        for (std::size_t i = 0; i < len; ++i) {
            std::vector<double> row(len);
            for (std::size_t j = 0; j < len; ++j) {
                double dot = 0.0;
                for (std::size_t t = 0; t < dk; ++t) {
                    dot += q[i][c0 + t] * k[j][c0 + t];
                }
                row[j] = dot / std::sqrt(static_cast<double>(dk));
            }
            double mx = row[0];
            for (double s : row) mx = s > mx ? s : mx;
            double denom = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                row[j] = std::exp(row[j] - mx);
                denom += row[j];
            }
            for (std::size_t j = 0; j < len; ++j) {
                const double weight = row[j] / denom;
                for (std::size_t t = 0; t < dk; ++t) {
                    mixed[i][c0 + t] += weight * v[j][c0 + t];
                }
            }
        }
    }
    return project(mixed, attn.w_out);
}

}  // namespace

std::array<double, 2> forward_logits(const EmbeddingBundle& bundle, const Mat& descriptors,
                                     const ModelParams& p, const ModelConfig& config) {
    config.validate();
    const std::size_t len = bundle.seq_embedding.rows();
    const std::size_t dim = config.dim;

    Grid seq_emb = make_grid(len, dim);
    for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            seq_emb[i][j] = static_cast<double>(bundle.seq_embedding(i, j));
        }
    }
    Grid fine_emb = make_grid(len, dim);
    Grid coarse_emb = make_grid(len, dim);
    for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            fine_emb[i][j] = p.fine_table(bundle.fine_tokens[i], j);
            coarse_emb[i][j] = p.coarse_table(bundle.coarse_tokens[i], j);
        }
    }

    Grid fine_out = attention_block(fine_emb, seq_emb, p.fine_attn, config);
    Grid coarse_out = attention_block(coarse_emb, seq_emb, p.coarse_attn, config);

    const std::size_t width = config.feature_width();
    Grid features = make_grid(len, width);
    for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            features[i][j] = seq_emb[i][j];
            features[i][dim + j] = fine_out[i][j];
            features[i][2 * dim + j] = coarse_out[i][j];
        }
        for (std::size_t j = 0; j < static_cast<std::size_t>(kDescriptorWidth); ++j) {
            features[i][3 * dim + j] = descriptors(i, j);
        }
    }

    std::vector<double> scores(len);
    for (std::size_t i = 0; i < len; ++i) {
        double acc = p.pool_bias(0, 0);
        for (std::size_t j = 0; j < width; ++j) acc += features[i][j] * p.pool_weight(j, 0);
        scores[i] = acc;
    }
    double mx = scores[0];
    for (double s : scores) mx = s > mx ? s : mx;
    double denom = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
        scores[i] = std::exp(scores[i] - mx);
        denom += scores[i];
    }
    std::vector<double> pooled(width, 0.0);
    for (std::size_t i = 0; i < len; ++i) {
        const double alpha = scores[i] / denom;
        for (std::size_t j = 0; j < width; ++j) pooled[j] += alpha * features[i][j];
    }

    const std::size_t hidden = config.hidden_width();
    std::vector<double> activated(hidden);
    for (std::size_t h = 0; h < hidden; ++h) {
        double acc = p.head_bias1(0, h);
        for (std::size_t j = 0; j < width; ++j) acc += pooled[j] * p.head_weight1(j, h);
        activated[h] = acc > 0.0 ? acc : 0.0;
    }
    std::array<double, 2> logits{};
    for (std::size_t c = 0; c < 2; ++c) {
        double acc = p.head_bias2(0, c);
        for (std::size_t h = 0; h < hidden; ++h) acc += activated[h] * p.head_weight2(h, c);
        logits[c] = acc;
    }
    return logits;
}

}  // namespace vaxpred::reference
