#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "vaxpred/descriptors.hpp"
#include "vaxpred/model.hpp"
#include "vaxpred/reference.hpp"
#include "vaxpred/rng.hpp"
#include "testutil.hpp"

using namespace vaxpred;

namespace {

Mat mat_from(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = rows.begin()->size();
    Mat m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        std::size_t j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

Mat random_mat(SplitMix64& rng, std::size_t r, std::size_t c) {
    Mat m(r, c);
    for (double& v : m.data()) v = rng.next_gaussian();
    return m;
}

double row_dot(const Mat& a, const Mat& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(0, j) * b(0, j);
    return s;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent shapes") {
    ModelConfig good;
    CHECK_NOTHROW(good.validate());

    ModelConfig c = good;
    c.dim = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = good;
    c.n_heads = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = good;
    c.dim = 5;
    c.n_heads = 2;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = good;
    c.dim = 2;
    c.n_heads = 2;  // per-head width 1 cannot form rotation pairs
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = good;
    c.dropout_p = 1.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = good;
    c.dropout_p = -0.1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = good;
    c.rope_base = 0.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("rotary map leaves position zero untouched") {
    SplitMix64 rng(1);
    const Mat m = random_mat(rng, 6, 8);
    const std::vector<std::int64_t> zeros(6, 0);
    const Mat rotated = rope_rotate(m, zeros, 10000.0);
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(rotated.data()[i] == m.data()[i]);
    }
}

TEST_CASE("rotary map preserves row norms") {
    SplitMix64 rng(2);
    const Mat m = random_mat(rng, 10, 8);
    std::vector<std::int64_t> positions(10);
    for (auto& p : positions) p = static_cast<std::int64_t>(rng.next_below(200));
    const Mat rotated = rope_rotate(m, positions, 10000.0);
    for (std::size_t i = 0; i < 10; ++i) {
        double before = 0.0, after = 0.0;
        for (std::size_t j = 0; j < 8; ++j) {
            before += m(i, j) * m(i, j);
            after += rotated(i, j) * rotated(i, j);
        }
        CHECK(after == doctest::Approx(before).epsilon(1e-12));
    }
}

TEST_CASE("rotary dot products depend only on relative offset") {
    SplitMix64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const Mat q = random_mat(rng, 1, 4);
        const Mat k = random_mat(rng, 1, 4);
        const double a = row_dot(rope_rotate(q, {5}, 10000.0), rope_rotate(k, {3}, 10000.0));
        const double b = row_dot(rope_rotate(q, {7}, 10000.0), rope_rotate(k, {5}, 10000.0));
        CHECK(a == doctest::Approx(b).epsilon(1e-9));
    }
}

TEST_CASE("rotating by negated positions undoes the map") {
    SplitMix64 rng(4);
    const Mat m = random_mat(rng, 5, 6);
    std::vector<std::int64_t> positions = {0, 3, 11, 42, 7};
    std::vector<std::int64_t> negated;
    for (auto p : positions) negated.push_back(-p);
    const Mat back = rope_rotate(rope_rotate(m, positions, 10000.0), negated, 10000.0);
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(back.data()[i] == doctest::Approx(m.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("rotary map validates its inputs") {
    Mat odd(2, 3, 1.0);
    CHECK_THROWS_AS(rope_rotate(odd, {0, 1}, 10000.0), ValidationError);
    Mat ok(2, 4, 1.0);
    CHECK_THROWS_AS(rope_rotate(ok, {0}, 10000.0), ValidationError);
    CHECK_THROWS_AS(rope_rotate(ok, {0, 1}, 0.0), ValidationError);
}

TEST_CASE("single-row attention reduces to the value projection") {
    ModelConfig config;
    config.dim = 2;
    config.n_heads = 1;
    AttnParamsT<double> attn{mat_from({{1, 0}, {0, 1}}), mat_from({{1, 0}, {0, 1}}),
                             mat_from({{1, 2}, {3, 4}}), mat_from({{1, 0}, {0, 1}})};
    const Mat query = mat_from({{0.3, -0.7}});
    const Mat seq = mat_from({{1, 2}});
    const Mat out = cross_attention(query, seq, attn, config);
    // One key: softmax weight 1, so the output is seq * W_V * W_O = (7, 10).
    CHECK(out(0, 0) == doctest::Approx(7.0).epsilon(1e-12));
    CHECK(out(0, 1) == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("zero queries attend uniformly") {
    ModelConfig config;
    config.dim = 2;
    config.n_heads = 1;
    AttnParamsT<double> attn{Mat(2, 2, 0.0), mat_from({{1, 0}, {0, 1}}),
                             mat_from({{1, 2}, {3, 4}}), mat_from({{0.5, -1}, {1, 0.5}})};
    const Mat query = mat_from({{1, 0}, {0, 1}, {2, 2}});
    const Mat seq = mat_from({{1, 2}, {3, 4}, {-1, 0}});
    const Mat out = cross_attention(query, seq, attn, config);

    // All scores are zero, so each output row is mean(V) * W_O.
    Mat v(3, 2);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            v(i, j) = seq(i, 0) * attn.w_value(0, j) + seq(i, 1) * attn.w_value(1, j);
        }
    }
    double mean0 = (v(0, 0) + v(1, 0) + v(2, 0)) / 3.0;
    double mean1 = (v(0, 1) + v(1, 1) + v(2, 1)) / 3.0;
    const double expect0 = mean0 * attn.w_out(0, 0) + mean1 * attn.w_out(1, 0);
    const double expect1 = mean0 * attn.w_out(0, 1) + mean1 * attn.w_out(1, 1);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out(i, 0) == doctest::Approx(expect0).epsilon(1e-12));
        CHECK(out(i, 1) == doctest::Approx(expect1).epsilon(1e-12));
    }
}

TEST_CASE("two-position attention matches a hand-rolled computation") {
    // d = 2, one head: the rotary angle at position 1 is exactly 1 radian.
    ModelConfig config;
    config.dim = 2;
    config.n_heads = 1;
    AttnParamsT<double> attn{mat_from({{1, 0}, {0, 1}}), mat_from({{1, 0}, {0, 1}}),
                             mat_from({{1, 2}, {3, 4}}), mat_from({{0.5, -1}, {1, 0.5}})};
    const Mat query = mat_from({{1, 0}, {0, 1}});
    const Mat seq = mat_from({{1, 2}, {3, 4}});
    const Mat out = cross_attention(query, seq, attn, config);

    // Frozen from an independent scalar evaluation of the same contract.
    CHECK(out(0, 0) == doctest::Approx(15.508622881289153).epsilon(1e-12));
    CHECK(out(0, 1) == doctest::Approx(-2.2510778601611445).epsilon(1e-12));
    CHECK(out(1, 0) == doctest::Approx(28.453343493199394).epsilon(1e-12));
    CHECK(out(1, 1) == doctest::Approx(-3.8691679366499248).epsilon(1e-12));
}

TEST_CASE("attention pooling weights rows by a softmax over scores") {
    const Mat features = mat_from({{1, 0, 0}, {0, 1, 0}});
    Mat weight(3, 1);
    weight(0, 0) = 1;
    weight(1, 0) = 2;
    weight(2, 0) = 3;
    const auto result = attention_pool(features, {1, 1}, weight, 0.5);
    // Scores are 1.5 and 2.5; frozen softmax values.
    CHECK(result.alpha[0] == doctest::Approx(0.2689414213699951).epsilon(1e-12));
    CHECK(result.alpha[1] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
    CHECK(result.pooled[0] == doctest::Approx(result.alpha[0]).epsilon(1e-12));
    CHECK(result.pooled[1] == doctest::Approx(result.alpha[1]).epsilon(1e-12));
    CHECK(result.pooled[2] == 0.0);
}

TEST_CASE("pooling corner cases") {
    const Mat features = mat_from({{1, 0, 0}, {0, 1, 0}});
    SUBCASE("single row gets weight one") {
        const Mat one = mat_from({{4, 5, 6}});
        Mat w(3, 1, 0.25);
        const auto result = attention_pool(one, {1}, w, 0.0);
        REQUIRE(result.alpha.size() == 1);
        CHECK(result.alpha[0] == 1.0);
        CHECK(result.pooled[1] == doctest::Approx(5.0));
    }
    SUBCASE("zero weights pool uniformly") {
        const auto result = attention_pool(features, {1, 1}, Mat(3, 1, 0.0), 0.0);
        CHECK(result.alpha[0] == doctest::Approx(0.5));
        CHECK(result.alpha[1] == doctest::Approx(0.5));
    }
    SUBCASE("masked rows get exactly zero weight") {
        Mat w(3, 1, 1.0);
        const auto result = attention_pool(features, {1, 0}, w, 0.0);
        CHECK(result.alpha[0] == 1.0);
        CHECK(result.alpha[1] == 0.0);  // exact zero, not merely small
        CHECK(result.pooled[0] == doctest::Approx(1.0));
        CHECK(result.pooled[1] == 0.0);
    }
    SUBCASE("all rows masked is an error") {
        Mat w(3, 1, 1.0);
        CHECK_THROWS_AS(attention_pool(features, {0, 0}, w, 0.0), ValidationError);
    }
    SUBCASE("mask length must match") {
        Mat w(3, 1, 1.0);
        CHECK_THROWS_AS(attention_pool(features, {1, 1, 1}, w, 0.0), ValidationError);
    }
}

TEST_CASE("zero parameters yield even odds and ln 2 loss") {
    ModelConfig config;
    config.dim = 4;
    config.n_heads = 1;
    config.dropout_p = 0.0;
    const ModelParams params = zero_params(config);
    ProteinRecord rec{"z1", "MKTAYIAK", 1, "virus"};
    const auto bundle = synthetic_bundle(rec, config.dim, 3);
    const Mat descriptors = sequence_descriptors(rec.sequence);
    DropoutMode eval;
    const auto trace = model_forward(bundle, descriptors, params, config, eval);
    CHECK(trace.logits[0] == 0.0);
    CHECK(trace.logits[1] == 0.0);
    const auto probs = softmax2(trace.logits);
    CHECK(probs[0] == doctest::Approx(0.5));
    CHECK(probs[1] == doctest::Approx(0.5));
    CHECK(cross_entropy_from_logits(trace.logits, 1) == doctest::Approx(std::log(2.0)));
    CHECK(positive_probability(trace.logits) == doctest::Approx(0.5));
    CHECK_THROWS_AS(cross_entropy_from_logits(trace.logits, 2), ValidationError);
}

TEST_CASE("forward pass validates input shapes") {
    ModelConfig config;
    config.dim = 8;
    config.n_heads = 2;
    const ModelParams params = init_params(config, 1);
    ProteinRecord rec{"v1", "MKTAYIAK", 0, "virus"};
    const Mat descriptors = sequence_descriptors(rec.sequence);
    DropoutMode eval;

    const auto narrow = synthetic_bundle(rec, 4, 1);
    CHECK_THROWS_AS(model_forward(narrow, descriptors, params, config, eval), ValidationError);

    const auto bundle = synthetic_bundle(rec, 8, 1);
    Mat short_desc(4, 8, 0.0);
    CHECK_THROWS_AS(model_forward(bundle, short_desc, params, config, eval), ValidationError);
    Mat wide_desc(8, 9, 0.0);
    CHECK_THROWS_AS(model_forward(bundle, wide_desc, params, config, eval), ValidationError);
}

TEST_CASE("forward pass agrees with the serial reference implementation") {
    SplitMix64 rng(11);
    const std::size_t dims[] = {2, 4, 8, 16};
    for (int trial = 0; trial < 20; ++trial) {
        ModelConfig config;
        config.dim = dims[trial % 4];
        config.n_heads = (trial % 2 == 0 || config.dim < 4) ? 1 : 2;
        config.dropout_p = 0.0;
        const auto rec = vaxtest::random_record(rng, 1, 12, "r" + std::to_string(trial));
        const auto bundle = synthetic_bundle(rec, config.dim, rng.next());
        const Mat descriptors = sequence_descriptors(rec.sequence);
        const ModelParams params = init_params(config, rng.next());
        DropoutMode eval;
        const auto trace = model_forward(bundle, descriptors, params, config, eval);
        const auto ref = reference::forward_logits(bundle, descriptors, params, config);
        CHECK(std::abs(trace.logits[0] - ref[0]) <= 1e-9);
        CHECK(std::abs(trace.logits[1] - ref[1]) <= 1e-9);
    }
}

TEST_CASE("forward pass is bit-reproducible") {
    ModelConfig config;
    config.dim = 16;
    config.n_heads = 4;
    const ModelParams params = init_params(config, 5);
    ProteinRecord rec{"d1", "MKTAYIAKQRQISFVKSHFSRQLEERLGLIEVQ", 1, "tumor"};
    const auto bundle = synthetic_bundle(rec, config.dim, 5);
    const Mat descriptors = sequence_descriptors(rec.sequence);
    DropoutMode eval;
    const auto a = model_forward(bundle, descriptors, params, config, eval);
    const auto b = model_forward(bundle, descriptors, params, config, eval);
    CHECK(a.logits[0] == b.logits[0]);
    CHECK(a.logits[1] == b.logits[1]);
}

TEST_CASE("dropout trace obeys the inverted-scaling contract") {
    ModelConfig config;
    config.dim = 8;
    config.n_heads = 2;
    config.dropout_p = 0.5;
    const ModelParams params = init_params(config, 9);
    ProteinRecord rec{"t1", "MKTAYIAKQRQISFVK", 1, "bacteria"};
    const auto bundle = synthetic_bundle(rec, config.dim, 9);
    const Mat descriptors = sequence_descriptors(rec.sequence);

    DropoutMode train{true, 1234};
    const auto trace = model_forward(bundle, descriptors, params, config, train);
    REQUIRE(trace.dropout_mask.size() == config.hidden_width());
    CHECK(trace.dropout_scale == doctest::Approx(2.0));
    for (std::size_t i = 0; i < trace.dropout_mask.size(); ++i) {
        const double m = trace.dropout_mask[i];
        CHECK((m == 0.0 || m == 1.0));
        CHECK(trace.dropped[i] == doctest::Approx(trace.pre_hidden[i] * m * 2.0));
        CHECK(trace.activated[i] == doctest::Approx(std::max(0.0, trace.dropped[i])));
    }

    // Same key, same mask; an eval pass matches a train pass with p = 0.
    const auto again = model_forward(bundle, descriptors, params, config, train);
    CHECK(trace.dropout_mask == again.dropout_mask);
    CHECK(trace.logits[0] == again.logits[0]);

    ModelConfig no_drop = config;
    no_drop.dropout_p = 0.0;
    DropoutMode train_nodrop{true, 77};
    DropoutMode eval;
    const auto t0 = model_forward(bundle, descriptors, params, no_drop, train_nodrop);
    const auto t1 = model_forward(bundle, descriptors, params, no_drop, eval);
    CHECK(t0.logits[0] == t1.logits[0]);
    CHECK(t0.logits[1] == t1.logits[1]);
}

TEST_CASE("loss gradient starts from softmax minus one-hot") {
    ModelConfig config;
    config.dim = 4;
    config.n_heads = 1;
    config.dropout_p = 0.0;
    const ModelParams params = init_params(config, 21);
    ProteinRecord rec{"g1", "MKTAYIAKQR", 1, "virus"};
    const auto bundle = synthetic_bundle(rec, config.dim, 21);
    const Mat descriptors = sequence_descriptors(rec.sequence);
    DropoutMode eval;
    const auto trace = model_forward(bundle, descriptors, params, config, eval);

    for (int label : {0, 1}) {
        const GradSet grads = model_backward(trace, label, params, config);
        const auto probs = softmax2(trace.logits);
        CHECK(grads.head_bias2(0, 0) == doctest::Approx(probs[0] - (label == 0 ? 1.0 : 0.0)));
        CHECK(grads.head_bias2(0, 1) == doctest::Approx(probs[1] - (label == 1 ? 1.0 : 0.0)));
    }
}

TEST_CASE("analytic gradients match finite differences on a small instance") {
    SplitMix64 rng(31);
    ModelConfig config;
    config.dim = 4;
    config.n_heads = 1;
    config.dropout_p = 0.1;
    const auto rec = vaxtest::random_record(rng, 3, 3, "fd1");
    const auto bundle = synthetic_bundle(rec, config.dim, 31);
    const Mat descriptors = sequence_descriptors(rec.sequence);
    const ModelParams params = init_params(config, 31);
    DropoutMode train{true, 555};
    const auto result =
        vaxtest::finite_difference_check(bundle, descriptors, params, config, 1, train);
    INFO("worst entry: ", result.worst);
    CHECK(result.max_rel_err < 1e-4);
}

TEST_CASE("embedding gradients only touch rows named by the tokens") {
    ModelConfig config;
    config.dim = 4;
    config.n_heads = 1;
    config.dropout_p = 0.0;
    const ModelParams params = init_params(config, 41);

    EmbeddingBundle bundle;
    bundle.id = "rows1";
    bundle.seq_embedding = MatF(3, 4);
    SplitMix64 rng(41);
    for (float& v : bundle.seq_embedding.data()) v = static_cast<float>(rng.next_gaussian());
    bundle.fine_tokens = {0, 1, 2};
    bundle.coarse_tokens = {5, 7, 7};

    const Mat descriptors = sequence_descriptors("MKT");
    DropoutMode eval;
    const auto trace = model_forward(bundle, descriptors, params, config, eval);
    const GradSet grads = model_backward(trace, 0, params, config);

    double touched = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
        touched += std::abs(grads.coarse_table(5, j)) + std::abs(grads.coarse_table(7, j));
        touched += std::abs(grads.fine_table(0, j)) + std::abs(grads.fine_table(1, j)) +
                   std::abs(grads.fine_table(2, j));
    }
    CHECK(touched > 0.0);
    for (std::size_t r = 0; r < grads.coarse_table.rows(); ++r) {
        if (r == 5 || r == 7) continue;
        for (std::size_t j = 0; j < 4; ++j) CHECK(grads.coarse_table(r, j) == 0.0);
    }
    for (std::size_t r = 3; r < grads.fine_table.rows(); ++r) {
        for (std::size_t j = 0; j < 4; ++j) CHECK(grads.fine_table(r, j) == 0.0);
    }
}

TEST_CASE("float32 inference stays close to the double path") {
    SplitMix64 rng(51);
    for (int trial = 0; trial < 10; ++trial) {
        ModelConfig config;
        config.dim = 16;
        config.n_heads = 4;
        config.dropout_p = 0.0;
        const auto rec = vaxtest::random_record(rng, 5, 30, "f" + std::to_string(trial));
        const auto bundle = synthetic_bundle(rec, config.dim, rng.next());
        const Mat descriptors = sequence_descriptors(rec.sequence);
        const ModelParams params = init_params(config, rng.next());
        DropoutMode eval;
        const auto wide = model_forward(bundle, descriptors, params, config, eval);
        const auto narrow = model_forward_f32(bundle, descriptors, params_to_f32(params), config);
        for (int j = 0; j < 2; ++j) {
            const double tol = 1e-3 * std::max(1.0, std::abs(wide.logits[j]));
            CHECK(std::abs(wide.logits[j] - static_cast<double>(narrow[j])) < tol);
        }
    }
}

TEST_CASE("attention export lines up with the record") {
    ModelConfig config;
    config.dim = 8;
    config.n_heads = 2;
    const ModelParams params = init_params(config, 61);
    ProteinRecord rec{"e1", "MKTAYIAKQR", 1, "tumor"};
    const auto bundle = synthetic_bundle(rec, config.dim, 61);
    const Mat descriptors = sequence_descriptors(rec.sequence);
    DropoutMode eval;
    const auto trace = model_forward(bundle, descriptors, params, config, eval);

    const auto rows = export_attention(trace, rec);
    REQUIRE(rows.size() == rec.sequence.size());
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].position == i + 1);
        CHECK(rows[i].residue == rec.sequence[i]);
        CHECK(rows[i].alpha == trace.alpha[i]);
        total += rows[i].alpha;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    ProteinRecord longer = rec;
    longer.sequence += "AA";
    CHECK_THROWS_AS(export_attention(trace, longer), ValidationError);
}

TEST_CASE("parameter initialization is seeded and shaped") {
    ModelConfig config;
    config.dim = 8;
    config.n_heads = 2;
    const ModelParams a = init_params(config, 3);
    const ModelParams b = init_params(config, 3);
    const ModelParams c = init_params(config, 4);
    CHECK_NOTHROW(validate_param_shapes(a, config));

    const auto la = tensor_list(a);
    const auto lb = tensor_list(b);
    const auto lc = tensor_list(c);
    REQUIRE(la.size() == 16);
    bool any_diff = false;
    for (std::size_t t = 0; t < la.size(); ++t) {
        CHECK(la[t].second->data() == lb[t].second->data());
        if (la[t].second->data() != lc[t].second->data()) any_diff = true;
        if (la[t].first.find("bias") != std::string::npos) {
            for (double v : la[t].second->data()) CHECK(v == 0.0);
        }
    }
    CHECK(any_diff);

    ModelParams bad = a;
    bad.head_weight2 = Mat(3, 3, 0.0);
    CHECK_THROWS_AS(validate_param_shapes(bad, config), ValidationError);
}
