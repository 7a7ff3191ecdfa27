#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>

#include "vaxpred/descriptors.hpp"

using namespace vaxpred;

TEST_CASE("alanine descriptor row matches the published constants") {
    const auto d = residue_descriptors('A');
    CHECK(d[0] == 0.008);
    CHECK(d[1] == 0.134);
    CHECK(d[2] == -0.475);
    CHECK(d[3] == -0.039);
    CHECK(d[4] == 0.181);
    CHECK(d[5] == 0.07);
    CHECK(d[6] == -1.73);
    CHECK(d[7] == 0.09);
}

TEST_CASE("descriptor table checksum guards against accidental edits") {
    const Mat& table = descriptor_table();
    REQUIRE(table.rows() == 20);
    REQUIRE(table.cols() == 8);
    double total = 0.0, total_abs = 0.0;
    for (double v : table.data()) {
        total += v;
        total_abs += std::abs(v);
    }
    // Frozen from the table as shipped.
    CHECK(total == doctest::Approx(0.12).epsilon(1e-9));
    CHECK(total_abs == doctest::Approx(131.046).epsilon(1e-12));
}

TEST_CASE("descriptor lookup rejects non-canonical residues") {
    CHECK_THROWS_AS(residue_descriptors('X'), ValidationError);
    CHECK_THROWS_AS(residue_descriptors('a'), ValidationError);
    CHECK_THROWS_AS(residue_descriptors('*'), ValidationError);
}

TEST_CASE("per-sequence descriptors repeat the residue rows") {
    const Mat m = sequence_descriptors("AA");
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 8);
    const auto a = residue_descriptors('A');
    for (std::size_t j = 0; j < 8; ++j) {
        CHECK(m(0, j) == a[j]);
        CHECK(m(1, j) == a[j]);
    }
    CHECK_THROWS_AS(sequence_descriptors(""), ValidationError);
    CHECK_THROWS_AS(sequence_descriptors("AXA"), ValidationError);
    // Each row equals the lookup for that residue.
    const std::string seq = "MKTAYIAKQR";
    const Mat s = sequence_descriptors(seq);
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const auto row = residue_descriptors(seq[i]);
        for (std::size_t j = 0; j < 8; ++j) CHECK(s(i, j) == row[j]);
    }
}

TEST_CASE("covariance features of a constant signal vanish") {
    Mat m(10, 8, 0.7);
    const auto acc = acc_transform(m, 3);
    REQUIRE(acc.size() == 8u * 8u * 3u);
    // Centering a constant column leaves one-ulp residues, so the products
    // are ~1e-32 rather than exactly zero.
    for (double v : acc) CHECK(std::abs(v) < 1e-30);
}

TEST_CASE("covariance features match a hand-computed two-column example") {
    Mat m(5, 2);
    const double values[5][2] = {{1, 2}, {2, 1}, {3, 4}, {4, 3}, {5, 5}};
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 2; ++j) m(i, j) = values[i][j];
    }
    const auto acc = acc_transform(m, 2);
    REQUIRE(acc.size() == 8);
    // Column means are (3, 3); covariances computed by hand with divisor L - lag.
    const double expected[8] = {1.0, 1.25, 0.5,  0.0,
                                -1.0 / 3.0, -2.0 / 3.0, 0.0, 1.0 / 3.0};
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(acc[i] == doctest::Approx(expected[i]).epsilon(1e-12));
    }
}

TEST_CASE("covariance features have the fixed default width") {
    const Mat m = sequence_descriptors(std::string(25, 'A') + "CDEFGHIKLMNP");
    CHECK(acc_transform(m).size() == 512);
}

TEST_CASE("covariance transform validates lag against sequence length") {
    Mat m(8, 8, 1.0);
    CHECK_THROWS_AS(acc_transform(m, 8), ValidationError);
    CHECK_THROWS_AS(acc_transform(m, 0), ValidationError);
    CHECK_NOTHROW(acc_transform(m, 7));
}
