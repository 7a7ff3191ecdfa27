#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include "vaxpred/embedio.hpp"
#include "vaxpred/rng.hpp"
#include "testutil.hpp"

using namespace vaxpred;

namespace {

bool bundles_identical(const EmbeddingBundle& a, const EmbeddingBundle& b) {
    if (a.id != b.id) return false;
    if (a.seq_embedding.rows() != b.seq_embedding.rows()) return false;
    if (a.seq_embedding.cols() != b.seq_embedding.cols()) return false;
    // Float payloads must survive bit for bit.
    if (std::memcmp(a.seq_embedding.data().data(), b.seq_embedding.data().data(),
                    a.seq_embedding.size() * sizeof(float)) != 0) {
        return false;
    }
    return a.fine_tokens == b.fine_tokens && a.coarse_tokens == b.coarse_tokens;
}

std::vector<EmbeddingBundle> sample_bundles(std::uint64_t seed, std::size_t count) {
    SplitMix64 rng(seed);
    std::vector<EmbeddingBundle> bundles;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t len = 1 + rng.next_below(40);
        const std::size_t dim = 1 + rng.next_below(24);
        bundles.push_back(vaxtest::random_bundle(rng, "b" + std::to_string(i), len, dim));
    }
    return bundles;
}

}  // namespace

TEST_CASE("container round-trips bundles bit for bit") {
    const auto bundles = sample_bundles(1, 8);
    const auto bytes = bundles_to_bytes(bundles);
    const auto loaded = bundles_from_bytes(bytes);
    REQUIRE(loaded.size() == bundles.size());
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        CHECK(bundles_identical(bundles[i], loaded[i]));
    }
    // Serialization itself is deterministic.
    CHECK(bundles_to_bytes(bundles) == bytes);
}

TEST_CASE("container preserves record order") {
    const auto bundles = sample_bundles(2, 5);
    const auto loaded = bundles_from_bytes(bundles_to_bytes(bundles));
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        CHECK(loaded[i].id == bundles[i].id);
    }
}

TEST_CASE("empty container is valid") {
    const auto bytes = bundles_to_bytes({});
    const auto loaded = bundles_from_bytes(bytes);
    CHECK(loaded.empty());
}

TEST_CASE("container file round-trip") {
    const std::string path = "embedio_tmp.vveb";
    const auto bundles = sample_bundles(3, 4);
    const std::uint64_t written = write_bundles(bundles, path);
    CHECK(written == bundles_to_bytes(bundles).size());
    const auto loaded = read_bundles(path);
    REQUIRE(loaded.size() == bundles.size());
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        CHECK(bundles_identical(bundles[i], loaded[i]));
    }
    std::remove(path.c_str());
    CHECK_THROWS_AS(read_bundles(path), ValidationError);
}

TEST_CASE("writer validates bundles before serializing") {
    auto bundles = sample_bundles(4, 2);
    SUBCASE("duplicate ids") {
        bundles[1].id = bundles[0].id;
        CHECK_THROWS_AS(bundles_to_bytes(bundles), ValidationError);
    }
    SUBCASE("token stream length mismatch") {
        bundles[0].fine_tokens.pop_back();
        CHECK_THROWS_AS(bundles_to_bytes(bundles), ValidationError);
    }
    SUBCASE("fine token out of range") {
        bundles[0].fine_tokens[0] = 20;
        CHECK_THROWS_AS(bundles_to_bytes(bundles), ValidationError);
    }
    SUBCASE("coarse token out of range") {
        bundles[0].coarse_tokens[0] = 4096;
        CHECK_THROWS_AS(bundles_to_bytes(bundles), ValidationError);
    }
    SUBCASE("non-finite embedding") {
        bundles[0].seq_embedding(0, 0) = std::numeric_limits<float>::infinity();
        CHECK_THROWS_AS(bundles_to_bytes(bundles), ValidationError);
    }
    SUBCASE("empty id") {
        bundles[0].id.clear();
        CHECK_THROWS_AS(bundles_to_bytes(bundles), ValidationError);
    }
}

TEST_CASE("reader rejects structurally broken images") {
    const auto bundles = sample_bundles(5, 3);
    const auto bytes = bundles_to_bytes(bundles);

    SUBCASE("bad magic") {
        auto bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(bundles_from_bytes(bad), ValidationError);
    }
    SUBCASE("unsupported version") {
        auto bad = bytes;
        bad[4] = 99;
        CHECK_THROWS_AS(bundles_from_bytes(bad), ValidationError);
    }
    SUBCASE("truncation at every prefix length") {
        for (std::size_t cut = 0; cut < bytes.size(); cut += 7) {
            std::vector<std::uint8_t> prefix(bytes.begin(), bytes.begin() + cut);
            CHECK_THROWS_AS(bundles_from_bytes(prefix), ValidationError);
        }
    }
    SUBCASE("trailing bytes") {
        auto bad = bytes;
        bad.push_back(0);
        CHECK_THROWS_AS(bundles_from_bytes(bad), ValidationError);
    }
}

TEST_CASE("single-byte corruption never yields an invalid accepted read") {
    const auto bundles = sample_bundles(6, 3);
    const auto bytes = bundles_to_bytes(bundles);
    SplitMix64 rng(99);
    std::size_t accepted = 0, rejected = 0;
    for (int trial = 0; trial < 400; ++trial) {
        auto mutated = bytes;
        const std::size_t at = rng.next_below(mutated.size());
        const std::uint8_t delta = static_cast<std::uint8_t>(1 + rng.next_below(255));
        mutated[at] = static_cast<std::uint8_t>(mutated[at] ^ delta);
        try {
            const auto first = bundles_from_bytes(mutated);
            ++accepted;
            // An accepted read must satisfy every invariant and re-read identically.
            for (const auto& b : first) CHECK_NOTHROW(validate_bundle(b));
            const auto second = bundles_from_bytes(mutated);
            REQUIRE(second.size() == first.size());
            for (std::size_t i = 0; i < first.size(); ++i) {
                CHECK(bundles_identical(first[i], second[i]));
            }
        } catch (const ValidationError&) {
            ++rejected;
        }
    }
    CHECK(accepted + rejected == 400);
    // Most corruption hits the float payload and is accepted as different data;
    // structural fields must reject. Both outcomes occur at this size.
    CHECK(accepted > 0);
    CHECK(rejected > 0);
}

TEST_CASE("synthetic bundles are deterministic in record and seed") {
    ProteinRecord rec{"p1", "ACDEFGHIKLMNPQRSTVWYACDEF", 1, "virus"};
    const auto a = synthetic_bundle(rec, 12, 7);
    const auto b = synthetic_bundle(rec, 12, 7);
    CHECK(bundles_identical(a, b));

    const auto other_seed = synthetic_bundle(rec, 12, 8);
    CHECK_FALSE(bundles_identical(a, other_seed));

    ProteinRecord renamed = rec;
    renamed.id = "p2";
    const auto c = synthetic_bundle(renamed, 12, 7);
    // Embeddings depend on the sequence, not the id.
    CHECK(std::memcmp(a.seq_embedding.data().data(), c.seq_embedding.data().data(),
                      a.seq_embedding.size() * sizeof(float)) == 0);
}

TEST_CASE("synthetic fine tokens follow residue index plus position") {
    ProteinRecord rec{"p1", "ACD", 0, "bacteria"};
    const auto b = synthetic_bundle(rec, 4, 1);
    REQUIRE(b.fine_tokens.size() == 3);
    CHECK(b.fine_tokens[0] == 0);  // 'A' is residue 0 at position 0
    CHECK(b.fine_tokens[1] == 2);  // 'C' is residue 1 at position 1
    CHECK(b.fine_tokens[2] == 4);  // 'D' is residue 2 at position 2
    for (std::uint16_t t : b.coarse_tokens) CHECK(t < kCoarseVocab);
    CHECK(b.seq_embedding.rows() == 3);
    CHECK(b.seq_embedding.cols() == 4);
    for (float v : b.seq_embedding.data()) CHECK(std::isfinite(v));
}

TEST_CASE("bundle index rejects duplicates and keys by id") {
    auto bundles = sample_bundles(7, 4);
    const std::string first_id = bundles[0].id;
    const auto map = index_bundles(bundles);
    CHECK(map.size() == 4);
    CHECK(map.count(first_id) == 1);

    auto dup = sample_bundles(7, 2);
    dup[1].id = dup[0].id;
    CHECK_THROWS_AS(index_bundles(std::move(dup)), ValidationError);
}
