#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vaxpred/common.hpp"
#include "vaxpred/dataset.hpp"
#include "vaxpred/matrix.hpp"

namespace vaxpred {

/// Precomputed per-sequence embeddings: one float32 row per residue plus two
/// structure-token streams of the same length. Fine tokens index a 20-entry
/// vocabulary, coarse tokens a 4096-entry vocabulary.
struct EmbeddingBundle {
    std::string id;
    MatF seq_embedding;                        // L x d, float32
    std::vector<std::uint8_t> fine_tokens;     // each < 20
    std::vector<std::uint16_t> coarse_tokens;  // each < 4096
};

/// Throws ValidationError if any bundle invariant is violated: empty id,
/// L < 1, d < 1, token stream lengths differing from L, token values out of
/// vocabulary range, or non-finite embedding entries.
void validate_bundle(const EmbeddingBundle& bundle);

/// Binary container layout (all integers little-endian):
///   magic "VVEB" | u32 version = 1 | u64 record_count
///   per record: u16 id_len | id bytes | u32 L | u32 d
///               | L*d f32 row-major | L u8 fine | L u16 coarse
std::vector<std::uint8_t> bundles_to_bytes(const std::vector<EmbeddingBundle>& bundles);

/// Parse and validate a container image. Rejects bad magic or version,
/// truncation, trailing bytes, duplicate ids, and every bundle invariant
/// violation. Never allocates more than the image could actually contain.
std::vector<EmbeddingBundle> bundles_from_bytes(const std::vector<std::uint8_t>& bytes);

/// File wrappers around the byte-level functions. write returns bytes written.
std::uint64_t write_bundles(const std::vector<EmbeddingBundle>& bundles, const std::string& path);
std::vector<EmbeddingBundle> read_bundles(const std::string& path);

/// Deterministic stand-in for real embedding models. Every value is keyed by
/// (seed, sequence hash, position, channel) through a fixed counter RNG, so
/// output is identical across platforms and runs.
///   seq_embedding[i][c] ~ standard normal, stored as float32
///   fine_tokens[i]       = (residue_index + i) mod 20
///   coarse_tokens[i]     = positional hash mod 4096
EmbeddingBundle synthetic_bundle(const ProteinRecord& record, std::size_t dim,
                                 std::uint64_t seed);

using BundleMap = std::map<std::string, EmbeddingBundle>;

/// Index bundles by id. Errors: duplicate id.
BundleMap index_bundles(std::vector<EmbeddingBundle> bundles);

}  // namespace vaxpred
