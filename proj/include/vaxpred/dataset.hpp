#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "vaxpred/common.hpp"

namespace vaxpred {

/// One labeled antigen candidate. `source` is the pathogen class the record
/// came from; it drives the cross-source split.
struct ProteinRecord {
    std::string id;
    std::string sequence;
    int label = 0;  // 1 = protective antigen, 0 = non-protective
    std::string source;  // "bacteria", "virus", or "tumor"
};

inline constexpr std::array<std::string_view, 3> kKnownSources = {"bacteria", "virus", "tumor"};

/// Parse records from CSV with header `id,sequence,label,source`.
/// Errors name the offending line; duplicate ids, residues outside the
/// 20-letter alphabet, bad labels, and unknown sources are all rejected.
std::vector<ProteinRecord> parse_records(std::istream& in);
std::vector<ProteinRecord> parse_records_file(const std::string& path);
std::vector<ProteinRecord> parse_records_string(const std::string& text);

/// Write records back out in the same CSV layout (LF line endings).
void write_records(const std::vector<ProteinRecord>& records, const std::string& path);

/// Keep records whose length lies in [min_len, max_len], both inclusive.
std::vector<ProteinRecord> filter_by_length(const std::vector<ProteinRecord>& records,
                                            std::size_t min_len = 25,
                                            std::size_t max_len = 1024);

/// Jaccard similarity of the k-mer sets of two sequences. Symmetric; 1.0 for
/// identical sequences. Errors: either sequence shorter than k, or k < 1.
double kmer_identity(const std::string& a, const std::string& b, std::size_t k = 3);

/// Greedy redundancy removal in input order: a record is kept iff its k-mer
/// identity to every already-kept record is strictly below `threshold`.
/// Sequences shorter than k have no k-mers and are treated as 0-similar.
std::vector<ProteinRecord> redundancy_filter(const std::vector<ProteinRecord>& records,
                                             double threshold, std::size_t k = 3);

enum class Partition { train, valid, test };

std::string_view partition_name(Partition p);
Partition partition_from_name(const std::string& name);

/// Seeded assignment of every record id to exactly one partition. Entries keep
/// the original record order so serialization is byte-stable for a fixed input.
struct SplitManifest {
    std::uint64_t seed = 0;
    std::array<double, 3> ratios{};  // train, valid, test fractions; sum to 1
    std::vector<std::pair<std::string, Partition>> entries;

    std::vector<std::string> ids_in(Partition p) const;
};

/// Random split by ratio. Partition sizes come from cumulative rounding of the
/// shuffled order, so each size is within one record of ratio * n.
/// Errors: empty records, ratios not summing to 1 (tolerance 1e-9), negative ratio.
SplitManifest make_split(const std::vector<ProteinRecord>& records,
                         const std::array<double, 3>& ratios, std::uint64_t seed);

/// Cross-source protocol: all records of one source train (with a seeded
/// valid slice), all records of another source test. Errors: either list
/// empty or mixed-source, identical source tags, overlapping ids.
SplitManifest make_cross_test(const std::vector<ProteinRecord>& train_source,
                              const std::vector<ProteinRecord>& test_source,
                              std::uint64_t seed, double valid_fraction = 0.1);

/// CSV serialization with header `id,partition`.
void write_split(const SplitManifest& manifest, const std::string& path);
std::string split_to_csv(const SplitManifest& manifest);
SplitManifest read_split(const std::string& path);

}  // namespace vaxpred
