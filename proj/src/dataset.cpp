#include "vaxpred/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <sstream>
#include <unordered_set>

#include "vaxpred/rng.hpp"

namespace vaxpred {

namespace {

constexpr const char* kRecordHeader = "id,sequence,label,source";

// Strip one trailing '\r' so CRLF input parses the same as LF.
void chomp(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

bool known_source(const std::string& s) {
    for (auto k : kKnownSources) {
        if (s == k) return true;
    }
    return false;
}

// Sorted unique k-mers of a sequence; empty when the sequence is shorter than k.
std::vector<std::string> kmer_set(const std::string& seq, std::size_t k) {
    std::vector<std::string> kmers;
    if (seq.size() < k) return kmers;
    kmers.reserve(seq.size() - k + 1);
    for (std::size_t i = 0; i + k <= seq.size(); ++i) {
        kmers.push_back(seq.substr(i, k));
    }
    std::sort(kmers.begin(), kmers.end());
    kmers.erase(std::unique(kmers.begin(), kmers.end()), kmers.end());
    return kmers;
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0.0;
    std::size_t inter = 0, i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) {
            ++inter;
            ++i;
            ++j;
        } else if (a[i] < b[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

std::vector<ProteinRecord> parse_records(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("record CSV is empty");
    chomp(line);
    if (line != kRecordHeader) {
        throw ValidationError("record CSV line 1: expected header '" +
                              std::string(kRecordHeader) + "', got '" + line + "'");
    }

    std::vector<ProteinRecord> records;
    std::unordered_set<std::string> seen_ids;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        chomp(line);
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        const std::string where = "record CSV line " + std::to_string(line_no);
        if (fields.size() != 4) {
            throw ValidationError(where + ": expected 4 fields, got " +
                                  std::to_string(fields.size()));
        }
        ProteinRecord rec;
        rec.id = fields[0];
        rec.sequence = fields[1];
        rec.source = fields[3];
        if (rec.id.empty()) throw ValidationError(where + ": empty id");
        if (!seen_ids.insert(rec.id).second) {
            throw ValidationError(where + ": duplicate id '" + rec.id + "'");
        }
        if (rec.sequence.empty()) throw ValidationError(where + ": empty sequence");
        for (std::size_t i = 0; i < rec.sequence.size(); ++i) {
            if (residue_index(rec.sequence[i]) < 0) {
                throw ValidationError(where + ": record '" + rec.id + "': invalid residue '" +
                                      std::string(1, rec.sequence[i]) + "' at position " +
                                      std::to_string(i + 1));
            }
        }
        if (fields[2] == "0") {
            rec.label = 0;
        } else if (fields[2] == "1") {
            rec.label = 1;
        } else {
            throw ValidationError(where + ": label must be 0 or 1, got '" + fields[2] + "'");
        }
        if (!known_source(rec.source)) {
            throw ValidationError(where + ": unknown source '" + rec.source + "'");
        }
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<ProteinRecord> parse_records_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open record CSV: " + path);
    return parse_records(in);
}

std::vector<ProteinRecord> parse_records_string(const std::string& text) {
    std::istringstream in(text);
    return parse_records(in);
}

void write_records(const std::vector<ProteinRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << kRecordHeader << '\n';
    for (const auto& r : records) {
        out << r.id << ',' << r.sequence << ',' << r.label << ',' << r.source << '\n';
    }
    if (!out) throw ValidationError("write failed: " + path);
}

std::vector<ProteinRecord> filter_by_length(const std::vector<ProteinRecord>& records,
                                            std::size_t min_len, std::size_t max_len) {
    if (min_len > max_len) throw ValidationError("filter_by_length: min_len > max_len");
    std::vector<ProteinRecord> kept;
    for (const auto& r : records) {
        if (r.sequence.size() >= min_len && r.sequence.size() <= max_len) {
            kept.push_back(r);
        }
    }
    return kept;
}

double kmer_identity(const std::string& a, const std::string& b, std::size_t k) {
    if (k < 1) throw ValidationError("kmer_identity: k must be at least 1");
    if (a.size() < k || b.size() < k) {
        throw ValidationError("kmer_identity: sequence shorter than k");
    }
    return jaccard(kmer_set(a, k), kmer_set(b, k));
}

std::vector<ProteinRecord> redundancy_filter(const std::vector<ProteinRecord>& records,
                                             double threshold, std::size_t k) {
    if (k < 1) throw ValidationError("redundancy_filter: k must be at least 1");
    if (threshold <= 0.0 || threshold > 1.0) {
        throw ValidationError("redundancy_filter: threshold must be in (0, 1]");
    }
    std::vector<ProteinRecord> kept;
    std::vector<std::vector<std::string>> kept_kmers;
    for (const auto& rec : records) {
        const auto cand = kmer_set(rec.sequence, k);
        int redundant = 0;
        const std::int64_t n_kept = static_cast<std::int64_t>(kept_kmers.size());
        // The kept-set decision order is the input order; only the comparisons
        // against already-kept records run in parallel.
#pragma omp parallel for schedule(static) reduction(| : redundant) if (n_kept > 8)
        for (std::int64_t i = 0; i < n_kept; ++i) {
            redundant |= jaccard(cand, kept_kmers[static_cast<std::size_t>(i)]) >= threshold;
        }
        if (!redundant) {
            kept.push_back(rec);
            kept_kmers.push_back(cand);
        }
    }
    return kept;
}

std::string_view partition_name(Partition p) {
    switch (p) {
        case Partition::train: return "train";
        case Partition::valid: return "valid";
        case Partition::test: return "test";
    }
    throw ValidationError("partition_name: bad partition value");
}

Partition partition_from_name(const std::string& name) {
    if (name == "train") return Partition::train;
    if (name == "valid") return Partition::valid;
    if (name == "test") return Partition::test;
    throw ValidationError("unknown partition '" + name + "'");
}

std::vector<std::string> SplitManifest::ids_in(Partition p) const {
    std::vector<std::string> ids;
    for (const auto& [id, part] : entries) {
        if (part == p) ids.push_back(id);
    }
    return ids;
}

SplitManifest make_split(const std::vector<ProteinRecord>& records,
                         const std::array<double, 3>& ratios, std::uint64_t seed) {
    if (records.empty()) throw ValidationError("make_split: no records");
    double sum = 0.0;
    for (double r : ratios) {
        if (r < 0.0) throw ValidationError("make_split: negative ratio");
        sum += r;
    }
    if (std::fabs(sum - 1.0) > 1e-9) throw ValidationError("make_split: ratios must sum to 1");

    const std::size_t n = records.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    seeded_shuffle(order, seed);

    // Cumulative rounding keeps every partition within one record of ratio * n.
    const double dn = static_cast<double>(n);
    std::size_t c1 = static_cast<std::size_t>(std::llround(ratios[0] * dn));
    std::size_t c2 = static_cast<std::size_t>(std::llround((ratios[0] + ratios[1]) * dn));
    c1 = std::min(c1, n);
    c2 = std::clamp(c2, c1, n);

    std::vector<Partition> assigned(n);
    for (std::size_t pos = 0; pos < n; ++pos) {
        const Partition p = pos < c1 ? Partition::train
                            : pos < c2 ? Partition::valid
                                       : Partition::test;
        assigned[order[pos]] = p;
    }

    SplitManifest m;
    m.seed = seed;
    m.ratios = ratios;
    m.entries.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        m.entries.emplace_back(records[i].id, assigned[i]);
    }
    return m;
}

SplitManifest make_cross_test(const std::vector<ProteinRecord>& train_source,
                              const std::vector<ProteinRecord>& test_source,
                              std::uint64_t seed, double valid_fraction) {
    if (train_source.empty() || test_source.empty()) {
        throw ValidationError("make_cross_test: both record lists must be non-empty");
    }
    if (valid_fraction < 0.0 || valid_fraction >= 1.0) {
        throw ValidationError("make_cross_test: valid_fraction must be in [0, 1)");
    }
    const std::string& tag_a = train_source.front().source;
    const std::string& tag_b = test_source.front().source;
    for (const auto& r : train_source) {
        if (r.source != tag_a) {
            throw ValidationError("make_cross_test: mixed sources in train list");
        }
    }
    for (const auto& r : test_source) {
        if (r.source != tag_b) {
            throw ValidationError("make_cross_test: mixed sources in test list");
        }
    }
    if (tag_a == tag_b) {
        throw ValidationError("make_cross_test: train and test sources are both '" + tag_a + "'");
    }
    std::unordered_set<std::string> ids;
    for (const auto& r : train_source) {
        if (!ids.insert(r.id).second) {
            throw ValidationError("make_cross_test: duplicate id '" + r.id + "'");
        }
    }
    for (const auto& r : test_source) {
        if (!ids.insert(r.id).second) {
            throw ValidationError("make_cross_test: id '" + r.id + "' appears in both lists");
        }
    }

    const std::size_t na = train_source.size();
    std::vector<std::size_t> order(na);
    for (std::size_t i = 0; i < na; ++i) order[i] = i;
    seeded_shuffle(order, seed);
    const std::size_t n_valid =
        std::min(na, static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(na))));

    std::vector<Partition> assigned(na, Partition::train);
    for (std::size_t pos = 0; pos < n_valid; ++pos) assigned[order[pos]] = Partition::valid;

    SplitManifest m;
    m.seed = seed;
    const double total = static_cast<double>(na + test_source.size());
    m.ratios = {static_cast<double>(na - n_valid) / total, static_cast<double>(n_valid) / total,
                static_cast<double>(test_source.size()) / total};
    m.entries.reserve(na + test_source.size());
    for (std::size_t i = 0; i < na; ++i) {
        m.entries.emplace_back(train_source[i].id, assigned[i]);
    }
    for (const auto& r : test_source) {
        m.entries.emplace_back(r.id, Partition::test);
    }
    return m;
}

std::string split_to_csv(const SplitManifest& manifest) {
    std::string out = "id,partition\n";
    for (const auto& [id, part] : manifest.entries) {
        out += id;
        out += ',';
        out += partition_name(part);
        out += '\n';
    }
    return out;
}

void write_split(const SplitManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << split_to_csv(manifest);
    if (!out) throw ValidationError("write failed: " + path);
}

SplitManifest read_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open split CSV: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("split CSV is empty: " + path);
    chomp(line);
    if (line != "id,partition") {
        throw ValidationError("split CSV line 1: expected header 'id,partition'");
    }
    SplitManifest m;
    std::unordered_set<std::string> seen;
    std::size_t line_no = 1;
    std::array<std::size_t, 3> counts{};
    while (std::getline(in, line)) {
        ++line_no;
        chomp(line);
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != 2 || fields[0].empty()) {
            throw ValidationError("split CSV line " + std::to_string(line_no) + ": malformed row");
        }
        if (!seen.insert(fields[0]).second) {
            throw ValidationError("split CSV line " + std::to_string(line_no) +
                                  ": duplicate id '" + fields[0] + "'");
        }
        const Partition p = partition_from_name(fields[1]);
        counts[static_cast<std::size_t>(p)]++;
        m.entries.emplace_back(fields[0], p);
    }
    if (m.entries.empty()) throw ValidationError("split CSV has no rows: " + path);
    const double total = static_cast<double>(m.entries.size());
    m.ratios = {counts[0] / total, counts[1] / total, counts[2] / total};
    return m;
}

}  // namespace vaxpred
