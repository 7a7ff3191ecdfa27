#include "vaxpred/embedio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include "vaxpred/rng.hpp"

// All multi-byte fields are little-endian on disk; this code memcpy's native
// representations and is only built for little-endian targets.
static_assert(std::endian::native == std::endian::little,
              "embedding container I/O assumes a little-endian host");

namespace vaxpred {

namespace {

constexpr char kMagic[4] = {'V', 'V', 'E', 'B'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kSynthCoarseDomain = 0x636f61727365ULL;

template <typename T>
void append_scalar(std::vector<std::uint8_t>& out, T value) {
    const std::size_t at = out.size();
    out.resize(at + sizeof(T));
    std::memcpy(out.data() + at, &value, sizeof(T));
}

/// Bounds-checked cursor over a container image.
class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <typename T>
    T read_scalar(const char* what) {
        require(sizeof(T), what);
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    void read_into(void* dst, std::size_t n, const char* what) {
        require(n, what);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::uint64_t remaining() const { return bytes_.size() - pos_; }

private:
    void require(std::uint64_t n, const char* what) {
        if (remaining() < n) {
            throw ValidationError(std::string("embedding container truncated reading ") + what);
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void validate_bundle(const EmbeddingBundle& b) {
    if (b.id.empty()) throw ValidationError("embedding bundle has empty id");
    const std::size_t len = b.seq_embedding.rows();
    if (len < 1) throw ValidationError("bundle '" + b.id + "': embedding has no rows");
    if (b.seq_embedding.cols() < 1) {
        throw ValidationError("bundle '" + b.id + "': embedding has no columns");
    }
    if (b.fine_tokens.size() != len || b.coarse_tokens.size() != len) {
        throw ValidationError("bundle '" + b.id + "': token stream length differs from embedding");
    }
    for (std::uint8_t t : b.fine_tokens) {
        if (t >= kFineVocab) {
            throw ValidationError("bundle '" + b.id + "': fine token " + std::to_string(t) +
                                  " out of range");
        }
    }
    for (std::uint16_t t : b.coarse_tokens) {
        if (t >= kCoarseVocab) {
            throw ValidationError("bundle '" + b.id + "': coarse token " + std::to_string(t) +
                                  " out of range");
        }
    }
    for (float v : b.seq_embedding.data()) {
        if (!std::isfinite(v)) {
            throw ValidationError("bundle '" + b.id + "': non-finite embedding entry");
        }
    }
}

std::vector<std::uint8_t> bundles_to_bytes(const std::vector<EmbeddingBundle>& bundles) {
    std::unordered_set<std::string> seen;
    for (const auto& b : bundles) {
        validate_bundle(b);
        if (b.id.size() > 0xffff) {
            throw ValidationError("bundle id longer than 65535 bytes: " + b.id);
        }
        if (!seen.insert(b.id).second) {
            throw ValidationError("duplicate bundle id '" + b.id + "'");
        }
    }

    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    append_scalar(out, kVersion);
    append_scalar(out, static_cast<std::uint64_t>(bundles.size()));
    for (const auto& b : bundles) {
        append_scalar(out, static_cast<std::uint16_t>(b.id.size()));
        out.insert(out.end(), b.id.begin(), b.id.end());
        append_scalar(out, static_cast<std::uint32_t>(b.seq_embedding.rows()));
        append_scalar(out, static_cast<std::uint32_t>(b.seq_embedding.cols()));
        const std::size_t at = out.size();
        const std::size_t payload = b.seq_embedding.size() * sizeof(float);
        out.resize(at + payload);
        std::memcpy(out.data() + at, b.seq_embedding.data().data(), payload);
        out.insert(out.end(), b.fine_tokens.begin(), b.fine_tokens.end());
        const std::size_t cat = out.size();
        out.resize(cat + b.coarse_tokens.size() * sizeof(std::uint16_t));
        std::memcpy(out.data() + cat, b.coarse_tokens.data(),
                    b.coarse_tokens.size() * sizeof(std::uint16_t));
    }
    return out;
}

std::vector<EmbeddingBundle> bundles_from_bytes(const std::vector<std::uint8_t>& bytes) {
    ByteReader reader(bytes);
    char magic[4];
    reader.read_into(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw ValidationError("not an embedding container (bad magic)");
    }
    const auto version = reader.read_scalar<std::uint32_t>("version");
    if (version != kVersion) {
        throw ValidationError("unsupported embedding container version " +
                              std::to_string(version));
    }
    const auto count = reader.read_scalar<std::uint64_t>("record count");

    std::vector<EmbeddingBundle> bundles;
    std::unordered_set<std::string> seen;
    for (std::uint64_t r = 0; r < count; ++r) {
        EmbeddingBundle b;
        const auto id_len = reader.read_scalar<std::uint16_t>("id length");
        if (id_len == 0) throw ValidationError("embedding container: empty bundle id");
        b.id.resize(id_len);
        reader.read_into(b.id.data(), id_len, "id");
        const auto rows = reader.read_scalar<std::uint32_t>("embedding rows");
        const auto cols = reader.read_scalar<std::uint32_t>("embedding cols");
        if (rows < 1 || cols < 1) {
            throw ValidationError("bundle '" + b.id + "': bad embedding shape");
        }
        // Check the image can actually hold the payload before allocating, so
        // a corrupted shape field fails cleanly instead of exhausting memory.
        const std::uint64_t needed = static_cast<std::uint64_t>(rows) * cols * sizeof(float) +
                                     static_cast<std::uint64_t>(rows) * 3;
        if (reader.remaining() < needed) {
            throw ValidationError("embedding container truncated reading bundle '" + b.id + "'");
        }
        b.seq_embedding = MatF(rows, cols);
        reader.read_into(b.seq_embedding.data().data(), static_cast<std::size_t>(rows) * cols * sizeof(float),
                         "embedding payload");
        b.fine_tokens.resize(rows);
        reader.read_into(b.fine_tokens.data(), rows, "fine tokens");
        b.coarse_tokens.resize(rows);
        reader.read_into(b.coarse_tokens.data(), static_cast<std::size_t>(rows) * sizeof(std::uint16_t),
                         "coarse tokens");
        validate_bundle(b);
        if (!seen.insert(b.id).second) {
            throw ValidationError("embedding container: duplicate bundle id '" + b.id + "'");
        }
        bundles.push_back(std::move(b));
    }
    if (reader.remaining() != 0) {
        throw ValidationError("embedding container has " + std::to_string(reader.remaining()) +
                              " trailing bytes");
    }
    return bundles;
}

std::uint64_t write_bundles(const std::vector<EmbeddingBundle>& bundles, const std::string& path) {
    const auto bytes = bundles_to_bytes(bundles);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("write failed: " + path);
    return bytes.size();
}

std::vector<EmbeddingBundle> read_bundles(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open embedding container: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bundles_from_bytes(bytes);
}

EmbeddingBundle synthetic_bundle(const ProteinRecord& record, std::size_t dim,
                                 std::uint64_t seed) {
    if (dim < 1) throw ValidationError("synthetic_bundle: dim must be at least 1");
    if (record.sequence.empty()) throw ValidationError("synthetic_bundle: empty sequence");

    const std::uint64_t seq_hash = fnv1a64(record.sequence);
    const std::size_t len = record.sequence.size();

    EmbeddingBundle b;
    b.id = record.id;
    b.seq_embedding = MatF(len, dim);
    b.fine_tokens.resize(len);
    b.coarse_tokens.resize(len);
    for (std::size_t i = 0; i < len; ++i) {
        const int residue = residue_index(record.sequence[i]);
        if (residue < 0) {
            throw ValidationError("synthetic_bundle: invalid residue in '" + record.id + "'");
        }
        for (std::size_t c = 0; c < dim; ++c) {
            SplitMix64 g(mix_seed(seed, seq_hash, i, c));
            b.seq_embedding(i, c) = static_cast<float>(g.next_gaussian());
        }
        b.fine_tokens[i] = static_cast<std::uint8_t>((residue + i) % kFineVocab);
        b.coarse_tokens[i] =
            static_cast<std::uint16_t>(mix_seed(seed ^ kSynthCoarseDomain, seq_hash, i) % kCoarseVocab);
    }
    return b;
}

BundleMap index_bundles(std::vector<EmbeddingBundle> bundles) {
    BundleMap map;
    for (auto& b : bundles) {
        const std::string id = b.id;
        if (!map.emplace(id, std::move(b)).second) {
            throw ValidationError("duplicate bundle id '" + id + "'");
        }
    }
    return map;
}

}  // namespace vaxpred
