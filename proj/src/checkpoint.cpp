#include "vaxpred/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace vaxpred {

namespace {

constexpr char kMagic[4] = {'V', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
    const std::size_t at = out.size();
    out.resize(at + sizeof(T));
    std::memcpy(out.data() + at, &value, sizeof(T));
}

class Cursor {
public:
    explicit Cursor(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        T value;
        copy(&value, sizeof(T), what);
        return value;
    }

    void copy(void* dst, std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw ValidationError(std::string("checkpoint truncated reading ") + what);
        }
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    ckpt.config.validate();
    validate_param_shapes(ckpt.params, ckpt.config);

    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put(out, kVersion);
    put(out, static_cast<std::uint32_t>(ckpt.config.dim));
    put(out, static_cast<std::uint32_t>(ckpt.config.n_heads));
    put(out, static_cast<std::uint32_t>(ckpt.config.hidden_width()));
    put(out, ckpt.config.dropout_p);
    put(out, ckpt.config.rope_base);

    const auto tensors = tensor_list(ckpt.params);
    put(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, mat] : tensors) {
        put(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put(out, static_cast<std::uint64_t>(mat->rows()));
        put(out, static_cast<std::uint64_t>(mat->cols()));
        const std::size_t at = out.size();
        const std::size_t payload = mat->size() * sizeof(double);
        out.resize(at + payload);
        std::memcpy(out.data() + at, mat->data().data(), payload);
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw ValidationError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open checkpoint: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    Cursor cur(bytes);

    char magic[4];
    cur.copy(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw ValidationError("not a checkpoint file (bad magic): " + path);
    }
    const auto version = cur.get<std::uint32_t>("version");
    if (version != kVersion) {
        throw ValidationError("unsupported checkpoint version " + std::to_string(version));
    }

    Checkpoint ckpt;
    ckpt.config.dim = cur.get<std::uint32_t>("dim");
    ckpt.config.n_heads = cur.get<std::uint32_t>("n_heads");
    ckpt.config.hidden = cur.get<std::uint32_t>("hidden");
    ckpt.config.dropout_p = cur.get<double>("dropout_p");
    ckpt.config.rope_base = cur.get<double>("rope_base");
    ckpt.config.validate();

    ckpt.params = zero_params(ckpt.config);
    auto tensors = tensor_list(ckpt.params);
    const auto count = cur.get<std::uint32_t>("tensor count");
    if (count != tensors.size()) {
        throw ValidationError("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                              std::to_string(tensors.size()));
    }
    for (auto& [name, mat] : tensors) {
        const auto name_len = cur.get<std::uint16_t>("tensor name length");
        std::string stored(name_len, '\0');
        cur.copy(stored.data(), name_len, "tensor name");
        if (stored != name) {
            throw ValidationError("checkpoint tensor '" + stored + "' where '" + name +
                                  "' was expected");
        }
        const auto rows = cur.get<std::uint64_t>("tensor rows");
        const auto cols = cur.get<std::uint64_t>("tensor cols");
        if (rows != mat->rows() || cols != mat->cols()) {
            throw ValidationError("checkpoint tensor '" + name + "' has shape " +
                                  std::to_string(rows) + "x" + std::to_string(cols) +
                                  ", config implies " + std::to_string(mat->rows()) + "x" +
                                  std::to_string(mat->cols()));
        }
        cur.copy(mat->data().data(), mat->size() * sizeof(double), "tensor payload");
        if (!mat->all_finite()) {
            throw ValidationError("checkpoint tensor '" + name + "' contains non-finite values");
        }
    }
    if (cur.remaining() != 0) {
        throw ValidationError("checkpoint has trailing bytes: " + path);
    }
    return ckpt;
}

}  // namespace vaxpred
