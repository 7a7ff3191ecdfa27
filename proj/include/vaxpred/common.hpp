#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vaxpred {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// The 20 canonical amino acids, in the fixed order used for token ids and
/// descriptor table rows. Ambiguity codes (B, J, O, U, X, Z) are not accepted.
inline constexpr std::string_view kResidueAlphabet = "ACDEFGHIKLMNPQRSTVWY";

inline constexpr int kResidueCount = 20;
inline constexpr int kFineVocab = 20;
inline constexpr int kCoarseVocab = 4096;
inline constexpr int kDescriptorWidth = 8;

/// Input data or file contents violate a contract. The CLI maps this to exit code 2.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A computation produced non-finite values or cannot proceed numerically.
/// The CLI maps this to exit code 3.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
constexpr std::array<int, 256> make_residue_index_table() {
    std::array<int, 256> table{};
    for (auto& v : table) v = -1;
    for (int i = 0; i < static_cast<int>(kResidueAlphabet.size()); ++i) {
        table[static_cast<unsigned char>(kResidueAlphabet[i])] = i;
    }
    return table;
}
inline constexpr std::array<int, 256> kResidueIndexTable = make_residue_index_table();
}  // namespace detail

/// Index of a residue character in kResidueAlphabet, or -1 if not canonical.
constexpr int residue_index(char c) {
    return detail::kResidueIndexTable[static_cast<unsigned char>(c)];
}

}  // namespace vaxpred
