#pragma once

#include <array>
#include <string>
#include <vector>

#include "vaxpred/common.hpp"
#include "vaxpred/matrix.hpp"

namespace vaxpred {

/// Physicochemical descriptor vector for one residue: five E-descriptor
/// components followed by three Z-scale components.
using ResidueDescriptors = std::array<double, kDescriptorWidth>;

/// Descriptor row for one residue character. Errors: non-canonical residue.
ResidueDescriptors residue_descriptors(char residue);

/// The full 20 x 8 table in kResidueAlphabet row order.
const Matrix<double>& descriptor_table();

/// Per-position descriptor matrix (L x 8) for a sequence.
/// Errors: empty sequence or non-canonical residue.
Mat sequence_descriptors(const std::string& sequence);

/// Auto- and cross-covariance transform to a fixed-length vector. Columns are
/// mean-centered first; for lag l, column pair (j, k):
///   a[l][j][k] = (1 / (L - l)) * sum_i m[i][j] * m[i + l][k]
/// flattened with lag outermost, then j, then k. Output size cols^2 * max_lag.
/// Errors: max_lag < 1 or L <= max_lag.
std::vector<double> acc_transform(const Mat& descriptors, std::size_t max_lag = 8);

}  // namespace vaxpred
