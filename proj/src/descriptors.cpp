#include "vaxpred/descriptors.hpp"

namespace vaxpred {

namespace {

// Rows in kResidueAlphabet order (ACDEFGHIKLMNPQRSTVWY). Columns are the five
// multidimensional-scaling E-descriptors (Venkatarajan & Braun 2001) followed
// by the first three principal-property Z-scales (Hellberg et al. 1987).
constexpr double kDescriptorRows[kResidueCount][kDescriptorWidth] = {
    /* A */ {0.008, 0.134, -0.475, -0.039, 0.181, 0.07, -1.73, 0.09},
    /* C */ {-0.132, 0.174, 0.070, 0.565, -0.374, 0.71, -0.97, 4.13},
    /* D */ {0.303, -0.057, -0.014, 0.225, 0.156, 3.64, 1.13, 2.36},
    /* E */ {0.221, -0.280, -0.315, 0.157, 0.303, 3.08, 0.39, -0.07},
    /* F */ {-0.329, -0.023, 0.072, -0.002, 0.208, -4.92, 1.30, 0.45},
    /* G */ {0.218, 0.562, -0.024, 0.018, 0.106, 2.23, -5.36, 0.30},
    /* H */ {0.023, -0.177, 0.041, 0.280, -0.021, 2.41, 1.74, 1.11},
    /* I */ {-0.353, 0.071, -0.088, -0.195, -0.107, -4.44, -1.68, -1.03},
    /* K */ {0.243, -0.339, -0.044, -0.325, -0.027, 2.84, 1.41, -3.14},
    /* L */ {-0.267, 0.018, -0.265, -0.274, 0.206, -4.19, -1.03, -0.98},
    /* M */ {-0.239, -0.141, -0.155, 0.321, 0.077, -2.49, -0.27, -0.41},
    /* N */ {0.255, 0.038, 0.117, 0.118, -0.055, 3.22, 1.45, 0.84},
    /* P */ {0.173, 0.286, 0.407, -0.215, 0.384, -1.22, 0.88, 2.23},
    /* Q */ {0.149, -0.184, -0.030, 0.035, -0.112, 2.18, 0.53, -1.14},
    /* R */ {0.171, -0.361, 0.107, -0.258, -0.364, 2.88, 2.52, -3.44},
    /* S */ {0.199, 0.238, -0.015, -0.068, -0.196, 1.96, -1.63, 0.57},
    /* T */ {0.068, 0.147, -0.015, -0.132, -0.274, 0.92, -2.09, -1.40},
    /* V */ {-0.274, 0.136, -0.187, -0.196, -0.299, -2.69, -2.53, -1.29},
    /* W */ {-0.296, -0.186, 0.389, 0.083, 0.297, -4.75, 3.65, 0.85},
    /* Y */ {-0.141, -0.057, 0.425, -0.096, -0.091, -1.39, 2.32, 0.01},
};

}  // namespace

ResidueDescriptors residue_descriptors(char residue) {
    const int idx = residue_index(residue);
    if (idx < 0) {
        throw ValidationError("residue_descriptors: invalid residue '" +
                              std::string(1, residue) + "'");
    }
    ResidueDescriptors d;
    for (int j = 0; j < kDescriptorWidth; ++j) d[j] = kDescriptorRows[idx][j];
    return d;
}

const Matrix<double>& descriptor_table() {
    static const Mat table = [] {
        Mat t(kResidueCount, kDescriptorWidth);
        for (int i = 0; i < kResidueCount; ++i) {
            for (int j = 0; j < kDescriptorWidth; ++j) t(i, j) = kDescriptorRows[i][j];
        }
        return t;
    }();
    return table;
}

Mat sequence_descriptors(const std::string& sequence) {
    if (sequence.empty()) throw ValidationError("sequence_descriptors: empty sequence");
    Mat m(sequence.size(), kDescriptorWidth);
    for (std::size_t i = 0; i < sequence.size(); ++i) {
        const int idx = residue_index(sequence[i]);
        if (idx < 0) {
            throw ValidationError("sequence_descriptors: invalid residue '" +
                                  std::string(1, sequence[i]) + "' at position " +
                                  std::to_string(i + 1));
        }
        for (int j = 0; j < kDescriptorWidth; ++j) m(i, j) = kDescriptorRows[idx][j];
    }
    return m;
}

std::vector<double> acc_transform(const Mat& descriptors, std::size_t max_lag) {
    if (max_lag < 1) throw ValidationError("acc_transform: max_lag must be at least 1");
    const std::size_t rows = descriptors.rows();
    const std::size_t cols = descriptors.cols();
    if (rows <= max_lag) {
        throw ValidationError("acc_transform: sequence length " + std::to_string(rows) +
                              " must exceed max_lag " + std::to_string(max_lag));
    }

    Mat centered = descriptors;
    for (std::size_t j = 0; j < cols; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < rows; ++i) mean += centered(i, j);
        mean /= static_cast<double>(rows);
        for (std::size_t i = 0; i < rows; ++i) centered(i, j) -= mean;
    }

    std::vector<double> out(cols * cols * max_lag, 0.0);
    for (std::size_t lag = 1; lag <= max_lag; ++lag) {
        const double denom = static_cast<double>(rows - lag);
        for (std::size_t j = 0; j < cols; ++j) {
            for (std::size_t k = 0; k < cols; ++k) {
                double acc = 0.0;
                for (std::size_t i = 0; i + lag < rows; ++i) {
                    acc += centered(i, j) * centered(i + lag, k);
                }
                out[(lag - 1) * cols * cols + j * cols + k] = acc / denom;
            }
        }
    }
    return out;
}

}  // namespace vaxpred
