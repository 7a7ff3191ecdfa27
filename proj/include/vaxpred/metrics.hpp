#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "vaxpred/common.hpp"

namespace vaxpred {

/// One scored example: predicted probability of the positive class plus truth.
struct ScoredLabel {
    std::string id;
    double score = 0.0;
    int label = 0;
};

struct ConfusionCounts {
    long tp = 0;
    long tn = 0;
    long fp = 0;
    long fn = 0;
};

struct BasicRates {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Full metric set for one evaluation. Optional fields are absent when the
/// input cannot support them (single-class sets for auc/ks, n < k for top-k).
struct MetricReport {
    std::size_t n = 0;
    ConfusionCounts counts;
    std::optional<double> auc_roc;
    BasicRates rates;
    double mcc = 0.0;
    std::optional<double> top_k_positive_rate;
    double cross_entropy = 0.0;
    std::optional<double> ks;
};

/// Area under the ROC curve, computed from midranks so tied scores count 0.5.
/// Errors: fewer than one example of each class.
double auc_roc(const std::vector<ScoredLabel>& scored);

/// Kolmogorov-Smirnov distance between the score distributions of the two
/// classes: max |F_pos(t) - F_neg(t)| over observed thresholds.
/// Errors: fewer than one example of each class.
double ks_statistic(const std::vector<ScoredLabel>& scored);

/// Counts at a decision threshold; predicted positive iff score > threshold.
ConfusionCounts confusion(const std::vector<ScoredLabel>& scored, double threshold);

/// Accuracy, precision, recall, F1. Any 0/0 rate is defined as 0.
/// Errors: all four counts zero.
BasicRates basic_rates(const ConfusionCounts& c);

/// Matthews correlation coefficient; 0 when any denominator factor is zero.
double mcc(const ConfusionCounts& c);

/// Fraction of positives among the k highest-scoring examples. Ties are broken
/// by id ascending so the result is deterministic. Errors: fewer than k examples.
double top_k_positive_rate(const std::vector<ScoredLabel>& scored, std::size_t k);

/// Mean binary cross-entropy of scores against labels, with scores clamped to
/// [1e-12, 1 - 1e-12] before the logarithm. Errors: empty input.
double cross_entropy_metric(const std::vector<ScoredLabel>& scored);

/// Precision divided by the prevalence of positives: how much the predicted-
/// positive set is enriched over random selection.
/// Errors: no predicted positives (tp + fp == 0) or no actual positives (tp + fn == 0).
double fold_enrichment(long tp, long fp, long fn, long tn);

/// Assemble every metric at the given threshold. Errors: empty input.
MetricReport build_report(const std::vector<ScoredLabel>& scored, double threshold = 0.5,
                          std::size_t k = 30);

/// CSV serialization. The first column tags the row ("0".."9", "mean", "std").
std::string report_csv_header();
std::string report_csv_row(const MetricReport& r, const std::string& tag);

/// Numeric fields of a report in CSV column order (n..ks), NaN where absent.
std::vector<double> report_values(const MetricReport& r);

/// Column-wise mean and population standard deviation over reports, skipping
/// absent (NaN) entries per column. Errors: empty input.
std::pair<std::vector<double>, std::vector<double>> aggregate_reports(
    const std::vector<MetricReport>& reports);

std::string aggregate_csv_row(const std::vector<double>& values, const std::string& tag);

}  // namespace vaxpred
