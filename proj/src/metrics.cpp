#include "vaxpred/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace vaxpred {

namespace {

void require_both_classes(const std::vector<ScoredLabel>& scored, const char* what) {
    long pos = 0, neg = 0;
    for (const auto& s : scored) (s.label == 1 ? pos : neg)++;
    if (pos == 0 || neg == 0) {
        throw ValidationError(std::string(what) + " requires at least one example of each class");
    }
}

std::string format_value(double v) {
    char buf[64];
    if (std::isnan(v)) {
        std::snprintf(buf, sizeof(buf), "nan");
    } else {
        std::snprintf(buf, sizeof(buf), "%.9g", v);
    }
    return buf;
}

}  // namespace

double auc_roc(const std::vector<ScoredLabel>& scored) {
    require_both_classes(scored, "auc_roc");
    std::vector<std::pair<double, int>> pts;
    pts.reserve(scored.size());
    for (const auto& s : scored) pts.emplace_back(s.score, s.label);
    std::sort(pts.begin(), pts.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    // Midrank sum over positives: groups of tied scores share the average rank,
    // which makes each tied positive/negative pair contribute exactly 0.5.
    double pos_rank_sum = 0.0;
    long n_pos = 0;
    std::size_t i = 0;
    while (i < pts.size()) {
        std::size_t j = i;
        while (j < pts.size() && pts[j].first == pts[i].first) ++j;
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t t = i; t < j; ++t) {
            if (pts[t].second == 1) {
                pos_rank_sum += midrank;
                ++n_pos;
            }
        }
        i = j;
    }
    const long n_neg = static_cast<long>(pts.size()) - n_pos;
    const double u = pos_rank_sum - 0.5 * static_cast<double>(n_pos) * (n_pos + 1.0);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double ks_statistic(const std::vector<ScoredLabel>& scored) {
    require_both_classes(scored, "ks_statistic");
    std::vector<std::pair<double, int>> pts;
    pts.reserve(scored.size());
    long n_pos = 0, n_neg = 0;
    for (const auto& s : scored) {
        pts.emplace_back(s.score, s.label);
        (s.label == 1 ? n_pos : n_neg)++;
    }
    std::sort(pts.begin(), pts.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    double best = 0.0;
    long cum_pos = 0, cum_neg = 0;
    std::size_t i = 0;
    while (i < pts.size()) {
        std::size_t j = i;
        while (j < pts.size() && pts[j].first == pts[i].first) {
            (pts[j].second == 1 ? cum_pos : cum_neg)++;
            ++j;
        }
        const double gap = std::fabs(static_cast<double>(cum_pos) / n_pos -
                                     static_cast<double>(cum_neg) / n_neg);
        best = std::max(best, gap);
        i = j;
    }
    return best;
}

ConfusionCounts confusion(const std::vector<ScoredLabel>& scored, double threshold) {
    ConfusionCounts c;
    for (const auto& s : scored) {
        const bool pred = s.score > threshold;
        if (s.label == 1) {
            (pred ? c.tp : c.fn)++;
        } else {
            (pred ? c.fp : c.tn)++;
        }
    }
    return c;
}

BasicRates basic_rates(const ConfusionCounts& c) {
    const long total = c.tp + c.tn + c.fp + c.fn;
    if (total == 0) throw ValidationError("basic_rates: all counts are zero");
    BasicRates r;
    r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
    r.precision = (c.tp + c.fp) == 0 ? 0.0 : static_cast<double>(c.tp) / (c.tp + c.fp);
    r.recall = (c.tp + c.fn) == 0 ? 0.0 : static_cast<double>(c.tp) / (c.tp + c.fn);
    const double pr = r.precision + r.recall;
    r.f1 = pr == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / pr;
    return r;
}

double mcc(const ConfusionCounts& c) {
    const double f1 = static_cast<double>(c.tp + c.fp);
    const double f2 = static_cast<double>(c.tp + c.fn);
    const double f3 = static_cast<double>(c.tn + c.fp);
    const double f4 = static_cast<double>(c.tn + c.fn);
    if (f1 == 0.0 || f2 == 0.0 || f3 == 0.0 || f4 == 0.0) return 0.0;
    const double num = static_cast<double>(c.tp) * c.tn - static_cast<double>(c.fp) * c.fn;
    return num / std::sqrt(f1 * f2 * f3 * f4);
}

double top_k_positive_rate(const std::vector<ScoredLabel>& scored, std::size_t k) {
    if (scored.size() < k) {
        throw ValidationError("top_k_positive_rate: fewer than k examples");
    }
    if (k == 0) throw ValidationError("top_k_positive_rate: k must be positive");
    std::vector<const ScoredLabel*> order;
    order.reserve(scored.size());
    for (const auto& s : scored) order.push_back(&s);
    std::sort(order.begin(), order.end(), [](const ScoredLabel* a, const ScoredLabel* b) {
        if (a->score != b->score) return a->score > b->score;
        return a->id < b->id;
    });
    long pos = 0;
    for (std::size_t i = 0; i < k; ++i) pos += order[i]->label == 1;
    return static_cast<double>(pos) / static_cast<double>(k);
}

double cross_entropy_metric(const std::vector<ScoredLabel>& scored) {
    if (scored.empty()) throw ValidationError("cross_entropy_metric: empty input");
    constexpr double kEps = 1e-12;
    double sum = 0.0;
    for (const auto& s : scored) {
        const double p = std::clamp(s.score, kEps, 1.0 - kEps);
        sum += s.label == 1 ? -std::log(p) : -std::log(1.0 - p);
    }
    return sum / static_cast<double>(scored.size());
}

double fold_enrichment(long tp, long fp, long fn, long tn) {
    const long predicted_pos = tp + fp;
    const long actual_pos = tp + fn;
    const long total = tp + fp + fn + tn;
    if (predicted_pos == 0) throw ValidationError("fold_enrichment: no predicted positives");
    if (actual_pos == 0) throw ValidationError("fold_enrichment: no actual positives");
    const double precision = static_cast<double>(tp) / static_cast<double>(predicted_pos);
    const double prevalence = static_cast<double>(actual_pos) / static_cast<double>(total);
    return precision / prevalence;
}

MetricReport build_report(const std::vector<ScoredLabel>& scored, double threshold,
                          std::size_t k) {
    if (scored.empty()) throw ValidationError("build_report: empty input");
    MetricReport r;
    r.n = scored.size();
    r.counts = confusion(scored, threshold);
    r.rates = basic_rates(r.counts);
    r.mcc = mcc(r.counts);
    r.cross_entropy = cross_entropy_metric(scored);

    const long n_pos = r.counts.tp + r.counts.fn;
    const long n_neg = r.counts.tn + r.counts.fp;
    if (n_pos > 0 && n_neg > 0) {
        r.auc_roc = auc_roc(scored);
        r.ks = ks_statistic(scored);
    }
    if (scored.size() >= k && k > 0) {
        r.top_k_positive_rate = top_k_positive_rate(scored, k);
    }
    return r;
}

std::string report_csv_header() {
    return "repeat,n,tp,tn,fp,fn,auc_roc,accuracy,precision,recall,f1,mcc,"
           "top_k_positive_rate,cross_entropy,ks";
}

std::vector<double> report_values(const MetricReport& r) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {
        static_cast<double>(r.n),
        static_cast<double>(r.counts.tp),
        static_cast<double>(r.counts.tn),
        static_cast<double>(r.counts.fp),
        static_cast<double>(r.counts.fn),
        r.auc_roc.value_or(nan),
        r.rates.accuracy,
        r.rates.precision,
        r.rates.recall,
        r.rates.f1,
        r.mcc,
        r.top_k_positive_rate.value_or(nan),
        r.cross_entropy,
        r.ks.value_or(nan),
    };
}

std::string report_csv_row(const MetricReport& r, const std::string& tag) {
    std::string row = tag;
    for (double v : report_values(r)) {
        row += ',';
        row += format_value(v);
    }
    return row;
}

std::pair<std::vector<double>, std::vector<double>> aggregate_reports(
    const std::vector<MetricReport>& reports) {
    if (reports.empty()) throw ValidationError("aggregate_reports: empty input");
    const std::size_t width = report_values(reports.front()).size();
    std::vector<double> mean(width, std::numeric_limits<double>::quiet_NaN());
    std::vector<double> sd(width, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t col = 0; col < width; ++col) {
        double sum = 0.0;
        long count = 0;
        for (const auto& r : reports) {
            const double v = report_values(r)[col];
            if (!std::isnan(v)) {
                sum += v;
                ++count;
            }
        }
        if (count == 0) continue;
        const double m = sum / count;
        double ss = 0.0;
        for (const auto& r : reports) {
            const double v = report_values(r)[col];
            if (!std::isnan(v)) ss += (v - m) * (v - m);
        }
        mean[col] = m;
        sd[col] = std::sqrt(ss / count);
    }
    return {mean, sd};
}

std::string aggregate_csv_row(const std::vector<double>& values, const std::string& tag) {
    std::string row = tag;
    for (double v : values) {
        row += ',';
        row += format_value(v);
    }
    return row;
}

}  // namespace vaxpred
