#pragma once

#include <optional>
#include <string>
#include <vector>

#include "scanet/errors.hpp"

namespace scanet {

// Probability that a random positive outranks a random negative, ties
// credited 0.5 (Mann-Whitney). Rank-sum implementation over integer doubled
// ranks, so the result is bit-identical to pairwise counting.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct ConfusionCounts {
    int tp = 0, fp = 0, tn = 0, fn = 0;
    int total() const { return tp + fp + tn + fn; }
};

// Threshold metrics at predict-1 iff p1 > threshold (ties predict 0).
// Metrics with an empty denominator are absent rather than zero.
struct ThresholdMetrics {
    ConfusionCounts counts;
    double accuracy = 0.0;
    std::optional<double> precision, sensitivity, specificity;
};

ThresholdMetrics confusion_metrics(const std::vector<double>& p1,
                                   const std::vector<int>& labels,
                                   double threshold = 0.5);

struct FoldMetrics {
    double roc_auc = 0.0;
    double accuracy = 0.0;
    std::optional<double> precision, sensitivity, specificity;
    ConfusionCounts counts;
};

// Sample (n-1) standard deviation; absent when fewer than two folds define
// the metric.
struct MetricSummary {
    double mean = 0.0;
    std::optional<double> stddev;
    int defined_folds = 0;
};

struct EvalReport {
    std::vector<FoldMetrics> folds;
    MetricSummary auc, accuracy, precision, sensitivity, specificity;
};

EvalReport aggregate_report(const std::vector<FoldMetrics>& folds);

// "0.7500 ± 0.0707" (4 decimals); "± n/a" when stddev is absent.
std::string format_mean_std(const MetricSummary& s);

// Serialized forms of the same report; the table mirrors the JSON values.
std::string report_json(const EvalReport& report);
std::string report_table(const EvalReport& report);

}  // namespace scanet
