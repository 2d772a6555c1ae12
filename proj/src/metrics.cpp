#include "scanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

namespace scanet {

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ArgumentError("roc_auc: " + std::to_string(scores.size()) +
                            " scores vs " + std::to_string(labels.size()) +
                            " labels");
    if (scores.empty()) throw ArgumentError("roc_auc: empty input");
    long long np = 0, nn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw ArgumentError("roc_auc: label must be 0 or 1");
        if (!std::isfinite(scores[i]))
            throw ArgumentError("roc_auc: non-finite score");
        (labels[i] == 1 ? np : nn)++;
    }
    if (np == 0 || nn == 0)
        throw MetricError("roc_auc undefined: only class " +
                          std::to_string(np == 0 ? 0 : 1) + " present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
        return scores[a] < scores[b];
    });

    // doubled midranks stay integral, so the rank sum is exact; dividing the
    // doubled Mann-Whitney U by 2*np*nn then matches pairwise counting bitwise
    long long twice_rank_sum_pos = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const long long twice_midrank =
            static_cast<long long>(i + 1) + static_cast<long long>(j);  // 1-based
        for (std::size_t t = i; t < j; ++t)
            if (labels[order[t]] == 1) twice_rank_sum_pos += twice_midrank;
        i = j;
    }
    const long long twice_u = twice_rank_sum_pos - np * (np + 1);
    return static_cast<double>(twice_u) /
           (2.0 * static_cast<double>(np) * static_cast<double>(nn));
}

ThresholdMetrics confusion_metrics(const std::vector<double>& p1,
                                   const std::vector<int>& labels,
                                   double threshold) {
    if (p1.empty()) throw ArgumentError("confusion_metrics: empty input");
    if (p1.size() != labels.size())
        throw ArgumentError("confusion_metrics: size mismatch");
    ThresholdMetrics m;
    for (std::size_t i = 0; i < p1.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw ArgumentError("confusion_metrics: label must be 0 or 1");
        const int pred = p1[i] > threshold ? 1 : 0;
        if (pred == 1)
            (labels[i] == 1 ? m.counts.tp : m.counts.fp)++;
        else
            (labels[i] == 0 ? m.counts.tn : m.counts.fn)++;
    }
    const auto& c = m.counts;
    m.accuracy = static_cast<double>(c.tp + c.tn) / c.total();
    if (c.tp + c.fp > 0)
        m.precision = static_cast<double>(c.tp) / (c.tp + c.fp);
    if (c.tp + c.fn > 0)
        m.sensitivity = static_cast<double>(c.tp) / (c.tp + c.fn);
    if (c.tn + c.fp > 0)
        m.specificity = static_cast<double>(c.tn) / (c.tn + c.fp);
    return m;
}

namespace {

MetricSummary summarize(const std::vector<std::optional<double>>& values) {
    MetricSummary s;
    std::vector<double> defined;
    for (const auto& v : values)
        if (v) defined.push_back(*v);
    s.defined_folds = static_cast<int>(defined.size());
    if (defined.empty()) return s;
    double mean = 0.0;
    for (double v : defined) mean += v;
    mean /= static_cast<double>(defined.size());
    s.mean = mean;
    if (defined.size() >= 2) {
        double acc = 0.0;
        for (double v : defined) acc += (v - mean) * (v - mean);
        s.stddev = std::sqrt(acc / static_cast<double>(defined.size() - 1));
    }
    return s;
}

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

nlohmann::json opt_json(const std::optional<double>& v) {
    if (v) return *v;
    return nullptr;
}

nlohmann::json summary_json(const MetricSummary& s) {
    nlohmann::json j;
    j["mean"] = s.defined_folds > 0 ? nlohmann::json(s.mean) : nlohmann::json();
    j["stddev"] = s.stddev ? nlohmann::json(*s.stddev) : nlohmann::json();
    j["defined_folds"] = s.defined_folds;
    return j;
}

std::string cell(const std::optional<double>& v) {
    return v ? fixed4(*v) : std::string("n/a");
}

}  // namespace

EvalReport aggregate_report(const std::vector<FoldMetrics>& folds) {
    if (folds.empty()) throw ArgumentError("aggregate_report: no folds");
    EvalReport r;
    r.folds = folds;
    auto collect = [&folds](auto getter) {
        std::vector<std::optional<double>> vs;
        for (const auto& f : folds) vs.push_back(getter(f));
        return vs;
    };
    r.auc = summarize(collect([](const FoldMetrics& f) {
        return std::optional<double>(f.roc_auc);
    }));
    r.accuracy = summarize(collect([](const FoldMetrics& f) {
        return std::optional<double>(f.accuracy);
    }));
    r.precision = summarize(collect([](const FoldMetrics& f) { return f.precision; }));
    r.sensitivity =
        summarize(collect([](const FoldMetrics& f) { return f.sensitivity; }));
    r.specificity =
        summarize(collect([](const FoldMetrics& f) { return f.specificity; }));
    return r;
}

std::string format_mean_std(const MetricSummary& s) {
    if (s.defined_folds == 0) return "n/a";
    return fixed4(s.mean) + " ± " + (s.stddev ? fixed4(*s.stddev) : "n/a");
}

std::string report_json(const EvalReport& report) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : report.folds) {
        folds.push_back({{"roc_auc", f.roc_auc},
                         {"accuracy", f.accuracy},
                         {"precision", opt_json(f.precision)},
                         {"sensitivity", opt_json(f.sensitivity)},
                         {"specificity", opt_json(f.specificity)},
                         {"counts",
                          {{"tp", f.counts.tp},
                           {"fp", f.counts.fp},
                           {"tn", f.counts.tn},
                           {"fn", f.counts.fn}}}});
    }
    const nlohmann::json doc = {{"folds", folds},
                                {"aggregate",
                                 {{"roc_auc", summary_json(report.auc)},
                                  {"accuracy", summary_json(report.accuracy)},
                                  {"precision", summary_json(report.precision)},
                                  {"sensitivity", summary_json(report.sensitivity)},
                                  {"specificity", summary_json(report.specificity)}}}};
    return doc.dump(2) + "\n";
}

std::string report_table(const EvalReport& report) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s %-15s %-15s %-15s %-15s %-15s\n",
                  "fold", "ROC-AUC", "Accuracy", "Precision", "Sensitivity",
                  "Specificity");
    out += line;
    for (std::size_t i = 0; i < report.folds.size(); ++i) {
        const auto& f = report.folds[i];
        std::snprintf(line, sizeof(line), "%-10zu %-15s %-15s %-15s %-15s %-15s\n",
                      i + 1, fixed4(f.roc_auc).c_str(), fixed4(f.accuracy).c_str(),
                      cell(f.precision).c_str(), cell(f.sensitivity).c_str(),
                      cell(f.specificity).c_str());
        out += line;
    }
    std::snprintf(line, sizeof(line), "%-10s %-15s %-15s %-15s %-15s %-15s\n",
                  "mean±std", format_mean_std(report.auc).c_str(),
                  format_mean_std(report.accuracy).c_str(),
                  format_mean_std(report.precision).c_str(),
                  format_mean_std(report.sensitivity).c_str(),
                  format_mean_std(report.specificity).c_str());
    out += line;
    return out;
}

}  // namespace scanet
