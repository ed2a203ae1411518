#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace fka {

/// Mann-Whitney AUC: probability that a random positive scores above a random
/// negative, ties counting one half. Labels are 0/1, 1 = positive (fake).
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct RocPoint {
    double fpr = 0, tpr = 0;
};

/// ROC points for thresholds at +inf and at every distinct score (predict
/// positive when score >= threshold), in order of decreasing threshold.
std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);

/// Rate where false-positive and false-negative rates meet on the ROC
/// polyline, linearly interpolated between neighbouring points.
double eer(const std::vector<double>& scores, const std::vector<int>& labels);

double acc(const std::vector<int>& labels, const std::vector<int>& predicted);

struct MetricsReport {
    double auc = 0, eer = 0, acc = 0;
    std::vector<RocPoint> roc;
    std::size_t n = 0;
    std::string domain;
    std::string split;

    nlohmann::ordered_json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
};

MetricsReport make_report(const std::vector<double>& scores, const std::vector<int>& labels,
                          const std::vector<int>& predicted, std::string domain, std::string split);

} // namespace fka
