#include "fka/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "fka/errors.hpp"

namespace fka {

namespace {

void check_binary(const std::vector<double>& scores, const std::vector<int>& labels, const char* what) {
    if (scores.size() != labels.size()) {
        throw InputError(std::string(what) + ": " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(labels.size()) + " labels");
    }
    std::size_t pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw InputError(std::string(what) + ": labels must be 0 or 1");
        if (!std::isfinite(scores[i])) throw InputError(std::string(what) + ": non-finite score");
        pos += labels[i];
    }
    if (pos == 0 || pos == labels.size()) throw MetricError(std::string(what) + ": needs both classes");
}

std::vector<std::size_t> order_by_score_desc(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

} // namespace

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_binary(scores, labels, "auc");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Count in half-units so ties stay exact integers.
    std::uint64_t half_units = 0, neg_below = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        std::uint64_t tie_pos = 0, tie_neg = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            (labels[idx[j]] ? tie_pos : tie_neg) += 1;
            ++j;
        }
        half_units += tie_pos * (2 * neg_below + tie_neg);
        neg_below += tie_neg;
        pos += tie_pos;
        neg += tie_neg;
        i = j;
    }
    return static_cast<double>(half_units) / static_cast<double>(2 * pos * neg);
}

std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_binary(scores, labels, "roc_curve");
    const auto idx = order_by_score_desc(scores);
    double pos = 0, neg = 0;
    for (int l : labels) (l ? pos : neg) += 1;

    std::vector<RocPoint> points = {{0.0, 0.0}};
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            (labels[idx[j]] ? tp : fp) += 1;
            ++j;
        }
        points.push_back({fp / neg, tp / pos});
        i = j;
    }
    return points;
}

double eer(const std::vector<double>& scores, const std::vector<int>& labels) {
    const auto roc = roc_curve(scores, labels);
    // d = fpr - fnr rises from -1 to +1 along the curve.
    for (std::size_t i = 0; i < roc.size(); ++i) {
        const double fpr1 = roc[i].fpr, fnr1 = 1.0 - roc[i].tpr;
        const double d1 = fpr1 - fnr1;
        if (d1 == 0.0) return fpr1;
        if (d1 > 0.0) {
            const double fpr0 = roc[i - 1].fpr, fnr0 = 1.0 - roc[i - 1].tpr;
            const double d0 = fpr0 - fnr0;
            const double t = d0 / (d0 - d1);
            return fpr0 + t * (fpr1 - fpr0);
        }
    }
    return 1.0;
}

double acc(const std::vector<int>& labels, const std::vector<int>& predicted) {
    if (labels.size() != predicted.size()) {
        throw InputError("acc: " + std::to_string(labels.size()) + " labels vs " + std::to_string(predicted.size()) +
                         " predictions");
    }
    if (labels.empty()) throw MetricError("acc: no samples");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += labels[i] == predicted[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

nlohmann::ordered_json MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["auc"] = auc;
    j["eer"] = eer;
    j["acc"] = acc;
    j["n"] = n;
    j["domain"] = domain;
    j["split"] = split;
    return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.auc = j.at("auc").get<double>();
    r.eer = j.at("eer").get<double>();
    r.acc = j.at("acc").get<double>();
    r.n = j.at("n").get<std::size_t>();
    r.domain = j.at("domain").get<std::string>();
    r.split = j.at("split").get<std::string>();
    return r;
}

MetricsReport make_report(const std::vector<double>& scores, const std::vector<int>& labels,
                          const std::vector<int>& predicted, std::string domain, std::string split) {
    MetricsReport r;
    r.auc = fka::auc(scores, labels);
    r.eer = fka::eer(scores, labels);
    r.acc = fka::acc(labels, predicted);
    r.roc = roc_curve(scores, labels);
    r.n = labels.size();
    r.domain = std::move(domain);
    r.split = std::move(split);
    return r;
}

} // namespace fka
