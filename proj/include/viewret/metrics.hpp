#pragma once

#include "viewret/dataset.hpp"
#include "viewret/error.hpp"
#include "viewret/frame.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace viewret {

struct ScoredLabel {
    double score = 0.0;
    int label = 0; // 0 or 1
};

inline void check_scored(std::span<const ScoredLabel> items, std::size_t& positives, std::size_t& negatives)
{
    positives = negatives = 0;
    for (const auto& it : items) {
        if (!std::isfinite(it.score)) {
            throw MetricError("non-finite score");
        }
        if (it.label == 1) {
            ++positives;
        } else if (it.label == 0) {
            ++negatives;
        } else {
            throw MetricError("label must be 0 or 1, got " + std::to_string(it.label));
        }
    }
}

/// Mann–Whitney AUC from average ranks; tied scores count one half.
inline double roc_auc(std::span<const ScoredLabel> items)
{
    std::size_t pos = 0, neg = 0;
    check_scored(items, pos, neg);
    if (pos == 0 || neg == 0) {
        throw MetricError("roc_auc: both classes must be present");
    }
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return items[a].score < items[b].score; });
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && items[order[j]].score == items[order[i]].score) {
            ++j;
        }
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j); // ranks i+1..j
        for (std::size_t k = i; k < j; ++k) {
            if (items[order[k]].label == 1) {
                rank_sum += avg_rank;
            }
        }
        i = j;
    }
    const double p = static_cast<double>(pos), n = static_cast<double>(neg);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

struct Prf1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Precision, recall and F1 with score >= threshold predicted positive.
/// Zero denominators give 0 and a warning.
inline Prf1 prf1(std::span<const ScoredLabel> items, double threshold = 0.5)
{
    std::size_t pos = 0, neg = 0;
    check_scored(items, pos, neg);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& it : items) {
        const bool predicted = it.score >= threshold;
        tp += predicted && it.label == 1;
        fp += predicted && it.label == 0;
        fn += !predicted && it.label == 1;
    }
    Prf1 r;
    if (tp + fp == 0) {
        log::warn("prf1: nothing predicted positive; precision defined as 0");
    } else {
        r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    if (tp + fn == 0) {
        log::warn("prf1: no positive labels; recall defined as 0");
    } else {
        r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    if (r.precision + r.recall == 0.0) {
        log::warn("prf1: precision and recall are both 0; f1 defined as 0");
    } else {
        r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    }
    return r;
}

struct AreaMeasurement {
    double area_cm2 = 0.0;
    double spacing_x_cm = 0.0;
    double spacing_y_cm = 0.0;
};

/// Foreground pixel count times pixel area. The mask must be binary.
inline AreaMeasurement mask_area(const Frame& mask, double spacing_x_cm, double spacing_y_cm)
{
    if (!(spacing_x_cm > 0.0 && spacing_y_cm > 0.0)) {
        throw MetricError("mask_area: pixel spacing must be > 0");
    }
    std::size_t count = 0;
    for (float v : mask.pixels) {
        if (v == 1.0f) {
            ++count;
        } else if (v != 0.0f) {
            throw MetricError("mask_area: mask is not binary");
        }
    }
    if (count == 0) {
        throw MetricError("mask_area: empty mask");
    }
    return {static_cast<double>(count) * spacing_x_cm * spacing_y_cm, spacing_x_cm, spacing_y_cm};
}

inline AreaMeasurement mask_area(const Frame& mask, double spacing_cm) { return mask_area(mask, spacing_cm, spacing_cm); }

/// Relative absolute area difference |a_gt - a_pred| / a_gt.
inline double area_error(double a_gt, double a_pred)
{
    if (!(a_gt > 0.0)) {
        throw MetricError("area_error: ground-truth area must be > 0");
    }
    return std::abs(a_gt - a_pred) / a_gt;
}

inline double area_error(const AreaMeasurement& gt, const AreaMeasurement& pred)
{
    return area_error(gt.area_cm2, pred.area_cm2);
}

/// One retrieval: the reference view of a patient/leg at T1 matched against
/// the frames of one exam of the same leg.
struct RetrievalCase {
    std::size_t patient = 0;
    Leg leg = Leg::left;
    ExamTime candidate_time = ExamTime::T1;
    std::size_t ground_truth = 0;  // reference frame of the candidate exam
    std::size_t predicted = 0;     // top-ranked candidate
    bool top1_hit = false;         // top-ranked frame is an annotated view
    bool top3_hit = false;         // an annotated view is among the top three
    double d = 0.0;
};

struct MeanSe {
    std::size_t count = 0;
    double mean = 0.0;
    double standard_error = 0.0; // sample std / sqrt(count); 0 for count < 2
};

inline MeanSe mean_se(std::span<const double> values)
{
    MeanSe r;
    r.count = values.size();
    if (values.empty()) {
        return r;
    }
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    r.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) {
            ss += (v - r.mean) * (v - r.mean);
        }
        const double n = static_cast<double>(values.size());
        r.standard_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    return r;
}

struct RetrievalSummary {
    std::map<std::string, MeanSe> buckets; // "T1T1", "T1T2", "T1T3", "overall"
    double top1 = 0.0;
    double top3 = 0.0;
};

inline std::string bucket_name(ExamTime candidate_time) { return "T1" + time_tag(candidate_time); }

inline RetrievalSummary summarize_retrieval(std::span<const RetrievalCase> cases)
{
    if (cases.empty()) {
        throw ConfigError("summarize_retrieval: no retrieval cases");
    }
    std::map<std::string, std::vector<double>> ds;
    RetrievalSummary s;
    for (const auto& c : cases) {
        ds[bucket_name(c.candidate_time)].push_back(c.d);
        ds["overall"].push_back(c.d);
        s.top1 += c.top1_hit ? 1.0 : 0.0;
        s.top3 += c.top3_hit ? 1.0 : 0.0;
    }
    for (ExamTime t : all_times) {
        s.buckets[bucket_name(t)] = mean_se(ds[bucket_name(t)]);
    }
    s.buckets["overall"] = mean_se(ds["overall"]);
    s.top1 /= static_cast<double>(cases.size());
    s.top3 /= static_cast<double>(cases.size());
    return s;
}

} // namespace viewret
