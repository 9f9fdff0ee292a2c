#pragma once

#include "viewret/dataset.hpp"
#include "viewret/error.hpp"
#include "viewret/frame.hpp"
#include "viewret/parallel.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace viewret {

struct RankedCandidate {
    std::size_t index = 0;
    double score = 0.0;
};

/// Descending by score; equal scores keep the lower index first.
inline std::vector<RankedCandidate> rank_by_score(std::span<const double> scores)
{
    std::vector<RankedCandidate> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = {i, scores[i]};
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const RankedCandidate& a, const RankedCandidate& b) { return a.score > b.score; });
    return out;
}

/// {ref, candidates: [{index, score}]} in ranked order.
inline nlohmann::ordered_json ranking_json(const std::string& ref, std::span<const RankedCandidate> ranking)
{
    nlohmann::ordered_json j;
    j["ref"] = ref;
    j["candidates"] = nlohmann::ordered_json::array();
    for (const auto& c : ranking) {
        j["candidates"].push_back({{"index", c.index}, {"score", c.score}});
    }
    return j;
}

/// Whole-frame normalized cross-correlation; 0 when either frame is constant.
inline double ncc(const Frame& a, const Frame& b)
{
    if (a.height != b.height || a.width != b.width) {
        throw ShapeError("ncc: frames differ in size");
    }
    const std::size_t n = a.size();
    if (n == 0) {
        throw ShapeError("ncc: empty frames");
    }
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a.pixels[i];
        mb += b.pixels[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a.pixels[i] - ma;
        const double db = b.pixels[i] - mb;
        ab += da * db;
        aa += da * da;
        bb += db * db;
    }
    if (aa == 0.0 || bb == 0.0) {
        return 0.0;
    }
    return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

inline std::vector<RankedCandidate> ncc_retrieve(const Frame& ref, std::span<const Frame> candidates)
{
    if (candidates.empty()) {
        throw InputError("ncc_retrieve: no candidate frames");
    }
    std::vector<double> scores(candidates.size());
    parallel_for(candidates.size(), [&](std::size_t i) { scores[i] = ncc(ref, candidates[i]); });
    return rank_by_score(scores);
}

inline std::vector<RankedCandidate> ncc_retrieve(const Frame& ref, const ExamSequence& candidates)
{
    return ncc_retrieve(ref, std::span<const Frame>(candidates.frames));
}

} // namespace viewret
