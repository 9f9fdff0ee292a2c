#pragma once

#include "viewret/dataset.hpp"
#include "viewret/error.hpp"
#include "viewret/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace viewret {

/// One frame of a dataset: index into Dataset::exams and frame index.
struct FrameRef {
    std::size_t exam = 0;
    std::size_t frame = 0;

    friend bool operator==(const FrameRef&, const FrameRef&) = default;
    friend auto operator<=>(const FrameRef&, const FrameRef&) = default;
};

enum class Provenance { within_exam, cross_exam };

struct PairExample {
    FrameRef a;
    FrameRef b;
    int label = 0; // 1 = same view
    Provenance provenance = Provenance::within_exam;
};

struct PairConfig {
    double negatives_per_positive = 1.0;

    void validate() const
    {
        if (!(negatives_per_positive >= 0.0)) {
            throw ConfigError("negatives_per_positive must be >= 0");
        }
    }
};

/// Positive and negative pairs for the exams of one patient and leg
/// (`exam_ids` index into ds.exams). Positives: every unordered pair of
/// annotated frames, within an exam or across two exams. Negatives: sampled
/// half as (annotated, non-annotated) and half as (non-annotated,
/// non-annotated), without repetition, up to the configured ratio.
inline std::vector<PairExample> build_pairs(const Dataset& ds, std::span<const std::size_t> exam_ids,
                                            const PairConfig& cfg, Rng& rng)
{
    cfg.validate();
    std::vector<std::size_t> exams;
    for (std::size_t id : exam_ids) {
        if (id >= ds.exams.size()) {
            throw InputError("build_pairs: exam index out of range");
        }
        const auto& e = ds.exams[id];
        const auto& first = ds.exams[exam_ids.front()];
        if (e.patient != first.patient || e.leg != first.leg) {
            throw InputError("build_pairs: exams must share patient and leg");
        }
        if (e.annotated.empty()) {
            log::warn("build_pairs: patient " + std::to_string(e.patient) + " leg " + leg_tag(e.leg) + " exam " +
                      time_tag(e.time) + " has no annotated view; skipped");
            continue;
        }
        exams.push_back(id);
    }

    std::vector<FrameRef> annotated, other;
    for (std::size_t id : exams) {
        const auto& e = ds.exams[id];
        const std::set<std::size_t> ann(e.annotated.begin(), e.annotated.end());
        for (std::size_t f = 0; f < e.frames.size(); ++f) {
            (ann.count(f) ? annotated : other).push_back({id, f});
        }
    }

    std::vector<PairExample> out;
    for (std::size_t i = 0; i < annotated.size(); ++i) {
        for (std::size_t j = i + 1; j < annotated.size(); ++j) {
            const bool same = annotated[i].exam == annotated[j].exam;
            out.push_back({annotated[i], annotated[j], 1, same ? Provenance::within_exam : Provenance::cross_exam});
        }
    }
    const std::size_t positives = out.size();
    const auto wanted = static_cast<std::size_t>(std::llround(cfg.negatives_per_positive * positives));

    const std::size_t cap_an = annotated.size() * other.size();
    const std::size_t cap_nn = other.size() * (other.size() - (other.empty() ? 0 : 1)) / 2;
    std::size_t want_an = std::min((wanted + 1) / 2, cap_an);
    std::size_t want_nn = std::min(wanted - want_an, cap_nn);
    want_an = std::min(wanted - want_nn, cap_an);
    if (want_an + want_nn < wanted) {
        log::warn("build_pairs: only " + std::to_string(want_an + want_nn) + " negatives available");
    }

    std::set<std::pair<FrameRef, FrameRef>> seen;
    auto emit = [&](FrameRef a, FrameRef b) {
        if (b < a) {
            std::swap(a, b);
        }
        if (a == b || !seen.insert({a, b}).second) {
            return false;
        }
        out.push_back({a, b, 0, a.exam == b.exam ? Provenance::within_exam : Provenance::cross_exam});
        return true;
    };
    // Rejection sampling is fine while the request is well below capacity;
    // fall back to enumeration otherwise so the count is always exact.
    auto sample = [&](std::size_t want, std::size_t cap, auto draw, auto enumerate) {
        if (want == 0) {
            return;
        }
        if (want * 4 <= cap) {
            std::size_t got = 0;
            while (got < want) {
                auto [a, b] = draw();
                got += emit(a, b) ? 1 : 0;
            }
            return;
        }
        std::vector<std::pair<FrameRef, FrameRef>> all = enumerate();
        rng.shuffle(all.begin(), all.end());
        std::size_t got = 0;
        for (const auto& [a, b] : all) {
            if (got == want) {
                break;
            }
            got += emit(a, b) ? 1 : 0;
        }
    };
    sample(
        want_an, cap_an,
        [&] {
            return std::pair{annotated[rng.uniform_int(annotated.size())], other[rng.uniform_int(other.size())]};
        },
        [&] {
            std::vector<std::pair<FrameRef, FrameRef>> all;
            for (const auto& a : annotated) {
                for (const auto& b : other) {
                    all.push_back({a, b});
                }
            }
            return all;
        });
    sample(
        want_nn, cap_nn,
        [&] { return std::pair{other[rng.uniform_int(other.size())], other[rng.uniform_int(other.size())]}; },
        [&] {
            std::vector<std::pair<FrameRef, FrameRef>> all;
            for (std::size_t i = 0; i < other.size(); ++i) {
                for (std::size_t j = i + 1; j < other.size(); ++j) {
                    all.push_back({other[i], other[j]});
                }
            }
            return all;
        });
    return out;
}

/// Pairs for every (patient, leg) group of the given patients, in
/// (patient, leg) order. Each group draws from its own derived stream.
inline std::vector<PairExample> build_all_pairs(const Dataset& ds, std::span<const std::size_t> patients,
                                                const PairConfig& cfg, std::uint64_t seed)
{
    std::vector<PairExample> out;
    for (std::size_t p : patients) {
        for (Leg leg : all_legs) {
            const auto ids = ds.exams_of(p, leg);
            if (ids.empty()) {
                continue;
            }
            Rng rng = Rng::derive(seed, {p, static_cast<std::uint64_t>(leg), 3000});
            auto part = build_pairs(ds, ids, cfg, rng);
            out.insert(out.end(), part.begin(), part.end());
        }
    }
    return out;
}

struct PatientSplit {
    std::vector<std::size_t> ssl;        // contrastive pretraining patients
    std::vector<std::size_t> classifier; // patients whose pairs train/validate/test the classifier
};

/// Shuffles the patients and assigns round(80%) to contrastive pretraining,
/// the rest to the classifier. Both lists are returned sorted.
inline PatientSplit split_dataset(std::vector<std::size_t> patients, std::uint64_t seed)
{
    std::sort(patients.begin(), patients.end());
    if (std::adjacent_find(patients.begin(), patients.end()) != patients.end()) {
        throw ConfigError("split_dataset: duplicate patient ids");
    }
    if (patients.size() < 10) {
        throw ConfigError("split_dataset: need at least 10 patients, got " + std::to_string(patients.size()));
    }
    Rng rng = Rng::derive(seed, {4000});
    rng.shuffle(patients.begin(), patients.end());
    const auto n_ssl = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(patients.size())));
    PatientSplit s;
    s.ssl.assign(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(n_ssl));
    s.classifier.assign(patients.begin() + static_cast<std::ptrdiff_t>(n_ssl), patients.end());
    std::sort(s.ssl.begin(), s.ssl.end());
    std::sort(s.classifier.begin(), s.classifier.end());
    return s;
}

struct PairSplit {
    std::vector<PairExample> train, val, test;
};

/// Shuffles pairs and cuts them 80/10/10 (train takes round(80%), val
/// round(10%), test the remainder).
inline PairSplit split_pairs(std::vector<PairExample> pairs, std::uint64_t seed)
{
    Rng rng = Rng::derive(seed, {5000});
    rng.shuffle(pairs.begin(), pairs.end());
    const double n = static_cast<double>(pairs.size());
    const auto n_train = static_cast<std::size_t>(std::llround(0.8 * n));
    const auto n_val = std::min(pairs.size() - n_train, static_cast<std::size_t>(std::llround(0.1 * n)));
    PairSplit s;
    const auto b = pairs.begin();
    s.train.assign(b, b + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(b + static_cast<std::ptrdiff_t>(n_train), b + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(b + static_cast<std::ptrdiff_t>(n_train + n_val), pairs.end());
    return s;
}

inline nlohmann::ordered_json pair_record(const Dataset& ds, const PairExample& p)
{
    const auto& ea = ds.exams.at(p.a.exam);
    const auto& eb = ds.exams.at(p.b.exam);
    nlohmann::ordered_json j;
    j["patient"] = ea.patient;
    j["leg"] = leg_tag(ea.leg);
    j["exam_a"] = time_tag(ea.time);
    j["idx_a"] = p.a.frame;
    j["exam_b"] = time_tag(eb.time);
    j["idx_b"] = p.b.frame;
    j["label"] = p.label;
    j["provenance"] = p.provenance == Provenance::within_exam ? "within-exam" : "cross-exam";
    return j;
}

/// Line-delimited manifest, one JSON object per pair.
inline std::string pairs_to_jsonl(const Dataset& ds, std::span<const PairExample> pairs)
{
    std::string out;
    for (const auto& p : pairs) {
        out += pair_record(ds, p).dump();
        out += '\n';
    }
    return out;
}

inline std::vector<PairExample> pairs_from_jsonl(const Dataset& ds, const std::string& text)
{
    std::vector<PairExample> out;
    std::istringstream in(text);
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        const std::size_t line_start = offset;
        offset += line.size() + 1;
        if (line.empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            const auto patient = j.at("patient").get<std::size_t>();
            const Leg leg = parse_leg(j.at("leg").get<std::string>());
            auto locate = [&](const char* exam_key, const char* idx_key) {
                const ExamSequence* e = ds.find(patient, leg, parse_time(j.at(exam_key).get<std::string>()));
                if (e == nullptr) {
                    throw FormatError("pair manifest refers to a missing exam", line_start);
                }
                const auto idx = j.at(idx_key).get<std::size_t>();
                if (idx >= e->frames.size()) {
                    throw FormatError("pair manifest frame index out of range", line_start);
                }
                return FrameRef{static_cast<std::size_t>(e - ds.exams.data()), idx};
            };
            PairExample p;
            p.a = locate("exam_a", "idx_a");
            p.b = locate("exam_b", "idx_b");
            p.label = j.at("label").get<int>();
            p.provenance = j.at("provenance").get<std::string>() == "within-exam" ? Provenance::within_exam
                                                                                   : Provenance::cross_exam;
            out.push_back(p);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("pair manifest: ") + e.what(), line_start);
        }
    }
    return out;
}

} // namespace viewret
