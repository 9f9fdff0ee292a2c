#pragma once

#include "viewret/checkpoint.hpp"
#include "viewret/config.hpp"
#include "viewret/dataset.hpp"
#include "viewret/metrics.hpp"
#include "viewret/ncc.hpp"
#include "viewret/pairs.hpp"
#include "viewret/training.hpp"

#include "json.hpp"

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace viewret {

// ---------------------------------------------------------------------------
// data preparation shared by training and evaluation

inline PatientSplit patient_split(const Dataset& ds, const RunConfig& cfg)
{
    return split_dataset(ds.patients(), cfg.seed);
}

/// Every frame of every exam of the given patients (contrastive pretraining
/// needs no labels).
inline std::vector<const Frame*> frames_of(const Dataset& ds, std::span<const std::size_t> patients)
{
    std::vector<const Frame*> out;
    for (const auto& e : ds.exams) {
        if (std::find(patients.begin(), patients.end(), e.patient) != patients.end()) {
            for (const auto& f : e.frames) {
                out.push_back(&f);
            }
        }
    }
    return out;
}

/// Labeled pairs of the classifier patients, cut 80/10/10.
inline PairSplit classifier_pairs(const Dataset& ds, const RunConfig& cfg)
{
    const PatientSplit split = patient_split(ds, cfg);
    return split_pairs(build_all_pairs(ds, split.classifier, cfg.pairs, cfg.seed), cfg.seed);
}

/// Embeddings of all frames of a set of exams; row = offset[exam] + frame.
struct ExamEmbeddings {
    std::map<std::size_t, std::size_t> offset;
    Tensor table;

    std::size_t row(const FrameRef& r) const
    {
        const auto it = offset.find(r.exam);
        if (it == offset.end()) {
            throw InputError("frame of exam " + std::to_string(r.exam) + " was not embedded");
        }
        return it->second + r.frame;
    }

    EmbeddedPairs pairs(std::span<const PairExample> ps) const
    {
        EmbeddedPairs out;
        for (const auto& p : ps) {
            out.a.push_back(row(p.a));
            out.b.push_back(row(p.b));
            out.labels.push_back(p.label);
        }
        return out;
    }
};

inline ExamEmbeddings embed_patients(const Dataset& ds, std::span<const std::size_t> patients,
                                     const EncoderParams& encoder)
{
    ExamEmbeddings out;
    std::vector<const Frame*> frames;
    for (std::size_t k = 0; k < ds.exams.size(); ++k) {
        const auto& e = ds.exams[k];
        if (std::find(patients.begin(), patients.end(), e.patient) == patients.end()) {
            continue;
        }
        out.offset[k] = frames.size();
        for (const auto& f : e.frames) {
            frames.push_back(&f);
        }
    }
    out.table = embed_frames(frames, encoder);
    return out;
}

inline FramePairs frame_pairs(const Dataset& ds, std::span<const PairExample> ps)
{
    FramePairs out;
    for (const auto& p : ps) {
        out.a.push_back(&ds.exams.at(p.a.exam).frames.at(p.a.frame));
        out.b.push_back(&ds.exams.at(p.b.exam).frames.at(p.b.frame));
        out.labels.push_back(p.label);
    }
    return out;
}

/// Writes each logged epoch as one JSON line.
class JsonlWriter {
public:
    void operator()(const nlohmann::ordered_json& j) { text_ += j.dump() + "\n"; }
    const std::string& text() const { return text_; }

private:
    std::string text_;
};

// ---------------------------------------------------------------------------
// training stages

struct SslStage {
    Checkpoint checkpoint; // encoder + projection head
    std::string metrics;   // one JSON object per epoch
    std::vector<double> epoch_loss;
};

inline SslStage run_train_ssl(const Dataset& ds, const RunConfig& cfg)
{
    const PatientSplit split = patient_split(ds, cfg);
    const auto frames = frames_of(ds, split.ssl);
    JsonlWriter log;
    SslResult r = train_ssl(frames, cfg.ssl, std::ref(log));
    SslStage out;
    export_params(out.checkpoint, r.encoder);
    export_params(out.checkpoint, r.projection);
    out.metrics = log.text();
    out.epoch_loss = std::move(r.epoch_loss);
    return out;
}

struct ClassifierStage {
    Checkpoint checkpoint;
    std::string metrics;
    std::string train_pairs, val_pairs, test_pairs; // manifests
};

inline ClassifierStage run_train_classifier(const Dataset& ds, const EncoderParams& encoder, const RunConfig& cfg)
{
    const PatientSplit split = patient_split(ds, cfg);
    const PairSplit pairs = split_pairs(build_all_pairs(ds, split.classifier, cfg.pairs, cfg.seed), cfg.seed);
    const ExamEmbeddings emb = embed_patients(ds, split.classifier, encoder);
    JsonlWriter log;
    const ClassifierParams clf =
        train_classifier(emb.table, emb.pairs(pairs.train), emb.pairs(pairs.val), cfg.classifier, std::ref(log));
    ClassifierStage out;
    export_params(out.checkpoint, clf);
    out.metrics = log.text();
    out.train_pairs = pairs_to_jsonl(ds, pairs.train);
    out.val_pairs = pairs_to_jsonl(ds, pairs.val);
    out.test_pairs = pairs_to_jsonl(ds, pairs.test);
    return out;
}

struct SupervisedStage {
    Checkpoint checkpoint;
    std::string metrics;
};

inline SupervisedStage run_train_supervised(const Dataset& ds, const RunConfig& cfg)
{
    const PairSplit pairs = classifier_pairs(ds, cfg);
    JsonlWriter log;
    const SupervisedParams sup =
        train_supervised(frame_pairs(ds, pairs.train), frame_pairs(ds, pairs.val), cfg.supervised, std::ref(log));
    SupervisedStage out;
    export_params(out.checkpoint, sup);
    out.metrics = log.text();
    return out;
}

// ---------------------------------------------------------------------------
// evaluation

/// One retrieval query: the T1 reference view of a patient/leg against the
/// frames of one exam of that leg. For the T1 exam itself the reference
/// frame is removed from the candidates.
struct RetrievalTask {
    std::size_t patient = 0;
    Leg leg = Leg::left;
    std::size_t ref_exam = 0;
    std::size_t ref_frame = 0;
    std::size_t candidate_exam = 0;
    std::vector<std::size_t> candidates; // frame indices into the candidate exam
};

/// Reference frame of an exam: the ground-truth reference if known, else the
/// middle annotated view.
inline std::size_t reference_frame(const ExamSequence& e)
{
    if (e.reference) {
        return *e.reference;
    }
    if (e.annotated.empty()) {
        throw InputError("exam without reference or annotated views");
    }
    std::vector<std::size_t> a = e.annotated;
    std::sort(a.begin(), a.end());
    return a[a.size() / 2];
}

inline std::vector<RetrievalTask> retrieval_tasks(const Dataset& ds, std::span<const std::size_t> patients)
{
    std::vector<RetrievalTask> out;
    for (std::size_t p : patients) {
        for (Leg leg : all_legs) {
            const ExamSequence* t1 = ds.find(p, leg, ExamTime::T1);
            if (t1 == nullptr || (t1->annotated.empty() && !t1->reference)) {
                continue;
            }
            for (ExamTime t : all_times) {
                const ExamSequence* c = ds.find(p, leg, t);
                if (c == nullptr) {
                    continue;
                }
                RetrievalTask task;
                task.patient = p;
                task.leg = leg;
                task.ref_exam = static_cast<std::size_t>(t1 - ds.exams.data());
                task.ref_frame = reference_frame(*t1);
                task.candidate_exam = static_cast<std::size_t>(c - ds.exams.data());
                for (std::size_t f = 0; f < c->frames.size(); ++f) {
                    if (!(c == t1 && f == task.ref_frame)) {
                        task.candidates.push_back(f);
                    }
                }
                out.push_back(std::move(task));
            }
        }
    }
    return out;
}

/// A scoring method under evaluation.
struct Method {
    std::string name;
    /// Match scores for labeled pairs.
    std::function<std::vector<double>(std::span<const PairExample>)> score_pairs;
    /// Ranking of task.candidates (indices into that list).
    std::function<std::vector<RankedCandidate>(const RetrievalTask&)> rank;
};

inline Method proposed_method(const ExamEmbeddings& emb, const ClassifierParams& clf)
{
    Method m;
    m.name = "proposed";
    m.score_pairs = [&emb, &clf](std::span<const PairExample> ps) {
        return viewret::score_pairs(emb.table, emb.pairs(ps), clf);
    };
    m.rank = [&emb, &clf](const RetrievalTask& t) {
        const auto ref = emb.table.data().subspan(emb.row({t.ref_exam, t.ref_frame}) * embedding_dim, embedding_dim);
        Tensor h_ref = Tensor::from({embedding_dim}, ref);
        Tensor cands({t.candidates.size(), embedding_dim});
        for (std::size_t i = 0; i < t.candidates.size(); ++i) {
            const auto row = emb.table.data().subspan(emb.row({t.candidate_exam, t.candidates[i]}) * embedding_dim,
                                                      embedding_dim);
            std::copy(row.begin(), row.end(), cands.data().begin() + static_cast<std::ptrdiff_t>(i * embedding_dim));
        }
        return retrieve(h_ref, cands, clf);
    };
    return m;
}

inline Method ncc_method(const Dataset& ds)
{
    Method m;
    m.name = "ncc";
    m.score_pairs = [&ds](std::span<const PairExample> ps) {
        std::vector<double> s(ps.size());
        parallel_for(ps.size(), [&](std::size_t i) {
            s[i] = ncc(ds.exams[ps[i].a.exam].frames[ps[i].a.frame], ds.exams[ps[i].b.exam].frames[ps[i].b.frame]);
        });
        return s;
    };
    m.rank = [&ds](const RetrievalTask& t) {
        std::vector<Frame> cands;
        for (std::size_t f : t.candidates) {
            cands.push_back(ds.exams[t.candidate_exam].frames[f]);
        }
        return ncc_retrieve(ds.exams[t.ref_exam].frames[t.ref_frame], cands);
    };
    return m;
}

inline Method supervised_method(const Dataset& ds, const SupervisedParams& sup)
{
    Method m;
    m.name = "supervised";
    m.score_pairs = [&ds, &sup](std::span<const PairExample> ps) { return score_supervised(frame_pairs(ds, ps), sup); };
    m.rank = [&ds, &sup](const RetrievalTask& t) {
        std::vector<Frame> cands;
        for (std::size_t f : t.candidates) {
            cands.push_back(ds.exams[t.candidate_exam].frames[f]);
        }
        return retrieve_supervised(ds.exams[t.ref_exam].frames[t.ref_frame], cands, sup);
    };
    return m;
}

struct EvalResult {
    nlohmann::ordered_json report;
    std::string scores;   // one JSON object per test pair
    std::string rankings; // one JSON object per retrieval task
    double auc = 0.0;
    double mean_d = 0.0;
};

inline nlohmann::ordered_json to_json(const MeanSe& m)
{
    return {{"count", m.count}, {"mean", m.mean}, {"standard_error", m.standard_error}};
}

/// Pair metrics on the test slice and retrieval area errors on the
/// classifier patients.
inline EvalResult evaluate(const Dataset& ds, const RunConfig& cfg, const Method& method)
{
    const PatientSplit split = patient_split(ds, cfg);
    const PairSplit pairs = split_pairs(build_all_pairs(ds, split.classifier, cfg.pairs, cfg.seed), cfg.seed);
    if (pairs.test.empty()) {
        throw ConfigError("evaluate: empty test slice");
    }
    EvalResult out;
    const std::vector<double> scores = method.score_pairs(pairs.test);
    std::vector<int> labels;
    for (const auto& p : pairs.test) {
        labels.push_back(p.label);
    }
    const auto items = scored_labels(scores, labels);
    out.auc = roc_auc(items);
    const Prf1 pr = prf1(items);
    for (std::size_t i = 0; i < pairs.test.size(); ++i) {
        auto j = pair_record(ds, pairs.test[i]);
        j["score"] = scores[i];
        out.scores += j.dump() + "\n";
    }

    std::vector<RetrievalCase> cases;
    for (const RetrievalTask& task : retrieval_tasks(ds, split.classifier)) {
        const ExamSequence& exam = ds.exams[task.candidate_exam];
        const ExamSequence& ref = ds.exams[task.ref_exam];
        if (exam.masks.empty()) {
            throw InputError("evaluate: exam without masks (patient " + std::to_string(exam.patient) + ")");
        }
        const auto ranking = method.rank(task);
        std::vector<RankedCandidate> ranked;
        for (const auto& r : ranking) {
            ranked.push_back({task.candidates[r.index], r.score});
        }
        RetrievalCase c;
        c.patient = task.patient;
        c.leg = task.leg;
        c.candidate_time = exam.time;
        c.ground_truth = exam.time == ExamTime::T1 ? task.ref_frame : reference_frame(exam);
        c.predicted = ranked.front().index;
        auto annotated = [&](std::size_t f) {
            return std::find(exam.annotated.begin(), exam.annotated.end(), f) != exam.annotated.end();
        };
        c.top1_hit = annotated(c.predicted);
        for (std::size_t k = 0; k < std::min<std::size_t>(3, ranked.size()); ++k) {
            c.top3_hit = c.top3_hit || annotated(ranked[k].index);
        }
        const double a_gt = mask_area(exam.masks[c.ground_truth], exam.pixel_spacing_cm).area_cm2;
        const double a_pred = mask_area(exam.masks[c.predicted], exam.pixel_spacing_cm).area_cm2;
        c.d = area_error(a_gt, a_pred);
        cases.push_back(c);

        nlohmann::ordered_json r;
        r["patient"] = task.patient;
        r["leg"] = leg_tag(task.leg);
        r["ref_exam"] = time_tag(ref.time);
        r["ref_index"] = task.ref_frame;
        r["candidate_exam"] = time_tag(exam.time);
        r["ground_truth"] = c.ground_truth;
        r["predicted"] = c.predicted;
        r["area_gt_cm2"] = a_gt;
        r["area_pred_cm2"] = a_pred;
        r["d"] = c.d;
        r["ranking"] = ranking_json("", ranked)["candidates"];
        out.rankings += r.dump() + "\n";
    }
    const RetrievalSummary summary = summarize_retrieval(cases);
    out.mean_d = summary.buckets.at("overall").mean;

    auto& rep = out.report;
    rep["method"] = method.name;
    rep["auc"] = out.auc;
    rep["precision"] = pr.precision;
    rep["recall"] = pr.recall;
    rep["f1"] = pr.f1;
    rep["mean_d"] = out.mean_d;
    rep["d_standard_error"] = summary.buckets.at("overall").standard_error;
    nlohmann::ordered_json buckets;
    for (const char* b : {"T1T1", "T1T2", "T1T3", "overall"}) {
        buckets[b] = to_json(summary.buckets.at(b));
    }
    rep["d_buckets"] = buckets;
    rep["top1"] = summary.top1;
    rep["top3"] = summary.top3;
    rep["test_pairs"] = pairs.test.size();
    rep["test_positives"] = std::count(labels.begin(), labels.end(), 1);
    rep["retrieval_cases"] = cases.size();
    rep["threshold"] = 0.5;
    return out;
}

} // namespace viewret
