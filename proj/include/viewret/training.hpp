#pragma once

#include "viewret/adam.hpp"
#include "viewret/contrastive.hpp"
#include "viewret/error.hpp"
#include "viewret/metrics.hpp"
#include "viewret/model.hpp"
#include "viewret/ncc.hpp"
#include "viewret/parallel.hpp"
#include "viewret/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace viewret {

/// Receives one JSON object per finished epoch.
using EpochLogger = std::function<void(const nlohmann::ordered_json&)>;

struct SslTrainConfig {
    double lr = 1e-5;
    std::size_t batch = 128;  // N source frames, 2N views per step
    std::size_t epochs = 500;
    std::size_t steps_per_epoch = 0; // 0: one pass over the frames
    double temperature = 0.5;
    double l2_weight = 1e-5;
    double dropout = 0.2;
    std::uint64_t seed = 0;
    AugmentConfig augment;

    void validate() const
    {
        if (batch < 2) {
            throw ConfigError("ssl batch must be >= 2");
        }
        if (!(temperature > 0.0)) {
            throw ConfigError("ssl temperature must be > 0");
        }
        if (!(lr >= 0.0) || !(l2_weight >= 0.0)) {
            throw ConfigError("ssl lr and l2_weight must be >= 0");
        }
        if (!(dropout >= 0.0 && dropout < 1.0)) {
            throw ConfigError("ssl dropout must be in [0, 1)");
        }
        augment.validate();
    }
};

struct ClfTrainConfig {
    double lr = 1e-4;
    std::size_t batch = 42;
    std::size_t epochs = 60;
    double l2_weight = 1e-5;
    double dropout = 0.2;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (batch < 2) {
            throw ConfigError("classifier batch must be >= 2");
        }
        if (!(lr >= 0.0) || !(l2_weight >= 0.0)) {
            throw ConfigError("classifier lr and l2_weight must be >= 0");
        }
        if (!(dropout >= 0.0 && dropout < 1.0)) {
            throw ConfigError("classifier dropout must be in [0, 1)");
        }
    }
};

// ---------------------------------------------------------------------------
// contrastive pretraining

struct SslResult {
    EncoderParams encoder;
    ProjectionParams projection;
    std::vector<double> epoch_loss;
};

/// Contrastive pretraining on unlabeled frames. Each step takes N frames
/// (consecutive slices of a shuffled order, reshuffled when exhausted),
/// builds two augmented views per frame, and minimizes NT-Xent over the 2N
/// projections plus the L2 penalty with Adam. Every random choice comes from
/// a stream derived from (seed, step, item), so results do not depend on the
/// thread count.
inline SslResult train_ssl(std::span<const Frame* const> frames, const SslTrainConfig& cfg,
                           const EpochLogger& on_epoch = {})
{
    cfg.validate();
    if (frames.empty()) {
        throw ConfigError("train_ssl: no training frames");
    }
    const std::size_t n = std::min(cfg.batch, frames.size());
    if (n < 2) {
        throw ConfigError("train_ssl: need at least 2 frames");
    }
    if (n < cfg.batch) {
        log::warn("train_ssl: batch reduced to " + std::to_string(n) + " (dataset size)");
    }
    Rng init = Rng::derive(cfg.seed, {10});
    SslResult out;
    out.encoder = EncoderParams::init(init);
    out.projection = ProjectionParams::init(init);
    std::vector<Tensor*> params = out.encoder.parameters();
    for (Tensor* p : out.projection.parameters()) {
        params.push_back(p);
    }
    nn::AdamState adam(static_cast<float>(cfg.lr));

    const std::size_t steps_per_epoch =
        cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : (frames.size() + n - 1) / n;
    Rng order_rng = Rng::derive(cfg.seed, {11});
    std::vector<std::size_t> order(frames.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order.begin(), order.end());
    std::size_t cursor = 0;

    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
            if (cursor + n > order.size()) {
                order_rng.shuffle(order.begin(), order.end());
                cursor = 0;
            }
            std::vector<Frame> views(2 * n);
            parallel_for(n, [&](std::size_t k) {
                Rng r = Rng::derive(cfg.seed, {12, step, k});
                auto [a, b] = augment_pair(*frames[order[cursor + k]], cfg.augment, r);
                views[2 * k] = std::move(a);
                views[2 * k + 1] = std::move(b);
            });
            cursor += n;
            std::vector<const Frame*> ptrs(views.size());
            for (std::size_t i = 0; i < views.size(); ++i) {
                ptrs[i] = &views[i];
            }

            EncoderTrace etrace;
            Tensor h = encode_batch(frames_to_batch(ptrs), out.encoder, Mode::train, &etrace);
            Rng drop_rng = Rng::derive(cfg.seed, {13, step});
            ProjectionTrace ptrace;
            Tensor z = project_batch(h, out.projection, Mode::train, static_cast<float>(cfg.dropout), &drop_rng,
                                     &ptrace);
            const NtXentResult loss = nt_xent_loss(z, cfg.temperature);
            std::copy(loss.grad.begin(), loss.grad.end(), z.grad().begin());

            nn::zero_grads(params);
            project_backward(out.projection, ptrace, h, z);
            encode_backward(out.encoder, etrace, h);
            nn::adam_step(params, adam, static_cast<float>(cfg.l2_weight));
            epoch_loss += loss.loss;
        }
        epoch_loss /= static_cast<double>(steps_per_epoch);
        out.epoch_loss.push_back(epoch_loss);
        if (on_epoch) {
            nlohmann::ordered_json j;
            j["epoch"] = epoch + 1;
            j["loss"] = epoch_loss;
            on_epoch(j);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// frozen-encoder embeddings and the pair classifier

/// Eval-mode embeddings [M, 16384], computed in chunks. Rows do not depend on
/// chunking because the kernels treat batch rows independently.
inline Tensor embed_frames(std::span<const Frame* const> frames, const EncoderParams& encoder,
                           std::size_t chunk = 32)
{
    Tensor out({frames.size(), embedding_dim});
    for (std::size_t begin = 0; begin < frames.size(); begin += chunk) {
        const std::size_t end = std::min(frames.size(), begin + chunk);
        const Tensor h = encode_batch(frames_to_batch(frames.subspan(begin, end - begin)), encoder);
        std::copy(h.data().begin(), h.data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(begin * embedding_dim));
    }
    return out;
}

/// Pairs as row indices into an embedding table.
struct EmbeddedPairs {
    std::vector<std::size_t> a;
    std::vector<std::size_t> b;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

inline Tensor gather_pairs(const Tensor& table, const EmbeddedPairs& pairs, std::span<const std::size_t> rows)
{
    Tensor out({rows.size(), 2 * embedding_dim});
    auto src = table.data();
    auto dst = out.data();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::size_t k = rows[r];
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(pairs.a[k] * embedding_dim), embedding_dim,
                    dst.begin() + static_cast<std::ptrdiff_t>(2 * r * embedding_dim));
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(pairs.b[k] * embedding_dim), embedding_dim,
                    dst.begin() + static_cast<std::ptrdiff_t>((2 * r + 1) * embedding_dim));
    }
    return out;
}

/// Eval-mode match probabilities p_pos for every pair.
inline std::vector<double> score_pairs(const Tensor& table, const EmbeddedPairs& pairs,
                                       const ClassifierParams& clf, std::size_t chunk = 64)
{
    std::vector<double> scores(pairs.size());
    for (std::size_t begin = 0; begin < pairs.size(); begin += chunk) {
        const std::size_t end = std::min(pairs.size(), begin + chunk);
        std::vector<std::size_t> rows(end - begin);
        std::iota(rows.begin(), rows.end(), begin);
        const Tensor probs = classifier_forward(gather_pairs(table, pairs, rows), clf);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            scores[begin + r] = probs[2 * r + 1];
        }
    }
    return scores;
}

inline std::vector<ScoredLabel> scored_labels(std::span<const double> scores, std::span<const int> labels)
{
    std::vector<ScoredLabel> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = {scores[i], labels[i]};
    }
    return out;
}

inline void require_both_classes(std::span<const int> labels, const char* what)
{
    const auto pos = std::count(labels.begin(), labels.end(), 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size())) {
        throw ConfigError(std::string(what) + ": training pairs must contain both labels");
    }
}

/// Per-epoch validation entry: AUC when both classes are present.
inline void add_validation(nlohmann::ordered_json& j, std::span<const double> scores, std::span<const int> labels)
{
    if (labels.empty()) {
        return;
    }
    const auto pos = std::count(labels.begin(), labels.end(), 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size())) {
        j["val_auc"] = nullptr;
        return;
    }
    const auto items = scored_labels(scores, labels);
    j["val_auc"] = roc_auc(items);
}

/// Trains the pair classifier on frozen embeddings with cross-entropy and
/// Adam. `val` may be empty; otherwise its AUC is logged every epoch.
inline ClassifierParams train_classifier(const Tensor& table, const EmbeddedPairs& train, const EmbeddedPairs& val,
                                         const ClfTrainConfig& cfg, const EpochLogger& on_epoch = {})
{
    cfg.validate();
    if (train.size() == 0) {
        throw ConfigError("train_classifier: no training pairs");
    }
    require_both_classes(train.labels, "train_classifier");
    Rng init = Rng::derive(cfg.seed, {20});
    ClassifierParams clf = ClassifierParams::init(init);
    const std::vector<Tensor*> params = clf.parameters();
    nn::AdamState adam(static_cast<float>(cfg.lr));

    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle = Rng::derive(cfg.seed, {21, epoch});
        shuffle.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch);
            const std::span<const std::size_t> rows(order.data() + begin, end - begin);
            std::vector<int> labels(rows.size());
            for (std::size_t r = 0; r < rows.size(); ++r) {
                labels[r] = train.labels[rows[r]];
            }
            Rng drop = Rng::derive(cfg.seed, {22, epoch, batches});
            ClassifierTrace trace;
            const Tensor probs = classifier_forward(gather_pairs(table, train, rows), clf, Mode::train,
                                                    static_cast<float>(cfg.dropout), &drop, &trace);
            loss_sum += cross_entropy_grad(probs, trace.logits, labels);
            nn::zero_grads(params);
            classifier_backward(clf, trace);
            nn::adam_step(params, adam, static_cast<float>(cfg.l2_weight));
            ++batches;
        }
        if (on_epoch) {
            nlohmann::ordered_json j;
            j["epoch"] = epoch + 1;
            j["loss"] = loss_sum / static_cast<double>(batches);
            if (val.size() > 0) {
                add_validation(j, score_pairs(table, val, clf), val.labels);
            }
            on_epoch(j);
        }
    }
    return clf;
}

// ---------------------------------------------------------------------------
// supervised baseline: encoder + single dense layer trained jointly

/// Pairs of frames for the supervised baseline.
struct FramePairs {
    std::vector<const Frame*> a;
    std::vector<const Frame*> b;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

inline std::vector<double> score_supervised(const FramePairs& pairs, const SupervisedParams& params)
{
    std::vector<double> scores(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        scores[i] = supervised_forward(*pairs.a[i], *pairs.b[i], params)[1];
    }
    return scores;
}

/// Trains encoder and head from scratch on labeled pairs. Each step encodes
/// the 2B frames of a batch together (train-mode batch norm), concatenates
/// h rows per pair, and backpropagates cross-entropy through both branches.
inline SupervisedParams train_supervised(const FramePairs& train, const FramePairs& val, const ClfTrainConfig& cfg,
                                         const EpochLogger& on_epoch = {})
{
    cfg.validate();
    if (train.size() == 0) {
        throw ConfigError("train_supervised: no training pairs");
    }
    require_both_classes(train.labels, "train_supervised");
    Rng init = Rng::derive(cfg.seed, {30});
    SupervisedParams sup = SupervisedParams::init(init);
    const std::vector<Tensor*> params = sup.parameters();
    nn::AdamState adam(static_cast<float>(cfg.lr));

    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle = Rng::derive(cfg.seed, {31, epoch});
        shuffle.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch);
            const std::size_t bsz = end - begin;
            if (bsz < 2) {
                continue; // batch norm needs two samples
            }
            std::vector<const Frame*> frames(2 * bsz);
            std::vector<int> labels(bsz);
            for (std::size_t r = 0; r < bsz; ++r) {
                const std::size_t k = order[begin + r];
                frames[r] = train.a[k];
                frames[bsz + r] = train.b[k];
                labels[r] = train.labels[k];
            }
            EncoderTrace etrace;
            Tensor h = encode_batch(frames_to_batch(frames), sup.encoder, Mode::train, &etrace);
            const auto hd = h.data();
            Tensor input = concat_pairs(hd.subspan(0, bsz * embedding_dim),
                                        hd.subspan(bsz * embedding_dim, bsz * embedding_dim), bsz);
            Tensor logits = nn::dense(input, sup.weights, sup.bias);
            const Tensor probs = nn::softmax(logits);
            loss_sum += cross_entropy_grad(probs, logits, labels);
            nn::zero_grads(params);
            input.zero_grad();
            nn::dense_backward(input, sup.weights, sup.bias, logits, true);
            auto hg = h.grad();
            const auto ig = input.grad();
            for (std::size_t r = 0; r < bsz; ++r) {
                std::copy_n(ig.begin() + static_cast<std::ptrdiff_t>(2 * r * embedding_dim), embedding_dim,
                            hg.begin() + static_cast<std::ptrdiff_t>(r * embedding_dim));
                std::copy_n(ig.begin() + static_cast<std::ptrdiff_t>((2 * r + 1) * embedding_dim), embedding_dim,
                            hg.begin() + static_cast<std::ptrdiff_t>((bsz + r) * embedding_dim));
            }
            encode_backward(sup.encoder, etrace, h);
            nn::adam_step(params, adam, static_cast<float>(cfg.l2_weight));
            ++batches;
        }
        if (on_epoch) {
            nlohmann::ordered_json j;
            j["epoch"] = epoch + 1;
            j["loss"] = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
            if (val.size() > 0) {
                add_validation(j, score_supervised(val, sup), val.labels);
            }
            on_epoch(j);
        }
    }
    return sup;
}

// ---------------------------------------------------------------------------
// retrieval

/// Scores each candidate embedding row against the reference embedding with
/// the classifier and ranks by p_pos (descending, lower index on ties).
inline std::vector<RankedCandidate> retrieve(const Tensor& h_ref, const Tensor& h_candidates,
                                             const ClassifierParams& clf, std::size_t chunk = 64)
{
    if (h_ref.size() != embedding_dim) {
        throw ShapeError("retrieve: reference embedding must have 16384 values");
    }
    if (h_candidates.size() == 0) {
        throw InputError("retrieve: no candidate frames");
    }
    if (h_candidates.size() % embedding_dim != 0) {
        throw ShapeError("retrieve: candidate embeddings must be [M,16384]");
    }
    const std::size_t m = h_candidates.size() / embedding_dim;
    std::vector<double> scores(m);
    for (std::size_t begin = 0; begin < m; begin += chunk) {
        const std::size_t end = std::min(m, begin + chunk);
        const std::size_t rows = end - begin;
        Tensor input({rows, 2 * embedding_dim});
        auto dst = input.data();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(h_ref.data().begin(), h_ref.data().end(),
                      dst.begin() + static_cast<std::ptrdiff_t>(2 * r * embedding_dim));
            std::copy_n(h_candidates.data().begin() + static_cast<std::ptrdiff_t>((begin + r) * embedding_dim),
                        embedding_dim, dst.begin() + static_cast<std::ptrdiff_t>((2 * r + 1) * embedding_dim));
        }
        const Tensor probs = classifier_forward(std::move(input), clf);
        for (std::size_t r = 0; r < rows; ++r) {
            scores[begin + r] = probs[2 * r + 1];
        }
    }
    return rank_by_score(scores);
}

inline std::vector<RankedCandidate> retrieve(const Frame& ref, std::span<const Frame> candidates,
                                             const EncoderParams& encoder, const ClassifierParams& clf)
{
    if (candidates.empty()) {
        throw InputError("retrieve: no candidate frames");
    }
    std::vector<const Frame*> ptrs(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        ptrs[i] = &candidates[i];
    }
    return retrieve(encode(ref, encoder), embed_frames(ptrs, encoder), clf);
}

inline std::vector<RankedCandidate> retrieve_supervised(const Frame& ref, std::span<const Frame> candidates,
                                                        const SupervisedParams& sup)
{
    if (candidates.empty()) {
        throw InputError("retrieve: no candidate frames");
    }
    std::vector<double> scores(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        scores[i] = supervised_forward(ref, candidates[i], sup)[1];
    }
    return rank_by_score(scores);
}

} // namespace viewret
