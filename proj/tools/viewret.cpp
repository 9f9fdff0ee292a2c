// viewret: generate phantom data, train, evaluate and retrieve views.

#include "viewret/checkpoint.hpp"
#include "viewret/config.hpp"
#include "viewret/dataset.hpp"
#include "viewret/ncc.hpp"
#include "viewret/parallel.hpp"
#include "viewret/pipeline.hpp"
#include "viewret/synthdata.hpp"
#include "viewret/training.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace viewret;

namespace {

/// Sibling file with a new suffix: out/model.vmck -> out/model.metrics.jsonl
fs::path sibling(const fs::path& p, const std::string& suffix)
{
    fs::path out = p;
    out.replace_extension();
    return out.string() + suffix;
}

void ensure_parent(const fs::path& p)
{
    if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
}

RunConfig read_config(const std::string& path)
{
    RunConfig cfg;
    if (!path.empty()) {
        cfg = load_run_config(path);
    }
    cfg.finalize();
    return cfg;
}

void echo_config(const fs::path& out, const RunConfig& cfg)
{
    write_json(sibling(out, ".config.json"), to_json(cfg));
}

struct SslFlags {
    std::optional<std::size_t> epochs, batch, steps;
    std::optional<double> lr, temperature;

    void apply(SslTrainConfig& c) const
    {
        if (epochs) c.epochs = *epochs;
        if (batch) c.batch = *batch;
        if (steps) c.steps_per_epoch = *steps;
        if (lr) c.lr = *lr;
        if (temperature) c.temperature = *temperature;
    }
};

struct ClfFlags {
    std::optional<std::size_t> epochs, batch;
    std::optional<double> lr;

    void apply(ClfTrainConfig& c) const
    {
        if (epochs) c.epochs = *epochs;
        if (batch) c.batch = *batch;
        if (lr) c.lr = *lr;
    }
};

void add_clf_flags(CLI::App* cmd, ClfFlags& f, const std::string& what, const ClfTrainConfig& defaults)
{
    cmd->add_option("--epochs", f.epochs, what + " epochs (default " + std::to_string(defaults.epochs) + ")");
    cmd->add_option("--batch", f.batch, what + " batch size (default " + std::to_string(defaults.batch) + ")");
    cmd->add_option("--lr", f.lr, what + " Adam learning rate (default 1e-4)");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Self-supervised ultrasound view retrieval: phantom data, contrastive pretraining, "
                 "pair classification, baselines and evaluation."};
    app.require_subcommand(1);
    std::size_t threads = 1;
    app.add_option("--threads", threads, "worker threads; results do not depend on this")
        ->default_val(1)
        ->check(CLI::PositiveNumber);
    std::string config_path;
    app.add_option("--config", config_path,
                   "run config JSON (sections seed, phantom, ssl, classifier, supervised, pairs; unknown keys "
                   "rejected). Without it the defaults apply: SSL lr 1e-5, batch 128, 500 epochs, "
                   "tau 0.5; classifier lr 1e-4, batch 42, 60 epochs; dropout 0.2; L2 1e-5");

    // generate
    auto* gen = app.add_subcommand("generate", "write a synthetic phantom dataset");
    std::string gen_out;
    std::optional<std::size_t> gen_patients;
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--patients", gen_patients, "override phantom.patients (default 40)");

    // train-ssl
    auto* ssl = app.add_subcommand("train-ssl", "contrastive pretraining of encoder and projection head");
    std::string data_dir, out_path;
    SslFlags ssl_flags;
    ssl->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ssl->add_option("--out", out_path, "output checkpoint (.vmck)")->required();
    ssl->add_option("--epochs", ssl_flags.epochs, "SSL epochs (default 500)");
    ssl->add_option("--batch", ssl_flags.batch, "frames per minibatch N, 2N views (default 128)");
    ssl->add_option("--steps-per-epoch", ssl_flags.steps, "minibatches per epoch (default 0 = one pass)");
    ssl->add_option("--lr", ssl_flags.lr, "Adam learning rate (default 1e-5)");
    ssl->add_option("--temperature", ssl_flags.temperature, "NT-Xent temperature tau (default 0.5)");

    // train-clf
    auto* clf = app.add_subcommand("train-clf", "train the pair classifier on a frozen encoder");
    std::string encoder_path;
    ClfFlags clf_flags;
    clf->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
    clf->add_option("--encoder", encoder_path, "checkpoint from train-ssl")->required()->check(CLI::ExistingFile);
    clf->add_option("--out", out_path, "output checkpoint (.vmck)")->required();
    add_clf_flags(clf, clf_flags, "classifier", RunConfig{}.classifier);

    // train-supervised
    auto* sup = app.add_subcommand("train-supervised", "train the supervised baseline from scratch");
    ClfFlags sup_flags;
    sup->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
    sup->add_option("--out", out_path, "output checkpoint (.vmck)")->required();
    add_clf_flags(sup, sup_flags, "supervised baseline", RunConfig{}.supervised);

    // eval
    auto* eval = app.add_subcommand("eval", "pair metrics on the test slice and retrieval area error");
    std::string classifier_path, report_path, baseline;
    eval->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--encoder", encoder_path, "checkpoint from train-ssl (proposed model)")
        ->check(CLI::ExistingFile);
    eval->add_option("--classifier", classifier_path,
                     "checkpoint from train-clf, or from train-supervised with --baseline supervised")
        ->check(CLI::ExistingFile);
    eval->add_option("--report", report_path, "output report JSON")->required();
    eval->add_option("--baseline", baseline, "evaluate a baseline instead of the proposed model")
        ->check(CLI::IsMember({"ncc", "supervised"}));

    // retrieve
    auto* ret = app.add_subcommand("retrieve", "rank candidate frames against a reference frame");
    std::string ref_path, candidates_dir;
    ret->add_option("--encoder", encoder_path, "checkpoint from train-ssl")->required()->check(CLI::ExistingFile);
    ret->add_option("--classifier", classifier_path, "checkpoint from train-clf")
        ->required()
        ->check(CLI::ExistingFile);
    ret->add_option("--ref", ref_path, "reference frame (PGM)")->required()->check(CLI::ExistingFile);
    ret->add_option("--candidates", candidates_dir, "exam directory or directory of PGM frames")->required();
    ret->add_option("--out", out_path, "output ranking JSON")->required();

    // ncc
    auto* nccc = app.add_subcommand("ncc", "rank candidate frames by normalized cross-correlation");
    nccc->add_option("--ref", ref_path, "reference frame (PGM)")->required()->check(CLI::ExistingFile);
    nccc->add_option("--candidates", candidates_dir, "exam directory or directory of PGM frames")->required();
    nccc->add_option("--out", out_path, "output ranking JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        set_thread_count(threads);
        RunConfig cfg = read_config(config_path);

        if (*gen) {
            if (gen_patients) {
                cfg.phantom.patients = *gen_patients;
                cfg.finalize();
            }
            const Dataset ds = generate_dataset(cfg.phantom);
            write_dataset(gen_out, ds, cfg.phantom);
            write_json(fs::path(gen_out) / "config.json", to_json(cfg));
            std::cout << "wrote " << ds.exams.size() << " exams to " << gen_out << "\n";
        } else if (*ssl) {
            ssl_flags.apply(cfg.ssl);
            cfg.finalize();
            const Dataset ds = load_dataset(data_dir, false);
            const SslStage stage = run_train_ssl(ds, cfg);
            ensure_parent(out_path);
            save_checkpoint(stage.checkpoint, out_path);
            write_file(sibling(out_path, ".metrics.jsonl"), stage.metrics);
            echo_config(out_path, cfg);
            std::cout << "final loss " << stage.epoch_loss.back() << "; wrote " << out_path << "\n";
        } else if (*clf) {
            clf_flags.apply(cfg.classifier);
            cfg.finalize();
            const Dataset ds = load_dataset(data_dir, false);
            EncoderParams encoder;
            import_params(load_checkpoint(encoder_path), encoder);
            const ClassifierStage stage = run_train_classifier(ds, encoder, cfg);
            ensure_parent(out_path);
            save_checkpoint(stage.checkpoint, out_path);
            write_file(sibling(out_path, ".metrics.jsonl"), stage.metrics);
            write_file(sibling(out_path, ".pairs.train.jsonl"), stage.train_pairs);
            write_file(sibling(out_path, ".pairs.val.jsonl"), stage.val_pairs);
            write_file(sibling(out_path, ".pairs.test.jsonl"), stage.test_pairs);
            echo_config(out_path, cfg);
            std::cout << "wrote " << out_path << "\n";
        } else if (*sup) {
            sup_flags.apply(cfg.supervised);
            cfg.finalize();
            const Dataset ds = load_dataset(data_dir, false);
            const SupervisedStage stage = run_train_supervised(ds, cfg);
            ensure_parent(out_path);
            save_checkpoint(stage.checkpoint, out_path);
            write_file(sibling(out_path, ".metrics.jsonl"), stage.metrics);
            echo_config(out_path, cfg);
            std::cout << "wrote " << out_path << "\n";
        } else if (*eval) {
            const Dataset ds = load_dataset(data_dir, true);
            std::optional<EvalResult> result;
            if (baseline == "ncc") {
                result = evaluate(ds, cfg, ncc_method(ds));
            } else if (baseline == "supervised") {
                if (classifier_path.empty()) {
                    throw CLI::RequiredError("--classifier (supervised checkpoint)");
                }
                SupervisedParams params;
                import_params(load_checkpoint(classifier_path), params);
                result = evaluate(ds, cfg, supervised_method(ds, params));
            } else {
                if (encoder_path.empty() || classifier_path.empty()) {
                    throw CLI::RequiredError("--encoder and --classifier");
                }
                EncoderParams encoder;
                import_params(load_checkpoint(encoder_path), encoder);
                ClassifierParams classifier;
                import_params(load_checkpoint(classifier_path), classifier);
                const ExamEmbeddings emb = embed_patients(ds, patient_split(ds, cfg).classifier, encoder);
                result = evaluate(ds, cfg, proposed_method(emb, classifier));
            }
            ensure_parent(report_path);
            write_json(report_path, result->report);
            write_file(sibling(report_path, ".scores.jsonl"), result->scores);
            write_file(sibling(report_path, ".rankings.jsonl"), result->rankings);
            echo_config(report_path, cfg);
            std::cout << result->report.dump(2) << "\n";
        } else if (*ret || *nccc) {
            const Frame ref = read_pgm(ref_path);
            const std::vector<Frame> candidates = load_candidates(candidates_dir);
            std::vector<RankedCandidate> ranking;
            if (*ret) {
                EncoderParams encoder;
                import_params(load_checkpoint(encoder_path), encoder);
                ClassifierParams classifier;
                import_params(load_checkpoint(classifier_path), classifier);
                ranking = retrieve(ref, candidates, encoder, classifier);
            } else {
                ranking = ncc_retrieve(ref, candidates);
            }
            ensure_parent(out_path);
            write_json(out_path, ranking_json(ref_path, ranking));
            std::cout << "top candidate " << ranking.front().index << " (score " << ranking.front().score << ")\n";
        }
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: missing option " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
