#include "doll/pipeline.hpp"

#include "doll/explain.hpp"
#include "doll/formats.hpp"
#include "doll/plot.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include <json.hpp>

namespace fs = std::filesystem;

namespace doll {

std::string default_run_root() {
    if (const char* env = std::getenv("DOLL_RUN_DIR"); env && *env) return env;
    return "runs";
}

std::string corpus_dir(const RunContext& ctx) { return ctx.run_dir + "/corpus"; }
std::string downstream_dir(const RunContext& ctx) { return ctx.run_dir + "/downstream"; }

std::string classifier_path(const RunContext& ctx, int index, const std::string& arch) {
    return ctx.run_dir + "/classifiers/" + std::to_string(index) + "-" + arch + ".ckpt";
}

std::string auc_table_path(const RunContext& ctx) { return ctx.run_dir + "/classifiers/auc.json"; }
std::string weights_path(const RunContext& ctx) { return ctx.run_dir + "/weights.json"; }

std::string doll_dir(const RunContext& ctx) {
    return ctx.run_dir + "/doll-" + aggregation_name(ctx.cfg.aggregation);
}

std::string pretrain_path(const RunContext& ctx) {
    return ctx.run_dir + "/pretrain-" + std::string(aggregation_name(ctx.cfg.aggregation)) +
           ".ckpt";
}

std::string finetune_tag(const RunConfig& cfg) {
    std::string tag = cfg.finetune_task + "-" + cfg.finetune_init + "-" +
                      (cfg.finetune.freeze_backbone ? "frozen" : "full");
    if (cfg.shots > 0) tag += "-s" + std::to_string(cfg.shots);
    return tag;
}

std::string finetune_dir(const RunContext& ctx, const std::string& tag) {
    return ctx.run_dir + "/finetune/" + tag;
}

namespace {

// An output is current when it records the digest of the resolved config
// that would produce it now.
bool json_digest_current(const std::string& path, const std::string& digest) {
    std::ifstream f(path);
    if (!f) return false;
    try {
        nlohmann::json j;
        f >> j;
        return j.value("run_config_digest", "") == digest;
    } catch (...) {
        return false;
    }
}

bool ckpt_digest_current(const std::string& path, const std::string& digest) {
    if (!fs::exists(path)) return false;
    try {
        return read_arrays(path).header.value("config_digest", "") == digest;
    } catch (...) {
        return false;
    }
}

void write_resolved_config(const RunContext& ctx) {
    fs::create_directories(ctx.run_dir);
    std::ofstream f(ctx.run_dir + "/resolved.cfg", std::ios::trunc);
    f << "# resolved config, digest " << ctx.cfg.digest() << "\n";
    f << canonical_kv(ctx.cfg.to_kv());
}

std::vector<std::vector<int>> split_labels(const std::vector<const ImageSample*>& samples) {
    std::vector<std::vector<int>> out;
    out.reserve(samples.size());
    for (const ImageSample* s : samples) out.push_back(s->labels);
    return out;
}

}  // namespace

bool cmd_gen_data(const RunContext& ctx) {
    const std::string digest = ctx.cfg.digest();
    const std::string marker = corpus_dir(ctx) + "/gen.json";
    if (!ctx.force && json_digest_current(marker, digest)) return false;

    write_resolved_config(ctx);
    Corpus corpus = generate_corpus(ctx.cfg.corpus);
    write_corpus(corpus, corpus_dir(ctx));
    Corpus down = generate_corpus(ctx.cfg.downstream);
    write_corpus(down, downstream_dir(ctx));

    nlohmann::json j = {{"kind", "gen-data"},
                        {"run_config_digest", digest},
                        {"corpus_digest", corpus_digest(corpus)},
                        {"downstream_digest", corpus_digest(down)}};
    std::ofstream f(marker, std::ios::trunc);
    f << j.dump(2) << "\n";
    return true;
}

bool cmd_train_classifiers(const RunContext& ctx) {
    const std::string digest = ctx.cfg.digest();
    if (!ctx.force && json_digest_current(auc_table_path(ctx), digest)) return false;
    if (!fs::exists(corpus_dir(ctx) + "/corpus.json"))
        throw MissingArtifact(corpus_dir(ctx) + "/corpus.json");

    const Corpus corpus = read_corpus(corpus_dir(ctx), /*with_gt=*/false);
    fs::create_directories(ctx.run_dir + "/classifiers");

    nlohmann::json table = nlohmann::json::array();
    for (size_t i = 0; i < ctx.cfg.archs.size(); ++i) {
        TrainConfig tc = ctx.cfg.classifier_train;
        tc.seed = Rng::derive(tc.seed, "model/" + std::to_string(i)).next_u64();
        TrainedClassifier trained =
            train_classifier(corpus, ctx.cfg.archs[i], tc, ctx.cfg.in_channels);
        save_classifier(classifier_path(ctx, static_cast<int>(i), ctx.cfg.archs[i]),
                        trained.model, digest);
        real mean = std::accumulate(trained.val_auc.begin(), trained.val_auc.end(), 0.0) /
                    static_cast<real>(trained.val_auc.size());
        table.push_back({{"model", ctx.cfg.archs[i]},
                         {"index", i},
                         {"val_auc", trained.val_auc},
                         {"mean_auc", mean}});
        std::cout << "trained " << ctx.cfg.archs[i] << " mean val AUC " << mean << "\n";
    }
    nlohmann::json j = {{"kind", "auc-table"}, {"run_config_digest", digest}, {"models", table}};
    std::ofstream f(auc_table_path(ctx), std::ios::trunc);
    f << j.dump(2) << "\n";
    return true;
}

void save_weights(const std::string& path, const BoostWeights& w,
                  const std::string& config_digest) {
    nlohmann::json values = nlohmann::json::array();
    for (size_t m = 0; m < w.model_order.size(); ++m) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < w.n_classes; ++c) row.push_back(w.at(static_cast<int>(m), c));
        values.push_back(row);
    }
    nlohmann::json j = {{"kind", "weights"},
                        {"run_config_digest", config_digest},
                        {"model_order", w.model_order},
                        {"K", w.boost_k},
                        {"values", values},
                        {"warnings", w.warnings}};
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw MissingArtifact("cannot write: " + path);
    f << j.dump(2) << "\n";
}

BoostWeights load_weights(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifact(path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    BoostWeights w;
    w.model_order = j.at("model_order").get<std::vector<std::string>>();
    w.boost_k = j.at("K").get<int>();
    const auto values = j.at("values");
    w.n_classes = values.empty() ? 0 : static_cast<int>(values[0].size());
    for (const auto& row : values)
        for (const auto& v : row) w.values.push_back(v.get<real>());
    w.warnings = j.value("warnings", std::vector<std::string>{});
    return w;
}

namespace {

std::vector<Classifier> load_ensemble(const RunContext& ctx) {
    std::vector<Classifier> models;
    for (size_t i = 0; i < ctx.cfg.archs.size(); ++i) {
        const std::string path = classifier_path(ctx, static_cast<int>(i), ctx.cfg.archs[i]);
        if (!fs::exists(path)) throw MissingArtifact(path);
        models.push_back(load_classifier(path));
    }
    return models;
}

}  // namespace

bool cmd_boost_weights(const RunContext& ctx) {
    const std::string digest = ctx.cfg.digest();
    if (!ctx.force && json_digest_current(weights_path(ctx), digest)) return false;

    const Corpus corpus = read_corpus(corpus_dir(ctx), /*with_gt=*/false);
    const auto ensemble = load_ensemble(ctx);
    const auto train = corpus.split_view(Split::train);

    std::vector<std::vector<std::vector<real>>> probs(ensemble.size());
    for (size_t m = 0; m < ensemble.size(); ++m) {
        probs[m].resize(train.size());
#pragma omp parallel for schedule(dynamic)
        for (long n = 0; n < static_cast<long>(train.size()); ++n)
            probs[m][n] = ensemble[m].predict(train[n]->image);
    }

    PipelineConfig pc = ctx.cfg.pipeline;
    pc.ensemble_size = static_cast<int>(ensemble.size());
    const BoostWeights w = compute_boost_weights(probs, split_labels(train), ctx.cfg.archs, pc);
    save_weights(weights_path(ctx), w, digest);
    return true;
}

bool cmd_gen_doll(const RunContext& ctx) {
    const std::string digest = ctx.cfg.digest();
    const std::string quality_path = doll_dir(ctx) + "/doll_quality.json";
    if (!ctx.force && json_digest_current(quality_path, digest)) return false;

    if (!fs::exists(weights_path(ctx))) throw MissingArtifact(weights_path(ctx));
    const BoostWeights w = load_weights(weights_path(ctx));
    const auto ensemble = load_ensemble(ctx);
    std::vector<const Classifier*> eptr;
    for (const auto& m : ensemble) eptr.push_back(&m);
    const Corpus corpus = read_corpus(corpus_dir(ctx), /*with_gt=*/true);

    PipelineConfig pc = ctx.cfg.pipeline;
    pc.ensemble_size = static_cast<int>(ensemble.size());

    // Pseudo labels for the splits pre-training consumes.
    std::vector<const ImageSample*> wanted;
    for (const auto& s : corpus.samples)
        if (s.split != Split::test) wanted.push_back(&s);

    for (const char* split : {"train", "val"})
        fs::create_directories(doll_dir(ctx) + "/" + split);

    std::vector<DollMask> masks(wanted.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(wanted.size()); ++i)
        masks[i] = generate_doll(wanted[i]->image, wanted[i]->id, eptr, w, pc,
                                 ctx.cfg.aggregation, digest);

    std::vector<const ImageSample*> sample_ptrs;
    std::vector<const DollMask*> mask_ptrs;
    for (size_t i = 0; i < wanted.size(); ++i) {
        write_doll(masks[i], doll_dir(ctx) + "/" + split_name(wanted[i]->split) + "/" +
                                 wanted[i]->id + ".doll");
        sample_ptrs.push_back(wanted[i]);
        mask_ptrs.push_back(&masks[i]);
    }

    const MaskQuality q = doll_quality(sample_ptrs, mask_ptrs, ctx.cfg.corpus.seed);
    nlohmann::json j = {{"kind", "doll-quality"},
                        {"run_config_digest", digest},
                        {"aggregation", aggregation_name(ctx.cfg.aggregation)},
                        {"mean_iou_vs_gt", q.mean_iou},
                        {"mean_iou_random_placement", q.mean_iou_random},
                        {"n_planes", q.n_planes}};
    std::ofstream f(quality_path, std::ios::trunc);
    f << j.dump(2) << "\n";
    return true;
}

bool cmd_pretrain(const RunContext& ctx) {
    const std::string digest = ctx.cfg.digest();
    if (!ctx.force && ckpt_digest_current(pretrain_path(ctx), digest)) return false;

    const Corpus corpus = read_corpus(corpus_dir(ctx), /*with_gt=*/false);
    std::vector<DollMask> masks;
    masks.reserve(corpus.samples.size());
    std::vector<const DollMask*> targets;
    for (const auto& s : corpus.samples) {
        if (s.split == Split::test) {
            masks.emplace_back();
        } else {
            const std::string path =
                doll_dir(ctx) + "/" + split_name(s.split) + "/" + s.id + ".doll";
            if (!fs::exists(path)) throw MissingArtifact(path);
            masks.push_back(read_doll(path));
        }
    }
    // Test-split samples carry empty placeholders; pretrain only reads
    // train/val. Give them the right plane count to pass validation.
    for (size_t i = 0; i < corpus.samples.size(); ++i) {
        if (corpus.samples[i].split == Split::test && masks[i].planes.empty())
            masks[i].planes.assign(ctx.cfg.corpus.n_observations,
                                   Mask(ctx.cfg.corpus.image_size, ctx.cfg.corpus.image_size));
        targets.push_back(&masks[i]);
    }

    SegModel model = build_segmodel(ctx.cfg.seg_arch, ctx.cfg.corpus.n_observations,
                                    ctx.cfg.in_channels, ctx.cfg.pretrain_train.seed);
    PretrainResult result = pretrain(std::move(model), corpus, targets, ctx.cfg.pretrain_train);
    save_segmodel(pretrain_path(ctx), result.checkpoint.model, digest,
                  result.checkpoint.best_iteration, result.checkpoint.metric_name,
                  result.checkpoint.val_metric);
    write_history_jsonl(ctx.run_dir + "/pretrain-" +
                            std::string(aggregation_name(ctx.cfg.aggregation)) +
                            "-history.jsonl",
                        result.history);
    std::cout << "pretrain best val bce " << result.checkpoint.val_metric << " at epoch "
              << result.checkpoint.best_iteration << "\n";
    return true;
}

std::vector<const ImageSample*> few_shot_subset(const std::vector<const ImageSample*>& train,
                                                int shots, uint64_t seed) {
    if (shots <= 0 || shots >= static_cast<int>(train.size())) return train;
    std::vector<const ImageSample*> shuffled = train;
    Rng rng = Rng::derive(seed, "few-shot");
    rng.shuffle(shuffled);
    shuffled.resize(static_cast<size_t>(shots));
    return shuffled;
}

bool cmd_finetune(const RunContext& ctx) {
    const std::string digest = ctx.cfg.digest();
    const std::string dir = finetune_dir(ctx, finetune_tag(ctx.cfg));
    if (!ctx.force && ckpt_digest_current(dir + "/checkpoint.ckpt", digest)) return false;

    const Corpus down = read_corpus(downstream_dir(ctx), /*with_gt=*/true);
    const auto task = ctx.cfg.task_classes();
    const int out_channels = static_cast<int>(task.size());

    SegModel model;
    if (ctx.cfg.finetune_init == "doll") {
        if (!fs::exists(pretrain_path(ctx))) throw MissingArtifact(pretrain_path(ctx));
        SegModel pretrained = load_segmodel(pretrain_path(ctx));
        model = replace_head(pretrained, out_channels, ctx.cfg.finetune.seed);
    } else if (ctx.cfg.finetune_init == "scratch") {
        model = build_segmodel(ctx.cfg.seg_arch, out_channels, ctx.cfg.in_channels,
                               ctx.cfg.finetune.seed);
    } else {  // classifier-backbone
        model = build_segmodel(ctx.cfg.seg_arch, out_channels, ctx.cfg.in_channels,
                               ctx.cfg.finetune.seed);
        bool found = false;
        for (size_t i = 0; i < ctx.cfg.archs.size(); ++i) {
            if (ctx.cfg.archs[i] == "cnn-b") {
                const std::string path =
                    classifier_path(ctx, static_cast<int>(i), ctx.cfg.archs[i]);
                if (!fs::exists(path)) throw MissingArtifact(path);
                Classifier clf = load_classifier(path);
                std::vector<NamedArray> backbone;
                for (const ParamBlock* p : clf.net.params())
                    if (p->name.rfind("backbone.", 0) == 0)
                        backbone.push_back({p->name, p->shape, p->w});
                model.net.import_arrays(backbone);
                found = true;
                break;
            }
        }
        if (!found)
            throw MissingArtifact("classifier-backbone init needs a cnn-b entry in models.archs");
    }

    auto train = few_shot_subset(down.split_view(Split::train), ctx.cfg.shots,
                                 ctx.cfg.finetune.seed);
    const auto val = down.split_view(Split::val);
    FinetuneResult result = finetune(std::move(model), train, val, task, ctx.cfg.finetune);

    fs::create_directories(dir);
    save_segmodel(dir + "/checkpoint.ckpt", result.checkpoint.model, digest,
                  result.checkpoint.best_iteration, result.checkpoint.metric_name,
                  result.checkpoint.val_metric);
    write_history_jsonl(dir + "/history.jsonl", result.history);

    MetricsReport rep = evaluate_model(result.checkpoint.model, down.split_view(Split::test),
                                       task, ctx.cfg.eval_threshold);
    rep.metadata["run_id"] = ctx.cfg.run_id;
    rep.metadata["tag"] = finetune_tag(ctx.cfg);
    rep.metadata["run_config_digest"] = digest;
    rep.metadata["corpus_digest"] = corpus_digest(down);
    rep.metadata["best_val_miou"] = format_real(result.checkpoint.val_metric);
    std::ofstream f(dir + "/metrics.json", std::ios::trunc);
    f << report_to_json(rep) << "\n";
    std::cout << "finetune " << finetune_tag(ctx.cfg) << " test mIoU " << rep.miou << "\n";
    return true;
}

MetricsReport cmd_eval(const RunContext& ctx, const std::string& checkpoint_path) {
    if (!fs::exists(checkpoint_path)) throw MissingArtifact(checkpoint_path);
    const SegModel model = load_segmodel(checkpoint_path);
    const Corpus down = read_corpus(downstream_dir(ctx), /*with_gt=*/true);
    auto task = ctx.cfg.task_classes();
    if (static_cast<int>(task.size()) != model.out_channels)
        throw ConfigError("eval: checkpoint has " + std::to_string(model.out_channels) +
                          " channels but task expects " + std::to_string(task.size()));
    MetricsReport rep =
        evaluate_model(model, down.split_view(Split::test), task, ctx.cfg.eval_threshold);
    rep.metadata["run_id"] = ctx.cfg.run_id;
    rep.metadata["run_config_digest"] = ctx.cfg.digest();
    rep.metadata["corpus_digest"] = corpus_digest(down);
    return rep;
}

void cmd_report(const RunContext& ctx, const std::string& run_root,
                const std::vector<std::string>& run_ids) {
    std::vector<std::pair<std::string, MetricsReport>> rows;
    std::vector<CurveSeries> curves;
    for (const std::string& id : run_ids) {
        const fs::path ft = fs::path(run_root) / id / "finetune";
        if (!fs::exists(ft)) throw MissingArtifact(ft.string());
        std::vector<fs::path> tags;
        for (const auto& e : fs::directory_iterator(ft))
            if (e.is_directory()) tags.push_back(e.path());
        std::sort(tags.begin(), tags.end());
        for (const auto& dir : tags) {
            std::ifstream f(dir / "metrics.json");
            if (!f) throw MissingArtifact((dir / "metrics.json").string());
            std::stringstream ss;
            ss << f.rdbuf();
            rows.emplace_back(id + "/" + dir.filename().string(), report_from_json(ss.str()));
            CurveSeries series;
            series.label = id + "/" + dir.filename().string();
            for (const auto& h : read_history_jsonl((dir / "history.jsonl").string()))
                if (h.metric == "miou")
                    series.points.emplace_back(static_cast<real>(h.iteration), h.value);
            curves.push_back(std::move(series));
        }
    }

    const Comparison cmp = compare_runs(rows);
    const std::string out = ctx.run_dir + "/reports";
    fs::create_directories(out);
    std::ofstream(out + "/comparison.txt", std::ios::trunc) << cmp.table;
    std::ofstream(out + "/comparison.csv", std::ios::trunc) << cmp.csv;
    write_curve_csv(out + "/convergence.csv", curves);
    write_curve_plot(out + "/convergence.ppm", curves);
    std::cout << cmp.table;
}

}  // namespace doll
