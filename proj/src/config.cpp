#include "doll/config.hpp"

#include "doll/formats.hpp"

#include <fstream>
#include <sstream>

namespace doll {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    }
}

real to_real(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        real x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected on/off, got '" + v + "'");
}

std::vector<std::string> split_csv(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

const char* bool_str(bool b) { return b ? "on" : "off"; }

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifact("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

RunConfig config_from_kv(const std::map<std::string, std::string>& kv) {
    RunConfig cfg;
    // Downstream corpus defaults: a fresh seed, smaller splits.
    cfg.downstream.n_train = 200;
    cfg.downstream.n_val = 60;
    cfg.downstream.n_test = 200;
    cfg.downstream.seed = 2;

    bool downstream_palette_set = false;
    for (const auto& [key, raw] : kv) {
        const std::string& v = raw;
        if (key == "run.id") cfg.run_id = v;
        else if (key == "run.jobs") cfg.jobs = to_int(key, v);
        else if (key == "corpus.image_size") cfg.corpus.image_size = to_int(key, v);
        else if (key == "corpus.n_observations") cfg.corpus.n_observations = to_int(key, v);
        else if (key == "corpus.n_train") cfg.corpus.n_train = to_int(key, v);
        else if (key == "corpus.n_val") cfg.corpus.n_val = to_int(key, v);
        else if (key == "corpus.n_test") cfg.corpus.n_test = to_int(key, v);
        else if (key == "corpus.noise_level") cfg.corpus.noise_level = to_real(key, v);
        else if (key == "corpus.seed") cfg.corpus.seed = to_u64(key, v);
        else if (key == "corpus.shape_palette") {
            cfg.corpus.shape_palette.clear();
            for (const auto& s : split_csv(v)) cfg.corpus.shape_palette.push_back(shape_from_name(s));
        } else if (key == "downstream.n_train") cfg.downstream.n_train = to_int(key, v);
        else if (key == "downstream.n_val") cfg.downstream.n_val = to_int(key, v);
        else if (key == "downstream.n_test") cfg.downstream.n_test = to_int(key, v);
        else if (key == "downstream.noise_level") cfg.downstream.noise_level = to_real(key, v);
        else if (key == "downstream.seed") cfg.downstream.seed = to_u64(key, v);
        else if (key == "downstream.shape_palette") {
            cfg.downstream.shape_palette.clear();
            for (const auto& s : split_csv(v))
                cfg.downstream.shape_palette.push_back(shape_from_name(s));
            downstream_palette_set = true;
        } else if (key == "models.archs") cfg.archs = split_csv(v);
        else if (key == "models.in_channels") cfg.in_channels = to_int(key, v);
        else if (key == "train.epochs") cfg.classifier_train.epochs = to_int(key, v);
        else if (key == "train.lr") cfg.classifier_train.learning_rate = to_real(key, v);
        else if (key == "train.batch") cfg.classifier_train.batch_size = to_int(key, v);
        else if (key == "train.seed") cfg.classifier_train.seed = to_u64(key, v);
        else if (key == "train.flip") cfg.classifier_train.augment_flip = to_bool(key, v);
        else if (key == "train.crop") cfg.classifier_train.augment_crop = to_bool(key, v);
        else if (key == "train.rotate") cfg.classifier_train.augment_rotate = to_bool(key, v);
        else if (key == "pipeline.tau") cfg.pipeline.tau = to_real(key, v);
        else if (key == "pipeline.percentile") cfg.pipeline.percentile = to_real(key, v);
        else if (key == "pipeline.T") cfg.pipeline.ig_steps = to_int(key, v);
        else if (key == "pipeline.K") cfg.pipeline.boost_k = to_int(key, v);
        else if (key == "pipeline.prediction_threshold")
            cfg.pipeline.prediction_threshold = to_real(key, v);
        else if (key == "pipeline.aggregation") cfg.aggregation = aggregation_from_name(v);
        else if (key == "pretrain.epochs") cfg.pretrain_train.epochs = to_int(key, v);
        else if (key == "pretrain.lr") cfg.pretrain_train.learning_rate = to_real(key, v);
        else if (key == "pretrain.batch") cfg.pretrain_train.batch_size = to_int(key, v);
        else if (key == "pretrain.seed") cfg.pretrain_train.seed = to_u64(key, v);
        else if (key == "pretrain.arch") cfg.seg_arch = v;
        else if (key == "finetune.task") cfg.finetune_task = v;
        else if (key == "finetune.init") cfg.finetune_init = v;
        else if (key == "finetune.freeze_backbone") cfg.finetune.freeze_backbone = to_bool(key, v);
        else if (key == "finetune.iterations") cfg.finetune.iterations = to_int(key, v);
        else if (key == "finetune.lr") cfg.finetune.learning_rate = to_real(key, v);
        else if (key == "finetune.batch") cfg.finetune.batch_size = to_int(key, v);
        else if (key == "finetune.seed") cfg.finetune.seed = to_u64(key, v);
        else if (key == "finetune.eval_every") cfg.finetune.eval_every = to_int(key, v);
        else if (key == "finetune.shots") cfg.shots = to_int(key, v);
        else if (key == "eval.threshold") cfg.eval_threshold = to_real(key, v);
        else throw ConfigError("unknown config key: " + key);
    }

    // The downstream corpus shares the schema of the pre-training corpus.
    cfg.downstream.image_size = cfg.corpus.image_size;
    cfg.downstream.n_observations = cfg.corpus.n_observations;
    if (!downstream_palette_set) cfg.downstream.shape_palette = cfg.corpus.shape_palette;
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    corpus.validate();
    downstream.validate();
    classifier_train.validate();
    pipeline.validate();
    pretrain_train.validate();
    finetune.validate();
    if (archs.empty()) throw ConfigError("models.archs: at least one classifier required");
    if (in_channels != 1 && in_channels != 3)
        throw ConfigError("models.in_channels: must be 1 or 3");
    if (finetune_task != "region0" && finetune_task != "organs")
        throw ConfigError("finetune.task: must be region0 or organs");
    if (finetune_init != "doll" && finetune_init != "scratch" &&
        finetune_init != "classifier-backbone")
        throw ConfigError("finetune.init: must be doll, scratch or classifier-backbone");
    if (shots < 0) throw ConfigError("finetune.shots: must be >= 0");
    if (corpus.image_size % 4 != 0)
        throw ConfigError("corpus.image_size: must be a multiple of 4 for the segmodel");
}

std::vector<int> RunConfig::task_classes() const {
    if (finetune_task == "region0") return {0};
    std::vector<int> all(corpus.n_observations);
    for (int c = 0; c < corpus.n_observations; ++c) all[c] = c;
    return all;
}

std::map<std::string, std::string> RunConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    kv["run.id"] = run_id;
    kv["run.jobs"] = std::to_string(jobs);
    auto put_corpus = [&kv](const std::string& prefix, const CorpusConfig& c) {
        kv[prefix + ".image_size"] = std::to_string(c.image_size);
        kv[prefix + ".n_observations"] = std::to_string(c.n_observations);
        kv[prefix + ".n_train"] = std::to_string(c.n_train);
        kv[prefix + ".n_val"] = std::to_string(c.n_val);
        kv[prefix + ".n_test"] = std::to_string(c.n_test);
        kv[prefix + ".noise_level"] = format_real(c.noise_level);
        kv[prefix + ".seed"] = std::to_string(c.seed);
        std::string pal;
        for (auto f : c.resolved_palette()) {
            if (!pal.empty()) pal += ",";
            pal += shape_name(f);
        }
        kv[prefix + ".shape_palette"] = pal;
    };
    put_corpus("corpus", corpus);
    put_corpus("downstream", downstream);
    std::string a;
    for (const auto& s : archs) {
        if (!a.empty()) a += ",";
        a += s;
    }
    kv["models.archs"] = a;
    kv["models.in_channels"] = std::to_string(in_channels);
    kv["train.epochs"] = std::to_string(classifier_train.epochs);
    kv["train.lr"] = format_real(classifier_train.learning_rate);
    kv["train.batch"] = std::to_string(classifier_train.batch_size);
    kv["train.seed"] = std::to_string(classifier_train.seed);
    kv["train.flip"] = bool_str(classifier_train.augment_flip);
    kv["train.crop"] = bool_str(classifier_train.augment_crop);
    kv["train.rotate"] = bool_str(classifier_train.augment_rotate);
    kv["pipeline.tau"] = format_real(pipeline.tau);
    kv["pipeline.percentile"] = format_real(pipeline.percentile);
    kv["pipeline.T"] = std::to_string(pipeline.ig_steps);
    kv["pipeline.K"] = std::to_string(pipeline.boost_k);
    kv["pipeline.prediction_threshold"] = format_real(pipeline.prediction_threshold);
    kv["pipeline.aggregation"] = aggregation_name(aggregation);
    kv["pretrain.arch"] = seg_arch;
    kv["pretrain.epochs"] = std::to_string(pretrain_train.epochs);
    kv["pretrain.lr"] = format_real(pretrain_train.learning_rate);
    kv["pretrain.batch"] = std::to_string(pretrain_train.batch_size);
    kv["pretrain.seed"] = std::to_string(pretrain_train.seed);
    kv["finetune.task"] = finetune_task;
    kv["finetune.init"] = finetune_init;
    kv["finetune.freeze_backbone"] = bool_str(finetune.freeze_backbone);
    kv["finetune.iterations"] = std::to_string(finetune.iterations);
    kv["finetune.lr"] = format_real(finetune.learning_rate);
    kv["finetune.batch"] = std::to_string(finetune.batch_size);
    kv["finetune.seed"] = std::to_string(finetune.seed);
    kv["finetune.eval_every"] = std::to_string(finetune.eval_every);
    kv["finetune.shots"] = std::to_string(shots);
    kv["eval.threshold"] = format_real(eval_threshold);
    return kv;
}

std::string RunConfig::digest() const { return digest_kv(to_kv()); }

}  // namespace doll
