#include "doll/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace doll {

namespace {
struct Counts {
    long long inter = 0, uni = 0, pred = 0, gt = 0, correct = 0, total = 0;

    void add(const Mask& p, const Mask& g) {
        if (p.h != g.h || p.w != g.w) throw ConfigError("metric: mask shape mismatch");
        for (size_t i = 0; i < p.v.size(); ++i) {
            const int a = p.v[i] ? 1 : 0, b = g.v[i] ? 1 : 0;
            inter += a & b;
            uni += a | b;
            pred += a;
            gt += b;
            correct += a == b;
            ++total;
        }
    }
    real iou() const { return uni == 0 ? 1.0 : static_cast<real>(inter) / uni; }
    real dice() const {
        return (pred + gt) == 0 ? 1.0 : 2.0 * static_cast<real>(inter) / (pred + gt);
    }
    real acc() const { return total == 0 ? 1.0 : static_cast<real>(correct) / total; }
};
}  // namespace

real iou(const Mask& pred, const Mask& gt) {
    Counts c;
    c.add(pred, gt);
    return c.iou();
}

real dice(const Mask& pred, const Mask& gt) {
    Counts c;
    c.add(pred, gt);
    return c.dice();
}

real acc(const Mask& pred, const Mask& gt) {
    Counts c;
    c.add(pred, gt);
    return c.acc();
}

MetricsReport evaluate_model(const SegModel& model,
                             const std::vector<const ImageSample*>& samples,
                             const std::vector<int>& task_classes, real threshold) {
    if (samples.empty()) throw ConfigError("evaluate_model: empty split");
    if (static_cast<int>(task_classes.size()) != model.out_channels)
        throw ConfigError("evaluate_model: task class count does not match model channels");

    std::vector<Counts> counts(task_classes.size());
    for (const ImageSample* s : samples) {
        if (!s->has_gt()) throw ConfigError("evaluate_model: sample " + s->id + " has no gt masks");
        const Tensor probs = model.forward_probs(s->image);
        for (size_t k = 0; k < task_classes.size(); ++k) {
            Mask pred(probs.h, probs.w);
            const real* p = probs.chan(static_cast<int>(k));
            for (size_t i = 0; i < pred.v.size(); ++i) pred.v[i] = p[i] > threshold ? 1 : 0;
            counts[k].add(pred, s->gt_masks[task_classes[k]]);
        }
    }

    MetricsReport r;
    r.n_images = static_cast<int>(samples.size());
    for (size_t k = 0; k < task_classes.size(); ++k) {
        r.class_names.push_back("obs" + std::to_string(task_classes[k]));
        r.per_class.push_back({counts[k].iou(), counts[k].acc(), counts[k].dice()});
        r.miou += counts[k].iou();
        r.macc += counts[k].acc();
        r.mdice += counts[k].dice();
    }
    const real inv = 1.0 / static_cast<real>(task_classes.size());
    r.miou *= inv;
    r.macc *= inv;
    r.mdice *= inv;
    r.metadata["empty_convention"] = "both-empty scores 1";
    r.metadata["threshold"] = format_real(threshold);
    return r;
}

std::string report_to_json(const MetricsReport& r) {
    nlohmann::json per = nlohmann::json::object();
    for (size_t k = 0; k < r.class_names.size(); ++k)
        per[r.class_names[k]] = {{"iou", r.per_class[k].iou},
                                 {"acc", r.per_class[k].acc},
                                 {"dice", r.per_class[k].dice}};
    nlohmann::json j = {{"kind", "report"},
                        {"per_class", per},
                        {"class_order", r.class_names},
                        {"aggregates", {{"miou", r.miou}, {"macc", r.macc}, {"mdice", r.mdice}}},
                        {"n_images", r.n_images},
                        {"metadata", r.metadata}};
    return j.dump(2);
}

MetricsReport report_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("invalid report json: ") + e.what());
    }
    MetricsReport r;
    r.class_names = j.at("class_order").get<std::vector<std::string>>();
    for (const auto& name : r.class_names) {
        const auto& m = j.at("per_class").at(name);
        r.per_class.push_back({m.at("iou").get<real>(), m.at("acc").get<real>(),
                               m.at("dice").get<real>()});
    }
    r.miou = j.at("aggregates").at("miou").get<real>();
    r.macc = j.at("aggregates").at("macc").get<real>();
    r.mdice = j.at("aggregates").at("mdice").get<real>();
    r.n_images = j.at("n_images").get<int>();
    r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    return r;
}

Comparison compare_runs(const std::vector<std::pair<std::string, MetricsReport>>& runs) {
    if (runs.empty()) throw ConfigError("compare_runs: no runs");
    auto sorted = runs;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    const auto& schema = sorted[0].second.class_names;
    std::string corpus_digest;
    if (auto it = sorted[0].second.metadata.find("corpus_digest");
        it != sorted[0].second.metadata.end())
        corpus_digest = it->second;
    for (const auto& [id, rep] : sorted) {
        if (rep.class_names != schema)
            throw ConfigError("compare_runs: class schema mismatch in run " + id);
        std::string d;
        if (auto it = rep.metadata.find("corpus_digest"); it != rep.metadata.end()) d = it->second;
        if (d != corpus_digest)
            throw ConfigError("compare_runs: corpus digest mismatch in run " + id);
    }

    std::ostringstream table, csv;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-28s %8s %8s %8s", "run", "mIoU", "mAcc", "mDice");
    table << buf;
    csv << "run,miou,macc,mdice";
    for (const auto& name : schema) {
        std::snprintf(buf, sizeof(buf), " %10s", (name + ".iou").c_str());
        table << buf;
        csv << "," << name << ".iou";
    }
    table << "\n";
    csv << "\n";
    for (const auto& [id, rep] : sorted) {
        std::snprintf(buf, sizeof(buf), "%-28s %8.4f %8.4f %8.4f", id.c_str(), rep.miou, rep.macc,
                      rep.mdice);
        table << buf;
        csv << id << "," << format_real(rep.miou) << "," << format_real(rep.macc) << ","
            << format_real(rep.mdice);
        for (const auto& m : rep.per_class) {
            std::snprintf(buf, sizeof(buf), " %10.4f", m.iou);
            table << buf;
            csv << "," << format_real(m.iou);
        }
        table << "\n";
        csv << "\n";
    }
    return {table.str(), csv.str()};
}

Mask translate_toroidal(const Mask& m, int dy, int dx) {
    Mask out(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            out.at(((y + dy) % m.h + m.h) % m.h, ((x + dx) % m.w + m.w) % m.w) = m.at(y, x);
    return out;
}

MaskQuality doll_quality(const std::vector<const ImageSample*>& samples,
                         const std::vector<const DollMask*>& masks, uint64_t seed) {
    if (samples.size() != masks.size()) throw ConfigError("doll_quality: size mismatch");
    Rng rng = Rng::derive(seed, "doll-quality");
    MaskQuality q;
    real sum = 0.0, sum_rand = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const ImageSample& s = *samples[i];
        if (!s.has_gt()) throw ConfigError("doll_quality: sample " + s.id + " has no gt masks");
        for (size_t c = 0; c < masks[i]->planes.size(); ++c) {
            if (!s.labels[c]) continue;  // quality is measured where the observation is present
            const Mask& plane = masks[i]->planes[c];
            if (plane.empty_mask()) continue;
            const Mask& gt = s.gt_masks[c];
            sum += iou(plane, gt);
            const int dy = static_cast<int>(rng.below(static_cast<uint64_t>(plane.h)));
            const int dx = static_cast<int>(rng.below(static_cast<uint64_t>(plane.w)));
            sum_rand += iou(translate_toroidal(plane, dy, dx), gt);
            ++q.n_planes;
        }
    }
    if (q.n_planes > 0) {
        q.mean_iou = sum / q.n_planes;
        q.mean_iou_random = sum_rand / q.n_planes;
    }
    return q;
}

}  // namespace doll
