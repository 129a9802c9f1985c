#pragma once

#include "doll/core.hpp"
#include "doll/datagen.hpp"
#include "doll/dollmask.hpp"
#include "doll/models.hpp"

#include <map>
#include <string>
#include <vector>

namespace doll {

struct ClassMetrics {
    real iou = 0.0, acc = 0.0, dice = 0.0;
};

struct MetricsReport {
    std::vector<std::string> class_names;
    std::vector<ClassMetrics> per_class;
    real miou = 0.0, macc = 0.0, mdice = 0.0;
    int n_images = 0;
    std::map<std::string, std::string> metadata;
};

// Both-empty masks score 1 (correct absence); recorded in report metadata.
real iou(const Mask& pred, const Mask& gt);
real dice(const Mask& pred, const Mask& gt);
real acc(const Mask& pred, const Mask& gt);

/// Dataset-level metrics: confusion counts accumulate over the split, one
/// plane per task class. task_classes maps output channel -> gt plane index.
MetricsReport evaluate_model(const SegModel& model,
                             const std::vector<const ImageSample*>& samples,
                             const std::vector<int>& task_classes, real threshold = 0.5);

std::string report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const std::string& text);

/// Aligned text table plus CSV for a set of runs sharing one class schema.
/// Refuses to compare runs whose corpus digests differ.
struct Comparison {
    std::string table;
    std::string csv;
};
Comparison compare_runs(const std::vector<std::pair<std::string, MetricsReport>>& runs);

/// Mean IoU of nonempty mask planes against gt (for samples where the
/// observation is present), paired with an area-matched control: the same
/// plane translated toroidally to a random offset.
struct MaskQuality {
    real mean_iou = 0.0;
    real mean_iou_random = 0.0;
    int n_planes = 0;
};
MaskQuality doll_quality(const std::vector<const ImageSample*>& samples,
                         const std::vector<const DollMask*>& masks, uint64_t seed);

Mask translate_toroidal(const Mask& m, int dy, int dx);

}  // namespace doll
