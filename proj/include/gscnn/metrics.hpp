// SPDX-License-Identifier: Apache-2.0
//
// Region and boundary quality measures: per-class IoU, boundary F-score under
// a pixel-distance slack, and the distance-based crop evaluation.

#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "gscnn/label_map.hpp"

namespace gscnn {

struct IouResult {
  std::vector<double> per_class;    // 0 when class absent (see valid)
  std::vector<bool> valid;          // class has non-empty union
  double miou = 0.0;                // mean over valid classes
};

struct FscoreResult {
  std::vector<double> per_class;
  std::vector<bool> valid;          // class present in pred or gt
  double mean_f = 0.0;
};

struct CropSpec {
  int base_margin = 100;  // removed from left, right and bottom
};

struct EvalReport {
  IouResult iou;
  std::map<double, FscoreResult> fscore;             // tolerance_px -> result
  std::vector<std::pair<int, double>> crop_curve;    // (factor, miou)
};

// Confusion-matrix IoU; pixels whose GT (or prediction) is ignore_label are
// excluded. Throws when every pixel is ignored.
IouResult iou_report(const LabelMap& pred, const LabelMap& gt, int num_classes,
                     int ignore_label);

// K×K confusion matrix accumulation (row = GT class, column = prediction);
// returns the number of counted pixels.
int64_t accumulate_confusion(const LabelMap& pred, const LabelMap& gt, int num_classes,
                             int ignore_label, std::vector<int64_t>& confusion);
IouResult iou_from_confusion(const std::vector<int64_t>& confusion, int num_classes);

// A pixel is boundary iff some pixel within Chebyshev distance `radius` has a
// different non-ignore label. Ignore pixels are never boundary and never
// trigger a boundary.
LabelMap gt_boundary_from_mask(const LabelMap& labels, int radius, int ignore_label);

// Exact squared Euclidean distance to the nearest nonzero pixel of `mask`
// (two-pass parabola method). Pixels get INT64_MAX when the mask is empty.
std::vector<int64_t> distance_transform_sq(const LabelMap& mask);

// Per-class boundary F-score at the given pixel tolerance. ignore_mask (may
// be empty) marks void pixels excluded from both boundary sets.
FscoreResult boundary_fscore(const LabelMap& pred, const LabelMap& gt, int num_classes,
                             double tolerance_px, const LabelMap& ignore_mask,
                             int ignore_label = kIgnoreLabel);

// mIoU on progressively tighter center crops: the base crop removes
// base_margin from left/right/bottom; factor c additionally removes c from
// top and bottom and 2c from left and right.
std::vector<std::pair<int, double>> distance_based_eval(const LabelMap& pred,
                                                        const LabelMap& gt,
                                                        int num_classes, int ignore_label,
                                                        const CropSpec& crop,
                                                        const std::vector<int>& factors);

// The benchmark convention expresses the slack as a fraction of an image
// measure; the basis (diagonal by default) converts it back to pixels.
double tolerance_from_fraction(double fraction, double basis_px);

inline const std::vector<double>& default_tolerances() {
  static const std::vector<double> t{3, 5, 9, 12};
  return t;
}

}  // namespace gscnn
