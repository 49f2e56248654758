// SPDX-License-Identifier: Apache-2.0
#include "gscnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gscnn {

int64_t accumulate_confusion(const LabelMap& pred, const LabelMap& gt, int num_classes,
                             int ignore_label, std::vector<int64_t>& confusion) {
  check_same_extent("accumulate_confusion", pred, gt);
  confusion.resize(size_t(num_classes) * num_classes, 0);
  int64_t counted = 0;
  for (size_t i = 0; i < gt.v.size(); ++i) {
    int g = gt.v[i], p = pred.v[i];
    if (g == ignore_label || p == ignore_label) continue;
    if (g < 0 || g >= num_classes || p < 0 || p >= num_classes)
      throw std::invalid_argument("confusion: label outside [0," +
                                  std::to_string(num_classes) + ")");
    ++counted;
    ++confusion[size_t(g) * num_classes + p];
  }
  return counted;
}

IouResult iou_from_confusion(const std::vector<int64_t>& confusion, int num_classes) {
  IouResult r;
  r.per_class.assign(num_classes, 0.0);
  r.valid.assign(num_classes, false);
  double acc = 0.0;
  int n_valid = 0;
  for (int k = 0; k < num_classes; ++k) {
    int64_t tp = confusion[size_t(k) * num_classes + k];
    int64_t row = 0, col = 0;
    for (int j = 0; j < num_classes; ++j) {
      row += confusion[size_t(k) * num_classes + j];
      col += confusion[size_t(j) * num_classes + k];
    }
    int64_t uni = row + col - tp;
    if (uni == 0) continue;
    r.valid[k] = true;
    r.per_class[k] = double(tp) / double(uni);
    acc += r.per_class[k];
    ++n_valid;
  }
  r.miou = n_valid ? acc / n_valid : 0.0;
  return r;
}

IouResult iou_report(const LabelMap& pred, const LabelMap& gt, int num_classes,
                     int ignore_label) {
  std::vector<int64_t> confusion;
  int64_t counted = accumulate_confusion(pred, gt, num_classes, ignore_label, confusion);
  if (counted == 0) throw std::invalid_argument("iou_report: every pixel is ignored");
  return iou_from_confusion(confusion, num_classes);
}

LabelMap gt_boundary_from_mask(const LabelMap& labels, int radius, int ignore_label) {
  if (radius < 1) throw std::invalid_argument("gt_boundary_from_mask: radius must be >= 1");
  LabelMap out(labels.h, labels.w, 0);
  for (int y = 0; y < labels.h; ++y) {
    for (int x = 0; x < labels.w; ++x) {
      int l = labels.at(y, x);
      if (l == ignore_label) continue;
      bool boundary = false;
      for (int dy = -radius; dy <= radius && !boundary; ++dy) {
        int yy = y + dy;
        if (yy < 0 || yy >= labels.h) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          int xx = x + dx;
          if (xx < 0 || xx >= labels.w) continue;
          int o = labels.at(yy, xx);
          if (o != ignore_label && o != l) {
            boundary = true;
            break;
          }
        }
      }
      if (boundary) out.at(y, x) = 1;
    }
  }
  return out;
}

namespace {

// Acts as infinity: larger than any reachable squared distance yet small
// enough that the parabola arithmetic below stays exact in double.
constexpr int64_t kInf = int64_t(1) << 40;

// 1-D squared distance transform (lower envelope of parabolas).
void dt1d(const std::vector<int64_t>& f, std::vector<int64_t>& d, int n,
          std::vector<int>& v, std::vector<double>& z) {
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      s = (double(f[q]) + double(q) * q - double(f[v[k]]) - double(v[k]) * v[k]) /
          (2.0 * q - 2.0 * v[k]);
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = int64_t(q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

}  // namespace

std::vector<int64_t> distance_transform_sq(const LabelMap& mask) {
  int h = mask.h, w = mask.w;
  std::vector<int64_t> d(size_t(h) * w);
  for (size_t i = 0; i < d.size(); ++i) d[i] = mask.v[i] ? 0 : kInf;

  int n = std::max(h, w);
  std::vector<int64_t> f(n), out(n);
  std::vector<int> v(n);
  std::vector<double> z(n + 1);

  // columns
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = d[size_t(y) * w + x];
    dt1d(f, out, h, v, z);
    for (int y = 0; y < h; ++y) d[size_t(y) * w + x] = out[y];
  }
  // rows
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = d[size_t(y) * w + x];
    dt1d(f, out, w, v, z);
    for (int x = 0; x < w; ++x) d[size_t(y) * w + x] = out[x];
  }
  int64_t reachable = int64_t(h) * h + int64_t(w) * w;
  for (auto& e : d)
    if (e > reachable) e = std::numeric_limits<int64_t>::max();
  return d;
}

FscoreResult boundary_fscore(const LabelMap& pred, const LabelMap& gt, int num_classes,
                             double tolerance_px, const LabelMap& ignore_mask,
                             int ignore_label) {
  check_same_extent("boundary_fscore", pred, gt);
  if (tolerance_px < 0) throw std::invalid_argument("boundary_fscore: negative tolerance");
  bool has_ignore = !ignore_mask.v.empty();
  if (has_ignore) check_same_extent("boundary_fscore", pred, ignore_mask);

  FscoreResult r;
  r.per_class.assign(num_classes, 0.0);
  r.valid.assign(num_classes, false);
  double tol_sq = tolerance_px * tolerance_px;

  auto class_binary = [&](const LabelMap& m, int k) {
    LabelMap b(m.h, m.w, 0);
    for (size_t i = 0; i < m.v.size(); ++i) {
      if ((has_ignore && ignore_mask.v[i]) || m.v[i] == ignore_label)
        b.v[i] = ignore_label;
      else
        b.v[i] = m.v[i] == k ? 1 : 0;
    }
    return b;
  };

  double acc = 0.0;
  int n_valid = 0;
  for (int k = 0; k < num_classes; ++k) {
    bool present = false;
    for (size_t i = 0; i < gt.v.size(); ++i) {
      if (has_ignore && ignore_mask.v[i]) continue;
      if ((gt.v[i] == k && gt.v[i] != ignore_label) ||
          (pred.v[i] == k && pred.v[i] != ignore_label)) {
        present = true;
        break;
      }
    }
    if (!present) continue;
    r.valid[k] = true;
    ++n_valid;

    // one-sided boundary: pixels of class k that touch a non-k pixel
    LabelMap pk = class_binary(pred, k), gk = class_binary(gt, k);
    LabelMap pb = gt_boundary_from_mask(pk, 1, ignore_label);
    LabelMap gb = gt_boundary_from_mask(gk, 1, ignore_label);
    for (size_t i = 0; i < pb.v.size(); ++i) {
      if (pk.v[i] != 1) pb.v[i] = 0;
      if (gk.v[i] != 1) gb.v[i] = 0;
    }
    int64_t np = 0, ng = 0;
    for (int x : pb.v) np += x;
    for (int x : gb.v) ng += x;

    double f;
    if (np == 0 && ng == 0) {
      f = 1.0;
    } else if (np == 0 || ng == 0) {
      f = 0.0;
    } else {
      auto d_to_gt = distance_transform_sq(gb);
      auto d_to_pred = distance_transform_sq(pb);
      int64_t p_hit = 0, g_hit = 0;
      for (size_t i = 0; i < pb.v.size(); ++i) {
        if (pb.v[i] && double(d_to_gt[i]) <= tol_sq) ++p_hit;
        if (gb.v[i] && double(d_to_pred[i]) <= tol_sq) ++g_hit;
      }
      double precision = double(p_hit) / double(np);
      double recall = double(g_hit) / double(ng);
      f = (precision + recall) > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    }
    r.per_class[k] = f;
    acc += f;
  }
  r.mean_f = n_valid ? acc / n_valid : 0.0;
  return r;
}

namespace {

LabelMap crop(const LabelMap& m, int top, int bottom, int left, int right) {
  int h = m.h - top - bottom;
  int w = m.w - left - right;
  if (h <= 0 || w <= 0)
    throw std::invalid_argument("distance_based_eval: empty crop (" + std::to_string(h) +
                                "x" + std::to_string(w) + ")");
  LabelMap out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = m.at(y + top, x + left);
  return out;
}

}  // namespace

std::vector<std::pair<int, double>> distance_based_eval(const LabelMap& pred,
                                                        const LabelMap& gt,
                                                        int num_classes, int ignore_label,
                                                        const CropSpec& cs,
                                                        const std::vector<int>& factors) {
  check_same_extent("distance_based_eval", pred, gt);
  std::vector<std::pair<int, double>> curve;
  for (int c : factors) {
    int top = c;
    int bottom = cs.base_margin + c;
    int side = cs.base_margin + 2 * c;
    LabelMap pc, gc;
    try {
      pc = crop(pred, top, bottom, side, side);
      gc = crop(gt, top, bottom, side, side);
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("distance_based_eval: factor " + std::to_string(c) +
                                  " leaves an empty crop");
    }
    curve.emplace_back(c, iou_report(pc, gc, num_classes, ignore_label).miou);
  }
  return curve;
}

double tolerance_from_fraction(double fraction, double basis_px) {
  if (fraction < 0 || basis_px <= 0)
    throw std::invalid_argument("tolerance_from_fraction: invalid inputs");
  return fraction * basis_px;
}

}  // namespace gscnn
