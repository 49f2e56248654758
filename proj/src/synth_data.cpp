// SPDX-License-Identifier: Apache-2.0
#include "gscnn/synth_data.hpp"

#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>

#include "gscnn/image_io.hpp"
#include "gscnn/metrics.hpp"
#include "gscnn/ops.hpp"
#include "gscnn/rng.hpp"

namespace gscnn {

namespace {

namespace fs = std::filesystem;

// Fixed palette: well-separated base colors per class.
void class_color(int k, float* rgb) {
  static const float palette[][3] = {
      {0.15f, 0.15f, 0.18f},  // background
      {0.85f, 0.25f, 0.20f}, {0.20f, 0.70f, 0.30f}, {0.25f, 0.35f, 0.85f},
      {0.90f, 0.80f, 0.20f}, {0.70f, 0.25f, 0.75f}, {0.20f, 0.75f, 0.75f},
      {0.95f, 0.55f, 0.15f},
  };
  constexpr int n = sizeof(palette) / sizeof(palette[0]);
  if (k < n) {
    rgb[0] = palette[k][0];
    rgb[1] = palette[k][1];
    rgb[2] = palette[k][2];
  } else {
    // spread further classes over a hue wheel
    double h = std::fmod(0.618033988749895 * k, 1.0) * 6.0;
    int i = int(h);
    double f = h - i;
    double v = 0.8, s = 0.7;
    double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    double r, g, b;
    switch (i % 6) {
      case 0: r = v, g = t, b = p; break;
      case 1: r = q, g = v, b = p; break;
      case 2: r = p, g = v, b = t; break;
      case 3: r = p, g = q, b = v; break;
      case 4: r = t, g = p, b = v; break;
      default: r = v, g = p, b = q; break;
    }
    rgb[0] = float(r);
    rgb[1] = float(g);
    rgb[2] = float(b);
  }
}

struct Painter {
  LabelMap& labels;
  Tensor& image;
  int H, W;

  void set(int y, int x, int cls) {
    if (y < 0 || y >= H || x < 0 || x >= W) return;
    labels.at(y, x) = cls;
    float rgb[3];
    class_color(cls, rgb);
    auto& d = image.data();
    for (int c = 0; c < 3; ++c) d[(size_t(c) * H + y) * W + x] = rgb[c];
  }

  void rect(int y0, int x0, int h, int w, int cls) {
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) set(y, x, cls);
  }

  void ellipse(int cy, int cx, int ry, int rx, int cls) {
    for (int y = cy - ry; y <= cy + ry; ++y)
      for (int x = cx - rx; x <= cx + rx; ++x) {
        double dy = double(y - cy) / ry, dx = double(x - cx) / rx;
        if (dy * dy + dx * dx <= 1.0) set(y, x, cls);
      }
  }

  // 1-3 px wide bar, horizontal or vertical
  void thin_bar(Rng& rng, int cls) {
    int width = int(rng.uniform_int(1, 3));
    bool vertical = rng.uniform() < 0.5;
    if (vertical) {
      int x0 = int(rng.uniform_int(2, W - 2 - width));
      int len = int(rng.uniform_int(H / 2, H - 4));
      int y0 = int(rng.uniform_int(1, H - 1 - len));
      rect(y0, x0, len, width, cls);
    } else {
      int y0 = int(rng.uniform_int(2, H - 2 - width));
      int len = int(rng.uniform_int(W / 2, W - 4));
      int x0 = int(rng.uniform_int(1, W - 1 - len));
      rect(y0, x0, width, len, cls);
    }
  }

  void blob(Rng& rng, int cls) {
    int r = int(rng.uniform_int(2, 4));
    int cy = int(rng.uniform_int(r, H - 1 - r));
    int cx = int(rng.uniform_int(r, W - 1 - r));
    ellipse(cy, cx, r, r, cls);
  }

  void random_shape(Rng& rng, int cls) {
    switch (rng.uniform_int(0, 3)) {
      case 0: {  // rectangle
        int h = int(rng.uniform_int(H / 8, H / 2));
        int w = int(rng.uniform_int(W / 8, W / 2));
        rect(int(rng.uniform_int(0, H - h)), int(rng.uniform_int(0, W - w)), h, w, cls);
        break;
      }
      case 1: {  // ellipse
        int ry = int(rng.uniform_int(H / 10, H / 4));
        int rx = int(rng.uniform_int(W / 10, W / 4));
        ellipse(int(rng.uniform_int(ry, H - 1 - ry)), int(rng.uniform_int(rx, W - 1 - rx)),
                ry, rx, cls);
        break;
      }
      case 2: thin_bar(rng, cls); break;
      default: blob(rng, cls); break;
    }
  }
};

}  // namespace

Tensor image_gradient(const Tensor& image) {
  NoGradGuard ng;
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != 3)
    throw std::invalid_argument("image_gradient: need 3×H×W, got " + shape_str(s));
  int H = s[1], W = s[2];
  auto gray = Tensor::zeros(Shape{1, H, W});
  {
    const auto& d = image.data();
    auto& g = gray.data();
    int64_t hw = int64_t(H) * W;
    for (int64_t i = 0; i < hw; ++i)
      g[i] = 0.299f * d[i] + 0.587f * d[hw + i] + 0.114f * d[2 * hw + i];
  }
  auto mag = sobel_gradient_magnitude(gaussian_blur(gray, 1.0f));
  const auto& m = mag.data();
  float mx = 0;
  for (float v : m) mx = std::max(mx, v);
  auto out = Tensor::zeros(Shape{1, H, W});
  // absolute floor so the epsilon inside the magnitude (~1e-6 on a flat
  // image) cannot seed edges through the relative thresholds
  constexpr float kEdgeFloor = 1e-3f;
  if (mx <= kEdgeFloor) return out;
  float high = 0.2f * mx, low = 0.1f * mx;

  // hysteresis: strong pixels seed, weak pixels join when 8-connected
  auto& o = out.data();
  std::deque<int64_t> frontier;
  for (int64_t i = 0; i < int64_t(m.size()); ++i)
    if (m[i] >= high) {
      o[i] = 1.0f;
      frontier.push_back(i);
    }
  while (!frontier.empty()) {
    int64_t i = frontier.front();
    frontier.pop_front();
    int y = int(i / W), x = int(i % W);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
        int64_t j = int64_t(yy) * W + xx;
        if (o[j] == 0.0f && m[j] >= low) {
          o[j] = 1.0f;
          frontier.push_back(j);
        }
      }
  }
  return out;
}

SegSample make_sample(Tensor image, LabelMap labels, int supervision_radius) {
  SegSample s;
  s.gt_boundary = gt_boundary_from_mask(labels, supervision_radius, kIgnoreLabel);
  s.image_grad = image_gradient(image);
  s.image = std::move(image);
  s.labels = std::move(labels);
  return s;
}

std::vector<SegSample> generate_dataset(const DatasetSpec& spec) {
  if (spec.num_classes < 3)
    throw std::invalid_argument("generate_dataset: need at least 3 classes");
  if (spec.height % 8 != 0 || spec.width % 8 != 0)
    throw std::invalid_argument("generate_dataset: H and W must be divisible by 8");
  if (spec.height < 16 || spec.width < 16)
    throw std::invalid_argument("generate_dataset: canvas too small for the shape mix");
  if (spec.count < 1) throw std::invalid_argument("generate_dataset: count must be positive");

  std::vector<SegSample> out;
  out.reserve(spec.count);
  for (int idx = 0; idx < spec.count; ++idx) {
    Rng rng(Rng::derive(spec.seed, uint64_t(idx)));
    LabelMap labels(spec.height, spec.width, 0);
    auto image = Tensor::zeros(Shape{3, spec.height, spec.width});
    Painter p{labels, image, spec.height, spec.width};
    p.rect(0, 0, spec.height, spec.width, 0);

    // one shape per foreground class in shuffled paint order, then extras
    std::vector<int> order;
    for (int k = 1; k < spec.num_classes; ++k) order.push_back(k);
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(rng.uniform_int(0, int64_t(i) - 1))]);
    for (int cls : order) p.random_shape(rng, cls);
    int extras = int(rng.uniform_int(1, spec.num_classes));
    for (int e = 0; e < extras; ++e)
      p.random_shape(rng, int(rng.uniform_int(1, spec.num_classes - 1)));
    // a thin bar in every sample, on top
    p.thin_bar(rng, int(rng.uniform_int(1, spec.num_classes - 1)));

    if (spec.noise_amplitude > 0) {
      auto& d = image.data();
      float a = float(spec.noise_amplitude);
      for (auto& v : d) {
        v += a * float(rng.uniform(-1.0, 1.0));
        v = std::min(1.0f, std::max(0.0f, v));
      }
    }
    for (int b = 0; b < spec.ignore_border; ++b) {
      for (int x = 0; x < spec.width; ++x) {
        labels.at(b, x) = kIgnoreLabel;
        labels.at(spec.height - 1 - b, x) = kIgnoreLabel;
      }
      for (int y = 0; y < spec.height; ++y) {
        labels.at(y, b) = kIgnoreLabel;
        labels.at(y, spec.width - 1 - b) = kIgnoreLabel;
      }
    }
    out.push_back(make_sample(std::move(image), std::move(labels), spec.supervision_radius));
  }
  return out;
}

uint64_t spec_hash(const DatasetSpec& s) {
  // FNV-1a over the generation-relevant fields
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  mix(s.seed);
  mix(uint64_t(s.count));
  mix(uint64_t(s.height));
  mix(uint64_t(s.width));
  mix(uint64_t(s.num_classes));
  mix(uint64_t(std::llround(s.noise_amplitude * 1e9)));
  mix(uint64_t(s.ignore_border));
  mix(uint64_t(s.supervision_radius));
  return h;
}

namespace {
std::string index_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", i);
  return buf;
}
}  // namespace

void write_dataset(const std::string& dir, const DatasetSpec& spec,
                   const std::vector<SegSample>& samples) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "labels");
  for (size_t i = 0; i < samples.size(); ++i) {
    write_ppm((fs::path(dir) / "images" / (index_name(int(i)) + ".ppm")).string(),
              samples[i].image);
    write_pgm((fs::path(dir) / "labels" / (index_name(int(i)) + ".pgm")).string(),
              samples[i].labels);
  }
  std::ofstream mf((fs::path(dir) / "manifest.txt").string());
  if (!mf) throw std::runtime_error("cannot write manifest in " + dir);
  mf << "count = " << samples.size() << "\n";
  mf << "height = " << spec.height << "\n";
  mf << "width = " << spec.width << "\n";
  mf << "classes = " << spec.num_classes << "\n";
  mf << "spec_hash = " << spec_hash(spec) << "\n";
}

Dataset load_dataset(const std::string& dir, int supervision_radius) {
  std::ifstream mf((fs::path(dir) / "manifest.txt").string());
  if (!mf) throw std::runtime_error("dataset manifest not found: " + dir + "/manifest.txt");
  Dataset ds;
  int count = 0;
  std::string key, eq;
  while (mf >> key >> eq) {
    long long value;
    if (!(mf >> value)) break;
    if (key == "count") count = int(value);
    else if (key == "height") ds.height = int(value);
    else if (key == "width") ds.width = int(value);
    else if (key == "classes") ds.num_classes = int(value);
    else if (key == "spec_hash") { /* informational */ }
  }
  if (count <= 0 || ds.num_classes < 2)
    throw std::runtime_error("dataset manifest malformed: " + dir);
  ds.samples.reserve(count);
  for (int i = 0; i < count; ++i) {
    auto image = read_ppm((fs::path(dir) / "images" / (index_name(i) + ".ppm")).string());
    auto labels = read_pgm((fs::path(dir) / "labels" / (index_name(i) + ".pgm")).string());
    ds.samples.push_back(make_sample(std::move(image), std::move(labels), supervision_radius));
  }
  return ds;
}

}  // namespace gscnn
