// SPDX-License-Identifier: Apache-2.0
#include "gscnn/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace gscnn {

namespace {

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::string join_doubles(const std::vector<double>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << fmt_g17(v[i]);
  return os.str();
}

Tensor boundary_target(const LabelMap& m) {
  auto t = Tensor::zeros(Shape{1, m.h, m.w});
  for (size_t i = 0; i < m.v.size(); ++i) t.data()[i] = m.v[i] ? 1.0f : 0.0f;
  return t;
}

SegSample hflip_sample(const SegSample& s) {
  SegSample f;
  int h = s.labels.h, w = s.labels.w;
  auto flip_tensor = [&](const Tensor& t) {
    auto out = Tensor::zeros(t.shape());
    int C = t.shape()[0];
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out.data()[(int64_t(c) * h + y) * w + x] =
              t.data()[(int64_t(c) * h + y) * w + (w - 1 - x)];
    return out;
  };
  auto flip_map = [&](const LabelMap& m) {
    LabelMap out(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(y, x) = m.at(y, w - 1 - x);
    return out;
  };
  f.image = flip_tensor(s.image);
  f.image_grad = flip_tensor(s.image_grad);
  f.labels = flip_map(s.labels);
  f.gt_boundary = flip_map(s.gt_boundary);
  return f;
}

}  // namespace

std::string fmt_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

double poly_lr(double base, double power, int64_t step, int64_t total_steps) {
  if (total_steps <= 0) return base;
  double frac = double(std::min(step, total_steps)) / double(total_steps);
  return base * std::pow(1.0 - frac, power);
}

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

void TrainConfig::normalize() {
  if (!shape_stream) {
    gradients_input = false;
    dual_task = false;
  }
  if (!dual_task) {
    loss.lambda3 = 0.0;
    loss.lambda4 = 0.0;
  }
}

TrainConfig TrainConfig::from_config(const Config& c) {
  TrainConfig t;
  t.dataset_dir = c.get_str("data.dir", t.dataset_dir);
  t.supervision_radius = c.get_int("data.supervision_radius", t.supervision_radius);

  t.out_dir = c.get_str("train.out_dir", t.out_dir);
  t.epochs = c.get_int("train.epochs", t.epochs);
  t.batch_size = c.get_int("train.batch_size", t.batch_size);
  t.base_lr = c.get_double("train.base_lr", t.base_lr);
  t.poly_power = c.get_double("train.poly_power", t.poly_power);
  t.momentum = c.get_double("train.momentum", t.momentum);
  t.weight_decay = c.get_double("train.weight_decay", t.weight_decay);
  t.seed = c.get_u64("train.seed", t.seed);
  t.val_fraction = c.get_double("train.val_fraction", t.val_fraction);
  t.hflip = c.get_bool("train.hflip", t.hflip);
  t.gumbel_noise = c.get_bool("train.gumbel_noise", t.gumbel_noise);
  t.reg_warmup_epochs = c.get_int("train.reg_warmup_epochs", t.reg_warmup_epochs);
  t.eval_every = c.get_int("train.eval_every", t.eval_every);
  t.checkpoint_every = c.get_int("train.checkpoint_every", t.checkpoint_every);

  t.shape_stream = c.get_bool("model.shape_stream", t.shape_stream);
  t.gradients_input = c.get_bool("model.gradients_input", t.gradients_input);
  t.dual_task = c.get_bool("model.dual_task", t.dual_task);

  t.loss.lambda1 = c.get_double("loss.lambda1", t.loss.lambda1);
  t.loss.lambda2 = c.get_double("loss.lambda2", t.loss.lambda2);
  t.loss.lambda3 = c.get_double("loss.lambda3", t.loss.lambda3);
  t.loss.lambda4 = c.get_double("loss.lambda4", t.loss.lambda4);
  t.loss.tau = c.get_double("loss.tau", t.loss.tau);
  t.loss.thrs = c.get_double("loss.thrs", t.loss.thrs);
  t.loss.zeta_sigma = c.get_double("loss.zeta_sigma", t.loss.zeta_sigma);
  t.loss.zeta_eps = c.get_double("loss.zeta_eps", t.loss.zeta_eps);
  t.loss.reg_union = c.get_bool("loss.reg_union", t.loss.reg_union);

  t.tolerances = c.get_double_list("eval.tolerances", t.tolerances);
  t.crop_base_margin = c.get_int("eval.crop_base_margin", t.crop_base_margin);
  t.crop_factors = c.get_int_list("eval.crop_factors", t.crop_factors);

  t.normalize();
  return t;
}

Config TrainConfig::to_config() const {
  Config c;
  c.set("data.dir", dataset_dir);
  c.set("data.supervision_radius", std::to_string(supervision_radius));

  c.set("train.out_dir", out_dir);
  c.set("train.epochs", std::to_string(epochs));
  c.set("train.batch_size", std::to_string(batch_size));
  c.set("train.base_lr", fmt_g17(base_lr));
  c.set("train.poly_power", fmt_g17(poly_power));
  c.set("train.momentum", fmt_g17(momentum));
  c.set("train.weight_decay", fmt_g17(weight_decay));
  c.set("train.seed", std::to_string(seed));
  c.set("train.val_fraction", fmt_g17(val_fraction));
  c.set("train.hflip", hflip ? "true" : "false");
  c.set("train.gumbel_noise", gumbel_noise ? "true" : "false");
  c.set("train.reg_warmup_epochs", std::to_string(reg_warmup_epochs));
  c.set("train.eval_every", std::to_string(eval_every));
  c.set("train.checkpoint_every", std::to_string(checkpoint_every));

  c.set("model.shape_stream", shape_stream ? "true" : "false");
  c.set("model.gradients_input", gradients_input ? "true" : "false");
  c.set("model.dual_task", dual_task ? "true" : "false");

  c.set("loss.lambda1", fmt_g17(loss.lambda1));
  c.set("loss.lambda2", fmt_g17(loss.lambda2));
  c.set("loss.lambda3", fmt_g17(loss.lambda3));
  c.set("loss.lambda4", fmt_g17(loss.lambda4));
  c.set("loss.tau", fmt_g17(loss.tau));
  c.set("loss.thrs", fmt_g17(loss.thrs));
  c.set("loss.zeta_sigma", fmt_g17(loss.zeta_sigma));
  c.set("loss.zeta_eps", fmt_g17(loss.zeta_eps));
  c.set("loss.reg_union", loss.reg_union ? "true" : "false");

  c.set("eval.tolerances", join_doubles(tolerances));
  c.set("eval.crop_base_margin", std::to_string(crop_base_margin));
  c.set("eval.crop_factors", join_ints(crop_factors));
  return c;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

LabelMap argmax_labels(const Tensor& probs) {
  int K = probs.shape()[0], h = probs.shape()[1], w = probs.shape()[2];
  LabelMap out(h, w);
  int64_t hw = int64_t(h) * w;
  for (int64_t i = 0; i < hw; ++i) {
    int best = 0;
    float bv = probs.data()[i];
    for (int k = 1; k < K; ++k) {
      float v = probs.data()[k * hw + i];
      if (v > bv) {
        bv = v;
        best = k;
      }
    }
    out.v[i] = best;
  }
  return out;
}

DatasetEval evaluate_dataset(const Gscnn& model, const std::vector<SegSample>& samples,
                             int num_classes, const std::vector<double>& tolerances,
                             const CropSpec& crop, const std::vector<int>& crop_factors) {
  if (samples.empty()) throw std::invalid_argument("evaluate_dataset: no samples");
  NoGradGuard ng;

  std::vector<int64_t> confusion(size_t(num_classes) * num_classes, 0);
  std::vector<std::vector<double>> f_sum(tolerances.size(),
                                         std::vector<double>(num_classes, 0.0));
  std::vector<std::vector<int>> f_cnt(tolerances.size(), std::vector<int>(num_classes, 0));
  std::vector<double> crop_sum(crop_factors.size(), 0.0);
  int64_t correct = 0, counted = 0;
  double ce_sum = 0.0;

  for (const auto& s : samples) {
    auto out = model.forward(s.image, s.image_grad);
    LabelMap pred = argmax_labels(out.seg.probs);
    ce_sum += double(cross_entropy(out.seg, s.labels, kIgnoreLabel).item());

    std::vector<int64_t> conf;
    accumulate_confusion(pred, s.labels, num_classes, kIgnoreLabel, conf);
    for (size_t i = 0; i < confusion.size(); ++i) confusion[i] += conf[i];
    for (size_t i = 0; i < pred.v.size(); ++i) {
      if (s.labels.v[i] == kIgnoreLabel) continue;
      ++counted;
      if (pred.v[i] == s.labels.v[i]) ++correct;
    }

    for (size_t t = 0; t < tolerances.size(); ++t) {
      auto r = boundary_fscore(pred, s.labels, num_classes, tolerances[t], LabelMap{});
      for (int k = 0; k < num_classes; ++k)
        if (r.valid[k]) {
          f_sum[t][k] += r.per_class[k];
          ++f_cnt[t][k];
        }
    }

    if (!crop_factors.empty()) {
      auto curve = distance_based_eval(pred, s.labels, num_classes, kIgnoreLabel, crop,
                                       crop_factors);
      for (size_t i = 0; i < curve.size(); ++i) crop_sum[i] += curve[i].second;
    }
  }

  DatasetEval ev;
  ev.report.iou = iou_from_confusion(confusion, num_classes);
  for (size_t t = 0; t < tolerances.size(); ++t) {
    FscoreResult r;
    r.per_class.assign(num_classes, 0.0);
    r.valid.assign(num_classes, false);
    double acc = 0.0;
    int n_valid = 0;
    for (int k = 0; k < num_classes; ++k) {
      if (f_cnt[t][k] == 0) continue;
      r.valid[k] = true;
      r.per_class[k] = f_sum[t][k] / f_cnt[t][k];
      acc += r.per_class[k];
      ++n_valid;
    }
    r.mean_f = n_valid ? acc / n_valid : 0.0;
    ev.report.fscore[tolerances[t]] = r;
  }
  for (size_t i = 0; i < crop_factors.size(); ++i)
    ev.report.crop_curve.emplace_back(crop_factors[i], crop_sum[i] / double(samples.size()));
  ev.pixel_acc = counted ? double(correct) / double(counted) : 0.0;
  ev.mean_ce = ce_sum / double(samples.size());
  return ev;
}

void write_eval_csvs(const std::string& dir, const std::string& prefix,
                     const DatasetEval& ev, const std::vector<double>& tolerances) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  {
    std::ofstream out(fs::path(dir) / (prefix + "_summary.csv"));
    out << "miou,pixel_acc,mean_ce";
    for (double t : tolerances) out << ",mean_f_tol" << fmt_g9(t);
    out << "\n" << fmt_g9(ev.report.iou.miou) << "," << fmt_g9(ev.pixel_acc) << ","
        << fmt_g9(ev.mean_ce);
    for (double t : tolerances) out << "," << fmt_g9(ev.report.fscore.at(t).mean_f);
    out << "\n";
  }
  {
    std::ofstream out(fs::path(dir) / (prefix + "_classes.csv"));
    out << "class,iou";
    for (double t : tolerances) out << ",f_tol" << fmt_g9(t);
    out << "\n";
    int K = int(ev.report.iou.per_class.size());
    for (int k = 0; k < K; ++k) {
      out << k << "," << fmt_g9(ev.report.iou.valid[k] ? ev.report.iou.per_class[k] : 0.0);
      for (double t : tolerances) {
        const auto& r = ev.report.fscore.at(t);
        out << "," << fmt_g9(r.valid[k] ? r.per_class[k] : 0.0);
      }
      out << "\n";
    }
  }
  {
    std::ofstream out(fs::path(dir) / (prefix + "_crop.csv"));
    out << "factor,miou\n";
    for (auto& [c, miou] : ev.report.crop_curve)
      out << c << "," << fmt_g9(miou) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  if (!std::filesystem::exists(cfg_.dataset_dir))
    throw std::runtime_error("dataset directory not found: " + cfg_.dataset_dir);
  data_ = load_dataset(cfg_.dataset_dir, cfg_.supervision_radius);
  init();
}

Trainer::Trainer(TrainConfig cfg, Dataset dataset)
    : cfg_(std::move(cfg)), data_(std::move(dataset)) {
  init();
}

void Trainer::init() {
  cfg_.normalize();
  if (data_.samples.empty()) throw std::runtime_error("trainer: empty dataset");
  ModelConfig mc;
  mc.num_classes = data_.num_classes;
  mc.shape_stream = cfg_.shape_stream;
  mc.gradients_input = cfg_.gradients_input;
  model_.emplace(mc, cfg_.seed);
  for (auto& [name, e] : model_->params().entries())
    velocity_[name].assign(e.tensor.numel(), 0.0f);
}

std::vector<int> Trainer::train_indices() const {
  int n = int(data_.samples.size());
  int n_val = int(double(n) * cfg_.val_fraction);
  std::vector<int> idx(n - n_val);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

std::vector<int> Trainer::val_indices() const {
  int n = int(data_.samples.size());
  int n_val = int(double(n) * cfg_.val_fraction);
  std::vector<int> idx(n_val);
  std::iota(idx.begin(), idx.end(), n - n_val);
  return idx;
}

LossBreakdown Trainer::step(const std::vector<int>& indices, double lr) {
  if (indices.empty()) throw std::invalid_argument("step: empty batch");
  model_->params().zero_grad();
  float inv = 1.0f / float(indices.size());
  double bce = 0, ce = 0, rf = 0, rb = 0, total = 0;

  for (size_t pos = 0; pos < indices.size(); ++pos) {
    const SegSample* sp = &data_.samples[indices[pos]];
    SegSample flipped;
    if (cfg_.hflip) {
      Rng r(Rng::derive(cfg_.seed, 3000000 + uint64_t(global_step_) * 64 + pos));
      if (r.uniform() < 0.5) {
        flipped = hflip_sample(*sp);
        sp = &flipped;
      }
    }
    const SegSample& s = *sp;

    auto out = model_->forward(s.image, s.image_grad);
    Tensor sample_total;
    if (cfg_.shape_stream) {
      LossConfig lc = cfg_.loss;
      if (epoch_ < cfg_.reg_warmup_epochs) lc.lambda3 = lc.lambda4 = 0.0;
      auto lb = total_loss(out.boundary, out.seg, s.labels, boundary_target(s.gt_boundary),
                           lc,
                           kIgnoreLabel, cfg_.gumbel_noise,
                           Rng::derive(cfg_.seed, 2000000 + uint64_t(global_step_) * 64 + pos),
                           ArgmaxMode::kHard);
      bce += double(lb.bce.item());
      ce += double(lb.ce.item());
      rf += double(lb.reg_fwd.item());
      rb += double(lb.reg_bwd.item());
      sample_total = lb.total;
    } else {
      auto ce_t = cross_entropy(out.seg, s.labels, kIgnoreLabel);
      ce += double(ce_t.item());
      sample_total = scale(ce_t, float(cfg_.loss.lambda2));
    }
    total += double(sample_total.item());

    if (!std::isfinite(double(sample_total.item()))) {
      std::string bad = first_nonfinite_node(sample_total);
      throw std::runtime_error("non-finite loss at step " + std::to_string(global_step_) +
                               "; first non-finite tensor: " +
                               (bad.empty() ? std::string("<loss>") : bad));
    }
    backward(scale(sample_total, inv));
  }

  apply_update(lr);
  ++global_step_;

  LossBreakdown out;
  out.bce = Tensor::filled({1}, float(bce * inv));
  out.ce = Tensor::filled({1}, float(ce * inv));
  out.reg_fwd = Tensor::filled({1}, float(rf * inv));
  out.reg_bwd = Tensor::filled({1}, float(rb * inv));
  out.total = Tensor::filled({1}, float(total * inv));
  return out;
}

void Trainer::apply_update(double lr) {
  float mu = float(cfg_.momentum);
  float wd = float(cfg_.weight_decay);
  float flr = float(lr);
  for (auto& [name, e] : model_->params().entries()) {
    auto& w = e.tensor.data();
    auto& v = velocity_[name];
    if (!e.tensor.has_grad()) {
      for (size_t i = 0; i < w.size(); ++i) {
        v[i] = mu * v[i] + wd * w[i];
        w[i] -= flr * v[i];
      }
      continue;
    }
    const auto& g = e.tensor.grad();
    for (size_t i = 0; i < w.size(); ++i) {
      v[i] = mu * v[i] + g[i] + wd * w[i];
      w[i] -= flr * v[i];
    }
  }
}

Checkpoint Trainer::make_checkpoint(int epoch) const {
  Checkpoint ck;
  auto c = cfg_.to_config();
  c.set("model.num_classes", std::to_string(data_.num_classes));
  // the output directory is not part of the training semantics; identical
  // runs to different directories should produce identical checkpoints
  c.set("train.out_dir", "");
  ck.config_text = c.to_text();
  ck.epoch = uint32_t(epoch);
  for (auto& [name, e] : model_->params().entries()) {
    ck.tensors.emplace(name, Tensor::from_data(e.tensor.shape(),
                                               std::vector<float>(e.tensor.data())));
    const auto& v = velocity_.at(name);
    ck.tensors.emplace("opt." + name,
                       Tensor::from_data(e.tensor.shape(), std::vector<float>(v)));
  }
  return ck;
}

void Trainer::save(const std::string& path, int epoch) const {
  save_checkpoint(path, make_checkpoint(epoch));
}

void Trainer::resume(const std::string& checkpoint_path) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  std::map<std::string, Tensor> params;
  for (auto& [name, t] : ck.tensors) {
    if (name.rfind("opt.", 0) == 0) continue;
    params.emplace(name, t);
  }
  load_parameters(*model_, params);
  for (auto& [name, v] : velocity_) {
    auto it = ck.tensors.find("opt." + name);
    if (it == ck.tensors.end())
      throw std::runtime_error("checkpoint is missing optimizer state: opt." + name);
    if (int64_t(v.size()) != it->second.numel())
      throw std::runtime_error("optimizer state size mismatch for " + name);
    v = it->second.data();
  }
  start_epoch_ = int(ck.epoch);
  auto train_idx = train_indices();
  int64_t steps_per_epoch =
      (int64_t(train_idx.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
  global_step_ = int64_t(start_epoch_) * steps_per_epoch;
}

TrainResult Trainer::run() {
  namespace fs = std::filesystem;
  fs::create_directories(cfg_.out_dir);

  auto train_idx = train_indices();
  auto val_idx = val_indices();
  if (train_idx.empty()) throw std::runtime_error("trainer: empty training split");
  int64_t steps_per_epoch =
      (int64_t(train_idx.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
  int64_t total_steps = steps_per_epoch * cfg_.epochs;

  std::string csv_path = (fs::path(cfg_.out_dir) / "metrics.csv").string();
  std::ofstream csv;
  if (start_epoch_ > 0 && fs::exists(csv_path)) {
    csv.open(csv_path, std::ios::app);
  } else {
    csv.open(csv_path);
    csv << "step,epoch,lr,bce,ce,reg_fwd,reg_bwd,total\n";
  }
  if (!csv) throw std::runtime_error("cannot write metrics CSV: " + csv_path);

  auto eval_samples = [&](const std::vector<int>& idx) {
    std::vector<SegSample> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(data_.samples[i]);
    return out;
  };
  // fall back to the train split when there is no validation split
  const std::vector<int>& report_idx = val_idx.empty() ? train_idx : val_idx;
  CropSpec crop{cfg_.crop_base_margin};

  TrainResult result;
  double last_epoch_total = 0.0;
  for (int epoch = start_epoch_; epoch < cfg_.epochs; ++epoch) {
    epoch_ = epoch;
    // deterministic per-epoch shuffle, independent of earlier epochs
    auto order = train_idx;
    Rng shuffle_rng(Rng::derive(cfg_.seed, 1000 + uint64_t(epoch)));
    for (int i = int(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    double epoch_total = 0.0;
    int64_t epoch_steps = 0;
    for (size_t off = 0; off < order.size(); off += size_t(cfg_.batch_size)) {
      std::vector<int> batch(order.begin() + off,
                             order.begin() + std::min(off + size_t(cfg_.batch_size),
                                                      order.size()));
      double lr = poly_lr(cfg_.base_lr, cfg_.poly_power, global_step_, total_steps);
      int64_t row_step = global_step_;
      auto lb = step(batch, lr);
      csv << row_step << "," << epoch << "," << fmt_g9(lr) << ","
          << fmt_g9(double(lb.bce.item())) << "," << fmt_g9(double(lb.ce.item())) << ","
          << fmt_g9(double(lb.reg_fwd.item())) << "," << fmt_g9(double(lb.reg_bwd.item()))
          << "," << fmt_g9(double(lb.total.item())) << "\n";
      epoch_total += double(lb.total.item());
      ++epoch_steps;
    }
    last_epoch_total = epoch_total / double(epoch_steps);

    if (cfg_.checkpoint_every > 0 && (epoch + 1) % cfg_.checkpoint_every == 0 &&
        epoch + 1 < cfg_.epochs) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch + 1);
      save((fs::path(cfg_.out_dir) / name).string(), epoch + 1);
    }
    if (cfg_.eval_every > 0 && (epoch + 1) % cfg_.eval_every == 0 &&
        epoch + 1 < cfg_.epochs) {
      auto ev = evaluate_dataset(*model_, eval_samples(report_idx), data_.num_classes,
                                 cfg_.tolerances, crop, cfg_.crop_factors);
      write_eval_csvs(cfg_.out_dir, "val", ev, cfg_.tolerances);
    }
  }
  csv.close();

  result.epochs_run = cfg_.epochs - start_epoch_;
  result.final_total = last_epoch_total;
  result.checkpoint_path = (fs::path(cfg_.out_dir) / "final.ckpt").string();
  result.metrics_csv_path = csv_path;
  save(result.checkpoint_path, cfg_.epochs);
  result.val = evaluate_dataset(*model_, eval_samples(report_idx), data_.num_classes,
                                cfg_.tolerances, crop, cfg_.crop_factors);
  write_eval_csvs(cfg_.out_dir, "val", result.val, cfg_.tolerances);
  return result;
}

}  // namespace gscnn
