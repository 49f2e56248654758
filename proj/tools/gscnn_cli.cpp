// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point: make-dataset / train / eval / infer / gradcheck.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "gscnn/gradcheck.hpp"
#include "gscnn/image_io.hpp"
#include "gscnn/trainer.hpp"

namespace fs = std::filesystem;
using namespace gscnn;

namespace {

Config load_config(const std::string& path, const std::vector<std::string>& sets) {
  Config c = path.empty() ? Config{} : Config::parse_file(path);
  for (const auto& s : sets) c.set_kv(s);
  return c;
}

// Rebuilds the model stored in a checkpoint and loads its parameters.
struct LoadedModel {
  TrainConfig tc;
  int num_classes = 0;
  std::optional<Gscnn> model;
};

LoadedModel load_model(const std::string& ckpt_path) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  Config c = Config::parse_text(ck.config_text);
  LoadedModel lm;
  lm.tc = TrainConfig::from_config(c);
  lm.num_classes = c.get_int("model.num_classes", 0);
  if (lm.num_classes < 2)
    throw std::runtime_error("checkpoint lacks a usable model.num_classes entry");
  ModelConfig mc;
  mc.num_classes = lm.num_classes;
  mc.shape_stream = lm.tc.shape_stream;
  mc.gradients_input = lm.tc.gradients_input;
  lm.model.emplace(mc, lm.tc.seed);
  std::map<std::string, Tensor> params;
  for (auto& [name, t] : ck.tensors)
    if (name.rfind("opt.", 0) != 0) params.emplace(name, t);
  load_parameters(*lm.model, params);
  return lm;
}

int cmd_make_dataset(const std::string& out_dir, const DatasetSpec& spec) {
  auto samples = generate_dataset(spec);
  write_dataset(out_dir, spec, samples);
  std::cout << "wrote " << samples.size() << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& resume_path) {
  TrainConfig tc = TrainConfig::from_config(load_config(config_path, sets));
  Trainer trainer(tc);
  if (!resume_path.empty()) trainer.resume(resume_path);
  auto result = trainer.run();
  std::cout << "trained " << result.epochs_run << " epochs, final mean loss "
            << fmt_g9(result.final_total) << "\n"
            << "val mIoU " << fmt_g9(result.val.report.iou.miou) << ", pixel acc "
            << fmt_g9(result.val.pixel_acc) << "\n"
            << "checkpoint: " << result.checkpoint_path << "\n"
            << "metrics:    " << result.metrics_csv_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& out_dir, const std::vector<std::string>& sets,
             bool gt_self) {
  Config overrides = load_config("", sets);
  TrainConfig tc;
  int num_classes = 0;
  std::optional<Gscnn> model;
  if (!gt_self) {
    auto lm = load_model(ckpt_path);
    tc = lm.tc;
    num_classes = lm.num_classes;
    model = std::move(lm.model);
  }
  Dataset data = load_dataset(data_dir, tc.supervision_radius);
  if (gt_self) {
    num_classes = data.num_classes;
  } else if (data.num_classes != num_classes) {
    throw std::runtime_error("class-count mismatch: checkpoint has " +
                             std::to_string(num_classes) + " classes, dataset has " +
                             std::to_string(data.num_classes));
  }
  auto tolerances = overrides.get_double_list("eval.tolerances", tc.tolerances);
  CropSpec crop{overrides.get_int("eval.crop_base_margin", tc.crop_base_margin)};
  auto factors = overrides.get_int_list("eval.crop_factors", tc.crop_factors);

  DatasetEval ev;
  if (gt_self) {
    // harness self-test: score the ground truth against itself
    NoGradGuard ng;
    std::vector<int64_t> confusion(size_t(num_classes) * num_classes, 0);
    for (const auto& s : data.samples)
      accumulate_confusion(s.labels, s.labels, num_classes, kIgnoreLabel, confusion);
    ev.report.iou = iou_from_confusion(confusion, num_classes);
    for (double t : tolerances) {
      FscoreResult agg;
      agg.per_class.assign(num_classes, 0.0);
      agg.valid.assign(num_classes, false);
      std::vector<double> sum(num_classes, 0.0);
      std::vector<int> cnt(num_classes, 0);
      for (const auto& s : data.samples) {
        auto r = boundary_fscore(s.labels, s.labels, num_classes, t, LabelMap{});
        for (int k = 0; k < num_classes; ++k)
          if (r.valid[k]) {
            sum[k] += r.per_class[k];
            ++cnt[k];
          }
      }
      double acc = 0.0;
      int nv = 0;
      for (int k = 0; k < num_classes; ++k)
        if (cnt[k]) {
          agg.valid[k] = true;
          agg.per_class[k] = sum[k] / cnt[k];
          acc += agg.per_class[k];
          ++nv;
        }
      agg.mean_f = nv ? acc / nv : 0.0;
      ev.report.fscore[t] = agg;
    }
    for (int c : factors) {
      double s = 0.0;
      for (const auto& smp : data.samples)
        s += distance_based_eval(smp.labels, smp.labels, num_classes, kIgnoreLabel, crop,
                                 {c})[0]
                 .second;
      ev.report.crop_curve.emplace_back(c, s / double(data.samples.size()));
    }
    ev.pixel_acc = 1.0;
    ev.mean_ce = 0.0;
  } else {
    ev = evaluate_dataset(*model, data.samples, num_classes, tolerances, crop, factors);
  }
  write_eval_csvs(out_dir, "eval", ev, tolerances);
  std::cout << "mIoU " << fmt_g9(ev.report.iou.miou) << ", pixel acc "
            << fmt_g9(ev.pixel_acc) << "\n";
  for (double t : tolerances)
    std::cout << "mean F @ " << fmt_g9(t) << " px: "
              << fmt_g9(ev.report.fscore.at(t).mean_f) << "\n";
  std::cout << "reports written to " << out_dir << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& data_dir, int index,
              const std::string& out_prefix, bool dump_boundary) {
  auto lm = load_model(ckpt_path);
  Dataset data = load_dataset(data_dir, lm.tc.supervision_radius);
  if (data.num_classes != lm.num_classes)
    throw std::runtime_error("class-count mismatch: checkpoint has " +
                             std::to_string(lm.num_classes) + " classes, dataset has " +
                             std::to_string(data.num_classes));
  if (index < 0 || index >= int(data.samples.size()))
    throw std::runtime_error("sample index " + std::to_string(index) +
                             " outside dataset of size " +
                             std::to_string(data.samples.size()));
  const auto& s = data.samples[index];
  NoGradGuard ng;
  auto out = lm.model->forward(s.image, s.image_grad);
  LabelMap pred = argmax_labels(out.seg.probs);
  fs::path prefix(out_prefix);
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  write_pgm(out_prefix + "_labels.pgm", pred);
  std::cout << "wrote " << out_prefix << "_labels.pgm\n";
  if (dump_boundary) {
    if (!lm.tc.shape_stream)
      throw std::runtime_error("--dump-boundary: checkpoint has no shape stream");
    write_gray_pgm(out_prefix + "_boundary.pgm", out.boundary);
    std::cout << "wrote " << out_prefix << "_boundary.pgm\n";
  }
  return 0;
}

int cmd_gradcheck(uint64_t seed) {
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(seed)) {
    std::printf("%-28s max rel err %.3e  (tol %.0e)  %s\n", r.name.c_str(),
                r.max_rel_err, r.tolerance, r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
  }
  auto full = run_full_graph_gradcheck(seed);
  std::printf("%-28s max rel err %.3e  (tol %.0e)  %s\n", full.name.c_str(),
              full.max_rel_err, full.tolerance, full.passed() ? "ok" : "FAIL");
  ok = ok && full.passed();
  if (!ok) throw std::runtime_error("gradient check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stream boundary-aware segmentation toolkit"};
  app.require_subcommand(1);

  // make-dataset
  auto* mk = app.add_subcommand("make-dataset", "generate a synthetic dataset");
  std::string mk_out = "dataset";
  DatasetSpec spec;
  mk->add_option("--out", mk_out, "output directory");
  mk->add_option("--seed", spec.seed, "generation seed");
  mk->add_option("--count", spec.count, "number of samples");
  mk->add_option("--height", spec.height, "image height");
  mk->add_option("--width", spec.width, "image width");
  mk->add_option("--classes", spec.num_classes, "class count (>= 3)");
  mk->add_option("--noise", spec.noise_amplitude, "additive noise amplitude");
  mk->add_option("--ignore-border", spec.ignore_border, "void ring width");
  mk->add_option("--supervision-radius", spec.supervision_radius,
                 "boundary target thickness");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_resume;
  std::vector<std::string> tr_sets;
  tr->add_option("--config", tr_config, "config file")->check(CLI::ExistingFile);
  tr->add_option("--set", tr_sets, "key=value overrides");
  tr->add_option("--resume", tr_resume, "checkpoint to resume from")
      ->check(CLI::ExistingFile);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_out = "eval_out";
  std::vector<std::string> ev_sets;
  bool ev_gt_self = false;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file");
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--out", ev_out, "report directory");
  ev->add_option("--set", ev_sets, "key=value overrides");
  ev->add_flag("--gt-self", ev_gt_self, "score ground truth against itself");

  // infer
  auto* in = app.add_subcommand("infer", "run inference on one dataset sample");
  std::string in_ckpt, in_data, in_out = "pred";
  int in_index = 0;
  bool in_boundary = false;
  in->add_option("--checkpoint", in_ckpt, "checkpoint file")->required();
  in->add_option("--data", in_data, "dataset directory")->required();
  in->add_option("--index", in_index, "sample index");
  in->add_option("--out", in_out, "output path prefix");
  in->add_flag("--dump-boundary", in_boundary, "also write the boundary map");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  uint64_t gc_seed = 7;
  gc->add_option("--seed", gc_seed, "sampling seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*mk) return cmd_make_dataset(mk_out, spec);
    if (*tr) return cmd_train(tr_config, tr_sets, tr_resume);
    if (*ev) {
      if (!ev_gt_self && ev_ckpt.empty())
        throw CLI::RequiredError("--checkpoint (unless --gt-self)");
      return cmd_eval(ev_ckpt, ev_data, ev_out, ev_sets, ev_gt_self);
    }
    if (*in) return cmd_infer(in_ckpt, in_data, in_index, in_out, in_boundary);
    if (*gc) return cmd_gradcheck(gc_seed);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
