// SPDX-License-Identifier: Apache-2.0
//
// Training and evaluation orchestration: SGD with momentum, polynomial LR
// decay, ablation switches, checkpointing, metrics CSVs.

#pragma once

#include <string>
#include <vector>

#include "gscnn/config.hpp"
#include "gscnn/losses.hpp"
#include "gscnn/metrics.hpp"
#include "gscnn/model.hpp"
#include "gscnn/synth_data.hpp"

namespace gscnn {

struct TrainConfig {
  std::string dataset_dir;
  std::string out_dir = "runs/default";
  int epochs = 30;
  int batch_size = 4;
  double base_lr = 1e-2;
  double poly_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  uint64_t seed = 1;
  double val_fraction = 0.2;  // validation split = last fraction by index
  bool hflip = false;
  bool gumbel_noise = true;
  int eval_every = 0;        // epochs between validation evals; 0 = final only
  int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only

  // the dual-task terms join after the streams have formed; the raw
  // regularizer gradients through the hard assignment derail some seeds
  // when applied from step one
  int reg_warmup_epochs = 3;

  // ablation switches
  bool shape_stream = true;
  bool gradients_input = true;
  bool dual_task = true;

  LossConfig loss;
  int supervision_radius = 2;
  std::vector<double> tolerances = default_tolerances();
  int crop_base_margin = 4;
  std::vector<int> crop_factors = {0, 2, 4};

  // Baseline rule: no shape stream means no gradient input, no dual task and
  // an inert boundary BCE. dual_task off zeroes the regularizer weights.
  void normalize();

  static TrainConfig from_config(const Config& c);
  Config to_config() const;
};

// Dataset-level metrics: IoU from the aggregate confusion matrix, per-class
// boundary F averaged over the samples where the class occurs, crop-curve
// mIoU averaged over samples.
struct DatasetEval {
  EvalReport report;
  double pixel_acc = 0.0;
  double mean_ce = 0.0;  // plain cross-entropy, inference mode
};

LabelMap argmax_labels(const Tensor& probs);

DatasetEval evaluate_dataset(const Gscnn& model, const std::vector<SegSample>& samples,
                             int num_classes, const std::vector<double>& tolerances,
                             const CropSpec& crop, const std::vector<int>& crop_factors);

void write_eval_csvs(const std::string& dir, const std::string& prefix,
                     const DatasetEval& ev, const std::vector<double>& tolerances);

struct TrainResult {
  int epochs_run = 0;
  double final_total = 0.0;  // mean over the last epoch
  DatasetEval val;           // evaluation after the last epoch
  std::string checkpoint_path;
  std::string metrics_csv_path;
};

class Trainer {
 public:
  // Loads the dataset from cfg.dataset_dir.
  explicit Trainer(TrainConfig cfg);
  // Uses a preloaded dataset (tests, in-memory pipelines).
  Trainer(TrainConfig cfg, Dataset dataset);

  void resume(const std::string& checkpoint_path);

  // Runs the remaining epochs, writing metrics.csv, checkpoints and eval CSVs
  // under cfg.out_dir. Throws on non-finite loss, naming the first bad tensor.
  TrainResult run();

  // Single optimization step over the given sample indices; returns the loss
  // breakdown means. Exposed for the trainer unit tests.
  LossBreakdown step(const std::vector<int>& indices, double lr);

  Gscnn& model() { return *model_; }
  const Dataset& dataset() const { return data_; }
  const TrainConfig& config() const { return cfg_; }
  int start_epoch() const { return start_epoch_; }

  std::vector<int> train_indices() const;
  std::vector<int> val_indices() const;

  Checkpoint make_checkpoint(int epoch) const;
  void save(const std::string& path, int epoch) const;

 private:
  void init();
  void apply_update(double lr);

  TrainConfig cfg_;
  int epoch_ = 0;  // set by run(); step() reads it for the warmup rule
  Dataset data_;
  std::optional<Gscnn> model_;
  std::map<std::string, std::vector<float>> velocity_;
  int start_epoch_ = 0;
  int64_t global_step_ = 0;
};

double poly_lr(double base, double power, int64_t step, int64_t total_steps);

// %.9g rendering used everywhere a float reaches a CSV, so two identical runs
// produce byte-identical files.
std::string fmt_g9(double v);

}  // namespace gscnn
