#pragma once

// Adam, the per-fold training loop and k-fold experiment orchestration.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tango/datastore.hpp"
#include "tango/networks.hpp"
#include "tango/objectives.hpp"

namespace tango::train {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  int epochs = 100;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 42;
  bool shuffle = true;
  obj::LossWeights weights;
  double ot_loss_weight = 0.0;

  void validate() const;
};

struct AdamState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  long step = 0;
};

// One bias-corrected Adam update using each parameter's accumulated grad.
// Throws NumericError naming the parameter on a non-finite gradient.
void adam_step(std::vector<nets::NamedTensor>& params, AdamState& state,
               const TrainConfig& cfg);

struct TaskMetrics {
  std::optional<double> asr_acc;
  std::optional<double> ser_acc;
  std::optional<double> gr_acc;
  std::optional<double> ae_rmse;  // years
};

struct FoldReport {
  int fold_index = 0;
  TaskMetrics metrics;
  double final_train_loss = 0.0;
  int epochs_run = 0;
  std::vector<double> loss_history;  // mean total loss per epoch
};

struct FoldResult {
  nets::Model model;
  FoldReport report;
};

// Views handed to a model, in the model's view order.
using ViewRefs = std::vector<const data::EmbeddingMatrix*>;
using BatchObserver = std::function<void(std::span<const std::size_t>)>;

FoldResult train_fold(const nets::ModelConfig& model_cfg,
                      const TrainConfig& train_cfg, const ViewRefs& views,
                      const data::SampleManifest& manifest,
                      std::span<const std::size_t> train_indices,
                      std::span<const std::size_t> test_indices,
                      int fold_index, const BatchObserver& observer = {});

FoldResult train_fold(const nets::ModelConfig& model_cfg,
                      const TrainConfig& train_cfg, const ViewRefs& views,
                      const data::SampleManifest& manifest,
                      const data::FoldSplit& split, int fold,
                      const BatchObserver& observer = {});

// Metrics of a trained model on the given rows; ae_rmse in years.
TaskMetrics evaluate(nets::Model& model, const ViewRefs& views,
                     const data::SampleManifest& manifest,
                     std::span<const std::size_t> indices);

// Mean and population standard deviation of age over `indices`.
std::pair<double, double> age_statistics(const data::SampleManifest& manifest,
                                         std::span<const std::size_t> indices);

struct ExperimentEntry {
  std::string config_id;
  nets::ModelConfig model;
  std::vector<std::size_t> view_indices;  // into the experiment's views
};

struct ConfigReport {
  std::string config_id;
  std::string family;
  std::vector<std::string> views;
  std::vector<FoldReport> folds;
  TaskMetrics mean;
};

struct ExperimentReport {
  std::vector<ConfigReport> configs;
};

// Throws ContractError for an empty fold list.
TaskMetrics mean_metrics(std::span<const FoldReport> folds);

// Called after each fold finishes; used to persist checkpoints.
using FoldSink = std::function<void(const ExperimentEntry&, const FoldResult&)>;

// Runs every entry over every fold of `split`. Folds of one entry run on up
// to `threads` workers; results do not depend on the thread count.
ExperimentReport run_experiment(const std::vector<ExperimentEntry>& entries,
                                const TrainConfig& train_cfg,
                                const std::vector<data::EmbeddingMatrix>& views,
                                const data::SampleManifest& manifest,
                                const data::FoldSplit& split,
                                std::size_t threads = 1,
                                const FoldSink& sink = {});

// Thread budget from TANGO_THREADS, capped at the fold count.
std::size_t thread_budget(int folds);

nlohmann::json metrics_to_json(const TaskMetrics& m);
TaskMetrics metrics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ConfigReport& r);
ConfigReport config_report_from_json(const nlohmann::json& j);
// One config serializes as its object; several as {"configs": [...]}.
nlohmann::json to_json(const ExperimentReport& r);
ExperimentReport experiment_from_json(const nlohmann::json& j);

// "TANGO | 90.19 | 75.85 | 99.60 | 5.68"; absent metrics print as "-".
std::string format_row(const std::string& label, const TaskMetrics& m);
// Header line plus one row per config, columns ASR | SER | GR | AE.
std::string render_table(const ExperimentReport& r);

}  // namespace tango::train
