#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "tango/errors.hpp"
#include "tango/trainer.hpp"

using namespace tango;
using nets::Family;

namespace {

nets::ModelConfig small_config(Family f, const data::SynthData& d,
                               std::optional<nets::Task> task = {}) {
  nets::ModelConfig cfg;
  cfg.family = f;
  cfg.task = task;
  cfg.view_dims = {d.view_a.dim};
  if (f == Family::kMvmtConcat || f == Family::kTango) cfg.view_dims.push_back(d.view_b.dim);
  cfg.conv_channels = {4, 8};
  cfg.svst_fcn = {32, 16};
  cfg.shared_fcn = {32, 16};
  cfg.head_width = 8;
  cfg.n_speakers = d.manifest.speaker_count();
  cfg.n_emotions = d.manifest.emotion_count();
  return cfg;
}

data::SynthData small_data(double noise = 0.5, std::size_t n = 60) {
  data::SynthSpec spec;
  spec.n_samples = n;
  spec.dim_a = 16;
  spec.dim_b = 16;
  spec.noise = noise;
  return data::synth_dataset(spec);
}

train::ViewRefs refs_for(const nets::ModelConfig& cfg, const data::SynthData& d) {
  train::ViewRefs v{&d.view_a};
  if (cfg.view_count() == 2) v.push_back(&d.view_b);
  return v;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<nets::NamedTensor> p{{"w", ad::Tensor({2}, std::vector<double>{0.0, 1.0})}};
  p[0].tensor.grad = {2.0, -0.5};
  train::AdamState st;
  train::TrainConfig cfg;
  train::adam_step(p, st, cfg);
  EXPECT_NEAR(p[0].tensor.data[0], -9.99999995e-4, 1e-15);
  EXPECT_NEAR(p[0].tensor.data[1], 1.0 + 1e-3 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  std::vector<nets::NamedTensor> p{{"fc1.w", ad::Tensor({1}, 0.0)}};
  p[0].tensor.grad = {std::nan("")};
  train::AdamState st;
  try {
    train::adam_step(p, st, {});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("fc1.w"), std::string::npos);
  }
}

TEST(TrainConfig, Validation) {
  train::TrainConfig c;
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Training, AgeStatisticsUseOnlyGivenRows) {
  data::SampleManifest m;
  for (double a : {20.0, 30.0, 100.0}) m.rows.push_back({"x", 0, 0, 0, a, {}});
  const std::vector<std::size_t> idx{0, 1};
  const auto [mean, sd] = train::age_statistics(m, idx);
  EXPECT_DOUBLE_EQ(mean, 25.0);
  EXPECT_DOUBLE_EQ(sd, 5.0);
}

TEST(Training, BatchesCoverTrainRowsOnlyOnceEachEpoch) {
  const auto d = small_data();
  const auto cfg = small_config(Family::kSvmt, d);
  const auto split = data::make_folds(d.manifest, 5, 1);
  train::TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 7;
  std::vector<std::vector<std::size_t>> batches;
  auto r = train::train_fold(cfg, tc, refs_for(cfg, d), d.manifest, split, 2,
                             [&](std::span<const std::size_t> b) {
                               batches.emplace_back(b.begin(), b.end());
                             });
  const auto train_idx = split.train_indices(2);
  const std::size_t per_epoch = (train_idx.size() + 6) / 7;
  ASSERT_EQ(batches.size(), 2 * per_epoch);
  for (int e = 0; e < 2; ++e) {
    std::multiset<std::size_t> seen;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      for (auto i : batches[e * per_epoch + b]) seen.insert(i);
    }
    EXPECT_EQ(seen, std::multiset<std::size_t>(train_idx.begin(), train_idx.end()));
  }
  EXPECT_NE(batches[0], batches[per_epoch]);  // reshuffled
  EXPECT_EQ(r.report.loss_history.size(), 2u);
  EXPECT_EQ(r.report.fold_index, 2);
}

TEST(Training, LossFallsOnNoiselessDataForEveryFamily) {
  const auto d = small_data(0.0, 40);
  std::vector<std::size_t> all(d.manifest.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  train::TrainConfig tc;
  tc.epochs = 50;
  for (auto [f, t] : {std::pair{Family::kSvst, std::optional{nets::Task::kSer}},
                      std::pair{Family::kSvmt, std::optional<nets::Task>{}},
                      std::pair{Family::kMvmtConcat, std::optional<nets::Task>{}},
                      std::pair{Family::kTango, std::optional<nets::Task>{}}}) {
    const auto cfg = small_config(f, d, t);
    const auto r = train::train_fold(cfg, tc, refs_for(cfg, d), d.manifest, all, all, 0);
    EXPECT_LT(r.report.loss_history.back(), r.report.loss_history.front())
        << nets::family_name(f);
  }
}

TEST(Training, ThreadCountDoesNotChangeResults) {
  const auto d = small_data();
  const auto split = data::make_folds(d.manifest, 5, 3);
  train::TrainConfig tc;
  tc.epochs = 2;
  const std::vector<data::EmbeddingMatrix> views{d.view_a, d.view_b};
  const std::vector<train::ExperimentEntry> entries{
      {"TANGO", small_config(Family::kTango, d), {0, 1}},
      {"SVMT-B", [&] {
         auto c = small_config(Family::kSvmt, d);
         c.view_dims = {d.view_b.dim};
         return c;
       }(), {1}}};
  const auto one = train::run_experiment(entries, tc, views, d.manifest, split, 1);
  const auto three = train::run_experiment(entries, tc, views, d.manifest, split, 3);
  EXPECT_EQ(train::to_json(one).dump(), train::to_json(three).dump());
  ASSERT_EQ(one.configs.size(), 2u);
  EXPECT_EQ(one.configs[1].views, (std::vector<std::string>{"synth_b"}));
  EXPECT_EQ(one.configs[0].folds.size(), 5u);
}

TEST(Training, EvaluateReportsOnlyModelTasks) {
  const auto d = small_data();
  auto cfg = small_config(Family::kSvst, d, nets::Task::kAe);
  nets::Model m(cfg);
  m.age_mean = 45.0;
  m.age_std = 15.0;
  std::vector<std::size_t> idx{0, 1, 2, 3};
  const auto met = train::evaluate(m, refs_for(cfg, d), d.manifest, idx);
  EXPECT_FALSE(met.asr_acc.has_value());
  ASSERT_TRUE(met.ae_rmse.has_value());
  EXPECT_GT(*met.ae_rmse, 0.0);
  EXPECT_THROW(train::evaluate(m, refs_for(cfg, d), d.manifest, {}), ContractError);
}

TEST(Report, RowFormattingAndJsonRoundTrip) {
  train::TaskMetrics m{90.1875, 75.85, 99.6, 5.678};
  EXPECT_EQ(train::format_row("TANGO", m), "TANGO | 90.19 | 75.85 | 99.60 | 5.68");
  train::TaskMetrics partial;
  partial.ser_acc = 50.0;
  EXPECT_EQ(train::format_row("SVST-SER", partial), "SVST-SER | - | 50.00 | - | -");

  train::ConfigReport c;
  c.config_id = "TANGO";
  c.family = "tango";
  c.views = {"a", "b"};
  for (int f = 0; f < 2; ++f) {
    train::FoldReport fr;
    fr.fold_index = f;
    fr.metrics = {80.0 + f, 70.0, 90.0, 6.0 + f};
    fr.final_train_loss = 0.5;
    fr.epochs_run = 3;
    c.folds.push_back(fr);
  }
  c.mean = train::mean_metrics(c.folds);
  EXPECT_DOUBLE_EQ(*c.mean.asr_acc, 80.5);
  EXPECT_DOUBLE_EQ(*c.mean.ae_rmse, 6.5);
  const auto j = train::to_json(train::ExperimentReport{{c}});
  EXPECT_EQ(j["config_id"], "TANGO");
  const auto back = train::experiment_from_json(j);
  EXPECT_EQ(train::to_json(back), j);
  const auto merged = train::to_json(train::ExperimentReport{{c, c}});
  EXPECT_EQ(merged["configs"].size(), 2u);
  EXPECT_EQ(train::experiment_from_json(merged).configs.size(), 2u);
  const auto table = train::render_table(train::ExperimentReport{{c}});
  EXPECT_EQ(table.substr(0, table.find('\n')), "Model | ASR | SER | GR | AE");
  EXPECT_THROW(train::mean_metrics({}), ContractError);
}
