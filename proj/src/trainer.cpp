#include "tango/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include "tango/errors.hpp"
#include "tango/random.hpp"

namespace tango::train {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("Adam betas must lie in [0, 1) and eps must be > 0");
  }
  if (!(ot_loss_weight >= 0.0)) throw ConfigError("ot loss weight must be >= 0");
  weights.validate();
}

void adam_step(std::vector<nets::NamedTensor>& params, AdamState& state,
               const TrainConfig& cfg) {
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.tensor.size(), 0.0);
      state.second.emplace_back(p.tensor.size(), 0.0);
    }
  }
  if (state.first.size() != params.size()) {
    throw ContractError("adam: optimizer state does not match parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& t = params[k].tensor;
    if (t.grad.size() != t.size() || state.first[k].size() != t.size()) {
      throw ContractError("adam: shape mismatch for '" + params[k].name + "'");
    }
    for (double gv : t.grad) {
      if (!std::isfinite(gv)) {
        throw NumericError("adam: non-finite gradient in parameter '" +
                           params[k].name + "'");
      }
    }
  }
  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& t = params[k].tensor;
    auto& m = state.first[k];
    auto& v = state.second[k];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double gv = t.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gv;
      v[i] = b2 * v[i] + (1.0 - b2) * gv * gv;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      t.data[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

std::pair<double, double> age_statistics(const data::SampleManifest& manifest,
                                         std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("age statistics of empty set");
  double mean = 0.0;
  for (auto i : indices) mean += manifest.rows[i].age;
  mean /= static_cast<double>(indices.size());
  double var = 0.0;
  for (auto i : indices) {
    const double d = manifest.rows[i].age - mean;
    var += d * d;
  }
  var /= static_cast<double>(indices.size());
  const double sd = std::sqrt(var);
  return {mean, sd > 1e-12 ? sd : 1.0};
}

namespace {

std::vector<ad::Tensor> gather_views(const ViewRefs& views,
                                     std::span<const std::size_t> idx) {
  std::vector<ad::Tensor> out;
  out.reserve(views.size());
  for (const auto* v : views) out.push_back(v->gather(idx));
  return out;
}

obj::BatchTargets gather_targets(const data::SampleManifest& manifest,
                                 std::span<const std::size_t> idx,
                                 double age_mean, double age_std) {
  obj::BatchTargets t;
  for (auto i : idx) {
    const auto& r = manifest.rows[i];
    t.speaker.push_back(r.speaker);
    t.emotion.push_back(r.emotion);
    t.gender.push_back(r.gender);
    t.age.push_back((r.age - age_mean) / age_std);
  }
  return t;
}

void check_alignment(const nets::ModelConfig& cfg, const ViewRefs& views,
                     const data::SampleManifest& manifest) {
  if (views.size() != cfg.view_count()) {
    throw ConfigError("model expects " + std::to_string(cfg.view_count()) +
                      " view(s), got " + std::to_string(views.size()));
  }
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (views[v]->count() != manifest.size()) {
      throw DataError("view '" + views[v]->view_name + "' has " +
                      std::to_string(views[v]->count()) + " rows, manifest has " +
                      std::to_string(manifest.size()));
    }
    if (views[v]->dim != cfg.view_dims[v]) {
      throw ConfigError("view '" + views[v]->view_name + "' has dim " +
                        std::to_string(views[v]->dim) + ", model expects " +
                        std::to_string(cfg.view_dims[v]));
    }
  }
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& r = manifest.rows[i];
    if (r.speaker >= cfg.n_speakers || r.emotion >= cfg.n_emotions) {
      throw DataError("manifest row " + std::to_string(i) + " (" +
                      r.utterance_id + ") has a label outside the model's classes");
    }
  }
}

}  // namespace

TaskMetrics evaluate(nets::Model& model, const ViewRefs& views,
                     const data::SampleManifest& manifest,
                     std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("evaluate: no samples");
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> asr_pred, asr_true, ser_pred, ser_true, gr_pred,
      gr_true;
  std::vector<double> age_pred, age_true;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const auto idx = indices.subspan(start, std::min(kChunk, indices.size() - start));
    const auto outs = model.predict(gather_views(views, idx));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& row = manifest.rows[idx[k]];
      const auto& o = outs[k];
      if (o.asr) {
        asr_pred.push_back(obj::argmax(*o.asr));
        asr_true.push_back(row.speaker);
      }
      if (o.ser) {
        ser_pred.push_back(obj::argmax(*o.ser));
        ser_true.push_back(row.emotion);
      }
      if (o.gr) {
        gr_pred.push_back(*o.gr >= 0.5 ? 1 : 0);
        gr_true.push_back(static_cast<std::size_t>(row.gender));
      }
      if (o.ae) {
        age_pred.push_back(*o.ae * model.age_std + model.age_mean);
        age_true.push_back(row.age);
      }
    }
  }
  TaskMetrics m;
  if (!asr_pred.empty()) m.asr_acc = obj::accuracy(asr_pred, asr_true);
  if (!ser_pred.empty()) m.ser_acc = obj::accuracy(ser_pred, ser_true);
  if (!gr_pred.empty()) m.gr_acc = obj::accuracy(gr_pred, gr_true);
  if (!age_pred.empty()) m.ae_rmse = obj::rmse(age_pred, age_true);
  return m;
}

FoldResult train_fold(const nets::ModelConfig& model_cfg,
                      const TrainConfig& train_cfg, const ViewRefs& views,
                      const data::SampleManifest& manifest,
                      std::span<const std::size_t> train_indices,
                      std::span<const std::size_t> test_indices,
                      int fold_index, const BatchObserver& observer) {
  train_cfg.validate();
  if (train_indices.empty() || test_indices.empty()) {
    throw ConfigError("fold " + std::to_string(fold_index) +
                      " has an empty train or test partition");
  }
  check_alignment(model_cfg, views, manifest);

  FoldResult result{nets::Model(model_cfg), {}};
  auto& model = result.model;
  std::tie(model.age_mean, model.age_std) =
      age_statistics(manifest, train_indices);

  AdamState adam;
  std::vector<std::size_t> order(train_indices.begin(), train_indices.end());
  auto& report = result.report;
  report.fold_index = fold_index;
  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    if (train_cfg.shuffle) {
      Rng rng(train_cfg.seed, "shuffle/fold" + std::to_string(fold_index) +
                                  "/epoch" + std::to_string(epoch));
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
      }
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += train_cfg.batch_size) {
      const std::span<const std::size_t> idx(
          order.data() + start,
          std::min(train_cfg.batch_size, order.size() - start));
      if (observer) observer(idx);
      ad::Graph g;
      const auto outputs = model.forward(g, gather_views(views, idx));
      const auto loss = obj::multitask_loss(
          g, outputs, gather_targets(manifest, idx, model.age_mean, model.age_std),
          train_cfg.weights, train_cfg.ot_loss_weight);
      if (!std::isfinite(loss.values.total)) {
        throw NumericError("non-finite training loss in fold " +
                           std::to_string(fold_index) + ", epoch " +
                           std::to_string(epoch));
      }
      model.zero_grad();
      g.backward(loss.total);
      adam_step(model.parameters(), adam, train_cfg);
      epoch_loss += loss.values.total * static_cast<double>(idx.size());
    }
    report.loss_history.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  report.epochs_run = train_cfg.epochs;
  report.final_train_loss = report.loss_history.back();
  report.metrics = evaluate(model, views, manifest, test_indices);
  return result;
}

FoldResult train_fold(const nets::ModelConfig& model_cfg,
                      const TrainConfig& train_cfg, const ViewRefs& views,
                      const data::SampleManifest& manifest,
                      const data::FoldSplit& split, int fold,
                      const BatchObserver& observer) {
  if (fold < 0 || fold >= split.k) {
    throw ConfigError("fold " + std::to_string(fold) + " outside [0, " +
                      std::to_string(split.k) + ")");
  }
  const auto train_idx = split.train_indices(fold);
  const auto test_idx = split.test_indices(fold);
  return train_fold(model_cfg, train_cfg, views, manifest, train_idx, test_idx,
                    fold, observer);
}

TaskMetrics mean_metrics(std::span<const FoldReport> folds) {
  if (folds.empty()) throw ContractError("cannot average zero folds");
  TaskMetrics out;
  auto avg = [&](auto field) -> std::optional<double> {
    double s = 0.0;
    for (const auto& f : folds) {
      const auto& v = f.metrics.*field;
      if (!v) return std::nullopt;
      s += *v;
    }
    return s / static_cast<double>(folds.size());
  };
  out.asr_acc = avg(&TaskMetrics::asr_acc);
  out.ser_acc = avg(&TaskMetrics::ser_acc);
  out.gr_acc = avg(&TaskMetrics::gr_acc);
  out.ae_rmse = avg(&TaskMetrics::ae_rmse);
  return out;
}

std::size_t thread_budget(int folds) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("TANGO_THREADS")) {
    try {
      n = std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw ConfigError(std::string("TANGO_THREADS is not an integer: ") + env);
    }
  }
  return std::min<std::size_t>(n, static_cast<std::size_t>(std::max(folds, 1)));
}

ExperimentReport run_experiment(const std::vector<ExperimentEntry>& entries,
                                const TrainConfig& train_cfg,
                                const std::vector<data::EmbeddingMatrix>& views,
                                const data::SampleManifest& manifest,
                                const data::FoldSplit& split,
                                std::size_t threads, const FoldSink& sink) {
  ExperimentReport report;
  for (const auto& entry : entries) {
    ViewRefs refs;
    ConfigReport cr;
    cr.config_id = entry.config_id;
    cr.family = nets::family_name(entry.model.family);
    for (auto v : entry.view_indices) {
      if (v >= views.size()) throw ConfigError("view index out of range");
      refs.push_back(&views[v]);
      cr.views.push_back(views[v].view_name);
    }
    entry.model.validate();
    check_alignment(entry.model, refs, manifest);

    std::vector<std::optional<FoldResult>> results(static_cast<std::size_t>(split.k));
    std::vector<std::exception_ptr> errors(results.size());
    std::mutex sink_mutex;
    auto work = [&](std::size_t fold) {
      try {
        results[fold] = train_fold(entry.model, train_cfg, refs, manifest, split,
                                   static_cast<int>(fold));
        if (sink) {
          std::lock_guard lock(sink_mutex);
          sink(entry, *results[fold]);
        }
      } catch (...) {
        errors[fold] = std::current_exception();
      }
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, results.size()));
    if (workers == 1) {
      for (std::size_t f = 0; f < results.size(); ++f) work(f);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t f = w; f < results.size(); f += workers) work(f);
        });
      }
      for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    for (auto& r : results) cr.folds.push_back(std::move(r->report));
    cr.mean = mean_metrics(cr.folds);
    report.configs.push_back(std::move(cr));
  }
  return report;
}

json metrics_to_json(const TaskMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"asr_acc", opt(m.asr_acc)},
          {"ser_acc", opt(m.ser_acc)},
          {"gr_acc", opt(m.gr_acc)},
          {"ae_rmse", opt(m.ae_rmse)}};
}

TaskMetrics metrics_from_json(const json& j) {
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  return {opt("asr_acc"), opt("ser_acc"), opt("gr_acc"), opt("ae_rmse")};
}

json to_json(const ConfigReport& r) {
  json folds = json::array();
  for (const auto& f : r.folds) {
    json jf = metrics_to_json(f.metrics);
    jf["fold"] = f.fold_index;
    jf["final_train_loss"] = f.final_train_loss;
    jf["epochs"] = f.epochs_run;
    folds.push_back(std::move(jf));
  }
  return {{"config_id", r.config_id},
          {"family", r.family},
          {"views", r.views},
          {"per_fold", std::move(folds)},
          {"mean", metrics_to_json(r.mean)}};
}

ConfigReport config_report_from_json(const json& j) {
  try {
    ConfigReport r;
    r.config_id = j.at("config_id").get<std::string>();
    r.family = j.at("family").get<std::string>();
    r.views = j.at("views").get<std::vector<std::string>>();
    for (const auto& jf : j.at("per_fold")) {
      FoldReport f;
      f.fold_index = jf.at("fold").get<int>();
      f.metrics = metrics_from_json(jf);
      f.final_train_loss = jf.value("final_train_loss", 0.0);
      f.epochs_run = jf.value("epochs", 0);
      r.folds.push_back(std::move(f));
    }
    r.mean = metrics_from_json(j.at("mean"));
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("report JSON: ") + e.what());
  }
}

json to_json(const ExperimentReport& r) {
  if (r.configs.size() == 1) return to_json(r.configs.front());
  json arr = json::array();
  for (const auto& c : r.configs) arr.push_back(to_json(c));
  return {{"configs", std::move(arr)}};
}

ExperimentReport experiment_from_json(const json& j) {
  ExperimentReport r;
  if (j.is_object() && j.contains("configs")) {
    for (const auto& c : j.at("configs")) r.configs.push_back(config_report_from_json(c));
  } else {
    r.configs.push_back(config_report_from_json(j));
  }
  return r;
}

std::string format_row(const std::string& label, const TaskMetrics& m) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v);
    return std::string(buf);
  };
  return label + " | " + cell(m.asr_acc) + " | " + cell(m.ser_acc) + " | " +
         cell(m.gr_acc) + " | " + cell(m.ae_rmse);
}

std::string render_table(const ExperimentReport& r) {
  std::string out = "Model | ASR | SER | GR | AE\n";
  for (const auto& c : r.configs) {
    out += format_row(c.config_id, c.mean);
    out += '\n';
  }
  return out;
}

}  // namespace tango::train
