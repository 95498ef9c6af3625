#include "tango/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tango/checkpoint.hpp"
#include "tango/datastore.hpp"
#include "tango/errors.hpp"
#include "tango/trainer.hpp"

namespace tango::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::size_t> parse_sizes(const std::string& text,
                                     const char* flag) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError(std::string(flag) + ": '" + item +
                       "' is not a positive integer");
    }
  }
  if (out.empty()) throw UsageError(std::string(flag) + ": empty list");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

// Refuses to clobber existing outputs unless --force is given.
void claim_outputs(const std::vector<fs::path>& paths, bool force) {
  if (force) return;
  for (const auto& p : paths) {
    if (fs::exists(p)) {
      throw UsageError(p.string() + " already exists (use --force to overwrite)");
    }
  }
}

struct ArchFlags {
  std::string conv_channels;
  std::size_t kernel_size = 3;
  std::string svst_fcn;
  std::string shared_fcn;
  std::size_t head_width = 30;

  void add_to(CLI::App* app) {
    app->add_option("--conv-channels", conv_channels, "Conv block channels, e.g. 32,64");
    app->add_option("--kernel-size", kernel_size, "Conv kernel size")->capture_default_str();
    app->add_option("--svst-fcn", svst_fcn, "SVST dense widths, e.g. 200,64,56");
    app->add_option("--shared-fcn", shared_fcn, "Shared dense widths, e.g. 200,64");
    app->add_option("--head-width", head_width, "Task head width")->capture_default_str();
  }

  void apply(nets::ModelConfig& cfg) const {
    if (!conv_channels.empty()) {
      const auto c = parse_sizes(conv_channels, "--conv-channels");
      if (c.size() != 2) throw UsageError("--conv-channels takes two values");
      cfg.conv_channels = {c[0], c[1]};
    }
    cfg.kernel_size = kernel_size;
    if (!svst_fcn.empty()) cfg.svst_fcn = parse_sizes(svst_fcn, "--svst-fcn");
    if (!shared_fcn.empty()) cfg.shared_fcn = parse_sizes(shared_fcn, "--shared-fcn");
    cfg.head_width = head_width;
  }
};

struct TrainFlags {
  std::string family;
  std::string task;
  std::string view_a, view_b, manifest, out;
  std::string transport = "both";
  std::string loss_weights;
  int epochs = 100;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 42;
  double ot_eps = 0.1;
  int ot_iters = 200;
  double ot_tol = 1e-6;
  double ot_loss_weight = 0.0;
  bool ot_unroll = false;
  bool dump_graph = false;
  bool force = false;
  std::string config_id;
  ArchFlags arch;
};

int cmd_train(const TrainFlags& f, std::ostream& out) {
  nets::ModelConfig cfg;
  cfg.family = nets::parse_family(f.family);
  const bool single = cfg.family == nets::Family::kSvst ||
                      cfg.family == nets::Family::kSvmt;
  if (cfg.family == nets::Family::kSvst && f.task.empty()) {
    throw UsageError("--family svst requires --task");
  }
  if (cfg.family != nets::Family::kSvst && !f.task.empty()) {
    throw UsageError("--task is only valid with --family svst");
  }
  if (!single && f.view_b.empty()) {
    throw UsageError("--family " + f.family + " requires --view-b");
  }
  if (single && !f.view_b.empty()) {
    throw UsageError("--family " + f.family + " takes a single view");
  }
  if (!f.task.empty()) cfg.task = nets::parse_task(f.task);
  cfg.transport_direction = ot::parse_direction(f.transport);
  cfg.sinkhorn.epsilon = f.ot_eps;
  cfg.sinkhorn.max_iterations = f.ot_iters;
  cfg.sinkhorn.tolerance = f.ot_tol;
  cfg.ot_unroll = f.ot_unroll;
  cfg.seed = f.seed;
  f.arch.apply(cfg);

  train::TrainConfig tc;
  tc.epochs = f.epochs;
  tc.batch_size = f.batch_size;
  tc.learning_rate = f.lr;
  tc.seed = f.seed;
  tc.ot_loss_weight = f.ot_loss_weight;
  if (!f.loss_weights.empty()) tc.weights = obj::LossWeights::parse(f.loss_weights);
  tc.validate();
  cfg.sinkhorn.validate();

  const auto manifest = data::read_manifest(f.manifest);
  std::vector<data::EmbeddingMatrix> views{data::read_embeddings(f.view_a)};
  if (!single) views.push_back(data::read_embeddings(f.view_b));
  cfg.view_dims.clear();
  for (const auto& v : views) cfg.view_dims.push_back(v.dim);
  cfg.n_speakers = manifest.speaker_count();
  cfg.n_emotions = manifest.emotion_count();
  cfg.validate();

  std::string config_id = f.config_id;
  if (config_id.empty()) {
    config_id = std::string(nets::family_label(cfg.family));
    if (cfg.task) config_id += "-" + std::string(nets::task_name(*cfg.task));
  }

  json echo;
  echo["command"] = "train";
  echo["config_id"] = config_id;
  echo["model"] = nets::config_to_json(cfg);
  echo["train"] = {{"epochs", tc.epochs},
                   {"batch_size", tc.batch_size},
                   {"learning_rate", tc.learning_rate},
                   {"adam_beta1", tc.adam_beta1},
                   {"adam_beta2", tc.adam_beta2},
                   {"adam_eps", tc.adam_eps},
                   {"seed", tc.seed},
                   {"shuffle", tc.shuffle},
                   {"loss_weights", {tc.weights.asr, tc.weights.ser, tc.weights.gr, tc.weights.ae}},
                   {"ot_loss_weight", tc.ot_loss_weight}};
  echo["inputs"] = {{"view_a", f.view_a}, {"view_b", f.view_b}, {"manifest", f.manifest}};
  echo["out"] = f.out;
  out << echo.dump() << '\n';

  const fs::path dir(f.out);
  std::vector<fs::path> outputs{dir / "report.json", dir / "report.txt",
                                dir / "folds.csv"};
  for (int k = 0; k < 5; ++k) outputs.push_back(dir / ("fold_" + std::to_string(k) + ".tgck"));
  if (f.dump_graph) outputs.push_back(dir / "graph.txt");
  claim_outputs(outputs, f.force);
  fs::create_directories(dir);

  const auto split = manifest.has_folds() ? data::folds_from_manifest(manifest)
                                          : data::make_folds(manifest, 5, f.seed);
  for (const auto& w : split.warnings) std::cerr << "warning: " << w << '\n';
  auto with_folds = manifest;
  for (std::size_t i = 0; i < with_folds.size(); ++i) {
    with_folds.rows[i].fold = split.assignment[i];
  }
  data::write_manifest(with_folds, dir / "folds.csv");

  if (f.dump_graph) {
    nets::Model probe(cfg);
    std::vector<ad::Tensor> inputs;
    const std::size_t first = 0;
    for (const auto& v : views) inputs.push_back(v.gather(std::span(&first, 1)));
    ad::Graph g;
    probe.forward(g, inputs);
    write_text(dir / "graph.txt", g.dump());
  }

  std::vector<std::size_t> view_idx(views.size());
  for (std::size_t i = 0; i < view_idx.size(); ++i) view_idx[i] = i;
  const std::vector<train::ExperimentEntry> entries{{config_id, cfg, view_idx}};
  const auto report = train::run_experiment(
      entries, tc, views, manifest, split, train::thread_budget(split.k),
      [&](const train::ExperimentEntry&, const train::FoldResult& r) {
        nets::save_checkpoint(
            r.model, dir / ("fold_" + std::to_string(r.report.fold_index) + ".tgck"));
      });
  write_text(dir / "report.json", train::to_json(report).dump(2) + "\n");
  const auto table = train::render_table(report);
  write_text(dir / "report.txt", table);
  out << table;
  return kOk;
}

struct EvalFlags {
  std::string checkpoint, view_a, view_b, manifest, out;
  int fold = -1;
  bool force = false;
};

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  json echo{{"command", "eval"},
            {"checkpoint", f.checkpoint},
            {"view_a", f.view_a},
            {"view_b", f.view_b},
            {"manifest", f.manifest},
            {"fold", f.fold < 0 ? json(nullptr) : json(f.fold)},
            {"out", f.out}};
  out << echo.dump() << '\n';
  if (!f.out.empty()) claim_outputs({f.out}, f.force);

  if (!fs::exists(f.checkpoint)) {
    throw DataError("checkpoint not found: " + f.checkpoint);
  }
  auto model = nets::load_checkpoint(f.checkpoint);
  const auto manifest = data::read_manifest(f.manifest);
  std::vector<data::EmbeddingMatrix> views{data::read_embeddings(f.view_a)};
  if (!f.view_b.empty()) views.push_back(data::read_embeddings(f.view_b));
  if (views.size() != model.config().view_count()) {
    throw UsageError("checkpoint expects " +
                     std::to_string(model.config().view_count()) + " view(s)");
  }
  train::ViewRefs refs;
  for (const auto& v : views) {
    if (v.count() != manifest.size()) {
      throw DataError("view '" + v.view_name + "' and manifest row counts differ");
    }
    refs.push_back(&v);
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (f.fold < 0 || manifest.rows[i].fold == f.fold) idx.push_back(i);
  }
  if (idx.empty()) throw DataError("no manifest rows selected for evaluation");
  const auto metrics = train::evaluate(model, refs, manifest, idx);
  json result = train::metrics_to_json(metrics);
  result["samples"] = idx.size();
  out << result.dump() << '\n';
  if (!f.out.empty()) write_text(f.out, result.dump(2) + "\n");
  return kOk;
}

struct SynthFlags {
  std::size_t samples = 400, speakers = 4, emotions = 3;
  std::string dims = "32,32";
  double noise = 0.5;
  std::uint64_t seed = 42;
  std::string out;
  bool force = false;
};

int cmd_synth(const SynthFlags& f, std::ostream& out) {
  data::SynthSpec spec;
  spec.n_samples = f.samples;
  spec.n_speakers = f.speakers;
  spec.n_emotions = f.emotions;
  const auto dims = parse_sizes(f.dims, "--dims");
  if (dims.size() != 2) throw UsageError("--dims takes two values dA,dB");
  spec.dim_a = dims[0];
  spec.dim_b = dims[1];
  spec.noise = f.noise;
  spec.seed = f.seed;
  json echo{{"command", "synth"},
            {"samples", spec.n_samples},
            {"speakers", spec.n_speakers},
            {"emotions", spec.n_emotions},
            {"dims", {spec.dim_a, spec.dim_b}},
            {"noise", spec.noise},
            {"seed", spec.seed},
            {"out", f.out}};
  out << echo.dump() << '\n';
  spec.validate();

  const fs::path dir(f.out);
  const std::vector<fs::path> outputs{dir / "view_a.tgeb", dir / "view_b.tgeb",
                                      dir / "manifest.csv"};
  claim_outputs(outputs, f.force);
  fs::create_directories(dir);
  const auto d = data::synth_dataset(spec);
  data::write_embeddings(d.view_a, outputs[0]);
  data::write_embeddings(d.view_b, outputs[1]);
  data::write_manifest(d.manifest, outputs[2]);
  for (const auto& p : outputs) out << p.string() << '\n';
  return kOk;
}

struct SinkhornFlags {
  std::string cost, out;
  double eps = 0.1;
  int iters = 200;
  double tol = 1e-6;
  bool force = false;
};

ot::CostMatrix read_cost_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open cost file " + path);
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream cells(line);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(cells, cell, ',')) {
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
        if (used != cell.size()) throw std::invalid_argument(cell);
        values.push_back(v);
      } catch (const std::exception&) {
        throw FormatError("cost CSV line " + std::to_string(line_no) +
                          ": '" + cell + "' is not a number");
      }
      ++n;
    }
    if (!line.empty() && line.back() == ',') {
      throw FormatError("cost CSV line " + std::to_string(line_no) + ": empty cell");
    }
    if (rows == 0) cols = n;
    if (n != cols) {
      throw FormatError("cost CSV line " + std::to_string(line_no) + ": expected " +
                        std::to_string(cols) + " values, got " + std::to_string(n));
    }
    ++rows;
  }
  if (rows == 0) throw FormatError("cost CSV is empty");
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0) {
      throw FormatError("cost CSV values must be finite and >= 0");
    }
  }
  return ot::cost_matrix_from_values(rows, cols, std::move(values));
}

int cmd_sinkhorn(const SinkhornFlags& f, std::ostream& out) {
  ot::SinkhornConfig cfg;
  cfg.epsilon = f.eps;
  cfg.max_iterations = f.iters;
  cfg.tolerance = f.tol;
  json echo{{"command", "sinkhorn"},
            {"cost", f.cost},
            {"epsilon", cfg.epsilon},
            {"max_iterations", cfg.max_iterations},
            {"tolerance", cfg.tolerance},
            {"out", f.out}};
  out << echo.dump() << '\n';
  cfg.validate();
  if (!f.out.empty()) claim_outputs({f.out}, f.force);
  const auto cost = read_cost_csv(f.cost);
  const auto plan = ot::sinkhorn(cost, cfg);
  std::ostringstream csv;
  csv.precision(17);
  for (std::size_t i = 0; i < plan.rows; ++i) {
    for (std::size_t j = 0; j < plan.cols; ++j) {
      if (j) csv << ',';
      csv << plan.at(i, j);
    }
    csv << '\n';
  }
  out << csv.str();
  json diag{{"rows", plan.rows},
            {"cols", plan.cols},
            {"residual", plan.residual},
            {"iterations", plan.iterations_used},
            {"converged", plan.converged},
            {"ot_cost", ot::ot_distance(plan, cost)}};
  out << diag.dump() << '\n';
  if (!f.out.empty()) write_text(f.out, csv.str());
  return kOk;
}

struct ReportFlags {
  std::vector<std::string> inputs;
  std::string out;
  bool force = false;
};

int cmd_report(const ReportFlags& f, std::ostream& out) {
  json echo{{"command", "report"}, {"inputs", f.inputs}, {"out", f.out}};
  out << echo.dump() << '\n';
  train::ExperimentReport merged;
  for (const auto& path : f.inputs) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open report " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw FormatError(path + ": " + e.what());
    }
    for (auto& c : train::experiment_from_json(j).configs) {
      merged.configs.push_back(std::move(c));
    }
  }
  const auto table = train::render_table(merged);
  if (!f.out.empty()) {
    const fs::path dir(f.out);
    claim_outputs({dir / "report.json", dir / "report.txt"}, f.force);
    fs::create_directories(dir);
    json all = json::array();
    for (const auto& c : merged.configs) all.push_back(train::to_json(c));
    write_text(dir / "report.json", json{{"configs", all}}.dump(2) + "\n");
    write_text(dir / "report.txt", table);
  }
  out << table;
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Multi-view multi-task speech embedding models with gated optimal transport fusion", "tango"};
  app.require_subcommand(1);

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Run a 5-fold experiment");
  train_cmd->add_option("--family", tf.family, "svst|svmt|mvmt|tango")->required();
  train_cmd->add_option("--task", tf.task, "asr|ser|gr|ae (svst only)");
  train_cmd->add_option("--view-a", tf.view_a, "TGEB file for view A")->required();
  train_cmd->add_option("--view-b", tf.view_b, "TGEB file for view B");
  train_cmd->add_option("--manifest", tf.manifest, "Manifest CSV")->required();
  train_cmd->add_option("--out", tf.out, "Output directory")->required();
  train_cmd->add_option("--transport", tf.transport, "both|x1-to-x2|x2-to-x1")->capture_default_str();
  train_cmd->add_option("--loss-weights", tf.loss_weights, "ASR,SER,GR,AE weights");
  train_cmd->add_option("--epochs", tf.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", tf.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", tf.lr)->capture_default_str();
  train_cmd->add_option("--seed", tf.seed)->capture_default_str();
  train_cmd->add_option("--ot-eps", tf.ot_eps)->capture_default_str();
  train_cmd->add_option("--ot-iters", tf.ot_iters)->capture_default_str();
  train_cmd->add_option("--ot-tol", tf.ot_tol)->capture_default_str();
  train_cmd->add_option("--ot-loss-weight", tf.ot_loss_weight)->capture_default_str();
  train_cmd->add_flag("--ot-unroll", tf.ot_unroll, "Differentiate through Sinkhorn");
  train_cmd->add_flag("--dump-graph", tf.dump_graph, "Write the forward graph to graph.txt");
  train_cmd->add_flag("--force", tf.force, "Overwrite existing outputs");
  train_cmd->add_option("--config-id", tf.config_id, "Row label in reports");
  tf.arch.add_to(train_cmd);

  EvalFlags ef;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval_cmd->add_option("--checkpoint", ef.checkpoint)->required();
  eval_cmd->add_option("--view-a", ef.view_a)->required();
  eval_cmd->add_option("--view-b", ef.view_b);
  eval_cmd->add_option("--manifest", ef.manifest)->required();
  eval_cmd->add_option("--fold", ef.fold, "Only rows whose fold column matches");
  eval_cmd->add_option("--out", ef.out, "Write metrics JSON here");
  eval_cmd->add_flag("--force", ef.force);

  SynthFlags sf;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic two-view dataset");
  synth_cmd->add_option("--samples", sf.samples)->capture_default_str();
  synth_cmd->add_option("--speakers", sf.speakers)->capture_default_str();
  synth_cmd->add_option("--emotions", sf.emotions)->capture_default_str();
  synth_cmd->add_option("--dims", sf.dims, "dA,dB")->capture_default_str();
  synth_cmd->add_option("--noise", sf.noise)->capture_default_str();
  synth_cmd->add_option("--seed", sf.seed)->capture_default_str();
  synth_cmd->add_option("--out", sf.out, "Output directory")->required();
  synth_cmd->add_flag("--force", sf.force);

  SinkhornFlags kf;
  auto* sk_cmd = app.add_subcommand("sinkhorn", "Solve entropic OT for a cost CSV");
  sk_cmd->add_option("--cost", kf.cost, "Comma-separated cost grid")->required();
  sk_cmd->add_option("--eps", kf.eps)->capture_default_str();
  sk_cmd->add_option("--iters", kf.iters)->capture_default_str();
  sk_cmd->add_option("--tol", kf.tol)->capture_default_str();
  sk_cmd->add_option("--out", kf.out, "Write the plan CSV here");
  sk_cmd->add_flag("--force", kf.force);

  ReportFlags rf;
  auto* report_cmd = app.add_subcommand("report", "Merge report.json files into one table");
  report_cmd->add_option("--inputs", rf.inputs)->required()->expected(1, -1);
  report_cmd->add_option("--out", rf.out, "Directory for merged report");
  report_cmd->add_flag("--force", rf.force);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(tf, out);
    if (*eval_cmd) return cmd_eval(ef, out);
    if (*synth_cmd) return cmd_synth(sf, out);
    if (*sk_cmd) return cmd_sinkhorn(kf, out);
    if (*report_cmd) return cmd_report(rf, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "file error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace tango::cli
