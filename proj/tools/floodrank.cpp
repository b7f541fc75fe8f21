// floodrank command-line front end. Each subcommand parses flags, calls the
// library and writes its outputs under a run directory.

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "floodrank/annotation_server.hpp"
#include "floodrank/annotation_store.hpp"
#include "floodrank/dataset.hpp"
#include "floodrank/errors.hpp"
#include "floodrank/evaluation.hpp"
#include "floodrank/experiment.hpp"
#include "floodrank/model.hpp"
#include "floodrank/synthetic.hpp"
#include "floodrank/trainer.hpp"

namespace fs = std::filesystem;
using namespace floodrank;

namespace {

// Flags that mirror TrainConfig fields. Unset flags leave the preset/config value.
struct TrainFlags {
  std::string preset = "desk";
  std::string config_path;
  std::optional<int> epochs, batch_size, iterations_per_epoch, input_size;
  std::optional<double> lr, lambda, margin;
  std::optional<std::uint64_t> pair_budget, seed;
  std::optional<std::string> regime, budget_mode, step_mode, backbone, backbone_weights;
  std::vector<int> lr_decay_epochs;
  bool transitive_reduction = false, freeze_backbone = false;

  void add(CLI::App* app, bool with_regime = true) {
    app->add_option("--preset", preset, "full or desk")->check(CLI::IsMember({"full", "desk"}));
    app->add_option("--config", config_path, "JSON file with TrainConfig fields");
    app->add_option("--epochs", epochs);
    app->add_option("--lr", lr);
    app->add_option("--lr-decay-epochs", lr_decay_epochs)->delimiter(',');
    app->add_option("--batch-size", batch_size);
    app->add_option("--lambda", lambda);
    if (with_regime) app->add_option("--regime", regime, "regression, regression_pp or reg_rank");
    app->add_option("--pair-budget", pair_budget);
    app->add_option("--budget-mode", budget_mode, "cap or extend");
    app->add_option("--step-mode", step_mode, "combined or alternating");
    app->add_option("--iterations-per-epoch", iterations_per_epoch);
    app->add_option("--margin", margin);
    app->add_flag("--transitive-reduction", transitive_reduction);
    app->add_option("--seed", seed);
    app->add_option("--backbone", backbone, "tiny_conv, pretrained_conv or mlp_on_features");
    app->add_option("--input-size", input_size, "square input side in pixels");
    app->add_option("--backbone-weights", backbone_weights);
    app->add_flag("--freeze-backbone", freeze_backbone);
  }

  TrainConfig resolve() const {
    TrainConfig c = floodrank::preset(preset);
    if (!config_path.empty()) {
      std::ifstream is(config_path);
      if (!is) throw ConfigError("cannot open config " + config_path);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(is);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(config_path + ": " + e.what());
      }
      c = train_config_from_json(j, c);
    }
    if (epochs) c.epochs = *epochs;
    if (lr) c.lr = *lr;
    if (!lr_decay_epochs.empty()) {
      c.lr_decay_epochs = lr_decay_epochs;
    } else if (epochs) {
      // A shortened run keeps only the decay points that still fall inside it.
      std::erase_if(c.lr_decay_epochs, [&](int d) { return d >= c.epochs; });
    }
    if (batch_size) c.batch_size = *batch_size;
    if (lambda) c.lambda = *lambda;
    if (regime) c.regime = parse_regime(*regime);
    if (pair_budget) c.pair_budget = *pair_budget;
    if (budget_mode) c.budget_mode = parse_budget_mode(*budget_mode);
    if (step_mode) c.step_mode = parse_step_mode(*step_mode);
    if (iterations_per_epoch) c.iterations_per_epoch = *iterations_per_epoch;
    if (margin) c.margin = *margin;
    if (transitive_reduction) c.transitive_reduction = true;
    if (seed) c.seed = *seed;
    if (backbone) c.model.backbone = parse_backbone(*backbone);
    if (input_size) c.model.input_height = c.model.input_width = *input_size;
    if (backbone_weights) c.model.backbone_weights = *backbone_weights;
    if (freeze_backbone) c.model.freeze_backbone = true;
    c.validate();
    return c;
  }
};

// Where experiments get their data: manifests (k-fold) or synthetic draws.
struct DataFlags {
  std::string strong, weak, pairs;
  bool synthetic = false;
  int folds = 6;
  SyntheticSetup setup;

  void add(CLI::App* app) {
    app->add_option("--strong", strong, "strong-label manifest (JSONL)");
    app->add_option("--weak", weak, "weak-label manifest (JSONL)");
    app->add_option("--pairs", pairs, "pair-label file replacing weak levels");
    app->add_option("--folds", folds, "cross-validation folds");
    app->add_flag("--synthetic", synthetic, "use freshly generated synthetic data, one draw per seed");
    app->add_option("--seeds", setup.seeds, "synthetic draw seeds")->delimiter(',');
    app->add_option("--strong-count", setup.strong);
    app->add_option("--weak-count", setup.weak);
    app->add_option("--val-count", setup.val);
    app->add_option("--test-count", setup.test);
  }

  Experiment<float> build(const TrainConfig& cfg) {
    if (synthetic) {
      setup.image_size = cfg.model.input_height;
      return synthetic_experiment<float>(setup, cfg.model);
    }
    if (strong.empty()) throw ConfigError("either --strong or --synthetic is required");
    std::optional<DatasetManifest> w;
    if (!weak.empty()) w = load_manifest(weak, LabelKind::weak);
    std::optional<std::vector<PairLabel>> labels;
    if (!pairs.empty()) labels = read_pair_labels(fs::path(pairs));
    CrossValidationOptions o;
    o.k = folds;
    o.seed = cfg.seed;
    return cross_validation_experiment<float>(load_manifest(strong), w, cfg.model, o,
                                              labels ? &*labels : nullptr);
  }
};

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& s) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << s;
}

annotation::AnnotationServer* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Water-level regression with pairwise ranking supervision"};
  app.require_subcommand(1);
  std::string run_root;
  app.add_option("--run-root", run_root, "run directory root (default: $FLOODRANK_RUN_ROOT or ./runs)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render a synthetic dataset");
  synthetic::GeneratorConfig gcfg;
  std::string gen_out;
  gen->add_option("--count", gcfg.count)->required();
  gen->add_option("--seed", gcfg.seed);
  gen->add_option("--image-size", gcfg.image_size);
  gen->add_option("--prefix", gcfg.id_prefix);
  gen->add_option("--out", gen_out, "output directory (default: new run directory)");

  // train
  auto* train = app.add_subcommand("train", "train one model");
  TrainFlags tflags;
  tflags.add(train);
  std::string t_strong, t_weak, t_val, t_pairs;
  train->add_option("--strong", t_strong)->required();
  train->add_option("--weak", t_weak);
  train->add_option("--val", t_val, "validation manifest (default: 20% held out of --strong)");
  train->add_option("--pairs", t_pairs, "pair-label file replacing weak levels");

  // sweep-lambda
  auto* sweep = app.add_subcommand("sweep-lambda", "train reg_rank for each lambda and pick the best");
  TrainFlags sflags;
  sflags.add(sweep, false);
  DataFlags sdata;
  sdata.add(sweep);
  std::vector<double> grid{0, 1, 5, 15, 30};
  sweep->add_option("--grid", grid)->delimiter(',');

  // ablate-pairs
  auto* ablate = app.add_subcommand("ablate-pairs", "evaluate reg_rank under ranking-pair budgets");
  TrainFlags aflags;
  aflags.add(ablate, false);
  DataFlags adata;
  adata.add(ablate);
  std::vector<std::uint64_t> budgets{1000, 10000, 100000};
  ablate->add_option("--budgets", budgets)->delimiter(',');

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint, or cross-validate a regime");
  TrainFlags eflags;
  eflags.add(eval);
  DataFlags edata;
  edata.add(eval);
  std::string e_ckpt, e_manifest;
  eval->add_option("--checkpoint", e_ckpt);
  eval->add_option("--manifest", e_manifest, "labelled test manifest for --checkpoint");

  // predict
  auto* pred = app.add_subcommand("predict", "predict depth for images");
  std::string p_ckpt, p_manifest;
  std::vector<std::string> p_images;
  pred->add_option("--checkpoint", p_ckpt)->required();
  pred->add_option("--manifest", p_manifest, "predict every image of a manifest");
  pred->add_option("images", p_images, "PNG files");

  // serve
  auto* serve = app.add_subcommand("serve", "run the pairwise annotation service");
  std::string s_store, s_manifest, s_host = "127.0.0.1";
  int s_port = 8080, s_votes = 3;
  std::size_t s_tasks = 0;
  std::uint64_t s_seed = 0;
  bool s_balanced = false;
  serve->add_option("--store", s_store, "store directory with tasks.jsonl")->required();
  serve->add_option("--manifest", s_manifest, "manifest of the images being compared")->required();
  serve->add_option("--host", s_host);
  serve->add_option("--port", s_port);
  serve->add_option("--votes-per-task", s_votes);
  serve->add_option("--create-tasks", s_tasks, "sample this many random pairs if tasks.jsonl is absent");
  serve->add_option("--seed", s_seed);
  serve->add_flag("--level-balanced", s_balanced, "pair images from two different levels when creating tasks");

  // export-labels
  auto* exp = app.add_subcommand("export-labels", "write a pair-label file");
  std::string x_store, x_manifest, x_out;
  annotation::StoreOptions x_opts;
  MajorityFilter x_filter;
  std::optional<std::size_t> x_max_pairs;
  std::uint64_t x_seed = 0;
  exp->add_option("--store", x_store, "annotation store: majority-vote labels");
  exp->add_option("--manifest", x_manifest, "manifest with levels: labels from level order");
  exp->add_option("--min-votes", x_filter.min_votes);
  exp->add_option("--min-agreement", x_filter.min_agreement);
  exp->add_option("--max-pairs", x_max_pairs);
  exp->add_option("--seed", x_seed);
  exp->add_option("--out", x_out, "output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto run_dir = [&](std::uint64_t seed) {
    auto d = make_run_dir(seed, run_root);
    std::cerr << "run directory: " << d.string() << '\n';
    return d;
  };

  try {
    if (*gen) {
      const fs::path out = gen_out.empty() ? run_dir(gcfg.seed) : fs::path(gen_out);
      const auto m = synthetic::generate_synthetic(gcfg, out);
      std::cout << (out / "manifest.jsonl").string() << ' ' << m.records.size() << '\n';
    } else if (*train) {
      const auto cfg = tflags.resolve();
      TrainingData data{load_manifest(t_strong), std::nullopt, std::nullopt, std::nullopt};
      if (!t_weak.empty()) data.weak = load_manifest(t_weak, LabelKind::weak);
      if (!t_pairs.empty()) data.weak_pairs = read_pair_labels(fs::path(t_pairs));
      if (!t_val.empty()) {
        data.val = load_manifest(t_val);
      } else if (data.strong.records.size() >= 5) {
        const auto split = holdout_split(data.strong, 0.8, cfg.seed);
        data.val = data.strong.subset(split.val);
        data.strong = data.strong.subset(split.train);
        std::cerr << "validating on " << split.val.size() << " held-out strong images\n";
      }
      const auto dir = run_dir(cfg.seed);
      const auto result = run_training<float>(cfg, data, dir);
      std::cout << (dir / "checkpoint.json").string() << " best_epoch=" << result.state.best_epoch
                << " val_rmse_cm=" << result.state.best_val_rmse.value_or(std::nan("")) << '\n';
    } else if (*sweep) {
      const auto cfg = sflags.resolve();
      auto e = sdata.build(cfg);
      const auto dir = run_dir(cfg.seed);
      write_json(dir / "config.json", to_json(cfg));
      const auto r = lambda_sweep(e, cfg, grid, &std::cerr);
      write_json(dir / "reports" / "lambda_sweep.json", to_json(r));
      write_text(dir / "reports" / "lambda_sweep.tsv", format_sweep_table(r));
      std::cout << format_sweep_table(r);
    } else if (*ablate) {
      const auto cfg = aflags.resolve();
      auto e = adata.build(cfg);
      const auto dir = run_dir(cfg.seed);
      write_json(dir / "config.json", to_json(cfg));
      const auto rows = pair_ablation(e, cfg, budgets, &std::cerr);
      write_json(dir / "reports" / "pair_ablation.json", to_json(rows));
      write_text(dir / "reports" / "pair_ablation.tsv", format_ablation_table(rows));
      std::cout << format_ablation_table(rows);
    } else if (*eval) {
      if (!e_ckpt.empty()) {
        if (e_manifest.empty()) throw ConfigError("--checkpoint needs --manifest");
        auto ck = load_checkpoint<float>(e_ckpt);
        const auto m = load_manifest(e_manifest);
        const auto test = load_labelled_set<float>(m, ck.model->config());
        const auto preds = predict_all(*ck.model, test.images);
        const auto report = make_fold_report(1, preds, test.depth_cm);
        const auto dir = run_dir(0);
        write_json(dir / "reports" / "eval.json", to_json(report));
        export_prediction_distribution(report, dir / "reports" / "distribution");
        std::cout << "rmse_cm=" << report.rmse_cm << " rmse_level=" << report.rmse_level << '\n';
      } else {
        const auto cfg = eflags.resolve();
        auto e = edata.build(cfg);
        const auto dir = run_dir(cfg.seed);
        write_json(dir / "config.json", to_json(cfg));
        const auto r = e.run(cfg, to_string(cfg.regime), &std::cerr);
        write_json(dir / "reports" / "cross_validation.json", to_json(r));
        for (const auto& f : r.folds)
          export_prediction_distribution(f, dir / "reports" / ("distribution_fold" + std::to_string(f.fold_id)));
        std::cout << r.regime << " avg_rmse_cm=" << r.avg_rmse_cm << " std_cm=" << r.std_cm
                  << " avg_rmse_level=" << r.avg_rmse_level << " std_level=" << r.std_level << '\n';
      }
    } else if (*pred) {
      auto ck = load_checkpoint<float>(p_ckpt);
      std::vector<std::pair<std::string, fs::path>> items;
      for (const auto& p : p_images) items.emplace_back(p, p);
      if (!p_manifest.empty()) {
        const auto m = load_manifest(p_manifest);
        for (const auto& r : m.records) items.emplace_back(r.image_uri, m.resolve(r));
      }
      if (items.empty()) throw ConfigError("no images given");
      for (const auto& [uri, path] : items) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto depth = predict(*ck.model, read_png(path));
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %.4f %.4f\n", uri.c_str(), depth.value(), cm_to_level(depth.value()));
        std::fprintf(stderr, "%s: %.2f ms\n", uri.c_str(), ms);
      }
    } else if (*serve) {
      const auto m = load_manifest(s_manifest);
      const fs::path store_dir(s_store);
      if (!fs::exists(store_dir / "tasks.jsonl")) {
        if (s_tasks == 0) throw ConfigError("no tasks.jsonl in " + s_store + "; pass --create-tasks N");
        fs::create_directories(store_dir);
        annotation::write_tasks(store_dir / "tasks.jsonl", annotation::sample_pairs(m, s_tasks, s_seed,
                                                     s_balanced ? annotation::PairSampling::level_balanced
                                                                : annotation::PairSampling::uniform));
      }
      annotation::AnnotationStore store(store_dir, {s_votes});
      annotation::AnnotationServer server(store, m);
      g_server = &server;
      std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
      std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
      std::cerr << "serving on http://" << s_host << ':' << s_port << '\n';
      if (!server.listen(s_host, s_port)) throw IoError("cannot listen on " + s_host + ":" + std::to_string(s_port));
    } else if (*exp) {
      if (x_store.empty() == x_manifest.empty()) throw ConfigError("give exactly one of --store or --manifest");
      std::vector<PairLabel> labels;
      if (!x_store.empty()) {
        annotation::AnnotationStore store(x_store, x_opts);
        labels = store.export_labels(x_filter);
      } else {
        labels = export_rank_dataset(load_manifest(x_manifest, LabelKind::weak), {x_max_pairs, x_seed});
      }
      if (x_out.empty()) write_pair_labels(std::cout, labels);
      else write_pair_labels(fs::path(x_out), labels);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
