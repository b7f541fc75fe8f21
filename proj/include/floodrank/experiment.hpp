#pragma once

// Repeated-run evaluation protocols and the sweeps built on them. An experiment
// is a list of units (CV folds or independently generated synthetic draws); each
// unit trains one model per configuration and reports test RMSE, and the units
// are aggregated into mean and standard deviation.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "floodrank/dataset.hpp"
#include "floodrank/evaluation.hpp"
#include "floodrank/synthetic.hpp"
#include "floodrank/trainer.hpp"

namespace floodrank {

template <typename Scalar>
struct ExperimentUnit {
  int id = 0;              // 1-based fold number
  std::uint64_t seed = 0;  // training seed for this unit
  LabelledSet<Scalar> strong, val, test;
  RankedSet<Scalar> weak;
  std::optional<LabelledSet<Scalar>> weak_absolute;  // only for regression_pp
};

template <typename Scalar>
struct Experiment {
  std::vector<ExperimentUnit<Scalar>> units;
  LevelConversion conversion = LevelConversion::continuous;
  StdConvention convention = StdConvention::sample;

  FoldReport run_unit(const ExperimentUnit<Scalar>& u, const TrainConfig& base) const {
    TrainConfig cfg = base;
    cfg.seed = u.seed;
    auto result = train_model<Scalar>(cfg, u.strong, u.weak_absolute ? &*u.weak_absolute : nullptr,
                                      &u.weak, u.val.size() ? &u.val : nullptr);
    const auto preds = predict_all(*result.model, u.test.images);
    auto report = make_fold_report(u.id, preds, u.test.depth_cm, conversion);
    report.val_rmse_cm = result.state.best_val_rmse;
    return report;
  }

  ExperimentReport run(const TrainConfig& base, const std::string& label,
                       std::ostream* progress = nullptr) const {
    std::vector<FoldReport> reports;
    for (const auto& u : units) {
      reports.push_back(run_unit(u, base));
      if (progress)
        *progress << label << " fold " << u.id << ": test " << reports.back().rmse_cm << " cm, val "
                  << reports.back().val_rmse_cm.value_or(-1.0) << " cm\n"
                  << std::flush;
    }
    return aggregate_folds(std::move(reports), label, convention);
  }
};

// ---------------------------------------------------------------------------
// Synthetic repeated-seed protocol: every seed draws fresh strong, weak,
// validation and test sets, so seeds play the role of folds.

struct SyntheticSetup {
  int strong = 200;
  int weak = 2000;
  int val = 100;
  int test = 500;
  int image_size = 32;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  bool weak_absolute = true;  // keep weak depths for regression_pp
  synthetic::GeneratorConfig generator;
};

namespace detail {

template <typename Scalar>
void render_into(const synthetic::GeneratorConfig& gen, const ModelConfig& mc,
                 LabelledSet<Scalar>* labelled, std::vector<std::string>* ids, ImageBank<Scalar>* bank,
                 std::vector<int>* levels) {
  for (int i = 0; i < gen.count; ++i) {
    const auto s = synthetic::make_sample(gen, i);
    const auto img = synthetic::render_scene(s.scene, gen.image_size);
    if (labelled) {
      labelled->ids.push_back(s.record.id);
      labelled->depth_cm.push_back(depth_of(s.record));
      labelled->images.append(img, mc);
    }
    if (ids) ids->push_back(s.record.id);
    if (bank) bank->append(img, mc);
    if (levels) levels->push_back(level_of(s.record));
  }
}

}  // namespace detail

template <typename Scalar>
Experiment<Scalar> synthetic_experiment(const SyntheticSetup& setup, const ModelConfig& mc) {
  if (setup.seeds.size() < 2) throw ConfigError("synthetic experiment needs at least 2 seeds");
  Experiment<Scalar> e;
  int id = 0;
  for (auto seed : setup.seeds) {
    ExperimentUnit<Scalar> u;
    u.id = ++id;
    u.seed = seed;
    auto gen = setup.generator;
    gen.image_size = setup.image_size;
    auto role = [&](const char* prefix, int count) {
      auto g = gen;
      g.id_prefix = prefix;
      g.count = count;
      g.seed = synthetic::image_seed(seed, prefix);
      return g;
    };
    detail::render_into<Scalar>(role("strong", setup.strong), mc, &u.strong, nullptr, nullptr, nullptr);
    detail::render_into<Scalar>(role("val", setup.val), mc, &u.val, nullptr, nullptr, nullptr);
    detail::render_into<Scalar>(role("test", setup.test), mc, &u.test, nullptr, nullptr, nullptr);
    std::vector<int> levels;
    auto wg = role("weak", setup.weak);
    if (setup.weak_absolute) {
      u.weak_absolute.emplace();
      detail::render_into<Scalar>(wg, mc, &*u.weak_absolute, nullptr, nullptr, &levels);
      u.weak.ids = u.weak_absolute->ids;
      u.weak.images = u.weak_absolute->images;
    } else {
      detail::render_into<Scalar>(wg, mc, nullptr, &u.weak.ids, &u.weak.images, &levels);
    }
    u.weak.labels = WeakLabels::from_levels(std::move(levels));
    e.units.push_back(std::move(u));
  }
  return e;
}

// ---------------------------------------------------------------------------
// k-fold protocol over manifests: stratified folds of the strong set, and one
// 80:20 split of the weak set whose larger part provides ranking batches.

struct CrossValidationOptions {
  int k = 6;
  std::uint64_t seed = 0;
  double weak_train_fraction = 0.8;
};

template <typename Scalar>
Experiment<Scalar> cross_validation_experiment(const DatasetManifest& strong,
                                               const std::optional<DatasetManifest>& weak,
                                               const ModelConfig& mc,
                                               const CrossValidationOptions& opts = {},
                                               const std::vector<PairLabel>* weak_pairs = nullptr) {
  const auto plan = stratified_folds(strong, opts.k, opts.seed);
  const auto all = load_labelled_set<Scalar>(strong, mc);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < all.ids.size(); ++i) index[all.ids[i]] = i;
  auto pick = [&](const std::vector<std::string>& ids) {
    std::vector<std::size_t> idx;
    for (const auto& id : ids) idx.push_back(index.at(id));
    return all.select(idx);
  };

  RankedSet<Scalar> weak_set;
  std::optional<LabelledSet<Scalar>> weak_abs;
  if (weak) {
    const auto split = holdout_split(*weak, opts.weak_train_fraction, opts.seed);
    const auto train = weak->subset(split.train);
    if (weak_pairs) {
      const std::set<std::string> keep(split.train.begin(), split.train.end());
      std::vector<PairLabel> inside;
      for (const auto& p : *weak_pairs)
        if (keep.count(p.id_a) && keep.count(p.id_b)) inside.push_back(p);
      weak_set = load_ranked_set<Scalar>(train, mc, &inside);
    } else {
      weak_set = load_ranked_set<Scalar>(train, mc);
    }
    const bool have_depths = std::all_of(train.records.begin(), train.records.end(), [](const auto& r) {
      return r.depth_cm.has_value() || r.level.has_value();
    });
    if (have_depths) weak_abs = load_labelled_set<Scalar>(train, mc);
  }

  Experiment<Scalar> e;
  for (const auto& f : plan.folds) {
    ExperimentUnit<Scalar> u;
    u.id = f.fold_id;
    u.seed = opts.seed + std::uint64_t(f.fold_id);
    u.strong = pick(f.train);
    u.val = pick(f.val);
    u.test = pick(f.test);
    u.weak = weak_set;
    u.weak_absolute = weak_abs;
    e.units.push_back(std::move(u));
  }
  return e;
}

// ---------------------------------------------------------------------------
// Sweeps.

struct SweepRow {
  double lambda = 0.0;
  ExperimentReport report;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double selected_lambda = 0.0;
};

// Trains reg_rank for every lambda and selects the one with the lowest mean
// validation RMSE; ties go to the smaller lambda.
template <typename Scalar>
SweepResult lambda_sweep(const Experiment<Scalar>& e, TrainConfig base, std::vector<double> grid,
                         std::ostream* progress = nullptr) {
  if (grid.empty()) throw ConfigError("lambda grid is empty");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  base.regime = Regime::reg_rank;
  SweepResult out;
  double best = std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    base.lambda = lambda;
    std::ostringstream label;
    label << "lambda=" << lambda;
    auto report = e.run(base, label.str(), progress);
    const double score = report.avg_val_rmse_cm.value_or(report.avg_rmse_cm);
    if (score < best) {
      best = score;
      out.selected_lambda = lambda;
    }
    out.rows.push_back({lambda, std::move(report)});
  }
  return out;
}

inline std::string format_sweep_table(const SweepResult& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "lambda\tval_rmse_cm\ttest_rmse_cm\tstd_cm\ttest_rmse_level\n";
  for (const auto& row : r.rows)
    os << row.lambda << '\t' << row.report.avg_val_rmse_cm.value_or(std::nan("")) << '\t'
       << row.report.avg_rmse_cm << '\t' << row.report.std_cm << '\t' << row.report.avg_rmse_level
       << '\n';
  os << "selected lambda: " << r.selected_lambda << '\n';
  return os.str();
}

inline nlohmann::ordered_json to_json(const SweepResult& r) {
  nlohmann::ordered_json j;
  j["selected_lambda"] = r.selected_lambda;
  auto& rows = j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) rows.push_back({{"lambda", row.lambda}, {"report", to_json(row.report)}});
  return j;
}

struct AblationRow {
  std::uint64_t budget = 0;  // 0: no ranking pairs, trained as plain regression
  ExperimentReport report;
};

template <typename Scalar>
std::vector<AblationRow> pair_ablation(const Experiment<Scalar>& e, TrainConfig base,
                                       const std::vector<std::uint64_t>& budgets,
                                       std::ostream* progress = nullptr) {
  std::vector<AblationRow> rows;
  for (auto b : budgets) {
    TrainConfig cfg = base;
    if (b == 0) {
      cfg.regime = Regime::regression;
      cfg.pair_budget.reset();
    } else {
      cfg.regime = Regime::reg_rank;
      cfg.pair_budget = b;
    }
    rows.push_back({b, e.run(cfg, "pairs=" + std::to_string(b), progress)});
  }
  return rows;
}

inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "pairs\tavg_rmse_cm\tstd_cm\tavg_rmse_level\tstd_level\n";
  for (const auto& r : rows)
    os << r.budget << '\t' << r.report.avg_rmse_cm << '\t' << r.report.std_cm << '\t'
       << r.report.avg_rmse_level << '\t' << r.report.std_level << '\n';
  return os.str();
}

inline nlohmann::ordered_json to_json(const std::vector<AblationRow>& rows) {
  auto j = nlohmann::ordered_json::array();
  for (const auto& r : rows) j.push_back({{"pairs", r.budget}, {"report", to_json(r.report)}});
  return j;
}

}  // namespace floodrank
