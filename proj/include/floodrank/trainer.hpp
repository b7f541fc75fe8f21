#pragma once

// Mixed strong/weak training loop. Each iteration draws one mini-batch of
// absolutely labelled images for the regression term and, in the reg_rank
// regime, one mini-batch of weakly labelled images whose in-batch pairs feed the
// ranking term. Both batches go through the backbone once; pairs are formed on
// the resulting predictions.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "floodrank/dataset.hpp"
#include "floodrank/errors.hpp"
#include "floodrank/evaluation.hpp"
#include "floodrank/level_scale.hpp"
#include "floodrank/losses.hpp"
#include "floodrank/model.hpp"
#include "floodrank/nn/adam.hpp"
#include "floodrank/pair_labels.hpp"
#include "floodrank/pairing.hpp"

namespace floodrank {

enum class Regime { regression, regression_pp, reg_rank };
enum class StepMode { combined, alternating };
// cap: the budget only truncates ranking; extend: keep training past `epochs`
// (at the final learning rate) until the budget is used up.
enum class BudgetMode { cap, extend };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::regression: return "regression";
    case Regime::regression_pp: return "regression_pp";
    case Regime::reg_rank: return "reg_rank";
  }
  return "reg_rank";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "regression") return Regime::regression;
  if (s == "regression_pp") return Regime::regression_pp;
  if (s == "reg_rank") return Regime::reg_rank;
  throw ConfigError("unknown regime '" + s + "'");
}

inline StepMode parse_step_mode(const std::string& s) {
  if (s == "combined") return StepMode::combined;
  if (s == "alternating") return StepMode::alternating;
  throw ConfigError("unknown step mode '" + s + "'");
}

inline BudgetMode parse_budget_mode(const std::string& s) {
  if (s == "cap") return BudgetMode::cap;
  if (s == "extend") return BudgetMode::extend;
  throw ConfigError("unknown budget mode '" + s + "'");
}

struct TrainConfig {
  int epochs = 200;
  double lr = 1e-3;
  std::vector<int> lr_decay_epochs{150, 180};
  double lr_decay_factor = 0.1;
  int batch_size = 5;
  double lambda = 5.0;
  Regime regime = Regime::reg_rank;
  std::optional<std::uint64_t> pair_budget;
  BudgetMode budget_mode = BudgetMode::cap;
  StepMode step_mode = StepMode::combined;
  int iterations_per_epoch = 0;  // 0: one pass over the ranking (or training) set
  double margin = 0.0;           // hinge margin; 0 is the plain hinge
  bool transitive_reduction = false;
  std::uint64_t seed = 0;        // also seeds model initialisation
  ModelConfig model;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    for (int d : lr_decay_epochs)
      if (d < 0 || d >= epochs)
        throw ConfigError("lr decay epoch " + std::to_string(d) + " must lie in [0, epochs)");
    if (!(lr_decay_factor > 0.0)) throw ConfigError("lr_decay_factor must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (regime == Regime::reg_rank && batch_size < 2)
      throw ConfigError("ranking needs batch_size >= 2");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    if (pair_budget && *pair_budget == 0) throw ConfigError("pair_budget must be positive");
    if (iterations_per_epoch < 0) throw ConfigError("iterations_per_epoch must be >= 0");
    if (margin < 0.0) throw ConfigError("margin must be non-negative");
    model.validate();
  }

  // Learning rate in force during (0-based) epoch `epoch`.
  double lr_at(int epoch) const {
    int decays = 0;
    for (int d : lr_decay_epochs)
      if (d <= epoch) ++decays;
    return lr * std::pow(lr_decay_factor, decays);
  }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["lr_decay_epochs"] = c.lr_decay_epochs;
  j["lr_decay_factor"] = c.lr_decay_factor;
  j["batch_size"] = c.batch_size;
  j["lambda"] = c.lambda;
  j["regime"] = to_string(c.regime);
  j["pair_budget"] = c.pair_budget ? nlohmann::ordered_json(*c.pair_budget) : nullptr;
  j["budget_mode"] = c.budget_mode == BudgetMode::cap ? "cap" : "extend";
  j["step_mode"] = c.step_mode == StepMode::combined ? "combined" : "alternating";
  j["iterations_per_epoch"] = c.iterations_per_epoch;
  j["margin"] = c.margin;
  j["transitive_reduction"] = c.transitive_reduction;
  j["seed"] = c.seed;
  j["model"] = to_json(c.model);
  return j;
}

// Fields absent from `j` keep the values already in `base`.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  static const std::set<std::string> known = {
      "epochs", "lr", "lr_decay_epochs", "lr_decay_factor", "batch_size", "lambda", "regime",
      "pair_budget", "budget_mode", "step_mode", "iterations_per_epoch", "margin",
      "transitive_reduction", "seed", "model"};
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown config field '" + k + "'");
  TrainConfig c = std::move(base);
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    if (j.contains("lr_decay_epochs")) c.lr_decay_epochs = j["lr_decay_epochs"].get<std::vector<int>>();
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lambda = j.value("lambda", c.lambda);
    if (j.contains("regime")) c.regime = parse_regime(j["regime"].get<std::string>());
    if (j.contains("pair_budget"))
      c.pair_budget = j["pair_budget"].is_null() ? std::nullopt
                                                 : std::optional(j["pair_budget"].get<std::uint64_t>());
    if (j.contains("budget_mode")) c.budget_mode = parse_budget_mode(j["budget_mode"].get<std::string>());
    if (j.contains("step_mode")) c.step_mode = parse_step_mode(j["step_mode"].get<std::string>());
    c.iterations_per_epoch = j.value("iterations_per_epoch", c.iterations_per_epoch);
    c.margin = j.value("margin", c.margin);
    c.transitive_reduction = j.value("transitive_reduction", c.transitive_reduction);
    c.seed = j.value("seed", c.seed);
    if (j.contains("model")) {
      auto merged = to_json(c.model);
      for (const auto& [k, v] : j["model"].items()) merged[k] = v;
      c.model = model_config_from_json(nlohmann::json::parse(merged.dump()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

// Full schedule on the VGG-layout backbone at full resolution.
inline TrainConfig full_preset() {
  TrainConfig c;
  c.model.backbone = Backbone::pretrained_conv;
  return c;
}

// Desk-scale preset: small synthetic images, 30 epochs, decay points scaled from
// the 150/180-of-200 schedule.
inline TrainConfig desk_preset() {
  TrainConfig c;
  c.epochs = 30;
  c.lr_decay_epochs = {22, 27};
  c.model.backbone = Backbone::tiny_conv;
  c.model.input_height = c.model.input_width = 32;
  return c;
}

inline TrainConfig preset(const std::string& name) {
  if (name == "full") return full_preset();
  if (name == "desk") return desk_preset();
  throw ConfigError("unknown preset '" + name + "' (expected full or desk)");
}

// <root>/<UTC timestamp>-seed<seed>, created on demand. The root comes from
// FLOODRANK_RUN_ROOT when `root` is empty, falling back to ./runs.
inline std::filesystem::path make_run_dir(std::uint64_t seed, std::filesystem::path root = {}) {
  if (root.empty()) {
    const char* env = std::getenv("FLOODRANK_RUN_ROOT");
    root = env && *env ? env : "runs";
  }
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  auto dir = root / (std::string(stamp) + "-seed" + std::to_string(seed));
  for (int n = 2; std::filesystem::exists(dir); ++n)
    dir = root / (std::string(stamp) + "-seed" + std::to_string(seed) + "-" + std::to_string(n));
  std::filesystem::create_directories(dir / "reports");
  return dir;
}

// ---------------------------------------------------------------------------
// Training data.

template <typename Scalar>
struct LabelledSet {
  std::vector<std::string> ids;
  ImageBank<Scalar> images;
  std::vector<double> depth_cm;

  std::size_t size() const { return ids.size(); }

  LabelledSet select(std::span<const std::size_t> idx) const {
    LabelledSet out;
    out.images.c = images.c;
    out.images.h = images.h;
    out.images.w = images.w;
    const std::size_t block = images.c * images.h * images.w;
    for (auto i : idx) {
      out.ids.push_back(ids[i]);
      out.depth_cm.push_back(depth_cm[i]);
      out.images.pixels.insert(out.images.pixels.end(), images.pixels.begin() + i * block,
                               images.pixels.begin() + (i + 1) * block);
    }
    return out;
  }

  void append(const LabelledSet& other) {
    ids.insert(ids.end(), other.ids.begin(), other.ids.end());
    depth_cm.insert(depth_cm.end(), other.depth_cm.begin(), other.depth_cm.end());
    images.c = other.images.c;
    images.h = other.images.h;
    images.w = other.images.w;
    images.pixels.insert(images.pixels.end(), other.images.pixels.begin(), other.images.pixels.end());
  }
};

// Ordering information of the weak set. Absolute levels stay private: callers can
// only ask for the ±1 targets of pairs inside a batch.
class WeakLabels {
 public:
  WeakLabels() = default;

  static WeakLabels from_levels(std::vector<int> levels) {
    WeakLabels w;
    w.levels_ = std::move(levels);
    w.use_levels_ = true;
    w.count_ = w.levels_.size();
    return w;
  }

  // Labels from a pair-label file; member i of the set has id ids[i].
  static WeakLabels from_pair_labels(const std::vector<std::string>& ids,
                                     const std::vector<PairLabel>& labels) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
    WeakLabels w;
    w.count_ = ids.size();
    for (const auto& l : labels) {
      auto a = index.find(l.id_a), b = index.find(l.id_b);
      if (a == index.end() || b == index.end())
        throw DomainError("pair label references an id outside the weak set");
      auto key = std::minmax(a->second, b->second);
      const int s = a->second < b->second ? l.sign.value() : -l.sign.value();
      auto [it, inserted] = w.pair_signs_.emplace(key, s);
      if (!inserted && it->second != s)
        throw DomainError("contradictory labels for pair " + l.id_a + "/" + l.id_b);
    }
    return w;
  }

  std::size_t size() const { return count_; }

  // Rank pairs among batch slots; `members[k]` is the set index in slot k.
  DerivedPairs pairs_for(std::span<const std::size_t> members) const {
    const auto slots = enumerate_pairs(members.size());
    if (use_levels_) {
      std::vector<int> batch_levels;
      batch_levels.reserve(members.size());
      for (auto m : members) batch_levels.push_back(levels_.at(m));
      return derive_rank_targets<int>(batch_levels, slots);
    }
    DerivedPairs out;
    for (const auto& [i, j] : slots) {
      const auto a = members[i], b = members[j];
      auto it = pair_signs_.find(std::minmax(a, b));
      if (it == pair_signs_.end()) {
        ++out.dropped_equal;
        continue;
      }
      const int s = a < b ? it->second : -it->second;
      out.pairs.push_back({i, j, RankTarget(s)});
    }
    return out;
  }

 private:
  bool use_levels_ = false;
  std::size_t count_ = 0;
  std::vector<int> levels_;
  std::map<std::pair<std::size_t, std::size_t>, int> pair_signs_;
};

template <typename Scalar>
struct RankedSet {
  std::vector<std::string> ids;
  ImageBank<Scalar> images;
  WeakLabels labels;

  std::size_t size() const { return ids.size(); }
};

template <typename Scalar>
LabelledSet<Scalar> load_labelled_set(const DatasetManifest& m, const ModelConfig& cfg) {
  LabelledSet<Scalar> s;
  for (const auto& r : m.records) {
    s.ids.push_back(r.id);
    s.depth_cm.push_back(depth_of(r));
    s.images.append(read_png(m.resolve(r)), cfg);
  }
  return s;
}

template <typename Scalar>
RankedSet<Scalar> load_ranked_set(const DatasetManifest& m, const ModelConfig& cfg,
                                  const std::vector<PairLabel>* pair_labels = nullptr) {
  RankedSet<Scalar> s;
  std::vector<int> levels;
  for (const auto& r : m.records) {
    s.ids.push_back(r.id);
    if (!pair_labels) levels.push_back(level_of(r));
    s.images.append(read_png(m.resolve(r)), cfg);
  }
  s.labels = pair_labels ? WeakLabels::from_pair_labels(s.ids, *pair_labels)
                         : WeakLabels::from_levels(std::move(levels));
  return s;
}

// Endless stream of distinct-index batches: reshuffles whenever fewer than a
// full batch remain in the current permutation.
class CyclicSampler {
 public:
  CyclicSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
      : n_(n), batch_(std::min(batch, n)), rng_(seed) {
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n_;  // force a shuffle on first use
  }

  std::vector<std::size_t> next() {
    if (pos_ + batch_ > n_) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    std::vector<std::size_t> b(order_.begin() + pos_, order_.begin() + pos_ + batch_);
    pos_ += batch_;
    return b;
  }

 private:
  std::size_t n_, batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_;
};

// ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_reg_loss = 0.0;
  double train_rank_loss = 0.0;
  std::optional<double> val_rmse_cm;
  std::uint64_t pairs_consumed = 0;
  std::uint64_t dropped_equal_pairs = 0;
  std::uint64_t skipped_rank_steps = 0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["train_reg_loss"] = r.train_reg_loss;
  j["train_rank_loss"] = r.train_rank_loss;
  j["val_rmse_cm"] = r.val_rmse_cm ? nlohmann::ordered_json(*r.val_rmse_cm) : nullptr;
  j["pairs_consumed"] = r.pairs_consumed;
  j["dropped_equal_pairs"] = r.dropped_equal_pairs;
  j["skipped_rank_steps"] = r.skipped_rank_steps;
  return j;
}

inline void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& h) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& r : h) os << to_json(r).dump() << '\n';
}

struct TrainState {
  int epoch = 0;
  long step = 0;
  std::uint64_t pairs_consumed = 0;
  std::optional<double> best_val_rmse;
  int best_epoch = 0;
};

template <typename Scalar>
struct TrainResult {
  std::unique_ptr<Model<Scalar>> model;  // best-validation parameters
  std::vector<EpochRecord> history;
  TrainState state;
  TrainConfig config;

  nlohmann::ordered_json checkpoint_metadata() const {
    return {{"epoch", state.best_epoch},       {"epochs_run", state.epoch},
            {"steps", state.step},             {"seed", config.seed},
            {"lambda", config.lambda},         {"regime", to_string(config.regime)},
            {"pairs_consumed", state.pairs_consumed},
            {"best_val_rmse_cm", state.best_val_rmse ? nlohmann::ordered_json(*state.best_val_rmse)
                                                     : nlohmann::ordered_json(nullptr)},
            {"train_config", to_json(config)}};
  }
};

struct RankStepOutcome {
  double loss = 0.0;
  std::size_t pairs = 0;
  std::size_t dropped_equal = 0;
  bool skipped = false;
};

// Clamped predictions for every image of a set, in batches.
template <typename Scalar>
std::vector<double> predict_all(Model<Scalar>& model, const ImageBank<Scalar>& images,
                                std::size_t chunk = 64) {
  std::vector<double> out;
  const std::size_t n = images.size();
  out.reserve(n);
  nn::Tensor<Scalar> batch;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(n, start + chunk); ++i) idx.push_back(i);
    images.gather(idx, batch);
    for (auto d : predict(model, batch)) out.push_back(d.value());
  }
  return out;
}

template <typename Scalar>
class Trainer {
 public:
  // `strong` supplies regression batches (for regression_pp the caller passes the
  // union of both subsets), `weak` ranking batches, `val` the model-selection set.
  Trainer(TrainConfig cfg, const LabelledSet<Scalar>& strong, const RankedSet<Scalar>* weak,
          const LabelledSet<Scalar>* val)
      : cfg_(std::move(cfg)), strong_(strong), weak_(weak), val_(val),
        strong_sampler_(strong.size(), cfg_.batch_size, splitmix(cfg_.seed, 0x5157)),
        weak_sampler_(weak ? weak->size() : 1, cfg_.batch_size, splitmix(cfg_.seed, 0x7ea4)),
        budget_(cfg_.pair_budget ? std::optional(PairBudget(*cfg_.pair_budget)) : std::nullopt) {
    cfg_.validate();
    if (strong.size() == 0) throw DomainError("training needs at least one strong sample");
    if (cfg_.regime == Regime::reg_rank && (!weak || weak->size() < 2))
      throw DomainError("reg_rank training needs a weak set with at least 2 images");
    auto mc = cfg_.model;
    mc.init_seed = cfg_.seed;
    model_ = build_model<Scalar>(mc);
    optimizer_ = std::make_unique<nn::Adam<Scalar>>(model_->trainable_parameters());
  }

  Model<Scalar>& model() { return *model_; }
  const TrainState& state() const { return state_; }
  const PairBudgetTracker& budget() const { return budget_; }

  bool ranking_active() const {
    return cfg_.regime == Regime::reg_rank && weak_ && !budget_.exhausted();
  }

  std::size_t iterations_per_epoch() const {
    if (cfg_.iterations_per_epoch > 0) return std::size_t(cfg_.iterations_per_epoch);
    const std::size_t b = cfg_.batch_size;
    const std::size_t n =
        (cfg_.regime != Regime::regression_pp && weak_) ? weak_->size() : strong_.size();
    return (n + b - 1) / b;
  }

  // One optimiser step on the regression term of a strong batch.
  double train_step_regression(std::span<const std::size_t> batch, double lr) {
    optimizer_->zero_grad();
    const double loss = accumulate_regression(batch);
    optimizer_->step(lr);
    ++state_.step;
    return loss;
  }

  // One optimiser step on lambda * ranking term of a weak batch. Batches without
  // any usable pair are skipped without touching the parameters.
  RankStepOutcome train_step_ranking(std::span<const std::size_t> batch, double lr) {
    optimizer_->zero_grad();
    auto out = accumulate_ranking(batch);
    if (!out.skipped) {
      optimizer_->step(lr);
      ++state_.step;
    }
    return out;
  }

  TrainResult<Scalar> run(std::ostream* log = nullptr) {
    TrainResult<Scalar> result;
    result.config = cfg_;
    const std::size_t iters = iterations_per_epoch();
    const int max_epochs = cfg_.budget_mode == BudgetMode::extend && cfg_.pair_budget
                               ? cfg_.epochs * 100
                               : cfg_.epochs;
    std::vector<nn::AlignedVector<Scalar>> best;
    for (int epoch = 0; epoch < max_epochs; ++epoch) {
      if (epoch >= cfg_.epochs && !ranking_active()) break;
      const double lr = cfg_.lr_at(std::min(epoch, cfg_.epochs - 1));
      EpochRecord rec;
      rec.epoch = epoch + 1;
      rec.lr = lr;
      double reg_sum = 0.0, rank_sum = 0.0;
      std::size_t rank_steps = 0;
      for (std::size_t it = 0; it < iters; ++it) {
        const auto sb = strong_sampler_.next();
        const bool rank = ranking_active();
        RankStepOutcome ro;
        if (cfg_.step_mode == StepMode::combined) {
          optimizer_->zero_grad();
          reg_sum += accumulate_regression(sb);
          if (rank) ro = accumulate_ranking(weak_sampler_.next());
          optimizer_->step(lr);
          ++state_.step;
        } else {
          reg_sum += train_step_regression(sb, lr);
          if (rank) ro = train_step_ranking(weak_sampler_.next(), lr);
        }
        if (rank) {
          rec.dropped_equal_pairs += ro.dropped_equal;
          if (ro.skipped) {
            ++rec.skipped_rank_steps;
          } else {
            rank_sum += ro.loss;
            ++rank_steps;
          }
        }
      }
      rec.train_reg_loss = reg_sum / double(iters);
      rec.train_rank_loss = rank_steps ? rank_sum / double(rank_steps) : 0.0;
      rec.pairs_consumed = budget_.consumed();
      if (val_ && val_->size() > 0) {
        const auto preds = predict_all(*model_, val_->images);
        rec.val_rmse_cm = rmse(preds, val_->depth_cm);
      }
      state_.epoch = epoch + 1;
      state_.pairs_consumed = budget_.consumed();
      const bool improved = !rec.val_rmse_cm || !state_.best_val_rmse ||
                            *rec.val_rmse_cm < *state_.best_val_rmse;
      if (improved) {
        state_.best_val_rmse = rec.val_rmse_cm;
        state_.best_epoch = epoch + 1;
        best = snapshot();
      }
      if (log) {
        *log << to_json(rec).dump() << '\n';
        log->flush();
      }
      result.history.push_back(rec);
    }
    restore(best);
    result.state = state_;
    result.model = std::move(model_);
    return result;
  }

 private:
  static std::uint64_t splitmix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed * 0x9e3779b97f4a7c15ULL + stream;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  double accumulate_regression(std::span<const std::size_t> batch) {
    strong_.images.gather(batch, buffer_);
    const auto preds = model_->forward(buffer_);
    check_finite("regression predictions", preds);
    std::vector<double> targets;
    targets.reserve(batch.size());
    for (auto i : batch) targets.push_back(strong_.depth_cm[i]);
    const auto eval = loss_gradients(preds, targets, {}, {}, LossWeights(cfg_.lambda), cfg_.margin);
    if (!std::isfinite(eval.reg)) fail("regression loss", preds);
    model_->backward(eval.grad_strong);
    return eval.reg;
  }

  RankStepOutcome accumulate_ranking(std::span<const std::size_t> batch) {
    RankStepOutcome out;
    auto derived = weak_->labels.pairs_for(batch);
    out.dropped_equal = derived.dropped_equal;
    auto pairs = cfg_.transitive_reduction ? transitive_reduction(derived.pairs) : derived.pairs;
    const auto granted = budget_.grant(pairs.size());
    pairs.resize(granted);
    if (pairs.empty()) {
      out.skipped = true;
      return out;
    }
    budget_.consume(pairs.size());
    weak_->images.gather(batch, buffer_);
    const auto preds = model_->forward(buffer_);
    check_finite("ranking predictions", preds);
    const auto eval = loss_gradients({}, {}, preds, pairs, LossWeights(cfg_.lambda), cfg_.margin);
    if (!std::isfinite(eval.rank)) fail("ranking loss", preds);
    model_->backward(eval.grad_weak);
    out.loss = eval.rank;
    out.pairs = pairs.size();
    return out;
  }

  void check_finite(const char* what, const std::vector<double>& preds) const {
    for (double p : preds)
      if (!std::isfinite(p)) fail(what, preds);
  }

  [[noreturn]] void fail(const char* what, const std::vector<double>& preds) const {
    std::ostringstream os;
    os << "non-finite " << what << " at step " << state_.step << " (epoch " << state_.epoch + 1
       << "); predictions:";
    for (double p : preds) os << ' ' << p;
    throw NumericError(os.str());
  }

  std::vector<nn::AlignedVector<Scalar>> snapshot() {
    std::vector<nn::AlignedVector<Scalar>> s;
    for (auto* p : model_->all_parameters()) s.push_back(p->value);
    return s;
  }

  void restore(const std::vector<nn::AlignedVector<Scalar>>& s) {
    if (s.empty()) return;
    auto ps = model_->all_parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = s[i];
  }

  TrainConfig cfg_;
  const LabelledSet<Scalar>& strong_;
  const RankedSet<Scalar>* weak_;
  const LabelledSet<Scalar>* val_;
  CyclicSampler strong_sampler_, weak_sampler_;
  PairBudgetTracker budget_;
  std::unique_ptr<Model<Scalar>> model_;
  std::unique_ptr<nn::Adam<Scalar>> optimizer_;
  TrainState state_;
  nn::Tensor<Scalar> buffer_;
};

// Trains one model for the configured regime. For regression_pp the weak set's
// absolute labels are merged into the regression set; for regression the weak
// set only determines the epoch length.
template <typename Scalar>
TrainResult<Scalar> train_model(const TrainConfig& cfg, const LabelledSet<Scalar>& strong,
                                const LabelledSet<Scalar>* weak_absolute,
                                const RankedSet<Scalar>* weak_ranked,
                                const LabelledSet<Scalar>* val, std::ostream* log = nullptr) {
  if (cfg.regime == Regime::regression_pp) {
    if (!weak_absolute) throw DomainError("regression_pp needs absolute labels for the weak set");
    LabelledSet<Scalar> merged = strong;
    merged.append(*weak_absolute);
    Trainer<Scalar> t(cfg, merged, nullptr, val);
    return t.run(log);
  }
  Trainer<Scalar> t(cfg, strong, weak_ranked, val);
  return t.run(log);
}

struct TrainingData {
  DatasetManifest strong;
  std::optional<DatasetManifest> weak;
  std::optional<DatasetManifest> val;
  std::optional<std::vector<PairLabel>> weak_pairs;  // replaces weak levels when set
};

// Manifest-level entry point: loads images, trains, and writes
// <run_dir>/history.jsonl, <run_dir>/checkpoint.json and <run_dir>/config.json
// when run_dir is non-empty.
template <typename Scalar = float>
TrainResult<Scalar> run_training(const TrainConfig& cfg, const TrainingData& data,
                                 const std::filesystem::path& run_dir = {}) {
  cfg.validate();
  const auto strong = load_labelled_set<Scalar>(data.strong, cfg.model);
  std::optional<LabelledSet<Scalar>> weak_abs, val;
  std::optional<RankedSet<Scalar>> weak_ranked;
  if (data.weak) {
    if (cfg.regime == Regime::regression_pp) weak_abs = load_labelled_set<Scalar>(*data.weak, cfg.model);
    if (cfg.regime != Regime::regression_pp)
      weak_ranked = load_ranked_set<Scalar>(*data.weak, cfg.model,
                                            data.weak_pairs ? &*data.weak_pairs : nullptr);
  }
  if (data.val) val = load_labelled_set<Scalar>(*data.val, cfg.model);

  std::ofstream history;
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    std::ofstream(run_dir / "config.json") << to_json(cfg).dump(2) << '\n';
    history.open(run_dir / "history.jsonl");
    if (!history) throw IoError("cannot write history in " + run_dir.string());
  }
  auto result = train_model<Scalar>(cfg, strong, weak_abs ? &*weak_abs : nullptr,
                                    weak_ranked ? &*weak_ranked : nullptr, val ? &*val : nullptr,
                                    run_dir.empty() ? nullptr : &history);
  if (!run_dir.empty()) save_checkpoint(run_dir / "checkpoint.json", *result.model, result.checkpoint_metadata());
  return result;
}

}  // namespace floodrank
