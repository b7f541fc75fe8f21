#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "floodrank/evaluation.hpp"

using namespace floodrank;

namespace {

double two_pass_rmse(const std::vector<double>& p, const std::vector<double>& t) {
  std::vector<double> sq;
  for (std::size_t i = 0; i < p.size(); ++i) sq.push_back((p[i] - t[i]) * (p[i] - t[i]));
  long double s = 0;
  for (double v : sq) s += v;
  return std::sqrt(double(s / sq.size()));
}

FoldReport fold(int id, double cm, double level) {
  FoldReport r;
  r.fold_id = id;
  r.rmse_cm = cm;
  r.rmse_level = level;
  return r;
}

// Six mock folds whose sample mean and standard deviation equal (mean, sd).
std::vector<double> mock_folds(double mean, double sd) {
  const double a = sd * std::sqrt(5.0 / 6.0);
  return {mean - a, mean + a, mean - a, mean + a, mean - a, mean + a};
}

}  // namespace

TEST(Evaluation, RmseExamples) {
  const std::vector<double> p{1, 3}, z{0, 0};
  EXPECT_NEAR(rmse(p, z), std::sqrt(5.0), 1e-12);
  EXPECT_EQ(rmse(p, p), 0.0);
  EXPECT_THROW(rmse(std::vector<double>{1}, z), DomainError);
  EXPECT_THROW(rmse(std::vector<double>{}, std::vector<double>{}), DomainError);
}

TEST(Evaluation, RmseMatchesTwoPassOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 170);
  std::vector<double> p(100), t(100);
  for (int rep = 0; rep < 20; ++rep) {
    for (auto& v : p) v = u(rng);
    for (auto& v : t) v = u(rng);
    EXPECT_NEAR(rmse(p, t), two_pass_rmse(p, t), 1e-10);
    std::vector<double> ps(p), ts(t);
    for (auto& v : ps) v *= 2.5;
    for (auto& v : ts) v *= 2.5;
    EXPECT_NEAR(rmse(ps, ts), 2.5 * rmse(p, t), 1e-9);
  }
}

TEST(Evaluation, LevelRmse) {
  const std::vector<double> p{64}, t{43};
  EXPECT_NEAR(rmse_level(p, t), 1.0, 1e-12);
  EXPECT_EQ(rmse_level(t, t), 0.0);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 170);
  std::vector<double> pr(50), tr(50), pl, tl;
  for (auto& v : pr) v = u(rng);
  for (auto& v : tr) v = u(rng);
  for (double v : pr) pl.push_back(cm_to_level(DepthCm(v)).value());
  for (double v : tr) tl.push_back(cm_to_level(DepthCm(v)).value());
  EXPECT_NEAR(rmse_level(pr, tr), rmse(pl, tl), 1e-12);
  // Out-of-range predictions are clamped before conversion.
  EXPECT_NEAR(rmse_level(std::vector<double>{200}, std::vector<double>{170}), 0.0, 1e-12);
}

TEST(Evaluation, StandardDeviationConventions) {
  const std::vector<double> xs{10, 12};
  EXPECT_EQ(mean_std(xs, StdConvention::population).std, 1.0);
  EXPECT_NEAR(mean_std(xs, StdConvention::sample).std, std::sqrt(2.0), 1e-15);
  auto r = aggregate_folds({fold(1, 10, 0.5), fold(2, 12, 0.7)}, "x", StdConvention::population);
  EXPECT_EQ(r.avg_rmse_cm, 11.0);
  EXPECT_EQ(r.std_cm, 1.0);
  EXPECT_EQ(aggregate_folds({fold(1, 3, 1), fold(2, 3, 1)}).std_cm, 0.0);
  EXPECT_THROW(aggregate_folds({fold(1, 3, 1)}), DomainError);
  EXPECT_THROW(aggregate_folds({fold(1, 3, 1), fold(2, std::nan(""), 1)}), DomainError);
}

TEST(Evaluation, AggregateMatchesBruteForce) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(5, 20);
  std::vector<FoldReport> folds;
  std::vector<double> cm;
  for (int i = 1; i <= 6; ++i) {
    folds.push_back(fold(i, u(rng), u(rng) / 20));
    cm.push_back(folds.back().rmse_cm);
  }
  double mean = 0;
  for (double v : cm) mean += v;
  mean /= 6;
  double ss = 0;
  for (double v : cm) ss += (v - mean) * (v - mean);
  const auto r = aggregate_folds(folds);
  EXPECT_NEAR(r.avg_rmse_cm, mean, 1e-12);
  EXPECT_NEAR(r.std_cm, std::sqrt(ss / 5), 1e-12);
  EXPECT_EQ(r.folds.size(), 6u);
  EXPECT_EQ(to_json(r)["std_convention"], "sample");
}

TEST(Evaluation, ReferenceTableFixture) {
  struct Row {
    const char* regime;
    double cm, cm_sd, level, level_sd;
  };
  const Row rows[] = {{"Regression", 14.4, 0.45, 0.78, 0.01},
                      {"Regression++", 10.9, 0.85, 0.61, 0.05},
                      {"Classification", 13.6, 0.70, 0.80, 0.03},
                      {"Reg+Rank", 11.3, 0.64, 0.62, 0.03}};
  for (const auto& row : rows) {
    const auto cm = mock_folds(row.cm, row.cm_sd), lv = mock_folds(row.level, row.level_sd);
    std::vector<FoldReport> folds;
    for (int i = 0; i < 6; ++i) folds.push_back(fold(i + 1, cm[i], lv[i]));
    const auto r = aggregate_folds(folds, row.regime);
    EXPECT_NEAR(r.avg_rmse_cm, row.cm, 1e-12) << row.regime;
    EXPECT_NEAR(r.std_cm, row.cm_sd, 1e-12) << row.regime;
    EXPECT_NEAR(r.avg_rmse_level, row.level, 1e-12) << row.regime;
    EXPECT_NEAR(r.std_level, row.level_sd, 1e-12) << row.regime;
  }
}

TEST(Evaluation, FoldReportGroupsByTruthLevel) {
  const std::vector<double> preds{5, -3, 50, 180}, truths{0, 0, 43, 170};
  const auto r = make_fold_report(2, preds, truths);
  EXPECT_EQ(r.per_level_predictions.at(0), (std::vector<double>{5, 0}));
  EXPECT_EQ(r.per_level_predictions.at(4), (std::vector<double>{50}));
  EXPECT_EQ(r.per_level_predictions.at(10), (std::vector<double>{170}));
  EXPECT_NEAR(r.rmse_cm, std::sqrt((25.0 + 0 + 49) / 4), 1e-12);
}

TEST(Evaluation, BoxStats) {
  const auto flat = box_stats(3, {21, 21, 21});
  EXPECT_EQ(flat.q1, flat.q3);
  EXPECT_EQ(flat.whisker_low, 21);
  const auto b = box_stats(5, {1, 2, 3, 4, 100});
  EXPECT_EQ(b.median, 3);
  EXPECT_EQ(b.q1, 2);
  EXPECT_EQ(b.q3, 4);
  EXPECT_EQ(b.whisker_high, 4);
  EXPECT_EQ(b.outliers, std::vector<double>{100});
  EXPECT_EQ(b.truth_cm, 64);
  EXPECT_THROW(box_stats(1, {}), DomainError);
}

TEST(Evaluation, DistributionExport) {
  FoldReport r;
  r.fold_id = 2;
  r.per_level_predictions = {{1, {15, 12, 14}}, {2, {20, 25}}, {9, {130}}};
  const auto dir = std::filesystem::temp_directory_path() / ("floodrank_eval_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const auto d = export_prediction_distribution(r, dir / "fold2");
  EXPECT_EQ(d.total, 6u);
  EXPECT_TRUE(d.overestimates_low);
  EXPECT_TRUE(d.underestimates_high);
  std::ifstream js(dir / "fold2.json");
  const auto j = nlohmann::json::parse(js);
  EXPECT_EQ(j["total"], 6);
  EXPECT_EQ(j["levels"][2]["single_point"], true);
  std::ifstream svg(dir / "fold2.svg");
  const std::string text((std::istreambuf_iterator<char>(svg)), {});
  EXPECT_NE(text.find("<svg"), std::string::npos);
  EXPECT_NE(text.find("<circle"), std::string::npos);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(prediction_distribution(FoldReport{}), DomainError);
}
