#pragma once

// Dataset manifests (JSON Lines), the strong/weak subset roles, stratified
// cross-validation folds and the hold-out split of the weak set.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "floodrank/errors.hpp"
#include "floodrank/level_scale.hpp"
#include "floodrank/pair_labels.hpp"

namespace floodrank {

struct SampleRecord {
  std::string id;
  std::string image_uri;
  std::optional<double> depth_cm;
  std::optional<int> level;
  bool source_flooded = false;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

// Depth implied by whichever label is present (depth wins when both are).
inline double depth_of(const SampleRecord& r) {
  if (r.depth_cm) return *r.depth_cm;
  return level_to_cm(static_cast<double>(*r.level));
}

inline int level_of(const SampleRecord& r) {
  if (r.level) return *r.level;
  return nearest_level(*r.depth_cm);
}

inline void validate_record(const SampleRecord& r) {
  if (r.id.empty()) throw DomainError("record without id");
  if (!r.depth_cm && !r.level) throw DomainError("record '" + r.id + "' has neither depth_cm nor level");
  if (r.depth_cm) DepthCm{*r.depth_cm};
  if (r.level && (*r.level < 0 || *r.level > kMaxLevel))
    throw DomainError("record '" + r.id + "' level outside [0, 10]");
  if (r.depth_cm && r.level &&
      std::abs(level_to_cm(static_cast<double>(*r.level)) - *r.depth_cm) > 0.5)
    throw DomainError("record '" + r.id + "': level " + std::to_string(*r.level) +
                      " inconsistent with depth_cm " + std::to_string(*r.depth_cm));
}

enum class LabelKind { strong, weak };

struct DatasetManifest {
  std::string name;
  std::vector<SampleRecord> records;
  LabelKind label_kind = LabelKind::strong;
  std::filesystem::path base_dir;  // relative image_uri values resolve against this

  std::filesystem::path resolve(const SampleRecord& r) const {
    std::filesystem::path p(r.image_uri);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  }

  // Same manifest restricted to the given ids, in the given order.
  DatasetManifest subset(const std::vector<std::string>& ids, std::string sub_name = {}) const {
    std::map<std::string, const SampleRecord*> by_id;
    for (const auto& r : records) by_id[r.id] = &r;
    DatasetManifest out{sub_name.empty() ? name : std::move(sub_name), {}, label_kind, base_dir};
    out.records.reserve(ids.size());
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DomainError("unknown record id '" + id + "'");
      out.records.push_back(*it->second);
    }
    return out;
  }
};

inline nlohmann::ordered_json to_json(const SampleRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["image_uri"] = r.image_uri;
  if (r.depth_cm) j["depth_cm"] = *r.depth_cm;
  if (r.level) j["level"] = *r.level;
  j["source_flooded"] = r.source_flooded;
  return j;
}

inline SampleRecord record_from_json(const nlohmann::json& j) {
  SampleRecord r;
  r.id = j.at("id").get<std::string>();
  r.image_uri = j.value("image_uri", std::string{});
  if (j.contains("depth_cm") && !j["depth_cm"].is_null()) r.depth_cm = j["depth_cm"].get<double>();
  if (j.contains("level") && !j["level"].is_null()) {
    const double l = j["level"].get<double>();
    if (l != std::floor(l)) throw DomainError("level must be an integer");
    r.level = static_cast<int>(l);
  }
  if (j.contains("source_flooded") && !j["source_flooded"].is_null())
    r.source_flooded = j["source_flooded"].get<bool>();
  else
    r.source_flooded = depth_of(r) > 0.0;
  return r;
}

inline DatasetManifest parse_manifest(std::istream& is, const std::string& source,
                                      LabelKind kind = LabelKind::strong) {
  DatasetManifest m;
  m.name = source;
  m.label_kind = kind;
  std::unordered_set<std::string> seen;
  std::string line;
  for (int lineno = 1; std::getline(is, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    SampleRecord r;
    try {
      r = record_from_json(nlohmann::json::parse(line));
      validate_record(r);
    } catch (const std::exception& e) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!seen.insert(r.id).second)
      throw ParseError(source + ":" + std::to_string(lineno) + ": duplicate id '" + r.id + "'");
    m.records.push_back(std::move(r));
  }
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path,
                                     LabelKind kind = LabelKind::strong) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  auto m = parse_manifest(is, path.string(), kind);
  m.name = path.stem().string();
  m.base_dir = path.parent_path();
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : m.records) os << to_json(r).dump() << '\n';
}

struct FoldSpec {
  int fold_id = 0;  // 1-based
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

struct FoldPlan {
  std::vector<FoldSpec> folds;
  std::vector<std::vector<std::string>> parts;
  std::vector<int> under_populated_levels;  // levels with fewer than k samples
};

// Splits the strong set into k parts with per-level counts differing by at most
// one, then rotates: fold i tests on part i, validates on part i+1 and trains on
// the remaining k-2 parts. Pure function of (manifest, k, seed).
inline FoldPlan stratified_folds(const DatasetManifest& manifest, int k = 6,
                                 std::uint64_t seed = 0) {
  if (manifest.records.empty()) throw DomainError("cannot fold an empty manifest");
  if (k < 3) throw DomainError("stratified folds need k >= 3 (train/val/test)");

  std::map<int, std::vector<std::string>> by_level;
  for (const auto& r : manifest.records) by_level[level_of(r)].push_back(r.id);

  FoldPlan plan;
  plan.parts.resize(k);
  std::mt19937_64 rng(seed);
  std::size_t cursor = 0;  // round-robin continues across levels to balance part sizes
  for (auto& [level, ids] : by_level) {
    if (static_cast<int>(ids.size()) < k) plan.under_populated_levels.push_back(level);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (const auto& id : ids) plan.parts[cursor++ % k].push_back(id);
  }
  if (!plan.under_populated_levels.empty())
    std::clog << "stratified_folds: " << plan.under_populated_levels.size()
              << " level(s) have fewer than " << k << " samples; stratification is degraded\n";

  for (int f = 0; f < k; ++f) {
    FoldSpec spec;
    spec.fold_id = f + 1;
    spec.test = plan.parts[f];
    spec.val = plan.parts[(f + 1) % k];
    for (int p = 0; p < k; ++p)
      if (p != f && p != (f + 1) % k)
        spec.train.insert(spec.train.end(), plan.parts[p].begin(), plan.parts[p].end());
    plan.folds.push_back(std::move(spec));
  }
  return plan;
}

struct HoldoutSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

inline HoldoutSplit holdout_split(const DatasetManifest& manifest, double train_fraction = 0.8,
                                  std::uint64_t seed = 0) {
  const auto n = manifest.records.size();
  if (n < 5) throw DomainError("hold-out split needs at least 5 records, got " + std::to_string(n));
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw DomainError("train fraction must be inside (0, 1)");
  std::vector<std::string> ids;
  ids.reserve(n);
  for (const auto& r : manifest.records) ids.push_back(r.id);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  HoldoutSplit s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return s;
}

struct RankExportOptions {
  std::optional<std::size_t> max_pairs;  // uniform sample without replacement when set
  std::uint64_t seed = 0;
};

// Pair labels for every distinct-level pair of records (equal levels omitted).
// Records are compared by their integer level.
inline std::vector<PairLabel> export_rank_dataset(const DatasetManifest& manifest,
                                                  RankExportOptions opts = {}) {
  std::vector<PairLabel> out;
  const auto& rs = manifest.records;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    const int li = level_of(rs[i]);
    for (std::size_t j = i + 1; j < rs.size(); ++j) {
      const int lj = level_of(rs[j]);
      if (li == lj) continue;
      out.push_back({rs[i].id, rs[j].id, RankTarget(li > lj ? 1 : -1), std::nullopt});
    }
  }
  if (opts.max_pairs && out.size() > *opts.max_pairs) {
    std::mt19937_64 rng(opts.seed);
    std::vector<std::size_t> idx(out.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(*opts.max_pairs);
    std::sort(idx.begin(), idx.end());
    std::vector<PairLabel> sampled;
    sampled.reserve(idx.size());
    for (auto i : idx) sampled.push_back(std::move(out[i]));
    out = std::move(sampled);
  }
  return out;
}

// Checks a label file against a manifest: every id must be known.
inline void validate_pair_labels(const std::vector<PairLabel>& labels,
                                 const DatasetManifest& manifest) {
  std::unordered_set<std::string> ids;
  for (const auto& r : manifest.records) ids.insert(r.id);
  for (const auto& p : labels) {
    for (const auto* id : {&p.id_a, &p.id_b})
      if (!ids.count(*id)) throw DomainError("pair label references unknown id '" + *id + "'");
  }
}

}  // namespace floodrank
