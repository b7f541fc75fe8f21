#pragma once

// Pair-label files (JSON Lines: id_a, id_b, sign, optional confidence) and the
// majority rule that turns human votes into ranking labels.

#include <array>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "floodrank/errors.hpp"
#include "floodrank/pairing.hpp"

namespace floodrank {

struct PairLabel {
  std::string id_a;
  std::string id_b;
  RankTarget sign{1};
  std::optional<double> confidence;  // majority fraction in (0.5, 1]

  friend bool operator==(const PairLabel&, const PairLabel&) = default;
};

inline nlohmann::ordered_json to_json(const PairLabel& p) {
  nlohmann::ordered_json j;
  j["id_a"] = p.id_a;
  j["id_b"] = p.id_b;
  j["sign"] = p.sign.value();
  if (p.confidence) j["confidence"] = *p.confidence;
  return j;
}

inline void write_pair_labels(std::ostream& os, const std::vector<PairLabel>& labels) {
  for (const auto& p : labels) os << to_json(p).dump() << '\n';
}

inline void write_pair_labels(const std::filesystem::path& path,
                              const std::vector<PairLabel>& labels) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  write_pair_labels(os, labels);
}

inline std::vector<PairLabel> read_pair_labels(std::istream& is, const std::string& source = "<stream>") {
  std::vector<PairLabel> out;
  std::string line;
  for (int lineno = 1; std::getline(is, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PairLabel p{j.at("id_a").get<std::string>(), j.at("id_b").get<std::string>(),
                  RankTarget(j.at("sign").get<int>()), std::nullopt};
      if (p.id_a == p.id_b) throw DomainError("pair of an image with itself");
      if (j.contains("confidence") && !j["confidence"].is_null()) {
        const double c = j["confidence"].get<double>();
        if (!(c > 0.5 && c <= 1.0)) throw DomainError("confidence outside (0.5, 1]");
        p.confidence = c;
      }
      out.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<PairLabel> read_pair_labels(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  return read_pair_labels(is, path.string());
}

enum class VoteChoice { a_higher = 0, b_higher = 1, equal = 2, unsure = 3 };

inline std::string_view to_string(VoteChoice c) {
  switch (c) {
    case VoteChoice::a_higher: return "a_higher";
    case VoteChoice::b_higher: return "b_higher";
    case VoteChoice::equal: return "equal";
    case VoteChoice::unsure: return "unsure";
  }
  return "unsure";
}

inline std::optional<VoteChoice> parse_vote_choice(std::string_view s) {
  if (s == "a_higher") return VoteChoice::a_higher;
  if (s == "b_higher") return VoteChoice::b_higher;
  if (s == "equal") return VoteChoice::equal;
  if (s == "unsure") return VoteChoice::unsure;
  return std::nullopt;
}

struct VoteTally {
  std::array<int, 4> counts{};

  void add(VoteChoice c) { ++counts[static_cast<int>(c)]; }
  int total() const { return counts[0] + counts[1] + counts[2] + counts[3]; }
};

struct MajorityFilter {
  int min_votes = 3;
  double min_agreement = 0.66;
};

// A label is emitted only for a strict majority (> 1/2 of all votes) of a_higher or
// b_higher that also meets the vote-count and agreement thresholds.
inline std::optional<PairLabel> majority_label(const std::string& id_a, const std::string& id_b,
                                               const VoteTally& tally, MajorityFilter filter) {
  const int total = tally.total();
  if (total == 0 || total < filter.min_votes) return std::nullopt;
  int best = 0;
  for (int c = 1; c < 4; ++c)
    if (tally.counts[c] > tally.counts[best]) best = c;
  const double frac = static_cast<double>(tally.counts[best]) / total;
  if (frac <= 0.5 || frac < filter.min_agreement) return std::nullopt;
  const auto choice = static_cast<VoteChoice>(best);
  if (choice != VoteChoice::a_higher && choice != VoteChoice::b_higher) return std::nullopt;
  return PairLabel{id_a, id_b, RankTarget(choice == VoteChoice::a_higher ? 1 : -1), frac};
}

}  // namespace floodrank
