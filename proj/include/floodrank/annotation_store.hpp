#pragma once

// Task and vote storage for pairwise annotation. Tasks live in tasks.jsonl;
// votes are appended to votes.jsonl, which is replayed on open. snapshot.json is
// rewritten after each accepted vote and is never read back.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "floodrank/dataset.hpp"
#include "floodrank/errors.hpp"
#include "floodrank/pair_labels.hpp"

namespace floodrank::annotation {

enum class TaskStatus { open, done };

struct AnnotationTask {
  std::int64_t task_id = 0;
  std::string id_a;
  std::string id_b;
  TaskStatus status = TaskStatus::open;
};

struct VoteAck {
  std::int64_t task_id = 0;
  std::string annotator_id;
  VoteChoice choice = VoteChoice::unsure;
  std::string timestamp;
  std::int64_t sequence = 0;  // position in the vote log, 1-based

  friend bool operator==(const VoteAck&, const VoteAck&) = default;
};

inline nlohmann::ordered_json to_json(const VoteAck& a) {
  nlohmann::ordered_json j;
  j["task_id"] = a.task_id;
  j["annotator_id"] = a.annotator_id;
  j["choice"] = std::string(to_string(a.choice));
  j["timestamp"] = a.timestamp;
  j["sequence"] = a.sequence;
  return j;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char frac[8];
  std::snprintf(frac, sizeof frac, ".%03dZ", int(ms));
  return std::string(buf) + frac;
}

enum class PairSampling { uniform, level_balanced };

// Random distinct unordered pairs of manifest ids. level_balanced first draws two
// distinct levels uniformly, then one image from each.
inline std::vector<std::pair<std::string, std::string>> sample_pairs(
    const DatasetManifest& m, std::size_t count, std::uint64_t seed,
    PairSampling mode = PairSampling::uniform) {
  const std::size_t n = m.records.size();
  if (n < 2) throw DomainError("pair sampling needs at least 2 images");
  std::map<int, std::vector<std::size_t>> by_level;
  if (mode == PairSampling::level_balanced)
    for (std::size_t i = 0; i < n; ++i) by_level[level_of(m.records[i])].push_back(i);
  std::size_t total = n * (n - 1) / 2;
  if (mode == PairSampling::level_balanced) {
    if (by_level.size() < 2) throw DomainError("level-balanced sampling needs at least 2 levels");
    std::size_t same = 0;
    for (const auto& [l, v] : by_level) same += v.size() * (v.size() - 1) / 2;
    total -= same;
  }
  if (count > total)
    throw DomainError("requested " + std::to_string(count) + " pairs but only " +
                      std::to_string(total) + " exist");
  std::vector<const std::vector<std::size_t>*> levels;
  for (const auto& [l, v] : by_level) levels.push_back(&v);
  std::mt19937_64 rng(seed);
  auto draw = [&](std::size_t hi) { return std::uniform_int_distribution<std::size_t>(0, hi - 1)(rng); };
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::vector<std::pair<std::string, std::string>> out;
  while (out.size() < count) {
    std::size_t a, b;
    if (mode == PairSampling::uniform) {
      a = draw(n);
      b = draw(n);
    } else {
      const auto la = draw(levels.size()), lb = draw(levels.size());
      if (la == lb) continue;
      a = (*levels[la])[draw(levels[la]->size())];
      b = (*levels[lb])[draw(levels[lb]->size())];
    }
    if (a == b || !seen.insert(std::minmax(a, b)).second) continue;
    out.emplace_back(m.records[a].id, m.records[b].id);
  }
  return out;
}

inline void write_tasks(const std::filesystem::path& path,
                        const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::set<std::pair<std::string, std::string>> seen;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  std::int64_t id = 0;
  for (const auto& [a, b] : pairs) {
    if (a == b) throw DomainError("task pairs an image with itself: " + a);
    if (!seen.insert(std::minmax(a, b)).second)
      throw DomainError("duplicate task for pair " + a + "/" + b);
    os << nlohmann::ordered_json{{"task_id", ++id}, {"id_a", a}, {"id_b", b}}.dump() << '\n';
  }
}

struct StoreOptions {
  int votes_per_task = 3;  // a task closes once it holds this many votes
};

struct StoreStats {
  std::size_t tasks = 0;
  std::size_t open = 0;
  std::size_t done = 0;
  std::size_t votes = 0;
  std::size_t annotators = 0;
  std::array<std::size_t, 4> by_choice{};
};

enum class SubmitStatus { accepted, duplicate, unknown_task };

struct SubmitResult {
  SubmitStatus status = SubmitStatus::accepted;
  VoteAck ack;  // for duplicates: the originally stored ack
};

class AnnotationStore {
 public:
  // Opens <dir>/tasks.jsonl and replays <dir>/votes.jsonl if present.
  explicit AnnotationStore(std::filesystem::path dir, StoreOptions opts = {})
      : dir_(std::move(dir)), opts_(opts) {
    if (opts_.votes_per_task < 1) throw ConfigError("votes_per_task must be >= 1");
    load_tasks();
    replay_votes();
    log_.open(dir_ / "votes.jsonl", std::ios::app);
    if (!log_) throw IoError("cannot append to " + (dir_ / "votes.jsonl").string());
  }

  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  const std::filesystem::path& directory() const { return dir_; }

  // Open task with the fewest votes (smallest task_id on ties) that this
  // annotator has not voted on yet; nullopt when drained.
  std::optional<AnnotationTask> next_task(const std::string& annotator) const {
    std::shared_lock lock(mu_);
    const Entry* best = nullptr;
    for (const auto& [id, e] : tasks_) {
      if (status_of(e) != TaskStatus::open || e.voters.count(annotator)) continue;
      if (!best || e.acks.size() < best->acks.size()) best = &e;
    }
    if (!best) return std::nullopt;
    return view(*best);
  }

  std::optional<AnnotationTask> task(std::int64_t id) const {
    std::shared_lock lock(mu_);
    auto it = tasks_.find(id);
    if (it == tasks_.end()) return std::nullopt;
    return view(it->second);
  }

  std::vector<AnnotationTask> tasks() const {
    std::shared_lock lock(mu_);
    std::vector<AnnotationTask> out;
    for (const auto& [id, e] : tasks_) out.push_back(view(e));
    return out;
  }

  SubmitResult submit(std::int64_t task_id, const std::string& annotator, VoteChoice choice) {
    if (annotator.empty()) throw DomainError("annotator_id must not be empty");
    std::unique_lock lock(mu_);
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) return {SubmitStatus::unknown_task, {}};
    auto& e = it->second;
    if (auto v = e.voters.find(annotator); v != e.voters.end())
      return {SubmitStatus::duplicate, e.acks[v->second]};
    VoteAck ack{task_id, annotator, choice, utc_timestamp(), ++sequence_};
    log_ << to_json(ack).dump() << '\n';
    log_.flush();
    if (!log_) throw IoError("vote log write failed");
    record(e, ack);
    write_snapshot_locked();
    return {SubmitStatus::accepted, ack};
  }

  // Majority labels ordered by task id; equal, unsure and below-threshold tasks
  // are left out.
  std::vector<PairLabel> export_labels(MajorityFilter filter = {}) const {
    std::shared_lock lock(mu_);
    std::vector<PairLabel> out;
    for (const auto& [id, e] : tasks_)
      if (auto label = majority_label(e.task.id_a, e.task.id_b, e.tally, filter)) out.push_back(*label);
    return out;
  }

  VoteTally tally(std::int64_t task_id) const {
    std::shared_lock lock(mu_);
    return tasks_.at(task_id).tally;
  }

  StoreStats stats() const {
    std::shared_lock lock(mu_);
    StoreStats s;
    std::set<std::string> annotators;
    s.tasks = tasks_.size();
    for (const auto& [id, e] : tasks_) {
      (status_of(e) == TaskStatus::open ? s.open : s.done) += 1;
      s.votes += e.acks.size();
      for (const auto& a : e.acks) annotators.insert(a.annotator_id);
      for (int c = 0; c < 4; ++c) s.by_choice[c] += e.tally.counts[c];
    }
    s.annotators = annotators.size();
    return s;
  }

 private:
  struct Entry {
    AnnotationTask task;
    std::vector<VoteAck> acks;
    std::map<std::string, std::size_t> voters;  // annotator -> index in acks
    VoteTally tally;
  };

  TaskStatus status_of(const Entry& e) const {
    return int(e.acks.size()) >= opts_.votes_per_task ? TaskStatus::done : TaskStatus::open;
  }

  AnnotationTask view(const Entry& e) const {
    auto t = e.task;
    t.status = status_of(e);
    return t;
  }

  void record(Entry& e, const VoteAck& ack) {
    e.voters[ack.annotator_id] = e.acks.size();
    e.acks.push_back(ack);
    e.tally.add(ack.choice);
  }

  void load_tasks() {
    const auto path = dir_ / "tasks.jsonl";
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::set<std::pair<std::string, std::string>> pairs;
    std::string line;
    for (int lineno = 1; std::getline(is, line); ++lineno) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        Entry e;
        e.task.task_id = j.at("task_id").get<std::int64_t>();
        e.task.id_a = j.at("id_a").get<std::string>();
        e.task.id_b = j.at("id_b").get<std::string>();
        if (e.task.id_a == e.task.id_b) throw DomainError("task pairs an image with itself");
        if (!pairs.insert(std::minmax(e.task.id_a, e.task.id_b)).second)
          throw DomainError("second task for the same pair");
        if (!tasks_.emplace(e.task.task_id, std::move(e)).second)
          throw DomainError("duplicate task_id");
      } catch (const std::exception& ex) {
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
      }
    }
  }

  void replay_votes() {
    const auto path = dir_ / "votes.jsonl";
    std::ifstream is(path);
    if (!is) return;
    std::string line;
    for (int lineno = 1; std::getline(is, line); ++lineno) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        // A torn final line after a crash; the vote was never acknowledged.
        if (is.peek() == std::char_traits<char>::eof()) {
          std::clog << "warning: ignoring truncated last line of " << path << '\n';
          break;
        }
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed vote");
      }
      try {
        VoteAck ack;
        ack.task_id = j.at("task_id").get<std::int64_t>();
        ack.annotator_id = j.at("annotator_id").get<std::string>();
        auto c = parse_vote_choice(j.at("choice").get<std::string>());
        if (!c) throw DomainError("unknown choice");
        ack.choice = *c;
        ack.timestamp = j.value("timestamp", "");
        ack.sequence = j.value("sequence", sequence_ + 1);
        auto it = tasks_.find(ack.task_id);
        if (it == tasks_.end()) throw DomainError("vote for unknown task");
        if (it->second.voters.count(ack.annotator_id)) continue;
        sequence_ = std::max(sequence_, ack.sequence);
        record(it->second, ack);
      } catch (const std::exception& ex) {
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
      }
    }
  }

  void write_snapshot_locked() const {
    nlohmann::ordered_json j;
    j["votes"] = sequence_;
    auto& tasks = j["tasks"] = nlohmann::ordered_json::array();
    for (const auto& [id, e] : tasks_) {
      const auto& c = e.tally.counts;
      tasks.push_back({{"task_id", id},
                       {"status", status_of(e) == TaskStatus::open ? "open" : "done"},
                       {"a_higher", c[0]},
                       {"b_higher", c[1]},
                       {"equal", c[2]},
                       {"unsure", c[3]}});
    }
    const auto tmp = dir_ / "snapshot.json.tmp";
    {
      std::ofstream os(tmp);
      if (!os) throw IoError("cannot write " + tmp.string());
      os << j.dump(1) << '\n';
    }
    std::filesystem::rename(tmp, dir_ / "snapshot.json");
  }

  std::filesystem::path dir_;
  StoreOptions opts_;
  mutable std::shared_mutex mu_;
  std::map<std::int64_t, Entry> tasks_;
  std::ofstream log_;
  std::int64_t sequence_ = 0;
};

}  // namespace floodrank::annotation
