#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <thread>
#include <unistd.h>

#include "floodrank/annotation_server.hpp"
#include "floodrank/synthetic.hpp"

using namespace floodrank;
using namespace floodrank::annotation;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Pairs = std::vector<std::pair<std::string, std::string>>;

class StoreTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("floodrank_ann_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    synthetic::GeneratorConfig g;
    g.count = 8;
    g.image_size = 16;
    manifest_ = synthetic::generate_synthetic(g, dir_ / "images");
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path make_store(const Pairs& pairs) {
    const auto d = dir_ / "store";
    fs::create_directories(d);
    write_tasks(d / "tasks.jsonl", pairs);
    return d;
  }

  Pairs three() const {
    const auto& r = manifest_.records;
    return {{r[0].id, r[1].id}, {r[2].id, r[3].id}, {r[4].id, r[5].id}};
  }

  fs::path dir_;
  DatasetManifest manifest_;
};

// Serves a store on an ephemeral port for the lifetime of the object.
class RunningServer {
 public:
  RunningServer(AnnotationStore& store, const DatasetManifest& m) : server_(store, m) {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~RunningServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

 private:
  AnnotationServer server_;
  int port_ = 0;
  std::thread thread_;
};

httplib::Result vote(httplib::Client& c, std::int64_t task, const std::string& who, const std::string& choice) {
  return c.Post("/api/votes", json{{"task_id", task}, {"annotator_id", who}, {"choice", choice}}.dump(),
                "application/json");
}

std::int64_t next_id(httplib::Client& c, const std::string& who) {
  auto r = c.Get("/api/tasks/next?annotator=" + who);
  EXPECT_EQ(r->status, 200);
  const auto j = json::parse(r->body);
  if (j["status"] == "drained") return 0;
  return j["task"]["task_id"].get<std::int64_t>();
}

}  // namespace

TEST_F(StoreTest, WriteTasksRejectsBadPairs) {
  const auto& r = manifest_.records;
  EXPECT_THROW(write_tasks(dir_ / "t.jsonl", {{r[0].id, r[0].id}}), DomainError);
  EXPECT_THROW(write_tasks(dir_ / "t.jsonl", {{r[0].id, r[1].id}, {r[1].id, r[0].id}}), DomainError);
  EXPECT_THROW(AnnotationStore(dir_ / "nowhere"), IoError);
}

TEST_F(StoreTest, SamplePairsAreDistinct) {
  const auto p = sample_pairs(manifest_, 28, 4);
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& [a, b] : p) {
    EXPECT_NE(a, b);
    EXPECT_TRUE(seen.insert(std::minmax(a, b)).second);
  }
  EXPECT_THROW(sample_pairs(manifest_, 29, 4), DomainError);
  EXPECT_EQ(sample_pairs(manifest_, 10, 4), sample_pairs(manifest_, 10, 4));
  std::map<std::string, int> level;
  for (const auto& rec : manifest_.records) level[rec.id] = *rec.level;
  for (const auto& [a, b] : sample_pairs(manifest_, 5, 1, PairSampling::level_balanced))
    EXPECT_NE(level[a], level[b]);
}

TEST_F(StoreTest, FreshStoreServesSmallestId) {
  AnnotationStore s(make_store(three()));
  EXPECT_EQ(s.next_task("ann")->task_id, 1);
  EXPECT_EQ(s.tasks().size(), 3u);
}

TEST_F(StoreTest, FewestVotesFirst) {
  AnnotationStore s(make_store(three()));
  s.submit(1, "x", VoteChoice::a_higher);
  s.submit(1, "y", VoteChoice::a_higher);
  s.submit(3, "x", VoteChoice::b_higher);
  EXPECT_EQ(s.next_task("z")->task_id, 2);
  // Oracle: for every annotator, the served task has the minimum vote count
  // among open tasks that annotator has not voted on.
  s.submit(2, "z", VoteChoice::equal);
  for (const std::string who : {"x", "y", "z", "w"}) {
    std::optional<std::pair<std::size_t, std::int64_t>> best;
    for (const auto& t : s.tasks()) {
      if (t.status != TaskStatus::open) continue;
      const auto tally = s.tally(t.task_id);
      bool voted = false;
      if (who == "x") voted = t.task_id == 1 || t.task_id == 3;
      if (who == "y") voted = t.task_id == 1;
      if (who == "z") voted = t.task_id == 2;
      if (voted) continue;
      const std::pair<std::size_t, std::int64_t> key(tally.total(), t.task_id);
      if (!best || key < *best) best = key;
    }
    const auto got = s.next_task(who);
    ASSERT_EQ(bool(got), bool(best)) << who;
    if (got) EXPECT_EQ(got->task_id, best->second) << who;
  }
}

TEST_F(StoreTest, DrainedAfterVotingEverything) {
  AnnotationStore s(make_store(three()));
  for (int t = 1; t <= 3; ++t) s.submit(t, "ann", VoteChoice::a_higher);
  EXPECT_FALSE(s.next_task("ann"));
  EXPECT_TRUE(s.next_task("other"));
}

TEST_F(StoreTest, TaskClosesAtVoteQuota) {
  AnnotationStore s(make_store(three()), {2});
  s.submit(1, "a", VoteChoice::a_higher);
  s.submit(1, "b", VoteChoice::a_higher);
  EXPECT_EQ(s.task(1)->status, TaskStatus::done);
  EXPECT_EQ(s.next_task("c")->task_id, 2);
  EXPECT_EQ(s.stats().done, 1u);
}

TEST_F(StoreTest, DuplicateVoteKeepsOriginal) {
  AnnotationStore s(make_store(three()));
  const auto first = s.submit(2, "ann", VoteChoice::a_higher);
  ASSERT_EQ(first.status, SubmitStatus::accepted);
  const auto again = s.submit(2, "ann", VoteChoice::b_higher);
  EXPECT_EQ(again.status, SubmitStatus::duplicate);
  EXPECT_EQ(again.ack, first.ack);
  EXPECT_EQ(s.tally(2).total(), 1);
  EXPECT_EQ(s.tally(2).counts[0], 1);
  EXPECT_EQ(s.submit(99, "ann", VoteChoice::a_higher).status, SubmitStatus::unknown_task);
}

TEST_F(StoreTest, ReplayRestoresState) {
  const auto dir = make_store(three());
  {
    AnnotationStore s(dir);
    s.submit(1, "a", VoteChoice::a_higher);
    s.submit(1, "b", VoteChoice::a_higher);
    s.submit(2, "a", VoteChoice::unsure);
  }
  {
    std::ofstream torn(dir / "votes.jsonl", std::ios::app);
    torn << R"({"task_id":3,"annot)";
  }
  AnnotationStore s(dir);
  EXPECT_EQ(s.stats().votes, 3u);
  EXPECT_EQ(s.tally(1).counts[0], 2);
  EXPECT_EQ(s.submit(1, "a", VoteChoice::b_higher).status, SubmitStatus::duplicate);
  const auto ack = s.submit(3, "c", VoteChoice::equal).ack;
  EXPECT_EQ(ack.sequence, 4);
  EXPECT_TRUE(fs::exists(dir / "snapshot.json"));
  const auto snap = json::parse(std::ifstream(dir / "snapshot.json"));
  EXPECT_EQ(snap["votes"], 4);
}

TEST_F(StoreTest, ExportMajorityAndDeterminism) {
  AnnotationStore s(make_store(three()));
  for (auto [who, c] : std::vector<std::pair<std::string, VoteChoice>>{
           {"a", VoteChoice::a_higher}, {"b", VoteChoice::a_higher}, {"c", VoteChoice::b_higher}})
    s.submit(1, who, c);
  s.submit(2, "a", VoteChoice::equal);
  s.submit(2, "b", VoteChoice::equal);
  s.submit(3, "a", VoteChoice::b_higher);
  const auto labels = s.export_labels({3, 0.6});
  ASSERT_EQ(labels.size(), 1u);
  EXPECT_EQ(labels[0].id_a, three()[0].first);
  EXPECT_EQ(labels[0].sign.value(), 1);
  EXPECT_DOUBLE_EQ(*labels[0].confidence, 2.0 / 3.0);
  const auto loose = s.export_labels({1, 0.5});
  ASSERT_EQ(loose.size(), 2u);
  EXPECT_EQ(loose[1].sign.value(), -1);
  std::ostringstream a, b;
  write_pair_labels(a, s.export_labels({1, 0.5}));
  write_pair_labels(b, s.export_labels({1, 0.5}));
  EXPECT_EQ(a.str(), b.str());
}

TEST_F(StoreTest, ConcurrentVotesAllCounted) {
  AnnotationStore s(make_store(three()), {100});
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t)
    threads.emplace_back([&, t] {
      for (int k = 0; k < 10; ++k) s.submit(1 + k % 3, "w" + std::to_string(t) + "_" + std::to_string(k), VoteChoice::a_higher);
    });
  for (auto& t : threads) t.join();
  EXPECT_EQ(s.stats().votes, 80u);
  AnnotationStore reopened(s.directory(), {100});
  EXPECT_EQ(reopened.stats().votes, 80u);
}

// ---------------------------------------------------------------------------
// HTTP contract.

TEST_F(StoreTest, HttpNextTaskFairness) {
  AnnotationStore s(make_store(three()));
  RunningServer srv(s, manifest_);
  auto c = srv.client();
  EXPECT_EQ(next_id(c, "u"), 1);
  ASSERT_EQ(vote(c, 1, "p", "a_higher")->status, 201);
  ASSERT_EQ(vote(c, 1, "q", "a_higher")->status, 201);
  ASSERT_EQ(vote(c, 3, "p", "a_higher")->status, 201);
  EXPECT_EQ(next_id(c, "u"), 2);
  auto r = c.Get("/api/tasks/next?annotator=u");
  const auto j = json::parse(r->body);
  EXPECT_EQ(j["task"]["image_a"], "/api/images/" + j["task"]["id_a"].get<std::string>());
  EXPECT_EQ(j["task"]["status"], "open");
  EXPECT_EQ(c.Get("/api/tasks/next")->status, 400);
  for (int t = 1; t <= 3; ++t) vote(c, t, "u", "unsure");
  EXPECT_EQ(next_id(c, "u"), 0);
}

TEST_F(StoreTest, HttpVoteIdempotency) {
  AnnotationStore s(make_store(three()));
  RunningServer srv(s, manifest_);
  auto c = srv.client();
  auto first = vote(c, 2, "ann", "b_higher");
  ASSERT_EQ(first->status, 201);
  const auto ack = json::parse(first->body)["ack"];
  EXPECT_EQ(ack["choice"], "b_higher");
  auto dup = vote(c, 2, "ann", "a_higher");
  EXPECT_EQ(dup->status, 409);
  const auto body = json::parse(dup->body);
  EXPECT_TRUE(body.contains("error"));
  EXPECT_EQ(body["ack"], ack);
  EXPECT_EQ(json::parse(c.Get("/api/stats")->body)["votes"], 1);
  EXPECT_EQ(vote(c, 42, "ann", "a_higher")->status, 404);
  EXPECT_EQ(vote(c, 1, "ann", "sideways")->status, 400);
  EXPECT_EQ(c.Post("/api/votes", "{", "application/json")->status, 400);
  EXPECT_EQ(vote(c, 1, "", "a_higher")->status, 400);
}

TEST_F(StoreTest, HttpConcurrentVotes) {
  AnnotationStore s(make_store(three()));
  RunningServer srv(s, manifest_);
  std::vector<std::thread> threads;
  std::atomic<int> created{0};
  for (int t = 0; t < 2; ++t)
    threads.emplace_back([&, t] {
      auto c = srv.client();
      if (vote(c, 1, "ann" + std::to_string(t), "a_higher")->status == 201) ++created;
    });
  for (auto& t : threads) t.join();
  EXPECT_EQ(created, 2);
  EXPECT_EQ(s.tally(1).total(), 2);
}

TEST_F(StoreTest, HttpExportFiltering) {
  AnnotationStore s(make_store(three()));
  RunningServer srv(s, manifest_);
  auto c = srv.client();
  vote(c, 1, "a", "a_higher");
  vote(c, 1, "b", "a_higher");
  vote(c, 1, "c", "b_higher");
  vote(c, 2, "a", "equal");
  vote(c, 2, "b", "equal");
  vote(c, 3, "a", "a_higher");
  auto r = c.Get("/api/export?min_votes=3&min_agreement=0.6");
  ASSERT_EQ(r->status, 200);
  const auto arr = json::parse(r->body);
  ASSERT_EQ(arr.size(), 1u);
  EXPECT_EQ(arr[0]["sign"], 1);
  EXPECT_NEAR(arr[0]["confidence"].get<double>(), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(json::parse(c.Get("/api/export")->body).size(), 1u);
  const auto loose = c.Get("/api/export?min_votes=1&min_agreement=0.5");
  EXPECT_EQ(json::parse(loose->body).size(), 2u);
  EXPECT_EQ(loose->body, c.Get("/api/export?min_votes=1&min_agreement=0.5")->body);
  EXPECT_EQ(c.Get("/api/export?min_votes=abc")->status, 400);
  EXPECT_EQ(c.Get("/api/export?min_agreement=2")->status, 400);
}

TEST_F(StoreTest, HttpImagesAndStats) {
  AnnotationStore s(make_store(three()));
  RunningServer srv(s, manifest_);
  auto c = srv.client();
  const auto& rec = manifest_.records[0];
  auto img = c.Get("/api/images/" + rec.id);
  ASSERT_EQ(img->status, 200);
  EXPECT_EQ(img->get_header_value("Content-Type"), "image/png");
  std::ifstream is(manifest_.resolve(rec), std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(is)), {});
  EXPECT_EQ(img->body, bytes);
  const auto missing = c.Get("/api/images/nope");
  EXPECT_EQ(missing->status, 404);
  EXPECT_TRUE(json::parse(missing->body).contains("error"));

  vote(c, 1, "a", "a_higher");
  vote(c, 2, "b", "unsure");
  const auto st = json::parse(c.Get("/api/stats")->body);
  EXPECT_EQ(st["tasks"], 3);
  EXPECT_EQ(st["votes"], 2);
  EXPECT_EQ(st["annotators"], 2);
  EXPECT_EQ(st["open"], 3);
  EXPECT_EQ(st["votes_by_choice"]["unsure"], 1);
  EXPECT_EQ(c.Get("/api/stats")->get_header_value("Access-Control-Allow-Origin"), "*");
}
