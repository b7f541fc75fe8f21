#pragma once

// JSON-over-HTTP front end of the annotation store.
//
//   GET  /api/tasks/next?annotator=ID
//   POST /api/votes              {task_id, annotator_id, choice}
//   GET  /api/export?min_votes=&min_agreement=
//   GET  /api/images/{id}        PNG bytes
//   GET  /api/stats

#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <httplib.h>
// <resolv.h> defines _res, which clashes with Eigen parameter names.
#ifdef _res
#undef _res
#endif
#include <json.hpp>

#include "floodrank/annotation_store.hpp"
#include "floodrank/dataset.hpp"

namespace floodrank::annotation {

class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, DatasetManifest images)
      : store_(store), images_(std::move(images)) {
    for (const auto& r : images_.records) paths_[r.id] = images_.resolve(r);
    routes();
  }

  // Blocks until stop().
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  int bind_to_any_port(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void wait_until_ready() const { server_.wait_until_ready(); }
  void stop() { server_.stop(); }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& msg) {
    send_json(res, status, {{"error", msg}});
  }

  nlohmann::ordered_json task_json(const AnnotationTask& t) const {
    return {{"task_id", t.task_id},
            {"id_a", t.id_a},
            {"id_b", t.id_b},
            {"image_a", "/api/images/" + t.id_a},
            {"image_b", "/api/images/" + t.id_b},
            {"status", t.status == TaskStatus::open ? "open" : "done"}};
  }

  void routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                 {"Access-Control-Allow-Headers", "Content-Type"},
                                 {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server_.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server_.Get("/api/tasks/next", [this](const httplib::Request& req, httplib::Response& res) {
      const auto annotator = req.get_param_value("annotator");
      if (annotator.empty()) return send_error(res, 400, "missing annotator parameter");
      auto task = store_.next_task(annotator);
      if (!task) return send_json(res, 200, {{"status", "drained"}});
      send_json(res, 200, {{"status", "ok"}, {"task", task_json(*task)}});
    });

    server_.Post("/api/votes", [this](const httplib::Request& req, httplib::Response& res) {
      std::int64_t task_id = 0;
      std::string annotator;
      std::optional<VoteChoice> choice;
      try {
        const auto j = nlohmann::json::parse(req.body);
        task_id = j.at("task_id").get<std::int64_t>();
        annotator = j.at("annotator_id").get<std::string>();
        choice = parse_vote_choice(j.at("choice").get<std::string>());
      } catch (const nlohmann::json::exception& e) {
        return send_error(res, 400, std::string("bad vote body: ") + e.what());
      }
      if (!choice) return send_error(res, 400, "choice must be a_higher, b_higher, equal or unsure");
      if (annotator.empty()) return send_error(res, 400, "annotator_id must not be empty");
      const auto r = store_.submit(task_id, annotator, *choice);
      switch (r.status) {
        case SubmitStatus::accepted:
          return send_json(res, 201, {{"ack", to_json(r.ack)}});
        case SubmitStatus::duplicate:
          return send_json(res, 409, {{"error", "duplicate vote"}, {"ack", to_json(r.ack)}});
        case SubmitStatus::unknown_task:
          return send_error(res, 404, "unknown task " + std::to_string(task_id));
      }
    });

    server_.Get("/api/export", [this](const httplib::Request& req, httplib::Response& res) {
      MajorityFilter f;
      try {
        if (req.has_param("min_votes")) f.min_votes = std::stoi(req.get_param_value("min_votes"));
        if (req.has_param("min_agreement"))
          f.min_agreement = std::stod(req.get_param_value("min_agreement"));
      } catch (const std::exception&) {
        return send_error(res, 400, "min_votes and min_agreement must be numbers");
      }
      if (f.min_votes < 1 || !(f.min_agreement >= 0.0 && f.min_agreement <= 1.0))
        return send_error(res, 400, "min_votes must be >= 1 and min_agreement in [0, 1]");
      auto arr = nlohmann::ordered_json::array();
      for (const auto& l : store_.export_labels(f)) arr.push_back(to_json(l));
      send_json(res, 200, arr);
    });

    server_.Get(R"(/api/images/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto it = paths_.find(req.matches[1].str());
      if (it == paths_.end()) return send_error(res, 404, "unknown image " + req.matches[1].str());
      std::ifstream is(it->second, std::ios::binary);
      if (!is) return send_error(res, 404, "image file missing for " + it->first);
      std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
      res.status = 200;
      res.set_content(std::move(bytes), "image/png");
    });

    server_.Get("/api/stats", [this](const httplib::Request&, httplib::Response& res) {
      const auto s = store_.stats();
      send_json(res, 200,
                {{"tasks", s.tasks},
                 {"open", s.open},
                 {"done", s.done},
                 {"votes", s.votes},
                 {"annotators", s.annotators},
                 {"votes_by_choice",
                  {{"a_higher", s.by_choice[0]},
                   {"b_higher", s.by_choice[1]},
                   {"equal", s.by_choice[2]},
                   {"unsure", s.by_choice[3]}}}});
    });

    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const DomainError& e) {
        send_error(res, 400, e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    });
  }

  AnnotationStore& store_;
  DatasetManifest images_;
  std::map<std::string, std::filesystem::path> paths_;
  httplib::Server server_;
};

}  // namespace floodrank::annotation
