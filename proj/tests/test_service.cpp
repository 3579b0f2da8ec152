#include "ncsde/service.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

using namespace ncsde;
namespace fs = std::filesystem;

namespace {

// Service plus an in-process server on an ephemeral port.
class Running {
 public:
  Running(const std::string& dir, unsigned workers = 1, std::size_t queue = 64)
      : service_(ServiceOptions{dir, NCSDE_SCHEMA_DIR, workers, queue}) {
    service_.mount(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~Running() {
    server_.stop();
    thread_.join();
    service_.stop();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(300, 0);
    return c;
  }
  Service& service() { return service_; }

 private:
  Service service_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

// Responses are kept for the schema check.
void keep(const std::string& schema, const std::string& name, const std::string& body) {
  const fs::path dir = fs::path(NCSDE_RESPONSE_DIR) / schema;
  fs::create_directories(dir);
  std::ofstream(dir / (name + ".json")) << body;
}

Json body_of(const httplib::Result& r) { return Json::parse(r->body); }

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ncsde_service_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string small_csv() {
  std::string csv = "x,y,z\n";
  for (int t = 0; t < 64; ++t)
    csv += std::to_string(std::sin(0.3 * t) + 0.01 * t) + "," + std::to_string(std::cos(0.7 * t * t)) + "," +
           std::to_string((t * 37 % 11) - 5.0) + "\n";
  return csv;
}

std::string simulate(httplib::Client& c, long n, long m, int seed) {
  const auto r = c.Post("/datasets/simulate", Json{{"n", n}, {"m", m}, {"seed", seed}}.dump(), "application/json");
  EXPECT_EQ(r->status, 201);
  return body_of(r).at("id");
}

std::string submit(httplib::Client& c, const std::string& ds, const Json& config) {
  const auto r = c.Post("/fits", Json{{"dataset_id", ds}, {"config", config}}.dump(), "application/json");
  EXPECT_EQ(r->status, 202) << r->body;
  return body_of(r).at("job_id");
}

}  // namespace

TEST(Service, DatasetLifecycle) {
  const fs::path dir = fresh_dir("datasets");
  Running run(dir.string());
  auto c = run.client();
  const auto created = c.Post("/datasets", small_csv(), "text/csv");
  ASSERT_EQ(created->status, 201);
  keep("dataset_created", "upload", created->body);
  const Json j = body_of(created);
  EXPECT_EQ(j.at("n"), 64);
  EXPECT_EQ(j.at("m"), 3);
  EXPECT_EQ(j.at("content_hash"), sha256_hex(small_csv()));
  EXPECT_TRUE(fs::exists(dir / "objects" / (j.at("content_hash").get<std::string>() + ".csv")));

  const std::string id = j.at("id");
  const auto got = c.Get("/datasets/" + id);
  ASSERT_EQ(got->status, 200);
  keep("dataset", "upload", got->body);
  EXPECT_EQ(body_of(got).at("labels"), (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_FALSE(body_of(got).at("has_reference"));

  const auto list = c.Get("/datasets");
  keep("dataset_list", "one", list->body);
  EXPECT_EQ(body_of(list).size(), 1u);

  const auto pg = c.Get("/datasets/" + id + "/periodogram");
  ASSERT_EQ(pg->status, 200);
  keep("periodogram", "full", pg->body);
  EXPECT_EQ(body_of(pg).at("grid").size(), 31u);
  const auto band = c.Get("/datasets/" + id + "/periodogram?truncate=10");
  EXPECT_EQ(body_of(band).at("ordinates").size(), 10u);
  EXPECT_EQ(c.Get("/datasets/" + id + "/periodogram?truncate=32")->status, 400);
  EXPECT_EQ(c.Get("/datasets/" + id + "/periodogram?truncate=abc")->status, 400);

  EXPECT_EQ(c.Get("/datasets/" + id + "/elbow?kmax=3&L=10")->status, 200);
  EXPECT_EQ(c.Get("/datasets/" + id + "/elbow?kmax=4")->status, 400);
  EXPECT_EQ(c.Get("/datasets/" + id + "/elbow?kmax=2")->status, 400);
}

TEST(Service, RejectsBadInput) {
  Running run(fresh_dir("bad").string());
  auto c = run.client();
  const auto bad = c.Post("/datasets", "a,b\n1,2\n3,oops\n", "text/csv");
  EXPECT_EQ(bad->status, 400);
  keep("error", "parse", bad->body);
  EXPECT_EQ(body_of(bad).at("line"), 3);
  EXPECT_EQ(body_of(bad).at("column"), 2);
  EXPECT_EQ(c.Post("/datasets", "", "text/csv")->status, 400);
  EXPECT_EQ(c.Post("/datasets", "a\n1\n2\n", "text/csv")->status, 400);
  const auto missing = c.Get("/datasets/ds999");
  EXPECT_EQ(missing->status, 404);
  keep("error", "missing", missing->body);
  EXPECT_EQ(c.Get("/fits/fit999")->status, 404);
  EXPECT_EQ(c.Post("/fits", "{not json", "application/json")->status, 400);
  EXPECT_EQ(c.Post("/fits", Json{{"dataset_id", "ds999"}}.dump(), "application/json")->status, 404);
  EXPECT_EQ(c.Post("/fits", Json{{"config", Json::object()}}.dump(), "application/json")->status, 422);

  const std::string ds = simulate(c, 100, 6, 1);
  auto status = [&](const Json& config) {
    return c.Post("/fits", Json{{"dataset_id", ds}, {"config", config}}.dump(), "application/json")->status;
  };
  EXPECT_EQ(status({{"K", 7}}), 422);
  EXPECT_EQ(status({{"K", 0}}), 422);
  EXPECT_EQ(status({{"L", 2}}), 422);
  EXPECT_EQ(status({{"lambda", "fixed:-1"}}), 422);
  EXPECT_EQ(status({{"lambda", "never"}}), 422);
  EXPECT_EQ(status({{"penalty", "diff:40"}}), 422);
  EXPECT_EQ(status({{"truncate", 50}}), 422);
  EXPECT_EQ(status({{"K", "three"}}), 422);
  const auto sim_bad = c.Post("/datasets/simulate", Json{{"models", {{1.0, 0.0, 0.0}}}}.dump(), "application/json");
  EXPECT_EQ(sim_bad->status, 400);
}

TEST(Service, FitJobAndResults) {
  Running run(fresh_dir("fits").string());
  auto c = run.client();
  const std::string ds = simulate(c, 400, 30, 3);
  const auto created = c.Post("/fits", Json{{"dataset_id", ds}, {"config", {{"K", 3}}}}.dump(), "application/json");
  ASSERT_EQ(created->status, 202);
  keep("fit_created", "one", created->body);
  const std::string id = body_of(created).at("job_id");
  run.service().wait_idle();

  const auto job = c.Get("/fits/" + id);
  ASSERT_EQ(job->status, 200);
  keep("fit_job", "done", job->body);
  const Json j = body_of(job);
  ASSERT_EQ(j.at("state"), "done") << job->body;
  EXPECT_TRUE(j.at("result").at("converged"));
  EXPECT_EQ(j.at("config").at("K"), 3);
  EXPECT_EQ(j.at("config").at("penalty").at("kind"), "second_derivative");
  const auto trace = j.at("result").at("objective_trace").get<std::vector<double>>();
  EXPECT_EQ(j.at("progress").at("iteration"), static_cast<int>(trace.size()));
  keep("fit_list", "one", c.Get("/fits")->body);

  const auto sdf = c.Get("/fits/" + id + "/sdf");
  ASSERT_EQ(sdf->status, 200);
  keep("sdf", "done", sdf->body);
  EXPECT_EQ(body_of(sdf).at("values").size(), 199u);
  EXPECT_EQ(body_of(sdf).at("values")[0].size(), 30u);

  const auto scores = c.Get("/fits/" + id + "/scores");
  keep("scores", "done", scores->body);
  EXPECT_EQ(body_of(scores).at("scores").size(), 30u);
  EXPECT_EQ(body_of(scores).at("theta").size(), 40u);

  const auto dend = c.Get("/fits/" + id + "/dendrogram?k=3");
  ASSERT_EQ(dend->status, 200);
  keep("dendrogram", "cut", dend->body);
  EXPECT_EQ(body_of(dend).at("merges").size(), 29u);
  keep("dendrogram", "plain", c.Get("/fits/" + id + "/dendrogram")->body);

  const auto one = c.Get("/fits/" + id + "/clusters?k=1");
  ASSERT_EQ(one->status, 200);
  keep("clusters", "k1", one->body);
  EXPECT_EQ(body_of(one).at("labels"), std::vector<int>(30, 1));
  const auto three = c.Get("/fits/" + id + "/clusters?k=3");
  const auto labels = body_of(three).at("labels").get<std::vector<int>>();
  const auto truth = body_of(c.Get("/datasets/" + ds)).at("truth").get<std::vector<int>>();
  EXPECT_GT(adjusted_rand_index(truth, labels), 0.9);
  EXPECT_EQ(c.Get("/fits/" + id + "/clusters")->status, 400);
  EXPECT_EQ(c.Get("/fits/" + id + "/clusters?k=31")->status, 400);
  EXPECT_EQ(c.Get("/fits/" + id + "/clusters?k=0")->status, 400);
}

TEST(Service, ConflictWhileNotDoneAndFullQueue) {
  Running run(fresh_dir("queue").string(), 1, 2);
  auto c = run.client();
  const std::string ds = simulate(c, 2000, 60, 5);
  std::vector<std::string> ids;
  int rejected = 0;
  for (int i = 0; i < 5; ++i) {
    const auto r = c.Post("/fits", Json{{"dataset_id", ds}, {"config", {{"K", 3}, {"lambda", "fixed:" + std::to_string(i + 1)}}}}.dump(),
                          "application/json");
    if (r->status == 202) ids.push_back(body_of(r).at("job_id"));
    else if (r->status == 503) {
      ++rejected;
      keep("error", "queue_full", r->body);
    }
  }
  EXPECT_GT(rejected, 0);
  const std::string last = ids.back();
  const auto early = c.Get("/fits/" + last + "/sdf");
  EXPECT_EQ(early->status, 409);
  keep("fit_job", "pending", c.Get("/fits/" + last)->body);
  EXPECT_EQ(c.Get("/fits/" + last + "/clusters?k=2")->status, 409);
  run.service().wait_idle();
  EXPECT_EQ(c.Get("/fits/" + last + "/sdf")->status, 200);
}

TEST(Service, StateSurvivesRestart) {
  const fs::path dir = fresh_dir("restart");
  std::string ds, fit, scores, job;
  {
    Running run(dir.string());
    auto c = run.client();
    ds = simulate(c, 200, 12, 8);
    fit = submit(c, ds, {{"K", 2}, {"penalty", "diff:3"}, {"lambda", "fixed:0.5"}});
    run.service().wait_idle();
    scores = c.Get("/fits/" + fit + "/scores")->body;
    job = c.Get("/fits/" + fit)->body;
  }
  Running again(dir.string());
  auto c = again.client();
  EXPECT_EQ(c.Get("/fits/" + fit + "/scores")->body, scores);
  EXPECT_EQ(c.Get("/fits/" + fit)->body, job);
  EXPECT_EQ(body_of(c.Get("/datasets/" + ds)).at("has_reference"), true);
  // Fresh ids continue after the stored ones.
  const std::string ds2 = simulate(c, 100, 6, 9);
  EXPECT_NE(ds2, ds);
}

TEST(Service, InterruptedJobsAreMarkedFailed) {
  const fs::path dir = fresh_dir("interrupt");
  std::vector<std::string> ids;
  {
    Running run(dir.string());
    auto c = run.client();
    const std::string ds = simulate(c, 2000, 60, 2);
    for (int i = 0; i < 3; ++i) ids.push_back(submit(c, ds, {{"K", 3}}));
  }
  Running again(dir.string());
  auto c = again.client();
  const Json last = body_of(c.Get("/fits/" + ids.back()));
  EXPECT_EQ(last.at("state"), "failed");
  EXPECT_EQ(last.at("error"), "interrupted by service restart");
  keep("fit_job", "interrupted", c.Get("/fits/" + ids.back())->body);
  keep("fit_list", "mixed", c.Get("/fits")->body);
  EXPECT_EQ(c.Get("/fits/" + ids.back() + "/sdf")->status, 409);
}

TEST(Service, CompareWithReference) {
  Running run(fresh_dir("compare").string());
  auto c = run.client();
  const std::string ds = simulate(c, 200, 15, 4);
  const auto r = c.Post("/compare", Json{{"dataset_id", ds}, {"K", 3}}.dump(), "application/json");
  ASSERT_EQ(r->status, 200) << r->body;
  keep("compare", "reference", r->body);
  const Json j = body_of(r);
  ASSERT_EQ(j.at("estimators").size(), 6u);
  for (const Json& e : j.at("estimators")) {
    EXPECT_TRUE(e.contains("angle"));
    EXPECT_TRUE(e.contains("ari"));
  }
  const auto up = c.Post("/datasets", small_csv(), "text/csv");
  const auto plain = c.Post("/compare", Json{{"dataset_id", body_of(up).at("id")}, {"K", 2}, {"L", 10}}.dump(),
                            "application/json");
  ASSERT_EQ(plain->status, 200);
  keep("compare", "plain", plain->body);
  EXPECT_FALSE(body_of(plain).at("estimators")[0].contains("ari"));
  EXPECT_EQ(c.Post("/compare", Json{{"dataset_id", ds}, {"K", 16}}.dump(), "application/json")->status, 422);
}

TEST(Service, CorsAndSchemas) {
  Running run(fresh_dir("cors").string());
  auto c = run.client();
  const auto pre = c.Options("/fits");
  EXPECT_EQ(pre->status, 204);
  EXPECT_EQ(pre->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_NE(pre->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
  EXPECT_EQ(c.Get("/datasets")->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_EQ(c.Get("/nowhere")->get_header_value("Access-Control-Allow-Origin"), "*");

  const Json names = body_of(c.Get("/schema"));
  for (const char* n : {"dataset", "dataset_list", "dataset_created", "periodogram", "elbow", "fit_job", "fit_list",
                        "fit_created", "sdf", "scores", "dendrogram", "clusters", "compare", "error"})
    EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
  const auto s = c.Get("/schema/fit_job");
  ASSERT_EQ(s->status, 200);
  EXPECT_EQ(body_of(s).at("title"), "Fit job");
  EXPECT_EQ(c.Get("/schema/nothing")->status, 404);

  const std::string ds = simulate(c, 400, 30, 1);
  const auto el = c.Get("/datasets/" + ds + "/elbow?kmax=10");
  ASSERT_EQ(el->status, 200);
  keep("elbow", "sim", el->body);
  keep("dataset", "simulated", c.Get("/datasets/" + ds)->body);
}
