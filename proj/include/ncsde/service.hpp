#pragma once

// HTTP/JSON analysis service: datasets, asynchronous fit jobs, comparisons.

#include "ncsde/baselines.hpp"
#include "ncsde/clustering.hpp"
#include "ncsde/engine.hpp"
#include "ncsde/io.hpp"
#include "ncsde/metrics.hpp"
#include "ncsde/simulate.hpp"
#include "ncsde/spectral.hpp"

#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace ncsde {

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw Error("SHA-256 digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

struct ServiceOptions {
  std::string data_dir = "ncsde-data";
  std::string schema_dir;  // served under /schema when set
  unsigned workers = 1;
  std::size_t queue_capacity = 64;
};

// Status code plus JSON error body.
class HttpError : public std::runtime_error {
 public:
  HttpError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

class Service {
 public:
  explicit Service(ServiceOptions options) : opt_(std::move(options)) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(opt_.data_dir) / "objects");
    fs::create_directories(fs::path(opt_.data_dir) / "fits");
    load_index();
    const unsigned n = std::max(1u, opt_.workers);
    for (unsigned w = 0; w < n; ++w) workers_.emplace_back([this](std::stop_token st) { worker_loop(st); });
  }

  ~Service() { stop(); }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Stops accepting work and joins the workers once running jobs finish.
  void stop() {
    {
      std::lock_guard lk(queue_mu_);
      stopping_ = true;
    }
    queue_cv_.notify_all();
    for (auto& w : workers_) w.request_stop();
    workers_.clear();
  }

  // Blocks until the queue is empty and no job is running.
  void wait_idle() {
    std::unique_lock lk(queue_mu_);
    idle_cv_.wait(lk, [&] { return queue_.empty() && running_ == 0; });
  }

  void mount(httplib::Server& srv) {
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    route(srv, "POST", "/datasets", [this](const auto& req, auto& res) { post_dataset(req, res); });
    route(srv, "GET", "/datasets", [this](const auto&, auto& res) { list_datasets(res); });
    route(srv, "POST", "/datasets/simulate", [this](const auto& req, auto& res) { simulate_dataset(req, res); });
    route(srv, "GET", R"(/datasets/([^/]+))", [this](const auto& req, auto& res) {
      reply(res, 200, dataset_json(find_dataset(req.matches[1])));
    });
    route(srv, "GET", R"(/datasets/([^/]+)/periodogram)",
          [this](const auto& req, auto& res) { get_periodogram(req, res); });
    route(srv, "GET", R"(/datasets/([^/]+)/elbow)", [this](const auto& req, auto& res) { get_elbow(req, res); });

    route(srv, "POST", "/fits", [this](const auto& req, auto& res) { post_fit(req, res); });
    route(srv, "GET", "/fits", [this](const auto&, auto& res) { list_fits(res); });
    route(srv, "GET", R"(/fits/([^/]+))", [this](const auto& req, auto& res) {
      reply(res, 200, job_json(*find_job(req.matches[1])));
    });
    route(srv, "GET", R"(/fits/([^/]+)/sdf)", [this](const auto& req, auto& res) { get_sdf(req, res); });
    route(srv, "GET", R"(/fits/([^/]+)/scores)", [this](const auto& req, auto& res) { get_scores(req, res); });
    route(srv, "GET", R"(/fits/([^/]+)/dendrogram)",
          [this](const auto& req, auto& res) { get_dendrogram(req, res); });
    route(srv, "GET", R"(/fits/([^/]+)/clusters)", [this](const auto& req, auto& res) { get_clusters(req, res); });

    route(srv, "POST", "/compare", [this](const auto& req, auto& res) { post_compare(req, res); });

    route(srv, "GET", "/schema", [this](const auto&, auto& res) { list_schemas(res); });
    route(srv, "GET", R"(/schema/([A-Za-z0-9_\-]+)(?:\.json)?)",
          [this](const auto& req, auto& res) { get_schema(req, res); });
  }

 private:
  struct Dataset {
    std::string id;
    std::string content_hash;
    std::string source;  // "upload" or "simulate"
    std::string created_at;
    long n = 0;
    long m = 0;
    std::vector<std::string> labels;
    std::optional<Json> design;  // simulation parameters, when a reference exists
    std::vector<int> truth;      // simulated model labels
  };

  struct FitSpec {
    FitConfig config;
    int L = 40;
    int degree = 3;
    PenaltySpec penalty;
    std::optional<long> truncate;
    Json echo;
  };

  struct Job {
    std::string id;
    std::string dataset_id;
    FitSpec spec;
    std::string created_at;
    mutable std::mutex mu;
    std::string state = "queued";
    int iteration = 0;
    double objective = 0.0;
    double lambda = 0.0;
    std::string error;
    std::shared_ptr<const FitResult> result;
  };

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static void reply(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void route(httplib::Server& srv, const std::string& method, const std::string& pattern, Handler h) {
    auto wrapped = [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const HttpError& e) {
        reply(res, e.status(), {{"error", e.what()}});
      } catch (const ParseError& e) {
        Json body{{"error", e.what()}, {"line", e.line()}};
        if (e.column() > 0) body["column"] = e.column();
        reply(res, 400, body);
      } catch (const Json::exception& e) {
        reply(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
      } catch (const Error& e) {
        reply(res, 400, {{"error", e.what()}});
      } catch (const std::exception& e) {
        reply(res, 500, {{"error", e.what()}});
      }
    };
    if (method == "GET") srv.Get(pattern, wrapped);
    else srv.Post(pattern, wrapped);
  }

  static std::string now_iso() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  static long query_long(const httplib::Request& req, const std::string& key, long fallback) {
    if (!req.has_param(key)) return fallback;
    const std::string v = req.get_param_value(key);
    long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
      throw HttpError(400, "query parameter '" + key + "' must be an integer");
    return out;
  }

  static Json parse_body(const httplib::Request& req) {
    try {
      return Json::parse(req.body);
    } catch (const Json::exception& e) {
      throw HttpError(400, std::string("malformed JSON body: ") + e.what());
    }
  }

  // ---- persistence ----

  std::filesystem::path object_path(const std::string& hash) const {
    return std::filesystem::path(opt_.data_dir) / "objects" / (hash + ".csv");
  }
  std::filesystem::path fit_path(const std::string& id) const {
    return std::filesystem::path(opt_.data_dir) / "fits" / (id + ".json");
  }

  static Json dataset_record(const Dataset& d) {
    Json j{{"id", d.id},       {"content_hash", d.content_hash}, {"source", d.source},
           {"created_at", d.created_at}, {"n", d.n}, {"m", d.m}, {"labels", d.labels}};
    if (d.design) {
      j["design"] = *d.design;
      j["truth"] = d.truth;
    }
    return j;
  }

  static Json fit_spec_json(const FitSpec& s) { return s.echo; }

  // Caller holds index_mu_.
  void save_index() const {
    Json ds = Json::array(), fits = Json::array();
    for (const auto& id : dataset_order_) ds.push_back(dataset_record(*datasets_.at(id)));
    for (const auto& id : job_order_) {
      const Job& job = *jobs_.at(id);
      std::lock_guard lk(job.mu);
      Json j{{"id", job.id},           {"dataset_id", job.dataset_id}, {"config", fit_spec_json(job.spec)},
             {"created_at", job.created_at}, {"state", job.state}, {"iteration", job.iteration},
             {"objective", job.objective},   {"lambda", job.lambda}};
      if (!job.error.empty()) j["error"] = job.error;
      fits.push_back(std::move(j));
    }
    const Json index{{"next_dataset", next_dataset_}, {"next_fit", next_fit_}, {"datasets", ds}, {"fits", fits}};
    const auto path = std::filesystem::path(opt_.data_dir) / "index.json";
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp);
      out << index.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
  }

  void load_index() {
    const auto path = std::filesystem::path(opt_.data_dir) / "index.json";
    if (!std::filesystem::exists(path)) return;
    std::ifstream in(path);
    const Json index = Json::parse(in);
    next_dataset_ = index.value("next_dataset", 1L);
    next_fit_ = index.value("next_fit", 1L);
    for (const Json& j : index.at("datasets")) {
      auto d = std::make_shared<Dataset>();
      d->id = j.at("id");
      d->content_hash = j.at("content_hash");
      d->source = j.at("source");
      d->created_at = j.at("created_at");
      d->n = j.at("n");
      d->m = j.at("m");
      d->labels = j.at("labels").get<std::vector<std::string>>();
      if (j.contains("design")) {
        d->design = j.at("design");
        d->truth = j.at("truth").get<std::vector<int>>();
      }
      dataset_order_.push_back(d->id);
      datasets_[d->id] = std::move(d);
    }
    bool dirty = false;
    for (const Json& j : index.at("fits")) {
      auto job = std::make_shared<Job>();
      job->id = j.at("id");
      job->dataset_id = j.at("dataset_id");
      job->spec = parse_fit_spec(j.at("config"));
      job->created_at = j.at("created_at");
      job->state = j.at("state");
      job->iteration = j.at("iteration");
      job->objective = j.at("objective");
      job->lambda = j.at("lambda");
      job->error = j.value("error", std::string());
      if (job->state == "done") {
        std::ifstream rin(fit_path(job->id));
        if (rin) {
          job->result = std::make_shared<const FitResult>(fit_result_from_json(Json::parse(rin)));
        } else {
          job->state = "failed";
          job->error = "result file missing";
          dirty = true;
        }
      } else if (job->state == "queued" || job->state == "running") {
        job->state = "failed";
        job->error = "interrupted by service restart";
        dirty = true;
      }
      job_order_.push_back(job->id);
      jobs_[job->id] = std::move(job);
    }
    if (dirty) save_index();
  }

  // ---- datasets ----

  std::shared_ptr<const Dataset> find_dataset(const std::string& id) const {
    std::lock_guard lk(index_mu_);
    auto it = datasets_.find(id);
    if (it == datasets_.end()) throw HttpError(404, "unknown dataset '" + id + "'");
    return it->second;
  }

  static Json dataset_json(const std::shared_ptr<const Dataset>& d) {
    Json j{{"id", d->id},       {"n", d->n},       {"m", d->m},
           {"labels", d->labels}, {"content_hash", d->content_hash}, {"source", d->source},
           {"created_at", d->created_at}, {"has_reference", d->design.has_value()}};
    if (d->design) j["truth"] = d->truth;
    return j;
  }

  TimeSeriesSet load_series(const Dataset& d) const {
    return to_series(read_csv_file(object_path(d.content_hash).string()));
  }

  std::shared_ptr<Dataset> store_dataset(const std::string& csv, const std::string& source) {
    // Validate before anything touches the disk.
    std::istringstream in(csv);
    LabeledMatrix lm = read_csv(in);
    const TimeSeriesSet ts(lm.values, lm.labels);
    auto d = std::make_shared<Dataset>();
    d->content_hash = sha256_hex(csv);
    d->source = source;
    d->created_at = now_iso();
    d->n = ts.length();
    d->m = ts.count();
    d->labels = ts.labels();
    const auto path = object_path(d->content_hash);
    if (!std::filesystem::exists(path)) {
      const auto tmp = path.string() + ".tmp";
      {
        std::ofstream out(tmp, std::ios::binary);
        out << csv;
      }
      std::filesystem::rename(tmp, path);
    }
    return d;
  }

  void register_dataset(const std::shared_ptr<Dataset>& d) {
    std::lock_guard lk(index_mu_);
    d->id = "ds" + std::to_string(next_dataset_++);
    dataset_order_.push_back(d->id);
    datasets_[d->id] = d;
    save_index();
  }

  void post_dataset(const httplib::Request& req, httplib::Response& res) {
    if (req.body.empty()) throw HttpError(400, "request body is empty");
    auto d = store_dataset(req.body, "upload");
    register_dataset(d);
    reply(res, 201, {{"id", d->id}, {"n", d->n}, {"m", d->m}, {"content_hash", d->content_hash}});
  }

  void simulate_dataset(const httplib::Request& req, httplib::Response& res) {
    const Json body = req.body.empty() ? Json::object() : parse_body(req);
    MixtureDesign design;
    design.n = body.value("n", 400L);
    design.m = body.value("m", 30L);
    design.seed = body.value("seed", std::uint64_t{1});
    if (body.contains("models")) {
      design.models.clear();
      for (const Json& phi : body.at("models")) {
        const auto v = phi.get<std::vector<double>>();
        if (v.size() != 3) throw HttpError(422, "each model needs exactly 3 AR coefficients");
        design.models.emplace_back(std::array<double, 3>{v[0], v[1], v[2]});
      }
      design.probs.assign(design.models.size(), 1.0 / static_cast<double>(design.models.size()));
    }
    if (body.contains("probs")) design.probs = body.at("probs").get<std::vector<double>>();
    MixtureSample sample = generate_mixture(design);
    std::ostringstream csv;
    write_csv(csv, sample.series.values(), sample.series.labels());
    auto d = store_dataset(csv.str(), "simulate");
    Json models = Json::array();
    for (const auto& mdl : design.models) {
      models.push_back(mdl.phi());
    }
    d->design = Json{{"n", design.n}, {"m", design.m}, {"seed", design.seed}, {"models", models}, {"probs", design.probs}};
    d->truth = sample.labels;
    register_dataset(d);
    reply(res, 201, {{"id", d->id}, {"n", d->n}, {"m", d->m}, {"content_hash", d->content_hash}});
  }

  void list_datasets(httplib::Response& res) const {
    Json out = Json::array();
    std::lock_guard lk(index_mu_);
    for (const auto& id : dataset_order_) out.push_back(dataset_json(datasets_.at(id)));
    reply(res, 200, out);
  }

  static MixtureDesign design_from_json(const Json& j) {
    MixtureDesign design;
    design.n = j.at("n");
    design.m = j.at("m");
    design.seed = j.at("seed");
    design.models.clear();
    for (const Json& phi : j.at("models")) design.models.emplace_back(phi.get<std::array<double, 3>>());
    design.probs = j.at("probs").get<std::vector<double>>();
    return design;
  }

  PeriodogramSet periodogram_for(const Dataset& d, std::optional<long> truncate) {
    const std::string key = d.id + "#" + (truncate ? std::to_string(*truncate) : "all");
    {
      std::lock_guard lk(cache_mu_);
      auto it = pgram_cache_.find(key);
      if (it != pgram_cache_.end()) return it->second;
    }
    PeriodogramSet ps = periodogram(load_series(d));
    if (truncate) {
      if (*truncate < 1 || *truncate > ps.frequencies())
        throw HttpError(400, "truncate must lie in [1, " + std::to_string(ps.frequencies()) + "]");
      ps = truncate_band(ps, *truncate);
    }
    std::lock_guard lk(cache_mu_);
    pgram_cache_.emplace(key, ps);
    return ps;
  }

  static std::optional<long> truncate_param(const httplib::Request& req) {
    if (!req.has_param("truncate")) return std::nullopt;
    return query_long(req, "truncate", 0);
  }

  void get_periodogram(const httplib::Request& req, httplib::Response& res) {
    const auto d = find_dataset(req.matches[1]);
    const PeriodogramSet ps = periodogram_for(*d, truncate_param(req));
    reply(res, 200,
          {{"dataset_id", d->id},
           {"labels", d->labels},
           {"grid", vector_to_json(ps.grid.omegas)},
           {"ordinates", matrix_to_json(ps.ordinates)}});
  }

  void get_elbow(const httplib::Request& req, httplib::Response& res) {
    const auto d = find_dataset(req.matches[1]);
    const long kmax = query_long(req, "kmax", std::min(10L, d->m));
    if (kmax < 3 || kmax > d->m) throw HttpError(400, "kmax must lie in [3, " + std::to_string(d->m) + "]");
    const PeriodogramSet ps = periodogram_for(*d, truncate_param(req));
    const long L = query_long(req, "L", 40);
    const BasisMatrix B = basis_matrix(ps, static_cast<int>(L), 3);
    const ElbowResult e = select_K(ps.ordinates, B.values, static_cast<int>(kmax));
    reply(res, 200, {{"dataset_id", d->id}, {"wss", e.wss}, {"suggested_k", e.suggested_k}, {"reliable", e.reliable}});
  }

  static BasisMatrix basis_matrix(const PeriodogramSet& ps, int L, int degree) {
    try {
      return eval_basis(ps.grid, basis_for_grid(ps.grid, L, degree));
    } catch (const Error& e) {
      throw HttpError(422, e.what());
    }
  }

  // ---- fits ----

  static FitSpec parse_fit_spec(const Json& cfg) {
    if (!cfg.is_object()) throw HttpError(422, "config must be a JSON object");
    FitSpec s;
    try {
      merge_json(s.config, cfg);
      s.L = cfg.value("L", 40);
      s.degree = cfg.value("degree", 3);
      if (cfg.contains("penalty")) {
        const Json& p = cfg.at("penalty");
        if (p.is_string()) {
          s.penalty = parse_penalty(p.get<std::string>());
        } else {
          s.penalty.kind = penalty_kind_from_string(p.at("kind").get<std::string>());
          s.penalty.order = p.value("a", 2);
        }
      }
      if (cfg.contains("truncate")) s.truncate = cfg.at("truncate").get<long>();
    } catch (const Json::exception& e) {
      throw HttpError(422, std::string("invalid config: ") + e.what());
    } catch (const Error& e) {
      throw HttpError(422, std::string("invalid config: ") + e.what());
    }
    if (s.L < s.degree + 1 || s.degree < 0) throw HttpError(422, "invalid config: need L >= degree + 1");
    if (s.penalty.kind == PenaltyKind::difference && (s.penalty.order < 1 || s.penalty.order >= s.L))
      throw HttpError(422, "invalid config: difference order must satisfy 1 <= a < L");
    Json echo = to_json(s.config);
    echo["L"] = s.L;
    echo["degree"] = s.degree;
    echo["penalty"] = to_json(BasisSpec{}, s.penalty).at("penalty");
    if (s.truncate) echo["truncate"] = *s.truncate;
    s.echo = std::move(echo);
    return s;
  }

  void post_fit(const httplib::Request& req, httplib::Response& res) {
    const Json body = parse_body(req);
    if (!body.is_object() || !body.contains("dataset_id") || !body.at("dataset_id").is_string())
      throw HttpError(422, "body needs a string dataset_id");
    const auto d = find_dataset(body.at("dataset_id").get<std::string>());
    FitSpec spec = parse_fit_spec(body.value("config", Json::object()));
    try {
      spec.config.validate(spec.L, d->m);
    } catch (const Error& e) {
      throw HttpError(422, std::string("invalid config: ") + e.what());
    }
    const long tilde_n = (d->n - 1) / 2;
    if (spec.truncate && (*spec.truncate < 1 || *spec.truncate > tilde_n))
      throw HttpError(422, "invalid config: truncate must lie in [1, " + std::to_string(tilde_n) + "]");

    auto job = std::make_shared<Job>();
    job->dataset_id = d->id;
    job->spec = std::move(spec);
    job->created_at = now_iso();
    {
      std::lock_guard qlk(queue_mu_);
      if (stopping_) throw HttpError(503, "service is shutting down");
      if (queue_.size() >= opt_.queue_capacity) throw HttpError(503, "job queue is full");
      {
        std::lock_guard lk(index_mu_);
        job->id = "fit" + std::to_string(next_fit_++);
        job_order_.push_back(job->id);
        jobs_[job->id] = job;
        save_index();
      }
      queue_.push_back(job);
    }
    queue_cv_.notify_one();
    reply(res, 202, {{"job_id", job->id}, {"state", "queued"}});
  }

  std::shared_ptr<Job> find_job(const std::string& id) const {
    std::lock_guard lk(index_mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw HttpError(404, "unknown fit '" + id + "'");
    return it->second;
  }

  static Json job_json(const Job& job) {
    std::lock_guard lk(job.mu);
    Json j{{"id", job.id},       {"dataset_id", job.dataset_id}, {"state", job.state},
           {"config", fit_spec_json(job.spec)}, {"created_at", job.created_at},
           {"progress", {{"iteration", job.iteration}, {"objective", job.objective}, {"lambda", job.lambda}}}};
    if (!job.error.empty()) j["error"] = job.error;
    if (job.result) {
      const FitResult& r = *job.result;
      j["result"] = {{"lambda", r.lambda},
                     {"deviance", r.deviance},
                     {"df", r.df},
                     {"aic", r.aic},
                     {"converged", r.converged},
                     {"iterations", r.iterations},
                     {"skipped_blocks", r.skipped_blocks},
                     {"objective_trace", r.objective_trace},
                     {"lambda_trace", r.lambda_trace}};
    }
    return j;
  }

  void list_fits(httplib::Response& res) const {
    std::vector<std::shared_ptr<Job>> jobs;
    {
      std::lock_guard lk(index_mu_);
      for (const auto& id : job_order_) jobs.push_back(jobs_.at(id));
    }
    Json out = Json::array();
    for (const auto& job : jobs) {
      std::lock_guard lk(job->mu);
      out.push_back({{"id", job->id}, {"dataset_id", job->dataset_id}, {"state", job->state}});
    }
    reply(res, 200, out);
  }

  // Result of a finished job, 409 otherwise.
  std::shared_ptr<const FitResult> finished(const Job& job) const {
    std::lock_guard lk(job.mu);
    if (job.state != "done") throw HttpError(409, "fit '" + job.id + "' is " + job.state);
    return job.result;
  }

  void get_sdf(const httplib::Request& req, httplib::Response& res) {
    const auto job = find_job(req.matches[1]);
    const auto result = finished(*job);
    const auto d = find_dataset(job->dataset_id);
    const PeriodogramSet ps = periodogram_for(*d, job->spec.truncate);
    const BasisMatrix B = basis_matrix(ps, job->spec.L, job->spec.degree);
    reply(res, 200,
          {{"fit_id", job->id},
           {"labels", d->labels},
           {"grid", vector_to_json(ps.grid.omegas)},
           {"values", matrix_to_json(sdf(result->coefficients, B.values))}});
  }

  void get_scores(const httplib::Request& req, httplib::Response& res) {
    const auto job = find_job(req.matches[1]);
    const auto result = finished(*job);
    const auto d = find_dataset(job->dataset_id);
    reply(res, 200,
          {{"fit_id", job->id},
           {"labels", d->labels},
           {"scores", matrix_to_json(result->coefficients.scores)},
           {"theta", matrix_to_json(result->coefficients.theta)}});
  }

  Dendrogram dendrogram_for(const Job& job, const FitResult& r) const {
    const auto d = find_dataset(job.dataset_id);
    return ward_linkage(euclidean_distances(r.coefficients.scores), d->labels);
  }

  static long cut_param(const httplib::Request& req, long m, bool required) {
    if (!req.has_param("k")) {
      if (required) throw HttpError(400, "query parameter 'k' is required");
      return 0;
    }
    const long k = query_long(req, "k", 0);
    if (k < 1 || k > m) throw HttpError(400, "k must lie in [1, " + std::to_string(m) + "]");
    return k;
  }

  void get_dendrogram(const httplib::Request& req, httplib::Response& res) {
    const auto job = find_job(req.matches[1]);
    const auto result = finished(*job);
    const Dendrogram dend = dendrogram_for(*job, *result);
    Json body = to_json(dend);
    body["fit_id"] = job->id;
    const long k = cut_param(req, dend.leaves(), false);
    if (k > 0) {
      body["k"] = k;
      body["clusters"] = cut(dend, static_cast<int>(k)).labels;
    }
    reply(res, 200, body);
  }

  void get_clusters(const httplib::Request& req, httplib::Response& res) {
    const auto job = find_job(req.matches[1]);
    const auto result = finished(*job);
    const Dendrogram dend = dendrogram_for(*job, *result);
    const long k = cut_param(req, dend.leaves(), true);
    reply(res, 200,
          {{"fit_id", job->id}, {"k", k}, {"leaves", dend.leaf_labels}, {"labels", cut(dend, static_cast<int>(k)).labels}});
  }

  void run_job(const std::shared_ptr<Job>& job) {
    {
      std::lock_guard lk(job->mu);
      job->state = "running";
    }
    persist_index();
    try {
      const auto d = find_dataset(job->dataset_id);
      const PeriodogramSet ps = periodogram_for(*d, job->spec.truncate);
      const BasisMatrix B = eval_basis(ps.grid, basis_for_grid(ps.grid, job->spec.L, job->spec.degree));
      const PenaltyMatrix R = build_penalty(B.spec, job->spec.penalty);
      FitResult r = fit(ps, B, R, job->spec.config, std::nullopt, [&](const FitProgress& p) {
        std::lock_guard lk(job->mu);
        job->iteration = p.iteration;
        job->objective = p.objective;
        job->lambda = p.lambda;
      });
      write_json_file(fit_path(job->id).string(), to_json(r));
      // Reload so live and restarted payloads are produced from the same data.
      std::ifstream in(fit_path(job->id));
      auto stored = std::make_shared<const FitResult>(fit_result_from_json(Json::parse(in)));
      std::lock_guard lk(job->mu);
      job->result = std::move(stored);
      job->state = "done";
    } catch (const std::exception& e) {
      std::lock_guard lk(job->mu);
      job->state = "failed";
      job->error = e.what();
    }
    persist_index();
  }

  void persist_index() {
    std::lock_guard lk(index_mu_);
    save_index();
  }

  void worker_loop(std::stop_token st) {
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock lk(queue_mu_);
        queue_cv_.wait(lk, [&] { return stopping_ || st.stop_requested() || !queue_.empty(); });
        // Queued jobs are left for the restart logic.
        if (stopping_ || st.stop_requested()) return;
        job = queue_.front();
        queue_.pop_front();
        ++running_;
      }
      run_job(job);
      {
        std::lock_guard lk(queue_mu_);
        --running_;
      }
      idle_cv_.notify_all();
    }
  }

  // ---- comparison ----

  void post_compare(const httplib::Request& req, httplib::Response& res) {
    const Json body = parse_body(req);
    if (!body.is_object() || !body.contains("dataset_id")) throw HttpError(422, "body needs dataset_id");
    const auto d = find_dataset(body.at("dataset_id").get<std::string>());
    const int K = body.value("K", 3);
    const int L = body.value("L", 40);
    if (K < 1 || K > std::min<long>(L, d->m)) throw HttpError(422, "K must satisfy 1 <= K <= min(L, m)");
    PenaltySpec pen;
    if (body.contains("penalty")) {
      try {
        pen = parse_penalty(body.at("penalty").get<std::string>());
      } catch (const Error& e) {
        throw HttpError(422, e.what());
      }
    }
    std::optional<long> truncate;
    if (body.contains("truncate")) truncate = body.at("truncate").get<long>();
    const PeriodogramSet ps = periodogram_for(*d, truncate);
    const BasisMatrix B = basis_matrix(ps, L, 3);
    const PenaltyMatrix R = build_penalty(B.spec, pen);
    FitConfig fc;
    fc.K = K;
    std::optional<Matrix> truth;
    int reference_rank = 0;
    if (d->design) {
      truth = true_log_sdf(design_from_json(*d->design), d->truth, ps.grid);
      reference_rank = distinct_count(d->truth);
    }
    Json out = Json::array();
    for (const SdfEstimate& est : all_estimates(ps, B, R, fc)) {
      Json e{{"kind", to_string(est.kind)}, {"labels", cluster_labels(clustering_points(est), K)}};
      if (truth) {
        e["angle"] = log_sdf_angle(*truth, est.values.array().log().matrix(), reference_rank);
        e["ari"] = adjusted_rand_index(d->truth, e["labels"].get<std::vector<int>>());
      }
      out.push_back(std::move(e));
    }
    reply(res, 200, {{"dataset_id", d->id}, {"K", K}, {"estimators", out}});
  }

  // ---- schemas ----

  void list_schemas(httplib::Response& res) const {
    Json names = Json::array();
    if (!opt_.schema_dir.empty() && std::filesystem::is_directory(opt_.schema_dir)) {
      std::vector<std::string> found;
      for (const auto& entry : std::filesystem::directory_iterator(opt_.schema_dir))
        if (entry.path().extension() == ".json") found.push_back(entry.path().stem().string());
      std::sort(found.begin(), found.end());
      for (auto& n : found) names.push_back(n);
    }
    reply(res, 200, names);
  }

  void get_schema(const httplib::Request& req, httplib::Response& res) const {
    const auto path = std::filesystem::path(opt_.schema_dir) / (std::string(req.matches[1]) + ".json");
    std::ifstream in(path);
    if (opt_.schema_dir.empty() || !in) throw HttpError(404, "unknown schema '" + std::string(req.matches[1]) + "'");
    reply(res, 200, Json::parse(in));
  }

  ServiceOptions opt_;

  mutable std::mutex index_mu_;
  long next_dataset_ = 1;
  long next_fit_ = 1;
  std::vector<std::string> dataset_order_;
  std::map<std::string, std::shared_ptr<Dataset>> datasets_;
  std::vector<std::string> job_order_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;

  std::mutex cache_mu_;
  std::map<std::string, PeriodogramSet> pgram_cache_;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::condition_variable idle_cv_;
  std::deque<std::shared_ptr<Job>> queue_;
  int running_ = 0;
  bool stopping_ = false;
  std::vector<std::jthread> workers_;
};

}  // namespace ncsde
