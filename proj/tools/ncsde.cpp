// ncsde: command-line front end for collective spectral density estimation.

#include "ncsde/baselines.hpp"
#include "ncsde/clustering.hpp"
#include "ncsde/engine.hpp"
#include "ncsde/io.hpp"
#include "ncsde/metrics.hpp"
#include "ncsde/service.hpp"
#include "ncsde/simulate.hpp"
#include "ncsde/spectral.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <pthread.h>
#include <regex>
#include <string>
#include <thread>

#ifndef NCSDE_SCHEMA_DIR
#define NCSDE_SCHEMA_DIR "schema"
#endif

namespace fs = std::filesystem;
using namespace ncsde;

namespace {

enum Exit { kOk = 0, kFailure = 1, kInvalid = 2, kNotConverged = 3, kBindFailed = 4 };

struct Options {
  unsigned threads = 0;
  std::string config;

  std::string input;
  std::string output;
  std::string grid_output;
  long truncate = 0;

  int K = 3;
  int L = 40;
  std::string penalty = "d2";
  std::string lambda = "auto";
  int max_iters = 500;
  double tol = 1e-8;

  std::string k = "auto";
  int kmax = 10;
  std::string layout = "auto";

  std::string cells;
  int runs = 20;
  std::uint64_t seed = 1;
  std::string json_output;

  std::string truth;

  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "ncsde-data";
  std::string schema_dir = NCSDE_SCHEMA_DIR;
  unsigned workers = 1;
  std::size_t queue = 64;
};

// Values from --config fill every option not given on the command line.
void merge_config(CLI::App& app, Options& o) {
  if (o.config.empty()) return;
  std::ifstream in(o.config);
  if (!in) throw Error("cannot open config '" + o.config + "'");
  const Json j = Json::parse(in);
  if (!j.is_object()) throw Error("config file must hold a JSON object");
  CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
  auto given = [&](const std::string& name) {
    for (CLI::App* a : {sub, &app}) {
      try {
        if (a->get_option(name)->count() > 0) return true;
      } catch (const CLI::OptionNotFound&) {
      }
    }
    return false;
  };
  auto take = [&](const char* key, const std::string& flag, auto& target) {
    if (j.contains(key) && !given(flag)) target = j.at(key).get<std::remove_reference_t<decltype(target)>>();
  };
  take("threads", "--threads", o.threads);
  take("truncate", "--truncate", o.truncate);
  take("K", "--K", o.K);
  take("L", "--L", o.L);
  take("penalty", "--penalty", o.penalty);
  if (j.contains("lambda") && !given("--lambda")) {
    const Json& l = j.at("lambda");
    o.lambda = l.is_string() ? l.get<std::string>() : to_string(lambda_from_json(l).mode);
    if (l.is_object()) {
      const LambdaSetting s = lambda_from_json(l);
      if (s.mode == LambdaMode::fixed) o.lambda = "fixed:" + detail::format_double(s.value);
      if (s.mode == LambdaMode::aic_grid) {
        o.lambda = "grid:";
        for (std::size_t i = 0; i < s.grid.size(); ++i) o.lambda += (i ? "," : "") + detail::format_double(s.grid[i]);
      }
    }
  }
  take("max_outer_iters", "--max-iters", o.max_iters);
  take("tol", "--tol", o.tol);
  take("kmax", "--kmax", o.kmax);
  take("runs", "--runs", o.runs);
  take("seed", "--seed", o.seed);
  take("cells", "--cells", o.cells);
  take("port", "--port", o.port);
  take("data_dir", "--data-dir", o.data_dir);
  take("workers", "--workers", o.workers);
  if (j.contains("k") && !given("--k")) {
    const Json& k = j.at("k");
    o.k = k.is_string() ? k.get<std::string>() : std::to_string(k.get<int>());
  }
}

PeriodogramSet load_periodogram(const Options& o) {
  PeriodogramSet ps = periodogram(to_series(read_csv_file(o.input)));
  if (o.truncate > 0) {
    if (o.truncate > ps.frequencies())
      throw SizeError("--truncate " + std::to_string(o.truncate) + " exceeds the " +
                      std::to_string(ps.frequencies()) + " available frequencies");
    ps = truncate_band(ps, o.truncate);
  }
  return ps;
}

int cmd_periodogram(const Options& o) {
  const LabeledMatrix lm = read_csv_file(o.input);
  const std::vector<std::string> labels = lm.labels;
  PeriodogramSet ps = periodogram(to_series(lm));
  if (o.truncate > 0) {
    if (o.truncate > ps.frequencies())
      throw SizeError("--truncate " + std::to_string(o.truncate) + " exceeds the " +
                      std::to_string(ps.frequencies()) + " available frequencies");
    ps = truncate_band(ps, o.truncate);
  }
  write_csv_file(o.output, ps.ordinates, labels);
  std::string grid_path = o.grid_output;
  if (grid_path.empty()) {
    fs::path p(o.output);
    grid_path = (p.parent_path() / (p.stem().string() + "_grid.csv")).string();
  }
  write_csv_file(grid_path, ps.grid.omegas, {"omega"});
  return kOk;
}

int cmd_fit(const Options& o) {
  const LabeledMatrix lm = read_csv_file(o.input);
  const std::vector<std::string> labels = lm.labels;
  const TimeSeriesSet ts = to_series(lm);
  PeriodogramSet ps = periodogram(ts);
  if (o.truncate > 0) {
    if (o.truncate > ps.frequencies()) throw SizeError("--truncate exceeds the available frequencies");
    ps = truncate_band(ps, o.truncate);
  }
  const PenaltySpec pen = parse_penalty(o.penalty);
  const BasisMatrix B = eval_basis(ps.grid, basis_for_grid(ps.grid, o.L));
  const PenaltyMatrix R = build_penalty(B.spec, pen);
  FitConfig cfg;
  cfg.K = o.K;
  cfg.lambda = parse_lambda(o.lambda);
  cfg.max_outer_iters = o.max_iters;
  cfg.tol = o.tol;
  cfg.validate(B.values.cols(), ps.series());

  const FitResult r = fit(ps, B, R, cfg);

  fs::create_directories(o.output);
  const fs::path dir(o.output);
  write_csv_file((dir / "theta.csv").string(), r.coefficients.theta, numbered("theta", o.K));
  write_csv_file((dir / "a.csv").string(), r.coefficients.scores, numbered("a", o.K));
  write_csv_file((dir / "sdf.csv").string(), sdf(r.coefficients, B.values), labels);
  Json grid = Json::array();
  for (const auto& [lam, a] : r.aic_grid) grid.push_back({{"lambda", lam}, {"aic", a}});
  write_json_file((dir / "trace.json").string(),
                  {{"objective", r.objective_trace}, {"lambda", r.lambda_trace}, {"aic_grid", grid}});
  Json meta{{"converged", r.converged},
            {"iterations", r.iterations},
            {"lambda", r.lambda},
            {"deviance", r.deviance},
            {"df", r.df},
            {"aic", r.aic},
            {"skipped_blocks", r.skipped_blocks},
            {"canonical_ties", r.canonical_ties},
            {"n", ts.length()},
            {"m", ts.count()},
            {"frequencies", ps.frequencies()},
            {"labels", labels},
            {"config", to_json(cfg)},
            {"basis", to_json(B.spec, pen)}};
  write_json_file((dir / "meta.json").string(), meta);
  if (!r.converged) {
    std::cerr << "warning: fit did not converge within " << r.iterations << " iterations\n";
    return kNotConverged;
  }
  return kOk;
}

bool looks_like_scores(const std::vector<std::string>& header) {
  static const std::regex pattern("a[0-9]+");
  for (const auto& h : header)
    if (!std::regex_match(h, pattern)) return false;
  return true;
}

int cmd_cluster(const Options& o) {
  const LabeledMatrix lm = read_csv_file(o.input);
  std::string layout = o.layout;
  if (layout == "auto") layout = looks_like_scores(lm.labels) ? "scores" : "sdf";
  Matrix points;
  std::vector<std::string> names;
  if (layout == "scores") {
    // Rows are series.
    points = lm.values;
    names = numbered("", points.rows());
  } else if (layout == "sdf") {
    // Columns are series on the SDF scale.
    if ((lm.values.array() <= 0.0).any()) throw DomainError("sdf input must be strictly positive");
    points = lm.values.array().log().matrix().transpose();
    names = lm.labels;
  } else {
    throw DomainError("--layout must be auto, scores or sdf");
  }
  const auto m = static_cast<int>(points.rows());
  if (m < 2) throw SizeError("clustering needs at least 2 series");

  const Dendrogram dend = ward_linkage(euclidean_distances(points), names);
  const int kmax = std::min(o.kmax, m);
  std::vector<double> wss;
  if (kmax >= 1) wss = wss_curve(points, kmax);
  int k = 0;
  if (o.k == "auto") {
    if (wss.size() < 3) throw SizeError("--k auto needs kmax >= 3 and at least 3 series");
    k = elbow(wss);
  } else {
    try {
      std::size_t used = 0;
      k = std::stoi(o.k, &used);
      if (used != o.k.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DomainError("--k must be an integer or 'auto'");
    }
    if (k < 1 || k > m) throw DomainError("--k must lie in [1, " + std::to_string(m) + "]");
  }
  const ClusterAssignment a = cut(dend, k);

  fs::create_directories(o.output);
  const fs::path dir(o.output);
  Matrix labels(m, 2);
  for (int i = 0; i < m; ++i) {
    labels(i, 0) = i + 1;
    labels(i, 1) = a.labels[static_cast<std::size_t>(i)];
  }
  write_csv_file((dir / "labels.csv").string(), labels, {"series", "cluster"});
  Json dj = to_json(dend);
  dj["k"] = k;
  write_json_file((dir / "dendrogram.json").string(), dj);
  Matrix w(static_cast<Eigen::Index>(wss.size()), 2);
  for (std::size_t i = 0; i < wss.size(); ++i) {
    w(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i + 1);
    w(static_cast<Eigen::Index>(i), 1) = wss[i];
  }
  write_csv_file((dir / "wss.csv").string(), w, {"k", "wss"});
  write_json_file((dir / "meta.json").string(),
                  {{"layout", layout}, {"m", m}, {"k", k}, {"k_source", o.k == "auto" ? "elbow" : "flag"}, {"kmax", kmax}});
  return kOk;
}

std::vector<std::pair<long, long>> parse_cells(const std::string& s) {
  if (s.empty()) return default_cells();
  std::vector<std::pair<long, long>> out;
  static const std::regex cell(R"(\s*([0-9]+)\s*[xX:]\s*([0-9]+)\s*)");
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = s.find(',', start);
    const std::string part = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    std::smatch mt;
    if (!std::regex_match(part, mt, cell)) throw DomainError("bad cell '" + part + "', expected NxM");
    out.emplace_back(std::stol(mt[1]), std::stol(mt[2]));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

int cmd_simulate(const Options& o) {
  StudyConfig cfg;
  cfg.L = o.L;
  cfg.penalty = parse_penalty(o.penalty);
  cfg.fit.lambda = parse_lambda(o.lambda);
  cfg.fit.max_outer_iters = o.max_iters;
  cfg.fit.tol = o.tol;
  const StudyReport rep = run_study(parse_cells(o.cells), o.runs, o.seed, cfg);
  {
    std::ofstream out(o.output);
    if (!out) throw Error("cannot write '" + o.output + "'");
    write_study_csv(out, rep);
  }
  if (!o.json_output.empty()) write_json_file(o.json_output, to_json(rep));
  for (const auto& c : rep.cells)
    for (const auto& f : c.failures) std::cerr << "cell " << c.n << "x" << c.m << ": " << f << '\n';
  return kOk;
}

int cmd_compare(const Options& o) {
  const LabeledMatrix lm = read_csv_file(o.input);
  const std::vector<std::string> labels = lm.labels;
  PeriodogramSet ps = periodogram(to_series(lm));
  if (o.truncate > 0) {
    if (o.truncate > ps.frequencies()) throw SizeError("--truncate exceeds the available frequencies");
    ps = truncate_band(ps, o.truncate);
  }
  std::optional<std::vector<int>> truth;
  if (!o.truth.empty()) {
    const LabeledMatrix t = read_csv_file(o.truth);
    const Matrix& v = t.values;
    const Eigen::Index col = v.cols() - 1;
    std::vector<int> lab;
    for (Eigen::Index i = 0; i < v.rows(); ++i) lab.push_back(static_cast<int>(v(i, col)));
    if (static_cast<Eigen::Index>(lab.size()) != ps.series()) throw SizeError("--truth length differs from series count");
    truth = std::move(lab);
  }
  const BasisMatrix B = eval_basis(ps.grid, basis_for_grid(ps.grid, o.L));
  const PenaltyMatrix R = build_penalty(B.spec, parse_penalty(o.penalty));
  FitConfig cfg;
  cfg.K = o.K;
  cfg.lambda = parse_lambda(o.lambda);
  cfg.validate(B.values.cols(), ps.series());

  fs::create_directories(o.output);
  const fs::path dir(o.output);
  Json rows = Json::array();
  for (const SdfEstimate& est : all_estimates(ps, B, R, cfg)) {
    const std::vector<int> lab = cluster_labels(clustering_points(est), o.K);
    Json e{{"kind", to_string(est.kind)}, {"labels", lab}};
    if (truth) e["ari"] = adjusted_rand_index(*truth, lab);
    rows.push_back(std::move(e));
    write_csv_file((dir / ("sdf_" + to_string(est.kind) + ".csv")).string(), est.values, labels);
  }
  write_json_file((dir / "compare.json").string(), {{"K", o.K}, {"estimators", rows}});
  write_json_file((dir / "meta.json").string(), {{"n", ps.grid.source_n},
                                                 {"m", ps.series()},
                                                 {"frequencies", ps.frequencies()},
                                                 {"labels", labels},
                                                 {"has_truth", truth.has_value()},
                                                 {"config", to_json(cfg)}});
  return kOk;
}

int cmd_serve(const Options& o) {
  // Route SIGINT/SIGTERM to a waiting thread instead of an async handler.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ServiceOptions so;
  so.data_dir = o.data_dir;
  so.schema_dir = o.schema_dir;
  so.workers = o.workers;
  so.queue_capacity = o.queue;
  Service service(so);
  httplib::Server srv;
  service.mount(srv);
  if (!srv.bind_to_port(o.host, o.port)) {
    std::cerr << "error: cannot bind " << o.host << ":" << o.port << '\n';
    return kBindFailed;
  }
  std::jthread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    srv.stop();
  });
  std::cerr << "listening on " << o.host << ":" << o.port << '\n';
  srv.listen_after_bind();
  // Wake the waiter if the server stopped for another reason.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  service.stop();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Collective spectral density estimation for groups of time series"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--threads", o.threads, "Worker threads (default: NCSDE_THREADS or all cores)");
  app.add_option("--config", o.config, "JSON file with defaults for any flag")->check(CLI::ExistingFile);

  auto* pg = app.add_subcommand("periodogram", "Periodograms of every series in a CSV file");
  pg->add_option("input", o.input, "CSV with one column per series")->required();
  pg->add_option("--truncate", o.truncate, "Keep only the lowest k frequencies")->check(CLI::PositiveNumber);
  pg->add_option("-o,--output", o.output, "Ordinates CSV")->required();
  pg->add_option("--grid", o.grid_output, "Frequency grid CSV (default: <output>_grid.csv)");

  auto* ft = app.add_subcommand("fit", "Collective fit of all series");
  ft->add_option("input", o.input, "CSV with one column per series")->required();
  ft->add_option("--K", o.K, "Number of shared basis functions");
  ft->add_option("--L", o.L, "Number of B-spline basis functions");
  ft->add_option("--penalty", o.penalty, "d2 or diff:a");
  ft->add_option("--lambda", o.lambda, "auto, fixed:x or grid:x1,x2,...");
  ft->add_option("--truncate", o.truncate, "Keep only the lowest k frequencies")->check(CLI::PositiveNumber);
  ft->add_option("--max-iters", o.max_iters, "Outer iteration cap");
  ft->add_option("--tol", o.tol, "Relative objective tolerance");
  ft->add_option("-o,--output", o.output, "Output directory")->required();

  auto* cl = app.add_subcommand("cluster", "Ward clustering of fitted scores or SDF columns");
  cl->add_option("input", o.input, "a.csv (rows are series) or sdf.csv (columns are series)")->required();
  cl->add_option("--k", o.k, "Number of clusters or 'auto' for the elbow");
  cl->add_option("--kmax", o.kmax, "Largest k on the WSS curve");
  cl->add_option("--layout", o.layout, "auto, scores or sdf");
  cl->add_option("-o,--output", o.output, "Output directory")->required();

  auto* sm = app.add_subcommand("simulate", "Monte Carlo comparison of the six estimators");
  sm->add_option("--cells", o.cells, "Comma separated NxM cells (default: the nine standard cells)");
  sm->add_option("--runs", o.runs, "Runs per cell")->check(CLI::Range(2, 100000));
  sm->add_option("--seed", o.seed, "Master seed");
  sm->add_option("--L", o.L, "Number of B-spline basis functions");
  sm->add_option("--penalty", o.penalty, "d2 or diff:a");
  sm->add_option("--lambda", o.lambda, "auto, fixed:x or grid:x1,x2,...");
  sm->add_option("--max-iters", o.max_iters, "Outer iteration cap");
  sm->add_option("--tol", o.tol, "Relative objective tolerance");
  sm->add_option("-o,--output", o.output, "Report CSV")->required();
  sm->add_option("--json", o.json_output, "Also write the report as JSON");

  auto* cp = app.add_subcommand("compare", "All six estimators on one data set");
  cp->add_option("input", o.input, "CSV with one column per series")->required();
  cp->add_option("--K", o.K, "Rank and number of clusters");
  cp->add_option("--L", o.L, "Number of B-spline basis functions");
  cp->add_option("--penalty", o.penalty, "d2 or diff:a");
  cp->add_option("--lambda", o.lambda, "auto, fixed:x or grid:x1,x2,...");
  cp->add_option("--truncate", o.truncate, "Keep only the lowest k frequencies")->check(CLI::PositiveNumber);
  cp->add_option("--truth", o.truth, "CSV whose last column holds reference labels");
  cp->add_option("-o,--output", o.output, "Output directory")->required();

  auto* sv = app.add_subcommand("serve", "Run the HTTP analysis service");
  sv->add_option("--host", o.host, "Listen address");
  sv->add_option("--port", o.port, "Listen port")->check(CLI::Range(0, 65535));
  sv->add_option("--data-dir", o.data_dir, "Persistent storage directory");
  sv->add_option("--schema-dir", o.schema_dir, "Directory of JSON schema files");
  sv->add_option("--workers", o.workers, "Concurrent fit jobs")->check(CLI::PositiveNumber);
  sv->add_option("--queue", o.queue, "Maximum queued fit jobs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    merge_config(app, o);
    if (o.threads > 0) set_thread_count(o.threads);
    if (pg->parsed()) return cmd_periodogram(o);
    if (ft->parsed()) return cmd_fit(o);
    if (cl->parsed()) return cmd_cluster(o);
    if (sm->parsed()) return cmd_simulate(o);
    if (cp->parsed()) return cmd_compare(o);
    if (sv->parsed()) return cmd_serve(o);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kInvalid;
}
