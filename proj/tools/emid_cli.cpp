// Command-line front end: simulate trajectories from a model file, identify a
// model from data, and run the seeded experiment suites. Exit codes: 0 on
// success, 1 on configuration errors, 2 on solver failures.
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "emid/em_dist.hpp"
#include "emid/em_states.hpp"
#include "emid/experiments.hpp"
#include "emid/kalman.hpp"
#include "emid/model.hpp"
#include "emid/rng.hpp"

using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

// Data files are CSV with one row per time step: u columns then y columns.
std::string data_to_csv(const emid::Mat& u, const emid::Mat& y) {
  std::ostringstream os;
  os.precision(17);
  for (int i = 0; i < u.rows(); ++i) os << "u" << i << ",";
  for (int i = 0; i < y.rows(); ++i) os << "y" << i << (i + 1 < y.rows() ? "," : "\n");
  for (int t = 0; t < u.cols(); ++t) {
    for (int i = 0; i < u.rows(); ++i) os << u(i, t) << ",";
    for (int i = 0; i < y.rows(); ++i)
      os << y(i, t) << (i + 1 < y.rows() ? "," : "\n");
  }
  return os.str();
}

void data_from_csv(const std::string& text, int nu, int ny, emid::Mat* u,
                   emid::Mat* y) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {  // skip the column-name row
      header = false;
      continue;
    }
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<int>(row.size()) != nu + ny)
      throw std::runtime_error("data row has wrong column count");
    rows.push_back(std::move(row));
  }
  const int T = static_cast<int>(rows.size());
  if (T == 0) throw std::runtime_error("data file has no rows");
  *u = emid::Mat(nu, T);
  *y = emid::Mat(ny, T);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < nu; ++i) (*u)(i, t) = rows[t][i];
    for (int i = 0; i < ny; ++i) (*y)(i, t) = rows[t][nu + i];
  }
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  return json::parse(read_file(path));
}

template <typename T>
void maybe(const json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

int run_experiment(const std::string& kind, const json& j, std::uint64_t seed,
                   const std::string& out_path) {
  std::string csv;
  if (kind == "bound-sweep") {
    emid::BoundSweepConfig cfg;
    cfg.seed = seed;
    maybe(j, "a_true", &cfg.a_true);
    maybe(j, "a_min", &cfg.a_min);
    maybe(j, "a_max", &cfg.a_max);
    maybe(j, "grid", &cfg.grid);
    maybe(j, "sigmaw", &cfg.sigmaw);
    maybe(j, "sigmav", &cfg.sigmav);
    maybe(j, "deterministic", &cfg.deterministic);
    maybe(j, "T", &cfg.T);
    csv = emid::run_bound_sweep(cfg).csv;
  } else if (kind == "convergence") {
    emid::ConvergenceConfig cfg;
    cfg.seed = seed;
    maybe(j, "trials", &cfg.trials);
    maybe(j, "T", &cfg.T);
    maybe(j, "nx", &cfg.nx);
    maybe(j, "radius", &cfg.radius);
    maybe(j, "snr", &cfg.snr);
    maybe(j, "sigmav", &cfg.sigmav);
    maybe(j, "max_iters", &cfg.max_iters);
    maybe(j, "timing", &cfg.timing);
    csv = emid::run_convergence(cfg).csv;
  } else if (kind == "stability") {
    emid::StabilityConfig cfg;
    cfg.seed = seed;
    maybe(j, "T", &cfg.T);
    maybe(j, "nx", &cfg.nx);
    maybe(j, "radius", &cfg.radius);
    maybe(j, "max_iters", &cfg.max_iters);
    maybe(j, "max_seeds", &cfg.max_seeds);
    csv = emid::run_stability(cfg).csv;
  } else if (kind == "singular") {
    emid::SingularDemoConfig cfg;
    cfg.seed = seed;
    maybe(j, "T", &cfg.T);
    maybe(j, "max_iters", &cfg.max_iters);
    csv = emid::run_singular_demo(cfg).csv;
  } else {
    std::cerr << "unknown experiment kind: " << kind << "\n";
    return 1;
  }
  if (out_path.empty())
    std::cout << csv;
  else
    write_file(out_path, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"linear Gaussian state-space identification via EM"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "sample a trajectory from a model file");
  std::string sim_model, sim_out;
  int sim_T = 100;
  std::uint64_t sim_seed = 1;
  sim->add_option("--model", sim_model, "model JSON file")->required();
  sim->add_option("--T", sim_T, "number of samples");
  sim->add_option("--seed", sim_seed, "random seed")->required();
  sim->add_option("--out", sim_out, "output CSV path")->required();

  // identify
  auto* idf = app.add_subcommand("identify", "fit a model to input/output data");
  std::string idf_init, idf_data, idf_out, idf_algo = "latent-disturbances";
  int idf_iters = 50;
  idf->add_option("--init", idf_init, "initial model JSON file")->required();
  idf->add_option("--data", idf_data, "data CSV (u columns then y columns)")->required();
  idf->add_option("--out", idf_out, "fitted model JSON path")->required();
  idf->add_option("--algorithm", idf_algo,
                  "latent-disturbances | latent-states");
  idf->add_option("--max-iters", idf_iters, "EM iteration cap");

  // experiment
  auto* exp = app.add_subcommand("experiment", "run a seeded experiment suite");
  std::string exp_kind, exp_config, exp_out;
  std::uint64_t exp_seed = 0;
  exp->add_option("kind", exp_kind,
                  "bound-sweep | convergence | stability | singular")
      ->required();
  exp->add_option("--seed", exp_seed, "random seed (required for reproducibility)")
      ->required();
  exp->add_option("--config", exp_config, "JSON config file with overrides");
  exp->add_option("--out", exp_out, "output CSV path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? 1 : 0;
  }

  try {
    if (sim->parsed()) {
      emid::ExplicitModel model = emid::model_from_json(read_file(sim_model));
      emid::Rng rng(sim_seed);
      emid::Mat u(model.B.cols(), sim_T);
      for (int i = 0; i < u.size(); ++i) u(i) = rng.gaussian();
      emid::Trajectory tr = emid::sample_trajectory(model, u, sim_seed + 1);
      write_file(sim_out, data_to_csv(u, tr.y));
      return 0;
    }
    if (idf->parsed()) {
      emid::ExplicitModel init = emid::model_from_json(read_file(idf_init));
      emid::Mat u, y;
      data_from_csv(read_file(idf_data), static_cast<int>(init.B.cols()),
                    static_cast<int>(init.C.rows()), &u, &y);
      try {
        if (idf_algo == "latent-disturbances") {
          emid::EmDistOptions opts;
          opts.max_iters = idf_iters;
          emid::EmDistResult r = emid::em_dist_run(init, u, y, opts);
          write_file(idf_out, emid::model_to_json(r.model));
          std::cout << "loglik " << r.loglik << "\n";
        } else if (idf_algo == "latent-states") {
          emid::EmOptions opts;
          opts.max_iters = idf_iters;
          emid::EmRunResult r = emid::em_states_run(init, u, y, opts);
          write_file(idf_out, emid::model_to_json(r.model));
          std::cout << "loglik " << r.loglik.back() << "\n";
        } else {
          std::cerr << "unknown algorithm: " << idf_algo << "\n";
          return 1;
        }
      } catch (const std::exception& e) {
        std::cerr << "identification failed: " << e.what() << "\n";
        return 2;
      }
      return 0;
    }
    if (exp->parsed()) {
      json cfg = load_config(exp_config);
      try {
        return run_experiment(exp_kind, cfg, exp_seed, exp_out);
      } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
      } catch (const std::exception& e) {
        std::cerr << "experiment failed: " << e.what() << "\n";
        return 2;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
