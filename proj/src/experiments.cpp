#include "emid/experiments.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "emid/em_dist.hpp"
#include "emid/em_states.hpp"
#include "emid/estep.hpp"
#include "emid/kalman.hpp"
#include "emid/lagrangian.hpp"
#include "emid/mstep.hpp"
#include "emid/rng.hpp"

namespace emid {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string provenance(const std::string& kind, std::uint64_t seed,
                       const std::string& config) {
  std::ostringstream os;
  os << "# emid-0.1.0 experiment=" << kind << " seed=" << seed
     << " config_hash=" << std::hex << fnv1a(config) << "\n";
  return os.str();
}

Mat gaussian_input(int nu, int T, std::uint64_t seed) {
  Rng rng(seed);
  Mat u(nu, T);
  for (int i = 0; i < u.size(); ++i) u(i) = rng.gaussian();
  return u;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

// ---------------------------------------------------------------------------

BoundSweepOutput run_bound_sweep(const BoundSweepConfig& cfg) {
  if (!(cfg.a_min < cfg.a_max) || cfg.grid < 2 || cfg.T < 2 ||
      !std::isfinite(cfg.a_min) || !std::isfinite(cfg.a_max))
    throw std::invalid_argument("bound-sweep: invalid grid");

  ExplicitModel truth;
  truth.A = Mat::Constant(1, 1, cfg.a_true);
  truth.B = Mat::Constant(1, 1, 1.0);
  truth.G = Mat::Constant(1, 1, 1.0);
  truth.C = Mat::Constant(1, 1, 1.0);
  truth.D = Mat::Zero(1, 1);
  truth.mu = Vec::Zero(1);
  truth.Sigma1 = Mat::Constant(1, 1, cfg.deterministic ? 0.0 : cfg.sigmaw);
  truth.Sigmaw = Mat::Constant(1, 1, cfg.deterministic ? 0.0 : cfg.sigmaw);
  truth.Sigmav = Mat::Constant(1, 1, cfg.sigmav);

  const Mat u = gaussian_input(1, cfg.T, cfg.seed);
  Trajectory tr = sample_trajectory(truth, u, cfg.seed + 1);

  EStepBundle bundle = estep(truth, u, tr.y);
  std::vector<SimErrorInstance> instances =
      make_instances(bundle.posterior, u, tr.y, 1, 1);
  ImplicitModel eta_k = to_implicit(truth);
  Certificate cert = fit_multiplier(eta_k, instances[0]);
  eta_k.P = cert.P;
  std::vector<Vec> h;
  for (const SimErrorInstance& inst : instances)
    h.push_back(compute_h(eta_k, inst, cert.H));

  SmoothedStates ss;
  if (!cfg.deterministic) ss = rts_smoother(truth, u, tr.y);

  BoundSweepOutput out;
  std::ostringstream csv;
  {
    std::ostringstream cs;
    cs << cfg.a_true << "," << cfg.a_min << "," << cfg.a_max << "," << cfg.grid
       << "," << cfg.sigmaw << "," << cfg.sigmav << "," << cfg.deterministic
       << "," << cfg.T << "," << cfg.seed;
    csv << provenance("bound-sweep", cfg.seed, cs.str());
  }
  csv << "A,loglik,q_ls,q_ld,qbar\n";

  for (int g = 0; g < cfg.grid; ++g) {
    BoundSweepRow row;
    row.a = cfg.a_min + (cfg.a_max - cfg.a_min) * g / (cfg.grid - 1);
    ExplicitModel theta = truth;
    theta.A(0, 0) = row.a;
    row.loglik = log_likelihood(theta, u, tr.y);
    row.q_ls = cfg.deterministic
                   ? std::numeric_limits<double>::quiet_NaN()
                   : q_ls_eval(theta, u, tr.y, ss);
    row.q_ld = q_eval(theta, u, tr.y, bundle.posterior);
    ImplicitModel eta = to_implicit(theta);
    eta.P = cert.P;
    row.qbar = std::numeric_limits<double>::quiet_NaN();
    if (in_stable_set(eta, cert.H)) {
      try {
        double jsum = 0.0;
        for (size_t j = 0; j < instances.size(); ++j)
          jsum += jhat(eta, instances[j], cert.H, h[j]);
        const double ld = std::log(theta.Sigmav(0, 0));
        row.qbar = q1_eval(theta.mu, theta.Sigma1, bundle.posterior) +
                   q2_eval(theta.Sigmaw, bundle.posterior, cfg.T) -
                   0.5 * (jsum + cfg.T * (ld + kLog2Pi));
      } catch (const std::exception&) {
      }
    }
    out.rows.push_back(row);
    csv << fmt(row.a) << "," << fmt(row.loglik) << "," << fmt(row.q_ls) << ","
        << fmt(row.q_ld) << "," << fmt(row.qbar) << "\n";
  }
  out.csv = csv.str();
  return out;
}

// ---------------------------------------------------------------------------

ConvergenceOutput run_convergence(const ConvergenceConfig& cfg) {
  if (cfg.trials < 1 || cfg.T < 2) throw std::invalid_argument("convergence: invalid config");
  ConvergenceOutput out;
  std::ostringstream csv;
  {
    std::ostringstream cs;
    cs << cfg.trials << "," << cfg.T << "," << cfg.nx << "," << cfg.radius
       << "," << cfg.snr << "," << cfg.sigmav << "," << cfg.max_iters << ","
       << cfg.seed;
    csv << provenance("convergence", cfg.seed, cs.str());
  }
  csv << "trial,iter,algorithm,loglik_gap,wall_ms\n";

  for (int trial = 0; trial < cfg.trials; ++trial) {
    const std::uint64_t st = cfg.seed + 1000 * (trial + 1);
    Dimensions d;
    d.nx = cfg.nx;
    d.nw = cfg.nx;
    d.nu = 1;
    d.ny = 1;
    d.T = cfg.T;
    RandomSystemOptions ro;
    ro.g_identity = true;
    ro.sigma1_scale = 0.1;
    ro.sigmaw_scale = 0.01;
    ro.sigmav_scale = 1.0;
    ExplicitModel truth = make_random_system(d, cfg.radius, st, ro);
    const Mat u = gaussian_input(1, cfg.T, st + 1);
    // calibrate SNR = var(noise-free output) / sigmav by scaling the output map
    Trajectory probe = sample_trajectory(truth, u, st + 2);
    Mat clean = probe.y - probe.v;
    const double var =
        (clean.array() - clean.mean()).square().sum() / clean.size();
    const double s = std::sqrt(cfg.snr * cfg.sigmav / var);
    truth.C *= s;
    truth.D *= s;
    truth.Sigmav = cfg.sigmav * Mat::Identity(1, 1);
    Trajectory tr = sample_trajectory(truth, u, st + 3);

    RandomSystemOptions io;
    io.g_identity = true;
    io.sigma1_scale = 0.5;
    io.sigmaw_scale = 0.01;
    io.sigmav_scale = 1e-3;
    ExplicitModel init = make_random_system(d, 0.5, st + 4, io);

    // latent-states baseline
    std::vector<double> ll_ls, ms_ls;
    {
      ExplicitModel m = init;
      auto t0 = std::chrono::steady_clock::now();
      for (int k = 0; k < cfg.baseline_max_iters; ++k) {
        double ll;
        m = em_states_iterate(m, u, tr.y, &ll);
        ll_ls.push_back(ll);
        ms_ls.push_back(cfg.timing ? elapsed_ms(t0) : 0.0);
        if (k > 0 && ll - ll_ls[k - 1] < 1e-8 * (1.0 + std::abs(ll))) break;
      }
      ll_ls.push_back(log_likelihood(m, u, tr.y));
      ms_ls.push_back(cfg.timing ? elapsed_ms(t0) : 0.0);
    }
    // latent disturbances
    std::vector<double> ll_ld, ms_ld;
    {
      ExplicitModel m = init;
      EmDistOptions eo;
      // Loose M-step tolerance: per-iteration likelihood gains dwarf the
      // ~0.1-nat M-step slack until well past the iteration cap, and the
      // high-t barrier stages it skips are limited by rounding noise anyway.
      eo.mstep.rel_tol = 1e-3;
      eo.mstep.max_newton = 80;
      auto t0 = std::chrono::steady_clock::now();
      for (int k = 0; k < cfg.max_iters; ++k) {
        EmDistIter it;
        m = em_dist_iterate(m, u, tr.y, eo, &it);
        ll_ld.push_back(it.loglik);
        ms_ld.push_back(cfg.timing ? elapsed_ms(t0) : 0.0);
        if (k > 0 && it.loglik - ll_ld[k - 1] <
                         1e-6 * (1.0 + std::abs(it.loglik)))
          break;
      }
      ll_ld.push_back(log_likelihood(m, u, tr.y));
      ms_ld.push_back(cfg.timing ? elapsed_ms(t0) : 0.0);
    }

    auto emit = [&](const std::string& algo, const std::vector<double>& ll,
                    const std::vector<double>& ms, std::vector<int>* iters_to) {
      const double final_ll = ll.back();
      int hit = static_cast<int>(ll.size()) - 1;
      for (size_t k = 0; k < ll.size(); ++k)
        if (final_ll - ll[k] <= 0.1) {
          hit = static_cast<int>(k);
          break;
        }
      iters_to->push_back(hit);
      for (size_t k = 0; k < ll.size(); ++k) {
        ConvergenceRow row{trial, static_cast<int>(k), algo,
                           final_ll - ll[k], ms[k]};
        out.rows.push_back(row);
        csv << trial << "," << k << "," << algo << "," << fmt(row.loglik_gap)
            << "," << fmt(row.wall_ms) << "\n";
      }
    };
    emit("latent-states", ll_ls, ms_ls, &out.iters_to_tol_ls);
    emit("latent-disturbances", ll_ld, ms_ld, &out.iters_to_tol_ld);
  }
  out.csv = csv.str();
  return out;
}

// ---------------------------------------------------------------------------

StabilityOutput run_stability(const StabilityConfig& cfg) {
  StabilityOutput out;
  std::ostringstream csv;
  {
    std::ostringstream cs;
    cs << cfg.T << "," << cfg.nx << "," << cfg.radius << "," << cfg.max_iters
       << "," << cfg.max_seeds << "," << cfg.seed;
    csv << provenance("stability", cfg.seed, cs.str());
  }

  Dimensions d;
  d.nx = cfg.nx;
  d.nw = cfg.nx;
  d.nu = 1;
  d.ny = 1;
  d.T = cfg.T;

  for (int trial = 0; trial < cfg.max_seeds; ++trial) {
    const std::uint64_t s = cfg.seed + trial;
    RandomSystemOptions ro;
    ro.g_identity = true;
    ro.sigma1_scale = 0.3;
    ro.sigmaw_scale = 1.0;
    ro.sigmav_scale = 1.0;
    ExplicitModel truth = make_random_system(d, cfg.radius, s * 3 + 11, ro);
    const Mat u = gaussian_input(1, cfg.T, s * 3 + 12);
    Trajectory tr = sample_trajectory(truth, u, s * 3 + 13);
    RandomSystemOptions io;
    io.g_identity = true;
    io.sigma1_scale = 0.5;
    io.sigmaw_scale = 0.5;
    io.sigmav_scale = 1.0;
    ExplicitModel init = make_random_system(d, 0.5, s * 3 + 14, io);

    std::vector<double> rad_ls;
    {
      ExplicitModel m = init;
      for (int k = 0; k < cfg.max_iters; ++k) {
        m = em_states_iterate(m, u, tr.y);
        rad_ls.push_back(spectral_radius(m.A));
      }
    }
    int bad = -1;
    for (size_t k = 0; k < rad_ls.size(); ++k)
      if (rad_ls[k] >= 1.0) {
        bad = static_cast<int>(k);
        break;
      }
    if (bad < 0 && trial + 1 < cfg.max_seeds) continue;

    std::vector<double> rad_ld;
    {
      ExplicitModel m = init;
      EmDistOptions eo;
      eo.mstep.rel_tol = 1e-6;
      for (int k = 0; k < cfg.max_iters; ++k) {
        m = em_dist_iterate(m, u, tr.y, eo);
        rad_ld.push_back(spectral_radius(m.A));
      }
    }
    out.baseline_unstable = bad >= 0;
    out.found_seed = s;
    out.unstable_iter = bad;
    csv << "# found_seed=" << s << " baseline_unstable_iter=" << bad << "\n";
    csv << "seed,iter,algorithm,spectral_radius\n";
    auto emit = [&](const std::string& algo, const std::vector<double>& rad) {
      for (size_t k = 0; k < rad.size(); ++k) {
        out.rows.push_back({s, static_cast<int>(k), algo, rad[k]});
        csv << s << "," << k << "," << algo << "," << fmt(rad[k]) << "\n";
      }
    };
    emit("latent-states", rad_ls);
    emit("latent-disturbances", rad_ld);
    break;
  }
  out.csv = csv.str();
  return out;
}

// ---------------------------------------------------------------------------

SingularDemoOutput run_singular_demo(const SingularDemoConfig& cfg) {
  MsdOptions mo;
  mo.sigma1_scale = 0.1;
  mo.sigmaw = 0.05;
  mo.sigmav = 0.01;
  ExplicitModel truth = mass_spring_damper(1.0, 0.4, 2.0, 0.3, mo);
  const Mat u = gaussian_input(1, cfg.T, cfg.seed);
  Trajectory tr = sample_trajectory(truth, u, cfg.seed + 1);

  Dimensions d;
  d.nx = 2;
  d.nw = 1;
  d.nu = 1;
  d.ny = 1;
  d.T = cfg.T;
  RandomSystemOptions io;
  io.sigma1_scale = 0.3;
  io.sigmaw_scale = 0.5;
  io.sigmav_scale = 0.5;
  ExplicitModel init = make_random_system(d, 0.6, cfg.seed + 2, io);

  SingularDemoOutput out;
  {
    Eigen::SelfAdjointEigenSolver<Mat> eig(truth.G * truth.Sigmaw *
                                           truth.G.transpose());
    out.rank_gswg =
        (eig.eigenvalues().array() >
         1e-12 * eig.eigenvalues().cwiseAbs().maxCoeff())
            .count();
  }
  try {
    em_states_run(init, u, tr.y);
  } catch (const SingularModelError& e) {
    out.baseline_error = e.what();
  }

  std::ostringstream csv;
  {
    std::ostringstream cs;
    cs << cfg.T << "," << cfg.max_iters << "," << cfg.seed;
    csv << provenance("singular-demo", cfg.seed, cs.str());
  }
  csv << "# rank_gswg=" << out.rank_gswg << "\n";
  csv << "# baseline=" << (out.baseline_error.empty() ? "accepted (unexpected)"
                                                      : "rejected")
      << "\n";
  csv << "iter,loglik,spectral_radius\n";
  ExplicitModel m = init;
  EmDistOptions eo;
  for (int k = 0; k < cfg.max_iters; ++k) {
    EmDistIter it;
    m = em_dist_iterate(m, u, tr.y, eo, &it);
    out.rows.push_back({k, it.loglik, spectral_radius(m.A)});
    csv << k << "," << fmt(it.loglik) << "," << fmt(spectral_radius(m.A))
        << "\n";
  }
  const double final_ll = log_likelihood(m, u, tr.y);
  out.rows.push_back({cfg.max_iters, final_ll, spectral_radius(m.A)});
  csv << cfg.max_iters << "," << fmt(final_ll) << ","
      << fmt(spectral_radius(m.A)) << "\n";
  out.loglik_gain = final_ll - out.rows.front().loglik;
  out.csv = csv.str();
  return out;
}

}  // namespace emid
