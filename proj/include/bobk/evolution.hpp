#pragma once

#include <utility>

#include "bobk/collision.hpp"
#include "bobk/common.hpp"
#include "bobk/grid.hpp"
#include "bobk/measures.hpp"

namespace bobk {

// ---------------------------------------------------------------------------
// Time integration of d/dt psi = Q[psi] on the masked ball.
// ---------------------------------------------------------------------------

enum class Integrator { rk4, heun };

struct EvolutionConfig {
  AngularKernel kernel;
  SphereQuadParams quad_params;
  double t_end = 1.0;
  double dt_cap = 0.05;
  Integrator integrator = Integrator::rk4;
  std::vector<double> checkpoints;     // sorted, within (0, t_end]
  double tol_drift = 1e-6;
  double stability_fraction = 0.5;     // dt * (loss-coefficient bound) <= this

  explicit EvolutionConfig(AngularKernel k) : kernel(std::move(k)) {}
};

// Step-size policy. Cutoff kernels: dt bounded by the loss coefficient
// int b_n dsigma (explicit stages must resolve the stiff loss term).
// Non-cutoff kernels: the same role is played by the saturated bound
// 3 * 2 pi int b min{2, ||1-psi0||_a (R sin(t/2))^a} sin t dt from the
// size estimates of the three split terms.
inline double auto_dt(const EvolutionConfig& cfg, double r_max, double alpha,
                      double norm_alpha) {
  double rate;
  if (cfg.kernel.has_cutoff()) {
    rate = kernel_mass(cfg.kernel);
  } else {
    auto f = [&](double t) {
      double amp = norm_alpha * std::pow(r_max * std::sin(0.5 * t), alpha);
      return cfg.kernel(t) * std::min(2.0, amp) * std::sin(t);
    };
    rate = 3.0 * 2.0 * pi * graded_theta_integral(f);
  }
  double dt = cfg.stability_fraction / std::max(rate, 1e-12);
  return std::min(dt, cfg.dt_cap);
}

inline void validate(const EvolutionConfig& cfg, double dt) {
  if (!(cfg.t_end > 0)) fail("EvolutionConfig: t_end must be positive");
  for (std::size_t i = 0; i + 1 < cfg.checkpoints.size(); ++i)
    if (cfg.checkpoints[i] >= cfg.checkpoints[i + 1])
      fail("EvolutionConfig: checkpoint times must be strictly increasing");
  for (double c : cfg.checkpoints)
    if (c <= 0 || c > cfg.t_end + 1e-12) fail("EvolutionConfig: checkpoint outside (0, t_end]");
  if (cfg.kernel.has_cutoff() && dt * kernel_mass(cfg.kernel) > cfg.stability_fraction * 1.0001)
    fail("EvolutionConfig: dt violates the loss stability bound");
}

struct MonitorRow {
  double t, max_abs_psi, hermitian_drift, origin_value, dt, rhs_sup;
};

struct Trajectory {
  std::vector<std::pair<double, CharField>> snapshots;
  std::vector<MonitorRow> monitors;
  double alpha = 0;            // membership exponent used
  double norm_one_minus = 0;   // ||1 - psi0||_alpha (dense evaluation)
  bool aborted = false;
  std::string abort_reason;

  const CharField& at(double t) const {
    for (auto& s : snapshots)
      if (std::abs(s.first - t) < 1e-9) return s.second;
    fail("Trajectory: no snapshot at requested time");
  }
  bool has(double t) const {
    for (auto& s : snapshots)
      if (std::abs(s.first - t) < 1e-9) return true;
    return false;
  }
};

inline double sup_node_distance(const CharField& a, const CharField& b,
                                const BallMask& mask) {
  double d = 0;
  for (auto idx : mask.indices) d = std::max(d, std::abs(a.value(idx) - b.value(idx)));
  return d;
}

// ---------------------------------------------------------------------------
// Evolver: owns the collision engine; single logical owner advances time.
// ---------------------------------------------------------------------------

class Evolver {
 public:
  Evolver(const SpectralGrid& grid, const BallMask& mask, const EvolutionConfig& cfg,
          std::shared_ptr<const Carrier> carrier, double alpha = 0.0)
      : grid_(grid), mask_(&mask), cfg_(cfg),
        quad_(make_sphere_quadrature(cfg.quad_params, &cfg.kernel)),
        op_(grid, mask, cfg.kernel, quad_, std::move(carrier), alpha) {}

  const CollisionOperator& op() const { return op_; }

  RhsOutput rhs(const CharField& f) const {
    return cfg_.kernel.has_cutoff() ? op_.direct(f) : op_.regularized(f);
  }

  struct StepResult {
    CharField field;
    double rhs_sup = 0;  // sup-node |Q[psi]| at the step start
  };

  // One explicit step; the origin node is pinned to 1 (its RHS vanishes
  // identically, so the unpinned update agrees to rounding).
  StepResult step(const CharField& f, double dt) const {
    StepResult res;
    RhsOutput k1 = rhs(f);
    res.rhs_sup = sup_abs(k1);
    if (cfg_.integrator == Integrator::heun) {
      CharField s1 = axpy(f, dt, k1);
      RhsOutput k2 = rhs(s1);
      res.field = combine2(f, dt, k1, k2);
    } else {
      CharField s1 = axpy(f, 0.5 * dt, k1);
      RhsOutput k2 = rhs(s1);
      CharField s2 = axpy(f, 0.5 * dt, k2);
      RhsOutput k3 = rhs(s2);
      CharField s3 = axpy(f, dt, k3);
      RhsOutput k4 = rhs(s3);
      res.field = combine4(f, dt, k1, k2, k3, k4);
    }
    res.field.time = f.time + dt;
    pin_origin(res.field);
    return res;
  }

 private:
  double sup_abs(const RhsOutput& k) const {
    double m = 0;
    for (auto idx : mask_->indices)
      m = std::max(m, std::abs(cplx(k.re[idx], k.im[idx])));
    return m;
  }
  CharField axpy(const CharField& f, double a, const RhsOutput& k) const {
    CharField g = f;
    for (auto idx : mask_->indices) {
      g.re[idx] = f.re[idx] + a * k.re[idx];
      g.im[idx] = f.im[idx] + a * k.im[idx];
    }
    return g;
  }
  CharField combine2(const CharField& f, double dt, const RhsOutput& k1,
                     const RhsOutput& k2) const {
    CharField g = f;
    for (auto idx : mask_->indices) {
      g.re[idx] = f.re[idx] + 0.5 * dt * (k1.re[idx] + k2.re[idx]);
      g.im[idx] = f.im[idx] + 0.5 * dt * (k1.im[idx] + k2.im[idx]);
    }
    return g;
  }
  CharField combine4(const CharField& f, double dt, const RhsOutput& k1,
                     const RhsOutput& k2, const RhsOutput& k3, const RhsOutput& k4) const {
    CharField g = f;
    const double c = dt / 6.0;
    for (auto idx : mask_->indices) {
      g.re[idx] = f.re[idx] + c * (k1.re[idx] + 2 * k2.re[idx] + 2 * k3.re[idx] + k4.re[idx]);
      g.im[idx] = f.im[idx] + c * (k1.im[idx] + 2 * k2.im[idx] + 2 * k3.im[idx] + k4.im[idx]);
    }
    return g;
  }
  void pin_origin(CharField& f) const {
    f.re[grid_.origin_lin()] = 1.0;
    f.im[grid_.origin_lin()] = 0.0;
  }

  SpectralGrid grid_;
  const BallMask* mask_;
  EvolutionConfig cfg_;
  SphereQuadrature quad_;
  CollisionOperator op_;
};

// ---------------------------------------------------------------------------
// evolve: full run from a measure spec, with monitors and checkpoints.
// ---------------------------------------------------------------------------

// Find an admissible membership exponent alpha in (2s, 2].
inline MembershipCertificate find_membership(const MeasureSpec& spec, double s) {
  const double grid_alphas[] = {2.0, 1.75, 1.5, 1.25, 1.0, 0.8, 0.6, 0.4, 0.2};
  for (double a : grid_alphas) {
    if (a <= 2.0 * s) continue;
    auto cert = kalpha_membership(spec, a);
    if (cert.member) return cert;
  }
  MembershipCertificate c;
  c.member = false;
  c.reason = "no alpha in (2s, 2] with finite alpha-moment and (alpha > 1) zero mean";
  return c;
}

inline Trajectory evolve(const MeasureSpec& initial, const EvolutionConfig& cfg,
                         const SpectralGrid& grid, const BallMask& mask) {
  auto cert = find_membership(initial, cfg.kernel.s());
  if (!cert.member)
    fail("evolve: initial datum violates the well-posedness hypothesis "
         "(K^alpha membership for some alpha in (2s, 2]): " + cert.reason);

  auto carrier = std::make_shared<Carrier>(initial);
  double norm_a = 0.0;
  if (!carrier->is_tabulated()) {
    norm_a = kalpha_norm_dense(initial, cert.alpha);
  } else {
    carrier->prepare_transform(grid);
  }

  Trajectory traj;
  traj.alpha = cert.alpha;
  traj.norm_one_minus = norm_a;

  Evolver ev(grid, mask, cfg, carrier, cert.alpha);
  CharField f = sample_field(*carrier, grid);
  {
    auto inv = f.check_invariants(mask, cfg.tol_drift);
    if (!inv.ok) fail("evolve: initial field invariant violation: " + inv.message);
  }

  double dt_auto = auto_dt(cfg, grid.r_max, cert.alpha,
                           carrier->is_tabulated() ? 2.0 : std::max(norm_a, 1e-3));
  validate(cfg, dt_auto);

  std::vector<double> marks = cfg.checkpoints;
  if (marks.empty() || std::abs(marks.back() - cfg.t_end) > 1e-12)
    marks.push_back(cfg.t_end);

  traj.monitors.push_back({0.0, f.max_abs(mask), f.hermitian_drift(mask),
                           f.origin_value().real(), 0.0, 0.0});

  double t = 0.0;
  std::size_t next_mark = 0;
  while (next_mark < marks.size()) {
    double target = marks[next_mark];
    double dt = std::min(dt_auto, target - t);
    Evolver::StepResult st;
    int halvings = 0;
    for (;;) {
      st = ev.step(f, dt);
      double m = st.field.max_abs(mask);
      if (m <= 1.0 + 10.0 * cfg.tol_drift) break;
      dt *= 0.5;
      if (++halvings > 8) {
        traj.aborted = true;
        traj.abort_reason = "step rejected 8 times: |psi| exceeds 1 + 10*tol_drift";
        traj.snapshots.emplace_back(t, f);  // last good state
        return traj;
      }
    }
    f = std::move(st.field);
    t = f.time;
    traj.monitors.push_back({t, f.max_abs(mask), f.hermitian_drift(mask),
                             f.origin_value().real(), dt, st.rhs_sup});
    if (std::abs(t - target) < 1e-9) {
      f.time = target;
      if (std::find_if(cfg.checkpoints.begin(), cfg.checkpoints.end(), [&](double c) {
            return std::abs(c - target) < 1e-9;
          }) != cfg.checkpoints.end() ||
          std::abs(target - cfg.t_end) < 1e-12)
        traj.snapshots.emplace_back(target, f);
      ++next_mark;
      t = target;
    }
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Cutoff-sequence convergence study.
// ---------------------------------------------------------------------------

struct CutoffConvergenceTable {
  std::vector<double> n_levels;
  std::vector<double> times;
  // distance[pair][time]: sup-node distance between consecutive-n trajectories
  std::vector<std::vector<double>> distances;
  bool monotone = true;  // distances decreasing in n at every checkpoint
};

inline CutoffConvergenceTable cutoff_convergence(const MeasureSpec& initial,
                                                 const std::vector<double>& n_list,
                                                 const EvolutionConfig& base_cfg,
                                                 const SpectralGrid& grid,
                                                 const BallMask& mask,
                                                 double tolerance = 1e-12) {
  for (std::size_t i = 0; i + 1 < n_list.size(); ++i)
    if (!(n_list[i] < n_list[i + 1])) fail("cutoff_convergence: n_list must be increasing");

  CutoffConvergenceTable table;
  table.n_levels = n_list;
  table.times = base_cfg.checkpoints;

  std::vector<Trajectory> runs;
  for (double n : n_list) {
    EvolutionConfig cfg = base_cfg;
    cfg.kernel = base_cfg.kernel.with_cutoff(n);
    runs.push_back(evolve(initial, cfg, grid, mask));
  }
  for (std::size_t p = 0; p + 1 < runs.size(); ++p) {
    std::vector<double> row;
    for (double t : table.times)
      row.push_back(sup_node_distance(runs[p].at(t), runs[p + 1].at(t), mask));
    table.distances.push_back(row);
  }
  for (std::size_t p = 0; p + 1 < table.distances.size(); ++p)
    for (std::size_t q = 0; q < table.times.size(); ++q)
      if (table.distances[p + 1][q] > table.distances[p][q] + tolerance)
        table.monotone = false;  // flags under-resolved quadrature
  return table;
}

}  // namespace bobk
