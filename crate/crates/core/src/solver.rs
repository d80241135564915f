//! Augmented-Lagrangian solver for smooth equality-constrained NLPs with
//! variable bounds.
//!
//! Outer loop: safeguarded multiplier/penalty updates (proximal method of
//! multipliers). Inner loop: the bounds are handled by an interior
//! log-barrier whose weight shrinks across outer iterations, and each
//! barrier subproblem is minimized with truncated Newton-CG using exact
//! Lagrangian curvature — matrix-free, so no indefinite KKT
//! factorizations. Plain f64 arithmetic with no randomness, so repeated
//! solves are bitwise identical.

use serde::{Deserialize, Serialize};

/// Problem interface the solver consumes. Only equality constraints and
/// variable bounds; general inequalities are expected to arrive as bounded
/// slacks.
pub trait NlpProblem {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    /// Objective value; fills `c_out` with equality residuals.
    fn eval_fc(&self, x: &[f64], c_out: &mut [f64]) -> f64;
    /// `g = grad f(x) + J(x)^T y`.
    fn eval_grad(&self, x: &[f64], y: &[f64], g: &mut [f64]);
    /// `out = J(x) v` (exact Jacobian-vector product).
    fn jac_prod(&self, x: &[f64], v: &[f64], out: &mut [f64]);
    /// `out += H_f(x) v` (objective Hessian-vector product).
    fn obj_hess_prod(&self, x: &[f64], v: &[f64], out: &mut [f64]);
    /// `out += sum_r w_r (d2 c_r / dx2) v` (constraint curvature).
    fn con_hess_prod(&self, x: &[f64], w: &[f64], v: &[f64], out: &mut [f64]);
    /// `out = diag(H_f) + rho * diag(J^T J)`, the Jacobi preconditioner of
    /// the Gauss-Newton part.
    fn precond_diag(&self, x: &[f64], rho: f64, out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// Infinity-norm tolerance on equality residuals.
    pub feas_tol: f64,
    /// Infinity-norm tolerance on the projected gradient.
    pub opt_tol: f64,
    pub max_outer_iters: usize,
    /// Newton iterations per subproblem.
    pub max_inner_iters: usize,
    /// CG iterations per Newton step.
    pub cg_max_iters: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// Initial inner tolerance; tightened toward `opt_tol` as outer
    /// iterations progress.
    pub omega0: f64,
    /// Initial feasibility gate for multiplier updates.
    pub eta0: f64,
    /// Initial interior barrier weight on the variable bounds.
    pub barrier_mu0: f64,
    /// Initial barrier weight when warm-start multipliers are supplied
    /// (the warm point's bound activity is then worth preserving).
    pub barrier_mu_warm: f64,
    /// Barrier floor; bound activity is resolved to roughly this scale.
    pub barrier_mu_min: f64,
    /// Proximal weight on the inner subproblems; keeps them strongly
    /// convex under linear objectives and vanishes at the fixed point.
    pub prox_reg: f64,
    pub armijo_c1: f64,
    pub max_linesearch: usize,
    /// Record per-iteration merit/feasibility/stationarity lines.
    pub record_iterations: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-6,
            opt_tol: 1e-5,
            max_outer_iters: 100,
            max_inner_iters: 40,
            cg_max_iters: 300,
            initial_penalty: 1000.0,
            penalty_growth: 10.0,
            penalty_max: 1e12,
            omega0: 1e-2,
            eta0: 1e-2,
            barrier_mu0: 1e-3,
            barrier_mu_warm: 1e-7,
            barrier_mu_min: 1e-11,
            prox_reg: 1e-4,
            armijo_c1: 1e-4,
            max_linesearch: 40,
            record_iterations: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// One line of the optional iteration log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub outer: usize,
    pub inner: usize,
    pub merit: f64,
    pub feasibility: f64,
    pub stationarity: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct NlpResult {
    pub x: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub objective: f64,
    pub feasibility: f64,
    pub stationarity: f64,
    pub status: SolveStatus,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub iterations: Vec<IterRecord>,
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].max(lo[i]).min(hi[i]);
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Projected-gradient infinity norm: max_i |x_i - P(x_i - g_i)|.
fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut n: f64 = 0.0;
    for i in 0..x.len() {
        let stepped = (x[i] - g[i]).max(lo[i]).min(hi[i]);
        n = n.max((x[i] - stepped).abs());
    }
    n
}

struct InnerOutcome {
    f: f64,
    stationarity: f64,
    iters: usize,
}

/// Scratch buffers reused across the Newton-CG iterations.
struct Workspace {
    y: Vec<f64>,
    g: Vec<f64>,
    grad_f: Vec<f64>,
    bar_diag: Vec<f64>,
    d: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    pk: Vec<f64>,
    hp: Vec<f64>,
    vm: Vec<f64>,
    precond: Vec<f64>,
    jv: Vec<f64>,
    jv_scaled: Vec<f64>,
    x_trial: Vec<f64>,
    c_trial: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, m: usize) -> Self {
        Self {
            y: vec![0.0; m],
            g: vec![0.0; n],
            grad_f: vec![0.0; n],
            bar_diag: vec![0.0; n],
            d: vec![0.0; n],
            r: vec![0.0; n],
            z: vec![0.0; n],
            pk: vec![0.0; n],
            hp: vec![0.0; n],
            vm: vec![0.0; n],
            precond: vec![0.0; n],
            jv: vec![0.0; m],
            jv_scaled: vec![0.0; m],
            x_trial: vec![0.0; n],
            c_trial: vec![0.0; m],
        }
    }
}

/// Minimize the augmented Lagrangian for fixed (lambda, rho, mu) with the
/// bounds as an interior log-barrier, using Steihaug-CG Newton steps with
/// exact Lagrangian curvature.
#[allow(clippy::too_many_arguments)]
fn inner_solve<P: NlpProblem>(
    p: &P,
    x: &mut Vec<f64>,
    lambda: &[f64],
    rho: f64,
    mu: f64,
    tol: f64,
    settings: &SolverSettings,
    outer: usize,
    records: &mut Vec<IterRecord>,
    c: &mut Vec<f64>,
    feas_out: &mut f64,
    ws: &mut Workspace,
    pinned: &[bool],
) -> InnerOutcome {
    let n = p.num_vars();
    let m = p.num_eq();
    let (lo, hi) = (p.lower(), p.upper());
    let sigma = settings.prox_reg;

    // Everything not pinned starts strictly interior, far enough from the
    // bounds that the barrier gradient stays O(1) at the current weight.
    for i in 0..n {
        if !pinned[i] {
            let span = (hi[i] - lo[i]).min(1e4);
            let off = (1e-9 * span).max(mu.min(1e-2 * span));
            x[i] = x[i].clamp(lo[i] + off, hi[i] - off);
        }
    }
    let x_ref = x.clone();

    let barrier = |x: &[f64]| -> f64 {
        let mut b = 0.0;
        for i in 0..n {
            if !pinned[i] {
                b -= ((x[i] - lo[i]) * (hi[i] - x[i])).ln();
            }
        }
        b
    };
    let merit_of = |f: f64, c: &[f64], x: &[f64]| -> f64 {
        let mut v = f + mu * barrier(x);
        for i in 0..m {
            v += lambda[i] * c[i] + 0.5 * rho * c[i] * c[i];
        }
        for i in 0..n {
            let dx = x[i] - x_ref[i];
            v += 0.5 * sigma * dx * dx;
        }
        v
    };

    let mut f = p.eval_fc(x, c);
    let mut merit = merit_of(f, c, x);
    let mut stationarity = f64::INFINITY;
    let mut iters = 0;
    // Steihaug trust radius, adapted from the accepted step fraction.
    let mut delta: f64 = 100.0;

    for it in 0..settings.max_inner_iters {
        for i in 0..m {
            ws.y[i] = lambda[i] + rho * c[i];
        }
        p.eval_grad(x, &ws.y, &mut ws.g);
        // True AL stationarity governs outer convergence; the barrier and
        // prox terms only shape the subproblem.
        stationarity = projected_gradient_norm(x, &ws.g, lo, hi);
        let mut g_inner_norm: f64 = 0.0;
        for i in 0..n {
            if pinned[i] {
                ws.g[i] = 0.0;
                continue;
            }
            ws.g[i] += sigma * (x[i] - x_ref[i]);
            ws.g[i] += mu * (-1.0 / (x[i] - lo[i]) + 1.0 / (hi[i] - x[i]));
            g_inner_norm = g_inner_norm.max(ws.g[i].abs());
        }
        if settings.record_iterations {
            records.push(IterRecord {
                outer,
                inner: it,
                merit,
                feasibility: inf_norm(c),
                stationarity,
                penalty: rho,
            });
        }
        if stationarity <= tol || g_inner_norm <= 0.1 * tol.max(mu) {
            break;
        }

        // Cached objective gradient for J^T products inside CG, plus the
        // diagonal preconditioner including the exact barrier curvature.
        ws.jv.fill(0.0);
        p.eval_grad(x, &ws.jv, &mut ws.grad_f);
        p.precond_diag(x, rho, &mut ws.precond);
        for i in 0..n {
            ws.bar_diag[i] = if pinned[i] {
                0.0
            } else {
                let dl = x[i] - lo[i];
                let dh = hi[i] - x[i];
                mu * (1.0 / (dl * dl) + 1.0 / (dh * dh))
            };
            ws.precond[i] = (ws.precond[i] + sigma + ws.bar_diag[i]).max(1e-10);
        }

        // Jacobi-preconditioned Steihaug-CG on
        //   (H_f + sum y_r d2c_r + rho J^T J + sigma I + barrier) d = -g.
        ws.d.fill(0.0);
        for i in 0..n {
            ws.r[i] = if pinned[i] { 0.0 } else { -ws.g[i] };
            ws.z[i] = ws.r[i] / ws.precond[i];
        }
        ws.pk.copy_from_slice(&ws.z);
        let mut rz: f64 = ws.r.iter().zip(&ws.z).map(|(a, b)| a * b).sum();
        let rz0 = rz.max(1e-300);
        let cg_rel_tol = 1e-4;
        for _cg in 0..settings.cg_max_iters {
            if rz <= cg_rel_tol * cg_rel_tol * rz0 {
                break;
            }
            for i in 0..n {
                ws.vm[i] = if pinned[i] { 0.0 } else { ws.pk[i] };
            }
            ws.hp.fill(0.0);
            p.obj_hess_prod(x, &ws.vm, &mut ws.hp);
            p.con_hess_prod(x, &ws.y, &ws.vm, &mut ws.hp);
            for i in 0..n {
                ws.hp[i] += (sigma + ws.bar_diag[i]) * ws.vm[i];
            }
            p.jac_prod(x, &ws.vm, &mut ws.jv);
            for j in 0..m {
                ws.jv_scaled[j] = rho * ws.jv[j];
            }
            // J^T (rho J v) = eval_grad(x, rho J v) - grad_f
            p.eval_grad(x, &ws.jv_scaled, &mut ws.x_trial);
            for i in 0..n {
                if pinned[i] {
                    ws.hp[i] = 0.0;
                } else {
                    ws.hp[i] += ws.x_trial[i] - ws.grad_f[i];
                }
            }
            let php: f64 = ws.pk.iter().zip(&ws.hp).map(|(a, b)| a * b).sum();
            let to_boundary = |d: &[f64], pk: &[f64]| -> f64 {
                let dd: f64 = d.iter().map(|v| v * v).sum();
                let dp: f64 = d.iter().zip(pk).map(|(a, b)| a * b).sum();
                let pp: f64 = pk.iter().map(|v| v * v).sum::<f64>().max(1e-300);
                let disc = (dp * dp + pp * (delta * delta - dd)).max(0.0);
                (-dp + disc.sqrt()) / pp
            };
            if php <= 1e-14 * ws.pk.iter().map(|v| v * v).sum::<f64>() {
                // Nonpositive curvature: walk to the trust boundary.
                let tau = to_boundary(&ws.d, &ws.pk);
                for i in 0..n {
                    ws.d[i] += tau * ws.pk[i];
                }
                break;
            }
            let alpha = rz / php;
            let dd_next: f64 = ws
                .d
                .iter()
                .zip(&ws.pk)
                .map(|(d, p)| (d + alpha * p) * (d + alpha * p))
                .sum();
            if dd_next.sqrt() >= delta {
                let tau = to_boundary(&ws.d, &ws.pk);
                for i in 0..n {
                    ws.d[i] += tau * ws.pk[i];
                }
                break;
            }
            for i in 0..n {
                ws.d[i] += alpha * ws.pk[i];
                ws.r[i] -= alpha * ws.hp[i];
                ws.z[i] = ws.r[i] / ws.precond[i];
            }
            let rz_new: f64 = ws.r.iter().zip(&ws.z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                ws.pk[i] = ws.z[i] + beta * ws.pk[i];
            }
        }
        if ws.d.iter().all(|v| *v == 0.0) {
            for i in 0..n {
                ws.d[i] = if pinned[i] { 0.0 } else { -ws.g[i] };
            }
        }

        // Armijo backtracking on the barrier merit with a
        // fraction-to-boundary cap; steepest descent as fallback.
        let mut accepted = false;
        let mut alpha_used = 0.0;
        let mut alpha_cap = 1.0;
        for attempt in 0..2 {
            if attempt == 1 {
                for i in 0..n {
                    ws.d[i] = if pinned[i] { 0.0 } else { -ws.g[i] };
                }
            }
            let mut alpha_max: f64 = 1.0;
            for i in 0..n {
                if ws.d[i] > 0.0 {
                    alpha_max = alpha_max.min(0.995 * (hi[i] - x[i]) / ws.d[i]);
                } else if ws.d[i] < 0.0 {
                    alpha_max = alpha_max.min(0.995 * (x[i] - lo[i]) / -ws.d[i]);
                }
            }
            alpha_cap = alpha_max;
            let gtd: f64 = ws.g.iter().zip(&ws.d).map(|(g, d)| g * d).sum();
            let mut alpha = alpha_max.min(1.0);
            for _ in 0..settings.max_linesearch {
                for i in 0..n {
                    ws.x_trial[i] = x[i] + alpha * ws.d[i];
                }
                let f_t = p.eval_fc(&ws.x_trial, &mut ws.c_trial);
                let m_t = merit_of(f_t, &ws.c_trial, &ws.x_trial);
                if m_t <= merit + settings.armijo_c1 * alpha * gtd.min(0.0)
                    && m_t < merit + 1e-16 * merit.abs().max(1.0)
                {
                    x.copy_from_slice(&ws.x_trial);
                    std::mem::swap(c, &mut ws.c_trial);
                    f = f_t;
                    merit = m_t;
                    accepted = true;
                    alpha_used = alpha;
                    break;
                }
                alpha *= 0.5;
            }
            if accepted {
                break;
            }
        }
        iters = it + 1;
        if accepted {
            let cap = alpha_cap.min(1.0);
            if alpha_used >= 0.99 * cap {
                delta = (2.0 * delta).min(1e4);
            } else if alpha_used < 0.25 * cap {
                delta = (0.25 * delta).max(1e-4);
            }
        }
        if std::env::var("HUBSIM_INNER_DEBUG").is_ok() {
            eprintln!(
                "  it {it}: merit {merit:.8e} stat {stationarity:.3e} g_in {g_inner_norm:.3e} alpha {alpha_used:.2e} delta {delta:.2e}"
            );
        }
        if !accepted {
            break; // line search stalled at numerical precision
        }
    }

    *feas_out = inf_norm(c);
    InnerOutcome {
        f,
        stationarity,
        iters,
    }
}

/// Solve the NLP from `x0`, optionally warm-starting the multipliers.
pub fn solve_nlp<P: NlpProblem>(
    p: &P,
    x0: &[f64],
    lambda0: Option<&[f64]>,
    settings: &SolverSettings,
) -> NlpResult {
    let n = p.num_vars();
    let m = p.num_eq();
    assert_eq!(x0.len(), n, "warm start dimension mismatch");

    let mut x = x0.to_vec();
    clamp_into(&mut x, p.lower(), p.upper());
    let mut lambda = match lambda0 {
        Some(l) if l.len() == m => l.to_vec(),
        _ => vec![0.0; m],
    };

    let mut rho = settings.initial_penalty;
    let mut omega = settings.omega0;
    let mut eta = settings.eta0;
    let warm = lambda0.is_some_and(|l| l.len() == m && m > 0);
    let mut mu = if warm {
        settings.barrier_mu_warm
    } else {
        settings.barrier_mu0
    };
    let mut c = vec![0.0; m];
    let mut records = Vec::new();
    let mut ws = Workspace::new(n, m);
    let pinned: Vec<bool> = (0..n).map(|i| p.upper()[i] - p.lower()[i] < 1e-12).collect();

    let mut status = SolveStatus::MaxIter;
    let mut outer_done = 0;
    let mut inner_total = 0;
    let mut f = 0.0;
    let mut feas = f64::INFINITY;
    let mut feas_prev = f64::INFINITY;
    let mut stat = f64::INFINITY;

    for outer in 0..settings.max_outer_iters {
        let tol = omega.max(settings.opt_tol);
        let out = inner_solve(
            p,
            &mut x,
            &lambda,
            rho,
            mu,
            tol,
            settings,
            outer,
            &mut records,
            &mut c,
            &mut feas,
            &mut ws,
            &pinned,
        );
        f = out.f;
        stat = out.stationarity;
        inner_total += out.iters;
        outer_done = outer + 1;

        if std::env::var("HUBSIM_SOLVER_DEBUG").is_ok() {
            eprintln!(
                "outer {outer}: f={f:.6e} feas={feas:.3e} stat={stat:.3e} rho={rho:.1e} mu={mu:.1e} inner={} lam_norm={:.3e}",
                out.iters,
                inf_norm(&lambda)
            );
        }

        if feas <= settings.feas_tol && stat <= settings.opt_tol {
            for i in 0..m {
                lambda[i] += rho * c[i];
            }
            status = SolveStatus::Optimal;
            break;
        }

        // Update the multipliers whenever feasibility is acceptable or
        // still improving; grow the penalty only on stagnation, so it
        // stays as small as the problem allows.
        let near_feasible = feas <= 100.0 * settings.feas_tol;
        if feas <= eta.max(settings.feas_tol) || feas <= 0.25 * feas_prev || near_feasible {
            for i in 0..m {
                lambda[i] += rho * c[i];
            }
            omega = (omega * 0.2).max(settings.opt_tol);
            eta = (eta * 0.2)
                .max(settings.feas_tol)
                .min(0.5 * feas.max(settings.feas_tol));
        } else {
            rho *= settings.penalty_growth;
            omega = settings.omega0.min(omega * 2.0).max(settings.opt_tol);
            if rho > settings.penalty_max {
                status = SolveStatus::Infeasible;
                break;
            }
        }
        mu = (mu * 0.1).max(settings.barrier_mu_min);
        feas_prev = feas;
    }

    NlpResult {
        x,
        multipliers: lambda,
        objective: f,
        feasibility: feas,
        stationarity: stat,
        status,
        outer_iters: outer_done,
        inner_iters: inner_total,
        iterations: records,
    }
}

/// Render the optional iteration log as plain text lines.
pub fn iteration_log(records: &[IterRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "outer {} inner {} merit {:.9e} feas {:.3e} stat {:.3e} rho {:.1e}\n",
            r.outer, r.inner, r.merit, r.feasibility, r.stationarity, r.penalty
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min (x-2)^2 + (y+1)^2 over the unit box; optimum at (1, 0).
    struct BoxQp {
        lo: Vec<f64>,
        hi: Vec<f64>,
    }

    impl NlpProblem for BoxQp {
        fn num_vars(&self) -> usize {
            2
        }
        fn num_eq(&self) -> usize {
            0
        }
        fn lower(&self) -> &[f64] {
            &self.lo
        }
        fn upper(&self) -> &[f64] {
            &self.hi
        }
        fn eval_fc(&self, x: &[f64], _c: &mut [f64]) -> f64 {
            (x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2)
        }
        fn eval_grad(&self, x: &[f64], _y: &[f64], g: &mut [f64]) {
            g[0] = 2.0 * (x[0] - 2.0);
            g[1] = 2.0 * (x[1] + 1.0);
        }
        fn jac_prod(&self, _x: &[f64], _v: &[f64], _out: &mut [f64]) {}
        fn obj_hess_prod(&self, _x: &[f64], v: &[f64], out: &mut [f64]) {
            out[0] += 2.0 * v[0];
            out[1] += 2.0 * v[1];
        }
        fn con_hess_prod(&self, _x: &[f64], _w: &[f64], _v: &[f64], _out: &mut [f64]) {}
        fn precond_diag(&self, _x: &[f64], _rho: f64, out: &mut [f64]) {
            out[0] = 2.0;
            out[1] = 2.0;
        }
    }

    /// min x^2 + y^2 s.t. x + y = 1; optimum (0.5, 0.5), multiplier -1.
    struct EqQp {
        lo: Vec<f64>,
        hi: Vec<f64>,
    }

    impl NlpProblem for EqQp {
        fn num_vars(&self) -> usize {
            2
        }
        fn num_eq(&self) -> usize {
            1
        }
        fn lower(&self) -> &[f64] {
            &self.lo
        }
        fn upper(&self) -> &[f64] {
            &self.hi
        }
        fn eval_fc(&self, x: &[f64], c: &mut [f64]) -> f64 {
            c[0] = x[0] + x[1] - 1.0;
            x[0] * x[0] + x[1] * x[1]
        }
        fn eval_grad(&self, x: &[f64], y: &[f64], g: &mut [f64]) {
            g[0] = 2.0 * x[0] + y[0];
            g[1] = 2.0 * x[1] + y[0];
        }
        fn jac_prod(&self, _x: &[f64], v: &[f64], out: &mut [f64]) {
            out[0] = v[0] + v[1];
        }
        fn obj_hess_prod(&self, _x: &[f64], v: &[f64], out: &mut [f64]) {
            out[0] += 2.0 * v[0];
            out[1] += 2.0 * v[1];
        }
        fn con_hess_prod(&self, _x: &[f64], _w: &[f64], _v: &[f64], _out: &mut [f64]) {}
        fn precond_diag(&self, _x: &[f64], rho: f64, out: &mut [f64]) {
            out[0] = 2.0 + rho;
            out[1] = 2.0 + rho;
        }
    }

    fn settings() -> SolverSettings {
        SolverSettings {
            record_iterations: true,
            ..Default::default()
        }
    }

    #[test]
    fn box_qp_hits_analytic_optimum() {
        let p = BoxQp {
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
        };
        let r = solve_nlp(&p, &[0.2, 0.9], None, &settings());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.x[0] - 1.0).abs() <= 1e-5);
        assert!((r.x[1] - 0.0).abs() <= 1e-5);
    }

    #[test]
    fn equality_qp_matches_kkt_solution() {
        let p = EqQp {
            lo: vec![-10.0, -10.0],
            hi: vec![10.0, 10.0],
        };
        let r = solve_nlp(&p, &[3.0, -2.0], None, &settings());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.x[0] - 0.5).abs() <= 1e-5, "x = {:?}", r.x);
        assert!((r.x[1] - 0.5).abs() <= 1e-5);
        assert!((r.multipliers[0] + 1.0).abs() <= 1e-3);
        assert!(r.feasibility <= 1e-6);
    }

    #[test]
    fn warm_start_at_optimum_converges_immediately() {
        let p = EqQp {
            lo: vec![-10.0, -10.0],
            hi: vec![10.0, 10.0],
        };
        let cold = solve_nlp(&p, &[3.0, -2.0], None, &settings());
        let warm = solve_nlp(&p, &cold.x, Some(&cold.multipliers), &settings());
        assert_eq!(warm.status, SolveStatus::Optimal);
        assert!(warm.outer_iters <= 2, "outer iters {}", warm.outer_iters);
    }

    #[test]
    fn merit_nonincreasing_within_each_outer_iteration() {
        let p = EqQp {
            lo: vec![-10.0, -10.0],
            hi: vec![10.0, 10.0],
        };
        let r = solve_nlp(&p, &[5.0, -7.0], None, &settings());
        let mut last: Option<(usize, f64)> = None;
        for rec in &r.iterations {
            if let Some((outer, merit)) = last {
                if rec.outer == outer {
                    assert!(
                        rec.merit <= merit + 1e-12 * merit.abs().max(1.0),
                        "merit increased within outer {outer}: {merit} -> {}",
                        rec.merit
                    );
                }
            }
            last = Some((rec.outer, rec.merit));
        }
    }

    #[test]
    fn deterministic_repeat() {
        let p = EqQp {
            lo: vec![-10.0, -10.0],
            hi: vec![10.0, 10.0],
        };
        let a = solve_nlp(&p, &[5.0, -7.0], None, &settings());
        let b = solve_nlp(&p, &[5.0, -7.0], None, &settings());
        assert_eq!(a.x, b.x);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }
}
