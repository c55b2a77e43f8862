//! Per-step weight estimation: sparse, temporally smooth least squares under
//! an acyclicity constraint.
//!
//! Each call to [`solve_step`] (or [`solve_targets`] for explicit
//! regressor/response pairs) minimizes
//!
//! ```text
//!   1/2 ||Y - Z W||_F^2  +  lambda1 ||W||_1  +  lambda2/2 ||W - W_prev||_F^2
//!   subject to  h(W) = tr(exp(W o W)) - d = 0
//! ```
//!
//! with an augmented-Lagrangian outer loop (dual variable `alpha`, penalty
//! `rho`) around a proximal-gradient inner loop: a gradient step on the
//! smooth part, scaled per coordinate by its local curvature so entries the
//! penalty pins cannot stall the rest, a soft-threshold for the L1 term, and
//! a backtracking line search so the penalized value never increases.  Warm
//! starts come from [`SolverState`]: the previous raw solution seeds the
//! iteration and anchors the temporal term, and the final `(alpha, rho)`
//! pair is carried to the next step, which makes steady-state solves cheap.
//!
//! The returned graph is post-processed so its support is exactly acyclic:
//! entries at or below the edge threshold are zeroed, then any surviving
//! cycle loses its weakest edge (see [`crate::graph::prune_cycles`]).

use nalgebra::DMatrix;

use crate::error::Error;
use crate::graph::{self, WeightedGraph};
use crate::sim::{Mode, ObservationBatch};
use crate::Result;

/// Tunables for one solve.  `Default` gives the settings used by the
/// streaming scenarios in this crate.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// L1 weight; larger values prune more edges.
    pub lambda1: f64,
    /// Temporal-smoothness weight toward the previous estimate.
    pub lambda2: f64,
    /// Initial augmented-Lagrangian penalty.
    pub rho0: f64,
    /// Penalty multiplier applied when an outer iteration makes poor
    /// progress on the constraint.
    pub rho_growth: f64,
    /// Upper bound on the penalty.
    pub rho_max: f64,
    /// Constraint tolerance: outer loop stops once `h(W)` falls below this.
    pub h_target: f64,
    /// Outer-iteration cap.
    pub max_outer: usize,
    /// Inner-iteration cap per outer iteration.
    pub max_inner: usize,
    /// Inner loop stops when the objective decrease predicted by the prox
    /// model falls below this fraction of the current value.
    pub inner_tol: f64,
    /// First trial step size of the backtracking search.
    pub step_init: f64,
    /// Step multiplier on a rejected trial (in `(0, 1)`).
    pub step_shrink: f64,
    /// Step multiplier after an accepted iteration (>= 1).
    pub step_grow: f64,
    /// Backtracking attempts per inner iteration.
    pub max_backtracks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda1: 0.05,
            lambda2: 1.0,
            rho0: 1.0,
            rho_growth: 10.0,
            rho_max: 1e16,
            h_target: 1e-8,
            max_outer: 100,
            max_inner: 500,
            inner_tol: 1e-6,
            step_init: 1.0,
            step_shrink: 0.5,
            step_grow: 2.0,
            max_backtracks: 60,
        }
    }
}

impl SolverConfig {
    /// Checks every field; all caps >= 1, all tolerances > 0.
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = [("lambda1", self.lambda1), ("lambda2", self.lambda2)];
        for (name, v) in finite_nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        let finite_pos = [
            ("rho0", self.rho0),
            ("rho_max", self.rho_max),
            ("h_target", self.h_target),
            ("inner_tol", self.inner_tol),
            ("step_init", self.step_init),
        ];
        for (name, v) in finite_pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.rho_growth.is_finite() && self.rho_growth > 1.0) {
            return Err(Error::config(format!(
                "rho_growth must be > 1, got {}",
                self.rho_growth
            )));
        }
        if self.rho_max < self.rho0 {
            return Err(Error::config("rho_max must be >= rho0".to_string()));
        }
        if self.max_outer < 1 || self.max_inner < 1 || self.max_backtracks < 1 {
            return Err(Error::config("iteration caps must be >= 1".to_string()));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::config(format!(
                "step_shrink must lie in (0, 1), got {}",
                self.step_shrink
            )));
        }
        if !(self.step_grow.is_finite() && self.step_grow >= 1.0) {
            return Err(Error::config(format!(
                "step_grow must be >= 1, got {}",
                self.step_grow
            )));
        }
        Ok(())
    }
}

/// State threaded between consecutive solves: the projected estimate served
/// to callers, the raw pre-projection solution (both warm-start point and
/// temporal anchor), the carried dual/penalty pair, and diagnostics from the
/// most recent call.
///
/// Warm starts and the drift term both use the raw solution rather than the
/// projected graph: the projection zeroes sub-threshold entries, so seeding
/// or anchoring on it would force every solve to re-travel the same path
/// back to its interior optimum — and an entry whose per-step pull is below
/// the reporting threshold could never accumulate across steps at all.
#[derive(Debug, Clone)]
pub struct SolverState {
    w_prev: WeightedGraph,
    warm: DMatrix<f64>,
    alpha: f64,
    rho: f64,
    last_objective: Option<f64>,
    outer_iters: usize,
    inner_iters: usize,
}

impl SolverState {
    /// Fresh state for a `d`-variable problem: zero anchor, zero dual,
    /// penalty at `cfg.rho0`.
    pub fn new(d: usize, edge_threshold: f64, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        if d == 0 {
            return Err(Error::invalid("state needs at least one variable"));
        }
        if !(edge_threshold.is_finite() && edge_threshold >= 0.0) {
            return Err(Error::invalid(format!(
                "edge threshold must be finite and >= 0, got {edge_threshold}"
            )));
        }
        Ok(SolverState {
            w_prev: WeightedGraph::zeros(d, edge_threshold),
            warm: DMatrix::zeros(d, d),
            alpha: 0.0,
            rho: cfg.rho0,
            last_objective: None,
            outer_iters: 0,
            inner_iters: 0,
        })
    }

    /// State seeded from an existing estimate instead of zeros.
    pub fn from_graph(graph: WeightedGraph, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(SolverState {
            warm: graph.weights().clone(),
            w_prev: graph,
            alpha: 0.0,
            rho: cfg.rho0,
            last_objective: None,
            outer_iters: 0,
            inner_iters: 0,
        })
    }

    /// Current reported estimate: the most recent solution after projection.
    pub fn current(&self) -> &WeightedGraph {
        &self.w_prev
    }

    /// Raw (pre-projection) solution of the most recent solve — the point the
    /// next solve warm-starts from and anchors its drift term on.  Unlike
    /// [`current`](Self::current), this keeps sub-threshold entries, so it
    /// shows progress on edges that have not yet reached reporting strength.
    pub fn raw_solution(&self) -> &DMatrix<f64> {
        &self.warm
    }

    /// Forces `parent -> child` to zero in both the committed estimate and the
    /// warm-start iterate, so a removal confirmed downstream is not silently
    /// resurrected from stale state on the next solve.
    pub fn zero_edge(&mut self, parent: usize, child: usize) -> Result<()> {
        self.w_prev.set_weight(parent, child, 0.0)?;
        self.warm[(parent, child)] = 0.0;
        Ok(())
    }

    /// Writes `weight` for `parent -> child` into the raw solution, so the
    /// next solve starts from — and anchors on — that value.  The converse of
    /// [`zero_edge`](Self::zero_edge): when an appearance is confirmed
    /// downstream with a directly estimated coefficient, seeding it here
    /// spares the solve a long crawl toward a value already measured, which
    /// matters when the new parent is nearly collinear with an existing one.
    pub fn plant_edge(&mut self, parent: usize, child: usize, weight: f64) -> Result<()> {
        if !weight.is_finite() {
            return Err(Error::invalid(format!(
                "planted weight for ({parent}, {child}) must be finite, got {weight}"
            )));
        }
        if parent == child {
            return Err(Error::invalid("cannot plant a self-loop weight"));
        }
        if parent >= self.w_prev.d() || child >= self.w_prev.d() {
            return Err(Error::invalid(format!(
                "edge ({parent}, {child}) is out of range for {} variables",
                self.w_prev.d()
            )));
        }
        self.warm[(parent, child)] = weight;
        Ok(())
    }

    /// Drops the carried `(alpha, rho)` back to `(0, rho0)` while keeping the
    /// estimate and warm start.  The next solve then re-fights edge-direction
    /// contests from scratch instead of under the accumulated constraint
    /// pressure — useful early in a stream, where directions locked in by the
    /// first few noisy batches would otherwise persist.
    pub fn reset_duals(&mut self, rho0: f64) -> Result<()> {
        if !(rho0.is_finite() && rho0 > 0.0) {
            return Err(Error::invalid(format!("rho0 must be finite and > 0, got {rho0}")));
        }
        self.alpha = 0.0;
        self.rho = rho0;
        Ok(())
    }

    /// Carried dual variable.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Carried penalty.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Unaugmented objective at the most recently returned estimate, `None`
    /// before the first solve.
    pub fn last_objective(&self) -> Option<f64> {
        self.last_objective
    }

    /// Outer iterations used by the most recent solve.
    pub fn outer_iters(&self) -> usize {
        self.outer_iters
    }

    /// Largest inner-iteration count of any outer iteration in the most
    /// recent solve (so it is always `<= max_inner`).
    pub fn inner_iters(&self) -> usize {
        self.inner_iters
    }
}

/// The regressor/response pairing a fit runs against.  Borrowed views: no
/// data is copied.
#[derive(Debug, Clone, Copy)]
pub struct RegressionTargets<'a> {
    regressors: &'a DMatrix<f64>,
    responses: &'a DMatrix<f64>,
}

impl<'a> RegressionTargets<'a> {
    /// Pairs `regressors` (rows = samples) with `responses` of the same
    /// shape.
    pub fn new(regressors: &'a DMatrix<f64>, responses: &'a DMatrix<f64>) -> Result<Self> {
        if regressors.nrows() == 0 || regressors.ncols() == 0 {
            return Err(Error::invalid("regression needs at least one sample and one column"));
        }
        if regressors.shape() != responses.shape() {
            return Err(Error::invalid(format!(
                "regressors {:?} and responses {:?} differ in shape",
                regressors.shape(),
                responses.shape()
            )));
        }
        for m in [regressors, responses] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("regression data has non-finite entries"));
            }
        }
        Ok(RegressionTargets { regressors, responses })
    }

    /// Matrix multiplied by `W` in the fit.
    pub fn regressors(&self) -> &'a DMatrix<f64> {
        self.regressors
    }

    /// Matrix the fit approximates.
    pub fn responses(&self) -> &'a DMatrix<f64> {
        self.responses
    }
}

/// Chooses the fit pairing for a mode: contemporaneous regresses the batch
/// on itself, lagged regresses the current batch on the previous one (which
/// must be supplied).
pub fn regression_targets<'a>(
    x_now: &'a DMatrix<f64>,
    x_prev: Option<&'a DMatrix<f64>>,
    mode: Mode,
) -> Result<RegressionTargets<'a>> {
    match mode {
        Mode::Contemporaneous => RegressionTargets::new(x_now, x_now),
        Mode::Lagged => {
            let prev = x_prev.ok_or_else(|| {
                Error::invalid("lagged regression needs the previous batch as regressors")
            })?;
            RegressionTargets::new(prev, x_now)
        }
    }
}

/// The unaugmented objective
/// `1/2 ||Y - Z W||_F^2 + lambda1 ||W||_1 + lambda2/2 ||W - w_prev||_F^2`.
pub fn objective(
    targets: &RegressionTargets<'_>,
    w: &DMatrix<f64>,
    w_prev: &DMatrix<f64>,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    let d = targets.regressors.ncols();
    if w.shape() != (d, d) || w_prev.shape() != (d, d) {
        return Err(Error::invalid(format!(
            "weights must be {d}x{d} to match the data, got {:?} and {:?}",
            w.shape(),
            w_prev.shape()
        )));
    }
    for (name, v) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    if w.iter().chain(w_prev.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("weights have non-finite entries"));
    }
    let residual = targets.responses - targets.regressors * w;
    let drift = w - w_prev;
    Ok(0.5 * residual.norm_squared() + lambda1 * l1_norm(w) + 0.5 * lambda2 * drift.norm_squared())
}

fn l1_norm(w: &DMatrix<f64>) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

/// Smooth part of the augmented objective: data + temporal terms (the
/// constraint terms are added by the caller, which tracks `h` separately).
struct SmoothFit<'a> {
    z: &'a DMatrix<f64>,
    y: &'a DMatrix<f64>,
    anchor: &'a DMatrix<f64>,
    lambda2: f64,
}

impl SmoothFit<'_> {
    fn value_grad(&self, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let residual = self.z * w - self.y;
        let drift = w - self.anchor;
        let value = 0.5 * residual.norm_squared() + 0.5 * self.lambda2 * drift.norm_squared();
        let mut grad = self.z.transpose() * residual;
        grad.zip_apply(&drift, |g, dr| *g += self.lambda2 * dr);
        (value, grad)
    }
}

/// Floor for per-entry curvature so the scaled step stays finite even on a
/// coordinate with no data signal, no temporal term, and no penalty term.
const CURVATURE_FLOOR: f64 = 1e-12;

/// Proximal step in the diagonal metric `curv`: each coordinate moves
/// `step / curv[(i, j)]` along its gradient before soft-thresholding at the
/// matching scale, and the diagonal stays clear (self-loops are never
/// allowed).  A coordinate pinned by the acyclicity penalty has large
/// curvature and creeps; a free coordinate keeps a full-size step, so one
/// stiff entry cannot stall the rest of the matrix.
fn prox_step(
    w: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    curv: &DMatrix<f64>,
    step: f64,
    lambda1: f64,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(w.nrows(), w.ncols());
    for j in 0..w.ncols() {
        for i in 0..w.nrows() {
            if i == j {
                continue;
            }
            let eff = step / curv[(i, j)];
            let v = w[(i, j)] - eff * grad[(i, j)];
            out[(i, j)] = v.signum() * (v.abs() - eff * lambda1).max(0.0);
        }
    }
    out
}

/// Contemporaneous convenience wrapper around [`solve_targets`]: fits the
/// batch against itself.
pub fn solve_step(
    batch: &ObservationBatch,
    state: &mut SolverState,
    cfg: &SolverConfig,
) -> Result<WeightedGraph> {
    let targets = regression_targets(&batch.data, None, Mode::Contemporaneous)?;
    solve_targets(&targets, state, cfg)
}

/// Runs the full augmented-Lagrangian solve for one data step and commits
/// the result to `state` (new anchor, carried `(alpha, rho)`, diagnostics).
///
/// On failure to meet `h_target` within `max_outer` outer iterations the
/// state is left untouched and [`Error::ConstraintInfeasible`] carries the
/// lowest-`h` iterate observed.
pub fn solve_targets(
    targets: &RegressionTargets<'_>,
    state: &mut SolverState,
    cfg: &SolverConfig,
) -> Result<WeightedGraph> {
    solve_targets_traced(targets, state, cfg, None)
}

/// [`solve_targets`] with an optional trace of the penalized inner-loop
/// values, one segment per outer iteration, used by tests to check
/// monotonicity (dual updates between outer iterations may raise the
/// augmented value, so segments are not comparable across the boundary).
fn solve_targets_traced(
    targets: &RegressionTargets<'_>,
    state: &mut SolverState,
    cfg: &SolverConfig,
    mut trace: Option<&mut Vec<Vec<f64>>>,
) -> Result<WeightedGraph> {
    cfg.validate()?;
    let d = targets.regressors.ncols();
    if d != state.w_prev.d() {
        return Err(Error::invalid(format!(
            "data has {d} columns but the solver state tracks {} variables",
            state.w_prev.d()
        )));
    }

    // The drift term anchors on the raw previous solution, not the projected
    // graph.  Anchoring on the projection would re-zero every sub-threshold
    // entry's progress each step, so an edge whose per-step pull is small —
    // e.g. one nearly collinear with an established parent — could never
    // accumulate across steps no matter how long its signal persists.
    let anchor = state.warm.clone();
    let fit = SmoothFit {
        z: targets.regressors,
        y: targets.responses,
        anchor: &anchor,
        lambda2: cfg.lambda2,
    };

    let mut w = state.warm.clone();
    let mut alpha = state.alpha;
    let mut rho = state.rho;

    // Per-regressor Gram diagonal: the data part of each coordinate's
    // curvature, shared by every column of the fit.
    let gram_diag: Vec<f64> =
        (0..d).map(|i| targets.regressors.column(i).norm_squared()).collect();

    let (mut h_val, mut h_grad, mut kappa) = graph::acyclicity_with_curvature(&w)?;
    let (mut fit_val, mut fit_grad) = fit.value_grad(&w);

    let mut best: Option<(DMatrix<f64>, f64)> = None;
    let mut h_prev_outer = f64::INFINITY;
    let mut outer_used = 0;
    let mut max_inner_used = 0;
    let mut converged = false;

    while outer_used < cfg.max_outer {
        outer_used += 1;
        // The working step restarts from its configured seed every outer
        // iteration: carrying a collapsed step into a new (alpha, rho) pair
        // shrinks the proximal window until nothing can reach exact zero,
        // and the penalty then escalates against frozen near-zero entries.
        let mut step = cfg.step_init / cfg.step_grow;

        // Inner loop: proximal gradient on the augmented objective at fixed
        // (alpha, rho).
        let mut aug_val = fit_val + alpha * h_val + 0.5 * rho * h_val * h_val;
        let mut pen_val = aug_val + cfg.lambda1 * l1_norm(&w);
        if let Some(out) = trace.as_deref_mut() {
            out.push(vec![pen_val]);
        }
        let mut inner_used = 0;
        // (iterate, smooth gradient) at the previous accepted step, for the
        // spectral trial scale.  Reset each outer iteration because the
        // gradient definition changes with (alpha, rho).
        let mut bb_prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
        for _ in 0..cfg.max_inner {
            let mut grad = fit_grad.clone();
            let scale = alpha + rho * h_val;
            grad.zip_apply(&h_grad, |g, hg| *g += scale * hg);

            // Per-coordinate curvature of the smooth part: data Gram plus the
            // temporal term plus both second-order pieces of the augmented
            // penalty, `(alpha + rho h) d2h` and `rho (dh)^2`.
            let curv = DMatrix::from_fn(d, d, |i, j| {
                let hg = h_grad[(i, j)];
                let pen = 2.0 * scale * kappa[(i, j)] + rho * hg * hg;
                (gram_diag[i] + cfg.lambda2 + pen).max(CURVATURE_FLOOR)
            });

            // Trial scale on top of the metric: a Barzilai-Borwein ratio of
            // model curvature to realized curvature along the last accepted
            // move when usable, otherwise regrowth of the last accepted
            // scale.  At `1` the scaled step is a full Jacobi-Newton step;
            // the spectral ratio corrects for off-diagonal mass the diagonal
            // metric cannot see, and backtracking below corrects either
            // choice.
            let mut s = (step * cfg.step_grow).min(1e6);
            if let Some((pw, pg)) = &bb_prev {
                let mut model_quad = 0.0;
                let mut realized = 0.0;
                for (((wn, wo), (gn, go)), cv) in w
                    .iter()
                    .zip(pw.iter())
                    .zip(grad.iter().zip(pg.iter()))
                    .zip(curv.iter())
                {
                    let dw = wn - wo;
                    model_quad += cv * dw * dw;
                    realized += dw * (gn - go);
                }
                if realized > 0.0 && model_quad > 0.0 {
                    s = (model_quad / realized).clamp(1e-12, 1e6);
                }
            }
            bb_prev = Some((w.clone(), grad.clone()));

            // Backtracking: accept the first candidate whose augmented value
            // sits below the quadratic model at the trial step size.
            let mut accepted = None;
            for _ in 0..cfg.max_backtracks {
                let cand = prox_step(&w, &grad, &curv, s, cfg.lambda1);
                let diff = &cand - &w;
                let quad: f64 = diff
                    .iter()
                    .zip(curv.iter())
                    .map(|(dv, cv)| dv * dv * cv)
                    .sum();
                if quad == 0.0 {
                    break; // stationary point of the prox map
                }
                let cand_state = graph::acyclicity_with_curvature(&cand)
                    .ok()
                    .map(|(h_c, hg_c, kap_c)| (fit.value_grad(&cand), h_c, hg_c, kap_c));
                if let Some(((fv_c, fg_c), h_c, hg_c, kap_c)) = cand_state {
                    let aug_c = fit_val_augmented(fv_c, alpha, rho, h_c);
                    let descent = grad.dot(&diff) + quad / (2.0 * s);
                    if aug_c.is_finite() && aug_c <= aug_val + descent + 1e-12 * (1.0 + aug_val.abs())
                    {
                        accepted = Some((cand, fv_c, fg_c, h_c, hg_c, kap_c, aug_c, descent));
                        break;
                    }
                }
                s *= cfg.step_shrink;
                if s < 1e-18 {
                    break;
                }
            }
            let Some((cand, fv_c, fg_c, h_c, hg_c, kap_c, aug_c, descent)) = accepted else {
                // No acceptable step: the iterate is prox-stationary to
                // working precision.
                break;
            };
            step = s;

            // Predicted decrease of the penalized value at the accepted
            // step.  It lower-bounds the realized decrease but, unlike the
            // realized difference, does not lose precision to cancellation,
            // so tight tolerances remain meaningful.
            let model_drop =
                -(descent + cfg.lambda1 * (l1_norm(&cand) - l1_norm(&w)));

            w = cand;
            fit_val = fv_c;
            fit_grad = fg_c;
            h_val = h_c;
            h_grad = hg_c;
            kappa = kap_c;
            aug_val = aug_c;
            inner_used += 1;

            let pen_new = aug_val + cfg.lambda1 * l1_norm(&w);
            if let Some(out) = trace.as_deref_mut() {
                out.last_mut().expect("segment opened above").push(pen_new);
            }
            pen_val = pen_new;
            if model_drop <= cfg.inner_tol * pen_val.abs().max(1.0) {
                break;
            }
        }
        max_inner_used = max_inner_used.max(inner_used);

        if best.as_ref().is_none_or(|(_, bh)| h_val < *bh) {
            best = Some((w.clone(), h_val));
        }
        if h_val <= cfg.h_target {
            converged = true;
            break;
        }

        // Dual ascent, then grow the penalty whenever the constraint fails
        // to shrink by 4x against the previous outer iteration.
        alpha += rho * h_val;
        if h_val > 0.25 * h_prev_outer {
            rho = (rho * cfg.rho_growth).min(cfg.rho_max);
        }
        h_prev_outer = h_val;
    }

    if !converged {
        let (bw, bh) = best.expect("at least one outer iteration always runs");
        let graph = WeightedGraph::new(bw, state.w_prev.edge_threshold())?;
        return Err(Error::ConstraintInfeasible {
            best: Box::new(graph),
            h: bh,
            outer_iters: outer_used,
        });
    }

    let projected = project_acyclic(w.clone(), state.w_prev.edge_threshold())?;
    let final_objective = objective(
        targets,
        projected.weights(),
        &anchor,
        cfg.lambda1,
        cfg.lambda2,
    )?;

    state.warm = w;
    state.w_prev = projected.clone();
    state.alpha = alpha;
    state.rho = rho;
    state.last_objective = Some(final_objective);
    state.outer_iters = outer_used;
    state.inner_iters = max_inner_used;
    Ok(projected)
}

fn fit_val_augmented(fit_val: f64, alpha: f64, rho: f64, h: f64) -> f64 {
    fit_val + alpha * h + 0.5 * rho * h * h
}

/// Final cleanup: zero entries at or below the edge threshold, then break
/// any surviving cycle by zeroing its weakest edge, so the returned support
/// is exactly acyclic.
fn project_acyclic(mut w: DMatrix<f64>, edge_threshold: f64) -> Result<WeightedGraph> {
    for v in w.iter_mut() {
        if v.abs() <= edge_threshold {
            *v = 0.0;
        }
    }
    let d = w.nrows();
    let mut support = crate::graph::AdjacencyMatrix::new(d);
    for p in 0..d {
        for c in 0..d {
            if p != c && w[(p, c)] != 0.0 {
                support.set(p, c, true);
            }
        }
    }
    let dropped = graph::prune_cycles(&mut support, |p, c| w[(p, c)].abs());
    for (p, c) in dropped {
        w[(p, c)] = 0.0;
    }
    WeightedGraph::new(w, edge_threshold)
}
