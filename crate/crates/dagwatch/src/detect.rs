//! Sequential structural-change detection on top of the streaming estimator.
//!
//! Three layers, composable on their own or through [`run_sequential`]:
//!
//! 1. A CUSUM statistic on one-step-ahead prediction residuals.  Each step
//!    scores the incoming batch against the previous estimate `W(t-1)` with
//!    `l(t) = ||R||_F^2 / (N * n)` (mean squared residual entry) and folds it
//!    into `S(t) = max(0, S(t-1) + l(t) - c)`, alarming when `S(t)` exceeds a
//!    threshold `eta`.  [`calibrate_cusum`] picks `(c, eta)` from warm-up
//!    scores by bootstrap so the false-alarm rate over a horizon stays at or
//!    below a target rate.
//! 2. Per-edge hypothesis tests that turn a raw weight crossing the
//!    binarization threshold into a confirmed structural transition: a t-test
//!    on the refitted coefficient for appearances, and a nested-model F-test
//!    for disappearances.  For a single candidate parent the two agree
//!    exactly (`F = t^2`).
//! 3. [`run_sequential`], the full loop: score, CUSUM, temporal-penalty
//!    relaxation on alarm, warm-started refit, candidate tests, and an
//!    acyclicity projection of the confirmed structure, emitting one
//!    [`DetectionEvent`] per confirmed transition plus per-step diagnostics.
//!
//! Candidates are re-tested every step while the fit and the confirmed
//! structure disagree, so the per-test significance levels in
//! [`EdgeTestConfig`] act as per-step error rates, not per-stream ones; keep
//! them small if event precision matters more than confirmation latency.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::graph::{is_dag, prune_cycles, threshold_edges, AdjacencyMatrix, ChangeKind, WeightedGraph};
use crate::sim::{Mode, ObservationBatch};
use crate::solver::{regression_targets, solve_targets, SolverConfig, SolverState};
use crate::{Error, Result};

/// Bootstrap replays used when calibrating the CUSUM threshold.
pub const CALIBRATION_REPLAYS: usize = 1000;

/// Minimum number of warm-up scores required before calibration is trusted.
pub const MIN_CALIBRATION_SCORES: usize = 50;

/// Fraction of the baseline temporal penalty below which alarm-driven decay
/// stops (guards against underflow during long alarm runs).
const LAMBDA2_FLOOR_RATIO: f64 = 1e-6;

// ---------------------------------------------------------------------------
// CUSUM on residual scores
// ---------------------------------------------------------------------------

/// One-sided CUSUM recursion `S <- max(0, S + score - c)` with alarm
/// threshold `eta`.
///
/// Invariants: `S >= 0` always, and `alarmed()` reflects `S > eta` as of the
/// last update.  `eta = 0` is allowed (any positive excursion alarms); it is
/// what calibration returns when the permitted false-alarm rate is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumState {
    s: f64,
    c: f64,
    eta: f64,
    alarmed: bool,
}

impl CusumState {
    /// Fresh statistic at `S = 0` with drift `c` and threshold `eta`.
    pub fn new(c: f64, eta: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::invalid(format!("CUSUM drift must be finite, got {c}")));
        }
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::invalid(format!(
                "CUSUM threshold must be finite and >= 0, got {eta}"
            )));
        }
        Ok(CusumState { s: 0.0, c, eta, alarmed: false })
    }

    /// Current statistic value.
    pub fn s(&self) -> f64 {
        self.s
    }

    /// Drift subtracted from each score.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// Alarm threshold.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Whether the last update left the statistic above threshold.
    pub fn alarmed(&self) -> bool {
        self.alarmed
    }

    /// Folds one residual score into the statistic; returns the alarm flag.
    pub fn advance(&mut self, score: f64) -> Result<bool> {
        if !score.is_finite() {
            return Err(Error::invalid(format!("CUSUM score must be finite, got {score}")));
        }
        self.s = (self.s + score - self.c).max(0.0);
        self.alarmed = self.s > self.eta;
        Ok(self.alarmed)
    }

    /// Drops back to `S = 0` (used after a confirmed structural update,
    /// so the statistic measures drift from the new model).
    pub fn reset(&mut self) {
        self.s = 0.0;
        self.alarmed = false;
    }
}

/// One-step-ahead residual of a batch against an estimate: responses minus
/// regressors times `W`, with the regressor/response pairing chosen by
/// `mode` exactly as in the fit.
pub fn residual(
    x_now: &DMatrix<f64>,
    x_prev: Option<&DMatrix<f64>>,
    mode: Mode,
    w: &WeightedGraph,
) -> Result<DMatrix<f64>> {
    let targets = regression_targets(x_now, x_prev, mode)?;
    if targets.regressors().ncols() != w.d() {
        return Err(Error::invalid(format!(
            "batch has {} columns but the estimate covers {} variables",
            targets.regressors().ncols(),
            w.d()
        )));
    }
    Ok(targets.responses() - targets.regressors() * w.weights())
}

/// Mean squared entry of a residual matrix — the scalar the CUSUM consumes.
/// Normalizing by `N * n` keeps scores comparable across batch sizes and
/// dimensions.
pub fn residual_score(residual: &DMatrix<f64>) -> Result<f64> {
    if residual.is_empty() {
        return Err(Error::invalid("residual score needs at least one entry"));
    }
    if residual.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("residual contains a non-finite entry"));
    }
    Ok(residual.norm_squared() / residual.len() as f64)
}

/// Scores a residual matrix and advances the CUSUM statistic.
pub fn cusum_update(state: &mut CusumState, residual: &DMatrix<f64>) -> Result<bool> {
    let score = residual_score(residual)?;
    state.advance(score)
}

/// Picks CUSUM parameters from change-free warm-up scores.
///
/// The drift is the warm-up mean.  The threshold is the smallest value whose
/// false-alarm fraction over [`CALIBRATION_REPLAYS`] bootstrap replays of
/// `horizon` resampled scores is at most `alpha`; `alpha >= 1` short-circuits
/// to `eta = 0`.  Fewer than [`MIN_CALIBRATION_SCORES`] scores is a
/// configuration error: the empirical distribution is too thin to set a
/// threshold anyone should trust.
pub fn calibrate_cusum(
    h0_scores: &[f64],
    alpha: f64,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    if h0_scores.len() < MIN_CALIBRATION_SCORES {
        return Err(Error::config(format!(
            "calibration needs at least {MIN_CALIBRATION_SCORES} change-free scores, got {}",
            h0_scores.len()
        )));
    }
    if h0_scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("calibration scores contain a non-finite value"));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!(
            "permitted false-alarm rate must be positive and finite, got {alpha}"
        )));
    }
    if horizon == 0 {
        return Err(Error::invalid("calibration horizon must be at least one step"));
    }

    let c = h0_scores.iter().sum::<f64>() / h0_scores.len() as f64;
    if alpha >= 1.0 {
        return Ok((c, 0.0));
    }

    // Peak statistic of each simulated change-free run; a run alarms at
    // threshold eta iff its peak exceeds eta.
    let mut peaks = Vec::with_capacity(CALIBRATION_REPLAYS);
    for _ in 0..CALIBRATION_REPLAYS {
        let mut s: f64 = 0.0;
        let mut peak: f64 = 0.0;
        for _ in 0..horizon {
            let score = h0_scores[rng.gen_range(0..h0_scores.len())];
            s = (s + score - c).max(0.0);
            peak = peak.max(s);
        }
        peaks.push(peak);
    }
    peaks.sort_by(|a, b| a.partial_cmp(b).expect("peaks are finite"));

    // Smallest observed peak leaving at most floor(alpha * B) replays above
    // it; between observed peaks any threshold behaves identically, so the
    // order statistic is the canonical choice.
    let allowed = (alpha * CALIBRATION_REPLAYS as f64).floor() as usize;
    let eta = if allowed >= CALIBRATION_REPLAYS {
        0.0
    } else {
        peaks[CALIBRATION_REPLAYS - 1 - allowed]
    };
    Ok((c, eta))
}

// ---------------------------------------------------------------------------
// Per-edge hypothesis tests
// ---------------------------------------------------------------------------

/// Significance levels for the per-edge confirmation tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeTestConfig {
    /// Two-sided level of the appearance t-test.
    pub alpha_add: f64,
    /// Level of the disappearance F-test.
    pub alpha_rem: f64,
}

impl Default for EdgeTestConfig {
    fn default() -> Self {
        EdgeTestConfig { alpha_add: 0.02, alpha_rem: 0.05 }
    }
}

impl EdgeTestConfig {
    /// Checks both levels lie strictly inside (0, 1).
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_add", self.alpha_add), ("alpha_rem", self.alpha_rem)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Outcome of a decided edge test.  `confirm` means the tested transition
/// (appearance or disappearance) is accepted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeTest {
    /// Signed t statistic (appearance) or F statistic (disappearance),
    /// clamped to `±f64::MAX` when a zero-residual fit makes it infinite.
    pub statistic: f64,
    /// Critical value the statistic was compared against.
    pub threshold: f64,
    /// Whether the transition is confirmed.
    pub confirm: bool,
    /// Least-squares coefficient of the tested parent in the refit that
    /// includes it — the best linear estimate of the edge weight on the
    /// tested data.
    pub estimate: f64,
}

/// Extracts the named columns of `m` as a design matrix.
fn design_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |r, k| m[(r, cols[k])])
}

/// No-intercept least squares via the normal equations.  Returns the
/// coefficients, residual sum of squares, and `(X^T X)^{-1}`; `None` when the
/// Gram matrix is not positive definite (collinear or degenerate design).
fn ols(design: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, f64, DMatrix<f64>)> {
    let gram = design.transpose() * design;
    let chol = Cholesky::new(gram)?;
    let beta = chol.solve(&(design.transpose() * y));
    let rss = (y - design * &beta).norm_squared();
    Some((beta, rss, chol.inverse()))
}

fn t_critical(dof: usize, two_sided_alpha: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, dof as f64)
        .map_err(|e| Error::invalid(format!("t distribution with {dof} dof: {e}")))?;
    Ok(dist.inverse_cdf(1.0 - two_sided_alpha / 2.0))
}

fn f_critical(dof: usize, alpha: f64) -> Result<f64> {
    let dist = FisherSnedecor::new(1.0, dof as f64)
        .map_err(|e| Error::invalid(format!("F distribution with (1, {dof}) dof: {e}")))?;
    Ok(dist.inverse_cdf(1.0 - alpha))
}

fn check_edge(d: usize, edge: (usize, usize)) -> Result<()> {
    let (parent, child) = edge;
    if parent >= d || child >= d {
        return Err(Error::invalid(format!(
            "edge ({parent}, {child}) out of range for {d} variables"
        )));
    }
    if parent == child {
        return Err(Error::invalid("self-loops are not testable edges"));
    }
    Ok(())
}

/// t-test for a candidate edge `parent -> child` that has appeared in the
/// raw estimate.
///
/// The child column is refit by least squares on the estimate's current
/// super-threshold parents of `child` plus the candidate (no intercept), and
/// the candidate's coefficient is compared against
/// `t_{1 - alpha/2, N - p - 1}` where `p` counts the other parents.  A
/// zero-residual fit decides by the coefficient alone: nonzero confirms
/// (infinite t, clamped), zero does not.  Returns `None` — indeterminate —
/// when the batch has too few rows for the refit (`N < p + 2`) or the design
/// is collinear.
pub fn edge_appearance_test(
    regressors: &DMatrix<f64>,
    responses: &DMatrix<f64>,
    w_hat: &WeightedGraph,
    edge: (usize, usize),
    alpha_add: f64,
) -> Result<Option<EdgeTest>> {
    if regressors.shape() != responses.shape() {
        return Err(Error::invalid("regressors and responses differ in shape"));
    }
    if w_hat.d() != regressors.ncols() {
        return Err(Error::invalid(format!(
            "estimate covers {} variables but the batch has {} columns",
            w_hat.d(),
            regressors.ncols()
        )));
    }
    if !(alpha_add > 0.0 && alpha_add < 1.0) {
        return Err(Error::invalid(format!("alpha_add must lie in (0, 1), got {alpha_add}")));
    }
    let (parent, child) = edge;
    check_edge(w_hat.d(), edge)?;

    let mut cols: Vec<usize> = threshold_edges(w_hat)
        .parents(child)
        .into_iter()
        .filter(|&p| p != parent)
        .collect();
    cols.push(parent);
    let n_rows = regressors.nrows();
    // v = N - p - 1 must be at least 1.
    if n_rows < cols.len() + 1 {
        return Ok(None);
    }

    let design = design_columns(regressors, &cols);
    let y = DVector::from_column_slice(responses.column(child).as_slice());
    let Some((beta, rss, gram_inv)) = ols(&design, &y) else {
        return Ok(None);
    };
    let coef = beta[cols.len() - 1];
    let dof = n_rows - cols.len();
    let threshold = t_critical(dof, alpha_add)?;

    let sigma2 = rss / dof as f64;
    let se = (sigma2 * gram_inv[(cols.len() - 1, cols.len() - 1)]).max(0.0).sqrt();
    if se == 0.0 {
        // Perfect fit: the coefficient is exact, so any nonzero value is an
        // unambiguous appearance and zero is an unambiguous absence.
        let confirm = coef != 0.0;
        let statistic = if confirm { coef.signum() * f64::MAX } else { 0.0 };
        return Ok(Some(EdgeTest { statistic, threshold, confirm, estimate: coef }));
    }
    let t = (coef / se).clamp(-f64::MAX, f64::MAX);
    Ok(Some(EdgeTest { statistic: t, threshold, confirm: t.abs() > threshold, estimate: coef }))
}

/// Nested-model F-test for a confirmed edge `parent -> child` whose raw
/// weight has dropped below the binarization threshold.
///
/// The child is fit on its confirmed parents with and without `parent`;
/// `F = (RSS_without - RSS_with) / (RSS_with / (N - p - 1))` with `p` the
/// number of other parents.  The disappearance is confirmed when `F` falls
/// below `F_{1, N - p - 1; 1 - alpha_rem}` — the edge no longer explains
/// enough variance to defend its place.  Returns `None` when rows are too
/// few or the design is collinear.
pub fn edge_disappearance_test(
    regressors: &DMatrix<f64>,
    responses: &DMatrix<f64>,
    confirmed: &AdjacencyMatrix,
    edge: (usize, usize),
    alpha_rem: f64,
) -> Result<Option<EdgeTest>> {
    if regressors.shape() != responses.shape() {
        return Err(Error::invalid("regressors and responses differ in shape"));
    }
    if confirmed.d() != regressors.ncols() {
        return Err(Error::invalid(format!(
            "confirmed structure covers {} variables but the batch has {} columns",
            confirmed.d(),
            regressors.ncols()
        )));
    }
    if !(alpha_rem > 0.0 && alpha_rem < 1.0) {
        return Err(Error::invalid(format!("alpha_rem must lie in (0, 1), got {alpha_rem}")));
    }
    let (parent, child) = edge;
    check_edge(confirmed.d(), edge)?;

    let with_parent = confirmed.parents(child);
    if !with_parent.contains(&parent) {
        return Err(Error::invalid(format!(
            "edge ({parent}, {child}) is not part of the confirmed structure"
        )));
    }
    let without_parent: Vec<usize> =
        with_parent.iter().copied().filter(|&p| p != parent).collect();
    let n_rows = regressors.nrows();
    if n_rows < with_parent.len() + 1 {
        return Ok(None);
    }

    let y = DVector::from_column_slice(responses.column(child).as_slice());
    let design_with = design_columns(regressors, &with_parent);
    let Some((beta_with, rss_with, _)) = ols(&design_with, &y) else {
        return Ok(None);
    };
    let parent_pos = with_parent
        .iter()
        .position(|&p| p == parent)
        .expect("membership checked above");
    let estimate = beta_with[parent_pos];
    let rss_without = if without_parent.is_empty() {
        y.norm_squared()
    } else {
        let design_without = design_columns(regressors, &without_parent);
        let Some((_, rss, _)) = ols(&design_without, &y) else {
            return Ok(None);
        };
        rss
    };

    let dof = n_rows - with_parent.len();
    let threshold = f_critical(dof, alpha_rem)?;
    let numerator = (rss_without - rss_with).max(0.0);
    let f = if rss_with == 0.0 {
        // Perfect fit with the edge: either the edge carries nothing even
        // then (both fits exact) or removing it breaks an exact fit.
        if numerator == 0.0 {
            0.0
        } else {
            f64::MAX
        }
    } else {
        (numerator / (rss_with / dof as f64)).clamp(0.0, f64::MAX)
    };
    Ok(Some(EdgeTest { statistic: f, threshold, confirm: f < threshold, estimate }))
}

// ---------------------------------------------------------------------------
// Events and the sequential loop
// ---------------------------------------------------------------------------

/// One confirmed structural transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionEvent {
    /// Step at which the transition was confirmed (1-based).
    pub t: usize,
    /// Tail of the edge.
    pub parent: usize,
    /// Head of the edge.
    pub child: usize,
    /// Direction of the transition.
    pub kind: ChangeKind,
    /// Test statistic that confirmed it (signed t for additions, F for
    /// deletions; `±f64::MAX` stands in for an exact-fit infinity).
    pub statistic: f64,
    /// Critical value the statistic was compared against.
    pub threshold_used: f64,
}

/// Serializes events as JSON lines, one event per line.
pub fn events_to_jsonl(events: &[DetectionEvent]) -> Result<String> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a JSON-lines event log (blank lines ignored).
pub fn events_from_jsonl(text: &str) -> Result<Vec<DetectionEvent>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line)?);
    }
    Ok(out)
}

/// Knobs of the sequential detection loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    /// Permitted false-alarm rate handed to CUSUM calibration.
    pub target_far: f64,
    /// Steps reserved for warm-up: the loop fits but does not test or alarm
    /// until this many steps have passed, then calibrates from the residual
    /// scores collected there.
    pub warmup_steps: usize,
    /// Steps the estimator is treated as still converging: scores from these
    /// steps are excluded from calibration, because their residuals run hot
    /// while the estimate settles.
    pub burn_in: usize,
    /// Multiplier applied to the temporal penalty on each alarmed step.
    pub lambda2_decay: f64,
    /// Consecutive alarm-free steps after which the temporal penalty snaps
    /// back to its baseline.
    pub lambda2_recovery_steps: usize,
    /// Seed for the calibration bootstrap.
    pub calibration_seed: u64,
    /// Skip calibration and use these `(c, eta)` instead.  Required when
    /// `warmup_steps` is zero.
    pub precalibrated: Option<(f64, f64)>,
    /// Edge tests pool the most recent batches up to this many, instead of
    /// judging from a single batch: one batch of residual noise is enough to
    /// push a borderline weight across the threshold, and an underpowered
    /// single-batch test then confirms a transition that never happened.
    /// An alarmed step flushes the pool, so post-change tests are not
    /// diluted by data from the old regime.
    pub evidence_batches: usize,
    /// Consecutive steps an entry must disagree with the confirmed
    /// structure before it is tested.  `1` tests immediately; the default
    /// debounces one-step threshold flickers.
    pub disagreement_patience: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            target_far: 0.05,
            warmup_steps: 125,
            burn_in: 25,
            lambda2_decay: 0.1,
            lambda2_recovery_steps: 10,
            calibration_seed: 0,
            precalibrated: None,
            evidence_batches: 8,
            disagreement_patience: 2,
        }
    }
}

impl DetectConfig {
    /// Validates field ranges (stream-dependent checks happen at run time).
    pub fn validate(&self) -> Result<()> {
        if !(self.target_far > 0.0 && self.target_far <= 1.0) {
            return Err(Error::config(format!(
                "target_far must lie in (0, 1], got {}",
                self.target_far
            )));
        }
        if !(self.lambda2_decay > 0.0 && self.lambda2_decay < 1.0) {
            return Err(Error::config(format!(
                "lambda2_decay must lie in (0, 1), got {}",
                self.lambda2_decay
            )));
        }
        if self.lambda2_recovery_steps == 0 {
            return Err(Error::config("lambda2_recovery_steps must be at least 1"));
        }
        if let Some((c, eta)) = self.precalibrated {
            if !c.is_finite() || !(eta.is_finite() && eta >= 0.0) {
                return Err(Error::config(format!(
                    "precalibrated (c, eta) = ({c}, {eta}) is not usable"
                )));
            }
        }
        if self.precalibrated.is_none() && self.warmup_steps <= self.burn_in {
            return Err(Error::config(format!(
                "warmup_steps ({}) must exceed burn_in ({}) when calibrating from the stream",
                self.warmup_steps, self.burn_in
            )));
        }
        if self.evidence_batches == 0 {
            return Err(Error::config("evidence_batches must be at least 1"));
        }
        if self.disagreement_patience == 0 {
            return Err(Error::config("disagreement_patience must be at least 1"));
        }
        Ok(())
    }
}

/// Per-step record of what the loop saw and did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Step index (1-based).
    pub t: usize,
    /// Residual score against `W(t-1)`; absent when the mode has no targets
    /// yet (first step of a lagged stream).
    pub score: Option<f64>,
    /// CUSUM statistic after this step's update (0 during warm-up).
    pub cusum: f64,
    /// Whether this step's update crossed the alarm threshold.
    pub alarmed: bool,
    /// Temporal penalty in force for this step's fit.
    pub lambda2: f64,
    /// The constrained fit did not reach feasibility; the previous estimate
    /// was carried instead.
    pub solver_failed: bool,
    /// Outer iterations of this step's fit.
    pub outer_iters: usize,
    /// Largest inner-iteration count over this step's outer iterations.
    pub inner_iters: usize,
    /// Confirmed transitions this step.
    pub events: usize,
    /// Confirmed edges dropped by the acyclicity projection this step.
    pub projection_drops: usize,
}

/// Everything [`run_sequential`] produces.
#[derive(Debug, Clone)]
pub struct SequentialOutcome {
    /// Confirmed transitions in order.
    pub events: Vec<DetectionEvent>,
    /// One record per step.
    pub diagnostics: Vec<StepDiagnostics>,
    /// `(c, eta)` actually used after warm-up.
    pub calibration: (f64, f64),
    /// Confirmed structure frozen at the end of warm-up (the baseline events
    /// are measured against).
    pub initial_confirmed: AdjacencyMatrix,
    /// Confirmed structure after the final step.
    pub confirmed: AdjacencyMatrix,
    /// Weighted estimate after the final step.
    pub final_graph: WeightedGraph,
    /// First post-warm-up step whose CUSUM update alarmed.
    pub first_alarm: Option<usize>,
}

/// Runs the full sequential loop over a stream of batches.
///
/// Per step: score the batch against `W(t-1)`, update the CUSUM (relaxing
/// the temporal penalty while alarmed, restoring it after
/// `lambda2_recovery_steps` quiet steps), refit warm-started, test entries
/// whose thresholded fit has disagreed with the confirmed structure for
/// `disagreement_patience` consecutive steps, apply confirmed transitions
/// (deletions are also zeroed in the solver state), and re-project the
/// confirmed structure to acyclicity.  Tests run on the pooled evidence of
/// the last `evidence_batches` batches — flushed on alarm so a confirmed
/// regime change is judged on post-change data only — which keeps
/// single-batch noise from flipping borderline edges.  A step whose fit
/// fails feasibility keeps the previous estimate and skips testing.  Any
/// confirmed transition resets the CUSUM, so the statistic always measures
/// drift from the newest accepted structure.
///
/// Warm-up: the first `warmup_steps` steps only fit.  Scores after
/// `burn_in` feed [`calibrate_cusum`] (unless `precalibrated` is set), and
/// the confirmed structure starts from the thresholded estimate at the end
/// of warm-up.
pub fn run_sequential(
    batches: &[ObservationBatch],
    mode: Mode,
    edge_threshold: f64,
    solver_cfg: &SolverConfig,
    edge_cfg: &EdgeTestConfig,
    detect_cfg: &DetectConfig,
) -> Result<SequentialOutcome> {
    solver_cfg.validate()?;
    edge_cfg.validate()?;
    detect_cfg.validate()?;
    if batches.is_empty() {
        return Err(Error::invalid("sequential run needs at least one batch"));
    }
    let d = batches[0].data.ncols();
    for (i, b) in batches.iter().enumerate() {
        if b.t != i + 1 {
            return Err(Error::invalid(format!(
                "batch at position {i} carries step index {}, expected contiguous 1-based steps",
                b.t
            )));
        }
        if b.data.ncols() != d || b.data.nrows() == 0 {
            return Err(Error::invalid(format!(
                "batch {} has shape {:?}, expected nonempty with {d} columns",
                b.t,
                b.data.shape()
            )));
        }
    }
    let total = batches.len();
    let warm = detect_cfg.warmup_steps;
    if warm >= total {
        return Err(Error::config(format!(
            "warm-up of {warm} steps consumes the whole {total}-step stream"
        )));
    }
    if warm == 0 && detect_cfg.precalibrated.is_none() {
        return Err(Error::config(
            "either a warm-up period or precalibrated (c, eta) is required",
        ));
    }

    let baseline_l2 = solver_cfg.lambda2;
    let l2_floor = baseline_l2 * LAMBDA2_FLOOR_RATIO;
    let mut l2 = baseline_l2;
    let mut state = SolverState::new(d, edge_threshold, solver_cfg)?;
    let mut cusum: Option<CusumState> = None;
    let mut confirmed: Option<AdjacencyMatrix> = None;
    let mut initial_confirmed = AdjacencyMatrix::new(d);
    let mut calibration = (0.0, 0.0);
    let mut h0_scores: Vec<f64> = Vec::new();
    let mut events: Vec<DetectionEvent> = Vec::new();
    let mut diagnostics: Vec<StepDiagnostics> = Vec::with_capacity(total);
    let mut alarm_free = 0usize;
    let mut first_alarm: Option<usize> = None;
    let mut prev_alarmed = false;
    // Rolling evidence pool for the edge tests: (regressors, responses) of
    // the most recent batches, newest last, flushed when an alarm starts.
    let mut evidence: VecDeque<(DMatrix<f64>, DMatrix<f64>)> =
        VecDeque::with_capacity(detect_cfg.evidence_batches);
    // Consecutive steps each entry has disagreed with the confirmed
    // structure, row-major.
    let mut disagree_streak = vec![0usize; d * d];
    // Set when a step confirms edge events, so the next solve re-fights
    // direction contests from fresh duals instead of under constraint
    // pressure accumulated on the old structure.
    let mut refight = false;

    if warm == 0 {
        let (c, eta) = detect_cfg.precalibrated.expect("checked above");
        cusum = Some(CusumState::new(c, eta)?);
        calibration = (c, eta);
        let conf = threshold_edges(state.current());
        initial_confirmed = conf.clone();
        confirmed = Some(conf);
    }

    for idx in 0..total {
        let t = idx + 1;
        let x_now = &batches[idx].data;
        let x_prev = if idx > 0 { Some(&batches[idx - 1].data) } else { None };
        let have_targets = mode == Mode::Contemporaneous || idx > 0;

        // Score the batch against the estimate from before this step.
        let score = if have_targets {
            let r = residual(x_now, x_prev, mode, state.current())?;
            Some(residual_score(&r)?)
        } else {
            None
        };

        let mut s_val = 0.0;
        let mut alarmed = false;
        if t > warm {
            if let (Some(cs), Some(sc)) = (cusum.as_mut(), score) {
                alarmed = cs.advance(sc)?;
                s_val = cs.s();
                if alarmed {
                    if first_alarm.is_none() {
                        first_alarm = Some(t);
                    }
                    alarm_free = 0;
                    l2 = (l2 * detect_cfg.lambda2_decay).max(l2_floor);
                    if !prev_alarmed {
                        // A fresh alarm means the batches behind it describe
                        // the old regime; evidence restarts from the batch
                        // that tripped it.  A continuing alarm keeps pooling,
                        // or every test of a long episode would run on a
                        // single batch.
                        evidence.clear();
                    }
                    // Restart the statistic after it signals.  Letting it
                    // keep its accumulated value would hold the alarm up for
                    // as long as scores sit near the reference — and the
                    // temporal penalty, decayed a notch further every alarmed
                    // step, would never get a quiet stretch to recover in.
                    cs.reset();
                } else {
                    alarm_free += 1;
                    if alarm_free >= detect_cfg.lambda2_recovery_steps {
                        l2 = baseline_l2;
                    }
                }
            }
        } else if let Some(sc) = score {
            if t > detect_cfg.burn_in {
                h0_scores.push(sc);
            }
        }

        // Warm-started refit on this batch under the current temporal
        // penalty, and the step's contribution to the evidence pool.
        let mut solver_failed = false;
        let mut outer_iters = 0;
        let mut inner_iters = 0;
        if have_targets {
            let run_cfg = SolverConfig { lambda2: l2, ..solver_cfg.clone() };
            let targets = regression_targets(x_now, x_prev, mode)?;
            if evidence.len() == detect_cfg.evidence_batches {
                evidence.pop_front();
            }
            evidence.push_back((targets.regressors().clone(), targets.responses().clone()));
            if t <= warm || alarmed || refight {
                // Accumulated constraint pressure encodes direction calls
                // made on earlier data.  During warm-up that data is a few
                // noisy batches, and re-fighting each fit from fresh duals
                // lets the anchor collect a majority verdict instead of
                // freezing the first call in.  An alarm or a confirmed edge
                // event says the old calls may describe a structure that no
                // longer exists, so they get the same treatment.  Elsewhere
                // the duals carry, which keeps steady-state solves cheap.
                state.reset_duals(solver_cfg.rho0)?;
                refight = false;
            }
            match solve_targets(&targets, &mut state, &run_cfg) {
                Ok(_) => {
                    outer_iters = state.outer_iters();
                    inner_iters = state.inner_iters();
                }
                Err(Error::ConstraintInfeasible { .. }) => solver_failed = true,
                Err(e) => return Err(e),
            }
        }

        // End of warm-up: freeze calibration and the baseline structure.
        if t == warm {
            let (c, eta) = match detect_cfg.precalibrated {
                Some(pair) => pair,
                None => {
                    let mut rng = ChaCha12Rng::seed_from_u64(detect_cfg.calibration_seed);
                    calibrate_cusum(&h0_scores, detect_cfg.target_far, total - warm, &mut rng)?
                }
            };
            cusum = Some(CusumState::new(c, eta)?);
            calibration = (c, eta);
            let conf = threshold_edges(state.current());
            initial_confirmed = conf.clone();
            confirmed = Some(conf);
        }

        // Test entries that have disagreed with the confirmed structure for
        // `disagreement_patience` consecutive steps, on the pooled evidence.
        let mut step_events = 0usize;
        let mut projection_drops = 0usize;
        if t > warm && have_targets && !solver_failed {
            let conf = confirmed.as_mut().expect("confirmed structure exists after warm-up");
            let w_now = state.current().clone();
            let now_adj = threshold_edges(&w_now);

            let mut due: Vec<(usize, usize)> = Vec::new();
            for parent in 0..d {
                for child in 0..d {
                    if parent == child {
                        continue;
                    }
                    let slot = parent * d + child;
                    if now_adj.get(parent, child) == conf.get(parent, child) {
                        disagree_streak[slot] = 0;
                        continue;
                    }
                    disagree_streak[slot] += 1;
                    if disagree_streak[slot] >= detect_cfg.disagreement_patience {
                        due.push((parent, child));
                    }
                }
            }

            if !due.is_empty() {
                let (z_pool, y_pool) = stack_evidence(&evidence);
                for (parent, child) in due {
                    if now_adj.get(parent, child) {
                        let outcome = edge_appearance_test(
                            &z_pool,
                            &y_pool,
                            &w_now,
                            (parent, child),
                            edge_cfg.alpha_add,
                        )?;
                        if let Some(test) = outcome {
                            if test.confirm {
                                conf.set(parent, child, true);
                                disagree_streak[parent * d + child] = 0;
                                // Seed the solver with the coefficient the
                                // test measured: when the new parent is
                                // nearly collinear with an established one,
                                // the per-step fits would otherwise close the
                                // remaining gap at a crawl, and the half-fit
                                // edge would keep residuals warm for the rest
                                // of the stream.
                                state.plant_edge(parent, child, test.estimate)?;
                                events.push(DetectionEvent {
                                    t,
                                    parent,
                                    child,
                                    kind: ChangeKind::Added,
                                    statistic: test.statistic,
                                    threshold_used: test.threshold,
                                });
                                step_events += 1;
                            }
                        }
                    } else {
                        let outcome = edge_disappearance_test(
                            &z_pool,
                            &y_pool,
                            &*conf,
                            (parent, child),
                            edge_cfg.alpha_rem,
                        )?;
                        if let Some(test) = outcome {
                            if test.confirm {
                                conf.set(parent, child, false);
                                disagree_streak[parent * d + child] = 0;
                                state.zero_edge(parent, child)?;
                                events.push(DetectionEvent {
                                    t,
                                    parent,
                                    child,
                                    kind: ChangeKind::Deleted,
                                    statistic: test.statistic,
                                    threshold_used: test.threshold,
                                });
                                step_events += 1;
                            }
                        }
                    }
                }
            }
            projection_drops = prune_cycles(conf, |p, c| w_now.weight(p, c).abs()).len();
            debug_assert!(is_dag(conf), "confirmed structure must stay acyclic");
            if step_events > 0 {
                refight = true;
                if let Some(cs) = cusum.as_mut() {
                    cs.reset();
                }
            }
        }

        diagnostics.push(StepDiagnostics {
            t,
            score,
            cusum: s_val,
            alarmed,
            lambda2: l2,
            solver_failed,
            outer_iters,
            inner_iters,
            events: step_events,
            projection_drops,
        });
        prev_alarmed = alarmed;
    }

    Ok(SequentialOutcome {
        events,
        diagnostics,
        calibration,
        initial_confirmed,
        confirmed: confirmed.unwrap_or_else(|| AdjacencyMatrix::new(d)),
        final_graph: state.current().clone(),
        first_alarm,
    })
}

/// Row-stacks the evidence pool into one regressor and one response matrix,
/// oldest rows first.
fn stack_evidence(pool: &VecDeque<(DMatrix<f64>, DMatrix<f64>)>) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = pool.front().map_or(0, |(z, _)| z.ncols());
    let rows: usize = pool.iter().map(|(z, _)| z.nrows()).sum();
    let mut z_out = DMatrix::zeros(rows, d);
    let mut y_out = DMatrix::zeros(rows, d);
    let mut at = 0;
    for (z, y) in pool {
        z_out.rows_mut(at, z.nrows()).copy_from(z);
        y_out.rows_mut(at, y.nrows()).copy_from(y);
        at += z.nrows();
    }
    (z_out, y_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_stream, sample_contemporaneous, SimConfig};
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, Normal};

    /// Both columns of a 2-variable contemporaneous batch.
    fn two_col(xs: &[f64], ys: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), 2, |r, c| if c == 0 { xs[r] } else { ys[r] })
    }

    #[test]
    fn recursion_matches_hand_computation() {
        // Drift 1, threshold 5, constant score 2: S walks 1, 2, ..., and the
        // first value strictly above 5 arrives on the sixth update.
        let mut cs = CusumState::new(1.0, 5.0).unwrap();
        let mut first_alarm = None;
        for k in 1..=8 {
            // Mean squared entry of [2, 0] is 2.
            let r = DMatrix::from_row_slice(1, 2, &[2.0, 0.0]);
            if cusum_update(&mut cs, &r).unwrap() && first_alarm.is_none() {
                first_alarm = Some(k);
            }
        }
        assert_eq!(first_alarm, Some(6));

        // Scores exactly at the drift never lift the statistic off zero.
        let mut cs = CusumState::new(1.5, 0.5).unwrap();
        for _ in 0..50 {
            assert!(!cs.advance(1.5).unwrap());
            assert_eq!(cs.s(), 0.0);
        }

        cs.advance(100.0).unwrap();
        assert!(cs.alarmed());
        cs.reset();
        assert_eq!(cs.s(), 0.0);
        assert!(!cs.alarmed());
    }

    #[test]
    fn statistic_stays_nonnegative_and_alarm_tracks_threshold() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let noise = Normal::new(0.4, 1.0).unwrap();
        let mut cs = CusumState::new(0.5, 2.0).unwrap();
        let mut oracle = 0.0f64;
        for _ in 0..1000 {
            let draw: f64 = noise.sample(&mut rng);
            let score = draw.abs();
            let alarmed = cs.advance(score).unwrap();
            oracle = (oracle + score - 0.5).max(0.0);
            assert_eq!(cs.s(), oracle);
            assert!(cs.s() >= 0.0);
            assert_eq!(alarmed, cs.s() > cs.eta());
            assert_eq!(alarmed, cs.alarmed());
        }
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        assert!(CusumState::new(f64::NAN, 1.0).is_err());
        assert!(CusumState::new(0.0, -0.5).is_err());
        assert!(CusumState::new(0.0, f64::INFINITY).is_err());
        let mut cs = CusumState::new(0.0, 1.0).unwrap();
        assert!(cs.advance(f64::NAN).is_err());
        let bad = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(cusum_update(&mut cs, &bad).is_err());
        assert!(residual_score(&DMatrix::<f64>::zeros(0, 0)).is_err());
    }

    #[test]
    fn prediction_residual_matches_definition() {
        let x = two_col(&[1.0, 2.0], &[3.0, 4.0]);
        let zero = WeightedGraph::zeros(2, 0.3);
        let r = residual(&x, None, Mode::Contemporaneous, &zero).unwrap();
        assert_eq!(r, x);

        // Against the generating graph the residual is exactly the noise, so
        // its mean squared entry approaches the noise variance.
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let g = crate::sim::generate_random_dag(6, 0.4, 0.8, false, &mut rng).unwrap();
        let data = sample_contemporaneous(&g, 1.0, 400, &mut rng).unwrap();
        let r = residual(&data, None, Mode::Contemporaneous, &g).unwrap();
        let score = residual_score(&r).unwrap();
        assert!((score - 1.0).abs() < 0.15, "mean squared residual {score} should be near 1");

        assert!(residual(&x, None, Mode::Lagged, &zero).is_err());
        let three = WeightedGraph::zeros(3, 0.3);
        assert!(residual(&x, None, Mode::Contemporaneous, &three).is_err());
    }

    #[test]
    fn calibration_frozen_behaviors() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let constant = vec![2.5; 60];
        let (c, eta) = calibrate_cusum(&constant, 0.05, 100, &mut rng).unwrap();
        assert_eq!(c, 2.5);
        assert_eq!(eta, 0.0);
        // With any positive threshold a constant-score stream never alarms.
        let mut cs = CusumState::new(c, 0.1).unwrap();
        for _ in 0..200 {
            assert!(!cs.advance(2.5).unwrap());
        }

        let varied: Vec<f64> = (0..80).map(|i| 1.0 + 0.01 * i as f64).collect();
        let (_, eta) = calibrate_cusum(&varied, 1.0, 100, &mut rng).unwrap();
        assert_eq!(eta, 0.0, "a permitted false-alarm rate of 1 needs no threshold");

        assert!(calibrate_cusum(&vec![1.0; 49], 0.05, 100, &mut rng).is_err());
        assert!(calibrate_cusum(&vec![f64::NAN; 60], 0.05, 100, &mut rng).is_err());
        assert!(calibrate_cusum(&vec![1.0; 60], 0.0, 100, &mut rng).is_err());
        assert!(calibrate_cusum(&vec![1.0; 60], 0.05, 0, &mut rng).is_err());
    }

    #[test]
    fn calibrated_threshold_controls_false_alarms() {
        let mut draw_rng = ChaCha12Rng::seed_from_u64(101);
        let noise = Normal::new(1.0, 0.1).unwrap();
        let h0: Vec<f64> = (0..150).map(|_| noise.sample(&mut draw_rng)).collect();

        let mut cal_rng = ChaCha12Rng::seed_from_u64(202);
        let (c, eta) = calibrate_cusum(&h0, 0.05, 150, &mut cal_rng).unwrap();
        assert!(eta > 0.0);

        // Fresh bootstrap replays from the same score pool stay within the
        // permitted false-alarm rate (seeded instance).
        let mut fresh = ChaCha12Rng::seed_from_u64(303);
        let mut alarms = 0;
        for _ in 0..1000 {
            let mut s = 0.0f64;
            let mut tripped = false;
            for _ in 0..150 {
                let score = h0[fresh.gen_range(0..h0.len())];
                s = (s + score - c).max(0.0);
                if s > eta {
                    tripped = true;
                    break;
                }
            }
            if tripped {
                alarms += 1;
            }
        }
        let far = alarms as f64 / 1000.0;
        assert!(far <= 0.05, "false-alarm rate {far} exceeds the 0.05 target");
        assert!(far >= 0.005, "threshold {eta} looks degenerately conservative (far {far})");
    }

    #[test]
    fn appearance_statistic_matches_hand_ols() {
        // y on x without intercept: coefficient 27/30, RSS 0.7, and
        // t = 0.9 / sqrt((0.7 / 3) / 30) = 27 / sqrt(7).
        let z = two_col(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 2.0, 4.0]);
        let w_hat = WeightedGraph::zeros(2, 0.3);
        let test = edge_appearance_test(&z, &z, &w_hat, (0, 1), 0.05)
            .unwrap()
            .expect("decidable");
        let expected_t = 27.0 / 7.0f64.sqrt();
        assert_abs_diff_eq!(test.statistic, expected_t, epsilon = 1e-9);
        assert_abs_diff_eq!(test.threshold, 3.182446305284, epsilon = 1e-6);
        assert!(test.confirm, "t {} clears t_crit {}", test.statistic, test.threshold);
    }

    #[test]
    fn disappearance_equals_squared_appearance_for_single_parent() {
        let z = two_col(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 2.0, 4.0]);
        let mut confirmed = AdjacencyMatrix::new(2);
        confirmed.set(0, 1, true);
        let test = edge_disappearance_test(&z, &z, &confirmed, (0, 1), 0.05)
            .unwrap()
            .expect("decidable");
        let expected_t = 27.0 / 7.0f64.sqrt();
        assert_abs_diff_eq!(test.statistic, expected_t * expected_t, epsilon = 1e-9);
        assert_abs_diff_eq!(test.statistic, 729.0 / 7.0, epsilon = 1e-9);
        assert!(!test.confirm, "a strongly explanatory edge must be retained");
        assert_abs_diff_eq!(test.threshold, 10.12796, epsilon = 1e-4);
    }

    #[test]
    fn exact_fit_conventions() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let w_hat = WeightedGraph::zeros(2, 0.3);

        // Identically zero response: exact fit with a zero coefficient.
        let z = two_col(&x, &[0.0; 4]);
        let test = edge_appearance_test(&z, &z, &w_hat, (0, 1), 0.05).unwrap().unwrap();
        assert!(!test.confirm);
        assert_eq!(test.statistic, 0.0);

        // Exact proportional response: infinite t, clamped, confirmed.
        let z = two_col(&x, &[2.0, 4.0, 6.0, 8.0]);
        let test = edge_appearance_test(&z, &z, &w_hat, (0, 1), 0.05).unwrap().unwrap();
        assert!(test.confirm);
        assert!(test.statistic > 1e300);

        // Removing the parent from an exact fit is always refused.
        let mut confirmed = AdjacencyMatrix::new(2);
        confirmed.set(0, 1, true);
        let test = edge_disappearance_test(&z, &z, &confirmed, (0, 1), 0.05).unwrap().unwrap();
        assert!(!test.confirm);
        assert!(test.statistic > 1e300);

        // An orthogonal parent explains nothing: F = 0, removed.
        let z = two_col(&[1.0, -1.0, 1.0, -1.0], &[1.0, 1.0, 1.0, 1.0]);
        let test = edge_disappearance_test(&z, &z, &confirmed, (0, 1), 0.05).unwrap().unwrap();
        assert!(test.confirm);
        assert_eq!(test.statistic, 0.0);
    }

    #[test]
    fn short_or_collinear_batches_are_indeterminate() {
        // Two rows cannot support two parameters plus a variance estimate.
        let mut w_hat = WeightedGraph::zeros(3, 0.3);
        w_hat.set_weight(0, 2, 1.0).unwrap();
        let z = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, 2.0, 1.0, 0.25]);
        assert!(edge_appearance_test(&z, &z, &w_hat, (1, 2), 0.05).unwrap().is_none());

        // Duplicated regressor columns make the Gram matrix singular.
        let z = DMatrix::from_fn(4, 3, |r, c| match c {
            0 | 1 => (r + 1) as f64,
            _ => 0.5 * (r as f64) - 1.0,
        });
        assert!(edge_appearance_test(&z, &z, &w_hat, (1, 2), 0.05).unwrap().is_none());

        let mut confirmed = AdjacencyMatrix::new(3);
        confirmed.set(0, 1, true);
        confirmed.set(2, 1, true);
        let z = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, 2.0, 1.0, 0.25]);
        assert!(edge_disappearance_test(&z, &z, &confirmed, (0, 1), 0.05).unwrap().is_none());

        // Testing an edge the confirmed structure does not hold is a caller
        // bug, not an indeterminate outcome.
        let z = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.5, 2.0, 1.0, 0.25, 0.0, 1.0, 1.0, 1.0, 0.0, 2.0]);
        assert!(edge_disappearance_test(&z, &z, &confirmed, (1, 0), 0.05).is_err());
    }

    #[test]
    fn null_parent_is_removed_by_the_f_test() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut confirmed = AdjacencyMatrix::new(2);
        confirmed.set(0, 1, true);
        let mut removed = 0;
        for _ in 0..500 {
            let z = DMatrix::from_fn(30, 2, |_, _| noise.sample(&mut rng));
            let test = edge_disappearance_test(&z, &z, &confirmed, (0, 1), 0.05)
                .unwrap()
                .expect("decidable");
            assert!(test.statistic >= 0.0);
            if test.confirm {
                removed += 1;
            }
        }
        assert!(removed >= 450, "only {removed}/500 null parents were removed");
    }

    #[test]
    fn events_roundtrip_as_json_lines() {
        let events = vec![
            DetectionEvent {
                t: 251,
                parent: 3,
                child: 7,
                kind: ChangeKind::Added,
                statistic: 4.25,
                threshold_used: 2.86,
            },
            DetectionEvent {
                t: 260,
                parent: 1,
                child: 0,
                kind: ChangeKind::Deleted,
                statistic: f64::MAX,
                threshold_used: 4.17,
            },
        ];
        let text = events_to_jsonl(&events).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("\"added\""));
        assert!(text.contains("\"deleted\""));
        let parsed = events_from_jsonl(&format!("\n{text}\n")).unwrap();
        assert_eq!(parsed, events);
    }

    #[test]
    fn configs_validate_their_ranges() {
        assert!(EdgeTestConfig::default().validate().is_ok());
        assert!(EdgeTestConfig { alpha_add: 0.0, alpha_rem: 0.05 }.validate().is_err());
        assert!(EdgeTestConfig { alpha_add: 0.02, alpha_rem: 1.0 }.validate().is_err());

        assert!(DetectConfig::default().validate().is_ok());
        let base = DetectConfig::default();
        assert!(DetectConfig { target_far: 0.0, ..base.clone() }.validate().is_err());
        assert!(DetectConfig { lambda2_decay: 1.0, ..base.clone() }.validate().is_err());
        assert!(DetectConfig { lambda2_recovery_steps: 0, ..base.clone() }.validate().is_err());
        assert!(DetectConfig { warmup_steps: 10, burn_in: 10, ..base.clone() }.validate().is_err());
        assert!(DetectConfig {
            precalibrated: Some((f64::NAN, 1.0)),
            ..base.clone()
        }
        .validate()
        .is_err());
        // With explicit thresholds no warm-up is needed.
        assert!(DetectConfig { warmup_steps: 0, precalibrated: Some((1.0, 2.0)), ..base }
            .validate()
            .is_ok());
    }

    /// Stream used by the sequential smoke tests: well-separated weights so
    /// estimates sit far from the binarization threshold.
    fn solid_margin_config(seed: u64) -> SimConfig {
        SimConfig {
            n: 10,
            edge_prob: 0.2,
            weight_scale: 2.0,
            noise_sd: 0.3,
            flip_count: 2,
            horizon: 200,
            t_star: 120,
            batch_size: 20,
            mode: Mode::Contemporaneous,
            seed,
            positive_weights: false,
        }
    }

    fn detect_config(seed: u64) -> DetectConfig {
        DetectConfig {
            warmup_steps: 65,
            burn_in: 13,
            calibration_seed: seed ^ 0x5eed_ca1b,
            ..DetectConfig::default()
        }
    }

    #[test]
    fn sequential_rejects_malformed_streams() {
        let solver_cfg = SolverConfig::default();
        let edge_cfg = EdgeTestConfig::default();
        let det = detect_config(0);
        assert!(run_sequential(&[], Mode::Contemporaneous, 0.25, &solver_cfg, &edge_cfg, &det)
            .is_err());

        let batches = vec![ObservationBatch { t: 2, data: DMatrix::zeros(4, 3).add_scalar(1.0) }];
        assert!(
            run_sequential(&batches, Mode::Contemporaneous, 0.25, &solver_cfg, &edge_cfg, &det)
                .is_err()
        );

        let cfg = SimConfig { horizon: 30, t_star: 20, n: 4, ..solid_margin_config(1) };
        let (batches, _) = generate_stream(&cfg).unwrap();
        // Warm-up longer than the stream.
        assert!(
            run_sequential(&batches, Mode::Contemporaneous, 0.25, &solver_cfg, &edge_cfg, &det)
                .is_err()
        );
        // No warm-up and no thresholds.
        let det0 = DetectConfig { warmup_steps: 0, burn_in: 0, ..DetectConfig::default() };
        assert!(
            run_sequential(&batches, Mode::Contemporaneous, 0.25, &solver_cfg, &edge_cfg, &det0)
                .is_err()
        );
    }

    #[test]
    fn sequential_is_deterministic() {
        let cfg =
            SimConfig { flip_count: 0, horizon: 100, t_star: 80, n: 6, ..solid_margin_config(31) };
        let (batches, _) = generate_stream(&cfg).unwrap();
        let solver_cfg = SolverConfig::default();
        let edge_cfg = EdgeTestConfig::default();
        let det = detect_config(31);
        let a = run_sequential(
            &batches,
            Mode::Contemporaneous,
            cfg.edge_threshold(),
            &solver_cfg,
            &edge_cfg,
            &det,
        )
        .unwrap();
        let b = run_sequential(
            &batches,
            Mode::Contemporaneous,
            cfg.edge_threshold(),
            &solver_cfg,
            &edge_cfg,
            &det,
        )
        .unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.diagnostics, b.diagnostics);
        assert_eq!(a.calibration, b.calibration);
        assert_eq!(a.confirmed.edges(), b.confirmed.edges());
    }

    #[test]
    fn sequential_change_free_stays_quiet() {
        let solver_cfg = SolverConfig::default();
        let edge_cfg = EdgeTestConfig::default();
        let trials = 40;
        let mut quiet = 0;
        let mut total_events = 0;
        for trial in 0..trials {
            let cfg = SimConfig {
                n: 8,
                edge_prob: 0.25,
                weight_scale: 0.5,
                noise_sd: 0.1,
                flip_count: 0,
                horizon: 200,
                t_star: 100,
                seed: trial,
                ..solid_margin_config(trial)
            };
            let (batches, _) = generate_stream(&cfg).unwrap();
            let out = run_sequential(
                &batches,
                Mode::Contemporaneous,
                cfg.edge_threshold(),
                &solver_cfg,
                &edge_cfg,
                &detect_config(trial),
            )
            .unwrap();
            total_events += out.events.len();
            if out.events.is_empty() {
                quiet += 1;
            }
        }
        assert!(
            quiet * 10 >= trials * 9,
            "only {quiet}/{trials} change-free runs stayed quiet ({total_events} events total)"
        );
    }

    #[test]
    fn sequential_catches_a_blatant_change() {
        let cfg = solid_margin_config(7);
        let (batches, truth) = generate_stream(&cfg).unwrap();
        let out = run_sequential(
            &batches,
            Mode::Contemporaneous,
            cfg.edge_threshold(),
            &SolverConfig::default(),
            &EdgeTestConfig::default(),
            &detect_config(7),
        )
        .unwrap();

        let matches_flip = |e: &DetectionEvent| {
            truth.flipped.iter().any(|f| f.parent == e.parent && f.child == e.child && f.kind == e.kind)
        };
        assert!(
            out.events.iter().any(|e| e.t >= truth.t_star && matches_flip(e)),
            "no flipped edge was confirmed after the change (events: {:?})",
            out.events
        );
        assert!(
            out.events.iter().all(|e| e.t >= truth.t_star || !matches_flip(e)),
            "a flipped edge was confirmed before the change existed"
        );
        let alarm = out.first_alarm.expect("a flip this large should trip the CUSUM");
        assert!(alarm >= truth.t_star, "alarm at {alarm} predates the change at {}", truth.t_star);
    }

    #[test]
    fn lambda2_follows_the_alarm_law() {
        let cfg = solid_margin_config(19);
        let (batches, _) = generate_stream(&cfg).unwrap();
        let solver_cfg = SolverConfig::default();
        let det = detect_config(19);
        let out = run_sequential(
            &batches,
            Mode::Contemporaneous,
            cfg.edge_threshold(),
            &solver_cfg,
            &EdgeTestConfig::default(),
            &det,
        )
        .unwrap();

        let baseline = solver_cfg.lambda2;
        let floor = baseline * 1e-6;
        let mut expected = baseline;
        let mut quiet_run = 0usize;
        let mut saw_alarm = false;
        for diag in &out.diagnostics {
            if diag.t <= det.warmup_steps {
                assert_eq!(diag.lambda2, baseline, "warm-up must run at the baseline penalty");
                continue;
            }
            if diag.alarmed {
                saw_alarm = true;
                quiet_run = 0;
                expected = (expected * det.lambda2_decay).max(floor);
            } else {
                quiet_run += 1;
                if quiet_run >= det.lambda2_recovery_steps {
                    expected = baseline;
                }
            }
            assert_eq!(
                diag.lambda2, expected,
                "step {}: recorded penalty diverges from the alarm law",
                diag.t
            );
            if diag.lambda2 < baseline {
                assert!(saw_alarm, "the penalty dropped without any alarm");
            }
        }
        assert!(saw_alarm, "a flip this large should alarm at least once");
    }

    #[test]
    fn sequential_survives_infeasible_fits() {
        // Perfectly duplicated coordinates with no sparsity or smoothness
        // give the constrained fit nowhere to go at a frozen penalty.
        let row = [1.0, 1.0, -1.0, 2.0];
        let data = DMatrix::from_fn(4, 2, |r, _| row[r]);
        let batches: Vec<ObservationBatch> =
            (1..=3).map(|t| ObservationBatch { t, data: data.clone() }).collect();
        let solver_cfg = SolverConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            rho0: 1e-6,
            rho_max: 1e-6,
            max_outer: 1,
            ..SolverConfig::default()
        };
        let det = DetectConfig {
            warmup_steps: 0,
            burn_in: 0,
            precalibrated: Some((1e9, 1e9)),
            ..DetectConfig::default()
        };
        let out = run_sequential(
            &batches,
            Mode::Contemporaneous,
            0.25,
            &solver_cfg,
            &EdgeTestConfig::default(),
            &det,
        )
        .unwrap();
        assert!(out.diagnostics.iter().all(|d| d.solver_failed));
        assert!(out.events.is_empty());
        assert_eq!(out.final_graph.weights().norm_squared(), 0.0);
    }

    #[test]
    fn events_replay_as_genuine_transitions() {
        let cfg = solid_margin_config(23);
        let (batches, _) = generate_stream(&cfg).unwrap();
        let out = run_sequential(
            &batches,
            Mode::Contemporaneous,
            cfg.edge_threshold(),
            &SolverConfig::default(),
            &EdgeTestConfig::default(),
            &detect_config(23),
        )
        .unwrap();

        let drops: usize = out.diagnostics.iter().map(|d| d.projection_drops).sum();
        assert_eq!(drops, 0, "solid-margin streams should never need projection repairs");

        let mut replay = out.initial_confirmed.clone();
        for e in &out.events {
            match e.kind {
                ChangeKind::Added => {
                    assert!(!replay.get(e.parent, e.child), "re-added a present edge: {e:?}");
                    replay.set(e.parent, e.child, true);
                }
                ChangeKind::Deleted => {
                    assert!(replay.get(e.parent, e.child), "deleted an absent edge: {e:?}");
                    replay.set(e.parent, e.child, false);
                }
            }
            assert!(e.t > 65, "events must not fire during warm-up: {e:?}");
        }
        assert_eq!(replay.edges(), out.confirmed.edges());
        assert!(is_dag(&out.confirmed));
    }
}
