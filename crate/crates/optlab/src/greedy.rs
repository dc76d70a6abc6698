//! The three greedy sparse solvers (hard thresholding pursuit, normalized
//! iterative hard thresholding, and compressive sampling matching pursuit
//! with subspace pursuit) plus the five-criterion stopping engine.
//!
//! All three share the same skeleton: build a proxy for the signal from the
//! current residual, pick a support estimate, re-estimate the signal on that
//! support, recompute the residual, and stop when one of the exit criteria
//! fires. They differ in how the support is picked and how the on-support
//! estimate is computed (projection vs. restricted least squares).

use std::collections::VecDeque;
use std::time::Instant;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::ensembles::MeasurementMatrix;
use crate::error::{Error, Result};
use crate::sparse_ops::{self, IndexSet};

/// Solver selector, used for stopping parameters and dataset labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algo {
    Htp,
    Niht,
    Csmpsp,
}

impl Algo {
    pub const ALL: [Algo; 3] = [Algo::Htp, Algo::Niht, Algo::Csmpsp];

    pub fn label(&self) -> &'static str {
        match self {
            Algo::Htp => "htp",
            Algo::Niht => "niht",
            Algo::Csmpsp => "csmpsp",
        }
    }

    pub fn from_label(s: &str) -> Result<Algo> {
        match s {
            "htp" => Ok(Algo::Htp),
            "niht" => Ok(Algo::Niht),
            "csmpsp" => Ok(Algo::Csmpsp),
            other => Err(Error::invalid(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Why a solve stopped. Exactly one per solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitStatus {
    /// Residual fell below the convergence threshold (0.001 * delta).
    Converged,
    /// Residual blew past 100x the initial residual (or went non-finite).
    Diverged,
    /// No residual change above the absolute tolerance over the trailing window.
    SlowProgressI,
    /// The windowed residual ratio tripped the rate test.
    SlowProgressII,
    MaxIterations,
    TimeCap,
}

/// Direction of the slow-progress rate test.
///
/// `Printed` applies the published inequality
/// (||r_{k-15}|| / ||r_k||)^(1/15) <= 0.999 verbatim, which fires when the
/// residual has *grown* by about 1.5% over the window. `RateCloseToOne`
/// flips the ratio so the test fires when the residual decays slower than
/// 0.999 per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlowRateRule {
    Printed,
    RateCloseToOne,
}

/// A per-algorithm iteration threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerAlgo {
    pub htp: usize,
    pub niht: usize,
    pub csmpsp: usize,
}

impl PerAlgo {
    fn get(&self, algo: Algo) -> usize {
        match algo {
            Algo::Htp => self.htp,
            Algo::Niht => self.niht,
            Algo::Csmpsp => self.csmpsp,
        }
    }
}

/// Stopping parameters for the greedy solvers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoppingConfig {
    /// Convergence threshold as a multiple of delta.
    pub conv_factor: f64,
    /// Divergence factor relative to the initial residual.
    pub div_factor: f64,
    /// Window length for both slow-progress tests.
    pub slow_window: usize,
    /// Absolute tolerance for slow progress I.
    pub slow_abs_tol: f64,
    /// Rate threshold for slow progress II.
    pub slow_rate_tol: f64,
    /// Iteration count after which slow-progress checks become eligible.
    pub slow_start: PerAlgo,
    /// Hard iteration caps.
    pub max_iter: PerAlgo,
    /// Wall-clock safety cap in seconds.
    pub time_cap_seconds: f64,
    pub slow_rate_rule: SlowRateRule,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        StoppingConfig {
            conv_factor: 0.001,
            div_factor: 100.0,
            slow_window: 15,
            slow_abs_tol: 1e-6,
            slow_rate_tol: 0.999,
            slow_start: PerAlgo { htp: 150, niht: 750, csmpsp: 150 },
            max_iter: PerAlgo { htp: 200, niht: 900, csmpsp: 200 },
            time_cap_seconds: 3600.0,
            slow_rate_rule: SlowRateRule::Printed,
        }
    }
}

/// Outcome of one greedy solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Final iterate, s-sparse.
    pub x_final: Array1<f64>,
    /// Residual norms per iteration, including the initial residual, so the
    /// length is `iterations + 1`.
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    pub status: ExitStatus,
    /// Wall time of the solve in seconds.
    pub wall_time: f64,
    /// Whether any restricted least-squares call fell back to the damped path.
    pub rank_deficient: bool,
    /// Number of iterations whose step size hit the zero-denominator guard.
    pub degenerate_steps: usize,
    /// Largest support handed to the on-support estimator (equals s for HTP
    /// and NIHT; at most 2s for CSMPSP).
    pub max_support_size: usize,
}

impl SolveResult {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().expect("history never empty")
    }

    pub fn recovery_error(&self, x_true: ArrayView1<f64>) -> f64 {
        (&self.x_final - &x_true).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn summary(&self, recovery_error: Option<f64>) -> SolveSummary {
        SolveSummary {
            status: self.status,
            iterations: self.iterations,
            final_residual: self.final_residual(),
            recovery_error,
            wall_time_seconds: self.wall_time,
            rank_deficient: self.rank_deficient,
        }
    }
}

/// JSON-friendly record of a solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    pub status: ExitStatus,
    pub iterations: usize,
    pub final_residual: f64,
    pub recovery_error: Option<f64>,
    pub wall_time_seconds: f64,
    pub rank_deficient: bool,
}

/// Evaluates the stopping criteria, in priority order, for iteration `k`.
///
/// `history` holds the residual norms `||r_0|| ..= ||r_k||`. Returns `None`
/// while the solve should continue. Slow-progress checks become eligible once
/// `k >= slow_start + window` so the window never reaches past the start
/// threshold.
pub fn check_exit(
    history: &[f64],
    k: usize,
    algo: Algo,
    delta: f64,
    r0_norm: f64,
    elapsed_seconds: f64,
    cfg: &StoppingConfig,
) -> Option<ExitStatus> {
    debug_assert_eq!(history.len(), k + 1);
    let rk = history[k];
    if rk <= cfg.conv_factor * delta {
        return Some(ExitStatus::Converged);
    }
    if !rk.is_finite() || rk >= cfg.div_factor * r0_norm {
        return Some(ExitStatus::Diverged);
    }
    let w = cfg.slow_window;
    if k >= cfg.slow_start.get(algo) + w {
        let max_diff = (0..w)
            .map(|i| (history[k - i] - history[k - i - 1]).abs())
            .fold(0.0f64, f64::max);
        if max_diff <= cfg.slow_abs_tol {
            return Some(ExitStatus::SlowProgressI);
        }
        let ratio = match cfg.slow_rate_rule {
            SlowRateRule::Printed => history[k - w] / rk,
            SlowRateRule::RateCloseToOne => rk / history[k - w],
        };
        let rate = ratio.powf(1.0 / w as f64);
        let fires = match cfg.slow_rate_rule {
            SlowRateRule::Printed => rate <= cfg.slow_rate_tol,
            SlowRateRule::RateCloseToOne => rate >= cfg.slow_rate_tol,
        };
        if fires {
            return Some(ExitStatus::SlowProgressII);
        }
    }
    if k >= cfg.max_iter.get(algo) {
        return Some(ExitStatus::MaxIterations);
    }
    if elapsed_seconds >= cfg.time_cap_seconds {
        return Some(ExitStatus::TimeCap);
    }
    None
}

/// The step size of the gradient solvers:
/// w = ||(A^T r)_T||^2 / ||A_T (A^T r)_T||^2.
///
/// A zero numerator returns w = 0 (no move); a zero denominator with nonzero
/// numerator returns w = 1 and sets the degenerate flag.
pub fn step_size(a: &MeasurementMatrix, r: ArrayView1<f64>, t: &IndexSet) -> (f64, bool) {
    let g = a.adjoint_apply(r);
    step_size_from_proxy(a, g.as_slice().unwrap(), t)
}

fn step_size_from_proxy(a: &MeasurementMatrix, g: &[f64], t: &IndexSet) -> (f64, bool) {
    let mut num = 0.0;
    for &i in t.as_slice() {
        num += g[i] * g[i];
    }
    if num == 0.0 {
        return (0.0, false);
    }
    let mut gt = vec![0.0; a.n()];
    for &i in t.as_slice() {
        gt[i] = g[i];
    }
    let mut agt = vec![0.0; a.m()];
    a.apply_into(&gt, &mut agt);
    let den: f64 = agt.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return (1.0, true);
    }
    (num / den, false)
}

/// Small LRU of on-support least-squares solutions. Stagnating or cycling
/// supports dominate failing solves, and the solution depends only on the
/// support, so reuse skips the refactorization entirely.
struct SupportCache {
    entries: VecDeque<(Vec<usize>, Array1<f64>, bool)>,
    cap: usize,
}

impl SupportCache {
    fn new(cap: usize) -> Self {
        SupportCache { entries: VecDeque::new(), cap }
    }

    fn get(&mut self, key: &[usize]) -> Option<(Array1<f64>, bool)> {
        let pos = self.entries.iter().position(|(k, _, _)| k == key)?;
        let hit = self.entries.remove(pos).unwrap();
        let out = (hit.1.clone(), hit.2);
        self.entries.push_front(hit);
        Some(out)
    }

    fn put(&mut self, key: Vec<usize>, x: Array1<f64>, flag: bool) {
        if self.entries.len() == self.cap {
            self.entries.pop_back();
        }
        self.entries.push_front((key, x, flag));
    }
}

struct SolveState<'a, 'y> {
    a: &'a MeasurementMatrix,
    y: ArrayView1<'y, f64>,
    delta: f64,
    r0_norm: f64,
    started: Instant,
    history: Vec<f64>,
    rank_deficient: bool,
    degenerate_steps: usize,
    max_support_size: usize,
    cache: SupportCache,
}

impl<'a, 'y> SolveState<'a, 'y> {
    fn residual(&self, x: &Array1<f64>) -> (Array1<f64>, f64) {
        let ax = self.a.apply(x.view());
        let r = &self.y - &ax;
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        (r, norm)
    }

    fn lsq(&mut self, t: &IndexSet) -> Result<Array1<f64>> {
        self.max_support_size = self.max_support_size.max(t.len());
        if let Some((x, flag)) = self.cache.get(t.as_slice()) {
            self.rank_deficient |= flag;
            return Ok(x);
        }
        let sol = sparse_ops::lsq_on_support(self.a, t, self.y)?;
        self.rank_deficient |= sol.rank_deficient;
        self.cache.put(t.as_slice().to_vec(), sol.x.clone(), sol.rank_deficient);
        Ok(sol.x)
    }

    fn finish(self, x: Array1<f64>, status: ExitStatus, k: usize) -> SolveResult {
        SolveResult {
            x_final: x,
            iterations: k,
            status,
            wall_time: self.started.elapsed().as_secs_f64(),
            residual_history: self.history,
            rank_deficient: self.rank_deficient,
            degenerate_steps: self.degenerate_steps,
            max_support_size: self.max_support_size,
        }
    }
}

fn validate_inputs(a: &MeasurementMatrix, y: ArrayView1<f64>, s: usize) -> Result<()> {
    if y.len() != a.m() {
        return Err(Error::ShapeMismatch(format!(
            "y has length {}, matrix has m = {}",
            y.len(),
            a.m()
        )));
    }
    if s < 1 || s > a.m() || s > a.n() {
        return Err(Error::invalid(format!(
            "need 1 <= s <= min(m, n) = {}, got s = {s}",
            a.m().min(a.n())
        )));
    }
    Ok(())
}

fn init_state<'a, 'y>(
    a: &'a MeasurementMatrix,
    y: ArrayView1<'y, f64>,
    s: usize,
) -> Result<(SolveState<'a, 'y>, Array1<f64>, IndexSet)> {
    let started = Instant::now();
    let proxy = a.adjoint_apply(y);
    let t0 = sparse_ops::supp_s(proxy.view(), s)?;
    let x0 = sparse_ops::project(proxy.view(), &t0);
    let delta = a.m() as f64 / a.n() as f64;
    let mut state = SolveState {
        a,
        y,
        delta,
        r0_norm: 0.0,
        started,
        history: Vec::new(),
        rank_deficient: false,
        degenerate_steps: 0,
        max_support_size: s,
        cache: SupportCache::new(8),
    };
    let (_, r0_norm) = state.residual(&x0);
    state.r0_norm = r0_norm;
    state.history.push(r0_norm);
    Ok((state, x0, t0))
}

/// Hard Thresholding Pursuit: gradient step, re-threshold, then least squares
/// on the new support.
pub fn htp(
    a: &MeasurementMatrix,
    y: ArrayView1<f64>,
    s: usize,
    cfg: &StoppingConfig,
) -> Result<SolveResult> {
    validate_inputs(a, y, s)?;
    let (mut st, mut x, mut t) = init_state(a, y, s)?;
    let mut r = &y.to_owned() - &a.apply(x.view());
    let mut k = 0usize;
    loop {
        if let Some(status) = check_exit(
            &st.history,
            k,
            Algo::Htp,
            st.delta,
            st.r0_norm,
            st.started.elapsed().as_secs_f64(),
            cfg,
        ) {
            return Ok(st.finish(x, status, k));
        }
        k += 1;
        let g = a.adjoint_apply(r.view());
        let (w, degenerate) = step_size_from_proxy(a, g.as_slice().unwrap(), &t);
        st.degenerate_steps += degenerate as usize;
        let candidate = &x + &(w * &g);
        t = sparse_ops::supp_s(candidate.view(), s)?;
        x = st.lsq(&t)?;
        let (r_new, norm) = st.residual(&x);
        r = r_new;
        st.history.push(norm);
    }
}

/// Normalized Iterative Hard Thresholding: gradient step, re-threshold, then
/// plain projection onto the new support.
pub fn niht(
    a: &MeasurementMatrix,
    y: ArrayView1<f64>,
    s: usize,
    cfg: &StoppingConfig,
) -> Result<SolveResult> {
    validate_inputs(a, y, s)?;
    let (mut st, mut x, mut t) = init_state(a, y, s)?;
    let mut r = &y.to_owned() - &a.apply(x.view());
    let mut k = 0usize;
    loop {
        if let Some(status) = check_exit(
            &st.history,
            k,
            Algo::Niht,
            st.delta,
            st.r0_norm,
            st.started.elapsed().as_secs_f64(),
            cfg,
        ) {
            return Ok(st.finish(x, status, k));
        }
        k += 1;
        let g = a.adjoint_apply(r.view());
        let (w, degenerate) = step_size_from_proxy(a, g.as_slice().unwrap(), &t);
        st.degenerate_steps += degenerate as usize;
        let candidate = &x + &(w * &g);
        t = sparse_ops::supp_s(candidate.view(), s)?;
        x = sparse_ops::project(candidate.view(), &t);
        let (r_new, norm) = st.residual(&x);
        r = r_new;
        st.history.push(norm);
    }
}

/// Compressive Sampling Matching Pursuit with Subspace Pursuit: merge the
/// previous support with a fresh size-s identification set, least squares on
/// the union, then prune back to s.
pub fn csmpsp(
    a: &MeasurementMatrix,
    y: ArrayView1<f64>,
    s: usize,
    cfg: &StoppingConfig,
) -> Result<SolveResult> {
    validate_inputs(a, y, s)?;
    let (mut st, mut x, mut t) = init_state(a, y, s)?;
    let mut r = &y.to_owned() - &a.apply(x.view());
    let mut k = 0usize;
    loop {
        if let Some(status) = check_exit(
            &st.history,
            k,
            Algo::Csmpsp,
            st.delta,
            st.r0_norm,
            st.started.elapsed().as_secs_f64(),
            cfg,
        ) {
            return Ok(st.finish(x, status, k));
        }
        k += 1;
        let g = a.adjoint_apply(r.view());
        let identified = sparse_ops::supp_s(g.view(), s)?;
        let union = t.union(&identified);
        debug_assert!(union.len() <= 2 * s);
        let x_ls = st.lsq(&union)?;
        t = sparse_ops::supp_s(x_ls.view(), s)?;
        x = sparse_ops::project(x_ls.view(), &t);
        let (r_new, norm) = st.residual(&x);
        r = r_new;
        st.history.push(norm);
    }
}

/// Dispatches to the solver named by `algo`.
pub fn solve(
    algo: Algo,
    a: &MeasurementMatrix,
    y: ArrayView1<f64>,
    s: usize,
    cfg: &StoppingConfig,
) -> Result<SolveResult> {
    match algo {
        Algo::Htp => htp(a, y, s, cfg),
        Algo::Niht => niht(a, y, s, cfg),
        Algo::Csmpsp => csmpsp(a, y, s, cfg),
    }
}
