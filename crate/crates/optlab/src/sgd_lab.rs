//! SGD on least squares under two learning-rate schedules, and the pipeline
//! that labels systems by the better schedule, trains a selector network on
//! the measurement vectors, and scores it against the fixed schedules.
//!
//! Consistent systems (y in the column space of A) favor the constant rate;
//! inconsistent systems carry a component orthogonal to the column space,
//! which gives constant-rate SGD a convergence horizon the decaying schedule
//! escapes. The selector only ever sees y.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blas;
use crate::ensembles::{self, MeasurementMatrix};
use crate::error::{Error, Result};
use crate::mlp::{self, MlpModel, TrainConfig};
use crate::rng;
use crate::tomo;

/// A learning-rate rule: either a constant c, or c1 * c2^floor((t+1)/c3),
/// which decays by the factor c2 once per epoch of c3 iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    Constant { c: f64 },
    EpochDecay { c1: f64, c2: f64, c3: usize },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Constant { c } if c > 0.0 => Ok(()),
            Schedule::EpochDecay { c1, c2, c3 } if c1 > 0.0 && c2 > 0.0 && c2 <= 1.0 && c3 >= 1 => {
                Ok(())
            }
            _ => Err(Error::invalid(format!("invalid schedule {self:?}"))),
        }
    }

    /// The learning rate at iteration index t (0-based).
    pub fn value(&self, t: usize) -> f64 {
        match *self {
            Schedule::Constant { c } => c,
            Schedule::EpochDecay { c1, c2, c3 } => c1 * c2.powi(((t + 1) / c3) as i32),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Schedule::Constant { .. } => "constant",
            Schedule::EpochDecay { .. } => "epoch",
        }
    }
}

/// Convenience wrapper matching the operation name.
pub fn schedule_value(sched: &Schedule, t: usize) -> f64 {
    sched.value(t)
}

/// One least-squares system sharing the experiment's fixed matrix.
#[derive(Debug, Clone)]
pub struct LsqSystem {
    /// Measurement vector, normalized to unit Euclidean norm.
    pub y: Array1<f64>,
    /// Ground truth under the same normalization; the recovery error of an
    /// iterate is measured against this.
    pub x_true: Array1<f64>,
    pub consistent: bool,
}

/// Outcome of one SGD run.
#[derive(Debug, Clone)]
pub struct SgdResult {
    pub x_final: Array1<f64>,
    pub recovery_error: f64,
    pub residual_error: f64,
    /// Step index at which the iterate went non-finite, if it did.
    pub diverged_at: Option<usize>,
}

/// Runs `steps` iterations of SGD on min ||A x - y||^2 with the per-sample
/// objective f_i(x) = (1/2) (<a_i, x> - y_i)^2, drawing rows uniformly with
/// replacement. Step t (1-based) uses the schedule value at index t-1.
pub fn sgd_least_squares(
    a: &MeasurementMatrix,
    y: ArrayView1<f64>,
    x_true: ArrayView1<f64>,
    sched: &Schedule,
    steps: usize,
    seed: u64,
    x0: Option<ArrayView1<f64>>,
) -> Result<SgdResult> {
    sched.validate()?;
    let (m, n) = (a.m(), a.n());
    if y.len() != m || x_true.len() != n {
        return Err(Error::ShapeMismatch("sgd system shapes".into()));
    }
    if steps < 1 {
        return Err(Error::invalid("need at least one SGD step"));
    }
    let mut x: Vec<f64> = match x0 {
        Some(v) => {
            if v.len() != n {
                return Err(Error::ShapeMismatch("x0 length".into()));
            }
            v.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut r = rng::stream(seed);
    let mut diverged_at = None;
    for t in 1..=steps {
        let i = r.gen_range(0..m);
        let row = a
            .row_slice(i)
            .ok_or_else(|| Error::invalid("sgd needs a dense-backed matrix"))?;
        let dot: f64 = row.iter().zip(&x).map(|(ai, xi)| ai * xi).sum();
        if !dot.is_finite() {
            diverged_at = Some(t);
            break;
        }
        let step = sched.value(t - 1) * (dot - y[i]);
        for (xi, ai) in x.iter_mut().zip(row) {
            *xi -= step * ai;
        }
    }
    let x_final = Array1::from_vec(x);
    let recovery_error =
        x_final.iter().zip(x_true).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let mut ax = vec![0.0; m];
    a.apply_into(x_final.as_slice().unwrap(), &mut ax);
    let residual_error = y.iter().zip(&ax).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    Ok(SgdResult { x_final, recovery_error, residual_error, diverged_at })
}

/// Orthogonal projector onto (and off) the column space of a fixed matrix,
/// built once from its thin QR factorization.
pub struct ColumnSpaceProjector {
    q: Vec<f64>, // row-major (m, n)
    m: usize,
    n: usize,
}

impl ColumnSpaceProjector {
    pub fn new(a: &MeasurementMatrix) -> Result<Self> {
        let d = a
            .dense_data()
            .ok_or_else(|| Error::invalid("projector needs a dense-backed matrix"))?;
        if a.m() < a.n() {
            return Err(Error::invalid("projector expects an overdetermined matrix"));
        }
        let q = blas::thin_qr_q(d.as_slice().unwrap(), a.m(), a.n())?;
        Ok(ColumnSpaceProjector { q, m: a.m(), n: a.n() })
    }

    /// Component of v orthogonal to the column space: v - Q (Q^T v).
    pub fn off_column_space(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.m);
        let mut coeffs = vec![0.0; self.n];
        blas::gemv_t(&self.q, self.m, self.n, v, &mut coeffs);
        let mut proj = vec![0.0; self.m];
        blas::gemv(&self.q, self.m, self.n, &coeffs, &mut proj);
        v.iter().zip(&proj).map(|(a, b)| a - b).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Builds a consistent system from a raw signal: y = A x / ||A x||.
pub fn consistent_from_signal(a: &MeasurementMatrix, x: ArrayView1<f64>) -> Result<LsqSystem> {
    let ax = a.apply(x);
    let scale = norm(ax.as_slice().unwrap());
    if scale < 1e-12 {
        return Err(Error::invalid("signal maps to (near-)zero measurements"));
    }
    Ok(LsqSystem { y: ax / scale, x_true: &x / scale, consistent: true })
}

/// Consistent system with a Gaussian signal.
pub fn gen_consistent(a: &MeasurementMatrix, seed: u64) -> Result<LsqSystem> {
    let mut r = rng::stream(seed);
    loop {
        let x = Array1::from_shape_fn(a.n(), |_| rng::normal(&mut r));
        match consistent_from_signal(a, x.view()) {
            Ok(sys) => return Ok(sys),
            Err(_) => continue, // measure-zero degenerate draw
        }
    }
}

/// Builds an inconsistent system from a raw signal: a Gaussian vector is
/// projected off the column space to make the error term e, then
/// y = A x / ||A x|| + noise_scale * e / ||e||, renormalized to unit norm
/// (x_true rescaled identically so errors stay commensurate).
pub fn inconsistent_from_signal(
    a: &MeasurementMatrix,
    proj: &ColumnSpaceProjector,
    x: ArrayView1<f64>,
    noise_scale: f64,
    seed: u64,
) -> Result<LsqSystem> {
    let ax = a.apply(x);
    let scale = norm(ax.as_slice().unwrap());
    if scale < 1e-12 {
        return Err(Error::invalid("signal maps to (near-)zero measurements"));
    }
    let mut r = rng::stream(seed);
    let e = loop {
        let v: Vec<f64> = (0..a.m()).map(|_| rng::normal(&mut r)).collect();
        let e = proj.off_column_space(&v);
        if norm(&e) > 1e-12 {
            break e;
        }
    };
    let e_norm = norm(&e);
    let mut y_pre: Vec<f64> = ax
        .iter()
        .zip(&e)
        .map(|(axi, ei)| axi / scale + noise_scale * ei / e_norm)
        .collect();
    let final_norm = norm(&y_pre);
    for v in y_pre.iter_mut() {
        *v /= final_norm;
    }
    Ok(LsqSystem {
        y: Array1::from_vec(y_pre),
        x_true: &x / (scale * final_norm),
        consistent: false,
    })
}

/// Inconsistent system with a Gaussian signal.
pub fn gen_inconsistent(
    a: &MeasurementMatrix,
    proj: &ColumnSpaceProjector,
    noise_scale: f64,
    seed: u64,
) -> Result<LsqSystem> {
    let mut r = rng::stream(rng::derive(seed, &[0]));
    let x = Array1::from_shape_fn(a.n(), |_| rng::normal(&mut r));
    inconsistent_from_signal(a, proj, x.view(), noise_scale, rng::derive(seed, &[1]))
}

/// Labels a system by the schedule with the smaller recovery error after
/// `steps` iterations, running both schedules over the same sampled row
/// sequence. Returns 0 for `sched_a`, 1 for `sched_b`, ties to `sched_a`,
/// and None if both runs diverged.
pub fn label_system(
    a: &MeasurementMatrix,
    sys: &LsqSystem,
    sched_a: &Schedule,
    sched_b: &Schedule,
    steps: usize,
    seed: u64,
) -> Result<Option<u8>> {
    let ra = sgd_least_squares(a, sys.y.view(), sys.x_true.view(), sched_a, steps, seed, None)?;
    let rb = sgd_least_squares(a, sys.y.view(), sys.x_true.view(), sched_b, steps, seed, None)?;
    match (ra.diverged_at, rb.diverged_at) {
        (Some(_), Some(_)) => Ok(None),
        (Some(_), None) => Ok(Some(1)),
        (None, Some(_)) => Ok(Some(0)),
        (None, None) => Ok(Some(if ra.recovery_error <= rb.recovery_error { 0 } else { 1 })),
    }
}

/// Which experiment family a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SgdKind {
    Synthetic,
    Ct,
}

impl SgdKind {
    pub fn label(&self) -> &'static str {
        match self {
            SgdKind::Synthetic => "synthetic",
            SgdKind::Ct => "ct",
        }
    }
}

/// Everything needed to regenerate a dataset bit-for-bit; written as the
/// JSON sidecar next to the dataset CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgdExperimentSpec {
    pub kind: SgdKind,
    pub count: usize,
    pub matrix_seed: u64,
    pub systems_seed: u64,
    pub label_seed: u64,
    pub noise_scale: f64,
    pub steps: usize,
    pub sched_constant: Schedule,
    pub sched_epoch: Schedule,
    /// "bundled-digits" or a path to an IDX image file (CT only).
    pub image_source: Option<String>,
}

impl SgdExperimentSpec {
    /// The synthetic family: one fixed 1000 x 100 matrix with N(0, 1)
    /// entries, constant rate 0.01 vs epoch decay 0.01 * 0.3^floor((t+1)/100),
    /// full-strength orthogonal noise.
    pub fn synthetic(count: usize, seed: u64) -> Self {
        SgdExperimentSpec {
            kind: SgdKind::Synthetic,
            count,
            matrix_seed: rng::derive(seed, &[1]),
            systems_seed: rng::derive(seed, &[2]),
            label_seed: rng::derive(seed, &[3]),
            noise_scale: 1.0,
            steps: 5000,
            sched_constant: Schedule::Constant { c: 0.01 },
            sched_epoch: Schedule::EpochDecay { c1: 0.01, c2: 0.3, c3: 100 },
            image_source: None,
        }
    }

    /// The tomography family: tomo(20, 10) rays over digit images, constant
    /// rate 0.01 vs epoch decay with c2 = 0.95, half-strength noise.
    pub fn ct(count: usize, seed: u64, image_source: Option<String>) -> Self {
        SgdExperimentSpec {
            kind: SgdKind::Ct,
            count,
            matrix_seed: rng::derive(seed, &[1]),
            systems_seed: rng::derive(seed, &[2]),
            label_seed: rng::derive(seed, &[3]),
            noise_scale: 0.5,
            steps: 5000,
            sched_constant: Schedule::Constant { c: 0.01 },
            sched_epoch: Schedule::EpochDecay { c1: 0.01, c2: 0.95, c3: 100 },
            image_source,
        }
    }

    /// Builds the experiment's fixed measurement matrix.
    pub fn build_matrix(&self) -> Result<MeasurementMatrix> {
        match self.kind {
            SgdKind::Synthetic => ensembles::gen_gaussian_unit(1000, 100, self.matrix_seed),
            SgdKind::Ct => Ok(tomo::gen_tomo(20, 10.0, self.matrix_seed)?.matrix),
        }
    }

    /// Loads the CT image pool named by `image_source`.
    pub fn load_images(&self) -> Result<Vec<Array2<f64>>> {
        match self.kind {
            SgdKind::Synthetic => Ok(Vec::new()),
            SgdKind::Ct => match self.image_source.as_deref() {
                None | Some("bundled-digits") => Ok(tomo::bundled_digit_images()),
                Some(path) => tomo::load_idx_images(std::path::Path::new(path)),
            },
        }
    }
}

/// A labeled dataset of measurement vectors over one fixed matrix.
pub struct SgdDataset {
    pub spec: SgdExperimentSpec,
    pub systems: Vec<LsqSystem>,
    /// 0 = constant schedule, 1 = epoch schedule.
    pub labels: Vec<u8>,
    /// Systems whose labeling runs both diverged and were dropped.
    pub dropped: usize,
}

impl SgdDataset {
    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }

    /// Measurement vectors as classifier feature rows.
    pub fn feature_matrix(&self) -> Array2<f64> {
        let m = self.systems.first().map(|s| s.y.len()).unwrap_or(0);
        Array2::from_shape_fn((self.len(), m), |(i, j)| self.systems[i].y[j])
    }
}

/// Generates `spec.count` systems (first half consistent, second half
/// inconsistent), labels each by the better schedule, and drops rows whose
/// labeling runs both diverged.
pub fn build_sgd_dataset(spec: &SgdExperimentSpec, a: &MeasurementMatrix) -> Result<SgdDataset> {
    if spec.count < 2 || spec.count % 2 != 0 {
        return Err(Error::invalid("system count must be even and at least 2"));
    }
    spec.sched_constant.validate()?;
    spec.sched_epoch.validate()?;
    let proj = ColumnSpaceProjector::new(a)?;
    let images = spec.load_images()?;
    if spec.kind == SgdKind::Ct && images.is_empty() {
        return Err(Error::invalid("CT dataset needs a nonempty image pool"));
    }

    let half = spec.count / 2;
    let systems: Vec<LsqSystem> = (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let sys_seed = rng::derive(spec.systems_seed, &[i as u64]);
            let consistent = i < half;
            match spec.kind {
                SgdKind::Synthetic => {
                    if consistent {
                        gen_consistent(a, sys_seed)
                    } else {
                        gen_inconsistent(a, &proj, spec.noise_scale, sys_seed)
                    }
                }
                SgdKind::Ct => {
                    let img_idx = (rng::derive(sys_seed, &[7]) % images.len() as u64) as usize;
                    let x = tomo::resize_to_grid(images[img_idx].view(), 20);
                    if consistent {
                        consistent_from_signal(a, x.view())
                    } else {
                        inconsistent_from_signal(
                            a,
                            &proj,
                            x.view(),
                            spec.noise_scale,
                            rng::derive(sys_seed, &[1]),
                        )
                    }
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let labeled: Vec<Option<u8>> = systems
        .par_iter()
        .enumerate()
        .map(|(i, sys)| {
            label_system(
                a,
                sys,
                &spec.sched_constant,
                &spec.sched_epoch,
                spec.steps,
                rng::derive(spec.label_seed, &[i as u64]),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut kept_systems = Vec::with_capacity(spec.count);
    let mut labels = Vec::with_capacity(spec.count);
    let mut dropped = 0usize;
    for (sys, label) in systems.into_iter().zip(labeled) {
        match label {
            Some(l) => {
                kept_systems.push(sys);
                labels.push(l);
            }
            None => dropped += 1,
        }
    }
    Ok(SgdDataset { spec: spec.clone(), systems: kept_systems, labels, dropped })
}

/// Writes the dataset as CSV rows `label,y_1,...,y_m` (no header) with the
/// spec as a JSON sidecar at `<path>.json`.
pub fn write_sgd_dataset(ds: &SgdDataset, path: &std::path::Path) -> Result<()> {
    let mut out = String::new();
    for (sys, label) in ds.systems.iter().zip(&ds.labels) {
        out.push_str(&label.to_string());
        for v in sys.y.iter() {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    let sidecar = serde_json::to_string_pretty(&ds.spec)?;
    std::fs::write(sidecar_path(path), sidecar)?;
    Ok(())
}

fn sidecar_path(path: &std::path::Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

/// Reads a sidecar spec written by [`write_sgd_dataset`].
pub fn read_sgd_spec(dataset_path: &std::path::Path) -> Result<SgdExperimentSpec> {
    let text = std::fs::read_to_string(sidecar_path(dataset_path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Per-arm averages of one selector evaluation trial.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SelectorOutcome {
    pub accuracy: f64,
    pub recovery_constant: f64,
    pub recovery_epoch: f64,
    pub recovery_predicted: f64,
    pub residual_constant: f64,
    pub residual_epoch: f64,
    pub residual_predicted: f64,
}

/// Selector evaluation report: per-trial outcomes plus their mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectorReport {
    pub train_fraction: f64,
    pub trials: usize,
    pub mean: SelectorOutcome,
    pub per_trial: Vec<SelectorOutcome>,
}

/// The full evaluation protocol: for each of `trials` random train/test
/// splits, train a fresh m -> 30 -> 1 selector on the training measurement
/// vectors, then solve every test system three ways (constant only, epoch
/// only, selector-predicted) with a shared per-system row sequence, and
/// average the errors over the test set. Outcomes are then averaged over
/// trials.
pub fn evaluate_selector(
    a: &MeasurementMatrix,
    ds: &SgdDataset,
    train_fraction: f64,
    mlp_cfg: &TrainConfig,
    trials: usize,
    seed: u64,
) -> Result<SelectorReport> {
    if !(0.0 < train_fraction && train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction must be in (0, 1)"));
    }
    if trials < 1 {
        return Err(Error::invalid("need at least one trial"));
    }
    let count = ds.len();
    if count < 4 {
        return Err(Error::invalid("dataset too small to evaluate"));
    }
    let features = ds.feature_matrix();
    let mut per_trial = Vec::with_capacity(trials);
    for trial in 0..trials as u64 {
        let mut order: Vec<usize> = (0..count).collect();
        let mut r = rng::stream(rng::derive(seed, &[trial, 0]));
        for i in (1..count).rev() {
            let j = r.gen_range(0..=i);
            order.swap(i, j);
        }
        let n_train = ((count as f64 * train_fraction).round() as usize).clamp(1, count - 1);
        let (train_idx, test_idx) = order.split_at(n_train);

        let train_feats = Array2::from_shape_fn((train_idx.len(), features.ncols()), |(i, j)| {
            features[(train_idx[i], j)]
        });
        let train_labels: Vec<f64> = train_idx.iter().map(|&i| ds.labels[i] as f64).collect();
        let train_set = mlp::Dataset::new(train_feats, train_labels)?;

        let init = mlp::mlp_init(&[features.ncols(), 30, 1], rng::derive(seed, &[trial, 1]))?;
        let cfg = TrainConfig { seed: rng::derive(seed, &[trial, 2]), ..mlp_cfg.clone() };
        let (model, _history) = mlp::train(&init, &train_set, &cfg)?;

        per_trial.push(evaluate_split(a, ds, &features, &model, test_idx, seed, trial)?);
    }
    let mut mean = SelectorOutcome::default();
    for t in &per_trial {
        mean.accuracy += t.accuracy;
        mean.recovery_constant += t.recovery_constant;
        mean.recovery_epoch += t.recovery_epoch;
        mean.recovery_predicted += t.recovery_predicted;
        mean.residual_constant += t.residual_constant;
        mean.residual_epoch += t.residual_epoch;
        mean.residual_predicted += t.residual_predicted;
    }
    let k = trials as f64;
    mean.accuracy /= k;
    mean.recovery_constant /= k;
    mean.recovery_epoch /= k;
    mean.recovery_predicted /= k;
    mean.residual_constant /= k;
    mean.residual_epoch /= k;
    mean.residual_predicted /= k;
    Ok(SelectorReport { train_fraction, trials, mean, per_trial })
}

fn evaluate_split(
    a: &MeasurementMatrix,
    ds: &SgdDataset,
    features: &Array2<f64>,
    model: &MlpModel,
    test_idx: &[usize],
    seed: u64,
    trial: u64,
) -> Result<SelectorOutcome> {
    struct RowOutcome {
        correct: bool,
        rec: [f64; 3],
        res: [f64; 3],
    }
    let rows: Vec<RowOutcome> = test_idx
        .par_iter()
        .map(|&i| -> Result<RowOutcome> {
            let sys = &ds.systems[i];
            let prob = model.forward(features.row(i))?;
            let predicted: u8 = if prob >= 0.5 { 1 } else { 0 };
            let run_seed = rng::derive(seed, &[trial, 3, i as u64]);
            let spec = &ds.spec;
            let run = |sched: &Schedule| {
                sgd_least_squares(
                    a,
                    sys.y.view(),
                    sys.x_true.view(),
                    sched,
                    spec.steps,
                    run_seed,
                    None,
                )
            };
            let r_const = run(&spec.sched_constant)?;
            let r_epoch = run(&spec.sched_epoch)?;
            let r_pred = if predicted == 0 { r_const.clone() } else { r_epoch.clone() };
            Ok(RowOutcome {
                correct: predicted == ds.labels[i],
                rec: [r_const.recovery_error, r_epoch.recovery_error, r_pred.recovery_error],
                res: [r_const.residual_error, r_epoch.residual_error, r_pred.residual_error],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = rows.len() as f64;
    let mut out = SelectorOutcome::default();
    for row in &rows {
        out.accuracy += row.correct as u8 as f64;
        out.recovery_constant += row.rec[0];
        out.recovery_epoch += row.rec[1];
        out.recovery_predicted += row.rec[2];
        out.residual_constant += row.res[0];
        out.residual_epoch += row.res[1];
        out.residual_predicted += row.res[2];
    }
    out.accuracy /= k;
    out.recovery_constant /= k;
    out.recovery_epoch /= k;
    out.recovery_predicted /= k;
    out.residual_constant /= k;
    out.residual_epoch /= k;
    out.residual_predicted /= k;
    Ok(out)
}

/// One point of the mixture analysis.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MixturePoint {
    /// Proportion of the test set that is inconsistent.
    pub p: f64,
    pub constant: f64,
    pub epoch: f64,
    pub predicted: f64,
}

/// Average test error of the three strategies versus the proportion p of
/// inconsistent systems, from the four per-class errors and the selector's
/// accuracy. A selector that is right with probability `accuracy` uses the
/// class's better schedule that often and the other schedule otherwise.
pub fn mixture_curve(
    err_const_on_cons: f64,
    err_const_on_incons: f64,
    err_epoch_on_cons: f64,
    err_epoch_on_incons: f64,
    nn_accuracy: f64,
    p_grid: &[f64],
) -> Result<Vec<MixturePoint>> {
    for e in [err_const_on_cons, err_const_on_incons, err_epoch_on_cons, err_epoch_on_incons] {
        if e < 0.0 {
            return Err(Error::invalid("errors must be nonnegative"));
        }
    }
    if !(0.0..=1.0).contains(&nn_accuracy) {
        return Err(Error::invalid("accuracy must lie in [0, 1]"));
    }
    // Per class, the selector achieves the better schedule's error with
    // probability `accuracy` and the other schedule's error otherwise.
    let nn_on_cons = nn_accuracy * err_const_on_cons + (1.0 - nn_accuracy) * err_epoch_on_cons;
    let nn_on_incons = nn_accuracy * err_epoch_on_incons + (1.0 - nn_accuracy) * err_const_on_incons;
    Ok(p_grid
        .iter()
        .map(|&p| MixturePoint {
            p,
            constant: (1.0 - p) * err_const_on_cons + p * err_const_on_incons,
            epoch: (1.0 - p) * err_epoch_on_cons + p * err_epoch_on_incons,
            predicted: (1.0 - p) * nn_on_cons + p * nn_on_incons,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn schedule_values_match_definitions() {
        let c = Schedule::Constant { c: 0.01 };
        assert_eq!(c.value(0), 0.01);
        assert_eq!(c.value(4999), 0.01);
        let e = Schedule::EpochDecay { c1: 0.01, c2: 0.3, c3: 100 };
        assert!((e.value(98) - 0.01).abs() < 1e-15);
        assert!((e.value(99) - 0.003).abs() < 1e-15);
        assert!((e.value(199) - 0.0009).abs() < 1e-15);
        let flat = Schedule::EpochDecay { c1: 0.02, c2: 1.0, c3: 50 };
        assert_eq!(flat.value(0), 0.02);
        assert_eq!(flat.value(9999), 0.02);
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::Constant { c: 0.0 }.validate().is_err());
        assert!(Schedule::EpochDecay { c1: 0.01, c2: 1.5, c3: 10 }.validate().is_err());
        assert!(Schedule::EpochDecay { c1: 0.01, c2: 0.5, c3: 0 }.validate().is_err());
        assert!(Schedule::EpochDecay { c1: 0.01, c2: 0.5, c3: 1 }.validate().is_ok());
    }

    fn identity_system(n: usize, seed: u64) -> (MeasurementMatrix, LsqSystem) {
        let a = MeasurementMatrix::from_dense(Array2::eye(n));
        let mut r = rng::stream(seed);
        let x = Array1::from_shape_fn(n, |_| rng::normal(&mut r));
        let sys = consistent_from_signal(&a, x.view()).unwrap();
        (a, sys)
    }

    #[test]
    fn sgd_on_identity_solves_touched_coordinates_exactly() {
        let (a, sys) = identity_system(8, 1);
        let sched = Schedule::Constant { c: 1.0 };
        let res =
            sgd_least_squares(&a, sys.y.view(), sys.x_true.view(), &sched, 400, 3, None).unwrap();
        assert!(res.diverged_at.is_none());
        assert!(res.recovery_error < 1e-10, "recovery {}", res.recovery_error);
        // Error shrinks with more steps.
        let short =
            sgd_least_squares(&a, sys.y.view(), sys.x_true.view(), &sched, 4, 3, None).unwrap();
        assert!(short.recovery_error > res.recovery_error);
    }

    #[test]
    fn sgd_is_bitwise_deterministic() {
        let a = ensembles::gen_gaussian_unit(60, 10, 5).unwrap();
        let sys = gen_consistent(&a, 9).unwrap();
        let sched = Schedule::Constant { c: 0.001 };
        let r1 =
            sgd_least_squares(&a, sys.y.view(), sys.x_true.view(), &sched, 500, 11, None).unwrap();
        let r2 =
            sgd_least_squares(&a, sys.y.view(), sys.x_true.view(), &sched, 500, 11, None).unwrap();
        assert_eq!(r1.x_final, r2.x_final);
        assert_eq!(r1.recovery_error.to_bits(), r2.recovery_error.to_bits());
    }

    #[test]
    fn consistent_systems_are_unit_norm_and_solvable() {
        let a = ensembles::gen_gaussian_unit(100, 10, 2).unwrap();
        let sys = gen_consistent(&a, 4).unwrap();
        assert!((norm(sys.y.as_slice().unwrap()) - 1.0).abs() < 1e-12);
        let mut ax = vec![0.0; 100];
        a.apply_into(sys.x_true.as_slice().unwrap(), &mut ax);
        let resid: f64 = sys
            .y
            .iter()
            .zip(&ax)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt();
        assert!(resid < 1e-12, "residual {resid}");
    }

    #[test]
    fn orthogonal_noise_is_orthogonal_to_columns() {
        let a = ensembles::gen_gaussian_unit(80, 12, 3).unwrap();
        let proj = ColumnSpaceProjector::new(&a).unwrap();
        let mut r = rng::stream(5);
        let v: Vec<f64> = (0..80).map(|_| rng::normal(&mut r)).collect();
        let e = proj.off_column_space(&v);
        let e_norm = norm(&e);
        assert!(e_norm > 0.1);
        let mut ate = vec![0.0; 12];
        let d = a.dense_data().unwrap();
        blas::gemv_t(d.as_slice().unwrap(), 80, 12, &e, &mut ate);
        let worst = ate.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        assert!(worst <= 1e-8 * e_norm, "A^T e = {worst}");
    }

    #[test]
    fn inconsistent_systems_keep_unit_norm_and_noise_floor() {
        let a = ensembles::gen_gaussian_unit(120, 15, 6).unwrap();
        let proj = ColumnSpaceProjector::new(&a).unwrap();
        let sys = gen_inconsistent(&a, &proj, 1.0, 8).unwrap();
        assert!(!sys.consistent);
        assert!((norm(sys.y.as_slice().unwrap()) - 1.0).abs() < 1e-12);
        // The orthogonal component has norm noise_scale / sqrt(1 + ns^2);
        // no iterate can push the residual below it.
        let floor = 1.0 / 2.0f64.sqrt();
        let sched = Schedule::Constant { c: 0.005 };
        let res =
            sgd_least_squares(&a, sys.y.view(), sys.x_true.view(), &sched, 2000, 1, None).unwrap();
        assert!(res.residual_error >= 0.9 * floor, "residual {}", res.residual_error);
    }

    #[test]
    fn label_ties_go_to_first_schedule() {
        let a = ensembles::gen_gaussian_unit(50, 8, 1).unwrap();
        let sys = gen_consistent(&a, 2).unwrap();
        let sched = Schedule::Constant { c: 0.002 };
        let label = label_system(&a, &sys, &sched, &sched, 200, 7).unwrap();
        assert_eq!(label, Some(0));
    }

    #[test]
    fn labels_are_reproducible() {
        let a = ensembles::gen_gaussian_unit(60, 9, 4).unwrap();
        let proj = ColumnSpaceProjector::new(&a).unwrap();
        let sys = gen_inconsistent(&a, &proj, 1.0, 3).unwrap();
        let ca = Schedule::Constant { c: 0.01 };
        let ep = Schedule::EpochDecay { c1: 0.01, c2: 0.3, c3: 50 };
        let l1 = label_system(&a, &sys, &ca, &ep, 800, 5).unwrap();
        let l2 = label_system(&a, &sys, &ca, &ep, 800, 5).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn recovery_error_median_decreases_as_steps_double() {
        // Constant step below 1/max ||a_i||^2 on a small consistent system.
        let a = ensembles::gen_gaussian_unit(60, 8, 12).unwrap();
        let d = a.dense_data().unwrap();
        let max_row_sq = (0..60)
            .map(|i| d.row(i).iter().map(|v| v * v).sum::<f64>())
            .fold(0.0f64, f64::max);
        let sched = Schedule::Constant { c: 0.5 / max_row_sq };
        let mut medians = Vec::new();
        for steps in [500usize, 1000, 2000, 4000] {
            let mut errs: Vec<f64> = (0..50u64)
                .map(|s| {
                    let sys = gen_consistent(&a, rng::derive(100, &[s])).unwrap();
                    sgd_least_squares(
                        &a,
                        sys.y.view(),
                        sys.x_true.view(),
                        &sched,
                        steps,
                        rng::derive(200, &[s]),
                        None,
                    )
                    .unwrap()
                    .recovery_error
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            medians.push(0.5 * (errs[24] + errs[25]));
        }
        for w in medians.windows(2) {
            assert!(w[1] < w[0], "medians not decreasing: {medians:?}");
        }
    }

    #[test]
    fn mini_synthetic_dataset_labels_split_by_consistency() {
        // Scaled-down version of the synthetic family: labels should track
        // consistency for the large majority of systems.
        let a = ensembles::gen_gaussian_unit(200, 20, 42).unwrap();
        let spec = SgdExperimentSpec {
            kind: SgdKind::Synthetic,
            count: 40,
            matrix_seed: 42,
            systems_seed: rng::derive(42, &[1]),
            label_seed: rng::derive(42, &[2]),
            noise_scale: 1.0,
            steps: 1500,
            // Mirrors the full-size experiment's regime: c * ||row||^2 is
            // near 1, so the constant rate reaches its horizon while the
            // decaying rate stalls below it on inconsistent systems.
            sched_constant: Schedule::Constant { c: 0.05 },
            sched_epoch: Schedule::EpochDecay { c1: 0.05, c2: 0.3, c3: 30 },
            image_source: None,
        };
        let ds = build_sgd_dataset(&spec, &a).unwrap();
        assert_eq!(ds.len() + ds.dropped, 40);
        let half = 20;
        let cons_const =
            ds.systems.iter().zip(&ds.labels).filter(|(s, l)| s.consistent && **l == 0).count();
        let incons_epoch =
            ds.systems.iter().zip(&ds.labels).filter(|(s, l)| !s.consistent && **l == 1).count();
        assert!(cons_const * 10 >= half * 7, "only {cons_const}/{half} consistent -> constant");
        assert!(incons_epoch * 10 >= half * 7, "only {incons_epoch}/{half} inconsistent -> epoch");
    }

    #[test]
    fn count_two_yields_one_of_each() {
        let a = ensembles::gen_gaussian_unit(50, 6, 3).unwrap();
        let mut spec = SgdExperimentSpec::synthetic(2, 5);
        spec.steps = 50;
        let ds = build_sgd_dataset(&spec, &a).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.systems[0].consistent);
        assert!(!ds.systems[1].consistent);
    }

    #[test]
    fn dataset_csv_and_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let a = ensembles::gen_gaussian_unit(30, 5, 3).unwrap();
        let mut spec = SgdExperimentSpec::synthetic(4, 9);
        spec.steps = 40;
        let ds = build_sgd_dataset(&spec, &a).unwrap();
        write_sgd_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), ds.len());
        for line in text.lines() {
            assert_eq!(line.split(',').count(), 1 + 30);
        }
        let spec_back = read_sgd_spec(&path).unwrap();
        let ds2 = build_sgd_dataset(&spec_back, &a).unwrap();
        assert_eq!(ds.labels, ds2.labels);
        for (s1, s2) in ds.systems.iter().zip(&ds2.systems) {
            assert_eq!(s1.y, s2.y);
        }
    }

    #[test]
    fn mixture_curve_endpoints_and_envelope() {
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let pts = mixture_curve(0.1, 0.5, 0.2, 0.3, 1.0, &grid).unwrap();
        assert!((pts[0].constant - 0.1).abs() < 1e-15);
        assert!((pts[100].constant - 0.5).abs() < 1e-15);
        assert!((pts[0].epoch - 0.2).abs() < 1e-15);
        // Perfect selector = per-class lower envelope.
        for pt in &pts {
            let envelope = (1.0 - pt.p) * 0.1 + pt.p * 0.3;
            assert!((pt.predicted - envelope).abs() < 1e-12);
        }
        // Affine in p: second differences vanish.
        for w in pts.windows(3) {
            let dd = w[2].predicted - 2.0 * w[1].predicted + w[0].predicted;
            assert!(dd.abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_curve_rejects_bad_inputs() {
        assert!(mixture_curve(-0.1, 0.1, 0.1, 0.1, 0.5, &[0.0]).is_err());
        assert!(mixture_curve(0.1, 0.1, 0.1, 0.1, 1.5, &[0.0]).is_err());
    }
}
