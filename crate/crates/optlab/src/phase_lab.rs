//! The phase-transition pipeline: sweep the (delta, rho) plane per solver and
//! ensemble, label each cell by majority recovery success, and train a small
//! classifier to predict the success region from (n, m, s, ensemble).
//!
//! Cells are labeled from independent seeded trials, so the sweep can run in
//! parallel and still produce byte-identical datasets; long sweeps checkpoint
//! completed rows and resume.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{self, MatrixKind, PlanePoint};
use crate::error::{Error, Result};
use crate::greedy::{self, Algo, ExitStatus, StoppingConfig};
use crate::mlp::{self, MlpModel, TrainConfig};
use crate::rng;

/// The ensembles swept by the phase experiments, in dataset order.
pub const CS_ENSEMBLES: [MatrixKind; 3] =
    [MatrixKind::Gaussian, MatrixKind::SparseCol, MatrixKind::SubDct];

/// A sweep grid over the (delta, rho) plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneGrid {
    /// (delta, rho) pairs in sweep order.
    pub points: Vec<(f64, f64)>,
}

impl PlaneGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Rectangular grid: deltas k/20 for k = 1..=n_delta starting at 0.05,
    /// rhos j/(n_rho + 1). Rho stops short of 1.0: at rho = 1 the support
    /// covers all m rows and a least-squares fit interpolates y exactly, so
    /// the residual criterion reports success even though recovery is
    /// hopeless there.
    pub fn rectangular(n_delta: usize, n_rho: usize) -> Self {
        let mut points = Vec::with_capacity(n_delta * n_rho);
        for k in 1..=n_delta {
            let delta = 0.05 * k as f64;
            for j in 1..=n_rho {
                let rho = j as f64 / (n_rho + 1) as f64;
                points.push((delta, rho));
            }
        }
        PlaneGrid { points }
    }

    /// Desk-scale default: 19 deltas x 16 rhos = 304 cells.
    pub fn desk() -> Self {
        Self::rectangular(19, 16)
    }

    /// Full-scale default: 19 delta columns holding 40 or 39 rho values for
    /// a total of 747 plane points per ensemble.
    pub fn paper() -> Self {
        let mut points = Vec::with_capacity(747);
        for k in 1..=19usize {
            let delta = 0.05 * k as f64;
            let n_rho = if k <= 6 { 40 } else { 39 };
            for j in 1..=n_rho {
                points.push((delta, j as f64 / (n_rho + 1) as f64));
            }
        }
        debug_assert_eq!(points.len(), 747);
        PlaneGrid { points }
    }

    /// Loads "delta,rho" lines (comments with '#' allowed).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| Error::invalid(format!("grid line {} malformed", lineno + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("grid line {}: {e}", lineno + 1)))
            };
            let delta = parse(it.next())?;
            let rho = parse(it.next())?;
            points.push((delta, rho));
        }
        if points.is_empty() {
            return Err(Error::invalid("grid file holds no points"));
        }
        Ok(PlaneGrid { points })
    }
}

/// One labeled cell of the phase dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsDatasetRow {
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub ensemble: MatrixKind,
    /// 1 when at least half the trials converged.
    pub label: u8,
    pub delta: f64,
    pub rho: f64,
    pub success_count: usize,
    pub trials: usize,
}

pub const CS_CSV_HEADER: &str = "n,m,s,ens_gauss,ens_sparse,ens_dct,label,delta,rho,success_count,trials";

impl CsDatasetRow {
    fn onehot(&self) -> [u8; 3] {
        match self.ensemble {
            MatrixKind::Gaussian => [1, 0, 0],
            MatrixKind::SparseCol => [0, 1, 0],
            MatrixKind::SubDct => [0, 0, 1],
            other => panic!("{other:?} is not a phase-sweep ensemble"),
        }
    }

    pub fn csv_line(&self) -> String {
        let [g, sp, dc] = self.onehot();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.m,
            self.s,
            g,
            sp,
            dc,
            self.label,
            self.delta,
            self.rho,
            self.success_count,
            self.trials
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::invalid(format!(
                "dataset row has {} fields, expected 11",
                fields.len()
            )));
        }
        let us = |i: usize| -> Result<usize> {
            fields[i].parse().map_err(|e| Error::invalid(format!("field {i}: {e}")))
        };
        let fl = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|e| Error::invalid(format!("field {i}: {e}")))
        };
        let onehot = (us(3)?, us(4)?, us(5)?);
        let ensemble = match onehot {
            (1, 0, 0) => MatrixKind::Gaussian,
            (0, 1, 0) => MatrixKind::SparseCol,
            (0, 0, 1) => MatrixKind::SubDct,
            _ => return Err(Error::invalid("exactly one ensemble indicator must be 1")),
        };
        Ok(CsDatasetRow {
            n: us(0)?,
            m: us(1)?,
            s: us(2)?,
            ensemble,
            label: us(6)? as u8,
            delta: fl(7)?,
            rho: fl(8)?,
            success_count: us(9)?,
            trials: us(10)?,
        })
    }
}

/// Labels one (algorithm, ensemble, plane point) cell by running `trials`
/// independent solves on fresh matrix/signal draws; success means the solve
/// exited through the convergence criterion, and the label is the majority
/// vote (success_count >= ceil(trials / 2)).
pub fn label_cell(
    algo: Algo,
    kind: MatrixKind,
    point: PlanePoint,
    trials: usize,
    cfg: &StoppingConfig,
    seed: u64,
) -> Result<CsDatasetRow> {
    if trials < 1 {
        return Err(Error::invalid("need at least one trial"));
    }
    let (m, s) = point.params()?;
    let mut success_count = 0usize;
    for trial in 0..trials as u64 {
        let a = ensembles::gen_ensemble(kind, m, point.n, rng::derive(seed, &[trial, 0]))?;
        let x = ensembles::gen_signal(point.n, s, rng::derive(seed, &[trial, 1]))?;
        let y = a.apply(x.to_dense().view());
        // A failed solve counts as a non-converged trial.
        match greedy::solve(algo, &a, y.view(), s, cfg) {
            Ok(res) if res.status == ExitStatus::Converged => success_count += 1,
            Ok(_) | Err(_) => {}
        }
    }
    let majority = trials.div_ceil(2);
    Ok(CsDatasetRow {
        n: point.n,
        m,
        s,
        ensemble: kind,
        label: (success_count >= majority) as u8,
        delta: point.delta,
        rho: point.rho,
        success_count,
        trials,
    })
}

/// Sweep parameters shared by every cell of one dataset build.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepParams {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub stopping: StoppingConfig,
}

fn cells(grid: &PlaneGrid) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(CS_ENSEMBLES.len() * grid.len());
    for e in 0..CS_ENSEMBLES.len() {
        for p in 0..grid.len() {
            out.push((e, p));
        }
    }
    out
}

fn compute_cell(
    algo: Algo,
    grid: &PlaneGrid,
    params: &SweepParams,
    cell: (usize, usize),
) -> Result<CsDatasetRow> {
    let (e, p) = cell;
    let kind = CS_ENSEMBLES[e];
    let (delta, rho) = grid.points[p];
    let point = PlanePoint { n: params.n, delta, rho };
    label_cell(
        algo,
        kind,
        point,
        params.trials,
        &params.stopping,
        rng::derive(params.seed, &[algo as u64, e as u64, p as u64]),
    )
}

/// Builds the labeled dataset for one algorithm in memory: one row per
/// (ensemble, grid point), in deterministic order regardless of parallelism.
pub fn build_cs_dataset(algo: Algo, grid: &PlaneGrid, params: &SweepParams) -> Result<Vec<CsDatasetRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("grid must be nonempty"));
    }
    cells(grid)
        .par_iter()
        .map(|&cell| compute_cell(algo, grid, params, cell))
        .collect()
}

/// Builds the dataset straight to a CSV file with row-level checkpointing:
/// finished rows append to `<path>.partial` in chunks, a restart skips the
/// rows already present, and the final file is assembled atomically.
pub fn build_cs_dataset_to_file(
    algo: Algo,
    grid: &PlaneGrid,
    params: &SweepParams,
    path: &Path,
) -> Result<Vec<CsDatasetRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("grid must be nonempty"));
    }
    let partial_path = {
        let mut os = path.as_os_str().to_owned();
        os.push(".partial");
        PathBuf::from(os)
    };
    let all = cells(grid);
    let mut rows: Vec<CsDatasetRow> = Vec::with_capacity(all.len());
    if partial_path.exists() {
        let text = std::fs::read_to_string(&partial_path)?;
        for line in text.lines() {
            rows.push(CsDatasetRow::parse_csv_line(line)?);
        }
        if rows.len() > all.len() {
            return Err(Error::invalid(format!(
                "checkpoint {} holds {} rows but the grid only has {} cells",
                partial_path.display(),
                rows.len(),
                all.len()
            )));
        }
    }
    let mut partial = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&partial_path)?;
    const CHUNK: usize = 32;
    let mut done = rows.len();
    while done < all.len() {
        let upto = (done + CHUNK).min(all.len());
        let chunk: Vec<CsDatasetRow> = all[done..upto]
            .par_iter()
            .map(|&cell| compute_cell(algo, grid, params, cell))
            .collect::<Result<Vec<_>>>()?;
        for row in &chunk {
            writeln!(partial, "{}", row.csv_line())?;
        }
        partial.flush()?;
        rows.extend(chunk);
        done = upto;
    }
    drop(partial);
    write_cs_dataset(&rows, path)?;
    std::fs::remove_file(&partial_path)?;
    Ok(rows)
}

/// Writes rows (with header) atomically.
pub fn write_cs_dataset(rows: &[CsDatasetRow], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 48);
    out.push_str(CS_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a dataset CSV written by [`write_cs_dataset`].
pub fn read_cs_dataset(path: &Path) -> Result<Vec<CsDatasetRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CS_CSV_HEADER => {}
        _ => return Err(Error::invalid("missing or unexpected dataset header")),
    }
    lines.map(CsDatasetRow::parse_csv_line).collect()
}

/// Classifier features: (n, m, s, three ensemble indicators).
pub fn rows_to_mlp_dataset(rows: &[CsDatasetRow]) -> Result<mlp::Dataset> {
    let features = Array2::from_shape_fn((rows.len(), 6), |(i, j)| {
        let row = &rows[i];
        let [g, sp, dc] = row.onehot();
        match j {
            0 => row.n as f64,
            1 => row.m as f64,
            2 => row.s as f64,
            3 => g as f64,
            4 => sp as f64,
            _ => dc as f64,
        }
    });
    let labels = rows.iter().map(|r| r.label as f64).collect();
    mlp::Dataset::new(features, labels)
}

/// The (delta, rho)-success classifier: 6 -> 3 -> 9 -> 1 with standardized
/// inputs. Returns the trained model and its held-out accuracy.
pub fn train_cs_classifier(
    rows: &[CsDatasetRow],
    cfg: &TrainConfig,
) -> Result<(MlpModel, f64)> {
    let data = rows_to_mlp_dataset(rows)?;
    if !data.has_both_classes() {
        return Err(Error::SingleClass);
    }
    let (train, holdout) = data.split(cfg.train_fraction, rng::derive(cfg.seed, &[11]))?;
    if !train.has_both_classes() {
        return Err(Error::SingleClass);
    }
    let init = mlp::mlp_init(&[6, 3, 9, 1], rng::derive(cfg.seed, &[12]))?;
    let (model, _history) = mlp::train(&init, &train, cfg)?;
    let accuracy = mlp::evaluate(&model, &holdout)?;
    Ok((model, accuracy))
}

/// One predicted plane point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlanePrediction {
    pub delta: f64,
    pub rho: f64,
    pub probability: f64,
    pub label: u8,
}

/// Evaluates a trained success classifier over a grid for one ensemble at
/// signal dimension n. Grid points whose (m, s) mapping is invalid are
/// skipped.
pub fn predict_plane(
    model: &MlpModel,
    grid: &PlaneGrid,
    kind: MatrixKind,
    n: usize,
) -> Result<Vec<PlanePrediction>> {
    if model.input_dim() != 6 {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} features, plane classifier uses 6",
            model.input_dim()
        )));
    }
    let onehot = match kind {
        MatrixKind::Gaussian => [1.0, 0.0, 0.0],
        MatrixKind::SparseCol => [0.0, 1.0, 0.0],
        MatrixKind::SubDct => [0.0, 0.0, 1.0],
        other => return Err(Error::invalid(format!("{other:?} is not a phase-sweep ensemble"))),
    };
    let mut out = Vec::with_capacity(grid.len());
    for &(delta, rho) in &grid.points {
        let point = PlanePoint { n, delta, rho };
        let (m, s) = match point.params() {
            Ok(p) => p,
            Err(_) => continue,
        };
        let feats = ndarray::arr1(&[
            n as f64, m as f64, s as f64, onehot[0], onehot[1], onehot[2],
        ]);
        let probability = model.forward(feats.view())?;
        out.push(PlanePrediction { delta, rho, probability, label: (probability >= 0.5) as u8 });
    }
    Ok(out)
}

/// Writes plane predictions as CSV.
pub fn write_plane_predictions(preds: &[PlanePrediction], path: &Path) -> Result<()> {
    let mut out = String::from("delta,rho,probability,label\n");
    for p in preds {
        out.push_str(&format!("{},{},{},{}\n", p.delta, p.rho, p.probability, p.label));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Fraction of delta columns whose labels are non-increasing in rho, for one
/// ensemble. The success region sits under the phase boundary, so clean
/// sweeps produce monotone columns.
pub fn monotone_column_fraction(rows: &[CsDatasetRow], kind: MatrixKind) -> f64 {
    let mut columns: std::collections::BTreeMap<u64, Vec<(f64, u8)>> = Default::default();
    for row in rows.iter().filter(|r| r.ensemble == kind) {
        columns.entry(row.delta.to_bits()).or_default().push((row.rho, row.label));
    }
    if columns.is_empty() {
        return 0.0;
    }
    let mut monotone = 0usize;
    let total = columns.len();
    for (_, mut col) in columns {
        col.sort_by(|a, b| a.0.total_cmp(&b.0));
        if col.windows(2).all(|w| w[0].1 >= w[1].1) {
            monotone += 1;
        }
    }
    monotone as f64 / total as f64
}
