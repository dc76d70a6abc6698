use optlab::ensembles::{self, MatrixKind, PlanePoint};
use optlab::greedy::{self, Algo, StoppingConfig};
use optlab::phase_lab;
use std::time::Instant;

fn main() {
    optlab::blas::set_blas_threads(1);
    let cfg = StoppingConfig::default();
    let n = 1024;
    for (algo, kind, delta, rho) in [
        (Algo::Htp, MatrixKind::Gaussian, 0.95, 16.0 / 17.0),
        (Algo::Htp, MatrixKind::Gaussian, 0.95, 0.5),
        (Algo::Htp, MatrixKind::Gaussian, 0.5, 0.7),
        (Algo::Csmpsp, MatrixKind::Gaussian, 0.95, 16.0 / 17.0),
        (Algo::Csmpsp, MatrixKind::Gaussian, 0.95, 0.5),
        (Algo::Niht, MatrixKind::Gaussian, 0.95, 16.0 / 17.0),
        (Algo::Niht, MatrixKind::SparseCol, 0.95, 16.0 / 17.0),
        (Algo::Niht, MatrixKind::SubDct, 0.95, 16.0 / 17.0),
        (Algo::Htp, MatrixKind::SubDct, 0.95, 16.0 / 17.0),
    ] {
        let point = PlanePoint { n, delta, rho };
        let (m, s) = point.params().unwrap();
        let t = Instant::now();
        let a = ensembles::gen_ensemble(kind, m, n, 1).unwrap();
        let x = ensembles::gen_signal(n, s, 2).unwrap();
        let y = a.apply(x.to_dense().view());
        let res = greedy::solve(algo, &a, y.view(), s, &cfg).unwrap();
        println!(
            "{:?} {:?} d={delta:.2} r={rho:.2} m={m} s={s}: {:?} iters={} in {:.2?}",
            algo, kind, res.status, res.iterations, t.elapsed()
        );
    }
    // One full cell (20 trials) at the very worst corner:
    let t = Instant::now();
    let row = phase_lab::label_cell(
        Algo::Htp,
        MatrixKind::Gaussian,
        PlanePoint { n, delta: 0.95, rho: 16.0 / 17.0 },
        20,
        &cfg,
        99,
    )
    .unwrap();
    println!("worst HTP cell: label={} successes={} in {:.2?}", row.label, row.success_count, t.elapsed());
}
