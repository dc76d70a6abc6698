//! Computerized-tomography measurement matrices and image ingestion.
//!
//! A tomography matrix row is one random ray through an N x N grid of unit
//! pixels covering the square [0, N] x [0, N]; the entries are the lengths of
//! the ray's intersection with each pixel, so a matrix-vector product is the
//! set of line integrals of a pixel image along the sampled rays.
//!
//! Images come from MNIST-format IDX files when available; the crate also
//! bundles the classic 8x8 handwritten-digit test set (1797 images) upscaled
//! to 28x28 as a self-contained stand-in with the same ingestion path.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::ensembles::{MatrixKind, MeasurementMatrix};
use crate::error::{Error, Result};
use crate::rng;

/// A tomography matrix: round(f * N^2) rays over an N x N pixel grid.
#[derive(Debug)]
pub struct TomoMatrix {
    /// Pixels along one edge of the square image (N).
    pub grid_size: usize,
    /// Oversampling factor f; the matrix has round(f * N^2) rows.
    pub oversample: f64,
    pub matrix: MeasurementMatrix,
}

/// Intersection lengths of the ray `origin + t * dir` with every unit pixel
/// of the [0, N]^2 grid. Pixels are indexed row-major with row 0 at the top
/// (y = N) to match image flattening.
pub fn ray_pixel_lengths(n: usize, origin: (f64, f64), dir: (f64, f64)) -> Vec<(usize, f64)> {
    let nf = n as f64;
    let (ox, oy) = origin;
    let speed = (dir.0 * dir.0 + dir.1 * dir.1).sqrt();
    if speed == 0.0 {
        return Vec::new();
    }
    let (dx, dy) = (dir.0 / speed, dir.1 / speed);

    // Parameter window [t0, t1] where the ray is inside the square.
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (o, d) in [(ox, dx), (oy, dy)] {
        if d.abs() < 1e-15 {
            if o < 0.0 || o > nf {
                return Vec::new();
            }
        } else {
            let (a, b) = ((0.0 - o) / d, (nf - o) / d);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    if t1 <= t0 {
        return Vec::new();
    }

    // Crossing times of interior grid lines, then walk the segments.
    let mut ts = vec![t0, t1];
    for (o, d) in [(ox, dx), (oy, dy)] {
        if d.abs() >= 1e-15 {
            for k in 1..n {
                let t = (k as f64 - o) / d;
                if t > t0 && t < t1 {
                    ts.push(t);
                }
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(ts.len());
    for pair in ts.windows(2) {
        let len = pair[1] - pair[0];
        if len <= 1e-15 {
            continue;
        }
        let tm = 0.5 * (pair[0] + pair[1]);
        let x = ox + tm * dx;
        let y = oy + tm * dy;
        let col = (x.floor() as isize).clamp(0, n as isize - 1) as usize;
        let row_from_bottom = (y.floor() as isize).clamp(0, n as isize - 1) as usize;
        let row = n - 1 - row_from_bottom;
        out.push((row * n + col, len));
    }
    out
}

/// Generates a tomography matrix with round(f * N^2) random rays: a uniform
/// entry point on the boundary and a uniform direction over the inward-facing
/// half-circle. Rays that miss the grid or have a degenerate chord are
/// redrawn.
pub fn gen_tomo(n: usize, f: f64, seed: u64) -> Result<TomoMatrix> {
    if n < 2 {
        return Err(Error::invalid("tomography grid needs N >= 2"));
    }
    if !(f > 0.0) {
        return Err(Error::invalid("oversampling factor must be positive"));
    }
    let rows = (f * (n * n) as f64).round() as usize;
    if rows == 0 {
        return Err(Error::invalid("f * N^2 rounds to zero rows"));
    }
    let nf = n as f64;
    let mut a = Array2::zeros((rows, n * n));
    let mut r = rng::stream(seed);
    for i in 0..rows {
        loop {
            // Entry point by perimeter position, then an inward direction.
            let u: f64 = r.gen_range(0.0..4.0 * nf);
            let side = ((u / nf) as usize).min(3);
            let offset = u - side as f64 * nf;
            let (origin, normal_angle) = match side {
                0 => ((offset, 0.0), std::f64::consts::FRAC_PI_2), // bottom, inward = up
                1 => ((nf, offset), std::f64::consts::PI),         // right, inward = left
                2 => ((offset, nf), -std::f64::consts::FRAC_PI_2), // top, inward = down
                _ => ((0.0, offset), 0.0),                         // left, inward = right
            };
            let phi: f64 =
                r.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
            let angle = normal_angle + phi;
            let segments = ray_pixel_lengths(n, origin, (angle.cos(), angle.sin()));
            let chord: f64 = segments.iter().map(|(_, l)| l).sum();
            if segments.is_empty() || chord < 1e-9 {
                continue;
            }
            for (j, len) in segments {
                a[(i, j)] = len;
            }
            break;
        }
    }
    Ok(TomoMatrix {
        grid_size: n,
        oversample: f,
        matrix: MeasurementMatrix::from_dense_with(a, MatrixKind::Tomo, seed),
    })
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

/// Parses an IDX image file (the MNIST container format): big-endian magic
/// 0x00000803, image count, rows, cols, then one unsigned byte per pixel.
/// Pixels are scaled to [0, 1].
pub fn load_idx_images(path: &std::path::Path) -> Result<Vec<Array2<f64>>> {
    let bytes = std::fs::read(path)?;
    parse_idx_images(&bytes)
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Parse { offset, message: "truncated header".into() })
}

/// Parses IDX image bytes; see [`load_idx_images`].
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Array2<f64>>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!(
                "payload truncated: file has {} bytes, header implies {expected}",
                bytes.len()
            ),
        });
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * rows * cols;
        let img = Array2::from_shape_fn((rows, cols), |(r, c)| {
            bytes[start + r * cols + c] as f64 / 255.0
        });
        images.push(img);
    }
    Ok(images)
}

/// Writes images (values in [0, 1], rounded to bytes) as an IDX file.
pub fn write_idx_images(path: &std::path::Path, images: &[Array2<f64>]) -> Result<()> {
    let (rows, cols) = images.first().map(|i| i.dim()).unwrap_or((0, 0));
    if images.iter().any(|i| i.dim() != (rows, cols)) {
        return Err(Error::invalid("all images must share one shape"));
    }
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        for v in img.iter() {
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Bilinear resize with pixel-center alignment. Constant images stay
/// constant, same-size resize is the identity, and an aligned 2x downsample
/// equals 2x2 block means.
pub fn resize_bilinear(src: ArrayView2<f64>, out_rows: usize, out_cols: usize) -> Array2<f64> {
    let (sr, sc) = src.dim();
    assert!(sr > 0 && sc > 0 && out_rows > 0 && out_cols > 0);
    let scale_r = sr as f64 / out_rows as f64;
    let scale_c = sc as f64 / out_cols as f64;
    Array2::from_shape_fn((out_rows, out_cols), |(i, j)| {
        let y = ((i as f64 + 0.5) * scale_r - 0.5).clamp(0.0, (sr - 1) as f64);
        let x = ((j as f64 + 0.5) * scale_c - 0.5).clamp(0.0, (sc - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(sr - 1), (x0 + 1).min(sc - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        src[(y0, x0)] * (1.0 - fy) * (1.0 - fx)
            + src[(y0, x1)] * (1.0 - fy) * fx
            + src[(y1, x0)] * fy * (1.0 - fx)
            + src[(y1, x1)] * fy * fx
    })
}

/// Downsamples a square image to the tomography grid size and flattens it
/// row-major into the pixel basis used by [`gen_tomo`].
pub fn resize_to_grid(img: ArrayView2<f64>, n: usize) -> Array1<f64> {
    let resized = resize_bilinear(img, n, n);
    Array1::from_iter(resized.iter().copied())
}

/// The bundled handwritten-digit images (the classic 8x8 test set, 1797
/// images), upscaled to MNIST's 28x28 shape with values in [0, 1]. Used as a
/// deterministic fallback when no MNIST IDX file is configured.
pub fn bundled_digit_images() -> Vec<Array2<f64>> {
    static RAW: &[u8] = include_bytes!("../data/digits8x8.bin");
    const SIDE: usize = 8;
    RAW.chunks_exact(SIDE * SIDE)
        .map(|chunk| {
            let img =
                Array2::from_shape_fn((SIDE, SIDE), |(r, c)| chunk[r * SIDE + c] as f64 / 255.0);
            resize_bilinear(img.view(), 28, 28)
        })
        .collect()
}
