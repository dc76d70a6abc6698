//! Binary and CSV export of measurement matrices.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::ensembles::{MatrixKind, MeasurementMatrix};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"OPTM";
const FORMAT_VERSION: u8 = 1;

fn kind_tag(kind: MatrixKind) -> u8 {
    match kind {
        MatrixKind::Gaussian => 0,
        MatrixKind::SparseCol => 1,
        MatrixKind::SubDct => 2,
        MatrixKind::Tomo => 3,
        MatrixKind::ExplicitDense => 4,
    }
}

fn kind_from_tag(tag: u8) -> Result<MatrixKind> {
    Ok(match tag {
        0 => MatrixKind::Gaussian,
        1 => MatrixKind::SparseCol,
        2 => MatrixKind::SubDct,
        3 => MatrixKind::Tomo,
        4 => MatrixKind::ExplicitDense,
        other => {
            return Err(Error::Parse { offset: 5, message: format!("unknown kind tag {other}") })
        }
    })
}

/// Writes the matrix in the crate's binary format: a fixed header
/// (magic, version, kind, m, n, seed) followed by a kind-specific payload
/// (dense row-major f64, per-column sparse indices/values, or DCT row
/// indices). All integers and floats are little-endian.
pub fn write_matrix(a: &MeasurementMatrix, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.push(kind_tag(a.kind()));
    out.extend_from_slice(&(a.m() as u64).to_le_bytes());
    out.extend_from_slice(&(a.n() as u64).to_le_bytes());
    out.extend_from_slice(&a.seed().to_le_bytes());
    if let Some((p, rows, vals)) = a.sparse_structure() {
        out.extend_from_slice(&(p as u64).to_le_bytes());
        for r in rows {
            out.extend_from_slice(&r.to_le_bytes());
        }
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    } else if let Some(rows) = a.subdct_rows() {
        for r in rows {
            out.extend_from_slice(&r.to_le_bytes());
        }
    } else {
        let dense = a.dense_data().expect("dense kinds carry dense storage");
        for v in dense.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.data.len() {
            return Err(Error::Parse {
                offset: self.pos,
                message: format!("truncated: wanted {len} bytes"),
            });
        }
        let out = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<MeasurementMatrix> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { data: &bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(Error::Parse { offset: 0, message: "bad magic".into() });
    }
    let version = cur.u8()?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported format version {version}"),
        });
    }
    let kind = kind_from_tag(cur.u8()?)?;
    let m = cur.u64()? as usize;
    let n = cur.u64()? as usize;
    let seed = cur.u64()?;
    match kind {
        MatrixKind::SparseCol => {
            let p = cur.u64()? as usize;
            let mut rows = Vec::with_capacity(n * p);
            for _ in 0..n * p {
                rows.push(cur.u32()?);
            }
            let mut vals = Vec::with_capacity(n * p);
            for _ in 0..n * p {
                vals.push(cur.f64()?);
            }
            Ok(MeasurementMatrix::from_parts(
                kind,
                m,
                n,
                seed,
                crate::ensembles::Storage::SparseCols { p, rows, vals },
            ))
        }
        MatrixKind::SubDct => {
            let mut rows = Vec::with_capacity(m);
            for _ in 0..m {
                rows.push(cur.u32()?);
            }
            Ok(MeasurementMatrix::from_parts(
                kind,
                m,
                n,
                seed,
                crate::ensembles::Storage::SubDct { rows },
            ))
        }
        _ => {
            let mut data = Vec::with_capacity(m * n);
            for _ in 0..m * n {
                data.push(cur.f64()?);
            }
            let a = Array2::from_shape_vec((m, n), data)
                .map_err(|e| Error::Parse { offset: cur.pos, message: e.to_string() })?;
            Ok(MeasurementMatrix::from_dense_with(a, kind, seed))
        }
    }
}

/// Densifies the matrix into a debugging CSV (one row per line).
pub fn write_matrix_csv(a: &MeasurementMatrix, path: &Path) -> Result<()> {
    let dense = a.to_dense();
    let mut out = String::new();
    for i in 0..a.m() {
        let row: Vec<String> = (0..a.n()).map(|j| format!("{}", dense[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
