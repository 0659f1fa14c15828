//! PCA compression of a party's local features.
//!
//! A plan holds `W` (k x n) whose rows are the top-k eigenvectors of the
//! uncentered Gram matrix `X^T X`. Parameters and data are compressed as
//! `theta_c = theta W^T` and `Z = X W^T`, so the encrypted gradient costs
//! `m * k` multiplications instead of `m * n`. A decrypted compressed
//! gradient maps back with `g = g_c W`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{DataError, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CompressionPlan {
    w: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

/// Target dimension for a compression ratio: `round(ratio * n)`, at least 1.
pub fn k_for_ratio(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Fits the top-`k` principal directions of `x` (uncentered).
///
/// Directions are ordered by decreasing eigenvalue, ties in index order, and
/// each row is sign-fixed so its largest-magnitude entry is positive.
pub fn fit_pca(x: &DMatrix<f64>, k: usize) -> Result<CompressionPlan> {
    let (m, n) = x.shape();
    if k == 0 || k > m.min(n) {
        return Err(Error::Config(format!(
            "compressed dimension {k} must be in 1..={}",
            m.min(n)
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pca input"));
    }
    let gram = x.transpose() * x;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut w = DMatrix::zeros(k, n);
    let mut eigenvalues = Vec::with_capacity(k);
    for (row, &idx) in order.iter().take(k).enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        w.row_mut(row).copy_from(&v.transpose());
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(CompressionPlan { w, eigenvalues })
}

impl CompressionPlan {
    /// Builds a plan from an explicit `W`; rows must be orthonormal.
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        let k = w.nrows();
        if k == 0 || k > w.ncols() {
            return Err(Error::Shape(format!("W is {}x{}", k, w.ncols())));
        }
        let err = (&w * w.transpose() - DMatrix::identity(k, k)).abs().max();
        if err > 1e-8 {
            return Err(Error::Config(format!("rows of W are not orthonormal (error {err:e})")));
        }
        Ok(CompressionPlan {
            w,
            eigenvalues: vec![f64::NAN; k],
        })
    }

    pub fn k(&self) -> usize {
        self.w.nrows()
    }

    pub fn n(&self) -> usize {
        self.w.ncols()
    }

    pub fn ratio(&self) -> f64 {
        self.k() as f64 / self.n() as f64
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Eigenvalues of `X^T X` for the kept directions, non-increasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `theta W^T`.
    pub fn compress_theta(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_n(theta.len())?;
        Ok((&self.w * DVector::from_column_slice(theta)).as_slice().to_vec())
    }

    /// `X W^T`: row `i` is `W x_i`.
    pub fn compress_data(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_n(x.ncols())?;
        Ok(x * self.w.transpose())
    }

    /// `g_c W`.
    pub fn decompress_gradient(&self, g_c: &[f64]) -> Result<Vec<f64>> {
        if g_c.len() != self.k() {
            return Err(Error::Shape(format!(
                "compressed gradient has {} entries, plan has k = {}",
                g_c.len(),
                self.k()
            )));
        }
        Ok((self.w.transpose() * DVector::from_column_slice(g_c))
            .as_slice()
            .to_vec())
    }

    fn check_n(&self, n: usize) -> Result<()> {
        if n != self.n() {
            return Err(Error::Shape(format!(
                "input has {n} features, plan expects {}",
                self.n()
            )));
        }
        Ok(())
    }

    /// Writes `W` as CSV, one row per principal direction.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| DataError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for row in self.w.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(f, "{}", line.join(",")).map_err(io)?;
        }
        f.flush().map_err(io)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| DataError::Parse {
                path: path.display().to_string(),
                line: 0,
                message: e.to_string(),
            })?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let parse_err = |message: String| DataError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message,
            };
            let rec = rec.map_err(|e| parse_err(e.to_string()))?;
            let row = rec
                .iter()
                .map(|c| c.trim().parse::<f64>().map_err(|e| parse_err(e.to_string())))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        let k = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let w = DMatrix::from_row_iterator(k, n, rows.into_iter().flatten());
        Self::from_matrix(w)
    }
}

/// Per-party plan refreshed every iteration. The local data is static within a
/// run, so refitting is skipped while its fingerprint is unchanged.
#[derive(Clone, Debug)]
pub struct CompressionHook {
    k: usize,
    plan: Option<CompressionPlan>,
    compressed: Option<DMatrix<f64>>,
    fingerprint: Option<(usize, usize, u64)>,
    fits: u32,
}

fn fingerprint(x: &DMatrix<f64>) -> (usize, usize, u64) {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in x.iter() {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    (x.nrows(), x.ncols(), h)
}

impl CompressionHook {
    pub fn new(k: usize) -> Self {
        CompressionHook {
            k,
            plan: None,
            compressed: None,
            fingerprint: None,
            fits: 0,
        }
    }

    /// Returns the plan and compressed data for `x`, refitting only if `x`
    /// differs from the data of the previous call.
    pub fn refresh(&mut self, x: &DMatrix<f64>) -> Result<(&CompressionPlan, &DMatrix<f64>)> {
        let fp = fingerprint(x);
        if self.fingerprint != Some(fp) {
            let plan = fit_pca(x, self.k)?;
            self.compressed = Some(plan.compress_data(x)?);
            self.plan = Some(plan);
            self.fingerprint = Some(fp);
            self.fits += 1;
        }
        Ok((
            self.plan.as_ref().expect("fitted"),
            self.compressed.as_ref().expect("fitted"),
        ))
    }

    pub fn plan(&self) -> Option<&CompressionPlan> {
        self.plan.as_ref()
    }

    /// Number of actual eigendecompositions performed.
    pub fn fits(&self) -> u32 {
        self.fits
    }
}
