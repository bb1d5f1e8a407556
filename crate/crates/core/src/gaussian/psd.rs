use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numeric::Compensated;

/// Relative asymmetry accepted on construction.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues in `[-CLAMP_TOL·λ_max, 0)` are treated as exact zeros.
pub const CLAMP_TOL: f64 = 1e-10;

/// Symmetric positive semi-definite matrix with a cached eigendecomposition.
///
/// Eigenvalues are stored in descending order with small negative values
/// clamped to zero. Each eigenvector is signed so that its first entry of
/// non-negligible magnitude is positive.
#[derive(Debug, Clone)]
pub struct PsdMatrix {
    entries: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    raw_min_eigenvalue: f64,
    sqrt: OnceLock<DMatrix<f64>>,
}

impl PsdMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let d = entries.nrows();
        if d == 0 || entries.ncols() != d {
            return Err(Error::invalid(
                "matrix",
                format!("need a nonempty square matrix, got {}x{}", d, entries.ncols()),
            ));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("matrix", "non-finite entry"));
        }
        let scale = entries.amax();
        let mut asym = 0.0f64;
        for i in 0..d {
            for j in 0..i {
                asym = asym.max((entries[(i, j)] - entries[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::invalid(
                "matrix",
                format!("asymmetry {asym:e} exceeds {SYMMETRY_TOL:e} relative"),
            ));
        }
        let entries = (&entries + entries.transpose()) * 0.5;

        let eig = SymmetricEigen::new(entries.clone());
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut values = DVector::from_iterator(d, order.iter().map(|&k| eig.eigenvalues[k]));
        let mut vectors = DMatrix::zeros(d, d);
        for (col, &k) in order.iter().enumerate() {
            vectors.set_column(col, &eig.eigenvectors.column(k));
        }
        canonical_signs(&mut vectors);

        let lambda_max = values[0];
        let raw_min = values[d - 1];
        let tolerance = CLAMP_TOL * lambda_max.max(0.0);
        if raw_min < -tolerance {
            return Err(Error::NotPsd {
                eigenvalue: raw_min,
                tolerance: -tolerance,
            });
        }
        values.iter_mut().for_each(|v| *v = v.max(0.0));

        Ok(Self {
            entries,
            eigenvalues: values,
            eigenvectors: vectors,
            raw_min_eigenvalue: raw_min,
            sqrt: OnceLock::new(),
        })
    }

    pub fn from_row_slice(d: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != d * d {
            return Err(Error::invalid("matrix", "entry count is not d*d"));
        }
        Self::new(DMatrix::from_row_slice(d, d, rows))
    }

    pub fn identity(d: usize) -> Self {
        Self::diagonal(&vec![1.0; d])
    }

    pub fn zeros(d: usize) -> Self {
        Self::diagonal(&vec![0.0; d])
    }

    /// Diagonal matrix; entries must be nonnegative.
    pub fn diagonal(diag: &[f64]) -> Self {
        assert!(
            diag.iter().all(|v| *v >= 0.0 && v.is_finite()),
            "diagonal entries must be finite and nonnegative"
        );
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
            .expect("nonnegative diagonal is PSD")
    }

    /// Builds from a known eigendecomposition (values descending, nonnegative).
    fn from_eigen(values: DVector<f64>, vectors: DMatrix<f64>) -> Self {
        let entries = &vectors * DMatrix::from_diagonal(&values) * vectors.transpose();
        let entries = (&entries + entries.transpose()) * 0.5;
        let raw_min = values[values.len() - 1];
        Self {
            entries,
            eigenvalues: values,
            eigenvectors: vectors,
            raw_min_eigenvalue: raw_min,
            sqrt: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// Descending, clamped eigenvalues.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors as columns, matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    /// Smallest eigenvalue before clamping.
    pub fn raw_min_eigenvalue(&self) -> f64 {
        self.raw_min_eigenvalue
    }

    /// ‖M‖₂, the largest eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        self.max_eigenvalue()
    }

    pub fn max_diagonal(&self) -> f64 {
        self.entries.diagonal().max()
    }

    pub fn min_diagonal(&self) -> f64 {
        self.entries.diagonal().min()
    }

    /// Number of eigenvalues above `rel_tol · λ_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let cut = rel_tol * self.max_eigenvalue();
        self.eigenvalues.iter().filter(|v| **v > cut).count()
    }

    /// The unique PSD square root, sharing this matrix's eigenvectors.
    pub fn sqrt(&self) -> PsdMatrix {
        PsdMatrix::from_eigen(self.eigenvalues.map(f64::sqrt), self.eigenvectors.clone())
    }

    /// Entries of the PSD square root, computed once.
    pub fn sqrt_matrix(&self) -> &DMatrix<f64> {
        self.sqrt.get_or_init(|| {
            let q = &self.eigenvectors;
            let s = q * DMatrix::from_diagonal(&self.eigenvalues.map(f64::sqrt)) * q.transpose();
            (&s + s.transpose()) * 0.5
        })
    }

    pub fn scaled(&self, c: f64) -> PsdMatrix {
        assert!(c >= 0.0 && c.is_finite(), "scale must be finite and nonnegative");
        PsdMatrix::from_eigen(self.eigenvalues.map(|v| v * c), self.eigenvectors.clone())
    }

    /// `M + c·I` for `c ≥ 0`.
    pub fn shifted(&self, c: f64) -> PsdMatrix {
        assert!(c >= 0.0 && c.is_finite(), "shift must be finite and nonnegative");
        PsdMatrix::from_eigen(self.eigenvalues.map(|v| v + c), self.eigenvectors.clone())
    }

    /// `vᵀMv / vᵀv` accumulated in double-double arithmetic. An upper bound
    /// on the smallest eigenvalue for any nonzero `v`.
    pub fn rayleigh_quotient(&self, v: &DVector<f64>) -> f64 {
        let d = self.dim();
        let mut num = Compensated::default();
        let mut den = Compensated::default();
        for i in 0..d {
            den.add_product(v[i], v[i]);
            for j in 0..d {
                num.add_product(v[i] * v[j], self.entries[(i, j)]);
            }
        }
        num.value() / den.value()
    }
}

impl PartialEq for PsdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

fn canonical_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let scale = col.amax();
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-12 * scale).copied() {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// ‖A‖₂ of a symmetric (not necessarily PSD) matrix.
pub fn symmetric_spectral_norm(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.amax()
}

/// `‖A − B‖_F / ‖B‖_F`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    if denom == 0.0 {
        (a - b).norm()
    } else {
        (a - b).norm() / denom
    }
}
