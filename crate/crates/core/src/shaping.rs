//! Quadratic shape polynomials `p(z) = zᵀAz` from raw (uncentered) PCA of
//! fault-on trajectory data.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{Monomial, Polynomial};

pub const DEFAULT_FLOOR_RATIO: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum ShapeError {
    #[error("at least two samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("all eigenvalues are zero")]
    ZeroSpectrum,
    #[error("shape matrix is not symmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },
    #[error("shape matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("shape matrix must be square and non-empty")]
    BadShape,
    #[error("shape file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Sphere,
    PcaSqrt,
    PcaLinear,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaMode {
    /// Axis weights `1/√λ`.
    Sqrt,
    /// Axis weights `1/λ`.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenSpectrum {
    /// Descending, non-negative.
    pub values: Vec<f64>,
    /// Orthonormal columns matching `values`.
    pub vectors: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidShape {
    pub a: DMatrix<f64>,
    pub provenance: Provenance,
}

impl EllipsoidShape {
    pub fn new(a: DMatrix<f64>, provenance: Provenance) -> Result<Self, ShapeError> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(ShapeError::BadShape);
        }
        for i in 0..n {
            for j in i + 1..n {
                if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 {
                    return Err(ShapeError::Asymmetric { row: i + 1, col: j + 1 });
                }
            }
        }
        let sym = (&a + a.transpose()) * 0.5;
        if sym.clone().cholesky().is_none() {
            return Err(ShapeError::NotPositiveDefinite);
        }
        Ok(EllipsoidShape { a: sym, provenance })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn condition_number(&self) -> f64 {
        let ev = self.a.clone().symmetric_eigenvalues();
        ev.max() / ev.min()
    }

    pub fn from_json(s: &str) -> Result<Self, ShapeError> {
        #[derive(Deserialize)]
        struct File {
            #[serde(rename = "A")]
            a: Vec<Vec<f64>>,
        }
        let f: File = serde_json::from_str(s).map_err(|e| ShapeError::Parse(e.to_string()))?;
        let n = f.a.len();
        if n == 0 || f.a.iter().any(|r| r.len() != n) {
            return Err(ShapeError::BadShape);
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| f.a[i][j]), Provenance::File)
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Vec<f64>> = self.a.row_iter().map(|r| r.iter().copied().collect()).collect();
        serde_json::json!({ "A": rows }).to_string()
    }
}

/// Eigendecomposition of the uncentered second moment `(1/m) Σ zzᵀ`.
pub fn pca_raw(samples: &[DVector<f64>]) -> Result<EigenSpectrum, ShapeError> {
    if samples.len() < 2 {
        return Err(ShapeError::TooFewSamples(samples.len()));
    }
    let n = samples[0].len();
    let mut s = DMatrix::zeros(n, n);
    for (index, z) in samples.iter().enumerate() {
        if z.len() != n {
            return Err(ShapeError::DimensionMismatch { index, expected: n, got: z.len() });
        }
        s.ger(1.0, z, z, 1.0);
    }
    s /= samples.len() as f64;
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            v = -v;
        }
        vectors.set_column(c, &v);
    }
    Ok(EigenSpectrum { values, vectors })
}

/// `A = E diag(w) Eᵀ` with `w = λ^{-1/2}` or `λ^{-1}` after flooring at
/// `floor_ratio·λ₁`.
pub fn assemble_shape_matrix(spec: &EigenSpectrum, mode: PcaMode, floor_ratio: f64) -> Result<EllipsoidShape, ShapeError> {
    let l1 = spec.values.first().copied().unwrap_or(0.0);
    if !(l1 > 0.0) {
        return Err(ShapeError::ZeroSpectrum);
    }
    let floor = floor_ratio * l1;
    let w = DVector::from_iterator(
        spec.values.len(),
        spec.values.iter().map(|&l| {
            let l = l.max(floor);
            match mode {
                PcaMode::Sqrt => 1.0 / l.sqrt(),
                PcaMode::Linear => 1.0 / l,
            }
        }),
    );
    let e = &spec.vectors;
    let a = e * DMatrix::from_diagonal(&w) * e.transpose();
    let provenance = match mode {
        PcaMode::Sqrt => Provenance::PcaSqrt,
        PcaMode::Linear => Provenance::PcaLinear,
    };
    EllipsoidShape::new((&a + a.transpose()) * 0.5, provenance)
}

pub fn sphere_shape(n: usize) -> EllipsoidShape {
    EllipsoidShape { a: DMatrix::identity(n, n), provenance: Provenance::Sphere }
}

pub fn shape_to_polynomial(s: &EllipsoidShape) -> Polynomial {
    let n = s.dim();
    let mut p = Polynomial::zero(n);
    for i in 0..n {
        for j in i..n {
            let mut e = vec![0u32; n];
            e[i] += 1;
            e[j] += 1;
            let c = if i == j { s.a[(i, i)] } else { 2.0 * s.a[(i, j)] };
            p.add_term(Monomial::new(e), c);
        }
    }
    p
}
