//! Small dense factorizations that nalgebra does not provide in the form
//! needed here: Householder QR with column-norm pivoting that keeps the
//! reflectors, and pivoted Cholesky for rank detection.

use nalgebra::{DMatrix, DVector};

/// `A Π = Q [R11 R12; 0 0]`, with `Q` kept as a product of reflectors.
pub(crate) struct PivotedQr {
    nrows: usize,
    /// Reflector `k` acts on rows `k..`; `vs[k][0] == 1`.
    vs: Vec<DVector<f64>>,
    taus: Vec<f64>,
    /// Leading `rank` rows of the triangular factor, columns in pivot order.
    pub r: DMatrix<f64>,
    /// `perm[k]` is the original column placed at position `k`.
    pub perm: Vec<usize>,
    pub rank: usize,
}

impl PivotedQr {
    pub fn new(a: &DMatrix<f64>, rel_tol: f64) -> Self {
        let (m, n) = a.shape();
        let mut a = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut vs = Vec::new();
        let mut taus = Vec::new();
        let col_norm = |a: &DMatrix<f64>, j: usize, from: usize| a.view_range(from.., j..j + 1).norm_squared();
        let mut norms: Vec<f64> = (0..n).map(|j| col_norm(&a, j, 0)).collect();
        let largest = norms.iter().cloned().fold(0.0, f64::max).sqrt();
        let mut rank = 0;
        for k in 0..m.min(n) {
            let (piv, best) = norms
                .iter()
                .enumerate()
                .skip(k)
                .fold((k, -1.0), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            if best.sqrt() <= rel_tol * largest || best <= 0.0 {
                break;
            }
            a.swap_columns(k, piv);
            perm.swap(k, piv);
            norms.swap(k, piv);

            let x = a.view_range(k.., k..k + 1).clone_owned();
            let xnorm = x.norm();
            let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
            let mut v = x.column(0).clone_owned();
            v[0] -= alpha;
            let v0 = v[0];
            v /= v0;
            let tau = 2.0 / v.norm_squared();
            {
                let mut sub = a.view_range_mut(k.., k..);
                let w = sub.tr_mul(&v);
                sub.ger(-tau, &v, &w, 1.0);
            }
            a[(k, k)] = alpha;
            for i in k + 1..m {
                a[(i, k)] = 0.0;
            }
            vs.push(v);
            taus.push(tau);
            rank = k + 1;
            for j in k + 1..n {
                norms[j] = col_norm(&a, j, k + 1);
            }
        }
        let r = a.view_range(0..rank, 0..n).clone_owned();
        PivotedQr { nrows: m, vs, taus, r, perm, rank }
    }

    /// `z ← Qᵀ z`.
    pub fn apply_qt(&self, z: &mut DMatrix<f64>) {
        for (k, (v, &tau)) in self.vs.iter().zip(&self.taus).enumerate() {
            let mut sub = z.rows_range_mut(k..);
            let w = sub.tr_mul(v);
            sub.ger(-tau, v, &w, 1.0);
        }
    }

    /// `z ← Q z`.
    pub fn apply_q(&self, z: &mut DMatrix<f64>) {
        for (k, (v, &tau)) in self.vs.iter().zip(&self.taus).enumerate().rev() {
            let mut sub = z.rows_range_mut(k..);
            let w = sub.tr_mul(v);
            sub.ger(-tau, v, &w, 1.0);
        }
    }

    /// Orthonormal basis of the left null space, `Q[:, rank..]`.
    pub fn left_null_space(&self) -> DMatrix<f64> {
        let m = self.nrows;
        let q = m - self.rank;
        let mut z = DMatrix::zeros(m, q);
        for j in 0..q {
            z[(self.rank + j, j)] = 1.0;
        }
        self.apply_q(&mut z);
        z
    }

    /// Solves `R11 y = t` for the leading `rank` components.
    pub fn solve_r11(&self, t: &DVector<f64>) -> DVector<f64> {
        let r11 = self.r.view_range(0..self.rank, 0..self.rank);
        r11.solve_upper_triangular(t).unwrap_or_else(|| DVector::zeros(self.rank))
    }

    /// Solves `R11ᵀ u = c`.
    pub fn solve_r11_tr(&self, c: &DVector<f64>) -> DVector<f64> {
        let r11 = self.r.view_range(0..self.rank, 0..self.rank);
        r11.tr_solve_upper_triangular(c).unwrap_or_else(|| DVector::zeros(self.rank))
    }
}

/// Pivoted Cholesky of a symmetric PSD matrix: `P K Pᵀ ≈ L Lᵀ` with `L`
/// lower trapezoidal of width `rank`.
pub(crate) struct PivotedCholesky {
    /// Pivot order; the first `rank` entries are the independent indices.
    pub perm: Vec<usize>,
    pub rank: usize,
    /// Full factor in pivot order (`n × rank`).
    pub l: DMatrix<f64>,
}

impl PivotedCholesky {
    pub fn new(k: &DMatrix<f64>, rel_tol: f64) -> Self {
        let n = k.nrows();
        let mut a = k.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
        let mut rank = 0;
        for j in 0..n {
            let (piv, best) = (j..n).fold((j, f64::NEG_INFINITY), |acc, i| {
                if a[(i, i)] > acc.1 {
                    (i, a[(i, i)])
                } else {
                    acc
                }
            });
            if best <= rel_tol * max_diag || best <= 0.0 {
                break;
            }
            a.swap_rows(j, piv);
            a.swap_columns(j, piv);
            perm.swap(j, piv);
            let d = best.sqrt();
            a[(j, j)] = d;
            for i in j + 1..n {
                a[(i, j)] /= d;
            }
            for c in j + 1..n {
                let lc = a[(c, j)];
                if lc == 0.0 {
                    continue;
                }
                for i in c..n {
                    let v = a[(i, c)] - a[(i, j)] * lc;
                    a[(i, c)] = v;
                    a[(c, i)] = v;
                }
            }
            rank = j + 1;
        }
        let mut l = DMatrix::zeros(n, rank);
        for j in 0..rank {
            for i in j..n {
                l[(i, j)] = a[(i, j)];
            }
        }
        PivotedCholesky { perm, rank, l }
    }
}
