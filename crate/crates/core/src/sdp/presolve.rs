//! Reduction to a dense problem without free variables and with linearly
//! independent, unit-norm rows.
//!
//! Block data is stored in `svec` form: the upper triangle of a symmetric
//! matrix, column by column, with off-diagonal entries scaled by `√2` so that
//! `svec(A)·svec(X) = <A, X>`.

use nalgebra::{DMatrix, DVector};

use super::factor::{PivotedCholesky, PivotedQr};
use super::SdpProblem;

const SQRT2: f64 = std::f64::consts::SQRT_2;

pub(crate) fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

pub(crate) fn svec_index(r: usize, c: usize) -> usize {
    let (r, c) = if r <= c { (r, c) } else { (c, r) };
    c * (c + 1) / 2 + r
}

pub(crate) fn svec(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows();
    let mut v = DVector::zeros(svec_len(n));
    let mut k = 0;
    for c in 0..n {
        for r in 0..c {
            v[k] = SQRT2 * 0.5 * (x[(r, c)] + x[(c, r)]);
            k += 1;
        }
        v[k] = x[(c, c)];
        k += 1;
    }
    v
}

pub(crate) fn smat_into(v: &[f64], out: &mut DMatrix<f64>) {
    let n = out.nrows();
    let mut k = 0;
    for c in 0..n {
        for r in 0..c {
            let x = v[k] / SQRT2;
            out[(r, c)] = x;
            out[(c, r)] = x;
            k += 1;
        }
        out[(c, c)] = v[k];
        k += 1;
    }
}

pub(crate) fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    smat_into(v, &mut m);
    m
}

/// Coefficient of a functional entry `value · X[r][c]` in svec form.
fn svec_coeff(r: usize, c: usize, value: f64) -> f64 {
    if r == c {
        value
    } else {
        value / SQRT2
    }
}

/// `min <C, X>` subject to `A(X) = b`, `X ⪰ 0`, all in svec form.
#[derive(Debug, Clone)]
pub(crate) struct DenseSdp {
    pub dims: Vec<usize>,
    /// Per block, `svec_len × m`; column `i` is `svec(A_i)` restricted to the block.
    pub a: Vec<DMatrix<f64>>,
    pub b: DVector<f64>,
    pub c: Vec<DVector<f64>>,
}

impl DenseSdp {
    pub fn num_rows(&self) -> usize {
        self.b.len()
    }
}

pub(crate) enum Outcome {
    Reduced,
    /// Linear inconsistency detected; the ray lives in the original row space.
    Infeasible(Vec<f64>),
}

pub(crate) struct Presolved {
    pub dense: DenseSdp,
    pub outcome: Outcome,
    /// The free-variable objective is not in the range of `Fᵀ`.
    pub objective_unbounded: bool,
    qr: Option<PivotedQr>,
    null: Option<DMatrix<f64>>,
    /// Particular dual solution of `Fᵀw = c_f`.
    w_part: DVector<f64>,
    kept: Vec<usize>,
    row_norm: Vec<f64>,
    nreduced: usize,
}

pub(crate) fn presolve(p: &SdpProblem) -> Presolved {
    let m = p.equalities.len();
    let nb = p.block_dims.len();

    let mut a: Vec<DMatrix<f64>> = p.block_dims.iter().map(|&n| DMatrix::zeros(svec_len(n), m)).collect();
    let mut b = DVector::zeros(m);
    for (i, eq) in p.equalities.iter().enumerate() {
        for e in &eq.blocks {
            a[e.block][(svec_index(e.row, e.col), i)] += svec_coeff(e.row, e.col, e.value);
        }
        b[i] = eq.rhs;
    }
    let mut c: Vec<DVector<f64>> = p.block_dims.iter().map(|&n| DVector::zeros(svec_len(n))).collect();
    for e in &p.objective.blocks {
        c[e.block][svec_index(e.row, e.col)] += svec_coeff(e.row, e.col, e.value);
    }

    // Eliminate free variables.
    let mut objective_unbounded = false;
    let mut w_part = DVector::zeros(m);
    let (qr, null) = if p.n_free > 0 && m > 0 {
        let mut f = DMatrix::zeros(m, p.n_free);
        for (i, eq) in p.equalities.iter().enumerate() {
            for &(k, v) in &eq.free {
                f[(i, k)] += v;
            }
        }
        let mut cf = DVector::zeros(p.n_free);
        for &(k, v) in &p.objective.free {
            cf[k] += v;
        }
        let qr = PivotedQr::new(&f, 1e-12);
        let r = qr.rank;
        let cp = DVector::from_iterator(r, qr.perm[..r].iter().map(|&j| cf[j]));
        let u = qr.solve_r11_tr(&cp);
        // Remaining objective components must be reproduced by R12ᵀ u.
        let cscale = 1.0 + cf.amax();
        for k in r..p.n_free {
            let pred: f64 = (0..r).map(|i| qr.r[(i, k)] * u[i]).sum();
            if (pred - cf[qr.perm[k]]).abs() > 1e-9 * cscale {
                objective_unbounded = true;
            }
        }
        if !objective_unbounded {
            let mut z = DMatrix::zeros(m, 1);
            z.view_range_mut(0..r, 0..1).copy_from(&u);
            qr.apply_q(&mut z);
            w_part = z.column(0).clone_owned();
        }
        let null = qr.left_null_space();
        (Some(qr), Some(null))
    } else {
        if p.objective.free.iter().any(|&(_, v)| v != 0.0) {
            objective_unbounded = true;
        }
        (None, None)
    };

    if objective_unbounded {
        for cb in c.iter_mut() {
            cb.fill(0.0);
        }
    } else if w_part.iter().any(|&v| v != 0.0) {
        for (cb, ab) in c.iter_mut().zip(&a) {
            *cb -= ab * &w_part;
        }
    }

    let (a, b) = match &null {
        Some(n) => (a.iter().map(|ab| ab * n).collect::<Vec<_>>(), n.transpose() * &b),
        None => (a, b),
    };
    let q = b.len();

    // Normalize rows, then detect dependencies.
    let mut row_norm = vec![0.0; q];
    for ab in &a {
        for i in 0..q {
            row_norm[i] += ab.column(i).norm_squared();
        }
    }
    for v in row_norm.iter_mut() {
        *v = if *v > 0.0 { v.sqrt() } else { 1.0 };
    }
    let scale = DVector::from_iterator(q, row_norm.iter().map(|n| 1.0 / n));
    let a: Vec<DMatrix<f64>> = a
        .into_iter()
        .map(|mut ab| {
            for i in 0..q {
                ab.column_mut(i).scale_mut(scale[i]);
            }
            ab
        })
        .collect();
    let b = b.component_mul(&scale);

    let mut k = DMatrix::zeros(q, q);
    for ab in &a {
        if ab.nrows() > 0 && q > 0 {
            k += ab.transpose() * ab;
        }
    }
    let chol = PivotedCholesky::new(&k, 1e-12);
    let rank = chol.rank;
    let bscale = 1.0 + b.amax();
    let mut infeasible_ray = None;
    if rank < q {
        let l11 = chol.l.view_range(0..rank, 0..rank).clone_owned();
        let b_indep = DVector::from_iterator(rank, chol.perm[..rank].iter().map(|&j| b[j]));
        for pos in rank..q {
            let j = chol.perm[pos];
            let l21: DVector<f64> = chol.l.view_range(pos..pos + 1, 0..rank).transpose().column(0).clone_owned();
            let coef = l11.tr_solve_lower_triangular(&l21).unwrap_or_else(|| DVector::zeros(rank));
            let resid = b[j] - coef.dot(&b_indep);
            if resid.abs() > 1e-9 * bscale.max(coef.amax() * bscale) {
                let sgn = resid.signum();
                let mut wt = DVector::zeros(q);
                wt[j] = sgn;
                for (t, &idx) in chol.perm[..rank].iter().enumerate() {
                    wt[idx] -= sgn * coef[t];
                }
                infeasible_ray = Some(wt);
                break;
            }
        }
    }
    let mut kept: Vec<usize> = chol.perm[..rank].to_vec();
    kept.sort_unstable();
    let dense = DenseSdp {
        dims: p.block_dims.clone(),
        a: a.iter().map(|ab| ab.select_columns(kept.iter())).collect(),
        b: DVector::from_iterator(kept.len(), kept.iter().map(|&j| b[j])),
        c,
    };
    debug_assert_eq!(dense.a.len(), nb);

    let mut pre = Presolved {
        dense,
        outcome: Outcome::Reduced,
        objective_unbounded,
        qr,
        null,
        w_part,
        kept,
        row_norm,
        nreduced: q,
    };
    if let Some(wt) = infeasible_ray {
        // `wt` is expressed on normalized rows; undo the scaling and lift.
        let wt = DVector::from_iterator(q, wt.iter().zip(&pre.row_norm).map(|(w, n)| w / n));
        let w = pre.lift(&wt);
        pre.outcome = Outcome::Infeasible(w.as_slice().to_vec());
    }
    pre
}

impl Presolved {
    fn lift(&self, wt: &DVector<f64>) -> DVector<f64> {
        match &self.null {
            Some(n) => n * wt,
            None => wt.clone(),
        }
    }

    /// Maps a dual vector of the dense problem back to the original rows.
    /// Rays omit the particular solution of `Fᵀw = c_f`.
    pub fn recover_dual(&self, w_red: &DVector<f64>, ray: bool) -> Vec<f64> {
        let mut wt = DVector::zeros(self.nreduced);
        for (j, &i) in self.kept.iter().enumerate() {
            wt[i] = w_red[j] / self.row_norm[i];
        }
        let mut w = self.lift(&wt);
        if !ray {
            w += &self.w_part;
        }
        w.as_slice().to_vec()
    }

    /// Least-squares free variables for a given `X`: `F y = b − A(X)`.
    pub fn recover_free(&self, p: &SdpProblem, x: &[DMatrix<f64>]) -> Vec<f64> {
        let Some(qr) = &self.qr else {
            return vec![0.0; p.n_free];
        };
        let m = p.equalities.len();
        let mut t = DMatrix::zeros(m, 1);
        for (i, eq) in p.equalities.iter().enumerate() {
            let mut lhs = 0.0;
            for e in &eq.blocks {
                lhs += e.value * x[e.block][(e.row, e.col)];
            }
            t[(i, 0)] = eq.rhs - lhs;
        }
        qr.apply_qt(&mut t);
        let r = qr.rank;
        let yp = qr.solve_r11(&t.view_range(0..r, 0..1).column(0).clone_owned());
        let mut y = vec![0.0; p.n_free];
        for k in 0..r {
            y[qr.perm[k]] = yp[k];
        }
        y
    }
}
