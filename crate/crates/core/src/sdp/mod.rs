//! Block-diagonal semidefinite programs in standard primal form.
//!
//! ```text
//! minimize    Σ_b <C_b, X_b> + c_fᵀ y
//! subject to  Σ_b <A_ib, X_b> + F_i y = b_i     i = 1..m
//!             X_b ⪰ 0,  y free
//! ```
//!
//! Coefficients are given on upper-triangular entries: an entry
//! `(block, row, col, v)` with `row <= col` contributes `v · X[row][col]` to
//! the linear functional. Off-diagonal entries therefore carry the full
//! weight of the symmetric pair.
//!
//! [`solve`] presolves the problem (free variables are eliminated by
//! projecting onto the left null space of `F`, redundant rows are dropped)
//! and runs a homogeneous self-dual primal-dual interior-point method with
//! Nesterov–Todd scaling and Mehrotra correction. Infeasible problems are
//! reported with a normalized dual ray.

mod factor;
mod hsd;
mod io;
mod presolve;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{read_text, write_text};

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 200;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl BlockEntry {
    pub fn new(block: usize, row: usize, col: usize, value: f64) -> Self {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        BlockEntry { block, row, col, value }
    }
}

/// One affine equality `Σ entries + Σ free = rhs`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Equality {
    pub blocks: Vec<BlockEntry>,
    pub free: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Linear objective, minimized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub blocks: Vec<BlockEntry>,
    pub free: Vec<(usize, f64)>,
}

impl Objective {
    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|e| e.value == 0.0) && self.free.iter().all(|f| f.1 == 0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub block_dims: Vec<usize>,
    pub n_free: usize,
    pub equalities: Vec<Equality>,
    pub objective: Objective,
}

impl SdpProblem {
    pub fn new(block_dims: Vec<usize>, n_free: usize) -> Self {
        SdpProblem { block_dims, n_free, equalities: Vec::new(), objective: Objective::default() }
    }

    pub fn num_equalities(&self) -> usize {
        self.equalities.len()
    }

    pub fn check(&self) -> Result<(), SdpError> {
        if self.block_dims.iter().any(|&d| d == 0) {
            return Err(SdpError::Dimension("zero-sized block".into()));
        }
        let check_entries = |what: &str, blocks: &[BlockEntry], free: &[(usize, f64)]| -> Result<(), SdpError> {
            for e in blocks {
                let dim = *self.block_dims.get(e.block).ok_or_else(|| {
                    SdpError::Dimension(format!("{what}: block {} of {}", e.block, self.block_dims.len()))
                })?;
                if e.row >= dim || e.col >= dim {
                    return Err(SdpError::Dimension(format!(
                        "{what}: entry ({}, {}) outside block {} of size {dim}",
                        e.row, e.col, e.block
                    )));
                }
                if !e.value.is_finite() {
                    return Err(SdpError::Dimension(format!("{what}: non-finite coefficient")));
                }
            }
            for &(k, v) in free {
                if k >= self.n_free {
                    return Err(SdpError::Dimension(format!("{what}: free variable {k} of {}", self.n_free)));
                }
                if !v.is_finite() {
                    return Err(SdpError::Dimension(format!("{what}: non-finite coefficient")));
                }
            }
            Ok(())
        };
        for (i, eq) in self.equalities.iter().enumerate() {
            check_entries(&format!("equality {i}"), &eq.blocks, &eq.free)?;
            if !eq.rhs.is_finite() {
                return Err(SdpError::Dimension(format!("equality {i}: non-finite rhs")));
            }
        }
        check_entries("objective", &self.objective.blocks, &self.objective.free)
    }

    /// Multiplies every equality (coefficients and right-hand side) by `s`.
    pub fn scaled_equalities(&self, s: f64) -> SdpProblem {
        let mut out = self.clone();
        for eq in &mut out.equalities {
            for e in &mut eq.blocks {
                e.value *= s;
            }
            for f in &mut eq.free {
                f.1 *= s;
            }
            eq.rhs *= s;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `‖A(X) + F y − b‖∞`.
    pub primal_abs: f64,
    /// `primal_abs / (1 + ‖b‖∞)`.
    pub primal: f64,
    /// `max(‖C − Aᵀw − S‖max, ‖c_f − Fᵀw‖∞) / (1 + ‖C‖max + ‖c_f‖∞)`.
    pub dual: f64,
    pub dual_abs: f64,
    /// `|pobj − dobj| / (1 + |pobj| + |dobj|)`.
    pub gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub min_eig_x: Vec<f64>,
    pub min_eig_s: Vec<f64>,
    /// Blocks whose `X` has an eigenvalue below `-1e-7`.
    pub non_psd_blocks: Vec<usize>,
}

/// Dual ray `w` with `bᵀw = 1`, `Fᵀw ≈ 0` and `−Aᵀw ⪰ 0` up to the
/// reported violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityCertificate {
    pub ray: Vec<f64>,
    pub psd_violation: f64,
    pub free_violation: f64,
}

impl InfeasibilityCertificate {
    /// `1 / max violation`: how far the ray's objective improvement exceeds
    /// its constraint violation.
    pub fn margin(&self) -> f64 {
        1.0 / self.psd_violation.max(self.free_violation).max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<DMatrix<f64>>,
    pub free: Vec<f64>,
    pub dual: Vec<f64>,
    pub slack: Vec<DMatrix<f64>>,
    pub residuals: Residuals,
    pub iterations: usize,
    pub certificate: Option<InfeasibilityCertificate>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

pub fn solve(p: &SdpProblem, tol: f64) -> Result<SdpSolution, SdpError> {
    solve_with(p, &SolveOptions { tol, ..SolveOptions::default() })
}

pub fn solve_with(p: &SdpProblem, opts: &SolveOptions) -> Result<SdpSolution, SdpError> {
    if !(opts.tol > 0.0) {
        return Err(SdpError::BadTolerance(opts.tol));
    }
    p.check()?;
    let pre = presolve::presolve(p);
    // Unscaling the presolved problem can amplify residuals, so a point that
    // fails validation is re-solved with a tighter internal tolerance.
    let mut inner_tol = opts.tol * 0.25;
    let mut best: Option<SdpSolution> = None;
    for _ in 0..3 {
        let (sol, retry) = solve_presolved(p, &pre, inner_tol, opts)?;
        let better = match &best {
            None => true,
            Some(b) => residual_error(&sol) < residual_error(b),
        };
        if better {
            best = Some(sol);
        }
        if !retry {
            break;
        }
        inner_tol *= 1e-2;
    }
    Ok(best.expect("at least one attempt"))
}

fn residual_error(s: &SdpSolution) -> f64 {
    if s.status == SdpStatus::Optimal {
        return -1.0;
    }
    s.residuals.primal.max(s.residuals.dual).max(s.residuals.gap)
}

/// Also reports whether a converged point was downgraded by validation.
fn solve_presolved(p: &SdpProblem, pre: &presolve::Presolved, inner_tol: f64, opts: &SolveOptions) -> Result<(SdpSolution, bool), SdpError> {
    let (status, x, y, w, s, iterations, ray) = match &pre.outcome {
        presolve::Outcome::Infeasible(ray) => {
            (SdpStatus::Infeasible, zero_blocks(p), vec![0.0; p.n_free], ray.clone(), zero_blocks(p), 0, true)
        }
        presolve::Outcome::Reduced => {
            let res = hsd::solve(&pre.dense, inner_tol, opts.max_iter);
            let mut status = res.status;
            if status == SdpStatus::Optimal && pre.objective_unbounded {
                status = SdpStatus::Unbounded;
            }
            match status {
                SdpStatus::Optimal => {
                    let y = pre.recover_free(p, &res.x);
                    let w = pre.recover_dual(&res.w, false);
                    (status, res.x, y, w, res.s, res.iterations, false)
                }
                SdpStatus::Infeasible => {
                    let w = pre.recover_dual(&res.w, true);
                    (status, zero_blocks(p), vec![0.0; p.n_free], w, zero_blocks(p), res.iterations, true)
                }
                _ => {
                    let y = pre.recover_free(p, &res.x);
                    let w = pre.recover_dual(&res.w, false);
                    (status, res.x, y, w, res.s, res.iterations, false)
                }
            }
        }
    };
    let mut sol = SdpSolution {
        status,
        x,
        free: y,
        dual: w,
        slack: s,
        residuals: Residuals::default(),
        iterations,
        certificate: None,
    };
    let mut downgraded = false;
    if ray {
        sol.certificate = Some(certificate(p, &sol.dual));
    } else {
        sol.residuals = validate(p, &sol)?;
        if sol.status == SdpStatus::Optimal
            && (sol.residuals.primal > opts.tol || sol.residuals.dual > opts.tol || sol.residuals.gap > opts.tol)
        {
            sol.status = SdpStatus::NumericalFailure;
            downgraded = true;
        }
    }
    Ok((sol, downgraded))
}

fn zero_blocks(p: &SdpProblem) -> Vec<DMatrix<f64>> {
    p.block_dims.iter().map(|&n| DMatrix::zeros(n, n)).collect()
}

/// Symmetric matrix `Σ_i w_i A_ib` for each block, plus `Fᵀw`.
fn adjoint(p: &SdpProblem, w: &[f64]) -> (Vec<DMatrix<f64>>, Vec<f64>) {
    let mut mats = zero_blocks(p);
    let mut fw = vec![0.0; p.n_free];
    for (eq, &wi) in p.equalities.iter().zip(w) {
        for e in &eq.blocks {
            add_functional(&mut mats[e.block], e.row, e.col, wi * e.value);
        }
        for &(k, v) in &eq.free {
            fw[k] += wi * v;
        }
    }
    (mats, fw)
}

fn add_functional(m: &mut DMatrix<f64>, r: usize, c: usize, v: f64) {
    if r == c {
        m[(r, r)] += v;
    } else {
        m[(r, c)] += 0.5 * v;
        m[(c, r)] += 0.5 * v;
    }
}

fn objective_matrices(p: &SdpProblem) -> (Vec<DMatrix<f64>>, Vec<f64>) {
    let mut mats = zero_blocks(p);
    let mut cf = vec![0.0; p.n_free];
    for e in &p.objective.blocks {
        add_functional(&mut mats[e.block], e.row, e.col, e.value);
    }
    for &(k, v) in &p.objective.free {
        cf[k] += v;
    }
    (mats, cf)
}

fn certificate(p: &SdpProblem, ray: &[f64]) -> InfeasibilityCertificate {
    let bw: f64 = p.equalities.iter().zip(ray).map(|(e, w)| e.rhs * w).sum();
    let scale = if bw > 0.0 { 1.0 / bw } else { 1.0 };
    let ray: Vec<f64> = ray.iter().map(|w| w * scale).collect();
    let (mats, fw) = adjoint(p, &ray);
    let psd_violation = mats
        .iter()
        .map(|m| {
            // −Aᵀw must be PSD, so the largest eigenvalue of Aᵀw is the violation.
            let lmax = m.clone().symmetric_eigenvalues().max();
            lmax.max(0.0)
        })
        .fold(0.0, f64::max);
    let free_violation = fw.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    InfeasibilityCertificate {
        ray,
        psd_violation: if bw > 0.0 { psd_violation } else { f64::INFINITY },
        free_violation,
    }
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

/// Recomputes every residual of `s` against `p` from scratch.
pub fn validate(p: &SdpProblem, s: &SdpSolution) -> Result<Residuals, SdpError> {
    if s.x.len() != p.block_dims.len()
        || s.x.iter().zip(&p.block_dims).any(|(x, &n)| x.shape() != (n, n))
        || s.free.len() != p.n_free
        || s.dual.len() != p.equalities.len()
        || s.slack.len() != p.block_dims.len()
    {
        return Err(SdpError::Dimension("solution shape does not match problem".into()));
    }
    let mut primal_abs: f64 = 0.0;
    let mut bmax: f64 = 0.0;
    for eq in &p.equalities {
        let mut lhs = 0.0;
        for e in &eq.blocks {
            lhs += e.value * s.x[e.block][(e.row, e.col)];
        }
        for &(k, v) in &eq.free {
            lhs += v * s.free[k];
        }
        primal_abs = primal_abs.max((lhs - eq.rhs).abs());
        bmax = bmax.max(eq.rhs.abs());
    }
    let (c, cf) = objective_matrices(p);
    let (aw, fw) = adjoint(p, &s.dual);
    let mut dual_abs: f64 = 0.0;
    let mut cmax: f64 = 0.0;
    for b in 0..p.block_dims.len() {
        let r = &c[b] - &aw[b] - &s.slack[b];
        dual_abs = dual_abs.max(r.amax());
        cmax = cmax.max(c[b].amax());
    }
    for k in 0..p.n_free {
        dual_abs = dual_abs.max((cf[k] - fw[k]).abs());
        cmax = cmax.max(cf[k].abs());
    }
    let pobj: f64 = c.iter().zip(&s.x).map(|(cb, xb)| cb.dot(xb)).sum::<f64>()
        + cf.iter().zip(&s.free).map(|(a, b)| a * b).sum::<f64>();
    let dobj: f64 = p.equalities.iter().zip(&s.dual).map(|(e, w)| e.rhs * w).sum();
    let min_eig_x: Vec<f64> = s.x.iter().map(min_eig).collect();
    let min_eig_s: Vec<f64> = s.slack.iter().map(min_eig).collect();
    let non_psd_blocks = min_eig_x.iter().enumerate().filter(|(_, &l)| l < -1e-7).map(|(b, _)| b).collect();
    Ok(Residuals {
        primal_abs,
        primal: primal_abs / (1.0 + bmax),
        dual_abs,
        dual: dual_abs / (1.0 + cmax),
        gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
        primal_objective: pobj,
        dual_objective: dobj,
        min_eig_x,
        min_eig_s,
        non_psd_blocks,
    })
}

/// Objective value `Σ <C, X> + c_fᵀ y` of a candidate point.
pub fn objective_value(p: &SdpProblem, x: &[DMatrix<f64>], y: &[f64]) -> f64 {
    let mut v = 0.0;
    for e in &p.objective.blocks {
        v += e.value * x[e.block][(e.row, e.col)];
    }
    for &(k, c) in &p.objective.free {
        v += c * y[k];
    }
    v
}
