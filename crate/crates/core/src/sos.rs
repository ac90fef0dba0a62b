//! Sum-of-squares programs over polynomials with unknown coefficients, and
//! their compilation to block-diagonal semidefinite programs.
//!
//! An [`AffinePoly`] is a polynomial whose coefficients are affine functions
//! of decision variables. Decision variables are either free scalars (the
//! coefficients of a [`PolyTemplate`], or bare scalars such as a level) or
//! entries of a PSD Gram matrix (a [`SosTemplate`] or the Gram matrix that
//! certifies a constraint). Each SOS constraint `e(z)` is compiled to
//! `e = mᵀ Q m` with `Q ⪰ 0`, one scalar equality per monomial.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Neg, Sub};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::poly::{monomial_basis, Monomial, PolyError, Polynomial};
use crate::sdp::{self, BlockEntry, Equality, SdpError, SdpProblem, SdpSolution, SdpStatus};

/// Gram matrices must pass a Cholesky test after this diagonal shift.
pub const EPS_PSD: f64 = 1e-7;
/// Relative pruning threshold for extracted coefficients.
pub const PRUNE_REL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SosError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error("expression is not affine in the unknowns")]
    NonAffine,
    #[error("expression has {got} variables, program has {expected}")]
    VarMismatch { expected: usize, got: usize },
    #[error("program has no constraints")]
    EmptyProgram,
    #[error("solution is not feasible ({0:?})")]
    NotFeasible(SosStatus),
    #[error("template does not belong to this solution")]
    UnknownTemplate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarId {
    Free(usize),
    /// Upper-triangular entry `row <= col` of a PSD block.
    Gram { block: usize, row: usize, col: usize },
}

/// `constant + Σ coeff · var`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub constant: f64,
    pub terms: BTreeMap<VarId, f64>,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr { constant: c, terms: BTreeMap::new() }
    }

    pub fn var(v: VarId, c: f64) -> Self {
        let mut e = LinExpr::default();
        e.add_var(v, c);
        e
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.is_empty()
    }

    pub fn add_var(&mut self, v: VarId, c: f64) {
        if c == 0.0 {
            return;
        }
        let e = self.terms.entry(v).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.terms.remove(&v);
        }
    }

    pub fn add_scaled(&mut self, other: &LinExpr, s: f64) {
        if s == 0.0 {
            return;
        }
        self.constant += s * other.constant;
        for (&v, &c) in &other.terms {
            self.add_var(v, s * c);
        }
    }

    pub fn scale(&self, s: f64) -> LinExpr {
        let mut out = LinExpr::default();
        out.add_scaled(self, s);
        out
    }

    pub fn eval(&self, free: &[f64], grams: &[DMatrix<f64>]) -> f64 {
        let mut v = self.constant;
        for (id, &c) in &self.terms {
            v += c * match *id {
                VarId::Free(k) => free[k],
                VarId::Gram { block, row, col } => grams[block][(row, col)],
            };
        }
        v
    }
}

/// Polynomial with affine coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePoly {
    nvars: usize,
    terms: BTreeMap<Monomial, LinExpr>,
}

impl AffinePoly {
    pub fn zero(nvars: usize) -> Self {
        AffinePoly { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        AffinePoly::from(&Polynomial::constant(nvars, c))
    }

    /// The scalar decision variable `v` as a degree-0 polynomial.
    pub fn scalar(nvars: usize, v: VarId) -> Self {
        let mut p = AffinePoly::zero(nvars);
        p.add_term(Monomial::one(nvars), &LinExpr::var(v, 1.0));
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &LinExpr)> {
        self.terms.iter()
    }

    pub fn coeff(&self, m: &Monomial) -> Option<&LinExpr> {
        self.terms.get(m)
    }

    pub fn support(&self) -> impl Iterator<Item = &Monomial> {
        self.terms.keys()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.values().all(LinExpr::is_constant)
    }

    pub fn add_term(&mut self, m: Monomial, e: &LinExpr) {
        self.add_term_scaled(m, e, 1.0);
    }

    fn add_term_scaled(&mut self, m: Monomial, e: &LinExpr, s: f64) {
        let entry = self.terms.entry(m.clone()).or_default();
        entry.add_scaled(e, s);
        if entry.is_zero() {
            self.terms.remove(&m);
        }
    }

    fn check(&self, other_nvars: usize) -> Result<(), SosError> {
        if self.nvars != other_nvars {
            return Err(SosError::VarMismatch { expected: self.nvars, got: other_nvars });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &AffinePoly) -> Result<AffinePoly, SosError> {
        self.check(other.nvars)?;
        let mut out = self.clone();
        for (m, e) in &other.terms {
            out.add_term(m.clone(), e);
        }
        Ok(out)
    }

    pub fn try_sub(&self, other: &AffinePoly) -> Result<AffinePoly, SosError> {
        self.check(other.nvars)?;
        let mut out = self.clone();
        for (m, e) in &other.terms {
            out.add_term_scaled(m.clone(), e, -1.0);
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> AffinePoly {
        let mut out = AffinePoly::zero(self.nvars);
        for (m, e) in &self.terms {
            out.add_term_scaled(m.clone(), e, s);
        }
        out
    }

    /// Product with a fixed polynomial.
    pub fn mul_poly(&self, p: &Polynomial) -> Result<AffinePoly, SosError> {
        self.check(p.nvars())?;
        let mut out = AffinePoly::zero(self.nvars);
        for (m1, e) in &self.terms {
            for (m2, c) in p.terms() {
                out.add_term_scaled(m1.mul(m2), e, c);
            }
        }
        Ok(out)
    }

    /// Product of two affine polynomials; at most one factor may depend on
    /// unknowns.
    pub fn try_mul(&self, other: &AffinePoly) -> Result<AffinePoly, SosError> {
        self.check(other.nvars)?;
        match (self.to_fixed(), other.to_fixed()) {
            (_, Some(q)) => self.mul_poly(&q),
            (Some(p), None) => other.mul_poly(&p),
            (None, None) => {
                if self.terms.is_empty() || other.terms.is_empty() {
                    Ok(AffinePoly::zero(self.nvars))
                } else {
                    Err(SosError::NonAffine)
                }
            }
        }
    }

    /// The polynomial itself if it has no unknowns.
    pub fn to_fixed(&self) -> Option<Polynomial> {
        if !self.is_constant() {
            return None;
        }
        let mut p = Polynomial::zero(self.nvars);
        for (m, e) in &self.terms {
            p.add_term(m.clone(), e.constant);
        }
        Some(p)
    }

    /// Substitutes decision-variable values.
    pub fn eval(&self, free: &[f64], grams: &[DMatrix<f64>]) -> Polynomial {
        let mut p = Polynomial::zero(self.nvars);
        for (m, e) in &self.terms {
            p.add_term(m.clone(), e.eval(free, grams));
        }
        p
    }

    pub fn differentiate(&self, var: usize) -> AffinePoly {
        let mut out = AffinePoly::zero(self.nvars);
        for (m, e) in &self.terms {
            let k = m.exponents()[var];
            if k > 0 {
                let mut ex = m.exponents().to_vec();
                ex[var] -= 1;
                out.add_term_scaled(Monomial::new(ex), e, k as f64);
            }
        }
        out
    }

    /// `Σ ∂self/∂z_i · f_i` for a fixed vector field.
    pub fn lie_derivative(&self, f: &[Polynomial]) -> Result<AffinePoly, SosError> {
        if f.len() != self.nvars {
            return Err(SosError::VarMismatch { expected: self.nvars, got: f.len() });
        }
        let mut out = AffinePoly::zero(self.nvars);
        for (i, fi) in f.iter().enumerate() {
            out = out.try_add(&self.differentiate(i).mul_poly(fi)?)?;
        }
        Ok(out)
    }

    fn vars(&self) -> BTreeSet<VarId> {
        self.terms.values().flat_map(|e| e.terms.keys().copied()).collect()
    }
}

impl From<&Polynomial> for AffinePoly {
    fn from(p: &Polynomial) -> Self {
        let mut out = AffinePoly::zero(p.nvars());
        for (m, c) in p.terms() {
            out.add_term(m.clone(), &LinExpr::constant(c));
        }
        out
    }
}

impl From<Polynomial> for AffinePoly {
    fn from(p: Polynomial) -> Self {
        AffinePoly::from(&p)
    }
}

impl Add for &AffinePoly {
    type Output = AffinePoly;
    fn add(self, rhs: &AffinePoly) -> AffinePoly {
        self.try_add(rhs).expect("variable count mismatch")
    }
}

impl Sub for &AffinePoly {
    type Output = AffinePoly;
    fn sub(self, rhs: &AffinePoly) -> AffinePoly {
        self.try_sub(rhs).expect("variable count mismatch")
    }
}

impl Add for AffinePoly {
    type Output = AffinePoly;
    fn add(self, rhs: AffinePoly) -> AffinePoly {
        &self + &rhs
    }
}

impl Sub for AffinePoly {
    type Output = AffinePoly;
    fn sub(self, rhs: AffinePoly) -> AffinePoly {
        &self - &rhs
    }
}

impl Neg for &AffinePoly {
    type Output = AffinePoly;
    fn neg(self) -> AffinePoly {
        self.scale(-1.0)
    }
}

impl fmt::Display for AffinePoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, e) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({}", e.constant)?;
            for (v, c) in &e.terms {
                match v {
                    VarId::Free(k) => write!(f, " + {c}*y{k}")?,
                    VarId::Gram { block, row, col } => write!(f, " + {c}*Q{block}[{row},{col}]")?,
                }
            }
            write!(f, ")")?;
            if !m.is_one() {
                write!(f, "*{m}")?;
            }
        }
        Ok(())
    }
}

/// Polynomial with one free coefficient per basis monomial.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyTemplate {
    pub basis: Vec<Monomial>,
    pub coeff_ids: Vec<usize>,
    nvars: usize,
}

impl PolyTemplate {
    pub fn expr(&self) -> AffinePoly {
        let mut p = AffinePoly::zero(self.nvars);
        for (m, &id) in self.basis.iter().zip(&self.coeff_ids) {
            p.add_term(m.clone(), &LinExpr::var(VarId::Free(id), 1.0));
        }
        p
    }
}

/// `basisᵀ Q basis` with `Q ⪰ 0` its own PSD block.
#[derive(Debug, Clone, PartialEq)]
pub struct SosTemplate {
    pub gram_basis: Vec<Monomial>,
    pub gram_id: usize,
    nvars: usize,
}

impl SosTemplate {
    pub fn expr(&self) -> AffinePoly {
        gram_expr(self.nvars, &self.gram_basis, self.gram_id)
    }
}

fn gram_expr(nvars: usize, basis: &[Monomial], block: usize) -> AffinePoly {
    let mut p = AffinePoly::zero(nvars);
    for c in 0..basis.len() {
        for r in 0..=c {
            let w = if r == c { 1.0 } else { 2.0 };
            p.add_term(basis[r].mul(&basis[c]), &LinExpr::var(VarId::Gram { block, row: r, col: c }, w));
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConstraintId(pub usize);

#[derive(Debug, Clone)]
struct SosConstraint {
    expr: AffinePoly,
    block: usize,
}

#[derive(Debug, Clone)]
enum Objective {
    None,
    Minimize(LinExpr),
}

#[derive(Debug, Clone)]
pub struct SosProgram {
    nvars: usize,
    n_free: usize,
    /// Gram basis of every PSD block, in creation order.
    blocks: Vec<Vec<Monomial>>,
    constraints: Vec<SosConstraint>,
    equalities: Vec<AffinePoly>,
    objective: Objective,
}

/// Gram basis for an expression with the given support: total degrees in
/// `[⌈min/2⌉, ⌊max/2⌋]` and per-variable exponents at most half the largest
/// exponent that variable reaches in the support.
pub fn gram_basis_for<'a>(nvars: usize, support: impl IntoIterator<Item = &'a Monomial>) -> Vec<Monomial> {
    let mut maxexp = vec![0u32; nvars];
    let mut mindeg = u32::MAX;
    let mut maxdeg = 0;
    let mut any = false;
    for m in support {
        any = true;
        for (i, &e) in m.exponents().iter().enumerate() {
            maxexp[i] = maxexp[i].max(e);
        }
        mindeg = mindeg.min(m.degree());
        maxdeg = maxdeg.max(m.degree());
    }
    if !any {
        return Vec::new();
    }
    let lo = mindeg.div_ceil(2);
    let hi = maxdeg / 2;
    if lo > hi {
        return Vec::new();
    }
    monomial_basis(nvars, lo, hi)
        .into_iter()
        .filter(|m| m.exponents().iter().zip(&maxexp).all(|(&e, &mx)| 2 * e <= mx))
        .collect()
}

impl SosProgram {
    pub fn new(nvars: usize) -> Self {
        SosProgram {
            nvars,
            n_free: 0,
            blocks: Vec::new(),
            constraints: Vec::new(),
            equalities: Vec::new(),
            objective: Objective::None,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn num_free(&self) -> usize {
        self.n_free
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    pub fn new_scalar(&mut self) -> VarId {
        self.n_free += 1;
        VarId::Free(self.n_free - 1)
    }

    pub fn new_poly(&mut self, basis: Vec<Monomial>) -> PolyTemplate {
        let coeff_ids = (0..basis.len()).map(|i| self.n_free + i).collect();
        self.n_free += basis.len();
        PolyTemplate { basis, coeff_ids, nvars: self.nvars }
    }

    pub fn new_sos(&mut self, gram_basis: Vec<Monomial>) -> SosTemplate {
        self.blocks.push(gram_basis.clone());
        SosTemplate { gram_basis, gram_id: self.blocks.len() - 1, nvars: self.nvars }
    }

    /// Registers `expr` as SOS with an automatically chosen Gram basis.
    pub fn add_sos_constraint(&mut self, expr: AffinePoly) -> Result<ConstraintId, SosError> {
        let basis = gram_basis_for(self.nvars, expr.support());
        self.add_sos_constraint_with_basis(expr, basis)
    }

    pub fn add_sos_constraint_with_basis(
        &mut self,
        expr: AffinePoly,
        basis: Vec<Monomial>,
    ) -> Result<ConstraintId, SosError> {
        if expr.nvars != self.nvars {
            return Err(SosError::VarMismatch { expected: self.nvars, got: expr.nvars });
        }
        self.blocks.push(basis);
        self.constraints.push(SosConstraint { expr, block: self.blocks.len() - 1 });
        Ok(ConstraintId(self.constraints.len() - 1))
    }

    /// Requires every coefficient of `expr` to vanish.
    pub fn add_equality(&mut self, expr: AffinePoly) -> Result<(), SosError> {
        if expr.nvars != self.nvars {
            return Err(SosError::VarMismatch { expected: self.nvars, got: expr.nvars });
        }
        self.equalities.push(expr);
        Ok(())
    }

    pub fn minimize(&mut self, obj: LinExpr) {
        self.objective = Objective::Minimize(obj);
    }

    pub fn maximize(&mut self, obj: LinExpr) {
        self.objective = Objective::Minimize(obj.scale(-1.0));
    }

    pub fn gram_basis(&self, c: ConstraintId) -> &[Monomial] {
        &self.blocks[self.constraints[c.0].block]
    }

    fn emit_rows(&self, expr: &AffinePoly, gram: Option<usize>, rows: &mut Vec<Equality>) {
        // Rows read `mᵀQm − expr = 0` so a fixed square gives `q = coefficient`.
        let mut combined: BTreeMap<Monomial, LinExpr> = match gram {
            Some(b) => gram_expr(self.nvars, &self.blocks[b], b).terms,
            None => BTreeMap::new(),
        };
        for (m, e) in &expr.terms {
            combined.entry(m.clone()).or_default().add_scaled(e, -1.0);
        }
        for e in combined.values() {
            let mut eq = Equality { rhs: -e.constant, ..Equality::default() };
            for (v, &c) in &e.terms {
                match *v {
                    VarId::Free(k) => eq.free.push((k, c)),
                    VarId::Gram { block, row, col } => eq.blocks.push(BlockEntry::new(block, row, col, c)),
                }
            }
            rows.push(eq);
        }
    }

    pub fn compile(&self) -> Result<SdpProblem, SosError> {
        if self.constraints.is_empty() && self.equalities.is_empty() {
            return Err(SosError::EmptyProgram);
        }
        let mut rows = Vec::new();
        for c in &self.constraints {
            self.emit_rows(&c.expr, Some(c.block), &mut rows);
        }
        for e in &self.equalities {
            self.emit_rows(e, None, &mut rows);
        }
        let mut p = SdpProblem::new(self.block_dims().iter().map(|&d| d.max(1)).collect(), self.n_free);
        p.equalities = rows;
        if let Objective::Minimize(obj) = &self.objective {
            for (v, &c) in &obj.terms {
                match *v {
                    VarId::Free(k) => p.objective.free.push((k, c)),
                    VarId::Gram { block, row, col } => p.objective.blocks.push(BlockEntry::new(block, row, col, c)),
                }
            }
        }
        Ok(p)
    }

    pub fn solve(&self, tol: f64) -> Result<SosSolution, SosError> {
        let p = self.compile()?;
        let sdp = sdp::solve(&p, tol)?;
        Ok(SosSolution::from_sdp(self, sdp))
    }

    /// Recomposes every constraint from its Gram matrix and reports the worst
    /// coefficient mismatch and the smallest Gram eigenvalue.
    pub fn verify(&self, sol: &SosSolution) -> CertificateCheck {
        let mut max_err: f64 = 0.0;
        for c in &self.constraints {
            let target = c.expr.eval(&sol.free, &sol.grams);
            let recomposed = gram_expr(self.nvars, &self.blocks[c.block], c.block).eval(&sol.free, &sol.grams);
            max_err = max_err.max(target.max_coeff_diff(&recomposed));
        }
        for e in &self.equalities {
            let v = e.eval(&sol.free, &sol.grams);
            max_err = max_err.max(v.max_abs_coeff());
        }
        let mut min_eig = f64::INFINITY;
        let mut psd = true;
        for (b, basis) in self.blocks.iter().enumerate() {
            if basis.is_empty() {
                continue;
            }
            let g = &sol.grams[b];
            min_eig = min_eig.min(g.clone().symmetric_eigenvalues().min());
            let shifted = g + DMatrix::identity(g.nrows(), g.nrows()) * EPS_PSD;
            psd &= nalgebra::Cholesky::new(shifted).is_some();
        }
        CertificateCheck { max_recomposition_error: max_err, min_gram_eigenvalue: min_eig, psd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateCheck {
    pub max_recomposition_error: f64,
    pub min_gram_eigenvalue: f64,
    pub psd: bool,
}

impl CertificateCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.psd && self.max_recomposition_error < tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SosStatus {
    Feasible,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SosSolution {
    pub status: SosStatus,
    pub free: Vec<f64>,
    /// One matrix per PSD block, in creation order.
    pub grams: Vec<DMatrix<f64>>,
    /// Value of the minimized objective.
    pub objective: f64,
    pub sdp: SdpSolution,
}

impl SosSolution {
    fn from_sdp(prog: &SosProgram, sdp: SdpSolution) -> SosSolution {
        let status = match sdp.status {
            SdpStatus::Optimal => SosStatus::Feasible,
            SdpStatus::Infeasible => SosStatus::Infeasible,
            // A feasibility program cannot be unbounded; an optimization program
            // reported unbounded still has feasible points but no usable optimum.
            SdpStatus::Unbounded | SdpStatus::NumericalFailure => SosStatus::NumericalFailure,
        };
        let grams = prog
            .blocks
            .iter()
            .zip(&sdp.x)
            .map(|(basis, x)| if basis.is_empty() { DMatrix::zeros(0, 0) } else { x.clone() })
            .collect();
        SosSolution { status, free: sdp.free.clone(), grams, objective: sdp.residuals.primal_objective, sdp }
    }

    pub fn is_feasible(&self) -> bool {
        self.status == SosStatus::Feasible
    }

    fn require_feasible(&self) -> Result<(), SosError> {
        if self.is_feasible() {
            Ok(())
        } else {
            Err(SosError::NotFeasible(self.status))
        }
    }

    pub fn value(&self, v: VarId) -> Result<f64, SosError> {
        self.require_feasible()?;
        match v {
            VarId::Free(k) => self.free.get(k).copied().ok_or(SosError::UnknownTemplate),
            VarId::Gram { block, row, col } => self
                .grams
                .get(block)
                .filter(|g| row < g.nrows() && col < g.ncols())
                .map(|g| g[(row, col)])
                .ok_or(SosError::UnknownTemplate),
        }
    }

    pub fn extract(&self, t: &PolyTemplate) -> Result<Polynomial, SosError> {
        self.require_feasible()?;
        if t.coeff_ids.iter().any(|&k| k >= self.free.len()) {
            return Err(SosError::UnknownTemplate);
        }
        Ok(t.expr().eval(&self.free, &self.grams).pruned(PRUNE_REL))
    }

    pub fn extract_sos(&self, t: &SosTemplate) -> Result<Polynomial, SosError> {
        self.require_feasible()?;
        if t.gram_id >= self.grams.len() || self.grams[t.gram_id].nrows() != t.gram_basis.len() {
            return Err(SosError::UnknownTemplate);
        }
        Ok(t.expr().eval(&self.free, &self.grams).pruned(PRUNE_REL))
    }

    pub fn gram(&self, prog: &SosProgram, c: ConstraintId) -> &DMatrix<f64> {
        &self.grams[prog.constraints[c.0].block]
    }
}

/// Result of a standalone SOS test of a fixed polynomial.
#[derive(Debug, Clone)]
pub enum SosCheck {
    Feasible { basis: Vec<Monomial>, gram: DMatrix<f64>, recomposition_error: f64 },
    Infeasible,
    NumericalFailure,
}

impl SosCheck {
    pub fn is_feasible(&self) -> bool {
        matches!(self, SosCheck::Feasible { .. })
    }
}

pub fn check_sos(p: &Polynomial) -> Result<SosCheck, SosError> {
    check_sos_with_basis(p, None)
}

/// As [`check_sos`], with an explicit Gram basis.
pub fn check_sos_with_basis(p: &Polynomial, basis: Option<Vec<Monomial>>) -> Result<SosCheck, SosError> {
    if p.degree() % 2 == 1 || (p.min_degree() % 2 == 1 && !p.is_zero()) {
        return Ok(SosCheck::Infeasible);
    }
    let mut prog = SosProgram::new(p.nvars());
    let expr = AffinePoly::from(p);
    let cid = match basis {
        Some(b) => prog.add_sos_constraint_with_basis(expr, b)?,
        None => prog.add_sos_constraint(expr)?,
    };
    if prog.gram_basis(cid).is_empty() {
        // Only the zero polynomial is a sum of squares over an empty basis.
        return Ok(if p.is_zero() {
            SosCheck::Feasible { basis: Vec::new(), gram: DMatrix::zeros(0, 0), recomposition_error: 0.0 }
        } else {
            SosCheck::Infeasible
        });
    }
    let sol = prog.solve(sdp::DEFAULT_TOL)?;
    Ok(match sol.status {
        SosStatus::Feasible => {
            let check = prog.verify(&sol);
            SosCheck::Feasible {
                basis: prog.gram_basis(cid).to_vec(),
                gram: sol.gram(&prog, cid).clone(),
                recomposition_error: check.max_recomposition_error,
            }
        }
        SosStatus::Infeasible => SosCheck::Infeasible,
        SosStatus::NumericalFailure => SosCheck::NumericalFailure,
    })
}

/// Unknowns appearing in an expression.
pub fn unknowns(e: &AffinePoly) -> Vec<VarId> {
    e.vars().into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn z(n: usize, i: usize) -> Polynomial {
        Polynomial::var(n, i)
    }

    #[test]
    fn fixed_square_is_feasible() {
        let p = (&z(2, 0) + &z(2, 1)).powi(2);
        let mut prog = SosProgram::new(2);
        prog.add_sos_constraint(AffinePoly::from(&p)).unwrap();
        let sdp = prog.compile().unwrap();
        assert_eq!(sdp.block_dims, vec![2]);
        assert!(check_sos(&p).unwrap().is_feasible());
    }

    #[test]
    fn single_square_compiles_to_one_by_one() {
        let p = z(1, 0).powi(2);
        let mut prog = SosProgram::new(1);
        prog.add_sos_constraint(AffinePoly::from(&p)).unwrap();
        let sdp = prog.compile().unwrap();
        assert_eq!(sdp.block_dims, vec![1]);
        assert_eq!(sdp.equalities.len(), 1);
        assert_eq!(sdp.equalities[0].rhs, 1.0);
        assert!(prog.solve(1e-7).unwrap().is_feasible());
        assert!(!check_sos(&-&p).unwrap().is_feasible());
    }

    #[test]
    fn template_minus_small_square_compiles() {
        let mut prog = SosProgram::new(2);
        let v = prog.new_poly(monomial_basis(2, 2, 2));
        let l1 = Polynomial::sum_of_squares(2).scale(1e-6);
        prog.add_sos_constraint(v.expr() - AffinePoly::from(&l1)).unwrap();
        let sdp = prog.compile().unwrap();
        assert_eq!(sdp.block_dims, vec![2]);
        assert_eq!(sdp.equalities.len(), 3);
        assert!(prog.solve(1e-7).unwrap().is_feasible());
    }

    #[test]
    fn unknown_products_are_rejected() {
        let mut prog = SosProgram::new(2);
        let a = prog.new_poly(monomial_basis(2, 1, 1));
        let b = prog.new_sos(monomial_basis(2, 0, 1));
        assert!(matches!(a.expr().try_mul(&b.expr()), Err(SosError::NonAffine)));
        assert!(a.expr().try_mul(&AffinePoly::from(&z(2, 0))).is_ok());
    }

    #[test]
    fn empty_program_is_an_error() {
        assert!(matches!(SosProgram::new(2).compile(), Err(SosError::EmptyProgram)));
    }

    #[test]
    fn motzkin_is_not_sos() {
        let x = z(2, 0);
        let y = z(2, 1);
        let m = &(&(&x.powi(4) * &y.powi(2)) + &(&x.powi(2) * &y.powi(4))) - &(&(&x.powi(2) * &y.powi(2)) * 3.0);
        let m = &m + &Polynomial::constant(2, 1.0);
        let r = check_sos(&m).unwrap();
        assert!(matches!(r, SosCheck::Infeasible), "{r:?}");
    }

    #[test]
    fn odd_degree_is_rejected_without_solving() {
        assert!(matches!(check_sos(&z(2, 0).powi(3)).unwrap(), SosCheck::Infeasible));
    }

    fn random_poly(rng: &mut ChaCha8Rng, n: usize, deg: u32) -> Polynomial {
        let mut p = Polynomial::zero(n);
        for m in monomial_basis(n, 0, deg) {
            if rng.random_bool(0.6) {
                p.add_term(m, rng.random_range(-1.0..1.0));
            }
        }
        p
    }

    #[test]
    fn sums_of_random_cubic_squares_are_sos() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut s = Polynomial::zero(3);
            for _ in 0..5 {
                let q = random_poly(&mut rng, 3, 3);
                s = &s + &(&q * &q);
            }
            match check_sos(&s).unwrap() {
                SosCheck::Feasible { basis, gram, recomposition_error } => {
                    assert!(recomposition_error < 1e-6);
                    // Independent recomposition from the returned Gram matrix.
                    let mut r = Polynomial::zero(3);
                    for i in 0..basis.len() {
                        for j in 0..basis.len() {
                            r.add_term(basis[i].mul(&basis[j]), gram[(i, j)]);
                        }
                    }
                    assert!(r.max_coeff_diff(&s) < 1e-6);
                    assert!(gram.symmetric_eigenvalues().min() > -EPS_PSD);
                }
                other => panic!("{other:?}"),
            }
        }
    }

    /// Hand count for the initial Lyapunov program on a 2-variable system:
    /// V has basis {z1, z2, z1², z1z2, z2²}, s2 and s6 are degree-2 SOS with
    /// basis {z1, z2}, p1 = z1² + z2², β fixed, f of degree 3.
    #[test]
    fn initial_lyapunov_program_shape_matches_hand_count() {
        let n = 2;
        let mut prog = SosProgram::new(n);
        let v = prog.new_poly(monomial_basis(n, 1, 2));
        let s2 = prog.new_sos(monomial_basis(n, 1, 1));
        let s6 = prog.new_sos(monomial_basis(n, 1, 1));
        let p1 = Polynomial::sum_of_squares(n);
        let beta = 0.5;
        let bp = &Polynomial::constant(n, beta) - &p1;
        let l = p1.scale(1e-6);
        let f = vec![-&z(n, 0) + z(n, 1).powi(3), -&z(n, 1)];
        let vexpr = v.expr();
        let vdot = vexpr.lie_derivative(&f).unwrap();
        let c1 = &(-&s2.expr().mul_poly(&bp).unwrap()) + &vexpr;
        let c1 = &c1 - &AffinePoly::from(&l);
        let c2 = &(&(-&s6.expr().mul_poly(&bp).unwrap()) - &vdot) - &AffinePoly::from(&l);
        let id1 = prog.add_sos_constraint(c1).unwrap();
        let id2 = prog.add_sos_constraint(c2).unwrap();
        // c1: degrees 1..4 → basis degrees 1..2 → 2 + 3 = 5.
        assert_eq!(prog.gram_basis(id1).len(), 5);
        // c2: V̇ spans degrees 1..4 and s6·p1 reaches 4.
        assert_eq!(prog.gram_basis(id2).len(), 5);
        let sdp = prog.compile().unwrap();
        assert_eq!(sdp.block_dims, vec![2, 2, 5, 5]);
        // Monomials of degree 1..4 in 2 variables: 2 + 3 + 4 + 5 = 14 per constraint.
        assert_eq!(sdp.equalities.len(), 28);
        assert_eq!(sdp.n_free, 5);
    }

    #[test]
    fn extract_single_coefficient() {
        let mut prog = SosProgram::new(1);
        let t = prog.new_poly(vec![Monomial::var(1, 0)]);
        prog.add_equality(&t.expr() - &AffinePoly::from(&z(1, 0).scale(2.0))).unwrap();
        let sol = prog.solve(1e-8).unwrap();
        let p = sol.extract(&t).unwrap();
        assert!((p.coeff(&Monomial::var(1, 0)) - 2.0).abs() < 1e-8);
        assert_eq!(p.num_terms(), 1);
    }

    #[test]
    fn extract_zero_solution() {
        let mut prog = SosProgram::new(2);
        let t = prog.new_poly(monomial_basis(2, 0, 2));
        prog.add_equality(t.expr()).unwrap();
        let sol = prog.solve(1e-8).unwrap();
        assert!(sol.extract(&t).unwrap().is_zero());
    }

    #[test]
    fn extract_round_trip_random_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis = monomial_basis(3, 0, 3);
        let target =
            Polynomial::from_terms(3, basis.iter().map(|m| (m.clone(), rng.random_range(-2.0..2.0)))).unwrap();
        let mut prog = SosProgram::new(3);
        let t = prog.new_poly(basis);
        prog.add_equality(&t.expr() - &AffinePoly::from(&target)).unwrap();
        let sol = prog.solve(1e-9).unwrap();
        assert!(sol.extract(&t).unwrap().max_coeff_diff(&target) < 1e-8);
    }

    #[test]
    fn extract_from_infeasible_is_an_error() {
        let mut prog = SosProgram::new(1);
        let t = prog.new_poly(vec![Monomial::one(1)]);
        prog.add_sos_constraint(-&AffinePoly::from(&z(1, 0).powi(2))).unwrap();
        let sol = prog.solve(1e-7).unwrap();
        assert!(matches!(sol.extract(&t), Err(SosError::NotFeasible(_))));
    }

    #[test]
    fn compile_is_deterministic() {
        let build = || {
            let mut prog = SosProgram::new(2);
            let v = prog.new_poly(monomial_basis(2, 1, 2));
            let s = prog.new_sos(monomial_basis(2, 0, 1));
            let e = &v.expr() - &s.expr().mul_poly(&Polynomial::sum_of_squares(2)).unwrap();
            prog.add_sos_constraint(e).unwrap();
            prog.compile().unwrap()
        };
        assert_eq!(sdp::write_text(&build()), sdp::write_text(&build()));
    }

    #[test]
    fn maximizing_a_scalar_level() {
        // max t subject to z² + 1 − t·1 SOS → t = 1.
        let mut prog = SosProgram::new(1);
        let t = prog.new_scalar();
        let e = &AffinePoly::from(&(&z(1, 0).powi(2) + &Polynomial::constant(1, 1.0))) - &AffinePoly::scalar(1, t);
        prog.add_sos_constraint(e).unwrap();
        prog.maximize(LinExpr::var(t, 1.0));
        let sol = prog.solve(1e-8).unwrap();
        assert!(sol.is_feasible());
        assert!((sol.value(t).unwrap() - 1.0).abs() < 1e-6);
        assert!(prog.verify(&sol).passes(1e-6));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn larger_basis_keeps_sos_feasible(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = Polynomial::zero(2);
            for _ in 0..3 {
                let q = random_poly(&mut rng, 2, 2);
                s = &s + &(&q * &q);
            }
            prop_assert!(check_sos(&s).unwrap().is_feasible());
            let wide = check_sos_with_basis(&s, Some(monomial_basis(2, 0, 2))).unwrap();
            prop_assert!(wide.is_feasible());
        }

        #[test]
        fn verified_certificates_recompose(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_poly(&mut rng, 2, 2);
            let mut prog = SosProgram::new(2);
            let v = prog.new_poly(monomial_basis(2, 0, 2));
            prog.add_sos_constraint(&AffinePoly::from(&(&q * &q)) + &v.expr()).unwrap();
            prog.add_sos_constraint(-&v.expr()).unwrap();
            let sol = prog.solve(1e-7).unwrap();
            prop_assert!(sol.is_feasible());
            prop_assert!(prog.verify(&sol).passes(1e-6));
        }
    }
}
