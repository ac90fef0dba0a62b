//! Region-of-attraction estimation with SOS certificates: an initial local
//! Lyapunov search, level-set rescaling, the expanding-interior alternation
//! and the outer `p ← V` loop, plus Lyapunov-based clearing-time estimates.
//!
//! Every certified statement is relative to the constraint set `g(z) = 0` of
//! the system; multipliers `λ` absorb the ideal.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{monomial_basis, Monomial, Polynomial};
use crate::powersys::PolySystem;
use crate::shaping::{shape_to_polynomial, EllipsoidShape};
use crate::sim::Trajectory;
use crate::sos::{AffinePoly, CertificateCheck, LinExpr, SosError, SosProgram, SosSolution, SosStatus, SosTemplate, VarId};

#[derive(Debug, Error)]
pub enum RoaError {
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error("no local certificate at configured degrees")]
    NoLocalCertificate,
    #[error("no level set of V fits inside the initial region; V is degenerate")]
    DegenerateLevelSet,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("sampling starved: {accepted} of {tried} draws landed in the level set")]
    Starvation { accepted: usize, tried: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoaOptions {
    pub deg_v: u32,
    pub deg_s: u32,
    /// Coefficient of `l₁ = l₂ = ε Σ zᵢ²`.
    pub eps_l: f64,
    pub tol_beta: f64,
    pub tol_c: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Stop the outer loop when `|β_{k+1} − β_k| / β_k` falls below this.
    pub outer_tol: f64,
    /// Stop the alternation when one pass gains less than this relative `β`.
    pub inner_tol: f64,
    /// Largest `β` any search will certify.
    pub beta_cap: f64,
    pub sdp_tol: f64,
    /// Relative recomposition tolerance for accepting a certificate.
    pub cert_tol: f64,
    /// Positivity of `V` required everywhere instead of on `{p ≤ β}`.
    pub global_positivity: bool,
    /// Use `s₂V − λ₁ᵀg − l₁` for the positivity constraint of the expansion.
    pub literal_positivity: bool,
    /// Include `l₂` in the decrease constraint of the expansion.
    pub strict_decrease: bool,
}

impl Default for RoaOptions {
    fn default() -> Self {
        RoaOptions {
            deg_v: 2,
            deg_s: 2,
            eps_l: 1e-6,
            tol_beta: 1e-3,
            tol_c: 1e-3,
            max_inner: 20,
            max_outer: 5,
            outer_tol: 1e-2,
            inner_tol: 1e-2,
            beta_cap: 1e3,
            sdp_tol: 1e-7,
            cert_tol: 1e-6,
            global_positivity: false,
            literal_positivity: false,
            strict_decrease: true,
        }
    }
}

impl RoaOptions {
    pub fn validate(&self) -> Result<(), RoaError> {
        if self.deg_v == 0 || self.deg_v % 2 != 0 {
            return Err(RoaError::Invalid(format!("deg_V must be even and positive, got {}", self.deg_v)));
        }
        if self.deg_s % 2 != 0 {
            return Err(RoaError::Invalid(format!("multiplier degree must be even, got {}", self.deg_s)));
        }
        for (name, v) in [
            ("eps_l", self.eps_l),
            ("tol_beta", self.tol_beta),
            ("tol_c", self.tol_c),
            ("outer_tol", self.outer_tol),
            ("inner_tol", self.inner_tol),
            ("beta_cap", self.beta_cap),
            ("sdp_tol", self.sdp_tol),
            ("cert_tol", self.cert_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(RoaError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initial,
    LevelSet,
    Expansion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub outer: usize,
    pub inner: usize,
    pub stage: Stage,
    pub beta: f64,
    /// Level found by rescaling; `None` outside that stage.
    pub c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub name: String,
    pub max_recomposition_error: f64,
    pub min_gram_eigenvalue: f64,
}

impl CertificateRecord {
    fn new(name: &str, chk: &CertificateCheck) -> Self {
        CertificateRecord {
            name: name.to_string(),
            max_recomposition_error: chk.max_recomposition_error,
            min_gram_eigenvalue: chk.min_gram_eigenvalue,
        }
    }
}

/// A solved program kept for re-verification.
#[derive(Debug, Clone)]
pub struct Proof {
    pub name: String,
    pub program: SosProgram,
    pub solution: SosSolution,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoaEstimate {
    /// Certified region is `{V ≤ 1}`.
    pub v: Polynomial,
    pub p: Polynomial,
    pub beta: f64,
    pub history: Vec<HistoryEntry>,
    pub certificates: Vec<CertificateRecord>,
    pub diagnostics: Vec<String>,
    pub options: RoaOptions,
    #[serde(skip)]
    pub proofs: Vec<Proof>,
}

impl RoaEstimate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, RoaError> {
        serde_json::from_str(s).map_err(|e| RoaError::Invalid(e.to_string()))
    }

    /// Re-checks every stored certificate.
    pub fn verify_proofs(&self, tol: f64) -> Vec<(String, CertificateCheck)> {
        self.proofs
            .iter()
            .map(|p| (p.name.clone(), p.program.verify(&p.solution)))
            .filter(|(_, c)| !c.passes(tol))
            .collect()
    }
}

fn even_ceil(d: u32) -> u32 {
    d + d % 2
}

fn even_floor(d: u32) -> u32 {
    d - d % 2
}

fn max_degree(ps: &[Polynomial]) -> u32 {
    ps.iter().map(Polynomial::degree).max().unwrap_or(0)
}

pub fn l_poly(nvars: usize, eps: f64) -> Polynomial {
    Polynomial::sum_of_squares(nvars).scale(eps)
}

/// SOS multiplier of degree `deg`; `zero_at_origin` drops the constant
/// monomial from the Gram basis.
fn sos_mult(prog: &mut SosProgram, deg: u32, zero_at_origin: bool) -> Option<SosTemplate> {
    let lo = u32::from(zero_at_origin);
    let hi = deg / 2;
    if hi < lo {
        return None;
    }
    Some(prog.new_sos(monomial_basis(prog.nvars(), lo, hi)))
}

/// `Σ λᵢ gᵢ` with free polynomial multipliers of total degree `target − deg gᵢ`.
fn lambda_term(prog: &mut SosProgram, g: &[Polynomial], target: u32) -> AffinePoly {
    let n = prog.nvars();
    let mut out = AffinePoly::zero(n);
    for gi in g {
        let dg = gi.degree();
        if dg > target {
            continue;
        }
        let lam = prog.new_poly(monomial_basis(n, 0, target - dg));
        out = out.try_add(&lam.expr().mul_poly(gi).expect("same nvars")).expect("same nvars");
    }
    out
}

fn fixed(p: &Polynomial) -> AffinePoly {
    AffinePoly::from(p)
}

/// Solves and accepts only verified feasible certificates.
fn solve_checked(prog: &SosProgram, opts: &RoaOptions) -> Result<Option<(SosSolution, CertificateCheck)>, RoaError> {
    let sdp = prog.compile()?;
    let scale = sdp.equalities.iter().map(|e| e.rhs.abs()).fold(1.0, f64::max);
    let mut sol = prog.solve(opts.sdp_tol)?;
    // A near-optimal point flagged as a numerical failure is still usable
    // once its certificate checks out independently.
    if sol.status == SosStatus::Infeasible || sol.free.iter().any(|x| !x.is_finite()) {
        return Ok(None);
    }
    let chk = prog.verify(&sol);
    if !chk.passes(opts.cert_tol * scale) {
        return Ok(None);
    }
    sol.status = SosStatus::Feasible;
    Ok(Some((sol, chk)))
}

/// Largest parameter in `[min, cap]` accepted by `test`: scan from `start`
/// by `factor` to bracket, then bisect to relative width `tol`.
fn maximize_param<T>(
    start: f64,
    min: f64,
    cap: f64,
    factor: f64,
    tol: f64,
    mut test: impl FnMut(f64) -> Result<Option<T>, RoaError>,
) -> Result<Option<(f64, T)>, RoaError> {
    if min > cap {
        return Ok(None);
    }
    let mut x = start.clamp(min, cap);
    let mut best: Option<(f64, T)>;
    let mut hi = f64::INFINITY;
    match test(x)? {
        Some(t) => {
            best = Some((x, t));
            while x < cap {
                let nx = (x * factor).min(cap);
                match test(nx)? {
                    Some(t) => {
                        best = Some((nx, t));
                        x = nx;
                    }
                    None => {
                        hi = nx;
                        break;
                    }
                }
            }
            if hi.is_infinite() {
                return Ok(best);
            }
        }
        None => {
            hi = x;
            loop {
                if x <= min {
                    return Ok(None);
                }
                let nx = (x / factor).max(min);
                if let Some(t) = test(nx)? {
                    best = Some((nx, t));
                    break;
                }
                hi = nx;
                x = nx;
            }
        }
    }
    let mut lo = best.as_ref().expect("bracketed").0;
    while hi - lo > tol * lo {
        let mid = 0.5 * (lo + hi);
        match test(mid)? {
            Some(t) => {
                lo = mid;
                best = Some((mid, t));
            }
            None => hi = mid,
        }
    }
    Ok(best)
}

/// Equality `Σ coeff(V, zᵢ²) = 1` fixing the scale of an unknown `V`.
fn trace_normalization(n: usize, v: &crate::sos::PolyTemplate) -> AffinePoly {
    let mut e = LinExpr::constant(-1.0);
    for (m, &id) in v.basis.iter().zip(&v.coeff_ids) {
        if m.degree() == 2 && m.exponents().iter().any(|&k| k == 2) {
            e.add_var(VarId::Free(id), 1.0);
        }
    }
    let mut p = AffinePoly::zero(n);
    p.add_term(Monomial::one(n), &e);
    p
}

fn check_inputs(sys: &PolySystem, polys: &[&Polynomial], opts: &RoaOptions) -> Result<(), RoaError> {
    opts.validate()?;
    if sys.f.len() != sys.nvars || sys.nvars == 0 {
        return Err(RoaError::Invalid("vector field length differs from variable count".into()));
    }
    if sys.f.iter().chain(&sys.g).chain(polys.iter().copied()).any(|p| p.nvars() != sys.nvars) {
        return Err(RoaError::Invalid("polynomial variable counts differ".into()));
    }
    Ok(())
}

struct InitialProgram {
    prog: SosProgram,
    v: crate::sos::PolyTemplate,
}

fn initial_program(sys: &PolySystem, p1: &Polynomial, beta: f64, opts: &RoaOptions) -> Result<InitialProgram, RoaError> {
    let n = sys.nvars;
    let mut prog = SosProgram::new(n);
    let v = prog.new_poly(monomial_basis(n, 1, opts.deg_v));
    let ve = v.expr();
    let dv = ve.lie_derivative(&sys.f)?;
    let dp = p1.degree();
    let l = fixed(&l_poly(n, opts.eps_l));
    let region = &Polynomial::constant(n, beta) - p1;

    let t1 = if opts.global_positivity { even_ceil(opts.deg_v) } else { even_ceil(opts.deg_v.max(dp + opts.deg_s)) };
    let mut c1 = ve.try_sub(&l)?.try_sub(&lambda_term(&mut prog, &sys.g, t1))?;
    if !opts.global_positivity {
        if let Some(s2) = sos_mult(&mut prog, even_floor(t1 - dp), true) {
            c1 = c1.try_sub(&s2.expr().mul_poly(&region)?)?;
        }
    }
    prog.add_sos_constraint(c1)?;

    let t2 = even_ceil(dv.degree().max(dp + opts.deg_s));
    let mut c2 = (-&dv).try_sub(&l)?.try_sub(&lambda_term(&mut prog, &sys.g, t2))?;
    if let Some(s6) = sos_mult(&mut prog, even_floor(t2 - dp), true) {
        c2 = c2.try_sub(&s6.expr().mul_poly(&region)?)?;
    }
    prog.add_sos_constraint(c2)?;
    prog.add_equality(trace_normalization(n, &v))?;
    Ok(InitialProgram { prog, v })
}

/// Largest `β₁` (up to the cap) for which a Lyapunov function is certified on
/// `{p₁ ≤ β₁}`, with that function.
pub fn initial_lyapunov(sys: &PolySystem, p1: &Polynomial, opts: &RoaOptions) -> Result<(Polynomial, f64), RoaError> {
    let (v, b, _) = initial_lyapunov_with_proof(sys, p1, opts)?;
    Ok((v, b))
}

fn initial_lyapunov_with_proof(sys: &PolySystem, p1: &Polynomial, opts: &RoaOptions) -> Result<(Polynomial, f64, Proof), RoaError> {
    check_inputs(sys, &[p1], opts)?;
    let found = maximize_param(1.0, 1e-6, opts.beta_cap, 4.0, opts.tol_beta, |beta| {
        let e = initial_program(sys, p1, beta, opts)?;
        Ok(solve_checked(&e.prog, opts)?.map(|(sol, _)| (e, sol)))
    })?;
    let (beta_max, boundary) = found.ok_or(RoaError::NoLocalCertificate)?;
    // The bisection's V has no slack left; later steps need an interior one.
    let beta_b = 0.9 * beta_max;
    let interior = if beta_max < opts.beta_cap * (1.0 - opts.tol_beta) {
        let e = initial_program(sys, p1, beta_b, opts)?;
        solve_checked(&e.prog, opts)?.map(|(sol, _)| (e, sol))
    } else {
        None
    };
    let (beta, (e, sol)) = match interior {
        Some(found) => (beta_b, found),
        None => (beta_max, boundary),
    };
    let v = sol.extract(&e.v)?;
    Ok((v, beta, Proof { name: "initial".into(), program: e.prog, solution: sol }))
}

/// Upper bound on `inf { b(z) : a(z) ≥ 1 }` over sampled admissible states.
/// Sampling falsifier for a claimed `{p ≤ β} ⊆ {V ≤ 1}`; guards against
/// certificates whose residual is small only in absolute terms.
fn containment_plausible(sys: &PolySystem, p: &Polynomial, v: &Polynomial, beta: f64) -> bool {
    containment_bound(sys, v, p, 29).is_none_or(|ub| ub >= beta * (1.0 - 1e-6))
}

fn containment_bound(sys: &PolySystem, a: &Polynomial, b: &Polynomial, seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sys.nvars;
    let mut best = f64::INFINITY;
    let layout = Layout::of(sys);
    for _ in 0..400 {
        let (base, dir) = layout.ray(&mut rng, n);
        let at = |t: f64| {
            let z = &base + &dir * t;
            (a.eval(z.as_slice()), z)
        };
        let (a0, z0) = at(0.0);
        if a0 >= 1.0 {
            best = best.min(b.eval(z0.as_slice()));
            continue;
        }
        let mut hi = 1.0;
        while at(hi).0 < 1.0 {
            hi *= 2.0;
            if hi > 1e4 {
                break;
            }
        }
        if hi > 1e4 {
            continue;
        }
        let mut lo = 0.0;
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if at(mid).0 < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best = best.min(b.eval(at(hi).1.as_slice()));
    }
    best.is_finite().then_some(best)
}

fn level_set_program(v: &Polynomial, p1: &Polynomial, beta: f64, c: f64, sys: &PolySystem, opts: &RoaOptions) -> Result<SosProgram, RoaError> {
    let n = sys.nvars;
    let mut prog = SosProgram::new(n);
    let vc = v - &Polynomial::constant(n, c);
    let pb = p1 - &Polynomial::constant(n, beta);
    let (dv, dp) = (v.degree(), p1.degree());
    let t = even_ceil((2 * dp).max(dv + dp).max(dv + opts.deg_s).max(dp + opts.deg_s));
    let mut e = fixed(&(-&(&pb * &pb)));
    if let Some(s1) = sos_mult(&mut prog, even_floor(t - dv), false) {
        e = e.try_add(&s1.expr().mul_poly(&vc)?)?;
    }
    if let Some(s2) = sos_mult(&mut prog, even_floor(t - dp), false) {
        e = e.try_sub(&s2.expr().mul_poly(&pb)?)?;
    }
    if t >= dv + dp {
        if let Some(s3) = sos_mult(&mut prog, even_floor(t - dv - dp), false) {
            e = e.try_add(&s3.expr().mul_poly(&(&vc * &pb))?)?;
        }
    }
    e = e.try_sub(&lambda_term(&mut prog, &sys.g, t))?;
    prog.add_sos_constraint(e)?;
    Ok(prog)
}

/// Largest `c` with `{V ≤ c} ⊆ {p₁ ≤ β₁}` on the constraint set.
pub fn max_level_set(v: &Polynomial, p1: &Polynomial, beta1: f64, sys: &PolySystem, opts: &RoaOptions) -> Result<f64, RoaError> {
    Ok(max_level_set_with_proof(v, p1, beta1, sys, opts)?.0)
}

fn max_level_set_with_proof(
    v: &Polynomial,
    p1: &Polynomial,
    beta1: f64,
    sys: &PolySystem,
    opts: &RoaOptions,
) -> Result<(f64, Proof), RoaError> {
    check_inputs(sys, &[v, p1], opts)?;
    if !(beta1 > 0.0) {
        return Err(RoaError::Invalid(format!("β must be positive, got {beta1}")));
    }
    let ub = containment_bound(sys, &p1.scale(1.0 / beta1), v, 11);
    let (start, cap) = match ub {
        Some(u) if u > 0.0 => (u, u),
        _ => (1.0, 1e12),
    };
    let found = maximize_param(start, start * 1e-9, cap, 2.0, opts.tol_c, |c| {
        let prog = level_set_program(v, p1, beta1, c, sys, opts)?;
        Ok(solve_checked(&prog, opts)?.map(|(sol, _)| (prog, sol)))
    })?;
    let (c, (program, solution)) = found.ok_or(RoaError::DegenerateLevelSet)?;
    Ok((c, Proof { name: "level_set".into(), program, solution }))
}

/// Multipliers found with `V` fixed. The multiplier on `V̇` has its constant
/// term normalized to one.
struct StepA {
    s8: Polynomial,
    s9: Polynomial,
    s2: Option<Polynomial>,
    proof: Proof,
}

fn expansion_degrees(sys: &PolySystem, p: &Polynomial, opts: &RoaOptions) -> (u32, u32) {
    let df = max_degree(&sys.f);
    let dvdot = opts.deg_v + df.saturating_sub(1);
    let t2 = even_ceil(opts.deg_v.max(p.degree() + opts.deg_s));
    let t3 = even_ceil((opts.deg_v + opts.deg_s).max(dvdot));
    (t2, t3)
}

/// Decrease constraint on `{V ≤ level}` (and in literal mode the positivity
/// constraint) with `V` fixed. The smallest `s₈` (by Gram trace) leaves the
/// most room for the next `V` update.
fn step_a_decrease(sys: &PolySystem, p: &Polynomial, v: &Polynomial, level: f64, opts: &RoaOptions) -> Result<Option<StepA>, RoaError> {
    let n = sys.nvars;
    let mut prog = SosProgram::new(n);
    let (_, t3) = expansion_degrees(sys, p, opts);
    let one_minus_v = &Polynomial::constant(n, level) - v;
    let vdot = v.lie_derivative(&sys.f).map_err(|e| RoaError::Invalid(e.to_string()))?;
    let s8 = sos_mult(&mut prog, even_floor(t3 - opts.deg_v), true);
    let s9 = sos_mult(&mut prog, even_floor(t3 - vdot.degree()), false).expect("degree zero at least");
    let mut norm = LinExpr::constant(-1.0);
    norm.add_var(VarId::Gram { block: s9.gram_id, row: 0, col: 0 }, 1.0);
    let mut s9_norm = AffinePoly::zero(n);
    s9_norm.add_term(Monomial::one(n), &norm);
    prog.add_equality(s9_norm)?;
    let mut c3 = -&s9.expr().mul_poly(&vdot)?;
    if let Some(s8) = &s8 {
        c3 = c3.try_sub(&s8.expr().mul_poly(&one_minus_v)?)?;
        let mut tr = LinExpr::constant(0.0);
        for i in 0..s8.gram_basis.len() {
            tr.add_var(VarId::Gram { block: s8.gram_id, row: i, col: i }, 1.0);
        }
        prog.minimize(tr);
    }
    c3 = c3.try_sub(&lambda_term(&mut prog, &sys.g, t3))?;
    if opts.strict_decrease {
        c3 = c3.try_sub(&fixed(&l_poly(n, opts.eps_l)))?;
    }
    prog.add_sos_constraint(c3)?;
    let s2 = if opts.literal_positivity {
        let t1 = even_ceil(opts.deg_v + opts.deg_s);
        let s2 = sos_mult(&mut prog, even_floor(t1 - opts.deg_v), false).expect("degree zero at least");
        let c1 = s2.expr().mul_poly(v)?.try_sub(&lambda_term(&mut prog, &sys.g, t1))?.try_sub(&fixed(&l_poly(n, opts.eps_l)))?;
        prog.add_sos_constraint(c1)?;
        Some(s2)
    } else {
        None
    };
    let Some((sol, _)) = solve_checked(&prog, opts)? else {
        return Ok(None);
    };
    let s8p = match &s8 {
        Some(t) => sol.extract_sos(t)?,
        None => Polynomial::zero(n),
    };
    let s9p = sol.extract_sos(&s9)?;
    let s2p = match &s2 {
        Some(t) => Some(sol.extract_sos(t)?),
        None => None,
    };
    Ok(Some(StepA { s8: s8p, s9: s9p, s2: s2p, proof: Proof { name: "decrease".into(), program: prog, solution: sol } }))
}

fn containment_program(sys: &PolySystem, p: &Polynomial, v: &Polynomial, beta: f64, opts: &RoaOptions) -> Result<(SosProgram, Option<SosTemplate>), RoaError> {
    let n = sys.nvars;
    let mut prog = SosProgram::new(n);
    let (t2, _) = expansion_degrees(sys, p, opts);
    let region = &Polynomial::constant(n, beta) - p;
    let mut c2 = fixed(&(&Polynomial::constant(n, 1.0) - v)).try_sub(&lambda_term(&mut prog, &sys.g, t2))?;
    let s6 = sos_mult(&mut prog, even_floor(t2 - p.degree()), false);
    if let Some(s6) = &s6 {
        c2 = c2.try_sub(&s6.expr().mul_poly(&region)?)?;
    }
    prog.add_sos_constraint(c2)?;
    Ok((prog, s6))
}

/// Largest `β` with `{p ≤ β} ⊆ {V ≤ 1}`, searched from `start`.
fn step_a_containment(
    sys: &PolySystem,
    p: &Polynomial,
    v: &Polynomial,
    start: f64,
    opts: &RoaOptions,
) -> Result<Option<(f64, Polynomial, Proof)>, RoaError> {
    let ub = containment_bound(sys, v, p, 13).unwrap_or(opts.beta_cap).min(opts.beta_cap);
    let start = start.min(ub);
    let found = maximize_param(start, start * 1e-6, ub, 1.25, opts.tol_beta, |beta| {
        let (prog, s6) = containment_program(sys, p, v, beta, opts)?;
        Ok(solve_checked(&prog, opts)?.map(|(sol, _)| (prog, s6, sol)))
    })?;
    let Some((beta, (program, s6, solution))) = found else {
        return Ok(None);
    };
    let s6p = match &s6 {
        Some(t) => solution.extract_sos(t)?,
        None => Polynomial::zero(sys.nvars),
    };
    Ok(Some((beta, s6p, Proof { name: "containment".into(), program, solution })))
}

/// With `s₆` fixed up to a free non-negative scale and `s₈` fixed, solves
/// for `V` at level `beta`.
fn step_b_program(
    sys: &PolySystem,
    p: &Polynomial,
    a: &StepA,
    s6: &Polynomial,
    beta: f64,
    opts: &RoaOptions,
) -> Result<(SosProgram, crate::sos::PolyTemplate), RoaError> {
    let n = sys.nvars;
    let (t2, t3) = expansion_degrees(sys, p, opts);
    let mut prog = SosProgram::new(n);
    let v = prog.new_poly(monomial_basis(n, 1, opts.deg_v));
    let ve = v.expr();
    let l = fixed(&l_poly(n, opts.eps_l));

    let (mut c1, t1) = match &a.s2 {
        Some(s2) => (ve.mul_poly(s2)?, even_ceil(opts.deg_v + s2.degree())),
        None => (ve.clone(), even_ceil(opts.deg_v)),
    };
    c1 = c1.try_sub(&lambda_term(&mut prog, &sys.g, t1))?.try_sub(&l)?;
    prog.add_sos_constraint(c1)?;

    // −σs₆(β − p) − λ₂ᵀg − (V − 1), σ ≥ 0
    let sigma = prog.new_sos(vec![Monomial::one(n)]);
    let region = &Polynomial::constant(n, beta) - p;
    let mut c2 = (-&sigma.expr().mul_poly(&(s6 * &region))?).try_sub(&ve)?.try_add(&AffinePoly::constant(n, 1.0))?;
    c2 = c2.try_sub(&lambda_term(&mut prog, &sys.g, t2))?;
    prog.add_sos_constraint(c2)?;

    // −s₈(1 − V) − V̇ − λ₃ᵀg − l₂
    let one_minus_v = AffinePoly::constant(n, 1.0).try_sub(&ve)?;
    let mut c3 = (-&one_minus_v.mul_poly(&a.s8)?).try_sub(&ve.lie_derivative(&sys.f)?.mul_poly(&a.s9)?)?;
    c3 = c3.try_sub(&lambda_term(&mut prog, &sys.g, t3))?;
    if opts.strict_decrease {
        c3 = c3.try_sub(&l)?;
    }
    prog.add_sos_constraint(c3)?;
    Ok((prog, v))
}

struct Expansion {
    v: Polynomial,
    beta: f64,
    history: Vec<HistoryEntry>,
    diagnostics: Vec<String>,
    proofs: Vec<Proof>,
}

/// Alternating expansion of `{p ≤ β} ⊆ {V ≤ 1}` starting from a normalized
/// `V0`.
pub fn expand_interior(sys: &PolySystem, p: &Polynomial, v0: &Polynomial, opts: &RoaOptions) -> Result<(Polynomial, f64), RoaError> {
    let e = expand(sys, p, v0, 0, opts)?;
    Ok((e.v, e.beta))
}

fn expand(sys: &PolySystem, p: &Polynomial, v0: &Polynomial, outer: usize, opts: &RoaOptions) -> Result<Expansion, RoaError> {
    check_inputs(sys, &[p, v0], opts)?;
    let mut v = v0.clone();
    let mut history = Vec::new();
    let mut diagnostics = Vec::new();

    let Some((mut beta, mut s6, cont)) = step_a_containment(sys, p, &v, 1.0, opts)? else {
        return Err(RoaError::DegenerateLevelSet);
    };
    history.push(HistoryEntry { outer, inner: 0, stage: Stage::Expansion, beta, c: None });
    let mut cont_proof = cont;
    let mut decrease_proof: Option<Proof> = None;
    let mut expansion_proof: Option<Proof> = None;

    for inner in 1..=opts.max_inner {
        if beta >= opts.beta_cap * (1.0 - opts.tol_beta) {
            break;
        }
        let beta_pass = beta;

        // Largest level on which V still certifiably decreases; rescale V
        // to an interior fraction of it.
        // A level below one happens when V came from a boundary bisection;
        // shrinking is then the only way to a decrease certificate.
        let gamma = maximize_param(1.5, 1e-3, opts.beta_cap, 1.5, opts.tol_c, |g| {
            Ok(step_a_decrease(sys, p, &v, g, opts)?.map(|_| ()))
        })?;
        if let Some((g_max, ())) = gamma {
            let g = if g_max >= 1.0 { 1.0 + 0.9 * (g_max - 1.0) } else { 0.95 * g_max };
            if g > 1.0 + opts.tol_c || g < 1.0 {
                let v_s = v.scale(1.0 / g);
                if let Some((b_new, s6_new, cont)) = step_a_containment(sys, p, &v_s, beta * g.min(1.0), opts)? {
                    if b_new > beta || g < 1.0 {
                        v = v_s;
                        beta = b_new;
                        s6 = s6_new;
                        cont_proof = cont;
                        decrease_proof = None;
                        expansion_proof = None;
                    }
                }
            }
        }

        let Some(a) = step_a_decrease(sys, p, &v, 1.0, opts)? else {
            diagnostics.push(format!("outer {outer} pass {inner}: decrease certificate for the current V failed; stalled"));
            break;
        };
        if expansion_proof.is_none() {
            decrease_proof = Some(a.proof.clone());
        }
        let step_b = maximize_param(beta * 1.5, beta * (1.0 + opts.tol_beta), opts.beta_cap, 1.5, opts.tol_beta, |b| {
            let (prog, vt) = step_b_program(sys, p, &a, &s6, b, opts)?;
            let Some((sol, _)) = solve_checked(&prog, opts)? else {
                return Ok(None);
            };
            if !containment_plausible(sys, p, &sol.extract(&vt)?, b) {
                return Ok(None);
            }
            Ok(Some((prog, vt, sol)))
        })?;
        if let Some((b_max, first)) = step_b {
            // The bisection's last V sits on the feasibility boundary; back
            // off for an interior one.
            let b_target = beta + 0.9 * (b_max - beta);
            let (prog, vt, sol) = {
                let (prog, vt) = step_b_program(sys, p, &a, &s6, b_target, opts)?;
                match solve_checked(&prog, opts)? {
                    Some((sol, _)) if containment_plausible(sys, p, &sol.extract(&vt)?, b_target) => (prog, vt, sol),
                    _ => first,
                }
            };
            let v_new = sol.extract(&vt)?;
            match step_a_containment(sys, p, &v_new, b_target, opts)? {
                Some((b_new, s6_new, cont)) if b_new > beta => {
                    v = v_new;
                    beta = b_new;
                    s6 = s6_new;
                    cont_proof = cont;
                    decrease_proof = None;
                    expansion_proof = Some(Proof { name: "expansion".into(), program: prog, solution: sol });
                }
                Some((b_new, _, _)) => {
                    diagnostics.push(format!("outer {outer} pass {inner}: updated V certified only β = {b_new} ≤ {beta}; kept previous"));
                }
                None => {
                    diagnostics.push(format!("outer {outer} pass {inner}: containment for the updated V failed; kept previous"));
                }
            }
        }
        if decrease_proof.is_none() && expansion_proof.is_none() {
            // V was rescaled without a V update: certify decrease afresh.
            match step_a_decrease(sys, p, &v, 1.0, opts)? {
                Some(a) => decrease_proof = Some(a.proof),
                None => return Err(RoaError::NoLocalCertificate),
            }
        }
        if beta > beta_pass {
            history.push(HistoryEntry { outer, inner, stage: Stage::Expansion, beta, c: None });
        }
        if (beta - beta_pass) / beta_pass < opts.inner_tol {
            if beta == beta_pass {
                diagnostics.push(format!("outer {outer} pass {inner}: no gain beyond β = {beta}; stalled"));
            }
            break;
        }
    }
    if decrease_proof.is_none() && expansion_proof.is_none() {
        if let Some(a) = step_a_decrease(sys, p, &v, 1.0, opts)? {
            decrease_proof = Some(a.proof);
        }
    }
    let proofs = expansion_proof.into_iter().chain(decrease_proof).chain(std::iter::once(cont_proof)).collect();
    Ok(Expansion { v, beta, history, diagnostics, proofs })
}

/// Full pipeline from a shape to a certified estimate.
pub fn estimate_roa(sys: &PolySystem, shape: &EllipsoidShape, opts: &RoaOptions) -> Result<RoaEstimate, RoaError> {
    if shape.dim() != sys.nvars {
        return Err(RoaError::Invalid(format!("shape is {}-dimensional, system has {} variables", shape.dim(), sys.nvars)));
    }
    let p0 = shape_to_polynomial(shape);
    estimate_roa_from(sys, &p0, opts)
}

pub fn estimate_roa_from(sys: &PolySystem, p0: &Polynomial, opts: &RoaOptions) -> Result<RoaEstimate, RoaError> {
    check_inputs(sys, &[p0], opts)?;
    let mut history = Vec::new();
    let mut diagnostics = Vec::new();
    let (mut v1, mut beta1, mut init_proof) = initial_lyapunov_with_proof(sys, p0, opts)?;
    let level = match max_level_set_with_proof(&v1, p0, beta1, sys, opts) {
        Err(RoaError::DegenerateLevelSet) if !opts.global_positivity => {
            // A V positive only on {p₁ ≤ β₁} can have unbounded sublevel sets.
            diagnostics.push("localized V has no bounded level set inside {p₁ ≤ β₁}; retried with global positivity".to_string());
            let global = RoaOptions { global_positivity: true, ..opts.clone() };
            (v1, beta1, init_proof) = initial_lyapunov_with_proof(sys, p0, &global)?;
            max_level_set_with_proof(&v1, p0, beta1, sys, opts)
        }
        r => r,
    };
    history.push(HistoryEntry { outer: 0, inner: 0, stage: Stage::Initial, beta: beta1, c: None });
    let (c, level_proof) = level?;
    history.push(HistoryEntry { outer: 0, inner: 0, stage: Stage::LevelSet, beta: beta1, c: Some(c) });
    let mut v = v1.scale(1.0 / c);
    let mut p = p0.clone();
    let mut proofs = vec![init_proof, level_proof];
    let mut beta = beta1;
    for outer in 0..opts.max_outer {
        let e = match expand(sys, &p, &v, outer, opts) {
            Ok(e) => e,
            Err(err) if outer > 0 => {
                diagnostics.push(format!("outer {outer}: {err}; kept previous estimate"));
                break;
            }
            Err(err) => return Err(err),
        };
        history.extend(e.history);
        diagnostics.extend(e.diagnostics);
        proofs.retain(|pr| pr.name == "initial" || pr.name == "level_set");
        proofs.extend(e.proofs);
        v = e.v;
        beta = e.beta;
        // From the second round on p is the previous V, so β = 1 means the
        // certified set did not grow.
        if beta >= opts.beta_cap * (1.0 - opts.tol_beta) || (outer > 0 && beta < 1.0 + opts.outer_tol) {
            break;
        }
        if outer + 1 < opts.max_outer {
            p = v.clone();
        }
    }
    let mut certificates = Vec::new();
    for pr in &proofs {
        certificates.push(CertificateRecord::new(&pr.name, &pr.program.verify(&pr.solution)));
    }
    Ok(RoaEstimate { v, p, beta, history, certificates, diagnostics, options: opts.clone(), proofs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CctReport {
    pub cct_lyapunov: f64,
    /// First sample with `V > 1`.
    pub crossing_index: Option<usize>,
    pub v_trace: Vec<(f64, f64)>,
    pub lower_bound_only: bool,
    pub diagnostic: Option<String>,
}

/// First time the fault-on trajectory (in `z`) leaves `{V ≤ 1}`, linearly
/// interpolated between samples.
pub fn lyapunov_cct(v: &Polynomial, traj_z: &Trajectory) -> CctReport {
    let t0 = traj_z.times.first().copied().unwrap_or(0.0);
    let v_trace: Vec<(f64, f64)> = traj_z.times.iter().zip(&traj_z.states).map(|(t, z)| (*t, v.eval(z.as_slice()))).collect();
    if let Some(&(_, v0)) = v_trace.first() {
        if v0 > 1.0 {
            return CctReport {
                cct_lyapunov: 0.0,
                crossing_index: Some(0),
                v_trace,
                lower_bound_only: false,
                diagnostic: Some(format!("trajectory starts outside the certified region (V = {v0})")),
            };
        }
    }
    match v_trace.iter().position(|&(_, val)| val > 1.0) {
        Some(i) => {
            let (ta, va) = v_trace[i - 1];
            let (tb, vb) = v_trace[i];
            let t = ta + (1.0 - va) / (vb - va) * (tb - ta);
            CctReport { cct_lyapunov: t - t0, crossing_index: Some(i), v_trace, lower_bound_only: false, diagnostic: None }
        }
        None => {
            let end = v_trace.last().map_or(t0, |x| x.0);
            let diagnostic = traj_z.diverged.then(|| "trajectory diverged inside the window".to_string());
            CctReport { cct_lyapunov: end - t0, crossing_index: None, v_trace, lower_bound_only: true, diagnostic }
        }
    }
}

/// How to draw admissible states of a system.
#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    /// Unconstrained coordinates.
    Plain,
    /// Speeds then `(sin, 1 − cos)` pairs for `nk` machines.
    Machine { nk: usize },
}

impl Layout {
    pub fn of(sys: &PolySystem) -> Layout {
        match &sys.sep {
            Some(sep) if !sys.g.is_empty() && sys.nvars == 3 * (sep.len() / 2) => Layout::Machine { nk: sep.len() / 2 },
            _ => Layout::Plain,
        }
    }

    /// Admissible state from angles and speeds.
    pub fn machine_point(nk: usize, phi: &[f64], w: &[f64]) -> DVector<f64> {
        let mut z = DVector::zeros(3 * nk);
        for k in 0..nk {
            z[k] = w[k];
            z[nk + 2 * k] = phi[k].sin();
            z[nk + 2 * k + 1] = 1.0 - phi[k].cos();
        }
        z
    }

    /// A base point and a direction whose ray stays admissible.
    fn ray(&self, rng: &mut ChaCha8Rng, n: usize) -> (DVector<f64>, DVector<f64>) {
        let unit = |rng: &mut ChaCha8Rng, m: usize| {
            let d = DVector::from_fn(m, |_, _| {
                let u: f64 = rng.random_range(-1.0..1.0);
                u
            });
            let nd = d.norm();
            if nd > 0.0 { d / nd } else { DVector::from_element(m, 1.0 / (m as f64).sqrt()) }
        };
        match *self {
            Layout::Plain => (DVector::zeros(n), unit(rng, n)),
            Layout::Machine { nk } => {
                let phi: Vec<f64> = (0..nk).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
                let base = Layout::machine_point(nk, &phi, &vec![0.0; nk]);
                let dw = unit(rng, nk);
                let mut dir = DVector::zeros(n);
                for k in 0..nk {
                    dir[k] = dw[k];
                }
                (base, dir)
            }
        }
    }
}

/// Rejection sampling of admissible states in `{V ≤ level}`.
pub fn sample_level_set(sys: &PolySystem, v: &Polynomial, level: f64, count: usize, seed: u64) -> Result<Vec<DVector<f64>>, RoaError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let n = sys.nvars;
    let layout = Layout::of(sys);
    // Bounding box from the level-set boundary along random rays.
    let scaled = v.scale(1.0 / level);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut radius: f64 = 0.0;
    for _ in 0..400 {
        let (base, dir) = layout.ray(&mut rng, n);
        if scaled.eval(base.as_slice()) > 1.0 {
            continue;
        }
        let f = |t: f64| scaled.eval((&base + &dir * t).as_slice());
        let mut hi = 1e-3;
        while f(hi) <= 1.0 && hi < 1e4 {
            hi *= 2.0;
        }
        radius = radius.max(hi);
    }
    if radius == 0.0 {
        return Err(RoaError::Starvation { accepted: 0, tried: 400 });
    }
    let radius = radius * 1.25;
    let max_tries = (count as f64 / 1e-4).ceil() as usize;
    let mut out = Vec::with_capacity(count);
    let mut tried = 0;
    while out.len() < count && tried < max_tries {
        tried += 1;
        let z = match layout {
            Layout::Plain => DVector::from_fn(n, |_, _| rng.random_range(-radius..radius)),
            Layout::Machine { nk } => {
                let phi: Vec<f64> = (0..nk).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
                let w: Vec<f64> = (0..nk).map(|_| rng.random_range(-radius..radius)).collect();
                Layout::machine_point(nk, &phi, &w)
            }
        };
        if scaled.eval(z.as_slice()) <= 1.0 {
            out.push(z);
        }
    }
    if out.len() < count {
        return Err(RoaError::Starvation { accepted: out.len(), tried });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCheck {
    pub samples: usize,
    pub max_v_dot: f64,
    pub min_v_off_origin: f64,
    pub failures: usize,
}

/// Samples `{V ≤ 1}` and checks `V > 0` off the origin and `V̇ < threshold`.
pub fn check_by_sampling(sys: &PolySystem, v: &Polynomial, count: usize, seed: u64, threshold: f64) -> Result<SampleCheck, RoaError> {
    let vdot = v.lie_derivative(&sys.f).map_err(|e| RoaError::Invalid(e.to_string()))?;
    let pts = sample_level_set(sys, v, 1.0, count, seed)?;
    let mut max_v_dot = f64::NEG_INFINITY;
    let mut min_v = f64::INFINITY;
    let mut failures = 0;
    for z in &pts {
        let vz = v.eval(z.as_slice());
        let dz = vdot.eval(z.as_slice());
        let off = z.norm() > 1e-9;
        max_v_dot = max_v_dot.max(dz);
        if off {
            min_v = min_v.min(vz);
        }
        if (off && vz <= 0.0) || dz >= threshold {
            failures += 1;
        }
    }
    Ok(SampleCheck { samples: pts.len(), max_v_dot, min_v_off_origin: min_v, failures })
}
