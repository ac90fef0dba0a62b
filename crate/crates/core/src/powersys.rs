//! Classical multi-machine swing model in a single-machine reference frame
//! and its exact polynomial recasting.
//!
//! Machine states are relative angles `δ_i − δ_r` and speeds `ω_i − ω_r` for
//! every machine `i` other than the reference `r`, in machine order. The
//! polynomial coordinates for the `k`-th non-reference machine are
//! `z[k] = ω`, `z[K + 2k] = sin(δ − δˢ)` and `z[K + 2k + 1] = 1 − cos(δ − δˢ)`
//! with `K = n_g − 1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::Polynomial;

pub const SEP_RESIDUAL_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum PowerError {
    #[error("network data: {0}")]
    Invalid(String),
    #[error("damping ratios D/M differ: machine {machine} has {ratio}, machine 1 has {first}")]
    NonUniformDamping { machine: usize, ratio: f64, first: f64 },
    #[error("{what} is not symmetric at ({row}, {col}): {a} vs {b}")]
    Asymmetric { what: String, row: usize, col: usize, a: f64, b: f64 },
    #[error("equilibrium search did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("equilibrium is not asymptotically stable (max real part {0})")]
    Unstable(f64),
    #[error("equilibrium residual {0} exceeds tolerance")]
    SepResidual(f64),
    #[error("state does not satisfy the trigonometric constraints (residual {0})")]
    ConstraintViolation(f64),
    #[error("expected a state of length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkData {
    pub m: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub pm: Vec<f64>,
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Zero-based index of the reference machine.
    pub reference: usize,
}

/// Relative angles then relative speeds, `2(n_g − 1)` entries.
pub type MachineState = DVector<f64>;

impl NetworkData {
    pub fn new(
        m: Vec<f64>,
        d: Vec<f64>,
        e: Vec<f64>,
        pm: Vec<f64>,
        g: DMatrix<f64>,
        b: DMatrix<f64>,
        reference: usize,
    ) -> Result<Self, PowerError> {
        let nd = NetworkData { m, d, e, pm, g, b, reference };
        nd.validate()?;
        Ok(nd)
    }

    pub fn n_g(&self) -> usize {
        self.m.len()
    }

    pub fn state_dim(&self) -> usize {
        2 * (self.n_g() - 1)
    }

    pub fn validate(&self) -> Result<(), PowerError> {
        let n = self.n_g();
        if n < 2 {
            return Err(PowerError::Invalid("at least two machines are required".into()));
        }
        for (name, v) in [("D", &self.d), ("E", &self.e), ("Pm", &self.pm)] {
            if v.len() != n {
                return Err(PowerError::Invalid(format!("{name} has {} entries, expected {n}", v.len())));
            }
        }
        if self.reference >= n {
            return Err(PowerError::Invalid(format!("reference machine {} out of range", self.reference + 1)));
        }
        for (what, mat) in [("G", &self.g), ("B", &self.b)] {
            if mat.shape() != (n, n) {
                return Err(PowerError::Invalid(format!("{what} must be {n}x{n}")));
            }
            for i in 0..n {
                for j in i + 1..n {
                    let (a, b) = (mat[(i, j)], mat[(j, i)]);
                    if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                        return Err(PowerError::Asymmetric { what: what.into(), row: i + 1, col: j + 1, a, b });
                    }
                }
            }
        }
        if let Some(i) = self.m.iter().position(|&m| !(m > 0.0)) {
            return Err(PowerError::Invalid(format!("machine {} has non-positive inertia", i + 1)));
        }
        let first = self.d[0] / self.m[0];
        for i in 1..n {
            let ratio = self.d[i] / self.m[i];
            if (ratio - first).abs() > 1e-9 * (1.0 + first.abs()) {
                return Err(PowerError::NonUniformDamping { machine: i + 1, ratio, first });
            }
        }
        Ok(())
    }

    /// Indices of the non-reference machines, in order.
    pub fn others(&self) -> Vec<usize> {
        (0..self.n_g()).filter(|&i| i != self.reference).collect()
    }

    pub fn damping_ratio(&self) -> f64 {
        self.d[0] / self.m[0]
    }

    /// Absolute angles with the reference at zero.
    fn full_angles(&self, rel: &[f64]) -> Vec<f64> {
        let mut th = vec![0.0; self.n_g()];
        for (k, i) in self.others().into_iter().enumerate() {
            th[i] = rel[k];
        }
        th
    }

    /// Electrical power output of every machine.
    pub fn electrical_power(&self, rel_angles: &[f64]) -> Vec<f64> {
        let th = self.full_angles(rel_angles);
        let n = self.n_g();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let t = th[i] - th[j];
                        self.e[i] * self.e[j] * (self.g[(i, j)] * t.cos() + self.b[(i, j)] * t.sin())
                    })
                    .sum()
            })
            .collect()
    }

    /// Relative accelerations at zero relative speed.
    fn accel(&self, rel_angles: &[f64]) -> Vec<f64> {
        let pe = self.electrical_power(rel_angles);
        let r = self.reference;
        let ref_acc = (self.pm[r] - pe[r]) / self.m[r];
        self.others().into_iter().map(|i| (self.pm[i] - pe[i]) / self.m[i] - ref_acc).collect()
    }

    /// Jacobian of [`Self::accel`] with respect to the relative angles.
    fn accel_jacobian(&self, rel_angles: &[f64]) -> DMatrix<f64> {
        let th = self.full_angles(rel_angles);
        let n = self.n_g();
        // dPe[i]/dθ[k] for absolute angles.
        let mut dpe = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let t = th[i] - th[j];
                let ee = self.e[i] * self.e[j];
                let v = ee * (-self.g[(i, j)] * t.sin() + self.b[(i, j)] * t.cos());
                dpe[(i, i)] += v;
                dpe[(i, j)] -= v;
            }
        }
        let others = self.others();
        let r = self.reference;
        DMatrix::from_fn(others.len(), others.len(), |a, b| {
            let (i, k) = (others[a], others[b]);
            -dpe[(i, k)] / self.m[i] + dpe[(r, k)] / self.m[r]
        })
    }
}

/// Swing dynamics `[δ̇; ω̇]` for a relative state.
pub fn swing_rhs(x: &MachineState, nd: &NetworkData) -> MachineState {
    let k = nd.n_g() - 1;
    let acc = nd.accel(&x.as_slice()[..k]);
    let c = nd.damping_ratio();
    let mut dx = DVector::zeros(2 * k);
    for i in 0..k {
        dx[i] = x[k + i];
        dx[k + i] = acc[i] - c * x[k + i];
    }
    dx
}

/// Jacobian of [`swing_rhs`].
pub fn swing_jacobian(x: &MachineState, nd: &NetworkData) -> DMatrix<f64> {
    let k = nd.n_g() - 1;
    let ja = nd.accel_jacobian(&x.as_slice()[..k]);
    let mut j = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        j[(i, k + i)] = 1.0;
        j[(k + i, k + i)] = -nd.damping_ratio();
        for l in 0..k {
            j[(k + i, l)] = ja[(i, l)];
        }
    }
    j
}

/// Newton solve for an equilibrium, followed by a stability check.
pub fn find_sep(nd: &NetworkData, guess: &MachineState) -> Result<MachineState, PowerError> {
    nd.validate()?;
    let k = nd.n_g() - 1;
    if guess.len() != 2 * k {
        return Err(PowerError::Dimension { expected: 2 * k, got: guess.len() });
    }
    let mut th: Vec<f64> = guess.as_slice()[..k].to_vec();
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITER {
        let f = DVector::from_vec(nd.accel(&th));
        if !f.iter().all(|v| v.is_finite()) {
            break;
        }
        if f.amax() < 1e-13 {
            converged = true;
            break;
        }
        let j = nd.accel_jacobian(&th);
        let Some(step) = j.lu().solve(&f) else {
            break;
        };
        // Damp very large steps so Newton stays in the guess's basin.
        let scale = (1.0 / step.amax()).min(1.0);
        for i in 0..k {
            th[i] -= scale * step[i];
        }
    }
    let resid = DVector::from_vec(nd.accel(&th)).amax();
    if !converged && !(resid < SEP_RESIDUAL_TOL) {
        return Err(PowerError::NoConvergence(NEWTON_MAX_ITER));
    }
    let mut x = DVector::zeros(2 * k);
    for i in 0..k {
        x[i] = th[i];
    }
    let max_re = swing_jacobian(&x, nd).complex_eigenvalues().iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
    if !(max_re < 0.0) {
        return Err(PowerError::Unstable(max_re));
    }
    Ok(x)
}

/// Polynomial vector field `ż = f(z)` with algebraic constraints `g(z) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySystem {
    pub nvars: usize,
    pub f: Vec<Polynomial>,
    pub g: Vec<Polynomial>,
    pub sep: Option<MachineState>,
}

impl PolySystem {
    /// An unconstrained system.
    pub fn unconstrained(f: Vec<Polynomial>) -> Self {
        let nvars = f.first().map(|p| p.nvars()).unwrap_or(0);
        PolySystem { nvars, f, g: Vec::new(), sep: None }
    }

    pub fn eval_f(&self, z: &[f64]) -> Vec<f64> {
        self.f.iter().map(|p| p.eval(z)).collect()
    }

    pub fn constraint_residual(&self, z: &[f64]) -> f64 {
        self.g.iter().map(|p| p.eval(z).abs()).fold(0.0, f64::max)
    }
}

fn sin_idx(k: usize, nk: usize) -> usize {
    nk + 2 * k
}

fn cos_idx(k: usize, nk: usize) -> usize {
    nk + 2 * k + 1
}

/// Recasts the swing dynamics around `sep` as a polynomial system.
pub fn to_polynomial_system(nd: &NetworkData, sep: &MachineState) -> Result<PolySystem, PowerError> {
    nd.validate()?;
    let nk = nd.n_g() - 1;
    if sep.len() != 2 * nk {
        return Err(PowerError::Dimension { expected: 2 * nk, got: sep.len() });
    }
    let resid = swing_rhs(sep, nd).amax();
    if !(resid < 1e-8) {
        return Err(PowerError::SepResidual(resid));
    }
    let nv = 3 * nk;
    let n = nd.n_g();
    let others = nd.others();
    let one = Polynomial::constant(nv, 1.0);
    // sin φ and cos φ of each machine's deviation from the SEP; zero for the reference.
    let mut sphi = vec![Polynomial::zero(nv); n];
    let mut cphi = vec![one.clone(); n];
    for (k, &i) in others.iter().enumerate() {
        sphi[i] = Polynomial::var(nv, sin_idx(k, nk));
        cphi[i] = &one - &Polynomial::var(nv, cos_idx(k, nk));
    }
    let th = nd.full_angles(&sep.as_slice()[..nk]);
    let pe: Vec<Polynomial> = (0..n)
        .map(|i| {
            let mut acc = Polynomial::zero(nv);
            for j in 0..n {
                let ee = nd.e[i] * nd.e[j];
                if ee == 0.0 || (nd.g[(i, j)] == 0.0 && nd.b[(i, j)] == 0.0) {
                    continue;
                }
                let ts = th[i] - th[j];
                let (st, ct) = ts.sin_cos();
                // cos/sin of the deviation difference φ_i − φ_j.
                let cd = &(&cphi[i] * &cphi[j]) + &(&sphi[i] * &sphi[j]);
                let sd = &(&sphi[i] * &cphi[j]) - &(&cphi[i] * &sphi[j]);
                let cos_t = &(&cd * ct) - &(&sd * st);
                let sin_t = &(&sd * ct) + &(&cd * st);
                acc = &acc + &(&(&cos_t * (ee * nd.g[(i, j)])) + &(&sin_t * (ee * nd.b[(i, j)])));
            }
            acc
        })
        .collect();
    let r = nd.reference;
    let ref_acc = &(&Polynomial::constant(nv, nd.pm[r]) - &pe[r]) * (1.0 / nd.m[r]);
    let c = nd.damping_ratio();
    let mut f = vec![Polynomial::zero(nv); nv];
    let mut g = Vec::with_capacity(nk);
    for (k, &i) in others.iter().enumerate() {
        let w = Polynomial::var(nv, k);
        let s = Polynomial::var(nv, sin_idx(k, nk));
        let cc = Polynomial::var(nv, cos_idx(k, nk));
        let acc = &(&(&Polynomial::constant(nv, nd.pm[i]) - &pe[i]) * (1.0 / nd.m[i])) - &ref_acc;
        let mut fw = &acc - &(&w * c);
        // Drop the equilibrium residual so the origin is an exact equilibrium.
        let c0 = fw.coeff(&crate::poly::Monomial::one(nv));
        fw.add_term(crate::poly::Monomial::one(nv), -c0);
        f[k] = fw;
        f[sin_idx(k, nk)] = &(&one - &cc) * &w;
        f[cos_idx(k, nk)] = &s * &w;
        g.push(&(&(&s * &s) + &(&cc * &cc)) - &(&cc * 2.0));
    }
    Ok(PolySystem { nvars: nv, f, g, sep: Some(sep.clone()) })
}

/// Maps a machine state to polynomial coordinates around `sep`.
pub fn transform(x: &MachineState, sep: &MachineState) -> Result<DVector<f64>, PowerError> {
    if x.len() != sep.len() || x.len() % 2 != 0 {
        return Err(PowerError::Dimension { expected: sep.len(), got: x.len() });
    }
    let nk = x.len() / 2;
    let mut z = DVector::zeros(3 * nk);
    for k in 0..nk {
        let phi = x[k] - sep[k];
        z[k] = x[nk + k] - sep[nk + k];
        z[sin_idx(k, nk)] = phi.sin();
        z[cos_idx(k, nk)] = 1.0 - phi.cos();
    }
    Ok(z)
}

/// Inverse of [`transform`] on the principal branch `(−π, π]`.
pub fn inverse_transform(z: &DVector<f64>, sep: &MachineState) -> Result<MachineState, PowerError> {
    let nk = sep.len() / 2;
    if z.len() != 3 * nk {
        return Err(PowerError::Dimension { expected: 3 * nk, got: z.len() });
    }
    let mut x = DVector::zeros(2 * nk);
    for k in 0..nk {
        let s = z[sin_idx(k, nk)];
        let c = z[cos_idx(k, nk)];
        let resid = (s * s + c * c - 2.0 * c).abs();
        if resid > 1e-8 {
            return Err(PowerError::ConstraintViolation(resid));
        }
        x[k] = sep[k] + s.atan2(1.0 - c);
        x[nk + k] = sep[nk + k] + z[k];
    }
    Ok(x)
}

/// Machine parameters as they appear in a system file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MachineConfig {
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "Pm")]
    pub pm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PhaseConfig {
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    /// Optional per-phase mechanical power override.
    #[serde(rename = "Pm", default, skip_serializing_if = "Option::is_none")]
    pub pm: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Phases {
    pub prefault: PhaseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<PhaseConfig>,
    pub postfault: PhaseConfig,
}

/// System file: machines, one-based reference index, and per-phase reduced
/// admittance matrices.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemConfig {
    pub machines: Vec<MachineConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<usize>,
    pub phases: Phases,
}

impl SystemConfig {
    pub fn phase(&self, name: &str) -> Result<NetworkData, PowerError> {
        let ph = match name {
            "prefault" => &self.phases.prefault,
            "fault" => self.phases.fault.as_ref().ok_or_else(|| PowerError::Invalid("no fault phase".into()))?,
            "postfault" => &self.phases.postfault,
            other => return Err(PowerError::Invalid(format!("unknown phase {other}"))),
        };
        let n = self.machines.len();
        let to_mat = |what: &str, rows: &Vec<Vec<f64>>| -> Result<DMatrix<f64>, PowerError> {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(PowerError::Invalid(format!("phases.{name}.{what} must be {n}x{n}")));
            }
            Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        };
        let g = to_mat("G", &ph.g)?;
        let b = to_mat("B", &ph.b)?;
        let pm = match &ph.pm {
            Some(p) => p.clone(),
            None => self.machines.iter().map(|m| m.pm).collect(),
        };
        let reference = match self.reference {
            Some(0) => return Err(PowerError::Invalid("reference is one-based".into())),
            Some(r) => r - 1,
            None => n.saturating_sub(1),
        };
        NetworkData::new(
            self.machines.iter().map(|m| m.m).collect(),
            self.machines.iter().map(|m| m.d).collect(),
            self.machines.iter().map(|m| m.e).collect(),
            pm,
            g,
            b,
            reference,
        )
        .map_err(|e| match e {
            PowerError::Asymmetric { what, row, col, a, b } => {
                PowerError::Asymmetric { what: format!("phases.{name}.{what}"), row, col, a, b }
            }
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two machines, lossless, `M_eq ω̇ = Pm − E1E2B sin δ`.
    fn smib(pm: f64, eeb: f64, dm: f64) -> NetworkData {
        let m = vec![0.1, 0.1];
        let b = DMatrix::from_row_slice(2, 2, &[0.0, eeb, eeb, 0.0]);
        NetworkData::new(m.clone(), m.iter().map(|x| x * dm).collect(), vec![1.0, 1.0], vec![pm, -pm], DMatrix::zeros(2, 2), b, 1)
            .unwrap()
    }

    pub(crate) fn random_system(rng: &mut ChaCha8Rng, n: usize) -> NetworkData {
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.3)).collect();
        let d = m.iter().map(|x| 2.0 * x).collect();
        let e = (0..n).map(|_| rng.random_range(0.95..1.15)).collect();
        let mut g = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let gij = rng.random_range(0.0..0.2);
                let bij = rng.random_range(0.5..1.5);
                g[(i, j)] = gij;
                g[(j, i)] = gij;
                b[(i, j)] = bij;
                b[(j, i)] = bij;
            }
            g[(i, i)] = rng.random_range(0.1..0.4);
            b[(i, i)] = -rng.random_range(1.0..3.0);
        }
        let mut pm: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
        // Offset by the flat-angle losses so a nearby SEP exists.
        let mut nd = NetworkData { m, d, e, pm: pm.clone(), g, b, reference: n - 1 };
        let pe0 = nd.electrical_power(&vec![0.0; n - 1]);
        for i in 0..n {
            pm[i] += pe0[i];
        }
        nd.pm = pm;
        nd
    }

    #[test]
    fn smib_sep_matches_arcsin() {
        let nd = smib(0.5, 1.0, 2.0);
        let sep = find_sep(&nd, &DVector::zeros(2)).unwrap();
        assert!((sep[0] - 0.5f64.asin()).abs() < 1e-10);
        assert_eq!(sep[1], 0.0);
        assert!(swing_rhs(&sep, &nd).amax() < 1e-10);
    }

    #[test]
    fn unstable_equilibrium_is_rejected() {
        let nd = smib(0.5, 1.0, 2.0);
        let guess = DVector::from_vec(vec![std::f64::consts::PI - 0.5f64.asin(), 0.0]);
        assert!(matches!(find_sep(&nd, &guess), Err(PowerError::Unstable(_))));
    }

    #[test]
    fn non_uniform_damping_is_rejected() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let r = NetworkData::new(vec![1.0, 1.0], vec![2.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0], DMatrix::zeros(2, 2), b, 1);
        assert!(matches!(r, Err(PowerError::NonUniformDamping { machine: 2, .. })));
    }

    #[test]
    fn asymmetric_admittance_is_rejected() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.9, 0.0]);
        let r = NetworkData::new(vec![1.0, 1.0], vec![2.0, 2.0], vec![1.0, 1.0], vec![0.0, 0.0], DMatrix::zeros(2, 2), b, 1);
        assert!(matches!(r, Err(PowerError::Asymmetric { row: 1, col: 2, .. })));
    }

    #[test]
    fn random_seps_have_zero_speed_and_small_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let nd = random_system(&mut rng, 3);
            let sep = find_sep(&nd, &DVector::zeros(4)).unwrap();
            assert_eq!(sep[2], 0.0);
            assert_eq!(sep[3], 0.0);
            assert!(swing_rhs(&sep, &nd).amax() < 1e-10);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nd = random_system(&mut rng, 3);
        let x = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.4]);
        let j = swing_jacobian(&x, &nd);
        let h = 1e-6;
        for c in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let fd = (swing_rhs(&xp, &nd) - swing_rhs(&xm, &nd)) / (2.0 * h);
            assert!((fd - j.column(c)).amax() < 1e-7);
        }
    }

    #[test]
    fn common_angle_shift_leaves_dynamics_unchanged() {
        // Relative dynamics depend only on differences: evaluating the
        // electrical power at shifted absolute angles gives the same result.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nd = random_system(&mut rng, 3);
        let rel = [0.3, -0.1];
        let pe = nd.electrical_power(&rel);
        let abs: Vec<f64> = vec![rel[0] + 1.7, rel[1] + 1.7, 1.7];
        let pe_shift: Vec<f64> = (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| {
                        let t = abs[i] - abs[j];
                        nd.e[i] * nd.e[j] * (nd.g[(i, j)] * t.cos() + nd.b[(i, j)] * t.sin())
                    })
                    .sum::<f64>()
            })
            .collect();
        for i in 0..3 {
            assert!((pe[i] - pe_shift[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn transform_examples_and_round_trip() {
        let sep = DVector::from_vec(vec![0.2, -0.1, 0.0, 0.0]);
        assert!(transform(&sep, &sep).unwrap().amax() < 1e-15);
        let x = DVector::from_vec(vec![0.2 + std::f64::consts::FRAC_PI_2, -0.1, 0.0, 0.0]);
        let z = transform(&x, &sep).unwrap();
        assert!((z[2] - 1.0).abs() < 1e-15 && (z[3] - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x = DVector::from_vec(vec![
                0.2 + rng.random_range(-3.14..3.14),
                -0.1 + rng.random_range(-3.14..3.14),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ]);
            let back = inverse_transform(&transform(&x, &sep).unwrap(), &sep).unwrap();
            assert!((back - &x).amax() < 1e-12);
        }
    }

    #[test]
    fn inverse_rejects_constraint_violation() {
        let sep = DVector::zeros(2);
        let z = DVector::from_vec(vec![0.0, 0.5, 0.0]);
        assert!(matches!(inverse_transform(&z, &sep), Err(PowerError::ConstraintViolation(_))));
    }

    #[test]
    fn polynomial_field_matches_swing_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let nd = random_system(&mut rng, 3);
            let sep = find_sep(&nd, &DVector::zeros(4)).unwrap();
            let sys = to_polynomial_system(&nd, &sep).unwrap();
            assert_eq!(sys.nvars, 6);
            assert!(sys.eval_f(&[0.0; 6]).iter().all(|v| *v == 0.0));
            for _ in 0..200 {
                let x = DVector::from_vec((0..4).map(|i| sep[i] + rng.random_range(-2.0..2.0)).collect());
                let z = transform(&x, &sep).unwrap();
                assert!(sys.constraint_residual(z.as_slice()) < 1e-12);
                let dx = swing_rhs(&x, &nd);
                let fz = sys.eval_f(z.as_slice());
                let phi = [x[0] - sep[0], x[1] - sep[1]];
                for k in 0..2 {
                    assert!((fz[k] - dx[2 + k]).abs() < 1e-9);
                    assert!((fz[2 + 2 * k] - phi[k].cos() * dx[k]).abs() < 1e-12);
                    assert!((fz[3 + 2 * k] - phi[k].sin() * dx[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constraints_are_invariant_along_the_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let nd = random_system(&mut rng, 3);
        let sep = find_sep(&nd, &DVector::zeros(4)).unwrap();
        let sys = to_polynomial_system(&nd, &sep).unwrap();
        for gi in &sys.g {
            let dg = gi.lie_derivative(&sys.f).unwrap();
            // ġ = (2s)(1−c)ω + (2c − 2) s ω = 0 identically.
            assert!(dg.max_abs_coeff() < 1e-12);
        }
    }

    #[test]
    fn linearization_spectrum_matches_machine_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let nd = random_system(&mut rng, 3);
        let sep = find_sep(&nd, &DVector::zeros(4)).unwrap();
        let sys = to_polynomial_system(&nd, &sep).unwrap();
        // On the constraint tangent space at the origin the cosine states have
        // zero derivative; restrict to (ω, s) coordinates.
        let idx = [0usize, 1, 2, 4];
        let jz = DMatrix::from_fn(4, 4, |a, b| sys.f[idx[a]].differentiate(idx[b]).eval(&[0.0; 6]));
        let jx = swing_jacobian(&sep, &nd);
        let mut ez: Vec<(f64, f64)> = jz.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
        let mut ex: Vec<(f64, f64)> = jx.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
        ez.sort_by(|a, b| a.1.total_cmp(&b.1));
        ex.sort_by(|a, b| a.1.total_cmp(&b.1));
        for (a, b) in ez.iter().zip(&ex) {
            assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6, "{ez:?} vs {ex:?}");
            assert!(a.0 < 0.0);
        }
    }

    #[test]
    fn config_uses_one_based_reference_and_reports_locations() {
        let json = r#"{
            "machines": [{"M":0.1,"D":0.2,"E":1.0,"Pm":0.5},{"M":0.1,"D":0.2,"E":1.0,"Pm":-0.5}],
            "reference": 2,
            "phases": {
                "prefault": {"G": [[0,0],[0,0]], "B": [[0,1],[1,0]]},
                "postfault": {"G": [[0,0],[0,0]], "B": [[0,1],[0.5,0]]}
            }
        }"#;
        let cfg: SystemConfig = serde_json::from_str(json).unwrap();
        let nd = cfg.phase("prefault").unwrap();
        assert_eq!(nd.reference, 1);
        match cfg.phase("postfault") {
            Err(PowerError::Asymmetric { what, row, col, .. }) => {
                assert_eq!(what, "phases.postfault.B");
                assert_eq!((row, col), (1, 2));
            }
            other => panic!("{other:?}"),
        }
        assert!(cfg.phase("fault").is_err());
    }
}
