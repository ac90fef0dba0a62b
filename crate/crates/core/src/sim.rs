//! Explicit Runge–Kutta integration, fault scenarios and a bisection oracle
//! for the critical clearing time.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DVector;
use thiserror::Error;

use crate::powersys::{find_sep, swing_rhs, transform, MachineState, NetworkData, PowerError, SystemConfig};

pub const DIVERGENCE_NORM: f64 = 1e6;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_CAPTURE: f64 = 0.01;
pub const DEFAULT_EPS_C: f64 = 1e-3;
pub const DEFAULT_T_MAX_POST: f64 = 20.0;
pub const CCT_UPPER_BOUND: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error("non-finite initial state")]
    NonFinite,
    #[error("invalid time span or step: {0}")]
    BadSpan(String),
    #[error("CCT > bound: clearing at {0} s is still stable")]
    CctAboveBound(f64),
    #[error("clearing at t = 0 is unstable")]
    UnstableAtZero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control {
    /// Classical RK4 with at most this step.
    Fixed(f64),
    /// Dormand–Prince 5(4) with this local error tolerance.
    Adaptive(f64),
}

impl Default for Control {
    fn default() -> Self {
        Control::Adaptive(DEFAULT_TOL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Prefault,
    Fault,
    Postfault,
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub phase: Phase,
    /// The state norm passed [`DIVERGENCE_NORM`]; the trajectory is truncated there.
    pub diverged: bool,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }

    /// CSV in machine coordinates: `t,d1..,w1..`.
    pub fn to_csv(&self) -> String {
        let k = self.states.first().map(|x| x.len() / 2).unwrap_or(0);
        let mut head = vec!["t".to_string()];
        head.extend((1..=k).map(|i| format!("d{i}")));
        head.extend((1..=k).map(|i| format!("w{i}")));
        write_csv(&head, self.times.iter().zip(&self.states).map(|(t, x)| (*t, x.clone())))
    }

    /// The same samples in polynomial coordinates around `sep`.
    pub fn to_z(&self, sep: &MachineState) -> Result<Trajectory, PowerError> {
        let states = self.states.iter().map(|x| transform(x, sep)).collect::<Result<_, _>>()?;
        Ok(Trajectory { times: self.times.clone(), states, phase: self.phase, diverged: self.diverged })
    }

    /// CSV in polynomial coordinates around `sep`: `t,z1..`.
    pub fn to_csv_z(&self, sep: &MachineState) -> Result<String, PowerError> {
        let zt = self.to_z(sep)?;
        let n = zt.states.first().map(|z| z.len()).unwrap_or(0);
        let mut head = vec!["t".to_string()];
        head.extend((1..=n).map(|i| format!("z{i}")));
        Ok(write_csv(&head, zt.times.iter().copied().zip(zt.states)))
    }
}

fn write_csv(head: &[String], rows: impl Iterator<Item = (f64, DVector<f64>)>) -> String {
    let mut out = head.join(",");
    out.push('\n');
    for (t, x) in rows {
        let _ = write!(out, "{t:.16e}");
        for v in x.iter() {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    out
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Cubic Hermite interpolation between two steps.
fn hermite(t0: f64, h: f64, x0: &DVector<f64>, f0: &DVector<f64>, x1: &DVector<f64>, f1: &DVector<f64>, t: f64) -> DVector<f64> {
    let s = (t - t0) / h;
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    x0 * h00 + f0 * (h * h10) + x1 * h01 + f1 * (h * h11)
}

/// Integrates `ẋ = rhs(t, x)` over `span`, sampling every `capture` seconds
/// from the start (the end point is always included).
pub fn integrate<F>(rhs: F, x0: &DVector<f64>, span: (f64, f64), control: Control, capture: f64, phase: Phase) -> Result<Trajectory, SimError>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(SimError::NonFinite);
    }
    let (t0, t1) = span;
    if !(t1 >= t0) || !(capture > 0.0) {
        return Err(SimError::BadSpan(format!("span {t0}..{t1}, capture {capture}")));
    }
    let n_cap = ((t1 - t0) / capture + 1e-9).floor() as usize;
    let mut traj = Trajectory { times: vec![t0], states: vec![x0.clone()], phase, diverged: false };
    let mut next_cap = 1usize;
    let mut t = t0;
    let mut x = x0.clone();
    let mut fx = rhs(t, &x);

    let emit = |traj: &mut Trajectory, ta: f64, h: f64, xa: &DVector<f64>, fa: &DVector<f64>, xb: &DVector<f64>, fb: &DVector<f64>, next_cap: &mut usize| {
        while *next_cap <= n_cap {
            let tc = t0 + *next_cap as f64 * capture;
            if tc > ta + h + 1e-12 * (1.0 + tc.abs()) {
                break;
            }
            traj.times.push(tc);
            traj.states.push(hermite(ta, h, xa, fa, xb, fb, tc));
            *next_cap += 1;
        }
    };

    if t1 == t0 {
        return Ok(traj);
    }
    match control {
        Control::Fixed(hmax) => {
            if !(hmax > 0.0) {
                return Err(SimError::BadSpan(format!("step {hmax}")));
            }
            let n = ((t1 - t0) / hmax).ceil().max(1.0) as usize;
            let h = (t1 - t0) / n as f64;
            for i in 0..n {
                let k1 = &fx;
                let k2 = rhs(t + 0.5 * h, &(&x + k1 * (0.5 * h)));
                let k3 = rhs(t + 0.5 * h, &(&x + &k2 * (0.5 * h)));
                let k4 = rhs(t + h, &(&x + &k3 * h));
                let xn = &x + (k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0);
                let tn = if i + 1 == n { t1 } else { t0 + (i + 1) as f64 * h };
                let fnew = rhs(tn, &xn);
                emit(&mut traj, t, tn - t, &x, &fx, &xn, &fnew, &mut next_cap);
                t = tn;
                x = xn;
                fx = fnew;
                if !(x.norm() < DIVERGENCE_NORM) {
                    traj.diverged = true;
                    break;
                }
            }
        }
        Control::Adaptive(tol) => {
            if !(tol > 0.0) {
                return Err(SimError::BadSpan(format!("tolerance {tol}")));
            }
            let mut h = ((t1 - t0) * 1e-3).min(capture).max(1e-6);
            let mut k: Vec<DVector<f64>> = vec![fx.clone(); 7];
            while t < t1 {
                if t + h > t1 {
                    h = t1 - t;
                }
                k[0] = fx.clone();
                for s in 1..7 {
                    let mut xs = x.clone();
                    for (j, kj) in k.iter().enumerate().take(s) {
                        if A[s][j] != 0.0 {
                            xs += kj * (h * A[s][j]);
                        }
                    }
                    k[s] = rhs(t + C[s] * h, &xs);
                }
                // Stage 7 is evaluated at the fifth-order solution (FSAL).
                let mut xn = x.clone();
                for (j, kj) in k.iter().enumerate().take(6) {
                    xn += kj * (h * A[6][j]);
                }
                let mut errv = 0.0;
                for i in 0..x.len() {
                    let e: f64 = (0..7).map(|j| E[j] * k[j][i]).sum::<f64>() * h;
                    let sc = tol + tol * x[i].abs().max(xn[i].abs());
                    errv += (e / sc).powi(2);
                }
                let err = (errv / x.len().max(1) as f64).sqrt();
                if !err.is_finite() {
                    h *= 0.2;
                    if h < 1e-14 * (1.0 + t.abs()) {
                        traj.diverged = true;
                        break;
                    }
                    continue;
                }
                if err <= 1.0 {
                    let tn = if t1 - (t + h) < 1e-14 * (1.0 + t1.abs()) { t1 } else { t + h };
                    let fnew = k[6].clone();
                    emit(&mut traj, t, tn - t, &x, &fx, &xn, &fnew, &mut next_cap);
                    t = tn;
                    x = xn;
                    fx = fnew;
                    if !(x.norm() < DIVERGENCE_NORM) {
                        traj.diverged = true;
                        break;
                    }
                }
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h *= fac;
            }
        }
    }
    if !traj.diverged && traj.times.last().is_some_and(|&tl| t1 - tl > 1e-9 * (1.0 + t1.abs())) {
        traj.times.push(t1);
        traj.states.push(x);
    }
    Ok(traj)
}

/// Pre-fault, fault-on and post-fault networks plus run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultScenario {
    pub prefault: NetworkData,
    pub fault: NetworkData,
    pub postfault: NetworkData,
    pub fault_duration: f64,
    pub t_max_post: f64,
    pub eps_c: f64,
    pub capture: f64,
    pub control: Control,
}

impl FaultScenario {
    pub fn new(prefault: NetworkData, fault: NetworkData, postfault: NetworkData, fault_duration: f64) -> Self {
        FaultScenario {
            prefault,
            fault,
            postfault,
            fault_duration,
            t_max_post: DEFAULT_T_MAX_POST,
            eps_c: DEFAULT_EPS_C,
            capture: DEFAULT_CAPTURE,
            control: Control::default(),
        }
    }

    /// Builds a scenario from a system file; a missing fault phase is an error.
    pub fn from_config(cfg: &SystemConfig, fault_duration: f64) -> Result<Self, SimError> {
        Ok(Self::new(cfg.phase("prefault")?, cfg.phase("fault")?, cfg.phase("postfault")?, fault_duration))
    }

    pub fn prefault_sep(&self) -> Result<MachineState, SimError> {
        let k = self.prefault.state_dim();
        Ok(find_sep(&self.prefault, &DVector::zeros(k))?)
    }

    /// Post-fault SEP, searched from the pre-fault SEP.
    pub fn postfault_sep(&self) -> Result<MachineState, SimError> {
        Ok(find_sep(&self.postfault, &self.prefault_sep()?)?)
    }

    /// Fault-on trajectory from the pre-fault SEP for `duration` seconds.
    pub fn fault_trajectory(&self, duration: f64) -> Result<Trajectory, SimError> {
        let x0 = self.prefault_sep()?;
        let nd = &self.fault;
        integrate(|_, x| swing_rhs(x, nd), &x0, (0.0, duration), self.control, self.capture, Phase::Fault)
    }

    /// Whether clearing at `t_clear` leads back to the post-fault SEP.
    pub fn stable_clearing(&self, t_clear: f64, post_sep: &MachineState) -> Result<bool, SimError> {
        let ft = self.fault_trajectory(t_clear)?;
        if ft.diverged {
            return Ok(false);
        }
        converges_to_sep_with(ft.last(), &self.postfault, post_sep, self.t_max_post, self.eps_c, self.control)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub fault_traj: Trajectory,
    pub post_traj: Trajectory,
    pub prefault_sep: MachineState,
    pub postfault_sep: MachineState,
}

pub fn run_scenario(sc: &FaultScenario) -> Result<ScenarioRun, SimError> {
    let prefault_sep = sc.prefault_sep()?;
    let postfault_sep = find_sep(&sc.postfault, &prefault_sep)?;
    let fault_traj = sc.fault_trajectory(sc.fault_duration)?;
    let nd = &sc.postfault;
    let t0 = sc.fault_duration;
    let mut post_traj = integrate(|_, x| swing_rhs(x, nd), fault_traj.last(), (t0, t0 + sc.t_max_post), sc.control, sc.capture, Phase::Postfault)?;
    if fault_traj.diverged {
        post_traj.diverged = true;
    }
    Ok(ScenarioRun { fault_traj, post_traj, prefault_sep, postfault_sep })
}

/// Distance to `sep` with angle differences wrapped into `(−π, π]`.
pub fn wrapped_distance(x: &DVector<f64>, sep: &MachineState) -> f64 {
    let k = sep.len() / 2;
    let mut s = 0.0;
    for i in 0..sep.len() {
        let mut d = x[i] - sep[i];
        if i < k {
            d = (d + PI).rem_euclid(2.0 * PI) - PI;
        }
        s += d * d;
    }
    s.sqrt()
}

pub fn converges_to_sep(x0: &DVector<f64>, nd: &NetworkData, sep: &MachineState, t_max: f64, eps_c: f64) -> Result<bool, SimError> {
    converges_to_sep_with(x0, nd, sep, t_max, eps_c, Control::default())
}

/// True iff every captured sample in the final tenth of `[0, t_max]` lies
/// within `eps_c` of `sep`.
pub fn converges_to_sep_with(
    x0: &DVector<f64>,
    nd: &NetworkData,
    sep: &MachineState,
    t_max: f64,
    eps_c: f64,
    control: Control,
) -> Result<bool, SimError> {
    let capture = (t_max / 1000.0).min(DEFAULT_CAPTURE).max(1e-6);
    let tr = integrate(|_, x| swing_rhs(x, nd), x0, (0.0, t_max), control, capture, Phase::Free)?;
    if tr.diverged {
        return Ok(false);
    }
    let t_tail = 0.9 * t_max;
    Ok(tr.times.iter().zip(&tr.states).filter(|(t, _)| **t >= t_tail).all(|(_, x)| wrapped_distance(x, sep) < eps_c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CctBracket {
    /// Last verified-stable clearing time.
    pub stable: f64,
    /// First verified-unstable clearing time.
    pub unstable: f64,
    pub evaluations: usize,
}

/// Bisection for the critical clearing time on `[0, 5]` s.
pub fn true_cct(sc: &FaultScenario, tol_t: f64) -> Result<f64, SimError> {
    Ok(true_cct_bracket(sc, tol_t)?.stable)
}

pub fn true_cct_bracket(sc: &FaultScenario, tol_t: f64) -> Result<CctBracket, SimError> {
    if !(tol_t > 0.0) {
        return Err(SimError::BadSpan(format!("tolerance {tol_t}")));
    }
    let post_sep = sc.postfault_sep()?;
    if !sc.stable_clearing(0.0, &post_sep)? {
        return Err(SimError::UnstableAtZero);
    }
    if sc.stable_clearing(CCT_UPPER_BOUND, &post_sep)? {
        return Err(SimError::CctAboveBound(CCT_UPPER_BOUND));
    }
    let (mut lo, mut hi) = (0.0, CCT_UPPER_BOUND);
    let mut evaluations = 0;
    while hi - lo >= tol_t {
        let mid = 0.5 * (lo + hi);
        evaluations += 1;
        if sc.stable_clearing(mid, &post_sep)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CctBracket { stable: lo, unstable: hi, evaluations })
}
