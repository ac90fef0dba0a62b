//! Homogeneous self-dual interior-point method with Nesterov–Todd scaling
//! and Mehrotra predictor-corrector steps.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::presolve::{smat, smat_into, svec, DenseSdp};
use super::SdpStatus;

pub(crate) struct HsdResult {
    pub status: SdpStatus,
    pub x: Vec<DMatrix<f64>>,
    pub w: DVector<f64>,
    pub s: Vec<DMatrix<f64>>,
    pub iterations: usize,
}

/// NT scaling of one block: `W = G Gᵀ`, `G⁻¹ X G⁻ᵀ = Gᵀ S G = diag(d)`.
struct Scaling {
    g: DMatrix<f64>,
    ginv: DMatrix<f64>,
    d: DVector<f64>,
}

impl Scaling {
    fn new(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<Scaling> {
        let lx = Cholesky::new(x.clone())?.unpack();
        let ls = Cholesky::new(s.clone())?.unpack();
        let svd = (ls.transpose() * &lx).svd(false, true);
        let vt = svd.v_t?;
        let d = svd.singular_values;
        if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return None;
        }
        let dm12 = d.map(|v| 1.0 / v.sqrt());
        let g = &lx * vt.transpose() * DMatrix::from_diagonal(&dm12);
        let lxinv = lx.solve_lower_triangular(&DMatrix::identity(x.nrows(), x.nrows()))?;
        let ginv = DMatrix::from_diagonal(&d.map(f64::sqrt)) * vt * lxinv;
        Some(Scaling { g, ginv, d })
    }

    /// `W Y W`.
    fn wyw(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let t = self.g.transpose() * y * &self.g;
        &self.g * t * self.g.transpose()
    }

    /// `G⁻¹ Y G⁻ᵀ`.
    fn scale_x(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        &self.ginv * y * self.ginv.transpose()
    }

    /// `Gᵀ Y G`.
    fn scale_s(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        self.g.transpose() * y * &self.g
    }

    /// `G L_D⁻¹(R) Gᵀ`.
    fn unscale_lyap(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let n = r.nrows();
        let t = DMatrix::from_fn(n, n, |i, j| 2.0 * r[(i, j)] / (self.d[i] + self.d[j]));
        &self.g * t * self.g.transpose()
    }
}

struct Point {
    x: Vec<DMatrix<f64>>,
    w: DVector<f64>,
    s: Vec<DMatrix<f64>>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dw: DVector<f64>,
    ds: Vec<DMatrix<f64>>,
    dtau: f64,
    dkappa: f64,
}

struct Problem<'a> {
    p: &'a DenseSdp,
    /// Rows with a nonzero coefficient in each block.
    touch: Vec<Vec<usize>>,
    cmat: Vec<DMatrix<f64>>,
}

impl<'a> Problem<'a> {
    fn new(p: &'a DenseSdp) -> Self {
        let touch = p
            .a
            .iter()
            .map(|ab| (0..ab.ncols()).filter(|&i| ab.column(i).iter().any(|&v| v != 0.0)).collect())
            .collect();
        let cmat = p.c.iter().zip(&p.dims).map(|(c, &n)| smat(c.as_slice(), n)).collect();
        Problem { p, touch, cmat }
    }

    fn op(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.p.num_rows());
        for (ab, xb) in self.p.a.iter().zip(x) {
            if ab.ncols() > 0 {
                out += ab.transpose() * svec(xb);
            }
        }
        out
    }

    fn adj(&self, w: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.p
            .a
            .iter()
            .zip(&self.p.dims)
            .map(|(ab, &n)| if ab.ncols() > 0 { smat((ab * w).as_slice(), n) } else { DMatrix::zeros(n, n) })
            .collect()
    }

    fn c_dot(&self, x: &[DMatrix<f64>]) -> f64 {
        self.cmat.iter().zip(x).map(|(c, x)| c.dot(x)).sum()
    }

    /// Schur complement `M_ij = <A_i, W A_j W>`.
    fn schur(&self, sc: &[Scaling]) -> DMatrix<f64> {
        let m = self.p.num_rows();
        let mut big = DMatrix::zeros(m, m);
        for (b, ab) in self.p.a.iter().enumerate() {
            let rows = &self.touch[b];
            if rows.is_empty() {
                continue;
            }
            let n = self.p.dims[b];
            let g = &sc[b].g;
            let gt = g.transpose();
            let mut pm = DMatrix::zeros(ab.nrows(), rows.len());
            let mut ai = DMatrix::zeros(n, n);
            for (k, &i) in rows.iter().enumerate() {
                smat_into(ab.column(i).as_slice(), &mut ai);
                let t = &gt * &ai * g;
                pm.set_column(k, &svec(&t));
            }
            let sub = pm.transpose() * &pm;
            for (k, &i) in rows.iter().enumerate() {
                for (l, &j) in rows.iter().enumerate() {
                    big[(i, j)] += sub[(k, l)];
                }
            }
        }
        big
    }
}

fn dot_blocks(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn max_abs_blocks(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|m| m.amax()).fold(0.0, f64::max)
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest `α ≤ 1` (undamped) keeping `D + α dY` PSD, where `dY` is a scaled direction.
fn max_step_scaled(d: &DVector<f64>, dy: &DMatrix<f64>) -> f64 {
    let n = d.len();
    let dm12 = d.map(|v| 1.0 / v.sqrt());
    let t = DMatrix::from_fn(n, n, |i, j| dm12[i] * 0.5 * (dy[(i, j)] + dy[(j, i)]) * dm12[j]);
    let lmin = t.symmetric_eigenvalues().min();
    if lmin < 0.0 {
        -1.0 / lmin
    } else {
        f64::INFINITY
    }
}

fn max_step_scalar(v: f64, dv: f64) -> f64 {
    if dv < 0.0 {
        -v / dv
    } else {
        f64::INFINITY
    }
}

struct Cached {
    sc: Vec<Scaling>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    a_wcw: DVector<f64>,
    c_wcw: f64,
    v: DVector<f64>,
}

struct Residuals {
    rp: DVector<f64>,
    rd: Vec<DMatrix<f64>>,
    rg: f64,
}

fn factor_schur(m: &DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let dmax = m.diagonal().amax().max(1e-300);
    let mut reg = 1e-14 * dmax;
    for _ in 0..8 {
        let mut mm = m.clone();
        for i in 0..mm.nrows() {
            mm[(i, i)] += reg;
        }
        if let Some(c) = Cholesky::new(mm) {
            return Some(c);
        }
        reg *= 100.0;
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn direction(
    pr: &Problem,
    pt: &Point,
    cache: &Cached,
    res: &Residuals,
    rc: &[DMatrix<f64>],
    rtk: f64,
    eta: f64,
) -> Direction {
    let p = pr.p;
    let rprime: Vec<DMatrix<f64>> = rc
        .iter()
        .zip(&res.rd)
        .zip(&cache.sc)
        .map(|((r, rd), sc)| if eta != 0.0 { r - sc.wyw(rd) * eta } else { r.clone() })
        .collect();
    let rhs = &res.rp * eta - pr.op(&rprime);
    let u = cache.chol.solve(&rhs);
    let bma = &p.b - &cache.a_wcw;
    let num = eta * res.rg + pr.c_dot(&rprime) + rtk / pt.tau - bma.dot(&u);
    let den = bma.dot(&cache.v) + cache.c_wcw + pt.kappa / pt.tau;
    let dtau = num / den;
    let dw = &u + &cache.v * dtau;
    let atdw = pr.adj(&dw);
    let ds: Vec<DMatrix<f64>> = res
        .rd
        .iter()
        .zip(&atdw)
        .zip(&pr.cmat)
        .map(|((rd, a), c)| rd * eta - a + c * dtau)
        .collect();
    let dx: Vec<DMatrix<f64>> =
        rc.iter().zip(&ds).zip(&cache.sc).map(|((r, d), sc)| sym(&(r - sc.wyw(d)))).collect();
    let dkappa = (rtk - pt.kappa * dtau) / pt.tau;
    Direction { dx, dw, ds, dtau, dkappa }
}

fn step_length(pt: &Point, dir: &Direction, cache: &Cached) -> f64 {
    let mut a = max_step_scalar(pt.tau, dir.dtau).min(max_step_scalar(pt.kappa, dir.dkappa));
    for ((dx, ds), sc) in dir.dx.iter().zip(&dir.ds).zip(&cache.sc) {
        a = a.min(max_step_scaled(&sc.d, &sc.scale_x(dx)));
        a = a.min(max_step_scaled(&sc.d, &sc.scale_s(ds)));
    }
    a
}

pub(crate) fn solve(p: &DenseSdp, tol: f64, max_iter: usize) -> HsdResult {
    let pr = Problem::new(p);
    let m = p.num_rows();
    let nu: usize = p.dims.iter().sum();
    let eye = |n: usize| DMatrix::<f64>::identity(n, n);
    let mut pt = Point {
        x: p.dims.iter().map(|&n| eye(n)).collect(),
        w: DVector::zeros(m),
        s: p.dims.iter().map(|&n| eye(n)).collect(),
        tau: 1.0,
        kappa: 1.0,
    };
    let bnorm = p.b.amax();
    let cnorm = max_abs_blocks(&pr.cmat);
    let mut status = SdpStatus::NumericalFailure;
    let mut iterations = 0;
    let mut best: Option<(f64, Point)> = None;
    let mut small_steps = 0;

    loop {
        let ax = pr.op(&pt.x);
        let atw = pr.adj(&pt.w);
        let rp = &p.b * pt.tau - &ax;
        let rd: Vec<DMatrix<f64>> = pr
            .cmat
            .iter()
            .zip(&atw)
            .zip(&pt.s)
            .map(|((c, a), s)| c * pt.tau - a - s)
            .collect();
        let cx = pr.c_dot(&pt.x);
        let bw = p.b.dot(&pt.w);
        let rg = pt.kappa + cx - bw;

        let pres = rp.amax() / pt.tau / (1.0 + bnorm);
        let dres = max_abs_blocks(&rd) / pt.tau / (1.0 + cnorm);
        let pobj = cx / pt.tau;
        let dobj = bw / pt.tau;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let err = pres.max(dres).max(gap);
        if !err.is_finite() {
            break;
        }
        if err < tol {
            status = SdpStatus::Optimal;
            break;
        }
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((
                err,
                Point { x: pt.x.clone(), w: pt.w.clone(), s: pt.s.clone(), tau: pt.tau, kappa: pt.kappa },
            ));
        }
        if bw > 0.0 {
            let viol: f64 = atw.iter().zip(&pt.s).map(|(a, s)| (a + s).amax()).fold(0.0, f64::max);
            if viol / bw < tol {
                status = SdpStatus::Infeasible;
                break;
            }
        }
        if cx < 0.0 && ax.amax() / -cx < tol {
            status = SdpStatus::Unbounded;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mu = (dot_blocks(&pt.x, &pt.s) + pt.tau * pt.kappa) / (nu as f64 + 1.0);
        let Some(sc) = pt.x.iter().zip(&pt.s).map(|(x, s)| Scaling::new(x, s)).collect::<Option<Vec<_>>>()
        else {
            break;
        };
        let schur = pr.schur(&sc);
        let Some(chol) = factor_schur(&schur) else {
            break;
        };
        let wcw: Vec<DMatrix<f64>> = pr.cmat.iter().zip(&sc).map(|(c, s)| s.wyw(c)).collect();
        let a_wcw = pr.op(&wcw);
        let c_wcw = pr.c_dot(&wcw);
        let v = chol.solve(&(&a_wcw + &p.b));
        let cache = Cached { sc, chol, a_wcw, c_wcw, v };
        let res = Residuals { rp, rd, rg };

        // Predictor.
        let rc_aff: Vec<DMatrix<f64>> = pt.x.iter().map(|x| -x).collect();
        let aff = direction(&pr, &pt, &cache, &res, &rc_aff, -pt.tau * pt.kappa, 1.0);
        let alpha_aff = step_length(&pt, &aff, &cache).min(1.0);
        let mut mu_aff = pt.tau * pt.kappa;
        mu_aff = (mu_aff
            + alpha_aff * (pt.tau * aff.dkappa + pt.kappa * aff.dtau)
            + alpha_aff * alpha_aff * aff.dtau * aff.dkappa)
            .max(0.0);
        for b in 0..pt.x.len() {
            let xa = &pt.x[b] + &aff.dx[b] * alpha_aff;
            let sa = &pt.s[b] + &aff.ds[b] * alpha_aff;
            mu_aff += xa.dot(&sa);
        }
        mu_aff /= nu as f64 + 1.0;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let eta = 1.0 - sigma;

        // Corrector.
        let rc: Vec<DMatrix<f64>> = cache
            .sc
            .iter()
            .zip(aff.dx.iter().zip(&aff.ds))
            .map(|(s, (dx, ds))| {
                let n = s.d.len();
                let dxs = s.scale_x(dx);
                let dss = s.scale_s(ds);
                let mut r = -sym(&(dxs * dss));
                for i in 0..n {
                    r[(i, i)] += sigma * mu - s.d[i] * s.d[i];
                }
                s.unscale_lyap(&r)
            })
            .collect();
        let rtk = sigma * mu - pt.tau * pt.kappa - aff.dtau * aff.dkappa;
        let dir = direction(&pr, &pt, &cache, &res, &rc, rtk, eta);
        let amax = step_length(&pt, &dir, &cache);
        let mut alpha = (0.97 * amax).min(1.0);
        if !alpha.is_finite() || alpha <= 0.0 {
            break;
        }
        // The scaled step bound loses accuracy when the scaling is badly
        // conditioned; back off until every new block factors.
        let mut next = None;
        for _ in 0..30 {
            let x: Vec<DMatrix<f64>> = pt.x.iter().zip(&dir.dx).map(|(x, d)| sym(&(x + d * alpha))).collect();
            let s: Vec<DMatrix<f64>> = pt.s.iter().zip(&dir.ds).map(|(s, d)| sym(&(s + d * alpha))).collect();
            if x.iter().chain(&s).all(|m| Cholesky::new(m.clone()).is_some()) {
                next = Some((x, s));
                break;
            }
            alpha *= 0.7;
        }
        let Some((x, s)) = next else {
            break;
        };
        pt.x = x;
        pt.s = s;
        pt.w += &dir.dw * alpha;
        pt.tau += alpha * dir.dtau;
        pt.kappa += alpha * dir.dkappa;
        if alpha < 1e-6 {
            small_steps += 1;
            if small_steps >= 5 {
                break;
            }
        } else {
            small_steps = 0;
        }
    }

    if status == SdpStatus::NumericalFailure {
        if let Some((_, b)) = best {
            pt = b;
        }
    }
    match status {
        SdpStatus::Infeasible => HsdResult {
            status,
            x: pt.x.iter().map(|x| x * 0.0).collect(),
            w: pt.w,
            s: pt.s,
            iterations,
        },
        SdpStatus::Unbounded => HsdResult { status, x: pt.x, w: pt.w * 0.0, s: pt.s, iterations },
        _ => {
            let t = 1.0 / pt.tau;
            HsdResult {
                status,
                x: pt.x.iter().map(|x| x * t).collect(),
                w: pt.w * t,
                s: pt.s.iter().map(|s| s * t).collect(),
                iterations,
            }
        }
    }
}
