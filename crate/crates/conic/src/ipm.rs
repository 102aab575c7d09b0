//! Homogeneous self-dual primal-dual interior-point method with
//! Nesterov–Todd scaling and Mehrotra predictor-corrector steps.

use std::cell::Cell;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::cones::{self, Block, ConeKind, Op, Scaling};
use crate::lower::StandardForm;

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Internal feasibility tolerance.
    pub feastol: f64,
    /// Internal relative gap tolerance.
    pub reltol: f64,
    /// Internal absolute gap tolerance.
    pub abstol: f64,
    /// Looser tolerances accepted when progress stalls.
    pub reported_feastol: f64,
    pub reported_gaptol: f64,
    pub step_factor: f64,
    /// Switch to a QR factorisation when the Cholesky-based KKT solve loses
    /// accuracy. Robust but much slower on large programs.
    pub qr_fallback: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 200,
            feastol: 1e-9,
            reltol: 1e-8,
            abstol: 1e-10,
            reported_feastol: 1e-7,
            reported_gaptol: 1e-6,
            step_factor: 0.99,
            qr_fallback: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
    NumericalFailure,
}

/// One row of the iteration log, in the minimization sense of the
/// standard form (scaled data).
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub pcost: f64,
    pub dcost: f64,
    pub gap: f64,
    pub pres: f64,
    pub dres: f64,
    pub step: f64,
}

pub(crate) struct RawResult {
    pub status: Status,
    pub x: DVector<f64>,
    pub relgap: f64,
    pub pres: f64,
    pub dres: f64,
    pub iterations: usize,
    pub trace: Vec<IterRecord>,
}

struct Kkt<'a> {
    sf: &'a StandardForm,
    sc: &'a [Scaling],
    fac: Factor,
    eq: Option<(DMatrix<f64>, Cholesky<f64, Dyn>)>,
    /// Largest relative residual left by [`Kkt::solve`] so far.
    worst: Cell<f64>,
}

/// Factor of `M = GᵀH⁻¹G + AᵀA`.
enum Factor {
    Chol(Cholesky<f64, Dyn>),
    /// `R` from a QR factorisation of `[W⁻ᵀG; A]`, so `M = RᵀR`. Used when
    /// `M` is too ill-conditioned for Cholesky; its condition number is the
    /// square root of `M`'s.
    Qr(DMatrix<f64>),
}

impl Factor {
    fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Factor::Chol(c) => c.solve(b),
            Factor::Qr(r) => {
                let u = r.tr_solve_upper_triangular(b).expect("nonsingular R");
                r.solve_upper_triangular(&u).expect("nonsingular R")
            }
        }
    }

    fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Factor::Chol(c) => c.solve(b),
            Factor::Qr(r) => {
                let u = r.tr_solve_upper_triangular(b).expect("nonsingular R");
                r.solve_upper_triangular(&u).expect("nonsingular R")
            }
        }
    }
}

/// Relative KKT residual above which the Cholesky factor is replaced by QR.
const KKT_ACCURACY: f64 = 1e-10;

fn qr_factor(sf: &StandardForm, sc: &[Scaling]) -> Option<Factor> {
    let (n, m, p) = (sf.n, sf.m(), sf.p());
    let mut b = DMatrix::<f64>::zeros(m + p, n);
    let mut e = DVector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        let col = scale_op(sf, sc, Op::WinvT, &sf.g_mul(&e));
        b.view_mut((0, j), (m, 1)).copy_from(&col);
        e[j] = 0.0;
    }
    if p > 0 {
        b.view_mut((m, 0), (p, n)).copy_from(&sf.a);
    }
    if m + p < n {
        return None;
    }
    let r = b.qr().r();
    let dmax = r.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let dmin = r.diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    (dmin > 1e-15 * dmax).then_some(Factor::Qr(r))
}

fn block_map(
    sf: &StandardForm,
    sc: &[Scaling],
    u: &DVector<f64>,
    f: impl Fn(&Block, &Scaling, &[f64], &mut [f64]),
) -> DVector<f64> {
    let mut out = DVector::zeros(u.len());
    for (b, s) in sf.blocks.iter().zip(sc) {
        let r = b.range();
        f(b, s, &u.as_slice()[r.clone()], &mut out.as_mut_slice()[r]);
    }
    out
}

fn scale_op(sf: &StandardForm, sc: &[Scaling], op: Op, u: &DVector<f64>) -> DVector<f64> {
    block_map(sf, sc, u, |b, s, i, o| cones::apply(b, s, op, i, o))
}

fn hinv(sf: &StandardForm, sc: &[Scaling], u: &DVector<f64>) -> DVector<f64> {
    block_map(sf, sc, u, cones::hinv)
}

fn hmul(sf: &StandardForm, sc: &[Scaling], u: &DVector<f64>) -> DVector<f64> {
    block_map(sf, sc, u, cones::hmul)
}

impl<'a> Kkt<'a> {
    fn factor(sf: &'a StandardForm, sc: &'a [Scaling], force_qr: bool) -> Option<Self> {
        let n = sf.n;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for (bi, b) in sf.blocks.iter().enumerate() {
            match (b.kind, &sc[bi]) {
                (ConeKind::NonNeg, Scaling::NonNeg { d }) => {
                    for (r, row) in sf.g_rows_nonneg.iter().enumerate() {
                        let w = 1.0 / (d[r] * d[r]);
                        for &(i, vi) in row {
                            let wi = w * vi;
                            for &(j, vj) in row {
                                if i <= j {
                                    m[(i, j)] += wi * vj;
                                }
                            }
                        }
                    }
                }
                _ => {
                    let cols = &sf.block_cols[bi];
                    let mut y = vec![0.0; b.len];
                    for (j, gj) in cols {
                        cones::hinv_sparse(b, &sc[bi], gj, &mut y);
                        for (i, gi) in cols {
                            if i > j {
                                continue;
                            }
                            let v: f64 = gi.iter().map(|&(k, val)| val * y[k]).sum();
                            m[(*i, *j)] += v;
                        }
                    }
                }
            }
        }
        // only the upper triangle was accumulated
        for j in 0..n {
            for i in (j + 1)..n {
                m[(i, j)] = m[(j, i)];
            }
        }
        if sf.p() > 0 {
            m += sf.a.transpose() * &sf.a;
        }
        let fac = if force_qr {
            qr_factor(sf, sc)?
        } else {
            let maxdiag = (0..n).map(|i| m[(i, i)].abs()).fold(0.0f64, f64::max).max(1e-300);
            let mut reg = 0.0;
            loop {
                let mut mm = m.clone();
                if reg > 0.0 {
                    for i in 0..n {
                        mm[(i, i)] += reg;
                    }
                }
                if let Some(c) = Cholesky::new(mm) {
                    break Factor::Chol(c);
                }
                reg = if reg == 0.0 { 1e-13 * maxdiag } else { reg * 100.0 };
                if reg > 1e-3 * maxdiag {
                    return None;
                }
            }
        };
        let eq = if sf.p() > 0 {
            let y = fac.solve(&sf.a.transpose());
            let s = &sf.a * &y;
            let s = Cholesky::new(s.clone()).or_else(|| {
                let mut s2 = s;
                let md = (0..s2.nrows()).map(|i| s2[(i, i)]).fold(0.0f64, f64::max).max(1e-300);
                for i in 0..s2.nrows() {
                    s2[(i, i)] += 1e-12 * md;
                }
                Cholesky::new(s2)
            })?;
            Some((y, s))
        } else {
            None
        };
        Some(Kkt { sf, sc, fac, eq, worst: Cell::new(0.0) })
    }

    fn solve_once(
        &self,
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bz: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let sf = self.sf;
        let t = hinv(sf, self.sc, bz);
        let mut r = bx + sf.gt_mul(&t);
        let (ux, uy) = match &self.eq {
            None => (self.fac.solve_vec(&r), DVector::zeros(0)),
            Some((y, s)) => {
                r += sf.a.transpose() * by;
                let w = self.fac.solve_vec(&r);
                let uy = s.solve(&(&sf.a * &w - by));
                (w - y * &uy, uy)
            }
        };
        let uz = hinv(sf, self.sc, &(sf.g_mul(&ux) - bz));
        (ux, uy, uz)
    }

    /// Solves `[0 Aᵀ Gᵀ; A 0 0; G 0 −H][ux; uy; uz] = [bx; by; bz]` followed
    /// by iterative refinement.
    fn solve(
        &self,
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bz: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let sf = self.sf;
        let (mut ux, mut uy, mut uz) = self.solve_once(bx, by, bz);
        // the cone rows are compared in the scaled space, where H is the
        // identity; unscaled they can differ by many orders of magnitude
        let zn = |r: &DVector<f64>| scale_op(sf, self.sc, Op::WinvT, r).norm();
        let scale = (bx.norm() + by.norm() + zn(bz)).max(1e-300);
        let mut prev = f64::INFINITY;
        let mut last = None;
        let mut achieved = f64::INFINITY;
        for _ in 0..8 {
            let mut rx = bx - sf.gt_mul(&uz);
            if sf.p() > 0 {
                rx -= sf.a.transpose() * &uy;
            }
            let ry = if sf.p() > 0 { by - &sf.a * &ux } else { DVector::zeros(0) };
            let rz = bz - (sf.g_mul(&ux) - hmul(sf, self.sc, &uz));
            let res = rx.norm() + ry.norm() + zn(&rz);
            if res > prev {
                // the last correction made things worse
                if let Some((x0, y0, z0)) = last {
                    (ux, uy, uz) = (x0, y0, z0);
                }
                break;
            }
            achieved = res;
            if res <= 1e-14 * scale || res > 0.5 * prev {
                break;
            }
            prev = res;
            last = Some((ux.clone(), uy.clone(), uz.clone()));
            let (dx, dy, dz) = self.solve_once(&rx, &ry, &rz);
            ux += dx;
            if sf.p() > 0 {
                uy += dy;
            }
            uz += dz;
        }
        self.worst.set(self.worst.get().max(achieved / scale));
        (ux, uy, uz)
    }
}

fn unit(sf: &StandardForm) -> DVector<f64> {
    let mut e = DVector::zeros(sf.m());
    for b in &sf.blocks {
        cones::unit(b, &mut e.as_mut_slice()[b.range()]);
    }
    e
}

fn min_eig(sf: &StandardForm, u: &DVector<f64>) -> f64 {
    sf.blocks
        .iter()
        .map(|b| cones::min_eig(b, &u.as_slice()[b.range()]))
        .fold(f64::INFINITY, f64::min)
}

fn jprod(sf: &StandardForm, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(u.len());
    for b in &sf.blocks {
        let r = b.range();
        cones::jprod(b, &u.as_slice()[r.clone()], &v.as_slice()[r.clone()], &mut out.as_mut_slice()[r]);
    }
    out
}

fn jdiv(sf: &StandardForm, lam: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(u.len());
    for b in &sf.blocks {
        let r = b.range();
        cones::jdiv(b, &lam.as_slice()[r.clone()], &u.as_slice()[r.clone()], &mut out.as_mut_slice()[r]);
    }
    out
}

fn max_step(sf: &StandardForm, lam: &DVector<f64>, d: &DVector<f64>) -> f64 {
    sf.blocks
        .iter()
        .map(|b| {
            let r = b.range();
            cones::max_step(b, &lam.as_slice()[r.clone()], &d.as_slice()[r])
        })
        .fold(0.0, f64::max)
}

struct Direction {
    dx: DVector<f64>,
    dy: DVector<f64>,
    dz: DVector<f64>,
    ds: DVector<f64>,
    dtau: f64,
    dkappa: f64,
    /// `W⁻ᵀ ds` and `W dz`, used for step lengths and the corrector term.
    dsw: DVector<f64>,
    dzw: DVector<f64>,
}

pub(crate) fn solve(sf: &StandardForm, opts: &SolverOptions) -> RawResult {
    let n = sf.n;
    let p = sf.p();
    let m = sf.m();
    let degree = sf.degree() as f64;
    let resx0 = sf.c.norm().max(1.0);
    let resy0 = sf.b.norm().max(1.0);
    let resz0 = sf.h.norm().max(1.0);
    let mut trace = Vec::new();

    let fail = |status, trace, iterations| RawResult {
        status,
        x: DVector::zeros(n),
        relgap: f64::NAN,
        pres: f64::NAN,
        dres: f64::NAN,
        iterations,
        trace,
    };

    if m == 0 {
        // Only equalities: the objective must be constant on the affine set.
        return fail(Status::NumericalFailure, trace, 0);
    }

    let ident: Vec<Scaling> = sf.blocks.iter().map(cones::identity_scaling).collect();
    let Some(kkt) = Kkt::factor(sf, &ident, false) else {
        return fail(Status::NumericalFailure, trace, 0);
    };
    let zero_n = DVector::zeros(n);
    let zero_p = DVector::zeros(p);
    let zero_m = DVector::zeros(m);
    let (mut x, _, zt) = kkt.solve(&zero_n, &sf.b, &sf.h);
    let mut s = -zt;
    let (_, mut y, mut z) = kkt.solve(&(-&sf.c), &zero_p, &zero_m);
    let e = unit(sf);
    let ts = -min_eig(sf, &s);
    if ts >= -1e-8 * s.norm().max(1.0) {
        s += &e * (1.0 + ts);
    }
    let tz = -min_eig(sf, &z);
    if tz >= -1e-8 * z.norm().max(1.0) {
        z += &e * (1.0 + tz);
    }
    let mut tau = 1.0;
    let mut kappa = 1.0;

    let mut best: Option<(DVector<f64>, f64, f64, f64)> = None;
    let mut stalls = 0;
    let mut last_step = f64::NAN;

    for iter in 0..=opts.max_iter {
        let mut rx = sf.gt_mul(&z) + &sf.c * tau;
        if p > 0 {
            rx += sf.a.transpose() * &y;
        }
        let ry = if p > 0 { &sf.a * &x - &sf.b * tau } else { DVector::zeros(0) };
        let rz = sf.g_mul(&x) + &s - &sf.h * tau;
        let cx = sf.c.dot(&x);
        let by = if p > 0 { sf.b.dot(&y) } else { 0.0 };
        let hz = sf.h.dot(&z);
        let rt = kappa + cx + by + hz;
        let gap = s.dot(&z);
        let mu = (gap + tau * kappa) / (degree + 1.0);
        let pcost = cx / tau;
        let dcost = -(by + hz) / tau;
        let abs_gap = gap / (tau * tau);
        let relgap = abs_gap / pcost.abs().max(dcost.abs()).max(1.0);
        let pres = (ry.norm() / resy0).max(rz.norm() / resz0) / tau;
        let dres = rx.norm() / resx0 / tau;
        trace.push(IterRecord { iter, pcost, dcost, gap: relgap, pres, dres, step: last_step });

        if pres <= opts.reported_feastol && dres <= opts.reported_feastol && relgap <= opts.reported_gaptol {
            let better = best.as_ref().is_none_or(|b| pres.max(dres).max(relgap) < b.1.max(b.2).max(b.3));
            if better {
                best = Some((&x / tau, relgap, pres, dres));
            }
        }

        if pres <= opts.feastol && dres <= opts.feastol && (abs_gap <= opts.abstol || relgap <= opts.reltol) {
            return RawResult { status: Status::Optimal, x: x / tau, relgap, pres, dres, iterations: iter, trace };
        }
        // infeasibility certificates
        if hz + by < 0.0 {
            let mut aty = sf.gt_mul(&z);
            if p > 0 {
                aty += sf.a.transpose() * &y;
            }
            let pinfres = aty.norm() / resx0 / (-(hz + by));
            if pinfres <= opts.feastol {
                return RawResult {
                    status: Status::Infeasible,
                    x: x / tau,
                    relgap,
                    pres,
                    dres,
                    iterations: iter,
                    trace,
                };
            }
        }
        if cx < 0.0 {
            let ax = if p > 0 { (&sf.a * &x).norm() / resy0 } else { 0.0 };
            let gxs = (sf.g_mul(&x) + &s).norm() / resz0;
            let dinfres = ax.max(gxs) / (-cx);
            if dinfres <= opts.feastol {
                return RawResult {
                    status: Status::Unbounded,
                    x: x / tau,
                    relgap,
                    pres,
                    dres,
                    iterations: iter,
                    trace,
                };
            }
        }
        if iter == opts.max_iter || stalls >= 5 {
            break;
        }

        // scaling
        let mut scalings = Vec::with_capacity(sf.blocks.len());
        let mut lam = DVector::zeros(m);
        let mut ok = true;
        for b in &sf.blocks {
            let r = b.range();
            match cones::compute_scaling(b, &s.as_slice()[r.clone()], &z.as_slice()[r.clone()]) {
                Some((sc, l)) => {
                    lam.as_mut_slice()[r].copy_from_slice(&l);
                    scalings.push(sc);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break;
        }
        let Some(mut kkt) = Kkt::factor(sf, &scalings, false) else { break };
        let (mut x1, mut y1, mut z1) = kkt.solve(&(-&sf.c), &sf.b, &sf.h);
        if opts.qr_fallback && kkt.worst.get() > KKT_ACCURACY {
            // the normal equations are too ill-conditioned near the optimum
            if let Some(k) = Kkt::factor(sf, &scalings, true) {
                kkt = k;
                (x1, y1, z1) = kkt.solve(&(-&sf.c), &sf.b, &sf.h);
            }
        }
        let den_base = cx_of(sf, &x1, &y1, &z1);

        let direction = |ds_rhs: &DVector<f64>, dk_rhs: f64| -> Direction {
            let q = jdiv(sf, &lam, ds_rhs);
            let wq = scale_op(sf, &scalings, Op::Wt, &q);
            let (u0x, u0y, u0z) = kkt.solve(&(-&rx), &(-&ry), &(-&rz - &wq));
            let num = -rt - dk_rhs / tau - cx_of(sf, &u0x, &u0y, &u0z);
            let den = -kappa / tau + den_base;
            let dtau = num / den;
            let dx = u0x + &x1 * dtau;
            let dy = if p > 0 { u0y + &y1 * dtau } else { DVector::zeros(0) };
            let dz = u0z + &z1 * dtau;
            let ds = &wq - hmul(sf, &scalings, &dz);
            let dkappa = (dk_rhs - kappa * dtau) / tau;
            let dzw = scale_op(sf, &scalings, Op::W, &dz);
            let dsw = &q - &dzw;
            Direction { dx, dy, dz, ds, dtau, dkappa, dsw, dzw }
        };
        let step_len = |d: &Direction| -> f64 {
            let mut t = max_step(sf, &lam, &d.dsw).max(max_step(sf, &lam, &d.dzw));
            t = t.max(-d.dtau / tau).max(-d.dkappa / kappa);
            t
        };

        // predictor
        let lamsq = jprod(sf, &lam, &lam);
        let aff = direction(&(-&lamsq), -tau * kappa);
        let t = step_len(&aff);
        let alpha_aff = if t <= 0.0 { 1.0 } else { (1.0 / t).min(1.0) };
        let sigma = (1.0 - alpha_aff).powi(3);

        // corrector
        let corr = jprod(sf, &aff.dsw, &aff.dzw);
        let ds_rhs = -&lamsq + &e * (sigma * mu) - corr;
        let dk_rhs = -tau * kappa + sigma * mu - aff.dtau * aff.dkappa;
        let d = direction(&ds_rhs, dk_rhs);
        let t = step_len(&d);
        let alpha = if t <= 0.0 { 1.0 } else { (opts.step_factor / t).min(1.0) };
        last_step = alpha;
        if !alpha.is_finite() || alpha < 1e-10 {
            stalls += 1;
            if alpha < 1e-14 || !alpha.is_finite() {
                break;
            }
        } else {
            stalls = 0;
        }

        x += &d.dx * alpha;
        if p > 0 {
            y += &d.dy * alpha;
        }
        z += &d.dz * alpha;
        s += &d.ds * alpha;
        tau += d.dtau * alpha;
        kappa += d.dkappa * alpha;
        if !(tau > 0.0 && kappa > 0.0) || !x.iter().all(|v| v.is_finite()) {
            break;
        }
        // rescale the embedding to keep τ + κ moderate
        let norm = tau.max(kappa);
        if !(1e-8..=1e8).contains(&norm) {
            let f = 1.0 / norm;
            x *= f;
            y *= f;
            z *= f;
            s *= f;
            tau *= f;
            kappa *= f;
        }
    }

    let iterations = trace.len().saturating_sub(1);
    match best {
        Some((xb, relgap, pres, dres)) => {
            RawResult { status: Status::Optimal, x: xb, relgap, pres, dres, iterations, trace }
        }
        None => {
            let last = trace.last().copied();
            let status = if iterations >= opts.max_iter { Status::IterLimit } else { Status::NumericalFailure };
            RawResult {
                status,
                x: x / tau,
                relgap: last.map_or(f64::NAN, |l| l.gap),
                pres: last.map_or(f64::NAN, |l| l.pres),
                dres: last.map_or(f64::NAN, |l| l.dres),
                iterations,
                trace,
            }
        }
    }
}

fn cx_of(sf: &StandardForm, ux: &DVector<f64>, uy: &DVector<f64>, uz: &DVector<f64>) -> f64 {
    let mut v = sf.c.dot(ux) + sf.h.dot(uz);
    if sf.p() > 0 {
        v += sf.b.dot(uy);
    }
    v
}
