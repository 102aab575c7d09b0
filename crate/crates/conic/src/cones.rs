//! Cone blocks, Nesterov–Todd scalings and Jordan-algebra helpers.
//!
//! PSD blocks hold a real symmetric `d×d` matrix in full column-major
//! storage, so the Euclidean inner product of two block vectors is the
//! trace inner product.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ConeKind {
    NonNeg,
    Soc,
    Psd,
}

#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub kind: ConeKind,
    pub offset: usize,
    pub len: usize,
    /// Matrix order for PSD blocks, `len` otherwise.
    pub order: usize,
}

impl Block {
    pub fn nonneg(offset: usize, len: usize) -> Self {
        Block { kind: ConeKind::NonNeg, offset, len, order: len }
    }
    pub fn soc(offset: usize, len: usize) -> Self {
        Block { kind: ConeKind::Soc, offset, len, order: len }
    }
    pub fn psd(offset: usize, order: usize) -> Self {
        Block { kind: ConeKind::Psd, offset, len: order * order, order }
    }
    pub fn degree(&self) -> usize {
        match self.kind {
            ConeKind::NonNeg => self.len,
            ConeKind::Soc => 1,
            ConeKind::Psd => self.order,
        }
    }
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Scaling {
    NonNeg { d: Vec<f64> },
    /// `W = β(2vvᵀ − J)`
    Soc { beta: f64, v: Vec<f64> },
    /// `W(U) = RᵀUR`; `rti = R⁻ᵀ`; `vinv = R⁻ᵀR⁻¹` so `H⁻¹(U) = vinv·U·vinv`.
    Psd { r: DMatrix<f64>, rti: DMatrix<f64>, vinv: DMatrix<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Op {
    W,
    Wt,
    Winv,
    WinvT,
}

fn mat(u: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(d, d, u)
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn put(m: &DMatrix<f64>, out: &mut [f64]) {
    out.copy_from_slice(m.as_slice());
}

/// Square-root factor `L` with `LLᵀ = m`, Cholesky first, eigen fallback.
fn sqrt_factor(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(c) = m.clone().cholesky() {
        return Some(c.l());
    }
    let e = m.clone().symmetric_eigen();
    let top = e.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if !(top > 0.0) || !top.is_finite() {
        return None;
    }
    let floor = top * 1e-300_f64.max(f64::EPSILON * f64::EPSILON);
    let mut l = e.eigenvectors.clone();
    for (k, &lam) in e.eigenvalues.iter().enumerate() {
        let s = lam.max(floor).sqrt();
        l.column_mut(k).scale_mut(s);
    }
    Some(l)
}

pub(crate) fn identity_scaling(b: &Block) -> Scaling {
    match b.kind {
        ConeKind::NonNeg => Scaling::NonNeg { d: vec![1.0; b.len] },
        ConeKind::Soc => {
            let mut v = vec![0.0; b.len];
            v[0] = 1.0;
            Scaling::Soc { beta: 1.0, v }
        }
        ConeKind::Psd => {
            let i = DMatrix::identity(b.order, b.order);
            Scaling::Psd { r: i.clone(), rti: i.clone(), vinv: i }
        }
    }
}

/// Writes the cone identity `e` into `out`.
pub(crate) fn unit(b: &Block, out: &mut [f64]) {
    out.fill(0.0);
    match b.kind {
        ConeKind::NonNeg => out.fill(1.0),
        ConeKind::Soc => out[0] = 1.0,
        ConeKind::Psd => {
            for i in 0..b.order {
                out[i * b.order + i] = 1.0;
            }
        }
    }
}

/// Smallest "eigenvalue" of `u` in the Jordan algebra of the cone.
pub(crate) fn min_eig(b: &Block, u: &[f64]) -> f64 {
    match b.kind {
        ConeKind::NonNeg => u.iter().copied().fold(f64::INFINITY, f64::min),
        ConeKind::Soc => u[0] - norm(&u[1..]),
        ConeKind::Psd => {
            let m = sym(&mat(u, b.order));
            m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
        }
    }
}

fn norm(u: &[f64]) -> f64 {
    u.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hyperbolic norm `sqrt(u₀² − ‖u₁‖²)`.
fn jnorm(u: &[f64]) -> f64 {
    let t = norm(&u[1..]);
    ((u[0] - t) * (u[0] + t)).max(0.0).sqrt()
}

/// NT scaling and scaled point `λ = W z = W⁻ᵀ s` for interior `s`, `z`.
pub(crate) fn compute_scaling(b: &Block, s: &[f64], z: &[f64]) -> Option<(Scaling, Vec<f64>)> {
    match b.kind {
        ConeKind::NonNeg => {
            let mut d = Vec::with_capacity(b.len);
            let mut lam = Vec::with_capacity(b.len);
            for (&si, &zi) in s.iter().zip(z) {
                if !(si > 0.0 && zi > 0.0) {
                    return None;
                }
                d.push((si / zi).sqrt());
                lam.push((si * zi).sqrt());
            }
            Some((Scaling::NonNeg { d }, lam))
        }
        ConeKind::Soc => {
            let aa = jnorm(s);
            let bb = jnorm(z);
            if !(aa > 0.0 && bb > 0.0) || s[0] <= 0.0 || z[0] <= 0.0 {
                return None;
            }
            let beta = (aa / bb).sqrt();
            let cc = ((dot(s, z) / (aa * bb) + 1.0) / 2.0).max(0.0).sqrt();
            let mut v: Vec<f64> = Vec::with_capacity(b.len);
            v.push((s[0] / aa + z[0] / bb) / (2.0 * cc));
            for k in 1..b.len {
                v.push((s[k] / aa - z[k] / bb) / (2.0 * cc));
            }
            v[0] += 1.0;
            let nv = (2.0 * v[0]).sqrt();
            v.iter_mut().for_each(|a| *a /= nv);
            let sc = Scaling::Soc { beta, v };
            let mut lam = vec![0.0; b.len];
            apply(b, &sc, Op::W, z, &mut lam);
            Some((sc, lam))
        }
        ConeKind::Psd => {
            let d = b.order;
            let ls = sqrt_factor(&sym(&mat(s, d)))?;
            let lz = sqrt_factor(&sym(&mat(z, d)))?;
            let svd = (lz.transpose() * &ls).svd(true, true);
            let u = svd.u?;
            let vt = svd.v_t?;
            let sv = svd.singular_values;
            if sv.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return None;
            }
            let isq = DVector::from_iterator(d, sv.iter().map(|x| 1.0 / x.sqrt()));
            let mut r = ls * vt.transpose();
            let mut rti = lz * u;
            for k in 0..d {
                r.column_mut(k).scale_mut(isq[k]);
                rti.column_mut(k).scale_mut(isq[k]);
            }
            let vinv = &rti * rti.transpose();
            let mut lam = vec![0.0; d * d];
            for k in 0..d {
                lam[k * d + k] = sv[k];
            }
            Some((Scaling::Psd { r, rti, vinv }, lam))
        }
    }
}

/// `out = op(W)·u` on one block.
pub(crate) fn apply(b: &Block, sc: &Scaling, op: Op, u: &[f64], out: &mut [f64]) {
    match sc {
        Scaling::NonNeg { d } => {
            for k in 0..b.len {
                out[k] = match op {
                    Op::W | Op::Wt => d[k] * u[k],
                    Op::Winv | Op::WinvT => u[k] / d[k],
                };
            }
        }
        Scaling::Soc { beta, v } => {
            // W = β(2vvᵀ − J) is symmetric; W⁻¹ = β⁻¹(2Jv(Jv)ᵀ − J).
            match op {
                Op::W | Op::Wt => {
                    let vu = dot(v, u);
                    out[0] = beta * (2.0 * v[0] * vu - u[0]);
                    for k in 1..b.len {
                        out[k] = beta * (2.0 * v[k] * vu + u[k]);
                    }
                }
                Op::Winv | Op::WinvT => {
                    let jvu = v[0] * u[0] - dot(&v[1..], &u[1..]);
                    out[0] = (2.0 * v[0] * jvu - u[0]) / beta;
                    for k in 1..b.len {
                        out[k] = (-2.0 * v[k] * jvu + u[k]) / beta;
                    }
                }
            }
        }
        Scaling::Psd { r, rti, .. } => {
            let m = mat(u, b.order);
            let res = match op {
                Op::W => r.transpose() * m * r,
                Op::Wt => r * m * r.transpose(),
                Op::Winv => rti * m * rti.transpose(),
                Op::WinvT => rti.transpose() * m * rti,
            };
            put(&res, out);
        }
    }
}

/// `out = H⁻¹u = W⁻¹W⁻ᵀu`.
pub(crate) fn hinv(b: &Block, sc: &Scaling, u: &[f64], out: &mut [f64]) {
    match sc {
        Scaling::NonNeg { d } => {
            for k in 0..b.len {
                out[k] = u[k] / (d[k] * d[k]);
            }
        }
        Scaling::Soc { .. } => {
            let mut t = vec![0.0; b.len];
            apply(b, sc, Op::WinvT, u, &mut t);
            apply(b, sc, Op::Winv, &t, out);
        }
        Scaling::Psd { vinv, .. } => {
            let m = mat(u, b.order);
            put(&(vinv * m * vinv), out);
        }
    }
}

/// `out = H u = WᵀW u`.
pub(crate) fn hmul(b: &Block, sc: &Scaling, u: &[f64], out: &mut [f64]) {
    let mut t = vec![0.0; b.len];
    apply(b, sc, Op::W, u, &mut t);
    apply(b, sc, Op::Wt, &t, out);
}

/// `H⁻¹ g` for a sparse block vector `g` (local indices), written densely.
pub(crate) fn hinv_sparse(b: &Block, sc: &Scaling, g: &[(usize, f64)], out: &mut [f64]) {
    match sc {
        Scaling::Psd { vinv, .. } => {
            out.fill(0.0);
            let d = b.order;
            // (V E_pq V)_{ij} = V_ip V_qj
            for &(k, val) in g {
                let (p, q) = (k % d, k / d);
                let cp = vinv.column(p);
                let cq = vinv.column(q);
                for j in 0..d {
                    let f = val * cq[j];
                    if f == 0.0 {
                        continue;
                    }
                    let col = &mut out[j * d..(j + 1) * d];
                    for i in 0..d {
                        col[i] += cp[i] * f;
                    }
                }
            }
        }
        _ => {
            let mut dense = vec![0.0; b.len];
            for &(k, val) in g {
                dense[k] += val;
            }
            hinv(b, sc, &dense, out);
        }
    }
}

/// Jordan product `u∘v`.
pub(crate) fn jprod(b: &Block, u: &[f64], v: &[f64], out: &mut [f64]) {
    match b.kind {
        ConeKind::NonNeg => {
            for k in 0..b.len {
                out[k] = u[k] * v[k];
            }
        }
        ConeKind::Soc => {
            out[0] = dot(u, v);
            for k in 1..b.len {
                out[k] = u[0] * v[k] + v[0] * u[k];
            }
        }
        ConeKind::Psd => {
            let mu = mat(u, b.order);
            let mv = mat(v, b.order);
            let p = &mu * &mv;
            put(&sym(&p), out);
        }
    }
}

/// Solves `λ∘x = u` for `x`; PSD `λ` must be diagonal.
pub(crate) fn jdiv(b: &Block, lam: &[f64], u: &[f64], out: &mut [f64]) {
    match b.kind {
        ConeKind::NonNeg => {
            for k in 0..b.len {
                out[k] = u[k] / lam[k];
            }
        }
        ConeKind::Soc => {
            let det = lam[0] * lam[0] - dot(&lam[1..], &lam[1..]);
            let x0 = (lam[0] * u[0] - dot(&lam[1..], &u[1..])) / det;
            out[0] = x0;
            for k in 1..b.len {
                out[k] = (u[k] - x0 * lam[k]) / lam[0];
            }
        }
        ConeKind::Psd => {
            let d = b.order;
            for j in 0..d {
                for i in 0..d {
                    out[j * d + i] = 2.0 * u[j * d + i] / (lam[i * d + i] + lam[j * d + j]);
                }
            }
        }
    }
}

/// Returns `t ≥ 0` such that `λ + α·dir` stays in the cone for all
/// `α < 1/t` (`t = 0` means unbounded). `λ` is the scaled point.
pub(crate) fn max_step(b: &Block, lam: &[f64], dir: &[f64]) -> f64 {
    match b.kind {
        ConeKind::NonNeg => {
            let mut t = 0.0f64;
            for k in 0..b.len {
                t = t.max(-dir[k] / lam[k]);
            }
            t
        }
        ConeKind::Soc => {
            // f(α) = (λ₀+αd₀)² − ‖λ₁+αd₁‖² = aα² + 2bα + c, c > 0
            let a = dir[0] * dir[0] - dot(&dir[1..], &dir[1..]);
            let bq = lam[0] * dir[0] - dot(&lam[1..], &dir[1..]);
            let c = lam[0] * lam[0] - dot(&lam[1..], &lam[1..]);
            smallest_positive_root(a, bq, c).map_or(0.0, |r| 1.0 / r)
        }
        ConeKind::Psd => {
            let d = b.order;
            let isq: Vec<f64> = (0..d).map(|i| 1.0 / lam[i * d + i].sqrt()).collect();
            let m = DMatrix::from_fn(d, d, |i, j| {
                0.5 * (dir[j * d + i] + dir[i * d + j]) * isq[i] * isq[j]
            });
            let lmin = m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
            (-lmin).max(0.0)
        }
    }
}

fn smallest_positive_root(a: f64, b: f64, c: f64) -> Option<f64> {
    // roots of aα² + 2bα + c
    if a.abs() <= 1e-300 {
        return if b < 0.0 { Some(-c / (2.0 * b)) } else { None };
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let q = -(b + b.signum() * sq);
    let mut best: Option<f64> = None;
    for r in [q / a, if q != 0.0 { c / q } else { f64::NAN }] {
        if r > 0.0 && r.is_finite() {
            best = Some(best.map_or(r, |x: f64| x.min(r)));
        }
    }
    best
}
