//! Closed-form communication and sensing metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, dot, hermitian_evd, hpd_inverse, quad, real, CMat, CVec, LinalgError};
use crate::model::{steering_tx, Beamformer, ChannelSet, SystemConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("argument out of domain: {0}")]
    Domain(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinrReport {
    pub value: f64,
    pub decibels: f64,
}

impl SinrReport {
    pub fn new(value: f64) -> Self {
        let value = value.max(0.0);
        SinrReport { value, decibels: linalg::linear_to_db(value) }
    }
}

/// Channel correlation prior `R_G = E{G^H G}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorPrior {
    pub r_g: CMat,
}

impl EstimatorPrior {
    pub fn new(r_g: CMat) -> Result<Self, MetricsError> {
        let (vals, _) = hermitian_evd(&r_g)?;
        match vals.last() {
            Some(&lo) if lo > 0.0 => Ok(EstimatorPrior { r_g }),
            Some(&lo) => Err(LinalgError::NotPsd(lo).into()),
            None => Err(MetricsError::Domain("empty prior".into())),
        }
    }

    /// `scale·ρ^{|i−j|}` modulated by the steering phase toward `theta`:
    /// positive definite for `|ρ| < 1`.
    pub fn exponential(n: usize, rho: f64, theta: f64, scale: f64) -> Result<Self, MetricsError> {
        if !(rho.abs() < 1.0 && scale > 0.0) {
            return Err(MetricsError::Domain(format!("rho = {rho}, scale = {scale}")));
        }
        let a = steering_tx(theta, n);
        let r = CMat::from_fn(n, n, |i, j| a[i].conj() * a[j] * rho.powi((i as i32 - j as i32).abs()) * scale);
        Self::new(linalg::hermitize(&r))
    }

    pub fn scaled(&self, s: f64) -> Self {
        EstimatorPrior { r_g: &self.r_g * real(s) }
    }
}

/// `P(θ) = a(θ)^H R_X a(θ)` per grid angle.
pub fn beampattern(r_x: &CMat, thetas: &[f64]) -> Result<Vec<f64>, MetricsError> {
    let lo = linalg::min_eig(r_x);
    if lo < -1e-9 * r_x.norm().max(f64::MIN_POSITIVE) {
        return Err(LinalgError::NotPsd(lo).into());
    }
    let n = r_x.nrows();
    Ok(thetas
        .iter()
        .map(|&t| {
            let a = steering_tx(t, n);
            (a.adjoint() * r_x * &a)[(0, 0)].re.max(0.0)
        })
        .collect())
}

/// `Σ_cols |h w|²` over the probing block.
pub(crate) fn probe_power(h: &CVec, bf: &Beamformer) -> f64 {
    (h.transpose() * &bf.w_probe).norm_squared()
}

/// Tag SINR: `|h_f w_t|² / (|h_f w_u|² + ‖h_f W_s‖² + σ_t²)`.
pub fn sinr_tag(bf: &Beamformer, h_f: &CVec, noise_tag: f64) -> SinrReport {
    let s = dot(h_f, &bf.w_t).norm_sqr();
    let i = dot(h_f, &bf.w_u).norm_sqr() + probe_power(h_f, bf);
    SinrReport::new(s / (i + noise_tag))
}

/// AP SINR of the combined backscatter signal.
pub fn sinr_ap(bf: &Beamformer, h_f: &CVec, h_b: &CVec, w_r: &CVec, cfg: &SystemConfig) -> SinrReport {
    sinr_ap_cov(&bf.covariance(), h_f, h_b, w_r, cfg)
}

pub fn sinr_ap_cov(r: &CMat, h_f: &CVec, h_b: &CVec, w_r: &CVec, cfg: &SystemConfig) -> SinrReport {
    let g2 = cfg.alpha * dot(w_r, h_b).norm_sqr();
    let num = g2 * quad(h_f, r);
    let den = g2 * cfg.noise_tag + w_r.norm_squared() * cfg.noise_ap;
    SinrReport::new(num / den)
}

/// AP SINR for a tag at angle `theta` with unit-gain LOS channels.
pub fn sinr_ap_grid(bf: &Beamformer, theta: f64, cfg: &SystemConfig) -> SinrReport {
    sinr_ap_grid_cov(&bf.covariance(), theta, cfg)
}

pub fn sinr_ap_grid_cov(r: &CMat, theta: f64, cfg: &SystemConfig) -> SinrReport {
    let a = steering_tx(theta, r.nrows());
    let p = (a.adjoint() * r * &a)[(0, 0)].re;
    let an = cfg.alpha * cfg.n_rx as f64;
    SinrReport::new(an * p / (an * cfg.noise_tag + cfg.noise_ap))
}

fn check_pfa(pfa: f64) -> Result<(), MetricsError> {
    if !(pfa > 0.0 && pfa < 1.0) {
        return Err(MetricsError::Domain(format!("pfa = {pfa}")));
    }
    Ok(())
}

/// `½ erfc(erfc⁻¹(2P_F) − √γ_ap)`.
pub fn detection_probability(gamma_ap: f64, pfa: f64) -> Result<f64, MetricsError> {
    check_pfa(pfa)?;
    if !(gamma_ap >= 0.0) {
        return Err(MetricsError::Domain(format!("gamma_ap = {gamma_ap}")));
    }
    Ok(0.5 * linalg::erfc(linalg::erfc_inv(2.0 * pfa)? - gamma_ap.sqrt()))
}

/// Exact detection probability of the matched statistic over `L` samples:
/// `½ erfc((σ₀/σ₁)·erfc⁻¹(2P_F) − √(L·γ_ap))`, where `σ₀²` is the combined
/// AP noise and `σ₁²` adds the re-scattered tag noise.
pub fn detection_probability_exact(gamma_ap: f64, sigma_ratio: f64, sig_len: usize, pfa: f64) -> Result<f64, MetricsError> {
    check_pfa(pfa)?;
    let z = sigma_ratio * linalg::erfc_inv(2.0 * pfa)? - (sig_len as f64 * gamma_ap.max(0.0)).sqrt();
    Ok(0.5 * linalg::erfc(z))
}

/// `σ₀/σ₁` for the combiner `w_r` and tag-side gain.
pub fn detection_sigma_ratio(h_b: &CVec, w_r: &CVec, cfg: &SystemConfig) -> f64 {
    let s0 = w_r.norm_squared() * cfg.noise_ap;
    let s1 = cfg.alpha * dot(w_r, h_b).norm_sqr() * cfg.noise_tag + s0;
    (s0 / s1).sqrt()
}

/// CFAR threshold `η = √(2v)·erfc⁻¹(2P_F)` for the statistic
/// `Re{y (√α g h_f X)^H}`, with `v` the exact H0 variance and `R_X ≈ R_W`.
pub fn cfar_threshold(bf: &Beamformer, ch_surrogate: &ChannelSet, w_r: &CVec, cfg: &SystemConfig) -> Result<f64, MetricsError> {
    let g2 = cfg.alpha * dot(w_r, &ch_surrogate.h_b).norm_sqr();
    let energy = quad(&ch_surrogate.h_f, &bf.covariance()) * cfg.sig_len as f64;
    cfar_threshold_energy(g2 * energy, w_r.norm_squared() * cfg.noise_ap, cfg.pfa)
}

/// Threshold for `Re{y m^H}` where `y` carries combined noise of variance
/// `noise_var` per sample and the template has energy `‖m‖² = template_energy`.
pub fn cfar_threshold_energy(template_energy: f64, noise_var: f64, pfa: f64) -> Result<f64, MetricsError> {
    check_pfa(pfa)?;
    let v = 0.5 * noise_var * template_energy;
    Ok((2.0 * v).sqrt() * linalg::erfc_inv(2.0 * pfa)?)
}

/// Denominator of the UE SINR (interference plus noise).
pub fn ue_interference(bf: &Beamformer, ch: &ChannelSet, cfg: &SystemConfig) -> f64 {
    let hu = &ch.h_u;
    let hf = &ch.h_f;
    let a = cfg.alpha * ch.h_tu.norm_sqr();
    dot(hu, &bf.w_t).norm_sqr()
        + probe_power(hu, bf)
        + a * (dot(hf, &bf.w_u).norm_sqr() + dot(hf, &bf.w_t).norm_sqr() + probe_power(hf, bf) + cfg.noise_tag)
        + cfg.noise_ue
}

pub fn sinr_ue(bf: &Beamformer, ch: &ChannelSet, cfg: &SystemConfig) -> SinrReport {
    SinrReport::new(dot(&ch.h_u, &bf.w_u).norm_sqr() / ue_interference(bf, ch, cfg))
}

pub fn rate_ue(bf: &Beamformer, ch: &ChannelSet, cfg: &SystemConfig) -> f64 {
    (1.0 + sinr_ue(bf, ch, cfg).value).log2()
}

fn trace_inverse(r: &CMat) -> f64 {
    match hpd_inverse(r) {
        Ok(inv) => inv.trace().re,
        Err(_) => f64::INFINITY,
    }
}

/// LS error `N_r(σ_ap² + α‖h_b‖²σ_t²)/(αL)·Tr(R_W⁻¹)`; `+∞` for a singular
/// covariance or `α = 0`.
pub fn ls_error(r_w: &CMat, h_b: &CVec, cfg: &SystemConfig) -> f64 {
    if cfg.alpha <= 0.0 {
        return f64::INFINITY;
    }
    let k = cfg.n_rx as f64 * cfg.effective_noise(h_b) / (cfg.alpha * cfg.sig_len as f64);
    k * trace_inverse(r_w)
}

/// Exact LS error of the chain model, where the re-scattered tag noise is
/// rank one across the receive array: `(N_rσ_ap² + α‖h_b‖²σ_t²)/(αL)·Tr(R_X⁻¹)`.
pub fn ls_error_exact(r_x: &CMat, h_b: &CVec, cfg: &SystemConfig) -> f64 {
    if cfg.alpha <= 0.0 {
        return f64::INFINITY;
    }
    let k = (cfg.n_rx as f64 * cfg.noise_ap + cfg.alpha * h_b.norm_squared() * cfg.noise_tag)
        / (cfg.alpha * cfg.sig_len as f64);
    k * trace_inverse(r_x)
}

/// `(P_T/N_t)·I`.
pub fn ls_optimal_covariance(cfg: &SystemConfig) -> CMat {
    CMat::identity(cfg.n_tx, cfg.n_tx) * real(cfg.power_budget / cfg.n_tx as f64)
}

/// `c = αL/(N_r σ̃²)`, the weight of `R_W` inside the LMMSE error.
pub fn lmmse_weight(h_b: &CVec, cfg: &SystemConfig) -> f64 {
    cfg.alpha * cfg.sig_len as f64 / (cfg.n_rx as f64 * cfg.effective_noise(h_b))
}

/// `Tr((R_G⁻¹ + c·R_W)⁻¹)`.
pub fn lmmse_error(r_w: &CMat, prior: &EstimatorPrior, h_b: &CVec, cfg: &SystemConfig) -> Result<f64, MetricsError> {
    let rg_inv = hpd_inverse(&prior.r_g)?;
    let m = rg_inv + r_w * real(lmmse_weight(h_b, cfg));
    Ok(hpd_inverse(&m)?.trace().re)
}

/// Water-filling over the eigenmodes of `R_G`: mode `k` receives
/// `max(μ₀ − 1/λ_k, 0)/c` with `μ₀` set by bisection so the trace is `P_T`.
pub fn lmmse_optimal_covariance(prior: &EstimatorPrior, h_b: &CVec, cfg: &SystemConfig) -> Result<CMat, MetricsError> {
    if !(cfg.power_budget > 0.0) {
        return Err(MetricsError::Domain(format!("power_budget = {}", cfg.power_budget)));
    }
    let (lams, q) = hermitian_evd(&prior.r_g)?;
    let w = lmmse_weight(h_b, cfg);
    let inv: Vec<f64> = lams.iter().map(|l| 1.0 / l).collect();
    let total = |mu: f64| inv.iter().map(|v| (mu - v).max(0.0)).sum::<f64>() / w;
    let mut lo = inv.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = lo + cfg.power_budget * w + inv.iter().copied().fold(0.0, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > cfg.power_budget {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let mu = 0.5 * (lo + hi);
    let mut p: Vec<f64> = inv.iter().map(|v| (mu - v).max(0.0) / w).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v *= cfg.power_budget / s);
    let d = CMat::from_diagonal(&CVec::from_iterator(p.len(), p.iter().map(|&v| real(v))));
    Ok(linalg::hermitize(&(&q * d * q.adjoint())))
}
