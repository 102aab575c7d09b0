//! System configuration, LOS channels, waveform synthesis and the
//! backscatter signal chain.
//!
//! Channels are row vectors stored as `DVector`s; the product of a row
//! channel `h` with a column beam `w` is the plain sum `Σ h_k w_k` (see
//! [`crate::linalg::dot`]). Transmit-side LOS channels carry the conjugate
//! steering vector so that `h R h^H` equals the beampattern `a^H R a` in the
//! same direction.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{c, dot, real, CMat, CVec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("zero channel")]
    ZeroChannel,
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid { key, reason: reason.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub sig_len: usize,
    pub alpha: f64,
    pub noise_tag: f64,
    pub noise_ap: f64,
    pub noise_ue: f64,
    pub power_budget: f64,
    pub pfa: f64,
}

impl Default for SystemConfig {
    /// 16×16 array, 2048 samples, −40 dBm noise everywhere, 0 dBm budget.
    fn default() -> Self {
        SystemConfig {
            n_tx: 16,
            n_rx: 16,
            sig_len: 2048,
            alpha: 0.5,
            noise_tag: 1e-7,
            noise_ap: 1e-7,
            noise_ue: 1e-7,
            power_budget: 1e-3,
            pfa: 1e-4,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_tx == 0 {
            return Err(invalid("n_tx", "must be at least 1"));
        }
        if self.n_rx < self.n_tx {
            return Err(invalid("n_rx", format!("{} is smaller than n_tx = {}", self.n_rx, self.n_tx)));
        }
        if self.sig_len <= self.n_tx {
            return Err(invalid("sig_len", format!("{} must exceed n_tx = {}", self.sig_len, self.n_tx)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid("alpha", format!("{} outside [0, 1]", self.alpha)));
        }
        for (key, v) in [
            ("noise_tag", self.noise_tag),
            ("noise_ap", self.noise_ap),
            ("noise_ue", self.noise_ue),
            ("power_budget", self.power_budget),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, format!("{v} is not a positive power")));
            }
        }
        if !(self.pfa > 0.0 && self.pfa < 1.0) {
            return Err(invalid("pfa", format!("{} outside (0, 1)", self.pfa)));
        }
        Ok(())
    }

    /// Effective AP noise `σ_ap² + α‖h_b‖²σ_t²` seen by the estimators.
    pub fn effective_noise(&self, h_b: &CVec) -> f64 {
        self.noise_ap + self.alpha * h_b.norm_squared() * self.noise_tag
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Tx,
    Rx,
}

/// `a(θ)_k = exp(jπk sin θ)`.
pub fn steering_tx(theta: f64, n: usize) -> CVec {
    let s = std::f64::consts::PI * theta.sin();
    CVec::from_iterator(n, (0..n).map(|k| C64::from_polar(1.0, s * k as f64)))
}

pub fn steering_rx(theta: f64, n: usize) -> CVec {
    steering_tx(theta, n)
}

/// LOS row channel: `gain·a(θ)^*` toward a transmit array (so that
/// `h R h^H = gain²·a^H R a`), `gain·b(θ)` from a receive array.
pub fn los_channel(theta: f64, gain: f64, n: usize, direction: Direction) -> CVec {
    match direction {
        Direction::Tx => steering_tx(theta, n).map(|z| z.conj() * gain),
        Direction::Rx => steering_rx(theta, n) * real(gain),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    pub h_f: CVec,
    pub h_b: CVec,
    pub h_u: CVec,
    pub h_tu: C64,
    pub h_tu_max: f64,
}

impl ChannelSet {
    /// All-LOS channel set; angles in radians.
    pub fn los(cfg: &SystemConfig, tag: (f64, f64), ue: (f64, f64), h_tu: f64, h_tu_max: f64) -> Self {
        ChannelSet {
            h_f: los_channel(tag.0, tag.1, cfg.n_tx, Direction::Tx),
            h_b: los_channel(tag.0, tag.1, cfg.n_rx, Direction::Rx),
            h_u: los_channel(ue.0, ue.1, cfg.n_tx, Direction::Tx),
            h_tu: real(h_tu),
            h_tu_max,
        }
    }

    /// Robust-design surrogate: unit-gain LOS tag channels toward `theta`
    /// and the worst-case tag-to-UE coupling `h_tu_max`; `h_u` is kept.
    pub fn surrogate(&self, theta: f64, cfg: &SystemConfig) -> Self {
        ChannelSet {
            h_f: los_channel(theta, 1.0, cfg.n_tx, Direction::Tx),
            h_b: los_channel(theta, 1.0, cfg.n_rx, Direction::Rx),
            h_u: self.h_u.clone(),
            h_tu: real(self.h_tu_max),
            h_tu_max: self.h_tu_max,
        }
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<(), ModelError> {
        for (key, v, n) in [("h_f", &self.h_f, cfg.n_tx), ("h_b", &self.h_b, cfg.n_rx), ("h_u", &self.h_u, cfg.n_tx)] {
            if v.len() != n {
                return Err(invalid(key, format!("length {} but expected {n}", v.len())));
            }
            if v.iter().any(|z| !z.is_finite()) {
                return Err(invalid(key, "non-finite entry"));
            }
        }
        if !(self.h_tu_max >= 0.0) {
            return Err(invalid("h_tu_max", "must be non-negative"));
        }
        if self.h_tu.norm() > self.h_tu_max * (1.0 + 1e-12) {
            return Err(invalid("h_tu", format!("|h_tu| = {} exceeds h_tu_max = {}", self.h_tu.norm(), self.h_tu_max)));
        }
        Ok(())
    }
}

/// Joint beamformer `W = [w_u, w_t, W_s]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Beamformer {
    pub w_u: CVec,
    pub w_t: CVec,
    pub w_probe: CMat,
}

impl Beamformer {
    pub fn zeros(n: usize) -> Self {
        Beamformer { w_u: CVec::zeros(n), w_t: CVec::zeros(n), w_probe: CMat::zeros(n, n) }
    }

    pub fn n_tx(&self) -> usize {
        self.w_u.len()
    }

    /// `N_t × (N_t + 2)` matrix `W`.
    pub fn matrix(&self) -> CMat {
        let n = self.n_tx();
        let mut w = CMat::zeros(n, n + 2);
        w.column_mut(0).copy_from(&self.w_u);
        w.column_mut(1).copy_from(&self.w_t);
        w.columns_mut(2, n).copy_from(&self.w_probe);
        w
    }

    pub fn from_matrix(w: &CMat) -> Result<Self, ModelError> {
        let n = w.nrows();
        if w.ncols() != n + 2 {
            return Err(ModelError::Dimension(format!("W is {}x{}, expected {n}x{}", n, w.ncols(), n + 2)));
        }
        Ok(Beamformer {
            w_u: w.column(0).into_owned(),
            w_t: w.column(1).into_owned(),
            w_probe: w.columns(2, n).into_owned(),
        })
    }

    /// `R_W = WW^H`.
    pub fn covariance(&self) -> CMat {
        let w = self.matrix();
        &w * w.adjoint()
    }

    pub fn power(&self) -> f64 {
        self.w_u.norm_squared() + self.w_t.norm_squared() + self.w_probe.norm_squared()
    }

    pub fn validate(&self, power_budget: f64) -> Result<(), ModelError> {
        let n = self.n_tx();
        if self.w_t.len() != n || self.w_probe.shape() != (n, n) {
            return Err(ModelError::Dimension("beamformer blocks disagree".into()));
        }
        if self.matrix().iter().any(|z| !z.is_finite()) {
            return Err(invalid("beamformer", "non-finite entry"));
        }
        if self.power() > power_budget * (1.0 + 1e-6) {
            return Err(invalid("beamformer", format!("power {} exceeds budget {}", self.power(), power_budget)));
        }
        Ok(())
    }

    /// Rotates `w_u` and `w_t` so that `h_u w_u` and `h_f w_t` are real and
    /// non-negative.
    pub fn phase_aligned(&self, h_u: &CVec, h_f: &CVec) -> Self {
        let rot = |w: &CVec, h: &CVec| {
            let z = dot(h, w);
            if z.norm() > 0.0 {
                w * (z.conj() / z.norm())
            } else {
                w.clone()
            }
        };
        Beamformer { w_u: rot(&self.w_u, h_u), w_t: rot(&self.w_t, h_f), w_probe: self.w_probe.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveformBlock {
    /// `(N_t + 2) × L` rows `s_u^H`, `s_t^H`, `S_s`.
    pub streams: CMat,
    /// `N_t × L`.
    pub tx: CMat,
    pub tag_code: CVec,
}

impl WaveformBlock {
    pub fn new(bf: &Beamformer, streams: CMat) -> Result<Self, ModelError> {
        let tx = assemble_waveform(bf, &streams)?;
        let l = streams.ncols();
        Ok(WaveformBlock { streams, tx, tag_code: CVec::from_element(l, real(1.0)) })
    }
}

/// Sub-seed streams of one master seed.
pub(crate) mod stream {
    pub const DATA: u64 = 1;
    pub const TAG_NOISE: u64 = 2;
    pub const AP_NOISE: u64 = 3;
    pub const UE_NOISE: u64 = 4;
    pub const TAG_CODE: u64 = 5;
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn qpsk<R: Rng>(rng: &mut R) -> C64 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let b: u8 = rng.random_range(0..4);
    c(if b & 1 == 0 { h } else { -h }, if b & 2 == 0 { h } else { -h })
}

/// Circular complex Gaussian sample with variance `var`.
pub(crate) fn cn<R: Rng>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(s * re, s * im)
}

pub(crate) fn cn_vec<R: Rng>(rng: &mut R, n: usize, var: f64) -> CVec {
    CVec::from_iterator(n, (0..n).map(|_| cn(rng, var)))
}

/// First `n` rows of the `L`-point DFT matrix (unit-modulus entries), so
/// `(1/L)·S S^H = I_n`.
pub fn probing_streams(n: usize, l: usize) -> CMat {
    let w = -2.0 * std::f64::consts::PI / l as f64;
    CMat::from_fn(n, l, |k, t| C64::from_polar(1.0, w * ((k * t) % l) as f64))
}

/// Stream matrix `S` with two QPSK data rows followed by `S_s`.
pub fn synth_streams(cfg: &SystemConfig, seed: u64) -> CMat {
    let (n, l) = (cfg.n_tx, cfg.sig_len);
    let mut rng = rng_for(seed, stream::DATA);
    let mut s = CMat::zeros(n + 2, l);
    for r in 0..2 {
        for t in 0..l {
            s[(r, t)] = qpsk(&mut rng);
        }
    }
    s.rows_mut(2, n).copy_from(&probing_streams(n, l));
    s
}

/// `X = W S`.
pub fn assemble_waveform(bf: &Beamformer, streams: &CMat) -> Result<CMat, ModelError> {
    let n = bf.n_tx();
    if streams.nrows() != n + 2 {
        return Err(ModelError::Dimension(format!("{} stream rows for {} beams", streams.nrows(), n + 2)));
    }
    Ok(bf.matrix() * streams)
}

/// `(1/L)·XX^H`.
pub fn sample_covariance(x: &CMat) -> CMat {
    let l = x.ncols().max(1) as f64;
    crate::linalg::hermitize(&(x * x.adjoint())) * real(1.0 / l)
}

/// `h X` for a row channel.
pub(crate) fn row_times(h: &CVec, x: &CMat) -> CVec {
    (h.transpose() * x).transpose()
}

fn add_noise(y: &mut CVec, seed: Option<u64>, stream: u64, var: f64) {
    if let Some(seed) = seed {
        let mut rng = rng_for(seed, stream);
        for v in y.iter_mut() {
            *v += cn(&mut rng, var);
        }
    }
}

/// `y_t = h_f X + n_t`; `noise_seed = None` gives the noiseless chain.
pub fn chain_tag_rx(x: &CMat, ch: &ChannelSet, cfg: &SystemConfig, noise_seed: Option<u64>) -> CVec {
    let mut y = row_times(&ch.h_f, x);
    add_noise(&mut y, noise_seed, stream::TAG_NOISE, cfg.noise_tag);
    y
}

/// `y_b = √α (y_t ⊙ c_t)`.
pub fn chain_backscatter(y_t: &CVec, c_t: &CVec, cfg: &SystemConfig) -> CVec {
    y_t.component_mul(c_t) * real(cfg.alpha.sqrt())
}

/// `Y_ap = h_b^T y_b + N_ap`.
pub fn chain_ap_rx(y_b: &CVec, ch: &ChannelSet, cfg: &SystemConfig, noise_seed: Option<u64>) -> CMat {
    let mut y = &ch.h_b * y_b.transpose();
    if let Some(seed) = noise_seed {
        let mut rng = rng_for(seed, stream::AP_NOISE);
        let s = (cfg.noise_ap / 2.0).sqrt();
        // column-major fill: deterministic given the seed
        for v in y.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += c(s * re, s * im);
        }
    }
    y
}

/// `y_u = h_u X + h_tu y_b + n_u`.
pub fn chain_ue_rx(x: &CMat, y_b: &CVec, ch: &ChannelSet, cfg: &SystemConfig, noise_seed: Option<u64>) -> CVec {
    let mut y = row_times(&ch.h_u, x) + y_b * ch.h_tu;
    add_noise(&mut y, noise_seed, stream::UE_NOISE, cfg.noise_ue);
    y
}

/// Combiner `w_r = h_b^* / ‖h_b‖`, so that `w_r h_b^T = ‖h_b‖` is real.
pub fn equal_gain_combiner(h_b: &CVec) -> Result<CVec, ModelError> {
    let n = h_b.norm();
    if !(n > 0.0) {
        return Err(ModelError::ZeroChannel);
    }
    Ok(h_b.map(|z| z.conj() / n))
}

/// Deterministic unit-modulus QPSK tag code.
pub fn random_tag_code(l: usize, seed: u64) -> CVec {
    let mut rng = rng_for(seed, stream::TAG_CODE);
    CVec::from_iterator(l, (0..l).map(|_| qpsk(&mut rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{quad, row_outer};
    use std::f64::consts::PI;

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn steering_examples() {
        assert!(steering_tx(0.0, 4).iter().all(|&z| close(z, real(1.0))));
        let a = steering_tx(PI / 2.0, 2);
        assert!(close(a[0], real(1.0)) && close(a[1], real(-1.0)));
        let a = steering_rx(PI / 6.0, 3);
        assert!(close(a[0], real(1.0)) && close(a[1], c(0.0, 1.0)) && close(a[2], real(-1.0)));
        assert!(steering_tx(1.234, 7).iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn los_examples() {
        let th = 126f64.to_radians();
        let h = los_channel(th, 0.8, 16, Direction::Tx);
        let a = steering_tx(th, 16);
        assert!((&h - a.map(|z| z.conj() * 0.8)).norm() < 1e-15);
        // h R h^H is the beampattern value gain²·a^H R a
        let r = row_outer(&a.map(|z| z.conj()));
        assert!((quad(&h, &r) - 0.64 * 256.0).abs() < 1e-9);
        assert!(close(los_channel(0.3, 1.0, 1, Direction::Rx)[0], real(1.0)));
    }

    fn small_cfg() -> SystemConfig {
        SystemConfig { n_tx: 4, n_rx: 6, sig_len: 64, ..SystemConfig::default() }
    }

    #[test]
    fn config_validation_names_keys() {
        assert!(SystemConfig::default().validate().is_ok());
        let e = SystemConfig { power_budget: -1.0, ..SystemConfig::default() }.validate().unwrap_err();
        assert!(e.to_string().contains("power_budget"));
        let e = SystemConfig { sig_len: 16, ..SystemConfig::default() }.validate().unwrap_err();
        assert!(e.to_string().contains("sig_len"));
    }

    #[test]
    fn probing_rows_are_orthonormal() {
        for (n, l) in [(1, 2), (4, 4), (16, 2048), (5, 37)] {
            let s = probing_streams(n, l);
            let g = &s * s.adjoint() * real(1.0 / l as f64);
            assert!((g - CMat::identity(n, n)).norm() < 1e-12, "{n} {l}");
        }
    }

    #[test]
    fn synthesized_streams() {
        let cfg = SystemConfig::default();
        let s = synth_streams(&cfg, 7);
        let n = cfg.n_tx;
        let g = &s * s.adjoint() * real(1.0 / cfg.sig_len as f64);
        assert!((g.view((2, 2), (n, n)) - CMat::identity(n, n)).norm() < 1e-12);
        // 66 off-diagonal entries of variance 1/L each: E‖·‖_F² = 66/L
        let expect = (66.0 / cfg.sig_len as f64).sqrt();
        let dev = (g - CMat::identity(n + 2, n + 2)).norm();
        assert!(dev <= 1.5 * expect, "{dev}");
        assert!(s.row(0).iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
        let s2 = synth_streams(&cfg, 8);
        assert_ne!(s.row(0), s2.row(0));
        assert_eq!(s, synth_streams(&cfg, 7));
    }

    #[test]
    fn assemble_matches_naive_product() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bf = Beamformer::zeros(4);
        bf.w_u = cn_vec(&mut rng, 4, 1.0);
        bf.w_t = cn_vec(&mut rng, 4, 1.0);
        bf.w_probe = CMat::from_fn(4, 4, |_, _| cn(&mut rng, 1.0));
        let s = synth_streams(&cfg, 3);
        let x = assemble_waveform(&bf, &s).unwrap();
        for i in 0..4 {
            for t in 0..cfg.sig_len {
                let mut acc = bf.w_u[i] * s[(0, t)] + bf.w_t[i] * s[(1, t)];
                for k in 0..4 {
                    acc += bf.w_probe[(i, k)] * s[(k + 2, t)];
                }
                assert!((acc - x[(i, t)]).norm() < 1e-12);
            }
        }
        // exact covariance with orthonormal test streams
        let ortho = probing_streams(6, cfg.sig_len);
        let r = sample_covariance(&assemble_waveform(&bf, &ortho).unwrap());
        assert!((r - bf.covariance()).norm() < 1e-10 * bf.power());
        // only w_u → rank one
        let only = Beamformer { w_u: bf.w_u.clone(), ..Beamformer::zeros(4) };
        let r = sample_covariance(&assemble_waveform(&only, &s).unwrap());
        let ev = r.symmetric_eigenvalues();
        let mut v: Vec<f64> = ev.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        assert!(v[2].abs() < 1e-12 * v[3]);
        assert!(assemble_waveform(&bf, &probing_streams(3, 8)).is_err());
    }

    #[test]
    fn sample_covariance_of_paper_waveform() {
        let cfg = SystemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = cfg.n_tx;
        let mut bf = Beamformer::zeros(n);
        bf.w_u = cn_vec(&mut rng, n, 1.0);
        bf.w_t = cn_vec(&mut rng, n, 1.0);
        bf.w_probe = CMat::from_fn(n, n, |_, _| cn(&mut rng, 0.1));
        let s = 1e-3 / bf.power();
        bf.w_u *= real(s.sqrt());
        bf.w_t *= real(s.sqrt());
        bf.w_probe *= real(s.sqrt());
        let x = assemble_waveform(&bf, &synth_streams(&cfg, 1)).unwrap();
        let r = sample_covariance(&x);
        let rw = bf.covariance();
        assert!((&r - &rw).norm() / rw.norm() <= 0.05);
        assert!(r.trace().re <= 1e-3 * 1.05);
        assert!(crate::linalg::min_eig(&r) >= -1e-12 * r.norm());
        let iso = probing_streams(n, cfg.sig_len) * real((1e-3 / n as f64).sqrt());
        let r = sample_covariance(&iso);
        assert!((r - CMat::identity(n, n) * real(1e-3 / n as f64)).norm() < 1e-15);
    }

    fn cfg_and_channels() -> (SystemConfig, ChannelSet) {
        let cfg = small_cfg();
        let ch = ChannelSet::los(&cfg, (0.7, 0.8), (2.2, 0.8), 0.3, 0.5);
        (cfg, ch)
    }

    #[test]
    fn chain_noiseless_identities() {
        let (cfg, ch) = cfg_and_channels();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = CMat::from_fn(4, cfg.sig_len, |_, _| cn(&mut rng, 1.0));
        let ones = CVec::from_element(cfg.sig_len, real(1.0));
        let yt = chain_tag_rx(&x, &ch, &cfg, None);
        let yb = chain_backscatter(&yt, &ones, &cfg);
        let yap = chain_ap_rx(&yb, &ch, &cfg, None);
        let g = &ch.h_b * ch.h_f.transpose() * real(cfg.alpha.sqrt());
        assert!((&yap - &g * &x).norm() < 1e-12 * yap.norm());

        let cfg0 = SystemConfig { alpha: 0.0, ..cfg.clone() };
        let yb0 = chain_backscatter(&yt, &ones, &cfg0);
        assert_eq!(yb0.norm(), 0.0);
        let yap0 = chain_ap_rx(&yb0, &ch, &cfg0, Some(1));
        assert!(yap0.norm() > 0.0);

        // linearity in X and √α
        let x2 = &x * real(2.0);
        let yb2 = chain_backscatter(&chain_tag_rx(&x2, &ch, &cfg, None), &ones, &cfg);
        assert!((&yb2 - &yb * real(2.0)).norm() < 1e-12 * yb2.norm());
        let cfg4 = SystemConfig { alpha: cfg.alpha / 4.0, ..cfg.clone() };
        let ybq = chain_backscatter(&yt, &ones, &cfg4);
        assert!((&ybq * real(2.0) - &yb).norm() < 1e-12 * yb.norm());

        // combined signal equals w_r applied to the array output
        let wr = equal_gain_combiner(&ch.h_b).unwrap();
        let noisy = chain_ap_rx(&yb, &ch, &cfg, Some(3));
        let comb = (wr.transpose() * &noisy).transpose();
        let gain = dot(&wr, &ch.h_b);
        assert!((gain.im).abs() < 1e-12 && (gain.re - ch.h_b.norm()).abs() < 1e-12);
        let clean = &yb * gain;
        let resid = (&comb - &clean).norm_squared() / cfg.sig_len as f64;
        assert!((resid / cfg.noise_ap - 1.0).abs() < 0.5);

        let yu = chain_ue_rx(&x, &yb, &ch, &cfg, None);
        let expect = row_times(&ch.h_u, &x) + &yb * ch.h_tu;
        assert!((yu - expect).norm() < 1e-12);
    }

    #[test]
    fn tag_beam_power_moment() {
        let cfg = SystemConfig::default();
        let ch = ChannelSet::los(&cfg, (PI / 4.0, 0.8), (126f64.to_radians(), 0.8), 0.5, 0.5);
        let mut bf = Beamformer::zeros(16);
        bf.w_t = ch.h_f.map(|z| z.conj()) * real((1e-3f64).sqrt() / ch.h_f.norm());
        let s = synth_streams(&cfg, 21);
        let x = assemble_waveform(&bf, &s).unwrap();
        let yt = chain_tag_rx(&x, &ch, &cfg, None);
        let emp = yt.norm_squared() / cfg.sig_len as f64;
        let exact = dot(&ch.h_f, &bf.w_t).norm_sqr();
        // unit-modulus symbols: the moment is exact
        assert!((emp / exact - 1.0).abs() < 1e-12);
    }

    #[test]
    fn combiner_examples() {
        let w = equal_gain_combiner(&CVec::from_vec(vec![real(2.0), real(0.0)])).unwrap();
        assert!(close(w[0], real(1.0)) && close(w[1], real(0.0)));
        let b = steering_rx(0.4, 8);
        let w = equal_gain_combiner(&b).unwrap();
        assert!((w.norm() - 1.0).abs() < 1e-15);
        assert!((w - b.map(|z| z.conj() / 8f64.sqrt())).norm() < 1e-15);
        assert_eq!(equal_gain_combiner(&CVec::zeros(3)), Err(ModelError::ZeroChannel));
    }

    #[test]
    fn noise_is_reproducible() {
        let (cfg, ch) = cfg_and_channels();
        let x = probing_streams(4, cfg.sig_len);
        assert_eq!(chain_tag_rx(&x, &ch, &cfg, Some(9)), chain_tag_rx(&x, &ch, &cfg, Some(9)));
        assert_ne!(chain_tag_rx(&x, &ch, &cfg, Some(9)), chain_tag_rx(&x, &ch, &cfg, Some(10)));
    }
}
