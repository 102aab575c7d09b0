//! Waveform-level Monte-Carlo checks of the analytic metrics.
//!
//! Trials are split into fixed-size chunks; each chunk owns a ChaCha stream
//! derived from `(seed, chunk index)`, and chunk results are merged in
//! index order, so reports are bit-identical for any worker count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, dot, psd_factor, real, CMat, CVec, LinalgError};
use crate::metrics::{self, EstimatorPrior, MetricsError};
use crate::model::{
    self, cn, cn_vec, equal_gain_combiner, los_channel, qpsk, row_times, synth_streams, Beamformer, ChannelSet, Direction,
    ModelError, SystemConfig,
};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "BISAC_WORKERS";

const CHUNK: u64 = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("pilot waveform is rank deficient")]
    RankDeficient,
    #[error("at least {min} trials are required, got {got}")]
    TooFewTrials { min: u64, got: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trials: u64,
    pub estimate: f64,
    pub ci95_halfwidth: f64,
    pub analytic_reference: f64,
    pub relative_gap: f64,
    pub seed: u64,
}

impl TrialReport {
    pub fn new(trials: u64, estimate: f64, ci95_halfwidth: f64, analytic_reference: f64, seed: u64) -> Self {
        let relative_gap = (estimate - analytic_reference).abs() / analytic_reference.abs().max(1e-300);
        TrialReport { trials, estimate, ci95_halfwidth, analytic_reference, relative_gap, seed }
    }

    /// The reference lies within `estimate ± max(ci95, tol·|reference|)`.
    pub fn agrees(&self, tol: f64) -> bool {
        (self.estimate - self.analytic_reference).abs() <= self.ci95_halfwidth.max(tol * self.analytic_reference.abs())
    }

    fn binomial(trials: u64, hits: u64, reference: f64, seed: u64) -> Self {
        let n = trials as f64;
        // Agresti–Coull centre keeps the interval non-degenerate at 0 or n hits
        let pc = (hits as f64 + 2.0) / (n + 4.0);
        let ci = 1.96 * (pc * (1.0 - pc) / (n + 4.0)).sqrt();
        TrialReport::new(trials, hits as f64 / n, ci, reference, seed)
    }

    fn from_moments(m: Moments, reference: f64, seed: u64) -> Self {
        TrialReport::new(m.n, m.mean(), 1.96 * m.std_error(), reference, seed)
    }
}

/// Running count, sum and sum of squares.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(mut self, o: Moments) -> Moments {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self
    }

    fn mean(&self) -> f64 {
        self.sum / self.n.max(1) as f64
    }

    fn std_error(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let var = ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Worker count: `BISAC_WORKERS` if set to a positive integer, else the
/// available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Disjoint random stream for chunk `chunk` of experiment `domain`.
fn chunk_rng(seed: u64, domain: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 48) | (chunk + 1));
    rng
}

/// Runs `f(rng, trials_in_chunk)` over fixed chunks and returns the results
/// in chunk order.
fn run_chunks<T, F>(trials: u64, seed: u64, domain: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, u64) -> T + Sync,
{
    let n_chunks = trials.div_ceil(CHUNK) as usize;
    let slots: Vec<Mutex<Option<T>>> = (0..n_chunks).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let k = next.fetch_add(1, Ordering::Relaxed);
        if k >= n_chunks {
            break;
        }
        let len = CHUNK.min(trials - k as u64 * CHUNK);
        let mut rng = chunk_rng(seed, domain, k as u64);
        let out = f(&mut rng, len);
        *slots[k].lock().expect("chunk slot poisoned") = Some(out);
    };
    let workers = worker_count().min(n_chunks.max(1));
    if workers <= 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    slots.into_iter().map(|m| m.into_inner().expect("chunk slot poisoned").expect("chunk not run")).collect()
}

fn sum_moments(parts: Vec<Moments>) -> Moments {
    parts.into_iter().fold(Moments::default(), Moments::merge)
}

mod domain {
    pub const H1: u64 = 1;
    pub const H0: u64 = 2;
    pub const LS: u64 = 3;
    pub const LMMSE: u64 = 4;
    pub const RATE: u64 = 5;
}

fn require(trials: u64, min: u64) -> Result<(), SimError> {
    if trials < min {
        return Err(SimError::TooFewTrials { min, got: trials });
    }
    Ok(())
}

/// Which closed form a detection run is compared against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionLaw {
    /// `½ erfc(erfc⁻¹(2P_F) − √γ_ap)`.
    Printed,
    /// Law of the matched statistic over `L` samples, including re-scattered
    /// tag noise.
    Exact,
}

/// Everything the matched detector needs for a tag hypothesised at `theta`.
struct Detector {
    /// `h_f X` toward the hypothesised tag.
    s: CVec,
    /// Combiner gain `g = w_r h_b^T`.
    g: C64,
    /// Per-sample variance of the combined AP noise `w_r n_ap`.
    noise_c: f64,
    eta: f64,
    sqrt_alpha: f64,
    noise_tag: f64,
}

impl Detector {
    fn new(bf: &Beamformer, theta: f64, cfg: &SystemConfig, seed: u64) -> Result<Self, SimError> {
        let h_f = los_channel(theta, 1.0, cfg.n_tx, Direction::Tx);
        let h_b = los_channel(theta, 1.0, cfg.n_rx, Direction::Rx);
        let w_r = equal_gain_combiner(&h_b)?;
        let g = dot(&w_r, &h_b);
        let x = model::assemble_waveform(bf, &synth_streams(cfg, seed))?;
        let s = row_times(&h_f, &x);
        let noise_c = w_r.norm_squared() * cfg.noise_ap;
        let eta = metrics::cfar_threshold_energy(g.norm_sqr() * s.norm_squared(), noise_c, cfg.pfa)?;
        Ok(Detector { s, g, noise_c, eta, sqrt_alpha: cfg.alpha.sqrt(), noise_tag: cfg.noise_tag })
    }

    /// `T = Re Σ y m^*` with template `m = g·h_f X`.
    fn statistic(&self, rng: &mut ChaCha8Rng, tag_present: bool) -> f64 {
        let mut t = 0.0;
        for &s in self.s.iter() {
            let mut y = cn(rng, self.noise_c);
            if tag_present {
                y += self.g * self.sqrt_alpha * (s + cn(rng, self.noise_tag));
            }
            t += (y * (self.g * s).conj()).re;
        }
        t
    }
}

/// Analytic detection probability of `bf` for a tag at `theta`.
pub fn detection_reference(bf: &Beamformer, theta: f64, cfg: &SystemConfig, law: DetectionLaw) -> Result<f64, SimError> {
    let gamma = metrics::sinr_ap_grid(bf, theta, cfg).value;
    Ok(match law {
        DetectionLaw::Printed => metrics::detection_probability(gamma, cfg.pfa)?,
        DetectionLaw::Exact => {
            let h_b = los_channel(theta, 1.0, cfg.n_rx, Direction::Rx);
            let w_r = equal_gain_combiner(&h_b)?;
            let ratio = metrics::detection_sigma_ratio(&h_b, &w_r, cfg);
            metrics::detection_probability_exact(gamma, ratio, cfg.sig_len, cfg.pfa)?
        }
    })
}

/// Empirical detection probability under H1 with the CFAR matched detector,
/// compared with the printed closed form.
pub fn run_detection_trials(bf: &Beamformer, theta_true: f64, cfg: &SystemConfig, trials: u64, seed: u64) -> Result<TrialReport, SimError> {
    run_detection_trials_with(bf, theta_true, cfg, trials, seed, DetectionLaw::Printed)
}

pub fn run_detection_trials_with(
    bf: &Beamformer,
    theta_true: f64,
    cfg: &SystemConfig,
    trials: u64,
    seed: u64,
    law: DetectionLaw,
) -> Result<TrialReport, SimError> {
    cfg.validate()?;
    require(trials, 10_000)?;
    let det = Detector::new(bf, theta_true, cfg, seed)?;
    let hits: u64 = run_chunks(trials, seed, domain::H1, |rng, n| {
        (0..n).filter(|_| det.statistic(rng, true) > det.eta).count() as u64
    })
    .into_iter()
    .sum();
    let reference = detection_reference(bf, theta_true, cfg, law)?;
    Ok(TrialReport::binomial(trials, hits, reference, seed))
}

/// Empirical false-alarm rate of the CFAR detector against `P_F`.
pub fn run_h0_trials(bf: &Beamformer, theta: f64, cfg: &SystemConfig, trials: u64, seed: u64) -> Result<TrialReport, SimError> {
    run_h0_trials_scaled(bf, theta, cfg, trials, seed, 1.0)
}

/// As [`run_h0_trials`] with the threshold multiplied by `threshold_scale`.
pub fn run_h0_trials_scaled(
    bf: &Beamformer,
    theta: f64,
    cfg: &SystemConfig,
    trials: u64,
    seed: u64,
    threshold_scale: f64,
) -> Result<TrialReport, SimError> {
    cfg.validate()?;
    require(trials, 100_000)?;
    let mut det = Detector::new(bf, theta, cfg, seed)?;
    det.eta *= threshold_scale;
    let hits: u64 = run_chunks(trials, seed, domain::H0, |rng, n| {
        (0..n).filter(|_| det.statistic(rng, false) > det.eta).count() as u64
    })
    .into_iter()
    .sum();
    Ok(TrialReport::binomial(trials, hits, cfg.pfa, seed))
}

fn pilot(bf: &Beamformer, cfg: &SystemConfig, seed: u64) -> Result<CMat, SimError> {
    Ok(model::assemble_waveform(bf, &synth_streams(cfg, seed))?)
}

/// Physical truth `G = h_b^T h_f`.
fn physical_truth(ch: &ChannelSet) -> CMat {
    &ch.h_b * ch.h_f.transpose()
}

/// `N_r × L` block of AP noise plus, optionally, the re-scattered tag noise
/// `√α h_b^T n_t`.
fn estimation_noise(rng: &mut ChaCha8Rng, ch: &ChannelSet, cfg: &SystemConfig, tag_noise: bool) -> CMat {
    let l = cfg.sig_len;
    let mut n = CMat::from_fn(cfg.n_rx, l, |_, _| cn(rng, cfg.noise_ap));
    if tag_noise {
        let nt = cn_vec(rng, l, cfg.noise_tag) * real(cfg.alpha.sqrt());
        n += &ch.h_b * nt.transpose();
    }
    n
}

/// LS estimation of the physical `G` from `Y = √α G X + noise`, reporting the
/// mean `‖G − Ĝ‖_F²` against the closed-form LS error (evaluated with
/// `σ_t = 0` when `tag_noise` is off).
pub fn run_ls_trials(
    bf: &Beamformer,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    trials: u64,
    seed: u64,
    tag_noise: bool,
) -> Result<TrialReport, SimError> {
    cfg.validate()?;
    ch.validate(cfg)?;
    require(trials, 1)?;
    let x = pilot(bf, cfg, seed)?;
    let xp = linalg::pseudo_inverse(&x).map_err(|_| SimError::RankDeficient)?;
    let g = physical_truth(ch);
    let clean = &g * &x * real(cfg.alpha.sqrt());
    let parts = run_chunks(trials, seed, domain::LS, |rng, n| {
        let mut m = Moments::default();
        for _ in 0..n {
            let y = &clean + estimation_noise(rng, ch, cfg, tag_noise);
            let est = y * &xp * real(1.0 / cfg.alpha.sqrt());
            m.push((est - &g).norm_squared());
        }
        m
    });
    let ref_cfg = if tag_noise { cfg.clone() } else { SystemConfig { noise_tag: 0.0, ..cfg.clone() } };
    let reference = metrics::ls_error(&bf.covariance(), &ch.h_b, &ref_cfg);
    Ok(TrialReport::from_moments(sum_moments(parts), reference, seed))
}

/// Empirical LMMSE and LS errors on shared draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedEstimation {
    pub lmmse: TrialReport,
    /// `None` when the pilot is rank deficient.
    pub ls: Option<TrialReport>,
    /// Mean of `‖G − Ĝ_LMMSE‖² − ‖G − Ĝ_LS‖²` on the same draws.
    pub mean_difference: Option<f64>,
}

/// Draws prior-consistent `G` (rows `z L^H` with `LL^H = R_G/N_r`), simulates
/// `Y = √α G X + N` with AP noise only, and applies both estimators.
fn estimation_pairs(
    bf: &Beamformer,
    prior: &EstimatorPrior,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    trials: u64,
    seed: u64,
) -> Result<(Vec<(Moments, Moments, Moments)>, bool, f64), SimError> {
    cfg.validate()?;
    ch.validate(cfg)?;
    require(trials, 1)?;
    let n = cfg.n_tx;
    let x = pilot(bf, cfg, seed)?;
    let c = cfg.n_rx as f64 * cfg.noise_ap / cfg.alpha;
    let gram = &prior.r_g * (&x * x.adjoint()) + CMat::identity(n, n) * real(c);
    let k = x.adjoint() * gram.try_inverse().ok_or(SimError::Linalg(LinalgError::Singular))? * &prior.r_g;
    let xp = linalg::pseudo_inverse(&x).ok();
    let lf = psd_factor(&(&prior.r_g * real(1.0 / cfg.n_rx as f64)), 1e-12 * prior.r_g.norm())?;
    let lh = lf.adjoint();
    let sa = cfg.alpha.sqrt();
    let parts = run_chunks(trials, seed, domain::LMMSE, |rng, cnt| {
        let (mut ml, mut ms, mut md) = (Moments::default(), Moments::default(), Moments::default());
        for _ in 0..cnt {
            let z = CMat::from_fn(cfg.n_rx, n, |_, _| cn(rng, 1.0));
            let g = z * &lh;
            let y = &g * &x * real(sa) + CMat::from_fn(cfg.n_rx, cfg.sig_len, |_, _| cn(rng, cfg.noise_ap));
            let el = (&y * &k * real(1.0 / sa) - &g).norm_squared();
            ml.push(el);
            if let Some(xp) = &xp {
                let es = (&y * xp * real(1.0 / sa) - &g).norm_squared();
                ms.push(es);
                md.push(el - es);
            }
        }
        (ml, ms, md)
    });
    let reference = metrics::lmmse_error(&bf.covariance(), prior, &ch.h_b, &SystemConfig { noise_tag: 0.0, ..cfg.clone() })?;
    Ok((parts, xp.is_some(), reference))
}

/// LMMSE estimation against the closed-form LMMSE error (AP noise only).
pub fn run_lmmse_trials(
    bf: &Beamformer,
    prior: &EstimatorPrior,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    trials: u64,
    seed: u64,
) -> Result<TrialReport, SimError> {
    Ok(run_paired_estimation(bf, prior, ch, cfg, trials, seed)?.lmmse)
}

pub fn run_paired_estimation(
    bf: &Beamformer,
    prior: &EstimatorPrior,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    trials: u64,
    seed: u64,
) -> Result<PairedEstimation, SimError> {
    let (parts, has_ls, reference) = estimation_pairs(bf, prior, ch, cfg, trials, seed)?;
    let (mut ml, mut ms, mut md) = (Moments::default(), Moments::default(), Moments::default());
    for (a, b, d) in parts {
        ml = ml.merge(a);
        ms = ms.merge(b);
        md = md.merge(d);
    }
    let lmmse = TrialReport::from_moments(ml, reference, seed);
    if !has_ls {
        return Ok(PairedEstimation { lmmse, ls: None, mean_difference: None });
    }
    let ls_ref = metrics::ls_error(&bf.covariance(), &ch.h_b, &SystemConfig { noise_tag: 0.0, ..cfg.clone() });
    Ok(PairedEstimation { lmmse, ls: Some(TrialReport::from_moments(ms, ls_ref, seed)), mean_difference: Some(md.mean()) })
}

/// Least-squares fit of `y ≈ a·s`: returns `(|a|², residual power per sample)`.
fn project(y: &CVec, s: &CVec) -> (f64, f64) {
    let ss = s.norm_squared();
    if ss == 0.0 {
        return (0.0, y.norm_squared() / y.len().max(1) as f64);
    }
    let a = s.dotc(y) / ss;
    let e = y - s * a;
    (a.norm_sqr(), e.norm_squared() / (y.len() as f64 - 1.0).max(1.0))
}

/// One frame of the full chain with fresh data symbols and tag code.
struct Frame {
    streams: CMat,
    x: CMat,
    c_t: CVec,
    y_t: CVec,
    y_u: CVec,
}

fn draw_frame(rng: &mut ChaCha8Rng, bf: &Beamformer, probe: &CMat, ch: &ChannelSet, cfg: &SystemConfig) -> Frame {
    let (n, l) = (cfg.n_tx, cfg.sig_len);
    let mut streams = CMat::zeros(n + 2, l);
    for r in 0..2 {
        for t in 0..l {
            streams[(r, t)] = qpsk(rng);
        }
    }
    streams.rows_mut(2, n).copy_from(probe);
    let x = bf.matrix() * &streams;
    let c_t = CVec::from_iterator(l, (0..l).map(|_| qpsk(rng)));
    let y_t = row_times(&ch.h_f, &x) + cn_vec(rng, l, cfg.noise_tag);
    let y_b = y_t.component_mul(&c_t) * real(cfg.alpha.sqrt());
    let y_u = row_times(&ch.h_u, &x) + y_b * ch.h_tu + cn_vec(rng, l, cfg.noise_ue);
    Frame { streams, x, c_t, y_t, y_u }
}

/// Empirical UE SINR of the data stream (per-frame projection onto `s_u`)
/// against the closed form.
pub fn run_rate_trials(bf: &Beamformer, ch: &ChannelSet, cfg: &SystemConfig, trials: u64, seed: u64) -> Result<TrialReport, SimError> {
    cfg.validate()?;
    ch.validate(cfg)?;
    bf.validate(f64::INFINITY)?;
    require(trials, 1)?;
    let probe = model::probing_streams(cfg.n_tx, cfg.sig_len);
    let parts = run_chunks(trials, seed, domain::RATE, |rng, n| {
        let mut m = Moments::default();
        for _ in 0..n {
            let f = draw_frame(rng, bf, &probe, ch, cfg);
            let s_u = f.streams.row(0).transpose();
            let (sig, rest) = project(&f.y_u, &s_u);
            m.push(sig / rest);
        }
        m
    });
    let reference = metrics::sinr_ue(bf, ch, cfg).value;
    Ok(TrialReport::from_moments(sum_moments(parts), reference, seed))
}

/// Empirical tag and AP SINRs from one frame: the tag sees `s_t` as signal,
/// the AP sees the whole backscattered `h_f X ⊙ c_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSinrs {
    pub tag: f64,
    pub ap: f64,
    pub ue: f64,
}

pub fn empirical_sinrs(bf: &Beamformer, ch: &ChannelSet, cfg: &SystemConfig, seed: u64) -> Result<LinkSinrs, SimError> {
    cfg.validate()?;
    ch.validate(cfg)?;
    let probe = model::probing_streams(cfg.n_tx, cfg.sig_len);
    let mut rng = chunk_rng(seed, domain::RATE, u64::MAX >> 16);
    let f = draw_frame(&mut rng, bf, &probe, ch, cfg);
    let (sig_t, rest_t) = project(&f.y_t, &f.streams.row(1).transpose());
    let (sig_u, rest_u) = project(&f.y_u, &f.streams.row(0).transpose());
    // AP: combine, then fit the known backscatter template
    let w_r = equal_gain_combiner(&ch.h_b)?;
    let g = dot(&w_r, &ch.h_b);
    let y_b = f.y_t.component_mul(&f.c_t) * real(cfg.alpha.sqrt());
    let y = y_b * g + cn_vec(&mut rng, cfg.sig_len, w_r.norm_squared() * cfg.noise_ap);
    let tmpl = row_times(&ch.h_f, &f.x).component_mul(&f.c_t);
    let (sig_a, rest_a) = project(&y, &tmpl);
    let e_tmpl = tmpl.norm_squared() / cfg.sig_len as f64;
    Ok(LinkSinrs { tag: sig_t / rest_t, ap: sig_a * e_tmpl / rest_a, ue: sig_u / rest_u })
}
