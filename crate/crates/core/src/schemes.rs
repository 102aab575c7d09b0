//! Joint beamforming schemes: SDR stage solvers with closed-form rank-one
//! extraction, and the quadratic-transform + SCA rate maximiser.
//!
//! All conic programs are posed in power-normalised units (`R' = R/P_T`,
//! `W' = W/√P_T`) so their data are O(1).

use bisac_conic::{solve, ConicProgram, HermitianExpr, LinExpr, SolveReport, Status, VarId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, col_outer, dot, min_eig, psd_factor, quad, real, row_outer, trace_re, CMat, CVec, LinalgError};
use crate::metrics::{self, lmmse_weight, EstimatorPrior, MetricsError};
use crate::model::{equal_gain_combiner, Beamformer, ChannelSet, ModelError, SystemConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("problem is infeasible")]
    Infeasible,
    #[error("solver stopped with status {0:?}")]
    Solver(Status),
    #[error("extraction check failed in clause {clause}: {detail}")]
    ExtractionInvalid { clause: &'static str, detail: String },
    #[error("SCA subproblem infeasible at the current point")]
    SubproblemInfeasible,
    #[error("beamformer recovery needs an extracted solution")]
    NotExtracted,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Detection,
    Ls,
    Lmmse,
}

/// Relaxed (or extracted) solution of a stage-1/2 SDP.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SdrSolution {
    pub kind: StageKind,
    pub r_w: CMat,
    pub w_u_mat: CMat,
    pub w_t_mat: CMat,
    /// Detection SINR bound `q` (stage 1 only, else 0).
    pub q: f64,
    /// `q` for detection, `J_LS` or `J_LMMSE` for estimation.
    pub objective: f64,
    pub extracted: bool,
    pub gamma_uth: f64,
    /// Channels the constraints were built from (robust surrogates).
    pub channels: ChannelSet,
    /// `F = h_f^H h_f`.
    pub f_mat: CMat,
    /// `U = h_u^H h_u`.
    pub u_mat: CMat,
    pub report: SolveReport,
}

/// Scaled UE SINR constraint over `(R', W_u')`:
/// `Tr(UW_u) − γ[Tr(U(R−W_u)) + α|h_tu|²Tr(F R) + α|h_tu|²σ_t² + σ_u²] ≥ 0`
/// divided by `P_T`.
pub fn build_ue_sinr_constraint(
    p: &ConicProgram,
    r: VarId,
    w_u: VarId,
    gamma_uth: f64,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> LinExpr {
    let u = row_outer(&ch.h_u);
    let f = row_outer(&ch.h_f);
    let a = cfg.alpha * ch.h_tu.norm_sqr();
    let interf = &u + &f * real(a);
    p.re_trace(w_u, &u)
        .scaled(1.0 + gamma_uth)
        .sub(&p.re_trace(r, &interf).scaled(gamma_uth))
        .plus_const(-gamma_uth * (a * cfg.noise_tag + cfg.noise_ue) / cfg.power_budget)
}

/// Left-hand side of the UE SINR constraint in watts.
pub fn ue_constraint_slack(r: &CMat, w_u: &CMat, gamma_uth: f64, ch: &ChannelSet, cfg: &SystemConfig) -> f64 {
    let a = cfg.alpha * ch.h_tu.norm_sqr();
    let s = quad(&ch.h_u, w_u);
    s - gamma_uth * (quad(&ch.h_u, r) - s + a * quad(&ch.h_f, r) + a * cfg.noise_tag + cfg.noise_ue)
}

/// Normaliser of the UE slack: `(1+γ)·Tr(U)·P_T`.
fn ue_scale(gamma_uth: f64, ch: &ChannelSet, cfg: &SystemConfig) -> f64 {
    (1.0 + gamma_uth) * ch.h_u.norm_squared().max(f64::MIN_POSITIVE) * cfg.power_budget
}

struct Common {
    p: ConicProgram,
    r: VarId,
    w_u: VarId,
    w_t: VarId,
}

fn common_program(gamma_uth: f64, ch: &ChannelSet, cfg: &SystemConfig) -> Common {
    let n = cfg.n_tx;
    let mut p = ConicProgram::new();
    let w_u = p.add_psd("W_u", n);
    let w_t = p.add_psd("W_t", n);
    let r = p.add_hermitian("R_W", n);
    let ue = build_ue_sinr_constraint(&p, r, w_u, gamma_uth, ch, cfg);
    p.add_ge("ue_sinr", ue);
    p.add_ge("power", p.trace(r).scaled(-1.0).plus_const(1.0));
    p.add_psd_constraint("probe_psd", HermitianExpr::zeros(n).var(r, 0, 1.0).var(w_u, 0, -1.0).var(w_t, 0, -1.0));
    Common { p, r, w_u, w_t }
}

fn check_status(rep: &SolveReport) -> Result<(), SchemeError> {
    match rep.status {
        Status::Optimal => Ok(()),
        Status::Infeasible => Err(SchemeError::Infeasible),
        s => Err(SchemeError::Solver(s)),
    }
}

fn finish_relaxed(
    kind: StageKind,
    c: &Common,
    rep: SolveReport,
    gamma_uth: f64,
    sur: ChannelSet,
    cfg: &SystemConfig,
) -> SdrSolution {
    let pw = real(cfg.power_budget);
    let r_w = c.p.hermitian_value(c.r, &rep.x) * pw;
    // the solver meets the PSD cones only to its tolerance; the closed-form
    // extraction amplifies tiny negative eigenvalues of a near-zero beam
    let w_u_mat = linalg::psd_project(&(c.p.hermitian_value(c.w_u, &rep.x) * pw));
    let w_t_mat = linalg::psd_project(&(c.p.hermitian_value(c.w_t, &rep.x) * pw));
    SdrSolution {
        kind,
        r_w,
        w_u_mat,
        w_t_mat,
        q: 0.0,
        objective: 0.0,
        extracted: false,
        gamma_uth,
        f_mat: row_outer(&sur.h_f),
        u_mat: row_outer(&sur.h_u),
        channels: sur,
        report: rep,
    }
}

/// Denominator `αN_rσ_t² + σ_ap²` of the grid AP SINR.
fn grid_noise(cfg: &SystemConfig) -> f64 {
    cfg.alpha * cfg.n_rx as f64 * cfg.noise_tag + cfg.noise_ap
}

/// Relaxed detection SDP: maximise the AP SINR bound `q` toward `theta_i`
/// under the robust UE SINR constraint.
pub fn solve_detection(theta_i: f64, gamma_uth: f64, ch: &ChannelSet, cfg: &SystemConfig) -> Result<SdrSolution, SchemeError> {
    cfg.validate()?;
    let sur = ch.surrogate(theta_i, cfg);
    let mut c = common_program(gamma_uth, &sur, cfg);
    let q = c.p.add_scalar("q");
    let hn2 = sur.h_f.norm_squared();
    let det = c.p.re_trace(c.r, &row_outer(&sur.h_f)).sub(&c.p.scalar(q).scaled(hn2));
    c.p.add_ge("detection", det);
    c.p.add_ge("q_nonneg", c.p.scalar(q));
    c.p.maximize(c.p.scalar(q));
    let rep = solve(&c.p);
    check_status(&rep)?;
    let qs = rep.scalar(&c.p, q);
    let mut sol = finish_relaxed(StageKind::Detection, &c, rep, gamma_uth, sur, cfg);
    let an = cfg.alpha * cfg.n_rx as f64;
    sol.q = qs * an * cfg.power_budget * hn2 / grid_noise(cfg);
    sol.objective = sol.q;
    Ok(sol)
}

/// Relaxed LS-estimation SDP: minimise `Tr(R_W⁻¹)` via the epigraph
/// `[[R', I], [I, T]] ⪰ 0`.
pub fn relax_ls(theta_max: f64, gamma_uth: f64, ch: &ChannelSet, cfg: &SystemConfig) -> Result<SdrSolution, SchemeError> {
    cfg.validate()?;
    let sur = ch.surrogate(theta_max, cfg);
    let n = cfg.n_tx;
    let mut c = common_program(gamma_uth, &sur, cfg);
    let t = c.p.add_hermitian("T", n);
    let eye = CMat::identity(n, n);
    let schur = HermitianExpr::zeros(2 * n)
        .var(c.r, 0, 1.0)
        .constant_block(0, n, &eye)
        .constant_block(n, 0, &eye)
        .var(t, n, 1.0);
    c.p.add_psd_constraint("trace_inverse", schur);
    c.p.minimize(c.p.trace(t));
    let rep = solve(&c.p);
    check_status(&rep)?;
    let mut sol = finish_relaxed(StageKind::Ls, &c, rep, gamma_uth, sur, cfg);
    sol.objective = metrics::ls_error(&sol.r_w, &sol.channels.h_b, cfg);
    Ok(sol)
}

/// Relaxed LMMSE-estimation SDP: minimise `Tr((R_G⁻¹ + c R_W)⁻¹)`.
pub fn relax_lmmse(
    prior: &EstimatorPrior,
    theta_max: f64,
    gamma_uth: f64,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<SdrSolution, SchemeError> {
    cfg.validate()?;
    let sur = ch.surrogate(theta_max, cfg);
    let n = cfg.n_tx;
    let kappa = lmmse_weight(&sur.h_b, cfg) * cfg.power_budget;
    let rg_inv = linalg::hpd_inverse(&prior.r_g)? * real(1.0 / kappa);
    let mut c = common_program(gamma_uth, &sur, cfg);
    let t = c.p.add_hermitian("T", n);
    let eye = CMat::identity(n, n);
    let schur = HermitianExpr::zeros(2 * n)
        .constant_block(0, 0, &rg_inv)
        .var(c.r, 0, 1.0)
        .constant_block(0, n, &eye)
        .constant_block(n, 0, &eye)
        .var(t, n, 1.0);
    c.p.add_psd_constraint("trace_inverse", schur);
    c.p.minimize(c.p.trace(t));
    let rep = solve(&c.p);
    check_status(&rep)?;
    let mut sol = finish_relaxed(StageKind::Lmmse, &c, rep, gamma_uth, sur, cfg);
    sol.objective = metrics::lmmse_error(&sol.r_w, prior, &sol.channels.h_b, cfg)?;
    Ok(sol)
}

/// `W̄ h^H h W̄ / (h W̄ h^H)`. A matrix with no power toward `h` maps to
/// zero: its power moves into the probing block, which leaves `R_W` and
/// `h W̄ h^H` unchanged up to `1e-12·P_T`.
fn rank_one(w: &CMat, h: &CVec, power: f64) -> CMat {
    let n = w.nrows();
    let c = quad(h, w);
    if trace_re(w) <= 1e-10 * power || c <= 1e-12 * power * h.norm_squared() {
        return CMat::zeros(n, n);
    }
    let v = w * h.map(|z| z.conj());
    linalg::hermitize(&(col_outer(&v) * real(1.0 / c)))
}

/// Closed-form rank-one extraction of `W_u` and `W_t`; `R_W` and `q` are kept.
pub fn extract_rank_one(sol: &SdrSolution, cfg: &SystemConfig) -> Result<SdrSolution, SchemeError> {
    let mut out = sol.clone();
    out.w_u_mat = rank_one(&sol.w_u_mat, &sol.channels.h_u, cfg.power_budget);
    out.w_t_mat = rank_one(&sol.w_t_mat, &sol.channels.h_f, cfg.power_budget);
    out.extracted = true;
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClauseCheck {
    pub clause: String,
    /// Normalised margin; the clause holds when it is ≥ −tolerance.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractionCheck {
    pub clauses: Vec<ClauseCheck>,
}

impl ExtractionCheck {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }
}

/// Verifies that extraction preserved optimality and feasibility:
/// (i) the objective/detection constraint, (ii) the UE SINR constraint with
/// an unchanged `Tr(U W_u)`, (iii) `W̄ − W̃ ⪰ 0` for both beams, (iv) the
/// probing block `R − W_u − W_t ⪰ 0`. Tolerance 1e-7 in units of `P_T`.
pub fn verify_extraction(before: &SdrSolution, after: &SdrSolution, cfg: &SystemConfig) -> Result<ExtractionCheck, SchemeError> {
    let report = extraction_margins(before, after, cfg);
    if let Some(bad) = report.clauses.iter().find(|c| !c.passed) {
        let clause = CLAUSES.iter().copied().find(|&c| c == bad.clause).unwrap_or("unknown");
        return Err(SchemeError::ExtractionInvalid { clause, detail: format!("margin {:.3e}", bad.margin) });
    }
    Ok(report)
}

const CLAUSES: [&str; 4] = ["objective_preserved", "ue_sinr_preserved", "beam_dominance", "probe_psd"];

/// Margins of all four clauses checked by [`verify_extraction`], without
/// stopping at the first failure.
pub fn extraction_margins(before: &SdrSolution, after: &SdrSolution, cfg: &SystemConfig) -> ExtractionCheck {
    const TOL: f64 = 1e-7;
    let p = cfg.power_budget;
    let ch = &after.channels;
    let mut clauses = Vec::new();

    // (i) R_W (hence the objective) is untouched; detection slack is kept
    let mut m1 = -(&after.r_w - &before.r_w).norm() / p;
    if after.kind == StageKind::Detection {
        let an = cfg.alpha * cfg.n_rx as f64;
        let slack = an * quad(&ch.h_f, &after.r_w) - after.q * grid_noise(cfg);
        m1 = m1.min(slack / (an * p * ch.h_f.norm_squared()));
    }
    clauses.push(("objective_preserved", m1));

    // (ii) UE constraint with Tr(U W̃_u) = Tr(U W̄_u)
    let scale = ue_scale(after.gamma_uth, ch, cfg);
    let slack = ue_constraint_slack(&after.r_w, &after.w_u_mat, after.gamma_uth, ch, cfg) / scale;
    let drift = (quad(&ch.h_u, &after.w_u_mat) - quad(&ch.h_u, &before.w_u_mat)).abs() / scale;
    clauses.push(("ue_sinr_preserved", slack.min(-drift)));

    // (iii) dominance of the relaxed beams
    let du = min_eig(&(&before.w_u_mat - &after.w_u_mat)) / p;
    let dt = min_eig(&(&before.w_t_mat - &after.w_t_mat)) / p;
    clauses.push(("beam_dominance", du.min(dt)));

    // (iv) probing block stays PSD
    let chain = min_eig(&(&after.r_w - &after.w_u_mat - &after.w_t_mat)) / p;
    clauses.push(("probe_psd", chain));

    ExtractionCheck {
        clauses: clauses.iter().map(|&(c, margin)| ClauseCheck { clause: c.into(), margin, passed: margin >= -TOL }).collect(),
    }
}

fn beam_from(w: &CMat, h: &CVec) -> CVec {
    let c = quad(h, w);
    if c <= 0.0 {
        return CVec::zeros(w.nrows());
    }
    w * h.map(|z| z.conj()) * real(1.0 / c.sqrt())
}

/// `w_u = W̃_u h_u^H/√(h_u W̃_u h_u^H)`, likewise `w_t`, and `W_s` as a PSD
/// factor of the remainder `R̃ − w_u w_u^H − w_t w_t^H`.
pub fn recover_beamformer(sol: &SdrSolution, cfg: &SystemConfig) -> Result<Beamformer, SchemeError> {
    if !sol.extracted {
        return Err(SchemeError::NotExtracted);
    }
    let w_u = beam_from(&sol.w_u_mat, &sol.channels.h_u);
    let w_t = beam_from(&sol.w_t_mat, &sol.channels.h_f);
    let rest = linalg::hermitize(&(&sol.r_w - col_outer(&w_u) - col_outer(&w_t)));
    let w_probe = psd_factor(&rest, 1e-6 * cfg.power_budget)?;
    Ok(Beamformer { w_u, w_t, w_probe })
}

/// Everything produced by one stage-1/2 pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageOutcome {
    pub relaxed: SdrSolution,
    pub extracted: SdrSolution,
    pub check: ExtractionCheck,
    pub beamformer: Beamformer,
}

pub fn complete_stage(relaxed: SdrSolution, cfg: &SystemConfig) -> Result<StageOutcome, SchemeError> {
    let extracted = extract_rank_one(&relaxed, cfg)?;
    let check = verify_extraction(&relaxed, &extracted, cfg)?;
    let beamformer = recover_beamformer(&extracted, cfg)?;
    Ok(StageOutcome { relaxed, extracted, check, beamformer })
}

pub fn detection_stage(theta_i: f64, gamma_uth: f64, ch: &ChannelSet, cfg: &SystemConfig) -> Result<StageOutcome, SchemeError> {
    complete_stage(solve_detection(theta_i, gamma_uth, ch, cfg)?, cfg)
}

pub fn ls_stage(theta_max: f64, gamma_uth: f64, ch: &ChannelSet, cfg: &SystemConfig) -> Result<StageOutcome, SchemeError> {
    complete_stage(relax_ls(theta_max, gamma_uth, ch, cfg)?, cfg)
}

pub fn lmmse_stage(
    prior: &EstimatorPrior,
    theta_max: f64,
    gamma_uth: f64,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<StageOutcome, SchemeError> {
    complete_stage(relax_lmmse(prior, theta_max, gamma_uth, ch, cfg)?, cfg)
}

/// LS-optimal beamformer for a tag around `theta_max`.
pub fn solve_ls_stage(theta_max: f64, gamma_uth: f64, ch: &ChannelSet, cfg: &SystemConfig) -> Result<Beamformer, SchemeError> {
    Ok(ls_stage(theta_max, gamma_uth, ch, cfg)?.beamformer)
}

/// LMMSE-optimal beamformer for a tag around `theta_max`.
pub fn solve_lmmse_stage(
    prior: &EstimatorPrior,
    theta_max: f64,
    gamma_uth: f64,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<Beamformer, SchemeError> {
    Ok(lmmse_stage(prior, theta_max, gamma_uth, ch, cfg)?.beamformer)
}

// ---------------------------------------------------------------------------
// Communication enhancement

/// `F(W, y) = 2y·Re{h_u w_u} − y²·D(W)` with `D` the UE interference plus noise.
pub fn qt_objective(bf: &Beamformer, y: f64, ch: &ChannelSet, cfg: &SystemConfig) -> f64 {
    2.0 * y * dot(&ch.h_u, &bf.w_u).re - y * y * metrics::ue_interference(bf, ch, cfg)
}

/// Maximiser `y* = Re{h_u w_u}/D(W)` of `F(W, ·)`.
pub fn optimal_y(bf: &Beamformer, ch: &ChannelSet, cfg: &SystemConfig) -> f64 {
    dot(&ch.h_u, &bf.w_u).re / metrics::ue_interference(bf, ch, cfg)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaConfig {
    /// Outer tolerance on the relative change of `y`.
    pub eps_th: f64,
    /// Inner tolerance on the relative gradient term `δ`.
    pub delta_th: f64,
    pub k_max: usize,
    pub i_max: usize,
}

impl Default for ScaConfig {
    fn default() -> Self {
        ScaConfig { eps_th: 1e-4, delta_th: 1e-5, k_max: 30, i_max: 50 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InnerRecord {
    pub outer: usize,
    pub inner: usize,
    pub objective: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaState {
    pub w: Beamformer,
    pub y: f64,
    /// `F` after every accepted inner step and every `y` update.
    pub objective_trace: Vec<f64>,
    /// Outer iterations completed.
    pub iteration: usize,
    pub y_trace: Vec<f64>,
    pub rate_trace: Vec<f64>,
    pub inner: Vec<InnerRecord>,
    pub converged: bool,
}

impl ScaState {
    pub fn new(w: Beamformer, ch: &ChannelSet, cfg: &SystemConfig) -> Self {
        let y = optimal_y(&w, ch, cfg);
        let f = qt_objective(&w, y, ch, cfg);
        let rate = metrics::rate_ue(&w, ch, cfg);
        ScaState {
            w,
            y,
            objective_trace: vec![f],
            iteration: 0,
            y_trace: vec![y],
            rate_trace: vec![rate],
            inner: Vec::new(),
            converged: false,
        }
    }
}

/// How the subproblem is parameterised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subspace {
    /// `W = Q C` with `Q` an orthonormal basis of `span{h_u^H, h_f^H}` and
    /// the probing block compressed to `rank Q` columns. Exact: every term
    /// of the problem sees `W` only through `h_u W`, `h_f W` and `‖W‖_F`.
    Reduced,
    /// All `N_t(N_t+2)` complex entries.
    Full,
}

/// Orthonormal basis of `span{h_u^H, h_f^H}` (1 or 2 columns).
fn channel_basis(h_u: &CVec, h_f: &CVec) -> CMat {
    let mut cols: Vec<CVec> = Vec::new();
    for h in [h_u, h_f] {
        let mut v = h.map(|z| z.conj());
        for q in &cols {
            let p = q.dotc(&v);
            v -= q * p;
        }
        let n = v.norm();
        if n > 1e-9 * h.norm().max(f64::MIN_POSITIVE) {
            cols.push(v / real(n));
        }
    }
    if cols.is_empty() {
        let mut e = CVec::zeros(h_u.len());
        e[0] = real(1.0);
        cols.push(e);
    }
    CMat::from_columns(&cols)
}

/// Power-normalised coordinates of a beamformer in a given basis.
struct Coords {
    q: CMat,
    /// `r × k` coefficients, columns `[u, t, probes…]`.
    c: CMat,
    /// Rows spanning the probing block: `W_s = Q·C_s·vh`.
    vh: CMat,
}

fn to_coords(bf: &Beamformer, ch: &ChannelSet, cfg: &SystemConfig, mode: Subspace) -> Coords {
    let n = bf.n_tx();
    let s = real(1.0 / cfg.power_budget.sqrt());
    match mode {
        Subspace::Full => Coords { q: CMat::identity(n, n), c: bf.matrix() * s, vh: CMat::identity(n, n) },
        Subspace::Reduced => {
            let q = channel_basis(&ch.h_u, &ch.h_f);
            let r = q.ncols();
            let cw = q.adjoint() * bf.matrix() * s;
            // C_s^H = Q₂R₂ ⇒ C_s = R₂^H Q₂^H with orthonormal rows Q₂^H
            let cs = cw.columns(2, n).into_owned();
            let qr = cs.adjoint().qr();
            let (q2, r2) = (qr.q(), qr.r());
            let mut c = CMat::zeros(r, 2 + r);
            c.columns_mut(0, 2).copy_from(&cw.columns(0, 2));
            c.columns_mut(2, r).copy_from(&r2.adjoint());
            Coords { q, c, vh: q2.adjoint() }
        }
    }
}

fn from_coords(co: &Coords, c: &CMat, cfg: &SystemConfig) -> Beamformer {
    let s = real(cfg.power_budget.sqrt());
    let qc = &co.q * c * s;
    let k = c.ncols() - 2;
    Beamformer {
        w_u: qc.column(0).into_owned(),
        w_t: qc.column(1).into_owned(),
        w_probe: qc.columns(2, k) * &co.vh,
    }
}

/// Normalised AP-SINR requirement `γ_ap(σ_t² + ‖w_r‖²σ_ap²/(α|w_r h_b^T|²))/P_T`
/// on `Tr(F W' W'^H)`, or `None` when the backscatter link is dead.
fn ap_requirement(gamma_apth: f64, ch: &ChannelSet, cfg: &SystemConfig) -> Result<Option<f64>, SchemeError> {
    let w_r = equal_gain_combiner(&ch.h_b)?;
    let g2 = cfg.alpha * dot(&w_r, &ch.h_b).norm_sqr();
    if g2 <= 0.0 {
        return Ok(None);
    }
    Ok(Some(gamma_apth * (cfg.noise_tag + w_r.norm_squared() * cfg.noise_ap / g2) / cfg.power_budget))
}

/// One SCA subproblem: maximise `F(W, y)` subject to the tag SINR as a
/// second-order cone, the AP SINR linearised at `state.w`, and the power
/// budget. The returned beamformer is phase-aligned.
pub fn sca_subproblem(
    state: &ScaState,
    gamma_tth: f64,
    gamma_apth: f64,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<Beamformer, SchemeError> {
    sca_subproblem_with(state, gamma_tth, gamma_apth, ch, cfg, Subspace::Reduced)
}

pub fn sca_subproblem_with(
    state: &ScaState,
    gamma_tth: f64,
    gamma_apth: f64,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    mode: Subspace,
) -> Result<Beamformer, SchemeError> {
    let co = to_coords(&state.w, ch, cfg, mode);
    let r = co.q.nrows().min(co.q.ncols());
    let r = if mode == Subspace::Full { co.q.ncols() } else { r };
    let k = co.c.ncols();
    let hu = (ch.h_u.transpose() * &co.q).transpose();
    let hf = (ch.h_f.transpose() * &co.q).transpose();
    let yh = state.y * cfg.power_budget.sqrt();
    let a = cfg.alpha * ch.h_tu.norm_sqr();

    let mut p = ConicProgram::new();
    let cv = p.add_complex_vector("C", r * k);
    let t = p.add_scalar("t");
    let hdot = |p: &ConicProgram, h: &CVec, j: usize| p.complex_dot(cv, j * r, h.as_slice());

    // objective 2ŷ Re(h_u w_u) − ŷ² t, with t ≥ D'(W') as a rotated cone
    let (u_re, _) = hdot(&p, &hu, 0);
    p.maximize(u_re.scaled(2.0 * yh).sub(&p.scalar(t).scaled(yh * yh)));
    let mut tail = vec![p.scalar(t).plus_const(-1.0)];
    for j in 1..k {
        let (re, im) = hdot(&p, &hu, j);
        tail.push(re.scaled(2.0));
        tail.push(im.scaled(2.0));
    }
    if a > 0.0 {
        let sa = 2.0 * a.sqrt();
        for j in 0..k {
            let (re, im) = hdot(&p, &hf, j);
            tail.push(re.scaled(sa));
            tail.push(im.scaled(sa));
        }
    }
    p.add_soc("interference", p.scalar(t).plus_const(1.0), tail);

    // tag SINR: Re(h_f w_t) ≥ √γ_t ‖(h_f w_u, h_f W_s, σ_t)‖
    if gamma_tth > 0.0 {
        let g = gamma_tth.sqrt();
        let (head, _) = hdot(&p, &hf, 1);
        let mut tail = Vec::new();
        for j in (0..k).filter(|&j| j != 1) {
            let (re, im) = hdot(&p, &hf, j);
            tail.push(re.scaled(g));
            tail.push(im.scaled(g));
        }
        tail.push(LinExpr::constant(g * (cfg.noise_tag / cfg.power_budget).sqrt()));
        p.add_soc("tag_sinr", head, tail);
    }

    // AP SINR linearised at the current point
    if gamma_apth > 0.0 {
        let need = ap_requirement(gamma_apth, ch, cfg)?.ok_or(SchemeError::Infeasible)?;
        let mut lin = LinExpr::constant(-need);
        for j in 0..k {
            let a0: num_complex::Complex64 = (0..r).map(|i| hf[i] * co.c[(i, j)]).sum();
            let (re, im) = hdot(&p, &hf, j);
            lin = lin.add(&re.scaled(2.0 * a0.re)).add(&im.scaled(2.0 * a0.im)).plus_const(-a0.norm_sqr());
        }
        p.add_ge("ap_sinr_linearised", lin);
    }

    // power budget ‖W'‖_F ≤ 1
    let mut tail = Vec::with_capacity(2 * r * k);
    for idx in 0..r * k {
        let (re, im) = p.complex_entry(cv, idx);
        tail.push(re);
        tail.push(im);
    }
    p.add_soc("power", LinExpr::constant(1.0), tail);

    let rep = solve(&p);
    match rep.status {
        Status::Optimal => {}
        Status::Infeasible => return Err(SchemeError::SubproblemInfeasible),
        s => return Err(SchemeError::Solver(s)),
    }
    let vals = rep.complex_vector(&p, cv);
    let c = CMat::from_column_slice(r, k, &vals);
    Ok(from_coords(&co, &c, cfg).phase_aligned(&ch.h_u, &ch.h_f))
}

/// `|2 Re Tr(W^H F (W − W‡))| / Tr(F W W^H)`: the relative size of the
/// linearisation's gradient term between consecutive iterates.
fn gradient_term(w: &Beamformer, prev: &Beamformer, h_f: &CVec) -> f64 {
    let a = (h_f.transpose() * w.matrix()).transpose();
    let b = (h_f.transpose() * (w.matrix() - prev.matrix())).transpose();
    let d = 2.0 * a.dotc(&b).re.abs();
    let base = a.norm_squared();
    if base > 0.0 {
        d / base
    } else {
        d
    }
}

/// Feasible starting point: the tag beam is a maximum-ratio beam toward
/// `h_f` with the smallest power meeting both thresholds, and the rest of
/// the budget goes to a UE beam orthogonal to `h_f`.
pub fn initial_beamformer(gamma_tth: f64, gamma_apth: f64, ch: &ChannelSet, cfg: &SystemConfig) -> Result<Beamformer, SchemeError> {
    let n = cfg.n_tx;
    let pw = cfg.power_budget;
    let hf2 = ch.h_f.norm_squared();
    if hf2 <= 0.0 {
        return if gamma_tth > 0.0 || gamma_apth > 0.0 { Err(SchemeError::Infeasible) } else { Ok(Beamformer::zeros(n)) };
    }
    let mut need = gamma_tth * cfg.noise_tag / hf2;
    if gamma_apth > 0.0 {
        let req = ap_requirement(gamma_apth, ch, cfg)?.ok_or(SchemeError::Infeasible)?;
        need = need.max(req * pw / hf2);
    }
    if need > pw {
        return Err(SchemeError::Infeasible);
    }
    let p_t = (need * (1.0 + 1e-3)).min(pw);
    let mut bf = Beamformer::zeros(n);
    bf.w_t = ch.h_f.map(|z| z.conj()) * real((p_t / hf2).sqrt());
    let hfc = ch.h_f.map(|z| z.conj());
    let proj = hfc.dotc(&ch.h_u.map(|z| z.conj())) / hf2;
    let perp = ch.h_u.map(|z| z.conj()) - &hfc * proj;
    let pn = perp.norm();
    if pn > 1e-9 * ch.h_u.norm() && pw > p_t {
        bf.w_u = perp * real(((pw - p_t).max(0.0)).sqrt() / pn);
    }
    Ok(bf.phase_aligned(&ch.h_u, &ch.h_f))
}

/// Alternates the optimal `y` update and the SCA inner loop until the
/// relative change of `y` drops below `eps_th`.
pub fn solve_comm_enhancement(
    gamma_tth: f64,
    gamma_apth: f64,
    ch: &ChannelSet,
    cfg: &SystemConfig,
) -> Result<(Beamformer, ScaState), SchemeError> {
    solve_comm_enhancement_with(gamma_tth, gamma_apth, ch, cfg, &ScaConfig::default(), Subspace::Reduced)
}

pub fn solve_comm_enhancement_with(
    gamma_tth: f64,
    gamma_apth: f64,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    sc: &ScaConfig,
    mode: Subspace,
) -> Result<(Beamformer, ScaState), SchemeError> {
    cfg.validate()?;
    ch.validate(cfg)?;
    let w0 = initial_beamformer(gamma_tth, gamma_apth, ch, cfg)?;
    let mut st = ScaState::new(w0, ch, cfg);
    for k in 1..=sc.k_max {
        let mut f_cur = qt_objective(&st.w, st.y, ch, cfg);
        for i in 1..=sc.i_max {
            let next = match sca_subproblem_with(&st, gamma_tth, gamma_apth, ch, cfg, mode) {
                Ok(w) => w,
                // the current point is optimal up to solver precision
                Err(SchemeError::Solver(_)) if i > 1 => break,
                Err(e) => return Err(e),
            };
            let f_next = qt_objective(&next, st.y, ch, cfg);
            if f_next < f_cur {
                // no improvement beyond solver precision: stop the inner loop
                break;
            }
            let delta = gradient_term(&next, &st.w, &ch.h_f);
            st.w = next;
            f_cur = f_next;
            st.objective_trace.push(f_cur);
            st.inner.push(InnerRecord { outer: k, inner: i, objective: f_cur, delta });
            if delta < sc.delta_th {
                break;
            }
        }
        let y_new = optimal_y(&st.w, ch, cfg);
        let change = (y_new - st.y).abs() / y_new.abs().max(f64::MIN_POSITIVE);
        st.y = y_new;
        st.iteration = k;
        st.y_trace.push(y_new);
        st.objective_trace.push(qt_objective(&st.w, y_new, ch, cfg));
        st.rate_trace.push(metrics::rate_ue(&st.w, ch, cfg));
        if change < sc.eps_th {
            st.converged = true;
            break;
        }
    }
    Ok((st.w.clone(), st))
}
