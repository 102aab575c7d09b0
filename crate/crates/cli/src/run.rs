//! Stage execution and the on-disk result bundle.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use bisac_core::linalg::{linear_to_db, real, CMat};
use bisac_core::metrics::{self, EstimatorPrior};
use bisac_core::model::{equal_gain_combiner, steering_tx, Beamformer, ChannelSet, SystemConfig};
use bisac_core::schemes::{self, ScaState, SchemeError, StageOutcome};
use bisac_core::simkit::{self, TrialReport};
use serde::Serialize;

use crate::scenario::{Resolved, Scenario, Stage};
use crate::CliError;

/// Result of solving one resolved scenario.
#[derive(Clone, Debug)]
pub struct Executed {
    pub beamformer: Beamformer,
    pub sdr: Option<StageOutcome>,
    pub sca: Option<ScaState>,
}

fn scheme_error(e: SchemeError) -> CliError {
    match e {
        SchemeError::Infeasible | SchemeError::SubproblemInfeasible => CliError::Infeasible(e.to_string()),
        other => CliError::Solver(other.to_string()),
    }
}

fn sim_error(e: simkit::SimError) -> CliError {
    CliError::Solver(e.to_string())
}

pub fn execute(r: &Resolved) -> Result<Executed, CliError> {
    let (cfg, ch) = (&r.cfg, &r.channels);
    let sdr = |o: StageOutcome| Executed { beamformer: o.beamformer.clone(), sdr: Some(o), sca: None };
    Ok(match &r.stage {
        Stage::Detect { theta_i, gamma_uth } => sdr(schemes::detection_stage(*theta_i, *gamma_uth, ch, cfg).map_err(scheme_error)?),
        Stage::Ls { theta_max, gamma_uth } => sdr(schemes::ls_stage(*theta_max, *gamma_uth, ch, cfg).map_err(scheme_error)?),
        Stage::Lmmse { theta_max, gamma_uth, prior } => {
            sdr(schemes::lmmse_stage(prior, *theta_max, *gamma_uth, ch, cfg).map_err(scheme_error)?)
        }
        Stage::Comm { gamma_tth, gamma_apth, sca } => {
            let (bf, st) = schemes::solve_comm_enhancement_with(*gamma_tth, *gamma_apth, ch, cfg, sca, schemes::Subspace::Reduced)
                .map_err(scheme_error)?;
            Executed { beamformer: bf, sdr: None, sca: Some(st) }
        }
    })
}

/// Channel the estimation objectives are evaluated on: unit-gain LOS
/// toward `θ_max`, as in the design problem.
fn design_channel(r: &Resolved, theta_max: f64) -> ChannelSet {
    r.channels.surrogate(theta_max, &r.cfg)
}

fn no_tag_noise(cfg: &SystemConfig) -> SystemConfig {
    SystemConfig { noise_tag: 0.0, ..cfg.clone() }
}

/// Scalar summary of a solved scenario, keyed by metric name.
pub fn summary(r: &Resolved, ex: &Executed) -> Result<BTreeMap<String, f64>, CliError> {
    let (cfg, ch, bf) = (&r.cfg, &r.channels, &ex.beamformer);
    let mut m = BTreeMap::new();
    m.insert("power_w".into(), bf.power());
    m.insert("power_budget_w".into(), cfg.power_budget);
    m.insert("sinr_ue_db".into(), metrics::sinr_ue(bf, ch, cfg).decibels);
    m.insert("rate_ue".into(), metrics::rate_ue(bf, ch, cfg));
    let robust = ChannelSet { h_tu: real(ch.h_tu_max), ..ch.clone() };
    m.insert("sinr_ue_worst_case_db".into(), metrics::sinr_ue(bf, &robust, cfg).decibels);
    let r_w = bf.covariance();
    match &r.stage {
        Stage::Detect { theta_i, .. } => {
            let g = metrics::sinr_ap_grid(bf, *theta_i, cfg);
            m.insert("gamma_ap_db".into(), g.decibels);
            m.insert("pd".into(), metrics::detection_probability(g.value, cfg.pfa).map_err(|e| CliError::Solver(e.to_string()))?);
            let pe = simkit::detection_reference(bf, *theta_i, cfg, simkit::DetectionLaw::Exact).map_err(sim_error)?;
            m.insert("pd_exact".into(), pe);
            if let Some(o) = &ex.sdr {
                m.insert("sdr_gamma_ap_db".into(), linear_to_db(o.relaxed.q));
            }
        }
        Stage::Ls { theta_max, .. } => {
            let d = design_channel(r, *theta_max);
            m.insert("j_ls".into(), metrics::ls_error(&r_w, &d.h_b, cfg));
            m.insert("j_ls_exact".into(), metrics::ls_error_exact(&r_w, &d.h_b, cfg));
            m.insert("j_ls_orthogonal".into(), metrics::ls_error(&metrics::ls_optimal_covariance(cfg), &d.h_b, cfg));
        }
        Stage::Lmmse { theta_max, prior, .. } => {
            let d = design_channel(r, *theta_max);
            let err = |rw: &CMat| metrics::lmmse_error(rw, prior, &d.h_b, cfg).map_err(|e| CliError::Solver(e.to_string()));
            m.insert("j_lmmse".into(), err(&r_w)?);
            let wf = metrics::lmmse_optimal_covariance(prior, &d.h_b, cfg).map_err(|e| CliError::Solver(e.to_string()))?;
            m.insert("j_lmmse_water_filling".into(), err(&wf)?);
            m.insert("j_lmmse_orthogonal".into(), err(&metrics::ls_optimal_covariance(cfg))?);
            m.insert("j_ls".into(), metrics::ls_error(&r_w, &d.h_b, cfg));
        }
        Stage::Comm { .. } => {
            m.insert("sinr_tag_db".into(), metrics::sinr_tag(bf, &ch.h_f, cfg.noise_tag).decibels);
            let w_r = equal_gain_combiner(&ch.h_b).map_err(|e| CliError::Solver(e.to_string()))?;
            m.insert("sinr_ap_db".into(), metrics::sinr_ap(bf, &ch.h_f, &ch.h_b, &w_r, cfg).decibels);
            if let Some(st) = &ex.sca {
                m.insert("outer_iterations".into(), st.iteration as f64);
                m.insert("inner_iterations".into(), st.inner.len() as f64);
                m.insert("converged".into(), if st.converged { 1.0 } else { 0.0 });
            }
        }
    }
    Ok(m)
}

/// Monte-Carlo checks for the solved scenario (`r.trials` per check).
pub fn trials(r: &Resolved, ex: &Executed) -> Result<BTreeMap<String, TrialReport>, CliError> {
    let mut out = BTreeMap::new();
    let (cfg, bf, n, seed) = (&r.cfg, &ex.beamformer, r.trials, r.seed);
    if n == 0 {
        return Ok(out);
    }
    match &r.stage {
        Stage::Detect { theta_i, .. } => {
            if n >= 10_000 {
                out.insert("detection".into(), simkit::run_detection_trials(bf, *theta_i, cfg, n, seed).map_err(sim_error)?);
            }
            let n0 = n.max(100_000);
            out.insert("false_alarm".into(), simkit::run_h0_trials(bf, *theta_i, cfg, n0, seed).map_err(sim_error)?);
        }
        Stage::Ls { theta_max, .. } => {
            let d = design_channel(r, *theta_max);
            out.insert("ls_ap_noise".into(), simkit::run_ls_trials(bf, &d, cfg, n, seed, false).map_err(sim_error)?);
        }
        Stage::Lmmse { theta_max, prior, .. } => {
            let d = design_channel(r, *theta_max);
            let p = simkit::run_paired_estimation(bf, prior, &d, cfg, n, seed).map_err(sim_error)?;
            out.insert("lmmse_ap_noise".into(), p.lmmse);
            if let Some(ls) = p.ls {
                out.insert("ls_ap_noise".into(), ls);
            }
        }
        Stage::Comm { .. } => {
            out.insert("sinr_ue".into(), simkit::run_rate_trials(bf, &r.channels, cfg, n, seed).map_err(sim_error)?);
        }
    }
    Ok(out)
}

/// Per-angle transmit power of the whole signal and of each component.
pub struct BeampatternRows {
    pub theta_deg: Vec<f64>,
    /// Columns: overall, communication, tag, probing.
    pub power: Vec<[f64; 4]>,
}

pub fn beampattern(bf: &Beamformer, grid_deg: &[f64]) -> BeampatternRows {
    let n = bf.n_tx();
    let probe = &bf.w_probe * bf.w_probe.adjoint();
    let power = grid_deg
        .iter()
        .map(|&d| {
            let a = steering_tx(d.to_radians(), n);
            let ah = a.adjoint();
            let comm = (&ah * &bf.w_u)[(0, 0)].norm_sqr();
            let tag = (&ah * &bf.w_t)[(0, 0)].norm_sqr();
            let pr = (&ah * &probe * &a)[(0, 0)].re.max(0.0);
            [comm + tag + pr, comm, tag, pr]
        })
        .collect();
    BeampatternRows { theta_deg: grid_deg.to_vec(), power }
}

fn norm_db(p: f64, peak: f64) -> f64 {
    if peak > 0.0 && p > 0.0 {
        (10.0 * (p / peak).log10()).max(-300.0)
    } else {
        -300.0
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn num(x: f64) -> String {
    format!("{x}")
}

pub const BEAMPATTERN_HEADER: [&str; 9] =
    ["theta_deg", "overall_db", "comm_db", "tag_db", "probe_db", "overall_lin", "comm_lin", "tag_lin", "probe_lin"];

fn write_beampattern(path: &Path, rows: &BeampatternRows) -> Result<f64, CliError> {
    let peak = rows.power.iter().map(|p| p[0]).fold(0.0, f64::max);
    let mut w = csv_writer(path)?;
    w.write_record(BEAMPATTERN_HEADER).map_err(csv_err)?;
    for (t, p) in rows.theta_deg.iter().zip(&rows.power) {
        let mut rec = vec![num(*t)];
        rec.extend(p.iter().map(|&x| num(norm_db(x, peak))));
        rec.extend(p.iter().map(|&x| num(x)));
        w.write_record(rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(peak)
}

/// Reference patterns: orthogonal `(P_T/N_t)I` and, for LMMSE, water-filling.
fn write_reference(path: &Path, r: &Resolved, grid: &[f64], peak: f64) -> Result<(), CliError> {
    let cfg = &r.cfg;
    let mut refs: Vec<(&str, CMat)> = vec![("orthogonal", metrics::ls_optimal_covariance(cfg))];
    if let Stage::Lmmse { theta_max, prior, .. } = &r.stage {
        let d = design_channel(r, *theta_max);
        let wf = metrics::lmmse_optimal_covariance(prior, &d.h_b, cfg).map_err(|e| CliError::Solver(e.to_string()))?;
        refs.push(("water_filling", wf));
    }
    let thetas: Vec<f64> = grid.iter().map(|d| d.to_radians()).collect();
    let cols: Vec<Vec<f64>> = refs
        .iter()
        .map(|(_, rx)| metrics::beampattern(rx, &thetas).map_err(|e| CliError::Solver(e.to_string())))
        .collect::<Result<_, _>>()?;
    let mut w = csv_writer(path)?;
    let mut header = vec!["theta_deg".to_string()];
    for (name, _) in &refs {
        header.push(format!("{name}_db"));
        header.push(format!("{name}_lin"));
    }
    w.write_record(&header).map_err(csv_err)?;
    for (i, t) in grid.iter().enumerate() {
        let mut rec = vec![num(*t)];
        for c in &cols {
            rec.push(num(norm_db(c[i], peak)));
            rec.push(num(c[i]));
        }
        w.write_record(rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct SdrReportOut<'a> {
    stage: &'a str,
    relaxed_objective: f64,
    extraction_check: &'a schemes::ExtractionCheck,
    report: &'a bisac_core::schemes::SdrSolution,
}

/// Convergence record of the communication-enhancement solver.
#[derive(Serialize)]
pub struct TraceOut<'a> {
    pub objective_trace: &'a [f64],
    pub y_trace: &'a [f64],
    pub rate_trace: &'a [f64],
    pub inner: &'a [schemes::InnerRecord],
    pub outer_iterations: usize,
    pub converged: bool,
}

#[derive(Serialize)]
struct MetricsOut<'a> {
    scenario: &'a str,
    stage: &'a str,
    seed: u64,
    metrics: &'a BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub metrics: BTreeMap<String, f64>,
    pub trials: BTreeMap<String, TrialReport>,
    pub beamformer: Beamformer,
}

/// Solves `scenario` and writes its result bundle into `out`.
pub fn run_scenario(scenario: &Scenario, out: &Path) -> Result<RunOutcome, CliError> {
    let r = scenario.resolve()?;
    let ex = execute(&r)?;
    std::fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut emit = |name: &str| {
        let p = out.join(name);
        files.push(p.clone());
        p
    };

    let p = emit("scenario.json");
    std::fs::write(&p, scenario.to_json() + "\n")?;

    let rows = beampattern(&ex.beamformer, &r.grid_deg);
    let peak = write_beampattern(&emit("beampattern.csv"), &rows)?;
    if !matches!(r.stage, Stage::Detect { .. }) {
        write_reference(&emit("reference_beampattern.csv"), &r, &r.grid_deg, peak)?;
    }

    let stage = scenario.stage.name();
    if let Some(o) = &ex.sdr {
        let rep = SdrReportOut { stage, relaxed_objective: o.relaxed.objective, extraction_check: &o.check, report: &o.relaxed };
        write_json(&emit("solve_report.json"), &rep)?;
    }
    if let Some(st) = &ex.sca {
        let t = TraceOut {
            objective_trace: &st.objective_trace,
            y_trace: &st.y_trace,
            rate_trace: &st.rate_trace,
            inner: &st.inner,
            outer_iterations: st.iteration,
            converged: st.converged,
        };
        write_json(&emit("trace.json"), &t)?;
    }
    write_json(&emit("beamformer.json"), &ex.beamformer)?;

    let m = summary(&r, &ex)?;
    write_json(&emit("metrics.json"), &MetricsOut { scenario: &r.name, stage, seed: r.seed, metrics: &m })?;
    let t = trials(&r, &ex)?;
    if !t.is_empty() {
        write_json(&emit("trials.json"), &t)?;
    }
    Ok(RunOutcome { files, metrics: m, trials: t, beamformer: ex.beamformer })
}

/// One row of the long-format sweep table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub sweep_param: String,
    pub value: f64,
    pub metric: String,
    pub analytic: Option<f64>,
    pub empirical: Option<f64>,
    pub ci95: Option<f64>,
}

pub const SWEEP_HEADER: [&str; 6] = ["sweep_param", "value", "metric", "analytic", "empirical", "ci95"];

fn row(param: &str, value: f64, metric: &str, analytic: f64, trial: Option<&TrialReport>) -> SweepRow {
    SweepRow {
        sweep_param: param.into(),
        value,
        metric: metric.into(),
        analytic: Some(analytic),
        empirical: trial.map(|t| t.estimate),
        ci95: trial.map(|t| t.ci95_halfwidth),
    }
}

/// Metrics recorded at one sweep grid point.
fn point_rows(r: &Resolved, ex: &Executed, param: &str, value: f64) -> Result<Vec<SweepRow>, CliError> {
    let (cfg, bf, n, seed) = (&r.cfg, &ex.beamformer, r.trials, r.seed);
    let mut rows = Vec::new();
    let r_w = bf.covariance();
    match &r.stage {
        Stage::Detect { theta_i, .. } => {
            let g = metrics::sinr_ap_grid(bf, *theta_i, cfg);
            rows.push(row(param, value, "gamma_ap_db", g.decibels, None));
            let pd = metrics::detection_probability(g.value, cfg.pfa).map_err(|e| CliError::Solver(e.to_string()))?;
            let t = if n >= 10_000 {
                Some(simkit::run_detection_trials(bf, *theta_i, cfg, n, seed).map_err(sim_error)?)
            } else {
                None
            };
            rows.push(row(param, value, "pd", pd, t.as_ref()));
            let pe = simkit::detection_reference(bf, *theta_i, cfg, simkit::DetectionLaw::Exact).map_err(sim_error)?;
            rows.push(row(param, value, "pd_exact", pe, None));
        }
        Stage::Ls { theta_max, .. } => {
            let d = design_channel(r, *theta_max);
            rows.push(row(param, value, "j_ls", metrics::ls_error(&r_w, &d.h_b, cfg), None));
            let t = if n > 0 { Some(simkit::run_ls_trials(bf, &d, cfg, n, seed, false).map_err(sim_error)?) } else { None };
            rows.push(row(param, value, "j_ls_ap_noise", metrics::ls_error(&r_w, &d.h_b, &no_tag_noise(cfg)), t.as_ref()));
            rows.push(row(param, value, "j_ls_orthogonal", metrics::ls_error(&metrics::ls_optimal_covariance(cfg), &d.h_b, cfg), None));
        }
        Stage::Lmmse { theta_max, prior, .. } => {
            let d = design_channel(r, *theta_max);
            let err = |rw: &CMat, c: &SystemConfig, p: &EstimatorPrior| {
                metrics::lmmse_error(rw, p, &d.h_b, c).map_err(|e| CliError::Solver(e.to_string()))
            };
            rows.push(row(param, value, "j_lmmse", err(&r_w, cfg, prior)?, None));
            let t = if n > 0 { Some(simkit::run_lmmse_trials(bf, prior, &d, cfg, n, seed).map_err(sim_error)?) } else { None };
            rows.push(row(param, value, "j_lmmse_ap_noise", err(&r_w, &no_tag_noise(cfg), prior)?, t.as_ref()));
            let wf = metrics::lmmse_optimal_covariance(prior, &d.h_b, cfg).map_err(|e| CliError::Solver(e.to_string()))?;
            rows.push(row(param, value, "j_lmmse_water_filling", err(&wf, cfg, prior)?, None));
            rows.push(row(param, value, "j_lmmse_orthogonal", err(&metrics::ls_optimal_covariance(cfg), cfg, prior)?, None));
        }
        Stage::Comm { .. } => {
            let ch = &r.channels;
            rows.push(row(param, value, "rate", metrics::rate_ue(bf, ch, cfg), None));
            let t = if n > 0 { Some(simkit::run_rate_trials(bf, ch, cfg, n, seed).map_err(sim_error)?) } else { None };
            rows.push(row(param, value, "sinr_ue", metrics::sinr_ue(bf, ch, cfg).value, t.as_ref()));
            rows.push(row(param, value, "sinr_tag", metrics::sinr_tag(bf, &ch.h_f, cfg.noise_tag).value, None));
            let w_r = equal_gain_combiner(&ch.h_b).map_err(|e| CliError::Solver(e.to_string()))?;
            rows.push(row(param, value, "sinr_ap", metrics::sinr_ap(bf, &ch.h_f, &ch.h_b, &w_r, cfg).value, None));
        }
    }
    Ok(rows)
}

/// Evaluates every sweep grid point; infeasible points yield a single
/// `infeasible` row.
pub fn sweep_rows(scenario: &Scenario) -> Result<Vec<SweepRow>, CliError> {
    scenario.resolve()?;
    let sweeps = scenario
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Invalid { key: "sweep".into(), reason: "scenario has no sweep block".into() })?
        .list();
    let mut points = Vec::new();
    for sp in &sweeps {
        let mut base = scenario.clone();
        for (k, v) in &sp.hold {
            base = base.with_parameter(k, *v);
        }
        for v in sp.grid() {
            points.push((sp.parameter.clone(), v, base.with_parameter(&sp.parameter, v)));
        }
    }
    let slots: Vec<Mutex<Option<Result<Vec<SweepRow>, CliError>>>> = points.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let k = next.fetch_add(1, Ordering::Relaxed);
        if k >= points.len() {
            break;
        }
        let (param, value, sc) = &points[k];
        let res = sc.resolve().and_then(|r| match execute(&r) {
            Ok(ex) => point_rows(&r, &ex, param, *value),
            Err(CliError::Infeasible(_)) => Ok(vec![SweepRow {
                sweep_param: param.clone(),
                value: *value,
                metric: "infeasible".into(),
                analytic: None,
                empirical: None,
                ci95: None,
            }]),
            Err(e) => Err(e),
        });
        *slots[k].lock().expect("sweep slot poisoned") = Some(res);
    };
    let workers = simkit::worker_count().min(points.len()).max(1);
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    let mut rows = Vec::new();
    for s in slots {
        rows.extend(s.into_inner().expect("sweep slot poisoned").expect("sweep point not run")?);
    }
    Ok(rows)
}

/// Runs all sweeps of `scenario` and writes `sweep.csv` into `out`.
pub fn run_sweep(scenario: &Scenario, out: &Path) -> Result<PathBuf, CliError> {
    let rows = sweep_rows(scenario)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("sweep.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(SWEEP_HEADER).map_err(csv_err)?;
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    for r in &rows {
        w.write_record([r.sweep_param.clone(), num(r.value), r.metric.clone(), opt(r.analytic), opt(r.empirical), opt(r.ci95)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(path)
}
