//! Scenario documents: one JSON object per run, in presentation units
//! (degrees, dBm, dB), resolved to SI/linear values before execution.

use std::collections::BTreeMap;
use std::path::Path;

use bisac_core::linalg::{c, db_to_linear, dbm_to_watts, CVec};
use bisac_core::metrics::EstimatorPrior;
use bisac_core::model::{ChannelSet, ModelError, SystemConfig};
use bisac_core::schemes::ScaConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub system: SystemSpec,
    pub channels: ChannelSpec,
    pub stage: StageSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweeps>,
    /// Monte-Carlo trials per check; 0 skips simulation.
    #[serde(default)]
    pub trials: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beampattern: Option<AngleGrid>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSpec {
    pub n_tx: usize,
    pub n_rx: usize,
    pub sig_len: usize,
    pub alpha: f64,
    /// Transmit power budget; at most one of `power_dbm`/`power_w`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_w: Option<f64>,
    pub noise_tag_dbm: f64,
    pub noise_ap_dbm: f64,
    pub noise_ue_dbm: f64,
    pub pfa: f64,
}

impl Default for SystemSpec {
    fn default() -> Self {
        SystemSpec {
            n_tx: 16,
            n_rx: 16,
            sig_len: 2048,
            alpha: 0.5,
            power_dbm: None,
            power_w: None,
            noise_tag_dbm: -40.0,
            noise_ap_dbm: -40.0,
            noise_ue_dbm: -40.0,
            pfa: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    /// Line-of-sight channels toward the tag and the UE.
    Los { tag_deg: f64, tag_gain: f64, ue_deg: f64, ue_gain: f64, h_tu: f64, h_tu_max: f64 },
    /// Explicit channel vectors as `[re, im]` pairs.
    Explicit { h_f: Vec<[f64; 2]>, h_b: Vec<[f64; 2]>, h_u: Vec<[f64; 2]>, h_tu: [f64; 2], h_tu_max: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageSpec {
    Detect { theta_i_deg: f64, gamma_uth_db: f64 },
    Ls { theta_max_deg: f64, gamma_uth_db: f64 },
    Lmmse { theta_max_deg: f64, gamma_uth_db: f64, prior: PriorSpec },
    Comm {
        gamma_tth_db: f64,
        gamma_apth_db: f64,
        /// Convergence settings of the alternating solver.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sca: Option<ScaSpec>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaSpec {
    pub eps_th: f64,
    pub delta_th: f64,
    pub k_max: usize,
    pub i_max: usize,
}

impl Default for ScaSpec {
    fn default() -> Self {
        let d = ScaConfig::default();
        ScaSpec { eps_th: d.eps_th, delta_th: d.delta_th, k_max: d.k_max, i_max: d.i_max }
    }
}

impl StageSpec {
    pub fn name(&self) -> &'static str {
        match self {
            StageSpec::Detect { .. } => "detect",
            StageSpec::Ls { .. } => "ls",
            StageSpec::Lmmse { .. } => "lmmse",
            StageSpec::Comm { .. } => "comm",
        }
    }
}

/// `R_G = scale·ρ^{|i−j|}` steered toward `θ_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub rho: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sweeps {
    One(SweepSpec),
    Many(Vec<SweepSpec>),
}

impl Sweeps {
    pub fn list(&self) -> Vec<SweepSpec> {
        match self {
            Sweeps::One(s) => vec![s.clone()],
            Sweeps::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub from: f64,
    pub to: f64,
    pub step: f64,
    /// Overrides of other stage parameters while sweeping, e.g. a fixed
    /// `gamma_uth_db` for a power sweep.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub hold: BTreeMap<String, f64>,
}

pub const SWEEP_PARAMETERS: [&str; 6] =
    ["gamma_uth_db", "gamma_tth_db", "gamma_apth_db", "power_dbm", "theta_i_deg", "theta_max_deg"];

impl SweepSpec {
    fn count(&self) -> f64 {
        ((self.to - self.from) / self.step + 1e-9).floor() + 1.0
    }

    /// `from, from+step, …` up to `to` inclusive.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.count().clamp(0.0, 1e6) as usize;
        (0..n).map(|k| self.from + k as f64 * self.step).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleGrid {
    pub from_deg: f64,
    pub to_deg: f64,
    pub step_deg: f64,
}

impl Default for AngleGrid {
    fn default() -> Self {
        AngleGrid { from_deg: 0.0, to_deg: 180.0, step_deg: 0.5 }
    }
}

impl AngleGrid {
    fn count(&self) -> f64 {
        ((self.to_deg - self.from_deg) / self.step_deg + 1e-9).floor() + 1.0
    }

    pub fn degrees(&self) -> Vec<f64> {
        let n = self.count().clamp(0.0, 1e6) as usize;
        (0..n).map(|k| self.from_deg + k as f64 * self.step_deg).collect()
    }
}

/// Stage parameters in linear units and radians.
#[derive(Clone, Debug)]
pub enum Stage {
    Detect { theta_i: f64, gamma_uth: f64 },
    Ls { theta_max: f64, gamma_uth: f64 },
    Lmmse { theta_max: f64, gamma_uth: f64, prior: EstimatorPrior },
    Comm { gamma_tth: f64, gamma_apth: f64, sca: ScaConfig },
}

#[derive(Clone, Debug)]
pub struct Resolved {
    pub name: String,
    pub cfg: SystemConfig,
    pub channels: ChannelSet,
    pub stage: Stage,
    pub trials: u64,
    pub seed: u64,
    pub grid_deg: Vec<f64>,
}

fn invalid(key: impl Into<String>, reason: impl Into<String>) -> CliError {
    CliError::Invalid { key: key.into(), reason: reason.into() }
}

fn finite(key: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(key, format!("{v} is not finite")))
    }
}

fn cvec(key: &str, v: &[[f64; 2]]) -> Result<CVec, CliError> {
    for (i, p) in v.iter().enumerate() {
        finite(&format!("{key}[{i}]"), p[0])?;
        finite(&format!("{key}[{i}]"), p[1])?;
    }
    Ok(CVec::from_iterator(v.len(), v.iter().map(|p| c(p[0], p[1]))))
}

fn angle(key: &str, deg: f64) -> Result<f64, CliError> {
    let d = finite(key, deg)?;
    if !(0.0..=180.0).contains(&d) {
        return Err(invalid(key, format!("{d} outside [0, 180] degrees")));
    }
    Ok(d.to_radians())
}

fn threshold(key: &str, db: f64) -> Result<f64, CliError> {
    Ok(db_to_linear(finite(key, db)?))
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    /// Checks every field and converts to internal units; errors name the
    /// offending key.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let s = &self.system;
        let power = match (s.power_dbm, s.power_w) {
            (Some(_), Some(_)) => return Err(invalid("system.power_w", "give either power_dbm or power_w, not both")),
            (Some(d), None) => dbm_to_watts(finite("system.power_dbm", d)?),
            (None, Some(w)) => finite("system.power_w", w)?,
            (None, None) => dbm_to_watts(0.0),
        };
        let cfg = SystemConfig {
            n_tx: s.n_tx,
            n_rx: s.n_rx,
            sig_len: s.sig_len,
            alpha: s.alpha,
            noise_tag: dbm_to_watts(finite("system.noise_tag_dbm", s.noise_tag_dbm)?),
            noise_ap: dbm_to_watts(finite("system.noise_ap_dbm", s.noise_ap_dbm)?),
            noise_ue: dbm_to_watts(finite("system.noise_ue_dbm", s.noise_ue_dbm)?),
            power_budget: power,
            pfa: s.pfa,
        };
        cfg.validate().map_err(|e| system_key(e, s))?;
        for (k, v, max) in [("system.n_tx", s.n_tx, 256), ("system.n_rx", s.n_rx, 256), ("system.sig_len", s.sig_len, 1 << 20)] {
            if v > max {
                return Err(invalid(k, format!("{v} exceeds the supported maximum {max}")));
            }
        }

        let channels = match &self.channels {
            ChannelSpec::Los { tag_deg, tag_gain, ue_deg, ue_gain, h_tu, h_tu_max } => {
                let tag = angle("channels.tag_deg", *tag_deg)?;
                let ue = angle("channels.ue_deg", *ue_deg)?;
                for (k, v) in [("channels.tag_gain", tag_gain), ("channels.ue_gain", ue_gain)] {
                    if !(finite(k, *v)? > 0.0) {
                        return Err(invalid(k, "must be positive"));
                    }
                }
                finite("channels.h_tu", *h_tu)?;
                finite("channels.h_tu_max", *h_tu_max)?;
                ChannelSet::los(&cfg, (tag, *tag_gain), (ue, *ue_gain), *h_tu, *h_tu_max)
            }
            ChannelSpec::Explicit { h_f, h_b, h_u, h_tu, h_tu_max } => ChannelSet {
                h_f: cvec("channels.h_f", h_f)?,
                h_b: cvec("channels.h_b", h_b)?,
                h_u: cvec("channels.h_u", h_u)?,
                h_tu: c(finite("channels.h_tu", h_tu[0])?, finite("channels.h_tu", h_tu[1])?),
                h_tu_max: finite("channels.h_tu_max", *h_tu_max)?,
            },
        };
        channels.validate(&cfg).map_err(|e| match e {
            ModelError::Invalid { key, reason } => invalid(format!("channels.{key}"), reason),
            other => invalid("channels", other.to_string()),
        })?;
        if channels.h_b.norm() == 0.0 {
            return Err(invalid("channels.h_b", "zero backscatter channel"));
        }

        let stage = match &self.stage {
            StageSpec::Detect { theta_i_deg, gamma_uth_db } => Stage::Detect {
                theta_i: angle("stage.theta_i_deg", *theta_i_deg)?,
                gamma_uth: threshold("stage.gamma_uth_db", *gamma_uth_db)?,
            },
            StageSpec::Ls { theta_max_deg, gamma_uth_db } => Stage::Ls {
                theta_max: angle("stage.theta_max_deg", *theta_max_deg)?,
                gamma_uth: threshold("stage.gamma_uth_db", *gamma_uth_db)?,
            },
            StageSpec::Lmmse { theta_max_deg, gamma_uth_db, prior } => {
                let theta_max = angle("stage.theta_max_deg", *theta_max_deg)?;
                if !(finite("stage.prior.rho", prior.rho)?.abs() < 1.0) {
                    return Err(invalid("stage.prior.rho", "must satisfy |rho| < 1"));
                }
                if !(finite("stage.prior.scale", prior.scale)? > 0.0) {
                    return Err(invalid("stage.prior.scale", "must be positive"));
                }
                let prior = EstimatorPrior::exponential(cfg.n_tx, prior.rho, theta_max, prior.scale)
                    .map_err(|e| invalid("stage.prior", e.to_string()))?;
                Stage::Lmmse { theta_max, gamma_uth: threshold("stage.gamma_uth_db", *gamma_uth_db)?, prior }
            }
            StageSpec::Comm { gamma_tth_db, gamma_apth_db, sca } => {
                let sc = sca.clone().unwrap_or_default();
                for (k, v) in [("stage.sca.eps_th", sc.eps_th), ("stage.sca.delta_th", sc.delta_th)] {
                    if !(finite(k, v)? > 0.0) {
                        return Err(invalid(k, "must be positive"));
                    }
                }
                for (k, v) in [("stage.sca.k_max", sc.k_max), ("stage.sca.i_max", sc.i_max)] {
                    if !(1..=1000).contains(&v) {
                        return Err(invalid(k, format!("{v} outside 1..=1000")));
                    }
                }
                Stage::Comm {
                    gamma_tth: threshold("stage.gamma_tth_db", *gamma_tth_db)?,
                    gamma_apth: threshold("stage.gamma_apth_db", *gamma_apth_db)?,
                    sca: ScaConfig { eps_th: sc.eps_th, delta_th: sc.delta_th, k_max: sc.k_max, i_max: sc.i_max },
                }
            }
        };

        if let Some(sw) = &self.sweep {
            for (i, sp) in sw.list().iter().enumerate() {
                self.check_sweep(i, sp)?;
            }
        }

        let grid = self.beampattern.clone().unwrap_or_default();
        for (k, v) in [("beampattern.from_deg", grid.from_deg), ("beampattern.to_deg", grid.to_deg)] {
            angle(k, v)?;
        }
        if !(grid.step_deg > 0.0) || grid.to_deg < grid.from_deg {
            return Err(invalid("beampattern.step_deg", "grid must be ordered with a positive step"));
        }
        if grid.count() > 100_000.0 {
            return Err(invalid("beampattern.step_deg", "more than 100000 grid angles"));
        }

        Ok(Resolved {
            name: self.name.clone(),
            cfg,
            channels,
            stage,
            trials: self.trials,
            seed: self.seed,
            grid_deg: grid.degrees(),
        })
    }

    fn check_sweep(&self, i: usize, sp: &SweepSpec) -> Result<(), CliError> {
        let key = |f: &str| format!("sweep[{i}].{f}");
        if !SWEEP_PARAMETERS.contains(&sp.parameter.as_str()) {
            return Err(invalid(key("parameter"), format!("unknown parameter {:?}; allowed: {}", sp.parameter, SWEEP_PARAMETERS.join(", "))));
        }
        let applicable: &[&str] = match self.stage {
            StageSpec::Detect { .. } => &["gamma_uth_db", "power_dbm", "theta_i_deg"],
            StageSpec::Ls { .. } | StageSpec::Lmmse { .. } => &["gamma_uth_db", "power_dbm", "theta_max_deg"],
            StageSpec::Comm { .. } => &["gamma_tth_db", "gamma_apth_db", "power_dbm"],
        };
        for p in std::iter::once(&sp.parameter).chain(sp.hold.keys()) {
            if !applicable.contains(&p.as_str()) {
                return Err(invalid(
                    key("parameter"),
                    format!("{p} does not apply to stage {}; allowed: {}", self.stage.name(), applicable.join(", ")),
                ));
            }
        }
        finite(&key("from"), sp.from)?;
        finite(&key("to"), sp.to)?;
        if !(finite(&key("step"), sp.step)? > 0.0) {
            return Err(invalid(key("step"), "must be positive"));
        }
        if sp.to < sp.from {
            return Err(invalid(key("to"), format!("{} is below from = {}", sp.to, sp.from)));
        }
        if sp.count() > 1000.0 {
            return Err(invalid(key("step"), "more than 1000 grid points"));
        }
        Ok(())
    }

    /// Copy with one stage/system parameter replaced.
    pub fn with_parameter(&self, parameter: &str, value: f64) -> Scenario {
        let mut s = self.clone();
        match (parameter, &mut s.stage) {
            ("power_dbm", _) => {
                s.system.power_dbm = Some(value);
                s.system.power_w = None;
            }
            ("gamma_uth_db", StageSpec::Detect { gamma_uth_db, .. })
            | ("gamma_uth_db", StageSpec::Ls { gamma_uth_db, .. })
            | ("gamma_uth_db", StageSpec::Lmmse { gamma_uth_db, .. }) => *gamma_uth_db = value,
            ("theta_i_deg", StageSpec::Detect { theta_i_deg, .. }) => *theta_i_deg = value,
            ("theta_max_deg", StageSpec::Ls { theta_max_deg, .. }) | ("theta_max_deg", StageSpec::Lmmse { theta_max_deg, .. }) => {
                *theta_max_deg = value
            }
            ("gamma_tth_db", StageSpec::Comm { gamma_tth_db, .. }) => *gamma_tth_db = value,
            ("gamma_apth_db", StageSpec::Comm { gamma_apth_db, .. }) => *gamma_apth_db = value,
            _ => {}
        }
        s.sweep = None;
        s
    }
}

fn system_key(e: ModelError, s: &SystemSpec) -> CliError {
    match e {
        ModelError::Invalid { key, reason } => {
            let key = match key {
                "power_budget" if s.power_w.is_some() => "system.power_w".to_string(),
                "power_budget" => "system.power_dbm".to_string(),
                k @ ("noise_tag" | "noise_ap" | "noise_ue") => format!("system.{k}_dbm"),
                k => format!("system.{k}"),
            };
            CliError::Invalid { key, reason }
        }
        other => invalid("system", other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "name": "t",
        "channels": {"model": "los", "tag_deg": 45, "tag_gain": 0.8, "ue_deg": 126, "ue_gain": 0.8, "h_tu": 0.5, "h_tu_max": 0.5},
        "stage": {"kind": "detect", "theta_i_deg": 90, "gamma_uth_db": 15}
    }"#;

    #[test]
    fn defaults_resolve() {
        let r = Scenario::from_json(BASE).unwrap().resolve().unwrap();
        assert_eq!(r.cfg, SystemConfig::default());
        assert_eq!(r.grid_deg.len(), 361);
        assert_eq!(r.seed, 1);
    }

    #[test]
    fn errors_name_the_key() {
        let neg = BASE.replace("\"name\": \"t\",", "\"name\": \"t\", \"system\": {\"power_w\": -1},");
        match Scenario::from_json(&neg).unwrap().resolve() {
            Err(CliError::Invalid { key, .. }) => assert_eq!(key, "system.power_w"),
            other => panic!("{other:?}"),
        }
        let bad = BASE.replace("\"detect\"", "\"track\"");
        let msg = Scenario::from_json(&bad).unwrap_err().to_string();
        assert!(msg.contains("detect") && msg.contains("lmmse") && msg.contains("comm"), "{msg}");
        let ang = BASE.replace("\"theta_i_deg\": 90", "\"theta_i_deg\": 190");
        match Scenario::from_json(&ang).unwrap().resolve() {
            Err(CliError::Invalid { key, .. }) => assert_eq!(key, "stage.theta_i_deg"),
            other => panic!("{other:?}"),
        }
        let unknown = BASE.replace("\"name\": \"t\",", "\"name\": \"t\", \"colour\": 1,");
        assert!(Scenario::from_json(&unknown).unwrap_err().to_string().contains("colour"));
    }

    #[test]
    fn sweeps_validate() {
        let s = Scenario::from_json(BASE).unwrap();
        let mut t = s.clone();
        t.sweep = Some(Sweeps::One(SweepSpec { parameter: "gamma_uth_db".into(), from: 9.0, to: 21.0, step: 2.4, hold: BTreeMap::new() }));
        t.resolve().unwrap();
        assert_eq!(t.sweep.as_ref().unwrap().list()[0].grid().len(), 6);
        t.sweep = Some(Sweeps::One(SweepSpec { parameter: "gamma_tth_db".into(), from: 0.0, to: 1.0, step: 1.0, hold: BTreeMap::new() }));
        assert!(matches!(t.resolve(), Err(CliError::Invalid { .. })));
        t.sweep = Some(Sweeps::One(SweepSpec { parameter: "power_dbm".into(), from: 5.0, to: 1.0, step: 1.0, hold: BTreeMap::new() }));
        match t.resolve() {
            Err(CliError::Invalid { key, .. }) => assert_eq!(key, "sweep[0].to"),
            other => panic!("{other:?}"),
        }
        let p = s.with_parameter("power_dbm", -3.0);
        assert_eq!(p.system.power_dbm, Some(-3.0));
    }
}
