//! Case configuration, the validate / run / bench workflows and their output
//! files (field CSV, timing CSV, grayscale SPL heatmaps).
//!
//! Config files are flat `key = value` text, one key per line, `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::beamtrace::{Atmosphere, LaunchGrid, SourceSpec, TraceConfig, TraceError};
use crate::gbs::{analytic_scale, calibrate_phi, spl, BeamWidth, FieldResult, GbsError, GbsParams};
use crate::oracle::{image_source_field, interference_nulls, MonopoleCase, OracleError};
use crate::parallel::{
    sum_paths, trace_all, ChunkPlan, ExecPlan, Mode, PhaseTimings, Pipeline, PipelineError,
    DEFAULT_SPLIT_THRESHOLD, TIMING_CSV_HEADER,
};
use crate::scene::generate::ground_plate;
use crate::scene::{load_scene, CategoryFilter, MaterialTable, Scene, SceneError, Vec3};

pub const FIELD_CSV_HEADER: &str = "x,y,z,freq_hz,re_p,im_p,spl_db";
pub const VALIDATION_CSV_HEADER: &str = "freq_hz,x,y,z,spl_gbt_db,spl_oracle_db,delta_db,excluded";

/// Acceptance thresholds of the verification cases, dB.
pub const VALIDATION_MEDIAN_DB: f64 = 1.0;
pub const VALIDATION_MAX_DB: f64 = 3.0;
/// Probe points closer than this many wavelengths to a predicted null are
/// excluded from the comparison.
pub const NULL_EXCLUSION_WAVELENGTHS: f64 = 0.1;

/// Half-size of the rigid plate used by `validate`, m.
pub const VALIDATION_PLATE_HALF: f64 = 5000.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("config key '{0}' is missing")]
    MissingKey(String),
    #[error("config key '{0}' is not recognised")]
    UnknownKey(String),
    #[error("config key '{key}': {message}")]
    Invalid { key: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Gbs(#[from] GbsError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("image output: {0}")]
    Image(#[from] image::ImageError),
    #[error("{0}")]
    Usage(String),
}

fn invalid(key: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Observer layout: a regular grid `origin + i·u + j·v` (row-major, `i`
/// fastest) or an explicit list.
#[derive(Debug, Clone, PartialEq)]
pub enum ObserverSpec {
    Grid {
        origin: Vec3,
        u: Vec3,
        v: Vec3,
        nu: usize,
        nv: usize,
    },
    Points(Vec<Vec3>),
}

impl ObserverSpec {
    pub fn len(&self) -> usize {
        match self {
            ObserverSpec::Grid { nu, nv, .. } => nu * nv,
            ObserverSpec::Points(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<Vec3> {
        match self {
            ObserverSpec::Grid { origin, u, v, nu, nv } => (0..*nv)
                .flat_map(|j| (0..*nu).map(move |i| origin + u * i as f64 + v * j as f64))
                .collect(),
            ObserverSpec::Points(p) => p.clone(),
        }
    }

    /// `(columns, rows)` when the observers form a regular grid.
    pub fn grid_shape(&self) -> Option<(usize, usize)> {
        match self {
            ObserverSpec::Grid { nu, nv, .. } => Some((*nu, *nv)),
            ObserverSpec::Points(_) => None,
        }
    }
}

/// One simulation case, mirroring the case tables key for key.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseConfig {
    pub ta_c: f64,
    pub hr_pct: f64,
    pub pa_atm: f64,
    pub f_s: usize,
    pub freqs_hz: Vec<f64>,
    pub im_b: f64,
    pub phi: f64,
    pub n_b: i64,
    pub n_t: i64,
    pub n_r: i64,
    pub n_w: i64,
    pub n_tree: i64,
    pub dim: u32,
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    pub phi_min_deg: f64,
    pub phi_max_deg: f64,
    pub n_theta: usize,
    pub n_phi: usize,
    pub n_steps: u64,
    pub r_max: u32,
    pub dt_s: f64,
    pub n_obs: usize,
    pub observers: ObserverSpec,
    pub source: Vec3,
    pub mode: Mode,
    pub workers: usize,
    pub split_threshold: usize,
    pub chunk_budget_bytes: Option<usize>,
    pub beam_width: BeamWidth,
    pub calib_freq_hz: f64,
}

const KEYS: &[&str] = &[
    "ta_c",
    "hr_pct",
    "pa_atm",
    "f_s",
    "freqs_hz",
    "im_b",
    "phi",
    "n_b",
    "n_t",
    "n_r",
    "n_w",
    "n_tree",
    "dim",
    "theta_min_deg",
    "theta_max_deg",
    "phi_min_deg",
    "phi_max_deg",
    "n_theta",
    "n_phi",
    "n_steps",
    "r_max",
    "dt_s",
    "n_obs",
    "obs_origin",
    "obs_u",
    "obs_v",
    "obs_nu",
    "obs_nv",
    "obs_points",
    "source",
    "mode",
    "workers",
    "split_threshold",
    "chunk_budget_bytes",
    "beam_width",
    "calib_freq_hz",
];

struct Raw {
    values: BTreeMap<String, (usize, String)>,
}

impl Raw {
    fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key).map(|(_, v)| v)
    }

    fn req(&mut self, key: &str) -> Result<String, HarnessError> {
        self.take(key).ok_or_else(|| HarnessError::MissingKey(key.to_string()))
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, HarnessError> {
        let v = self.req(key)?;
        v.parse().map_err(|_| invalid(key, format!("cannot parse '{v}'")))
    }

    fn num_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, HarnessError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| invalid(key, format!("cannot parse '{v}'"))),
        }
    }

    fn vec3(&mut self, key: &str) -> Result<Vec3, HarnessError> {
        let v = self.req(key)?;
        parse_vec3(&v).ok_or_else(|| invalid(key, format!("expected 'x,y,z', got '{v}'")))
    }
}

fn parse_vec3(s: &str) -> Option<Vec3> {
    let parts: Vec<f64> = s.split(',').map(|t| t.trim().parse().ok()).collect::<Option<_>>()?;
    match parts[..] {
        [x, y, z] if x.is_finite() && y.is_finite() && z.is_finite() => Some(Vec3::new(x, y, z)),
        _ => None,
    }
}

fn fmt_vec3(v: &Vec3) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

fn parse_beam_width(s: &str) -> Option<BeamWidth> {
    match s.split_once(':') {
        None if s == "launch" => Some(BeamWidth::Launch),
        None if s == "matched" => Some(BeamWidth::default()),
        Some(("matched", k)) => {
            let kappa: f64 = k.trim().parse().ok()?;
            (kappa > 0.0 && kappa.is_finite()).then_some(BeamWidth::ReceiverMatched { kappa })
        }
        _ => None,
    }
}

fn fmt_beam_width(w: &BeamWidth) -> String {
    match w {
        BeamWidth::Launch => "launch".into(),
        BeamWidth::ReceiverMatched { kappa } => format!("matched:{kappa}"),
    }
}

impl CaseConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    /// Strict parse: every key known, no duplicates, all invariants checked.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or_else(|| HarnessError::Syntax {
                line,
                message: format!("expected 'key = value', got '{content}'"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(HarnessError::UnknownKey(k.to_string()));
            }
            if let Some((first, _)) = values.insert(k.to_string(), (line, v.to_string())) {
                return Err(HarnessError::Syntax {
                    line,
                    message: format!("key '{k}' already set on line {first}"),
                });
            }
        }
        let mut raw = Raw { values };

        let freqs_text = raw.req("freqs_hz")?;
        let freqs_hz = freqs_text
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| invalid("freqs_hz", format!("cannot parse '{freqs_text}'")))?;

        let observers = match raw.take("obs_points") {
            Some(list) => {
                let pts = list
                    .split(';')
                    .map(|p| parse_vec3(p))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| invalid("obs_points", "expected 'x,y,z; x,y,z; ...'"))?;
                for k in ["obs_origin", "obs_u", "obs_v", "obs_nu", "obs_nv"] {
                    if raw.take(k).is_some() {
                        return Err(invalid(k, "cannot be combined with obs_points"));
                    }
                }
                ObserverSpec::Points(pts)
            }
            None => ObserverSpec::Grid {
                origin: raw.vec3("obs_origin")?,
                u: raw.vec3("obs_u")?,
                v: raw.vec3("obs_v")?,
                nu: raw.num("obs_nu")?,
                nv: raw.num("obs_nv")?,
            },
        };

        let mode_text = raw.take("mode").unwrap_or_else(|| "seq".into());
        let mode = mode_text.parse().map_err(|e: String| invalid("mode", e))?;
        let width_text = raw.take("beam_width");
        let beam_width = match width_text {
            None => BeamWidth::default(),
            Some(t) => parse_beam_width(&t)
                .ok_or_else(|| invalid("beam_width", format!("expected 'launch' or 'matched:<kappa>', got '{t}'")))?,
        };
        let chunk_budget_bytes = match raw.take("chunk_budget_bytes") {
            None => None,
            Some(t) if t == "none" => None,
            Some(t) => Some(t.parse().map_err(|_| invalid("chunk_budget_bytes", format!("cannot parse '{t}'")))?),
        };

        let cfg = CaseConfig {
            ta_c: raw.num("ta_c")?,
            hr_pct: raw.num("hr_pct")?,
            pa_atm: raw.num("pa_atm")?,
            f_s: raw.num("f_s")?,
            freqs_hz,
            im_b: raw.num("im_b")?,
            phi: raw.num_or("phi", 1.0)?,
            n_b: raw.num("n_b")?,
            n_t: raw.num("n_t")?,
            n_r: raw.num("n_r")?,
            n_w: raw.num("n_w")?,
            n_tree: raw.num("n_tree")?,
            dim: raw.num("dim")?,
            theta_min_deg: raw.num("theta_min_deg")?,
            theta_max_deg: raw.num("theta_max_deg")?,
            phi_min_deg: raw.num("phi_min_deg")?,
            phi_max_deg: raw.num("phi_max_deg")?,
            n_theta: raw.num("n_theta")?,
            n_phi: raw.num("n_phi")?,
            n_steps: raw.num("n_steps")?,
            r_max: raw.num("r_max")?,
            dt_s: raw.num("dt_s")?,
            n_obs: raw.num("n_obs")?,
            observers,
            source: raw.vec3("source")?,
            mode,
            workers: raw.num_or("workers", 1)?,
            split_threshold: raw.num_or("split_threshold", DEFAULT_SPLIT_THRESHOLD)?,
            chunk_budget_bytes,
            beam_width,
            calib_freq_hz: raw.num_or("calib_freq_hz", 500.0)?,
        };
        debug_assert!(raw.values.is_empty());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let finite_pos = |k: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(k, format!("must be positive, got {v}")))
            }
        };
        if !(self.ta_c > -273.15 && self.ta_c.is_finite()) {
            return Err(invalid("ta_c", "must be above absolute zero"));
        }
        if !(0.0..=100.0).contains(&self.hr_pct) {
            return Err(invalid("hr_pct", "must lie in [0, 100]"));
        }
        finite_pos("pa_atm", self.pa_atm)?;
        if self.f_s == 0 || self.f_s != self.freqs_hz.len() {
            return Err(invalid(
                "f_s",
                format!("{} frequencies declared, {} listed", self.f_s, self.freqs_hz.len()),
            ));
        }
        for &f in &self.freqs_hz {
            finite_pos("freqs_hz", f)?;
        }
        if !(self.im_b < 0.0 && self.im_b.is_finite()) {
            return Err(invalid("im_b", "must be negative"));
        }
        finite_pos("phi", self.phi)?;
        if self.dim != 3 {
            return Err(invalid("dim", format!("only 3D is supported, got {}", self.dim)));
        }
        self.launch_grid().validate().map_err(|e| invalid("theta/phi", e.to_string()))?;
        if self.n_steps == 0 {
            return Err(invalid("n_steps", "must be positive"));
        }
        if self.r_max == 0 {
            return Err(invalid("r_max", "must be positive"));
        }
        finite_pos("dt_s", self.dt_s)?;
        if self.observers.is_empty() {
            return Err(invalid("obs", "no observers"));
        }
        if self.n_obs != self.observers.len() {
            return Err(invalid(
                "n_obs",
                format!("{} declared, observer spec gives {}", self.n_obs, self.observers.len()),
            ));
        }
        if self.workers == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        if self.split_threshold == 0 {
            return Err(invalid("split_threshold", "must be at least 1"));
        }
        if self.chunk_budget_bytes == Some(0) {
            return Err(invalid("chunk_budget_bytes", "must be positive"));
        }
        finite_pos("calib_freq_hz", self.calib_freq_hz)?;
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn echo(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("ta_c", self.ta_c.to_string());
        kv("hr_pct", self.hr_pct.to_string());
        kv("pa_atm", self.pa_atm.to_string());
        kv("f_s", self.f_s.to_string());
        kv(
            "freqs_hz",
            self.freqs_hz.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("im_b", self.im_b.to_string());
        kv("phi", self.phi.to_string());
        kv("n_b", self.n_b.to_string());
        kv("n_t", self.n_t.to_string());
        kv("n_r", self.n_r.to_string());
        kv("n_w", self.n_w.to_string());
        kv("n_tree", self.n_tree.to_string());
        kv("dim", self.dim.to_string());
        kv("theta_min_deg", self.theta_min_deg.to_string());
        kv("theta_max_deg", self.theta_max_deg.to_string());
        kv("phi_min_deg", self.phi_min_deg.to_string());
        kv("phi_max_deg", self.phi_max_deg.to_string());
        kv("n_theta", self.n_theta.to_string());
        kv("n_phi", self.n_phi.to_string());
        kv("n_steps", self.n_steps.to_string());
        kv("r_max", self.r_max.to_string());
        kv("dt_s", self.dt_s.to_string());
        kv("n_obs", self.n_obs.to_string());
        match &self.observers {
            ObserverSpec::Grid { origin, u, v, nu, nv } => {
                kv("obs_origin", fmt_vec3(origin));
                kv("obs_u", fmt_vec3(u));
                kv("obs_v", fmt_vec3(v));
                kv("obs_nu", nu.to_string());
                kv("obs_nv", nv.to_string());
            }
            ObserverSpec::Points(p) => {
                kv("obs_points", p.iter().map(fmt_vec3).collect::<Vec<_>>().join(";"));
            }
        }
        kv("source", fmt_vec3(&self.source));
        kv("mode", self.mode.to_string());
        kv("workers", self.workers.to_string());
        kv("split_threshold", self.split_threshold.to_string());
        kv(
            "chunk_budget_bytes",
            self.chunk_budget_bytes.map_or("none".into(), |b| b.to_string()),
        );
        kv("beam_width", fmt_beam_width(&self.beam_width));
        kv("calib_freq_hz", self.calib_freq_hz.to_string());
        o
    }

    pub fn atmosphere(&self) -> Result<Atmosphere, HarnessError> {
        Ok(Atmosphere::new(self.ta_c, self.hr_pct, self.pa_atm)?)
    }

    pub fn source_spec(&self) -> SourceSpec {
        SourceSpec {
            position: self.source,
            frequencies: self.freqs_hz.clone(),
            amplitude_phi: self.phi,
            beam_param_im: self.im_b,
        }
    }

    pub fn launch_grid(&self) -> LaunchGrid {
        LaunchGrid {
            theta_min: self.theta_min_deg,
            theta_max: self.theta_max_deg,
            phi_min: self.phi_min_deg,
            phi_max: self.phi_max_deg,
            n_theta: self.n_theta,
            n_phi: self.n_phi,
        }
    }

    pub fn trace_config(&self) -> TraceConfig {
        TraceConfig {
            n_steps: self.n_steps,
            dt: self.dt_s,
            r_max: self.r_max,
        }
    }

    pub fn category_filter(&self) -> CategoryFilter {
        CategoryFilter::from_counts(self.n_b, self.n_t, self.n_r, self.n_w, self.n_tree)
    }

    pub fn exec_plan(&self) -> ExecPlan {
        ExecPlan {
            mode: self.mode,
            workers: self.workers,
            split_threshold: self.split_threshold,
            memory_budget: self.chunk_budget_bytes,
        }
    }

    /// Same case restricted to one frequency.
    pub fn with_frequency(&self, freq_hz: f64) -> Self {
        CaseConfig {
            f_s: 1,
            freqs_hz: vec![freq_hz],
            ..self.clone()
        }
    }
}

/// Free-field calibration of the weighting scale: rays of a full sphere with
/// the case's ray counts are traced without geometry and matched to the
/// monopole at the calibration frequency.
pub fn calibrate(cfg: &CaseConfig, atmosphere: &Atmosphere, plan: &ExecPlan) -> Result<f64, HarnessError> {
    let grid = LaunchGrid::full_sphere(cfg.n_theta, cfg.n_phi);
    let source = cfg.source_spec();
    let paths = trace_all(&Scene::empty(), &source, &grid, &cfg.trace_config(), atmosphere, plan)?;
    let omega = 2.0 * std::f64::consts::PI * cfg.calib_freq_hz;
    Ok(calibrate_phi(&paths, &source.position, omega, cfg.phi, cfg.beam_width)?)
}

/// Per-frequency comparison against the image-source oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyCheck {
    pub freq_hz: f64,
    pub median_db: f64,
    pub max_db: f64,
    pub compared: usize,
    pub excluded: usize,
    pub regularity_violations: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub calibration: f64,
    pub sound_speed: f64,
    pub checks: Vec<FrequencyCheck>,
    pub csv: String,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} Hz: median {:.3} dB, max {:.3} dB over {} points ({} near nulls excluded), {} regularity violations: {}",
                c.freq_hz,
                c.median_db,
                c.max_db,
                c.compared,
                c.excluded,
                c.regularity_violations,
                if c.passed { "PASS" } else { "FAIL" }
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    /// Scales the solver's sound speed; the oracle keeps the true one.
    pub speed_factor: f64,
    /// Only this frequency (must be listed in the config).
    pub freq_hz: Option<f64>,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            speed_factor: 1.0,
            freq_hz: None,
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Monopole over a rigid plate at `z = 0`: the beam sum on the case's observer
/// line is compared with the image-source solution at every frequency.
pub fn cmd_validate(cfg: &CaseConfig, opts: &ValidateOptions) -> Result<ValidationReport, HarnessError> {
    let freqs: Vec<f64> = match opts.freq_hz {
        None => cfg.freqs_hz.clone(),
        Some(f) if cfg.freqs_hz.contains(&f) => vec![f],
        Some(f) => return Err(HarnessError::Usage(format!("frequency {f} Hz is not listed in freqs_hz"))),
    };
    if cfg.source.z <= 0.0 {
        return Err(invalid("source", "validation needs a source above the plate"));
    }
    let true_atm = cfg.atmosphere()?;
    let atm = true_atm.with_speed_factor(opts.speed_factor);
    let plan = cfg.exec_plan();
    let calibration = calibrate(cfg, &atm, &plan)?;

    let scene = ground_plate(VALIDATION_PLATE_HALF, 0.0).into_scene()?;
    let case = cfg.with_frequency(freqs[0]);
    let source = SourceSpec {
        frequencies: freqs.clone(),
        ..case.source_spec()
    };
    let paths = trace_all(&scene, &source, &cfg.launch_grid(), &cfg.trace_config(), &atm, &plan)?;
    let violations: usize = paths.iter().map(|p| p.regularity_violations(1.0)).sum();

    let observers = cfg.observers.points();
    let params = GbsParams {
        omegas: source.omegas(),
        amplitude_phi: cfg.phi,
        calibration,
        width: cfg.beam_width,
        cutoff: true,
    };
    let (pressure, _) = sum_paths(&observers, &paths, &params, &plan)?;
    let nf = freqs.len();

    let mut csv = String::from(VALIDATION_CSV_HEADER);
    csv.push('\n');
    let mut checks = Vec::new();
    for (fi, &f) in freqs.iter().enumerate() {
        let oracle_case = MonopoleCase {
            source: cfg.source,
            freq: f,
            sound_speed: true_atm.sound_speed,
        };
        let lambda = true_atm.sound_speed / f;
        let xs = observers.iter().map(|o| o.x);
        let (x_min, x_max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let nulls = if observers.iter().all(|o| o.y == observers[0].y && o.z == observers[0].z) {
            let pad = lambda;
            interference_nulls(&oracle_case, observers[0].y, observers[0].z, x_min - pad, x_max + pad)
        } else {
            Vec::new()
        };
        let mut deltas = Vec::new();
        let mut excluded = 0;
        for (oi, obs) in observers.iter().enumerate() {
            let gbt = spl(pressure[oi * nf + fi]);
            let reference = spl(image_source_field(&oracle_case, obs)?);
            let delta = gbt - reference;
            let near_null = nulls
                .iter()
                .any(|&x| (obs.x - x).abs() < NULL_EXCLUSION_WAVELENGTHS * lambda);
            if near_null {
                excluded += 1;
            } else {
                deltas.push(if delta.is_finite() { delta.abs() } else { f64::INFINITY });
            }
            let _ = writeln!(
                csv,
                "{f},{},{},{},{gbt:.4},{reference:.4},{delta:.4},{}",
                obs.x,
                obs.y,
                obs.z,
                u8::from(near_null)
            );
        }
        let max_db = deltas.iter().cloned().fold(0.0, f64::max);
        let median_db = median(&mut deltas);
        checks.push(FrequencyCheck {
            freq_hz: f,
            median_db,
            max_db,
            compared: deltas.len(),
            excluded,
            regularity_violations: violations,
            passed: median_db <= VALIDATION_MEDIAN_DB && max_db <= VALIDATION_MAX_DB,
        });
    }
    Ok(ValidationReport {
        calibration,
        sound_speed: atm.sound_speed,
        checks,
        csv,
    })
}

/// Everything needed to reconstruct and audit one run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub field: FieldResult,
    pub timings: PhaseTimings,
    pub config_echo: String,
    pub version: &'static str,
    pub chunks: ChunkPlan,
    pub evaluations: u64,
    pub skipped: u64,
    pub observers: Vec<Vec3>,
}

impl RunReport {
    /// Deterministic summary (no wall-clock values).
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "version = {}", self.version);
        let _ = writeln!(s, "observers = {}", self.field.n_obs);
        let _ = writeln!(s, "frequencies_hz = {:?}", self.field.frequencies);
        let _ = writeln!(s, "chunks = {:?}", self.chunks.chunk_sizes);
        let _ = writeln!(s, "calibration = {:e}", self.field.calibration);
        let _ = writeln!(s, "beam_evaluations = {}", self.evaluations);
        let _ = writeln!(s, "cutoff_skips = {}", self.skipped);
        let nulls = self.field.spl.iter().filter(|v| !v.is_finite()).count();
        let _ = writeln!(s, "null_points = {nulls}");
        s
    }
}

pub fn load_case_scene(cfg: &CaseConfig, scene_path: &Path) -> Result<Scene, HarnessError> {
    Ok(load_scene(scene_path, &cfg.category_filter(), &MaterialTable::default())?)
}

/// Runs the full pipeline under the config's execution plan.
pub fn run_case(cfg: &CaseConfig, scene: &Scene) -> Result<RunReport, HarnessError> {
    let atm = cfg.atmosphere()?;
    let plan = cfg.exec_plan();
    let calibration = calibrate(cfg, &atm, &plan)?;
    let source = cfg.source_spec();
    let observers = cfg.observers.points();
    let params = GbsParams {
        omegas: source.omegas(),
        amplitude_phi: cfg.phi,
        calibration,
        width: cfg.beam_width,
        cutoff: true,
    };
    let grid = cfg.launch_grid();
    let tcfg = cfg.trace_config();
    let pipe = Pipeline {
        scene,
        source: &source,
        grid: &grid,
        cfg: &tcfg,
        atmosphere: &atm,
        observers: &observers,
        params: &params,
    };
    let out = pipe.run(&plan)?;
    Ok(RunReport {
        field: out.field,
        timings: out.timings,
        config_echo: cfg.echo(),
        version: env!("CARGO_PKG_VERSION"),
        chunks: out.chunks,
        evaluations: out.work.evaluations,
        skipped: out.work.skipped,
        observers,
    })
}

pub fn field_csv(field: &FieldResult, observers: &[Vec3]) -> String {
    let mut s = String::from(FIELD_CSV_HEADER);
    s.push('\n');
    for (oi, o) in observers.iter().enumerate() {
        for (fi, f) in field.frequencies.iter().enumerate() {
            let p = field.pressure_at(oi, fi);
            let _ = writeln!(s, "{},{},{},{f},{:e},{:e},{:.4}", o.x, o.y, o.z, p.re, p.im, field.spl_at(oi, fi));
        }
    }
    s
}

/// Scale information written next to a heatmap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapScale {
    pub spl_min: f64,
    pub spl_max: f64,
    pub null_points: usize,
    pub width: usize,
    pub height: usize,
}

impl HeatmapScale {
    pub fn sidecar(&self) -> String {
        format!(
            "spl_min_db = {}\nspl_max_db = {}\nnull_points = {}\nwidth = {}\nheight = {}\n",
            self.spl_min, self.spl_max, self.null_points, self.width, self.height
        )
    }
}

/// Maps SPL values on a `width × height` grid (row-major) linearly from
/// `[min, max]` to gray levels `[0, 255]`. Null points (−∞) map to 0.
pub fn heatmap_pixels(spl_db: &[f64], width: usize, height: usize) -> (Vec<u8>, HeatmapScale) {
    assert_eq!(spl_db.len(), width * height, "grid shape mismatch");
    let finite = spl_db.iter().cloned().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let null_points = spl_db.iter().filter(|v| !v.is_finite()).count();
    let pixels = spl_db
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                0
            } else if hi > lo {
                (((v - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                128
            }
        })
        .collect();
    let scale = HeatmapScale {
        spl_min: if lo.is_finite() { lo } else { f64::NAN },
        spl_max: if hi.is_finite() { hi } else { f64::NAN },
        null_points,
        width,
        height,
    };
    (pixels, scale)
}

/// Writes an 8-bit grayscale PNG and its `.scale.txt` sidecar.
pub fn emit_heatmap(spl_db: &[f64], width: usize, height: usize, out_path: &Path) -> Result<HeatmapScale, HarnessError> {
    let (pixels, scale) = heatmap_pixels(spl_db, width, height);
    image::save_buffer(out_path, &pixels, width as u32, height as u32, image::ExtendedColorType::L8)?;
    let sidecar = sidecar_path(out_path);
    fs::write(&sidecar, scale.sidecar()).map_err(io_err(&sidecar))?;
    Ok(scale)
}

pub fn sidecar_path(image_path: &Path) -> PathBuf {
    let mut name = image_path.file_name().unwrap_or_default().to_os_string();
    name.push(".scale.txt");
    image_path.with_file_name(name)
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Pipeline run plus output files: `field.csv`, `timing.csv`, `config.txt`,
/// `report.txt` and one `spl_<f>hz.png` per frequency when observers form a
/// grid.
pub fn cmd_run(cfg: &CaseConfig, scene_path: &Path, out_dir: &Path) -> Result<RunReport, HarnessError> {
    let scene = load_case_scene(cfg, scene_path)?;
    let report = run_case(cfg, &scene)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write(&out_dir.join("field.csv"), &field_csv(&report.field, &report.observers))?;
    let timing = format!(
        "{TIMING_CSV_HEADER}\n{}\n",
        report.timings.csv_row(cfg.mode, cfg.workers, cfg.launch_grid().len(), report.field.n_obs, report.chunks.n_chunks())
    );
    write(&out_dir.join("timing.csv"), &timing)?;
    write(&out_dir.join("config.txt"), &report.config_echo)?;
    write(&out_dir.join("report.txt"), &report.summary())?;
    if let Some((w, h)) = cfg.observers.grid_shape() {
        for (fi, f) in report.field.frequencies.iter().enumerate() {
            let values: Vec<f64> = (0..report.field.n_obs).map(|o| report.field.spl_at(o, fi)).collect();
            emit_heatmap(&values, w, h, &out_dir.join(format!("spl_{f}hz.png")))?;
        }
    }
    Ok(report)
}

/// Ray grid with `n` rays, as square as `n` allows.
pub fn grid_for_rays(base: &LaunchGrid, n: usize) -> Result<LaunchGrid, HarnessError> {
    if n == 0 {
        return Err(HarnessError::Usage("ray count must be positive".into()));
    }
    let mut n_theta = (n as f64).sqrt().floor() as usize;
    while n % n_theta != 0 {
        n_theta -= 1;
    }
    Ok(LaunchGrid {
        n_theta,
        n_phi: n / n_theta,
        ..*base
    })
}

/// One row of a benchmark sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub mode: Mode,
    pub workers: usize,
    pub rays: usize,
    pub observers: usize,
    pub chunks: usize,
    pub timings: PhaseTimings,
}

impl BenchRow {
    pub fn csv(&self) -> String {
        self.timings
            .csv_row(self.mode, self.workers, self.rays, self.observers, self.chunks)
    }
}

/// Timing sweep over ray counts × modes × workers. Every ray count is first
/// run sequentially as the speedup baseline. The field uses the closed-form
/// weighting scale, so no calibration pass is timed.
pub fn cmd_bench(
    cfg: &CaseConfig,
    scene: &Scene,
    rays: &[usize],
    modes: &[Mode],
    workers: &[usize],
) -> Result<Vec<BenchRow>, HarnessError> {
    let atm = cfg.atmosphere()?;
    let source = cfg.source_spec();
    let observers = cfg.observers.points();
    let params = GbsParams {
        omegas: source.omegas(),
        amplitude_phi: cfg.phi,
        calibration: analytic_scale(cfg.phi, atm.sound_speed),
        width: cfg.beam_width,
        cutoff: true,
    };
    let tcfg = cfg.trace_config();
    let mut rows = Vec::new();
    for &n in rays {
        let grid = grid_for_rays(&cfg.launch_grid(), n)?;
        let pipe = Pipeline {
            scene,
            source: &source,
            grid: &grid,
            cfg: &tcfg,
            atmosphere: &atm,
            observers: &observers,
            params: &params,
        };
        let base_plan = ExecPlan {
            memory_budget: cfg.chunk_budget_bytes,
            split_threshold: cfg.split_threshold,
            ..ExecPlan::sequential()
        };
        let baseline = pipe.run(&base_plan)?;
        let base_total = baseline.timings.total_seconds;
        for &mode in modes {
            let worker_list: &[usize] = if mode == Mode::Sequential { &[1] } else { workers };
            for &w in worker_list {
                let out = if mode == Mode::Sequential {
                    baseline.clone()
                } else {
                    pipe.run(&ExecPlan {
                        mode,
                        workers: w,
                        ..base_plan
                    })?
                };
                rows.push(BenchRow {
                    mode,
                    workers: w,
                    rays: n,
                    observers: observers.len(),
                    chunks: out.chunks.n_chunks(),
                    timings: out.timings.with_baseline(base_total),
                });
            }
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{TIMING_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// Comma-separated list parser for CLI sweeps.
pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, HarnessError> {
    let items = text
        .split(',')
        .map(|t| t.trim().parse::<T>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| HarnessError::Usage(format!("cannot parse {what} list '{text}'")))?;
    if items.is_empty() {
        return Err(HarnessError::Usage(format!("empty {what} list")));
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FREE_FIELD: &str = "\
# free field
ta_c = 20
hr_pct = 70
pa_atm = 1
f_s = 5
freqs_hz = 50,125,250,500,1000
im_b = -45874
n_b = 1000
n_t = 4000
n_r = 5000
n_w = -10
n_tree = -10
dim = 3
theta_min_deg = 0
theta_max_deg = 180
phi_min_deg = 0
phi_max_deg = 360
n_theta = 128
n_phi = 128
n_steps = 8000
r_max = 10
dt_s = 0.0001
n_obs = 13586
obs_origin = -169.8,0,10
obs_u = 0.05,0,0
obs_v = 0,10,0
obs_nu = 6793
obs_nv = 2
source = 0,0,5
";

    #[test]
    fn free_field_parses_and_round_trips() {
        let cfg = CaseConfig::parse(FREE_FIELD).unwrap();
        assert_eq!(cfg.n_obs, 13586);
        assert_eq!(cfg.im_b, -45874.0);
        assert_eq!(cfg.n_steps, 8000);
        assert_eq!(cfg.r_max, 10);
        assert_eq!(cfg.dt_s, 1e-4);
        assert_eq!(cfg.mode, Mode::Sequential);
        assert_eq!(cfg.beam_width, BeamWidth::default());
        let echo = cfg.echo();
        let again = CaseConfig::parse(&echo).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.echo(), echo);
    }

    #[test]
    fn strictness() {
        let zero_dt = FREE_FIELD.replace("dt_s = 0.0001", "dt_s = 0");
        assert!(matches!(CaseConfig::parse(&zero_dt), Err(HarnessError::Invalid { .. })));
        let two_d = FREE_FIELD.replace("dim = 3", "dim = 2");
        assert!(CaseConfig::parse(&two_d).is_err());
        let unknown = format!("{FREE_FIELD}colour = blue\n");
        assert!(matches!(CaseConfig::parse(&unknown), Err(HarnessError::UnknownKey(_))));
        let missing = FREE_FIELD.replace("r_max = 10\n", "");
        assert!(matches!(CaseConfig::parse(&missing), Err(HarnessError::MissingKey(_))));
        let dup = format!("{FREE_FIELD}r_max = 3\n");
        assert!(matches!(CaseConfig::parse(&dup), Err(HarnessError::Syntax { .. })));
        let wrong_count = FREE_FIELD.replace("n_obs = 13586", "n_obs = 13585");
        assert!(CaseConfig::parse(&wrong_count).is_err());
        let f_s = FREE_FIELD.replace("f_s = 5", "f_s = 4");
        assert!(CaseConfig::parse(&f_s).is_err());
        let garbage = FREE_FIELD.replace("ta_c = 20", "ta_c 20");
        assert!(matches!(CaseConfig::parse(&garbage), Err(HarnessError::Syntax { line: 2, .. })));
    }

    #[test]
    fn optional_keys() {
        let text = format!("{FREE_FIELD}mode = dyn\nworkers = 4\nchunk_budget_bytes = 100000\nbeam_width = launch\n");
        let cfg = CaseConfig::parse(&text).unwrap();
        assert_eq!(cfg.mode, Mode::Dynamic);
        assert_eq!(cfg.workers, 4);
        assert_eq!(cfg.chunk_budget_bytes, Some(100000));
        assert_eq!(cfg.beam_width, BeamWidth::Launch);
        assert_eq!(CaseConfig::parse(&cfg.echo()).unwrap(), cfg);
        let bad = format!("{FREE_FIELD}beam_width = matched:-1\n");
        assert!(CaseConfig::parse(&bad).is_err());
    }

    #[test]
    fn observer_points() {
        let text = FREE_FIELD
            .replace("n_obs = 13586", "n_obs = 2")
            .replace("obs_origin = -169.8,0,10\nobs_u = 0.05,0,0\nobs_v = 0,10,0\nobs_nu = 6793\nobs_nv = 2\n", "obs_points = 1,2,3; 4,5,6\n");
        let cfg = CaseConfig::parse(&text).unwrap();
        assert_eq!(cfg.observers.points(), vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0)]);
        assert_eq!(CaseConfig::parse(&cfg.echo()).unwrap(), cfg);
    }

    #[test]
    fn grid_points_row_major() {
        let spec = ObserverSpec::Grid {
            origin: Vec3::zeros(),
            u: Vec3::x(),
            v: Vec3::y(),
            nu: 3,
            nv: 2,
        };
        let p = spec.points();
        assert_eq!(p[1], Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(p[3], Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(spec.grid_shape(), Some((3, 2)));
    }

    #[test]
    fn heatmap_mapping() {
        let (px, scale) = heatmap_pixels(&[60.0; 6], 3, 2);
        assert!(px.iter().all(|&p| p == px[0]));
        assert_eq!(scale.null_points, 0);
        let (px, scale) = heatmap_pixels(&[40.0, 50.0, f64::NEG_INFINITY, 60.0], 2, 2);
        assert_eq!(px, vec![0, 128, 0, 255]);
        assert_eq!(scale.null_points, 1);
        assert_eq!((scale.spl_min, scale.spl_max), (40.0, 60.0));
    }

    #[test]
    fn heatmap_file_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.png");
        emit_heatmap(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, 2, &path).unwrap();
        let img = image::open(&path).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (3, 2));
        assert_eq!(img.get_pixel(0, 0)[0], 0);
        assert_eq!(img.get_pixel(2, 1)[0], 255);
        let side = fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(side.contains("spl_min_db = 1"));
    }

    #[test]
    fn ray_grids() {
        let base = LaunchGrid::full_sphere(1, 1);
        let g = grid_for_rays(&base, 4096).unwrap();
        assert_eq!((g.n_theta, g.n_phi), (64, 64));
        let g = grid_for_rays(&base, 12).unwrap();
        assert_eq!((g.n_theta, g.n_phi), (3, 4));
        assert!(grid_for_rays(&base, 0).is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<usize>("256, 1024,4096", "rays").unwrap(), vec![256, 1024, 4096]);
        assert_eq!(parse_list::<Mode>("seq,flat,dyn", "modes").unwrap(), Mode::ALL.to_vec());
        assert!(parse_list::<usize>("1,x", "workers").is_err());
    }
}
