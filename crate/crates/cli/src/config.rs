//! Run configuration: one TOML file with units in the key names.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use siv_stark::electrostatics::{Domain, ElectrodeGeometry, DEFAULT_RESOLUTION};
use siv_stark::matcher::{EnsembleSpec, MatchObjective, TuningConstraints};
use siv_stark::model::{Emitter, LevelStructure, Position, StarkParams, TransitionLabel};
use siv_stark::spectra::{
    AmplitudeModel, LineModel, LineShapeParams, NoiseModel, ScanSettings, ScanWindow,
};

/// Invalid input, reported with the key that caused it (exit code 1).
#[derive(Debug)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            key: key.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "config error: {}", self.message)
        } else {
            write!(f, "config error at `{}`: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub gap_um: f64,
    pub electrode_width_um: f64,
    pub epsilon: f64,
    /// Bias used for the field map and report.
    #[serde(rename = "applied_voltage_V")]
    pub applied_voltage: f64,
    pub domain_width_um: Option<f64>,
    pub domain_height_um: Option<f64>,
    pub domain_depth_um: Option<f64>,
    pub resolution_cells_per_gap: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let g = ElectrodeGeometry::reference();
        Self {
            gap_um: g.gap_um,
            electrode_width_um: g.electrode_width_um,
            epsilon: g.epsilon_diamond,
            applied_voltage: g.applied_voltage,
            domain_width_um: None,
            domain_height_um: None,
            domain_depth_um: None,
            resolution_cells_per_gap: DEFAULT_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub x_um: f64,
    pub depth_nm: f64,
    /// Skips the field solve when set.
    #[serde(rename = "kappa_MVpm_per_V")]
    pub kappa: Option<f64>,
    pub line_cut_points: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        let p = Position::default();
        Self {
            x_um: p.x_um,
            depth_nm: p.depth_nm,
            kappa: None,
            line_cut_points: 401,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmitterConfig {
    pub id: String,
    pub label: TransitionLabel,
    #[serde(rename = "f_max_GHz")]
    pub f_max: f64,
    #[serde(rename = "alpha_MHz_per_MVpm2")]
    pub alpha: f64,
    #[serde(rename = "e0_MVpm")]
    pub e0: f64,
}

impl Default for EmitterConfig {
    fn default() -> Self {
        let label = TransitionLabel::C;
        Self {
            id: "E4".into(),
            label,
            f_max: siv_stark::model::transition_ladder(&LevelStructure::default())[&label],
            alpha: 15.0,
            e0: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineConfig {
    #[serde(rename = "gamma0_MHz")]
    pub gamma0: f64,
    #[serde(rename = "gamma_slope_MHz_per_MVpm")]
    pub gamma_slope: f64,
    #[serde(rename = "transform_limit_MHz")]
    pub transform_limit: f64,
    #[serde(rename = "a_max_cps")]
    pub a_max: f64,
    #[serde(rename = "v_on_V")]
    pub v_on: f64,
    #[serde(rename = "w_on_V")]
    pub w_on: f64,
    #[serde(rename = "v_peak_V")]
    pub v_peak: f64,
    #[serde(rename = "w_off_V")]
    pub w_off: f64,
}

impl Default for LineConfig {
    fn default() -> Self {
        let s = LineShapeParams::default();
        let a = AmplitudeModel::default();
        Self {
            gamma0: s.gamma0,
            gamma_slope: s.gamma_slope,
            transform_limit: s.transform_limit,
            a_max: a.a_max,
            v_on: a.v_on,
            w_on: a.w_on,
            v_peak: a.v_peak,
            w_off: a.w_off,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Tracking,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    #[serde(rename = "voltages_V")]
    pub voltages: Vec<f64>,
    pub window: WindowKind,
    #[serde(rename = "half_width_GHz")]
    pub half_width: f64,
    #[serde(rename = "start_GHz")]
    pub start: Option<f64>,
    #[serde(rename = "stop_GHz")]
    pub stop: Option<f64>,
    pub points: usize,
    #[serde(rename = "integration_time_s")]
    pub integration_time: f64,
    #[serde(rename = "dark_rate_cps")]
    pub dark_rate: f64,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        let s = ScanSettings::default();
        Self {
            voltages: (0..11).map(|i| 10.0 * i as f64).collect(),
            window: WindowKind::Tracking,
            half_width: 2.5,
            start: None,
            stop: None,
            points: 200,
            integration_time: 1.5,
            dark_rate: s.dark_rate,
            noise: s.noise,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Ensemble CSV to load instead of sampling.
    pub file: Option<PathBuf>,
    pub n: usize,
    pub label: TransitionLabel,
    #[serde(rename = "f0_center_GHz")]
    pub f0_center: f64,
    #[serde(rename = "f0_fwhm_GHz")]
    pub f0_fwhm: f64,
    #[serde(rename = "alpha_range_MHz_per_MVpm2")]
    pub alpha_range: [f64; 2],
    #[serde(rename = "e0_range_MVpm")]
    pub e0_range: [f64; 2],
    pub alpha_e0_correlation: f64,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        let s = EnsembleSpec::default();
        Self {
            file: None,
            n: s.n,
            label: s.label,
            f0_center: s.f0_center,
            f0_fwhm: s.f0_fwhm,
            alpha_range: s.alpha_range,
            e0_range: s.e0_range,
            alpha_e0_correlation: s.alpha_e0_correlation,
            seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingConfig {
    pub objective: MatchObjective,
    #[serde(rename = "v_min_V")]
    pub v_min: f64,
    #[serde(rename = "v_max_V")]
    pub v_max: f64,
    /// Defaults to the probe kappa.
    #[serde(rename = "kappa_MVpm_per_V")]
    pub kappa: Option<f64>,
    #[serde(rename = "match_tolerance_MHz")]
    pub tolerance: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        let t = TuningConstraints::default();
        Self {
            objective: MatchObjective::MaxMatched,
            v_min: t.v_range[0],
            v_max: t.v_range[1],
            kappa: None,
            tolerance: t.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// The full map is large; off unless asked for.
    pub write_fieldmap: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            write_fieldmap: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub probe: ProbeConfig,
    pub emitter: EmitterConfig,
    pub line: LineConfig,
    pub scan: ScanConfig,
    pub ensemble: EnsembleConfig,
    pub matching: MatchingConfig,
    pub output: OutputConfig,
}

/// A parsed config plus the SHA-256 of its source text.
#[derive(Debug)]
pub struct Loaded {
    pub config: RunConfig,
    pub sha256: String,
}

pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
    let mut loaded = parse(&text)?;
    // relative ensemble files resolve against the config's directory
    if let Some(f) = loaded.config.ensemble.file.as_mut() {
        if f.is_relative() {
            if let Some(dir) = path.parent() {
                *f = dir.join(&*f);
            }
        }
    }
    Ok(loaded)
}

pub fn parse(text: &str) -> Result<Loaded, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::new("", e))?;
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        ConfigError::new(key, e.into_inner())
    })?;
    config.validate()?;
    Ok(Loaded {
        config,
        sha256: hex::encode(Sha256::digest(text.as_bytes())),
    })
}

fn positive(key: &str, x: f64) -> Result<(), ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(
            key,
            format!("must be positive and finite, got {x}"),
        ))
    }
}

fn finite(key: &str, x: f64) -> Result<(), ConfigError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(key, format!("must be finite, got {x}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.geometry;
        positive("geometry.gap_um", g.gap_um)?;
        positive("geometry.electrode_width_um", g.electrode_width_um)?;
        if !(g.epsilon >= 1.0 && g.epsilon.is_finite()) {
            return Err(ConfigError::new(
                "geometry.epsilon",
                format!("must be >= 1, got {}", g.epsilon),
            ));
        }
        finite("geometry.applied_voltage_V", g.applied_voltage)?;
        self.geometry()
            .validate()
            .map_err(|e| ConfigError::new("geometry", e))?;

        let p = &self.probe;
        finite("probe.x_um", p.x_um)?;
        positive("probe.depth_nm", p.depth_nm)?;
        if let Some(k) = p.kappa {
            positive("probe.kappa_MVpm_per_V", k)?;
        }
        if p.line_cut_points < 2 {
            return Err(ConfigError::new("probe.line_cut_points", "need at least 2"));
        }

        let e = &self.emitter;
        StarkParams::new(e.f_max, e.alpha, e.e0).map_err(|err| ConfigError::new("emitter", err))?;

        self.line_model()
            .shape
            .validate()
            .map_err(|err| ConfigError::new("line", err))?;
        self.line_model()
            .amplitude
            .validate()
            .map_err(|err| ConfigError::new("line", err))?;

        let s = &self.scan;
        for (i, v) in s.voltages.iter().enumerate() {
            finite(&format!("scan.voltages_V[{i}]"), *v)?;
        }
        if s.window == WindowKind::Fixed && (s.start.is_none() || s.stop.is_none()) {
            return Err(ConfigError::new(
                "scan.window",
                "a fixed window needs start_GHz and stop_GHz",
            ));
        }
        self.scan_settings()
            .validate()
            .map_err(|err| ConfigError::new("scan", err))?;

        self.ensemble_spec()
            .validate()
            .map_err(|err| ConfigError::new("ensemble", err))?;

        let m = &self.matching;
        if let Some(k) = m.kappa {
            positive("matching.kappa_MVpm_per_V", k)?;
        }
        TuningConstraints::new(m.v_min, m.v_max, m.kappa.unwrap_or(1.0), m.tolerance)
            .map_err(|err| ConfigError::new("matching", err))?;
        Ok(())
    }

    pub fn geometry(&self) -> ElectrodeGeometry {
        let g = &self.geometry;
        let mut out = ElectrodeGeometry::coplanar(
            g.gap_um,
            g.electrode_width_um,
            g.applied_voltage,
            g.epsilon,
        );
        let d = out.domain;
        out.domain = Domain {
            width_um: g.domain_width_um.unwrap_or(d.width_um),
            height_um: g.domain_height_um.unwrap_or(d.height_um),
            depth_um: g.domain_depth_um.unwrap_or(d.depth_um),
        };
        out
    }

    pub fn position(&self) -> Position {
        Position {
            x_um: self.probe.x_um,
            depth_nm: self.probe.depth_nm,
        }
    }

    pub fn emitter(&self) -> Emitter {
        let e = &self.emitter;
        let params = StarkParams::new(e.f_max, e.alpha, e.e0).expect("validated");
        let mut em = Emitter::single(e.id.clone(), e.label, params);
        em.position = self.position();
        em
    }

    pub fn line_model(&self) -> LineModel {
        let l = &self.line;
        LineModel {
            shape: LineShapeParams {
                gamma0: l.gamma0,
                gamma_slope: l.gamma_slope,
                transform_limit: l.transform_limit,
            },
            amplitude: AmplitudeModel {
                a_max: l.a_max,
                v_on: l.v_on,
                w_on: l.w_on,
                v_peak: l.v_peak,
                w_off: l.w_off,
            },
        }
    }

    pub fn scan_settings(&self) -> ScanSettings {
        let s = &self.scan;
        let window = match s.window {
            WindowKind::Tracking => ScanWindow::Tracking {
                half_width: s.half_width,
                points: s.points,
            },
            WindowKind::Fixed => ScanWindow::Fixed {
                start: s.start.unwrap_or(f64::NAN),
                stop: s.stop.unwrap_or(f64::NAN),
                points: s.points,
            },
        };
        ScanSettings {
            window,
            integration_time: s.integration_time,
            dark_rate: s.dark_rate,
            noise: s.noise,
        }
    }

    pub fn ensemble_spec(&self) -> EnsembleSpec {
        let e = &self.ensemble;
        EnsembleSpec {
            n: e.n,
            label: e.label,
            f0_center: e.f0_center,
            f0_fwhm: e.f0_fwhm,
            alpha_range: e.alpha_range,
            e0_range: e.e0_range,
            alpha_e0_correlation: e.alpha_e0_correlation,
            seed: e.seed,
        }
    }

    /// Applies a command-line seed to every seeded stage.
    pub fn override_seed(&mut self, seed: u64) {
        self.scan.seed = seed;
        self.ensemble.seed = seed;
    }
}
