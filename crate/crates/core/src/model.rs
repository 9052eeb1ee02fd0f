//! Emitter physics: level structure, the quadratic Stark law and its inverse.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{self, ALPHA_EPSILON};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("polarizability {alpha} MHz/(MV/m)^2 is below {epsilon}; vertex is unidentifiable")]
    DegenerateQuadratic { alpha: f64, epsilon: f64 },
    #[error("invalid Stark parameters: {0}")]
    InvalidStark(String),
    #[error("invalid level structure: {0}")]
    InvalidLevels(String),
    #[error("invalid emitter: {0}")]
    InvalidEmitter(String),
    #[error("unknown transition label {0:?}")]
    UnknownLabel(String),
}

/// Parameters of `f(E) = f_max − α (E − E0)²`.
///
/// `f_max` is in GHz (absolute or relative to a declared reference), `alpha`
/// in MHz/(MV/m)² and `e0` in MV/m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarkParams {
    #[serde(rename = "f_max_GHz")]
    pub f_max: f64,
    #[serde(rename = "alpha_MHz_per_MVpm2")]
    pub alpha: f64,
    #[serde(rename = "e0_MVpm")]
    pub e0: f64,
}

impl StarkParams {
    pub fn new(f_max: f64, alpha: f64, e0: f64) -> Result<Self, ModelError> {
        let p = Self { f_max, alpha, e0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.f_max.is_finite() || !self.alpha.is_finite() || !self.e0.is_finite() {
            return Err(ModelError::InvalidStark("non-finite parameter".into()));
        }
        if self.alpha < 0.0 {
            return Err(ModelError::InvalidStark(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Curvature in GHz/(MV/m)².
    #[inline]
    pub fn alpha_ghz(&self) -> f64 {
        units::mhz_to_ghz(self.alpha)
    }
}

/// Optical transition frequency (GHz) at local field `e_local` (MV/m).
pub fn transition_frequency(p: &StarkParams, e_local: f64) -> f64 {
    p.f_max + stark_shift(p, e_local)
}

/// `f(E) − f_max`, in GHz. Never positive.
pub fn stark_shift(p: &StarkParams, e_local: f64) -> f64 {
    let d = e_local - p.e0;
    -p.alpha_ghz() * d * d
}

/// All local fields at which the transition sits at `f_target`, ascending.
pub fn fields_for_frequency(p: &StarkParams, f_target: f64) -> Result<Vec<f64>, ModelError> {
    if p.alpha < ALPHA_EPSILON {
        return Err(ModelError::DegenerateQuadratic {
            alpha: p.alpha,
            epsilon: ALPHA_EPSILON,
        });
    }
    let depth = p.f_max - f_target;
    if depth < 0.0 {
        return Ok(Vec::new());
    }
    if depth == 0.0 {
        return Ok(vec![p.e0]);
    }
    let half = (depth / p.alpha_ghz()).sqrt();
    Ok(vec![p.e0 - half, p.e0 + half])
}

/// First-order relative uncertainty of α given a relative field uncertainty.
/// The measured shift scales as E², so the relative error doubles.
pub fn propagate_field_uncertainty(rel_sigma_e: f64) -> f64 {
    2.0 * rel_sigma_e
}

/// Zero-phonon-line transitions, ordered from highest to lowest frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TransitionLabel {
    A,
    B,
    C,
    D,
}

impl TransitionLabel {
    pub const ALL: [TransitionLabel; 4] = [Self::A, Self::B, Self::C, Self::D];
}

impl fmt::Display for TransitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
            Self::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for TransitionLabel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "B" => Ok(Self::B),
            "C" => Ok(Self::C),
            "D" => Ok(Self::D),
            _ => Err(ModelError::UnknownLabel(s.to_string())),
        }
    }
}

/// Fine structure of the SiV⁻ zero-phonon line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStructure {
    #[serde(rename = "zpl_center_THz")]
    pub zpl_center: f64,
    #[serde(rename = "gs_split_GHz")]
    pub gs_split: f64,
    #[serde(rename = "es_split_GHz")]
    pub es_split: f64,
}

impl Default for LevelStructure {
    fn default() -> Self {
        Self {
            zpl_center: units::SIV_ZPL_THZ,
            gs_split: units::SIV_GS_SPLIT_GHZ,
            es_split: units::SIV_ES_SPLIT_GHZ,
        }
    }
}

impl LevelStructure {
    pub fn new(zpl_center: f64, gs_split: f64, es_split: f64) -> Result<Self, ModelError> {
        let l = Self {
            zpl_center,
            gs_split,
            es_split,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.gs_split > 0.0) || !(self.es_split > 0.0) {
            return Err(ModelError::InvalidLevels(format!(
                "splittings must be positive (gs={}, es={})",
                self.gs_split, self.es_split
            )));
        }
        if !self.zpl_center.is_finite() {
            return Err(ModelError::InvalidLevels("non-finite ZPL centre".into()));
        }
        Ok(())
    }
}

/// Frequencies (GHz) of the four optical transitions.
///
/// Ground levels sit at ∓gs/2 and excited levels at ∓es/2 around their
/// midpoints, so A−B = C−D = gs and A−D = gs + es. Degenerate splittings are
/// accepted here; only [`LevelStructure::validate`] insists on positivity.
pub fn transition_ladder(l: &LevelStructure) -> BTreeMap<TransitionLabel, f64> {
    let center = l.zpl_center * units::GHZ_PER_THZ;
    let (g, e) = (0.5 * l.gs_split, 0.5 * l.es_split);
    BTreeMap::from([
        (TransitionLabel::A, center + e + g),
        (TransitionLabel::B, center + e - g),
        (TransitionLabel::C, center - e + g),
        (TransitionLabel::D, center - e - g),
    ])
}

/// Emitter location relative to the grounded electrode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    /// Distance from the grounded electrode's inner edge, µm.
    pub x_um: f64,
    /// Depth below the diamond surface, nm.
    pub depth_nm: f64,
}

impl Default for Position {
    fn default() -> Self {
        Self {
            x_um: 0.25 * units::REFERENCE_GAP_UM,
            depth_nm: units::REFERENCE_DEPTH_NM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    pub id: String,
    pub levels: LevelStructure,
    pub stark: BTreeMap<TransitionLabel, StarkParams>,
    pub position: Position,
}

impl Emitter {
    /// Emitter with a single characterised transition at the default position.
    pub fn single(id: impl Into<String>, label: TransitionLabel, params: StarkParams) -> Self {
        Self {
            id: id.into(),
            levels: LevelStructure::default(),
            stark: BTreeMap::from([(label, params)]),
            position: Position::default(),
        }
    }

    pub fn params(&self, label: TransitionLabel) -> Option<&StarkParams> {
        self.stark.get(&label)
    }

    /// Checks the emitter against an electrode gap of `gap_um`.
    pub fn validate(&self, gap_um: f64) -> Result<(), ModelError> {
        if self.stark.is_empty() {
            return Err(ModelError::InvalidEmitter(format!(
                "{}: no Stark parameters",
                self.id
            )));
        }
        for p in self.stark.values() {
            p.validate()?;
        }
        self.levels.validate()?;
        let Position { x_um, depth_nm } = self.position;
        if !(x_um > 0.0 && x_um < gap_um) || !(depth_nm > 0.0) {
            return Err(ModelError::InvalidEmitter(format!(
                "{}: position ({x_um} um, {depth_nm} nm) outside the {gap_um} um gap",
                self.id
            )));
        }
        Ok(())
    }
}
