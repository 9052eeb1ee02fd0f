//! Unit conventions and physical defaults.
//!
//! Frequencies are GHz, linewidths MHz, polarizabilities MHz/(MV/m)², fields
//! MV/m, lengths µm (depths nm), voltages V. Every conversion goes through
//! this table.

pub const MHZ_PER_GHZ: f64 = 1.0e3;
pub const GHZ_PER_THZ: f64 = 1.0e3;
pub const UM_PER_NM: f64 = 1.0e-3;

/// Polarizability below this (MHz/(MV/m)²) leaves the parabola vertex
/// unidentifiable.
pub const ALPHA_EPSILON: f64 = 1.0e-6;

/// Relative permittivity of diamond.
pub const EPSILON_DIAMOND: f64 = 5.7;

/// Inner-edge electrode separation of the reference device, µm.
pub const REFERENCE_GAP_UM: f64 = 7.6;
/// Electrode finger width of the reference device, µm.
pub const REFERENCE_ELECTRODE_WIDTH_UM: f64 = 10.0;
/// Expected implantation depth, nm.
pub const REFERENCE_DEPTH_NM: f64 = 100.0;

/// SiV⁻ zero-phonon line centre, THz.
pub const SIV_ZPL_THZ: f64 = 406.7;
/// Nominal ground-state splitting, GHz.
pub const SIV_GS_SPLIT_GHZ: f64 = 50.0;
/// Nominal (lower bound) excited-state splitting, GHz.
pub const SIV_ES_SPLIT_GHZ: f64 = 250.0;

/// Transform-limited FWHM, 1/(2π T1), MHz.
pub const TRANSFORM_LIMIT_MHZ: f64 = 90.0;
/// APD dark count rate, counts/s.
pub const DARK_RATE_CPS: f64 = 700.0;

/// Polarizabilities observed across the studied emitters, MHz/(MV/m)².
pub const ALPHA_OBSERVED_MIN: f64 = 1.4;
pub const ALPHA_OBSERVED_MAX: f64 = 15.0;

/// Relative uncertainty of the local field from the emitter position spread.
pub const FIELD_POSITION_REL_SIGMA: f64 = 0.07;

#[inline]
pub fn mhz_to_ghz(mhz: f64) -> f64 {
    mhz / MHZ_PER_GHZ
}

#[inline]
pub fn ghz_to_mhz(ghz: f64) -> f64 {
    ghz * MHZ_PER_GHZ
}

#[inline]
pub fn nm_to_um(nm: f64) -> f64 {
    nm * UM_PER_NM
}
