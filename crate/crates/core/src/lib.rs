//! Second-order Stark tuning of SiV⁻ color centers.
//!
//! The crate is organised the way the analysis runs:
//!
//! * [`model`] holds the emitter physics: the quadratic Stark law, its
//!   inversion and the A–D transition ladder.
//! * [`electrostatics`] solves the potential of coplanar surface electrodes
//!   on a diamond half-space and converts applied voltage to local field.
//! * [`spectra`] synthesises voltage-dependent PLE scans.
//! * [`fitting`] recovers Lorentzian line parameters and Stark parameters.
//! * [`matcher`] samples emitter ensembles and plans per-emitter voltages
//!   that bring them to a common frequency.
//! * [`io`] owns the CSV/JSON file formats shared by the command line tool.

// `!(x > 0.0)` is how NaN gets rejected alongside bad values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod electrostatics;
pub mod fitting;
pub mod io;
pub mod matcher;
pub mod model;
pub mod spectra;
pub mod units;

pub use electrostatics::{
    calibrate_kappa, field_at, lorentz_local_field, probe_report, solve_potential,
    ElectrodeGeometry, FieldError, FieldMap, FieldProbe, ProbePosition, ProbeReport,
};
pub use fitting::{
    detect_peaks, fit_lorentzian, fit_stark, linear_term_test, FitError, LinearTermTest,
    LorentzianFit, PeakGuess, StarkFit, StarkPoint,
};
pub use matcher::{
    match_frequencies, reachable_interval, sample_ensemble, voltage_for_target, EnsembleSpec,
    MatchError, MatchObjective, MatchPlan, TuningConstraints,
};
pub use model::{
    fields_for_frequency, propagate_field_uncertainty, stark_shift, transition_frequency,
    transition_ladder, Emitter, LevelStructure, ModelError, Position, StarkParams, TransitionLabel,
};
pub use spectra::{
    amplitude_model, generate_ple_scan, generate_voltage_series, linewidth_model, lorentzian,
    AmplitudeModel, LineModel, LineShapeParams, NoiseModel, ScanSettings, ScanWindow, Spectrum,
    SpectrumError,
};
