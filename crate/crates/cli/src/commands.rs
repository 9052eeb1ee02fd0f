use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use siv_stark::electrostatics::{
    calibrate_kappa, probe_report, solve_potential, FieldError, FieldProbe,
};
use siv_stark::fitting::{detect_peaks, fit_lorentzian, fit_stark, LorentzianFit, StarkPoint};
use siv_stark::io;
use siv_stark::matcher::oracle::{agreement, oracle, OracleGrid};
use siv_stark::matcher::{match_frequencies, sample_ensemble, MatchError, TuningConstraints};
use siv_stark::model::{
    stark_shift, transition_frequency, transition_ladder, LevelStructure, StarkParams,
};
use siv_stark::spectra::{series_seed, SpectrumError};

use crate::config::{ConfigError, Loaded, RunConfig};

/// A failure of the numerics rather than of the inputs (exit code 2).
#[derive(Debug)]
pub struct Numerical(pub String);

impl fmt::Display for Numerical {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Numerical {}

fn numerical(msg: impl fmt::Display) -> anyhow::Error {
    Numerical(msg.to_string()).into()
}

fn field_error(e: FieldError) -> anyhow::Error {
    match e {
        FieldError::NoConvergence { .. } => numerical(e),
        other => ConfigError::new("geometry", other).into(),
    }
}

/// Where a run writes and what it was driven by.
pub struct Run {
    pub config: RunConfig,
    pub config_sha256: String,
    pub out: PathBuf,
}

impl Run {
    pub fn new(loaded: Loaded, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        let mut config = loaded.config;
        if let Some(s) = seed {
            config.override_seed(s);
        }
        let out = out.unwrap_or_else(|| config.output.dir.clone());
        Self {
            config,
            config_sha256: loaded.sha256,
            out,
        }
    }

    fn stage_dir(&self, stage: &str) -> Result<PathBuf> {
        let dir = self.out.join(stage);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    /// Probe kappa from the config, or from a field solve.
    fn kappa(&self) -> Result<f64> {
        if let Some(k) = self.config.probe.kappa {
            return Ok(k);
        }
        let probe = calibrate_kappa(
            &self.config.geometry(),
            &self.config.position(),
            self.config.geometry.resolution_cells_per_gap,
        )
        .map_err(field_error)?;
        Ok(probe.kappa)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub sha256: String,
    #[serde(rename = "voltage_V", skip_serializing_if = "Option::is_none", default)]
    pub voltage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(
        rename = "predicted_center_GHz",
        skip_serializing_if = "Option::is_none",
        default
    )]
    pub predicted_center: Option<f64>,
}

impl FileEntry {
    fn plain(file: &str, bytes: &[u8]) -> Self {
        Self {
            file: file.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            voltage: None,
            seed: None,
            predicted_center: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(
        rename = "kappa_MVpm_per_V",
        skip_serializing_if = "Option::is_none",
        default
    )]
    pub kappa: Option<f64>,
    pub files: Vec<FileEntry>,
}

/// Writes `bytes` to `dir/name` and records it.
fn emit(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<FileEntry>) -> Result<FileEntry> {
    let path = dir.join(name);
    io::write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    let entry = FileEntry::plain(name, bytes);
    files.push(entry.clone());
    Ok(entry)
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let path = dir.join("manifest.json");
    io::write_atomic(&path, io::to_json(m)?.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
}

fn json_bytes(v: &impl Serialize) -> Result<Vec<u8>> {
    Ok(io::to_json(v)?.into_bytes())
}

#[derive(Serialize)]
struct FieldSummary<'a> {
    resolution_cells_per_gap: usize,
    solver_iterations: usize,
    relative_residual: f64,
    #[serde(flatten)]
    probe: &'a siv_stark::electrostatics::ProbeReport,
}

pub fn field(run: &Run) -> Result<()> {
    let cfg = &run.config;
    let g = cfg.geometry();
    let map = solve_potential(&g, cfg.geometry.resolution_cells_per_gap).map_err(field_error)?;
    let report = probe_report(&map, &cfg.position()).map_err(field_error)?;
    let cut = map
        .line_cut(cfg.probe.depth_nm, cfg.probe.line_cut_points)
        .map_err(field_error)?;

    let dir = run.stage_dir("field")?;
    let mut files = Vec::new();
    let mut buf = Vec::new();
    io::write_line_cut_csv(&mut buf, &cut)?;
    emit(&dir, "line_cut.csv", &buf, &mut files)?;
    if cfg.output.write_fieldmap {
        let mut buf = Vec::new();
        io::write_fieldmap_csv(&mut buf, &map)?;
        emit(&dir, "fieldmap.csv", &buf, &mut files)?;
    }
    let summary = FieldSummary {
        resolution_cells_per_gap: map.resolution,
        solver_iterations: map.convergence.iterations,
        relative_residual: map.convergence.relative_residual,
        probe: &report,
    };
    emit(&dir, "report.json", &json_bytes(&summary)?, &mut files)?;
    write_manifest(
        &dir,
        &Manifest {
            command: "field".into(),
            config_sha256: run.config_sha256.clone(),
            seed: None,
            kappa: Some(report.kappa),
            files,
        },
    )?;
    println!(
        "E_ext {:.4} MV/m, E_local {:.4} MV/m at ({} um, {} nm) for {} V; kappa {:.5} MV/m per V",
        report.e_ext,
        report.e_local,
        report.x_um,
        report.depth_nm,
        report.applied_voltage,
        report.kappa
    );
    Ok(())
}

pub fn simulate(run: &Run) -> Result<()> {
    let cfg = &run.config;
    let kappa = run.kappa()?;
    let probe = FieldProbe::new(cfg.probe.x_um, cfg.probe.depth_nm, kappa);
    let em = cfg.emitter();
    let label = cfg.emitter.label;
    let spectra = siv_stark::spectra::generate_voltage_series(
        &em,
        label,
        &probe,
        &cfg.scan.voltages,
        &cfg.scan_settings(),
        &cfg.line_model(),
        cfg.scan.seed,
    )
    .map_err(|e| match e {
        SpectrumError::Series(_) => numerical(e),
        other => anyhow!(other),
    })?;

    let dir = run.stage_dir("spectra")?;
    let params = em.params(label).expect("configured transition");
    let mut files = Vec::new();
    for (i, s) in spectra.iter().enumerate() {
        let mut buf = Vec::new();
        io::write_spectrum_csv(&mut buf, s)?;
        let mut entry = emit(&dir, &format!("spectrum_{i:03}.csv"), &buf, &mut Vec::new())?;
        entry.voltage = Some(s.voltage);
        entry.seed = Some(series_seed(cfg.scan.seed, i));
        entry.predicted_center = Some(transition_frequency(params, probe.local_field(s.voltage)));
        files.push(entry);
    }
    write_manifest(
        &dir,
        &Manifest {
            command: "simulate".into(),
            config_sha256: run.config_sha256.clone(),
            seed: Some(cfg.scan.seed),
            kappa: Some(kappa),
            files,
        },
    )?;
    println!("{} spectra written to {}", spectra.len(), dir.display());
    Ok(())
}

/// One row of the per-voltage table: shift, width and height against field.
#[derive(Debug, Serialize)]
struct FitRecord {
    #[serde(flatten)]
    fit: LorentzianFit,
    #[serde(rename = "e_local_MVpm")]
    e_local: f64,
}

#[derive(Debug, Serialize)]
struct FitFailure {
    #[serde(rename = "voltage_V")]
    voltage: f64,
    file: String,
    error: String,
}

#[derive(Debug, Serialize)]
struct FitsOutput {
    #[serde(rename = "kappa_MVpm_per_V")]
    kappa: f64,
    fits: Vec<FitRecord>,
    failures: Vec<FitFailure>,
}

/// Fewest usable spectra for a Stark fit.
const MIN_USABLE: usize = 4;

pub fn fit(run: &Run, spectra_dir: Option<PathBuf>) -> Result<()> {
    let dir = spectra_dir.unwrap_or_else(|| run.out.join("spectra"));
    let manifest_path = dir.join("manifest.json");
    let (kappa, names) = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path)
            .with_context(|| format!("reading {}", manifest_path.display()))?;
        let m: Manifest = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", manifest_path.display()))?;
        let kappa = match m.kappa {
            Some(k) => k,
            None => run.kappa()?,
        };
        (
            kappa,
            m.files.into_iter().map(|f| f.file).collect::<Vec<_>>(),
        )
    } else {
        let mut names: Vec<String> = fs::read_dir(&dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        names.sort();
        (run.kappa()?, names)
    };

    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for name in &names {
        let path = dir.join(name);
        let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let s = io::read_spectrum_csv(BufReader::new(file))
            .with_context(|| format!("reading {}", path.display()))?;
        let result = detect_peaks(&s).and_then(|g| fit_lorentzian(&s, &g[0]));
        match result {
            Ok(f) => fits.push(FitRecord {
                e_local: kappa * f.voltage,
                fit: f,
            }),
            Err(e) => failures.push(FitFailure {
                voltage: s.voltage,
                file: name.clone(),
                error: e.to_string(),
            }),
        }
    }
    fits.sort_by(|a, b| a.fit.voltage.total_cmp(&b.fit.voltage));

    let failed_list = failures
        .iter()
        .map(|f| format!("{} V", f.voltage))
        .collect::<Vec<_>>()
        .join(", ");
    if !failures.is_empty() {
        eprintln!("no usable line at: {failed_list}");
    }
    if fits.len() < MIN_USABLE {
        return Err(numerical(format!(
            "{} usable spectra, need {MIN_USABLE}; failed at: {}",
            fits.len(),
            if failed_list.is_empty() {
                "none"
            } else {
                &failed_list
            }
        )));
    }

    let points: Vec<StarkPoint> = fits
        .iter()
        .map(|r| StarkPoint::from_fit(&r.fit, kappa))
        .collect();
    let stark = fit_stark(&points).map_err(numerical)?;

    let out = run.stage_dir("fit")?;
    let mut files = Vec::new();
    let mut table = String::from(
        "voltage_V,e_local_MVpm,center_GHz,center_sigma_GHz,shift_GHz,fwhm_MHz,fwhm_sigma_MHz,amplitude_cps,amplitude_sigma_cps\n",
    );
    for r in &fits {
        let f = &r.fit;
        let row = [
            f.voltage,
            r.e_local,
            f.center,
            f.center_sigma,
            f.center - stark.f_max,
            f.fwhm,
            f.fwhm_sigma,
            f.amplitude,
            f.amplitude_sigma,
        ];
        // shortest round-trip: absolute centres need more than 9 digits
        table.push_str(&row.map(|x| x.to_string()).join(","));
        table.push('\n');
    }
    let n_fits = fits.len();
    let fits_out = FitsOutput {
        kappa,
        fits,
        failures,
    };
    emit(&out, "fits.json", &json_bytes(&fits_out)?, &mut files)?;
    emit(&out, "stark.json", &json_bytes(&stark)?, &mut files)?;
    emit(&out, "table.csv", table.as_bytes(), &mut files)?;
    write_manifest(
        &out,
        &Manifest {
            command: "fit".into(),
            config_sha256: run.config_sha256.clone(),
            seed: None,
            kappa: Some(kappa),
            files,
        },
    )?;
    println!(
        "alpha {:.3} ± {:.3} (stat) ± {:.3} (sys) MHz/(MV/m)^2, E0 {:.3} ± {:.3} MV/m, f_max {:.6} ± {:.6} GHz from {n_fits} spectra",
        stark.alpha, stark.alpha_sigma, stark.alpha_systematic, stark.e0, stark.e0_sigma, stark.f_max, stark.f_max_sigma
    );
    Ok(())
}

fn match_error(e: MatchError) -> anyhow::Error {
    match e {
        MatchError::Unreachable { .. } => numerical(e),
        other => ConfigError::new("ensemble", other).into(),
    }
}

/// Largest ensemble the exhaustive oracle is run on.
const ORACLE_MAX_N: usize = 5;

pub fn match_cmd(run: &Run, with_oracle: bool) -> Result<()> {
    let cfg = &run.config;
    let label = cfg.ensemble.label;
    let (ensemble, overrides) = match &cfg.ensemble.file {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| {
                ConfigError::new("ensemble.file", format!("{}: {e}", path.display()))
            })?;
            io::read_ensemble_csv(BufReader::new(file), label)
                .map_err(|e| ConfigError::new("ensemble.file", e))?
        }
        None => (
            sample_ensemble(&cfg.ensemble_spec()).map_err(match_error)?,
            BTreeMap::new(),
        ),
    };
    let kappa = match cfg.matching.kappa {
        Some(k) => k,
        None => run.kappa()?,
    };
    let m = &cfg.matching;
    let mut tc = TuningConstraints::new(m.v_min, m.v_max, kappa, m.tolerance)
        .map_err(|e| ConfigError::new("matching", e))?;
    tc.kappa_overrides = overrides;
    let plan = match_frequencies(&ensemble, label, &tc, m.objective).map_err(match_error)?;

    let dir = run.stage_dir("match")?;
    let mut files = Vec::new();
    let mut buf = Vec::new();
    io::write_ensemble_csv(&mut buf, &ensemble, label, |id| tc.kappa_for(id))?;
    emit(&dir, "ensemble.csv", &buf, &mut files)?;
    emit(&dir, "plan.json", &json_bytes(&plan)?, &mut files)?;
    println!(
        "matched {}/{} (fraction {:.4}) at target {:.6} GHz",
        plan.matched_count,
        ensemble.len(),
        plan.matched_fraction,
        plan.target
    );

    let mut disagreement = None;
    if with_oracle {
        if ensemble.len() > ORACLE_MAX_N {
            return Err(ConfigError::new(
                "ensemble.n",
                format!(
                    "--oracle is limited to {ORACLE_MAX_N} emitters, got {}",
                    ensemble.len()
                ),
            )
            .into());
        }
        let grid = OracleGrid::default();
        let o = oracle(&ensemble, label, &tc, m.objective, &grid).map_err(match_error)?;
        let a = agreement(&plan, &o, &grid);
        #[derive(Serialize)]
        struct OracleOutput {
            grid: OracleGrid,
            oracle: siv_stark::matcher::oracle::OracleResult,
            agreement: siv_stark::matcher::oracle::Agreement,
        }
        let body = OracleOutput {
            grid,
            oracle: o.clone(),
            agreement: a,
        };
        emit(&dir, "oracle.json", &json_bytes(&body)?, &mut files)?;
        println!(
            "oracle: matched {} at {:.6} GHz, objective {:.3} MHz; agrees: {}",
            o.matched_count, o.target, o.objective_value, a.agrees
        );
        if !a.agrees {
            disagreement = Some(a.difference);
        }
    }
    write_manifest(
        &dir,
        &Manifest {
            command: "match".into(),
            config_sha256: run.config_sha256.clone(),
            seed: cfg.ensemble.file.is_none().then_some(cfg.ensemble.seed),
            kappa: Some(kappa),
            files,
        },
    )?;
    if let Some(d) = disagreement {
        return Err(numerical(format!(
            "plan disagrees with the oracle (difference {d})"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct TuningRow {
    #[serde(rename = "alpha_MHz_per_MVpm2")]
    alpha: f64,
    #[serde(rename = "e_local_MVpm")]
    e_local: f64,
    #[serde(rename = "shift_GHz")]
    shift: f64,
}

#[derive(Serialize)]
struct Report {
    config_sha256: String,
    #[serde(rename = "transition_ladder_GHz")]
    ladder: BTreeMap<String, f64>,
    tuning_range: Vec<TuningRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stark: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r#match: Option<Value>,
}

fn read_json(path: &Path) -> Result<Option<Value>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(v))
}

/// Local field at which the tuning range is quoted, MV/m.
const TUNING_FIELD: f64 = 45.0;

pub fn report(run: &Run) -> Result<()> {
    let ladder = transition_ladder(&LevelStructure::default())
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let tuning_range = [
        siv_stark::units::ALPHA_OBSERVED_MIN,
        run.config.emitter.alpha,
        siv_stark::units::ALPHA_OBSERVED_MAX,
    ]
    .into_iter()
    .map(|alpha| {
        let p = StarkParams::new(0.0, alpha, 0.0).expect("positive alpha");
        TuningRow {
            alpha,
            e_local: TUNING_FIELD,
            shift: stark_shift(&p, TUNING_FIELD),
        }
    })
    .collect();
    let plan = read_json(&run.out.join("match/plan.json"))?.map(|mut p| {
        // keep the headline numbers; the per-emitter table stays in plan.json
        if let Some(obj) = p.as_object_mut() {
            obj.remove("assignments");
        }
        p
    });
    let report = Report {
        config_sha256: run.config_sha256.clone(),
        ladder,
        tuning_range,
        field: read_json(&run.out.join("field/report.json"))?,
        stark: read_json(&run.out.join("fit/stark.json"))?,
        r#match: plan,
    };
    let dir = run.stage_dir("report")?;
    let mut files = Vec::new();
    emit(&dir, "report.json", &json_bytes(&report)?, &mut files)?;
    write_manifest(
        &dir,
        &Manifest {
            command: "report".into(),
            config_sha256: run.config_sha256.clone(),
            seed: None,
            kappa: None,
            files,
        },
    )?;
    let have: Vec<&str> = [
        ("field", report.field.is_some()),
        ("fit", report.stark.is_some()),
        ("match", report.r#match.is_some()),
    ]
    .into_iter()
    .filter_map(|(n, ok)| ok.then_some(n))
    .collect();
    println!(
        "report written to {} (stages: {})",
        dir.display(),
        if have.is_empty() {
            "none".into()
        } else {
            have.join(", ")
        }
    );
    Ok(())
}
