//! File formats: spectrum, field-map and ensemble CSVs, JSON records and
//! atomic writes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::electrostatics::FieldMap;
use crate::model::{Emitter, StarkParams, TransitionLabel};
use crate::spectra::{Spectrum, SpectrumError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn parse_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        msg: msg.into(),
    }
}

/// `printf("%.9g")`: nine significant digits, trailing zeros removed,
/// scientific notation outside `1e-4 ≤ |x| < 1e9`.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    }
}

pub fn write_spectrum_csv(mut w: impl Write, s: &Spectrum) -> io::Result<()> {
    writeln!(
        w,
        "# voltage_V={} seed={} t_int_s={}",
        sig9(s.voltage),
        s.noise_seed,
        sig9(s.integration_time)
    )?;
    writeln!(w, "detuning_GHz,counts")?;
    for (d, c) in s.detunings.iter().zip(&s.counts) {
        writeln!(w, "{},{}", sig9(*d), sig9(*c))?;
    }
    Ok(())
}

pub fn read_spectrum_csv(r: impl BufRead) -> Result<Spectrum, IoError> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let header = header?;
    let meta = header
        .strip_prefix('#')
        .ok_or_else(|| parse_err(1, "missing '# voltage_V=...' header"))?;
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for kv in meta.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("malformed header entry {kv:?}")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| -> Result<&str, IoError> {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| parse_err(1, format!("header lacks {k}")))
    };
    let num = |k: &str| -> Result<f64, IoError> {
        get(k)?
            .parse()
            .map_err(|e| parse_err(1, format!("{k}: {e}")))
    };
    let voltage = num("voltage_V")?;
    let t_int = num("t_int_s")?;
    let seed: u64 = get("seed")?
        .parse()
        .map_err(|e| parse_err(1, format!("seed: {e}")))?;

    let (_, cols) = lines
        .next()
        .ok_or_else(|| parse_err(2, "missing column header"))?;
    if cols?.trim() != "detuning_GHz,counts" {
        return Err(parse_err(2, "expected column header 'detuning_GHz,counts'"));
    }
    let (mut x, mut c) = (Vec::new(), Vec::new());
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| parse_err(i + 1, "expected two columns"))?;
        x.push(
            a.trim()
                .parse()
                .map_err(|e| parse_err(i + 1, format!("{e}")))?,
        );
        c.push(
            b.trim()
                .parse()
                .map_err(|e| parse_err(i + 1, format!("{e}")))?,
        );
    }
    Ok(Spectrum::new(voltage, x, c, t_int, seed)?)
}

/// One row per cell centre; the potential is the mean of the four corners.
pub fn write_fieldmap_csv(mut w: impl Write, map: &FieldMap) -> io::Result<()> {
    writeln!(w, "x_um,y_um,phi_V,Ex_MVpm,Ey_MVpm")?;
    let (cx, cy) = (map.x.centers(), map.y.centers());
    let nx = map.nx();
    for (j, y) in cy.iter().enumerate() {
        for (i, x) in cx.iter().enumerate() {
            let phi = 0.25
                * (map.phi[j * nx + i]
                    + map.phi[j * nx + i + 1]
                    + map.phi[(j + 1) * nx + i]
                    + map.phi[(j + 1) * nx + i + 1]);
            let k = j * cx.len() + i;
            writeln!(
                w,
                "{},{},{},{},{}",
                sig9(*x),
                sig9(*y),
                sig9(phi),
                sig9(map.ex[k]),
                sig9(map.ey[k])
            )?;
        }
    }
    Ok(())
}

/// Rows of `[x from grounded edge µm, Ex, Ey, |E|]`.
pub fn write_line_cut_csv(mut w: impl Write, rows: &[[f64; 4]]) -> io::Result<()> {
    writeln!(w, "x_um,Ex_MVpm,Ey_MVpm,E_MVpm")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            sig9(r[0]),
            sig9(r[1]),
            sig9(r[2]),
            sig9(r[3])
        )?;
    }
    Ok(())
}

const ENSEMBLE_HEADER: &str = "id,f_max_GHz,alpha,e0,kappa";

/// Shortest round-trip decimals, so a reload reproduces the ensemble
/// exactly. `kappa_for` supplies each emitter's MV/m per V.
pub fn write_ensemble_csv(
    mut w: impl Write,
    ensemble: &[Emitter],
    label: TransitionLabel,
    kappa_for: impl Fn(&str) -> f64,
) -> io::Result<()> {
    writeln!(w, "{ENSEMBLE_HEADER}")?;
    for em in ensemble {
        let Some(p) = em.params(label) else {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("{} has no transition {label}", em.id),
            ));
        };
        writeln!(
            w,
            "{},{},{},{},{}",
            em.id,
            p.f_max,
            p.alpha,
            p.e0,
            kappa_for(&em.id)
        )?;
    }
    Ok(())
}

/// Emitters with a single `label` transition, plus their kappas by id.
pub fn read_ensemble_csv(
    r: impl BufRead,
    label: TransitionLabel,
) -> Result<(Vec<Emitter>, BTreeMap<String, f64>), IoError> {
    let mut lines = r.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h?,
        None => String::new(),
    };
    if header.trim() != ENSEMBLE_HEADER {
        return Err(parse_err(1, format!("expected header '{ENSEMBLE_HEADER}'")));
    }
    let mut ensemble = Vec::new();
    let mut kappas = BTreeMap::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(parse_err(
                i + 1,
                format!("expected 5 columns, got {}", cols.len()),
            ));
        }
        let num = |k: usize| -> Result<f64, IoError> {
            cols[k]
                .parse()
                .map_err(|e| parse_err(i + 1, format!("column {}: {e}", k + 1)))
        };
        let params = StarkParams::new(num(1)?, num(2)?, num(3)?)
            .map_err(|e| parse_err(i + 1, e.to_string()))?;
        let id = cols[0].to_string();
        if kappas.insert(id.clone(), num(4)?).is_some() {
            return Err(parse_err(i + 1, format!("duplicate id {id}")));
        }
        ensemble.push(Emitter::single(id, label, params));
    }
    Ok((ensemble, kappas))
}

/// Pretty JSON with a trailing newline.
pub fn to_json(value: &impl Serialize) -> Result<String, IoError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}
