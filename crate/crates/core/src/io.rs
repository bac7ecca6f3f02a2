//! File formats: the JSON system file and the CSV outputs.
//!
//! System file keys:
//!
//! | key | type | notes |
//! |-----|------|-------|
//! | `n` | integer | number of matter/antimatter pairs |
//! | `energies` | `2n` numbers | order `-n..-1, +1..+n` |
//! | `V_real`, `V_imag` | `2n x 2n` numbers | row-major, nested rows or flat |
//! | `lambda` | number | coupling strength |
//! | `phases_re`, `phases_im` | `2n` numbers | optional, default `1 + 0i` |
//! | `symmetry` | string | `none`, `cp`, `cpt` or `both` |
//!
//! All CSV numbers are written with 17 significant digits.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::microsim::IntervalDiagnostic;
use crate::solver::Trajectory;
use crate::system::{build_system, RawSystem, StateIndex, SymmetryClass, SystemError, SystemSpec};
use crate::{Complex64, RMatrix};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("missing key `{0}`")]
    Missing(&'static str),
    #[error("key `{key}`: {msg}")]
    Key { key: &'static str, msg: String },
    #[error(transparent)]
    System(#[from] SystemError),
}

fn key_err(key: &'static str, msg: impl Into<String>) -> IoError {
    IoError::Key { key, msg: msg.into() }
}

fn number(key: &'static str, v: &Value) -> Result<f64, IoError> {
    v.as_f64().ok_or_else(|| key_err(key, format!("expected a number, got {v}")))
}

fn numbers(key: &'static str, v: &Value, len: usize) -> Result<Vec<f64>, IoError> {
    let arr = v.as_array().ok_or_else(|| key_err(key, "expected an array"))?;
    if arr.len() != len {
        return Err(key_err(key, format!("expected {len} entries, got {}", arr.len())));
    }
    arr.iter().map(|x| number(key, x)).collect()
}

/// Accepts nested rows or a flat row-major array.
fn square(key: &'static str, v: &Value, dim: usize) -> Result<Vec<f64>, IoError> {
    let arr = v.as_array().ok_or_else(|| key_err(key, "expected an array"))?;
    if arr.first().is_some_and(Value::is_array) {
        if arr.len() != dim {
            return Err(key_err(key, format!("expected {dim} rows, got {}", arr.len())));
        }
        let mut out = Vec::with_capacity(dim * dim);
        for (r, row) in arr.iter().enumerate() {
            let row = row.as_array().ok_or_else(|| key_err(key, format!("row {r} is not an array")))?;
            if row.len() != dim {
                return Err(key_err(key, format!("row {r} has {} entries, expected {dim}", row.len())));
            }
            for x in row {
                out.push(number(key, x)?);
            }
        }
        Ok(out)
    } else {
        numbers(key, v, dim * dim)
    }
}

fn get<'a>(obj: &'a serde_json::Map<String, Value>, key: &'static str) -> Result<&'a Value, IoError> {
    obj.get(key).ok_or(IoError::Missing(key))
}

const KEYS: [&str; 8] = ["n", "energies", "V_real", "V_imag", "lambda", "phases_re", "phases_im", "symmetry"];

/// Parses a system document into a [`RawSystem`] (not yet validated).
pub fn parse_system(text: &str, path: &Path) -> Result<RawSystem, IoError> {
    let doc: Value =
        serde_json::from_str(text).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    let obj = doc.as_object().ok_or_else(|| key_err("n", "document is not a JSON object"))?;
    if let Some(k) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(IoError::Key { key: "(document)", msg: format!("unknown key `{k}`") });
    }
    let n = get(obj, "n")?.as_u64().filter(|&n| n >= 1).ok_or_else(|| key_err("n", "expected a positive integer"))?
        as usize;
    let dim = 2 * n;
    let energies = numbers("energies", get(obj, "energies")?, dim)?;
    let re = square("V_real", get(obj, "V_real")?, dim)?;
    let im = square("V_imag", get(obj, "V_imag")?, dim)?;
    let v = DMatrix::from_row_iterator(dim, dim, re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)));
    let lambda = number("lambda", get(obj, "lambda")?)?;
    let phases = match (obj.get("phases_re"), obj.get("phases_im")) {
        (None, None) => None,
        (pr, pi) => {
            let pr = match pr {
                Some(v) => numbers("phases_re", v, dim)?,
                None => vec![1.0; dim],
            };
            let pi = match pi {
                Some(v) => numbers("phases_im", v, dim)?,
                None => vec![0.0; dim],
            };
            Some(pr.into_iter().zip(pi).map(|(a, b)| Complex64::new(a, b)).collect())
        }
    };
    let symmetry = match obj.get("symmetry") {
        None => SymmetryClass::None,
        Some(v) => v
            .as_str()
            .ok_or_else(|| key_err("symmetry", "expected a string"))?
            .parse::<SymmetryClass>()
            .map_err(|e| key_err("symmetry", e))?,
    };
    Ok(RawSystem { energies, v, lambda, phases, symmetry })
}

pub fn read_system(path: &Path) -> Result<SystemSpec, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    Ok(build_system(parse_system(&text, path)?)?)
}

#[derive(Serialize)]
struct SystemFile<'a> {
    n: usize,
    energies: &'a [f64],
    #[serde(rename = "V_real")]
    v_real: Vec<Vec<f64>>,
    #[serde(rename = "V_imag")]
    v_imag: Vec<Vec<f64>>,
    lambda: f64,
    phases_re: Vec<f64>,
    phases_im: Vec<f64>,
    symmetry: SymmetryClass,
}

/// Serializes a system; the output round-trips bit-for-bit through
/// [`parse_system`].
pub fn system_to_string(sys: &SystemSpec) -> String {
    let dim = sys.dim();
    let v = sys.v();
    let rows = |f: fn(&Complex64) -> f64| (0..dim).map(|r| (0..dim).map(|c| f(&v[(r, c)])).collect()).collect();
    let file = SystemFile {
        n: sys.n(),
        energies: sys.energies(),
        v_real: rows(|z| z.re),
        v_imag: rows(|z| z.im),
        lambda: sys.lambda(),
        phases_re: sys.phases().iter().map(|z| z.re).collect(),
        phases_im: sys.phases().iter().map(|z| z.im).collect(),
        symmetry: sys.symmetry(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("plain data serializes");
    s.push('\n');
    s
}

/// Writes `path` through `path.partial`, renamed only after `body` succeeds.
/// On failure the `.partial` file is left behind.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<(), IoError>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let partial = partial_path(path);
    let wrap = |source| IoError::Io { path: partial.clone(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    }
    let mut out = BufWriter::new(File::create(&partial).map_err(wrap)?);
    body(&mut out).map_err(wrap)?;
    out.flush().map_err(wrap)?;
    drop(out);
    fs::rename(&partial, path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

pub fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

pub fn write_system(path: &Path, sys: &SystemSpec) -> Result<(), IoError> {
    let text = system_to_string(sys);
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

fn labels(n: usize) -> impl Iterator<Item = String> {
    (0..2 * n).map(move |i| StateIndex::from_storage(i, n).label())
}

pub fn trajectory_header(n: usize) -> String {
    let mut h = String::from("t");
    for l in labels(n) {
        h.push_str(",p_");
        h.push_str(&l);
    }
    h.push_str(",S,E");
    h
}

pub fn write_trajectory_csv(w: &mut dyn Write, traj: &Trajectory) -> std::io::Result<()> {
    let n = traj.first().p.len() / 2;
    writeln!(w, "{}", trajectory_header(n))?;
    for s in &traj.samples {
        write!(w, "{:.16e}", s.t)?;
        for p in &s.p {
            write!(w, ",{p:.16e}")?;
        }
        writeln!(w, ",{:.16e},{:.16e}", s.entropy, s.energy)?;
    }
    for e in &traj.events {
        writeln!(w, "# event, {}, {:.16e}, {}", e.kind, e.t_event, e.state)?;
    }
    Ok(())
}

/// Square matrix with signed labels on both axes.
pub fn write_matrix_csv(w: &mut dyn Write, m: &RMatrix) -> std::io::Result<()> {
    let n = m.nrows() / 2;
    let header: Vec<String> = labels(n).collect();
    writeln!(w, "state,{}", header.join(","))?;
    for (r, label) in labels(n).enumerate() {
        write!(w, "{label}")?;
        for c in 0..m.ncols() {
            write!(w, ",{:.16e}", m[(r, c)])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_diagnostics_csv(w: &mut dyn Write, diag: &[IntervalDiagnostic]) -> std::io::Result<()> {
    writeln!(w, "interval,bc_residual,weight_min,cond_Uaa")?;
    for d in diag {
        writeln!(w, "{},{:.16e},{:.16e},{:.16e}", d.interval, d.bc_residual, d.weight_min, d.cond_uaa)?;
    }
    Ok(())
}

/// Reads the numeric rows of a trajectory CSV back (event lines skipped).
pub fn read_trajectory_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split(',').map(|x| x.trim().parse().unwrap_or(f64::NAN)).collect())
        .collect()
}
