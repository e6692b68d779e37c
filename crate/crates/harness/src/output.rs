//! CSV and JSON writers, and the reader for simulated trajectories.
//!
//! Floats are written with 17 significant digits so files round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gi_filter::linalg::Vector;
use gi_filter::ObservationEvent;
use serde::Serialize;
use serde_json::Value;

use crate::benchmark::BenchmarkSummary;
use crate::run::FilterTrack;
use crate::simulate::Trajectory;
use crate::{HarnessError, Result};

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(dim_x: usize, dim_y: usize, tracks: &[FilterTrack]) -> String {
    let mut cols = vec!["run".to_string(), "time".to_string()];
    cols.extend((0..dim_x).map(|i| format!("truth_{i}")));
    cols.extend((0..dim_y).map(|i| format!("obs_{i}")));
    for t in tracks {
        let k = t.kind.name();
        cols.extend((0..dim_x).map(|i| format!("{k}_est_{i}")));
        cols.push(format!("{k}_err"));
        cols.push(format!("{k}_status"));
    }
    cols.join(",")
}

/// One row per observation cycle; `tracks[run]` may be empty for
/// truth-and-observation output.
pub fn trajectory_csv(trajectories: &[Trajectory], tracks: &[Vec<FilterTrack>]) -> String {
    let first = trajectories.iter().find(|t| !t.is_empty());
    let dim_x = first.map_or(0, |t| t.truth[0].len());
    let dim_y = first.map_or(0, |t| t.observations[0].y.len());
    let empty = Vec::new();
    let mut out = header(dim_x, dim_y, tracks.first().unwrap_or(&empty));
    out.push('\n');
    for (run, traj) in trajectories.iter().enumerate() {
        let run_tracks = tracks.get(run).unwrap_or(&empty);
        for n in 0..traj.len() {
            let _ = write!(out, "{run},{}", float(traj.times[n]));
            for v in traj.truth[n].iter().chain(traj.observations[n].y.iter()) {
                let _ = write!(out, ",{}", float(*v));
            }
            for t in run_tracks {
                for v in t.estimates[n].iter() {
                    let _ = write!(out, ",{}", float(*v));
                }
                let _ = write!(out, ",{},{}", float(t.errors[n]), t.status[n].name());
            }
            out.push('\n');
        }
    }
    out
}

pub fn histogram_csv(summary: &BenchmarkSummary) -> String {
    let mut out = String::from("bin_left,bin_right");
    for s in &summary.filters {
        let _ = write!(out, ",count_{}", s.filter.name());
    }
    out.push('\n');
    for (b, w) in summary.bin_edges.windows(2).enumerate() {
        let _ = write!(out, "{},{}", float(w[0]), float(w[1]));
        for s in &summary.filters {
            let _ = write!(out, ",{}", s.histogram[b]);
        }
        out.push('\n');
    }
    out
}

/// Pretty JSON with every non-integer number at 17 significant digits.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |out: &mut String, n: usize| out.extend(std::iter::repeat_n(' ', 2 * n));
    match v {
        Value::Number(n) if n.is_f64() => out.push_str(&float(n.as_f64().unwrap_or(f64::NAN))),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(out, indent + 1);
                write_value(out, item, indent + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push_str("{\n");
            for (i, (k, item)) in map.iter().enumerate() {
                pad(out, indent + 1);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(out, item, indent + 1);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

/// Reads truth and observations back from a trajectory CSV; filter columns
/// are ignored. Returns one trajectory per `run` value.
pub fn read_trajectories(path: &Path, x0: &Vector) -> Result<Vec<Trajectory>> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let bad = |line: usize, msg: &str| HarnessError::Config(format!("{}:{line}: {msg}", path.display()));
    let mut lines = text.lines();
    let head: Vec<&str> = lines.next().ok_or_else(|| bad(1, "empty file"))?.split(',').collect();
    if head.len() < 2 || head[0] != "run" || head[1] != "time" {
        return Err(bad(1, "header must start with run,time"));
    }
    let truth_cols: Vec<usize> = (0..head.len()).filter(|&i| head[i].starts_with("truth_")).collect();
    let obs_cols: Vec<usize> = (0..head.len()).filter(|&i| head[i].starts_with("obs_")).collect();
    if truth_cols.is_empty() || obs_cols.is_empty() {
        return Err(bad(1, "missing truth_* or obs_* columns"));
    }
    let mut out: Vec<Trajectory> = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != head.len() {
            return Err(bad(lineno, "wrong number of fields"));
        }
        let num = |k: usize| fields[k].trim().parse::<f64>().map_err(|_| bad(lineno, "malformed number"));
        let run: usize = fields[0].trim().parse().map_err(|_| bad(lineno, "malformed run index"))?;
        if run > out.len() {
            return Err(bad(lineno, "run indices must be consecutive from 0"));
        }
        if run == out.len() {
            out.push(Trajectory {
                x0: x0.clone(),
                times: Vec::new(),
                truth: Vec::new(),
                observations: Vec::new(),
                truncated: false,
            });
        }
        let time = num(1)?;
        let truth = truth_cols.iter().map(|&k| num(k)).collect::<Result<Vec<_>>>()?;
        let y = obs_cols.iter().map(|&k| num(k)).collect::<Result<Vec<_>>>()?;
        let traj = &mut out[run];
        traj.times.push(time);
        traj.truth.push(Vector::from_vec(truth));
        traj.observations.push(ObservationEvent::new(time, Vector::from_vec(y))?);
    }
    Ok(out)
}
