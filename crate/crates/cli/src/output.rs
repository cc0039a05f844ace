//! Number formatting, atomic file writes and the trajectory table.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use hmpcc_core::dynamics::DynamicsModel;
use hmpcc_core::sim::SimLog;
use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

pub const SIGNIFICANT_DIGITS: usize = 9;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    let r: f64 = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("valid float");
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Shortest decimal text of `round_sig(x)`.
pub fn fmt_num(x: f64) -> String {
    format!("{}", round_sig(x))
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n
                .as_f64()
                .and_then(|x| serde_json::Number::from_f64(round_sig(x)))
            {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(m) => m.values_mut().for_each(round_value),
        _ => {}
    }
}

/// JSON with every float rounded; non-finite values become `null`.
pub fn to_json<T: Serialize>(value: &T, pretty: bool) -> String {
    let mut v = serde_json::to_value(value).expect("value is serializable");
    round_value(&mut v);
    let mut s = if pretty {
        serde_json::to_string_pretty(&v)
    } else {
        serde_json::to_string(&v)
    }
    .expect("value is serializable");
    s.push('\n');
    s
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub const TRAJECTORY_HEADER: &str = "t,id,kind,x,y,extra,u,status";

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(fmt_num)
        .collect::<Vec<_>>()
        .join(";")
}

/// One row per (step, agent) for the frames after the initial one. Robots
/// come first, then humans. `extra` holds the state beyond the position
/// (velocity or heading) and multi-valued cells are `;`-separated.
pub fn trajectory_csv(log: &SimLog) -> String {
    let model = log.scenario.model;
    let mut out = String::new();
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for frame in log.frames.iter().skip(1) {
        let t = fmt_num(frame.t);
        for (i, r) in frame.robots.iter().enumerate() {
            let extra = match model {
                DynamicsModel::SingleIntegrator => String::new(),
                _ => join(r.state.iter().skip(2).copied()),
            };
            let _ = writeln!(
                out,
                "{t},{i},robot,{},{},{extra},{},{}",
                fmt_num(r.state[0]),
                fmt_num(r.state[1]),
                join([r.input.x, r.input.y]),
                r.status()
            );
        }
        for (j, h) in frame.humans.iter().enumerate() {
            let _ = writeln!(
                out,
                "{t},{j},human,{},{},{},,",
                fmt_num(h.position.x),
                fmt_num(h.position.y),
                fmt_num(h.heading)
            );
        }
    }
    out
}
