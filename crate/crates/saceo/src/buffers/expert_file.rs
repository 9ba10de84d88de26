//! Expert observation file format, version 1.
//!
//! UTF-8 text, bit-exact round trip:
//!
//! ```text
//! SACEO-EXPERT v1 dim=<d>
//! TRAJ <length>
//! <v1>,<v2>,...,<vd>
//! ...
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! `load(save(d)) == d` exactly. Lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::ExpertDataset;
use crate::error::{Error, Result};

const MAGIC: &str = "SACEO-EXPERT v1";

pub fn save_expert_file(dataset: &ExpertDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} dim={}", dataset.dim());
    for traj in dataset.trajectories() {
        let _ = writeln!(out, "TRAJ {}", traj.len());
        for state in traj {
            for (i, v) in state.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Usage(
                        "refusing to save non-finite expert state".into(),
                    ));
                }
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_expert_file(path: &Path) -> Result<ExpertDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    // Line numbers are 1-based over the raw file, comments included.
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_no, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty file, expected header".into()))?;
    let dim = parse_header(header).ok_or_else(|| {
        err(
            header_no,
            format!("bad header '{header}', expected '{MAGIC} dim=<d>'"),
        )
    })?;

    let mut trajectories: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut pending: Option<(usize, usize)> = None; // (remaining states, declared at line)
    let mut current: Vec<Vec<f64>> = Vec::new();

    for (no, line) in lines {
        if let Some(rest) = line.strip_prefix("TRAJ") {
            if let Some((remaining, at)) = pending {
                if remaining > 0 {
                    return Err(err(
                        no,
                        format!(
                            "trajectory declared at line {at} still expects {remaining} state(s)"
                        ),
                    ));
                }
            }
            if !current.is_empty() || pending.is_some() {
                trajectories.push(std::mem::take(&mut current));
            }
            let count: usize = rest
                .trim()
                .parse()
                .map_err(|_| err(no, format!("bad trajectory length '{}'", rest.trim())))?;
            pending = Some((count, no));
            continue;
        }

        let Some((remaining, at)) = pending else {
            return Err(err(no, "state line before any TRAJ header".into()));
        };
        if remaining == 0 {
            return Err(err(
                no,
                format!("more states than the {at} TRAJ line declared"),
            ));
        }
        let mut state = Vec::with_capacity(dim);
        for cell in line.split(',') {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| err(no, format!("non-numeric cell '{}'", cell.trim())))?;
            if !v.is_finite() {
                return Err(err(no, format!("non-finite value '{}'", cell.trim())));
            }
            state.push(v);
        }
        if state.len() != dim {
            return Err(err(
                no,
                format!("row has {} value(s) but header declares dim={dim}", state.len()),
            ));
        }
        current.push(state);
        pending = Some((remaining - 1, at));
    }

    if let Some((remaining, at)) = pending {
        if remaining > 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: at,
                msg: format!("file ended with {remaining} state(s) missing"),
            });
        }
        trajectories.push(current);
    }

    ExpertDataset::new(dim, trajectories)
}

fn parse_header(line: &str) -> Option<usize> {
    let rest = line.strip_prefix(MAGIC)?.trim();
    let dim_str = rest.strip_prefix("dim=")?;
    let dim: usize = dim_str.parse().ok()?;
    (dim > 0).then_some(dim)
}
