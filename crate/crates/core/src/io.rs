//! Text formats for solved fields, checkpoints, simulation summaries and
//! path dumps. Every file starts with a `#` provenance line.
//!
//! Fields are written as `s,x,w,V,q_star` rows in lexicographic `(i, j, k)`
//! order with 17 significant digits, which round-trips `f64` exactly.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::hjb::{Checkpoint, Grid, PolicyField, SolverConfig, ValueField};
use crate::model::{ModelParams, PolicyTable, State};
use crate::simulator::{EstimateCI, PathRecord};

pub const FIELD_HEADER: &str = "s,x,w,V,q_star";
pub const SUMMARY_HEADER: &str = "s,x,w,policy,mean,std_error,n_paths,seed";
pub const PATH_HEADER: &str = "path_id,event_type,t,x,w,q,claim_size";

/// Tolerance for matching coordinates read back from a file to grid nodes.
const COORD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Provenance { version: crate::VERSION.to_string(), config_hash: config_hash.into() }
    }

    pub fn line(&self) -> String {
        format!("# ruin-core {} config_sha256={}", self.version, self.config_hash)
    }
}

/// `f64` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io { path: "<stream>".into(), source: e }
}

/// Writes slices `from..=n_s` of a solved field.
pub fn write_field<W: Write>(
    out: &mut W,
    prov: &Provenance,
    value: &ValueField,
    policy: &PolicyField,
    from: usize,
) -> Result<()> {
    let g = &value.grid;
    writeln!(out, "{}", prov.line()).map_err(io_err)?;
    writeln!(out, "{FIELD_HEADER}").map_err(io_err)?;
    for i in from..=g.n_s {
        write_slice_rows(out, g, i, &value.slices[i], |n| policy.retention(policy.slices[i][n]))?;
    }
    Ok(())
}

/// Rows of one slice; `q_at` maps a flat slice index to its retention.
pub fn write_slice_rows<W: Write>(
    out: &mut W,
    g: &Grid,
    i: usize,
    values: &[f64],
    q_at: impl Fn(usize) -> f64,
) -> Result<()> {
    let s = fmt_f64(g.s(i));
    for j in 0..=g.n_x {
        let x = fmt_f64(g.x(j));
        for k in 0..=i {
            let n = g.index(j, k);
            writeln!(
                out,
                "{s},{x},{},{},{}",
                fmt_f64(g.w(k)),
                fmt_f64(values[n]),
                fmt_f64(q_at(n))
            )
            .map_err(io_err)?;
        }
    }
    Ok(())
}

/// Writes the given slices, which must be in increasing slice order, with
/// retentions stored as indices into an `n_q` point grid.
pub fn write_slices<W: Write>(
    out: &mut W,
    prov: &Provenance,
    g: &Grid,
    n_q: usize,
    slices: &[(usize, Vec<f64>, Vec<u16>)],
) -> Result<()> {
    writeln!(out, "{}", prov.line()).map_err(io_err)?;
    writeln!(out, "{FIELD_HEADER}").map_err(io_err)?;
    let last = (n_q - 1) as f64;
    for (i, values, policy) in slices {
        write_slice_rows(out, g, *i, values, |n| policy[n] as f64 / last)?;
    }
    Ok(())
}

type Row = [f64; 5];

fn read_rows<R: BufRead>(input: R) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(io_err)?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != FIELD_HEADER {
                return Err(Error::Format {
                    line: n + 1,
                    msg: format!("expected header `{FIELD_HEADER}`, found `{line}`"),
                });
            }
            seen_header = true;
            continue;
        }
        let mut row = [0.0; 5];
        let mut parts = line.split(',');
        for slot in row.iter_mut() {
            let field = parts.next().ok_or_else(|| Error::Format {
                line: n + 1,
                msg: "expected 5 columns".into(),
            })?;
            *slot = field.trim().parse().map_err(|_| Error::Format {
                line: n + 1,
                msg: format!("not a number: `{field}`"),
            })?;
        }
        if parts.next().is_some() {
            return Err(Error::Format { line: n + 1, msg: "expected 5 columns".into() });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Splits rows into slices `from..=to`, checking coordinates against the grid.
fn slices_from_rows(rows: &[Row], g: &Grid, from: usize, to: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let expected: usize = (from..=to).map(|i| g.slice_len(i)).sum();
    if rows.len() != expected {
        return Err(Error::Format {
            line: 0,
            msg: format!("found {} rows, grid expects {expected}", rows.len()),
        });
    }
    let mut values = Vec::new();
    let mut policy = Vec::new();
    let mut it = rows.iter().enumerate();
    for i in from..=to {
        let mut v = vec![0.0; g.slice_len(i)];
        let mut q = vec![0.0; g.slice_len(i)];
        for j in 0..=g.n_x {
            for k in 0..=i {
                let (n, r) = it.next().expect("row count checked");
                let close = |a: f64, b: f64| (a - b).abs() <= COORD_TOL * (1.0 + b.abs());
                if !(close(r[0], g.s(i)) && close(r[1], g.x(j)) && close(r[2], g.w(k))) {
                    return Err(Error::Format {
                        line: n + 1,
                        msg: format!("row ({}, {}, {}) does not match node ({i}, {j}, {k})", r[0], r[1], r[2]),
                    });
                }
                v[g.index(j, k)] = r[3];
                q[g.index(j, k)] = r[4];
            }
        }
        values.push(v);
        policy.push(q);
    }
    Ok((values, policy))
}

/// Reads a complete field; the grid resolution is inferred from the rows.
pub fn read_field<R: BufRead>(input: R, params: &ModelParams) -> Result<(ValueField, PolicyTable)> {
    let rows = read_rows(input)?;
    let first_s = rows.first().map(|r| r[0]).ok_or_else(|| Error::Format {
        line: 0,
        msg: "field file has no rows".into(),
    })?;
    // slice 0 has a single w column, so its row count is n_x + 1
    let n_x = rows.iter().take_while(|r| r[0] == first_s).count() - 1;
    let mut n_s = 0;
    let mut last = f64::NAN;
    for r in &rows {
        if r[0] != last {
            n_s += 1;
            last = r[0];
        }
    }
    let grid = Grid::new(params, n_s - 1, n_x)?;
    let (values, q) = slices_from_rows(&rows, &grid, 0, grid.n_s)?;
    let table = PolicyTable::new(grid, *params, q)?;
    Ok((ValueField { grid, slices: values }, table))
}

/// Reads a contiguous run of slices written by [`write_slices`]. The range is
/// inferred from the first and last rows; resuming needs runs that together
/// reach the terminal slice.
pub fn read_checkpoint<R: BufRead>(input: R, params: &ModelParams, cfg: &SolverConfig) -> Result<Checkpoint> {
    let rows = read_rows(input)?;
    let grid = Grid::new(params, cfg.n_s, cfg.n_x)?;
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => (a[0], b[0]),
        _ => return Err(Error::Format { line: 0, msg: "checkpoint has no rows".into() }),
    };
    let start = (first / grid.ds).round() as usize;
    let end = (last / grid.ds).round() as usize;
    if end > grid.n_s || start > end {
        return Err(Error::Format {
            line: 0,
            msg: format!("checkpoint times {first}..{last} do not fit the grid"),
        });
    }
    let (values, q) = slices_from_rows(&rows, &grid, start, end)?;
    let last = (cfg.n_q - 1) as f64;
    let policy = q
        .into_iter()
        .map(|slice| slice.into_iter().map(|v| (v * last).round() as u16).collect())
        .collect();
    Ok(Checkpoint { start, values, policy })
}

pub fn write_summary_header<W: Write>(out: &mut W, prov: &Provenance) -> Result<()> {
    writeln!(out, "{}", prov.line()).map_err(io_err)?;
    writeln!(out, "{SUMMARY_HEADER}").map_err(io_err)
}

pub fn write_summary_row<W: Write>(out: &mut W, init: &State, policy: &str, est: &EstimateCI) -> Result<()> {
    writeln!(
        out,
        "{},{},{},{policy},{},{},{},{}",
        fmt_f64(init.s),
        fmt_f64(init.x),
        fmt_f64(init.w),
        fmt_f64(est.mean),
        fmt_f64(est.std_error),
        est.n_paths,
        est.seed
    )
    .map_err(io_err)
}

pub fn write_path_header<W: Write>(out: &mut W, prov: &Provenance) -> Result<()> {
    writeln!(out, "{}", prov.line()).map_err(io_err)?;
    writeln!(out, "{PATH_HEADER}").map_err(io_err)
}

pub fn write_path_events<W: Write>(out: &mut W, path_id: u64, rec: &PathRecord) -> Result<()> {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for e in &rec.events {
        writeln!(
            out,
            "{path_id},{},{},{},{},{},{}",
            e.kind.as_str(),
            fmt_f64(e.t),
            fmt_f64(e.x),
            fmt_f64(e.w),
            opt(e.q),
            opt(e.claim_size)
        )
        .map_err(io_err)?;
    }
    Ok(())
}
