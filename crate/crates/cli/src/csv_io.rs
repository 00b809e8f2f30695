//! CSV emission and parsing for simulation traces.
//!
//! Default formatting uses Rust's shortest round-trip float notation, so a
//! trace written at decimation 1 parses back exactly. Set
//! `SELFSYNC_CSV_DIGITS` to a digit count to emit fixed scientific notation
//! instead (for diff-friendly output at reduced precision).

use std::io::{BufRead, Write};

use anyhow::{bail, Context, Result};
use selfsync::simkit::{Trace, TraceRow};
use selfsync::supervisor::ControlMode;

pub const HEADER: &str = "t,i_alpha,i_beta,v_p_alpha,v_p_beta,v_p_hat_alpha,v_p_hat_beta,v_c,p,q,q_ref,p_i_actual,p_i_max,sat_i,sat_mu,mode";

/// Precision override from the environment; `None` means full round-trip.
pub fn precision_from_env() -> Option<usize> {
    std::env::var("SELFSYNC_CSV_DIGITS")
        .ok()
        .and_then(|v| v.parse().ok())
}

fn fmt(x: f64, digits: Option<usize>) -> String {
    match digits {
        Some(d) => format!("{x:.d$e}"),
        None => format!("{x}"),
    }
}

/// Write the trace, keeping every `decimate`-th row (1 = all rows).
pub fn write_trace<W: Write>(
    mut w: W,
    trace: &Trace,
    decimate: usize,
    digits: Option<usize>,
) -> Result<()> {
    let step = decimate.max(1);
    writeln!(w, "{HEADER}")?;
    for row in trace.rows.iter().step_by(step) {
        let f = |x: f64| fmt(x, digits);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            f(row.t),
            f(row.i_alpha),
            f(row.i_beta),
            f(row.v_p_alpha),
            f(row.v_p_beta),
            f(row.v_p_hat_alpha),
            f(row.v_p_hat_beta),
            f(row.v_c),
            f(row.p),
            f(row.q),
            f(row.q_ref),
            f(row.p_i_actual),
            f(row.p_i_max),
            row.sat_i as u8,
            row.sat_mu as u8,
            row.mode.name(),
        )?;
    }
    Ok(())
}

/// Parse a trace written by [`write_trace`].
#[cfg_attr(not(test), allow(dead_code))]
pub fn read_trace<R: BufRead>(r: R) -> Result<Trace> {
    let mut lines = r.lines();
    let header = lines.next().context("empty CSV")??;
    if header.trim() != HEADER {
        bail!("unexpected CSV header: {header}");
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 16 {
            bail!("line {}: expected 16 fields, found {}", n + 2, fields.len());
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .with_context(|| format!("line {}: bad number `{}`", n + 2, fields[i]))
        };
        let flag = |i: usize| -> Result<bool> {
            Ok(match fields[i] {
                "0" => false,
                "1" => true,
                other => bail!("line {}: bad flag `{other}`", n + 2),
            })
        };
        rows.push(TraceRow {
            t: num(0)?,
            i_alpha: num(1)?,
            i_beta: num(2)?,
            v_p_alpha: num(3)?,
            v_p_beta: num(4)?,
            v_p_hat_alpha: num(5)?,
            v_p_hat_beta: num(6)?,
            v_c: num(7)?,
            p: num(8)?,
            q: num(9)?,
            q_ref: num(10)?,
            p_i_actual: num(11)?,
            p_i_max: num(12)?,
            sat_i: flag(13)?,
            sat_mu: flag(14)?,
            mode: fields[15].parse::<ControlMode>()?,
        });
    }
    let dt = if rows.len() >= 2 {
        rows[1].t - rows[0].t
    } else {
        0.0
    };
    Ok(Trace { dt, rows })
}
