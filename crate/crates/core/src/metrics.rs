//! Per-step training metrics and their CSV form.
//!
//! `grad_norm` is the norm of the undivided sum of clipped per-example
//! gradients, `noise_norm` the norm of the total noise injected in that step,
//! and `snr` their ratio. Norms are computed in `f64` regardless of training
//! precision.

use std::fmt::Write as _;
use std::path::Path;

use crate::dp_engine::l2_norm;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const CSV_HEADER: &str = "step,epoch,lr,loss,accuracy,grad_norm,noise_norm,snr,epsilon";

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-example loss over the step's batch.
    pub loss: f64,
    /// Held-out accuracy, present on the last step of each epoch.
    pub accuracy: Option<f64>,
    pub grad_norm: f64,
    pub noise_norm: f64,
    /// Absent when no noise is configured.
    pub snr: Option<f64>,
    pub epsilon: f64,
}

/// Step context that does not come from the gradient vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub epsilon: f64,
    pub noise_multiplier: f64,
}

/// Builds the record for one step. `noise_total` is `None` when no noise was
/// drawn (it then counts as a zero vector).
pub fn record_step<T: Scalar>(sum_clipped: &[T], noise_total: Option<&[T]>, ctx: StepContext) -> Result<RunRecord> {
    if let Some(noise) = noise_total {
        if noise.len() != sum_clipped.len() {
            return Err(Error::Internal(format!(
                "record_step: clipped sum has {} coordinates, noise has {}",
                sum_clipped.len(),
                noise.len()
            )));
        }
    }
    let grad_norm = l2_norm(sum_clipped);
    let noise_norm = noise_total.map_or(0.0, l2_norm);
    let snr = if ctx.noise_multiplier > 0.0 {
        Some(if noise_norm == 0.0 {
            f64::INFINITY
        } else {
            grad_norm / noise_norm
        })
    } else {
        None
    };
    Ok(RunRecord {
        step: ctx.step,
        epoch: ctx.epoch,
        lr: ctx.lr,
        loss: ctx.loss,
        accuracy: ctx.accuracy,
        grad_norm,
        noise_norm,
        snr,
        epsilon: ctx.epsilon,
    })
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed,
/// `inf`/`-inf`/`nan` spelled out.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

pub fn csv_row(r: &RunRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.step,
        r.epoch,
        format_float(r.lr),
        format_float(r.loss),
        opt(r.accuracy),
        format_float(r.grad_norm),
        format_float(r.noise_norm),
        opt(r.snr),
        format_float(r.epsilon),
    )
}

pub fn to_csv(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", csv_row(r));
    }
    out
}

/// Writes the header plus one row per record (UTF-8, LF line endings).
pub fn emit_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(records)).map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`emit_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(CSV_HEADER) => {}
        other => return Err(Error::Input(format!("unexpected run CSV header {other:?}"))),
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Input(format!("bad number `{s}`"))) };
    let opt_num = |s: &str| -> Result<Option<f64>> { if s.is_empty() { Ok(None) } else { num(s).map(Some) } };
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Input(format!("expected 9 fields, got {}: {line}", f.len())));
            }
            Ok(RunRecord {
                step: f[0].parse().map_err(|_| Error::Input(format!("bad step `{}`", f[0])))?,
                epoch: f[1].parse().map_err(|_| Error::Input(format!("bad epoch `{}`", f[1])))?,
                lr: num(f[2])?,
                loss: num(f[3])?,
                accuracy: opt_num(f[4])?,
                grad_norm: num(f[5])?,
                noise_norm: num(f[6])?,
                snr: opt_num(f[7])?,
                epsilon: num(f[8])?,
            })
        })
        .collect()
}
