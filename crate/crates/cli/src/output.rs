use std::io::Write;

use ntkms_core::kms::StateValue;
use ntkms_core::verify::CheckReport;
use ntkms_core::Complex64;

use crate::config::Format;
use crate::error::AppError;

fn io(e: impl std::fmt::Display) -> AppError {
    AppError::Usage(format!("cannot write output: {e}"))
}

/// `re±im i` with 17 significant digits.
pub fn complex(z: Complex64) -> String {
    let sign = if z.im < 0.0 { '-' } else { '+' };
    format!("{:.16e}{}{:.16e}i", z.re + 0.0, sign, z.im.abs())
}

pub fn real(x: f64) -> String {
    format!("{:.16e}", x + 0.0)
}

pub fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(out)
}

pub fn csv_row<W: Write>(w: &mut csv::Writer<W>, row: &[String]) -> Result<(), AppError> {
    w.write_record(row).map_err(io)
}

pub fn finish_csv<W: Write>(w: csv::Writer<W>) -> Result<(), AppError> {
    w.into_inner().map_err(io)?.flush().map_err(io)
}

/// One CSV record, flushed immediately.
pub fn csv_line(out: &mut impl Write, row: &[String]) -> Result<(), AppError> {
    let mut w = csv_writer(out);
    csv_row(&mut w, row)?;
    finish_csv(w)
}

pub fn line(out: &mut impl Write, text: &str) -> Result<(), AppError> {
    writeln!(out, "{text}").map_err(io)
}

pub fn state(out: &mut impl Write, format: Format, v: &StateValue) -> Result<(), AppError> {
    match format {
        Format::Json => line(out, &serde_json::to_string(v).expect("state serializes")),
        Format::Csv => {
            let mut w = csv_writer(out);
            csv_row(&mut w, &["value".into(), "tail".into(), "truncation".into()])?;
            csv_row(&mut w, &[complex(v.value), real(v.tail), v.truncation.to_string()])?;
            finish_csv(w)
        }
    }
}

pub const REPORT_COLUMNS: [&str; 7] = ["name", "seed", "samples", "max_deviation", "tolerance", "passed", "witness"];

pub fn report_row(r: &CheckReport) -> Vec<String> {
    vec![
        r.name.clone(),
        r.seed.map(|s| s.to_string()).unwrap_or_default(),
        r.samples.to_string(),
        real(r.max_deviation),
        real(r.tolerance),
        r.passed.to_string(),
        r.witness.as_ref().map(|w| w.to_string()).unwrap_or_default(),
    ]
}

/// Human-readable table of reports.
pub fn summary(err: &mut impl Write, reports: &[CheckReport]) -> Result<(), AppError> {
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    writeln!(err, "{:<width$}  {:>7}  {:>10}  {:>10}  result", "check", "samples", "deviation", "tolerance").map_err(io)?;
    for r in reports {
        writeln!(
            err,
            "{:<width$}  {:>7}  {:>10.3e}  {:>10.3e}  {}",
            r.name,
            r.samples,
            r.max_deviation,
            r.tolerance,
            if r.passed { "pass" } else { "FAIL" }
        )
        .map_err(io)?;
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    writeln!(err, "{} checks, {} failed", reports.len(), failed).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_format() {
        assert_eq!(complex(Complex64::new(0.125, 0.0)), "1.2500000000000000e-1+0.0000000000000000e0i");
        assert_eq!(complex(Complex64::new(-1.0, -2.5)), "-1.0000000000000000e0-2.5000000000000000e0i");
        assert_eq!(complex(Complex64::new(-0.0, -0.0)), "0.0000000000000000e0+0.0000000000000000e0i");
        let z = Complex64::new(std::f64::consts::PI, 1.0 / 3.0);
        let s = complex(z);
        let (re, im) = s.trim_end_matches('i').split_at(s.find("+").unwrap());
        assert_eq!(re.parse::<f64>().unwrap(), z.re);
        assert_eq!(im[1..].parse::<f64>().unwrap(), z.im);
    }
}
