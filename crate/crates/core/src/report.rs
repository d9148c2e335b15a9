//! report.json / pvalues.csv serialization with 17 significant digits.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::engine::AssessmentReport;
use crate::error::{Error, Result};

/// `x` with 17 significant digits, enough to round-trip any f64.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Pretty JSON whose floats are written with [`fmt17`].
struct Pretty17<'a>(PrettyFormatter<'a>);

impl Formatter for Pretty17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(fmt17(v).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(v))
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Pretty17(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Io(io::Error::other(e)))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn pvalues_csv(pvalues: &[f64]) -> String {
    let mut s = String::with_capacity(24 * (pvalues.len() + 1));
    s.push_str("pvalue\n");
    for p in pvalues {
        let _ = writeln!(s, "{}", fmt17(*p));
    }
    s
}

/// Writes `report.json` and `pvalues.csv` into `dir`.
pub fn write_report(dir: impl AsRef<Path>, report: &AssessmentReport) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), to_json(report)?)?;
    std::fs::write(dir.join("pvalues.csv"), pvalues_csv(&report.pvalues))?;
    Ok(())
}

/// Reads a report directory back; p-values come from `pvalues.csv` if present.
pub fn read_report(dir: impl AsRef<Path>) -> Result<AssessmentReport> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join("report.json"))?;
    let mut report: AssessmentReport =
        serde_json::from_str(&text).map_err(|e| Error::Validation(format!("report.json: {e}")))?;
    let csv_path = dir.join("pvalues.csv");
    if csv_path.exists() {
        let mut rd = csv::Reader::from_path(csv_path)?;
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let v = rec.get(0).unwrap_or("");
            report.pvalues.push(v.parse().map_err(|_| Error::Parse {
                row: i + 1,
                column: "pvalue".into(),
                message: format!("not a number: {v:?}"),
            })?);
        }
    }
    Ok(report)
}

/// Per-α table followed by the uniformity diagnostics.
pub fn render_table(report: &AssessmentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>8}  {:>8}  {:>8}", "alpha", "reject", "mc_se");
    for r in &report.rejection_rates {
        let _ = writeln!(s, "{:>8.4}  {:>8.4}  {:>8.4}", r.alpha, r.rate, r.mc_se);
    }
    let _ = writeln!(s, "max over-rejection  {:.4}", report.max_over_rejection);
    let _ = writeln!(s, "KS distance to U(0,1)  {:.4}", report.ks_uniform);
    let _ = writeln!(
        s,
        "replicates  {} of {} ({} failed)",
        report.reps - report.failures.count,
        report.reps,
        report.failures.count
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 0.0, 1e-300, 2.5e17, -7.25] {
            let s = fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17);
        }
        let j = to_json(&serde_json::json!({"a": [0.1, 2], "b": "x"})).unwrap();
        assert!(j.contains("1.0000000000000001e-1"));
        let v: serde_json::Value = serde_json::from_str(&j).unwrap();
        assert_eq!(v["a"][0].as_f64(), Some(0.1));
    }

    #[test]
    fn csv_header_and_rows() {
        let s = pvalues_csv(&[0.5, 0.25]);
        assert_eq!(s.lines().count(), 3);
        assert_eq!(s.lines().next(), Some("pvalue"));
    }
}
