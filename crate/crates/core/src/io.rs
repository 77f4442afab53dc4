//! File formats. Every float is written with 17 significant digits so that
//! it reads back to the same bits.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::family::{GeneralizedPolynomial, MeasurementFamily, SampleVector};
use crate::grid::ChartGrid;
use crate::guarantees::SpikeRecord;
use crate::noise::CalibrationRow;

/// `x` with 17 significant digits, in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Pretty JSON with fixed-precision floats.
struct Sig17<'a>(PrettyFormatter<'a>);

impl Formatter for Sig17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            w.write_all(format!("{value:.16e}").as_bytes())
        } else {
            // JSON has no infinities; readers see a missing value
            w.write_all(b"null")
        }
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
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

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// `samples.json`: the family fields, the noise level when known, and
/// `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesFile {
    #[serde(flatten)]
    pub family: MeasurementFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub values: Vec<Complex64>,
}

impl SamplesFile {
    pub fn new(y: &SampleVector, sigma: Option<f64>) -> Self {
        Self {
            family: y.family,
            sigma,
            values: y.values.clone(),
        }
    }

    pub fn samples(&self) -> Result<SampleVector> {
        SampleVector::new(self.family, self.values.clone())
    }
}

pub fn read_samples(path: &Path) -> Result<SamplesFile> {
    let f: SamplesFile = read_json(path)?;
    if f.values.len() != f.family.size() {
        return Err(Error::Config(format!(
            "{} holds {} values but the family needs {}",
            path.display(),
            f.values.len(),
            f.family.size()
        )));
    }
    Ok(f)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

pub const CALIBRATION_HEADER: &str = "u,analytic_bound,regime_valid,mc_exceedance,mc_low,mc_high,trials";

pub fn calibration_csv(rows: &[CalibrationRow]) -> String {
    let mut s = String::from(CALIBRATION_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            fmt_f64(r.u),
            fmt_f64(r.analytic_bound),
            r.regime_valid,
            fmt_f64(r.mc_exceedance),
            fmt_f64(r.mc_low),
            fmt_f64(r.mc_high),
            r.trials
        );
    }
    s
}

pub fn write_calibration_csv(path: &Path, rows: &[CalibrationRow]) -> Result<()> {
    write_text(path, &calibration_csv(rows))
}

pub const DUALPOLY_HEADER: &str = "x,|P(x)|,arg P(x)";

/// `|P|` and `arg P` on a uniform chart grid of `n` points.
pub fn dualpoly_csv(p: &GeneralizedPolynomial, n: usize) -> String {
    let grid = ChartGrid::new(p.family, n.max(2));
    let values = grid.evaluate(&p.chart_series());
    let mut s = String::from(DUALPOLY_HEADER);
    s.push('\n');
    let mut rows: Vec<(f64, Complex64)> = grid.points().into_iter().zip(values).collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (x, v) in rows {
        let _ = writeln!(s, "{},{},{}", fmt_f64(x), fmt_f64(v.norm()), fmt_f64(v.arg()));
    }
    s
}

pub fn write_dualpoly_csv(path: &Path, p: &GeneralizedPolynomial, n: usize) -> Result<()> {
    write_text(path, &dualpoly_csv(p, n))
}

pub const SPIKES_HEADER: &str = "spike_id,amplitude,threshold,radius,nearest_truth_distance,contained";

/// Empty cells mark quantities that do not apply (no radius below the
/// threshold, no truth supplied).
pub fn spikes_csv(records: &[SpikeRecord]) -> String {
    let mut s = String::from(SPIKES_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.spike_id,
            fmt_f64(r.amplitude),
            fmt_f64(r.threshold),
            fmt_opt(r.radius),
            fmt_opt(r.nearest_truth_distance),
            r.contained.map(|b| b.to_string()).unwrap_or_default()
        );
    }
    s
}

pub fn write_spikes_csv(path: &Path, records: &[SpikeRecord]) -> Result<()> {
    write_text(path, &spikes_csv(records))
}

/// Writes rows of preformatted cells under `header`.
pub fn write_rows(path: &Path, header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut s = String::from(header);
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    write_text(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{DiscreteMeasure, Domain};

    #[test]
    fn floats_round_trip_through_json() {
        let xs = vec![0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789, 0.0, f64::MIN_POSITIVE];
        let s = to_json_string(&xs).unwrap();
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(xs, back);
        assert!(s.contains("1.0000000000000001e-1") || s.contains("1.0000000000000000e-1"));
        // 17 significant digits for every float
        for tok in s.split(|c: char| c == ',' || c.is_whitespace() || c == '[' || c == ']') {
            if let Some((mant, _)) = tok.split_once('e') {
                assert_eq!(mant.trim_start_matches('-').replace('.', "").len(), 17, "{tok}");
            }
        }
    }

    #[test]
    fn measure_and_samples_round_trip() {
        let mu = DiscreteMeasure::new(Domain::Circle, [(0.25, 1.5, 0.3), (0.75, 2.0 / 3.0, 5.0)]).unwrap();
        let back: DiscreteMeasure = serde_json::from_str(&to_json_string(&mu).unwrap()).unwrap();
        assert_eq!(mu, back);
        let fam = MeasurementFamily::fourier(2).unwrap();
        let y = crate::forward(&mu, fam).unwrap();
        let f = SamplesFile::new(&y, Some(1.0));
        let back: SamplesFile = serde_json::from_str(&to_json_string(&f).unwrap()).unwrap();
        assert_eq!(back.samples().unwrap(), y);
    }

    #[test]
    fn csv_headers_match_interfaces() {
        let row = CalibrationRow {
            u: 1.0,
            analytic_bound: 0.5,
            regime_valid: true,
            mc_exceedance: 0.25,
            mc_low: 0.2,
            mc_high: 0.3,
            trials: 100,
        };
        let s = calibration_csv(&[row]);
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "u,analytic_bound,regime_valid,mc_exceedance,mc_low,mc_high,trials");
        assert_eq!(lines.next().unwrap().split(',').count(), 7);
        let fam = MeasurementFamily::chebyshev(3).unwrap();
        let p = GeneralizedPolynomial::new(fam, vec![Complex64::new(1.0, 0.0); 4]).unwrap();
        let d = dualpoly_csv(&p, 11);
        assert!(d.starts_with("x,|P(x)|,arg P(x)\n"));
        assert_eq!(d.lines().count(), 12);
    }
}
