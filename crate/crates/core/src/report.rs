//! Plot-ready TSV reports.
//!
//! Every numeric cell goes through the same significant-digit
//! formatter, and every report carries its resolved configuration as
//! `#`-prefixed preamble lines, so byte-identical output for identical
//! inputs only has to be proven once.

use std::fmt;
use std::io::{self, Write};

use crate::estimands::EffectEstimate;
use crate::infectiousness::SweepRow;
use crate::num::Real;

pub const DEFAULT_DIGITS: usize = 6;

/// Formats with `digits` significant digits: fixed notation in a
/// central exponent window, scientific outside it. Zero is `0`, NaN is
/// `NA`, infinities are `inf`/`-inf`.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if x.is_nan() {
        return "NA".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // Rounding to the target digit count can carry into the next
    // decade (9.9995 -> 10.0), so take the exponent from the rounded
    // scientific form rather than from log10 of the raw value.
    let sci = format!("{:.*e}", digits - 1, x);
    let exp: i32 = sci[sci.find('e').expect("scientific format") + 1..]
        .parse()
        .expect("exponent digits");
    if exp < -4 || exp >= digits as i32 {
        sci
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        format!("{:.*}", decimals, x)
    }
}

pub fn num_cell<R: Real>(x: R, digits: usize) -> String {
    fmt_sig(x.as_f64(), digits)
}

/// `NA` for absent values, so downstream tools see a constant column
/// count.
pub fn opt_cell<R: Real>(x: Option<R>, digits: usize) -> String {
    x.map_or_else(|| "NA".into(), |v| num_cell(v, digits))
}

/// A rectangular TSV table with a `#` comment preamble.
#[derive(Debug, Clone)]
pub struct Report {
    notes: Vec<(String, String)>,
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Report {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Report {
            notes: Vec::new(),
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    /// Adds a provenance line, emitted as `# key = value`.
    pub fn note(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.notes.push((key.into(), value.to_string()));
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "ragged report row");
        self.rows.push(row);
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for (k, v) in &self.notes {
            writeln!(w, "# {k} = {v}")?;
        }
        writeln!(w, "{}", self.columns.join("\t"))?;
        for row in &self.rows {
            writeln!(w, "{}", row.join("\t"))?;
        }
        Ok(())
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        f.write_str(std::str::from_utf8(&buf).expect("reports are utf-8"))
    }
}

/// The effect-estimate table. `per_1000` rescales points and interval
/// ends by 1000 and variances by 1000 squared; estimation is always on
/// raw rates, this is presentation only.
pub fn effects_report<R: Real>(
    estimates: &[EffectEstimate<R>],
    per_1000: bool,
    digits: usize,
) -> Report {
    let mut rep = Report::new([
        "contrast",
        "point",
        "variance",
        "ci_low",
        "ci_high",
        "convention",
        "units",
    ]);
    let (scale, units) = if per_1000 {
        (R::of(1000.0), "per_1000")
    } else {
        (R::one(), "rate")
    };
    for e in estimates {
        rep.push(vec![
            e.contrast.clone(),
            num_cell(e.point * scale, digits),
            opt_cell(e.variance.map(|v| v * scale * scale), digits),
            opt_cell(e.ci.map(|(lo, _)| lo * scale), digits),
            opt_cell(e.ci.map(|(_, hi)| hi * scale), digits),
            e.convention.name().into(),
            units.into(),
        ]);
    }
    rep
}

/// The sensitivity-sweep table for household studies. Out-of-range
/// rows keep their parameter value with `NA` effects and
/// `in_range = false`.
pub fn sweep_report<R: Real>(rows: &[SweepRow<R>], digits: usize) -> Report {
    let mut rep = Report::new([
        "kind", "param", "p_v", "p_u", "rd", "rr", "or_", "efficacy", "in_range",
    ]);
    for row in rows {
        let e = row.effect.as_ref();
        rep.push(vec![
            row.kind.name().into(),
            num_cell(row.param, digits),
            opt_cell(e.map(|e| e.p_v), digits),
            opt_cell(e.map(|e| e.p_u), digits),
            opt_cell(e.map(|e| e.risk_difference()), digits),
            opt_cell(e.and_then(|e| e.risk_ratio()), digits),
            opt_cell(e.and_then(|e| e.odds_ratio()), digits),
            opt_cell(e.and_then(|e| e.efficacy()), digits),
            (if row.in_range() { "true" } else { "false" }).into(),
        ]);
    }
    rep
}
