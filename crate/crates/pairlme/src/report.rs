//! Number formatting and the parameter CSV shared by `fit`, `bootstrap` and `combine`.

use std::io::{Read, Write};

use crate::error::{CliError, CliResult};

/// Six significant digits, trailing zeros trimmed.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NA".into()
        } else if x > 0.0 {
            "Inf".into()
        } else {
            "-Inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // Rounding can carry into a new digit (999999.5 -> 1000000).
        if s.trim_start_matches('-').split('.').next().map_or(0, str::len) > 6 {
            return sig6_exp(x);
        }
        trim_zeros(s)
    } else {
        sig6_exp(x)
    }
}

fn sig6_exp(x: f64) -> String {
    let s = format!("{x:.5e}");
    let (m, e) = s.split_once('e').unwrap_or((&s, "0"));
    format!("{}e{e}", trim_zeros(m.to_string()))
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn full(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x:?}")
    }
}

/// One estimated parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRow {
    pub estimator: String,
    pub parameter: String,
    pub estimate: f64,
    pub se: Option<f64>,
}

pub const PARAM_HEADER: [&str; 4] = ["estimator", "parameter", "estimate", "se"];

pub fn write_params<W: Write>(out: W, rows: &[ParamRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PARAM_HEADER)?;
    for r in rows {
        let se = r.se.map(full).unwrap_or_default();
        w.write_record([r.estimator.as_str(), r.parameter.as_str(), &full(r.estimate), &se])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_num(s: &str, line: u64, col: &str) -> CliResult<f64> {
    if s == "NA" {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| CliError::user(format!("non-numeric `{col}` value `{s}` at line {line}")))
}

pub fn read_params<R: Read>(input: R) -> CliResult<Vec<ParamRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 4 || header[..4] != PARAM_HEADER {
        return Err(CliError::user(format!("expected columns {}", PARAM_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let se = match rec.get(3).unwrap_or("") {
            "" => None,
            s => Some(parse_num(s, line, "se")?),
        };
        rows.push(ParamRow {
            estimator: rec[0].to_string(),
            parameter: rec[1].to_string(),
            estimate: parse_num(&rec[2], line, "estimate")?,
            se,
        });
    }
    Ok(rows)
}

/// Left-aligned first column, right-aligned rest.
pub fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let ncol = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (c, cell) in r.iter().enumerate().take(ncol) {
            width[c] = width[c].max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        for (c, cell) in cells.iter().enumerate() {
            if c == 0 {
                out.push_str(&format!("{cell:<w$}", w = width[0]));
            } else {
                out.push_str(&format!("  {cell:>w$}", w = width[c]));
            }
        }
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}
