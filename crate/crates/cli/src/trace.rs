//! Trace CSV.
//!
//! Header row, then one row per record. Columns, in order:
//!
//! - `t` (seconds)
//! - per device N: `derN_x_sp`, `derN_x_sp_prime`, `derN_x`, `derN_e`,
//!   `derN_e_pred`, `derN_queued`, `derN_delivered`
//! - `pcc`
//! - per device N, per carrier C: `derN_cqiC`
//!
//! Real values are written with 9 significant digits, so a written trace
//! reads back to exactly the values it was written from.

use std::io::{Read, Write};

use grid5g_core::engine::{DerSample, TraceRecord};

use crate::error::{CliError, Result};

const DER_FIELDS: [&str; 7] = ["x_sp", "x_sp_prime", "x", "e", "e_pred", "queued", "delivered"];

/// Rounds to 9 significant digits.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

pub fn fmt_sig9(x: f64) -> String {
    let r = round_sig9(x);
    if r == 0.0 {
        "0".to_string()
    } else {
        format!("{r:?}")
    }
}

pub fn header(n_ders: usize, carriers: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for d in 1..=n_ders {
        cols.extend(DER_FIELDS.iter().map(|f| format!("der{d}_{f}")));
    }
    cols.push("pcc".into());
    for d in 1..=n_ders {
        cols.extend((1..=carriers).map(|c| format!("der{d}_cqi{c}")));
    }
    cols
}

/// A trace as read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub n_ders: usize,
    pub carriers: usize,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(n_ders: usize, carriers: usize, records: Vec<TraceRecord>) -> Self {
        Self {
            n_ders,
            carriers,
            records,
        }
    }

    /// `(t, value)` pairs of a real-valued column such as `pcc` or `der2_x`.
    pub fn column(&self, name: &str) -> Result<Vec<(f64, f64)>> {
        let pick: Box<dyn Fn(&TraceRecord) -> f64> = if name == "pcc" {
            Box::new(|r| r.pcc)
        } else {
            let (der, field) = name
                .strip_prefix("der")
                .and_then(|rest| rest.split_once('_'))
                .and_then(|(n, f)| Some((n.parse::<usize>().ok()?, f)))
                .filter(|(n, _)| (1..=self.n_ders).contains(n))
                .ok_or_else(|| CliError::Usage(format!("no column {name:?} in trace")))?;
            let i = der - 1;
            match field {
                "x_sp" => Box::new(move |r| r.ders[i].x_sp),
                "x_sp_prime" => Box::new(move |r| r.ders[i].x_sp_prime),
                "x" => Box::new(move |r| r.ders[i].x),
                "e" => Box::new(move |r| r.ders[i].e),
                "e_pred" => Box::new(move |r| r.ders[i].e_pred),
                _ => return Err(CliError::Usage(format!("no real-valued column {name:?} in trace"))),
            }
        };
        Ok(self.records.iter().map(|r| (r.t, pick(r))).collect())
    }

    /// Spacing of the first two records.
    pub fn sample_period(&self) -> Option<f64> {
        match self.records.as_slice() {
            [a, b, ..] => Some(b.t - a.t),
            _ => None,
        }
    }

    pub fn end_time(&self) -> Option<f64> {
        self.records.last().map(|r| r.t)
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        write_csv(&mut buf, self.n_ders, self.carriers, &self.records).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

pub fn write_csv<W: Write>(w: W, n_ders: usize, carriers: usize, records: &[TraceRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| CliError::Runtime(format!("writing trace: {e}"));
    out.write_record(header(n_ders, carriers)).map_err(io)?;
    for r in records {
        out.write_record(row(r)).map_err(io)?;
    }
    out.flush().map_err(|e| CliError::Runtime(format!("writing trace: {e}")))
}

fn row(r: &TraceRecord) -> Vec<String> {
    let mut cells = vec![fmt_sig9(r.t)];
    for d in &r.ders {
        cells.extend([d.x_sp, d.x_sp_prime, d.x, d.e, d.e_pred].map(fmt_sig9));
        cells.push(d.queued.to_string());
        cells.push(d.delivered.to_string());
    }
    cells.push(fmt_sig9(r.pcc));
    for per_der in &r.cqi {
        cells.extend(per_der.iter().map(u8::to_string));
    }
    cells
}

pub fn read_csv<R: Read>(r: R) -> Result<Trace> {
    let bad = |m: String| CliError::Usage(format!("malformed trace: {m}"));
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let cols: Vec<String> = rdr
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let n_ders = cols.iter().filter(|c| c.ends_with("_x_sp")).count();
    let cqi_cols = cols.len().checked_sub(2 + 7 * n_ders).ok_or_else(|| bad("too few columns".into()))?;
    if n_ders == 0 || cqi_cols % n_ders != 0 {
        return Err(bad(format!("unexpected header {cols:?}")));
    }
    let carriers = cqi_cols / n_ders;
    if cols != header(n_ders, carriers) {
        return Err(bad(format!(
            "header does not match the {n_ders}-device, {carriers}-carrier layout"
        )));
    }

    let mut records = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let at = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| bad(format!("row {} is short", line + 2)))
        };
        let real = |i: usize| -> Result<f64> {
            let s = at(i)?;
            s.parse().map_err(|_| bad(format!("row {}: {s:?} is not a number", line + 2)))
        };
        let int = |i: usize| -> Result<u64> {
            let s = at(i)?;
            s.parse().map_err(|_| bad(format!("row {}: {s:?} is not a count", line + 2)))
        };
        let mut ders = Vec::with_capacity(n_ders);
        for d in 0..n_ders {
            let b = 1 + 7 * d;
            ders.push(DerSample {
                x_sp: real(b)?,
                x_sp_prime: real(b + 1)?,
                x: real(b + 2)?,
                e: real(b + 3)?,
                e_pred: real(b + 4)?,
                queued: int(b + 5)? as usize,
                delivered: int(b + 6)? as u32,
            });
        }
        let pcc_at = 1 + 7 * n_ders;
        let mut cqi = Vec::with_capacity(n_ders);
        for d in 0..n_ders {
            let mut per = Vec::with_capacity(carriers);
            for c in 0..carriers {
                let v = int(pcc_at + 1 + d * carriers + c)?;
                per.push(u8::try_from(v).map_err(|_| bad(format!("row {}: CQI {v} out of range", line + 2)))?);
            }
            cqi.push(per);
        }
        records.push(TraceRecord {
            t: real(0)?,
            ders,
            pcc: real(pcc_at)?,
            cqi,
        });
    }
    Ok(Trace::new(n_ders, carriers, records))
}

pub fn read_file(path: &std::path::Path) -> Result<Trace> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_csv(std::io::BufReader::new(f))
}

/// The same record with every real value rounded as it would be on disk.
pub fn quantize(r: &TraceRecord) -> TraceRecord {
    TraceRecord {
        t: round_sig9(r.t),
        ders: r
            .ders
            .iter()
            .map(|d| DerSample {
                x_sp: round_sig9(d.x_sp),
                x_sp_prime: round_sig9(d.x_sp_prime),
                x: round_sig9(d.x),
                e: round_sig9(d.e),
                e_pred: round_sig9(d.e_pred),
                ..*d
            })
            .collect(),
        pcc: round_sig9(r.pcc),
        cqi: r.cqi.clone(),
    }
}
