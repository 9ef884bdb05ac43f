//! Per-round trace records and their CSV/JSON encodings.
//!
//! CSV layout: `iter,residual,V,p,E_1..E_N`, then `d_i_j` gain columns when
//! gain rows were recorded, then `wall_time` when requested. Agent indices in
//! column names are 1-based. Missing values are empty fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Monitored quantities after one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Rounds completed.
    pub iter: usize,
    pub residual: f64,
    /// Global Lyapunov value, when an oracle is attached.
    #[serde(rename = "V")]
    pub lyapunov: Option<f64>,
    /// `Σ_i f_i(x_i)`.
    #[serde(rename = "p")]
    pub objective: f64,
    /// Local energies `E_i`; empty before the first round.
    #[serde(rename = "E")]
    pub energies: Vec<f64>,
    /// Dense gain rows, when recorded.
    #[serde(rename = "d", default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

/// Sequence of records for an `agents`-agent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub agents: usize,
    pub records: Vec<TraceRecord>,
}

fn malformed_csv(line: usize, e: csv::Error) -> Error {
    Error::MalformedTrace { line: line.max(1), reason: e.to_string() }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Trace {
    pub fn new(agents: usize) -> Self {
        Self { agents, records: Vec::new() }
    }

    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn has_gains(&self) -> bool {
        self.records.iter().any(|r| r.gains.is_some())
    }

    /// Renders the trace as CSV; `wall_time` is appended only on request.
    pub fn to_csv(&self, wall_time: bool) -> Result<String> {
        let n = self.agents;
        let gains = self.has_gains();
        let mut header = vec!["iter".to_string(), "residual".into(), "V".into(), "p".into()];
        header.extend((1..=n).map(|i| format!("E_{i}")));
        if gains {
            for i in 1..=n {
                header.extend((1..=n).map(|j| format!("d_{i}_{j}")));
            }
        }
        if wall_time {
            header.push("wall_time".into());
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.iter.to_string(), r.residual.to_string(), opt(r.lyapunov), r.objective.to_string()];
            row.extend((0..n).map(|i| opt(r.energies.get(i).copied())));
            if gains {
                match &r.gains {
                    Some(rows) => row.extend(rows.iter().flatten().map(f64::to_string)),
                    None => row.extend(std::iter::repeat_n(String::new(), n * n)),
                }
            }
            if wall_time {
                row.push(opt(r.wall_time));
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }

    /// Parses CSV written by [`Trace::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| malformed_csv(1, e))?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 4 || cols[..4] != ["iter", "residual", "V", "p"] {
            return Err(Error::MalformedTrace { line: 1, reason: "header must start with iter,residual,V,p".into() });
        }
        let agents = cols.iter().filter(|c| c.starts_with("E_")).count();
        let gain_cols = cols.iter().filter(|c| c.starts_with("d_")).count();
        if gain_cols != 0 && gain_cols != agents * agents {
            return Err(Error::MalformedTrace { line: 1, reason: format!("expected {} gain columns, found {gain_cols}", agents * agents) });
        }
        let has_wall = cols.last() == Some(&"wall_time");
        let expected = 4 + agents + gain_cols + usize::from(has_wall);
        if cols.len() != expected {
            return Err(Error::MalformedTrace { line: 1, reason: format!("unexpected columns in header ({} of {expected})", cols.len()) });
        }

        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                malformed_csv(line, e)
            })?;
            let lineno = row.position().map_or(0, |p| p.line() as usize);
            let bad = |reason: String| Error::MalformedTrace { line: lineno, reason };
            let f: Vec<&str> = row.iter().collect();
            if f.len() != expected {
                return Err(bad(format!("expected {expected} fields, found {}", f.len())));
            }
            let num = |s: &str, name: &str| s.parse::<f64>().map_err(|_| bad(format!("`{name}` is not a number: {s:?}")));
            let opt_num = |s: &str, name: &str| if s.is_empty() { Ok(None) } else { num(s, name).map(Some) };
            let iter = f[0].parse::<usize>().map_err(|_| bad(format!("`iter` is not an integer: {:?}", f[0])))?;
            let residual = num(f[1], "residual")?;
            let lyapunov = opt_num(f[2], "V")?;
            let objective = num(f[3], "p")?;
            let energies_raw = (0..agents).map(|i| opt_num(f[4 + i], "E")).collect::<Result<Vec<_>>>()?;
            let energies = if energies_raw.iter().all(Option::is_none) {
                Vec::new()
            } else {
                energies_raw.into_iter().map(|e| e.ok_or_else(|| bad("partially missing energies".into()))).collect::<Result<_>>()?
            };
            let gains = if gain_cols > 0 {
                let base = 4 + agents;
                let vals = (0..gain_cols).map(|c| opt_num(f[base + c], "d")).collect::<Result<Vec<_>>>()?;
                if vals.iter().all(Option::is_none) {
                    None
                } else {
                    let flat = vals.into_iter().map(|v| v.ok_or_else(|| bad("partially missing gains".into()))).collect::<Result<Vec<f64>>>()?;
                    Some(flat.chunks(agents).map(<[f64]>::to_vec).collect())
                }
            } else {
                None
            };
            let wall_time = if has_wall { opt_num(f[expected - 1], "wall_time")? } else { None };
            records.push(TraceRecord { iter, residual, lyapunov, objective, energies, gains, wall_time });
        }
        Ok(Self { agents, records })
    }

    pub fn to_json(&self, wall_time: bool) -> Result<String> {
        if wall_time {
            Ok(serde_json::to_string_pretty(self)?)
        } else {
            let mut stripped = self.clone();
            for r in &mut stripped.records {
                r.wall_time = None;
            }
            Ok(serde_json::to_string_pretty(&stripped)?)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
