// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON-lines dataset files: one object per series, `null` marks an
//! unobserved step.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    values: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    freq: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    season_period: Option<usize>,
}

impl From<&TimeSeries> for Record {
    fn from(s: &TimeSeries) -> Self {
        Record {
            id: s.id.clone(),
            values: s
                .values
                .iter()
                .zip(&s.observed)
                .map(|(&v, &o)| o.then_some(v))
                .collect(),
            freq: s.freq.clone(),
            season_period: s.season_period,
        }
    }
}

impl Record {
    fn into_series(self) -> Result<TimeSeries> {
        let observed: Vec<bool> = self.values.iter().map(|v| v.is_some()).collect();
        let values = self.values.iter().map(|v| v.unwrap_or(0.0)).collect();
        if let Some(0) = self.season_period {
            return Err(Error::Data(format!("series {}: season_period must be positive", self.id)));
        }
        let mut s = TimeSeries::with_mask(self.id, values, observed)?;
        s.freq = self.freq;
        s.season_period = self.season_period;
        Ok(s)
    }
}

pub fn to_json_line(series: &TimeSeries) -> Result<String> {
    Ok(serde_json::to_string(&Record::from(series))?)
}

pub fn from_json_line(line: &str) -> Result<TimeSeries> {
    let rec: Record = serde_json::from_str(line)?;
    rec.into_series()
}

pub fn write_jsonl(path: impl AsRef<Path>, series: &[TimeSeries]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_jsonl_to(&mut w, series)?;
    w.flush()?;
    Ok(())
}

pub fn write_jsonl_to(w: &mut impl Write, series: &[TimeSeries]) -> Result<()> {
    for s in series {
        writeln!(w, "{}", to_json_line(s)?)?;
    }
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<TimeSeries>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = from_json_line(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(s);
    }
    Ok(out)
}
