//! Profile and timeframe text files.
//!
//! Profiles are long format, `date,score,class`, with the pooled profile
//! under the class label `all` followed by one block per class.

use std::io::{Read, Write};

use chrono::NaiveDate;

use super::{RelevanceProfile, Timeframe};
use crate::dataio::DateAxis;
use crate::error::{Error, Result};
use crate::lrp::export::{csv_err, csv_writer, format_f64};

pub const POOLED_LABEL: &str = "all";

pub fn write_profile<W: Write>(
    profile: &RelevanceProfile,
    axis: &DateAxis,
    class_names: &[String],
    out: W,
) -> Result<()> {
    if profile.per_timestep.len() != axis.len() {
        return Err(Error::Schema(format!(
            "profile has {} timesteps, axis has {}",
            profile.per_timestep.len(),
            axis.len()
        )));
    }
    let mut w = csv_writer(out);
    w.write_record(["date", "score", "class"]).map_err(csv_err)?;
    let dates: Vec<String> = axis.dates().iter().map(|d| d.format("%Y-%m-%d").to_string()).collect();
    for (d, v) in dates.iter().zip(&profile.per_timestep) {
        w.write_record([d.as_str(), &format_f64(*v), POOLED_LABEL]).map_err(csv_err)?;
    }
    if let Some(pc) = &profile.per_class {
        for (c, row) in pc.rows().into_iter().enumerate() {
            let name = class_names.get(c).cloned().unwrap_or_else(|| format!("class_{c}"));
            for (d, v) in dates.iter().zip(row.iter()) {
                w.write_record([d.as_str(), &format_f64(*v), &name]).map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::Schema(format!("write failed: {e}")))
}

/// A profile file read back: the pooled scores and each class block.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    pub axis: DateAxis,
    pub pooled: Vec<f64>,
    pub classes: Vec<(String, Vec<f64>)>,
}

pub fn read_profile<R: Read>(input: R) -> Result<ProfileTable> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("profile header: {e}")))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["date", "score", "class"] {
        return Err(Error::Schema(format!("unexpected profile header {header:?}")));
    }
    let mut blocks: Vec<(String, Vec<(NaiveDate, f64)>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let parse_err = |message: String| Error::Parse {
            path: "profile".into(),
            line,
            message,
        };
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| parse_err(format!("date {:?}: {e}", &rec[0])))?;
        let score: f64 = rec[1]
            .parse()
            .map_err(|e| parse_err(format!("score {:?}: {e}", &rec[1])))?;
        let class = rec[2].to_string();
        match blocks.last_mut() {
            Some((c, rows)) if *c == class => rows.push((date, score)),
            _ => blocks.push((class, vec![(date, score)])),
        }
    }
    let Some(pos) = blocks.iter().position(|(c, _)| c == POOLED_LABEL) else {
        return Err(Error::Schema(format!("profile has no `{POOLED_LABEL}` rows")));
    };
    let (_, pooled_rows) = blocks.remove(pos);
    let axis = DateAxis::new(pooled_rows.iter().map(|(d, _)| *d).collect())?;
    let pooled = pooled_rows.iter().map(|(_, v)| *v).collect();
    let mut classes = Vec::with_capacity(blocks.len());
    for (name, rows) in blocks {
        if rows.iter().map(|(d, _)| d).ne(axis.dates().iter()) {
            return Err(Error::Schema(format!("class {name} rows do not match the pooled dates")));
        }
        classes.push((name, rows.into_iter().map(|(_, v)| v).collect()));
    }
    Ok(ProfileTable { axis, pooled, classes })
}

/// `n,start,end`, one line per window.
pub fn write_timeframes<W: Write>(tfs: &[Timeframe], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["n", "start", "end"]).map_err(csv_err)?;
    for tf in tfs {
        w.write_record([
            tf.n.to_string(),
            tf.start.format("%Y-%m-%d").to_string(),
            tf.end.format("%Y-%m-%d").to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Schema(format!("write failed: {e}")))
}
