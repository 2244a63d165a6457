//! CSV exports of relevance maps.

use std::io::Write;

use chrono::NaiveDate;

use super::{timestep_relevance, RelevanceMap};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Schema(format!("write failed: {e}"))
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:e}")
}

fn check_dates<S>(map: &RelevanceMap<S>, dates: &[NaiveDate]) -> Result<()> {
    if map.values.ncols() != dates.len() {
        return Err(Error::Schema(format!(
            "map for {} has {} timesteps, axis has {}",
            map.sample_ref,
            map.values.ncols(),
            dates.len()
        )));
    }
    Ok(())
}

/// `parcel_id,target_class,date,band,relevance`, one row per cell.
pub fn write_relevance_long<S: Scalar, W: Write>(
    maps: &[RelevanceMap<S>],
    dates: &[NaiveDate],
    band_names: &[String],
    out: W,
) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["parcel_id", "target_class", "date", "band", "relevance"])
        .map_err(csv_err)?;
    for map in maps {
        check_dates(map, dates)?;
        if map.values.nrows() != band_names.len() {
            return Err(Error::Schema(format!(
                "map for {} has {} bands, expected {}",
                map.sample_ref,
                map.values.nrows(),
                band_names.len()
            )));
        }
        let class = map.target_class.to_string();
        for (t, date) in dates.iter().enumerate() {
            let date = date.format("%Y-%m-%d").to_string();
            for (b, band) in band_names.iter().enumerate() {
                let v = format_f64(map.values[[b, t]].to_f64_lossy());
                w.write_record([map.sample_ref.as_str(), &class, &date, band, &v])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::Schema(format!("write failed: {e}")))
}

/// `parcel_id,target_class,date,r_t`, one row per timestep.
pub fn write_timestep_relevance<S: Scalar, W: Write>(
    maps: &[RelevanceMap<S>],
    dates: &[NaiveDate],
    out: W,
) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["parcel_id", "target_class", "date", "r_t"])
        .map_err(csv_err)?;
    for map in maps {
        check_dates(map, dates)?;
        let class = map.target_class.to_string();
        let rt = timestep_relevance(map);
        for (date, v) in dates.iter().zip(rt.values.iter()) {
            let date = date.format("%Y-%m-%d").to_string();
            w.write_record([map.sample_ref.as_str(), &class, &date, &format_f64(v.to_f64_lossy())])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Schema(format!("write failed: {e}")))
}

/// Rows of a relevance file grouped by parcel in first-appearance order.
fn read_grouped<R: std::io::Read>(
    input: R,
    header: &[&str],
) -> Result<Vec<(String, usize, Vec<csv::StringRecord>)>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(input);
    let found = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("relevance header: {e}")))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Schema(format!("unexpected relevance header {found:?}")));
    }
    let mut groups: Vec<(String, usize, Vec<csv::StringRecord>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let parse_err = |message: String| Error::Parse {
            path: "relevance".into(),
            line,
            message,
        };
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let class: usize = rec[1]
            .parse()
            .map_err(|e| parse_err(format!("target_class {:?}: {e}", &rec[1])))?;
        match groups.last_mut() {
            Some((id, _, rows)) if id == &rec[0] => rows.push(rec),
            _ => groups.push((rec[0].to_string(), class, vec![rec])),
        }
    }
    Ok(groups)
}

fn parse_value(rec: &csv::StringRecord, col: usize) -> Result<f64> {
    rec[col]
        .parse()
        .map_err(|e| Error::Schema(format!("relevance value {:?}: {e}", &rec[col])))
}

/// Reads a per-timestep file back as `(parcel_id, target_class, R_t)`.
pub fn read_timestep_relevance<R: std::io::Read>(input: R) -> Result<Vec<(String, usize, Vec<f64>)>> {
    read_grouped(input, &["parcel_id", "target_class", "date", "r_t"])?
        .into_iter()
        .map(|(id, class, rows)| {
            let values = rows.iter().map(|r| parse_value(r, 3)).collect::<Result<Vec<f64>>>()?;
            Ok((id, class, values))
        })
        .collect()
}

/// Reads a long-format file back as `(parcel_id, target_class, B × T)`.
pub fn read_relevance_long<R: std::io::Read>(
    input: R,
    n_bands: usize,
) -> Result<Vec<(String, usize, ndarray::Array2<f64>)>> {
    read_grouped(input, &["parcel_id", "target_class", "date", "band", "relevance"])?
        .into_iter()
        .map(|(id, class, rows)| {
            if n_bands == 0 || rows.len() % n_bands != 0 {
                return Err(Error::Schema(format!(
                    "parcel {id}: {} rows do not fill {n_bands} bands",
                    rows.len()
                )));
            }
            let n_t = rows.len() / n_bands;
            let mut values = ndarray::Array2::zeros((n_bands, n_t));
            for (k, r) in rows.iter().enumerate() {
                values[[k % n_bands, k / n_bands]] = parse_value(r, 4)?;
            }
            Ok((id, class, values))
        })
        .collect()
}
