//! Long-format dataset files: one row per (parcel, date).
//!
//! ```text
//! parcel_id,label,block_id,date,B01,B02,...,B12
//! ```
//!
//! Reflectances are written with 9 significant digits, which is exactly
//! enough for `f32` values to survive a save/load cycle bit for bit.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;

use super::{DateAxis, Dataset, TimeSeriesSample};
use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 4] = ["parcel_id", "label", "block_id", "date"];

pub(crate) fn format_f32(v: f32) -> String {
    format!("{v:.8e}")
}

/// Writes `ds` in long format to any writer.
pub fn write_dataset<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let to_err = |e: csv::Error| Error::Schema(format!("write failed: {e}"));

    let header: Vec<&str> = FIXED_COLUMNS
        .iter()
        .copied()
        .chain(ds.band_names.iter().map(String::as_str))
        .collect();
    w.write_record(&header).map_err(to_err)?;

    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for s in &ds.samples {
        for (t, date) in ds.axis.dates().iter().enumerate() {
            if !s.mask[t] {
                continue;
            }
            row.clear();
            row.push(s.parcel_id.clone());
            row.push(s.label.to_string());
            row.push(s.block_id.to_string());
            row.push(date.format("%Y-%m-%d").to_string());
            row.extend(s.values.column(t).iter().map(|&v| format_f32(v)));
            w.write_record(&row).map_err(to_err)?;
        }
    }
    w.flush()
        .map_err(|e| Error::Schema(format!("write failed: {e}")))?;
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = BufWriter::new(file);
    write_dataset(ds, &mut buf)?;
    buf.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_dataset_from_reader(BufReader::new(file), path)
}

struct ParcelRows {
    label: usize,
    block_id: u32,
    rows: Vec<(NaiveDate, Vec<f32>)>,
}

/// Parses a long-format dataset; `origin` is only used in error messages.
pub fn load_dataset_from_reader<R: Read>(input: R, origin: &Path) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, format!("unreadable header: {e}")))?
        .clone();
    if header.len() < FIXED_COLUMNS.len() + 1
        || header.iter().take(4).ne(FIXED_COLUMNS.iter().copied())
    {
        return Err(parse_err(
            1,
            format!(
                "header must start with {} followed by band columns",
                FIXED_COLUMNS.join(",")
            ),
        ));
    }
    let band_names: Vec<String> = header.iter().skip(4).map(str::to_string).collect();
    let n_bands = band_names.len();

    let mut order: Vec<String> = Vec::new();
    let mut parcels: HashMap<String, ParcelRows> = HashMap::new();
    let mut all_dates = BTreeSet::new();

    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            match e.kind() {
                csv::ErrorKind::UnequalLengths { len, .. } => Error::Schema(format!(
                    "line {line}: row has {} band values, header declares {n_bands}",
                    len.saturating_sub(FIXED_COLUMNS.len() as u64)
                )),
                _ => parse_err(line, e.to_string()),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());

        let parcel_id = record[0].to_string();
        let label: usize = record[1]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid label {:?}", &record[1])))?;
        let block_id: u32 = record[2]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid block_id {:?}", &record[2])))?;
        let date = NaiveDate::parse_from_str(&record[3], "%Y-%m-%d")
            .map_err(|_| parse_err(line, format!("invalid date {:?}", &record[3])))?;
        let values = record
            .iter()
            .skip(4)
            .map(|f| {
                f.parse::<f32>()
                    .map_err(|_| parse_err(line, format!("invalid reflectance {f:?}")))
            })
            .collect::<Result<Vec<f32>>>()?;

        let entry = parcels.entry(parcel_id.clone()).or_insert_with(|| {
            order.push(parcel_id.clone());
            ParcelRows {
                label,
                block_id,
                rows: Vec::new(),
            }
        });
        if entry.label != label || entry.block_id != block_id {
            return Err(Error::Schema(format!(
                "line {line}: parcel {parcel_id} changes label or block_id"
            )));
        }
        if entry.rows.iter().any(|(d, _)| *d == date) {
            return Err(Error::Schema(format!(
                "line {line}: duplicate row for parcel {parcel_id} on {date}"
            )));
        }
        entry.rows.push((date, values));
        all_dates.insert(date);
    }

    let axis = DateAxis::new(all_dates.into_iter().collect())?;
    let n_t = axis.len();
    let mut max_label = None;
    let samples = order
        .into_iter()
        .map(|id| {
            let p = parcels.remove(&id).expect("parcel recorded in order");
            max_label = max_label.max(Some(p.label));
            let mut values = Array2::<f32>::zeros((n_bands, n_t));
            let mut mask = vec![false; n_t];
            for (date, row) in p.rows {
                let t = axis.index_of(date).expect("date is on the axis");
                mask[t] = true;
                for (b, v) in row.into_iter().enumerate() {
                    values[[b, t]] = v;
                }
            }
            TimeSeriesSample {
                parcel_id: id,
                label: p.label,
                block_id: p.block_id,
                values,
                mask,
            }
        })
        .collect();
    let class_names = (0..max_label.map_or(0, |m| m + 1))
        .map(|k| format!("class_{k}"))
        .collect();
    Dataset::new(samples, axis, class_names, band_names)
}
