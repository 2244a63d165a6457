//! Model files: one JSON document holding the config and every tensor as a
//! flat row-major array, in the canonical order of [`ModelConfig::layout`].
//! Reals are written with 17 significant digits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Parameters};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const FORMAT: &str = "croplrp-model/1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

/// Compact JSON with reals always in `d.dddddddddddddddde±x` form.
pub(crate) struct RoundTripFormatter;

impl serde_json::ser::Formatter for RoundTripFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        write!(writer, "{:.16e}", f64::from(value))
    }
}

pub fn write_params<S: Scalar, W: Write>(params: &Parameters<S>, out: W) -> Result<()> {
    if !params.all_finite() {
        return Err(Error::ModelFormat("parameters contain non-finite values".into()));
    }
    let tensors = params
        .config
        .layout()
        .into_iter()
        .zip(params.tensors())
        .map(|((name, shape), data)| TensorEntry {
            name,
            shape,
            data: data.iter().map(|v| v.to_f64_lossy()).collect(),
        })
        .collect();
    let file = ModelFile {
        format: FORMAT.into(),
        config: params.config.clone(),
        tensors,
    };
    let mut ser = serde_json::Serializer::with_formatter(out, RoundTripFormatter);
    file.serialize(&mut ser)
        .map_err(|e| Error::ModelFormat(format!("serialization failed: {e}")))?;
    let mut out = ser.into_inner();
    out.write_all(b"\n")
        .map_err(|e| Error::ModelFormat(e.to_string()))
}

pub fn save_params<S: Scalar>(params: &Parameters<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = BufWriter::new(file);
    write_params(params, &mut buf)?;
    buf.flush().map_err(|e| Error::io(path, e))
}

pub fn read_params<S: Scalar, R: Read>(input: R) -> Result<Parameters<S>> {
    let file: ModelFile = serde_json::from_reader(input)
        .map_err(|e| Error::ModelFormat(format!("invalid model document: {e}")))?;
    if file.format != FORMAT {
        return Err(Error::ModelFormat(format!(
            "unsupported format {:?}, expected {FORMAT:?}",
            file.format
        )));
    }
    let mut params = Parameters::<S>::zeros(&file.config)
        .map_err(|e| Error::ModelFormat(format!("embedded config invalid: {e}")))?;
    let layout = file.config.layout();
    if file.tensors.len() != layout.len() {
        return Err(Error::ModelFormat(format!(
            "{} tensors present, config requires {}",
            file.tensors.len(),
            layout.len()
        )));
    }
    for ((dst, entry), (name, shape)) in params.tensors_mut().into_iter().zip(&file.tensors).zip(&layout) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::ModelFormat(format!(
                "tensor {} {:?} does not match expected {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        if entry.data.len() != dst.len() {
            return Err(Error::ModelFormat(format!(
                "tensor {name} holds {} values, shape needs {}",
                entry.data.len(),
                dst.len()
            )));
        }
        for (d, &v) in dst.iter_mut().zip(&entry.data) {
            if !v.is_finite() {
                return Err(Error::ModelFormat(format!("non-finite value in {name}")));
            }
            *d = S::lit(v);
        }
    }
    Ok(params)
}

pub fn load_params<S: Scalar>(path: impl AsRef<Path>) -> Result<Parameters<S>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(BufReader::new(file))
}
