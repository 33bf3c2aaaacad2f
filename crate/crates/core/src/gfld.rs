//! The `.gfld` field file format.
//!
//! One JSON header line followed by a little-endian `f64` payload:
//!
//! ```text
//! {"version":1,"dim":2,"shape":[32,32],"spacing":0.03125,"origin":[0,0],"rank":2,
//!  "mask":{"first":true,"runs":[1024]},"boundary_graph":null}\n
//! <inside cells in mask order, each carrying 1 / n / n² values (row-major)>
//! ```
//!
//! `mask.runs` are run lengths of alternating mask values starting with
//! `mask.first`.

use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fields::{BoundaryGraph, Field, GridDomain, MatrixField, Pointwise, ScalarField, VectorField};
use crate::mat::{Mat, Vector};

pub const GFLD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLengthMask {
    pub first: bool,
    pub runs: Vec<usize>,
}

impl RunLengthMask {
    pub fn encode(mask: &[bool]) -> Self {
        let first = mask.first().copied().unwrap_or(false);
        let mut runs = Vec::new();
        let mut current = first;
        let mut len = 0;
        for &m in mask {
            if m == current {
                len += 1;
            } else {
                runs.push(len);
                current = m;
                len = 1;
            }
        }
        if len > 0 {
            runs.push(len);
        }
        RunLengthMask { first, runs }
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.runs.iter().sum());
        let mut value = self.first;
        for &r in &self.runs {
            out.extend(std::iter::repeat_n(value, r));
            value = !value;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GfldHeader {
    pub version: u32,
    pub dim: usize,
    pub shape: Vec<usize>,
    pub spacing: f64,
    pub origin: Vec<f64>,
    pub rank: u8,
    pub mask: RunLengthMask,
    #[serde(default)]
    pub boundary_graph: Option<BoundaryGraph>,
}

/// Values that can be stored in a `.gfld` payload.
pub trait GfldValue: Pointwise {
    const RANK: u8;
    fn write_components(&self, out: &mut Vec<f64>);
    fn read_components(dim: usize, data: &[f64]) -> Self;
}

impl GfldValue for f64 {
    const RANK: u8 = 0;
    fn write_components(&self, out: &mut Vec<f64>) {
        out.push(*self);
    }
    fn read_components(_: usize, data: &[f64]) -> Self {
        data[0]
    }
}

impl GfldValue for Vector {
    const RANK: u8 = 1;
    fn write_components(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.as_slice());
    }
    fn read_components(dim: usize, data: &[f64]) -> Self {
        Vector::from_slice(&data[..dim])
    }
}

impl GfldValue for Mat {
    const RANK: u8 = 2;
    fn write_components(&self, out: &mut Vec<f64>) {
        out.extend(self.entries());
    }
    fn read_components(dim: usize, data: &[f64]) -> Self {
        Mat::from_rows(dim, &data[..dim * dim])
    }
}

fn components(rank: u8, dim: usize) -> usize {
    dim.pow(rank as u32)
}

/// A field of any rank, as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyField {
    Scalar(ScalarField),
    Vector(VectorField),
    Matrix(MatrixField),
}

pub fn write_field<T: GfldValue>(mut writer: impl Write, field: &Field<T>) -> Result<()> {
    let d = field.domain();
    let header = GfldHeader {
        version: GFLD_VERSION,
        dim: d.dim(),
        shape: d.shape().to_vec(),
        spacing: d.spacing(),
        origin: d.origin().to_vec(),
        rank: T::RANK,
        mask: RunLengthMask::encode(d.mask()),
        boundary_graph: d.boundary_graph().cloned(),
    };
    serde_json::to_writer(&mut writer, &header)?;
    writer.write_all(b"\n")?;
    let mut buf = Vec::new();
    for c in d.inside_cells() {
        field.get(c).write_components(&mut buf);
    }
    let mut bytes = Vec::with_capacity(buf.len() * 8);
    for x in buf {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    writer.write_all(&bytes)?;
    Ok(())
}

pub fn read_field(reader: impl Read) -> Result<AnyField> {
    let mut reader = std::io::BufReader::new(reader);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    let header: GfldHeader = serde_json::from_slice(&line)?;
    if header.version != GFLD_VERSION {
        return Err(LabError::Input(format!("unsupported gfld version {}", header.version)));
    }
    if header.dim != header.shape.len() {
        return Err(LabError::Input("gfld header: dim does not match shape".into()));
    }
    let mask = header.mask.decode();
    let domain = Arc::new(GridDomain::new(
        header.shape.clone(),
        header.spacing,
        header.origin.clone(),
        mask,
        header.boundary_graph.clone(),
    )?);
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let per_cell = components(header.rank, header.dim);
    let expected = domain.inside_count() * per_cell * 8;
    if payload.len() != expected {
        return Err(LabError::Input(format!("gfld payload has {} bytes, expected {expected}", payload.len())));
    }
    let data: Vec<f64> =
        payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect();
    fn build<T: GfldValue>(domain: &Arc<GridDomain>, data: &[f64], per_cell: usize) -> Result<Field<T>> {
        let mut values = vec![T::zero(domain.dim()); domain.num_cells()];
        for (k, c) in domain.inside_cells().enumerate() {
            values[c] = T::read_components(domain.dim(), &data[k * per_cell..(k + 1) * per_cell]);
        }
        Field::from_values(domain, values)
    }
    Ok(match header.rank {
        0 => AnyField::Scalar(build(&domain, &data, per_cell)?),
        1 => AnyField::Vector(build(&domain, &data, per_cell)?),
        2 => AnyField::Matrix(build(&domain, &data, per_cell)?),
        r => return Err(LabError::Input(format!("unsupported gfld rank {r}"))),
    })
}

pub fn save<T: GfldValue>(path: impl AsRef<Path>, field: &Field<T>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_field(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<AnyField> {
    read_field(std::fs::File::open(path)?)
}

pub fn load_vector(path: impl AsRef<Path>) -> Result<VectorField> {
    match load(path)? {
        AnyField::Vector(v) => Ok(v),
        _ => Err(LabError::Input("expected a rank-1 (vector) field".into())),
    }
}

pub fn load_scalar(path: impl AsRef<Path>) -> Result<ScalarField> {
    match load(path)? {
        AnyField::Scalar(v) => Ok(v),
        _ => Err(LabError::Input("expected a rank-0 (scalar) field".into())),
    }
}
