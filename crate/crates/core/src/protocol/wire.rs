//! Little-endian wire blobs.
//!
//! Model: `u32 layer_count, u32 version`, then per affine layer
//! `u32 rows, u32 cols` followed by `rows*cols` weights and `rows` biases as
//! `f32`. Length: `8 + Σ (8 + 4·count)`.
//!
//! Features: `u32 batch_count, u32 width`, then per batch `u32 record_count`
//! followed by records of `u16 client, u16 label, u32 round, width × f32`.
//! Length: `8 + 4·batches + records·(8 + 4·width)`.
//!
//! Prototypes: `u32 classes, u32 width`, then `classes·width` `f32`.
//! Length: `8 + 4·classes·width`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Affine, Layer, Parameters, Tensor};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One labelled embedding uploaded by a client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub embedding: Vec<f64>,
    pub label: usize,
    pub client_id: usize,
    pub round: u32,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self {
            bytes,
            pos: 0,
            what,
        }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::Corrupt(format!(
                "{} blob truncated at byte {} of {}",
                self.what,
                self.pos,
                self.bytes.len()
            ))
        })?;
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f64> {
        let v = f32::from_le_bytes(self.take()?);
        if !v.is_finite() {
            return Err(Error::Corrupt(format!(
                "{} blob holds a non-finite value at byte {}",
                self.what,
                self.pos - 4
            )));
        }
        Ok(v as f64)
    }

    /// Fails unless `count` elements of `size` bytes can still be read.
    fn expect_room(&self, count: usize, size: usize) -> Result<()> {
        let need = count.saturating_mul(size);
        if self.bytes.len() - self.pos < need {
            return Err(Error::Corrupt(format!(
                "{} blob declares {count} elements but only {} bytes remain",
                self.what,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Corrupt(format!(
                "{} blob has {} trailing bytes",
                self.what,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("{what} {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

pub fn model_blob_len(params: &Parameters) -> usize {
    8 + params
        .layers()
        .iter()
        .flatten()
        .map(|a| 8 + 4 * (a.weight.len() + a.bias.len()))
        .sum::<usize>()
}

pub fn feature_blob_len(batches: usize, records: usize, width: usize) -> usize {
    8 + 4 * batches + records * (8 + 4 * width)
}

pub fn prototype_blob_len(classes: usize, width: usize) -> usize {
    8 + 4 * classes * width
}

pub fn serialize_model(params: &Parameters) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(model_blob_len(params));
    let affines: Vec<&Affine> = params.layers().iter().flatten().collect();
    put_u32(&mut out, affines.len(), "layer count")?;
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    for a in affines {
        put_u32(&mut out, a.output(), "rows")?;
        put_u32(&mut out, a.input(), "cols")?;
        for &v in a.weight.data().iter().chain(a.bias.data()) {
            put_f32(&mut out, v);
        }
    }
    Ok(out)
}

/// Decodes the affine layers of a model blob, in order.
pub fn deserialize_model(bytes: &[u8]) -> Result<Vec<Affine>> {
    let mut r = Reader::new(bytes, "model");
    let count = r.u32()? as usize;
    let version = r.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Corrupt(format!(
            "unknown model format version {version}"
        )));
    }
    r.expect_room(count, 8)?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|w| w.checked_add(rows))
            .ok_or_else(|| Error::Corrupt("layer shape overflows".into()))?;
        r.expect_room(n, 4)?;
        let weight = (0..rows * cols)
            .map(|_| r.f32())
            .collect::<Result<Vec<_>>>()?;
        let bias = (0..rows).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        layers.push(Affine::new(
            Tensor::matrix(rows, cols, weight)?,
            Tensor::new(vec![rows], bias)?,
        )?);
    }
    r.finish()?;
    Ok(layers)
}

/// Decodes a model blob and places its affine layers onto `layers`.
pub fn deserialize_model_for(bytes: &[u8], layers: &[Layer]) -> Result<Parameters> {
    let mut affines = deserialize_model(bytes)?.into_iter();
    let mut slots = Vec::with_capacity(layers.len());
    for layer in layers {
        slots.push(match layer {
            Layer::Affine { .. } => {
                Some(affines.next().ok_or_else(|| {
                    Error::Corrupt("blob has fewer layers than the network".into())
                })?)
            }
            _ => None,
        });
    }
    if affines.next().is_some() {
        return Err(Error::Corrupt(
            "blob has more layers than the network".into(),
        ));
    }
    let params = Parameters::from_layers(slots);
    params.check_against(layers)?;
    Ok(params)
}

pub fn encode_features(batches: &[Vec<FeatureRecord>], width: usize) -> Result<Vec<u8>> {
    let records: usize = batches.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(feature_blob_len(batches.len(), records, width));
    put_u32(&mut out, batches.len(), "batch count")?;
    put_u32(&mut out, width, "width")?;
    for batch in batches {
        put_u32(&mut out, batch.len(), "record count")?;
        for rec in batch {
            if rec.embedding.len() != width {
                return Err(crate::error::shape_err(
                    "feature record",
                    width,
                    rec.embedding.len(),
                ));
            }
            let client = u16::try_from(rec.client_id)
                .map_err(|_| Error::Config(format!("client id {} exceeds u16", rec.client_id)))?;
            let label = u16::try_from(rec.label)
                .map_err(|_| Error::Config(format!("label {} exceeds u16", rec.label)))?;
            out.extend_from_slice(&client.to_le_bytes());
            out.extend_from_slice(&label.to_le_bytes());
            out.extend_from_slice(&rec.round.to_le_bytes());
            for &v in &rec.embedding {
                put_f32(&mut out, v);
            }
        }
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<Vec<Vec<FeatureRecord>>> {
    let mut r = Reader::new(bytes, "feature");
    let batches = r.u32()? as usize;
    let width = r.u32()? as usize;
    r.expect_room(batches, 4)?;
    let mut out = Vec::with_capacity(batches);
    for _ in 0..batches {
        let n = r.u32()? as usize;
        r.expect_room(n, 8 + 4 * width)?;
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            let client_id = r.u16()? as usize;
            let label = r.u16()? as usize;
            let round = r.u32()?;
            let embedding = (0..width).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            batch.push(FeatureRecord {
                embedding,
                label,
                client_id,
                round,
            });
        }
        out.push(batch);
    }
    r.finish()?;
    Ok(out)
}

pub fn encode_prototypes(prototypes: &[Vec<f64>]) -> Result<Vec<u8>> {
    let width = prototypes.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(prototype_blob_len(prototypes.len(), width));
    put_u32(&mut out, prototypes.len(), "class count")?;
    put_u32(&mut out, width, "width")?;
    for p in prototypes {
        if p.len() != width {
            return Err(crate::error::shape_err("prototype", width, p.len()));
        }
        for &v in p {
            put_f32(&mut out, v);
        }
    }
    Ok(out)
}

pub fn decode_prototypes(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let mut r = Reader::new(bytes, "prototype");
    let classes = r.u32()? as usize;
    let width = r.u32()? as usize;
    r.expect_room(classes.saturating_mul(width), 4)?;
    let mut out = Vec::with_capacity(classes);
    for _ in 0..classes {
        out.push((0..width).map(|_| r.f32()).collect::<Result<Vec<_>>>()?);
    }
    r.finish()?;
    Ok(out)
}
