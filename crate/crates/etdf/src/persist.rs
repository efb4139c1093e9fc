//! Weight-file persistence.
//!
//! Layout: magic `ETDF`, format version (u32 LE), descriptor length (u32 LE)
//! and UTF-8 JSON descriptor (spec + metadata), a one-byte precision tag
//! (4 = 32-bit, 8 = 64-bit elements), then one framed blob per parameter
//! tensor in spec order. A framed blob is the element count as u64 LE
//! followed by the little-endian elements. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Model, ModelMeta, ModelSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"ETDF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Descriptor {
    spec: ModelSpec,
    meta: ModelMeta,
}

/// Append one framed tensor blob: element count (u64 LE) then elements.
pub fn write_tensor_framed<T: Scalar>(out: &mut Vec<u8>, tensor: &Tensor<T>) {
    out.extend_from_slice(&(tensor.len() as u64).to_le_bytes());
    let width = T::WIDTH as usize;
    let start = out.len();
    out.resize(start + tensor.len() * width, 0);
    for (i, v) in tensor.data().iter().enumerate() {
        v.write_le(&mut out[start + i * width..start + (i + 1) * width]);
    }
}

pub fn model_to_bytes<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let descriptor = serde_json::to_vec(&Descriptor {
        spec: model.spec().clone(),
        meta: model.meta().clone(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(&descriptor);
    out.push(T::WIDTH);
    for tensor in model.params() {
        write_tensor_framed(&mut out, tensor);
    }
    Ok(out)
}

pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = model_to_bytes(model)?;
    fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.buf.len() as u64,
                message: format!(
                    "truncated while reading {what}: expected {n} bytes at offset {}, file has {}",
                    self.offset,
                    self.buf.len()
                ),
            });
        }
        let slice = &self.buf[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64_le(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn model_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let mut r = Reader { buf: bytes, offset: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:02x?}, expected {MAGIC:02x?}"),
        });
    }
    let version = r.u32_le("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("format version {version}, this build reads {FORMAT_VERSION}"),
        });
    }
    let desc_len = r.u32_le("descriptor length")? as usize;
    let desc_offset = r.offset as u64;
    let descriptor: Descriptor =
        serde_json::from_slice(r.take(desc_len, "descriptor")?).map_err(|e| Error::Format {
            offset: desc_offset,
            message: format!("descriptor is not valid JSON: {e}"),
        })?;

    let tag_offset = r.offset as u64;
    let tag = r.take(1, "precision tag")?[0];
    if tag != T::WIDTH {
        if tag == 4 || tag == 8 {
            return Err(Error::PrecisionMismatch {
                file: tag,
                runtime: T::WIDTH,
            });
        }
        return Err(Error::Format {
            offset: tag_offset,
            message: format!("precision tag {tag}, expected 4 or 8"),
        });
    }

    let mut params = Vec::new();
    for shape in descriptor.spec.param_shapes() {
        let expected: usize = shape.iter().product();
        let count = r.u64_le("tensor element count")? as usize;
        if count != expected {
            return Err(Error::Format {
                offset: (r.offset - 8) as u64,
                message: format!("tensor holds {count} elements, spec expects {expected}"),
            });
        }
        let width = T::WIDTH as usize;
        let raw = r.take(count * width, "tensor data")?;
        let data: Vec<T> = raw.chunks_exact(width).map(T::read_le).collect();
        params.push(Tensor::from_vec(&shape, data)?);
    }
    if r.offset != bytes.len() {
        return Err(Error::Format {
            offset: r.offset as u64,
            message: format!("{} unexpected trailing bytes", bytes.len() - r.offset),
        });
    }
    Model::new(descriptor.spec, params, descriptor.meta)
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let bytes = fs::read(path)?;
    model_from_bytes(&bytes)
}
