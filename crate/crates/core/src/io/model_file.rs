//! Binary model container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic       4 bytes  "M3DM"
//! version     u16      1
//! n_vertices  u32
//! m_id        u32
//! k_exp       u32
//! n_landmarks u32
//! flags       u32      bit 0: triangles present, bit 1: contour candidates
//! mean_shape        3n f64
//! id_basis          3n * m_id f64, column major
//! id_stddev         m_id f64
//! exp_basis         3n * k_exp f64, column major
//! exp_stddev        k_exp f64
//! landmark_indices  L u32
//! [triangles]       count u32, then 3 * count u32
//! [contours]        per landmark slot: count u32, then count u32 indices
//! ```
//!
//! `read(write(m))` is bit-identical; every malformed input is rejected with
//! an error naming the offending section and offset.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{ModelError, MorphableModel};

pub const MODEL_MAGIC: [u8; 4] = *b"M3DM";
pub const MODEL_VERSION: u16 = 1;

const FLAG_TRIANGLES: u32 = 1;
const FLAG_CONTOURS: u32 = 1 << 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("bad magic {found:?} at offset 0, expected {MODEL_MAGIC:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported container version {found}, expected {MODEL_VERSION}")]
    BadVersion { found: u16 },
    #[error("unknown flag bits {bits:#010x} in header")]
    UnknownFlags { bits: u32 },
    #[error("header count {what} must be nonzero")]
    ZeroCount { what: &'static str },
    #[error("count {what} = {value} does not fit the container's u32 fields")]
    CountOverflow { what: &'static str, value: usize },
    #[error(
        "truncated while reading {section}: need {needed} bytes at offset {offset}, \
         only {available} available"
    )]
    Truncated {
        section: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{extra} trailing bytes after model data at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("decoded model is invalid: {0}")]
    Invalid(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serializes a model to the container layout.
pub fn encode_model(model: &MorphableModel) -> Result<Vec<u8>, ModelFileError> {
    model.validate()?;
    let as_u32 = |value: usize, what: &'static str| -> Result<u32, ModelFileError> {
        u32::try_from(value).map_err(|_| ModelFileError::CountOverflow { what, value })
    };
    let n = as_u32(model.n_vertices, "n_vertices")?;
    let m_id = as_u32(model.m_id(), "m_id")?;
    let k_exp = as_u32(model.k_exp(), "k_exp")?;
    let n_landmarks = as_u32(model.n_landmarks(), "n_landmarks")?;
    let mut flags = 0u32;
    if model.triangles.is_some() {
        flags |= FLAG_TRIANGLES;
    }
    if model.contour_candidates.is_some() {
        flags |= FLAG_CONTOURS;
    }

    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&m_id.to_le_bytes());
    out.extend_from_slice(&k_exp.to_le_bytes());
    out.extend_from_slice(&n_landmarks.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());

    let write_f64s = |out: &mut Vec<u8>, values: &[f64]| {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    write_f64s(&mut out, model.mean_shape.as_slice());
    write_f64s(&mut out, model.id_basis.as_slice());
    write_f64s(&mut out, model.id_stddev.as_slice());
    write_f64s(&mut out, model.exp_basis.as_slice());
    write_f64s(&mut out, model.exp_stddev.as_slice());

    for &index in &model.landmark_indices {
        out.extend_from_slice(&as_u32(index, "landmark index")?.to_le_bytes());
    }
    if let Some(triangles) = &model.triangles {
        out.extend_from_slice(&as_u32(triangles.len(), "triangle count")?.to_le_bytes());
        for tri in triangles {
            for &index in tri {
                out.extend_from_slice(&as_u32(index, "triangle index")?.to_le_bytes());
            }
        }
    }
    if let Some(contours) = &model.contour_candidates {
        for slot in 0..model.n_landmarks() {
            match contours.get(&slot) {
                Some(candidates) => {
                    out.extend_from_slice(
                        &as_u32(candidates.len(), "contour candidate count")?.to_le_bytes(),
                    );
                    for &index in candidates {
                        out.extend_from_slice(&as_u32(index, "contour candidate")?.to_le_bytes());
                    }
                }
                None => out.extend_from_slice(&0u32.to_le_bytes()),
            }
        }
    }
    Ok(out)
}

pub fn write_model(model: &MorphableModel, path: impl AsRef<Path>) -> Result<(), ModelFileError> {
    let bytes = encode_model(model)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, needed: usize, section: &'static str) -> Result<&'a [u8], ModelFileError> {
        let available = self.buf.len() - self.pos;
        if available < needed {
            return Err(ModelFileError::Truncated {
                section,
                offset: self.pos,
                needed,
                available,
            });
        }
        let slice = &self.buf[self.pos..self.pos + needed];
        self.pos += needed;
        Ok(slice)
    }

    fn read_u16(&mut self, section: &'static str) -> Result<u16, ModelFileError> {
        let bytes = self.take(2, section)?;
        Ok(u16::from_le_bytes(bytes.try_into().unwrap()))
    }

    fn read_u32(&mut self, section: &'static str) -> Result<u32, ModelFileError> {
        let bytes = self.take(4, section)?;
        Ok(u32::from_le_bytes(bytes.try_into().unwrap()))
    }

    fn read_f64s(&mut self, count: usize, section: &'static str) -> Result<Vec<f64>, ModelFileError> {
        let needed = count
            .checked_mul(8)
            .ok_or(ModelFileError::CountOverflow {
                what: section,
                value: count,
            })?;
        let bytes = self.take(needed, section)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn read_u32s(&mut self, count: usize, section: &'static str) -> Result<Vec<u32>, ModelFileError> {
        let needed = count
            .checked_mul(4)
            .ok_or(ModelFileError::CountOverflow {
                what: section,
                value: count,
            })?;
        let bytes = self.take(needed, section)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses a model from container bytes, validating it fully.
pub fn decode_model(bytes: &[u8]) -> Result<MorphableModel, ModelFileError> {
    let mut reader = Reader { buf: bytes, pos: 0 };

    let magic = reader.take(4, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(ModelFileError::BadMagic {
            found: magic.try_into().unwrap(),
        });
    }
    let version = reader.read_u16("version")?;
    if version != MODEL_VERSION {
        return Err(ModelFileError::BadVersion { found: version });
    }
    let n = reader.read_u32("n_vertices")? as usize;
    let m_id = reader.read_u32("m_id")? as usize;
    let k_exp = reader.read_u32("k_exp")? as usize;
    let n_landmarks = reader.read_u32("n_landmarks")? as usize;
    let flags = reader.read_u32("flags")?;
    for (value, what) in [
        (n, "n_vertices"),
        (m_id, "m_id"),
        (k_exp, "k_exp"),
        (n_landmarks, "n_landmarks"),
    ] {
        if value == 0 {
            return Err(ModelFileError::ZeroCount { what });
        }
    }
    if flags & !(FLAG_TRIANGLES | FLAG_CONTOURS) != 0 {
        return Err(ModelFileError::UnknownFlags { bits: flags });
    }

    let rows = 3usize
        .checked_mul(n)
        .ok_or(ModelFileError::CountOverflow {
            what: "n_vertices",
            value: n,
        })?;
    let mean_shape = DVector::from_vec(reader.read_f64s(rows, "mean_shape")?);
    let id_values = reader.read_f64s(
        rows.checked_mul(m_id).ok_or(ModelFileError::CountOverflow {
            what: "id_basis",
            value: m_id,
        })?,
        "id_basis",
    )?;
    let id_basis = DMatrix::from_vec(rows, m_id, id_values);
    let id_stddev = DVector::from_vec(reader.read_f64s(m_id, "id_stddev")?);
    let exp_values = reader.read_f64s(
        rows.checked_mul(k_exp).ok_or(ModelFileError::CountOverflow {
            what: "exp_basis",
            value: k_exp,
        })?,
        "exp_basis",
    )?;
    let exp_basis = DMatrix::from_vec(rows, k_exp, exp_values);
    let exp_stddev = DVector::from_vec(reader.read_f64s(k_exp, "exp_stddev")?);

    let landmark_indices: Vec<usize> = reader
        .read_u32s(n_landmarks, "landmark_indices")?
        .into_iter()
        .map(|v| v as usize)
        .collect();

    let triangles = if flags & FLAG_TRIANGLES != 0 {
        let count = reader.read_u32("triangle count")? as usize;
        let raw = reader.read_u32s(
            count.checked_mul(3).ok_or(ModelFileError::CountOverflow {
                what: "triangles",
                value: count,
            })?,
            "triangles",
        )?;
        Some(
            raw.chunks_exact(3)
                .map(|c| [c[0] as usize, c[1] as usize, c[2] as usize])
                .collect(),
        )
    } else {
        None
    };

    let contour_candidates = if flags & FLAG_CONTOURS != 0 {
        let mut map = BTreeMap::new();
        for slot in 0..n_landmarks {
            let count = reader.read_u32("contour candidate count")? as usize;
            if count > 0 {
                let candidates: Vec<usize> = reader
                    .read_u32s(count, "contour candidates")?
                    .into_iter()
                    .map(|v| v as usize)
                    .collect();
                map.insert(slot, candidates);
            }
        }
        Some(map)
    } else {
        None
    };

    if reader.pos != bytes.len() {
        return Err(ModelFileError::TrailingBytes {
            offset: reader.pos,
            extra: bytes.len() - reader.pos,
        });
    }

    let model = MorphableModel {
        n_vertices: n,
        mean_shape,
        id_basis,
        id_stddev,
        exp_basis,
        exp_stddev,
        landmark_indices,
        contour_candidates,
        triangles,
    };
    model.validate()?;
    Ok(model)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<MorphableModel, ModelFileError> {
    let bytes = std::fs::read(path)?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synth_model, SynthModelSpec};

    fn sample_model() -> MorphableModel {
        let mut model = synth_model(
            &SynthModelSpec {
                n_vertices: 60,
                m_id: 4,
                k_exp: 2,
                n_landmarks: 18,
                smoothness: 1.0,
            },
            1,
        )
        .unwrap();
        model.triangles = Some(vec![[0, 1, 2], [3, 4, 5]]);
        model
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let model = sample_model();
        let bytes = encode_model(&model).unwrap();
        let decoded = decode_model(&bytes).unwrap();
        let rewritten = encode_model(&decoded).unwrap();
        assert_eq!(bytes, rewritten);
        assert_eq!(decoded, model);
    }

    #[test]
    fn round_trip_without_optional_sections() {
        let mut model = sample_model();
        model.triangles = None;
        model.contour_candidates = None;
        let bytes = encode_model(&model).unwrap();
        let decoded = decode_model(&bytes).unwrap();
        assert_eq!(decoded, model);
        assert!(decoded.triangles.is_none());
        assert!(decoded.contour_candidates.is_none());
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let model = sample_model();
        let mut bytes = encode_model(&model).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            decode_model(&bytes),
            Err(ModelFileError::BadMagic { .. })
        ));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let model = sample_model();
        let mut bytes = encode_model(&model).unwrap();
        bytes[4] = 9;
        assert!(matches!(
            decode_model(&bytes),
            Err(ModelFileError::BadVersion { found: 9 })
        ));
    }

    #[test]
    fn unknown_flags_are_rejected() {
        let model = sample_model();
        let mut bytes = encode_model(&model).unwrap();
        bytes[22] |= 0x40;
        assert!(matches!(
            decode_model(&bytes),
            Err(ModelFileError::UnknownFlags { .. })
        ));
    }

    #[test]
    fn truncated_basis_names_expected_and_actual() {
        let model = sample_model();
        let bytes = encode_model(&model).unwrap();
        // Cut inside the id_basis section: header(26) + mean(3n * 8) + a bit.
        let cut = 26 + 3 * model.n_vertices * 8 + 100;
        match decode_model(&bytes[..cut]) {
            Err(ModelFileError::Truncated {
                section,
                needed,
                available,
                ..
            }) => {
                assert_eq!(section, "id_basis");
                assert_eq!(needed, 3 * model.n_vertices * model.m_id() * 8);
                assert!(available < needed);
            }
            other => panic!("unexpected result {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let model = sample_model();
        let mut bytes = encode_model(&model).unwrap();
        bytes.push(0);
        assert!(matches!(
            decode_model(&bytes),
            Err(ModelFileError::TrailingBytes { extra: 1, .. })
        ));
    }

    #[test]
    fn semantic_corruption_is_rejected() {
        let model = sample_model();
        let mut bytes = encode_model(&model).unwrap();
        // Overwrite the first landmark index with an out-of-range vertex.
        let offset = 26
            + 8 * (3 * model.n_vertices * (1 + model.m_id() + model.k_exp())
                + model.m_id()
                + model.k_exp());
        bytes[offset..offset + 4].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            decode_model(&bytes),
            Err(ModelFileError::Invalid(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.m3dm");
        let model = sample_model();
        write_model(&model, &path).unwrap();
        let loaded = read_model(&path).unwrap();
        assert_eq!(loaded, model);
    }
}
