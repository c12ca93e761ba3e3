//! Versioned binary container for trained models.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    6 bytes  "EPAMv1"
//! version  u32      currently 1
//! length   u64      payload byte count
//! payload  ...      hyperparameters, encoding, X, y, alpha, packed chol
//! digest   32 bytes SHA-256 over everything before it
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so a load/save round trip is
//! bit-exact and loaded models predict identically to the originals.

use std::io::{Read, Write};

use ndarray::Array2;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::kernel::Hyperparams;
use super::model::TrainedModel;
use crate::dataset::{ColumnEncoder, EncodingMeta};

pub const MODEL_MAGIC: &[u8; 6] = b"EPAMv1";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model version {found} (supported: {MODEL_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("model file is truncated (expected {expected} bytes, found {found})")]
    Truncated { expected: usize, found: usize },
    #[error("model file checksum mismatch; the file is corrupt")]
    ChecksumMismatch,
    #[error("malformed model file: {0}")]
    Malformed(String),
}

struct PayloadWriter {
    buf: Vec<u8>,
}

impl PayloadWriter {
    fn new() -> Self {
        PayloadWriter { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }
    fn string(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct PayloadReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        PayloadReader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelIoError> {
        if self.pos + n > self.buf.len() {
            return Err(ModelIoError::Malformed(
                "payload ended early".to_string(),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ModelIoError> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64, ModelIoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, what: &str) -> Result<usize, ModelIoError> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|v| *v <= self.buf.len().saturating_mul(16))
            .ok_or_else(|| ModelIoError::Malformed(format!("implausible {what} count {v}")))
    }
    fn f64(&mut self) -> Result<f64, ModelIoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelIoError> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn string(&mut self) -> Result<String, ModelIoError> {
        let n = self.len("string length")?;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| ModelIoError::Malformed("invalid utf-8 string".to_string()))
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_encoding(w: &mut PayloadWriter, meta: &EncodingMeta) {
    w.u64(meta.columns.len() as u64);
    for c in &meta.columns {
        match c {
            ColumnEncoder::Numeric { name, mean, std } => {
                w.u8(0);
                w.string(name);
                w.f64(*mean);
                w.f64(*std);
            }
            ColumnEncoder::DroppedConstant { name } => {
                w.u8(1);
                w.string(name);
            }
            ColumnEncoder::Categorical { name, levels } => {
                w.u8(2);
                w.string(name);
                w.u64(levels.len() as u64);
                for l in levels {
                    w.string(l);
                }
            }
        }
    }
    w.f64(meta.target_mean);
    w.f64(meta.target_std);
}

fn read_encoding(r: &mut PayloadReader) -> Result<EncodingMeta, ModelIoError> {
    let count = r.len("column")?;
    let mut columns = Vec::with_capacity(count);
    for _ in 0..count {
        let tag = r.u8()?;
        let name = r.string()?;
        columns.push(match tag {
            0 => ColumnEncoder::Numeric {
                name,
                mean: r.f64()?,
                std: r.f64()?,
            },
            1 => ColumnEncoder::DroppedConstant { name },
            2 => {
                let n_levels = r.len("level")?;
                let mut levels = Vec::with_capacity(n_levels);
                for _ in 0..n_levels {
                    levels.push(r.string()?);
                }
                ColumnEncoder::Categorical { name, levels }
            }
            other => {
                return Err(ModelIoError::Malformed(format!(
                    "unknown column encoder tag {other}"
                )))
            }
        });
    }
    Ok(EncodingMeta {
        columns,
        target_mean: r.f64()?,
        target_std: r.f64()?,
    })
}

/// Serializes a trained model.
pub fn save_model(mut out: impl Write, model: &TrainedModel) -> Result<(), ModelIoError> {
    let mut p = PayloadWriter::new();
    let h = &model.hyperparams;
    p.u64(h.ard_scales.len() as u64);
    p.f64(h.signal_var);
    p.f64s(&h.ard_scales);
    p.f64(h.noise_var);
    p.f64(model.jitter);
    p.f64(model.lml);
    p.u8(model.converged as u8);
    write_encoding(&mut p, &model.encoding);

    let n = model.x_train.nrows();
    let d = model.x_train.ncols();
    p.u64(n as u64);
    p.u64(d as u64);
    p.f64s(model.x_train.as_slice().expect("standard layout"));
    p.f64s(&model.y_train);
    p.f64s(&model.alpha);
    // Lower triangle of the Cholesky factor, row by row.
    for i in 0..n {
        for j in 0..=i {
            p.f64(model.chol[[i, j]]);
        }
    }

    let mut head = Vec::with_capacity(18);
    head.extend_from_slice(MODEL_MAGIC);
    head.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    head.extend_from_slice(&(p.buf.len() as u64).to_le_bytes());

    let mut hasher = Sha256::new();
    hasher.update(&head);
    hasher.update(&p.buf);
    let digest = hasher.finalize();

    out.write_all(&head)?;
    out.write_all(&p.buf)?;
    out.write_all(&digest)?;
    out.flush()?;
    Ok(())
}

/// Loads a model saved by [`save_model`], verifying length and checksum
/// before parsing.
pub fn load_model(mut input: impl Read) -> Result<TrainedModel, ModelIoError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 18 {
        return Err(ModelIoError::Truncated {
            expected: 18,
            found: bytes.len(),
        });
    }
    if &bytes[..6] != MODEL_MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(ModelIoError::UnsupportedVersion { found: version });
    }
    let payload_len = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
    let expected = 18 + payload_len + 32;
    if bytes.len() != expected {
        return Err(ModelIoError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let mut hasher = Sha256::new();
    hasher.update(&bytes[..18 + payload_len]);
    let digest = hasher.finalize();
    if digest.as_slice() != &bytes[18 + payload_len..] {
        return Err(ModelIoError::ChecksumMismatch);
    }

    let mut r = PayloadReader::new(&bytes[18..18 + payload_len]);
    let d_h = r.len("scale")?;
    let signal_var = r.f64()?;
    let ard_scales = r.f64s(d_h)?;
    let noise_var = r.f64()?;
    let jitter = r.f64()?;
    let lml = r.f64()?;
    let converged = r.u8()? != 0;
    let encoding = read_encoding(&mut r)?;
    let n = r.len("row")?;
    let d = r.len("column")?;
    if d != d_h {
        return Err(ModelIoError::Malformed(format!(
            "input width {d} does not match {d_h} ARD scales"
        )));
    }
    let x_raw = r.f64s(n * d)?;
    let x_train = Array2::from_shape_vec((n, d), x_raw)
        .map_err(|e| ModelIoError::Malformed(e.to_string()))?;
    let y_train = r.f64s(n)?;
    let alpha = r.f64s(n)?;
    let tri = r.f64s(n * (n + 1) / 2)?;
    if !r.done() {
        return Err(ModelIoError::Malformed(
            "trailing bytes after payload".to_string(),
        ));
    }
    let mut chol = Array2::<f64>::zeros((n, n));
    let mut it = tri.into_iter();
    for i in 0..n {
        for j in 0..=i {
            chol[[i, j]] = it.next().unwrap();
        }
    }

    Ok(TrainedModel {
        hyperparams: Hyperparams {
            signal_var,
            ard_scales,
            noise_var,
        },
        x_train,
        y_train,
        alpha,
        chol,
        jitter,
        lml,
        converged,
        encoding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpr::model::model_with_fixed_hyperparams;
    use ndarray::Array2;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model() -> TrainedModel {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 12;
        let mut x = Array2::<f64>::zeros((n, 3));
        for v in x.iter_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = Hyperparams {
            signal_var: 1.2,
            ard_scales: vec![0.7, 1.0, 1.9],
            noise_var: 0.08,
        };
        model_with_fixed_hyperparams(x, y, h).unwrap()
    }

    #[test]
    fn round_trip_preserves_predictions_bit_exactly() {
        let model = small_model();
        let mut buf = Vec::new();
        save_model(&mut buf, &model).unwrap();
        let loaded = load_model(buf.as_slice()).unwrap();
        assert_eq!(loaded.hyperparams, model.hyperparams);
        assert_eq!(loaded.lml, model.lml);
        for q in [[0.0, 0.0, 0.0], [1.0, -1.0, 0.5], [3.0, 3.0, -3.0]] {
            let (m0, v0) = model.posterior(&q);
            let (m1, v1) = loaded.posterior(&q);
            assert_eq!(m0.to_bits(), m1.to_bits());
            assert_eq!(v0.to_bits(), v1.to_bits());
        }
    }

    #[test]
    fn save_is_deterministic() {
        let model = small_model();
        let mut a = Vec::new();
        let mut b = Vec::new();
        save_model(&mut a, &model).unwrap();
        save_model(&mut b, &model).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let model = small_model();
        let mut buf = Vec::new();
        save_model(&mut buf, &model).unwrap();
        for cut in [buf.len() - 1, buf.len() - 40, 20, 10] {
            match load_model(&buf[..cut]) {
                Err(ModelIoError::Truncated { .. }) => {}
                other => panic!("cut at {cut}: expected Truncated, got {other:?}"),
            }
        }
    }

    #[test]
    fn corrupted_payload_fails_the_checksum() {
        let model = small_model();
        let mut buf = Vec::new();
        save_model(&mut buf, &model).unwrap();
        let mid = buf.len() / 2;
        buf[mid] ^= 0xff;
        match load_model(buf.as_slice()) {
            Err(ModelIoError::ChecksumMismatch) => {}
            other => panic!("expected ChecksumMismatch, got {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_and_version_are_rejected() {
        let model = small_model();
        let mut buf = Vec::new();
        save_model(&mut buf, &model).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        match load_model(bad_magic.as_slice()) {
            Err(ModelIoError::BadMagic) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }

        let mut bad_version = buf;
        bad_version[6] = 99;
        match load_model(bad_version.as_slice()) {
            Err(ModelIoError::UnsupportedVersion { found: 99 }) => {}
            other => panic!("expected UnsupportedVersion, got {other:?}"),
        }
    }
}
