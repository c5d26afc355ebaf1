//! Frozen-encoder boundary: patch-grid feature maps, a deterministic toy
//! encoder for tests, global average pooling, and the BMFM interchange
//! format plus its JSONL label companion.
//!
//! Real pretrained encoders run out-of-process and hand their outputs over
//! as BMFM files; nothing here implements a transformer forward pass.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::frontend::Spectrogram;
use crate::ndgrad::NORM_EPSILON;
use crate::{Error, Result};

pub const PATCH: usize = 16;
const BMFM_MAGIC: &[u8; 4] = b"BMFM";
const BMFM_VERSION: u16 = 1;

/// H×W grid of D-dimensional patch embeddings, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(h: usize, w: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != h * w * d {
            return Err(Error::InvalidTensor {
                shape: vec![h, w, d],
                expected: h * w * d,
                actual: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "feature map contains non-finite values".to_string(),
            ));
        }
        Ok(Self { h, w, d, values })
    }

    /// Embedding at grid position (row, col).
    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        let base = (row * self.w + col) * self.d;
        &self.values[base..base + self.d]
    }

    pub fn n_patches(&self) -> usize {
        self.h * self.w
    }
}

/// Deterministic stand-in for a frozen pretrained encoder.
#[derive(Debug, Clone)]
pub struct ToyEncoderSpec {
    pub seed: u64,
    pub d: usize,
    pub patch: usize,
    pub positional: bool,
}

impl ToyEncoderSpec {
    pub fn new(seed: u64, d: usize) -> Self {
        Self {
            seed,
            d,
            patch: PATCH,
            positional: true,
        }
    }
}

/// Splits a spectrogram into non-overlapping 16×16 patches, each flattened
/// row-major, in row-major grid order.
pub fn patchify(spec: &Spectrogram) -> Result<Vec<Vec<f64>>> {
    if spec.n_mels % PATCH != 0 || spec.frames % PATCH != 0 {
        return Err(Error::InvalidArgument(format!(
            "spectrogram {}x{} is not divisible into {PATCH}x{PATCH} patches",
            spec.n_mels, spec.frames
        )));
    }
    let rows = spec.n_mels / PATCH;
    let cols = spec.frames / PATCH;
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut patch = Vec::with_capacity(PATCH * PATCH);
            for m in r * PATCH..(r + 1) * PATCH {
                for t in c * PATCH..(c + 1) * PATCH {
                    patch.push(spec.get(m, t));
                }
            }
            patches.push(patch);
        }
    }
    Ok(patches)
}

/// 2-D sinusoidal positional encoding: first half of the channels encodes
/// the row position, second half the column, with the usual geometric
/// frequency ladder.
fn positional_encoding(pos_row: usize, pos_col: usize, d: usize) -> Vec<f64> {
    let half = d / 2;
    (0..d)
        .map(|i| {
            let (pos, j) = if i < half {
                (pos_row as f64, i)
            } else {
                (pos_col as f64, i - half)
            };
            let denom = 10_000f64.powf((j - j % 2) as f64 / half.max(1) as f64);
            if j % 2 == 0 {
                (pos / denom).sin()
            } else {
                (pos / denom).cos()
            }
        })
        .collect()
}

fn layernorm(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let denom = (var + NORM_EPSILON).sqrt();
    for x in v {
        *x = (*x - mean) / denom;
    }
}

/// Frozen surrogate encoder: seeded Gaussian projection of each patch
/// (scaled 1/√256), plus sinusoidal positional encoding, then per-patch
/// layer normalization.
pub fn toy_encode(spec: &Spectrogram, enc: &ToyEncoderSpec) -> Result<FeatureMap> {
    let patches = patchify(spec)?;
    let rows = spec.n_mels / enc.patch;
    let cols = spec.frames / enc.patch;
    let p2 = enc.patch * enc.patch;

    let mut rng = ChaCha8Rng::seed_from_u64(enc.seed);
    let scale = 1.0 / (p2 as f64).sqrt();
    let proj: Vec<f64> = (0..enc.d * p2)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) * scale)
        .collect();

    let mut values = Vec::with_capacity(rows * cols * enc.d);
    for r in 0..rows {
        for c in 0..cols {
            let patch = &patches[r * cols + c];
            let pe = if enc.positional {
                positional_encoding(r, c, enc.d)
            } else {
                vec![0.0; enc.d]
            };
            let mut out: Vec<f64> = (0..enc.d)
                .map(|k| {
                    let row = &proj[k * p2..(k + 1) * p2];
                    let dot: f64 = row.iter().zip(patch).map(|(a, b)| a * b).sum();
                    dot + pe[k]
                })
                .collect();
            layernorm(&mut out);
            values.extend_from_slice(&out);
        }
    }
    FeatureMap::new(rows, cols, enc.d, values)
}

/// Mean over grid positions per channel.
pub fn global_average(fm: &FeatureMap) -> Vec<f64> {
    let n = fm.n_patches() as f64;
    let mut out = vec![0.0; fm.d];
    for p in 0..fm.n_patches() {
        for k in 0..fm.d {
            out[k] += fm.values[p * fm.d + k];
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Writes a batch of feature maps; 32-bit storage, little-endian.
pub fn write_fmap<P: AsRef<Path>>(path: P, batch: &[(String, FeatureMap)]) -> Result<()> {
    if let Some(d) = batch.first().map(|(_, fm)| fm.d) {
        if batch.iter().any(|(_, fm)| fm.d != d) {
            return Err(Error::Format(
                "all feature maps in one file must share D".to_string(),
            ));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BMFM_MAGIC)?;
    w.write_u16::<LittleEndian>(BMFM_VERSION)?;
    for (id, fm) in batch {
        let id_bytes = id.as_bytes();
        if id_bytes.len() > u16::MAX as usize {
            return Err(Error::Format(format!("record id too long: {} bytes", id_bytes.len())));
        }
        w.write_u16::<LittleEndian>(id_bytes.len() as u16)?;
        w.write_all(id_bytes)?;
        w.write_u16::<LittleEndian>(fm.h as u16)?;
        w.write_u16::<LittleEndian>(fm.w as u16)?;
        w.write_u32::<LittleEndian>(fm.d as u32)?;
        for &v in &fm.values {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn truncated() -> Error {
    Error::Format("truncated feature-map record".to_string())
}

/// Reads back a batch written by [`write_fmap`]. Round-trips bit-exactly
/// for values representable in 32 bits.
pub fn read_fmap<P: AsRef<Path>>(path: P) -> Result<Vec<(String, FeatureMap)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| truncated())?;
    if &magic != BMFM_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected BMFM")));
    }
    let version = r.read_u16::<LittleEndian>().map_err(|_| truncated())?;
    if version != BMFM_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut batch = Vec::new();
    let mut file_d: Option<usize> = None;
    loop {
        let id_len = match r.read_u16::<LittleEndian>() {
            Ok(n) => n as usize,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let mut id_bytes = vec![0u8; id_len];
        r.read_exact(&mut id_bytes).map_err(|_| truncated())?;
        let id = String::from_utf8(id_bytes)
            .map_err(|_| Error::Format("record id is not UTF-8".to_string()))?;
        let h = r.read_u16::<LittleEndian>().map_err(|_| truncated())? as usize;
        let w = r.read_u16::<LittleEndian>().map_err(|_| truncated())? as usize;
        let d = r.read_u32::<LittleEndian>().map_err(|_| truncated())? as usize;
        match file_d {
            Some(expected) if expected != d => {
                return Err(Error::Format(format!(
                    "embedding dim changed mid-file: {expected} then {d}"
                )));
            }
            None => file_d = Some(d),
            _ => {}
        }
        let mut values = Vec::with_capacity(h * w * d);
        for _ in 0..h * w * d {
            values.push(r.read_f32::<LittleEndian>().map_err(|_| truncated())? as f64);
        }
        batch.push((id, FeatureMap::new(h, w, d, values)?));
    }
    Ok(batch)
}

/// One line of the companion label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    /// Class indices present in the clip.
    pub labels: Vec<usize>,
}

pub fn write_labels<P: AsRef<Path>>(path: P, records: &[LabelRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec)
            .map_err(|e| Error::Format(format!("label serialization failed: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels<P: AsRef<Path>>(path: P) -> Result<Vec<LabelRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("bad label record on line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
