//! Binary model file (`HGRQ`) and its JSON sidecar.
//!
//! Layout, all little-endian: magic, version, config block (alpha, groups,
//! layers, K_w, K_f, d, fps, variant tag, flags, hidden width), part count,
//! then per part its kind, feature columns, normalization, encoder and
//! decoder layers, and one codebook per group. Reals are `f32`.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::Serialize;

use super::codebook::Codebook;
use super::config::{FeatureSplit, PartKind, QuantizerConfig};
use super::model::PartTokenizer;
use super::network::{Dense, PartNetwork};
use crate::error::{Error, Result};
use crate::mano::FeatureVariant;

pub const MODEL_MAGIC: &[u8; 4] = b"HGRQ";
pub const MODEL_VERSION: u32 = 1;

const FLAG_PART_LEVEL: u32 = 1;
/// Largest dimension accepted while reading, to bound allocations.
const MAX_DIM: u32 = 1 << 20;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_reals<'a>(out: &mut Vec<u8>, vals: impl IntoIterator<Item = &'a f64>) {
    for &v in vals {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn put_dense(out: &mut Vec<u8>, d: &Dense) {
    put_u32(out, d.inputs() as u32);
    put_u32(out, d.outputs() as u32);
    put_u32(out, d.tanh as u32);
    put_reals(out, d.w.iter());
    put_reals(out, d.b.iter());
}

/// Serializes a tokenizer. Weights are narrowed to `f32`.
pub fn write_model(tok: &PartTokenizer) -> Vec<u8> {
    let c = &tok.config;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut out, MODEL_VERSION);
    for v in [
        c.alpha,
        c.groups,
        c.layers,
        c.k_wrist,
        c.k_finger,
        c.dim,
        c.fps,
        c.variant.dim(),
    ] {
        put_u32(&mut out, v as u32);
    }
    put_u32(&mut out, if c.part_level { FLAG_PART_LEVEL } else { 0 });
    put_u32(&mut out, c.hidden.unwrap_or(0) as u32);
    put_u32(&mut out, tok.parts.len() as u32);
    for p in &tok.parts {
        put_u32(&mut out, p.kind.code());
        put_u32(&mut out, p.columns.len() as u32);
        for &col in &p.columns {
            put_u32(&mut out, col as u32);
        }
        put_reals(&mut out, p.net.shift.iter());
        put_reals(&mut out, p.net.scale.iter());
        for stack in [&p.net.encoder, &p.net.decoder] {
            put_u32(&mut out, stack.len() as u32);
            for d in stack.iter() {
                put_dense(&mut out, d);
            }
        }
        put_u32(&mut out, p.books.len() as u32);
        for b in &p.books {
            put_u32(&mut out, b.len() as u32);
            put_u32(&mut out, b.width() as u32);
            put_reals(&mut out, b.codes.iter());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated at byte {} reading {what}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let v = self.u32(what)?;
        if v > MAX_DIM {
            return Err(Error::Format(format!("{what} {v} exceeds limit")));
        }
        Ok(v as usize)
    }

    fn reals(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("{what} too large")))?;
        let b = self.take(bytes, what)?;
        let vals: Vec<f64> = b
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite value in {what}")));
        }
        Ok(vals)
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format(format!("{what} too large")))?;
        let vals = self.reals(n, what)?;
        Ok(Array2::from_shape_vec((rows, cols), vals).expect("length checked"))
    }

    fn dense(&mut self) -> Result<Dense> {
        let inputs = self.dim("layer inputs")?;
        let outputs = self.dim("layer outputs")?;
        let tanh = match self.u32("activation")? {
            0 => false,
            1 => true,
            v => return Err(Error::Format(format!("unknown activation {v}"))),
        };
        let w = self.matrix(inputs, outputs, "layer weights")?;
        let b = Array1::from(self.reals(outputs, "layer bias")?);
        Ok(Dense { w, b, tanh })
    }
}

/// Reals a file with this config stores, so a header cannot request more
/// memory than the file could fill.
fn stored_reals(config: &QuantizerConfig) -> u128 {
    let split = FeatureSplit::for_variant(config.variant);
    let d = config.dim as u128;
    config
        .parts()
        .into_iter()
        .map(|kind| {
            let w = split.columns(kind).len() as u128;
            let s = config.alpha as u128 * w;
            let net = match config.hidden {
                None => 2 * s * d + d + s,
                Some(h) => {
                    let h = h as u128;
                    2 * (s * h + h * d) + 2 * h + d + s
                }
            };
            let books = config.groups as u128
                * config.part_codebook_size(kind) as u128
                * config.group_width() as u128;
            2 * w + net + books
        })
        .sum()
}

/// Parses a model file and checks it against its own config.
pub fn read_model(bytes: &[u8]) -> Result<PartTokenizer> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::Format("bad magic, not an HGRQ model".into()));
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut head = [0usize; 8];
    for (i, name) in [
        "alpha", "groups", "layers", "K_w", "K_f", "d", "fps", "variant",
    ]
    .iter()
    .enumerate()
    {
        head[i] = r.dim(name)?;
    }
    let variant = FeatureVariant::from_dim(head[7])
        .ok_or_else(|| Error::Format(format!("unknown variant tag {}", head[7])))?;
    let flags = r.u32("flags")?;
    let hidden = r.dim("hidden")?;
    let config = QuantizerConfig {
        alpha: head[0],
        groups: head[1],
        layers: head[2],
        k_wrist: head[3],
        k_finger: head[4],
        dim: head[5],
        fps: head[6],
        variant,
        part_level: flags & FLAG_PART_LEVEL != 0,
        hidden: (hidden > 0).then_some(hidden),
    };
    config.validate()?;
    if stored_reals(&config) * 4 > (bytes.len() - r.pos) as u128 {
        return Err(Error::Format("file too short for its config".into()));
    }
    let mut tok = PartTokenizer::new(config)?;
    let count = r.u32("part count")? as usize;
    if count != tok.parts.len() {
        return Err(Error::Format(format!(
            "{count} parts, config implies {}",
            tok.parts.len()
        )));
    }
    for p in tok.parts.iter_mut() {
        let kind = PartKind::from_code(r.u32("part kind")?)
            .ok_or_else(|| Error::Format("unknown part kind".into()))?;
        if kind != p.kind {
            return Err(Error::Format(format!(
                "expected {:?} part, found {kind:?}",
                p.kind
            )));
        }
        let ncols = r.dim("column count")?;
        let mut columns = Vec::with_capacity(ncols.min(bytes.len() / 4));
        for _ in 0..ncols {
            columns.push(r.u32("column")? as usize);
        }
        if columns != p.columns {
            return Err(Error::Format(format!(
                "{kind:?} columns do not match the variant split"
            )));
        }
        let reference = p.net.clone();
        let mut net: PartNetwork = reference.clone();
        net.shift = Array1::from(r.reals(ncols, "shift")?);
        net.scale = Array1::from(r.reals(ncols, "scale")?);
        if net.scale.iter().any(|&s| s == 0.0) {
            return Err(Error::Format("zero normalization scale".into()));
        }
        for (stack, expect) in [
            (&mut net.encoder, &reference.encoder),
            (&mut net.decoder, &reference.decoder),
        ] {
            let n = r.u32("layer count")? as usize;
            if n != expect.len() {
                return Err(Error::Format(format!(
                    "{n} layers, expected {}",
                    expect.len()
                )));
            }
            for (slot, want) in stack.iter_mut().zip(expect) {
                let d = r.dense()?;
                if d.w.dim() != want.w.dim() || d.tanh != want.tanh {
                    return Err(Error::Format(format!(
                        "layer shape {:?} does not match config {:?}",
                        d.w.dim(),
                        want.w.dim()
                    )));
                }
                *slot = d;
            }
        }
        p.net = net;
        let groups = r.u32("group count")? as usize;
        if groups != p.books.len() {
            return Err(Error::Format(format!(
                "{groups} codebooks, expected {}",
                p.books.len()
            )));
        }
        let k_expect = tok.config.part_codebook_size(kind);
        let gw = tok.config.group_width();
        for book in p.books.iter_mut() {
            let k = r.dim("codebook size")?;
            let w = r.dim("codebook width")?;
            if k != k_expect || w != gw {
                return Err(Error::Format(format!(
                    "codebook {k}x{w}, expected {k_expect}x{gw}"
                )));
            }
            *book = Codebook::from_codes(r.matrix(k, w, "codebook")?);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(tok)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    format: &'static str,
    version: u32,
    config: &'a QuantizerConfig,
    tokens_per_hand_second: usize,
    parts: Vec<SidecarPart>,
}

#[derive(Serialize)]
struct SidecarPart {
    kind: PartKind,
    width: usize,
    parameters: usize,
    codebooks: usize,
    codebook_size: usize,
}

/// Human-readable summary written next to the binary model.
pub fn sidecar_json(tok: &PartTokenizer) -> String {
    let s = Sidecar {
        format: "HGRQ",
        version: MODEL_VERSION,
        config: &tok.config,
        tokens_per_hand_second: tok.config.tokens_per_hand_second(),
        parts: tok
            .parts
            .iter()
            .map(|p| SidecarPart {
                kind: p.kind,
                width: p.columns.len(),
                parameters: p.net.param_count(),
                codebooks: p.books.len(),
                codebook_size: p.books.first().map_or(0, Codebook::len),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&s).expect("plain data")
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the model and its JSON sidecar.
pub fn save_model(path: impl AsRef<Path>, tok: &PartTokenizer) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path)?;
    f.write_all(&write_model(tok))?;
    std::fs::write(sidecar_path(path), sidecar_json(tok))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PartTokenizer> {
    read_model(&std::fs::read(path)?)
}
