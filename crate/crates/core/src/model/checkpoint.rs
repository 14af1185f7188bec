//! Binary checkpoint format: magic "CNCK", version, kind, encoder config,
//! training metadata, then length-prefixed named little-endian f64 blobs.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{AdapterStack, CtcHead, Encoder, EncoderConfig, Linear};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CNCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("unknown checkpoint kind {0}")]
    BadKind(u32),
    #[error("checkpoint truncated or corrupt: {0}")]
    Truncated(String),
    #[error("checkpoint config does not match: {0}")]
    ConfigMismatch(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter {0} missing from checkpoint")]
    MissingParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CkptKind {
    Encoder,
    Adapters,
    Head,
}

impl CkptKind {
    fn code(self) -> u32 {
        match self {
            CkptKind::Encoder => 1,
            CkptKind::Adapters => 2,
            CkptKind::Head => 3,
        }
    }

    fn from_code(c: u32) -> Result<Self, CkptError> {
        match c {
            1 => Ok(CkptKind::Encoder),
            2 => Ok(CkptKind::Adapters),
            3 => Ok(CkptKind::Head),
            other => Err(CkptError::BadKind(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub step: u64,
    pub dev_metric: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CkptKind,
    pub config: EncoderConfig,
    pub meta: TrainMeta,
    pub params: Vec<(String, Tensor)>,
}

fn io_err(path: &Path, source: std::io::Error) -> CkptError {
    CkptError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn write_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CkptError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    write_u32(&mut buf, VERSION);
    write_u32(&mut buf, ckpt.kind.code());
    let c = &ckpt.config;
    for v in [
        c.num_blocks,
        c.model_dim,
        c.num_heads,
        c.ffn_dim,
        c.max_frames,
        c.adapter_bottleneck,
        c.num_mels,
        c.vocab_size,
        c.use_positional as usize,
        c.frame_stack,
    ] {
        write_u32(&mut buf, v as u32);
    }
    write_u64(&mut buf, ckpt.meta.step);
    buf.extend_from_slice(&ckpt.meta.dev_metric.to_le_bytes());
    write_u64(&mut buf, ckpt.meta.seed);
    write_u32(&mut buf, ckpt.params.len() as u32);
    for (name, t) in &ckpt.params {
        write_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        write_u32(&mut buf, t.shape().len() as u32);
        for d in t.shape() {
            write_u32(&mut buf, *d as u32);
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&buf).map_err(|e| io_err(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CkptError> {
        if self.pos + n > self.buf.len() {
            return Err(CkptError::Truncated(what.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CkptError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CkptError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, CkptError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CkptError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut buf)
        .map_err(|e| io_err(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4, "magic").map_err(|_| CkptError::BadMagic)? != MAGIC {
        return Err(CkptError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CkptError::BadVersion(version));
    }
    let kind = CkptKind::from_code(r.u32("kind")?)?;
    let mut cfg_fields = [0u32; 10];
    for (i, f) in cfg_fields.iter_mut().enumerate() {
        *f = r.u32(&format!("config field {i}"))?;
    }
    let config = EncoderConfig {
        num_blocks: cfg_fields[0] as usize,
        model_dim: cfg_fields[1] as usize,
        num_heads: cfg_fields[2] as usize,
        ffn_dim: cfg_fields[3] as usize,
        max_frames: cfg_fields[4] as usize,
        adapter_bottleneck: cfg_fields[5] as usize,
        num_mels: cfg_fields[6] as usize,
        vocab_size: cfg_fields[7] as usize,
        use_positional: cfg_fields[8] != 0,
        frame_stack: cfg_fields[9] as usize,
    };
    let meta = TrainMeta {
        step: r.u64("meta.step")?,
        dev_metric: r.f64("meta.dev_metric")?,
        seed: r.u64("meta.seed")?,
    };
    let count = r.u32("param count")? as usize;
    let mut params = Vec::with_capacity(count);
    for pi in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| CkptError::Truncated(format!("param {pi} name not utf-8")))?;
        let ndim = r.u32("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64(&format!("data of {name}"))?);
        }
        let t = Tensor::new(shape, data)
            .map_err(|e| CkptError::Truncated(format!("param {name}: {e}")))?;
        params.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(CkptError::Truncated(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        kind,
        config,
        meta,
        params,
    })
}

fn take_param(
    params: &[(String, Tensor)],
    name: &str,
    expected: &[usize],
) -> Result<Tensor, CkptError> {
    let t = params
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| CkptError::MissingParam(name.to_string()))?;
    if t.shape() != expected {
        return Err(CkptError::ShapeMismatch {
            name: name.to_string(),
            expected: expected.to_vec(),
            found: t.shape().to_vec(),
        });
    }
    Ok(t.clone())
}

fn take_linear(
    params: &[(String, Tensor)],
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<Linear, CkptError> {
    Ok(Linear {
        w: take_param(params, &format!("{prefix}.w"), &[fan_in, fan_out])?,
        b: take_param(params, &format!("{prefix}.b"), &[fan_out])?,
    })
}

fn ensure(kind_ok: bool, ckpt: &Checkpoint, want: CkptKind) -> Result<(), CkptError> {
    if !kind_ok {
        return Err(CkptError::ConfigMismatch(format!(
            "expected a {:?} checkpoint, found {:?}",
            want, ckpt.kind
        )));
    }
    Ok(())
}

impl Encoder {
    pub fn to_checkpoint(&self, meta: TrainMeta) -> Checkpoint {
        Checkpoint {
            kind: CkptKind::Encoder,
            config: self.cfg.clone(),
            meta,
            params: self
                .named_params()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Encoder, CkptError> {
        ensure(ckpt.kind == CkptKind::Encoder, ckpt, CkptKind::Encoder)?;
        let cfg = ckpt.config.clone();
        cfg.validate()
            .map_err(|e| CkptError::ConfigMismatch(e.to_string()))?;
        let d = cfg.model_dim;
        let p = &ckpt.params;
        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for i in 0..cfg.num_blocks {
            let pr = format!("block{i}");
            blocks.push(super::Block {
                ln1_g: take_param(p, &format!("{pr}.ln1.g"), &[d])?,
                ln1_b: take_param(p, &format!("{pr}.ln1.b"), &[d])?,
                wq: take_linear(p, &format!("{pr}.wq"), d, d)?,
                wk: take_linear(p, &format!("{pr}.wk"), d, d)?,
                wv: take_linear(p, &format!("{pr}.wv"), d, d)?,
                wo: take_linear(p, &format!("{pr}.wo"), d, d)?,
                ln2_g: take_param(p, &format!("{pr}.ln2.g"), &[d])?,
                ln2_b: take_param(p, &format!("{pr}.ln2.b"), &[d])?,
                ffn1: take_linear(p, &format!("{pr}.ffn1"), d, cfg.ffn_dim)?,
                ffn2: take_linear(p, &format!("{pr}.ffn2"), cfg.ffn_dim, d)?,
            });
        }
        Ok(Encoder {
            input: take_linear(p, "input", cfg.num_mels * cfg.frame_stack, d)?,
            blocks,
            out_ln_g: take_param(p, "out_ln.g", &[d])?,
            out_ln_b: take_param(p, "out_ln.b", &[d])?,
            cfg,
        })
    }
}

impl AdapterStack {
    pub fn to_checkpoint(&self, cfg: &EncoderConfig, meta: TrainMeta) -> Checkpoint {
        Checkpoint {
            kind: CkptKind::Adapters,
            config: cfg.clone(),
            meta,
            params: self
                .named_params()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    /// `expected` is the config of the encoder the stack will plug into; a
    /// checkpoint saved under a different architecture is rejected.
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        expected: &EncoderConfig,
    ) -> Result<AdapterStack, CkptError> {
        ensure(ckpt.kind == CkptKind::Adapters, ckpt, CkptKind::Adapters)?;
        if ckpt.config != *expected {
            return Err(CkptError::ConfigMismatch(format!(
                "adapter checkpoint was trained under {:?}",
                ckpt.config
            )));
        }
        let (d, b) = (expected.model_dim, expected.adapter_bottleneck);
        let p = &ckpt.params;
        let mut blocks = Vec::with_capacity(expected.num_blocks);
        for i in 0..expected.num_blocks {
            let adapter = |slot: &str| -> Result<super::Adapter, CkptError> {
                let pr = format!("block{i}.adapter_{slot}");
                Ok(super::Adapter {
                    down: take_linear(p, &format!("{pr}.down"), d, b)?,
                    up: take_linear(p, &format!("{pr}.up"), b, d)?,
                })
            };
            blocks.push(super::BlockAdapters {
                post_attn: adapter("attn")?,
                post_ffn: adapter("ffn")?,
            });
        }
        Ok(AdapterStack { blocks })
    }
}

impl CtcHead {
    pub fn to_checkpoint(&self, cfg: &EncoderConfig, meta: TrainMeta) -> Checkpoint {
        Checkpoint {
            kind: CkptKind::Head,
            config: cfg.clone(),
            meta,
            params: self
                .named_params()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        expected: &EncoderConfig,
    ) -> Result<CtcHead, CkptError> {
        ensure(ckpt.kind == CkptKind::Head, ckpt, CkptKind::Head)?;
        if ckpt.config != *expected {
            return Err(CkptError::ConfigMismatch(format!(
                "head checkpoint was trained under {:?}",
                ckpt.config
            )));
        }
        Ok(CtcHead {
            proj: take_linear(
                &ckpt.params,
                "head",
                expected.model_dim,
                expected.num_classes(),
            )?,
        })
    }
}
