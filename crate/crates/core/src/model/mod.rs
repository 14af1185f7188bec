//! The frozen Transformer encoder (teacher), the adapter-augmented encoder
//! (student), and the linear CTC recognition head.
//!
//! Adapter placement: one bottleneck-residual adapter after the
//! self-attention residual and one after the FFN residual of every block.
//! Up-projections are zero-initialized, so an untrained adapter stack is an
//! exact identity and the student reproduces the teacher bitwise.

mod checkpoint;
pub mod ctc;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CkptError, CkptKind, TrainMeta};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsp::FeatureMatrix;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("input has {frames} frames, encoder allows at most {max}")]
    OverLength { frames: usize, max: usize },
    #[error("target of length {target_len} (min alignment {needed}) infeasible for {frames} frames")]
    InfeasibleAlignment {
        target_len: usize,
        needed: usize,
        frames: usize,
    },
    #[error("target token {token} out of range for {classes} classes (last is blank)")]
    BadTarget { token: usize, classes: usize },
    #[error("invalid encoder config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub num_blocks: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_frames: usize,
    pub adapter_bottleneck: usize,
    pub num_mels: usize,
    pub vocab_size: usize,
    /// Sinusoidal positional encoding at the input; test configurations may
    /// disable it to check permutation behaviour.
    pub use_positional: bool,
    /// Temporal downsampling: `frame_stack` consecutive feature frames are
    /// concatenated into one encoder step, shortening the sequence CTC must
    /// align over (any trailing remainder frames are dropped).
    #[serde(default = "default_frame_stack")]
    pub frame_stack: usize,
}

fn default_frame_stack() -> usize {
    1
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_blocks: 4,
            model_dim: 64,
            num_heads: 4,
            ffn_dim: 128,
            max_frames: 512,
            adapter_bottleneck: 16,
            num_mels: 26,
            vocab_size: 8,
            use_positional: true,
            frame_stack: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.frame_stack == 0 {
            return Err(ModelError::BadConfig("frame_stack must be at least 1".into()));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.adapter_bottleneck >= self.model_dim {
            return Err(ModelError::BadConfig(format!(
                "adapter_bottleneck {} must be smaller than model_dim {}",
                self.adapter_bottleneck, self.model_dim
            )));
        }
        if self.num_blocks == 0 || self.vocab_size == 0 {
            return Err(ModelError::BadConfig("empty model".into()));
        }
        Ok(())
    }

    /// Output classes of the CTC head: vocabulary plus blank.
    pub fn num_classes(&self) -> usize {
        self.vocab_size + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor, // [in, out]
    pub b: Tensor, // [out]
}

impl Linear {
    fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Linear {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Linear {
            w: Tensor::new(vec![fan_in, fan_out], data).unwrap(),
            b: Tensor::zeros(vec![fan_out]),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: Tensor::zeros(vec![fan_in, fan_out]),
            b: Tensor::zeros(vec![fan_out]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub ffn1: Linear,
    pub ffn2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub input: Linear,
    pub blocks: Vec<Block>,
    pub out_ln_g: Tensor,
    pub out_ln_b: Tensor,
}

/// Bottleneck residual adapter: `h + up(gelu(down(h)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub down: Linear,
    pub up: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockAdapters {
    pub post_attn: Adapter,
    pub post_ffn: Adapter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterStack {
    pub blocks: Vec<BlockAdapters>,
}

/// Frozen base encoder plus trainable adapters. The base must stay bitwise
/// identical to the teacher; only adapter parameters ever receive gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterEncoder {
    pub base: Encoder,
    pub adapters: AdapterStack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcHead {
    pub proj: Linear, // [D, vocab+1], last class is blank
}

impl Encoder {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Encoder, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.model_dim;
        let blocks = (0..cfg.num_blocks)
            .map(|_| Block {
                ln1_g: Tensor::filled(vec![d], 1.0),
                ln1_b: Tensor::zeros(vec![d]),
                wq: Linear::xavier(&mut rng, d, d),
                wk: Linear::xavier(&mut rng, d, d),
                wv: Linear::xavier(&mut rng, d, d),
                wo: Linear::xavier(&mut rng, d, d),
                ln2_g: Tensor::filled(vec![d], 1.0),
                ln2_b: Tensor::zeros(vec![d]),
                ffn1: Linear::xavier(&mut rng, d, cfg.ffn_dim),
                ffn2: Linear::xavier(&mut rng, cfg.ffn_dim, d),
            })
            .collect();
        Ok(Encoder {
            cfg: cfg.clone(),
            input: Linear::xavier(&mut rng, cfg.num_mels * cfg.frame_stack, d),
            blocks,
            out_ln_g: Tensor::filled(vec![d], 1.0),
            out_ln_b: Tensor::zeros(vec![d]),
        })
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("input.w".into(), &self.input.w),
            ("input.b".into(), &self.input.b),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("block{i}");
            out.push((format!("{p}.ln1.g"), &b.ln1_g));
            out.push((format!("{p}.ln1.b"), &b.ln1_b));
            for (n, l) in [("wq", &b.wq), ("wk", &b.wk), ("wv", &b.wv), ("wo", &b.wo)] {
                out.push((format!("{p}.{n}.w"), &l.w));
                out.push((format!("{p}.{n}.b"), &l.b));
            }
            out.push((format!("{p}.ln2.g"), &b.ln2_g));
            out.push((format!("{p}.ln2.b"), &b.ln2_b));
            out.push((format!("{p}.ffn1.w"), &b.ffn1.w));
            out.push((format!("{p}.ffn1.b"), &b.ffn1.b));
            out.push((format!("{p}.ffn2.w"), &b.ffn2.w));
            out.push((format!("{p}.ffn2.b"), &b.ffn2.b));
        }
        out.push(("out_ln.g".into(), &self.out_ln_g));
        out.push(("out_ln.b".into(), &self.out_ln_b));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("input.w".into(), &mut self.input.w),
            ("input.b".into(), &mut self.input.b),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("block{i}");
            out.push((format!("{p}.ln1.g"), &mut b.ln1_g));
            out.push((format!("{p}.ln1.b"), &mut b.ln1_b));
            for (n, l) in [
                ("wq", &mut b.wq),
                ("wk", &mut b.wk),
                ("wv", &mut b.wv),
                ("wo", &mut b.wo),
            ] {
                out.push((format!("{p}.{n}.w"), &mut l.w));
                out.push((format!("{p}.{n}.b"), &mut l.b));
            }
            out.push((format!("{p}.ln2.g"), &mut b.ln2_g));
            out.push((format!("{p}.ln2.b"), &mut b.ln2_b));
            out.push((format!("{p}.ffn1.w"), &mut b.ffn1.w));
            out.push((format!("{p}.ffn1.b"), &mut b.ffn1.b));
            out.push((format!("{p}.ffn2.w"), &mut b.ffn2.w));
            out.push((format!("{p}.ffn2.b"), &mut b.ffn2.b));
        }
        out.push(("out_ln.g".into(), &mut self.out_ln_g));
        out.push(("out_ln.b".into(), &mut self.out_ln_b));
        out
    }

    pub fn checksum(&self) -> String {
        params_checksum(&self.named_params())
    }
}

impl AdapterStack {
    /// Zero-initialized up-projections make the stack an exact identity.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> AdapterStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, b) = (cfg.model_dim, cfg.adapter_bottleneck);
        let blocks = (0..cfg.num_blocks)
            .map(|_| BlockAdapters {
                post_attn: Adapter {
                    down: Linear::xavier(&mut rng, d, b),
                    up: Linear::zeros(b, d),
                },
                post_ffn: Adapter {
                    down: Linear::xavier(&mut rng, d, b),
                    up: Linear::zeros(b, d),
                },
            })
            .collect();
        AdapterStack { blocks }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for (slot, a) in [("attn", &b.post_attn), ("ffn", &b.post_ffn)] {
                let p = format!("block{i}.adapter_{slot}");
                out.push((format!("{p}.down.w"), &a.down.w));
                out.push((format!("{p}.down.b"), &a.down.b));
                out.push((format!("{p}.up.w"), &a.up.w));
                out.push((format!("{p}.up.b"), &a.up.b));
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (slot, a) in [("attn", &mut b.post_attn), ("ffn", &mut b.post_ffn)] {
                let p = format!("block{i}.adapter_{slot}");
                out.push((format!("{p}.down.w"), &mut a.down.w));
                out.push((format!("{p}.down.b"), &mut a.down.b));
                out.push((format!("{p}.up.w"), &mut a.up.w));
                out.push((format!("{p}.up.b"), &mut a.up.b));
            }
        }
        out
    }

    pub fn checksum(&self) -> String {
        params_checksum(&self.named_params())
    }
}

impl CtcHead {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> CtcHead {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CtcHead {
            proj: Linear::xavier(&mut rng, cfg.model_dim, cfg.num_classes()),
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("head.w".into(), &self.proj.w),
            ("head.b".into(), &self.proj.b),
        ]
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("head.w".into(), &mut self.proj.w),
            ("head.b".into(), &mut self.proj.b),
        ]
    }

    pub fn checksum(&self) -> String {
        params_checksum(&self.named_params())
    }
}

/// SHA-256 over names, shapes and little-endian payloads, in order.
pub fn params_checksum(named: &[(String, &Tensor)]) -> String {
    let mut hasher = Sha256::new();
    for (name, t) in named {
        hasher.update(name.as_bytes());
        for d in t.shape() {
            hasher.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Tape binding and forward passes

#[derive(Debug, Clone, Copy)]
struct LinearBind {
    w: Var,
    b: Var,
}

struct BlockBind {
    ln1: (Var, Var),
    wq: LinearBind,
    wk: LinearBind,
    wv: LinearBind,
    wo: LinearBind,
    ln2: (Var, Var),
    ffn1: LinearBind,
    ffn2: LinearBind,
    post_attn: Option<(LinearBind, LinearBind)>,
    post_ffn: Option<(LinearBind, LinearBind)>,
}

/// Encoder parameters bound onto a tape; reusable across the samples of a
/// batch so per-parameter gradients accumulate on one leaf.
pub struct EncoderBind {
    cfg: EncoderConfig,
    input: LinearBind,
    blocks: Vec<BlockBind>,
    out_ln: (Var, Var),
    trained: Vec<(String, Var)>,
}

impl EncoderBind {
    /// Leaves that were bound with `requires_grad`, in parameter order.
    pub fn trained(&self) -> &[(String, Var)] {
        &self.trained
    }
}

pub fn bind_encoder(
    tape: &mut Tape,
    enc: &Encoder,
    adapters: Option<&AdapterStack>,
    train_base: bool,
    train_adapters: bool,
) -> EncoderBind {
    let mut trained = Vec::new();
    let bind = |tape: &mut Tape,
                    trained: &mut Vec<(String, Var)>,
                    name: String,
                    t: &Tensor,
                    trainable: bool| {
        let v = tape.leaf(t.clone(), trainable);
        if trainable {
            trained.push((name, v));
        }
        v
    };
    let bl = |tape: &mut Tape, trained: &mut Vec<(String, Var)>, p: String, l: &Linear, tr: bool| LinearBind {
        w: bind(tape, trained, format!("{p}.w"), &l.w, tr),
        b: bind(tape, trained, format!("{p}.b"), &l.b, tr),
    };
    let input = bl(tape, &mut trained, "input".into(), &enc.input, train_base);
    let mut blocks = Vec::with_capacity(enc.blocks.len());
    for (i, b) in enc.blocks.iter().enumerate() {
        let p = format!("block{i}");
        let ln1 = (
            bind(tape, &mut trained, format!("{p}.ln1.g"), &b.ln1_g, train_base),
            bind(tape, &mut trained, format!("{p}.ln1.b"), &b.ln1_b, train_base),
        );
        let wq = bl(tape, &mut trained, format!("{p}.wq"), &b.wq, train_base);
        let wk = bl(tape, &mut trained, format!("{p}.wk"), &b.wk, train_base);
        let wv = bl(tape, &mut trained, format!("{p}.wv"), &b.wv, train_base);
        let wo = bl(tape, &mut trained, format!("{p}.wo"), &b.wo, train_base);
        let ln2 = (
            bind(tape, &mut trained, format!("{p}.ln2.g"), &b.ln2_g, train_base),
            bind(tape, &mut trained, format!("{p}.ln2.b"), &b.ln2_b, train_base),
        );
        let ffn1 = bl(tape, &mut trained, format!("{p}.ffn1"), &b.ffn1, train_base);
        let ffn2 = bl(tape, &mut trained, format!("{p}.ffn2"), &b.ffn2, train_base);
        let (post_attn, post_ffn) = match adapters {
            Some(stack) => {
                let ba = &stack.blocks[i];
                let pa = (
                    bl(tape, &mut trained, format!("{p}.adapter_attn.down"), &ba.post_attn.down, train_adapters),
                    bl(tape, &mut trained, format!("{p}.adapter_attn.up"), &ba.post_attn.up, train_adapters),
                );
                let pf = (
                    bl(tape, &mut trained, format!("{p}.adapter_ffn.down"), &ba.post_ffn.down, train_adapters),
                    bl(tape, &mut trained, format!("{p}.adapter_ffn.up"), &ba.post_ffn.up, train_adapters),
                );
                (Some(pa), Some(pf))
            }
            None => (None, None),
        };
        blocks.push(BlockBind {
            ln1,
            wq,
            wk,
            wv,
            wo,
            ln2,
            ffn1,
            ffn2,
            post_attn,
            post_ffn,
        });
    }
    let out_ln = (
        bind(tape, &mut trained, "out_ln.g".into(), &enc.out_ln_g, train_base),
        bind(tape, &mut trained, "out_ln.b".into(), &enc.out_ln_b, train_base),
    );
    EncoderBind {
        cfg: enc.cfg.clone(),
        input,
        blocks,
        out_ln,
        trained,
    }
}

const LN_EPS: f64 = 1e-5;

fn linear(tape: &mut Tape, x: Var, l: LinearBind) -> Result<Var, TensorError> {
    let m = tape.matmul(x, l.w)?;
    tape.add_row(m, l.b)
}

fn adapter_residual(
    tape: &mut Tape,
    h: Var,
    a: (LinearBind, LinearBind),
) -> Result<Var, TensorError> {
    let down = linear(tape, h, a.0)?;
    let act = tape.gelu(down);
    let up = linear(tape, act, a.1)?;
    tape.add(h, up)
}

/// Concatenate every `stack` consecutive rows of a [T, F] matrix into one
/// row, giving [T/stack, F*stack]; trailing remainder rows are dropped.
pub fn stack_frames(feats: &Tensor, stack: usize) -> Result<Tensor, ModelError> {
    if stack <= 1 {
        return Ok(feats.clone());
    }
    let (t, f) = (feats.shape()[0], feats.shape()[1]);
    let t_out = t / stack;
    if t_out == 0 {
        return Err(ModelError::BadConfig(format!(
            "input of {t} frames is shorter than frame_stack {stack}"
        )));
    }
    let data = feats.data()[..t_out * stack * f].to_vec();
    Ok(Tensor::new(vec![t_out, stack * f], data).expect("same element count"))
}

/// Sinusoidal positional encoding, [t, d].
pub fn positional_encoding(t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10_000f64.powf(exponent);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![t, d], data).unwrap()
}

/// Forward pass over bound parameters. Pre-LN blocks:
/// `x += attn(ln1(x)); [adapter]; x += ffn(ln2(x)); [adapter]`,
/// with a final layer norm.
pub fn forward_encoder(
    tape: &mut Tape,
    bind: &EncoderBind,
    feats: &Tensor,
) -> Result<Var, ModelError> {
    let cfg = &bind.cfg;
    let feats = stack_frames(feats, cfg.frame_stack)?;
    let t = feats.shape()[0];
    if t > cfg.max_frames {
        return Err(ModelError::OverLength {
            frames: t,
            max: cfg.max_frames,
        });
    }
    let d = cfg.model_dim;
    let dh = d / cfg.num_heads;
    let x0 = tape.constant(feats);
    let mut x = linear(tape, x0, bind.input)?;
    if cfg.use_positional {
        let pe = tape.constant(positional_encoding(t, d));
        x = tape.add(x, pe)?;
    }
    for b in &bind.blocks {
        // Self-attention sublayer.
        let normed = tape.layer_norm(x, b.ln1.0, b.ln1.1, LN_EPS)?;
        let q = linear(tape, normed, b.wq)?;
        let k = linear(tape, normed, b.wk)?;
        let v = linear(tape, normed, b.wv)?;
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let probs = tape.softmax(scaled, 1)?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let ctx = tape.concat_cols(&heads)?;
        let attn_out = linear(tape, ctx, b.wo)?;
        x = tape.add(x, attn_out)?;
        if let Some(a) = b.post_attn {
            x = adapter_residual(tape, x, a)?;
        }
        // FFN sublayer.
        let normed = tape.layer_norm(x, b.ln2.0, b.ln2.1, LN_EPS)?;
        let hidden = linear(tape, normed, b.ffn1)?;
        let act = tape.gelu(hidden);
        let ffn_out = linear(tape, act, b.ffn2)?;
        x = tape.add(x, ffn_out)?;
        if let Some(a) = b.post_ffn {
            x = adapter_residual(tape, x, a)?;
        }
    }
    Ok(tape.layer_norm(x, bind.out_ln.0, bind.out_ln.1, LN_EPS)?)
}

/// Head parameters bound onto a tape.
#[derive(Debug, Clone)]
pub struct HeadBind {
    proj: LinearBind,
    trained: Vec<(String, Var)>,
}

impl HeadBind {
    pub fn trained(&self) -> &[(String, Var)] {
        &self.trained
    }
}

pub fn bind_head(tape: &mut Tape, head: &CtcHead, trainable: bool) -> HeadBind {
    let w = tape.leaf(head.proj.w.clone(), trainable);
    let b = tape.leaf(head.proj.b.clone(), trainable);
    let trained = if trainable {
        vec![("head.w".to_string(), w), ("head.b".to_string(), b)]
    } else {
        Vec::new()
    };
    HeadBind {
        proj: LinearBind { w, b },
        trained,
    }
}

/// Per-frame affine projection to vocabulary+blank logits.
pub fn forward_head(tape: &mut Tape, bind: &HeadBind, emb: Var) -> Result<Var, ModelError> {
    Ok(linear(tape, emb, bind.proj)?)
}

/// Teacher forward: no adapters, no gradients.
pub fn encode_pre(enc: &Encoder, feats: &FeatureMatrix) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let bind = bind_encoder(&mut tape, enc, None, false, false);
    let out = forward_encoder(&mut tape, &bind, &feats.normalized_tensor())?;
    Ok(tape.value(out).clone())
}

/// Student forward: adapters applied, no gradients.
pub fn encode_adp(student: &AdapterEncoder, feats: &FeatureMatrix) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let bind = bind_encoder(&mut tape, &student.base, Some(&student.adapters), false, false);
    let out = forward_encoder(&mut tape, &bind, &feats.normalized_tensor())?;
    Ok(tape.value(out).clone())
}

/// Logits for already-computed embeddings, no gradients.
pub fn ctc_logits(head: &CtcHead, emb: &Tensor) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let bind = bind_head(&mut tape, head, false);
    let e = tape.constant(emb.clone());
    let out = forward_head(&mut tape, &bind, e)?;
    Ok(tape.value(out).clone())
}

/// Per-frame argmax (ties broken toward the lowest class index), collapse
/// consecutive repeats, remove blanks. Blank is the last class.
pub fn greedy_decode(logits: &Tensor) -> Vec<usize> {
    let (t, c) = (logits.rows(), logits.cols());
    let blank = c - 1;
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for ti in 0..t {
        let row = &logits.data()[ti * c..(ti + 1) * c];
        let mut arg = 0;
        for (j, v) in row.iter().enumerate() {
            if *v > row[arg] {
                arg = j;
            }
        }
        if arg != prev && arg != blank {
            out.push(arg);
        }
        prev = arg;
    }
    out
}
