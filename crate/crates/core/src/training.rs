//! Optimization: warmup/decay schedule, AdamW, and the three training
//! regimes — adapter alignment (MSE against teacher embeddings on a frozen
//! base), CTC decoder training over frozen embeddings, and joint encoder
//! pretraining.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dsp::{mix_seed, DspError, FeatureMatrix};
use crate::eval::cer;
use crate::model::{
    bind_encoder, bind_head, ctc::ctc_loss, forward_encoder, forward_head, greedy_decode,
    AdapterStack, CtcHead, Encoder, EncoderConfig, ModelError,
};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("non-finite gradient in {name} at step {step}")]
    NonFiniteGrad { name: String, step: u64 },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("empty {0} set")]
    EmptyDataset(&'static str),
    #[error(transparent)]
    Io(#[from] DspError),
}

/// Linear warmup to the peak rate over the first fraction of training, then
/// linear decay to zero at the final step.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub total_steps: u64,
    pub warmup_steps: u64,
}

impl LrSchedule {
    pub fn new(peak: f64, total_steps: u64, warmup_frac: f64) -> LrSchedule {
        let warmup_steps = ((total_steps as f64 * warmup_frac).round() as u64).max(1);
        LrSchedule {
            peak,
            total_steps,
            warmup_steps: warmup_steps.min(total_steps),
        }
    }

    pub fn lr_at(&self, step: u64) -> Result<f64, TrainError> {
        if step > self.total_steps {
            return Err(TrainError::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        if step <= self.warmup_steps {
            Ok(self.peak * step as f64 / self.warmup_steps as f64)
        } else {
            let decay = self.total_steps - self.warmup_steps;
            Ok(self.peak * (self.total_steps - step) as f64 / decay as f64)
        }
    }
}

/// AdamW with decoupled weight decay and bias correction, state keyed by
/// parameter name.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    state: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> AdamW {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    /// One update over named parameters and their gradients.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor)],
        grads: &BTreeMap<String, Vec<f64>>,
        lr: f64,
    ) -> Result<(), TrainError> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, tensor) in params.iter_mut() {
            let g = match grads.get(name) {
                Some(g) => g,
                None => continue, // no gradient reached this parameter
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGrad {
                    name: name.clone(),
                    step: self.t,
                });
            }
            let n = tensor.numel();
            let (m, v) = self
                .state
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            for (i, p) in tensor.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *p -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *p);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 24,
            lr: 1e-4,
            warmup_frac: 0.1,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    /// Dev metric, present on evaluation steps.
    pub dev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    /// Dev metric before the first update.
    pub initial_dev: f64,
    pub best_dev: f64,
    pub best_step: u64,
}

/// Tab-separated training log: step, learning rate, loss, dev metric.
pub fn write_train_log(path: &Path, log: &[LogRow]) -> Result<(), DspError> {
    let mut out = String::from("step\tlr\tloss\tdev\n");
    for row in log {
        let dev = row
            .dev
            .map(|d| format!("{d:.6}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{}\t{:.8}\t{:.6}\t{}\n",
            row.step, row.lr, row.loss, dev
        ));
    }
    std::fs::write(path, out).map_err(|e| DspError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64 + 1));
    order.shuffle(&mut rng);
    order
}

fn collect_grads(
    tape: &Tape,
    trained: &[(String, Var)],
    step: u64,
) -> Result<BTreeMap<String, Vec<f64>>, TrainError> {
    let mut grads = BTreeMap::new();
    for (name, v) in trained {
        if let Some(g) = tape.grad(*v) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(TrainError::NonFiniteGrad {
                    name: name.clone(),
                    step,
                });
            }
            grads.insert(name.clone(), g.to_vec());
        }
    }
    Ok(grads)
}

/// One alignment sample: distorted-channel features (student input) and the
/// teacher's clean-channel embedding.
pub type AlignSample = (FeatureMatrix, Tensor);

/// Mean student-teacher embedding MSE over a set.
pub fn dev_mse(base: &Encoder, stack: &AdapterStack, set: &[AlignSample]) -> Result<f64, TrainError> {
    let student = crate::model::AdapterEncoder {
        base: base.clone(),
        adapters: stack.clone(),
    };
    let mut total = 0.0;
    for (feats, teacher) in set {
        let emb = crate::model::encode_adp(&student, feats)?;
        total += crate::eval::embedding_mse(&emb, teacher);
    }
    Ok(total / set.len() as f64)
}

/// Train bottleneck adapters so distorted-channel embeddings match the
/// frozen teacher's clean-channel embeddings (MSE), with dev-based best
/// checkpoint selection.
pub fn train_adapters(
    base: &Encoder,
    train: &[AlignSample],
    dev: &[AlignSample],
    cfg: &TrainConfig,
) -> Result<(AdapterStack, TrainReport), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("train"));
    }
    if dev.is_empty() {
        return Err(TrainError::EmptyDataset("dev"));
    }
    let mut stack = AdapterStack::init(&base.cfg, mix_seed(cfg.seed, 0xada7));
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let schedule = LrSchedule::new(cfg.lr, steps_per_epoch * cfg.epochs as u64, cfg.warmup_frac);
    let mut opt = AdamW::new(cfg.weight_decay);
    let initial_dev = dev_mse(base, &stack, dev)?;
    let mut best = (initial_dev, 0u64, stack.clone());
    let mut log = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let lr = schedule.lr_at(step)?;
            let mut tape = Tape::new();
            let bind = bind_encoder(&mut tape, base, Some(&stack), false, true);
            // Average the per-sample MSEs so batch size does not rescale
            // the gradient.
            let mut total: Option<Var> = None;
            for &i in chunk {
                let (feats, teacher) = &train[i];
                let out = forward_encoder(&mut tape, &bind, &feats.normalized_tensor())?;
                let tgt = tape.constant(teacher.clone());
                let mse = tape.mse_loss(out, tgt)?;
                total = Some(match total {
                    Some(t) => tape.add(t, mse)?,
                    None => mse,
                });
            }
            let sum = total.expect("non-empty chunk");
            let loss = tape.scale(sum, 1.0 / chunk.len() as f64);
            let loss_val = tape.value(loss).scalar_value();
            if !loss_val.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            tape.backward(loss)?;
            let grads = collect_grads(&tape, bind.trained(), step)?;
            opt.step(&mut stack.named_params_mut(), &grads, lr)?;
            log.push(LogRow {
                step,
                lr,
                loss: loss_val,
                dev: None,
            });
        }
        let d = dev_mse(base, &stack, dev)?;
        log.last_mut().expect("logged step").dev = Some(d);
        if d < best.0 {
            best = (d, step, stack.clone());
        }
    }
    let (best_dev, best_step, best_stack) = best;
    Ok((
        best_stack,
        TrainReport {
            log,
            initial_dev,
            best_dev,
            best_step,
        },
    ))
}

/// One recognition sample: a precomputed embedding matrix and its token
/// targets.
pub type DecodeSample = (Tensor, Vec<usize>);

/// Greedy-decode CER (percent) of a head over embedded utterances.
pub fn head_cer(head: &CtcHead, set: &[DecodeSample]) -> Result<f64, TrainError> {
    let mut pairs = Vec::with_capacity(set.len());
    for (emb, targets) in set {
        let logits = crate::model::ctc_logits(head, emb)?;
        pairs.push((targets.clone(), greedy_decode(&logits)));
    }
    Ok(cer(&pairs))
}

/// Train (or fine-tune, when `init` is given) a CTC head over frozen
/// embeddings, selecting the checkpoint with the best dev CER.
pub fn train_decoder(
    enc_cfg: &EncoderConfig,
    init: Option<&CtcHead>,
    train: &[DecodeSample],
    dev: &[DecodeSample],
    cfg: &TrainConfig,
) -> Result<(CtcHead, TrainReport), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("train"));
    }
    if dev.is_empty() {
        return Err(TrainError::EmptyDataset("dev"));
    }
    let mut head = match init {
        Some(h) => h.clone(),
        None => CtcHead::init(enc_cfg, mix_seed(cfg.seed, 0xdec0de)),
    };
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let schedule = LrSchedule::new(cfg.lr, steps_per_epoch * cfg.epochs as u64, cfg.warmup_frac);
    let mut opt = AdamW::new(cfg.weight_decay);
    let initial_dev = head_cer(&head, dev)?;
    let mut best = (initial_dev, 0u64, head.clone());
    let mut log = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let lr = schedule.lr_at(step)?;
            let mut tape = Tape::new();
            let bind = bind_head(&mut tape, &head, true);
            let mut total: Option<Var> = None;
            for &i in chunk {
                let (emb, targets) = &train[i];
                let e = tape.constant(emb.clone());
                let logits = forward_head(&mut tape, &bind, e)?;
                let nll = ctc_loss(&mut tape, logits, targets)?;
                total = Some(match total {
                    Some(t) => tape.add(t, nll)?,
                    None => nll,
                });
            }
            let sum = total.expect("non-empty chunk");
            let loss = tape.scale(sum, 1.0 / chunk.len() as f64);
            let loss_val = tape.value(loss).scalar_value();
            if !loss_val.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            tape.backward(loss)?;
            let grads = collect_grads(&tape, bind.trained(), step)?;
            opt.step(&mut head.named_params_mut(), &grads, lr)?;
            log.push(LogRow {
                step,
                lr,
                loss: loss_val,
                dev: None,
            });
        }
        let d = head_cer(&head, dev)?;
        log.last_mut().expect("logged step").dev = Some(d);
        if d < best.0 {
            best = (d, step, head.clone());
        }
    }
    let (best_dev, best_step, best_head) = best;
    Ok((
        best_head,
        TrainReport {
            log,
            initial_dev,
            best_dev,
            best_step,
        },
    ))
}

/// One pretraining sample: input features and token targets.
pub type CtcSample = (FeatureMatrix, Vec<usize>);

fn dev_ctc_loss(enc: &Encoder, head: &CtcHead, set: &[CtcSample]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for (feats, targets) in set {
        let emb = crate::model::encode_pre(enc, feats)?;
        let logits = crate::model::ctc_logits(head, &emb)?;
        total += crate::model::ctc::ctc_loss_value(&logits, targets)?;
    }
    Ok(total / set.len() as f64)
}

/// Jointly train encoder and head from scratch with CTC on clean speech,
/// producing the frozen base used by the alignment stage. Dev selection on
/// mean CTC loss.
pub fn pretrain(
    enc_cfg: &EncoderConfig,
    train: &[CtcSample],
    dev: &[CtcSample],
    cfg: &TrainConfig,
) -> Result<(Encoder, CtcHead, TrainReport), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("train"));
    }
    if dev.is_empty() {
        return Err(TrainError::EmptyDataset("dev"));
    }
    let mut enc = Encoder::init(enc_cfg, mix_seed(cfg.seed, 0xba5e))?;
    let mut head = CtcHead::init(enc_cfg, mix_seed(cfg.seed, 0xead));
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let schedule = LrSchedule::new(cfg.lr, steps_per_epoch * cfg.epochs as u64, cfg.warmup_frac);
    let mut opt = AdamW::new(cfg.weight_decay);
    let initial_dev = dev_ctc_loss(&enc, &head, dev)?;
    let mut best = (initial_dev, 0u64, enc.clone(), head.clone());
    let mut log = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let lr = schedule.lr_at(step)?;
            let mut tape = Tape::new();
            let ebind = bind_encoder(&mut tape, &enc, None, true, false);
            let hbind = bind_head(&mut tape, &head, true);
            let mut total: Option<Var> = None;
            for &i in chunk {
                let (feats, targets) = &train[i];
                let emb = forward_encoder(&mut tape, &ebind, &feats.normalized_tensor())?;
                let logits = forward_head(&mut tape, &hbind, emb)?;
                let nll = ctc_loss(&mut tape, logits, targets)?;
                total = Some(match total {
                    Some(t) => tape.add(t, nll)?,
                    None => nll,
                });
            }
            let sum = total.expect("non-empty chunk");
            let loss = tape.scale(sum, 1.0 / chunk.len() as f64);
            let loss_val = tape.value(loss).scalar_value();
            if !loss_val.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            tape.backward(loss)?;
            let mut trained = ebind.trained().to_vec();
            trained.extend_from_slice(hbind.trained());
            let grads = collect_grads(&tape, &trained, step)?;
            opt.step(&mut enc.named_params_mut(), &grads, lr)?;
            opt_head_step(&mut opt, &mut head, &grads, lr)?;
            log.push(LogRow {
                step,
                lr,
                loss: loss_val,
                dev: None,
            });
        }
        let d = dev_ctc_loss(&enc, &head, dev)?;
        log.last_mut().expect("logged step").dev = Some(d);
        if d < best.0 {
            best = (d, step, enc.clone(), head.clone());
        }
    }
    let (best_dev, best_step, best_enc, best_head) = best;
    Ok((
        best_enc,
        best_head,
        TrainReport {
            log,
            initial_dev,
            best_dev,
            best_step,
        },
    ))
}

fn opt_head_step(
    opt: &mut AdamW,
    head: &mut CtcHead,
    grads: &BTreeMap<String, Vec<f64>>,
    lr: f64,
) -> Result<(), TrainError> {
    // AdamW::step advances its clock; the head shares the encoder's step, so
    // rewind before applying the same step to the head parameters.
    opt.t -= 1;
    opt.step(&mut head.named_params_mut(), grads, lr)
}
