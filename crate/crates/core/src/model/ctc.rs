//! CTC loss in log space with an exact analytic backward pass
//! (grad = softmax - state posterior), registered as a custom tape op.
//!
//! Blank is the last class index. Targets are vocabulary indices.

use super::ModelError;
use crate::tape::{CustomOp, Tape, Var};
use crate::tensor::Tensor;

fn log_sum_exp(vals: &[f64]) -> f64 {
    let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    mx + vals.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

fn log_softmax_rows(logits: &Tensor) -> Vec<f64> {
    let (t, c) = (logits.rows(), logits.cols());
    let mut out = vec![0.0; t * c];
    for ti in 0..t {
        let row = &logits.data()[ti * c..(ti + 1) * c];
        let lse = log_sum_exp(row);
        for (j, v) in row.iter().enumerate() {
            out[ti * c + j] = v - lse;
        }
    }
    out
}

/// Extended label sequence: blanks interleaved around every target.
fn extend(targets: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * targets.len() + 1);
    ext.push(blank);
    for &t in targets {
        ext.push(t);
        ext.push(blank);
    }
    ext
}

/// Minimum frames needed: every label plus a separating blank between
/// adjacent repeats.
fn min_frames(targets: &[usize]) -> usize {
    let repeats = targets.windows(2).filter(|w| w[0] == w[1]).count();
    targets.len() + repeats
}

fn validate(logits: &Tensor, targets: &[usize], blank: usize) -> Result<(), ModelError> {
    let (t, c) = (logits.rows(), logits.cols());
    for &tok in targets {
        if tok >= blank || tok >= c {
            return Err(ModelError::BadTarget {
                token: tok,
                classes: c,
            });
        }
    }
    let needed = min_frames(targets);
    if t < needed.max(1) {
        return Err(ModelError::InfeasibleAlignment {
            target_len: targets.len(),
            needed,
            frames: t,
        });
    }
    Ok(())
}

/// Forward-only negative log likelihood.
pub fn ctc_loss_value(logits: &Tensor, targets: &[usize]) -> Result<f64, ModelError> {
    let blank = logits.cols() - 1;
    validate(logits, targets, blank)?;
    let lp = log_softmax_rows(logits);
    let c = logits.cols();
    let alpha = forward_alphas(&lp, logits.rows(), c, targets, blank);
    let s = 2 * targets.len() + 1;
    let t = logits.rows();
    let tail = if s >= 2 {
        log_sum_exp(&[alpha[(t - 1) * s + s - 1], alpha[(t - 1) * s + s - 2]])
    } else {
        alpha[(t - 1) * s]
    };
    Ok(-tail)
}

fn forward_alphas(lp: &[f64], t: usize, c: usize, targets: &[usize], blank: usize) -> Vec<f64> {
    let ext = extend(targets, blank);
    let s = ext.len();
    let mut alpha = vec![f64::NEG_INFINITY; t * s];
    alpha[0] = lp[ext[0]];
    if s > 1 {
        alpha[1] = lp[ext[1]];
    }
    for ti in 1..t {
        for si in 0..s {
            let mut terms = vec![alpha[(ti - 1) * s + si]];
            if si >= 1 {
                terms.push(alpha[(ti - 1) * s + si - 1]);
            }
            if si >= 2 && ext[si] != blank && ext[si] != ext[si - 2] {
                terms.push(alpha[(ti - 1) * s + si - 2]);
            }
            alpha[ti * s + si] = log_sum_exp(&terms) + lp[ti * c + ext[si]];
        }
    }
    alpha
}

/// Betas include the emission at frame t (suffix probability from state si).
fn backward_betas(lp: &[f64], t: usize, c: usize, targets: &[usize], blank: usize) -> Vec<f64> {
    let ext = extend(targets, blank);
    let s = ext.len();
    let mut beta = vec![f64::NEG_INFINITY; t * s];
    beta[(t - 1) * s + s - 1] = lp[(t - 1) * c + ext[s - 1]];
    if s >= 2 {
        beta[(t - 1) * s + s - 2] = lp[(t - 1) * c + ext[s - 2]];
    }
    for ti in (0..t - 1).rev() {
        for si in 0..s {
            let mut terms = vec![beta[(ti + 1) * s + si]];
            if si + 1 < s {
                terms.push(beta[(ti + 1) * s + si + 1]);
            }
            if si + 2 < s && ext[si + 2] != blank && ext[si + 2] != ext[si] {
                terms.push(beta[(ti + 1) * s + si + 2]);
            }
            beta[ti * s + si] = log_sum_exp(&terms) + lp[ti * c + ext[si]];
        }
    }
    beta
}

/// d(loss)/d(logit[t][c]) = softmax[t][c] - sum over states emitting c of
/// the state posterior at frame t.
fn ctc_logit_grads(logits: &Tensor, targets: &[usize], blank: usize) -> Vec<f64> {
    let (t, c) = (logits.rows(), logits.cols());
    let lp = log_softmax_rows(logits);
    let ext = extend(targets, blank);
    let s = ext.len();
    let alpha = forward_alphas(&lp, t, c, targets, blank);
    let beta = backward_betas(&lp, t, c, targets, blank);
    let log_p = if s >= 2 {
        log_sum_exp(&[alpha[(t - 1) * s + s - 1], alpha[(t - 1) * s + s - 2]])
    } else {
        alpha[(t - 1) * s]
    };
    let mut grads = vec![0.0; t * c];
    for ti in 0..t {
        // Accumulate label posteriors per class in log space via max-shift.
        let mut post = vec![0.0f64; c];
        for si in 0..s {
            let lg = alpha[ti * s + si] + beta[ti * s + si] - lp[ti * c + ext[si]] - log_p;
            if lg > f64::NEG_INFINITY {
                post[ext[si]] += lg.exp();
            }
        }
        for ci in 0..c {
            grads[ti * c + ci] = lp[ti * c + ci].exp() - post[ci];
        }
    }
    grads
}

#[derive(Debug)]
struct CtcOp {
    targets: Vec<usize>,
    blank: usize,
}

impl CustomOp for CtcOp {
    fn grads(&self, inputs: &[&Tensor], _output: &Tensor, out_grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let logits = inputs[0];
        let mut g = ctc_logit_grads(logits, &self.targets, self.blank);
        let scale = out_grad[0];
        for v in &mut g {
            *v *= scale;
        }
        vec![Some(g)]
    }
}

/// CTC negative log likelihood as a scalar tape node.
pub fn ctc_loss(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var, ModelError> {
    let value = {
        let l = tape.value(logits);
        ctc_loss_value(l, targets)?
    };
    let blank = tape.value(logits).cols() - 1;
    Ok(tape.custom(
        vec![logits],
        Tensor::scalar(value),
        Box::new(CtcOp {
            targets: targets.to_vec(),
            blank,
        }),
    ))
}
