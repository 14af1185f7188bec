//! Recognition scoring and analysis: edit distance, pooled character error
//! rate, relative-improvement tables, rank correlation, and embedding-space
//! difference heatmaps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::dsp::{log_mel, DspError, FeatureConfig, ParallelCorpus};
use crate::model::{ctc_logits, greedy_decode, AdapterEncoder, AdapterStack, CtcHead, Encoder, ModelError};
use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("channel {0} not present in corpus")]
    MissingChannel(String),
    #[error("{0}")]
    Contract(String),
}

/// Levenshtein distance (unit costs) between two token sequences.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    // Single-row DP.
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Pooled character error rate in percent: total edits over total reference
/// length, across all utterances.
pub fn cer(pairs: &[(Vec<usize>, Vec<usize>)]) -> f64 {
    let mut edits = 0usize;
    let mut len = 0usize;
    for (reference, hypothesis) in pairs {
        edits += edit_distance(reference, hypothesis);
        len += reference.len();
    }
    assert!(len > 0, "zero total reference length");
    100.0 * edits as f64 / len as f64
}

/// Relative CER improvement in percent, rounded half-up to one decimal.
/// A zero baseline has no defined improvement (reported blank).
pub fn relative_improvement(baseline: f64, adapted: f64) -> Option<f64> {
    if baseline == 0.0 {
        return None;
    }
    let raw = 100.0 * (baseline - adapted) / baseline;
    Some(round_half_up_1(raw))
}

/// Round to one decimal, ties away from the floor (half-up).
pub fn round_half_up_1(x: f64) -> f64 {
    (x * 10.0 + 0.5).floor() / 10.0
}

/// Average ranks (1-based), ties share the mean of their positions.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Mean squared difference between two same-shape embedding matrices.
pub fn embedding_mse(a: &Tensor, b: &Tensor) -> f64 {
    let n = a.numel();
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n as f64
}

/// Per-frame mean absolute difference between two [T, D] matrices; the row
/// profile of a difference heatmap.
pub fn frame_abs_diff(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (t, d) = (a.rows(), a.cols());
    (0..t)
        .map(|ti| {
            let ra = &a.data()[ti * d..(ti + 1) * d];
            let rb = &b.data()[ti * d..(ti + 1) * d];
            ra.iter().zip(rb).map(|(x, y)| (x - y).abs()).sum::<f64>() / d as f64
        })
        .collect()
}

/// Embeddings of every utterance of one corpus split under every channel,
/// computed once per encoder and shared by all decoder evaluations.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub channels: Vec<String>,
    /// (utterance id, reference tokens, channel -> embedding)
    pub utts: Vec<(String, Vec<usize>, BTreeMap<String, Tensor>)>,
}

/// Embed a corpus split with the teacher (`adapters` = None) or the adapted
/// student encoder.
pub fn embed_corpus(
    enc: &Encoder,
    adapters: Option<&AdapterStack>,
    part: &ParallelCorpus,
    fcfg: &FeatureConfig,
) -> Result<EmbeddingTable, EvalError> {
    let student = adapters.map(|a| AdapterEncoder {
        base: enc.clone(),
        adapters: a.clone(),
    });
    let channels: Vec<String> = part.channel_set.iter().map(|p| p.name.clone()).collect();
    let mut utts = Vec::with_capacity(part.utterances.len());
    for utt in &part.utterances {
        let mut embs = BTreeMap::new();
        for (name, w) in &utt.waveforms {
            let feats = log_mel(w, fcfg)?;
            let emb = match &student {
                Some(s) => crate::model::encode_adp(s, &feats)?,
                None => crate::model::encode_pre(enc, &feats)?,
            };
            embs.insert(name.clone(), emb);
        }
        utts.push((utt.id.clone(), utt.tokens.clone(), embs));
    }
    Ok(EmbeddingTable { channels, utts })
}

/// Per-channel pooled CER of one decoder, plus per-utterance detail rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CerReport {
    /// Label of the decoder (e.g. its training channel set).
    pub model: String,
    pub per_channel: BTreeMap<String, f64>,
    /// (utterance id, channel, reference, hypothesis, edit distance)
    pub rows: Vec<(String, String, Vec<usize>, Vec<usize>, usize)>,
}

impl CerReport {
    /// Mean of per-channel CERs over the named channels.
    pub fn average_over(&self, channels: &[String]) -> f64 {
        let total: f64 = channels.iter().map(|c| self.per_channel[c]).sum();
        total / channels.len() as f64
    }
}

/// Decode every utterance of every channel with one head and pool CER per
/// channel.
pub fn channel_matrix_eval(
    head: &CtcHead,
    table: &EmbeddingTable,
    model: &str,
) -> Result<CerReport, EvalError> {
    let mut rows = Vec::new();
    let mut per_channel = BTreeMap::new();
    for ch in &table.channels {
        let mut pairs = Vec::with_capacity(table.utts.len());
        for (id, tokens, embs) in &table.utts {
            let emb = embs
                .get(ch)
                .ok_or_else(|| EvalError::MissingChannel(ch.clone()))?;
            let hyp = greedy_decode(&ctc_logits(head, emb)?);
            rows.push((
                id.clone(),
                ch.clone(),
                tokens.clone(),
                hyp.clone(),
                edit_distance(tokens, &hyp),
            ));
            pairs.push((tokens.clone(), hyp));
        }
        per_channel.insert(ch.clone(), cer(&pairs));
    }
    Ok(CerReport {
        model: model.to_string(),
        per_channel,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyStats {
    /// (model i, model j, Spearman rho of their channel rankings)
    pub pairs: Vec<(String, String, f64)>,
    pub mean_rho: f64,
    pub min_rho: f64,
    /// Models for which the named clean channel has the lowest CER.
    pub clean_best: usize,
    pub models: usize,
}

/// Pairwise rank agreement of per-channel CERs across models: how
/// consistently the channels form one difficulty hierarchy.
pub fn hierarchy_consistency(
    reports: &[CerReport],
    clean_channel: &str,
) -> Result<HierarchyStats, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::Contract("need at least 2 models".into()));
    }
    let channels: Vec<String> = reports[0].per_channel.keys().cloned().collect();
    if channels.len() < 2 {
        return Err(EvalError::Contract("need at least 2 channels".into()));
    }
    for r in reports {
        let have: Vec<String> = r.per_channel.keys().cloned().collect();
        if have != channels {
            return Err(EvalError::Contract(format!(
                "model {} evaluated over a different channel set",
                r.model
            )));
        }
    }
    let vectors: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| channels.iter().map(|c| r.per_channel[c]).collect())
        .collect();
    let mut pairs = Vec::new();
    let (mut sum, mut min) = (0.0, f64::INFINITY);
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let rho = spearman_rho(&vectors[i], &vectors[j]);
            sum += rho;
            min = min.min(rho);
            pairs.push((reports[i].model.clone(), reports[j].model.clone(), rho));
        }
    }
    let clean_best = reports
        .iter()
        .filter(|r| {
            let clean = r.per_channel[clean_channel];
            r.per_channel
                .iter()
                .all(|(c, v)| c == clean_channel || *v >= clean)
        })
        .count();
    let n_pairs = pairs.len() as f64;
    Ok(HierarchyStats {
        pairs,
        mean_rho: sum / n_pairs,
        min_rho: min,
        clean_best,
        models: reports.len(),
    })
}

/// Elementwise absolute embedding difference, arranged D rows by T columns,
/// with a speech-activity mask over the frames.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapData {
    pub d: usize,
    pub t: usize,
    /// Row-major [D, T].
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub label: String,
}

impl HeatmapData {
    /// Mean cell value over speech-active (`active` = true) or inactive
    /// frames.
    pub fn mean_over(&self, active: bool) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (ti, &m) in self.mask.iter().enumerate() {
            if m != active {
                continue;
            }
            for di in 0..self.d {
                sum += self.values[di * self.t + ti];
            }
            n += self.d;
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// |emb_ref - emb_other| as a D-by-T map with the given frame mask.
pub fn feature_diff_heatmap(
    emb_ref: &Tensor,
    emb_other: &Tensor,
    mask: &[bool],
    label: &str,
) -> Result<HeatmapData, EvalError> {
    if emb_ref.shape() != emb_other.shape() {
        return Err(EvalError::Contract(format!(
            "embedding shapes differ: {:?} vs {:?}",
            emb_ref.shape(),
            emb_other.shape()
        )));
    }
    let (t, d) = (emb_ref.rows(), emb_ref.cols());
    if mask.len() != t {
        return Err(EvalError::Contract(format!(
            "mask length {} != {t} frames",
            mask.len()
        )));
    }
    let mut values = vec![0.0; d * t];
    for ti in 0..t {
        for di in 0..d {
            values[di * t + ti] =
                (emb_ref.at2(ti, di) - emb_other.at2(ti, di)).abs();
        }
    }
    Ok(HeatmapData {
        d,
        t,
        values,
        mask: mask.to_vec(),
        label: label.to_string(),
    })
}

/// Emit a heatmap as PGM plus a CSV of raw values; the last CSV record is
/// the 0/1 speech-activity mask row.
pub fn write_heatmap(dir: &Path, data: &HeatmapData) -> Result<(), DspError> {
    write_pgm(
        &dir.join(format!("{}.pgm", data.label)),
        data.d,
        data.t,
        &data.values,
    )?;
    let mut rows: Vec<Vec<String>> = (0..data.d)
        .map(|di| {
            (0..data.t)
                .map(|ti| format!("{:.9}", data.values[di * data.t + ti]))
                .collect()
        })
        .collect();
    rows.push(
        data.mask
            .iter()
            .map(|m| if *m { "1".into() } else { "0".into() })
            .collect(),
    );
    let header: Vec<String> = (0..data.t).map(|ti| format!("t{ti}")).collect();
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    write_csv(&dir.join(format!("{}.csv", data.label)), &header_refs, &rows)
}

fn io_err(path: &Path, source: std::io::Error) -> DspError {
    DspError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Plain CSV: header row then records. Values are written as given.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), DspError> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// 8-bit binary PGM of a [T, D] matrix, min-max normalized (flat input maps
/// to mid-gray).
pub fn write_pgm(path: &Path, rows: usize, cols: usize, data: &[f64]) -> Result<(), DspError> {
    assert_eq!(data.len(), rows * cols);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    write!(f, "P5\n{cols} {rows}\n255\n").map_err(|e| io_err(path, e))?;
    let bytes: Vec<u8> = data
        .iter()
        .map(|&v| {
            if span <= 0.0 {
                128
            } else {
                (255.0 * (v - lo) / span).round() as u8
            }
        })
        .collect();
    f.write_all(&bytes).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Full-matrix reference implementation for cross-checking.
    fn edit_distance_matrix(a: &[usize], b: &[usize]) -> usize {
        let (n, m) = (a.len(), b.len());
        let mut d = vec![vec![0usize; m + 1]; n + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=m {
            d[0][j] = j;
        }
        for i in 1..=n {
            for j in 1..=m {
                let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[n][m]
    }

    #[test]
    fn edit_distance_known_cases() {
        assert_eq!(edit_distance(&[], &[]), 0);
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(edit_distance(&[1, 2, 3], &[]), 3);
        assert_eq!(edit_distance(&[], &[7]), 1);
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 3]), 1); // deletion
        assert_eq!(edit_distance(&[1, 3], &[1, 2, 3]), 1); // insertion
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 9, 3]), 1); // substitution
        // kitten -> sitting in token form
        let kitten = [10, 8, 19, 19, 4, 13];
        let sitting = [18, 8, 19, 19, 8, 13, 6];
        assert_eq!(edit_distance(&kitten, &sitting), 3);
    }

    #[test]
    fn edit_distance_matches_full_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let la = rng.random_range(0..8usize);
            let lb = rng.random_range(0..8usize);
            let a: Vec<usize> = (0..la).map(|_| rng.random_range(0..4)).collect();
            let b: Vec<usize> = (0..lb).map(|_| rng.random_range(0..4)).collect();
            assert_eq!(edit_distance(&a, &b), edit_distance_matrix(&a, &b));
        }
    }

    proptest! {
        #[test]
        fn edit_distance_is_a_metric(
            a in proptest::collection::vec(0usize..4, 0..7),
            b in proptest::collection::vec(0usize..4, 0..7),
            c in proptest::collection::vec(0usize..4, 0..7),
        ) {
            let dab = edit_distance(&a, &b);
            let dba = edit_distance(&b, &a);
            prop_assert_eq!(dab, dba); // symmetry
            prop_assert_eq!(edit_distance(&a, &a), 0); // identity
            let dac = edit_distance(&a, &c);
            let dbc = edit_distance(&b, &c);
            prop_assert!(dac <= dab + dbc); // triangle inequality
        }
    }

    #[test]
    fn cer_is_pooled_not_averaged() {
        // utt1: 1 edit / 2 ref tokens, utt2: 0 edits / 8 ref tokens.
        // Pooled: 1/10 = 10%. Mean-of-utterances would be 25%.
        let pairs = vec![
            (vec![1, 2], vec![1, 3]),
            (vec![0; 8], vec![0; 8]),
        ];
        assert!((cer(&pairs) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn cer_can_exceed_100_percent() {
        let pairs = vec![(vec![1], vec![2, 3, 4])];
        assert!((cer(&pairs) - 300.0).abs() < 1e-12);
    }

    #[test]
    fn relative_improvement_rounding() {
        // Half-up at one decimal.
        assert_eq!(relative_improvement(100.0, 78.35), Some(21.7)); // 21.65 rounds up
        assert_eq!(round_half_up_1(21.64), 21.6);
        assert_eq!(round_half_up_1(-1.85), -1.8); // half-up moves toward +inf
        assert_eq!(relative_improvement(0.0, 5.0), None);
    }

    #[test]
    fn improvement_reference_rows() {
        // Baseline/adapted CER pairs with their expected rounded improvements.
        let rows = [
            (2.54, 1.99, 21.7),
            (2.55, 2.07, 18.8),
            (2.77, 2.28, 17.7),
            (2.32, 1.93, 16.8),
            (1.82, 1.77, 2.7),
            (1.96, 1.76, 10.2),
            (4.40, 4.02, 8.6),
            (2.50, 2.19, 12.4),
            (1.64, 1.67, -1.8),
        ];
        for (base, adapted, want) in rows {
            assert_eq!(
                relative_improvement(base, adapted),
                Some(want),
                "({base}, {adapted})"
            );
        }
    }

    #[test]
    fn spearman_basics() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman_rho(&xs, &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-12);
        assert!((spearman_rho(&xs, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // Monotone but nonlinear is still rho = 1.
        assert!((spearman_rho(&xs, &[1.0, 8.0, 27.0, 64.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties_with_average_ranks() {
        let xs = [1.0, 2.0, 2.0, 3.0];
        let ys = [1.0, 2.5, 2.5, 4.0];
        assert!((spearman_rho(&xs, &ys) - 1.0).abs() < 1e-12);
        // A tie against distinct values lowers but does not break correlation.
        let ys2 = [1.0, 2.0, 3.0, 4.0];
        let rho = spearman_rho(&xs, &ys2);
        assert!(rho > 0.9 && rho < 1.0, "rho = {rho}");
    }

    #[test]
    fn frame_abs_diff_shape_and_values() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Tensor::new(vec![2, 3], vec![1.0, 1.0, 1.0, 3.0, 3.0, 3.0]).unwrap();
        let d = frame_abs_diff(&a, &b);
        assert_eq!(d.len(), 2);
        assert!((d[0] - 1.0).abs() < 1e-12);
        assert!((d[1] - 3.0).abs() < 1e-12);
    }

    fn report(model: &str, cers: &[(&str, f64)]) -> CerReport {
        CerReport {
            model: model.into(),
            per_channel: cers.iter().map(|(c, v)| (c.to_string(), *v)).collect(),
            rows: Vec::new(),
        }
    }

    #[test]
    fn hierarchy_identical_and_reversed_rankings() {
        let a = report("a", &[("C", 1.0), ("X", 2.0), ("Y", 3.0)]);
        let b = report("b", &[("C", 10.0), ("X", 20.0), ("Y", 30.0)]);
        let s = hierarchy_consistency(&[a.clone(), b], "C").unwrap();
        assert!((s.mean_rho - 1.0).abs() < 1e-12);
        assert_eq!(s.clean_best, 2);
        let rev = report("r", &[("C", 3.0), ("X", 2.0), ("Y", 1.0)]);
        let s = hierarchy_consistency(&[a, rev], "C").unwrap();
        assert!((s.min_rho + 1.0).abs() < 1e-12);
        assert_eq!(s.clean_best, 1);
    }

    #[test]
    fn hierarchy_rejects_mismatched_channel_sets() {
        let a = report("a", &[("C", 1.0), ("X", 2.0)]);
        let b = report("b", &[("C", 1.0), ("Z", 2.0)]);
        assert!(hierarchy_consistency(&[a.clone(), b], "C").is_err());
        assert!(hierarchy_consistency(&[a], "C").is_err());
    }

    #[test]
    fn heatmap_basics_and_symmetry() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![2, 3], vec![0.0, 2.0, 3.0, 4.0, 5.0, 7.0]).unwrap();
        let mask = vec![true, false];
        let ab = feature_diff_heatmap(&a, &b, &mask, "ab").unwrap();
        let ba = feature_diff_heatmap(&b, &a, &mask, "ba").unwrap();
        assert_eq!(ab.values, ba.values); // symmetric in its arguments
        assert!(ab.values.iter().all(|v| *v >= 0.0));
        // D=3 rows by T=2 cols; frame 0 differs in dim 0, frame 1 in dim 2.
        assert_eq!(ab.values, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((ab.mean_over(true) - 1.0 / 3.0).abs() < 1e-12);
        assert!((ab.mean_over(false) - 1.0 / 3.0).abs() < 1e-12);
        // identical embeddings -> all zeros
        let aa = feature_diff_heatmap(&a, &a, &mask, "aa").unwrap();
        assert!(aa.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn heatmap_shape_and_mask_errors() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![3, 2]);
        assert!(feature_diff_heatmap(&a, &b, &[true, true], "x").is_err());
        assert!(feature_diff_heatmap(&a, &a, &[true], "x").is_err());
    }

    #[test]
    fn channel_matrix_on_oracle_and_blank_heads() {
        use crate::model::EncoderConfig;
        // Hand-built embedding table with 2 channels; head = identity-ish
        // projection picking class = argmax of first dims.
        let cfg = EncoderConfig {
            num_blocks: 1,
            model_dim: 4,
            num_heads: 1,
            ffn_dim: 4,
            max_frames: 8,
            adapter_bottleneck: 2,
            num_mels: 4,
            vocab_size: 3,
            use_positional: true,
            frame_stack: 1,
        };
        // Oracle head: w maps dim i -> class i strongly, bias favors blank
        // slightly so zero frames decode as blank.
        let mut w = Tensor::zeros(vec![4, 4]);
        for i in 0..3 {
            w.data_mut()[i * 4 + i] = 4.0;
        }
        let mut b = Tensor::zeros(vec![4]);
        b.data_mut()[3] = 1.0;
        let head = CtcHead {
            proj: crate::model::Linear { w, b },
        };
        let emb_for = |tokens: &[usize]| {
            let t = 2 * tokens.len() + 1;
            let mut data = vec![0.0; t * 4];
            for (k, &tok) in tokens.iter().enumerate() {
                data[(2 * k + 1) * 4 + tok] = 1.0;
            }
            Tensor::new(vec![t, 4], data).unwrap()
        };
        let mk_utt = |id: &str, tokens: &[usize]| {
            let mut m = BTreeMap::new();
            m.insert("C".to_string(), emb_for(tokens));
            m.insert("X".to_string(), emb_for(tokens));
            (id.to_string(), tokens.to_vec(), m)
        };
        let table = EmbeddingTable {
            channels: vec!["C".into(), "X".into()],
            utts: vec![mk_utt("u0", &[0, 2]), mk_utt("u1", &[1])],
        };
        let r = channel_matrix_eval(&head, &table, "oracle").unwrap();
        assert_eq!(r.per_channel["C"], 0.0);
        assert_eq!(r.per_channel["X"], 0.0);
        // All-blank head: enormous blank bias -> every token deleted, 100%.
        let mut blank = head.clone();
        blank.proj.b.data_mut()[3] = 100.0;
        let r = channel_matrix_eval(&blank, &table, "blank").unwrap();
        assert_eq!(r.per_channel["C"], 100.0);
        assert_eq!(r.per_channel["X"], 100.0);
        let _ = cfg;
    }

    #[test]
    fn csv_and_pgm_roundtrip_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("t.csv");
        write_csv(
            &csv,
            &["a", "b"],
            &[vec!["1".into(), "2".into()], vec!["x".into(), "y".into()]],
        )
        .unwrap();
        assert_eq!(std::fs::read_to_string(&csv).unwrap(), "a,b\n1,2\nx,y\n");

        let pgm = dir.path().join("t.pgm");
        write_pgm(&pgm, 2, 3, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let bytes = std::fs::read(&pgm).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), b"P5\n3 2\n255\n".len() + 6);
        assert_eq!(*bytes.last().unwrap(), 255);
    }
}
