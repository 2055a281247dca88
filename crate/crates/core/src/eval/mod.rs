//! Open-set verification metrics: cosine distances, pair scoring, ROC,
//! AUC/EER, distance histograms, offset scatter and the mutual-information
//! lower bound.

mod export;

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rff::RffModel;
use crate::rng::stream;
use crate::signal::{ComplexSignal, TransmissionRecord};
use crate::sync::{SearchGrid, TsEstimator};

pub use crate::rff::mi_lower_bound;
pub use export::{
    write_dist_hist_csv, write_offsets_csv, write_roc_csv, write_summary_json, Summary,
};

/// Default cap on the number of scored pairs.
pub const DEFAULT_PAIR_CAP: usize = 200_000;
/// Histogram resolution over `[0, 2]`.
pub const HIST_BINS: usize = 100;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_norm(v: &[f64]) -> Result<f64> {
    let n = dot(v, v);
    if !(n > 0.0) {
        return Err(Error::Degenerate("zero-norm fingerprint".into()));
    }
    Ok(n)
}

/// Distance from precomputed squared norms; `sqrt(n*n) == n` keeps
/// identical vectors at exactly zero.
fn distance_with(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    (1.0 - dot(a, b) / (na * nb).sqrt()).clamp(0.0, 2.0)
}

/// `1 - a.b / (|a| |b|)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("fingerprints differ in length"));
    }
    Ok(distance_with(a, sq_norm(a)?, b, sq_norm(b)?))
}

/// Same-device decision: distance at most `threshold`.
pub fn verify(a: &[f64], b: &[f64], threshold: f64) -> Result<bool> {
    Ok(cosine_distance(a, b)? <= threshold)
}

/// Distances between same-device (`intra`) and different-device (`inter`) pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairScoreSet {
    pub intra: Vec<f64>,
    pub inter: Vec<f64>,
}

/// Which pairs to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pairing {
    All,
    /// All pairs when there are at most `max_pairs`, otherwise a uniform
    /// sample of `max_pairs` distinct pairs drawn with `seed`.
    Capped {
        max_pairs: usize,
        seed: u64,
    },
}

impl Default for Pairing {
    fn default() -> Self {
        Pairing::Capped {
            max_pairs: DEFAULT_PAIR_CAP,
            seed: 0,
        }
    }
}

/// Row `i` and column `j > i` of the `k`-th pair in row-major upper-triangle order.
fn pair_at(k: usize, n: usize) -> (usize, usize) {
    // Pairs before row i: i*n - i*(i+1)/2.
    let before = |i: usize| i * n - i * (i + 1) / 2;
    let (mut lo, mut hi) = (0, n - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if before(mid) <= k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let i = if before(hi) <= k { hi } else { lo };
    (i, i + 1 + (k - before(i)))
}

/// Score pairs of labeled fingerprints.
pub fn pair_scores(
    fingerprints: &[Vec<f64>],
    labels: &[u32],
    pairing: Pairing,
) -> Result<PairScoreSet> {
    let n = fingerprints.len();
    if labels.len() != n {
        return Err(Error::shape("one label per fingerprint required"));
    }
    let mut per_device: BTreeMap<u32, usize> = BTreeMap::new();
    for &l in labels {
        *per_device.entry(l).or_insert(0) += 1;
    }
    if per_device.len() < 2 || per_device.values().all(|&c| c < 2) {
        return Err(Error::Degenerate(
            "pair scoring needs at least 2 devices and a device with 2 records".into(),
        ));
    }
    let norms = fingerprints
        .iter()
        .map(|f| sq_norm(f))
        .collect::<Result<Vec<_>>>()?;
    let total = n * (n - 1) / 2;
    let picks: Box<dyn Iterator<Item = (usize, usize)>> = match pairing {
        Pairing::Capped { max_pairs, seed } if total > max_pairs => {
            let mut idx =
                index::sample(&mut stream(seed, "eval/pairs"), total, max_pairs).into_vec();
            idx.sort_unstable();
            Box::new(idx.into_iter().map(move |k| pair_at(k, n)))
        }
        _ => Box::new((0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))),
    };
    let mut out = PairScoreSet::default();
    for (i, j) in picks {
        let d = distance_with(&fingerprints[i], norms[i], &fingerprints[j], norms[j]);
        if labels[i] == labels[j] {
            out.intra.push(d);
        } else {
            out.inter.push(d);
        }
    }
    if out.intra.is_empty() || out.inter.is_empty() {
        return Err(Error::Degenerate(
            "pair sample lacks intra or inter pairs".into(),
        ));
    }
    Ok(out)
}

/// ROC of distance-threshold verification (positives = intra pairs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    /// Ascending: `-inf`, every distinct score, `+inf`.
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
    pub eer: f64,
    pub eer_threshold: f64,
}

pub fn roc(scores: &PairScoreSet) -> Result<RocReport> {
    let (np, nn) = (scores.intra.len(), scores.inter.len());
    if np == 0 || nn == 0 {
        return Err(Error::Degenerate("ROC needs intra and inter pairs".into()));
    }
    if scores
        .intra
        .iter()
        .chain(&scores.inter)
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("pair scores"));
    }
    let mut all: Vec<(f64, bool)> = scores
        .intra
        .iter()
        .map(|&d| (d, true))
        .chain(scores.inter.iter().map(|&d| (d, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut thresholds = vec![f64::NEG_INFINITY];
    let mut tp = vec![0u64];
    let mut fp = vec![0u64];
    let (mut t, mut f) = (0u64, 0u64);
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                t += 1;
            } else {
                f += 1;
            }
            i += 1;
        }
        thresholds.push(v);
        tp.push(t);
        fp.push(f);
    }
    thresholds.push(f64::INFINITY);
    tp.push(t);
    fp.push(f);

    // Trapezoid rule in integer arithmetic: identical to the Mann-Whitney
    // statistic with ties counted one half.
    let twice: u128 = (1..tp.len())
        .map(|k| u128::from(fp[k] - fp[k - 1]) * u128::from(tp[k] + tp[k - 1]))
        .sum();
    let auc = twice as f64 / (2.0 * np as f64 * nn as f64);

    let tpr: Vec<f64> = tp.iter().map(|&v| v as f64 / np as f64).collect();
    let fpr: Vec<f64> = fp.iter().map(|&v| v as f64 / nn as f64).collect();
    // FNR - FPR falls from 1 to -1 along the sweep.
    let gap = |k: usize| (1.0 - tpr[k]) - fpr[k];
    let k = (0..tpr.len())
        .find(|&k| gap(k) <= 0.0)
        .expect("gap is -1 at +inf");
    let (eer, eer_threshold) = if gap(k) == 0.0 {
        (fpr[k], thresholds[k])
    } else {
        let (g0, g1) = (gap(k - 1), gap(k));
        let s = g0 / (g0 - g1);
        let eer = fpr[k - 1] + s * (fpr[k] - fpr[k - 1]);
        let th = match (thresholds[k - 1].is_finite(), thresholds[k].is_finite()) {
            (true, true) => thresholds[k - 1] + s * (thresholds[k] - thresholds[k - 1]),
            (false, _) => thresholds[k],
            (_, false) => thresholds[k - 1],
        };
        (eer, th)
    };
    Ok(RocReport {
        thresholds,
        tpr,
        fpr,
        auc,
        eer,
        eer_threshold,
    })
}

/// The variational bound, with and without the `ln K` label-entropy term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiBound {
    pub raw: f64,
    pub shifted: f64,
}

/// Bound from per-record `ln q(y|z)` values over `classes` uniform labels.
pub fn mi_bound_from_log_q(log_q: &[f64], classes: usize) -> Result<MiBound> {
    if log_q.is_empty() || classes == 0 {
        return Err(Error::arg("MI bound needs records and classes"));
    }
    let n = log_q.len() as f64;
    let ln_k = (classes as f64).ln();
    // Shift term by term so a uniform classifier gives exactly zero.
    Ok(MiBound {
        raw: log_q.iter().sum::<f64>() / n,
        shifted: log_q.iter().map(|l| l + ln_k).sum::<f64>() / n,
    })
}

/// One histogram bin of pair distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub intra: usize,
    pub inter: usize,
}

/// Counts over [`HIST_BINS`] uniform bins of `[0, 2]`; the last bin is closed.
pub fn distance_histogram(scores: &PairScoreSet) -> Vec<HistBin> {
    let width = 2.0 / HIST_BINS as f64;
    let mut bins: Vec<HistBin> = (0..HIST_BINS)
        .map(|b| HistBin {
            lo: b as f64 * width,
            hi: (b + 1) as f64 * width,
            intra: 0,
            inter: 0,
        })
        .collect();
    let slot = |d: f64| ((d / width).floor().max(0.0) as usize).min(HIST_BINS - 1);
    for &d in &scores.intra {
        bins[slot(d)].intra += 1;
    }
    for &d in &scores.inter {
        bins[slot(d)].inter += 1;
    }
    bins
}

/// One row of the offset scatter export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetRow {
    pub device_id: u32,
    pub w_ts: f64,
    pub phi_ts: f64,
    pub w_ns: f64,
    pub phi_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetScatter {
    pub rows: Vec<OffsetRow>,
    /// Between-device over within-device variance of `w_ts`.
    pub ts_freq_variance_ratio: f64,
}

/// Between-group over within-group variance (one-way ANOVA F statistic).
pub fn variance_ratio(values: &[f64], groups: &[u32]) -> Result<f64> {
    if values.len() != groups.len() {
        return Err(Error::shape("one group per value required"));
    }
    let mut by: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (&v, &g) in values.iter().zip(groups) {
        by.entry(g).or_default().push(v);
    }
    let (n, k) = (values.len(), by.len());
    if k < 2 || n <= k {
        return Err(Error::Degenerate(
            "variance ratio needs 2 groups and replicates".into(),
        ));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let (mut between, mut within) = (0.0, 0.0);
    for vs in by.values() {
        let m = vs.iter().sum::<f64>() / vs.len() as f64;
        between += vs.len() as f64 * (m - mean).powi(2);
        within += vs.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let between = between / (k - 1) as f64;
    let within = within / (n - k) as f64;
    Ok(if within > 0.0 {
        between / within
    } else if between > 0.0 {
        f64::INFINITY
    } else {
        0.0
    })
}

/// TS offsets of every record (against preamble `x`) next to the neural
/// offsets of `model` (zeros when absent or without an NS stage).
pub fn offset_scatter(
    records: &[TransmissionRecord],
    x: &ComplexSignal,
    grid: SearchGrid,
    model: Option<&mut RffModel>,
) -> Result<OffsetScatter> {
    let est = TsEstimator::new(x, grid)?;
    let sigs: Vec<&ComplexSignal> = records.iter().map(|r| &r.signal).collect();
    let ns = match model {
        Some(m) => m.ns_offsets(&sigs)?,
        None => vec![(0.0, 0.0); records.len()],
    };
    let mut rows = Vec::with_capacity(records.len());
    for (r, (w_ns, phi_ns)) in records.iter().zip(ns) {
        let e = est.estimate(&r.signal.clone().normalized()?)?;
        rows.push(OffsetRow {
            device_id: r.device_id,
            w_ts: e.freq_cycles_per_sample,
            phi_ts: e.phase_cycles,
            w_ns,
            phi_ns,
        });
    }
    let w: Vec<f64> = rows.iter().map(|r| r.w_ts).collect();
    let g: Vec<u32> = rows.iter().map(|r| r.device_id).collect();
    let ratio = variance_ratio(&w, &g).unwrap_or(f64::NAN);
    Ok(OffsetScatter {
        rows,
        ts_freq_variance_ratio: ratio,
    })
}

/// Everything computed for one evaluation split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: String,
    pub scores: PairScoreSet,
    pub roc: RocReport,
    pub histogram: Vec<HistBin>,
    pub mi_bound: Option<MiBound>,
}

/// Score, ROC and histogram of labeled fingerprints.
pub fn evaluate_fingerprints(
    split: &str,
    fingerprints: &[Vec<f64>],
    labels: &[u32],
    pairing: Pairing,
    mi_bound: Option<MiBound>,
) -> Result<EvalReport> {
    let scores = pair_scores(fingerprints, labels, pairing)?;
    let roc = roc(&scores)?;
    let histogram = distance_histogram(&scores);
    Ok(EvalReport {
        split: split.to_string(),
        scores,
        roc,
        histogram,
        mi_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distances() {
        assert_eq!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), 2.0);
        assert!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(verify(&[1.0, 0.0], &[1.0, 0.0], 0.0).unwrap());
        assert!(!verify(&[1.0, 0.0], &[-1.0, 0.0], 1.0).unwrap());
    }

    #[test]
    fn pair_counts() {
        let f = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.1],
            vec![0.0, 1.0],
            vec![0.1, 1.0],
        ];
        let s = pair_scores(&f, &[0, 0, 1, 1], Pairing::All).unwrap();
        assert_eq!((s.intra.len(), s.inter.len()), (2, 4));
        assert!(pair_scores(&f, &[0, 0, 0, 0], Pairing::All).is_err());
        assert!(pair_scores(&f, &[0, 1, 2, 3], Pairing::All).is_err());
    }

    #[test]
    fn pair_index_decoding() {
        let n = 7;
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                assert_eq!(pair_at(k, n), (i, j));
                k += 1;
            }
        }
    }

    #[test]
    fn capped_sampling_is_deterministic() {
        let f: Vec<Vec<f64>> = (0..40).map(|i| vec![1.0, i as f64]).collect();
        let l: Vec<u32> = (0..40).map(|i| i % 4).collect();
        let p = Pairing::Capped {
            max_pairs: 100,
            seed: 5,
        };
        let a = pair_scores(&f, &l, p).unwrap();
        assert_eq!(a.intra.len() + a.inter.len(), 100);
        assert_eq!(a, pair_scores(&f, &l, p).unwrap());
    }

    #[test]
    fn roc_perfect_and_chance() {
        let perfect = PairScoreSet {
            intra: vec![0.0; 5],
            inter: vec![1.0; 7],
        };
        let r = roc(&perfect).unwrap();
        assert_eq!((r.auc, r.eer), (1.0, 0.0));
        let same = PairScoreSet {
            intra: vec![0.1, 0.5, 0.9, 0.3],
            inter: vec![0.3, 0.9, 0.1, 0.5],
        };
        let r = roc(&same).unwrap();
        assert_eq!(r.auc, 0.5);
        assert!((r.eer - 0.5).abs() < 1e-12);
        for w in r.tpr.windows(2).chain(r.fpr.windows(2)) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn histogram_bins() {
        let s = PairScoreSet {
            intra: vec![0.0, 0.019, 0.02],
            inter: vec![2.0, 1.999],
        };
        let h = distance_histogram(&s);
        assert_eq!(h.len(), 100);
        assert_eq!((h[0].intra, h[1].intra, h[99].inter), (2, 1, 2));
    }

    #[test]
    fn variance_ratio_separates_groups() {
        let v = [0.0, 0.1, 10.0, 10.1];
        assert!(variance_ratio(&v, &[0, 0, 1, 1]).unwrap() > 1000.0);
        assert!(variance_ratio(&v, &[0, 1, 0, 1]).unwrap() < 1.0);
    }

    #[test]
    fn uniform_mi_bound_is_zero() {
        let k = 5;
        let b = mi_bound_from_log_q(&[-(k as f64).ln(); 9], k).unwrap();
        assert_eq!(b.shifted, 0.0);
    }
}
