//! Ranking metrics and per-day metric frames.
//!
//! NCE is mean binary cross-entropy normalized by the entropy of the label
//! base rate (natural log): 1.0 means no better than predicting the base
//! rate, lower is better. AUC uses Mann-Whitney rank summation with average
//! ranks for ties. Frames serialize as line-delimited JSON.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::GrowthReport;
use crate::error::{Error, Result};

/// Predictions are clamped into [EPS, 1-EPS] before taking logs.
pub const PRED_CLAMP_EPS: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(PRED_CLAMP_EPS, 1.0 - PRED_CLAMP_EPS)
}

fn check_labels(labels: &[u8]) -> Result<(u64, u64)> {
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels { value: if pos == 0 { 0 } else { 1 } });
    }
    Ok((pos, neg))
}

/// Normalized cross-entropy. Errors if labels are empty or all the same
/// (base-rate entropy would be zero).
pub fn nce(preds: &[f64], labels: &[u8]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::MetricInput("preds/labels length mismatch".into()));
    }
    if preds.is_empty() {
        return Err(Error::MetricInput("empty inputs".into()));
    }
    let (pos, _) = check_labels(labels)?;
    let q = pos as f64 / labels.len() as f64;
    let mut ce = 0.0;
    for (&p, &y) in preds.iter().zip(labels) {
        let p = clamp(p);
        ce -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    ce /= labels.len() as f64;
    let h = -(q * q.ln() + (1.0 - q) * (1.0 - q).ln());
    Ok(ce / h)
}

/// Area under the ROC curve; ties between scores contribute half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::MetricInput("scores/labels length mismatch".into()));
    }
    if scores.is_empty() {
        return Err(Error::MetricInput("empty inputs".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::MetricInput("NaN score".into()));
    }
    let (pos, neg) = check_labels(labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // Average ranks over tie runs, then sum ranks of positives.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - pos as f64 * (pos as f64 + 1.0) / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Upper bucket edges at the {20,40,60,80}% quantiles (nearest rank) of the
/// per-user engagement-count distribution, deduplicated. A degenerate
/// distribution therefore yields fewer, merged buckets.
pub fn engagement_quantile_edges(per_user_counts: &[u64]) -> Vec<u64> {
    if per_user_counts.is_empty() {
        return Vec::new();
    }
    let mut sorted = per_user_counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mut edges: Vec<u64> = [0.2, 0.4, 0.6, 0.8]
        .iter()
        .map(|q| {
            let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
            sorted[rank - 1]
        })
        .collect();
    edges.dedup();
    // An edge at the distribution max would leave the bucket above it empty
    // by construction; drop it so buckets partition the observed range.
    while edges.last().is_some() && edges.last() == sorted.last() {
        edges.pop();
    }
    edges
}

/// Index of the bucket holding `count` given upper edges; bucket i covers
/// counts <= edges[i], the last bucket is open above.
pub fn bucket_of(count: u64, edges: &[u64]) -> usize {
    edges.partition_point(|&e| e < count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentBucket {
    pub examples: u64,
    pub nce_a: Option<f64>,
    pub nce_b: Option<f64>,
    /// nce_b - nce_a; negative means model B is better in this segment.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub edges: Vec<u64>,
    pub buckets: Vec<SegmentBucket>,
}

/// Per-activeness-segment NCE for one or two aligned prediction sets. A
/// bucket whose labels are degenerate reports absent values rather than
/// failing the whole report.
pub fn segment_report(
    counts: &[u64],
    labels: &[u8],
    preds_a: &[f64],
    preds_b: Option<&[f64]>,
    edges: &[u64],
) -> Result<SegmentReport> {
    if counts.len() != labels.len() || counts.len() != preds_a.len() {
        return Err(Error::MetricInput("segment inputs length mismatch".into()));
    }
    if let Some(b) = preds_b {
        if b.len() != counts.len() {
            return Err(Error::MetricInput("segment inputs length mismatch".into()));
        }
    }
    let nbuckets = edges.len() + 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nbuckets];
    for (i, &c) in counts.iter().enumerate() {
        members[bucket_of(c, edges)].push(i);
    }
    let nce_of = |idxs: &[usize], preds: &[f64]| -> Option<f64> {
        let p: Vec<f64> = idxs.iter().map(|&i| preds[i]).collect();
        let y: Vec<u8> = idxs.iter().map(|&i| labels[i]).collect();
        nce(&p, &y).ok()
    };
    let buckets = members
        .iter()
        .map(|idxs| {
            let nce_a = nce_of(idxs, preds_a);
            let nce_b = preds_b.and_then(|b| nce_of(idxs, b));
            let delta = match (nce_a, nce_b) {
                (Some(a), Some(b)) => Some(b - a),
                _ => None,
            };
            SegmentBucket { examples: idxs.len() as u64, nce_a, nce_b, delta }
        })
        .collect();
    Ok(SegmentReport { edges: edges.to_vec(), buckets })
}

/// Coefficient of determination of the least-squares line through (x, y).
pub fn pearson_r2(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    (sxy * sxy) / (sxx * syy)
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
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
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let r2 = pearson_r2(&rx, &ry);
    if r2.is_nan() {
        return f64::NAN;
    }
    // Recover the sign from the rank covariance.
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let sxy: f64 = rx.iter().zip(&ry).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    r2.sqrt() * sxy.signum()
}

#[derive(Debug, Clone, Copy)]
pub struct OlsSlope {
    pub slope: f64,
    /// Standard error of the slope estimate.
    pub se: f64,
    pub n: usize,
}

/// Least-squares slope of y on x with its standard error.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> OlsSlope {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    assert!(n >= 3, "need >= 3 points for a slope standard error");
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut sse = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - (intercept + slope * x);
        sse += r * r;
    }
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    OlsSlope { slope, se, n }
}

/// One evaluation frame of the recurrent protocol: metrics of the model
/// trained through `day`, scored frozen on the head of the next day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFrame {
    /// 1-based training day this frame reflects.
    pub day: u32,
    /// Day whose head was scored; None when no eval examples existed.
    pub eval_day: Option<u32>,
    pub eval_examples: u64,
    /// Per-task values; None when that task's eval labels were degenerate.
    pub nce: Vec<Option<f64>>,
    pub auc: Vec<Option<f64>>,
    pub positive_rate: Option<f64>,
    pub item_growth: Option<GrowthReport>,
    pub user_growth: Option<GrowthReport>,
    pub segments: Option<SegmentReport>,
}

impl MetricsFrame {
    /// Mean NCE across tasks with a present value.
    pub fn mean_nce(&self) -> Option<f64> {
        let vals: Vec<f64> = self.nce.iter().flatten().copied().collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Mean AUC across tasks with a present value.
    pub fn mean_auc(&self) -> Option<f64> {
        let vals: Vec<f64> = self.auc.iter().flatten().copied().collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

pub fn write_frames(frames: &[MetricsFrame], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for f in frames {
        let line = serde_json::to_string(f)
            .map_err(|e| Error::config(format!("frame serialize: {e}")))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<Vec<MetricsFrame>> {
    let r = BufReader::new(File::open(path)?);
    let mut frames = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        frames.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i as u64 + 1,
            msg: format!("frame: {e}"),
        })?);
    }
    Ok(frames)
}

/// Column-text table: header row then one space-aligned row per entry.
pub fn format_columns(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i < widths.len() {
                widths[i] = widths[i].max(cell.len());
            }
        }
    }
    let mut out = String::new();
    let fmt_row = |cells: Vec<String>, widths: &[usize]| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{:>width$}", c, width = widths[i]))
            .collect::<Vec<_>>()
            .join("  ")
    };
    out.push_str(&fmt_row(header.iter().map(|s| s.to_string()).collect(), &widths));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(row.clone(), &widths));
        out.push('\n');
    }
    out
}

/// Join two frame files' segment reports into per-bucket deltas (b - a).
pub fn segment_delta(a: &SegmentReport, b: &SegmentReport) -> Result<SegmentReport> {
    if a.edges != b.edges {
        return Err(Error::MetricInput("segment edges differ between runs".into()));
    }
    let buckets = a
        .buckets
        .iter()
        .zip(&b.buckets)
        .map(|(ba, bb)| {
            let delta = match (ba.nce_a, bb.nce_a) {
                (Some(x), Some(y)) => Some(y - x),
                _ => None,
            };
            SegmentBucket { examples: ba.examples, nce_a: ba.nce_a, nce_b: bb.nce_a, delta }
        })
        .collect();
    Ok(SegmentReport { edges: a.edges.clone(), buckets })
}

/// Per-user positive-engagement counts accumulated by the trainer.
pub type UserCounts = HashMap<u64, u64>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nce_hand_example() {
        let v = nce(&[0.8, 0.4], &[1, 0]).unwrap();
        assert!((v - 0.529_446_9).abs() < 1e-6, "got {v}");
        assert!((v - 0.52946).abs() < 1e-3);
    }

    #[test]
    fn nce_of_base_rate_predictor_is_one() {
        let labels: Vec<u8> = (0..1000).map(|i| u8::from(i % 4 == 0)).collect();
        let q = labels.iter().filter(|&&y| y == 1).count() as f64 / labels.len() as f64;
        let preds = vec![q; labels.len()];
        let v = nce(&preds, &labels).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn nce_of_perfect_clamped_predictions_is_tiny() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let preds: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
        let v = nce(&preds, &labels).unwrap();
        assert!(v < 1e-5, "got {v}");
        assert!(v > 0.0);
    }

    #[test]
    fn nce_rejects_degenerate_labels() {
        match nce(&[0.5, 0.5], &[1, 1]).unwrap_err() {
            Error::DegenerateLabels { value } => assert_eq!(value, 1),
            other => panic!("wrong error {other:?}"),
        }
        assert!(nce(&[], &[]).is_err());
    }

    #[test]
    fn auc_hand_example() {
        let v = auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(v, 0.75);
    }

    #[test]
    fn auc_all_ties_is_half() {
        let v = auc(&[0.3; 6], &[0, 1, 0, 1, 0, 1]).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn auc_perfect_and_inverted() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn auc_requires_both_classes() {
        assert!(auc(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn quantile_edges_split_and_merge() {
        let counts: Vec<u64> = (1..=100).collect();
        assert_eq!(engagement_quantile_edges(&counts), vec![20, 40, 60, 80]);
        // All-equal distribution collapses to zero edges: a single bucket.
        assert!(engagement_quantile_edges(&[7; 50]).is_empty());
    }

    #[test]
    fn bucket_assignment_uses_upper_edges() {
        let edges = vec![20, 40, 60, 80];
        assert_eq!(bucket_of(1, &edges), 0);
        assert_eq!(bucket_of(20, &edges), 0);
        assert_eq!(bucket_of(21, &edges), 1);
        assert_eq!(bucket_of(80, &edges), 3);
        assert_eq!(bucket_of(81, &edges), 4);
    }

    #[test]
    fn segment_report_identical_models_zero_delta() {
        let counts: Vec<u64> = (0..200).map(|i| i % 100).collect();
        let labels: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
        let preds: Vec<f64> = (0..200).map(|i| 0.3 + 0.4 * ((i % 2) as f64)).collect();
        let edges = engagement_quantile_edges(&counts);
        let rep = segment_report(&counts, &labels, &preds, Some(&preds), &edges).unwrap();
        assert_eq!(rep.buckets.len(), edges.len() + 1);
        for b in &rep.buckets {
            if b.examples > 0 {
                assert_eq!(b.delta, Some(0.0));
            }
        }
    }

    #[test]
    fn segment_report_marks_degenerate_bucket_absent() {
        // Bucket 0 (counts <= 5) gets only positive labels.
        let counts = vec![1, 2, 50, 60, 70, 80];
        let labels = vec![1, 1, 0, 1, 0, 1];
        let preds = vec![0.9, 0.8, 0.2, 0.7, 0.3, 0.6];
        let edges = vec![5];
        let rep = segment_report(&counts, &labels, &preds, None, &edges).unwrap();
        assert_eq!(rep.buckets[0].nce_a, None);
        assert!(rep.buckets[1].nce_a.is_some());
    }

    #[test]
    fn r2_of_exact_line_is_one() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 7.0).collect();
        assert!((pearson_r2(&xs, &ys) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_signs() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let up: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        let down: Vec<f64> = xs.iter().map(|x| -x * 3.0).collect();
        assert!((spearman(&xs, &up) - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &down) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_slope_recovers_line() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let fit = ols_slope(&xs, &ys);
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!(fit.se < 1e-10);
    }

    #[test]
    fn frames_round_trip_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.jsonl");
        let frames = vec![
            MetricsFrame {
                day: 1,
                eval_day: Some(2),
                eval_examples: 100,
                nce: vec![Some(0.9), None],
                auc: vec![Some(0.7), None],
                positive_rate: Some(0.4),
                item_growth: None,
                user_growth: None,
                segments: None,
            },
            MetricsFrame {
                day: 2,
                eval_day: None,
                eval_examples: 0,
                nce: vec![None, None],
                auc: vec![None, None],
                positive_rate: None,
                item_growth: None,
                user_growth: None,
                segments: None,
            },
        ];
        write_frames(&frames, &path).unwrap();
        assert_eq!(read_frames(&path).unwrap(), frames);
    }
}
