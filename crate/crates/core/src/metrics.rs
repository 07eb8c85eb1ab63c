//! Boundary hit rates and frame-wise function accuracy.

use serde::{Deserialize, Serialize};

use crate::annotations::{OutputGrid, SegmentTrack};
use crate::error::{Error, Result};
use crate::postprocess::{peak_pick, reconstruct_track, PeakPickConfig};
use crate::matrix::Matrix;

pub const TOLERANCES: [f64; 2] = [0.5, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HitRate {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub hits: usize,
}

impl HitRate {
    fn from_hits(hits: usize, n_ref: usize, n_est: usize) -> Self {
        let precision = if n_est == 0 { 0.0 } else { hits as f64 / n_est as f64 };
        let recall = if n_ref == 0 { 0.0 } else { hits as f64 / n_ref as f64 };
        let f = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f,
            hits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub hr_05: HitRate,
    pub hr_3: HitRate,
    pub n_ref_boundaries: usize,
    pub n_est_boundaries: usize,
}

impl MetricsReport {
    /// Unweighted mean over songs; counts are summed.
    pub fn mean(reports: &[MetricsReport]) -> MetricsReport {
        let n = reports.len().max(1) as f64;
        let avg = |f: &dyn Fn(&MetricsReport) -> HitRate| HitRate {
            precision: reports.iter().map(|r| f(r).precision).sum::<f64>() / n,
            recall: reports.iter().map(|r| f(r).recall).sum::<f64>() / n,
            f: reports.iter().map(|r| f(r).f).sum::<f64>() / n,
            hits: reports.iter().map(|r| f(r).hits).sum(),
        };
        MetricsReport {
            acc: reports.iter().map(|r| r.acc).sum::<f64>() / n,
            hr_05: avg(&|r| r.hr_05),
            hr_3: avg(&|r| r.hr_3),
            n_ref_boundaries: reports.iter().map(|r| r.n_ref_boundaries).sum(),
            n_est_boundaries: reports.iter().map(|r| r.n_est_boundaries).sum(),
        }
    }
}

/// Size of a maximum matching between `reference` and `estimate` where
/// boundaries within `tolerance` seconds may be paired.
pub fn matched_hits(reference: &[f64], estimate: &[f64], tolerance: f64) -> usize {
    let adj: Vec<Vec<usize>> = reference
        .iter()
        .map(|&r| {
            estimate
                .iter()
                .enumerate()
                .filter(|(_, &e)| (r - e).abs() <= tolerance)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; estimate.len()];

    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].map_or(true, |k| augment(k, adj, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }

    (0..reference.len())
        .filter(|&i| {
            let mut seen = vec![false; estimate.len()];
            augment(i, &adj, &mut seen, &mut owner)
        })
        .count()
}

/// Precision, recall and F of boundary hits at `tolerance`.
pub fn hit_rate_f(reference: &[f64], estimate: &[f64], tolerance: f64) -> HitRate {
    let hits = matched_hits(reference, estimate, tolerance);
    HitRate::from_hits(hits, reference.len(), estimate.len())
}

/// Fraction of unmasked frames where `pred` and `truth` agree.
pub fn frame_accuracy(pred: &[usize], truth: &[usize], mask: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() != mask.len() {
        return Err(Error::Precondition(format!(
            "length mismatch: {} / {} / {}",
            pred.len(),
            truth.len(),
            mask.len()
        )));
    }
    let valid = mask.iter().filter(|&&m| m).count();
    if valid == 0 {
        return Err(Error::AllMasked);
    }
    let agree = (0..pred.len()).filter(|&i| mask[i] && pred[i] == truth[i]).count();
    Ok(agree as f64 / valid as f64)
}

/// Labels of a track sampled at frame centres of `grid`, with validity.
pub fn track_labels(track: &SegmentTrack, grid: OutputGrid) -> (Vec<usize>, Vec<bool>) {
    (0..grid.len)
        .map(|j| match track.label_at((j as f64 + 0.5) / grid.rate) {
            Some(l) => (l, true),
            None => (0, false),
        })
        .unzip()
}

/// Scores estimated boundaries and an estimated track against the truth.
///
/// Accuracy compares both tracks at the frame centres of `grid`.
pub fn score_tracks(reference: &SegmentTrack, estimate: &SegmentTrack, grid: OutputGrid) -> Result<MetricsReport> {
    let ref_b = reference.interior_boundaries();
    let est_b = estimate.interior_boundaries();
    let (truth, mask) = track_labels(reference, grid);
    let (pred, _) = track_labels(estimate, grid);
    Ok(MetricsReport {
        acc: frame_accuracy(&pred, &truth, &mask)?,
        hr_05: hit_rate_f(&ref_b, &est_b, TOLERANCES[0]),
        hr_3: hit_rate_f(&ref_b, &est_b, TOLERANCES[1]),
        n_ref_boundaries: ref_b.len(),
        n_est_boundaries: est_b.len(),
    })
}

/// Full-song activations to metrics: peak picking, track reconstruction,
/// hit rates at both tolerances and accuracy on the activation grid.
pub fn evaluate_song(
    boundary_curve: &[f64],
    function_logits: &Matrix,
    grid_rate: f64,
    truth: &SegmentTrack,
    peaks: &PeakPickConfig,
) -> Result<(MetricsReport, SegmentTrack)> {
    // The last grid frames can start after the song ends; peaks there are dropped.
    let est: Vec<f64> = peak_pick(boundary_curve, grid_rate, peaks)
        .into_iter()
        .filter(|&b| b > 0.0 && b < truth.duration)
        .collect();
    let estimate = reconstruct_track(&est, function_logits, grid_rate, truth.duration)?;
    let grid = OutputGrid {
        rate: grid_rate,
        len: function_logits.rows,
    };
    let mut report = score_tracks(truth, &estimate, grid)?;
    // Boundaries dropped while merging empty spans still count as estimates.
    let ref_b = truth.interior_boundaries();
    report.hr_05 = hit_rate_f(&ref_b, &est, TOLERANCES[0]);
    report.hr_3 = hit_rate_f(&ref_b, &est, TOLERANCES[1]);
    report.n_est_boundaries = est.len();
    Ok((report, estimate))
}
