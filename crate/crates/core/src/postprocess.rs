//! Activation curves to boundary times and labelled segments.

use serde::{Deserialize, Serialize};

use crate::annotations::{OutputGrid, Segment, SegmentTrack};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakPickConfig {
    /// Half-width of the strict-maximum window, seconds.
    pub max_window: f64,
    /// Half-width of the moving-mean window, seconds.
    pub mean_window: f64,
    pub delta: f64,
    pub min_separation: f64,
}

impl Default for PeakPickConfig {
    fn default() -> Self {
        Self {
            max_window: 3.0,
            mean_window: 6.0,
            delta: 0.05,
            min_separation: 3.0,
        }
    }
}

impl PeakPickConfig {
    pub fn validate(&self, grid_rate: f64) -> Result<()> {
        let ok = self.max_window > 0.0
            && self.mean_window > 0.0
            && self.delta >= 0.0
            && self.min_separation > 0.0
            && self.min_separation * grid_rate >= 1.0 - 1e-9;
        if !ok {
            return Err(Error::Config(format!("invalid peak picking config {self:?} at {grid_rate} Hz")));
        }
        Ok(())
    }
}

const SEP_EPS: f64 = 1e-9;

/// Frame indices of accepted peaks, ascending.
pub fn peak_frames(curve: &[f64], grid_rate: f64, cfg: &PeakPickConfig) -> Vec<usize> {
    let n = curve.len();
    let w_max = (cfg.max_window * grid_rate).round() as usize;
    let w_mean = (cfg.mean_window * grid_rate).round() as usize;

    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &v in curve {
        prefix.push(prefix.last().unwrap() + v);
    }

    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| {
            let (lo, hi) = (i.saturating_sub(w_max), (i + w_max).min(n - 1));
            let strict = (lo..=hi).all(|k| k == i || curve[k] < curve[i]);
            if !strict {
                return false;
            }
            let (lo, hi) = (i.saturating_sub(w_mean), (i + w_mean).min(n - 1));
            let mean = (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64;
            curve[i] >= mean + cfg.delta
        })
        .collect();

    candidates.sort_by(|&a, &b| curve[b].total_cmp(&curve[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        let far = kept
            .iter()
            .all(|&k| (c.abs_diff(k) as f64) / grid_rate >= cfg.min_separation - SEP_EPS);
        if far {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

/// Boundary times, in seconds, picked from a boundary activation curve.
pub fn peak_pick(curve: &[f64], grid_rate: f64, cfg: &PeakPickConfig) -> Vec<f64> {
    peak_frames(curve, grid_rate, cfg)
        .into_iter()
        .map(|i| i as f64 / grid_rate)
        .collect()
}

/// Most frequent row argmax in `rows`; ties go to the lower class.
fn majority(logits: &Matrix, rows: std::ops::Range<usize>) -> Option<usize> {
    if rows.is_empty() {
        return None;
    }
    let mut votes = vec![0usize; logits.cols];
    for r in rows {
        let row = logits.row(r);
        let mut best = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        votes[best] += 1;
    }
    let mut best = 0;
    for (c, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = c;
        }
    }
    Some(best)
}

/// Labels the spans between boundaries by majority frame vote.
///
/// Spans that contain no frame centre are merged into the previous span
/// (or the next one, at the start).
pub fn reconstruct_track(boundaries: &[f64], function_logits: &Matrix, grid_rate: f64, duration: f64) -> Result<SegmentTrack> {
    if function_logits.rows == 0 || function_logits.cols == 0 {
        return Err(Error::Precondition("empty function logits".into()));
    }
    if boundaries.windows(2).any(|w| w[0] > w[1]) || boundaries.iter().any(|&b| !(0.0..=duration).contains(&b)) {
        return Err(Error::Precondition("boundaries must be sorted and inside the song".into()));
    }
    let grid = OutputGrid {
        rate: grid_rate,
        len: function_logits.rows,
    };
    let mut edges = vec![0.0];
    edges.extend(boundaries.iter().copied().filter(|&b| b > 0.0 && b < duration));
    edges.push(duration);
    edges.dedup();

    let mut spans: Vec<(f64, f64, Option<usize>)> = Vec::new();
    for w in edges.windows(2) {
        let label = majority(function_logits, grid.frames_in(w[0], w[1]));
        match (label, spans.last_mut()) {
            (None, Some(prev)) => prev.1 = w[1],
            _ => spans.push((w[0], w[1], label)),
        }
    }
    if spans[0].2.is_none() {
        if spans.len() > 1 {
            spans[1].0 = 0.0;
            spans.remove(0);
        } else {
            spans[0].2 = majority(function_logits, 0..function_logits.rows);
        }
    }
    Ok(SegmentTrack {
        segments: spans
            .into_iter()
            .map(|(start, end, label)| Segment {
                start,
                end,
                label: label.expect("every kept span has frames"),
            })
            .collect(),
        duration,
    })
}
