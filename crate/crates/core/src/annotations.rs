//! Segment annotations, label vocabularies and frame-level training targets.

use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::matrix::Matrix;

/// Gaps or overlaps up to this many seconds are snapped to their midpoint.
pub const SNAP_TOLERANCE: f64 = 0.05;

/// Ordered label list; indices are class ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    labels: Vec<String>,
}

impl Vocabulary {
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::default();
        for l in labels {
            v.intern(l.as_ref());
        }
        v
    }

    pub fn canonical(label: &str) -> String {
        label.trim().to_lowercase()
    }

    /// Index of `label`, inserting it (canonicalised) when new.
    pub fn intern(&mut self, label: &str) -> usize {
        let key = Self::canonical(label);
        match self.labels.iter().position(|l| *l == key) {
            Some(i) => i,
            None => {
                self.labels.push(key);
                self.labels.len() - 1
            }
        }
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        let key = Self::canonical(label);
        self.labels.iter().position(|l| *l == key)
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// One label per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.labels.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_labels(text.lines().filter(|l| !l.trim().is_empty())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub label: usize,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Contiguous labelled segmentation covering `[0, duration]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTrack {
    pub segments: Vec<Segment>,
    pub duration: f64,
}

impl SegmentTrack {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        let Some(first) = self.segments.first() else {
            return Err(Error::Precondition("track has no segments".into()));
        };
        if first.start != 0.0 {
            return Err(Error::Precondition("track must start at 0".into()));
        }
        for w in self.segments.windows(2) {
            if w[0].end != w[1].start {
                return Err(Error::Precondition(format!(
                    "segments not contiguous at {} / {}",
                    w[0].end, w[1].start
                )));
            }
        }
        for s in &self.segments {
            if !(s.end > s.start) || s.label >= n_classes {
                return Err(Error::Precondition(format!("invalid segment {s:?}")));
            }
        }
        if self.segments.last().map(|s| s.end) != Some(self.duration) {
            return Err(Error::Precondition("last segment must end at the duration".into()));
        }
        Ok(())
    }

    /// Segment starts excluding 0; the track end is not a boundary either.
    pub fn interior_boundaries(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }

    /// Label of the segment covering `t`, if `t` lies inside the track.
    pub fn label_at(&self, t: f64) -> Option<usize> {
        if t < 0.0 || t >= self.duration {
            return None;
        }
        let i = self.segments.partition_point(|s| s.end <= t);
        self.segments.get(i).map(|s| s.label)
    }

    /// Lines `start<TAB>end<TAB>label`.
    pub fn to_tsv(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for s in &self.segments {
            let label = vocab.label(s.label).unwrap_or("unknown");
            out.push_str(&format!("{:.3}\t{:.3}\t{}\n", s.start, s.end, label));
        }
        out
    }

    pub fn write_tsv(&self, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv(vocab)).map_err(|e| Error::io(path, e))
    }
}

fn label_chars_ok(label: &str) -> bool {
    !label.is_empty()
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | ' ' | '.'))
}

/// Parses a TSV annotation. `duration` defaults to the last segment end.
pub fn parse_segments_str(text: &str, duration: Option<f64>, vocab: &mut Vocabulary) -> Result<SegmentTrack> {
    let mut rows: Vec<(usize, f64, f64, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let num = |s: &str| {
            s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("'{s}' is not a number"),
            })
        };
        let (start, end) = (num(fields[0])?, num(fields[1])?);
        if !(end > start) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("end {end} is not after start {start}"),
            });
        }
        let label = Vocabulary::canonical(fields[2]);
        if !label_chars_ok(&label) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("label '{}' contains unsupported characters", fields[2]),
            });
        }
        rows.push((line_no, start, end, label));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "annotation contains no segments".into(),
        });
    }
    if rows[0].1.abs() > SNAP_TOLERANCE {
        return Err(Error::Parse {
            line: rows[0].0,
            message: format!("first segment starts at {} instead of 0", rows[0].1),
        });
    }
    rows[0].1 = 0.0;
    for i in 1..rows.len() {
        let (prev_end, start) = (rows[i - 1].2, rows[i].1);
        if start < rows[i - 1].1 {
            return Err(Error::Parse {
                line: rows[i].0,
                message: "segment starts before the previous one".into(),
            });
        }
        let gap = start - prev_end;
        if gap.abs() > SNAP_TOLERANCE {
            let kind = if gap > 0.0 { "gap" } else { "overlap" };
            return Err(Error::Parse {
                line: rows[i].0,
                message: format!("{kind} of {:.3} s with the previous segment", gap.abs()),
            });
        }
        let mid = 0.5 * (prev_end + start);
        rows[i - 1].2 = mid;
        rows[i].1 = mid;
    }
    let last = rows.last_mut().expect("non-empty");
    let duration = match duration {
        Some(d) => {
            if (last.2 - d).abs() > SNAP_TOLERANCE {
                return Err(Error::Parse {
                    line: last.0,
                    message: format!("track ends at {} but the audio lasts {d}", last.2),
                });
            }
            last.2 = d;
            d
        }
        None => last.2,
    };
    for (line, start, end, _) in &rows {
        if !(end > start) {
            return Err(Error::Parse {
                line: *line,
                message: "segment collapsed after snapping".into(),
            });
        }
    }
    let segments = rows
        .into_iter()
        .map(|(_, start, end, label)| Segment {
            start,
            end,
            label: vocab.intern(&label),
        })
        .collect();
    Ok(SegmentTrack { segments, duration })
}

pub fn parse_segments(path: impl AsRef<Path>, duration: Option<f64>, vocab: &mut Vocabulary) -> Result<SegmentTrack> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_segments_str(&text, duration, vocab)
}

/// Audio window inside a song, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub offset: f64,
    pub length: f64,
}

impl Window {
    pub fn new(offset: f64, length: f64) -> Self {
        Self { offset, length }
    }
}

/// Time grid of the encoder output: frame `j` covers
/// `[j / rate, (j + 1) / rate)` relative to the window start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputGrid {
    pub rate: f64,
    pub len: usize,
}

impl OutputGrid {
    /// `round(length * rate)` frames.
    pub fn nominal(length: f64, rate: f64) -> Self {
        Self {
            rate,
            len: (length * rate).round() as usize,
        }
    }

    /// The grid the encoder produces for a window of `length` seconds:
    /// `ceil(frames / stem_stride)` frames at `frame_rate / stem_stride`.
    pub fn for_window(length: f64, frontend: &FrontendConfig, stem_stride: usize) -> Self {
        let frames = frontend.frames_for_seconds(length);
        Self {
            rate: frontend.frame_rate() / stem_stride as f64,
            len: frames.div_ceil(stem_stride),
        }
    }

    pub fn for_samples(num_samples: usize, frontend: &FrontendConfig, stem_stride: usize) -> Self {
        Self {
            rate: frontend.frame_rate() / stem_stride as f64,
            len: frontend.frames_for(num_samples).div_ceil(stem_stride),
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rate
    }

    /// Window-relative time of frame `j`.
    pub fn time(&self, j: usize) -> f64 {
        j as f64 / self.rate
    }

    /// Frames whose centre falls in the window-relative span `[a, b)`.
    pub fn frames_in(&self, a: f64, b: f64) -> Range<usize> {
        let lo = ((a * self.rate - 0.5).ceil().max(0.0) as usize).min(self.len);
        let hi = ((b * self.rate - 0.5).ceil().max(0.0) as usize).min(self.len);
        lo..hi.max(lo)
    }
}

/// Frame-level targets on an output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTargets {
    pub boundary: Vec<f64>,
    /// `[len x n_classes]`, one-hot on valid frames, zero elsewhere.
    pub functions: Matrix,
    pub valid: Vec<bool>,
    pub grid_rate: f64,
}

impl ActivationTargets {
    pub fn len(&self) -> usize {
        self.boundary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundary.is_empty()
    }

    /// Class index per frame (`None` on masked frames).
    pub fn labels(&self) -> Vec<Option<usize>> {
        self.functions
            .rows_iter()
            .zip(&self.valid)
            .map(|(row, &ok)| ok.then(|| row.iter().position(|&v| v == 1.0)).flatten())
            .collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Odd frame count nearest to `ramp_width * rate` (at least 1).
pub fn ramp_frames(ramp_width: f64, rate: f64) -> usize {
    let x = ramp_width * rate;
    let lower = (2.0 * ((x - 1.0) / 2.0).floor() + 1.0).max(1.0);
    let upper = lower + 2.0;
    if (x - lower).abs() <= (upper - x).abs() {
        lower as usize
    } else {
        upper as usize
    }
}

/// Hamming window of odd length `m`; the centre sample is exactly 1.
pub fn hamming_ramp(m: usize) -> Vec<f64> {
    if m <= 1 {
        return vec![1.0];
    }
    (0..m)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (m - 1) as f64).cos())
        .map(|w| if w > 1.0 { 1.0 } else { w })
        .collect()
}

/// Index of the first frame whose centre time `offset + (j + 0.5) / rate` is
/// at or after `t`, the same comparison that assigns frames to sections.
fn first_frame_at(t: f64, offset: f64, rate: f64) -> isize {
    let centre = |j: isize| offset + (j as f64 + 0.5) / rate;
    let mut j = ((t - offset) * rate - 0.5).ceil() as isize;
    while centre(j - 1) >= t {
        j -= 1;
    }
    while centre(j) < t {
        j += 1;
    }
    j
}

/// Builds boundary and function targets for a window of a track.
///
/// Each interior boundary places a Hamming bump of
/// `ramp_frames(ramp_width, rate)` frames centred on the first frame whose
/// centre is at or after the boundary, the frame that starts the new
/// section. Bumps centred just outside the window still contribute their
/// visible flank. Overlapping bumps combine by maximum. Frames past the end
/// of the song are masked.
pub fn targets_from_track(
    track: &SegmentTrack,
    window: Window,
    grid: OutputGrid,
    ramp_width: f64,
    n_classes: usize,
) -> ActivationTargets {
    let len = grid.len;
    let mut boundary = vec![0.0; len];
    let ramp = hamming_ramp(ramp_frames(ramp_width, grid.rate));
    let half = (ramp.len() / 2) as isize;
    for b in track.interior_boundaries() {
        let centre = first_frame_at(b, window.offset, grid.rate);
        for (n, &w) in ramp.iter().enumerate() {
            let j = centre - half + n as isize;
            if j >= 0 && (j as usize) < len {
                let slot = &mut boundary[j as usize];
                *slot = f64::max(*slot, w);
            }
        }
    }
    let mut functions = Matrix::zeros(len, n_classes);
    let mut valid = vec![false; len];
    for j in 0..len {
        let t = window.offset + (j as f64 + 0.5) / grid.rate;
        if let Some(label) = track.label_at(t) {
            if label < n_classes {
                functions.set(j, label, 1.0);
                valid[j] = true;
            }
        }
    }
    ActivationTargets {
        boundary,
        functions,
        valid,
        grid_rate: grid.rate,
    }
}

/// Unordered pair of segment indices with a same-label flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentPair {
    pub i: usize,
    pub j: usize,
    pub same_label: bool,
}

/// Minimum overlap with the window for a segment to take part in pairing.
pub const MIN_PAIR_OVERLAP: f64 = 1.0;

/// Largest share of negative pairs kept when subsampling.
pub const MAX_NEGATIVE_SHARE: f64 = 0.7;

/// Segments overlapping the window by at least [`MIN_PAIR_OVERLAP`] seconds.
pub fn window_segments(track: &SegmentTrack, window: Window) -> Vec<usize> {
    let (w0, w1) = (window.offset, window.offset + window.length);
    track
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.end.min(w1) - s.start.max(w0) >= MIN_PAIR_OVERLAP)
        .map(|(i, _)| i)
        .collect()
}

/// Candidate contrastive pairs for one window.
///
/// With more than `max_pairs` candidates, a seeded subsample of exactly
/// `max_pairs` is drawn with at most 70 % negatives when positives allow it.
pub fn segment_pairs<R: Rng + ?Sized>(
    track: &SegmentTrack,
    window: Window,
    max_pairs: usize,
    rng: &mut R,
) -> Vec<SegmentPair> {
    let idx = window_segments(track, window);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let same = track.segments[i].label == track.segments[j].label;
            let p = SegmentPair { i, j, same_label: same };
            if same {
                pos.push(p);
            } else {
                neg.push(p);
            }
        }
    }
    if pos.len() + neg.len() <= max_pairs {
        let mut all: Vec<_> = pos.into_iter().chain(neg).collect();
        all.sort_by_key(|p| (p.i, p.j));
        return all;
    }
    pos.shuffle(rng);
    neg.shuffle(rng);
    let neg_cap = (MAX_NEGATIVE_SHARE * max_pairs as f64).floor() as usize;
    let n_pos = pos.len().min(max_pairs - neg.len().min(neg_cap));
    let mut n_neg = neg.len().min(max_pairs - n_pos);
    if n_pos > 0 {
        let ratio_cap = (MAX_NEGATIVE_SHARE / (1.0 - MAX_NEGATIVE_SHARE) * n_pos as f64).floor() as usize;
        n_neg = n_neg.min(ratio_cap);
    }
    let mut out: Vec<_> = pos.into_iter().take(n_pos).chain(neg.into_iter().take(n_neg)).collect();
    out.sort_by_key(|p| (p.i, p.j));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn track(bounds: &[f64], labels: &[usize]) -> SegmentTrack {
        let segments = bounds
            .windows(2)
            .zip(labels)
            .map(|(w, &label)| Segment { start: w[0], end: w[1], label })
            .collect();
        SegmentTrack {
            segments,
            duration: *bounds.last().unwrap(),
        }
    }

    #[test]
    fn parses_simple_tsv() {
        let mut v = Vocabulary::default();
        let t = parse_segments_str("0.0\t10.0\tverse\n10.0\t20.0\tchorus", Some(20.0), &mut v).unwrap();
        assert_eq!(t.segments.len(), 2);
        assert_eq!(v.labels(), &["verse".to_string(), "chorus".to_string()]);
        t.validate(v.len()).unwrap();
    }

    #[test]
    fn small_gap_snaps_to_midpoint() {
        let mut v = Vocabulary::default();
        let t = parse_segments_str("0\t10\tA\n10.03\t20\tB\n", None, &mut v).unwrap();
        assert!((t.segments[0].end - 10.015).abs() < 1e-12);
        assert_eq!(t.segments[0].end, t.segments[1].start);
        assert_eq!(v.labels(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn overlap_reports_line() {
        let mut v = Vocabulary::default();
        let err = parse_segments_str("0\t10\tverse\n9.5\t20\tchorus\n", None, &mut v).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("overlap"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_rows() {
        let mut v = Vocabulary::default();
        assert!(matches!(
            parse_segments_str("0\t10\tverse\n10\t8\tchorus\n", None, &mut v),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_segments_str("0\t10\tver$e\n", None, &mut v),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(parse_segments_str("0\t10\tverse\n", Some(30.0), &mut v).is_err());
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocabulary::from_labels(["Verse", "chorus", "verse"]);
        assert_eq!(v.len(), 2);
        v.save(dir.path().join("vocab.txt")).unwrap();
        assert_eq!(Vocabulary::load(dir.path().join("vocab.txt")).unwrap(), v);
    }

    #[test]
    fn ramp_sizes_and_shape() {
        assert_eq!(ramp_frames(1.0, 5.0), 5);
        assert_eq!(ramp_frames(1.0, 12.5), 13);
        assert_eq!(ramp_frames(1.0, 0.5), 1);
        let w = hamming_ramp(5);
        let want = [0.08, 0.54, 1.0, 0.54, 0.08];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bump_centred_on_boundary_frame() {
        let t = track(&[0.0, 10.0, 20.0], &[0, 1]);
        let grid = OutputGrid { rate: 5.0, len: 100 };
        let tg = targets_from_track(&t, Window::new(0.0, 20.0), grid, 1.0, 2);
        assert_eq!(tg.boundary[50], 1.0);
        let want = [0.08, 0.54, 1.0, 0.54, 0.08];
        for (k, w) in want.iter().enumerate() {
            assert!((tg.boundary[48 + k] - w).abs() < 1e-12);
        }
        assert_eq!(tg.boundary.iter().filter(|&&v| v > 0.0).count(), 5);
        let labels = tg.labels();
        assert_eq!(labels[49], Some(0));
        assert_eq!(labels[50], Some(1));
    }

    #[test]
    fn single_segment_has_no_boundary_mass() {
        let t = track(&[0.0, 30.0], &[0]);
        let tg = targets_from_track(&t, Window::new(0.0, 30.0), OutputGrid { rate: 10.0, len: 300 }, 1.0, 1);
        assert!(tg.boundary.iter().all(|&v| v == 0.0));
        assert_eq!(tg.valid_count(), 300);
    }

    #[test]
    fn class_switches_at_rounded_boundary() {
        let t = track(&[0.0, 13.37, 40.0], &[0, 1]);
        let grid = OutputGrid { rate: 12.5, len: 250 };
        let tg = targets_from_track(&t, Window::new(5.0, 20.0), grid, 1.0, 2);
        let switch = ((13.37 - 5.0) * 12.5f64).round() as usize;
        let labels = tg.labels();
        assert_eq!(labels[switch - 1], Some(0));
        assert_eq!(labels[switch], Some(1));
    }

    #[test]
    fn padding_frames_are_masked() {
        let t = track(&[0.0, 10.0, 15.0], &[0, 1]);
        let grid = OutputGrid::nominal(20.0, 10.0);
        let tg = targets_from_track(&t, Window::new(0.0, 20.0), grid, 1.0, 2);
        assert_eq!(tg.valid_count(), 150);
        assert!(tg.functions.rows_iter().skip(150).all(|r| r.iter().all(|&v| v == 0.0)));
        let ones: f64 = tg.functions.data.iter().sum();
        assert_eq!(ones as usize, tg.valid_count());
    }

    #[test]
    fn grid_for_window_matches_frame_law() {
        let fe = FrontendConfig::default().with_ratio(2);
        let g = OutputGrid::for_window(48.0, &fe, 4);
        assert_eq!(g.len, (1 + 48 * 24000 / 480usize).div_ceil(4));
        assert!((g.rate - 12.5).abs() < 1e-12);
    }

    #[test]
    fn pairs_enumerate_small_windows() {
        let t = track(&[0.0, 10.0, 20.0, 30.0], &[0, 1, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = segment_pairs(&t, Window::new(0.0, 30.0), 64, &mut rng);
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs.iter().filter(|p| p.same_label).count(), 1);
        assert!(pairs.iter().any(|p| p.i == 0 && p.j == 2 && p.same_label));

        let single = segment_pairs(&t, Window::new(1.0, 5.0), 64, &mut rng);
        assert!(single.is_empty());
    }

    #[test]
    fn pair_subsample_is_balanced() {
        let bounds: Vec<f64> = (0..=100).map(|i| i as f64 * 3.0).collect();
        let labels: Vec<usize> = (0..100).map(|i| i % 5).collect();
        let t = track(&bounds, &labels);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pairs = segment_pairs(&t, Window::new(0.0, 300.0), 64, &mut rng);
        assert_eq!(pairs.len(), 64);
        assert!(pairs.iter().filter(|p| !p.same_label).count() <= 45);
    }

    proptest::proptest! {
        #[test]
        fn shifting_window_shifts_targets(k in 0usize..40, split in 20.0f64..60.0) {
            let t = track(&[0.0, split, 90.0], &[0, 1]);
            let grid = OutputGrid { rate: 4.0, len: 120 };
            let a = targets_from_track(&t, Window::new(0.0, 30.0), grid, 1.0, 2);
            let b = targets_from_track(&t, Window::new(k as f64 / 4.0, 30.0), grid, 1.0, 2);
            for j in 0..grid.len - k {
                proptest::prop_assert!((a.boundary[j + k] - b.boundary[j]).abs() < 1e-12);
                proptest::prop_assert_eq!(a.labels()[j + k], b.labels()[j]);
            }
        }

        #[test]
        fn bump_is_symmetric(b in 10.0f64..20.0, rate in 2.0f64..20.0) {
            let t = track(&[0.0, b, 40.0], &[0, 1]);
            let grid = OutputGrid::nominal(40.0, rate);
            let tg = targets_from_track(&t, Window::new(0.0, 40.0), grid, 1.0, 2);
            let c = (b * rate).round() as usize;
            proptest::prop_assert_eq!(tg.boundary[c], 1.0);
            for d in 1..8 {
                proptest::prop_assert!((tg.boundary[c - d] - tg.boundary[c + d]).abs() < 1e-12);
            }
        }
    }
}
