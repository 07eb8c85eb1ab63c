//! Training objectives and their magnitude-normalised combination.
//!
//! Each loss exists twice: as a plain function over slices, and as a fused
//! tape node carrying its value and local gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{NodeId, Tape};

pub const PROB_CLAMP: f64 = 1e-7;
pub const BOUNDARY_WEIGHT_CAP: f64 = 20.0;
pub const CLASS_WEIGHT_CAP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub margin: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub smooth_l1_beta: f64,
    pub norm_epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.9,
            gamma: 0.1,
            margin: 1.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            smooth_l1_beta: 1.0,
            norm_epsilon: 1e-8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha,
            self.beta,
            self.gamma,
            self.margin,
            self.focal_gamma,
            self.focal_alpha,
            self.smooth_l1_beta,
            self.norm_epsilon,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || self.margin <= 0.0 || self.smooth_l1_beta <= 0.0 {
            return Err(Error::Config(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

/// Component values of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub boundary_wbce: f64,
    pub boundary_smooth_l1: f64,
    pub boundary_focal: f64,
    pub function_wbce: f64,
    pub contrastive: Option<f64>,
    pub combined: f64,
    pub pair_count: usize,
}

impl LossReport {
    pub fn boundary(&self) -> f64 {
        self.boundary_wbce + self.boundary_smooth_l1 + self.boundary_focal
    }

    /// One JSON object tagged with `step`.
    pub fn json_line(&self, step: usize) -> String {
        let mut v = serde_json::to_value(self).expect("report serialises");
        v["step"] = step.into();
        v.to_string()
    }

    /// Elementwise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let sum = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let cl: Vec<f64> = reports.iter().filter_map(|r| r.contrastive).collect();
        LossReport {
            boundary_wbce: sum(|r| r.boundary_wbce),
            boundary_smooth_l1: sum(|r| r.boundary_smooth_l1),
            boundary_focal: sum(|r| r.boundary_focal),
            function_wbce: sum(|r| r.function_wbce),
            contrastive: (!cl.is_empty()).then(|| cl.iter().sum::<f64>() / cl.len() as f64),
            combined: sum(|r| r.combined),
            pair_count: reports.iter().map(|r| r.pair_count).sum(),
        }
    }
}

fn valid_count(mask: &[bool]) -> Result<f64> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::AllMasked);
    }
    Ok(n as f64)
}

fn check_lengths(n: usize, others: &[usize]) -> Result<()> {
    if others.iter().any(|&m| m != n) {
        return Err(Error::Precondition(format!("length mismatch: {n} vs {others:?}")));
    }
    Ok(())
}

/// Clamped probability and the derivative of the clamp.
fn clamp(p: f64) -> (f64, f64) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, 0.0)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, 0.0)
    } else {
        (p, 1.0)
    }
}

fn wbce_grad(pred: &[f64], target: &[f64], weights: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_lengths(pred.len(), &[target.len(), weights.len(), mask.len()])?;
    let n = valid_count(mask)?;
    let mut total = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        if !mask[i] {
            continue;
        }
        let (p, dp) = clamp(pred[i]);
        let (y, w) = (target[i], weights[i]);
        total -= w * (y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        grad[i] = -w * (y / p - (1.0 - y) / (1.0 - p)) * dp / n;
    }
    Ok((total / n, grad))
}

/// Weighted binary cross-entropy, mean over unmasked entries.
pub fn wbce(pred: &[f64], target: &[f64], weights: &[f64], mask: &[bool]) -> Result<f64> {
    wbce_grad(pred, target, weights, mask).map(|(v, _)| v)
}

fn focal_grad(pred: &[f64], target: &[bool], mask: &[bool], alpha: f64, gamma: f64) -> Result<(f64, Vec<f64>)> {
    check_lengths(pred.len(), &[target.len(), mask.len()])?;
    let n = valid_count(mask)?;
    let mut total = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        if !mask[i] {
            continue;
        }
        let (p, dp) = clamp(pred[i]);
        let (value, d) = if target[i] {
            let q = 1.0 - p;
            let v = -alpha * q.powf(gamma) * p.ln();
            let d = alpha * gamma * q.powf(gamma - 1.0) * p.ln() - alpha * q.powf(gamma) / p;
            (v, d)
        } else {
            let a = 1.0 - alpha;
            let v = -a * p.powf(gamma) * (1.0 - p).ln();
            let d = -a * gamma * p.powf(gamma - 1.0) * (1.0 - p).ln() + a * p.powf(gamma) / (1.0 - p);
            (v, d)
        };
        total += value;
        grad[i] = d * dp / n;
    }
    Ok((total / n, grad))
}

/// Focal loss on binary targets, mean over unmasked entries.
pub fn focal(pred: &[f64], target: &[bool], mask: &[bool], alpha: f64, gamma: f64) -> Result<f64> {
    focal_grad(pred, target, mask, alpha, gamma).map(|(v, _)| v)
}

fn smooth_l1_grad(pred: &[f64], target: &[f64], mask: &[bool], beta: f64) -> Result<(f64, Vec<f64>)> {
    check_lengths(pred.len(), &[target.len(), mask.len()])?;
    if beta <= 0.0 {
        return Err(Error::Precondition("smooth-L1 beta must be positive".into()));
    }
    let n = valid_count(mask)?;
    let mut total = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        if !mask[i] {
            continue;
        }
        let d = pred[i] - target[i];
        if d.abs() < beta {
            total += 0.5 * d * d / beta;
            grad[i] = d / beta / n;
        } else {
            total += d.abs() - 0.5 * beta;
            grad[i] = d.signum() / n;
        }
    }
    Ok((total / n, grad))
}

/// Huber-style loss, mean over unmasked entries.
pub fn smooth_l1(pred: &[f64], target: &[f64], mask: &[bool], beta: f64) -> Result<f64> {
    smooth_l1_grad(pred, target, mask, beta).map(|(v, _)| v)
}

/// One term of the margin contrastive loss with its gradient w.r.t. `zi`.
fn pair_term(zi: &[f64], zj: &[f64], same: bool, margin: f64) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = zi.iter().zip(zj).map(|(a, b)| a - b).collect();
    let d2: f64 = diff.iter().map(|d| d * d).sum();
    if same {
        return (d2, diff.iter().map(|d| 2.0 * d).collect());
    }
    let dist = d2.sqrt();
    if dist >= margin {
        return (0.0, vec![0.0; diff.len()]);
    }
    let gap = margin - dist;
    let g = if dist > 0.0 {
        diff.iter().map(|d| -2.0 * gap * d / dist).collect()
    } else {
        vec![0.0; diff.len()]
    };
    (gap * gap, g)
}

/// Mean contrastive loss over `(z_i, z_j, same_label)` pairs, `None` if empty.
pub fn contrastive(pairs: &[(&[f64], &[f64], bool)], margin: f64) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let total: f64 = pairs.iter().map(|(a, b, s)| pair_term(a, b, *s, margin).0).sum();
    Some(total / pairs.len() as f64)
}

/// Boundary frame weights: `L / mass` on frames with target above 0.5, 1 elsewhere.
///
/// `mass` is the summed target over valid frames; the weight is capped.
pub fn boundary_weights(target: &[f64], mask: &[bool]) -> Vec<f64> {
    let len = mask.iter().filter(|&&m| m).count() as f64;
    let mass: f64 = target.iter().zip(mask).filter(|(_, &m)| m).map(|(t, _)| t).sum();
    let w = if mass > 0.0 { (len / mass).min(BOUNDARY_WEIGHT_CAP) } else { 1.0 };
    target.iter().map(|&t| if t > 0.5 { w } else { 1.0 }).collect()
}

/// Inverse-frequency class weights, normalised to mean 1 and capped.
///
/// Classes never seen get the cap.
pub fn class_weights(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![1.0; counts.len()];
    }
    let inv: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { f64::INFINITY } else { total as f64 / c as f64 })
        .collect();
    let finite: Vec<f64> = inv.iter().copied().filter(|v| v.is_finite()).collect();
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    inv.iter().map(|v| (v / mean).min(CLASS_WEIGHT_CAP)).collect()
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            step: 0,
            detail: format!("{name} = {v}"),
        })
    }
}

/// Tape node for [`wbce`] over the values of `pred`.
pub fn wbce_node(tape: &mut Tape, pred: NodeId, target: &[f64], weights: &[f64], mask: &[bool]) -> Result<NodeId> {
    let (v, g) = wbce_grad(&tape.value(pred).data, target, weights, mask)?;
    Ok(tape.custom_scalar(finite("wbce", v)?, vec![pred], vec![g]))
}

/// Tape node for [`focal`].
pub fn focal_node(tape: &mut Tape, pred: NodeId, target: &[bool], mask: &[bool], alpha: f64, gamma: f64) -> Result<NodeId> {
    let (v, g) = focal_grad(&tape.value(pred).data, target, mask, alpha, gamma)?;
    Ok(tape.custom_scalar(finite("focal", v)?, vec![pred], vec![g]))
}

/// Tape node for [`smooth_l1`].
pub fn smooth_l1_node(tape: &mut Tape, pred: NodeId, target: &[f64], mask: &[bool], beta: f64) -> Result<NodeId> {
    let (v, g) = smooth_l1_grad(&tape.value(pred).data, target, mask, beta)?;
    Ok(tape.custom_scalar(finite("smooth_l1", v)?, vec![pred], vec![g]))
}

/// Tape node for [`contrastive`] over row-vector nodes `z`; pairs index into `z`.
pub fn contrastive_node(tape: &mut Tape, z: &[NodeId], pairs: &[(usize, usize, bool)], margin: f64) -> Result<Option<NodeId>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let n = pairs.len() as f64;
    let mut grads: Vec<Vec<f64>> = z.iter().map(|&id| vec![0.0; tape.value(id).len()]).collect();
    let mut total = 0.0;
    for &(i, j, same) in pairs {
        let (v, g) = pair_term(&tape.value(z[i]).data, &tape.value(z[j]).data, same, margin);
        total += v;
        for (k, gk) in g.iter().enumerate() {
            grads[i][k] += gk / n;
            grads[j][k] -= gk / n;
        }
    }
    Ok(Some(tape.custom_scalar(finite("contrastive", total / n)?, z.to_vec(), grads)))
}

/// Per-input coefficients of [`combine`]: each weight divided by the
/// magnitude of its component, the three boundary parts sharing one scale.
pub fn combine_coefficients(boundary_parts: [f64; 3], function: f64, contrastive: Option<f64>, w: &LossWeights) -> Result<Vec<f64>> {
    let boundary: f64 = boundary_parts.iter().sum();
    let cb = w.alpha / (finite("boundary loss", boundary)?.abs() + w.norm_epsilon);
    let mut coeffs = vec![cb; 3];
    coeffs.push(w.beta / (finite("function loss", function)?.abs() + w.norm_epsilon));
    if let Some(v) = contrastive {
        coeffs.push(w.gamma / (finite("contrastive loss", v)?.abs() + w.norm_epsilon));
    }
    Ok(coeffs)
}

/// Boundary parts, function loss and optional contrastive loss, each divided
/// by its own detached magnitude and weighted.
pub fn combine(
    tape: &mut Tape,
    boundary_parts: [NodeId; 3],
    function: NodeId,
    contrastive: Option<NodeId>,
    w: &LossWeights,
) -> Result<NodeId> {
    let coeffs = combine_coefficients(
        boundary_parts.map(|p| tape.scalar(p)),
        tape.scalar(function),
        contrastive.map(|c| tape.scalar(c)),
        w,
    )?;
    let mut inputs = boundary_parts.to_vec();
    inputs.push(function);
    inputs.extend(contrastive);
    Ok(tape.combine(&inputs, &coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::nn::gradcheck::grad_check;
    use crate::nn::{backward, Init, ParamStore};
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn wbce_values() {
        let m = [true];
        assert!(wbce(&[1.0], &[1.0], &[1.0], &m).unwrap() < 2e-7);
        assert!((wbce(&[0.5], &[1.0], &[1.0], &m).unwrap() - LN2).abs() < 1e-12);
        assert!((wbce(&[0.5], &[1.0], &[2.0], &m).unwrap() - 2.0 * LN2).abs() < 1e-12);
        assert!(matches!(wbce(&[0.5], &[1.0], &[1.0], &[false]), Err(Error::AllMasked)));
    }

    #[test]
    fn focal_values() {
        let v = focal(&[0.9], &[true], &[true], 0.25, 2.0).unwrap();
        assert!((v - (-0.25 * 0.01 * 0.9f64.ln())).abs() < 1e-15);
        assert!((v - 2.634e-4).abs() < 1e-7);

        let p = [0.2, 0.7, 0.95, 0.4];
        let y = [true, false, true, false];
        let m = [true; 4];
        let yf: Vec<f64> = y.iter().map(|&b| b as u8 as f64).collect();
        let bce = wbce(&p, &yf, &[1.0; 4], &m).unwrap();
        assert!((focal(&p, &y, &m, 0.5, 0.0).unwrap() - 0.5 * bce).abs() < 1e-12);

        let ratio = |g| focal(&[0.9], &[true], &m[..1], 0.25, g).unwrap() / focal(&[0.5], &[true], &m[..1], 0.25, g).unwrap();
        assert!(ratio(2.0) < ratio(0.0));
    }

    #[test]
    fn smooth_l1_values() {
        let m = [true];
        assert_eq!(smooth_l1(&[0.3], &[0.3], &m, 1.0).unwrap(), 0.0);
        assert!((smooth_l1(&[0.5], &[0.0], &m, 1.0).unwrap() - 0.125).abs() < 1e-15);
        assert!((smooth_l1(&[2.0], &[0.0], &m, 1.0).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn contrastive_values() {
        let z = [0.3, -0.2];
        assert_eq!(contrastive(&[(&z, &z, true)], 1.0), Some(0.0));
        assert_eq!(contrastive(&[(&[0.0, 0.0], &[2.0, 0.0], false)], 1.0), Some(0.0));
        let a = [0.0, 0.0];
        let b = [0.4, 0.0];
        assert!((contrastive(&[(&a, &b, false)], 1.0).unwrap() - 0.36).abs() < 1e-12);
        assert!((contrastive(&[(&a, &b, true)], 1.0).unwrap() - 0.16).abs() < 1e-12);
        assert_eq!(contrastive(&[], 1.0), None);
    }

    #[test]
    fn weights() {
        let t = [0.0, 0.08, 0.54, 1.0, 0.54, 0.08, 0.0, 0.0];
        let w = boundary_weights(&t, &[true; 8]);
        let want = 8.0 / 2.24;
        assert_eq!(w.iter().filter(|&&v| (v - want).abs() < 1e-12).count(), 3);
        assert_eq!(w.iter().filter(|&&v| v == 1.0).count(), 5);
        let w = boundary_weights(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[true; 25]);
        assert_eq!(w[0], BOUNDARY_WEIGHT_CAP);

        let cw = class_weights(&[10, 30, 60]);
        assert!((cw.iter().sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
        assert!(cw[0] > cw[1] && cw[1] > cw[2]);
        let mut counts = vec![1000; 12];
        counts[0] = 1;
        assert_eq!(class_weights(&counts)[0], CLASS_WEIGHT_CAP);
    }

    #[test]
    fn combine_value_and_absence() {
        let mut t = Tape::new();
        let w = LossWeights::default();
        let parts = [t.input(Matrix::scalar(0.7)), t.input(Matrix::scalar(0.2)), t.input(Matrix::scalar(0.05))];
        let f = t.input(Matrix::scalar(1.3));
        let c = t.input(Matrix::scalar(0.4));
        let all = combine(&mut t, parts, f, Some(c), &w).unwrap();
        assert!((t.scalar(all) - 1.1).abs() < 1e-6);
        let two = combine(&mut t, parts, f, None, &w).unwrap();
        assert!((t.scalar(two) - 1.0).abs() < 1e-6);
        let bad = t.input(Matrix::scalar(f64::NAN));
        assert!(matches!(combine(&mut t, parts, bad, None, &w), Err(Error::NonFinite { .. })));
    }

    fn toy() -> ParamStore {
        ParamStore::build(11, |s, rng| {
            s.register("w", 3, 4, Init::Glorot { fan_in: 3, fan_out: 4 }, rng);
            s.register("p", 3, 2, Init::Glorot { fan_in: 3, fan_out: 2 }, rng);
        })
    }

    fn toy_x() -> Matrix {
        Matrix::from_vec(6, 3, (0..18).map(|i| ((i * 5 % 11) as f64 - 5.0) / 3.0).collect())
    }

    const TARGET: [f64; 24] = [
        0.0, 0.3, 0.9, 1.0, 0.08, 0.54, 1.0, 0.2, 0.6, 0.0, 0.1, 0.7, 0.45, 1.0, 0.0, 0.0, 0.8, 0.35, 0.0, 1.0, 0.5, 0.25,
        0.65, 0.15,
    ];

    fn probe_all(s: &ParamStore) -> Vec<usize> {
        (0..s.len()).collect()
    }

    #[test]
    fn component_gradients_match_differences() {
        let s = toy();
        let x = toy_x();
        let mask: Vec<bool> = (0..24).map(|i| i % 7 != 3).collect();
        let weights: Vec<f64> = (0..24).map(|i| 1.0 + (i % 3) as f64).collect();
        let hard: Vec<bool> = TARGET.iter().map(|&t| t > 0.5).collect();
        let probs = |s: &ParamStore, t: &mut Tape| {
            let xi = t.input(x.clone());
            let w = t.param(s, "w");
            let z = t.matmul(xi, w);
            t.sigmoid(z)
        };
        type Build<'a> = Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId> + 'a>;
        let cases: Vec<(&str, Build)> = vec![
            ("wbce", Box::new(|t, p| wbce_node(t, p, &TARGET, &weights, &mask))),
            ("focal", Box::new(|t, p| focal_node(t, p, &hard, &mask, 0.25, 2.0))),
            ("smooth_l1", Box::new(|t, p| smooth_l1_node(t, p, &TARGET, &mask, 0.3))),
        ];
        for (name, build) in cases {
            let rep = grad_check(&s, &probe_all(&s), 1e-6, 1e-7, |s, t| {
                let p = probs(s, t);
                build(t, p)
            })
            .unwrap();
            assert!(rep.max_rel_error < 1e-5, "{name}: {rep:?}");
        }
    }

    #[test]
    fn contrastive_gradient_matches_differences() {
        let s = toy();
        let x = toy_x();
        let pairs = [(0, 1, true), (0, 2, false), (1, 3, false), (2, 4, true), (3, 5, false), (4, 5, false)];
        let rep = grad_check(&s, &probe_all(&s), 1e-6, 1e-7, |s, t| {
            let xi = t.input(x.clone());
            let w = t.param(s, "p");
            let z = t.matmul(xi, w);
            let z = t.scale(z, 0.3);
            let rows: Vec<NodeId> = (0..6).map(|r| t.slice_rows(z, r, 1)).collect();
            Ok(contrastive_node(t, &rows, &pairs, 1.0)?.unwrap())
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }

    #[test]
    fn combine_scales_each_component_gradient() {
        let s = toy();
        let x = toy_x();
        let mask = vec![true; 24];
        let w = LossWeights::default();
        let build = |t: &mut Tape| -> Result<([NodeId; 3], NodeId, Option<NodeId>)> {
            let xi = t.input(x.clone());
            let pw = t.param(&s, "w");
            let z = t.matmul(xi, pw);
            let p = t.sigmoid(z);
            let hard: Vec<bool> = TARGET.iter().map(|&v| v > 0.5).collect();
            let b = [
                wbce_node(t, p, &TARGET, &[1.0; 24], &mask)?,
                smooth_l1_node(t, p, &TARGET, &mask, 1.0)?,
                focal_node(t, p, &hard, &mask, 0.25, 2.0)?,
            ];
            let rev: Vec<f64> = TARGET.iter().rev().copied().collect();
            let f = wbce_node(t, p, &rev, &[1.0; 24], &mask)?;
            let pp = t.param(&s, "p");
            let e = t.matmul(xi, pp);
            let rows: Vec<NodeId> = (0..6).map(|r| t.slice_rows(e, r, 1)).collect();
            let c = contrastive_node(t, &rows, &[(0, 1, true), (2, 5, false)], 1.0)?;
            Ok((b, f, c))
        };
        let mut t = Tape::new();
        let (b, f, c) = build(&mut t).unwrap();
        let root = combine(&mut t, b, f, c, &w).unwrap();
        let got = backward(&t, root, &s).unwrap();

        let lb: f64 = b.iter().map(|&n| t.scalar(n)).sum();
        let (lf, lc) = (t.scalar(f), t.scalar(c.unwrap()));
        let mut want = vec![0.0; s.len()];
        for (node, k) in [
            (b[0], w.alpha / (lb + 1e-8)),
            (b[1], w.alpha / (lb + 1e-8)),
            (b[2], w.alpha / (lb + 1e-8)),
            (f, w.beta / (lf + 1e-8)),
            (c.unwrap(), w.gamma / (lc + 1e-8)),
        ] {
            let g = backward(&t, node, &s).unwrap();
            for (a, b) in want.iter_mut().zip(g) {
                *a += k * b;
            }
        }
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    fn rotate(z: &[f64], theta: f64) -> Vec<f64> {
        let (c, s) = (theta.cos(), theta.sin());
        vec![c * z[0] - s * z[1], s * z[0] + c * z[1], z[2]]
    }

    proptest! {
        #[test]
        fn losses_are_non_negative(p in proptest::collection::vec(0.0f64..=1.0, 1..20), seed in 0u64..1000) {
            let n = p.len();
            let y: Vec<f64> = (0..n).map(|i| ((i as u64 * 31 + seed) % 7) as f64 / 6.0).collect();
            let m = vec![true; n];
            prop_assert!(wbce(&p, &y, &vec![1.0; n], &m).unwrap() >= 0.0);
            let hard: Vec<bool> = y.iter().map(|&v| v > 0.5).collect();
            prop_assert!(focal(&p, &hard, &m, 0.25, 2.0).unwrap() >= 0.0);
            prop_assert!(smooth_l1(&p, &y, &m, 1.0).unwrap() >= 0.0);
        }

        #[test]
        fn contrastive_symmetry_and_rotation(
            a in proptest::collection::vec(-1.0f64..1.0, 3),
            b in proptest::collection::vec(-1.0f64..1.0, 3),
            same in any::<bool>(),
            theta in 0.0f64..6.3,
        ) {
            let v = contrastive(&[(&a, &b, same)], 1.0).unwrap();
            let swapped = contrastive(&[(&b, &a, same)], 1.0).unwrap();
            prop_assert!((v - swapped).abs() < 1e-12);
            let (ra, rb) = (rotate(&a, theta), rotate(&b, theta));
            let rotated = contrastive(&[(&ra, &rb, same)], 1.0).unwrap();
            prop_assert!((v - rotated).abs() < 1e-12);
        }
    }
}
