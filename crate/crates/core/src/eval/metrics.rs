//! Sequence metrics and score normalization.

use serde::{Deserialize, Serialize};

use crate::data::{Position, N_SHOT_TYPES};
use crate::error::{Error, Result};

/// Index of the CTC blank in smoothed shot frames.
pub const BLANK: usize = N_SHOT_TYPES;
/// Weight of the uniform component mixed into generated shot frames.
pub const FRAME_SMOOTHING: f64 = 0.01;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Fewest frames that can emit `labels`: one per label plus a blank between repeats.
pub fn ctc_min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `labels` under per-frame distributions over the
/// vocabulary including `blank`, summed over all CTC alignments.
pub fn ctc_loss(frames: &[Vec<f64>], labels: &[usize], blank: usize) -> Result<f64> {
    let required = ctc_min_frames(labels);
    if frames.len() < required {
        return Err(Error::InfeasibleAlignment { frames: frames.len(), required });
    }
    if let Some(f) = frames.iter().find(|f| f.len() <= blank || labels.iter().any(|&l| l >= f.len())) {
        return Err(Error::Shape(format!("frame of {} symbols cannot hold blank {blank} and labels", f.len())));
    }
    // Extended label sequence: blank, l1, blank, l2, ..., blank.
    let ext: Vec<usize> = std::iter::once(blank).chain(labels.iter().flat_map(|&l| [l, blank])).collect();
    let s = ext.len();
    let lp = |t: usize, k: usize| frames[t][ext[k]].ln();
    let mut alpha = vec![f64::NEG_INFINITY; s];
    if frames.is_empty() {
        return Ok(if labels.is_empty() { 0.0 } else { f64::INFINITY });
    }
    alpha[0] = lp(0, 0);
    if s > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..frames.len() {
        let mut next = vec![f64::NEG_INFINITY; s];
        for k in 0..s {
            let mut a = alpha[k];
            if k >= 1 {
                a = log_add(a, alpha[k - 1]);
            }
            if k >= 2 && ext[k] != blank && ext[k] != ext[k - 2] {
                a = log_add(a, alpha[k - 2]);
            }
            next[k] = a + lp(t, k);
        }
        alpha = next;
    }
    let end = if s > 1 { log_add(alpha[s - 1], alpha[s - 2]) } else { alpha[0] };
    Ok(-end)
}

/// A generated shot distribution as a 13-symbol frame with a small uniform floor.
pub fn shot_frame(probs: &[f64; N_SHOT_TYPES]) -> Vec<f64> {
    let u = FRAME_SMOOTHING / (N_SHOT_TYPES + 1) as f64;
    probs.iter().map(|p| (1.0 - FRAME_SMOOTHING) * p + u).chain(std::iter::once(u)).collect()
}

pub fn uniform_frame() -> Vec<f64> {
    vec![1.0 / (N_SHOT_TYPES + 1) as f64; N_SHOT_TYPES + 1]
}

fn separator_frame() -> Vec<f64> {
    let mut f = vec![0.0; N_SHOT_TYPES + 1];
    f[BLANK] = 1.0;
    f
}

/// Frame for a stroke the generated rally never played: it confidently ended.
fn ended_frame() -> Vec<f64> {
    let mut f = vec![FRAME_SMOOTHING / (N_SHOT_TYPES + 1) as f64; N_SHOT_TYPES + 1];
    f[BLANK] += 1.0 - FRAME_SMOOTHING;
    f
}

/// Stroke-level CTC: one smoothed frame per generated stroke and certain-blank
/// separators between strokes, so repeated labels stay emittable. Strokes past
/// the generated end are near-certain blanks, which makes a missing stroke cost
/// as much as a spurious one.
pub fn stroke_ctc(generated: &[[f64; N_SHOT_TYPES]], labels: &[usize]) -> Result<f64> {
    let n = generated.len().max(labels.len());
    let mut frames = Vec::with_capacity(2 * n);
    for i in 0..n {
        if i > 0 {
            frames.push(separator_frame());
        }
        frames.push(generated.get(i).map_or_else(ended_frame, shot_frame));
    }
    ctc_loss(&frames, labels, BLANK)
}

/// Dynamic time warping with Euclidean cost, unconstrained and unnormalized.
pub fn dtw_distance(a: &[Position], b: &[Position]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("DTW needs two non-empty sequences"));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for p in a {
        let mut cur = vec![f64::INFINITY; m + 1];
        for j in 1..=m {
            let best = prev[j].min(prev[j - 1]).min(cur[j - 1]);
            cur[j] = p.distance(&b[j - 1]) + best;
        }
        prev = cur;
    }
    Ok(prev[m])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RnsInputs {
    pub random_score: f64,
    pub rule_score: f64,
    pub agent_score: f64,
}

/// `(random − agent) / (random − rule)`.
pub fn rns(i: RnsInputs) -> Result<f64> {
    let denom = i.random_score - i.rule_score;
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::UndefinedNormalization(i.random_score));
    }
    Ok((i.random_score - i.agent_score) / denom)
}

pub fn mrns(land: f64, shot: f64, mv: f64) -> f64 {
    (land + shot + mv) / 3.0
}

fn histogram(lengths: &[usize], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &l in lengths {
        h[l.clamp(1, bins) - 1] += 1.0 / lengths.len() as f64;
    }
    h
}

/// Base-2 Jensen–Shannon divergence between rally-length histograms.
pub fn length_jsd(real: &[usize], generated: &[usize]) -> Result<f64> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::EmptyInput("length distributions need samples"));
    }
    let bins = real.iter().chain(generated).copied().max().unwrap_or(1).max(1);
    let (p, q) = (histogram(real, bins), histogram(generated, bins));
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter().zip(m).filter(|(x, _)| **x > 0.0).map(|(x, y)| x * (x / y).log2()).sum()
    };
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)).clamp(0.0, 1.0))
}

/// Gaussian kernel density of lengths on `grid`, bandwidth by Scott's rule.
pub fn length_kde(lengths: &[usize], grid: &[f64]) -> Result<Vec<f64>> {
    if lengths.is_empty() {
        return Err(Error::EmptyInput("no lengths for density"));
    }
    let n = lengths.len() as f64;
    let mean = lengths.iter().map(|&l| l as f64).sum::<f64>() / n;
    let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let bw = (var.sqrt() * n.powf(-0.2)).max(1e-3);
    let norm = 1.0 / (n * bw * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&g| lengths.iter().map(|&l| (-0.5 * ((g - l as f64) / bw).powi(2)).exp()).sum::<f64>() * norm)
        .collect())
}

/// `|gt − sim|` for win rates in `[0, 1]`.
pub fn win_rate_difference(gt: f64, sim: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gt) || !(0.0..=1.0).contains(&sim) {
        return Err(Error::InvalidArgument(format!("win rates must lie in [0, 1], got {gt} and {sim}")));
    }
    Ok((gt - sim).abs())
}

#[cfg(test)]
pub(crate) mod oracles {
    use super::*;

    /// Sum over every frame-level path that collapses to `labels`.
    pub fn ctc_brute_force(frames: &[Vec<f64>], labels: &[usize], blank: usize) -> f64 {
        let v = frames[0].len();
        let t = frames.len();
        let mut total = 0.0;
        let mut path = vec![0usize; t];
        loop {
            let mut collapsed = Vec::new();
            let mut last = None;
            for &s in &path {
                if Some(s) != last && s != blank {
                    collapsed.push(s);
                }
                last = Some(s);
            }
            if collapsed == labels {
                total += path.iter().enumerate().map(|(i, &s)| frames[i][s]).product::<f64>();
            }
            let mut i = 0;
            while i < t {
                path[i] += 1;
                if path[i] < v {
                    break;
                }
                path[i] = 0;
                i += 1;
            }
            if i == t {
                break;
            }
        }
        -total.ln()
    }

    /// Minimum over every monotone alignment, enumerated by recursion.
    pub fn dtw_brute_force(a: &[Position], b: &[Position]) -> f64 {
        fn go(a: &[Position], b: &[Position], i: usize, j: usize) -> f64 {
            let c = a[i].distance(&b[j]);
            if i + 1 == a.len() && j + 1 == b.len() {
                return c;
            }
            let mut best = f64::INFINITY;
            if i + 1 < a.len() {
                best = best.min(go(a, b, i + 1, j));
            }
            if j + 1 < b.len() {
                best = best.min(go(a, b, i, j + 1));
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                best = best.min(go(a, b, i + 1, j + 1));
            }
            c + best
        }
        go(a, b, 0, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::oracles::*;
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Position {
        Position { x, y }
    }

    #[test]
    fn ctc_examples() {
        let mut certain = vec![0.0; 13];
        certain[4] = 1.0;
        assert_eq!(ctc_loss(&[certain], &[4], BLANK).unwrap(), 0.0);
        let uniform = ctc_loss(&[uniform_frame()], &[7], BLANK).unwrap();
        assert!((uniform - 13f64.ln()).abs() < 1e-12);
        assert!((uniform - 2.5649).abs() < 1e-4);
        assert!(matches!(
            ctc_loss(&[uniform_frame()], &[3, 3], BLANK),
            Err(Error::InfeasibleAlignment { frames: 1, required: 3 })
        ));
        assert!(stroke_ctc(&[], &[3, 3]).unwrap().is_finite());
        assert_eq!(ctc_loss(&[], &[], BLANK).unwrap(), 0.0);
    }

    fn frames_strategy(max_t: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.05f64..1.0, 4), 1..=max_t)
            .prop_map(|fs| fs.into_iter().map(|f| { let s: f64 = f.iter().sum(); f.into_iter().map(|v| v / s).collect() }).collect())
    }

    proptest! {
        #[test]
        fn ctc_matches_path_enumeration(frames in frames_strategy(5), labels in prop::collection::vec(0usize..3, 0..=3)) {
            prop_assume!(frames.len() >= ctc_min_frames(&labels));
            let fast = ctc_loss(&frames, &labels, 3).unwrap();
            let slow = ctc_brute_force(&frames, &labels, 3);
            prop_assert!((fast - slow).abs() < 1e-7, "{} vs {}", fast, slow);
        }

        #[test]
        fn raising_the_true_path_never_increases_ctc(frames in frames_strategy(4), label in 0usize..3, boost in 0.0f64..0.5) {
            let before = ctc_loss(&frames, &[label], 3).unwrap();
            let raised: Vec<Vec<f64>> = frames.iter().map(|f| {
                let mut g: Vec<f64> = f.iter().map(|v| v * (1.0 - boost)).collect();
                g[label] += boost;
                g
            }).collect();
            let after = ctc_loss(&raised, &[label], 3).unwrap();
            prop_assert!(after <= before + 1e-12);
        }

        #[test]
        fn dtw_matches_alignment_enumeration(
            a in prop::collection::vec(0usize..3, 1..=5),
            b in prop::collection::vec(0usize..3, 1..=5),
        ) {
            let pts = [p(0.0, 0.0), p(1.0, 0.0), p(0.3, -0.7)];
            let a: Vec<Position> = a.iter().map(|&i| pts[i]).collect();
            let b: Vec<Position> = b.iter().map(|&i| pts[i]).collect();
            let d = dtw_distance(&a, &b).unwrap();
            prop_assert!((d - dtw_brute_force(&a, &b)).abs() < 1e-9);
            prop_assert!((d - dtw_distance(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn jsd_is_bounded_and_symmetric(a in prop::collection::vec(1usize..12, 1..30), b in prop::collection::vec(1usize..12, 1..30)) {
            let j = length_jsd(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&j));
            prop_assert!((j - length_jsd(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn stroke_ctc_rewards_exact_replay() {
        let one_hot = |k: usize| {
            let mut p = [0.0; N_SHOT_TYPES];
            p[k] = 1.0;
            p
        };
        let labels = [2, 2, 5];
        let exact = stroke_ctc(&labels.map(one_hot), &labels).unwrap();
        let per_stroke = -(1.0 - FRAME_SMOOTHING + FRAME_SMOOTHING / 13.0f64).ln();
        assert!((exact - 3.0 * per_stroke).abs() < 1e-9, "{exact}");
        let wrong = stroke_ctc(&[2, 5, 5].map(one_hot), &labels).unwrap();
        assert!(wrong > exact + 1.0);
        let short = stroke_ctc(&[2, 2].map(one_hot), &labels).unwrap();
        let long = stroke_ctc(&[2, 2, 5, 5].map(one_hot), &labels).unwrap();
        assert!(short > exact && long > exact);
        // A missing stroke costs about as much as a spurious one, which has two alignments.
        assert!((short - per_stroke * 2.0 - 1300f64.ln()).abs() < 1e-9, "{short}");
        assert!((long - per_stroke * 3.0 - 650f64.ln()).abs() < 1e-3, "{long}");
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw_distance(&[p(0.0, 0.0)], &[p(1.0, 0.0)]).unwrap(), 1.0);
        let a = [p(0.0, 0.0), p(1.0, 0.0)];
        let b = [p(0.0, 0.0), p(0.0, 0.0), p(1.0, 0.0)];
        assert_eq!(dtw_distance(&a, &b).unwrap(), 0.0);
        assert!(dtw_distance(&[], &b).is_err());
    }

    #[test]
    fn rns_examples() {
        let r = |agent| rns(RnsInputs { random_score: 1.3044, rule_score: 0.9130, agent_score: agent }).unwrap();
        assert_eq!(r(0.9130), 1.0);
        assert_eq!(r(1.3044), 0.0);
        assert!((r(0.5931) - 1.8173).abs() < 1e-4);
        assert!(rns(RnsInputs { random_score: 1.0, rule_score: 1.0, agent_score: 0.5 }).is_err());
        assert_eq!(mrns(0.5, 0.5, 0.5), 0.5);
        assert!((mrns(0.7, 0.7, 0.7) - 0.7).abs() < 1e-15);
        assert!((mrns(1.8173, 2.1939, 1.9852) - 1.9988).abs() < 1e-4);
    }

    #[test]
    fn jsd_examples() {
        assert_eq!(length_jsd(&[3, 4, 4], &[4, 3, 4]).unwrap(), 0.0);
        assert!((length_jsd(&[1, 1], &[5]).unwrap() - 1.0).abs() < 1e-12);
        // Two bins: P = (2/3, 1/3), Q = (1/3, 2/3), M = (1/2, 1/2).
        let kl = (2.0 / 3.0) * ((2.0 / 3.0) / 0.5f64).log2() + (1.0 / 3.0) * ((1.0 / 3.0) / 0.5f64).log2();
        assert!((length_jsd(&[1, 1, 2], &[1, 2, 2]).unwrap() - kl).abs() < 1e-12);
    }

    #[test]
    fn kde_integrates_to_about_one() {
        let grid: Vec<f64> = (0..4000).map(|i| -10.0 + i as f64 * 0.01).collect();
        let d = length_kde(&[3, 4, 4, 6, 9], &grid).unwrap();
        let area: f64 = d.iter().sum::<f64>() * 0.01;
        assert!((area - 1.0).abs() < 1e-3, "{area}");
    }

    #[test]
    fn win_rate_difference_examples() {
        assert_eq!(win_rate_difference(0.5760, 0.5760).unwrap(), 0.0);
        assert!((win_rate_difference(0.4406, 0.5166).unwrap() - 0.0760).abs() < 1e-12);
        assert_eq!(win_rate_difference(0.0, 1.0).unwrap(), 1.0);
        assert!(win_rate_difference(1.2, 0.0).is_err());
    }
}
