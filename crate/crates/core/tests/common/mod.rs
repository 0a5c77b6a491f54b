//! Straight-from-definition reference implementations used as oracles.
//! Written over plain nested vectors so they share no code with the crate.

#![allow(dead_code)]

pub mod grad;

use rand::Rng;

pub type Grid = Vec<Vec<f64>>;
pub type Mask = Vec<Vec<bool>>;

pub fn random_pair(rng: &mut impl Rng, h: usize, w: usize) -> (Grid, Mask) {
    let pred = (0..h)
        .map(|_| (0..w).map(|_| rng.random::<f64>()).collect())
        .collect();
    // Mix of empty, full and partial masks, with varying density.
    let density = match rng.random_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.05..0.95),
    };
    let gt = (0..h)
        .map(|_| (0..w).map(|_| rng.random::<f64>() < density).collect())
        .collect();
    (pred, gt)
}

pub fn to_map(g: &Grid) -> motionboost::SaliencyMap {
    let h = g.len();
    let w = g[0].len();
    motionboost::SaliencyMap::from_vec(h, w, g.iter().flatten().copied().collect()).unwrap()
}

pub fn to_mask(m: &Mask) -> motionboost::BinaryMask {
    let h = m.len();
    let w = m[0].len();
    let a = ndarray::Array2::from_shape_fn((h, w), |(y, x)| m[y][x]);
    motionboost::BinaryMask::new(a).unwrap()
}

fn count(m: &Mask) -> usize {
    m.iter().flatten().filter(|&&b| b).count()
}

pub fn oracle_mae(p: &Grid, g: &Mask) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for y in 0..p.len() {
        for x in 0..p[0].len() {
            let t = if g[y][x] { 1.0 } else { 0.0 };
            s += (p[y][x] - t).abs();
            n += 1.0;
        }
    }
    s / n
}

fn fbeta_at(p: &Grid, g: &Mask, keep: impl Fn(f64) -> bool) -> f64 {
    let (mut tp, mut pp) = (0usize, 0usize);
    for y in 0..p.len() {
        for x in 0..p[0].len() {
            if keep(p[y][x]) {
                pp += 1;
                if g[y][x] {
                    tp += 1;
                }
            }
        }
    }
    let ap = count(g);
    if pp == 0 || tp == 0 {
        return 0.0;
    }
    let prec = tp as f64 / pp as f64;
    let rec = tp as f64 / ap as f64;
    1.3 * prec * rec / (0.3 * prec + rec)
}

fn level(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// (maxF, meanF, adpF) over the 256 thresholds k/255 of the 8-bit map.
pub fn oracle_f(p: &Grid, g: &Mask) -> Option<(f64, f64, f64)> {
    if count(g) == 0 {
        return None;
    }
    let mut all = Vec::new();
    for k in 0..256 {
        let t = k as f64 / 255.0;
        all.push(fbeta_at(p, g, |v| level(v) >= t));
    }
    let max = all.iter().cloned().fold(f64::MIN, f64::max);
    let mean = all.iter().sum::<f64>() / 256.0;
    let n = (p.len() * p[0].len()) as f64;
    let avg = p.iter().flatten().sum::<f64>() / n;
    let thr = (2.0 * avg).min(1.0);
    // Snap the adaptive threshold to the first swept level reaching it.
    let k = (0..256).find(|&k| k as f64 / 255.0 >= thr).unwrap_or(255);
    let snapped = k as f64 / 255.0;
    let adp = fbeta_at(p, g, |v| level(v) >= snapped);
    Some((max, mean, adp))
}

fn ssim_block(p: &[f64], g: &[f64]) -> f64 {
    let eps = f64::EPSILON;
    let n = p.len() as f64;
    let mx = p.iter().sum::<f64>() / n;
    let my = g.iter().sum::<f64>() / n;
    let vx = p.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>() / (n - 1.0 + eps);
    let vy = g.iter().map(|b| (b - my) * (b - my)).sum::<f64>() / (n - 1.0 + eps);
    let cxy = p
        .iter()
        .zip(g)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (n - 1.0 + eps);
    let num = 4.0 * mx * my * cxy;
    let den = (mx * mx + my * my) * (vx + vy);
    if num != 0.0 {
        num / (den + eps)
    } else if den == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn obj(vals: &[f64]) -> f64 {
    if vals.is_empty() {
        return 0.0;
    }
    let n = vals.len() as f64;
    let m = vals.iter().sum::<f64>() / n;
    let sd = if vals.len() < 2 {
        0.0
    } else {
        (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    2.0 * m / (m * m + 1.0 + sd + f64::EPSILON)
}

/// Structure measure with α = 0.5, following the reference toolkit.
pub fn oracle_s(p: &Grid, g: &Mask) -> f64 {
    let h = p.len();
    let w = p[0].len();
    let n = (h * w) as f64;
    let fg = count(g) as f64;
    let r = fg / n;
    let avg = p.iter().flatten().sum::<f64>() / n;
    let s = if fg == 0.0 {
        1.0 - avg
    } else if fg == n {
        avg
    } else {
        let mut fore = Vec::new();
        let mut back = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if g[y][x] {
                    fore.push(p[y][x]);
                } else {
                    back.push(1.0 - p[y][x]);
                }
            }
        }
        let so = r * obj(&fore) + (1.0 - r) * obj(&back);

        // Centroid in 1-based coordinates, rounded.
        let (mut sx, mut sy) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if g[y][x] {
                    sx += (x + 1) as f64;
                    sy += (y + 1) as f64;
                }
            }
        }
        let cx = (sx / fg).round() as usize;
        let cy = (sy / fg).round() as usize;
        let quads = [
            (0, cy, 0, cx),
            (0, cy, cx, w),
            (cy, h, 0, cx),
            (cy, h, cx, w),
        ];
        let mut weights = [0.0; 4];
        let mut sr = 0.0;
        for (i, &(y0, y1, x0, x1)) in quads.iter().enumerate() {
            let area = ((y1 - y0) * (x1 - x0)) as f64;
            weights[i] = area / n;
            if area == 0.0 {
                continue;
            }
            let mut pv = Vec::new();
            let mut gv = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    pv.push(p[y][x]);
                    gv.push(if g[y][x] { 1.0 } else { 0.0 });
                }
            }
            sr += weights[i] * ssim_block(&pv, &gv);
        }
        0.5 * so + 0.5 * sr
    };
    s.clamp(0.0, 1.0)
}

/// Safeguarded fixed-point iteration written as a plain loop over the raw
/// scores. Sums are taken in ascending order.
pub fn oracle_threshold(values: &[f64], tol: f64, max_iter: usize) -> (f64, Vec<f64>) {
    let sum_sorted = |mut v: Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.iter().sum::<f64>()
    };
    let upper = |lam: f64| -> Vec<f64> { values.iter().copied().filter(|&m| m >= lam).collect() };
    let mut lam = sum_sorted(values.to_vec()) / values.len() as f64;
    let mut trace = vec![lam];
    for _ in 0..max_iter {
        let u = upper(lam);
        let omega = sum_sorted(u.clone()) / u.len() as f64;
        let next = (1.0 + omega) / 2.0;
        if upper(next).is_empty() {
            break;
        }
        let done = (next - lam).abs() < tol;
        lam = next;
        trace.push(lam);
        if done {
            break;
        }
    }
    let pos = upper(lam).len();
    if pos == 0 || pos == values.len() {
        let mut s = values.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = s.len();
        lam = if k % 2 == 1 {
            s[k / 2]
        } else {
            (s[k / 2 - 1] + s[k / 2]) / 2.0
        };
    }
    (lam, trace)
}

/// Keep-one-of-W by explicit block enumeration: for every run of equal
/// sequence names, every W-aligned block within the run keeps its best
/// score (first on ties).
pub fn oracle_window(seqs: &[&str], scores: &[f64], w: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut pos_in_run = 0;
    let mut best: Option<usize> = None;
    for i in 0..scores.len() {
        let new_run = i == 0 || seqs[i] != seqs[i - 1];
        if new_run {
            pos_in_run = 0;
        }
        if pos_in_run % w == 0 {
            if let Some(b) = best.take() {
                out.push(b);
            }
        }
        best = match best {
            Some(b) if scores[b] >= scores[i] => Some(b),
            _ => Some(i),
        };
        pos_in_run += 1;
    }
    if let Some(b) = best {
        out.push(b);
    }
    out
}
