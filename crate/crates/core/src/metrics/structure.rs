//! Structure measure: object-aware plus region-aware similarity.

use crate::error::Result;

use super::counting::check_pair;

pub const DEFAULT_S_ALPHA: f64 = 0.5;

/// `α · S_object + (1 − α) · S_region`, clamped at 0. An all-background `G`
/// scores `1 − mean(P)`, an all-foreground `G` scores `mean(P)`.
pub fn s_measure(pred: &[f64], gt: &[u8], height: usize, width: usize, alpha: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    if pred.len() != height * width {
        return Err(crate::error::Error::shape(format!("{} pixels do not form a {height}x{width} map", pred.len())));
    }
    let n = gt.len() as f64;
    let fg = gt.iter().filter(|&&t| t == 1).count() as f64;
    let mean_p = pred.iter().sum::<f64>() / n;
    if fg == 0.0 {
        return Ok(1.0 - mean_p);
    }
    if fg == n {
        return Ok(mean_p);
    }
    let s = alpha * object_score(pred, gt) + (1.0 - alpha) * region_score(pred, gt, height, width);
    Ok(s.max(0.0))
}

fn object_score(pred: &[f64], gt: &[u8]) -> f64 {
    let u = gt.iter().filter(|&&t| t == 1).count() as f64 / gt.len() as f64;
    let fg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &t)| t == 1).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &t)| t == 0).map(|(&p, _)| 1.0 - p).collect();
    u * similarity(&fg) + (1.0 - u) * similarity(&bg)
}

/// `2x̄ / (x̄² + 1 + σ_x)` with the sample standard deviation.
fn similarity(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = if x.len() > 1 { (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    2.0 * mean / (mean * mean + 1.0 + sd + f64::EPSILON)
}

fn region_score(pred: &[f64], gt: &[u8], h: usize, w: usize) -> f64 {
    let (cx, cy) = centroid(gt, h, w);
    let area = (h * w) as f64;
    let quads = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    quads
        .iter()
        .map(|&(y0, y1, x0, x1)| {
            let weight = ((y1 - y0) * (x1 - x0)) as f64 / area;
            if weight == 0.0 {
                return 0.0;
            }
            let mut p = Vec::with_capacity((y1 - y0) * (x1 - x0));
            let mut g = Vec::with_capacity(p.capacity());
            for y in y0..y1 {
                p.extend_from_slice(&pred[y * w + x0..y * w + x1]);
                g.extend(gt[y * w + x0..y * w + x1].iter().map(|&t| t as f64));
            }
            weight * ssim(&p, &g)
        })
        .sum()
}

/// Foreground centroid as split coordinates `(x, y)`: the rounded mean index
/// plus one, so the left/top blocks include the centroid pixel.
fn centroid(gt: &[u8], h: usize, w: usize) -> (usize, usize) {
    let (mut sx, mut sy, mut count) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if gt[y * w + x] == 1 {
                sx += x as f64;
                sy += y as f64;
                count += 1.0;
            }
        }
    }
    let (x, y) = if count == 0.0 {
        ((w as f64 / 2.0).round_ties_even(), (h as f64 / 2.0).round_ties_even())
    } else {
        ((sx / count).round_ties_even(), (sy / count).round_ties_even())
    };
    ((x as usize + 1).min(w), (y as usize + 1).min(h))
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let (x, y) = (p.iter().sum::<f64>() / n, g.iter().sum::<f64>() / n);
    let denom = (n - 1.0).max(1.0);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(g) {
        sxx += (a - x).powi(2);
        syy += (b - y).powi(2);
        sxy += (a - x) * (b - y);
    }
    let (sxx, syy, sxy) = (sxx / denom, syy / denom, sxy / denom);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}
