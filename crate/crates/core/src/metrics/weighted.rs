//! Weighted F-measure and the exact Euclidean distance transform it needs.

use crate::error::{Error, Result};

use super::counting::check_pair;

pub const DEFAULT_WFM_BETA2: f64 = 1.0;
const GAUSS_SIGMA: f64 = 5.0;
const GAUSS_SIZE: usize = 7;

/// Exact Euclidean distance from every pixel to the nearest `site`, plus the
/// flat index of that site (separable lower-envelope algorithm).
pub fn distance_transform(sites: &[bool], h: usize, w: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if sites.len() != h * w {
        return Err(Error::shape(format!("{} cells do not form a {h}x{w} grid", sites.len())));
    }
    if !sites.contains(&true) {
        return Err(Error::Undefined("distance transform without any site".into()));
    }
    const FAR: f64 = 1e30;
    // columns: squared distance to nearest site in the same column and its row
    let mut col_d = vec![FAR; h * w];
    let mut col_row = vec![0usize; h * w];
    let mut f = vec![0.0; h.max(w)];
    let mut tmp_d = vec![0.0; h.max(w)];
    let mut tmp_i = vec![0usize; h.max(w)];
    for x in 0..w {
        for y in 0..h {
            f[y] = if sites[y * w + x] { 0.0 } else { FAR };
        }
        envelope(&f[..h], &mut tmp_d[..h], &mut tmp_i[..h]);
        for y in 0..h {
            col_d[y * w + x] = tmp_d[y];
            col_row[y * w + x] = tmp_i[y];
        }
    }
    let mut dist = vec![0.0; h * w];
    let mut nearest = vec![0usize; h * w];
    for y in 0..h {
        envelope(&col_d[y * w..(y + 1) * w], &mut tmp_d[..w], &mut tmp_i[..w]);
        for x in 0..w {
            let q = tmp_i[x];
            dist[y * w + x] = tmp_d[x].sqrt();
            nearest[y * w + x] = col_row[y * w + q] * w + q;
        }
    }
    Ok((dist, nearest))
}

/// 1-D squared distance transform of sampled function `f`:
/// `d[p] = min_q (p − q)² + f[q]`, with the minimizing `q`.
fn envelope(f: &[f64], d: &mut [f64], arg: &mut [usize]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
    for q in 1..n {
        let mut s = inter(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for p in 0..n {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        let q = v[k];
        d[p] = (p as f64 - q as f64).powi(2) + f[q];
        arg[p] = q;
    }
}

/// Normalized 7×7 Gaussian (σ = 5), with negligible taps zeroed.
fn gaussian_kernel() -> [[f64; GAUSS_SIZE]; GAUSS_SIZE] {
    let m = (GAUSS_SIZE as f64 - 1.0) / 2.0;
    let mut k = [[0.0; GAUSS_SIZE]; GAUSS_SIZE];
    let mut max = 0.0f64;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - m, j as f64 - m);
            *v = (-(x * x + y * y) / (2.0 * GAUSS_SIGMA * GAUSS_SIGMA)).exp();
            max = max.max(*v);
        }
    }
    let mut sum = 0.0;
    for v in k.iter_mut().flatten() {
        if *v < f64::EPSILON * max {
            *v = 0.0;
        }
        sum += *v;
    }
    k.iter_mut().flatten().for_each(|v| *v /= sum);
    k
}

/// Weighted F-measure. Errors `|P − G|` on background pixels take the error of
/// their nearest foreground pixel before Gaussian smoothing; foreground errors
/// keep the smaller of raw and smoothed error; background errors are scaled
/// by `2 − exp(ln(0.5)/5 · dist)`. Empty `G` is undefined.
pub fn weighted_fmeasure(pred: &[f64], gt: &[u8], h: usize, w: usize, beta2: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    let fg: Vec<bool> = gt.iter().map(|&t| t == 1).collect();
    if !fg.contains(&true) {
        return Err(Error::Undefined("weighted F-measure of an empty ground truth".into()));
    }
    let (dist, nearest) = distance_transform(&fg, h, w)?;
    let err: Vec<f64> = pred.iter().zip(gt).map(|(&p, &t)| (p - t as f64).abs()).collect();
    let transported: Vec<f64> = (0..h * w).map(|i| if fg[i] { err[i] } else { err[nearest[i]] }).collect();

    let kernel = gaussian_kernel();
    let r = (GAUSS_SIZE / 2) as isize;
    let mut smoothed = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (i, row) in kernel.iter().enumerate() {
                let yy = y + i as isize - r;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for (j, &k) in row.iter().enumerate() {
                    let xx = x + j as isize - r;
                    if xx >= 0 && xx < w as isize {
                        acc += k * transported[yy as usize * w + xx as usize];
                    }
                }
            }
            smoothed[y as usize * w + x as usize] = acc;
        }
    }

    let decay = 0.5f64.ln() / 5.0;
    let (mut fg_err, mut bg_err, mut positives) = (0.0, 0.0, 0.0);
    for i in 0..h * w {
        if fg[i] {
            fg_err += smoothed[i].min(err[i]);
            positives += 1.0;
        } else {
            bg_err += err[i] * (2.0 - (decay * dist[i]).exp());
        }
    }
    let tp = positives - fg_err;
    let recall = 1.0 - fg_err / positives;
    let precision = tp / (tp + bg_err + f64::EPSILON);
    let q = (1.0 + beta2) * recall * precision / (recall + beta2 * precision + f64::EPSILON);
    Ok(q.clamp(0.0, 1.0))
}
