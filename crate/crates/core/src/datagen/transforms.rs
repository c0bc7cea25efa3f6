//! The individual signal transforms of the generation pipeline. Each is a
//! pure function of its inputs (plus an explicit random stream for noise).

use crate::rng::RngStream;

/// Zero-pad `pad_lo` points in front and `pad_hi` behind.
pub fn pad(points: &[f64], pad_lo: usize, pad_hi: usize) -> Vec<f64> {
    let mut out = vec![0.0; points.len() + pad_lo + pad_hi];
    out[pad_lo..pad_lo + points.len()].copy_from_slice(points);
    out
}

/// Circular shift: `out[(i + shift) mod n] = points[i]`.
pub fn translate(points: &[f64], shift: i64) -> Vec<f64> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let k = shift.rem_euclid(n as i64) as usize;
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&points[n - k..]);
    out.extend_from_slice(&points[..n - k]);
    out
}

/// Add a zero-mean linear ramp running from `-slope` to `+slope`.
pub fn apply_shear(points: &[f64], slope: f64) -> Vec<f64> {
    let n = points.len();
    if n < 2 {
        return points.to_vec();
    }
    let denom = (n - 1) as f64;
    points
        .iter()
        .enumerate()
        .map(|(i, &v)| v + slope * (2.0 * i as f64 / denom - 1.0))
        .collect()
}

/// Normalized Gaussian weights for offsets `-r..=r`, `r = ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as i64;
    let two_var = 2.0 * sigma * sigma;
    let mut w: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / two_var).exp())
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Map an out-of-range index into `0..n` by half-sample reflection
/// (`d c b a | a b c d | d c b a`), repeating as often as needed.
fn reflect(i: i64, n: usize) -> usize {
    let period = 2 * n as i64;
    let m = i.rem_euclid(period);
    if m < n as i64 {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Gaussian smoothing with reflect boundaries. `sigma == 0` is the identity.
pub fn gaussian_filter_1d(points: &[f64], sigma: f64) -> Vec<f64> {
    let n = points.len();
    if sigma <= 0.0 || n == 0 {
        return points.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    (0..n as i64)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * points[reflect(i + k as i64 - radius, n)])
                .sum()
        })
        .collect()
}

/// `points + iid_scale * eps + corr_scale * smooth(eta)` with `eps`, `eta`
/// standard normal. Both noise vectors are always drawn so the stream
/// position after this call does not depend on the scales.
pub fn add_noise(
    points: &[f64],
    rng: &mut RngStream,
    iid_scale: f64,
    corr_scale: f64,
    sigma: f64,
) -> Vec<f64> {
    let n = points.len();
    let eps = rng.normals(n);
    let eta = rng.normals(n);
    let corr = gaussian_filter_1d(&eta, sigma);
    points
        .iter()
        .zip(eps.iter().zip(&corr))
        .map(|(&v, (&e, &c))| v + iid_scale * e + corr_scale * c)
        .collect()
}

/// Linear interpolation at `target_len` evenly spaced positions spanning
/// the input; both endpoints are reproduced exactly.
pub fn downsample(points: &[f64], target_len: usize) -> Vec<f64> {
    let n = points.len();
    assert!(n >= 2 && target_len >= 2, "downsample needs >= 2 points");
    let steps = (target_len - 1) as f64;
    (0..target_len)
        .map(|j| {
            let t = (j * (n - 1)) as f64 / steps;
            let i0 = (t.floor() as usize).min(n - 2);
            let frac = t - i0 as f64;
            if frac == 0.0 {
                points[i0]
            } else if frac == 1.0 {
                points[i0 + 1]
            } else {
                points[i0] * (1.0 - frac) + points[i0 + 1] * frac
            }
        })
        .collect()
}
