//! Frequency-domain image statistics: radial magnitude profiles and
//! high-frequency energy.
//!
//! Transforms use the orthonormal 2D DFT, so spectral and spatial energy agree.
//! A frequency `(u, v)`, taken in `[-W/2, W/2) × [-H/2, H/2)`, has normalized
//! radius `r = sqrt((u/(W/2))² + (v/(H/2))²)`. Radii above 1 (the corners)
//! fold into the last profile bin.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_BINS: usize = 128;
pub const HIGH_FREQUENCY_CUTOFF: f64 = 0.5;

/// Row-major pixels with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid<T> {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<T>,
}

impl<T: Scalar> ImageGrid<T> {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<T>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::invalid(format!("image must be at least 2x2, got {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("expected 1 or 3 channels, got {channels}")));
        }
        if values.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!("{} values for {height}x{width}x{channels}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let pixel = i / channels;
            return Err(Error::NonFinite { row: pixel / width, col: pixel % width });
        }
        Ok(Self { height, width, channels, values })
    }

    pub fn gray(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        Self::new(height, width, 1, values)
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(T::of(f(y, x)));
            }
        }
        Self::gray(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Grayscale value at `(y, x)`: the channel mean.
    pub fn luma(&self, y: usize, x: usize) -> f64 {
        let base = (y * self.width + x) * self.channels;
        let px = &self.values[base..base + self.channels];
        px.iter().map(|v| v.as_f64()).sum::<f64>() / self.channels as f64
    }

    fn luma_plane(&self) -> Vec<f64> {
        (0..self.height).flat_map(|y| (0..self.width).map(move |x| (y, x))).map(|(y, x)| self.luma(y, x)).collect()
    }

    /// Circular shift by `(dy, dx)`.
    pub fn roll(&self, dy: usize, dx: usize) -> Self {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut values = vec![T::zero(); self.values.len()];
        for y in 0..h {
            for x in 0..w {
                let src = (y * w + x) * c;
                let dst = (((y + dy) % h) * w + (x + dx) % w) * c;
                values[dst..dst + c].copy_from_slice(&self.values[src..src + c]);
            }
        }
        Self { values, ..self.clone() }
    }

    /// Quarter turn counter-clockwise.
    pub fn rotate90(&self) -> Self {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut values = vec![T::zero(); self.values.len()];
        for y in 0..h {
            for x in 0..w {
                let src = (y * w + x) * c;
                let (ny, nx) = (w - 1 - x, y);
                let dst = (ny * h + nx) * c;
                values[dst..dst + c].copy_from_slice(&self.values[src..src + c]);
            }
        }
        Self { height: w, width: h, channels: c, values }
    }
}

/// Channel-mean grayscale, then zero mean and unit (population) variance.
/// Constant images map to all zeros.
pub fn standardize<T: Scalar>(img: &ImageGrid<T>) -> ImageGrid<T> {
    let plane = img.luma_plane();
    let n = plane.len() as f64;
    let mean = plane.iter().sum::<f64>() / n;
    let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let values = if var > 0.0 {
        let sd = var.sqrt();
        plane.iter().map(|v| T::of((v - mean) / sd)).collect()
    } else {
        vec![T::zero(); plane.len()]
    };
    ImageGrid { height: img.height, width: img.width, channels: 1, values }
}

/// Orthonormal 2D DFT of the grayscale plane, row-major, unshifted.
pub fn spectrum<T: Scalar>(img: &ImageGrid<T>) -> Vec<Complex<f64>> {
    let (h, w) = (img.height, img.width);
    let mut buf: Vec<Complex<f64>> = img.luma_plane().into_iter().map(|v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= scale);
    buf
}

fn signed_freq(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Normalized radius of DFT index `(ky, kx)` in an `h × w` image.
pub fn normalized_radius(ky: usize, kx: usize, h: usize, w: usize) -> f64 {
    let fu = signed_freq(kx, w) / (w as f64 / 2.0);
    let fv = signed_freq(ky, h) / (h as f64 / 2.0);
    (fu * fu + fv * fv).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    /// Bin centres `(i + 0.5)/bins`.
    pub radius: Vec<f64>,
    /// Mean magnitude per bin; 0 for bins without frequencies.
    pub magnitude: Vec<f64>,
    /// Frequencies that fell into each bin.
    pub counts: Vec<usize>,
}

impl RadialProfile {
    pub fn bins(&self) -> usize {
        self.radius.len()
    }
}

fn bin_of(r: f64, bins: usize) -> usize {
    ((r * bins as f64) as usize).min(bins - 1)
}

/// Mean spectral magnitude over annuli of normalized radius.
pub fn radial_profile<T: Scalar>(img: &ImageGrid<T>, bins: usize) -> Result<RadialProfile> {
    if bins < 2 {
        return Err(Error::invalid(format!("need at least 2 bins, got {bins}")));
    }
    let (h, w) = (img.height, img.width);
    let spec = spectrum(img);
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for ky in 0..h {
        for kx in 0..w {
            let b = bin_of(normalized_radius(ky, kx, h, w), bins);
            sums[b] += spec[ky * w + kx].norm();
            counts[b] += 1;
        }
    }
    Ok(RadialProfile {
        radius: (0..bins).map(|i| (i as f64 + 0.5) / bins as f64).collect(),
        magnitude: sums.iter().zip(&counts).map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect(),
        counts,
    })
}

/// Per-bin mean of profiles sharing one binning.
pub fn mean_profile(profiles: &[RadialProfile]) -> Result<RadialProfile> {
    let first = profiles.first().ok_or(Error::Empty("profiles"))?;
    if profiles.iter().any(|p| p.radius != first.radius) {
        return Err(Error::DimensionMismatch("profiles use different binnings".into()));
    }
    let n = profiles.len() as f64;
    let mut magnitude = vec![0.0; first.bins()];
    let mut counts = vec![0usize; first.bins()];
    for p in profiles {
        magnitude.iter_mut().zip(&p.magnitude).for_each(|(m, v)| *m += v);
        counts.iter_mut().zip(&p.counts).for_each(|(c, v)| *c += v);
    }
    magnitude.iter_mut().for_each(|m| *m /= n);
    Ok(RadialProfile { radius: first.radius.clone(), magnitude, counts })
}

/// Share of non-DC spectral energy `|F|²` at normalized radius ≥ 0.5,
/// corners included. An image with no non-DC energy gives 0.
pub fn hf_energy<T: Scalar>(img: &ImageGrid<T>) -> f64 {
    let (h, w) = (img.height, img.width);
    let spec = spectrum(img);
    let (mut high, mut total) = (0.0, 0.0);
    for ky in 0..h {
        for kx in 0..w {
            if ky == 0 && kx == 0 {
                continue;
            }
            let e = spec[ky * w + kx].norm_sqr();
            total += e;
            if normalized_radius(ky, kx, h, w) >= HIGH_FREQUENCY_CUTOFF {
                high += e;
            }
        }
    }
    if total > 0.0 {
        high / total
    } else {
        0.0
    }
}

/// `(spatial, spectral)` energy of the grayscale plane.
pub fn parseval_energies<T: Scalar>(img: &ImageGrid<T>) -> (f64, f64) {
    let spatial = img.luma_plane().iter().map(|v| v * v).sum();
    let spectral = spectrum(img).iter().map(|z| z.norm_sqr()).sum();
    (spatial, spectral)
}

/// Separable Gaussian blur of the grayscale plane with wrap-around borders.
/// The kernel is truncated at `3σ` and renormalized.
pub fn gaussian_blur<T: Scalar>(img: &ImageGrid<T>, sigma: f64) -> Result<ImageGrid<T>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= z);

    let (h, w) = (img.height as isize, img.width as isize);
    let plane = img.luma_plane();
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, k) in kernel.iter().enumerate() {
                let xx = (x + t as isize - radius).rem_euclid(w);
                acc += k * plane[(y * w + xx) as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![T::zero(); plane.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, k) in kernel.iter().enumerate() {
                let yy = (y + t as isize - radius).rem_euclid(h);
                acc += k * tmp[(yy * w + x) as usize];
            }
            out[(y * w + x) as usize] = T::of(acc);
        }
    }
    ImageGrid::gray(img.height, img.width, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(h: usize, w: usize, seed: u64) -> ImageGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
        ImageGrid::gray(h, w, v).unwrap()
    }

    /// Direct O(N²) DFT, orthonormal.
    fn naive_dft(img: &ImageGrid<f64>) -> Vec<Complex<f64>> {
        let (h, w) = (img.height(), img.width());
        let mut out = vec![Complex::new(0.0, 0.0); h * w];
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let ph = -2.0
                            * std::f64::consts::PI
                            * (ky as f64 * y as f64 / h as f64 + kx as f64 * x as f64 / w as f64);
                        acc += Complex::from_polar(img.luma(y, x), ph);
                    }
                }
                out[ky * w + kx] = acc / ((h * w) as f64).sqrt();
            }
        }
        out
    }

    #[test]
    fn grid_validation() {
        assert!(ImageGrid::<f64>::gray(1, 4, vec![0.0; 4]).is_err());
        assert!(ImageGrid::<f64>::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageGrid::<f64>::gray(2, 2, vec![0.0; 3]).is_err());
        assert!(ImageGrid::gray(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        let rgb =
            ImageGrid::<f32>::new(2, 2, 3, vec![0.0, 3.0, 6.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 9.0, 0.0, 0.0]).unwrap();
        assert_eq!(rgb.luma(0, 0), 3.0);
        assert_eq!(rgb.luma(1, 1), 3.0);
    }

    #[test]
    fn standardize_cases() {
        let c = ImageGrid::<f64>::from_fn(4, 5, |_, _| 7.0).unwrap();
        assert!(standardize(&c).values().iter().all(|&v| v == 0.0));

        let s = standardize(&noise(17, 23, 3));
        let n = s.values().len() as f64;
        let mean = s.values().iter().sum::<f64>() / n;
        let var = s.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);

        let twice = standardize(&s);
        for (a, b) in twice.values().iter().zip(s.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_matches_direct_dft() {
        for (h, w) in [(6, 8), (5, 7), (8, 8)] {
            let img = noise(h, w, (h * w) as u64);
            let fast = spectrum(&img);
            let slow = naive_dft(&img);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn parseval_holds() {
        for seed in 0..5 {
            let img = noise(31, 16, seed);
            let (s, f) = parseval_energies(&img);
            assert!(((s - f) / s).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_image_profile_is_zero() {
        let c = standardize(&ImageGrid::<f64>::from_fn(8, 8, |_, _| 2.0).unwrap());
        let p = radial_profile(&c, 8).unwrap();
        assert!(p.magnitude.iter().all(|&m| m == 0.0));
        assert_eq!(hf_energy(&c), 0.0);
        assert!(radial_profile(&c, 1).is_err());
    }

    #[test]
    fn radius_axis_is_monotone_bin_centres() {
        let p = radial_profile(&noise(8, 8, 1), 4).unwrap();
        assert_eq!(p.radius, [0.125, 0.375, 0.625, 0.875]);
        assert_eq!(p.counts.iter().sum::<usize>(), 64);
    }

    #[test]
    fn horizontal_nyquist_grating_lands_in_last_bin() {
        let g = ImageGrid::<f64>::from_fn(16, 16, |_, x| if x % 2 == 0 { 1.0 } else { -1.0 }).unwrap();
        let direct = naive_dft(&g);
        let peak = (0..256).max_by(|&a, &b| direct[a].norm().total_cmp(&direct[b].norm())).unwrap();
        assert_eq!((peak / 16, peak % 16), (0, 8));
        assert!((normalized_radius(0, 8, 16, 16) - 1.0).abs() < 1e-15);

        let p = radial_profile(&standardize(&g), 16).unwrap();
        let last = p.magnitude[15] * p.counts[15] as f64;
        let rest: f64 = (0..15).map(|i| p.magnitude[i] * p.counts[i] as f64).sum();
        assert!(last > 0.0 && rest < 1e-9, "last {last}, rest {rest}");
    }

    #[test]
    fn checkerboard_is_all_high_frequency() {
        let c = ImageGrid::<f64>::from_fn(12, 10, |y, x| if (x + y) % 2 == 0 { 1.0 } else { -1.0 }).unwrap();
        assert!((hf_energy(&standardize(&c)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn white_noise_profile_is_flat() {
        let (n, size, bins) = (10_000, 32, 16);
        let profiles: Vec<RadialProfile> =
            (0..n).map(|s| radial_profile(&standardize(&noise(size, size, s as u64)), bins).unwrap()).collect();
        let mean = mean_profile(&profiles).unwrap();
        let band: Vec<f64> = mean
            .radius
            .iter()
            .zip(&mean.magnitude)
            .filter(|(r, _)| (0.1..=0.9).contains(*r))
            .map(|(_, m)| *m)
            .collect();
        let avg = band.iter().sum::<f64>() / band.len() as f64;
        for m in &band {
            assert!((m / avg - 1.0).abs() < 0.05, "{m} vs {avg}");
        }
    }

    #[test]
    fn blur_lowers_high_frequency_share() {
        for seed in 0..20 {
            let raw = standardize(&noise(32, 32, seed));
            let blurred = standardize(&gaussian_blur(&raw, 1.5).unwrap());
            assert!(hf_energy(&blurred) < hf_energy(&raw));
        }
        assert!(gaussian_blur(&noise(4, 4, 0), 0.0).is_err());
    }

    #[test]
    fn mean_profile_cases() {
        let p = radial_profile(&noise(8, 8, 2), 4).unwrap();
        assert_eq!(mean_profile(std::slice::from_ref(&p)).unwrap(), p);
        let double = RadialProfile { magnitude: p.magnitude.iter().map(|m| 2.0 * m).collect(), ..p.clone() };
        let m = mean_profile(&[p.clone(), double]).unwrap();
        for (a, b) in m.magnitude.iter().zip(&p.magnitude) {
            assert!((a - 1.5 * b).abs() < 1e-12);
        }
        let other = radial_profile(&noise(8, 8, 2), 5).unwrap();
        assert!(mean_profile(&[p, other]).is_err());
        assert!(mean_profile(&[]).is_err());
    }

    #[test]
    fn translation_and_rotation_invariance() {
        for seed in 0..5 {
            let img = standardize(&noise(16, 24, seed));
            let moved = img.roll(5, 11);
            assert!((hf_energy(&img) - hf_energy(&moved)).abs() < 1e-12);

            let a = radial_profile(&img, 8).unwrap();
            let r = radial_profile(&img.rotate90(), 8).unwrap();
            for (x, y) in a.magnitude.iter().zip(&r.magnitude) {
                assert!((x - y).abs() < 1e-9 * x.max(1.0));
            }
        }
    }

    #[test]
    fn works_in_single_precision() {
        let img = ImageGrid::<f32>::from_fn(8, 8, |y, x| ((x * 3 + y * 5) % 7) as f64).unwrap();
        let s = standardize(&img);
        let (a, b) = parseval_energies(&s);
        assert!(((a - b) / a).abs() < 1e-6);
    }
}
