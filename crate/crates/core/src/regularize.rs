//! Separable Gaussian low-pass filtering of logit maps.

use crate::error::{invalid, Result};
use crate::parallel::for_each_row_band;
use crate::raster::Raster;

pub const DEFAULT_SIGMA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlurSpec {
    sigma: f64,
    radius: u32,
}

impl BlurSpec {
    /// Radius defaults to `ceil(3 sigma)`.
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(invalid!("blur sigma must be finite and >= 0, got {sigma}"));
        }
        Ok(Self {
            sigma,
            radius: (3.0 * sigma).ceil() as u32,
        })
    }

    pub fn with_radius(sigma: f64, radius: u32) -> Result<Self> {
        Ok(Self {
            radius,
            ..Self::new(sigma)?
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn is_identity(&self) -> bool {
        self.sigma == 0.0 || self.radius == 0
    }
}

/// Truncated Gaussian taps for offsets `-radius..=radius`, summing to 1.
pub fn gaussian_kernel(spec: &BlurSpec) -> Vec<f64> {
    if spec.is_identity() {
        return vec![1.0];
    }
    let r = spec.radius as i64;
    let two_var = 2.0 * spec.sigma * spec.sigma;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / two_var).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
pub fn reflect101(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    if m < n as i64 {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Horizontal then vertical convolution with reflect-101 borders.
/// The intermediate pass stays in f64; the result is rounded once.
pub fn blur(raster: &Raster, spec: &BlurSpec, workers: usize) -> Raster {
    if spec.is_identity() {
        return raster.clone();
    }
    let kernel = gaussian_kernel(spec);
    let r = spec.radius as i64;
    let (w, h) = (raster.width() as usize, raster.height() as usize);
    let src = raster.values();

    let mut horizontal = vec![0.0f64; w * h];
    for_each_row_band(&mut horizontal, w, workers, |first_row, band| {
        for (local, out_row) in band.chunks_mut(w).enumerate() {
            let row = &src[(first_row + local) * w..][..w];
            for (x, out) in out_row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &weight) in kernel.iter().enumerate() {
                    let xi = reflect101(x as i64 + k as i64 - r, w);
                    acc += weight * f64::from(row[xi]);
                }
                *out = acc;
            }
        }
    });

    let mut out = vec![0.0f32; w * h];
    let horizontal = &horizontal;
    for_each_row_band(&mut out, w, workers, |first_row, band| {
        let mut acc = vec![0.0f64; w];
        for (local, out_row) in band.chunks_mut(w).enumerate() {
            let y = (first_row + local) as i64;
            acc.fill(0.0);
            for (k, &weight) in kernel.iter().enumerate() {
                let yi = reflect101(y + k as i64 - r, h);
                for (a, &v) in acc.iter_mut().zip(&horizontal[yi * w..][..w]) {
                    *a += weight * v;
                }
            }
            for (o, &a) in out_row.iter_mut().zip(&acc) {
                *o = a as f32;
            }
        }
    });
    Raster::from_vec(raster.width(), raster.height(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct 2-D convolution with the outer-product kernel.
    fn blur_2d_oracle(raster: &Raster, spec: &BlurSpec) -> Vec<f64> {
        let k = gaussian_kernel(spec);
        let r = spec.radius as i64;
        let (w, h) = (raster.width() as usize, raster.height() as usize);
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let yy = reflect101(y as i64 + dy, h);
                        let xx = reflect101(x as i64 + dx, w);
                        acc += k[(dy + r) as usize]
                            * k[(dx + r) as usize]
                            * f64::from(raster.get(yy, xx));
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    }

    #[test]
    fn zero_sigma_kernel_is_identity() {
        assert_eq!(gaussian_kernel(&BlurSpec::new(0.0).unwrap()), vec![1.0]);
        assert!(BlurSpec::new(-1.0).is_err());
        assert!(BlurSpec::new(f64::NAN).is_err());
    }

    #[test]
    fn sigma_one_radius_three() {
        let spec = BlurSpec::with_radius(1.0, 3).unwrap();
        let k = gaussian_kernel(&spec);
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Direct evaluation of exp(-i^2 / 2) then renormalization.
        let raw: Vec<f64> = (-3..=3)
            .map(|i: i32| (-(i * i) as f64 / 2.0).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        for (a, b) in k.iter().zip(raw.iter().map(|v| v / total)) {
            assert!((a - b).abs() < 1e-15);
        }
        for i in 0..3 {
            assert_eq!(k[i], k[6 - i]);
        }
    }

    #[test]
    fn sigma_two_default_radius() {
        let spec = BlurSpec::new(2.0).unwrap();
        assert_eq!(spec.radius(), 6);
        let k = gaussian_kernel(&spec);
        assert_eq!(k.len(), 13);
        let center = k[6];
        assert!(k.iter().enumerate().all(|(i, &v)| i == 6 || v < center));
        assert!(k[..6].windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn reflect101_indices() {
        let got: Vec<usize> = (-4..9).map(|i| reflect101(i, 5)).collect();
        assert_eq!(got, [4, 3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1, 0]);
        assert_eq!(reflect101(-7, 1), 0);
        assert_eq!(reflect101(5, 2), 1);
    }

    #[test]
    fn constant_raster_unchanged() {
        let r = Raster::filled(17, 9, 4.2).unwrap();
        for sigma in [0.5, 2.0, 7.0] {
            let out = blur(&r, &BlurSpec::new(sigma).unwrap(), 2);
            assert!(out.values().iter().all(|&v| (v - 4.2).abs() < 1e-6));
        }
    }

    #[test]
    fn impulse_response_is_outer_product() {
        let n = 41;
        let mut values = vec![0.0f32; n * n];
        values[20 * n + 20] = 1.0;
        let r = Raster::new(n as u32, n as u32, values).unwrap();
        let spec = BlurSpec::new(1.0).unwrap();
        let k = gaussian_kernel(&spec);
        let out = blur(&r, &spec, 3);
        for y in 0..n {
            for x in 0..n {
                let (dy, dx) = (y as i64 - 20, x as i64 - 20);
                let expect = if dy.abs() <= 3 && dx.abs() <= 3 {
                    k[(dy + 3) as usize] * k[(dx + 3) as usize]
                } else {
                    0.0
                };
                assert!((f64::from(out.get(y, x)) - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_sigma_is_bit_copy() {
        let r = Raster::from_fn(5, 4, |y, x| (y as f32 - 1.3) * (x as f32 + 0.7)).unwrap();
        assert_eq!(blur(&r, &BlurSpec::new(0.0).unwrap(), 1), r);
    }

    #[test]
    fn radius_wider_than_raster() {
        let r = Raster::from_fn(3, 2, |y, x| (y * 3 + x) as f32).unwrap();
        let spec = BlurSpec::new(4.0).unwrap();
        let oracle = blur_2d_oracle(&r, &spec);
        let out = blur(&r, &spec, 1);
        for (a, b) in out.values().iter().zip(&oracle) {
            assert!((f64::from(*a) - b).abs() < 1e-5);
        }
    }

    fn random_raster(w: u32, h: u32, seed: u64) -> Raster {
        let mut state = seed | 1;
        Raster::from_fn(w, h, |_, _| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            ((state >> 40) as f32 / (1u64 << 24) as f32) * 20.0 - 10.0
        })
        .unwrap()
    }

    proptest! {
        #[test]
        fn separable_matches_direct_2d(w in 1u32..24, h in 1u32..24, sigma in 0.3f64..3.0, seed in any::<u64>()) {
            let r = random_raster(w, h, seed);
            let spec = BlurSpec::new(sigma).unwrap();
            let oracle = blur_2d_oracle(&r, &spec);
            let out = blur(&r, &spec, 4);
            for (a, b) in out.values().iter().zip(&oracle) {
                prop_assert!((f64::from(*a) - b).abs() < 1e-5, "{a} vs {b}");
            }
        }

        #[test]
        fn smoothing_reduces_variance(w in 2u32..48, h in 2u32..48, sigma in 0.3f64..4.0, seed in any::<u64>()) {
            let r = random_raster(w, h, seed);
            let out = blur(&r, &BlurSpec::new(sigma).unwrap(), 2);
            prop_assert!(out.variance() <= r.variance() * (1.0 + 1e-6));
        }

        #[test]
        fn mean_approximately_preserved(seed in any::<u64>(), sigma in 0.5f64..3.0) {
            let r = random_raster(512, 512, seed);
            let shifted = Raster::new(512, 512, r.values().iter().map(|v| v + 50.0).collect()).unwrap();
            let out = blur(&shifted, &BlurSpec::new(sigma).unwrap(), 2);
            let (m0, m1) = (shifted.mean(), out.mean());
            prop_assert!(((m1 - m0) / m0).abs() < 1e-4, "{m0} -> {m1}");
        }

        #[test]
        fn worker_count_does_not_change_output(seed in any::<u64>()) {
            let r = random_raster(33, 21, seed);
            let spec = BlurSpec::new(2.0).unwrap();
            let one = blur(&r, &spec, 1);
            prop_assert_eq!(&one, &blur(&r, &spec, 3));
            prop_assert_eq!(&one, &blur(&r, &spec, 8));
        }
    }
}
