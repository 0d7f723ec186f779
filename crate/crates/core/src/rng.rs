//! Counter-based random numbers.
//!
//! Every variate is a pure function of `(seed, path, step, draw)`, so a path
//! can be simulated on any worker without shared state and serial/parallel
//! runs agree bit for bit. The mixer is the splitmix64 finalizer applied to
//! the key words in sequence; statistical quality is far beyond what the
//! desk-scale estimators here can resolve.

use crate::scalar::Real;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const MIX_A: u64 = 0xbf58_476d_1ce4_e5b9;
const MIX_B: u64 = 0x94d0_49bb_1331_11eb;
const KEY_STEP: u64 = 0xc2b2_ae3d_27d4_eb4f;
const KEY_DRAW: u64 = 0x1656_67b1_9e37_79f9;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_A);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_B);
    z ^ (z >> 31)
}

/// Raw 64-bit word for one (seed, path, step, draw) cell.
#[inline]
pub fn draw_u64(seed: u64, path: u64, step: u64, draw: u64) -> u64 {
    let mut h = mix(seed ^ GOLDEN);
    h = mix(h ^ path.wrapping_mul(GOLDEN));
    h = mix(h ^ step.wrapping_mul(KEY_STEP));
    mix(h ^ draw.wrapping_mul(KEY_DRAW))
}

/// Uniform in the open interval (0, 1), 53-bit resolution, never exactly 0
/// or 1 so it is safe under `ln`.
#[inline]
pub fn uniform_open(seed: u64, path: u64, step: u64, draw: u64) -> f64 {
    (((draw_u64(seed, path, step, draw) >> 11) as f64) + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal via Box-Muller. The k-th normal of a (path, step) cell
/// consumes uniform draws 2k and 2k+1.
#[inline]
pub fn standard_normal(seed: u64, path: u64, step: u64, k: u64) -> f64 {
    let u1 = uniform_open(seed, path, step, 2 * k);
    let u2 = uniform_open(seed, path, step, 2 * k + 1);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[inline]
pub fn normal<T: Real>(seed: u64, path: u64, step: u64, k: u64) -> T {
    T::of(standard_normal(seed, path, step, k))
}

/// Sequential stream view over one (seed, path) lane; used by the checkers
/// for quasi-random point sampling where per-step keying is irrelevant.
pub struct Stream {
    seed: u64,
    lane: u64,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64, lane: u64) -> Self {
        Stream { seed, lane, counter: 0 }
    }

    pub fn next_uniform(&mut self) -> f64 {
        let u = uniform_open(self.seed, self.lane, 0, self.counter);
        self.counter += 1;
        u
    }

    /// Uniform point in a box given by (lo, hi) slices.
    pub fn next_point<T: Real>(&mut self, lo: &[T], hi: &[T]) -> Vec<T> {
        lo.iter()
            .zip(hi)
            .map(|(l, h)| *l + (*h - *l) * T::of(self.next_uniform()))
            .collect()
    }

    /// Uniform direction on the unit sphere (Gaussian normalization).
    pub fn next_direction<T: Real>(&mut self, dim: usize) -> Vec<T> {
        loop {
            let v: Vec<f64> = (0..dim)
                .map(|_| {
                    let u1 = self.next_uniform();
                    let u2 = self.next_uniform();
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.iter().map(|x| T::of(x / norm)).collect();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{mean_and_sd, pairwise_sum};

    #[test]
    fn draws_are_reproducible() {
        assert_eq!(draw_u64(42, 7, 13, 1), draw_u64(42, 7, 13, 1));
        assert_ne!(draw_u64(42, 7, 13, 1), draw_u64(43, 7, 13, 1));
        assert_ne!(draw_u64(42, 7, 13, 1), draw_u64(42, 8, 13, 1));
        assert_ne!(draw_u64(42, 7, 13, 1), draw_u64(42, 7, 14, 1));
        assert_ne!(draw_u64(42, 7, 13, 1), draw_u64(42, 7, 13, 2));
    }

    #[test]
    fn uniforms_stay_inside_open_interval() {
        for k in 0..10_000 {
            let u = uniform_open(1, 2, 3, k);
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn normals_have_unit_moments() {
        let n = 200_000u64;
        let zs: Vec<f64> = (0..n).map(|k| standard_normal(5, k, 0, 0)).collect();
        let (mean, sd) = mean_and_sd(&zs);
        // 5 sigma bands for the given sample size
        assert!(mean.abs() < 5.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((sd - 1.0).abs() < 0.02, "sd {sd}");
        let kurt: Vec<f64> = zs.iter().map(|z| z.powi(4)).collect();
        let k4 = pairwise_sum(&kurt) / n as f64;
        assert!((k4 - 3.0).abs() < 0.1, "fourth moment {k4}");
    }

    #[test]
    fn paths_are_uncorrelated() {
        let n = 100_000u64;
        let prods: Vec<f64> = (0..n)
            .map(|k| standard_normal(9, 0, k, 0) * standard_normal(9, 1, k, 0))
            .collect();
        let corr = pairwise_sum(&prods) / n as f64;
        assert!(corr.abs() < 5.0 / (n as f64).sqrt(), "corr {corr}");
    }
}
