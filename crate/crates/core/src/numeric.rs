//! Small binary64 helpers shared by the scoring, metric and generator code.

use alloc::vec::Vec;
use rand_core::RngCore;

/// Dot product of two binary32 slices accumulated in binary64, left to right.
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |acc, (&x, &y)| acc + f64::from(x) * f64::from(y))
}

/// Cosine of two vectors given their squared norms; `None` if either is zero.
///
/// `sqrt(|a|^2 |b|^2)` rather than `|a| |b|` keeps `cosine(a, a)` exactly 1
/// and the function exactly symmetric.
pub(crate) fn cosine(a: &[f32], b: &[f32], a_sq: f64, b_sq: f64) -> Option<f64> {
    if a_sq == 0.0 || b_sq == 0.0 {
        return None;
    }
    Some(dot(a, b) / libm::sqrt(a_sq * b_sq))
}

pub(crate) fn norm64(a: &[f64]) -> f64 {
    libm::sqrt(a.iter().map(|x| x * x).sum())
}

/// Mean and sample standard deviation (n - 1 denominator, 0 for n < 2).
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, libm::sqrt(ss / (n - 1.0)))
}

/// Uniform draw in [0, 1) from the top 53 bits of a 64-bit word.
pub(crate) fn uniform01<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draws via the Box-Muller transform.
///
/// Each pair of uniforms yields two normals; the cached second value is used
/// before drawing again. The sequence is fully determined by the generator
/// state, and `libm` keeps the transcendental functions portable.
pub(crate) struct Gaussian {
    spare: Option<f64>,
}

impl Gaussian {
    pub(crate) fn new() -> Self {
        Self { spare: None }
    }

    pub(crate) fn sample<R: RngCore>(&mut self, rng: &mut R) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] so that ln(u1) is finite.
        let u1 = 1.0 - uniform01(rng);
        let u2 = uniform01(rng);
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare = Some(radius * libm::sin(theta));
        radius * libm::cos(theta)
    }

    pub(crate) fn vector<R: RngCore>(&mut self, rng: &mut R, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.sample(rng)).collect()
    }
}

/// Scales `v` to unit length in place. Returns `false` for a zero vector.
pub(crate) fn normalize(v: &mut [f64]) -> bool {
    let n = norm64(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

pub(crate) fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub(crate) fn hex(bytes: &[u8]) -> alloc::string::String {
    use core::fmt::Write;
    let mut s = alloc::string::String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_core::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn gaussian_moments_are_plausible() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let mut g = Gaussian::new();
        let xs: Vec<f64> = (0..20_000).map(|_| g.sample(&mut rng)).collect();
        let (m, s) = mean_std(&xs);
        assert!(m.abs() < 0.03, "mean {m}");
        assert!((s - 1.0).abs() < 0.03, "std {s}");
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
        for _ in 0..10_000 {
            let u = uniform01(&mut rng);
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn mean_std_small_inputs() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - core::f64::consts::SQRT_2).abs() < 1e-15);
    }
}
