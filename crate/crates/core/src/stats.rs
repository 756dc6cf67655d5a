//! Standard normal distribution helpers and the quantile z-grid.
//!
//! The z-grid places `N` quantile levels at `tau_i = (i + 1) / (N + 1)` and
//! maps them through the inverse standard normal CDF. Every other module uses
//! the same grid for target construction, normal fits and the loss weights.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

/// Standard normal CDF, computed through `erfc` so the lower tail keeps its
/// relative precision.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("cdf argument must be finite, got {x}")));
    }
    Ok(cdf_unchecked(x))
}

#[inline]
pub(crate) fn cdf_unchecked(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

#[inline]
pub(crate) fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

// Acklam's rational approximation, relative error ~1.2e-9 before refinement.
const A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const P_LOW: f64 = 0.02425;

fn acklam(p: f64) -> f64 {
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Inverse of the standard normal CDF for `p` in the open unit interval.
///
/// Only the lower half is evaluated directly; `p > 0.5` is mirrored so the
/// upper tail never suffers from cancellation in `cdf(x) - p`.
pub fn std_normal_inv_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("inverse cdf needs 0 < p < 1, got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return Ok(-lower_inv_cdf(1.0 - p));
    }
    Ok(lower_inv_cdf(p))
}

fn lower_inv_cdf(p: f64) -> f64 {
    let mut x = acklam(p);
    // Two Halley steps take the approximation to full double precision.
    for _ in 0..2 {
        let e = cdf_unchecked(x) - p;
        let u = e / pdf(x);
        if !u.is_finite() {
            break;
        }
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// Ordered z-scores of the `N` quantile levels `tau_i = (i + 1) / (N + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZGrid {
    z: Vec<f64>,
}

impl ZGrid {
    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Quantile level of bar `i`.
    pub fn tau(&self, i: usize) -> f64 {
        quantile_level(i, self.n())
    }

    pub fn taus(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.tau(i)).collect()
    }
}

#[inline]
pub fn quantile_level(i: usize, n: usize) -> f64 {
    (i + 1) as f64 / (n + 1) as f64
}

/// Build the z-grid for `n` quantile bars. The upper half mirrors the lower
/// half exactly, so the grid is antisymmetric bit-for-bit and the middle entry
/// of an odd grid is exactly zero.
pub fn quantile_z_grid(n: usize) -> Result<ZGrid> {
    if n == 0 {
        return Err(Error::Domain("quantile grid needs at least one bar".into()));
    }
    let mut z = vec![0.0; n];
    for i in 0..n / 2 {
        let zi = std_normal_inv_cdf(quantile_level(i, n))?;
        z[i] = zi;
        z[n - 1 - i] = -zi;
    }
    Ok(ZGrid { z })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Composite Simpson integration of the density; independent of erfc.
    fn simpson_cdf(x: f64) -> f64 {
        let n = 20_000;
        let h = x / n as f64;
        let mut acc = pdf(0.0) + pdf(x);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * pdf(k as f64 * h);
        }
        0.5 + acc * h / 3.0
    }

    fn bisect_inv(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if std_normal_cdf(mid).unwrap() < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn cdf_symmetry_and_center() {
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
        let x = 1.3;
        let a = std_normal_cdf(x).unwrap();
        let b = 1.0 - std_normal_cdf(-x).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn cdf_matches_quadrature() {
        let oracle = simpson_cdf(1.959964);
        let got = std_normal_cdf(1.959964).unwrap();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        assert!((got - 0.975).abs() < 1e-9);
        for &x in &[-3.0, -1.0, -0.2, 0.7, 2.5] {
            assert!((std_normal_cdf(x).unwrap() - simpson_cdf(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn cdf_rejects_non_finite() {
        assert!(std_normal_cdf(f64::NAN).is_err());
        assert!(std_normal_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn inv_cdf_examples() {
        assert_eq!(std_normal_inv_cdf(0.5).unwrap(), 0.0);
        let expected = [-0.841, -0.253, 0.253, 0.841];
        for (p, e) in [0.2, 0.4, 0.6, 0.8].iter().zip(expected) {
            let z = std_normal_inv_cdf(*p).unwrap();
            assert!((z - e).abs() < 1e-3, "{p}: {z}");
        }
        let z = std_normal_inv_cdf(0.975).unwrap();
        assert!((z - bisect_inv(0.975)).abs() < 1e-9);
        assert!((z - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn inv_cdf_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(std_normal_inv_cdf(p).is_err());
        }
    }

    #[test]
    fn grid_examples() {
        let g = quantile_z_grid(4).unwrap();
        for (z, e) in g.z().iter().zip([-0.841, -0.253, 0.253, 0.841]) {
            assert!((z - e).abs() < 1e-3);
        }
        assert_eq!(quantile_z_grid(1).unwrap().z(), &[0.0]);
        let g3 = quantile_z_grid(3).unwrap();
        assert!((g3.z()[0] - bisect_inv(0.25)).abs() < 1e-9);
        assert_eq!(g3.z()[1], 0.0);
        assert!((g3.z()[2] - bisect_inv(0.75)).abs() < 1e-9);
        assert!(quantile_z_grid(0).is_err());
    }

    #[test]
    fn grid_strictly_increasing_up_to_1024() {
        for n in 1..=1024 {
            let g = quantile_z_grid(n).unwrap();
            assert!(g.z().windows(2).all(|w| w[0] < w[1]), "n={n}");
            for i in 0..n {
                assert!((g.z()[i] + g.z()[n - 1 - i]).abs() <= 1e-12);
            }
            assert_eq!(g.z().contains(&0.0), n % 2 == 1);
        }
    }

    proptest::proptest! {
        #[test]
        fn round_trip(p in 0.001f64..0.999) {
            let z = std_normal_inv_cdf(p).unwrap();
            proptest::prop_assert!((std_normal_cdf(z).unwrap() - p).abs() < 1e-9);
            let z2 = std_normal_inv_cdf(1.0 - p).unwrap();
            proptest::prop_assert!((z + z2).abs() < 1e-9);
        }

        #[test]
        fn inv_monotone(p in 0.001f64..0.998, d in 1e-6f64..1e-3) {
            proptest::prop_assert!(std_normal_inv_cdf(p).unwrap() < std_normal_inv_cdf(p + d).unwrap());
        }
    }
}
