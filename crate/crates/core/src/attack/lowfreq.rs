//! Low-frequency perturbation control via a 2-D DCT mask.
//!
//! Keeps only the top-left `cutoff x cutoff` block of DCT-II coefficients in
//! each channel, which confines the perturbation to slowly varying patterns
//! that are harder for human observers to spot.

use crate::scalar::Scalar;
use ndarray::{Array2, Array3};

/// Orthonormal DCT-II matrix of size `n x n`.
fn dct_matrix<F: Scalar>(n: usize) -> Array2<F> {
    let mut m = Array2::zeros((n, n));
    for k in 0..n {
        let a = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            let v = a * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64
                / (2.0 * n as f64))
                .cos();
            m[[k, i]] = F::from_f64_c(v);
        }
    }
    m
}

/// Filters a perturbation so only low-frequency content survives.
///
/// A cutoff at or beyond both image sides is the identity.
pub fn lowfreq_filter<F: Scalar>(delta: &Array3<F>, freq_cutoff: usize) -> Array3<F> {
    let (c, h, w) = (delta.shape()[0], delta.shape()[1], delta.shape()[2]);
    if freq_cutoff >= h && freq_cutoff >= w {
        return delta.clone();
    }
    let ch = dct_matrix::<F>(h);
    let cw = dct_matrix::<F>(w);
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        let x = delta.index_axis(ndarray::Axis(0), ci).to_owned();
        // Forward: Y = C_h X C_w^T
        let mut y = ch.dot(&x).dot(&cw.t());
        for i in 0..h {
            for j in 0..w {
                if i >= freq_cutoff || j >= freq_cutoff {
                    y[[i, j]] = F::zero();
                }
            }
        }
        // Inverse: X' = C_h^T Y C_w
        let xr = ch.t().dot(&y).dot(&cw);
        out.index_axis_mut(ndarray::Axis(0), ci).assign(&xr);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal};

    fn energy(a: &Array3<f64>) -> f64 {
        a.iter().map(|v| v * v).sum()
    }

    #[test]
    fn full_cutoff_is_the_identity() {
        let mut rng = rng_from_seed(3);
        let delta = Array3::from_shape_fn((3, 8, 8), |_| standard_normal::<f64>(&mut rng));
        let filtered = lowfreq_filter(&delta, 8);
        let max_err = delta
            .iter()
            .zip(filtered.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6, "max err {max_err}");
    }

    #[test]
    fn dc_component_survives_any_cutoff() {
        let delta = Array3::from_elem((3, 8, 8), 0.37f64);
        for cutoff in [1, 2, 5] {
            let filtered = lowfreq_filter(&delta, cutoff);
            let max_err = delta
                .iter()
                .zip(filtered.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_err < 1e-6, "cutoff {cutoff}: max err {max_err}");
        }
    }

    #[test]
    fn filtering_never_adds_energy() {
        // Orthonormal transform + coefficient zeroing: Parseval says the
        // energy can only drop.
        let mut rng = rng_from_seed(4);
        for case in 0..1000 {
            let h = 4 + case % 5;
            let w = 4 + (case / 5) % 5;
            let delta = Array3::from_shape_fn((1, h, w), |_| standard_normal::<f64>(&mut rng));
            let cutoff = 1 + case % h.min(w);
            let filtered = lowfreq_filter(&delta, cutoff);
            assert!(
                energy(&filtered) <= energy(&delta) + 1e-9,
                "case {case}: energy grew"
            );
        }
    }

    #[test]
    fn rectangular_images_filter_cleanly() {
        let mut rng = rng_from_seed(5);
        let delta = Array3::from_shape_fn((3, 24, 94), |_| standard_normal::<f64>(&mut rng));
        let filtered = lowfreq_filter(&delta, 6);
        assert!(energy(&filtered) < energy(&delta));
        // And a cutoff covering both sides is still the identity.
        let id = lowfreq_filter(&delta, 94);
        let max_err = delta.iter().zip(id.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_err < 1e-6);
    }

    #[test]
    fn lowfreq_output_is_smooth() {
        // A heavily filtered checkerboard loses most of its energy.
        let delta = Array3::from_shape_fn((1, 8, 8), |(_, y, x)| {
            if (x + y) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        });
        let filtered = lowfreq_filter(&delta, 2);
        assert!(energy(&filtered) < 0.05 * energy(&delta));
    }
}
