//! L2 ball projection in pixel space.

use crate::scalar::Scalar;
use ndarray::Array3;

/// Projects a perturbation onto the L2 ball of radius `epsilon`: returned
/// unchanged when already inside, otherwise rescaled onto the sphere.
pub fn project_l2_ball<F: Scalar>(mut delta: Array3<F>, epsilon: f64) -> Array3<F> {
    let norm = delta.iter().map(|&v| (v * v).to_f64_c()).sum::<f64>().sqrt();
    if norm > epsilon && norm > 0.0 {
        let scale = F::from_f64_c(epsilon / norm);
        delta.mapv_inplace(|v| v * scale);
    }
    delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal, uniform};
    use ndarray::Array3;

    fn norm(a: &Array3<f64>) -> f64 {
        a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn oversized_delta_lands_on_the_sphere() {
        let delta = Array3::from_elem((3, 4, 4), 7.2 / (48.0f64).sqrt());
        assert!((norm(&delta) - 7.2).abs() < 1e-9);
        let projected = project_l2_ball(delta, 3.6);
        assert!((norm(&projected) - 3.6).abs() < 1e-9);
    }

    #[test]
    fn inside_delta_is_untouched() {
        let delta = Array3::from_elem((3, 4, 4), 1.0 / 48.0f64.sqrt());
        let projected = project_l2_ball(delta.clone(), 3.6);
        assert_eq!(projected, delta);
    }

    #[test]
    fn projection_is_the_closest_ball_point() {
        // The projection must beat 10^4 random in-ball candidates in
        // distance to the unprojected delta.
        let mut rng = rng_from_seed(31);
        let dims = (3usize, 4usize, 4usize);
        let n = 48usize;
        let epsilon = 2.0;
        let delta = Array3::from_shape_fn(dims, |_| standard_normal::<f64>(&mut rng) * 2.0);
        let projected = project_l2_ball(delta.clone(), epsilon);
        let d_proj: f64 = delta
            .iter()
            .zip(projected.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();

        for _ in 0..10_000 {
            // Uniform direction scaled by a radius with the right density.
            let dir = Array3::from_shape_fn(dims, |_| standard_normal::<f64>(&mut rng));
            let dn = norm(&dir);
            let r = epsilon * uniform::<f64>(&mut rng, 0.0, 1.0).powf(1.0 / n as f64);
            let candidate = dir.mapv(|v| v / dn * r);
            let d: f64 = delta
                .iter()
                .zip(candidate.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(d >= d_proj - 1e-9, "candidate beat the projection: {d} < {d_proj}");
        }
    }
}
