//! Power normalization and the AWGN channel.

use super::SemComError;
use crate::rng::{rng_from_seed, standard_normal, uniform};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

/// A power-normalized symbol vector: average of squared entries is 1.
#[derive(Debug, Clone)]
pub struct ChannelSymbols<F> {
    pub values: Array1<F>,
}

impl<F: Scalar> ChannelSymbols<F> {
    /// Average of squared entries.
    pub fn power(&self) -> F {
        let n = F::from_f64_c(self.values.len() as f64);
        self.values.iter().map(|&v| v * v).sum::<F>() / n
    }
}

/// Scales `x` by `sqrt(d_c / ||x||^2)` so the average symbol power is 1.
pub fn power_normalize<F: Scalar>(x: &Array1<F>) -> Result<ChannelSymbols<F>, SemComError> {
    let sq_norm: F = x.iter().map(|&v| v * v).sum();
    if sq_norm == F::zero() {
        return Err(SemComError::ZeroPower);
    }
    let scale = (F::from_f64_c(x.len() as f64) / sq_norm).sqrt();
    Ok(ChannelSymbols { values: x.mapv(|v| v * scale) })
}

/// Row-wise power normalization of a batch; returns the normalized batch and
/// the per-row scale factors needed for the backward pass.
pub fn power_normalize_rows<F: Scalar>(
    x: &Array2<F>,
) -> Result<(Array2<F>, Vec<F>), SemComError> {
    let d_c = F::from_f64_c(x.shape()[1] as f64);
    let mut out = x.clone();
    let mut scales = Vec::with_capacity(x.shape()[0]);
    for mut row in out.rows_mut() {
        let sq_norm: F = row.iter().map(|&v| v * v).sum();
        if sq_norm == F::zero() {
            return Err(SemComError::ZeroPower);
        }
        let scale = (d_c / sq_norm).sqrt();
        row.mapv_inplace(|v| v * scale);
        scales.push(scale);
    }
    Ok((out, scales))
}

/// Backward of row-wise power normalization.
///
/// With `s = sqrt(d_c)/||x||`: `gx = s*g - (s/||x||^2) * (g . x) * x`,
/// reconstructed here from the cached pre-normalization rows and scales.
pub fn power_normalize_rows_backward<F: Scalar>(
    x_pre: &Array2<F>,
    scales: &[F],
    gy: &Array2<F>,
) -> Array2<F> {
    let d_c = F::from_f64_c(x_pre.shape()[1] as f64);
    let mut gx = Array2::zeros(x_pre.raw_dim());
    for (i, scale) in scales.iter().enumerate() {
        let xi = x_pre.row(i);
        let gi = gy.row(i);
        let dot: F = xi.iter().zip(gi.iter()).map(|(&a, &b)| a * b).sum();
        // ||x||^2 = d_c / s^2
        let inv_sq_norm = *scale * *scale / d_c;
        let coeff = *scale * dot * inv_sq_norm;
        let mut grow = gx.row_mut(i);
        for j in 0..xi.len() {
            grow[j] = *scale * gi[j] - coeff * xi[j];
        }
    }
    gx
}

/// Noise standard deviation for a given SNR (dB) with unit signal power.
pub fn noise_std_for_snr(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

/// Transmits power-normalized symbols through an AWGN channel:
/// `y = x + n`, `n ~ N(0, 10^(-snr_db/10))` i.i.d. per entry.
pub fn awgn_channel<F: Scalar>(
    x: &ChannelSymbols<F>,
    snr_db: f64,
    rng_seed: u64,
) -> Array1<F> {
    let sigma = F::from_f64_c(noise_std_for_snr(snr_db));
    let mut rng = rng_from_seed(rng_seed);
    x.values.mapv(|v| v + standard_normal::<F>(&mut rng) * sigma)
}

/// Adds AWGN in place to a batch, drawing from the supplied stream.
pub fn add_awgn_batch<F: Scalar>(y: &mut Array2<F>, snr_db: f64, rng: &mut ChaCha8Rng) {
    let sigma = F::from_f64_c(noise_std_for_snr(snr_db));
    for v in y.iter_mut() {
        *v += standard_normal::<F>(rng) * sigma;
    }
}

/// One training-time SNR draw, uniform on `[snr_db_min, snr_db_max]`.
pub fn sample_training_snr(config: &super::ChannelConfig, rng: &mut ChaCha8Rng) -> f64 {
    uniform(rng, config.snr_db_min, config.snr_db_max)
}
