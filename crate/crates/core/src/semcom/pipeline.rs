//! Pipeline assembly: encoder architectures, channel codec, task heads.

use super::channel::{add_awgn_batch, power_normalize_rows, power_normalize_rows_backward};
use super::{PipelineConfig, SemComError, TaskKind};
use crate::nn::{Dense, Feat, Layer, LayerCache, Sequential};
use crate::rng::rng_for;
use crate::scalar::Scalar;
use ndarray::{Array2, Array3, Array4};
use rand_chacha::ChaCha8Rng;

/// Channel behaviour for one forward pass. `Noiseless` keeps power
/// normalization but transmits without noise.
#[derive(Debug, Clone, Copy)]
pub enum ChannelMode {
    Noiseless,
    Awgn { snr_db: f64 },
}

/// Task-head output: class scores or per-position symbol scores.
#[derive(Debug, Clone)]
pub enum TaskOutput<F> {
    /// `(batch, classes)`.
    Class(Array2<F>),
    /// `(batch, positions, alphabet)`.
    Seq(Array3<F>),
}

impl<F: Scalar> TaskOutput<F> {
    pub fn expect_class(self) -> Array2<F> {
        match self {
            TaskOutput::Class(a) => a,
            TaskOutput::Seq(_) => panic!("expected class scores"),
        }
    }
    pub fn expect_seq(self) -> Array3<F> {
        match self {
            TaskOutput::Seq(a) => a,
            TaskOutput::Class(_) => panic!("expected sequence scores"),
        }
    }
}

/// Gradient with respect to the task output.
pub enum TaskGrad<F> {
    Class(Array2<F>),
    Seq(Array3<F>),
}

enum Head<F> {
    Classify(Dense<F>),
    /// Shared per-position projection `channels -> alphabet`.
    PlateSeq { proj: Dense<F>, channels: usize, positions: usize },
}

enum HeadCache<F> {
    Classify { x: Array2<F> },
    PlateSeq { pos_input: Array2<F> },
}

/// Saved state of one cached forward pass.
pub struct PipelineCache<F> {
    enc: Vec<LayerCache<F>>,
    ch_enc: Vec<LayerCache<F>>,
    pre_norm: Array2<F>,
    scales: Vec<F>,
    ch_dec: Vec<LayerCache<F>>,
    head: HeadCache<F>,
}

/// The end-to-end semantic communication system.
pub struct SemComPipeline<F> {
    pub config: PipelineConfig,
    encoder: Sequential<F>,
    channel_encoder: Sequential<F>,
    channel_decoder: Sequential<F>,
    head: Head<F>,
    d_s: usize,
}

impl<F: Scalar> SemComPipeline<F> {
    /// Builds a freshly initialized pipeline from its configuration.
    pub fn build(config: &PipelineConfig) -> Result<Self, SemComError> {
        config.validate()?;
        let mut rng = rng_for(config.seed, &[0x1417]);
        let (c, h, w) = config.input_shape;

        let (mut enc_layers, final_channels, is_plate_arch) =
            encoder_stack(&config.encoder_arch, c, &mut rng)?;
        if is_plate_arch != (config.task == TaskKind::PlateRecognition) {
            return Err(SemComError::Config(format!(
                "encoder '{}' does not fit task {:?}",
                config.encoder_arch, config.task
            )));
        }

        // Probe the conv stack to learn the flattened width.
        let probe = Array4::<F>::zeros((1, c, h, w));
        let probe_out = Sequential::new(enc_layers.clone()).infer(Feat::Map(probe));
        let d_flat = probe_out.expect_vec().shape()[1];
        if d_flat == 0 {
            return Err(SemComError::Config(format!(
                "encoder '{}' collapses a ({c},{h},{w}) input to nothing",
                config.encoder_arch
            )));
        }

        let (d_s, head) = match config.task {
            TaskKind::Classification => {
                enc_layers.push(Layer::DenseL(Dense::new(d_flat, config.d_s, &mut rng)));
                let head = match config.head_arch.as_str() {
                    "dense" => Head::Classify(Dense::new(config.d_s, config.num_classes, &mut rng)),
                    other => {
                        return Err(SemComError::Config(format!("unknown head '{other}'")))
                    }
                };
                (config.d_s, head)
            }
            TaskKind::PlateRecognition => {
                if config.d_s != 0 && config.d_s != d_flat {
                    return Err(SemComError::Config(format!(
                        "plate d_s {} does not match encoder output {d_flat} (use 0 to derive)",
                        config.d_s
                    )));
                }
                let positions = d_flat / final_channels;
                if positions < 2 {
                    return Err(SemComError::Config(format!(
                        "input width leaves only {positions} sequence positions"
                    )));
                }
                let head = match config.head_arch.as_str() {
                    "greedy_seq" => Head::PlateSeq {
                        proj: Dense::new(final_channels, config.num_classes, &mut rng),
                        channels: final_channels,
                        positions,
                    },
                    other => {
                        return Err(SemComError::Config(format!("unknown head '{other}'")))
                    }
                };
                (d_flat, head)
            }
        };

        let channel_encoder = Sequential::new(vec![
            Layer::DenseL(Dense::new(d_s, config.d_c, &mut rng)),
            Layer::Tanh,
        ]);
        let channel_decoder = Sequential::new(vec![
            Layer::DenseL(Dense::new(config.d_c, d_s, &mut rng)),
            Layer::ReLU,
        ]);

        Ok(Self {
            config: config.clone(),
            encoder: Sequential::new(enc_layers),
            channel_encoder,
            channel_decoder,
            head,
            d_s,
        })
    }

    /// Effective semantic width.
    pub fn d_s(&self) -> usize {
        self.d_s
    }

    /// Sequence positions of the plate head (0 for classification).
    pub fn positions(&self) -> usize {
        match &self.head {
            Head::Classify(_) => 0,
            Head::PlateSeq { positions, .. } => *positions,
        }
    }

    fn check_input(&self, x: &Array4<F>) -> Result<(), SemComError> {
        let (c, h, w) = self.config.input_shape;
        if x.shape()[1] != c || x.shape()[2] != h || x.shape()[3] != w {
            return Err(SemComError::Contract(format!(
                "input shape {:?} does not match pipeline input ({c},{h},{w})",
                &x.shape()[1..]
            )));
        }
        Ok(())
    }

    /// Semantic encoder output for a batch, `(batch, d_s)`. This is exactly
    /// what the training interface exposes to the outside.
    pub fn encode(&self, x: &Array4<F>) -> Result<Array2<F>, SemComError> {
        self.check_input(x)?;
        Ok(self.encoder.infer(Feat::Map(x.clone())).expect_vec())
    }

    /// Cached encoder forward, for input-gradient work.
    pub fn encode_cached(
        &self,
        x: &Array4<F>,
    ) -> Result<(Array2<F>, Vec<LayerCache<F>>), SemComError> {
        self.check_input(x)?;
        let (out, caches) = self.encoder.forward(Feat::Map(x.clone()));
        Ok((out.expect_vec(), caches))
    }

    /// d(scalar)/d(input) given d(scalar)/d(semantics); no parameter grads.
    pub fn encoder_backward_input(
        &self,
        caches: &[LayerCache<F>],
        g_sem: Array2<F>,
    ) -> Array4<F> {
        let (gx, _) = self.encoder.backward(caches, Feat::Vec(g_sem));
        gx.expect_map()
    }

    /// Encoder backward returning parameter grads too (used by the defense,
    /// whose robust term differentiates through the encoder twice).
    pub fn encoder_backward_full(
        &self,
        caches: &[LayerCache<F>],
        g_sem: Array2<F>,
    ) -> (Array4<F>, Vec<Vec<F>>) {
        let (gx, grads) = self.encoder.backward(caches, Feat::Vec(g_sem));
        (gx.expect_map(), grads)
    }

    /// Full forward with caches for backprop.
    pub fn forward_cached(
        &self,
        x: &Array4<F>,
        mode: ChannelMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(TaskOutput<F>, PipelineCache<F>), SemComError> {
        self.check_input(x)?;
        let (sem, enc) = self.encoder.forward(Feat::Map(x.clone()));
        let (pre_norm, ch_enc) = {
            let (out, caches) = self.channel_encoder.forward(sem);
            (out.expect_vec(), caches)
        };
        let (mut transmitted, scales) = power_normalize_rows(&pre_norm)?;
        if let ChannelMode::Awgn { snr_db } = mode {
            add_awgn_batch(&mut transmitted, snr_db, rng);
        }
        let (decoded, ch_dec) = {
            let (out, caches) = self.channel_decoder.forward(Feat::Vec(transmitted));
            (out.expect_vec(), caches)
        };
        let (output, head) = self.head_forward(decoded);
        Ok((output, PipelineCache { enc, ch_enc, pre_norm, scales, ch_dec, head }))
    }

    /// Forward without keeping caches.
    pub fn forward(
        &self,
        x: &Array4<F>,
        mode: ChannelMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<TaskOutput<F>, SemComError> {
        Ok(self.forward_cached(x, mode, rng)?.0)
    }

    fn head_forward(&self, decoded: Array2<F>) -> (TaskOutput<F>, HeadCache<F>) {
        match &self.head {
            Head::Classify(dense) => {
                let scores = dense.forward(&decoded);
                (TaskOutput::Class(scores), HeadCache::Classify { x: decoded })
            }
            Head::PlateSeq { proj, channels, positions } => {
                let b = decoded.shape()[0];
                // (b, c*t) -> (b, c, t) -> (b, t, c) -> (b*t, c)
                let pos_input = decoded
                    .into_shape_with_order((b, *channels, *positions))
                    .expect("plate reshape")
                    .permuted_axes([0, 2, 1])
                    .as_standard_layout()
                    .to_owned()
                    .into_shape_with_order((b * positions, *channels))
                    .expect("plate reshape");
                let logits = proj.forward(&pos_input);
                let scores = logits
                    .into_shape_with_order((b, *positions, self.config.num_classes))
                    .expect("plate scores");
                (TaskOutput::Seq(scores), HeadCache::PlateSeq { pos_input })
            }
        }
    }

    /// Backward through the whole pipeline. Returns the input gradient and
    /// parameter gradients aligned with [`Self::param_slices`].
    pub fn backward(
        &self,
        cache: &PipelineCache<F>,
        gy: TaskGrad<F>,
    ) -> (Array4<F>, Vec<Vec<F>>) {
        let (g_decoded, head_grads) = match (&self.head, &cache.head, gy) {
            (Head::Classify(dense), HeadCache::Classify { x }, TaskGrad::Class(g)) => {
                let (gx, gw, gb) = dense.backward(x, &g);
                (gx, vec![gw.into_raw_vec_and_offset().0, gb.into_raw_vec_and_offset().0])
            }
            (
                Head::PlateSeq { proj, channels, positions },
                HeadCache::PlateSeq { pos_input },
                TaskGrad::Seq(g),
            ) => {
                let b = g.shape()[0];
                let g2 = g
                    .into_shape_with_order((b * positions, self.config.num_classes))
                    .expect("plate grad reshape");
                let (g_pos, gw, gb) = proj.backward(pos_input, &g2);
                let g_decoded = g_pos
                    .into_shape_with_order((b, *positions, *channels))
                    .expect("plate grad reshape")
                    .permuted_axes([0, 2, 1])
                    .as_standard_layout()
                    .to_owned()
                    .into_shape_with_order((b, channels * positions))
                    .expect("plate grad reshape");
                (g_decoded, vec![gw.into_raw_vec_and_offset().0, gb.into_raw_vec_and_offset().0])
            }
            _ => panic!("head/gradient kind mismatch"),
        };

        let (g_transmitted, cd_grads) =
            self.channel_decoder.backward(&cache.ch_dec, Feat::Vec(g_decoded));
        // Additive noise has unit Jacobian.
        let g_pre_norm = power_normalize_rows_backward(
            &cache.pre_norm,
            &cache.scales,
            &g_transmitted.expect_vec(),
        );
        let (g_sem, ce_grads) = self.channel_encoder.backward(&cache.ch_enc, Feat::Vec(g_pre_norm));
        let (gx, enc_grads) = self.encoder.backward(&cache.enc, g_sem);

        let mut grads = enc_grads;
        grads.extend(ce_grads);
        grads.extend(cd_grads);
        grads.extend(head_grads);
        (gx.expect_map(), grads)
    }

    pub fn param_slices(&self) -> Vec<&[F]> {
        let mut out = self.encoder.param_slices();
        out.extend(self.channel_encoder.param_slices());
        out.extend(self.channel_decoder.param_slices());
        match &self.head {
            Head::Classify(d) | Head::PlateSeq { proj: d, .. } => {
                out.push(d.weight.as_slice().expect("contiguous"));
                out.push(d.bias.as_slice().expect("contiguous"));
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = self.encoder.param_slices_mut();
        out.extend(self.channel_encoder.param_slices_mut());
        out.extend(self.channel_decoder.param_slices_mut());
        match &mut self.head {
            Head::Classify(d) | Head::PlateSeq { proj: d, .. } => {
                out.push(d.weight.as_slice_mut().expect("contiguous"));
                out.push(d.bias.as_slice_mut().expect("contiguous"));
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}

/// One forward pass of a single sample: deterministic given
/// `(weights, input, snr_db, seed)`.
pub fn semcom_forward<F: Scalar>(
    pipeline: &SemComPipeline<F>,
    pixels: &Array3<F>,
    snr_db: f64,
    seed: u64,
) -> Result<TaskOutput<F>, SemComError> {
    let s = pixels.shape();
    let x = pixels
        .clone()
        .into_shape_with_order((1, s[0], s[1], s[2]))
        .map_err(|e| SemComError::Contract(e.to_string()))?;
    let mut rng = rng_for(seed, &[0xF0]);
    pipeline.forward(&x, ChannelMode::Awgn { snr_db }, &mut rng)
}

/// Builds the convolutional part of an encoder.
/// Returns `(layers, final_channel_count, is_plate_arch)`.
fn encoder_stack<F: Scalar>(
    arch: &str,
    in_c: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Layer<F>>, usize, bool), SemComError> {
    use crate::nn::Conv2d;
    use crate::nn::Layer::*;
    let conv = |i, o, k, s, p, rng: &mut ChaCha8Rng| Conv(Conv2d::new(i, o, k, s, p, rng));
    let basic_block = |c_in: usize, c_out: usize, stride: usize, rng: &mut ChaCha8Rng| {
        let body = vec![
            conv(c_in, c_out, 3, stride, 1, rng),
            ReLU,
            conv(c_out, c_out, 3, 1, 1, rng),
        ];
        let proj = if stride != 1 || c_in != c_out {
            Some(Conv2d::new(c_in, c_out, 1, stride, 0, rng))
        } else {
            None
        };
        Residual { body, proj }
    };

    let layers = match arch {
        // Linear probe: flatten followed by the task-level dense layer.
        "linear" => return Ok((vec![Flatten], in_c, false)),
        "small_cnn" | "small_cnn_tiny" => {
            let w = if arch == "small_cnn" { 16 } else { 4 };
            vec![
                conv(in_c, w, 3, 1, 1, rng),
                ReLU,
                MaxPool2,
                conv(w, 2 * w, 3, 1, 1, rng),
                ReLU,
                MaxPool2,
                Flatten,
            ]
        }
        "resnet_lite" => {
            let mut v = vec![conv(in_c, 16, 3, 1, 1, rng), ReLU];
            v.push(basic_block(16, 16, 1, rng));
            v.push(basic_block(16, 16, 1, rng));
            v.push(basic_block(16, 32, 2, rng));
            v.push(basic_block(32, 32, 1, rng));
            v.push(basic_block(32, 64, 2, rng));
            v.push(basic_block(64, 64, 1, rng));
            v.push(GlobalAvgPool);
            return Ok((v, 64, false));
        }
        "lprnet_lite" | "lprnet_tiny" => {
            let (w1, w2, w3) = if arch == "lprnet_lite" { (32, 64, 64) } else { (8, 16, 16) };
            let v = vec![
                conv(in_c, w1, 3, 1, 1, rng),
                ReLU,
                MaxPool2,
                conv(w1, w2, 3, 1, 1, rng),
                ReLU,
                MaxPool2,
                conv(w2, w3, 3, 1, 1, rng),
                ReLU,
                HeightMeanPool,
                Flatten,
            ];
            return Ok((v, w3, true));
        }
        other => {
            return Err(SemComError::Config(format!("unknown encoder arch '{other}'")))
        }
    };
    let final_c = match arch {
        "small_cnn" => 32,
        _ => 8,
    };
    Ok((layers, final_c, false))
}
