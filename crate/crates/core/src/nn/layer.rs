//! Layers with explicit forward caches and backward passes.
//!
//! Activations move through [`Feat`]: feature maps `(batch, channels, h, w)`
//! or flat vectors `(batch, dim)`. Each layer's `forward` returns the cache
//! its `backward` needs; parameter gradients are returned as flat vectors
//! aligned with [`Sequential::param_slices`].

use crate::rng::standard_normal;
use crate::scalar::Scalar;
use ndarray::{Array1, Array2, Array4, Axis};
use rand_chacha::ChaCha8Rng;

/// Batched activation flowing through a network.
#[derive(Debug, Clone)]
pub enum Feat<F> {
    /// Feature map `(batch, channels, height, width)`.
    Map(Array4<F>),
    /// Flat features `(batch, dim)`.
    Vec(Array2<F>),
}

impl<F: Scalar> Feat<F> {
    pub fn batch_len(&self) -> usize {
        match self {
            Feat::Map(a) => a.shape()[0],
            Feat::Vec(a) => a.shape()[0],
        }
    }

    pub fn expect_map(self) -> Array4<F> {
        match self {
            Feat::Map(a) => a,
            Feat::Vec(_) => panic!("expected feature map, got flat features"),
        }
    }

    pub fn expect_vec(self) -> Array2<F> {
        match self {
            Feat::Vec(a) => a,
            Feat::Map(_) => panic!("expected flat features, got feature map"),
        }
    }
}

/// Fully connected layer, `y = x W + b` with `W: (in, out)`.
#[derive(Debug, Clone)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Dense<F> {
    /// He-normal initialization.
    pub fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / d_in as f64).sqrt();
        let weight = Array2::from_shape_fn((d_in, d_out), |_| {
            standard_normal::<F>(rng) * F::from_f64_c(std)
        });
        Self { weight, bias: Array1::zeros(d_out) }
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Returns `(grad_x, grad_weight, grad_bias)`.
    pub fn backward(&self, x: &Array2<F>, gy: &Array2<F>) -> (Array2<F>, Array2<F>, Array1<F>) {
        let gw = x.t().dot(gy);
        let gb = gy.sum_axis(Axis(0));
        let gx = gy.dot(&self.weight.t());
        (gx, gw, gb)
    }
}

/// 2-D convolution parameters, weight `(out_c, in_c, kh, kw)`.
#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_c * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = Array4::from_shape_fn((out_c, in_c, k, k), |_| {
            standard_normal::<F>(rng) * F::from_f64_c(std)
        });
        Self { weight, bias: Array1::zeros(out_c), stride, pad }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let kh = self.weight.shape()[2];
        let kw = self.weight.shape()[3];
        (
            (h + 2 * self.pad - kh) / self.stride + 1,
            (w + 2 * self.pad - kw) / self.stride + 1,
        )
    }

    /// Weight viewed as `(in_c*kh*kw, out_c)` for the im2col product.
    fn weight_mat(&self) -> Array2<F> {
        let (oc, ic, kh, kw) = dims4(&self.weight);
        let perm = self.weight.view().permuted_axes([1, 2, 3, 0]);
        let owned = perm.as_standard_layout().to_owned();
        owned.into_shape_with_order((ic * kh * kw, oc)).expect("weight reshape")
    }

    fn forward(&self, x: &Array4<F>) -> (Array4<F>, Array2<F>) {
        let (b, c, h, w) = dims4(x);
        let (kh, kw) = (self.weight.shape()[2], self.weight.shape()[3]);
        let (ho, wo) = self.out_hw(h, w);
        let cols = im2col(x, kh, kw, self.stride, self.pad, ho, wo);
        let mut y2 = cols.dot(&self.weight_mat());
        y2 += &self.bias;
        let oc = self.weight.shape()[0];
        let y = y2
            .into_shape_with_order((b, ho, wo, oc))
            .expect("conv reshape")
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .to_owned();
        debug_assert_eq!(dims4(&y), (b, oc, ho, wo));
        let _ = c;
        (y, cols)
    }

    fn backward(
        &self,
        cols: &Array2<F>,
        x_dims: (usize, usize, usize, usize),
        gy: &Array4<F>,
    ) -> (Array4<F>, Array4<F>, Array1<F>) {
        let (b, c, h, w) = x_dims;
        let (oc, ic, kh, kw) = dims4(&self.weight);
        let (ho, wo) = self.out_hw(h, w);
        let gy2 = gy
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((b * ho * wo, oc))
            .expect("gy reshape");
        let gw_mat = cols.t().dot(&gy2);
        let gw = gw_mat
            .into_shape_with_order((ic, kh, kw, oc))
            .expect("gw reshape")
            .permuted_axes([3, 0, 1, 2])
            .as_standard_layout()
            .to_owned();
        let gb = gy2.sum_axis(Axis(0));
        let gcols = gy2.dot(&self.weight_mat().t());
        let gx = col2im(&gcols, (b, c, h, w), kh, kw, self.stride, self.pad, ho, wo);
        (gx, gw, gb)
    }
}

fn dims4<F>(a: &Array4<F>) -> (usize, usize, usize, usize) {
    let s = a.shape();
    (s[0], s[1], s[2], s[3])
}

fn im2col<F: Scalar>(
    x: &Array4<F>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<F> {
    let (b, c, h, w) = dims4(x);
    let xs = x.as_slice().expect("standard layout");
    let ckk = c * kh * kw;
    let mut out = vec![F::zero(); b * ho * wo * ckk];
    for bi in 0..b {
        for oh in 0..ho {
            for ow in 0..wo {
                let row = ((bi * ho + oh) * wo + ow) * ckk;
                for ci in 0..c {
                    let x_base = (bi * c + ci) * h * w;
                    for ki in 0..kh {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let x_row = x_base + ih as usize * w;
                        let o_base = row + (ci * kh + ki) * kw;
                        for kj in 0..kw {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            out[o_base + kj] = xs[x_row + iw as usize];
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((b * ho * wo, ckk), out).expect("im2col shape")
}

fn col2im<F: Scalar>(
    gcols: &Array2<F>,
    x_dims: (usize, usize, usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array4<F> {
    let (b, c, h, w) = x_dims;
    let gs = gcols.as_slice().expect("standard layout");
    let ckk = c * kh * kw;
    let mut out = vec![F::zero(); b * c * h * w];
    for bi in 0..b {
        for oh in 0..ho {
            for ow in 0..wo {
                let row = ((bi * ho + oh) * wo + ow) * ckk;
                for ci in 0..c {
                    let x_base = (bi * c + ci) * h * w;
                    for ki in 0..kh {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let x_row = x_base + ih as usize * w;
                        let g_base = row + (ci * kh + ki) * kw;
                        for kj in 0..kw {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            out[x_row + iw as usize] += gs[g_base + kj];
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((b, c, h, w), out).expect("col2im shape")
}

/// A network layer. Residual blocks nest a body stack plus an optional
/// 1x1 projection on the skip path; ReLU is applied after the add.
#[derive(Debug, Clone)]
pub enum Layer<F> {
    Conv(Conv2d<F>),
    DenseL(Dense<F>),
    ReLU,
    Tanh,
    /// 2x2 max pooling with stride 2 (floor semantics).
    MaxPool2,
    /// Mean over both spatial axes: `(b, c, h, w) -> (b, c)`.
    GlobalAvgPool,
    /// Mean over the height axis: `(b, c, h, w) -> (b, c, 1, w)`.
    HeightMeanPool,
    /// `(b, c, h, w) -> (b, c*h*w)`.
    Flatten,
    Residual { body: Vec<Layer<F>>, proj: Option<Conv2d<F>> },
}

/// Saved forward state, one entry per layer.
pub enum LayerCache<F> {
    Conv { cols: Array2<F>, x_dims: (usize, usize, usize, usize) },
    Dense { x: Array2<F> },
    ReLUMap { y: Array4<F> },
    ReLUVec { y: Array2<F> },
    TanhVec { y: Array2<F> },
    MaxPool { x_dims: (usize, usize, usize, usize), argmax: Vec<u32> },
    GlobalAvgPool { x_dims: (usize, usize, usize, usize) },
    HeightMeanPool { x_dims: (usize, usize, usize, usize) },
    Flatten { x_dims: (usize, usize, usize, usize) },
    Residual { body: Vec<LayerCache<F>>, proj: Option<Box<LayerCache<F>>>, sum: Array4<F> },
}

impl<F: Scalar> Layer<F> {
    pub fn forward(&self, x: Feat<F>) -> (Feat<F>, LayerCache<F>) {
        match self {
            Layer::Conv(conv) => {
                let xm = x.expect_map();
                let x_dims = dims4(&xm);
                let (y, cols) = conv.forward(&xm);
                (Feat::Map(y), LayerCache::Conv { cols, x_dims })
            }
            Layer::DenseL(dense) => {
                let xv = x.expect_vec();
                let y = dense.forward(&xv);
                (Feat::Vec(y), LayerCache::Dense { x: xv })
            }
            Layer::ReLU => match x {
                Feat::Map(mut a) => {
                    a.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
                    (Feat::Map(a.clone()), LayerCache::ReLUMap { y: a })
                }
                Feat::Vec(mut a) => {
                    a.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
                    (Feat::Vec(a.clone()), LayerCache::ReLUVec { y: a })
                }
            },
            Layer::Tanh => {
                let mut a = x.expect_vec();
                a.mapv_inplace(|v| v.tanh());
                (Feat::Vec(a.clone()), LayerCache::TanhVec { y: a })
            }
            Layer::MaxPool2 => {
                let xm = x.expect_map();
                let (b, c, h, w) = dims4(&xm);
                let (ho, wo) = (h / 2, w / 2);
                let xs = xm.as_slice().expect("standard layout");
                let mut ys = vec![F::zero(); b * c * ho * wo];
                let mut argmax = vec![0u32; b * c * ho * wo];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * h * w;
                        for oh in 0..ho {
                            for ow in 0..wo {
                                let mut best = F::neg_infinity();
                                let mut best_idx = 0usize;
                                for di in 0..2 {
                                    for dj in 0..2 {
                                        let idx = base + (oh * 2 + di) * w + ow * 2 + dj;
                                        if xs[idx] > best {
                                            best = xs[idx];
                                            best_idx = idx;
                                        }
                                    }
                                }
                                let o = ((bi * c + ci) * ho + oh) * wo + ow;
                                ys[o] = best;
                                argmax[o] = best_idx as u32;
                            }
                        }
                    }
                }
                let y = Array4::from_shape_vec((b, c, ho, wo), ys).expect("pool shape");
                (Feat::Map(y), LayerCache::MaxPool { x_dims: (b, c, h, w), argmax })
            }
            Layer::GlobalAvgPool => {
                let xm = x.expect_map();
                let x_dims = dims4(&xm);
                let (b, c, h, w) = x_dims;
                let scale = F::from_f64_c(1.0 / (h * w) as f64);
                let mut y = Array2::zeros((b, c));
                for bi in 0..b {
                    for ci in 0..c {
                        let mut acc = F::zero();
                        for hi in 0..h {
                            for wi in 0..w {
                                acc += xm[[bi, ci, hi, wi]];
                            }
                        }
                        y[[bi, ci]] = acc * scale;
                    }
                }
                (Feat::Vec(y), LayerCache::GlobalAvgPool { x_dims })
            }
            Layer::HeightMeanPool => {
                let xm = x.expect_map();
                let x_dims = dims4(&xm);
                let (b, c, h, w) = x_dims;
                let scale = F::from_f64_c(1.0 / h as f64);
                let mut y = Array4::zeros((b, c, 1, w));
                for bi in 0..b {
                    for ci in 0..c {
                        for wi in 0..w {
                            let mut acc = F::zero();
                            for hi in 0..h {
                                acc += xm[[bi, ci, hi, wi]];
                            }
                            y[[bi, ci, 0, wi]] = acc * scale;
                        }
                    }
                }
                (Feat::Map(y), LayerCache::HeightMeanPool { x_dims })
            }
            Layer::Flatten => {
                let xm = x.expect_map();
                let x_dims = dims4(&xm);
                let (b, c, h, w) = x_dims;
                let y = xm.into_shape_with_order((b, c * h * w)).expect("flatten");
                (Feat::Vec(y), LayerCache::Flatten { x_dims })
            }
            Layer::Residual { body, proj } => {
                let xm = x.expect_map();
                let mut cur = Feat::Map(xm.clone());
                let mut caches = Vec::with_capacity(body.len());
                for layer in body {
                    let (next, cache) = layer.forward(cur);
                    cur = next;
                    caches.push(cache);
                }
                let body_out = cur.expect_map();
                let (skip, proj_cache) = match proj {
                    Some(conv) => {
                        let x_dims = dims4(&xm);
                        let (s, cols) = conv.forward(&xm);
                        (s, Some(Box::new(LayerCache::Conv { cols, x_dims })))
                    }
                    None => (xm, None),
                };
                let sum = &body_out + &skip;
                let mut y = sum.clone();
                y.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
                (
                    Feat::Map(y),
                    LayerCache::Residual { body: caches, proj: proj_cache, sum },
                )
            }
        }
    }

    /// Propagates `gy` back through the layer; pushes this layer's parameter
    /// gradients (in [`Self::param_slices`] order) onto `grads`.
    pub fn backward(&self, cache: &LayerCache<F>, gy: Feat<F>, grads: &mut Vec<Vec<F>>) -> Feat<F> {
        match (self, cache) {
            (Layer::Conv(conv), LayerCache::Conv { cols, x_dims }) => {
                let g = gy.expect_map();
                let (gx, gw, gb) = conv.backward(cols, *x_dims, &g);
                grads.push(gw.into_raw_vec_and_offset().0);
                grads.push(gb.into_raw_vec_and_offset().0);
                Feat::Map(gx)
            }
            (Layer::DenseL(dense), LayerCache::Dense { x }) => {
                let g = gy.expect_vec();
                let (gx, gw, gb) = dense.backward(x, &g);
                grads.push(gw.into_raw_vec_and_offset().0);
                grads.push(gb.into_raw_vec_and_offset().0);
                Feat::Vec(gx)
            }
            (Layer::ReLU, LayerCache::ReLUMap { y }) => {
                let mut g = gy.expect_map();
                g.zip_mut_with(y, |gv, yv| {
                    if *yv <= F::zero() {
                        *gv = F::zero();
                    }
                });
                Feat::Map(g)
            }
            (Layer::ReLU, LayerCache::ReLUVec { y }) => {
                let mut g = gy.expect_vec();
                g.zip_mut_with(y, |gv, yv| {
                    if *yv <= F::zero() {
                        *gv = F::zero();
                    }
                });
                Feat::Vec(g)
            }
            (Layer::Tanh, LayerCache::TanhVec { y }) => {
                let mut g = gy.expect_vec();
                g.zip_mut_with(y, |gv, yv| *gv = *gv * (F::one() - *yv * *yv));
                Feat::Vec(g)
            }
            (Layer::MaxPool2, LayerCache::MaxPool { x_dims, argmax }) => {
                let g = gy.expect_map();
                let gs = g.as_slice().expect("standard layout");
                let (b, c, h, w) = *x_dims;
                let mut gx = vec![F::zero(); b * c * h * w];
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src as usize] += gs[o];
                }
                Feat::Map(Array4::from_shape_vec((b, c, h, w), gx).expect("pool grad"))
            }
            (Layer::GlobalAvgPool, LayerCache::GlobalAvgPool { x_dims }) => {
                let g = gy.expect_vec();
                let (b, c, h, w) = *x_dims;
                let scale = F::from_f64_c(1.0 / (h * w) as f64);
                let mut gx = Array4::zeros((b, c, h, w));
                for bi in 0..b {
                    for ci in 0..c {
                        let gv = g[[bi, ci]] * scale;
                        for hi in 0..h {
                            for wi in 0..w {
                                gx[[bi, ci, hi, wi]] = gv;
                            }
                        }
                    }
                }
                Feat::Map(gx)
            }
            (Layer::HeightMeanPool, LayerCache::HeightMeanPool { x_dims }) => {
                let g = gy.expect_map();
                let (b, c, h, w) = *x_dims;
                let scale = F::from_f64_c(1.0 / h as f64);
                let mut gx = Array4::zeros((b, c, h, w));
                for bi in 0..b {
                    for ci in 0..c {
                        for wi in 0..w {
                            let gv = g[[bi, ci, 0, wi]] * scale;
                            for hi in 0..h {
                                gx[[bi, ci, hi, wi]] = gv;
                            }
                        }
                    }
                }
                Feat::Map(gx)
            }
            (Layer::Flatten, LayerCache::Flatten { x_dims }) => {
                let g = gy.expect_vec();
                let gx = g.into_shape_with_order(*x_dims).expect("unflatten");
                Feat::Map(gx)
            }
            (Layer::Residual { body, proj }, LayerCache::Residual { body: caches, proj: proj_cache, sum }) => {
                let mut g = gy.expect_map();
                g.zip_mut_with(sum, |gv, sv| {
                    if *sv <= F::zero() {
                        *gv = F::zero();
                    }
                });
                // Body branch: accumulate parameter grads in forward order.
                let mut body_grads: Vec<Vec<F>> = Vec::new();
                let mut cur = Feat::Map(g.clone());
                let mut rev_grads: Vec<Vec<F>> = Vec::new();
                for (layer, cache) in body.iter().zip(caches.iter()).rev() {
                    cur = layer.backward(cache, cur, &mut rev_grads);
                }
                // rev_grads is in reverse layer order; restore forward order.
                let mut idx = rev_grads.len();
                for layer in body.iter() {
                    let n = layer.param_count_entries();
                    idx -= n;
                    for k in 0..n {
                        body_grads.push(std::mem::take(&mut rev_grads[idx + k]));
                    }
                }
                let gx_body = cur.expect_map();
                let gx = match (proj, proj_cache) {
                    (Some(conv), Some(pc)) => {
                        if let LayerCache::Conv { cols, x_dims } = pc.as_ref() {
                            let (gx_skip, gw, gb) = conv.backward(cols, *x_dims, &g);
                            body_grads.push(gw.into_raw_vec_and_offset().0);
                            body_grads.push(gb.into_raw_vec_and_offset().0);
                            gx_body + gx_skip
                        } else {
                            unreachable!("projection cache mismatch")
                        }
                    }
                    (None, None) => gx_body + g,
                    _ => unreachable!("projection cache mismatch"),
                };
                grads.extend(body_grads);
                Feat::Map(gx)
            }
            _ => panic!("layer/cache mismatch"),
        }
    }

    /// Number of parameter tensors this layer contributes.
    fn param_count_entries(&self) -> usize {
        match self {
            Layer::Conv(_) | Layer::DenseL(_) => 2,
            Layer::Residual { body, proj } => {
                body.iter().map(|l| l.param_count_entries()).sum::<usize>()
                    + if proj.is_some() { 2 } else { 0 }
            }
            _ => 0,
        }
    }

    fn collect_params<'a>(&'a self, out: &mut Vec<&'a [F]>) {
        match self {
            Layer::Conv(c) => {
                out.push(c.weight.as_slice().expect("contiguous"));
                out.push(c.bias.as_slice().expect("contiguous"));
            }
            Layer::DenseL(d) => {
                out.push(d.weight.as_slice().expect("contiguous"));
                out.push(d.bias.as_slice().expect("contiguous"));
            }
            Layer::Residual { body, proj } => {
                for l in body {
                    l.collect_params(out);
                }
                if let Some(c) = proj {
                    out.push(c.weight.as_slice().expect("contiguous"));
                    out.push(c.bias.as_slice().expect("contiguous"));
                }
            }
            _ => {}
        }
    }

    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [F]>) {
        match self {
            Layer::Conv(c) => {
                out.push(c.weight.as_slice_mut().expect("contiguous"));
                out.push(c.bias.as_slice_mut().expect("contiguous"));
            }
            Layer::DenseL(d) => {
                out.push(d.weight.as_slice_mut().expect("contiguous"));
                out.push(d.bias.as_slice_mut().expect("contiguous"));
            }
            Layer::Residual { body, proj } => {
                for l in body {
                    l.collect_params_mut(out);
                }
                if let Some(c) = proj {
                    out.push(c.weight.as_slice_mut().expect("contiguous"));
                    out.push(c.bias.as_slice_mut().expect("contiguous"));
                }
            }
            _ => {}
        }
    }
}

/// An ordered stack of layers.
#[derive(Debug, Clone, Default)]
pub struct Sequential<F> {
    pub layers: Vec<Layer<F>>,
}

impl<F: Scalar> Sequential<F> {
    pub fn new(layers: Vec<Layer<F>>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: Feat<F>) -> (Feat<F>, Vec<LayerCache<F>>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for layer in &self.layers {
            let (next, cache) = layer.forward(cur);
            cur = next;
            caches.push(cache);
        }
        (cur, caches)
    }

    /// Forward without retaining caches.
    pub fn infer(&self, x: Feat<F>) -> Feat<F> {
        let mut cur = x;
        for layer in &self.layers {
            let (next, _) = layer.forward(cur);
            cur = next;
        }
        cur
    }

    /// Returns `(grad_input, param_grads)` with `param_grads` aligned to
    /// [`Self::param_slices`].
    pub fn backward(&self, caches: &[LayerCache<F>], gy: Feat<F>) -> (Feat<F>, Vec<Vec<F>>) {
        assert_eq!(caches.len(), self.layers.len(), "cache count mismatch");
        let mut rev_grads: Vec<Vec<F>> = Vec::new();
        let mut cur = gy;
        for (layer, cache) in self.layers.iter().zip(caches.iter()).rev() {
            cur = layer.backward(cache, cur, &mut rev_grads);
        }
        // Re-order from reverse-layer push order to forward order.
        let mut grads: Vec<Vec<F>> = Vec::with_capacity(rev_grads.len());
        let mut idx = rev_grads.len();
        for layer in &self.layers {
            let n = layer.param_count_entries();
            idx -= n;
            for k in 0..n {
                grads.push(std::mem::take(&mut rev_grads[idx + k]));
            }
        }
        (cur, grads)
    }

    pub fn param_slices(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.collect_params(&mut out);
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            l.collect_params_mut(&mut out);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::{Array2, Array4};

    /// Central finite difference of `f` at `x[idx]`.
    fn central_diff<G: FnMut(&mut [f64]) -> f64>(
        params: &mut [f64],
        idx: usize,
        mut f: G,
        h: f64,
    ) -> f64 {
        let orig = params[idx];
        params[idx] = orig + h;
        let up = f(params);
        params[idx] = orig - h;
        let down = f(params);
        params[idx] = orig;
        (up - down) / (2.0 * h)
    }

    fn scalar_loss(y: &Feat<f64>) -> (f64, Feat<f64>) {
        // loss = sum(y^2)/2 so that grad = y.
        match y {
            Feat::Vec(a) => {
                let loss = a.iter().map(|v| v * v).sum::<f64>() / 2.0;
                (loss, Feat::Vec(a.clone()))
            }
            Feat::Map(a) => {
                let loss = a.iter().map(|v| v * v).sum::<f64>() / 2.0;
                (loss, Feat::Map(a.clone()))
            }
        }
    }

    fn check_param_grads(net: &mut Sequential<f64>, x: Feat<f64>) {
        let (y, caches) = net.forward(x.clone());
        let (_, gy) = scalar_loss(&y);
        let (_, grads) = net.backward(&caches, gy);
        let flat_grads: Vec<f64> = grads.into_iter().flatten().collect();

        // Flatten params, evaluate loss as a function of them.
        let n = net.num_params();
        assert_eq!(flat_grads.len(), n);
        let mut flat: Vec<f64> = net.param_slices().iter().flat_map(|s| s.iter().copied()).collect();
        for idx in (0..n).step_by(n.div_ceil(37).max(1)) {
            let g_fd = {
                let x = x.clone();
                central_diff(
                    &mut flat,
                    idx,
                    |p| {
                        let mut offset = 0;
                        for s in net.param_slices_mut() {
                            s.copy_from_slice(&p[offset..offset + s.len()]);
                            offset += s.len();
                        }
                        let y = net.infer(x.clone());
                        scalar_loss(&y).0
                    },
                    1e-5,
                )
            };
            // Restore.
            let mut offset = 0;
            for s in net.param_slices_mut() {
                s.copy_from_slice(&flat[offset..offset + s.len()]);
                offset += s.len();
            }
            let g = flat_grads[idx];
            let denom = g.abs().max(g_fd.abs()).max(1e-8);
            assert!(
                (g - g_fd).abs() / denom < 1e-5,
                "param {idx}: analytic {g} vs fd {g_fd}"
            );
        }
    }

    fn check_input_grad(net: &Sequential<f64>, x: Array4<f64>) {
        let (y, caches) = net.forward(Feat::Map(x.clone()));
        let (_, gy) = scalar_loss(&y);
        let (gx, _) = net.backward(&caches, gy);
        let gx = gx.expect_map();
        let mut flat: Vec<f64> = x.iter().copied().collect();
        let dims = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let n = flat.len();
        for idx in (0..n).step_by(n.div_ceil(23).max(1)) {
            let g_fd = central_diff(
                &mut flat,
                idx,
                |p| {
                    let xa = Array4::from_shape_vec(dims, p.to_vec()).unwrap();
                    let y = net.infer(Feat::Map(xa));
                    scalar_loss(&y).0
                },
                1e-5,
            );
            let g = gx.as_slice().unwrap()[idx];
            let denom = g.abs().max(g_fd.abs()).max(1e-8);
            assert!(
                (g - g_fd).abs() / denom < 1e-5,
                "input {idx}: analytic {g} vs fd {g_fd}"
            );
        }
    }

    fn random_input(rng: &mut rand_chacha::ChaCha8Rng, dims: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(dims, |_| crate::rng::standard_normal::<f64>(rng))
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(1);
        let mut net = Sequential::new(vec![
            Layer::Flatten,
            Layer::DenseL(Dense::new(12, 7, &mut rng)),
            Layer::Tanh,
            Layer::DenseL(Dense::new(7, 4, &mut rng)),
        ]);
        let x = random_input(&mut rng, (3, 3, 2, 2));
        check_param_grads(&mut net, Feat::Map(x.clone()));
        check_input_grad(&net, x);
    }

    #[test]
    fn conv_pool_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(2);
        let mut net = Sequential::new(vec![
            Layer::Conv(Conv2d::new(2, 3, 3, 1, 1, &mut rng)),
            Layer::ReLU,
            Layer::MaxPool2,
            Layer::Flatten,
            Layer::DenseL(Dense::new(3 * 3 * 3, 5, &mut rng)),
        ]);
        let x = random_input(&mut rng, (2, 2, 6, 6));
        check_param_grads(&mut net, Feat::Map(x.clone()));
        check_input_grad(&net, x);
    }

    #[test]
    fn strided_conv_and_global_pool_gradients() {
        let mut rng = rng_from_seed(3);
        let mut net = Sequential::new(vec![
            Layer::Conv(Conv2d::new(1, 4, 3, 2, 1, &mut rng)),
            Layer::ReLU,
            Layer::GlobalAvgPool,
            Layer::DenseL(Dense::new(4, 3, &mut rng)),
        ]);
        let x = random_input(&mut rng, (2, 1, 8, 8));
        check_param_grads(&mut net, Feat::Map(x.clone()));
        check_input_grad(&net, x);
    }

    #[test]
    fn residual_block_gradients() {
        let mut rng = rng_from_seed(4);
        let body = vec![
            Layer::Conv(Conv2d::new(2, 4, 3, 2, 1, &mut rng)),
            Layer::ReLU,
            Layer::Conv(Conv2d::new(4, 4, 3, 1, 1, &mut rng)),
        ];
        let proj = Some(Conv2d::new(2, 4, 1, 2, 0, &mut rng));
        let mut net = Sequential::new(vec![
            Layer::Residual { body, proj },
            Layer::Residual {
                body: vec![
                    Layer::Conv(Conv2d::new(4, 4, 3, 1, 1, &mut rng)),
                    Layer::ReLU,
                    Layer::Conv(Conv2d::new(4, 4, 3, 1, 1, &mut rng)),
                ],
                proj: None,
            },
            Layer::GlobalAvgPool,
            Layer::DenseL(Dense::new(4, 2, &mut rng)),
        ]);
        let x = random_input(&mut rng, (2, 2, 6, 6));
        check_param_grads(&mut net, Feat::Map(x.clone()));
        check_input_grad(&net, x);
    }

    #[test]
    fn height_mean_pool_gradients() {
        let mut rng = rng_from_seed(5);
        let mut net = Sequential::new(vec![
            Layer::Conv(Conv2d::new(1, 3, 3, 1, 1, &mut rng)),
            Layer::ReLU,
            Layer::HeightMeanPool,
            Layer::Flatten,
            Layer::DenseL(Dense::new(3 * 6, 4, &mut rng)),
        ]);
        let x = random_input(&mut rng, (2, 1, 4, 6));
        check_param_grads(&mut net, Feat::Map(x.clone()));
        check_input_grad(&net, x);
    }

    #[test]
    fn maxpool_floors_odd_sizes() {
        let x = Array4::from_shape_fn((1, 1, 5, 5), |(_, _, h, w)| (h * 5 + w) as f64);
        let (y, _) = Layer::<f64>::MaxPool2.forward(Feat::Map(x));
        let y = y.expect_map();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y[[0, 0, 0, 0]], 6.0);
        assert_eq!(y[[0, 0, 1, 1]], 18.0);
    }

    #[test]
    fn flatten_round_trips() {
        let x = Array4::from_shape_fn((2, 3, 2, 2), |(b, c, h, w)| (b * 100 + c * 10 + h * 2 + w) as f64);
        let (y, cache) = Layer::<f64>::Flatten.forward(Feat::Map(x.clone()));
        let y = y.expect_vec();
        assert_eq!(y.shape(), &[2, 12]);
        let mut grads = Vec::new();
        let back = Layer::<f64>::Flatten.backward(&cache, Feat::Vec(y), &mut grads);
        assert_eq!(back.expect_map(), x);
    }

    #[test]
    fn infer_matches_forward() {
        let mut rng = rng_from_seed(6);
        let net = Sequential::new(vec![
            Layer::Conv(Conv2d::new(3, 4, 3, 1, 1, &mut rng)),
            Layer::ReLU,
            Layer::MaxPool2,
            Layer::Flatten,
            Layer::DenseL(Dense::new(4 * 4 * 4, 6, &mut rng)),
        ]);
        let x = random_input(&mut rng, (3, 3, 8, 8));
        let (y1, _) = net.forward(Feat::Map(x.clone()));
        let y2 = net.infer(Feat::Map(x));
        assert_eq!(y1.expect_vec(), y2.expect_vec());
    }

    proptest::proptest! {
        #[test]
        fn relu_output_nonnegative(vals in proptest::collection::vec(-10.0f64..10.0, 16)) {
            let x = Array2::from_shape_vec((4, 4), vals).unwrap();
            let (y, _) = Layer::<f64>::ReLU.forward(Feat::Vec(x));
            proptest::prop_assert!(y.expect_vec().iter().all(|&v| v >= 0.0));
        }
    }
}
