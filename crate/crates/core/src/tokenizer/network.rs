//! Frame-stacking encoder and decoder with hand-written gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Fully connected layer `y = act(x W + b)` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub tanh: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct DenseCache {
    input: Array2<f64>,
    output: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, tanh: bool) -> Self {
        Dense {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
            tanh,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w) + &self.b;
        if self.tanh {
            y.mapv_inplace(f64::tanh);
        }
        y
    }

    pub(crate) fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, DenseCache) {
        let y = self.forward(x);
        let cache = DenseCache {
            input: x.to_owned(),
            output: y.clone(),
        };
        (y, cache)
    }

    /// Returns the gradient with respect to the input and the parameters.
    pub(crate) fn backward(
        &self,
        cache: &DenseCache,
        grad_out: &Array2<f64>,
    ) -> (Array2<f64>, DenseGrad) {
        let g = if self.tanh {
            let mut g = grad_out.clone();
            g.zip_mut_with(&cache.output, |d, &y| *d *= 1.0 - y * y);
            g
        } else {
            grad_out.clone()
        };
        let gw = cache.input.t().dot(&g);
        let gb = g.sum_axis(Axis(0));
        let gx = g.dot(&self.w.t());
        (gx, DenseGrad { w: gw, b: gb })
    }
}

/// One part's encoder/decoder pair.
///
/// Frames are normalized per column, `alpha` consecutive frames are stacked
/// into one row, and the encoder maps each stacked row to a `dim`-wide
/// latent. The decoder mirrors this and undoes the normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct PartNetwork {
    pub alpha: usize,
    pub width: usize,
    pub dim: usize,
    pub shift: Array1<f64>,
    pub scale: Array1<f64>,
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub(crate) struct NetCache {
    layers: Vec<DenseCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetGrad {
    pub encoder: Vec<DenseGrad>,
    pub decoder: Vec<DenseGrad>,
}

impl PartNetwork {
    /// All-zero weights and identity normalization.
    pub fn zeros(alpha: usize, width: usize, dim: usize, hidden: Option<usize>) -> Self {
        let stacked = alpha * width;
        let (encoder, decoder) = match hidden {
            None => (
                vec![Dense::zeros(stacked, dim, false)],
                vec![Dense::zeros(dim, stacked, false)],
            ),
            Some(h) => (
                vec![Dense::zeros(stacked, h, true), Dense::zeros(h, dim, false)],
                vec![Dense::zeros(dim, h, true), Dense::zeros(h, stacked, false)],
            ),
        };
        PartNetwork {
            alpha,
            width,
            dim,
            shift: Array1::zeros(width),
            scale: Array1::ones(width),
            encoder,
            decoder,
        }
    }

    /// Linear network whose encoder and decoder are identity matrices;
    /// requires `dim == alpha * width`.
    pub fn identity(alpha: usize, width: usize) -> Self {
        let d = alpha * width;
        let mut net = Self::zeros(alpha, width, d, None);
        net.encoder[0].w = Array2::eye(d);
        net.decoder[0].w = Array2::eye(d);
        net
    }

    pub fn stacked_width(&self) -> usize {
        self.alpha * self.width
    }

    fn check_frames(&self, frames: ArrayView2<f64>) -> Result<()> {
        if frames.ncols() != self.width {
            return Err(Error::Config(format!(
                "part width {} but input has {} columns",
                self.width,
                frames.ncols()
            )));
        }
        if !frames.nrows().is_multiple_of(self.alpha) {
            return Err(Error::ShapeMismatch(format!(
                "{} frames is not a multiple of alpha {}",
                frames.nrows(),
                self.alpha
            )));
        }
        Ok(())
    }

    /// Normalizes and stacks `T x width` frames into `T/alpha` rows.
    pub fn stack(&self, frames: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_frames(frames)?;
        let mut x = frames.to_owned();
        x -= &self.shift;
        x /= &self.scale;
        let steps = frames.nrows() / self.alpha;
        Ok(x.into_shape_with_order((steps, self.stacked_width()))
            .expect("contiguous reshape"))
    }

    /// Inverse of [`stack`](Self::stack).
    pub fn unstack(&self, rows: Array2<f64>) -> Array2<f64> {
        let frames = rows.nrows() * self.alpha;
        let mut x = rows
            .into_shape_with_order((frames, self.width))
            .expect("contiguous reshape");
        x *= &self.scale;
        x += &self.shift;
        x
    }

    pub fn encode_rows(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for layer in &self.encoder {
            h = layer.forward(h.view());
        }
        h
    }

    pub fn decode_rows(&self, z: ArrayView2<f64>) -> Array2<f64> {
        let mut h = z.to_owned();
        for layer in &self.decoder {
            h = layer.forward(h.view());
        }
        h
    }

    pub(crate) fn encode_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, NetCache) {
        run_cached(&self.encoder, x)
    }

    pub(crate) fn decode_cached(&self, z: ArrayView2<f64>) -> (Array2<f64>, NetCache) {
        run_cached(&self.decoder, z)
    }

    pub(crate) fn encoder_backward(&self, cache: &NetCache, grad: Array2<f64>) -> Vec<DenseGrad> {
        back(&self.encoder, cache, grad).1
    }

    /// Returns the gradient with respect to the latent and the decoder
    /// parameters.
    pub(crate) fn decoder_backward(
        &self,
        cache: &NetCache,
        grad: Array2<f64>,
    ) -> (Array2<f64>, Vec<DenseGrad>) {
        back(&self.decoder, cache, grad)
    }

    /// Every trainable array in a fixed order, paired with its gradient.
    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.push(layer.w.as_slice_mut().expect("standard layout"));
            out.push(layer.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }
}

impl NetGrad {
    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in self.encoder.iter().chain(&self.decoder) {
            out.push(g.w.as_slice().expect("standard layout"));
            out.push(g.b.as_slice().expect("standard layout"));
        }
        out
    }

    /// Concatenation of all gradients in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.slices().into_iter().flatten().copied().collect()
    }
}

fn run_cached(layers: &[Dense], x: ArrayView2<f64>) -> (Array2<f64>, NetCache) {
    let mut caches = Vec::with_capacity(layers.len());
    let mut h = x.to_owned();
    for layer in layers {
        let (y, c) = layer.forward_cached(h.view());
        caches.push(c);
        h = y;
    }
    (h, NetCache { layers: caches })
}

fn back(
    layers: &[Dense],
    cache: &NetCache,
    mut grad: Array2<f64>,
) -> (Array2<f64>, Vec<DenseGrad>) {
    let mut grads = Vec::with_capacity(layers.len());
    for (layer, c) in layers.iter().zip(&cache.layers).rev() {
        let (gx, g) = layer.backward(c, &grad);
        grads.push(g);
        grad = gx;
    }
    grads.reverse();
    (grad, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn stack_unstack_round_trip() {
        let mut net = PartNetwork::zeros(2, 3, 4, None);
        net.shift = array![1.0, -2.0, 0.5];
        net.scale = array![2.0, 0.5, 4.0];
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.25 - 1.0);
        let rows = net.stack(x.view()).unwrap();
        assert_eq!(rows.dim(), (2, 6));
        let back = net.unstack(rows);
        for (a, b) in x.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_network_is_exact() {
        let net = PartNetwork::identity(4, 3);
        let x = Array2::from_shape_fn((8, 3), |(i, j)| (i as f64).sin() + j as f64);
        let rows = net.stack(x.view()).unwrap();
        let z = net.encode_rows(rows.view());
        assert_eq!(z, rows);
        let y = net.unstack(net.decode_rows(z.view()));
        assert_eq!(y, x);
    }

    #[test]
    fn rejects_bad_width_and_length() {
        let net = PartNetwork::zeros(4, 3, 8, None);
        assert!(net.stack(Array2::zeros((8, 2)).view()).is_err());
        assert!(net.stack(Array2::zeros((6, 3)).view()).is_err());
    }

    #[test]
    fn tanh_layer_gradient_matches_differences() {
        let mut layer = Dense::zeros(3, 2, true);
        layer.w = array![[0.3, -0.2], [0.1, 0.5], [-0.4, 0.2]];
        layer.b = array![0.05, -0.1];
        let x = array![[0.5, -1.0, 2.0], [0.1, 0.2, -0.3]];
        let loss = |l: &Dense| l.forward(x.view()).mapv(|v| v * v).sum();
        let (y, cache) = layer.forward_cached(x.view());
        let (_, g) = layer.backward(&cache, &(2.0 * &y));
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..2 {
                let mut p = layer.clone();
                p.w[(i, j)] += h;
                let mut m = layer.clone();
                m.w[(i, j)] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!((fd - g.w[(i, j)]).abs() < 1e-8);
            }
        }
    }
}
