//! One-hidden-layer perceptron with sigmoid outputs, trained with the
//! asymmetric loss under per-cell weights.

mod adam;
mod asl;
mod schedule;

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use adam::AdamState;
pub use asl::{asl_loss, AslConfig, P_MIN};
pub use schedule::OneCycleSchedule;

/// Weights of `x -> tanh(x W1 + b1) -> sigmoid(h W2 + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Same shapes as the parameters.
pub type Gradients = MlpParams;

impl MlpParams {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(d: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |fan_in: usize, shape: (usize, usize)| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
        };
        let w1 = uniform(d, (d, hidden));
        let w2 = uniform(hidden, (hidden, classes));
        Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(classes),
        }
    }

    pub fn zeros(d: usize, hidden: usize, classes: usize) -> Self {
        Self {
            w1: Array2::zeros((d, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, classes)),
            b2: Array1::zeros(classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden(), self.classes())
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn classes(&self) -> usize {
        self.w2.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Tensors in declaration order as flat row-major slices.
    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Writes the checkpoint: four little-endian u64 (d, h, C, seed), then
    /// every tensor as little-endian f64 in declaration order.
    pub fn write_checkpoint(&self, seed: u64, out: &mut Vec<u8>) {
        for v in [
            self.input_dim() as u64,
            self.hidden() as u64,
            self.classes() as u64,
            seed,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for tensor in self.tensors() {
            for v in tensor {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    pub fn read_checkpoint(bytes: &[u8]) -> Result<(Self, u64)> {
        let word = |k: usize| -> Result<[u8; 8]> {
            bytes
                .get(8 * k..8 * k + 8)
                .map(|s| s.try_into().expect("8-byte slice"))
                .ok_or_else(|| Error::parse(None, None, "truncated checkpoint"))
        };
        let header: Vec<u64> = (0..4)
            .map(|k| word(k).map(u64::from_le_bytes))
            .collect::<Result<_>>()?;
        let (d, h, c, seed) = (
            header[0] as usize,
            header[1] as usize,
            header[2] as usize,
            header[3],
        );
        let mut params = Self::zeros(d, h, c);
        let expected = 8 * (4 + params.n_params());
        if bytes.len() != expected {
            return Err(Error::parse(
                None,
                None,
                format!("checkpoint has {} bytes, expected {expected}", bytes.len()),
            ));
        }
        let mut k = 4;
        for tensor in params.tensors_mut() {
            for v in tensor.iter_mut() {
                *v = f64::from_le_bytes(word(k)?);
                k += 1;
            }
        }
        Ok((params, seed))
    }

    pub fn save(&self, seed: u64, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_checkpoint(seed, &mut buf);
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, u64)> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(&bytes)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardPass {
    hidden: Array2<f64>,
    probs: Array2<f64>,
}

impl ForwardPass {
    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }
}

fn forward_cached(params: &MlpParams, x: ArrayView2<'_, f64>) -> ForwardPass {
    let mut hidden = x.dot(&params.w1);
    hidden += &params.b1;
    hidden.mapv_inplace(f64::tanh);
    let mut probs = hidden.dot(&params.w2);
    probs += &params.b2;
    probs.mapv_inplace(sigmoid);
    ForwardPass { hidden, probs }
}

/// Output probabilities, `N x C`, each strictly inside `(0, 1)` up to
/// floating-point saturation.
pub fn forward(params: &MlpParams, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    params.check_input(&x)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model input".into()));
    }
    Ok(forward_cached(params, x).probs)
}

/// Forward pass that keeps the activations for [`backward_from`].
pub fn forward_pass(params: &MlpParams, x: ArrayView2<'_, f64>) -> Result<ForwardPass> {
    params.check_input(&x)?;
    Ok(forward_cached(params, x))
}

/// Weighted-mean loss and its exact gradient.
///
/// The objective is `sum(w * loss) / sum(w)` over all cells; a zero weight
/// removes the cell from both numerator and denominator. All-zero weights
/// give loss 0 and zero gradients.
pub fn backward(
    params: &MlpParams,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, u8>,
    cfg: &AslConfig,
    weights: ArrayView2<'_, f64>,
) -> Result<(f64, Gradients)> {
    params.check_input(&x)?;
    let pass = forward_cached(params, x);
    backward_from(params, x, &pass, y, cfg, weights)
}

/// [`backward`] reusing a forward pass of the same parameters and input.
pub fn backward_from(
    params: &MlpParams,
    x: ArrayView2<'_, f64>,
    act: &ForwardPass,
    y: ArrayView2<'_, u8>,
    cfg: &AslConfig,
    weights: ArrayView2<'_, f64>,
) -> Result<(f64, Gradients)> {
    let expected = (x.nrows(), params.classes());
    if act.probs.dim() != expected {
        return Err(Error::Shape("forward pass does not match the input".into()));
    }
    if y.dim() != expected || weights.dim() != expected {
        return Err(Error::Shape(format!(
            "labels {:?} / weights {:?}, expected {expected:?}",
            y.dim(),
            weights.dim()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument("cell weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.sum();
    if total == 0.0 {
        return Ok((0.0, params.zeros_like()));
    }

    let mut loss = 0.0;
    let mut dz2 = Array2::<f64>::zeros(expected);
    Zip::from(&mut dz2)
        .and(&act.probs)
        .and(y)
        .and(weights)
        .for_each(|g, &p, &t, &w| {
            if w > 0.0 {
                loss += w * cfg.cell_loss(p, t);
                *g = w * cfg.cell_logit_grad(p, t) / total;
            }
        });
    loss /= total;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }

    // dot of transposed views can come back column-major
    let w2 = act.hidden.t().dot(&dz2).as_standard_layout().into_owned();
    let b2 = dz2.sum_axis(Axis(0));
    let mut dz1 = dz2.dot(&params.w2.t());
    Zip::from(&mut dz1)
        .and(&act.hidden)
        .for_each(|g, &h| *g *= 1.0 - h * h);
    let w1 = x.t().dot(&dz1).as_standard_layout().into_owned();
    let b1 = dz1.sum_axis(Axis(0));
    Ok((loss, MlpParams { w1, b1, w2, b2 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Scalar loop re-implementation used as an independent reference.
    fn naive_forward(params: &MlpParams, x: &Array2<f64>) -> Array2<f64> {
        let (n, d) = x.dim();
        let (h, c) = (params.hidden(), params.classes());
        let mut out = Array2::zeros((n, c));
        for i in 0..n {
            let mut hid = vec![0.0; h];
            for (j, hj) in hid.iter_mut().enumerate() {
                let mut s = params.b1[j];
                for k in 0..d {
                    s += x[[i, k]] * params.w1[[k, j]];
                }
                *hj = s.tanh();
            }
            for k in 0..c {
                let mut s = params.b2[k];
                for (j, hj) in hid.iter().enumerate() {
                    s += hj * params.w2[[j, k]];
                }
                out[[i, k]] = 1.0 / (1.0 + (-s).exp());
            }
        }
        out
    }

    fn gaussian(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
    }

    fn weighted_mean_loss(
        params: &MlpParams,
        x: &Array2<f64>,
        y: &Array2<u8>,
        cfg: &AslConfig,
        w: &Array2<f64>,
    ) -> f64 {
        let p = naive_forward(params, x);
        let l = asl_loss(p.view(), y.view(), cfg).unwrap();
        (&l * w).sum() / w.sum()
    }

    #[test]
    fn zero_model_outputs_half() {
        let params = MlpParams::zeros(3, 4, 2);
        let x = array![[1.0, -2.0, 0.5], [0.0, 0.0, 9.0]];
        let p = forward(&params, x.view()).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = MlpParams::init(2, 3, 2, 9);
        let x = gaussian((2, 2), &mut rng);
        let fast = forward(&params, x.view()).unwrap();
        let slow = naive_forward(&params, &x);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let params = MlpParams::zeros(3, 4, 2);
        assert!(matches!(
            forward(&params, Array2::zeros((2, 5)).view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn all_zero_weights_give_zero_gradient() {
        let params = MlpParams::init(3, 4, 2, 1);
        let x = Array2::ones((5, 3));
        let y = Array2::<u8>::ones((5, 2));
        let (loss, g) = backward(&params, x.view(), y.view(), &AslConfig::default(), Array2::zeros((5, 2)).view()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn masked_rows_equal_removed_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = MlpParams::init(4, 6, 3, 2);
        let x = gaussian((6, 4), &mut rng);
        let y = Array2::from_shape_simple_fn((6, 3), || u8::from(rng.random::<f64>() < 0.3));
        let mut w = Array2::ones((6, 3));
        w.row_mut(1).fill(0.0);
        w.row_mut(4).fill(0.0);
        let cfg = AslConfig::default();
        let (l_mask, g_mask) = backward(&params, x.view(), y.view(), &cfg, w.view()).unwrap();
        let keep = [0, 2, 3, 5];
        let xr = x.select(Axis(0), &keep);
        let yr = y.select(Axis(0), &keep);
        let (l_red, g_red) = backward(&params, xr.view(), yr.view(), &cfg, Array2::ones((4, 3)).view()).unwrap();
        assert!((l_mask - l_red).abs() < 1e-14);
        for (a, b) in g_mask.tensors().iter().zip(g_red.tensors()) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    /// Max relative error of the analytic gradient against central
    /// differences of the scalar reference loss.
    fn gradient_check(seed: u64, cfg: AslConfig) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, h, c) = (5, 3 + (seed % 3) as usize, 4, 3);
        let params = MlpParams::init(d, h, c, seed);
        let x = gaussian((n, d), &mut rng);
        let y = Array2::from_shape_simple_fn((n, c), || u8::from(rng.random::<f64>() < 0.4));
        let w = Array2::from_shape_simple_fn((n, c), || f64::from(u8::from(rng.random::<f64>() < 0.8)));
        let (_, g) = backward(&params, x.view(), y.view(), &cfg, w.view()).unwrap();
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for t in 0..4 {
            let len = g.tensors()[t].len();
            for k in 0..len {
                let mut plus = params.clone();
                plus.tensors_mut()[t][k] += step;
                let mut minus = params.clone();
                minus.tensors_mut()[t][k] -= step;
                let fd = (weighted_mean_loss(&plus, &x, &y, &cfg, &w)
                    - weighted_mean_loss(&minus, &x, &y, &cfg, &w))
                    / (2.0 * step);
                let an = g.tensors()[t][k];
                let rel = (fd - an).abs() / (fd.abs().max(an.abs()).max(1e-6));
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, cfg) in [
            (1, AslConfig::bce()),
            (2, AslConfig::default()),
            (3, AslConfig { gamma_pos: 1.0, gamma_neg: 2.0, margin: 0.1 }),
        ] {
            let err = gradient_check(seed, cfg);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let params = MlpParams::init(3, 5, 2, 42);
        let mut buf = Vec::new();
        params.write_checkpoint(42, &mut buf);
        assert_eq!(buf.len(), 8 * (4 + params.n_params()));
        assert_eq!(&buf[..8], &3u64.to_le_bytes());
        let (back, seed) = MlpParams::read_checkpoint(&buf).unwrap();
        assert_eq!(back, params);
        assert_eq!(seed, 42);
        assert!(MlpParams::read_checkpoint(&buf[..buf.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn outputs_in_unit_interval(seed in 0u64..1000, scale in 0.1f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = MlpParams::init(4, 8, 3, seed);
            let x = gaussian((7, 4), &mut rng) * scale;
            let p = forward(&params, x.view()).unwrap();
            prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
            prop_assert_eq!(p, forward(&params, x.view()).unwrap());
        }
    }
}
