use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Softplus,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Softplus => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        [Activation::Identity, Activation::Relu, Activation::Tanh, Activation::Softplus]
            .into_iter()
            .find(|a| a.tag() == tag)
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - pre.tanh().powi(2),
            Activation::Softplus => sigmoid(pre),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One affine layer: `out = act(x * W + b)` with `W` shaped `[in x out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Fully connected feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Per-layer inputs and pre-activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    /// Pre-activation matrices, one per layer.
    pub fn pre_activations(&self) -> &[DMatrix<f64>] {
        &self.pre
    }
}

/// Gradients laid out like [`DenseNet::flat_params`].
#[derive(Debug, Clone)]
pub struct Backward {
    pub params: Vec<f64>,
    pub input: DMatrix<f64>,
}

impl DenseNet {
    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last layer
    /// uses `output`. Relu layers get He-uniform weights, everything else
    /// Glorot-uniform; biases start at zero.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut ChaCha8Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer sizes {sizes:?}")));
        }
        if !matches!(hidden, Activation::Relu | Activation::Tanh) {
            return Err(Error::InvalidArgument("hidden activation must be relu or tanh".into()));
        }
        if !matches!(output, Activation::Identity | Activation::Softplus) {
            return Err(Error::InvalidArgument("output activation must be identity or softplus".into()));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let activation = if i + 1 == n { output } else { hidden };
                let limit = match activation {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                let weights = DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit));
                Dense { weights, bias: DVector::zeros(fan_out), activation }
            })
            .collect();
        Ok(DenseNet { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::DimensionMismatch(format!(
                    "layer output {} does not feed layer input {}",
                    w[0].outputs(),
                    w[1].inputs()
                )));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.outputs()) {
            return Err(Error::DimensionMismatch("bias length differs from layer width".into()));
        }
        if layers.iter().any(|l| l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(DenseNet { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_size())
            .chain(self.layers.iter().map(Dense::outputs))
            .collect()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn forward(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.forward_cached(batch).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, batch: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache)> {
        if batch.ncols() != self.input_size() {
            return Err(Error::DimensionMismatch(format!(
                "batch width {} but network expects {}",
                batch.ncols(),
                self.input_size()
            )));
        }
        let mut cache = ForwardCache { inputs: Vec::with_capacity(self.layers.len()), pre: Vec::with_capacity(self.layers.len()) };
        let mut x = batch.clone();
        for layer in &self.layers {
            let mut z = &x * &layer.weights;
            for mut row in z.row_iter_mut() {
                row += layer.bias.transpose();
            }
            let a = z.map(|v| layer.activation.apply(v));
            cache.inputs.push(x);
            cache.pre.push(z);
            x = a;
        }
        Ok((x, cache))
    }

    /// Backpropagates `upstream = dL/d(output)` through a cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, upstream: &DMatrix<f64>) -> Result<Backward> {
        let last = cache.pre.last().ok_or_else(|| Error::InvalidArgument("empty cache".into()))?;
        if upstream.shape() != last.shape() || cache.pre.len() != self.layers.len() {
            return Err(Error::DimensionMismatch(format!(
                "upstream gradient {:?} vs output {:?}",
                upstream.shape(),
                last.shape()
            )));
        }
        let mut blocks: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        let mut grad = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[i];
            let dz = grad.zip_map(pre, |g, p| g * layer.activation.derivative(p));
            let dw = cache.inputs[i].transpose() * &dz;
            let db = DVector::from_iterator(dz.ncols(), dz.column_iter().map(|c| c.sum()));
            grad = &dz * layer.weights.transpose();
            blocks.push((dw, db));
        }
        blocks.reverse();
        let mut params = Vec::with_capacity(self.param_count());
        for (dw, db) in &blocks {
            push_row_major(&mut params, dw);
            params.extend(db.iter());
        }
        Ok(Backward { params, input: grad })
    }

    /// Parameters in declaration order: per layer, weights row-major
    /// (`[in x out]`) then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            push_row_major(&mut out, &l.weights);
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters supplied, network has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let (r, c) = l.weights.shape();
            for i in 0..r {
                for j in 0..c {
                    l.weights[(i, j)] = flat[off];
                    off += 1;
                }
            }
            for b in l.bias.iter_mut() {
                *b = flat[off];
                off += 1;
            }
        }
        Ok(())
    }
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_differences, max_relative_error};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = DenseNet::from_layers(vec![Dense {
            weights: DMatrix::identity(3, 3),
            bias: DVector::zeros(3),
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, -7.0]);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn relu_blocks_negative_and_softplus_at_zero() {
        let net = DenseNet::from_layers(vec![
            Dense { weights: DMatrix::identity(1, 1), bias: DVector::zeros(1), activation: Activation::Relu },
            Dense { weights: DMatrix::identity(1, 1), bias: DVector::zeros(1), activation: Activation::Softplus },
        ])
        .unwrap();
        let out = net.forward(&DMatrix::from_element(1, 1, -1.0)).unwrap();
        assert!((out[(0, 0)] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softplus_output_strictly_positive() {
        let net = DenseNet::new(&[4, 8, 3], Activation::Tanh, Activation::Softplus, &mut rng(1)).unwrap();
        let x = DMatrix::from_fn(10, 4, |i, j| (i as f64 - 5.0) * 10.0 + j as f64);
        assert!(net.forward(&x).unwrap().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn dimension_mismatch_errors() {
        let net = DenseNet::new(&[4, 2], Activation::Relu, Activation::Identity, &mut rng(1)).unwrap();
        assert!(net.forward(&DMatrix::zeros(2, 5)).is_err());
        let (_, cache) = net.forward_cached(&DMatrix::zeros(2, 4)).unwrap();
        assert!(net.backward(&cache, &DMatrix::zeros(2, 3)).is_err());
        let bad = vec![
            Dense { weights: DMatrix::zeros(2, 3), bias: DVector::zeros(3), activation: Activation::Relu },
            Dense { weights: DMatrix::zeros(4, 1), bias: DVector::zeros(1), activation: Activation::Identity },
        ];
        assert!(DenseNet::from_layers(bad).is_err());
    }

    #[test]
    fn linear_gradient_is_input() {
        let net = DenseNet::from_layers(vec![Dense {
            weights: DMatrix::from_row_slice(3, 1, &[0.3, -0.2, 0.9]),
            bias: DVector::zeros(1),
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = DMatrix::from_row_slice(1, 3, &[1.5, -2.0, 4.0]);
        let (_, cache) = net.forward_cached(&x).unwrap();
        let g = net.backward(&cache, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(&g.params[..3], &[1.5, -2.0, 4.0]);
        assert_eq!(g.params[3], 1.0);
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let net = DenseNet::new(&[5, 7, 3], Activation::Tanh, Activation::Identity, &mut rng(2)).unwrap();
        let x = DMatrix::from_fn(4, 5, |i, j| (i * 5 + j) as f64 * 0.1);
        let (_, cache) = net.forward_cached(&x).unwrap();
        let g = net.backward(&cache, &DMatrix::zeros(4, 3)).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flat_params_round_trip() {
        let mut net = DenseNet::new(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng(5)).unwrap();
        let p = net.flat_params();
        assert_eq!(p.len(), 3 * 4 + 4 + 4 * 2 + 2);
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        net.set_flat_params(&shifted).unwrap();
        assert_eq!(net.flat_params(), shifted);
    }

    #[test]
    fn batch_rows_permute_with_input() {
        let net = DenseNet::new(&[6, 9, 4], Activation::Relu, Activation::Softplus, &mut rng(8)).unwrap();
        let x = DMatrix::from_fn(5, 6, |i, j| ((i * 7 + j * 3) % 11) as f64 * 0.3 - 1.2);
        let out = net.forward(&x).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let xp = DMatrix::from_fn(5, 6, |i, j| x[(perm[i], j)]);
        let op = net.forward(&xp).unwrap();
        for i in 0..5 {
            assert_eq!(op.row(i), out.row(perm[i]));
        }
    }

    /// Loss used for the gradient matrix: sum of output * fixed weights.
    fn check_shape(sizes: &[usize], hidden: Activation, seed: u64) -> f64 {
        let mut r = rng(seed);
        let mut net = DenseNet::new(sizes, hidden, Activation::Softplus, &mut r).unwrap();
        let mut flat = net.flat_params();
        for v in flat.iter_mut() {
            *v += r.random_range(-0.1..0.1);
        }
        net.set_flat_params(&flat).unwrap();
        let b = 6;
        // Redraw the batch until every relu pre-activation sits well clear of
        // the kink, so +-h perturbations stay on one linear piece.
        let (x, cache) = loop {
            let x = DMatrix::from_fn(b, sizes[0], |_, _| r.random_range(-1.0..1.0));
            let (_, cache) = net.forward_cached(&x).unwrap();
            let margin = cache.pre[..cache.pre.len() - 1]
                .iter()
                .flat_map(|p| p.iter())
                .fold(f64::MAX, |a, v| a.min(v.abs()));
            if hidden != Activation::Relu || margin > 1e-3 {
                break (x, cache);
            }
        };
        let w = DMatrix::from_fn(b, *sizes.last().unwrap(), |_, _| r.random_range(-1.0..1.0));
        let analytic = net.backward(&cache, &w).unwrap();
        let mut probe = net.clone();
        let numeric = central_differences(&flat, 1e-5, |p| {
            probe.set_flat_params(p).unwrap();
            probe.forward(&x).unwrap().component_mul(&w).sum()
        });
        let input_numeric = central_differences(x.as_slice(), 1e-5, |xs| {
            let xm = DMatrix::from_column_slice(b, sizes[0], xs);
            net.forward(&xm).unwrap().component_mul(&w).sum()
        });
        max_relative_error(&analytic.params, &numeric)
            .max(max_relative_error(analytic.input.as_slice(), &input_numeric))
    }

    #[test]
    fn gradients_match_finite_differences_across_shapes() {
        let shapes: [&[usize]; 6] = [&[3, 2], &[4, 5, 2], &[6, 8, 8, 3], &[10, 4, 10], &[2, 16, 1], &[7, 3, 5, 4, 2]];
        for (i, s) in shapes.iter().enumerate() {
            for act in [Activation::Relu, Activation::Tanh] {
                let err = check_shape(s, act, 100 + i as u64);
                assert!(err < 1e-4, "shape {s:?} {act:?}: {err}");
            }
        }
    }
}
