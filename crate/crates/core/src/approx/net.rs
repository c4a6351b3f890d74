//! Dense feedforward networks over a flat parameter vector.
//!
//! Parameters are laid out layer by layer; each layer stores its weight
//! matrix (`n_out x n_in`, row-major) followed by its bias vector. Batched
//! evaluation goes through `ndarray` so the heavy lifting lands in GEMM.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and the output `y`.
    /// The ReLU subgradient at exactly zero is zero.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Intermediate values from a batched forward pass, needed for backprop.
#[derive(Clone, Debug)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }
}

/// Gradients of a scalar function of the network output.
#[derive(Clone, Debug, PartialEq)]
pub struct NetGradient {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl DenseNet {
    pub fn param_count(layer_sizes: &[usize]) -> usize {
        layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// A network with all parameters set to zero.
    pub fn zeros(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must hold at least two positive entries, got {layer_sizes:?}"
            )));
        }
        check_dim("activations", layer_sizes.len() - 1, activations.len())?;
        let n = Self::param_count(&layer_sizes);
        Ok(Self {
            layer_sizes,
            activations,
            params: vec![0.0; n],
        })
    }

    pub fn from_params(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activations)?;
        check_dim("params", net.params.len(), params.len())?;
        net.params = params;
        Ok(net)
    }

    /// Multilayer perceptron with a shared hidden activation, initialized with
    /// uniform fan-in scaling `U(-1/sqrt(n_in), 1/sqrt(n_in))` for weights and biases.
    pub fn mlp<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_activation; hidden.len()];
        acts.push(output_activation);
        let mut net = Self::zeros(sizes, acts)?;
        net.init_uniform(rng);
        Ok(net)
    }

    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            let len = n_in * n_out + n_out;
            for p in &mut self.params[offset..offset + len] {
                *p = rng.gen_range(-bound..bound);
            }
            offset += len;
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated at construction")
    }

    pub fn same_shape(&self, other: &DenseNet) -> bool {
        self.layer_sizes == other.layer_sizes && self.activations == other.activations
    }

    fn layer(&self, idx: usize, offset: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (n_in, n_out) = (self.layer_sizes[idx], self.layer_sizes[idx + 1]);
        let w = ArrayView2::from_shape((n_out, n_in), &self.params[offset..offset + n_in * n_out])
            .expect("layout checked at construction");
        let b = ArrayView1::from(&self.params[offset + n_in * n_out..offset + n_in * n_out + n_out]);
        (w, b)
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.activations.len());
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        offsets
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Tape> {
        check_dim("network input", self.input_dim(), x.ncols())?;
        let offsets = self.layer_offsets();
        let mut inputs = Vec::with_capacity(offsets.len());
        let mut pre = Vec::with_capacity(offsets.len());
        let mut current = x.to_owned();
        for (idx, &offset) in offsets.iter().enumerate() {
            let (w, b) = self.layer(idx, offset);
            let mut z = current.dot(&w.t());
            z += &b;
            let act = self.activations[idx];
            let y = z.mapv(|v| act.apply(v));
            inputs.push(current);
            pre.push(z);
            current = y;
        }
        Ok(Tape {
            inputs,
            pre,
            output: current,
        })
    }

    /// Output-only batched evaluation.
    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dim("network input", self.input_dim(), x.ncols())?;
        let mut current = x.to_owned();
        for (idx, &offset) in self.layer_offsets().iter().enumerate() {
            let (w, b) = self.layer(idx, offset);
            let mut z = current.dot(&w.t());
            z += &b;
            let act = self.activations[idx];
            z.mapv_inplace(|v| act.apply(v));
            current = z;
        }
        Ok(current)
    }

    /// Reverse-mode pass. `upstream` is dL/d(output) per sample. Parameter
    /// gradients are accumulated into `param_grad` when given; the returned
    /// matrix is dL/d(input).
    pub fn backward_batch(
        &self,
        tape: &Tape,
        upstream: ArrayView2<'_, f64>,
        mut param_grad: Option<&mut [f64]>,
    ) -> Result<Array2<f64>> {
        check_dim("upstream gradient", self.output_dim(), upstream.ncols())?;
        check_dim("upstream batch", tape.output.nrows(), upstream.nrows())?;
        if let Some(g) = param_grad.as_deref() {
            check_dim("parameter gradient", self.params.len(), g.len())?;
        }
        let offsets = self.layer_offsets();
        let mut delta = upstream.to_owned();
        for idx in (0..offsets.len()).rev() {
            let act = self.activations[idx];
            let z = &tape.pre[idx];
            let y = if idx + 1 == offsets.len() {
                &tape.output
            } else {
                &tape.inputs[idx + 1]
            };
            if act != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(z)
                    .and(y)
                    .for_each(|d, &zv, &yv| *d *= act.derivative(zv, yv));
            }
            let (n_in, n_out) = (self.layer_sizes[idx], self.layer_sizes[idx + 1]);
            let offset = offsets[idx];
            if let Some(g) = param_grad.as_deref_mut() {
                let (gw, gb) = g[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                let mut gw = ArrayViewMut2::from_shape((n_out, n_in), gw)
                    .expect("layout checked at construction");
                general_mat_mul(1.0, &delta.t(), &tape.inputs[idx], 1.0, &mut gw);
                for (b, s) in gb.iter_mut().zip(delta.sum_axis(Axis(0)).iter()) {
                    *b += s;
                }
            }
            let (w, _) = self.layer(idx, offset);
            delta = delta.dot(&w);
        }
        Ok(delta)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), x.len())?;
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.predict_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// Gradients of `upstream . net(x)` with respect to parameters and input.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<NetGradient> {
        check_dim("network input", self.input_dim(), x.len())?;
        check_dim("upstream gradient", self.output_dim(), upstream.len())?;
        let xv = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let uv = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row vector");
        let tape = self.forward_batch(xv)?;
        let mut params = vec![0.0; self.params.len()];
        let input = self.backward_batch(&tape, uv, Some(&mut params))?;
        Ok(NetGradient {
            params,
            input: input.into_raw_vec_and_offset().0,
        })
    }

    /// Polyak blend `self <- (1 - tau) * self + tau * source`.
    pub fn track(&mut self, source: &DenseNet, tau: f64) -> Result<()> {
        if !self.same_shape(source) {
            return Err(Error::Config("polyak update between mismatched networks".into()));
        }
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = (1.0 - tau) * *t + tau * s;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Per-neuron loop evaluation, written independently of the GEMM path.
    fn reference_forward(net: &DenseNet, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let mut offset = 0;
        for (l, w) in net.layer_sizes().windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let p = net.params();
            let mut next = vec![0.0; n_out];
            for (j, out) in next.iter_mut().enumerate() {
                let mut acc = p[offset + n_in * n_out + j];
                for (i, ai) in a.iter().enumerate() {
                    acc += p[offset + j * n_in + i] * ai;
                }
                *out = match net.activations()[l] {
                    Activation::Relu => acc.max(0.0),
                    Activation::Tanh => acc.tanh(),
                    Activation::Identity => acc,
                };
            }
            offset += n_in * n_out + n_out;
            a = next;
        }
        a
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::zeros(vec![3, 5, 2], vec![Activation::Tanh, Activation::Identity]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut params = vec![0.0; 3 * 3 + 3];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let net = DenseNet::from_params(vec![3, 3], vec![Activation::Identity], params).unwrap();
        let x = [0.3, -1.2, 4.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
        let g = net.backward(&x, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(g.input, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn gemm_path_matches_neuron_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for seed in 0..20 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let net = DenseNet::mlp(4, &[7, 5], 3, Activation::Tanh, Activation::Identity, &mut r).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let fast = net.forward(&x).unwrap();
            let slow = reference_forward(&net, &x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        // single unit with pre-activation exactly zero
        let net = DenseNet::from_params(vec![1, 1], vec![Activation::Relu], vec![1.0, 0.0]).unwrap();
        let g = net.backward(&[0.0], &[1.0]).unwrap();
        assert_eq!(g.input, vec![0.0]);
        assert_eq!(g.params, vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = DenseNet::zeros(vec![2, 1], vec![Activation::Identity]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
        assert!(net.backward(&[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn param_count_matches_layout() {
        assert_eq!(DenseNet::param_count(&[4, 256, 256, 1]), 4 * 256 + 256 + 256 * 256 + 256 + 256 + 1);
    }

    #[test]
    fn track_moves_toward_source() {
        let a = DenseNet::from_params(vec![1, 1], vec![Activation::Identity], vec![0.0, 0.0]).unwrap();
        let b = DenseNet::from_params(vec![1, 1], vec![Activation::Identity], vec![1.0, 2.0]).unwrap();
        let mut t = a.clone();
        t.track(&b, 0.005).unwrap();
        assert!((t.params()[0] - 0.005).abs() < 1e-15);
        assert!((t.params()[1] - 0.010).abs() < 1e-15);
    }
}
