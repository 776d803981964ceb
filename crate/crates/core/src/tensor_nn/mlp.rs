//! Dense tanh multilayer perceptron with explicit reverse- and forward-mode
//! derivatives.
//!
//! Weights of layer `k` live in segment `layer{k}.weight` with shape
//! `[out, in]` (row-major), biases in `layer{k}.bias`. Hidden layers use
//! `tanh`; the output layer is linear.

use std::sync::Arc;

use rand::Rng;

use super::params::{Layout, ParameterVector, Segment};
use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: ParameterVector,
    /// Flat offsets of `(weight, bias)` for each layer.
    offsets: Vec<(usize, usize)>,
}

/// Activations recorded by a forward pass: `activations[0]` is the input and
/// `activations[k + 1]` the output of layer `k`.
#[derive(Debug, Clone)]
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace always holds the input")
    }
}

fn layout_for(sizes: &[usize]) -> Result<Layout> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Config(format!(
            "layer sizes must list at least two positive sizes, got {sizes:?}"
        )));
    }
    let mut segments = Vec::with_capacity(2 * (sizes.len() - 1));
    for (k, pair) in sizes.windows(2).enumerate() {
        segments.push(Segment::new(format!("layer{k}.weight"), vec![pair[1], pair[0]]));
        segments.push(Segment::new(format!("layer{k}.bias"), vec![pair[1]]));
    }
    Layout::new(segments)
}

fn offsets_for(sizes: &[usize]) -> Vec<(usize, usize)> {
    let mut offsets = Vec::with_capacity(sizes.len() - 1);
    let mut at = 0;
    for pair in sizes.windows(2) {
        let w = at;
        at += pair[0] * pair[1];
        offsets.push((w, at));
        at += pair[1];
    }
    offsets
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        let layout = Arc::new(layout_for(sizes)?);
        Ok(Self {
            sizes: sizes.to_vec(),
            params: ParameterVector::zeros(layout),
            offsets: offsets_for(sizes),
        })
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and
    /// biases; the output layer is additionally multiplied by `output_scale`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let layers = net.num_layers();
        for k in 0..layers {
            let fan_in = net.sizes[k];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if k + 1 == layers { output_scale } else { 1.0 };
            let (w, b) = net.offsets[k];
            let end = b + net.sizes[k + 1];
            for v in &mut net.params.values_mut()[w..end] {
                *v = scale * rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    /// Wraps existing parameters; the layout must match `sizes`.
    pub fn from_params(sizes: &[usize], params: ParameterVector) -> Result<Self> {
        let layout = layout_for(sizes)?;
        if **params.layout() != layout {
            return Err(Error::Config(format!(
                "parameter layout does not match layer sizes {sizes:?}"
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
            offsets: offsets_for(sizes),
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: ParameterVector) -> Result<()> {
        if !params.same_layout(&self.params) {
            return Err(Error::Config("parameter layout mismatch".into()));
        }
        self.params = params;
        Ok(())
    }

    /// Overwrites parameters from a flat slice.
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        ensure_len("mlp parameters", self.param_count(), values.len())?;
        self.params.values_mut().copy_from_slice(values);
        Ok(())
    }

    fn affine(&self, k: usize, input: &[f64], out: &mut Vec<f64>) {
        let (w_off, b_off) = self.offsets[k];
        let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
        let p = self.params.values();
        out.clear();
        out.extend_from_slice(&p[b_off..b_off + n_out]);
        for (o, acc) in out.iter_mut().enumerate() {
            let row = &p[w_off + o * n_in..w_off + (o + 1) * n_in];
            *acc += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.activations.pop().unwrap())
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        ensure_len("mlp input", self.input_dim(), input.len())?;
        let layers = self.num_layers();
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(input.to_vec());
        for k in 0..layers {
            let mut out = Vec::with_capacity(self.sizes[k + 1]);
            self.affine(k, &activations[k], &mut out);
            if k + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(out);
        }
        Ok(Trace { activations })
    }

    /// Gradient of `output · output_grad` with respect to the parameters.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<ParameterVector> {
        let trace = self.forward_trace(input)?;
        let mut grad = self.params.zeros_like();
        self.accumulate_gradient(&trace, output_grad, grad.values_mut())?;
        Ok(grad)
    }

    /// Adds `d(output · output_grad)/dθ` into `grad`, which must be laid out
    /// like this network's parameters.
    pub fn accumulate_gradient(&self, trace: &Trace, output_grad: &[f64], grad: &mut [f64]) -> Result<()> {
        ensure_len("mlp output gradient", self.output_dim(), output_grad.len())?;
        ensure_len("mlp gradient buffer", self.param_count(), grad.len())?;
        ensure_len("mlp trace", self.num_layers() + 1, trace.activations.len())?;
        let p = self.params.values();
        let mut delta = output_grad.to_vec();
        for k in (0..self.num_layers()).rev() {
            let (w_off, b_off) = self.offsets[k];
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let input = &trace.activations[k];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[b_off + o] += d;
                let row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
            }
            if k > 0 {
                let mut prev = vec![0.0; n_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &p[w_off + o * n_in..w_off + (o + 1) * n_in];
                    prev.iter_mut().zip(row).for_each(|(acc, w)| *acc += w * d);
                }
                // tanh' = 1 - tanh^2, evaluated on the stored hidden activation.
                for (acc, a) in prev.iter_mut().zip(input) {
                    *acc *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// Forward-mode derivative: returns `(output, d output / dθ · tangent)`.
    pub fn jvp(&self, input: &[f64], tangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure_len("mlp input", self.input_dim(), input.len())?;
        ensure_len("mlp tangent", self.param_count(), tangent.len())?;
        let p = self.params.values();
        let layers = self.num_layers();
        let mut a = input.to_vec();
        let mut da = vec![0.0; input.len()];
        for k in 0..layers {
            let (w_off, b_off) = self.offsets[k];
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let mut z = Vec::with_capacity(n_out);
            self.affine(k, &a, &mut z);
            let mut dz = vec![0.0; n_out];
            for o in 0..n_out {
                let w = &p[w_off + o * n_in..w_off + (o + 1) * n_in];
                let dw = &tangent[w_off + o * n_in..w_off + (o + 1) * n_in];
                let mut acc = tangent[b_off + o];
                for i in 0..n_in {
                    acc += dw[i] * a[i] + w[i] * da[i];
                }
                dz[o] = acc;
            }
            if k + 1 < layers {
                for (zv, dzv) in z.iter_mut().zip(dz.iter_mut()) {
                    *zv = zv.tanh();
                    *dzv *= 1.0 - *zv * *zv;
                }
            }
            a = z;
            da = dz;
        }
        Ok((a, da))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(net.forward(&[0.3, -2.0, 7.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut net = Mlp::zeros(&[3, 3]).unwrap();
        let w = net.params.segment_mut("layer0.weight").unwrap();
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let x = [0.5, -1.25, 4.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn small_net_matches_hand_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[2, 3, 1], 1.0, &mut rng).unwrap();
        let w0 = net.params.segment("layer0.weight").unwrap();
        let b0 = net.params.segment("layer0.bias").unwrap();
        let w1 = net.params.segment("layer1.weight").unwrap();
        let b1 = net.params.segment("layer1.bias").unwrap();
        let x = [1.0, 1.0];
        let mut expected = b1[0];
        for h in 0..3 {
            let z = w0[2 * h] * x[0] + w0[2 * h + 1] * x[1] + b0[h];
            expected += w1[h] * z.tanh();
        }
        let y = net.forward(&x).unwrap();
        assert!((y[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn input_shape_error() {
        let net = Mlp::zeros(&[2, 1]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[4, 8, 2], 1.0, &mut rng).unwrap();
        let g = net.backward(&[0.1, 0.2, 0.3, 0.4], &[0.0, 0.0]).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 2], 1.0, &mut rng).unwrap();
        let x = [1.5, -0.5, 2.0];
        let g = [0.25, -3.0];
        let grad = net.backward(&x, &g).unwrap();
        let gw = grad.segment("layer0.weight").unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(gw[o * 3 + i], g[o] * x[i]);
            }
        }
        assert_eq!(grad.segment("layer0.bias").unwrap(), &g);
    }

    #[test]
    fn init_respects_fan_in_bound_and_output_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::new(&[16, 4, 2], 0.01, &mut rng).unwrap();
        let b0 = 0.25;
        assert!(net.params.segment("layer0.weight").unwrap().iter().all(|w| w.abs() <= b0));
        let b1 = 0.01 / 2.0;
        assert!(net.params.segment("layer1.weight").unwrap().iter().all(|w| w.abs() <= b1));
    }

    #[test]
    fn jvp_matches_backward_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[3, 6, 5, 2], 1.0, &mut rng).unwrap();
        let x = [0.3, -0.7, 1.1];
        let t: Vec<f64> = (0..net.param_count()).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5).collect();
        let u = [0.8, -1.3];
        let (_, dy) = net.jvp(&x, &t).unwrap();
        let g = net.backward(&x, &u).unwrap();
        let lhs: f64 = dy.iter().zip(&u).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.values().iter().zip(&t).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }
}
