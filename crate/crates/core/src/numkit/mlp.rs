//! Dense multi-layer perceptron with hand-written reverse mode.
//!
//! Hidden layers use ReLU, the output layer is affine. Weights are stored as
//! `in_dim x out_dim` so a batch `X` (rows are samples) maps to `X W + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Linear>,
}

/// Gradients laid out exactly like the parameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `inputs[l]` is the input of layer `l` (post-ReLU for `l > 0`).
    inputs: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
        return Err(Error::contract(format!(
            "layer dims must have at least two positive entries, got {dims:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// Uniform fan-in initialisation, `U(-1/sqrt(in), 1/sqrt(in))` for weights and biases.
    pub fn new(dims: &[usize], rng: &mut Rng) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Linear {
                    weight: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..bound)),
                    bias: Array1::from_shape_fn(w[1], |_| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Linear {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        let mut dims = Vec::with_capacity(layers.len() + 1);
        for (i, l) in layers.iter().enumerate() {
            let (i_dim, o_dim) = l.weight.dim();
            if l.bias.len() != o_dim {
                return Err(Error::contract(format!("layer {i}: bias length {} != {o_dim}", l.bias.len())));
            }
            match dims.last() {
                None => dims.push(i_dim),
                Some(&prev) if prev != i_dim => {
                    return Err(Error::contract(format!("layer {i}: input {i_dim} != previous output {prev}")))
                }
                _ => {}
            }
            dims.push(o_dim);
        }
        check_dims(&dims)?;
        Ok(Self { dims, layers })
    }

    /// Scales the output layer, used to start policy heads near zero.
    pub fn scale_output_layer(&mut self, factor: f64) {
        if let Some(last) = self.layers.last_mut() {
            last.weight *= factor;
            last.bias *= factor;
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters as flat slices in `[w0, b0, w1, b1, ...]` order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// `self <- (1 - rho) * self + rho * source`.
    pub fn soft_update_from(&mut self, source: &Mlp, rho: f64) {
        debug_assert_eq!(self.dims, source.dims);
        for (dst, src) in self.param_slices_mut().into_iter().zip(source.param_slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (1.0 - rho) * *d + rho * s;
            }
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::contract(format!(
                "input dimension {cols} does not match network input {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let mut h = Array1::from(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        Ok(h.to_vec())
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut h: Option<Array2<f64>> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = match &h {
                None => x.dot(&layer.weight),
                Some(prev) => prev.dot(&layer.weight),
            };
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = Some(z);
        }
        Ok(h.unwrap())
    }

    pub fn forward_tape(&self, x: Array2<f64>) -> Result<Tape> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = z;
        }
        Ok(Tape { inputs, output: h })
    }

    /// Reverse pass. `upstream` is dLoss/dOutput for every row of the tape.
    /// Returns parameter gradients and dLoss/dInput.
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if upstream.dim() != tape.output.dim() {
            return Err(Error::contract(format!(
                "upstream gradient shape {:?} does not match output shape {:?}",
                upstream.dim(),
                tape.output.dim()
            )));
        }
        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = upstream.to_owned();
        for l in (0..n).rev() {
            let input = &tape.inputs[l];
            gw.push(input.t().dot(&delta).as_standard_layout().into_owned());
            gb.push(delta.sum_axis(Axis(0)));
            let mut dx = delta.dot(&self.layers[l].weight.t());
            if l > 0 {
                dx.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = dx;
        }
        gw.reverse();
        gb.reverse();
        Ok((MlpGrads { weights: gw, biases: gb }, delta))
    }

    /// dLoss/dInput only, skipping parameter gradients.
    pub fn input_grad(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<Array2<f64>> {
        if upstream.dim() != tape.output.dim() {
            return Err(Error::contract("upstream gradient shape does not match output"));
        }
        let mut delta = upstream.to_owned();
        for l in (0..self.layers.len()).rev() {
            let mut dx = delta.dot(&self.layers[l].weight.t());
            if l > 0 {
                dx.zip_mut_with(&tape.inputs[l], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// Single-sample convenience wrapper around [`Mlp::forward_tape`] + [`Mlp::backward`].
    pub fn backward_single(&self, x: &[f64], upstream: &[f64]) -> Result<MlpGrads> {
        self.check_input(x.len())?;
        if upstream.len() != self.output_dim() {
            return Err(Error::contract(format!(
                "upstream gradient length {} does not match output {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let tape = self.forward_tape(Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap())?;
        let up = Array2::from_shape_vec((1, upstream.len()), upstream.to_vec()).unwrap();
        Ok(self.backward(&tape, up.view())?.0)
    }
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weight.dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice().expect("standard layout"), b.as_slice().expect("standard layout")])
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }
}
