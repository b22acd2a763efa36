use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::layers::LayerSpec;
use super::tensor::Tensor;
use crate::{rng, Error, Result};

/// A layer stack with a flat parameter vector.
///
/// Predictions are the last layer's output multiplied by the fixed
/// `output_scale`, which lets the trainable part work in O(1) units while
/// inputs and predictions stay in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    /// Input shape of every layer, plus the final output shape.
    shapes: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    output_scale: f64,
}

impl Network {
    /// Builds the stack and initializes parameters from `seed`.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut net = Self::from_parts(input_shape, layers, None, 1.0)?;
        let mut r = rng::stream(rng::tagged(seed, "init"), 0);
        for (i, layer) in net.layers.iter().enumerate() {
            let (a, b) = (net.offsets[i], net.offsets[i + 1]);
            layer.init(&mut net.params[a..b], &mut r);
        }
        Ok(net)
    }

    /// Rebuilds a network from stored parts; `params = None` means all zeros.
    pub fn from_parts(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        params: Option<Vec<f64>>,
        output_scale: f64,
    ) -> Result<Self> {
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter(format!("bad input shape {input_shape:?}")));
        }
        if !(output_scale > 0.0 && output_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("output scale must be positive, got {output_scale}")));
        }
        let mut shapes = vec![input_shape];
        let mut offsets = vec![0];
        for layer in &layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
            offsets.push(offsets.last().unwrap() + layer.param_count());
        }
        let n = *offsets.last().unwrap();
        let params = match params {
            Some(p) if p.len() != n => return Err(Error::LengthMismatch { expected: n, got: p.len() }),
            Some(p) => p,
            None => vec![0.0; n],
        };
        Ok(Self {
            layers,
            shapes,
            offsets,
            params,
            output_scale,
        })
    }

    /// Dense surrogate for an `nx x nx` field: optional conv front end
    /// (`conv2d(1 -> c, 3) -> relu -> flatten`), then `hidden` relu layers and a
    /// linear read-out of `nx * nx` values.
    pub fn surrogate(nx: usize, conv_channels: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let d = nx * nx;
        let mut layers = Vec::new();
        let (input_shape, mut width) = if conv_channels > 0 {
            layers.push(LayerSpec::Conv2d { in_channels: 1, out_channels: conv_channels, kernel: 3 });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::Flatten { height: nx, width: nx, channels: conv_channels });
            (vec![1, nx, nx], conv_channels * d)
        } else {
            (vec![d], d)
        };
        for &h in hidden {
            layers.push(LayerSpec::Dense { inputs: width, outputs: h });
            layers.push(LayerSpec::Relu);
            width = h;
        }
        layers.push(LayerSpec::Dense { inputs: width, outputs: d });
        Self::new(input_shape, layers, seed)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn input_len(&self) -> usize {
        self.shapes[0].iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn set_output_scale(&mut self, s: f64) -> Result<()> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!("output scale must be positive, got {s}")));
        }
        self.output_scale = s;
        Ok(())
    }

    /// SHA-256 over layer layout, scale and parameter bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}|{:?}|", self.shapes, self.layers).as_bytes());
        h.update(self.output_scale.to_le_bytes());
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn check_batch(&self, x: &Array2<f64>, expected: usize) -> Result<()> {
        if x.ncols() != expected {
            return Err(Error::ShapeMismatch {
                expected: vec![x.nrows(), expected],
                got: vec![x.nrows(), x.ncols()],
            });
        }
        Ok(())
    }

    /// Forward pass keeping every layer's input (the last entry is the raw output).
    fn forward_trace(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let p = &self.params[self.offsets[i]..self.offsets[i + 1]];
            let next = layer.forward(&self.shapes[i], p, acts.last().unwrap());
            acts.push(next);
        }
        acts
    }
}

/// Batched prediction; rows are flattened samples.
pub fn forward_batch(net: &Network, x: &Array2<f64>) -> Result<Array2<f64>> {
    net.check_batch(x, net.input_len())?;
    let mut out = net.forward_trace(x).pop().unwrap();
    if net.output_scale != 1.0 {
        out *= net.output_scale;
    }
    Ok(out)
}

pub fn forward(net: &Network, x: &Tensor) -> Result<Tensor> {
    if x.shape() != net.input_shape() {
        return Err(Error::ShapeMismatch {
            expected: net.input_shape().to_vec(),
            got: x.shape().to_vec(),
        });
    }
    let xb = Array2::from_shape_vec((1, x.len()), x.data().to_vec()).unwrap();
    let y = forward_batch(net, &xb)?;
    Tensor::new(net.output_shape().to_vec(), y.into_raw_vec_and_offset().0)
}

/// Mean over all entries of the squared differences.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.same_shape(target)?;
    let n = pred.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub param_grad: Vec<f64>,
    pub input_grad: Tensor,
}

#[derive(Debug, Clone)]
pub struct BatchGrad {
    /// Batch MSE: mean over samples and output entries.
    pub loss: f64,
    /// Per-sample MSE.
    pub sample_loss: Vec<f64>,
    /// Gradient of the batch MSE with respect to the parameters.
    pub param_grad: Vec<f64>,
    /// Row `i` is the gradient of sample `i`'s own MSE with respect to its input.
    pub input_grad: Array2<f64>,
}

/// Exact reverse-mode gradients of the MSE over a batch.
pub fn backward_batch(net: &Network, x: &Array2<f64>, y: &Array2<f64>) -> Result<BatchGrad> {
    net.check_batch(x, net.input_len())?;
    net.check_batch(y, net.output_len())?;
    if x.nrows() != y.nrows() || x.nrows() == 0 {
        return Err(Error::ShapeMismatch {
            expected: vec![x.nrows(), net.output_len()],
            got: vec![y.nrows(), y.ncols()],
        });
    }
    let b = x.nrows() as f64;
    let d = net.output_len() as f64;
    let s = net.output_scale;
    let acts = net.forward_trace(x);
    let raw = acts.last().unwrap();

    let mut diff = raw * s;
    diff -= y;
    let sample_loss: Vec<f64> = diff.rows().into_iter().map(|r| r.dot(&r) / d).collect();
    let loss = sample_loss.iter().sum::<f64>() / b;

    // d(batch mse)/d(raw output)
    let mut grad = diff * (2.0 * s / (b * d));
    let mut param_grad = vec![0.0; net.params.len()];
    for i in (0..net.layers.len()).rev() {
        let (lo, hi) = (net.offsets[i], net.offsets[i + 1]);
        grad = net.layers[i].backward(
            &net.shapes[i],
            &net.params[lo..hi],
            &acts[i],
            &acts[i + 1],
            &grad,
            &mut param_grad[lo..hi],
        );
    }
    // rows of the batch-mean gradient carry a 1/b factor
    grad *= b;
    Ok(BatchGrad {
        loss,
        sample_loss,
        param_grad,
        input_grad: grad,
    })
}

pub fn backward(net: &Network, x: &Tensor, y: &Tensor) -> Result<Gradients> {
    if x.shape() != net.input_shape() {
        return Err(Error::ShapeMismatch {
            expected: net.input_shape().to_vec(),
            got: x.shape().to_vec(),
        });
    }
    if y.shape() != net.output_shape() {
        return Err(Error::ShapeMismatch {
            expected: net.output_shape().to_vec(),
            got: y.shape().to_vec(),
        });
    }
    let xb = Array2::from_shape_vec((1, x.len()), x.data().to_vec()).unwrap();
    let yb = Array2::from_shape_vec((1, y.len()), y.data().to_vec()).unwrap();
    let g = backward_batch(net, &xb, &yb)?;
    Ok(Gradients {
        loss: g.loss,
        param_grad: g.param_grad,
        input_grad: Tensor::new(x.shape().to_vec(), g.input_grad.into_raw_vec_and_offset().0)?,
    })
}
