use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fixed layer vocabulary. Spatial tensors are laid out `[channels, height, width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    /// Same padding, stride 1; `kernel` must be odd.
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize },
    Relu,
    Tanh,
    /// `[channels, height, width]` to a flat vector.
    Flatten { height: usize, width: usize, channels: usize },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Dense { inputs, outputs } => inputs > 0 && outputs > 0,
            LayerSpec::Conv2d { in_channels, out_channels, kernel } => {
                in_channels > 0 && out_channels > 0 && kernel % 2 == 1
            }
            LayerSpec::Flatten { height, width, channels } => height > 0 && width > 0 && channels > 0,
            LayerSpec::Relu | LayerSpec::Tanh => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid layer {self:?}")))
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let mismatch = |expected: Vec<usize>| Error::ShapeMismatch { expected, got: input.to_vec() };
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(mismatch(vec![inputs]));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d { in_channels, out_channels, .. } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(mismatch(vec![in_channels, 0, 0]));
                }
                Ok(vec![out_channels, input[1], input[2]])
            }
            LayerSpec::Flatten { height, width, channels } => {
                if input != [channels, height, width] {
                    return Err(mismatch(vec![channels, height, width]));
                }
                Ok(vec![channels * height * width])
            }
            LayerSpec::Relu | LayerSpec::Tanh => Ok(input.to_vec()),
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => outputs * inputs + outputs,
            LayerSpec::Conv2d { in_channels, out_channels, kernel } => {
                out_channels * in_channels * kernel * kernel + out_channels
            }
            _ => 0,
        }
    }

    /// Uniform(-a, a) weights with `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub(crate) fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        let (n_weights, fan_in, fan_out) = match *self {
            LayerSpec::Dense { inputs, outputs } => (inputs * outputs, inputs, outputs),
            LayerSpec::Conv2d { in_channels, out_channels, kernel } => {
                let k2 = kernel * kernel;
                (out_channels * in_channels * k2, in_channels * k2, out_channels * k2)
            }
            _ => return,
        };
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in &mut params[..n_weights] {
            *w = rng.random_range(-a..a);
        }
        for b in &mut params[n_weights..] {
            *b = 0.0;
        }
    }

    pub(crate) fn forward(&self, in_shape: &[usize], params: &[f64], x: &Array2<f64>) -> Array2<f64> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, b) = dense_view(params, inputs, outputs);
                let mut y = x.dot(&w.t());
                y += &b;
                y
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel } => {
                let geo = ConvGeometry::new(in_channels, out_channels, kernel, in_shape[1], in_shape[2]);
                geo.forward(params, x)
            }
            LayerSpec::Relu => x.mapv(|v| if v > 0.0 { v } else { 0.0 }),
            LayerSpec::Tanh => x.mapv(f64::tanh),
            LayerSpec::Flatten { .. } => x.clone(),
        }
    }

    /// Returns the input gradient and accumulates parameter gradients into `dparams`.
    pub(crate) fn backward(
        &self,
        in_shape: &[usize],
        params: &[f64],
        x: &Array2<f64>,
        y: &Array2<f64>,
        dy: &Array2<f64>,
        dparams: &mut [f64],
    ) -> Array2<f64> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, _) = dense_view(params, inputs, outputs);
                let (dw_slice, db_slice) = dparams.split_at_mut(inputs * outputs);
                let mut dw = ArrayViewMut2::from_shape((outputs, inputs), dw_slice).unwrap();
                general_mat_mul(1.0, &dy.t(), x, 1.0, &mut dw);
                for (db, col) in db_slice.iter_mut().zip(dy.axis_iter(Axis(1))) {
                    *db += col.sum();
                }
                dy.dot(&w)
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel } => {
                let geo = ConvGeometry::new(in_channels, out_channels, kernel, in_shape[1], in_shape[2]);
                geo.backward(params, x, dy, dparams)
            }
            LayerSpec::Relu => {
                let mut dx = dy.clone();
                dx.zip_mut_with(x, |d, &xi| {
                    if xi <= 0.0 {
                        *d = 0.0
                    }
                });
                dx
            }
            LayerSpec::Tanh => {
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |d, &yi| *d *= 1.0 - yi * yi);
                dx
            }
            LayerSpec::Flatten { .. } => dy.clone(),
        }
    }
}

fn dense_view(params: &[f64], inputs: usize, outputs: usize) -> (ArrayView2<'_, f64>, ndarray::ArrayView1<'_, f64>) {
    let (w, b) = params.split_at(inputs * outputs);
    (
        ArrayView2::from_shape((outputs, inputs), w).unwrap(),
        ndarray::ArrayView1::from(&b[..outputs]),
    )
}

/// Same-padding stride-1 convolution through an im2col matrix per sample.
struct ConvGeometry {
    cin: usize,
    cout: usize,
    k: usize,
    h: usize,
    w: usize,
}

impl ConvGeometry {
    fn new(cin: usize, cout: usize, k: usize, h: usize, w: usize) -> Self {
        Self { cin, cout, k, h, w }
    }

    fn n_weights(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn weights<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.cout, self.cin * self.k * self.k), &params[..self.n_weights()]).unwrap()
    }

    fn im2col(&self, x: &[f64]) -> Array2<f64> {
        let (k, h, w) = (self.k, self.h, self.w);
        let pad = (k / 2) as isize;
        let mut cols = Array2::zeros((self.cin * k * k, h * w));
        for c in 0..self.cin {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    for r in 0..h {
                        let sr = r as isize + ki as isize - pad;
                        if sr < 0 || sr >= h as isize {
                            continue;
                        }
                        for q in 0..w {
                            let sq = q as isize + kj as isize - pad;
                            if sq < 0 || sq >= w as isize {
                                continue;
                            }
                            cols[(row, r * w + q)] = x[(c * h + sr as usize) * w + sq as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im_add(&self, cols: &Array2<f64>, dx: &mut [f64]) {
        let (k, h, w) = (self.k, self.h, self.w);
        let pad = (k / 2) as isize;
        for c in 0..self.cin {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    for r in 0..h {
                        let sr = r as isize + ki as isize - pad;
                        if sr < 0 || sr >= h as isize {
                            continue;
                        }
                        for q in 0..w {
                            let sq = q as isize + kj as isize - pad;
                            if sq < 0 || sq >= w as isize {
                                continue;
                            }
                            dx[(c * h + sr as usize) * w + sq as usize] += cols[(row, r * w + q)];
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, params: &[f64], x: &Array2<f64>) -> Array2<f64> {
        let hw = self.h * self.w;
        let wm = self.weights(params);
        let bias = &params[self.n_weights()..];
        let mut y = Array2::zeros((x.nrows(), self.cout * hw));
        for (xs, mut ys) in x.rows().into_iter().zip(y.rows_mut()) {
            let cols = self.im2col(xs.as_slice().unwrap());
            let out = wm.dot(&cols);
            let ys = ys.as_slice_mut().unwrap();
            for o in 0..self.cout {
                for p in 0..hw {
                    ys[o * hw + p] = out[(o, p)] + bias[o];
                }
            }
        }
        y
    }

    fn backward(&self, params: &[f64], x: &Array2<f64>, dy: &Array2<f64>, dparams: &mut [f64]) -> Array2<f64> {
        let hw = self.h * self.w;
        let nw = self.n_weights();
        let wm = self.weights(params);
        let mut dx = Array2::zeros(x.raw_dim());
        let (dw_slice, db_slice) = dparams.split_at_mut(nw);
        let mut dw = ArrayViewMut2::from_shape((self.cout, self.cin * self.k * self.k), dw_slice).unwrap();
        for ((xs, dys), mut dxs) in x.rows().into_iter().zip(dy.rows()).zip(dx.rows_mut()) {
            let cols = self.im2col(xs.as_slice().unwrap());
            let dys = ArrayView2::from_shape((self.cout, hw), dys.as_slice().unwrap()).unwrap();
            general_mat_mul(1.0, &dys, &cols.t(), 1.0, &mut dw);
            for (o, db) in db_slice.iter_mut().enumerate() {
                *db += dys.row(o).sum();
            }
            let dcols = wm.t().dot(&dys);
            self.col2im_add(&dcols, dxs.as_slice_mut().unwrap());
        }
        dx
    }
}
