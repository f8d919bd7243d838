use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Sigmoid,
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Relu => 1,
            Activation::Linear => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Symmetric MLP autoencoder stored as one flat parameter vector.
///
/// Layer `l` maps `dims[l] -> dims[l + 1]`; its weights are stored row-major
/// as `[dims[l + 1] x dims[l]]`, followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Per-layer outputs of a forward pass. `outputs[0]` is the input batch.
#[derive(Debug, Clone)]
pub struct Forward {
    pre: Vec<Matrix>,
    outputs: Vec<Matrix>,
    bottleneck: usize,
}

impl Forward {
    pub fn reconstruction(&self) -> &Matrix {
        self.outputs.last().expect("at least one layer")
    }

    pub fn embedding(&self) -> &Matrix {
        &self.outputs[self.bottleneck]
    }
}

pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 3 || dims.len().is_multiple_of(2) {
        return Err(Error::arg(format!(
            "autoencoder needs an odd number of at least 3 layer sizes, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::arg("layer sizes must be positive"));
    }
    if dims.iter().ne(dims.iter().rev()) {
        return Err(Error::arg(format!("layer sizes {dims:?} are not symmetric")));
    }
    Ok(())
}

impl Model {
    /// Xavier-uniform weights, zero biases, the given activation on every
    /// hidden layer and a linear output.
    pub fn init(dims: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        check_dims(dims)?;
        let mut activations = vec![hidden; dims.len() - 2];
        activations.push(Activation::Linear);
        let mut rng = rng::stream(seed, &[rng::label("init")]);
        let mut params = Vec::with_capacity(param_count(dims));
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            dims: dims.to_vec(),
            activations,
            params,
        })
    }

    /// One activation per layer transition; the last is normally `Linear`.
    pub fn from_parts(dims: &[usize], activations: Vec<Activation>, params: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        if activations.len() != dims.len() - 1 {
            return Err(Error::arg(format!(
                "{} activations for {} layers",
                activations.len(),
                dims.len() - 1
            )));
        }
        if params.len() != param_count(dims) {
            return Err(Error::arg(format!(
                "{} parameters for dims {dims:?}, expected {}",
                params.len(),
                param_count(dims)
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            activations,
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn embedding_dim(&self) -> usize {
        self.dims[self.dims.len() / 2]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::arg(format!(
                "{} parameters supplied, model has {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Same architecture, different parameters.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.set_params(params)?;
        Ok(m)
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.dims.len());
        let mut at = 0;
        for w in self.dims.windows(2) {
            offsets.push(at);
            at += (w[0] + 1) * w[1];
        }
        offsets
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::arg(format!(
                "input has {} features, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Forward> {
        self.check_input(x)?;
        let offsets = self.layer_offsets();
        let mut pre = Vec::with_capacity(self.activations.len());
        let mut outputs = Vec::with_capacity(self.dims.len());
        outputs.push(x.clone());
        for (l, act) in self.activations.iter().enumerate() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[offsets[l]..offsets[l] + n_in * n_out];
            let b = &self.params[offsets[l] + n_in * n_out..offsets[l] + (n_in + 1) * n_out];
            let input = &outputs[l];
            let mut z = Matrix::zeros(input.rows(), n_out);
            let mut a = Matrix::zeros(input.rows(), n_out);
            for r in 0..input.rows() {
                let xin = input.row(r);
                let zr = z.row_mut(r);
                for o in 0..n_out {
                    let wr = &w[o * n_in..(o + 1) * n_in];
                    zr[o] = b[o] + wr.iter().zip(xin).map(|(p, q)| p * q).sum::<f64>();
                }
                for (ao, zo) in a.row_mut(r).iter_mut().zip(z.row(r)) {
                    *ao = act.apply(*zo);
                }
            }
            pre.push(z);
            outputs.push(a);
        }
        Ok(Forward {
            pre,
            outputs,
            bottleneck: self.dims.len() / 2,
        })
    }

    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.outputs.pop().expect("at least one layer"))
    }

    /// Bottleneck activations, one row per input row.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        let mut f = self.forward(x)?;
        Ok(f.outputs.swap_remove(f.bottleneck))
    }

    /// Dataset loss: sum over points of the per-point mean squared error.
    pub fn loss(&self, x: &Matrix) -> Result<f64> {
        let f = self.forward(x)?;
        mse_loss(f.reconstruction(), x)
    }

    /// Loss divided by the number of points.
    pub fn mean_loss(&self, x: &Matrix) -> Result<f64> {
        if x.is_empty() {
            return Err(Error::arg("mean loss of an empty batch"));
        }
        Ok(self.loss(x)? / x.rows() as f64)
    }

    /// Returns the dataset loss of the batch and the gradient of the
    /// batch-normalized loss `L / |B|`.
    pub fn gradient(&self, x: &Matrix) -> Result<(f64, Vec<f64>)> {
        if x.is_empty() {
            return Err(Error::arg("gradient of an empty batch"));
        }
        let f = self.forward(x)?;
        let loss = mse_loss(f.reconstruction(), x)?;
        let offsets = self.layer_offsets();
        let n_layers = self.activations.len();
        let scale = 2.0 / (x.rows() as f64 * x.cols() as f64);
        let mut grad = vec![0.0; self.params.len()];

        // delta holds dLoss/dPre for the current layer
        let mut delta = Matrix::zeros(x.rows(), self.dims[n_layers]);
        let out = f.reconstruction();
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                let g = scale * (out.get(r, c) - x.get(r, c));
                let d = self.activations[n_layers - 1].derivative(f.pre[n_layers - 1].get(r, c), out.get(r, c));
                delta.set(r, c, g * d);
            }
        }
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let input = &f.outputs[l];
            let (gw, rest) = grad[offsets[l]..].split_at_mut(n_in * n_out);
            let gb = &mut rest[..n_out];
            for r in 0..x.rows() {
                let dr = delta.row(r);
                let xin = input.row(r);
                for o in 0..n_out {
                    gb[o] += dr[o];
                    let gwr = &mut gw[o * n_in..(o + 1) * n_in];
                    for (g, xi) in gwr.iter_mut().zip(xin) {
                        *g += dr[o] * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[offsets[l]..offsets[l] + n_in * n_out];
            let act = self.activations[l - 1];
            let mut next = Matrix::zeros(x.rows(), n_in);
            for r in 0..x.rows() {
                let dr = delta.row(r);
                let nr = next.row_mut(r);
                for o in 0..n_out {
                    let wr = &w[o * n_in..(o + 1) * n_in];
                    for (nv, wv) in nr.iter_mut().zip(wr) {
                        *nv += dr[o] * wv;
                    }
                }
                for (i, nv) in nr.iter_mut().enumerate() {
                    *nv *= act.derivative(f.pre[l - 1].get(r, i), input.get(r, i));
                }
            }
            delta = next;
        }
        Ok((loss, grad))
    }

    /// `phi <- phi - eta * grad(L / |B|)`. Returns the batch loss before the step.
    pub fn sgd_step(&mut self, batch: &Matrix, eta: f64) -> Result<f64> {
        self.prox_sgd_step(batch, eta, 0.0, None)
    }

    /// `phi <- phi - eta * (grad(L / |B|) + mu * (phi - global))`.
    pub fn prox_sgd_step(&mut self, batch: &Matrix, eta: f64, mu: f64, global: Option<&[f64]>) -> Result<f64> {
        if !(eta >= 0.0) || !(mu >= 0.0) {
            return Err(Error::arg(format!("step size {eta} and proximal weight {mu} must be nonnegative")));
        }
        let (loss, grad) = self.gradient(batch)?;
        check_finite(&grad)?;
        if let Some(g) = global {
            if g.len() != self.params.len() {
                return Err(Error::arg("global parameter vector has the wrong length"));
            }
        }
        for (k, p) in self.params.iter_mut().enumerate() {
            let prox = match global {
                Some(g) if mu > 0.0 => mu * (*p - g[k]),
                _ => 0.0,
            };
            *p -= eta * (grad[k] + prox);
        }
        Ok(loss)
    }

    /// Apply a precomputed gradient.
    pub fn apply_gradient(&mut self, grad: &[f64], eta: f64) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::arg("gradient has the wrong length"));
        }
        check_finite(grad)?;
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= eta * g;
        }
        Ok(())
    }
}

pub(crate) fn check_finite(grad: &[f64]) -> Result<()> {
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        let norm = grad.iter().filter(|g| g.is_finite()).map(|g| g * g).sum::<f64>().sqrt();
        return Err(Error::Numeric(format!(
            "non-finite gradient at parameter {k} ({}); finite-part norm {norm:.3e}",
            grad[k]
        )));
    }
    Ok(())
}

/// Sum over rows of the mean squared error across features.
pub fn mse_loss(recon: &Matrix, input: &Matrix) -> Result<f64> {
    if recon.rows() != input.rows() || recon.cols() != input.cols() {
        return Err(Error::arg(format!(
            "reconstruction is {}x{}, input is {}x{}",
            recon.rows(),
            recon.cols(),
            input.rows(),
            input.cols()
        )));
    }
    let d = input.cols() as f64;
    Ok(recon
        .iter_rows()
        .zip(input.iter_rows())
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / d)
        .sum())
}
