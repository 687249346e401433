//! Minimal dense network and Adam optimizer used by the trainer.

use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu6,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu6 => z.clamp(0.0, 6.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu6 => {
                if z > 0.0 && z < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer, weights row-major `[rows × cols]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
}

impl Dense {
    /// Xavier-uniform initialization.
    pub fn init<R: Rng + ?Sized>(rows: usize, cols: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let weights = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Dense {
            weights,
            biases: vec![0.0; rows],
            rows,
            cols,
            activation,
        }
    }
}

/// Stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs and pre-activations from a forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

/// Gradient buffers matching an [`Mlp`]'s layout.
#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Build from layer widths; `acts[i]` is the activation after layer `i`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], acts: &[Activation], rng: &mut R) -> Self {
        assert_eq!(widths.len(), acts.len() + 1, "one activation per layer");
        let layers = acts
            .iter()
            .enumerate()
            .map(|(i, &a)| Dense::init(widths[i + 1], widths[i], a, rng))
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.cols)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for layer in &self.layers {
            inputs.push(a.clone());
            let mut z = layer.biases.clone();
            for r in 0..layer.rows {
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                let mut acc = 0.0;
                for (w, v) in row.iter().zip(&a) {
                    acc += w * v;
                }
                z[r] += acc;
            }
            a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre_activations.push(z);
        }
        (
            a,
            MlpCache {
                inputs,
                pre_activations,
            },
        )
    }

    /// Backpropagate `d_out` (gradient at the network output), adding
    /// parameter gradients into `grads` and returning the gradient at the
    /// network input.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grads: &mut MlpGrads) -> Vec<f64> {
        let mut d = d_out.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[li];
            let input = &cache.inputs[li];
            let dz: Vec<f64> = d
                .iter()
                .zip(z)
                .map(|(&g, &zv)| g * layer.activation.derivative(zv))
                .collect();
            let gw = &mut grads.weights[li];
            for r in 0..layer.rows {
                let base = r * layer.cols;
                for c in 0..layer.cols {
                    gw[base + c] += dz[r] * input[c];
                }
                grads.biases[li][r] += dz[r];
            }
            let mut d_in = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for c in 0..layer.cols {
                    d_in[c] += row[c] * dz[r];
                }
            }
            d = d_in;
        }
        d
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }
}

impl MlpGrads {
    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            for v in w {
                *v *= s;
            }
        }
        for b in &mut self.biases {
            for v in b {
                *v *= s;
            }
        }
    }
}

/// Adam state over a flat parameter vector. Standard bias-corrected
/// first/second-moment update with `β = (0.9, 0.999)`, `ε = 1e-8`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    first: Vec<f64>,
    second: Vec<f64>,
    step_count: u64,
    pub learning_rate: f64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        Adam {
            first: vec![0.0; dim],
            second: vec![0.0; dim],
            step_count: 0,
            learning_rate,
        }
    }

    /// One update over a flat parameter slice. `params` and `grads` must
    /// match the state dimension.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grads.len(), self.first.len());
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first[i] = ADAM_BETA1 * self.first[i] + (1.0 - ADAM_BETA1) * g;
            self.second[i] = ADAM_BETA2 * self.second[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.first[i] / bc1;
            let v_hat = self.second[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Visit every parameter of an [`Mlp`] as one flat slice (weights then
/// biases, layer by layer).
pub fn flatten_params(mlp: &Mlp) -> Vec<f64> {
    let mut out = Vec::with_capacity(mlp.param_count());
    for layer in &mlp.layers {
        out.extend_from_slice(&layer.weights);
        out.extend_from_slice(&layer.biases);
    }
    out
}

pub fn unflatten_params(mlp: &mut Mlp, flat: &[f64]) {
    let mut offset = 0;
    for layer in &mut mlp.layers {
        let w_len = layer.weights.len();
        layer.weights.copy_from_slice(&flat[offset..offset + w_len]);
        offset += w_len;
        let b_len = layer.biases.len();
        layer.biases.copy_from_slice(&flat[offset..offset + b_len]);
        offset += b_len;
    }
}

pub fn flatten_grads(grads: &MlpGrads) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in grads.weights.iter().zip(&grads.biases) {
        out.extend_from_slice(w);
        out.extend_from_slice(b);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_backward_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::init(&[3, 5, 2], &[Activation::Tanh, Activation::Identity], &mut rng);
        let x = [0.3, -0.8, 1.1];
        let (y, cache) = mlp.forward(&x);
        // loss = 0.5 Σ y²  →  d_out = y
        let mut grads = mlp.zero_grads();
        mlp.backward(&cache, &y, &mut grads);
        let flat_g = flatten_grads(&grads);
        let mut flat_p = flatten_params(&mlp);
        let h = 1e-6;
        for i in (0..flat_p.len()).step_by(3) {
            let orig = flat_p[i];
            let mut probe = mlp.clone();
            flat_p[i] = orig + h;
            unflatten_params(&mut probe, &flat_p);
            let (yp, _) = probe.forward(&x);
            flat_p[i] = orig - h;
            unflatten_params(&mut probe, &flat_p);
            let (ym, _) = probe.forward(&x);
            flat_p[i] = orig;
            let lp: f64 = yp.iter().map(|v| 0.5 * v * v).sum();
            let lm: f64 = ym.iter().map(|v| 0.5 * v * v).sum();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - flat_g[i]).abs() <= 1e-6 * fd.abs().max(1.0),
                "param {i}: fd {fd} vs analytic {}",
                flat_g[i]
            );
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut adam = Adam::new(3, 0.1);
        let mut params = vec![1.0, -2.0, 0.5];
        adam.step(&mut params, &[0.0, 0.0, 0.0]);
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_is_sign_scaled() {
        let mut adam = Adam::new(2, 0.01);
        let mut params = vec![0.0, 0.0];
        adam.step(&mut params, &[0.3, -4.0]);
        // first bias-corrected step ≈ lr·g/(|g|+ε)
        assert!((params[0] + 0.01 * 0.3 / (0.3 + ADAM_EPS)).abs() < 1e-9);
        assert!((params[1] - 0.01 * 4.0 / (4.0 + ADAM_EPS)).abs() < 1e-9);
    }

    #[test]
    fn relu6_saturates() {
        assert_eq!(Activation::Relu6.apply(-1.0), 0.0);
        assert_eq!(Activation::Relu6.apply(7.0), 6.0);
        assert_eq!(Activation::Relu6.apply(3.0), 3.0);
        assert_eq!(Activation::Relu6.derivative(3.0), 1.0);
        assert_eq!(Activation::Relu6.derivative(-1.0), 0.0);
        assert_eq!(Activation::Relu6.derivative(7.0), 0.0);
    }
}
