//! End-to-end training of a toy semantic autoencoder through the
//! quantizer and the relaxed BSC, with trainable bit-flip probabilities.
//!
//! A training run wires together: encoder MLP → ReLU6 → uniform quantizer
//! → bit mapping → relaxed BSC (one channel per bit) → linear soft
//! reconstruction → decoder MLP. The bit-flip probabilities are
//! reparameterized as `μ = sigmoid(raw)/2` and learn alongside the
//! networks. A ladder of `K` runs with increasing regularization weights
//! `λ_1 < … < λ_K` produces the encoder/decoder/μ triples used by the
//! communication strategy.
//!
//! The encoder gradient through the hard quantize-and-map step uses a
//! straight-through convention: the bit-level gradients are combined back
//! to the feature through the mapping weights `Δ·2^{k−1}` normalized by
//! the full range `Δ·(2^B−1)`, and the quantizer itself passes gradient
//! as identity.

use crate::bsc::{self, BitFlipSet, RawMuVector};
use crate::error::{Error, Result};
use crate::nn::{self, Activation, Adam, Mlp, MlpGrads};
use crate::quantizer::QuantizerSpec;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Autoencoder shape: input `M` → feature `N` on the encoder side and the
/// mirror on the decoder side. Hidden layers use tanh; the encoder output
/// is ReLU6 so its range matches the quantizer, and the decoder output is
/// linear.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub enc_hidden: Vec<usize>,
    pub dec_hidden: Vec<usize>,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be >= 1"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim", "must be >= 1"));
        }
        if self.enc_hidden.iter().chain(&self.dec_hidden).any(|&w| w == 0) {
            return Err(Error::invalid("hidden", "layer widths must be >= 1"));
        }
        Ok(())
    }

    fn encoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend_from_slice(&self.enc_hidden);
        w.push(self.feature_dim);
        w
    }

    fn decoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.feature_dim];
        w.extend_from_slice(&self.dec_hidden);
        w.push(self.input_dim);
        w
    }

    fn activations(widths: &[usize], output: Activation) -> Vec<Activation> {
        let mut acts = vec![Activation::Tanh; widths.len() - 1];
        *acts.last_mut().expect("at least one layer") = output;
        acts
    }
}

/// Which penalty shapes the bit-flip probabilities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularizer {
    /// `(λ/NB)·Σ (1/2 − μ_n)²` — penalizes distance from the maximum.
    L2,
    /// `(λ/NB)·Σ (μ̃ − μ_n)²` — pulls toward an explicit target.
    Target { target_mu: f64 },
}

/// Configuration of one ladder of training runs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mlp: MlpSpec,
    pub quantizer: QuantizerSpec,
    /// Strictly ascending regularization weights, one per run.
    pub lambda_ladder: Vec<f64>,
    pub tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate of the encoder/decoder parameters.
    pub lr_model: f64,
    /// Learning rate of the raw bit-flip parameters.
    pub lr_mu: f64,
    pub seed: u64,
    pub regularizer: Regularizer,
}

impl TrainConfig {
    /// Desk-scale defaults: 8×8 inputs, 8 features, 8-bit quantizer on
    /// [0, 6], ladder (1e-6, 1e-3, 1e-2).
    pub fn toy_default() -> Self {
        TrainConfig {
            mlp: MlpSpec {
                input_dim: crate::dataset::PATTERN_DIM,
                feature_dim: 8,
                enc_hidden: vec![32],
                dec_hidden: vec![32],
            },
            quantizer: QuantizerSpec::new(8, 0.0, 6.0).expect("valid default quantizer"),
            lambda_ladder: vec![1e-6, 1e-3, 1e-2],
            tau: 1.0,
            epochs: 60,
            batch_size: 16,
            lr_model: 1e-4,
            lr_mu: 1e-3,
            seed: 7,
            regularizer: Regularizer::L2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        if self.lambda_ladder.is_empty() {
            return Err(Error::invalid("lambda_ladder", "need at least one entry"));
        }
        for (i, &l) in self.lambda_ladder.iter().enumerate() {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::invalid("lambda_ladder", format!("entry {i} = {l}")));
            }
        }
        if self.lambda_ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("lambda_ladder", "must be strictly ascending"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", format!("must be > 0, got {}", self.tau)));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if !(self.lr_model > 0.0 && self.lr_mu > 0.0) {
            return Err(Error::invalid("learning rate", "must be > 0"));
        }
        if let Regularizer::Target { target_mu } = self.regularizer {
            if !(target_mu > 0.0 && target_mu < 0.5) {
                return Err(Error::invalid(
                    "target_mu",
                    format!("must be in (0, 0.5), got {target_mu}"),
                ));
            }
        }
        Ok(())
    }

    /// Bits per frame, `NB = N·B`.
    pub fn nb(&self) -> usize {
        self.mlp.feature_dim * self.quantizer.bits() as usize
    }
}

/// Trainable state of one run: the two networks plus raw bit-flip
/// parameters. A version counter ties forward caches to the parameter
/// state they were computed from.
#[derive(Clone, Debug)]
pub struct Model {
    pub encoder: Mlp,
    pub decoder: Mlp,
    raw_mu: Vec<f64>,
    version: u64,
}

impl Model {
    pub fn init(spec: &MlpSpec, quantizer: &QuantizerSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let enc_widths = spec.encoder_widths();
        let dec_widths = spec.decoder_widths();
        let encoder = Mlp::init(
            &enc_widths,
            &MlpSpec::activations(&enc_widths, Activation::Relu6),
            rng,
        );
        let decoder = Mlp::init(
            &dec_widths,
            &MlpSpec::activations(&dec_widths, Activation::Identity),
            rng,
        );
        // Flip probabilities start at uniform targets in [0.01, 0.49],
        // mapped back through the sigmoid reparameterization.
        let nb = spec.feature_dim * quantizer.bits() as usize;
        let targets: Vec<f64> = (0..nb).map(|_| rng.gen_range(0.01..0.49)).collect();
        let raw_mu = RawMuVector::from_mu_targets(&targets)?.values().to_vec();
        Ok(Model {
            encoder,
            decoder,
            raw_mu,
            version: 0,
        })
    }

    pub fn raw_mu(&self) -> &[f64] {
        &self.raw_mu
    }

    pub fn mu(&self) -> BitFlipSet {
        let raw = RawMuVector::new(self.raw_mu.clone()).expect("raw_mu stays finite");
        bsc::mu_from_raw(&raw)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Run the training-time pipeline on one sample. `noise_u` supplies
    /// the per-bit uniform draws of the relaxed channel.
    pub fn forward_train(
        &self,
        input: &[f64],
        noise_u: &[f64],
        tau: f64,
        quantizer: &QuantizerSpec,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        let feature_dim = self.encoder.output_dim();
        let bits_per_feature = quantizer.bits() as usize;
        let nb = feature_dim * bits_per_feature;
        if input.len() != self.encoder.input_dim() {
            return Err(Error::LengthMismatch {
                what: "input",
                expected: self.encoder.input_dim(),
                got: input.len(),
            });
        }
        if noise_u.len() != nb {
            return Err(Error::LengthMismatch {
                what: "noise_u",
                expected: nb,
                got: noise_u.len(),
            });
        }
        let mu_set = self.mu();
        let mu = mu_set.values();

        let (features, enc_cache) = self.encoder.forward(input);
        let mut tx_bits = Vec::with_capacity(nb);
        for &v in &features {
            tx_bits.extend(quantizer.bits_of(quantizer.quantize(v))?);
        }
        let mut e_tilde = Vec::with_capacity(nb);
        let mut rx_soft = Vec::with_capacity(nb);
        for n in 0..nb {
            let e = bsc::relax_error(mu[n], noise_u[n], tau)?;
            e_tilde.push(e);
            rx_soft.push(bsc::transmit_relaxed(tx_bits[n], e)?);
        }
        let mut soft_features = Vec::with_capacity(feature_dim);
        for i in 0..feature_dim {
            soft_features
                .push(quantizer.value_of_bits(&rx_soft[i * bits_per_feature..(i + 1) * bits_per_feature])?);
        }
        let (output, dec_cache) = self.decoder.forward(&soft_features);
        let cache = ForwardCache {
            version: self.version,
            input: input.to_vec(),
            output: output.clone(),
            noise_u: noise_u.to_vec(),
            tau,
            quantizer: *quantizer,
            mu: mu.to_vec(),
            tx_bits,
            e_tilde,
            enc_cache,
            dec_cache,
        };
        Ok((output, cache))
    }

    /// Exact gradients of the per-sample loss for the decoder, the relaxed
    /// channel path, and `raw_mu`; straight-through gradients for the
    /// encoder. The cache must come from a forward pass at the current
    /// parameter version.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        lambda: f64,
        regularizer: Regularizer,
    ) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        let input_dim = self.encoder.input_dim();
        let nb = cache.mu.len();
        let bits_per_feature = cache.quantizer.bits() as usize;
        let delta = cache.quantizer.delta();
        let range = delta * (cache.quantizer.levels() - 1) as f64;

        let mut grads = Gradients {
            encoder: self.encoder.zero_grads(),
            decoder: self.decoder.zero_grads(),
            raw_mu: vec![0.0; nb],
        };

        // d(MSE)/d(output) for the 1/M-normalized squared error
        let d_output: Vec<f64> = cache
            .output
            .iter()
            .zip(&cache.input)
            .map(|(&o, &i)| 2.0 * (o - i) / input_dim as f64)
            .collect();
        let d_soft_features = self.decoder.backward(&cache.dec_cache, &d_output, &mut grads.decoder);

        let mut d_features = vec![0.0; d_soft_features.len()];
        for n in 0..nb {
            let feature = n / bits_per_feature;
            let k = n % bits_per_feature;
            let weight = delta * (1u64 << k) as f64;
            let d_rx = d_soft_features[feature] * weight;
            let d_e = d_rx * (f64::from(cache.tx_bits[n]) - 0.5);
            let d_bit = d_rx * cache.e_tilde[n];
            let mut d_mu =
                d_e * bsc::relax_error_grad(cache.mu[n], cache.noise_u[n], cache.tau)?;
            d_mu += match regularizer {
                Regularizer::L2 => -2.0 * lambda * (0.5 - cache.mu[n]) / nb as f64,
                Regularizer::Target { target_mu } => {
                    -2.0 * lambda * (target_mu - cache.mu[n]) / nb as f64
                }
            };
            grads.raw_mu[n] = d_mu * bsc::d_mu_d_raw(cache.mu[n]);
            // straight-through: bit gradients recombine through the
            // mapping weights, normalized by the full range
            d_features[feature] += d_bit * weight / range;
        }
        self.encoder.backward(&cache.enc_cache, &d_features, &mut grads.encoder);
        Ok(grads)
    }

    /// One optimizer step over all three parameter groups. Invalidates
    /// outstanding forward caches.
    pub fn apply_step(&mut self, opt: &mut Optimizers, grads: &Gradients) {
        let mut flat = nn::flatten_params(&self.encoder);
        opt.encoder.step(&mut flat, &nn::flatten_grads(&grads.encoder));
        nn::unflatten_params(&mut self.encoder, &flat);

        let mut flat = nn::flatten_params(&self.decoder);
        opt.decoder.step(&mut flat, &nn::flatten_grads(&grads.decoder));
        nn::unflatten_params(&mut self.decoder, &flat);

        opt.raw_mu.step(&mut self.raw_mu, &grads.raw_mu);
        self.version += 1;
    }
}

/// Intermediates of one forward pass, consumed by [`Model::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    input: Vec<f64>,
    output: Vec<f64>,
    noise_u: Vec<f64>,
    tau: f64,
    quantizer: QuantizerSpec,
    mu: Vec<f64>,
    tx_bits: Vec<u8>,
    e_tilde: Vec<f64>,
    enc_cache: nn::MlpCache,
    dec_cache: nn::MlpCache,
}

impl ForwardCache {
    pub fn tx_bits(&self) -> &[u8] {
        &self.tx_bits
    }
}

/// Gradients for the three parameter groups.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    pub raw_mu: Vec<f64>,
}

impl Gradients {
    fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.encoder.weights.iter_mut().zip(&other.encoder.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.encoder.biases.iter_mut().zip(&other.encoder.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.decoder.weights.iter_mut().zip(&other.decoder.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.decoder.biases.iter_mut().zip(&other.decoder.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.raw_mu.iter_mut().zip(&other.raw_mu) {
            *x += y;
        }
    }

    fn scale(&mut self, s: f64) {
        self.encoder.scale(s);
        self.decoder.scale(s);
        for v in &mut self.raw_mu {
            *v *= s;
        }
    }
}

/// Adam state for the three parameter groups of a [`Model`].
pub struct Optimizers {
    pub encoder: Adam,
    pub decoder: Adam,
    pub raw_mu: Adam,
}

impl Optimizers {
    pub fn new(model: &Model, lr_model: f64, lr_mu: f64) -> Self {
        Optimizers {
            encoder: Adam::new(model.encoder.param_count(), lr_model),
            decoder: Adam::new(model.decoder.param_count(), lr_model),
            raw_mu: Adam::new(model.raw_mu.len(), lr_mu),
        }
    }
}

/// Per-sample loss of Eq-style MSE plus the L2 flip regularizer:
/// `(1/M)‖u−û‖² + (λ/NB)·Σ(1/2 − μ_n)²`.
pub fn loss(input: &[f64], output: &[f64], mu: &BitFlipSet, lambda: f64) -> Result<f64> {
    regularized_loss(input, output, mu, lambda, Regularizer::L2)
}

/// Loss with the target-based regularizer `(λ/NB)·Σ(μ̃ − μ_n)²`.
pub fn target_loss(
    input: &[f64],
    output: &[f64],
    mu: &BitFlipSet,
    lambda: f64,
    target_mu: f64,
) -> Result<f64> {
    regularized_loss(input, output, mu, lambda, Regularizer::Target { target_mu })
}

fn regularized_loss(
    input: &[f64],
    output: &[f64],
    mu: &BitFlipSet,
    lambda: f64,
    regularizer: Regularizer,
) -> Result<f64> {
    if input.len() != output.len() {
        return Err(Error::LengthMismatch {
            what: "output",
            expected: input.len(),
            got: output.len(),
        });
    }
    Error::require_finite("lambda", lambda)?;
    if lambda < 0.0 {
        return Err(Error::invalid("lambda", format!("must be >= 0, got {lambda}")));
    }
    let mse = input
        .iter()
        .zip(output)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / input.len() as f64;
    let nb = mu.len() as f64;
    let reg = mu
        .values()
        .iter()
        .map(|&m| match regularizer {
            Regularizer::L2 => (0.5 - m) * (0.5 - m),
            Regularizer::Target { target_mu } => (target_mu - m) * (target_mu - m),
        })
        .sum::<f64>()
        / nb;
    Ok(mse + lambda * reg)
}

/// Outcome of one run of the ladder.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub lambda: f64,
    pub init_mean_mu: f64,
    pub mean_mu_trace: Vec<f64>,
    pub loss_trace: Vec<f64>,
}

/// Per-epoch mean of the bit-flip probabilities of a recorded run.
pub fn mean_mu_trace(run: &TrainRun) -> &[f64] {
    &run.mean_mu_trace
}

/// One trained (encoder, decoder, μ-set, λ) tuple.
#[derive(Clone, Debug)]
pub struct PairEntry {
    pub lambda: f64,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub mu: BitFlipSet,
}

/// The K trained pairs plus the metadata needed to reuse them.
#[derive(Clone, Debug)]
pub struct PairBundle {
    pub mlp: MlpSpec,
    pub quantizer: QuantizerSpec,
    pub tau: f64,
    pub seed: u64,
    pub entries: Vec<PairEntry>,
}

impl PairBundle {
    /// Bits per frame, `NB = N·B`.
    pub fn nb(&self) -> usize {
        self.mlp.feature_dim * self.quantizer.bits() as usize
    }
}

/// Train the full λ-ladder: one independent run per weight, ascending.
pub fn train_ladder(
    dataset: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<(PairBundle, Vec<TrainRun>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("dataset", "must be non-empty"));
    }
    for (i, sample) in dataset.iter().enumerate() {
        if sample.len() != config.mlp.input_dim {
            return Err(Error::LengthMismatch {
                what: "dataset sample",
                expected: config.mlp.input_dim,
                got: dataset[i].len(),
            });
        }
    }
    let mut entries = Vec::with_capacity(config.lambda_ladder.len());
    let mut runs = Vec::with_capacity(config.lambda_ladder.len());
    for (k, &lambda) in config.lambda_ladder.iter().enumerate() {
        let run_seed = config.seed ^ (k as u64).wrapping_mul(SEED_STREAM);
        let (entry, run) = train_single(dataset, config, lambda, run_seed)?;
        entries.push(entry);
        runs.push(run);
    }
    Ok((
        PairBundle {
            mlp: config.mlp.clone(),
            quantizer: config.quantizer,
            tau: config.tau,
            seed: config.seed,
            entries,
        },
        runs,
    ))
}

fn train_single(
    dataset: &[Vec<f64>],
    config: &TrainConfig,
    lambda: f64,
    run_seed: u64,
) -> Result<(PairEntry, TrainRun)> {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let mut model = Model::init(&config.mlp, &config.quantizer, &mut rng)?;
    let mut opt = Optimizers::new(&model, config.lr_model, config.lr_mu);
    let nb = config.nb();
    let init_mean_mu = model.mu().mean();

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut mean_mu_trace = Vec::with_capacity(config.epochs);
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut noise_u = vec![0.0; nb];

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mu_set = model.mu();
            let mut total = Gradients {
                encoder: model.encoder.zero_grads(),
                decoder: model.decoder.zero_grads(),
                raw_mu: vec![0.0; nb],
            };
            let mut batch_loss = 0.0;
            for &idx in batch {
                for u in noise_u.iter_mut() {
                    // fresh i.i.d. uniform per bit per sample
                    *u = rng.gen::<f64>().clamp(1e-7, 1.0 - 1e-7);
                }
                let (output, cache) =
                    model.forward_train(&dataset[idx], &noise_u, config.tau, &config.quantizer)?;
                batch_loss += regularized_loss(
                    &dataset[idx],
                    &output,
                    &mu_set,
                    lambda,
                    config.regularizer,
                )?;
                let grads = model.backward(&cache, lambda, config.regularizer)?;
                total.accumulate(&grads);
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: batch_loss,
                });
            }
            total.scale(1.0 / batch.len() as f64);
            model.apply_step(&mut opt, &total);
            debug_assert!(model.mu().values().iter().all(|&m| m > 0.0 && m < 0.5));
            epoch_loss += batch_loss;
            batches += 1;
        }
        mean_mu_trace.push(model.mu().mean());
        loss_trace.push(epoch_loss / batches as f64);
    }

    let entry = PairEntry {
        lambda,
        encoder: model.encoder.clone(),
        decoder: model.decoder.clone(),
        mu: model.mu(),
    };
    let run = TrainRun {
        lambda,
        init_mean_mu,
        mean_mu_trace,
        loss_trace,
    };
    Ok((entry, run))
}

/// Encode a feature vector to hard bits through the quantizer.
pub fn encode_to_bits(
    encoder: &Mlp,
    input: &[f64],
    quantizer: &QuantizerSpec,
) -> Result<Vec<u8>> {
    let (features, _) = encoder.forward(input);
    let mut bits = Vec::with_capacity(features.len() * quantizer.bits() as usize);
    for &v in &features {
        bits.extend(quantizer.bits_of(quantizer.quantize(v))?);
    }
    Ok(bits)
}

/// Decode hard bits back to an output vector.
pub fn decode_from_bits(decoder: &Mlp, bits: &[u8], quantizer: &QuantizerSpec) -> Result<Vec<f64>> {
    let per = quantizer.bits() as usize;
    if bits.len() % per != 0 {
        return Err(Error::LengthMismatch {
            what: "bits",
            expected: bits.len().div_ceil(per) * per,
            got: bits.len(),
        });
    }
    let mut features = Vec::with_capacity(bits.len() / per);
    for chunk in bits.chunks(per) {
        features.push(quantizer.value_of_hard_bits(chunk)?);
    }
    let (output, _) = decoder.forward(&features);
    Ok(output)
}

mod persist;
pub use persist::BUNDLE_FORMAT;
