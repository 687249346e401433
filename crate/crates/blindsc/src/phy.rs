//! Gray-coded square-QAM constellations, block-fading channel, ML
//! detection, and a Monte Carlo BER harness.
//!
//! Constellations are normalized to unit average symbol energy. Noise
//! power is fixed at `σ² = 1` throughout; all SNR control flows through
//! symbol powers and the channel coefficient, so the gain-to-noise ratio
//! is simply `γ = |h|²`.

use crate::ber::{LinkGain, ModulationLevel};
use crate::error::{Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

/// One coherence block of the channel: a complex coefficient and the
/// (unit) noise power.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelRealization {
    pub h: Complex64,
    pub sigma2: f64,
}

impl ChannelRealization {
    pub fn new(h: Complex64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid(
                "sigma2",
                format!("must be > 0, got {sigma2}"),
            ));
        }
        Ok(ChannelRealization { h, sigma2 })
    }

    /// Gain-to-noise ratio `|h|²/σ²` of this block.
    pub fn gamma(&self) -> f64 {
        self.h.norm_sqr() / self.sigma2
    }
}

/// Rayleigh block fading: `h` circularly-symmetric complex Gaussian with
/// `E[|h|²]/σ² = expected_gamma`, `σ²` fixed at 1.
pub fn sample_block_fading<R: Rng + ?Sized>(
    expected_gamma: f64,
    rng: &mut R,
) -> Result<ChannelRealization> {
    Error::require_finite("expected_gamma", expected_gamma)?;
    if expected_gamma <= 0.0 {
        return Err(Error::invalid(
            "expected_gamma",
            format!("must be > 0, got {expected_gamma}"),
        ));
    }
    let s = (expected_gamma / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    ChannelRealization::new(Complex64::new(s * re, s * im), 1.0)
}

fn gray(n: u32) -> u32 {
    n ^ (n >> 1)
}

/// Square QAM grid with per-axis Gray labelling and unit average energy.
///
/// A point at grid position `(i, q)` carries the label
/// `gray(i) << m/2 | gray(q)`, so axis-adjacent points differ in exactly
/// one label bit. Labels pack into bit vectors least-significant bit
/// first.
#[derive(Clone, Debug)]
pub struct Constellation {
    m: ModulationLevel,
    points: Vec<Complex64>,
    labels: Vec<u32>,
    point_of_label: Vec<usize>,
}

impl Constellation {
    pub fn new(m: ModulationLevel) -> Self {
        let side = m.side();
        let order = m.order() as usize;
        // PAM levels ±1, ±3, …, ±(side−1); per-axis mean square is
        // (side²−1)/3, so the two-axis scale is √(3 / (2(side²−1))).
        let scale = (3.0 / (2.0 * (f64::from(side) * f64::from(side) - 1.0))).sqrt();
        let half_bits = m.bits() / 2;
        let mut points = Vec::with_capacity(order);
        let mut labels = Vec::with_capacity(order);
        let mut point_of_label = vec![0usize; order];
        for i in 0..side {
            for q in 0..side {
                let re = f64::from(2 * i as i32 - (side as i32 - 1));
                let im = f64::from(2 * q as i32 - (side as i32 - 1));
                let label = (gray(i) << half_bits) | gray(q);
                point_of_label[label as usize] = points.len();
                points.push(Complex64::new(re * scale, im * scale));
                labels.push(label);
            }
        }
        Constellation {
            m,
            points,
            labels,
            point_of_label,
        }
    }

    pub fn modulation(&self) -> ModulationLevel {
        self.m
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Average point energy; equals 1 up to rounding.
    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }

    /// Point carrying the given label.
    pub fn point_of_label(&self, label: u32) -> Complex64 {
        self.points[self.point_of_label[label as usize]]
    }

    /// Label from `m` bits, least-significant first.
    pub fn label_of_bits(&self, bits: &[u8]) -> u32 {
        bits.iter()
            .enumerate()
            .fold(0u32, |acc, (k, &b)| acc | (u32::from(b & 1) << k))
    }

    /// ML detection: the label of the nearest point. Ties break toward
    /// the lower label so detection is deterministic.
    pub fn detect_label(&self, z: Complex64) -> u32 {
        let mut best_label = 0u32;
        let mut best_dist = f64::INFINITY;
        for label in 0..self.points.len() as u32 {
            let d = (self.point_of_label(label) - z).norm_sqr();
            if d < best_dist {
                best_dist = d;
                best_label = label;
            }
        }
        best_label
    }
}

/// Small cache so mixed-modulation frames build each constellation once.
#[derive(Default)]
pub struct ConstellationBank {
    built: BTreeMap<u32, Constellation>,
}

impl ConstellationBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, m: ModulationLevel) -> &Constellation {
        self.built.entry(m.bits()).or_insert_with(|| Constellation::new(m))
    }
}

/// Map a bit stream to symbols, `plan[t].bits()` bits per symbol in
/// order. When the plan has more bit slots than data bits, the tail is
/// padded with zero bits; more data bits than slots is an error.
pub fn modulate(bits: &[u8], plan: &[ModulationLevel]) -> Result<Vec<Complex64>> {
    let slots: usize = plan.iter().map(|m| m.bits() as usize).sum();
    if bits.len() > slots {
        return Err(Error::LengthMismatch {
            what: "bits",
            expected: slots,
            got: bits.len(),
        });
    }
    let mut bank = ConstellationBank::new();
    let mut symbols = Vec::with_capacity(plan.len());
    let mut offset = 0usize;
    let mut frame = Vec::new();
    for &m in plan {
        let count = m.bits() as usize;
        frame.clear();
        for k in 0..count {
            frame.push(*bits.get(offset + k).unwrap_or(&0));
        }
        offset += count;
        let constellation = bank.get(m);
        let label = constellation.label_of_bits(&frame);
        symbols.push(constellation.point_of_label(label));
    }
    Ok(symbols)
}

/// Pass symbols through the block-fading channel:
/// `y_t = h·√(p_t)·x_t + n_t` with circularly-symmetric complex Gaussian
/// noise of variance `σ²`.
pub fn apply_channel<R: Rng + ?Sized>(
    symbols: &[Complex64],
    powers: &[f64],
    ch: &ChannelRealization,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if powers.len() != symbols.len() {
        return Err(Error::LengthMismatch {
            what: "powers",
            expected: symbols.len(),
            got: powers.len(),
        });
    }
    let noise_scale = (ch.sigma2 / 2.0).sqrt();
    let mut received = Vec::with_capacity(symbols.len());
    for (x, &p) in symbols.iter().zip(powers) {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(Error::invalid("powers", format!("must be >= 0, got {p}")));
        }
        let nr: f64 = rng.sample(StandardNormal);
        let ni: f64 = rng.sample(StandardNormal);
        let n = Complex64::new(noise_scale * nr, noise_scale * ni);
        received.push(ch.h * p.sqrt() * x + n);
    }
    Ok(received)
}

/// Zero-forcing equalization `ỹ_t = (h*/|h|²)·y_t = √(p_t)·x_t + ñ_t`.
pub fn equalize(received: &[Complex64], h: Complex64) -> Result<Vec<Complex64>> {
    if h == Complex64::new(0.0, 0.0) {
        return Err(Error::SingularChannel);
    }
    let w = h.conj() / h.norm_sqr();
    Ok(received.iter().map(|y| w * y).collect())
}

/// Per-symbol ML detection of an equalized frame; labels concatenate into
/// a bit vector (LSB first per symbol).
pub fn detect(
    equalized: &[Complex64],
    powers: &[f64],
    plan: &[ModulationLevel],
) -> Result<Vec<u8>> {
    if plan.len() != equalized.len() {
        return Err(Error::LengthMismatch {
            what: "plan",
            expected: equalized.len(),
            got: plan.len(),
        });
    }
    if powers.len() != equalized.len() {
        return Err(Error::LengthMismatch {
            what: "powers",
            expected: equalized.len(),
            got: powers.len(),
        });
    }
    let mut bank = ConstellationBank::new();
    let mut bits = Vec::with_capacity(plan.iter().map(|m| m.bits() as usize).sum());
    for (t, ((&z, &p), &m)) in equalized.iter().zip(powers).zip(plan).enumerate() {
        if p <= 0.0 {
            return Err(Error::ZeroPower { index: t });
        }
        let constellation = bank.get(m);
        let label = constellation.detect_label(z / p.sqrt());
        for k in 0..m.bits() {
            bits.push(((label >> k) & 1) as u8);
        }
    }
    Ok(bits)
}

/// Minimum bit count accepted by [`monte_carlo_ber`].
pub const MC_MIN_BITS: usize = 10_000;

/// Empirical BER of the modulate→channel→equalize→detect chain at fixed
/// `(p, m, γ)`, with `h = √γ` and `σ² = 1`.
///
/// Returns the flip fraction and its binomial standard error
/// `√(b̂(1−b̂)/n)`.
pub fn monte_carlo_ber(
    p: f64,
    m: ModulationLevel,
    gamma: LinkGain,
    n_bits: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    use rand::SeedableRng;
    if n_bits < MC_MIN_BITS {
        return Err(Error::invalid(
            "n_bits",
            format!("need at least {MC_MIN_BITS}, got {n_bits}"),
        ));
    }
    Error::require_finite("p", p)?;
    if p <= 0.0 {
        return Err(Error::ZeroPower { index: 0 });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let ch = ChannelRealization::new(Complex64::new(gamma.value().sqrt(), 0.0), 1.0)?;
    let bits_per_symbol = m.bits() as usize;
    let n_symbols = n_bits.div_ceil(bits_per_symbol);
    let total_bits = n_symbols * bits_per_symbol;

    const FRAME_SYMBOLS: usize = 4096;
    let mut errors = 0usize;
    let mut remaining = n_symbols;
    let mut tx_bits = Vec::with_capacity(FRAME_SYMBOLS * bits_per_symbol);
    while remaining > 0 {
        let frame_symbols = remaining.min(FRAME_SYMBOLS);
        let frame_plan = vec![m; frame_symbols];
        let frame_powers = vec![p; frame_symbols];
        tx_bits.clear();
        for _ in 0..frame_symbols * bits_per_symbol {
            tx_bits.push(u8::from(rng.gen::<bool>()));
        }
        let symbols = modulate(&tx_bits, &frame_plan)?;
        let received = apply_channel(&symbols, &frame_powers, &ch, &mut rng)?;
        let eq = equalize(&received, ch.h)?;
        let rx_bits = detect(&eq, &frame_powers, &frame_plan)?;
        errors += tx_bits
            .iter()
            .zip(&rx_bits)
            .filter(|(a, b)| a != b)
            .count();
        remaining -= frame_symbols;
    }
    let estimate = errors as f64 / total_bits as f64;
    let std_error = (estimate * (1.0 - estimate) / total_bits as f64).sqrt();
    Ok((estimate, std_error))
}
