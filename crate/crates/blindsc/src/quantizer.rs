//! B-bit uniform scalar quantizer with codeword/bit-sequence mapping and
//! the linear soft reconstruction used on the decoder input path.
//!
//! Codewords are `v_min + j·Δ` for `j ∈ {0, …, 2^B−1}` with step
//! `Δ = (v_max − v_min)/(2^B − 1)`. Bit sequences are the binary expansion
//! of the level index, least-significant bit first, so that
//! `q = v_min + Δ·Σ_k 2^{k−1} b^{(k)}`.

use crate::error::{Error, Result};

/// Absolute tolerance for codeword membership checks.
const CODEWORD_TOL: f64 = 1e-9;

/// Geometry of a B-bit uniform quantizer.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuantizerSpec {
    bits: u32,
    v_min: f64,
    v_max: f64,
}

impl QuantizerSpec {
    pub fn new(bits: u32, v_min: f64, v_max: f64) -> Result<Self> {
        if bits == 0 || bits > 24 {
            return Err(Error::invalid("bits", format!("must be in 1..=24, got {bits}")));
        }
        Error::require_finite("v_min", v_min)?;
        Error::require_finite("v_max", v_max)?;
        if v_min >= v_max {
            return Err(Error::invalid(
                "v_min",
                format!("range is empty: v_min {v_min} >= v_max {v_max}"),
            ));
        }
        Ok(QuantizerSpec { bits, v_min, v_max })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    /// Step size `Δ`.
    pub fn delta(&self) -> f64 {
        (self.v_max - self.v_min) / (self.levels() - 1) as f64
    }

    /// Codebook size `2^B`.
    pub fn levels(&self) -> u64 {
        1u64 << self.bits
    }

    /// Codeword at level index `j`.
    pub fn codeword(&self, index: u64) -> Result<f64> {
        if index >= self.levels() {
            return Err(Error::invalid(
                "index",
                format!("level {index} out of range for {} bits", self.bits),
            ));
        }
        Ok(self.delta() * index as f64 + self.v_min)
    }

    /// Nearest codeword to `v`. Out-of-range inputs are clamped to
    /// `[v_min, v_max]` first, matching a bounded activation ahead of the
    /// quantizer.
    pub fn quantize(&self, v: f64) -> f64 {
        let clamped = v.clamp(self.v_min, self.v_max);
        let delta = self.delta();
        let mut index = ((clamped - self.v_min) / delta + 0.5).floor() as i64;
        index = index.clamp(0, self.levels() as i64 - 1);
        delta * index as f64 + self.v_min
    }

    /// Level index of a codeword, within [`CODEWORD_TOL`].
    pub fn level_of(&self, q: f64) -> Result<u64> {
        if !q.is_finite() {
            return Err(Error::NotACodeword(q));
        }
        let delta = self.delta();
        let index = ((q - self.v_min) / delta).round();
        if index < 0.0 || index >= self.levels() as f64 {
            return Err(Error::NotACodeword(q));
        }
        let index = index as u64;
        let reconstructed = delta * index as f64 + self.v_min;
        if (q - reconstructed).abs() > CODEWORD_TOL {
            return Err(Error::NotACodeword(q));
        }
        Ok(index)
    }

    /// Bit sequence of a codeword, least-significant bit first.
    pub fn bits_of(&self, q: f64) -> Result<Vec<u8>> {
        let index = self.level_of(q)?;
        Ok((0..self.bits).map(|k| ((index >> k) & 1) as u8).collect())
    }

    /// Value reconstructed from (possibly soft) bits in `[0, 1]`:
    /// `v_min + Δ·Σ_k 2^{k−1} b^{(k)}`.
    ///
    /// Linear in the bits; on hard bits it is the exact inverse of
    /// [`Self::bits_of`].
    pub fn value_of_bits(&self, bits: &[f64]) -> Result<f64> {
        if bits.len() != self.bits as usize {
            return Err(Error::LengthMismatch {
                what: "bits",
                expected: self.bits as usize,
                got: bits.len(),
            });
        }
        let mut weighted = 0.0;
        for (k, &b) in bits.iter().enumerate() {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::invalid(
                    "bits",
                    format!("entry {k} = {b} outside [0, 1]"),
                ));
            }
            weighted += (1u64 << k) as f64 * b;
        }
        Ok(self.delta() * weighted + self.v_min)
    }

    /// [`Self::value_of_bits`] on hard bits.
    pub fn value_of_hard_bits(&self, bits: &[u8]) -> Result<f64> {
        let soft: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
        self.value_of_bits(&soft)
    }
}
