//! Channel-adaptive digital semantic communication at desk scale.
//!
//! The crate trains a toy semantic autoencoder end-to-end through a
//! uniform quantizer and a bank of relaxed binary symmetric channels
//! whose bit-flip probabilities are themselves trainable, then turns the
//! trained flip probabilities into per-symbol transmit power and QAM
//! modulation assignments whose realized bit error rates match training.
//!
//! Module map:
//! - [`ber`] — closed-form Gray-QAM BER and its bisection inverse.
//! - [`quantizer`] — uniform quantizer, bit mapping, soft reconstruction.
//! - [`phy`] — constellations, fading channel, ML detection, Monte Carlo.
//! - [`bsc`] — hard BSC and its continuous relaxation with gradients.
//! - [`nn`] — minimal MLP and Adam.
//! - [`trainer`] — end-to-end training, the λ-ladder, bundle persistence.
//! - [`allocator`] — APC/AMPC power-and-modulation control, pair
//!   selection, bit sorting, BER-matching verification.
//! - [`experiments`] — block simulation, SNR sweeps, CSV reports.
//! - [`dataset`] — procedural 8×8 grayscale patterns.

pub mod allocator;
pub mod ber;
pub mod bsc;
pub mod dataset;
mod error;
pub mod experiments;
pub mod nn;
pub mod phy;
pub mod quantizer;
pub mod trainer;

pub use error::{Error, Result};
