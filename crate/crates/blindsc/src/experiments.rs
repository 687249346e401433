//! Experiment pipelines: end-to-end frame simulation over sampled fading
//! blocks, SNR sweeps, and CSV emission.
//!
//! A sweep point fixes the maximum achievable SNR
//! `SNR_max = 10·log10(P_tot·E[γ]/NB)` and derives the mean
//! gain-to-noise ratio `E[γ]` from it. Every block then samples a
//! Rayleigh coefficient, allocates with the realized γ, transmits one
//! encoded frame through the physical chain, and scores the
//! reconstruction. Block seeds depend only on the master seed and block
//! index, so sweep points share common fading randomness.

use crate::allocator::{self, AllocationPlan, LinkBudget, Method, ModBounds};
use crate::ber::LinkGain;
use crate::bsc::BitFlipSet;
use crate::error::{Error, Result};
use crate::phy;
use crate::trainer::{decode_from_bits, encode_to_bits, PairBundle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;

const SEED_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Cap applied when the reconstruction error is numerically zero.
pub const PSNR_CAP_DB: f64 = 120.0;

/// Peak signal-to-noise ratio `10·log10(peak²/MSE)` in dB, capped at
/// [`PSNR_CAP_DB`] once the MSE drops below `peak²·1e-12`.
pub fn psnr(u: &[f64], u_hat: &[f64], peak: f64) -> Result<f64> {
    if u.len() != u_hat.len() {
        return Err(Error::LengthMismatch {
            what: "u_hat",
            expected: u.len(),
            got: u_hat.len(),
        });
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid("peak", format!("must be > 0, got {peak}")));
    }
    let mse = u
        .iter()
        .zip(u_hat)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / u.len() as f64;
    if mse < peak * peak * 1e-12 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// One simulated coherence block.
#[derive(Clone, Debug)]
pub struct TrialRecord {
    pub block: usize,
    /// Realized gain-to-noise ratio of the block.
    pub gamma: f64,
    pub k_star: usize,
    pub p_sum: f64,
    pub psnr_db: f64,
    pub scaled: bool,
    /// Per-group `(mu_bar, bit_errors, actual_bits)` of this block.
    pub group_errors: Vec<(f64, u64, u64)>,
}

/// Aggregates over the trial records of one run.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub trials: Vec<TrialRecord>,
    pub mean_psnr_db: f64,
    pub std_psnr_db: f64,
    pub mean_p_sum: f64,
    pub mean_k_star: f64,
    pub scaled_fraction: f64,
}

impl RunReport {
    fn from_trials(trials: Vec<TrialRecord>) -> Self {
        let n = trials.len() as f64;
        let mean_psnr_db = trials.iter().map(|t| t.psnr_db).sum::<f64>() / n;
        let var = trials
            .iter()
            .map(|t| (t.psnr_db - mean_psnr_db).powi(2))
            .sum::<f64>()
            / n;
        RunReport {
            mean_psnr_db,
            std_psnr_db: var.sqrt(),
            mean_p_sum: trials.iter().map(|t| t.p_sum).sum::<f64>() / n,
            mean_k_star: trials.iter().map(|t| t.k_star as f64).sum::<f64>() / n,
            scaled_fraction: trials.iter().filter(|t| t.scaled).count() as f64 / n,
            trials,
        }
    }
}

/// Transmit one already-encoded frame over a channel realization using a
/// fixed plan: sort, modulate, fade, equalize, detect, restore. Returns
/// the received bits in original order together with the sorted
/// transmit/receive streams for per-group accounting.
pub fn transmit_frame(
    bits: &[u8],
    plan: &AllocationPlan,
    ch: &phy::ChannelRealization,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>)> {
    let sorted = allocator::apply_sort(bits, plan)?;
    let levels = plan.modulation_levels();
    let powers = plan.powers();
    let symbols = phy::modulate(&sorted, &levels)?;
    let received = phy::apply_channel(&symbols, &powers, ch, rng)?;
    let equalized = phy::equalize(&received, ch.h)?;
    let detected = phy::detect(&equalized, &powers, &levels)?;
    let restored = allocator::restore_order(&detected[..plan.nb], plan)?;
    Ok((restored, sorted, detected))
}

/// Simulate `n_blocks` coherence blocks: sample fading with mean γ from
/// the budget, select the pair for the realized γ, and push one dataset
/// frame through the full chain. Infeasible rate configurations abort;
/// over-budget ladders fall back to the scaled last entry per block.
pub fn run_simulate(
    bundle: &PairBundle,
    budget: &LinkBudget,
    dataset: &[Vec<f64>],
    n_blocks: usize,
    seed: u64,
    method: Method,
) -> Result<RunReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("dataset", "must be non-empty"));
    }
    if n_blocks == 0 {
        return Err(Error::invalid("n_blocks", "must be >= 1"));
    }
    let bounds = ModBounds::default();
    let mu_refs: Vec<&BitFlipSet> = bundle.entries.iter().map(|e| &e.mu).collect();
    let mut trials = Vec::with_capacity(n_blocks);
    for block in 0..n_blocks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (block as u64).wrapping_mul(SEED_STREAM));
        let ch = phy::sample_block_fading(budget.gamma.value(), &mut rng)?;
        let gamma = ch.gamma();
        let block_budget = LinkBudget {
            gamma: LinkGain::new(gamma)?,
            ..*budget
        };
        let selection = allocator::select_pair(&mu_refs, &block_budget, &bounds, method)?;
        let plan = &selection.plan;
        let entry = &bundle.entries[plan.k_star];

        let input = &dataset[block % dataset.len()];
        let bits = encode_to_bits(&entry.encoder, input, &bundle.quantizer)?;
        let (restored, sorted_tx, sorted_rx) = transmit_frame(&bits, plan, &ch, &mut rng)?;
        let output = decode_from_bits(&entry.decoder, &restored, &bundle.quantizer)?;

        let group_errors = plan
            .symbols
            .iter()
            .map(|s| {
                let lo = s.slot_start;
                let hi = lo + s.actual_bits;
                let errs = (lo..hi)
                    .filter(|&i| {
                        let tx = sorted_tx.get(i).copied().unwrap_or(0);
                        tx != sorted_rx[i]
                    })
                    .count() as u64;
                (s.mu_bar, errs, s.actual_bits as u64)
            })
            .collect();

        trials.push(TrialRecord {
            block,
            gamma,
            k_star: plan.k_star,
            p_sum: allocator::required_total_power(plan),
            psnr_db: psnr(input, &output, 1.0)?,
            scaled: plan.scaled,
            group_errors,
        });
    }
    Ok(RunReport::from_trials(trials))
}

/// SNR sweep configuration.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    /// Grid of `SNR_max` values in dB.
    pub snr_grid_db: Vec<f64>,
    pub p_tot: f64,
    pub r_target: f64,
    /// Fading blocks per grid point.
    pub trials: usize,
    pub seed: u64,
    pub method: Method,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.snr_grid_db.is_empty() {
            return Err(Error::invalid("snr_grid_db", "must be non-empty"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be >= 1"));
        }
        Ok(())
    }

    /// Invert `SNR_max = 10·log10(P_tot·E[γ]/NB)` for the mean gain.
    pub fn expected_gamma(&self, snr_max_db: f64, nb: usize) -> f64 {
        nb as f64 * 10f64.powf(snr_max_db / 10.0) / self.p_tot
    }
}

/// One row of the sweep output.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub snr_max_db: f64,
    pub expected_gamma: f64,
    pub mean_psnr_db: f64,
    pub std_psnr_db: f64,
    pub mean_p_sum: f64,
    pub mean_k_star: f64,
    pub scaled_fraction: f64,
}

/// Run the sweep: one simulation run per grid point, sharing block
/// randomness across points.
pub fn run_sweep(
    bundle: &PairBundle,
    spec: &SweepSpec,
    dataset: &[Vec<f64>],
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let nb = bundle.nb();
    let mut rows = Vec::with_capacity(spec.snr_grid_db.len());
    for &snr_db in &spec.snr_grid_db {
        let expected_gamma = spec.expected_gamma(snr_db, nb);
        let budget = LinkBudget::new(spec.p_tot, spec.r_target, LinkGain::new(expected_gamma)?)?;
        let report = run_simulate(bundle, &budget, dataset, spec.trials, spec.seed, spec.method)?;
        rows.push(SweepRow {
            snr_max_db: snr_db,
            expected_gamma,
            mean_psnr_db: report.mean_psnr_db,
            std_psnr_db: report.std_psnr_db,
            mean_p_sum: report.mean_p_sum,
            mean_k_star: report.mean_k_star,
            scaled_fraction: report.scaled_fraction,
        });
    }
    Ok(rows)
}

/// Write sweep rows as CSV with a versioned header comment.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "# blindsc sweep v1; k_star is the 0-based ladder index")?;
    writeln!(
        out,
        "snr_max_db,expected_gamma,mean_psnr_db,std_psnr_db,mean_p_sum,mean_k_star,scaled_fraction"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.snr_max_db,
            r.expected_gamma,
            r.mean_psnr_db,
            r.std_psnr_db,
            r.mean_p_sum,
            r.mean_k_star,
            r.scaled_fraction
        )?;
    }
    Ok(())
}

/// Write per-trial records as CSV.
pub fn write_trials_csv<W: Write>(report: &RunReport, mut out: W) -> Result<()> {
    writeln!(out, "# blindsc trials v1; k_star is the 0-based ladder index")?;
    writeln!(out, "block,gamma,k_star,p_sum,psnr_db,scaled")?;
    for t in &report.trials {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            t.block, t.gamma, t.k_star, t.p_sum, t.psnr_db, t.scaled
        )?;
    }
    Ok(())
}

/// Write the per-epoch mean-μ traces of a training ladder as CSV.
pub fn write_trace_csv<W: Write>(
    runs: &[crate::trainer::TrainRun],
    mut out: W,
) -> Result<()> {
    writeln!(out, "# blindsc mu-trace v1")?;
    writeln!(out, "epoch,lambda,mean_mu,loss")?;
    for run in runs {
        for (epoch, (&mu, &loss)) in run.mean_mu_trace.iter().zip(&run.loss_trace).enumerate() {
            writeln!(out, "{},{},{},{}", epoch, run.lambda, mu, loss)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{train_ladder, TrainConfig};

    fn toy_bundle() -> (PairBundle, Vec<Vec<f64>>) {
        let data = crate::dataset::toy_patterns(24, 11);
        let mut config = TrainConfig::toy_default();
        config.epochs = 2;
        config.lambda_ladder = vec![1e-5, 1e-3];
        config.mlp.enc_hidden = vec![16];
        config.mlp.dec_hidden = vec![16];
        let (bundle, _) = train_ladder(&data, &config).unwrap();
        (bundle, data)
    }

    #[test]
    fn psnr_reference_points() {
        assert_eq!(psnr(&[0.5, 0.5], &[0.5, 0.5], 1.0).unwrap(), PSNR_CAP_DB);
        // MSE = peak² → 0 dB
        assert!(psnr(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap().abs() < 1e-12);
        // MSE = 0.01, peak 1 → 20 dB
        let v = psnr(&[0.1], &[0.2], 1.0).unwrap();
        assert!((v - 20.0).abs() < 1e-9);
        assert!(psnr(&[0.0], &[0.0, 1.0], 1.0).is_err());
        assert!(psnr(&[0.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn simulate_is_deterministic_and_within_budget() {
        let (bundle, data) = toy_bundle();
        let budget = LinkBudget::new(100.0, 4.0, LinkGain::new(5.0).unwrap()).unwrap();
        let a = run_simulate(&bundle, &budget, &data, 6, 3, Method::Ampc).unwrap();
        let b = run_simulate(&bundle, &budget, &data, 6, 3, Method::Ampc).unwrap();
        assert_eq!(a.trials.len(), 6);
        for (x, y) in a.trials.iter().zip(&b.trials) {
            assert_eq!(x.psnr_db, y.psnr_db);
            assert_eq!(x.p_sum, y.p_sum);
            assert_eq!(x.k_star, y.k_star);
        }
        for t in &a.trials {
            assert!(t.p_sum <= budget.p_tot * (1.0 + 1e-9), "block {}", t.block);
        }
    }

    #[test]
    fn huge_gamma_recovers_channel_free_reconstruction() {
        let (bundle, data) = toy_bundle();
        // effectively noiseless: realized γ astronomically large
        let budget = LinkBudget::new(100.0, 4.0, LinkGain::new(1e12).unwrap()).unwrap();
        let report = run_simulate(&bundle, &budget, &data, 3, 5, Method::Apc).unwrap();
        for t in &report.trials {
            let entry = &bundle.entries[t.k_star];
            let input = &data[t.block % data.len()];
            let bits = encode_to_bits(&entry.encoder, input, &bundle.quantizer).unwrap();
            let clean = decode_from_bits(&entry.decoder, &bits, &bundle.quantizer).unwrap();
            let clean_psnr = psnr(input, &clean, 1.0).unwrap();
            assert!((t.psnr_db - clean_psnr).abs() < 1e-9);
            // no bit errors anywhere
            assert!(t.group_errors.iter().all(|&(_, e, _)| e == 0));
        }
    }

    #[test]
    fn sweep_emits_one_row_per_point() {
        let (bundle, data) = toy_bundle();
        let spec = SweepSpec {
            snr_grid_db: vec![5.0, 15.0],
            p_tot: 100.0,
            r_target: 4.0,
            trials: 4,
            seed: 9,
            method: Method::Ampc,
        };
        let rows = run_sweep(&bundle, &spec, &data).unwrap();
        assert_eq!(rows.len(), 2);
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2 + rows.len());
        // rate floor holds in every plan the sweep produced (checked via
        // bundle geometry: NB/T >= R_target was enforced at allocation)
        assert!(rows[0].expected_gamma < rows[1].expected_gamma);
    }
}
