//! Training-aware communication strategy: per-symbol power and modulation
//! assignment so realized bit error rates match trained bit-flip
//! probabilities, under total-power and rate constraints.
//!
//! Two methods are provided. APC fixes the lowest rate-feasible
//! modulation level and solves per-group powers from the inverse BER
//! model. AMPC walks symmetric (lowest-μ, highest-μ) group pairs and
//! moves two bits at a time from the low group to the high group —
//! lowering one modulation level and raising the other — whenever that
//! strictly reduces the pair's combined power. Both operate on the
//! ascending-μ sorted bit stream; the transmitted bits are permuted to
//! that order and restored at the receiver.

use crate::ber::{self, LinkGain, ModulationLevel, DEFAULT_SOLVER_TOL};
use crate::bsc::BitFlipSet;
use crate::error::{Error, Result};
use crate::phy;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// Default relative BER-matching tolerance (fraction of each group mean).
pub const DEFAULT_EPSILON: f64 = 0.05;
/// Absolute floor of the per-group matching tolerance.
pub const EPSILON_FLOOR: f64 = 1e-4;

/// Link constraints shared by transmitter and receiver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkBudget {
    /// Total transmit power available for one frame.
    pub p_tot: f64,
    /// Target bits per channel use.
    pub r_target: f64,
    /// Gain-to-noise ratio of the current coherence block.
    pub gamma: LinkGain,
    /// Relative BER-matching tolerance, in (0, 0.1].
    pub epsilon: f64,
    /// Power-tiebreak weight of the joint problem statement. Recorded for
    /// provenance; the heuristic is lexicographic and never evaluates it.
    pub nu: f64,
}

impl LinkBudget {
    pub fn new(p_tot: f64, r_target: f64, gamma: LinkGain) -> Result<Self> {
        let budget = LinkBudget {
            p_tot,
            r_target,
            gamma,
            epsilon: DEFAULT_EPSILON,
            nu: 1e-6,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        Error::require_finite("p_tot", self.p_tot)?;
        Error::require_finite("r_target", self.r_target)?;
        if self.p_tot <= 0.0 {
            return Err(Error::invalid("p_tot", format!("must be > 0, got {}", self.p_tot)));
        }
        if self.r_target <= 0.0 {
            return Err(Error::invalid(
                "r_target",
                format!("must be > 0, got {}", self.r_target),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.1) {
            return Err(Error::invalid(
                "epsilon",
                format!("must be in (0, 0.1], got {}", self.epsilon),
            ));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::invalid("nu", format!("must be >= 0, got {}", self.nu)));
        }
        Ok(())
    }
}

/// Admissible modulation range for the adjustment loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModBounds {
    pub m_min: ModulationLevel,
    pub m_max: ModulationLevel,
}

impl Default for ModBounds {
    fn default() -> Self {
        ModBounds {
            m_min: ModulationLevel::new(ber::MOD_MIN).expect("valid bound"),
            m_max: ModulationLevel::new(ber::MOD_MAX).expect("valid bound"),
        }
    }
}

/// Allocation method selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Apc,
    Ampc,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "apc" => Ok(Method::Apc),
            "ampc" => Ok(Method::Ampc),
            other => Err(Error::invalid("method", format!("unknown method `{other}`"))),
        }
    }
}

/// One symbol of an allocation: its modulation, power, and the slot range
/// it carries in the sorted (and zero-padded) bit stream. `slot_len`
/// equals the modulation's bits per symbol; `actual_bits` counts the
/// non-padding slots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymbolPlan {
    pub m: ModulationLevel,
    pub power: f64,
    pub slot_start: usize,
    pub slot_len: usize,
    pub actual_bits: usize,
    pub mu_bar: f64,
}

/// Per-frame assignment of modulation levels and powers.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationPlan {
    /// Index of the bundle entry this plan was computed for (0-based).
    pub k_star: usize,
    pub symbols: Vec<SymbolPlan>,
    /// Ascending-μ permutation: `sort_perm[rank]` is the original bit
    /// position of sorted rank `rank`.
    pub sort_perm: Vec<usize>,
    /// Number of information bits `NB`.
    pub nb: usize,
    pub m_init: ModulationLevel,
    /// Set when the fallback uniform power rescaling was applied.
    pub scaled: bool,
}

impl AllocationPlan {
    /// Symbol count `T`.
    pub fn symbol_count(&self) -> usize {
        self.symbols.len()
    }

    /// Total bit slots `Σ m_t = T·m_init`.
    pub fn slots(&self) -> usize {
        self.symbols.iter().map(|s| s.slot_len).sum()
    }

    /// Achieved rate `R = NB/T` in bits per channel use.
    pub fn rate(&self) -> f64 {
        self.nb as f64 / self.symbol_count() as f64
    }

    pub fn modulation_levels(&self) -> Vec<ModulationLevel> {
        self.symbols.iter().map(|s| s.m).collect()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.symbols.iter().map(|s| s.power).collect()
    }
}

/// Sum of per-symbol powers of a plan.
pub fn required_total_power(plan: &AllocationPlan) -> f64 {
    plan.symbols.iter().map(|s| s.power).sum()
}

/// Lowest even modulation level whose symbol count meets the rate target:
/// the smallest `m` with `⌈NB/m⌉ ≤ NB/R_target`.
pub fn initial_modulation(
    nb: usize,
    r_target: f64,
    bounds: &ModBounds,
) -> Result<ModulationLevel> {
    if nb == 0 {
        return Err(Error::invalid("nb", "must be >= 1"));
    }
    Error::require_finite("r_target", r_target)?;
    if r_target <= 0.0 {
        return Err(Error::invalid("r_target", format!("must be > 0, got {r_target}")));
    }
    let budget_symbols = nb as f64 / r_target;
    let mut bits = bounds.m_min.bits();
    while bits <= bounds.m_max.bits() {
        let symbols = nb.div_ceil(bits as usize);
        if symbols as f64 <= budget_symbols {
            return ModulationLevel::new(bits);
        }
        bits += 2;
    }
    Err(Error::InfeasibleRate {
        nb,
        r_target,
        m_max: bounds.m_max.bits(),
    })
}

/// Mean of the sorted μ values over a slot range, counting only actual
/// (non-padding) bits. Slot indices at or beyond `nb` are padding.
fn mean_actual(sorted_mu: &[f64], lo: usize, hi: usize) -> f64 {
    let nb = sorted_mu.len();
    let hi_actual = hi.min(nb.saturating_sub(1));
    debug_assert!(lo <= hi_actual, "group [{lo}, {hi}] holds no actual bits");
    let slice = &sorted_mu[lo..=hi_actual];
    slice.iter().sum::<f64>() / slice.len() as f64
}

/// Sort μ ascending and partition into `T = ⌈NB/m⌉` consecutive groups of
/// `m` bits (the last group short before padding). Returns the group
/// index sets over sorted positions and the per-group means over actual
/// bits.
pub fn group_and_average(
    mu: &BitFlipSet,
    m: ModulationLevel,
) -> (Vec<Vec<usize>>, Vec<f64>) {
    let nb = mu.len();
    let per = m.bits() as usize;
    let sorted = mu.sorted_values();
    let t_count = nb.div_ceil(per);
    let mut groups = Vec::with_capacity(t_count);
    let mut means = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let lo = t * per;
        let hi = ((t + 1) * per).min(nb);
        groups.push((lo..hi).collect());
        means.push(mean_actual(&sorted, lo, hi - 1));
    }
    (groups, means)
}

fn solve_group_power(mu_bar: f64, m: ModulationLevel, gamma: LinkGain) -> Result<f64> {
    ber::solve_power(mu_bar, m, gamma, DEFAULT_SOLVER_TOL)
}

/// APC: uniform modulation at the rate-minimal level, per-group power
/// from the inverse BER model on the group means.
pub fn apc_allocate(
    mu: &BitFlipSet,
    budget: &LinkBudget,
    bounds: &ModBounds,
) -> Result<AllocationPlan> {
    budget.validate()?;
    let nb = mu.len();
    let m_init = initial_modulation(nb, budget.r_target, bounds)?;
    let per = m_init.bits() as usize;
    let sorted = mu.sorted_values();
    let t_count = nb.div_ceil(per);
    let mut symbols = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let lo = t * per;
        let hi = (t + 1) * per - 1; // slot range; tail slots may be padding
        let mu_bar = mean_actual(&sorted, lo, hi);
        let power = solve_group_power(mu_bar, m_init, budget.gamma)?;
        symbols.push(SymbolPlan {
            m: m_init,
            power,
            slot_start: lo,
            slot_len: per,
            actual_bits: (hi.min(nb - 1) - lo) + 1,
            mu_bar,
        });
    }
    Ok(AllocationPlan {
        k_star: 0,
        symbols,
        sort_perm: mu.sort_perm().to_vec(),
        nb,
        m_init,
        scaled: false,
    })
}

/// AMPC adjustment walk over one symmetric group pair. Holds the current
/// slot ranges of the low group `[ls, le]` and high group `[hs, he]`.
struct PairState {
    ls: usize,
    le: usize,
    hs: usize,
    he: usize,
}

/// AMPC: start from the APC grouping and, for each symmetric pair of a
/// low-μ and a high-μ group, repeatedly move two bits from the low group
/// to the high group (modulation −2/+2) while that strictly reduces the
/// pair's combined power and the modulation bounds allow it. Odd symbol
/// counts leave the middle group untouched.
pub fn ampc_allocate(
    mu: &BitFlipSet,
    budget: &LinkBudget,
    bounds: &ModBounds,
) -> Result<AllocationPlan> {
    budget.validate()?;
    let nb = mu.len();
    let m_init = initial_modulation(nb, budget.r_target, bounds)?;
    let per = m_init.bits() as usize;
    let sorted = mu.sorted_values();
    let t_count = nb.div_ceil(per);
    let slots = t_count * per;
    let gamma = budget.gamma;

    let placeholder = SymbolPlan {
        m: m_init,
        power: 0.0,
        slot_start: 0,
        slot_len: 0,
        actual_bits: 0,
        mu_bar: 0.0,
    };
    let mut symbols = vec![placeholder; t_count];

    let mut state = PairState {
        ls: 0,
        le: per - 1,
        hs: slots - per,
        he: slots - 1,
    };
    let mut pair = 1usize;
    while pair <= t_count / 2 {
        let m_low = state.le - state.ls + 1;
        let m_high = state.he - state.hs + 1;
        let mu_low = mean_actual(&sorted, state.ls, state.le);
        let mu_high = mean_actual(&sorted, state.hs, state.he);
        let p_low = solve_group_power(mu_low, ModulationLevel::new(m_low as u32)?, gamma)?;
        let p_high = solve_group_power(mu_high, ModulationLevel::new(m_high as u32)?, gamma)?;

        // A shift is geometrically admissible when both adjusted levels
        // stay within bounds and the candidate ranges do not overlap.
        let within_bounds = m_low as u32 > bounds.m_min.bits() && (m_high as u32) < bounds.m_max.bits();
        let no_overlap = state.hs > state.le && state.le >= state.ls + 2;
        if within_bounds && no_overlap {
            let mu_low_adj = mean_actual(&sorted, state.ls, state.le - 2);
            let mu_high_adj = mean_actual(&sorted, state.hs - 2, state.he);
            let p_low_adj =
                solve_group_power(mu_low_adj, ModulationLevel::new(m_low as u32 - 2)?, gamma)?;
            let p_high_adj =
                solve_group_power(mu_high_adj, ModulationLevel::new(m_high as u32 + 2)?, gamma)?;
            if p_low_adj + p_high_adj < p_low + p_high {
                state.le -= 2;
                state.hs -= 2;
                continue;
            }
        }

        // Keep the current levels and advance to the next pair.
        symbols[pair - 1] = SymbolPlan {
            m: ModulationLevel::new(m_low as u32)?,
            power: p_low,
            slot_start: state.ls,
            slot_len: m_low,
            actual_bits: actual_in(nb, state.ls, state.le),
            mu_bar: mu_low,
        };
        symbols[t_count - pair] = SymbolPlan {
            m: ModulationLevel::new(m_high as u32)?,
            power: p_high,
            slot_start: state.hs,
            slot_len: m_high,
            actual_bits: actual_in(nb, state.hs, state.he),
            mu_bar: mu_high,
        };
        state.ls = state.le + 1;
        state.he = state.hs - 1;
        state.le = state.ls + per - 1;
        state.hs = state.he + 1 - per;
        pair += 1;
    }

    if t_count % 2 == 1 {
        let mid = t_count / 2;
        let (lo, hi) = if t_count == 1 {
            (0, slots - 1)
        } else {
            (state.ls, state.he)
        };
        let mu_bar = mean_actual(&sorted, lo, hi);
        symbols[mid] = SymbolPlan {
            m: m_init,
            power: solve_group_power(mu_bar, m_init, gamma)?,
            slot_start: lo,
            slot_len: hi - lo + 1,
            actual_bits: actual_in(nb, lo, hi),
            mu_bar,
        };
    }

    Ok(AllocationPlan {
        k_star: 0,
        symbols,
        sort_perm: mu.sort_perm().to_vec(),
        nb,
        m_init,
        scaled: false,
    })
}

fn actual_in(nb: usize, lo: usize, hi: usize) -> usize {
    if lo >= nb {
        0
    } else {
        hi.min(nb - 1) - lo + 1
    }
}

fn allocate(
    mu: &BitFlipSet,
    budget: &LinkBudget,
    bounds: &ModBounds,
    method: Method,
) -> Result<AllocationPlan> {
    match method {
        Method::Apc => apc_allocate(mu, budget, bounds),
        Method::Ampc => ampc_allocate(mu, budget, bounds),
    }
}

/// Minimum-index feasibility rule over a ladder of required powers:
/// the first entry fitting the budget, otherwise the last entry with the
/// uniform scale factor that forces it to fit.
pub fn select_index(p_sums: &[f64], p_tot: f64) -> (usize, Option<f64>) {
    assert!(!p_sums.is_empty(), "empty power ladder");
    for (k, &p) in p_sums.iter().enumerate() {
        if p <= p_tot {
            return (k, None);
        }
    }
    let last = p_sums.len() - 1;
    (last, Some(p_tot / p_sums[last]))
}

/// Outcome of pair selection over a trained ladder.
#[derive(Clone, Debug)]
pub struct PairSelection {
    pub plan: AllocationPlan,
    /// Required total power of every ladder entry, in entry order.
    pub p_sums: Vec<f64>,
    /// Whether the required powers were non-increasing along the ladder,
    /// as the minimum-index rule presumes. Violations are reported, never
    /// silently reordered.
    pub p_sum_monotone: bool,
}

/// Evaluate every ladder entry with the chosen method and pick the first
/// whose required power fits the budget. When none fits, the last entry
/// is kept with all powers scaled down uniformly and the plan flagged.
pub fn select_pair(
    mu_sets: &[&BitFlipSet],
    budget: &LinkBudget,
    bounds: &ModBounds,
    method: Method,
) -> Result<PairSelection> {
    if mu_sets.is_empty() {
        return Err(Error::invalid("mu_sets", "need at least one entry"));
    }
    let mut plans = Vec::with_capacity(mu_sets.len());
    let mut p_sums = Vec::with_capacity(mu_sets.len());
    for mu in mu_sets {
        let plan = allocate(mu, budget, bounds, method)?;
        p_sums.push(required_total_power(&plan));
        plans.push(plan);
    }
    let p_sum_monotone = p_sums.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let (k_star, scale) = select_index(&p_sums, budget.p_tot);
    let mut plan = plans.swap_remove(k_star);
    plan.k_star = k_star;
    if let Some(scale) = scale {
        for s in &mut plan.symbols {
            s.power *= scale;
        }
        plan.scaled = true;
    }
    Ok(PairSelection {
        plan,
        p_sums,
        p_sum_monotone,
    })
}

/// Permute bits into ascending-μ order: output rank `r` carries the bit
/// whose original position is `sort_perm[r]`.
pub fn apply_sort(bits: &[u8], plan: &AllocationPlan) -> Result<Vec<u8>> {
    if bits.len() != plan.sort_perm.len() {
        return Err(Error::LengthMismatch {
            what: "bits",
            expected: plan.sort_perm.len(),
            got: bits.len(),
        });
    }
    Ok(plan.sort_perm.iter().map(|&i| bits[i]).collect())
}

/// Inverse of [`apply_sort`].
pub fn restore_order(bits: &[u8], plan: &AllocationPlan) -> Result<Vec<u8>> {
    if bits.len() != plan.sort_perm.len() {
        return Err(Error::LengthMismatch {
            what: "bits",
            expected: plan.sort_perm.len(),
            got: bits.len(),
        });
    }
    let mut out = vec![0u8; bits.len()];
    for (rank, &original) in plan.sort_perm.iter().enumerate() {
        out[original] = bits[rank];
    }
    Ok(out)
}

/// Per-group verdict of a Monte Carlo matching check.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GroupMatch {
    pub group: usize,
    pub m: u32,
    pub power: f64,
    pub mu_bar: f64,
    pub empirical: f64,
    pub std_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Monte Carlo verification that each group's realized BER matches its
/// trained mean.
#[derive(Clone, Debug, Serialize)]
pub struct MatchingReport {
    pub groups: Vec<GroupMatch>,
    pub all_pass: bool,
}

/// Verify the BER matching condition group by group: simulate each
/// symbol's `(p_t, m_t)` through the physical chain and require the
/// empirical BER within `max(rel_epsilon·μ̄_t, floor, 3·std_error)` of
/// `μ̄_t`.
pub fn verify_matching(
    plan: &AllocationPlan,
    gamma: LinkGain,
    rel_epsilon: f64,
    floor: f64,
    n_bits_per_group: usize,
    seed: u64,
) -> Result<MatchingReport> {
    if !(rel_epsilon > 0.0 && rel_epsilon <= 0.1) {
        return Err(Error::invalid(
            "rel_epsilon",
            format!("must be in (0, 0.1], got {rel_epsilon}"),
        ));
    }
    let mut groups = Vec::with_capacity(plan.symbols.len());
    let mut all_pass = true;
    for (t, symbol) in plan.symbols.iter().enumerate() {
        let (empirical, std_error) = phy::monte_carlo_ber(
            symbol.power,
            symbol.m,
            gamma,
            n_bits_per_group,
            seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )?;
        let tolerance = (rel_epsilon * symbol.mu_bar).max(floor).max(3.0 * std_error);
        let pass = (empirical - symbol.mu_bar).abs() <= tolerance;
        all_pass &= pass;
        groups.push(GroupMatch {
            group: t,
            m: symbol.m.bits(),
            power: symbol.power,
            mu_bar: symbol.mu_bar,
            empirical,
            std_error,
            tolerance,
            pass,
        });
    }
    Ok(MatchingReport { groups, all_pass })
}

/// Plan summary serialized alongside the per-symbol CSV.
#[derive(Clone, Debug, Serialize)]
pub struct PlanSummary {
    pub k_star: usize,
    pub symbol_count: usize,
    pub p_sum: f64,
    pub rate: f64,
    pub scaled: bool,
}

impl PlanSummary {
    pub fn of(plan: &AllocationPlan) -> Self {
        PlanSummary {
            k_star: plan.k_star,
            symbol_count: plan.symbol_count(),
            p_sum: required_total_power(plan),
            rate: plan.rate(),
            scaled: plan.scaled,
        }
    }
}

/// Write the per-symbol CSV `(t, m_t, p_t, group_id, mu_bar)`.
pub fn write_plan_csv<W: Write>(plan: &AllocationPlan, mut out: W) -> Result<()> {
    writeln!(out, "# blindsc plan v1")?;
    writeln!(out, "t,m,p,group_id,mu_bar")?;
    for (t, s) in plan.symbols.iter().enumerate() {
        writeln!(out, "{},{},{},{},{}", t, s.m.bits(), s.power, t, s.mu_bar)?;
    }
    Ok(())
}

/// Write plan CSV and JSON summary into a directory.
pub fn save_plan(plan: &AllocationPlan, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let file = std::fs::File::create(dir.join("plan.csv"))?;
    write_plan_csv(plan, file)?;
    let summary = serde_json::to_string_pretty(&PlanSummary::of(plan))
        .map_err(|e| Error::invalid("plan", e.to_string()))?;
    std::fs::write(dir.join("summary.json"), summary)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gain(g: f64) -> LinkGain {
        LinkGain::new(g).unwrap()
    }

    fn budget(p_tot: f64, r_target: f64, g: f64) -> LinkBudget {
        LinkBudget::new(p_tot, r_target, gain(g)).unwrap()
    }

    fn uniform_mu(n: usize, lo: f64, hi: f64, seed: u64) -> BitFlipSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BitFlipSet::new((0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn initial_modulation_examples() {
        let bounds = ModBounds::default();
        assert_eq!(initial_modulation(16, 4.0, &bounds).unwrap().bits(), 4);
        assert_eq!(initial_modulation(17, 4.0, &bounds).unwrap().bits(), 6);
        assert_eq!(initial_modulation(100, 2.0, &bounds).unwrap().bits(), 2);
        assert!(matches!(
            initial_modulation(16, 11.0, &bounds),
            Err(Error::InfeasibleRate { .. })
        ));
    }

    #[test]
    fn group_and_average_examples() {
        let mu = BitFlipSet::new(vec![0.2, 0.01, 0.1, 0.02]).unwrap();
        let m = ModulationLevel::new(2).unwrap();
        let (groups, means) = group_and_average(&mu, m);
        assert_eq!(groups, vec![vec![0, 1], vec![2, 3]]);
        assert!((means[0] - 0.015).abs() < 1e-15);
        assert!((means[1] - 0.15).abs() < 1e-15);

        // all equal
        let mu = BitFlipSet::new(vec![0.07; 6]).unwrap();
        let (_, means) = group_and_average(&mu, m);
        assert!(means.iter().all(|&v| (v - 0.07).abs() < 1e-15));

        // NB=5, m=2 → T=3, last group short
        let mu = BitFlipSet::new(vec![0.1, 0.2, 0.3, 0.4, 0.45]).unwrap();
        let (groups, means) = group_and_average(&mu, m);
        assert_eq!(groups.len(), 3);
        assert_eq!(groups[2], vec![4]);
        assert!((means[2] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn apc_matches_by_construction() {
        let mu = uniform_mu(16, 0.01, 0.2, 3);
        let plan = apc_allocate(&mu, &budget(1e6, 4.0, 1.0), &ModBounds::default()).unwrap();
        assert_eq!(plan.symbol_count(), 4);
        for s in &plan.symbols {
            let realized = ber::ber(s.power, s.m, gain(1.0)).unwrap();
            assert!((realized - s.mu_bar).abs() <= 1e-9);
        }
    }

    #[test]
    fn apc_scales_inversely_with_gamma() {
        let mu = uniform_mu(16, 0.01, 0.2, 4);
        let base = apc_allocate(&mu, &budget(1e6, 4.0, 1.0), &ModBounds::default()).unwrap();
        let doubled = apc_allocate(&mu, &budget(1e6, 4.0, 2.0), &ModBounds::default()).unwrap();
        for (a, b) in base.symbols.iter().zip(&doubled.symbols) {
            assert_eq!(a.m, b.m);
            assert_eq!(a.power, 2.0 * b.power);
        }
    }

    #[test]
    fn apc_power_vanishes_as_mu_approaches_half() {
        let mu = BitFlipSet::new(vec![0.5 - 1e-12; 8]).unwrap();
        let plan = apc_allocate(&mu, &budget(1e6, 2.0, 1.0), &ModBounds::default()).unwrap();
        assert!(required_total_power(&plan) < 1e-6);
    }

    #[test]
    fn ampc_no_shift_for_equal_mu() {
        let mu = BitFlipSet::new(vec![0.07; 8]).unwrap();
        let b = budget(1e6, 4.0, 1.0);
        let apc = apc_allocate(&mu, &b, &ModBounds::default()).unwrap();
        let ampc = ampc_allocate(&mu, &b, &ModBounds::default()).unwrap();
        assert_eq!(apc.modulation_levels(), ampc.modulation_levels());
        assert_eq!(apc.powers(), ampc.powers());
    }

    #[test]
    fn ampc_conserves_slots_and_rate() {
        for &nb in &[16usize, 17, 23, 64, 256] {
            let mu = uniform_mu(nb, 0.005, 0.45, nb as u64);
            let b = budget(1e6, 4.0, 1.0);
            let plan = ampc_allocate(&mu, &b, &ModBounds::default()).unwrap();
            let t = plan.symbol_count();
            assert_eq!(plan.slots(), t * plan.m_init.bits() as usize);
            assert!(plan.rate() >= b.r_target - 1e-12);
            // groups tile the slot range in symbol order
            let mut cursor = 0;
            for s in &plan.symbols {
                assert_eq!(s.slot_start, cursor);
                assert_eq!(s.slot_len, s.m.bits() as usize);
                cursor += s.slot_len;
            }
            assert_eq!(cursor, plan.slots());
        }
    }

    #[test]
    fn ampc_never_worse_and_modulation_monotone() {
        let b = budget(1e6, 4.0, 1.0);
        for seed in 0..60u64 {
            for &nb in &[16usize, 64] {
                let mu = uniform_mu(nb, 0.005, 0.45, 1000 + seed * 7 + nb as u64);
                let apc = apc_allocate(&mu, &b, &ModBounds::default()).unwrap();
                let ampc = ampc_allocate(&mu, &b, &ModBounds::default()).unwrap();
                let pa = required_total_power(&apc);
                let pm = required_total_power(&ampc);
                assert!(pm <= pa * (1.0 + 1e-12), "seed {seed} nb {nb}: {pm} > {pa}");
                let ms = ampc.modulation_levels();
                assert!(
                    ms.windows(2).all(|w| w[0] <= w[1]),
                    "modulation not monotone: {ms:?}"
                );
            }
        }
    }

    #[test]
    fn ampc_plan_matches_by_construction() {
        let mu = uniform_mu(64, 0.005, 0.3, 9);
        let plan = ampc_allocate(&mu, &budget(1e6, 4.0, 1.0), &ModBounds::default()).unwrap();
        for s in &plan.symbols {
            let realized = ber::ber(s.power, s.m, gain(1.0)).unwrap();
            assert!((realized - s.mu_bar).abs() <= 1e-9);
        }
    }

    #[test]
    fn ampc_respects_modulation_bounds() {
        let mut values = vec![0.001; 32];
        values.extend(vec![0.45; 32]);
        let mu = BitFlipSet::new(values).unwrap();
        let bounds = ModBounds {
            m_min: ModulationLevel::new(2).unwrap(),
            m_max: ModulationLevel::new(6).unwrap(),
        };
        let plan = ampc_allocate(&mu, &budget(1e6, 4.0, 1.0), &bounds).unwrap();
        for s in &plan.symbols {
            assert!(s.m.bits() >= 2 && s.m.bits() <= 6);
        }
    }

    #[test]
    fn select_index_rule() {
        assert_eq!(select_index(&[150.0, 90.0, 40.0], 100.0), (1, None));
        assert_eq!(select_index(&[150.0, 90.0, 40.0], 1e12), (0, None));
        let (k, scale) = select_index(&[150.0, 140.0, 130.0], 100.0);
        assert_eq!(k, 2);
        assert!((scale.unwrap() - 100.0 / 130.0).abs() < 1e-15);
    }

    #[test]
    fn select_pair_applies_fallback_scaling() {
        // γ so small every ladder entry exceeds the budget
        let sets = [
            uniform_mu(16, 0.01, 0.05, 1),
            uniform_mu(16, 0.1, 0.2, 2),
            uniform_mu(16, 0.3, 0.45, 3),
        ];
        let refs: Vec<&BitFlipSet> = sets.iter().collect();
        let b = budget(1.0, 4.0, 1e-6);
        let sel = select_pair(&refs, &b, &ModBounds::default(), Method::Apc).unwrap();
        assert_eq!(sel.plan.k_star, 2);
        assert!(sel.plan.scaled);
        assert!((required_total_power(&sel.plan) - b.p_tot).abs() < 1e-9);
        assert!(sel.p_sum_monotone);
    }

    #[test]
    fn select_pair_prefers_first_feasible() {
        let sets = [
            uniform_mu(16, 0.01, 0.05, 1),
            uniform_mu(16, 0.1, 0.2, 2),
            uniform_mu(16, 0.3, 0.45, 3),
        ];
        let refs: Vec<&BitFlipSet> = sets.iter().collect();
        let sel = select_pair(&refs, &budget(1e9, 4.0, 1.0), &ModBounds::default(), Method::Ampc)
            .unwrap();
        assert_eq!(sel.plan.k_star, 0);
        assert!(!sel.plan.scaled);
    }

    #[test]
    fn sort_round_trip() {
        let mu = uniform_mu(32, 0.01, 0.4, 5);
        let plan = apc_allocate(&mu, &budget(1e6, 4.0, 1.0), &ModBounds::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bits: Vec<u8> = (0..32).map(|_| u8::from(rng.gen::<bool>())).collect();
        let sorted = apply_sort(&bits, &plan).unwrap();
        let restored = restore_order(&sorted, &plan).unwrap();
        assert_eq!(restored, bits);
        // sorted stream aligns bit rank with μ rank
        let sorted_mu = mu.sorted_values();
        for (rank, &orig) in plan.sort_perm.iter().enumerate() {
            assert_eq!(mu.values()[orig], sorted_mu[rank]);
        }
        assert!(apply_sort(&bits[..3], &plan).is_err());
    }

    #[test]
    fn verify_matching_flags_power_deficit() {
        let mu = uniform_mu(8, 0.05, 0.2, 8);
        let b = budget(1e6, 2.0, 1.0);
        let plan = apc_allocate(&mu, &b, &ModBounds::default()).unwrap();
        let ok = verify_matching(&plan, gain(1.0), 0.05, 1e-4, 40_000, 17).unwrap();
        assert!(ok.all_pass);
        let mut broken = plan.clone();
        for s in &mut broken.symbols {
            s.power *= 0.5;
        }
        let bad = verify_matching(&broken, gain(1.0), 0.05, 1e-4, 40_000, 17).unwrap();
        assert!(bad.groups.iter().all(|g| !g.pass));
    }

    #[test]
    fn plan_csv_layout() {
        let mu = uniform_mu(8, 0.05, 0.2, 8);
        let plan = apc_allocate(&mu, &budget(1e6, 2.0, 1.0), &ModBounds::default()).unwrap();
        let mut buf = Vec::new();
        write_plan_csv(&plan, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# blindsc plan v1");
        assert_eq!(lines.next().unwrap(), "t,m,p,group_id,mu_bar");
        assert_eq!(lines.count(), plan.symbol_count());
    }
}
