//! Closed-form bit-error-rate model of Gray-mapped square QAM and its
//! numerical inverse.
//!
//! The forward model is the standard two-term erfc approximation for the
//! bit error probability of a Gray-labelled `2^m`-QAM symbol received with
//! transmit power `p` over a channel with gain-to-noise ratio `gamma`:
//!
//! ```text
//! BER(p, m, γ) = (√M−1)/(√M·log2 √M) · erfc(√(3pγ / (2(M−1))))
//!              + (√M−2)/(√M·log2 √M) · erfc(3√(3pγ / (2(M−1))))
//! ```
//!
//! with `M = 2^m`. The formula is exact for QPSK (`m = 2`) and a tight
//! approximation for higher orders. It depends on `p` and `gamma` only
//! through the product `p·gamma`, which the inverse solver exploits: the
//! root is found once at unit gain and rescaled, so power scales exactly
//! as `1/gamma`.

use crate::error::{Error, Result};

/// Smallest supported bits-per-symbol (QPSK).
pub const MOD_MIN: u32 = 2;
/// Largest supported bits-per-symbol (1024-QAM).
pub const MOD_MAX: u32 = 10;

/// Modulation level of a square QAM constellation, counted in bits per
/// symbol. Always even and within `[MOD_MIN, MOD_MAX]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModulationLevel(u32);

impl ModulationLevel {
    pub fn new(bits: u32) -> Result<Self> {
        if bits % 2 != 0 || !(MOD_MIN..=MOD_MAX).contains(&bits) {
            return Err(Error::InvalidModulation {
                m: bits,
                min: MOD_MIN,
                max: MOD_MAX,
            });
        }
        Ok(ModulationLevel(bits))
    }

    /// Bits carried per symbol.
    pub fn bits(self) -> u32 {
        self.0
    }

    /// Constellation size `M = 2^m`.
    pub fn order(self) -> u32 {
        1 << self.0
    }

    /// Points per axis of the square grid, `√M`.
    pub fn side(self) -> u32 {
        1 << (self.0 / 2)
    }
}

impl std::fmt::Display for ModulationLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Channel-gain-to-noise-power ratio `γ = |h|²/σ²`. Strictly positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkGain(f64);

impl LinkGain {
    pub fn new(gamma: f64) -> Result<Self> {
        Error::require_finite("gamma", gamma)?;
        if gamma <= 0.0 {
            return Err(Error::invalid("gamma", format!("must be > 0, got {gamma}")));
        }
        Ok(LinkGain(gamma))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

const FRAC_2_SQRT_PI: f64 = 1.128_379_167_095_512_6;

/// Complementary error function, `erfc(x) = 1 − 2/√π ∫₀ˣ e^{−u²} du`.
///
/// Uses the positive-term Maclaurin series for `|x| < 2` and a Lentz-style
/// continued fraction for `|x| ≥ 2`; absolute error below `1e-14` over the
/// real line. Rejects non-finite input.
pub fn erfc(x: f64) -> Result<f64> {
    Error::require_finite("x", x)?;
    Ok(erfc_raw(x))
}

pub(crate) fn erfc_raw(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc_raw(-x);
    }
    if x < 2.0 {
        1.0 - erf_series(x)
    } else {
        erfc_cf(x)
    }
}

/// erf by the cancellation-free series
/// `erf(x) = 2x·e^{−x²}/√π · Σ_{n≥0} (2x²)^n / (1·3·…·(2n+1))`.
fn erf_series(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let x2 = x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut odd = 1.0;
    for _ in 0..200 {
        odd += 2.0;
        term *= 2.0 * x2 / odd;
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    FRAC_2_SQRT_PI * x * (-x2).exp() * sum
}

/// erfc by the continued fraction
/// `√π·e^{x²}·erfc(x) = 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))`,
/// evaluated with the modified Lentz algorithm. Valid for `x ≥ 2`.
fn erfc_cf(x: f64) -> f64 {
    let scale = (-x * x).exp();
    if scale == 0.0 {
        // erfc underflows to zero near x ≈ 27.
        return 0.0;
    }
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..300 {
        let a = n as f64 / 2.0;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    scale / (f * std::f64::consts::PI.sqrt())
}

fn ber_coefficients(m: ModulationLevel) -> (f64, f64, f64) {
    let order = f64::from(m.order());
    let side = f64::from(m.side());
    let bits_per_axis = f64::from(m.bits()) / 2.0;
    let c1 = (side - 1.0) / (side * bits_per_axis);
    let c2 = (side - 2.0) / (side * bits_per_axis);
    // erfc argument is √(3pγ / (2(M−1))) = √(arg_scale · pγ)
    let arg_scale = 3.0 / (2.0 * (order - 1.0));
    (c1, c2, arg_scale)
}

/// Approximate BER of Gray-mapped square QAM at transmit power `p`.
///
/// Strictly decreasing in `p·gamma`; `p = 0` yields [`max_ber`].
pub fn ber(p: f64, m: ModulationLevel, gamma: LinkGain) -> Result<f64> {
    Error::require_finite("p", p)?;
    if p < 0.0 {
        return Err(Error::invalid("p", format!("power must be >= 0, got {p}")));
    }
    Ok(ber_raw(p * gamma.value(), m))
}

/// BER as a function of the product `p·gamma`.
fn ber_raw(p_gamma: f64, m: ModulationLevel) -> f64 {
    let (c1, c2, arg_scale) = ber_coefficients(m);
    let a = (arg_scale * p_gamma).sqrt();
    c1 * erfc_raw(a) + c2 * erfc_raw(3.0 * a)
}

/// BER ceiling of a modulation level: the value of the formula at zero
/// power. Any target strictly below it is reachable.
pub fn max_ber(m: ModulationLevel) -> f64 {
    let (c1, c2, _) = ber_coefficients(m);
    c1 + c2
}

/// Default residual tolerance of [`solve_power`].
pub const DEFAULT_SOLVER_TOL: f64 = 1e-12;

const MAX_DOUBLINGS: u32 = 200;
const MAX_BISECTIONS: u32 = 2_000;

/// Transmit power required so that `ber(p, m, gamma)` equals `mu_target`
/// to within `tol`.
///
/// The target must lie in the open interval `(0, max_ber(m))`; anything
/// at or above the ceiling is a hard error rather than a clamp. A bracket
/// is found by doubling an upper bound from 1 until the BER drops below
/// the target, then refined by bisection. The root is solved at unit gain
/// and divided by `gamma`, so `solve_power(μ, m, c·γ)·c` equals
/// `solve_power(μ, m, γ)` exactly.
pub fn solve_power(mu_target: f64, m: ModulationLevel, gamma: LinkGain, tol: f64) -> Result<f64> {
    Error::require_finite("mu_target", mu_target)?;
    Error::require_finite("tol", tol)?;
    if tol <= 0.0 {
        return Err(Error::invalid("tol", format!("must be > 0, got {tol}")));
    }
    let ceiling = max_ber(m);
    if mu_target <= 0.0 || mu_target >= ceiling {
        return Err(Error::InfeasibleBerTarget {
            target: mu_target,
            m: m.bits(),
            ceiling,
        });
    }

    let mut hi = 1.0;
    let mut doublings = 0;
    while ber_raw(hi, m) >= mu_target {
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::invalid(
                "mu_target",
                format!("no bracket below target {mu_target} after {MAX_DOUBLINGS} doublings"),
            ));
        }
    }
    let mut lo = 0.0;
    let mut mid = 0.5 * hi;
    for _ in 0..MAX_BISECTIONS {
        mid = 0.5 * (lo + hi);
        let b = ber_raw(mid, m);
        if (b - mu_target).abs() <= tol {
            return Ok(mid / gamma.value());
        }
        if b > mu_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * mid {
            break;
        }
    }
    // Bracket exhausted at f64 resolution; the residual is as small as the
    // formula permits.
    Ok(mid / gamma.value())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(bits: u32) -> ModulationLevel {
        ModulationLevel::new(bits).unwrap()
    }

    fn g(gamma: f64) -> LinkGain {
        LinkGain::new(gamma).unwrap()
    }

    /// Independent erfc oracle: Gauss–Legendre quadrature of the defining
    /// integral on [0, x], 80 nodes per unit subinterval.
    fn erfc_quadrature(x: f64) -> f64 {
        // 20-point Gauss-Legendre nodes/weights on [-1, 1] (positive half;
        // symmetric).
        const NODES: [f64; 10] = [
            0.076526521133497333,
            0.227785851141645078,
            0.373706088715419561,
            0.510867001950827098,
            0.636053680726515025,
            0.746331906460150793,
            0.839116971822218823,
            0.912234428251325906,
            0.963971927277913791,
            0.993128599185094925,
        ];
        const WEIGHTS: [f64; 10] = [
            0.152753387130725851,
            0.149172986472603747,
            0.142096109318382051,
            0.131688638449176627,
            0.118194531961518417,
            0.101930119817240435,
            0.083276741576704749,
            0.062672048334109064,
            0.040601429800386941,
            0.017614007139152118,
        ];
        let steps = (x.abs().ceil() as usize).max(1) * 4;
        let h = x / steps as f64;
        let mut integral = 0.0;
        for s in 0..steps {
            let a = s as f64 * h;
            let c = a + 0.5 * h;
            let half = 0.5 * h;
            for i in 0..10 {
                for sign in [-1.0, 1.0] {
                    let t = c + sign * half * NODES[i];
                    integral += WEIGHTS[i] * half * (-t * t).exp();
                }
            }
        }
        1.0 - FRAC_2_SQRT_PI * integral
    }

    #[test]
    fn modulation_level_validation() {
        assert!(ModulationLevel::new(2).is_ok());
        assert!(ModulationLevel::new(10).is_ok());
        assert!(ModulationLevel::new(3).is_err());
        assert!(ModulationLevel::new(0).is_err());
        assert!(ModulationLevel::new(12).is_err());
    }

    #[test]
    fn erfc_reference_points() {
        // Frozen from a 30-digit evaluation of the defining integral.
        assert_eq!(erfc(0.0).unwrap(), 1.0);
        assert!((erfc(1.0).unwrap() - 0.157299207050285131).abs() < 1e-14);
        assert!((erfc(3.0).unwrap() - 2.20904969985854414e-5).abs() < 1e-18);
        assert!((erfc(0.5).unwrap() - 0.479500122186953462).abs() < 1e-14);
        assert!((erfc(2.0).unwrap() - 4.67773498104726584e-3).abs() < 1e-16);
        assert!((erfc(5.0).unwrap() - 1.53745979442803485e-12).abs() < 1e-24);
        assert!((erfc(-1.0).unwrap() - 1.842700792949714869).abs() < 1e-14);
        assert!(erfc(30.0).unwrap() < 1e-300);
        assert!(erfc(f64::NAN).is_err());
        assert!(erfc(f64::INFINITY).is_err());
    }

    #[test]
    fn erfc_matches_quadrature_oracle() {
        let mut x = -6.0;
        while x <= 8.0 {
            let want = erfc_quadrature(x);
            let got = erfc_raw(x);
            assert!(
                (got - want).abs() <= 1e-12,
                "erfc({x}): got {got}, oracle {want}"
            );
            x += 0.31;
        }
    }

    #[test]
    fn erfc_symmetry_and_monotonicity() {
        let mut prev = f64::INFINITY;
        let mut x = -5.0;
        while x <= 5.0 {
            let v = erfc_raw(x);
            assert!((v + erfc_raw(-x) - 2.0).abs() < 1e-12, "symmetry at {x}");
            assert!(v < prev, "not strictly decreasing at {x}");
            prev = v;
            x += 0.173;
        }
    }

    #[test]
    fn ber_known_values() {
        // QPSK at zero power: erfc(0)/2 with a vanishing second term.
        assert_eq!(ber(0.0, m(2), g(1.0)).unwrap(), 0.5);
        // 16-QAM coefficient sum 3/8 + 1/4.
        assert!((ber(0.0, m(4), g(1.0)).unwrap() - 0.625).abs() < 1e-15);
        // 0.5·erfc(√2), frozen from the quadrature oracle.
        assert!((ber(4.0, m(2), g(1.0)).unwrap() - 0.0227501319481792072).abs() < 1e-14);
        // (3/8)·erfc(1) + (1/4)·erfc(3).
        assert!((ber(10.0, m(4), g(1.0)).unwrap() - 0.0589927252681065704).abs() < 1e-14);
    }

    #[test]
    fn ber_depends_on_product_only() {
        for &(p, gamma) in &[(4.0, 1.0), (2.0, 2.0), (8.0, 0.5), (1.0, 4.0)] {
            let v = ber(p, m(4), g(gamma)).unwrap();
            let reference = ber(4.0, m(4), g(1.0)).unwrap();
            assert!((v - reference).abs() < 1e-15);
        }
    }

    #[test]
    fn ber_rejects_bad_power() {
        assert!(ber(-1.0, m(2), g(1.0)).is_err());
        assert!(ber(f64::NAN, m(2), g(1.0)).is_err());
    }

    #[test]
    fn max_ber_values() {
        assert_eq!(max_ber(m(2)), 0.5);
        assert!((max_ber(m(4)) - 0.625).abs() < 1e-15);
        // (√64−1)/(8·3) + (√64−2)/(8·3) = 13/24
        assert!((max_ber(m(6)) - 13.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn solve_power_round_trip_examples() {
        let p = solve_power(0.5 - 1e-15, m(2), g(1.0), 1e-12);
        // A target inside (0, 0.5) but essentially at the ceiling needs
        // essentially zero power.
        assert!(p.unwrap() < 1e-10);

        let p = solve_power(0.0227501319481792072, m(2), g(1.0), 1e-13).unwrap();
        assert!((p - 4.0).abs() < 1e-9, "got {p}");

        // Halved gain doubles the power, exactly.
        for &mu in &[0.3, 0.05, 1e-3] {
            for &bits in &[2u32, 4, 6, 8, 10] {
                let p1 = solve_power(mu, m(bits), g(1.0), 1e-12).unwrap();
                let p2 = solve_power(mu, m(bits), g(2.0), 1e-12).unwrap();
                assert_eq!(p1, 2.0 * p2);
            }
        }
    }

    #[test]
    fn solve_power_rejects_infeasible() {
        assert!(matches!(
            solve_power(0.5, m(2), g(1.0), 1e-12),
            Err(Error::InfeasibleBerTarget { .. })
        ));
        assert!(solve_power(0.7, m(4), g(1.0), 1e-12).is_err());
        assert!(solve_power(0.0, m(2), g(1.0), 1e-12).is_err());
        assert!(solve_power(0.1, m(2), g(1.0), 0.0).is_err());
        assert!(solve_power(0.1, m(2), g(1.0), -1.0).is_err());
    }

    #[test]
    fn solve_power_monotone_in_target() {
        let mut prev = f64::INFINITY;
        for i in 1..40 {
            let mu = i as f64 * 0.0124;
            let p = solve_power(mu, m(4), g(1.0), 1e-12).unwrap();
            assert!(p < prev, "power not decreasing at mu={mu}");
            prev = p;
        }
    }
}
