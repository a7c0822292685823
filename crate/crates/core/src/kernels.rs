//! Deterministic, seedable statistical primitives shared by all samplers:
//! normal CDF/quantile, truncated-normal sampling, Dirichlet and categorical
//! sampling, and the log-Beta function.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Φ(x) for finite x, to within 1e-12 absolute error.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("std_normal_cdf: non-finite input {x}")));
    }
    Ok(phi(x))
}

/// Unchecked Φ(x) fast path; callers guarantee a finite argument.
#[inline]
pub fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// log Φ(x), stable far into the lower tail.
pub fn log_phi(x: f64) -> f64 {
    if x > -37.0 {
        phi(x).ln()
    } else {
        // Asymptotic tail expansion of the Mills ratio.
        let x2 = x * x;
        -0.5 * x2 - LN_SQRT_2PI - (-x).ln() + (-1.0 / x2 + 3.0 / (x2 * x2)).ln_1p()
    }
}

/// Φ⁻¹(p) via Wichura's PPND16 rational approximations.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("std_normal_quantile: p={p} outside (0,1)")));
    }
    Ok(inv_phi(p))
}

pub fn inv_phi(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&PPND_A, r) / poly(&PPND_B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let s = r - 1.6;
        poly(&PPND_C, s) / poly(&PPND_D, s)
    } else {
        let s = r - 5.0;
        poly(&PPND_E, s) / poly(&PPND_F, s)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[inline]
fn poly(coeff: &[f64; 8], x: f64) -> f64 {
    let mut acc = coeff[7];
    for c in coeff[..7].iter().rev() {
        acc = acc * x + c;
    }
    acc
}

const PPND_A: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const PPND_B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const PPND_C: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const PPND_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const PPND_E: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const PPND_F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

/// Which side of zero a truncated-normal draw must land on; chosen by the
/// binary outcome in the data-augmentation step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TruncationSide {
    /// Support (0, ∞).
    Positive,
    /// Support (−∞, 0].
    Nonpositive,
}

impl TruncationSide {
    #[inline]
    pub fn from_outcome(y: u8) -> Self {
        if y > 0 {
            TruncationSide::Positive
        } else {
            TruncationSide::Nonpositive
        }
    }
}

/// Draw from N(mean, sd²) restricted to one side of zero.
pub fn sample_truncated_normal(
    mean: f64,
    sd: f64,
    side: TruncationSide,
    rng: &mut RngStream,
) -> Result<f64> {
    if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
        return Err(Error::domain(format!(
            "sample_truncated_normal: invalid mean={mean} sd={sd}"
        )));
    }
    Ok(match side {
        TruncationSide::Positive => mean + sd * std_normal_lower_truncated(-mean / sd, rng),
        TruncationSide::Nonpositive => mean - sd * std_normal_lower_truncated(mean / sd, rng),
    })
}

/// Standard normal conditioned on z > a. Inverse CDF while the cut is within
/// 4 sd of the mode, Robert's exponential rejection in the far tail (no
/// rejection stalls, no tail cancellation).
fn std_normal_lower_truncated(a: f64, rng: &mut RngStream) -> f64 {
    if a <= 4.0 {
        // Work in the upper tail so the quantile argument never cancels.
        let tail = 0.5 * libm::erfc(a / SQRT_2);
        loop {
            let u = rng.next_unit_open();
            let z = -inv_phi((u * tail).min(1.0 - f64::EPSILON / 2.0));
            if z > a {
                return z;
            }
            // Rounding at the boundary: retry rather than return z = a.
        }
    } else {
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let z = a - rng.next_unit_open().ln() / lambda;
            let d = z - lambda;
            if rng.next_unit_open() <= (-0.5 * d * d).exp() {
                return z;
            }
        }
    }
}

/// One standard normal draw.
#[inline]
pub fn sample_std_normal(rng: &mut RngStream) -> f64 {
    StandardNormal.sample(rng)
}

/// Dirichlet draw by gamma normalization.
pub fn sample_dirichlet(concentrations: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    if concentrations.is_empty() {
        return Err(Error::domain("sample_dirichlet: empty concentration vector"));
    }
    for &c in concentrations {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::domain(format!("sample_dirichlet: concentration {c} must be > 0")));
        }
    }
    if concentrations.len() == 1 {
        return Ok(vec![1.0]);
    }
    for _attempt in 0..100 {
        let draws: Vec<f64> = concentrations
            .iter()
            .map(|&c| Gamma::new(c, 1.0).expect("validated shape").sample(rng))
            .collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return Ok(draws.iter().map(|g| g / total).collect());
        }
        // All gamma draws underflowed to zero; retry with fresh randomness.
    }
    Err(Error::sampler("sample_dirichlet: gamma draws underflowed repeatedly"))
}

/// Sample an index with P[k] ∝ exp(logw[k]), normalized by max-subtraction.
pub fn sample_categorical_from_logweights(logw: &[f64], rng: &mut RngStream) -> Result<usize> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if logw.is_empty() || !max.is_finite() {
        return Err(Error::domain(
            "sample_categorical_from_logweights: no finite log-weight",
        ));
    }
    if logw.iter().any(|w| w.is_nan()) {
        return Err(Error::domain("sample_categorical_from_logweights: NaN log-weight"));
    }
    let weights: Vec<f64> = logw.iter().map(|&w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut target = rng.next_unit_open() * total;
    for (k, w) in weights.iter().enumerate() {
        target -= w;
        if target <= 0.0 {
            return Ok(k);
        }
    }
    Ok(weights.len() - 1)
}

/// ln B(a, b) = ln Γ(a) + ln Γ(b) − ln Γ(a+b).
pub fn log_beta_fn(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain(format!("log_beta_fn: arguments must be positive, got ({a}, {b})")));
    }
    Ok(ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b))
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma_r(x).0
}

/// ln C(n, k) for 0 ≤ k ≤ n.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Bernoulli draw with success probability p.
#[inline]
pub fn sample_bernoulli(p: f64, rng: &mut RngStream) -> u8 {
    u8::from(rng.next_unit_open() < p)
}

/// Beta(a, b) draw via two gammas.
pub fn sample_beta(a: f64, b: f64, rng: &mut RngStream) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::domain(format!("sample_beta: invalid shapes ({a}, {b})")));
    }
    let x: f64 = Gamma::new(a, 1.0).expect("validated").sample(rng);
    let y: f64 = Gamma::new(b, 1.0).expect("validated").sample(rng);
    if x + y == 0.0 {
        // Both shapes tiny; fall back to a Bernoulli split by mean.
        return Ok(if rng.next_unit_open() < a / (a + b) { 1.0 } else { 0.0 });
    }
    Ok(x / (x + y))
}

/// Uniform draw from 0..n (exclusive), unbiased by rejection.
pub fn sample_index(n: usize, rng: &mut RngStream) -> usize {
    debug_assert!(n > 0);
    rng.random_range(0..n)
}
