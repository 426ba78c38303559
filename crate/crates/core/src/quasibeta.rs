//! Beta-posterior numerics behind the desirability, safety and futility
//! probabilities.
//!
//! Everything here is generic over the floating-point type. `f64` meets the
//! 1e-10 accuracy target of [`regularized_incomplete_beta`]; `f32` works but
//! only to single precision.

use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point scalar used by the numerics: `f32` or `f64`.
pub trait Real: Float + FloatConst + FromPrimitive + Debug + Send + Sync + 'static {}

impl<T> Real for T where T: Float + FloatConst + FromPrimitive + Debug + Send + Sync + 'static {}

#[inline]
fn lit<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("literal representable in scalar type")
}

#[inline]
fn count<T: Real>(v: u32) -> T {
    T::from_u32(v).expect("count representable in scalar type")
}

/// Scores (0-100) assigned to the four joint toxicity/efficacy outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityWeights<T> {
    pub w_eff_notox: T,
    pub w_eff_tox: T,
    pub w_noeff_notox: T,
    pub w_noeff_tox: T,
}

impl<T: Real> Default for UtilityWeights<T> {
    fn default() -> Self {
        Self {
            w_eff_notox: lit(100.0),
            w_eff_tox: lit(60.0),
            w_noeff_notox: lit(40.0),
            w_noeff_tox: lit(0.0),
        }
    }
}

impl<T: Real> UtilityWeights<T> {
    pub fn new(w_eff_notox: T, w_eff_tox: T, w_noeff_notox: T, w_noeff_tox: T) -> Result<Self> {
        let w = Self {
            w_eff_notox,
            w_eff_tox,
            w_noeff_notox,
            w_noeff_tox,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_eff_notox,
            self.w_eff_tox,
            self.w_noeff_notox,
            self.w_noeff_tox,
        ];
        let hundred = lit::<T>(100.0);
        if all.iter().any(|w| !(*w >= T::zero() && *w <= hundred)) {
            return Err(Error::invalid(format!(
                "utility weights must lie in [0, 100], got {all:?}"
            )));
        }
        if all.iter().any(|w| *w > self.w_eff_notox) || all.iter().any(|w| *w < self.w_noeff_tox) {
            return Err(Error::invalid(
                "efficacy without toxicity must score highest and toxicity without efficacy lowest",
            ));
        }
        Ok(())
    }

    /// True when the quasi-event count depends on the 2x2 table only through
    /// its margins, i.e. `w_eff_notox + w_noeff_tox == w_eff_tox + w_noeff_notox`.
    pub fn is_marginally_sufficient(&self) -> bool {
        let lhs = self.w_eff_notox + self.w_noeff_tox;
        let rhs = self.w_eff_tox + self.w_noeff_notox;
        (lhs - rhs).abs() <= lit::<T>(100.0) * T::epsilon()
    }
}

/// Per-dose joint outcome counts.
///
/// `a`: efficacy without toxicity, `b`: efficacy with toxicity,
/// `c`: neither, `d`: toxicity without efficacy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeCounts2x2 {
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub d: u32,
}

impl OutcomeCounts2x2 {
    pub const fn new(a: u32, b: u32, c: u32, d: u32) -> Self {
        Self { a, b, c, d }
    }

    /// Canonical table with the given margins (smallest feasible overlap `b`).
    pub fn from_marginals(n: u32, tox: u32, eff: u32) -> Result<Self> {
        if tox > n || eff > n {
            return Err(Error::invalid(format!(
                "marginal counts exceed n: n={n}, tox={tox}, eff={eff}"
            )));
        }
        let b = (tox + eff).saturating_sub(n);
        Ok(Self {
            a: eff - b,
            b,
            c: n + b - eff - tox,
            d: tox - b,
        })
    }

    pub fn n(&self) -> u32 {
        self.a + self.b + self.c + self.d
    }

    pub fn n_eff(&self) -> u32 {
        self.a + self.b
    }

    pub fn n_tox(&self) -> u32 {
        self.b + self.d
    }
}

impl std::ops::Add for OutcomeCounts2x2 {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            a: self.a + rhs.a,
            b: self.b + rhs.b,
            c: self.c + rhs.c,
            d: self.d + rhs.d,
        }
    }
}

impl std::ops::AddAssign for OutcomeCounts2x2 {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

/// Benchmark utility `u_b` (0-100) and the decision threshold `u_tilde` (0-1)
/// used by the desirability probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Benchmark<T> {
    pub u_b: T,
    pub u_tilde: T,
}

impl<T: Real> Benchmark<T> {
    /// Threshold is the midpoint between the benchmark and the maximum utility.
    pub fn from_utility(u_b: T) -> Result<Self> {
        if !(u_b >= T::zero() && u_b <= lit(100.0)) {
            return Err(Error::invalid(format!(
                "benchmark utility must be in [0, 100], got {u_b:?}"
            )));
        }
        Ok(Self {
            u_b,
            u_tilde: (u_b / lit(100.0) + T::one()) / lit(2.0),
        })
    }
}

/// Sum of standardized per-patient utilities, the fractional "event" count of
/// the quasi-binomial utility posterior.
pub fn quasi_events<T: Real>(counts: &OutcomeCounts2x2, weights: &UtilityWeights<T>) -> T {
    (count::<T>(counts.a) * weights.w_eff_notox
        + count::<T>(counts.b) * weights.w_eff_tox
        + count::<T>(counts.c) * weights.w_noeff_notox
        + count::<T>(counts.d) * weights.w_noeff_tox)
        / lit(100.0)
}

/// Quasi-event count from the margins alone. Only defined for marginally
/// sufficient weights.
pub fn quasi_events_from_marginals<T: Real>(
    n: u32,
    tox: u32,
    eff: u32,
    weights: &UtilityWeights<T>,
) -> Result<T> {
    if !weights.is_marginally_sufficient() {
        return Err(Error::config(
            "utility weights are not marginally sufficient; the full 2x2 table is required",
        ));
    }
    if tox > n || eff > n {
        return Err(Error::invalid(format!(
            "marginal counts exceed n: n={n}, tox={tox}, eff={eff}"
        )));
    }
    let base = weights.w_noeff_notox;
    Ok((base * count(n)
        + (weights.w_eff_notox - base) * count(eff)
        + (weights.w_noeff_tox - base) * count(tox))
        / lit(100.0))
}

/// Expected utility at independent toxicity/efficacy margins `(phi_t, psi_e)`,
/// turned into a [`Benchmark`].
pub fn benchmark_from<T: Real>(
    phi_t: T,
    psi_e: T,
    weights: &UtilityWeights<T>,
) -> Result<Benchmark<T>> {
    let unit = |p: T| p >= T::zero() && p <= T::one();
    if !unit(phi_t) || !unit(psi_e) {
        return Err(Error::invalid(format!(
            "toxicity/efficacy limits must be probabilities, got {phi_t:?}, {psi_e:?}"
        )));
    }
    let one = T::one();
    let u_b = weights.w_eff_notox * psi_e * (one - phi_t)
        + weights.w_eff_tox * psi_e * phi_t
        + weights.w_noeff_notox * (one - psi_e) * (one - phi_t)
        + weights.w_noeff_tox * (one - psi_e) * phi_t;
    // Rounding can push u_b a few ulps outside [0, 100].
    Benchmark::from_utility(u_b.max(T::zero()).min(lit(100.0)))
}

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma<T: Real>(x: T) -> T {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let half = lit::<T>(0.5);
    if x < half {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = T::PI();
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = lit::<T>(COEF[0]);
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc = acc + lit::<T>(c) / (x + count(i as u32));
    }
    let t = x + lit(7.5);
    lit::<T>(0.918_938_533_204_672_8) + (x + half) * t.ln() - t + acc.ln()
}

pub fn ln_beta<T: Real>(a: T, b: T) -> T {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction<T: Real>(a: T, b: T, x: T) -> T {
    const MAX_ITER: u32 = 1_000;
    let one = T::one();
    let eps = T::epsilon();
    let tiny = T::min_positive_value() / eps;

    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut c = one;
    let mut d = one - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = d.recip();
    let mut h = d;

    for m in 1..=MAX_ITER {
        let m = count::<T>(m);
        let m2 = m + m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = d.recip();
        h = h * d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = d.recip();
        let del = d * c;
        h = h * del;
        if (del - one).abs() <= eps {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(alpha, beta)`.
///
/// Uses the continued fraction directly when `x < (alpha+1)/(alpha+beta+2)`
/// and the reflection `1 - I_{1-x}(beta, alpha)` otherwise, so the fraction
/// always converges quickly.
pub fn regularized_incomplete_beta<T: Real>(x: T, alpha: T, beta: T) -> Result<T> {
    if !(alpha > T::zero() && alpha.is_finite() && beta > T::zero() && beta.is_finite()) {
        return Err(Error::invalid(format!(
            "beta shape parameters must be positive and finite, got ({alpha:?}, {beta:?})"
        )));
    }
    if !(x >= T::zero() && x <= T::one()) {
        return Err(Error::invalid(format!("x must be in [0, 1], got {x:?}")));
    }
    if x == T::zero() {
        return Ok(T::zero());
    }
    if x == T::one() {
        return Ok(T::one());
    }
    let one = T::one();
    let ln_front = alpha * x.ln() + beta * (one - x).ln() - ln_beta(alpha, beta);
    let front = ln_front.exp();
    let value = if x < (alpha + one) / (alpha + beta + lit(2.0)) {
        front * beta_continued_fraction(alpha, beta, x) / alpha
    } else {
        one - front * beta_continued_fraction(beta, alpha, one - x) / beta
    };
    Ok(value.max(T::zero()).min(one))
}

/// Upper tail `1 - I_x(alpha, beta)`, evaluated without cancellation.
fn beta_survival<T: Real>(x: T, alpha: T, beta: T) -> Result<T> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(Error::invalid(format!("x must be in [0, 1], got {x:?}")));
    }
    regularized_incomplete_beta(T::one() - x, beta, alpha)
}

/// Posterior probability that the mean standardized utility exceeds
/// `bench.u_tilde`, under `u ~ Beta(1 + x_u, 1 + n - x_u)`.
pub fn desirability_probability<T: Real>(n: u32, x_u: T, bench: &Benchmark<T>) -> Result<T> {
    let n_t = count::<T>(n);
    let slack = n_t.max(T::one()) * lit::<T>(64.0) * T::epsilon();
    if !(x_u >= -slack && x_u <= n_t + slack) {
        return Err(Error::invalid(format!(
            "quasi-event count {x_u:?} outside [0, {n}]"
        )));
    }
    let x_u = x_u.max(T::zero()).min(n_t);
    let one = T::one();
    beta_survival(bench.u_tilde, one + x_u, one + n_t - x_u)
}

/// Direction of a posterior tail probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    Above,
    Below,
}

/// `Pr(p > cut)` or `Pr(p < cut)` for `p ~ Beta(1 + events, 1 + n - events)`.
pub fn tail_posterior<T: Real>(events: u32, n: u32, cut_point: T, direction: Tail) -> Result<T> {
    if events > n {
        return Err(Error::invalid(format!("events ({events}) exceed n ({n})")));
    }
    let alpha = count::<T>(1 + events);
    let beta = count::<T>(1 + n - events);
    match direction {
        Tail::Above => beta_survival(cut_point, alpha, beta),
        Tail::Below => regularized_incomplete_beta(cut_point, alpha, beta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn default_bench() -> Benchmark<f64> {
        benchmark_from(0.35, 0.25, &UtilityWeights::default()).unwrap()
    }

    #[test]
    fn quasi_events_examples() {
        let w = UtilityWeights::<f64>::default();
        assert_abs_diff_eq!(quasi_events(&OutcomeCounts2x2::new(1, 0, 2, 0), &w), 1.8, epsilon = 1e-12);
        assert_eq!(quasi_events(&OutcomeCounts2x2::default(), &w), 0.0);
        assert_eq!(quasi_events(&OutcomeCounts2x2::new(0, 0, 0, 3), &w), 0.0);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        let x = 0.705;
        assert_abs_diff_eq!(regularized_incomplete_beta(x, 1.0, 1.0).unwrap(), 0.705, epsilon = 1e-12);
        let poly = 4.0 * x.powi(3) - 3.0 * x.powi(4);
        assert_abs_diff_eq!(regularized_incomplete_beta(x, 3.0, 2.0).unwrap(), poly, epsilon = 1e-12);
        assert_abs_diff_eq!(poly, 0.660_509, epsilon = 1e-6);
    }

    #[test]
    fn incomplete_beta_rejects_bad_domain() {
        assert!(regularized_incomplete_beta(0.5, 0.0, 1.0).is_err());
        assert!(regularized_incomplete_beta(0.5, 1.0, -2.0).is_err());
        assert!(regularized_incomplete_beta(1.5, 1.0, 1.0).is_err());
        assert!(regularized_incomplete_beta(f64::NAN, 1.0, 1.0).is_err());
    }

    #[test]
    fn incomplete_beta_in_single_precision() {
        let v: f32 = regularized_incomplete_beta(0.705f32, 3.0, 2.0).unwrap();
        assert!((v - 0.660_509).abs() < 1e-5);
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0f64;
        for k in 1..20u32 {
            assert_abs_diff_eq!(ln_gamma(k as f64 + 1.0), (fact * k as f64).ln(), epsilon = 1e-12);
            fact *= k as f64;
        }
        assert_abs_diff_eq!(ln_gamma(0.5f64), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(0.25f64), 1.288_022_524_698_077_5, epsilon = 1e-12);
    }

    #[test]
    fn benchmark_examples() {
        let w = UtilityWeights::<f64>::default();
        let b = benchmark_from(0.35, 0.25, &w).unwrap();
        assert_abs_diff_eq!(b.u_b, 41.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.u_tilde, 0.705, epsilon = 1e-12);
        let b = benchmark_from(0.0, 1.0, &w).unwrap();
        assert_abs_diff_eq!(b.u_b, 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.u_tilde, 1.0, epsilon = 1e-12);
        let b = benchmark_from(1.0, 0.0, &w).unwrap();
        assert_abs_diff_eq!(b.u_b, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.u_tilde, 0.5, epsilon = 1e-12);
        assert!(benchmark_from(1.2, 0.3, &w).is_err());
        assert!(benchmark_from(0.3, -0.1, &w).is_err());
    }

    #[test]
    fn desirability_examples() {
        let b = default_bench();
        assert_abs_diff_eq!(desirability_probability(0, 0.0, &b).unwrap(), 0.295, epsilon = 1e-12);
        let x = 0.705f64;
        let expected = 1.0 - (4.0 * x.powi(3) - 3.0 * x.powi(4));
        assert_abs_diff_eq!(desirability_probability(3, 2.0, &b).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.339_491, epsilon = 1e-6);
        assert!(desirability_probability(3, 3.5, &b).is_err());
        assert!(desirability_probability(3, -0.5, &b).is_err());
    }

    #[test]
    fn tail_examples() {
        assert_abs_diff_eq!(
            tail_posterior(3, 3, 0.35, Tail::Above).unwrap(),
            1.0 - 0.35f64.powi(4),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            tail_posterior(0, 9, 0.25, Tail::Below).unwrap(),
            1.0 - 0.75f64.powi(10),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(tail_posterior(0, 0, 0.5, Tail::Above).unwrap(), 0.5, epsilon = 1e-12);
        assert!(tail_posterior(4, 3, 0.5, Tail::Above).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(UtilityWeights::new(100.0, 60.0, 40.0, 0.0).is_ok());
        assert!(UtilityWeights::new(50.0, 60.0, 40.0, 0.0).is_err());
        assert!(UtilityWeights::new(100.0, 60.0, 40.0, 50.0).is_err());
        assert!(UtilityWeights::new(120.0, 60.0, 40.0, 0.0).is_err());
        assert!(UtilityWeights::<f64>::default().is_marginally_sufficient());
        assert!(!UtilityWeights::new(100.0, 50.0, 40.0, 0.0).unwrap().is_marginally_sufficient());
        let w = UtilityWeights::new(100.0, 50.0, 40.0, 0.0).unwrap();
        assert!(matches!(quasi_events_from_marginals(3, 1, 1, &w), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn marginal_sufficiency(a in 0u32..20, b in 0u32..20, c in 0u32..20, d in 0u32..20) {
            let w = UtilityWeights::<f64>::default();
            let t = OutcomeCounts2x2::new(a, b, c, d);
            let direct = quasi_events(&t, &w);
            let closed = 0.4 * t.n() as f64 + 0.6 * t.n_eff() as f64 - 0.4 * t.n_tox() as f64;
            prop_assert!((direct - closed).abs() < 1e-9);
            let from_margins = quasi_events_from_marginals(t.n(), t.n_tox(), t.n_eff(), &w).unwrap();
            prop_assert!((direct - from_margins).abs() < 1e-9);
        }

        #[test]
        fn from_marginals_round_trips(n in 0u32..30, t in 0u32..30, e in 0u32..30) {
            prop_assume!(t <= n && e <= n);
            let c = OutcomeCounts2x2::from_marginals(n, t, e).unwrap();
            prop_assert_eq!((c.n(), c.n_tox(), c.n_eff()), (n, t, e));
        }

        #[test]
        fn incomplete_beta_symmetry(x in 0.0f64..=1.0, a in 0.05f64..50.0, b in 0.05f64..50.0) {
            let lhs = regularized_incomplete_beta(x, a, b).unwrap();
            let rhs = regularized_incomplete_beta(1.0 - x, b, a).unwrap();
            prop_assert!((lhs + rhs - 1.0).abs() < 1e-10);
        }

        #[test]
        fn desirability_increases_in_quasi_events(n in 1u32..40, lo in 0.0f64..1.0, gap in 0.01f64..1.0) {
            let b = default_bench();
            let x1 = lo * n as f64;
            let x2 = (x1 + gap).min(n as f64);
            prop_assume!(x2 > x1);
            prop_assert!(desirability_probability(n, x2, &b).unwrap() > desirability_probability(n, x1, &b).unwrap());
        }

        #[test]
        fn tail_above_increases_in_events(n in 1u32..40, e in 0u32..40, cut in 0.05f64..0.95) {
            prop_assume!(e < n);
            let lo = tail_posterior(e, n, cut, Tail::Above).unwrap();
            let hi = tail_posterior(e + 1, n, cut, Tail::Above).unwrap();
            prop_assert!(hi >= lo);
            if lo < 1.0 - 1e-12 {
                prop_assert!(hi > lo);
            }
        }
    }
}
