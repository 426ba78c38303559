//! Design constants, BOIN interval boundaries, admissibility rules and the
//! adaptive cohort-size check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quasibeta::{self, Real, Tail};
use crate::{Benchmark, OutcomeCounts2x2, UtilityWeights};

/// Minimum number of patients at a dose before either elimination rule applies.
pub const MIN_N_FOR_ELIMINATION: u32 = 3;

/// All constants of a BOIN12 / AD-BOIN12 design.
///
/// Dose indices are zero-based. A design with `expanded_cohort == base_cohort`
/// is the plain (non-adaptive) BOIN12 design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignParams {
    pub num_doses: usize,
    pub start_dose: usize,
    pub phi_t: f64,
    pub psi_e: f64,
    pub weights: UtilityWeights,
    pub safety_cutoff: f64,
    pub futility_cutoff: f64,
    pub theta: f64,
    pub base_cohort: u32,
    pub expanded_cohort: u32,
    pub max_n: u32,
    pub per_dose_stop_n: u32,
    pub stop_rule_enabled: bool,
    pub tox_window_days: f64,
    pub eff_window_days: f64,
    pub accrual_rate_per_month: f64,
    pub phi1_factor: f64,
    pub phi2_factor: f64,
}

impl Default for DesignParams {
    fn default() -> Self {
        Self {
            num_doses: 5,
            start_dose: 0,
            phi_t: 0.35,
            psi_e: 0.25,
            weights: UtilityWeights::default(),
            safety_cutoff: 0.95,
            futility_cutoff: 0.90,
            theta: 0.20,
            base_cohort: 3,
            expanded_cohort: 6,
            max_n: 36,
            per_dose_stop_n: 12,
            stop_rule_enabled: true,
            tox_window_days: 45.0,
            eff_window_days: 60.0,
            accrual_rate_per_month: 3.0,
            phi1_factor: 0.6,
            phi2_factor: 1.4,
        }
    }
}

fn open_unit(p: f64) -> bool {
    p > 0.0 && p < 1.0
}

impl DesignParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_doses == 0 {
            return Err(Error::config("num_doses must be at least 1"));
        }
        if self.start_dose >= self.num_doses {
            return Err(Error::config(format!(
                "start_dose {} out of range for {} doses",
                self.start_dose, self.num_doses
            )));
        }
        if !open_unit(self.phi_t) || !open_unit(self.psi_e) {
            return Err(Error::config("phi_t and psi_e must lie in (0, 1)"));
        }
        if !open_unit(self.theta) {
            return Err(Error::config("theta must lie in (0, 1)"));
        }
        if !open_unit(self.safety_cutoff) || !open_unit(self.futility_cutoff) {
            return Err(Error::config("admissibility cutoffs must lie in (0, 1)"));
        }
        self.weights.validate()?;
        if self.base_cohort == 0 || self.base_cohort > self.expanded_cohort {
            return Err(Error::config(
                "cohort sizes must satisfy 0 < base_cohort <= expanded_cohort",
            ));
        }
        if self.max_n < self.base_cohort {
            return Err(Error::config("max_n must be at least one base cohort"));
        }
        if self.per_dose_stop_n > self.max_n {
            return Err(Error::config("per_dose_stop_n must not exceed max_n"));
        }
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.tox_window_days) || !nonneg(self.eff_window_days) {
            return Err(Error::config("assessment windows must be nonnegative"));
        }
        if !(self.accrual_rate_per_month.is_finite() && self.accrual_rate_per_month > 0.0) {
            return Err(Error::config("accrual rate must be positive"));
        }
        interval_boundaries(self.phi_t, self.phi1_factor, self.phi2_factor).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        })?;
        Ok(())
    }

    pub fn benchmark(&self) -> Result<Benchmark> {
        quasibeta::benchmark_from(self.phi_t, self.psi_e, &self.weights)
    }

    pub fn boundaries(&self) -> Result<BoundaryPair<f64>> {
        interval_boundaries(self.phi_t, self.phi1_factor, self.phi2_factor)
    }

    /// True when the design never expands a cohort.
    pub fn is_fixed_cohort(&self) -> bool {
        self.expanded_cohort == self.base_cohort
    }

    /// Same design with cohort expansion switched off.
    pub fn without_expansion(&self) -> Self {
        Self {
            expanded_cohort: self.base_cohort,
            ..self.clone()
        }
    }
}

/// BOIN escalation/de-escalation boundaries on the observed toxicity rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPair<T> {
    pub lambda_e: T,
    pub lambda_d: T,
}

/// Escalation and de-escalation boundaries for target `phi_t`, with the
/// sub-therapeutic and overly-toxic rates `phi1_factor*phi_t` and `phi2_factor*phi_t`.
pub fn interval_boundaries<T: Real>(
    phi_t: T,
    phi1_factor: T,
    phi2_factor: T,
) -> Result<BoundaryPair<T>> {
    let one = T::one();
    let phi1 = phi1_factor * phi_t;
    let phi2 = phi2_factor * phi_t;
    if !(T::zero() < phi1 && phi1 < phi_t && phi_t < phi2 && phi2 < one) {
        return Err(Error::invalid(format!(
            "boundary rates must satisfy 0 < phi1 < phi_t < phi2 < 1, got ({phi1:?}, {phi_t:?}, {phi2:?})"
        )));
    }
    let lambda_e = ((one - phi1) / (one - phi_t)).ln()
        / (phi_t * (one - phi1) / (phi1 * (one - phi_t))).ln();
    let lambda_d = ((one - phi_t) / (one - phi2)).ln()
        / (phi2 * (one - phi_t) / (phi_t * (one - phi2))).ln();
    Ok(BoundaryPair { lambda_e, lambda_d })
}

/// Toxicity-count thresholds at `n` patients: escalate when `tox <= .0`,
/// de-escalate when `tox >= .1`.
pub fn count_boundaries<T: Real>(bp: &BoundaryPair<T>, n: u32) -> (u32, u32) {
    let n_t = T::from_u32(n).expect("count fits scalar");
    let esc = (n_t * bp.lambda_e).floor().to_u32().unwrap_or(0);
    let deesc = (n_t * bp.lambda_d).ceil().to_u32().unwrap_or(n);
    (esc, deesc)
}

fn check_events(events: u32, n: u32, what: &str) -> Result<()> {
    if events > n {
        return Err(Error::invalid(format!("{what} count {events} exceeds n = {n}")));
    }
    Ok(())
}

/// Posterior probability of excess toxicity is above the safety cutoff.
pub fn safety_eliminated(n: u32, tox: u32, params: &DesignParams) -> Result<bool> {
    check_events(tox, n, "toxicity")?;
    if n < MIN_N_FOR_ELIMINATION {
        return Ok(false);
    }
    Ok(quasibeta::tail_posterior(tox, n, params.phi_t, Tail::Above)? > params.safety_cutoff)
}

/// Posterior probability of insufficient efficacy is above the futility cutoff.
pub fn futility_eliminated(n: u32, eff: u32, params: &DesignParams) -> Result<bool> {
    check_events(eff, n, "efficacy")?;
    if n < MIN_N_FOR_ELIMINATION {
        return Ok(false);
    }
    Ok(quasibeta::tail_posterior(eff, n, params.psi_e, Tail::Below)? > params.futility_cutoff)
}

/// Desirability probability of a dose with the given joint outcome counts.
pub fn dose_desirability(counts: &OutcomeCounts2x2, params: &DesignParams) -> Result<f64> {
    let x_u = quasibeta::quasi_events(counts, &params.weights);
    quasibeta::desirability_probability(counts.n(), x_u, &params.benchmark()?)
}

/// Desirability probability from margins; requires marginally sufficient weights.
pub fn marginal_desirability(n: u32, tox: u32, eff: u32, params: &DesignParams) -> Result<f64> {
    let x_u = quasibeta::quasi_events_from_marginals(n, tox, eff, &params.weights)?;
    quasibeta::desirability_probability(n, x_u, &params.benchmark()?)
}

/// Whether a dose with data `(n, tox, dp)` qualifies for an expanded next cohort:
/// it has been tried, its toxicity count is below the de-escalation boundary
/// and its desirability probability exceeds `theta`.
fn qualifies(n: u32, tox: u32, dp: f64, params: &DesignParams) -> Result<bool> {
    if n < params.base_cohort {
        return Ok(false);
    }
    let (_, deesc) = count_boundaries(&params.boundaries()?, n);
    Ok(tox < deesc && dp > params.theta)
}

/// Expansion check from margins (the lookup-table form).
pub fn expansion_qualifies(n: u32, tox: u32, eff: u32, params: &DesignParams) -> Result<bool> {
    let dp = marginal_desirability(n, tox, eff, params)?;
    qualifies(n, tox, dp, params)
}

/// Expansion check from the full 2x2 table; valid for any utility weights.
pub fn expansion_qualifies_counts(counts: &OutcomeCounts2x2, params: &DesignParams) -> Result<bool> {
    let dp = dose_desirability(counts, params)?;
    qualifies(counts.n(), counts.n_tox(), dp, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn with_theta(theta: f64) -> DesignParams {
        DesignParams {
            theta,
            ..DesignParams::default()
        }
    }

    #[test]
    fn boundary_values() {
        // Frozen from an independent high-precision evaluation of the
        // log-ratio formulas (mpmath, 30 digits).
        let bp = interval_boundaries(0.35, 0.6, 1.4).unwrap();
        assert_abs_diff_eq!(bp.lambda_e, 0.276_334_316_806_519_5, epsilon = 1e-12);
        assert_abs_diff_eq!(bp.lambda_d, 0.418_907_508_092_047_3, epsilon = 1e-12);
        let bp = interval_boundaries(0.30, 0.6, 1.4).unwrap();
        assert_abs_diff_eq!(bp.lambda_e, 0.236_490_685_236_468_0, epsilon = 1e-12);
        assert_abs_diff_eq!(bp.lambda_d, 0.358_519_464_640_929_8, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_boundary_rates_rejected() {
        assert!(interval_boundaries(0.35, 1.0, 1.4).is_err());
        assert!(interval_boundaries(0.35, 0.6, 3.0).is_err());
        assert!(interval_boundaries(0.0, 0.6, 1.4).is_err());
    }

    #[test]
    fn table_counts() {
        let bp = DesignParams::default().boundaries().unwrap();
        let got: Vec<_> = [3, 6, 9, 12, 15].iter().map(|&n| count_boundaries(&bp, n)).collect();
        assert_eq!(got, vec![(0, 2), (1, 3), (2, 4), (3, 6), (4, 7)]);
        assert_eq!(count_boundaries(&bp, 1), (0, 1));
    }

    #[test]
    fn elimination_examples() {
        let p = DesignParams::default();
        assert!(safety_eliminated(3, 3, &p).unwrap());
        assert!(!safety_eliminated(3, 2, &p).unwrap());
        assert!(!safety_eliminated(2, 2, &p).unwrap());
        assert!(safety_eliminated(2, 3, &p).is_err());
        assert!(futility_eliminated(9, 0, &p).unwrap());
        assert!(!futility_eliminated(3, 0, &p).unwrap());
        assert!(!futility_eliminated(0, 0, &p).unwrap());
        assert!(futility_eliminated(3, 4, &p).is_err());
    }

    #[test]
    fn expansion_examples() {
        let p = with_theta(0.20);
        assert!(expansion_qualifies(3, 0, 1, &p).unwrap());
        assert!(!expansion_qualifies(3, 0, 0, &p).unwrap());
        assert!(expansion_qualifies(6, 1, 3, &p).unwrap());
        assert!(!expansion_qualifies(9, 2, 4, &p).unwrap());
        assert!(!expansion_qualifies(0, 0, 0, &p).unwrap());
        let p = with_theta(0.25);
        assert!(!expansion_qualifies(6, 0, 2, &p).unwrap());
        assert!(expansion_qualifies(6, 0, 3, &p).unwrap());
        assert!(!expansion_qualifies(0, 0, 0, &p).unwrap());
    }

    #[test]
    fn expansion_blocked_in_deescalation_region() {
        // dp(3, 2, 3) is about 0.42, but 2 toxicities in 3 de-escalates.
        let p = with_theta(0.20);
        assert!(marginal_desirability(3, 2, 3, &p).unwrap() > 0.4);
        assert!(!expansion_qualifies(3, 2, 3, &p).unwrap());
    }

    #[test]
    fn non_sufficient_weights_need_full_table() {
        let p = DesignParams {
            weights: UtilityWeights::new(100.0, 50.0, 40.0, 0.0).unwrap(),
            ..DesignParams::default()
        };
        assert!(matches!(expansion_qualifies(3, 0, 1, &p), Err(Error::Config(_))));
        assert!(expansion_qualifies_counts(&OutcomeCounts2x2::new(3, 0, 0, 0), &p).is_ok());
    }

    #[test]
    fn params_validation() {
        assert!(DesignParams::default().validate().is_ok());
        let bad = [
            DesignParams { start_dose: 5, ..Default::default() },
            DesignParams { base_cohort: 7, ..Default::default() },
            DesignParams { theta: 1.0, ..Default::default() },
            DesignParams { per_dose_stop_n: 40, ..Default::default() },
            DesignParams { phi_t: 0.8, ..Default::default() },
            DesignParams { num_doses: 0, start_dose: 0, ..Default::default() },
        ];
        for p in bad {
            assert!(matches!(p.validate(), Err(Error::Config(_))), "{p:?}");
        }
    }

    proptest! {
        #[test]
        fn escalation_below_deescalation(n in 1u32..200, phi in 0.05f64..0.6) {
            let bp = interval_boundaries(phi, 0.6, 1.4).unwrap();
            let (e, d) = count_boundaries(&bp, n);
            prop_assert!(e < d);
        }

        #[test]
        fn expansion_monotone(n in 1u32..5, tox in 0u32..16, eff in 0u32..16, theta in 0.05f64..0.6) {
            let n = n * 3;
            prop_assume!(tox <= n && eff < n);
            let p = with_theta(theta);
            if expansion_qualifies(n, tox, eff, &p).unwrap() {
                prop_assert!(expansion_qualifies(n, tox, eff + 1, &p).unwrap());
                if tox > 0 {
                    prop_assert!(expansion_qualifies(n, tox - 1, eff, &p).unwrap());
                }
            }
        }

        #[test]
        fn elimination_monotone(n in 3u32..40, k in 0u32..40) {
            prop_assume!(k < n);
            let p = DesignParams::default();
            if safety_eliminated(n, k, &p).unwrap() {
                prop_assert!(safety_eliminated(n, k + 1, &p).unwrap());
            }
            if futility_eliminated(n, k + 1, &p).unwrap() {
                prop_assert!(futility_eliminated(n, k, &p).unwrap());
            }
        }
    }

    #[test]
    fn expansion_depends_on_margins_only() {
        for theta in [0.2, 0.25] {
            let p = with_theta(theta);
            for n in (0..=18u32).step_by(3) {
                for tox in 0..=n {
                    for eff in 0..=n {
                        let expect = expansion_qualifies(n, tox, eff, &p).unwrap();
                        let lo = (tox + eff).saturating_sub(n);
                        for b in lo..=tox.min(eff) {
                            let t = OutcomeCounts2x2::new(eff - b, b, n + b - tox - eff, tox - b);
                            assert_eq!(expansion_qualifies_counts(&t, &p).unwrap(), expect);
                        }
                    }
                }
            }
        }
    }
}
