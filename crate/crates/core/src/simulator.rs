//! Monte Carlo operating characteristics.
//!
//! Patients arrive as a Poisson process; each cohort is evaluated once its
//! last patient has completed the longer of the two assessment windows, and
//! accrual is suspended until that decision. Replicate `r` of scenario `s`
//! draws from ChaCha8 stream `(s << 32) | r` of the master seed, so results do
//! not depend on scheduling or thread count. Arrival gaps and per-dose
//! outcome streams are drawn up front, so two designs run on the same seed see
//! the same arrivals and the same outcomes for the m-th patient at each dose
//! (common random numbers).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Action, TrialState, TrialStatus};
use crate::error::{Error, Result};
use crate::format::{csv_line, prob4};
use crate::rules::DesignParams;
use crate::scenario::{Scenario, ScenarioBank};
use crate::OutcomeCounts2x2;

pub const DAYS_PER_MONTH: f64 = 30.0;

/// Simulation configurations: the per-dose stopping rule on (A, C) or off
/// (B, D), with a 60-day (A, B) or 30-day (C, D) efficacy window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    A,
    B,
    C,
    D,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::A, Case::B, Case::C, Case::D];

    /// AD-BOIN12 parameters for this case: 5 doses, 36 patients, 3/month.
    pub fn params(self) -> DesignParams {
        let (stop_rule_enabled, eff_window_days) = match self {
            Case::A => (true, 60.0),
            Case::B => (false, 60.0),
            Case::C => (true, 30.0),
            Case::D => (false, 30.0),
        };
        DesignParams {
            stop_rule_enabled,
            eff_window_days,
            ..DesignParams::default()
        }
    }
}

impl std::str::FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Case::A),
            "B" => Ok(Case::B),
            "C" => Ok(Case::C),
            "D" => Ok(Case::D),
            _ => Err(Error::invalid(format!("unknown case {s:?} (expected A-D)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub selected_obd: Option<usize>,
    pub duration_days: f64,
    pub per_dose_n: Vec<u32>,
    pub stop_reason: TrialStatus,
    pub seed_id: u64,
    /// Number of expanded cohorts administered.
    pub expansions: u32,
}

impl TrialResult {
    pub fn total_n(&self) -> u32 {
        self.per_dose_n.iter().sum()
    }
}

/// Generator for replicate `replicate` of scenario `scenario_index`.
pub fn replicate_rng(master_seed: u64, scenario_index: u32, replicate: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((scenario_index as u64) << 32) | replicate as u64);
    rng
}

/// One simulated trial with a generator seeded from `seed`.
pub fn simulate_trial(scenario: &Scenario, params: &DesignParams, seed: u64) -> Result<TrialResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_trial_with(scenario, params, &mut rng, seed)
}

/// One simulated trial drawing from `rng`. The draws consumed depend only on
/// `max_n` and the number of doses: `max_n` arrival gaps, then for each dose
/// `max_n` (toxicity, efficacy) uniform pairs.
pub fn simulate_trial_with<R: Rng + ?Sized>(
    scenario: &Scenario,
    params: &DesignParams,
    rng: &mut R,
    seed_id: u64,
) -> Result<TrialResult> {
    scenario.validate(params)?;
    let gap = Exp::new(params.accrual_rate_per_month / DAYS_PER_MONTH)
        .map_err(|e| Error::config(format!("accrual rate: {e}")))?;
    let window = params.tox_window_days.max(params.eff_window_days);

    let slots = params.max_n as usize;
    let gaps: Vec<f64> = (0..slots).map(|_| gap.sample(rng)).collect();
    let latent: Vec<Vec<(f64, f64)>> = (0..params.num_doses)
        .map(|_| (0..slots).map(|_| (rng.random(), rng.random())).collect())
        .collect();

    let mut state = TrialState::new(params.clone())?;
    let mut clock = 0.0f64;
    let mut expansions = 0;
    while let Some(assign) = state.pending {
        if assign.cohort_size > params.base_cohort {
            expansions += 1;
        }
        let (p_tox, p_eff) = (scenario.p_tox[assign.dose], scenario.p_eff[assign.dose]);
        let treated = state.doses[assign.dose].counts.n() as usize;
        let mut outcomes = OutcomeCounts2x2::default();
        for m in treated..treated + assign.cohort_size as usize {
            clock += gaps[state.enrolled_total as usize + m - treated];
            let (u_tox, u_eff) = latent[assign.dose][m];
            match (u_eff < p_eff, u_tox < p_tox) {
                (true, false) => outcomes.a += 1,
                (true, true) => outcomes.b += 1,
                (false, false) => outcomes.c += 1,
                (false, true) => outcomes.d += 1,
            }
        }
        clock += window;
        let decision = state.submit_cohort(assign.dose, outcomes, None)?;
        if decision.action == Action::Stop {
            break;
        }
    }
    Ok(TrialResult {
        selected_obd: state.final_selection()?,
        duration_days: clock,
        per_dose_n: state.doses.iter().map(|d| d.counts.n()).collect(),
        stop_reason: state.status,
        seed_id,
        expansions,
    })
}

/// Aggregated metrics over replicates of one scenario and design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingChars {
    pub replicates: u64,
    pub pct_correct_obd: f64,
    pub mean_duration_months: f64,
    pub mean_n_at_correct_obd: f64,
    pub mean_n_at_toxic_doses: f64,
    /// Trials ending without a selected dose.
    pub pct_no_selection: f64,
    /// Trials stopped because no admissible dose remained.
    pub pct_early_stop: f64,
    pub mean_total_n: f64,
}

// Durations are summed in fixed point so the total is exact and therefore
// independent of summation order.
const DURATION_SCALE: f64 = (1u64 << 32) as f64;

impl OperatingChars {
    pub fn aggregate(results: &[TrialResult], true_obd: Option<usize>, toxic: &[bool]) -> Self {
        let reps = results.len() as u64;
        let mut correct = 0u64;
        let mut no_selection = 0u64;
        let mut early = 0u64;
        let mut n_obd = 0u64;
        let mut n_toxic = 0u64;
        let mut n_total = 0u64;
        let mut duration_fx = 0i128;
        for r in results {
            correct += u64::from(r.selected_obd == true_obd);
            no_selection += u64::from(r.selected_obd.is_none());
            early += u64::from(r.stop_reason == TrialStatus::StoppedNoAdmissible);
            if let Some(d) = true_obd {
                n_obd += u64::from(r.per_dose_n[d]);
            }
            n_toxic += r
                .per_dose_n
                .iter()
                .zip(toxic)
                .filter(|(_, &t)| t)
                .map(|(&n, _)| u64::from(n))
                .sum::<u64>();
            n_total += u64::from(r.total_n());
            duration_fx += (r.duration_days * DURATION_SCALE).round() as i128;
        }
        let denom = reps.max(1) as f64;
        let pct = |k: u64| 100.0 * k as f64 / denom;
        Self {
            replicates: reps,
            pct_correct_obd: pct(correct),
            mean_duration_months: duration_fx as f64 / DURATION_SCALE / denom / DAYS_PER_MONTH,
            mean_n_at_correct_obd: n_obd as f64 / denom,
            mean_n_at_toxic_doses: n_toxic as f64 / denom,
            pct_no_selection: pct(no_selection),
            pct_early_stop: pct(early),
            mean_total_n: n_total as f64 / denom,
        }
    }
}

/// Differences (AD minus base) in the four evaluation metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OcDiff {
    pub pct_correct_obd: f64,
    pub mean_duration_months: f64,
    pub mean_n_at_correct_obd: f64,
    pub mean_n_at_toxic_doses: f64,
}

impl OcDiff {
    pub fn between(ad: &OperatingChars, base: &OperatingChars) -> Self {
        Self {
            pct_correct_obd: ad.pct_correct_obd - base.pct_correct_obd,
            mean_duration_months: ad.mean_duration_months - base.mean_duration_months,
            mean_n_at_correct_obd: ad.mean_n_at_correct_obd - base.mean_n_at_correct_obd,
            mean_n_at_toxic_doses: ad.mean_n_at_toxic_doses - base.mean_n_at_toxic_doses,
        }
    }

    fn mean(diffs: &[OcDiff]) -> Self {
        let k = diffs.len().max(1) as f64;
        let sum = |f: fn(&OcDiff) -> f64| diffs.iter().map(f).sum::<f64>() / k;
        Self {
            pct_correct_obd: sum(|d| d.pct_correct_obd),
            mean_duration_months: sum(|d| d.mean_duration_months),
            mean_n_at_correct_obd: sum(|d| d.mean_n_at_correct_obd),
            mean_n_at_toxic_doses: sum(|d| d.mean_n_at_toxic_doses),
        }
    }
}

/// Replicate count, master seed and optional thread count for a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarlo {
    pub replicates: u32,
    pub master_seed: u64,
    /// `None` uses rayon's global pool.
    pub threads: Option<usize>,
}

impl MonteCarlo {
    pub fn new(replicates: u32, master_seed: u64) -> Self {
        Self {
            replicates,
            master_seed,
            threads: None,
        }
    }

    pub fn with_threads(self, threads: usize) -> Self {
        Self {
            threads: Some(threads),
            ..self
        }
    }

    fn install<R: Send>(&self, job: impl FnOnce() -> R + Send) -> Result<R> {
        match self.threads {
            None => Ok(job()),
            Some(t) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(t.max(1))
                    .build()
                    .map_err(|e| Error::config(format!("thread pool: {e}")))?;
                Ok(pool.install(job))
            }
        }
    }

    /// Per-replicate results, in replicate order.
    pub fn replicates(
        &self,
        scenario: &Scenario,
        params: &DesignParams,
        scenario_index: u32,
    ) -> Result<Vec<TrialResult>> {
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        params.validate()?;
        scenario.validate(params)?;
        self.install(|| {
            (0..self.replicates)
                .into_par_iter()
                .map(|r| {
                    let mut rng = replicate_rng(self.master_seed, scenario_index, r);
                    simulate_trial_with(scenario, params, &mut rng, u64::from(r))
                })
                .collect::<Result<Vec<_>>>()
        })?
    }
}

/// Operating characteristics of one design on one scenario.
pub fn run_monte_carlo(
    scenario: &Scenario,
    params: &DesignParams,
    mc: &MonteCarlo,
) -> Result<OperatingChars> {
    let results = mc.replicates(scenario, params, 0)?;
    Ok(OperatingChars::aggregate(
        &results,
        scenario.resolve_obd(params),
        &scenario.toxic_doses(params),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioComparison {
    pub scenario: String,
    pub true_obd: Option<usize>,
    pub ad: OperatingChars,
    pub base: OperatingChars,
    pub diff: OcDiff,
    /// `100 * (base - ad) / base` on mean duration.
    pub duration_reduction_pct: f64,
    #[serde(skip)]
    pub ad_results: Vec<TrialResult>,
    #[serde(skip)]
    pub base_results: Vec<TrialResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub master_seed: u64,
    pub replicates: u32,
    pub scenarios: Vec<ScenarioComparison>,
    /// Unweighted mean over scenarios.
    pub mean_diff: OcDiff,
    pub mean_duration_reduction_pct: f64,
}

/// Run both designs on every scenario with common random numbers.
pub fn compare_designs(
    bank: &ScenarioBank,
    params_ad: &DesignParams,
    params_base: &DesignParams,
    mc: &MonteCarlo,
) -> Result<Comparison> {
    if params_ad.num_doses != params_base.num_doses {
        return Err(Error::config(format!(
            "designs disagree on the number of doses ({} vs {})",
            params_ad.num_doses, params_base.num_doses
        )));
    }
    let mut rows = Vec::with_capacity(bank.scenarios.len());
    for (s, scenario) in bank.scenarios.iter().enumerate() {
        let idx = u32::try_from(s).map_err(|_| Error::config("too many scenarios"))?;
        let ad_results = mc.replicates(scenario, params_ad, idx)?;
        let base_results = mc.replicates(scenario, params_base, idx)?;
        let truth = scenario.resolve_obd(params_ad);
        let toxic = scenario.toxic_doses(params_ad);
        let ad = OperatingChars::aggregate(&ad_results, truth, &toxic);
        let base = OperatingChars::aggregate(&base_results, truth, &toxic);
        rows.push(ScenarioComparison {
            scenario: scenario.name.clone(),
            true_obd: truth,
            diff: OcDiff::between(&ad, &base),
            duration_reduction_pct: if base.mean_duration_months > 0.0 {
                100.0 * (base.mean_duration_months - ad.mean_duration_months)
                    / base.mean_duration_months
            } else {
                0.0
            },
            ad,
            base,
            ad_results,
            base_results,
        });
    }
    let diffs: Vec<OcDiff> = rows.iter().map(|r| r.diff).collect();
    let k = rows.len().max(1) as f64;
    Ok(Comparison {
        master_seed: mc.master_seed,
        replicates: mc.replicates,
        mean_duration_reduction_pct: rows.iter().map(|r| r.duration_reduction_pct).sum::<f64>() / k,
        mean_diff: OcDiff::mean(&diffs),
        scenarios: rows,
    })
}

pub const OC_CSV_HEADER: &str =
    "scenario,design,pct_correct_obd,mean_duration_months,mean_n_correct_obd,mean_n_toxic,replicates,seed\n";

pub const DESIGN_AD: &str = "ad-boin12";
pub const DESIGN_BASE: &str = "boin12";
pub const DESIGN_DIFF: &str = "diff";

pub fn oc_csv_row(scenario: &str, design: &str, oc: &OperatingChars, seed: u64) -> String {
    csv_line(&[
        scenario.to_string(),
        design.to_string(),
        prob4(oc.pct_correct_obd),
        prob4(oc.mean_duration_months),
        prob4(oc.mean_n_at_correct_obd),
        prob4(oc.mean_n_at_toxic_doses),
        oc.replicates.to_string(),
        seed.to_string(),
    ])
}

fn diff_csv_row(scenario: &str, d: &OcDiff, replicates: u32, seed: u64) -> String {
    csv_line(&[
        scenario.to_string(),
        DESIGN_DIFF.to_string(),
        prob4(d.pct_correct_obd),
        prob4(d.mean_duration_months),
        prob4(d.mean_n_at_correct_obd),
        prob4(d.mean_n_at_toxic_doses),
        replicates.to_string(),
        seed.to_string(),
    ])
}

impl Comparison {
    /// Three rows per scenario (AD, base, difference) and a final `mean` difference row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(OC_CSV_HEADER);
        for row in &self.scenarios {
            out.push_str(&oc_csv_row(&row.scenario, DESIGN_AD, &row.ad, self.master_seed));
            out.push_str(&oc_csv_row(&row.scenario, DESIGN_BASE, &row.base, self.master_seed));
            out.push_str(&diff_csv_row(&row.scenario, &row.diff, self.replicates, self.master_seed));
        }
        out.push_str(&diff_csv_row("mean", &self.mean_diff, self.replicates, self.master_seed));
        out
    }

    pub fn replicate_log_csv(&self) -> String {
        let mut out = String::from(REPLICATE_LOG_HEADER);
        for row in &self.scenarios {
            out.push_str(&replicate_log_rows(&row.scenario, DESIGN_AD, &row.ad_results));
            out.push_str(&replicate_log_rows(&row.scenario, DESIGN_BASE, &row.base_results));
        }
        out
    }
}

pub const REPLICATE_LOG_HEADER: &str =
    "scenario,design,replicate,selected_obd,duration_days,total_n,stop_reason,per_dose_n\n";

/// One line per replicate; `per_dose_n` is `;`-separated and `selected_obd`
/// is empty when no dose was selected.
pub fn replicate_log_rows(scenario: &str, design: &str, results: &[TrialResult]) -> String {
    results
        .iter()
        .map(|r| {
            csv_line(&[
                scenario.to_string(),
                design.to_string(),
                r.seed_id.to_string(),
                r.selected_obd.map(|d| d.to_string()).unwrap_or_default(),
                format!("{:.6}", r.duration_days),
                r.total_n().to_string(),
                r.stop_reason.as_str().to_string(),
                r.per_dose_n
                    .iter()
                    .map(|n| n.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            ])
        })
        .collect()
}
