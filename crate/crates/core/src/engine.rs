//! Cohort-by-cohort conduct of a single trial.
//!
//! A [`TrialState`] alternates between two phases: waiting for the outcomes
//! of the assigned cohort (`pending` is set), and waiting for the decision
//! that follows a recorded cohort (`pending` is empty). [`TrialState::submit_cohort`]
//! performs both steps at once; the simulator, the CLI and the HTTP service
//! all go through it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StateCode};
use crate::rules::{self, count_boundaries, DesignParams};
use crate::OutcomeCounts2x2;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseRecord {
    pub counts: OutcomeCounts2x2,
    pub eliminated_safety: bool,
    pub eliminated_futility: bool,
}

impl DoseRecord {
    pub fn admissible(&self) -> bool {
        !self.eliminated_safety && !self.eliminated_futility
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Active,
    StoppedNoAdmissible,
    StoppedPerDoseRule,
    StoppedMaxN,
}

impl TrialStatus {
    pub fn is_active(self) -> bool {
        self == TrialStatus::Active
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Active => "active",
            TrialStatus::StoppedNoAdmissible => "stopped_no_admissible",
            TrialStatus::StoppedPerDoseRule => "stopped_per_dose_rule",
            TrialStatus::StoppedMaxN => "stopped_max_n",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Initial assignment before any data.
    Start,
    Escalate,
    Stay,
    Deescalate,
    Stop,
}

/// Toxicity region of the current dose relative to the BOIN boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Escalate,
    Stay,
    Deescalate,
}

/// Dose and size promised to the next cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    pub dose: usize,
    pub cohort_size: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCheck {
    pub n: u32,
    pub tox: u32,
    pub escalate_le: u32,
    pub deescalate_ge: u32,
    pub region: Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateEval {
    pub dose: usize,
    pub n: u32,
    pub tox: u32,
    pub eff: u32,
    pub dp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCheck {
    pub dose: usize,
    pub n: u32,
    pub tox: u32,
    pub eff: u32,
    pub dp: f64,
    pub theta: f64,
    pub qualifies: bool,
    /// Whether an expanded cohort fits under the maximum sample size.
    pub fits_capacity: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub newly_eliminated_safety: Vec<usize>,
    pub newly_eliminated_futility: Vec<usize>,
    pub boundary: Option<BoundaryCheck>,
    pub candidates: Vec<CandidateEval>,
    /// Candidate set was empty after removing inadmissible doses.
    pub fallback: bool,
    pub expansion: Option<ExpansionCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub from_dose: usize,
    pub action: Action,
    pub next_dose: Option<usize>,
    pub next_cohort_size: Option<u32>,
    /// Terminal status when `action == Stop`.
    pub stop: Option<TrialStatus>,
    pub rationale: Rationale,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.action, self.next_dose, self.next_cohort_size) {
            (Action::Stop, _, _) => write!(
                f,
                "trial stopped ({})",
                self.stop.map(TrialStatus::as_str).unwrap_or("stopped")
            ),
            (action, Some(dose), Some(size)) => {
                let verb = match action {
                    Action::Start => "start at",
                    Action::Escalate => "escalate to",
                    Action::Stay => "stay at",
                    Action::Deescalate => "de-escalate to",
                    Action::Stop => unreachable!(),
                };
                write!(f, "{verb} dose {}, cohort size {size}", dose + 1)
            }
            _ => write!(f, "no decision"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditEvent {
    Cohort { dose: usize, outcomes: OutcomeCounts2x2 },
    Decision { decision: Decision },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    /// Milliseconds since the Unix epoch, when recorded by a live session.
    pub timestamp_ms: Option<u64>,
    pub event: AuditEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialState {
    pub schema_version: u32,
    pub params: DesignParams,
    pub doses: Vec<DoseRecord>,
    /// Dose assigned to the cohort in progress (or last treated, once stopped).
    pub current_dose: usize,
    pub enrolled_total: u32,
    pub status: TrialStatus,
    /// Outstanding assignment; empty while a decision is due.
    pub pending: Option<Assignment>,
    pub audit: Vec<AuditEntry>,
}

impl TrialState {
    pub fn new(params: DesignParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            doses: vec![DoseRecord::default(); params.num_doses],
            current_dose: params.start_dose,
            enrolled_total: 0,
            status: TrialStatus::Active,
            pending: Some(Assignment {
                dose: params.start_dose,
                cohort_size: params.base_cohort.min(params.max_n),
            }),
            audit: Vec::new(),
            params,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let state: TrialState = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("malformed trial state: {e}")))?;
        state.validate()?;
        Ok(state)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trial state serializes")
    }

    /// Structural consistency checks for documents loaded from disk.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::state(StateCode::InconsistentState, m);
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::state(
                StateCode::SchemaVersion,
                format!(
                    "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        self.params.validate()?;
        if self.doses.len() != self.params.num_doses {
            return Err(bad(format!(
                "{} dose records for {} doses",
                self.doses.len(),
                self.params.num_doses
            )));
        }
        let total: u32 = self.doses.iter().map(|d| d.counts.n()).sum();
        if total != self.enrolled_total {
            return Err(bad(format!(
                "enrolled_total {} differs from per-dose sum {total}",
                self.enrolled_total
            )));
        }
        if total > self.params.max_n {
            return Err(bad(format!("{total} patients exceed max_n {}", self.params.max_n)));
        }
        if self.current_dose >= self.params.num_doses {
            return Err(bad(format!("current_dose {} out of range", self.current_dose)));
        }
        if let Some(p) = self.pending {
            if p.dose != self.current_dose || !self.status.is_active() {
                return Err(bad("pending assignment inconsistent with current dose/status".into()));
            }
        } else if self.status.is_active() && self.doses[self.current_dose].counts.n() == 0 {
            return Err(bad("decision due but the current dose has no data".into()));
        }
        if let Some(j) = self.doses.iter().position(|d| d.eliminated_safety) {
            if self.doses[j..].iter().any(|d| !d.eliminated_safety) {
                return Err(bad("safety elimination must extend to all higher doses".into()));
            }
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.status.is_active()
    }

    pub fn remaining_capacity(&self) -> u32 {
        self.params.max_n - self.enrolled_total
    }

    fn push_audit(&mut self, timestamp_ms: Option<u64>, event: AuditEvent) {
        let seq = self.audit.len() as u64;
        self.audit.push(AuditEntry {
            seq,
            timestamp_ms,
            event,
        });
    }

    /// Record the outcomes of the cohort treated at `dose`.
    pub fn record_cohort(
        &mut self,
        dose: usize,
        outcomes: OutcomeCounts2x2,
        timestamp_ms: Option<u64>,
    ) -> Result<()> {
        if !self.is_active() {
            return Err(Error::state(StateCode::TrialStopped, "trial has stopped"));
        }
        let Some(assign) = self.pending else {
            return Err(Error::state(
                StateCode::OutOfOrder,
                "a decision is due before the next cohort can be recorded",
            ));
        };
        if dose != assign.dose {
            return Err(Error::state(
                StateCode::DoseMismatch,
                format!(
                    "cohort submitted for dose {} but dose {} is assigned",
                    dose + 1,
                    assign.dose + 1
                ),
            ));
        }
        if outcomes.n() != assign.cohort_size {
            return Err(Error::state(
                StateCode::CohortSizeMismatch,
                format!(
                    "cohort has {} patients, expected {}",
                    outcomes.n(),
                    assign.cohort_size
                ),
            ));
        }
        if self.enrolled_total + outcomes.n() > self.params.max_n {
            return Err(Error::state(
                StateCode::CapacityExceeded,
                "cohort would exceed the maximum sample size",
            ));
        }
        self.doses[dose].counts += outcomes;
        self.enrolled_total += outcomes.n();
        self.current_dose = dose;
        self.pending = None;
        self.push_audit(timestamp_ms, AuditEvent::Cohort { dose, outcomes });
        Ok(())
    }

    /// Decision following the most recently recorded cohort. Pure: the state
    /// is not modified (see [`TrialState::apply_decision`]).
    pub fn next_decision(&self) -> Result<Decision> {
        if !self.is_active() {
            return Err(Error::state(StateCode::TrialStopped, "trial has stopped"));
        }
        if self.pending.is_some() {
            return Err(Error::state(
                StateCode::OutOfOrder,
                "no cohort has been recorded since the last decision",
            ));
        }
        let params = &self.params;
        let d = self.current_dose;
        let here = self.doses[d].counts;
        if here.n() == 0 {
            return Err(Error::state(
                StateCode::InconsistentState,
                "current dose has no recorded patients",
            ));
        }

        let mut rationale = Rationale::default();
        let mut doses = self.doses.clone();
        for j in 0..doses.len() {
            let c = doses[j].counts;
            if !doses[j].eliminated_safety && rules::safety_eliminated(c.n(), c.n_tox(), params)? {
                for (k, rec) in doses.iter_mut().enumerate().skip(j) {
                    if !rec.eliminated_safety {
                        rec.eliminated_safety = true;
                        rationale.newly_eliminated_safety.push(k);
                    }
                }
            }
            if !doses[j].eliminated_futility && rules::futility_eliminated(c.n(), c.n_eff(), params)? {
                doses[j].eliminated_futility = true;
                rationale.newly_eliminated_futility.push(j);
            }
        }
        let stop = |rationale: Rationale, status: TrialStatus| Decision {
            from_dose: d,
            action: Action::Stop,
            next_dose: None,
            next_cohort_size: None,
            stop: Some(status),
            rationale,
        };
        if doses[0].eliminated_safety || !doses.iter().any(DoseRecord::admissible) {
            return Ok(stop(rationale, TrialStatus::StoppedNoAdmissible));
        }

        let bp = params.boundaries()?;
        let (escalate_le, deescalate_ge) = count_boundaries(&bp, here.n());
        let tox = here.n_tox();
        let region = if tox >= deescalate_ge {
            Region::Deescalate
        } else if tox <= escalate_le {
            Region::Escalate
        } else {
            Region::Stay
        };
        rationale.boundary = Some(BoundaryCheck {
            n: here.n(),
            tox,
            escalate_le,
            deescalate_ge,
            region,
        });

        let top = doses.len() - 1;
        let raw: Vec<usize> = match region {
            Region::Deescalate => vec![d.saturating_sub(1)],
            Region::Escalate => (d..=(d + 1).min(top)).collect(),
            Region::Stay => (d.saturating_sub(1)..=d).collect(),
        };
        let mut candidates: Vec<usize> = raw.into_iter().filter(|&j| doses[j].admissible()).collect();
        if candidates.is_empty() {
            rationale.fallback = true;
            let fallback = (0..d)
                .rev()
                .find(|&j| doses[j].admissible())
                .or_else(|| doses[d].admissible().then_some(d))
                .or_else(|| {
                    (region != Region::Deescalate && d < top && doses[d + 1].admissible())
                        .then_some(d + 1)
                });
            match fallback {
                Some(j) => candidates.push(j),
                None => return Ok(stop(rationale, TrialStatus::StoppedNoAdmissible)),
            }
        }

        let mut best: Option<CandidateEval> = None;
        for &j in &candidates {
            let c = doses[j].counts;
            let eval = CandidateEval {
                dose: j,
                n: c.n(),
                tox: c.n_tox(),
                eff: c.n_eff(),
                dp: rules::dose_desirability(&c, params)?,
            };
            rationale.candidates.push(eval);
            let better = match &best {
                None => true,
                Some(b) => {
                    if eval.dp != b.dp {
                        eval.dp > b.dp
                    } else if eval.dose == d || b.dose == d {
                        eval.dose == d
                    } else {
                        eval.dose < b.dose
                    }
                }
            };
            if better {
                best = Some(eval);
            }
        }
        let chosen = best.expect("candidate set is nonempty").dose;

        if params.stop_rule_enabled && chosen == d && here.n() >= params.per_dose_stop_n {
            return Ok(stop(rationale, TrialStatus::StoppedPerDoseRule));
        }
        if self.enrolled_total >= params.max_n {
            return Ok(stop(rationale, TrialStatus::StoppedMaxN));
        }

        let c = doses[chosen].counts;
        let qualifies = rules::expansion_qualifies_counts(&c, params)?;
        let fits_capacity = self.enrolled_total + params.expanded_cohort <= params.max_n;
        rationale.expansion = Some(ExpansionCheck {
            dose: chosen,
            n: c.n(),
            tox: c.n_tox(),
            eff: c.n_eff(),
            dp: rules::dose_desirability(&c, params)?,
            theta: params.theta,
            qualifies,
            fits_capacity,
        });
        let size = if qualifies && fits_capacity {
            params.expanded_cohort
        } else {
            params.base_cohort.min(self.remaining_capacity())
        };

        Ok(Decision {
            from_dose: d,
            action: match chosen.cmp(&d) {
                std::cmp::Ordering::Greater => Action::Escalate,
                std::cmp::Ordering::Equal => Action::Stay,
                std::cmp::Ordering::Less => Action::Deescalate,
            },
            next_dose: Some(chosen),
            next_cohort_size: Some(size),
            stop: None,
            rationale,
        })
    }

    /// Commit a decision produced by [`TrialState::next_decision`] on this state.
    pub fn apply_decision(&mut self, decision: Decision, timestamp_ms: Option<u64>) -> Result<()> {
        if !self.is_active() {
            return Err(Error::state(StateCode::TrialStopped, "trial has stopped"));
        }
        if self.pending.is_some() || decision.from_dose != self.current_dose {
            return Err(Error::state(
                StateCode::OutOfOrder,
                "decision does not follow the last recorded cohort",
            ));
        }
        for &j in &decision.rationale.newly_eliminated_safety {
            self.doses[j].eliminated_safety = true;
        }
        for &j in &decision.rationale.newly_eliminated_futility {
            self.doses[j].eliminated_futility = true;
        }
        match (decision.action, decision.next_dose, decision.next_cohort_size) {
            (Action::Stop, _, _) => {
                self.status = decision.stop.unwrap_or(TrialStatus::StoppedNoAdmissible);
            }
            (_, Some(dose), Some(cohort_size)) if dose < self.doses.len() => {
                self.current_dose = dose;
                self.pending = Some(Assignment { dose, cohort_size });
            }
            _ => {
                return Err(Error::state(
                    StateCode::InconsistentState,
                    "decision carries no next assignment",
                ))
            }
        }
        self.push_audit(timestamp_ms, AuditEvent::Decision { decision });
        Ok(())
    }

    /// Compute and commit the next decision.
    pub fn advance(&mut self, timestamp_ms: Option<u64>) -> Result<Decision> {
        let decision = self.next_decision()?;
        self.apply_decision(decision.clone(), timestamp_ms)?;
        Ok(decision)
    }

    /// Record a cohort and immediately decide what follows.
    pub fn submit_cohort(
        &mut self,
        dose: usize,
        outcomes: OutcomeCounts2x2,
        timestamp_ms: Option<u64>,
    ) -> Result<Decision> {
        self.record_cohort(dose, outcomes, timestamp_ms)?;
        self.advance(timestamp_ms)
    }

    /// Decision that would follow a hypothetical cohort; `self` is untouched.
    pub fn what_if(&self, dose: usize, outcomes: OutcomeCounts2x2) -> Result<Decision> {
        let mut scratch = self.clone();
        scratch.audit.clear();
        scratch.submit_cohort(dose, outcomes, None)
    }

    /// The recommendation currently in force: the pending decision if one is
    /// due, otherwise the most recent decision (or the starting assignment).
    pub fn recommendation(&self) -> Result<Decision> {
        if self.is_active() && self.pending.is_none() {
            return self.next_decision();
        }
        let last = self.audit.iter().rev().find_map(|e| match &e.event {
            AuditEvent::Decision { decision } => Some(decision.clone()),
            AuditEvent::Cohort { .. } => None,
        });
        if let Some(decision) = last {
            return Ok(decision);
        }
        match (self.status, self.pending) {
            (TrialStatus::Active, Some(assign)) => Ok(Decision {
                from_dose: assign.dose,
                action: Action::Start,
                next_dose: Some(assign.dose),
                next_cohort_size: Some(assign.cohort_size),
                stop: None,
                rationale: Rationale::default(),
            }),
            (status, _) => Ok(Decision {
                from_dose: self.current_dose,
                action: Action::Stop,
                next_dose: None,
                next_cohort_size: None,
                stop: Some(status),
                rationale: Rationale::default(),
            }),
        }
    }

    /// Selected optimal biologic dose of a finished trial: the admissible dose
    /// with at least three patients and the largest desirability probability.
    pub fn final_selection(&self) -> Result<Option<usize>> {
        if self.is_active() {
            return Err(Error::state(StateCode::TrialActive, "trial is still active"));
        }
        let params = &self.params;
        let mut best: Option<(usize, f64)> = None;
        for (j, rec) in self.doses.iter().enumerate() {
            let c = rec.counts;
            if !rec.admissible()
                || c.n() < rules::MIN_N_FOR_ELIMINATION
                || rules::safety_eliminated(c.n(), c.n_tox(), params)?
                || rules::futility_eliminated(c.n(), c.n_eff(), params)?
            {
                continue;
            }
            let dp = rules::dose_desirability(&c, params)?;
            if best.is_none_or(|(_, b)| dp > b) {
                best = Some((j, dp));
            }
        }
        Ok(best.map(|(j, _)| j))
    }

    /// Cohorts in the order they were recorded, with their timestamps.
    pub fn recorded_cohorts(&self) -> impl Iterator<Item = (usize, OutcomeCounts2x2, Option<u64>)> + '_ {
        self.audit.iter().filter_map(|e| match e.event {
            AuditEvent::Cohort { dose, outcomes } => Some((dose, outcomes, e.timestamp_ms)),
            AuditEvent::Decision { .. } => None,
        })
    }

    /// Rebuild the state by feeding the recorded cohorts into a fresh engine.
    pub fn replay(&self) -> Result<TrialState> {
        let mut fresh = TrialState::new(self.params.clone())?;
        for (dose, outcomes, ts) in self.recorded_cohorts() {
            fresh.submit_cohort(dose, outcomes, ts)?;
        }
        Ok(fresh)
    }
}
