//! Plain-text decision reports shared by `decide` and the service.

use std::fmt::Write;

use adboin12::engine::{Action, Decision, Region};
use adboin12::format::prob4;
use adboin12::{Result, TrialState};

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn doses(list: &[usize]) -> String {
    list.iter()
        .map(|d| format!("dose {}", d + 1))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Rationale lines for one decision. Doses are printed one-based.
pub fn render_decision(decision: &Decision) -> String {
    let mut out = String::new();
    let r = &decision.rationale;
    let _ = writeln!(out, "recommendation: {decision}");
    if let Some(b) = r.boundary {
        let region = match b.region {
            Region::Escalate => "escalate",
            Region::Stay => "stay",
            Region::Deescalate => "de-escalate",
        };
        let _ = writeln!(
            out,
            "boundary at dose {}: n={} tox={} (escalate if <= {}, de-escalate if >= {}) -> {region}",
            decision.from_dose + 1,
            b.n,
            b.tox,
            b.escalate_le,
            b.deescalate_ge
        );
    }
    if !r.newly_eliminated_safety.is_empty() {
        let _ = writeln!(out, "eliminated for toxicity: {}", doses(&r.newly_eliminated_safety));
    }
    if !r.newly_eliminated_futility.is_empty() {
        let _ = writeln!(out, "eliminated for futility: {}", doses(&r.newly_eliminated_futility));
    }
    if !r.candidates.is_empty() {
        let _ = writeln!(out, "candidates:");
        for c in &r.candidates {
            let _ = writeln!(
                out,
                "  dose {}: n={} tox={} eff={} dp={}",
                c.dose + 1,
                c.n,
                c.tox,
                c.eff,
                prob4(c.dp)
            );
        }
    }
    if r.fallback {
        let _ = writeln!(out, "no admissible candidate in range; fell back to the nearest admissible dose");
    }
    if let Some(e) = r.expansion {
        let _ = writeln!(
            out,
            "expansion at dose {}: n={} tox={} eff={} dp={} theta={} qualifies={} fits={}",
            e.dose + 1,
            e.n,
            e.tox,
            e.eff,
            prob4(e.dp),
            e.theta,
            yes_no(e.qualifies),
            yes_no(e.fits_capacity)
        );
    }
    out
}

/// Full report for the recommendation currently in force.
pub fn render(state: &TrialState) -> Result<String> {
    let decision = state.recommendation()?;
    let mut out = render_decision(&decision);
    let _ = writeln!(out, "status: {}", state.status.as_str());
    let _ = writeln!(out, "enrolled: {} of {}", state.enrolled_total, state.params.max_n);
    if decision.action == Action::Stop {
        let selection = if state.is_active() {
            let mut done = state.clone();
            done.apply_decision(decision.clone(), None)?;
            done.final_selection()?
        } else {
            state.final_selection()?
        };
        let selected = match selection {
            Some(d) => format!("dose {}", d + 1),
            None => "none".to_string(),
        };
        let _ = writeln!(out, "selected OBD: {selected}");
    }
    Ok(out)
}
