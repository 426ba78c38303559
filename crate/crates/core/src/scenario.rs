//! True dose-outcome scenarios for simulation, and the bundled scenario bank.

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::DesignParams;
use crate::UtilityWeights;

/// Correct answer for a scenario: an explicit dose (or explicitly none), or
/// derived from the true probabilities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TrueObd {
    Explicit(Option<usize>),
    #[default]
    Derived,
}

impl Serialize for TrueObd {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TrueObd::Explicit(Some(d)) => s.serialize_u64(*d as u64),
            TrueObd::Explicit(None) => s.serialize_none(),
            TrueObd::Derived => s.serialize_str("derived"),
        }
    }
}

impl<'de> Deserialize<'de> for TrueObd {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Null => Ok(TrueObd::Explicit(None)),
            serde_json::Value::Number(n) => n
                .as_u64()
                .map(|v| TrueObd::Explicit(Some(v as usize)))
                .ok_or_else(|| de::Error::custom("true_obd must be a nonnegative dose index")),
            serde_json::Value::String(s) if s == "derived" => Ok(TrueObd::Derived),
            other => Err(de::Error::custom(format!(
                "true_obd must be an index, null or \"derived\", got {other}"
            ))),
        }
    }
}

/// True per-dose toxicity and efficacy probabilities. Dose indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(rename = "pT")]
    pub p_tox: Vec<f64>,
    #[serde(rename = "pE")]
    pub p_eff: Vec<f64>,
    #[serde(default)]
    pub true_obd: TrueObd,
}

impl Scenario {
    pub fn new(name: impl Into<String>, p_tox: Vec<f64>, p_eff: Vec<f64>, true_obd: TrueObd) -> Self {
        Self {
            name: name.into(),
            p_tox,
            p_eff,
            true_obd,
        }
    }

    pub fn num_doses(&self) -> usize {
        self.p_tox.len()
    }

    pub fn validate(&self, params: &DesignParams) -> Result<()> {
        if self.p_tox.len() != self.p_eff.len() {
            return Err(Error::config(format!(
                "scenario {}: pT and pE lengths differ",
                self.name
            )));
        }
        if self.p_tox.len() != params.num_doses {
            return Err(Error::config(format!(
                "scenario {} has {} doses, design has {}",
                self.name,
                self.p_tox.len(),
                params.num_doses
            )));
        }
        if self
            .p_tox
            .iter()
            .chain(&self.p_eff)
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::config(format!(
                "scenario {}: probabilities must lie in [0, 1]",
                self.name
            )));
        }
        if let TrueObd::Explicit(Some(d)) = self.true_obd {
            if d >= self.p_tox.len() {
                return Err(Error::config(format!(
                    "scenario {}: true_obd {d} out of range",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Expected utility (0-100) of each dose under independent outcomes.
    pub fn true_utilities(&self, weights: &UtilityWeights) -> Vec<f64> {
        self.p_tox
            .iter()
            .zip(&self.p_eff)
            .map(|(&t, &e)| {
                weights.w_eff_notox * e * (1.0 - t)
                    + weights.w_eff_tox * e * t
                    + weights.w_noeff_notox * (1.0 - e) * (1.0 - t)
                    + weights.w_noeff_tox * (1.0 - e) * t
            })
            .collect()
    }

    /// Highest-utility dose among those with `pT <= phi_t` and `pE >= psi_e`
    /// (lowest index on ties); `None` when no dose is acceptable.
    pub fn derived_obd(&self, params: &DesignParams) -> Option<usize> {
        let u = self.true_utilities(&params.weights);
        let mut best: Option<usize> = None;
        for j in 0..self.p_tox.len() {
            if self.p_tox[j] > params.phi_t || self.p_eff[j] < params.psi_e {
                continue;
            }
            if best.is_none_or(|b| u[j] > u[b]) {
                best = Some(j);
            }
        }
        best
    }

    pub fn resolve_obd(&self, params: &DesignParams) -> Option<usize> {
        match self.true_obd {
            TrueObd::Explicit(d) => d,
            TrueObd::Derived => self.derived_obd(params),
        }
    }

    /// Doses whose true toxicity exceeds the target.
    pub fn toxic_doses(&self, params: &DesignParams) -> Vec<bool> {
        self.p_tox.iter().map(|&t| t > params.phi_t).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBank {
    pub scenarios: Vec<Scenario>,
}

impl ScenarioBank {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("malformed scenario file: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario bank serializes")
    }

    pub fn validate(&self, params: &DesignParams) -> Result<()> {
        self.scenarios.iter().try_for_each(|s| s.validate(params))
    }

    /// Sixteen five-dose scenarios: the OBD at every position, plateaued and
    /// umbrella-shaped efficacy, plus one all-toxic and one all-futile case.
    /// Calibrated for `phi_t = 0.35`, `psi_e = 0.25` and the default weights.
    pub fn builtin() -> Self {
        let s = |name: &str, t: [f64; 5], e: [f64; 5], obd: Option<usize>| {
            Scenario::new(name, t.to_vec(), e.to_vec(), TrueObd::Explicit(obd))
        };
        Self {
            scenarios: vec![
                s("s01_plateau_obd1", [0.05, 0.12, 0.30, 0.45, 0.55], [0.45, 0.46, 0.47, 0.48, 0.50], Some(0)),
                s("s02_plateau_obd2", [0.05, 0.10, 0.15, 0.30, 0.45], [0.20, 0.45, 0.46, 0.47, 0.48], Some(1)),
                s("s03_rising_obd3", [0.02, 0.05, 0.10, 0.25, 0.40], [0.10, 0.25, 0.50, 0.52, 0.55], Some(2)),
                s("s04_rising_obd4", [0.02, 0.05, 0.08, 0.12, 0.40], [0.05, 0.15, 0.30, 0.55, 0.56], Some(3)),
                s("s05_low_tox_obd5", [0.02, 0.04, 0.06, 0.08, 0.10], [0.05, 0.10, 0.20, 0.35, 0.55], Some(4)),
                s("s06_toxic_above_obd2", [0.10, 0.25, 0.40, 0.50, 0.60], [0.30, 0.50, 0.55, 0.58, 0.60], Some(1)),
                s("s07_mtd_is_obd4", [0.05, 0.10, 0.20, 0.30, 0.40], [0.30, 0.40, 0.50, 0.60, 0.65], Some(3)),
                s("s08_flat_eff_obd2", [0.05, 0.10, 0.20, 0.30, 0.40], [0.30, 0.60, 0.60, 0.60, 0.60], Some(1)),
                s("s09_umbrella_obd3", [0.05, 0.10, 0.15, 0.20, 0.25], [0.20, 0.40, 0.60, 0.40, 0.30], Some(2)),
                s("s10_moderate_tox_obd2", [0.15, 0.20, 0.35, 0.50, 0.60], [0.30, 0.55, 0.55, 0.60, 0.65], Some(1)),
                s("s11_slow_rise_obd5", [0.01, 0.02, 0.03, 0.05, 0.08], [0.10, 0.20, 0.30, 0.40, 0.50], Some(4)),
                s("s12_only_dose1", [0.25, 0.45, 0.55, 0.65, 0.75], [0.40, 0.50, 0.55, 0.60, 0.65], Some(0)),
                s("s13_peak_obd3", [0.05, 0.08, 0.25, 0.45, 0.60], [0.15, 0.30, 0.45, 0.50, 0.55], Some(2)),
                s("s14_late_eff_obd5", [0.03, 0.06, 0.10, 0.20, 0.33], [0.05, 0.10, 0.25, 0.45, 0.60], Some(4)),
                s("s15_all_toxic", [0.50, 0.60, 0.70, 0.80, 0.85], [0.30, 0.40, 0.50, 0.60, 0.65], None),
                s("s16_all_futile", [0.05, 0.10, 0.15, 0.20, 0.25], [0.05, 0.07, 0.09, 0.10, 0.12], None),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_truth_matches_derivation() {
        let p = DesignParams::default();
        let bank = ScenarioBank::builtin();
        bank.validate(&p).unwrap();
        assert_eq!(bank.scenarios.len(), 16);
        for s in &bank.scenarios {
            assert_eq!(s.resolve_obd(&p), s.derived_obd(&p), "{}", s.name);
        }
        let positions: std::collections::BTreeSet<_> =
            bank.scenarios.iter().filter_map(|s| s.resolve_obd(&p)).collect();
        assert_eq!(positions.len(), 5);
    }

    #[test]
    fn true_obd_json_forms() {
        let text = r#"{"scenarios":[
            {"name":"a","pT":[0.1,0.2],"pE":[0.3,0.5],"true_obd":1},
            {"name":"b","pT":[0.9,0.9],"pE":[0.3,0.5],"true_obd":null},
            {"name":"c","pT":[0.1,0.2],"pE":[0.3,0.5],"true_obd":"derived"},
            {"name":"d","pT":[0.1,0.2],"pE":[0.3,0.5]}
        ]}"#;
        let bank = ScenarioBank::from_json(text).unwrap();
        let kinds: Vec<_> = bank.scenarios.iter().map(|s| s.true_obd).collect();
        assert_eq!(
            kinds,
            vec![
                TrueObd::Explicit(Some(1)),
                TrueObd::Explicit(None),
                TrueObd::Derived,
                TrueObd::Derived
            ]
        );
        assert_eq!(ScenarioBank::from_json(&bank.to_json()).unwrap(), bank);
        assert!(ScenarioBank::from_json(r#"{"scenarios":[{"name":"x","pT":[0.1],"pE":[0.2],"true_obd":"best"}]}"#).is_err());
    }

    #[test]
    fn validation_catches_mismatches() {
        let p = DesignParams::default();
        let s = Scenario::new("short", vec![0.1; 4], vec![0.3; 4], TrueObd::Derived);
        assert!(matches!(s.validate(&p), Err(Error::Config(_))));
        let s = Scenario::new("prob", vec![1.2; 5], vec![0.3; 5], TrueObd::Derived);
        assert!(s.validate(&p).is_err());
        let s = Scenario::new("obd", vec![0.1; 5], vec![0.3; 5], TrueObd::Explicit(Some(7)));
        assert!(s.validate(&p).is_err());
    }
}
