//! Protocol tables: safety boundaries, rank-based desirability scores and the
//! cohort-expansion lookup tables.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{csv_line, markdown_table, prob4};
use crate::rules::{self, count_boundaries, DesignParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyRow {
    pub n: u32,
    pub escalate_le: u32,
    pub deescalate_ge: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdsRow {
    pub n: u32,
    pub tox: u32,
    pub eff: u32,
    pub dp: f64,
    pub rank: u32,
}

/// Smallest efficacy count at `(n, tox)` that triggers the expanded cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub n: u32,
    pub tox: u32,
    pub min_eff: u32,
}

/// Multiples of the base cohort from one cohort up to `max_n - base_cohort`,
/// i.e. every sample size after which a dose decision is still made.
pub fn default_safety_grid(params: &DesignParams) -> Vec<u32> {
    cohort_multiples(params.base_cohort, params.max_n.saturating_sub(params.base_cohort))
}

/// `0, base, 2*base, ..., max_n`.
pub fn default_rds_grid(params: &DesignParams) -> Vec<u32> {
    let mut grid = vec![0];
    grid.extend(cohort_multiples(params.base_cohort, params.max_n));
    grid
}

/// Sample sizes below the per-dose stopping size (minus one cohort).
pub fn default_expansion_grid(params: &DesignParams) -> Vec<u32> {
    cohort_multiples(
        params.base_cohort,
        params.per_dose_stop_n.saturating_sub(params.base_cohort),
    )
}

fn cohort_multiples(step: u32, upto: u32) -> Vec<u32> {
    if step == 0 {
        return Vec::new();
    }
    (1..).map(|k| k * step).take_while(|&n| n <= upto).collect()
}

/// Escalation/de-escalation toxicity counts for each `n` in the grid
/// (`n = 0` entries are skipped).
pub fn safety_table(params: &DesignParams, n_grid: &[u32]) -> Result<Vec<SafetyRow>> {
    let bp = params.boundaries()?;
    Ok(n_grid
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let (escalate_le, deescalate_ge) = count_boundaries(&bp, n);
            SafetyRow {
                n,
                escalate_le,
                deescalate_ge,
            }
        })
        .collect())
}

/// Every `(n, tox, eff)` over the grid (entries above `per_dose_cap` are
/// dropped), ranked 1..K by ascending desirability probability.
/// Ties are ordered by `n` ascending, `tox` descending, `eff` ascending.
pub fn rds_table(params: &DesignParams, n_grid: &[u32], per_dose_cap: u32) -> Result<Vec<RdsRow>> {
    let mut grid: Vec<u32> = n_grid.iter().copied().filter(|&n| n <= per_dose_cap).collect();
    grid.sort_unstable();
    grid.dedup();

    let mut rows = Vec::new();
    for &n in &grid {
        for tox in 0..=n {
            for eff in 0..=n {
                let dp = rules::marginal_desirability(n, tox, eff, params)?;
                rows.push(RdsRow {
                    n,
                    tox,
                    eff,
                    dp,
                    rank: 0,
                });
            }
        }
    }
    rows.sort_by(|x, y| {
        x.dp.partial_cmp(&y.dp)
            .unwrap_or(Ordering::Equal)
            .then(x.n.cmp(&y.n))
            .then(y.tox.cmp(&x.tox))
            .then(x.eff.cmp(&y.eff))
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i as u32 + 1;
    }
    Ok(rows)
}

/// Expansion lookup table at threshold `theta`. `(n, tox)` pairs for which no
/// efficacy count qualifies are omitted.
pub fn expansion_table(params: &DesignParams, theta: f64, n_grid: &[u32]) -> Result<Vec<ExpansionRow>> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::invalid(format!("theta must lie in (0, 1), got {theta}")));
    }
    let params = DesignParams {
        theta,
        ..params.clone()
    };
    let mut rows = Vec::new();
    for &n in n_grid {
        for tox in 0..=n {
            let mut min_eff = None;
            for eff in 0..=n {
                if rules::expansion_qualifies(n, tox, eff, &params)? {
                    min_eff = Some(eff);
                    break;
                }
            }
            if let Some(min_eff) = min_eff {
                rows.push(ExpansionRow { n, tox, min_eff });
            }
        }
    }
    Ok(rows)
}

pub const SAFETY_HEADER: [&str; 3] = ["n", "escalate_le", "deescalate_ge"];
pub const RDS_HEADER: [&str; 5] = ["n", "tox", "eff", "dp", "rank"];
pub const EXPANSION_HEADER: [&str; 3] = ["n", "tox", "min_eff"];

fn safety_fields(rows: &[SafetyRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| vec![r.n.to_string(), r.escalate_le.to_string(), r.deescalate_ge.to_string()])
        .collect()
}

fn rds_fields(rows: &[RdsRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.tox.to_string(),
                r.eff.to_string(),
                prob4(r.dp),
                r.rank.to_string(),
            ]
        })
        .collect()
}

fn expansion_fields(rows: &[ExpansionRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| vec![r.n.to_string(), r.tox.to_string(), r.min_eff.to_string()])
        .collect()
}

fn to_csv(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut out = csv_line(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    for r in rows {
        out.push_str(&csv_line(&r));
    }
    out
}

pub fn safety_csv(rows: &[SafetyRow]) -> String {
    to_csv(&SAFETY_HEADER, safety_fields(rows))
}

pub fn rds_csv(rows: &[RdsRow]) -> String {
    to_csv(&RDS_HEADER, rds_fields(rows))
}

pub fn expansion_csv(rows: &[ExpansionRow]) -> String {
    to_csv(&EXPANSION_HEADER, expansion_fields(rows))
}

pub fn safety_markdown(rows: &[SafetyRow]) -> String {
    markdown_table(&SAFETY_HEADER, &safety_fields(rows))
}

pub fn rds_markdown(rows: &[RdsRow]) -> String {
    markdown_table(&RDS_HEADER, &rds_fields(rows))
}

pub fn expansion_markdown(rows: &[ExpansionRow]) -> String {
    markdown_table(&EXPANSION_HEADER, &expansion_fields(rows))
}

/// All protocol tables for one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSet {
    pub safety: Vec<SafetyRow>,
    pub rds: Vec<RdsRow>,
    pub expansion: Vec<ThetaTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaTable {
    pub theta: f64,
    pub rows: Vec<ExpansionRow>,
}

impl TableSet {
    /// Tables on the default grids for each threshold in `thetas`.
    pub fn generate(params: &DesignParams, thetas: &[f64]) -> Result<Self> {
        let expansion_grid = default_expansion_grid(params);
        Ok(Self {
            safety: safety_table(params, &default_safety_grid(params))?,
            rds: rds_table(params, &default_rds_grid(params), params.max_n)?,
            expansion: thetas
                .iter()
                .map(|&theta| {
                    Ok(ThetaTable {
                        theta,
                        rows: expansion_table(params, theta, &expansion_grid)?,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn safety_block() {
        let p = DesignParams::default();
        let rows = safety_table(&p, &[3, 6, 9, 12, 15]).unwrap();
        let esc: Vec<_> = rows.iter().map(|r| r.escalate_le).collect();
        let de: Vec<_> = rows.iter().map(|r| r.deescalate_ge).collect();
        assert_eq!(esc, [0, 1, 2, 3, 4]);
        assert_eq!(de, [2, 3, 4, 6, 7]);
        assert_eq!(
            safety_table(&p, &[3]).unwrap(),
            vec![SafetyRow { n: 3, escalate_le: 0, deescalate_ge: 2 }]
        );
        assert!(safety_table(&p, &[]).unwrap().is_empty());
    }

    #[test]
    fn default_grids() {
        let p = DesignParams {
            max_n: 18,
            ..DesignParams::default()
        };
        assert_eq!(default_safety_grid(&p), [3, 6, 9, 12, 15]);
        assert_eq!(default_expansion_grid(&p), [3, 6, 9]);
        assert_eq!(default_rds_grid(&p), [0, 3, 6, 9, 12, 15, 18]);
    }

    #[test]
    fn rds_single_row() {
        let rows = rds_table(&DesignParams::default(), &[0], 36).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].rank, 1);
        assert!((rows[0].dp - 0.295).abs() < 1e-12);
    }

    #[test]
    fn rds_ties_are_deterministic() {
        // (3,0,1) and (3,3,3) share the same quasi-event count.
        let rows = rds_table(&DesignParams::default(), &[3], 36).unwrap();
        let pos = |t, e| rows.iter().position(|r| r.tox == t && r.eff == e).unwrap();
        assert_eq!(rows[pos(3, 3)].dp, rows[pos(0, 1)].dp);
        assert!(pos(3, 3) < pos(0, 1));
    }

    #[test]
    fn rds_cap_drops_large_n() {
        let rows = rds_table(&DesignParams::default(), &[0, 3, 6], 3).unwrap();
        assert_eq!(rows.len(), 1 + 16);
    }

    #[test]
    fn expansion_empty_near_one() {
        let p = DesignParams::default();
        assert!(expansion_table(&p, 0.999_999, &[3, 6, 9]).unwrap().is_empty());
        assert!(expansion_table(&p, 1.0, &[3]).is_err());
    }

    #[test]
    fn expansion_rows_are_tight() {
        let p = DesignParams::default();
        for theta in [0.1, 0.2, 0.25, 0.4] {
            let q = DesignParams { theta, ..p.clone() };
            for r in expansion_table(&p, theta, &[3, 6, 9, 12]).unwrap() {
                assert!(rules::expansion_qualifies(r.n, r.tox, r.min_eff, &q).unwrap());
                if r.min_eff > 0 {
                    assert!(!rules::expansion_qualifies(r.n, r.tox, r.min_eff - 1, &q).unwrap());
                }
            }
        }
    }

    #[test]
    fn csv_and_markdown_headers() {
        let p = DesignParams::default();
        let rows = expansion_table(&p, 0.2, &[3]).unwrap();
        assert_eq!(expansion_csv(&rows), "n,tox,min_eff\n3,0,1\n3,1,2\n");
        assert!(expansion_markdown(&rows).starts_with("| n | tox | min_eff |"));
        let rds = rds_table(&p, &[0], 36).unwrap();
        assert_eq!(rds_csv(&rds), "n,tox,eff,dp,rank\n0,0,0,0.2950,1\n");
    }
}
