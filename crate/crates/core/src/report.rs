//! Skill-score aggregation: samples are averaged per site, sites are
//! averaged into fleet figures, and every scenario is compared against the
//! ground-truth-clouds scenario.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::{mae, rmse, skill_score, Condition, MetricError, SkyClass};

/// Scenario name that the difference columns are measured against.
pub const REFERENCE_SCENARIO: &str = "ground_truth_clouds";

/// One evaluated forecast sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub net: String,
    pub scenario: String,
    pub site: String,
    pub timestamp: String,
    pub condition: SkyClass,
    pub pred: Vec<f64>,
    pub actual: Vec<f64>,
    pub persistence: Vec<f64>,
}

/// Per-sample skill scores; `None` marks a sample excluded by the
/// zero-persistence-error rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleSkill {
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
}

impl SampleResult {
    pub fn skill(&self) -> Result<SampleSkill, MetricError> {
        Ok(SampleSkill {
            rmse: skill_score(rmse(&self.pred, &self.actual)?, rmse(&self.persistence, &self.actual)?),
            mae: skill_score(mae(&self.pred, &self.actual)?, mae(&self.persistence, &self.actual)?),
        })
    }
}

/// Mean skill of one report cell, absent when no sample contributed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub rmse_skill: Option<f64>,
    pub mae_skill: Option<f64>,
    pub sample_count: usize,
    pub rmse_excluded: usize,
    pub mae_excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub net: String,
    pub scenario: String,
    pub condition: Condition,
}

/// Fleet-level row with differences against the reference scenario.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FleetCell {
    pub rmse_skill: Option<f64>,
    pub mae_skill: Option<f64>,
    pub sites: usize,
    pub sample_count: usize,
    pub rmse_diff: Option<f64>,
    pub mae_diff: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkillReport {
    /// `(cell, site) -> per-site means`
    pub sites: BTreeMap<(CellKey, String), Cell>,
    pub fleet: BTreeMap<CellKey, FleetCell>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

/// Builds the report: per-sample skills, mean per site, mean over sites.
pub fn aggregate_report(samples: &[SampleResult]) -> Result<SkillReport, MetricError> {
    #[derive(Default)]
    struct Acc {
        rmse: Vec<f64>,
        mae: Vec<f64>,
        count: usize,
    }
    let mut per_site: BTreeMap<(CellKey, String), Acc> = BTreeMap::new();
    let mut groups: BTreeSet<(String, String)> = BTreeSet::new();
    for s in samples {
        let skill = s.skill()?;
        groups.insert((s.net.clone(), s.scenario.clone()));
        for condition in Condition::ALL.into_iter().filter(|c| c.contains(s.condition)) {
            let key = CellKey {
                net: s.net.clone(),
                scenario: s.scenario.clone(),
                condition,
            };
            let acc = per_site.entry((key, s.site.clone())).or_default();
            acc.count += 1;
            acc.rmse.extend(skill.rmse);
            acc.mae.extend(skill.mae);
        }
    }

    let mut report = SkillReport::default();
    for (key, acc) in per_site {
        report.sites.insert(
            key,
            Cell {
                rmse_skill: mean(&acc.rmse),
                mae_skill: mean(&acc.mae),
                sample_count: acc.count,
                rmse_excluded: acc.count - acc.rmse.len(),
                mae_excluded: acc.count - acc.mae.len(),
            },
        );
    }

    for (net, scenario) in &groups {
        for condition in Condition::ALL {
            let key = CellKey {
                net: net.clone(),
                scenario: scenario.clone(),
                condition,
            };
            let cells: Vec<&Cell> = report
                .sites
                .range((key.clone(), String::new())..)
                .take_while(|((k, _), _)| *k == key)
                .map(|(_, c)| c)
                .collect();
            let rmse: Vec<f64> = cells.iter().filter_map(|c| c.rmse_skill).collect();
            let mae: Vec<f64> = cells.iter().filter_map(|c| c.mae_skill).collect();
            report.fleet.insert(
                key,
                FleetCell {
                    rmse_skill: mean(&rmse),
                    mae_skill: mean(&mae),
                    sites: cells.len(),
                    sample_count: cells.iter().map(|c| c.sample_count).sum(),
                    rmse_diff: None,
                    mae_diff: None,
                },
            );
        }
    }

    let keys: Vec<CellKey> = report.fleet.keys().cloned().collect();
    for key in keys {
        let reference = CellKey {
            scenario: REFERENCE_SCENARIO.to_string(),
            ..key.clone()
        };
        let Some(base) = report.fleet.get(&reference).copied() else {
            continue;
        };
        let cell = report.fleet.get_mut(&key).expect("key taken from map");
        cell.rmse_diff = diff(cell.rmse_skill, base.rmse_skill);
        cell.mae_diff = diff(cell.mae_skill, base.mae_skill);
    }
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_fixed(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".to_string())
}

impl SkillReport {
    pub fn fleet_cell(&self, net: &str, scenario: &str, condition: Condition) -> Option<&FleetCell> {
        self.fleet.get(&CellKey {
            net: net.to_string(),
            scenario: scenario.to_string(),
            condition,
        })
    }

    /// One row per site x scenario x condition plus `site = fleet` rows.
    /// Absent values are empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "net,scenario,site,condition,rmse_skill,mae_skill,sample_count,rmse_excluded,mae_excluded,rmse_diff,mae_diff\n",
        );
        for ((key, site), c) in &self.sites {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},,",
                key.net,
                key.scenario,
                site,
                key.condition.as_str(),
                opt(c.rmse_skill),
                opt(c.mae_skill),
                c.sample_count,
                c.rmse_excluded,
                c.mae_excluded
            );
        }
        for (key, c) in &self.fleet {
            let _ = writeln!(
                out,
                "{},{},fleet,{},{},{},{},,,{},{}",
                key.net,
                key.scenario,
                key.condition.as_str(),
                opt(c.rmse_skill),
                opt(c.mae_skill),
                c.sample_count,
                opt(c.rmse_diff),
                opt(c.mae_diff)
            );
        }
        out
    }

    /// Fleet averages laid out per net and condition, one row per scenario
    /// with RMSE/MAE skill and their difference to the reference scenario.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let nets: BTreeSet<&str> = self.fleet.keys().map(|k| k.net.as_str()).collect();
        for net in nets {
            for condition in Condition::ALL {
                let rows: Vec<(&CellKey, &FleetCell)> = self
                    .fleet
                    .iter()
                    .filter(|(k, _)| k.net == net && k.condition == condition)
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                let _ = writeln!(out, "net: {net}   condition: {}", condition.as_str());
                let _ = writeln!(
                    out,
                    "{:<34} {:>10} {:>10} {:>10} {:>10} {:>8}",
                    "scenario", "RMSE skill", "RMSE diff", "MAE skill", "MAE diff", "samples"
                );
                for (k, c) in rows {
                    let _ = writeln!(
                        out,
                        "{:<34} {:>10} {:>10} {:>10} {:>10} {:>8}",
                        k.scenario,
                        opt_fixed(c.rmse_skill),
                        opt_fixed(c.rmse_diff),
                        opt_fixed(c.mae_skill),
                        opt_fixed(c.mae_diff),
                        c.sample_count
                    );
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Per-sample dump: everything needed to recompute the report.
pub fn samples_to_csv(samples: &[SampleResult]) -> String {
    let steps = samples.first().map_or(6, |s| s.actual.len());
    let mut out = String::from("net,scenario,site,timestamp,condition");
    for prefix in ["pred", "actual", "persist"] {
        for i in 1..=steps {
            let _ = write!(out, ",{prefix}_{i}");
        }
    }
    out.push('\n');
    for s in samples {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            s.net,
            s.scenario,
            s.site,
            s.timestamp,
            s.condition.as_str()
        );
        for v in s.pred.iter().chain(&s.actual).chain(&s.persistence) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Mean absolute and root mean squared error per horizon step, per net and
/// scenario, for plotting error growth over the forecast hour.
pub fn horizon_errors_csv(samples: &[SampleResult]) -> String {
    let mut acc: BTreeMap<(String, String, usize), (f64, f64, usize)> = BTreeMap::new();
    for s in samples {
        for (i, (p, a)) in s.pred.iter().zip(&s.actual).enumerate() {
            let e = acc.entry((s.net.clone(), s.scenario.clone(), i + 1)).or_default();
            e.0 += (p - a).abs();
            e.1 += (p - a) * (p - a);
            e.2 += 1;
        }
    }
    let mut out = String::from("net,scenario,step,mae,rmse,samples\n");
    for ((net, scenario, step), (abs, sq, n)) in acc {
        let _ = writeln!(
            out,
            "{net},{scenario},{step},{},{},{n}",
            abs / n as f64,
            (sq / n as f64).sqrt()
        );
    }
    out
}
