//! Benchmark aggregation: micro-averages and within-group Borda scores.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::correlation::{pearson, GroupCorrelation};
use crate::datamodel::{Metric, PairScoreRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroAverage {
    pub mean: f64,
    pub n: usize,
    pub n_missing: usize,
}

/// Mean of `metric` over every record carrying it.
pub fn micro_average(records: &[PairScoreRecord], metric: Metric) -> Result<MicroAverage> {
    let values: Vec<f64> = records.iter().filter_map(|r| r.get(metric)).collect();
    if values.is_empty() {
        return Err(Error::InsufficientData(format!("no record carries {metric}")));
    }
    Ok(MicroAverage {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        n: values.len(),
        n_missing: records.len() - values.len(),
    })
}

/// One system's score in one ranking group.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemScore {
    pub group: String,
    pub system: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BordaGroup {
    pub group: String,
    /// Score per system, aligned with [`BordaTable::systems`].
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BordaTable {
    pub systems: Vec<String>,
    pub mean_scores: Vec<f64>,
    pub groups: Vec<BordaGroup>,
    pub skipped_groups: Vec<String>,
}

impl BordaTable {
    pub fn mean_for(&self, system: &str) -> Option<f64> {
        self.systems.iter().position(|s| s == system).map(|i| self.mean_scores[i])
    }
}

/// Borda scores within one group: the best of S systems gets S, the worst 1;
/// tied systems share the average of the scores they span.
pub fn borda_scores(values: &[f64], higher_is_better: bool) -> Vec<f64> {
    let s = values.len();
    let mut order: Vec<usize> = (0..s).collect();
    // worst first, so position p earns score p + 1
    order.sort_by(|&a, &b| {
        let c = values[a].total_cmp(&values[b]);
        if higher_is_better {
            c
        } else {
            c.reverse()
        }
    });
    let mut scores = vec![0.0; s];
    let mut p = 0;
    while p < s {
        let mut q = p;
        while q + 1 < s && values[order[q + 1]] == values[order[p]] {
            q += 1;
        }
        // positions p..=q share scores p+1..=q+1
        let shared = (p + q + 2) as f64 / 2.0;
        for &idx in &order[p..=q] {
            scores[idx] = shared;
        }
        p = q + 1;
    }
    scores
}

/// Rank `systems` within every group and average the Borda scores. Groups
/// missing any system are skipped with a warning.
pub fn borda(entries: &[SystemScore], systems: &[String], higher_is_better: bool) -> Result<BordaTable> {
    let mut by_group: Vec<(String, HashMap<&str, f64>)> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for e in entries {
        if !e.value.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite score for system `{}` in group `{}`",
                e.system, e.group
            )));
        }
        let pos = *index.entry(e.group.as_str()).or_insert_with(|| {
            by_group.push((e.group.clone(), HashMap::new()));
            by_group.len() - 1
        });
        if by_group[pos].1.insert(e.system.as_str(), e.value).is_some() {
            return Err(Error::Validation(format!(
                "system `{}` scored twice in group `{}`",
                e.system, e.group
            )));
        }
    }
    let mut groups = Vec::new();
    let mut skipped = Vec::new();
    for (group, scores) in by_group {
        let values: Option<Vec<f64>> = systems.iter().map(|s| scores.get(s.as_str()).copied()).collect();
        match values {
            Some(v) => groups.push(BordaGroup {
                scores: borda_scores(&v, higher_is_better),
                group,
            }),
            None => {
                log::warn!("Borda: group `{group}` lacks a score for some system; skipped");
                skipped.push(group);
            }
        }
    }
    if groups.is_empty() {
        return Err(Error::InsufficientData("no group has scores for every system".into()));
    }
    let mean_scores = (0..systems.len())
        .map(|i| groups.iter().map(|g| g.scores[i]).sum::<f64>() / groups.len() as f64)
        .collect();
    Ok(BordaTable {
        systems: systems.to_vec(),
        mean_scores,
        groups,
        skipped_groups: skipped,
    })
}

/// A group left out of correlation aggregation, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedGroup {
    pub group_id: String,
    pub reason: String,
}

/// Pearson correlation between two metrics inside each group, over the pairs
/// carrying both. Groups with fewer than 3 such pairs or a constant metric
/// are excluded, never clamped to zero.
pub fn group_correlations(
    records: &[PairScoreRecord],
    x: Metric,
    y: Metric,
) -> (Vec<GroupCorrelation>, Vec<ExcludedGroup>) {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let g = r.key.group_id.as_str();
        let slot = groups.entry(g).or_insert_with(|| {
            order.push(g);
            (Vec::new(), Vec::new())
        });
        if let (Some(a), Some(b)) = (r.get(x), r.get(y)) {
            slot.0.push(a);
            slot.1.push(b);
        }
    }
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for g in order {
        let (xs, ys) = &groups[g];
        match pearson(xs, ys) {
            Ok(r) => kept.push(GroupCorrelation {
                group_id: g.to_string(),
                r,
                n_pairs: xs.len(),
            }),
            Err(e) => {
                log::info!("group `{g}` excluded from {x}/{y} correlation: {e}");
                excluded.push(ExcludedGroup {
                    group_id: g.to_string(),
                    reason: e.to_string(),
                })
            }
        }
    }
    (kept, excluded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::PairKey;

    fn rec(g: &str, a: &str, v: Option<f64>) -> PairScoreRecord {
        let mut r = PairScoreRecord::new(PairKey::new(g, a, "zz"));
        r.dswed = v;
        r
    }

    fn entries(rows: &[(&str, &str, f64)]) -> Vec<SystemScore> {
        rows.iter()
            .map(|&(g, s, v)| SystemScore {
                group: g.into(),
                system: s.into(),
                value: v,
            })
            .collect()
    }

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn micro_average_cases() {
        let rs = [rec("g", "a", Some(1.0)), rec("g", "b", Some(2.0)), rec("g", "c", Some(3.0))];
        assert_eq!(micro_average(&rs, Metric::Dswed).unwrap().mean, 2.0);
        let rs = [rec("g", "a", Some(4.0)), rec("g", "b", None), rec("g", "c", Some(8.0))];
        let m = micro_average(&rs, Metric::Dswed).unwrap();
        assert_eq!((m.mean, m.n, m.n_missing), (6.0, 2, 1));
        let rs = [rec("g", "a", None)];
        assert!(micro_average(&rs, Metric::Dswed).is_err());
    }

    #[test]
    fn seven_systems_best_gets_seven() {
        let sys: Vec<String> = (0..7).map(|i| format!("s{i}")).collect();
        let e: Vec<SystemScore> = sys
            .iter()
            .enumerate()
            .map(|(i, s)| SystemScore {
                group: "g".into(),
                system: s.clone(),
                value: (i * 3 % 7) as f64,
            })
            .collect();
        let t = borda(&e, &sys, true).unwrap();
        let best = (0..7).max_by_key(|&i| i * 3 % 7).unwrap();
        assert_eq!(t.mean_scores[best], 7.0);
        assert_eq!(t.groups[0].scores.iter().sum::<f64>(), 28.0);
    }

    #[test]
    fn ties_share_average() {
        let t = borda(&entries(&[("g", "a", 1.0), ("g", "b", 1.0)]), &names(&["a", "b"]), true).unwrap();
        assert_eq!(t.mean_scores, vec![1.5, 1.5]);
        let s = borda_scores(&[3.0, 1.0, 3.0, 2.0], true);
        assert_eq!(s, vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn opposite_orders_cancel() {
        let e = entries(&[
            ("g1", "a", 1.0),
            ("g1", "b", 2.0),
            ("g1", "c", 3.0),
            ("g2", "a", 3.0),
            ("g2", "b", 2.0),
            ("g2", "c", 1.0),
        ]);
        let t = borda(&e, &names(&["a", "b", "c"]), true).unwrap();
        assert_eq!(t.mean_scores, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn lower_is_better() {
        let t = borda(&entries(&[("g", "a", 1.0), ("g", "b", 2.0)]), &names(&["a", "b"]), false).unwrap();
        assert_eq!(t.mean_scores, vec![2.0, 1.0]);
    }

    #[test]
    fn incomplete_groups_skipped() {
        let e = entries(&[("g1", "a", 1.0), ("g1", "b", 2.0), ("g2", "a", 1.0)]);
        let t = borda(&e, &names(&["a", "b"]), true).unwrap();
        assert_eq!(t.skipped_groups, vec!["g2".to_string()]);
        assert!(borda(&entries(&[("g2", "a", 1.0)]), &names(&["a", "b"]), true).is_err());
    }

    #[test]
    fn degenerate_groups_excluded() {
        let mut rs = Vec::new();
        for (i, (d, p)) in [(1.0, 2.0), (2.0, 3.0), (3.0, 5.0)].iter().enumerate() {
            let mut r = rec("ok", &format!("s{i}"), Some(*d));
            r.pmos = Some(*p);
            rs.push(r);
        }
        for i in 0..3 {
            let mut r = rec("flat", &format!("s{i}"), Some(i as f64));
            r.pmos = Some(3.0);
            rs.push(r);
        }
        let (kept, excluded) = group_correlations(&rs, Metric::Dswed, Metric::Pmos);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].group_id, "ok");
        assert_eq!(excluded[0].group_id, "flat");
    }
}
