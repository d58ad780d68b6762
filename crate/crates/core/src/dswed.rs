//! Weighted edit distance over discrete speech token sequences.
//!
//! The distance is the minimum over all edit scripts of
//! `w_sub * subs + w_ins * ins + w_del * dels`, with a 0/1 substitution base
//! cost (matches are free). Deletions consume tokens of the first sequence,
//! insertions consume tokens of the second. Consecutive repeated tokens are
//! not collapsed, so duration differences show up as insertions and
//! deletions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::{enumerate_pairs, EvalGroup, PairScoreRecord};
use crate::error::{Error, Result};
use crate::par;
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditWeights {
    pub sub: f64,
    pub ins: f64,
    pub del: f64,
}

impl Default for EditWeights {
    fn default() -> Self {
        EditWeights {
            sub: 1.2,
            ins: 1.0,
            del: 1.0,
        }
    }
}

/// Metric axioms a weight setting gives up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MetricWarnings {
    /// `w_sub > w_ins + w_del`: a substitution is never chosen, and the
    /// triangle inequality can fail.
    pub triangle: bool,
    /// `w_ins != w_del`: distance is not symmetric.
    pub asymmetric: bool,
}

impl MetricWarnings {
    pub fn any(&self) -> bool {
        self.triangle || self.asymmetric
    }
}

impl EditWeights {
    pub fn new(sub: f64, ins: f64, del: f64) -> Result<Self> {
        let w = EditWeights { sub, ins, del };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_sub", self.sub), ("w_ins", self.ins), ("w_del", self.del)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn warnings(&self) -> MetricWarnings {
        MetricWarnings {
            triangle: self.sub > self.ins + self.del,
            asymmetric: self.ins != self.del,
        }
    }

    fn transposed(self) -> Self {
        EditWeights {
            sub: self.sub,
            ins: self.del,
            del: self.ins,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub substitutions: u32,
    pub insertions: u32,
    pub deletions: u32,
    pub matches: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditResult {
    pub distance: f64,
    pub op_counts: OpCounts,
    /// `distance / max(len1, len2)`; convenience only.
    pub normalized: Option<f64>,
}

/// Base cost of aligning two tokens, scaled by `w_sub`. Must return 0 for
/// equal tokens.
pub trait SubstitutionCost {
    fn cost(&self, a: u32, b: u32) -> f64;

    /// True when `cost` is the 0/1 indicator, which lets the reported
    /// distance be recomputed exactly from the operation counts.
    fn is_indicator(&self) -> bool {
        false
    }
}

/// 0 for a match, 1 otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct Indicator;

impl SubstitutionCost for Indicator {
    #[inline]
    fn cost(&self, a: u32, b: u32) -> f64 {
        if a == b {
            0.0
        } else {
            1.0
        }
    }

    fn is_indicator(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy)]
struct Cell {
    cost: f64,
    ops: OpCounts,
}

/// Two-row DP over `a` (rows) and `b` (columns). Ties prefer the diagonal,
/// then deletion, then insertion.
fn edit_dp<C: SubstitutionCost>(a: &[u32], b: &[u32], w: EditWeights, sub_cost: &C) -> (f64, OpCounts) {
    let m = b.len();
    let mut prev: Vec<Cell> = Vec::with_capacity(m + 1);
    let mut acc = Cell {
        cost: 0.0,
        ops: OpCounts::default(),
    };
    prev.push(acc);
    for _ in 0..m {
        acc.cost += w.ins;
        acc.ops.insertions += 1;
        prev.push(acc);
    }
    let mut cur = prev.clone();
    for &ta in a {
        let mut first = prev[0];
        first.cost += w.del;
        first.ops.deletions += 1;
        cur[0] = first;
        for j in 1..=m {
            let tb = b[j - 1];
            let base = sub_cost.cost(ta, tb);
            let mut diag = prev[j - 1];
            if ta == tb {
                diag.ops.matches += 1;
            } else {
                diag.cost += w.sub * base;
                diag.ops.substitutions += 1;
            }
            let mut del = prev[j];
            del.cost += w.del;
            del.ops.deletions += 1;
            let mut ins = cur[j - 1];
            ins.cost += w.ins;
            ins.ops.insertions += 1;
            let mut best = diag;
            if del.cost < best.cost {
                best = del;
            }
            if ins.cost < best.cost {
                best = ins;
            }
            cur[j] = best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let end = prev[m];
    (end.cost, end.ops)
}

fn check_pair(c1: &TokenSequence, c2: &TokenSequence) -> Result<()> {
    if c1.is_empty() {
        return Err(Error::EmptySequence(c1.sample_id.clone()));
    }
    if c2.is_empty() {
        return Err(Error::EmptySequence(c2.sample_id.clone()));
    }
    if c1.k != c2.k {
        return Err(Error::CodebookMismatch {
            left: c1.k,
            right: c2.k,
        });
    }
    Ok(())
}

/// Weighted edit distance between two raw token slices with a custom
/// substitution cost.
pub fn weighted_edit_distance_with<C: SubstitutionCost>(
    a: &[u32],
    b: &[u32],
    w: EditWeights,
    sub_cost: &C,
) -> EditResult {
    // Symmetric weights: evaluate in a canonical order so that swapping the
    // inputs reproduces the same floating-point sums. Otherwise roll the DP
    // over the shorter sequence by transposing.
    let swap = if w.ins == w.del {
        (b.len(), b) < (a.len(), a)
    } else {
        b.len() < a.len()
    };
    let (cost, ops) = if swap {
        let (c, mut o) = edit_dp(b, a, w.transposed(), sub_cost);
        std::mem::swap(&mut o.insertions, &mut o.deletions);
        (c, o)
    } else {
        edit_dp(a, b, w, sub_cost)
    };
    let distance = if sub_cost.is_indicator() { ops_cost(&ops, w) } else { cost };
    let longest = a.len().max(b.len());
    EditResult {
        distance,
        op_counts: ops,
        normalized: (longest > 0).then(|| distance / longest as f64),
    }
}

#[inline]
fn ops_cost(ops: &OpCounts, w: EditWeights) -> f64 {
    // the indel terms are added first so that swapping them (a transposed
    // evaluation) cannot change the rounding
    w.sub * ops.substitutions as f64 + (w.ins * ops.insertions as f64 + w.del * ops.deletions as f64)
}

pub fn weighted_edit_distance(a: &[u32], b: &[u32], w: EditWeights) -> EditResult {
    weighted_edit_distance_with(a, b, w, &Indicator)
}

/// DS-WED between two token sequences from the same quantizer.
pub fn dswed(c1: &TokenSequence, c2: &TokenSequence, weights: EditWeights) -> Result<EditResult> {
    weights.validate()?;
    check_pair(c1, c2)?;
    Ok(weighted_edit_distance(&c1.tokens, &c2.tokens, weights))
}

/// Score every pair of a group. Records come back in [`enumerate_pairs`]
/// order with `dswed` filled in.
pub fn dswed_group(
    group: &EvalGroup,
    tokens: &HashMap<String, TokenSequence>,
    weights: EditWeights,
) -> Result<Vec<PairScoreRecord>> {
    weights.validate()?;
    for s in &group.samples {
        if !tokens.contains_key(&s.sample_id) {
            return Err(Error::MissingInput(format!(
                "no token sequence for sample `{}` in group `{}`",
                s.sample_id, group.group_id
            )));
        }
    }
    let pairs = enumerate_pairs(group);
    let scored = par::map(&pairs, |key| {
        dswed(&tokens[&key.sample_id_a], &tokens[&key.sample_id_b], weights).map(|r| {
            let mut rec = PairScoreRecord::new(key.clone());
            rec.dswed = Some(r.distance);
            rec
        })
    });
    scored.into_iter().collect()
}
