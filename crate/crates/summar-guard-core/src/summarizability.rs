//! Distributivity, instance-level summarizability conditions, partition
//! comparisons and brute-force oracles.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::engine::{aggregate, aggregate_name, execute, QuerySpec};
use crate::error::{Error, Result};
use crate::graph::subsets;
use crate::model::{lfd_holds, AnalyticTable, AttrSet, Schema};
use crate::property::AggFn;
use crate::value::{literal_eq, tuple_key, Value};

/// Dimension-attribute limit for the oracles' subset enumeration.
pub const ORACLE_LIMIT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Distributivity {
    Always,
    Never,
    ConditionalCountDistinct,
}

pub fn is_distributive(f: AggFn, g: AggFn) -> Distributivity {
    use AggFn::*;
    match (f, g) {
        (Sum, Sum) | (Min, Min) | (Max, Max) | (Count, Sum) => Distributivity::Always,
        (CountDistinct, Sum) => Distributivity::ConditionalCountDistinct,
        _ => Distributivity::Never,
    }
}

/// `Z2 ∪ {A} ↦ Z1` on the instance.
pub fn countdistinct_condition(t: &AnalyticTable, a: &str, z1: &AttrSet, z2: &AttrSet) -> Result<bool> {
    let mut lhs = z2.clone();
    lhs.insert(a.to_string());
    lfd_holds(t, &lhs, z1)
}

/// Maximal `X′ ⊆ X ∩ Y` such that `(Y − X′) ∪ {A}` determines `Y` through
/// the attribute graphs. One result per minimal determining `K ⊆ Y`.
pub fn maximal_countdistinct_sets(schema: &Schema, x: &AttrSet, y: &AttrSet, a: &str) -> Vec<AttrSet> {
    let ys: Vec<String> = y.iter().cloned().collect();
    let determines = |k: &AttrSet| {
        let mut start = k.clone();
        if schema.is_dimension(a) {
            start.insert(a.to_string());
        }
        schema.closure_unchecked(&start).is_superset(y)
    };
    let mut minimal: Vec<AttrSet> = Vec::new();
    for k in subsets(&ys) {
        if minimal.iter().any(|m| m.is_subset(&k)) {
            continue;
        }
        if determines(&k) {
            minimal.push(k);
        }
    }
    let xy: AttrSet = x.intersection(y).cloned().collect();
    let mut out: Vec<AttrSet> = minimal.iter().map(|k| xy.difference(k).cloned().collect()).collect();
    out.sort();
    out.dedup();
    // Drop non-maximal results produced by different K.
    let all = out.clone();
    out.retain(|s| !all.iter().any(|o| o != s && s.is_subset(o)));
    out
}

/// Rows of an aggregate result keyed by their group values.
fn groups(t: &AnalyticTable, group_by: &AttrSet, value_col: &str) -> Result<BTreeMap<Vec<Value>, Value>> {
    let names: Vec<String> = t.schema.dimension_names().into_iter().filter(|d| group_by.contains(d)).collect();
    let idx: Vec<usize> = names.iter().map(|n| t.schema.index_of(n)).collect::<Result<_>>()?;
    let vj = t.schema.index_of(value_col)?;
    Ok(t.rows
        .iter()
        .map(|r| (tuple_key(&idx.iter().map(|&j| r[j].clone()).collect::<Vec<_>>()), r[vj].clone()))
        .collect())
}

fn same_groups(a: &BTreeMap<Vec<Value>, Value>, b: &BTreeMap<Vec<Value>, Value>) -> bool {
    a.len() == b.len() && a.iter().all(|(k, v)| b.get(k).is_some_and(|w| literal_eq(v, w)))
}

/// Re-aggregating `F(A)` by `Z1` with `G` down to `Z2` gives the same
/// table as aggregating `A` by `Z2` directly.
pub fn oracle_summarizable(
    t: &AnalyticTable,
    a: &str,
    f: AggFn,
    g: AggFn,
    z1: &AttrSet,
    z2: &AttrSet,
) -> Result<bool> {
    let r = aggregate(t, f, a, z1, None, "r")?;
    let fa = aggregate_name(f, a, None);
    let twice = aggregate(&r, g, &fa, z2, None, "r2")?;
    let once = aggregate(t, f, a, z2, None, "r1")?;
    Ok(same_groups(
        &groups(&twice, z2, &aggregate_name(g, &fa, None))?,
        &groups(&once, z2, &fa)?,
    ))
}

/// Dimension attributes present in both tables.
pub fn shared_dimensions(t: &AnalyticTable, r: &AnalyticTable) -> AttrSet {
    t.schema.dims().intersection(&r.schema.dims()).cloned().collect()
}

/// For every `Z′` with `Z ∩ S ⊆ Z′ ⊆ S` (`S` the shared dimensions),
/// each group of `F(A)` over `r` by `Z′ ∪ (Z − S)` equals the group of
/// `t` by `Z′` with the same key, when that group exists.
pub fn oracle_g_tables(t: &AnalyticTable, r: &AnalyticTable, a: &str, f: AggFn, z: &AttrSet) -> Result<bool> {
    oracle_g_renamed(t, a, r, a, f, z)
}

/// [`oracle_g_tables`] where the attribute is named `a_t` in `t` and
/// `a_r` in `r`.
pub fn oracle_g_renamed(t: &AnalyticTable, a_t: &str, r: &AnalyticTable, a_r: &str, f: AggFn, z: &AttrSet) -> Result<bool> {
    let shared = shared_dimensions(t, r);
    if shared.len() > ORACLE_LIMIT {
        return Err(Error::ExplosionGuard(shared.len()));
    }
    let base: AttrSet = z.intersection(&shared).cloned().collect();
    let own: AttrSet = z.difference(&shared).filter(|d| r.schema.is_dimension(d)).cloned().collect();
    let free: Vec<String> = shared.difference(&base).cloned().collect();
    let ft = aggregate_name(f, a_t, None);
    let fr = aggregate_name(f, a_r, None);
    for extra in subsets(&free) {
        let mut zp = base.clone();
        zp.extend(extra);
        let gt = groups(&aggregate(t, f, a_t, &zp, None, "t")?, &zp, &ft)?;
        let mut zr = zp.clone();
        zr.extend(own.iter().cloned());
        let rt = aggregate(r, f, a_r, &zr, None, "r")?;
        // Key positions of `zp` inside the grouping of `zr`, in schema order.
        let rnames: Vec<String> = rt.schema.dimension_names().into_iter().filter(|d| zr.contains(d)).collect();
        let tnames: Vec<String> = t.schema.dimension_names().into_iter().filter(|d| zp.contains(d)).collect();
        let pick: Vec<usize> = tnames
            .iter()
            .map(|n| rnames.iter().position(|m| m == n).expect("shared attribute"))
            .collect();
        for (k, v) in groups(&rt, &zr, &fr)? {
            let kt: Vec<Value> = pick.iter().map(|&i| k[i].clone()).collect();
            if let Some(w) = gt.get(&kt) {
                if !literal_eq(&v, w) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// G-summarizability of `A` in `t` for query `q` (unary, or binary with `t`
/// as the side owning `A`).
pub fn oracle_g_summarizable(
    t: &AnalyticTable,
    q: &QuerySpec,
    inputs: &[&AnalyticTable],
    a: &str,
    f: AggFn,
    z: &AttrSet,
) -> Result<bool> {
    let r = execute(q, inputs, "q")?;
    oracle_g_tables(t, &r, a, f, z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Equal,
    LeftSubset,
    Disjoint,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionEntry {
    pub key: Vec<Value>,
    pub left: Vec<Vec<Value>>,
    pub right: Vec<Vec<Value>>,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub pivot: AttrSet,
    pub entries: Vec<PartitionEntry>,
}

impl PartitionReport {
    pub fn all(&self, ok: impl Fn(Relation) -> bool) -> bool {
        self.entries.iter().all(|e| ok(e.relation))
    }
}

/// Compares `π_Y` of the partitions of `t` and `t2` on `pivot ⊆ Y`, for
/// every non-empty partition of `t2`.
pub fn partition_report(t: &AnalyticTable, t2: &AnalyticTable, y: &AttrSet, pivot: &AttrSet) -> Result<PartitionReport> {
    let ys: Vec<String> = y.iter().cloned().collect();
    let ps: Vec<String> = pivot.iter().cloned().collect();
    let part = |tab: &AnalyticTable| -> Result<BTreeMap<Vec<Value>, BTreeSet<Vec<Value>>>> {
        let pi: Vec<usize> = ps.iter().map(|n| tab.schema.index_of(n)).collect::<Result<_>>()?;
        let yi: Vec<usize> = ys.iter().map(|n| tab.schema.index_of(n)).collect::<Result<_>>()?;
        let mut m: BTreeMap<Vec<Value>, BTreeSet<Vec<Value>>> = BTreeMap::new();
        for r in &tab.rows {
            let k = tuple_key(&pi.iter().map(|&j| r[j].clone()).collect::<Vec<_>>());
            m.entry(k).or_default().insert(tuple_key(&yi.iter().map(|&j| r[j].clone()).collect::<Vec<_>>()));
        }
        Ok(m)
    };
    let lp = part(t)?;
    let rp = part(t2)?;
    let mut entries = Vec::new();
    for (k, right) in &rp {
        let left = lp.get(k).cloned().unwrap_or_default();
        let relation = if &left == right {
            Relation::Equal
        } else if left.is_disjoint(right) {
            Relation::Disjoint
        } else if left.is_subset(right) {
            Relation::LeftSubset
        } else {
            Relation::Other
        };
        entries.push(PartitionEntry {
            key: k.clone(),
            left: left.into_iter().collect(),
            right: right.iter().cloned().collect(),
            relation,
        });
    }
    Ok(PartitionReport { pivot: pivot.clone(), entries })
}
