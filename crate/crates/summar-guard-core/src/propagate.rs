//! Propagation of aggregable properties through operators, in the three
//! modes: basic, summarizable and generalized summarizable.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::engine::{aggregate_name, merge_layout, pivot_column_name, Calc, MergeKind, QuerySpec};
use crate::error::{Error, Result};
use crate::model::{attr_set, lfd_holds, AnalyticTable, AttrSet, Schema};
use crate::property::{
    applicable_functions, codomain_category, finish, is_applicable, AggFn, AggregableProperty, PropagationMode, Provenance,
    UserAction,
};
use crate::summarizability::{is_distributive, maximal_countdistinct_sets, Distributivity};
use crate::value::{tuple_key, Value};

/// Properties of `result = spec(inputs)`.
pub fn propagate(
    spec: &QuerySpec,
    inputs: &[&AnalyticTable],
    result: &AnalyticTable,
    mode: PropagationMode,
) -> Result<Vec<AggregableProperty>> {
    let t = inputs[0];
    let mut out = match spec {
        QuerySpec::Filter { predicate } => filter(t, &predicate.attributes(), result, mode),
        QuerySpec::Project { calc, .. } => project(t, calc, result)?,
        QuerySpec::Aggregate { func, attribute, group_by, alias } => {
            let name = aggregate_name(*func, attribute, alias.as_deref());
            aggregate(t, *func, attribute, group_by, &name, result, mode)?
        }
        QuerySpec::Pivot { attribute, over } => pivot(t, attribute, over, result, mode)?,
        QuerySpec::Merge { kind, on } => merge(t, inputs[1], *kind, on.as_ref(), result, mode)?,
        QuerySpec::Union => union(t, inputs[1], result, mode)?,
        QuerySpec::Difference => difference(t, inputs[1], result, mode)?,
    };
    out.sort_by(|a, b| {
        let ia = result.schema.index_of(&a.attribute).unwrap_or(usize::MAX);
        let ib = result.schema.index_of(&b.attribute).unwrap_or(usize::MAX);
        (ia, a.func, &a.x).cmp(&(ib, b.func, &b.x))
    });
    out.dedup_by(|a, b| a.attribute == b.attribute && a.func == b.func && a.x == b.x);
    Ok(out)
}

fn prop(
    attribute: &str,
    func: AggFn,
    x: AttrSet,
    x_d: Option<AttrSet>,
    x_f: AttrSet,
    pending: &[UserAction],
    rule: &str,
) -> AggregableProperty {
    AggregableProperty {
        attribute: attribute.to_string(),
        func,
        x,
        x_d,
        x_f,
        pending: Vec::new(),
        provenance: Provenance::Propagated(rule.to_string()),
        removed_by: BTreeMap::new(),
    }
    .with_pending(pending)
}

/// Same property on the result, with a new provenance.
fn carry(p: &AggregableProperty, rule: &str, r: &Schema) -> AggregableProperty {
    let mut q = p.clone();
    q.provenance = Provenance::Propagated(rule.to_string());
    finish(q, r, Some(p), rule)
}

/// X_d = fact identifier of the result, X = its closure minus X_f.
fn defaulted(p: &AggregableProperty, x_f: AttrSet, r: &Schema, rule: &str) -> AggregableProperty {
    let fid = r.fact_identifier();
    let x: AttrSet = r.closure_unchecked(&fid).difference(&x_f).cloned().collect();
    let q = prop(&p.attribute, p.func, x, Some(fid), x_f, &[UserAction::MinimizeXd], rule);
    let q = AggregableProperty { pending: merge_pending(&p.pending, &q.pending), ..q };
    finish(q, r, Some(p), rule)
}

fn merge_pending(a: &[UserAction], b: &[UserAction]) -> Vec<UserAction> {
    let mut v: Vec<UserAction> = a.iter().chain(b).copied().collect();
    v.sort();
    v.dedup();
    v
}

fn minus(a: &AttrSet, b: &AttrSet) -> AttrSet {
    a.difference(b).cloned().collect()
}

fn has_duplicate_rows(t: &AnalyticTable) -> bool {
    let mut seen = BTreeSet::new();
    t.rows.iter().any(|r| !seen.insert(tuple_key(r)))
}

fn key_idx(t: &AnalyticTable, names: &AttrSet) -> Result<Vec<usize>> {
    names.iter().map(|n| t.schema.index_of(n)).collect()
}

fn key(r: &[Value], idx: &[usize]) -> Vec<Value> {
    tuple_key(&idx.iter().map(|&j| r[j].clone()).collect::<Vec<_>>())
}

// ---------------------------------------------------------------------------

fn filter(t: &AnalyticTable, y: &AttrSet, r: &AnalyticTable, mode: PropagationMode) -> Vec<AggregableProperty> {
    if mode != PropagationMode::GSummarizable {
        return t.properties.iter().map(|p| carry(p, "filter", &r.schema)).collect();
    }
    let dims = t.schema.dims();
    if y.is_subset(&dims) {
        let fid = t.schema.fact_identifier();
        return t
            .properties
            .iter()
            .map(|p| {
                let mut q = p.clone();
                q.x = minus(&p.x, y);
                q.x_f = minus(&p.x_f, y);
                if p.x_d.is_some() {
                    q.x_d = Some(fid.clone());
                    q = q.with_pending(&[UserAction::MinimizeXd]);
                }
                q.provenance = Provenance::Propagated("gsum/filter".into());
                finish(q, &r.schema, Some(p), "gsum/filter")
            })
            .filter(|q| !y.contains(&q.attribute) || groups_fix_attribute(t, q))
            .collect();
    }
    // A measure condition keeps or drops single tuples, so grouping on
    // everything is the only safe choice, and only when S_D is a key.
    let all = t.schema.names().into_iter().collect::<AttrSet>();
    let key = lfd_holds(t, &dims, &all).unwrap_or(false) && !has_duplicate_rows(t);
    if !key {
        return Vec::new();
    }
    t.properties
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.x = AttrSet::new();
            q = q.with_pending(&[UserAction::CompleteXf]);
            q.provenance = Provenance::Propagated("gsum/filter-measure".into());
            finish(q, &r.schema, Some(p), "gsum/filter-measure")
        })
        .filter(|q| !t.schema.is_dimension(&q.attribute) || groups_fix_attribute(t, q))
        .collect()
}

/// Every admissible group of `t` has a single value of the property's
/// dimension attribute, so a filter keeps or drops groups whole.
fn groups_fix_attribute(t: &AnalyticTable, q: &AggregableProperty) -> bool {
    lfd_holds(t, &q.required_grouping(&t.schema), &attr_set([q.attribute.clone()])).unwrap_or(false)
}

fn project(t: &AnalyticTable, calc: &[Calc], r: &AnalyticTable) -> Result<Vec<AggregableProperty>> {
    let mut out: Vec<AggregableProperty> = t
        .properties
        .iter()
        .filter(|p| r.schema.has(&p.attribute))
        .map(|p| carry(p, "project", &r.schema))
        .collect();
    let fid = r.schema.fact_identifier();
    'calc: for c in calc {
        let mut x_d = AttrSet::new();
        let mut x_f = AttrSet::new();
        let operands = c.expr.attributes();
        for a in &operands {
            // An operand without a determinant leaves the column without properties.
            let Some(p) = t.properties_of(a).find(|p| p.x_d.is_some()) else { continue 'calc };
            x_d.extend(p.x_d.iter().flatten().cloned());
            x_f.extend(p.x_f.iter().cloned());
        }
        if operands.is_empty() {
            x_d = fid.clone();
        }
        let base = minus(&r.schema.closure_unchecked(&x_d), &x_f);
        let cat = r.schema.attr(&c.name)?.category;
        'func: for f in applicable_functions(cat) {
            // No wider than any operand allows for the same function.
            let mut x = base.clone();
            for a in &operands {
                let own: Vec<&AggregableProperty> = t.properties_of(a).collect();
                let same: Vec<&&AggregableProperty> = own.iter().filter(|p| p.func == f).collect();
                let pool: Vec<&AggregableProperty> = if same.is_empty() {
                    if is_applicable(f, t.schema.attr(a)?.category) {
                        continue 'func;
                    }
                    own
                } else {
                    same.into_iter().copied().collect()
                };
                for p in pool {
                    x = x.intersection(&p.x).cloned().collect();
                }
            }
            let p = prop(
                &c.name,
                f,
                x,
                Some(x_d.clone()),
                x_f.clone(),
                &[UserAction::MinimizeXd, UserAction::CompleteXf],
                "project-calc",
            );
            out.push(finish(p, &r.schema, None, "project-calc"));
        }
    }
    Ok(out)
}

fn aggregate(
    t: &AnalyticTable,
    func: AggFn,
    attribute: &str,
    y: &AttrSet,
    name: &str,
    r: &AnalyticTable,
    mode: PropagationMode,
) -> Result<Vec<AggregableProperty>> {
    let gsum = mode == PropagationMode::GSummarizable;
    let mut out = Vec::new();
    for p in t.properties.iter().filter(|p| y.contains(&p.attribute)) {
        if gsum && !p.func.duplicate_insensitive() {
            continue;
        }
        let rule = if gsum { "gsum/aggregate-group" } else { "aggregate-group" };
        let mut q = p.clone();
        q.x = p.x.intersection(y).cloned().collect();
        q.x_f = p.x_f.intersection(y).cloned().collect();
        q.provenance = Provenance::Propagated(rule.into());
        out.push(finish(q, &r.schema, Some(p), rule));
    }

    let cat = codomain_category(func, t.schema.attr(attribute)?.category)?;
    let fid = r.schema.fact_identifier();
    let pending = [UserAction::MinimizeXd, UserAction::CompleteXf];
    if mode == PropagationMode::Basic {
        let x = r.schema.closure_unchecked(&fid);
        for g in applicable_functions(cat) {
            let p = prop(name, g, x.clone(), Some(fid.clone()), AttrSet::new(), &pending, "aggregate");
            out.push(finish(p, &r.schema, None, "aggregate"));
        }
        return Ok(out);
    }
    // Only properties that admit this grouping carry over; a forced
    // aggregation gets none.
    let sources: Vec<&AggregableProperty> =
        t.properties_of(attribute).filter(|p| p.func == func && p.permits(&t.schema, y)).collect();
    for g in applicable_functions(cat) {
        match is_distributive(func, g) {
            Distributivity::Always => {
                for s in &sources {
                    let x: AttrSet = s.x.intersection(y).cloned().collect();
                    let p = prop(name, g, x, Some(fid.clone()), AttrSet::new(), &pending, "sum/aggregate");
                    out.push(finish(p, &r.schema, None, "sum/aggregate"));
                }
            }
            Distributivity::ConditionalCountDistinct => {
                for s in &sources {
                    for x in maximal_countdistinct_sets(&t.schema, &s.x, y, attribute) {
                        let p = prop(name, g, x, Some(fid.clone()), AttrSet::new(), &pending, "sum/countdistinct");
                        out.push(finish(p, &r.schema, None, "sum/countdistinct"));
                    }
                }
            }
            Distributivity::Never => {}
        }
    }
    Ok(out)
}

fn pivot(
    t: &AnalyticTable,
    attribute: &str,
    y: &AttrSet,
    r: &AnalyticTable,
    mode: PropagationMode,
) -> Result<Vec<AggregableProperty>> {
    let gsum = mode == PropagationMode::GSummarizable;
    let collapsed = r.len() < t.len();
    let mut out = Vec::new();
    for p in t.properties.iter().filter(|p| p.attribute != attribute && r.schema.has(&p.attribute)) {
        let separate = p.x_d.as_ref().is_none_or(|d| d.is_disjoint(y));
        if gsum && (collapsed || !separate) && !p.func.duplicate_insensitive() {
            continue;
        }
        let rule = if gsum { "gsum/pivot" } else { "pivot" };
        if separate {
            let mut q = p.clone();
            q.x = minus(&p.x, y);
            q.x_f = minus(&p.x_f, y);
            q.provenance = Provenance::Propagated(rule.into());
            out.push(finish(q, &r.schema, Some(p), rule));
        } else {
            out.push(defaulted(p, minus(&p.x_f, y), &r.schema, rule));
        }
    }
    let ys: Vec<String> = t.schema.dimension_names().into_iter().filter(|d| y.contains(d)).collect();
    // Residual keys without a cell for a column are padded with null.
    let yi = key_idx(t, &ys.iter().cloned().collect())?;
    let mut cells: BTreeMap<String, usize> = BTreeMap::new();
    for row in &t.rows {
        *cells.entry(pivot_column_name(attribute, &key(row, &yi))).or_default() += 1;
    }
    let columns: Vec<String> =
        t.distinct_projection(&ys)?.iter().map(|v| pivot_column_name(attribute, v)).collect();
    for p in t.properties_of(attribute) {
        for c in &columns {
            if gsum && p.func.counts_nulls() && cells.get(c).copied().unwrap_or(0) < r.len() {
                let mut q = p.clone();
                q.attribute = c.clone();
                q.x = AttrSet::new();
                q.x_d = p.x_d.as_ref().map(|d| minus(d, y));
                q.x_f = minus(&p.x_f, y);
                q.provenance = Provenance::Propagated("gsum/pivot-padded".into());
                out.push(finish(q, &r.schema, Some(p), "gsum/pivot-padded"));
                continue;
            }
            let mut q = p.clone();
            q.attribute = c.clone();
            let inside = p.x_d.as_ref().is_some_and(|d| d.is_subset(y));
            if !inside {
                q.x = minus(&p.x, y);
                q.x_d = p.x_d.as_ref().map(|d| minus(d, y));
                q.x_f = minus(&p.x_f, y);
                q.provenance = Provenance::Propagated("pivot-column".into());
                out.push(finish(q, &r.schema, Some(p), "pivot-column"));
            } else {
                out.push(defaulted(&q, minus(&p.x_f, y), &r.schema, "pivot-column"));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Merge

fn map_set(s: &AttrSet, m: &BTreeMap<String, String>) -> AttrSet {
    s.iter().filter_map(|a| m.get(a).cloned()).collect()
}

/// Facts about one input of a merge, seen from the other input.
struct SideFacts {
    /// Attributes to remove from X when the function ignores nulls.
    need: AttrSet,
    /// Extra attributes to remove when the function counts nulls.
    need_counting: AttrSet,
    /// Some tuple of this side occurs more than once in the result.
    duplicated: bool,
}

fn side_facts(own: &AnalyticTable, other: &AnalyticTable, y: &AttrSet, own_kept: bool, other_kept: bool) -> Result<SideFacts> {
    let ytop = own.schema.highest(y);
    let oy = key_idx(own, y)?;
    let ty = key_idx(other, y)?;
    let otop = key_idx(own, &ytop)?;
    let ttop = key_idx(other, &ytop)?;

    let mut other_rows: HashMap<Vec<Value>, BTreeSet<Vec<Value>>> = HashMap::new();
    for row in &other.rows {
        other_rows.entry(key(row, &ty)).or_default().insert(tuple_key(row));
    }
    let own_keys: BTreeSet<Vec<Value>> = own.rows.iter().map(|row| key(row, &oy)).collect();
    let own_tops: BTreeSet<Vec<Value>> = own.rows.iter().map(|row| key(row, &otop)).collect();

    let mut need = AttrSet::new();
    if !own_kept {
        // Partitions on Yᵗᵒᵖ must be kept or dropped as a whole.
        let mut status: HashMap<Vec<Value>, (bool, bool)> = HashMap::new();
        for row in &own.rows {
            let matched = other_rows.contains_key(&key(row, &oy));
            let e = status.entry(key(row, &otop)).or_insert((false, false));
            if matched {
                e.0 = true;
            } else {
                e.1 = true;
            }
        }
        let dropped = status.values().any(|&(_, u)| u);
        if dropped {
            // A dropped partition must not reappear through the other side's rows.
            let other_tops: BTreeSet<Vec<Value>> = other.rows.iter().map(|row| key(row, &ttop)).collect();
            let whole = status.values().all(|&(m, u)| !(m && u))
                && (!other_kept || status.iter().all(|(k, &(m, _))| m || !other_tops.contains(k)));
            need.extend(if whole { ytop.clone() } else { y.clone() });
        }
    }
    let mut need_counting = AttrSet::new();
    if other_kept {
        let padded: Vec<&Vec<Value>> = other.rows.iter().filter(|row| !own_keys.contains(&key(row, &ty))).collect();
        if !padded.is_empty() {
            let apart = padded.iter().all(|row| !own_tops.contains(&key(row, &ttop)));
            need_counting.extend(if apart { ytop } else { y.clone() });
        }
    }
    let duplicated = has_duplicate_rows(own)
        || own.rows.iter().any(|row| other_rows.get(&key(row, &oy)).is_some_and(|s| s.len() > 1));
    Ok(SideFacts { need, need_counting, duplicated })
}

fn merge(
    left: &AnalyticTable,
    right: &AnalyticTable,
    kind: MergeKind,
    on: Option<&AttrSet>,
    r: &AnalyticTable,
    mode: PropagationMode,
) -> Result<Vec<AggregableProperty>> {
    let layout = merge_layout(&left.schema, &right.schema, on)?;
    let mut sides: Vec<Vec<AggregableProperty>> = Vec::new();
    for left_side in [true, false] {
        let (own, other) = if left_side { (left, right) } else { (right, left) };
        let m = layout.map_of(left_side);
        let other_dims: AttrSet = map_set(&minus(&other.schema.dims(), &layout.y), layout.map_of(!left_side));
        let facts = if mode == PropagationMode::GSummarizable && layout.shared {
            let (own_kept, other_kept) = if left_side {
                (kind.keeps_left(), kind.keeps_right())
            } else {
                (kind.keeps_right(), kind.keeps_left())
            };
            Some(side_facts(own, other, &layout.y, own_kept, other_kept)?)
        } else {
            None
        };
        let mut props = Vec::new();
        for p in &own.properties {
            let dim = p.x_d.is_none();
            let mut q = p.clone();
            q.attribute = m[&p.attribute].clone();
            q.x_f = map_set(&p.x_f, m);
            q.x_d = p.x_d.as_ref().map(|d| map_set(d, m));
            let rule = match (&facts, mode) {
                (Some(f), _) => {
                    if f.duplicated && !p.func.duplicate_insensitive() {
                        continue;
                    }
                    let mut need = f.need.clone();
                    if p.func.counts_nulls() && !(dim && p.func == AggFn::CountDistinct) {
                        need.extend(f.need_counting.iter().cloned());
                    }
                    q.x = map_set(&minus(&p.x, &need), m);
                    if let Some(xd) = &q.x_d {
                        // Never wider than the basic rule.
                        let basic = minus(&r.schema.closure_unchecked(xd), &q.x_f);
                        q.x = q.x.intersection(&basic).cloned().collect();
                    }
                    if dim {
                        q.x.extend(other_dims.iter().cloned());
                        q = q.with_pending(&[UserAction::CompleteXf]);
                    } else if !need.is_empty() && kind == MergeKind::Strict {
                        q = q.with_pending(&[UserAction::RecomputeXd, UserAction::CompleteXf]);
                    }
                    "gsum/merge"
                }
                (None, PropagationMode::GSummarizable) => {
                    // Renamed copies: only grouping on everything is safe.
                    if !p.func.duplicate_insensitive() {
                        continue;
                    }
                    q.x = AttrSet::new();
                    "gsum/merge-disjoint"
                }
                (None, _) => {
                    if dim {
                        q.x = map_set(&p.x, m);
                        q.x.extend(other_dims.iter().cloned());
                        q = q.with_pending(&[UserAction::CompleteXf]);
                    } else {
                        let xd = q.x_d.clone().unwrap_or_default();
                        q.x = minus(&r.schema.closure_unchecked(&xd), &q.x_f);
                    }
                    "merge"
                }
            };
            q.provenance = Provenance::Propagated(rule.into());
            let prior = AggregableProperty { x: map_set(&p.x, m), removed_by: rename_keys(&p.removed_by, m), ..p.clone() };
            props.push(finish(q, &r.schema, Some(&prior), rule));
        }
        sides.push(props);
    }
    let right_props = sides.pop().unwrap_or_default();
    let left_props = sides.pop().unwrap_or_default();
    let gsum = mode == PropagationMode::GSummarizable;
    let maps = [(left, &layout.left_map), (right, &layout.right_map)];
    let fixed = |q: &AggregableProperty| {
        !gsum
            || if q.x_d.is_some() {
                merge_keeps_groups(q, r, &maps)
            } else {
                let owners = match kind {
                    _ if !layout.shared || !layout.y.contains(&q.attribute) => &maps[..],
                    MergeKind::Left => &maps[..1],
                    MergeKind::Right => &maps[1..],
                    _ => &maps[..],
                };
                merge_fixes_dimension(q, r, owners)
            }
    };
    if !layout.shared {
        return Ok(left_props.into_iter().chain(right_props).filter(|q| fixed(q)).collect());
    }
    // Join attributes appear once; keep what both inputs agree on. Under
    // gsum they follow the preserved side.
    let joined = |p: &AggregableProperty| layout.y.contains(&p.attribute);
    let mut out: Vec<AggregableProperty> = left_props.iter().filter(|p| !joined(p)).cloned().collect();
    out.extend(right_props.iter().filter(|p| !joined(p)).cloned());
    match kind {
        MergeKind::Left if gsum => out.extend(left_props.iter().filter(|p| joined(p)).cloned()),
        MergeKind::Right if gsum => out.extend(right_props.iter().filter(|p| joined(p)).cloned()),
        MergeKind::Strict if gsum => {}
        _ => {
            for p in left_props.iter().filter(|p| joined(p)) {
                if gsum && !p.func.duplicate_insensitive() {
                    continue;
                }
                for q in right_props.iter().filter(|q| q.attribute == p.attribute && q.func == p.func) {
                    let mut c = p.clone();
                    c.x = p.x.intersection(&q.x).cloned().collect();
                    c.x_f = p.x_f.union(&q.x_f).cloned().collect();
                    c.pending = merge_pending(&p.pending, &q.pending);
                    let rule = match &p.provenance {
                        Provenance::Propagated(r) => r.clone(),
                        _ => "merge".to_string(),
                    };
                    out.push(finish(c, &r.schema, Some(p), &rule));
                }
            }
        }
    }
    out.retain(|q| fixed(q));
    Ok(out)
}

/// A measure keeps a property through a merge only if the grouping it
/// requires on the other input's dimensions is determined by the grouping on
/// its own, so no group of its input is split.
fn merge_keeps_groups(
    q: &AggregableProperty,
    r: &AnalyticTable,
    sides: &[(&AnalyticTable, &BTreeMap<String, String>)],
) -> bool {
    let Some((t, m)) = sides.iter().find(|(_, m)| m.values().any(|v| *v == q.attribute)) else { return true };
    let own: AttrSet = t.schema.dims().iter().filter_map(|d| m.get(d).cloned()).collect();
    let z = q.required_grouping(&r.schema);
    let foreign: AttrSet = minus(&z, &own);
    foreign.is_empty() || lfd_holds(r, &z.intersection(&own).cloned().collect(), &foreign).unwrap_or(false)
}

/// A dimension attribute keeps a property through a merge only if its
/// required grouping fixes the attribute, in the result and in every input
/// it comes from.
fn merge_fixes_dimension(
    q: &AggregableProperty,
    r: &AnalyticTable,
    sides: &[(&AnalyticTable, &BTreeMap<String, String>)],
) -> bool {
    let z = q.required_grouping(&r.schema);
    if !lfd_holds(r, &z, &attr_set([q.attribute.clone()])).unwrap_or(false) {
        return false;
    }
    sides.iter().all(|(t, m)| {
        let Some(src) = m.iter().find(|(_, res)| **res == q.attribute).map(|(s, _)| s) else { return true };
        let dims = t.schema.dims();
        let zt: AttrSet = m.iter().filter(|(s, res)| z.contains(*res) && dims.contains(*s)).map(|(s, _)| s.clone()).collect();
        lfd_holds(t, &zt, &attr_set([src.clone()])).unwrap_or(false)
    })
}

fn rename_keys(m0: &BTreeMap<String, String>, m: &BTreeMap<String, String>) -> BTreeMap<String, String> {
    m0.iter().filter_map(|(k, v)| m.get(k).map(|k2| (k2.clone(), v.clone()))).collect()
}

// ---------------------------------------------------------------------------
// Set operations

/// Properties present on both sides, combined conservatively.
fn common_properties(left: &AnalyticTable, right: &AnalyticTable) -> Vec<AggregableProperty> {
    let mut out = Vec::new();
    for p in &left.properties {
        for q in right.properties_of(&p.attribute).filter(|q| q.func == p.func) {
            let mut c = p.clone();
            c.x = p.x.intersection(&q.x).cloned().collect();
            c.x_f = p.x_f.union(&q.x_f).cloned().collect();
            c.x_d = match (&p.x_d, &q.x_d) {
                (Some(a), Some(b)) => Some(a.union(b).cloned().collect()),
                _ => None,
            };
            c.pending = merge_pending(&p.pending, &q.pending);
            out.push(c);
        }
    }
    out
}

fn tops_disjoint(a: &AnalyticTable, b: &AnalyticTable, top: &AttrSet) -> Result<bool> {
    let ai = key_idx(a, top)?;
    let bi = key_idx(b, top)?;
    let ka: BTreeSet<Vec<Value>> = a.rows.iter().map(|r| key(r, &ai)).collect();
    Ok(b.rows.iter().all(|r| !ka.contains(&key(r, &bi))))
}

fn union(left: &AnalyticTable, right: &AnalyticTable, r: &AnalyticTable, mode: PropagationMode) -> Result<Vec<AggregableProperty>> {
    let props = common_properties(left, right);
    let dims = left.schema.dims();
    if mode != PropagationMode::GSummarizable {
        let mut out = Vec::new();
        for p in &props {
            let keeps = match &p.x_d {
                None => true,
                Some(d) => lfd_holds(r, d, &AttrSet::from([p.attribute.clone()]))?,
            };
            if keeps {
                out.push(carry(p, "union", &r.schema));
            } else {
                out.push(defaulted(p, p.x_f.clone(), &r.schema, "union"));
            }
        }
        return Ok(out);
    }
    let top = left.schema.highest(&dims);
    let dup = has_duplicate_rows(left) || has_duplicate_rows(right);
    let remove = if tops_disjoint(left, right, &top)? { top } else { dims };
    let mut out = Vec::new();
    for p in &props {
        if dup && !p.func.duplicate_insensitive() {
            continue;
        }
        let mut q = p.clone();
        q.x = minus(&p.x, &remove);
        q.provenance = Provenance::Propagated("gsum/union".into());
        if p.x_d.is_some() {
            let still = lfd_holds(r, p.x_d.as_ref().unwrap(), &AttrSet::from([p.attribute.clone()]))?;
            q = q.with_pending(&[if still { UserAction::RecomputeXd } else { UserAction::MinimizeXd }]);
        }
        let q = finish(q, &r.schema, Some(p), "gsum/union");
        if !remove.contains(&q.attribute) || groups_fix_attribute(r, &q) {
            out.push(q);
        }
    }
    Ok(out)
}

/// Every partition of `a` on `part` is equal to, or disjoint from, the
/// matching partition of `b` (as tuple sets).
fn partitions_equal_or_disjoint(a: &AnalyticTable, b: &AnalyticTable, part: &AttrSet) -> Result<bool> {
    let names = a.schema.names();
    let ai = key_idx(a, part)?;
    let bi = key_idx(b, part)?;
    let reorder: Vec<usize> = names.iter().map(|n| b.schema.index_of(n)).collect::<Result<_>>()?;
    let mut pa: BTreeMap<Vec<Value>, BTreeSet<Vec<Value>>> = BTreeMap::new();
    for row in &a.rows {
        pa.entry(key(row, &ai)).or_default().insert(tuple_key(row));
    }
    let mut pb: BTreeMap<Vec<Value>, BTreeSet<Vec<Value>>> = BTreeMap::new();
    for row in &b.rows {
        let aligned: Vec<Value> = reorder.iter().map(|&j| row[j].clone()).collect();
        pb.entry(key(row, &bi)).or_default().insert(tuple_key(&aligned));
    }
    Ok(pa.iter().all(|(k, sa)| match pb.get(k) {
        None => true,
        Some(sb) => sa == sb || sa.is_disjoint(sb),
    }))
}

fn difference(left: &AnalyticTable, right: &AnalyticTable, r: &AnalyticTable, mode: PropagationMode) -> Result<Vec<AggregableProperty>> {
    if mode != PropagationMode::GSummarizable {
        return Ok(left
            .properties
            .iter()
            .map(|p| {
                let mut q = p.clone();
                if let Some(d) = &p.x_d {
                    q.x = minus(&r.schema.closure_unchecked(d), &p.x_f);
                }
                q.provenance = Provenance::Propagated("difference".into());
                finish(q, &r.schema, Some(p), "difference")
            })
            .collect());
    }
    let dims = left.schema.dims();
    let top = left.schema.highest(&dims);
    let remove = if partitions_equal_or_disjoint(left, right, &top)? {
        Some(top)
    } else if partitions_equal_or_disjoint(left, right, &dims)? {
        Some(dims)
    } else {
        None
    };
    let Some(remove) = remove else { return Ok(Vec::new()) };
    let dup = has_duplicate_rows(left);
    Ok(left
        .properties
        .iter()
        .filter(|p| !dup || p.func.duplicate_insensitive())
        .map(|p| {
            let mut q = p.clone();
            q.x = minus(&p.x, &remove);
            q.provenance = Provenance::Propagated("gsum/difference".into());
            finish(q, &r.schema, Some(p), "gsum/difference")
        })
        .filter(|q| !remove.contains(&q.attribute) || groups_fix_attribute(left, q))
        .collect())
}

/// Checks that every input of `spec` has the properties the rules read.
pub fn require_properties(spec: &QuerySpec, inputs: &[&AnalyticTable]) -> Result<()> {
    if let QuerySpec::Aggregate { func, attribute, .. } = spec {
        if !inputs[0].properties_of(attribute).any(|p| p.func == *func) {
            return Err(Error::MissingInputProperty(format!("{func}({attribute})")));
        }
    }
    Ok(())
}
