//! Small random instances, operator chains and the oracle checks run on them.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use summar_guard_core::engine::{
    aggregate_name, execute, merge_layout, pivot_column_name, BinOp, Calc, CmpOp, Constant, Expr, MergeKind,
    Predicate, QuerySpec,
};
use summar_guard_core::graph::{subsets, Hierarchy};
use summar_guard_core::model::{attr_set, AnalyticTable, AttrSet, Category, RawCsv, Schema};
use summar_guard_core::property::{allows, applicable_functions, default_properties, PropagationMode, PropertyOverride};
use summar_guard_core::session::{Binding, Session};
use summar_guard_core::summarizability::{oracle_g_renamed, oracle_summarizable};
use summar_guard_core::value::Value;

pub const MODES: [PropagationMode; 3] =
    [PropagationMode::Basic, PropagationMode::Summarizable, PropagationMode::GSummarizable];

/// Base tables and the operator steps applied on top of them.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    dims: Vec<(String, Vec<String>, RawCsv)>,
    facts: Vec<Fact>,
    pub steps: Vec<(QuerySpec, Vec<String>)>,
}

#[derive(Debug, Clone)]
struct Fact {
    name: String,
    raw: RawCsv,
    bindings: Vec<Binding>,
    measures: Vec<(String, Category)>,
    overrides: BTreeMap<String, PropertyOverride>,
}

fn cell(rng: &mut StdRng, domain: usize, nulls: bool) -> String {
    if nulls && rng.gen_bool(0.15) {
        return "-".into();
    }
    ["a", "b", "c", "d"][rng.gen_range(0..domain)].to_string()
}

fn number(rng: &mut StdRng) -> String {
    if rng.gen_bool(0.1) {
        return "-".into();
    }
    rng.gen_range(1..=3).to_string()
}

fn pick<'a, T>(rng: &mut StdRng, v: &'a [T]) -> &'a T {
    v.choose(rng).expect("non-empty")
}

fn random_subset(rng: &mut StdRng, items: &[String], p: f64) -> Vec<String> {
    items.iter().filter(|_| rng.gen_bool(p)).cloned().collect()
}

fn fact(
    rng: &mut StdRng,
    name: &str,
    dims: &[(String, Vec<String>, RawCsv)],
    bindings: Vec<Binding>,
    measures: &[&str],
) -> Fact {
    let mut headers: Vec<String> = bindings.iter().flat_map(|b| b.attributes.clone()).collect();
    headers.extend(measures.iter().map(|m| m.to_string()));
    let n = rng.gen_range(1..=8);
    let mut rows: Vec<Vec<String>> = Vec::new();
    for _ in 0..n {
        let mut row = Vec::new();
        for b in &bindings {
            let (_, attrs, raw) = dims.iter().find(|d| d.0 == b.dimension).expect("dimension");
            let src = pick(rng, &raw.rows);
            row.extend(b.attributes.iter().map(|a| src[attrs.iter().position(|x| x == a).expect("attr")].clone()));
        }
        row.extend(measures.iter().map(|_| number(rng)));
        if !rows.contains(&row) {
            rows.push(row);
        }
    }
    Fact {
        name: name.into(),
        raw: RawCsv { headers, rows },
        bindings,
        measures: measures.iter().map(|m| (m.to_string(), Category::Num)).collect(),
        overrides: BTreeMap::new(),
    }
}

fn load(f: &Fact, s: &mut Session) -> bool {
    s.add_fact(&f.name, &f.raw, &f.bindings, &f.measures, &f.overrides).is_ok()
}

/// Random declarations that the data accepts.
fn declare(rng: &mut StdRng, f: &mut Fact, s: &Session) {
    let t = s.table(&f.name).expect("loaded").clone();
    let dims = t.schema.dimension_names();
    for (m, _) in f.measures.clone() {
        if !rng.gen_bool(0.6) {
            continue;
        }
        let ov = PropertyOverride {
            x_d: rng.gen_bool(0.6).then(|| attr_set(random_subset(rng, &dims, 0.5))),
            x_f: Some(attr_set(random_subset(rng, &dims, 0.25))),
        };
        let mut ovs = f.overrides.clone();
        ovs.insert(m.clone(), ov);
        if default_properties(&t, &ovs).is_ok() {
            f.overrides = ovs;
        }
    }
}

fn dims_only_predicate(rng: &mut StdRng, t: &AnalyticTable) -> Option<Predicate> {
    let dims = t.schema.dimension_names();
    if dims.is_empty() || t.is_empty() {
        return None;
    }
    let d = pick(rng, &dims).clone();
    let col = t.column(&d).ok()?;
    let v = pick(rng, &col).clone();
    let c = match &v {
        Value::Null => Constant::null(),
        v => Constant::new(v.to_string(), true),
    };
    let op = if rng.gen_bool(0.6) { CmpOp::Is } else { CmpOp::Ne };
    Some(Predicate::cmp(&d, op, c))
}

fn random_step(
    rng: &mut StdRng,
    s: &mut Session,
    cur: &str,
    calc_id: &mut usize,
    steps: &mut Vec<(QuerySpec, Vec<String>)>,
) -> Option<(QuerySpec, Vec<String>)> {
    let t = s.table(cur).ok()?.clone();
    let dims = t.schema.dimension_names();
    let measures = t.schema.measure_names();
    let roll = rng.gen_range(0..100);
    let one = vec![cur.to_string()];
    match roll {
        0..=14 => {
            let p = if !measures.is_empty() && rng.gen_bool(0.3) {
                let m = pick(rng, &measures).clone();
                Predicate::cmp(&m, CmpOp::Ge, Constant::new("2", false))
            } else {
                dims_only_predicate(rng, &t)?
            };
            Some((QuerySpec::Filter { predicate: p }, one))
        }
        15..=24 => {
            let mut keep = dims.clone();
            keep.extend(random_subset(rng, &measures, 0.7));
            let mut calc = Vec::new();
            if !measures.is_empty() && rng.gen_bool(0.5) {
                *calc_id += 1;
                let m = pick(rng, &measures).clone();
                calc.push(Calc {
                    expr: Expr::Bin {
                        op: BinOp::Add,
                        left: Box::new(Expr::Attr { name: m }),
                        right: Box::new(Expr::Num { value: 1.into() }),
                    },
                    name: format!("C{calc_id}"),
                    category: None,
                });
            }
            Some((QuerySpec::Project { keep, calc }, one))
        }
        25..=59 => {
            let all = t.schema.names();
            let a = all.choose(rng)?.clone();
            let cat = t.schema.attr(&a).ok()?.category;
            let func = *applicable_functions(cat).choose(rng)?;
            let others: Vec<String> = dims.iter().filter(|d| **d != a).cloned().collect();
            let group_by = attr_set(random_subset(rng, &others, 0.5));
            Some((QuerySpec::Aggregate { func, attribute: a, group_by, alias: None }, one))
        }
        60..=69 => {
            if measures.is_empty() || dims.len() < 2 {
                return None;
            }
            let a = pick(rng, &measures).clone();
            let mut over = attr_set(random_subset(rng, &dims, 0.4));
            if over.is_empty() {
                over.insert(pick(rng, &dims).clone());
            }
            if over.len() == dims.len() {
                return None;
            }
            Some((QuerySpec::Pivot { attribute: a, over }, one))
        }
        70..=84 => {
            let kind = *pick(rng, &[MergeKind::Left, MergeKind::Right, MergeKind::Full, MergeKind::Strict]);
            let other = if rng.gen_bool(0.7) { "M" } else { "F" };
            Some((QuerySpec::Merge { kind, on: None }, vec![cur.to_string(), other.to_string()]))
        }
        _ => {
            let spec = if rng.gen_bool(0.5) { QuerySpec::Union } else { QuerySpec::Difference };
            let partner = if cur == "F" && rng.gen_bool(0.6) {
                "U".to_string()
            } else {
                let aux = QuerySpec::Filter { predicate: dims_only_predicate(rng, &t)? };
                let id = s.apply(&aux, &one, None, true).ok()?.node?;
                // Auxiliary filters are steps too, so replays create the same ids.
                steps.push((aux, one.clone()));
                s.backtrack(cur).ok()?;
                id
            };
            Some((spec, vec![cur.to_string(), partner]))
        }
    }
}

impl Instance {
    pub fn generate(seed: u64) -> Instance {
        let mut rng = StdRng::seed_from_u64(seed);
        let n0 = rng.gen_range(1..=3);
        let n1 = if rng.gen_bool(0.6) { rng.gen_range(1..=(5 - n0).min(2)) } else { 0 };
        let mut dims = Vec::new();
        for (k, n) in [(0, n0), (1, n1)] {
            if n == 0 {
                continue;
            }
            let attrs: Vec<String> = (0..n).map(|i| format!("{}{i}", ["A", "B"][k])).collect();
            let rows = (0..rng.gen_range(2..=6))
                .map(|_| attrs.iter().enumerate().map(|(i, _)| cell(&mut rng, if i == 0 { 4 } else { 2 }, i > 0)).collect())
                .collect();
            dims.push((format!("D{k}"), attrs.clone(), RawCsv { headers: attrs, rows }));
        }
        let full: Vec<Binding> =
            dims.iter().map(|(d, a, _)| Binding { dimension: d.clone(), attributes: a.clone() }).collect();
        let measures: &[&str] = if rng.gen_bool(0.5) { &["M0", "M1"] } else { &["M0"] };
        let mut facts = vec![
            fact(&mut rng, "F", &dims, full.clone(), measures),
            fact(&mut rng, "U", &dims, full.clone(), measures),
        ];
        // Merge partner: a suffix-free subset of the bindings.
        let partner: Vec<Binding> = full
            .iter()
            .filter_map(|b| {
                let keep = random_subset(&mut rng, &b.attributes, 0.6);
                (!keep.is_empty()).then(|| Binding { dimension: b.dimension.clone(), attributes: keep })
            })
            .collect();
        let partner = if partner.is_empty() { vec![full[0].clone()] } else { partner };
        facts.push(fact(&mut rng, "M", &dims, partner, &["N0"]));

        let mut inst = Instance { seed, dims, facts, steps: Vec::new() };
        let mut s = inst.base(PropagationMode::Basic).expect("base tables load");
        for i in 0..inst.facts.len() {
            let mut f = inst.facts[i].clone();
            declare(&mut rng, &mut f, &s);
            inst.facts[i] = f;
        }
        s = inst.base(PropagationMode::Basic).expect("declarations hold");
        let mut cur = "F".to_string();
        let mut calc_id = 0;
        for _ in 0..rng.gen_range(1..=4) {
            let Some((spec, inputs)) = random_step(&mut rng, &mut s, &cur, &mut calc_id, &mut inst.steps) else {
                continue;
            };
            let Ok(applied) = s.apply(&spec, &inputs, None, true) else {
                s.backtrack(&cur).expect("known");
                continue;
            };
            inst.steps.push((spec, inputs));
            cur = applied.node.expect("forced");
        }
        inst
    }

    pub fn base(&self, mode: PropagationMode) -> Option<Session> {
        let mut s = Session::new(mode);
        for (name, attrs, raw) in &self.dims {
            s.add_dimension(name, raw, &Hierarchy::chain(attrs)).ok()?;
        }
        for f in &self.facts {
            if !load(f, &mut s) {
                return None;
            }
        }
        Some(s)
    }

    /// Replays the steps with `force`, returning the session and the node
    /// created by each step.
    pub fn replay(&self, mode: PropagationMode) -> (Session, Vec<String>) {
        let mut s = self.base(mode).expect("base tables load");
        let mut ids = Vec::new();
        for (spec, inputs) in &self.steps {
            let applied = s.apply(spec, inputs, None, true).expect("replay");
            ids.push(applied.node.expect("forced"));
        }
        (s, ids)
    }
}

/// Node ids are the same in every replay, so steps can be matched by id.
fn step_inputs<'a>(s: &'a Session, inputs: &[String]) -> Vec<&'a AnalyticTable> {
    inputs.iter().map(|i| s.table(i).expect("input")).collect()
}

/// Schema with attributes renamed by `back` (result name to source name).
fn renamed(r: &AnalyticTable, back: &BTreeMap<String, String>) -> AnalyticTable {
    let mut out = r.clone();
    let name = |n: &String| back.get(n).cloned().unwrap_or_else(|| n.clone());
    let attributes = r
        .schema
        .attributes
        .iter()
        .map(|a| {
            let mut a = a.clone();
            a.name = name(&a.name);
            a
        })
        .collect();
    let dimensions = r
        .schema
        .dimensions
        .iter()
        .map(|d| {
            let mut d = d.clone();
            d.members = d.members.iter().map(|(k, v)| (name(k), v.clone())).collect();
            d
        })
        .collect();
    out.schema = Schema::new(attributes, dimensions).expect("rename keeps the schema valid");
    out
}

fn groupings_between(low: &AttrSet, high: &AttrSet) -> Vec<AttrSet> {
    let free: Vec<String> = high.difference(low).cloned().collect();
    subsets(&free)
        .into_iter()
        .map(|mut z| {
            z.extend(low.iter().cloned());
            z
        })
        .collect()
}

/// A property that fails its oracle.
#[derive(Debug)]
pub struct Counterexample {
    pub seed: u64,
    pub mode: PropagationMode,
    pub node: String,
    pub spec: QuerySpec,
    pub property: String,
}

/// Sum mode: after every aggregate, each property of the new measure is
/// checked by re-aggregation over every admissible grouping.
pub fn check_sum(inst: &Instance) -> Vec<Counterexample> {
    let (s, ids) = inst.replay(PropagationMode::Summarizable);
    let mut bad = Vec::new();
    for ((spec, inputs), id) in inst.steps.iter().zip(&ids) {
        let QuerySpec::Aggregate { func, attribute, group_by, alias } = spec else { continue };
        let t = s.table(&inputs[0]).expect("input");
        let r = s.table(id).expect("node");
        let m = aggregate_name(*func, attribute, alias.as_deref());
        for p in r.properties_of(&m) {
            let low: AttrSet = group_by.difference(&p.x).cloned().collect();
            for z2 in groupings_between(&low, group_by) {
                if !oracle_summarizable(t, attribute, *func, p.func, group_by, &z2).unwrap_or(false) {
                    bad.push(Counterexample {
                        seed: inst.seed,
                        mode: PropagationMode::Summarizable,
                        node: id.clone(),
                        spec: spec.clone(),
                        property: format!("{p} by {z2:?}"),
                    });
                }
            }
        }
    }
    bad
}

/// GSum mode: after every operator, each property of the result is checked
/// against the input owning the attribute, for every grouping that includes
/// the required one.
pub fn check_gsum(inst: &Instance) -> Vec<Counterexample> {
    let (s, ids) = inst.replay(PropagationMode::GSummarizable);
    let mut bad = Vec::new();
    for ((spec, inputs), id) in inst.steps.iter().zip(&ids) {
        let ins = step_inputs(&s, inputs);
        let r = s.table(id).expect("node");
        for p in &r.properties {
            let z = p.required_grouping(&r.schema);
            let ok = match spec {
                QuerySpec::Aggregate { func, attribute, group_by, alias }
                    if p.attribute == aggregate_name(*func, attribute, alias.as_deref()) =>
                {
                    groupings_between(&z, group_by).iter().all(|z2| {
                        oracle_summarizable(ins[0], attribute, *func, p.func, group_by, z2).unwrap_or(false)
                    })
                }
                QuerySpec::Pivot { attribute, over } if !ins[0].schema.has(&p.attribute) => {
                    let t = ins[0];
                    let combos = t.distinct_projection(&over.iter().cloned().collect::<Vec<_>>()).expect("over");
                    combos.iter().filter(|v| pivot_column_name(attribute, v) == p.attribute).all(|v| {
                        let pred = over
                            .iter()
                            .zip(v)
                            .map(|(o, val)| {
                                let c = match val {
                                    Value::Null => Constant::null(),
                                    val => Constant::new(val.to_string(), true),
                                };
                                Predicate::cmp(o, CmpOp::Is, c)
                            })
                            .reduce(Predicate::and)
                            .expect("non-empty over");
                        let tv = execute(&QuerySpec::Filter { predicate: pred }, &[t], "tv").expect("filter");
                        oracle_g_renamed(&tv, attribute, r, &p.attribute, p.func, &z).unwrap_or(false)
                    })
                }
                QuerySpec::Merge { kind, on } => {
                    let layout = merge_layout(&ins[0].schema, &ins[1].schema, on.as_ref()).expect("layout");
                    // Join attributes belong to the side the merge preserves.
                    let joined = layout.shared && layout.y.contains(&p.attribute);
                    let sides: &[bool] = match kind {
                        MergeKind::Left if joined => &[true],
                        MergeKind::Right if joined => &[false],
                        _ => &[true, false],
                    };
                    sides.iter().all(|&left| {
                        let map = layout.map_of(left);
                        let back: BTreeMap<String, String> =
                            map.iter().filter(|(s, r)| s != r).map(|(s, r)| (r.clone(), s.clone())).collect();
                        let src = map.iter().find(|(_, res)| **res == p.attribute).map(|(s, _)| s.clone());
                        let Some(src) = src else { return true };
                        let rr = renamed(r, &back);
                        let zz: AttrSet = z.iter().map(|a| back.get(a).cloned().unwrap_or_else(|| a.clone())).collect();
                        let side = ins[if left { 0 } else { 1 }];
                        oracle_g_renamed(side, &src, &rr, &src, p.func, &zz).unwrap_or(false)
                    })
                }
                QuerySpec::Union => ins.iter().all(|t| {
                    oracle_g_renamed(t, &p.attribute, r, &p.attribute, p.func, &z).unwrap_or(false)
                }),
                _ if ins[0].schema.has(&p.attribute) => {
                    oracle_g_renamed(ins[0], &p.attribute, r, &p.attribute, p.func, &z).unwrap_or(false)
                }
                // Calculated columns have no source attribute.
                _ => true,
            };
            if !ok {
                bad.push(Counterexample {
                    seed: inst.seed,
                    mode: PropagationMode::GSummarizable,
                    node: id.clone(),
                    spec: spec.clone(),
                    property: format!("{p}"),
                });
            }
        }
    }
    bad
}

/// Allowed `(F, A, groupby)` triples shrink from basic to sum to gsum.
pub fn check_monotone_sessions(sessions: &[&Session; 3], nodes: &[String]) -> Vec<String> {
    let mut bad = Vec::new();
    for id in nodes {
        let ts: Vec<&AnalyticTable> = sessions.iter().map(|s| s.table(id).expect("node")).collect();
        let dims = ts[0].schema.dimension_names();
        for a in &ts[0].schema.attributes {
            for f in applicable_functions(a.category) {
                for y in subsets(&dims) {
                    let ok: Vec<bool> = ts.iter().map(|t| allows(t, f, &a.name, &y)).collect();
                    if (ok[2] && !ok[1]) || (ok[1] && !ok[0]) {
                        bad.push(format!("{id}: {f}({}) by {y:?} allowed as {ok:?}", a.name));
                    }
                }
            }
        }
    }
    bad
}

pub fn check_monotone(inst: &Instance) -> Vec<String> {
    let runs: Vec<(Session, Vec<String>)> = MODES.iter().map(|m| inst.replay(*m)).collect();
    check_monotone_sessions(&[&runs[0].0, &runs[1].0, &runs[2].0], &runs[0].0.order)
        .into_iter()
        .map(|m| format!("seed {}: {m}", inst.seed))
        .collect()
}

/// Human-readable trace of an instance in one mode.
pub fn dump(inst: &Instance, mode: PropagationMode) -> String {
    use std::fmt::Write;
    let (s, _) = inst.replay(mode);
    let mut out = String::new();
    for f in &inst.facts {
        writeln!(out, "{} overrides {:?}", f.name, f.overrides).unwrap();
    }
    for id in &s.order {
        let n = &s.nodes[id];
        writeln!(out, "== {id} {:?} {:?}", n.spec, n.inputs).unwrap();
        writeln!(out, "   {:?}", n.result.schema.names()).unwrap();
        for r in &n.result.rows {
            writeln!(out, "   {:?}", r.iter().map(|v| v.to_string()).collect::<Vec<_>>()).unwrap();
        }
        for d in &n.result.schema.dimensions {
            writeln!(out, "   dim {} {:?} {:?}", d.name, d.members, d.graph.labelled_edges()).unwrap();
        }
        for p in &n.result.properties {
            writeln!(out, "   {p} x_d={:?} x_f={:?} {:?}", p.x_d, p.x_f, p.provenance).unwrap();
        }
    }
    out
}

impl Counterexample {
    pub fn spec_kind(&self) -> &'static str {
        self.spec.operator()
    }
}
