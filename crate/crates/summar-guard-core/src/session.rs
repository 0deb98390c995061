//! Interactive sessions: a DAG of query nodes over base tables, with the
//! validity gate for aggregations, explanations and backtracking.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{aggregate_name, check_applicable, execute, QuerySpec};
use crate::error::{Error, Result};
use crate::graph::{dimension_table, AttributeGraph, Hierarchy};
use crate::model::{
    fmt_set, typed_rows, write_csv, AnalyticTable, AttrSet, AttributeDef, Category, DimensionEntry, RawCsv, Schema,
    TableKind,
};
use crate::propagate::propagate;
use crate::property::{default_properties, AggFn, AggregableProperty, PropagationMode, PropertyOverride};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Accepted,
    Rejected,
    /// Rejected by the gate but executed on request.
    Forced,
}

/// Where the rejected aggregation can be expressed instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub node: String,
    #[serde(rename = "fn")]
    pub func: AggFn,
    pub attribute: String,
    pub group_by: AttrSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reason {
    pub node: String,
    pub attribute: String,
    #[serde(rename = "fn")]
    pub func: AggFn,
    pub group_by: AttrSet,
    pub allowed_x: AttrSet,
    pub required_grouping: AttrSet,
    /// Required attributes missing from the grouping, with the rule that
    /// excluded each of them from `allowed_x`.
    pub missing: BTreeMap<String, String>,
    pub violated_rule: String,
    pub suggestion: Option<Suggestion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub reason: Option<Reason>,
}

impl Verdict {
    pub fn accepted() -> Self {
        Verdict { outcome: Outcome::Accepted, reason: None }
    }

    pub fn is_rejected(&self) -> bool {
        self.outcome == Outcome::Rejected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryNode {
    pub id: String,
    /// `None` for base tables.
    pub spec: Option<QuerySpec>,
    pub inputs: Vec<String>,
    pub result: AnalyticTable,
    pub verdict_log: Vec<Verdict>,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionDecl {
    pub table: String,
    pub hierarchy: Hierarchy,
    pub graph: Arc<AttributeGraph>,
    pub dropped_duplicates: usize,
}

/// Outcome of `apply`: the node (unless rejected) and the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Applied {
    pub node: Option<String>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub node: String,
    pub attribute: String,
    pub properties: Vec<AggregableProperty>,
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    pub mode: PropagationMode,
    pub nodes: BTreeMap<String, QueryNode>,
    /// Node ids by creation.
    pub order: Vec<String>,
    pub focus: Option<String>,
    pub views: BTreeMap<String, String>,
    pub dimensions: BTreeMap<String, DimensionDecl>,
    overrides: BTreeMap<String, BTreeMap<String, PropertyOverride>>,
    counter: u64,
}

/// Attribute binding of a fact table to one dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub dimension: String,
    /// Fact attributes, lowest level first. They must be nodes of the
    /// dimension graph if the dimension is loaded.
    pub attributes: Vec<String>,
}

impl Session {
    pub fn new(mode: PropagationMode) -> Self {
        Session {
            mode,
            nodes: BTreeMap::new(),
            order: Vec::new(),
            focus: None,
            views: BTreeMap::new(),
            dimensions: BTreeMap::new(),
            overrides: BTreeMap::new(),
            counter: 0,
        }
    }

    fn check_free(&self, name: &str) -> Result<()> {
        if self.nodes.contains_key(name) || self.views.contains_key(name) {
            return Err(Error::AlreadyExists(name.to_string()));
        }
        Ok(())
    }

    fn insert(&mut self, id: String, spec: Option<QuerySpec>, inputs: Vec<String>, result: AnalyticTable, log: Vec<Verdict>) -> &QueryNode {
        self.counter += 1;
        let node = QueryNode { id: id.clone(), spec, inputs, result, verdict_log: log, created_at: self.counter };
        self.order.push(id.clone());
        self.focus = Some(id.clone());
        self.nodes.insert(id.clone(), node);
        &self.nodes[&id]
    }

    fn fresh_id(&self) -> String {
        let mut k = self.counter + 1;
        loop {
            let id = format!("N{k}");
            if !self.nodes.contains_key(&id) && !self.views.contains_key(&id) {
                return id;
            }
            k += 1;
        }
    }

    /// Loads a dimension table; duplicate tuples are dropped. The table is
    /// also a base node of the session.
    pub fn add_dimension(&mut self, name: &str, raw: &RawCsv, hierarchy: &Hierarchy) -> Result<&DimensionDecl> {
        self.check_free(name)?;
        if self.dimensions.contains_key(name) {
            return Err(Error::AlreadyExists(name.to_string()));
        }
        let rows = raw
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if r.len() != raw.headers.len() {
                    return Err(Error::Arity { row: i, got: r.len(), expected: raw.headers.len() });
                }
                r.iter()
                    .zip(&raw.headers)
                    .map(|(c, h)| {
                        Value::parse_cell(c, false).map_err(|message| Error::InvalidValue {
                            column: h.clone(),
                            row: i,
                            message,
                        })
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<Value>>>>()?;
        let (mut t, graph, dropped) = dimension_table(name, &raw.headers, rows, hierarchy)?;
        t.properties = default_properties(&t, &BTreeMap::new())?;
        self.insert(name.to_string(), None, Vec::new(), t, Vec::new());
        self.dimensions.insert(
            name.to_string(),
            DimensionDecl {
                table: name.to_string(),
                hierarchy: graph.hierarchy.clone(),
                graph,
                dropped_duplicates: dropped.len(),
            },
        );
        Ok(&self.dimensions[name])
    }

    /// Loads a fact table. Columns follow the CSV header order and must all
    /// be declared. A binding to a dimension that was not loaded derives one
    /// from the fact's own projection, with the listed order as hierarchy.
    pub fn add_fact(
        &mut self,
        name: &str,
        raw: &RawCsv,
        bindings: &[Binding],
        measures: &[(String, Category)],
        overrides: &BTreeMap<String, PropertyOverride>,
    ) -> Result<&QueryNode> {
        self.check_free(name)?;
        let mut role: BTreeMap<&str, AttributeDef> = BTreeMap::new();
        let mut entries = Vec::new();
        for b in bindings {
            let graph = match self.dimensions.get(&b.dimension) {
                Some(d) => {
                    for a in &b.attributes {
                        if !d.graph.has_node(a) {
                            return Err(Error::InvalidSchema(format!(
                                "`{a}` is not an attribute of dimension {}",
                                b.dimension
                            )));
                        }
                    }
                    d.graph.clone()
                }
                None => self.derive_dimension(&b.dimension, raw, &b.attributes)?,
            };
            for a in &b.attributes {
                let def = AttributeDef::dimension(a.clone(), b.dimension.clone(), graph.hierarchy.level(a));
                if role.insert(a, def).is_some() {
                    return Err(Error::DuplicateAttribute(a.clone()));
                }
            }
            entries.push(DimensionEntry::new(graph, &b.attributes));
        }
        for (m, c) in measures {
            if role.insert(m, AttributeDef::measure(m.clone(), *c)).is_some() {
                return Err(Error::DuplicateAttribute(m.clone()));
            }
        }
        let mut attributes = Vec::new();
        for h in &raw.headers {
            match role.remove(h.as_str()) {
                Some(def) => attributes.push(def),
                None => return Err(Error::InvalidSchema(format!("column `{h}` is not declared"))),
            }
        }
        if let Some(a) = role.keys().next() {
            return Err(Error::UnknownAttribute(a.to_string()));
        }
        let schema = Schema::new(attributes, entries)?;
        let rows = typed_rows(&schema, raw)?;
        let mut t = AnalyticTable::new(name, TableKind::FactTable, schema, rows)?;
        t.properties = default_properties(&t, overrides)?;
        self.overrides.insert(name.to_string(), overrides.clone());
        Ok(self.insert(name.to_string(), None, Vec::new(), t, Vec::new()))
    }

    fn derive_dimension(&mut self, dim: &str, raw: &RawCsv, attrs: &[String]) -> Result<Arc<AttributeGraph>> {
        let idx: Vec<usize> = attrs
            .iter()
            .map(|a| raw.headers.iter().position(|h| h == a).ok_or_else(|| Error::UnknownAttribute(a.clone())))
            .collect::<Result<_>>()?;
        let sub = RawCsv {
            headers: attrs.to_vec(),
            rows: raw.rows.iter().map(|r| idx.iter().map(|&j| r.get(j).cloned().unwrap_or_default()).collect()).collect(),
        };
        let rows = sub
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .zip(attrs)
                    .map(|(c, h)| {
                        Value::parse_cell(c, false).map_err(|message| Error::InvalidValue {
                            column: h.clone(),
                            row: i,
                            message,
                        })
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<Value>>>>()?;
        let (_, graph, _) = dimension_table(dim, &sub.headers, rows, &Hierarchy::chain(attrs))?;
        Ok(graph)
    }

    /// Registers an already built table as a base node.
    pub fn add_table(&mut self, t: AnalyticTable) -> Result<&QueryNode> {
        self.check_free(&t.name)?;
        let id = t.name.clone();
        Ok(self.insert(id, None, Vec::new(), t, Vec::new()))
    }

    /// Declares `X_d` / `X_f` of an attribute of a base fact table.
    pub fn set_property(&mut self, table: &str, attr: &str, ov: PropertyOverride) -> Result<()> {
        let node = self.nodes.get(table).ok_or_else(|| Error::UnknownNode(table.to_string()))?;
        if node.spec.is_some() || node.result.kind != TableKind::FactTable {
            return Err(Error::InvalidSchema(format!("properties can only be declared on base fact tables, not `{table}`")));
        }
        let mut ovs = self.overrides.get(table).cloned().unwrap_or_default();
        ovs.insert(attr.to_string(), ov);
        let props = default_properties(&node.result, &ovs)?;
        self.overrides.insert(table.to_string(), ovs);
        self.nodes.get_mut(table).expect("checked").result.properties = props;
        Ok(())
    }

    /// Node id for a node id or view name.
    pub fn resolve(&self, r: &str) -> Result<String> {
        if self.nodes.contains_key(r) {
            return Ok(r.to_string());
        }
        self.views.get(r).cloned().ok_or_else(|| Error::UnknownNode(r.to_string()))
    }

    pub fn node(&self, r: &str) -> Result<&QueryNode> {
        Ok(&self.nodes[&self.resolve(r)?])
    }

    pub fn table(&self, r: &str) -> Result<&AnalyticTable> {
        Ok(&self.node(r)?.result)
    }

    /// Validity gate for an aggregation on a node. `None` when allowed.
    pub fn check(&self, spec: &QuerySpec, inputs: &[String]) -> Result<Option<Reason>> {
        let QuerySpec::Aggregate { func, attribute, group_by, .. } = spec else {
            return Ok(None);
        };
        let id = self.resolve(&inputs[0])?;
        let t = &self.nodes[&id].result;
        check_applicable(t, *func, attribute)?;
        for g in group_by {
            if !t.schema.has(g) {
                return Err(Error::UnknownAttribute(g.clone()));
            }
            if !t.schema.is_dimension(g) {
                return Err(Error::NonDimensionGrouping(g.clone()));
            }
        }
        let props: Vec<&AggregableProperty> = t.properties_of(attribute).filter(|p| p.func == *func).collect();
        if props.iter().any(|p| p.permits(&t.schema, group_by)) {
            return Ok(None);
        }
        // Report the property that misses the fewest grouping attributes.
        let best = props.iter().min_by_key(|p| p.required_grouping(&t.schema).difference(group_by).count());
        let (allowed_x, required, missing, rule) = match best {
            Some(p) => {
                let req = p.required_grouping(&t.schema);
                let missing: BTreeMap<String, String> = req
                    .difference(group_by)
                    .map(|a| (a.clone(), p.removed_by.get(a).cloned().unwrap_or_else(|| "default".into())))
                    .collect();
                let rules: BTreeSet<&String> = missing.values().collect();
                let rule = rules.into_iter().cloned().collect::<Vec<_>>().join(", ");
                (p.x.clone(), req, missing, rule)
            }
            None => {
                let mut req = t.schema.dims();
                req.remove(attribute);
                let missing = req.difference(group_by).map(|a| (a.clone(), "no property".to_string())).collect();
                (AttrSet::new(), req, missing, "no property".to_string())
            }
        };
        Ok(Some(Reason {
            node: id.clone(),
            attribute: attribute.clone(),
            func: *func,
            group_by: group_by.clone(),
            allowed_x,
            required_grouping: required,
            missing,
            violated_rule: rule,
            suggestion: self.suggest(&id, *func, attribute, group_by),
        }))
    }

    /// Newest ancestor where the same aggregation, translated back through
    /// aggregations and merge renamings, passes the gate.
    pub fn suggest(&self, id: &str, func: AggFn, attribute: &str, group_by: &AttrSet) -> Option<Suggestion> {
        let mut requests: BTreeMap<String, (AggFn, String)> = BTreeMap::new();
        let mut stack = vec![(id.to_string(), func, attribute.to_string())];
        let mut seen = BTreeSet::new();
        while let Some((n, f, a)) = stack.pop() {
            if !seen.insert((n.clone(), f, a.clone())) {
                continue;
            }
            let node = &self.nodes[&n];
            if n != id {
                requests.entry(n.clone()).or_insert((f, a.clone()));
            }
            let Some(spec) = &node.spec else { continue };
            for (side, input) in node.inputs.iter().enumerate() {
                let (f2, a2) = match spec {
                    QuerySpec::Aggregate { func: f0, attribute: b, alias, .. }
                        if aggregate_name(*f0, b, alias.as_deref()) == a =>
                    {
                        (*f0, b.clone())
                    }
                    QuerySpec::Merge { .. } => {
                        let suffix = if side == 0 { "@left" } else { "@right" };
                        (f, a.strip_suffix(suffix).unwrap_or(&a).to_string())
                    }
                    _ => (f, a.clone()),
                };
                stack.push((input.clone(), f2, a2));
            }
        }
        let mut candidates: Vec<&QueryNode> = requests.keys().map(|n| &self.nodes[n]).collect();
        candidates.sort_by(|a, b| b.created_at.cmp(&a.created_at));
        for node in candidates {
            let (f, a) = &requests[&node.id];
            let t = &node.result;
            if !t.schema.has(a) || !group_by.iter().all(|g| t.schema.is_dimension(g)) {
                continue;
            }
            if check_applicable(t, *f, a).is_err() {
                continue;
            }
            if t.properties_of(a).any(|p| p.func == *f && p.permits(&t.schema, group_by)) {
                return Some(Suggestion { node: node.id.clone(), func: *f, attribute: a.clone(), group_by: group_by.clone() });
            }
        }
        None
    }

    /// Runs `spec` on the inputs. A rejected aggregation creates no node
    /// unless `force` is set, in which case the violation is logged.
    pub fn apply(&mut self, spec: &QuerySpec, inputs: &[String], name: Option<&str>, force: bool) -> Result<Applied> {
        if inputs.len() != spec.arity() {
            return Err(Error::SchemaMismatch(format!(
                "{} expects {} input table(s), got {}",
                spec.operator(),
                spec.arity(),
                inputs.len()
            )));
        }
        let ids: Vec<String> = inputs.iter().map(|i| self.resolve(i)).collect::<Result<_>>()?;
        let id = match name {
            Some(n) => {
                self.check_free(n)?;
                n.to_string()
            }
            None => self.fresh_id(),
        };
        let reason = self.check(spec, &ids)?;
        let verdict = match reason {
            Some(r) if !force => return Ok(Applied { node: None, verdict: Verdict { outcome: Outcome::Rejected, reason: Some(r) } }),
            Some(r) => Verdict { outcome: Outcome::Forced, reason: Some(r) },
            None => Verdict::accepted(),
        };
        let tables: Vec<&AnalyticTable> = ids.iter().map(|i| &self.nodes[i].result).collect();
        let mut result = execute(spec, &tables, &id)?;
        result.properties = propagate(spec, &tables, &result, self.mode)?;
        self.insert(id.clone(), Some(spec.clone()), ids, result, vec![verdict.clone()]);
        Ok(Applied { node: Some(id), verdict })
    }

    /// Makes `target` the focus. Nothing is removed.
    pub fn backtrack(&mut self, target: &str) -> Result<String> {
        let id = self.resolve(target)?;
        self.focus = Some(id.clone());
        Ok(id)
    }

    pub fn save_view(&mut self, name: &str, node: &str) -> Result<()> {
        let id = self.resolve(node)?;
        if self.views.contains_key(name) || self.nodes.contains_key(name) {
            return Err(Error::AlreadyExists(name.to_string()));
        }
        self.views.insert(name.to_string(), id);
        Ok(())
    }

    /// Inputs of `id`, transitively, newest first.
    pub fn ancestors(&self, id: &str) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<String> = self.nodes.get(id).map(|n| n.inputs.clone()).unwrap_or_default();
        while let Some(n) = stack.pop() {
            if seen.insert(n.clone()) {
                stack.extend(self.nodes[&n].inputs.iter().cloned());
            }
        }
        let mut out: Vec<String> = seen.into_iter().collect();
        out.sort_by(|a, b| self.nodes[b].created_at.cmp(&self.nodes[a].created_at));
        out
    }

    pub fn explain(&self, node: &str, attr: &str) -> Result<Explanation> {
        let id = self.resolve(node)?;
        let t = &self.nodes[&id].result;
        t.schema.attr(attr)?;
        let properties: Vec<AggregableProperty> = t.properties_of(attr).cloned().collect();
        let mut lines = Vec::new();
        if properties.is_empty() {
            lines.push(format!("{attr} has no aggregable property: it cannot be aggregated"));
        }
        for p in &properties {
            let mut l = format!("{}({attr}) allowed along {}", p.func, fmt_set(&p.x));
            if let Some(xd) = &p.x_d {
                l.push_str(&format!(" x_d={}", fmt_set(xd)));
            }
            l.push_str(&format!(" x_f={}", fmt_set(&p.x_f)));
            if !p.pending.is_empty() {
                let acts: Vec<String> = p.pending.iter().map(|a| a.to_string()).collect();
                l.push_str(&format!(" pending=[{}]", acts.join(", ")));
            }
            l.push_str(&format!(" ({})", p.provenance));
            lines.push(l);
            let req = p.required_grouping(&t.schema);
            if !req.is_empty() {
                lines.push(format!("  grouping must include {}", fmt_set(&req)));
            }
            for (a, why) in &p.removed_by {
                lines.push(format!("  {a}: removed by {why}"));
            }
        }
        Ok(Explanation { node: id, attribute: attr.to_string(), properties, lines })
    }

    /// Query tree of a node, as nested JSON.
    pub fn query_tree(&self, node: &str) -> Result<serde_json::Value> {
        let id = self.resolve(node)?;
        let n = &self.nodes[&id];
        let inputs: Vec<serde_json::Value> =
            n.inputs.iter().map(|i| self.query_tree(i)).collect::<Result<_>>()?;
        Ok(serde_json::json!({ "node": id, "spec": n.spec, "inputs": inputs }))
    }

    /// Writes the node's table as CSV and a JSON sidecar (`<path>.json`)
    /// with schema, properties and the defining query tree.
    pub fn export(&self, node: &str, path: &Path) -> Result<()> {
        let t = self.table(node)?;
        let f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        write_csv(t, f)?;
        let side = sidecar_path(path);
        let doc = serde_json::json!({
            "table": t,
            "query": self.query_tree(node)?,
        });
        let body = serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(&side, body).map_err(|e| Error::Io(format!("{}: {e}", side.display())))?;
        Ok(())
    }

    pub fn graph(&self, dimension: &str) -> Result<Arc<AttributeGraph>> {
        if let Some(d) = self.dimensions.get(dimension) {
            return Ok(d.graph.clone());
        }
        for n in &self.order {
            if let Some(e) = self.nodes[n].result.schema.entry(dimension) {
                return Ok(e.graph.clone());
            }
        }
        Err(Error::UnknownDimension(dimension.to_string()))
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Reads a table exported by [`Session::export`] back from its sidecar.
pub fn import(path: &Path) -> Result<AnalyticTable> {
    let side = sidecar_path(path);
    let body = std::fs::read_to_string(&side).map_err(|e| Error::Io(format!("{}: {e}", side.display())))?;
    let doc: serde_json::Value = serde_json::from_str(&body).map_err(|e| Error::Io(e.to_string()))?;
    serde_json::from_value(doc["table"].clone()).map_err(|e| Error::Io(e.to_string()))
}
