//! Attribute graphs: labelled digraphs over a dimension's attributes with
//! ⊥/⊤ sentinels, discovered from dimension data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    attr_set, lfd_holds, nfd_holds, AnalyticTable, AttrSet, AttributeDef, DimensionEntry, Schema,
    TableKind,
};
use crate::value::{tuple_key, Value};

pub const BOTTOM: &str = "⊥";
pub const TOP: &str = "⊤";

/// The declared parent relation ≼ of a dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Hierarchy {
    pub attributes: Vec<String>,
    /// `(child, parent)` pairs.
    pub parents: Vec<(String, String)>,
}

impl Hierarchy {
    pub fn chain<S: AsRef<str>>(attrs: &[S]) -> Self {
        Self::from_chains(&[attrs.iter().map(|s| s.as_ref().to_string()).collect()])
    }

    /// Each chain lists attributes from lowest to highest.
    pub fn from_chains(chains: &[Vec<String>]) -> Self {
        let mut h = Hierarchy::default();
        for chain in chains {
            for a in chain {
                if !h.attributes.contains(a) {
                    h.attributes.push(a.clone());
                }
            }
            for w in chain.windows(2) {
                let pair = (w[0].clone(), w[1].clone());
                if !h.parents.contains(&pair) {
                    h.parents.push(pair);
                }
            }
        }
        h
    }

    pub fn chains(&self) -> Vec<Vec<String>> {
        // Decompose into maximal upward chains starting at bottom attributes.
        let mut out = Vec::new();
        let mut used_pairs = BTreeSet::new();
        for a in &self.attributes {
            if !self.children_of(a).is_empty() {
                continue;
            }
            self.collect_chains(vec![a.clone()], &mut out, &mut used_pairs);
        }
        for a in &self.attributes {
            if !out.iter().any(|c: &Vec<String>| c.contains(a)) {
                out.push(vec![a.clone()]);
            }
        }
        out
    }

    fn collect_chains(
        &self,
        path: Vec<String>,
        out: &mut Vec<Vec<String>>,
        used: &mut BTreeSet<(String, String)>,
    ) {
        let last = path.last().unwrap().clone();
        let parents: Vec<String> = self.parents_of(&last);
        let fresh: Vec<String> =
            parents.iter().filter(|p| !used.contains(&(last.clone(), (*p).clone()))).cloned().collect();
        if fresh.is_empty() {
            if path.len() > 1 || parents.is_empty() {
                out.push(path);
            }
            return;
        }
        for p in fresh {
            used.insert((last.clone(), p.clone()));
            let mut next = path.clone();
            next.push(p);
            self.collect_chains(next, out, used);
        }
    }

    pub fn parents_of(&self, a: &str) -> Vec<String> {
        self.parents.iter().filter(|(c, _)| c == a).map(|(_, p)| p.clone()).collect()
    }

    pub fn children_of(&self, a: &str) -> Vec<String> {
        self.parents.iter().filter(|(_, p)| p == a).map(|(c, _)| c.clone()).collect()
    }

    /// Strict ancestors under ≼*.
    pub fn ancestors(&self, a: &str) -> AttrSet {
        let mut out = AttrSet::new();
        let mut stack = self.parents_of(a);
        while let Some(p) = stack.pop() {
            if out.insert(p.clone()) {
                stack.extend(self.parents_of(&p));
            }
        }
        out
    }

    /// Length of the longest downward chain below `a`.
    pub fn level(&self, a: &str) -> usize {
        self.children_of(a).iter().map(|c| self.level(c) + 1).max().unwrap_or(0)
    }

    /// All upward paths from `a` to `b` (inclusive of both ends).
    pub fn paths(&self, a: &str, b: &str) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        let mut path = vec![a.to_string()];
        self.paths_rec(b, &mut path, &mut out);
        out
    }

    fn paths_rec(&self, b: &str, path: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        let last = path.last().unwrap().clone();
        if last == b && path.len() > 1 {
            out.push(path.clone());
            return;
        }
        for p in self.parents_of(&last) {
            path.push(p);
            self.paths_rec(b, path, out);
            path.pop();
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (c, p) in &self.parents {
            for x in [c, p] {
                if !self.attributes.contains(x) {
                    return Err(Error::InvalidHierarchy(format!("`{x}` is not declared")));
                }
            }
            if c == p {
                return Err(Error::InvalidHierarchy(format!("`{c}` is its own parent")));
            }
        }
        for a in &self.attributes {
            if self.ancestors(a).contains(a) {
                return Err(Error::InvalidHierarchy(format!("cycle through `{a}`")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Hierarchy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let chains: Vec<String> = self.chains().iter().map(|c| c.join(" < ")).collect();
        f.write_str(&chains.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum Node {
    Bottom,
    Top,
    Attr(String),
}

impl From<Node> for String {
    fn from(n: Node) -> String {
        n.to_string()
    }
}

impl From<String> for Node {
    fn from(s: String) -> Node {
        match s.as_str() {
            BOTTOM => Node::Bottom,
            TOP => Node::Top,
            _ => Node::Attr(s),
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Bottom => f.write_str(BOTTOM),
            Node::Top => f.write_str(TOP),
            Node::Attr(a) => f.write_str(a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "1")]
    One,
    #[serde(rename = "f")]
    F,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Plus => "+",
            Label::One => "1",
            Label::F => "f",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: Node,
    pub to: Node,
    pub label: Label,
    pub skip: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeGraph {
    pub dimension: String,
    pub attributes: Vec<String>,
    pub nullable: AttrSet,
    pub hierarchy: Hierarchy,
    pub edges: Vec<Edge>,
}

fn label_of(dim: &AnalyticTable, a: &str, b: &str) -> Result<Label> {
    let x = attr_set([a]);
    let y = attr_set([b]);
    Ok(if lfd_holds(dim, &x, &y)? {
        Label::F
    } else if nfd_holds(dim, &x, &y)? {
        Label::One
    } else {
        Label::Plus
    })
}

/// Discovers the attribute graph of a dimension table.
///
/// Base edges follow the declared parent pairs. A skip edge `(A, B)` for a
/// non-adjacent `A ≼* B` on one branch is added when an attribute strictly
/// between them is nullable, or when `A` determines `B` (literally or with
/// nulls) and no all-`f` path already implies it.
pub fn discover(dim: &AnalyticTable, hierarchy: &Hierarchy) -> Result<AttributeGraph> {
    if dim.kind != TableKind::DimensionTable {
        return Err(Error::InvalidSchema(format!("`{}` is not a dimension table", dim.name)));
    }
    hierarchy.validate()?;
    let names = dim.schema.names();
    let mut h = hierarchy.clone();
    for a in &h.attributes {
        if !names.contains(a) {
            return Err(Error::InvalidHierarchy(format!("`{a}` is not an attribute of `{}`", dim.name)));
        }
    }
    for n in &names {
        if !h.attributes.contains(n) {
            h.attributes.push(n.clone());
        }
    }
    // Keep schema order for attributes.
    h.attributes = names.clone();
    let nullable: AttrSet =
        dim.schema.attributes.iter().filter(|a| a.nullable).map(|a| a.name.clone()).collect();

    let mut edges = Vec::new();
    for a in &h.attributes {
        if h.children_of(a).is_empty() {
            edges.push(Edge { from: Node::Bottom, to: Node::Attr(a.clone()), label: Label::Plus, skip: false });
        }
    }
    for (c, p) in &h.parents {
        edges.push(Edge {
            from: Node::Attr(c.clone()),
            to: Node::Attr(p.clone()),
            label: label_of(dim, c, p)?,
            skip: false,
        });
    }
    let base: BTreeMap<(String, String), Label> = edges
        .iter()
        .filter_map(|e| match (&e.from, &e.to) {
            (Node::Attr(a), Node::Attr(b)) => Some(((a.clone(), b.clone()), e.label)),
            _ => None,
        })
        .collect();
    for a in &h.attributes {
        for b in &h.attributes {
            if a == b || h.parents.contains(&(a.clone(), b.clone())) || !h.ancestors(a).contains(b) {
                continue;
            }
            let paths = h.paths(a, b);
            let nullable_between = paths
                .iter()
                .any(|p| p[1..p.len() - 1].iter().any(|m| nullable.contains(m)));
            let label = label_of(dim, a, b)?;
            let implied = paths.iter().any(|p| {
                p.windows(2).all(|w| base.get(&(w[0].clone(), w[1].clone())) == Some(&Label::F))
            });
            let determined = label != Label::Plus && !implied;
            if nullable_between || determined {
                edges.push(Edge { from: Node::Attr(a.clone()), to: Node::Attr(b.clone()), label, skip: true });
            }
        }
    }
    for a in &h.attributes {
        if h.parents_of(a).is_empty() {
            edges.push(Edge { from: Node::Attr(a.clone()), to: Node::Top, label: Label::F, skip: false });
        }
    }
    Ok(AttributeGraph { dimension: dim.name.clone(), attributes: h.attributes.clone(), nullable, hierarchy: h, edges })
}

impl AttributeGraph {
    pub fn edge(&self, from: &str, to: &str) -> Option<&Edge> {
        self.edges.iter().find(|e| e.from == Node::Attr(from.into()) && e.to == Node::Attr(to.into()))
    }

    pub fn has_node(&self, a: &str) -> bool {
        self.attributes.iter().any(|x| x == a)
    }

    /// Attribute-to-attribute edges as `(from, to, label)`.
    pub fn labelled_edges(&self) -> BTreeSet<(String, String, Label)> {
        self.edges
            .iter()
            .filter_map(|e| match (&e.from, &e.to) {
                (Node::Attr(a), Node::Attr(b)) => Some((a.clone(), b.clone(), e.label)),
                _ => None,
            })
            .collect()
    }

    /// Graph nodes reachable from `x` over f-labelled edges, plus `x`.
    pub fn closure(&self, x: &AttrSet) -> Result<AttrSet> {
        for a in x {
            if !self.has_node(a) {
                return Err(Error::UnknownAttribute(a.clone()));
            }
        }
        Ok(self.closure_nodes(x))
    }

    fn closure_nodes(&self, x: &AttrSet) -> AttrSet {
        let mut out: AttrSet = x.iter().filter(|a| self.has_node(a)).cloned().collect();
        let mut stack: Vec<String> = out.iter().cloned().collect();
        while let Some(a) = stack.pop() {
            for e in &self.edges {
                if e.label != Label::F || e.from != Node::Attr(a.clone()) {
                    continue;
                }
                if let Node::Attr(b) = &e.to {
                    if out.insert(b.clone()) {
                        stack.push(b.clone());
                    }
                }
            }
        }
        out
    }

    /// Minimum-cardinality set whose closure covers every attribute; ties go
    /// to the leftmost attributes.
    pub fn dimension_identifier(&self) -> AttrSet {
        let all: AttrSet = self.attributes.iter().cloned().collect();
        minimum_cover(&self.attributes, |k| self.closure_nodes(k).is_superset(&all))
    }

    pub fn to_dot(&self) -> String {
        let mut s = format!("digraph \"{}\" {{\n", self.dimension);
        for e in &self.edges {
            let style = if e.skip { ", style=dashed" } else { "" };
            s.push_str(&format!("  \"{}\" -> \"{}\" [label=\"{}\"{}];\n", e.from, e.to, e.label, style));
        }
        s.push_str("}\n");
        s
    }
}

/// First subset of `order` (by size, then lexicographic index order)
/// satisfying `ok`; the full set if none smaller does.
pub fn minimum_cover(order: &[String], ok: impl Fn(&AttrSet) -> bool) -> AttrSet {
    let n = order.len();
    for size in 0..=n {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let k: AttrSet = idx.iter().map(|&i| order[i].clone()).collect();
            if ok(&k) {
                return k;
            }
            if !next_combination(&mut idx, n) {
                break;
            }
        }
    }
    order.iter().cloned().collect()
}

/// Advances `idx` to the next k-combination of `0..n` in lexicographic order.
pub fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// All subsets of `items`, smallest first.
pub fn subsets(items: &[String]) -> Vec<AttrSet> {
    let n = items.len();
    let mut out = Vec::new();
    for size in 0..=n {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&i| items[i].clone()).collect());
            if !next_combination(&mut idx, n) {
                break;
            }
        }
    }
    out
}

fn labelled_paths(g: &AttributeGraph, a: &str, b: &str, common: &AttrSet) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack: Vec<(String, String, BTreeSet<String>)> =
        vec![(a.to_string(), String::new(), attr_set([a]))];
    while let Some((cur, labels, visited)) = stack.pop() {
        for e in &g.edges {
            if e.from != Node::Attr(cur.clone()) {
                continue;
            }
            let Node::Attr(next) = &e.to else { continue };
            if !common.contains(next) || visited.contains(next) {
                continue;
            }
            let l = format!("{labels}{}", e.label);
            if next == b {
                out.insert(l);
            } else {
                let mut v = visited.clone();
                v.insert(next.clone());
                stack.push((next.clone(), l, v));
            }
        }
    }
    out
}

/// True iff every ordered pair of `common` is joined by the same set of
/// labelled paths (through `common` only) in both graphs.
pub fn same_labelled_paths(g1: &AttributeGraph, g2: &AttributeGraph, common: &AttrSet) -> bool {
    for a in common {
        for b in common {
            if a != b && labelled_paths(g1, a, b, common) != labelled_paths(g2, a, b, common) {
                return false;
            }
        }
    }
    true
}

/// Builds a dimension table, dropping duplicate tuples (returned) and
/// discovering its attribute graph.
pub fn dimension_table(
    name: &str,
    headers: &[String],
    rows: Vec<Vec<Value>>,
    hierarchy: &Hierarchy,
) -> Result<(AnalyticTable, Arc<AttributeGraph>, Vec<Vec<Value>>)> {
    hierarchy.validate()?;
    let mut seen = BTreeSet::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in rows {
        if seen.insert(tuple_key(&r)) {
            kept.push(r);
        } else {
            dropped.push(r);
        }
    }
    let attrs: Vec<AttributeDef> =
        headers.iter().map(|h| AttributeDef::dimension(h.clone(), name, hierarchy.level(h))).collect();
    let schema = Schema { attributes: attrs, dimensions: Vec::new() };
    let mut t = AnalyticTable::new(name, TableKind::DimensionTable, schema, kept)?;
    let g = Arc::new(discover(&t, hierarchy)?);
    t.schema.dimensions = vec![DimensionEntry::new(g.clone(), headers)];
    Ok((t, g, dropped))
}

// ---------------------------------------------------------------------------
// Multi-dimension reasoning over a table schema.

impl Schema {
    /// Attributes of the table literally determined by `x`, following
    /// f-edges of every bound dimension (through unbound nodes as well).
    pub fn closure(&self, x: &AttrSet) -> Result<AttrSet> {
        for a in x {
            if !self.has(a) {
                return Err(Error::UnknownAttribute(a.clone()));
            }
        }
        Ok(self.closure_unchecked(x))
    }

    pub(crate) fn closure_unchecked(&self, x: &AttrSet) -> AttrSet {
        let mut out = x.clone();
        loop {
            let before = out.len();
            for d in &self.dimensions {
                let nodes: AttrSet = out.iter().filter_map(|a| d.node_of(a)).map(str::to_string).collect();
                if nodes.is_empty() {
                    continue;
                }
                for n in d.graph.closure_nodes(&nodes) {
                    let a = d.attr_of_node(&n);
                    if self.is_dimension(&a) {
                        out.insert(a);
                    }
                }
            }
            if out.len() == before {
                return out;
            }
        }
    }

    /// Union over bound dimensions of the minimum set of bound attributes
    /// determining the others.
    pub fn fact_identifier(&self) -> AttrSet {
        let mut out = AttrSet::new();
        for d in &self.dimensions {
            let order: Vec<String> =
                self.dimension_names().into_iter().filter(|a| d.members.contains_key(a)).collect();
            let all: AttrSet = order.iter().cloned().collect();
            let k = minimum_cover(&order, |k| {
                let nodes: AttrSet = k.iter().filter_map(|a| d.node_of(a)).map(str::to_string).collect();
                let reached: AttrSet =
                    d.graph.closure_nodes(&nodes).iter().map(|n| d.attr_of_node(n)).collect();
                reached.is_superset(&all)
            });
            out.extend(k);
        }
        out
    }

    /// Strict ancestors of a table attribute under ≼* in any bound
    /// dimension, as table attribute names.
    pub fn ancestors(&self, attr: &str) -> AttrSet {
        let mut out = AttrSet::new();
        for d in self.entries_of(attr) {
            let node = d.node_of(attr).unwrap_or(attr);
            for n in d.graph.hierarchy.ancestors(node) {
                out.insert(d.attr_of_node(&n));
            }
        }
        out
    }

    /// Yᵗᵒᵖ: members of `y` with no ancestor also in `y`.
    pub fn highest(&self, y: &AttrSet) -> AttrSet {
        y.iter().filter(|a| self.ancestors(a).is_disjoint(y)).cloned().collect()
    }
}
