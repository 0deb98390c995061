//! Schemas, analytic tables and literal dependency checks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AttributeGraph;
use crate::property::AggregableProperty;
use crate::value::{tuple_key, Value};

pub type AttrSet = BTreeSet<String>;

pub fn attr_set<I, S>(items: I) -> AttrSet
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    items.into_iter().map(Into::into).collect()
}

/// Renders `{A, B}` in lexicographic order.
pub fn fmt_set(s: &AttrSet) -> String {
    let items: Vec<&str> = s.iter().map(String::as_str).collect();
    format!("{{{}}}", items.join(", "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "NUM")]
    Num,
    #[serde(rename = "DESC")]
    Desc,
    #[serde(rename = "STAT")]
    Stat,
}

impl Category {
    pub fn is_numeric(self) -> bool {
        matches!(self, Category::Num | Category::Stat)
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NUM" => Some(Category::Num),
            "DESC" => Some(Category::Desc),
            "STAT" => Some(Category::Stat),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Num => "NUM",
            Category::Desc => "DESC",
            Category::Stat => "STAT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Dimension { dimension: String, level: usize },
    Measure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub role: Role,
    pub category: Category,
    pub nullable: bool,
}

impl AttributeDef {
    pub fn measure(name: impl Into<String>, category: Category) -> Self {
        AttributeDef { name: name.into(), role: Role::Measure, category, nullable: false }
    }

    pub fn dimension(name: impl Into<String>, dimension: impl Into<String>, level: usize) -> Self {
        AttributeDef {
            name: name.into(),
            role: Role::Dimension { dimension: dimension.into(), level },
            category: Category::Desc,
            nullable: false,
        }
    }

    pub fn is_dimension(&self) -> bool {
        matches!(self.role, Role::Dimension { .. })
    }
}

/// One dimension bound to a table. `members` maps table attribute names to
/// graph nodes; they differ only after merge renaming (`City@left`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEntry {
    pub name: String,
    pub graph: Arc<AttributeGraph>,
    pub members: BTreeMap<String, String>,
}

impl DimensionEntry {
    pub fn new(graph: Arc<AttributeGraph>, attrs: &[String]) -> Self {
        DimensionEntry {
            name: graph.dimension.clone(),
            members: attrs.iter().map(|a| (a.clone(), a.clone())).collect(),
            graph,
        }
    }

    pub fn node_of(&self, attr: &str) -> Option<&str> {
        self.members.get(attr).map(String::as_str)
    }

    /// Table attribute for a graph node. Nodes that are not bound keep their
    /// own name so closures can traverse them.
    pub fn attr_of_node(&self, node: &str) -> String {
        self.members
            .iter()
            .find(|(_, n)| n.as_str() == node)
            .map(|(a, _)| a.clone())
            .unwrap_or_else(|| node.to_string())
    }

    pub fn attrs(&self) -> AttrSet {
        self.members.keys().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Schema {
    pub attributes: Vec<AttributeDef>,
    pub dimensions: Vec<DimensionEntry>,
}

impl Schema {
    pub fn new(attributes: Vec<AttributeDef>, dimensions: Vec<DimensionEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for a in &attributes {
            if !seen.insert(a.name.clone()) {
                return Err(Error::DuplicateAttribute(a.name.clone()));
            }
        }
        for d in &dimensions {
            for attr in d.members.keys() {
                match attributes.iter().find(|a| &a.name == attr) {
                    Some(a) if a.is_dimension() => {}
                    _ => {
                        return Err(Error::InvalidSchema(format!(
                            "dimension {} binds `{attr}` which is not a dimension attribute",
                            d.name
                        )))
                    }
                }
            }
        }
        for a in attributes.iter().filter(|a| a.is_dimension()) {
            if !dimensions.iter().any(|d| d.members.contains_key(&a.name)) {
                return Err(Error::InvalidSchema(format!(
                    "dimension attribute `{}` is not bound to any dimension",
                    a.name
                )));
            }
        }
        Ok(Schema { attributes, dimensions })
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.attributes.iter().map(|a| a.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn attr(&self, name: &str) -> Result<&AttributeDef> {
        self.attributes
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn has(&self, name: &str) -> bool {
        self.attributes.iter().any(|a| a.name == name)
    }

    pub fn is_dimension(&self, name: &str) -> bool {
        self.attributes.iter().any(|a| a.name == name && a.is_dimension())
    }

    /// S_D in schema order.
    pub fn dimension_names(&self) -> Vec<String> {
        self.attributes.iter().filter(|a| a.is_dimension()).map(|a| a.name.clone()).collect()
    }

    pub fn dims(&self) -> AttrSet {
        self.dimension_names().into_iter().collect()
    }

    pub fn measure_names(&self) -> Vec<String> {
        self.attributes.iter().filter(|a| !a.is_dimension()).map(|a| a.name.clone()).collect()
    }

    pub fn entries_of(&self, attr: &str) -> impl Iterator<Item = &DimensionEntry> {
        let attr = attr.to_string();
        self.dimensions.iter().filter(move |d| d.members.contains_key(&attr))
    }

    pub fn entry(&self, dimension: &str) -> Option<&DimensionEntry> {
        self.dimensions.iter().find(|d| d.name == dimension)
    }

    pub fn indices(&self, names: &AttrSet) -> Result<Vec<usize>> {
        names.iter().map(|n| self.index_of(n)).collect()
    }

    pub fn check_known(&self, names: &AttrSet) -> Result<()> {
        self.indices(names).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableKind {
    DimensionTable,
    FactTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticTable {
    pub name: String,
    pub kind: TableKind,
    pub schema: Schema,
    pub rows: Vec<Vec<Value>>,
    #[serde(default)]
    pub properties: Vec<AggregableProperty>,
}

impl AnalyticTable {
    /// Builds a table, validating arity and value kinds. Fact tables must not
    /// contain duplicate tuples.
    pub fn new(
        name: impl Into<String>,
        kind: TableKind,
        schema: Schema,
        rows: Vec<Vec<Value>>,
    ) -> Result<Self> {
        let name = name.into();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Arity { row: i, got: row.len(), expected: schema.len() });
            }
            for (v, a) in row.iter().zip(&schema.attributes) {
                let ok = match v {
                    Value::Null => true,
                    Value::Number(_) => a.category.is_numeric() || a.category == Category::Desc,
                    Value::Text(_) => a.category == Category::Desc,
                };
                if !ok {
                    return Err(Error::InvalidValue {
                        column: a.name.clone(),
                        row: i,
                        message: format!("`{v}` does not match category {}", a.category),
                    });
                }
            }
        }
        if kind == TableKind::FactTable {
            let mut seen = BTreeSet::new();
            for (i, row) in rows.iter().enumerate() {
                if !seen.insert(tuple_key(row)) {
                    return Err(Error::DuplicateTuple { table: name, row: i });
                }
            }
        }
        let mut t = AnalyticTable { name, kind, schema, rows, properties: Vec::new() };
        t.refresh_nullable();
        Ok(t)
    }

    /// Constructor for operator results, which may carry duplicates
    /// (projection does not eliminate them).
    pub(crate) fn derived(name: impl Into<String>, schema: Schema, rows: Vec<Vec<Value>>) -> Self {
        let mut t = AnalyticTable {
            name: name.into(),
            kind: TableKind::FactTable,
            schema,
            rows,
            properties: Vec::new(),
        };
        t.refresh_nullable();
        t
    }

    pub fn refresh_nullable(&mut self) {
        for (j, a) in self.schema.attributes.iter_mut().enumerate() {
            a.nullable = self.rows.iter().any(|r| r[j].is_null());
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<Vec<Value>> {
        let j = self.schema.index_of(name)?;
        Ok(self.rows.iter().map(|r| r[j].clone()).collect())
    }

    pub fn project_keys(&self, names: &AttrSet) -> Result<Vec<Vec<Value>>> {
        let idx = self.schema.indices(names)?;
        Ok(self.rows.iter().map(|r| idx.iter().map(|&j| crate::value::key_of(&r[j])).collect()).collect())
    }

    /// Distinct projection under literal equality, first-appearance order.
    pub fn distinct_projection(&self, names: &[String]) -> Result<Vec<Vec<Value>>> {
        let idx: Vec<usize> = names.iter().map(|n| self.schema.index_of(n)).collect::<Result<_>>()?;
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in &self.rows {
            let t: Vec<Value> = idx.iter().map(|&j| r[j].clone()).collect();
            if seen.insert(tuple_key(&t)) {
                out.push(t);
            }
        }
        Ok(out)
    }

    pub fn properties_of<'a>(&'a self, attr: &'a str) -> impl Iterator<Item = &'a AggregableProperty> + 'a {
        self.properties.iter().filter(move |p| p.attribute == attr)
    }

    /// Multiset equality of rows after reordering columns by name.
    pub fn same_content(&self, other: &AnalyticTable) -> bool {
        let mut a = self.schema.names();
        let mut b = other.schema.names();
        a.sort();
        b.sort();
        if a != b {
            return false;
        }
        let canon = |t: &AnalyticTable| -> Result<Vec<Vec<Value>>> {
            let idx: Vec<usize> = a.iter().map(|n| t.schema.index_of(n)).collect::<Result<_>>()?;
            let mut rows: Vec<Vec<Value>> = t.rows.iter().map(|r| tuple_key(&idx.iter().map(|&j| r[j].clone()).collect::<Vec<_>>())).collect();
            rows.sort();
            Ok(rows)
        };
        matches!((canon(self), canon(other)), (Ok(x), Ok(y)) if x == y)
    }
}

fn group_check(t: &AnalyticTable, x: &AttrSet, y: &AttrSet, skip_null_x: bool) -> Result<bool> {
    let xi = t.schema.indices(x)?;
    let yi = t.schema.indices(y)?;
    let mut map: HashMap<Vec<Value>, Vec<Value>> = HashMap::new();
    for r in &t.rows {
        if skip_null_x && xi.iter().any(|&j| r[j].is_null()) {
            continue;
        }
        let kx = tuple_key(&xi.iter().map(|&j| r[j].clone()).collect::<Vec<_>>());
        let ky = tuple_key(&yi.iter().map(|&j| r[j].clone()).collect::<Vec<_>>());
        match map.get(&kx) {
            Some(prev) if prev != &ky => return Ok(false),
            Some(_) => {}
            None => {
                map.insert(kx, ky);
            }
        }
    }
    Ok(true)
}

/// X ↦ Y under literal equality.
pub fn lfd_holds(t: &AnalyticTable, x: &AttrSet, y: &AttrSet) -> Result<bool> {
    group_check(t, x, y, false)
}

/// X → Y restricted to rows whose X values are all non-null.
pub fn nfd_holds(t: &AnalyticTable, x: &AttrSet, y: &AttrSet) -> Result<bool> {
    group_check(t, x, y, true)
}

// ---------------------------------------------------------------------------
// CSV

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCsv {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_csv<R: Read>(reader: R) -> Result<RawCsv> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(RawCsv { headers, rows })
}

pub fn read_csv_path(path: &std::path::Path) -> Result<RawCsv> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv(f)
}

pub fn write_csv<W: Write>(t: &AnalyticTable, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(t.schema.names())?;
    for r in &t.rows {
        wtr.write_record(r.iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Parses raw cells by the schema's categories. Dimension and DESC columns
/// stay textual; NUM/STAT columns must be numeric.
pub fn typed_rows(schema: &Schema, raw: &RawCsv) -> Result<Vec<Vec<Value>>> {
    let idx: Vec<usize> = schema
        .attributes
        .iter()
        .map(|a| {
            raw.headers
                .iter()
                .position(|h| h == &a.name)
                .ok_or_else(|| Error::UnknownAttribute(a.name.clone()))
        })
        .collect::<Result<_>>()?;
    raw.rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.len() != raw.headers.len() {
                return Err(Error::Arity { row: i, got: r.len(), expected: raw.headers.len() });
            }
            idx.iter()
                .zip(&schema.attributes)
                .map(|(&j, a)| {
                    let numeric = !a.is_dimension() && a.category.is_numeric();
                    Value::parse_cell(&r[j], numeric).map_err(|message| Error::InvalidValue {
                        column: a.name.clone(),
                        row: i,
                        message,
                    })
                })
                .collect()
        })
        .collect()
}
