//! Operators over analytic tables: filter, projection, aggregation, pivot,
//! merges and set operations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fmt_set, AnalyticTable, AttrSet, AttributeDef, Category, DimensionEntry, Schema};
use crate::property::{codomain_category, is_applicable, AggFn};
use crate::value::{checked_div, compare, literal_eq, tuple_key, Value, MAX_SCALE, NULL_TOKEN};

/// A literal as written in a query. Textual cells compare against the
/// lexeme, numeric cells against the parsed number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constant {
    pub lexeme: String,
    #[serde(default)]
    pub quoted: bool,
}

impl Constant {
    pub fn new(lexeme: impl Into<String>, quoted: bool) -> Self {
        Constant { lexeme: lexeme.into(), quoted }
    }

    pub fn null() -> Self {
        Constant::new(NULL_TOKEN, false)
    }

    pub fn is_null(&self) -> bool {
        !self.quoted && self.lexeme == NULL_TOKEN
    }

    /// The constant as seen by a cell of the given kind.
    pub fn against(&self, cell: &Value) -> Value {
        if self.is_null() {
            return Value::Null;
        }
        match cell {
            Value::Number(_) => Value::number(&self.lexeme).unwrap_or_else(|| Value::text(&self.lexeme)),
            _ => Value::text(&self.lexeme),
        }
    }
}

impl fmt::Display for Constant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.quoted {
            write!(f, "'{}'", self.lexeme.replace('\'', "''"))
        } else {
            f.write_str(&self.lexeme)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Operand {
    Attr(String),
    Const(Constant),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Attr(a) => f.write_str(a),
            Operand::Const(c) => c.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    /// Literal equality: null IS null holds.
    #[serde(rename = "IS")]
    Is,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Is => "IS",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Predicate {
    Cmp { left: Operand, cmp: CmpOp, right: Operand },
    Not { arg: Box<Predicate> },
    And { left: Box<Predicate>, right: Box<Predicate> },
    Or { left: Box<Predicate>, right: Box<Predicate> },
}

impl Predicate {
    pub fn cmp(attr: &str, cmp: CmpOp, c: Constant) -> Self {
        Predicate::Cmp { left: Operand::Attr(attr.to_string()), cmp, right: Operand::Const(c) }
    }

    pub fn and(self, other: Predicate) -> Self {
        Predicate::And { left: Box::new(self), right: Box::new(other) }
    }

    pub fn attributes(&self) -> AttrSet {
        let mut out = AttrSet::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut AttrSet) {
        match self {
            Predicate::Cmp { left, right, .. } => {
                for o in [left, right] {
                    if let Operand::Attr(a) = o {
                        out.insert(a.clone());
                    }
                }
            }
            Predicate::Not { arg } => arg.collect(out),
            Predicate::And { left, right } | Predicate::Or { left, right } => {
                left.collect(out);
                right.collect(out);
            }
        }
    }

    fn eval(&self, schema: &Schema, row: &[Value]) -> Result<bool> {
        match self {
            Predicate::Cmp { left, cmp, right } => {
                let lv = operand_value(schema, row, left, right)?;
                let rv = operand_value(schema, row, right, left)?;
                Ok(match cmp {
                    CmpOp::Is => literal_eq(&lv, &rv),
                    _ => match compare(&lv, &rv) {
                        None => false,
                        Some(o) => match cmp {
                            CmpOp::Eq => o.is_eq(),
                            CmpOp::Ne => o.is_ne(),
                            CmpOp::Lt => o.is_lt(),
                            CmpOp::Le => o.is_le(),
                            CmpOp::Gt => o.is_gt(),
                            CmpOp::Ge => o.is_ge(),
                            CmpOp::Is => unreachable!(),
                        },
                    },
                })
            }
            Predicate::Not { arg } => Ok(!arg.eval(schema, row)?),
            Predicate::And { left, right } => Ok(left.eval(schema, row)? && right.eval(schema, row)?),
            Predicate::Or { left, right } => Ok(left.eval(schema, row)? || right.eval(schema, row)?),
        }
    }
}

fn operand_value(schema: &Schema, row: &[Value], o: &Operand, other: &Operand) -> Result<Value> {
    match o {
        Operand::Attr(a) => Ok(row[schema.index_of(a)?].clone()),
        Operand::Const(c) => {
            let peer = match other {
                Operand::Attr(a) => row[schema.index_of(a)?].clone(),
                Operand::Const(_) => Value::Null,
            };
            Ok(c.against(&peer))
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Cmp { left, cmp, right } => write!(f, "{left} {cmp} {right}"),
            Predicate::Not { arg } => write!(f, "NOT ({arg})"),
            Predicate::And { left, right } => write!(f, "({left} AND {right})"),
            Predicate::Or { left, right } => write!(f, "({left} OR {right})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
    #[serde(rename = "*")]
    Mul,
    #[serde(rename = "/")]
    Div,
}

impl fmt::Display for BinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        })
    }
}

/// Arithmetic over measures. Any null operand yields null, as does a
/// division by zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Expr {
    Attr { name: String },
    Num { value: Decimal },
    Neg { arg: Box<Expr> },
    Bin { left: Box<Expr>, op: BinOp, right: Box<Expr> },
}

impl Expr {
    pub fn attributes(&self) -> AttrSet {
        let mut out = AttrSet::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut AttrSet) {
        match self {
            Expr::Attr { name } => {
                out.insert(name.clone());
            }
            Expr::Num { .. } => {}
            Expr::Neg { arg } => arg.collect(out),
            Expr::Bin { left, right, .. } => {
                left.collect(out);
                right.collect(out);
            }
        }
    }

    fn eval(&self, schema: &Schema, row: &[Value]) -> Result<Value> {
        Ok(match self {
            Expr::Attr { name } => match &row[schema.index_of(name)?] {
                Value::Text(s) => {
                    return Err(Error::Expression(format!("`{name}` holds non-numeric value `{s}`")))
                }
                v => v.clone(),
            },
            Expr::Num { value } => Value::Number(*value),
            Expr::Neg { arg } => match arg.eval(schema, row)? {
                Value::Number(d) => Value::Number(-d),
                _ => Value::Null,
            },
            Expr::Bin { left, op, right } => {
                let (l, r) = match (left.eval(schema, row)?, right.eval(schema, row)?) {
                    (Value::Number(l), Value::Number(r)) => (l, r),
                    _ => return Ok(Value::Null),
                };
                let v = match op {
                    BinOp::Add => l.checked_add(r),
                    BinOp::Sub => l.checked_sub(r),
                    BinOp::Mul => l.checked_mul(r).map(|d| d.round_dp(MAX_SCALE)),
                    BinOp::Div => checked_div(l, r),
                };
                v.map(|d| Value::Number(d.normalize())).unwrap_or(Value::Null)
            }
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Attr { name } => f.write_str(name),
            Expr::Num { value } => write!(f, "{}", value.normalize()),
            Expr::Neg { arg } => write!(f, "-{arg}"),
            Expr::Bin { left, op, right } => write!(f, "({left} {op} {right})"),
        }
    }
}

/// A derived measure computed by a projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calc {
    pub expr: Expr,
    pub name: String,
    #[serde(default)]
    pub category: Option<Category>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeKind {
    Left,
    Right,
    Full,
    Strict,
}

impl MergeKind {
    pub fn keeps_left(self) -> bool {
        matches!(self, MergeKind::Left | MergeKind::Full)
    }

    pub fn keeps_right(self) -> bool {
        matches!(self, MergeKind::Right | MergeKind::Full)
    }

    pub fn keyword(self) -> &'static str {
        match self {
            MergeKind::Left => "LEFT",
            MergeKind::Right => "RIGHT",
            MergeKind::Full => "FULL",
            MergeKind::Strict => "STRICT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum QuerySpec {
    Filter {
        predicate: Predicate,
    },
    Project {
        keep: Vec<String>,
        #[serde(default)]
        calc: Vec<Calc>,
    },
    Aggregate {
        func: AggFn,
        attribute: String,
        group_by: AttrSet,
        #[serde(default)]
        alias: Option<String>,
    },
    Pivot {
        attribute: String,
        over: AttrSet,
    },
    Merge {
        kind: MergeKind,
        #[serde(default)]
        on: Option<AttrSet>,
    },
    Union,
    Difference,
}

impl QuerySpec {
    pub fn arity(&self) -> usize {
        match self {
            QuerySpec::Merge { .. } | QuerySpec::Union | QuerySpec::Difference => 2,
            _ => 1,
        }
    }

    pub fn operator(&self) -> &'static str {
        match self {
            QuerySpec::Filter { .. } => "filter",
            QuerySpec::Project { .. } => "project",
            QuerySpec::Aggregate { .. } => "aggregate",
            QuerySpec::Pivot { .. } => "pivot",
            QuerySpec::Merge { .. } => "merge",
            QuerySpec::Union => "union",
            QuerySpec::Difference => "difference",
        }
    }
}

/// Output column name of an aggregation.
pub fn aggregate_name(func: AggFn, attribute: &str, alias: Option<&str>) -> String {
    alias.map(str::to_string).unwrap_or_else(|| format!("{func}({attribute})"))
}

pub fn execute(spec: &QuerySpec, inputs: &[&AnalyticTable], name: &str) -> Result<AnalyticTable> {
    if inputs.len() != spec.arity() {
        return Err(Error::SchemaMismatch(format!(
            "{} expects {} input table(s), got {}",
            spec.operator(),
            spec.arity(),
            inputs.len()
        )));
    }
    let t = inputs[0];
    match spec {
        QuerySpec::Filter { predicate } => filter(t, predicate, name),
        QuerySpec::Project { keep, calc } => project(t, keep, calc, name),
        QuerySpec::Aggregate { func, attribute, group_by, alias } => {
            aggregate(t, *func, attribute, group_by, alias.as_deref(), name)
        }
        QuerySpec::Pivot { attribute, over } => pivot(t, attribute, over, name),
        QuerySpec::Merge { kind, on } => merge(t, inputs[1], *kind, on.as_ref(), name),
        QuerySpec::Union => union(t, inputs[1], name),
        QuerySpec::Difference => difference(t, inputs[1], name),
    }
}

pub fn filter(t: &AnalyticTable, p: &Predicate, name: &str) -> Result<AnalyticTable> {
    t.schema.check_known(&p.attributes())?;
    let mut rows = Vec::new();
    for r in &t.rows {
        if p.eval(&t.schema, r)? {
            rows.push(r.clone());
        }
    }
    Ok(AnalyticTable::derived(name, t.schema.clone(), rows))
}

/// Restricts the dimension entries of `schema` to the attributes kept.
fn restrict_dimensions(dims: &[DimensionEntry], keep: &AttrSet) -> Vec<DimensionEntry> {
    dims.iter()
        .filter_map(|d| {
            let members: BTreeMap<String, String> =
                d.members.iter().filter(|(a, _)| keep.contains(*a)).map(|(a, n)| (a.clone(), n.clone())).collect();
            (!members.is_empty()).then(|| DimensionEntry { name: d.name.clone(), graph: d.graph.clone(), members })
        })
        .collect()
}

pub fn project(t: &AnalyticTable, keep: &[String], calc: &[Calc], name: &str) -> Result<AnalyticTable> {
    let keep_set: AttrSet = keep.iter().cloned().collect();
    t.schema.check_known(&keep_set)?;
    if keep_set.len() != keep.len() {
        let dup = keep.iter().find(|a| keep.iter().filter(|b| b == a).count() > 1).unwrap();
        return Err(Error::DuplicateAttribute(dup.clone()));
    }
    for d in t.schema.dimension_names() {
        if !keep_set.contains(&d) {
            return Err(Error::MissingDimensionAttribute(d));
        }
    }
    let mut attrs: Vec<AttributeDef> = Vec::new();
    let mut idx = Vec::new();
    for a in &t.schema.attributes {
        if keep_set.contains(&a.name) {
            attrs.push(a.clone());
            idx.push(t.schema.index_of(&a.name)?);
        }
    }
    for c in calc {
        for a in c.expr.attributes() {
            let def = t.schema.attr(&a)?;
            if def.is_dimension() || !def.category.is_numeric() {
                return Err(Error::Expression(format!("`{a}` is not a numeric measure")));
            }
        }
        if attrs.iter().any(|a| a.name == c.name) {
            return Err(Error::NameCollision(c.name.clone()));
        }
        attrs.push(AttributeDef::measure(c.name.clone(), c.category.unwrap_or(Category::Num)));
    }
    let mut rows = Vec::with_capacity(t.rows.len());
    for r in &t.rows {
        let mut out: Vec<Value> = idx.iter().map(|&j| r[j].clone()).collect();
        for c in calc {
            out.push(c.expr.eval(&t.schema, r)?);
        }
        rows.push(out);
    }
    let schema = Schema::new(attrs, t.schema.dimensions.clone())?;
    Ok(AnalyticTable::derived(name, schema, rows))
}

fn check_grouping(schema: &Schema, y: &AttrSet) -> Result<()> {
    for a in y {
        if !schema.has(a) {
            return Err(Error::UnknownAttribute(a.clone()));
        }
        if !schema.is_dimension(a) {
            return Err(Error::NonDimensionGrouping(a.clone()));
        }
    }
    Ok(())
}

/// Applies one aggregation function to a group of values.
pub fn aggregate_values(func: AggFn, vals: &[&Value]) -> Value {
    let present = || vals.iter().filter(|v| !v.is_null());
    match func {
        AggFn::Count => Value::Number(Decimal::from(vals.len())),
        AggFn::CountDistinct => {
            let distinct: BTreeSet<Value> = vals.iter().map(|v| crate::value::key_of(v)).collect();
            Value::Number(Decimal::from(distinct.len()))
        }
        AggFn::Sum => {
            let nums: Vec<Decimal> = present().filter_map(|v| v.as_decimal()).collect();
            if nums.is_empty() {
                Value::Null
            } else {
                Value::Number(nums.iter().sum::<Decimal>().normalize())
            }
        }
        AggFn::Avg => {
            let nums: Vec<Decimal> = present().filter_map(|v| v.as_decimal()).collect();
            if nums.is_empty() {
                Value::Null
            } else {
                let s: Decimal = nums.iter().sum();
                checked_div(s, Decimal::from(nums.len())).map(Value::Number).unwrap_or(Value::Null)
            }
        }
        AggFn::Min | AggFn::Max => {
            let mut best: Option<&Value> = None;
            for v in present() {
                best = match best {
                    None => Some(v),
                    Some(b) => {
                        let o = compare(v, b).unwrap_or_else(|| (*v).cmp(b));
                        let better = if func == AggFn::Min { o.is_lt() } else { o.is_gt() };
                        Some(if better { v } else { b })
                    }
                };
            }
            best.cloned().unwrap_or(Value::Null)
        }
    }
}

/// Groups rows on `y` in first-appearance order.
fn group_rows<'a>(t: &'a AnalyticTable, y_idx: &[usize]) -> Vec<(Vec<Value>, Vec<&'a Vec<Value>>)> {
    let mut order: Vec<(Vec<Value>, Vec<&Vec<Value>>)> = Vec::new();
    let mut pos: HashMap<Vec<Value>, usize> = HashMap::new();
    for r in &t.rows {
        let key: Vec<Value> = y_idx.iter().map(|&j| r[j].clone()).collect();
        let k = tuple_key(&key);
        match pos.get(&k) {
            Some(&i) => order[i].1.push(r),
            None => {
                pos.insert(k, order.len());
                order.push((key, vec![r]));
            }
        }
    }
    order
}

pub fn aggregate(
    t: &AnalyticTable,
    func: AggFn,
    attribute: &str,
    group_by: &AttrSet,
    alias: Option<&str>,
    name: &str,
) -> Result<AnalyticTable> {
    let a = t.schema.attr(attribute)?;
    check_grouping(&t.schema, group_by)?;
    let cat = codomain_category(func, a.category)?;
    let out_name = aggregate_name(func, attribute, alias);
    if group_by.contains(&out_name) {
        return Err(Error::NameCollision(out_name));
    }
    let y_names: Vec<String> = t.schema.dimension_names().into_iter().filter(|d| group_by.contains(d)).collect();
    let y_idx: Vec<usize> = y_names.iter().map(|n| t.schema.index_of(n)).collect::<Result<_>>()?;
    let aj = t.schema.index_of(attribute)?;
    let mut rows = Vec::new();
    for (key, group) in group_rows(t, &y_idx) {
        let vals: Vec<&Value> = group.iter().map(|r| &r[aj]).collect();
        let mut row = key;
        row.push(aggregate_values(func, &vals));
        rows.push(row);
    }
    let mut attrs: Vec<AttributeDef> = y_names.iter().map(|n| t.schema.attr(n).cloned()).collect::<Result<_>>()?;
    attrs.push(AttributeDef::measure(out_name, cat));
    let schema = Schema::new(attrs, restrict_dimensions(&t.schema.dimensions, group_by))?;
    Ok(AnalyticTable::derived(name, schema, rows))
}

/// Column name for a pivot value combination: `A_v1_v2`, whitespace
/// removed, nulls written `NULL`.
pub fn pivot_column_name(attribute: &str, values: &[Value]) -> String {
    let parts: Vec<String> = values
        .iter()
        .map(|v| match v {
            Value::Null => "NULL".to_string(),
            v => v.to_string().chars().filter(|c| !c.is_whitespace()).collect(),
        })
        .collect();
    format!("{attribute}_{}", parts.join("_"))
}

pub fn pivot(t: &AnalyticTable, attribute: &str, over: &AttrSet, name: &str) -> Result<AnalyticTable> {
    let a = t.schema.attr(attribute)?;
    if a.is_dimension() {
        return Err(Error::NotAMeasure(attribute.to_string()));
    }
    check_grouping(&t.schema, over)?;
    if over.is_empty() {
        return Err(Error::InvalidSchema("pivot needs at least one attribute".into()));
    }
    let residual: Vec<String> = t.schema.dimension_names().into_iter().filter(|d| !over.contains(d)).collect();
    let measures: Vec<String> = t.schema.measure_names().into_iter().filter(|m| m != attribute).collect();
    let y_names: Vec<String> = t.schema.dimension_names().into_iter().filter(|d| over.contains(d)).collect();
    let r_idx: Vec<usize> = residual.iter().map(|n| t.schema.index_of(n)).collect::<Result<_>>()?;
    let m_idx: Vec<usize> = measures.iter().map(|n| t.schema.index_of(n)).collect::<Result<_>>()?;
    let y_idx: Vec<usize> = y_names.iter().map(|n| t.schema.index_of(n)).collect::<Result<_>>()?;
    let aj = t.schema.index_of(attribute)?;

    let pivots = t.distinct_projection(&y_names)?;
    let mut columns: Vec<String> = Vec::new();
    let mut col_of: HashMap<Vec<Value>, usize> = HashMap::new();
    for v in &pivots {
        let c = pivot_column_name(attribute, v);
        if t.schema.has(&c) || columns.contains(&c) {
            return Err(Error::NameCollision(c));
        }
        col_of.insert(tuple_key(v), columns.len());
        columns.push(c);
    }

    let mut rows: Vec<Vec<Value>> = Vec::new();
    let mut filled: Vec<Vec<bool>> = Vec::new();
    let mut pos: HashMap<Vec<Value>, usize> = HashMap::new();
    for r in &t.rows {
        let key: Vec<Value> = r_idx.iter().map(|&j| r[j].clone()).collect();
        let k = tuple_key(&key);
        let i = match pos.get(&k) {
            Some(&i) => {
                for (n, &j) in m_idx.iter().enumerate() {
                    if !literal_eq(&rows[i][residual.len() + n], &r[j]) {
                        return Err(Error::AmbiguousPivotCell { column: measures[n].clone() });
                    }
                }
                i
            }
            None => {
                let mut row = key;
                row.extend(m_idx.iter().map(|&j| r[j].clone()));
                row.extend(std::iter::repeat_n(Value::Null, columns.len()));
                pos.insert(k, rows.len());
                rows.push(row);
                filled.push(vec![false; columns.len()]);
                rows.len() - 1
            }
        };
        let yk = tuple_key(&y_idx.iter().map(|&j| r[j].clone()).collect::<Vec<_>>());
        let c = col_of[&yk];
        if filled[i][c] {
            return Err(Error::AmbiguousPivotCell { column: columns[c].clone() });
        }
        filled[i][c] = true;
        rows[i][residual.len() + measures.len() + c] = r[aj].clone();
    }

    let mut attrs: Vec<AttributeDef> = Vec::new();
    for n in residual.iter().chain(&measures) {
        attrs.push(t.schema.attr(n)?.clone());
    }
    for c in &columns {
        attrs.push(AttributeDef::measure(c.clone(), a.category));
    }
    let keep: AttrSet = residual.iter().cloned().collect();
    let schema = Schema::new(attrs, restrict_dimensions(&t.schema.dimensions, &keep))?;
    Ok(AnalyticTable::derived(name, schema, rows))
}

/// How the attributes of the two merge inputs map into the result.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeLayout {
    /// Join attributes, named as in the inputs.
    pub y: AttrSet,
    /// True when the join attributes are shared; false for a disjoint union
    /// of schemas with renamed copies.
    pub shared: bool,
    pub left_map: BTreeMap<String, String>,
    pub right_map: BTreeMap<String, String>,
}

impl MergeLayout {
    pub fn map_of(&self, left_side: bool) -> &BTreeMap<String, String> {
        if left_side {
            &self.left_map
        } else {
            &self.right_map
        }
    }
}

fn labelled_compatible(left: &Schema, right: &Schema, y: &AttrSet) -> bool {
    for d1 in &left.dimensions {
        for d2 in &right.dimensions {
            if d1.name == d2.name {
                continue;
            }
            let common: AttrSet =
                y.iter().filter(|a| d1.members.contains_key(*a) && d2.members.contains_key(*a)).cloned().collect();
            if common.is_empty() {
                continue;
            }
            if common.iter().any(|a| d1.node_of(a) != Some(a.as_str()) || d2.node_of(a) != Some(a.as_str())) {
                return false;
            }
            if !crate::graph::same_labelled_paths(&d1.graph, &d2.graph, &common) {
                return false;
            }
        }
    }
    true
}

pub fn merge_layout(left: &Schema, right: &Schema, on: Option<&AttrSet>) -> Result<MergeLayout> {
    let common: AttrSet = left.dims().intersection(&right.dims()).cloned().collect();
    let y = match on {
        Some(on) => {
            for a in on {
                for s in [left, right] {
                    if !s.has(a) {
                        return Err(Error::UnknownAttribute(a.clone()));
                    }
                    if !s.is_dimension(a) {
                        return Err(Error::NonDimensionGrouping(a.clone()));
                    }
                }
            }
            on.clone()
        }
        None => common,
    };
    if y.is_empty() {
        return Err(Error::NoCommonDimensionAttributes);
    }
    let shared = labelled_compatible(left, right, &y);
    let right_names: AttrSet = right.names().into_iter().collect();
    let left_names: AttrSet = left.names().into_iter().collect();
    let clash = |a: &String, other: &AttrSet| other.contains(a) && !(shared && y.contains(a));
    let left_map = left
        .names()
        .into_iter()
        .map(|a| {
            let to = if clash(&a, &right_names) { format!("{a}@left") } else { a.clone() };
            (a, to)
        })
        .collect::<BTreeMap<_, _>>();
    let right_map = right
        .names()
        .into_iter()
        .map(|a| {
            let to = if clash(&a, &left_names) { format!("{a}@right") } else { a.clone() };
            (a, to)
        })
        .collect::<BTreeMap<_, _>>();
    let mut seen = BTreeSet::new();
    for (a, to) in left_map.iter().chain(right_map.iter()) {
        let joined = shared && y.contains(a) && to == a;
        if !seen.insert(to.clone()) && !joined {
            return Err(Error::NameCollision(to.clone()));
        }
        if to != a && (left_names.contains(to) || right_names.contains(to)) {
            return Err(Error::NameCollision(to.clone()));
        }
    }
    Ok(MergeLayout { y, shared, left_map, right_map })
}

fn rename_entries(dims: &[DimensionEntry], map: &BTreeMap<String, String>) -> Vec<DimensionEntry> {
    dims.iter()
        .map(|d| DimensionEntry {
            name: d.name.clone(),
            graph: d.graph.clone(),
            members: d.members.iter().map(|(a, n)| (map[a].clone(), n.clone())).collect(),
        })
        .collect()
}

/// Row keys of `t` on `y` in schema order of `y`.
fn keys_on(t: &AnalyticTable, y: &[String]) -> Result<Vec<Vec<Value>>> {
    let idx: Vec<usize> = y.iter().map(|n| t.schema.index_of(n)).collect::<Result<_>>()?;
    Ok(t.rows.iter().map(|r| tuple_key(&idx.iter().map(|&j| r[j].clone()).collect::<Vec<_>>())).collect())
}

pub fn merge(
    left: &AnalyticTable,
    right: &AnalyticTable,
    kind: MergeKind,
    on: Option<&AttrSet>,
    name: &str,
) -> Result<AnalyticTable> {
    let layout = merge_layout(&left.schema, &right.schema, on)?;
    let y: Vec<String> = left.schema.dimension_names().into_iter().filter(|a| layout.y.contains(a)).collect();
    let joined = |a: &str| layout.shared && layout.y.contains(a);

    let mut attrs: Vec<AttributeDef> = Vec::new();
    for a in &left.schema.attributes {
        attrs.push(AttributeDef { name: layout.left_map[&a.name].clone(), ..a.clone() });
    }
    let right_cols: Vec<usize> = (0..right.schema.len()).filter(|&j| !joined(&right.schema.attributes[j].name)).collect();
    for &j in &right_cols {
        let a = &right.schema.attributes[j];
        attrs.push(AttributeDef { name: layout.right_map[&a.name].clone(), ..a.clone() });
    }

    let mut dims = rename_entries(&left.schema.dimensions, &layout.left_map);
    for d in rename_entries(&right.schema.dimensions, &layout.right_map) {
        match dims.iter_mut().find(|e| e.name == d.name) {
            Some(e) if layout.shared => e.members.extend(d.members),
            Some(_) => dims.push(DimensionEntry { name: format!("{}@right", d.name), ..d }),
            None => dims.push(d),
        }
    }
    let schema = Schema::new(attrs, dims)?;

    let lk = keys_on(left, &y)?;
    let rk = keys_on(right, &y)?;
    let mut by_key: HashMap<&Vec<Value>, Vec<usize>> = HashMap::new();
    for (i, k) in rk.iter().enumerate() {
        by_key.entry(k).or_default().push(i);
    }
    let ly_idx: Vec<usize> = y.iter().map(|n| left.schema.index_of(n)).collect::<Result<_>>()?;
    let ry_idx: Vec<usize> = y.iter().map(|n| right.schema.index_of(n)).collect::<Result<_>>()?;
    let mut matched_right = vec![false; right.rows.len()];
    let mut rows = Vec::new();
    for (i, l) in left.rows.iter().enumerate() {
        match by_key.get(&lk[i]) {
            Some(ms) => {
                for &m in ms {
                    matched_right[m] = true;
                    let mut row = l.clone();
                    row.extend(right_cols.iter().map(|&j| right.rows[m][j].clone()));
                    rows.push(row);
                }
            }
            None if kind.keeps_left() => {
                let mut row = l.clone();
                row.extend(right_cols.iter().map(|_| Value::Null));
                rows.push(row);
            }
            None => {}
        }
    }
    if kind.keeps_right() {
        for (m, r) in right.rows.iter().enumerate() {
            if matched_right[m] {
                continue;
            }
            let mut row = vec![Value::Null; left.schema.len()];
            if layout.shared {
                for (&lj, &rj) in ly_idx.iter().zip(&ry_idx) {
                    row[lj] = r[rj].clone();
                }
            }
            row.extend(right_cols.iter().map(|&j| r[j].clone()));
            rows.push(row);
        }
    }
    Ok(AnalyticTable::derived(name, schema, dedup(rows)))
}

fn dedup(rows: Vec<Vec<Value>>) -> Vec<Vec<Value>> {
    let mut seen = BTreeSet::new();
    rows.into_iter().filter(|r| seen.insert(tuple_key(r))).collect()
}

/// Reorders `right`'s columns to `left`'s schema, after checking that both
/// schemas carry the same attributes with the same roles.
fn aligned_rows(left: &AnalyticTable, right: &AnalyticTable) -> Result<Vec<Vec<Value>>> {
    let mut a = left.schema.names();
    let mut b = right.schema.names();
    a.sort();
    b.sort();
    if a != b {
        return Err(Error::SchemaMismatch(format!("{:?} vs {:?}", left.schema.names(), right.schema.names())));
    }
    for x in &left.schema.attributes {
        let y = right.schema.attr(&x.name)?;
        if x.is_dimension() != y.is_dimension() {
            return Err(Error::SchemaMismatch(format!("`{}` is a dimension attribute on one side only", x.name)));
        }
        if x.category != y.category {
            return Err(Error::SchemaMismatch(format!("`{}` has categories {} and {}", x.name, x.category, y.category)));
        }
    }
    let idx: Vec<usize> = left.schema.names().iter().map(|n| right.schema.index_of(n)).collect::<Result<_>>()?;
    Ok(right.rows.iter().map(|r| idx.iter().map(|&j| r[j].clone()).collect()).collect())
}

fn merged_schema(left: &Schema, right: &Schema) -> Schema {
    let mut s = left.clone();
    for d in &right.dimensions {
        match s.dimensions.iter_mut().find(|e| e.name == d.name) {
            Some(e) => e.members.extend(d.members.clone()),
            None => s.dimensions.push(d.clone()),
        }
    }
    for a in s.attributes.iter_mut() {
        if let Ok(b) = right.attr(&a.name) {
            a.nullable |= b.nullable;
        }
    }
    s
}

/// Set union; the inputs must not share a dimension tuple.
pub fn union(left: &AnalyticTable, right: &AnalyticTable, name: &str) -> Result<AnalyticTable> {
    let rrows = aligned_rows(left, right)?;
    let d_idx: Vec<usize> =
        left.schema.dimension_names().iter().map(|n| left.schema.index_of(n)).collect::<Result<_>>()?;
    let proj = |r: &Vec<Value>| tuple_key(&d_idx.iter().map(|&j| r[j].clone()).collect::<Vec<_>>());
    let lkeys: BTreeSet<Vec<Value>> = left.rows.iter().map(proj).collect();
    let overlap: BTreeSet<Vec<Value>> = rrows.iter().map(proj).filter(|k| lkeys.contains(k)).collect();
    if !overlap.is_empty() {
        let shown: Vec<String> = overlap
            .iter()
            .map(|k| format!("({})", k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")))
            .collect();
        return Err(Error::UnionDimensionOverlap(shown.join(", ")));
    }
    let rows = dedup(left.rows.iter().cloned().chain(rrows).collect());
    Ok(AnalyticTable::derived(name, merged_schema(&left.schema, &right.schema), rows))
}

pub fn difference(left: &AnalyticTable, right: &AnalyticTable, name: &str) -> Result<AnalyticTable> {
    let rrows = aligned_rows(left, right)?;
    let rkeys: BTreeSet<Vec<Value>> = rrows.iter().map(|r| tuple_key(r)).collect();
    let rows = dedup(left.rows.iter().filter(|r| !rkeys.contains(&tuple_key(r))).cloned().collect());
    Ok(AnalyticTable::derived(name, merged_schema(&left.schema, &right.schema), rows))
}

/// Ensures every function named in a query is applicable, for error
/// reporting before execution.
pub fn check_applicable(t: &AnalyticTable, func: AggFn, attribute: &str) -> Result<()> {
    let a = t.schema.attr(attribute)?;
    if !is_applicable(func, a.category) {
        return Err(Error::NotApplicable { func: func.to_string(), category: a.category.to_string() });
    }
    Ok(())
}

pub fn describe(spec: &QuerySpec) -> String {
    match spec {
        QuerySpec::Filter { predicate } => format!("filter {predicate}"),
        QuerySpec::Project { keep, calc } => {
            let mut s = format!("project {{{}}}", keep.join(", "));
            for c in calc {
                s.push_str(&format!(" calc {} as {}", c.expr, c.name));
            }
            s
        }
        QuerySpec::Aggregate { func, attribute, group_by, .. } => {
            format!("aggregate {func}({attribute}) by {}", fmt_set(group_by))
        }
        QuerySpec::Pivot { attribute, over } => format!("pivot {attribute} over {}", fmt_set(over)),
        QuerySpec::Merge { kind, on } => match on {
            Some(on) => format!("{} merge on {}", kind.keyword().to_lowercase(), fmt_set(on)),
            None => format!("{} merge", kind.keyword().to_lowercase()),
        },
        QuerySpec::Union => "union".into(),
        QuerySpec::Difference => "difference".into(),
    }
}
