//! Aggregable properties: which functions may aggregate an attribute and
//! along which dimension attributes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{attr_set, fmt_set, lfd_holds, AnalyticTable, AttrSet, Category, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AggFn {
    #[serde(rename = "SUM")]
    Sum,
    #[serde(rename = "AVG")]
    Avg,
    #[serde(rename = "COUNT")]
    Count,
    #[serde(rename = "COUNTDISTINCT")]
    CountDistinct,
    #[serde(rename = "MIN")]
    Min,
    #[serde(rename = "MAX")]
    Max,
}

impl AggFn {
    pub const ALL: [AggFn; 6] =
        [AggFn::Sum, AggFn::Avg, AggFn::Count, AggFn::CountDistinct, AggFn::Min, AggFn::Max];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SUM" => Some(AggFn::Sum),
            "AVG" => Some(AggFn::Avg),
            "COUNT" => Some(AggFn::Count),
            "COUNTDISTINCT" | "COUNT_DISTINCT" => Some(AggFn::CountDistinct),
            "MIN" => Some(AggFn::Min),
            "MAX" => Some(AggFn::Max),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AggFn::Sum => "SUM",
            AggFn::Avg => "AVG",
            AggFn::Count => "COUNT",
            AggFn::CountDistinct => "COUNTDISTINCT",
            AggFn::Min => "MIN",
            AggFn::Max => "MAX",
        }
    }

    /// Unaffected by repeated input tuples.
    pub fn duplicate_insensitive(self) -> bool {
        matches!(self, AggFn::CountDistinct | AggFn::Min | AggFn::Max)
    }

    /// Null inputs change the result (they are counted).
    pub fn counts_nulls(self) -> bool {
        matches!(self, AggFn::Count | AggFn::CountDistinct)
    }
}

impl fmt::Display for AggFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn applicable_functions(c: Category) -> Vec<AggFn> {
    match c {
        Category::Num => AggFn::ALL.to_vec(),
        Category::Desc => vec![AggFn::Count, AggFn::CountDistinct],
        Category::Stat => vec![AggFn::Count, AggFn::CountDistinct, AggFn::Min, AggFn::Max],
    }
}

pub fn is_applicable(f: AggFn, c: Category) -> bool {
    applicable_functions(c).contains(&f)
}

pub fn codomain_category(f: AggFn, c: Category) -> Result<Category> {
    if !is_applicable(f, c) {
        return Err(Error::NotApplicable { func: f.to_string(), category: c.to_string() });
    }
    Ok(match f {
        AggFn::Count | AggFn::CountDistinct => Category::Num,
        AggFn::Avg => Category::Stat,
        AggFn::Sum | AggFn::Min | AggFn::Max => c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UserAction {
    MinimizeXd,
    CompleteXf,
    RecomputeXd,
}

impl fmt::Display for UserAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UserAction::MinimizeXd => "minimize x_d",
            UserAction::CompleteXf => "complete x_f",
            UserAction::RecomputeXd => "recompute x_d",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rule")]
pub enum Provenance {
    Declared,
    Defaulted,
    Propagated(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Declared => f.write_str("declared"),
            Provenance::Defaulted => f.write_str("default"),
            Provenance::Propagated(r) => write!(f, "propagated by {r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PropagationMode {
    #[serde(rename = "basic")]
    Basic,
    #[serde(rename = "sum")]
    Summarizable,
    #[serde(rename = "gsum")]
    GSummarizable,
}

impl PropagationMode {
    pub const ALL: [PropagationMode; 3] =
        [PropagationMode::Basic, PropagationMode::Summarizable, PropagationMode::GSummarizable];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basic" => Some(PropagationMode::Basic),
            "sum" | "summarizable" => Some(PropagationMode::Summarizable),
            "gsum" | "gsummarizable" => Some(PropagationMode::GSummarizable),
            _ => None,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            PropagationMode::Basic => "BASIC",
            PropagationMode::Summarizable => "SUM",
            PropagationMode::GSummarizable => "GSUM",
        }
    }
}

impl fmt::Display for PropagationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// ℙ_A(F, X) with its determinant and forbidden set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregableProperty {
    pub attribute: String,
    #[serde(rename = "fn")]
    pub func: AggFn,
    pub x: AttrSet,
    /// `None` for dimension attributes.
    pub x_d: Option<AttrSet>,
    pub x_f: AttrSet,
    pub pending: Vec<UserAction>,
    pub provenance: Provenance,
    /// Dimension attributes outside `x`, with the rule that excluded them.
    #[serde(default)]
    pub removed_by: BTreeMap<String, String>,
}

impl AggregableProperty {
    /// Grouping attributes any valid aggregation must include.
    pub fn required_grouping(&self, schema: &Schema) -> AttrSet {
        let mut req: AttrSet = schema.dims().difference(&self.x).cloned().collect();
        req.remove(&self.attribute);
        req
    }

    /// Validity gate: `(S_D − {A}) − X ⊆ groupby`.
    pub fn permits(&self, schema: &Schema, group_by: &AttrSet) -> bool {
        self.required_grouping(schema).is_subset(group_by)
    }

    pub(crate) fn with_pending(mut self, actions: &[UserAction]) -> Self {
        for a in actions {
            if !self.pending.contains(a) {
                self.pending.push(*a);
            }
        }
        self.pending.sort();
        self
    }
}

impl fmt::Display for AggregableProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P_{}({}, {})", self.attribute, self.func, fmt_set(&self.x))
    }
}

/// User-supplied determinant / forbidden set for one attribute.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyOverride {
    #[serde(default)]
    pub x_d: Option<AttrSet>,
    #[serde(default)]
    pub x_f: Option<AttrSet>,
}

/// Recomputes `removed_by` and enforces `X ⊆ S_D − X_f`.
pub(crate) fn finish(
    mut p: AggregableProperty,
    schema: &Schema,
    prior: Option<&AggregableProperty>,
    rule: &str,
) -> AggregableProperty {
    let dims = schema.dims();
    p.x = p.x.intersection(&dims).filter(|a| !p.x_f.contains(*a) && **a != p.attribute).cloned().collect();
    let mut removed = BTreeMap::new();
    for a in dims.iter().filter(|a| !p.x.contains(*a) && **a != p.attribute) {
        let why = if p.x_f.contains(a) {
            "forbidden".to_string()
        } else if let Some(old) = prior.and_then(|o| (!o.x.contains(a)).then(|| o.removed_by.get(a)).flatten()) {
            old.clone()
        } else {
            rule.to_string()
        };
        removed.insert(a.clone(), why);
    }
    p.removed_by = removed;
    p
}

/// Default and declared properties of a base table.
pub fn default_properties(
    t: &AnalyticTable,
    overrides: &BTreeMap<String, PropertyOverride>,
) -> Result<Vec<AggregableProperty>> {
    for name in overrides.keys() {
        t.schema.attr(name)?;
    }
    let dims = t.schema.dims();
    let fact_id = t.schema.fact_identifier();
    let mut out = Vec::new();
    for a in &t.schema.attributes {
        let ov = overrides.get(&a.name).cloned().unwrap_or_default();
        if let Some(xf) = &ov.x_f {
            for b in xf {
                if !t.schema.is_dimension(b) {
                    return Err(Error::NonDimensionGrouping(b.clone()));
                }
            }
        }
        let x_f = ov.x_f.clone().unwrap_or_default();
        let mut pending = Vec::new();
        if ov.x_f.is_none() {
            pending.push(UserAction::CompleteXf);
        }
        let declared = ov.x_d.is_some() || ov.x_f.is_some();
        let provenance = if declared { Provenance::Declared } else { Provenance::Defaulted };
        if a.is_dimension() {
            if ov.x_d.is_some() {
                return Err(Error::InvalidSchema(format!("x_d is not defined for dimension attribute `{}`", a.name)));
            }
            let mut x = dims.clone();
            x.remove(&a.name);
            for f in applicable_functions(Category::Desc) {
                let p = AggregableProperty {
                    attribute: a.name.clone(),
                    func: f,
                    x: x.clone(),
                    x_d: None,
                    x_f: x_f.clone(),
                    pending: Vec::new(),
                    provenance: provenance.clone(),
                    removed_by: BTreeMap::new(),
                }
                .with_pending(&pending);
                out.push(finish(p, &t.schema, None, "default"));
            }
        } else {
            let x_d = match &ov.x_d {
                Some(xd) => {
                    for b in xd {
                        if !t.schema.is_dimension(b) {
                            return Err(Error::NonDimensionGrouping(b.clone()));
                        }
                    }
                    if !lfd_holds(t, xd, &attr_set([a.name.clone()]))? {
                        return Err(Error::InvalidDeterminant { attribute: a.name.clone(), x_d: fmt_set(xd) });
                    }
                    xd.clone()
                }
                None => {
                    pending.push(UserAction::MinimizeXd);
                    fact_id.clone()
                }
            };
            let x = t.schema.closure(&x_d)?;
            for f in applicable_functions(a.category) {
                let p = AggregableProperty {
                    attribute: a.name.clone(),
                    func: f,
                    x: x.clone(),
                    x_d: Some(x_d.clone()),
                    x_f: x_f.clone(),
                    pending: Vec::new(),
                    provenance: provenance.clone(),
                    removed_by: BTreeMap::new(),
                }
                .with_pending(&pending);
                out.push(finish(p, &t.schema, None, "not determined by x_d"));
            }
        }
    }
    Ok(out)
}

/// Does some property of `attr` for `func` admit grouping by `group_by`?
pub fn allows(t: &AnalyticTable, func: AggFn, attr: &str, group_by: &AttrSet) -> bool {
    t.properties.iter().any(|p| p.attribute == attr && p.func == func && p.permits(&t.schema, group_by))
}
