#![allow(dead_code)]

pub mod criteria;
pub mod random;

use std::collections::BTreeMap;
use std::path::PathBuf;

use summar_guard_core::graph::Hierarchy;
use summar_guard_core::model::{attr_set, read_csv_path, AnalyticTable, Category, RawCsv};
use summar_guard_core::property::{PropagationMode, PropertyOverride};
use summar_guard_core::session::{Binding, Session};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn raw(name: &str) -> RawCsv {
    read_csv_path(&fixture(name)).unwrap()
}

pub fn bind(dim: &str, attrs: &[&str]) -> Binding {
    Binding { dimension: dim.into(), attributes: attrs.iter().map(|s| s.to_string()).collect() }
}

pub fn ov(x_d: &[&str], x_f: &[&str]) -> PropertyOverride {
    PropertyOverride { x_d: Some(attr_set(x_d.iter().copied())), x_f: Some(attr_set(x_f.iter().copied())) }
}

pub fn region(s: &mut Session) {
    s.add_dimension("REGION", &raw("region.csv"), &Hierarchy::chain(&["City", "State", "Country", "Region"])).unwrap();
}

/// DEM with Pop determined by city and year, forbidden along Year.
pub fn dem(s: &mut Session) {
    let ovs = BTreeMap::from([("Pop".to_string(), ov(&["City", "State", "Country", "Year"], &["Year"]))]);
    s.add_fact(
        "DEM",
        &raw("dem.csv"),
        &[bind("REGION", &["City", "State", "Country"]), bind("TIME", &["Year"])],
        &[("Pop".into(), Category::Num), ("Unemp".into(), Category::Stat)],
        &ovs,
    )
    .unwrap();
}

pub fn store_sales(s: &mut Session) {
    s.add_dimension("SALESORG", &raw("salesorg.csv"), &Hierarchy::chain(&["Store_Id", "City", "State", "Country"]))
        .unwrap();
    let ovs = BTreeMap::from([("Amount".to_string(), ov(&["Store_Id", "Year"], &[]))]);
    s.add_fact(
        "STORE_SALES",
        &raw("store_sales.csv"),
        &[bind("SALESORG", &["Store_Id", "City", "State", "Country"]), bind("TIME", &["Year"])],
        &[("Amount".into(), Category::Num), ("Unit".into(), Category::Desc)],
        &ovs,
    )
    .unwrap();
}

pub fn session(mode: PropagationMode) -> Session {
    let mut s = Session::new(mode);
    region(&mut s);
    dem(&mut s);
    s
}

/// Rows rendered as strings, sorted.
pub fn rows(t: &AnalyticTable) -> Vec<Vec<String>> {
    let mut v: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()).collect();
    v.sort();
    v
}
