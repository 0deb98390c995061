//! One check per acceptance criterion, shared by the integration tests and
//! the acceptance target. Each returns a short summary or what went wrong.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use summar_guard_core::dsl::{parse_script, RunOptions, Runner, Statement};
use summar_guard_core::engine::{aggregate_values, QuerySpec};
use summar_guard_core::graph::{Hierarchy, Label, BOTTOM, TOP};
use summar_guard_core::model::{attr_set, AnalyticTable, AttrSet};
use summar_guard_core::property::{AggFn, PropagationMode};
use summar_guard_core::session::{Outcome, Session};
use summar_guard_core::summarizability::{is_distributive, Distributivity};
use summar_guard_core::value::Value;

use super::random::{check_gsum, check_monotone, check_monotone_sessions, check_sum, Instance, MODES};
use super::*;

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn agg(f: AggFn, a: &str, by: &[&str], alias: Option<&str>) -> QuerySpec {
    QuerySpec::Aggregate {
        func: f,
        attribute: a.into(),
        group_by: attr_set(by.iter().copied()),
        alias: alias.map(str::to_string),
    }
}

pub fn ids(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Rows of `t` projected on `cols`, in table order, as strings.
pub fn column_rows(t: &AnalyticTable, cols: &[&str]) -> Vec<Vec<String>> {
    let idx: Vec<usize> = cols.iter().map(|c| t.schema.index_of(c).expect("column")).collect();
    t.rows.iter().map(|r| idx.iter().map(|&i| r[i].to_string()).collect()).collect()
}

fn table(rows: &[&[&str]]) -> Vec<Vec<String>> {
    rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()).collect()
}

fn timed(limit: Duration, f: impl FnOnce() -> Check) -> Check {
    let start = Instant::now();
    let out = f()?;
    let took = start.elapsed();
    ensure!(took < limit, "took {took:?}, limit {limit:?}");
    Ok(format!("{out} in {took:.2?}"))
}

fn apply(s: &mut Session, spec: QuerySpec, inputs: &[&str], name: &str) -> Result<Option<String>, String> {
    let a = s.apply(&spec, &ids(inputs), Some(name), false).map_err(|e| e.to_string())?;
    Ok(a.node)
}

// ---------------------------------------------------------------------------

pub fn criterion_1() -> Check {
    timed(Duration::from_secs(1), || {
        let mut s = session(PropagationMode::Summarizable);
        apply(&mut s, agg(AggFn::CountDistinct, "City", &["State", "Country"], Some("NB_CITIES")), &["DEM"], "T1")?;
        let t1 = s.table("T1").map_err(|e| e.to_string())?;
        let got = sorted(column_rows(t1, &["State", "Country", "NB_CITIES"]));
        let want = sorted(table(&[
            &["California", "USA", "3"],
            &["Ohio", "USA", "1"],
            &["-", "USA", "1"],
            &["-", "Ireland", "1"],
        ]));
        ensure!(got == want, "COUNTDISTINCT table {got:?}");

        let a = s
            .apply(&agg(AggFn::Sum, "NB_CITIES", &["Country"], None), &ids(&["T1"]), Some("T2"), false)
            .map_err(|e| e.to_string())?;
        ensure!(a.verdict.outcome == Outcome::Rejected && a.node.is_none(), "SUM by Country not rejected");
        let sug = a.verdict.reason.and_then(|r| r.suggestion).ok_or("no suggestion")?;
        ensure!(
            sug.node == "DEM" && sug.func == AggFn::CountDistinct && sug.group_by == attr_set(["Country"]),
            "suggestion {sug:?}"
        );

        apply(&mut s, agg(AggFn::Count, "City", &["State", "Country"], Some("NB_CITIES")), &["DEM"], "T1C")?;
        let n = apply(&mut s, agg(AggFn::Sum, "NB_CITIES", &["Country"], None), &["T1C"], "T2C")?;
        ensure!(n.is_some(), "COUNT variant rejected");
        let got = column_rows(s.table("T2C").map_err(|e| e.to_string())?, &["Country", "SUM(NB_CITIES)"]);
        ensure!(sorted(got.clone()) == sorted(table(&[&["USA", "7"], &["Ireland", "1"]])), "COUNT variant {got:?}");
        Ok("1/3/1/1 then rejected; COUNT variant USA 7, Ireland 1".into())
    })
}

/// Runs a committed script as written and returns the runner.
pub fn scripted(name: &str) -> Result<Runner, String> {
    let path = fixture("sessions").join(format!("{name}.sg"));
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let mut r = Runner::new(RunOptions { base_dir: path.parent().unwrap().to_path_buf(), ..Default::default() });
    for (line, stmt) in parse_script(&text).map_err(|e| e.to_string())? {
        r.execute(&stmt).map_err(|e| format!("{name}.sg line {line}: {e}"))?;
    }
    Ok(r)
}

fn tbl<'a>(s: &'a Session, n: &str) -> Result<&'a AnalyticTable, String> {
    s.table(n).map_err(|e| e.to_string())
}

fn sorted(mut v: Vec<Vec<String>>) -> Vec<Vec<String>> {
    v.sort();
    v
}

pub fn criterion_2() -> Check {
    timed(Duration::from_secs(1), || {
        let r = scripted("store_sales_naive")?;
        let s = &r.session;
        let got = sorted(column_rows(tbl(s, "T4")?, &["City", "State", "SUM(Amount)"]));
        let want = sorted(table(&[
            &["Dublin", "California", "6.7"],
            &["San Jose", "California", "22.8"],
            &["Dublin", "Ohio", "1.2"],
            &["Washington DC", "-", "43.7"],
        ]));
        ensure!(got == want, "T4 {got:?}");
        ensure!(r.rejected && !s.nodes.contains_key("T6"), "SUM(Pop) along City on T5 not rejected");

        let r = scripted("store_sales_by_state")?;
        let got = sorted(column_rows(tbl(&r.session, "SALES_DEM")?, &["State", "SUM(Amount)", "SUM(Pop)"]));
        let want = sorted(table(&[&["California", "29.5", "1157"], &["Ohio", "1.2", "44"], &["-", "43.7", "672"]]));
        ensure!(got == want, "final table {got:?}");
        ensure!(!r.rejected, "corrected flow had a rejection");
        Ok("T4 6.7/22.8/1.2/43.7; SUM(Pop) on T5 rejected; final 29.5/1.2/43.7 with 1157/44/672".into())
    })
}

fn edges(csv: &str, chains: &[&[&str]]) -> Result<BTreeSet<(String, String, String)>, String> {
    let mut s = Session::new(PropagationMode::Basic);
    let chains: Vec<Vec<String>> = chains.iter().map(|c| c.iter().map(|a| a.to_string()).collect()).collect();
    let d = s.add_dimension("D", &raw(csv), &Hierarchy::from_chains(&chains)).map_err(|e| e.to_string())?;
    Ok(d.graph.edges.iter().map(|e| (e.from.to_string(), e.to.to_string(), e.label.to_string())).collect())
}

fn edge_set(v: &[(&str, &str, &str)]) -> BTreeSet<(String, String, String)> {
    v.iter().map(|(a, b, l)| (a.to_string(), b.to_string(), l.to_string())).collect()
}

pub fn salesorg_edges() -> BTreeSet<(String, String, String)> {
    edge_set(&[
        ("⊥", "Store_Id", "+"),
        ("Store_Id", "City", "f"),
        ("City", "State", "+"),
        ("State", "Country", "1"),
        ("Store_Id", "State", "f"),
        ("Store_Id", "Country", "f"),
        ("City", "Country", "+"),
        ("Country", "⊤", "f"),
    ])
}

pub fn criterion_3() -> Check {
    for csv in ["salesorg.csv", "salesorg2.csv"] {
        let got = edges(csv, &[&["Store_Id", "City", "State", "Country"]])?;
        ensure!(got == salesorg_edges(), "{csv} edges {got:?}");
    }
    let prod = edges("prod.csv", &[&["Prod_Sku", "Brand", "Country"], &["Prod_Sku", "Subcategory", "Category"]])?;
    ensure!(prod.contains(&("Brand".into(), "Country".into(), "f".into())), "PROD edges {prod:?}");
    let bottom_plus = prod.iter().filter(|e| e.0 == BOTTOM).all(|e| e.2 == Label::Plus.to_string());
    let top_f = prod.iter().filter(|e| e.1 == TOP).all(|e| e.2 == Label::F.to_string());
    ensure!(bottom_plus && top_f, "PROD sentinel labels {prod:?}");
    Ok("SALESORG six edges with ⊥/⊤; PROD has (Brand, Country, f)".into())
}

fn sum_xs(t: &AnalyticTable, attr: &str) -> Vec<AttrSet> {
    t.properties_of(attr).filter(|p| p.func == AggFn::Sum).map(|p| p.x.clone()).collect()
}

pub fn criterion_4() -> Check {
    let r = scripted("product_list")?;
    let s = &r.session;
    let count = sum_xs(tbl(s, "T_COUNT")?, "COUNT(Prod_Sku)");
    ensure!(count == vec![attr_set(["Brand", "Country", "Year"])], "COUNT: {count:?}");
    let t = tbl(s, "T_DISTINCT")?;
    let distinct: Vec<_> = t.properties_of("COUNTDISTINCT(Prod_Sku)").filter(|p| p.func == AggFn::Sum).collect();
    ensure!(distinct.len() == 1 && distinct[0].x == attr_set(["Country"]), "COUNTDISTINCT: {distinct:?}");
    let k = distinct[0].required_grouping(&t.schema);
    ensure!(k == attr_set(["Brand", "Year"]), "K = {k:?}");
    ensure!(s.nodes.contains_key("ALONG_COUNTRY"), "SUM along Country was rejected");
    Ok("P(SUM, {Brand, Country, Year}) and P(SUM, {Country}) with K = {Brand, Year}".into())
}

pub fn criterion_5() -> Check {
    let r = scripted("store_sales_dem")?;
    let s = &r.session;
    let m = tbl(s, "STORE_SALES_DEM")?;
    let amount: Vec<AttrSet> = m.properties_of("Amount").map(|p| p.x.clone()).collect();
    let want = attr_set(["Store_Id", "Year", "City", "State", "Country"]);
    ensure!(!amount.is_empty() && amount.iter().all(|x| *x == want), "Amount X' {amount:?}");
    let before: Vec<AttrSet> = tbl(s, "DEM2")?.properties_of("Unemp").map(|p| p.x.clone()).collect();
    let after: Vec<AttrSet> = m.properties_of("Unemp").map(|p| p.x.clone()).collect();
    ensure!(!after.is_empty() && after == before, "Unemp X' {after:?}, was {before:?}");
    Ok("Amount X' = {City, Country, State, Store_Id, Year}; Unemp X' unchanged".into())
}

pub fn soundness(n: u64, first_seed: u64) -> Result<(usize, usize), String> {
    let mut checked = 0;
    for seed in first_seed..first_seed + n {
        let inst = Instance::generate(seed);
        let bad: Vec<_> = check_sum(&inst).into_iter().chain(check_gsum(&inst)).collect();
        if let Some(c) = bad.first() {
            return Err(format!("{} counterexample(s), first {c:?}", bad.len()));
        }
        checked += inst.steps.len();
    }
    Ok((n as usize, checked))
}

pub fn criterion_6() -> Check {
    timed(Duration::from_secs(60), || {
        let (n, steps) = soundness(500, 0)?;
        Ok(format!("{n} instances, {steps} operator steps, zero counterexamples"))
    })
}

/// All partitions of `items` into blocks.
pub fn partitions(items: &[i64]) -> Vec<Vec<Vec<i64>>> {
    let Some((&first, rest)) = items.split_first() else { return vec![Vec::new()] };
    let mut out = Vec::new();
    for p in partitions(rest) {
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i].insert(0, first);
            out.push(q);
        }
        let mut q = p.clone();
        q.insert(0, vec![first]);
        out.push(q);
    }
    out
}

fn values(v: &[i64]) -> Vec<Value> {
    v.iter().map(|x| Value::number(&x.to_string()).expect("number")).collect()
}

/// `G` over the per-block `F` values, and `F` over the union of blocks.
pub fn twice_and_once(f: AggFn, g: AggFn, blocks: &[Vec<i64>]) -> (Value, Value) {
    let inner: Vec<Value> = blocks
        .iter()
        .map(|b| {
            let vs = values(b);
            aggregate_values(f, &vs.iter().collect::<Vec<_>>())
        })
        .collect();
    let twice = aggregate_values(g, &inner.iter().collect::<Vec<_>>());
    let all: Vec<Value> = blocks.iter().flat_map(|b| values(b)).collect();
    let once = aggregate_values(f, &all.iter().collect::<Vec<_>>());
    (twice, once)
}

pub fn criterion_7() -> Check {
    let (twice, once) = twice_and_once(AggFn::CountDistinct, AggFn::Sum, &[vec![1, 2], vec![2, 3]]);
    ensure!(twice.to_string() == "4" && once.to_string() == "3", "CD then SUM gave {twice} vs {once}");
    ensure!(is_distributive(AggFn::CountDistinct, AggFn::Sum) != Distributivity::Always, "(CD, SUM) marked distributive");
    let mut checked = 0;
    for n in 0..=5 {
        let items: Vec<i64> = (1..=n).collect();
        for p in partitions(&items) {
            let (twice, once) = twice_and_once(AggFn::Count, AggFn::Sum, &p);
            // An empty set has no group at all; COUNT of nothing is 0 either way.
            let same = twice == once || (n == 0 && twice.is_null() && once.to_string() == "0");
            ensure!(same, "COUNT then SUM differs on {p:?}: {twice} vs {once}");
            checked += 1;
        }
    }
    ensure!(checked == 1 + 1 + 2 + 5 + 15 + 52, "{checked} partitionings");
    Ok(format!("4 != 3 reproduced; COUNT/SUM equal on all {checked} partitionings of sets up to 5"))
}

/// Runs a committed script in `mode`, forcing every query so that all
/// modes build the same nodes.
pub fn forced_run(script: &std::path::Path, mode: PropagationMode) -> Session {
    let text = std::fs::read_to_string(script).expect("script");
    let base = script.parent().expect("parent").to_path_buf();
    let mut r = Runner::new(RunOptions { mode, base_dir: base, ..Default::default() });
    for (_, stmt) in parse_script(&text).expect("parses") {
        let stmt = match stmt {
            Statement::SetMode(_) | Statement::Export { .. } => continue,
            Statement::Query { name, spec, inputs, .. } => Statement::Query { name, spec, inputs, force: true },
            other => other,
        };
        // Names reused after a rejection collide once forced; skip those.
        let _ = r.execute(&stmt);
    }
    r.session
}

pub fn session_scripts() -> Vec<std::path::PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(fixture("sessions"))
        .expect("sessions dir")
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sg"))
        .collect();
    v.sort();
    v
}

pub fn criterion_8() -> Check {
    let mut nodes = 0;
    for script in session_scripts() {
        let runs: Vec<Session> = MODES.iter().map(|m| forced_run(&script, *m)).collect();
        let bad = check_monotone_sessions(&[&runs[0], &runs[1], &runs[2]], &runs[0].order);
        ensure!(bad.is_empty(), "{}: {}", script.display(), bad[0]);
        nodes += runs[0].order.len();
    }
    for seed in 0..200 {
        let bad = check_monotone(&Instance::generate(1_000_000 + seed));
        ensure!(bad.is_empty(), "{}", bad[0]);
    }
    Ok(format!("{} fixture scripts ({nodes} nodes) and 200 random instances nested", session_scripts().len()))
}
