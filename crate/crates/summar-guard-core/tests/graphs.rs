mod common;

use common::*;
use summar_guard_core::graph::{same_labelled_paths, Hierarchy, Label};
use summar_guard_core::model::{attr_set, lfd_holds, nfd_holds, AttrSet};
use summar_guard_core::property::PropagationMode;
use summar_guard_core::session::Session;

fn salesorg(s: &mut Session) {
    s.add_dimension("SALESORG", &raw("salesorg2.csv"), &Hierarchy::chain(&["Store_Id", "City", "State", "Country"]))
        .unwrap();
}

fn prod(s: &mut Session) {
    let chains = vec![
        vec!["Prod_Sku".to_string(), "Brand".into(), "Country".into()],
        vec!["Prod_Sku".to_string(), "Subcategory".into(), "Category".into()],
    ];
    s.add_dimension("PROD", &raw("prod.csv"), &Hierarchy::from_chains(&chains)).unwrap();
}

#[test]
fn literal_dependencies_on_salesorg() {
    let mut s = Session::new(PropagationMode::Basic);
    salesorg(&mut s);
    let t = s.table("SALESORG").unwrap();
    assert!(lfd_holds(t, &attr_set(["Store_Id"]), &attr_set(["City", "State", "Country"])).unwrap());
    assert!(!lfd_holds(t, &attr_set(["City"]), &attr_set(["State"])).unwrap());
    assert!(!lfd_holds(t, &attr_set(["State"]), &attr_set(["Country"])).unwrap());
    assert!(nfd_holds(t, &attr_set(["State"]), &attr_set(["Country"])).unwrap());
    assert!(!nfd_holds(t, &attr_set(["City"]), &attr_set(["Country"])).unwrap());
    for a in ["Store_Id", "City", "State", "Country"] {
        assert!(lfd_holds(t, &attr_set([a]), &attr_set([a])).unwrap());
        assert!(nfd_holds(t, &attr_set([a]), &attr_set([a])).unwrap());
    }
}

#[test]
fn labels_agree_with_dependencies() {
    let mut s = Session::new(PropagationMode::Basic);
    salesorg(&mut s);
    prod(&mut s);
    region(&mut s);
    for dim in ["SALESORG", "PROD", "REGION"] {
        let g = s.graph(dim).unwrap();
        let t = s.table(dim).unwrap();
        for (a, b, l) in g.labelled_edges() {
            let x = attr_set([a.as_str()]);
            let y = attr_set([b.as_str()]);
            let (lfd, nfd) = (lfd_holds(t, &x, &y).unwrap(), nfd_holds(t, &x, &y).unwrap());
            match l {
                Label::F => assert!(lfd, "{dim} {a}->{b}"),
                Label::One => assert!(nfd && !lfd, "{dim} {a}->{b}"),
                Label::Plus => assert!(!nfd && !lfd, "{dim} {a}->{b}"),
            }
        }
        for chain in g.hierarchy.chains() {
            for w in chain.windows(2) {
                let n = g.edges.iter().filter(|e| e.from.to_string() == w[0] && e.to.to_string() == w[1]).count();
                assert_eq!(n, 1, "{dim} {} -> {}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn region_edges() {
    let mut s = Session::new(PropagationMode::Basic);
    region(&mut s);
    let got: Vec<(String, String, String)> =
        s.graph("REGION").unwrap().labelled_edges().into_iter().map(|(a, b, l)| (a, b, l.to_string())).collect();
    let want = [
        ("City", "Country", "+"),
        ("City", "Region", "+"),
        ("City", "State", "+"),
        ("Country", "Region", "f"),
        ("State", "Country", "1"),
        ("State", "Region", "1"),
    ];
    let want: Vec<(String, String, String)> =
        want.iter().map(|(a, b, l)| (a.to_string(), b.to_string(), l.to_string())).collect();
    assert_eq!(got, want);
}

#[test]
fn closures() {
    let mut s = Session::new(PropagationMode::Basic);
    store_sales(&mut s);
    prod(&mut s);
    let schema = &s.table("STORE_SALES").unwrap().schema;
    assert_eq!(
        schema.closure(&attr_set(["Store_Id", "Year"])).unwrap(),
        attr_set(["Store_Id", "City", "State", "Country", "Year"])
    );
    assert_eq!(schema.closure(&AttrSet::new()).unwrap(), AttrSet::new());
    assert_eq!(schema.highest(&attr_set(["City", "State", "Country", "Year"])), attr_set(["Country", "Year"]));

    s.add_fact(
        "PRODUCT_LIST",
        &raw("product_list.csv"),
        &[bind("PROD", &["Prod_Sku", "Brand", "Country"]), bind("TIME", &["Year"])],
        &[("Qty".into(), summar_guard_core::model::Category::Num)],
        &Default::default(),
    )
    .unwrap();
    let schema = &s.table("PRODUCT_LIST").unwrap().schema;
    assert_eq!(schema.closure(&attr_set(["Prod_Sku", "Year"])).unwrap(), attr_set(["Prod_Sku", "Year"]));
    assert_eq!(schema.closure(&attr_set(["Brand"])).unwrap(), attr_set(["Brand", "Country"]));
    assert_eq!(schema.highest(&attr_set(["Brand"])), attr_set(["Brand"]));
    assert_eq!(schema.fact_identifier(), attr_set(["Prod_Sku", "Brand", "Year"]));
}

#[test]
fn highest_drops_attributes_with_an_ancestor() {
    let mut s = Session::new(PropagationMode::Basic);
    prod(&mut s);
    let schema = &s.table("PROD").unwrap().schema;
    assert_eq!(schema.highest(&attr_set(["Prod_Sku", "Brand", "Subcategory"])), attr_set(["Brand", "Subcategory"]));
}

#[test]
fn dimension_identifiers() {
    let mut s = Session::new(PropagationMode::Basic);
    salesorg(&mut s);
    prod(&mut s);
    region(&mut s);
    assert_eq!(s.graph("SALESORG").unwrap().dimension_identifier(), attr_set(["Store_Id"]));
    // cz-tshirt-s belongs to two brands, so the SKU needs its brand.
    assert_eq!(s.graph("PROD").unwrap().dimension_identifier(), attr_set(["Prod_Sku", "Brand"]));
    // Dublin, USA lies in two states.
    assert_eq!(s.graph("REGION").unwrap().dimension_identifier(), attr_set(["City", "State", "Country"]));
}

#[test]
fn labelled_paths_comparison() {
    let mut s = Session::new(PropagationMode::Basic);
    salesorg(&mut s);
    region(&mut s);
    let a = s.graph("SALESORG").unwrap();
    let b = s.graph("REGION").unwrap();
    assert!(same_labelled_paths(&a, &a, &attr_set(["Store_Id", "City", "State", "Country"])));
    assert!(same_labelled_paths(&a, &b, &attr_set(["City", "State", "Country"])));

    let csv = "City,State,Country\nDublin,Ohio,USA\nPalo Alto,California,USA\n";
    let raw = summar_guard_core::model::read_csv(csv.as_bytes()).unwrap();
    s.add_dimension("GEO", &raw, &Hierarchy::chain(&["City", "State", "Country"])).unwrap();
    let c = s.graph("GEO").unwrap();
    assert!(!same_labelled_paths(&a, &c, &attr_set(["City", "State", "Country"])));
}

#[test]
fn dot_marks_skip_edges() {
    let mut s = Session::new(PropagationMode::Basic);
    salesorg(&mut s);
    let dot = s.graph("SALESORG").unwrap().to_dot();
    assert!(dot.starts_with("digraph \"SALESORG\""));
    assert!(dot.contains("\"Store_Id\" -> \"Country\" [label=\"f\", style=dashed];"), "{dot}");
    assert!(dot.contains("\"⊥\" -> \"Store_Id\" [label=\"+\"];"), "{dot}");
}

#[test]
fn duplicate_dimension_rows_are_dropped() {
    let csv = "Year\n2017\n2018\n2017\n";
    let raw = summar_guard_core::model::read_csv(csv.as_bytes()).unwrap();
    let mut s = Session::new(PropagationMode::Basic);
    let d = s.add_dimension("TIME", &raw, &Hierarchy::chain(&["Year"])).unwrap();
    assert_eq!(d.dropped_duplicates, 1);
    assert_eq!(s.table("TIME").unwrap().len(), 2);
}
