//! Session scripts: one statement per line, `--` or `#` start a comment.
//!
//! ```text
//! LOAD DIMENSION REGION FROM 'region.csv' HIERARCHY City < State < Country
//! LOAD FACT DEM FROM 'dem.csv' DIMS REGION(City, State, Country), TIME(Year) MEASURES Pop NUM
//! SET PROPERTY DEM.Pop XD {City, State, Country, Year} XF {Year}
//! T1 = AGG COUNTDISTINCT(City) AS NB_CITIES BY {State, Country} FROM DEM
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::engine::{BinOp, Calc, CmpOp, Constant, Expr, MergeKind, Operand, Predicate, QuerySpec};
use crate::error::{Error, Result};
use crate::graph::Hierarchy;
use crate::model::{read_csv_path, AnalyticTable, AttrSet, Category};
use crate::property::{AggFn, AggregableProperty, PropagationMode, PropertyOverride};
use crate::session::{Binding, Explanation, Outcome, Reason, Session, Verdict};
use crate::value::parse_decimal;

const KEYWORDS: &[&str] = &[
    "LOAD", "DIMENSION", "FACT", "FROM", "HIERARCHY", "DIMS", "MEASURES", "SET", "PROPERTY", "XD", "XF", "MODE",
    "AGG", "AS", "BY", "FORCE", "FILTER", "WHERE", "PROJECT", "CALC", "PIVOT", "OVER", "MERGE", "LEFT", "RIGHT",
    "FULL", "STRICT", "WITH", "ON", "UNION", "DIFF", "SHOW", "LIMIT", "PROPERTIES", "EXPLAIN", "BACKTRACK", "SAVE",
    "VIEW", "EXPORT", "TO", "GRAPH", "DOT", "JSON", "AND", "OR", "NOT", "IS", "NULL", "FOCUS", "NUM", "STAT", "DESC",
];

/// Table reference: a node, a view, or the current focus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ref {
    Name(String),
    Focus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphFormat {
    Dot,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Statement {
    LoadDimension {
        name: String,
        path: String,
        hierarchy: Vec<Vec<String>>,
    },
    LoadFact {
        name: String,
        path: String,
        dims: Vec<Binding>,
        measures: Vec<(String, Category)>,
    },
    SetProperty {
        table: String,
        attribute: String,
        x_d: Option<AttrSet>,
        x_f: Option<AttrSet>,
    },
    SetMode(PropagationMode),
    Query {
        name: Option<String>,
        spec: QuerySpec,
        inputs: Vec<Ref>,
        force: bool,
    },
    Show {
        target: Ref,
        limit: Option<usize>,
    },
    Properties {
        target: Ref,
        attribute: Option<String>,
    },
    Explain {
        target: Ref,
        attribute: String,
    },
    Backtrack {
        target: Ref,
    },
    SaveView {
        name: String,
        target: Ref,
    },
    Export {
        target: Ref,
        path: String,
    },
    Graph {
        dimension: String,
        format: GraphFormat,
    },
}

// ---------------------------------------------------------------------------
// Printing

fn is_keyword(s: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(s))
}

fn is_plain(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Identifier as written in a script, backquoted when needed.
pub fn ident(s: &str) -> String {
    if is_plain(s) && !is_keyword(s) && AggFn::parse(s).is_none() {
        s.to_string()
    } else {
        format!("`{}`", s.replace('`', "``"))
    }
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn set(s: &AttrSet) -> String {
    list(s.iter())
}

fn list<'a>(items: impl Iterator<Item = &'a String>) -> String {
    let v: Vec<String> = items.map(|a| ident(a)).collect();
    format!("{{{}}}", v.join(", "))
}

fn constant(c: &Constant) -> String {
    if c.is_null() {
        "NULL".into()
    } else if c.quoted {
        quote(&c.lexeme)
    } else {
        c.lexeme.clone()
    }
}

fn operand(o: &Operand) -> String {
    match o {
        Operand::Attr(a) => ident(a),
        Operand::Const(c) => constant(c),
    }
}

pub fn predicate(p: &Predicate) -> String {
    match p {
        Predicate::Cmp { left, cmp, right } => format!("{} {cmp} {}", operand(left), operand(right)),
        Predicate::Not { arg } => format!("NOT ({})", predicate(arg)),
        Predicate::And { left, right } => format!("({} AND {})", predicate(left), predicate(right)),
        Predicate::Or { left, right } => format!("({} OR {})", predicate(left), predicate(right)),
    }
}

pub fn expr(e: &Expr) -> String {
    match e {
        Expr::Attr { name } => ident(name),
        Expr::Num { value } => value.normalize().to_string(),
        Expr::Neg { arg } => format!("-({})", expr(arg)),
        Expr::Bin { left, op, right } => format!("({} {op} {})", expr(left), expr(right)),
    }
}

fn reference(r: &Ref) -> String {
    match r {
        Ref::Name(n) => ident(n),
        Ref::Focus => "FOCUS".into(),
    }
}

/// Query text without the assignment.
pub fn query_text(spec: &QuerySpec, inputs: &[Ref]) -> String {
    let r = |i: usize| inputs.get(i).map(reference).unwrap_or_else(|| "FOCUS".into());
    match spec {
        QuerySpec::Filter { predicate: p } => format!("FILTER {} WHERE {}", r(0), predicate(p)),
        QuerySpec::Project { keep, calc } => {
            let mut s = format!("PROJECT {}", list(keep.iter()));
            if !calc.is_empty() {
                let parts: Vec<String> = calc
                    .iter()
                    .map(|c| match c.category {
                        Some(cat) => format!("{} AS {} {cat}", expr(&c.expr), ident(&c.name)),
                        None => format!("{} AS {}", expr(&c.expr), ident(&c.name)),
                    })
                    .collect();
                s.push_str(&format!(" CALC {}", parts.join(", ")));
            }
            format!("{s} FROM {}", r(0))
        }
        QuerySpec::Aggregate { func, attribute, group_by, alias } => {
            let mut s = format!("AGG {func}({})", ident(attribute));
            if let Some(a) = alias {
                s.push_str(&format!(" AS {}", ident(a)));
            }
            format!("{s} BY {} FROM {}", set(group_by), r(0))
        }
        QuerySpec::Pivot { attribute, over } => format!("PIVOT {} OVER {} FROM {}", ident(attribute), set(over), r(0)),
        QuerySpec::Merge { kind, on } => {
            let mut s = format!("MERGE {} {} WITH {}", kind.keyword(), r(0), r(1));
            if let Some(on) = on {
                s.push_str(&format!(" ON {}", set(on)));
            }
            s
        }
        QuerySpec::Union => format!("UNION {} WITH {}", r(0), r(1)),
        QuerySpec::Difference => format!("DIFF {} WITH {}", r(0), r(1)),
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::LoadDimension { name, path, hierarchy } => {
                let chains: Vec<String> =
                    hierarchy.iter().map(|c| c.iter().map(|a| ident(a)).collect::<Vec<_>>().join(" < ")).collect();
                write!(f, "LOAD DIMENSION {} FROM {} HIERARCHY {}", ident(name), quote(path), chains.join(", "))
            }
            Statement::LoadFact { name, path, dims, measures } => {
                write!(f, "LOAD FACT {} FROM {}", ident(name), quote(path))?;
                if !dims.is_empty() {
                    let ds: Vec<String> = dims
                        .iter()
                        .map(|b| {
                            let attrs: Vec<String> = b.attributes.iter().map(|a| ident(a)).collect();
                            format!("{}({})", ident(&b.dimension), attrs.join(", "))
                        })
                        .collect();
                    write!(f, " DIMS {}", ds.join(", "))?;
                }
                if !measures.is_empty() {
                    let ms: Vec<String> = measures.iter().map(|(m, c)| format!("{} {c}", ident(m))).collect();
                    write!(f, " MEASURES {}", ms.join(", "))?;
                }
                Ok(())
            }
            Statement::SetProperty { table, attribute, x_d, x_f } => {
                write!(f, "SET PROPERTY {}.{}", ident(table), ident(attribute))?;
                if let Some(x) = x_d {
                    write!(f, " XD {}", set(x))?;
                }
                if let Some(x) = x_f {
                    write!(f, " XF {}", set(x))?;
                }
                Ok(())
            }
            Statement::SetMode(m) => write!(f, "SET MODE {}", m.keyword()),
            Statement::Query { name, spec, inputs, force } => {
                if let Some(n) = name {
                    write!(f, "{} = ", ident(n))?;
                }
                f.write_str(&query_text(spec, inputs))?;
                if *force {
                    f.write_str(" FORCE")?;
                }
                Ok(())
            }
            Statement::Show { target, limit } => {
                write!(f, "SHOW {}", reference(target))?;
                if let Some(n) = limit {
                    write!(f, " LIMIT {n}")?;
                }
                Ok(())
            }
            Statement::Properties { target, attribute } => {
                write!(f, "PROPERTIES {}", reference(target))?;
                if let Some(a) = attribute {
                    write!(f, ".{}", ident(a))?;
                }
                Ok(())
            }
            Statement::Explain { target, attribute } => write!(f, "EXPLAIN {}.{}", reference(target), ident(attribute)),
            Statement::Backtrack { target } => write!(f, "BACKTRACK {}", reference(target)),
            Statement::SaveView { name, target } => write!(f, "SAVE VIEW {} = {}", ident(name), reference(target)),
            Statement::Export { target, path } => write!(f, "EXPORT {} TO {}", reference(target), quote(path)),
            Statement::Graph { dimension, format } => {
                let fmt = match format {
                    GraphFormat::Dot => "DOT",
                    GraphFormat::Json => "JSON",
                };
                write!(f, "GRAPH {} {fmt}", ident(dimension))
            }
        }
    }
}

/// Pretty-prints a script, one statement per line.
pub fn print(stmts: &[Statement]) -> String {
    stmts.iter().map(|s| format!("{s}\n")).collect()
}

// ---------------------------------------------------------------------------
// Lexing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    /// Backquoted identifier, never a keyword.
    Quoted(String),
    Str(String),
    Num(String),
    Sym(&'static str),
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> Error {
    Error::Syntax { line, col, message: message.into() }
}

const SYMBOLS: &[&str] = &["<=", ">=", "!=", "<>", "=", "<", ">", "{", "}", "(", ")", ",", ".", "+", "-", "*", "/"];

fn lex(text: &str, line: usize) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' || (c == '-' && chars.get(i + 1) == Some(&'-')) {
            break;
        }
        if c == '\'' || c == '`' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(syntax(line, col, "unterminated quote")),
                    Some(&d) if d == c => {
                        if chars.get(i + 1) == Some(&c) {
                            s.push(c);
                            i += 2;
                        } else {
                            i += 1;
                            break;
                        }
                    }
                    Some(&d) => {
                        s.push(d);
                        i += 1;
                    }
                }
            }
            out.push(Token { tok: if c == '\'' { Tok::Str(s) } else { Tok::Quoted(s) }, col });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            out.push(Token { tok: Tok::Num(chars[start..i].iter().collect()), col });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), col });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                out.push(Token { tok: Tok::Sym(s), col });
                i += s.len();
            }
            None => return Err(syntax(line, col, format!("unexpected character `{c}`"))),
        }
    }
    out.push(Token { tok: Tok::End, col: chars.len() + 1 });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parsing

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    line: usize,
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Quoted(s) => format!("`{s}`"),
        Tok::Str(s) => format!("'{s}'"),
        Tok::Num(s) => s.clone(),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::End => "end of line".into(),
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn err(&self, message: impl Into<String>) -> Error {
        syntax(self.line, self.toks[self.pos].col, message)
    }

    fn unexpected(&self, wanted: &str) -> Error {
        self.err(format!("expected {wanted}, found {}", describe(self.peek())))
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn kw(&mut self, kw: &str) -> Result<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(kw))
        }
    }

    fn at_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.at_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn sym(&mut self, s: &str) -> Result<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{s}`")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(s) | Tok::Quoted(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected("an identifier")),
        }
    }

    fn string(&mut self) -> Result<String> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected("a quoted string")),
        }
    }

    fn end(&mut self) -> Result<()> {
        if *self.peek() == Tok::End {
            Ok(())
        } else {
            Err(self.unexpected("end of statement"))
        }
    }

    fn reference(&mut self) -> Result<Ref> {
        if self.eat_kw("FOCUS") {
            return Ok(Ref::Focus);
        }
        Ok(Ref::Name(self.ident()?))
    }

    fn ident_list(&mut self) -> Result<Vec<String>> {
        self.sym("{")?;
        let mut out = Vec::new();
        if !self.eat_sym("}") {
            loop {
                out.push(self.ident()?);
                if self.eat_sym("}") {
                    break;
                }
                self.sym(",")?;
            }
        }
        Ok(out)
    }

    fn set(&mut self) -> Result<AttrSet> {
        let paren = self.eat_sym("(");
        let items = self.ident_list()?;
        if paren {
            self.sym(")")?;
        }
        Ok(items.into_iter().collect())
    }

    fn statement(&mut self) -> Result<Statement> {
        if matches!(self.peek(), Tok::Ident(_) | Tok::Quoted(_)) && matches!(self.peek_at(1), Tok::Sym("=")) {
            let name = self.ident()?;
            self.bump();
            return self.query(Some(name));
        }
        let Tok::Ident(head) = self.peek().clone() else {
            return Err(self.unexpected("a statement"));
        };
        let stmt = match head.to_ascii_uppercase().as_str() {
            "LOAD" => {
                self.bump();
                if self.eat_kw("DIMENSION") {
                    self.load_dimension()?
                } else if self.eat_kw("FACT") {
                    self.load_fact()?
                } else {
                    return Err(self.unexpected("DIMENSION or FACT"));
                }
            }
            "SET" => {
                self.bump();
                if self.eat_kw("MODE") {
                    let m = self.ident()?;
                    let mode = PropagationMode::parse(&m).ok_or_else(|| self.err(format!("unknown mode `{m}`")))?;
                    Statement::SetMode(mode)
                } else if self.eat_kw("PROPERTY") {
                    let table = self.ident()?;
                    self.sym(".")?;
                    let attribute = self.ident()?;
                    let mut x_d = None;
                    let mut x_f = None;
                    if self.eat_kw("XD") {
                        x_d = Some(self.set()?);
                    }
                    if self.eat_kw("XF") {
                        x_f = Some(self.set()?);
                    }
                    if x_d.is_none() && x_f.is_none() {
                        return Err(self.unexpected("XD or XF"));
                    }
                    Statement::SetProperty { table, attribute, x_d, x_f }
                } else {
                    return Err(self.unexpected("MODE or PROPERTY"));
                }
            }
            "SHOW" => {
                self.bump();
                let target = self.reference()?;
                let limit = if self.eat_kw("LIMIT") { Some(self.count()?) } else { None };
                Statement::Show { target, limit }
            }
            "PROPERTIES" => {
                self.bump();
                let target = self.reference()?;
                let attribute = if self.eat_sym(".") { Some(self.ident()?) } else { None };
                Statement::Properties { target, attribute }
            }
            "EXPLAIN" => {
                self.bump();
                let target = self.reference()?;
                self.sym(".")?;
                Statement::Explain { target, attribute: self.ident()? }
            }
            "BACKTRACK" => {
                self.bump();
                Statement::Backtrack { target: self.reference()? }
            }
            "SAVE" => {
                self.bump();
                self.kw("VIEW")?;
                let name = self.ident()?;
                self.sym("=")?;
                Statement::SaveView { name, target: self.reference()? }
            }
            "EXPORT" => {
                self.bump();
                let target = self.reference()?;
                self.kw("TO")?;
                Statement::Export { target, path: self.string()? }
            }
            "GRAPH" => {
                self.bump();
                let dimension = self.ident()?;
                let format = if self.eat_kw("JSON") {
                    GraphFormat::Json
                } else {
                    self.eat_kw("DOT");
                    GraphFormat::Dot
                };
                Statement::Graph { dimension, format }
            }
            _ => return self.query(None),
        };
        self.end()?;
        Ok(stmt)
    }

    fn count(&mut self) -> Result<usize> {
        match self.peek().clone() {
            Tok::Num(n) => {
                let v = n.parse().map_err(|_| self.err(format!("`{n}` is not a row count")))?;
                self.bump();
                Ok(v)
            }
            _ => Err(self.unexpected("a number")),
        }
    }

    fn load_dimension(&mut self) -> Result<Statement> {
        let name = self.ident()?;
        self.kw("FROM")?;
        let path = self.string()?;
        self.kw("HIERARCHY")?;
        let mut hierarchy = Vec::new();
        loop {
            let mut chain = vec![self.ident()?];
            while self.eat_sym("<") {
                chain.push(self.ident()?);
            }
            hierarchy.push(chain);
            if !self.eat_sym(",") {
                break;
            }
        }
        Ok(Statement::LoadDimension { name, path, hierarchy })
    }

    fn load_fact(&mut self) -> Result<Statement> {
        let name = self.ident()?;
        self.kw("FROM")?;
        let path = self.string()?;
        let mut dims = Vec::new();
        if self.eat_kw("DIMS") {
            loop {
                let dimension = self.ident()?;
                self.sym("(")?;
                let mut attributes = vec![self.ident()?];
                while self.eat_sym(",") {
                    attributes.push(self.ident()?);
                }
                self.sym(")")?;
                dims.push(Binding { dimension, attributes });
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let mut measures = Vec::new();
        if self.eat_kw("MEASURES") {
            loop {
                let m = self.ident()?;
                let c = self.ident()?;
                let cat = Category::parse(&c).ok_or_else(|| self.err(format!("unknown category `{c}`")))?;
                measures.push((m, cat));
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        Ok(Statement::LoadFact { name, path, dims, measures })
    }

    fn query(&mut self, name: Option<String>) -> Result<Statement> {
        let Tok::Ident(head) = self.peek().clone() else {
            return Err(self.unexpected("a query"));
        };
        self.bump();
        let (spec, inputs) = match head.to_ascii_uppercase().as_str() {
            "AGG" => {
                let fname = self.ident()?;
                let func = AggFn::parse(&fname).ok_or_else(|| self.err(format!("unknown function `{fname}`")))?;
                self.sym("(")?;
                let attribute = self.ident()?;
                self.sym(")")?;
                let alias = if self.eat_kw("AS") { Some(self.ident()?) } else { None };
                self.kw("BY")?;
                let group_by = self.set()?;
                self.kw("FROM")?;
                let r = self.reference()?;
                (QuerySpec::Aggregate { func, attribute, group_by, alias }, vec![r])
            }
            "FILTER" => {
                let r = self.reference()?;
                self.kw("WHERE")?;
                (QuerySpec::Filter { predicate: self.or()? }, vec![r])
            }
            "PROJECT" => {
                let keep = self.ident_list()?;
                let mut calc = Vec::new();
                if self.eat_kw("CALC") {
                    loop {
                        let e = self.expr()?;
                        self.kw("AS")?;
                        let n = self.ident()?;
                        let category = match self.peek().clone() {
                            Tok::Ident(c) if Category::parse(&c).is_some() => {
                                self.bump();
                                Category::parse(&c)
                            }
                            _ => None,
                        };
                        calc.push(Calc { expr: e, name: n, category });
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                }
                self.kw("FROM")?;
                (QuerySpec::Project { keep, calc }, vec![self.reference()?])
            }
            "PIVOT" => {
                let attribute = self.ident()?;
                self.kw("OVER")?;
                let over = self.set()?;
                self.kw("FROM")?;
                (QuerySpec::Pivot { attribute, over }, vec![self.reference()?])
            }
            "MERGE" => {
                let kind = if self.eat_kw("LEFT") {
                    MergeKind::Left
                } else if self.eat_kw("RIGHT") {
                    MergeKind::Right
                } else if self.eat_kw("FULL") {
                    MergeKind::Full
                } else if self.eat_kw("STRICT") {
                    MergeKind::Strict
                } else {
                    return Err(self.unexpected("LEFT, RIGHT, FULL or STRICT"));
                };
                let l = self.reference()?;
                self.kw("WITH")?;
                let r = self.reference()?;
                let on = if self.eat_kw("ON") { Some(self.set()?) } else { None };
                (QuerySpec::Merge { kind, on }, vec![l, r])
            }
            "UNION" | "DIFF" => {
                let l = self.reference()?;
                self.kw("WITH")?;
                let r = self.reference()?;
                let spec = if head.eq_ignore_ascii_case("UNION") { QuerySpec::Union } else { QuerySpec::Difference };
                (spec, vec![l, r])
            }
            _ => {
                self.pos -= 1;
                return Err(self.unexpected("a statement"));
            }
        };
        let force = self.eat_kw("FORCE");
        self.end()?;
        Ok(Statement::Query { name, spec, inputs, force })
    }

    fn or(&mut self) -> Result<Predicate> {
        let mut p = self.and()?;
        while self.eat_kw("OR") {
            p = Predicate::Or { left: Box::new(p), right: Box::new(self.and()?) };
        }
        Ok(p)
    }

    fn and(&mut self) -> Result<Predicate> {
        let mut p = self.unary()?;
        while self.eat_kw("AND") {
            p = Predicate::And { left: Box::new(p), right: Box::new(self.unary()?) };
        }
        Ok(p)
    }

    fn unary(&mut self) -> Result<Predicate> {
        if self.eat_kw("NOT") {
            return Ok(Predicate::Not { arg: Box::new(self.unary()?) });
        }
        if self.eat_sym("(") {
            let p = self.or()?;
            self.sym(")")?;
            return Ok(p);
        }
        let left = self.operand()?;
        let cmp = match self.peek() {
            Tok::Sym("=") => CmpOp::Eq,
            Tok::Sym("!=") | Tok::Sym("<>") => CmpOp::Ne,
            Tok::Sym("<") => CmpOp::Lt,
            Tok::Sym("<=") => CmpOp::Le,
            Tok::Sym(">") => CmpOp::Gt,
            Tok::Sym(">=") => CmpOp::Ge,
            Tok::Ident(s) if s.eq_ignore_ascii_case("IS") => CmpOp::Is,
            _ => return Err(self.unexpected("a comparison")),
        };
        self.bump();
        let right = self.operand()?;
        Ok(Predicate::Cmp { left, cmp, right })
    }

    fn operand(&mut self) -> Result<Operand> {
        match self.peek().clone() {
            Tok::Ident(s) if s.eq_ignore_ascii_case("NULL") => {
                self.bump();
                Ok(Operand::Const(Constant::null()))
            }
            Tok::Ident(s) | Tok::Quoted(s) => {
                self.bump();
                Ok(Operand::Attr(s))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Operand::Const(Constant::new(s, true)))
            }
            Tok::Num(n) => {
                self.bump();
                Ok(Operand::Const(Constant::new(n, false)))
            }
            Tok::Sym("-") => {
                self.bump();
                if let Tok::Num(n) = self.peek().clone() {
                    self.bump();
                    Ok(Operand::Const(Constant::new(format!("-{n}"), false)))
                } else {
                    Ok(Operand::Const(Constant::null()))
                }
            }
            _ => Err(self.unexpected("an attribute or a constant")),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut e = self.term()?;
        loop {
            let op = if self.eat_sym("+") {
                BinOp::Add
            } else if self.eat_sym("-") {
                BinOp::Sub
            } else {
                return Ok(e);
            };
            e = Expr::Bin { left: Box::new(e), op, right: Box::new(self.term()?) };
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut e = self.factor()?;
        loop {
            let op = if self.eat_sym("*") {
                BinOp::Mul
            } else if self.eat_sym("/") {
                BinOp::Div
            } else {
                return Ok(e);
            };
            e = Expr::Bin { left: Box::new(e), op, right: Box::new(self.factor()?) };
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.eat_sym("-") {
            return Ok(Expr::Neg { arg: Box::new(self.factor()?) });
        }
        if self.eat_sym("(") {
            let e = self.expr()?;
            self.sym(")")?;
            return Ok(e);
        }
        match self.peek().clone() {
            Tok::Num(n) => {
                let value: Decimal = parse_decimal(&n).ok_or_else(|| self.err(format!("invalid number `{n}`")))?;
                self.bump();
                Ok(Expr::Num { value })
            }
            Tok::Ident(s) | Tok::Quoted(s) => {
                self.bump();
                Ok(Expr::Attr { name: s })
            }
            _ => Err(self.unexpected("an expression")),
        }
    }
}

/// Parses one line. `Ok(None)` for blank and comment lines.
pub fn parse_line(text: &str, line: usize) -> Result<Option<Statement>> {
    let toks = lex(text, line)?;
    if toks.len() == 1 {
        return Ok(None);
    }
    let mut p = Parser { toks, pos: 0, line };
    p.statement().map(Some)
}

/// Statements of a script with their 1-based line numbers.
pub fn parse_script(text: &str) -> Result<Vec<(usize, Statement)>> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if let Some(s) = parse_line(l, i + 1)? {
            out.push((i + 1, s));
        }
    }
    Ok(out)
}

pub fn parse(text: &str) -> Result<Vec<Statement>> {
    Ok(parse_script(text)?.into_iter().map(|(_, s)| s).collect())
}

// ---------------------------------------------------------------------------
// Running

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: PropagationMode,
    pub allow_reject: bool,
    pub json: bool,
    /// Directory CSV paths are relative to.
    pub base_dir: PathBuf,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { mode: PropagationMode::Summarizable, allow_reject: false, json: false, base_dir: PathBuf::from(".") }
    }
}

/// Rendered rows of a table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableView {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub total: usize,
}

impl TableView {
    pub fn of(t: &AnalyticTable, offset: usize, limit: usize) -> Self {
        TableView {
            columns: t.schema.names(),
            rows: t.rows.iter().skip(offset).take(limit).map(|r| r.iter().map(|v| v.to_string()).collect()).collect(),
            total: t.rows.len(),
        }
    }

    /// Left-aligned columns separated by two spaces.
    pub fn render(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.chars().count()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let parts: Vec<String> =
                cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}", w = *w)).collect();
            format!("{}\n", parts.join("  ").trim_end())
        };
        let mut s = line(&self.columns);
        for r in &self.rows {
            s.push_str(&line(r));
        }
        if self.total > self.rows.len() {
            s.push_str(&format!("... {} more rows\n", self.total - self.rows.len()));
        }
        s
    }
}

/// What a statement produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Loaded { table: String, rows: usize, columns: Vec<String>, edges: Vec<(String, String, String)>, dropped: usize },
    PropertySet { table: String, attribute: String, properties: Vec<AggregableProperty> },
    Mode { mode: PropagationMode },
    Result { node: String, verdict: Verdict, table: TableView },
    Rejected { verdict: Verdict },
    Table { node: String, table: TableView },
    Properties { node: String, properties: Vec<AggregableProperty> },
    Explain { explanation: Explanation },
    Focus { node: String },
    View { name: String, node: String },
    Exported { node: String, path: String },
    Graph { dimension: String, text: String },
    Error { message: String },
}

/// Default number of rows printed for a result.
pub const SHOW_ROWS: usize = 20;

pub struct Runner {
    pub session: Session,
    pub opts: RunOptions,
    pub rejected: bool,
}

impl Runner {
    pub fn new(opts: RunOptions) -> Self {
        Runner { session: Session::new(opts.mode), opts, rejected: false }
    }

    fn path(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.opts.base_dir.join(p)
        }
    }

    fn resolve(&self, r: &Ref) -> Result<String> {
        match r {
            Ref::Name(n) => self.session.resolve(n),
            Ref::Focus => self.session.focus.clone().ok_or_else(|| Error::UnknownNode("FOCUS".into())),
        }
    }

    pub fn execute(&mut self, stmt: &Statement) -> Result<Event> {
        let s = &mut self.session;
        Ok(match stmt {
            Statement::LoadDimension { name, path, hierarchy } => {
                let raw = read_csv_path(&self.path(path))?;
                let s = &mut self.session;
                let d = s.add_dimension(name, &raw, &Hierarchy::from_chains(hierarchy))?;
                let edges = d.graph.labelled_edges().into_iter().map(|(a, b, l)| (a, b, l.to_string())).collect();
                let dropped = d.dropped_duplicates;
                let t = s.table(name)?;
                Event::Loaded { table: name.clone(), rows: t.len(), columns: t.schema.names(), edges, dropped }
            }
            Statement::LoadFact { name, path, dims, measures } => {
                let raw = read_csv_path(&self.path(path))?;
                let n = self.session.add_fact(name, &raw, dims, measures, &BTreeMap::new())?;
                Event::Loaded {
                    table: name.clone(),
                    rows: n.result.len(),
                    columns: n.result.schema.names(),
                    edges: Vec::new(),
                    dropped: 0,
                }
            }
            Statement::SetProperty { table, attribute, x_d, x_f } => {
                s.set_property(table, attribute, PropertyOverride { x_d: x_d.clone(), x_f: x_f.clone() })?;
                let properties = s.table(table)?.properties_of(attribute).cloned().collect();
                Event::PropertySet { table: table.clone(), attribute: attribute.clone(), properties }
            }
            Statement::SetMode(m) => {
                s.mode = *m;
                Event::Mode { mode: *m }
            }
            Statement::Query { name, spec, inputs, force } => {
                let ids: Vec<String> = inputs.iter().map(|r| self.resolve(r)).collect::<Result<_>>()?;
                let applied = self.session.apply(spec, &ids, name.as_deref(), *force)?;
                match applied.node {
                    Some(node) => {
                        let table = TableView::of(self.session.table(&node)?, 0, SHOW_ROWS);
                        Event::Result { node, verdict: applied.verdict, table }
                    }
                    None => {
                        self.rejected = true;
                        Event::Rejected { verdict: applied.verdict }
                    }
                }
            }
            Statement::Show { target, limit } => {
                let node = self.resolve(target)?;
                let table = TableView::of(self.session.table(&node)?, 0, limit.unwrap_or(usize::MAX));
                Event::Table { node, table }
            }
            Statement::Properties { target, attribute } => {
                let node = self.resolve(target)?;
                let t = self.session.table(&node)?;
                if let Some(a) = attribute {
                    t.schema.attr(a)?;
                }
                let properties =
                    t.properties.iter().filter(|p| attribute.as_ref().is_none_or(|a| &p.attribute == a)).cloned().collect();
                Event::Properties { node, properties }
            }
            Statement::Explain { target, attribute } => {
                let node = self.resolve(target)?;
                Event::Explain { explanation: self.session.explain(&node, attribute)? }
            }
            Statement::Backtrack { target } => {
                let node = self.resolve(target)?;
                Event::Focus { node: self.session.backtrack(&node)? }
            }
            Statement::SaveView { name, target } => {
                let node = self.resolve(target)?;
                self.session.save_view(name, &node)?;
                Event::View { name: name.clone(), node }
            }
            Statement::Export { target, path } => {
                let node = self.resolve(target)?;
                self.session.export(&node, &self.path(path))?;
                Event::Exported { node, path: path.clone() }
            }
            Statement::Graph { dimension, format } => {
                let g = s.graph(dimension)?;
                let text = match format {
                    GraphFormat::Dot => g.to_dot(),
                    GraphFormat::Json => serde_json::to_string_pretty(&*g).map_err(|e| Error::Io(e.to_string()))?,
                };
                Event::Graph { dimension: dimension.clone(), text }
            }
        })
    }

    pub fn exit_code(&self) -> i32 {
        if self.rejected && !self.opts.allow_reject {
            1
        } else {
            0
        }
    }
}

fn reason_line(r: &Reason) -> String {
    format!(
        "{}({}) on {} is allowed along {}; grouping must include {}",
        r.func,
        r.attribute,
        r.node,
        set_plain(&r.allowed_x),
        set_plain(&r.required_grouping)
    )
}

fn set_plain(s: &AttrSet) -> String {
    crate::model::fmt_set(s)
}

fn render_reason(out: &mut String, head: &str, r: &Reason) {
    out.push_str(&format!("{head}: {}\n", reason_line(r)));
    for (a, why) in &r.missing {
        out.push_str(&format!("  {a}: removed by {why}\n"));
    }
    match &r.suggestion {
        Some(sg) => {
            let spec = QuerySpec::Aggregate {
                func: sg.func,
                attribute: sg.attribute.clone(),
                group_by: sg.group_by.clone(),
                alias: None,
            };
            out.push_str(&format!("suggestion: {}\n", query_text(&spec, &[Ref::Name(sg.node.clone())])));
        }
        None => out.push_str("suggestion: none\n"),
    }
}

fn property_line(p: &AggregableProperty) -> String {
    let mut l = format!("{p}");
    if let Some(xd) = &p.x_d {
        l.push_str(&format!(" x_d={}", set_plain(xd)));
    }
    l.push_str(&format!(" x_f={}", set_plain(&p.x_f)));
    if !p.pending.is_empty() {
        let acts: Vec<String> = p.pending.iter().map(|a| a.to_string()).collect();
        l.push_str(&format!(" pending=[{}]", acts.join(", ")));
    }
    l
}

/// Text transcript of one event.
pub fn render_event(e: &Event) -> String {
    let mut out = String::new();
    match e {
        Event::Loaded { table, rows, columns, edges, dropped } => {
            out.push_str(&format!("{table}: {rows} rows, columns {}\n", columns.join(", ")));
            if *dropped > 0 {
                out.push_str(&format!("dropped {dropped} duplicate rows\n"));
            }
            if !edges.is_empty() {
                let es: Vec<String> = edges.iter().map(|(a, b, l)| format!("({a}, {b}, {l})")).collect();
                out.push_str(&format!("edges: {}\n", es.join(" ")));
            }
        }
        Event::PropertySet { table, attribute, properties } => {
            out.push_str(&format!("{table}.{attribute}:\n"));
            for p in properties {
                out.push_str(&format!("  {}\n", property_line(p)));
            }
        }
        Event::Mode { mode } => out.push_str(&format!("mode: {mode}\n")),
        Event::Result { node, verdict, table } => {
            if verdict.outcome == Outcome::Forced {
                if let Some(r) = &verdict.reason {
                    render_reason(&mut out, "FORCED", r);
                }
            }
            out.push_str(&format!("{node}: {} rows\n", table.total));
            out.push_str(&table.render());
        }
        Event::Rejected { verdict } => {
            if let Some(r) = &verdict.reason {
                render_reason(&mut out, "REJECTED", r);
            }
        }
        Event::Table { node, table } => {
            out.push_str(&format!("{node}: {} rows\n", table.total));
            out.push_str(&table.render());
        }
        Event::Properties { node, properties } => {
            out.push_str(&format!("{node}: {} properties\n", properties.len()));
            for p in properties {
                out.push_str(&format!("  {}\n", property_line(p)));
            }
        }
        Event::Explain { explanation } => {
            out.push_str(&format!("{}.{}:\n", explanation.node, explanation.attribute));
            for l in &explanation.lines {
                out.push_str(&format!("  {l}\n"));
            }
        }
        Event::Focus { node } => out.push_str(&format!("focus: {node}\n")),
        Event::View { name, node } => out.push_str(&format!("view {name} = {node}\n")),
        Event::Exported { node, path } => out.push_str(&format!("exported {node} to {path}\n")),
        Event::Graph { text, .. } => {
            out.push_str(text);
            if !text.ends_with('\n') {
                out.push('\n');
            }
        }
        Event::Error { message } => out.push_str(&format!("ERROR: {message}\n")),
    }
    out
}

/// One transcript entry: the echoed statement and its output.
pub fn render_entry(stmt: &Statement, line: usize, e: &Event, json: bool) -> String {
    if json {
        let mut v = serde_json::to_value(e).unwrap_or_default();
        if let Some(m) = v.as_object_mut() {
            m.insert("line".into(), line.into());
            m.insert("statement".into(), stmt.to_string().into());
        }
        format!("{v}\n")
    } else {
        format!("> {stmt}\n{}\n", render_event(e))
    }
}

/// Runs a whole script. The script is parsed before anything runs; any
/// error stops the run with exit code 2.
pub fn run_script(text: &str, opts: RunOptions) -> (String, i32) {
    let stmts = match parse_script(text) {
        Ok(s) => s,
        Err(e) => {
            let ev = Event::Error { message: e.to_string() };
            let out = if opts.json {
                format!("{}\n", serde_json::to_value(&ev).unwrap_or_default())
            } else {
                render_event(&ev)
            };
            return (out, 2);
        }
    };
    let json = opts.json;
    let mut runner = Runner::new(opts);
    let mut out = String::new();
    for (line, stmt) in &stmts {
        match runner.execute(stmt) {
            Ok(ev) => out.push_str(&render_entry(stmt, *line, &ev, json)),
            Err(e) => {
                let ev = Event::Error { message: format!("line {line}: {e}") };
                out.push_str(&render_entry(stmt, *line, &ev, json));
                return (out, 2);
            }
        }
    }
    let code = runner.exit_code();
    (out, code)
}
