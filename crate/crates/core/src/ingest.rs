//! Text import format, bulk import into a database directory, and export.
//!
//! One statement per line; `#` starts a comment where a statement may start
//! or after a complete statement.
//!
//! ```text
//! (n1) :human {gender: "female", first name: "Michelle"}
//! e1 = (Q320)-[P39]->(Q466956)
//! (e1)-[P580]->("2014-03-11")
//! ```
//!
//! Terms inside `( )` and `[ ]` are a quoted string, an integer, `_:name`
//! for an anonymous node, a declared edge alias, or else a node name. Names
//! may contain spaces; `\` escapes the next character, and a term with an
//! escape is always a name.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    decode, encode_named, encode_value, Datum, ObjectId, PropertyDomainGraph, StringArena,
    Value,
};
use crate::storage::{self, GraphData};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Name(String),
    Anon(String),
    Str(String),
    Int(i64),
    /// Reference to the n-th edge statement through its alias.
    Edge(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatementKind {
    Node(Term),
    Edge { source: Term, ty: Term, target: Term },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportStatement {
    pub line: usize,
    pub alias: Option<String>,
    pub kind: StatementKind,
    pub labels: Vec<String>,
    pub props: Vec<(String, Value)>,
}

pub fn parse_import(text: &str) -> Result<Vec<ImportStatement>> {
    let mut aliases: HashMap<String, (usize, usize)> = HashMap::new();
    // First use of each plain name, to detect aliases declared after use.
    let mut name_uses: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    let mut edge_count = 0;
    for (i, line) in text.lines().enumerate() {
        let mut p = LineParser {
            chars: line.chars().collect(),
            pos: 0,
            line: i + 1,
        };
        p.skip_ws();
        if p.at_end() || p.peek() == Some('#') {
            continue;
        }
        let stmt = p.statement(&aliases, &mut name_uses)?;
        if let Some(alias) = &stmt.alias {
            if aliases.contains_key(alias) {
                return Err(Error::DuplicateAlias {
                    line: i + 1,
                    alias: alias.clone(),
                });
            }
            if let Some(&used) = name_uses.get(alias) {
                return Err(Error::UndeclaredAlias {
                    line: used,
                    alias: alias.clone(),
                });
            }
            aliases.insert(alias.clone(), (edge_count, i + 1));
        }
        if matches!(stmt.kind, StatementKind::Edge { .. }) {
            edge_count += 1;
        }
        out.push(stmt);
    }
    Ok(out)
}

struct LineParser {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

fn is_alias_ident(s: &str) -> bool {
    let mut c = s.chars();
    matches!(c.next(), Some(ch) if ch.is_alphabetic() || ch == '_')
        && c.all(|ch| ch.is_alphanumeric() || ch == '_')
}

fn is_integer(s: &str) -> bool {
    let digits = s.strip_prefix('-').unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

impl LineParser {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::syntax(self.line, self.pos + 1, msg)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn at_end(&self) -> bool {
        self.pos >= self.chars.len()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, s: &str) -> bool {
        let n = s.chars().count();
        if self.chars.len() >= self.pos + n && self.chars[self.pos..self.pos + n].iter().copied().eq(s.chars()) {
            self.pos += n;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<()> {
        self.skip_ws();
        if self.eat(s) {
            Ok(())
        } else if self.at_end() {
            Err(self.err(format!("expected `{s}` but the line ended")))
        } else {
            Err(self.err(format!("expected `{s}`")))
        }
    }

    fn statement(
        &mut self,
        aliases: &HashMap<String, (usize, usize)>,
        name_uses: &mut HashMap<String, usize>,
    ) -> Result<ImportStatement> {
        let mut alias = None;
        if self.peek() != Some('(') {
            let start = self.pos;
            while matches!(self.peek(), Some(c) if c.is_alphanumeric() || c == '_') {
                self.pos += 1;
            }
            let ident: String = self.chars[start..self.pos].iter().collect();
            if !is_alias_ident(&ident) {
                self.pos = start;
                return Err(self.err("expected `(` or an alias declaration"));
            }
            self.expect("=")?;
            alias = Some(ident);
        }
        self.expect("(")?;
        let first = self.term(')', aliases, name_uses)?;
        self.expect(")")?;
        self.skip_ws();
        let mut stmt = ImportStatement {
            line: self.line,
            alias: None,
            kind: StatementKind::Node(first.clone()),
            labels: Vec::new(),
            props: Vec::new(),
        };
        if self.eat("-[") {
            let ty = self.term(']', aliases, name_uses)?;
            self.expect("]->")?;
            self.expect("(")?;
            let target = self.term(')', aliases, name_uses)?;
            self.expect(")")?;
            stmt.kind = StatementKind::Edge {
                source: first,
                ty,
                target,
            };
            stmt.alias = alias;
        } else {
            if alias.is_some() {
                return Err(self.err("an alias can only name an edge statement"));
            }
            loop {
                self.skip_ws();
                if !self.eat(":") {
                    break;
                }
                self.skip_ws();
                let label = self.word(&[':', '{', '#'], true)?;
                stmt.labels.push(label);
            }
        }
        self.skip_ws();
        if self.eat("{") {
            stmt.props = self.props()?;
        }
        self.skip_ws();
        if !self.at_end() && self.peek() != Some('#') {
            return Err(self.err("unexpected trailing input"));
        }
        Ok(stmt)
    }

    fn quoted(&mut self) -> Result<String> {
        debug_assert_eq!(self.peek(), Some('"'));
        self.pos += 1;
        let mut s = String::new();
        loop {
            match self.peek() {
                None => return Err(self.err("unterminated string")),
                Some('"') => {
                    self.pos += 1;
                    return Ok(s);
                }
                Some('\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some('n') => s.push('\n'),
                        Some('t') => s.push('\t'),
                        Some(c @ ('"' | '\\')) => s.push(c),
                        _ => return Err(self.err("invalid escape in string")),
                    }
                    self.pos += 1;
                }
                Some(c) => {
                    s.push(c);
                    self.pos += 1;
                }
            }
        }
    }

    /// Bare text up to an unescaped stop character, trimmed. Returns the
    /// text and whether any escape occurred.
    fn bare(&mut self, stops: &[char], stop_at_ws: bool) -> (String, bool) {
        let mut s = String::new();
        let mut escaped = false;
        // Length of `s` up to and including the last escaped character.
        let mut keep = 0;
        while let Some(c) = self.peek() {
            if stops.contains(&c) || (stop_at_ws && c.is_whitespace()) {
                break;
            }
            self.pos += 1;
            if c == '\\' {
                if let Some(n) = self.peek() {
                    self.pos += 1;
                    s.push(n);
                    escaped = true;
                    keep = s.len();
                    continue;
                }
            }
            s.push(c);
        }
        let trimmed_len = s.trim_end().len().max(keep);
        s.truncate(trimmed_len);
        (s, escaped)
    }

    /// A label or property key: quoted, or bare text.
    fn word(&mut self, stops: &[char], stop_at_ws: bool) -> Result<String> {
        self.skip_ws();
        if self.peek() == Some('"') {
            return self.quoted();
        }
        let (s, _) = self.bare(stops, stop_at_ws);
        if s.is_empty() {
            return Err(self.err("expected a name"));
        }
        Ok(s)
    }

    fn term(
        &mut self,
        close: char,
        aliases: &HashMap<String, (usize, usize)>,
        name_uses: &mut HashMap<String, usize>,
    ) -> Result<Term> {
        self.skip_ws();
        if self.peek() == Some('"') {
            return self.quoted().map(Term::Str);
        }
        let start = self.pos;
        let (s, escaped) = self.bare(&[close], false);
        if s.is_empty() {
            self.pos = start;
            return Err(self.err("expected a term"));
        }
        if escaped {
            return Ok(Term::Name(s));
        }
        if is_integer(&s) {
            return s
                .parse()
                .map(Term::Int)
                .map_err(|_| Error::syntax(self.line, start + 1, "integer out of range"));
        }
        if let Some(rest) = s.strip_prefix("_:") {
            if rest.is_empty() {
                return Err(Error::syntax(self.line, start + 1, "anonymous node needs a name"));
            }
            return Ok(Term::Anon(rest.to_string()));
        }
        if let Some(&(n, _)) = aliases.get(&s) {
            return Ok(Term::Edge(n));
        }
        name_uses.entry(s.clone()).or_insert(self.line);
        Ok(Term::Name(s))
    }

    fn props(&mut self) -> Result<Vec<(String, Value)>> {
        let mut out = Vec::new();
        self.skip_ws();
        if self.eat("}") {
            return Ok(out);
        }
        loop {
            let key = self.word(&[':', ',', '}'], false)?;
            self.expect(":")?;
            self.skip_ws();
            let value = match self.peek() {
                Some('"') => Value::Str(self.quoted()?),
                _ => {
                    let start = self.pos;
                    let (s, _) = self.bare(&[',', '}'], true);
                    if !is_integer(&s) {
                        self.pos = start;
                        return Err(self.err("expected a quoted string or an integer"));
                    }
                    Value::Int(s.parse().map_err(|_| {
                        Error::syntax(self.line, start + 1, "integer out of range")
                    })?)
                }
            };
            out.push((key, value));
            self.skip_ws();
            if self.eat(",") {
                continue;
            }
            self.expect("}")?;
            return Ok(out);
        }
    }
}

/// Assigns ids: strings are interned in order of first appearance, anonymous
/// nodes are numbered in order of first appearance, edges in statement order.
pub fn encode_statements(statements: &[ImportStatement]) -> Result<GraphData> {
    let mut data = GraphData::default();
    let mut anon: HashMap<String, ObjectId> = HashMap::new();
    let mut term_id = |t: &Term, strings: &mut StringArena| -> Result<ObjectId> {
        match t {
            Term::Name(n) => encode_named(n, strings),
            Term::Anon(a) => {
                let next = anon.len() as u64;
                Ok(*anon.entry(a.clone()).or_insert_with(|| ObjectId::anon(next)))
            }
            Term::Str(s) => encode_value(&Value::Str(s.clone()), strings),
            Term::Int(i) => encode_value(&Value::Int(*i), strings),
            Term::Edge(n) => Ok(ObjectId::edge(*n as u64)),
        }
    };
    for stmt in statements {
        let subject = match &stmt.kind {
            StatementKind::Node(t) => {
                let id = term_id(t, &mut data.strings)?;
                data.nodes.push(id);
                id
            }
            StatementKind::Edge { source, ty, target } => {
                let s = term_id(source, &mut data.strings)?;
                let t = term_id(ty, &mut data.strings)?;
                let o = term_id(target, &mut data.strings)?;
                data.edges.push((s, t, o));
                ObjectId::edge(data.edges.len() as u64 - 1)
            }
        };
        for label in &stmt.labels {
            let l = encode_value(&Value::Str(label.clone()), &mut data.strings)?;
            data.labels.push((subject, l));
        }
        for (key, value) in &stmt.props {
            let k = encode_value(&Value::Str(key.clone()), &mut data.strings)?;
            let v = encode_value(value, &mut data.strings)?;
            data.props.push((subject, k, v));
        }
    }
    Ok(data)
}

pub fn load_graph_data(text: &str) -> Result<GraphData> {
    encode_statements(&parse_import(text)?)
}

/// Parses import text straight into the in-memory reference form.
pub fn load_reference(text: &str) -> Result<PropertyDomainGraph> {
    load_graph_data(text)?.to_reference_graph()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ImportStats {
    pub objects: u64,
    pub edges: u64,
    pub labels: u64,
    pub properties: u64,
}

/// Imports `text` into `dir`, which must be absent or empty. On failure the
/// partially written directory is removed.
pub fn import_text(text: &str, dir: &Path, page_size: usize) -> Result<ImportStats> {
    let created = prepare_dir(dir)?;
    let result = load_graph_data(text).and_then(|data| store_graph_dir(dir, page_size, &data));
    if result.is_err() {
        if created {
            let _ = std::fs::remove_dir_all(dir);
        } else if let Ok(entries) = std::fs::read_dir(dir) {
            for e in entries.flatten() {
                let _ = std::fs::remove_file(e.path());
            }
        }
    }
    result
}

pub fn import_file(path: &Path, dir: &Path, page_size: usize) -> Result<ImportStats> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
    import_text(&text, dir, page_size)
}

fn prepare_dir(dir: &Path) -> Result<bool> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| Error::storage(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::InvalidDirectory {
                path: dir.to_path_buf(),
                reason: "directory is not empty".into(),
            });
        }
        Ok(false)
    } else {
        std::fs::create_dir_all(dir).map_err(|e| Error::storage(dir, e))?;
        Ok(true)
    }
}

fn store_graph_dir(dir: &Path, page_size: usize, data: &GraphData) -> Result<ImportStats> {
    let catalog = storage::store_graph(dir, page_size, data)?;
    Ok(ImportStats {
        objects: catalog.objects,
        edges: catalog.edges,
        labels: catalog.labels,
        properties: catalog.properties,
    })
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn escape_name(name: &str, aliases: &BTreeSet<String>) -> String {
    let mut out = String::new();
    let last = name.chars().count().saturating_sub(1);
    for (i, c) in name.chars().enumerate() {
        let edge_ws = c.is_whitespace() && (i == 0 || i == last);
        if matches!(c, '\\' | '(' | ')' | '[' | ']' | '"' | '\n') || edge_ws {
            out.push('\\');
        }
        out.push(c);
    }
    let plain = out == name;
    if plain && (is_integer(name) || name.starts_with("_:") || aliases.contains(name)) {
        out.insert(0, '\\');
    }
    out
}

fn string_of(id: ObjectId, g: &PropertyDomainGraph, what: &str) -> Result<String> {
    match decode(id, &g.strings)? {
        Datum::Str(s) => Ok(quote(&s)),
        other => Err(Error::Unsupported(format!("{what} {other} is not a string"))),
    }
}

/// Writes the graph in the import format. Re-importing the output yields the
/// same graph up to the numbering of anonymous nodes.
pub fn export(g: &PropertyDomainGraph) -> Result<String> {
    let alias = |n: u64| format!("e{n}");
    let aliases: BTreeSet<String> = g.gamma.keys().map(|e| alias(e.payload())).collect();
    let term = |id: ObjectId| -> Result<String> {
        Ok(match decode(id, &g.strings)? {
            Datum::Named(n) => escape_name(&n, &aliases),
            Datum::Anon(n) => format!("_:a{n}"),
            Datum::Edge(n) => alias(n),
            Datum::Str(s) => quote(&s),
            Datum::Int(i) => i.to_string(),
        })
    };
    let mut props_of: BTreeMap<ObjectId, Vec<(ObjectId, ObjectId)>> = BTreeMap::new();
    for (&(o, k), &v) in &g.props {
        props_of.entry(o).or_default().push((k, v));
    }
    let annotations = |id: ObjectId, with_labels: bool| -> Result<String> {
        let mut s = String::new();
        if with_labels {
            for &l in g.labels.get(&id).into_iter().flatten() {
                write!(s, " :{}", string_of(l, g, "label")?).unwrap();
            }
        }
        if let Some(ps) = props_of.get(&id) {
            let mut parts = Vec::new();
            for &(k, v) in ps {
                let value = match decode(v, &g.strings)? {
                    Datum::Str(x) => quote(&x),
                    Datum::Int(i) => i.to_string(),
                    other => {
                        return Err(Error::Unsupported(format!(
                            "property value {other} is not a value"
                        )))
                    }
                };
                parts.push(format!("{}: {value}", string_of(k, g, "property key")?));
            }
            write!(s, " {{{}}}", parts.join(", ")).unwrap();
        }
        Ok(s)
    };

    let mut mentioned = BTreeSet::new();
    for &(s, t, o) in g.gamma.values() {
        mentioned.extend([s, t, o]);
    }
    for ls in g.labels.values() {
        mentioned.extend(ls.iter().copied());
    }
    for (&(_, k), &v) in &g.props {
        mentioned.extend([k, v]);
    }

    let mut out = String::new();
    for &id in &g.objects {
        if id.is_edge() {
            continue;
        }
        let is_node = matches!(
            id.tag(),
            crate::model::Tag::NamedNode | crate::model::Tag::AnonNode
        );
        let annotated = g.labels.contains_key(&id) || props_of.contains_key(&id);
        if is_node || annotated || !mentioned.contains(&id) {
            writeln!(out, "({}){}", term(id)?, annotations(id, true)?).unwrap();
        }
    }
    for (&eid, &(s, t, o)) in &g.gamma {
        for part in [s, t, o] {
            if part.is_edge() && part >= eid {
                return Err(Error::Unsupported(format!(
                    "edge {} refers to a later edge",
                    eid.payload()
                )));
            }
        }
        writeln!(
            out,
            "{} = ({})-[{}]->({}){}",
            alias(eid.payload()),
            term(s)?,
            term(t)?,
            term(o)?,
            annotations(eid, false)?
        )
        .unwrap();
    }
    for &eid in g.gamma.keys() {
        if g.labels.contains_key(&eid) {
            let labels = annotations(eid, true)?;
            let labels_only = match props_of.contains_key(&eid) {
                true => labels[..labels.find(" {").unwrap_or(labels.len())].to_string(),
                false => labels,
            };
            writeln!(out, "({}){}", alias(eid.payload()), labels_only).unwrap();
        }
    }
    Ok(out)
}
