//! Desugaring into relational atoms, and the well-designedness check.

use std::collections::BTreeSet;
use std::fmt;

use crate::dgql::ast::*;
use crate::error::{Error, Result};
use crate::model::Datum;

/// One relation atom of a basic graph pattern.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Atom {
    /// `Objects(term)`.
    Object(Term),
    /// `DomainGraph(source, type, target, eid)`.
    Edge {
        source: Term,
        ty: Term,
        target: Term,
        eid: Term,
    },
    Label {
        object: Term,
        label: Datum,
    },
    Prop {
        object: Term,
        key: Datum,
        value: Term,
    },
    Path {
        source: Term,
        rpq: Rpq,
        target: Term,
        var: Option<Var>,
    },
}

impl Atom {
    /// Object-valued terms, in relation column order.
    pub fn terms(&self) -> Vec<&Term> {
        match self {
            Atom::Object(t) => vec![t],
            Atom::Edge {
                source,
                ty,
                target,
                eid,
            } => vec![source, ty, target, eid],
            Atom::Label { object, .. } => vec![object],
            Atom::Prop { object, value, .. } => vec![object, value],
            Atom::Path { source, target, .. } => vec![source, target],
        }
    }

    pub fn vars(&self) -> Vec<&Var> {
        let mut out: Vec<&Var> = self.terms().into_iter().filter_map(Term::var).collect();
        if let Atom::Path { var: Some(v), .. } = self {
            out.push(v);
        }
        out
    }

    pub fn is_path(&self) -> bool {
        matches!(self, Atom::Path { .. })
    }

    pub fn map_terms(&self, f: &mut impl FnMut(&Term) -> Term) -> Atom {
        match self {
            Atom::Object(t) => Atom::Object(f(t)),
            Atom::Edge {
                source,
                ty,
                target,
                eid,
            } => Atom::Edge {
                source: f(source),
                ty: f(ty),
                target: f(target),
                eid: f(eid),
            },
            Atom::Label { object, label } => Atom::Label {
                object: f(object),
                label: label.clone(),
            },
            Atom::Prop { object, key, value } => Atom::Prop {
                object: f(object),
                key: key.clone(),
                value: f(value),
            },
            Atom::Path {
                source,
                rpq,
                target,
                var,
            } => Atom::Path {
                source: f(source),
                rpq: rpq.clone(),
                target: f(target),
                var: var.clone(),
            },
        }
    }
}

fn fmt_datum(d: &Datum) -> String {
    match d {
        Datum::Str(s) => quote(s),
        other => other.to_string(),
    }
}

fn fmt_term(t: &Term) -> String {
    match t {
        Term::Var(v) => v.to_string(),
        Term::Const(d) => fmt_datum(d),
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Object(t) => write!(f, "Object({})", fmt_term(t)),
            Atom::Edge {
                source,
                ty,
                target,
                eid,
            } => write!(
                f,
                "Edge({}, {}, {}, {})",
                fmt_term(source),
                fmt_term(ty),
                fmt_term(target),
                fmt_term(eid)
            ),
            Atom::Label { object, label } => {
                write!(f, "Label({}, {})", fmt_term(object), fmt_datum(label))
            }
            Atom::Prop { object, key, value } => write!(
                f,
                "Prop({}, {}, {})",
                fmt_term(object),
                fmt_datum(key),
                fmt_term(value)
            ),
            Atom::Path {
                source,
                rpq,
                target,
                var,
            } => {
                write!(f, "Path({}, {rpq}, {}", fmt_term(source), fmt_term(target))?;
                if let Some(v) = var {
                    write!(f, ", {v}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pattern {
    Basic(Vec<Atom>),
    Optional(Box<Pattern>, Box<Pattern>),
}

impl Pattern {
    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Pattern::Basic(atoms) => {
                for a in atoms {
                    out.extend(a.vars().into_iter().cloned());
                }
            }
            Pattern::Optional(l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    pub fn atom_count(&self) -> usize {
        match self {
            Pattern::Basic(a) => a.len(),
            Pattern::Optional(l, r) => l.atom_count() + r.atom_count(),
        }
    }
}

/// A desugared graph query: selection, pattern, condition, order, limit.
///
/// An absent condition accepts every mapping; an empty order keeps the
/// evaluation order; an absent limit returns every row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub explain: bool,
    pub select: Vec<Sel>,
    pub pattern: Pattern,
    pub condition: Option<Condition>,
    pub order: Vec<OrderKey>,
    pub limit: Option<u64>,
}

struct Desugarer {
    taken: BTreeSet<String>,
    next: usize,
    user_order: Vec<Var>,
}

impl Desugarer {
    fn fresh(&mut self) -> Var {
        loop {
            let name = format!("_c{}", self.next);
            self.next += 1;
            if !self.taken.contains(&name) {
                return Var(name);
            }
        }
    }

    fn note(&mut self, v: &Var) {
        if !self.user_order.contains(v) {
            self.user_order.push(v.clone());
        }
    }

    fn node_term(&mut self, n: &NodePattern) -> Term {
        match &n.term {
            Some(t) => {
                if let Term::Var(v) = t {
                    self.note(v);
                }
                t.clone()
            }
            None => Term::Var(self.fresh()),
        }
    }

    fn annotations(n: &NodePattern, term: &Term, atoms: &mut Vec<Atom>) {
        for l in &n.labels {
            atoms.push(Atom::Label {
                object: term.clone(),
                label: Datum::Str(l.clone()),
            });
        }
        props(term, &n.props, atoms);
    }

    fn pattern(&mut self, p: &MatchPattern) -> Pattern {
        match p {
            MatchPattern::Graph(elements) => {
                let mut atoms = Vec::new();
                for e in elements {
                    self.element(e, &mut atoms);
                }
                Pattern::Basic(atoms)
            }
            MatchPattern::Optional(l, r) => {
                let l = self.pattern(l);
                let r = self.pattern(r);
                Pattern::Optional(Box::new(l), Box::new(r))
            }
        }
    }

    fn element(&mut self, e: &Element, atoms: &mut Vec<Atom>) {
        let mut prev = self.node_term(&e.first);
        Self::annotations(&e.first, &prev, atoms);
        if e.steps.is_empty() && e.first.labels.is_empty() && e.first.props.is_empty() {
            atoms.push(Atom::Object(prev.clone()));
        }
        for (conn, node) in &e.steps {
            // Connector variables come before the next node in reading order.
            let conn_vars: Vec<Var> = match conn {
                Connector::Edge { var, ty, .. } => var
                    .iter()
                    .cloned()
                    .chain(match ty {
                        TypeSpec::Var(t) => Some(t.clone()),
                        _ => None,
                    })
                    .collect(),
                Connector::Path { var, .. } => var.iter().cloned().collect(),
            };
            for v in &conn_vars {
                self.note(v);
            }
            let next = self.node_term(node);
            Self::annotations(node, &next, atoms);
            match conn {
                Connector::Edge {
                    direction,
                    var,
                    ty,
                    props: edge_props,
                } => {
                    let eid = Term::Var(var.clone().unwrap_or_else(|| self.fresh()));
                    let ty = match ty {
                        TypeSpec::Any => Term::Var(self.fresh()),
                        TypeSpec::Const(d) => Term::Const(d.clone()),
                        TypeSpec::Var(v) => Term::Var(v.clone()),
                    };
                    let (source, target) = match direction {
                        Direction::Forward => (prev.clone(), next.clone()),
                        Direction::Backward => (next.clone(), prev.clone()),
                    };
                    atoms.push(Atom::Edge {
                        source,
                        ty,
                        target,
                        eid: eid.clone(),
                    });
                    props(&eid, edge_props, atoms);
                }
                Connector::Path {
                    direction,
                    var,
                    rpq,
                } => {
                    let (source, target) = match direction {
                        Direction::Forward => (prev.clone(), next.clone()),
                        Direction::Backward => (next.clone(), prev.clone()),
                    };
                    atoms.push(Atom::Path {
                        source,
                        rpq: rpq.expand(),
                        target,
                        var: var.clone(),
                    });
                }
            }
            prev = next;
        }
    }
}

fn props(term: &Term, props: &[(String, Datum)], atoms: &mut Vec<Atom>) {
    for (k, v) in props {
        atoms.push(Atom::Prop {
            object: term.clone(),
            key: Datum::Str(k.clone()),
            value: Term::Const(v.clone()),
        });
    }
}

fn ast_vars(q: &QueryAst) -> BTreeSet<String> {
    fn pattern(p: &MatchPattern, out: &mut BTreeSet<String>) {
        match p {
            MatchPattern::Graph(els) => {
                for e in els {
                    let nodes = std::iter::once(&e.first).chain(e.steps.iter().map(|s| &s.1));
                    for n in nodes {
                        if let Some(Term::Var(v)) = &n.term {
                            out.insert(v.0.clone());
                        }
                    }
                    for (c, _) in &e.steps {
                        match c {
                            Connector::Edge { var, ty, .. } => {
                                out.extend(var.iter().map(|v| v.0.clone()));
                                if let TypeSpec::Var(t) = ty {
                                    out.insert(t.0.clone());
                                }
                            }
                            Connector::Path { var, .. } => {
                                out.extend(var.iter().map(|v| v.0.clone()))
                            }
                        }
                    }
                }
            }
            MatchPattern::Optional(l, r) => {
                pattern(l, out);
                pattern(r, out);
            }
        }
    }
    let mut out = BTreeSet::new();
    pattern(&q.pattern, &mut out);
    if let Selection::List(sels) = &q.select {
        out.extend(sels.iter().map(|s| s.var().0.clone()));
    }
    out.extend(q.order.iter().map(|o| o.sel.var().0.clone()));
    if let Some(c) = &q.condition {
        let mut vs = Vec::new();
        c.vars(&mut vs);
        out.extend(vs.into_iter().map(|v| v.0));
    }
    out
}

pub fn desugar(ast: &QueryAst) -> Query {
    let mut d = Desugarer {
        taken: ast_vars(ast),
        next: 0,
        user_order: Vec::new(),
    };
    let pattern = d.pattern(&ast.pattern);
    let select = match &ast.select {
        Selection::Star => d.user_order.iter().cloned().map(Sel::Var).collect(),
        Selection::List(s) => s.clone(),
    };
    Query {
        explain: ast.explain,
        select,
        pattern,
        condition: ast.condition.clone(),
        order: ast.order.clone(),
        limit: ast.limit,
    }
}

/// Rejects queries whose OPTIONAL nesting is not well designed, whose
/// condition mentions variables absent from the pattern, or whose selection
/// or order refers to unknown variables.
pub fn check_well_designed(q: &Query) -> Result<()> {
    let vars = q.pattern.vars();
    for sel in q.select.iter().chain(q.order.iter().map(|o| &o.sel)) {
        if !vars.contains(sel.var()) {
            return Err(Error::UnknownVariable(sel.var().to_string()));
        }
    }
    check_optional(&q.pattern, &BTreeSet::new())?;
    if let Some(c) = &q.condition {
        let mut cv = Vec::new();
        c.vars(&mut cv);
        if let Some(v) = cv.iter().find(|v| !vars.contains(v)) {
            return Err(Error::WellDesignedness(format!(
                "variable {v} in WHERE does not occur in MATCH"
            )));
        }
    }
    Ok(())
}

fn check_optional(p: &Pattern, outside: &BTreeSet<Var>) -> Result<()> {
    if let Pattern::Optional(l, r) = p {
        let lv = l.vars();
        let rv = r.vars();
        if let Some(v) = rv.iter().find(|v| outside.contains(*v) && !lv.contains(*v)) {
            return Err(Error::WellDesignedness(format!(
                "variable {v} occurs inside OPTIONAL {{{}}} and outside it, but not in the pattern it extends",
                pattern_summary(r)
            )));
        }
        let mut lo = outside.clone();
        lo.extend(rv.iter().cloned());
        check_optional(l, &lo)?;
        let mut ro = outside.clone();
        ro.extend(lv);
        check_optional(r, &ro)?;
    }
    Ok(())
}

fn pattern_summary(p: &Pattern) -> String {
    match p {
        Pattern::Basic(atoms) => atoms
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(", "),
        Pattern::Optional(l, r) => {
            format!("{} OPTIONAL {{{}}}", pattern_summary(l), pattern_summary(r))
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&pattern_summary(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgql::parse;

    fn compile(q: &str) -> Query {
        desugar(&parse(q).unwrap())
    }

    #[test]
    fn figure7_atoms() {
        let q = compile("SELECT ?x, ?y MATCH (?x :human)-[father]->(?y :human)");
        let Pattern::Basic(atoms) = &q.pattern else {
            panic!()
        };
        let shown: Vec<String> = atoms.iter().map(|a| a.to_string()).collect();
        assert_eq!(
            shown,
            vec![
                "Label(?x, \"human\")",
                "Label(?y, \"human\")",
                "Edge(?x, father, ?y, ?_c0)"
            ]
        );
    }

    #[test]
    fn lone_node_is_object_atom() {
        let q = compile("SELECT ?x MATCH (?x)");
        assert_eq!(
            q.pattern,
            Pattern::Basic(vec![Atom::Object(Term::Var(Var::new("x")))])
        );
    }

    #[test]
    fn fresh_variables_avoid_user_names() {
        let q = compile("SELECT ?_c0 MATCH (?_c0)-[t]->(?_c2), ()");
        let vars: Vec<String> = q.pattern.vars().into_iter().map(|v| v.0).collect();
        assert_eq!(vars, vec!["_c0", "_c1", "_c2", "_c3"]);
    }

    #[test]
    fn star_lists_user_variables_in_order() {
        let q = compile("SELECT * MATCH (?x)-[?e TYPE(?t)]->(?y), (?y)=[?p a*]=>()");
        let names: Vec<String> = q.select.iter().map(|s| s.to_string()).collect();
        assert_eq!(names, vec!["?x", "?e", "?t", "?y", "?p"]);
    }

    #[test]
    fn derived_operators_expand() {
        let q = compile("SELECT ?y MATCH (?x)=[a+/b?]=>(?y)");
        let Pattern::Basic(atoms) = &q.pattern else {
            panic!()
        };
        let Atom::Path { rpq, .. } = &atoms[0] else {
            panic!()
        };
        let a = Rpq::named("a");
        assert_eq!(
            *rpq,
            Rpq::concat(
                Rpq::concat(a.clone(), Rpq::star(a)),
                Rpq::alt(Rpq::Epsilon, Rpq::named("b"))
            )
        );
    }

    #[test]
    fn range_stays_in_condition_while_inline_becomes_atom() {
        let q = compile(r#"SELECT ?x MATCH (?x :human) WHERE ?x.children >= "2""#);
        assert!(q.condition.is_some());
        let q = compile(r#"SELECT ?x MATCH (?x {children: "2"})"#);
        assert_eq!(
            q.pattern,
            Pattern::Basic(vec![Atom::Prop {
                object: Term::Var(Var::new("x")),
                key: Datum::Str("children".into()),
                value: Term::Const(Datum::Str("2".into()))
            }])
        );
    }

    #[test]
    fn well_designedness() {
        let ok = compile(
            "SELECT ?x, ?y, ?z MATCH (?x)-[?e1 position held]->(President of Chile),
             OPTIONAL { (?e1)-[replaces]->(?y)
               OPTIONAL { (?y)-[?e2 position held]->(President of Chile), (?e2)-[replaces]->(?z) } }",
        );
        check_well_designed(&ok).unwrap();

        let bad = compile(
            "SELECT ?x MATCH (?x)-[a]->(?w) OPTIONAL {(?x)-[b]->(?y)} OPTIONAL {(?y)-[c]->(?z)}",
        );
        match check_well_designed(&bad) {
            Err(Error::WellDesignedness(m)) => assert!(m.contains("?y"), "{m}"),
            other => panic!("{other:?}"),
        }

        let bad = compile("SELECT ?x MATCH (?x) WHERE ?z == 1");
        match check_well_designed(&bad) {
            Err(Error::WellDesignedness(m)) => assert!(m.contains("?z"), "{m}"),
            other => panic!("{other:?}"),
        }

        let bad = compile("SELECT ?q MATCH (?x)");
        assert!(matches!(check_well_designed(&bad), Err(Error::UnknownVariable(v)) if v == "?q"));
    }
}
