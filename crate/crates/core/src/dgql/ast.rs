//! Surface syntax tree and its canonical printer.

use std::fmt;

use crate::model::Datum;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub String);

impl Var {
    pub fn new(name: impl Into<String>) -> Var {
        Var(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "?{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(Var),
    Const(Datum),
}

impl Term {
    pub fn var(&self) -> Option<&Var> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }
}

/// A selection element: `?v` or `?v.key`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sel {
    Var(Var),
    Prop(Var, String),
}

impl Sel {
    pub fn var(&self) -> &Var {
        match self {
            Sel::Var(v) | Sel::Prop(v, _) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selection {
    Star,
    List(Vec<Sel>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderKey {
    pub sel: Sel,
    pub descending: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Var(Var),
    Prop(Var, String),
    Const(Datum),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Condition {
    Cmp(Operand, CmpOp, Operand),
    Not(Box<Condition>),
    And(Box<Condition>, Box<Condition>),
    Or(Box<Condition>, Box<Condition>),
}

impl Condition {
    pub fn vars(&self, out: &mut Vec<Var>) {
        match self {
            Condition::Cmp(a, _, b) => {
                for o in [a, b] {
                    if let Operand::Var(v) | Operand::Prop(v, _) = o {
                        out.push(v.clone());
                    }
                }
            }
            Condition::Not(c) => c.vars(out),
            Condition::And(a, b) | Condition::Or(a, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }
}

/// Regular path expression over edge types.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Rpq {
    Epsilon,
    Type(Datum),
    Concat(Box<Rpq>, Box<Rpq>),
    Alt(Box<Rpq>, Box<Rpq>),
    Inverse(Box<Rpq>),
    Star(Box<Rpq>),
    Plus(Box<Rpq>),
    Optional(Box<Rpq>),
}

impl Rpq {
    pub fn ty(d: Datum) -> Rpq {
        Rpq::Type(d)
    }

    pub fn named(name: &str) -> Rpq {
        Rpq::Type(Datum::Named(name.into()))
    }

    pub fn concat(a: Rpq, b: Rpq) -> Rpq {
        Rpq::Concat(Box::new(a), Box::new(b))
    }

    pub fn alt(a: Rpq, b: Rpq) -> Rpq {
        Rpq::Alt(Box::new(a), Box::new(b))
    }

    pub fn inverse(a: Rpq) -> Rpq {
        Rpq::Inverse(Box::new(a))
    }

    pub fn star(a: Rpq) -> Rpq {
        Rpq::Star(Box::new(a))
    }

    pub fn plus(a: Rpq) -> Rpq {
        Rpq::Plus(Box::new(a))
    }

    pub fn optional(a: Rpq) -> Rpq {
        Rpq::Optional(Box::new(a))
    }

    /// Rewrites `r+` to `r/r*` and `r?` to `()|r`.
    pub fn expand(&self) -> Rpq {
        match self {
            Rpq::Epsilon | Rpq::Type(_) => self.clone(),
            Rpq::Concat(a, b) => Rpq::concat(a.expand(), b.expand()),
            Rpq::Alt(a, b) => Rpq::alt(a.expand(), b.expand()),
            Rpq::Inverse(a) => Rpq::inverse(a.expand()),
            Rpq::Star(a) => Rpq::star(a.expand()),
            Rpq::Plus(a) => {
                let a = a.expand();
                Rpq::concat(a.clone(), Rpq::star(a))
            }
            Rpq::Optional(a) => Rpq::alt(Rpq::Epsilon, a.expand()),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Rpq::Epsilon | Rpq::Type(_) => 1,
            Rpq::Concat(a, b) | Rpq::Alt(a, b) => 1 + a.size() + b.size(),
            Rpq::Inverse(a) | Rpq::Star(a) | Rpq::Plus(a) | Rpq::Optional(a) => 1 + a.size(),
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Rpq::Alt(..) => 0,
            Rpq::Concat(..) => 1,
            Rpq::Inverse(_) => 2,
            Rpq::Star(_) | Rpq::Plus(_) | Rpq::Optional(_) => 3,
            Rpq::Epsilon | Rpq::Type(_) => 4,
        }
    }

    fn fmt_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.prec() < min {
            write!(f, "(")?;
            self.fmt_at(f, 0)?;
            return write!(f, ")");
        }
        match self {
            Rpq::Epsilon => write!(f, "()"),
            Rpq::Type(d) => write!(f, "{}", Constant(d, NameContext::Rpq)),
            Rpq::Alt(a, b) => {
                a.fmt_at(f, 0)?;
                write!(f, "|")?;
                b.fmt_at(f, 1)
            }
            Rpq::Concat(a, b) => {
                a.fmt_at(f, 1)?;
                write!(f, "/")?;
                b.fmt_at(f, 2)
            }
            Rpq::Inverse(a) => {
                write!(f, "^")?;
                a.fmt_at(f, 2)
            }
            Rpq::Star(a) | Rpq::Plus(a) | Rpq::Optional(a) => {
                a.fmt_at(f, 4)?;
                let op = match self {
                    Rpq::Star(_) => "*",
                    Rpq::Plus(_) => "+",
                    _ => "?",
                };
                write!(f, "{op}")
            }
        }
    }
}

impl fmt::Display for Rpq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(f, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodePattern {
    pub term: Option<Term>,
    pub labels: Vec<String>,
    pub props: Vec<(String, Datum)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TypeSpec {
    Any,
    Const(Datum),
    Var(Var),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Connector {
    Edge {
        direction: Direction,
        var: Option<Var>,
        ty: TypeSpec,
        props: Vec<(String, Datum)>,
    },
    Path {
        direction: Direction,
        var: Option<Var>,
        rpq: Rpq,
    },
}

/// A node pattern followed by zero or more connected node patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub first: NodePattern,
    pub steps: Vec<(Connector, NodePattern)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchPattern {
    Graph(Vec<Element>),
    Optional(Box<MatchPattern>, Box<MatchPattern>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryAst {
    pub explain: bool,
    pub select: Selection,
    pub pattern: MatchPattern,
    pub condition: Option<Condition>,
    pub order: Vec<OrderKey>,
    pub limit: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum NameContext {
    Node,
    EdgeType,
    Rpq,
    Operand,
}

/// Prints a constant so that it parses back in the given position.
pub(crate) struct Constant<'a>(pub &'a Datum, pub NameContext);

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::from("\"");
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

pub(crate) fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '_')
}

fn escape_name(name: &str, inner_spaces: bool) -> String {
    let n = name.chars().count();
    let mut out = String::new();
    for (i, c) in name.chars().enumerate() {
        let plain = c.is_alphanumeric()
            || c == '_'
            || (inner_spaces && c == ' ' && i != 0 && i + 1 != n);
        let leading_digit = i == 0 && c.is_ascii_digit();
        if !plain || leading_digit {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

impl fmt::Display for Constant<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Datum::Str(s) => f.write_str(&quote(s)),
            Datum::Int(i) => write!(f, "{i}"),
            Datum::Named(n) => {
                let escaped = escape_name(n, self.1 != NameContext::Operand);
                let keyword = matches!(self.1, NameContext::EdgeType | NameContext::Operand)
                    && crate::dgql::parser::is_keyword(n);
                if keyword {
                    write!(f, "\\{escaped}")
                } else {
                    f.write_str(&escaped)
                }
            }
            Datum::Anon(n) => write!(f, "_a{n}"),
            Datum::Edge(n) => write!(f, "_e{n}"),
        }
    }
}

fn fmt_key(k: &str) -> String {
    if is_ident(k) {
        k.to_string()
    } else {
        quote(k)
    }
}

impl fmt::Display for Sel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sel::Var(v) => write!(f, "{v}"),
            Sel::Prop(v, k) => write!(f, "{v}.{}", fmt_key(k)),
        }
    }
}

impl Sel {
    /// Column header: `?v` or `?v.key` with the key verbatim.
    pub fn column_name(&self) -> String {
        match self {
            Sel::Var(v) => v.to_string(),
            Sel::Prop(v, k) => format!("{v}.{k}"),
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Var(v) => write!(f, "{v}"),
            Operand::Prop(v, k) => write!(f, "{v}.{}", fmt_key(k)),
            Operand::Const(d) => write!(f, "{}", Constant(d, NameContext::Operand)),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Cmp(a, op, b) => write!(f, "{a} {} {b}", op.symbol()),
            Condition::Not(c) => write!(f, "NOT ({c})"),
            Condition::And(a, b) => write!(f, "({a}) AND ({b})"),
            Condition::Or(a, b) => write!(f, "({a}) OR ({b})"),
        }
    }
}

fn fmt_props(f: &mut fmt::Formatter<'_>, props: &[(String, Datum)]) -> fmt::Result {
    if props.is_empty() {
        return Ok(());
    }
    let parts: Vec<String> = props
        .iter()
        .map(|(k, v)| format!("{}: {}", quote(k), Constant(v, NameContext::Node)))
        .collect();
    write!(f, " {{{}}}", parts.join(", "))
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{v}"),
            Term::Const(d) => write!(f, "{}", Constant(d, NameContext::Node)),
        }
    }
}

impl fmt::Display for NodePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        let mut sep = "";
        if let Some(t) = &self.term {
            write!(f, "{t}")?;
            sep = " ";
        }
        for l in &self.labels {
            write!(f, "{sep}:{}", quote(l))?;
            sep = " ";
        }
        if !self.props.is_empty() {
            if sep.is_empty() {
                // Avoid a leading space that would read as part of a name.
                let parts: Vec<String> = self
                    .props
                    .iter()
                    .map(|(k, v)| format!("{}: {}", quote(k), Constant(v, NameContext::Node)))
                    .collect();
                write!(f, "{{{}}}", parts.join(", "))?;
            } else {
                fmt_props(f, &self.props)?;
            }
        }
        write!(f, ")")
    }
}

impl fmt::Display for Connector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Connector::Edge {
                direction,
                var,
                ty,
                props,
            } => {
                let mut inner = Vec::new();
                if let Some(v) = var {
                    inner.push(v.to_string());
                }
                match ty {
                    TypeSpec::Any => {}
                    TypeSpec::Const(d) => {
                        inner.push(format!(":{}", Constant(d, NameContext::EdgeType)))
                    }
                    TypeSpec::Var(v) => inner.push(format!("TYPE({v})")),
                }
                let mut body = inner.join(" ");
                if !props.is_empty() {
                    let parts: Vec<String> = props
                        .iter()
                        .map(|(k, v)| format!("{}: {}", quote(k), Constant(v, NameContext::Node)))
                        .collect();
                    if !body.is_empty() {
                        body.push(' ');
                    }
                    body.push_str(&format!("{{{}}}", parts.join(", ")));
                }
                match direction {
                    Direction::Forward => write!(f, "-[{body}]->"),
                    Direction::Backward => write!(f, "<-[{body}]-"),
                }
            }
            Connector::Path {
                direction,
                var,
                rpq,
            } => {
                let var = var.as_ref().map(|v| format!("{v} ")).unwrap_or_default();
                match direction {
                    Direction::Forward => write!(f, "=[{var}{rpq}]=>"),
                    Direction::Backward => write!(f, "<=[{var}{rpq}]="),
                }
            }
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.first)?;
        for (c, n) in &self.steps {
            write!(f, "{c}{n}")?;
        }
        Ok(())
    }
}

impl fmt::Display for MatchPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchPattern::Graph(elements) => {
                let parts: Vec<String> = elements.iter().map(|e| e.to_string()).collect();
                f.write_str(&parts.join(", "))
            }
            MatchPattern::Optional(left, right) => write!(f, "{left} OPTIONAL {{{right}}}"),
        }
    }
}

impl fmt::Display for OrderKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.descending {
            write!(f, "DESC({})", self.sel)
        } else {
            write!(f, "ASC({})", self.sel)
        }
    }
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.explain {
            write!(f, "EXPLAIN ")?;
        }
        write!(f, "SELECT ")?;
        match &self.select {
            Selection::Star => write!(f, "*")?,
            Selection::List(sels) => {
                let parts: Vec<String> = sels.iter().map(|s| s.to_string()).collect();
                write!(f, "{}", parts.join(", "))?;
            }
        }
        write!(f, " MATCH {}", self.pattern)?;
        if let Some(c) = &self.condition {
            write!(f, " WHERE {c}")?;
        }
        if !self.order.is_empty() {
            let parts: Vec<String> = self.order.iter().map(|o| o.to_string()).collect();
            write!(f, " ORDER BY {}", parts.join(", "))?;
        }
        if let Some(n) = self.limit {
            write!(f, " LIMIT {n}")?;
        }
        Ok(())
    }
}
