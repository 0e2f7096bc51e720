//! Character-level recursive descent parser for DGQL.

use crate::dgql::ast::*;
use crate::error::{Error, Result};
use crate::model::Datum;

const KEYWORDS: [&str; 14] = [
    "SELECT", "MATCH", "WHERE", "ORDER", "BY", "LIMIT", "OPTIONAL", "AND", "OR", "NOT", "ASC",
    "DESC", "TYPE", "EXPLAIN",
];

pub(crate) fn is_keyword(s: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(s))
}

pub fn parse(text: &str) -> Result<QueryAst> {
    let mut p = Parser {
        chars: text.chars().collect(),
        pos: 0,
    };
    p.query()
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn err(&self, msg: impl Into<String>) -> Error {
        self.err_at(self.pos, msg)
    }

    fn err_at(&self, pos: usize, msg: impl Into<String>) -> Error {
        let mut line = 1;
        let mut col = 1;
        for &c in &self.chars[..pos.min(self.chars.len())] {
            if c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
        }
        Error::syntax(line, col, msg)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.chars.get(self.pos + n).copied()
    }

    fn ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn looking_at(&self, s: &str) -> bool {
        s.chars().enumerate().all(|(i, c)| self.peek_at(i) == Some(c))
    }

    fn eat(&mut self, s: &str) -> bool {
        self.ws();
        if self.looking_at(s) {
            self.pos += s.chars().count();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<()> {
        if self.eat(s) {
            Ok(())
        } else if self.peek().is_none() {
            Err(self.err(format!("expected `{s}` but the query ended")))
        } else {
            Err(self.err(format!("expected `{s}`")))
        }
    }

    /// The identifier at the cursor, without consuming it.
    fn word_ahead(&self) -> String {
        let mut s = String::new();
        let mut i = self.pos;
        while let Some(&c) = self.chars.get(i) {
            if c.is_alphanumeric() || c == '_' {
                s.push(c);
                i += 1;
            } else {
                break;
            }
        }
        s
    }

    fn keyword_ahead(&mut self, kw: &str) -> bool {
        self.ws();
        self.word_ahead().eq_ignore_ascii_case(kw)
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.keyword_ahead(kw) {
            self.pos += kw.len();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.err(format!("expected {kw}")))
        }
    }

    fn query(&mut self) -> Result<QueryAst> {
        let explain = self.eat_keyword("EXPLAIN");
        self.expect_keyword("SELECT")?;
        let select = self.selection()?;
        self.expect_keyword("MATCH")?;
        let pattern = self.match_pattern()?;
        let mut q = QueryAst {
            explain,
            select,
            pattern,
            condition: None,
            order: Vec::new(),
            limit: None,
        };
        if self.eat_keyword("WHERE") {
            q.condition = Some(self.condition()?);
        }
        let mut seen_order = false;
        let mut seen_limit = false;
        loop {
            self.ws();
            if !seen_order && self.eat_keyword("ORDER") {
                self.expect_keyword("BY")?;
                q.order = self.order_keys()?;
                seen_order = true;
            } else if !seen_limit && self.eat_keyword("LIMIT") {
                self.ws();
                let start = self.pos;
                let digits = self.word_ahead();
                if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(self.err("LIMIT needs a positive integer"));
                }
                self.pos += digits.len();
                let n: u64 = digits
                    .parse()
                    .map_err(|_| self.err_at(start, "LIMIT out of range"))?;
                if n == 0 {
                    return Err(self.err_at(start, "LIMIT must be at least 1"));
                }
                q.limit = Some(n);
                seen_limit = true;
            } else {
                break;
            }
        }
        self.ws();
        if self.peek() == Some(';') {
            self.pos += 1;
            self.ws();
        }
        if self.peek().is_some() {
            let word = self.word_ahead();
            if !word.is_empty() {
                return Err(Error::UnknownClause(word));
            }
            return Err(self.err("unexpected input after the query"));
        }
        Ok(q)
    }

    fn variable(&mut self) -> Result<Var> {
        self.ws();
        if self.peek() != Some('?') {
            return Err(self.err("expected a variable"));
        }
        self.pos += 1;
        let name = self.word_ahead();
        if name.is_empty() {
            return Err(self.err("expected a variable name after `?`"));
        }
        self.pos += name.chars().count();
        Ok(Var(name))
    }

    fn at_variable(&mut self) -> bool {
        self.ws();
        self.peek() == Some('?')
            && matches!(self.peek_at(1), Some(c) if c.is_alphanumeric() || c == '_')
    }

    fn quoted(&mut self) -> Result<String> {
        self.ws();
        let start = self.pos;
        if self.peek() != Some('"') {
            return Err(self.err("expected a quoted string"));
        }
        self.pos += 1;
        let mut s = String::new();
        loop {
            match self.peek() {
                None => return Err(self.err_at(start, "unterminated string")),
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

    /// A property key after `.`: identifier or quoted string.
    fn key(&mut self) -> Result<String> {
        if self.peek() == Some('"') {
            return self.quoted();
        }
        let w = self.word_ahead();
        if w.is_empty() {
            return Err(self.err("expected a property key"));
        }
        self.pos += w.chars().count();
        Ok(w)
    }

    fn sel(&mut self) -> Result<Sel> {
        let v = self.variable()?;
        if self.peek() == Some('.') {
            self.pos += 1;
            Ok(Sel::Prop(v, self.key()?))
        } else {
            Ok(Sel::Var(v))
        }
    }

    fn selection(&mut self) -> Result<Selection> {
        if self.eat("*") {
            return Ok(Selection::Star);
        }
        let mut sels = vec![self.sel()?];
        while self.eat(",") {
            sels.push(self.sel()?);
        }
        Ok(Selection::List(sels))
    }

    fn order_keys(&mut self) -> Result<Vec<OrderKey>> {
        let mut keys = vec![self.order_key()?];
        while self.eat(",") {
            keys.push(self.order_key()?);
        }
        Ok(keys)
    }

    fn order_key(&mut self) -> Result<OrderKey> {
        for (kw, descending) in [("DESC", true), ("ASC", false)] {
            if self.keyword_ahead(kw) {
                let save = self.pos;
                self.pos += kw.len();
                if self.eat("(") {
                    let sel = self.sel()?;
                    self.expect(")")?;
                    return Ok(OrderKey { sel, descending });
                }
                self.pos = save;
            }
        }
        let sel = self.sel()?;
        let descending = if self.eat_keyword("DESC") {
            true
        } else {
            self.eat_keyword("ASC");
            false
        };
        Ok(OrderKey { sel, descending })
    }

    fn match_pattern(&mut self) -> Result<MatchPattern> {
        let mut elements = vec![self.element()?];
        loop {
            let had_comma = self.eat(",");
            self.ws();
            if self.peek() == Some('(') {
                elements.push(self.element()?);
            } else if self.keyword_ahead("OPTIONAL") {
                break;
            } else if had_comma {
                return Err(self.err("expected a pattern after `,`"));
            } else {
                break;
            }
        }
        let mut pattern = MatchPattern::Graph(elements);
        while self.eat_keyword("OPTIONAL") {
            self.expect("{")?;
            let inner = self.match_pattern()?;
            self.expect("}")?;
            pattern = MatchPattern::Optional(Box::new(pattern), Box::new(inner));
            let had_comma = self.eat(",");
            self.ws();
            if self.peek() == Some('(') {
                return Err(self.err("graph patterns must come before OPTIONAL"));
            }
            if had_comma && !self.keyword_ahead("OPTIONAL") {
                return Err(self.err("expected OPTIONAL after `,`"));
            }
        }
        Ok(pattern)
    }

    fn element(&mut self) -> Result<Element> {
        let first = self.node()?;
        let mut steps = Vec::new();
        while let Some(c) = self.connector()? {
            steps.push((c, self.node()?));
        }
        Ok(Element { first, steps })
    }

    /// Bare text up to an unescaped stop character, trimmed. Returns the
    /// text and whether it contained an escape.
    fn bare(&mut self, stops: &[char]) -> (String, bool) {
        let mut s = String::new();
        let mut escaped = false;
        let mut keep = 0;
        while let Some(c) = self.peek() {
            if stops.contains(&c) {
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
        let len = s.trim_end().len().max(keep);
        s.truncate(len);
        (s, escaped)
    }

    /// A constant written bare or quoted: string, integer or named object.
    fn constant(&mut self, stops: &[char]) -> Result<Datum> {
        self.ws();
        if self.peek() == Some('"') {
            return Ok(Datum::Str(self.quoted()?));
        }
        let start = self.pos;
        let (s, escaped) = self.bare(stops);
        if s.is_empty() {
            self.pos = start;
            return Err(self.err("expected a name or value"));
        }
        if !escaped && is_integer(&s) {
            return s
                .parse()
                .map(Datum::Int)
                .map_err(|_| self.err_at(start, "integer out of range"));
        }
        Ok(Datum::Named(s))
    }

    fn props(&mut self) -> Result<Vec<(String, Datum)>> {
        let mut out = Vec::new();
        if self.eat("}") {
            return Ok(out);
        }
        loop {
            self.ws();
            let key = if self.peek() == Some('"') {
                self.quoted()?
            } else {
                let (k, _) = self.bare(&[':', ',', '}']);
                if k.is_empty() {
                    return Err(self.err("expected a property key"));
                }
                k
            };
            self.expect(":")?;
            self.ws();
            let value = match self.constant(&[',', '}'])? {
                // A bare word is read as a string value.
                Datum::Named(n) => Datum::Str(n),
                d => d,
            };
            out.push((key, value));
            if self.eat(",") {
                continue;
            }
            self.expect("}")?;
            return Ok(out);
        }
    }

    fn label(&mut self) -> Result<String> {
        self.ws();
        if self.peek() == Some('"') {
            return self.quoted();
        }
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if c.is_whitespace() || matches!(c, ':' | '{' | ')' | '}') {
                break;
            }
            self.pos += 1;
            if c == '\\' {
                if let Some(n) = self.peek() {
                    self.pos += 1;
                    s.push(n);
                    continue;
                }
            }
            s.push(c);
        }
        if s.is_empty() {
            return Err(self.err("expected a label"));
        }
        Ok(s)
    }

    fn node(&mut self) -> Result<NodePattern> {
        self.expect("(")?;
        let mut node = NodePattern::default();
        self.ws();
        if self.at_variable() {
            node.term = Some(Term::Var(self.variable()?));
        } else if !matches!(self.peek(), Some(':' | '{' | ')')) {
            node.term = Some(Term::Const(self.constant(&[')', '{', ':'])?));
        }
        while self.eat(":") {
            node.labels.push(self.label()?);
        }
        if self.eat("{") {
            node.props = self.props()?;
        }
        self.expect(")")?;
        Ok(node)
    }

    fn connector(&mut self) -> Result<Option<Connector>> {
        self.ws();
        let (direction, path) = if self.looking_at("-[") || self.looking_at("->") {
            (Direction::Forward, false)
        } else if self.looking_at("<-") {
            (Direction::Backward, false)
        } else if self.looking_at("=[") {
            (Direction::Forward, true)
        } else if self.looking_at("<=[") {
            (Direction::Backward, true)
        } else {
            return Ok(None);
        };
        if path {
            self.pos += if direction == Direction::Forward { 2 } else { 3 };
            let var = if self.at_variable() {
                Some(self.variable()?)
            } else {
                None
            };
            let rpq = self.rpq_alt()?;
            self.expect(if direction == Direction::Forward { "]=>" } else { "]=" })?;
            return Ok(Some(Connector::Path {
                direction,
                var,
                rpq,
            }));
        }
        let forward = direction == Direction::Forward;
        self.pos += if forward { 1 } else { 2 };
        let mut var = None;
        let mut ty = TypeSpec::Any;
        let mut props = Vec::new();
        let bracket = self.eat("[");
        if bracket {
            if self.at_variable() {
                var = Some(self.variable()?);
            }
            self.ws();
            let save = self.pos;
            let _ = self.eat("=");
            if self.eat_keyword("TYPE") && self.eat("(") {
                ty = TypeSpec::Var(self.variable()?);
                self.expect(")")?;
            } else {
                self.pos = save;
                let _ = self.eat(":");
                self.ws();
                if !matches!(self.peek(), Some('{' | ']')) {
                    ty = TypeSpec::Const(self.constant(&[']', '{'])?);
                }
            }
            if self.eat("{") {
                props = self.props()?;
            }
            self.expect("]")?;
        }
        match (forward, bracket) {
            (true, true) => self.expect("->")?,
            (true, false) => self.expect(">")?,
            (false, true) => self.expect("-")?,
            (false, false) => {}
        }
        Ok(Some(Connector::Edge {
            direction,
            var,
            ty,
            props,
        }))
    }

    fn rpq_alt(&mut self) -> Result<Rpq> {
        let mut r = self.rpq_concat()?;
        while self.eat("|") {
            r = Rpq::alt(r, self.rpq_concat()?);
        }
        Ok(r)
    }

    fn rpq_concat(&mut self) -> Result<Rpq> {
        let mut r = self.rpq_unary()?;
        while self.eat("/") {
            r = Rpq::concat(r, self.rpq_unary()?);
        }
        Ok(r)
    }

    fn rpq_unary(&mut self) -> Result<Rpq> {
        if self.eat("^") {
            return Ok(Rpq::inverse(self.rpq_unary()?));
        }
        let mut r = self.rpq_primary()?;
        loop {
            if self.eat("*") {
                r = Rpq::star(r);
            } else if self.eat("+") {
                r = Rpq::plus(r);
            } else if self.looking_at_ws("?") {
                self.eat("?");
                r = Rpq::optional(r);
            } else {
                break;
            }
        }
        Ok(r)
    }

    fn looking_at_ws(&mut self, s: &str) -> bool {
        self.ws();
        self.looking_at(s)
    }

    fn rpq_primary(&mut self) -> Result<Rpq> {
        if self.eat("(") {
            if self.eat(")") {
                return Ok(Rpq::Epsilon);
            }
            let r = self.rpq_alt()?;
            self.expect(")")?;
            return Ok(r);
        }
        let _ = self.eat(":");
        self.ws();
        match self.peek() {
            None => Err(self.err("expected an edge type but the query ended")),
            Some(c) if "|/^*+?()[]=".contains(c) => Err(self.err("expected an edge type")),
            _ => Ok(Rpq::Type(
                self.constant(&['|', '/', '^', '*', '+', '?', '(', ')', '[', ']', '='])?,
            )),
        }
    }

    fn condition(&mut self) -> Result<Condition> {
        let mut c = self.cond_and()?;
        while self.eat_keyword("OR") {
            c = Condition::Or(Box::new(c), Box::new(self.cond_and()?));
        }
        Ok(c)
    }

    fn cond_and(&mut self) -> Result<Condition> {
        let mut c = self.cond_not()?;
        while self.eat_keyword("AND") {
            c = Condition::And(Box::new(c), Box::new(self.cond_not()?));
        }
        Ok(c)
    }

    fn cond_not(&mut self) -> Result<Condition> {
        if self.eat_keyword("NOT") {
            return Ok(Condition::Not(Box::new(self.cond_not()?)));
        }
        if self.eat("(") {
            let c = self.condition()?;
            self.expect(")")?;
            return Ok(c);
        }
        let a = self.operand()?;
        self.ws();
        let op = [
            ("==", CmpOp::Eq),
            ("!=", CmpOp::Ne),
            ("<=", CmpOp::Le),
            (">=", CmpOp::Ge),
            ("<", CmpOp::Lt),
            (">", CmpOp::Gt),
        ]
        .into_iter()
        .find(|(s, _)| self.eat(s))
        .map(|(_, op)| op)
        .ok_or_else(|| self.err("expected a comparison operator"))?;
        let b = self.operand()?;
        Ok(Condition::Cmp(a, op, b))
    }

    fn operand(&mut self) -> Result<Operand> {
        self.ws();
        match self.peek() {
            Some('?') => Ok(match self.sel()? {
                Sel::Var(v) => Operand::Var(v),
                Sel::Prop(v, k) => Operand::Prop(v, k),
            }),
            Some('"') => Ok(Operand::Const(Datum::Str(self.quoted()?))),
            None => Err(self.err("expected an operand but the query ended")),
            _ => {
                let start = self.pos;
                let mut s = String::new();
                let mut escaped = false;
                while let Some(c) = self.peek() {
                    if c == '\\' {
                        if let Some(n) = self.peek_at(1) {
                            self.pos += 2;
                            s.push(n);
                            escaped = true;
                            continue;
                        }
                    }
                    if c.is_alphanumeric() || c == '_' || (c == '-' && s.is_empty()) {
                        s.push(c);
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                if s.is_empty() || (!escaped && is_keyword(&s)) {
                    self.pos = start;
                    return Err(self.err("expected an operand"));
                }
                if !escaped && is_integer(&s) {
                    return s
                        .parse()
                        .map(|i| Operand::Const(Datum::Int(i)))
                        .map_err(|_| self.err_at(start, "integer out of range"));
                }
                if s == "-" {
                    self.pos = start;
                    return Err(self.err("expected an operand"));
                }
                Ok(Operand::Const(Datum::Named(s)))
            }
        }
    }
}

fn is_integer(s: &str) -> bool {
    let digits = s.strip_prefix('-').unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}
