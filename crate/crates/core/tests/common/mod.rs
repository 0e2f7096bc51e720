#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use mdb_core::dgql::{Pattern, Query, Rpq};
use mdb_core::model::{decode, Datum, ObjectId, PropertyDomainGraph};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub struct GraphShape {
    pub nodes: usize,
    pub anon: usize,
    pub types: usize,
    pub edges: usize,
    pub labels: usize,
    pub props: usize,
}

impl GraphShape {
    pub fn small() -> GraphShape {
        GraphShape {
            nodes: 8,
            anon: 2,
            types: 3,
            edges: 20,
            labels: 6,
            props: 8,
        }
    }
}

pub const KEYS: [&str; 3] = ["age", "name", "first name"];
pub const VALUES: [&str; 4] = ["\"a\"", "\"bb\"", "\"a longer value\"", "2"];

pub fn node_name(i: usize) -> String {
    if i % 3 == 2 {
        format!("node {i}")
    } else {
        format!("n{i}")
    }
}

/// Import text for a random graph. Edges may start at earlier edges, types
/// may coincide with node names, and targets may be values.
pub fn random_graph_text(rng: &mut impl Rng, shape: &GraphShape) -> String {
    let mut terms: Vec<String> = (0..shape.nodes).map(node_name).collect();
    terms.extend((0..shape.anon).map(|i| format!("_:b{i}")));
    let types: Vec<String> = (0..shape.types).map(|i| format!("t{i}")).collect();
    let mut out = String::new();
    let mut aliases = Vec::new();
    for e in 0..shape.edges {
        let source = if !aliases.is_empty() && rng.gen_bool(0.15) {
            aliases.choose(rng).cloned().unwrap()
        } else {
            terms.choose(rng).cloned().unwrap()
        };
        let ty = if rng.gen_bool(0.1) {
            terms[..shape.nodes].choose(rng).cloned().unwrap()
        } else {
            types.choose(rng).cloned().unwrap()
        };
        let target = if rng.gen_bool(0.15) {
            VALUES.choose(rng).unwrap().to_string()
        } else {
            terms.choose(rng).cloned().unwrap()
        };
        let alias = format!("e{e}");
        out.push_str(&format!("{alias} = ({source})-[{ty}]->({target})\n"));
        aliases.push(alias);
    }
    let mut used = BTreeSet::new();
    for _ in 0..shape.labels {
        let t = terms.choose(rng).unwrap();
        out.push_str(&format!("({t}) :l{}\n", rng.gen_range(0..3)));
    }
    for _ in 0..shape.props {
        let subject = if !aliases.is_empty() && rng.gen_bool(0.2) {
            aliases.choose(rng).cloned().unwrap()
        } else {
            terms.choose(rng).cloned().unwrap()
        };
        let key = KEYS.choose(rng).unwrap();
        if used.insert((subject.clone(), *key)) {
            let value = VALUES.choose(rng).unwrap();
            out.push_str(&format!("({subject}) {{{key}: {value}}}\n"));
        }
    }
    out
}

/// A graph with every id decoded, for comparisons independent of string
/// offsets.
#[derive(Debug, PartialEq, Eq)]
pub struct DecodedGraph {
    pub objects: BTreeSet<Datum>,
    pub edges: BTreeSet<(Datum, Datum, Datum, Datum)>,
    pub labels: BTreeSet<(Datum, Datum)>,
    pub props: BTreeSet<(Datum, Datum, Datum)>,
}

pub fn decoded(g: &PropertyDomainGraph) -> DecodedGraph {
    let d = |id| decode(id, &g.strings).unwrap();
    DecodedGraph {
        objects: g.objects.iter().map(|&o| d(o)).collect(),
        edges: g
            .gamma
            .iter()
            .map(|(&e, &(s, t, o))| (d(e), d(s), d(t), d(o)))
            .collect(),
        labels: g
            .labels
            .iter()
            .flat_map(|(&o, ls)| ls.iter().map(move |&l| (o, l)))
            .map(|(o, l)| (d(o), d(l)))
            .collect(),
        props: g
            .props
            .iter()
            .map(|(&(o, k), &v)| (d(o), d(k), d(v)))
            .collect(),
    }
}

pub fn reference(text: &str) -> PropertyDomainGraph {
    mdb_core::ingest::load_reference(text).unwrap()
}

pub fn fixture_graph(name: &str) -> PropertyDomainGraph {
    reference(&fixture_text(name))
}

/// Random rpq over types `t0..t{types}` with at most `ops` operators.
pub fn random_rpq(rng: &mut impl Rng, types: usize, ops: usize) -> Rpq {
    if ops == 0 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.08) {
            Rpq::Epsilon
        } else {
            Rpq::named(&format!("t{}", rng.gen_range(0..types)))
        };
    }
    let rest = ops - 1;
    match rng.gen_range(0..7) {
        0 | 1 => {
            let left = rng.gen_range(0..=rest);
            Rpq::concat(random_rpq(rng, types, left), random_rpq(rng, types, rest - left))
        }
        2 => {
            let left = rng.gen_range(0..=rest);
            Rpq::alt(random_rpq(rng, types, left), random_rpq(rng, types, rest - left))
        }
        3 => Rpq::inverse(random_rpq(rng, types, rest)),
        4 => Rpq::star(random_rpq(rng, types, rest)),
        5 => Rpq::plus(random_rpq(rng, types, rest)),
        _ => Rpq::optional(random_rpq(rng, types, rest)),
    }
}

type Pairs = BTreeSet<(ObjectId, ObjectId)>;

/// Rpq evaluation by boolean matrices, with Warshall closure for stars.
pub fn matrix_rpq(r: &Rpq, g: &PropertyDomainGraph) -> Pairs {
    let objects: Vec<ObjectId> = g.objects.iter().copied().collect();
    let index: BTreeMap<ObjectId, usize> =
        objects.iter().enumerate().map(|(i, &o)| (o, i)).collect();
    let n = objects.len();
    fn go(r: &Rpq, g: &PropertyDomainGraph, index: &BTreeMap<ObjectId, usize>, n: usize) -> Vec<Vec<bool>> {
        let mut m = vec![vec![false; n]; n];
        match r {
            Rpq::Epsilon => (0..n).for_each(|i| m[i][i] = true),
            Rpq::Type(d) => {
                for &(s, t, o) in g.gamma.values() {
                    if decode(t, &g.strings).unwrap() == *d {
                        m[index[&s]][index[&o]] = true;
                    }
                }
            }
            Rpq::Concat(a, b) => {
                let (a, b) = (go(a, g, index, n), go(b, g, index, n));
                for i in 0..n {
                    for k in 0..n {
                        if a[i][k] {
                            for j in 0..n {
                                m[i][j] |= b[k][j];
                            }
                        }
                    }
                }
            }
            Rpq::Alt(a, b) => {
                let (a, b) = (go(a, g, index, n), go(b, g, index, n));
                for i in 0..n {
                    for j in 0..n {
                        m[i][j] = a[i][j] || b[i][j];
                    }
                }
            }
            Rpq::Inverse(a) => {
                let a = go(a, g, index, n);
                for i in 0..n {
                    for j in 0..n {
                        m[i][j] = a[j][i];
                    }
                }
            }
            Rpq::Star(a) => {
                m = go(a, g, index, n);
                (0..n).for_each(|i| m[i][i] = true);
                for k in 0..n {
                    for i in 0..n {
                        if m[i][k] {
                            for j in 0..n {
                                if m[k][j] {
                                    m[i][j] = true;
                                }
                            }
                        }
                    }
                }
            }
            Rpq::Plus(a) => {
                let one = go(a, g, index, n);
                let star = go(&Rpq::Star(a.clone()), g, index, n);
                m = go_mul(&one, &star, n);
            }
            Rpq::Optional(a) => {
                m = go(a, g, index, n);
                (0..n).for_each(|i| m[i][i] = true);
            }
        }
        m
    }
    fn go_mul(a: &[Vec<bool>], b: &[Vec<bool>], n: usize) -> Vec<Vec<bool>> {
        let mut m = vec![vec![false; n]; n];
        for i in 0..n {
            for k in 0..n {
                if a[i][k] {
                    for j in 0..n {
                        m[i][j] |= b[k][j];
                    }
                }
            }
        }
        m
    }
    let m = go(r, g, &index, n);
    let mut out = Pairs::new();
    for i in 0..n {
        for j in 0..n {
            if m[i][j] {
                out.insert((objects[i], objects[j]));
            }
        }
    }
    out
}

/// A Thompson automaton built in the test crate, for product reachability.
pub struct TestNfa {
    /// (from, label, to); `None` labels are epsilon moves. Labels carry the
    /// decoded type and whether the edge is read backwards.
    pub moves: Vec<(usize, Option<(Datum, bool)>, usize)>,
    pub start: usize,
    pub accept: usize,
    pub states: usize,
}

impl TestNfa {
    pub fn new(r: &Rpq) -> TestNfa {
        let mut nfa = TestNfa {
            moves: Vec::new(),
            start: 0,
            accept: 0,
            states: 0,
        };
        let (s, a) = nfa.build(r, false);
        nfa.start = s;
        nfa.accept = a;
        nfa
    }

    fn state(&mut self) -> usize {
        self.states += 1;
        self.states - 1
    }

    fn build(&mut self, r: &Rpq, inv: bool) -> (usize, usize) {
        let s = self.state();
        let a = self.state();
        match r {
            Rpq::Epsilon => self.moves.push((s, None, a)),
            Rpq::Type(d) => self.moves.push((s, Some((d.clone(), inv)), a)),
            Rpq::Concat(x, y) => {
                let (x, y) = if inv { (y, x) } else { (x, y) };
                let (xs, xa) = self.build(x, inv);
                let (ys, ya) = self.build(y, inv);
                self.moves.extend([(s, None, xs), (xa, None, ys), (ya, None, a)]);
            }
            Rpq::Alt(x, y) => {
                for part in [x, y] {
                    let (ps, pa) = self.build(part, inv);
                    self.moves.extend([(s, None, ps), (pa, None, a)]);
                }
            }
            Rpq::Inverse(x) => {
                let (xs, xa) = self.build(x, !inv);
                self.moves.extend([(s, None, xs), (xa, None, a)]);
            }
            Rpq::Star(x) | Rpq::Plus(x) | Rpq::Optional(x) => {
                let (xs, xa) = self.build(x, inv);
                self.moves.extend([(s, None, xs), (xa, None, a)]);
                if !matches!(r, Rpq::Plus(_)) {
                    self.moves.push((s, None, a));
                }
                if !matches!(r, Rpq::Optional(_)) {
                    self.moves.push((xa, None, xs));
                }
            }
        }
        (s, a)
    }

    /// Objects reachable from `source` by a path accepted by the automaton.
    pub fn reach(&self, g: &PropertyDomainGraph, source: ObjectId) -> BTreeSet<ObjectId> {
        let edges: Vec<(ObjectId, Datum, ObjectId)> = g
            .gamma
            .values()
            .map(|&(s, t, o)| (s, decode(t, &g.strings).unwrap(), o))
            .collect();
        let mut seen = BTreeSet::from([(source, self.start)]);
        let mut stack = vec![(source, self.start)];
        let mut out = BTreeSet::new();
        while let Some((o, q)) = stack.pop() {
            if q == self.accept {
                out.insert(o);
            }
            for (from, label, to) in &self.moves {
                if *from != q {
                    continue;
                }
                let mut next = Vec::new();
                match label {
                    None => next.push(o),
                    Some((ty, false)) => next.extend(
                        edges.iter().filter(|(s, t, _)| *s == o && t == ty).map(|e| e.2),
                    ),
                    Some((ty, true)) => next.extend(
                        edges.iter().filter(|(_, t, d)| *d == o && t == ty).map(|e| e.0),
                    ),
                }
                for n in next {
                    if seen.insert((n, *to)) {
                        stack.push((n, *to));
                    }
                }
            }
        }
        out
    }
}

impl TestNfa {
    /// Fewest edges on an accepted path from `source` to `target`, by 0-1
    /// breadth-first search over the product graph.
    pub fn distance(&self, g: &PropertyDomainGraph, source: ObjectId, target: ObjectId) -> Option<usize> {
        let edges: Vec<(ObjectId, Datum, ObjectId)> = g
            .gamma
            .values()
            .map(|&(s, t, o)| (s, decode(t, &g.strings).unwrap(), o))
            .collect();
        let mut best: BTreeMap<(ObjectId, usize), usize> = BTreeMap::new();
        let mut deque = std::collections::VecDeque::from([((source, self.start), 0usize)]);
        while let Some(((o, q), d)) = deque.pop_front() {
            if best.get(&(o, q)).is_some_and(|&b| b <= d) {
                continue;
            }
            best.insert((o, q), d);
            for (from, label, to) in &self.moves {
                if *from != q {
                    continue;
                }
                match label {
                    None => deque.push_front(((o, *to), d)),
                    Some((ty, inv)) => {
                        for (s, t, e) in &edges {
                            if t != ty {
                                continue;
                            }
                            if !inv && *s == o {
                                deque.push_back(((*e, *to), d + 1));
                            }
                            if *inv && *e == o {
                                deque.push_back(((*s, *to), d + 1));
                            }
                        }
                    }
                }
            }
        }
        best.get(&(target, self.accept)).copied()
    }
}

/// Whether a word of (type, inverse) letters matches `r`, by trying every
/// split.
pub fn word_matches(r: &Rpq, word: &[(Datum, bool)]) -> bool {
    fn go(r: &Rpq, w: &[(Datum, bool)], inv: bool) -> bool {
        match r {
            Rpq::Epsilon => w.is_empty(),
            Rpq::Type(d) => w.len() == 1 && w[0].0 == *d && w[0].1 == inv,
            Rpq::Concat(a, b) => {
                let (a, b) = if inv { (b, a) } else { (a, b) };
                (0..=w.len()).any(|i| go(a, &w[..i], inv) && go(b, &w[i..], inv))
            }
            Rpq::Alt(a, b) => go(a, w, inv) || go(b, w, inv),
            Rpq::Inverse(a) => go(a, w, !inv),
            Rpq::Star(a) => w.is_empty() || (1..=w.len()).any(|i| go(a, &w[..i], inv) && go(r, &w[i..], inv)),
            Rpq::Plus(a) => (1..=w.len()).any(|i| go(a, &w[..i], inv) && go(&Rpq::Star(a.clone()), &w[i..], inv)) || (w.is_empty() && go(a, w, inv)),
            Rpq::Optional(a) => w.is_empty() || go(a, w, inv),
        }
    }
    go(r, word, false)
}

/// Product-reachability evaluation of an rpq from every object.
pub fn product_rpq(r: &Rpq, g: &PropertyDomainGraph) -> Pairs {
    let nfa = TestNfa::new(r);
    let mut out = Pairs::new();
    for &o in &g.objects {
        out.extend(nfa.reach(g, o).into_iter().map(|t| (o, t)));
    }
    out
}

const QUERY_VARS: [&str; 4] = ["x", "y", "z", "w"];
const QUERY_KEYS: [&str; 3] = ["age", "name", "\"first name\""];

struct QueryGen<'a, R: Rng> {
    rng: &'a mut R,
    shape: &'a GraphShape,
    used: BTreeSet<&'static str>,
    path_used: bool,
}

impl<R: Rng> QueryGen<'_, R> {
    fn var(&mut self) -> String {
        let v = *QUERY_VARS.choose(self.rng).unwrap();
        self.used.insert(v);
        format!("?{v}")
    }

    fn node_term(&mut self) -> String {
        if self.rng.gen_bool(0.8) {
            self.var()
        } else {
            node_name(self.rng.gen_range(0..self.shape.nodes))
        }
    }

    fn node(&mut self) -> String {
        let mut s = format!("({}", self.node_term());
        if self.rng.gen_bool(0.25) {
            s.push_str(&format!(" :l{}", self.rng.gen_range(0..3)));
        }
        if self.rng.gen_bool(0.15) {
            s.push_str(&format!(" {{{}: {}}}", QUERY_KEYS.choose(self.rng).unwrap(), VALUES.choose(self.rng).unwrap()));
        }
        s.push(')');
        s
    }

    fn element(&mut self) -> String {
        let kind = self.rng.gen_range(0..4);
        if kind == 0 {
            return self.node();
        }
        let left = self.node();
        let right = self.node();
        let backward = self.rng.gen_bool(0.2);
        if kind == 1 && !self.path_used {
            self.path_used = true;
            let r = random_rpq(self.rng, self.shape.types, 3);
            return if backward {
                format!("{left}<=[{r}]={right}")
            } else {
                format!("{left}=[{r}]=>{right}")
            };
        }
        let mut inner = String::new();
        if self.rng.gen_bool(0.3) {
            inner.push_str(&self.var());
            inner.push(' ');
        }
        if self.rng.gen_bool(0.15) {
            inner.push_str(&format!("TYPE({})", self.var()));
        } else if self.rng.gen_bool(0.9) {
            inner.push_str(&format!("t{}", self.rng.gen_range(0..self.shape.types)));
        }
        if self.rng.gen_bool(0.1) {
            inner.push_str(&format!(" {{{}: {}}}", QUERY_KEYS.choose(self.rng).unwrap(), VALUES.choose(self.rng).unwrap()));
        }
        if backward {
            format!("{left}<-[{inner}]-{right}")
        } else {
            format!("{left}-[{inner}]->{right}")
        }
    }

    fn group(&mut self) -> String {
        let n = self.rng.gen_range(1..=2);
        (0..n).map(|_| self.element()).collect::<Vec<_>>().join(", ")
    }

    fn used_var(&mut self) -> String {
        let vars: Vec<_> = self.used.iter().copied().collect();
        format!("?{}", vars.choose(self.rng).unwrap())
    }

    fn selector(&mut self) -> String {
        let v = self.used_var();
        if self.rng.gen_bool(0.3) {
            format!("{v}.{}", QUERY_KEYS.choose(self.rng).unwrap())
        } else {
            v
        }
    }

    fn operand(&mut self) -> String {
        match self.rng.gen_range(0..5) {
            0 | 1 => self.selector(),
            2 => self.used_var(),
            3 => VALUES.choose(self.rng).unwrap().to_string(),
            _ => format!("n{}", self.rng.gen_range(0..self.shape.nodes)),
        }
    }

    fn condition(&mut self, depth: usize) -> String {
        if depth == 0 || self.rng.gen_bool(0.6) {
            let op = ["==", "!=", "<", "<=", ">", ">="].choose(self.rng).unwrap();
            return format!("{} {op} {}", self.operand(), self.operand());
        }
        match self.rng.gen_range(0..3) {
            0 => format!("NOT ({})", self.condition(depth - 1)),
            1 => format!("({}) AND ({})", self.condition(depth - 1), self.condition(depth - 1)),
            _ => format!("({}) OR ({})", self.condition(depth - 1), self.condition(depth - 1)),
        }
    }
}

/// Text of a random query over the vocabulary of [`random_graph_text`],
/// before any size filtering.
pub fn random_query_text(rng: &mut impl Rng, shape: &GraphShape) -> String {
    let mut g = QueryGen {
        rng,
        shape,
        used: BTreeSet::new(),
        path_used: false,
    };
    let mut pattern = g.group();
    if g.used.is_empty() {
        pattern.push_str(", (?x)");
        g.used.insert("x");
    }
    if g.rng.gen_bool(0.4) {
        pattern = format!("{pattern} OPTIONAL {{{}}}", g.group());
    }
    let select = if g.rng.gen_bool(0.2) {
        "*".to_string()
    } else {
        let n = g.rng.gen_range(1..=3);
        (0..n).map(|_| g.selector()).collect::<Vec<_>>().join(", ")
    };
    let mut q = format!("SELECT {select} MATCH {pattern}");
    if g.rng.gen_bool(0.4) {
        q.push_str(&format!(" WHERE {}", g.condition(2)));
    }
    if g.rng.gen_bool(0.4) {
        let n = g.rng.gen_range(1..=2);
        let keys: Vec<String> = (0..n)
            .map(|_| {
                let s = g.selector();
                if g.rng.gen_bool(0.5) {
                    format!("DESC({s})")
                } else {
                    s
                }
            })
            .collect();
        q.push_str(&format!(" ORDER BY {}", keys.join(", ")));
        if g.rng.gen_bool(0.5) {
            q.push_str(&format!(" LIMIT {}", g.rng.gen_range(1..6)));
        }
    }
    q
}

fn path_atoms(p: &Pattern) -> usize {
    match p {
        Pattern::Basic(atoms) => atoms.iter().filter(|a| a.is_path()).count(),
        Pattern::Optional(l, r) => path_atoms(l) + path_atoms(r),
    }
}

/// A random well-designed query with at most `max_atoms` atoms, one
/// OPTIONAL, one path atom and four variables.
pub fn random_query(rng: &mut impl Rng, shape: &GraphShape, max_atoms: usize) -> (String, Query) {
    loop {
        let text = random_query_text(rng, shape);
        let q = match mdb_core::dgql::compile(&text) {
            Ok(q) => q,
            Err(e) => panic!("generated query rejected: {e}\n{text}"),
        };
        if q.pattern.atom_count() <= max_atoms && path_atoms(&q.pattern) <= 1 {
            return (text, q);
        }
    }
}
