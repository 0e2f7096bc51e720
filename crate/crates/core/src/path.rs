//! Regular path evaluation: rpq automata and breadth-first search over the
//! product of an automaton with the graph.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use crate::dgql::Rpq;
use crate::error::{Error, Result};
use crate::model::{decode, lookup_datum, ObjectId, PropertyDomainGraph, Resolver};
use crate::storage::{Database, Permutation};

/// Direction in which an edge is traversed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    Forward,
    Inverse,
}

impl Dir {
    pub fn flip(self) -> Dir {
        match self {
            Dir::Forward => Dir::Inverse,
            Dir::Inverse => Dir::Forward,
        }
    }
}

/// An automaton letter: an edge type and a traversal direction.
pub type Symbol = (ObjectId, Dir);

struct Nfa {
    eps: Vec<Vec<usize>>,
    sym: Vec<Vec<(Symbol, usize)>>,
    starts: Vec<usize>,
    finals: BTreeSet<usize>,
}

impl Nfa {
    fn empty() -> Nfa {
        Nfa {
            eps: Vec::new(),
            sym: Vec::new(),
            starts: Vec::new(),
            finals: BTreeSet::new(),
        }
    }

    fn state(&mut self) -> usize {
        self.eps.push(Vec::new());
        self.sym.push(Vec::new());
        self.eps.len() - 1
    }

    /// Thompson construction; `inv` reads the expression backwards.
    fn build(&mut self, r: &Rpq, inv: bool, resolver: &(impl Resolver + ?Sized)) -> (usize, usize) {
        let s = self.state();
        let a = self.state();
        match r {
            Rpq::Epsilon => self.eps[s].push(a),
            Rpq::Type(d) => {
                if let Some(ty) = lookup_datum(d, resolver) {
                    let dir = if inv { Dir::Inverse } else { Dir::Forward };
                    self.sym[s].push(((ty, dir), a));
                }
            }
            Rpq::Concat(x, y) => {
                let (x, y) = if inv { (y, x) } else { (x, y) };
                let (xs, xa) = self.build(x, inv, resolver);
                let (ys, ya) = self.build(y, inv, resolver);
                self.eps[s].push(xs);
                self.eps[xa].push(ys);
                self.eps[ya].push(a);
            }
            Rpq::Alt(x, y) => {
                for part in [x, y] {
                    let (ps, pa) = self.build(part, inv, resolver);
                    self.eps[s].push(ps);
                    self.eps[pa].push(a);
                }
            }
            Rpq::Inverse(x) => {
                let (xs, xa) = self.build(x, !inv, resolver);
                self.eps[s].push(xs);
                self.eps[xa].push(a);
            }
            Rpq::Star(x) => {
                let (xs, xa) = self.build(x, inv, resolver);
                self.eps[s].extend([xs, a]);
                self.eps[xa].extend([xs, a]);
            }
            Rpq::Plus(_) | Rpq::Optional(_) => {
                let (es, ea) = self.build(&r.expand(), inv, resolver);
                self.eps[s].push(es);
                self.eps[ea].push(a);
            }
        }
        (s, a)
    }

    fn closure(&self, seed: impl IntoIterator<Item = usize>) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<usize> = seed.into_iter().collect();
        while let Some(q) = stack.pop() {
            if out.insert(q) {
                stack.extend(&self.eps[q]);
            }
        }
        out
    }

    /// Subset construction; eliminates epsilon moves.
    fn determinize(&self) -> Automaton {
        let start = self.closure(self.starts.iter().copied());
        let mut ids: BTreeMap<BTreeSet<usize>, usize> = BTreeMap::from([(start.clone(), 0)]);
        let mut sets = vec![start];
        let mut transitions: Vec<Vec<(Symbol, usize)>> = Vec::new();
        let mut i = 0;
        while i < sets.len() {
            let mut moves: BTreeMap<Symbol, BTreeSet<usize>> = BTreeMap::new();
            for &q in &sets[i] {
                for &(sym, to) in &self.sym[q] {
                    moves.entry(sym).or_default().insert(to);
                }
            }
            let mut row = Vec::new();
            for (sym, targets) in moves {
                let target = self.closure(targets);
                let id = *ids.entry(target.clone()).or_insert_with(|| {
                    sets.push(target);
                    sets.len() - 1
                });
                row.push((sym, id));
            }
            transitions.push(row);
            i += 1;
        }
        let finals = sets.iter().map(|s| s.iter().any(|q| self.finals.contains(q))).collect();
        Automaton {
            start: 0,
            finals,
            transitions,
        }
    }
}

/// A trimmed, minimal deterministic automaton over (type, direction)
/// letters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Automaton {
    pub start: usize,
    pub finals: Vec<bool>,
    /// Outgoing moves per state, sorted by symbol.
    pub transitions: Vec<Vec<(Symbol, usize)>>,
}

impl Automaton {
    /// Compiles an rpq, resolving edge types through `resolver`. Types
    /// unknown to the resolver match no edge.
    pub fn compile(r: &Rpq, resolver: &(impl Resolver + ?Sized)) -> Automaton {
        let mut nfa = Nfa::empty();
        let (s, a) = nfa.build(r, false, resolver);
        nfa.starts.push(s);
        nfa.finals.insert(a);
        nfa.determinize().minimize()
    }

    pub fn state_count(&self) -> usize {
        self.finals.len()
    }

    pub fn is_final(&self, q: usize) -> bool {
        self.finals[q]
    }

    pub fn accepts(&self, word: &[Symbol]) -> bool {
        let mut q = self.start;
        for sym in word {
            match self.step(q, *sym) {
                Some(n) => q = n,
                None => return false,
            }
        }
        self.finals[q]
    }

    pub fn step(&self, q: usize, sym: Symbol) -> Option<usize> {
        self.transitions[q]
            .binary_search_by(|(s, _)| s.cmp(&sym))
            .ok()
            .map(|i| self.transitions[q][i].1)
    }

    /// Automaton for the reversed language with every direction flipped,
    /// used to search from the target endpoint.
    pub fn reversed(&self) -> Automaton {
        let n = self.state_count();
        let mut nfa = Nfa::empty();
        for _ in 0..n {
            nfa.state();
        }
        for (from, row) in self.transitions.iter().enumerate() {
            for &((ty, dir), to) in row {
                nfa.sym[to].push(((ty, dir.flip()), from));
            }
        }
        nfa.starts = (0..n).filter(|&q| self.finals[q]).collect();
        nfa.finals.insert(self.start);
        nfa.determinize().minimize()
    }

    /// Removes states that cannot reach a final state, then merges
    /// equivalent states.
    fn minimize(self) -> Automaton {
        let n = self.state_count();
        let mut live = self.finals.clone();
        let mut changed = true;
        while changed {
            changed = false;
            for q in 0..n {
                if !live[q] && self.transitions[q].iter().any(|&(_, t)| live[t]) {
                    live[q] = true;
                    changed = true;
                }
            }
        }
        if !live[self.start] {
            return Automaton {
                start: 0,
                finals: vec![false],
                transitions: vec![Vec::new()],
            };
        }
        let trimmed: Vec<Vec<(Symbol, usize)>> = self
            .transitions
            .iter()
            .map(|row| row.iter().copied().filter(|&(_, t)| live[t]).collect())
            .collect();

        // Moore refinement over the live states.
        let mut class: Vec<usize> = (0..n).map(|q| usize::from(self.finals[q])).collect();
        loop {
            let mut sigs: BTreeMap<(usize, Vec<(Symbol, usize)>), usize> = BTreeMap::new();
            let mut next = vec![0; n];
            for q in (0..n).filter(|&q| live[q]) {
                let sig = (
                    class[q],
                    trimmed[q].iter().map(|&(s, t)| (s, class[t])).collect(),
                );
                let k = sigs.len();
                next[q] = *sigs.entry(sig).or_insert(k);
            }
            let before: BTreeSet<usize> = (0..n).filter(|&q| live[q]).map(|q| class[q]).collect();
            let stable = sigs.len() == before.len();
            class = next;
            if stable {
                break;
            }
        }

        // Number classes in breadth-first order from the start.
        let mut number: HashMap<usize, usize> = HashMap::new();
        let mut reps = Vec::new();
        let mut queue = VecDeque::from([self.start]);
        number.insert(class[self.start], 0);
        reps.push(self.start);
        while let Some(q) = queue.pop_front() {
            for &(_, t) in &trimmed[q] {
                if !number.contains_key(&class[t]) {
                    number.insert(class[t], reps.len());
                    reps.push(t);
                    queue.push_back(t);
                }
            }
        }
        let transitions = reps
            .iter()
            .map(|&q| trimmed[q].iter().map(|&(s, t)| (s, number[&class[t]])).collect())
            .collect();
        Automaton {
            start: 0,
            finals: reps.iter().map(|&q| self.finals[q]).collect(),
            transitions,
        }
    }
}

/// Adjacency access for path search.
pub trait PathGraph {
    /// Appends `(eid, other endpoint)` for every edge of type `ty` leaving
    /// `from` in direction `dir`.
    fn neighbors(&self, from: ObjectId, ty: ObjectId, dir: Dir, out: &mut Vec<(ObjectId, ObjectId)>) -> Result<()>;

    fn contains_object(&self, o: ObjectId) -> Result<bool>;
}

impl PathGraph for Database {
    fn neighbors(&self, from: ObjectId, ty: ObjectId, dir: Dir, out: &mut Vec<(ObjectId, ObjectId)>) -> Result<()> {
        let perm = match dir {
            Dir::Forward => Permutation::TypeSourceTarget,
            Dir::Inverse => Permutation::TypeTargetSource,
        };
        let mut it = self.tree(perm).range(&[ty.raw(), from.raw()])?;
        while let Some(r) = it.next_record()? {
            out.push((ObjectId::from_raw(r[3])?, ObjectId::from_raw(r[2])?));
        }
        Ok(())
    }

    fn contains_object(&self, o: ObjectId) -> Result<bool> {
        Database::contains_object(self, o)
    }
}

impl PathGraph for PropertyDomainGraph {
    fn neighbors(&self, from: ObjectId, ty: ObjectId, dir: Dir, out: &mut Vec<(ObjectId, ObjectId)>) -> Result<()> {
        for (&eid, &(s, t, o)) in &self.gamma {
            if t != ty {
                continue;
            }
            match dir {
                Dir::Forward if s == from => out.push((eid, o)),
                Dir::Inverse if o == from => out.push((eid, s)),
                _ => {}
            }
        }
        Ok(())
    }

    fn contains_object(&self, o: ObjectId) -> Result<bool> {
        Ok(self.objects.contains(&o))
    }
}

/// A path: a start object and a sequence of traversed edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathWitness {
    pub start: ObjectId,
    /// `(eid, direction, object reached)`.
    pub steps: Vec<(ObjectId, Dir, ObjectId)>,
}

impl PathWitness {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn end(&self) -> ObjectId {
        self.steps.last().map_or(self.start, |s| s.2)
    }

    /// The same path walked from its end back to its start.
    pub fn reversed(&self) -> PathWitness {
        let mut objects: Vec<ObjectId> = vec![self.start];
        objects.extend(self.steps.iter().map(|s| s.2));
        let steps = self
            .steps
            .iter()
            .enumerate()
            .rev()
            .map(|(i, &(eid, dir, _))| (eid, dir.flip(), objects[i]))
            .collect();
        PathWitness {
            start: self.end(),
            steps,
        }
    }

    /// Renders as `(o1)-[eid,dir]->(o2)-...`.
    pub fn format(&self, resolver: &(impl Resolver + ?Sized)) -> Result<String> {
        let show = |o: ObjectId| decode(o, resolver).map(|d| d.to_string());
        let mut s = format!("({})", show(self.start)?);
        for &(eid, dir, next) in &self.steps {
            s.push_str(&format!("-[{},{}]->({})", show(eid)?, dir, show(next)?));
        }
        Ok(s)
    }
}

impl fmt::Display for Dir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dir::Forward => "fwd",
            Dir::Inverse => "inv",
        })
    }
}

type Node = (ObjectId, usize);

/// Pipelined breadth-first search from one anchor. Yields each reachable
/// end object once, in order of distance.
pub struct PathSearch<'a, G: PathGraph + ?Sized> {
    graph: &'a G,
    automaton: &'a Automaton,
    target: Option<ObjectId>,
    want_witness: bool,
    queue: VecDeque<Node>,
    visited: HashSet<Node>,
    parents: HashMap<Node, (Node, ObjectId, Dir)>,
    emitted: HashSet<ObjectId>,
    pending: VecDeque<Node>,
    scratch: Vec<(ObjectId, ObjectId)>,
    done: bool,
}

impl<'a, G: PathGraph + ?Sized> PathSearch<'a, G> {
    /// Starts a search at `start`. With `target` set only that end object
    /// is reported, and the search stops once it is found.
    pub fn new(
        graph: &'a G,
        automaton: &'a Automaton,
        start: Option<ObjectId>,
        target: Option<ObjectId>,
        want_witness: bool,
    ) -> Result<Self> {
        let start = start.ok_or(Error::UnboundEndpoints)?;
        let mut search = PathSearch {
            graph,
            automaton,
            target,
            want_witness,
            queue: VecDeque::new(),
            visited: HashSet::new(),
            parents: HashMap::new(),
            emitted: HashSet::new(),
            pending: VecDeque::new(),
            scratch: Vec::new(),
            done: false,
        };
        // An anchor outside the graph only matters for the empty path.
        if automaton.is_final(automaton.start) && !graph.contains_object(start)? {
            search.done = true;
            return Ok(search);
        }
        search.discover((start, automaton.start));
        Ok(search)
    }

    pub fn visited(&self) -> usize {
        self.visited.len()
    }

    fn discover(&mut self, node: Node) {
        self.visited.insert(node);
        self.queue.push_back(node);
        if self.automaton.is_final(node.1)
            && self.target.map_or(true, |t| t == node.0)
            && self.emitted.insert(node.0)
        {
            self.pending.push_back(node);
        }
    }

    fn expand(&mut self, node: Node) -> Result<()> {
        let (object, state) = node;
        for i in 0..self.automaton.transitions[state].len() {
            let ((ty, dir), to) = self.automaton.transitions[state][i];
            self.scratch.clear();
            let mut found = std::mem::take(&mut self.scratch);
            self.graph.neighbors(object, ty, dir, &mut found)?;
            for &(eid, other) in &found {
                let next = (other, to);
                if !self.visited.contains(&next) {
                    if self.want_witness {
                        self.parents.insert(next, (node, eid, dir));
                    }
                    self.discover(next);
                }
            }
            self.scratch = found;
        }
        Ok(())
    }

    fn witness(&self, mut node: Node) -> PathWitness {
        let mut steps = Vec::new();
        while let Some(&(prev, eid, dir)) = self.parents.get(&node) {
            steps.push((eid, dir, node.0));
            node = prev;
        }
        steps.reverse();
        PathWitness {
            start: node.0,
            steps,
        }
    }

    pub fn next_match(&mut self) -> Result<Option<(ObjectId, Option<PathWitness>)>> {
        loop {
            if let Some(node) = self.pending.pop_front() {
                if self.target.is_some() {
                    self.done = true;
                    self.queue.clear();
                }
                let w = self.want_witness.then(|| self.witness(node));
                return Ok(Some((node.0, w)));
            }
            if self.done {
                return Ok(None);
            }
            match self.queue.pop_front() {
                Some(node) => self.expand(node)?,
                None => {
                    self.done = true;
                    return Ok(None);
                }
            }
        }
    }
}

/// Compiled forms of one path atom for either anchoring.
#[derive(Debug, Clone)]
pub struct PathAutomata {
    pub forward: Automaton,
    pub backward: Automaton,
}

impl PathAutomata {
    pub fn compile(r: &Rpq, resolver: &(impl Resolver + ?Sized)) -> PathAutomata {
        let forward = Automaton::compile(r, resolver);
        let backward = forward.reversed();
        PathAutomata { forward, backward }
    }
}

/// All end objects reachable from `start`, with witnesses when asked.
pub fn eval_path<G: PathGraph + ?Sized>(
    graph: &G,
    automaton: &Automaton,
    start: ObjectId,
    want_witness: bool,
) -> Result<Vec<(ObjectId, Option<PathWitness>)>> {
    let mut search = PathSearch::new(graph, automaton, Some(start), None, want_witness)?;
    let mut out = Vec::new();
    while let Some(m) = search.next_match()? {
        out.push(m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StringArena;
    use crate::model::Interner;

    fn arena() -> (StringArena, ObjectId, ObjectId) {
        let mut a = StringArena::new();
        let child = ObjectId::named(a.intern("child").unwrap());
        let father = ObjectId::named(a.intern("father").unwrap());
        (a, child, father)
    }

    #[test]
    fn epsilon_automaton() {
        let (a, _, _) = arena();
        let m = Automaton::compile(&Rpq::Epsilon, &a);
        assert_eq!(m.state_count(), 1);
        assert!(m.is_final(m.start));
        assert!(m.transitions[0].is_empty());
    }

    #[test]
    fn plus_has_two_states() {
        let (a, child, _) = arena();
        let m = Automaton::compile(&Rpq::plus(Rpq::named("child")), &a);
        assert_eq!(m.state_count(), 2);
        assert!(!m.is_final(0));
        assert_eq!(m.transitions[0], vec![((child, Dir::Forward), 1)]);
        assert_eq!(m.transitions[1], vec![((child, Dir::Forward), 1)]);
        assert!(m.is_final(1));
    }

    #[test]
    fn inverse_flips_directions() {
        let (a, child, father) = arena();
        let r = Rpq::inverse(Rpq::concat(Rpq::named("child"), Rpq::named("father")));
        let m = Automaton::compile(&r, &a);
        assert!(m.accepts(&[(father, Dir::Inverse), (child, Dir::Inverse)]));
        assert!(!m.accepts(&[(child, Dir::Inverse), (father, Dir::Inverse)]));
        let back = m.reversed();
        assert!(back.accepts(&[(child, Dir::Forward), (father, Dir::Forward)]));
    }

    #[test]
    fn unknown_type_is_empty_language() {
        let (a, _, _) = arena();
        let m = Automaton::compile(&Rpq::named("nobody"), &a);
        assert_eq!(m.state_count(), 1);
        assert!(!m.is_final(0));
        let m = Automaton::compile(&Rpq::star(Rpq::named("nobody")), &a);
        assert!(m.accepts(&[]));
    }

    #[test]
    fn witness_reversal() {
        let w = PathWitness {
            start: ObjectId::anon(0),
            steps: vec![
                (ObjectId::edge(0), Dir::Forward, ObjectId::anon(1)),
                (ObjectId::edge(1), Dir::Inverse, ObjectId::anon(2)),
            ],
        };
        let r = w.reversed();
        assert_eq!(r.start, ObjectId::anon(2));
        assert_eq!(
            r.steps,
            vec![
                (ObjectId::edge(1), Dir::Forward, ObjectId::anon(1)),
                (ObjectId::edge(0), Dir::Inverse, ObjectId::anon(0)),
            ]
        );
        assert_eq!(r.reversed(), w);
    }
}
