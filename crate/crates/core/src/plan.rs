//! Query planning: logical plans, simplification, cardinality estimates,
//! join ordering and physical plans.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use crate::dgql::{Atom, CmpOp, Condition, Operand, OrderKey, Pattern, Query, Sel, Term, Var};
use crate::error::{Error, Result};
use crate::model::{lookup_datum, lookup_value, Datum, ObjectId, Resolver, Value};
use crate::path::PathAutomata;
use crate::storage::{Catalog, Permutation, Relation};

/// Distinct-value count assumed when the catalog has no statistic.
pub const DEFAULT_DISTINCT: f64 = 10.0;

/// Largest conjunction planned by dynamic programming; larger ones are
/// ordered greedily.
pub const SELINGER_MAX_ATOMS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Leapfrog where applicable, nested loops elsewhere.
    #[default]
    Auto,
    Leapfrog,
    NestedLoop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Logical {
    Select {
        items: Vec<Sel>,
        limit: Option<u64>,
        child: Box<Logical>,
    },
    OrderBy {
        keys: Vec<OrderKey>,
        child: Box<Logical>,
    },
    Where {
        condition: Condition,
        child: Box<Logical>,
    },
    /// Variables fixed to constants by simplification.
    Bind {
        bindings: Vec<(Var, Datum)>,
        child: Box<Logical>,
    },
    Match(Vec<Atom>),
    Optional(Box<Logical>, Box<Logical>),
}

fn pattern_to_logical(p: &Pattern) -> Logical {
    match p {
        Pattern::Basic(atoms) => Logical::Match(atoms.clone()),
        Pattern::Optional(l, r) => Logical::Optional(
            Box::new(pattern_to_logical(l)),
            Box::new(pattern_to_logical(r)),
        ),
    }
}

pub fn build_logical(q: &Query) -> Logical {
    let mut node = pattern_to_logical(&q.pattern);
    if let Some(c) = &q.condition {
        node = Logical::Where {
            condition: c.clone(),
            child: Box::new(node),
        };
    }
    if !q.order.is_empty() {
        node = Logical::OrderBy {
            keys: q.order.clone(),
            child: Box::new(node),
        };
    }
    Logical::Select {
        items: q.select.clone(),
        limit: q.limit,
        child: Box::new(node),
    }
}

/// The pieces of a logical plan, top to bottom.
#[derive(Debug, Clone, Default)]
struct Parts {
    items: Vec<Sel>,
    limit: Option<u64>,
    order: Vec<OrderKey>,
    condition: Option<Condition>,
    bindings: Vec<(Var, Datum)>,
    pattern: Option<Logical>,
}

impl Parts {
    fn of(plan: Logical) -> Parts {
        let mut parts = Parts::default();
        let mut node = plan;
        loop {
            node = match node {
                Logical::Select { items, limit, child } => {
                    parts.items = items;
                    parts.limit = limit;
                    *child
                }
                Logical::OrderBy { keys, child } => {
                    parts.order = keys;
                    *child
                }
                Logical::Where { condition, child } => {
                    parts.condition = Some(condition);
                    *child
                }
                Logical::Bind { bindings, child } => {
                    parts.bindings = bindings;
                    *child
                }
                other => {
                    parts.pattern = Some(other);
                    return parts;
                }
            }
        }
    }

    fn into_logical(self) -> Logical {
        let mut node = self.pattern.expect("pattern present");
        if !self.bindings.is_empty() {
            node = Logical::Bind {
                bindings: self.bindings,
                child: Box::new(node),
            };
        }
        if let Some(c) = self.condition {
            node = Logical::Where {
                condition: c,
                child: Box::new(node),
            };
        }
        if !self.order.is_empty() {
            node = Logical::OrderBy {
                keys: self.order,
                child: Box::new(node),
            };
        }
        Logical::Select {
            items: self.items,
            limit: self.limit,
            child: Box::new(node),
        }
    }
}

fn conjuncts(c: Condition, out: &mut Vec<Condition>) {
    match c {
        Condition::And(a, b) => {
            conjuncts(*a, out);
            conjuncts(*b, out);
        }
        other => out.push(other),
    }
}

fn mandatory_block(p: &mut Logical) -> &mut Vec<Atom> {
    match p {
        Logical::Match(atoms) => atoms,
        Logical::Optional(l, _) => mandatory_block(l),
        _ => unreachable!("pattern nodes only"),
    }
}

fn path_vars(p: &Logical, out: &mut BTreeSet<Var>) {
    match p {
        Logical::Match(atoms) => {
            for a in atoms {
                if let Atom::Path { var: Some(v), .. } = a {
                    out.insert(v.clone());
                }
            }
        }
        Logical::Optional(l, r) => {
            path_vars(l, out);
            path_vars(r, out);
        }
        _ => {}
    }
}

fn substitute(p: &mut Logical, v: &Var, d: &Datum) {
    match p {
        Logical::Match(atoms) => {
            for a in atoms.iter_mut() {
                *a = a.map_terms(&mut |t| match t {
                    Term::Var(x) if x == v => Term::Const(d.clone()),
                    other => other.clone(),
                });
            }
        }
        Logical::Optional(l, r) => {
            substitute(l, v, d);
            substitute(r, v, d);
        }
        _ => {}
    }
}

/// Moves top-level equalities with constants from WHERE into the pattern:
/// `?v == c` substitutes `c` for `?v`, and `?v.k == c` becomes a property
/// atom. Only variables of the mandatory part are rewritten.
pub fn simplify(plan: Logical) -> Logical {
    let mut parts = Parts::of(plan);
    let Some(condition) = parts.condition.take() else {
        return parts.into_logical();
    };
    let mut pattern = parts.pattern.take().expect("pattern present");
    let mandatory: BTreeSet<Var> = mandatory_block(&mut pattern)
        .iter()
        .flat_map(|a| a.terms().into_iter().filter_map(Term::var).cloned().collect::<Vec<_>>())
        .collect();
    let mut paths = BTreeSet::new();
    path_vars(&pattern, &mut paths);

    let mut all = Vec::new();
    conjuncts(condition, &mut all);
    let mut kept = Vec::new();
    for c in all {
        let absorbed = match &c {
            Condition::Cmp(a, CmpOp::Eq, b) => {
                let (operand, constant) = match (a, b) {
                    (x, Operand::Const(d)) | (Operand::Const(d), x) => (x, d),
                    _ => {
                        kept.push(c);
                        continue;
                    }
                };
                match operand {
                    Operand::Var(v)
                        if mandatory.contains(v)
                            && !paths.contains(v)
                            && !parts.bindings.iter().any(|(b, _)| b == v) =>
                    {
                        substitute(&mut pattern, v, constant);
                        parts.bindings.push((v.clone(), constant.clone()));
                        true
                    }
                    Operand::Prop(v, k) if mandatory.contains(v) && !paths.contains(v) => {
                        let object = match parts.bindings.iter().find(|(b, _)| b == v) {
                            Some((_, d)) => Term::Const(d.clone()),
                            None => Term::Var(v.clone()),
                        };
                        mandatory_block(&mut pattern).push(Atom::Prop {
                            object,
                            key: Datum::Str(k.clone()),
                            value: Term::Const(constant.clone()),
                        });
                        true
                    }
                    _ => false,
                }
            }
            _ => false,
        };
        if !absorbed {
            kept.push(c);
        }
    }
    parts.condition = kept
        .into_iter()
        .reduce(|a, b| Condition::And(Box::new(a), Box::new(b)));
    parts.pattern = Some(pattern);
    parts.into_logical()
}

/// Statistics and constant resolution for planning.
pub struct Estimator<'a> {
    pub catalog: &'a Catalog,
    pub resolver: &'a dyn Resolver,
}

fn distinct(n: u64) -> f64 {
    if n == 0 {
        DEFAULT_DISTINCT
    } else {
        n as f64
    }
}

fn clamp(x: f64) -> f64 {
    if x.is_finite() && x > 0.0 {
        x
    } else {
        0.0
    }
}

impl Estimator<'_> {
    fn id(&self, d: &Datum) -> Option<ObjectId> {
        lookup_datum(d, self.resolver)
    }

    fn histogram(&self, h: &BTreeMap<u64, u64>, d: &Datum) -> f64 {
        self.id(d)
            .and_then(|id| h.get(&id.raw()))
            .map_or(0.0, |&n| n as f64)
    }

    /// Distinct values expected in the column holding `term` within `atom`.
    fn column_distinct(&self, atom: &Atom, position: usize) -> f64 {
        let c = self.catalog;
        match atom {
            Atom::Object(_) => distinct(c.objects),
            Atom::Edge { .. } => match position {
                0 => distinct(c.distinct_sources),
                1 => distinct(c.distinct_types),
                2 => distinct(c.distinct_targets),
                _ => distinct(c.edges),
            },
            Atom::Label { .. } => distinct(c.distinct_labeled_objects),
            Atom::Prop { .. } => match position {
                0 => distinct(c.distinct_property_objects),
                _ => distinct(c.distinct_values),
            },
            Atom::Path { .. } => distinct(c.objects),
        }
    }

    /// Expected matches of one atom when the variables in `bound` are fixed.
    pub fn atom(&self, atom: &Atom, bound: &BTreeSet<Var>) -> f64 {
        let c = self.catalog;
        let fixed = |t: &Term| match t {
            Term::Const(_) => true,
            Term::Var(v) => bound.contains(v),
        };
        let mut seen = BTreeSet::new();
        let mut repeat = 1.0;
        for (i, t) in atom.terms().into_iter().enumerate() {
            if let Term::Var(v) = t {
                if !bound.contains(v) && !seen.insert(v) {
                    repeat /= self.column_distinct(atom, i);
                }
            }
        }
        let est = match atom {
            Atom::Object(t) => {
                if fixed(t) {
                    1.0
                } else {
                    c.objects as f64
                }
            }
            Atom::Edge {
                source,
                ty,
                target,
                eid,
            } => {
                let mut e = c.edges as f64;
                if let Term::Const(d) = ty {
                    e = self.histogram(&c.edges_per_type, d);
                } else if fixed(ty) {
                    e /= distinct(c.distinct_types);
                }
                if fixed(source) {
                    e /= distinct(c.distinct_sources);
                }
                if fixed(target) {
                    e /= distinct(c.distinct_targets);
                }
                if fixed(eid) {
                    e = e.min(1.0);
                }
                e
            }
            Atom::Label { object, label } => {
                let mut e = self.histogram(&c.objects_per_label, label);
                if fixed(object) {
                    e /= distinct(c.distinct_labeled_objects);
                }
                e
            }
            Atom::Prop { object, key, value } => {
                let mut e = self.histogram(&c.properties_per_key, key);
                if fixed(value) {
                    e /= distinct(c.distinct_values);
                }
                if fixed(object) {
                    e /= distinct(c.distinct_property_objects);
                }
                e
            }
            Atom::Path { source, target, .. } => {
                if fixed(source) || fixed(target) {
                    DEFAULT_DISTINCT
                } else {
                    c.objects as f64 * DEFAULT_DISTINCT
                }
            }
        };
        clamp(est * repeat)
    }

    /// Expected size of the join of `atoms`: the product of the atom sizes
    /// times `1/d` for every extra occurrence of a shared variable, where
    /// `d` is the largest distinct count among its columns.
    pub fn join(&self, atoms: &[&Atom], bound: &BTreeSet<Var>) -> f64 {
        let mut size = 1.0;
        let mut occurrences: BTreeMap<&Var, (usize, f64)> = BTreeMap::new();
        for a in atoms {
            size *= self.atom(a, bound);
            let mut local = BTreeSet::new();
            for (i, t) in a.terms().into_iter().enumerate() {
                if let Term::Var(v) = t {
                    if !bound.contains(v) && local.insert(v) {
                        let e = occurrences.entry(v).or_insert((0, 0.0));
                        e.0 += 1;
                        e.1 = e.1.max(self.column_distinct(a, i));
                    }
                }
            }
        }
        for (count, d) in occurrences.values() {
            for _ in 1..*count {
                size /= d;
            }
        }
        clamp(size)
    }

    /// Cost of a left-deep order: the number of cross products, then the
    /// sum of intermediate result sizes.
    pub fn order_cost(&self, atoms: &[Atom], order: &[usize], bound: &BTreeSet<Var>) -> (u32, f64) {
        let mut crosses = 0;
        let mut cost = 0.0;
        let mut placed: Vec<&Atom> = Vec::new();
        for &i in order {
            if is_cross(&atoms[i], &placed, bound) {
                crosses += 1;
            }
            placed.push(&atoms[i]);
            cost += self.join(&placed, bound);
        }
        (crosses, cost)
    }
}

fn free_vars<'a>(a: &'a Atom, bound: &BTreeSet<Var>) -> impl Iterator<Item = &'a Var> + 'a {
    let bound = bound.clone();
    a.terms()
        .into_iter()
        .filter_map(Term::var)
        .filter(move |v| !bound.contains(*v))
}

fn is_cross(a: &Atom, placed: &[&Atom], bound: &BTreeSet<Var>) -> bool {
    if placed.is_empty() {
        return false;
    }
    let mine: BTreeSet<&Var> = free_vars(a, bound).collect();
    if mine.is_empty() {
        return false;
    }
    !placed
        .iter()
        .any(|p| free_vars(p, bound).any(|v| mine.contains(v)))
}

fn cheaper(a: (u32, f64), b: (u32, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Dynamic programming over subsets for the cheapest left-deep order.
pub fn plan_selinger(atoms: &[Atom], bound: &BTreeSet<Var>, est: &Estimator) -> Vec<usize> {
    let n = atoms.len();
    assert!(n <= 20, "subset enumeration over {n} atoms");
    if n == 0 {
        return Vec::new();
    }
    let full = (1usize << n) - 1;
    let mut best: Vec<Option<((u32, f64), Vec<usize>)>> = vec![None; full + 1];
    best[0] = Some(((0, 0.0), Vec::new()));
    for mask in 1..=full {
        let members: Vec<&Atom> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| &atoms[i]).collect();
        let size = est.join(&members, bound);
        let mut choice: Option<((u32, f64), Vec<usize>)> = None;
        for i in (0..n).filter(|i| mask >> i & 1 == 1) {
            let prev = mask ^ (1 << i);
            let Some((pc, porder)) = &best[prev] else { continue };
            let placed: Vec<&Atom> = porder.iter().map(|&j| &atoms[j]).collect();
            let cross = u32::from(is_cross(&atoms[i], &placed, bound));
            let cost = (pc.0 + cross, pc.1 + size);
            let better = match &choice {
                None => true,
                Some((c, _)) => cheaper(cost, *c),
            };
            if better {
                let mut order = porder.clone();
                order.push(i);
                choice = Some((cost, order));
            }
        }
        best[mask] = choice;
    }
    best[full].take().map(|(_, o)| o).unwrap_or_default()
}

/// Repeatedly appends the atom giving the smallest intermediate result,
/// avoiding cross products while a connected atom remains. Ties go to the
/// earlier atom.
pub fn plan_greedy(atoms: &[Atom], bound: &BTreeSet<Var>, est: &Estimator) -> Vec<usize> {
    let mut order = Vec::new();
    let mut left: Vec<usize> = (0..atoms.len()).collect();
    while !left.is_empty() {
        let placed: Vec<&Atom> = order.iter().map(|&j| &atoms[j]).collect();
        let mut pick: Option<(usize, (u32, f64))> = None;
        for (pos, &i) in left.iter().enumerate() {
            let mut with = placed.clone();
            with.push(&atoms[i]);
            let key = (u32::from(is_cross(&atoms[i], &placed, bound)), est.join(&with, bound));
            if pick.map_or(true, |(_, k)| cheaper(key, k)) {
                pick = Some((pos, key));
            }
        }
        let (pos, _) = pick.unwrap();
        order.push(left.remove(pos));
    }
    order
}

pub fn plan_join_order(atoms: &[Atom], bound: &BTreeSet<Var>, est: &Estimator) -> Vec<usize> {
    if atoms.len() <= SELINGER_MAX_ATOMS {
        plan_selinger(atoms, bound, est)
    } else {
        plan_greedy(atoms, bound, est)
    }
}

/// Whether some stored order of `atom` lists its free variables in the
/// order they appear in `prefix`, first, with repeated occurrences
/// adjacent. Fixed columns may sit anywhere.
fn servable(atom: &Atom, prefix: &[Var], bound: &BTreeSet<Var>) -> Option<Permutation> {
    let relation = relation_of(atom);
    let terms = atom_columns(atom);
    'perm: for &perm in relation.permutations() {
        let mut seq: Vec<&Var> = Vec::new();
        for &c in perm.columns() {
            if let Term::Var(v) = &terms[c] {
                if bound.contains(v) {
                    continue;
                }
                match seq.iter().position(|x| *x == v) {
                    Some(p) if p + 1 == seq.len() => {}
                    Some(_) => continue 'perm,
                    None => seq.push(v),
                }
            }
        }
        let known: Vec<&Var> = seq.iter().copied().filter(|v| prefix.contains(v)).collect();
        // placed variables must be a prefix of the column order, in order
        if seq.len() < known.len() || seq[..known.len()] != known[..] {
            continue;
        }
        let in_order: Vec<&Var> = prefix.iter().filter(|v| seq.contains(v)).collect();
        if in_order == known {
            return Some(perm);
        }
    }
    None
}

/// Terms of the atom in canonical column order, with the label or key
/// constant filled in for the two-column relations.
fn atom_columns(atom: &Atom) -> Vec<Term> {
    match atom {
        Atom::Object(t) => vec![t.clone()],
        Atom::Edge {
            source,
            ty,
            target,
            eid,
        } => vec![source.clone(), ty.clone(), target.clone(), eid.clone()],
        Atom::Label { object, label } => vec![object.clone(), Term::Const(label.clone())],
        Atom::Prop { object, key, value } => {
            vec![object.clone(), Term::Const(key.clone()), value.clone()]
        }
        Atom::Path { .. } => unreachable!("paths are not stored relations"),
    }
}

fn relation_of(atom: &Atom) -> Relation {
    match atom {
        Atom::Object(_) => Relation::Objects,
        Atom::Edge { .. } => Relation::DomainGraph,
        Atom::Label { .. } => Relation::Labels,
        Atom::Prop { .. } => Relation::Properties,
        Atom::Path { .. } => unreachable!("paths are not stored relations"),
    }
}

/// Leapfrog variable order: cheapest variable first (ties: more atoms,
/// then name), then variables connected to those already chosen in the
/// same manner, isolated variables last. Backtracks to the next candidate
/// when an atom would need an order no stored permutation provides.
pub fn leapfrog_variable_order(
    atoms: &[Atom],
    bound: &BTreeSet<Var>,
    est: &Estimator,
) -> Option<Vec<Var>> {
    if atoms.iter().any(Atom::is_path) {
        return None;
    }
    let mut vars: BTreeMap<Var, (f64, usize)> = BTreeMap::new();
    for a in atoms {
        let size = est.atom(a, bound);
        let mine: BTreeSet<&Var> = free_vars(a, bound).collect();
        for v in mine {
            let e = vars.entry(v.clone()).or_insert((f64::INFINITY, 0));
            e.0 = e.0.min(size);
            e.1 += 1;
        }
    }
    let isolated = |v: &Var| {
        atoms.iter().all(|a| {
            let mine: BTreeSet<&Var> = free_vars(a, bound).collect();
            !mine.contains(v) || mine.len() == 1
        })
    };
    let mut ranked: Vec<Var> = vars.keys().cloned().collect();
    ranked.sort_by(|a, b| {
        let (ca, na) = vars[a];
        let (cb, nb) = vars[b];
        isolated(a)
            .cmp(&isolated(b))
            .then(ca.partial_cmp(&cb).unwrap_or(std::cmp::Ordering::Equal))
            .then(nb.cmp(&na))
            .then(a.cmp(b))
    });
    let connected = |v: &Var, placed: &[Var]| {
        atoms.iter().any(|a| {
            let mine: Vec<&Var> = free_vars(a, bound).collect();
            mine.contains(&v) && placed.iter().any(|p| mine.contains(&p))
        })
    };
    fn search(
        ranked: &[Var],
        placed: &mut Vec<Var>,
        atoms: &[Atom],
        bound: &BTreeSet<Var>,
        connected: &dyn Fn(&Var, &[Var]) -> bool,
        budget: &mut usize,
    ) -> bool {
        if placed.len() == ranked.len() {
            return true;
        }
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        let remaining: Vec<&Var> = ranked.iter().filter(|v| !placed.contains(v)).collect();
        let linked: Vec<&Var> = remaining
            .iter()
            .copied()
            .filter(|v| connected(v, placed))
            .collect();
        let candidates = if linked.is_empty() { remaining } else {
            let mut c = linked.clone();
            c.extend(remaining.iter().copied().filter(|v| !linked.contains(v)));
            c
        };
        for v in candidates {
            placed.push(v.clone());
            if atoms.iter().all(|a| servable(a, placed, bound).is_some())
                && search(ranked, placed, atoms, bound, connected, budget)
            {
                return true;
            }
            placed.pop();
        }
        false
    }
    let mut placed = Vec::new();
    let mut budget = 10_000;
    search(&ranked, &mut placed, atoms, bound, &connected, &mut budget).then_some(placed)
}

pub fn leapfrog_applicable(atoms: &[Atom], bound: &BTreeSet<Var>, est: &Estimator) -> bool {
    leapfrog_variable_order(atoms, bound, est).is_some()
}

/// Slot numbering for variables.
#[derive(Debug, Clone, Default)]
pub struct Vars {
    names: Vec<Var>,
    index: HashMap<Var, usize>,
}

impl Vars {
    pub fn slot(&mut self, v: &Var) -> usize {
        if let Some(&s) = self.index.get(v) {
            return s;
        }
        self.names.push(v.clone());
        self.index.insert(v.clone(), self.names.len() - 1);
        self.names.len() - 1
    }

    pub fn get(&self, v: &Var) -> Option<usize> {
        self.index.get(v).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, slot: usize) -> &Var {
        &self.names[slot]
    }
}

/// A column value known when an operator is opened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixed {
    /// A constant; `None` when the store has no such object.
    Const(Option<ObjectId>),
    Slot(usize),
}

/// How a scan treats one stored column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Col {
    Fixed(Fixed),
    Assign(usize),
    /// Must equal the column at this earlier position.
    Same(usize),
}

#[derive(Debug, Clone)]
pub struct ScanStep {
    pub atom: Atom,
    pub perm: Permutation,
    /// Per stored column, in permutation order.
    pub cols: Vec<Col>,
    /// Leading fixed columns used as the range prefix.
    pub prefix: usize,
}

/// Looks an edge up by its id; columns are source, type, target.
#[derive(Debug, Clone)]
pub struct EdgeStep {
    pub atom: Atom,
    pub eid: Fixed,
    pub cols: [Col; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathEnd {
    Fixed(Fixed),
    Free(usize),
}

#[derive(Debug, Clone)]
pub struct PathStep {
    pub atom: Atom,
    pub automata: PathAutomata,
    pub source: PathEnd,
    pub target: PathEnd,
    pub var: Option<usize>,
    /// Search from the target with the reversed automaton.
    pub backward: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfCol {
    Fixed(Fixed),
    Level(usize),
}

#[derive(Debug, Clone)]
pub struct LfAtom {
    pub atom: Atom,
    pub perm: Permutation,
    pub cols: Vec<LfCol>,
}

#[derive(Debug, Clone)]
pub struct LeapfrogStep {
    pub atoms: Vec<LfAtom>,
    /// Slot bound at each level.
    pub levels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum Step {
    Scan(ScanStep),
    Edge(EdgeStep),
    /// Enumerates every object into a slot, as path start candidates.
    Candidates(usize),
    Path(PathStep),
    Leapfrog(LeapfrogStep),
}

#[derive(Debug, Clone)]
pub enum Physical {
    Pipeline(Vec<Step>),
    Optional(Box<Physical>, Box<Physical>),
}

#[derive(Debug, Clone)]
pub struct PhysicalPlan {
    pub vars: Vars,
    pub logical: Logical,
    pub binds: Vec<(usize, Option<ObjectId>)>,
    pub root: Physical,
    pub filter: Option<Condition>,
    pub select: Vec<Sel>,
    pub order: Vec<OrderKey>,
    pub limit: Option<u64>,
    /// Strategy fallbacks taken while planning.
    pub notes: Vec<String>,
}

struct Emitter<'a> {
    est: Estimator<'a>,
    strategy: Strategy,
    strict: bool,
    vars: Vars,
    notes: Vec<String>,
}

impl Emitter<'_> {
    fn fixed(&mut self, t: &Term, bound: &BTreeSet<Var>) -> Option<Fixed> {
        match t {
            Term::Const(d) => Some(Fixed::Const(lookup_datum(d, self.est.resolver))),
            Term::Var(v) if bound.contains(v) => Some(Fixed::Slot(self.vars.slot(v))),
            Term::Var(_) => None,
        }
    }

    fn datum_id(&self, d: &Datum) -> Option<ObjectId> {
        lookup_datum(d, self.est.resolver)
    }

    fn scan(&mut self, atom: &Atom, bound: &mut BTreeSet<Var>) -> Step {
        let terms = atom_columns(atom);
        if let Atom::Edge { eid, .. } = atom {
            if let Some(e) = self.fixed(eid, bound) {
                let mut cols = [Col::Same(0); 3];
                let mut assigned: Vec<(&Var, usize)> = Vec::new();
                for (i, t) in terms[..3].iter().enumerate() {
                    cols[i] = match self.fixed(t, bound) {
                        Some(f) => Col::Fixed(f),
                        None => {
                            let v = t.var().unwrap();
                            match assigned.iter().find(|(x, _)| *x == v) {
                                Some(&(_, p)) => Col::Same(p),
                                None => {
                                    assigned.push((v, i));
                                    Col::Assign(self.vars.slot(v))
                                }
                            }
                        }
                    };
                }
                bound.extend(atom.vars().into_iter().cloned());
                return Step::Edge(EdgeStep {
                    atom: atom.clone(),
                    eid: e,
                    cols,
                });
            }
        }
        let fixed_col = |t: &Term| match t {
            Term::Const(_) => true,
            Term::Var(v) => bound.contains(v),
        };
        let relation = relation_of(atom);
        let perm = *relation
            .permutations()
            .iter()
            .max_by_key(|p| {
                let lead = p.columns().iter().take_while(|&&c| fixed_col(&terms[c])).count();
                // prefer the earliest permutation on ties
                (lead, std::cmp::Reverse(relation.permutations().iter().position(|q| q == *p)))
            })
            .unwrap();
        let prefix = perm.columns().iter().take_while(|&&c| fixed_col(&terms[c])).count();
        let mut cols = Vec::new();
        let mut assigned: Vec<(Var, usize)> = Vec::new();
        for (pos, &c) in perm.columns().iter().enumerate() {
            let col = match self.fixed(&terms[c], bound) {
                Some(f) => Col::Fixed(f),
                None => {
                    let v = terms[c].var().unwrap().clone();
                    match assigned.iter().find(|(x, _)| *x == v) {
                        Some(&(_, p)) => Col::Same(p),
                        None => {
                            let slot = self.vars.slot(&v);
                            assigned.push((v, pos));
                            Col::Assign(slot)
                        }
                    }
                }
            };
            cols.push(col);
        }
        bound.extend(atom.vars().into_iter().cloned());
        Step::Scan(ScanStep {
            atom: atom.clone(),
            perm,
            cols,
            prefix,
        })
    }

    fn leapfrog(&mut self, atoms: &[Atom], order: &[Var], bound: &mut BTreeSet<Var>) -> Result<Step> {
        let mut lf_atoms = Vec::new();
        for atom in atoms {
            let perm = servable(atom, order, bound)
                .ok_or_else(|| Error::PermutationUnavailable(atom.to_string()))?;
            let terms = atom_columns(atom);
            let mut cols = Vec::new();
            for &c in perm.columns() {
                cols.push(match self.fixed(&terms[c], bound) {
                    Some(f) => LfCol::Fixed(f),
                    None => {
                        let v = terms[c].var().unwrap();
                        LfCol::Level(order.iter().position(|x| x == v).unwrap())
                    }
                });
            }
            lf_atoms.push(LfAtom {
                atom: atom.clone(),
                perm,
                cols,
            });
        }
        let levels = order.iter().map(|v| self.vars.slot(v)).collect();
        bound.extend(order.iter().cloned());
        Ok(Step::Leapfrog(LeapfrogStep {
            atoms: lf_atoms,
            levels,
        }))
    }

    fn path_end(&mut self, t: &Term, bound: &BTreeSet<Var>) -> PathEnd {
        match self.fixed(t, bound) {
            Some(f) => PathEnd::Fixed(f),
            None => PathEnd::Free(self.vars.slot(t.var().unwrap())),
        }
    }

    fn paths(&mut self, mut paths: Vec<Atom>, bound: &mut BTreeSet<Var>, steps: &mut Vec<Step>) {
        let anchored = |a: &Atom, bound: &BTreeSet<Var>| {
            let Atom::Path { source, target, .. } = a else { unreachable!() };
            let f = |t: &Term| t.var().map_or(true, |v| bound.contains(v));
            f(source) || f(target)
        };
        while !paths.is_empty() {
            let i = paths.iter().position(|a| anchored(a, bound)).unwrap_or(0);
            let atom = paths.remove(i);
            let Atom::Path {
                source,
                rpq,
                target,
                var,
            } = &atom
            else {
                unreachable!()
            };
            if !anchored(&atom, bound) {
                let v = source.var().unwrap();
                steps.push(Step::Candidates(self.vars.slot(v)));
                bound.insert(v.clone());
            }
            let s = self.path_end(source, bound);
            let t = self.path_end(target, bound);
            let backward = matches!(s, PathEnd::Free(_));
            let var = var.as_ref().map(|v| self.vars.slot(v));
            steps.push(Step::Path(PathStep {
                atom: atom.clone(),
                automata: PathAutomata::compile(rpq, self.est.resolver),
                source: s,
                target: t,
                var,
                backward,
            }));
            bound.extend(atom.vars().into_iter().cloned());
        }
    }

    fn block(&mut self, atoms: &[Atom], bound: &mut BTreeSet<Var>) -> Result<Physical> {
        let (paths, joins): (Vec<Atom>, Vec<Atom>) = atoms.iter().cloned().partition(Atom::is_path);
        let mut steps = Vec::new();
        let want_lf = match self.strategy {
            Strategy::NestedLoop => false,
            Strategy::Auto | Strategy::Leapfrog => true,
        };
        let order = if want_lf && paths.is_empty() && !joins.is_empty() {
            leapfrog_variable_order(&joins, bound, &self.est)
        } else {
            None
        };
        if self.strategy == Strategy::Leapfrog && order.is_none() && self.strict {
            let reason = if paths.is_empty() {
                "no variable order is served by the stored permutations"
            } else {
                "leapfrog does not evaluate path atoms"
            };
            return Err(Error::StrategyUnavailable(reason.into()));
        }
        if self.strategy == Strategy::Leapfrog && order.is_none() {
            self.notes.push(format!(
                "leapfrog not applicable to block [{}]; using nested loops",
                join_list(atoms)
            ));
        }
        match order {
            Some(order) if !order.is_empty() => {
                steps.push(self.leapfrog(&joins, &order, bound)?);
            }
            _ => {
                for i in plan_join_order(&joins, bound, &self.est) {
                    steps.push(self.scan(&joins[i], bound));
                }
            }
        }
        self.paths(paths, bound, &mut steps);
        Ok(Physical::Pipeline(steps))
    }

    fn pattern(&mut self, p: &Logical, bound: &mut BTreeSet<Var>) -> Result<Physical> {
        match p {
            Logical::Match(atoms) => self.block(atoms, bound),
            Logical::Optional(l, r) => {
                let left = self.pattern(l, bound)?;
                let mut inner = bound.clone();
                let right = self.pattern(r, &mut inner)?;
                Ok(Physical::Optional(Box::new(left), Box::new(right)))
            }
            _ => unreachable!("pattern nodes only"),
        }
    }
}

pub fn emit_physical(
    logical: &Logical,
    est: Estimator,
    strategy: Strategy,
    strict: bool,
) -> Result<PhysicalPlan> {
    let parts = Parts::of(logical.clone());
    let mut e = Emitter {
        est,
        strategy,
        strict,
        vars: Vars::default(),
        notes: Vec::new(),
    };
    let mut bound = BTreeSet::new();
    let mut binds = Vec::new();
    for (v, d) in &parts.bindings {
        binds.push((e.vars.slot(v), e.datum_id(d)));
        bound.insert(v.clone());
    }
    let root = e.pattern(parts.pattern.as_ref().unwrap(), &mut bound)?;
    for s in parts.items.iter().chain(parts.order.iter().map(|o| &o.sel)) {
        e.vars.slot(s.var());
    }
    if let Some(c) = &parts.condition {
        let mut vs = Vec::new();
        c.vars(&mut vs);
        for v in vs {
            e.vars.slot(&v);
        }
    }
    Ok(PhysicalPlan {
        vars: e.vars,
        logical: logical.clone(),
        binds,
        root,
        filter: parts.condition,
        select: parts.items,
        order: parts.order,
        limit: parts.limit,
        notes: e.notes,
    })
}

/// Full planning pipeline for a checked query.
pub fn plan_query(q: &Query, est: Estimator, strategy: Strategy, strict: bool) -> Result<PhysicalPlan> {
    let logical = simplify(build_logical(q));
    emit_physical(&logical, est, strategy, strict)
}

/// Resolves a property key to its object id.
pub fn key_id(key: &str, resolver: &(impl Resolver + ?Sized)) -> Option<ObjectId> {
    lookup_value(&Value::Str(key.to_string()), resolver)
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn join_list<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
}

impl Logical {
    fn render(&self, out: &mut String, depth: usize) {
        indent(out, depth);
        match self {
            Logical::Select { items, limit, child } => {
                let _ = write!(out, "OpSelect({})", join_list(items));
                if let Some(n) = limit {
                    let _ = write!(out, " LIMIT {n}");
                }
                out.push('\n');
                child.render(out, depth + 1);
            }
            Logical::OrderBy { keys, child } => {
                let _ = writeln!(out, "OpOrderBy({})", join_list(keys));
                child.render(out, depth + 1);
            }
            Logical::Where { condition, child } => {
                let _ = writeln!(out, "OpWhere({condition})");
                child.render(out, depth + 1);
            }
            Logical::Bind { bindings, child } => {
                let shown: Vec<String> = bindings
                    .iter()
                    .map(|(v, d)| format!("{v} = {}", Operand::Const(d.clone())))
                    .collect();
                let _ = writeln!(out, "OpBind({})", shown.join(", "));
                child.render(out, depth + 1);
            }
            Logical::Match(atoms) => {
                out.push_str("OpMatch\n");
                for a in atoms {
                    indent(out, depth + 1);
                    let _ = writeln!(out, "{a}");
                }
            }
            Logical::Optional(l, r) => {
                out.push_str("OpOptional\n");
                l.render(out, depth + 1);
                r.render(out, depth + 1);
            }
        }
    }
}

impl fmt::Display for Logical {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.render(&mut s, 0);
        f.write_str(&s)
    }
}

impl PhysicalPlan {
    fn render_physical(&self, p: &Physical, out: &mut String, depth: usize) {
        match p {
            Physical::Optional(l, r) => {
                indent(out, depth);
                out.push_str("OptionalJoin\n");
                self.render_physical(l, out, depth + 1);
                self.render_physical(r, out, depth + 1);
            }
            Physical::Pipeline(steps) => {
                indent(out, depth);
                out.push_str("NestedLoop\n");
                for s in steps {
                    indent(out, depth + 1);
                    match s {
                        Step::Scan(s) => {
                            let _ = writeln!(
                                out,
                                "IndexScan {} on {} prefix {}",
                                s.atom,
                                s.perm.file_name().trim_end_matches(".bpt"),
                                s.prefix
                            );
                        }
                        Step::Edge(s) => {
                            let _ = writeln!(out, "EdgeLookup {}", s.atom);
                        }
                        Step::Candidates(slot) => {
                            let _ = writeln!(out, "ObjectCandidates {}", self.vars.name(*slot));
                        }
                        Step::Path(s) => {
                            let _ = writeln!(
                                out,
                                "PathSearch {} from {} ({} states)",
                                s.atom,
                                if s.backward { "target" } else { "source" },
                                if s.backward {
                                    s.automata.backward.state_count()
                                } else {
                                    s.automata.forward.state_count()
                                }
                            );
                        }
                        Step::Leapfrog(l) => {
                            let order: Vec<String> =
                                l.levels.iter().map(|&s| self.vars.name(s).to_string()).collect();
                            let _ = writeln!(out, "Leapfrog [{}]", order.join(", "));
                            for a in &l.atoms {
                                indent(out, depth + 2);
                                let _ = writeln!(
                                    out,
                                    "{} on {}",
                                    a.atom,
                                    a.perm.file_name().trim_end_matches(".bpt")
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    /// Stable text rendering of the logical and physical plans.
    pub fn explain(&self) -> String {
        let mut out = String::from("Logical plan:\n");
        out.push_str(&self.logical.to_string());
        out.push_str("Physical plan:\n");
        let mut depth = 0;
        indent(&mut out, depth);
        let _ = writeln!(out, "Project({})", join_list(&self.select));
        depth += 1;
        if let Some(n) = self.limit {
            indent(&mut out, depth);
            let _ = writeln!(out, "Limit({n})");
            depth += 1;
        }
        if !self.order.is_empty() {
            indent(&mut out, depth);
            let _ = writeln!(out, "Sort({})", join_list(&self.order));
            depth += 1;
        }
        if let Some(c) = &self.filter {
            indent(&mut out, depth);
            let _ = writeln!(out, "Filter({c})");
            depth += 1;
        }
        if !self.binds.is_empty() {
            indent(&mut out, depth);
            let shown: Vec<String> = self.binds.iter().map(|(s, _)| self.vars.name(*s).to_string()).collect();
            let _ = writeln!(out, "Bind({})", shown.join(", "));
            depth += 1;
        }
        self.render_physical(&self.root, &mut out, depth);
        out
    }
}
