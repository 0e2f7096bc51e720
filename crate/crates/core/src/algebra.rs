//! Formal semantics of graph queries over the in-memory reference graph.
//!
//! Everything here is deliberately naive: mapping sets are materialized and
//! joined by nested loops. The query engine is tested against these
//! functions.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::dgql::{
    check_well_designed, Atom, CmpOp, Condition, Operand, OrderKey, Pattern, Query, Rpq, Sel,
    Term, Var,
};
use crate::error::{Error, Result};
use crate::model::{decode, lookup_datum, lookup_value, Datum, ObjectId, PropertyDomainGraph, Value};

/// A partial function from variables to objects.
pub type Mapping = BTreeMap<Var, ObjectId>;
pub type MappingSet = BTreeSet<Mapping>;

pub fn compatible(a: &Mapping, b: &Mapping) -> bool {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .all(|(v, o)| large.get(v).map_or(true, |p| p == o))
}

pub fn merge(a: &Mapping, b: &Mapping) -> Result<Mapping> {
    if !compatible(a, b) {
        return Err(Error::Incompatible);
    }
    let mut out = a.clone();
    out.extend(b.iter().map(|(v, o)| (v.clone(), *o)));
    Ok(out)
}

pub fn join(a: &MappingSet, b: &MappingSet) -> MappingSet {
    let mut out = MappingSet::new();
    for x in a {
        for y in b {
            if compatible(x, y) {
                let mut m = x.clone();
                m.extend(y.iter().map(|(v, o)| (v.clone(), *o)));
                out.insert(m);
            }
        }
    }
    out
}

pub fn union(a: &MappingSet, b: &MappingSet) -> MappingSet {
    a.union(b).cloned().collect()
}

pub fn difference(a: &MappingSet, b: &MappingSet) -> MappingSet {
    a.iter()
        .filter(|x| !b.iter().any(|y| compatible(x, y)))
        .cloned()
        .collect()
}

pub fn left_outer_join(a: &MappingSet, b: &MappingSet) -> MappingSet {
    union(&join(a, b), &difference(a, b))
}

/// The set holding only the empty mapping, the unit of [`join`].
pub fn unit() -> MappingSet {
    MappingSet::from([Mapping::new()])
}

/// Binds `terms` to `values` position by position; `None` when a constant
/// or a repeated variable disagrees.
fn bind(terms: &[(&Term, Option<ObjectId>)], values: &[ObjectId]) -> Option<Mapping> {
    let mut m = Mapping::new();
    for ((term, constant), &value) in terms.iter().zip(values) {
        match term {
            Term::Const(_) => {
                if *constant != Some(value) {
                    return None;
                }
            }
            Term::Var(v) => {
                if let Some(&old) = m.get(v) {
                    if old != value {
                        return None;
                    }
                }
                m.insert(v.clone(), value);
            }
        }
    }
    Some(m)
}

fn resolve_terms<'a>(terms: &[&'a Term], g: &PropertyDomainGraph) -> Vec<(&'a Term, Option<ObjectId>)> {
    terms
        .iter()
        .map(|t| match t {
            Term::Const(d) => (*t, lookup_datum(d, &g.strings)),
            Term::Var(_) => (*t, None),
        })
        .collect()
}

fn key_id(d: &Datum, g: &PropertyDomainGraph) -> Option<ObjectId> {
    lookup_datum(d, &g.strings)
}

/// All mappings over the variables of one atom that satisfy it.
pub fn eval_atom(atom: &Atom, g: &PropertyDomainGraph) -> Result<MappingSet> {
    let terms = resolve_terms(&atom.terms(), g);
    let mut out = MappingSet::new();
    match atom {
        Atom::Object(_) => {
            for &o in &g.objects {
                out.extend(bind(&terms, &[o]));
            }
        }
        Atom::Edge { .. } => {
            for (&eid, &(s, t, o)) in &g.gamma {
                out.extend(bind(&terms, &[s, t, o, eid]));
            }
        }
        Atom::Label { label, .. } => {
            if let Some(l) = key_id(label, g) {
                for (&o, ls) in &g.labels {
                    if ls.contains(&l) {
                        out.extend(bind(&terms, &[o]));
                    }
                }
            }
        }
        Atom::Prop { key, .. } => {
            if let Some(k) = key_id(key, g) {
                for (&(o, key), &v) in &g.props {
                    if key == k {
                        out.extend(bind(&terms, &[o, v]));
                    }
                }
            }
        }
        Atom::Path { rpq, var, .. } => {
            if var.is_some() {
                return Err(Error::Unsupported(
                    "path variables are not supported by the reference evaluator".into(),
                ));
            }
            for (s, t) in eval_rpq(rpq, g) {
                out.extend(bind(&terms, &[s, t]));
            }
        }
    }
    Ok(out)
}

/// Evaluates a conjunction of atoms; the result ranges over all their
/// variables.
pub fn eval_bgp(atoms: &[Atom], g: &PropertyDomainGraph) -> Result<MappingSet> {
    let mut acc = unit();
    for a in atoms {
        acc = join(&acc, &eval_atom(a, g)?);
        if acc.is_empty() {
            break;
        }
    }
    Ok(acc)
}

/// Same as [`eval_bgp`] with path atoms allowed, then restricted to `vars`.
pub fn eval_navigational(
    vars: &BTreeSet<Var>,
    atoms: &[Atom],
    g: &PropertyDomainGraph,
) -> Result<MappingSet> {
    Ok(eval_bgp(atoms, g)?
        .into_iter()
        .map(|m| m.into_iter().filter(|(v, _)| vars.contains(v)).collect())
        .collect())
}

pub type Pairs = BTreeSet<(ObjectId, ObjectId)>;

fn compose(a: &Pairs, b: &Pairs) -> Pairs {
    let mut by_source: BTreeMap<ObjectId, Vec<ObjectId>> = BTreeMap::new();
    for &(s, t) in b {
        by_source.entry(s).or_default().push(t);
    }
    let mut out = Pairs::new();
    for &(s, m) in a {
        if let Some(ts) = by_source.get(&m) {
            out.extend(ts.iter().map(|&t| (s, t)));
        }
    }
    out
}

/// Pairs of objects connected by a path whose type sequence matches `r`.
pub fn eval_rpq(r: &Rpq, g: &PropertyDomainGraph) -> Pairs {
    match r {
        Rpq::Epsilon => g.objects.iter().map(|&o| (o, o)).collect(),
        Rpq::Type(d) => match lookup_datum(d, &g.strings) {
            Some(ty) => g
                .gamma
                .values()
                .filter(|(_, t, _)| *t == ty)
                .map(|&(s, _, o)| (s, o))
                .collect(),
            None => Pairs::new(),
        },
        Rpq::Concat(a, b) => compose(&eval_rpq(a, g), &eval_rpq(b, g)),
        Rpq::Alt(a, b) => {
            let mut out = eval_rpq(a, g);
            out.extend(eval_rpq(b, g));
            out
        }
        Rpq::Inverse(a) => eval_rpq(a, g).into_iter().map(|(s, t)| (t, s)).collect(),
        Rpq::Star(a) => {
            let step = eval_rpq(a, g);
            let mut acc = eval_rpq(&Rpq::Epsilon, g);
            loop {
                let next = compose(&acc, &step);
                let before = acc.len();
                acc.extend(next);
                if acc.len() == before {
                    return acc;
                }
            }
        }
        Rpq::Plus(_) | Rpq::Optional(_) => eval_rpq(&r.expand(), g),
    }
}

fn operand_value(op: &Operand, m: &Mapping, g: &PropertyDomainGraph) -> Option<Datum> {
    match op {
        Operand::Const(d) => Some(d.clone()),
        Operand::Var(v) => decode(*m.get(v)?, &g.strings).ok(),
        Operand::Prop(v, k) => {
            let key = lookup_value(&Value::Str(k.clone()), &g.strings)?;
            decode(g.prop(*m.get(v)?, key)?, &g.strings).ok()
        }
    }
}

pub fn compare(op: CmpOp, a: &Datum, b: &Datum) -> bool {
    let ord = a.cmp(b);
    match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
    }
}

/// Whether `m` satisfies `c`. A comparison with an unbound variable or an
/// undefined property is false.
pub fn eval_condition(m: &Mapping, c: &Condition, g: &PropertyDomainGraph) -> bool {
    match c {
        Condition::Cmp(a, op, b) => match (operand_value(a, m, g), operand_value(b, m, g)) {
            (Some(x), Some(y)) => compare(*op, &x, &y),
            _ => false,
        },
        Condition::Not(c) => !eval_condition(m, c, g),
        Condition::And(a, b) => eval_condition(m, a, g) && eval_condition(m, b, g),
        Condition::Or(a, b) => eval_condition(m, a, g) || eval_condition(m, b, g),
    }
}

pub type Row = Vec<Option<Datum>>;

/// Query output: named columns and rows, duplicates kept.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SolutionSequence {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl SolutionSequence {
    /// Rows in canonical order, for multiset comparison.
    pub fn sorted_rows(&self) -> Vec<Row> {
        let mut rows = self.rows.clone();
        rows.sort();
        rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Renders one cell; undefined values print as `null`.
pub fn format_cell(cell: &Option<Datum>) -> String {
    match cell {
        Some(d) => d.to_string(),
        None => "null".into(),
    }
}

impl fmt::Display for SolutionSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.columns.join("\t"))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(format_cell).collect();
            writeln!(f, "{}", cells.join("\t"))?;
        }
        Ok(())
    }
}

/// Orders rows by their sort keys, then by the projected row; nulls first
/// ascending.
pub fn order_rows(rows: &mut [(Row, Row)], descending: &[bool]) {
    rows.sort_by(|(ka, ra), (kb, rb)| compare_keys(ka, kb, descending).then_with(|| ra.cmp(rb)));
}

pub fn compare_keys(a: &[Option<Datum>], b: &[Option<Datum>], descending: &[bool]) -> Ordering {
    for ((x, y), &desc) in a.iter().zip(b).zip(descending) {
        let o = x.cmp(y);
        let o = if desc { o.reverse() } else { o };
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

fn sel_value(s: &Sel, m: &Mapping, g: &PropertyDomainGraph) -> Option<Datum> {
    match s {
        Sel::Var(v) => operand_value(&Operand::Var(v.clone()), m, g),
        Sel::Prop(v, k) => operand_value(&Operand::Prop(v.clone(), k.clone()), m, g),
    }
}

/// Projects, orders and limits a set of mappings.
pub fn apply_modifiers<'a>(
    mappings: impl IntoIterator<Item = &'a Mapping>,
    select: &[Sel],
    order: &[OrderKey],
    limit: Option<u64>,
    g: &PropertyDomainGraph,
) -> SolutionSequence {
    let mut rows: Vec<(Row, Row)> = mappings
        .into_iter()
        .map(|m| {
            let keys = order.iter().map(|o| sel_value(&o.sel, m, g)).collect();
            let row = select.iter().map(|s| sel_value(s, m, g)).collect();
            (keys, row)
        })
        .collect();
    if !order.is_empty() {
        let desc: Vec<bool> = order.iter().map(|o| o.descending).collect();
        order_rows(&mut rows, &desc);
    }
    let mut rows: Vec<Row> = rows.into_iter().map(|(_, r)| r).collect();
    if let Some(n) = limit.filter(|&n| n > 0) {
        rows.truncate(n as usize);
    }
    SolutionSequence {
        columns: select.iter().map(Sel::column_name).collect(),
        rows,
    }
}

pub fn eval_pattern(p: &Pattern, g: &PropertyDomainGraph) -> Result<MappingSet> {
    match p {
        Pattern::Basic(atoms) => eval_bgp(atoms, g),
        Pattern::Optional(l, r) => Ok(left_outer_join(&eval_pattern(l, g)?, &eval_pattern(r, g)?)),
    }
}

/// Reference evaluation of a whole query.
pub fn oracle_evaluate(q: &Query, g: &PropertyDomainGraph) -> Result<SolutionSequence> {
    check_well_designed(q)?;
    let all = eval_pattern(&q.pattern, g)?;
    let kept: Vec<&Mapping> = all
        .iter()
        .filter(|m| q.condition.as_ref().map_or(true, |c| eval_condition(m, c, g)))
        .collect();
    Ok(apply_modifiers(kept, &q.select, &q.order, q.limit, g))
}
