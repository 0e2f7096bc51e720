//! Pipelined execution of physical plans.
//!
//! Bindings are slot vectors of raw object ids; 0 marks an unbound slot.
//! Every operator clears the slots it assigned once it is exhausted, and
//! reopening an operator restarts it.

pub mod leapfrog;
pub mod sort;

use std::borrow::Cow;

use crate::algebra::Row;
use crate::dgql::{Condition, Operand, Sel};
use crate::error::Result;
use crate::model::{decode, Datum, Interner, ObjectId, Resolver, StringArena};
use crate::path::PathSearch;
use crate::plan::{Col, EdgeStep, Fixed, PathEnd, PathStep, Physical, PhysicalPlan, ScanStep, Step};
use crate::storage::{Database, Permutation, RangeIter};

use leapfrog::LeapfrogIter;
use sort::Sorter;

/// Counters collected while a query runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    /// Bindings produced by scans and by leapfrog levels.
    pub intermediate: u64,
    /// Pages read from disk by the buffer pool.
    pub pages_read: u64,
    /// Cursor seeks issued by leapfrog iterators.
    pub seeks: u64,
    /// Solutions produced.
    pub rows: u64,
}

/// Database strings plus strings created while the query runs (path
/// witnesses). New strings get offsets past the end of the stored ones.
pub struct Overlay<'a> {
    base: &'a StringArena,
    base_len: u64,
    extra: StringArena,
}

impl<'a> Overlay<'a> {
    pub fn new(base: &'a StringArena) -> Overlay<'a> {
        Overlay {
            base,
            base_len: base.bytes().len() as u64,
            extra: StringArena::new(),
        }
    }

    pub fn intern(&mut self, s: &str) -> Result<ObjectId> {
        if let Some(id) = ObjectId::inline_str(s) {
            return Ok(id);
        }
        if let Some(offset) = self.base.lookup_str(s) {
            return Ok(ObjectId::external(offset));
        }
        Ok(ObjectId::external(self.base_len + self.extra.intern(s)?))
    }
}

impl Resolver for Overlay<'_> {
    fn resolve_str(&self, offset: u64) -> Result<Cow<'_, str>> {
        if offset < self.base_len {
            self.base.resolve_str(offset)
        } else {
            self.extra.resolve_str(offset - self.base_len)
        }
    }

    fn lookup_str(&self, s: &str) -> Option<u64> {
        self.base
            .lookup_str(s)
            .or_else(|| self.extra.lookup_str(s).map(|o| o + self.base_len))
    }
}

pub struct Ctx<'a> {
    pub db: &'a Database,
    pub overlay: Overlay<'a>,
    pub stats: Stats,
}

pub(crate) fn fixed_value(f: Fixed, binding: &[u64]) -> Option<u64> {
    match f {
        Fixed::Const(c) => c.map(ObjectId::raw),
        Fixed::Slot(s) => Some(binding[s]).filter(|&v| v != 0),
    }
}

struct ScanIter<'p> {
    step: &'p ScanStep,
    range: Option<RangeIter>,
    assigned: Vec<usize>,
}

impl<'p> ScanIter<'p> {
    fn new(step: &'p ScanStep) -> ScanIter<'p> {
        let assigned = step
            .cols
            .iter()
            .filter_map(|c| match c {
                Col::Assign(s) => Some(*s),
                _ => None,
            })
            .collect();
        ScanIter {
            step,
            range: None,
            assigned,
        }
    }

    fn open(&mut self, binding: &[u64], ctx: &mut Ctx) -> Result<()> {
        self.range = None;
        let mut prefix = Vec::with_capacity(self.step.prefix);
        for c in &self.step.cols[..self.step.prefix] {
            let Col::Fixed(f) = c else { unreachable!() };
            match fixed_value(*f, binding) {
                Some(v) => prefix.push(v),
                None => return Ok(()),
            }
        }
        self.range = Some(ctx.db.tree(self.step.perm).range(&prefix)?);
        Ok(())
    }

    fn next(&mut self, binding: &mut [u64], ctx: &mut Ctx) -> Result<bool> {
        if let Some(range) = &mut self.range {
            'rec: while let Some(r) = range.next_record()? {
                for (pos, c) in self.step.cols.iter().enumerate().skip(self.step.prefix) {
                    let ok = match c {
                        Col::Fixed(f) => fixed_value(*f, binding) == Some(r[pos]),
                        Col::Same(p) => r[*p] == r[pos],
                        Col::Assign(_) => true,
                    };
                    if !ok {
                        continue 'rec;
                    }
                }
                for (pos, c) in self.step.cols.iter().enumerate() {
                    if let Col::Assign(s) = c {
                        binding[*s] = r[pos];
                    }
                }
                ctx.stats.intermediate += 1;
                return Ok(true);
            }
            self.range = None;
        }
        for &s in &self.assigned {
            binding[s] = 0;
        }
        Ok(false)
    }
}

struct EdgeIter<'p> {
    step: &'p EdgeStep,
    pending: bool,
}

impl EdgeIter<'_> {
    fn next(&mut self, binding: &mut [u64], ctx: &mut Ctx) -> Result<bool> {
        let clear = |binding: &mut [u64]| {
            for c in &self.step.cols {
                if let Col::Assign(s) = c {
                    binding[*s] = 0;
                }
            }
        };
        if !std::mem::take(&mut self.pending) {
            clear(binding);
            return Ok(false);
        }
        let Some(eid) = fixed_value(self.step.eid, binding) else {
            return Ok(false);
        };
        let eid = ObjectId::from_raw(eid)?;
        if !eid.is_edge() || eid.payload() >= ctx.db.edge_count() {
            return Ok(false);
        }
        let (s, t, o) = ctx.db.edge_lookup(eid)?;
        let r = [s.raw(), t.raw(), o.raw()];
        for (pos, c) in self.step.cols.iter().enumerate() {
            let ok = match c {
                Col::Fixed(f) => fixed_value(*f, binding) == Some(r[pos]),
                Col::Same(p) => r[*p] == r[pos],
                Col::Assign(_) => true,
            };
            if !ok {
                return Ok(false);
            }
        }
        for (pos, c) in self.step.cols.iter().enumerate() {
            if let Col::Assign(s) = c {
                binding[*s] = r[pos];
            }
        }
        ctx.stats.intermediate += 1;
        Ok(true)
    }
}

struct PathIter<'p> {
    step: &'p PathStep,
    search: Option<PathSearch<'p, Database>>,
}

impl<'p> PathIter<'p> {
    fn end(e: PathEnd, binding: &[u64]) -> Result<Option<Option<ObjectId>>> {
        // Some(None): free; Some(Some(o)): fixed; None: fixed to an absent object
        match e {
            PathEnd::Free(_) => Ok(Some(None)),
            PathEnd::Fixed(f) => match fixed_value(f, binding) {
                Some(v) => Ok(Some(Some(ObjectId::from_raw(v)?))),
                None => Ok(None),
            },
        }
    }

    fn open(&mut self, binding: &[u64], ctx: &Ctx<'p>) -> Result<()> {
        self.search = None;
        let (Some(s), Some(t)) = (Self::end(self.step.source, binding)?, Self::end(self.step.target, binding)?) else {
            return Ok(());
        };
        let want = self.step.var.is_some();
        self.search = Some(if self.step.backward {
            PathSearch::new(ctx.db, &self.step.automata.backward, t, s, want)?
        } else {
            PathSearch::new(ctx.db, &self.step.automata.forward, s, t, want)?
        });
        Ok(())
    }

    fn free_slots(&self) -> impl Iterator<Item = usize> + '_ {
        let ends = [self.step.source, self.step.target].into_iter().filter_map(|e| match e {
            PathEnd::Free(s) => Some(s),
            PathEnd::Fixed(_) => None,
        });
        ends.chain(self.step.var)
    }

    fn next(&mut self, binding: &mut [u64], ctx: &mut Ctx) -> Result<bool> {
        if let Some(search) = &mut self.search {
            if let Some((found, witness)) = search.next_match()? {
                let free = if self.step.backward { self.step.source } else { self.step.target };
                if let PathEnd::Free(s) = free {
                    binding[s] = found.raw();
                }
                if let (Some(slot), Some(w)) = (self.step.var, witness) {
                    let w = if self.step.backward { w.reversed() } else { w };
                    let text = w.format(&ctx.overlay)?;
                    binding[slot] = ctx.overlay.intern(&text)?.raw();
                }
                ctx.stats.intermediate += 1;
                return Ok(true);
            }
            self.search = None;
        }
        let slots: Vec<usize> = self.free_slots().collect();
        for s in slots {
            binding[s] = 0;
        }
        Ok(false)
    }
}

struct CandidateIter {
    slot: usize,
    range: Option<RangeIter>,
}

enum StepIter<'p> {
    Scan(ScanIter<'p>),
    Edge(EdgeIter<'p>),
    Candidates(CandidateIter),
    Path(PathIter<'p>),
    Leapfrog(LeapfrogIter<'p>),
}

impl<'p> StepIter<'p> {
    fn new(db: &Database, step: &'p Step) -> StepIter<'p> {
        match step {
            Step::Scan(s) => StepIter::Scan(ScanIter::new(s)),
            Step::Edge(s) => StepIter::Edge(EdgeIter { step: s, pending: false }),
            Step::Candidates(slot) => StepIter::Candidates(CandidateIter { slot: *slot, range: None }),
            Step::Path(s) => StepIter::Path(PathIter { step: s, search: None }),
            Step::Leapfrog(s) => StepIter::Leapfrog(LeapfrogIter::new(db, s)),
        }
    }

    fn open(&mut self, binding: &mut [u64], ctx: &mut Ctx<'p>) -> Result<()> {
        match self {
            StepIter::Scan(s) => s.open(binding, ctx),
            StepIter::Edge(e) => {
                e.pending = true;
                Ok(())
            }
            StepIter::Candidates(c) => {
                c.range = Some(ctx.db.tree(Permutation::Objects).scan()?);
                Ok(())
            }
            StepIter::Path(p) => p.open(binding, ctx),
            StepIter::Leapfrog(l) => l.open(binding, ctx),
        }
    }

    fn next(&mut self, binding: &mut [u64], ctx: &mut Ctx<'p>) -> Result<bool> {
        match self {
            StepIter::Scan(s) => s.next(binding, ctx),
            StepIter::Edge(e) => e.next(binding, ctx),
            StepIter::Candidates(c) => {
                if let Some(r) = c.range.as_mut().map(|r| r.next_record()).transpose()?.flatten() {
                    binding[c.slot] = r[0];
                    return Ok(true);
                }
                c.range = None;
                binding[c.slot] = 0;
                Ok(false)
            }
            StepIter::Path(p) => p.next(binding, ctx),
            StepIter::Leapfrog(l) => l.next(binding, ctx),
        }
    }
}

/// Nested-loop pipeline with depth-first backtracking.
struct PipelineIter<'p> {
    steps: Vec<StepIter<'p>>,
    depth: usize,
    started: bool,
    done: bool,
}

impl<'p> PipelineIter<'p> {
    fn open(&mut self) {
        self.started = false;
        self.done = false;
    }

    fn next(&mut self, binding: &mut [u64], ctx: &mut Ctx<'p>) -> Result<bool> {
        if self.done {
            return Ok(false);
        }
        let n = self.steps.len();
        if n == 0 {
            self.done = true;
            return Ok(true);
        }
        if !self.started {
            self.started = true;
            self.depth = 0;
            self.steps[0].open(binding, ctx)?;
        }
        loop {
            let d = self.depth;
            if self.steps[d].next(binding, ctx)? {
                if d + 1 == n {
                    return Ok(true);
                }
                self.depth += 1;
                self.steps[d + 1].open(binding, ctx)?;
            } else if d == 0 {
                self.done = true;
                return Ok(false);
            } else {
                self.depth -= 1;
            }
        }
    }
}

/// Left outer join: each left row extended by every right row, or alone.
struct OptionalIter<'p> {
    left: Box<Node<'p>>,
    right: Box<Node<'p>>,
    in_right: bool,
    matched: bool,
}

enum Node<'p> {
    Pipeline(PipelineIter<'p>),
    Optional(OptionalIter<'p>),
}

impl<'p> Node<'p> {
    fn build(db: &Database, p: &'p Physical) -> Node<'p> {
        match p {
            Physical::Pipeline(steps) => Node::Pipeline(PipelineIter {
                steps: steps.iter().map(|s| StepIter::new(db, s)).collect(),
                depth: 0,
                started: false,
                done: false,
            }),
            Physical::Optional(l, r) => Node::Optional(OptionalIter {
                left: Box::new(Node::build(db, l)),
                right: Box::new(Node::build(db, r)),
                in_right: false,
                matched: false,
            }),
        }
    }

    fn open(&mut self) {
        match self {
            Node::Pipeline(p) => p.open(),
            Node::Optional(o) => {
                o.left.open();
                o.in_right = false;
            }
        }
    }

    fn next(&mut self, binding: &mut [u64], ctx: &mut Ctx<'p>) -> Result<bool> {
        match self {
            Node::Pipeline(p) => p.next(binding, ctx),
            Node::Optional(o) => loop {
                if o.in_right {
                    if o.right.next(binding, ctx)? {
                        o.matched = true;
                        return Ok(true);
                    }
                    o.in_right = false;
                    if !o.matched {
                        return Ok(true);
                    }
                }
                if !o.left.next(binding, ctx)? {
                    return Ok(false);
                }
                o.right.open();
                o.in_right = true;
                o.matched = false;
            },
        }
    }
}

/// Runs a plan and streams solution rows.
pub struct Execution<'p> {
    plan: &'p PhysicalPlan,
    ctx: Ctx<'p>,
    root: Node<'p>,
    binding: Vec<u64>,
    sorted: Option<sort::SortedRows>,
    sort_budget: usize,
    pages_at_start: u64,
    emitted: u64,
    started: bool,
    dead: bool,
}

impl<'p> Execution<'p> {
    pub fn new(db: &'p Database, plan: &'p PhysicalPlan, sort_budget: usize) -> Execution<'p> {
        let mut binding = vec![0; plan.vars.len()];
        let mut dead = false;
        for &(slot, value) in &plan.binds {
            match value {
                Some(v) => binding[slot] = v.raw(),
                None => dead = true,
            }
        }
        let mut root = Node::build(db, &plan.root);
        root.open();
        Execution {
            plan,
            ctx: Ctx {
                db,
                overlay: Overlay::new(db.strings()),
                stats: Stats::default(),
            },
            root,
            binding,
            sorted: None,
            sort_budget,
            pages_at_start: db.pool().pages_read(),
            emitted: 0,
            started: false,
            dead,
        }
    }

    pub fn stats(&self) -> Stats {
        let mut s = self.ctx.stats;
        s.pages_read = self.ctx.db.pool().pages_read() - self.pages_at_start;
        s
    }

    fn operand(&self, o: &Operand) -> Result<Option<Datum>> {
        Ok(match o {
            Operand::Const(d) => Some(d.clone()),
            Operand::Var(v) => match self.slot_value(v) {
                Some(id) => Some(decode(id, &self.ctx.overlay)?),
                None => None,
            },
            Operand::Prop(v, k) => self.prop_value(v, k)?,
        })
    }

    fn slot_value(&self, v: &crate::dgql::Var) -> Option<ObjectId> {
        let slot = self.plan.vars.get(v)?;
        let raw = self.binding[slot];
        (raw != 0).then(|| ObjectId::from_raw(raw).ok()).flatten()
    }

    fn prop_value(&self, v: &crate::dgql::Var, key: &str) -> Result<Option<Datum>> {
        let Some(object) = self.slot_value(v) else { return Ok(None) };
        let Some(key) = crate::plan::key_id(key, self.ctx.db) else { return Ok(None) };
        match self.ctx.db.prop(object, key)? {
            Some(value) => Ok(Some(decode(value, &self.ctx.overlay)?)),
            None => Ok(None),
        }
    }

    fn holds(&self, c: &Condition) -> Result<bool> {
        Ok(match c {
            Condition::Cmp(a, op, b) => match (self.operand(a)?, self.operand(b)?) {
                (Some(x), Some(y)) => crate::algebra::compare(*op, &x, &y),
                _ => false,
            },
            Condition::Not(c) => !self.holds(c)?,
            Condition::And(a, b) => self.holds(a)? && self.holds(b)?,
            Condition::Or(a, b) => self.holds(a)? || self.holds(b)?,
        })
    }

    fn project(&self, items: &[Sel]) -> Result<Row> {
        items
            .iter()
            .map(|s| match s {
                Sel::Var(v) => self.operand(&Operand::Var(v.clone())),
                Sel::Prop(v, k) => self.prop_value(v, k),
            })
            .collect()
    }

    /// Next solution of the pattern that passes the filter.
    fn next_solution(&mut self) -> Result<bool> {
        if self.dead {
            return Ok(false);
        }
        while self.root.next(&mut self.binding, &mut self.ctx)? {
            match &self.plan.filter {
                Some(c) if !self.holds(c)? => continue,
                _ => return Ok(true),
            }
        }
        self.dead = true;
        Ok(false)
    }

    fn limit_reached(&self) -> bool {
        matches!(self.plan.limit, Some(n) if n > 0 && self.emitted >= n)
    }

    pub fn next_row(&mut self) -> Result<Option<Row>> {
        if self.limit_reached() {
            return Ok(None);
        }
        let row = if self.plan.order.is_empty() {
            if !self.next_solution()? {
                return Ok(None);
            }
            self.project(&self.plan.select)?
        } else {
            if !self.started {
                self.started = true;
                let desc = self.plan.order.iter().map(|o| o.descending).collect();
                let mut sorter = Sorter::new(desc, self.sort_budget);
                let keys: Vec<Sel> = self.plan.order.iter().map(|o| o.sel.clone()).collect();
                while self.next_solution()? {
                    sorter.push(self.project(&keys)?, self.project(&self.plan.select)?)?;
                }
                self.sorted = Some(sorter.finish()?);
            }
            match self.sorted.as_mut().unwrap().next_row()? {
                Some(r) => r,
                None => return Ok(None),
            }
        };
        self.emitted += 1;
        self.ctx.stats.rows += 1;
        Ok(Some(row))
    }

    /// Drains the remaining rows.
    pub fn collect_rows(&mut self) -> Result<Vec<Row>> {
        let mut out = Vec::new();
        while let Some(r) = self.next_row()? {
            out.push(r);
        }
        Ok(out)
    }
}
