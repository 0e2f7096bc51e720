//! Worst-case optimal join over trie views of the stored permutations.

use crate::error::Result;
use crate::plan::{Fixed, LeapfrogStep, LfCol};
use crate::storage::btree::{record, Cursor, Record, MAX_ARITY};
use crate::storage::Database;

use super::{fixed_value, Ctx};

/// A column group: the key column of one level plus the columns that
/// follow it up to the next level's key column.
#[derive(Debug, Clone)]
struct Group {
    level: usize,
    start: usize,
    /// Per column of the group after the key: a fixed value, or `None` for
    /// a repeat of the key.
    rest: Vec<Option<Fixed>>,
}

/// Trie view of one atom: records are grouped level by level.
struct TrieIter<'p> {
    cols: &'p [LfCol],
    cursor: Cursor,
    /// Number of leading fixed columns.
    lead: usize,
    groups: Vec<Group>,
    prefix: Vec<u64>,
    /// Resolved fixed values of each group, filled at open.
    resolved: Vec<Vec<Option<u64>>>,
    current: u64,
    /// Last seek target; seeks below it restart from the root.
    last: Record,
}

impl<'p> TrieIter<'p> {
    fn new(db: &Database, atom: &'p crate::plan::LfAtom) -> TrieIter<'p> {
        let cols = &atom.cols[..];
        let lead = cols.iter().take_while(|c| matches!(c, LfCol::Fixed(_))).count();
        let mut groups: Vec<Group> = Vec::new();
        for (i, c) in cols.iter().enumerate().skip(lead) {
            match c {
                LfCol::Level(l) if groups.last().map_or(true, |g| g.level != *l) => groups.push(Group {
                    level: *l,
                    start: i,
                    rest: Vec::new(),
                }),
                LfCol::Level(_) => groups.last_mut().unwrap().rest.push(None),
                LfCol::Fixed(f) => groups.last_mut().unwrap().rest.push(Some(*f)),
            }
        }
        TrieIter {
            cols,
            cursor: db.tree(atom.perm).cursor(),
            lead,
            groups,
            prefix: Vec::new(),
            resolved: Vec::new(),
            current: 0,
            last: [0; MAX_ARITY],
        }
    }

    /// Positions at the leading fixed prefix. False if it has no records.
    fn open(&mut self, binding: &[u64], ctx: &mut Ctx) -> Result<bool> {
        self.cursor.release();
        self.last = [0; MAX_ARITY];
        self.prefix.clear();
        for c in &self.cols[..self.lead] {
            let LfCol::Fixed(f) = c else { unreachable!() };
            match fixed_value(*f, binding) {
                Some(v) => self.prefix.push(v),
                None => return Ok(false),
            }
        }
        self.resolved.clear();
        for g in &self.groups {
            let mut vals = Vec::new();
            for r in &g.rest {
                vals.push(match r {
                    None => None,
                    Some(f) => match fixed_value(*f, binding) {
                        Some(v) => Some(v),
                        None => return Ok(false),
                    },
                });
            }
            self.resolved.push(vals);
        }
        ctx.stats.seeks += 1;
        let r = self.cursor.seek(&record(&self.prefix))?;
        Ok(matches!(r, Some(r) if r[..self.lead] == self.prefix[..]))
    }

    fn group_index(&self) -> usize {
        // groups already accepted
        let mut len = self.lead;
        let mut k = 0;
        while len < self.prefix.len() {
            len += 1 + self.groups[k].rest.len();
            k += 1;
        }
        k
    }

    fn expected(&self, k: usize, key: u64) -> Vec<u64> {
        let mut e = vec![key];
        e.extend(self.resolved[k].iter().map(|r| r.unwrap_or(key)));
        e
    }

    /// First key `>= v` at the next level whose group matches.
    fn seek(&mut self, v: u64, ctx: &mut Ctx) -> Result<Option<u64>> {
        let k = self.group_index();
        let start = self.groups[k].start;
        let width = 1 + self.groups[k].rest.len();
        let mut want = self.expected(k, v);
        loop {
            let mut target = self.prefix.clone();
            target.extend_from_slice(&want);
            let target = record(&target);
            if target < self.last {
                self.cursor.release();
            }
            self.last = target;
            ctx.stats.seeks += 1;
            let Some(r) = self.cursor.seek(&target)? else {
                return Ok(None);
            };
            if r[..start] != self.prefix[..] {
                return Ok(None);
            }
            let key = r[start];
            let e = self.expected(k, key);
            let got = &r[start..start + width];
            match got.cmp(&e[..]) {
                std::cmp::Ordering::Equal => {
                    self.current = key;
                    return Ok(Some(key));
                }
                std::cmp::Ordering::Less => want = e,
                std::cmp::Ordering::Greater => match key.checked_add(1) {
                    Some(n) => want = self.expected(k, n),
                    None => return Ok(None),
                },
            }
        }
    }

    fn accept(&mut self) {
        let k = self.group_index();
        let e = self.expected(k, self.current);
        self.prefix.extend(e);
    }

    fn up(&mut self) {
        let k = self.group_index() - 1;
        let width = 1 + self.groups[k].rest.len();
        self.prefix.truncate(self.prefix.len() - width);
    }
}

pub struct LeapfrogIter<'p> {
    step: &'p LeapfrogStep,
    iters: Vec<TrieIter<'p>>,
    /// Iterators taking part in each level.
    members: Vec<Vec<usize>>,
    keys: Vec<u64>,
    fresh: bool,
    dead: bool,
}

impl<'p> LeapfrogIter<'p> {
    pub fn new(db: &Database, step: &'p LeapfrogStep) -> LeapfrogIter<'p> {
        let iters: Vec<TrieIter> = step.atoms.iter().map(|a| TrieIter::new(db, a)).collect();
        let mut members = vec![Vec::new(); step.levels.len()];
        for (i, it) in iters.iter().enumerate() {
            for g in &it.groups {
                members[g.level].push(i);
            }
        }
        LeapfrogIter {
            step,
            iters,
            members,
            keys: vec![0; step.levels.len()],
            fresh: true,
            dead: true,
        }
    }

    pub fn open(&mut self, binding: &mut [u64], ctx: &mut Ctx) -> Result<()> {
        self.fresh = true;
        self.dead = false;
        for it in &mut self.iters {
            if !it.open(binding, ctx)? {
                self.dead = true;
            }
        }
        Ok(())
    }

    /// Smallest key `>= v` present in every member iterator of level `k`.
    fn find(&mut self, k: usize, v: Option<u64>, ctx: &mut Ctx) -> Result<Option<u64>> {
        let Some(mut v) = v else { return Ok(None) };
        loop {
            let mut agreed = true;
            for &i in &self.members[k] {
                match self.iters[i].seek(v, ctx)? {
                    None => return Ok(None),
                    Some(x) if x != v => {
                        v = x;
                        agreed = false;
                    }
                    Some(_) => {}
                }
            }
            if agreed {
                return Ok(Some(v));
            }
        }
    }

    pub fn next(&mut self, binding: &mut [u64], ctx: &mut Ctx) -> Result<bool> {
        let n = self.step.levels.len();
        if self.dead {
            return Ok(false);
        }
        let mut k;
        let mut cand;
        if self.fresh {
            self.fresh = false;
            k = 0;
            cand = self.find(0, Some(1), ctx)?;
        } else {
            k = n - 1;
            for &i in &self.members[k] {
                self.iters[i].up();
            }
            cand = self.find(k, self.keys[k].checked_add(1), ctx)?;
        }
        loop {
            match cand {
                Some(v) => {
                    self.keys[k] = v;
                    binding[self.step.levels[k]] = v;
                    ctx.stats.intermediate += 1;
                    for &i in &self.members[k] {
                        self.iters[i].accept();
                    }
                    if k + 1 == n {
                        return Ok(true);
                    }
                    k += 1;
                    cand = self.find(k, Some(1), ctx)?;
                }
                None => {
                    binding[self.step.levels[k]] = 0;
                    if k == 0 {
                        self.dead = true;
                        return Ok(false);
                    }
                    k -= 1;
                    for &i in &self.members[k] {
                        self.iters[i].up();
                    }
                    cand = self.find(k, self.keys[k].checked_add(1), ctx)?;
                }
            }
        }
    }
}
