//! B+ trees over fixed-size records of 1 to 4 object ids.
//!
//! Page 0 holds the tree header. Every other page is a node:
//!
//! ```text
//! leaf:     [kind=1][_][count: u16][next leaf: u32] records...
//! internal: [kind=2][_][count: u16][_: u32] children (count+1 x u32) keys (count records)
//! ```
//!
//! Ids are stored big-endian so that byte order and id order agree. The key
//! `keys[i]` of an internal node is the smallest record of `children[i + 1]`.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::storage::buffer::{BufferPool, FileId, PageKey, PinnedPage};

pub const MAX_ARITY: usize = 4;

/// A record padded with zeros beyond the tree's arity.
pub type Record = [u64; MAX_ARITY];

const MAGIC: &[u8; 8] = b"MDBBPT01";
const HEADER: usize = 8;
const LEAF: u8 = 1;
const INTERNAL: u8 = 2;
const NO_PAGE: u32 = u32::MAX;

pub fn record(cols: &[u64]) -> Record {
    let mut r = [0u64; MAX_ARITY];
    r[..cols.len()].copy_from_slice(cols);
    r
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    arity: usize,
    page_size: usize,
}

impl Layout {
    fn new(arity: usize, page_size: usize) -> Result<Layout> {
        let l = Layout { arity, page_size };
        if !(1..=MAX_ARITY).contains(&arity) {
            return Err(Error::Unsupported(format!("record arity {arity}")));
        }
        if l.leaf_capacity() < 2 || l.internal_capacity() < 2 {
            return Err(Error::Unsupported(format!(
                "page size {page_size} too small for arity {arity}"
            )));
        }
        Ok(l)
    }

    fn record_size(&self) -> usize {
        self.arity * 8
    }

    fn leaf_capacity(&self) -> usize {
        (self.page_size - HEADER) / self.record_size()
    }

    fn internal_capacity(&self) -> usize {
        (self.page_size - HEADER - 4) / (self.record_size() + 4)
    }

    fn child_offset(&self, i: usize) -> usize {
        HEADER + 4 * i
    }

    fn key_offset(&self, i: usize) -> usize {
        HEADER + 4 * (self.internal_capacity() + 1) + i * self.record_size()
    }

    fn leaf_offset(&self, i: usize) -> usize {
        HEADER + i * self.record_size()
    }

    fn read_record(&self, page: &[u8], offset: usize) -> Record {
        let mut r = [0u64; MAX_ARITY];
        for (c, slot) in r.iter_mut().enumerate().take(self.arity) {
            let at = offset + c * 8;
            *slot = u64::from_be_bytes(page[at..at + 8].try_into().unwrap());
        }
        r
    }

    fn write_record(&self, page: &mut [u8], offset: usize, r: &Record) {
        for (c, v) in r.iter().enumerate().take(self.arity) {
            let at = offset + c * 8;
            page[at..at + 8].copy_from_slice(&v.to_be_bytes());
        }
    }
}

fn kind(page: &[u8]) -> u8 {
    page[0]
}

fn count(page: &[u8]) -> usize {
    u16::from_le_bytes([page[2], page[3]]) as usize
}

fn next_leaf(page: &[u8]) -> u32 {
    u32::from_le_bytes(page[4..8].try_into().unwrap())
}

fn read_u32(page: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(page[at..at + 4].try_into().unwrap())
}

/// Decoded node, used by the write paths.
#[derive(Debug, Clone)]
struct Node {
    leaf: bool,
    next: u32,
    keys: Vec<Record>,
    children: Vec<u32>,
}

impl Node {
    fn decode(layout: &Layout, page: &[u8]) -> Node {
        let n = count(page);
        if kind(page) == LEAF {
            Node {
                leaf: true,
                next: next_leaf(page),
                keys: (0..n)
                    .map(|i| layout.read_record(page, layout.leaf_offset(i)))
                    .collect(),
                children: Vec::new(),
            }
        } else {
            Node {
                leaf: false,
                next: NO_PAGE,
                keys: (0..n)
                    .map(|i| layout.read_record(page, layout.key_offset(i)))
                    .collect(),
                children: (0..=n)
                    .map(|i| read_u32(page, layout.child_offset(i)))
                    .collect(),
            }
        }
    }

    fn encode(&self, layout: &Layout, page: &mut [u8]) {
        page.fill(0);
        page[0] = if self.leaf { LEAF } else { INTERNAL };
        page[2..4].copy_from_slice(&(self.keys.len() as u16).to_le_bytes());
        if self.leaf {
            page[4..8].copy_from_slice(&self.next.to_le_bytes());
            for (i, k) in self.keys.iter().enumerate() {
                layout.write_record(page, layout.leaf_offset(i), k);
            }
        } else {
            page[4..8].copy_from_slice(&NO_PAGE.to_le_bytes());
            for (i, c) in self.children.iter().enumerate() {
                let at = layout.child_offset(i);
                page[at..at + 4].copy_from_slice(&c.to_le_bytes());
            }
            for (i, k) in self.keys.iter().enumerate() {
                layout.write_record(page, layout.key_offset(i), k);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Meta {
    root: u32,
    height: u32,
    records: u64,
}

fn encode_meta(layout: &Layout, meta: &Meta, page: &mut [u8]) {
    page.fill(0);
    page[0..8].copy_from_slice(MAGIC);
    page[8..12].copy_from_slice(&(layout.arity as u32).to_le_bytes());
    page[12..16].copy_from_slice(&(layout.page_size as u32).to_le_bytes());
    page[16..20].copy_from_slice(&meta.root.to_le_bytes());
    page[20..24].copy_from_slice(&meta.height.to_le_bytes());
    page[24..32].copy_from_slice(&meta.records.to_le_bytes());
}

/// Splits `n` items into `ceil(n / cap)` groups whose sizes differ by at most
/// one, which keeps every group at least half full.
fn balanced_groups(n: usize, cap: usize) -> Vec<usize> {
    let groups = n.div_ceil(cap).max(1);
    let base = n / groups;
    let extra = n % groups;
    (0..groups).map(|g| base + usize::from(g < extra)).collect()
}

/// Writes a B+ tree file from records that must already be sorted.
pub fn bulk_load<I>(path: &Path, arity: usize, page_size: usize, records: I) -> Result<u64>
where
    I: IntoIterator<Item = Record>,
{
    let layout = Layout::new(arity, page_size)?;
    let records: Vec<Record> = records.into_iter().collect();
    for (i, w) in records.windows(2).enumerate() {
        if w[0] > w[1] {
            return Err(Error::SortOrder(i + 1));
        }
    }
    let file = File::create(path).map_err(|e| Error::storage(path, e))?;
    let mut out = BufWriter::new(file);
    let mut page = vec![0u8; page_size];
    let mut write = |page: &[u8]| out.write_all(page).map_err(|e| Error::storage(path, e));

    // header placeholder is rewritten below once the root is known
    write(&page)?;

    let leaf_sizes = balanced_groups(records.len(), layout.leaf_capacity());
    let mut level: Vec<(u32, Record)> = Vec::with_capacity(leaf_sizes.len());
    let mut next_page = 1u32;
    let mut start = 0;
    let leaf_count = leaf_sizes.len();
    for (i, &size) in leaf_sizes.iter().enumerate() {
        let chunk = &records[start..start + size];
        let node = Node {
            leaf: true,
            next: if i + 1 < leaf_count { next_page + 1 } else { NO_PAGE },
            keys: chunk.to_vec(),
            children: Vec::new(),
        };
        node.encode(&layout, &mut page);
        write(&page)?;
        level.push((next_page, chunk.first().copied().unwrap_or([0; MAX_ARITY])));
        next_page += 1;
        start += size;
    }

    let mut height = 1;
    while level.len() > 1 {
        let sizes = balanced_groups(level.len(), layout.internal_capacity() + 1);
        let mut upper = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for size in sizes {
            let group = &level[start..start + size];
            let node = Node {
                leaf: false,
                next: NO_PAGE,
                keys: group[1..].iter().map(|&(_, k)| k).collect(),
                children: group.iter().map(|&(p, _)| p).collect(),
            };
            node.encode(&layout, &mut page);
            write(&page)?;
            upper.push((next_page, group[0].1));
            next_page += 1;
            start += size;
        }
        level = upper;
        height += 1;
    }

    let meta = Meta {
        root: level[0].0,
        height,
        records: records.len() as u64,
    };
    drop(write);
    let mut file = out.into_inner().map_err(|e| Error::storage(path, e.into_error()))?;
    encode_meta(&layout, &meta, &mut page);
    use std::io::{Seek, SeekFrom};
    file.seek(SeekFrom::Start(0))
        .and_then(|_| file.write_all(&page))
        .and_then(|_| file.sync_data())
        .map_err(|e| Error::storage(path, e))?;
    Ok(records.len() as u64)
}

/// Handle to an open tree. Cheap to clone; iterators carry their own copy.
#[derive(Debug, Clone)]
pub struct BPlusTree {
    pool: Arc<BufferPool>,
    file: FileId,
    layout: Layout,
    meta: Meta,
}

impl BPlusTree {
    pub fn open(pool: &Arc<BufferPool>, path: &Path) -> Result<BPlusTree> {
        let file = pool.register_file(path, false)?;
        let page = pool.get(PageKey { file, page: 0 })?;
        let data = page.data();
        if &data[0..8] != MAGIC {
            return Err(Error::Corruption(format!("{} is not a tree file", path.display())));
        }
        let arity = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
        let page_size = u32::from_le_bytes(data[12..16].try_into().unwrap()) as usize;
        if page_size != pool.page_size() {
            return Err(Error::Corruption(format!(
                "{} uses page size {page_size}, pool uses {}",
                path.display(),
                pool.page_size()
            )));
        }
        let meta = Meta {
            root: u32::from_le_bytes(data[16..20].try_into().unwrap()),
            height: u32::from_le_bytes(data[20..24].try_into().unwrap()),
            records: u64::from_le_bytes(data[24..32].try_into().unwrap()),
        };
        Ok(BPlusTree {
            pool: Arc::clone(pool),
            file,
            layout: Layout::new(arity, page_size)?,
            meta,
        })
    }

    /// Creates an empty tree file that is filled by [`BPlusTree::insert`].
    pub fn create(pool: &Arc<BufferPool>, path: &Path, arity: usize) -> Result<BPlusTree> {
        let layout = Layout::new(arity, pool.page_size())?;
        let file = pool.register_file(path, true)?;
        let header = pool.allocate(file)?;
        let root = pool.allocate(file)?;
        let meta = Meta {
            root: root.key().page,
            height: 1,
            records: 0,
        };
        Node {
            leaf: true,
            next: NO_PAGE,
            keys: Vec::new(),
            children: Vec::new(),
        }
        .encode(&layout, &mut root.data_mut());
        encode_meta(&layout, &meta, &mut header.data_mut());
        Ok(BPlusTree {
            pool: Arc::clone(pool),
            file,
            layout,
            meta,
        })
    }

    pub fn arity(&self) -> usize {
        self.layout.arity
    }

    pub fn len(&self) -> u64 {
        self.meta.records
    }

    pub fn is_empty(&self) -> bool {
        self.meta.records == 0
    }

    pub fn height(&self) -> u32 {
        self.meta.height
    }

    fn page(&self, page: u32) -> Result<PinnedPage> {
        self.pool.get(PageKey {
            file: self.file,
            page,
        })
    }

    fn read_node(&self, page: u32) -> Result<Node> {
        let p = self.page(page)?;
        let data = p.data();
        Ok(Node::decode(&self.layout, &data))
    }

    fn write_node(&self, page: u32, node: &Node) -> Result<()> {
        let p = self.page(page)?;
        node.encode(&self.layout, &mut p.data_mut());
        Ok(())
    }

    fn new_page(&self) -> Result<u32> {
        Ok(self.pool.allocate(self.file)?.key().page)
    }

    /// Inserts one record, splitting nodes on the way back up.
    pub fn insert(&mut self, rec: Record) -> Result<()> {
        let mut path: Vec<(u32, usize)> = Vec::new();
        let mut page = self.meta.root;
        let mut node = self.read_node(page)?;
        while !node.leaf {
            let idx = node.keys.partition_point(|k| *k <= rec);
            path.push((page, idx));
            page = node.children[idx];
            node = self.read_node(page)?;
        }
        let pos = node.keys.partition_point(|k| *k <= rec);
        node.keys.insert(pos, rec);
        self.meta.records += 1;

        let mut split: Option<(Record, u32)> = None;
        if node.keys.len() > self.layout.leaf_capacity() {
            let right_page = self.new_page()?;
            let mid = node.keys.len() / 2;
            let right = Node {
                leaf: true,
                next: node.next,
                keys: node.keys.split_off(mid),
                children: Vec::new(),
            };
            node.next = right_page;
            self.write_node(right_page, &right)?;
            split = Some((right.keys[0], right_page));
        }
        self.write_node(page, &node)?;

        while let Some((sep, right_page)) = split.take() {
            let Some((parent_page, idx)) = path.pop() else {
                let root = self.new_page()?;
                self.write_node(
                    root,
                    &Node {
                        leaf: false,
                        next: NO_PAGE,
                        keys: vec![sep],
                        children: vec![self.meta.root, right_page],
                    },
                )?;
                self.meta.root = root;
                self.meta.height += 1;
                break;
            };
            let mut parent = self.read_node(parent_page)?;
            parent.keys.insert(idx, sep);
            parent.children.insert(idx + 1, right_page);
            if parent.keys.len() > self.layout.internal_capacity() {
                let mid = parent.keys.len() / 2;
                let mut right_keys = parent.keys.split_off(mid);
                let promoted = right_keys.remove(0);
                let right_children = parent.children.split_off(mid + 1);
                let new_page = self.new_page()?;
                self.write_node(
                    new_page,
                    &Node {
                        leaf: false,
                        next: NO_PAGE,
                        keys: right_keys,
                        children: right_children,
                    },
                )?;
                split = Some((promoted, new_page));
            }
            self.write_node(parent_page, &parent)?;
        }

        let header = self.page(0)?;
        encode_meta(&self.layout, &self.meta, &mut header.data_mut());
        Ok(())
    }

    /// Iterates the records whose leading columns equal `prefix`.
    pub fn range(&self, prefix: &[u64]) -> Result<RangeIter> {
        let mut cursor = self.cursor();
        cursor.seek(&record(prefix))?;
        Ok(RangeIter {
            cursor,
            prefix: record(prefix),
            prefix_len: prefix.len(),
            done: false,
        })
    }

    pub fn scan(&self) -> Result<RangeIter> {
        self.range(&[])
    }

    pub fn cursor(&self) -> Cursor {
        Cursor {
            tree: self.clone(),
            leaf: None,
            pos: 0,
            len: 0,
        }
    }

    /// Checks ordering, uniform leaf depth and fill bounds. Test support.
    pub fn check_invariants(&self) -> Result<()> {
        let mut leaf_depths = Vec::new();
        let mut prev: Option<Record> = None;
        let mut total = 0u64;
        self.check_node(
            self.meta.root,
            1,
            None,
            None,
            &mut leaf_depths,
            &mut prev,
            &mut total,
        )?;
        leaf_depths.dedup();
        if leaf_depths.len() > 1 || leaf_depths.first() != Some(&self.meta.height) {
            return Err(Error::Corruption(format!("uneven leaf depths {leaf_depths:?}")));
        }
        if total != self.meta.records {
            return Err(Error::Corruption(format!(
                "header says {} records, found {total}",
                self.meta.records
            )));
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn check_node(
        &self,
        page: u32,
        depth: u32,
        low: Option<Record>,
        high: Option<Record>,
        leaf_depths: &mut Vec<u32>,
        prev: &mut Option<Record>,
        total: &mut u64,
    ) -> Result<()> {
        let node = self.read_node(page)?;
        let is_root = page == self.meta.root;
        let bad = |msg: String| Err(Error::Corruption(format!("page {page}: {msg}")));
        for k in &node.keys {
            if low.is_some_and(|l| *k < l) || high.is_some_and(|h| *k > h) {
                return bad("key outside parent bounds".into());
            }
        }
        if node.leaf {
            if !is_root && node.keys.len() < self.layout.leaf_capacity() / 2 {
                return bad(format!("underfull leaf ({})", node.keys.len()));
            }
            for k in &node.keys {
                if prev.is_some_and(|p| p > *k) {
                    return bad("records out of order".into());
                }
                *prev = Some(*k);
            }
            *total += node.keys.len() as u64;
            leaf_depths.push(depth);
            return Ok(());
        }
        let min_children = if is_root { 2 } else { self.layout.internal_capacity().div_ceil(2) };
        if node.children.len() < min_children {
            return bad(format!("underfull internal node ({})", node.children.len()));
        }
        for (i, &child) in node.children.iter().enumerate() {
            let lo = if i == 0 { low } else { Some(node.keys[i - 1]) };
            let hi = if i < node.keys.len() { Some(node.keys[i]) } else { high };
            self.check_node(child, depth + 1, lo, hi, leaf_depths, prev, total)?;
        }
        Ok(())
    }
}

/// Positioned reader over the leaf level. Holds at most one pinned leaf.
pub struct Cursor {
    tree: BPlusTree,
    leaf: Option<PinnedPage>,
    pos: usize,
    len: usize,
}

impl Cursor {
    /// Moves to the first record `>= target`. Returns it, or `None` at end.
    ///
    /// Seeks are forward-only: a target below the current record leaves the
    /// cursor where it is. Call [`Cursor::release`] to restart from the root.
    pub fn seek(&mut self, target: &Record) -> Result<Option<Record>> {
        // stay in the current leaf when the target falls inside it
        if let Some(leaf) = &self.leaf {
            if self.pos < self.len {
                let layout = self.tree.layout;
                let data = leaf.data();
                let last = layout.read_record(&data, layout.leaf_offset(self.len - 1));
                let cur = layout.read_record(&data, layout.leaf_offset(self.pos));
                if cur >= *target {
                    return Ok(Some(cur));
                }
                if last >= *target {
                    let pos = self.lower_bound_in_leaf(&data, self.pos, self.len, target);
                    drop(data);
                    self.pos = pos;
                    return self.current();
                }
            }
        }
        self.descend(target)?;
        self.skip_empty()
    }

    fn lower_bound_in_leaf(&self, data: &[u8], mut lo: usize, mut hi: usize, target: &Record) -> usize {
        let layout = self.tree.layout;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if layout.read_record(data, layout.leaf_offset(mid)).cmp(target) == Ordering::Less {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn descend(&mut self, target: &Record) -> Result<()> {
        self.leaf = None;
        let layout = self.tree.layout;
        let mut page = self.tree.meta.root;
        loop {
            let p = self.tree.page(page)?;
            let data = p.data();
            let n = count(&data);
            if kind(&data) == LEAF {
                let pos = self.lower_bound_in_leaf(&data, 0, n, target);
                drop(data);
                self.pos = pos;
                self.len = n;
                self.leaf = Some(p);
                return Ok(());
            }
            // child index = number of separators strictly below the target
            let (mut lo, mut hi) = (0, n);
            while lo < hi {
                let mid = (lo + hi) / 2;
                if layout.read_record(&data, layout.key_offset(mid)) < *target {
                    lo = mid + 1;
                } else {
                    hi = mid;
                }
            }
            page = read_u32(&data, layout.child_offset(lo));
        }
    }

    /// Follows leaf links past exhausted leaves.
    fn skip_empty(&mut self) -> Result<Option<Record>> {
        loop {
            let Some(leaf) = &self.leaf else {
                return Ok(None);
            };
            if self.pos < self.len {
                return self.current();
            }
            let next = next_leaf(&leaf.data());
            // release before pinning the next leaf
            self.leaf = None;
            if next == NO_PAGE {
                return Ok(None);
            }
            let p = self.tree.page(next)?;
            self.len = count(&p.data());
            self.pos = 0;
            self.leaf = Some(p);
        }
    }

    pub fn current(&self) -> Result<Option<Record>> {
        match &self.leaf {
            Some(leaf) if self.pos < self.len => {
                let layout = self.tree.layout;
                Ok(Some(layout.read_record(&leaf.data(), layout.leaf_offset(self.pos))))
            }
            _ => Ok(None),
        }
    }

    pub fn advance(&mut self) -> Result<Option<Record>> {
        if self.leaf.is_none() {
            return Ok(None);
        }
        self.pos += 1;
        self.skip_empty()
    }

    pub fn release(&mut self) {
        self.leaf = None;
    }

    pub fn arity(&self) -> usize {
        self.tree.layout.arity
    }
}

pub struct RangeIter {
    cursor: Cursor,
    prefix: Record,
    prefix_len: usize,
    done: bool,
}

impl RangeIter {
    pub fn next_record(&mut self) -> Result<Option<Record>> {
        if self.done {
            return Ok(None);
        }
        match self.cursor.current()? {
            Some(r) if r[..self.prefix_len] == self.prefix[..self.prefix_len] => {
                self.cursor.advance()?;
                Ok(Some(r))
            }
            _ => {
                self.done = true;
                self.cursor.release();
                Ok(None)
            }
        }
    }
}

impl Iterator for RangeIter {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}
