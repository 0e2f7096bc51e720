//! Persistent storage: paged files, the buffer pool, B+ tree indexes, the
//! EdgeTable, the ObjectFile and the statistics catalog.
//!
//! A database directory contains:
//!
//! | file                | content                                   |
//! |---------------------|-------------------------------------------|
//! | `objects.of`        | ObjectFile (length-prefixed strings)      |
//! | `edges.et`          | EdgeTable (24-byte triples)               |
//! | `*.bpt`             | one B+ tree per [`Permutation`]           |
//! | `catalog.json`      | [`Catalog`]                               |

pub mod btree;
pub mod buffer;
pub mod catalog;
pub mod edge_table;
pub mod relation;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub use btree::{BPlusTree, Cursor, RangeIter, Record};
pub use buffer::{BufferPool, PageKey, PinnedPage, DEFAULT_BUFFER_PAGES, DEFAULT_PAGE_SIZE};
pub use catalog::Catalog;
pub use edge_table::EdgeTable;
pub use relation::{Permutation, Relation};

use crate::error::{Error, Result};
use crate::model::{display_id, ObjectId, PropertyDomainGraph, Resolver, StringArena};

pub const OBJECT_FILE: &str = "objects.of";
pub const EDGE_TABLE: &str = "edges.et";
pub const CATALOG: &str = "catalog.json";

/// Encoded graph content ready to be written, with edge ids implied by
/// position.
#[derive(Debug, Default, Clone)]
pub struct GraphData {
    /// Objects declared without being mentioned elsewhere.
    pub nodes: Vec<ObjectId>,
    pub edges: Vec<(ObjectId, ObjectId, ObjectId)>,
    pub labels: Vec<(ObjectId, ObjectId)>,
    pub props: Vec<(ObjectId, ObjectId, ObjectId)>,
    pub strings: StringArena,
}

impl GraphData {
    /// Every id that occurs anywhere, including edge ids.
    pub fn objects(&self) -> BTreeSet<ObjectId> {
        let mut o: BTreeSet<ObjectId> = self.nodes.iter().copied().collect();
        for (n, &(s, t, g)) in self.edges.iter().enumerate() {
            o.extend([ObjectId::edge(n as u64), s, t, g]);
        }
        for &(a, b) in &self.labels {
            o.extend([a, b]);
        }
        for &(a, b, c) in &self.props {
            o.extend([a, b, c]);
        }
        o
    }

    pub fn to_reference_graph(&self) -> Result<PropertyDomainGraph> {
        let mut g = crate::model::build_reference_graph(
            &self.edges,
            &self.labels,
            &self.props,
            self.strings.clone(),
        )?;
        g.objects.extend(self.nodes.iter().copied());
        Ok(g)
    }
}

/// Writes every index file for `data` into `dir`, which must exist.
pub fn store_graph(dir: &Path, page_size: usize, data: &GraphData) -> Result<Catalog> {
    let labels: Vec<_> = data.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut props_map = BTreeMap::new();
    for &(o, k, v) in &data.props {
        if let Some(&old) = props_map.get(&(o, k)) {
            if old != v {
                return Err(Error::PropertyConflict {
                    object: display_id(o, &data.strings),
                    key: display_id(k, &data.strings),
                });
            }
        }
        props_map.insert((o, k), v);
    }
    let props: Vec<_> = props_map.into_iter().map(|((o, k), v)| (o, k, v)).collect();
    let objects = data.objects();

    let object_file = dir.join(OBJECT_FILE);
    std::fs::write(&object_file, data.strings.bytes()).map_err(|e| Error::storage(&object_file, e))?;
    edge_table::write_edge_table(&dir.join(EDGE_TABLE), &data.edges)?;

    let quads: Vec<[u64; 4]> = data
        .edges
        .iter()
        .enumerate()
        .map(|(n, &(s, t, o))| [s.raw(), t.raw(), o.raw(), ObjectId::edge(n as u64).raw()])
        .collect();
    for perm in Permutation::ALL {
        let canonical: Vec<Vec<u64>> = match perm.relation() {
            Relation::Objects => objects.iter().map(|o| vec![o.raw()]).collect(),
            Relation::DomainGraph => quads.iter().map(|q| q.to_vec()).collect(),
            Relation::Labels => labels.iter().map(|(o, l)| vec![o.raw(), l.raw()]).collect(),
            Relation::Properties => props
                .iter()
                .map(|(o, k, v)| vec![o.raw(), k.raw(), v.raw()])
                .collect(),
        };
        let mut keys: Vec<Record> = canonical
            .iter()
            .map(|c| btree::record(&perm.to_key(c)))
            .collect();
        keys.sort_unstable();
        btree::bulk_load(&dir.join(perm.file_name()), perm.relation().arity(), page_size, keys)?;
    }

    let catalog = Catalog::compute(page_size, objects.len(), &data.edges, &labels, &props);
    catalog.write(&dir.join(CATALOG))?;
    Ok(catalog)
}

#[derive(Debug, Clone, Copy)]
pub struct OpenOptions {
    pub buffer_pages: usize,
    /// When set, must match the page size the database was written with.
    pub page_size: Option<usize>,
}

impl Default for OpenOptions {
    fn default() -> Self {
        OpenOptions {
            buffer_pages: DEFAULT_BUFFER_PAGES,
            page_size: None,
        }
    }
}

/// An open, read-only database.
#[derive(Debug)]
pub struct Database {
    dir: PathBuf,
    pool: Arc<BufferPool>,
    trees: Vec<BPlusTree>,
    edges: EdgeTable,
    strings: StringArena,
    catalog: Catalog,
}

impl Database {
    pub fn open(dir: &Path, options: OpenOptions) -> Result<Database> {
        let catalog_path = dir.join(CATALOG);
        if !catalog_path.exists() {
            return Err(Error::InvalidDirectory {
                path: dir.to_path_buf(),
                reason: "no catalog.json; not a database directory".into(),
            });
        }
        let catalog = Catalog::read(&catalog_path)?;
        if let Some(ps) = options.page_size {
            if ps != catalog.page_size {
                return Err(Error::InvalidDirectory {
                    path: dir.to_path_buf(),
                    reason: format!(
                        "database uses page size {}, requested {ps}",
                        catalog.page_size
                    ),
                });
            }
        }
        let pool = BufferPool::new(options.buffer_pages.max(4), catalog.page_size);
        let trees = Permutation::ALL
            .iter()
            .map(|p| BPlusTree::open(&pool, &dir.join(p.file_name())))
            .collect::<Result<Vec<_>>>()?;
        let edges = EdgeTable::open(&pool, &dir.join(EDGE_TABLE))?;
        let object_file = dir.join(OBJECT_FILE);
        let bytes = std::fs::read(&object_file).map_err(|e| Error::storage(&object_file, e))?;
        let strings = StringArena::from_bytes(bytes)?;
        Ok(Database {
            dir: dir.to_path_buf(),
            pool,
            trees,
            edges,
            strings,
            catalog,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn pool(&self) -> &Arc<BufferPool> {
        &self.pool
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn strings(&self) -> &StringArena {
        &self.strings
    }

    pub fn tree(&self, perm: Permutation) -> &BPlusTree {
        let idx = Permutation::ALL.iter().position(|&p| p == perm).unwrap();
        &self.trees[idx]
    }

    pub fn edge_count(&self) -> u64 {
        self.edges.len()
    }

    pub fn edge_lookup(&self, eid: ObjectId) -> Result<(ObjectId, ObjectId, ObjectId)> {
        self.edges.lookup(eid)
    }

    pub fn contains_object(&self, id: ObjectId) -> Result<bool> {
        Ok(self
            .tree(Permutation::Objects)
            .range(&[id.raw()])?
            .next_record()?
            .is_some())
    }

    pub fn prop(&self, object: ObjectId, key: ObjectId) -> Result<Option<ObjectId>> {
        let mut it = self
            .tree(Permutation::ObjectKeyValue)
            .range(&[object.raw(), key.raw()])?;
        match it.next_record()? {
            Some(r) => Ok(Some(ObjectId::from_raw(r[2])?)),
            None => Ok(None),
        }
    }

    /// Reads the whole database back into the reference form.
    pub fn to_reference_graph(&self) -> Result<PropertyDomainGraph> {
        let id = ObjectId::from_raw;
        let mut edges = Vec::with_capacity(self.edges.len() as usize);
        for n in 0..self.edges.len() {
            edges.push(self.edges.lookup(ObjectId::edge(n))?);
        }
        let mut labels = Vec::new();
        for r in self.tree(Permutation::ObjectLabel).scan()? {
            let r = r?;
            labels.push((id(r[0])?, id(r[1])?));
        }
        let mut props = Vec::new();
        for r in self.tree(Permutation::ObjectKeyValue).scan()? {
            let r = r?;
            props.push((id(r[0])?, id(r[1])?, id(r[2])?));
        }
        let mut g =
            crate::model::build_reference_graph(&edges, &labels, &props, self.strings.clone())?;
        for r in self.tree(Permutation::Objects).scan()? {
            g.objects.insert(id(r?[0])?);
        }
        Ok(g)
    }
}

impl Resolver for Database {
    fn resolve_str(&self, offset: u64) -> Result<std::borrow::Cow<'_, str>> {
        self.strings.resolve_str(offset)
    }

    fn lookup_str(&self, s: &str) -> Option<u64> {
        self.strings.lookup_str(s)
    }
}
