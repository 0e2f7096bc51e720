use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{ObjectId, Tag};
use crate::storage::buffer::{BufferPool, FileId, PageKey};

pub const TRIPLE_BYTES: u64 = 24;

/// Positional table of `(source, type, target)` triples: the triple of edge
/// `n` starts at byte `n * 24`.
#[derive(Debug, Clone)]
pub struct EdgeTable {
    pool: Arc<BufferPool>,
    file: FileId,
    count: u64,
}

pub fn write_edge_table(path: &Path, edges: &[(ObjectId, ObjectId, ObjectId)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::storage(path, e))?;
    let mut out = BufWriter::new(file);
    for (s, t, o) in edges {
        for id in [s, t, o] {
            out.write_all(&id.raw().to_le_bytes())
                .map_err(|e| Error::storage(path, e))?;
        }
    }
    out.into_inner()
        .map_err(|e| Error::storage(path, e.into_error()))?
        .sync_data()
        .map_err(|e| Error::storage(path, e))
}

impl EdgeTable {
    pub fn open(pool: &Arc<BufferPool>, path: &Path) -> Result<EdgeTable> {
        let file = pool.register_file(path, false)?;
        let len = pool.file_len(file)?;
        if len % TRIPLE_BYTES != 0 {
            return Err(Error::Corruption(format!(
                "{} has a trailing partial triple",
                path.display()
            )));
        }
        Ok(EdgeTable {
            pool: Arc::clone(pool),
            file,
            count: len / TRIPLE_BYTES,
        })
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// `gamma(eid)` by offset arithmetic; a triple may straddle two pages.
    pub fn lookup(&self, eid: ObjectId) -> Result<(ObjectId, ObjectId, ObjectId)> {
        if eid.tag() != Tag::Edge || eid.payload() >= self.count {
            return Err(Error::UnknownEdge(eid.payload()));
        }
        let page_size = self.pool.page_size() as u64;
        let start = eid.payload() * TRIPLE_BYTES;
        let mut buf = [0u8; TRIPLE_BYTES as usize];
        let mut done = 0u64;
        while done < TRIPLE_BYTES {
            let at = start + done;
            let page = self.pool.get(PageKey {
                file: self.file,
                page: (at / page_size) as u32,
            })?;
            let in_page = (at % page_size) as usize;
            let take = (TRIPLE_BYTES - done).min(page_size - in_page as u64) as usize;
            buf[done as usize..done as usize + take]
                .copy_from_slice(&page.data()[in_page..in_page + take]);
            done += take as u64;
        }
        let id = |i: usize| {
            ObjectId::from_raw(u64::from_le_bytes(buf[i * 8..i * 8 + 8].try_into().unwrap()))
        };
        Ok((id(0)?, id(1)?, id(2)?))
    }
}
