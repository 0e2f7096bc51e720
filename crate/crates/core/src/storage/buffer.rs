//! Shared page cache with second-chance (clock) replacement.
//!
//! Pages are identified by `(file, page number)`. A page handed out by
//! [`BufferPool::get`] stays pinned until its [`PinnedPage`] is dropped, and a
//! pinned frame is never chosen as a victim.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::error::{Error, Result};

pub const DEFAULT_PAGE_SIZE: usize = 4096;
pub const DEFAULT_BUFFER_PAGES: usize = 8192;

pub type FileId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PageKey {
    pub file: FileId,
    pub page: u32,
}

#[derive(Debug, Default, Clone, Copy)]
struct FrameMeta {
    key: Option<PageKey>,
    pin_count: u32,
    referenced: bool,
    dirty: bool,
}

struct PoolState {
    meta: Vec<FrameMeta>,
    table: HashMap<PageKey, usize>,
    free: Vec<usize>,
    hand: usize,
}

struct PagedFile {
    path: PathBuf,
    file: File,
    pages: u32,
}

pub struct BufferPool {
    page_size: usize,
    capacity: usize,
    frames: Vec<RwLock<Box<[u8]>>>,
    state: Mutex<PoolState>,
    files: RwLock<Vec<Mutex<PagedFile>>>,
    pages_read: AtomicU64,
    pages_written: AtomicU64,
}

impl std::fmt::Debug for BufferPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BufferPool")
            .field("page_size", &self.page_size)
            .field("capacity", &self.capacity)
            .finish_non_exhaustive()
    }
}

impl BufferPool {
    pub fn new(capacity: usize, page_size: usize) -> Arc<BufferPool> {
        assert!(capacity > 0, "buffer pool needs at least one frame");
        assert!(page_size >= 64, "page size {page_size} is too small");
        let frames = (0..capacity)
            .map(|_| RwLock::new(vec![0u8; page_size].into_boxed_slice()))
            .collect();
        Arc::new(BufferPool {
            page_size,
            capacity,
            frames,
            state: Mutex::new(PoolState {
                meta: vec![FrameMeta::default(); capacity],
                table: HashMap::new(),
                // popped from the back, so frame 0 is used first
                free: (0..capacity).rev().collect(),
                hand: 0,
            }),
            files: RwLock::new(Vec::new()),
            pages_read: AtomicU64::new(0),
            pages_written: AtomicU64::new(0),
        })
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Opens (or creates) a paged file and returns its handle.
    pub fn register_file(&self, path: &Path, create: bool) -> Result<FileId> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(create)
            .open(path)
            .map_err(|e| Error::storage(path, e))?;
        let len = file.metadata().map_err(|e| Error::storage(path, e))?.len();
        let pages = len.div_ceil(self.page_size as u64) as u32;
        let mut files = self.files.write();
        files.push(Mutex::new(PagedFile {
            path: path.to_path_buf(),
            file,
            pages,
        }));
        Ok((files.len() - 1) as FileId)
    }

    pub fn file_pages(&self, file: FileId) -> u32 {
        self.files.read()[file as usize].lock().pages
    }

    /// Reads raw bytes from a registered file, bypassing the cache.
    pub fn file_len(&self, file: FileId) -> Result<u64> {
        let files = self.files.read();
        let f = files[file as usize].lock();
        f.file
            .metadata()
            .map(|m| m.len())
            .map_err(|e| Error::storage(&f.path, e))
    }

    /// Pins a page, loading it from disk if needed.
    pub fn get(self: &Arc<Self>, key: PageKey) -> Result<PinnedPage> {
        let mut state = self.state.lock();
        if let Some(&frame) = state.table.get(&key) {
            let m = &mut state.meta[frame];
            m.pin_count += 1;
            m.referenced = true;
            return Ok(PinnedPage {
                pool: Arc::clone(self),
                frame,
                key,
            });
        }
        let frame = self.take_frame(&mut state)?;
        {
            let mut data = self.frames[frame].write();
            self.read_page(key, &mut data)?;
        }
        state.meta[frame] = FrameMeta {
            key: Some(key),
            pin_count: 1,
            referenced: false,
            dirty: false,
        };
        state.table.insert(key, frame);
        Ok(PinnedPage {
            pool: Arc::clone(self),
            frame,
            key,
        })
    }

    /// Appends a zeroed page to `file` and returns it pinned and dirty.
    pub fn allocate(self: &Arc<Self>, file: FileId) -> Result<PinnedPage> {
        let page = {
            let files = self.files.read();
            let mut f = files[file as usize].lock();
            f.pages += 1;
            f.pages - 1
        };
        let key = PageKey { file, page };
        let mut state = self.state.lock();
        let frame = self.take_frame(&mut state)?;
        self.frames[frame].write().fill(0);
        state.meta[frame] = FrameMeta {
            key: Some(key),
            pin_count: 1,
            referenced: false,
            dirty: true,
        };
        state.table.insert(key, frame);
        Ok(PinnedPage {
            pool: Arc::clone(self),
            frame,
            key,
        })
    }

    fn take_frame(&self, state: &mut PoolState) -> Result<usize> {
        let frame = match state.free.pop() {
            Some(f) => f,
            None => self.clock_victim(state)?,
        };
        let old = state.meta[frame];
        if let Some(old_key) = old.key {
            if old.dirty {
                let data = self.frames[frame].read();
                self.write_page(old_key, &data)?;
            }
            state.table.remove(&old_key);
            state.meta[frame] = FrameMeta::default();
        }
        Ok(frame)
    }

    fn clock_victim(&self, state: &mut PoolState) -> Result<usize> {
        // two sweeps clear every reference bit; a third finds nothing only if
        // every frame is pinned
        for _ in 0..(2 * self.capacity + 1) {
            let i = state.hand;
            state.hand = (state.hand + 1) % self.capacity;
            let m = &mut state.meta[i];
            if m.pin_count > 0 {
                continue;
            }
            if m.referenced {
                m.referenced = false;
                continue;
            }
            return Ok(i);
        }
        Err(Error::PoolExhausted(self.capacity))
    }

    fn read_page(&self, key: PageKey, buf: &mut [u8]) -> Result<()> {
        let files = self.files.read();
        let f = files[key.file as usize].lock();
        let offset = key.page as u64 * self.page_size as u64;
        buf.fill(0);
        let mut done = 0;
        while done < buf.len() {
            match f.file.read_at(&mut buf[done..], offset + done as u64) {
                Ok(0) => break,
                Ok(n) => done += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::storage(&f.path, e)),
            }
        }
        self.pages_read.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    fn write_page(&self, key: PageKey, buf: &[u8]) -> Result<()> {
        let files = self.files.read();
        let f = files[key.file as usize].lock();
        let offset = key.page as u64 * self.page_size as u64;
        f.file
            .write_all_at(buf, offset)
            .map_err(|e| Error::storage(&f.path, e))?;
        self.pages_written.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    fn unpin(&self, frame: usize) {
        let mut state = self.state.lock();
        let m = &mut state.meta[frame];
        debug_assert!(m.pin_count > 0);
        m.pin_count -= 1;
    }

    fn mark_dirty(&self, frame: usize) {
        self.state.lock().meta[frame].dirty = true;
    }

    /// Writes every dirty page back and syncs the files.
    pub fn flush_all(&self) -> Result<()> {
        let mut state = self.state.lock();
        for frame in 0..self.capacity {
            let m = state.meta[frame];
            if let (Some(key), true) = (m.key, m.dirty) {
                let data = self.frames[frame].read();
                self.write_page(key, &data)?;
                state.meta[frame].dirty = false;
            }
        }
        drop(state);
        for f in self.files.read().iter() {
            let f = f.lock();
            f.file.sync_data().map_err(|e| Error::storage(&f.path, e))?;
        }
        Ok(())
    }

    pub fn resident_pages(&self) -> usize {
        self.state.lock().table.len()
    }

    pub fn pinned_pages(&self) -> usize {
        self.state
            .lock()
            .meta
            .iter()
            .filter(|m| m.pin_count > 0)
            .count()
    }

    pub fn is_resident(&self, key: PageKey) -> bool {
        self.state.lock().table.contains_key(&key)
    }

    pub fn pages_read(&self) -> u64 {
        self.pages_read.load(Ordering::Relaxed)
    }
}

/// A pinned page; unpins on drop.
pub struct PinnedPage {
    pool: Arc<BufferPool>,
    frame: usize,
    key: PageKey,
}

impl PinnedPage {
    pub fn key(&self) -> PageKey {
        self.key
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Box<[u8]>> {
        self.pool.frames[self.frame].read()
    }

    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Box<[u8]>> {
        self.pool.mark_dirty(self.frame);
        self.pool.frames[self.frame].write()
    }

    pub fn pin_count(&self) -> u32 {
        self.pool.state.lock().meta[self.frame].pin_count
    }
}

impl Drop for PinnedPage {
    fn drop(&mut self) {
        self.pool.unpin(self.frame);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pool_with_file(capacity: usize) -> (tempfile::TempDir, Arc<BufferPool>, FileId) {
        let dir = tempfile::tempdir().unwrap();
        let pool = BufferPool::new(capacity, 64);
        let file = pool.register_file(&dir.path().join("f"), true).unwrap();
        (dir, pool, file)
    }

    fn key(file: FileId, page: u32) -> PageKey {
        PageKey { file, page }
    }

    #[test]
    fn clock_evicts_unreferenced_page() {
        let (_dir, pool, f) = pool_with_file(2);
        for p in [0, 1, 0, 2] {
            drop(pool.get(key(f, p)).unwrap());
        }
        assert!(pool.is_resident(key(f, 0)));
        assert!(!pool.is_resident(key(f, 1)));
        assert!(pool.is_resident(key(f, 2)));
    }

    #[test]
    fn resident_get_reuses_frame_and_pins() {
        let (_dir, pool, f) = pool_with_file(2);
        let a = pool.get(key(f, 0)).unwrap();
        let b = pool.get(key(f, 0)).unwrap();
        assert_eq!(a.frame, b.frame);
        assert_eq!(a.pin_count(), 2);
        drop(b);
        assert_eq!(a.pin_count(), 1);
    }

    #[test]
    fn all_pinned_is_exhaustion() {
        let (_dir, pool, f) = pool_with_file(2);
        let _a = pool.get(key(f, 0)).unwrap();
        let _b = pool.get(key(f, 1)).unwrap();
        assert!(matches!(pool.get(key(f, 2)), Err(Error::PoolExhausted(2))));
    }

    #[test]
    fn dirty_pages_survive_eviction() {
        let (_dir, pool, f) = pool_with_file(1);
        let p = pool.allocate(f).unwrap();
        p.data_mut()[0..4].copy_from_slice(b"abcd");
        drop(p);
        // evicts page 0, which must be written back
        drop(pool.get(key(f, 7)).unwrap());
        let p = pool.get(key(f, 0)).unwrap();
        assert_eq!(&p.data()[0..4], b"abcd");
    }

    #[test]
    fn randomized_workload_respects_capacity() {
        let (_dir, pool, f) = pool_with_file(16);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut held: Vec<PinnedPage> = Vec::new();
        for _ in 0..20_000 {
            match rng.gen_range(0..10) {
                0..=5 => {
                    if let Ok(p) = pool.get(key(f, rng.gen_range(0..64))) {
                        if held.len() < 8 && rng.gen_bool(0.3) {
                            held.push(p);
                        }
                    }
                }
                6..=8 if !held.is_empty() => {
                    let i = rng.gen_range(0..held.len());
                    held.swap_remove(i);
                }
                _ => {
                    let _ = pool.allocate(f);
                }
            }
            assert!(pool.resident_pages() <= 16);
            assert_eq!(pool.pinned_pages(), {
                let mut frames: Vec<_> = held.iter().map(|p| p.frame).collect();
                frames.sort_unstable();
                frames.dedup();
                frames.len()
            });
        }
    }
}
