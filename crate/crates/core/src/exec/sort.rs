//! External merge sort of `(key, row)` pairs.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};

use crate::algebra::{compare_keys, Row};
use crate::error::{Error, Result};

/// Default number of rows held in memory before a run is spilled.
pub const DEFAULT_SORT_BUDGET: usize = 1_000_000;

type Item = (Row, Row);

fn io(e: std::io::Error) -> Error {
    Error::Io(e)
}

pub struct Sorter {
    descending: Vec<bool>,
    budget: usize,
    buffer: Vec<Item>,
    runs: Vec<File>,
}

impl Sorter {
    pub fn new(descending: Vec<bool>, budget: usize) -> Sorter {
        Sorter {
            descending,
            budget: budget.max(1),
            buffer: Vec::new(),
            runs: Vec::new(),
        }
    }

    fn cmp(&self, a: &Item, b: &Item) -> Ordering {
        compare_keys(&a.0, &b.0, &self.descending).then_with(|| a.1.cmp(&b.1))
    }

    pub fn push(&mut self, key: Row, row: Row) -> Result<()> {
        self.buffer.push((key, row));
        if self.buffer.len() >= self.budget {
            self.spill()?;
        }
        Ok(())
    }

    /// Number of runs written to disk so far.
    pub fn spilled_runs(&self) -> usize {
        self.runs.len()
    }

    fn sort_buffer(&mut self) {
        let mut buffer = std::mem::take(&mut self.buffer);
        buffer.sort_by(|a, b| self.cmp(a, b));
        self.buffer = buffer;
    }

    fn spill(&mut self) -> Result<()> {
        self.sort_buffer();
        let file = tempfile::tempfile().map_err(io)?;
        let mut w = BufWriter::new(file);
        for item in self.buffer.drain(..) {
            serde_json::to_writer(&mut w, &item).map_err(|e| Error::Io(e.into()))?;
            w.write_all(b"\n").map_err(io)?;
        }
        let mut file = w.into_inner().map_err(|e| io(e.into_error()))?;
        std::io::Seek::rewind(&mut file).map_err(io)?;
        self.runs.push(file);
        Ok(())
    }

    /// Sorted rows, merged across spilled runs.
    pub fn finish(mut self) -> Result<SortedRows> {
        self.sort_buffer();
        let memory = std::mem::take(&mut self.buffer).into_iter();
        let mut runs = Vec::new();
        for file in std::mem::take(&mut self.runs) {
            let mut lines = BufReader::new(file).lines();
            let head = read_item(&mut lines)?;
            runs.push((lines, head));
        }
        Ok(SortedRows {
            descending: self.descending,
            memory,
            memory_head: None,
            runs,
        })
    }
}

fn read_item(lines: &mut Lines<BufReader<File>>) -> Result<Option<Item>> {
    match lines.next() {
        None => Ok(None),
        Some(line) => {
            let line = line.map_err(io)?;
            serde_json::from_str(&line)
                .map(Some)
                .map_err(|e| Error::Corruption(format!("sort run: {e}")))
        }
    }
}

pub struct SortedRows {
    descending: Vec<bool>,
    memory: std::vec::IntoIter<Item>,
    memory_head: Option<Item>,
    runs: Vec<(Lines<BufReader<File>>, Option<Item>)>,
}

impl SortedRows {
    pub fn next_row(&mut self) -> Result<Option<Row>> {
        if self.runs.is_empty() {
            return Ok(self.memory.next().map(|(_, r)| r));
        }
        if self.memory_head.is_none() {
            self.memory_head = self.memory.next();
        }
        let desc = &self.descending;
        let cmp = |a: &Item, b: &Item| compare_keys(&a.0, &b.0, desc).then_with(|| a.1.cmp(&b.1));
        // None: the in-memory run; Some(i): spilled run i
        let mut best: Option<(Option<usize>, &Item)> = self.memory_head.as_ref().map(|h| (None, h));
        for (i, (_, head)) in self.runs.iter().enumerate() {
            if let Some(h) = head {
                if best.map_or(true, |(_, b)| cmp(h, b) == Ordering::Less) {
                    best = Some((Some(i), h));
                }
            }
        }
        match best.map(|(src, _)| src) {
            None => Ok(None),
            Some(None) => Ok(self.memory_head.take().map(|(_, r)| r)),
            Some(Some(i)) => {
                let (lines, head) = &mut self.runs[i];
                let next = read_item(lines)?;
                Ok(std::mem::replace(head, next).map(|(_, r)| r))
            }
        }
    }
}
