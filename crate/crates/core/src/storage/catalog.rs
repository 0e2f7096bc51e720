use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ObjectId;

pub const FORMAT_VERSION: u32 = 1;

/// Exact relation cardinalities gathered at import, used for cost estimates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub format_version: u32,
    pub page_size: usize,
    pub objects: u64,
    pub edges: u64,
    pub labels: u64,
    pub properties: u64,
    pub distinct_sources: u64,
    pub distinct_types: u64,
    pub distinct_targets: u64,
    pub distinct_labeled_objects: u64,
    pub distinct_labels: u64,
    pub distinct_property_objects: u64,
    pub distinct_keys: u64,
    pub distinct_values: u64,
    /// Keyed by raw object id.
    pub edges_per_type: BTreeMap<u64, u64>,
    pub objects_per_label: BTreeMap<u64, u64>,
    pub properties_per_key: BTreeMap<u64, u64>,
}

impl Catalog {
    pub fn compute(
        page_size: usize,
        objects: usize,
        edges: &[(ObjectId, ObjectId, ObjectId)],
        labels: &[(ObjectId, ObjectId)],
        props: &[(ObjectId, ObjectId, ObjectId)],
    ) -> Catalog {
        fn distinct<T: Ord>(it: impl Iterator<Item = T>) -> u64 {
            it.collect::<BTreeSet<_>>().len() as u64
        }
        fn histogram(it: impl Iterator<Item = ObjectId>) -> BTreeMap<u64, u64> {
            let mut m = BTreeMap::new();
            for id in it {
                *m.entry(id.raw()).or_insert(0) += 1;
            }
            m
        }
        Catalog {
            format_version: FORMAT_VERSION,
            page_size,
            objects: objects as u64,
            edges: edges.len() as u64,
            labels: labels.len() as u64,
            properties: props.len() as u64,
            distinct_sources: distinct(edges.iter().map(|e| e.0)),
            distinct_types: distinct(edges.iter().map(|e| e.1)),
            distinct_targets: distinct(edges.iter().map(|e| e.2)),
            distinct_labeled_objects: distinct(labels.iter().map(|l| l.0)),
            distinct_labels: distinct(labels.iter().map(|l| l.1)),
            distinct_property_objects: distinct(props.iter().map(|p| p.0)),
            distinct_keys: distinct(props.iter().map(|p| p.1)),
            distinct_values: distinct(props.iter().map(|p| p.2)),
            edges_per_type: histogram(edges.iter().map(|e| e.1)),
            objects_per_label: histogram(labels.iter().map(|l| l.1)),
            properties_per_key: histogram(props.iter().map(|p| p.1)),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("catalog serializes");
        std::fs::write(path, json).map_err(|e| Error::storage(path, e))
    }

    pub fn read(path: &Path) -> Result<Catalog> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
        let catalog: Catalog = serde_json::from_str(&text)
            .map_err(|e| Error::Corruption(format!("{}: {e}", path.display())))?;
        if catalog.format_version != FORMAT_VERSION {
            return Err(Error::Corruption(format!(
                "{}: unsupported format version {}",
                path.display(),
                catalog.format_version
            )));
        }
        Ok(catalog)
    }
}
