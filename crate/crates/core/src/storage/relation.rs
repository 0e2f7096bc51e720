//! The stored relations and the column orders each of them is indexed in.

use std::fmt;

/// Canonical column layouts:
///
/// * `Objects(id)`
/// * `DomainGraph(source, type, target, eid)`
/// * `Labels(object, label)`
/// * `Properties(object, key, value)`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    Objects,
    DomainGraph,
    Labels,
    Properties,
}

impl Relation {
    pub fn arity(self) -> usize {
        match self {
            Relation::Objects => 1,
            Relation::DomainGraph => 4,
            Relation::Labels => 2,
            Relation::Properties => 3,
        }
    }

    pub fn permutations(self) -> &'static [Permutation] {
        use Permutation::*;
        match self {
            Relation::Objects => &[Objects],
            Relation::DomainGraph => &[
                SourceTargetType,
                TargetTypeSource,
                TypeSourceTarget,
                TypeTargetSource,
            ],
            Relation::Labels => &[ObjectLabel, LabelObject],
            Relation::Properties => &[ObjectKeyValue, KeyValueObject],
        }
    }
}

/// One stored index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Permutation {
    Objects,
    SourceTargetType,
    TargetTypeSource,
    TypeSourceTarget,
    TypeTargetSource,
    ObjectLabel,
    LabelObject,
    ObjectKeyValue,
    KeyValueObject,
}

impl Permutation {
    pub const ALL: [Permutation; 9] = [
        Permutation::Objects,
        Permutation::SourceTargetType,
        Permutation::TargetTypeSource,
        Permutation::TypeSourceTarget,
        Permutation::TypeTargetSource,
        Permutation::ObjectLabel,
        Permutation::LabelObject,
        Permutation::ObjectKeyValue,
        Permutation::KeyValueObject,
    ];

    pub fn relation(self) -> Relation {
        use Permutation::*;
        match self {
            Objects => Relation::Objects,
            SourceTargetType | TargetTypeSource | TypeSourceTarget | TypeTargetSource => {
                Relation::DomainGraph
            }
            ObjectLabel | LabelObject => Relation::Labels,
            ObjectKeyValue | KeyValueObject => Relation::Properties,
        }
    }

    /// Canonical column stored at each tree position.
    pub fn columns(self) -> &'static [usize] {
        use Permutation::*;
        match self {
            Objects => &[0],
            SourceTargetType => &[0, 2, 1, 3],
            TargetTypeSource => &[2, 1, 0, 3],
            TypeSourceTarget => &[1, 0, 2, 3],
            TypeTargetSource => &[1, 2, 0, 3],
            ObjectLabel => &[0, 1],
            LabelObject => &[1, 0],
            ObjectKeyValue => &[0, 1, 2],
            KeyValueObject => &[1, 2, 0],
        }
    }

    pub fn file_name(self) -> &'static str {
        use Permutation::*;
        match self {
            Objects => "objects.bpt",
            SourceTargetType => "dg_source_target_type_eid.bpt",
            TargetTypeSource => "dg_target_type_source_eid.bpt",
            TypeSourceTarget => "dg_type_source_target_eid.bpt",
            TypeTargetSource => "dg_type_target_source_eid.bpt",
            ObjectLabel => "labels_object_label.bpt",
            LabelObject => "labels_label_object.bpt",
            ObjectKeyValue => "props_object_key_value.bpt",
            KeyValueObject => "props_key_value_object.bpt",
        }
    }

    /// Reorders a canonical tuple into this permutation's key order.
    pub fn to_key(self, canonical: &[u64]) -> Vec<u64> {
        self.columns().iter().map(|&c| canonical[c]).collect()
    }

    /// Reorders a stored key back into canonical column order.
    pub fn to_canonical(self, key: &[u64]) -> Vec<u64> {
        let cols = self.columns();
        let mut out = vec![0; cols.len()];
        for (pos, &c) in cols.iter().enumerate() {
            out[c] = key[pos];
        }
        out
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.file_name().trim_end_matches(".bpt");
        f.write_str(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_are_bijections() {
        for p in Permutation::ALL {
            let mut cols = p.columns().to_vec();
            cols.sort_unstable();
            assert_eq!(cols, (0..p.relation().arity()).collect::<Vec<_>>());
            let canon: Vec<u64> = (10..10 + cols.len() as u64).collect();
            assert_eq!(p.to_canonical(&p.to_key(&canon)), canon);
        }
    }
}
