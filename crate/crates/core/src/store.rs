//! Server-side record storage for the coded register.

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;

use crate::types::{HwAddr, Phase, Record, Tag};

/// Result of one pruning pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PruneReport {
    pub evicted: usize,
    pub size: usize,
    pub max_fin_kept: bool,
}

/// At most one record per tag; phases only move forward.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecordStore {
    records: BTreeMap<Tag, Record>,
}

impl RecordStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, tag: &Tag) -> Option<&Record> {
        self.records.get(tag)
    }

    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.records.values()
    }

    /// Stores a pre-written element unless a record for `tag` exists.
    pub fn insert_pre(&mut self, tag: Tag, element: Bytes) -> bool {
        if self.records.contains_key(&tag) {
            return false;
        }
        self.records.insert(tag, Record { tag, element: Some(element), phase: Phase::Pre });
        true
    }

    /// Raises the record for `tag` to at least `phase`, creating an
    /// element-less record if none exists.
    pub fn finalize(&mut self, tag: Tag, phase: Phase) {
        let r = self.records.entry(tag).or_insert(Record { tag, element: None, phase });
        if r.phase < phase {
            r.phase = phase;
        }
    }

    pub fn element(&self, tag: &Tag) -> Option<Bytes> {
        self.records.get(tag).and_then(|r| r.element.clone())
    }

    /// Highest tag labelled `fin` or `FIN`; the initial tag if there is none.
    pub fn max_fin(&self) -> Tag {
        self.records
            .values()
            .rev()
            .find(|r| r.phase.is_finalized())
            .map_or(Tag::INITIAL, |r| r.tag)
    }

    /// Highest tag of any record.
    pub fn max_tag(&self) -> Tag {
        self.records.keys().next_back().copied().unwrap_or(Tag::INITIAL)
    }

    /// Record with the highest finalized tag and its element, if any.
    pub fn max_fin_record(&self) -> Option<&Record> {
        self.records.values().rev().find(|r| r.phase.is_finalized())
    }

    /// Shrinks the store to `bound` records. The maximum finalized record is
    /// never evicted; the newest record of each writer is kept while possible;
    /// everything else goes lowest tag first.
    pub fn prune(&mut self, bound: usize) -> PruneReport {
        let max_fin = self.max_fin_record().map(|r| r.tag);
        let before = self.records.len();
        if before > bound {
            let mut newest: BTreeMap<HwAddr, Tag> = BTreeMap::new();
            for t in self.records.keys() {
                newest.insert(t.writer.hw, *t);
            }
            let protected: BTreeSet<Tag> = newest.into_values().chain(max_fin).collect();
            let victims: Vec<Tag> = self
                .records
                .keys()
                .filter(|t| !protected.contains(t))
                .copied()
                .chain(self.records.keys().filter(|t| protected.contains(t) && Some(**t) != max_fin).copied())
                .take(before - bound)
                .collect();
            for t in victims {
                self.records.remove(&t);
            }
        }
        PruneReport {
            evicted: before - self.records.len(),
            size: self.records.len(),
            max_fin_kept: max_fin.is_none_or(|t| self.records.contains_key(&t)),
        }
    }

    /// Keeps only the record for `tag`, relabelled with the reset tag.
    pub fn collapse(&mut self, tag: &Tag) {
        let element = self.element(tag);
        self.records.clear();
        self.records.insert(Tag::RESET, Record { tag: Tag::RESET, element, phase: Phase::Fin });
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    /// Inserts or replaces a record verbatim (fault injection).
    pub fn put_raw(&mut self, r: Record) {
        self.records.insert(r.tag, r);
    }
}
