//! Full-replication multi-writer ABD.

use std::collections::BTreeMap;

use bytes::Bytes;

use crate::types::{HwAddr, Tag};
use crate::wire::WireMessage;

/// A server's single replicated record.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AbdState {
    pub tag: Tag,
    /// `None` is the initial empty object.
    pub data: Option<Bytes>,
}

impl AbdState {
    /// Adopts `(tag, data)` when `tag` is strictly newer. Returns whether it did.
    pub fn on_write(&mut self, tag: Tag, data: Option<Bytes>) -> bool {
        if tag > self.tag {
            self.tag = tag;
            self.data = data;
            true
        } else {
            false
        }
    }

    /// Fills a query acknowledgment with the stored tag and object.
    pub fn answer_query(&self, ack: WireMessage) -> WireMessage {
        ack.with_tag(self.tag).with_element(self.data.clone())
    }
}

/// Highest-tagged `(tag, object)` among query responses.
pub fn freshest(responses: &BTreeMap<HwAddr, WireMessage>) -> (Tag, Option<Bytes>) {
    responses
        .values()
        .map(|m| (m.tag.unwrap_or(Tag::INITIAL), m.element.clone()))
        .max_by(|a, b| a.0.cmp(&b.0))
        .unwrap_or((Tag::INITIAL, None))
}
