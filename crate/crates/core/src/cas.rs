//! Coded register: server handlers and client-side selection for CAS and its
//! self-stabilizing variant.

use std::collections::BTreeMap;

use bytes::Bytes;

use crate::codec::{Codec, CodecError, CodedElement};
use crate::gossip::tag_from_payload;
use crate::store::{PruneReport, RecordStore};
use crate::types::{HwAddr, Phase, Tag, Variant};
use crate::wire::WireMessage;

/// `PREWRITE(t, e)`: store `(t, e, pre)` unless present. The self-stabilizing
/// variant prunes right away so the bound holds after every insertion.
pub fn on_prewrite(store: &mut RecordStore, tag: Tag, element: Bytes, variant: Variant, bound: usize) -> Option<PruneReport> {
    store.insert_pre(tag, element);
    (variant == Variant::Casss).then(|| store.prune(bound))
}

/// `FINWRITE(t)`: label `t` finalized.
pub fn on_finwrite(store: &mut RecordStore, tag: Tag, variant: Variant, bound: usize) -> Option<PruneReport> {
    store.finalize(tag, Phase::Fin);
    (variant == Variant::Casss).then(|| store.prune(bound))
}

/// `FINREAD(t)`: the element stored for `t`, if any; `t` becomes finalized here.
pub fn on_finread(store: &mut RecordStore, tag: Tag, variant: Variant, bound: usize) -> (Option<Bytes>, Option<PruneReport>) {
    if tag != Tag::INITIAL {
        store.finalize(tag, Phase::Fin);
    }
    let element = store.element(&tag);
    (element, (variant == Variant::Casss).then(|| store.prune(bound)))
}

/// `FINFIN(t)`: the fourth-round label; triggers pruning.
pub fn on_finfin(store: &mut RecordStore, tag: Tag, bound: usize) -> PruneReport {
    store.finalize(tag, Phase::FinFin);
    store.prune(bound)
}

/// Tag a writer must exceed, from query responses carrying the responder's
/// maximum finalized tag and (in the payload) its maximum tag of any label.
pub fn writer_base(variant: Variant, responses: &BTreeMap<HwAddr, WireMessage>) -> Tag {
    responses
        .values()
        .map(|m| {
            let fin = m.tag.unwrap_or(Tag::INITIAL);
            match variant {
                Variant::Casss => fin.max(tag_from_payload(m.payload.clone()).unwrap_or(Tag::INITIAL)),
                _ => fin,
            }
        })
        .max()
        .unwrap_or(Tag::INITIAL)
}

/// Highest finalized tag among query responses.
pub fn reader_target(responses: &BTreeMap<HwAddr, WireMessage>) -> Tag {
    responses.values().map(|m| m.tag.unwrap_or(Tag::INITIAL)).max().unwrap_or(Tag::INITIAL)
}

/// Reconstructs the object from `FINREAD` responses; needs `k` elements.
pub fn reader_decode(codec: &Codec, responses: &BTreeMap<HwAddr, WireMessage>) -> Result<Vec<u8>, CodecError> {
    let elements: Vec<CodedElement> = responses
        .iter()
        .filter_map(|(hw, m)| {
            let index = hw.server_index()?;
            CodedElement::from_bytes(index, m.element.as_ref()?)
        })
        .collect();
    codec.decode(&elements)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gossip::tag_payload;
    use crate::types::Uid;
    use crate::wire::{ChannelClass, MsgType};

    fn t(seq: u64, c: usize) -> Tag {
        Tag::new(seq, Uid::new(HwAddr::client(c), 1))
    }

    fn query_ack(fin: Tag, pre: Tag) -> WireMessage {
        WireMessage::new(MsgType::Ack, ChannelClass::Register, Uid::SYSTEM)
            .with_tag(fin)
            .with_payload(tag_payload(&pre))
    }

    #[test]
    fn writer_base_depends_on_variant() {
        let mut r = BTreeMap::new();
        r.insert(HwAddr::server(0), query_ack(t(3, 0), t(9, 1)));
        r.insert(HwAddr::server(1), query_ack(t(4, 0), t(4, 0)));
        assert_eq!(writer_base(Variant::Cas, &r), t(4, 0));
        assert_eq!(writer_base(Variant::Casss, &r), t(9, 1));
    }

    #[test]
    fn finwrite_for_unknown_tag_creates_empty_fin() {
        let mut s = RecordStore::new();
        on_finwrite(&mut s, t(2, 0), Variant::Cas, 100);
        let (e, _) = on_finread(&mut s, t(2, 0), Variant::Cas, 100);
        assert_eq!(e, None);
        assert_eq!(s.max_fin(), t(2, 0));
    }

    #[test]
    fn finread_of_initial_tag_adds_nothing() {
        let mut s = RecordStore::new();
        let (e, _) = on_finread(&mut s, Tag::INITIAL, Variant::Casss, 100);
        assert_eq!(e, None);
        assert!(s.is_empty());
    }

    #[test]
    fn decode_needs_k_elements() {
        let codec = Codec::new(5, 3).unwrap();
        let data = b"coded register".to_vec();
        let elements = codec.encode(&data).unwrap();
        let mut r = BTreeMap::new();
        for i in [0usize, 2] {
            r.insert(
                HwAddr::server(i),
                WireMessage::new(MsgType::Ack, ChannelClass::Register, Uid::SYSTEM)
                    .with_element(Some(elements[i].to_bytes())),
            );
        }
        r.insert(HwAddr::server(3), WireMessage::new(MsgType::Ack, ChannelClass::Register, Uid::SYSTEM));
        assert!(reader_decode(&codec, &r).is_err());
        r.insert(
            HwAddr::server(4),
            WireMessage::new(MsgType::Ack, ChannelClass::Register, Uid::SYSTEM).with_element(Some(elements[4].to_bytes())),
        );
        assert_eq!(reader_decode(&codec, &r).unwrap(), data);
    }
}
