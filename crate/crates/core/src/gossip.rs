//! Server-to-server tag dissemination.

use bytes::{BufMut, Bytes, BytesMut};

use crate::types::Tag;
use crate::wire::{get_flag, get_tag, get_u64, put_tag, DecodeError};

/// Periodically exchanged summary of a server's maxima.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GossipDigest {
    pub max_pre: Tag,
    pub max_fin: Tag,
    pub max_inc_seen: u64,
    pub overflow_seen: bool,
    /// Sender's reset epoch; digests from an older epoch are stale.
    pub epoch: u64,
}

impl Default for GossipDigest {
    fn default() -> Self {
        GossipDigest {
            max_pre: Tag::INITIAL,
            max_fin: Tag::INITIAL,
            max_inc_seen: 0,
            overflow_seen: false,
            epoch: 0,
        }
    }
}

impl GossipDigest {
    pub fn encode(&self) -> Bytes {
        let mut w = BytesMut::with_capacity(2 * 24 + 8 + 1 + 8);
        put_tag(&mut w, &self.max_pre);
        put_tag(&mut w, &self.max_fin);
        w.put_u64(self.max_inc_seen);
        w.put_u8(self.overflow_seen as u8);
        w.put_u64(self.epoch);
        w.freeze()
    }

    pub fn decode(mut raw: Bytes) -> Result<GossipDigest, DecodeError> {
        let r = &mut raw;
        let d = GossipDigest {
            max_pre: get_tag(r)?,
            max_fin: get_tag(r)?,
            max_inc_seen: get_u64(r)?,
            overflow_seen: get_flag(r)?,
            epoch: get_u64(r)?,
        };
        if !r.is_empty() {
            return Err(DecodeError::Trailing(r.len()));
        }
        Ok(d)
    }
}

/// Encodes a single tag as a payload (finalize gossip, query responses).
pub fn tag_payload(t: &Tag) -> Bytes {
    let mut w = BytesMut::with_capacity(24);
    put_tag(&mut w, t);
    w.freeze()
}

pub fn tag_from_payload(mut raw: Bytes) -> Option<Tag> {
    let t = get_tag(&mut raw).ok()?;
    raw.is_empty().then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{HwAddr, Uid};

    #[test]
    fn digest_roundtrip() {
        let d = GossipDigest {
            max_pre: Tag::new(9, Uid::new(HwAddr::client(1), 3)),
            max_fin: Tag::new(7, Uid::new(HwAddr::client(2), 1)),
            max_inc_seen: 4,
            overflow_seen: true,
            epoch: 2,
        };
        assert_eq!(GossipDigest::decode(d.encode()).unwrap(), d);
        assert!(GossipDigest::decode(Bytes::from_static(b"short")).is_err());
    }

    #[test]
    fn tag_payload_roundtrip() {
        let t = Tag::new(3, Uid::new(HwAddr::client(0), 1));
        assert_eq!(tag_from_payload(tag_payload(&t)), Some(t));
        assert_eq!(tag_from_payload(Bytes::new()), None);
    }
}
