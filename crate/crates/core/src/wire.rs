//! Canonical message encoding.
//!
//! Fields are written in a fixed order. Integers are 64-bit big-endian, enums
//! are one byte, optional fields carry a one-byte presence flag and byte
//! strings are length-prefixed. Equal messages therefore always produce
//! identical byte strings, which the harness relies on for accounting.

use bytes::{Buf, BufMut, Bytes, BytesMut};

use crate::types::{HwAddr, Phase, Tag, Uid};

/// Upper bound accepted for any length-prefixed field.
pub const MAX_FIELD_LEN: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("truncated message")]
    Truncated,
    #[error("unknown {0} code {1}")]
    BadCode(&'static str, u8),
    #[error("field length {0} too large")]
    TooLong(u64),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MsgType {
    Query,
    PreWrite,
    FinWrite,
    FinRead,
    FinFin,
    Ack,
    Gossip,
    CntrQry,
    IncCntr,
    ResetState,
}

impl MsgType {
    pub const ALL: [MsgType; 10] = [
        MsgType::Query,
        MsgType::PreWrite,
        MsgType::FinWrite,
        MsgType::FinRead,
        MsgType::FinFin,
        MsgType::Ack,
        MsgType::Gossip,
        MsgType::CntrQry,
        MsgType::IncCntr,
        MsgType::ResetState,
    ];

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Result<Self, DecodeError> {
        Self::ALL.get(c as usize).copied().ok_or(DecodeError::BadCode("msg type", c))
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Query => "QUERY",
            MsgType::PreWrite => "PREWRITE",
            MsgType::FinWrite => "FINWRITE",
            MsgType::FinRead => "FINREAD",
            MsgType::FinFin => "FINFIN",
            MsgType::Ack => "ACK",
            MsgType::Gossip => "GOSSIP",
            MsgType::CntrQry => "CNTRQRY",
            MsgType::IncCntr => "INCCNTR",
            MsgType::ResetState => "RESETSTATE",
        }
    }
}

/// Independent channel instances exist per `(src, dst, class)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelClass {
    /// Client register phases.
    Register,
    /// Client incarnation-number service.
    Incarnation,
    /// Reliable server-to-server finalize gossip.
    FinGossip,
    /// Server-to-server reset-state exchange.
    Reset,
    /// Fire-and-forget datagrams; no token.
    Datagram,
}

impl ChannelClass {
    pub const ALL: [ChannelClass; 5] = [
        ChannelClass::Register,
        ChannelClass::Incarnation,
        ChannelClass::FinGossip,
        ChannelClass::Reset,
        ChannelClass::Datagram,
    ];

    fn from_code(c: u8) -> Result<Self, DecodeError> {
        Self::ALL.get(c as usize).copied().ok_or(DecodeError::BadCode("channel class", c))
    }
}

/// Identifies one quorum round of one client operation.
///
/// `inc` and `nonce` pin the client life that issued the request; `counter`
/// numbers operations modulo 2^16 and `round` numbers phases within one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PhaseId {
    pub inc: u64,
    pub nonce: u32,
    pub counter: u16,
    pub round: u8,
}

impl PhaseId {
    /// Operation part of the identifier (without the round).
    pub fn op_key(&self) -> (u64, u32, u16) {
        (self.inc, self.nonce, self.counter)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub class: ChannelClass,
    pub token: u64,
    pub tag: Option<Tag>,
    pub phase: Option<Phase>,
    pub element: Option<Bytes>,
    pub sender: Uid,
    /// Server reset epoch: the responder's on acknowledgments, the one the
    /// client expects on requests (`None` accepts any).
    pub epoch: Option<u64>,
    pub op: PhaseId,
    pub payload: Bytes,
}

impl WireMessage {
    pub fn new(msg_type: MsgType, class: ChannelClass, sender: Uid) -> WireMessage {
        WireMessage {
            msg_type,
            class,
            token: 0,
            tag: None,
            phase: None,
            element: None,
            sender,
            epoch: None,
            op: PhaseId::default(),
            payload: Bytes::new(),
        }
    }

    pub fn with_tag(mut self, tag: Tag) -> Self {
        self.tag = Some(tag);
        self
    }

    pub fn with_phase(mut self, phase: Phase) -> Self {
        self.phase = Some(phase);
        self
    }

    pub fn with_element(mut self, element: Option<Bytes>) -> Self {
        self.element = element;
        self
    }

    pub fn with_op(mut self, op: PhaseId) -> Self {
        self.op = op;
        self
    }

    pub fn with_epoch(mut self, epoch: Option<u64>) -> Self {
        self.epoch = epoch;
        self
    }

    pub fn with_payload(mut self, payload: Bytes) -> Self {
        self.payload = payload;
        self
    }

    /// Acknowledgment skeleton answering `self`, sent by `responder`.
    pub fn ack(&self, responder: Uid) -> WireMessage {
        WireMessage::new(MsgType::Ack, self.class, responder).with_op(self.op)
    }

    /// Exact size of [`WireMessage::encode`]'s output.
    pub fn encoded_len(&self) -> usize {
        const UID: usize = 8 + 8;
        const TAG: usize = 8 + UID;
        let fixed = 1 + 1 + 8; // type, class, token
        let tag = 1 + if self.tag.is_some() { TAG } else { 0 };
        let phase = 1 + usize::from(self.phase.is_some());
        let element = 1 + self.element.as_ref().map_or(0, |e| 8 + e.len());
        let epoch = 1 + if self.epoch.is_some() { 8 } else { 0 };
        let op = 8 * 4;
        fixed + tag + phase + element + UID + epoch + op + 8 + self.payload.len()
    }

    pub fn encode(&self) -> Bytes {
        let mut w = BytesMut::with_capacity(self.encoded_len());
        w.put_u8(self.msg_type.code());
        w.put_u8(self.class as u8);
        w.put_u64(self.token);
        match &self.tag {
            Some(t) => {
                w.put_u8(1);
                put_tag(&mut w, t);
            }
            None => w.put_u8(0),
        }
        match self.phase {
            Some(p) => {
                w.put_u8(1);
                w.put_u8(p as u8);
            }
            None => w.put_u8(0),
        }
        match &self.element {
            Some(e) => {
                w.put_u8(1);
                put_bytes(&mut w, e);
            }
            None => w.put_u8(0),
        }
        put_uid(&mut w, &self.sender);
        match self.epoch {
            Some(e) => {
                w.put_u8(1);
                w.put_u64(e);
            }
            None => w.put_u8(0),
        }
        w.put_u64(self.op.inc);
        w.put_u64(self.op.nonce as u64);
        w.put_u64(self.op.counter as u64);
        w.put_u64(self.op.round as u64);
        put_bytes(&mut w, &self.payload);
        debug_assert_eq!(w.len(), self.encoded_len());
        w.freeze()
    }

    pub fn decode(mut raw: Bytes) -> Result<WireMessage, DecodeError> {
        let r = &mut raw;
        let msg_type = MsgType::from_code(get_u8(r)?)?;
        let class = ChannelClass::from_code(get_u8(r)?)?;
        let token = get_u64(r)?;
        let tag = if get_flag(r)? { Some(get_tag(r)?) } else { None };
        let phase = if get_flag(r)? {
            Some(match get_u8(r)? {
                0 => Phase::Pre,
                1 => Phase::Fin,
                2 => Phase::FinFin,
                c => return Err(DecodeError::BadCode("phase", c)),
            })
        } else {
            None
        };
        let element = if get_flag(r)? { Some(get_bytes(r)?) } else { None };
        let sender = get_uid(r)?;
        let epoch = if get_flag(r)? { Some(get_u64(r)?) } else { None };
        let op = PhaseId {
            inc: get_u64(r)?,
            nonce: get_u64(r)? as u32,
            counter: get_u64(r)? as u16,
            round: get_u64(r)? as u8,
        };
        let payload = get_bytes(r)?;
        if r.has_remaining() {
            return Err(DecodeError::Trailing(r.remaining()));
        }
        Ok(WireMessage { msg_type, class, token, tag, phase, element, sender, epoch, op, payload })
    }
}

pub(crate) fn put_uid(w: &mut BytesMut, u: &Uid) {
    w.put_slice(&u.hw.0);
    w.put_u64(u.inc);
}

pub(crate) fn put_tag(w: &mut BytesMut, t: &Tag) {
    w.put_u64(t.seq);
    put_uid(w, &t.writer);
}

pub(crate) fn put_bytes(w: &mut BytesMut, b: &[u8]) {
    w.put_u64(b.len() as u64);
    w.put_slice(b);
}

pub(crate) fn get_u8(r: &mut Bytes) -> Result<u8, DecodeError> {
    if r.remaining() < 1 {
        return Err(DecodeError::Truncated);
    }
    Ok(r.get_u8())
}

pub(crate) fn get_flag(r: &mut Bytes) -> Result<bool, DecodeError> {
    match get_u8(r)? {
        0 => Ok(false),
        1 => Ok(true),
        c => Err(DecodeError::BadCode("presence flag", c)),
    }
}

pub(crate) fn get_u64(r: &mut Bytes) -> Result<u64, DecodeError> {
    if r.remaining() < 8 {
        return Err(DecodeError::Truncated);
    }
    Ok(r.get_u64())
}

pub(crate) fn get_uid(r: &mut Bytes) -> Result<Uid, DecodeError> {
    if r.remaining() < 16 {
        return Err(DecodeError::Truncated);
    }
    let mut hw = [0u8; 8];
    r.copy_to_slice(&mut hw);
    Ok(Uid::new(HwAddr(hw), r.get_u64()))
}

pub(crate) fn get_tag(r: &mut Bytes) -> Result<Tag, DecodeError> {
    let seq = get_u64(r)?;
    Ok(Tag::new(seq, get_uid(r)?))
}

pub(crate) fn get_bytes(r: &mut Bytes) -> Result<Bytes, DecodeError> {
    let len = get_u64(r)?;
    if len > MAX_FIELD_LEN as u64 {
        return Err(DecodeError::TooLong(len));
    }
    if r.remaining() < len as usize {
        return Err(DecodeError::Truncated);
    }
    Ok(r.split_to(len as usize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_uid() -> impl Strategy<Value = Uid> {
        (any::<[u8; 8]>(), any::<u64>()).prop_map(|(h, i)| Uid::new(HwAddr(h), i))
    }

    fn arb_message() -> impl Strategy<Value = WireMessage> {
        (
            0usize..10,
            0usize..5,
            any::<u64>(),
            proptest::option::of((any::<u64>(), arb_uid())),
            proptest::option::of(0u8..3),
            proptest::option::of(proptest::collection::vec(any::<u8>(), 0..64)),
            arb_uid(),
            proptest::option::of(any::<u64>()),
            (any::<u64>(), any::<u32>(), any::<u16>(), any::<u8>()),
            proptest::collection::vec(any::<u8>(), 0..32),
        )
            .prop_map(|(t, c, token, tag, phase, element, sender, epoch, op, payload)| WireMessage {
                msg_type: MsgType::ALL[t],
                class: ChannelClass::ALL[c],
                token,
                tag: tag.map(|(s, u)| Tag::new(s, u)),
                phase: phase.map(|p| [Phase::Pre, Phase::Fin, Phase::FinFin][p as usize]),
                element: element.map(Bytes::from),
                sender,
                epoch,
                op: PhaseId { inc: op.0, nonce: op.1, counter: op.2, round: op.3 },
                payload: Bytes::from(payload),
            })
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(m in arb_message()) {
            let raw = m.encode();
            prop_assert_eq!(raw.len(), m.encoded_len());
            prop_assert_eq!(WireMessage::decode(raw).unwrap(), m);
        }

        #[test]
        fn arbitrary_bytes_never_panic(raw in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = WireMessage::decode(Bytes::from(raw));
        }
    }

    #[test]
    fn encoding_is_canonical() {
        let a = WireMessage::new(MsgType::Query, ChannelClass::Register, Uid::SYSTEM).with_tag(Tag::INITIAL);
        let b = a.clone();
        assert_eq!(a.encode(), b.encode());
    }

    #[test]
    fn truncation_and_trailing_bytes_are_errors() {
        let raw = WireMessage::new(MsgType::Ack, ChannelClass::Reset, Uid::SYSTEM).encode();
        assert_eq!(WireMessage::decode(raw.slice(..raw.len() - 1)), Err(DecodeError::Truncated));
        let mut longer = raw.to_vec();
        longer.push(0);
        assert_eq!(WireMessage::decode(Bytes::from(longer)), Err(DecodeError::Trailing(1)));
    }
}
