//! Tags, client identities, records and the static quorum configuration.

use std::cmp::Ordering;
use std::fmt;

use bytes::Bytes;

use crate::error::ConfigError;

/// Largest number of servers the erasure code supports (data + parity shards).
pub const MAX_SERVERS: usize = 32;

/// Fixed-width opaque node address.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct HwAddr(pub [u8; 8]);

impl HwAddr {
    /// The all-zero address, used as the writer of the initial and reset tags.
    pub const SYSTEM: HwAddr = HwAddr([0; 8]);

    /// Address of the `index`-th server in the configuration.
    pub fn server(index: usize) -> HwAddr {
        let mut b = [0u8; 8];
        b[0] = b'S';
        b[4..].copy_from_slice(&(index as u32).to_be_bytes());
        HwAddr(b)
    }

    /// Conventional address of the `index`-th client.
    pub fn client(index: usize) -> HwAddr {
        let mut b = [0u8; 8];
        b[0] = b'C';
        b[4..].copy_from_slice(&(index as u32).to_be_bytes());
        HwAddr(b)
    }

    /// Server position encoded by [`HwAddr::server`], if this is a server address.
    pub fn server_index(&self) -> Option<usize> {
        if self.0[0] == b'S' && self.0[1..4] == [0, 0, 0] {
            Some(u32::from_be_bytes(self.0[4..].try_into().unwrap()) as usize)
        } else {
            None
        }
    }

    pub fn from_hex(s: &str) -> Option<HwAddr> {
        let raw = hex::decode(s).ok()?;
        Some(HwAddr(raw.try_into().ok()?))
    }
}

impl fmt::Debug for HwAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(i) = self.server_index() {
            return write!(f, "s{i}");
        }
        if self.0[0] == b'C' && self.0[1..4] == [0, 0, 0] {
            return write!(f, "c{}", u32::from_be_bytes(self.0[4..].try_into().unwrap()));
        }
        write!(f, "{}", hex::encode(self.0))
    }
}

impl fmt::Display for HwAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", hex::encode(self.0))
    }
}

/// Recyclable client identity: hardware address plus incarnation number.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Uid {
    pub hw: HwAddr,
    pub inc: u64,
}

impl Uid {
    /// Writer of the initial tag `(0, ⊥)` and of the post-reset tag `(1, ⊥)`.
    pub const SYSTEM: Uid = Uid { hw: HwAddr::SYSTEM, inc: 0 };

    pub fn new(hw: HwAddr, inc: u64) -> Uid {
        Uid { hw, inc }
    }
}

impl Ord for Uid {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.inc, self.hw).cmp(&(other.inc, other.hw))
    }
}

impl PartialOrd for Uid {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Uid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Uid::SYSTEM {
            write!(f, "⊥")
        } else {
            write!(f, "{:?}#{}", self.hw, self.inc)
        }
    }
}

/// Version identifier. Ordered lexicographically by `(seq, writer.inc, writer.hw)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Tag {
    pub seq: u64,
    pub writer: Uid,
}

impl Tag {
    /// Tag of the never-written register.
    pub const INITIAL: Tag = Tag { seq: 0, writer: Uid::SYSTEM };
    /// Tag reinstalled on the surviving record after a global reset.
    pub const RESET: Tag = Tag { seq: 1, writer: Uid::SYSTEM };

    pub fn new(seq: u64, writer: Uid) -> Tag {
        Tag { seq, writer }
    }

    /// True when the sequence number or writer incarnation sits at or above its bound.
    pub fn overflows(&self, bounds: &Bounds) -> bool {
        self.seq >= bounds.max_int || self.writer.inc >= bounds.max_inc
    }
}

impl Ord for Tag {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.seq, self.writer).cmp(&(other.seq, other.writer))
    }
}

impl PartialOrd for Tag {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {:?})", self.seq, self.writer)
    }
}

/// Total order on tags.
pub fn compare_tags(a: &Tag, b: &Tag) -> Ordering {
    a.cmp(b)
}

/// Returned when a counter has reached its overflow bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("overflow detected at {0:?}")]
pub struct OverflowDetected(pub Tag);

/// The writer's next tag: one past `max` in sequence number, owned by `me`.
pub fn next_tag(max: &Tag, me: Uid, max_int: u64) -> Result<Tag, OverflowDetected> {
    if max.seq >= max_int {
        return Err(OverflowDetected(*max));
    }
    Ok(Tag::new(max.seq + 1, me))
}

/// Label of a stored record. Only ever advances `Pre → Fin → FinFin` for one tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Pre,
    Fin,
    /// The fourth-round label (`FIN`) of the self-stabilizing writer.
    FinFin,
}

impl Phase {
    pub fn is_finalized(self) -> bool {
        self >= Phase::Fin
    }
}

/// One stored version of the register.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub tag: Tag,
    pub element: Option<Bytes>,
    pub phase: Phase,
}

/// Which register emulation runs over the quorum system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    MwAbd,
    Cas,
    Casss,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::MwAbd, Variant::Cas, Variant::Casss];

    pub fn name(self) -> &'static str {
        match self {
            Variant::MwAbd => "MWABD",
            Variant::Cas => "CAS",
            Variant::Casss => "CASSS",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mwabd" | "mw-abd" | "abd" => Ok(Variant::MwAbd),
            "cas" => Ok(Variant::Cas),
            "casss" => Ok(Variant::Casss),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuorumKind {
    /// `⌈(N+k)/2⌉` servers; any two share at least `k`.
    Coded,
    /// `⌊N/2⌋ + 1` servers.
    Majority,
}

/// Overflow bounds on tag sequence numbers and incarnation numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bounds {
    pub max_int: u64,
    pub max_inc: u64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { max_int: u64::MAX, max_inc: u32::MAX as u64 }
    }
}

/// Static description of the server set and protocol parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuorumConfig {
    /// Server addresses in configuration order; position `i` is server `i`.
    pub servers: Vec<String>,
    pub f: usize,
    pub k: usize,
    pub variant: Variant,
    /// Assumed bound on reads concurrent with one write.
    pub delta: usize,
    /// Number of clients the storage and incarnation bounds are sized for.
    pub clients: usize,
    pub bounds: Bounds,
}

impl QuorumConfig {
    pub const DEFAULT_DELTA: usize = 16;

    /// `n` anonymous servers with `k = n - 2f`.
    pub fn new(n: usize, f: usize, variant: Variant) -> QuorumConfig {
        QuorumConfig {
            servers: (0..n).map(|i| format!("server-{i}")).collect(),
            f,
            k: n.saturating_sub(2 * f).max(1),
            variant,
            delta: Self::DEFAULT_DELTA,
            clients: 5,
            bounds: Bounds::default(),
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_clients(mut self, clients: usize) -> Self {
        self.clients = clients;
        self
    }

    pub fn n(&self) -> usize {
        self.servers.len()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n();
        if n == 0 {
            return Err(ConfigError::new("no servers configured"));
        }
        if n > MAX_SERVERS {
            return Err(ConfigError::new(format!(
                "{n} servers exceeds the erasure-code limit of {MAX_SERVERS}"
            )));
        }
        if 2 * self.f >= n {
            return Err(ConfigError::new(format!("f={} leaves no majority among {n} servers", self.f)));
        }
        if self.k < 1 || self.k + 2 * self.f > n {
            return Err(ConfigError::new(format!(
                "k={} outside 1..={} (N - 2f)",
                self.k,
                n - 2 * self.f
            )));
        }
        if self.bounds.max_int < 2 || self.bounds.max_inc < 2 {
            return Err(ConfigError::new("overflow bounds must be at least 2"));
        }
        Ok(())
    }

    /// Number of responses a phase of the given kind waits for.
    pub fn quorum_size(&self, kind: QuorumKind) -> usize {
        let n = self.n();
        match kind {
            QuorumKind::Coded => (n + self.k).div_ceil(2),
            QuorumKind::Majority => n / 2 + 1,
        }
    }

    /// Quorum kind used by the register operations of this variant.
    pub fn register_quorum(&self) -> QuorumKind {
        match self.variant {
            Variant::MwAbd => QuorumKind::Majority,
            _ => QuorumKind::Coded,
        }
    }

    /// Checked quorum size for the register operations.
    pub fn checked_quorum_size(&self) -> Result<usize, ConfigError> {
        self.validate()?;
        Ok(self.quorum_size(self.register_quorum()))
    }

    /// Server-side record bound `N_clients + δ + 3`.
    pub fn record_bound(&self) -> usize {
        self.clients + self.delta + 3
    }

    pub fn server_addrs(&self) -> Vec<HwAddr> {
        (0..self.n()).map(HwAddr::server).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uid(hw: u8, inc: u64) -> Uid {
        Uid::new(HwAddr([hw; 8]), inc)
    }

    #[test]
    fn seq_dominates() {
        let a = Tag::new(2, uid(1, 0));
        let b = Tag::new(1, uid(9, 0));
        assert_eq!(compare_tags(&a, &b), Ordering::Greater);
    }

    #[test]
    fn identical_tags_are_equal() {
        let a = Tag::new(3, uid(0xA, 1));
        assert_eq!(compare_tags(&a, &a.clone()), Ordering::Equal);
    }

    #[test]
    fn incarnation_breaks_ties_before_address() {
        let hi = Tag::new(3, uid(0xA, 2));
        let lo = Tag::new(3, uid(0xA, 1));
        assert_eq!(compare_tags(&hi, &lo), Ordering::Greater);
        // incarnation outranks address
        let other = Tag::new(3, uid(0xF, 1));
        assert_eq!(compare_tags(&hi, &other), Ordering::Greater);
    }

    /// Field-wise enumeration: the order must equal the lexicographic order of
    /// the tuple `(seq, inc, hw)` over every combination of small field values.
    #[test]
    fn order_matches_enumerated_lexicographic_oracle() {
        let mut tags = Vec::new();
        for seq in 0..3u64 {
            for inc in 0..3u64 {
                for hw in 0..3u8 {
                    tags.push(((seq, inc, hw), Tag::new(seq, uid(hw, inc))));
                }
            }
        }
        for (ka, a) in &tags {
            for (kb, b) in &tags {
                assert_eq!(compare_tags(a, b), ka.cmp(kb), "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn next_tag_increments_and_takes_ownership() {
        let me = uid(1, 0);
        let t = next_tag(&Tag::new(5, uid(3, 0)), me, u64::MAX).unwrap();
        assert_eq!(t, Tag::new(6, me));
        assert_eq!(next_tag(&Tag::INITIAL, me, u64::MAX).unwrap(), Tag::new(1, me));
    }

    #[test]
    fn next_tag_detects_overflow() {
        let max = Tag::new(u64::MAX, uid(2, 0));
        assert_eq!(next_tag(&max, uid(1, 0), u64::MAX), Err(OverflowDetected(max)));
        let small = Tag::new(100, uid(2, 0));
        assert!(next_tag(&small, uid(1, 0), 100).is_err());
    }

    #[test]
    fn quorum_sizes() {
        let cas = QuorumConfig::new(10, 2, Variant::Cas).with_k(6);
        assert_eq!(cas.checked_quorum_size().unwrap(), 8);
        let full = QuorumConfig::new(5, 0, Variant::Cas).with_k(5);
        assert_eq!(full.checked_quorum_size().unwrap(), 5);
        let abd = QuorumConfig::new(10, 2, Variant::MwAbd);
        assert_eq!(abd.checked_quorum_size().unwrap(), 6);
    }

    #[test]
    fn invalid_coding_parameters_are_rejected() {
        assert!(QuorumConfig::new(10, 2, Variant::Cas).with_k(7).checked_quorum_size().is_err());
        assert!(QuorumConfig::new(10, 2, Variant::Cas).with_k(0).checked_quorum_size().is_err());
        assert!(QuorumConfig::new(33, 2, Variant::Cas).validate().is_err());
    }

    #[test]
    fn server_addresses_roundtrip() {
        for i in [0, 7, 31] {
            assert_eq!(HwAddr::server(i).server_index(), Some(i));
        }
        assert_eq!(HwAddr::client(3).server_index(), None);
    }

    fn arb_tag() -> impl Strategy<Value = Tag> {
        (0u64..4, 0u64..3, 0u8..3).prop_map(|(s, i, h)| Tag::new(s, uid(h, i)))
    }

    proptest! {
        #[test]
        fn tag_order_is_total_and_transitive(a in arb_tag(), b in arb_tag(), c in arb_tag()) {
            let ab = compare_tags(&a, &b);
            prop_assert_eq!(ab, compare_tags(&b, &a).reverse());
            prop_assert_eq!(ab == Ordering::Equal, a == b);
            if a <= b && b <= c {
                prop_assert!(a <= c);
            }
        }

        #[test]
        fn next_tag_is_strictly_greater(s in 0u64..1000, i in 0u64..5, h in any::<u8>(), me_h in any::<u8>()) {
            let max = Tag::new(s, uid(h, i));
            let t = next_tag(&max, uid(me_h, 0), u64::MAX).unwrap();
            prop_assert!(t > max);
            // greater than every tag with a smaller sequence number
            prop_assert!(t > Tag::new(s, uid(255, u64::MAX)));
        }

        #[test]
        fn coded_quorums_intersect_in_k(n in 1usize..=32, f in 0usize..16, k in 1usize..32) {
            let cfg = QuorumConfig::new(n, f, Variant::Casss).with_k(k);
            if cfg.validate().is_ok() {
                let q = cfg.quorum_size(QuorumKind::Coded);
                prop_assert!(2 * q >= n + k);
                prop_assert!(q <= n - f);
            }
        }
    }
}
