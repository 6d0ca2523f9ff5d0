//! Benchmark object payloads.
//!
//! Every written value has a unique non-zero id. Its object is the id in
//! big-endian followed by a pattern derived from the id, so a reader can tell
//! which write it observed and whether the bytes are intact. Id 0 is the
//! initial empty object.

/// Object bytes for value `id`, at least 8 bytes long.
pub fn object_bytes(id: u64, size: usize) -> Vec<u8> {
    let size = size.max(8);
    let mut out = Vec::with_capacity(size);
    out.extend_from_slice(&id.to_be_bytes());
    let mut x = id.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    while out.len() < size {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        out.push(x as u8);
    }
    out
}

/// Value id of an object, or `None` when the bytes are not a well-formed object.
pub fn object_id(bytes: &[u8]) -> Option<u64> {
    if bytes.is_empty() {
        return Some(0);
    }
    if bytes.len() < 8 {
        return None;
    }
    let id = u64::from_be_bytes(bytes[..8].try_into().unwrap());
    (id != 0 && object_bytes(id, bytes.len()) == bytes).then_some(id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_tamper_detection() {
        for size in [1, 8, 9, 1000] {
            let b = object_bytes(42, size);
            assert_eq!(b.len(), size.max(8));
            assert_eq!(object_id(&b), Some(42));
        }
        let mut b = object_bytes(7, 64);
        b[40] ^= 1;
        assert_eq!(object_id(&b), None);
        assert_eq!(object_id(&[]), Some(0));
        assert_eq!(object_id(&[0; 16]), None);
    }
}
