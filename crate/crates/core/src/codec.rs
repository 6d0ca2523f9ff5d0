//! `(N, k)` systematic Reed-Solomon coding over GF(2^8).
//!
//! An object is zero-padded to a multiple of `k` bytes and split into `k` data
//! shards; `N - k` parity shards follow. Any `k` of the `N` elements recover
//! the object. Each element travels with the original object length so the
//! padding can be stripped after decoding.

use bytes::{BufMut, Bytes, BytesMut};
use reed_solomon_erasure::galois_8::ReedSolomon;

use crate::types::MAX_SERVERS;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("invalid code parameters N={n}, k={k}")]
    Params { n: usize, k: usize },
    #[error("cannot encode an empty object")]
    EmptyObject,
    #[error("{have} elements, need {need}")]
    InsufficientElements { have: usize, need: usize },
    #[error("elements disagree: {0}")]
    InconsistentElements(&'static str),
}

/// One server's share of an encoded object.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodedElement {
    /// Server position `0..N`.
    pub index: usize,
    pub bytes: Bytes,
    /// Length of the original object before padding.
    pub object_len: usize,
}

impl CodedElement {
    /// Wire form: 8-byte big-endian object length followed by the shard.
    pub fn to_bytes(&self) -> Bytes {
        let mut b = BytesMut::with_capacity(8 + self.bytes.len());
        b.put_u64(self.object_len as u64);
        b.extend_from_slice(&self.bytes);
        b.freeze()
    }

    pub fn from_bytes(index: usize, raw: &Bytes) -> Option<CodedElement> {
        if raw.len() < 8 {
            return None;
        }
        let object_len = u64::from_be_bytes(raw[..8].try_into().unwrap());
        Some(CodedElement {
            index,
            bytes: raw.slice(8..),
            object_len: usize::try_from(object_len).ok()?,
        })
    }
}

/// Size of each element for an object of `len` bytes.
pub fn element_len(len: usize, k: usize) -> usize {
    len.div_ceil(k)
}

/// Encoder/decoder for one `(N, k)` pair.
#[derive(Debug)]
pub struct Codec {
    n: usize,
    k: usize,
    rs: Option<ReedSolomon>,
}

impl Codec {
    pub fn new(n: usize, k: usize) -> Result<Codec, CodecError> {
        if k == 0 || k > n || n > MAX_SERVERS {
            return Err(CodecError::Params { n, k });
        }
        let rs = if n > k {
            Some(ReedSolomon::new(k, n - k).map_err(|_| CodecError::Params { n, k })?)
        } else {
            None
        };
        Ok(Codec { n, k, rs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn encode(&self, data: &[u8]) -> Result<Vec<CodedElement>, CodecError> {
        if data.is_empty() {
            return Err(CodecError::EmptyObject);
        }
        let size = element_len(data.len(), self.k);
        let mut shards: Vec<Vec<u8>> = (0..self.n)
            .map(|i| {
                let start = (i * size).min(data.len());
                let end = ((i + 1) * size).min(data.len());
                let mut shard = Vec::with_capacity(size);
                if i < self.k {
                    shard.extend_from_slice(&data[start..end]);
                }
                shard.resize(size, 0);
                shard
            })
            .collect();
        if let Some(rs) = &self.rs {
            rs.encode(&mut shards).expect("shard geometry is fixed by construction");
        }
        Ok(shards
            .into_iter()
            .enumerate()
            .map(|(index, s)| CodedElement { index, bytes: Bytes::from(s), object_len: data.len() })
            .collect())
    }

    pub fn decode(&self, elements: &[CodedElement]) -> Result<Vec<u8>, CodecError> {
        let mut slots: Vec<Option<Vec<u8>>> = vec![None; self.n];
        let mut have = 0;
        let mut geometry: Option<(usize, usize)> = None;
        for e in elements {
            if e.index >= self.n {
                return Err(CodecError::InconsistentElements("index out of range"));
            }
            let g = (e.bytes.len(), e.object_len);
            match geometry {
                None => geometry = Some(g),
                Some(prev) if prev != g => {
                    return Err(CodecError::InconsistentElements("length or object length mismatch"))
                }
                _ => {}
            }
            if slots[e.index].is_none() {
                slots[e.index] = Some(e.bytes.to_vec());
                have += 1;
            }
        }
        if have < self.k {
            return Err(CodecError::InsufficientElements { have, need: self.k });
        }
        let (size, object_len) = geometry.expect("at least k >= 1 elements");
        if size != element_len(object_len, self.k) || object_len == 0 {
            return Err(CodecError::InconsistentElements("element size does not match object length"));
        }
        if slots[..self.k].iter().any(Option::is_none) {
            let rs = self.rs.as_ref().expect("missing data shards imply parity exists");
            rs.reconstruct_data(&mut slots)
                .map_err(|_| CodecError::InconsistentElements("reconstruction failed"))?;
        }
        let mut out = Vec::with_capacity(size * self.k);
        for shard in slots.into_iter().take(self.k) {
            out.extend_from_slice(&shard.expect("data shards present after reconstruction"));
        }
        out.truncate(object_len);
        Ok(out)
    }
}
