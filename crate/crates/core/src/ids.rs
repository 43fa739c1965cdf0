//! Content-derived identifiers.

use serde::Serialize;
use uuid::Uuid;

/// Namespace for every name-based id this crate mints.
const NAMESPACE: Uuid = Uuid::from_u128(0x6c1f_4a52_93d1_4e0b_a2f7_5d0c_8e31_b9a4);

/// Name-based (v5) UUID over the given byte parts, each length-prefixed so
/// that `("ab", "c")` and `("a", "bc")` never collide.
pub fn name_uuid(kind: &str, parts: &[&[u8]]) -> String {
    let mut buf = Vec::with_capacity(64);
    buf.extend_from_slice(kind.as_bytes());
    for part in parts {
        buf.push(0x1f);
        buf.extend_from_slice(&(part.len() as u64).to_be_bytes());
        buf.extend_from_slice(part);
    }
    Uuid::new_v5(&NAMESPACE, &buf).to_string()
}

/// Name-based id over the canonical JSON encoding of `value`.
///
/// All record types hashed this way use ordered maps, so the encoding is stable.
pub fn content_id<T: Serialize>(kind: &str, value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("record serializes to JSON");
    name_uuid(kind, &[&bytes])
}
