//! Keyed-MAC primitives shared by the cellular authentication and the token
//! layer. Everything is built on HMAC-SHA256 with domain-separation suffixes,
//! standing in for the operator-specific key derivation a production HSS
//! would run.

use hmac::{Hmac, Mac};
use sha2::Sha256;

type HmacSha256 = Hmac<Sha256>;

/// HMAC-SHA256 over `data` with `key`, full 32-byte tag.
pub fn mac(key: &[u8], data: &[u8]) -> [u8; 32] {
    let mut m = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    m.update(data);
    m.finalize().into_bytes().into()
}

/// Expected response for a challenge: first 8 bytes of
/// `MAC(k, rand || "res")`.
pub fn derive_res(k: &[u8], rand: &[u8; 16]) -> [u8; 8] {
    let mut data = Vec::with_capacity(16 + 3);
    data.extend_from_slice(rand);
    data.extend_from_slice(b"res");
    let full = mac(k, &data);
    full[..8].try_into().unwrap()
}

/// Network authentication token: first 16 bytes of
/// `MAC(k, rand || sqn_be || "autn")`. Lets the subscriber confirm the
/// challenge originated from its home operator and covers the sequence
/// number against replay.
pub fn derive_autn(k: &[u8], rand: &[u8; 16], sqn: u64) -> [u8; 16] {
    let mut data = Vec::with_capacity(16 + 8 + 4);
    data.extend_from_slice(rand);
    data.extend_from_slice(&sqn.to_be_bytes());
    data.extend_from_slice(b"autn");
    let full = mac(k, &data);
    full[..16].try_into().unwrap()
}

/// Constant-shape comparison helper. Timing is irrelevant in the virtual
/// clock but keeping a single comparison point makes the checks auditable.
pub fn tags_equal(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
