//! Seed derivation helpers.
//!
//! Every random stream in the crate is keyed by a base seed plus a string
//! tag (and optionally an index), so adding a new consumer of randomness
//! never shifts the streams of existing ones.

/// FNV-1a over the tag bytes, folded into the base seed, then finalized with
/// the splitmix64 mixer so nearby seeds decorrelate.
pub fn mix_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    splitmix64(base ^ h)
}

/// Like [`mix_seed`] but additionally keyed by an index (scene number,
/// epoch number, ...).
pub fn mix_seed_n(base: u64, tag: &str, n: u64) -> u64 {
    splitmix64(mix_seed(base, tag).wrapping_add(n.wrapping_mul(0x9e3779b97f4a7c15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
