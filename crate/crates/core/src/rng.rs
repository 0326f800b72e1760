//! Seed derivation.
//!
//! Every random stream in the crate is a [`ChaCha8Rng`] seeded from a `u64`.
//! Sub-streams are derived by hashing the parent seed together with a list of
//! tags using 64-bit FNV-1a followed by the SplitMix64 finalizer:
//!
//! ```text
//! h = FNV-1a(le_bytes(seed) ++ for each tag: le_bytes(len(tag)) ++ tag)
//! derived = splitmix64(h)
//! ```
//!
//! Tags are length-prefixed so `("ab", "c")` and `("a", "bc")` never collide.
//! Because each stream depends only on its own tags, adding a method or an
//! epsilon value to a sweep never changes the randomness of existing cells.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// A tag fed into [`derive_seed`].
#[derive(Debug, Clone, Copy)]
pub enum Tag<'a> {
    Str(&'a str),
    U64(u64),
    F64(f64),
}

impl Tag<'_> {
    fn write(&self, h: &mut u64) {
        match self {
            Tag::Str(s) => {
                fnv(h, &(s.len() as u64).to_le_bytes());
                fnv(h, s.as_bytes());
            }
            Tag::U64(v) => {
                fnv(h, &8u64.to_le_bytes());
                fnv(h, &v.to_le_bytes());
            }
            Tag::F64(v) => {
                // normalize -0.0 so it hashes like 0.0
                let v = if *v == 0.0 { 0.0 } else { *v };
                fnv(h, &8u64.to_le_bytes());
                fnv(h, &v.to_bits().to_le_bytes());
            }
        }
    }
}

fn fnv(h: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *h ^= u64::from(b);
        *h = h.wrapping_mul(FNV_PRIME);
    }
}

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a sequence of tags.
pub fn derive_seed(seed: u64, tags: &[Tag<'_>]) -> u64 {
    let mut h = FNV_OFFSET;
    fnv(&mut h, &seed.to_le_bytes());
    for t in tags {
        t.write(&mut h);
    }
    splitmix64(h)
}

/// Deterministic generator for a seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
