//! Stable RNG substream derivation.
//!
//! One root seed fans out to per-subsystem streams keyed by a label and an
//! index, so adding a subsystem or reordering draws in one place never
//! perturbs another. The mixing is platform-independent (FNV-1a over the
//! label, splitmix64 finalization).

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derives the seed for substream `label[index]` of `root`.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ fnv1a(label)) ^ index)
}
