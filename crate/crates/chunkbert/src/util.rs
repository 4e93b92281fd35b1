//! Small shared helpers that do not belong to any one domain module.

/// 64-bit FNV-1a hash.
///
/// Used for vocabulary fingerprints in checkpoints and for deriving
/// content-dependent random seeds. Not cryptographic.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Derives a purpose-specific seed from a base seed and a label, so that
/// independent random streams (parameter init, shuffling, token selection)
/// never share state even when the user supplies a single seed.
pub(crate) fn sub_seed(base: u64, label: &str) -> u64 {
    fnv1a64(label.as_bytes()) ^ base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}
