//! Labeled random substreams derived from one master seed.
//!
//! Every consumer of randomness (bank construction, client assignment,
//! dataset generation, prompt init, Monte Carlo, ...) gets its own stream
//! keyed by a purpose label. Streams are independent of the order in
//! which they are created, so adding a new consumer never perturbs the
//! draws of existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives the 32-byte seed for `label` under `master`.
///
/// The seed is SHA-256 over the little-endian master seed, a `/`
/// separator, and the label bytes.
pub fn stream_seed(master: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(b"/");
    h.update(label.as_bytes());
    h.finalize().into()
}

/// Returns the ChaCha8 generator for the labeled substream.
pub fn substream(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_seed(master, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_label_same_stream() {
        let a: Vec<u64> = (0..4).map(|_| 0u64).collect();
        let mut r1 = substream(7, "bank");
        let mut r2 = substream(7, "bank");
        let d1: Vec<u64> = a.iter().map(|_| r1.gen()).collect();
        let d2: Vec<u64> = a.iter().map(|_| r2.gen()).collect();
        assert_eq!(d1, d2);
    }

    #[test]
    fn labels_are_independent() {
        let mut r1 = substream(7, "bank");
        let mut r2 = substream(7, "assign");
        let d1: u64 = r1.gen();
        let d2: u64 = r2.gen();
        assert_ne!(d1, d2);
    }

    #[test]
    fn master_seed_separates_streams() {
        let mut r1 = substream(1, "data/train/0");
        let mut r2 = substream(2, "data/train/0");
        assert_ne!(r1.gen::<u64>(), r2.gen::<u64>());
    }

    #[test]
    fn seed_bytes_are_stable() {
        // Frozen so that stored run records stay reproducible across
        // refactors: sha256(le64(42) ++ "/" ++ "bank").
        let hex: String = stream_seed(42, "bank")
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        assert_eq!(
            hex,
            "8f1652507ce2bee1ea9cdfc12ab8a4dbfa164ff489bae9cf5746a16511dd358b"
        );
    }
}
