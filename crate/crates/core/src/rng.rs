//! Keyed random streams.
//!
//! Every stochastic event in the simulator draws from its own ChaCha8 stream
//! keyed by `(master_seed, purpose, index, device)`. The 32-byte ChaCha seed
//! is derived by folding the four key words through SplitMix64:
//!
//! ```text
//! h = mix(master ^ 0x5550_4359_434c_4544)
//! h = mix(h ^ purpose_code); h = mix(h ^ index); h = mix(h ^ device)
//! seed = mix(h + 1·G) || mix(h + 2·G) || mix(h + 3·G) || mix(h + 4·G)   (little endian)
//! ```
//!
//! where `mix` is the SplitMix64 finalizer and `G = 0x9e37_79b9_7f4a_7c15`.
//! Because a stream depends only on its key, results do not depend on thread
//! scheduling or on how many other streams were consumed before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const DOMAIN: u64 = 0x5550_4359_434c_4544;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    DataGen,
    Split,
    Init,
    Sampling,
    Stragglers,
    LocalSolver,
    OutputNoise,
    ObjectiveNoise,
    Probe,
}

impl Purpose {
    pub fn code(self) -> u64 {
        match self {
            Purpose::DataGen => 1,
            Purpose::Split => 2,
            Purpose::Init => 3,
            Purpose::Sampling => 4,
            Purpose::Stragglers => 5,
            Purpose::LocalSolver => 6,
            Purpose::OutputNoise => 7,
            Purpose::ObjectiveNoise => 8,
            Purpose::Probe => 9,
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn seed_bytes(master: u64, purpose: Purpose, index: u64, device: u64) -> [u8; 32] {
    let mut h = mix(master ^ DOMAIN);
    h = mix(h ^ purpose.code());
    h = mix(h ^ index);
    h = mix(h ^ device);
    let mut out = [0u8; 32];
    for (k, chunk) in out.chunks_exact_mut(8).enumerate() {
        let word = mix(h.wrapping_add(GOLDEN.wrapping_mul(k as u64 + 1)));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    out
}

/// Opens the stream for one `(master, purpose, index, device)` key.
pub fn stream(master: u64, purpose: Purpose, index: u64, device: u64) -> Stream {
    ChaCha8Rng::from_seed(seed_bytes(master, purpose, index, device))
}
