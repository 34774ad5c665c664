//! Independent random streams derived from one master seed.
//!
//! Each component XORs the master seed with its own fixed tag, so adding a new
//! component never shifts the streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Teacher,
    Accumulate,
    Distill,
    Ipp,
    Shrink,
    Baseline,
    Screening,
    Evaluation,
}

impl Stream {
    pub const fn tag(self) -> u64 {
        match self {
            Stream::Init => 0x1A2B_0000_0000_0001,
            Stream::Teacher => 0x1A2B_0000_0000_0002,
            Stream::Accumulate => 0x1A2B_0000_0000_0003,
            Stream::Distill => 0x1A2B_0000_0000_0004,
            Stream::Ipp => 0x1A2B_0000_0000_0005,
            Stream::Shrink => 0x1A2B_0000_0000_0006,
            Stream::Baseline => 0x1A2B_0000_0000_0007,
            Stream::Screening => 0x1A2B_0000_0000_0008,
            Stream::Evaluation => 0x1A2B_0000_0000_0009,
        }
    }
}

pub fn derive(master: u64, stream: Stream) -> u64 {
    master ^ stream.tag()
}

pub fn rng(master: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, stream))
}
