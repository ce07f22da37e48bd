//! Floating-point element types for embedding rows.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};
use rand::distributions::uniform::SampleUniform;

/// An embedding element: a float with a fixed little-endian byte encoding.
pub trait Scalar:
    Float + FromPrimitive + SampleUniform + Default + Debug + Send + Sync + 'static
{
    /// Encoded width in bytes.
    const BYTES: usize;

    fn put_le(self, out: &mut Vec<u8>);

    /// Decodes exactly [`Self::BYTES`] bytes.
    fn get_le(bytes: &[u8]) -> Self;

    /// Raw bit pattern, for bit-exact comparisons.
    fn bits(self) -> u64;
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn get_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    fn bits(self) -> u64 {
        u64::from(self.to_bits())
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn get_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

    fn bits(self) -> u64 {
        self.to_bits()
    }
}
