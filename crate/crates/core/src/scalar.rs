use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating point element type of tensors and parameters: `f32` or `f64`.
///
/// Besides the arithmetic bounds this carries the little-endian byte codec
/// used by checkpoints, so a checkpoint written as `f64` is read back
/// bit-exactly.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Tag stored in checkpoint headers.
    const DTYPE: &'static str;
    /// Width of one encoded element.
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);

    /// Decodes one element; `bytes` must hold exactly `Self::BYTES` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// Converts an `f64` literal. Every `f64` is representable (possibly
    /// rounded) in both supported types, so this never fails.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(bytes);
        f64::from_le_bytes(buf)
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 4];
        buf.copy_from_slice(bytes);
        f32::from_le_bytes(buf)
    }
}
