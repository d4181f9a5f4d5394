use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Real scalar used by the positional encodings and codebook clustering.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Default + Debug + Send + Sync + 'static
{
    /// Converts a count or coordinate; exact for the magnitudes used here.
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("finite conversion")
    }

    fn to_f32_lossy(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
