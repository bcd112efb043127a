use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Floating-point element type shared by the attention kernels and the
/// denoiser. `f32` is the storage type; `f64` is used for gradient checks.
pub trait Real:
    Float + FromPrimitive + Debug + Default + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
