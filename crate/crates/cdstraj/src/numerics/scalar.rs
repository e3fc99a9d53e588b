use num_traits::Float;

/// Scalar type the numerics core is generic over.
///
/// `of` / `wide` convert against `f64`, which is the type used for literals,
/// RNG output, and anything reported to the user.
pub trait Real: Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static {
    /// Converts an `f64` literal into this scalar type.
    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("literal not representable")
    }

    /// Widens to `f64`.
    fn wide(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
