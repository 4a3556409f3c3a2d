//! Float math routed through `libm` so the crate builds without `std` and the
//! numerics are identical in both configurations.

#[inline]
pub fn sqrt(x: f32) -> f32 {
    libm::sqrtf(x)
}

#[inline]
pub fn exp(x: f32) -> f32 {
    libm::expf(x)
}

#[inline]
pub fn ln(x: f32) -> f32 {
    libm::logf(x)
}

#[inline]
pub fn abs(x: f32) -> f32 {
    libm::fabsf(x)
}

#[inline]
pub fn powi(x: f32, n: i32) -> f32 {
    libm::powf(x, n as f32)
}

/// Nearest integer, ties away from zero.
#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}
