//! Complex geometric optics for one-dimensional nonlinear symmetric
//! hyperbolic systems `u_t + A(t,x,u) u_x + F(t,x,u) = 0`.
//!
//! The pipeline traces rays, integrates complex phases, solves projected
//! nonlinear transport for oscillatory profiles, assembles the approximate
//! solution `v = u0 + eps^p (U0 + eps U1)(phi/eps)` and measures every
//! asymptotic estimate by fitting log-log slopes over a ladder of `eps`.

pub mod assemble;
pub mod config;
pub mod error;
pub mod expr;
pub mod harness;
pub mod model;
pub mod multiplier;
pub mod phase;
pub mod pipeline;
pub mod profile;
pub mod reference;
pub mod report;
pub mod transport;

pub use error::CgoError;
pub use num_complex::Complex64 as C64;

pub(crate) fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
