//! Sequential gating ensemble network (SGEN) for multi-scale restoration of
//! low-quality images.
//!
//! The crate is self-contained: dense 4-D tensors with a reverse-mode tape,
//! strided convolution kernels, the gated merge unit and its ensemble
//! baselines, the generator/discriminator pair, adversarial and MSE losses,
//! Adam, the multi-scale degradation protocol, and PSNR/SSIM evaluation.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod restore;
pub mod tensor;
pub mod train;

pub use autodiff::{Activation, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Shape, Tensor};

/// Number of worker threads for data-parallel work, capped by `SGEN_THREADS`.
pub fn worker_threads() -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var("SGEN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        Some(n) if n > 0 => n,
        _ => available,
    }
}
