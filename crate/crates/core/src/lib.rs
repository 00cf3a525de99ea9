//! Light-field image super-resolution with an EPI-based non-local Transformer.
//!
//! The crate is organized around five subsystems:
//!
//! - [`lf`]: 4D light-field containers, SAI<->EPI reshapes, disparity shearing,
//!   bicubic resampling, synthetic scene generation, and file I/O.
//! - [`tensor`]: a minimal dense-tensor engine with reverse-mode differentiation
//!   and a finite-difference oracle for gradient checking.
//! - [`net`]: the EPI Transformer network (stem, non-local cascading blocks,
//!   upsampling heads) with every ablation variant as a configuration switch.
//! - [`train`]: deterministic patch-based training with Adam and a stepped
//!   learning-rate schedule.
//! - [`eval`]: PSNR/SSIM with two-level aggregation, shear-robustness sweeps,
//!   per-perspective grids, and attention-map extraction.

pub mod config;
pub mod eval;
pub mod lf;
pub mod net;
pub mod tensor;
pub mod train;

/// Hex SHA-256 digest of a canonical config text, embedded in generated
/// text artifacts for provenance.
pub fn config_hash(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}
