//! FPGA place-and-route ground truth, congestion heat-map rendering, and a
//! conditional GAN that forecasts routing-channel utilization from
//! post-placement images.

pub mod arch;
pub mod cgan;
pub mod cli;
pub mod dataset;
pub mod eval;
pub mod netlist;
pub mod nn;
pub mod placer;
pub mod raster;
pub mod router;

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
