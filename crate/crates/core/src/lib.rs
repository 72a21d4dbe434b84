//! Link-level MU-MIMO OFDM primitives: resource grids and pilot patterns,
//! tapped-delay-line fading channels, LMMSE estimation and grouped-LMMSE
//! equalization, duality-based downlink precoding, exact LLR demapping and
//! LDPC coding.

pub mod blob;
pub mod channel;
pub mod coding;
pub mod downlink;
pub mod error;
pub mod estimator;
pub mod grid;
pub mod linalg;
pub mod testing;
pub mod txrx;
pub mod uplink;

pub use error::{Error, Result};

/// Initializes the global thread pool from the MULINK_THREADS env var.
/// Safe to call more than once; later calls are no-ops.
pub fn init_thread_pool() {
    use std::sync::Once;
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        if let Ok(n) = std::env::var("MULINK_THREADS") {
            if let Ok(n) = n.parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}
