//! Subgraph-aware spectral calibrator.
//!
//! Nodes are softly routed to `K` prototypes; each prototype owns a
//! Chebyshev filter bank on the normalized Laplacian, and a node's output
//! mixes the filters by its routing weights. Training minimizes weighted
//! cross-entropy plus a smooth surrogate of the calibrated set size.

mod config;
mod layers;
mod loss;
mod params;
mod train;

pub use config::{HybridLossSpec, SsgncConfig};
pub use layers::{
    cheb_basis, cheb_basis_on_tape, dynamic_routing, filter_operator, route_on_tape, ss_conv, ss_conv_on_tape,
    ssgnc_forward, update_prototypes, ForwardPass, RoutingState,
};
pub use loss::{hybrid_loss, smooth_set_size, HybridLoss};
pub use params::SsgncParams;
pub use train::{calibrator_input, train_ssgnc, write_training_log, EpochLog, SsgncRun, TRAINING_LOG_HEADER};
