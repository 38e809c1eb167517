//! Process-guided neural networks for daily GPP prediction.

pub mod analysis;
pub mod autodiff;
pub mod couplings;
pub mod data;
pub mod experiments;
pub mod neural;
pub mod process_model;
