//! Registration networks: residual blocks, non-local links and the five
//! compared architectures.

mod attention;
mod blocks;
mod config;
mod model;

pub use attention::{mnl_link, snl_link, MnlOutput};
pub use blocks::{add_conv, res_down, res_up, ConvParams, ResDownParams, ResUpParams, LEAKY_SLOPE};
pub use config::{ArchConfig, ArchKind};
pub use model::{Layout, LinearParams, Model, Predictor, Trace};
