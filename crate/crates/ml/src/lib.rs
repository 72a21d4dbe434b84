//! Learned receiver components: CNN-predicted channel-estimation error
//! statistics with a power-decay template, per-RE downlink variance
//! prediction, a grid-wide demapper correction, and end-to-end training
//! against the transmitted bits.

pub mod cnn;
pub mod features;
pub mod graph_demap;
pub mod params;
pub mod receiver_dl;
pub mod receiver_ul;
pub mod template;
pub mod train;

pub use params::{DownlinkParams, MlArch, UplinkParams};
pub use receiver_dl::{downlink_forward, DlMlOutput, DlRgInput};
pub use receiver_ul::{uplink_forward, MlScheme, UlMlOutput, UlRgInput};
pub use train::{train_downlink, train_uplink, TrainConfig, TrainLogRow};
