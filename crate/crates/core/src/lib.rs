pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod dsp;
pub mod error;
mod io_util;
pub mod kv;
pub mod model;
pub mod optim;
pub mod stimuli;
pub mod tensor;
pub mod training;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use error::{Error, Result};
pub use io_util::atomic_write;
pub use model::{ModelConfig, PredNetModel};
pub use training::{TrainConfig, TrainOutcome};
