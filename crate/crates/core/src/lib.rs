pub mod audio_io;
pub mod cli_pipeline;
pub mod clustering;
pub mod dsp_features;
pub mod error;
pub mod feature_table;
pub mod metrics;
pub mod preprocess_select;
pub mod schema;
pub mod stats;
pub mod tempogram;

pub use error::{Error, Result};
