//! Artifact IO: the bit-exact checkpoint container, the run
//! configuration document, metrics CSVs and PNG grids.

mod checkpoint;
mod config;
mod images;
mod metrics;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Entry, Payload, MAGIC, VERSION};
pub use config::{DataConfig, RunConfig};
pub use images::{nth_image, write_image_grid};
pub use metrics::{read_csv, CsvCell, MetricsWriter};
