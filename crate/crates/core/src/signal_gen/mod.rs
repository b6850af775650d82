//! Synthetic received-symbol datasets: constellation mapping, RRC pulse
//! shaping, AWGN and ideal matched-filter reception.

pub mod channel;
pub mod dataset;
pub mod modulation;
pub mod pulse;

pub use channel::{apply_awgn, noise_variance};
pub use dataset::{
    example_seed, generate_dataset, generate_dataset_file, generate_example, manifest_path, Dataset, DatasetHeader,
    DatasetManifest, DatasetSpec, SignalExample,
};
pub use modulation::{map_symbols, ModulationClass, NUM_CLASSES};
pub use pulse::{design_rrc, matched_filter_downsample, pulse_shape, PulseShapeConfig};
