//! Stacked GRU/LSTM classifier: streaming inference, BPTT training,
//! gradient verification and weight files.

pub mod bptt;
pub mod cell;
pub mod gradcheck;
pub mod infer;
pub mod io;
pub mod scalar;
pub mod spec;
pub mod train;
pub mod weights;

pub use bptt::{Batch, BatchStats, Supervision};
pub use cell::{cell_step, LayerState, LayerView};
pub use gradcheck::{gradient_check, gradient_check_supervised, GradCheckReport};
pub use infer::{forward_step, forward_symbols, forward_trajectory, softmax, HiddenState, Softmax, SoftmaxTrajectory};
pub use spec::{CellKind, ModelSpec, INPUT_SIZE, OUTPUT_SIZE};
pub use weights::{EpochStats, ModelWeights, ParamLayout, Provenance, TensorInfo};
pub use train::{evaluate_dataset, train, train_from, TrainConfig};
pub use io::{load_weights, save_weights, WeightsManifest};
