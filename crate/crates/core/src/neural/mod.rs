//! Reverse-mode autodiff, layers and the Adam optimiser.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod params;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use layers::{
    gru_step, lstm_step, positive_linear, row, BoundGru, BoundLinear, BoundLstm, BoundPositiveLinear,
    Gru, Linear, Lstm, PositiveLinear,
};
pub use params::{Binder, GradMap, Parameterized};
pub use tape::{Gradients, Tape, Var};
