//! Model predictive control through a frozen dynamics model: the loss,
//! a direct plan optimizer, a trained control law, closed-loop runs and
//! their metrics.

pub mod closed_loop;
pub mod loss;
pub mod metrics;
pub mod optimize;
pub mod policy;
pub mod settings;

pub use closed_loop::{
    closed_loop, control_disturbances, control_window, Controller, DirectMpc, OnOffController, PolicyController,
    SolverStats, StepInput,
};
pub use loss::{loss_graph, mpc_loss, total_graph, LossBreakdown, MpcLossConfig};
pub use metrics::{
    control_metrics, energy_kwh, peak_load_reduction, temp_violation, ComfortBand, ControlMetrics, ControlReport,
    DayMetrics,
};
pub use optimize::{loss_and_gradient, optimize_controls, optimize_with_context, ControlPlan, OptimizerConfig};
pub use policy::{plan_loss, policy_loss, train_control_law, ControlLawNet, PolicyHyper, PolicyScenario};
pub use settings::MpcSettings;
