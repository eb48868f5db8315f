//! Federated-averaging simulator over synthetic heterogeneous
//! logistic-regression clients, with oracle instrumentation for exact
//! sampling metrics.

mod io;
mod model;
mod runner;
mod synthetic;

pub use io::{load_task, save_task, task_from_str, task_to_string};
pub use model::{
    batch_loss_and_grad, evaluate, local_update, GlobalModel, LocalSteps, LocalUpdate, Split,
};
pub use runner::{run_experiment, ExperimentState, RunResult, TrainConfig};
pub use synthetic::{
    generate_synthetic, power_law_sizes, ClientData, SyntheticConfig, SyntheticTask,
};
