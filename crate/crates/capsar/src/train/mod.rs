//! Training: the batched objective, the optimizer, the epoch loop, and
//! checkpoint persistence.

pub mod adam;
pub mod checkpoint;
pub mod fit;
pub mod losses;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use fit::{fit, EpochRecord, FitOptions, FitResult};
pub use losses::{
    aspect_target, example_loss, example_loss_with_target, margin_loss, reconstruction_loss,
    total_loss, ExampleLoss, LossBreakdown,
};
