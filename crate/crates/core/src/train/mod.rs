//! Cross-entropy loss, closed-form gradients, finite-difference checks and
//! the staged full-batch gradient-descent schedule.

mod check;
mod grad;
mod precise;
mod schedule;

pub use check::{
    delta_w_diagnostic, fd_check, gih_agreement, misspecification, relative_error,
    DeltaWDiagnostic, FdReport, GihAgreement, GroupError,
};
pub use grad::{
    cache_dots, ce_loss, grad_a, grad_c, grad_w, loss_and_grad, loss_and_grad_cached,
    CachedDots, Gradient, Groups,
};
pub use schedule::{train, Stage, TrainingConfig, Trajectory, TrajectoryRecord};
