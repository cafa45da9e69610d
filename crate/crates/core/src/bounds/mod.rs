//! Numerical evaluation of the generalisation-bound terms.
//!
//! Everything here is a closed-form expression or an estimator of one of
//! its inputs. The universal constants of the complexity bounds are not
//! known, so those values are order-level only.

mod complexity;
mod margin_fit;
mod rademacher;
mod assembly;

pub use complexity::{class_complexity_bound, FunctionClassSpec};
pub use margin_fit::{default_margin_grid, fit_weak_margin, MarginFit};
pub use rademacher::{empirical_rademacher, RademacherClass, RademacherEstimate};
pub use assembly::{
    assemble_prop1, assemble_theorem1, assemble_theorem2, compute_mr, lipschitz_probe, BoundInputs,
    BoundReport,
};
