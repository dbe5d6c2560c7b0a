//! Tensor-train collocation surrogates built by cross approximation.

pub mod cross;
pub mod schedule;
pub mod surrogate;
pub mod tt;

pub use cross::{eval_index, maxvol, tt_cross, CrossOptions, CrossResult};
pub use schedule::{degree_schedule, DegreeSchedule, ScheduleMode};
pub use surrogate::{build_tt_surrogate, TensorTrainSurrogate};
pub use tt::{Core, TensorTrain};
