//! Dense tensors, reverse-mode differentiation over a fixed primitive set,
//! a seeded random stream and a finite-difference gradient checker.

mod gradcheck;
mod graph;
mod params;
mod primitive;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, CoordinateCheck, GradCheckConfig, GradCheckReport, Objective};
pub use graph::{Eval, Graph};
pub use params::{ParamId, ParamStore};
pub use primitive::{Primitive, MIN_RESCALE_NORM};
pub use rng::RandomStream;
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{Precision, Tensor};

pub use primitive::{log_sum_exp, softmax};
