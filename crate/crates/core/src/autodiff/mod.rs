//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records operations as they run. Calling [`Graph::backward`]
//! on a scalar node walks the record in reverse and returns [`Gradients`]
//! for every node. Graphs are single-use: record a fresh one per forward
//! pass.

mod graph;
mod tensor;

use thiserror::Error;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("invalid shape {0:?}: dimensions must be positive")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("conv2d: kernel {kernel:?} larger than input {input:?}")]
    KernelTooLarge { input: Vec<usize>, kernel: Vec<usize> },
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("{op}: argument {value} at flat index {index} outside the domain")]
    Domain { op: &'static str, index: usize, value: f64 },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{0}")]
    Contract(String),
}

/// Compares the reverse-mode gradient of `f` at `point` with central
/// differences of step `step`.
///
/// Returns the largest per-coordinate
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, AutodiffError>,
{
    if step <= 0.0 {
        return Err(AutodiffError::Contract(format!("grad_check step must be positive, got {step}")));
    }
    let mut g = Graph::new();
    let x = g.leaf(point.clone());
    let y = f(&mut g, x)?;
    let analytic = g.backward(y)?.get(x);

    let eval = |p: Tensor| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let x = g.leaf(p);
        let y = f(&mut g, x)?;
        Ok(g.value(y).item())
    };
    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
