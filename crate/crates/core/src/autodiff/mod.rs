//! Reverse-mode automatic differentiation.
//!
//! Both the neural networks and the process model are expressed over this
//! engine, so gradients flow through the embedded physics exactly. Values are
//! double precision throughout.

mod ops;
mod real;
mod tape;

use thiserror::Error;

pub use real::Real;
pub use tape::{Block, Gradients, MapOp, Op, OpTag, ParamId, Tape, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("leaf value {value} is not finite")]
    NonFiniteLeaf { value: f64 },
    #[error("{op} expects {expected} argument(s), got {found}")]
    Arity {
        op: OpTag,
        expected: usize,
        found: usize,
    },
    #[error("{op} is undefined at {args:?}")]
    Domain { op: OpTag, args: Vec<f64> },
    #[error("{op} produced a non-finite value from {args:?}")]
    NonFinite { op: OpTag, args: Vec<f64> },
    #[error("node does not belong to this tape")]
    ForeignNode,
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

/// Largest relative disagreement between the tape gradient and central
/// differences over all coordinates of `point`.
///
/// The per-coordinate error is `|fd - ad| / max(1, |ad|)`.
pub fn finite_difference_check<F, E>(f: F, point: &[f64], step: f64) -> Result<f64, E>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, E>,
    E: From<AdError>,
{
    if !(step > 0.0) {
        return Err(AdError::InvalidStep(step).into());
    }
    let tape = Tape::new();
    let vars = point
        .iter()
        .map(|&x| tape.leaf(x, true))
        .collect::<Result<Vec<_>, _>>()?;
    let root = f(&tape, &vars)?;
    let grads = tape.backward(&root)?;
    let analytic: Vec<f64> = vars
        .iter()
        .map(|v| grads.wrt(v).unwrap_or(0.0))
        .collect();

    let eval = |x: &[f64]| -> Result<f64, E> {
        let tape = Tape::new();
        let vars = x
            .iter()
            .map(|&v| tape.leaf(v, true))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(f(&tape, &vars)?.value())
    };

    let mut worst = 0.0_f64;
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let up = eval(&probe)?;
        probe[i] = point[i] - step;
        let down = eval(&probe)?;
        probe[i] = point[i];
        let numeric = (up - down) / (2.0 * step);
        let err = (numeric - analytic[i]).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
