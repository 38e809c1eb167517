use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::{sigmoid, Var};

/// Scalar arithmetic shared by plain `f64` evaluation and tape nodes.
///
/// Model code written against `Real` runs unchanged in fast value-only mode
/// (`f64`) and in differentiable mode (`Var`). Driver data stay `f64` in both.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same arithmetic context as `self`.
    fn lift(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;
    fn powf(self, c: f64) -> Self;
    fn min(self, other: Self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min_const(self, c: f64) -> Self;
    fn max_const(self, c: f64) -> Self;
    fn clamp(self, lo: f64, hi: f64) -> Self;
    fn relu(self) -> Self;
    /// `c - self`
    fn rsub(self, c: f64) -> Self;
    /// `c / self`
    fn rdiv(self, c: f64) -> Self;
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> Self {
        c
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        if self <= 0.0 {
            f64::NAN
        } else {
            f64::ln(self)
        }
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    fn powf(self, c: f64) -> Self {
        f64::powf(self, c)
    }
    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
    fn min_const(self, c: f64) -> Self {
        Real::min(self, c)
    }
    fn max_const(self, c: f64) -> Self {
        Real::max(self, c)
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        if self < lo {
            lo
        } else if self > hi {
            hi
        } else {
            self
        }
    }
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    fn rsub(self, c: f64) -> Self {
        c - self
    }
    fn rdiv(self, c: f64) -> Self {
        c / self
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        Var::value(&self)
    }
    fn lift(self, c: f64) -> Self {
        self.tape().constant(c)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn sin(self) -> Self {
        Var::sin(self)
    }
    fn cos(self) -> Self {
        Var::cos(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn sigmoid(self) -> Self {
        Var::sigmoid(self)
    }
    fn powf(self, c: f64) -> Self {
        Var::powf(self, c)
    }
    fn min(self, other: Self) -> Self {
        Var::min(self, other)
    }
    fn max(self, other: Self) -> Self {
        Var::max(self, other)
    }
    fn min_const(self, c: f64) -> Self {
        Var::min_const(self, c)
    }
    fn max_const(self, c: f64) -> Self {
        Var::max_const(self, c)
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        Var::clamp(self, lo, hi)
    }
    fn relu(self) -> Self {
        Var::relu(self)
    }
    fn rsub(self, c: f64) -> Self {
        Var::rsub(self, c)
    }
    fn rdiv(self, c: f64) -> Self {
        Var::rdiv(self, c)
    }
}
