//! Arithmetic on [`Var`] with exact local partials.
//!
//! Kink convention: `max`/`min` route the derivative to the first argument on
//! exact ties, `clamp` passes 1 on the closed interval `[lo, hi]`, and
//! `relu(0)` has derivative 0.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::{domain_error, sigmoid, Op, OpTag, Var};

impl<'t> Var<'t> {
    pub fn exp(self) -> Var<'t> {
        let v = self.value().exp();
        self.unary(OpTag::Exp, v, v)
    }

    pub fn ln(self) -> Var<'t> {
        let x = self.value();
        if let Some(err) = domain_error(Op::Log, &[x]) {
            return self.poisoned(err, OpTag::Log, &[self.id() as u32]);
        }
        self.unary(OpTag::Log, x.ln(), 1.0 / x)
    }

    pub fn sin(self) -> Var<'t> {
        let x = self.value();
        self.unary(OpTag::Sin, x.sin(), x.cos())
    }

    pub fn cos(self) -> Var<'t> {
        let x = self.value();
        self.unary(OpTag::Cos, x.cos(), -x.sin())
    }

    pub fn tanh(self) -> Var<'t> {
        let y = self.value().tanh();
        self.unary(OpTag::Tanh, y, 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let y = sigmoid(self.value());
        self.unary(OpTag::Sigmoid, y, y * (1.0 - y))
    }

    pub fn relu(self) -> Var<'t> {
        let x = self.value();
        if x > 0.0 {
            self.unary(OpTag::Relu, x, 1.0)
        } else {
            self.unary(OpTag::Relu, 0.0, 0.0)
        }
    }

    /// `self^exponent` for a node exponent; the base must be positive.
    pub fn pow(self, exponent: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), exponent.value());
        if let Some(err) = domain_error(Op::Pow, &[a, b]) {
            return self.poisoned(err, OpTag::Pow, &[self.id() as u32, exponent.id() as u32]);
        }
        let v = a.powf(b);
        self.binary(exponent, OpTag::Pow, v, b * a.powf(b - 1.0), v * a.ln())
    }

    /// `self^c` for a constant exponent. A zero base is allowed when `c >= 1`.
    pub fn powf(self, c: f64) -> Var<'t> {
        let a = self.value();
        if a < 0.0 || (a == 0.0 && c < 1.0) || !c.is_finite() {
            return self.poisoned(
                super::AdError::Domain {
                    op: OpTag::Pow,
                    args: vec![a, c],
                },
                OpTag::Pow,
                &[self.id() as u32],
            );
        }
        self.unary(OpTag::Pow, a.powf(c), c * a.powf(c - 1.0))
    }

    pub fn max(self, other: Var<'t>) -> Var<'t> {
        if self.value() >= other.value() {
            self.binary(other, OpTag::Max, self.value(), 1.0, 0.0)
        } else {
            self.binary(other, OpTag::Max, other.value(), 0.0, 1.0)
        }
    }

    pub fn min(self, other: Var<'t>) -> Var<'t> {
        if self.value() <= other.value() {
            self.binary(other, OpTag::Min, self.value(), 1.0, 0.0)
        } else {
            self.binary(other, OpTag::Min, other.value(), 0.0, 1.0)
        }
    }

    pub fn max_const(self, c: f64) -> Var<'t> {
        if self.value() >= c {
            self.unary(OpTag::Max, self.value(), 1.0)
        } else {
            self.unary(OpTag::Max, c, 0.0)
        }
    }

    pub fn min_const(self, c: f64) -> Var<'t> {
        if self.value() <= c {
            self.unary(OpTag::Min, self.value(), 1.0)
        } else {
            self.unary(OpTag::Min, c, 0.0)
        }
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let x = self.value();
        if let Some(err) = domain_error(Op::Clamp { lo, hi }, &[x]) {
            return self.poisoned(err, OpTag::Clamp, &[self.id() as u32]);
        }
        if x < lo {
            self.unary(OpTag::Clamp, lo, 0.0)
        } else if x > hi {
            self.unary(OpTag::Clamp, hi, 0.0)
        } else {
            self.unary(OpTag::Clamp, x, 1.0)
        }
    }

    /// `c - self` as a single node.
    pub fn rsub(self, c: f64) -> Var<'t> {
        self.unary(OpTag::Sub, c - self.value(), -1.0)
    }

    /// `c / self` as a single node.
    pub fn rdiv(self, c: f64) -> Var<'t> {
        let x = self.value();
        if let Some(err) = domain_error(Op::Div, &[c, x]) {
            return self.poisoned(err, OpTag::Div, &[self.id() as u32]);
        }
        self.unary(OpTag::Div, c / x, -c / (x * x))
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, OpTag::Add, self.value() + rhs.value(), 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, OpTag::Sub, self.value() - rhs.value(), 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, OpTag::Mul, a * b, b, a)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        if let Some(err) = domain_error(Op::Div, &[a, b]) {
            return self.poisoned(err, OpTag::Div, &[self.id() as u32, rhs.id() as u32]);
        }
        self.binary(rhs, OpTag::Div, a / b, 1.0 / b, -a / (b * b))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(OpTag::Neg, -self.value(), -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(OpTag::Add, self.value() + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary(OpTag::Sub, self.value() - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary(OpTag::Mul, self.value() * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        let a = self.value();
        if let Some(err) = domain_error(Op::Div, &[a, rhs]) {
            return self.poisoned(err, OpTag::Div, &[self.id() as u32]);
        }
        self.unary(OpTag::Div, a / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.rsub(self)
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        rhs.rdiv(self)
    }
}
