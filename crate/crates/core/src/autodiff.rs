//! Scalar reverse-mode automatic differentiation.
//!
//! Loss formulas are written once against the [`Scalar`] trait. Evaluating
//! them with `f64` gives plain values; evaluating them with [`Var`] records
//! every operation on a [`Tape`] so that [`Tape::gradient`] can sweep the
//! recorded graph backwards and return exact partial derivatives.
//!
//! ```
//! use diagram_sdf::autodiff::{Scalar, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = tape.var(4.0);
//! let r = (x * x + y * y).sqrt();
//! let grad = tape.gradient(r, 2);
//! assert_eq!(r.value(), 5.0);
//! assert!((grad[0] - 0.6).abs() < 1e-15);
//! assert!((grad[1] - 0.8).abs() < 1e-15);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed by the loss catalog.
pub trait Scalar:
    Copy
    + fmt::Debug
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
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn abs(self) -> Self;
    /// `atan2(self, x)`, matching `f64::atan2`.
    fn atan2(self, x: Self) -> Self;
    /// `max(0, self)`.
    fn relu(self) -> Self;

    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    fn value(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    fn relu(self) -> Self {
        self.max(0.0)
    }
}

// Up to two parents per node; unary nodes leave the second weight at zero.
#[derive(Clone, Copy, Debug)]
struct Node {
    parents: [usize; 2],
    weights: [f64; 2],
}

/// Records operations performed on [`Var`]s.
///
/// The first `n` calls to [`Tape::var`] are the independent variables whose
/// gradient [`Tape::gradient`] reports.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(capacity)),
        }
    }

    /// Drops every recorded node, keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A new leaf. Leaves created after the independent variables act as
    /// constants: their adjoints are accumulated but never reported.
    pub fn var(&self, value: f64) -> Var<'_> {
        let index = self.push(Node {
            parents: [0, 0],
            weights: [0.0, 0.0],
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    fn unary(&self, parent: usize, weight: f64, value: f64) -> Var<'_> {
        let index = self.push(Node {
            parents: [parent, parent],
            weights: [weight, 0.0],
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    fn binary(&self, a: usize, wa: f64, b: usize, wb: f64, value: f64) -> Var<'_> {
        let index = self.push(Node {
            parents: [a, b],
            weights: [wa, wb],
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// Gradient of `output` with respect to the first `n_inputs` leaves.
    pub fn gradient(&self, output: Var<'_>, n_inputs: usize) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; output.index + 1];
        adjoint[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                let w = node.weights[k];
                if w != 0.0 {
                    adjoint[node.parents[k]] += w * a;
                }
            }
        }
        adjoint.resize(n_inputs.max(adjoint.len()), 0.0);
        adjoint.truncate(n_inputs);
        adjoint
    }
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.index, self.value)
    }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.index
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.tape
            .binary(self.index, 1.0, rhs.index, 1.0, self.value + rhs.value)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.tape
            .binary(self.index, 1.0, rhs.index, -1.0, self.value - rhs.value)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.tape.binary(
            self.index,
            rhs.value,
            rhs.index,
            self.value,
            self.value * rhs.value,
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.tape
            .binary(self.index, 1.0 / rhs.value, rhs.index, -q / rhs.value, q)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.tape.unary(self.index, -1.0, -self.value)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.tape.unary(self.index, 1.0, self.value + rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.tape.unary(self.index, 1.0, self.value - rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.tape.unary(self.index, rhs, self.value * rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.tape.unary(self.index, 1.0 / rhs, self.value / rhs)
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(self) -> f64 {
        self.value
    }

    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.tape.unary(self.index, 0.5 / s, s)
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.tape.unary(self.index, e, e)
    }

    fn abs(self) -> Self {
        let sign = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.tape.unary(self.index, sign, self.value.abs())
    }

    fn atan2(self, x: Self) -> Self {
        let (y, xv) = (self.value, x.value);
        let r2 = xv * xv + y * y;
        let (wy, wx) = if r2 > 0.0 {
            (xv / r2, -y / r2)
        } else {
            (0.0, 0.0)
        };
        self.tape.binary(self.index, wy, x.index, wx, y.atan2(xv))
    }

    fn relu(self) -> Self {
        if self.value > 0.0 {
            self.tape.unary(self.index, 1.0, self.value)
        } else {
            self.tape.unary(self.index, 0.0, 0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn mixed<S: Scalar>(v: &[S]) -> S {
        let (x, y, z) = (v[0], v[1], v[2]);
        let a = (x * y - z).abs() + (x / (y * y + 1.0)).exp();
        let b = (y - 0.3).relu().square() + z.atan2(x - 2.0);
        (a * b + (x * x + z * z).sqrt()) * 0.5 - (-y)
    }

    #[test]
    fn gradient_of_mixed_expression_matches_finite_differences() {
        let x = [0.7, -1.3, 0.4];
        let tape = Tape::new();
        let vars: Vec<Var> = x.iter().map(|&v| tape.var(v)).collect();
        let out = mixed(&vars);
        assert!((out.value() - mixed(&x)).abs() < 1e-14);
        let g = tape.gradient(out, 3);
        let fd = central(|p| mixed(p), &x, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn constants_after_inputs_do_not_leak_into_gradient() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let c = tape.var(5.0);
        let y = x * c;
        assert_eq!(tape.gradient(y, 1), vec![5.0]);
    }

    #[test]
    fn reused_variable_accumulates() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = x * x * x;
        assert_eq!(tape.gradient(y, 1), vec![27.0]);
    }

    #[test]
    fn relu_and_abs_have_zero_slope_at_zero() {
        let tape = Tape::new();
        let x = tape.var(0.0);
        let y = x.relu() + x.abs();
        assert_eq!(tape.gradient(y, 1), vec![0.0]);
    }

    #[test]
    fn clear_resets_the_tape() {
        let mut tape = Tape::new();
        {
            let x = tape.var(1.0);
            let _ = x + x;
        }
        assert_eq!(tape.len(), 2);
        tape.clear();
        assert!(tape.is_empty());
    }
}
