//! Truncated multivariate Taylor polynomials (jets) for exact mixed
//! derivatives of kernel recursions at the origin.
//!
//! A jet is a dense coefficient grid over exponents `e <= r` componentwise,
//! where `r` is the target multi-derivative order. Supports at most 6
//! variables and total order 8; enough for every experiment and small enough
//! that dense truncated convolution is fast.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum JetError {
    #[error("jet supports at most {max} variables, got {got}")]
    TooManyVariables { max: usize, got: usize },
    #[error("jet total order limited to {max}, got {got}")]
    OrderTooHigh { max: usize, got: usize },
}

pub const MAX_VARS: usize = 6;
pub const MAX_TOTAL_ORDER: usize = 24;
const MAX_LEN: usize = 200_000;

/// Anisotropic truncation orders per variable (the target multi-index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JetShape {
    orders: Vec<u32>,
    strides: Vec<usize>,
    len: usize,
}

impl JetShape {
    pub fn new(orders: &[u32]) -> Result<JetShape, JetError> {
        if orders.len() > MAX_VARS {
            return Err(JetError::TooManyVariables {
                max: MAX_VARS,
                got: orders.len(),
            });
        }
        let total: u32 = orders.iter().sum();
        if total as usize > MAX_TOTAL_ORDER {
            return Err(JetError::OrderTooHigh {
                max: MAX_TOTAL_ORDER,
                got: total as usize,
            });
        }
        let mut strides = vec![0usize; orders.len()];
        let mut len = 1usize;
        for (i, &o) in orders.iter().enumerate() {
            strides[i] = len;
            len *= o as usize + 1;
        }
        if len > MAX_LEN {
            return Err(JetError::OrderTooHigh {
                max: MAX_TOTAL_ORDER,
                got: total as usize,
            });
        }
        Ok(JetShape {
            orders: orders.to_vec(),
            strides,
            len,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.orders.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn offset(&self, expo: &[u32]) -> usize {
        expo.iter()
            .zip(&self.strides)
            .map(|(&e, &s)| e as usize * s)
            .sum()
    }

    fn exponent_of(&self, mut idx: usize) -> Vec<u32> {
        let mut e = vec![0u32; self.orders.len()];
        for (i, &o) in self.orders.iter().enumerate() {
            e[i] = (idx % (o as usize + 1)) as u32;
            idx /= o as usize + 1;
        }
        e
    }
}

/// Truncated polynomial over a shared shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    shape: JetShape,
    coeffs: Vec<f64>,
}

impl Jet {
    pub fn zero(shape: &JetShape) -> Jet {
        Jet {
            shape: shape.clone(),
            coeffs: vec![0.0; shape.len()],
        }
    }

    pub fn constant(shape: &JetShape, c: f64) -> Jet {
        let mut j = Jet::zero(shape);
        j.coeffs[0] = c;
        j
    }

    /// The jet of the bare variable `var`.
    pub fn variable(shape: &JetShape, var: usize) -> Jet {
        let mut j = Jet::zero(shape);
        if shape.orders[var] >= 1 {
            let mut e = vec![0u32; shape.num_vars()];
            e[var] = 1;
            let off = shape.offset(&e);
            j.coeffs[off] = 1.0;
        }
        j
    }

    pub fn constant_term(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coefficient(&self, expo: &[u32]) -> f64 {
        self.coeffs[self.shape.offset(expo)]
    }

    pub fn add(&self, other: &Jet) -> Jet {
        debug_assert_eq!(self.shape, other.shape);
        Jet {
            shape: self.shape.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Jet) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            shape: self.shape.clone(),
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// Truncated product.
    pub fn mul(&self, other: &Jet) -> Jet {
        debug_assert_eq!(self.shape, other.shape);
        let shape = &self.shape;
        let mut out = Jet::zero(shape);
        for (ia, &ca) in self.coeffs.iter().enumerate() {
            if ca == 0.0 {
                continue;
            }
            let ea = shape.exponent_of(ia);
            for (ib, &cb) in other.coeffs.iter().enumerate() {
                if cb == 0.0 {
                    continue;
                }
                let eb = shape.exponent_of(ib);
                let mut fits = true;
                let mut e = vec![0u32; shape.num_vars()];
                for i in 0..shape.num_vars() {
                    let s = ea[i] + eb[i];
                    if s > shape.orders[i] {
                        fits = false;
                        break;
                    }
                    e[i] = s;
                }
                if fits {
                    out.coeffs[shape.offset(&e)] += ca * cb;
                }
            }
        }
        out
    }

    /// Compose a univariate series `f` (coefficients at the jet's constant
    /// term) with this jet: computes `f(a0 + (self - a0))` given the series
    /// of `f` at `a0 = self.constant_term()`.
    ///
    /// `series[j]` must be the j-th Taylor coefficient of `f` at `a0`, for
    /// `j = 0 ..= total order`.
    pub fn compose_series(&self, series: &[f64]) -> Jet {
        let shape = &self.shape;
        let mut hat = self.clone();
        hat.coeffs[0] = 0.0;
        // Horner: out = (((c_n) * hat + c_{n-1}) * hat + ...) + c_0
        let mut out = Jet::constant(shape, *series.last().unwrap_or(&0.0));
        for &c in series.iter().rev().skip(1) {
            out = out.mul(&hat);
            out.coeffs[0] += c;
        }
        out
    }

    /// Mixed derivative at 0 of the represented function for the full
    /// truncation order: coefficient times the factorial of each order.
    pub fn derivative_at_zero(&self) -> f64 {
        let shape = &self.shape;
        let top: Vec<u32> = shape.orders.clone();
        let mut fact = 1.0;
        for &o in &top {
            for k in 2..=o {
                fact *= k as f64;
            }
        }
        self.coefficient(&top) * fact
    }

    /// Contract the polynomial against per-variable moment tables:
    /// `sum over exponents e of coeff(e) * prod_v tables[v][e_v]`.
    pub fn project(&self, tables: &[Vec<f64>]) -> f64 {
        debug_assert_eq!(tables.len(), self.shape.num_vars());
        let mut total = 0.0;
        for (idx, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let e = self.shape.exponent_of(idx);
            let mut prod = c;
            for (v, &a) in e.iter().enumerate() {
                prod *= tables[v][a as usize];
            }
            total += prod;
        }
        total
    }
}
