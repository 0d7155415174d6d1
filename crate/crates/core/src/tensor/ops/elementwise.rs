use std::borrow::Cow;

use crate::tensor::broadcast::{broadcast_shape, layout, reduce_to, Layout};
use crate::tensor::{BackwardRule, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// Elementwise operations reachable through [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Div,
    Relu,
    Sigmoid,
    Log,
    Exp,
    /// `a^b` with a one-element exponent `b`.
    Power,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// Materialize `t` broadcast to `out_shape`.
fn expand<'a, T: Scalar>(t: &'a Tensor<T>, out_shape: &[usize]) -> Cow<'a, [T]> {
    match layout(t.shape(), out_shape) {
        Layout::Same => Cow::Borrowed(t.data()),
        Layout::Cycle(p) => {
            let n: usize = out_shape.iter().product();
            debug_assert!(p > 0);
            Cow::Owned(t.data().iter().copied().cycle().take(n).collect())
        }
        Layout::General(map) => Cow::Owned(map.iter().map(|&i| t.data()[i]).collect()),
    }
}

struct BinaryRule {
    kind: Binary,
    a: Var,
    b: Var,
}

impl<T: Scalar> BackwardRule<T> for BinaryRule {
    fn name(&self) -> &'static str {
        match self.kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(
        &self,
        tape: &Tape<T>,
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let out_shape = output.shape();
        let (ta, tb) = (tape.value(self.a), tape.value(self.b));
        let g = grad.data();
        let finish = |buf: Vec<T>, src: &Tensor<T>| -> Result<Tensor<T>> {
            Tensor::new(src.shape().to_vec(), reduce_to(&buf, src.shape(), out_shape))
        };
        let mut ga = None;
        let mut gb = None;
        match self.kind {
            Binary::Add | Binary::Sub => {
                if needs[0] {
                    ga = Some(finish(g.to_vec(), ta)?);
                }
                if needs[1] {
                    let buf = if self.kind == Binary::Add {
                        g.to_vec()
                    } else {
                        g.iter().map(|&v| -v).collect()
                    };
                    gb = Some(finish(buf, tb)?);
                }
            }
            Binary::Mul => {
                if needs[0] {
                    let eb = expand(tb, out_shape);
                    ga = Some(finish(g.iter().zip(eb.iter()).map(|(&g, &b)| g * b).collect(), ta)?);
                }
                if needs[1] {
                    let ea = expand(ta, out_shape);
                    gb = Some(finish(g.iter().zip(ea.iter()).map(|(&g, &a)| g * a).collect(), tb)?);
                }
            }
            Binary::Div => {
                let eb = expand(tb, out_shape);
                if needs[0] {
                    ga = Some(finish(g.iter().zip(eb.iter()).map(|(&g, &b)| g / b).collect(), ta)?);
                }
                if needs[1] {
                    // d(a/b)/db = -(a/b)/b
                    let buf = g
                        .iter()
                        .zip(output.data())
                        .zip(eb.iter())
                        .map(|((&g, &q), &b)| -g * q / b)
                        .collect();
                    gb = Some(finish(buf, tb)?);
                }
            }
        }
        Ok(vec![ga, gb])
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary<T> {
    Neg,
    Relu,
    Sigmoid,
    Log,
    Exp,
    Sqrt,
    Scale(T),
    AddScalar(T),
    Powf(T),
    Clamp(T, T),
}

struct UnaryRule<T> {
    kind: Unary<T>,
    x: Var,
}

impl<T: Scalar> BackwardRule<T> for UnaryRule<T> {
    fn name(&self) -> &'static str {
        match self.kind {
            Unary::Neg => "neg",
            Unary::Relu => "relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Log => "log",
            Unary::Exp => "exp",
            Unary::Sqrt => "sqrt",
            Unary::Scale(_) => "scale",
            Unary::AddScalar(_) => "add_scalar",
            Unary::Powf(_) => "powf",
            Unary::Clamp(..) => "clamp",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(
        &self,
        tape: &Tape<T>,
        output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = tape.value(self.x).data();
        let y = output.data();
        let g = grad.data();
        let two = T::lit(2.0);
        let buf: Vec<T> = match self.kind {
            Unary::Neg => g.iter().map(|&g| -g).collect(),
            Unary::Relu => g
                .iter()
                .zip(x)
                .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                .collect(),
            Unary::Sigmoid => g.iter().zip(y).map(|(&g, &y)| g * y * (T::one() - y)).collect(),
            Unary::Log => g.iter().zip(x).map(|(&g, &x)| g / x).collect(),
            Unary::Exp => g.iter().zip(y).map(|(&g, &y)| g * y).collect(),
            Unary::Sqrt => g.iter().zip(y).map(|(&g, &y)| g / (two * y)).collect(),
            Unary::Scale(s) => g.iter().map(|&g| g * s).collect(),
            Unary::AddScalar(_) => g.to_vec(),
            Unary::Powf(p) => g
                .iter()
                .zip(x)
                .map(|(&g, &x)| {
                    if x == T::zero() && p < T::one() {
                        // Subgradient at the singular point.
                        T::zero()
                    } else {
                        g * p * x.powf(p - T::one())
                    }
                })
                .collect(),
            Unary::Clamp(lo, hi) => g
                .iter()
                .zip(x)
                .map(|(&g, &x)| if x >= lo && x <= hi { g } else { T::zero() })
                .collect(),
        };
        Ok(vec![Some(Tensor::new(grad.shape().to_vec(), buf)?)])
    }
}

/// `sum(a^b · ln a)` gradient for a one-element exponent.
struct PowerRule {
    a: Var,
    b: Var,
}

impl<T: Scalar> BackwardRule<T> for PowerRule {
    fn name(&self) -> &'static str {
        "power"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(
        &self,
        tape: &Tape<T>,
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let a = tape.value(self.a);
        let p = tape.value(self.b).data()[0];
        let g = grad.data();
        let ga = if needs[0] {
            let buf = g
                .iter()
                .zip(a.data())
                .map(|(&g, &x)| {
                    if x == T::zero() && p < T::one() {
                        T::zero()
                    } else {
                        g * p * x.powf(p - T::one())
                    }
                })
                .collect();
            Some(Tensor::new(a.shape().to_vec(), buf)?)
        } else {
            None
        };
        let gb = if needs[1] {
            let s = g
                .iter()
                .zip(a.data())
                .zip(output.data())
                .map(|((&g, &x), &y)| if x > T::zero() { g * y * x.ln() } else { T::zero() })
                .fold(T::zero(), |acc, v| acc + v);
            Some(Tensor::new(tape.shape(self.b).to_vec(), vec![s])?)
        } else {
            None
        };
        Ok(vec![ga, gb])
    }
}

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(ta.shape(), tb.shape())?;
        if kind == Binary::Div {
            if let Some(i) = tb.data().iter().position(|&v| v == T::zero()) {
                return Err(Error::Domain {
                    op: "div",
                    detail: format!("zero divisor at flat index {i}"),
                });
            }
        }
        let ea = expand(ta, &out_shape);
        let eb = expand(tb, &out_shape);
        let f = match kind {
            Binary::Add => |a: T, b: T| a + b,
            Binary::Sub => |a: T, b: T| a - b,
            Binary::Mul => |a: T, b: T| a * b,
            Binary::Div => |a: T, b: T| a / b,
        };
        let data = ea.iter().zip(eb.iter()).map(|(&a, &b)| f(a, b)).collect();
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Box::new(BinaryRule { kind, a, b })))
    }

    fn unary(&mut self, kind: Unary<T>, x: Var) -> Result<Var> {
        let t = self.value(x);
        let f: Box<dyn Fn(T) -> T> = match kind {
            Unary::Neg => Box::new(|v: T| -v),
            Unary::Relu => Box::new(|v: T| if v < T::zero() { T::zero() } else { v }),
            Unary::Sigmoid => Box::new(sigmoid),
            Unary::Log => {
                if let Some(i) = t.data().iter().position(|&v| v <= T::zero()) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("nonpositive input {} at flat index {i}", t.data()[i]),
                    });
                }
                Box::new(|v: T| v.ln())
            }
            Unary::Exp => Box::new(|v: T| v.exp()),
            Unary::Sqrt => {
                if let Some(i) = t.data().iter().position(|&v| v <= T::zero()) {
                    return Err(Error::Domain {
                        op: "sqrt",
                        detail: format!("nonpositive input at flat index {i}"),
                    });
                }
                Box::new(|v: T| v.sqrt())
            }
            Unary::Scale(s) => Box::new(move |v: T| v * s),
            Unary::AddScalar(s) => Box::new(move |v: T| v + s),
            Unary::Powf(p) => Box::new(move |v: T| v.powf(p)),
            Unary::Clamp(lo, hi) => Box::new(move |v: T| {
                if v < lo {
                    lo
                } else if v > hi {
                    hi
                } else {
                    v
                }
            }),
        };
        let value = t.map(f);
        Ok(self.push(value, Box::new(UnaryRule { kind, x })))
    }

    /// Dispatch by operation kind; `b` is required for binary kinds and
    /// `Power`, ignored otherwise.
    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Option<Var>) -> Result<Var> {
        let need_b = || b.ok_or_else(|| Error::invalid(format!("{kind:?} needs a second operand")));
        match kind {
            ElementwiseKind::Add => self.add(a, need_b()?),
            ElementwiseKind::Sub => self.sub(a, need_b()?),
            ElementwiseKind::Mul => self.mul(a, need_b()?),
            ElementwiseKind::Div => self.div(a, need_b()?),
            ElementwiseKind::Relu => self.relu(a),
            ElementwiseKind::Sigmoid => self.sigmoid(a),
            ElementwiseKind::Log => self.log(a),
            ElementwiseKind::Exp => self.exp(a),
            ElementwiseKind::Power => self.pow(a, need_b()?),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Rejects any zero divisor.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Neg, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    /// Rejects nonpositive inputs; loss code clamps before calling.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, x)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.unary(Unary::Scale(s), x)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Result<Var> {
        self.unary(Unary::AddScalar(s), x)
    }

    /// `s - x`.
    pub fn rsub_scalar(&mut self, s: T, x: Var) -> Result<Var> {
        let n = self.neg(x)?;
        self.add_scalar(n, s)
    }

    pub fn powf(&mut self, x: Var, p: T) -> Result<Var> {
        self.unary(Unary::Powf(p), x)
    }

    /// Elementwise power with a one-element exponent tensor.
    pub fn pow(&mut self, a: Var, b: Var) -> Result<Var> {
        let exponent = self.value(b);
        if exponent.numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "power",
                lhs: self.shape(a).to_vec(),
                rhs: exponent.shape().to_vec(),
            });
        }
        let p = exponent.data()[0];
        let value = self.value(a).map(|v| v.powf(p));
        Ok(self.push(value, Box::new(PowerRule { a, b })))
    }

    /// Clamp into `[lo, hi]`, passing NaN through; gradient passes where the input is inside.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        if lo > hi {
            return Err(Error::invalid(format!("clamp bounds {lo} > {hi}")));
        }
        self.unary(Unary::Clamp(lo, hi), x)
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
