use crate::tensor::{BackwardRule, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// Pairwise summation keeps reductions deterministic and accurate.
pub(crate) fn pairwise_sum<T: Scalar>(v: &[T]) -> T {
    if v.len() <= 64 {
        return v.iter().fold(T::zero(), |a, &b| a + b);
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

struct SumRule {
    x: Var,
    mean: bool,
}

impl<T: Scalar> BackwardRule<T> for SumRule {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(
        &self,
        tape: &Tape<T>,
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let shape = tape.shape(self.x).to_vec();
        let n: usize = shape.iter().product();
        let mut g = grad.data()[0];
        if self.mean {
            g /= T::lit(n as f64);
        }
        Ok(vec![Some(Tensor::full(shape, g))])
    }
}

struct SoftmaxRule {
    x: Var,
}

impl<T: Scalar> BackwardRule<T> for SoftmaxRule {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(
        &self,
        _tape: &Tape<T>,
        output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let d = *output.shape().last().unwrap_or(&1);
        let mut out = vec![T::zero(); output.numel()];
        for ((o, y), g) in out
            .chunks_mut(d)
            .zip(output.data().chunks(d))
            .zip(grad.data().chunks(d))
        {
            let dot = y.iter().zip(g).fold(T::zero(), |a, (&y, &g)| a + y * g);
            for ((o, &y), &g) in o.iter_mut().zip(y).zip(g) {
                *o = y * (g - dot);
            }
        }
        Ok(vec![Some(Tensor::new(output.shape().to_vec(), out)?)])
    }
}

impl<T: Scalar> Tape<T> {
    /// Sum of all elements as a one-element tensor of shape `[]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = pairwise_sum(self.value(x).data());
        Ok(self.push(Tensor::scalar(s), Box::new(SumRule { x, mean: false })))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = pairwise_sum(t.data()) / T::lit(t.numel() as f64);
        Ok(self.push(Tensor::scalar(s), Box::new(SumRule { x, mean: true })))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let Some(&d) = t.shape().last() else {
            return Err(Error::shape("softmax", "scalar input"));
        };
        if d == 0 {
            return Err(Error::shape("softmax", "empty last axis"));
        }
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(value, Box::new(SoftmaxRule { x })))
    }
}
