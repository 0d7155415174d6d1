use crate::tensor::{strides, BackwardRule, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

struct ReshapeRule {
    x: Var,
}

impl<T: Scalar> BackwardRule<T> for ReshapeRule {
    fn name(&self) -> &'static str {
        "reshape"
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
        Ok(vec![Some(grad.reshape(tape.shape(self.x).to_vec())?)])
    }
}

struct PermuteRule {
    x: Var,
    inverse: Vec<usize>,
}

impl<T: Scalar> BackwardRule<T> for PermuteRule {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(
        &self,
        _tape: &Tape<T>,
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(permute_tensor(grad, &self.inverse))])
    }
}

struct ConcatRule {
    parts: Vec<Var>,
    axis: usize,
}

impl<T: Scalar> BackwardRule<T> for ConcatRule {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn inputs(&self) -> Vec<Var> {
        self.parts.clone()
    }

    fn backward(
        &self,
        tape: &Tape<T>,
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let shape = output.shape();
        let outer: usize = shape[..self.axis].iter().product();
        let inner: usize = shape[self.axis + 1..].iter().product();
        let total = shape[self.axis] * inner;
        let mut offset = 0;
        let mut res = Vec::with_capacity(self.parts.len());
        for (&p, &need) in self.parts.iter().zip(needs) {
            let ps = tape.shape(p);
            let width = ps[self.axis] * inner;
            if need {
                let mut buf = Vec::with_capacity(outer * width);
                for o in 0..outer {
                    let start = o * total + offset;
                    buf.extend_from_slice(&grad.data()[start..start + width]);
                }
                res.push(Some(Tensor::new(ps.to_vec(), buf)?));
            } else {
                res.push(None);
            }
            offset += width;
        }
        Ok(res)
    }
}

pub(crate) fn permute_tensor<T: Scalar>(t: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let shape = t.shape();
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    // Stride of each output axis within the input buffer.
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = t.numel();
    let mut out = Vec::with_capacity(n);
    if rank == 0 || n == 0 {
        return Tensor::new(out_shape, t.data().to_vec()).expect("permute shape");
    }
    let data = t.data();
    let last = rank - 1;
    let inner = out_shape[last];
    let inner_stride = src_strides[last];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let rows = n / inner;
    for _ in 0..rows {
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner]);
        } else {
            out.extend((0..inner).map(|j| data[base + j * inner_stride]));
        }
        // Advance the multi-index over all axes but the last.
        for d in (0..last).rev() {
            idx[d] += 1;
            base += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permute shape")
}

impl<T: Scalar> Tape<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape.to_vec())?;
        Ok(self.push(value, Box::new(ReshapeRule { x })))
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let rank = t.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(
                "permute",
                format!("{perm:?} is not a permutation of {rank} axes"),
            ));
        }
        let value = permute_tensor(t, perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(self.push(value, Box::new(PermuteRule { x, inverse })))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("concat of zero tensors"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let width = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * width..(o + 1) * width]);
            }
        }
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(
            value,
            Box::new(ConcatRule {
                parts: parts.to_vec(),
                axis,
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_arithmetic() {
        let t = Tensor::<f64>::new([2, 3, 4], (0..24).map(|v| v as f64).collect()).unwrap();
        let p = permute_tensor(&t, &[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(p.at(&[c, a, b]), t.at(&[a, b, c]));
                }
            }
        }
    }

    #[test]
    fn concat_channels() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_f64([1, 1, 2], &[1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::from_f64([1, 2, 2], &[3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[1, 3, 2]);
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(tape.concat(&[a, b], 2).is_err());
        assert!(tape.permute(a, &[0, 0, 1]).is_err());
    }
}
