use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{BackwardRule, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

struct LayerNormRule<T> {
    x: Var,
    gain: Var,
    shift: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BackwardRule<T> for LayerNormRule<T> {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.gain, self.shift]
    }

    fn backward(
        &self,
        tape: &Tape<T>,
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let gain = tape.value(self.gain).data();
        let d = gain.len();
        let inv_d = T::lit(1.0 / d as f64);
        let mut dx = needs[0].then(|| vec![T::zero(); grad.numel()]);
        let mut dg = vec![T::zero(); d];
        let mut db = vec![T::zero(); d];
        let mut dxhat = vec![T::zero(); d];
        for (r, (gy, xh)) in grad.data().chunks(d).zip(self.xhat.chunks(d)).enumerate() {
            for j in 0..d {
                dg[j] += gy[j] * xh[j];
                db[j] += gy[j];
                dxhat[j] = gy[j] * gain[j];
            }
            if let Some(dx) = dx.as_mut() {
                let m1 = dxhat.iter().fold(T::zero(), |a, &v| a + v) * inv_d;
                let m2 = dxhat.iter().zip(xh).fold(T::zero(), |a, (&g, &x)| a + g * x) * inv_d;
                let s = self.inv_std[r];
                for (j, o) in dx[r * d..(r + 1) * d].iter_mut().enumerate() {
                    *o = s * (dxhat[j] - m1 - xh[j] * m2);
                }
            }
        }
        Ok(vec![
            dx.map(|v| Tensor::new(grad.shape().to_vec(), v)).transpose()?,
            needs[1].then(|| Tensor::new(vec![d], dg)).transpose()?,
            needs[2].then(|| Tensor::new(vec![d], db)).transpose()?,
        ])
    }
}

struct DropoutRule<T> {
    x: Var,
    /// `0` for dropped elements, `1/(1-rate)` for survivors.
    mask: Vec<T>,
}

impl<T: Scalar> BackwardRule<T> for DropoutRule<T> {
    fn name(&self) -> &'static str {
        "dropout"
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
        let g = grad.data().iter().zip(&self.mask).map(|(&g, &m)| g * m).collect();
        Ok(vec![Some(Tensor::new(grad.shape().to_vec(), g)?)])
    }
}

impl<T: Scalar> Tape<T> {
    /// Normalise over the last axis, then apply an affine gain and shift.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        for p in [gain, shift] {
            if self.shape(p) != [d] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: vec![d],
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        if d == 0 {
            return Err(Error::shape("layer_norm", "empty last axis"));
        }
        let (g, b) = (self.value(gain).data(), self.value(shift).data());
        let inv_d = 1.0 / d as f64;
        let rows = self.value(x).numel() / d;
        let mut xhat = Vec::with_capacity(rows * d);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * d);
        for row in self.value(x).data().chunks(d) {
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() * inv_d;
            let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() * inv_d;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(T::lit(s));
            for (j, v) in row.iter().enumerate() {
                let xh = T::lit((v.as_f64() - mean) * s);
                xhat.push(xh);
                out.push(xh * g[j] + b[j]);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Box::new(LayerNormRule {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            }),
        ))
    }

    /// Inverted dropout; the identity outside training.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let t = self.value(x);
        let out = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(value, Box::new(DropoutRule { x, mask })))
    }
}
