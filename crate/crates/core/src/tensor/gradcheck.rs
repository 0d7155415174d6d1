//! Central finite-difference verification of recorded backward rules.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Coordinates sampled across all inputs (all of them if fewer exist).
    pub coords: usize,
    pub seed: u64,
    /// Floor added to the relative-error denominator.
    pub eps: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-3,
            tol: 1e-4,
            coords: 100,
            seed: 0,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub coords: Vec<CoordCheck>,
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// First coordinate where either gradient was NaN.
    pub nan_at: Option<(usize, usize)>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn summary(&self) -> String {
        match (self.nan_at, self.worst) {
            (Some((i, j)), _) => format!("NaN gradient at input {i} index {j}"),
            (None, Some((i, j))) => format!(
                "{} coords, max rel error {:.3e} at input {i} index {j}",
                self.coords.len(),
                self.max_rel_error
            ),
            (None, None) => "no coordinates checked".to_string(),
        }
    }
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out).item()
}

/// Compare reverse-mode gradients of the scalar program `f` against central
/// differences at `inputs`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if opts.h <= 0.0 || !opts.h.is_finite() {
        return Err(Error::invalid(format!(
            "finite-difference step must be > 0, got {}",
            opts.h
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::shape("grad_check", "program must produce a scalar"));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| grads.get(v).expect("inputs are trainable leaves"))
        .collect();

    let total: usize = inputs.iter().map(Tensor::numel).sum();
    let picks: Vec<usize> = if total <= opts.coords {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut v = sample(&mut rng, total, opts.coords).into_vec();
        v.sort_unstable();
        v
    };

    let mut report = GradCheckReport {
        coords: Vec::with_capacity(picks.len()),
        max_rel_error: 0.0,
        worst: None,
        nan_at: None,
        passed: true,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for flat in picks {
        let mut input = 0;
        let mut index = flat;
        while index >= inputs[input].numel() {
            index -= inputs[input].numel();
            input += 1;
        }
        let x0 = inputs[input].data()[index];
        probe[input].data_mut()[index] = x0 + opts.h;
        let fp = eval_scalar(&f, &probe)?;
        probe[input].data_mut()[index] = x0 - opts.h;
        let fm = eval_scalar(&f, &probe)?;
        probe[input].data_mut()[index] = x0;

        let numeric = (fp - fm) / (2.0 * opts.h);
        let analytic = analytic[input].data()[index];
        let rel_error = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + opts.eps);
        let nan = analytic.is_nan() || numeric.is_nan();
        let passed = !nan && rel_error <= opts.tol;
        if nan && report.nan_at.is_none() {
            report.nan_at = Some((input, index));
        }
        if !nan && (report.worst.is_none() || rel_error > report.max_rel_error) {
            report.max_rel_error = rel_error;
            report.worst = Some((input, index));
        }
        report.passed &= passed;
        report.coords.push(CoordCheck {
            input,
            index,
            analytic,
            numeric,
            rel_error,
            passed,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::BackwardRule;

    fn random_vec(n: usize, seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new([n], (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn sigmoid_sum_passes() {
        let x = random_vec(10, 1, -3.0, 3.0);
        let report = grad_check(
            |t, v| {
                let s = t.sigmoid(v[0])?;
                t.sum(s)
            },
            &[x],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "{}", report.summary());
        assert_eq!(report.coords.len(), 10);
    }

    #[test]
    fn relu_in_smooth_region_passes() {
        let x = random_vec(10, 2, 0.1, 2.0);
        let report = grad_check(
            |t, v| {
                let s = t.relu(v[0])?;
                t.sum(s)
            },
            &[x],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "{}", report.summary());
    }

    /// Squares its input but claims the derivative is `x` instead of `2x`.
    struct WrongSquare(Var);

    impl BackwardRule<f64> for WrongSquare {
        fn name(&self) -> &'static str {
            "wrong_square"
        }
        fn inputs(&self) -> Vec<Var> {
            vec![self.0]
        }
        fn backward(
            &self,
            tape: &Tape<f64>,
            _output: &Tensor<f64>,
            grad: &Tensor<f64>,
            _needs: &[bool],
        ) -> Result<Vec<Option<Tensor<f64>>>> {
            let x = tape.value(self.0);
            let g = x.data().iter().zip(grad.data()).map(|(x, g)| x * g).collect();
            Ok(vec![Some(Tensor::new(x.shape().to_vec(), g)?)])
        }
    }

    #[test]
    fn wrong_backward_rule_fails() {
        let x = random_vec(5, 3, 0.5, 1.5);
        let report = grad_check(
            |t, v| {
                let sq = t.value(v[0]).map(|x| x * x);
                let y = t.push(sq, Box::new(WrongSquare(v[0])));
                t.sum(y)
            },
            &[x],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed);
        assert!(report.max_rel_error > 0.1);
    }

    /// Emits NaN gradients.
    struct NanRule(Var);

    impl BackwardRule<f64> for NanRule {
        fn name(&self) -> &'static str {
            "nan"
        }
        fn inputs(&self) -> Vec<Var> {
            vec![self.0]
        }
        fn backward(
            &self,
            tape: &Tape<f64>,
            _output: &Tensor<f64>,
            _grad: &Tensor<f64>,
            _needs: &[bool],
        ) -> Result<Vec<Option<Tensor<f64>>>> {
            Ok(vec![Some(Tensor::full(tape.shape(self.0).to_vec(), f64::NAN))])
        }
    }

    #[test]
    fn nan_gradient_reports_coordinate() {
        let x = random_vec(4, 4, 0.5, 1.5);
        let report = grad_check(
            |t, v| {
                let val = t.value(v[0]).clone();
                let y = t.push(val, Box::new(NanRule(v[0])));
                t.sum(y)
            },
            &[x],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed);
        assert_eq!(report.nan_at, Some((0, 0)));
    }

    #[test]
    fn rejects_nonpositive_step() {
        let x = random_vec(2, 5, 0.0, 1.0);
        let opts = GradCheckOptions {
            h: 0.0,
            ..Default::default()
        };
        assert!(grad_check(|t, v| t.sum(v[0]), &[x], opts).is_err());
    }
}
