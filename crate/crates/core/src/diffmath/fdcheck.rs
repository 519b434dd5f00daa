//! Central finite-difference verification of analytic gradients.

use super::tensor::Tensor;
use crate::rng::Stream;

/// Denominator floor for the relative error, so coordinates whose gradient
/// is essentially zero are judged on absolute error.
pub const FD_ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct FdOptions {
    pub step: f64,
    /// Number of distinct coordinates to probe; `None` probes all of them.
    pub coordinates: Option<usize>,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            coordinates: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// `(tensor, element)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl FdReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_ABS_FLOOR)
}

/// Compare `analytic` against central differences of `loss` around `params`.
pub fn finite_diff_check(
    params: &[Tensor],
    analytic: &[Tensor],
    loss: impl Fn(&[Tensor]) -> f64,
    opts: FdOptions,
) -> FdReport {
    let all: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(t, p)| (0..p.len()).map(move |i| (t, i)))
        .collect();
    let coords: Vec<(usize, usize)> = match opts.coordinates {
        Some(k) if k < all.len() => {
            // Partial Fisher-Yates: k distinct coordinates.
            let mut rng = Stream::derive(opts.seed, 0xfd);
            let mut all = all;
            for i in 0..k {
                let j = i + rng.index(all.len() - i);
                all.swap(i, j);
            }
            all.truncate(k);
            all
        }
        _ => all,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (t, i) in coords {
        let orig = work[t].data()[i];
        work[t].data_mut()[i] = orig + opts.step;
        let plus = loss(&work);
        work[t].data_mut()[i] = orig - opts.step;
        let minus = loss(&work);
        work[t].data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * opts.step);
        let a = analytic.get(t).map_or(0.0, |g| g.data()[i]);
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err > report.max_rel_error || err.is_nan() || report.worst.is_none() {
            report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            report.worst = Some((t, i));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{Activation, MlpParams, Tape};
    use std::sync::Arc;

    fn quad(p: &[Tensor]) -> f64 {
        p[0].data().iter().map(|w| w * w).sum()
    }

    #[test]
    fn quadratic_is_tight() {
        let p = vec![Tensor::vector(vec![0.3, -0.7, 1.1])];
        let g = vec![Tensor::vector(
            p[0].data().iter().map(|w| 2.0 * w).collect(),
        )];
        let r = finite_diff_check(&p, &g, quad, FdOptions::default());
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let p = vec![Tensor::vector(vec![0.3, -0.7, 1.1])];
        let mut g = vec![Tensor::vector(
            p[0].data().iter().map(|w| 2.0 * w).collect(),
        )];
        g[0].data_mut()[1] *= 2.0;
        let r = finite_diff_check(&p, &g, quad, FdOptions::default());
        assert!(r.max_rel_error > 0.1);
        assert_eq!(r.worst, Some((0, 1)));
    }

    #[test]
    fn sigmoid_mlp_gradients() {
        let net =
            MlpParams::init(&[3, 6, 5, 1], Activation::Sigmoid, Activation::Sigmoid, 4).unwrap();
        let x = Tensor::matrix(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let y: Arc<[f64]> = vec![0.0, 1.0, 1.0, 0.0].into();
        let loss_of = |p: &[Tensor]| {
            let mut n = net.clone();
            n.tensors_mut().clone_from_slice(p);
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let tr = n.forward_tape(&mut tape, xv).unwrap();
            let l = tape.mse(tr.output, y.clone()).unwrap();
            tape.value(l).item()
        };
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let tr = net.forward_tape(&mut tape, xv).unwrap();
        let l = tape.mse(tr.output, y.clone()).unwrap();
        let g = tape.backward(l).unwrap();
        let grads: Vec<Tensor> = tr
            .params
            .iter()
            .zip(net.tensors())
            .map(|(&v, t)| g.get_or_zeros(v, t.shape()))
            .collect();
        let r = finite_diff_check(net.tensors(), &grads, loss_of, FdOptions::default());
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
