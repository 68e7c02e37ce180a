//! Central finite-difference verification of reverse-mode gradients.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Relative-error threshold for a coordinate to pass.
    pub tol: f64,
    /// Coordinates sampled per input tensor (all of them if smaller).
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, tol: 1e-4, samples_per_tensor: 8, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub failures: usize,
    pub tol: f64,
    /// Worst coordinate: (tensor index, flat coordinate, analytic, numeric).
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(1e-6);
    (a - n).abs() / denom
}

/// Compare analytic gradients against `(f(x+h) - f(x-h)) / 2h` on a random
/// coordinate sample of every input tensor.
///
/// `value_fn` must be a pure function of `inputs`; `analytic` are the
/// reverse-mode gradients at the base point, in the same order.
pub fn grad_check<E>(
    value_fn: impl Fn(&[Tensor<f64>]) -> Result<f64, E>,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, E> {
    assert_eq!(inputs.len(), analytic.len(), "one gradient per input tensor");
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        failures: 0,
        tol: cfg.tol,
        worst: None,
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for ti in 0..inputs.len() {
        let len = inputs[ti].len();
        if len == 0 {
            continue;
        }
        let coords: Vec<usize> = if len <= cfg.samples_per_tensor {
            (0..len).collect()
        } else {
            (0..cfg.samples_per_tensor).map(|_| rng.gen_range(0..len)).collect()
        };
        for coord in coords {
            let orig = work[ti].data()[coord];
            work[ti].data_mut()[coord] = orig + cfg.step;
            let plus = value_fn(&work)?;
            work[ti].data_mut()[coord] = orig - cfg.step;
            let minus = value_fn(&work)?;
            work[ti].data_mut()[coord] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let analytic_v = analytic[ti].data()[coord];
            let err = rel_err(analytic_v, numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((ti, coord, analytic_v, numeric));
            }
            if err > cfg.tol {
                report.failures += 1;
            }
        }
    }
    Ok(report)
}
