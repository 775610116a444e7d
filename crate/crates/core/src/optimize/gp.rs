use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::ascent::maximize_box;
use super::search::TrialRecord;

#[derive(Debug, Clone, PartialEq)]
pub enum LengthScale {
    Isotropic(f64),
    /// One length scale per input dimension.
    Ard(Vec<f64>),
}

/// Squared-exponential kernel `σ_f² exp(-‖(a - b) / l‖² / 2)` plus
/// observation noise `σ_n²` on the diagonal of training covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub signal_variance: f64,
    pub length_scale: LengthScale,
    pub noise_variance: f64,
}

impl KernelConfig {
    pub fn isotropic(signal_variance: f64, length_scale: f64, noise_variance: f64) -> Self {
        Self {
            signal_variance,
            length_scale: LengthScale::Isotropic(length_scale),
            noise_variance,
        }
    }

    pub fn ard(signal_variance: f64, length_scales: Vec<f64>, noise_variance: f64) -> Self {
        Self {
            signal_variance,
            length_scale: LengthScale::Ard(length_scales),
            noise_variance,
        }
    }

    /// Noise may be zero (exact interpolation); everything else must be
    /// strictly positive and finite.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.signal_variance) {
            return Err(Error::InvalidArgument(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        match &self.length_scale {
            LengthScale::Isotropic(l) if !positive(*l) => {
                return Err(Error::InvalidArgument(format!(
                    "length scale must be positive, got {l}"
                )));
            }
            LengthScale::Ard(ls) => {
                if ls.len() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        got: ls.len(),
                    });
                }
                if let Some(l) = ls.iter().find(|l| !positive(**l)) {
                    return Err(Error::InvalidArgument(format!(
                        "length scale must be positive, got {l}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn length_scales(&self, dim: usize) -> Vec<f64> {
        match &self.length_scale {
            LengthScale::Isotropic(l) => vec![*l; dim],
            LengthScale::Ard(ls) => ls.clone(),
        }
    }

    fn inv_sq(&self, dim: usize) -> Vec<f64> {
        self.length_scales(dim)
            .iter()
            .map(|l| 1.0 / (l * l))
            .collect()
    }
}

fn se(a: &[f64], b: &[f64], inv_sq: &[f64], sf2: f64) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(inv_sq)
        .map(|((x, y), w)| (x - y) * (x - y) * w)
        .sum();
    sf2 * (-0.5 * r2).exp()
}

pub fn kernel_eval(a: &[f64], b: &[f64], k: &KernelConfig) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    k.validate(a.len())?;
    Ok(se(a, b, &k.inv_sq(a.len()), k.signal_variance))
}

/// Noise-free kernel matrix of a point set.
pub fn kernel_matrix(xs: &[Vec<f64>], k: &KernelConfig) -> Result<DMatrix<f64>> {
    let d = xs.first().map_or(0, Vec::len);
    if let Some(x) = xs.iter().find(|x| x.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: x.len(),
        });
    }
    k.validate(d)?;
    let w = k.inv_sq(d);
    let n = xs.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        se(&xs[i], &xs[j], &w, k.signal_variance)
    }))
}

/// Relative diagonal jitter tried in turn when a factorization fails.
const JITTER: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

/// Posterior prediction with input gradients of mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
    pub mean_grad: Vec<f64>,
    pub variance_grad: Vec<f64>,
}

/// Constant level the posterior reverts to far from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorMean {
    /// Mean of the observed targets.
    #[default]
    SampleMean,
    /// Lowest observed target. Unexplored regions are then assumed poor,
    /// which keeps expected improvement from favouring the box faces.
    Minimum,
}

/// `(offset, scale, standardised targets)`; the scale is the population
/// standard deviation, or 1 for constant targets.
fn standardize(targets: &[f64], prior: PriorMean) -> (f64, f64, DVector<f64>) {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let sd = (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 1e-12 { sd } else { 1.0 };
    let offset = match prior {
        PriorMean::SampleMean => mean,
        PriorMean::Minimum => targets.iter().cloned().fold(f64::INFINITY, f64::min),
    };
    let z = DVector::from_iterator(targets.len(), targets.iter().map(|t| (t - offset) / scale));
    (offset, scale, z)
}

/// Zero-mean GP on standardised targets. Predictions are mapped back to
/// target units, so the prior far from data is `(offset, σ_f² sd(y)²)`
/// with the offset chosen by [`PriorMean`].
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelConfig,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    offset: f64,
    scale: f64,
    inv_sq: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    pub fn fit(inputs: Vec<Vec<f64>>, targets: Vec<f64>, kernel: KernelConfig) -> Result<Self> {
        Self::fit_with_prior(inputs, targets, kernel, PriorMean::SampleMean)
    }

    pub fn fit_with_prior(
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        kernel: KernelConfig,
        prior: PriorMean,
    ) -> Result<Self> {
        let n = inputs.len();
        if n < 2 {
            return Err(Error::InsufficientTrials { needed: 2, have: n });
        }
        if targets.len() != n {
            return Err(Error::LengthMismatch {
                what: "targets",
                got: targets.len(),
                expected: n,
            });
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("targets must be finite".into()));
        }
        let k = kernel_matrix(&inputs, &kernel)?;
        if kernel.noise_variance == 0.0 {
            for i in 0..n {
                for j in 0..i {
                    if inputs[i] == inputs[j] {
                        return Err(Error::Factorization(format!(
                            "inputs {j} and {i} coincide and observation noise is zero"
                        )));
                    }
                }
            }
        }
        let (offset, scale, z) = standardize(&targets, prior);

        for rel in JITTER {
            let jitter = rel * kernel.signal_variance;
            let mut m = k.clone();
            for i in 0..n {
                m[(i, i)] += kernel.noise_variance + jitter;
            }
            if let Some(chol) = Cholesky::new(m) {
                let alpha = chol.solve(&z);
                if alpha.iter().all(|a| a.is_finite()) {
                    let inv_sq = kernel.inv_sq(inputs[0].len());
                    return Ok(Self {
                        kernel,
                        inputs,
                        targets,
                        offset,
                        scale,
                        inv_sq,
                        chol,
                        alpha,
                        jitter,
                    });
                }
            }
        }
        Err(Error::Factorization(format!(
            "kernel matrix of {n} points is not positive definite even with jitter {:e}",
            JITTER[JITTER.len() - 1] * kernel.signal_variance
        )))
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Target standardisation `(offset, sd)`.
    pub fn standardization(&self) -> (f64, f64) {
        (self.offset, self.scale)
    }

    /// Diagonal jitter added on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.inputs
                .iter()
                .map(|xi| se(x, xi, &self.inv_sq, self.kernel.signal_variance)),
        )
    }

    /// Posterior mean and latent variance at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check(x)?;
        let ks = self.cross(x);
        let mean = self.offset + self.scale * ks.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("non-singular factor");
        let var = (self.kernel.signal_variance - v.dot(&v)).max(0.0);
        Ok((mean, var * self.scale * self.scale))
    }

    pub fn predict_with_gradient(&self, x: &[f64]) -> Result<Prediction> {
        self.check(x)?;
        let d = self.dim();
        let ks = self.cross(x);
        let w = self.chol.solve(&ks);
        let mean = self.offset + self.scale * ks.dot(&self.alpha);
        let var = (self.kernel.signal_variance - ks.dot(&w)).max(0.0);
        let mut mean_grad = vec![0.0; d];
        let mut variance_grad = vec![0.0; d];
        for (i, xi) in self.inputs.iter().enumerate() {
            for m in 0..d {
                let dk = -ks[i] * (x[m] - xi[m]) * self.inv_sq[m];
                mean_grad[m] += self.alpha[i] * dk;
                variance_grad[m] -= 2.0 * w[i] * dk;
            }
        }
        let s2 = self.scale * self.scale;
        mean_grad.iter_mut().for_each(|g| *g *= self.scale);
        variance_grad.iter_mut().for_each(|g| *g *= s2);
        Ok(Prediction {
            mean,
            variance: var * s2,
            mean_grad,
            variance_grad,
        })
    }

    /// Log marginal likelihood of the standardised targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len() as f64;
        let z = DVector::from_iterator(
            self.len(),
            self.targets.iter().map(|t| (t - self.offset) / self.scale),
        );
        let logdet: f64 = self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        -0.5 * z.dot(&self.alpha) - logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Fits a GP to the successful trials (normalised inputs, objectives).
pub fn gp_fit(trials: &[TrialRecord], k: &KernelConfig) -> Result<GpModel> {
    let ok: Vec<&TrialRecord> = trials.iter().filter(|t| t.objective.is_some()).collect();
    GpModel::fit(
        ok.iter().map(|t| t.normalized.clone()).collect(),
        ok.iter().map(|t| t.objective.unwrap()).collect(),
        k.clone(),
    )
}

pub fn gp_predict(m: &GpModel, x: &[f64]) -> Result<(f64, f64)> {
    m.predict(x)
}

/// Kernel hyperparameter search by maximum marginal likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperFit {
    /// One length scale per dimension instead of a shared one.
    pub ard: bool,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub prior_mean: PriorMean,
}

impl Default for HyperFit {
    fn default() -> Self {
        Self {
            ard: true,
            restarts: 8,
            max_iter: 100,
            seed: 0,
            prior_mean: PriorMean::SampleMean,
        }
    }
}

// Log-space bounds for (σ_f², l, σ_n²) on standardised targets and unit inputs.
const LOG_SF2: (f64, f64) = (-4.605170185988091, 4.605170185988092); // [0.01, 100]
const LOG_L: (f64, f64) = (-4.605170185988091, 4.605170185988092); // [0.01, 100]
const LOG_SN2: (f64, f64) = (-13.815510557964274, 0.0); // [1e-6, 1]

struct LmlProblem {
    n: usize,
    d: usize,
    ard: bool,
    /// Per-dimension squared differences, row-major n×n each.
    sq: Vec<Vec<f64>>,
    z: DVector<f64>,
}

impl LmlProblem {
    fn new(xs: &[Vec<f64>], z: DVector<f64>, ard: bool) -> Self {
        let n = xs.len();
        let d = xs[0].len();
        let sq = (0..d)
            .map(|m| {
                let mut v = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        v[i * n + j] = (xs[i][m] - xs[j][m]).powi(2);
                    }
                }
                v
            })
            .collect();
        Self { n, d, ard, sq, z }
    }

    fn n_lengths(&self) -> usize {
        if self.ard {
            self.d
        } else {
            1
        }
    }

    /// θ = (ln σ_f², ln l..., ln σ_n²).
    fn eval(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let n = self.n;
        let sf2 = theta[0].exp();
        let nl = self.n_lengths();
        let inv: Vec<f64> = theta[1..=nl].iter().map(|t| (-2.0 * t).exp()).collect();
        let sn2 = theta[nl + 1].exp();

        let mut r2 = vec![0.0; n * n];
        for m in 0..self.d {
            let w = if self.ard { inv[m] } else { inv[0] };
            for (acc, s) in r2.iter_mut().zip(&self.sq[m]) {
                *acc += s * w;
            }
        }
        let kf: Vec<f64> = r2.iter().map(|r| sf2 * (-0.5 * r).exp()).collect();
        let mut k = DMatrix::from_row_slice(n, n, &kf);
        for i in 0..n {
            k[(i, i)] += sn2;
        }
        let chol = Cholesky::new(k)?;
        let alpha = chol.solve(&self.z);
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        let lml =
            -0.5 * self.z.dot(&alpha) - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        if !lml.is_finite() {
            return None;
        }
        let kinv = chol.inverse();
        // W = ααᵀ − K⁻¹; dL/dθ = tr(W dK/dθ) / 2.
        let mut wk = vec![0.0; n * n];
        let mut trace_w = 0.0;
        for i in 0..n {
            for j in 0..n {
                let w = alpha[i] * alpha[j] - kinv[(i, j)];
                wk[i * n + j] = w * kf[i * n + j];
                if i == j {
                    trace_w += w;
                }
            }
        }
        let mut grad = vec![0.0; nl + 2];
        grad[0] = 0.5 * wk.iter().sum::<f64>();
        if self.ard {
            for m in 0..self.d {
                grad[1 + m] =
                    0.5 * inv[m] * wk.iter().zip(&self.sq[m]).map(|(a, b)| a * b).sum::<f64>();
            }
        } else {
            grad[1] = 0.5 * wk.iter().zip(&r2).map(|(a, r)| a * r).sum::<f64>();
        }
        grad[nl + 1] = 0.5 * sn2 * trace_w;
        Some((lml, grad))
    }
}

fn kernel_from(theta: &[f64], ard: bool) -> KernelConfig {
    let nl = theta.len() - 2;
    let sf2 = theta[0].exp();
    let sn2 = theta[nl + 1].exp();
    if ard {
        KernelConfig::ard(sf2, theta[1..=nl].iter().map(|t| t.exp()).collect(), sn2)
    } else {
        KernelConfig::isotropic(sf2, theta[1].exp(), sn2)
    }
}

/// Fits kernel hyperparameters by multi-start marginal-likelihood ascent
/// and returns the model of the best start.
pub fn fit_hyperparameters(
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    opts: &HyperFit,
) -> Result<GpModel> {
    let n = inputs.len();
    if n < 2 {
        return Err(Error::InsufficientTrials { needed: 2, have: n });
    }
    let d = inputs[0].len();
    if let Some(x) = inputs.iter().find(|x| x.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: x.len(),
        });
    }
    if targets.len() != n {
        return Err(Error::LengthMismatch {
            what: "targets",
            got: targets.len(),
            expected: n,
        });
    }
    let (_, _, z) = standardize(&targets, opts.prior_mean);
    let problem = LmlProblem::new(&inputs, z, opts.ard);
    let nl = problem.n_lengths();

    let mut lo = vec![LOG_SF2.0];
    let mut hi = vec![LOG_SF2.1];
    lo.extend(std::iter::repeat_n(LOG_L.0, nl));
    hi.extend(std::iter::repeat_n(LOG_L.1, nl));
    lo.push(LOG_SN2.0);
    hi.push(LOG_SN2.1);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<Vec<f64>> = (0..opts.restarts.max(1))
        .map(|r| {
            if r == 0 {
                let mut t = vec![0.0];
                t.extend(std::iter::repeat_n(0.5f64.ln(), nl));
                t.push(1e-3f64.ln());
                t
            } else {
                let mut t = vec![rng.random_range(0.2f64.ln()..5.0f64.ln())];
                t.extend((0..nl).map(|_| rng.random_range(0.1f64.ln()..2.0f64.ln())));
                t.push(rng.random_range(1e-5f64.ln()..1e-1f64.ln()));
                t
            }
        })
        .collect();
    let results: Vec<(Vec<f64>, f64)> = starts
        .par_iter()
        .map(|s| maximize_box(|t| problem.eval(t), s, &lo, &hi, opts.max_iter, 1.0))
        .collect();

    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| results[b].1.total_cmp(&results[a].1).then(a.cmp(&b)));
    let mut last_err = None;
    for i in order {
        if !results[i].1.is_finite() {
            continue;
        }
        match GpModel::fit_with_prior(
            inputs.clone(),
            targets.clone(),
            kernel_from(&results[i].0, opts.ard),
            opts.prior_mean,
        ) {
            Ok(m) => return Ok(m),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| {
        Error::Factorization("no hyperparameter start produced a valid model".into())
    }))
}
