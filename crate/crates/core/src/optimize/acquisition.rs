use statrs::function::erf::erfc;

use crate::error::Result;

use super::gp::GpModel;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement over `best` of a Gaussian `N(mu, sigma²)`, for
/// maximisation.
pub fn ei_value(mu: f64, sigma: f64, best: f64) -> f64 {
    let gain = mu - best;
    if !(sigma > 0.0) {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    (gain * cdf(z) + sigma * pdf(z)).max(0.0)
}

pub fn expected_improvement(m: &GpModel, x: &[f64], best: f64) -> Result<f64> {
    let (mu, var) = m.predict(x)?;
    Ok(ei_value(mu, var.sqrt(), best))
}

/// Expected improvement and its gradient in `x`.
pub fn expected_improvement_with_gradient(
    m: &GpModel,
    x: &[f64],
    best: f64,
) -> Result<(f64, Vec<f64>)> {
    let p = m.predict_with_gradient(x)?;
    let sigma = p.variance.sqrt();
    let gain = p.mean - best;
    if !(sigma > 1e-12) {
        let grad = if gain > 0.0 {
            p.mean_grad
        } else {
            vec![0.0; x.len()]
        };
        return Ok((gain.max(0.0), grad));
    }
    let z = gain / sigma;
    let (phi, big_phi) = (pdf(z), cdf(z));
    let grad = p
        .mean_grad
        .iter()
        .zip(&p.variance_grad)
        .map(|(dm, dv)| big_phi * dm + phi * dv / (2.0 * sigma))
        .collect();
    Ok(((gain * big_phi + sigma * phi).max(0.0), grad))
}
