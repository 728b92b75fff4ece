use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{bail, Result};

/// Pearson goodness-of-fit p-value of `observed` counts against `probs`.
/// Zero-probability bins must be empty (any hit gives p = 0) and carry no
/// degree of freedom.
pub fn chi_square_p(observed: &[u64], probs: &[f64]) -> Result<f64> {
    if observed.len() != probs.len() {
        bail!(Shape, "{} bins observed, {} probabilities", observed.len(), probs.len());
    }
    if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        bail!(Input, "probabilities must be finite and non-negative");
    }
    let n: u64 = observed.iter().sum();
    if n == 0 {
        bail!(Input, "no observations");
    }
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (&o, &p) in observed.iter().zip(probs) {
        if p == 0.0 {
            if o > 0 {
                return Ok(0.0);
            }
            continue;
        }
        let e = p * n as f64;
        stat += (o as f64 - e).powi(2) / e;
        bins += 1;
    }
    if bins < 2 {
        return Ok(1.0);
    }
    let dist = ChiSquared::new((bins - 1) as f64).expect("positive degrees of freedom");
    Ok(1.0 - dist.cdf(stat))
}
