//! On-manifold Gaussian mixtures and their moment-matched collapse.

use nalgebra::{DMatrix, DVector};

use crate::error::{contract, Result};
use crate::state::{GaussianBelief, ManifoldPoint};

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<(f64, GaussianBelief)>,
}

impl GaussianMixture {
    pub fn new(components: Vec<(f64, GaussianBelief)>) -> Result<Self> {
        let Some((_, first)) = components.first() else {
            return Err(contract("mixture needs at least one component"));
        };
        if components.iter().any(|(w, _)| !(*w >= 0.0)) {
            return Err(contract("mixture weights must be non-negative"));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(contract(format!("mixture weights sum to {total}, not 1")));
        }
        if components
            .iter()
            .any(|(_, b)| !b.mean.same_structure(&first.mean))
        {
            return Err(contract("mixture components must share state structure and side"));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[(f64, GaussianBelief)] {
        &self.components
    }
}

/// Collapses a mixture to one Gaussian. Components are expressed in the
/// tangent space of the heaviest component `X*` (lowest index on ties), the
/// mean is `X* (+) sum w_i (X_i (-) X*)`, and each component covariance is
/// carried to the new mean through the Jacobian of `X_i (-) mean`.
pub fn mixture_collapse(mix: &GaussianMixture) -> Result<GaussianBelief> {
    let comps = mix.components();
    let mut star = 0;
    for (i, (w, _)) in comps.iter().enumerate() {
        if *w > comps[star].0 {
            star = i;
        }
    }
    if comps.len() == 1 {
        return Ok(comps[0].1.clone());
    }
    let anchor = &comps[star].1.mean;
    let n = anchor.dof();
    let mut shift = DVector::zeros(n);
    for (w, b) in comps {
        shift += b.mean.ominus(anchor)? * *w;
    }
    let mean = anchor.oplus(&shift)?;

    let deltas = comps
        .iter()
        .map(|(_, b)| b.mean.ominus(&mean))
        .collect::<Result<Vec<_>>>()?;
    let mut dbar = DVector::zeros(n);
    for ((w, _), d) in comps.iter().zip(&deltas) {
        dbar += d * *w;
    }
    let mut cov = DMatrix::zeros(n, n);
    for ((w, b), d) in comps.iter().zip(&deltas) {
        let (j, _) = ManifoldPoint::ominus_jacobians(&b.mean, &mean)?;
        let e = d - &dbar;
        cov += (&j * &b.covariance * j.transpose() + &e * e.transpose()) * *w;
    }
    GaussianBelief::new(mean, cov)
}
