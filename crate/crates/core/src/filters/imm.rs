//! Interacting multiple model filter with on-manifold mixing.

use nalgebra::{DMatrix, DVector};

use super::ekf::{correct_parts, ekf_predict};
use super::mixture::{mixture_collapse, GaussianMixture};
use super::CovarianceUpdate;
use crate::error::{contract, Result};
use crate::models::{ProcessModel, StampedInput, StampedMeasurement};
use crate::state::GaussianBelief;

#[derive(Debug, Clone, PartialEq)]
pub struct ImmBelief {
    pub mode_beliefs: Vec<GaussianBelief>,
    pub mode_probabilities: DVector<f64>,
    /// Row-stochastic: entry `(i, j)` is the probability of switching from
    /// mode `i` to mode `j`.
    pub transition: DMatrix<f64>,
}

impl ImmBelief {
    pub fn new(
        mode_beliefs: Vec<GaussianBelief>,
        mode_probabilities: DVector<f64>,
        transition: DMatrix<f64>,
    ) -> Result<Self> {
        let n = mode_beliefs.len();
        if n == 0 || mode_probabilities.len() != n || transition.shape() != (n, n) {
            return Err(contract("IMM needs N beliefs, N probabilities and an NxN transition matrix"));
        }
        if (mode_probabilities.sum() - 1.0).abs() > 1e-10 || mode_probabilities.iter().any(|p| *p < 0.0) {
            return Err(contract("mode probabilities must be non-negative and sum to 1"));
        }
        for row in transition.row_iter() {
            if (row.sum() - 1.0).abs() > 1e-10 || row.iter().any(|p| *p < 0.0) {
                return Err(contract("transition matrix rows must be stochastic"));
            }
        }
        Ok(Self {
            mode_beliefs,
            mode_probabilities,
            transition,
        })
    }

    pub fn modes(&self) -> usize {
        self.mode_beliefs.len()
    }
}

#[derive(Debug, Clone)]
pub struct ImmStep {
    pub belief: ImmBelief,
    /// Mode log-likelihoods of the measurement, when one was processed.
    pub log_likelihoods: Option<DVector<f64>>,
    /// Set when every mode likelihood is below the smallest positive double
    /// (or not finite) and the probabilities were left at their mixing values.
    /// Otherwise normalization runs in log space.
    pub likelihood_underflow: bool,
}

/// One IMM cycle: mixing, per-mode EKF predict (and correct), and mode
/// probability update.
pub fn imm_step(
    belief: &ImmBelief,
    models: &[&dyn ProcessModel],
    u: &StampedInput,
    meas: Option<&StampedMeasurement>,
    dt: f64,
) -> Result<ImmStep> {
    let n = belief.modes();
    if models.len() != n {
        return Err(contract(format!("IMM has {n} modes but {} models", models.len())));
    }
    let p = &belief.mode_probabilities;
    let pi = &belief.transition;
    let predicted_probs = DVector::from_fn(n, |j, _| (0..n).map(|i| pi[(i, j)] * p[i]).sum::<f64>());

    let mut beliefs = Vec::with_capacity(n);
    let mut log_lik = DVector::zeros(n);
    for j in 0..n {
        let mixed = if predicted_probs[j] > 0.0 {
            let comps = (0..n)
                .map(|i| (pi[(i, j)] * p[i] / predicted_probs[j], belief.mode_beliefs[i].clone()))
                .collect();
            mixture_collapse(&GaussianMixture::new(renormalized(comps))?)?
        } else {
            belief.mode_beliefs[j].clone()
        };
        let pred = ekf_predict(&mixed, models[j], u, dt)?;
        match meas {
            Some(m) => {
                let c = correct_parts(&pred, m, CovarianceUpdate::Standard)?;
                let z = &c.innovation;
                let maha = (z.transpose() * &c.innovation_inv * z)[0];
                let logdet = c.innovation_cov.determinant().ln();
                let k = z.len() as f64;
                log_lik[j] = -0.5 * (maha + logdet + k * (2.0 * std::f64::consts::PI).ln());
                beliefs.push(c.belief);
            }
            None => beliefs.push(pred),
        }
    }

    let mut underflow = false;
    let probs = if meas.is_some() {
        let terms = DVector::from_fn(n, |j, _| predicted_probs[j].ln() + log_lik[j]);
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let representable = log_lik.iter().any(|l| *l >= f64::MIN_POSITIVE.ln());
        if max.is_finite() && representable {
            let w = terms.map(|t| (t - max).exp());
            &w / w.sum()
        } else {
            log::warn!("all IMM mode likelihoods underflowed; keeping mixing probabilities");
            underflow = true;
            predicted_probs.clone()
        }
    } else {
        predicted_probs.clone()
    };
    Ok(ImmStep {
        belief: ImmBelief {
            mode_beliefs: beliefs,
            mode_probabilities: probs,
            transition: belief.transition.clone(),
        },
        log_likelihoods: meas.map(|_| log_lik),
        likelihood_underflow: underflow,
    })
}

/// Combined estimate: the mode beliefs collapsed with the mode probabilities.
pub fn imm_estimate(belief: &ImmBelief) -> Result<GaussianBelief> {
    let comps = belief
        .mode_probabilities
        .iter()
        .zip(&belief.mode_beliefs)
        .map(|(w, b)| (*w, b.clone()))
        .collect();
    mixture_collapse(&GaussianMixture::new(renormalized(comps))?)
}

fn renormalized(mut comps: Vec<(f64, GaussianBelief)>) -> Vec<(f64, GaussianBelief)> {
    let total: f64 = comps.iter().map(|(w, _)| w).sum();
    comps.iter_mut().for_each(|(w, _)| *w /= total);
    comps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::ekf_correct;
    use crate::models::{LinearProcess, MeasurementModel};
    use crate::state::ManifoldPoint;
    use std::sync::Arc;

    #[derive(Debug)]
    struct Direct;

    impl MeasurementModel for Direct {
        fn evaluate(&self, x: &ManifoldPoint) -> Result<DVector<f64>> {
            Ok(x.as_vector().unwrap().clone())
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn covariance(&self, _x: &ManifoldPoint) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_element(1, 1, 0.1))
        }
    }

    fn walk(q: f64) -> LinearProcess {
        LinearProcess::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1))
            .unwrap()
            .with_noise(DMatrix::from_element(1, 1, q))
            .unwrap()
    }

    fn start() -> GaussianBelief {
        GaussianBelief::new(ManifoldPoint::from_slice(&[0.0]).with_stamp(0.0), DMatrix::identity(1, 1)).unwrap()
    }

    #[test]
    fn single_mode_is_the_ekf() {
        let model = walk(0.3);
        let imm = ImmBelief::new(vec![start()], DVector::from_element(1, 1.0), DMatrix::identity(1, 1)).unwrap();
        let u = StampedInput::from_slice(&[0.0], 0.0);
        let meas = StampedMeasurement::new(DVector::from_element(1, 0.4), 1.0, Arc::new(Direct)).unwrap();
        let out = imm_step(&imm, &[&model], &u, Some(&meas), 1.0).unwrap();
        let ekf = ekf_correct(&ekf_predict(&start(), &model, &u, 1.0).unwrap(), &meas).unwrap();
        assert_eq!(out.belief.mode_beliefs[0], ekf);
        assert_eq!(out.belief.mode_probabilities[0], 1.0);
    }

    #[test]
    fn identical_modes_follow_the_markov_chain() {
        let model = walk(0.3);
        let pi = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.3, 0.7]);
        let mut imm = ImmBelief::new(vec![start(), start()], DVector::from_vec(vec![1.0, 0.0]), pi.clone()).unwrap();
        let u = StampedInput::from_slice(&[0.0], 0.0);
        let mut p = DVector::from_vec(vec![1.0, 0.0]);
        for _ in 0..5 {
            imm = imm_step(&imm, &[&model, &model], &u, None, 1.0).unwrap().belief;
            p = pi.transpose() * p;
            assert!((&imm.mode_probabilities - &p).amax() < 1e-15);
        }
    }

    #[test]
    fn underflow_keeps_mixing_probabilities() {
        #[derive(Debug)]
        struct Tight;
        impl MeasurementModel for Tight {
            fn evaluate(&self, x: &ManifoldPoint) -> Result<DVector<f64>> {
                Ok(x.as_vector().unwrap().clone())
            }
            fn output_dim(&self) -> usize {
                1
            }
            fn covariance(&self, _x: &ManifoldPoint) -> Result<DMatrix<f64>> {
                Ok(DMatrix::from_element(1, 1, 1e-6))
            }
        }
        let model = LinearProcess::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1)).unwrap();
        let b = GaussianBelief::new(ManifoldPoint::from_slice(&[0.0]).with_stamp(0.0), DMatrix::from_element(1, 1, 1e-6)).unwrap();
        let imm = ImmBelief::new(vec![b.clone(), b], DVector::from_vec(vec![0.5, 0.5]), DMatrix::identity(2, 2)).unwrap();
        let u = StampedInput::from_slice(&[0.0], 0.0);
        let meas = StampedMeasurement::new(DVector::from_element(1, 1e6), 1.0, Arc::new(Tight)).unwrap();
        let out = imm_step(&imm, &[&model, &model], &u, Some(&meas), 1.0).unwrap();
        assert!(out.likelihood_underflow);
        assert_eq!(out.belief.mode_probabilities, DVector::from_vec(vec![0.5, 0.5]));
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        assert!(ImmBelief::new(vec![start()], DVector::from_element(1, 0.5), DMatrix::identity(1, 1)).is_err());
        assert!(ImmBelief::new(vec![start(), start()], DVector::from_vec(vec![0.5, 0.5]), DMatrix::from_element(2, 2, 0.6)).is_err());
    }
}
