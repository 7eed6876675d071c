//! Random linear-Gaussian system with a Kalman filter and a dense stacked
//! least-squares solve as independent references.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use navkit::batch::{make_measurement_term, make_prior_term, make_process_term, solve, BatchProblem, BatchSolution, SolveOptions};
use navkit::filters::Filter;
use navkit::models::{LinearProcess, ProcessModel, StampedInput, StampedMeasurement};
use navkit::{GaussianBelief, ManifoldPoint};
use rand::Rng;

use super::{kf_predict, kf_update, random_spd, rng, uniform_vec, LinearMeasurement};

pub const STEPS: usize = 100;

pub struct System {
    pub f: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub qu: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub p0: DMatrix<f64>,
    pub inputs: Vec<DVector<f64>>,
    pub ys: Vec<DVector<f64>>,
}

pub fn system(seed: u64) -> System {
    let mut g = rng(seed);
    let mut f = DMatrix::identity(4, 4) + DMatrix::from_fn(4, 4, |_, _| g.random_range(-0.1..0.1));
    // Keep the system stable so that absolute tolerances stay meaningful
    // over the whole horizon.
    let rho = f.clone().complex_eigenvalues().map(|c| c.norm()).max();
    if rho > 0.98 {
        f *= 0.98 / rho;
    }
    let l = DMatrix::from_fn(4, 2, |_, _| g.random_range(-1.0..1.0));
    let h = DMatrix::from_fn(2, 4, |_, _| g.random_range(-1.0..1.0));
    let q = random_spd(&mut g, 4, 0.1) * 0.01;
    let qu = random_spd(&mut g, 2, 0.1) * 0.1;
    let r = random_spd(&mut g, 2, 0.2) * 0.5;
    let m0 = uniform_vec(&mut g, 4, 1.0);
    let p0 = random_spd(&mut g, 4, 0.5);
    let mut x = m0.clone();
    let mut inputs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..STEPS {
        let u = uniform_vec(&mut g, 2, 1.0);
        x = &f * &x + &l * &u + uniform_vec(&mut g, 4, 0.1);
        ys.push(&h * &x + uniform_vec(&mut g, 2, 0.5));
        inputs.push(u);
    }
    System { f, l, q, qu, h, r, m0, p0, inputs, ys }
}

impl System {
    pub fn process(&self) -> LinearProcess {
        LinearProcess::new(self.f.clone(), self.l.clone())
            .unwrap()
            .with_noise(self.q.clone())
            .unwrap()
    }

    pub fn input(&self, k: usize) -> StampedInput {
        StampedInput::new(self.inputs[k].clone(), k as f64)
            .with_covariance(self.qu.clone())
            .unwrap()
    }

    pub fn measurement(&self, k: usize) -> StampedMeasurement {
        let model = Arc::new(LinearMeasurement { h: self.h.clone(), r: self.r.clone() });
        StampedMeasurement::new(self.ys[k].clone(), (k + 1) as f64, model).unwrap()
    }

    pub fn prior(&self) -> GaussianBelief {
        GaussianBelief::new(ManifoldPoint::vector(self.m0.clone()).with_stamp(0.0), self.p0.clone()).unwrap()
    }

    /// Kalman filter posteriors after every update.
    pub fn oracle(&self) -> Vec<(DVector<f64>, DMatrix<f64>)> {
        let qk = &self.q + &self.l * &self.qu * self.l.transpose();
        let (mut x, mut p) = (self.m0.clone(), self.p0.clone());
        let mut out = Vec::new();
        for k in 0..STEPS {
            (x, p) = kf_predict(&x, &p, &self.f, &(&self.l * &self.inputs[k]), &qk);
            (x, p) = kf_update(&x, &p, &self.h, &self.r, &self.ys[k]);
            out.push((x.clone(), p.clone()));
        }
        out
    }
}

pub fn run_filter(sys: &System, filter: &dyn Filter) -> Vec<GaussianBelief> {
    let model = sys.process();
    let mut b = sys.prior();
    let mut out = Vec::new();
    for k in 0..STEPS {
        b = filter.predict(&b, &model, &sys.input(k), 1.0).unwrap();
        b = filter.correct(&b, &sys.measurement(k)).unwrap();
        out.push(b.clone());
    }
    out
}

pub fn id(k: usize) -> String {
    format!("x{k}")
}

/// Stacked normal equations of the whole trajectory, assembled directly.
pub fn dense_least_squares(sys: &System) -> (DVector<f64>, DMatrix<f64>) {
    let n = 4 * (STEPS + 1);
    let mut a = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    let mut add = |blocks: Vec<(usize, DMatrix<f64>)>, c: DVector<f64>, cov: &DMatrix<f64>| {
        let w = cov.clone().try_inverse().unwrap();
        let m = c.len();
        let mut j = DMatrix::zeros(m, n);
        for (k, b) in blocks {
            j.view_mut((0, 4 * k), (m, 4)).copy_from(&b);
        }
        a += j.transpose() * &w * &j;
        rhs += j.transpose() * &w * c;
    };
    let i4 = DMatrix::<f64>::identity(4, 4);
    add(vec![(0, i4.clone())], sys.m0.clone(), &sys.p0);
    let qk = &sys.q + &sys.l * &sys.qu * sys.l.transpose();
    for k in 0..STEPS {
        add(vec![(k, -sys.f.clone()), (k + 1, i4.clone())], &sys.l * &sys.inputs[k], &qk);
        add(vec![(k + 1, sys.h.clone())], sys.ys[k].clone(), &sys.r);
    }
    let z = a.clone().cholesky().unwrap().solve(&rhs);
    (z, a.try_inverse().unwrap())
}


/// Batch MAP over the whole trajectory, starting from zero states.
pub fn solve_batch(sys: &System) -> BatchSolution {
    let model: Arc<dyn ProcessModel> = Arc::new(sys.process());
    let prior = sys.prior();
    let x0 = prior.mean.clone().with_id(id(0));
    let mut vars = vec![x0.clone()];
    let mut terms = vec![make_prior_term(&GaussianBelief::new(x0, prior.covariance.clone()).unwrap()).unwrap()];
    for k in 0..STEPS {
        vars.push(ManifoldPoint::vector(DVector::zeros(4)).with_stamp((k + 1) as f64).with_id(id(k + 1)));
        terms.push(make_process_term(model.clone(), sys.input(k), 1.0, id(k), id(k + 1)));
        terms.push(make_measurement_term(sys.measurement(k).with_target(id(k + 1))).unwrap());
    }
    let problem = BatchProblem::new(vars, terms).unwrap();
    let opts = SolveOptions { compute_covariance: true, ..SolveOptions::default() };
    solve(&problem, &opts).unwrap()
}
