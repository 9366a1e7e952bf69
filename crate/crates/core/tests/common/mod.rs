#![allow(dead_code)]

use certmpc::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal, Uniform};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn uniform_vec<R: Rng>(rng: &mut R, n: usize, half: f64) -> DVector<f64> {
    let u = Uniform::new_inclusive(-half, half).unwrap();
    DVector::from_fn(n, |_, _| u.sample(rng))
}

/// Random QP with a strictly feasible point `p_f` (slack >= 0.1 on every row)
/// and the first `n_hard` rows hard.
pub struct Instance {
    pub prob: QpProblem,
    pub p_f: DVector<f64>,
}

pub fn random_qp<R: Rng>(rng: &mut R, n_p: usize, n_c: usize, n_hard: usize) -> Instance {
    let c = normal_vec(rng, n_p) * 0.3;
    let sigma = Uniform::new_inclusive(1e-2, 1.0).unwrap().sample(rng);
    let hm = &c * c.transpose() + DMatrix::identity(n_p, n_p) * sigma;
    let p_u = uniform_vec(rng, n_p, 0.5);
    let mut a = DMatrix::zeros(n_c, n_p);
    for i in 0..n_c {
        let row = normal_vec(rng, n_p);
        a.row_mut(i).copy_from(&(row.normalize()).transpose());
    }
    let p_f = uniform_vec(rng, n_p, 0.3);
    let slack = Uniform::new_inclusive(0.1, 1.0).unwrap();
    let b = &a * &p_f + DVector::from_fn(n_c, |_, _| slack.sample(rng));
    let h = &hm * 2.0;
    let f = -(&hm * &p_u) * 2.0;
    let s0 = p_u.dot(&(&hm * &p_u)) + 1.0;
    let hard: Vec<usize> = (0..n_hard).collect();
    let soft: Vec<usize> = (n_hard..n_c).collect();
    let prob = QpProblem::new(h, f, s0, a, b, hard, soft, 1e-2).unwrap();
    Instance { prob, p_f }
}
