#![allow(dead_code)]

use dfrc_core::linalg::hermitize;
use dfrc_core::{CMat, CVec, Cx};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn randn_c<R: Rng>(rng: &mut R) -> Cx<f64> {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    Cx::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn rand_cmat<R: Rng>(rng: &mut R, r: usize, c: usize) -> CMat<f64> {
    CMat::from_fn(r, c, |_, _| randn_c(rng))
}

pub fn rand_cvec<R: Rng>(rng: &mut R, n: usize) -> CVec<f64> {
    CVec::from_fn(n, |_, _| randn_c(rng))
}

pub fn rand_hermitian<R: Rng>(rng: &mut R, n: usize) -> CMat<f64> {
    hermitize(&rand_cmat(rng, n, n))
}

pub fn rand_psd<R: Rng>(rng: &mut R, n: usize, rank: usize) -> CMat<f64> {
    let f = rand_cmat(rng, n, rank);
    hermitize(&(&f * f.adjoint()))
}

pub fn dist_sq(a: &[Cx<f64>], b: &[Cx<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum()
}
