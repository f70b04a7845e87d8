#![allow(dead_code)]

use saclab::agent::{Critics, Policy};
use saclab::lyapunov::Nlf;
use saclab::nn::{Mlp, MlpSpec};
use saclab::rng::{self, stream, Stream};
use saclab::world_model::WorldModel;

pub mod grad;

/// Gauss–Hermite nodes and weights for `∫ exp(-x²) f(x) dx` (Newton iteration
/// on the orthonormal recurrence).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `E[f(mu + sigma Z)]`, `Z ~ N(0, 1)`.
pub fn normal_expectation(mu: f64, sigma: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_hermite(60);
    let s: f64 = x
        .iter()
        .zip(&w)
        .map(|(&xi, &wi)| wi * f(mu + std::f64::consts::SQRT_2 * sigma * xi))
        .sum();
    s / std::f64::consts::PI.sqrt()
}

/// A linear world model `x' ~ N(x + a, exp(log_std)^2)` (identity normalizer).
pub fn shift_world_model(shift: &[f64], log_std: &[f64], action_dim: usize) -> WorldModel<f64> {
    let n = shift.len();
    let mut net = Mlp::zeros(MlpSpec::new(vec![n + action_dim, 2 * n])).unwrap();
    let b = &mut net.params.get_mut("layer0.bias").unwrap().data;
    b[..n].copy_from_slice(shift);
    b[n..].copy_from_slice(log_std);
    WorldModel::from_net(net, n, action_dim).unwrap()
}

pub fn random_world_model(n: usize, k: usize, seed: u64) -> WorldModel<f64> {
    let mut wm = WorldModel::new(n, k, &[10, 8], &mut stream(seed, Stream::Init)).unwrap();
    let mut r = stream(seed, Stream::Env);
    for _ in 0..30 {
        let x: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let u: Vec<f64> = (0..k).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let xn: Vec<f64> = x.iter().map(|v| v + rng::uniform(&mut r, -0.1, 0.1)).collect();
        wm.normalizer.observe(&x, &u, &xn);
    }
    wm
}

pub fn random_nlf(n: usize, m: usize, seed: u64) -> Nlf<f64> {
    Nlf::new(n, m, &[10, 6], 1e-3, 4, &mut stream(seed + 1000, Stream::Init)).unwrap()
}

pub fn constant_nlf(n: usize, m: usize) -> Nlf<f64> {
    Nlf::from_net(Mlp::zeros(MlpSpec::new(vec![n, 6, 1])).unwrap(), m, 1e-3, 4).unwrap()
}

pub fn random_policy(n: usize, m: usize, k: usize, seed: u64) -> Policy<f64> {
    Policy::new(n, m, k, 3.0, &[8, 8], &mut stream(seed + 2000, Stream::Init)).unwrap()
}

pub fn random_critics(n: usize, m: usize, k: usize, seed: u64) -> Critics<f64> {
    let mut c = Critics::new(n, m, k, &[8, 8], &mut stream(seed + 3000, Stream::Init)).unwrap();
    // targets distinct from the online nets
    let other = Critics::<f64>::new(n, m, k, &[8, 8], &mut stream(seed + 4000, Stream::Init)).unwrap();
    c.q1_target = other.q1;
    c.q2_target = other.q2;
    c
}

pub fn uniform_vec(r: &mut impl rand::Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng::uniform(r, lo, hi)).collect()
}

/// `u = 3 tanh(k . x)` with tiny exploration noise.
pub fn stabilizing_policy() -> Policy<f64> {
    let mut net = Mlp::zeros(MlpSpec::new(vec![8, 2])).unwrap();
    let w = &mut net.params.get_mut("layer0.weight").unwrap().data;
    // force gains on (x, x_dot, theta, theta_dot)
    w[..4].copy_from_slice(&[0.3, 0.6, 8.0, 1.5]);
    net.params.get_mut("layer0.bias").unwrap().data[1] = -4.0;
    Policy::from_net(net, 4, 4, 1, 3.0).unwrap()
}
