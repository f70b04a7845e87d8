//! Worst relative error between analytic gradients and central differences
//! (f64, frozen noise, h = 1e-5) for each training loss on one random instance.

use saclab::agent::{critic_losses, policy_loss, Temperature};
use saclab::nn::gradcheck::{central_difference, rel_error};
use saclab::nn::ParamStore;
use saclab::replay::Batch;
use saclab::rng::{self, stream, Stream};

use super::*;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

fn worst(grads: &ParamStore<f64>, params: &ParamStore<f64>, loss: impl Fn(&ParamStore<f64>) -> f64) -> f64 {
    (0..params.numel())
        .map(|i| {
            let fd = central_difference(H, |h| {
                let mut p = params.clone();
                p.flat_set(i, p.flat_get(i) + h);
                loss(&p)
            });
            rel_error(grads.flat_get(i), fd)
        })
        .fold(0.0, f64::max)
}

fn batch(seed: u64, len: usize, n: usize, m: usize, k: usize) -> Batch<f64> {
    let mut r = stream(seed, Stream::Buffer);
    Batch {
        len,
        x: uniform_vec(&mut r, len * n, -0.5, 0.5),
        g: uniform_vec(&mut r, len * m, -0.5, 0.5),
        u: uniform_vec(&mut r, len * k, -2.5, 2.5),
        r: uniform_vec(&mut r, len, -1.0, 1.0),
        x_next: uniform_vec(&mut r, len * n, -0.5, 0.5),
        done: (0..len).map(|i| i % 3 == 2).collect(),
    }
}

pub fn lyapunov_risk(seed: u64) -> f64 {
    let nlf = random_nlf(6, 3, seed);
    let wm = random_world_model(6, 3, seed);
    let policy = random_policy(6, 3, 3, seed);
    let b = batch(seed, 4, 6, 3, 3);
    let rb = nlf.risk_batch(&wm, &policy, &b.x, &b.g, 4, &mut stream(seed, Stream::WorldModel)).unwrap();
    let (_, g) = nlf.risk_and_grad(&rb).unwrap();
    worst(&g, nlf.params(), |p| {
        let mut v = nlf.clone();
        v.net.params = p.clone();
        v.risk_and_grad(&rb).unwrap().0
    })
}

pub fn world_model_nll(seed: u64) -> f64 {
    let wm = random_world_model(4, 1, seed);
    let b = batch(seed, 5, 4, 4, 1);
    let (_, g) = wm.nll(&b.x, &b.u, &b.x_next, 5).unwrap();
    worst(&g, wm.params(), |p| {
        let mut w = wm.clone();
        w.net.params = p.clone();
        w.nll(&b.x, &b.u, &b.x_next, 5).unwrap().0
    })
}

pub fn critics(seed: u64) -> f64 {
    let critics = random_critics(4, 4, 1, seed);
    let policy = random_policy(4, 4, 1, seed);
    let b = batch(seed, 4, 4, 4, 1);
    let mut noise = vec![0.0; 4];
    rng::fill_standard_normal(&mut stream(seed, Stream::Policy), &mut noise);
    let (_, g1, _, g2) = critic_losses(&critics, &policy, 0.2, &b, &b.r, 0.99, &noise).unwrap();
    let e1 = worst(&g1, &critics.q1.params, |p| {
        let mut c = critics.clone();
        c.q1.params = p.clone();
        critic_losses(&c, &policy, 0.2, &b, &b.r, 0.99, &noise).unwrap().0
    });
    let e2 = worst(&g2, &critics.q2.params, |p| {
        let mut c = critics.clone();
        c.q2.params = p.clone();
        critic_losses(&c, &policy, 0.2, &b, &b.r, 0.99, &noise).unwrap().2
    });
    e1.max(e2)
}

pub fn policy(seed: u64) -> f64 {
    let critics = random_critics(6, 3, 3, seed);
    let policy = random_policy(6, 3, 3, seed);
    let b = batch(seed, 4, 6, 3, 3);
    let mut noise = vec![0.0; 12];
    rng::fill_standard_normal(&mut stream(seed, Stream::Policy), &mut noise);
    let (_, g, _) = policy_loss(&policy, &critics, 0.3, &b.x, &b.g, 4, &noise).unwrap();
    worst(&g, policy.params(), |p| {
        let mut q = policy.clone();
        q.net.params = p.clone();
        policy_loss(&q, &critics, 0.3, &b.x, &b.g, 4, &noise).unwrap().0
    })
}

pub fn temperature(seed: u64) -> f64 {
    let mut r = stream(seed, Stream::Policy);
    let init = rng::uniform(&mut r, 0.05, 2.0);
    let lps = uniform_vec(&mut r, 8, -3.0, 3.0);
    let t = Temperature::<f64>::new(init, -2.0, 3e-4).unwrap();
    let (_, g) = t.loss_and_grad(&lps).unwrap();
    let fd = central_difference(H, |h| {
        let mut tt = t.clone();
        tt.log_alpha.at_mut(0).data[0] += h;
        tt.loss_and_grad(&lps).unwrap().0
    });
    rel_error(g, fd)
}

pub type Check = (&'static str, fn(u64) -> f64);

pub const ALL: [Check; 5] = [
    ("nlf risk", lyapunov_risk),
    ("wm nll", world_model_nll),
    ("critics", critics),
    ("policy", policy),
    ("temperature", temperature),
];
