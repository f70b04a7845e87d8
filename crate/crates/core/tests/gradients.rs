//! Analytic gradients of every training loss against central differences.

mod common;

use common::grad::{self, TOL};

fn check(f: fn(u64) -> f64, what: &str) {
    for seed in 0..10 {
        let e = f(seed);
        assert!(e < TOL, "{what}, seed {seed}: relative error {e}");
    }
}

#[test]
fn lyapunov_risk_gradient() {
    check(grad::lyapunov_risk, "lyapunov risk");
}

#[test]
fn world_model_nll_gradient() {
    check(grad::world_model_nll, "world model nll");
}

#[test]
fn critic_gradient() {
    check(grad::critics, "critics");
}

#[test]
fn policy_gradient() {
    check(grad::policy, "policy");
}

#[test]
fn temperature_gradient() {
    check(grad::temperature, "temperature");
}
