#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regretlab_core::envs::dirichlet_flat;
use regretlab_core::{Mdp, Policy};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random communicating model. Action 0 always keeps some mass on the next
/// state of a cycle; with `sparse`, other entries are zeroed at random so
/// that multichain policies show up.
pub fn random_mdp(rng: &mut ChaCha8Rng, n_states: usize, max_actions: usize, sparse: bool) -> Mdp {
    let actions: Vec<usize> = (0..n_states).map(|_| rng.gen_range(1..=max_actions)).collect();
    let mut rewards = Vec::new();
    let mut kernel = Vec::new();
    for s in 0..n_states {
        for a in 0..actions[s] {
            rewards.push(rng.gen::<f64>());
            let mut row = dirichlet_flat(rng, n_states);
            if sparse {
                for p in row.iter_mut() {
                    if rng.gen_bool(0.5) {
                        *p = 0.0;
                    }
                }
            }
            if a == 0 {
                row[(s + 1) % n_states] += 0.5;
            }
            if row.iter().all(|&p| p == 0.0) {
                row[rng.gen_range(0..n_states)] = 1.0;
            }
            normalize(&mut row);
            kernel.push(row);
        }
    }
    Mdp::new(&actions, rewards, kernel).expect("random model is valid")
}

/// Scales to unit sum, then puts the rounding drift on the first positive
/// entry so the row sums to one exactly.
pub fn normalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
    let drift = 1.0 - row.iter().sum::<f64>();
    let j = row.iter().position(|&p| p > 0.0).unwrap();
    row[j] += drift;
}

pub fn random_policy(rng: &mut ChaCha8Rng, m: &Mdp) -> Policy {
    Policy::new((0..m.n_states()).map(|s| rng.gen_range(0..m.layout().n_actions(s))).collect())
}

/// Every deterministic policy, by mixed-radix counting.
pub fn all_policies(m: &Mdp) -> Vec<Policy> {
    let counts = m.layout().actions_per_state();
    let mut out = Vec::new();
    let mut digits = vec![0; counts.len()];
    loop {
        out.push(Policy::new(digits.clone()));
        let mut i = 0;
        loop {
            if i == digits.len() {
                return out;
            }
            digits[i] += 1;
            if digits[i] < counts[i] {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

/// Gain vector of `pi`: the limit of the lazy chain `(I + P) / 2`, which has
/// the same Cesàro limit as `P` but no periodicity, raised to `2^60` by
/// repeated squaring and applied to the rewards. Rows are renormalized after
/// every squaring, since squaring doubles any rounding drift in the row sums.
pub fn lazy_chain_gain(m: &Mdp, pi: &Policy) -> Vec<f64> {
    let n = m.n_states();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            let z = pi.pair(m.layout(), s);
            let mut row: Vec<f64> = m.row(z).iter().map(|p| 0.5 * p).collect();
            row[s] += 0.5;
            row
        })
        .collect();
    for _ in 0..60 {
        a = mat_mul(&a, &a);
        for row in a.iter_mut() {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
    }
    let r: Vec<f64> = (0..n).map(|s| m.reward(pi.pair(m.layout(), s))).collect();
    a.iter().map(|row| row.iter().zip(&r).map(|(p, x)| p * x).sum()).collect()
}

/// Per-state best gain over all deterministic policies.
pub fn brute_force_gain(m: &Mdp) -> Vec<f64> {
    let mut best = vec![f64::NEG_INFINITY; m.n_states()];
    for pi in all_policies(m) {
        for (b, g) in best.iter_mut().zip(lazy_chain_gain(m, &pi)) {
            *b = b.max(g);
        }
    }
    best
}

/// Policies whose gain matches the best gain at every state.
pub fn gain_optimal_policies(m: &Mdp, tol: f64) -> Vec<Policy> {
    let best = brute_force_gain(m);
    all_policies(m)
        .into_iter()
        .filter(|pi| lazy_chain_gain(m, pi).iter().zip(&best).all(|(g, b)| (g - b).abs() <= tol))
        .collect()
}
