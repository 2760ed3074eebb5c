#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use regretlab_core::envs::dirichlet_flat;
use regretlab_core::{Mdp, Policy};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random communicating model; `sparse` zeroes out kernel entries (keeping a
/// cycle through action 0) so multichain policies appear.
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
                if a == 0 {
                    row[(s + 1) % n_states] += 0.5;
                }
                if row.iter().all(|&p| p == 0.0) {
                    row[rng.gen_range(0..n_states)] = 1.0;
                }
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= total);
                let drift = 1.0 - row.iter().sum::<f64>();
                let j = row.iter().position(|&p| p > 0.0).unwrap();
                row[j] += drift;
            }
            kernel.push(row);
        }
    }
    Mdp::new(&actions, rewards, kernel).expect("random model is valid")
}

pub fn random_policy(rng: &mut ChaCha8Rng, m: &Mdp) -> Policy {
    Policy::new((0..m.n_states()).map(|s| rng.gen_range(0..m.layout().n_actions(s))).collect())
}

/// Per-state maximum of the exact gain over all deterministic policies.
pub fn brute_force_gain(m: &Mdp) -> Vec<f64> {
    let mut best = vec![f64::NEG_INFINITY; m.n_states()];
    for pi in regretlab_core::mdp::enumerate_policies(m.layout(), |_, _| true) {
        let v = regretlab_core::mdp::policy_eval(m, &pi).unwrap();
        for (b, g) in best.iter_mut().zip(&v.gain) {
            *b = b.max(*g);
        }
    }
    best
}

/// Mean and standard error from batch means.
pub fn batch_mean(samples: &[f64], batches: usize) -> (f64, f64) {
    let size = samples.len() / batches;
    let means: Vec<f64> = samples
        .chunks(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}
