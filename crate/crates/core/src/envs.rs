//! Environment constructors and the one-step simulator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

use crate::confidence::AmbientSet;
use crate::mdp::{self, Mdp, MdpError};
use crate::rng::{self, RunStreams};

/// Give up on drawing a non-degenerate random instance after this many tries.
pub const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvSpec {
    /// Two states, loop or switch everywhere; several Bellman-optimal policies.
    Figure2Left,
    /// Same arrows with perturbed rewards; unique, unichain optimal policy.
    Figure2Right,
    /// A 5-cycle and a 3-cycle sharing states 0 and 1; state 1 chooses.
    Figure7Cycles,
    RiverSwim(usize),
    RandomErgodic { n_states: usize, n_actions: usize, seed: u64 },
}

impl EnvSpec {
    /// Stable identifier used in manifests and file names.
    pub fn id(&self) -> String {
        match self {
            Self::Figure2Left => "figure2_left".into(),
            Self::Figure2Right => "figure2_right".into(),
            Self::Figure7Cycles => "figure7_cycles".into(),
            Self::RiverSwim(n) => format!("riverswim({n})"),
            Self::RandomErgodic {
                n_states,
                n_actions,
                seed,
            } => format!("random_ergodic({n_states},{n_actions},{seed})"),
        }
    }

    /// The model and the ambient set a learner may assume.
    pub fn build(&self) -> Result<(Mdp, AmbientSet), EnvError> {
        match *self {
            Self::Figure2Left => fixed(figure2(0.5, 0.1, 0.5, 0.1)?),
            Self::Figure2Right => fixed(figure2(0.49, 0.09, 0.51, 0.08)?),
            Self::Figure7Cycles => fixed(figure7()?),
            Self::RiverSwim(n) => {
                let m = riverswim(n)?;
                let ambient = AmbientSet::free(m.layout());
                Ok((m, ambient))
            }
            Self::RandomErgodic {
                n_states,
                n_actions,
                seed,
            } => {
                let (m, _) = random_ergodic(n_states, n_actions, seed)?;
                let ambient = AmbientSet::free(m.layout());
                Ok((m, ambient))
            }
        }
    }
}

fn fixed(m: Mdp) -> Result<(Mdp, AmbientSet), EnvError> {
    let ambient = AmbientSet::fixed_kernel(&m);
    Ok((m, ambient))
}

/// Two states; action 0 loops, action 1 switches. Rewards are given as
/// `(0, loop), (0, switch), (1, loop), (1, switch)`.
pub fn figure2(loop0: f64, switch0: f64, loop1: f64, switch1: f64) -> Result<Mdp, MdpError> {
    Mdp::new(
        &[2, 2],
        vec![loop0, switch0, loop1, switch1],
        vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
    )
}

/// States 0..5. The 5-cycle is 0 -> 1 -> 2 -> 3 -> 4 -> 0 with rewards
/// 0.1, 0.9, 0.9, 0.9, 0.9; action 1 in state 1 branches to 5 (reward 0.95)
/// which returns to 0 (reward 0.8).
pub fn figure7() -> Result<Mdp, MdpError> {
    let to = |s: usize| {
        let mut row = vec![0.0; 6];
        row[s] = 1.0;
        row
    };
    Mdp::new(
        &[1, 2, 1, 1, 1, 1],
        vec![0.1, 0.9, 0.95, 0.9, 0.9, 0.9, 0.8],
        vec![to(1), to(2), to(5), to(3), to(4), to(0), to(0)],
    )
}

/// RiverSwim with `n` states; action 0 swims left, action 1 right.
pub fn riverswim(n: usize) -> Result<Mdp, EnvError> {
    if n < 2 {
        return Err(EnvError::Invalid(format!("riverswim needs at least 2 states, got {n}")));
    }
    let mut rewards = Vec::with_capacity(2 * n);
    let mut kernel = Vec::with_capacity(2 * n);
    for s in 0..n {
        let mut left = vec![0.0; n];
        left[s.saturating_sub(1)] = 1.0;
        let mut right = vec![0.0; n];
        if s == 0 {
            right[1] = 0.6;
            right[0] = 0.4;
        } else if s == n - 1 {
            right[s] = 0.6;
            right[s - 1] = 0.4;
        } else {
            right[s + 1] = 0.6;
            right[s] = 0.35;
            right[s - 1] = 0.05;
        }
        rewards.push(if s == 0 { 0.005 } else { 0.0 });
        rewards.push(if s == n - 1 { 1.0 } else { 0.0 });
        kernel.push(left);
        kernel.push(right);
    }
    Ok(Mdp::new(&vec![2; n], rewards, kernel)?)
}

/// Full-support kernels from a flat Dirichlet and uniform reward means,
/// redrawn until the model is non-degenerate. Returns the model and the
/// number of rejected draws.
pub fn random_ergodic(n_states: usize, n_actions: usize, seed: u64) -> Result<(Mdp, usize), EnvError> {
    if n_states < 2 || n_actions < 1 {
        return Err(EnvError::Invalid(format!(
            "random ergodic model needs >= 2 states and >= 1 action, got {n_states} and {n_actions}"
        )));
    }
    let mut rng = rng::generator_stream(seed);
    let n_pairs = n_states * n_actions;
    for redraws in 0..MAX_REDRAWS {
        let kernel: Vec<Vec<f64>> = (0..n_pairs).map(|_| dirichlet_flat(&mut rng, n_states)).collect();
        let rewards: Vec<f64> = (0..n_pairs).map(|_| rng.gen::<f64>()).collect();
        let m = Mdp::new(&vec![n_actions; n_states], rewards, kernel)?;
        let solved = mdp::optimal_solve(&m, mdp::DEFAULT_SOLVE_TOL)?;
        if mdp::non_degenerate_report(&m, &solved).0 {
            return Ok((m, redraws));
        }
    }
    Err(EnvError::Invalid(format!("no non-degenerate draw after {MAX_REDRAWS} attempts")))
}

/// Uniform point on the simplex via normalized exponentials.
pub fn dirichlet_flat<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            // 1 - U lies in (0, 1], so the log is finite
            let u: f64 = rng.gen();
            -libm::log(1.0 - u)
        })
        .collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|x| *x /= total);
    } else {
        w.iter_mut().for_each(|x| *x = 1.0 / n as f64);
    }
    // make the row sum exactly representable as 1 within the model tolerance
    let drift: f64 = 1.0 - w.iter().sum::<f64>();
    let last = w.len() - 1;
    w[last] = (w[last] + drift).max(0.0);
    w
}

/// Samples a Bernoulli reward and the next state of pair `z`.
pub fn step(m: &Mdp, z: usize, streams: &mut RunStreams) -> (bool, usize) {
    let reward = streams.rewards.gen::<f64>() < m.reward(z);
    (reward, sample_row(m.row(z), &mut streams.transitions))
}

/// Inverse-CDF draw from a probability row.
pub fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}
