//! Finite Markov chains and Markov reward processes given as dense row-major
//! transition matrices.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg;

/// Where the bias vector is pinned inside each recurrent class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Gauge {
    /// `h = 0` at the lowest-index state of every recurrent class.
    #[default]
    LowestState,
    /// Stationary mean of `h` is zero on every recurrent class. This is the
    /// Cesàro-limit bias and the only gauge under which the relative level of
    /// distinct recurrent classes is meaningful.
    Cesaro,
}

/// Gain, bias and recurrence structure of a Markov reward process.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainValue {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    /// Closed communicating classes, each sorted, ordered by lowest state.
    pub recurrent_classes: Vec<Vec<usize>>,
    pub transient: Vec<usize>,
}

impl ChainValue {
    pub fn is_unichain(&self) -> bool {
        self.recurrent_classes.len() == 1
    }
}

/// States reachable from `start` (inclusive) in the support graph of `p`.
pub fn reachable(n: usize, p: &[f64], start: usize) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(s) = stack.pop() {
        for (next, &w) in p[s * n..(s + 1) * n].iter().enumerate() {
            if w > 0.0 && !seen[next] {
                seen[next] = true;
                stack.push(next);
            }
        }
    }
    seen
}

/// Closed strongly connected components of the support graph of `p`.
pub fn recurrent_classes(n: usize, p: &[f64]) -> Vec<Vec<usize>> {
    let reach: Vec<Vec<bool>> = (0..n).map(|s| reachable(n, p, s)).collect();
    let mut assigned = vec![false; n];
    let mut classes = Vec::new();
    for s in 0..n {
        if assigned[s] {
            continue;
        }
        // s is recurrent iff every state it reaches reaches it back.
        let closed = (0..n).all(|t| !reach[s][t] || reach[t][s]);
        if !closed {
            continue;
        }
        let class: Vec<usize> = (0..n).filter(|&t| reach[s][t]).collect();
        for &t in &class {
            assigned[t] = true;
        }
        classes.push(class);
    }
    classes
}

/// Stationary distribution of the chain restricted to a closed class.
fn stationary(n: usize, p: &[f64], class: &[usize]) -> Option<Vec<f64>> {
    let k = class.len();
    // mu (P - I) = 0 with the last equation replaced by sum(mu) = 1.
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    for (row, &j) in class.iter().enumerate().take(k - 1) {
        for (col, &i) in class.iter().enumerate() {
            a[row * k + col] = p[i * n + j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for col in 0..k {
        a[(k - 1) * k + col] = 1.0;
    }
    b[k - 1] = 1.0;
    linalg::solve(k, &a, &b)
}

/// Exact gain and bias of the Markov reward process `(p, r)`.
///
/// Each recurrent class gets its own scalar gain from the Poisson equation
/// `g + h = r + P h`; transient states receive the absorbed gain and the
/// bias solving the same equation on transient rows. Returns `None` only if a
/// linear system is singular, which cannot happen for a stochastic `p`.
pub fn evaluate(n: usize, p: &[f64], r: &[f64], gauge: Gauge) -> Option<ChainValue> {
    let classes = recurrent_classes(n, p);
    let mut in_class = vec![false; n];
    let mut gain = vec![0.0; n];
    let mut bias = vec![0.0; n];

    for class in &classes {
        let k = class.len();
        // unknowns: [g, h(class[1]), ..., h(class[k-1])], h(class[0]) = 0
        let mut a = vec![0.0; k * k];
        let mut b = vec![0.0; k];
        for (row, &s) in class.iter().enumerate() {
            a[row * k] = 1.0;
            for (col, &j) in class.iter().enumerate().skip(1) {
                let identity = if s == j { 1.0 } else { 0.0 };
                a[row * k + col] = identity - p[s * n + j];
            }
            b[row] = r[s];
        }
        let x = linalg::solve(k, &a, &b)?;
        for (idx, &s) in class.iter().enumerate() {
            in_class[s] = true;
            gain[s] = x[0];
            bias[s] = if idx == 0 { 0.0 } else { x[idx] };
        }
        if gauge == Gauge::Cesaro {
            let mu = stationary(n, p, class)?;
            let mean: f64 = class.iter().zip(&mu).map(|(&s, w)| w * bias[s]).sum();
            for &s in class {
                bias[s] -= mean;
            }
        }
    }

    let transient: Vec<usize> = (0..n).filter(|&s| !in_class[s]).collect();
    let m = transient.len();
    if m > 0 {
        // (I - P_TT) x = P_TR y + c shared by gain and bias.
        let mut a = vec![0.0; m * m];
        for (row, &s) in transient.iter().enumerate() {
            for (col, &j) in transient.iter().enumerate() {
                let identity = if s == j { 1.0 } else { 0.0 };
                a[row * m + col] = identity - p[s * n + j];
            }
        }
        let absorbed = |values: &[f64], s: usize| -> f64 {
            (0..n)
                .filter(|&j| in_class[j])
                .map(|j| p[s * n + j] * values[j])
                .sum()
        };
        let rhs_gain: Vec<f64> = transient.iter().map(|&s| absorbed(&gain, s)).collect();
        let g_t = linalg::solve(m, &a, &rhs_gain)?;
        for (&s, g) in transient.iter().zip(&g_t) {
            gain[s] = *g;
        }
        let rhs_bias: Vec<f64> = transient
            .iter()
            .map(|&s| r[s] - gain[s] + absorbed(&bias, s))
            .collect();
        let h_t = linalg::solve(m, &a, &rhs_bias)?;
        for (&s, h) in transient.iter().zip(&h_t) {
            bias[s] = *h;
        }
    }

    Some(ChainValue {
        gain,
        bias,
        recurrent_classes: classes,
        transient,
    })
}
