//! Generative access to the nominal kernel.

use rand::Rng;

use crate::mdp::Kernel;

/// Index drawn from probability row `p` by inverse-CDF lookup on one
/// uniform. Zero-probability entries are never returned.
pub fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &q) in p.iter().enumerate() {
        if q <= 0.0 {
            continue;
        }
        acc += q;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Draws next states from `P̄_{s,a}`. Each row keeps its cumulative sums so
/// a draw costs one uniform and a binary search.
#[derive(Clone, Debug)]
pub struct Simulator {
    n_states: usize,
    n_actions: usize,
    cdf: Vec<f64>,
    last: Vec<usize>,
}

impl Simulator {
    pub fn new(nominal: &Kernel) -> Self {
        let (ns, na) = (nominal.n_states(), nominal.n_actions());
        let mut cdf = Vec::with_capacity(ns * na * ns);
        let mut last = Vec::with_capacity(ns * na);
        for row in nominal.rows() {
            let mut acc = 0.0;
            for &q in row {
                acc += q;
                cdf.push(acc);
            }
            last.push(row.iter().rposition(|&q| q > 0.0).unwrap_or(0));
        }
        Simulator {
            n_states: ns,
            n_actions: na,
            cdf,
            last,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let idx = s * self.n_actions + a;
        let cdf = &self.cdf[idx * self.n_states..(idx + 1) * self.n_states];
        let u: f64 = rng.random();
        // first index with cdf > u; zero-mass entries share their
        // predecessor's cdf value and are skipped
        cdf.partition_point(|&c| c <= u).min(self.last[idx])
    }
}
