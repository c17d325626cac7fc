//! Classical baseline: greedy state merging under a stationary-weighted
//! KL objective.
//!
//! Each step lumps the pair (a, b) whose one-step predictive distributions
//! are cheapest to pool, where the pooled distribution is the
//! stationary-mixture p_m = (pi_a p_a + pi_b p_b)/(pi_a + pi_b). Outgoing
//! probability of the merged state is p_m; incoming probability into a and
//! b is summed. Zero-handling: a KL term with p = 0 contributes nothing,
//! p > 0 against q = 0 is infinite; if every pair is infinite the pair with
//! the smallest pooled stationary weight is taken, lowest indices first.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hmm::Hmm;

pub fn greedy_merge_baseline(model: &Hmm, target_states: usize) -> Result<Vec<(usize, Hmm)>> {
    let n0 = model.num_states();
    if target_states < 1 || target_states >= n0 {
        return Err(Error::InvalidInput(format!(
            "target {target_states} must lie in 1..{n0}"
        )));
    }
    let mut current = model.clone();
    let mut out = Vec::with_capacity(n0 - target_states);
    while current.num_states() > target_states {
        current = merge_once(&current)?;
        out.push((current.num_states(), current.clone()));
    }
    Ok(out)
}

fn merge_once(m: &Hmm) -> Result<Hmm> {
    let n = m.num_states();
    let k = m.alphabet().len();
    let pi = m.stationary_distribution()?;
    let trans = m.transitions();

    // predictive distribution of state s: index (x, s') flattened
    let pred = |s: usize| -> Vec<f64> {
        let mut p = Vec::with_capacity(k * n);
        for t in trans {
            for sp in 0..n {
                p.push(t[(sp, s)]);
            }
        }
        p
    };

    let mut best: Option<(f64, usize, usize)> = None;
    let mut fallback: Option<(f64, usize, usize)> = None;
    for a in 0..n {
        let pa = pred(a);
        for b in (a + 1)..n {
            let pb = pred(b);
            let wa = pi[a];
            let wb = pi[b];
            let total = wa + wb;
            let cost = if total > 0.0 {
                let mut acc = 0.0;
                for (&x, &y) in pa.iter().zip(&pb) {
                    let pm = (wa * x + wb * y) / total;
                    acc += kl_term(wa, x, pm) + kl_term(wb, y, pm);
                    if acc.is_infinite() {
                        break;
                    }
                }
                acc
            } else {
                0.0
            };
            if cost.is_finite() {
                if best.as_ref().map_or(true, |(c, _, _)| cost < *c) {
                    best = Some((cost, a, b));
                }
            }
            if fallback.as_ref().map_or(true, |(w, _, _)| total < *w) {
                fallback = Some((total, a, b));
            }
        }
    }
    let (_, a, b) = best.or(fallback).expect("n >= 2 guarantees a pair");

    let wa = pi[a];
    let wb = pi[b];
    let total = (wa + wb).max(f64::MIN_POSITIVE);
    // old index -> new index; the merged state sits at a
    let map = |s: usize| -> usize {
        if s == b {
            a
        } else if s > b {
            s - 1
        } else {
            s
        }
    };
    let mut merged: Vec<DMatrix<f64>> = (0..k).map(|_| DMatrix::zeros(n - 1, n - 1)).collect();
    for (x, t) in trans.iter().enumerate() {
        for s in 0..n {
            for sp in 0..n {
                let v = t[(sp, s)];
                if v == 0.0 && !(s == a || s == b) {
                    continue;
                }
                let w = if s == a {
                    wa * v / total
                } else if s == b {
                    wb * v / total
                } else {
                    v
                };
                merged[x][(map(sp), map(s))] += w;
            }
        }
    }
    Hmm::new(m.alphabet().to_vec(), merged)
}

fn kl_term(weight: f64, p: f64, q: f64) -> f64 {
    if p <= 0.0 || weight <= 0.0 {
        0.0
    } else if q <= 0.0 {
        f64::INFINITY
    } else {
        weight * p * (p / q).log2()
    }
}
