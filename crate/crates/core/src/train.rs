//! Training: expectation-maximization for edge-emitting models and a
//! seeded Lloyd quantizer for feature streams.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hmm::Hmm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainInit {
    /// All transition weights drawn uniformly, then column-normalized.
    Random,
    /// Uniform weights with a small seeded jitter to break symmetry.
    Flat,
}

#[derive(Debug, Clone)]
pub struct TrainingConfig {
    pub num_states: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub init: TrainInit,
}

impl TrainingConfig {
    pub fn new(num_states: usize) -> Self {
        TrainingConfig {
            num_states,
            max_iterations: 200,
            tolerance: 1e-7,
            seed: 0,
            init: TrainInit::Random,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_states == 0 {
            return Err(Error::InvalidInput("need at least one state".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("need at least one iteration".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub hmm: Hmm,
    /// total log-likelihood (nats) after each iteration
    pub log_likelihood: Vec<f64>,
    /// some posterior column vanished and was floored at 1e-12
    pub floored: bool,
    pub converged: bool,
}

const POSTERIOR_FLOOR: f64 = 1e-12;
const MONOTONE_SLACK: f64 = 1e-9;

/// Fit per-symbol transition matrices by scaled forward-backward updates.
/// The log-likelihood is non-decreasing across iterations (checked), the
/// start distribution is held uniform, and everything is deterministic
/// given the seed.
pub fn baum_welch_train(
    sequences: &[Vec<usize>],
    alphabet: Vec<String>,
    cfg: &TrainingConfig,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if sequences.is_empty() || sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::InvalidInput("no training symbols".into()));
    }
    let k = alphabet.len();
    if k == 0 {
        return Err(Error::InvalidInput("empty alphabet".into()));
    }
    for seq in sequences {
        if let Some(&bad) = seq.iter().find(|&&x| x >= k) {
            return Err(Error::InvalidInput(format!(
                "symbol index {bad} outside alphabet of size {k}"
            )));
        }
    }
    let n = cfg.num_states;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trans: Vec<DMatrix<f64>> = match cfg.init {
        TrainInit::Random => (0..k)
            .map(|_| DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.05..1.0)))
            .collect(),
        TrainInit::Flat => (0..k)
            .map(|_| DMatrix::from_fn(n, n, |_, _| 1.0 + rng.gen_range(-1e-3..1e-3)))
            .collect(),
    };
    normalize_columns(&mut trans);

    let mut log_likelihood = Vec::new();
    let mut floored = false;
    let mut converged = false;
    let mut prev_ll = f64::NEG_INFINITY;

    for _ in 0..cfg.max_iterations {
        let mut numer: Vec<DMatrix<f64>> = (0..k).map(|_| DMatrix::zeros(n, n)).collect();
        let mut ll = 0.0;
        for seq in sequences {
            if seq.is_empty() {
                continue;
            }
            ll += accumulate_sequence(seq, &trans, &mut numer)?;
        }
        log_likelihood.push(ll);
        let mut next = numer;
        let flo = renormalize_with_floor(&mut next);
        floored |= flo;
        if !flo && prev_ll.is_finite() && ll < prev_ll - MONOTONE_SLACK * prev_ll.abs().max(1.0) {
            return Err(Error::SolverFailure {
                what: format!("log-likelihood decreased from {prev_ll} to {ll}"),
                iterations: log_likelihood.len(),
                residual: prev_ll - ll,
            });
        }
        trans = next;
        if prev_ll.is_finite() && (ll - prev_ll).abs() <= cfg.tolerance * ll.abs().max(1.0) {
            converged = true;
            break;
        }
        prev_ll = ll;
    }

    let hmm = Hmm::new(alphabet, trans)?;
    Ok(TrainingOutcome {
        hmm,
        log_likelihood,
        floored,
        converged,
    })
}

/// Scaled forward-backward pass over one sequence; adds expected transition
/// counts into `numer` and returns the sequence log-likelihood.
fn accumulate_sequence(
    seq: &[usize],
    trans: &[DMatrix<f64>],
    numer: &mut [DMatrix<f64>],
) -> Result<f64> {
    let n = trans[0].nrows();
    let tlen = seq.len();
    let uniform = 1.0 / n as f64;
    let mut alpha = vec![vec![uniform; n]];
    let mut scales = Vec::with_capacity(tlen);
    for &x in seq {
        let prev = alpha.last().unwrap();
        let mut next = vec![0.0; n];
        for s in 0..n {
            if prev[s] == 0.0 {
                continue;
            }
            for sp in 0..n {
                next[sp] += trans[x][(sp, s)] * prev[s];
            }
        }
        let c: f64 = next.iter().sum();
        if !(c > 0.0) {
            return Err(Error::InvalidInput(
                "training sequence has probability zero under every start state".into(),
            ));
        }
        for v in &mut next {
            *v /= c;
        }
        scales.push(c);
        alpha.push(next);
    }

    let mut beta = vec![1.0; n];
    for t in (0..tlen).rev() {
        let x = seq[t];
        let a = &alpha[t];
        let c = scales[t];
        // expected counts for the transition at time t
        for s in 0..n {
            if a[s] == 0.0 {
                continue;
            }
            for sp in 0..n {
                let w = a[s] * trans[x][(sp, s)] * beta[sp] / c;
                if w != 0.0 {
                    numer[x][(sp, s)] += w;
                }
            }
        }
        let mut prev_beta = vec![0.0; n];
        for s in 0..n {
            let mut acc = 0.0;
            for sp in 0..n {
                acc += trans[x][(sp, s)] * beta[sp];
            }
            prev_beta[s] = acc / c;
        }
        beta = prev_beta;
    }
    Ok(scales.iter().map(|c| c.ln()).sum())
}

fn normalize_columns(trans: &mut [DMatrix<f64>]) {
    let n = trans[0].nrows();
    for s in 0..n {
        let total: f64 = trans.iter().map(|t| t.column(s).sum()).sum();
        for t in trans.iter_mut() {
            for sp in 0..n {
                t[(sp, s)] /= total;
            }
        }
    }
}

/// Column-normalize expected counts; vanished columns are floored to keep
/// the kernel stochastic. Returns whether flooring was needed.
fn renormalize_with_floor(trans: &mut [DMatrix<f64>]) -> bool {
    let n = trans[0].nrows();
    let mut floored = false;
    for s in 0..n {
        let total: f64 = trans.iter().map(|t| t.column(s).sum()).sum();
        if total <= POSTERIOR_FLOOR {
            floored = true;
            for t in trans.iter_mut() {
                for sp in 0..n {
                    t[(sp, s)] += POSTERIOR_FLOOR;
                }
            }
        }
        let total: f64 = trans.iter().map(|t| t.column(s).sum()).sum();
        for t in trans.iter_mut() {
            for sp in 0..n {
                t[(sp, s)] /= total;
            }
        }
    }
    floored
}

#[derive(Debug, Clone)]
pub struct Quantization {
    pub codebook: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// within-cluster sum of squares after each Lloyd step
    pub wcss: Vec<f64>,
}

/// Seeded k-means++ initialization followed by full-batch Lloyd iteration.
/// Ties go to the lowest centroid index; empty clusters grab the point
/// farthest from its assigned centroid.
pub fn kmeans_quantize(features: &[Vec<f64>], k: usize, seed: u64) -> Result<Quantization> {
    if features.is_empty() {
        return Err(Error::InvalidInput("no feature vectors".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("need at least one cluster".into()));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::InvalidInput("feature vectors differ in length".into()));
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for f in features {
        if !distinct.iter().any(|d| *d == f) {
            distinct.push(f);
            if distinct.len() >= k {
                break;
            }
        }
    }
    if distinct.len() < k {
        return Err(Error::InvalidInput(format!(
            "{k} clusters requested but only {} distinct points",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codebook: Vec<Vec<f64>> = Vec::with_capacity(k);
    codebook.push(features[rng.gen_range(0..features.len())].clone());
    while codebook.len() < k {
        // D^2 weighting
        let d2: Vec<f64> = features
            .iter()
            .map(|f| {
                codebook
                    .iter()
                    .map(|c| dist2(f, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // all points coincide with chosen centroids; take the first
            // point not already in the codebook
            let extra = features
                .iter()
                .find(|f| !codebook.iter().any(|c| c == *f))
                .expect("distinct count checked above");
            codebook.push(extra.clone());
            continue;
        }
        let mut u = rng.gen::<f64>() * total;
        let mut pick = features.len() - 1;
        for (i, w) in d2.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        codebook.push(features[pick].clone());
    }

    let mut labels = vec![0usize; features.len()];
    let mut wcss_trace: Vec<f64> = Vec::new();
    for _ in 0..300 {
        let mut changed = false;
        let mut wcss = 0.0;
        for (i, f) in features.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cent) in codebook.iter().enumerate() {
                let d = dist2(f, cent);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            wcss += best_d;
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if let Some(&prev) = wcss_trace.last() {
            debug_assert!(wcss <= prev + 1e-9 * prev.max(1.0), "objective increased");
        }
        wcss_trace.push(wcss);
        if !changed && wcss_trace.len() > 1 {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (f, &l) in features.iter().zip(&labels) {
            counts[l] += 1;
            for (acc, v) in sums[l].iter_mut().zip(f) {
                *acc += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // steal the point farthest from its centroid
                let far = features
                    .iter()
                    .enumerate()
                    .map(|(i, f)| (i, dist2(f, &codebook[labels[i]])))
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap();
                codebook[c] = features[far].clone();
                labels[far] = c;
            } else {
                for (j, acc) in sums[c].iter().enumerate() {
                    codebook[c][j] = acc / counts[c] as f64;
                }
            }
        }
    }

    Ok(Quantization {
        codebook,
        labels,
        wcss: wcss_trace,
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
