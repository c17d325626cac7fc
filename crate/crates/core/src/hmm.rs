//! Edge-emitting hidden Markov models over a finite alphabet.
//!
//! A model is a family of sub-stochastic matrices T^x with T^x[s', s] =
//! Pr(next state s', emit x | current state s); rows index the successor,
//! columns the current state, and the column sums over all symbols equal 1.
//! Construction rejects anything that is not stationary-ergodic (irreducible
//! plus aperiodic support graph), since the whole pipeline assumes a unique
//! stationary distribution.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::entropy_bits;

const COLUMN_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Hmm {
    alphabet: Vec<String>,
    transitions: Vec<DMatrix<f64>>,
}

impl Hmm {
    /// Validates shapes, non-negativity, per-state normalization and
    /// ergodicity before accepting the model.
    pub fn new(alphabet: Vec<String>, transitions: Vec<DMatrix<f64>>) -> Result<Self> {
        if alphabet.is_empty() {
            return Err(Error::InvalidModel("empty alphabet".into()));
        }
        if alphabet.len() != transitions.len() {
            return Err(Error::InvalidModel(format!(
                "{} symbols but {} transition matrices",
                alphabet.len(),
                transitions.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &alphabet {
            if !seen.insert(s.clone()) {
                return Err(Error::InvalidModel(format!("duplicate symbol `{s}`")));
            }
        }
        let n = transitions[0].nrows();
        if n == 0 {
            return Err(Error::InvalidModel("zero states".into()));
        }
        for (x, t) in transitions.iter().enumerate() {
            if t.nrows() != n || t.ncols() != n {
                return Err(Error::InvalidModel(format!(
                    "transition matrix for `{}` is {}x{}, expected {}x{}",
                    alphabet[x],
                    t.nrows(),
                    t.ncols(),
                    n,
                    n
                )));
            }
            for v in t.iter() {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "negative or non-finite entry in matrix for `{}`",
                        alphabet[x]
                    )));
                }
            }
        }
        for s in 0..n {
            let total: f64 = transitions.iter().map(|t| t.column(s).sum()).sum();
            if (total - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::InvalidModel(format!(
                    "outgoing probability from state {s} sums to {total:.12}, expected 1"
                )));
            }
        }
        let model = Hmm {
            alphabet,
            transitions,
        };
        model.check_ergodic()?;
        Ok(model)
    }

    pub fn num_states(&self) -> usize {
        self.transitions[0].nrows()
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn transitions(&self) -> &[DMatrix<f64>] {
        &self.transitions
    }

    pub fn transition(&self, x: usize) -> &DMatrix<f64> {
        &self.transitions[x]
    }

    pub fn symbol_index(&self, symbol: &str) -> Result<usize> {
        self.alphabet
            .iter()
            .position(|s| s == symbol)
            .ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
    }

    /// Symbol-summed state transition matrix (column-stochastic).
    pub fn state_kernel(&self) -> DMatrix<f64> {
        let n = self.num_states();
        let mut p = DMatrix::zeros(n, n);
        for t in &self.transitions {
            p += t;
        }
        p
    }

    fn check_ergodic(&self) -> Result<()> {
        let p = self.state_kernel();
        check_ergodic_kernel(&p)
    }

    /// Unique stationary state distribution: (sum_x T^x) pi = pi, sum pi = 1.
    ///
    /// Solved as a bordered linear system; the residual is verified to 1e-12
    /// and a failure surfaces as a solver error with diagnostics.
    pub fn stationary_distribution(&self) -> Result<DVector<f64>> {
        let p = self.state_kernel();
        stationary_of_kernel(&p)
    }

    /// Shannon entropy of the stationary state distribution, in bits. This is
    /// the memory cost of the given presentation; it only equals the process
    /// statistical complexity when the presentation is a minimal predictive
    /// one.
    pub fn stationary_state_entropy(&self) -> Result<f64> {
        let pi = self.stationary_distribution()?;
        Ok(entropy_bits(pi.as_slice()))
    }

    /// Successor counts k(s, x) = |{s' : T^x[s', s] > 0}| together with the
    /// derived auxiliary-alphabet size and unifilarity flag.
    pub fn branching_profile(&self) -> BranchingProfile {
        let n = self.num_states();
        let mut counts = vec![vec![0usize; self.alphabet.len()]; n];
        for (x, t) in self.transitions.iter().enumerate() {
            for s in 0..n {
                counts[s][x] = t.column(s).iter().filter(|v| **v > 0.0).count();
            }
        }
        let max_branch = counts
            .iter()
            .flat_map(|row| row.iter().copied())
            .max()
            .unwrap_or(0)
            .max(1);
        let unifilar = counts.iter().all(|row| row.iter().all(|&k| k <= 1));
        BranchingProfile {
            counts,
            max_branch,
            unifilar,
        }
    }

    /// Draw a symbol sequence of the given length from the stationary
    /// process. Ties in the cumulative scan resolve to the lowest index.
    pub fn sample_sequence<R: Rng>(&self, length: usize, rng: &mut R) -> Result<Vec<usize>> {
        let pi = self.stationary_distribution()?;
        let n = self.num_states();
        let mut state = sample_index(pi.as_slice(), rng)?;
        let mut out = Vec::with_capacity(length);
        let mut weights = vec![0.0f64; self.alphabet.len() * n];
        for _ in 0..length {
            for (x, t) in self.transitions.iter().enumerate() {
                for s2 in 0..n {
                    weights[x * n + s2] = t[(s2, state)];
                }
            }
            let pick = sample_index(&weights, rng)?;
            out.push(pick / n);
            state = pick % n;
        }
        Ok(out)
    }
}

fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Renormalization(
            "sampling weights sum to zero".into(),
        ));
    }
    let u = rng.gen_range(0.0..1.0) * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(weights.len() - 1)
}

/// Per-(state, symbol) successor counts.
#[derive(Debug, Clone)]
pub struct BranchingProfile {
    counts: Vec<Vec<usize>>,
    max_branch: usize,
    unifilar: bool,
}

impl BranchingProfile {
    pub fn k(&self, state: usize, symbol: usize) -> usize {
        self.counts[state][symbol]
    }

    /// Auxiliary-alphabet size d_y = max_{s,x} k(s, x), at least 1.
    pub fn max_branch(&self) -> usize {
        self.max_branch
    }

    pub fn is_unifilar(&self) -> bool {
        self.unifilar
    }
}

/// Irreducibility plus aperiodicity of a column-indexed support graph
/// (edge s -> s' iff p[s', s] > 0).
pub fn check_ergodic_kernel(p: &DMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    let forward = reach(p, false);
    if forward.iter().any(|&r| !r) {
        return Err(Error::NotErgodic(
            "support graph is not strongly connected (unreachable states)".into(),
        ));
    }
    let backward = reach(p, true);
    if backward.iter().any(|&r| !r) {
        return Err(Error::NotErgodic(
            "support graph is not strongly connected (states that cannot return)".into(),
        ));
    }
    // gcd of cycle lengths via BFS levels: for every edge u -> v,
    // gcd over |level(u) + 1 - level(v)|
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if p[(v, u)] > 0.0 && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g: u64 = 0;
    for u in 0..n {
        for v in 0..n {
            if p[(v, u)] > 0.0 {
                let d = level[u] as i64 + 1 - level[v] as i64;
                g = gcd(g, d.unsigned_abs());
            }
        }
    }
    if g != 1 {
        return Err(Error::NotErgodic(format!(
            "support graph is periodic with period {g}"
        )));
    }
    Ok(())
}

fn reach(p: &DMatrix<f64>, transpose: bool) -> Vec<bool> {
    let n = p.nrows();
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut stack = vec![0usize];
    while let Some(u) = stack.pop() {
        for v in 0..n {
            let edge = if transpose { p[(u, v)] } else { p[(v, u)] };
            if edge > 0.0 && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Stationary distribution of a column-stochastic kernel with a unique
/// eigenvalue-1 eigenvector.
pub fn stationary_of_kernel(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    // (P - I) pi = 0 with the last row replaced by the normalization
    let mut m = p - DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for c in 0..n {
        m[(n - 1, c)] = 1.0;
    }
    rhs[n - 1] = 1.0;
    let lu = m.lu();
    let pi = lu.solve(&rhs).ok_or(Error::SolverFailure {
        what: "stationary distribution (singular bordered system)".into(),
        iterations: 0,
        residual: f64::NAN,
    })?;
    let resid = (p * &pi - &pi).norm();
    if resid > 1e-12 {
        return Err(Error::SolverFailure {
            what: "stationary distribution".into(),
            iterations: 1,
            residual: resid,
        });
    }
    Ok(pi)
}

/// Ring source with tunable branching: from state i, emit 0 with
/// probability p and stay; emit 1 with probability (1-p)/2 and stay; emit 1
/// with probability (1-p)/2 and hop to (i+1) mod n. Every state behaves
/// identically, so the stationary distribution is uniform, and the shared
/// symbol on the stay/hop branch makes the model non-unifilar with branching
/// number 2.
pub fn build_tns(n: usize, p: f64) -> Result<Hmm> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "ring source needs at least 2 states, got {n}"
        )));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidInput(format!(
            "ring source parameter must lie strictly inside (0, 1), got {p}"
        )));
    }
    let mut t0 = DMatrix::<f64>::zeros(n, n);
    let mut t1 = DMatrix::<f64>::zeros(n, n);
    let half = (1.0 - p) / 2.0;
    for i in 0..n {
        t0[(i, i)] = p;
        t1[(i, i)] = half;
        t1[((i + 1) % n, i)] = half;
    }
    Hmm::new(vec!["0".into(), "1".into()], vec![t0, t1])
}

fn index_alphabet(alphabet_size: usize) -> Vec<String> {
    (0..alphabet_size).map(|x| x.to_string()).collect()
}

/// Random fully supported model: every (state, symbol, successor) weight is
/// drawn from a range bounded away from zero, so the summed kernel is
/// strictly positive and the model is always ergodic.
pub fn random_ergodic_hmm<R: Rng>(
    num_states: usize,
    alphabet_size: usize,
    rng: &mut R,
) -> Result<Hmm> {
    if num_states == 0 || alphabet_size == 0 {
        return Err(Error::InvalidInput(
            "need at least one state and one symbol".into(),
        ));
    }
    let mut mats: Vec<DMatrix<f64>> = (0..alphabet_size)
        .map(|_| {
            DMatrix::from_fn(num_states, num_states, |_, _| rng.gen_range(0.05..1.0f64))
        })
        .collect();
    for s in 0..num_states {
        let total: f64 = mats.iter().map(|t| t.column(s).sum()).sum();
        for t in &mut mats {
            for s2 in 0..num_states {
                t[(s2, s)] /= total;
            }
        }
    }
    Hmm::new(index_alphabet(alphabet_size), mats)
}

/// Random deterministic (unifilar) model: from each state, every symbol
/// leads to exactly one successor. Symbol 0 is wired around a ring so the
/// state graph always stays connected; the draw is retried until the
/// resulting kernel is also aperiodic.
pub fn random_unifilar_hmm<R: Rng>(
    num_states: usize,
    alphabet_size: usize,
    rng: &mut R,
) -> Result<Hmm> {
    if num_states == 0 || alphabet_size == 0 {
        return Err(Error::InvalidInput(
            "need at least one state and one symbol".into(),
        ));
    }
    for _ in 0..1000 {
        let mut mats: Vec<DMatrix<f64>> = (0..alphabet_size)
            .map(|_| DMatrix::zeros(num_states, num_states))
            .collect();
        for s in 0..num_states {
            let weights: Vec<f64> = (0..alphabet_size).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for (x, w) in weights.iter().enumerate() {
                let s2 = if x == 0 {
                    (s + 1) % num_states
                } else {
                    rng.gen_range(0..num_states)
                };
                mats[x][(s2, s)] = w / total;
            }
        }
        match Hmm::new(index_alphabet(alphabet_size), mats) {
            Ok(m) => return Ok(m),
            Err(Error::NotErgodic(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::SolverFailure {
        what: "no ergodic unifilar draw in 1000 attempts".into(),
        iterations: 1000,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub fn branching_two_state() -> Hmm {
        // state 0: emit 0 w.p. 1/2 stay, emit 0 w.p. 1/4 -> 1, emit 1 w.p. 1/4 -> 1
        // state 1: emit 1 w.p. 1 -> 0
        let t0 = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.25, 0.0]);
        let t1 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.25, 0.0]);
        Hmm::new(vec!["0".into(), "1".into()], vec![t0, t1]).unwrap()
    }

    #[test]
    fn single_state_model_is_trivially_stationary() {
        let t = DMatrix::from_row_slice(1, 1, &[1.0]);
        let m = Hmm::new(vec!["a".into()], vec![t]).unwrap();
        let pi = m.stationary_distribution().unwrap();
        assert_relative_eq!(pi[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(m.stationary_state_entropy().unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn doubly_stochastic_kernel_has_uniform_stationary() {
        let t = DMatrix::from_row_slice(3, 3, &[0.5, 0.3, 0.2, 0.2, 0.5, 0.3, 0.3, 0.2, 0.5]);
        let m = Hmm::new(vec!["a".into()], vec![t]).unwrap();
        let pi = m.stationary_distribution().unwrap();
        for i in 0..3 {
            assert_relative_eq!(pi[i], 1.0 / 3.0, epsilon = 1e-13);
        }
        assert_relative_eq!(
            m.stationary_state_entropy().unwrap(),
            3f64.log2(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn branching_two_state_statistics() {
        let m = branching_two_state();
        let pi = m.stationary_distribution().unwrap();
        assert_relative_eq!(pi[0], 2.0 / 3.0, epsilon = 1e-13);
        assert_relative_eq!(pi[1], 1.0 / 3.0, epsilon = 1e-13);
        let h = m.stationary_state_entropy().unwrap();
        assert_relative_eq!(h, 0.9182958340544896, epsilon = 1e-12);
        let b = m.branching_profile();
        assert_eq!(b.k(0, 0), 2);
        assert_eq!(b.k(0, 1), 1);
        assert_eq!(b.k(1, 0), 0);
        assert_eq!(b.k(1, 1), 1);
        assert_eq!(b.max_branch(), 2);
        assert!(!b.is_unifilar());
    }

    #[test]
    fn fully_connected_single_symbol_branches_maximally() {
        let t = DMatrix::from_element(4, 4, 0.25);
        let m = Hmm::new(vec!["a".into()], vec![t]).unwrap();
        assert_eq!(m.branching_profile().max_branch(), 4);
    }

    #[test]
    fn unifilar_cycle_detected() {
        // self loop on 0 keeps the chain aperiodic; each (state, symbol)
        // pair has a single successor
        let ta = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.0]);
        let tb = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.7, 0.0]);
        let m = Hmm::new(vec!["a".into(), "b".into()], vec![ta, tb]).unwrap();
        assert!(m.branching_profile().is_unifilar());
    }

    #[test]
    fn periodic_chain_rejected() {
        let t = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let err = Hmm::new(vec!["a".into()], vec![t]).unwrap_err();
        assert!(matches!(err, Error::NotErgodic(_)));
    }

    #[test]
    fn reducible_chain_rejected() {
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 0.7]);
        let err = Hmm::new(vec!["a".into()], vec![t]).unwrap_err();
        assert!(matches!(err, Error::NotErgodic(_)));
    }

    #[test]
    fn bad_normalization_rejected() {
        let t = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.4, 0.5]);
        let err = Hmm::new(vec!["a".into()], vec![t]).unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn ring_source_properties() {
        for &n in &[2usize, 5, 8] {
            for &p in &[0.2, 0.5, 0.8] {
                let m = build_tns(n, p).unwrap();
                let pi = m.stationary_distribution().unwrap();
                for i in 0..n {
                    assert_relative_eq!(pi[i], 1.0 / n as f64, epsilon = 1e-12);
                }
                let b = m.branching_profile();
                assert_eq!(b.max_branch(), 2);
                assert!(!b.is_unifilar());
            }
        }
        assert!(build_tns(1, 0.5).is_err());
        assert!(build_tns(4, 0.0).is_err());
        assert!(build_tns(4, 1.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        use rand::SeedableRng;
        let m = branching_two_state();
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a = m.sample_sequence(200, &mut r1).unwrap();
        let b = m.sample_sequence(200, &mut r2).unwrap();
        assert_eq!(a, b);
    }
}
