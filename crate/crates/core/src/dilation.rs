//! Dilation of a branching HMM to a deterministic one on a composite
//! alphabet.
//!
//! Each positive transition T^x[s', s] is tagged with an auxiliary label
//! y = f(s, s', x) that is injective in s' for fixed (s, x). Splitting T^x by
//! label yields tensors T^(x,y) with at most one successor per (state,
//! composite symbol), i.e. a deterministic model whose X-marginal is exactly
//! the original. The label budget d_y is the maximal branching number, and
//! labels are assigned per (s, x) block by one of four strategies.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generator::LinearGenerator;
use crate::hmm::{check_ergodic_kernel, Hmm};

pub const COMPOSITE_SEP: char = '|';

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabellingStrategy {
    /// Successors in ascending state order get labels 0, 1, 2, ...
    Sequential,
    /// Ascending transition probability, ties by successor index.
    ProbabilityAscending,
    /// Descending transition probability, ties by successor index.
    ProbabilityDescending,
    /// Uniformly random assignment per (state, symbol) block.
    Random { seed: u64 },
}

impl LabellingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            LabellingStrategy::Sequential => "sequential",
            LabellingStrategy::ProbabilityAscending => "prob-ascending",
            LabellingStrategy::ProbabilityDescending => "prob-descending",
            LabellingStrategy::Random { .. } => "random",
        }
    }

    /// Inverse of `name`; the random strategy needs its seed back.
    pub fn parse(name: &str, seed: Option<u64>) -> Result<Self> {
        match name {
            "sequential" => Ok(LabellingStrategy::Sequential),
            "prob-ascending" => Ok(LabellingStrategy::ProbabilityAscending),
            "prob-descending" => Ok(LabellingStrategy::ProbabilityDescending),
            "random" => seed.map(|seed| LabellingStrategy::Random { seed }).ok_or_else(|| {
                Error::InvalidInput("random labelling needs a seed".into())
            }),
            other => Err(Error::InvalidInput(format!(
                "unknown labelling strategy `{other}`"
            ))),
        }
    }
}

/// Label assignment f(s, s', x) -> y for every positive transition.
#[derive(Debug, Clone)]
pub struct Labelling {
    assignments: BTreeMap<(usize, usize, usize), usize>,
    aux_size: usize,
    strategy: LabellingStrategy,
}

impl Labelling {
    pub fn label(&self, s: usize, s_next: usize, x: usize) -> Option<usize> {
        self.assignments.get(&(s, s_next, x)).copied()
    }

    /// Auxiliary alphabet size d_y (maximal branching number of the source).
    pub fn aux_size(&self) -> usize {
        self.aux_size
    }

    pub fn strategy(&self) -> LabellingStrategy {
        self.strategy
    }

    pub fn assignments(&self) -> &BTreeMap<(usize, usize, usize), usize> {
        &self.assignments
    }

    /// Rebuild a labelling from stored parts (deserialization path); the
    /// label budget is validated against the assignments.
    pub fn from_parts(
        assignments: BTreeMap<(usize, usize, usize), usize>,
        aux_size: usize,
        strategy: LabellingStrategy,
    ) -> Result<Self> {
        if aux_size == 0 {
            return Err(Error::InvalidInput("auxiliary alphabet must be nonempty".into()));
        }
        if assignments.values().any(|&y| y >= aux_size) {
            return Err(Error::InvalidInput(
                "labelling assigns a label outside the auxiliary alphabet".into(),
            ));
        }
        Ok(Labelling {
            assignments,
            aux_size,
            strategy,
        })
    }
}

/// Assign labels to every positive transition of `hmm` under the given
/// strategy. The label set per (s, x) block is {0, .., k(s,x)-1}; the global
/// budget is d_y = max k.
pub fn make_labelling(hmm: &Hmm, strategy: LabellingStrategy) -> Labelling {
    let n = hmm.num_states();
    let profile = hmm.branching_profile();
    let mut assignments = BTreeMap::new();
    let mut rng = match strategy {
        LabellingStrategy::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    for s in 0..n {
        for x in 0..hmm.alphabet().len() {
            let t = hmm.transition(x);
            let mut succ: Vec<(usize, f64)> = (0..n)
                .filter(|&s2| t[(s2, s)] > 0.0)
                .map(|s2| (s2, t[(s2, s)]))
                .collect();
            match strategy {
                LabellingStrategy::Sequential => {}
                LabellingStrategy::ProbabilityAscending => {
                    succ.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
                }
                LabellingStrategy::ProbabilityDescending => {
                    succ.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                }
                LabellingStrategy::Random { .. } => {
                    succ.shuffle(rng.as_mut().unwrap());
                }
            }
            for (y, (s2, _)) in succ.iter().enumerate() {
                assignments.insert((s, *s2, x), y);
            }
        }
    }
    Labelling {
        assignments,
        aux_size: profile.max_branch(),
        strategy,
    }
}

/// Deterministic presentation of an HMM over the composite alphabet X x Y.
#[derive(Debug, Clone)]
pub struct DilatedHmm {
    base: Hmm,
    labelling: Labelling,
    /// tensors[x][y][s', s], all zeros except the entries labelled (x, y)
    tensors: Vec<Vec<DMatrix<f64>>>,
}

impl DilatedHmm {
    pub fn base(&self) -> &Hmm {
        &self.base
    }

    pub fn labelling(&self) -> &Labelling {
        &self.labelling
    }

    pub fn aux_size(&self) -> usize {
        self.labelling.aux_size
    }

    pub fn num_states(&self) -> usize {
        self.base.num_states()
    }

    pub fn tensor(&self, x: usize, y: usize) -> &DMatrix<f64> {
        &self.tensors[x][y]
    }

    pub fn tensors(&self) -> &[Vec<DMatrix<f64>>] {
        &self.tensors
    }

    /// Composite symbols "x|y" in (x, y) lexicographic order.
    pub fn composite_alphabet(&self) -> Vec<String> {
        let mut out = Vec::new();
        for x in self.base.alphabet() {
            for y in 0..self.labelling.aux_size {
                out.push(format!("{x}{COMPOSITE_SEP}{y}"));
            }
        }
        out
    }

    /// The dilated model as a plain HMM over the composite alphabet.
    pub fn to_hmm(&self) -> Result<Hmm> {
        let mut mats = Vec::new();
        for x in 0..self.tensors.len() {
            for y in 0..self.labelling.aux_size {
                mats.push(self.tensors[x][y].clone());
            }
        }
        Hmm::new(self.composite_alphabet(), mats)
    }
}

/// Split every T^x of `hmm` along the labelling. Fails if the labelling does
/// not cover the positive entries exactly or repeats a label inside a block.
pub fn dilate(hmm: &Hmm, labelling: &Labelling) -> Result<DilatedHmm> {
    let n = hmm.num_states();
    let d_y = labelling.aux_size;
    let mut tensors: Vec<Vec<DMatrix<f64>>> = hmm
        .alphabet()
        .iter()
        .map(|_| (0..d_y).map(|_| DMatrix::zeros(n, n)).collect())
        .collect();
    for (x, t) in hmm.transitions().iter().enumerate() {
        for s in 0..n {
            let mut used = vec![false; d_y];
            for s2 in 0..n {
                let v = t[(s2, s)];
                if v > 0.0 {
                    let y = labelling.label(s, s2, x).ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "labelling misses transition ({s} -> {s2}, symbol {x})"
                        ))
                    })?;
                    if y >= d_y {
                        return Err(Error::InvalidInput(format!(
                            "label {y} outside the auxiliary alphabet of size {d_y}"
                        )));
                    }
                    if used[y] {
                        return Err(Error::InvalidInput(format!(
                            "label {y} reused inside block (state {s}, symbol {x})"
                        )));
                    }
                    used[y] = true;
                    tensors[x][y][(s2, s)] = v;
                }
            }
        }
    }
    Ok(DilatedHmm {
        base: hmm.clone(),
        labelling: labelling.clone(),
        tensors,
    })
}

/// Outcome of the dilation checks: per-composite-symbol determinism, exact
/// tensor accounting, X-marginal preservation up to a word length, and
/// ergodicity of the composite model.
#[derive(Debug, Clone)]
pub struct DilationReport {
    pub deterministic: bool,
    pub mass_accounted: bool,
    pub marginals_preserved: bool,
    pub max_marginal_error: f64,
    pub ergodic: bool,
    pub checked_word_len: usize,
}

impl DilationReport {
    pub fn is_valid(&self) -> bool {
        self.deterministic && self.mass_accounted && self.marginals_preserved && self.ergodic
    }
}

const MARGINAL_TOL: f64 = 1e-12;

/// Check a dilation against its base model. Word length is capped at 6: the
/// marginal check enumerates composite words with zero-branch pruning and the
/// budget grows like (|X| d_y)^L.
pub fn verify_dilation(d: &DilatedHmm, max_word_len: usize) -> Result<DilationReport> {
    if max_word_len > 6 {
        return Err(Error::BudgetExceeded(format!(
            "marginal check capped at word length 6, got {max_word_len}"
        )));
    }
    let n = d.num_states();
    let d_y = d.aux_size();
    let nx = d.base.alphabet().len();

    let mut deterministic = true;
    for x in 0..nx {
        for y in 0..d_y {
            let t = d.tensor(x, y);
            for s in 0..n {
                if t.column(s).iter().filter(|v| **v > 0.0).count() > 1 {
                    deterministic = false;
                }
            }
        }
    }

    // every entry of T^x must be reproduced exactly by its unique label slot
    let mut mass_accounted = true;
    for (x, t) in d.base.transitions().iter().enumerate() {
        let mut sum = DMatrix::<f64>::zeros(n, n);
        for y in 0..d_y {
            sum += d.tensor(x, y);
        }
        if sum != *t {
            mass_accounted = false;
        }
    }

    // X-marginal block probabilities: sum the composite-word probabilities
    // of the dilated model per X-word and compare with the base model
    let base_gen = LinearGenerator::from_hmm(&d.base)?;
    let composite = d.to_hmm();
    let (marginals_preserved, max_marginal_error) = match composite {
        Ok(ref chmm) => {
            let dil_gen = LinearGenerator::from_hmm(chmm)?;
            let mut sums: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
            // DFS over composite words, pruning zero-probability branches
            let mut stack = vec![(Vec::<usize>::new(), dil_gen.init().clone())];
            while let Some((word, v)) = stack.pop() {
                if word.len() == max_word_len {
                    continue;
                }
                for (ci, g) in dil_gen.generators().iter().enumerate() {
                    let nv = g * &v;
                    if nv.iter().all(|e| *e == 0.0) {
                        continue;
                    }
                    let mut w = word.clone();
                    w.push(ci / d_y);
                    let p = nv.sum();
                    *sums.entry(w.clone()).or_insert(0.0) += p;
                    stack.push((w, nv));
                }
            }
            let mut max_err = 0.0f64;
            let mut visit = vec![Vec::<usize>::new()];
            for _ in 0..max_word_len {
                let mut next = Vec::new();
                for w in &visit {
                    for x in 0..nx {
                        let mut ww = w.clone();
                        ww.push(x);
                        let reference = base_gen.word_probability_idx(&ww);
                        let got = sums.get(&ww).copied().unwrap_or(0.0);
                        max_err = max_err.max((got - reference).abs());
                        next.push(ww);
                    }
                }
                visit = next;
            }
            (max_err <= MARGINAL_TOL, max_err)
        }
        Err(_) => (false, f64::INFINITY),
    };

    let mut kernel = DMatrix::<f64>::zeros(n, n);
    for row in d.tensors() {
        for t in row {
            kernel += t;
        }
    }
    let ergodic = kernel == d.base.state_kernel() && check_ergodic_kernel(&kernel).is_ok();

    Ok(DilationReport {
        deterministic,
        mass_accounted,
        marginals_preserved,
        max_marginal_error,
        ergodic,
        checked_word_len: max_word_len,
    })
}
