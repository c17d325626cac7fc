//! Linear word-probability generators: Pr(w) = readout . L^{w_L} ... L^{w_1} . init.
//!
//! The same shape covers classical models (L^x = T^x, init = pi, readout =
//! all-ones) and Liouville forms of quantum models, which is what the
//! divergence code relies on.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::hmm::Hmm;

#[derive(Debug, Clone)]
pub struct LinearGenerator {
    alphabet: Vec<String>,
    generators: Vec<DMatrix<f64>>,
    init: DVector<f64>,
    readout: RowDVector<f64>,
}

impl LinearGenerator {
    pub fn new(
        alphabet: Vec<String>,
        generators: Vec<DMatrix<f64>>,
        init: DVector<f64>,
        readout: RowDVector<f64>,
    ) -> Result<Self> {
        if alphabet.len() != generators.len() {
            return Err(Error::InvalidInput(format!(
                "{} symbols but {} generator matrices",
                alphabet.len(),
                generators.len()
            )));
        }
        let dim = init.len();
        if readout.len() != dim || generators.iter().any(|g| g.nrows() != dim || g.ncols() != dim)
        {
            return Err(Error::InvalidInput(
                "generator dimensions do not match init/readout".into(),
            ));
        }
        Ok(LinearGenerator {
            alphabet,
            generators,
            init,
            readout,
        })
    }

    pub fn from_hmm(hmm: &Hmm) -> Result<Self> {
        let pi = hmm.stationary_distribution()?;
        let n = hmm.num_states();
        LinearGenerator::new(
            hmm.alphabet().to_vec(),
            hmm.transitions().to_vec(),
            pi,
            RowDVector::from_element(n, 1.0),
        )
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn dim(&self) -> usize {
        self.init.len()
    }

    pub fn init(&self) -> &DVector<f64> {
        &self.init
    }

    pub fn readout(&self) -> &RowDVector<f64> {
        &self.readout
    }

    pub fn generators(&self) -> &[DMatrix<f64>] {
        &self.generators
    }

    pub fn symbol_index(&self, symbol: &str) -> Result<usize> {
        self.alphabet
            .iter()
            .position(|s| s == symbol)
            .ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
    }

    /// Probability of a word given as symbol indices; the first entry acts
    /// first. The empty word has probability 1 (readout of the stationary
    /// init).
    pub fn word_probability_idx(&self, word: &[usize]) -> f64 {
        let mut v = self.init.clone();
        for &x in word {
            v = &self.generators[x] * v;
        }
        (&self.readout * v)[0]
    }

    pub fn word_probability(&self, word: &[&str]) -> Result<f64> {
        let idx: Vec<usize> = word
            .iter()
            .map(|s| self.symbol_index(s))
            .collect::<Result<_>>()?;
        Ok(self.word_probability_idx(&idx))
    }

    /// Checks that word probabilities look like a distribution: every value
    /// in [-tol, 1 + tol] and each length-L family summing to 1 within tol,
    /// for L up to `max_len`.
    pub fn validate_distribution(&self, max_len: usize, tol: f64) -> Result<()> {
        let k = self.alphabet.len();
        let mut frontier = vec![self.init.clone()];
        for l in 1..=max_len {
            let mut next = Vec::with_capacity(frontier.len() * k);
            let mut total = 0.0;
            for v in &frontier {
                for g in &self.generators {
                    let nv = g * v;
                    let p = (&self.readout * &nv)[0];
                    if p < -tol || p > 1.0 + tol {
                        return Err(Error::InvalidModel(format!(
                            "length-{l} word probability {p:.3e} outside [0, 1]"
                        )));
                    }
                    total += p;
                    next.push(nv);
                }
            }
            if (total - 1.0).abs() > tol {
                return Err(Error::InvalidModel(format!(
                    "length-{l} word probabilities sum to {total:.12}"
                )));
            }
            frontier = next;
        }
        Ok(())
    }

    /// Collapse composite symbols onto their prefix before `sep`, summing the
    /// generator matrices of symbols that share a prefix. Used to take the
    /// observable-level marginal of a dilated model.
    pub fn marginalize_composite(&self, sep: char) -> Result<LinearGenerator> {
        let mut base: Vec<String> = Vec::new();
        let mut sums: Vec<DMatrix<f64>> = Vec::new();
        for (sym, g) in self.alphabet.iter().zip(&self.generators) {
            // split at the final separator so the auxiliary part never
            // contains one, while the base symbol may
            let prefix = sym
                .rsplit_once(sep)
                .map(|(a, _)| a.to_string())
                .ok_or_else(|| {
                    Error::InvalidInput(format!("symbol `{sym}` is not composite"))
                })?;
            match base.iter().position(|b| *b == prefix) {
                Some(i) => sums[i] += g,
                None => {
                    base.push(prefix);
                    sums.push(g.clone());
                }
            }
        }
        LinearGenerator::new(base, sums, self.init.clone(), self.readout.clone())
    }
}
