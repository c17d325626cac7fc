//! Quantum model reconstruction from compressed site tensors.
//!
//! The compressed left-canonical tensors over the composite alphabet are
//! regrouped by observed symbol into Kraus families: the instrument
//! E_x(rho) = sum_y A^(x,y) rho A^(x,y)^T measures x while the auxiliary
//! branch y is summed out. The stationary memory state rho_star is the
//! fixed point of the unconditional channel sum_x E_x. Word probabilities,
//! sampling, Liouville-space generators and the statistical memory S(rho_star)
//! all derive from that pair.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dilation::COMPOSITE_SEP;
use crate::error::{Error, Result};
use crate::generator::LinearGenerator;
use crate::linalg::{dominant_eig, entropy_bits, psd_project, sym_eigen, vec_rm, SolverSettings};
use crate::truncation::TruncationResult;

const COMPLETENESS_TOL: f64 = 1e-9;
const TRACE_TOL: f64 = 1e-12;
const FIXED_POINT_TOL: f64 = 1e-10;
const NORMALIZATION_TOL: f64 = 1e-10;
const VEC_SELF_TEST_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct QhmmModel {
    alphabet: Vec<String>,
    aux_labels: Vec<Vec<String>>,
    kraus: Vec<Vec<DMatrix<f64>>>,
    rho_star: DMatrix<f64>,
}

impl QhmmModel {
    /// Validates completeness, the stationary-state normalization and the
    /// fixed-point property before accepting the model.
    pub fn new(
        alphabet: Vec<String>,
        aux_labels: Vec<Vec<String>>,
        kraus: Vec<Vec<DMatrix<f64>>>,
        rho_star: DMatrix<f64>,
    ) -> Result<Self> {
        if alphabet.is_empty() || alphabet.len() != kraus.len() || aux_labels.len() != kraus.len() {
            return Err(Error::InvalidModel(
                "alphabet, aux labels and Kraus families must align".into(),
            ));
        }
        let d = rho_star.nrows();
        if rho_star.ncols() != d || d == 0 {
            return Err(Error::InvalidModel("memory state must be square".into()));
        }
        let mut gram = DMatrix::<f64>::zeros(d, d);
        for (fam, labels) in kraus.iter().zip(&aux_labels) {
            if fam.is_empty() || fam.len() != labels.len() {
                return Err(Error::InvalidModel(
                    "every symbol needs a labelled Kraus family".into(),
                ));
            }
            for k in fam {
                if k.nrows() != d || k.ncols() != d {
                    return Err(Error::InvalidModel("Kraus dimensions mismatch".into()));
                }
                gram += k.transpose() * k;
            }
        }
        let completeness = (&gram - DMatrix::identity(d, d)).amax();
        if completeness > COMPLETENESS_TOL {
            return Err(Error::Gauge(format!(
                "Kraus completeness violated by {completeness:.3e}, re-canonicalize first"
            )));
        }
        if ((&rho_star - rho_star.transpose()).amax()) > 1e-10 {
            return Err(Error::InvalidModel("memory state must be symmetric".into()));
        }
        if (rho_star.trace() - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidModel(format!(
                "memory state trace {} != 1",
                rho_star.trace()
            )));
        }
        let eigs = sym_eigen(&rho_star).eigenvalues;
        if eigs.iter().any(|&e| e < -1e-10) {
            return Err(Error::InvalidModel("memory state not PSD".into()));
        }
        let model = QhmmModel {
            alphabet,
            aux_labels,
            kraus,
            rho_star,
        };
        let hop = model.unconditional(&model.rho_star);
        let drift = (&hop - &model.rho_star).norm();
        if drift > FIXED_POINT_TOL {
            return Err(Error::InvalidModel(format!(
                "memory state drifts by {drift:.3e} under the channel"
            )));
        }
        Ok(model)
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn aux_labels(&self, x: usize) -> &[String] {
        &self.aux_labels[x]
    }

    pub fn kraus(&self, x: usize) -> &[DMatrix<f64>] {
        &self.kraus[x]
    }

    pub fn rho_star(&self) -> &DMatrix<f64> {
        &self.rho_star
    }

    pub fn bond_dim(&self) -> usize {
        self.rho_star.nrows()
    }

    pub fn symbol_index(&self, symbol: &str) -> Result<usize> {
        self.alphabet
            .iter()
            .position(|s| s == symbol)
            .ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
    }

    /// E_x(rho) = sum_y A^(x,y) rho A^(x,y)^T.
    pub fn instrument(&self, x: usize, rho: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.bond_dim();
        let mut out = DMatrix::zeros(d, d);
        for k in &self.kraus[x] {
            if k.amax() == 0.0 {
                continue;
            }
            out += k * rho * k.transpose();
        }
        out
    }

    pub fn unconditional(&self, rho: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.bond_dim();
        let mut out = DMatrix::zeros(d, d);
        for x in 0..self.alphabet.len() {
            out += self.instrument(x, rho);
        }
        out
    }
}

/// Regroup compressed tensors by observed symbol and solve for the
/// stationary memory state. Composite labels are split on the final
/// separator; the suffix must be one of the auxiliary labels.
pub fn reconstruct_qhmm(
    t: &TruncationResult,
    aux_alphabet: &[String],
    settings: &SolverSettings,
) -> Result<QhmmModel> {
    reconstruct_from_tensors(
        t.imps.alphabet(),
        t.imps.tensors(),
        aux_alphabet,
        settings,
    )
}

pub fn reconstruct_from_tensors(
    composite_alphabet: &[String],
    tensors: &[DMatrix<f64>],
    aux_alphabet: &[String],
    settings: &SolverSettings,
) -> Result<QhmmModel> {
    if aux_alphabet.is_empty() {
        return Err(Error::InvalidInput("auxiliary alphabet is empty".into()));
    }
    if aux_alphabet.iter().any(|y| y.contains(COMPOSITE_SEP)) {
        return Err(Error::InvalidInput(
            "auxiliary labels must not contain the separator".into(),
        ));
    }
    let mut alphabet: Vec<String> = Vec::new();
    let mut aux_labels: Vec<Vec<String>> = Vec::new();
    let mut kraus: Vec<Vec<DMatrix<f64>>> = Vec::new();
    for (sym, tensor) in composite_alphabet.iter().zip(tensors.iter()) {
        let (x, y) = sym.rsplit_once(COMPOSITE_SEP).ok_or_else(|| {
            Error::InvalidInput(format!("symbol {sym:?} is not a composite label"))
        })?;
        if !aux_alphabet.iter().any(|a| a == y) {
            return Err(Error::InvalidInput(format!(
                "auxiliary part {y:?} of {sym:?} not in the auxiliary alphabet"
            )));
        }
        match alphabet.iter().position(|s| s == x) {
            Some(i) => {
                aux_labels[i].push(y.to_string());
                kraus[i].push(tensor.clone());
            }
            None => {
                alphabet.push(x.to_string());
                aux_labels.push(vec![y.to_string()]);
                kraus.push(vec![tensor.clone()]);
            }
        }
    }

    let d = tensors[0].nrows();
    let channel = |rho: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(d, d);
        for t in tensors {
            if t.amax() == 0.0 {
                continue;
            }
            out += t * rho * t.transpose();
        }
        out
    };
    let start = DMatrix::<f64>::identity(d, d) / d as f64;
    let eig = dominant_eig("memory-state", |m| channel(&m), start, settings)?;
    let mut rho = eig.matrix;
    if rho.trace() < 0.0 {
        rho = -rho;
    }
    rho = (&rho + rho.transpose()) * 0.5;
    rho = psd_project(&rho);
    let tr = rho.trace();
    if !(tr > 0.0) {
        return Err(Error::Renormalization(
            "stationary memory state has non-positive trace".into(),
        ));
    }
    rho /= tr;
    QhmmModel::new(alphabet, aux_labels, kraus, rho)
}

/// Pr(x_1 ... x_L) = Tr(E_{x_L} ( ... E_{x_1}(rho_star))), first symbol
/// applied first.
pub fn word_probability_q(q: &QhmmModel, word: &[usize]) -> Result<f64> {
    let mut rho = q.rho_star().clone();
    for &x in word {
        if x >= q.alphabet().len() {
            return Err(Error::InvalidInput(format!(
                "symbol index {x} outside alphabet of size {}",
                q.alphabet().len()
            )));
        }
        rho = q.instrument(x, &rho);
    }
    Ok(rho.trace())
}

/// Sequential measurement sampling: draw x with weight Tr E_x(rho), then
/// renormalize the post-measurement state. Deterministic given the seed.
pub fn sample_sequence(q: &QhmmModel, length: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rho = q.rho_star().clone();
    let n = q.alphabet().len();
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let branches: Vec<DMatrix<f64>> = (0..n).map(|x| q.instrument(x, &rho)).collect();
        let probs: Vec<f64> = branches.iter().map(|b| b.trace().max(0.0)).collect();
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Renormalization(format!(
                "all outcome probabilities vanished; memory state = {rho}"
            )));
        }
        let mut u = rng.gen::<f64>() * total;
        let mut choice = n - 1;
        for (x, p) in probs.iter().enumerate() {
            if u < *p {
                choice = x;
                break;
            }
            u -= p;
        }
        rho = &branches[choice] / probs[choice];
        out.push(choice);
    }
    Ok(out)
}

/// C_q = S(rho_star) in bits.
pub fn quantum_memory(q: &QhmmModel) -> f64 {
    let eigs = sym_eigen(q.rho_star()).eigenvalues;
    entropy_bits(eigs.as_slice())
}

#[derive(Debug, Clone)]
pub struct LiouvilleGenerators {
    pub generators: Vec<DMatrix<f64>>,
    pub rho_vec: DVector<f64>,
    pub omega: DVector<f64>,
}

impl LiouvilleGenerators {
    /// Pr(word) = <<omega| G^(x_L) ... G^(x_1) |rho_star>>.
    pub fn word_probability(&self, word: &[usize]) -> Result<f64> {
        let mut v = self.rho_vec.clone();
        for &x in word {
            let g = self.generators.get(x).ok_or_else(|| {
                Error::InvalidInput(format!("symbol index {x} out of range"))
            })?;
            v = g * v;
        }
        Ok(self.omega.dot(&v))
    }
}

/// G^(x) = sum_y A^(x,y) (x) A^(x,y) so that G^(x) vec(rho) = vec(E_x(rho))
/// under the row-stacking vec with vec(A rho B) = (A (x) B^T) vec(rho). The
/// identity is self-tested on random triples at construction.
pub fn liouville_generators(
    q: &QhmmModel,
    settings_unused: &SolverSettings,
) -> Result<LiouvilleGenerators> {
    let _ = settings_unused;
    let d = q.bond_dim();
    vec_identity_self_test(d.max(2))?;
    let generators: Vec<DMatrix<f64>> = (0..q.alphabet().len())
        .map(|x| {
            let mut g = DMatrix::zeros(d * d, d * d);
            for k in q.kraus(x) {
                g += k.kronecker(k);
            }
            g
        })
        .collect();
    let rho_vec: DVector<f64> = vec_rm(q.rho_star()).column(0).into_owned();
    let omega: DVector<f64> = vec_rm(&DMatrix::<f64>::identity(d, d)).column(0).into_owned();
    let mut total = DVector::zeros(d * d);
    for g in &generators {
        total += g * &rho_vec;
    }
    let norm = omega.dot(&total);
    if (norm - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Renormalization(format!(
            "Liouville normalization <<omega|sum_x G|rho>> = {norm}, expected 1"
        )));
    }
    Ok(LiouvilleGenerators {
        generators,
        rho_vec,
        omega,
    })
}

/// Liouville form as a linear word-probability generator over the base
/// alphabet: Pr(w) = <<omega| G^(x_L) ... G^(x_1) |rho_star>>.
pub fn linear_generator(q: &QhmmModel, settings: &SolverSettings) -> Result<LinearGenerator> {
    let lg = liouville_generators(q, settings)?;
    LinearGenerator::new(
        q.alphabet().to_vec(),
        lg.generators,
        lg.rho_vec,
        lg.omega.transpose(),
    )
}

fn vec_identity_self_test(d: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1d5c_09b7);
    for trial in 0..10 {
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let rho = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let lhs = vec_rm(&(&a * &rho * &b));
        let rhs = a.kronecker(&b.transpose()) * vec_rm(&rho);
        let err = (&lhs - &rhs).amax();
        if err > VEC_SELF_TEST_TOL {
            return Err(Error::SolverFailure {
                what: format!("vectorization self-test trial {trial}"),
                iterations: 0,
                residual: err,
            });
        }
    }
    Ok(())
}
