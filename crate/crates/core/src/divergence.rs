//! Model distance and compressibility certificates.
//!
//! The co-emission rate compares two linear generators through the dominant
//! moduli of three paired transfer maps; the finite-length fidelity rate
//! enumerates words exhaustively; the certificates tie the spectrum tail to
//! its entropy and the entropy to the rank of the stacked site tensors.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::LinearGenerator;
use crate::imps::{spectrum_diagnostics, Imps};
use crate::linalg::{dominant_eig, DominantEig, SolverSettings};

const SELF_PAIR_NORMALIZATION_TOL: f64 = 1e-9;
const DATA_PROCESSING_SLACK: f64 = 1e-12;
const WORD_BUDGET: usize = 2_000_000;

#[derive(Debug, Clone, Serialize)]
pub struct CdrResult {
    /// bits per symbol
    pub rate: f64,
    pub mu_p: f64,
    pub mu_q: f64,
    pub mu_pq: f64,
    /// dominant eigenvalue of a paired map detected as a complex or +/- pair
    pub nonreal: bool,
}

/// R = -1/2 log2(mu_PQ / sqrt(mu_P mu_Q)) from the dominant moduli of the
/// three paired maps x -> sum_a L^a x (M^a)^T. Identical inputs share the
/// start matrix and therefore produce bitwise-equal moduli, making the
/// self-distance exactly zero.
pub fn cdr(p: &LinearGenerator, q: &LinearGenerator, settings: &SolverSettings) -> Result<CdrResult> {
    if p.alphabet() != q.alphabet() {
        return Err(Error::AlphabetMismatch(format!(
            "co-emission rate needs one alphabet, got {:?} vs {:?}",
            p.alphabet(),
            q.alphabet()
        )));
    }
    let ep = paired_dominant("co-emission E_P", p.generators(), p.generators(), settings)?;
    let eq = paired_dominant("co-emission E_Q", q.generators(), q.generators(), settings)?;
    let epq = paired_dominant("co-emission E_PQ", p.generators(), q.generators(), settings)?;
    if !(ep.modulus > 0.0 && eq.modulus > 0.0) {
        return Err(Error::SolverFailure {
            what: "vanishing self transfer modulus".into(),
            iterations: ep.iterations.max(eq.iterations),
            residual: ep.modulus.min(eq.modulus),
        });
    }
    let rate = -0.5 * (epq.modulus / (ep.modulus * eq.modulus).sqrt()).log2();
    Ok(CdrResult {
        rate,
        mu_p: ep.modulus,
        mu_q: eq.modulus,
        mu_pq: epq.modulus,
        nonreal: ep.nonreal || eq.nonreal || epq.nonreal,
    })
}

fn paired_dominant(
    what: &str,
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    settings: &SolverSettings,
) -> Result<DominantEig> {
    let da = a[0].nrows();
    let db = b[0].nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7c3d_55e1 ^ (((da as u64) << 32) | db as u64));
    let start = DMatrix::from_fn(da, db, |_, _| rng.gen_range(-1.0..1.0));
    dominant_eig(
        what,
        |x| {
            let mut out = DMatrix::zeros(da, db);
            for (ta, tb) in a.iter().zip(b.iter()) {
                if ta.amax() == 0.0 || tb.amax() == 0.0 {
                    continue;
                }
                out += ta * x * tb.transpose();
            }
            out
        },
        start,
        settings,
    )
}

/// Finite-length fidelity divergence estimates -1/(2L) log2 sum_w
/// sqrt(P(w) Q(w)) for L = 1..=l_max, by exhaustive enumeration.
pub fn cfdr_finite_l(p: &LinearGenerator, q: &LinearGenerator, l_max: usize) -> Result<Vec<f64>> {
    if p.alphabet() != q.alphabet() {
        return Err(Error::AlphabetMismatch(format!(
            "fidelity rate needs one alphabet, got {:?} vs {:?}",
            p.alphabet(),
            q.alphabet()
        )));
    }
    if l_max == 0 {
        return Ok(Vec::new());
    }
    if l_max > 10 || p.alphabet().len() > 4 {
        return Err(Error::BudgetExceeded(format!(
            "exhaustive enumeration limited to L <= 10 over at most 4 symbols; \
             got L = {} over {} symbols, pick a smaller horizon",
            l_max,
            p.alphabet().len()
        )));
    }

    if generators_identical(p, q) {
        // the Bhattacharyya sum telescopes to sum_w P(w) = 1, which the
        // normalization check certifies; the rate is exactly zero
        let m = p
            .generators()
            .iter()
            .fold(DMatrix::zeros(p.dim(), p.dim()), |acc, g| acc + g);
        let mut v = p.init().clone();
        for _ in 0..l_max {
            v = &m * v;
        }
        let total = (p.readout() * v)[0];
        if (total - 1.0).abs() > SELF_PAIR_NORMALIZATION_TOL {
            return Err(Error::InvalidModel(format!(
                "length-{l_max} word probabilities sum to {total:.12}, not a distribution"
            )));
        }
        return Ok(vec![0.0; l_max]);
    }

    let mut sums = vec![0.0f64; l_max + 1];
    let mut stack = vec![(0usize, p.init().clone(), q.init().clone())];
    while let Some((depth, pv, qv)) = stack.pop() {
        if depth == l_max {
            continue;
        }
        for (gp, gq) in p.generators().iter().zip(q.generators()) {
            let npv = gp * &pv;
            let nqv = gq * &qv;
            let pp = (p.readout() * &npv)[0].max(0.0);
            let pq = (q.readout() * &nqv)[0].max(0.0);
            sums[depth + 1] += (pp * pq).sqrt();
            if npv.amax() != 0.0 || nqv.amax() != 0.0 {
                stack.push((depth + 1, npv, nqv));
            }
        }
    }
    Ok((1..=l_max)
        .map(|l| -sums[l].log2() / (2.0 * l as f64))
        .collect())
}

fn generators_identical(p: &LinearGenerator, q: &LinearGenerator) -> bool {
    p.dim() == q.dim()
        && p.init() == q.init()
        && p.readout() == q.readout()
        && p.generators() == q.generators()
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundCertificate {
    pub d_tilde: usize,
    /// spectrum weight beyond the top d_tilde values
    pub tail: f64,
    pub entropy_bits: f64,
    pub slice_rank: usize,
    /// H(lambda) / log2(d_tilde), an upper bound on the tail
    pub entropy_bound: f64,
    /// log2(rank) / log2(d_tilde), the structural bound up to its constant
    pub rank_bound: f64,
    pub tail_within_entropy_bound: bool,
    pub entropy_within_rank_bound: bool,
}

impl BoundCertificate {
    pub fn holds(&self) -> bool {
        self.tail_within_entropy_bound && self.entropy_within_rank_bound
    }
}

/// Certificate tying the canonical spectrum of `m` to its compressibility
/// at bond budget `d_tilde`; requires the spectrum (canonical gauge).
pub fn certify_bounds(m: &Imps, d_tilde: usize) -> Result<BoundCertificate> {
    if d_tilde < 2 {
        return Err(Error::InvalidInput(
            "certificates need d_tilde >= 2 (log2 of 1 vanishes)".into(),
        ));
    }
    let schmidt = m.schmidt().ok_or_else(|| {
        Error::InvalidInput("certificates need a canonically gauged state with its spectrum".into())
    })?;
    let diag = spectrum_diagnostics(schmidt, d_tilde, m)?;
    let log_d = (d_tilde as f64).log2();
    let entropy_bound = diag.entropy / log_d;
    let rank_bound = (diag.slice_rank as f64).log2() / log_d;
    Ok(BoundCertificate {
        d_tilde,
        tail: diag.tail,
        entropy_bits: diag.entropy,
        slice_rank: diag.slice_rank,
        entropy_bound,
        rank_bound,
        tail_within_entropy_bound: diag.tail <= entropy_bound + 1e-12,
        entropy_within_rank_bound: diag.entropy <= (diag.slice_rank as f64).log2() + 1e-9,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DataProcessingRow {
    pub l: usize,
    /// Bhattacharyya coefficient after marginalizing to the base alphabet
    pub bc_base: f64,
    /// Bhattacharyya coefficient over composite words
    pub bc_composite: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataProcessingReport {
    pub rows: Vec<DataProcessingRow>,
    pub all_hold: bool,
}

/// Marginalizing composite words to the base alphabet cannot decrease the
/// Bhattacharyya coefficient; report the comparison for each length.
pub fn data_processing_check(
    dilated_p: &LinearGenerator,
    dilated_q: &LinearGenerator,
    l_max: usize,
) -> Result<DataProcessingReport> {
    if dilated_p.alphabet() != dilated_q.alphabet() {
        return Err(Error::AlphabetMismatch(
            "data-processing check needs one composite alphabet".into(),
        ));
    }
    let base_p = dilated_p.marginalize_composite(crate::dilation::COMPOSITE_SEP)?;
    let base_q = dilated_q.marginalize_composite(crate::dilation::COMPOSITE_SEP)?;
    if base_p.alphabet() != base_q.alphabet() {
        return Err(Error::InvalidInput(
            "marginalized alphabets disagree between the two models".into(),
        ));
    }
    let k = dilated_p.alphabet().len().max(2);
    if k.pow(l_max as u32) > WORD_BUDGET {
        return Err(Error::BudgetExceeded(format!(
            "{k}^{l_max} composite words exceed the enumeration budget"
        )));
    }
    let bc_comp = bhattacharyya_by_length(dilated_p, dilated_q, l_max);
    let bc_base = bhattacharyya_by_length(&base_p, &base_q, l_max);
    let rows: Vec<DataProcessingRow> = (1..=l_max)
        .map(|l| {
            let holds = bc_base[l - 1] >= bc_comp[l - 1] - DATA_PROCESSING_SLACK;
            DataProcessingRow {
                l,
                bc_base: bc_base[l - 1],
                bc_composite: bc_comp[l - 1],
                holds,
            }
        })
        .collect();
    let all_hold = rows.iter().all(|r| r.holds);
    Ok(DataProcessingReport { rows, all_hold })
}

fn bhattacharyya_by_length(p: &LinearGenerator, q: &LinearGenerator, l_max: usize) -> Vec<f64> {
    let mut sums = vec![0.0f64; l_max + 1];
    let mut stack = vec![(0usize, p.init().clone(), q.init().clone())];
    while let Some((depth, pv, qv)) = stack.pop() {
        if depth == l_max {
            continue;
        }
        for (gp, gq) in p.generators().iter().zip(q.generators()) {
            let npv = gp * &pv;
            let nqv = gq * &qv;
            let pp = (p.readout() * &npv)[0].max(0.0);
            let pq = (q.readout() * &nqv)[0].max(0.0);
            sums[depth + 1] += (pp * pq).sqrt();
            if npv.amax() != 0.0 || nqv.amax() != 0.0 {
                stack.push((depth + 1, npv, nqv));
            }
        }
    }
    sums.remove(0);
    sums
}
