//! Variational bond-dimension compression of a canonical state.
//!
//! The objective is the per-site mixed-transfer fidelity: with both states
//! canonically normalized, f = |eta_mix| where eta_mix is the dominant
//! eigenvalue modulus of the mixed map x -> sum_a A^a x (B^a)^T. One sweep
//! computes both mixed fixed points L, R of the current candidate against
//! the source, replaces every candidate tensor by the environment projection
//! L^T A^a R, and re-gauges. Candidates: the top-d Schmidt projection of the
//! source's left-canonical tensors, a configurable number of seeded random
//! restarts, and optionally a caller-provided warm start (a smaller solution
//! padded with noise), which keeps fidelity monotone across a dimension
//! sweep. The best evaluated state wins; the polish can only improve on the
//! initialization because the initialization itself is evaluated.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imps::{canonical_form, canonical_form_relaxed, CanonicalForm, Imps};
use crate::linalg::{dominant_eig, SolverSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Top-d block of the Schmidt-aligned left-canonical source tensors.
    SchmidtProjection,
    /// Seeded random tensors (the projection is still tried via restarts' bookkeeping only when selected).
    Random,
}

#[derive(Debug, Clone)]
pub struct TruncationOptions {
    pub d_tilde: usize,
    pub max_sweeps: usize,
    /// Stop a candidate when per-site fidelity improves by less than this.
    pub tol: f64,
    /// Extra random initializations tried in addition to the primary one.
    pub restarts: usize,
    pub seed: u64,
    pub init: InitScheme,
    /// Previous solution at a smaller bond dimension; padded and polished as
    /// one more candidate.
    pub warm_start: Option<Imps>,
}

impl TruncationOptions {
    pub fn new(d_tilde: usize) -> Self {
        TruncationOptions {
            d_tilde,
            max_sweeps: 500,
            tol: 1e-12,
            restarts: 3,
            seed: 0,
            init: InitScheme::SchmidtProjection,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TruncationResult {
    /// Left-canonical compressed state; bond dimension can come out below
    /// the requested budget when the optimum genuinely uses fewer
    /// dimensions.
    pub imps: Imps,
    pub schmidt: Vec<f64>,
    pub fidelity: f64,
    /// Per-site fidelity divergence rate, -log2(f).
    pub rate_bits: f64,
    pub sweeps: usize,
    pub candidates_tried: usize,
    pub converged: bool,
    pub requested_dim: usize,
}

/// |eta_mix| / sqrt(eta_a eta_b): per-site overlap fidelity of two states
/// over the same alphabet.
pub fn fidelity_per_site(a: &Imps, b: &Imps, settings: &SolverSettings) -> Result<f64> {
    if a.alphabet() != b.alphabet() {
        return Err(Error::AlphabetMismatch(format!(
            "fidelity needs matching alphabets, got {:?} vs {:?}",
            a.alphabet(),
            b.alphabet()
        )));
    }
    let eta_a = self_transfer_modulus(a.tensors(), settings)?;
    let eta_b = self_transfer_modulus(b.tensors(), settings)?;
    if !(eta_a > 0.0 && eta_b > 0.0) {
        return Err(Error::Renormalization(
            "state with non-positive transfer eigenvalue".into(),
        ));
    }
    let eta_mix = mixed_transfer_modulus(a.tensors(), b.tensors(), None, settings)?.0;
    Ok(eta_mix / (eta_a * eta_b).sqrt())
}

fn self_transfer_modulus(tensors: &[DMatrix<f64>], settings: &SolverSettings) -> Result<f64> {
    let d = tensors[0].nrows();
    let start = DMatrix::<f64>::identity(d, d) / (d as f64).sqrt();
    let eig = dominant_eig(
        "transfer-self",
        |rho| {
            let mut out = DMatrix::zeros(d, d);
            for t in tensors {
                if t.amax() == 0.0 {
                    continue;
                }
                out += t * rho * t.transpose();
            }
            out
        },
        start,
        settings,
    )?;
    Ok(eig.modulus)
}

/// Dominant modulus and a representative fixed matrix of the mixed map
/// x -> sum_a A^a x (B^a)^T (shape d_a x d_b).
fn mixed_transfer_modulus(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    warm: Option<&DMatrix<f64>>,
    settings: &SolverSettings,
) -> Result<(f64, DMatrix<f64>)> {
    let da = a[0].nrows();
    let db = b[0].nrows();
    let start = match warm {
        Some(w) if w.nrows() == da && w.ncols() == db && w.norm() > 0.0 => w.clone(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x9bd1_a0c4 ^ ((da as u64) << 32 | db as u64));
            DMatrix::from_fn(da, db, |_, _| rng.gen_range(-1.0..1.0))
        }
    };
    let eig = dominant_eig(
        "transfer-mixed",
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
    )?;
    Ok((eig.modulus, eig.matrix))
}

/// Compress `m` to bond dimension d_tilde. The input must be normal (the
/// strict gauge precondition); use the canonical variant to skip repeated
/// source canonicalization in sweeps.
pub fn variational_truncate(
    m: &Imps,
    opts: &TruncationOptions,
    settings: &SolverSettings,
) -> Result<TruncationResult> {
    if opts.d_tilde < 1 || opts.d_tilde > m.bond_dim() {
        return Err(Error::InvalidInput(format!(
            "target bond dimension {} outside 1..={}",
            opts.d_tilde,
            m.bond_dim()
        )));
    }
    let canon = canonical_form(m, settings)?;
    variational_truncate_canonical(&canon, opts, settings)
}

pub fn variational_truncate_canonical(
    canon: &CanonicalForm,
    opts: &TruncationOptions,
    settings: &SolverSettings,
) -> Result<TruncationResult> {
    if opts.d_tilde < 1 {
        return Err(Error::InvalidInput("target bond dimension must be >= 1".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput("fidelity tolerance must be positive".into()));
    }
    let k = canon.left.bond_dim();
    let d_tilde = opts.d_tilde;
    if d_tilde >= k {
        // the canonical state itself is an exact compression
        return Ok(TruncationResult {
            imps: canon.left.clone(),
            schmidt: canon.schmidt.clone(),
            fidelity: 1.0,
            rate_bits: 0.0,
            sweeps: 0,
            candidates_tried: 0,
            converged: true,
            requested_dim: d_tilde,
        });
    }

    let source = canon.left.tensors();
    let mut inits: Vec<Vec<DMatrix<f64>>> = Vec::new();
    match opts.init {
        InitScheme::SchmidtProjection => inits.push(schmidt_projection(source, d_tilde)),
        InitScheme::Random => inits.push(random_tensors(source.len(), d_tilde, opts.seed, 0)),
    }
    for r in 0..opts.restarts {
        inits.push(random_tensors(source.len(), d_tilde, opts.seed, 1 + r as u64));
    }
    if let Some(w) = &opts.warm_start {
        if w.alphabet() == canon.left.alphabet() && w.bond_dim() <= d_tilde {
            inits.push(pad_tensors(w.tensors(), d_tilde, opts.seed));
        }
    }

    let mut best: Option<(CanonicalForm, f64, usize, bool)> = None;
    let mut last_err: Option<Error> = None;
    let candidates_tried = inits.len();
    for raw_init in inits {
        match polish_candidate(source, raw_init, canon.left.alphabet(), opts, settings) {
            Ok((state, f, sweeps, converged)) => {
                if best.as_ref().map_or(true, |(_, bf, _, _)| f > *bf) {
                    best = Some((state, f, sweeps, converged));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let (state, fidelity, sweeps, converged) = best.ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::SolverFailure {
            what: "truncation candidates".into(),
            iterations: 0,
            residual: f64::NAN,
        })
    })?;
    Ok(TruncationResult {
        schmidt: state.schmidt.clone(),
        imps: state.left,
        fidelity,
        rate_bits: -fidelity.log2(),
        sweeps,
        candidates_tried,
        converged,
        requested_dim: d_tilde,
    })
}

fn schmidt_projection(source: &[DMatrix<f64>], d_tilde: usize) -> Vec<DMatrix<f64>> {
    source
        .iter()
        .map(|a| a.view((0, 0), (d_tilde, d_tilde)).into_owned())
        .collect()
}

fn random_tensors(n: usize, d: usize, seed: u64, stream: u64) -> Vec<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let scale = 1.0 / ((n * d) as f64).sqrt();
    (0..n)
        .map(|_| DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0) * scale))
        .collect()
}

/// Embed a smaller solution in the top-left block and break the invariant
/// subspace with small noise so sweeps can use the extra dimensions.
fn pad_tensors(small: &[DMatrix<f64>], d_tilde: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77aa_1234_5566_00ff);
    let ds = small[0].nrows();
    small
        .iter()
        .map(|a| {
            let mut m = DMatrix::from_fn(d_tilde, d_tilde, |_, _| rng.gen_range(-1e-6..1e-6));
            m.view_mut((0, 0), (ds, ds)).copy_from(a);
            m
        })
        .collect()
}

fn polish_candidate(
    source: &[DMatrix<f64>],
    raw_init: Vec<DMatrix<f64>>,
    alphabet: &[String],
    opts: &TruncationOptions,
    settings: &SolverSettings,
) -> Result<(CanonicalForm, f64, usize, bool)> {
    let gauge = |tensors: Vec<DMatrix<f64>>| -> Result<CanonicalForm> {
        let raw = Imps::new(alphabet.to_vec(), tensors)?;
        canonical_form_relaxed(&raw, settings)
    };
    let mut state = gauge(raw_init)?;
    let mut best: Option<(CanonicalForm, f64)> = None;
    let mut f_prev = f64::NEG_INFINITY;
    let mut warm_r: Option<DMatrix<f64>> = None;
    let mut warm_l: Option<DMatrix<f64>> = None;
    let mut sweeps = 0;
    let mut converged = false;

    for _ in 0..opts.max_sweeps.max(1) {
        let cand = state.left.tensors();
        let (eta_r, r_env) = mixed_transfer_modulus(source, cand, warm_r.as_ref(), settings)?;
        let f = eta_r;
        if best.as_ref().map_or(true, |(_, bf)| f > *bf) {
            best = Some((state.clone(), f));
        }
        if f - f_prev <= opts.tol {
            converged = true;
            break;
        }
        f_prev = f;
        sweeps += 1;

        // left mixed fixed point: x -> sum_a (A^a)^T x B^a
        let da = source[0].nrows();
        let db = cand[0].nrows();
        let l_start = warm_l
            .take()
            .filter(|w| w.nrows() == da && w.ncols() == db)
            .unwrap_or_else(|| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(0x517c_c1b7 ^ ((da as u64) << 32 | db as u64));
                DMatrix::from_fn(da, db, |_, _| rng.gen_range(-1.0..1.0))
            });
        let left_eig = dominant_eig(
            "transfer-mixed-left",
            |x| {
                let mut out = DMatrix::zeros(da, db);
                for (ta, tb) in source.iter().zip(cand.iter()) {
                    if ta.amax() == 0.0 || tb.amax() == 0.0 {
                        continue;
                    }
                    out += ta.transpose() * x * tb;
                }
                out
            },
            l_start,
            settings,
        )?;
        let l_env = left_eig.matrix;

        let updated: Vec<DMatrix<f64>> = source
            .iter()
            .map(|a| l_env.transpose() * a * &r_env)
            .collect();
        if updated.iter().all(|t| t.amax() == 0.0) {
            break;
        }
        warm_r = Some(r_env);
        warm_l = Some(l_env);
        state = gauge(updated)?;
    }

    let (state, f) = best.expect("at least one candidate evaluation");
    Ok((state, f, sweeps, converged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dilation::{dilate, make_labelling, LabellingStrategy};
    use crate::hmm::{build_tns, Hmm};
    use crate::imps::{block_probability, qsample_tensors, transfer_eig};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn three_state() -> Hmm {
        let ta = DMatrix::from_row_slice(3, 3, &[0.1, 0.0, 0.2, 0.8, 0.1, 0.0, 0.0, 0.15, 0.3]);
        let tb = DMatrix::from_row_slice(3, 3, &[0.05, 0.6, 0.1, 0.0, 0.15, 0.2, 0.05, 0.0, 0.2]);
        Hmm::new(vec!["a".into(), "b".into()], vec![ta, tb]).unwrap()
    }

    fn qsample_of(m: &Hmm) -> Imps {
        let lab = make_labelling(m, LabellingStrategy::Sequential);
        qsample_tensors(&dilate(m, &lab).unwrap())
    }

    fn bernoulli_qsample(p: f64) -> Imps {
        let t0 = DMatrix::from_row_slice(1, 1, &[p]);
        let t1 = DMatrix::from_row_slice(1, 1, &[1.0 - p]);
        let m = Hmm::new(vec!["0".into(), "1".into()], vec![t0, t1]).unwrap();
        qsample_of(&m)
    }

    #[test]
    fn self_fidelity_is_one() {
        let q = qsample_of(&three_state());
        let f = fidelity_per_site(&q, &q, &SolverSettings::default()).unwrap();
        assert_relative_eq!(f, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bernoulli_fidelity_matches_closed_form() {
        for (p, q) in [(0.3, 0.7), (0.2, 0.25), (0.5, 0.5), (0.9, 0.1)] {
            let a = bernoulli_qsample(p);
            let b = bernoulli_qsample(q);
            let f = fidelity_per_site(&a, &b, &SolverSettings::default()).unwrap();
            let expect = (p * q).sqrt() + ((1.0 - p) * (1.0 - q)).sqrt();
            assert_relative_eq!(f, expect, epsilon = 1e-12);
            let rev = fidelity_per_site(&b, &a, &SolverSettings::default()).unwrap();
            assert_relative_eq!(f, rev, epsilon = 1e-10);
        }
    }

    #[test]
    fn alphabet_mismatch_rejected() {
        let a = bernoulli_qsample(0.5);
        let q = qsample_of(&three_state());
        assert!(matches!(
            fidelity_per_site(&a, &q, &SolverSettings::default()),
            Err(Error::AlphabetMismatch(_))
        ));
    }

    #[test]
    fn identity_truncation_is_lossless() {
        let q = qsample_of(&three_state());
        let opts = TruncationOptions::new(q.bond_dim());
        let res = variational_truncate(&q, &opts, &SolverSettings::default()).unwrap();
        assert_relative_eq!(res.fidelity, 1.0, epsilon = 1e-10);
        assert!(res.rate_bits.abs() < 1e-9);
        let f = fidelity_per_site(&q, &res.imps, &SolverSettings::default()).unwrap();
        assert_relative_eq!(f, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn bond_one_truncation_of_bond_one_state() {
        let q = bernoulli_qsample(0.25);
        let opts = TruncationOptions::new(1);
        let res = variational_truncate(&q, &opts, &SolverSettings::default()).unwrap();
        assert_eq!(res.imps.bond_dim(), 1);
        assert_relative_eq!(res.fidelity, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fidelity_nondecreasing_in_bond_dimension() {
        let q = qsample_of(&three_state());
        let canon = canonical_form(&q, &SolverSettings::default()).unwrap();
        let mut last = 0.0;
        for d_tilde in 1..=canon.left.bond_dim() {
            let mut opts = TruncationOptions::new(d_tilde);
            opts.seed = 11;
            let res =
                variational_truncate_canonical(&canon, &opts, &SolverSettings::default()).unwrap();
            assert!(
                res.fidelity >= last - 1e-9,
                "fidelity dropped: {} after {} at d={}",
                res.fidelity,
                last,
                d_tilde
            );
            assert!(res.fidelity <= 1.0 + 1e-10);
            last = res.fidelity;
        }
        assert_relative_eq!(last, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn truncated_state_reproduces_heavy_words_roughly() {
        // a hard cut at d=2 must still carry most of the stationary
        // statistics: compare the dominant single-symbol probabilities
        let q = qsample_of(&three_state());
        let opts = TruncationOptions::new(2);
        let res = variational_truncate(&q, &opts, &SolverSettings::default()).unwrap();
        assert!(res.fidelity > 0.9, "fidelity = {}", res.fidelity);
        let eig_q = transfer_eig(&q, &SolverSettings::default()).unwrap();
        let eig_t = transfer_eig(&res.imps, &SolverSettings::default()).unwrap();
        for s in 0..q.alphabet().len() {
            let pq = block_probability(&q, &eig_q, &[s]);
            let pt = block_probability(&res.imps, &eig_t, &[s]);
            assert!(
                (pq - pt).abs() < 0.1,
                "symbol {s}: {pq} vs {pt} diverge too much"
            );
        }
    }

    #[test]
    fn ring_compresses_to_bond_one_exactly() {
        let m = build_tns(5, 0.4).unwrap();
        let q = qsample_of(&m);
        let opts = TruncationOptions::new(2);
        let res = variational_truncate(&q, &opts, &SolverSettings::default()).unwrap();
        assert_relative_eq!(res.fidelity, 1.0, epsilon = 1e-10);
        assert_eq!(res.imps.bond_dim(), 1);
    }

    #[test]
    fn warm_start_candidate_is_accepted() {
        let q = qsample_of(&three_state());
        let canon = canonical_form(&q, &SolverSettings::default()).unwrap();
        let mut o1 = TruncationOptions::new(1);
        o1.seed = 5;
        let r1 = variational_truncate_canonical(&canon, &o1, &SolverSettings::default()).unwrap();
        let mut o2 = TruncationOptions::new(2);
        o2.seed = 5;
        o2.warm_start = Some(r1.imps.clone());
        let r2 = variational_truncate_canonical(&canon, &o2, &SolverSettings::default()).unwrap();
        assert!(r2.fidelity >= r1.fidelity - 1e-9);
    }

    #[test]
    fn invalid_targets_rejected() {
        let q = qsample_of(&three_state());
        let opts = TruncationOptions::new(0);
        assert!(variational_truncate(&q, &opts, &SolverSettings::default()).is_err());
        let opts = TruncationOptions::new(q.bond_dim() + 1);
        assert!(variational_truncate(&q, &opts, &SolverSettings::default()).is_err());
    }
}
