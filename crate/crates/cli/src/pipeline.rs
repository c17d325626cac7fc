//! The per-row computation shared by compress, sweep and compare-baseline:
//! dilate, check, q-sample, canonicalize, certify, truncate, reconstruct,
//! and measure the co-emission rate back to the source model.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use qdr_core::dilation::{dilate, make_labelling, verify_dilation, DilatedHmm, LabellingStrategy};
use qdr_core::divergence::{cdr, certify_bounds, BoundCertificate};
use qdr_core::generator::LinearGenerator;
use qdr_core::hmm::{build_tns, Hmm};
use qdr_core::imps::{canonical_form, qsample_tensors, spectrum_diagnostics, CanonicalForm};
use qdr_core::io;
use qdr_core::linalg::SolverSettings;
use qdr_core::qhmm::{linear_generator, quantum_memory, reconstruct_qhmm, QhmmModel};
use qdr_core::seeding::derive_seed;
use qdr_core::train::{baum_welch_train, TrainInit, TrainingConfig};
use qdr_core::truncation::{variational_truncate_canonical, TruncationOptions, TruncationResult};
use qdr_core::{Error, Result};

/// Word length for the marginal check when a dilation is built inline.
const VERIFY_LEN: usize = 3;

pub struct PipelineRun {
    pub dilated: DilatedHmm,
    pub canonical: CanonicalForm,
    pub truncation: TruncationResult,
    pub qhmm: QhmmModel,
    /// co-emission rate between the source and the reconstruction, in bits
    pub r_c: f64,
    /// entropy of the reconstructed memory state, in bits
    pub c_q: f64,
    pub schmidt_entropy_bits: f64,
    pub tail_eps: f64,
    pub rank_k: usize,
    pub certificate: Option<BoundCertificate>,
}

pub fn run_pipeline(
    hmm: &Hmm,
    strategy: LabellingStrategy,
    d_tilde: usize,
    restarts: usize,
    trunc_seed: u64,
    settings: &SolverSettings,
) -> Result<PipelineRun> {
    if d_tilde < 1 || d_tilde > hmm.num_states() {
        return Err(Error::InvalidInput(format!(
            "bond budget {d_tilde} outside 1..={}",
            hmm.num_states()
        )));
    }

    let labelling = make_labelling(hmm, strategy);
    let dilated = dilate(hmm, &labelling)?;
    let report = verify_dilation(&dilated, VERIFY_LEN)?;
    if !report.is_valid() {
        return Err(Error::Gauge(format!("dilation rejected: {report:?}")));
    }

    let raw = qsample_tensors(&dilated);
    let canonical = canonical_form(&raw, settings)?;
    let diag = spectrum_diagnostics(&canonical.schmidt, d_tilde, &canonical.left)?;

    // log2(1) vanishes, so budgets of 1 carry diagnostics but no certificate
    let certificate = if d_tilde >= 2 {
        let cert = certify_bounds(&canonical.left, d_tilde)?;
        if !cert.holds() {
            return Err(Error::Gauge(format!(
                "bound certificate violated at budget {d_tilde}: \
                 tail {:.3e} vs {:.3e}, entropy {:.6} bits vs rank {}",
                cert.tail, cert.entropy_bound, cert.entropy_bits, cert.slice_rank
            )));
        }
        Some(cert)
    } else {
        None
    };

    let opts = TruncationOptions {
        restarts,
        seed: trunc_seed,
        ..TruncationOptions::new(d_tilde)
    };
    let truncation = variational_truncate_canonical(&canonical, &opts, settings)?;

    let aux: Vec<String> = (0..dilated.aux_size()).map(|y| y.to_string()).collect();
    let qhmm = reconstruct_qhmm(&truncation, &aux, settings)?;
    let c_q = quantum_memory(&qhmm);

    let base = LinearGenerator::from_hmm(hmm)?;
    let recon = linear_generator(&qhmm, settings)?;
    let r_c = cdr(&base, &recon, settings)?.rate;

    Ok(PipelineRun {
        dilated,
        canonical,
        truncation,
        qhmm,
        r_c,
        c_q,
        schmidt_entropy_bits: diag.entropy,
        tail_eps: diag.tail,
        rank_k: diag.slice_rank,
        certificate,
    })
}

/// One model inside a sweep, with the row metadata it carries.
pub struct ModelSpec {
    pub id: String,
    pub n_states: usize,
    pub p: Option<f64>,
    pub hmm: Hmm,
}

/// Keep ids safe for row keys, CSV cells and file names.
pub fn sanitize_id(raw: &str) -> String {
    let s: String = raw
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_') {
                c
            } else {
                '-'
            }
        })
        .collect();
    if s.is_empty() {
        "model".into()
    } else {
        s
    }
}

pub fn file_model_id(path: &Path) -> String {
    sanitize_id(path.file_stem().and_then(|s| s.to_str()).unwrap_or("model"))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub models: ModelSource,
    pub strategies: Vec<String>,
    pub d_tilde: Vec<usize>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    pub seeds: Vec<u64>,
    /// overrides the global --out-dir when present
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_restarts() -> usize {
    3
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSource {
    /// ring sources over the grid {n} x {p}
    Tns { n: Vec<usize>, p: Vec<f64> },
    HmmFile { path: PathBuf },
    /// fit a model to a symbol file first, then sweep the fit
    Train {
        data: PathBuf,
        num_states: usize,
        #[serde(default)]
        alphabet_size: Option<usize>,
        #[serde(default)]
        max_iterations: Option<usize>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
}

pub fn load_sweep_config(path: &Path) -> Result<SweepConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: SweepConfig = serde_json::from_str(&text)?;
    if cfg.strategies.is_empty() {
        return Err(Error::InvalidInput("sweep config lists no strategies".into()));
    }
    if cfg.d_tilde.is_empty() {
        return Err(Error::InvalidInput("sweep config lists no budgets".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidInput("sweep config lists no seeds".into()));
    }
    for name in &cfg.strategies {
        LabellingStrategy::parse(name, Some(0))?;
    }
    Ok(cfg)
}

pub fn materialize_models(src: &ModelSource, train_seed: u64) -> Result<Vec<ModelSpec>> {
    match src {
        ModelSource::Tns { n, p } => {
            if n.is_empty() || p.is_empty() {
                return Err(Error::InvalidInput(
                    "ring model source needs at least one n and one p".into(),
                ));
            }
            let mut out = Vec::new();
            for &nn in n {
                for &pp in p {
                    let hmm = build_tns(nn, pp)?;
                    out.push(ModelSpec {
                        id: sanitize_id(&format!("tns-{nn}-{pp}")),
                        n_states: hmm.num_states(),
                        p: Some(pp),
                        hmm,
                    });
                }
            }
            Ok(out)
        }
        ModelSource::HmmFile { path } => {
            let hmm = io::read_hmm(path)?;
            Ok(vec![ModelSpec {
                id: file_model_id(path),
                n_states: hmm.num_states(),
                p: None,
                hmm,
            }])
        }
        ModelSource::Train {
            data,
            num_states,
            alphabet_size,
            max_iterations,
            tolerance,
        } => {
            let (alphabet, sequences) = io::read_sequences(data)?;
            if let Some(k) = alphabet_size {
                if alphabet.len() != *k {
                    return Err(Error::AlphabetMismatch(format!(
                        "training data uses {} symbols, config expects {k}",
                        alphabet.len()
                    )));
                }
            }
            let cfg = TrainingConfig {
                num_states: *num_states,
                max_iterations: max_iterations.unwrap_or(200),
                tolerance: tolerance.unwrap_or(1e-7),
                seed: train_seed,
                init: TrainInit::Random,
            };
            let outcome = baum_welch_train(&sequences, alphabet, &cfg)?;
            Ok(vec![ModelSpec {
                id: sanitize_id(&format!("trained-{num_states}")),
                n_states: outcome.hmm.num_states(),
                p: None,
                hmm: outcome.hmm,
            }])
        }
    }
}

/// Labelling seed for a sweep row: fixed per (seed, model) so one strategy
/// keeps one labelling across all budgets and the spectra stay comparable.
pub fn labelling_seed(seed: u64, model_id: &str) -> u64 {
    derive_seed(seed, &format!("label:{model_id}"))
}

pub fn truncation_seed(seed: u64, model_id: &str, strategy: &str, d_tilde: usize) -> u64 {
    derive_seed(seed, &format!("trunc:{model_id}:{strategy}:{d_tilde}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sanitizing_keeps_safe_characters_only() {
        assert_eq!(sanitize_id("tns-5-0.2"), "tns-5-0.2");
        assert_eq!(sanitize_id("a b:c,d"), "a-b-c-d");
        assert_eq!(sanitize_id(""), "model");
    }

    #[test]
    fn full_budget_pipeline_is_lossless_on_a_small_model() {
        let hmm = build_tns(3, 0.4).unwrap();
        let run = run_pipeline(
            &hmm,
            LabellingStrategy::Sequential,
            3,
            1,
            7,
            &SolverSettings::default(),
        )
        .unwrap();
        assert!((run.truncation.fidelity - 1.0).abs() < 1e-9);
        assert!(run.r_c.abs() < 1e-8);
        assert!(run.tail_eps.abs() < 1e-12);
        let cert = run.certificate.expect("budget 3 certifies");
        assert!(cert.holds());
    }

    #[test]
    fn budgets_beyond_the_state_count_are_rejected() {
        let hmm = build_tns(3, 0.4).unwrap();
        let err = run_pipeline(
            &hmm,
            LabellingStrategy::Sequential,
            4,
            1,
            7,
            &SolverSettings::default(),
        )
        .err()
        .expect("budget 4 on 3 states must fail");
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn sweep_config_parses_and_validates() {
        let text = r#"{
            "models": {"kind": "tns", "n": [3], "p": [0.5]},
            "strategies": ["sequential", "random"],
            "d_tilde": [1, 2, 3],
            "seeds": [0, 1]
        }"#;
        let cfg: SweepConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.restarts, 3);
        let models = materialize_models(&cfg.models, 0).unwrap();
        assert_eq!(models.len(), 1);
        assert_eq!(models[0].id, "tns-3-0.5");
        assert_eq!(models[0].n_states, 3);
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let text = r#"{
            "models": {"kind": "tns", "n": [3], "p": [0.5]},
            "strategies": ["sequential"],
            "d_tilde": [1],
            "seeds": [0],
            "typo_field": true
        }"#;
        assert!(serde_json::from_str::<SweepConfig>(text).is_err());
    }
}
