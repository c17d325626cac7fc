//! Subcommand implementations. Every command buffers its outputs in memory
//! and only touches the filesystem once the whole computation has succeeded,
//! so a failing run never leaves partial artifacts behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use qdr_core::dilation::{dilate, make_labelling, LabellingStrategy};
use qdr_core::divergence::{cdr, certify_bounds, cfdr_finite_l, BoundCertificate, CdrResult};
use qdr_core::generator::LinearGenerator;
use qdr_core::imps::{canonical_form, qsample_tensors};
use qdr_core::io;
use qdr_core::linalg::SolverSettings;
use qdr_core::merge::greedy_merge_baseline;
use qdr_core::qhmm::sample_sequence;
use qdr_core::seeding::derive_seed;
use qdr_core::train::{baum_welch_train, kmeans_quantize, TrainInit, TrainingConfig};
use qdr_core::{Error, Result};

use crate::pipeline::{
    file_model_id, labelling_seed, load_sweep_config, materialize_models, run_pipeline,
    truncation_seed, ModelSpec, PipelineRun,
};
use crate::rows::{fmt_float, row_key, ResultRow, PLOT_FLOOR, RESULT_HEADER, SCHEMA_VERSION};
use crate::{error_class, Global};

const SPECTRUM_HEADER: &str = "schema_version,index,weight";
const COMPARISON_HEADER: &str = "schema_version,model_id,method,dim,r_c,status";
const TRAIN_LOG_HEADER: &str = "schema_version,iteration,log_likelihood_nats";

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn spectrum_csv(schmidt: &[f64]) -> String {
    let mut s = String::from(SPECTRUM_HEADER);
    s.push('\n');
    for (i, w) in schmidt.iter().enumerate() {
        s.push_str(&format!("{SCHEMA_VERSION},{i},{}\n", fmt_float(*w)));
    }
    s
}

/// Headerless x,y lines with the rate floored for log-scale plotting.
fn plot_csv(points: &[(usize, f64)]) -> String {
    let mut s = String::new();
    for (x, y) in points {
        s.push_str(&format!("{x},{}\n", fmt_float(y.max(PLOT_FLOOR))));
    }
    s
}

fn run_to_row(base: ResultRow, run: &PipelineRun) -> ResultRow {
    ResultRow {
        fidelity: Some(run.truncation.fidelity),
        r_c: Some(run.r_c),
        c_q: Some(run.c_q),
        schmidt_entropy_bits: Some(run.schmidt_entropy_bits),
        tail_eps: Some(run.tail_eps),
        rank_k: Some(run.rank_k),
        entropy_bound: run.certificate.as_ref().map(|c| c.entropy_bound),
        status: "ok".into(),
        ..base
    }
}

pub fn cmd_compress(
    g: &Global,
    hmm_path: &Path,
    d_tilde: usize,
    strategy_name: &str,
    strategy_seed: Option<u64>,
    restarts: usize,
) -> Result<()> {
    let t0 = Instant::now();
    let hmm = io::read_hmm(hmm_path)?;
    let label_seed = strategy_seed.unwrap_or_else(|| derive_seed(g.seed, "labelling"));
    let strategy = LabellingStrategy::parse(strategy_name, Some(label_seed))?;
    let run = run_pipeline(
        &hmm,
        strategy,
        d_tilde,
        restarts,
        derive_seed(g.seed, "truncate"),
        &g.settings(),
    )?;

    let base = ResultRow {
        model_id: file_model_id(hmm_path),
        n_states: hmm.num_states(),
        p: None,
        labelling: strategy_name.to_string(),
        d_tilde,
        fidelity: None,
        r_c: None,
        c_q: None,
        schmidt_entropy_bits: None,
        tail_eps: None,
        rank_k: None,
        entropy_bound: None,
        seed: g.seed,
        status: String::new(),
    };
    let row = run_to_row(base, &run);

    // render everything before the first write
    let dilated = io::dilated_to_json(&run.dilated)?;
    let truncated = io::imps_to_json(&run.truncation.imps)?;
    let qhmm = io::qhmm_to_json(&run.qhmm)?;
    let spectrum = spectrum_csv(&run.canonical.schmidt);
    let result = format!("{RESULT_HEADER}\n{}\n", row.encode());

    ensure_dir(&g.out_dir)?;
    write_text(&g.out_dir.join("dilated.json"), &dilated)?;
    write_text(&g.out_dir.join("truncated.json"), &truncated)?;
    write_text(&g.out_dir.join("qhmm.json"), &qhmm)?;
    write_text(&g.out_dir.join("spectrum.csv"), &spectrum)?;
    write_text(&g.out_dir.join("result.csv"), &result)?;

    eprintln!(
        "compress: fidelity {:.12}, rate {:.3e} bits, memory {:.4} bits, {} candidates, {:.0} ms",
        run.truncation.fidelity,
        run.r_c,
        run.c_q,
        run.truncation.candidates_tried,
        t0.elapsed().as_secs_f64() * 1e3
    );
    Ok(())
}

struct RowItem {
    key: String,
    model: usize,
    strategy: String,
    d_tilde: usize,
    seed: u64,
}

fn sweep_row(
    m: &ModelSpec,
    strategy_name: &str,
    d_tilde: usize,
    seed: u64,
    restarts: usize,
    settings: &SolverSettings,
) -> ResultRow {
    let base = ResultRow {
        model_id: m.id.clone(),
        n_states: m.n_states,
        p: m.p,
        labelling: strategy_name.to_string(),
        d_tilde,
        fidelity: None,
        r_c: None,
        c_q: None,
        schmidt_entropy_bits: None,
        tail_eps: None,
        rank_k: None,
        entropy_bound: None,
        seed,
        status: String::new(),
    };
    let attempt = LabellingStrategy::parse(strategy_name, Some(labelling_seed(seed, &m.id)))
        .and_then(|strategy| {
            run_pipeline(
                &m.hmm,
                strategy,
                d_tilde,
                restarts,
                truncation_seed(seed, &m.id, strategy_name, d_tilde),
                settings,
            )
        });
    match attempt {
        Ok(run) => run_to_row(base, &run),
        Err(e) => {
            eprintln!("row {}: {e}", base.key());
            ResultRow {
                status: error_class(&e).into(),
                ..base
            }
        }
    }
}

pub fn cmd_sweep(g: &Global, config_path: &Path) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_sweep_config(config_path)?;
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| g.out_dir.clone());
    let settings = g.settings();
    let models = materialize_models(&cfg.models, derive_seed(cfg.seeds[0], "sweep-train"))?;

    // budgets past a model's state count are skipped for that model only
    let mut items: Vec<RowItem> = Vec::new();
    for (mi, m) in models.iter().enumerate() {
        for strategy in &cfg.strategies {
            for &d in &cfg.d_tilde {
                if d < 1 || d > m.n_states {
                    continue;
                }
                for &seed in &cfg.seeds {
                    items.push(RowItem {
                        key: row_key(&m.id, strategy, d, seed),
                        model: mi,
                        strategy: strategy.clone(),
                        d_tilde: d,
                        seed,
                    });
                }
            }
        }
    }
    if items.is_empty() {
        return Err(Error::InvalidInput(
            "no feasible rows: every budget exceeds every model's state count".into(),
        ));
    }

    // resume: rows already on disk are kept verbatim and their keys skipped
    let results_path = out_dir.join("results.csv");
    let mut existing_lines: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, ResultRow> = BTreeMap::new();
    if results_path.exists() {
        let text = fs::read_to_string(&results_path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == RESULT_HEADER => {}
            other => {
                return Err(Error::InvalidInput(format!(
                    "existing results.csv has an incompatible header: {other:?}"
                )))
            }
        }
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let row = ResultRow::decode(line)?;
            existing_lines.push(line.to_string());
            rows.insert(row.key(), row);
        }
    }

    let todo: Vec<&RowItem> = items.iter().filter(|it| !rows.contains_key(&it.key)).collect();
    let computed: Vec<(String, ResultRow)> = todo
        .par_iter()
        .map(|it| {
            let row = sweep_row(
                &models[it.model],
                &it.strategy,
                it.d_tilde,
                it.seed,
                cfg.restarts,
                &settings,
            );
            (it.key.clone(), row)
        })
        .collect();

    let mut fresh: Vec<(String, ResultRow)> = computed;
    fresh.sort_by(|a, b| a.0.cmp(&b.0));

    let mut csv = String::from(RESULT_HEADER);
    csv.push('\n');
    for line in &existing_lines {
        csv.push_str(line);
        csv.push('\n');
    }
    for (_, row) in &fresh {
        csv.push_str(&row.encode());
        csv.push('\n');
    }

    ensure_dir(&out_dir)?;
    write_text(&results_path, &csv)?;
    for (key, row) in fresh {
        rows.insert(key, row);
    }

    // per-(model, strategy, seed) canonical spectra; independent of budget
    let spectra_dir = out_dir.join("spectra");
    ensure_dir(&spectra_dir)?;
    let mut triples: Vec<(usize, String, u64, PathBuf)> = Vec::new();
    for (mi, m) in models.iter().enumerate() {
        for strategy in &cfg.strategies {
            for &seed in &cfg.seeds {
                let path = spectra_dir.join(format!("{}__{strategy}__{seed}.csv", m.id));
                if !path.exists() {
                    triples.push((mi, strategy.clone(), seed, path));
                }
            }
        }
    }
    let spectra: Vec<(PathBuf, Result<String>)> = triples
        .par_iter()
        .map(|(mi, strategy, seed, path)| {
            let m = &models[*mi];
            let text = LabellingStrategy::parse(strategy, Some(labelling_seed(*seed, &m.id)))
                .and_then(|s| dilate(&m.hmm, &make_labelling(&m.hmm, s)))
                .and_then(|d| canonical_form(&qsample_tensors(&d), &settings))
                .map(|c| spectrum_csv(&c.schmidt));
            (path.clone(), text)
        })
        .collect();
    let mut spectra_failed = 0usize;
    for (path, text) in spectra {
        match text {
            Ok(text) => write_text(&path, &text)?,
            Err(e) => {
                spectra_failed += 1;
                eprintln!("spectrum {}: {e}", path.display());
            }
        }
    }

    // rate-vs-budget exports, regenerated from the full row set every run
    let plot_dir = out_dir.join("plots");
    ensure_dir(&plot_dir)?;
    let mut groups: BTreeMap<(String, String, u64), Vec<(usize, f64)>> = BTreeMap::new();
    for row in rows.values().filter(|r| r.is_ok()) {
        if let Some(r_c) = row.r_c {
            groups
                .entry((row.model_id.clone(), row.labelling.clone(), row.seed))
                .or_default()
                .push((row.d_tilde, r_c));
        }
    }
    for ((model, strategy, seed), mut points) in groups {
        points.sort_by_key(|(d, _)| *d);
        let path = plot_dir.join(format!("{model}__{strategy}__{seed}.csv"));
        write_text(&path, &plot_csv(&points))?;
    }

    let failed = rows.values().filter(|r| !r.is_ok()).count();
    eprintln!(
        "sweep: {} rows ({} new, {} failed{}), {} models, {:.0} ms",
        rows.len(),
        todo.len(),
        failed,
        if spectra_failed > 0 {
            format!(", {spectra_failed} spectra failed")
        } else {
            String::new()
        },
        models.len(),
        t0.elapsed().as_secs_f64() * 1e3
    );
    Ok(())
}

struct ComparisonRow {
    method: &'static str,
    dim: usize,
    r_c: Option<f64>,
    status: String,
}

impl ComparisonRow {
    fn encode(&self, model_id: &str) -> String {
        format!(
            "{SCHEMA_VERSION},{model_id},{},{},{},{}",
            self.method,
            self.dim,
            self.r_c.map(fmt_float).unwrap_or_default(),
            self.status
        )
    }
}

pub fn cmd_compare_baseline(
    g: &Global,
    hmm_path: &Path,
    d_tilde: &[usize],
    merge_states: &[usize],
    strategy_name: &str,
    restarts: usize,
) -> Result<()> {
    let t0 = Instant::now();
    let hmm = io::read_hmm(hmm_path)?;
    let n = hmm.num_states();
    if d_tilde.is_empty() || merge_states.is_empty() {
        return Err(Error::InvalidInput(
            "need at least one bond budget and one merge target".into(),
        ));
    }
    for &d in d_tilde {
        if d < 1 || d > n {
            return Err(Error::InvalidInput(format!(
                "bond budget {d} outside 1..={n}"
            )));
        }
    }
    for &m in merge_states {
        if m < 1 || m >= n {
            return Err(Error::InvalidInput(format!(
                "merge target {m} outside 1..{n}"
            )));
        }
    }
    let model_id = file_model_id(hmm_path);
    let settings = g.settings();
    let base = LinearGenerator::from_hmm(&hmm)?;

    let mut quantum: Vec<ComparisonRow> = d_tilde
        .par_iter()
        .map(|&d| {
            let attempt = LabellingStrategy::parse(
                strategy_name,
                Some(labelling_seed(g.seed, &model_id)),
            )
            .and_then(|s| {
                run_pipeline(
                    &hmm,
                    s,
                    d,
                    restarts,
                    truncation_seed(g.seed, &model_id, strategy_name, d),
                    &settings,
                )
            });
            match attempt {
                Ok(run) => ComparisonRow {
                    method: "quantum",
                    dim: d,
                    r_c: Some(run.r_c),
                    status: "ok".into(),
                },
                Err(e) => {
                    eprintln!("quantum dim {d}: {e}");
                    ComparisonRow {
                        method: "quantum",
                        dim: d,
                        r_c: None,
                        status: error_class(&e).into(),
                    }
                }
            }
        })
        .collect();
    quantum.sort_by_key(|r| r.dim);

    // one merge chain down to the smallest target serves every requested size
    let smallest = *merge_states.iter().min().expect("nonempty");
    let chain = greedy_merge_baseline(&hmm, smallest)?;
    let mut targets: Vec<usize> = merge_states.to_vec();
    targets.sort_unstable();
    targets.dedup();
    let mut classical: Vec<ComparisonRow> = Vec::new();
    for m in targets {
        let merged = chain
            .iter()
            .find(|(size, _)| *size == m)
            .map(|(_, hmm)| hmm)
            .ok_or_else(|| {
                Error::InvalidInput(format!("merge chain never reaches {m} states"))
            })?;
        let row = match LinearGenerator::from_hmm(merged)
            .and_then(|gen| cdr(&base, &gen, &settings))
        {
            Ok(result) => ComparisonRow {
                method: "classical-merge",
                dim: m,
                r_c: Some(result.rate),
                status: "ok".into(),
            },
            Err(e) => {
                eprintln!("classical dim {m}: {e}");
                ComparisonRow {
                    method: "classical-merge",
                    dim: m,
                    r_c: None,
                    status: error_class(&e).into(),
                }
            }
        };
        classical.push(row);
    }

    let mut csv = String::from(COMPARISON_HEADER);
    csv.push('\n');
    for row in quantum.iter().chain(classical.iter()) {
        csv.push_str(&row.encode(&model_id));
        csv.push('\n');
    }
    let points = |rows: &[ComparisonRow]| -> Vec<(usize, f64)> {
        rows.iter()
            .filter(|r| r.status == "ok")
            .filter_map(|r| r.r_c.map(|v| (r.dim, v)))
            .collect()
    };
    let quantum_plot = plot_csv(&points(&quantum));
    let classical_plot = plot_csv(&points(&classical));

    ensure_dir(&g.out_dir)?;
    let plot_dir = g.out_dir.join("plots");
    ensure_dir(&plot_dir)?;
    write_text(&g.out_dir.join("comparison.csv"), &csv)?;
    write_text(&plot_dir.join("quantum.csv"), &quantum_plot)?;
    write_text(&plot_dir.join("classical-merge.csv"), &classical_plot)?;

    eprintln!(
        "compare-baseline: {} quantum and {} classical rows, {:.0} ms",
        quantum.len(),
        classical.len(),
        t0.elapsed().as_secs_f64() * 1e3
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    g: &Global,
    data: &Path,
    states: usize,
    max_iters: usize,
    train_tol: f64,
    init_name: &str,
    features: bool,
    clusters: Option<usize>,
    has_header: bool,
) -> Result<()> {
    let t0 = Instant::now();
    let init = match init_name {
        "random" => TrainInit::Random,
        "flat" => TrainInit::Flat,
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown init `{other}` (use random or flat)"
            )))
        }
    };

    let (alphabet, sequences, codebook) = if features {
        let k = clusters.ok_or_else(|| {
            Error::InvalidInput("--features needs --clusters to fix the codebook size".into())
        })?;
        let (_, rows) = io::read_features(data, has_header)?;
        let q = kmeans_quantize(&rows, k, derive_seed(g.seed, "quantize"))?;
        let alphabet: Vec<String> = (0..k).map(|i| i.to_string()).collect();
        let codebook = io::features_to_string(None, &q.codebook)?;
        (alphabet, vec![q.labels], Some(codebook))
    } else {
        if clusters.is_some() {
            return Err(Error::InvalidInput(
                "--clusters only applies to --features input".into(),
            ));
        }
        let (alphabet, sequences) = io::read_sequences(data)?;
        (alphabet, sequences, None)
    };

    let cfg = TrainingConfig {
        num_states: states,
        max_iterations: max_iters,
        tolerance: train_tol,
        seed: derive_seed(g.seed, "train"),
        init,
    };
    let outcome = baum_welch_train(&sequences, alphabet, &cfg)?;

    let hmm_json = io::hmm_to_json(&outcome.hmm)?;
    let mut log = String::from(TRAIN_LOG_HEADER);
    log.push('\n');
    for (i, ll) in outcome.log_likelihood.iter().enumerate() {
        log.push_str(&format!("{SCHEMA_VERSION},{i},{}\n", fmt_float(*ll)));
    }

    ensure_dir(&g.out_dir)?;
    write_text(&g.out_dir.join("trained_hmm.json"), &hmm_json)?;
    write_text(&g.out_dir.join("train_log.csv"), &log)?;
    if let Some(codebook) = codebook {
        write_text(&g.out_dir.join("codebook.csv"), &codebook)?;
    }

    eprintln!(
        "train: {} iterations, converged = {}, floored = {}, {:.0} ms",
        outcome.log_likelihood.len(),
        outcome.converged,
        outcome.floored,
        t0.elapsed().as_secs_f64() * 1e3
    );
    Ok(())
}

pub fn cmd_certify(g: &Global, imps_path: &Path, d_tilde: Option<usize>) -> Result<()> {
    let stored = io::read_imps(imps_path)?;
    let m = if stored.schmidt().is_some() {
        stored
    } else {
        canonical_form(&stored, &g.settings())?.left
    };
    let dims: Vec<usize> = match d_tilde {
        Some(d) => vec![d],
        None => (2..=m.bond_dim().max(2)).collect(),
    };
    let certs: Vec<BoundCertificate> = dims
        .iter()
        .map(|&d| certify_bounds(&m, d))
        .collect::<Result<_>>()?;

    let json = io::to_json_string(&certs)?;
    for c in &certs {
        println!(
            "d_tilde={} tail={:.3e} entropy_bound={:.3e} entropy_bits={:.6} slice_rank={} holds={}",
            c.d_tilde, c.tail, c.entropy_bound, c.entropy_bits, c.slice_rank,
            c.holds()
        );
    }
    ensure_dir(&g.out_dir)?;
    write_text(&g.out_dir.join("certificates.json"), &json)?;

    if let Some(bad) = certs.iter().find(|c| !c.holds()) {
        return Err(Error::Gauge(format!(
            "bound certificate violated at budget {}",
            bad.d_tilde
        )));
    }
    Ok(())
}

pub fn cmd_sample(g: &Global, qhmm_path: &Path, length: usize, count: usize) -> Result<()> {
    if length == 0 || count == 0 {
        return Err(Error::InvalidInput(
            "sample needs a positive length and count".into(),
        ));
    }
    let q = io::read_qhmm(qhmm_path)?;
    let mut sequences = Vec::with_capacity(count);
    for i in 0..count {
        let seed = derive_seed(g.seed, &format!("sample:{i}"));
        sequences.push(sample_sequence(&q, length, seed)?);
    }
    let text = io::sequences_to_string(q.alphabet(), &sequences)?;
    ensure_dir(&g.out_dir)?;
    write_text(&g.out_dir.join("samples.txt"), &text)?;
    eprintln!("sample: {count} sequences of length {length}");
    Ok(())
}

#[derive(Serialize)]
struct CdrOutput {
    #[serde(flatten)]
    result: CdrResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    finite_l: Option<Vec<f64>>,
}

pub fn cmd_cdr(g: &Global, model_a: &Path, model_b: &Path, finite_l: Option<usize>) -> Result<()> {
    let a = LinearGenerator::from_hmm(&io::read_hmm(model_a)?)?;
    let b = LinearGenerator::from_hmm(&io::read_hmm(model_b)?)?;
    let settings = g.settings();
    let result = cdr(&a, &b, &settings)?;
    let finite_l = match finite_l {
        Some(l) => Some(cfdr_finite_l(&a, &b, l)?),
        None => None,
    };
    print!("{}", io::to_json_string(&CdrOutput { result, finite_l })?);
    Ok(())
}
