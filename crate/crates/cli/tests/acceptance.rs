//! Acceptance suite: one test per shipping criterion. Each test prints a
//! single PASS line with the measured quantities once its assertions hold.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qdr_core::dilation::{dilate, make_labelling, verify_dilation, LabellingStrategy};
use qdr_core::divergence::{cdr, certify_bounds, data_processing_check};
use qdr_core::generator::LinearGenerator;
use qdr_core::hmm::{build_tns, random_ergodic_hmm, random_unifilar_hmm, Hmm};
use qdr_core::imps::{canonical_form, qsample_tensors, transfer_eig, Imps, TransferEig};
use qdr_core::io;
use qdr_core::linalg::SolverSettings;
use qdr_core::qhmm::{reconstruct_qhmm, sample_sequence, word_probability_q, QhmmModel};
use qdr_core::seeding::derive_seed;
use qdr_core::truncation::{variational_truncate, TruncationOptions};

use qdr_cli::pipeline::run_pipeline;

fn settings() -> SolverSettings {
    SolverSettings::default()
}

/// Two-state presentation of a fair coin; the standard lossless fixture.
fn b2() -> Hmm {
    let t0 = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.25, 0.0]);
    let t1 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.25, 0.0]);
    Hmm::new(vec!["0".into(), "1".into()], vec![t0, t1]).unwrap()
}

fn seeded_ergodic(base: u64, i: u64) -> Hmm {
    let mut rng = ChaCha8Rng::seed_from_u64(base ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let n = 2 + (i as usize % 4);
    let k = 2 + (i as usize % 2);
    random_ergodic_hmm(n, k, &mut rng).unwrap()
}

fn seeded_unifilar(base: u64, i: u64) -> Hmm {
    let mut rng = ChaCha8Rng::seed_from_u64(base ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let n = 2 + (i as usize % 4);
    let k = 2 + (i as usize % 2);
    random_unifilar_hmm(n, k, &mut rng).unwrap()
}

fn words_of_len(k: usize, l: usize) -> Vec<Vec<usize>> {
    let mut words: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..l {
        words = words
            .into_iter()
            .flat_map(|w| {
                (0..k).map(move |a| {
                    let mut v = w.clone();
                    v.push(a);
                    v
                })
            })
            .collect();
    }
    words
}

/// Brute-force path sum: enumerate every state trajectory explicitly.
fn brute_force_word_probability(h: &Hmm, word: &[usize]) -> f64 {
    fn rec(h: &Hmm, word: &[usize], t: usize, s: usize, weight: f64, total: &mut f64) {
        if t == word.len() {
            *total += weight;
            return;
        }
        let m = h.transition(word[t]);
        for sp in 0..h.num_states() {
            let w = m[(sp, s)];
            if w > 0.0 {
                rec(h, word, t + 1, sp, weight * w, total);
            }
        }
    }
    let pi = h.stationary_distribution().unwrap();
    let mut total = 0.0;
    for s in 0..h.num_states() {
        rec(h, word, 0, s, pi[s], &mut total);
    }
    total
}

fn full_rank_qhmm(h: &Hmm) -> (Imps, TransferEig, QhmmModel) {
    let d = dilate(h, &make_labelling(h, LabellingStrategy::Sequential)).unwrap();
    let raw = qsample_tensors(&d);
    let eig = transfer_eig(&raw, &settings()).unwrap();
    let trunc = variational_truncate(
        &raw,
        &TruncationOptions::new(raw.bond_dim()),
        &settings(),
    )
    .unwrap();
    let aux: Vec<String> = (0..d.aux_size()).map(|y| y.to_string()).collect();
    let q = reconstruct_qhmm(&trunc, &aux, &settings()).unwrap();
    (raw, eig, q)
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_qdr")
}

fn run_bin(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin()).args(args).output().expect("spawn qdr");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read_dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn assert_identical_trees(a: &Path, b: &Path, what: &str) {
    let fa = read_dir_files(a);
    let fb = read_dir_files(b);
    let names_a: Vec<&String> = fa.iter().map(|(n, _)| n).collect();
    let names_b: Vec<&String> = fb.iter().map(|(n, _)| n).collect();
    assert_eq!(names_a, names_b, "{what}: file sets differ");
    for ((name, bytes_a), (_, bytes_b)) in fa.iter().zip(fb.iter()) {
        assert_eq!(bytes_a, bytes_b, "{what}: {name} differs between reruns");
    }
    assert!(!fa.is_empty(), "{what}: produced no files");
}

#[test]
fn criterion_01_dilations_verify_on_random_models() {
    let t0 = Instant::now();
    let mut checked = 0usize;
    let mut worst_marginal = 0.0f64;
    for i in 0..200u64 {
        let hmm = seeded_ergodic(0x0101_0000, i);
        let strategies = [
            LabellingStrategy::Sequential,
            LabellingStrategy::ProbabilityAscending,
            LabellingStrategy::ProbabilityDescending,
            LabellingStrategy::Random { seed: i },
        ];
        for strategy in strategies {
            let name = strategy.name();
            let d = dilate(&hmm, &make_labelling(&hmm, strategy)).unwrap();
            let report = verify_dilation(&d, 5).unwrap();
            assert!(report.deterministic, "model {i} {name}: not deterministic");
            assert!(report.mass_accounted, "model {i} {name}: mass lost");
            assert!(
                report.marginals_preserved && report.max_marginal_error <= 1e-12,
                "model {i} {name}: marginal error {:.3e}",
                report.max_marginal_error
            );
            assert!(report.ergodic, "model {i} {name}: composite not ergodic");
            assert_eq!(report.checked_word_len, 5);
            worst_marginal = worst_marginal.max(report.max_marginal_error);
            checked += 1;
        }
    }
    let dt = t0.elapsed();
    assert!(dt < Duration::from_secs(60), "took {dt:?}, limit 1 min");
    println!(
        "criterion 01: PASS ({checked} dilations verified to word length 5, \
         worst marginal error {worst_marginal:.2e} <= 1e-12, {:.1} s < 60 s)",
        dt.as_secs_f64()
    );
}

#[test]
fn criterion_02_state_and_instrument_probabilities_match_path_sums() {
    let t0 = Instant::now();
    let mut words_checked = 0usize;
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let hmm = seeded_unifilar(0x0202_0000, i);
        let k = hmm.alphabet().len();
        let (raw, eig, q) = full_rank_qhmm(&hmm);
        // deterministic models dilate with one auxiliary label, so composite
        // and base words share indices
        assert_eq!(raw.alphabet().len(), k, "model {i}: unexpected branching");
        for l in 1..=5 {
            for word in words_of_len(k, l) {
                let oracle = brute_force_word_probability(&hmm, &word);
                let doubled = qdr_core::imps::block_probability(&raw, &eig, &word);
                let instrument = word_probability_q(&q, &word).unwrap();
                let err = (doubled - oracle).abs().max((instrument - oracle).abs());
                assert!(
                    err <= 1e-10,
                    "model {i} word {word:?}: oracle {oracle:.15e}, \
                     state {doubled:.15e}, instrument {instrument:.15e}"
                );
                worst = worst.max(err);
                words_checked += 1;
            }
        }
    }
    let dt = t0.elapsed();
    assert!(dt < Duration::from_secs(120), "took {dt:?}, limit 2 min");
    println!(
        "criterion 02: PASS (50 deterministic models, {words_checked} words (L <= 5), \
         worst deviation {worst:.2e} <= 1e-10, {:.1} s < 120 s)",
        dt.as_secs_f64()
    );
}

#[test]
fn criterion_03_transfer_normalization_and_block_sums() {
    let mut worst_eta = 0.0f64;
    let mut worst_sum = 0.0f64;
    for i in 0..20u64 {
        let hmm = seeded_ergodic(0x0303_0000, i);
        for strategy in [
            LabellingStrategy::Sequential,
            LabellingStrategy::Random { seed: 3000 + i },
        ] {
            let d = dilate(&hmm, &make_labelling(&hmm, strategy)).unwrap();
            assert!(verify_dilation(&d, 2).unwrap().is_valid());
            let raw = qsample_tensors(&d);
            let eig = transfer_eig(&raw, &settings()).unwrap();
            worst_eta = worst_eta.max((eig.eta - 1.0).abs());
            assert!(
                (eig.eta - 1.0).abs() <= 1e-10,
                "model {i}: eta = {:.15}",
                eig.eta
            );
            let c = raw.alphabet().len();
            for l in 1..=4 {
                let total: f64 = words_of_len(c, l)
                    .iter()
                    .map(|w| qdr_core::imps::block_probability(&raw, &eig, w))
                    .sum();
                worst_sum = worst_sum.max((total - 1.0).abs());
                assert!(
                    (total - 1.0).abs() <= 1e-9,
                    "model {i} length {l}: block sum {total:.15}"
                );
            }
        }
    }
    println!(
        "criterion 03: PASS (40 q-samples, |eta - 1| <= {worst_eta:.2e} (tol 1e-10), \
         block sums off by <= {worst_sum:.2e} (tol 1e-9, L <= 4))"
    );
}

fn lossless_models() -> Vec<(String, Hmm)> {
    let mut models = vec![("b2".to_string(), b2())];
    for n in 2..=6 {
        for p in [0.2, 0.5, 0.8] {
            models.push((format!("tns-{n}-{p}"), build_tns(n, p).unwrap()));
        }
    }
    models
}

#[test]
fn criterion_04_full_budget_is_lossless() {
    let mut worst_fid = 0.0f64;
    let mut worst_rate = f64::NEG_INFINITY;
    for (name, hmm) in lossless_models() {
        let n = hmm.num_states();
        let run = run_pipeline(&hmm, LabellingStrategy::Sequential, n, 3, 4, &settings()).unwrap();
        worst_fid = worst_fid.max((run.truncation.fidelity - 1.0).abs());
        worst_rate = worst_rate.max(run.r_c);
        assert!(
            (run.truncation.fidelity - 1.0).abs() <= 1e-10,
            "{name}: fidelity {:.15}",
            run.truncation.fidelity
        );
        assert!(run.r_c <= 1e-8, "{name}: rate {:.3e}", run.r_c);
    }
    println!(
        "criterion 04: PASS (B2 and 15 ring models at full budget: \
         |fidelity - 1| <= {worst_fid:.2e} (tol 1e-10), rate <= {worst_rate:.2e} (tol 1e-8))"
    );
}

fn bernoulli(p: f64) -> Hmm {
    let t0 = DMatrix::from_row_slice(1, 1, &[p]);
    let t1 = DMatrix::from_row_slice(1, 1, &[1.0 - p]);
    Hmm::new(vec!["0".into(), "1".into()], vec![t0, t1]).unwrap()
}

fn bernoulli_rate_closed_form(p: f64, q: f64) -> f64 {
    let overlap = p * q + (1.0 - p) * (1.0 - q);
    let pp = p * p + (1.0 - p) * (1.0 - p);
    let qq = q * q + (1.0 - q) * (1.0 - q);
    -0.5 * (overlap / (pp * qq).sqrt()).log2()
}

#[test]
fn criterion_05_rate_zero_on_self_and_bernoulli_closed_form() {
    // self-distance on a mixed bag of models
    let mut worst_self = 0.0f64;
    for i in 0..20u64 {
        let hmm = if i % 2 == 0 {
            seeded_ergodic(0x0505_0000, i)
        } else {
            seeded_unifilar(0x0505_0000, i)
        };
        let g = LinearGenerator::from_hmm(&hmm).unwrap();
        let rate = cdr(&g, &g, &settings()).unwrap().rate;
        worst_self = worst_self.max(rate.abs());
        assert!(rate.abs() <= 1e-10, "model {i}: self rate {rate:.3e}");
    }

    // closed form validated by exhaustive enumeration at L = 8 first
    let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut worst_closed = 0.0f64;
    for &p in &grid {
        for &q in &grid {
            let closed = bernoulli_rate_closed_form(p, q);
            let l = 8;
            let (mut s_pq, mut s_p, mut s_q) = (0.0f64, 0.0f64, 0.0f64);
            for word in words_of_len(2, l) {
                let pw: f64 = word.iter().map(|&a| if a == 0 { p } else { 1.0 - p }).product();
                let qw: f64 = word.iter().map(|&a| if a == 0 { q } else { 1.0 - q }).product();
                s_pq += pw * qw;
                s_p += pw * pw;
                s_q += qw * qw;
            }
            let exhaustive = -0.5 / l as f64 * (s_pq / (s_p * s_q).sqrt()).log2();
            assert!(
                (exhaustive - closed).abs() <= 1e-12,
                "closed form disagrees with L=8 enumeration at p={p} q={q}"
            );

            let rate = cdr(
                &LinearGenerator::from_hmm(&bernoulli(p)).unwrap(),
                &LinearGenerator::from_hmm(&bernoulli(q)).unwrap(),
                &settings(),
            )
            .unwrap()
            .rate;
            worst_closed = worst_closed.max((rate - closed).abs());
            assert!(
                (rate - closed).abs() <= 1e-12,
                "p={p} q={q}: rate {rate:.15e} vs closed {closed:.15e}"
            );
        }
    }
    println!(
        "criterion 05: PASS (20 self-rates <= {worst_self:.2e} (tol 1e-10); 5x5 coin grid \
         matches the enumeration-validated closed form to {worst_closed:.2e} (tol 1e-12))"
    );
}

#[test]
fn criterion_06_ring_rates_decrease_with_budget() {
    let t0 = Instant::now();
    let mut rows = 0usize;
    for n in [5usize, 10, 15] {
        for p in [0.2, 0.5, 0.8] {
            let hmm = build_tns(n, p).unwrap();
            let mut prev = f64::INFINITY;
            let mut last = f64::NAN;
            for d in 1..=n {
                let seed = derive_seed(0x0606, &format!("tns:{n}:{p}:{d}"));
                let run =
                    run_pipeline(&hmm, LabellingStrategy::Sequential, d, 3, seed, &settings())
                        .unwrap();
                assert!(
                    run.r_c <= prev + 1e-9,
                    "tns({n},{p}): rate rose from {prev:.3e} to {:.3e} at budget {d}",
                    run.r_c
                );
                prev = run.r_c;
                last = run.r_c;
                rows += 1;
            }
            assert!(
                last <= 1e-6,
                "tns({n},{p}): rate {last:.3e} at full budget"
            );
        }
    }
    let dt = t0.elapsed();
    assert!(dt < Duration::from_secs(600), "took {dt:?}, limit 10 min");
    println!(
        "criterion 06: PASS ({rows} best-of-3-restart rows over the 3x3 ring grid, \
         rates non-increasing within 1e-9 and <= 1e-6 at full budget, {:.1} s < 600 s)",
        dt.as_secs_f64()
    );
}

#[test]
fn criterion_07_certificates_hold_for_every_spectrum() {
    let mut models = lossless_models();
    for n in [5usize, 10, 15] {
        for p in [0.2, 0.5, 0.8] {
            models.push((format!("tns-{n}-{p}"), build_tns(n, p).unwrap()));
        }
    }
    let mut certificates = 0usize;
    for (name, hmm) in models {
        let d = dilate(&hmm, &make_labelling(&hmm, LabellingStrategy::Sequential)).unwrap();
        let canon = canonical_form(&qsample_tensors(&d), &settings()).unwrap();
        for d_tilde in 2..=hmm.num_states().max(2) {
            let cert = certify_bounds(&canon.left, d_tilde).unwrap();
            assert!(
                cert.tail <= cert.entropy_bound + 1e-12,
                "{name} budget {d_tilde}: tail {:.3e} above entropy bound {:.3e}",
                cert.tail,
                cert.entropy_bound
            );
            assert!(
                cert.entropy_bits <= (cert.slice_rank as f64).log2() + 1e-9,
                "{name} budget {d_tilde}: entropy {:.6} above log2 rank {}",
                cert.entropy_bits,
                cert.slice_rank
            );
            assert!(cert.holds());
            certificates += 1;
        }
    }
    println!(
        "criterion 07: PASS ({certificates} certificates over every lossless and ring \
         spectrum, zero violations of tail <= H/log2(d) or H <= log2(rank))"
    );
}

#[test]
fn criterion_08_marginalizing_cannot_raise_the_overlap_rate() {
    let mut pairs = 0usize;
    let mut worst_gap = f64::NEG_INFINITY;
    for j in 0..20u64 {
        let n = 2 + (j as usize % 3);
        let k = 2 + (j as usize % 2);
        let mut rng_p = ChaCha8Rng::seed_from_u64(0x0808_0000 + 2 * j);
        let mut rng_q = ChaCha8Rng::seed_from_u64(0x0808_0001 + 2 * j);
        let hp = random_ergodic_hmm(n, k, &mut rng_p).unwrap();
        let hq = random_ergodic_hmm(n, k, &mut rng_q).unwrap();
        let dp = dilate(&hp, &make_labelling(&hp, LabellingStrategy::Sequential)).unwrap();
        let dq = dilate(&hq, &make_labelling(&hq, LabellingStrategy::Sequential)).unwrap();
        let gp = LinearGenerator::from_hmm(&dp.to_hmm().unwrap()).unwrap();
        let gq = LinearGenerator::from_hmm(&dq.to_hmm().unwrap()).unwrap();
        let report = data_processing_check(&gp, &gq, 5).unwrap();
        assert!(report.all_hold, "pair {j}: coefficient ordering violated");
        for row in &report.rows {
            let rate_base = -row.bc_base.log2() / row.l as f64;
            let rate_comp = -row.bc_composite.log2() / row.l as f64;
            assert!(
                rate_base <= rate_comp + 1e-12,
                "pair {j} L={}: base rate {rate_base:.12} above composite {rate_comp:.12}",
                row.l
            );
            worst_gap = worst_gap.max(rate_base - rate_comp);
        }
        pairs += 1;
    }
    println!(
        "criterion 08: PASS ({pairs} dilated pairs, base-level overlap rate at most the \
         composite rate for L = 1..5; largest base-minus-composite gap {worst_gap:.2e} <= 1e-12)"
    );
}

#[test]
fn criterion_09_trained_model_compresses_better_than_merging() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();

    // planted 30-state source, fixed seed, and one long synthetic stream
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a17);
    let planted = random_ergodic_hmm(30, 2, &mut rng).unwrap();
    let symbols = planted.sample_sequence(100_000, &mut rng).unwrap();
    io::write_sequences(&dir.join("symbols.txt"), planted.alphabet(), &[symbols]).unwrap();

    let train_dir = dir.join("train");
    let (code, _, err) = run_bin(&[
        "--seed",
        "5",
        "--out-dir",
        train_dir.to_str().unwrap(),
        "train",
        "--data",
        dir.join("symbols.txt").to_str().unwrap(),
        "--states",
        "30",
        "--max-iters",
        "60",
    ]);
    assert_eq!(code, 0, "train failed: {err}");

    let cmp_dir = dir.join("cmp");
    let dims: Vec<String> = (2..=29).map(|d| d.to_string()).collect();
    let dim_list = dims.join(",");
    let (code, _, err) = run_bin(&[
        "--seed",
        "5",
        "--out-dir",
        cmp_dir.to_str().unwrap(),
        "compare-baseline",
        "--hmm",
        train_dir.join("trained_hmm.json").to_str().unwrap(),
        "--d-tilde",
        &dim_list,
        "--merge-states",
        &dim_list,
        "--restarts",
        "1",
    ]);
    assert_eq!(code, 0, "compare-baseline failed: {err}");

    let text = std::fs::read_to_string(cmp_dir.join("comparison.csv")).unwrap();
    let mut quantum = vec![f64::NAN; 30];
    let mut classical = vec![f64::NAN; 30];
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[5], "ok", "row failed: {line}");
        let dim: usize = cells[3].parse().unwrap();
        let rate: f64 = cells[4].parse().unwrap();
        match cells[2] {
            "quantum" => quantum[dim] = rate,
            "classical-merge" => classical[dim] = rate,
            other => panic!("unexpected method {other}"),
        }
    }
    let advantage: Vec<usize> = (2..20)
        .filter(|&d| quantum[d].is_finite() && classical[d].is_finite() && quantum[d] < classical[d])
        .collect();
    let dt = t0.elapsed();
    assert!(
        !advantage.is_empty(),
        "no dimension below 20 where the quantum rate beats the merge baseline"
    );
    assert!(dt < Duration::from_secs(1800), "took {dt:?}, limit 30 min");
    let best = *advantage
        .iter()
        .min_by(|&&a, &&b| {
            (quantum[a] - classical[a])
                .partial_cmp(&(quantum[b] - classical[b]))
                .unwrap()
        })
        .unwrap();
    println!(
        "criterion 09: PASS (30-state fit on 1e5 planted symbols; quantum beats the merge \
         baseline at {} dimensions below 20, e.g. dim {best}: {:.3e} vs {:.3e}; {:.0} s < 1800 s)",
        advantage.len(),
        quantum[best],
        classical[best],
        dt.as_secs_f64()
    );
}

#[test]
fn criterion_10_sampled_block_frequencies_match_the_instrument() {
    let draws = 100_000usize;
    let mut worst_sigma = 0.0f64;
    for i in 0..5u64 {
        let hmm = seeded_ergodic(0x0a0a_0000, i);
        let k = hmm.alphabet().len();
        let (_, _, q) = full_rank_qhmm(&hmm);
        let words = words_of_len(k, 2);
        let probs: Vec<f64> = words
            .iter()
            .map(|w| word_probability_q(&q, w).unwrap())
            .collect();

        let mut counts = vec![0usize; words.len()];
        for draw in 0..draws {
            let seed = derive_seed(0x0a0a + i, &format!("sample:{draw}"));
            let s = sample_sequence(&q, 2, seed).unwrap();
            counts[s[0] * k + s[1]] += 1;
        }
        for (w, (&count, &p)) in words.iter().zip(counts.iter().zip(probs.iter())) {
            let sigma = (p * (1.0 - p) / draws as f64).sqrt();
            let dev = (count as f64 / draws as f64 - p).abs();
            assert!(
                dev <= 4.0 * sigma,
                "model {i} block {w:?}: empirical {:.5} vs {:.5} ({}sigma)",
                count as f64 / draws as f64,
                p,
                (dev / sigma).round()
            );
            worst_sigma = worst_sigma.max(dev / sigma);
        }
    }
    println!(
        "criterion 10: PASS (5 reconstructed models x 1e5 two-step draws, \
         every block frequency within {worst_sigma:.2} sigma of its instrument value (band 4))"
    );
}

#[test]
fn criterion_11_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let hmm_path = dir.join("b2.json");
    io::write_hmm(&hmm_path, &b2()).unwrap();
    let ring_path = dir.join("tns5.json");
    io::write_hmm(&ring_path, &build_tns(5, 0.3).unwrap()).unwrap();
    let hmm = hmm_path.to_str().unwrap();

    let twice = |name: &str, args: &[&str]| -> (PathBuf, String) {
        let mut outs = Vec::new();
        let mut stdouts = Vec::new();
        for round in 0..2 {
            let out = dir.join(format!("{name}-{round}"));
            let mut full: Vec<String> =
                vec!["--seed".into(), "9".into(), "--out-dir".into(), out.to_str().unwrap().into()];
            full.extend(args.iter().map(|a| a.to_string()));
            let refs: Vec<&str> = full.iter().map(String::as_str).collect();
            let (code, stdout, err) = run_bin(&refs);
            assert_eq!(code, 0, "{name} round {round}: {err}");
            outs.push(out);
            stdouts.push(stdout);
        }
        assert_eq!(stdouts[0], stdouts[1], "{name}: stdout differs");
        assert_identical_trees(&outs[0], &outs[1], name);
        (outs[0].clone(), stdouts[0].clone())
    };

    let (compress_dir, _) = twice("compress", &["compress", "--hmm", hmm, "--d-tilde", "2"]);

    let config = dir.join("sweep.json");
    std::fs::write(
        &config,
        r#"{"models": {"kind": "tns", "n": [3, 4], "p": [0.4]},
           "strategies": ["sequential", "random"], "d_tilde": [1, 2, 3, 4],
           "restarts": 2, "seeds": [0, 1]}"#,
    )
    .unwrap();
    twice("sweep", &["sweep", "--config", config.to_str().unwrap()]);

    twice(
        "compare-baseline",
        &[
            "compare-baseline",
            "--hmm",
            ring_path.to_str().unwrap(),
            "--d-tilde",
            "1,2,3",
            "--merge-states",
            "2,3",
        ],
    );

    let qhmm_path = compress_dir.join("qhmm.json");
    let sample_args = [
        "sample",
        "--qhmm",
        qhmm_path.to_str().unwrap(),
        "--length",
        "500",
        "--count",
        "4",
    ];
    let (sample_dir, _) = twice("sample", &sample_args);

    twice(
        "train",
        &[
            "train",
            "--data",
            sample_dir.join("samples.txt").to_str().unwrap(),
            "--states",
            "3",
            "--max-iters",
            "25",
        ],
    );

    twice(
        "certify",
        &[
            "certify",
            "--imps",
            compress_dir.join("truncated.json").to_str().unwrap(),
        ],
    );

    let (_, cdr_stdout) = twice(
        "cdr",
        &[
            "cdr",
            "--model-a",
            hmm,
            "--model-b",
            hmm,
            "--finite-l",
            "4",
        ],
    );
    assert!(cdr_stdout.contains("\"rate\""));

    println!(
        "criterion 11: PASS (compress, sweep, compare-baseline, train, certify, sample \
         and cdr rerun byte-identically, stdout included)"
    );
}
