//! File formats for every artifact the pipeline reads or writes.
//!
//! All JSON floats are emitted with 17 significant digits so a write/read
//! cycle reproduces each f64 bit for bit, and map-valued sections use
//! sorted keys so repeated writes of the same model produce identical
//! bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dilation::{dilate, DilatedHmm, Labelling, LabellingStrategy, COMPOSITE_SEP};
use crate::error::{Error, Result};
use crate::hmm::Hmm;
use crate::imps::{Gauge, Imps};
use crate::qhmm::QhmmModel;

/// Emits floats as `d.dddddddddddddddde[-]e`: 17 significant digits,
/// enough to round-trip any finite f64 exactly, and still valid JSON.
struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    // the formatter writes ASCII only
    Ok(String::from_utf8(buf).expect("json output is ascii"))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidInput(format!(
            "{what}: rows must be non-empty and equally long"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------- HMM JSON

#[derive(Serialize, Deserialize)]
struct HmmFile {
    alphabet: Vec<String>,
    num_states: usize,
    transitions: BTreeMap<String, Vec<Vec<f64>>>,
}

fn hmm_file(hmm: &Hmm) -> HmmFile {
    let transitions = hmm
        .alphabet()
        .iter()
        .zip(hmm.transitions())
        .map(|(sym, t)| (sym.clone(), matrix_rows(t)))
        .collect();
    HmmFile {
        alphabet: hmm.alphabet().to_vec(),
        num_states: hmm.num_states(),
        transitions,
    }
}

fn hmm_from_file(file: HmmFile) -> Result<Hmm> {
    let mut mats = Vec::with_capacity(file.alphabet.len());
    for sym in &file.alphabet {
        let rows = file
            .transitions
            .get(sym)
            .ok_or_else(|| Error::InvalidInput(format!("missing transitions for symbol {sym}")))?;
        let m = rows_to_matrix(rows, &format!("symbol {sym}"))?;
        if m.nrows() != file.num_states || m.ncols() != file.num_states {
            return Err(Error::InvalidInput(format!(
                "symbol {sym}: matrix shape disagrees with num_states = {}",
                file.num_states
            )));
        }
        mats.push(m);
    }
    if file.transitions.len() != file.alphabet.len() {
        return Err(Error::InvalidInput(
            "transitions carry symbols missing from the alphabet".into(),
        ));
    }
    Hmm::new(file.alphabet, mats)
}

pub fn hmm_to_json(hmm: &Hmm) -> Result<String> {
    to_json_string(&hmm_file(hmm))
}

pub fn hmm_from_json(text: &str) -> Result<Hmm> {
    hmm_from_file(serde_json::from_str(text)?)
}

pub fn write_hmm(path: &Path, hmm: &Hmm) -> Result<()> {
    write_text(path, &hmm_to_json(hmm)?)
}

pub fn read_hmm(path: &Path) -> Result<Hmm> {
    hmm_from_json(&fs::read_to_string(path)?)
}

// ------------------------------------------------------- dilated HMM JSON

#[derive(Serialize, Deserialize)]
struct DilatedFile {
    alphabet: Vec<String>,
    num_states: usize,
    transitions: BTreeMap<String, Vec<Vec<f64>>>,
    /// "s,s',x" -> y for every positive transition
    labelling: BTreeMap<String, usize>,
    labelling_strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labelling_seed: Option<u64>,
}

pub fn dilated_to_json(d: &DilatedHmm) -> Result<String> {
    let composite = d.composite_alphabet();
    let mut transitions = BTreeMap::new();
    for (x, _) in d.base().alphabet().iter().enumerate() {
        for y in 0..d.aux_size() {
            let sym = &composite[x * d.aux_size() + y];
            transitions.insert(sym.clone(), matrix_rows(d.tensor(x, y)));
        }
    }
    let labelling = d
        .labelling()
        .assignments()
        .iter()
        .map(|(&(s, s2, x), &y)| (format!("{s},{s2},{x}"), y))
        .collect();
    let (strategy, seed) = match d.labelling().strategy() {
        LabellingStrategy::Random { seed } => ("random".to_string(), Some(seed)),
        other => (other.name().to_string(), None),
    };
    to_json_string(&DilatedFile {
        alphabet: composite,
        num_states: d.num_states(),
        transitions,
        labelling,
        labelling_strategy: strategy,
        labelling_seed: seed,
    })
}

pub fn dilated_from_json(text: &str) -> Result<DilatedHmm> {
    let file: DilatedFile = serde_json::from_str(text)?;
    // recover the base alphabet from the composite labels, keeping the
    // order in which each base symbol first appears
    let mut base_alphabet: Vec<String> = Vec::new();
    let mut aux_size = 0usize;
    for sym in &file.alphabet {
        let (x, y) = sym.rsplit_once(COMPOSITE_SEP).ok_or_else(|| {
            Error::InvalidInput(format!("composite symbol {sym} lacks a separator"))
        })?;
        let y: usize = y
            .parse()
            .map_err(|_| Error::InvalidInput(format!("auxiliary label {y} is not an index")))?;
        aux_size = aux_size.max(y + 1);
        if !base_alphabet.iter().any(|b| b == x) {
            base_alphabet.push(x.to_string());
        }
    }
    if base_alphabet.len() * aux_size != file.alphabet.len() {
        return Err(Error::InvalidInput(
            "composite alphabet is not a full product of base and auxiliary labels".into(),
        ));
    }
    // base transitions: the y-slices of one symbol have disjoint support,
    // so summing them reproduces every entry exactly
    let mut mats = Vec::with_capacity(base_alphabet.len());
    for x in &base_alphabet {
        let mut sum = DMatrix::<f64>::zeros(file.num_states, file.num_states);
        for y in 0..aux_size {
            let sym = format!("{x}{COMPOSITE_SEP}{y}");
            let rows = file.transitions.get(&sym).ok_or_else(|| {
                Error::InvalidInput(format!("missing transitions for composite symbol {sym}"))
            })?;
            let m = rows_to_matrix(rows, &format!("composite symbol {sym}"))?;
            if m.nrows() != file.num_states || m.ncols() != file.num_states {
                return Err(Error::InvalidInput(format!(
                    "composite symbol {sym}: matrix shape disagrees with num_states"
                )));
            }
            sum += m;
        }
        mats.push(sum);
    }
    let base = Hmm::new(base_alphabet, mats)?;
    let mut assignments = BTreeMap::new();
    for (key, &y) in &file.labelling {
        let parts: Vec<&str> = key.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidInput(format!(
                "labelling key {key} is not of the form s,s',x"
            )));
        }
        let idx: Vec<usize> = parts
            .iter()
            .map(|p| {
                p.parse()
                    .map_err(|_| Error::InvalidInput(format!("labelling key {key}: bad index")))
            })
            .collect::<Result<_>>()?;
        assignments.insert((idx[0], idx[1], idx[2]), y);
    }
    let strategy = LabellingStrategy::parse(&file.labelling_strategy, file.labelling_seed)?;
    let labelling = Labelling::from_parts(assignments, aux_size, strategy)?;
    dilate(&base, &labelling)
}

pub fn write_dilated(path: &Path, d: &DilatedHmm) -> Result<()> {
    write_text(path, &dilated_to_json(d)?)
}

pub fn read_dilated(path: &Path) -> Result<DilatedHmm> {
    dilated_from_json(&fs::read_to_string(path)?)
}

// --------------------------------------------------------------- iMPS JSON

#[derive(Serialize, Deserialize)]
struct ImpsFile {
    alphabet: Vec<String>,
    bond_dim: usize,
    gauge: String,
    tensors: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schmidt: Option<Vec<f64>>,
}

fn gauge_name(g: Gauge) -> &'static str {
    match g {
        Gauge::None => "none",
        Gauge::Left => "left",
        Gauge::Right => "right",
        Gauge::Mixed => "mixed",
    }
}

fn gauge_from_name(name: &str) -> Result<Gauge> {
    match name {
        "none" => Ok(Gauge::None),
        "left" => Ok(Gauge::Left),
        "right" => Ok(Gauge::Right),
        "mixed" => Ok(Gauge::Mixed),
        other => Err(Error::InvalidInput(format!("unknown gauge {other}"))),
    }
}

pub fn imps_to_json(m: &Imps) -> Result<String> {
    let tensors = m
        .alphabet()
        .iter()
        .zip(m.tensors())
        .map(|(sym, t)| (sym.clone(), matrix_rows(t)))
        .collect();
    to_json_string(&ImpsFile {
        alphabet: m.alphabet().to_vec(),
        bond_dim: m.bond_dim(),
        gauge: gauge_name(m.gauge()).to_string(),
        tensors,
        schmidt: m.schmidt().map(|s| s.to_vec()),
    })
}

pub fn imps_from_json(text: &str) -> Result<Imps> {
    let file: ImpsFile = serde_json::from_str(text)?;
    let mut mats = Vec::with_capacity(file.alphabet.len());
    for sym in &file.alphabet {
        let rows = file
            .tensors
            .get(sym)
            .ok_or_else(|| Error::InvalidInput(format!("missing tensor for symbol {sym}")))?;
        let m = rows_to_matrix(rows, &format!("symbol {sym}"))?;
        if m.nrows() != file.bond_dim || m.ncols() != file.bond_dim {
            return Err(Error::InvalidInput(format!(
                "symbol {sym}: tensor shape disagrees with bond_dim = {}",
                file.bond_dim
            )));
        }
        mats.push(m);
    }
    Imps::with_gauge(
        file.alphabet,
        mats,
        gauge_from_name(&file.gauge)?,
        file.schmidt,
    )
}

pub fn write_imps(path: &Path, m: &Imps) -> Result<()> {
    write_text(path, &imps_to_json(m)?)
}

pub fn read_imps(path: &Path) -> Result<Imps> {
    imps_from_json(&fs::read_to_string(path)?)
}

// --------------------------------------------------------------- QHMM JSON

#[derive(Serialize, Deserialize)]
struct QhmmFile {
    alphabet: Vec<String>,
    bond_dim: usize,
    kraus: BTreeMap<String, Vec<Vec<Vec<f64>>>>,
    rho_star: Vec<Vec<f64>>,
}

pub fn qhmm_to_json(q: &QhmmModel) -> Result<String> {
    let kraus = q
        .alphabet()
        .iter()
        .enumerate()
        .map(|(x, sym)| {
            let fam = q.kraus(x).iter().map(matrix_rows).collect();
            (sym.clone(), fam)
        })
        .collect();
    to_json_string(&QhmmFile {
        alphabet: q.alphabet().to_vec(),
        bond_dim: q.bond_dim(),
        kraus,
        rho_star: matrix_rows(q.rho_star()),
    })
}

/// The file keeps Kraus operators per symbol in outcome order, so the read
/// side reassigns positional auxiliary labels "0", "1", ...
pub fn qhmm_from_json(text: &str) -> Result<QhmmModel> {
    let file: QhmmFile = serde_json::from_str(text)?;
    let mut kraus = Vec::with_capacity(file.alphabet.len());
    let mut aux_labels = Vec::with_capacity(file.alphabet.len());
    for sym in &file.alphabet {
        let fam_rows = file
            .kraus
            .get(sym)
            .ok_or_else(|| Error::InvalidInput(format!("missing Kraus family for symbol {sym}")))?;
        let mut fam = Vec::with_capacity(fam_rows.len());
        for (i, rows) in fam_rows.iter().enumerate() {
            let m = rows_to_matrix(rows, &format!("symbol {sym}, operator {i}"))?;
            if m.nrows() != file.bond_dim || m.ncols() != file.bond_dim {
                return Err(Error::InvalidInput(format!(
                    "symbol {sym}: Kraus operator shape disagrees with bond_dim"
                )));
            }
            fam.push(m);
        }
        aux_labels.push((0..fam.len()).map(|i| i.to_string()).collect());
        kraus.push(fam);
    }
    let rho = rows_to_matrix(&file.rho_star, "rho_star")?;
    QhmmModel::new(file.alphabet, aux_labels, kraus, rho)
}

pub fn write_qhmm(path: &Path, q: &QhmmModel) -> Result<()> {
    write_text(path, &qhmm_to_json(q)?)
}

pub fn read_qhmm(path: &Path) -> Result<QhmmModel> {
    qhmm_from_json(&fs::read_to_string(path)?)
}

// --------------------------------------------------------- sequence files

/// One sequence per line, whitespace-separated symbol labels. Blank lines
/// are skipped; the alphabet is the sorted set of labels seen.
pub fn sequences_from_str(text: &str) -> Result<(Vec<String>, Vec<Vec<usize>>)> {
    let mut labels: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    labels.sort();
    labels.dedup();
    if labels.is_empty() {
        return Err(Error::InvalidInput("no symbols in sequence data".into()));
    }
    let index: BTreeMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut sequences = Vec::new();
    for line in text.lines() {
        let seq: Vec<usize> = line
            .split_whitespace()
            .map(|tok| index[tok])
            .collect();
        if !seq.is_empty() {
            sequences.push(seq);
        }
    }
    Ok((labels, sequences))
}

pub fn sequences_to_string(alphabet: &[String], sequences: &[Vec<usize>]) -> Result<String> {
    let mut out = String::new();
    for seq in sequences {
        let mut first = true;
        for &s in seq {
            let label = alphabet
                .get(s)
                .ok_or_else(|| Error::InvalidInput(format!("symbol index {s} out of range")))?;
            if !first {
                out.push(' ');
            }
            out.push_str(label);
            first = false;
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn read_sequences(path: &Path) -> Result<(Vec<String>, Vec<Vec<usize>>)> {
    sequences_from_str(&fs::read_to_string(path)?)
}

pub fn write_sequences(path: &Path, alphabet: &[String], sequences: &[Vec<usize>]) -> Result<()> {
    write_text(path, &sequences_to_string(alphabet, sequences)?)
}

// ---------------------------------------------------------- feature files

/// CSV, one vector per row; `has_header` controls whether the first line
/// is column names or data.
pub fn features_from_str(
    text: &str,
    has_header: bool,
) -> Result<(Option<Vec<String>>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = if has_header {
        match lines.next() {
            Some(h) => Some(h.split(',').map(|c| c.trim().to_string()).collect()),
            None => return Err(Error::InvalidInput("feature file is empty".into())),
        }
    } else {
        None
    };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|c| {
                c.trim()
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("feature row {i}: bad value {c}")))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("feature file has no data rows".into()));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidInput("feature rows differ in width".into()));
    }
    Ok((header, rows))
}

pub fn features_to_string(header: Option<&[String]>, rows: &[Vec<f64>]) -> Result<String> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
            first = false;
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn read_features(path: &Path, has_header: bool) -> Result<(Option<Vec<String>>, Vec<Vec<f64>>)> {
    features_from_str(&fs::read_to_string(path)?, has_header)
}

pub fn write_features(path: &Path, header: Option<&[String]>, rows: &[Vec<f64>]) -> Result<()> {
    write_text(path, &features_to_string(header, rows)?)
}
