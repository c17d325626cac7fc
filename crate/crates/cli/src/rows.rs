//! Result rows for sweep and compress outputs. One CSV line per
//! (model, labelling, budget, seed); numeric cells use 17 significant
//! digits so a parsed row reproduces the computed floats bit for bit.

use qdr_core::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const RESULT_HEADER: &str = "schema_version,model_id,n_states,p,labelling,d_tilde,\
fidelity,r_c,c_q,schmidt_entropy_bits,tail_eps,rank_k,entropy_bound,seed,wall_ms,status";

/// Floor applied to rate columns in plot exports only, keeping log axes finite.
pub const PLOT_FLOOR: f64 = 1e-9;

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn cell(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model_id: String,
    pub n_states: usize,
    /// branching parameter for ring models; empty for file or trained models
    pub p: Option<f64>,
    pub labelling: String,
    pub d_tilde: usize,
    pub fidelity: Option<f64>,
    pub r_c: Option<f64>,
    pub c_q: Option<f64>,
    pub schmidt_entropy_bits: Option<f64>,
    pub tail_eps: Option<f64>,
    pub rank_k: Option<usize>,
    pub entropy_bound: Option<f64>,
    pub seed: u64,
    pub status: String,
}

pub fn row_key(model_id: &str, labelling: &str, d_tilde: usize, seed: u64) -> String {
    format!("{model_id}:{labelling}:{d_tilde}:{seed}")
}

impl ResultRow {
    pub fn key(&self) -> String {
        row_key(&self.model_id, &self.labelling, self.d_tilde, self.seed)
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// The wall-time column is pinned to zero: identical reruns must produce
    /// identical bytes, so real timings go to stderr instead.
    pub fn encode(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},0,{}",
            SCHEMA_VERSION,
            self.model_id,
            self.n_states,
            cell(self.p),
            self.labelling,
            self.d_tilde,
            cell(self.fidelity),
            cell(self.r_c),
            cell(self.c_q),
            cell(self.schmidt_entropy_bits),
            cell(self.tail_eps),
            self.rank_k.map(|r| r.to_string()).unwrap_or_default(),
            cell(self.entropy_bound),
            self.seed,
            self.status,
        )
    }

    pub fn decode(line: &str) -> Result<ResultRow> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 16 {
            return Err(Error::InvalidInput(format!(
                "result row has {} fields, expected 16: {line:?}",
                fields.len()
            )));
        }
        if fields[0] != SCHEMA_VERSION.to_string() {
            return Err(Error::InvalidInput(format!(
                "unsupported result schema version {:?}",
                fields[0]
            )));
        }
        let int = |i: usize, what: &str| -> Result<usize> {
            fields[i]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad {what} in row: {:?}", fields[i])))
        };
        let opt_float = |i: usize, what: &str| -> Result<Option<f64>> {
            if fields[i].is_empty() {
                return Ok(None);
            }
            fields[i]
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidInput(format!("bad {what} in row: {:?}", fields[i])))
        };
        let opt_int = |i: usize, what: &str| -> Result<Option<usize>> {
            if fields[i].is_empty() {
                return Ok(None);
            }
            int(i, what).map(Some)
        };
        Ok(ResultRow {
            model_id: fields[1].to_string(),
            n_states: int(2, "state count")?,
            p: opt_float(3, "parameter")?,
            labelling: fields[4].to_string(),
            d_tilde: int(5, "bond budget")?,
            fidelity: opt_float(6, "fidelity")?,
            r_c: opt_float(7, "rate")?,
            c_q: opt_float(8, "memory")?,
            schmidt_entropy_bits: opt_float(9, "entropy")?,
            tail_eps: opt_float(10, "tail")?,
            rank_k: opt_int(11, "rank")?,
            entropy_bound: opt_float(12, "bound")?,
            seed: fields[13]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad seed in row: {:?}", fields[13])))?,
            status: fields[15].to_string(),
        })
    }
}
