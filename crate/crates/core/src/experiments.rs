//! Numerical studies behind the `stmg` command line tool: eigenvector
//! conditioning, smallest eigenvalue real parts, MinRes robustness,
//! multigrid iteration counts and dG convergence orders.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembly::{assemble_space, assemble_time, AffineMap};
use crate::denselin::{complex_from_real, cond_2norm_complex, generalized_eig, real_schur, Lu, SchurBlock};
use crate::error::{Error, Result};
use crate::multigrid::{MgConfig, MgHierarchy, Schedule, SmootherConfig};
use crate::slab_inverse::Strategy;
use crate::spacetime::{Manufactured, SpaceTimeSystem, UniformSetup};
use crate::spatial_solvers::{
    make_preconditioner, minres_block_solve, BlockSaddleOperator, PreconditionerVariant, SpdMethod,
};
use crate::splines::{make_uniform_basis, SpaceBasis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Condx,
    Mineig,
    Minres,
    Mg,
    Convergence,
}

impl Study {
    pub const ALL: [Study; 5] = [
        Study::Condx,
        Study::Mineig,
        Study::Minres,
        Study::Mg,
        Study::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::Condx => "condx",
            Study::Mineig => "mineig",
            Study::Minres => "minres",
            Study::Mg => "mg",
            Study::Convergence => "convergence",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Study::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown study '{s}'")))
    }
}

/// Parameters of one study run. Every field has a study-specific default
/// (see [`ExperimentConfig::defaults`]) and can be overridden by a flat
/// `key = value` file or individual assignments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub study: Study,
    pub dim: usize,
    pub p_space: usize,
    pub p_time: usize,
    pub theta: f64,
    pub slab_length: f64,
    /// Base space refinement: `2^ref_space` elements per direction.
    pub ref_space: usize,
    /// Base time refinement: `2^ref_time` elements per slab.
    pub ref_time: usize,
    pub n_slabs: usize,
    pub strategy: Strategy,
    /// Outer tolerance (multigrid residual reduction).
    pub tol: f64,
    /// Inner tolerance of the smoother's spatial solves.
    pub inner_tol: f64,
    pub minres_tol: f64,
    pub coarse_cap: usize,
    pub omega: f64,
    pub pre_sweeps: usize,
    pub post_sweeps: usize,
    pub max_cycles: usize,
    pub seed: u64,
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub p_values: Vec<usize>,
    pub nel_values: Vec<usize>,
    pub theta_values: Vec<f64>,
    pub refinements: Vec<usize>,
    pub slab_counts: Vec<usize>,
    pub strategies: Vec<Strategy>,
}

impl ExperimentConfig {
    pub fn defaults(study: Study) -> Self {
        let mut c = ExperimentConfig {
            study,
            dim: 2,
            p_space: 3,
            p_time: 3,
            theta: 0.01,
            slab_length: 0.1,
            ref_space: 2,
            ref_time: 3,
            n_slabs: 2,
            strategy: Strategy::RSchur,
            tol: 1e-8,
            inner_tol: 1e-4,
            minres_tol: 1e-10,
            coarse_cap: 300,
            omega: 0.5,
            pre_sweeps: 2,
            post_sweeps: 2,
            max_cycles: 50,
            seed: 42,
            jobs: 1,
            out: None,
            p_values: vec![],
            nel_values: vec![],
            theta_values: vec![],
            refinements: vec![],
            slab_counts: vec![],
            strategies: vec![],
        };
        match study {
            Study::Condx => {
                c.theta = 0.01;
                c.p_values = (2..=8).collect();
                c.nel_values = vec![2, 4, 8, 16, 32, 64, 128];
            }
            Study::Mineig => {
                c.slab_length = 1.0;
                c.p_values = (1..=7).collect();
                c.theta_values = vec![0.0, 0.01, 0.1, 1.0, 10.0];
                c.refinements = vec![2, 4, 6, 8];
            }
            Study::Minres => {
                c.theta = 0.1;
                c.ref_space = 1;
                c.ref_time = 1;
                c.p_values = (2..=6).collect();
                c.refinements = (0..=4).collect();
                c.strategies = vec![Strategy::CSchur, Strategy::RSchur];
            }
            Study::Mg => {
                c.refinements = vec![2, 3, 4];
                c.slab_counts = vec![2, 4, 8];
                c.strategies = Strategy::ALL.to_vec();
            }
            Study::Convergence => {
                c.dim = 1;
                c.theta = 0.1;
                c.slab_length = 0.25;
                c.n_slabs = 4;
                c.p_values = vec![2, 3];
                c.refinements = vec![3, 4, 5, 6];
            }
        }
        c
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = |what: &str| Error::Config(format!("invalid value '{v}' for {what}"));
        fn list<T: FromStr>(v: &str) -> Option<Vec<T>> {
            if v.is_empty() {
                return Some(vec![]);
            }
            v.split(',').map(|s| s.trim().parse().ok()).collect()
        }
        macro_rules! parse {
            ($field:expr) => {
                $field = v.parse().map_err(|_| bad(key))?
            };
        }
        macro_rules! parse_list {
            ($field:expr) => {
                $field = list(v).ok_or_else(|| bad(key))?
            };
        }
        match key.trim() {
            "study" => parse!(self.study),
            "dim" => parse!(self.dim),
            "p_space" => parse!(self.p_space),
            "p_time" => parse!(self.p_time),
            "p" => {
                parse_list!(self.p_values);
                if let Some(&p) = self.p_values.first() {
                    self.p_space = p;
                    self.p_time = p;
                }
            }
            "theta" => {
                parse_list!(self.theta_values);
                if let Some(&t) = self.theta_values.first() {
                    self.theta = t;
                }
            }
            "slab_length" => parse!(self.slab_length),
            "ref_space" => parse!(self.ref_space),
            "ref_time" => parse!(self.ref_time),
            "n_slabs" => parse!(self.n_slabs),
            "strategy" => {
                parse!(self.strategy);
                self.strategies = vec![self.strategy];
            }
            "tol" => parse!(self.tol),
            "inner_tol" => parse!(self.inner_tol),
            "minres_tol" => parse!(self.minres_tol),
            "coarse_cap" => parse!(self.coarse_cap),
            "omega" => parse!(self.omega),
            "pre_sweeps" => parse!(self.pre_sweeps),
            "post_sweeps" => parse!(self.post_sweeps),
            "max_cycles" => parse!(self.max_cycles),
            "seed" => parse!(self.seed),
            "jobs" => parse!(self.jobs),
            "out" => self.out = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "p_values" => parse_list!(self.p_values),
            "nel_values" => parse_list!(self.nel_values),
            "theta_values" => parse_list!(self.theta_values),
            "refinements" => parse_list!(self.refinements),
            "slab_counts" => parse_list!(self.slab_counts),
            "strategies" => parse_list!(self.strategies),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every assignment of a flat `key = value` text (`#` starts a comment).
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        self.validate()
    }

    /// Defaults of the study named in the file (or `study`), then the file.
    pub fn from_file(path: &Path, study: Study) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut c = Self::defaults(study);
        c.apply_text(&text)?;
        if c.study != study {
            let mut d = Self::defaults(c.study);
            d.apply_text(&text)?;
            c = d;
        }
        Ok(c)
    }

    /// Canonical `key = value` form; parsing it reproduces the config.
    pub fn to_text(&self) -> String {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
        }
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("study", self.study.to_string());
        kv("dim", self.dim.to_string());
        kv("p_space", self.p_space.to_string());
        kv("p_time", self.p_time.to_string());
        kv("slab_length", format!("{:e}", self.slab_length));
        kv("ref_space", self.ref_space.to_string());
        kv("ref_time", self.ref_time.to_string());
        kv("n_slabs", self.n_slabs.to_string());
        kv("tol", format!("{:e}", self.tol));
        kv("inner_tol", format!("{:e}", self.inner_tol));
        kv("minres_tol", format!("{:e}", self.minres_tol));
        kv("coarse_cap", self.coarse_cap.to_string());
        kv("omega", format!("{:e}", self.omega));
        kv("pre_sweeps", self.pre_sweeps.to_string());
        kv("post_sweeps", self.post_sweeps.to_string());
        kv("max_cycles", self.max_cycles.to_string());
        kv("seed", self.seed.to_string());
        kv("jobs", self.jobs.to_string());
        kv(
            "out",
            self.out.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        kv("p_values", join(&self.p_values));
        kv("nel_values", join(&self.nel_values));
        kv("refinements", join(&self.refinements));
        kv("slab_counts", join(&self.slab_counts));
        kv("strategy", self.strategy.to_string());
        kv("strategies", join(&self.strategies));
        kv(
            "theta_values",
            join(&self.theta_values.iter().map(|t| format!("{t:e}")).collect::<Vec<_>>()),
        );
        kv("theta_value", format!("{:e}", self.theta));
        s
    }

    /// Parses the canonical form written by [`ExperimentConfig::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let study = text
            .lines()
            .find_map(|l| {
                l.split_once('=')
                    .filter(|(k, _)| k.trim() == "study")
                    .map(|(_, v)| v.trim().to_string())
            })
            .ok_or_else(|| Error::Config("missing study".into()))?
            .parse()?;
        let mut c = Self::defaults(study);
        let mut theta = None;
        let mut strategies = None;
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                match k.trim() {
                    "theta_value" => theta = Some(v.trim().parse().map_err(|_| Error::Config("theta".into()))?),
                    "strategies" => strategies = Some(v.to_string()),
                    "theta_values" => c.theta_values = parse_floats(v)?,
                    key => c.set(key, v)?,
                }
            }
        }
        if let Some(t) = theta {
            c.theta = t;
        }
        if let Some(s) = strategies {
            c.set("strategies", &s)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.into()));
        if !(1..=2).contains(&self.dim) {
            return err("dim must be 1 or 2");
        }
        if self.p_space < 1 || self.p_time < 1 {
            return err("degrees must be >= 1");
        }
        if !(self.theta >= 0.0) || self.theta_values.iter().any(|t| !(*t >= 0.0)) {
            return err("theta must be >= 0");
        }
        if !(self.slab_length > 0.0) {
            return err("slab_length must be positive");
        }
        if self.n_slabs < 1 {
            return err("n_slabs must be >= 1");
        }
        if !(self.tol > 0.0 && self.inner_tol > 0.0 && self.minres_tol > 0.0) {
            return err("tolerances must be positive");
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return err("omega must lie in (0, 1]");
        }
        if self.jobs < 1 {
            return err("jobs must be >= 1");
        }
        if self.p_values.iter().any(|&p| p < 1) {
            return err("p_values must be >= 1");
        }
        if self.study == Study::Mg && self.refinements.len() != self.slab_counts.len() {
            return err("mg: refinements and slab_counts must pair up");
        }
        Ok(())
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_floats(v: &str) -> Result<Vec<f64>> {
    let v = v.trim();
    if v.is_empty() {
        return Ok(vec![]);
    }
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid number '{s}'")))
        })
        .collect()
}

/// One table cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Float(f) => Some(*f),
            Cell::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    fn to_csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            // exponent form keeps floats distinguishable from integers
            Cell::Float(f) => format!("{f:e}"),
            Cell::Text(s) => s.clone(),
        }
    }

    fn from_csv(s: &str) -> Cell {
        if let Ok(i) = s.parse::<i64>() {
            return Cell::Int(i);
        }
        let looks_float = s.contains(['e', '.']) || matches!(s, "inf" | "-inf" | "NaN");
        match s.parse::<f64>() {
            Ok(f) if looks_float => Cell::Float(f),
            _ => Cell::Text(s.to_string()),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(i) => write!(f, "{i}"),
            Cell::Float(x) => {
                if *x != 0.0 && (x.abs() >= 1e5 || x.abs() < 1e-3) {
                    write!(f, "{x:.3e}")
                } else {
                    write!(f, "{x:.4}")
                }
            }
            Cell::Text(s) => f.write_str(s),
        }
    }
}

/// Column-named table of study results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        ResultTable {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Dimension {
                expected: self.columns.len(),
                found: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn get(&self, row: usize, name: &str) -> Option<&Cell> {
        self.column(name).and_then(|c| self.rows.get(row).map(|r| &r[c]))
    }

    /// Rows whose named columns equal the given numbers.
    pub fn find(&self, keys: &[(&str, f64)]) -> Option<&[Cell]> {
        self.rows
            .iter()
            .find(|r| {
                keys.iter()
                    .all(|(k, v)| self.column(k).and_then(|c| r[c].as_f64()).is_some_and(|x| x == *v))
            })
            .map(Vec::as_slice)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        w.write_record(&self.columns).map_err(|e| Error::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::to_csv))
                .map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        let columns = r
            .headers()
            .map_err(|e| Error::Io(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut out = ResultTable { columns, rows: vec![] };
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
            out.push(rec.iter().map(Cell::from_csv).collect())?;
        }
        Ok(out)
    }
}

impl fmt::Display for ResultTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(Cell::to_string).collect())
            .collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|c| {
                cells
                    .iter()
                    .map(|r| r[c].len())
                    .chain([self.columns[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |vals: &[String], f: &mut fmt::Formatter<'_>| -> fmt::Result {
            let parts: Vec<String> = vals.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
            writeln!(f, "{}", parts.join("  "))
        };
        line(&self.columns, f)?;
        for r in &cells {
            line(r, f)?;
        }
        Ok(())
    }
}

/// JSON sidecar describing how a table was produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub study: Study,
    pub seed: u64,
    pub version: String,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub columns: Vec<String>,
    pub rows: usize,
}

/// Path of the metadata sidecar for a CSV output.
pub fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes `out` and `out.meta.json`.
pub fn write_outputs(cfg: &ExperimentConfig, table: &ResultTable, out: &Path) -> Result<()> {
    table.write_csv(out)?;
    let meta = RunMetadata {
        study: cfg.study,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: cfg.hash(),
        config: cfg.clone(),
        columns: table.columns.clone(),
        rows: table.rows.len(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(meta_path(out), json)?;
    Ok(())
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs the configured study.
pub fn run(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    match cfg.study {
        Study::Condx => run_condx(cfg),
        Study::Mineig => run_mineig(cfg),
        Study::Minres => run_minres(cfg),
        Study::Mg => run_mg(cfg),
        Study::Convergence => run_convergence(cfg),
    }
}

/// `cond₂(X)` of the unit-column eigenvector matrix of `M_t⁻¹K_t`.
pub fn run_condx(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let cells: Vec<(usize, usize)> = cfg
        .p_values
        .iter()
        .flat_map(|&p| cfg.nel_values.iter().map(move |&n| (p, n)))
        .collect();
    let results: Vec<Cell> = with_pool(cfg.jobs, || {
        cells
            .par_iter()
            .map(|&(p, nel)| {
                let r = make_uniform_basis(p, nel, (0.0, cfg.slab_length))
                    .and_then(|b| assemble_time(&b, cfg.theta))
                    .and_then(|(kt, mt)| generalized_eig(&kt, &mt))
                    .map(|ge| cond_2norm_complex(&ge.x));
                match r {
                    Ok(c) => Cell::Float(c),
                    Err(e) => Cell::Text(format!("error: {e}")),
                }
            })
            .collect()
    })?;
    let mut t = ResultTable::new(&["p", "nel", "n_t", "cond_x"]);
    for (&(p, nel), c) in cells.iter().zip(results) {
        t.push(vec![p.into(), nel.into(), (nel + p).into(), c])?;
    }
    Ok(t)
}

/// Cells of a condx table that break monotone growth along `p` or `nel`.
pub fn condx_violations(t: &ResultTable) -> Vec<String> {
    let get = |p: usize, n: usize| {
        t.find(&[("p", p as f64), ("nel", n as f64)])
            .and_then(|r| r[3].as_f64())
    };
    let mut ps: Vec<usize> = t
        .rows
        .iter()
        .filter_map(|r| r[0].as_f64())
        .map(|v| v as usize)
        .collect();
    let mut ns: Vec<usize> = t
        .rows
        .iter()
        .filter_map(|r| r[1].as_f64())
        .map(|v| v as usize)
        .collect();
    ps.sort_unstable();
    ps.dedup();
    ns.sort_unstable();
    ns.dedup();
    let mut out = Vec::new();
    for &n in &ns {
        for w in ps.windows(2) {
            match (get(w[0], n), get(w[1], n)) {
                (Some(a), Some(b)) if b > a => {}
                (a, b) => out.push(format!("nel={n}: p={} -> {:?}, p={} -> {:?}", w[0], a, w[1], b)),
            }
        }
    }
    for &p in &ps {
        for w in ns.windows(2) {
            match (get(p, w[0]), get(p, w[1])) {
                (Some(a), Some(b)) if b > a => {}
                (a, b) => out.push(format!("p={p}: nel={} -> {:?}, nel={} -> {:?}", w[0], a, w[1], b)),
            }
        }
    }
    out
}

/// Smallest real part of the generalized eigenvalues of `(K_t, M_t)`, or
/// `*` when `M_t` has an eigenvalue with non-positive real part.
pub fn run_mineig(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let thetas = if cfg.theta_values.is_empty() {
        vec![cfg.theta]
    } else {
        cfg.theta_values.clone()
    };
    let mut cells = Vec::new();
    for &r in &cfg.refinements {
        for &th in &thetas {
            for &p in &cfg.p_values {
                cells.push((r, th, p));
            }
        }
    }
    let results: Vec<(Cell, Cell)> = with_pool(cfg.jobs, || {
        cells
            .par_iter()
            .map(|&(r, th, p)| {
                let entry = make_uniform_basis(p, 1 << r, (0.0, cfg.slab_length))
                    .and_then(|b| assemble_time(&b, th))
                    .and_then(|(kt, mt)| {
                        let mt_min = real_schur(&mt)?
                            .eigenvalues()
                            .iter()
                            .map(|l| l.re)
                            .fold(f64::INFINITY, f64::min);
                        let sym_min = real_schur(&mt.symmetric_part())?
                            .eigenvalues()
                            .iter()
                            .map(|l| l.re)
                            .fold(f64::INFINITY, f64::min);
                        if mt_min > 0.0 {
                            let a = Lu::factor(&mt)?.solve_matrix(&kt);
                            let min_re = real_schur(&a)?
                                .eigenvalues()
                                .iter()
                                .map(|l| l.re)
                                .fold(f64::INFINITY, f64::min);
                            Ok((min_re.into(), sym_min.into()))
                        } else {
                            Ok((Cell::from("*"), sym_min.into()))
                        }
                    });
                entry.unwrap_or_else(|e: Error| (Cell::Text(format!("error: {e}")), Cell::from("")))
            })
            .collect()
    })?;
    let mut t = ResultTable::new(&["refinement", "theta", "p", "nel", "min_re_lambda", "mt_sym_min"]);
    for (&(r, th, p), (v, s)) in cells.iter().zip(results) {
        t.push(vec![r.into(), th.into(), p.into(), (1usize << r).into(), v, s])?;
    }
    Ok(t)
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn cell_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Maximum MinRes iterations over all spatial problems of one Schur variant.
fn minres_cell(cfg: &ExperimentConfig, p: usize, r: usize, strategy: Strategy) -> Result<(usize, usize, usize)> {
    let basis_t = make_uniform_basis(p, 1 << (cfg.ref_time + r), (0.0, cfg.slab_length))?;
    let (kt, mt) = assemble_time(&basis_t, cfg.theta)?;
    let space = SpaceBasis::uniform_dirichlet(cfg.dim, p, 1 << (cfg.ref_space + r))?;
    let (mx, kx) = assemble_space(&space, &AffineMap::identity(cfg.dim))?;
    let (mx, kx) = (Arc::new(mx), Arc::new(kx));
    let nx = space.n_dofs();
    let rs = real_schur(&Lu::factor(&mt)?.solve_matrix(&kt))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(cfg.seed, &[p as u64, r as u64, strategy as u64]));
    // (α, β₁, β₂, variant) per spatial problem
    let mut problems = Vec::new();
    match strategy {
        Strategy::CSchur | Strategy::Diag => {
            for l in complex_from_real(&rs).eigenvalues() {
                problems.push((l.re, -l.im, l.im, PreconditionerVariant::Balanced));
            }
        }
        _ => {
            for b in &rs.blocks {
                match *b {
                    SchurBlock::Real(k) => problems.push((rs.t[(k, k)], 0.0, 0.0, PreconditionerVariant::Scaled)),
                    SchurBlock::Pair(k) => problems.push((
                        rs.t[(k, k)],
                        rs.t[(k, k + 1)],
                        rs.t[(k + 1, k)],
                        PreconditionerVariant::Scaled,
                    )),
                }
            }
        }
    }
    let mut max_it = 0;
    for (i, &(alpha, b1, b2, variant)) in problems.iter().enumerate() {
        let op = BlockSaddleOperator {
            k: kx.clone(),
            m: mx.clone(),
            alpha,
            beta1: b1,
            beta2: b2,
        };
        let f = random_vector(&mut rng, nx);
        let g = random_vector(&mut rng, nx);
        let prec = make_preconditioner(&op, variant, SpdMethod::Cholesky, 1e-14).map_err(|e| e.at_eigenvalue(i))?;
        let (_, _, rep) =
            minres_block_solve(&op, &prec, None, &f, &g, cfg.minres_tol).map_err(|e| e.at_eigenvalue(i))?;
        max_it = max_it.max(rep.iterations);
    }
    Ok((max_it, problems.len(), nx))
}

/// Maximum MinRes iteration counts for the shifted spatial problems.
pub fn run_minres(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let strategies = if cfg.strategies.is_empty() {
        vec![Strategy::CSchur, Strategy::RSchur]
    } else {
        cfg.strategies.clone()
    };
    let mut cells = Vec::new();
    for &r in &cfg.refinements {
        for &s in &strategies {
            for &p in &cfg.p_values {
                cells.push((r, s, p));
            }
        }
    }
    let results: Vec<Result<(usize, usize, usize)>> = with_pool(cfg.jobs, || {
        cells.par_iter().map(|&(r, s, p)| minres_cell(cfg, p, r, s)).collect()
    })?;
    let mut t = ResultTable::new(&["refinement", "strategy", "p", "n_x", "systems", "max_iterations"]);
    for (&(r, s, p), res) in cells.iter().zip(results) {
        let row = match res {
            Ok((it, n, nx)) => vec![r.into(), s.name().into(), p.into(), nx.into(), n.into(), it.into()],
            Err(e) => vec![
                r.into(),
                s.name().into(),
                p.into(),
                Cell::from(""),
                Cell::from(""),
                Cell::Text(format!("error: {e}")),
            ],
        };
        t.push(row)?;
    }
    Ok(t)
}

fn mg_setup(cfg: &ExperimentConfig, ref_x: usize, n_slabs: usize) -> UniformSetup {
    UniformSetup {
        dim: cfg.dim,
        p_space: cfg.p_space,
        nel_space: 1 << ref_x,
        p_time: cfg.p_time,
        nel_time: 1 << cfg.ref_time,
        n_slabs,
        slab_length: cfg.slab_length,
        theta: cfg.theta,
        t0: 0.0,
    }
}

/// Multigrid solves with every smoother strategy.
pub fn run_mg(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let strategies = if cfg.strategies.is_empty() {
        vec![cfg.strategy]
    } else {
        cfg.strategies.clone()
    };
    let mut t = ResultTable::new(&[
        "dofs",
        "ref_x",
        "ref_t",
        "slabs",
        "strategy",
        "levels",
        "mg_iterations",
        "converged",
        "residual",
        "factor",
        "setup_s",
        "solve_s",
    ]);
    let problem = Manufactured::SineExp { dim: cfg.dim };
    for (&rx, &ns) in cfg.refinements.iter().zip(&cfg.slab_counts) {
        let setup = mg_setup(cfg, rx, ns);
        for &s in &strategies {
            let mgc = MgConfig {
                smoother: SmootherConfig {
                    omega: cfg.omega,
                    pre_sweeps: cfg.pre_sweeps,
                    post_sweeps: cfg.post_sweeps,
                    strategy: s,
                    inner_tol: cfg.inner_tol,
                    spd_method: SpdMethod::Cholesky,
                },
                coarse_cap: cfg.coarse_cap,
                max_levels: 20,
                schedule: Schedule::Alternating,
                tol: cfg.tol,
                max_cycles: cfg.max_cycles,
            };
            let res = with_pool(cfg.jobs, || {
                MgHierarchy::new(&setup, Some(&problem), mgc).and_then(|h| {
                    let f = h.finest().rhs.clone();
                    h.solve(&f).map(|(_, rep)| (h.n_levels(), h.setup_seconds, rep))
                })
            })?;
            let head: Vec<Cell> = vec![
                setup.n_dofs().into(),
                rx.into(),
                cfg.ref_time.into(),
                ns.into(),
                s.name().into(),
            ];
            let tail: Vec<Cell> = match res {
                Ok((levels, setup_s, rep)) => vec![
                    levels.into(),
                    rep.iterations.into(),
                    rep.converged.into(),
                    rep.relative_residual().into(),
                    rep.convergence_factor(3.min(rep.iterations.saturating_sub(1))).into(),
                    setup_s.into(),
                    rep.seconds.into(),
                ],
                Err(e) => {
                    let mut v: Vec<Cell> = vec![Cell::from(""); 7];
                    v[1] = Cell::Text(format!("error: {e}"));
                    v
                }
            };
            t.push(head.into_iter().chain(tail).collect())?;
        }
    }
    Ok(t)
}

/// dG-norm errors for the manufactured smooth solution under simultaneous
/// refinement in space and time, with observed orders.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let problem = Manufactured::SineExp { dim: cfg.dim };
    let min_ref = cfg.refinements.iter().copied().min().unwrap_or(0);
    let cells: Vec<(usize, usize)> = cfg
        .p_values
        .iter()
        .flat_map(|&p| cfg.refinements.iter().map(move |&r| (p, r)))
        .collect();
    let errors: Vec<Result<(usize, f64)>> = with_pool(cfg.jobs, || {
        cells
            .par_iter()
            .map(|&(p, r)| {
                let setup = UniformSetup {
                    dim: cfg.dim,
                    p_space: p,
                    nel_space: 1 << r,
                    p_time: p,
                    nel_time: 1 << (r - min_ref),
                    n_slabs: cfg.n_slabs,
                    slab_length: cfg.slab_length,
                    theta: cfg.theta,
                    t0: 0.0,
                };
                let sys = SpaceTimeSystem::uniform(&setup, Some(&problem))?;
                let u = sys.sequential_solve()?;
                Ok((sys.n_dofs(), sys.dg_error(&u, &problem)?))
            })
            .collect()
    })?;
    let mut t = ResultTable::new(&["p", "refinement", "nel_x", "nel_t", "dofs", "dg_error", "order"]);
    let mut prev: Option<(usize, f64)> = None;
    for (&(p, r), res) in cells.iter().zip(errors) {
        let (dofs, e) = res?;
        let order = match prev {
            Some((pp, pe)) if pp == p => Cell::Float((pe / e).log2()),
            _ => Cell::from(""),
        };
        prev = Some((p, e));
        t.push(vec![
            p.into(),
            r.into(),
            (1usize << r).into(),
            (1usize << (r - min_ref)).into(),
            dofs.into(),
            e.into(),
            order,
        ])?;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trip() {
        for s in Study::ALL {
            let mut c = ExperimentConfig::defaults(s);
            c.theta = 0.37;
            c.out = Some(PathBuf::from("x.csv"));
            let back = ExperimentConfig::from_text(&c.to_text()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn config_overrides_and_errors() {
        let mut c = ExperimentConfig::defaults(Study::Mg);
        c.apply_text("# comment\nstrategy = diag\np = 2\ntheta=0.1 # trailing\n")
            .unwrap();
        assert_eq!((c.strategy, c.p_space, c.p_time, c.theta), (Strategy::Diag, 2, 2, 0.1));
        assert!(c.apply_text("bogus = 1").is_err());
        assert!(c.apply_text("omega = 2").is_err());
        assert!(c.apply_text("no equals sign").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut t = ResultTable::new(&["a", "b", "c"]);
        t.push(vec![Cell::Int(3), Cell::Float(1.0), Cell::from("*")]).unwrap();
        t.push(vec![Cell::Int(-1), Cell::Float(2.5e-13), Cell::from("x y")])
            .unwrap();
        assert!(t.push(vec![Cell::Int(0)]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        t.write_csv(&path).unwrap();
        assert_eq!(ResultTable::read_csv(&path).unwrap(), t);
    }

    #[test]
    fn small_studies_run() {
        let mut c = ExperimentConfig::defaults(Study::Condx);
        c.p_values = vec![2, 3];
        c.nel_values = vec![2, 4];
        let t = run(&c).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert!(condx_violations(&t).is_empty());

        let mut c = ExperimentConfig::defaults(Study::Minres);
        c.dim = 1;
        c.p_values = vec![2];
        c.refinements = vec![0];
        let t = run(&c).unwrap();
        for r in &t.rows {
            let it = r[5].as_f64().unwrap();
            assert!((1.0..=30.0).contains(&it));
        }

        let mut c = ExperimentConfig::defaults(Study::Convergence);
        c.p_values = vec![1];
        c.refinements = vec![2, 3];
        let t = run(&c).unwrap();
        assert!(t.rows[1][6].as_f64().unwrap() > 0.5);
    }

    #[test]
    fn study_tables_are_deterministic() {
        let mut c = ExperimentConfig::defaults(Study::Minres);
        c.dim = 1;
        c.p_values = vec![3];
        c.refinements = vec![0];
        c.jobs = 2;
        assert_eq!(run(&c).unwrap(), run(&c).unwrap());
    }
}
