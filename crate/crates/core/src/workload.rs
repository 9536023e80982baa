//! Function traces: CSV ingest, synthetic generation, epoch bucketing.
//!
//! A trace is a table of [`FunctionSpec`]s plus a list of [`EpochWorkload`]s.
//! Functions are referenced everywhere else by their index into the spec
//! table (`FnIdx`); the string id only appears at the file boundary.
//!
//! File formats (UTF-8, `.` decimal separator, LF line endings):
//!   - `functions.csv`: `id,runtime_s,deadline_s,mem_mb,cpu_base_cores,cpu_per_request_cores`
//!   - `arrivals.csv`:  `function_id,arrival_time_s`

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, WorkloadError};

/// Index into a trace's function spec table.
pub type FnIdx = usize;

/// Static profile of one function id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub id: String,
    /// Service time of one request, seconds.
    pub runtime_s: f64,
    /// SLO deadline measured from request arrival, seconds.
    pub deadline_s: f64,
    /// Memory footprint of one container instance.
    pub mem_mb: u64,
    /// Cores consumed by an idle container.
    pub cpu_base_cores: f64,
    /// Additional cores per concurrent in-flight request.
    pub cpu_per_request_cores: f64,
}

impl FunctionSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let fail = |msg: String| WorkloadError::InvalidSpec {
            id: self.id.clone(),
            msg,
        };
        if !(self.runtime_s > 0.0) {
            return Err(fail(format!("runtime_s must be > 0, got {}", self.runtime_s)));
        }
        if self.deadline_s < self.runtime_s {
            return Err(fail(format!(
                "deadline_s {} is below runtime_s {}",
                self.deadline_s, self.runtime_s
            )));
        }
        if self.mem_mb == 0 {
            return Err(fail("mem_mb must be > 0".into()));
        }
        if !(self.cpu_per_request_cores > 0.0) {
            return Err(fail(format!(
                "cpu_per_request_cores must be > 0, got {}",
                self.cpu_per_request_cores
            )));
        }
        if self.cpu_base_cores < 0.0 {
            return Err(fail("cpu_base_cores must be >= 0".into()));
        }
        Ok(())
    }
}

/// Request arrivals of one planning epoch, all modeled at epoch start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochWorkload {
    pub epoch_index: usize,
    /// Function index -> request count (>= 1 for every key present).
    pub arrivals: BTreeMap<FnIdx, u64>,
}

impl EpochWorkload {
    pub fn empty(epoch_index: usize) -> Self {
        EpochWorkload {
            epoch_index,
            arrivals: BTreeMap::new(),
        }
    }

    pub fn total_requests(&self) -> u64 {
        self.arrivals.values().sum()
    }

    pub fn function_ids(&self) -> Vec<FnIdx> {
        self.arrivals.keys().copied().collect()
    }
}

/// A spec table plus its epoch-bucketed arrivals.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub specs: Vec<FunctionSpec>,
    pub epochs: Vec<EpochWorkload>,
}

impl Trace {
    pub fn total_requests(&self) -> u64 {
        self.epochs.iter().map(|e| e.total_requests()).sum()
    }
}

fn default_n_function_ids() -> usize {
    424
}
fn default_epochs() -> usize {
    32
}
fn default_epoch_length_s() -> f64 {
    900.0
}
fn default_seed() -> u64 {
    7
}
fn default_short_fraction() -> f64 {
    0.9
}
fn default_runtime_short_s() -> (f64, f64) {
    (0.1, 30.0)
}
fn default_runtime_long_s() -> (f64, f64) {
    (30.0, 300.0)
}
fn default_slack_factor() -> f64 {
    3.0
}
fn default_ids_per_epoch() -> (usize, usize) {
    (13, 62)
}
fn default_arrivals_per_function() -> (u64, u64) {
    (1, 40)
}
fn default_mem_mb_choices() -> Vec<u64> {
    vec![128, 256, 512, 1024]
}
fn default_cpu_base_cores() -> (f64, f64) {
    (0.05, 0.25)
}
fn default_cpu_per_request_cores() -> (f64, f64) {
    (0.1, 0.5)
}

/// Knobs of the synthetic trace generator.
///
/// Runtimes are drawn from a two-mode log-uniform mixture: a `short_fraction`
/// share of function ids gets the short range, the rest the long range.
/// Arrival counts per (epoch, function) are log-uniform over
/// `arrivals_per_function`. Deadlines are `slack_factor * runtime_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub n_function_ids: usize,
    pub epochs: usize,
    pub epoch_length_s: f64,
    pub seed: u64,
    pub short_fraction: f64,
    pub runtime_short_s: (f64, f64),
    pub runtime_long_s: (f64, f64),
    pub slack_factor: f64,
    /// Band of distinct function ids per epoch; enforced exactly.
    pub ids_per_epoch: (usize, usize),
    pub arrivals_per_function: (u64, u64),
    pub mem_mb_choices: Vec<u64>,
    pub cpu_base_cores: (f64, f64),
    pub cpu_per_request_cores: (f64, f64),
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            n_function_ids: default_n_function_ids(),
            epochs: default_epochs(),
            epoch_length_s: default_epoch_length_s(),
            seed: default_seed(),
            short_fraction: default_short_fraction(),
            runtime_short_s: default_runtime_short_s(),
            runtime_long_s: default_runtime_long_s(),
            slack_factor: default_slack_factor(),
            ids_per_epoch: default_ids_per_epoch(),
            arrivals_per_function: default_arrivals_per_function(),
            mem_mb_choices: default_mem_mb_choices(),
            cpu_base_cores: default_cpu_base_cores(),
            cpu_per_request_cores: default_cpu_per_request_cores(),
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_function_ids == 0 {
            return Err(ConfigError::field("n_function_ids", "must be >= 1"));
        }
        if !(self.epoch_length_s > 0.0) {
            return Err(ConfigError::field("epoch_length_s", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.short_fraction) {
            return Err(ConfigError::field("short_fraction", "must lie in [0, 1]"));
        }
        for (name, (lo, hi)) in [
            ("runtime_short_s", self.runtime_short_s),
            ("runtime_long_s", self.runtime_long_s),
            ("cpu_base_cores", self.cpu_base_cores),
            ("cpu_per_request_cores", self.cpu_per_request_cores),
        ] {
            if !(lo <= hi) || lo < 0.0 {
                return Err(ConfigError::field(name, "range must satisfy 0 <= lo <= hi"));
            }
        }
        if !(self.runtime_short_s.0 > 0.0) || !(self.cpu_per_request_cores.0 > 0.0) {
            return Err(ConfigError::field(
                "runtime_short_s/cpu_per_request_cores",
                "lower bound must be > 0",
            ));
        }
        if self.slack_factor < 1.0 {
            return Err(ConfigError::field("slack_factor", "must be >= 1"));
        }
        let (bmin, bmax) = self.ids_per_epoch;
        if bmin > bmax || bmin > self.n_function_ids {
            return Err(ConfigError::BandInfeasible {
                min: bmin,
                max: bmax,
                n: self.n_function_ids,
            });
        }
        let (amin, amax) = self.arrivals_per_function;
        if amin == 0 || amin > amax {
            return Err(ConfigError::field(
                "arrivals_per_function",
                "must satisfy 1 <= min <= max",
            ));
        }
        if self.mem_mb_choices.is_empty() || self.mem_mb_choices.contains(&0) {
            return Err(ConfigError::field("mem_mb_choices", "need >= 1 nonzero choice"));
        }
        Ok(())
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return lo;
    }
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Generate a synthetic trace. Deterministic for a fixed config (seed included).
pub fn generate_trace(cfg: &TraceConfig) -> Result<Trace, ConfigError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_function_ids;

    // Stratified short/long split so the measured fraction matches exactly.
    let n_short = ((cfg.short_fraction * n as f64).round() as usize).min(n);
    let mut is_short = vec![false; n];
    for flag in is_short.iter_mut().take(n_short) {
        *flag = true;
    }
    is_short.shuffle(&mut rng);

    let width = n.to_string().len();
    let mut specs = Vec::with_capacity(n);
    for (i, &short) in is_short.iter().enumerate() {
        let (lo, hi) = if short {
            cfg.runtime_short_s
        } else {
            cfg.runtime_long_s
        };
        let mut runtime = round3(log_uniform(&mut rng, lo, hi));
        // keep the mode boundary intact after rounding
        if short && runtime >= hi {
            runtime = round3(hi - 0.001);
        }
        runtime = runtime.max(round3(lo)).max(0.001);
        let deadline = round3(cfg.slack_factor * runtime).max(runtime);
        let mem_mb = *cfg
            .mem_mb_choices
            .choose(&mut rng)
            .expect("validated nonempty");
        let cpu_base = round3(rng.gen_range(cfg.cpu_base_cores.0..=cfg.cpu_base_cores.1));
        let cpu_per = round3(
            rng.gen_range(cfg.cpu_per_request_cores.0..=cfg.cpu_per_request_cores.1),
        )
        .max(0.001);
        specs.push(FunctionSpec {
            id: format!("f{:0width$}", i + 1),
            runtime_s: runtime,
            deadline_s: deadline,
            mem_mb,
            cpu_base_cores: cpu_base,
            cpu_per_request_cores: cpu_per,
        });
    }

    let (bmin, bmax) = cfg.ids_per_epoch;
    let bmax = bmax.min(n);
    let (amin, amax) = cfg.arrivals_per_function;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let d = rng.gen_range(bmin..=bmax);
        let mut chosen = rand::seq::index::sample(&mut rng, n, d).into_vec();
        chosen.sort_unstable();
        let mut arrivals = BTreeMap::new();
        for idx in chosen {
            let count = if amin == amax {
                amin
            } else {
                let u = log_uniform(&mut rng, amin as f64, (amax + 1) as f64);
                (u.floor() as u64).clamp(amin, amax)
            };
            arrivals.insert(idx, count);
        }
        epochs.push(EpochWorkload {
            epoch_index: e,
            arrivals,
        });
    }
    Ok(Trace { specs, epochs })
}

const FUNCTIONS_FILE: &str = "functions.csv";
const ARRIVALS_FILE: &str = "arrivals.csv";
const FUNCTIONS_HEADER: [&str; 6] = [
    "id",
    "runtime_s",
    "deadline_s",
    "mem_mb",
    "cpu_base_cores",
    "cpu_per_request_cores",
];
const ARRIVALS_HEADER: [&str; 2] = ["function_id", "arrival_time_s"];

fn io_err(path: &Path, source: std::io::Error) -> WorkloadError {
    WorkloadError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, source: csv::Error) -> WorkloadError {
    let line = source
        .position()
        .map(|p| p.line())
        .unwrap_or_default();
    WorkloadError::Parse {
        file: path.display().to_string(),
        line,
        msg: source.to_string(),
    }
}

/// Write `functions.csv` and `arrivals.csv` into `dir` (created if missing).
/// All arrivals of an epoch are emitted at the epoch start time.
pub fn write_trace_csv(trace: &Trace, epoch_length_s: f64, dir: &Path) -> Result<(), WorkloadError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let fpath = dir.join(FUNCTIONS_FILE);
    let mut w = csv::Writer::from_path(&fpath).map_err(|e| csv_err(&fpath, e))?;
    w.write_record(FUNCTIONS_HEADER).map_err(|e| csv_err(&fpath, e))?;
    for s in &trace.specs {
        w.write_record([
            s.id.clone(),
            s.runtime_s.to_string(),
            s.deadline_s.to_string(),
            s.mem_mb.to_string(),
            s.cpu_base_cores.to_string(),
            s.cpu_per_request_cores.to_string(),
        ])
        .map_err(|e| csv_err(&fpath, e))?;
    }
    w.flush().map_err(|e| io_err(&fpath, e))?;

    let apath = dir.join(ARRIVALS_FILE);
    let mut w = csv::Writer::from_path(&apath).map_err(|e| csv_err(&apath, e))?;
    w.write_record(ARRIVALS_HEADER).map_err(|e| csv_err(&apath, e))?;
    for epoch in &trace.epochs {
        let t = epoch.epoch_index as f64 * epoch_length_s;
        for (&idx, &count) in &epoch.arrivals {
            for _ in 0..count {
                w.write_record([trace.specs[idx].id.clone(), t.to_string()])
                    .map_err(|e| csv_err(&apath, e))?;
            }
        }
    }
    w.flush().map_err(|e| io_err(&apath, e))?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    name: &str,
    raw: &str,
) -> Result<T, WorkloadError> {
    raw.trim().parse().map_err(|_| WorkloadError::Parse {
        file: path.display().to_string(),
        line,
        msg: format!("cannot parse `{raw}` as {name}"),
    })
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or_default()
}

/// Read `functions.csv` + `arrivals.csv` from `dir` and bucket arrivals into
/// epochs of `epoch_length_s` seconds (half-open intervals, floor bucketing).
pub fn ingest_trace(dir: &Path, epoch_length_s: f64) -> Result<Trace, WorkloadError> {
    if !(epoch_length_s > 0.0) {
        return Err(WorkloadError::Parse {
            file: dir.display().to_string(),
            line: 0,
            msg: format!("epoch_length_s must be > 0, got {epoch_length_s}"),
        });
    }

    let fpath = dir.join(FUNCTIONS_FILE);
    let mut rdr = csv::Reader::from_path(&fpath).map_err(|e| csv_err(&fpath, e))?;
    {
        let headers = rdr.headers().map_err(|e| csv_err(&fpath, e))?;
        if headers.iter().collect::<Vec<_>>() != FUNCTIONS_HEADER {
            return Err(WorkloadError::Parse {
                file: fpath.display().to_string(),
                line: 1,
                msg: format!("expected header `{}`", FUNCTIONS_HEADER.join(",")),
            });
        }
    }
    let mut specs: Vec<FunctionSpec> = Vec::new();
    let mut index: HashMap<String, FnIdx> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(&fpath, e))?;
        let line = record_line(&record);
        if record.len() != FUNCTIONS_HEADER.len() {
            return Err(WorkloadError::Parse {
                file: fpath.display().to_string(),
                line,
                msg: format!("expected {} columns, got {}", FUNCTIONS_HEADER.len(), record.len()),
            });
        }
        let id = record[0].trim().to_string();
        if id.is_empty() {
            return Err(WorkloadError::Parse {
                file: fpath.display().to_string(),
                line,
                msg: "empty function id".into(),
            });
        }
        if index.contains_key(&id) {
            return Err(WorkloadError::Parse {
                file: fpath.display().to_string(),
                line,
                msg: format!("duplicate function id `{id}`"),
            });
        }
        let spec = FunctionSpec {
            id: id.clone(),
            runtime_s: parse_field(&fpath, line, "runtime_s", &record[1])?,
            deadline_s: parse_field(&fpath, line, "deadline_s", &record[2])?,
            mem_mb: parse_field(&fpath, line, "mem_mb", &record[3])?,
            cpu_base_cores: parse_field(&fpath, line, "cpu_base_cores", &record[4])?,
            cpu_per_request_cores: parse_field(&fpath, line, "cpu_per_request_cores", &record[5])?,
        };
        spec.validate()?;
        index.insert(id, specs.len());
        specs.push(spec);
    }

    let apath = dir.join(ARRIVALS_FILE);
    let mut rdr = csv::Reader::from_path(&apath).map_err(|e| csv_err(&apath, e))?;
    {
        let headers = rdr.headers().map_err(|e| csv_err(&apath, e))?;
        if headers.iter().collect::<Vec<_>>() != ARRIVALS_HEADER {
            return Err(WorkloadError::Parse {
                file: apath.display().to_string(),
                line: 1,
                msg: format!("expected header `{}`", ARRIVALS_HEADER.join(",")),
            });
        }
    }
    let mut buckets: BTreeMap<usize, BTreeMap<FnIdx, u64>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(&apath, e))?;
        let line = record_line(&record);
        if record.len() != ARRIVALS_HEADER.len() {
            return Err(WorkloadError::Parse {
                file: apath.display().to_string(),
                line,
                msg: format!("expected {} columns, got {}", ARRIVALS_HEADER.len(), record.len()),
            });
        }
        let id = record[0].trim();
        let &idx = index.get(id).ok_or_else(|| WorkloadError::UnknownFunction {
            file: apath.display().to_string(),
            line,
            id: id.to_string(),
        })?;
        let t: f64 = parse_field(&apath, line, "arrival_time_s", &record[1])?;
        if !t.is_finite() || t < 0.0 {
            return Err(WorkloadError::Parse {
                file: apath.display().to_string(),
                line,
                msg: format!("arrival_time_s must be finite and >= 0, got {t}"),
            });
        }
        let epoch = (t / epoch_length_s).floor() as usize;
        *buckets.entry(epoch).or_default().entry(idx).or_insert(0) += 1;
    }

    let epochs = match buckets.keys().next_back() {
        None => Vec::new(),
        Some(&last) => (0..=last)
            .map(|e| EpochWorkload {
                epoch_index: e,
                arrivals: buckets.remove(&e).unwrap_or_default(),
            })
            .collect(),
    };
    Ok(Trace { specs, epochs })
}
