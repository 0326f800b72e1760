//! Experiment configuration, the per-cell pipeline and sweep reports.
//!
//! A cell is one `(epsilon, seed, method)` triple. Its pipeline is:
//! generate blobs, corrupt, split off the trusted part, train the method on
//! the untrusted remainder, score on a corrupted test set. Every random
//! stream is derived from the cell's seed and tags, so cells are independent
//! and a sweep's results do not depend on worker count or scheduling.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{corrupt, empirical_transition, split_trusted, BlobModel, Dataset, TrustedSet};
use crate::error::{validation, Error, Result};
use crate::expertnet::{infer_labels, train_expertnet, ExpertNetConfig};
use crate::noise::{noise_ratio, transition_at, ClassPrior, NoiseSpec, TransitionMatrix};
use crate::rng::{derive_seed, Tag};
use crate::training::{test_accuracy, train_baseline, train_trustnet, BaselineConfig, ClassifierConfig, Method};

/// Synthetic blob dataset shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 16,
            train_per_class: 500,
            test_per_class: 200,
            separation: 6.0,
        }
    }
}

/// Which matrix forward correction uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardMatrix {
    /// Estimated from the trusted split.
    Empirical,
    /// The matrix that generated the noise.
    True,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub noise: NoiseSpec,
    /// Noise ratios to sweep. Empty means the noise spec's own ratio.
    pub epsilons: Vec<f64>,
    pub trusted_fraction: f64,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub classifier: ClassifierConfig,
    pub expertnet: ExpertNetConfig,
    pub baselines: BaselineConfig,
    pub forward_matrix: ForwardMatrix,
    /// Worker threads for sweeps; 0 uses the available parallelism.
    pub workers: usize,
    /// Record wall-clock seconds in reports. Off keeps reports byte-identical
    /// across runs.
    pub timing: bool,
    /// Where artifacts go, relative to the output root.
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            noise: NoiseSpec::Symmetric { epsilon: 0.4 },
            epsilons: Vec::new(),
            trusted_fraction: 0.1,
            methods: vec![Method::Trustnet, Method::Ce],
            seeds: vec![0],
            classifier: ClassifierConfig::default(),
            expertnet: ExpertNetConfig::default(),
            baselines: BaselineConfig::default(),
            forward_matrix: ForwardMatrix::Empirical,
            workers: 1,
            timing: false,
            output_dir: PathBuf::from("experiment"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.classes < 2 || d.dim < 2 {
            return Err(validation("dataset needs at least 2 classes and 2 dimensions"));
        }
        if d.train_per_class == 0 || d.test_per_class == 0 {
            return Err(validation("dataset sample counts must be positive"));
        }
        if !(d.separation.is_finite() && d.separation > 0.0) {
            return Err(validation("dataset separation must be positive"));
        }
        self.noise.validate(d.classes)?;
        for &e in &self.epsilons {
            if !(0.0..=1.0).contains(&e) {
                return Err(validation(format!("epsilon {e} outside [0, 1]")));
            }
        }
        if !(self.trusted_fraction > 0.0 && self.trusted_fraction < 1.0) {
            return Err(validation("trusted_fraction must lie in (0, 1)"));
        }
        if self.methods.is_empty() {
            return Err(validation("at least one method is required"));
        }
        if self.seeds.is_empty() {
            return Err(validation("at least one seed is required"));
        }
        self.classifier.validate()?;
        self.baselines.validate()?;
        if self.methods.contains(&Method::Trustnet) {
            self.expertnet.validate()?;
        }
        Ok(())
    }

    /// The noise ratios a sweep runs over.
    pub fn epsilon_grid(&self) -> Result<Vec<f64>> {
        if !self.epsilons.is_empty() {
            return Ok(self.epsilons.clone());
        }
        match &self.noise {
            NoiseSpec::Custom { matrix } => Ok(vec![noise_ratio(matrix, &ClassPrior::uniform(matrix.num_classes()))?]),
            spec => Ok(vec![spec.epsilon().expect("parametric families carry epsilon")]),
        }
    }

    /// Every cell of the sweep, in report order.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut cells = Vec::new();
        for epsilon in self.epsilon_grid()? {
            for &seed in &self.seeds {
                for &method in &self.methods {
                    cells.push(Cell { epsilon, seed, method });
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub epsilon: f64,
    pub seed: u64,
    pub method: Method,
}

/// Data shared by every method of one `(epsilon, seed)` pair.
#[derive(Debug, Clone)]
pub struct PreparedData {
    /// Generating matrix.
    pub transition: TransitionMatrix,
    pub trusted: TrustedSet,
    /// Untrusted training samples. True labels are kept for diagnostics;
    /// training only ever sees [`Dataset::without_true_labels`] of this.
    pub untrusted: Dataset,
    /// Test set with corrupted given labels and clean true labels.
    pub test: Dataset,
}

/// Builds the corrupted train/test data of one `(epsilon, seed)` pair.
///
/// The clean blobs depend only on the seed; the corruption also depends on
/// epsilon.
pub fn prepare_data(cfg: &ExperimentConfig, epsilon: f64, seed: u64) -> Result<PreparedData> {
    let d = &cfg.dataset;
    let c = d.classes;
    let transition = transition_at(&cfg.noise, epsilon, c, &ClassPrior::uniform(c))?;
    let model = BlobModel::new(c, d.dim, d.separation, derive_seed(seed, &[Tag::Str("blobs")]))?;
    let train = model.sample(d.train_per_class, derive_seed(seed, &[Tag::Str("train")]))?;
    let test = model.sample(d.test_per_class, derive_seed(seed, &[Tag::Str("test")]))?;
    let train = corrupt(&train, &transition, derive_seed(seed, &[Tag::Str("corrupt-train"), Tag::F64(epsilon)]))?;
    let test = corrupt(&test, &transition, derive_seed(seed, &[Tag::Str("corrupt-test"), Tag::F64(epsilon)]))?;
    let (trusted, untrusted) = split_trusted(&train, cfg.trusted_fraction, derive_seed(seed, &[Tag::Str("split")]))?;
    Ok(PreparedData {
        transition,
        trusted,
        untrusted,
        test,
    })
}

/// One report line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub epsilon: f64,
    pub method: Method,
    pub seed: u64,
    pub clean_acc: f64,
    pub noisy_acc: f64,
    pub seconds: f64,
}

/// Trains and scores one method on prepared data.
pub fn run_cell(cfg: &ExperimentConfig, data: &PreparedData, cell: Cell) -> Result<ReportRow> {
    let start = Instant::now();
    let stream = derive_seed(cell.seed, &[Tag::Str(cell.method.name()), Tag::F64(cell.epsilon)]);
    let train = data.untrusted.without_true_labels();
    let net = match cell.method {
        Method::Trustnet => {
            let pair_seed = derive_seed(cell.seed, &[Tag::Str("expertnet"), Tag::F64(cell.epsilon)]);
            let pair = train_expertnet(&data.trusted, &cfg.expertnet, pair_seed)?;
            let enriched = infer_labels(&pair, &train)?;
            train_trustnet(&enriched, &cfg.classifier, stream, None, false)?.network
        }
        method => {
            let forward = match (method, cfg.forward_matrix) {
                (Method::Forward, ForwardMatrix::Empirical) => {
                    let ds = data.trusted.dataset();
                    let truth = ds.true_labels().ok_or(Error::MissingTrueLabels)?;
                    Some(empirical_transition(truth, ds.given_labels(), ds.num_classes())?)
                }
                (Method::Forward, ForwardMatrix::True) => Some(data.transition.clone()),
                _ => None,
            };
            train_baseline(method, &train, &cfg.classifier, &cfg.baselines, forward.as_ref(), stream, None)?.network
        }
    };
    let (clean, noisy) = test_accuracy(&net, &data.test)?;
    Ok(ReportRow {
        epsilon: cell.epsilon,
        method: cell.method,
        seed: cell.seed,
        clean_acc: clean.ok_or(Error::MissingTrueLabels)?,
        noisy_acc: noisy,
        seconds: if cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 },
    })
}

fn worker_count(requested: usize, cells: usize) -> usize {
    let n = if requested == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        requested
    };
    n.clamp(1, cells.max(1))
}

/// Runs every cell on a bounded pool of worker threads. `on_cell` sees each
/// finished row as it completes, in completion order. The returned rows are
/// in cell order. The first failing cell (in cell order) is reported.
pub fn run_cells<F>(cfg: &ExperimentConfig, cells: &[Cell], on_cell: F) -> Result<Vec<ReportRow>>
where
    F: Fn(&ReportRow) -> Result<()> + Sync,
{
    cfg.validate()?;
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let results: Mutex<Vec<Option<Result<ReportRow>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let workers = worker_count(cfg.workers, cells.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&cell) = cells.get(i) else { break };
                let out = prepare_data(cfg, cell.epsilon, cell.seed)
                    .and_then(|data| run_cell(cfg, &data, cell))
                    .and_then(|row| on_cell(&row).map(|()| row));
                if out.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                results.lock().expect("no worker panics while holding the lock")[i] = Some(out);
            });
        }
    });
    let results = results.into_inner().expect("workers have finished");
    let mut rows = Vec::with_capacity(cells.len());
    for r in results {
        match r {
            Some(Ok(row)) => rows.push(row),
            Some(Err(e)) => return Err(e),
            // skipped after an earlier failure
            None => {}
        }
    }
    if rows.len() != cells.len() {
        return Err(validation("sweep stopped before every cell ran"));
    }
    Ok(rows)
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub runs: usize,
    pub clean_acc: Stat,
    pub noisy_acc: Stat,
    pub seconds: Stat,
}

/// Aggregates per noise ratio and method. Keys are the formatted epsilon and
/// the method name.
pub fn summarize(rows: &[ReportRow]) -> BTreeMap<String, BTreeMap<String, MethodSummary>> {
    let mut groups: BTreeMap<(String, String), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.epsilon.to_string(), r.method.to_string())).or_default().push(r);
    }
    let mut out: BTreeMap<String, BTreeMap<String, MethodSummary>> = BTreeMap::new();
    for ((eps, method), rs) in groups {
        let pick = |f: fn(&ReportRow) -> f64| Stat::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
        out.entry(eps).or_default().insert(
            method,
            MethodSummary {
                runs: rs.len(),
                clean_acc: pick(|r| r.clean_acc),
                noisy_acc: pick(|r| r.noisy_acc),
                seconds: pick(|r| r.seconds),
            },
        );
    }
    out
}

/// Writes `[epsilon,]method,seed,clean_acc,noisy_acc,seconds`.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], with_epsilon: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["method", "seed", "clean_acc", "noisy_acc", "seconds"];
    if with_epsilon {
        header.insert(0, "epsilon");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.method.to_string(),
            r.seed.to_string(),
            r.clean_acc.to_string(),
            r.noisy_acc.to_string(),
            r.seconds.to_string(),
        ];
        if with_epsilon {
            rec.insert(0, r.epsilon.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Paths of the files a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub report: PathBuf,
    pub summary: PathBuf,
    pub cells: Vec<PathBuf>,
}

fn cell_file(dir: &Path, row: &ReportRow) -> PathBuf {
    dir.join(format!("{}-eps{}-seed{}.csv", row.method, row.epsilon, row.seed))
}

/// Runs every cell of `cfg`, writing one CSV per cell under `dir/cells`
/// as cells finish, then `dir/<stem>.csv` and `dir/<stem>.json` atomically.
/// `with_epsilon` adds the leading epsilon column.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path, stem: &str, with_epsilon: bool) -> Result<(Vec<ReportRow>, Artifacts)> {
    let cell_dir = dir.join("cells");
    std::fs::create_dir_all(&cell_dir)?;
    let cells = cfg.cells()?;
    let rows = run_cells(cfg, &cells, |row| {
        let mut buf = Vec::new();
        write_report_csv(std::slice::from_ref(row), true, &mut buf)?;
        write_atomic(&cell_file(&cell_dir, row), &buf)
    })?;
    let mut csv_bytes = Vec::new();
    write_report_csv(&rows, with_epsilon, &mut csv_bytes)?;
    let report = dir.join(format!("{stem}.csv"));
    write_atomic(&report, &csv_bytes)?;
    let mut json = serde_json::to_vec_pretty(&summarize(&rows))?;
    json.push(b'\n');
    let summary = dir.join(format!("{stem}.json"));
    write_atomic(&summary, &json)?;
    let cells = rows.iter().map(|r| cell_file(&cell_dir, r)).collect();
    Ok((rows, Artifacts { report, summary, cells }))
}
