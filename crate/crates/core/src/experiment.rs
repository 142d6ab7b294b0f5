//! Experiment configuration and the incremental loop:
//! train → new prototypes → compensate old prototypes → evaluate.
//!
//! Configuration is TOML. Every field has a default, so an empty file runs
//! ADC on the default synthetic benchmark:
//!
//! ```toml
//! seeds = [1993, 0, 1, 2, 3]
//! oracle_eval = false
//! out_dir = "results"
//!
//! [dataset]
//! kind = "synthetic"          # or "file"
//! n_classes = 20
//! classes_per_task = 4
//!
//! [train]
//! lambda = 10.0
//! temperature = 2.0
//!
//! [method]
//! name = "adc"                # finetune | lwf | ncm | sdc | adc | nme
//! iterations = 3
//! m = 100
//! ```
//!
//! Methods that share a training regime (everything except `finetune`,
//! which trains without distillation) share the trained networks when run
//! together through [`run_methods`].

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::data::{
    load_image_dataset, make_synthetic_stream, split_tasks, ImageFormat, LabeledDataset,
    SyntheticSpec, TaskStream,
};
use crate::drift::{
    adc_compensate, drift_quality, nme_prototypes, oracle_drift, oracle_prototypes, sdc_compensate,
    select_exemplars, DriftEstimate, DriftMethod, ExemplarPolicy, ExemplarStore, SealedOldData,
};
use crate::error::{Error, Result};
use crate::eval::{
    count_backward_passes, emit_report, evaluate_after_task, evaluate_head, summarize,
    BackwardLedger, DriftRow, RunReport,
};
use crate::net::{Architecture, Network};
use crate::proto::{compute_prototypes, PrototypeStore};
use crate::train::{train_task, EpochLog, TrainConfig};

fn default_sigma() -> f64 {
    0.3
}

fn default_iterations() -> usize {
    3
}

fn default_m() -> usize {
    100
}

/// Method with exactly the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    /// Plain cross-entropy training, head classifier.
    Finetune {},
    /// Distillation training, head classifier.
    Lwf {},
    /// Distillation training, NCM with uncompensated prototypes.
    Ncm {},
    Sdc {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    Adc {
        /// Step size; derived from the data range when unset.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f32>,
        #[serde(default = "default_iterations")]
        iterations: usize,
        #[serde(default = "default_m")]
        m: usize,
    },
    Nme {
        /// Exemplars kept per class; unset keeps every sample.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exemplars_per_class: Option<usize>,
        #[serde(default)]
        policy: ExemplarPolicy,
    },
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig::Adc {
            alpha: None,
            iterations: default_iterations(),
            m: default_m(),
        }
    }
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MethodConfig::Finetune {} => "finetune",
            MethodConfig::Lwf {} => "lwf",
            MethodConfig::Ncm {} => "ncm",
            MethodConfig::Sdc { .. } => "sdc",
            MethodConfig::Adc { .. } => "adc",
            MethodConfig::Nme { .. } => "nme",
        }
    }

    /// Whether old prototypes (rather than the head) classify.
    pub fn uses_prototypes(&self) -> bool {
        !matches!(self, MethodConfig::Finetune {} | MethodConfig::Lwf {})
    }

    fn distills(&self) -> bool {
        !matches!(self, MethodConfig::Finetune {})
    }

    fn validate(&self) -> Result<()> {
        match *self {
            MethodConfig::Sdc { sigma } if !(sigma > 0.0) => {
                Err(Error::config("sdc sigma must be > 0"))
            }
            MethodConfig::Adc { alpha: Some(a), .. } if !(a > 0.0) => {
                Err(Error::config("adc alpha must be > 0"))
            }
            MethodConfig::Adc { m: 0, .. } => Err(Error::config("adc m must be >= 1")),
            MethodConfig::Nme {
                exemplars_per_class: Some(0),
                ..
            } => Err(Error::config("nme exemplar budget must be >= 1")),
            _ => Ok(()),
        }
    }
}

impl FromStr for MethodConfig {
    type Err = Error;

    /// Method by name with default parameters.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "finetune" => MethodConfig::Finetune {},
            "lwf" => MethodConfig::Lwf {},
            "ncm" => MethodConfig::Ncm {},
            "sdc" => MethodConfig::Sdc {
                sigma: default_sigma(),
            },
            "adc" => MethodConfig::default(),
            "nme" => MethodConfig::Nme {
                exemplars_per_class: Some(20),
                policy: ExemplarPolicy::Herding,
            },
            other => return Err(Error::config(format!("unknown method {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    Idx,
    Csv,
    RawU8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    File {
        path: PathBuf,
        format: FileFormat,
        /// Label file for IDX images.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<PathBuf>,
        /// Held-out set; a stratified split of `path` is used when unset.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        tasks: usize,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic(SyntheticSpec::default())
    }
}

fn image_format(format: FileFormat, labels: Option<&Path>) -> Result<ImageFormat> {
    Ok(match format {
        FileFormat::Idx => ImageFormat::Idx {
            labels: labels
                .ok_or_else(|| Error::config("idx datasets need a label file"))?
                .to_path_buf(),
        },
        FileFormat::Csv => ImageFormat::Csv,
        FileFormat::RawU8 => ImageFormat::RawU8,
    })
}

impl DatasetConfig {
    pub fn name(&self) -> String {
        match self {
            DatasetConfig::Synthetic(_) => "synthetic".into(),
            DatasetConfig::File { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into()),
        }
    }

    /// Builds the task stream; `seed` fixes the class order (and, for
    /// synthetic data, the cluster geometry).
    pub fn build_stream(&self, seed: u64) -> Result<TaskStream> {
        match self {
            DatasetConfig::Synthetic(spec) => make_synthetic_stream(spec, seed),
            DatasetConfig::File {
                path,
                format,
                labels,
                test_path,
                test_labels,
                test_fraction,
                tasks,
            } => {
                let data = load_image_dataset(path, &image_format(*format, labels.as_deref())?)?;
                let (train, test): (LabeledDataset, LabeledDataset) = match test_path {
                    Some(tp) => (
                        data,
                        load_image_dataset(tp, &image_format(*format, test_labels.as_deref())?)?,
                    ),
                    None => data.stratified_split(*test_fraction, seed)?,
                };
                split_tasks(&train, &test, *tasks, seed)
            }
        }
    }
}

/// One auditable record of every hyperparameter of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Each seed fixes class order, initialization and batch order.
    pub seeds: Vec<u64>,
    /// Retain old training data in a sealed channel to measure true drift.
    pub oracle_eval: bool,
    pub out_dir: PathBuf,
    /// Feature extractor; an MLP for flat samples and a small conv net for
    /// images when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network: Option<Architecture>,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub method: MethodConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1993],
            oracle_eval: false,
            out_dir: PathBuf::from("results"),
            network: None,
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            method: MethodConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        self.train.validate()?;
        self.method.validate()?;
        if let DatasetConfig::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn architecture(&self, sample_shape: &[usize]) -> Architecture {
        match &self.network {
            Some(a) => a.clone(),
            None if sample_shape.len() >= 2 => Architecture::default_conv(),
            None => Architecture::default_mlp(),
        }
    }
}

fn mix(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ salt.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

struct Regime {
    lambda: f64,
    net: Network,
    log: Vec<EpochLog>,
}

struct MethodState {
    method: MethodConfig,
    regime: usize,
    store: PrototypeStore,
    exemplars: ExemplarStore,
    accuracy: Vec<f64>,
    oracle_accuracy: Vec<f64>,
    drift_rows: Vec<DriftRow>,
    ledger: BackwardLedger,
}

fn drift_rows(
    task: usize,
    estimate: &DriftEstimate,
    truth: Option<&DriftEstimate>,
) -> Result<Vec<DriftRow>> {
    let quality = truth.map(|t| drift_quality(estimate, t)).transpose()?;
    Ok(estimate
        .per_class
        .iter()
        .map(|(&c, d)| DriftRow {
            task,
            class: c,
            method: estimate.method.to_string(),
            n_contributing: d.n_contributing,
            cos_to_oracle: quality.as_ref().and_then(|q| q.per_class[&c]),
            delta_norm: d.norm(),
        })
        .collect())
}

/// Runs `methods` on one seed's stream, which is consumed task by task.
///
/// Each task's training data is dropped once the task is processed unless
/// oracle evaluation retains a sealed copy. `on_task_end` runs after that
/// point with the finished task index.
pub fn run_on_stream(
    cfg: &ExperimentConfig,
    methods: &[MethodConfig],
    seed: u64,
    stream: TaskStream,
    on_task_end: &mut dyn FnMut(usize),
) -> Result<Vec<RunReport>> {
    cfg.validate()?;
    for m in methods {
        m.validate()?;
    }
    let TaskStream {
        tasks, test_tasks, ..
    } = stream;
    let first = tasks.first().ok_or(Error::EmptyTask)?;
    let sample_shape = first.sample_shape().to_vec();
    let pixel_range = first.pixel_range();
    let arch = cfg.architecture(&sample_shape);
    let net0 = Network::new(
        &sample_shape,
        &arch,
        &mut ChaCha8Rng::seed_from_u64(mix(seed, u64::MAX)),
    )?;

    let mut regimes: Vec<Regime> = Vec::new();
    let mut states = Vec::with_capacity(methods.len());
    for m in methods {
        let lambda = if m.distills() { cfg.train.lambda } else { 0.0 };
        let regime = match regimes.iter().position(|r| r.lambda == lambda) {
            Some(i) => i,
            None => {
                regimes.push(Regime {
                    lambda,
                    net: net0.clone(),
                    log: Vec::new(),
                });
                regimes.len() - 1
            }
        };
        let per_class = match m {
            MethodConfig::Nme {
                exemplars_per_class,
                ..
            } => *exemplars_per_class,
            _ => None,
        };
        states.push(MethodState {
            method: m.clone(),
            regime,
            store: PrototypeStore::new(net0.feature_dim()),
            exemplars: ExemplarStore::new(per_class),
            accuracy: Vec::new(),
            oracle_accuracy: Vec::new(),
            drift_rows: Vec::new(),
            ledger: BackwardLedger::new(),
        });
    }

    let mut sealed = cfg.oracle_eval.then(SealedOldData::new);
    let num_tasks = tasks.len();
    for (t, task) in tasks.into_iter().enumerate() {
        let seen_tests = &test_tasks[..=t];
        let trained = regimes
            .iter()
            .map(|r| {
                let tc = TrainConfig {
                    lambda: r.lambda,
                    ..cfg.train.clone()
                };
                train_task(&r.net, &task, &tc, t, mix(seed, t as u64))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut truths = Vec::with_capacity(regimes.len());
        let mut oracle_acc = Vec::with_capacity(regimes.len());
        for (r, out) in regimes.iter().zip(&trained) {
            match &sealed {
                Some(old) => {
                    let truth = if t > 0 {
                        Some(oracle_drift(&r.net, &out.net, old, &old.classes())?)
                    } else {
                        None
                    };
                    let mut store = oracle_prototypes(&out.net, old, t)?;
                    store.merge(compute_prototypes(&out.net, &task, t)?)?;
                    truths.push(truth);
                    oracle_acc.push(Some(evaluate_after_task(&out.net, &store, seen_tests)?));
                }
                None => {
                    truths.push(None);
                    oracle_acc.push(None);
                }
            }
        }

        for st in &mut states {
            let prev = &regimes[st.regime].net;
            let new = &trained[st.regime].net;
            let truth = truths[st.regime].as_ref();
            if let Some(a) = oracle_acc[st.regime] {
                st.oracle_accuracy.push(a);
            }
            if !st.method.uses_prototypes() {
                st.accuracy.push(evaluate_head(new, seen_tests)?);
                continue;
            }
            let old = std::mem::replace(&mut st.store, PrototypeStore::new(new.feature_dim()));
            let mut store = if t == 0 {
                old
            } else {
                match &st.method {
                    MethodConfig::Finetune {} | MethodConfig::Lwf {} | MethodConfig::Ncm {} => old,
                    MethodConfig::Sdc { sigma } => {
                        let comp = sdc_compensate(prev, new, &old, &task, *sigma, t)?;
                        st.drift_rows.extend(drift_rows(t, &comp.estimate, truth)?);
                        comp.store
                    }
                    MethodConfig::Adc {
                        alpha,
                        iterations,
                        m,
                    } => {
                        let attack = AttackConfig {
                            alpha: alpha
                                .unwrap_or_else(|| AttackConfig::default_alpha(pixel_range)),
                            iterations: *iterations,
                            m: *m,
                            pixel_range,
                        };
                        let comp = adc_compensate(prev, new, &old, &task, &attack, t)?;
                        st.ledger.record(t, old.len(), comp.backward_passes);
                        st.drift_rows.extend(drift_rows(t, &comp.estimate, truth)?);
                        comp.store
                    }
                    MethodConfig::Nme { .. } => {
                        let updated = nme_prototypes(new, &st.exemplars, t)?;
                        let estimate = DriftEstimate::between(DriftMethod::Nme, &old, &updated)?;
                        st.drift_rows.extend(drift_rows(t, &estimate, truth)?);
                        updated
                    }
                }
            };
            store.merge(compute_prototypes(new, &task, t)?)?;
            if let MethodConfig::Nme { policy, .. } = &st.method {
                let chosen = select_exemplars(
                    new,
                    &task,
                    st.exemplars.per_class,
                    *policy,
                    mix(seed, t as u64),
                    t,
                )?;
                st.exemplars.extend(chosen);
            }
            st.accuracy
                .push(evaluate_after_task(new, &store, seen_tests)?);
            st.store = store;
        }

        if let Some(old) = sealed.as_mut() {
            old.retain(&task, t)?;
        }
        for (r, out) in regimes.iter_mut().zip(trained) {
            r.net = out.net;
            r.log.extend(out.log);
        }
        drop(task);
        on_task_end(t);
    }

    let dataset = cfg.dataset.name();
    states
        .into_iter()
        .map(|st| {
            let run_cfg = ExperimentConfig {
                seeds: vec![seed],
                method: st.method.clone(),
                ..cfg.clone()
            };
            let (a_last, a_inc) = summarize(&st.accuracy)?;
            Ok(RunReport {
                method: st.method.name().to_string(),
                dataset: dataset.clone(),
                seed,
                per_task_accuracy: st.accuracy,
                a_last,
                a_inc,
                oracle_accuracy: st.oracle_accuracy,
                drift_rows: st.drift_rows,
                backward_per_task: st.ledger.per_task(num_tasks),
                backward_passes: count_backward_passes(&st.ledger),
                train_log: regimes[st.regime].log.clone(),
                config: run_cfg.to_toml(),
            })
        })
        .collect()
}

/// Runs several methods on one seed, sharing training where possible.
pub fn run_methods(
    cfg: &ExperimentConfig,
    methods: &[MethodConfig],
    seed: u64,
) -> Result<Vec<RunReport>> {
    let stream = cfg.dataset.build_stream(seed)?;
    run_on_stream(cfg, methods, seed, stream, &mut |_| {})
}

/// [`run_methods`] for every configured seed, in parallel.
pub fn compare_methods(
    cfg: &ExperimentConfig,
    methods: &[MethodConfig],
) -> Vec<(u64, Result<Vec<RunReport>>)> {
    cfg.seeds
        .par_iter()
        .map(|&seed| (seed, run_methods(cfg, methods, seed)))
        .collect()
}

/// Outcome of one seed of [`run_experiment`].
#[derive(Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub report: Result<RunReport>,
}

/// Runs the configured method for every seed and writes the reports under
/// `out_dir`. A failing seed is recorded in `errors.csv` without stopping
/// the others.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedOutcome>> {
    cfg.validate()?;
    let outcomes: Vec<SeedOutcome> = compare_methods(cfg, std::slice::from_ref(&cfg.method))
        .into_iter()
        .map(|(seed, r)| SeedOutcome {
            seed,
            report: r.map(|mut v| v.remove(0)),
        })
        .collect();
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut errors = Vec::new();
    for o in &outcomes {
        match &o.report {
            Ok(r) => {
                emit_report(r, &cfg.out_dir)?;
            }
            Err(e) => errors.push((o.seed, e.to_string())),
        }
    }
    let err_path = cfg.out_dir.join(cfg.method.name()).join("errors.csv");
    if errors.is_empty() {
        if err_path.exists() {
            fs::remove_file(&err_path).map_err(|e| Error::io(&err_path, e))?;
        }
    } else {
        fs::create_dir_all(err_path.parent().expect("has parent"))
            .map_err(|e| Error::io(&err_path, e))?;
        let mut w = csv::Writer::from_path(&err_path)?;
        w.write_record(["method", "seed", "error"])?;
        for (seed, msg) in errors {
            w.write_record([cfg.method.name(), &seed.to_string(), &msg])?;
        }
        w.flush().map_err(|e| Error::io(&err_path, e))?;
    }
    Ok(outcomes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    Iterations,
    M,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepAxis::Alpha),
            "iterations" => Ok(SweepAxis::Iterations),
            "m" => Ok(SweepAxis::M),
            other => Err(Error::config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::Iterations => "iterations",
            SweepAxis::M => "m",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub seeds: usize,
    pub mean_a_last: f64,
    pub mean_a_inc: f64,
    pub backward_passes: usize,
}

fn non_negative_int(value: f64, axis: SweepAxis) -> Result<usize> {
    if value >= 0.0 && value.fract() == 0.0 && value.is_finite() {
        Ok(value as usize)
    } else {
        Err(Error::config(format!(
            "{axis} values must be non-negative integers, got {value}"
        )))
    }
}

fn method_for(base: &MethodConfig, axis: SweepAxis, value: f64) -> Result<MethodConfig> {
    let MethodConfig::Adc {
        alpha,
        iterations,
        m,
    } = base.clone()
    else {
        return Err(Error::config(format!(
            "sweep axis {axis} does not apply to method {}",
            base.name()
        )));
    };
    let out = match axis {
        SweepAxis::Alpha => MethodConfig::Adc {
            alpha: Some(value as f32),
            iterations,
            m,
        },
        SweepAxis::Iterations => MethodConfig::Adc {
            alpha,
            iterations: non_negative_int(value, axis)?,
            m,
        },
        SweepAxis::M => MethodConfig::Adc {
            alpha,
            iterations,
            m: non_negative_int(value, axis)?,
        },
    };
    out.validate()?;
    Ok(out)
}

/// One run per value per seed, aggregated over seeds. Every value shares
/// the same trained networks.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let methods = values
        .iter()
        .map(|&v| method_for(&cfg.method, axis, v))
        .collect::<Result<Vec<_>>>()?;
    let per_seed = compare_methods(cfg, &methods)
        .into_iter()
        .map(|(_, r)| r)
        .collect::<Result<Vec<_>>>()?;
    let n = per_seed.len() as f64;
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, &value)| SweepRow {
            axis: axis.to_string(),
            value,
            seeds: per_seed.len(),
            mean_a_last: per_seed.iter().map(|r| r[i].a_last).sum::<f64>() / n,
            mean_a_inc: per_seed.iter().map(|r| r[i].a_inc).sum::<f64>() / n,
            backward_passes: per_seed[0][i].backward_passes,
        })
        .collect())
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Plain-text rendering of a sweep table.
pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut out = Vec::new();
    writeln!(
        out,
        "{:>10} {:>6} {:>10} {:>10} {:>10}",
        "value", "seeds", "a_last", "a_inc", "passes"
    )
    .expect("vec write");
    for r in rows {
        writeln!(
            out,
            "{:>10} {:>6} {:>10.4} {:>10.4} {:>10}",
            r.value, r.seeds, r.mean_a_last, r.mean_a_inc, r.backward_passes
        )
        .expect("vec write");
    }
    String::from_utf8(out).expect("ascii table")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig::Synthetic(SyntheticSpec {
                n_classes: 6,
                classes_per_task: 2,
                dim: 8,
                samples_per_class: 20,
                test_samples_per_class: 10,
                ..Default::default()
            }),
            network: Some(Architecture::Mlp {
                hidden: vec![16],
                feature_dim: 8,
                final_relu: false,
            }),
            train: TrainConfig {
                epochs_first_task: 3,
                epochs_later_tasks: 2,
                batch_size: 16,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn empty_toml_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.train.lambda, 10.0);
        assert_eq!(cfg.train.temperature, 2.0);
        assert_eq!(cfg.train.momentum, 0.9);
        assert_eq!(cfg.train.weight_decay, 5e-4);
        assert_eq!(
            cfg.method,
            MethodConfig::Adc {
                alpha: None,
                iterations: 3,
                m: 100
            }
        );
        assert_eq!(
            "sdc".parse::<MethodConfig>().unwrap(),
            MethodConfig::Sdc { sigma: 0.3 }
        );
    }

    #[test]
    fn toml_roundtrip_and_method_fields() {
        let cfg = tiny();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let text = "[method]\nname = \"ncm\"\nsigma = 0.5\n";
        assert!(matches!(
            ExperimentConfig::from_toml(text),
            Err(Error::Config(_))
        ));
        let text = "[method]\nname = \"sdc\"\nsigma = 0.5\n";
        assert_eq!(
            ExperimentConfig::from_toml(text).unwrap().method,
            MethodConfig::Sdc { sigma: 0.5 }
        );
        assert!(ExperimentConfig::from_toml("seeds = []").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn single_task_ncm_skips_compensation() {
        let mut cfg = tiny();
        if let DatasetConfig::Synthetic(s) = &mut cfg.dataset {
            s.classes_per_task = 6;
        }
        let r = run_methods(&cfg, &[MethodConfig::Ncm {}], 1993)
            .unwrap()
            .remove(0);
        assert_eq!(r.per_task_accuracy.len(), 1);
        assert!(r.drift_rows.is_empty());
        assert_eq!(r.backward_passes, 0);
    }

    #[test]
    fn ledger_matches_closed_form() {
        let cfg = tiny();
        let r = run_methods(&cfg, &[MethodConfig::default()], 7)
            .unwrap()
            .remove(0);
        assert_eq!(r.backward_per_task, vec![0, 6, 12]);
        assert_eq!(
            r.backward_passes,
            crate::eval::expected_backward_passes(3, 2, 3)
        );
        r.check_consistency().unwrap();
    }

    #[test]
    fn inapplicable_sweep_axis() {
        let cfg = ExperimentConfig {
            method: MethodConfig::Ncm {},
            ..tiny()
        };
        assert!(matches!(
            sweep(&cfg, SweepAxis::Alpha, &[0.1]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            sweep(&tiny(), SweepAxis::Iterations, &[1.5]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn experiment_writes_reports() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            seeds: vec![1, 2],
            out_dir: dir.path().to_path_buf(),
            method: MethodConfig::Ncm {},
            ..tiny()
        };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.len(), 2);
        for seed in [1, 2] {
            let d = crate::eval::run_dir(dir.path(), "ncm", seed);
            let r = crate::eval::read_report(&d).unwrap();
            assert_eq!(r.seed, seed);
            assert_eq!(r.per_task_accuracy.len(), 3);
        }
    }
}
