//! The operations behind each `xgrade` subcommand.
//!
//! A run is described by an experiment file (TOML):
//!
//! ```toml
//! network = "toy.cfg"              # relative to this file
//! classes = ["pneumonia", "tb"]
//! checkpoint_every = 100
//!
//! [train]                          # see TrainConfig
//! base_lr = 0.05
//! total_steps = 500
//!
//! [loss]
//! label_smoothing = 0.1
//! # class_weights = [1.0, 1.0]     # default: inverse class frequency
//!
//! [pipeline]                       # see PipelineConfig
//! resize = 36
//! crop = 32
//! ```
//!
//! Outputs go to the `--out` directory only: `checkpoint.xgc`,
//! `train_log.csv`, `predictions.csv`, `report.txt`, `report.csv`,
//! `auc_table.csv`, `roc_<class>.csv`, heatmaps.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, pnm, BatchStream, FixtureConfig, Loader, Manifest, PipelineConfig, Split};
use crate::error::{Error, Result};
use crate::explain::{self, OcclusionConfig};
use crate::metrics::{self, report, ClassReport, Predictions, Target};
use crate::nn::{count_layers_and_params, Network, NetworkConfig, TruncGaussSpec};
use crate::seed;
use crate::train::{self, Checkpoint, LoopOptions, LossConfig, OptimState, StepRecord, TrainConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.xgc";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: PathBuf,
    pub classes: Vec<String>,
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub init: InitSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub class_weights: Option<Vec<f32>>,
    pub label_smoothing: f32,
    pub positive_only: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            class_weights: None,
            label_smoothing: 0.1,
            positive_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSection {
    pub std: f64,
    pub bound: f64,
}

impl Default for InitSection {
    fn default() -> Self {
        let d = TruncGaussSpec::default();
        Self {
            std: d.std,
            bound: d.bound,
        }
    }
}

/// Everything a command needs, parsed and checked before any compute.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub network: NetworkConfig,
    pub manifest: Option<Manifest>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    /// Parses the experiment file and the network config it names, and the
    /// manifest if given. `seed` overrides `train.seed`.
    pub fn load(
        config: &Path,
        manifest: Option<&Path>,
        checkpoint: Option<&Path>,
        seed: Option<u64>,
        out: &Path,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(config)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
        let mut experiment: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
        if let Some(s) = seed {
            experiment.train.seed = s;
        }
        let net_path = config
            .parent()
            .unwrap_or(Path::new(""))
            .join(&experiment.network);
        let network = NetworkConfig::load(&net_path)?;
        if network.num_classes != experiment.classes.len() {
            return Err(Error::Config(format!(
                "network {} has {} outputs but {} classes are configured",
                network.name,
                network.num_classes,
                experiment.classes.len()
            )));
        }
        if network.input[2] != 3 || network.input[0] != network.input[1] {
            return Err(Error::Config(format!(
                "network input {:?} must be square RGB",
                network.input
            )));
        }
        if network.input[0] != experiment.pipeline.crop {
            return Err(Error::Config(format!(
                "pipeline crop {} does not match network input {}",
                experiment.pipeline.crop, network.input[0]
            )));
        }
        count_layers_and_params(&network)?;
        experiment.train.validate()?;
        experiment.pipeline.validate()?;
        let manifest = manifest
            .map(|p| {
                let m = Manifest::load(p)?;
                m.check_classes(&experiment.classes)?;
                Ok::<_, Error>(m)
            })
            .transpose()?;
        if let Some(c) = checkpoint {
            if !c.is_file() {
                return Err(Error::Config(format!("checkpoint {} does not exist", c.display())));
            }
        }
        Ok(Self {
            seed: experiment.train.seed,
            experiment,
            network,
            manifest,
            checkpoint: checkpoint.map(Path::to_path_buf),
            out: out.to_path_buf(),
        })
    }

    pub fn init(&self) -> TruncGaussSpec {
        TruncGaussSpec {
            std: self.experiment.init.std,
            bound: self.experiment.init.bound,
        }
    }

    fn manifest(&self) -> Result<&Manifest> {
        self.manifest
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs --manifest".into()))
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| Error::io(format!("creating {}", self.out.display()), e))?;
        Ok(&self.out)
    }

    /// Fresh network from the `init` seed stream.
    pub fn build_network(&self) -> Result<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::substream(self.seed, "init"));
        Network::build(self.network.clone(), &self.init(), &mut rng)
    }

    /// Network with the checkpoint loaded exactly (no head replacement).
    pub fn trained_network(&self) -> Result<Network> {
        let path = self
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs --checkpoint".into()))?;
        let mut net = self.build_network()?;
        let ck = Checkpoint::read(path)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report = ck.restore(&mut net, &mut OptimState::default(), &self.init(), &mut rng)?;
        if !report.reinitialized.is_empty() {
            return Err(Error::CheckpointIncompatible {
                names: report.reinitialized,
            });
        }
        Ok(net)
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub records: Vec<StepRecord>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub head_reinitialized: bool,
}

/// Trains on the manifest's `train` split, writing the checkpoint and a
/// per-step `step,lr,loss,grad_norm` log.
pub fn cmd_train(run: &RunConfig) -> Result<TrainSummary> {
    let manifest = run.manifest()?.split(Split::Train);
    if manifest.entries.is_empty() {
        return Err(Error::Data("manifest has no train entries".into()));
    }
    let out = run.out_dir()?;
    let exp = &run.experiment;
    let class_weights = match &exp.loss.class_weights {
        Some(w) => w.clone(),
        None => train::class_weights(&manifest.positives(), manifest.entries.len(), &manifest.classes)?,
    };
    let loss = LossConfig {
        class_weights,
        label_smoothing: exp.loss.label_smoothing,
        positive_only: exp.loss.positive_only,
    };
    loss.validate()?;

    let mut net = run.build_network()?;
    let mut optim = OptimState::default();
    let mut head_reinitialized = false;
    if let Some(path) = &run.checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::substream(run.seed, "head"));
        let report = Checkpoint::read(path)?.restore(&mut net, &mut optim, &run.init(), &mut rng)?;
        head_reinitialized = !report.reinitialized.is_empty();
        log::info!(
            "loaded {} tensors from {}; re-initialized {:?}",
            report.loaded.len(),
            path.display(),
            report.reinitialized
        );
        // Fine-tuning restarts the schedule.
        optim = OptimState::default();
    }

    let loader = Loader::new(manifest, exp.pipeline.clone(), data::threads_from_env())?;
    let stream = BatchStream::new(&loader, exp.train.batch_size, run.seed)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    let log_path = out.join(TRAIN_LOG_FILE);
    let mut log_file =
        File::create(&log_path).map_err(|e| Error::io(format!("creating {}", log_path.display()), e))?;
    writeln!(log_file, "step,lr,loss,grad_norm").map_err(|e| Error::io("writing train log", e))?;
    let opts = LoopOptions {
        checkpoint: Some(checkpoint.clone()),
        checkpoint_every: exp.checkpoint_every,
    };
    let records = train::train_loop(&mut net, &mut optim, stream, &exp.train, &loss, &opts, |_, r| {
        writeln!(log_file, "{},{},{},{}", r.step, r.lr, r.loss, r.grad_norm)
            .and_then(|_| log_file.flush())
            .map_err(|e| Error::io("writing train log", e))?;
        if r.step % 50 == 0 {
            log::info!("step {} loss {:.5} lr {:.3e}", r.step, r.loss, r.lr);
        }
        Ok(true)
    })?;
    Ok(TrainSummary {
        records,
        checkpoint,
        log: log_path,
        head_reinitialized,
    })
}

/// How the decision threshold of each class is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatingRule {
    Threshold(f64),
    TargetSensitivity(f64),
}

impl Default for OperatingRule {
    fn default() -> Self {
        OperatingRule::Threshold(0.5)
    }
}

/// Inference-mode scores for every entry of `manifest`, in order.
pub fn predict_manifest(net: &Network, manifest: &Manifest, pipeline: &PipelineConfig) -> Result<Predictions> {
    let loader = Loader::new(manifest.clone(), pipeline.clone(), data::threads_from_env())?;
    let mut scores = Vec::with_capacity(loader.len());
    for batch in loader.eval_batches(32) {
        let p = net.predict(&batch?.images)?;
        let classes = p.dims2()?.1;
        scores.extend(p.data().chunks_exact(classes).map(<[f32]>::to_vec));
    }
    Ok(Predictions {
        classes: manifest.classes.clone(),
        ids: manifest.entries.iter().map(|e| e.path.clone()).collect(),
        scores,
    })
}

/// Per-class report from scores and 0/1 labels. Undefined metrics are left
/// empty and logged.
pub fn class_reports(pred: &Predictions, labels: &[Vec<u8>], rule: OperatingRule) -> Result<Vec<ClassReport>> {
    let mut out = Vec::with_capacity(pred.classes.len());
    for (c, name) in pred.classes.iter().enumerate() {
        let scores = pred.class_scores(c);
        let y: Vec<u8> = labels.iter().map(|l| l[c]).collect();
        let roc = metrics::roc_curve(&scores, &y);
        if let Err(e) = &roc {
            log::warn!("{name}: {e}");
        }
        let threshold = match (rule, &roc) {
            (OperatingRule::Threshold(t), _) => Some(t),
            (OperatingRule::TargetSensitivity(s), Ok(roc)) => {
                Some(metrics::operating_point(roc, Target::Sensitivity(s))?.threshold)
            }
            (OperatingRule::TargetSensitivity(_), Err(_)) => None,
        };
        let counts = threshold
            .map(|t| metrics::confusion_counts(&scores, &y, t))
            .transpose()?
            .unwrap_or_default();
        let defined = threshold.is_some();
        out.push(ClassReport {
            name: name.clone(),
            threshold: threshold.unwrap_or(f64::NAN),
            counts,
            sensitivity: metrics::sensitivity(&counts).ok().filter(|_| defined),
            specificity: metrics::specificity(&counts).ok().filter(|_| defined),
            auc: roc.as_ref().ok().map(|r| r.auc),
        });
    }
    Ok(out)
}

fn write_out(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub reports: Vec<ClassReport>,
    pub files: Vec<PathBuf>,
}

/// Scores a split through the deterministic eval path and writes the
/// prediction file, report tables and per-class ROC exports.
pub fn cmd_evaluate(run: &RunConfig, split: Split, rule: OperatingRule) -> Result<EvalSummary> {
    let manifest = run.manifest()?.split(split);
    if manifest.entries.is_empty() {
        return Err(Error::Data(format!("manifest has no {split} entries")));
    }
    let net = run.trained_network()?;
    let out = run.out_dir()?;
    let pred = predict_manifest(&net, &manifest, &run.experiment.pipeline)?;
    let labels: Vec<Vec<u8>> = manifest.entries.iter().map(|e| e.labels.clone()).collect();
    let reports = class_reports(&pred, &labels, rule)?;

    let mut files = vec![
        write_out(out, PREDICTIONS_FILE, pred.to_csv())?,
        write_out(out, "report.csv", report::performance_csv(&reports))?,
        write_out(out, "auc_table.csv", report::auc_table_csv(&reports))?,
    ];
    let mut text = report::performance_text(&reports);
    text.push('\n');
    text.push_str(&report::auc_table_text(&reports));
    files.push(write_out(out, "report.txt", text)?);
    for (c, name) in pred.classes.iter().enumerate() {
        let y: Vec<u8> = labels.iter().map(|l| l[c]).collect();
        if let Ok(roc) = metrics::roc_curve(&pred.class_scores(c), &y) {
            files.push(write_out(out, &format!("roc_{}.csv", file_safe(name)), report::roc_csv(&roc))?);
        }
    }
    Ok(EvalSummary { reports, files })
}

/// Eval-path preprocessing of a single image file.
pub fn load_image(path: &Path, pipeline: &PipelineConfig) -> Result<crate::tensor::Tensor> {
    let img = pnm::read(path)?;
    pipeline.eval(&pipeline.resize(&img)?)
}

/// Per-class confidences for one image; also writes `predictions.csv`.
pub fn cmd_predict(run: &RunConfig, image: &Path) -> Result<Vec<(String, f32)>> {
    let net = run.trained_network()?;
    let img = load_image(image, &run.experiment.pipeline)?;
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let scores = net.predict(&img.reshape(&[1, h, w, c])?)?;
    let pred = Predictions {
        classes: run.experiment.classes.clone(),
        ids: vec![image.display().to_string()],
        scores: vec![scores.data().to_vec()],
    };
    write_out(run.out_dir()?, PREDICTIONS_FILE, pred.to_csv())?;
    Ok(pred.classes.into_iter().zip(scores.into_data()).collect())
}

/// Occlusion heatmap of `class` for one image; writes
/// `heatmap_<class>.pgm` (at network input size) and `heatmap_<class>.csv`.
pub fn cmd_heatmap(
    run: &RunConfig,
    image: &Path,
    class: &str,
    cfg: &OcclusionConfig,
) -> Result<explain::Heatmap> {
    let idx = run
        .experiment
        .classes
        .iter()
        .position(|c| c == class)
        .ok_or_else(|| Error::Argument(format!("unknown class {class}")))?;
    let net = run.trained_network()?;
    let img = load_image(image, &run.experiment.pipeline)?;
    let hm = explain::occlusion_heatmap(&net, &img, idx, cfg)?;
    let out = run.out_dir()?;
    let stem = format!("heatmap_{}", file_safe(class));
    write_out(out, &format!("{stem}.pgm"), hm.to_pgm(img.shape()[0], img.shape()[1])?)?;
    write_out(out, &format!("{stem}.csv"), hm.to_csv())?;
    Ok(hm)
}

/// ROC exports from an existing prediction file; labels come from the
/// manifest, matched by `sample_id` = manifest path.
pub fn cmd_roc_export(predictions: &Path, manifest: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let pred = report::read_predictions(predictions)?;
    let manifest = Manifest::load(manifest)?;
    manifest.check_classes(&pred.classes)?;
    let labels = pred
        .ids
        .iter()
        .map(|id| {
            manifest
                .entries
                .iter()
                .find(|e| &e.path == id)
                .map(|e| e.labels.clone())
                .ok_or_else(|| Error::Data(format!("sample {id} is not in the manifest")))
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let mut files = Vec::new();
    for (c, name) in pred.classes.iter().enumerate() {
        let y: Vec<u8> = labels.iter().map(|l| l[c]).collect();
        match metrics::roc_curve(&pred.class_scores(c), &y) {
            Ok(roc) => files.push(write_out(out, &format!("roc_{}.csv", file_safe(name)), report::roc_csv(&roc))?),
            Err(e) => log::warn!("{name}: {e}"),
        }
    }
    Ok(files)
}

pub fn cmd_fixture(out: &Path, cfg: &FixtureConfig) -> Result<PathBuf> {
    data::generate_fixture(out, cfg)
}

/// Human-readable summary of a checkpoint and/or network config.
pub fn cmd_inspect(checkpoint: Option<&Path>, network: Option<&Path>) -> Result<String> {
    let mut out = String::new();
    if let Some(p) = network {
        let cfg = NetworkConfig::load(p)?;
        let (layers, params) = count_layers_and_params(&cfg)?;
        out.push_str(&format!(
            "network {}\n  input {:?}, {} classes\n  counted layers {layers}\n  trainable parameters {params}\n  fingerprint {:016x}\n",
            cfg.name,
            cfg.input,
            cfg.num_classes,
            cfg.fingerprint()
        ));
    }
    if let Some(p) = checkpoint {
        let ck = Checkpoint::read(p)?;
        let params: usize = ck.params().map(|(_, t)| t.numel()).sum();
        out.push_str(&format!(
            "checkpoint {}\n  fingerprint {:016x}\n  {} entries, {params} stored values (excluding optimizer state)\n",
            p.display(),
            ck.fingerprint,
            ck.tensors.len()
        ));
        for (name, t) in &ck.tensors {
            out.push_str(&format!("  {name} {:?}\n", t.shape()));
        }
    }
    if out.is_empty() {
        return Err(Error::Argument("inspect needs --checkpoint and/or --network".into()));
    }
    Ok(out)
}
