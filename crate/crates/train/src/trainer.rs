use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ukan_core::diffusion::{ddpm_sample, diffusion_loss, NoiseSchedule};
use ukan_core::loss::SegLoss;
use ukan_core::metrics::SegMetrics;
use ukan_core::model::predict;
use ukan_core::{Init, ParamStore, Session, Tape, Tensor, Ukan};
use ukan_data::{batch_order, build_manifest, epoch_rng, save_png, Batch, Dataset, DatasetManifest, LoadOptions, Split};

use crate::checkpoint::Checkpoint;
use crate::config::{Task, TrainConfig};
use crate::error::{Result, TrainError};
use crate::optim::{cosine_lr, Adam, AdamConfig};

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Stream used for parameter initialization; epoch streams count up from 0.
const INIT_STREAM: u64 = u64::MAX;
const NOISE_PURPOSE: u64 = 2;

/// Model, parameters and optimizer state of one run (f32).
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Ukan,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub schedule: Option<NoiseSchedule>,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    /// Best selection score so far (validation IoU, or negated training loss).
    pub best: Option<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let model = Ukan::new(&mut Init::new(&mut store, &mut rng), config.model_config()?)?;
        let o = &config.optim;
        let adam = Adam::new(&store, AdamConfig { beta1: o.beta1, beta2: o.beta2, eps: o.eps });
        let schedule = match config.task {
            Task::Diffuse => Some(config.schedule()?),
            Task::Segment => None,
        };
        Ok(Self { config, model, store, adam, schedule, epoch: 0, step: 0, best: None })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<f32>) -> Result<Self> {
        let config = TrainConfig::parse(&ckpt.config, &[])?;
        let mut t = Self::new(config)?;
        ckpt.restore(&mut t.store, &mut t.adam)?;
        t.epoch = ckpt.epoch as usize;
        t.step = ckpt.step;
        t.best = ckpt.best;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint<f32> {
        Checkpoint::capture(
            self.config.to_toml(),
            self.epoch as u64,
            self.step,
            self.config.seed,
            self.best,
            &self.store,
            &self.adam,
        )
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        cosine_lr(epoch, self.config.epochs(), self.config.optim.lr, self.config.optim.lr_min)
    }

    /// One pass over `data` in the order fixed by `(seed, epoch)`; returns the
    /// mean batch loss.
    pub fn train_epoch(&mut self, data: &Dataset<f32>) -> Result<f64> {
        if data.len() < 2 {
            return Err(TrainError::Config(format!("training needs at least 2 samples, found {}", data.len())));
        }
        let (seed, epoch) = (self.config.seed, self.epoch);
        let lr = self.lr(epoch);
        let augment = self.config.augment();
        let mut aug_rng = epoch_rng(seed, epoch, 1);
        let mut noise_rng = epoch_rng(seed, epoch, NOISE_PURPOSE);
        let batches = batch_order(data.len(), self.config.optim.batch_size, seed, epoch, true, true);
        let mut total = 0.0;
        for idx in &batches {
            let batch = data.batch(idx, Some((&augment, &mut aug_rng)))?;
            total += self.train_step(&batch, lr, &mut noise_rng)?;
        }
        self.epoch += 1;
        Ok(total / batches.len() as f64)
    }

    /// Forward, backward and one Adam update; returns the loss.
    pub fn train_step(&mut self, batch: &Batch<f32>, lr: f64, noise: &mut ChaCha8Rng) -> Result<f64> {
        let Self { model, store, config, schedule, .. } = self;
        store.zero_grads();
        let tape = Tape::new();
        let mut cx = Session::training(&tape, store);
        let loss = match config.task {
            Task::Segment => {
                let masks = batch
                    .masks
                    .as_ref()
                    .ok_or_else(|| TrainError::Config("segmentation training needs masks".into()))?;
                let x = cx.input(batch.images.clone());
                let logits = model.forward(&mut cx, x, None)?;
                let weights = SegLoss::BceDice { bce: config.loss.bce_weight, dice: config.loss.dice_weight };
                weights.compute(logits, masks)?
            }
            Task::Diffuse => {
                let schedule = schedule.as_ref().expect("diffusion runs carry a schedule");
                let x0 = to_signed(&batch.images);
                diffusion_loss(&tape, schedule, &x0, noise, |xt, t| model.forward(&mut cx, xt, Some(t)))?
            }
        };
        self.step += 1;
        let value = loss.value().item() as f64;
        if !value.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch: self.epoch, step: self.step });
        }
        cx.backward(loss)?;
        self.adam.step(&mut self.store, lr)?;
        Ok(value)
    }

    /// Eval-mode metrics over every sample of `data`.
    pub fn evaluate(&mut self, data: &Dataset<f32>) -> Result<SegMetrics> {
        if self.config.task != Task::Segment {
            return Err(TrainError::Config("evaluate needs a segmentation run".into()));
        }
        let mut metrics = SegMetrics::default();
        for idx in batch_order(data.len(), self.config.optim.batch_size, 0, 0, false, false) {
            let batch = data.batch(&idx, None)?;
            let masks = batch.masks.as_ref().ok_or_else(|| TrainError::Config("evaluation needs masks".into()))?;
            let logits = predict(&self.model, &mut self.store, &batch.images, None)?;
            metrics.push_batch(&logits, masks, 0.5)?;
        }
        Ok(metrics)
    }

    /// `n` samples in `[0, 1]`, shaped `(C, H, W)`.
    pub fn generate(&mut self, n: usize, seed: u64) -> Result<Vec<Tensor<f32>>> {
        let schedule = self
            .schedule
            .clone()
            .ok_or_else(|| TrainError::Config("generate needs a diffusion run".into()))?;
        let d = &self.config.data;
        let shape = [d.channels, d.height, d.width];
        let batch = self.config.diffusion.sample_batch;
        let (model, store) = (&self.model, &mut self.store);
        let mut eps = |x: &Tensor<f32>, t: &[usize]| predict(model, store, x, Some(t));
        let samples = ddpm_sample(&mut eps, &schedule, &shape, n, seed, batch)?;
        Ok(samples.into_iter().map(|s| s.map(|v| (v + 1.0) * 0.5)).collect())
    }
}

/// `[0, 1]` images to the `[-1, 1]` range the diffusion model works in.
pub fn to_signed(x: &Tensor<f32>) -> Tensor<f32> {
    x.map(|v| 2.0 * v - 1.0)
}

/// The manifest named in the config, or one built from `data.root` with the run seed.
pub fn manifest_for(config: &TrainConfig) -> Result<DatasetManifest> {
    let d = &config.data;
    let m = match (&d.manifest, &d.root) {
        (Some(path), _) => DatasetManifest::load(path)?,
        (None, Some(root)) => build_manifest(root, d.train_ratio, config.seed, config.task == Task::Segment)?,
        (None, None) => return Err(TrainError::Config("set data.root or data.manifest".into())),
    };
    m.check_paths()?;
    if config.task == Task::Segment && !m.has_masks() {
        return Err(TrainError::Config("segmentation manifest has rows without masks".into()));
    }
    Ok(m)
}

pub fn load_split(config: &TrainConfig, manifest: &DatasetManifest, split: Split) -> Result<Dataset<f32>> {
    let d = &config.data;
    let opts = LoadOptions { height: d.height, width: d.width, channels: d.channels };
    let mut ds = Dataset::from_manifest(manifest, split, &opts)?;
    if config.task == Task::Diffuse {
        ds.samples.iter_mut().for_each(|s| s.mask = None);
    }
    Ok(ds)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from this checkpoint; its config must match apart from the output directory.
    pub resume: Option<PathBuf>,
    /// Stop after this many completed epochs (the schedule still spans the full run).
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub epochs: usize,
    pub steps: u64,
    pub losses: Vec<f64>,
    pub best: Option<f64>,
    pub dir: PathBuf,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| TrainError::io(path, e))
}

fn metrics_header(task: Task) -> &'static str {
    match task {
        Task::Segment => "epoch\tstep\tlr\ttrain_loss\tval_iou\tval_f1",
        Task::Diffuse => "epoch\tstep\tlr\ttrain_loss",
    }
}

/// Rows of an existing metric log up to and including `epochs` completed epochs.
fn kept_rows(path: &Path, epochs: usize) -> Vec<String> {
    let Ok(text) = fs::read_to_string(path) else { return Vec::new() };
    text.lines()
        .skip(1)
        .filter(|l| l.split('\t').next().and_then(|e| e.parse::<usize>().ok()).is_some_and(|e| e <= epochs))
        .map(str::to_string)
        .collect()
}

/// Trains with the datasets described by the config.
pub fn train(config: &TrainConfig, opts: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let manifest = manifest_for(config)?;
    let train = load_split(config, &manifest, Split::Train)?;
    let val = load_split(config, &manifest, Split::Val)?;
    fs::create_dir_all(&config.output.dir).map_err(|e| TrainError::io(&config.output.dir, e))?;
    manifest.save(&config.output.dir.join(MANIFEST_FILE))?;
    train_on(config, &train, &val, opts)
}

/// Training loop over in-memory datasets. Writes the resolved config, the
/// metric log and the last and best checkpoints into `output.dir`.
pub fn train_on(config: &TrainConfig, train: &Dataset<f32>, val: &Dataset<f32>, opts: &RunOptions) -> Result<RunSummary> {
    let dir = config.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| TrainError::io(&dir, e))?;
    let mut trainer = match &opts.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let t = Trainer::from_checkpoint(&ckpt)?;
            let mut expected = config.clone();
            expected.output = t.config.output.clone();
            if expected != t.config {
                return Err(TrainError::Checkpoint {
                    path: path.clone(),
                    detail: "checkpoint was written with a different configuration".into(),
                });
            }
            Trainer { config: config.clone(), ..t }
        }
        None => Trainer::new(config.clone())?,
    };
    write(&dir.join(CONFIG_FILE), &config.to_toml())?;
    let log_path = dir.join(METRICS_FILE);
    let mut rows = kept_rows(&log_path, trainer.epoch);
    let total = config.epochs();
    let stop = opts.stop_after.unwrap_or(total).min(total);
    let mut losses = Vec::new();
    while trainer.epoch < stop {
        let epoch = trainer.epoch;
        let lr = trainer.lr(epoch);
        let loss = trainer.train_epoch(train)?;
        losses.push(loss);
        let (row, score) = match config.task {
            Task::Segment if !val.is_empty() => {
                let m = trainer.evaluate(val)?;
                let (iou, f1) = (m.mean_iou(), m.mean_f1());
                log::info!("epoch {} lr {lr:.3e} loss {loss:.5} val iou {iou:.4} f1 {f1:.4}", epoch + 1);
                (format!("{}\t{}\t{lr}\t{loss}\t{iou}\t{f1}", epoch + 1, trainer.step), iou)
            }
            Task::Segment => {
                log::info!("epoch {} lr {lr:.3e} loss {loss:.5}", epoch + 1);
                (format!("{}\t{}\t{lr}\t{loss}\t-\t-", epoch + 1, trainer.step), -loss)
            }
            Task::Diffuse => {
                log::info!("epoch {} lr {lr:.3e} loss {loss:.5}", epoch + 1);
                (format!("{}\t{}\t{lr}\t{loss}", epoch + 1, trainer.step), -loss)
            }
        };
        rows.push(row);
        let improved = trainer.best.is_none_or(|b| score > b);
        if improved {
            trainer.best = Some(score);
        }
        let ckpt = trainer.checkpoint();
        ckpt.save(&dir.join(LAST_CHECKPOINT))?;
        if improved {
            ckpt.save(&dir.join(BEST_CHECKPOINT))?;
        }
        let mut text = String::from(metrics_header(config.task));
        text.push('\n');
        for r in &rows {
            text.push_str(r);
            text.push('\n');
        }
        write(&log_path, &text)?;
    }
    Ok(RunSummary { epochs: trainer.epoch, steps: trainer.step, losses, best: trainer.best, dir })
}

/// Metrics of a checkpoint on one split of its dataset.
pub fn evaluate(checkpoint: &Path, split: Split) -> Result<SegMetrics> {
    let mut t = Trainer::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    let manifest = manifest_for(&t.config)?;
    let data = load_split(&t.config, &manifest, split)?;
    if data.is_empty() {
        return Err(TrainError::Config(format!("the {split} split is empty")));
    }
    t.evaluate(&data)
}

/// File name of sample `i` out of `n`: zero-padded to at least four digits.
pub fn sample_name(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(4);
    format!("{i:0width$}.png")
}

/// Writes `n` samples as 8-bit PNGs into `out`; returns their paths.
pub fn generate(checkpoint: &Path, n: usize, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let mut t = Trainer::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    let samples = t.generate(n, seed)?;
    fs::create_dir_all(out).map_err(|e| TrainError::io(out, e))?;
    let mut paths = Vec::with_capacity(n);
    for (i, s) in samples.iter().enumerate() {
        let p = out.join(sample_name(i, n));
        save_png(&p, s)?;
        paths.push(p);
    }
    Ok(paths)
}
