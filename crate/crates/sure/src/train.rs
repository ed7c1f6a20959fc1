//! Training and evaluation driver: run configuration, a hand-rolled AdamW,
//! the dialogue-batched training loop with best-checkpoint retention, and
//! the evaluation / ablation / inspection entry points used by the CLI.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier;
use crate::data::{mask_modalities, Dataset, ModalityMask};
use crate::error::{Result, SureError};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{DialogueTrace, ModelConfig, SureModel};
use crate::real::Real;
use crate::rng::{PortableRng, RngState};
use crate::tensor::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // model
    pub d_z: usize,
    pub d: usize,
    pub d_ff: usize,
    pub num_experts: usize,
    pub k: usize,
    pub lambda_u: f64,
    pub renormalize: bool,
    pub iterations: usize,
    pub heads: usize,
    pub dropout: f64,
    pub sigmoid_gate: bool,
    pub positional: bool,
    pub beta_kl: f64,
    pub disable_moe: bool,
    pub disable_reasoning: bool,
    /// Modalities kept at train and eval time, e.g. "text+audio+visual".
    pub modalities: String,
    // optimization
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Inverse-frequency class weighting of the loss.
    pub weighted_loss: bool,
    /// "f32" (default) or "f64".
    pub precision: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d_z: 128,
            d: 128,
            d_ff: 512,
            num_experts: 4,
            k: 3,
            lambda_u: 1.0,
            renormalize: false,
            iterations: 3,
            heads: 4,
            dropout: 0.5,
            sigmoid_gate: false,
            positional: false,
            beta_kl: 0.0,
            disable_moe: false,
            disable_reasoning: false,
            modalities: "text+audio+visual".into(),
            lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            epochs: 50,
            weighted_loss: false,
            precision: "f32".into(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| SureError::Config(format!("{}: {e}", path.as_ref().display())))?;
        toml::from_str(&text).map_err(|e| SureError::Config(e.to_string()))
    }

    /// Applies one `key=value` override by round-tripping through TOML, so
    /// every config field is addressable by its name.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table: toml::Table = toml::Table::try_from(&self)
            .map_err(|e| SureError::Config(e.to_string()))?;
        if !table.contains_key(key) {
            return Err(SureError::Config(format!("unknown config key '{key}'")));
        }
        let parsed = if let Ok(b) = value.parse::<bool>() {
            toml::Value::Boolean(b)
        } else if let Ok(i) = value.parse::<i64>() {
            toml::Value::Integer(i)
        } else if let Ok(f) = value.parse::<f64>() {
            toml::Value::Float(f)
        } else {
            toml::Value::String(value.to_string())
        };
        table.insert(key.to_string(), parsed);
        *self = table
            .try_into()
            .map_err(|e| SureError::Config(format!("override {key}={value}: {e}")))?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(SureError::Config("lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(SureError::Config("batch_size must be positive".into()));
        }
        if !matches!(self.precision.as_str(), "f32" | "f64") {
            return Err(SureError::Config(format!(
                "precision must be 'f32' or 'f64', got '{}'",
                self.precision
            )));
        }
        ModalityMask::parse(&self.modalities)?;
        Ok(())
    }

    pub fn model_config(&self, dataset: &Dataset) -> ModelConfig {
        ModelConfig {
            dims: dataset.header.dims.clone(),
            num_labels: dataset.header.num_labels,
            d_z: self.d_z,
            d: self.d,
            d_ff: self.d_ff,
            num_experts: self.num_experts,
            k: self.k,
            lambda_u: self.lambda_u,
            renormalize: self.renormalize,
            iterations: self.iterations,
            heads: self.heads,
            dropout: self.dropout,
            sigmoid_gate: self.sigmoid_gate,
            positional: self.positional,
            beta_kl: self.beta_kl,
            disable_moe: self.disable_moe,
            disable_reasoning: self.disable_reasoning,
        }
    }

    pub fn mask(&self) -> ModalityMask {
        ModalityMask::parse(&self.modalities).expect("validated mask")
    }
}

/// AdamW with decoupled weight decay. Moment buffers live in the training
/// precision so runs are reproducible bit for bit.
pub struct AdamW<R: Real> {
    m: Vec<Vec<R>>,
    v: Vec<Vec<R>>,
    t: u64,
    lr: R,
    beta1: R,
    beta2: R,
    eps: R,
    weight_decay: R,
}

impl<R: Real> AdamW<R> {
    pub fn new(store: &ParamStore<R>, cfg: &RunConfig) -> Self {
        AdamW {
            m: store.iter().map(|(_, p)| vec![R::zero(); p.data.len()]).collect(),
            v: store.iter().map(|(_, p)| vec![R::zero(); p.data.len()]).collect(),
            t: 0,
            lr: R::from_f64(cfg.lr),
            beta1: R::from_f64(cfg.beta1),
            beta2: R::from_f64(cfg.beta2),
            eps: R::from_f64(cfg.adam_eps),
            weight_decay: R::from_f64(cfg.weight_decay),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<R>, grads: &[Option<Vec<R>>]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(SureError::ShapeMismatch {
                op: "adamw_step",
                lhs: vec![self.m.len()],
                rhs: vec![grads.len()],
            });
        }
        self.t += 1;
        let one = R::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (slot, id) in ids.into_iter().enumerate() {
            let Some(grad) = &grads[slot] else { continue };
            let param = store.get_mut(id);
            for (i, &gv) in grad.iter().enumerate() {
                if !gv.is_finite() {
                    return Err(SureError::NonFinite(format!(
                        "gradient of {} is not finite",
                        param.name
                    )));
                }
                let m = &mut self.m[slot][i];
                *m = self.beta1 * *m + (one - self.beta1) * gv;
                let v = &mut self.v[slot][i];
                *v = self.beta2 * *v + (one - self.beta2) * gv * gv;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                let p = &mut param.data[i];
                *p = *p - self.lr * self.weight_decay * *p;
                *p = *p - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_weighted_f1: f64,
    /// Fraction of routing selections going to each expert (all modalities).
    pub expert_usage: Vec<f64>,
    pub mean_uncertainty: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_weighted_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Checkpoint: parameters are stored as f64, which round-trips f32 exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: SureModel,
    pub params: Vec<SavedParam>,
    pub rng: RngState,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn capture<R: Real>(
        config: &RunConfig,
        model: &SureModel,
        store: &ParamStore<R>,
        rng: &PortableRng,
        epoch: usize,
    ) -> Self {
        Checkpoint {
            config: config.clone(),
            model: model.clone(),
            params: store
                .iter()
                .map(|(_, p)| SavedParam {
                    name: p.name.clone(),
                    shape: p.shape,
                    data: p.data.iter().map(|&v| Real::to_f64(v)).collect(),
                })
                .collect(),
            rng: rng.state(),
            epoch,
        }
    }

    /// Rebuilds a parameter store with the same id assignment order the
    /// model was initialized with.
    pub fn build_store<R: Real>(&self) -> ParamStore<R> {
        let mut store = ParamStore::new();
        for p in &self.params {
            store.add(
                p.name.clone(),
                p.shape,
                p.data.iter().map(|&v| R::from_f64(v)).collect(),
            );
        }
        store
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| SureError::Io(e.to_string()))?;
        fs::write(path.as_ref(), json)
            .map_err(|e| SureError::Io(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| SureError::Io(format!("{}: {e}", path.as_ref().display())))?;
        serde_json::from_str(&text).map_err(|e| SureError::Io(e.to_string()))
    }
}

fn class_weights(dataset: &Dataset) -> Vec<f64> {
    let c = dataset.header.num_labels;
    let mut counts = vec![0usize; c];
    for d in &dataset.dialogues {
        for u in &d.utterances {
            counts[u.label] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&n| {
            if n == 0 {
                0.0
            } else {
                total as f64 / (c as f64 * n as f64)
            }
        })
        .collect()
}

/// Mean loss and predictions over a dataset in eval mode.
pub fn evaluate<R: Real>(
    model: &SureModel,
    store: &ParamStore<R>,
    dataset: &Dataset,
    mask: ModalityMask,
) -> Result<(f64, MetricsReport)> {
    let mut rng = PortableRng::new(0); // unused at eval: no dropout, z = mu
    let mut predictions = Vec::new();
    let mut gold = Vec::new();
    let mut loss_sum = 0.0;
    let mut utt_count = 0usize;
    for dlg in &dataset.dialogues {
        let labels = dlg.labels();
        let mut out = model.forward(store, dlg, mask, false, &mut rng)?;
        let loss = classifier::cross_entropy_loss(&mut out.graph, out.logits, &labels, None)?;
        let n = labels.len();
        loss_sum += Real::to_f64(out.graph.scalar(loss)) * n as f64;
        utt_count += n;
        predictions.extend(classifier::predict(&out.graph, out.logits));
        gold.extend(labels);
    }
    let report = compute_metrics(&predictions, &gold, dataset.header.num_labels)?;
    Ok((loss_sum / utt_count as f64, report))
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Trains with dialogue-granularity batches: gradients are accumulated over
/// the dialogues of a batch in fixed order and averaged before the AdamW
/// step. The best checkpoint by validation weighted F1 is retained.
pub fn train<R: Real>(
    config: &RunConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.header != val_set.header {
        return Err(SureError::Data(
            "train and validation headers disagree".into(),
        ));
    }
    let mask = config.mask();
    let weights = config.weighted_loss.then(|| class_weights(train_set));
    let mut rng = PortableRng::new(seed);
    let mut store: ParamStore<R> = ParamStore::new();
    let model = SureModel::init(&mut store, config.model_config(train_set), &mut rng)?;
    let mut opt = AdamW::new(&store, config);

    let num_dialogues = train_set.dialogues.len();
    if num_dialogues == 0 {
        return Err(SureError::Data("training set has no dialogues".into()));
    }
    let mut log = TrainLog {
        epochs: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        best_val_weighted_f1: f64::NEG_INFINITY,
    };
    // zero-epoch runs hand back the initialization untouched
    let mut best = Some(Checkpoint::capture(config, &model, &store, &rng, 0));

    for epoch in 1..=config.epochs {
        let order = rng.permutation(num_dialogues);
        let mut epoch_loss = 0.0;
        let mut epoch_utts = 0usize;
        let mut usage = vec![0usize; config.num_experts.max(1)];
        let mut usage_total = 0usize;
        let mut unc_sum = 0.0;
        let mut unc_count = 0usize;

        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut acc: Vec<Option<Vec<R>>> = vec![None; store.len()];
            for &di in chunk {
                let dlg = &train_set.dialogues[di];
                let labels = dlg.labels();
                let mut out = model.forward(&store, dlg, mask, true, &mut rng)?;
                let loss = model.loss(&mut out, &labels, weights.as_deref())?;
                let loss_val = Real::to_f64(out.graph.scalar(loss));
                if !loss_val.is_finite() {
                    return Err(SureError::Diverged { epoch, step });
                }
                epoch_loss += loss_val * labels.len() as f64;
                epoch_utts += labels.len();
                for per_mod in &out.trace.routing {
                    for rd in per_mod {
                        for &s in &rd.selected {
                            usage[s] += 1;
                        }
                        usage_total += rd.selected.len();
                        unc_sum += rd.uncertainty.iter().sum::<f64>()
                            / rd.uncertainty.len() as f64;
                        unc_count += 1;
                    }
                }
                out.graph.backward(loss)?;
                for (slot, grad) in out.graph.param_grads(&store).into_iter().enumerate() {
                    if let Some(grad) = grad {
                        match &mut acc[slot] {
                            Some(a) => a.iter_mut().zip(grad).for_each(|(x, y)| *x = *x + y),
                            slot @ None => *slot = Some(grad),
                        }
                    }
                }
            }
            let inv = R::from_f64(1.0 / chunk.len() as f64);
            for grad in acc.iter_mut().flatten() {
                grad.iter_mut().for_each(|v| *v = *v * inv);
            }
            opt.step(&mut store, &acc)?;
        }

        let (val_loss, report) = evaluate(&model, &store, val_set, mask)?;
        let entry = EpochLog {
            epoch,
            train_loss: epoch_loss / epoch_utts.max(1) as f64,
            val_loss,
            val_accuracy: report.accuracy,
            val_weighted_f1: report.weighted_f1,
            expert_usage: usage
                .iter()
                .map(|&u| u as f64 / usage_total.max(1) as f64)
                .collect(),
            mean_uncertainty: if unc_count == 0 {
                0.0
            } else {
                unc_sum / unc_count as f64
            },
        };
        if report.weighted_f1 > log.best_val_weighted_f1 {
            log.best_val_weighted_f1 = report.weighted_f1;
            log.best_epoch = epoch;
            best = Some(Checkpoint::capture(config, &model, &store, &rng, epoch));
        }
        log.epochs.push(entry);
    }

    Ok(TrainOutcome {
        checkpoint: best.expect("initialization checkpoint always exists"),
        log,
    })
}

pub fn train_dispatch(
    config: &RunConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    seed: u64,
) -> Result<TrainOutcome> {
    match config.precision.as_str() {
        "f64" => train::<f64>(config, train_set, val_set, seed),
        _ => train::<f32>(config, train_set, val_set, seed),
    }
}

/// Evaluates a checkpoint, honoring its stored precision.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    mask: ModalityMask,
) -> Result<(f64, MetricsReport)> {
    match ckpt.config.precision.as_str() {
        "f64" => {
            let store: ParamStore<f64> = ckpt.build_store();
            evaluate(&ckpt.model, &store, dataset, mask)
        }
        _ => {
            let store: ParamStore<f32> = ckpt.build_store();
            evaluate(&ckpt.model, &store, dataset, mask)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub accuracy: f64,
    pub weighted_f1: f64,
}

/// The standard ablation grid: the full model, the two architecture
/// ablations, and all six strict modality subsets. Every row trains from
/// scratch with the same seed.
pub fn ablate(
    config: &RunConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: &Dataset,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    let mut variants: Vec<(String, RunConfig)> = vec![("full".into(), config.clone())];
    let mut no_moe = config.clone();
    no_moe.disable_moe = true;
    variants.push(("w/o mixture encoder".into(), no_moe));
    let mut no_reason = config.clone();
    no_reason.disable_reasoning = true;
    variants.push(("w/o iterative reasoning".into(), no_reason));
    for combo in ["text", "audio", "visual", "text+audio", "text+visual", "audio+visual"] {
        let mut c = config.clone();
        c.modalities = combo.into();
        variants.push((combo.into(), c));
    }
    for (name, cfg) in variants {
        let outcome = train_dispatch(&cfg, train_set, val_set, seed)?;
        let (_, report) = evaluate_checkpoint(&outcome.checkpoint, test_set, cfg.mask())?;
        rows.push(AblationRow {
            name,
            accuracy: report.accuracy,
            weighted_f1: report.weighted_f1,
        });
    }
    Ok(rows)
}

/// Eval-mode traces (routing, retrieval, fusion) for every dialogue.
pub fn inspect(ckpt: &Checkpoint, dataset: &Dataset) -> Result<Vec<DialogueTrace>> {
    let mask = ckpt.config.mask();
    fn run<R: Real>(
        ckpt: &Checkpoint,
        dataset: &Dataset,
        mask: ModalityMask,
    ) -> Result<Vec<DialogueTrace>> {
        let store: ParamStore<R> = ckpt.build_store();
        let mut rng = PortableRng::new(0);
        dataset
            .dialogues
            .iter()
            .map(|d| {
                ckpt.model
                    .forward(&store, d, mask, false, &mut rng)
                    .map(|o| o.trace)
            })
            .collect()
    }
    match ckpt.config.precision.as_str() {
        "f64" => run::<f64>(ckpt, dataset, mask),
        _ => run::<f32>(ckpt, dataset, mask),
    }
}

/// Applies the config's modality mask to a dataset copy (used by eval on
/// files written with all modalities present).
pub fn masked_copy(dataset: &Dataset, mask: ModalityMask) -> Result<Dataset> {
    mask_modalities(dataset, mask)
}
