//! End-to-end SURE model: per-modality uncertainty-aware mixture encoder,
//! iterative reasoning, cross-modal transformer gate, and the shared
//! emotion classifier. One computation graph is built per dialogue.

use serde::{Deserialize, Serialize};

use crate::classifier::{self, ClassifierParams};
use crate::data::{Dialogue, Dims, ModalityMask};
use crate::error::{Result, SureError};
use crate::gate::{AttentionTrace, GateConfig, ModalityGateParams};
use crate::moe::{MoeConfig, MoeParams, RoutingDecision};
use crate::real::Real;
use crate::reasoning::ReasoningParams;
use crate::rng::PortableRng;
use crate::tensor::nn::{self, LinearNodes};
use crate::tensor::{Graph, NodeId, ParamId, ParamStore};

pub const MODALITY_NAMES: [&str; 3] = ["text", "audio", "visual"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: Dims,
    pub num_labels: usize,
    /// Latent width out of the mixture encoder.
    pub d_z: usize,
    /// Model width through reasoning, gate, and fusion.
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
    /// Weight on the latent KL regularizer added to the loss.
    pub beta_kl: f64,
    pub disable_moe: bool,
    pub disable_reasoning: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_labels < 2 {
            return Err(SureError::Config("num_labels must be at least 2".into()));
        }
        if self.d == 0 || self.d_z == 0 || self.d_ff == 0 {
            return Err(SureError::Config("model dims must be positive".into()));
        }
        if self.d % self.heads != 0 || self.heads == 0 {
            return Err(SureError::Config(format!(
                "heads ({}) must divide model dim ({})",
                self.heads, self.d
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SureError::Config("dropout must be in [0, 1)".into()));
        }
        if !self.disable_moe {
            self.moe_config().validate()?;
        }
        Ok(())
    }

    pub fn moe_config(&self) -> MoeConfig {
        MoeConfig {
            num_experts: self.num_experts,
            k: self.k,
            lambda_u: self.lambda_u,
            renormalize: self.renormalize,
        }
    }

    pub fn gate_config(&self) -> GateConfig {
        GateConfig {
            heads: self.heads,
            d_ff: self.d_ff,
            dropout: self.dropout,
            sigmoid_gate: self.sigmoid_gate,
            positional: self.positional,
        }
    }
}

/// Front-end for one modality: mixture of Gaussian experts, or a plain
/// linear projection when the MoE is ablated away.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Encoder {
    Moe(MoeParams),
    Linear { w: ParamId, b: ParamId },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SureModel {
    pub config: ModelConfig,
    pub encoders: [Encoder; 3],
    pub reasoning: [ReasoningParams; 3],
    pub gates: [ModalityGateParams; 3],
    pub classifier: ClassifierParams,
}

/// Everything the inspect report wants from one dialogue forward pass.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DialogueTrace {
    pub dialogue_id: String,
    /// Per modality, per utterance routing decisions (empty when ablated).
    pub routing: Vec<Vec<RoutingDecision>>,
    /// Per modality, per iteration retrieval weights.
    pub retrieval: Vec<Vec<Vec<f64>>>,
    /// Per modality, per utterance 3-way fusion weights.
    pub fusion: Vec<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub attention: Vec<Vec<AttentionTrace>>,
}

pub struct ForwardOutput<R: Real> {
    pub graph: Graph<R>,
    pub logits: NodeId,
    /// Mean KL regularizer across modalities; absent when the MoE is off.
    pub kl: Option<NodeId>,
    pub trace: DialogueTrace,
}

impl SureModel {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        config: ModelConfig,
        rng: &mut PortableRng,
    ) -> Result<Self> {
        config.validate()?;
        let d_ins = [config.dims.text, config.dims.audio, config.dims.visual];
        let mut encoders = Vec::with_capacity(3);
        let mut reasoning = Vec::with_capacity(3);
        let mut gates = Vec::with_capacity(3);
        for (m, name) in MODALITY_NAMES.iter().enumerate() {
            encoders.push(if config.disable_moe {
                Encoder::Linear {
                    w: store.add_weight(format!("{name}.enc.w"), [d_ins[m], config.d_z], rng),
                    b: store.add_zeros(format!("{name}.enc.b"), [1, config.d_z]),
                }
            } else {
                Encoder::Moe(MoeParams::init(
                    store,
                    &format!("{name}.moe"),
                    d_ins[m],
                    config.d_z,
                    config.num_experts,
                    rng,
                ))
            });
            reasoning.push(ReasoningParams::init(
                store,
                &format!("{name}.reason"),
                config.d_z,
                config.d,
                !config.disable_reasoning,
                rng,
            ));
            gates.push(ModalityGateParams::init(
                store,
                &format!("{name}.gate"),
                config.d,
                config.d_ff,
                rng,
            ));
        }
        let classifier =
            ClassifierParams::init(store, "classifier", config.d, config.num_labels, rng);
        Ok(SureModel {
            config,
            encoders: encoders.try_into().expect("three encoders"),
            reasoning: reasoning.try_into().expect("three reasoning stacks"),
            gates: gates.try_into().expect("three gate stacks"),
            classifier,
        })
    }

    /// Builds the graph for one dialogue and returns logits [n, num_labels].
    pub fn forward<R: Real>(
        &self,
        store: &ParamStore<R>,
        dialogue: &Dialogue,
        mask: ModalityMask,
        train: bool,
        rng: &mut PortableRng,
    ) -> Result<ForwardOutput<R>> {
        let n = dialogue.utterances.len();
        if n == 0 {
            return Err(SureError::Data(format!(
                "dialogue {} has no utterances",
                dialogue.dialogue_id
            )));
        }
        let mut g: Graph<R> = Graph::new();
        let keeps = [mask.text, mask.audio, mask.visual];
        let d_ins = [
            self.config.dims.text,
            self.config.dims.audio,
            self.config.dims.visual,
        ];
        let mut trace = DialogueTrace {
            dialogue_id: dialogue.dialogue_id.clone(),
            ..DialogueTrace::default()
        };
        let moe_cfg = self.config.moe_config();
        let gate_cfg = self.config.gate_config();
        let iterations = if self.config.disable_reasoning {
            0
        } else {
            self.config.iterations
        };

        let mut streams = Vec::with_capacity(3);
        for m in 0..3 {
            let mut x = vec![R::zero(); n * d_ins[m]];
            if keeps[m] {
                for (i, utt) in dialogue.utterances.iter().enumerate() {
                    let feats = match m {
                        0 => &utt.text,
                        1 => &utt.audio,
                        _ => &utt.visual,
                    };
                    for (j, &v) in feats.iter().enumerate() {
                        x[i * d_ins[m] + j] = R::from_f64(v as f64);
                    }
                }
            }
            let x = g.constant(x, [n, d_ins[m]]);
            let (z, routing, kl) = match &self.encoders[m] {
                Encoder::Moe(moe) => {
                    let out = moe.forward(&mut g, store, x, &moe_cfg, train, rng)?;
                    (out.z, out.routing, Some(out.kl))
                }
                Encoder::Linear { w, b } => {
                    let lin = LinearNodes {
                        w: g.param(store, *w),
                        b: g.param(store, *b),
                    };
                    (nn::linear(&mut g, x, &lin)?, Vec::new(), None)
                }
            };
            let (u, retrieval) = self.reasoning[m].forward(&mut g, store, z, iterations)?;
            trace.routing.push(routing);
            trace.retrieval.push(retrieval);
            streams.push((u, kl));
        }

        let mut fused = Vec::with_capacity(3);
        for m in 0..3 {
            let others: Vec<usize> = (0..3).filter(|&o| o != m).collect();
            let out = self.gates[m].forward(
                &mut g,
                store,
                streams[m].0,
                [streams[others[0]].0, streams[others[1]].0],
                &gate_cfg,
                train,
                rng,
            )?;
            trace.fusion.push(out.fuse_weights);
            trace.attention.push(out.attention);
            fused.push(out.fused);
        }

        let logits = self
            .classifier
            .logits(&mut g, store, [fused[0], fused[1], fused[2]])?;
        let kl = if self.config.disable_moe {
            None
        } else {
            let mut acc: Option<NodeId> = None;
            for (_, kl) in &streams {
                let kl = kl.expect("moe streams carry a kl node");
                acc = Some(match acc {
                    Some(a) => g.add(a, kl)?,
                    None => kl,
                });
            }
            Some(g.scale(acc.unwrap(), R::from_f64(1.0 / 3.0)))
        };
        Ok(ForwardOutput {
            graph: g,
            logits,
            kl,
            trace,
        })
    }

    /// Classification loss for one dialogue: cross-entropy plus the
    /// beta-weighted latent KL when the mixture encoder is active.
    pub fn loss<R: Real>(
        &self,
        out: &mut ForwardOutput<R>,
        labels: &[usize],
        class_weights: Option<&[f64]>,
    ) -> Result<NodeId> {
        let g = &mut out.graph;
        let ce = classifier::cross_entropy_loss(g, out.logits, labels, class_weights)?;
        match (out.kl, self.config.beta_kl != 0.0) {
            (Some(kl), true) => {
                let scaled = g.scale(kl, R::from_f64(self.config.beta_kl));
                g.add(ce, scaled)
            }
            _ => Ok(ce),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::gradcheck;

    fn small_config(dims: Dims, num_labels: usize) -> ModelConfig {
        ModelConfig {
            dims,
            num_labels,
            d_z: 6,
            d: 8,
            d_ff: 16,
            num_experts: 3,
            k: 2,
            lambda_u: 1.0,
            renormalize: false,
            iterations: 2,
            heads: 2,
            dropout: 0.5,
            sigmoid_gate: false,
            positional: false,
            beta_kl: 0.0,
            disable_moe: false,
            disable_reasoning: false,
        }
    }

    fn tiny_dataset() -> crate::data::Dataset {
        let spec = SyntheticSpec {
            num_labels: 3,
            dims: Dims {
                text: 6,
                audio: 5,
                visual: 4,
            },
            num_dialogues: 3,
            utterances_min: 2,
            utterances_max: 4,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec).unwrap()
    }

    #[test]
    fn forward_shapes_and_trace_contents() {
        let ds = tiny_dataset();
        let cfg = small_config(ds.header.dims.clone(), ds.header.num_labels);
        let mut rng = PortableRng::new(1);
        let mut store: ParamStore<f64> = ParamStore::new();
        let model = SureModel::init(&mut store, cfg, &mut rng).unwrap();
        let dlg = &ds.dialogues[0];
        let n = dlg.utterances.len();
        let out = model
            .forward(&store, dlg, ModalityMask::all(), false, &mut rng)
            .unwrap();
        assert_eq!(out.graph.shape(out.logits), [n, 3]);
        assert_eq!(out.trace.routing.len(), 3);
        assert_eq!(out.trace.routing[0].len(), n);
        assert_eq!(out.trace.retrieval[0].len(), 2);
        assert_eq!(out.trace.fusion[0].len(), n);
        for per_utt in &out.trace.fusion {
            for w in per_utt {
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        for per_utt in &out.trace.routing[0] {
            assert_eq!(per_utt.selected.len(), 2);
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let ds = tiny_dataset();
        let cfg = small_config(ds.header.dims.clone(), ds.header.num_labels);
        let mut rng = PortableRng::new(2);
        let mut store: ParamStore<f64> = ParamStore::new();
        let model = SureModel::init(&mut store, cfg, &mut rng).unwrap();
        let dlg = &ds.dialogues[1];
        let a = model
            .forward(&store, dlg, ModalityMask::all(), false, &mut PortableRng::new(9))
            .unwrap();
        let b = model
            .forward(&store, dlg, ModalityMask::all(), false, &mut PortableRng::new(77))
            .unwrap();
        assert_eq!(a.graph.data(a.logits), b.graph.data(b.logits));
    }

    #[test]
    fn masked_modalities_zero_features_match_explicit_masking() {
        let ds = tiny_dataset();
        let cfg = small_config(ds.header.dims.clone(), ds.header.num_labels);
        let mut rng = PortableRng::new(3);
        let mut store: ParamStore<f64> = ParamStore::new();
        let model = SureModel::init(&mut store, cfg, &mut rng).unwrap();
        let mask = ModalityMask::parse("text+audio").unwrap();
        let masked_ds = crate::data::mask_modalities(&ds, mask).unwrap();

        let a = model
            .forward(&store, &ds.dialogues[0], mask, false, &mut rng)
            .unwrap();
        let b = model
            .forward(
                &store,
                &masked_ds.dialogues[0],
                ModalityMask::all(),
                false,
                &mut rng,
            )
            .unwrap();
        for (x, y) in a.graph.data(a.logits).iter().zip(b.graph.data(b.logits)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ablated_model_has_no_kl_and_kl_enters_loss() {
        let ds = tiny_dataset();
        let mut cfg = small_config(ds.header.dims.clone(), ds.header.num_labels);
        cfg.disable_moe = true;
        cfg.disable_reasoning = true;
        let mut rng = PortableRng::new(4);
        let mut store: ParamStore<f64> = ParamStore::new();
        let model = SureModel::init(&mut store, cfg, &mut rng).unwrap();
        let out = model
            .forward(&store, &ds.dialogues[0], ModalityMask::all(), false, &mut rng)
            .unwrap();
        assert!(out.kl.is_none());
        assert!(out.trace.routing.iter().all(|r| r.is_empty()));
        assert!(out.trace.retrieval.iter().all(|r| r.is_empty()));

        // with beta > 0 the loss must differ from bare cross-entropy
        let mut cfg2 = small_config(ds.header.dims.clone(), ds.header.num_labels);
        cfg2.beta_kl = 0.5;
        let mut store2: ParamStore<f64> = ParamStore::new();
        let model2 = SureModel::init(&mut store2, cfg2, &mut rng).unwrap();
        let labels: Vec<usize> = ds.dialogues[0]
            .utterances
            .iter()
            .map(|u| u.label)
            .collect();
        let mut out_a = model2
            .forward(&store2, &ds.dialogues[0], ModalityMask::all(), false, &mut rng)
            .unwrap();
        let kl_val = out_a.graph.scalar(out_a.kl.unwrap());
        let ce = classifier::cross_entropy_loss(&mut out_a.graph, out_a.logits, &labels, None)
            .unwrap();
        let ce_val = out_a.graph.scalar(ce);
        let mut out_b = model2
            .forward(&store2, &ds.dialogues[0], ModalityMask::all(), false, &mut rng)
            .unwrap();
        let loss = model2.loss(&mut out_b, &labels, None).unwrap();
        let total = out_b.graph.scalar(loss);
        assert!((total - (ce_val + 0.5 * kl_val)).abs() < 1e-10);
        assert!(kl_val >= 0.0);
    }

    #[test]
    fn full_pipeline_gradient_check() {
        // dense routing (k = num_experts) and dropout 0 keep the loss smooth;
        // a reseeded rng per forward pins the latent noise
        let ds = tiny_dataset();
        let mut cfg = small_config(ds.header.dims.clone(), ds.header.num_labels);
        cfg.k = cfg.num_experts;
        cfg.dropout = 0.0;
        cfg.iterations = 1;
        cfg.beta_kl = 0.1;
        let mut rng = PortableRng::new(5);
        let mut store: ParamStore<f64> = ParamStore::new();
        let model = SureModel::init(&mut store, cfg, &mut rng).unwrap();
        let dlg = Dialogue {
            dialogue_id: ds.dialogues[0].dialogue_id.clone(),
            utterances: ds.dialogues[0].utterances[..2].to_vec(),
        };
        let labels: Vec<usize> = dlg.utterances.iter().map(|u| u.label).collect();

        let forward = |store: &ParamStore<f64>| -> crate::Result<f64> {
            let mut out =
                model.forward(store, &dlg, ModalityMask::all(), true, &mut PortableRng::new(42))?;
            let loss = model.loss(&mut out, &labels, None)?;
            Ok(out.graph.scalar(loss))
        };
        let mut out = model
            .forward(&store, &dlg, ModalityMask::all(), true, &mut PortableRng::new(42))
            .unwrap();
        let loss = model.loss(&mut out, &labels, None).unwrap();
        out.graph.backward(loss).unwrap();
        let grads = out.graph.param_grads(&store);
        let err = gradcheck::check_params(&mut store, &grads, 1e-5, forward).unwrap();
        assert!(err < 1e-3, "max relative error {err}");
    }
}
