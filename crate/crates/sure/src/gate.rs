//! Transformer gate: intra-modal self-attention, inter-modal cross-attention,
//! and a convex gated fusion of the three enhanced streams per modality.
//!
//! Residual placement: the attention sublayer adds its residual from the
//! query input, then Norm; the FFN sublayer is the standard residual + Norm.
//! No positional encoding by default (dialogue
//! order is injected by the reasoning LSTMs), which keeps the attention
//! blocks exactly permutation-equivariant.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SureError};
use crate::real::Real;
use crate::rng::PortableRng;
use crate::tensor::nn::{self, LinearNodes};
use crate::tensor::{Graph, NodeId, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    /// Per-source sigmoid gate instead of the softmax convex gate.
    pub sigmoid_gate: bool,
    /// Add sinusoidal position signals to block inputs.
    pub positional: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            heads: 4,
            d_ff: 512,
            dropout: 0.5,
            sigmoid_gate: false,
            positional: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderBlockParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub norm1_gamma: ParamId,
    pub norm1_beta: ParamId,
    pub norm2_gamma: ParamId,
    pub norm2_beta: ParamId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateParams {
    pub w: ParamId,
    pub b: ParamId,
}

/// One modality's pipeline: self block, two cross blocks (one per other
/// modality, in fixed order), and the fusion gate. Parameters are not shared
/// across modalities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalityGateParams {
    pub self_block: EncoderBlockParams,
    pub cross_blocks: [EncoderBlockParams; 2],
    pub fuse: GateParams,
}

/// Attention map recorded for the inspect report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub kind: String,
    pub heads: usize,
    pub rows: usize,
    pub cols: usize,
    /// Head-major flattened weights, heads * rows * cols.
    pub weights: Vec<f64>,
}

pub struct GateOutput {
    pub fused: NodeId,
    /// Per-utterance 3-way fusion weights.
    pub fuse_weights: Vec<Vec<f64>>,
    pub attention: Vec<AttentionTrace>,
}

impl EncoderBlockParams {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        d: usize,
        d_ff: usize,
        rng: &mut PortableRng,
    ) -> Self {
        EncoderBlockParams {
            wq: store.add_weight(format!("{prefix}.wq"), [d, d], rng),
            bq: store.add_zeros(format!("{prefix}.bq"), [1, d]),
            wk: store.add_weight(format!("{prefix}.wk"), [d, d], rng),
            bk: store.add_zeros(format!("{prefix}.bk"), [1, d]),
            wv: store.add_weight(format!("{prefix}.wv"), [d, d], rng),
            bv: store.add_zeros(format!("{prefix}.bv"), [1, d]),
            wo: store.add_weight(format!("{prefix}.wo"), [d, d], rng),
            bo: store.add_zeros(format!("{prefix}.bo"), [1, d]),
            ffn_w1: store.add_weight(format!("{prefix}.ffn_w1"), [d, d_ff], rng),
            ffn_b1: store.add_zeros(format!("{prefix}.ffn_b1"), [1, d_ff]),
            ffn_w2: store.add_weight(format!("{prefix}.ffn_w2"), [d_ff, d], rng),
            ffn_b2: store.add_zeros(format!("{prefix}.ffn_b2"), [1, d]),
            norm1_gamma: store.add_ones(format!("{prefix}.norm1_gamma"), [1, d]),
            norm1_beta: store.add_zeros(format!("{prefix}.norm1_beta"), [1, d]),
            norm2_gamma: store.add_ones(format!("{prefix}.norm2_gamma"), [1, d]),
            norm2_beta: store.add_zeros(format!("{prefix}.norm2_beta"), [1, d]),
        }
    }

    /// Attention sublayer + FFN sublayer. `query == kv` gives the
    /// self-attention block; otherwise cross-attention with the residual
    /// taken from the query stream.
    pub fn attend<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        query: NodeId,
        kv: NodeId,
        cfg: &GateConfig,
        train: bool,
        rng: &mut PortableRng,
    ) -> Result<(NodeId, AttentionTrace)> {
        let [n_q, d] = g.shape(query);
        let [n_k, d_kv] = g.shape(kv);
        if d != d_kv {
            return Err(SureError::ShapeMismatch {
                op: "encoder_block",
                lhs: g.shape(query).to_vec(),
                rhs: g.shape(kv).to_vec(),
            });
        }
        if d % cfg.heads != 0 {
            return Err(SureError::InvalidArgument(format!(
                "model dim {d} not divisible by {} heads",
                cfg.heads
            )));
        }
        let bind = |g: &mut Graph<R>, w, b| LinearNodes {
            w: g.param(store, w),
            b: g.param(store, b),
        };
        let q_lin = bind(g, self.wq, self.bq);
        let k_lin = bind(g, self.wk, self.bk);
        let v_lin = bind(g, self.wv, self.bv);
        let q_proj = nn::linear(g, query, &q_lin)?;
        let k_proj = nn::linear(g, kv, &k_lin)?;
        let v_proj = nn::linear(g, kv, &v_lin)?;

        let d_head = d / cfg.heads;
        let mut head_outs = Vec::with_capacity(cfg.heads);
        let mut trace = AttentionTrace {
            kind: if query == kv { "self" } else { "cross" }.into(),
            heads: cfg.heads,
            rows: n_q,
            cols: n_k,
            weights: Vec::with_capacity(cfg.heads * n_q * n_k),
        };
        for h in 0..cfg.heads {
            let qh = g.slice_cols(q_proj, h * d_head, d_head)?;
            let kh = g.slice_cols(k_proj, h * d_head, d_head)?;
            let vh = g.slice_cols(v_proj, h * d_head, d_head)?;
            let (oh, wh) = nn::scaled_dot_attention(g, qh, kh, vh, None)?;
            trace
                .weights
                .extend(g.data(wh).iter().map(|&v| Real::to_f64(v)));
            head_outs.push(oh);
        }
        let concat = g.concat_cols(&head_outs)?;
        let o_lin = bind(g, self.wo, self.bo);
        let attn = nn::linear(g, concat, &o_lin)?;
        let attn = nn::dropout(g, attn, cfg.dropout, train, rng)?;

        let res1 = g.add(attn, query)?;
        let n1g = g.param(store, self.norm1_gamma);
        let n1b = g.param(store, self.norm1_beta);
        let normed = g.layer_norm(res1, n1g, n1b, R::from_f64(1e-5))?;

        let f1 = bind(g, self.ffn_w1, self.ffn_b1);
        let f2 = bind(g, self.ffn_w2, self.ffn_b2);
        let hidden = nn::linear(g, normed, &f1)?;
        let hidden = g.tanh_op(hidden);
        let ffn = nn::linear(g, hidden, &f2)?;
        let ffn = nn::dropout(g, ffn, cfg.dropout, train, rng)?;
        let res2 = g.add(ffn, normed)?;
        let n2g = g.param(store, self.norm2_gamma);
        let n2b = g.param(store, self.norm2_beta);
        let out = g.layer_norm(res2, n2g, n2b, R::from_f64(1e-5))?;
        Ok((out, trace))
    }
}

impl GateParams {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        d: usize,
        rng: &mut PortableRng,
    ) -> Self {
        GateParams {
            w: store.add_weight(format!("{prefix}.gate_w"), [3 * d, 3], rng),
            b: store.add_zeros(format!("{prefix}.gate_b"), [1, 3]),
        }
    }
}

/// Adaptive fusion of three equal-shape streams: per utterance,
/// w = softmax(W_g [u1;u2;u3] + b_g), H = w1 u1 + w2 u2 + w3 u3.
/// The sigmoid variant gates each source independently.
pub fn gate_fuse<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    gate: &GateParams,
    sources: [NodeId; 3],
    sigmoid_gate: bool,
) -> Result<(NodeId, Vec<Vec<f64>>)> {
    let shape = g.shape(sources[0]);
    for &s in &sources[1..] {
        if g.shape(s) != shape {
            return Err(SureError::ShapeMismatch {
                op: "gate_fuse",
                lhs: shape.to_vec(),
                rhs: g.shape(s).to_vec(),
            });
        }
    }
    let cat = g.concat_cols(&sources)?;
    let lin = LinearNodes {
        w: g.param(store, gate.w),
        b: g.param(store, gate.b),
    };
    let logits = nn::linear(g, cat, &lin)?;
    let weights = if sigmoid_gate {
        g.sigmoid(logits)
    } else {
        g.softmax_rows(logits)?
    };
    let mut fused: Option<NodeId> = None;
    for (j, &src) in sources.iter().enumerate() {
        let w_j = g.slice_cols(weights, j, 1)?;
        let contrib = g.mul_col(w_j, src)?;
        fused = Some(match fused {
            Some(acc) => g.add(acc, contrib)?,
            None => contrib,
        });
    }
    let n = shape[0];
    let wtrace = (0..n)
        .map(|i| {
            g.data(weights)[i * 3..(i + 1) * 3]
                .iter()
                .map(|&v| Real::to_f64(v))
                .collect()
        })
        .collect();
    Ok((fused.unwrap(), wtrace))
}

/// Sinusoidal position matrix, added to block inputs when configured.
fn positional_encoding<R: Real>(n: usize, d: usize) -> Vec<R> {
    let mut enc = vec![R::zero(); n * d];
    for pos in 0..n {
        for j in 0..d {
            let exponent = (2 * (j / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            enc[pos * d + j] = R::from_f64(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    enc
}

impl ModalityGateParams {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        d: usize,
        d_ff: usize,
        rng: &mut PortableRng,
    ) -> Self {
        ModalityGateParams {
            self_block: EncoderBlockParams::init(store, &format!("{prefix}.sa"), d, d_ff, rng),
            cross_blocks: [
                EncoderBlockParams::init(store, &format!("{prefix}.ca0"), d, d_ff, rng),
                EncoderBlockParams::init(store, &format!("{prefix}.ca1"), d, d_ff, rng),
            ],
            fuse: GateParams::init(store, prefix, d, rng),
        }
    }

    /// H_m = gate(self_attend(U_m), cross(U_m <- other0), cross(U_m <- other1)).
    pub fn forward<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        u_self: NodeId,
        others: [NodeId; 2],
        cfg: &GateConfig,
        train: bool,
        rng: &mut PortableRng,
    ) -> Result<GateOutput> {
        let [n, d] = g.shape(u_self);
        for &o in &others {
            if g.shape(o) != [n, d] {
                return Err(SureError::ShapeMismatch {
                    op: "fuse_all",
                    lhs: [n, d].to_vec(),
                    rhs: g.shape(o).to_vec(),
                });
            }
        }
        let (u_self, others) = if cfg.positional {
            let pe = positional_encoding::<R>(n, d);
            let pe_t = g.constant(pe, [n, d]);
            let us = g.add(u_self, pe_t)?;
            let o0 = g.add(others[0], pe_t)?;
            let o1 = g.add(others[1], pe_t)?;
            (us, [o0, o1])
        } else {
            (u_self, others)
        };
        let mut attention = Vec::with_capacity(3);
        let (sa, t0) = self
            .self_block
            .attend(g, store, u_self, u_self, cfg, train, rng)?;
        attention.push(t0);
        let (ca0, t1) =
            self.cross_blocks[0].attend(g, store, u_self, others[0], cfg, train, rng)?;
        attention.push(t1);
        let (ca1, t2) =
            self.cross_blocks[1].attend(g, store, u_self, others[1], cfg, train, rng)?;
        attention.push(t2);
        let (fused, fuse_weights) =
            gate_fuse(g, store, &self.fuse, [sa, ca0, ca1], cfg.sigmoid_gate)?;
        Ok(GateOutput {
            fused,
            fuse_weights,
            attention,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    fn cfg(heads: usize, d_ff: usize) -> GateConfig {
        GateConfig {
            heads,
            d_ff,
            dropout: 0.0,
            sigmoid_gate: false,
            positional: false,
        }
    }

    fn rand_mat(n: usize, d: usize, rng: &mut PortableRng) -> Vec<f64> {
        (0..n * d).map(|_| rng.normal_f64()).collect()
    }

    #[test]
    fn length_one_sequence_matches_manual_composition() {
        let mut rng = PortableRng::new(1);
        let mut store: ParamStore<f64> = ParamStore::new();
        let block = EncoderBlockParams::init(&mut store, "b", 4, 8, &mut rng);
        let c = cfg(1, 8);
        let data = rand_mat(1, 4, &mut rng);

        let mut g: Graph<f64> = Graph::new();
        let u = g.constant(data.clone(), [1, 4]);
        let (out, trace) = block
            .attend(&mut g, &store, u, u, &c, false, &mut rng)
            .unwrap();
        assert_eq!(trace.weights, vec![1.0]);

        // manual composition of the audited ops: with a single position the
        // attention output is just V's row through the output projection
        let mut g2: Graph<f64> = Graph::new();
        let u2 = g2.constant(data, [1, 4]);
        let bind = |g: &mut Graph<f64>, w, b| LinearNodes {
            w: g.param(&store, w),
            b: g.param(&store, b),
        };
        let v_lin = bind(&mut g2, block.wv, block.bv);
        let v = nn::linear(&mut g2, u2, &v_lin).unwrap();
        let o_lin = bind(&mut g2, block.wo, block.bo);
        let attn = nn::linear(&mut g2, v, &o_lin).unwrap();
        let res1 = g2.add(attn, u2).unwrap();
        let n1g = g2.param(&store, block.norm1_gamma);
        let n1b = g2.param(&store, block.norm1_beta);
        let normed = g2.layer_norm(res1, n1g, n1b, 1e-5).unwrap();
        let f1 = bind(&mut g2, block.ffn_w1, block.ffn_b1);
        let f2 = bind(&mut g2, block.ffn_w2, block.ffn_b2);
        let hid = nn::linear(&mut g2, normed, &f1).unwrap();
        let hid = g2.tanh_op(hid);
        let ffn = nn::linear(&mut g2, hid, &f2).unwrap();
        let res2 = g2.add(ffn, normed).unwrap();
        let n2g = g2.param(&store, block.norm2_gamma);
        let n2b = g2.param(&store, block.norm2_beta);
        let expect = g2.layer_norm(res2, n2g, n2b, 1e-5).unwrap();

        for (a, e) in g.data(out).iter().zip(g2.data(expect)) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_equivariance_without_positions() {
        let mut rng = PortableRng::new(2);
        let mut store: ParamStore<f64> = ParamStore::new();
        let block = EncoderBlockParams::init(&mut store, "b", 4, 8, &mut rng);
        let c = cfg(2, 8);
        let data = rand_mat(3, 4, &mut rng);
        let perm = [2usize, 0, 1];

        let mut g: Graph<f64> = Graph::new();
        let u = g.constant(data.clone(), [3, 4]);
        let (out, _) = block
            .attend(&mut g, &store, u, u, &c, false, &mut rng)
            .unwrap();

        let mut permuted = vec![0.0; 12];
        for (i, &p) in perm.iter().enumerate() {
            permuted[i * 4..(i + 1) * 4].copy_from_slice(&data[p * 4..(p + 1) * 4]);
        }
        let mut g2: Graph<f64> = Graph::new();
        let u2 = g2.constant(permuted, [3, 4]);
        let (out2, _) = block
            .attend(&mut g2, &store, u2, u2, &c, false, &mut rng)
            .unwrap();

        for (i, &p) in perm.iter().enumerate() {
            for j in 0..4 {
                assert!(
                    (g2.data(out2)[i * 4 + j] - g.data(out)[p * 4 + j]).abs() < 1e-10,
                    "permuting inputs must permute outputs"
                );
            }
        }
    }

    #[test]
    fn zero_ffn_reduces_second_sublayer_to_norm() {
        let mut rng = PortableRng::new(3);
        let mut store: ParamStore<f64> = ParamStore::new();
        let block = EncoderBlockParams::init(&mut store, "b", 4, 8, &mut rng);
        store.get_mut(block.ffn_w2).data.iter_mut().for_each(|v| *v = 0.0);
        store.get_mut(block.ffn_b2).data.iter_mut().for_each(|v| *v = 0.0);
        let c = cfg(1, 8);
        let data = rand_mat(2, 4, &mut rng);

        let mut g: Graph<f64> = Graph::new();
        let u = g.constant(data, [2, 4]);
        let (out, _) = block
            .attend(&mut g, &store, u, u, &c, false, &mut rng)
            .unwrap();

        // second sublayer becomes Norm(0 + normed); recompute the first
        // sublayer and apply the second norm to it directly
        let bind = |g: &mut Graph<f64>, w, b| LinearNodes {
            w: g.param(&store, w),
            b: g.param(&store, b),
        };
        let q_lin = bind(&mut g, block.wq, block.bq);
        let _ = q_lin;
        // cheaper check: out rows must equal layer_norm(normed) which has
        // mean beta and deviation gamma; with gamma=1, beta=0 rows are
        // mean-0/var-1
        for i in 0..2 {
            let row = &g.data(out)[i * 4..(i + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn cross_attention_on_same_sequence_equals_self_attention() {
        let mut rng = PortableRng::new(4);
        let mut store: ParamStore<f64> = ParamStore::new();
        let block = EncoderBlockParams::init(&mut store, "b", 4, 8, &mut rng);
        let c = cfg(2, 8);
        let data = rand_mat(3, 4, &mut rng);

        let mut g: Graph<f64> = Graph::new();
        let u = g.constant(data.clone(), [3, 4]);
        let (self_out, _) = block
            .attend(&mut g, &store, u, u, &c, false, &mut rng)
            .unwrap();
        let u_copy = g.constant(data, [3, 4]);
        let (cross_out, trace) = block
            .attend(&mut g, &store, u, u_copy, &c, false, &mut rng)
            .unwrap();
        assert_eq!(trace.kind, "cross");
        for (a, b) in g.data(self_out).iter().zip(g.data(cross_out)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_block_rejects_length_mismatch_in_fuse() {
        let mut rng = PortableRng::new(5);
        let mut store: ParamStore<f64> = ParamStore::new();
        let m = ModalityGateParams::init(&mut store, "m", 4, 8, &mut rng);
        let c = cfg(1, 8);
        let mut g: Graph<f64> = Graph::new();
        let u = g.constant(rand_mat(3, 4, &mut rng), [3, 4]);
        let short = g.constant(rand_mat(2, 4, &mut rng), [2, 4]);
        assert!(m
            .forward(&mut g, &store, u, [short, u], &c, false, &mut rng)
            .is_err());
    }

    #[test]
    fn gate_fuse_uniform_and_saturated() {
        let mut rng = PortableRng::new(6);
        let mut store: ParamStore<f64> = ParamStore::new();
        let gate = GateParams::init(&mut store, "g", 2, &mut rng);
        store.get_mut(gate.w).data.iter_mut().for_each(|v| *v = 0.0);

        let mut g: Graph<f64> = Graph::new();
        let u1 = g.constant(vec![3.0, 0.0], [1, 2]);
        let u2 = g.constant(vec![0.0, 3.0], [1, 2]);
        let u3 = g.constant(vec![3.0, 3.0], [1, 2]);
        let (h, w) = gate_fuse(&mut g, &store, &gate, [u1, u2, u3], false).unwrap();
        assert!(w[0].iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
        assert!((g.data(h)[0] - 2.0).abs() < 1e-12);
        assert!((g.data(h)[1] - 2.0).abs() < 1e-12);

        // saturate toward the first source
        store.get_mut(gate.b).data = vec![20.0, -20.0, -20.0];
        let mut g2: Graph<f64> = Graph::new();
        let v1 = g2.constant(vec![3.0, 0.0], [1, 2]);
        let v2 = g2.constant(vec![0.0, 3.0], [1, 2]);
        let v3 = g2.constant(vec![3.0, 3.0], [1, 2]);
        let (h2, _) = gate_fuse(&mut g2, &store, &gate, [v1, v2, v3], false).unwrap();
        assert!((g2.data(h2)[0] - 3.0).abs() < 1e-6);
        assert!(g2.data(h2)[1].abs() < 1e-6);
    }

    #[test]
    fn gate_fuse_is_convex_combination() {
        let mut rng = PortableRng::new(7);
        let mut store: ParamStore<f64> = ParamStore::new();
        let gate = GateParams::init(&mut store, "g", 3, &mut rng);
        for _ in 0..20 {
            let mut g: Graph<f64> = Graph::new();
            let srcs: Vec<NodeId> = (0..3)
                .map(|_| {
                    let d = rand_mat(2, 3, &mut rng);
                    g.constant(d, [2, 3])
                })
                .collect();
            let (h, w) = gate_fuse(&mut g, &store, &gate, [srcs[0], srcs[1], srcs[2]], false)
                .unwrap();
            for i in 0..2 {
                let ws = &w[i];
                assert!((ws.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(ws.iter().all(|&x| x >= 0.0));
                for j in 0..3 {
                    let expected: f64 = (0..3)
                        .map(|s| ws[s] * g.data(srcs[s])[i * 3 + j])
                        .sum();
                    assert!((g.data(h)[i * 3 + j] - expected).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn identical_streams_and_params_give_identical_fused_outputs() {
        let mut rng = PortableRng::new(8);
        let mut store: ParamStore<f64> = ParamStore::new();
        let m_t = ModalityGateParams::init(&mut store, "t", 4, 8, &mut rng);
        let m_a = ModalityGateParams::init(&mut store, "a", 4, 8, &mut rng);
        // copy t's parameters into a
        let copy_block = |store: &mut ParamStore<f64>, from: &EncoderBlockParams, to: &EncoderBlockParams| {
            for (f, t) in [
                (from.wq, to.wq), (from.bq, to.bq), (from.wk, to.wk), (from.bk, to.bk),
                (from.wv, to.wv), (from.bv, to.bv), (from.wo, to.wo), (from.bo, to.bo),
                (from.ffn_w1, to.ffn_w1), (from.ffn_b1, to.ffn_b1),
                (from.ffn_w2, to.ffn_w2), (from.ffn_b2, to.ffn_b2),
                (from.norm1_gamma, to.norm1_gamma), (from.norm1_beta, to.norm1_beta),
                (from.norm2_gamma, to.norm2_gamma), (from.norm2_beta, to.norm2_beta),
            ] {
                store.get_mut(t).data = store.get(f).data.clone();
            }
        };
        copy_block(&mut store, &m_t.self_block, &m_a.self_block);
        copy_block(&mut store, &m_t.cross_blocks[0], &m_a.cross_blocks[0]);
        copy_block(&mut store, &m_t.cross_blocks[1], &m_a.cross_blocks[1]);
        store.get_mut(m_a.fuse.w).data = store.get(m_t.fuse.w).data.clone();
        store.get_mut(m_a.fuse.b).data = store.get(m_t.fuse.b).data.clone();

        let c = cfg(2, 8);
        let data = rand_mat(3, 4, &mut rng);
        let mut g: Graph<f64> = Graph::new();
        let u = g.constant(data, [3, 4]);
        let out_t = m_t
            .forward(&mut g, &store, u, [u, u], &c, false, &mut rng)
            .unwrap();
        let out_a = m_a
            .forward(&mut g, &store, u, [u, u], &c, false, &mut rng)
            .unwrap();
        for (a, b) in g.data(out_t.fused).iter().zip(g.data(out_a.fused)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_other_modalities_still_give_finite_output() {
        let mut rng = PortableRng::new(9);
        let mut store: ParamStore<f64> = ParamStore::new();
        let m = ModalityGateParams::init(&mut store, "t", 4, 8, &mut rng);
        let c = cfg(1, 8);
        let mut g: Graph<f64> = Graph::new();
        let u = g.constant(rand_mat(3, 4, &mut rng), [3, 4]);
        let zero = g.constant(vec![0.0; 12], [3, 4]);
        let out = m
            .forward(&mut g, &store, u, [zero, zero], &c, false, &mut rng)
            .unwrap();
        assert!(g.data(out.fused).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gradient_check_through_fuse_all() {
        let mut rng = PortableRng::new(10);
        let mut store: ParamStore<f64> = ParamStore::new();
        let m = ModalityGateParams::init(&mut store, "t", 2, 4, &mut rng);
        let c = cfg(1, 4);
        let u_data = rand_mat(2, 2, &mut rng);
        let o0 = rand_mat(2, 2, &mut rng);
        let o1 = rand_mat(2, 2, &mut rng);

        let forward = |store: &ParamStore<f64>| -> crate::Result<f64> {
            let mut rng = PortableRng::new(0);
            let mut g: Graph<f64> = Graph::new();
            let u = g.constant(u_data.clone(), [2, 2]);
            let a = g.constant(o0.clone(), [2, 2]);
            let b = g.constant(o1.clone(), [2, 2]);
            let out = m.forward(&mut g, store, u, [a, b], &c, false, &mut rng)?;
            let s = g.sq(out.fused);
            let loss = g.sum_all(s);
            Ok(g.scalar(loss))
        };
        let mut grads_rng = PortableRng::new(0);
        let mut g: Graph<f64> = Graph::new();
        let u = g.constant(u_data.clone(), [2, 2]);
        let a = g.constant(o0.clone(), [2, 2]);
        let b = g.constant(o1.clone(), [2, 2]);
        let out = m
            .forward(&mut g, &store, u, [a, b], &c, false, &mut grads_rng)
            .unwrap();
        let s = g.sq(out.fused);
        let loss = g.sum_all(s);
        g.backward(loss).unwrap();
        let grads = g.param_grads(&store);
        let err = gradcheck::check_params(&mut store, &grads, 1e-5, forward).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}
