//! Per-modality iterative contextual reasoning: a causal LSTM + linear layer
//! builds a global memory over the dialogue, then a query vector per
//! utterance is refined for T turns by attention retrieval, concat +
//! projection, and a second LSTM.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SureError};
use crate::real::Real;
use crate::rng::PortableRng;
use crate::tensor::nn::{self, LinearNodes, LstmNodes};
use crate::tensor::{Graph, NodeId, ParamId, ParamStore};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmParams {
    pub wx: [ParamId; 4],
    pub wh: [ParamId; 4],
    pub b: [ParamId; 4],
}

impl LstmParams {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut PortableRng,
    ) -> Self {
        let gates = ["i", "f", "o", "g"];
        LstmParams {
            wx: std::array::from_fn(|k| {
                store.add_weight(format!("{prefix}.wx_{}", gates[k]), [d_in, d_h], rng)
            }),
            wh: std::array::from_fn(|k| {
                store.add_weight(format!("{prefix}.wh_{}", gates[k]), [d_h, d_h], rng)
            }),
            b: std::array::from_fn(|k| store.add_zeros(format!("{prefix}.b_{}", gates[k]), [1, d_h])),
        }
    }

    pub fn bind<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>) -> LstmNodes {
        LstmNodes {
            wx: std::array::from_fn(|k| g.param(store, self.wx[k])),
            wh: std::array::from_fn(|k| g.param(store, self.wh[k])),
            b: std::array::from_fn(|k| g.param(store, self.b[k])),
        }
    }
}

/// Memory LSTM + linear, query LSTM + concat projection. Absent when the
/// reasoning ablation is active (query projection alone remains).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasoningCore {
    pub mem_lstm: LstmParams,
    pub mem_w: ParamId,
    pub mem_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub lstm: LstmParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasoningParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub core: Option<ReasoningCore>,
}

impl ReasoningParams {
    /// d_z: latent input dim, d: query/memory dim.
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        d_z: usize,
        d: usize,
        with_core: bool,
        rng: &mut PortableRng,
    ) -> Self {
        let wq = store.add_weight(format!("{prefix}.wq"), [d_z, d], rng);
        let bq = store.add_zeros(format!("{prefix}.bq"), [1, d]);
        let core = with_core.then(|| ReasoningCore {
            mem_lstm: LstmParams::init(store, &format!("{prefix}.mem_lstm"), d_z, d, rng),
            mem_w: store.add_weight(format!("{prefix}.mem_w"), [d, d], rng),
            mem_b: store.add_zeros(format!("{prefix}.mem_b"), [1, d]),
            proj_w: store.add_weight(format!("{prefix}.proj_w"), [2 * d, d], rng),
            proj_b: store.add_zeros(format!("{prefix}.proj_b"), [1, d]),
            lstm: LstmParams::init(store, &format!("{prefix}.lstm"), d, d, rng),
        });
        ReasoningParams { wq, bq, core }
    }

    /// Refine every utterance's query over the dialogue memory.
    /// `z: [n, d_z]`; returns `U: [n, d]` plus retrieval weights per iteration.
    pub fn forward<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        z: NodeId,
        iterations: usize,
    ) -> Result<(NodeId, Vec<Vec<f64>>)> {
        let n = g.shape(z)[0];
        if n == 0 {
            return Err(SureError::InvalidArgument("empty utterance sequence".into()));
        }
        let query_lin = LinearNodes {
            w: g.param(store, self.wq),
            b: g.param(store, self.bq),
        };
        let mut q = nn::linear(g, z, &query_lin)?;
        let core = match (&self.core, iterations) {
            (Some(core), t) if t > 0 => core,
            _ => return Ok((q, Vec::new())),
        };
        let d = g.shape(q)[1];
        let memory = build_memory(g, store, z, core)?;

        let proj = LinearNodes {
            w: g.param(store, core.proj_w),
            b: g.param(store, core.proj_b),
        };
        let lstm = core.lstm.bind(g, store);
        let mut h = g.constant(vec![R::zero(); n * d], [n, d]);
        let mut c = g.constant(vec![R::zero(); n * d], [n, d]);
        let mut traces = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let (r, weights) = nn::scaled_dot_attention(g, q, memory, memory, None)?;
            traces.push(g.data(weights).iter().map(|&v| Real::to_f64(v)).collect());
            let cat = g.concat_cols(&[q, r])?;
            let q_hat = nn::linear(g, cat, &proj)?;
            let (h_next, c_next) = nn::lstm_step(g, q_hat, h, c, &lstm)?;
            h = h_next;
            c = c_next;
            q = h;
        }
        Ok((q, traces))
    }
}

/// g_i = Linear(LSTM(z_i, h_{i-1})), unidirectional, h_0 = 0.
pub fn build_memory<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    z: NodeId,
    core: &ReasoningCore,
) -> Result<NodeId> {
    let n = g.shape(z)[0];
    if n == 0 {
        return Err(SureError::InvalidArgument("empty utterance sequence".into()));
    }
    let d = store.get(core.mem_w).shape[0];
    let lstm = core.mem_lstm.bind(g, store);
    let mut h = g.constant(vec![R::zero(); d], [1, d]);
    let mut c = g.constant(vec![R::zero(); d], [1, d]);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let z_i = g.row(z, i)?;
        let (h_next, c_next) = nn::lstm_step(g, z_i, h, c, &lstm)?;
        h = h_next;
        c = c_next;
        rows.push(h);
    }
    let hidden = g.concat_rows(&rows)?;
    let lin = LinearNodes {
        w: g.param(store, core.mem_w),
        b: g.param(store, core.mem_b),
    };
    nn::linear(g, hidden, &lin)
}
