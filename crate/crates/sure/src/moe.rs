//! Uncertainty-aware mixture of experts, one instance per modality.
//!
//! Each expert maps the input feature to a diagonal Gaussian latent through
//! two independent affine heads (mean and variance); the latent is sampled
//! by reparameterization at train time and collapses to the mean at eval.
//! The gate scores experts by softmax over a linear map of the input, with
//! each expert's logit penalized by lambda_u * mean(sigma^2), then keeps the
//! top k scores and zeroes the rest (no renormalization unless configured).

use serde::{Deserialize, Serialize};

use crate::error::{Result, SureError};
use crate::real::Real;
use crate::rng::PortableRng;
use crate::tensor::nn::{self, LinearNodes};
use crate::tensor::{Graph, NodeId, ParamStore};

pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoeConfig {
    pub num_experts: usize,
    pub k: usize,
    /// Weight of the uncertainty penalty on gate logits; 0 recovers plain
    /// softmax-top-k routing.
    pub lambda_u: f64,
    /// Renormalize kept scores to sum to 1 (off by default).
    pub renormalize: bool,
}

impl Default for MoeConfig {
    fn default() -> Self {
        MoeConfig {
            num_experts: 4,
            k: 3,
            lambda_u: 1.0,
            renormalize: false,
        }
    }
}

impl MoeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.num_experts {
            return Err(SureError::InvalidArgument(format!(
                "top-k must satisfy 1 <= k <= num_experts, got k={} N={}",
                self.k, self.num_experts
            )));
        }
        Ok(())
    }
}

/// Mean and variance heads of one expert.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertParams {
    pub w_mu: crate::tensor::ParamId,
    pub b_mu: crate::tensor::ParamId,
    pub w_sigma: crate::tensor::ParamId,
    pub b_sigma: crate::tensor::ParamId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoeParams {
    pub experts: Vec<ExpertParams>,
    pub gate_w: crate::tensor::ParamId,
    pub gate_b: crate::tensor::ParamId,
}

/// Per-utterance routing outcome, as plain numbers for reports and tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    /// Softmax values with all but the top k zeroed (renormalized if configured).
    pub gate_scores: Vec<f64>,
    pub selected: Vec<usize>,
    /// mean(sigma^2) per expert.
    pub uncertainty: Vec<f64>,
}

/// Gaussian latent nodes of one expert over a whole dialogue.
#[derive(Debug, Clone, Copy)]
pub struct GaussianLatent {
    pub mu: NodeId,
    pub sigma: NodeId,
    pub z: NodeId,
}

pub struct MoeOutput {
    /// Mixed latent, [n_utterances, d_z].
    pub z: NodeId,
    pub routing: Vec<RoutingDecision>,
    /// Mean diagonal-Gaussian KL to N(0, I) over the evaluated experts.
    pub kl: NodeId,
}

impl MoeParams {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        d_in: usize,
        d_z: usize,
        num_experts: usize,
        rng: &mut PortableRng,
    ) -> Self {
        let experts = (0..num_experts)
            .map(|j| ExpertParams {
                w_mu: store.add_weight(format!("{prefix}.expert{j}.w_mu"), [d_in, d_z], rng),
                b_mu: store.add_zeros(format!("{prefix}.expert{j}.b_mu"), [1, d_z]),
                w_sigma: store.add_weight(format!("{prefix}.expert{j}.w_sigma"), [d_in, d_z], rng),
                b_sigma: store.add_zeros(format!("{prefix}.expert{j}.b_sigma"), [1, d_z]),
            })
            .collect();
        MoeParams {
            experts,
            gate_w: store.add_weight(format!("{prefix}.gate_w"), [d_in, num_experts], rng),
            gate_b: store.add_zeros(format!("{prefix}.gate_b"), [1, num_experts]),
        }
    }

    /// Run the MoE over a whole dialogue's feature matrix `x: [n, d_in]`.
    pub fn forward<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        x: NodeId,
        cfg: &MoeConfig,
        train: bool,
        rng: &mut PortableRng,
    ) -> Result<MoeOutput> {
        cfg.validate()?;
        let n = g.shape(x)[0];
        let n_experts = self.experts.len();
        let d_z = store.get(self.experts[0].w_mu).shape[1];

        // variance heads for all experts (uncertainty drives routing)
        let mut sigmas = Vec::with_capacity(n_experts);
        let mut uncert_cols = Vec::with_capacity(n_experts);
        let inv_dz = g.constant(vec![R::from_f64(1.0 / d_z as f64); d_z], [d_z, 1]);
        for (j, e) in self.experts.iter().enumerate() {
            let lin = LinearNodes {
                w: g.param(store, e.w_sigma),
                b: g.param(store, e.b_sigma),
            };
            let pre = nn::linear(g, x, &lin)?;
            if g.data(pre).iter().any(|v| !v.is_finite()) {
                return Err(SureError::NonFinite(format!(
                    "expert {j} variance head activations"
                )));
            }
            let sigma = nn::softplus_floor(g, pre, SIGMA_FLOOR);
            let sig_sq = g.sq(sigma);
            let mean_sq = g.matmul(sig_sq, inv_dz)?; // [n,1]
            sigmas.push(sigma);
            uncert_cols.push(mean_sq);
        }
        let uncertainties = g.concat_cols(&uncert_cols)?; // [n, n_experts]

        let gate = LinearNodes {
            w: g.param(store, self.gate_w),
            b: g.param(store, self.gate_b),
        };
        let (scores, selected) = gate_route(g, x, &gate, uncertainties, cfg)?;

        // reparameterized latents; epsilon is drawn for every expert in index
        // order so the stream does not depend on the routing outcome
        let eps: Vec<Option<NodeId>> = (0..n_experts)
            .map(|_| {
                if train {
                    let draw: Vec<R> = (0..n * d_z).map(|_| rng.normal()).collect();
                    Some(g.constant(draw, [n, d_z]))
                } else {
                    None
                }
            })
            .collect();

        // experts selected by at least one utterance get full evaluation
        let mut evaluated: Vec<bool> = vec![false; n_experts];
        for sel in &selected {
            for &j in sel {
                evaluated[j] = true;
            }
        }

        let mut mixture: Option<NodeId> = None;
        let mut kl_terms: Vec<NodeId> = Vec::new();
        for (j, e) in self.experts.iter().enumerate() {
            if !evaluated[j] {
                continue;
            }
            let lin = LinearNodes {
                w: g.param(store, e.w_mu),
                b: g.param(store, e.b_mu),
            };
            let mu = nn::linear(g, x, &lin)?;
            if g.data(mu).iter().any(|v| !v.is_finite()) {
                return Err(SureError::NonFinite(format!("expert {j} mean head activations")));
            }
            let latent = sample_latent(g, mu, sigmas[j], eps[j])?;
            kl_terms.push(kl_regularizer(g, &[latent])?);
            let w_j = g.slice_cols(scores, j, 1)?; // [n,1]
            let contrib = g.mul_col(w_j, latent.z)?;
            mixture = Some(match mixture {
                Some(acc) => g.add(acc, contrib)?,
                None => contrib,
            });
        }
        let z = mixture.expect("top-k selects at least one expert");

        let kl = {
            let stacked = g.concat_cols(&kl_terms)?;
            g.mean_all(stacked)
        };

        let routing = extract_routing(g, scores, uncertainties, &selected);
        Ok(MoeOutput { z, routing, kl })
    }
}

/// z = mu + eps .* sigma at train time (eps given), z = mu at eval.
pub fn sample_latent<R: Real>(
    g: &mut Graph<R>,
    mu: NodeId,
    sigma: NodeId,
    eps: Option<NodeId>,
) -> Result<GaussianLatent> {
    let z = match eps {
        Some(e) => {
            let noise = g.mul(e, sigma)?;
            g.add(mu, noise)?
        }
        None => mu,
    };
    Ok(GaussianLatent { mu, sigma, z })
}

/// Routing: penalized logits l' = Linear(x) - lambda_u * mean(sigma^2),
/// softmax, keep the k largest per row, zero the rest.
/// Returns the (masked) score matrix and per-row selected expert indices.
pub fn gate_route<R: Real>(
    g: &mut Graph<R>,
    x: NodeId,
    gate: &LinearNodes,
    uncertainties: NodeId,
    cfg: &MoeConfig,
) -> Result<(NodeId, Vec<Vec<usize>>)> {
    cfg.validate()?;
    let logits = nn::linear(g, x, gate)?;
    if g.shape(logits) != g.shape(uncertainties) {
        return Err(SureError::ShapeMismatch {
            op: "gate_route",
            lhs: g.shape(logits).to_vec(),
            rhs: g.shape(uncertainties).to_vec(),
        });
    }
    let penalty = g.scale(uncertainties, R::from_f64(cfg.lambda_u));
    let penalized = g.sub(logits, penalty)?;
    let scores = g.softmax_rows(penalized)?;

    let [n, n_experts] = g.shape(scores);
    let mut mask = vec![R::zero(); n * n_experts];
    let mut selected = Vec::with_capacity(n);
    for i in 0..n {
        let row = &g.data(scores)[i * n_experts..(i + 1) * n_experts];
        let sel = top_k_indices(row, cfg.k);
        for &j in &sel {
            mask[i * n_experts + j] = R::one();
        }
        selected.push(sel);
    }
    // straight-through: selection is constant, kept scores keep their gradient
    let mask_t = g.constant(mask, [n, n_experts]);
    let mut masked = g.mul(scores, mask_t)?;
    if cfg.renormalize {
        let ones = g.constant(vec![R::one(); n_experts], [n_experts, 1]);
        let rowsum = g.matmul(masked, ones)?;
        let inv = g.recip(rowsum);
        masked = g.mul_col(inv, masked)?;
    }
    Ok((masked, selected))
}

/// Indices of the k largest values; ties broken toward the lower index.
pub fn top_k_indices<R: Real>(row: &[R], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut sel: Vec<usize> = idx.into_iter().take(k).collect();
    sel.sort_unstable();
    sel
}

/// Mean diagonal-Gaussian KL to N(0, I): 0.5 * mean(mu^2 + sigma^2 - log sigma^2 - 1).
pub fn kl_regularizer<R: Real>(g: &mut Graph<R>, latents: &[GaussianLatent]) -> Result<NodeId> {
    let mut terms = Vec::with_capacity(latents.len());
    for lat in latents {
        let mu_sq = g.sq(lat.mu);
        let sig_sq = g.sq(lat.sigma);
        let log_var = g.ln_op(sig_sq);
        let s = g.add(mu_sq, sig_sq)?;
        let s = g.sub(s, log_var)?;
        let s = g.add_scalar(s, R::from_f64(-1.0));
        let m = g.mean_all(s);
        terms.push(g.scale(m, R::from_f64(0.5)));
    }
    let stacked = g.concat_cols(&terms)?;
    Ok(g.mean_all(stacked))
}

fn extract_routing<R: Real>(
    g: &Graph<R>,
    scores: NodeId,
    uncertainties: NodeId,
    selected: &[Vec<usize>],
) -> Vec<RoutingDecision> {
    let [n, n_experts] = g.shape(scores);
    (0..n)
        .map(|i| RoutingDecision {
            gate_scores: g.data(scores)[i * n_experts..(i + 1) * n_experts]
                .iter()
                .map(|&v| Real::to_f64(v))
                .collect(),
            selected: selected[i].clone(),
            uncertainty: g.data(uncertainties)[i * n_experts..(i + 1) * n_experts]
                .iter()
                .map(|&v| Real::to_f64(v))
                .collect(),
        })
        .collect()
}
