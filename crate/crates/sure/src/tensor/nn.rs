//! Composite neural-network operations built from the primitive ops, so
//! their backward passes come from the tape for free.

use super::{Graph, NodeId};
use crate::error::{Result, SureError};
use crate::real::Real;
use crate::rng::PortableRng;

/// Affine map bound into a graph for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LinearNodes {
    pub w: NodeId,
    pub b: NodeId,
}

pub fn linear<R: Real>(g: &mut Graph<R>, x: NodeId, lin: &LinearNodes) -> Result<NodeId> {
    let y = g.matmul(x, lin.w)?;
    g.add_row(y, lin.b)
}

/// LSTM cell parameters bound into a graph; gate order is input, forget,
/// output, candidate.
#[derive(Debug, Clone, Copy)]
pub struct LstmNodes {
    pub wx: [NodeId; 4],
    pub wh: [NodeId; 4],
    pub b: [NodeId; 4],
}

/// Standard LSTM cell: sigmoid input/forget/output gates, tanh candidate.
pub fn lstm_step<R: Real>(
    g: &mut Graph<R>,
    x: NodeId,
    h: NodeId,
    c: NodeId,
    p: &LstmNodes,
) -> Result<(NodeId, NodeId)> {
    let d_h = g.shape(h)[1];
    for k in 0..4 {
        let [win, wout] = g.shape(p.wx[k]);
        if win != g.shape(x)[1] || wout != d_h {
            return Err(SureError::ShapeMismatch {
                op: "lstm_step",
                lhs: g.shape(x).to_vec(),
                rhs: g.shape(p.wx[k]).to_vec(),
            });
        }
    }
    let mut pre = [NodeId(0); 4];
    for k in 0..4 {
        let xw = g.matmul(x, p.wx[k])?;
        let hw = g.matmul(h, p.wh[k])?;
        let s = g.add(xw, hw)?;
        pre[k] = g.add_row(s, p.b[k])?;
    }
    let i = g.sigmoid(pre[0]);
    let f = g.sigmoid(pre[1]);
    let o = g.sigmoid(pre[2]);
    let cand = g.tanh_op(pre[3]);
    let fc = g.mul(f, c)?;
    let ic = g.mul(i, cand)?;
    let c_next = g.add(fc, ic)?;
    let tc = g.tanh_op(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// softmax(QK^T/sqrt(d))·V. Optional boolean mask per (query, key) pair,
/// `true` = attendable; a fully masked query row is rejected.
pub fn scaled_dot_attention<R: Real>(
    g: &mut Graph<R>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    mask: Option<&[bool]>,
) -> Result<(NodeId, NodeId)> {
    let [n_q, d] = g.shape(q);
    let [n_k, dk] = g.shape(k);
    let [n_v, _] = g.shape(v);
    if d != dk {
        return Err(SureError::ShapeMismatch {
            op: "attention q/k",
            lhs: g.shape(q).to_vec(),
            rhs: g.shape(k).to_vec(),
        });
    }
    if n_v != n_k {
        return Err(SureError::ShapeMismatch {
            op: "attention k/v",
            lhs: g.shape(k).to_vec(),
            rhs: g.shape(v).to_vec(),
        });
    }
    let kt = g.transpose(k);
    let logits = g.matmul(q, kt)?;
    let scaled = g.scale(logits, R::from_f64(1.0 / (d as f64).sqrt()));
    let final_logits = match mask {
        Some(m) => {
            if m.len() != n_q * n_k {
                return Err(SureError::InvalidArgument(format!(
                    "attention mask has {} entries, expected {}",
                    m.len(),
                    n_q * n_k
                )));
            }
            for i in 0..n_q {
                if m[i * n_k..(i + 1) * n_k].iter().all(|&keep| !keep) {
                    return Err(SureError::InvalidArgument(format!(
                        "attention query row {i} is fully masked"
                    )));
                }
            }
            let neg = R::from_f64(-1e9);
            let add: Vec<R> = m
                .iter()
                .map(|&keep| if keep { R::zero() } else { neg })
                .collect();
            let mask_t = g.constant(add, [n_q, n_k]);
            g.add(scaled, mask_t)?
        }
        None => scaled,
    };
    let weights = g.softmax_rows(final_logits)?;
    let out = g.matmul(weights, v)?;
    Ok((out, weights))
}

/// Inverted dropout: scales kept entries by 1/(1-p) at train time, identity
/// at eval. The mask is a constant leaf, so the backward pass needs no
/// special rule.
pub fn dropout<R: Real>(
    g: &mut Graph<R>,
    x: NodeId,
    p: f64,
    train: bool,
    rng: &mut PortableRng,
) -> Result<NodeId> {
    if !(0.0..1.0).contains(&p) {
        return Err(SureError::InvalidArgument(format!(
            "dropout rate must be in [0,1), got {p}"
        )));
    }
    if !train || p == 0.0 {
        return Ok(x);
    }
    let [n, c] = g.shape(x);
    let keep_scale = R::from_f64(1.0 / (1.0 - p));
    let mask: Vec<R> = (0..n * c)
        .map(|_| {
            if rng.uniform_f64() < p {
                R::zero()
            } else {
                keep_scale
            }
        })
        .collect();
    let m = g.constant(mask, [n, c]);
    g.mul(x, m)
}

/// softplus(x) + floor, keeping the result strictly positive.
pub fn softplus_floor<R: Real>(g: &mut Graph<R>, x: NodeId, floor: f64) -> NodeId {
    let sp = g.softplus(x);
    g.add_scalar(sp, R::from_f64(floor))
}
