//! Central finite-difference verification of reverse-mode gradients.
//!
//! Used by the `check` subcommand and the test suites. The forward closure
//! must be a deterministic function of the leaf values (reseed any internal
//! randomness per call).

use crate::error::Result;
use crate::tensor::{Graph, NodeId, ParamStore};

/// Compare tape gradients against central differences for a loss built from
/// explicit leaves. Returns max(|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-2));
/// the floor keeps finite-difference roundoff on numerically-zero
/// coordinates from registering as error.
pub fn check_leaves<F>(inputs: &[(Vec<f64>, [usize; 2])], step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Vec<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values
            .iter()
            .zip(inputs)
            .map(|(v, (_, shape))| g.leaf(v.clone(), *shape))
            .collect();
        let loss = f(&mut g, &ids)?;
        Ok(g.scalar(loss))
    };

    // analytic gradients
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|(v, shape)| g.leaf(v.clone(), *shape))
        .collect();
    let loss = f(&mut g, &ids)?;
    g.backward(loss)?;
    let grads: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            g.grad(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.data(id).len()])
        })
        .collect();

    let mut values: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    let mut max_rel = 0.0f64;
    for i in 0..values.len() {
        for j in 0..values[i].len() {
            let orig = values[i][j];
            values[i][j] = orig + step;
            let up = eval(&values)?;
            values[i][j] = orig - step;
            let down = eval(&values)?;
            values[i][j] = orig;
            let fd = (up - down) / (2.0 * step);
            let ad = grads[i][j];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-2);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

/// Same comparison, but for every coordinate of every parameter in a store.
/// `loss` evaluates the forward deterministically; `grads` are the tape
/// gradients already computed for the unperturbed store.
pub fn check_params<F>(
    store: &mut ParamStore<f64>,
    grads: &[Option<Vec<f64>>],
    step: f64,
    mut loss: F,
) -> Result<f64>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    let mut max_rel = 0.0f64;
    for pi in 0..store.len() {
        let n = store.get(crate::tensor::ParamId(pi)).data.len();
        for j in 0..n {
            let pid = crate::tensor::ParamId(pi);
            let orig = store.get(pid).data[j];
            store.get_mut(pid).data[j] = orig + step;
            let up = loss(store)?;
            store.get_mut(pid).data[j] = orig - step;
            let down = loss(store)?;
            store.get_mut(pid).data[j] = orig;
            let fd = (up - down) / (2.0 * step);
            let ad = grads[pi].as_ref().map_or(0.0, |g| g[j]);
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-2);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
