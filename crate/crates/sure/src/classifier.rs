//! Emotion classifier head: concatenate the three fused modality streams,
//! project to label logits, and train with (optionally class-weighted)
//! cross-entropy computed in the log domain.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SureError};
use crate::real::Real;
use crate::rng::PortableRng;
use crate::tensor::nn::{self, LinearNodes};
use crate::tensor::{Graph, NodeId, ParamId, ParamStore};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl ClassifierParams {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        d: usize,
        num_labels: usize,
        rng: &mut PortableRng,
    ) -> Self {
        ClassifierParams {
            w: store.add_weight(format!("{prefix}.w"), [3 * d, num_labels], rng),
            b: store.add_zeros(format!("{prefix}.b"), [1, num_labels]),
        }
    }

    /// Logits for each utterance from the three fused streams, [n, C].
    pub fn logits<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        fused: [NodeId; 3],
    ) -> Result<NodeId> {
        let cat = g.concat_cols(&fused)?;
        let lin = LinearNodes {
            w: g.param(store, self.w),
            b: g.param(store, self.b),
        };
        nn::linear(g, cat, &lin)
    }
}

/// Row-wise argmax with ties broken toward the lowest index.
pub fn predict<R: Real>(g: &Graph<R>, logits: NodeId) -> Vec<usize> {
    let [n, c] = g.shape(logits);
    let data = g.data(logits);
    (0..n)
        .map(|i| {
            let row = &data[i * c..(i + 1) * c];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Mean cross-entropy over utterances, computed via log-softmax. With class
/// weights the per-utterance terms are weighted and the mean is taken over
/// the total weight. Rejects labels out of range and zero total weight.
pub fn cross_entropy_loss<R: Real>(
    g: &mut Graph<R>,
    logits: NodeId,
    labels: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<NodeId> {
    let [n, c] = g.shape(logits);
    if labels.len() != n {
        return Err(SureError::ShapeMismatch {
            op: "cross_entropy",
            lhs: vec![n, c],
            rhs: vec![labels.len()],
        });
    }
    if let Some(w) = class_weights {
        if w.len() != c {
            return Err(SureError::InvalidArgument(format!(
                "{} class weights for {} classes",
                w.len(),
                c
            )));
        }
        if w.iter().any(|&x| x < 0.0) {
            return Err(SureError::InvalidArgument(
                "class weights must be nonnegative".into(),
            ));
        }
    }
    let log_probs = g.log_softmax_rows(logits)?;
    // pick out -log p_{i,y_i} with a weighted selector matrix
    let mut selector = vec![R::zero(); n * c];
    let mut total_weight = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(SureError::InvalidArgument(format!(
                "label {y} out of range for {c} classes"
            )));
        }
        let w = class_weights.map_or(1.0, |cw| cw[y]);
        total_weight += w;
        selector[i * c + y] = R::from_f64(-w);
    }
    if total_weight <= 0.0 {
        return Err(SureError::InvalidArgument(
            "total class weight over the batch is zero".into(),
        ));
    }
    let sel = g.constant(selector, [n, c]);
    let picked = g.mul(sel, log_probs)?;
    let sum = g.sum_all(picked);
    Ok(g.scale(sum, R::from_f64(1.0 / total_weight)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k_loss() {
        let mut g: Graph<f64> = Graph::new();
        let logits = g.constant(vec![0.0; 8], [2, 4]);
        let loss = cross_entropy_loss(&mut g, logits, &[1, 3], None).unwrap();
        assert!((g.scalar(loss) - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_two_class_loss() {
        // logits [1, 0]: p = [e/(e+1), 1/(e+1)]; label 0 -> -ln p0
        let mut g: Graph<f64> = Graph::new();
        let logits = g.constant(vec![1.0, 0.0], [1, 2]);
        let loss = cross_entropy_loss(&mut g, logits, &[0], None).unwrap();
        let p0 = 1.0f64.exp() / (1.0f64.exp() + 1.0);
        assert!((g.scalar(loss) + p0.ln()).abs() < 1e-12);
    }

    #[test]
    fn class_weights_match_manual_weighted_mean() {
        let mut g: Graph<f64> = Graph::new();
        let vals = vec![0.3, -0.2, 1.1, 0.0, 0.5, -0.4];
        let logits = g.constant(vals.clone(), [2, 3]);
        let w = [2.0, 1.0, 0.5];
        let loss = cross_entropy_loss(&mut g, logits, &[0, 2], Some(&w)).unwrap();

        let mut expected = 0.0;
        for (i, &y) in [0usize, 2].iter().enumerate() {
            let row = &vals[i * 3..(i + 1) * 3];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            expected += w[y] * (lse - row[y]);
        }
        expected /= w[0] + w[2];
        assert!((g.scalar(loss) - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_total_weight_rejected() {
        let mut g: Graph<f64> = Graph::new();
        let logits = g.constant(vec![0.0; 3], [1, 3]);
        let w = [0.0, 1.0, 1.0];
        assert!(cross_entropy_loss(&mut g, logits, &[0], Some(&w)).is_err());
    }

    #[test]
    fn out_of_range_label_rejected() {
        let mut g: Graph<f64> = Graph::new();
        let logits = g.constant(vec![0.0; 3], [1, 3]);
        assert!(cross_entropy_loss(&mut g, logits, &[3], None).is_err());
    }

    #[test]
    fn predict_breaks_ties_toward_lowest_index() {
        let mut g: Graph<f64> = Graph::new();
        let logits = g.constant(vec![1.0, 1.0, 0.5, 0.2, 0.9, 0.9], [2, 3]);
        assert_eq!(predict(&g, logits), vec![0, 1]);
    }

    #[test]
    fn classify_shapes_and_gradients() {
        let mut rng = PortableRng::new(11);
        let mut store: ParamStore<f64> = ParamStore::new();
        let clf = ClassifierParams::init(&mut store, "clf", 3, 4, &mut rng);
        let h: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..6).map(|_| rng.normal_f64()).collect())
            .collect();
        let labels = [2usize, 0];

        let forward = |store: &ParamStore<f64>| -> crate::Result<f64> {
            let mut g: Graph<f64> = Graph::new();
            let fused = [
                g.constant(h[0].clone(), [2, 3]),
                g.constant(h[1].clone(), [2, 3]),
                g.constant(h[2].clone(), [2, 3]),
            ];
            let logits = clf.logits(&mut g, store, fused)?;
            let loss = cross_entropy_loss(&mut g, logits, &labels, None)?;
            Ok(g.scalar(loss))
        };
        let mut g: Graph<f64> = Graph::new();
        let fused = [
            g.constant(h[0].clone(), [2, 3]),
            g.constant(h[1].clone(), [2, 3]),
            g.constant(h[2].clone(), [2, 3]),
        ];
        let logits = clf.logits(&mut g, &store, fused).unwrap();
        assert_eq!(g.shape(logits), [2, 4]);
        let loss = cross_entropy_loss(&mut g, logits, &labels, None).unwrap();
        g.backward(loss).unwrap();
        let grads = g.param_grads(&store);
        let err = crate::gradcheck::check_params(&mut store, &grads, 1e-6, forward).unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }
}
