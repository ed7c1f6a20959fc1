//! Primitive differentiable operations. Every op checks its shape contract
//! up front and installs a vector-Jacobian rule for the reverse sweep.

use super::{Graph, NodeId};
use crate::error::{Result, SureError};
use crate::real::Real;

fn matmul_raw<R: Real>(a: &[R], b: &[R], m: usize, k: usize, n: usize) -> Vec<R> {
    let mut out = vec![R::zero(); m * n];
    for i in 0..m {
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == R::zero() {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + ail * brow[j];
            }
        }
    }
    out
}

fn transpose_raw<R: Real>(a: &[R], r: usize, c: usize) -> Vec<R> {
    let mut out = vec![R::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

impl<R: Real> Graph<R> {
    fn require_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(SureError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("add", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(
            data,
            self.shape(a),
            rg,
            Some(Box::new(move |_, grad| {
                vec![(a, grad.to_vec()), (b, grad.to_vec())]
            })),
            None,
        ))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("sub", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x - y)
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(
            data,
            self.shape(a),
            rg,
            Some(Box::new(move |_, grad| {
                vec![
                    (a, grad.to_vec()),
                    (b, grad.iter().map(|&g| -g).collect()),
                ]
            })),
            None,
        ))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("mul", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(
            data,
            self.shape(a),
            rg,
            Some(Box::new(move |g, grad| {
                let da = grad
                    .iter()
                    .zip(g.data(b))
                    .map(|(&gr, &y)| gr * y)
                    .collect();
                let db = grad
                    .iter()
                    .zip(g.data(a))
                    .map(|(&gr, &x)| gr * x)
                    .collect();
                vec![(a, da), (b, db)]
            })),
            None,
        ))
    }

    /// Broadcast-add a row vector `b: [1,c]` onto every row of `x: [n,c]`.
    pub fn add_row(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let [n, c] = self.shape(x);
        if self.shape(b) != [1, c] {
            return Err(SureError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let bias = self.data(b);
        let mut data = self.data(x).to_vec();
        for i in 0..n {
            for j in 0..c {
                data[i * c + j] = data[i * c + j] + bias[j];
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(b);
        Ok(self.push(
            data,
            [n, c],
            rg,
            Some(Box::new(move |_, grad| {
                let mut db = vec![R::zero(); c];
                for i in 0..n {
                    for j in 0..c {
                        db[j] = db[j] + grad[i * c + j];
                    }
                }
                vec![(x, grad.to_vec()), (b, db)]
            })),
            None,
        ))
    }

    pub fn scale(&mut self, x: NodeId, k: R) -> NodeId {
        let data = self.data(x).iter().map(|&v| v * k).collect();
        let rg = self.requires_grad(x);
        self.push(
            data,
            self.shape(x),
            rg,
            Some(Box::new(move |_, grad| {
                vec![(x, grad.iter().map(|&g| g * k).collect())]
            })),
            None,
        )
    }

    pub fn add_scalar(&mut self, x: NodeId, k: R) -> NodeId {
        let data = self.data(x).iter().map(|&v| v + k).collect();
        let rg = self.requires_grad(x);
        self.push(
            data,
            self.shape(x),
            rg,
            Some(Box::new(move |_, grad| vec![(x, grad.to_vec())])),
            None,
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let [m, k] = self.shape(a);
        let [k2, n] = self.shape(b);
        if k != k2 {
            return Err(SureError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = matmul_raw(self.data(a), self.data(b), m, k, n);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(
            data,
            [m, n],
            rg,
            Some(Box::new(move |g, grad| {
                let bt = transpose_raw(g.data(b), k, n);
                let at = transpose_raw(g.data(a), m, k);
                let da = matmul_raw(grad, &bt, m, n, k);
                let db = matmul_raw(&at, grad, k, m, n);
                vec![(a, da), (b, db)]
            })),
            None,
        ))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let [r, c] = self.shape(x);
        let data = transpose_raw(self.data(x), r, c);
        let rg = self.requires_grad(x);
        self.push(
            data,
            [c, r],
            rg,
            Some(Box::new(move |_, grad| {
                vec![(x, transpose_raw(grad, c, r))]
            })),
            None,
        )
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let y: Vec<R> = self
            .data(x)
            .iter()
            .map(|&v| R::one() / (R::one() + (-v).exp()))
            .collect();
        let yc = y.clone();
        let rg = self.requires_grad(x);
        self.push(
            y,
            self.shape(x),
            rg,
            Some(Box::new(move |_, grad| {
                let dx = grad
                    .iter()
                    .zip(&yc)
                    .map(|(&g, &s)| g * s * (R::one() - s))
                    .collect();
                vec![(x, dx)]
            })),
            None,
        )
    }

    pub fn tanh_op(&mut self, x: NodeId) -> NodeId {
        let y: Vec<R> = self.data(x).iter().map(|&v| v.tanh()).collect();
        let yc = y.clone();
        let rg = self.requires_grad(x);
        self.push(
            y,
            self.shape(x),
            rg,
            Some(Box::new(move |_, grad| {
                let dx = grad
                    .iter()
                    .zip(&yc)
                    .map(|(&g, &t)| g * (R::one() - t * t))
                    .collect();
                vec![(x, dx)]
            })),
            None,
        )
    }

    /// Numerically stable ln(1 + e^x); derivative is the sigmoid.
    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let y: Vec<R> = self
            .data(x)
            .iter()
            .map(|&v| {
                if v > R::zero() {
                    v + (-v).exp().ln_1p()
                } else {
                    v.exp().ln_1p()
                }
            })
            .collect();
        let rg = self.requires_grad(x);
        self.push(
            y,
            self.shape(x),
            rg,
            Some(Box::new(move |g, grad| {
                let dx = grad
                    .iter()
                    .zip(g.data(x))
                    .map(|(&gr, &v)| gr * (R::one() / (R::one() + (-v).exp())))
                    .collect();
                vec![(x, dx)]
            })),
            None,
        )
    }

    pub fn sq(&mut self, x: NodeId) -> NodeId {
        let y: Vec<R> = self.data(x).iter().map(|&v| v * v).collect();
        let rg = self.requires_grad(x);
        let two = R::from_f64(2.0);
        self.push(
            y,
            self.shape(x),
            rg,
            Some(Box::new(move |g, grad| {
                let dx = grad
                    .iter()
                    .zip(g.data(x))
                    .map(|(&gr, &v)| gr * two * v)
                    .collect();
                vec![(x, dx)]
            })),
            None,
        )
    }

    /// Natural log; caller guarantees strictly positive input.
    pub fn ln_op(&mut self, x: NodeId) -> NodeId {
        let y: Vec<R> = self.data(x).iter().map(|&v| v.ln()).collect();
        let rg = self.requires_grad(x);
        self.push(
            y,
            self.shape(x),
            rg,
            Some(Box::new(move |g, grad| {
                let dx = grad
                    .iter()
                    .zip(g.data(x))
                    .map(|(&gr, &v)| gr / v)
                    .collect();
                vec![(x, dx)]
            })),
            None,
        )
    }

    /// Row-wise softmax with max subtraction. Rejects non-finite input.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        if self.data(x).iter().any(|v| !v.is_finite()) {
            return Err(SureError::NonFinite("softmax input".into()));
        }
        let [n, c] = self.shape(x);
        let mut y = vec![R::zero(); n * c];
        for i in 0..n {
            let row = &self.data(x)[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(R::neg_infinity(), R::max);
            let mut sum = R::zero();
            for j in 0..c {
                let e = (row[j] - mx).exp();
                y[i * c + j] = e;
                sum = sum + e;
            }
            for j in 0..c {
                y[i * c + j] = y[i * c + j] / sum;
            }
        }
        let yc = y.clone();
        let rg = self.requires_grad(x);
        Ok(self.push(
            y,
            [n, c],
            rg,
            Some(Box::new(move |_, grad| {
                let mut dx = vec![R::zero(); n * c];
                for i in 0..n {
                    let yr = &yc[i * c..(i + 1) * c];
                    let gr = &grad[i * c..(i + 1) * c];
                    let dot = yr
                        .iter()
                        .zip(gr)
                        .fold(R::zero(), |acc, (&p, &g)| acc + p * g);
                    for j in 0..c {
                        dx[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(x, dx)]
            })),
            None,
        ))
    }

    /// Row-wise log-softmax, for log-domain cross entropy.
    pub fn log_softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        if self.data(x).iter().any(|v| !v.is_finite()) {
            return Err(SureError::NonFinite("log_softmax input".into()));
        }
        let [n, c] = self.shape(x);
        let mut y = vec![R::zero(); n * c];
        let mut probs = vec![R::zero(); n * c];
        for i in 0..n {
            let row = &self.data(x)[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(R::neg_infinity(), R::max);
            let mut sum = R::zero();
            for j in 0..c {
                sum = sum + (row[j] - mx).exp();
            }
            let lse = mx + sum.ln();
            for j in 0..c {
                y[i * c + j] = row[j] - lse;
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(
            y,
            [n, c],
            rg,
            Some(Box::new(move |_, grad| {
                let mut dx = vec![R::zero(); n * c];
                for i in 0..n {
                    let gr = &grad[i * c..(i + 1) * c];
                    let rowsum = gr.iter().fold(R::zero(), |acc, &g| acc + g);
                    for j in 0..c {
                        dx[i * c + j] = gr[j] - probs[i * c + j] * rowsum;
                    }
                }
                vec![(x, dx)]
            })),
            None,
        ))
    }

    /// Row-wise normalization (population variance) with affine scale/shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: R) -> Result<NodeId> {
        let [n, c] = self.shape(x);
        for (name, t) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(t) != [1, c] {
                return Err(SureError::InvalidArgument(format!(
                    "layer_norm {name} must have shape [1,{c}], got {:?}",
                    self.shape(t)
                )));
            }
        }
        let mut y = vec![R::zero(); n * c];
        let mut xhat = vec![R::zero(); n * c];
        let mut inv_std = vec![R::zero(); n];
        let cn = R::from_f64(c as f64);
        {
            let xd = self.data(x);
            let gd = self.data(gamma);
            let bd = self.data(beta);
            for i in 0..n {
                let row = &xd[i * c..(i + 1) * c];
                let mean = row.iter().fold(R::zero(), |a, &v| a + v) / cn;
                let var = row
                    .iter()
                    .fold(R::zero(), |a, &v| a + (v - mean) * (v - mean))
                    / cn;
                let istd = R::one() / (var + eps).sqrt();
                inv_std[i] = istd;
                for j in 0..c {
                    let xh = (row[j] - mean) * istd;
                    xhat[i * c + j] = xh;
                    y[i * c + j] = gd[j] * xh + bd[j];
                }
            }
        }
        let rg =
            self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta);
        Ok(self.push(
            y,
            [n, c],
            rg,
            Some(Box::new(move |g, grad| {
                let gd = g.data(gamma);
                let mut dx = vec![R::zero(); n * c];
                let mut dgamma = vec![R::zero(); c];
                let mut dbeta = vec![R::zero(); c];
                for i in 0..n {
                    let gr = &grad[i * c..(i + 1) * c];
                    let xh = &xhat[i * c..(i + 1) * c];
                    // h = gamma .* dY; dx = istd*(h - mean(h) - xhat*mean(h .* xhat))
                    let mut h_mean = R::zero();
                    let mut hx_mean = R::zero();
                    for j in 0..c {
                        let h = gd[j] * gr[j];
                        h_mean = h_mean + h;
                        hx_mean = hx_mean + h * xh[j];
                        dgamma[j] = dgamma[j] + gr[j] * xh[j];
                        dbeta[j] = dbeta[j] + gr[j];
                    }
                    h_mean = h_mean / cn;
                    hx_mean = hx_mean / cn;
                    for j in 0..c {
                        let h = gd[j] * gr[j];
                        dx[i * c + j] = inv_std[i] * (h - h_mean - xh[j] * hx_mean);
                    }
                }
                vec![(x, dx), (gamma, dgamma), (beta, dbeta)]
            })),
            None,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(SureError::InvalidArgument("concat_cols of no parts".into()));
        }
        let n = self.shape(parts[0])[0];
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p)[1]).collect();
        for &p in parts {
            if self.shape(p)[0] != n {
                return Err(SureError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![R::zero(); n * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pd = self.data(p);
            for i in 0..n {
                data[i * total + off..i * total + off + w]
                    .copy_from_slice(&pd[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        let parts = parts.to_vec();
        Ok(self.push(
            data,
            [n, total],
            rg,
            Some(Box::new(move |_, grad| {
                let mut out = Vec::with_capacity(parts.len());
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    let mut dp = vec![R::zero(); n * w];
                    for i in 0..n {
                        dp[i * w..(i + 1) * w]
                            .copy_from_slice(&grad[i * total + off..i * total + off + w]);
                    }
                    out.push((p, dp));
                    off += w;
                }
                out
            })),
            None,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(SureError::InvalidArgument("concat_rows of no parts".into()));
        }
        let c = self.shape(parts[0])[1];
        let heights: Vec<usize> = parts.iter().map(|&p| self.shape(p)[0]).collect();
        for &p in parts {
            if self.shape(p)[1] != c {
                return Err(SureError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = heights.iter().sum();
        let mut data = Vec::with_capacity(total * c);
        for &p in parts {
            data.extend_from_slice(self.data(p));
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        let parts = parts.to_vec();
        Ok(self.push(
            data,
            [total, c],
            rg,
            Some(Box::new(move |_, grad| {
                let mut out = Vec::with_capacity(parts.len());
                let mut off = 0;
                for (&p, &h) in parts.iter().zip(&heights) {
                    out.push((p, grad[off * c..(off + h) * c].to_vec()));
                    off += h;
                }
                out
            })),
            None,
        ))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let [n, c] = self.shape(x);
        if start + len > c {
            return Err(SureError::InvalidArgument(format!(
                "slice_cols {start}..{} out of bounds for width {c}",
                start + len
            )));
        }
        let xd = self.data(x);
        let mut data = vec![R::zero(); n * len];
        for i in 0..n {
            data[i * len..(i + 1) * len].copy_from_slice(&xd[i * c + start..i * c + start + len]);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(
            data,
            [n, len],
            rg,
            Some(Box::new(move |_, grad| {
                let mut dx = vec![R::zero(); n * c];
                for i in 0..n {
                    dx[i * c + start..i * c + start + len]
                        .copy_from_slice(&grad[i * len..(i + 1) * len]);
                }
                vec![(x, dx)]
            })),
            None,
        ))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let [n, c] = self.shape(x);
        if start + len > n {
            return Err(SureError::InvalidArgument(format!(
                "slice_rows {start}..{} out of bounds for height {n}",
                start + len
            )));
        }
        let data = self.data(x)[start * c..(start + len) * c].to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(
            data,
            [len, c],
            rg,
            Some(Box::new(move |_, grad| {
                let mut dx = vec![R::zero(); n * c];
                dx[start * c..(start + len) * c].copy_from_slice(grad);
                vec![(x, dx)]
            })),
            None,
        ))
    }

    /// Single row as a `[1,c]` tensor.
    pub fn row(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        self.slice_rows(x, i, 1)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.data(x).iter().fold(R::zero(), |a, &v| a + v);
        let [n, c] = self.shape(x);
        let rg = self.requires_grad(x);
        self.push(
            vec![s],
            [1, 1],
            rg,
            Some(Box::new(move |_, grad| {
                vec![(x, vec![grad[0]; n * c])]
            })),
            None,
        )
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let [n, c] = self.shape(x);
        let count = R::from_f64((n * c) as f64);
        let s = self.data(x).iter().fold(R::zero(), |a, &v| a + v) / count;
        let rg = self.requires_grad(x);
        self.push(
            vec![s],
            [1, 1],
            rg,
            Some(Box::new(move |_, grad| {
                vec![(x, vec![grad[0] / count; n * c])]
            })),
            None,
        )
    }

    /// Multiply a tensor by a differentiable scalar node.
    pub fn scale_by(&mut self, s: NodeId, x: NodeId) -> Result<NodeId> {
        if self.shape(s) != [1, 1] {
            return Err(SureError::InvalidArgument(format!(
                "scale_by expects a [1,1] scalar, got {:?}",
                self.shape(s)
            )));
        }
        let sv = self.scalar(s);
        let data = self.data(x).iter().map(|&v| v * sv).collect();
        let rg = self.requires_grad(s) || self.requires_grad(x);
        Ok(self.push(
            data,
            self.shape(x),
            rg,
            Some(Box::new(move |g, grad| {
                let ds = g
                    .data(x)
                    .iter()
                    .zip(grad)
                    .fold(R::zero(), |a, (&xv, &gv)| a + xv * gv);
                let sv = g.scalar(s);
                let dx = grad.iter().map(|&gv| gv * sv).collect();
                vec![(s, vec![ds]), (x, dx)]
            })),
            None,
        ))
    }

    /// Elementwise reciprocal; caller guarantees nonzero input.
    pub fn recip(&mut self, x: NodeId) -> NodeId {
        let y: Vec<R> = self.data(x).iter().map(|&v| R::one() / v).collect();
        let yc = y.clone();
        let rg = self.requires_grad(x);
        self.push(
            y,
            self.shape(x),
            rg,
            Some(Box::new(move |_, grad| {
                let dx = grad
                    .iter()
                    .zip(&yc)
                    .map(|(&g, &inv)| -g * inv * inv)
                    .collect();
                vec![(x, dx)]
            })),
            None,
        )
    }

    /// Scale each row i of `x: [n,c]` by `w[i]` where `w: [n,1]`.
    pub fn mul_col(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let [n, c] = self.shape(x);
        if self.shape(w) != [n, 1] {
            return Err(SureError::ShapeMismatch {
                op: "mul_col",
                lhs: self.shape(w).to_vec(),
                rhs: self.shape(x).to_vec(),
            });
        }
        let wd = self.data(w);
        let xd = self.data(x);
        let mut data = vec![R::zero(); n * c];
        for i in 0..n {
            for j in 0..c {
                data[i * c + j] = wd[i] * xd[i * c + j];
            }
        }
        let rg = self.requires_grad(w) || self.requires_grad(x);
        Ok(self.push(
            data,
            [n, c],
            rg,
            Some(Box::new(move |g, grad| {
                let wd = g.data(w);
                let xd = g.data(x);
                let mut dw = vec![R::zero(); n];
                let mut dx = vec![R::zero(); n * c];
                for i in 0..n {
                    for j in 0..c {
                        dw[i] = dw[i] + xd[i * c + j] * grad[i * c + j];
                        dx[i * c + j] = wd[i] * grad[i * c + j];
                    }
                }
                vec![(w, dw), (x, dx)]
            })),
            None,
        ))
    }
}
