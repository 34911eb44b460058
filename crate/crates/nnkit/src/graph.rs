//! Define-by-run tape for reverse-mode automatic differentiation.
//!
//! A [`Graph`] records one forward pass; [`Graph::backward`] then visits the
//! recorded ops in exact reverse order of creation (a valid reverse
//! topological order, since an op can only consume already-created values)
//! and accumulates gradients. Leaf nodes keep their gradients after the
//! sweep; interior activations are freed as soon as they have been consumed.
//!
//! Custom operations (e.g. quantized layers) attach through
//! [`Graph::push_op`] with their own backward closure.

use crate::conv::{self, ConvGeometry, Padding};
use crate::error::NnError;
use crate::linalg;
use crate::scalar::Scalar;
use crate::tensor::{channel_of, Tensor};

/// Handle to a value recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(pub(crate) usize);

impl ValueId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Forward/eval switch for ops with distinct statistics behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Gradient of parents given the gradient of the node output and the parent
/// values (same order as the parents vector).
pub type BackwardFn<E> = Box<dyn Fn(&Tensor<E>, &[&Tensor<E>]) -> Vec<Tensor<E>>>;

struct Node<E: Scalar> {
    value: Tensor<E>,
    parents: Vec<ValueId>,
    backward: Option<BackwardFn<E>>,
}

/// Batch-normalization running statistics, owned by the caller across steps.
#[derive(Debug, Clone)]
pub struct BnState<E: Scalar> {
    pub running_mean: Vec<E>,
    pub running_var: Vec<E>,
    /// Decay applied to the running value on each training batch.
    pub momentum: E,
}

impl<E: Scalar> BnState<E> {
    pub fn new(channels: usize) -> Self {
        BnState {
            running_mean: vec![E::zero(); channels],
            running_var: vec![E::one(); channels],
            momentum: E::from_f64(0.9),
        }
    }
}

const BN_EPS: f64 = 1e-5;

pub struct Graph<E: Scalar> {
    nodes: Vec<Node<E>>,
}

impl<E: Scalar> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Record an input value (parameter or data). Leaves keep their gradient
    /// after `backward`.
    pub fn leaf(&mut self, value: Tensor<E>) -> ValueId {
        self.push_node(value, vec![], None)
    }

    /// Record a custom op. `backward` receives the output gradient and the
    /// parent values and must return one gradient per parent.
    pub fn push_op(
        &mut self,
        parents: Vec<ValueId>,
        value: Tensor<E>,
        backward: BackwardFn<E>,
    ) -> ValueId {
        self.push_node(value, parents, Some(backward))
    }

    fn push_node(
        &mut self,
        value: Tensor<E>,
        parents: Vec<ValueId>,
        backward: Option<BackwardFn<E>>,
    ) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node {
            value,
            parents,
            backward,
        });
        id
    }

    pub fn value(&self, id: ValueId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---- primitive ops -------------------------------------------------

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, NnError> {
        let out = linalg::matmul(self.value(a), self.value(b))?;
        Ok(self.push_op(
            vec![a, b],
            out,
            Box::new(|g, parents| {
                let (av, bv) = (parents[0], parents[1]);
                let ga = linalg::matmul_nt(g, bv).expect("matmul grad lhs");
                let gb = linalg::matmul_tn(av, g).expect("matmul grad rhs");
                vec![ga, gb]
            }),
        ))
    }

    /// `x (m×n) + bias (n)` broadcast over rows.
    pub fn bias_add(&mut self, x: ValueId, bias: ValueId) -> Result<ValueId, NnError> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let (m, n) = match xv.shape() {
            [m, n] => (*m, *n),
            other => {
                return Err(NnError::RankMismatch {
                    op: "bias_add",
                    expected: 2,
                    got: other.to_vec(),
                })
            }
        };
        if bv.shape() != [n] {
            return Err(NnError::ShapeMismatch {
                op: "bias_add",
                expected: format!("[{n}]"),
                got: format!("{:?}", bv.shape()),
            });
        }
        let mut out = xv.clone();
        for r in 0..m {
            for c in 0..n {
                out.data_mut()[r * n + c] += bv.data()[c];
            }
        }
        Ok(self.push_op(
            vec![x, bias],
            out,
            Box::new(move |g, _| {
                let mut gb = vec![E::zero(); n];
                for (i, &v) in g.data().iter().enumerate() {
                    gb[i % n] += v;
                }
                vec![g.clone(), Tensor::from_vec(&[n], gb).expect("bias grad")]
            }),
        ))
    }

    pub fn conv2d(
        &mut self,
        x: ValueId,
        kernel: ValueId,
        stride: usize,
        padding: Padding,
    ) -> Result<ValueId, NnError> {
        let geo = ConvGeometry::resolve(self.value(x), self.value(kernel), stride, padding)?;
        let out = conv::conv2d(self.value(x), self.value(kernel), stride, padding)?;
        Ok(self.push_op(
            vec![x, kernel],
            out,
            Box::new(move |g, parents| {
                let gx = conv::conv2d_grad_input(g, parents[1], &geo).expect("conv grad input");
                let gk = conv::conv2d_grad_kernel(parents[0], g, &geo).expect("conv grad kernel");
                vec![gx, gk]
            }),
        ))
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let out = self.value(x).map(|v| if v > E::zero() { v } else { E::zero() });
        self.push_op(
            vec![x],
            out,
            Box::new(|g, parents| {
                vec![g
                    .zip_map(parents[0], |gv, xv| if xv > E::zero() { gv } else { E::zero() })
                    .expect("relu grad")]
            }),
        )
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, NnError> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push_op(
            vec![a, b],
            out,
            Box::new(|g, _| vec![g.clone(), g.clone()]),
        ))
    }

    pub fn max_pool(
        &mut self,
        x: ValueId,
        window: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<ValueId, NnError> {
        let (out, argmax) = conv::max_pool(self.value(x), window, stride, padding)?;
        let in_shape = self.value(x).shape().to_vec();
        Ok(self.push_op(
            vec![x],
            out,
            Box::new(move |g, _| {
                let mut gx = Tensor::zeros(&in_shape);
                for (i, &src) in argmax.iter().enumerate() {
                    if src != u32::MAX {
                        gx.data_mut()[src as usize] += g.data()[i];
                    }
                }
                vec![gx]
            }),
        ))
    }

    pub fn global_avg_pool(&mut self, x: ValueId) -> Result<ValueId, NnError> {
        let out = conv::global_avg_pool(self.value(x))?;
        let in_shape = self.value(x).shape().to_vec();
        Ok(self.push_op(
            vec![x],
            out,
            Box::new(move |g, _| {
                let (n, h, w, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
                let inv = E::one() / E::from_f64((h * w) as f64);
                let mut gx = Tensor::zeros(&in_shape);
                for ni in 0..n {
                    for i in 0..h * w * c {
                        gx.data_mut()[ni * h * w * c + i] =
                            g.data()[ni * c + channel_of(i, 1, c)] * inv;
                    }
                }
                vec![gx]
            }),
        ))
    }

    /// Channel-wise batch normalization over an NHWC tensor. In `Train` mode
    /// batch statistics are used and `state` running statistics are updated
    /// in place; in `Eval` mode the running statistics are used. The
    /// normalization arithmetic always runs in full precision.
    pub fn batch_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        state: &mut BnState<E>,
        mode: Mode,
    ) -> Result<ValueId, NnError> {
        let xv = self.value(x);
        let (n, h, w, c) = match xv.shape() {
            [n, h, w, c] => (*n, *h, *w, *c),
            other => {
                return Err(NnError::RankMismatch {
                    op: "batch_norm",
                    expected: 4,
                    got: other.to_vec(),
                })
            }
        };
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            if self.value(id).shape() != [c] {
                return Err(NnError::ShapeMismatch {
                    op: "batch_norm",
                    expected: format!("{name} of shape [{c}]"),
                    got: format!("{:?}", self.value(id).shape()),
                });
            }
        }
        if state.running_mean.len() != c {
            return Err(NnError::ShapeMismatch {
                op: "batch_norm",
                expected: format!("state with {c} channels"),
                got: format!("{}", state.running_mean.len()),
            });
        }
        if mode == Mode::Train && n < 2 {
            return Err(NnError::BatchTooSmall { got: n });
        }

        let eps = E::from_f64(BN_EPS);
        let count = E::from_f64((n * h * w) as f64);
        let xd = self.value(x).data();

        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![E::zero(); c];
                for (i, &v) in xd.iter().enumerate() {
                    mean[i % c] += v;
                }
                for m in &mut mean {
                    *m /= count;
                }
                let mut var = vec![E::zero(); c];
                for (i, &v) in xd.iter().enumerate() {
                    let d = v - mean[i % c];
                    var[i % c] += d * d;
                }
                for v in &mut var {
                    *v /= count;
                }
                let keep = state.momentum;
                let blend = E::one() - keep;
                for ch in 0..c {
                    state.running_mean[ch] = keep * state.running_mean[ch] + blend * mean[ch];
                    state.running_var[ch] = keep * state.running_var[ch] + blend * var[ch];
                }
                (mean, var)
            }
            Mode::Eval => (state.running_mean.clone(), state.running_var.clone()),
        };

        let invstd: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![E::zero(); xd.len()];
        let mut out = vec![E::zero(); xd.len()];
        for (i, &v) in xd.iter().enumerate() {
            let ch = i % c;
            let xh = (v - mean[ch]) * invstd[ch];
            xhat[i] = xh;
            out[i] = gv[ch] * xh + bv[ch];
        }
        let out = Tensor::from_vec(&[n, h, w, c], out)?;

        let backward: BackwardFn<E> = match mode {
            Mode::Train => {
                let invstd_c = invstd.clone();
                let xhat_c = xhat;
                Box::new(move |g, parents| {
                    let gammav = parents[1].data();
                    let gd = g.data();
                    let m = count;
                    let mut dbeta = vec![E::zero(); c];
                    let mut dgamma = vec![E::zero(); c];
                    for (i, &gi) in gd.iter().enumerate() {
                        let ch = i % c;
                        dbeta[ch] += gi;
                        dgamma[ch] += gi * xhat_c[i];
                    }
                    // dxhat = g * gamma; dx = invstd/m * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
                    let mut sum_dxhat = vec![E::zero(); c];
                    let mut sum_dxhat_xhat = vec![E::zero(); c];
                    for (i, &gi) in gd.iter().enumerate() {
                        let ch = i % c;
                        let dxh = gi * gammav[ch];
                        sum_dxhat[ch] += dxh;
                        sum_dxhat_xhat[ch] += dxh * xhat_c[i];
                    }
                    let mut dx = vec![E::zero(); gd.len()];
                    for (i, &gi) in gd.iter().enumerate() {
                        let ch = i % c;
                        let dxh = gi * gammav[ch];
                        dx[i] = invstd_c[ch] / m
                            * (m * dxh - sum_dxhat[ch] - xhat_c[i] * sum_dxhat_xhat[ch]);
                    }
                    vec![
                        Tensor::from_vec(&[n, h, w, c], dx).expect("bn dx"),
                        Tensor::from_vec(&[c], dgamma).expect("bn dgamma"),
                        Tensor::from_vec(&[c], dbeta).expect("bn dbeta"),
                    ]
                })
            }
            Mode::Eval => {
                let invstd_c = invstd.clone();
                let xhat_c = xhat;
                Box::new(move |g, parents| {
                    let gammav = parents[1].data();
                    let gd = g.data();
                    let mut dbeta = vec![E::zero(); c];
                    let mut dgamma = vec![E::zero(); c];
                    let mut dx = vec![E::zero(); gd.len()];
                    for (i, &gi) in gd.iter().enumerate() {
                        let ch = i % c;
                        dbeta[ch] += gi;
                        dgamma[ch] += gi * xhat_c[i];
                        dx[i] = gi * gammav[ch] * invstd_c[ch];
                    }
                    vec![
                        Tensor::from_vec(&[n, h, w, c], dx).expect("bn dx"),
                        Tensor::from_vec(&[c], dgamma).expect("bn dgamma"),
                        Tensor::from_vec(&[c], dbeta).expect("bn dbeta"),
                    ]
                })
            }
        };
        Ok(self.push_op(vec![x, gamma, beta], out, backward))
    }

    /// Mean cross-entropy between `logits` (`[N, K]`) and integer class
    /// labels, stabilized by row-max subtraction. Returns a scalar node.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: ValueId,
        labels: &[usize],
    ) -> Result<ValueId, NnError> {
        let lv = self.value(logits);
        let (n, k) = match lv.shape() {
            [n, k] => (*n, *k),
            other => {
                return Err(NnError::RankMismatch {
                    op: "softmax_cross_entropy",
                    expected: 2,
                    got: other.to_vec(),
                })
            }
        };
        if labels.len() != n {
            return Err(NnError::ShapeMismatch {
                op: "softmax_cross_entropy",
                expected: format!("{n} labels"),
                got: format!("{}", labels.len()),
            });
        }
        for &l in labels {
            if l >= k {
                return Err(NnError::LabelOutOfRange {
                    label: l,
                    classes: k,
                });
            }
        }
        let ld = lv.data();
        let mut probs = vec![E::zero(); n * k];
        let mut loss = E::zero();
        for r in 0..n {
            let row = &ld[r * k..(r + 1) * k];
            let max = row.iter().cloned().fold(E::neg_infinity(), E::max);
            let mut denom = E::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[r * k + j] = e;
                denom += e;
            }
            for j in 0..k {
                probs[r * k + j] /= denom;
            }
            loss += denom.ln() - (row[labels[r]] - max);
        }
        loss /= E::from_f64(n as f64);

        let labels_c = labels.to_vec();
        Ok(self.push_op(
            vec![logits],
            Tensor::scalar(loss),
            Box::new(move |g, _| {
                let scale = g.item() / E::from_f64(n as f64);
                let mut dl = probs.clone();
                for (r, &lab) in labels_c.iter().enumerate() {
                    dl[r * k + lab] -= E::one();
                }
                for v in &mut dl {
                    *v *= scale;
                }
                vec![Tensor::from_vec(&[n, k], dl).expect("ce grad")]
            }),
        ))
    }

    // ---- backward sweep -------------------------------------------------

    /// Reverse sweep from a scalar loss. Gradients of leaf nodes are kept;
    /// interior gradients are freed once consumed.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<E>, NnError> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(NnError::NonScalarLoss {
                got: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), E::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Some(back) = &node.backward {
                let parent_vals: Vec<&Tensor<E>> =
                    node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let contributions = back(&g, &parent_vals);
                debug_assert_eq!(contributions.len(), node.parents.len());
                for (pid, contrib) in node.parents.iter().zip(contributions) {
                    match &mut grads[pid.0] {
                        Some(acc) => acc.add_assign(&contrib),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            } else {
                // leaf: keep its gradient for the caller
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of a backward sweep; holds leaf gradients indexed by [`ValueId`].
pub struct Gradients<E: Scalar> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Scalar> Gradients<E> {
    pub fn get(&self, id: ValueId) -> Option<&Tensor<E>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: ValueId) -> Option<Tensor<E>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Row-wise argmax of a `[N, K]` tensor.
pub fn argmax_rows<E: Scalar>(t: &Tensor<E>) -> Vec<usize> {
    let k = t.shape()[t.shape().len() - 1];
    t.data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
