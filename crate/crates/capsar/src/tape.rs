//! Recorded-tape reverse-mode differentiation.
//!
//! The model graph is static, so a small closed op vocabulary is enough:
//! each builder method runs the forward computation immediately, stores the
//! result as a node, and records which op produced it. [`GradTape::backward`]
//! replays the op list in reverse, accumulating hand-written adjoints into
//! per-node gradient buffers. There is no graph pruning and no
//! broadcasting — every op states its exact shapes and the builders reject
//! anything else up front, so the backward pass can assume shapes are valid.
//!
//! Values are generic over [`Element`]: training runs the tape in `f32`,
//! gradient checking re-runs the identical code in `f64`.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

/// One recorded operation. Fields are the input/output node ids plus
/// whatever forward-pass state the adjoint needs (gate activations,
/// dropout masks); constants captured by value are not differentiated.
enum Op<E: Element> {
    /// out[t, :] = table[idx[t], :]
    Gather {
        table: ValueId,
        idx: Vec<usize>,
        out: ValueId,
    },
    /// out = x[t, :]
    Row { x: ValueId, t: usize, out: ValueId },
    /// out = [a; b] (vector concatenation)
    ConcatPair {
        a: ValueId,
        b: ValueId,
        out: ValueId,
    },
    /// out: [t_max, d]; row t is rows[t] for t < rows.len(), zero after
    StackRows { rows: Vec<ValueId>, out: ValueId },
    /// out = x ⊙ mask, mask a captured constant of equal length
    MulConst {
        x: ValueId,
        mask: Vec<E>,
        out: ValueId,
    },
    /// out = A @ B with A: [m, k], B: [k, n]
    Matmul {
        a: ValueId,
        b: ValueId,
        out: ValueId,
    },
    /// Same-padded 1-D convolution over rows of x: [t, cin],
    /// filters w: [k, cin, cout], bias: [cout]
    Conv1dSame {
        x: ValueId,
        w: ValueId,
        b: ValueId,
        out: ValueId,
    },
    /// One GRU cell update. z/r/n are the forward gate activations,
    /// saved because every term of the adjoint needs them.
    GruStep {
        x: ValueId,
        h_prev: ValueId,
        wz: ValueId,
        uz: ValueId,
        bz: ValueId,
        wr: ValueId,
        ur: ValueId,
        br: ValueId,
        wh: ValueId,
        uh: ValueId,
        bh: ValueId,
        z: Vec<E>,
        r: Vec<E>,
        n: Vec<E>,
        out: ValueId,
    },
    /// Row-wise squash over the last axis.
    Squash { x: ValueId, out: ValueId },
    /// Row-wise softmax with max subtraction.
    SoftmaxRows { x: ValueId, out: ValueId },
    /// p̂_{j|i} = W_j · p_i: w [n, d_out, d_in] × p [m, d_in] → [n, m, d_out]
    CapsPredict {
        w: ValueId,
        p: ValueId,
        out: ValueId,
    },
    /// q̃_j = Σ_i c_ij p̂_{j|i}: c [m, n] × p_hat [n, m, d] → [n, d]
    RouteCombine {
        c: ValueId,
        p_hat: ValueId,
        out: ValueId,
    },
    /// out[i, j] = b_in[i, j] + q_j · p̂_{j|i}
    RouteAgreement {
        b_in: ValueId,
        q: ValueId,
        p_hat: ValueId,
        out: ValueId,
    },
    /// out[i] = ‖x[i, :]‖₂
    RowNorms { x: ValueId, out: ValueId },
    /// out = x · w + b with x: [n], w: [n, m], b: [m]
    Linear {
        x: ValueId,
        w: ValueId,
        b: ValueId,
        out: ValueId,
    },
    /// Same data, new shape.
    Reshape { x: ValueId, out: ValueId },
    /// out = a·x + c elementwise, a and c captured constants
    AffineScalar {
        x: ValueId,
        a: E,
        out: ValueId,
    },
    /// out = max(0, x) elementwise
    Relu { x: ValueId, out: ValueId },
    /// out = x² elementwise
    Square { x: ValueId, out: ValueId },
    /// out = Σ_i x_i v_i (scalar), v a captured constant
    DotConst {
        x: ValueId,
        v: Vec<E>,
        out: ValueId,
    },
    /// out = (v · x) / ‖x‖ (scalar), v a captured constant;
    /// ‖x‖ below the guard → 0 with zero gradient
    NormalizedDotConst {
        x: ValueId,
        v: Vec<E>,
        out: ValueId,
    },
    /// out = a + b, same shape
    Add {
        a: ValueId,
        b: ValueId,
        out: ValueId,
    },
    /// out = k·x, k a captured constant
    Scale { x: ValueId, k: E, out: ValueId },
}

/// Norm below which normalized quantities (squash direction, reconstruction
/// unit vector, row-norm gradient) are treated as exactly zero.
pub const NORM_GUARD: f64 = 1e-12;

pub struct GradTape<E: Element> {
    nodes: Vec<Tensor<E>>,
    ops: Vec<Op<E>>,
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Element> Default for GradTape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> GradTape<E> {
    pub fn new() -> Self {
        GradTape {
            nodes: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// Registers an input value (parameter or constant). Gradients
    /// accumulate for every leaf; callers read out the ones they care about.
    pub fn leaf(&mut self, value: Tensor<E>) -> ValueId {
        self.nodes.push(value);
        ValueId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: ValueId) -> &Tensor<E> {
        &self.nodes[id.0]
    }

    /// Gradient buffer for `id` after [`backward`](Self::backward); `None`
    /// if the loss does not depend on it.
    pub fn grad(&self, id: ValueId) -> Option<&[E]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like the value, zeros where untouched.
    pub fn grad_or_zeros(&self, id: ValueId) -> Tensor<E> {
        let shape = self.nodes[id.0].shape().to_vec();
        match self.grad(id) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient buffer matches value"),
            None => Tensor::zeros(shape),
        }
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<E>) -> Result<ValueId> {
        let t = Tensor::new(shape, data).map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("{op_name}: {msg}")),
            other => other,
        })?;
        self.nodes.push(t);
        Ok(ValueId(self.nodes.len() - 1))
    }

    fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    // ── Lookup and layout ops ───────────────────────────────────────────

    /// Embedding lookup: rows of `table` selected by `idx`.
    pub fn gather(&mut self, table: ValueId, idx: &[usize]) -> Result<ValueId> {
        let tab = &self.nodes[table.0];
        if tab.shape().len() != 2 {
            return Err(Self::shape_err("gather", tab.shape(), &[idx.len()]));
        }
        let (v, d) = (tab.shape()[0], tab.shape()[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
            return Err(Error::Contract(format!(
                "gather: index {bad} out of range for table with {v} rows"
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&tab.data()[i * d..(i + 1) * d]);
        }
        let out = self.push("gather", vec![idx.len(), d], data)?;
        self.ops.push(Op::Gather {
            table,
            idx: idx.to_vec(),
            out,
        });
        Ok(out)
    }

    /// Extracts row `t` of a matrix as a vector.
    pub fn row(&mut self, x: ValueId, t: usize) -> Result<ValueId> {
        let xt = &self.nodes[x.0];
        if xt.shape().len() != 2 || t >= xt.shape()[0] {
            return Err(Self::shape_err("row", xt.shape(), &[t]));
        }
        let d = xt.shape()[1];
        let data = xt.data()[t * d..(t + 1) * d].to_vec();
        let out = self.push("row", vec![d], data)?;
        self.ops.push(Op::Row { x, t, out });
        Ok(out)
    }

    /// Concatenates two vectors.
    pub fn concat_pair(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if ta.shape().len() != 1 || tb.shape().len() != 1 {
            return Err(Self::shape_err("concat_pair", ta.shape(), tb.shape()));
        }
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let n = data.len();
        let out = self.push("concat_pair", vec![n], data)?;
        self.ops.push(Op::ConcatPair { a, b, out });
        Ok(out)
    }

    /// Stacks equal-length vectors into the first rows of a `[t_max, d]`
    /// matrix; rows past `rows.len()` stay zero.
    pub fn stack_rows(&mut self, rows: &[ValueId], t_max: usize) -> Result<ValueId> {
        if rows.is_empty() {
            return Err(Error::Contract("stack_rows: no rows given".into()));
        }
        if rows.len() > t_max {
            return Err(Error::Contract(format!(
                "stack_rows: {} rows exceed t_max {t_max}",
                rows.len()
            )));
        }
        let d = self.nodes[rows[0].0].len();
        for &r in rows {
            let rt = &self.nodes[r.0];
            if rt.shape().len() != 1 || rt.len() != d {
                return Err(Self::shape_err("stack_rows", &[d], rt.shape()));
            }
        }
        let mut data = vec![E::zero(); t_max * d];
        for (t, &r) in rows.iter().enumerate() {
            data[t * d..(t + 1) * d].copy_from_slice(self.nodes[r.0].data());
        }
        let out = self.push("stack_rows", vec![t_max, d], data)?;
        self.ops.push(Op::StackRows {
            rows: rows.to_vec(),
            out,
        });
        Ok(out)
    }

    /// Elementwise product with a constant mask of identical length.
    pub fn mul_const(&mut self, x: ValueId, mask: &[E]) -> Result<ValueId> {
        let xt = &self.nodes[x.0];
        if xt.len() != mask.len() {
            return Err(Self::shape_err("mul_const", xt.shape(), &[mask.len()]));
        }
        let data: Vec<E> = xt.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
        let shape = xt.shape().to_vec();
        let out = self.push("mul_const", shape, data)?;
        self.ops.push(Op::MulConst {
            x,
            mask: mask.to_vec(),
            out,
        });
        Ok(out)
    }

    /// Inverted dropout: zero with probability `rate`, survivors scaled by
    /// 1/(1−rate). Draws one uniform per element in flat order. Outside
    /// training (or at rate 0) it is the identity and consumes no draws.
    pub fn dropout(
        &mut self,
        x: ValueId,
        rate: f64,
        rng: &mut Rng,
        training: bool,
    ) -> Result<ValueId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = E::of(1.0 / (1.0 - rate));
        let mask: Vec<E> = (0..self.nodes[x.0].len())
            .map(|_| {
                if rng.next_f64() < rate {
                    E::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        self.mul_const(x, &mask)
    }

    // ── Dense linear algebra ────────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Self::shape_err("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = vec![E::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let aik = ta.data()[i * k + p];
                let brow = &tb.data()[p * n..(p + 1) * n];
                let orow = &mut data[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
        let out = self.push("matmul", vec![m, n], data)?;
        self.ops.push(Op::Matmul { a, b, out });
        Ok(out)
    }

    /// Same-padded 1-D convolution along the sequence axis.
    /// `x`: [t, cin], `w`: [k, cin, cout] with odd k, `b`: [cout].
    pub fn conv1d_same(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let (tx, tw, tb) = (&self.nodes[x.0], &self.nodes[w.0], &self.nodes[b.0]);
        if tx.shape().len() != 2 || tw.shape().len() != 3 {
            return Err(Self::shape_err("conv1d_same", tx.shape(), tw.shape()));
        }
        let (t_len, cin) = (tx.shape()[0], tx.shape()[1]);
        let (k, wcin, cout) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        if wcin != cin {
            return Err(Self::shape_err("conv1d_same", tx.shape(), tw.shape()));
        }
        if tb.shape() != [cout] {
            return Err(Self::shape_err("conv1d_same", tw.shape(), tb.shape()));
        }
        if k % 2 == 0 {
            return Err(Error::Config(format!(
                "conv1d_same requires an odd kernel width for symmetric padding, got {k}"
            )));
        }
        let half = k / 2;
        let mut data = vec![E::zero(); t_len * cout];
        for t in 0..t_len {
            let orow = &mut data[t * cout..(t + 1) * cout];
            orow.copy_from_slice(tb.data());
            for kk in 0..k {
                let s = t + kk;
                if s < half || s - half >= t_len {
                    continue;
                }
                let s = s - half;
                for ci in 0..cin
                {
                    let xv = tx.data()[s * cin + ci];
                    let wrow = &tw.data()[(kk * cin + ci) * cout..(kk * cin + ci + 1) * cout];
                    for (o, &wv) in orow.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let out = self.push("conv1d_same", vec![t_len, cout], data)?;
        self.ops.push(Op::Conv1dSame { x, w, b, out });
        Ok(out)
    }

    /// One GRU cell update:
    ///
    ///   z = sigmoid(x·Wz + h·Uz + bz)
    ///   r = sigmoid(x·Wr + h·Ur + br)
    ///   n = tanh(x·Wh + (r ⊙ h)·Uh + bh)
    ///   h' = z ⊙ h + (1 − z) ⊙ n
    ///
    /// so a saturated update gate (z → 1) carries state through unchanged
    /// and all-zero inputs/weights give z = ½, n = 0, h' = 0.
    /// `x`: [d_in], `h_prev`: [d_h], W*: [d_in, d_h], U*: [d_h, d_h], b*: [d_h].
    #[allow(clippy::too_many_arguments)]
    pub fn gru_step(
        &mut self,
        x: ValueId,
        h_prev: ValueId,
        wz: ValueId,
        uz: ValueId,
        bz: ValueId,
        wr: ValueId,
        ur: ValueId,
        br: ValueId,
        wh: ValueId,
        uh: ValueId,
        bh: ValueId,
    ) -> Result<ValueId> {
        let d_in = self.nodes[x.0].len();
        let d_h = self.nodes[h_prev.0].len();
        for (name, id, want) in [
            ("Wz", wz, [d_in, d_h]),
            ("Wr", wr, [d_in, d_h]),
            ("Wh", wh, [d_in, d_h]),
            ("Uz", uz, [d_h, d_h]),
            ("Ur", ur, [d_h, d_h]),
            ("Uh", uh, [d_h, d_h]),
        ] {
            if self.nodes[id.0].shape() != want {
                let _ = name;
                return Err(Self::shape_err("gru_step", self.nodes[id.0].shape(), &want));
            }
        }
        for id in [bz, br, bh] {
            if self.nodes[id.0].shape() != [d_h] {
                return Err(Self::shape_err("gru_step", self.nodes[id.0].shape(), &[d_h]));
            }
        }

        let xv = self.nodes[x.0].data();
        let hv = self.nodes[h_prev.0].data();
        let gate = |w: &Tensor<E>, u: &Tensor<E>, b: &Tensor<E>| -> Vec<E> {
            let mut a = b.data().to_vec();
            for (i, &xi) in xv.iter().enumerate() {
                for (j, aj) in a.iter_mut().enumerate() {
                    *aj += xi * w.data()[i * d_h + j];
                }
            }
            for (i, &hi) in hv.iter().enumerate() {
                for (j, aj) in a.iter_mut().enumerate() {
                    *aj += hi * u.data()[i * d_h + j];
                }
            }
            a
        };

        let az = gate(&self.nodes[wz.0], &self.nodes[uz.0], &self.nodes[bz.0]);
        let ar = gate(&self.nodes[wr.0], &self.nodes[ur.0], &self.nodes[br.0]);
        let z: Vec<E> = az.into_iter().map(sigmoid).collect();
        let r: Vec<E> = ar.into_iter().map(sigmoid).collect();

        // Candidate uses the reset-gated previous state.
        let mut an = self.nodes[bh.0].data().to_vec();
        for (i, &xi) in xv.iter().enumerate() {
            for (j, aj) in an.iter_mut().enumerate() {
                *aj += xi * self.nodes[wh.0].data()[i * d_h + j];
            }
        }
        for i in 0..d_h {
            let rh = r[i] * hv[i];
            for (j, aj) in an.iter_mut().enumerate() {
                *aj += rh * self.nodes[uh.0].data()[i * d_h + j];
            }
        }
        let n: Vec<E> = an.into_iter().map(|a| a.tanh()).collect();

        let h_new: Vec<E> = (0..d_h)
            .map(|j| z[j] * hv[j] + (E::one() - z[j]) * n[j])
            .collect();

        let out = self.push("gru_step", vec![d_h], h_new)?;
        self.ops.push(Op::GruStep {
            x,
            h_prev,
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wh,
            uh,
            bh,
            z,
            r,
            n,
            out,
        });
        Ok(out)
    }

    // ── Capsule ops ─────────────────────────────────────────────────────

    /// Row-wise squash over the last axis:
    /// v ↦ (‖v‖² / (1 + ‖v‖²)) · v/‖v‖, with squash(0) = 0.
    pub fn squash(&mut self, x: ValueId) -> Result<ValueId> {
        let xt = &self.nodes[x.0];
        if xt.shape().is_empty() {
            return Err(Self::shape_err("squash", xt.shape(), &[]));
        }
        let d = *xt.shape().last().unwrap();
        if d == 0 {
            return Err(Self::shape_err("squash", xt.shape(), &[1]));
        }
        let mut data = xt.data().to_vec();
        for row in data.chunks_mut(d) {
            let norm: E = row.iter().map(|&v| v * v).fold(E::zero(), |a, b| a + b).sqrt();
            if norm.to_f64() < NORM_GUARD {
                row.iter_mut().for_each(|v| *v = E::zero());
            } else {
                // (n²/(1+n²))·(v/n) collapses to v·n/(1+n²).
                let c = norm / (E::one() + norm * norm);
                row.iter_mut().for_each(|v| *v *= c);
            }
        }
        let shape = xt.shape().to_vec();
        let out = self.push("squash", shape, data)?;
        self.ops.push(Op::Squash { x, out });
        Ok(out)
    }

    /// Row-wise softmax with max subtraction for overflow safety.
    pub fn softmax_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let xt = &self.nodes[x.0];
        if xt.shape().len() != 2 {
            return Err(Self::shape_err("softmax_rows", xt.shape(), &[]));
        }
        let n = xt.shape()[1];
        let mut data = xt.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(E::neg_infinity(), E::max);
            let mut sum = E::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let shape = xt.shape().to_vec();
        let out = self.push("softmax_rows", shape, data)?;
        self.ops.push(Op::SoftmaxRows { x, out });
        Ok(out)
    }

    /// Prediction vectors for routing: one weight matrix per parent capsule,
    /// shared across all children. `w`: [n, d_out, d_in], `p`: [m, d_in].
    pub fn caps_predict(&mut self, w: ValueId, p: ValueId) -> Result<ValueId> {
        let (tw, tp) = (&self.nodes[w.0], &self.nodes[p.0]);
        if tw.shape().len() != 3 || tp.shape().len() != 2 || tw.shape()[2] != tp.shape()[1] {
            return Err(Self::shape_err("caps_predict", tw.shape(), tp.shape()));
        }
        let (n, d_out, d_in) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        let m = tp.shape()[0];
        let mut data = vec![E::zero(); n * m * d_out];
        for j in 0..n {
            for i in 0..m {
                let prow = &tp.data()[i * d_in..(i + 1) * d_in];
                let orow = &mut data[(j * m + i) * d_out..(j * m + i + 1) * d_out];
                for (o, ov) in orow.iter_mut().enumerate() {
                    let wrow = &tw.data()[(j * d_out + o) * d_in..(j * d_out + o + 1) * d_in];
                    *ov = wrow.iter().zip(prow).map(|(&wv, &pv)| wv * pv).fold(E::zero(), |a, b| a + b);
                }
            }
        }
        let out = self.push("caps_predict", vec![n, m, d_out], data)?;
        self.ops.push(Op::CapsPredict { w, p, out });
        Ok(out)
    }

    /// Coupling-weighted sum of predictions: `c`: [m, n] (row = child,
    /// column = parent), `p_hat`: [n, m, d] → q̃: [n, d].
    pub fn route_combine(&mut self, c: ValueId, p_hat: ValueId) -> Result<ValueId> {
        let (tc, tp) = (&self.nodes[c.0], &self.nodes[p_hat.0]);
        if tc.shape().len() != 2
            || tp.shape().len() != 3
            || tc.shape()[0] != tp.shape()[1]
            || tc.shape()[1] != tp.shape()[0]
        {
            return Err(Self::shape_err("route_combine", tc.shape(), tp.shape()));
        }
        let (m, n) = (tc.shape()[0], tc.shape()[1]);
        let d = tp.shape()[2];
        let mut data = vec![E::zero(); n * d];
        for j in 0..n {
            let orow = &mut data[j * d..(j + 1) * d];
            for i in 0..m {
                let cij = tc.data()[i * n + j];
                let prow = &tp.data()[(j * m + i) * d..(j * m + i + 1) * d];
                for (o, &pv) in orow.iter_mut().zip(prow) {
                    *o += cij * pv;
                }
            }
        }
        let out = self.push("route_combine", vec![n, d], data)?;
        self.ops.push(Op::RouteCombine { c, p_hat, out });
        Ok(out)
    }

    /// Agreement update for routing logits:
    /// out[i, j] = b_in[i, j] + q_j · p̂_{j|i}.
    pub fn route_agreement(&mut self, b_in: ValueId, q: ValueId, p_hat: ValueId) -> Result<ValueId> {
        let (tb, tq, tp) = (&self.nodes[b_in.0], &self.nodes[q.0], &self.nodes[p_hat.0]);
        if tb.shape().len() != 2 || tq.shape().len() != 2 || tp.shape().len() != 3 {
            return Err(Self::shape_err("route_agreement", tb.shape(), tp.shape()));
        }
        let (m, n) = (tb.shape()[0], tb.shape()[1]);
        let d = tq.shape()[1];
        if tq.shape()[0] != n || tp.shape() != [n, m, d] {
            return Err(Self::shape_err("route_agreement", tq.shape(), tp.shape()));
        }
        let mut data = tb.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                let qrow = &tq.data()[j * d..(j + 1) * d];
                let prow = &tp.data()[(j * m + i) * d..(j * m + i + 1) * d];
                let dot = qrow.iter().zip(prow).map(|(&a, &b)| a * b).fold(E::zero(), |x, y| x + y);
                data[i * n + j] += dot;
            }
        }
        let out = self.push("route_agreement", vec![m, n], data)?;
        self.ops.push(Op::RouteAgreement { b_in, q, p_hat, out });
        Ok(out)
    }

    /// Euclidean norm of each row: [n, d] → [n].
    pub fn row_norms(&mut self, x: ValueId) -> Result<ValueId> {
        let xt = &self.nodes[x.0];
        if xt.shape().len() != 2 {
            return Err(Self::shape_err("row_norms", xt.shape(), &[]));
        }
        let (n, d) = (xt.shape()[0], xt.shape()[1]);
        let data: Vec<E> = (0..n)
            .map(|j| {
                xt.data()[j * d..(j + 1) * d]
                    .iter()
                    .map(|&v| v * v)
                    .fold(E::zero(), |a, b| a + b)
                    .sqrt()
            })
            .collect();
        let out = self.push("row_norms", vec![n], data)?;
        self.ops.push(Op::RowNorms { x, out });
        Ok(out)
    }

    /// Affine map of a vector: out = x·W + b, `x`: [n], `w`: [n, m], `b`: [m].
    pub fn linear(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let (tx, tw, tb) = (&self.nodes[x.0], &self.nodes[w.0], &self.nodes[b.0]);
        if tx.shape().len() != 1 || tw.shape().len() != 2 || tw.shape()[0] != tx.len() {
            return Err(Self::shape_err("linear", tx.shape(), tw.shape()));
        }
        let (n, m) = (tw.shape()[0], tw.shape()[1]);
        if tb.shape() != [m] {
            return Err(Self::shape_err("linear", tw.shape(), tb.shape()));
        }
        let mut data = tb.data().to_vec();
        for i in 0..n {
            let xi = tx.data()[i];
            let wrow = &tw.data()[i * m..(i + 1) * m];
            for (o, &wv) in data.iter_mut().zip(wrow) {
                *o += xi * wv;
            }
        }
        let out = self.push("linear", vec![m], data)?;
        self.ops.push(Op::Linear { x, w, b, out });
        Ok(out)
    }

    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let xt = &self.nodes[x.0];
        let expect: usize = shape.iter().product();
        if expect != xt.len() {
            return Err(Self::shape_err("reshape", xt.shape(), &shape));
        }
        let data = xt.data().to_vec();
        let out = self.push("reshape", shape, data)?;
        self.ops.push(Op::Reshape { x, out });
        Ok(out)
    }

    // ── Elementwise and reduction ops ───────────────────────────────────

    /// out = a·x + c elementwise.
    pub fn affine(&mut self, x: ValueId, a: E, c: E) -> Result<ValueId> {
        let xt = &self.nodes[x.0];
        let data: Vec<E> = xt.data().iter().map(|&v| a * v + c).collect();
        let shape = xt.shape().to_vec();
        let out = self.push("affine", shape, data)?;
        self.ops.push(Op::AffineScalar { x, a, out });
        Ok(out)
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId> {
        let xt = &self.nodes[x.0];
        let data: Vec<E> = xt.data().iter().map(|&v| v.max(E::zero())).collect();
        let shape = xt.shape().to_vec();
        let out = self.push("relu", shape, data)?;
        self.ops.push(Op::Relu { x, out });
        Ok(out)
    }

    pub fn square(&mut self, x: ValueId) -> Result<ValueId> {
        let xt = &self.nodes[x.0];
        let data: Vec<E> = xt.data().iter().map(|&v| v * v).collect();
        let shape = xt.shape().to_vec();
        let out = self.push("square", shape, data)?;
        self.ops.push(Op::Square { x, out });
        Ok(out)
    }

    /// Scalar dot with a constant vector.
    pub fn dot_const(&mut self, x: ValueId, v: &[E]) -> Result<ValueId> {
        let xt = &self.nodes[x.0];
        if xt.len() != v.len() {
            return Err(Self::shape_err("dot_const", xt.shape(), &[v.len()]));
        }
        let s = xt.data().iter().zip(v).map(|(&a, &b)| a * b).fold(E::zero(), |a, b| a + b);
        let out = self.push("dot_const", vec![1], vec![s])?;
        self.ops.push(Op::DotConst {
            x,
            v: v.to_vec(),
            out,
        });
        Ok(out)
    }

    /// Scalar (v · x)/‖x‖ with a constant v; exactly 0 (gradient included)
    /// when ‖x‖ falls below the norm guard.
    pub fn normalized_dot_const(&mut self, x: ValueId, v: &[E]) -> Result<ValueId> {
        let xt = &self.nodes[x.0];
        if xt.len() != v.len() {
            return Err(Self::shape_err(
                "normalized_dot_const",
                xt.shape(),
                &[v.len()],
            ));
        }
        let norm = xt.norm();
        let s = if norm.to_f64() < NORM_GUARD {
            E::zero()
        } else {
            xt.data().iter().zip(v).map(|(&a, &b)| a * b).fold(E::zero(), |a, b| a + b) / norm
        };
        let out = self.push("normalized_dot_const", vec![1], vec![s])?;
        self.ops.push(Op::NormalizedDotConst {
            x,
            v: v.to_vec(),
            out,
        });
        Ok(out)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if ta.shape() != tb.shape() {
            return Err(Self::shape_err("add", ta.shape(), tb.shape()));
        }
        let data: Vec<E> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let shape = ta.shape().to_vec();
        let out = self.push("add", shape, data)?;
        self.ops.push(Op::Add { a, b, out });
        Ok(out)
    }

    pub fn scale(&mut self, x: ValueId, k: E) -> Result<ValueId> {
        let xt = &self.nodes[x.0];
        let data: Vec<E> = xt.data().iter().map(|&v| k * v).collect();
        let shape = xt.shape().to_vec();
        let out = self.push("scale", shape, data)?;
        self.ops.push(Op::Scale { x, k, out });
        Ok(out)
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse replay from a scalar loss node. Seeds dL/dL = 1 and walks
    /// the op list backwards, accumulating adjoints. Ops whose output never
    /// reached the loss are skipped (their gradient buffer stays empty).
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.nodes[loss.0].len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss node, got shape {:?}",
                self.nodes[loss.0].shape()
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![E::one()]);

        for oi in (0..self.ops.len()).rev() {
            let out = self.op_out(oi);
            let Some(g) = self.grads[out.0].clone() else {
                continue;
            };
            self.apply_adjoint(oi, &g);
        }
        Ok(())
    }

    fn op_out(&self, oi: usize) -> ValueId {
        match &self.ops[oi] {
            Op::Gather { out, .. }
            | Op::Row { out, .. }
            | Op::ConcatPair { out, .. }
            | Op::StackRows { out, .. }
            | Op::MulConst { out, .. }
            | Op::Matmul { out, .. }
            | Op::Conv1dSame { out, .. }
            | Op::GruStep { out, .. }
            | Op::Squash { out, .. }
            | Op::SoftmaxRows { out, .. }
            | Op::CapsPredict { out, .. }
            | Op::RouteCombine { out, .. }
            | Op::RouteAgreement { out, .. }
            | Op::RowNorms { out, .. }
            | Op::Linear { out, .. }
            | Op::Reshape { out, .. }
            | Op::AffineScalar { out, .. }
            | Op::Relu { out, .. }
            | Op::Square { out, .. }
            | Op::DotConst { out, .. }
            | Op::NormalizedDotConst { out, .. }
            | Op::Add { out, .. }
            | Op::Scale { out, .. } => *out,
        }
    }

    /// Ensures a gradient buffer exists for `id` and returns it.
    fn buf(&mut self, id: ValueId) -> &mut Vec<E> {
        let len = self.nodes[id.0].len();
        self.grads[id.0].get_or_insert_with(|| vec![E::zero(); len])
    }

    fn apply_adjoint(&mut self, oi: usize, g: &[E]) {
        // Ops are taken apart by index so `self` stays borrowable; each arm
        // reads forward values first, then writes gradient buffers.
        match &self.ops[oi] {
            &Op::Gather { table, ref idx, .. } => {
                let d = self.nodes[table.0].shape()[1];
                let idx = idx.clone();
                let buf = self.buf(table);
                for (t, &i) in idx.iter().enumerate() {
                    for c in 0..d {
                        buf[i * d + c] += g[t * d + c];
                    }
                }
            }
            &Op::Row { x, t, .. } => {
                let d = g.len();
                let buf = self.buf(x);
                for (c, &gv) in g.iter().enumerate() {
                    buf[t * d + c] += gv;
                }
            }
            &Op::ConcatPair { a, b, .. } => {
                let la = self.nodes[a.0].len();
                let buf_a = self.buf(a);
                for (av, &gv) in buf_a.iter_mut().zip(&g[..la]) {
                    *av += gv;
                }
                let buf_b = self.buf(b);
                for (bv, &gv) in buf_b.iter_mut().zip(&g[la..]) {
                    *bv += gv;
                }
            }
            Op::StackRows { rows, .. } => {
                let rows = rows.clone();
                let d = self.nodes[rows[0].0].len();
                for (t, r) in rows.into_iter().enumerate() {
                    let buf = self.buf(r);
                    for (rv, &gv) in buf.iter_mut().zip(&g[t * d..(t + 1) * d]) {
                        *rv += gv;
                    }
                }
            }
            Op::MulConst { x, mask, .. } => {
                let x = *x;
                let mask = mask.clone();
                let buf = self.buf(x);
                for ((xv, &m), &gv) in buf.iter_mut().zip(&mask).zip(g) {
                    *xv += m * gv;
                }
            }
            &Op::Matmul { a, b, .. } => {
                let (m, k) = (self.nodes[a.0].shape()[0], self.nodes[a.0].shape()[1]);
                let n = self.nodes[b.0].shape()[1];
                let a_data = self.nodes[a.0].data().to_vec();
                let b_data = self.nodes[b.0].data().to_vec();
                {
                    // dA = g @ Bᵀ
                    let buf = self.buf(a);
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = E::zero();
                            for j in 0..n {
                                acc += g[i * n + j] * b_data[p * n + j];
                            }
                            buf[i * k + p] += acc;
                        }
                    }
                }
                {
                    // dB = Aᵀ @ g
                    let buf = self.buf(b);
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = E::zero();
                            for i in 0..m {
                                acc += a_data[i * k + p] * g[i * n + j];
                            }
                            buf[p * n + j] += acc;
                        }
                    }
                }
            }
            &Op::Conv1dSame { x, w, b, .. } => {
                let (t_len, cin) = (self.nodes[x.0].shape()[0], self.nodes[x.0].shape()[1]);
                let (k, cout) = (self.nodes[w.0].shape()[0], self.nodes[w.0].shape()[2]);
                let half = k / 2;
                let x_data = self.nodes[x.0].data().to_vec();
                let w_data = self.nodes[w.0].data().to_vec();
                {
                    let buf = self.buf(b);
                    for t in 0..t_len {
                        for (o, bv) in buf.iter_mut().enumerate() {
                            *bv += g[t * cout + o];
                        }
                    }
                }
                {
                    let buf = self.buf(w);
                    for t in 0..t_len {
                        for kk in 0..k {
                            let s = t + kk;
                            if s < half || s - half >= t_len {
                                continue;
                            }
                            let s = s - half;
                            for ci in 0..cin {
                                let xv = x_data[s * cin + ci];
                                for o in 0..cout {
                                    buf[(kk * cin + ci) * cout + o] += xv * g[t * cout + o];
                                }
                            }
                        }
                    }
                }
                {
                    let buf = self.buf(x);
                    for t in 0..t_len {
                        for kk in 0..k {
                            let s = t + kk;
                            if s < half || s - half >= t_len {
                                continue;
                            }
                            let s = s - half;
                            for ci in 0..cin {
                                let mut acc = E::zero();
                                for o in 0..cout {
                                    acc += g[t * cout + o] * w_data[(kk * cin + ci) * cout + o];
                                }
                                buf[s * cin + ci] += acc;
                            }
                        }
                    }
                }
            }
            Op::GruStep {
                x,
                h_prev,
                wz,
                uz,
                bz,
                wr,
                ur,
                br,
                wh,
                uh,
                bh,
                z,
                r,
                n,
                ..
            } => {
                let (x, h_prev) = (*x, *h_prev);
                let (wz, uz, bz) = (*wz, *uz, *bz);
                let (wr, ur, br) = (*wr, *ur, *br);
                let (wh, uh, bh) = (*wh, *uh, *bh);
                let (z, r, n) = (z.clone(), r.clone(), n.clone());
                let d_h = z.len();
                let xv = self.nodes[x.0].data().to_vec();
                let hv = self.nodes[h_prev.0].data().to_vec();
                let uh_data = self.nodes[uh.0].data().to_vec();

                // h' = z⊙h + (1−z)⊙n
                let dz: Vec<E> = (0..d_h).map(|j| g[j] * (hv[j] - n[j])).collect();
                let dn: Vec<E> = (0..d_h).map(|j| g[j] * (E::one() - z[j])).collect();

                // Through tanh and the gate sigmoids, to pre-activations.
                let dan: Vec<E> = (0..d_h).map(|j| dn[j] * (E::one() - n[j] * n[j])).collect();
                let daz: Vec<E> = (0..d_h)
                    .map(|j| dz[j] * z[j] * (E::one() - z[j]))
                    .collect();

                // Candidate pre-activation feeds (r⊙h)·Uh: recover dr and
                // the h contribution before touching the r-gate sigmoid.
                let mut d_rh = vec![E::zero(); d_h];
                for (i, dv) in d_rh.iter_mut().enumerate() {
                    for (j, &da) in dan.iter().enumerate() {
                        *dv += da * uh_data[i * d_h + j];
                    }
                }
                let dr: Vec<E> = (0..d_h).map(|i| d_rh[i] * hv[i]).collect();
                let dar: Vec<E> = (0..d_h)
                    .map(|i| dr[i] * r[i] * (E::one() - r[i]))
                    .collect();

                // Every gate contributes to x, h_prev, and its own weights.
                let mut dx = vec![E::zero(); xv.len()];
                let mut dh = vec![E::zero(); d_h];
                for j in 0..d_h {
                    dh[j] += g[j] * z[j]; // direct carry term
                    dh[j] += d_rh[j] * r[j]; // reset-gated candidate input
                }
                for (gate_da, w_id, u_id) in [(&daz, wz, uz), (&dar, wr, ur)] {
                    let w_data = self.nodes[w_id.0].data().to_vec();
                    let u_data = self.nodes[u_id.0].data().to_vec();
                    for (i, dv) in dx.iter_mut().enumerate() {
                        for (j, &da) in gate_da.iter().enumerate() {
                            *dv += da * w_data[i * d_h + j];
                        }
                    }
                    for (i, dv) in dh.iter_mut().enumerate() {
                        for (j, &da) in gate_da.iter().enumerate() {
                            *dv += da * u_data[i * d_h + j];
                        }
                    }
                }
                {
                    let wh_data = self.nodes[wh.0].data().to_vec();
                    for (i, dv) in dx.iter_mut().enumerate() {
                        for (j, &da) in dan.iter().enumerate() {
                            *dv += da * wh_data[i * d_h + j];
                        }
                    }
                }

                // Weight gradients: outer products with the pre-activation
                // adjoints. Uh sees the reset-gated state, not h itself.
                for (gate_da, w_id, u_id, b_id, u_input) in [
                    (&daz, wz, uz, bz, hv.clone()),
                    (&dar, wr, ur, br, hv.clone()),
                    (
                        &dan,
                        wh,
                        uh,
                        bh,
                        (0..d_h).map(|i| r[i] * hv[i]).collect::<Vec<E>>(),
                    ),
                ] {
                    {
                        let buf = self.buf(w_id);
                        for (i, &xi) in xv.iter().enumerate() {
                            for (j, &da) in gate_da.iter().enumerate() {
                                buf[i * d_h + j] += xi * da;
                            }
                        }
                    }
                    {
                        let buf = self.buf(u_id);
                        for (i, &ui) in u_input.iter().enumerate() {
                            for (j, &da) in gate_da.iter().enumerate() {
                                buf[i * d_h + j] += ui * da;
                            }
                        }
                    }
                    {
                        let buf = self.buf(b_id);
                        for (j, &da) in gate_da.iter().enumerate() {
                            buf[j] += da;
                        }
                    }
                }

                {
                    let buf = self.buf(x);
                    for (bv, dv) in buf.iter_mut().zip(dx) {
                        *bv += dv;
                    }
                }
                {
                    let buf = self.buf(h_prev);
                    for (bv, dv) in buf.iter_mut().zip(dh) {
                        *bv += dv;
                    }
                }
            }
            &Op::Squash { x, .. } => {
                let d = *self.nodes[x.0].shape().last().unwrap();
                let x_data = self.nodes[x.0].data().to_vec();
                let buf = self.buf(x);
                for (row_i, (xrow, grow)) in x_data.chunks(d).zip(g.chunks(d)).enumerate() {
                    let norm: E = xrow.iter().map(|&v| v * v).fold(E::zero(), |a, b| a + b).sqrt();
                    if norm.to_f64() < NORM_GUARD {
                        continue; // squash(0) = 0 with zero gradient
                    }
                    // s = σ(n)·v with σ(n) = n/(1+n²):
                    // dᵥ = σ(n)·g + n·σ'(n)·(u·g)·u, σ'(n) = (1−n²)/(1+n²)².
                    let denom = E::one() + norm * norm;
                    let sig = norm / denom;
                    let sig_prime = (E::one() - norm * norm) / (denom * denom);
                    let u: Vec<E> = xrow.iter().map(|&v| v / norm).collect();
                    let ug = u.iter().zip(grow).map(|(&a, &b)| a * b).fold(E::zero(), |a, b| a + b);
                    let coef = norm * sig_prime * ug;
                    for c in 0..d {
                        buf[row_i * d + c] += sig * grow[c] + coef * u[c];
                    }
                }
            }
            &Op::SoftmaxRows { x, out } => {
                let n = self.nodes[x.0].shape()[1];
                let y = self.nodes[out.0].data().to_vec();
                let buf = self.buf(x);
                for (row_i, (yrow, grow)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                    let gy: E = yrow.iter().zip(grow).map(|(&a, &b)| a * b).fold(E::zero(), |a, b| a + b);
                    for c in 0..n {
                        buf[row_i * n + c] += yrow[c] * (grow[c] - gy);
                    }
                }
            }
            &Op::CapsPredict { w, p, .. } => {
                let (n, d_out, d_in) = (
                    self.nodes[w.0].shape()[0],
                    self.nodes[w.0].shape()[1],
                    self.nodes[w.0].shape()[2],
                );
                let m = self.nodes[p.0].shape()[0];
                let w_data = self.nodes[w.0].data().to_vec();
                let p_data = self.nodes[p.0].data().to_vec();
                {
                    let buf = self.buf(w);
                    for j in 0..n {
                        for i in 0..m {
                            for o in 0..d_out {
                                let gv = g[(j * m + i) * d_out + o];
                                for c in 0..d_in {
                                    buf[(j * d_out + o) * d_in + c] += gv * p_data[i * d_in + c];
                                }
                            }
                        }
                    }
                }
                {
                    let buf = self.buf(p);
                    for j in 0..n {
                        for i in 0..m {
                            for o in 0..d_out {
                                let gv = g[(j * m + i) * d_out + o];
                                for c in 0..d_in {
                                    buf[i * d_in + c] += gv * w_data[(j * d_out + o) * d_in + c];
                                }
                            }
                        }
                    }
                }
            }
            &Op::RouteCombine { c, p_hat, .. } => {
                let (m, n) = (self.nodes[c.0].shape()[0], self.nodes[c.0].shape()[1]);
                let d = self.nodes[p_hat.0].shape()[2];
                let c_data = self.nodes[c.0].data().to_vec();
                let p_data = self.nodes[p_hat.0].data().to_vec();
                {
                    let buf = self.buf(c);
                    for i in 0..m {
                        for j in 0..n {
                            let mut acc = E::zero();
                            for o in 0..d {
                                acc += g[j * d + o] * p_data[(j * m + i) * d + o];
                            }
                            buf[i * n + j] += acc;
                        }
                    }
                }
                {
                    let buf = self.buf(p_hat);
                    for j in 0..n {
                        for i in 0..m {
                            let cij = c_data[i * n + j];
                            for o in 0..d {
                                buf[(j * m + i) * d + o] += cij * g[j * d + o];
                            }
                        }
                    }
                }
            }
            &Op::RouteAgreement { b_in, q, p_hat, .. } => {
                let (m, n) = (self.nodes[b_in.0].shape()[0], self.nodes[b_in.0].shape()[1]);
                let d = self.nodes[q.0].shape()[1];
                let q_data = self.nodes[q.0].data().to_vec();
                let p_data = self.nodes[p_hat.0].data().to_vec();
                {
                    let buf = self.buf(b_in);
                    for (bv, &gv) in buf.iter_mut().zip(g) {
                        *bv += gv;
                    }
                }
                {
                    let buf = self.buf(q);
                    for j in 0..n {
                        for i in 0..m {
                            let gv = g[i * n + j];
                            for o in 0..d {
                                buf[j * d + o] += gv * p_data[(j * m + i) * d + o];
                            }
                        }
                    }
                }
                {
                    let buf = self.buf(p_hat);
                    for j in 0..n {
                        for i in 0..m {
                            let gv = g[i * n + j];
                            for o in 0..d {
                                buf[(j * m + i) * d + o] += gv * q_data[j * d + o];
                            }
                        }
                    }
                }
            }
            &Op::RowNorms { x, out } => {
                let d = self.nodes[x.0].shape()[1];
                let x_data = self.nodes[x.0].data().to_vec();
                let norms = self.nodes[out.0].data().to_vec();
                let buf = self.buf(x);
                for (j, (&norm, &gv)) in norms.iter().zip(g).enumerate() {
                    if norm.to_f64() < NORM_GUARD {
                        continue;
                    }
                    for c in 0..d {
                        buf[j * d + c] += gv * x_data[j * d + c] / norm;
                    }
                }
            }
            &Op::Linear { x, w, b, .. } => {
                let (n, m) = (self.nodes[w.0].shape()[0], self.nodes[w.0].shape()[1]);
                let x_data = self.nodes[x.0].data().to_vec();
                let w_data = self.nodes[w.0].data().to_vec();
                {
                    let buf = self.buf(x);
                    for (i, bv) in buf.iter_mut().enumerate() {
                        let mut acc = E::zero();
                        for (j, &gv) in g.iter().enumerate() {
                            acc += gv * w_data[i * m + j];
                        }
                        *bv += acc;
                    }
                }
                {
                    let buf = self.buf(w);
                    for (i, &xi) in x_data.iter().enumerate().take(n) {
                        for (j, &gv) in g.iter().enumerate() {
                            buf[i * m + j] += xi * gv;
                        }
                    }
                }
                {
                    let buf = self.buf(b);
                    for (bv, &gv) in buf.iter_mut().zip(g) {
                        *bv += gv;
                    }
                }
            }
            &Op::Reshape { x, .. } => {
                let buf = self.buf(x);
                for (bv, &gv) in buf.iter_mut().zip(g) {
                    *bv += gv;
                }
            }
            &Op::AffineScalar { x, a, .. } => {
                let buf = self.buf(x);
                for (bv, &gv) in buf.iter_mut().zip(g) {
                    *bv += a * gv;
                }
            }
            &Op::Relu { x, .. } => {
                let x_data = self.nodes[x.0].data().to_vec();
                let buf = self.buf(x);
                for ((bv, &xv), &gv) in buf.iter_mut().zip(&x_data).zip(g) {
                    if xv > E::zero() {
                        *bv += gv;
                    }
                }
            }
            &Op::Square { x, .. } => {
                let x_data = self.nodes[x.0].data().to_vec();
                let two = E::of(2.0);
                let buf = self.buf(x);
                for ((bv, &xv), &gv) in buf.iter_mut().zip(&x_data).zip(g) {
                    *bv += two * xv * gv;
                }
            }
            Op::DotConst { x, v, .. } => {
                let x = *x;
                let v = v.clone();
                let g0 = g[0];
                let buf = self.buf(x);
                for (bv, &vv) in buf.iter_mut().zip(&v) {
                    *bv += g0 * vv;
                }
            }
            Op::NormalizedDotConst { x, v, out } => {
                let x = *x;
                let v = v.clone();
                let s = self.nodes[out.0].data()[0];
                let x_data = self.nodes[x.0].data().to_vec();
                let norm = self.nodes[x.0].norm();
                if norm.to_f64() < NORM_GUARD {
                    return;
                }
                // d(v·x/‖x‖)/dx = v/‖x‖ − (v·x)·x/‖x‖³ = (v − s·x/‖x‖)/‖x‖
                let g0 = g[0];
                let buf = self.buf(x);
                for ((bv, &vv), &xv) in buf.iter_mut().zip(&v).zip(&x_data) {
                    *bv += g0 * (vv - s * xv / norm) / norm;
                }
            }
            &Op::Add { a, b, .. } => {
                {
                    let buf = self.buf(a);
                    for (bv, &gv) in buf.iter_mut().zip(g) {
                        *bv += gv;
                    }
                }
                {
                    let buf = self.buf(b);
                    for (bv, &gv) in buf.iter_mut().zip(g) {
                        *bv += gv;
                    }
                }
            }
            &Op::Scale { x, k, .. } => {
                let buf = self.buf(x);
                for (bv, &gv) in buf.iter_mut().zip(g) {
                    *bv += k * gv;
                }
            }
        }
    }
}

fn sigmoid<E: Element>(a: E) -> E {
    // Branch keeps exp() from overflowing for large |a|.
    if a >= E::zero() {
        E::one() / (E::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (E::one() + e)
    }
}
