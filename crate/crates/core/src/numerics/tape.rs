//! Reverse-mode gradient tape.
//!
//! Every primitive appends one node holding its output value. `backward`
//! walks the nodes in reverse insertion order, which is a valid reverse
//! topological order because a node can only reference earlier nodes.

use super::tensor::matmul_into;
use super::{shape_err, NumericsError, ParamId, ParamStore, Tensor, MASK_NEG};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    MaskFill(Var, Vec<bool>),
    MaskedSoftmax(Var),
    GatherBias { table: Var, slots: Vec<Option<usize>> },
    GatherRows { table: Var, rows: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    LayerNorm { x: Var, gain: Var, shift: Var, xhat: Tensor, inv_std: Vec<f64> },
    BceWithLogits { logits: Var, targets: Vec<f64> },
    Sum(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0[v.0].as_ref()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    replayed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records the current value of a parameter; `backward` deposits into its gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", x.shape(), y.shape())));
        }
        let mut out = x.clone();
        out.add_assign(y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a length-`d` vector to every row of an `n x d` matrix.
    pub fn add_broadcast(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (x, b) = (self.value(a), self.value(row));
        let (_, d) = x.dims2("add_broadcast")?;
        if b.len() != d {
            return Err(shape_err("add_broadcast", format!("{:?} + {:?}", x.shape(), b.shape())));
        }
        let mut out = x.clone();
        for chunk in out.data_mut().chunks_mut(d) {
            for (o, v) in chunk.iter_mut().zip(b.data()) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::AddBroadcast(a, row)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("mul", format!("{:?} * {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Writes [`MASK_NEG`] into every disallowed slot of a square score matrix.
    pub fn mask_fill(&mut self, scores: Var, allowed: &[bool]) -> Result<Var, NumericsError> {
        let s = self.value(scores);
        check_square_mask("mask_fill", s, allowed)?;
        let mut out = s.clone();
        for (o, &ok) in out.data_mut().iter_mut().zip(allowed) {
            if !ok {
                *o = MASK_NEG;
            }
        }
        Ok(self.push(out, Op::MaskFill(scores, allowed.to_vec())))
    }

    /// Row softmax restricted to allowed slots.
    ///
    /// Disallowed slots are set to [`MASK_NEG`], each row is max-shifted and
    /// exponentiated, and disallowed outputs are then overwritten with exact zeros.
    pub fn masked_softmax_rows(&mut self, scores: Var, allowed: &[bool]) -> Result<Var, NumericsError> {
        let s = self.value(scores);
        let (n, _) = check_square_mask("masked_softmax_rows", s, allowed)?;
        let mut out = s.clone();
        for (row, mask) in out.data_mut().chunks_mut(n).zip(allowed.chunks(n)) {
            for (x, &ok) in row.iter_mut().zip(mask) {
                if !ok {
                    *x = MASK_NEG;
                }
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for (x, &ok) in row.iter_mut().zip(mask) {
                *x = if ok { *x / total } else { 0.0 };
            }
        }
        Ok(self.push(out, Op::MaskedSoftmax(scores)))
    }

    /// Looks up a bias for every slot of an `n x n` grid; `None` slots get 0.
    pub fn gather_bias(&mut self, table: Var, slots: &[Option<usize>], n: usize) -> Result<Var, NumericsError> {
        let t = self.value(table);
        if t.rank() != 1 || slots.len() != n * n {
            return Err(shape_err(
                "gather_bias",
                format!("table {:?}, {} slots for n = {n}", t.shape(), slots.len()),
            ));
        }
        let mut data = Vec::with_capacity(n * n);
        for slot in slots {
            data.push(match *slot {
                Some(k) if k < t.len() => t.data()[k],
                Some(k) => return Err(shape_err("gather_bias", format!("slot {k} outside table of {}", t.len()))),
                None => 0.0,
            });
        }
        let out = Tensor::matrix(n, n, data)?;
        Ok(self.push(out, Op::GatherBias { table, slots: slots.to_vec() }))
    }

    /// Selects rows of a matrix (repeats allowed).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(table);
        let (r, c) = t.dims2("gather_rows")?;
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(shape_err("gather_rows", format!("row {i} of {r}")));
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(rows.len(), c, data)?;
        Ok(self.push(out, Op::GatherRows { table, rows: rows.to_vec() }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let t = self.value(x);
        let (r, c) = t.dims2("slice_cols")?;
        if start + len > c {
            return Err(shape_err("slice_cols", format!("{start}+{len} > {c}")));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let out = Tensor::matrix(r, len, data)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts.first().ok_or_else(|| shape_err("concat_cols", "no inputs"))?;
        let (r, _) = self.value(*first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).dims2("concat_cols")?;
            if pr != r {
                return Err(shape_err("concat_cols", format!("row counts {pr} vs {r}")));
            }
            widths.push(pc);
        }
        let c: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(r, c, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Row-wise normalisation to zero mean and unit variance, then `gain * x + shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var, NumericsError> {
        let t = self.value(x);
        let (r, d) = t.dims2("layer_norm")?;
        if self.value(gain).len() != d || self.value(shift).len() != d {
            return Err(shape_err("layer_norm", "gain/shift length must equal row width"));
        }
        let mut xhat = t.clone();
        let mut inv_std = Vec::with_capacity(r);
        for row in xhat.data_mut().chunks_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let (g, b) = (self.value(gain).data(), self.value(shift).data());
        let mut out = xhat.clone();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, gj), bj) in row.iter_mut().zip(g).zip(b) {
                *v = *v * gj + bj;
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, gain, shift, xhat, inv_std }))
    }

    /// Mean binary cross-entropy of logits against `targets` in `[0, 1]`, as a scalar.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var, NumericsError> {
        let z = self.value(logits);
        if z.len() != targets.len() || z.is_empty() {
            return Err(shape_err("bce_with_logits", format!("{} logits vs {} targets", z.len(), targets.len())));
        }
        let total: f64 = z
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let out = Tensor::scalar(total / targets.len() as f64);
        Ok(self.push(out, Op::BceWithLogits { logits, targets: targets.to_vec() }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    /// A tape can be replayed only once.
    pub fn gradients(&mut self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.replayed {
            return Err(NumericsError::TapeReplayed);
        }
        let shape = self.value(loss).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(NumericsError::NotScalar(shape));
        }
        self.replayed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(&shape));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients(grads))
    }

    /// Replays the tape from `loss` and adds every parameter gradient into `store`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<(), NumericsError> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.0) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.accumulate(*id, g);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), NumericsError> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k) = av.dims2("matmul")?;
                let (_, m) = bv.dims2("matmul")?;
                // dA = dC * B^T
                let bt = bv.transpose()?;
                let mut da = vec![0.0; n * k];
                matmul_into(g.data(), bt.data(), &mut da, n, m, k);
                // dB = A^T * dC
                let at = av.transpose()?;
                let mut db = vec![0.0; k * m];
                matmul_into(at.data(), g.data(), &mut db, k, n, m);
                accumulate(grads, *a, Tensor::matrix(n, k, da)?);
                accumulate(grads, *b, Tensor::matrix(k, m, db)?);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()?),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddBroadcast(a, row) => {
                accumulate(grads, *a, g.clone());
                let d = self.value(*row).len();
                let mut db = vec![0.0; d];
                for chunk in g.data().chunks(d) {
                    for (o, v) in db.iter_mut().zip(chunk) {
                        *o += v;
                    }
                }
                let shape = self.value(*row).shape().to_vec();
                accumulate(grads, *row, Tensor::new(shape, db)?);
            }
            Op::Mul(a, b) => {
                let ga = zip_map(g, self.value(*b), |g, y| g * y);
                let gb = zip_map(g, self.value(*a), |g, x| g * x);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|v| v * c)),
            Op::Relu(a) => accumulate(grads, *a, zip_map(g, &node.value, |g, y| if y > 0.0 { g } else { 0.0 })),
            Op::Sigmoid(a) => accumulate(grads, *a, zip_map(g, &node.value, |g, y| g * y * (1.0 - y))),
            Op::MaskFill(a, allowed) => {
                let mut ga = g.clone();
                for (v, &ok) in ga.data_mut().iter_mut().zip(allowed) {
                    if !ok {
                        *v = 0.0;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::MaskedSoftmax(a) => {
                let w = &node.value;
                let n = w.shape()[1];
                let mut ga = vec![0.0; w.len()];
                for ((out, wr), gr) in ga.chunks_mut(n).zip(w.data().chunks(n)).zip(g.data().chunks(n)) {
                    let dot: f64 = wr.iter().zip(gr).map(|(w, g)| w * g).sum();
                    for ((o, &wv), &gv) in out.iter_mut().zip(wr).zip(gr) {
                        *o = wv * (gv - dot);
                    }
                }
                accumulate(grads, *a, Tensor::new(w.shape().to_vec(), ga)?);
            }
            Op::GatherBias { table, slots } => {
                let t = self.value(*table);
                let mut gt = vec![0.0; t.len()];
                for (slot, gv) in slots.iter().zip(g.data()) {
                    if let Some(k) = slot {
                        gt[*k] += gv;
                    }
                }
                accumulate(grads, *table, Tensor::new(t.shape().to_vec(), gt)?);
            }
            Op::GatherRows { table, rows } => {
                let t = self.value(*table);
                let c = t.shape()[1];
                let mut gt = Tensor::zeros(t.shape());
                for (i, &r) in rows.iter().enumerate() {
                    let dst = &mut gt.data_mut()[r * c..(r + 1) * c];
                    for (d, s) in dst.iter_mut().zip(g.row(i)) {
                        *d += s;
                    }
                }
                accumulate(grads, *table, gt);
            }
            Op::SliceCols { x, start } => {
                let t = self.value(*x);
                let (r, c) = t.dims2("slice_cols")?;
                let len = g.shape()[1];
                let mut gx = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    gx.data_mut()[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                }
                accumulate(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let r = g.shape()[0];
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    let mut gp = Vec::with_capacity(r * w);
                    for i in 0..r {
                        gp.extend_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    accumulate(grads, p, Tensor::matrix(r, w, gp)?);
                    offset += w;
                }
            }
            Op::LayerNorm { x, gain, shift, xhat, inv_std } => {
                let (r, d) = xhat.dims2("layer_norm")?;
                let gv = self.value(*gain).data();
                let mut dgain = vec![0.0; d];
                let mut dshift = vec![0.0; d];
                let mut dx = vec![0.0; r * d];
                for i in 0..r {
                    let gy = g.row(i);
                    let xh = xhat.row(i);
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..d {
                        dgain[j] += gy[j] * xh[j];
                        dshift[j] += gy[j];
                        let dxh = gy[j] * gv[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                    }
                    let scale = inv_std[i] / d as f64;
                    for j in 0..d {
                        let dxh = gy[j] * gv[j];
                        dx[i * d + j] = scale * (d as f64 * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                    }
                }
                accumulate(grads, *x, Tensor::matrix(r, d, dx)?);
                let gs = self.value(*gain).shape().to_vec();
                accumulate(grads, *gain, Tensor::new(gs, dgain)?);
                let ss = self.value(*shift).shape().to_vec();
                accumulate(grads, *shift, Tensor::new(ss, dshift)?);
            }
            Op::BceWithLogits { logits, targets } => {
                let z = self.value(*logits);
                let scale = g.data()[0] / targets.len() as f64;
                let data = z.data().iter().zip(targets).map(|(&z, &y)| (sigmoid(z) - y) * scale).collect();
                accumulate(grads, *logits, Tensor::new(z.shape().to_vec(), data)?);
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                accumulate(grads, *a, Tensor::filled(&shape, g.data()[0]));
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                accumulate(grads, *a, g.clone().reshaped(shape)?);
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn check_square_mask(op: &'static str, s: &Tensor, allowed: &[bool]) -> Result<(usize, usize), NumericsError> {
    let (r, c) = s.dims2(op)?;
    if r != c || allowed.len() != r * c {
        return Err(shape_err(op, format!("scores {:?}, mask of {}", s.shape(), allowed.len())));
    }
    Ok((r, c))
}
