use std::rc::Rc;

use super::kernels;
use super::{Graph, Tensor};
use crate::error::{Error, Result};

/// A recorded operation. Operands are node ids on the owning tape.
#[derive(Clone)]
pub(super) enum Op {
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    /// Elementwise product with a constant; activations record their
    /// derivative this way.
    Mask(usize, Rc<[f64]>),
    MatMul(usize, usize),
    Transpose(usize),
    AddBias(usize, usize),
    SumAll(usize),
    Expand(usize),
    /// `[b×n] -> [n]`, summing over rows.
    SumRows(usize),
    /// `[n] -> [b×n]`.
    BroadcastRows(usize),
    /// `[b×n] -> [b]`, summing within each row.
    RowSum(usize),
    /// `[b] -> [b×n]`.
    BroadcastCols(usize),
    ScaleRows(usize, usize),
    Concat(Vec<usize>),
    SliceCols(usize, usize),
    PadCols(usize, usize),
    Reshape(usize),
    RowNorm(usize),
    SafeRecip(usize),
    SoftmaxXent(usize, Rc<[f64]>),
    PairwiseSqDist(usize, usize),
}

impl Tensor {
    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        self.check_graph(other, op)?;
        if self.shape != other.shape {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(self.value.iter().zip(other.value.iter()).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let v = self.zip_with(other, "add", |a, b| a + b)?;
        Ok(self.graph.record(Op::Add(self.id, other.id), self.shape.to_vec(), v, &[self, other]))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let v = self.zip_with(other, "sub", |a, b| a - b)?;
        Ok(self.graph.record(Op::Sub(self.id, other.id), self.shape.to_vec(), v, &[self, other]))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let v = self.zip_with(other, "mul", |a, b| a * b)?;
        Ok(self.graph.record(Op::Mul(self.id, other.id), self.shape.to_vec(), v, &[self, other]))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let v = self.value.iter().map(|&a| a * c).collect();
        self.graph.record(Op::Scale(self.id, c), self.shape.to_vec(), v, &[self])
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let v = self.value.iter().map(|&a| a + c).collect();
        self.graph.record(Op::AddScalar(self.id), self.shape.to_vec(), v, &[self])
    }

    pub fn square(&self) -> Tensor {
        self.mul(self).expect("a tensor always matches itself")
    }

    pub(crate) fn mask(&self, m: Rc<[f64]>) -> Result<Tensor> {
        if m.len() != self.numel() {
            return Err(Error::dim("mask", format!("{} vs {}", m.len(), self.numel())));
        }
        let v = self.value.iter().zip(m.iter()).map(|(&a, &b)| a * b).collect();
        Ok(self.graph.record(Op::Mask(self.id, m), self.shape.to_vec(), v, &[self]))
    }

    /// Matrix product `[m×k]·[k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_graph(other, "matmul")?;
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("[{m}x{k}] x [{k2}x{n}]")));
        }
        let v = kernels::matmul(&self.value, &other.value, m, k, n);
        Ok(self.graph.record(Op::MatMul(self.id, other.id), vec![m, n], v, &[self, other]))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("transpose")?;
        let v = kernels::transpose(&self.value, r, c);
        Ok(self.graph.record(Op::Transpose(self.id), vec![c, r], v, &[self]))
    }

    /// Adds `bias[n]` to every row of a `[b×n]` matrix.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        self.check_graph(bias, "add_bias")?;
        let (b, n) = self.dims2("add_bias")?;
        if bias.dims1("add_bias")? != n {
            return Err(Error::dim("add_bias", format!("[{b}x{n}] + [{}]", bias.numel())));
        }
        let v = self
            .value
            .chunks(n.max(1))
            .flat_map(|row| row.iter().zip(bias.value.iter()).map(|(a, c)| a + c))
            .collect();
        Ok(self.graph.record(Op::AddBias(self.id, bias.id), vec![b, n], v, &[self, bias]))
    }

    /// Dense layer `x·W + bias`.
    pub fn affine(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        self.matmul(weight)?.add_bias(bias)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Tensor {
        let v = vec![self.value.iter().sum()];
        self.graph.record(Op::SumAll(self.id), Vec::new(), v, &[self])
    }

    /// Arithmetic mean of all elements, as a scalar.
    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::InvalidArgument("mean of an empty tensor".into()));
        }
        Ok(self.sum().scale(1.0 / self.numel() as f64))
    }

    fn expand(&self, shape: &[usize]) -> Result<Tensor> {
        if self.numel() != 1 {
            return Err(Error::dim("expand", format!("source shape {:?}", self.shape())));
        }
        let n = shape.iter().product();
        let v = vec![self.value[0]; n];
        Ok(self.graph.record(Op::Expand(self.id), shape.to_vec(), v, &[self]))
    }

    pub fn sum_rows(&self) -> Result<Tensor> {
        let (b, n) = self.dims2("sum_rows")?;
        let mut v = vec![0.0; n];
        for i in 0..b {
            for (o, &x) in v.iter_mut().zip(&self.value[i * n..(i + 1) * n]) {
                *o += x;
            }
        }
        Ok(self.graph.record(Op::SumRows(self.id), vec![n], v, &[self]))
    }

    fn broadcast_rows(&self, b: usize) -> Result<Tensor> {
        let n = self.dims1("broadcast_rows")?;
        let v = (0..b).flat_map(|_| self.value.iter().copied()).collect();
        Ok(self.graph.record(Op::BroadcastRows(self.id), vec![b, n], v, &[self]))
    }

    /// Sums each row of a `[b×n]` matrix into a `[b]` vector.
    pub fn row_sum(&self) -> Result<Tensor> {
        let (_, n) = self.dims2("row_sum")?;
        let v = if n == 0 {
            vec![0.0; self.shape[0]]
        } else {
            self.value.chunks(n).map(|r| r.iter().sum()).collect()
        };
        Ok(self.graph.record(Op::RowSum(self.id), vec![self.shape[0]], v, &[self]))
    }

    fn broadcast_cols(&self, n: usize) -> Result<Tensor> {
        let b = self.dims1("broadcast_cols")?;
        let v = self.value.iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect();
        Ok(self.graph.record(Op::BroadcastCols(self.id), vec![b, n], v, &[self]))
    }

    /// Multiplies row `i` of a `[b×n]` matrix by `c[i]`.
    pub fn scale_rows(&self, c: &Tensor) -> Result<Tensor> {
        self.check_graph(c, "scale_rows")?;
        let (b, n) = self.dims2("scale_rows")?;
        if c.dims1("scale_rows")? != b {
            return Err(Error::dim("scale_rows", format!("[{b}x{n}] by [{}]", c.numel())));
        }
        let v = (0..b)
            .flat_map(|i| self.value[i * n..(i + 1) * n].iter().map(move |&x| (x, i)))
            .map(|(x, i)| x * c.value[i])
            .collect();
        Ok(self.graph.record(Op::ScaleRows(self.id, c.id), vec![b, n], v, &[self, c]))
    }

    /// Column-wise concatenation of `[b×dᵢ]` matrices.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of no tensors".into()))?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            first.check_graph(p, "concat")?;
            let (b, d) = p.dims2("concat")?;
            if b != first.shape[0] {
                return Err(Error::dim("concat", format!("batch {b} vs {}", first.shape[0])));
            }
            widths.push(d);
        }
        let b = first.shape[0];
        let total: usize = widths.iter().sum();
        let mut v = Vec::with_capacity(b * total);
        for i in 0..b {
            for (p, &d) in parts.iter().zip(&widths) {
                v.extend_from_slice(&p.value[i * d..(i + 1) * d]);
            }
        }
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(first.graph.record(Op::Concat(ids), vec![b, total], v, parts))
    }

    /// Columns `start..start + width` of a `[b×n]` matrix.
    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Tensor> {
        let (b, n) = self.dims2("slice_cols")?;
        if start + width > n {
            return Err(Error::dim("slice_cols", format!("{start}+{width} > {n}")));
        }
        let v = (0..b)
            .flat_map(|i| self.value[i * n + start..i * n + start + width].iter().copied())
            .collect();
        Ok(self.graph.record(Op::SliceCols(self.id, start), vec![b, width], v, &[self]))
    }

    fn pad_cols(&self, start: usize, total: usize) -> Result<Tensor> {
        let (b, w) = self.dims2("pad_cols")?;
        let mut v = vec![0.0; b * total];
        for i in 0..b {
            v[i * total + start..i * total + start + w]
                .copy_from_slice(&self.value[i * w..(i + 1) * w]);
        }
        Ok(self.graph.record(Op::PadCols(self.id, start), vec![b, total], v, &[self]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::dim("reshape", format!("{:?} -> {shape:?}", self.shape())));
        }
        Ok(self.graph.record(Op::Reshape(self.id), shape.to_vec(), self.value.to_vec(), &[self]))
    }

    /// Euclidean norm of each row, `[b×d] -> [b]`. The gradient at a zero
    /// row is taken to be zero.
    pub fn row_l2_norm(&self) -> Result<Tensor> {
        let (b, d) = self.dims2("row_l2_norm")?;
        let v = (0..b)
            .map(|i| self.value[i * d..(i + 1) * d].iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        Ok(self.graph.record(Op::RowNorm(self.id), vec![b], v, &[self]))
    }

    /// Elementwise `1/x`, with `0` mapped to `0`.
    fn safe_recip(&self) -> Tensor {
        let v = self.value.iter().map(|&x| if x == 0.0 { 0.0 } else { 1.0 / x }).collect();
        self.graph.record(Op::SafeRecip(self.id), self.shape.to_vec(), v, &[self])
    }

    /// `max(x, slope·x)`; the derivative at zero is `slope`.
    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let m: Rc<[f64]> = self.value.iter().map(|&x| if x > 0.0 { 1.0 } else { slope }).collect();
        self.mask(m).expect("mask built from own values")
    }

    /// `max(x, 0)`; the derivative at zero is `0`.
    pub fn relu(&self) -> Tensor {
        let m: Rc<[f64]> = self.value.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
        self.mask(m).expect("mask built from own values")
    }

    /// Mean negative log-softmax of the labelled class over a `[b×C]`
    /// batch of logits. First-order only.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        let (b, c) = self.dims2("softmax_cross_entropy")?;
        if labels.len() != b {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("{} labels for batch {b}", labels.len()),
            ));
        }
        if b == 0 {
            return Err(Error::InvalidArgument("cross-entropy of an empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {c} classes")));
        }
        let mut loss = 0.0;
        let mut grad = vec![0.0; b * c];
        for (i, &y) in labels.iter().enumerate() {
            let row = &self.value[i * c..(i + 1) * c];
            let lse = kernels::log_sum_exp(row.iter().copied());
            loss += lse - row[y];
            for (j, g) in grad[i * c..(i + 1) * c].iter_mut().enumerate() {
                let p = (row[j] - lse).exp();
                *g = (p - if j == y { 1.0 } else { 0.0 }) / b as f64;
            }
        }
        let v = vec![loss / b as f64];
        Ok(self.graph.record(Op::SoftmaxXent(self.id, grad.into()), Vec::new(), v, &[self]))
    }

    /// `out[i,j] = ‖selfᵢ − otherⱼ‖²` for `[K×d]` and `[M×d]` inputs.
    pub fn pairwise_sq_dist(&self, other: &Tensor) -> Result<Tensor> {
        self.check_graph(other, "pairwise_sq_dist")?;
        let (k, d) = self.dims2("pairwise_sq_dist")?;
        let (m, d2) = other.dims2("pairwise_sq_dist")?;
        if d != d2 {
            return Err(Error::dim("pairwise_sq_dist", format!("width {d} vs {d2}")));
        }
        let mut v = Vec::with_capacity(k * m);
        for i in 0..k {
            let a = &self.value[i * d..(i + 1) * d];
            for j in 0..m {
                let b = &other.value[j * d..(j + 1) * d];
                v.push(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
            }
        }
        Ok(self.graph.record(Op::PairwiseSqDist(self.id, other.id), vec![k, m], v, &[self, other]))
    }
}

impl Graph {
    /// Contributions of output adjoint `g` to each operand that needs one.
    pub(super) fn vjp(
        &self,
        op: &Op,
        out: &Tensor,
        g: &Tensor,
        create_graph: bool,
    ) -> Result<Vec<(usize, Tensor)>> {
        let t = |id: usize| self.tensor(id);
        let needs = |id: usize| self.tape.borrow().nodes[id].requires_grad;
        let mut res = Vec::with_capacity(2);
        match op {
            Op::Add(a, b) => {
                if needs(*a) {
                    res.push((*a, g.clone()));
                }
                if needs(*b) {
                    res.push((*b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    res.push((*a, g.clone()));
                }
                if needs(*b) {
                    res.push((*b, g.neg()));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    res.push((*a, g.mul(&t(*b))?));
                }
                if needs(*b) {
                    res.push((*b, g.mul(&t(*a))?));
                }
            }
            Op::Scale(a, c) => res.push((*a, g.scale(*c))),
            Op::AddScalar(a) => res.push((*a, g.clone())),
            Op::Mask(a, m) => res.push((*a, g.mask(m.clone())?)),
            Op::MatMul(a, b) => {
                if needs(*a) {
                    res.push((*a, g.matmul(&t(*b).transpose()?)?));
                }
                if needs(*b) {
                    res.push((*b, t(*a).transpose()?.matmul(g)?));
                }
            }
            Op::Transpose(a) => res.push((*a, g.transpose()?)),
            Op::AddBias(x, bias) => {
                if needs(*x) {
                    res.push((*x, g.clone()));
                }
                if needs(*bias) {
                    res.push((*bias, g.sum_rows()?));
                }
            }
            Op::SumAll(a) => res.push((*a, g.expand(&t(*a).shape)?)),
            Op::Expand(a) => res.push((*a, g.sum().reshape(&t(*a).shape)?)),
            Op::SumRows(a) => res.push((*a, g.broadcast_rows(t(*a).shape[0])?)),
            Op::BroadcastRows(a) => res.push((*a, g.sum_rows()?)),
            Op::RowSum(a) => res.push((*a, g.broadcast_cols(t(*a).shape[1])?)),
            Op::BroadcastCols(a) => res.push((*a, g.row_sum()?)),
            Op::ScaleRows(x, c) => {
                if needs(*x) {
                    res.push((*x, g.scale_rows(&t(*c))?));
                }
                if needs(*c) {
                    res.push((*c, g.mul(&t(*x))?.row_sum()?));
                }
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = t(p).shape[1];
                    if needs(p) {
                        res.push((p, g.slice_cols(start, w)?));
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start) => res.push((*a, g.pad_cols(*start, t(*a).shape[1])?)),
            Op::PadCols(a, start) => res.push((*a, g.slice_cols(*start, t(*a).shape[1])?)),
            Op::Reshape(a) => res.push((*a, g.reshape(&t(*a).shape)?)),
            Op::RowNorm(x) => {
                let coef = g.mul(&out.safe_recip())?;
                res.push((*x, t(*x).scale_rows(&coef)?));
            }
            Op::SafeRecip(a) => res.push((*a, g.mul(&out.square().neg())?)),
            Op::SoftmaxXent(logits, grad) => {
                if create_graph {
                    return Err(Error::Unsupported(
                        "second-order gradient through softmax_cross_entropy".into(),
                    ));
                }
                res.push((*logits, g.expand(&t(*logits).shape)?.mask(grad.clone())?));
            }
            Op::PairwiseSqDist(a, b) => {
                let (ta, tb) = (t(*a), t(*b));
                if needs(*a) {
                    let ga = ta.scale_rows(&g.row_sum()?)?.sub(&g.matmul(&tb)?)?;
                    res.push((*a, ga.scale(2.0)));
                }
                if needs(*b) {
                    let gt = g.transpose()?;
                    let gb = tb.scale_rows(&gt.row_sum()?)?.sub(&gt.matmul(&ta)?)?;
                    res.push((*b, gb.scale(2.0)));
                }
            }
        }
        Ok(res)
    }
}
