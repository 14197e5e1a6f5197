use crate::kernels::{self, ConvGeometry};
use crate::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Square(usize),
    Log(usize),
    Exp(usize),
    Softplus(usize),
    Relu(usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Matmul { a: usize, b: usize, m: usize, k: usize, n: usize },
    BiasAdd { x: usize, b: usize },
    Conv2d { x: usize, k: usize, b: Option<usize>, geom: ConvGeometry, batch: usize },
    MaxPool2d { x: usize, argmax: Vec<usize> },
    Softmax(usize),
    CrossEntropy { logits: usize, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only operation record. Nodes are stored in creation order, which is
/// a topological order, so reverse replay visits every node exactly once.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Records a leaf; it participates in gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t.detached(), Op::Leaf, rg)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.detached(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf after one or more `backward` calls.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Adds this tape's accumulated gradient for `v` into `target.grad`.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor) {
        if let Some(g) = self.grad(v) {
            target.accumulate_grad(g);
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::dim(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = &self.nodes[a.0].value;
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a.0]);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a.0, b.0), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a.0, b.0), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a.0, b.0), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a.0, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a.0), |x| x + c)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a.0), |x| x * x)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a.0), f64::ln)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.0), f64::exp)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a.0), kernels::softplus)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a.0), |x| x.max(0.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(s), Op::Mean(a.0), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).detached().reshaped(shape)?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(value, Op::Reshape(a.0), rg))
    }

    /// `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::dim(format!(
                "matmul: cannot multiply {sa:?} by {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(value, Op::Matmul { a: a.0, b: b.0, m, k, n }, rg))
    }

    /// Adds `b[n]` to every trailing-axis row of `x[..., n]`.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(TensorError::dim(format!(
                "bias_add: bias {sb:?} does not match trailing axis of {sx:?}"
            )));
        }
        let n = sb[0];
        let bias = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias[i % n])
            .collect();
        let value = Tensor::new(sx.to_vec(), data)?;
        let rg = self.rg(&[x.0, b.0]);
        Ok(self.push(value, Op::BiasAdd { x: x.0, b: b.0 }, rg))
    }

    /// Cross-correlation of `x` (`[C,H,W]` or `[N,C,H,W]`) with `kernel`
    /// (`[C_out,C_in,kh,kw]`), plus optional per-output-channel `bias`.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        let (batch, c_in, h, w) = match sx.as_slice() {
            [c, h, w] => (None, *c, *h, *w),
            [n, c, h, w] => (Some(*n), *c, *h, *w),
            _ => return Err(TensorError::dim(format!("conv2d: input {sx:?} is not 3-D or 4-D"))),
        };
        if sk.len() != 4 || sk[1] != c_in {
            return Err(TensorError::dim(format!(
                "conv2d: kernels {sk:?} do not match input {sx:?}"
            )));
        }
        if stride == 0 {
            return Err(TensorError::Contract("conv2d: stride must be positive".into()));
        }
        let geom = ConvGeometry {
            c_in,
            h,
            w,
            c_out: sk[0],
            kh: sk[2],
            kw: sk[3],
            stride,
            padding,
        };
        let (oh, ow) = geom.output_dims().ok_or_else(|| {
            TensorError::dim(format!(
                "conv2d: kernel {}x{} larger than padded input {}x{} (padding {padding})",
                geom.kh, geom.kw, h, w
            ))
        })?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.c_out] {
                return Err(TensorError::dim(format!(
                    "conv2d: bias {:?} does not match {} output channels",
                    self.shape(b),
                    geom.c_out
                )));
            }
        }
        let n = batch.unwrap_or(1);
        let in_len = geom.input_len();
        let out_len = geom.output_len();
        let mut out = vec![0.0; n * out_len];
        {
            let xd = self.value(x).data();
            let kd = self.value(kernel).data();
            let bd = bias.map(|b| self.value(b).data());
            for i in 0..n {
                kernels::conv2d_forward(
                    &geom,
                    &xd[i * in_len..(i + 1) * in_len],
                    kd,
                    bd,
                    &mut out[i * out_len..(i + 1) * out_len],
                );
            }
        }
        let shape = match batch {
            Some(n) => vec![n, geom.c_out, oh, ow],
            None => vec![geom.c_out, oh, ow],
        };
        let value = Tensor::new(shape, out)?;
        let mut ids = vec![x.0, kernel.0];
        ids.extend(bias.map(|b| b.0));
        let rg = self.rg(&ids);
        Ok(self.push(
            value,
            Op::Conv2d {
                x: x.0,
                k: kernel.0,
                b: bias.map(|b| b.0),
                geom,
                batch: n,
            },
            rg,
        ))
    }

    /// Non-overlapping `size×size` max-pool over the two trailing axes.
    pub fn maxpool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 3 || size == 0 || sx[sx.len() - 2] < size || sx[sx.len() - 1] < size {
            return Err(TensorError::dim(format!("maxpool2d: cannot pool {sx:?} by {size}")));
        }
        let h = sx[sx.len() - 2];
        let w = sx[sx.len() - 1];
        let planes: usize = sx[..sx.len() - 2].iter().product();
        let (data, argmax) = kernels::maxpool2d_forward(self.value(x).data(), planes, h, w, size);
        let mut shape = sx[..sx.len() - 2].to_vec();
        shape.extend([h / size, w / size]);
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(value, Op::MaxPool2d { x: x.0, argmax }, rg))
    }

    fn check_rows(&self, a: Var, what: &str) -> Result<usize> {
        let s = self.shape(a);
        let n = *s.last().unwrap();
        if s.len() > 2 || n < 2 {
            return Err(TensorError::dim(format!("{what}: expected [n] or [N,n] with n>=2, got {s:?}")));
        }
        if self.value(a).data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::Numeric(format!("{what}: NaN in input")));
        }
        Ok(n)
    }

    /// Softmax over the trailing axis of `[n]` or `[N,n]`.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.check_rows(a, "softmax")?;
        let t = self.value(a);
        let mut out = vec![0.0; t.numel()];
        for (row, o) in t.data().chunks(n).zip(out.chunks_mut(n)) {
            kernels::softmax_row(row, o);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(value, Op::Softmax(a.0), rg))
    }

    /// Mean categorical cross-entropy of softmax(`logits` rows) against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let n = self.check_rows(logits, "cross_entropy")?;
        let t = self.value(logits);
        let rows = t.numel() / n;
        if labels.len() != rows {
            return Err(TensorError::dim(format!(
                "cross_entropy: {} labels for {rows} rows",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n) {
            return Err(TensorError::Contract(format!("cross_entropy: label {bad} out of range")));
        }
        let mut probs = vec![0.0; t.numel()];
        let mut total = 0.0;
        for (r, row) in t.data().chunks(n).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[labels[r]];
            kernels::softmax_row(row, &mut probs[r * n..(r + 1) * n]);
        }
        let value = Tensor::scalar(total / rows as f64);
        let rg = self.rg(&[logits.0]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Replays the tape from `loss` and adds the adjoints into every
    /// gradient-requiring leaf. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, v)| *b += v),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = nodes[i].value.data();
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[j].requires_grad {
                return;
            }
            let buf = adj[j].get_or_insert_with(|| vec![0.0; nodes[j].value.numel()]);
            f(buf);
        };
        let val = |j: usize| nodes[j].value.data();
        match &nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * vb[k];
                    }
                });
                acc(*b, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * va[k];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |d| add_into(d, g)),
            Op::Square(a) => {
                let va = val(*a);
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += 2.0 * va[k] * g[k];
                    }
                });
            }
            Op::Log(a) => {
                let va = val(*a);
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] / va[k];
                    }
                });
            }
            Op::Exp(a) => acc(*a, &mut |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * out[k];
                }
            }),
            Op::Softplus(a) => {
                let va = val(*a);
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * kernels::sigmoid(va[k]);
                    }
                });
            }
            Op::Relu(a) => {
                let va = val(*a);
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        if va[k] > 0.0 {
                            d[k] += g[k];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = nodes[*a].value.numel() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::Matmul { a, b, m, k, n } => {
                let (va, vb) = (val(*a), val(*b));
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                acc(*a, &mut |d| add_into(d, &kernels::matmul_transpose_b(g, vb, *m, *n, *k)));
                acc(*b, &mut |d| add_into(d, &kernels::matmul_transpose_a(va, g, *m, *k, *n)));
            }
            Op::BiasAdd { x, b } => {
                acc(*x, &mut |d| add_into(d, g));
                acc(*b, &mut |d| {
                    let n = d.len();
                    for (k, gv) in g.iter().enumerate() {
                        d[k % n] += gv;
                    }
                });
            }
            Op::Conv2d { x, k, b, geom, batch } => {
                let (in_len, out_len) = (geom.input_len(), geom.output_len());
                let (vx, vk) = (val(*x), val(*k));
                let mut dx = nodes[*x].requires_grad.then(|| vec![0.0; vx.len()]);
                let mut dk = nodes[*k].requires_grad.then(|| vec![0.0; vk.len()]);
                let mut db = b
                    .filter(|&bi| nodes[bi].requires_grad)
                    .map(|_| vec![0.0; geom.c_out]);
                for s in 0..*batch {
                    kernels::conv2d_backward(
                        geom,
                        &vx[s * in_len..(s + 1) * in_len],
                        vk,
                        &g[s * out_len..(s + 1) * out_len],
                        dx.as_mut().map(|d| &mut d[s * in_len..(s + 1) * in_len]),
                        dk.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                }
                if let Some(d) = dx {
                    acc(*x, &mut |t| add_into(t, &d));
                }
                if let Some(d) = dk {
                    acc(*k, &mut |t| add_into(t, &d));
                }
                if let (Some(d), Some(bi)) = (db, b) {
                    acc(*bi, &mut |t| add_into(t, &d));
                }
            }
            Op::MaxPool2d { x, argmax } => acc(*x, &mut |d| {
                for (o, &src) in argmax.iter().enumerate() {
                    d[src] += g[o];
                }
            }),
            Op::Softmax(a) => {
                let n = *nodes[i].value.shape().last().unwrap();
                acc(*a, &mut |d| {
                    for r in 0..out.len() / n {
                        let y = &out[r * n..(r + 1) * n];
                        let gy = &g[r * n..(r + 1) * n];
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            d[r * n + c] += y[c] * (gy[c] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let rows = labels.len();
                let n = probs.len() / rows;
                let scale = g[0] / rows as f64;
                acc(*logits, &mut |d| {
                    for (r, &l) in labels.iter().enumerate() {
                        for c in 0..n {
                            let target = if c == l { 1.0 } else { 0.0 };
                            d[r * n + c] += scale * (probs[r * n + c] - target);
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
