use super::{Array, HALF_LN_2PI};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    SwapAxes01(Var),
    MeanAxis1(Var),
    ConcatLast(Var, Var),
    RepeatRows(Var, usize),
    GatherLast(Var, Vec<usize>),
    SumLast(Var),
    Sum(Var),
    Mean(Var),
    GaussianLogProb { x: Vec<f64>, mu: Var, sigma: Var },
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
}

/// Append-only record of primitive operations.
///
/// Nodes are appended in evaluation order, so their indices already form a
/// topological order and the backward sweep simply walks them in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Projections of one multi-head self-attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
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

    fn push(&mut self, value: Array, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers a leaf (parameter or constant input).
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// Affine map `x·W + b` over the last axis.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if ws.len() != 2 || bs != [ws[1]] || xs.last() != Some(&ws[0]) {
            return Err(Error::Dimension(format!(
                "linear: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let (fan_in, fan_out) = (ws[0], ws[1]);
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = fan_out;
        let xv = self.value(x);
        let rows = xv.rows();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; rows * fan_out];
        for r in 0..rows {
            let xr = &xv.data()[r * fan_in..(r + 1) * fan_in];
            let or = &mut out[r * fan_out..(r + 1) * fan_out];
            or.copy_from_slice(bv);
            for (p, &xp) in xr.iter().enumerate() {
                if xp == 0.0 {
                    continue;
                }
                let wr = &wv[p * fan_out..(p + 1) * fan_out];
                for (o, &wpo) in or.iter_mut().zip(wr) {
                    *o += xp * wpo;
                }
            }
        }
        Ok(self.push(Array::new(shape, out)?, Op::Linear { x, w, b }))
    }

    fn elementwise2(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Array::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, op))
    }

    fn elementwise1(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| f(*x)).collect();
        let value = Array::new(av.shape().to_vec(), data).expect("same length");
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise2(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise2(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise2(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise2(a, b, "minimum", f64::min, Op::Minimum(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.elementwise1(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn offset(&mut self, a: Var, delta: f64) -> Var {
        self.elementwise1(a, |x| x + delta, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.elementwise1(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.elementwise1(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.elementwise1(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.elementwise1(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.elementwise1(a, |x| x * x, Op::Square(a))
    }

    /// Clamp into `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.elementwise1(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).last_dim();
        if d == 0 || self.shape(gain) != [d] || self.shape(shift) != [d] {
            return Err(Error::Dimension(format!(
                "layer_norm: input {:?}, gain {:?}, shift {:?}",
                self.shape(x),
                self.shape(gain),
                self.shape(shift)
            )));
        }
        let xv = self.value(x);
        let rows = xv.rows();
        let g = self.value(gain).data();
        let s = self.value(shift).data();
        let mut out = vec![0.0; xv.len()];
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            rstd[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + s[j];
            }
        }
        let value = Array::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                rstd,
            },
        ))
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_array(self.value(a));
        self.push(value, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let k = av.last_dim();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(k.max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let value = Array::new(av.shape().to_vec(), out).expect("same length");
        self.push(value, Op::LogSoftmax(a))
    }

    /// Scaled dot-product attention of already-projected queries, keys and
    /// values of shape `[b, L, d]`, split into `heads` heads of width `d/heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        self.same_shape(q, k, "attention")?;
        self.same_shape(q, v, "attention")?;
        let shape = self.shape(q).to_vec();
        if shape.len() != 3 {
            return Err(Error::Dimension(format!("attention expects [b, L, d], got {shape:?}")));
        }
        let (b, l, d) = (shape[0], shape[1], shape[2]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("{heads} heads do not divide width {d}")));
        }
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; b * heads * l * l];
        let mut out = vec![0.0; b * l * d];
        for bi in 0..b {
            let base = bi * l * d;
            for h in 0..heads {
                let off = h * dk;
                let pbase = (bi * heads + h) * l * l;
                for i in 0..l {
                    let qi = &qd[base + i * d + off..base + i * d + off + dk];
                    let prow = &mut probs[pbase + i * l..pbase + (i + 1) * l];
                    for (j, p) in prow.iter_mut().enumerate() {
                        let kj = &kd[base + j * d + off..base + j * d + off + dk];
                        *p = dot(qi, kj) * scale;
                    }
                    softmax_in_place(prow);
                    let orow = &mut out[base + i * d + off..base + i * d + off + dk];
                    for (j, &p) in prow.iter().enumerate() {
                        let vj = &vd[base + j * d + off..base + j * d + off + dk];
                        for (o, &vv) in orow.iter_mut().zip(vj) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Array::new(shape, out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        ))
    }

    /// Multi-head self-attention over the middle axis of `[b, L, d]`.
    pub fn multi_head_self_attention(
        &mut self,
        x: Var,
        p: &AttentionVars,
        heads: usize,
    ) -> Result<Var> {
        let d = self.value(x).last_dim();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("{heads} heads do not divide width {d}")));
        }
        let q = self.linear(x, p.wq, p.bq)?;
        let k = self.linear(x, p.wk, p.bk)?;
        let v = self.linear(x, p.wv, p.bv)?;
        let a = self.attention(q, k, v, heads)?;
        self.linear(a, p.wo, p.bo)
    }

    /// `[a, b, ...] -> [b, a, ...]`.
    pub fn swap_axes01(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(Error::Dimension(format!("swap_axes01 on {shape:?}")));
        }
        let (n0, n1) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for i in 0..n0 {
            for j in 0..n1 {
                let s = (i * n1 + j) * inner;
                let t = (j * n0 + i) * inner;
                out[t..t + inner].copy_from_slice(&src[s..s + inner]);
            }
        }
        let mut new_shape = shape;
        new_shape.swap(0, 1);
        Ok(self.push(Array::new(new_shape, out)?, Op::SwapAxes01(a)))
    }

    /// Mean over the middle axis of `[a, b, c]`, giving `[a, c]`.
    pub fn mean_axis1(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 3 || shape[1] == 0 {
            return Err(Error::Dimension(format!("mean_axis1 on {shape:?}")));
        }
        let (n0, n1, n2) = (shape[0], shape[1], shape[2]);
        let src = self.value(a).data();
        let mut out = vec![0.0; n0 * n2];
        for i in 0..n0 {
            for j in 0..n1 {
                let s = (i * n1 + j) * n2;
                for c in 0..n2 {
                    out[i * n2 + c] += src[s + c];
                }
            }
        }
        let inv = 1.0 / n1 as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(self.push(Array::new(vec![n0, n2], out)?, Op::MeanAxis1(a)))
    }

    /// Concatenates two `[r, p]` and `[r, q]` arrays along the last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::Dimension(format!("concat_last: {sa:?} and {sb:?}")));
        }
        let (r, p, q) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(r * (p + q));
        for i in 0..r {
            out.extend_from_slice(&ad[i * p..(i + 1) * p]);
            out.extend_from_slice(&bd[i * q..(i + 1) * q]);
        }
        Ok(self.push(Array::new(vec![r, p + q], out)?, Op::ConcatLast(a, b)))
    }

    /// Tiles a `[1, c]` row `n` times into `[n, c]`.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != 1 {
            return Err(Error::Dimension(format!("repeat_rows on {s:?}")));
        }
        let c = s[1];
        let row = self.value(a).data().to_vec();
        let out: Vec<f64> = (0..n).flat_map(|_| row.iter().copied()).collect();
        Ok(self.push(Array::new(vec![n, c], out)?, Op::RepeatRows(a, n)))
    }

    /// Picks `a[r, idx[r]]` for every row of a `[R, K]` array.
    pub fn gather_last(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != idx.len() || idx.iter().any(|&i| i >= s[1]) {
            return Err(Error::Dimension(format!(
                "gather_last on {s:?} with {} indices",
                idx.len()
            )));
        }
        let k = s[1];
        let ad = self.value(a).data();
        let out: Vec<f64> = idx.iter().enumerate().map(|(r, &i)| ad[r * k + i]).collect();
        let n = out.len();
        Ok(self.push(Array::new(vec![n], out)?, Op::GatherLast(a, idx.to_vec())))
    }

    /// Sums the last axis away.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let k = av.last_dim().max(1);
        let out: Vec<f64> = av.data().chunks(k).map(|c| c.iter().sum()).collect();
        let mut shape = av.shape().to_vec();
        shape.pop();
        if shape.is_empty() {
            shape.push(1);
        }
        let value = Array::new(shape, out).expect("consistent");
        self.push(value, Op::SumLast(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Array::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.sum() / av.len().max(1) as f64;
        self.push(Array::scalar(m), Op::Mean(a))
    }

    /// Elementwise log density of `N(mu, sigma^2)` at constant points `x`.
    pub fn gaussian_log_prob(&mut self, x: &Array, mu: Var, sigma: Var) -> Result<Var> {
        self.same_shape(mu, sigma, "gaussian_log_prob")?;
        if x.shape() != self.shape(mu) {
            return Err(Error::Dimension(format!(
                "gaussian_log_prob: x {:?}, mu {:?}",
                x.shape(),
                self.shape(mu)
            )));
        }
        let (md, sd) = (self.value(mu).data(), self.value(sigma).data());
        if let Some(bad) = sd.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::Domain(format!("sigma must be positive, got {bad}")));
        }
        let out: Vec<f64> = x
            .data()
            .iter()
            .zip(md.iter().zip(sd))
            .map(|(&xv, (&m, &s))| gaussian_log_density(xv, m, s))
            .collect();
        let value = Array::new(x.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::GaussianLogProb {
                x: x.data().to_vec(),
                mu,
                sigma,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (fan_in, fan_out) = (ws[0], ws[1]);
                let xd = val(*x);
                let wd = val(*w);
                let rows = xd.len() / fan_in;
                let mut dx = vec![0.0; xd.len()];
                let mut dw = vec![0.0; wd.len()];
                let mut db = vec![0.0; fan_out];
                for r in 0..rows {
                    let gr = &g[r * fan_out..(r + 1) * fan_out];
                    let xr = &xd[r * fan_in..(r + 1) * fan_in];
                    for (o, gv) in db.iter_mut().zip(gr) {
                        *o += gv;
                    }
                    for p in 0..fan_in {
                        let wr = &wd[p * fan_out..(p + 1) * fan_out];
                        dx[r * fan_in + p] = dot(gr, wr);
                        let xp = xr[p];
                        if xp != 0.0 {
                            let dwr = &mut dw[p * fan_out..(p + 1) * fan_out];
                            for (o, gv) in dwr.iter_mut().zip(gr) {
                                *o += xp * gv;
                            }
                        }
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
                accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                accumulate(grads, *a, g.iter().zip(bd).map(|(g, y)| g * y).collect());
                accumulate(grads, *b, g.iter().zip(ad).map(|(g, x)| g * x).collect());
            }
            Op::Minimum(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                let mut da = vec![0.0; g.len()];
                let mut db = vec![0.0; g.len()];
                for k in 0..g.len() {
                    if ad[k] <= bd[k] {
                        da[k] = g[k];
                    } else {
                        db[k] = g[k];
                    }
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Scale(a, f) => accumulate(grads, *a, g.iter().map(|v| v * f).collect()),
            Op::Offset(a) => accumulate(grads, *a, g.to_vec()),
            Op::Relu(a) => {
                let ad = val(*a);
                let d = g.iter().zip(ad).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 });
                accumulate(grads, *a, d.collect());
            }
            Op::Sigmoid(a) => {
                let d = g.iter().zip(out).map(|(g, s)| g * s * (1.0 - s));
                accumulate(grads, *a, d.collect());
            }
            Op::Exp(a) => accumulate(grads, *a, g.iter().zip(out).map(|(g, e)| g * e).collect()),
            Op::Log(a) => {
                let ad = val(*a);
                accumulate(grads, *a, g.iter().zip(ad).map(|(g, x)| g / x).collect());
            }
            Op::Square(a) => {
                let ad = val(*a);
                accumulate(grads, *a, g.iter().zip(ad).map(|(g, x)| 2.0 * g * x).collect());
            }
            Op::Clamp(a, lo, hi) => {
                let ad = val(*a);
                let d = g
                    .iter()
                    .zip(ad)
                    .map(|(g, x)| if x < lo || x > hi { 0.0 } else { *g });
                accumulate(grads, *a, d.collect());
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                rstd,
            } => {
                let gd = val(*gain);
                let d = gd.len();
                let rows = rstd.len();
                let mut dx = vec![0.0; xhat.len()];
                let mut dgain = vec![0.0; d];
                let mut dshift = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    for j in 0..d {
                        dgain[j] += gr[j] * hr[j];
                        dshift[j] += gr[j];
                        dxhat[j] = gr[j] * gd[j];
                    }
                    let mean_dh = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dh_h = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dx[r * d + j] = rstd[r] * (dxhat[j] - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gain, dgain);
                accumulate(grads, *shift, dshift);
            }
            Op::Softmax(a) => {
                let k = node.value.last_dim().max(1);
                let mut d = vec![0.0; g.len()];
                for ((dr, gr), pr) in d.chunks_mut(k).zip(g.chunks(k)).zip(out.chunks(k)) {
                    let s = dot(gr, pr);
                    for j in 0..k {
                        dr[j] = pr[j] * (gr[j] - s);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::LogSoftmax(a) => {
                let k = node.value.last_dim().max(1);
                let mut d = vec![0.0; g.len()];
                for ((dr, gr), lr) in d.chunks_mut(k).zip(g.chunks(k)).zip(out.chunks(k)) {
                    let s: f64 = gr.iter().sum();
                    for j in 0..k {
                        dr[j] = gr[j] - lr[j].exp() * s;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let shape = node.value.shape();
                let (b, l, d) = (shape[0], shape[1], shape[2]);
                let dk = d / heads;
                let scale = 1.0 / (dk as f64).sqrt();
                let (qd, kd, vd) = (val(*q), val(*k), val(*v));
                let mut dq = vec![0.0; qd.len()];
                let mut dkk = vec![0.0; kd.len()];
                let mut dv = vec![0.0; vd.len()];
                let mut ds = vec![0.0; l];
                for bi in 0..b {
                    let base = bi * l * d;
                    for h in 0..*heads {
                        let off = h * dk;
                        let pbase = (bi * heads + h) * l * l;
                        for i in 0..l {
                            let prow = &probs[pbase + i * l..pbase + (i + 1) * l];
                            let gi = &g[base + i * d + off..base + i * d + off + dk];
                            // dP_ij = g_i . v_j ; dV_j += P_ij g_i
                            for j in 0..l {
                                let vj = &vd[base + j * d + off..base + j * d + off + dk];
                                ds[j] = dot(gi, vj);
                                let p = prow[j];
                                let dvj = &mut dv[base + j * d + off..base + j * d + off + dk];
                                for (o, gv) in dvj.iter_mut().zip(gi) {
                                    *o += p * gv;
                                }
                            }
                            let s = dot(&ds, prow);
                            for j in 0..l {
                                ds[j] = prow[j] * (ds[j] - s) * scale;
                            }
                            let qi = &qd[base + i * d + off..base + i * d + off + dk];
                            for j in 0..l {
                                let w = ds[j];
                                if w == 0.0 {
                                    continue;
                                }
                                let kj = &kd[base + j * d + off..base + j * d + off + dk];
                                let dqi = &mut dq[base + i * d + off..base + i * d + off + dk];
                                for (o, kv) in dqi.iter_mut().zip(kj) {
                                    *o += w * kv;
                                }
                                let dkj = &mut dkk[base + j * d + off..base + j * d + off + dk];
                                for (o, qv) in dkj.iter_mut().zip(qi) {
                                    *o += w * qv;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *q, dq);
                accumulate(grads, *k, dkk);
                accumulate(grads, *v, dv);
            }
            Op::SwapAxes01(a) => {
                let src_shape = self.shape(*a);
                let (n0, n1) = (src_shape[0], src_shape[1]);
                let inner: usize = src_shape[2..].iter().product();
                let mut d = vec![0.0; g.len()];
                for i in 0..n0 {
                    for j in 0..n1 {
                        let s = (i * n1 + j) * inner;
                        let t = (j * n0 + i) * inner;
                        d[s..s + inner].copy_from_slice(&g[t..t + inner]);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::MeanAxis1(a) => {
                let s = self.shape(*a);
                let (n0, n1, n2) = (s[0], s[1], s[2]);
                let inv = 1.0 / n1 as f64;
                let mut d = vec![0.0; n0 * n1 * n2];
                for i in 0..n0 {
                    for j in 0..n1 {
                        for c in 0..n2 {
                            d[(i * n1 + j) * n2 + c] = g[i * n2 + c] * inv;
                        }
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::ConcatLast(a, b) => {
                let p = self.shape(*a)[1];
                let q = self.shape(*b)[1];
                let r = g.len() / (p + q);
                let mut da = Vec::with_capacity(r * p);
                let mut db = Vec::with_capacity(r * q);
                for row in g.chunks(p + q) {
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::RepeatRows(a, n) => {
                let c = self.shape(*a)[1];
                let mut d = vec![0.0; c];
                for r in 0..*n {
                    for j in 0..c {
                        d[j] += g[r * c + j];
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::GatherLast(a, idx) => {
                let k = self.shape(*a)[1];
                let mut d = vec![0.0; idx.len() * k];
                for (r, &i) in idx.iter().enumerate() {
                    d[r * k + i] = g[r];
                }
                accumulate(grads, *a, d);
            }
            Op::SumLast(a) => {
                let k = self.nodes[a.0].value.last_dim().max(1);
                let d = g.iter().flat_map(|gv| std::iter::repeat(*gv).take(k)).collect();
                accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len();
                accumulate(grads, *a, vec![g[0] / n.max(1) as f64; n]);
            }
            Op::GaussianLogProb { x, mu, sigma } => {
                let (md, sd) = (val(*mu), val(*sigma));
                let mut dmu = vec![0.0; g.len()];
                let mut dsigma = vec![0.0; g.len()];
                for k in 0..g.len() {
                    let z = (x[k] - md[k]) / sd[k];
                    dmu[k] = g[k] * z / sd[k];
                    dsigma[k] = g[k] * (z * z - 1.0) / sd[k];
                }
                accumulate(grads, *mu, dmu);
                accumulate(grads, *sigma, dsigma);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, d: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(d) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; exactly zero when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Array {
        let shape = self.shapes[v.0].clone();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Array::new(shape, g.clone()).expect("gradient matches node shape"),
            None => Array::zeros(&shape),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn gaussian_log_density(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - HALF_LN_2PI
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

pub(crate) fn softmax_array(a: &Array) -> Array {
    let k = a.last_dim().max(1);
    let mut out = a.data().to_vec();
    for row in out.chunks_mut(k) {
        softmax_in_place(row);
    }
    Array::new(a.shape().to_vec(), out).expect("same length")
}
