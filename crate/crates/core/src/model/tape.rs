//! Minimal reverse-mode differentiation over dense matrices, covering the
//! handful of fused operations the predictor needs.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

pub type Mat = Array2<f64>;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    /// `x @ w[:, col] + b[0, col]`, a single output column.
    LinearColumn { x: Var, w: Var, b: Var, col: usize },
    Add(Var, Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Mat, inv_std: Vec<f64> },
    Gelu { x: Var },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<Mat> },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
}

/// ALiBi slope of head `h` out of `heads`.
pub fn alibi_slope(h: usize, heads: usize) -> f64 {
    2f64.powf(-8.0 * (h + 1) as f64 / heads as f64)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf for parameter `id`; repeated calls return the same node so its
    /// gradient accumulates across uses.
    pub fn param(&mut self, id: usize, value: &Mat) -> Var {
        if self.params.len() <= id {
            self.params.resize(id + 1, None);
        }
        if let Some(v) = self.params[id] {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf);
        self.params[id] = Some(v);
        v
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let out = self.value(x).dot(self.value(w)) + self.value(b);
        self.push(out, Op::Linear { x, w, b })
    }

    pub fn linear_column(&mut self, x: Var, w: Var, b: Var, col: usize) -> Var {
        let wc = self.value(w).slice(s![.., col..col + 1]).to_owned();
        let out = self.value(x).dot(&wc) + self.value(b)[[0, col]];
        self.push(out, Op::LinearColumn { x, w, b, col })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(gelu);
        self.push(out, Op::Gelu { x })
    }

    /// Multi-head causal attention with ALiBi recency bias. Query row `i`
    /// sees key rows `0..=i` only.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (t, d) = qv.dim();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros((t, d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = qv.slice(cols).dot(&kv.slice(cols).t()) * scale;
            let slope = alibi_slope(h, heads);
            for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    row[j] -= slope * (i - j) as f64;
                    max = max.max(row[j]);
                }
                let mut sum = 0.0;
                for (j, x) in row.iter_mut().enumerate() {
                    if j <= i {
                        *x = (*x - max).exp();
                        sum += *x;
                    } else {
                        *x = 0.0;
                    }
                }
                row.mapv_inplace(|x| x / sum);
            }
            out.slice_mut(cols).assign(&scores.dot(&vv.slice(cols)));
            probs.push(scores);
        }
        self.push(out, Op::Attention { q, k, v, heads, probs })
    }

    /// Backpropagates from the given seed gradients and returns the
    /// gradient of every parameter leaf, indexed by parameter id
    /// (`None` for parameters that did not take part).
    pub fn backward(&self, seeds: &[(Var, Mat)]) -> Vec<Option<Mat>> {
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            accumulate(&mut grads, *v, g.view());
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Linear { x, w, b } => {
                    accumulate(&mut grads, *x, g.dot(&self.value(*w).t()).view());
                    accumulate(&mut grads, *w, self.value(*x).t().dot(&g).view());
                    accumulate(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)).view());
                }
                Op::LinearColumn { x, w, b, col } => {
                    let wv = self.value(*w);
                    let wc = wv.slice(s![.., *col..*col + 1]);
                    accumulate(&mut grads, *x, g.dot(&wc.t()).view());
                    let mut gw = Mat::zeros(wv.dim());
                    gw.slice_mut(s![.., *col..*col + 1]).assign(&self.value(*x).t().dot(&g));
                    accumulate(&mut grads, *w, gw.view());
                    let mut gb = Mat::zeros(self.value(*b).dim());
                    gb[[0, *col]] = g.sum();
                    accumulate(&mut grads, *b, gb.view());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.view());
                    accumulate(&mut grads, *b, g.view());
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let gv = self.value(*gain);
                    accumulate(&mut grads, *gain, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)).view());
                    accumulate(&mut grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)).view());
                    let dxhat = &g * gv;
                    let d = xhat.ncols() as f64;
                    let mut dx = Mat::zeros(xhat.dim());
                    for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let mean_d = dh.sum() / d;
                        let mean_dx = dh.dot(&xh) / d;
                        Zip::from(&mut row).and(&dh).and(&xh).for_each(|o, &a, &b| {
                            *o = inv_std[r] * (a - mean_d - b * mean_dx);
                        });
                    }
                    accumulate(&mut grads, *x, dx.view());
                }
                Op::Gelu { x } => {
                    let mut dx = self.value(*x).mapv(gelu_grad);
                    dx *= &g;
                    accumulate(&mut grads, *x, dx.view());
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qv.ncols();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Mat::zeros(qv.dim());
                    let mut dk = Mat::zeros(kv.dim());
                    let mut dv = Mat::zeros(vv.dim());
                    for (h, p) in probs.iter().enumerate() {
                        let cols = s![.., h * dh..(h + 1) * dh];
                        let go = g.slice(cols);
                        dv.slice_mut(cols).assign(&p.t().dot(&go));
                        let dp = go.dot(&vv.slice(cols).t());
                        let mut ds = p * &dp;
                        for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                            let inner = row.sum();
                            Zip::from(&mut row).and(&prow).for_each(|o, &pp| *o -= pp * inner);
                        }
                        ds *= scale;
                        dq.slice_mut(cols).assign(&ds.dot(&kv.slice(cols)));
                        dk.slice_mut(cols).assign(&ds.t().dot(&qv.slice(cols)));
                    }
                    accumulate(&mut grads, *q, dq.view());
                    accumulate(&mut grads, *k, dk.view());
                    accumulate(&mut grads, *v, dv.view());
                }
            }
        }
        self.params
            .iter()
            .map(|p| p.and_then(|v| grads[v.0].take()))
            .collect()
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: ArrayView2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g.to_owned()),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x.powi(3))).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x.powi(3));
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    // Scalar objective sum(out * probe) over a small graph using every op,
    // differentiated with respect to each of its parameters.
    fn objective(params: &[Mat], probe: &Mat) -> (f64, Vec<Option<Mat>>) {
        let mut t = Tape::new();
        let x = t.param(0, &params[0]);
        let w = t.param(1, &params[1]);
        let b = t.param(2, &params[2]);
        let g = t.param(3, &params[3]);
        let be = t.param(4, &params[4]);
        let h = t.linear(x, w, b);
        let n = t.layer_norm(h, g, be);
        let a = t.gelu(n);
        let att = t.attention(a, n, h, 2);
        let sum = t.add(att, a);
        let col = t.linear_column(sum, w, b, 1);
        let out_val = t.value(sum);
        let f = (out_val * probe).sum() + t.value(col).sum();
        let grads = t.backward(&[(sum, probe.clone()), (col, Mat::ones((5, 1)))]);
        (f, grads)
    }

    #[test]
    fn all_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = vec![
            rand_mat(&mut rng, 5, 4),
            rand_mat(&mut rng, 4, 4),
            rand_mat(&mut rng, 1, 4),
            rand_mat(&mut rng, 1, 4),
            rand_mat(&mut rng, 1, 4),
        ];
        let probe = rand_mat(&mut rng, 5, 4);
        let (_, grads) = objective(&params, &probe);
        let h = 1e-5;
        for (pi, p) in params.iter().enumerate() {
            let g = grads[pi].as_ref().unwrap();
            for idx in 0..p.len() {
                let (r, c) = (idx / p.ncols(), idx % p.ncols());
                let mut plus = params.clone();
                plus[pi][[r, c]] += h;
                let mut minus = params.clone();
                minus[pi][[r, c]] -= h;
                let fd = (objective(&plus, &probe).0 - objective(&minus, &probe).0) / (2.0 * h);
                let an = g[[r, c]];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "param {pi}[{r},{c}]: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn attention_rows_are_causal_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let q = t.input(rand_mat(&mut rng, 6, 4));
        let k = t.input(rand_mat(&mut rng, 6, 4));
        let v = t.input(Mat::eye(6).slice(s![.., 0..4]).to_owned());
        t.attention(q, k, v, 2);
        let Op::Attention { probs, .. } = &t.nodes.last().unwrap().op else {
            unreachable!()
        };
        for p in probs {
            for (i, row) in p.rows().into_iter().enumerate() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().skip(i + 1).all(|&x| x == 0.0));
            }
        }
    }
}
