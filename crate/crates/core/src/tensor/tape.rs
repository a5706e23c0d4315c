//! Reverse-mode differentiation over a recorded operation list.

use super::kernels;
use super::{ConvLayer, FeatureMap};

/// A dense array with an explicit shape, used on the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape/data mismatch");
        Self { shape, data }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn chw(&self) -> (usize, usize, usize) {
        match self.shape.as_slice() {
            [c, h, w] => (*c, *h, *w),
            s => panic!("expected a (c, h, w) tensor, got shape {s:?}"),
        }
    }
}

impl From<&FeatureMap> for Tensor {
    fn from(map: &FeatureMap) -> Self {
        let (c, h, w) = map.shape();
        Tensor::new(vec![c, h, w], map.data().to_vec())
    }
}

impl From<FeatureMap> for Tensor {
    fn from(map: FeatureMap) -> Self {
        let (c, h, w) = map.shape();
        Tensor::new(vec![c, h, w], map.into_data())
    }
}

impl Tensor {
    pub fn to_feature_map(&self) -> FeatureMap {
        let (c, h, w) = self.chw();
        FeatureMap::from_raw(c, h, w, self.data.clone())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Tape handles for the parameters of one convolution layer.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub kernel: Var,
    pub bias: Var,
    pub kernel_size: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: Var, kernel: Var, bias: Var, k: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Var, Var),
    Attend { q: Var, k: Var, v: Var, probs: Vec<f64> },
    SpatialMean(Var),
    L2Normalize(Var),
    Linear { x: Var, weight: Var, bias: Var },
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
    Distance(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a computation so gradients of a scalar output can be computed.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
}

impl Gradients {
    /// Gradient for `var`; zeros when the output does not depend on it.
    pub fn get(&self, var: Var) -> Vec<f64> {
        self.grads[var.0].clone().unwrap_or_else(|| vec![0.0; self.sizes[var.0]])
    }

    pub fn get_ref(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn map_leaf(&mut self, map: &FeatureMap) -> Var {
        self.leaf(Tensor::from(map))
    }

    pub fn conv_params(&mut self, layer: &ConvLayer) -> ConvVars {
        let kernel = self.leaf(Tensor::new(layer.kernel_shape().to_vec(), layer.kernel().to_vec()));
        let bias = self.leaf(Tensor::vector(layer.bias().to_vec()));
        ConvVars { kernel, bias, kernel_size: layer.kernel_size() }
    }

    pub fn conv(&mut self, x: Var, layer: ConvVars) -> Var {
        let (c, h, w) = self.value(x).chw();
        let kshape = self.value(layer.kernel).shape.clone();
        assert_eq!(kshape[1], c, "conv input channels");
        let out_ch = kshape[0];
        let mut out = vec![0.0; out_ch * h * w];
        kernels::conv2d_forward(
            &self.value(x).data,
            c,
            h,
            w,
            &self.value(layer.kernel).data,
            &self.value(layer.bias).data,
            out_ch,
            layer.kernel_size,
            &mut out,
        );
        self.push(
            Tensor::new(vec![out_ch, h, w], out),
            Op::Conv { x, kernel: layer.kernel, bias: layer.bias, k: layer.kernel_size },
        )
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape, vb.shape, "elementwise shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| f(*x, *y)).collect();
        let shape = va.shape.clone();
        self.push(Tensor::new(shape, data), op)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let va = self.value(a);
        let data = va.data.iter().map(|x| f(*x)).collect();
        let shape = va.shape.clone();
        self.push(Tensor::new(shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        self.unary(a, |x| x + offset, Op::AddScalar(a))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (ca, h, w) = self.value(a).chw();
        let (cb, hb, wb) = self.value(b).chw();
        assert_eq!((h, w), (hb, wb), "concat spatial mismatch");
        let mut data = self.value(a).data.clone();
        data.extend_from_slice(&self.value(b).data);
        self.push(Tensor::new(vec![ca + cb, h, w], data), Op::Concat(a, b))
    }

    /// Non-local attention over spatial locations; operands are `(c, h, w)`.
    pub fn attend(&mut self, q: Var, k: Var, v: Var) -> Var {
        let (c, h, w) = self.value(q).chw();
        assert_eq!(self.value(k).shape, self.value(q).shape);
        assert_eq!(self.value(v).shape, self.value(q).shape);
        let (out, probs) =
            kernels::attend_forward(&self.value(q).data, &self.value(k).data, &self.value(v).data, c, h * w);
        self.push(Tensor::new(vec![c, h, w], out), Op::Attend { q, k, v, probs })
    }

    /// Per-channel mean over spatial locations: `(c, h, w)` → `(c)`.
    pub fn spatial_mean(&mut self, a: Var) -> Var {
        let (c, h, w) = self.value(a).chw();
        let n = (h * w) as f64;
        let data = self.value(a).data.chunks(h * w).map(|p| p.iter().sum::<f64>() / n).collect();
        debug_assert_eq!(c, self.value(a).data.len() / (h * w));
        self.push(Tensor::vector(data), Op::SpatialMean(a))
    }

    /// L2 normalisation; a zero vector maps to itself with zero gradient.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let v = &self.value(a).data;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let data = if norm > 0.0 { v.iter().map(|x| x / norm).collect() } else { v.clone() };
        let shape = self.value(a).shape.clone();
        self.push(Tensor::new(shape, data), Op::L2Normalize(a))
    }

    /// `weight · x + bias` with `weight` shaped `(out, in)`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let xs = &self.value(x).data;
        let ws = self.value(weight);
        let (out, inp) = (ws.shape[0], ws.shape[1]);
        assert_eq!(xs.len(), inp, "linear input size");
        let bs = &self.value(bias).data;
        let data = (0..out)
            .map(|o| bs[o] + ws.data[o * inp..(o + 1) * inp].iter().zip(xs).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        self.push(Tensor::vector(data), Op::Linear { x, weight, bias })
    }

    /// `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        let z = &self.value(logits).data;
        assert!(label < z.len(), "label out of range");
        let (loss, probs) = cross_entropy_value(z, label);
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, label, probs })
    }

    /// Euclidean distance between two equally shaped tensors.
    pub fn distance(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape, vb.shape, "distance shape mismatch");
        let d = va.data.iter().zip(&vb.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        self.push(Tensor::scalar(d), Op::Distance(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Sum of scalar nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        let mut iter = terms.iter();
        let first = *iter.next().expect("at least one term");
        iter.fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).len(), 1, "backward needs a scalar output");
        self.backward_seeded(output, &[1.0])
    }

    /// Back-propagates an arbitrary upstream gradient `seed` from `output`.
    pub fn backward_seeded(&self, output: Var, seed: &[f64]) -> Gradients {
        let n = output.0 + 1;
        let sizes: Vec<usize> = self.nodes.iter().map(|nd| nd.value.len()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        assert_eq!(seed.len(), sizes[output.0], "seed size");
        grads[output.0] = Some(seed.to_vec());

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value.data;
            let acc = |var: Var, grads: &mut Vec<Option<Vec<f64>>>, f: &dyn Fn(&mut [f64])| {
                let slot = grads[var.0].get_or_insert_with(|| vec![0.0; sizes[var.0]]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => {}
                Op::Conv { x, kernel, bias, k } => {
                    let (c, h, w) = self.value(*x).chw();
                    let out_ch = node.value.shape[0];
                    let mut gx = vec![0.0; c * h * w];
                    let mut gk = vec![0.0; sizes[kernel.0]];
                    let mut gb = vec![0.0; out_ch];
                    kernels::conv2d_backward(
                        &self.value(*x).data,
                        c,
                        h,
                        w,
                        &self.value(*kernel).data,
                        out_ch,
                        *k,
                        &g,
                        &mut gx,
                        &mut gk,
                        &mut gb,
                    );
                    acc(*x, &mut grads, &|s| add_into(s, &gx));
                    acc(*kernel, &mut grads, &|s| add_into(s, &gk));
                    acc(*bias, &mut grads, &|s| add_into(s, &gb));
                }
                Op::Add(a, b) => {
                    acc(*a, &mut grads, &|s| add_into(s, &g));
                    acc(*b, &mut grads, &|s| add_into(s, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut grads, &|s| add_into(s, &g));
                    acc(*b, &mut grads, &|s| {
                        for (d, v) in s.iter_mut().zip(&g) {
                            *d -= v;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                    acc(*a, &mut grads, &|s| {
                        for ((d, v), o) in s.iter_mut().zip(&g).zip(vb) {
                            *d += v * o;
                        }
                    });
                    acc(*b, &mut grads, &|s| {
                        for ((d, v), o) in s.iter_mut().zip(&g).zip(va) {
                            *d += v * o;
                        }
                    });
                }
                Op::Scale(a, f) => acc(*a, &mut grads, &|s| {
                    for (d, v) in s.iter_mut().zip(&g) {
                        *d += v * f;
                    }
                }),
                Op::AddScalar(a) => acc(*a, &mut grads, &|s| add_into(s, &g)),
                Op::OneMinus(a) => acc(*a, &mut grads, &|s| {
                    for (d, v) in s.iter_mut().zip(&g) {
                        *d -= v;
                    }
                }),
                Op::Sigmoid(a) => acc(*a, &mut grads, &|s| {
                    for ((d, v), y) in s.iter_mut().zip(&g).zip(out) {
                        *d += v * y * (1.0 - y);
                    }
                }),
                Op::Tanh(a) => acc(*a, &mut grads, &|s| {
                    for ((d, v), y) in s.iter_mut().zip(&g).zip(out) {
                        *d += v * (1.0 - y * y);
                    }
                }),
                Op::Relu(a) => {
                    let va = &self.value(*a).data;
                    acc(*a, &mut grads, &|s| {
                        for ((d, v), x) in s.iter_mut().zip(&g).zip(va) {
                            if *x > 0.0 {
                                *d += v;
                            }
                        }
                    })
                }
                Op::Concat(a, b) => {
                    let na = sizes[a.0];
                    acc(*a, &mut grads, &|s| add_into(s, &g[..na]));
                    acc(*b, &mut grads, &|s| add_into(s, &g[na..]));
                }
                Op::Attend { q, k, v, probs } => {
                    let (c, h, w) = self.value(*q).chw();
                    let n = h * w;
                    let mut gq = vec![0.0; c * n];
                    let mut gk = vec![0.0; c * n];
                    let mut gv = vec![0.0; c * n];
                    kernels::attend_backward(
                        &self.value(*q).data,
                        &self.value(*k).data,
                        &self.value(*v).data,
                        probs,
                        c,
                        n,
                        &g,
                        &mut gq,
                        &mut gk,
                        &mut gv,
                    );
                    acc(*q, &mut grads, &|s| add_into(s, &gq));
                    acc(*k, &mut grads, &|s| add_into(s, &gk));
                    acc(*v, &mut grads, &|s| add_into(s, &gv));
                }
                Op::SpatialMean(a) => {
                    let (_, h, w) = self.value(*a).chw();
                    let plane = h * w;
                    acc(*a, &mut grads, &|s| {
                        for (ch, gv) in g.iter().enumerate() {
                            let share = gv / plane as f64;
                            for d in &mut s[ch * plane..(ch + 1) * plane] {
                                *d += share;
                            }
                        }
                    })
                }
                Op::L2Normalize(a) => {
                    let x = &self.value(*a).data;
                    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        // d(x/|x|) = (g - y (y·g)) / |x|
                        let dot: f64 = out.iter().zip(&g).map(|(y, v)| y * v).sum();
                        acc(*a, &mut grads, &|s| {
                            for ((d, v), y) in s.iter_mut().zip(&g).zip(out) {
                                *d += (v - y * dot) / norm;
                            }
                        });
                    }
                }
                Op::Linear { x, weight, bias } => {
                    let xs = &self.value(*x).data;
                    let ws = &self.value(*weight).data;
                    let inp = xs.len();
                    acc(*x, &mut grads, &|s| {
                        for (o, gv) in g.iter().enumerate() {
                            for (d, wv) in s.iter_mut().zip(&ws[o * inp..(o + 1) * inp]) {
                                *d += gv * wv;
                            }
                        }
                    });
                    acc(*weight, &mut grads, &|s| {
                        for (o, gv) in g.iter().enumerate() {
                            for (d, xv) in s[o * inp..(o + 1) * inp].iter_mut().zip(xs) {
                                *d += gv * xv;
                            }
                        }
                    });
                    acc(*bias, &mut grads, &|s| add_into(s, &g));
                }
                Op::CrossEntropy { logits, label, probs } => {
                    let g0 = g[0];
                    acc(*logits, &mut grads, &|s| {
                        for (i, (d, p)) in s.iter_mut().zip(probs).enumerate() {
                            let t = if i == *label { 1.0 } else { 0.0 };
                            *d += g0 * (p - t);
                        }
                    })
                }
                Op::Distance(a, b) => {
                    let d = out[0];
                    if d > 0.0 {
                        let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                        let g0 = g[0] / d;
                        acc(*a, &mut grads, &|s| {
                            for ((dst, x), y) in s.iter_mut().zip(va).zip(vb) {
                                *dst += g0 * (x - y);
                            }
                        });
                        acc(*b, &mut grads, &|s| {
                            for ((dst, x), y) in s.iter_mut().zip(va).zip(vb) {
                                *dst -= g0 * (x - y);
                            }
                        });
                    }
                }
                Op::Sum(a) => {
                    let g0 = g[0];
                    acc(*a, &mut grads, &|s| {
                        for d in s.iter_mut() {
                            *d += g0;
                        }
                    })
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads, sizes }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Loss value and softmax probabilities for one labelled logit vector.
pub(crate) fn cross_entropy_value(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let log_z = max + sum_exp.ln();
    let probs = logits.iter().map(|z| (z - max).exp() / sum_exp).collect();
    ((log_z - logits[label]).max(0.0), probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![3.0]));
        let sq = tape.mul(w, w);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(w), vec![6.0]);
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::vector(vec![5.0]));
        let loss = tape.sum(a);
        assert_eq!(tape.backward(loss).get(b), vec![0.0]);
    }

    #[test]
    fn reused_leaf_accumulates() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![2.0]));
        let s = tape.add(a, a);
        let t = tape.add(s, a);
        let loss = tape.sum(t);
        assert_eq!(tape.backward(loss).get(a), vec![3.0]);
    }

    #[test]
    fn cross_entropy_uniform() {
        let (loss, probs) = cross_entropy_value(&[0.0; 4], 2);
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!(probs.iter().all(|p| (p - 0.25).abs() < 1e-15));
    }
}
