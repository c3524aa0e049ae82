//! Reverse-mode differentiation over whole tensors.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] walks the record once in reverse and returns one
//! gradient tensor per parameter slot; the graph cannot be reused after that.

use crate::tensor::{log_softmax_rows, softmax_rows, Scalar, Tensor};
use crate::AugmentError;

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Param(usize),
    Gather(Var, Vec<usize>),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, T, T),
    MeanRows(Var),
    BroadcastRows(Var),
    ConcatCols(Var, Var),
    Transpose(Var),
    LogSoftmaxRows(Var),
    Pick(Var, Vec<(usize, usize)>),
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<Option<Var>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Registers parameter slot `slot`. Repeated calls return the same node.
    pub fn param(&mut self, slot: usize, value: &Tensor<T>) -> Var {
        if self.params.len() <= slot {
            self.params.resize(slot + 1, None);
        }
        if let Some(v) = self.params[slot] {
            return v;
        }
        let v = self.push(value.clone(), Op::Param(slot));
        self.params[slot] = Some(v);
        v
    }

    /// Copies the current value into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Selects rows of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let cols = t.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_vec(ids.len(), cols, data);
        self.push(out, Op::Gather(table, ids.to_vec()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// Adds the 1×c row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.rows(), 1);
        assert_eq!(av.cols(), bv.cols());
        let out = Tensor::from_fn(av.rows(), av.cols(), |r, c| av.get(r, c) + bv.get(0, c));
        self.push(out, Op::AddRow(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Gradient passes only where the input lies inside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let out = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Column means, as a 1×c row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = T::from_usize(av.rows()).unwrap();
        let out = Tensor::from_fn(1, av.cols(), |_, c| {
            (0..av.rows()).fold(T::zero(), |acc, r| acc + av.get(r, c)) / n
        });
        self.push(out, Op::MeanRows(a))
    }

    /// Repeats a 1×c row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows(), 1);
        let out = Tensor::from_fn(n, av.cols(), |_, c| av.get(0, c));
        self.push(out, Op::BroadcastRows(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), bv.rows());
        let ac = av.cols();
        let out = Tensor::from_fn(av.rows(), ac + bv.cols(), |r, c| {
            if c < ac {
                av.get(r, c)
            } else {
                bv.get(r, c - ac)
            }
        });
        self.push(out, Op::ConcatCols(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let out = log_softmax_rows(self.value(a));
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// Sum of the listed entries, as a 1×1 value.
    pub fn pick(&mut self, a: Var, at: &[(usize, usize)]) -> Var {
        let av = self.value(a);
        let s = at.iter().fold(T::zero(), |acc, &(r, c)| acc + av.get(r, c));
        self.push(Tensor::scalar(s), Op::Pick(a, at.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Gradients of the 1×1 node `loss` with respect to every parameter slot.
    /// `shapes[i]` gives the shape of slot `i`; slots the graph never touched
    /// get zero tensors.
    pub fn backward(&mut self, loss: Var, shapes: &[(usize, usize)]) -> Result<Vec<Tensor<T>>, AugmentError> {
        if self.consumed {
            return Err(AugmentError::GraphReuse);
        }
        self.consumed = true;
        if self.value(loss).shape() != (1, 1) {
            return Err(AugmentError::ShapeMismatch("backward needs a scalar loss".into()));
        }

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut out: Vec<Tensor<T>> = shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, t: Tensor<T>| match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Constant => {}
                Op::Param(slot) => {
                    if *slot < out.len() {
                        out[*slot].add_assign(&g);
                    }
                }
                Op::Gather(table, ids) => {
                    let tv = val(*table);
                    let mut gt = Tensor::zeros(tv.rows(), tv.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..tv.cols() {
                            gt.set(id, c, gt.get(id, c) + g.get(r, c));
                        }
                    }
                    acc(*table, gt);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&val(*b).transpose());
                    let gb = val(*a).transpose().matmul(&g);
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::AddRow(a, b) => {
                    let gb = col_sums(&g);
                    acc(*a, g);
                    acc(*b, gb);
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|x| -x));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(val(*b), |x, y| x * y);
                    let gb = g.zip_map(val(*a), |x, y| x * y);
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    acc(*a, g.map(|x| x * s));
                }
                Op::AddScalar(a) => acc(*a, g),
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * (T::one() - y * y));
                    acc(*a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y);
                    acc(*a, ga);
                }
                Op::Square(a) => {
                    let two = T::one() + T::one();
                    let ga = g.zip_map(val(*a), |x, y| x * two * y);
                    acc(*a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = g.zip_map(val(*a), |x, y| if y < lo || y > hi { T::zero() } else { x });
                    acc(*a, ga);
                }
                Op::MeanRows(a) => {
                    let n = val(*a).rows();
                    let inv = T::one() / T::from_usize(n).unwrap();
                    let ga = Tensor::from_fn(n, g.cols(), |_, c| g.get(0, c) * inv);
                    acc(*a, ga);
                }
                Op::BroadcastRows(a) => acc(*a, col_sums(&g)),
                Op::ConcatCols(a, b) => {
                    let ac = val(*a).cols();
                    let bc = val(*b).cols();
                    let ga = Tensor::from_fn(g.rows(), ac, |r, c| g.get(r, c));
                    let gb = Tensor::from_fn(g.rows(), bc, |r, c| g.get(r, ac + c));
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::LogSoftmaxRows(a) => {
                    let p = softmax_rows(val(*a));
                    let mut ga = g.clone();
                    for r in 0..g.rows() {
                        let total = g.row(r).iter().fold(T::zero(), |s, &x| s + x);
                        for c in 0..g.cols() {
                            ga.set(r, c, g.get(r, c) - p.get(r, c) * total);
                        }
                    }
                    acc(*a, ga);
                }
                Op::Pick(a, at) => {
                    let av = val(*a);
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    let s = g.get(0, 0);
                    for &(r, c) in at {
                        ga.set(r, c, ga.get(r, c) + s);
                    }
                    acc(*a, ga);
                }
                Op::Sum(a) => {
                    let av = val(*a);
                    acc(*a, Tensor::filled(av.rows(), av.cols(), g.get(0, 0)));
                }
            }
        }
        Ok(out)
    }
}

fn col_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    Tensor::from_fn(1, g.cols(), |_, c| {
        (0..g.rows()).fold(T::zero(), |s, r| s + g.get(r, c))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(rows, cols, v.to_vec())
    }

    #[test]
    fn matmul_sum_gradient() {
        // d/dA sum(A B) = 1 Bᵀ, d/dB = Aᵀ 1
        let a = t(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = t(2, 1, &[5.0, 6.0]);
        let mut g = Graph::new();
        let va = g.param(0, &a);
        let vb = g.param(1, &b);
        let m = g.matmul(va, vb);
        let s = g.sum(m);
        assert_eq!(g.value(s).get(0, 0), 17.0 + 39.0);
        let grads = g.backward(s, &[(2, 2), (2, 1)]).unwrap();
        assert_eq!(grads[0].data(), &[5.0, 6.0, 5.0, 6.0]);
        assert_eq!(grads[1].data(), &[4.0, 6.0]);
    }

    #[test]
    fn reuse_is_an_error() {
        let mut g = Graph::new();
        let a = g.param(0, &Tensor::scalar(2.0f64));
        let sq = g.square(a);
        assert_eq!(g.backward(sq, &[(1, 1)]).unwrap()[0].get(0, 0), 4.0);
        assert!(matches!(g.backward(sq, &[(1, 1)]), Err(AugmentError::GraphReuse)));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let a = g.param(0, &Tensor::scalar(3.0f64));
        let d = g.detach(a);
        let p = g.mul(a, d);
        let grads = g.backward(p, &[(1, 1)]).unwrap();
        assert_eq!(grads[0].get(0, 0), 3.0);
    }

    #[test]
    fn unused_slot_gets_zero() {
        let mut g = Graph::new();
        let a = g.param(0, &Tensor::scalar(1.5f64));
        let e = g.exp(a);
        let grads = g.backward(e, &[(1, 1), (2, 3)]).unwrap();
        assert!((grads[0].get(0, 0) - 1.5f64.exp()).abs() < 1e-15);
        assert_eq!(grads[1], Tensor::zeros(2, 3));
    }

    #[test]
    fn log_softmax_pick_matches_hand_gradient() {
        // d/dx_k [-log softmax(x)_0] = p_k - [k == 0]
        let x = t(1, 3, &[0.5, -1.0, 2.0]);
        let mut g = Graph::new();
        let vx = g.param(0, &x);
        let ls = g.log_softmax_rows(vx);
        let pk = g.pick(ls, &[(0, 0)]);
        let loss = g.scale(pk, -1.0);
        let grads = g.backward(loss, &[(1, 3)]).unwrap();
        let p = softmax_rows(&x);
        for k in 0..3 {
            let want = p.get(0, k) - if k == 0 { 1.0 } else { 0.0 };
            assert!((grads[0].get(0, k) - want).abs() < 1e-14);
        }
    }
}
