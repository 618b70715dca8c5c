use std::cell::{Ref, RefCell};

use crate::error::{mismatch, TensorError};
use crate::param::{ParamId, ParamSet};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::Result;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddTile(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Tanh(Var),
    Sigmoid(Var),
    Swish(Var),
    Softmax(Var),
    LayerNorm {
        a: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    GlobalMax { a: Var, arg: Vec<usize> },
    CrossEntropy { probs: Var, labels: Vec<usize> },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the tape
/// itself is a topological order of the recorded computation.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    param_vars: RefCell<Vec<Option<Var>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect()
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            param_vars: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    fn unary(&self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op)
    }

    pub fn input(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    /// Records a parameter leaf. Repeated calls for the same parameter return
    /// the same node, so gradients from every use accumulate in one place.
    pub fn param(&self, params: &ParamSet<T>, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_vars.borrow().get(id.index()) {
            return *v;
        }
        let var = self.push(params.get(id).value.clone(), Op::Param(id));
        let mut slots = self.param_vars.borrow_mut();
        if slots.len() <= id.index() {
            slots.resize(id.index() + 1, None);
        }
        slots[id.index()] = Some(var);
        var
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) * op(b)` where `op` optionally transposes.
    pub fn matmul_t(&self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let value = {
            let av = self.value(a);
            let bv = self.value(b);
            av.matmul(ta, &bv, tb)?
        };
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let (av, bv) = (self.value(a), self.value(b));
            if av.shape() != bv.shape() {
                return Err(mismatch("add", av.shape(), bv.shape()));
            }
            Tensor::new(av.shape(), zip_map(&av, &bv, |x, y| x + y))?
        };
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds `b` to `a`, repeating the rows of `b` cyclically; with a one-row
    /// `b` this is a bias broadcast.
    pub fn add_tile(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let (av, bv) = (self.value(a), self.value(b));
            let (ar, ac) = av.dims2();
            let (br, bc) = bv.dims2();
            if ac != bc || br == 0 || ar % br != 0 {
                return Err(mismatch("add_tile", av.shape(), bv.shape()));
            }
            let bd = bv.data();
            let mut out = av.data().to_vec();
            for (r, row) in out.chunks_mut(ac).enumerate() {
                let brow = &bd[(r % br) * bc..(r % br + 1) * bc];
                for (x, &y) in row.iter_mut().zip(brow) {
                    *x = *x + y;
                }
            }
            Tensor::new(av.shape(), out)?
        };
        Ok(self.push(value, Op::AddTile(a, b)))
    }

    /// Element-wise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let (av, bv) = (self.value(a), self.value(b));
            if av.shape() != bv.shape() {
                return Err(mismatch("mul", av.shape(), bv.shape()));
            }
            Tensor::new(av.shape(), zip_map(&av, &bv, |x, y| x * y))?
        };
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    /// Concatenates matrices along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        assert!(axis < 2, "concat axis must be 0 or 1");
        let value = {
            let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
            let Some(first) = vals.first() else {
                return Err(mismatch("concat", &[], &[]));
            };
            let (r0, c0) = first.dims2();
            for v in &vals[1..] {
                let (r, c) = v.dims2();
                if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                    return Err(mismatch("concat", first.shape(), v.shape()));
                }
            }
            if axis == 0 {
                let rows: usize = vals.iter().map(|v| v.rows()).sum();
                let mut data = Vec::with_capacity(rows * c0);
                for v in &vals {
                    data.extend_from_slice(v.data());
                }
                Tensor::new(&[rows, c0], data)?
            } else {
                let cols: usize = vals.iter().map(|v| v.cols()).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for r in 0..r0 {
                    for v in &vals {
                        data.extend_from_slice(v.row(r));
                    }
                }
                Tensor::new(&[r0, cols], data)?
            }
        };
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// `len` rows (`axis = 0`) or columns (`axis = 1`) starting at `start`.
    pub fn slice(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        assert!(axis < 2, "slice axis must be 0 or 1");
        let value = {
            let av = self.value(a);
            let (r, c) = av.dims2();
            let extent = if axis == 0 { r } else { c };
            if start + len > extent {
                return Err(mismatch("slice", av.shape(), &[start, len]));
            }
            if axis == 0 {
                Tensor::new(&[len, c], av.data()[start * c..(start + len) * c].to_vec())?
            } else {
                let mut data = Vec::with_capacity(r * len);
                for row in 0..r {
                    data.extend_from_slice(&av.row(row)[start..start + len]);
                }
                Tensor::new(&[r, len], data)?
            }
        };
        Ok(self.push(value, Op::Slice { a, axis, start }))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Swish(a))
    }

    /// Row-wise softmax over the last axis, max-subtracted.
    pub fn softmax(&self, a: Var) -> Var {
        let value = {
            let av = self.value(a);
            let c = av.cols();
            let mut out = av.data().to_vec();
            for row in out.chunks_mut(c.max(1)) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    total = total + *x;
                }
                for x in row.iter_mut() {
                    *x = *x / total;
                }
            }
            Tensor::new(av.shape(), out).expect("same shape")
        };
        self.push(value, Op::Softmax(a))
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// learned `gamma` scale and `beta` shift (both `1 x cols`).
    pub fn layer_norm(&self, a: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (value, xhat, inv_std) = {
            let (av, gv, bv) = (self.value(a), self.value(gamma), self.value(beta));
            let (r, c) = av.dims2();
            if gv.len() != c || bv.len() != c {
                return Err(mismatch("layer_norm", av.shape(), gv.shape()));
            }
            let n = T::from_usize(c).unwrap();
            let mut xhat = Vec::with_capacity(r * c);
            let mut inv_std = Vec::with_capacity(r);
            let mut out = Vec::with_capacity(r * c);
            for row in 0..r {
                let x = av.row(row);
                let mean = x.iter().copied().sum::<T>() / n;
                let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                let inv = T::one() / (var + eps).sqrt();
                inv_std.push(inv);
                for (j, &v) in x.iter().enumerate() {
                    let h = (v - mean) * inv;
                    xhat.push(h);
                    out.push(h * gv.data()[j] + bv.data()[j]);
                }
            }
            (Tensor::new(av.shape(), out)?, xhat, inv_std)
        };
        Ok(self.push(
            value,
            Op::LayerNorm {
                a,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Column-wise maximum over consecutive groups of `group` rows:
    /// `(b * group, cols) -> (b, cols)`. Used to pool over the time axis.
    pub fn global_max(&self, a: Var, group: usize) -> Result<Var> {
        let (value, arg) = {
            let av = self.value(a);
            let (r, c) = av.dims2();
            if group == 0 || r % group != 0 {
                return Err(mismatch("global_max", av.shape(), &[group]));
            }
            let b = r / group;
            let mut out = Vec::with_capacity(b * c);
            let mut arg = Vec::with_capacity(b * c);
            for g in 0..b {
                for j in 0..c {
                    let mut best = g * group;
                    for row in g * group + 1..(g + 1) * group {
                        if av.data()[row * c + j] > av.data()[best * c + j] {
                            best = row;
                        }
                    }
                    arg.push(best);
                    out.push(av.data()[best * c + j]);
                }
            }
            (Tensor::new(&[b, c], out)?, arg)
        };
        Ok(self.push(value, Op::GlobalMax { a, arg }))
    }

    /// Mean categorical cross-entropy of row-wise probabilities against
    /// integer labels (the one-hot positions). Probabilities are floored at
    /// machine epsilon so a saturated softmax cannot produce an infinite loss.
    pub fn cross_entropy(&self, probs: Var, labels: &[usize]) -> Result<Var> {
        let value = {
            let pv = self.value(probs);
            let (r, c) = pv.dims2();
            if r != labels.len() || labels.iter().any(|&l| l >= c) {
                return Err(mismatch("cross_entropy", pv.shape(), &[labels.len()]));
            }
            let n = T::from_usize(r).unwrap();
            let total: T = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| -pv.data()[i * c + l].max(T::epsilon()).ln())
                .sum();
            Tensor::scalar(total / n)
        };
        Ok(self.push(
            value,
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn sum(&self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    /// Propagates d(loss)/d(node) back through the tape. Each node is
    /// visited once, in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(TensorError::NotScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(loss_value.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Input | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (val(*a), val(*b));
                    let da = if *ta {
                        bv.matmul(*tb, &g, true)?
                    } else {
                        g.matmul(false, bv, !*tb)?
                    };
                    let db = if *tb {
                        g.matmul(true, av, *ta)?
                    } else {
                        av.matmul(!*ta, &g, false)?
                    };
                    accumulate(&mut grads, *a, da.reshape(av.shape())?)?;
                    accumulate(&mut grads, *b, db.reshape(bv.shape())?)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::AddTile(a, b) => {
                    let bv = val(*b);
                    let (br, bc) = bv.dims2();
                    let mut db = vec![T::zero(); br * bc];
                    for (r, row) in g.data().chunks(bc).enumerate() {
                        let dst = &mut db[(r % br) * bc..(r % br + 1) * bc];
                        for (d, &x) in dst.iter_mut().zip(row) {
                            *d = *d + x;
                        }
                    }
                    accumulate(&mut grads, *b, Tensor::new(bv.shape(), db)?)?;
                    accumulate(&mut grads, *a, g)?;
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let da = Tensor::new(av.shape(), zip_map(&g, bv, |x, y| x * y))?;
                    let db = Tensor::new(bv.shape(), zip_map(&g, av, |x, y| x * y))?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|x| x * c))?;
                }
                Op::Concat { parts, axis } => {
                    let (gr, gc) = g.dims2();
                    let mut offset = 0;
                    for &p in parts {
                        let pv = val(p);
                        let (pr, pc) = pv.dims2();
                        let part = if *axis == 0 {
                            g.data()[offset * gc..(offset + pr) * gc].to_vec()
                        } else {
                            let mut d = Vec::with_capacity(gr * pc);
                            for r in 0..gr {
                                d.extend_from_slice(&g.row(r)[offset..offset + pc]);
                            }
                            d
                        };
                        offset += if *axis == 0 { pr } else { pc };
                        accumulate(&mut grads, p, Tensor::new(pv.shape(), part)?)?;
                    }
                }
                Op::Slice { a, axis, start } => {
                    let av = val(*a);
                    let (_, ac) = av.dims2();
                    let (gr, gc) = g.dims2();
                    let mut da = vec![T::zero(); av.len()];
                    if *axis == 0 {
                        da[start * ac..(start + gr) * ac].copy_from_slice(g.data());
                    } else {
                        for r in 0..gr {
                            da[r * ac + start..r * ac + start + gc].copy_from_slice(g.row(r));
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(av.shape(), da)?)?;
                }
                Op::Tanh(a) => {
                    let d = zip_map(&g, &node.value, |gy, y| gy * (T::one() - y * y));
                    accumulate(&mut grads, *a, Tensor::new(g.shape(), d)?)?;
                }
                Op::Sigmoid(a) => {
                    let d = zip_map(&g, &node.value, |gy, y| gy * y * (T::one() - y));
                    accumulate(&mut grads, *a, Tensor::new(g.shape(), d)?)?;
                }
                Op::Swish(a) => {
                    let d = zip_map(&g, val(*a), |gy, x| {
                        let s = sigmoid(x);
                        gy * s * (T::one() + x * (T::one() - s))
                    });
                    accumulate(&mut grads, *a, Tensor::new(g.shape(), d)?)?;
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let c = y.cols().max(1);
                    let mut d = Vec::with_capacity(y.len());
                    for (gy, yr) in g.data().chunks(c).zip(y.data().chunks(c)) {
                        let dot: T = gy.iter().zip(yr).map(|(&p, &q)| p * q).sum();
                        d.extend(gy.iter().zip(yr).map(|(&p, &q)| q * (p - dot)));
                    }
                    accumulate(&mut grads, *a, Tensor::new(y.shape(), d)?)?;
                }
                Op::LayerNorm {
                    a,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = val(*gamma);
                    let (r, c) = g.dims2();
                    let n = T::from_usize(c).unwrap();
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    let mut dx = Vec::with_capacity(r * c);
                    for row in 0..r {
                        let gy = g.row(row);
                        let xh = &xhat[row * c..(row + 1) * c];
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for j in 0..c {
                            dgamma[j] = dgamma[j] + gy[j] * xh[j];
                            dbeta[j] = dbeta[j] + gy[j];
                            let dxh = gy[j] * gv.data()[j];
                            sum_d = sum_d + dxh;
                            sum_dx = sum_dx + dxh * xh[j];
                        }
                        let k = inv_std[row] / n;
                        for j in 0..c {
                            let dxh = gy[j] * gv.data()[j];
                            dx.push(k * (n * dxh - sum_d - xh[j] * sum_dx));
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(g.shape(), dx)?)?;
                    accumulate(&mut grads, *gamma, Tensor::new(gv.shape(), dgamma)?)?;
                    accumulate(&mut grads, *beta, Tensor::new(val(*beta).shape(), dbeta)?)?;
                }
                Op::GlobalMax { a, arg } => {
                    let av = val(*a);
                    let c = av.cols();
                    let mut da = vec![T::zero(); av.len()];
                    for (k, (&row, &gy)) in arg.iter().zip(g.data()).enumerate() {
                        let j = k % c;
                        da[row * c + j] = da[row * c + j] + gy;
                    }
                    accumulate(&mut grads, *a, Tensor::new(av.shape(), da)?)?;
                }
                Op::CrossEntropy { probs, labels } => {
                    let pv = val(*probs);
                    let c = pv.cols();
                    let scale = g.data()[0] / T::from_usize(labels.len()).unwrap();
                    let mut dp = vec![T::zero(); pv.len()];
                    for (i, &l) in labels.iter().enumerate() {
                        dp[i * c + l] = -scale / pv.data()[i * c + l].max(T::epsilon());
                    }
                    accumulate(&mut grads, *probs, Tensor::new(pv.shape(), dp)?)?;
                }
                Op::Sum(a) => {
                    let av = val(*a);
                    accumulate(&mut grads, *a, Tensor::filled(av.shape(), g.data()[0]))?;
                }
            }
        }

        let params = nodes
            .iter()
            .enumerate()
            .take(loss.0 + 1)
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((Var(i), id)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}

/// Gradients of a scalar loss with respect to the leaves of a [`Graph`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(Var, ParamId)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of an input or parameter leaf; `None` if the leaf does not
    /// reach the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor<T>>)> {
        self.params.iter().map(|&(v, id)| (id, self.get(v)))
    }
}
