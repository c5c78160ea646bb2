//! Reshape, axis reductions, slicing and concatenation.

use crate::autodiff::tape::{Backward, Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

struct Reshape {
    x: Var,
}

impl Backward for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let shape = tape.shape(self.x).to_vec();
        vec![Some(Tensor::from_parts(shape, grad.data().to_vec()))]
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Sum over a set of axes, scaled by `scale` (1 for sum, 1/n for mean).
struct Reduce {
    x: Var,
    axes: Vec<usize>,
    scale: f64,
}

fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect()
}

/// Maps each input linear index to its reduced (keepdim) linear index.
fn reduce_index_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rshape = reduced_shape(shape, axes);
    let rank = shape.len();
    let mut rstrides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        rstrides[i] = if axes.contains(&i) { 0 } else { acc };
        acc *= rshape[i];
    }
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut r = 0usize;
    for _ in 0..n {
        map.push(r);
        for d in (0..rank).rev() {
            idx[d] += 1;
            r += rstrides[d];
            if idx[d] < shape[d] {
                break;
            }
            r -= rstrides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

impl Backward for Reduce {
    fn name(&self) -> &'static str {
        "reduce"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let shape = tape.shape(self.x).to_vec();
        let map = reduce_index_map(&shape, &self.axes);
        let g = grad.data();
        let data = map.iter().map(|&r| g[r] * self.scale).collect();
        vec![Some(Tensor::from_parts(shape, data))]
    }
}

struct Slice {
    x: Var,
    axis: usize,
    start: usize,
}

impl Backward for Slice {
    fn name(&self) -> &'static str {
        "slice"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, tape: &Tape, out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let shape = tape.shape(self.x).to_vec();
        let (outer, len_in, inner) = split_at_axis(&shape, self.axis);
        let len_out = out.shape()[self.axis];
        let mut data = vec![0.0; shape.iter().product()];
        let g = grad.data();
        for o in 0..outer {
            let src = o * len_out * inner;
            let dst = (o * len_in + self.start) * inner;
            data[dst..dst + len_out * inner].copy_from_slice(&g[src..src + len_out * inner]);
        }
        vec![Some(Tensor::from_parts(shape, data))]
    }
}

struct Concat {
    xs: Vec<Var>,
    axis: usize,
}

impl Backward for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn inputs(&self) -> Vec<Var> {
        self.xs.clone()
    }

    fn backward(&self, tape: &Tape, out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (outer, len_out, inner) = split_at_axis(out.shape(), self.axis);
        let g = grad.data();
        let mut offset = 0;
        let mut res = Vec::with_capacity(self.xs.len());
        for (x, &need) in self.xs.iter().zip(needs) {
            let shape = tape.shape(*x).to_vec();
            let len = shape[self.axis];
            if need {
                let mut data = vec![0.0; shape.iter().product()];
                for o in 0..outer {
                    let src = (o * len_out + offset) * inner;
                    let dst = o * len * inner;
                    data[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                res.push(Some(Tensor::from_parts(shape, data)));
            } else {
                res.push(None);
            }
            offset += len;
        }
        res
    }
}

impl Tape {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        self.push(value, Box::new(Reshape { x }))
    }

    fn reduce(&mut self, x: Var, axes: &[usize], keepdim: bool, mean: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if let Some(&bad) = axes.iter().find(|&&a| a >= shape.len()) {
            return Err(Error::InvalidShape {
                op: "reduce",
                shape,
                reason: format!("axis {bad} out of range"),
            });
        }
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        let scale = if mean { 1.0 / count as f64 } else { 1.0 };
        let rshape = reduced_shape(&shape, &axes);
        let map = reduce_index_map(&shape, &axes);
        let mut data = vec![0.0; rshape.iter().product()];
        for (&r, &v) in map.iter().zip(self.value(x).data()) {
            data[r] += v;
        }
        if mean {
            data.iter_mut().for_each(|v| *v *= scale);
        }
        let out_shape = if keepdim {
            rshape
        } else {
            shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect()
        };
        self.push(
            Tensor::from_parts(out_shape, data),
            Box::new(Reduce { x, axes, scale }),
        )
    }

    pub fn sum_axes(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        self.reduce(x, axes, keepdim, false)
    }

    pub fn mean_axes(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        self.reduce(x, axes, keepdim, true)
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce(x, &axes, false, false)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce(x, &axes, false, true)
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::InvalidShape {
                op: "slice",
                shape,
                reason: format!("axis {axis}, range {start}..{}", start + len),
            });
        }
        let (outer, len_in, inner) = split_at_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * len_in + start) * inner;
            data.extend_from_slice(&src[s..s + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push(
            Tensor::from_parts(out_shape, data),
            Box::new(Slice { x, axis, start }),
        )
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: first,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis];
                let src = self.value(x).data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut out_shape = first;
        out_shape[axis] = total;
        self.push(
            Tensor::from_parts(out_shape, data),
            Box::new(Concat {
                xs: xs.to_vec(),
                axis,
            }),
        )
    }
}
