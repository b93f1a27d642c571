use super::kernels::{self, mm, mm_nt, mm_tn, normal_cdf, normal_pdf, split_at_axis};
use super::Tensor;
use crate::error::{shape_str, Error, Result};

fn check_axis(t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.ndim() {
        return Err(Error::Index(format!("axis {} out of range for shape {}", axis, shape_str(t.shape()))));
    }
    Ok(())
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: shapes {} and {} differ",
            shape_str(a.shape()),
            shape_str(b.shape())
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "add")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "sub")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]),
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "mul")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| g.iter().zip(b.data()).map(|(g, b)| g * b).collect());
                let gb = needs[1].then(|| g.iter().zip(a.data()).map(|(g, a)| g * a).collect());
                vec![ga, gb]
            }),
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.iter().map(|v| v * c).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|v| v + c).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], Box::new(|g, _| vec![Some(g.to_vec())]))
    }

    /// Adds a row vector `bias[n]` to every length-`n` slice of the last axis.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let n = *self.shape().last().unwrap_or(&0);
        if bias.numel() != n || bias.ndim() != 1 {
            return Err(Error::Dimension(format!(
                "add_bias: bias {} does not match last axis of {}",
                shape_str(bias.shape()),
                shape_str(self.shape())
            )));
        }
        let b = bias.data();
        let data = self.data().chunks(n).flat_map(|row| row.iter().zip(b).map(|(x, b)| x + b)).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), bias.clone()],
            Box::new(move |g, needs| {
                let gb = needs[1].then(|| {
                    let mut acc = vec![0.0; n];
                    for row in g.chunks(n) {
                        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    acc
                });
                vec![Some(g.to_vec()), gb]
            }),
        ))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![total], vec![1], vec![self.clone()], Box::new(move |g, _| vec![Some(vec![g[0]; n])]))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// Mean over `axis`, removing it from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis(self, axis)?;
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &x[(o * len + a) * inner..(o * len + a + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Tensor::from_op(
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        let dst = &mut gx[(o * len + a) * inner..(o * len + a + 1) * inner];
                        let src = &g[o * inner..(o + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d = s * inv);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Same values, new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "cannot reshape {} into {}",
                shape_str(self.shape()),
                shape_str(shape)
            )));
        }
        Ok(Tensor::from_op(
            self.data().to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes; output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Index(format!("invalid permutation {:?} for shape {}", axes, shape_str(self.shape()))));
        }
        let (data, shape) = kernels::permute(self.data(), self.shape(), axes);
        let mut inverse = vec![0; nd];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let out_shape = shape.clone();
        Ok(Tensor::from_op(
            data,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(kernels::permute(g, &out_shape, &inverse).0)]),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        let nd = self.ndim();
        if nd < 2 {
            return Err(Error::Dimension(format!("transpose needs at least 2 axes, got {}", shape_str(self.shape()))));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(&axes)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis(self, axis)?;
        let (outer, full, inner) = split_at_axis(self.shape(), axis);
        if len == 0 || start + len > full {
            return Err(Error::Index(format!(
                "narrow [{start}, {}) out of range for axis {axis} of {}",
                start + len,
                shape_str(self.shape())
            )));
        }
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        check_axis(first, axis)?;
        for p in parts {
            let ok = p.ndim() == first.ndim()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::Dimension(format!(
                    "concat along axis {axis}: {} incompatible with {}",
                    shape_str(p.shape()),
                    shape_str(first.shape())
                )));
            }
        }
        let (outer, _, inner) = split_at_axis(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                out.extend_from_slice(&p.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(
            out,
            shape,
            parts.to_vec(),
            Box::new(move |g, needs| {
                let mut grads: Vec<Option<Vec<f64>>> =
                    lens.iter().zip(needs).map(|(&l, &n)| n.then(|| Vec::with_capacity(outer * l * inner))).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gp, &l) in grads.iter_mut().zip(&lens) {
                        if let Some(gp) = gp {
                            gp.extend_from_slice(&g[pos..pos + l * inner]);
                        }
                        pos += l * inner;
                    }
                }
                grads
            }),
        ))
    }

    /// Tiles the tensor `n` times along a new leading axis.
    pub fn expand_leading(&self, n: usize) -> Tensor {
        let m = self.numel();
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.shape());
        Tensor::from_op(
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; m];
                for chunk in g.chunks(m) {
                    gx.iter_mut().zip(chunk).for_each(|(a, v)| *a += v);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Matrix product. `[m×k]·[k×n]` or batched `[b×m×k]·[b×k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let mismatch = || {
            Error::Dimension(format!(
                "matmul: {} and {} are incompatible",
                shape_str(self.shape()),
                shape_str(other.shape())
            ))
        };
        let (batch, m, k, n) = match (self.shape(), other.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (1, m, k, n),
            (&[b, m, k], &[b2, k2, n]) if k == k2 && b == b2 => (b, m, k, n),
            _ => return Err(mismatch()),
        };
        let (a, b) = (self.clone(), other.clone());
        let mut out = Vec::with_capacity(batch * m * n);
        for i in 0..batch {
            out.extend(mm(&a.data()[i * m * k..(i + 1) * m * k], &b.data()[i * k * n..(i + 1) * k * n], m, k, n));
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().expect("matmul operand rank >= 2") = n;
        Ok(Tensor::from_op(
            out,
            shape,
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut v = Vec::with_capacity(batch * m * k);
                    for i in 0..batch {
                        v.extend(mm_nt(&g[i * m * n..(i + 1) * m * n], &b.data()[i * k * n..(i + 1) * k * n], m, n, k));
                    }
                    v
                });
                let gb = needs[1].then(|| {
                    let mut v = Vec::with_capacity(batch * k * n);
                    for i in 0..batch {
                        v.extend(mm_tn(&a.data()[i * m * k..(i + 1) * m * k], &g[i * m * n..(i + 1) * m * n], m, k, n));
                    }
                    v
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis(self, axis)?;
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| x[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for a in 0..len {
                    let e = (x[idx(a)] - max).exp();
                    y[idx(a)] = e;
                    total += e;
                }
                for a in 0..len {
                    y[idx(a)] /= total;
                }
            }
        }
        let saved = y.clone();
        Ok(Tensor::from_op(
            y,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let y = &saved;
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let dot: f64 = (0..len).map(|a| g[idx(a)] * y[idx(a)]).sum();
                        for a in 0..len {
                            gx[idx(a)] = y[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Layer normalization over the last axis followed by `·gamma + beta`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let n = *self.shape().last().unwrap_or(&0);
        if gamma.shape() != [n] || beta.shape() != [n] {
            return Err(Error::Dimension(format!(
                "layer_norm: gamma {} / beta {} must match last axis of {}",
                shape_str(gamma.shape()),
                shape_str(beta.shape()),
                shape_str(self.shape())
            )));
        }
        if eps <= 0.0 {
            return Err(Error::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let rows = self.numel() / n;
        let mut xhat = vec![0.0; self.numel()];
        let mut rstd = vec![0.0; rows];
        let (gm, bt) = (gamma.data(), beta.data());
        let mut out = vec![0.0; self.numel()];
        for r in 0..rows {
            let row = &self.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gm[j] + bt[j];
            }
        }
        let gamma_c = gamma.clone();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, needs| {
                let gm = gamma_c.data();
                let gx = needs[0].then(|| {
                    let mut gx = vec![0.0; rows * n];
                    for r in 0..rows {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..n {
                            let d = gr[j] * gm[j];
                            mean_d += d;
                            mean_dh += d * hr[j];
                        }
                        mean_d /= n as f64;
                        mean_dh /= n as f64;
                        for j in 0..n {
                            let d = gr[j] * gm[j];
                            gx[r * n + j] = rstd[r] * (d - mean_d - hr[j] * mean_dh);
                        }
                    }
                    gx
                });
                let ggamma = needs[1].then(|| {
                    let mut acc = vec![0.0; n];
                    for r in 0..rows {
                        for j in 0..n {
                            acc[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                    acc
                });
                let gbeta = needs[2].then(|| {
                    let mut acc = vec![0.0; n];
                    for row in g.chunks(n) {
                        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    acc
                });
                vec![gx, ggamma, gbeta]
            }),
        ))
    }

    /// GELU with the exact normal CDF: `x·Φ(x)`.
    pub fn gelu(&self) -> Tensor {
        let data = self.data().iter().map(|&x| x * normal_cdf(x)).collect();
        let x = self.clone();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let gx = g.iter().zip(x.data()).map(|(g, &x)| g * (normal_cdf(x) + x * normal_pdf(x))).collect();
                vec![Some(gx)]
            }),
        )
    }

    /// Elementwise product with an untracked mask of the same shape.
    pub fn mask(&self, mask: &[f64]) -> Result<Tensor> {
        if mask.len() != self.numel() {
            return Err(Error::Dimension(format!(
                "mask of length {} for tensor {}",
                mask.len(),
                shape_str(self.shape())
            )));
        }
        let data = self.data().iter().zip(mask).map(|(x, m)| x * m).collect();
        let m = mask.to_vec();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.iter().zip(&m).map(|(g, m)| g * m).collect())]),
        ))
    }

    /// Builds an output whose element `i` is input element `gather[i]`, or
    /// zero for `None`. Gradients scatter-add back.
    pub(crate) fn gather_scatter(&self, gather: Vec<Option<usize>>, out_shape: Vec<usize>) -> Tensor {
        let x = self.data();
        let data = gather.iter().map(|i| i.map_or(0.0, |i| x[i])).collect();
        let n_in = self.numel();
        Tensor::from_op(
            data,
            out_shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n_in];
                for (gv, src) in g.iter().zip(&gather) {
                    if let Some(i) = src {
                        gx[*i] += gv;
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}
