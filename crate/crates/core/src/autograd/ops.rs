//! Differentiable operations on [`Var`].
//!
//! Feature maps are `[C, H, W]`, token matrices are `[T, C]`. Every op records
//! a closure that maps the output gradient to parent gradients.

use std::rc::Rc;

use super::array::gemm;
use super::{Array, Var};

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let value = self.value().zip_map(&other.value(), |a, b| a + b);
        self.tape.record(value, &[self, other], |g, _| {
            vec![Some(g.clone()), Some(g.clone())]
        })
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let value = self.value().zip_map(&other.value(), |a, b| a - b);
        self.tape.record(value, &[self, other], |g, _| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        })
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let value = a.zip_map(&b, |x, y| x * y);
        self.tape.record(value, &[self, other], move |g, mask| {
            vec![
                mask[0].then(|| g.zip_map(&b, |d, y| d * y)),
                mask[1].then(|| g.zip_map(&a, |d, x| d * x)),
            ]
        })
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        let value = self.value().map(|v| v * factor);
        self.tape
            .record(value, &[self], move |g, _| vec![Some(g.map(|d| d * factor))])
    }

    pub fn relu(self) -> Var<'t> {
        let x = self.value();
        let value = x.map(|v| v.max(0.0));
        self.tape.record(value, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |d, v| if v > 0.0 { d } else { 0.0 }))]
        })
    }

    /// `max(x, slope * x)` for `0 <= slope < 1`.
    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let x = self.value();
        let value = x.map(|v| if v > 0.0 { v } else { slope * v });
        self.tape.record(value, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |d, v| if v > 0.0 { d } else { slope * d }))]
        })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Var<'t> {
        let x = self.value();
        let value = x.map(|v| {
            let u = GELU_K * (v + GELU_C * v * v * v);
            0.5 * v * (1.0 + u.tanh())
        });
        self.tape.record(value, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |d, v| {
                let u = GELU_K * (v + GELU_C * v * v * v);
                let t = u.tanh();
                let du = GELU_K * (1.0 + 3.0 * GELU_C * v * v);
                d * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
            }))]
        })
    }

    pub fn abs(self) -> Var<'t> {
        let x = self.value();
        let value = x.map(f64::abs);
        self.tape.record(value, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |d, v| d * sign(v)))]
        })
    }

    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let value = Array::scalar(x.sum());
        self.tape
            .record(value, &[self], move |g, _| vec![Some(Array::full(&shape, g.item()))])
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum of a list of scalars (or equally shaped arrays), in list order.
    pub fn sum_all(vars: &[Var<'t>]) -> Var<'t> {
        let mut iter = vars.iter().copied();
        let first = iter.next().expect("sum_all on empty list");
        iter.fold(first, |acc, v| acc.add(v))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let x = self.value();
        let old = x.shape().to_vec();
        let value = (*x).clone().reshaped(shape);
        self.tape
            .record(value, &[self], move |g, _| vec![Some(g.clone().reshaped(&old))])
    }

    /// Transpose of a 2-D array.
    pub fn transpose(self) -> Var<'t> {
        let x = self.value();
        let (r, c) = dims2(&x);
        let value = Array::new(&[c, r], transpose_raw(r, c, x.data()));
        self.tape.record(value, &[self], move |g, _| {
            vec![Some(Array::new(&[r, c], transpose_raw(c, r, g.data())))]
        })
    }

    /// `self @ other` for 2-D operands.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let (m, k) = dims2(&a);
        let (k2, n) = dims2(&b);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
        self.tape
            .record(Array::new(&[m, n], out), &[self, other], move |g, mask| {
                let da = mask[0].then(|| {
                    let mut d = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, b.data(), true, 0.0, &mut d);
                    Array::new(&[m, k], d)
                });
                let db = mask[1].then(|| {
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), true, g.data(), false, 0.0, &mut d);
                    Array::new(&[k, n], d)
                });
                vec![da, db]
            })
    }

    /// `self @ other^T` for 2-D operands (`[m, k] x [n, k]`).
    pub fn matmul_nt(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let (m, k) = dims2(&a);
        let (n, k2) = dims2(&b);
        assert_eq!(k, k2, "matmul_nt inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), true, 0.0, &mut out);
        self.tape
            .record(Array::new(&[m, n], out), &[self, other], move |g, mask| {
                let da = mask[0].then(|| {
                    let mut d = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, b.data(), false, 0.0, &mut d);
                    Array::new(&[m, k], d)
                });
                let db = mask[1].then(|| {
                    let mut d = vec![0.0; n * k];
                    gemm(n, m, k, g.data(), true, a.data(), false, 0.0, &mut d);
                    Array::new(&[n, k], d)
                });
                vec![da, db]
            })
    }

    /// Affine map of token rows: `x [T, Cin] @ w [Cin, Cout] + b [Cout]`.
    pub fn linear(self, weight: Var<'t>, bias: Var<'t>) -> Var<'t> {
        let b = bias.value();
        let y = self.matmul(weight);
        let yv = y.value();
        let (rows, cols) = dims2(&yv);
        assert_eq!(b.len(), cols, "bias width");
        let mut out = (*yv).clone();
        for r in 0..rows {
            for (o, bv) in out.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.tape.record(out, &[y, bias], move |g, _| {
            let mut db = vec![0.0; cols];
            for r in 0..rows {
                for (acc, d) in db.iter_mut().zip(&g.data()[r * cols..(r + 1) * cols]) {
                    *acc += d;
                }
            }
            vec![Some(g.clone()), Some(Array::new(&[cols], db))]
        })
    }

    /// Columns `[start, start + len)` of a 2-D array.
    pub fn narrow_cols(self, start: usize, len: usize) -> Var<'t> {
        let x = self.value();
        let (r, c) = dims2(&x);
        assert!(start + len <= c);
        let mut out = Vec::with_capacity(r * len);
        for row in x.data().chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        self.tape.record(Array::new(&[r, len], out), &[self], move |g, _| {
            let mut d = vec![0.0; r * c];
            for (i, row) in g.data().chunks(len).enumerate() {
                d[i * c + start..i * c + start + len].copy_from_slice(row);
            }
            vec![Some(Array::new(&[r, c], d))]
        })
    }

    /// Column-wise concatenation of 2-D arrays with equal row counts.
    pub fn concat_cols(vars: &[Var<'t>]) -> Var<'t> {
        let tape = vars[0].tape;
        let values: Vec<Rc<Array>> = vars.iter().map(|v| v.value()).collect();
        let rows = values[0].dim(0);
        let widths: Vec<usize> = values.iter().map(|v| v.dim(1)).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in values.iter().zip(&widths) {
                assert_eq!(v.dim(0), rows);
                out.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        tape.record(Array::new(&[rows, total], out), vars, move |g, mask| {
            let mut offset = 0;
            widths
                .iter()
                .zip(mask)
                .map(|(&w, &needed)| {
                    let part = needed.then(|| {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        Array::new(&[rows, w], d)
                    });
                    offset += w;
                    part
                })
                .collect()
        })
    }

    /// Concatenation along the leading axis (channels for `[C, H, W]`).
    pub fn concat0(vars: &[Var<'t>]) -> Var<'t> {
        let tape = vars[0].tape;
        let values: Vec<Rc<Array>> = vars.iter().map(|v| v.value()).collect();
        let tail = values[0].shape()[1..].to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        let mut sizes = Vec::new();
        for v in &values {
            assert_eq!(&v.shape()[1..], &tail[..], "concat0 trailing dims");
            lead += v.dim(0);
            sizes.push((v.shape().to_vec(), v.len()));
            out.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        tape.record(Array::new(&shape, out), vars, move |g, mask| {
            let mut offset = 0;
            sizes
                .iter()
                .zip(mask)
                .map(|((shape, n), &needed)| {
                    let part = needed
                        .then(|| Array::new(shape, g.data()[offset..offset + n].to_vec()));
                    offset += n;
                    part
                })
                .collect()
        })
    }

    /// Row-wise softmax of a 2-D array.
    pub fn softmax_rows(self) -> Var<'t> {
        let x = self.value();
        let (r, c) = dims2(&x);
        let mut y = vec![0.0; r * c];
        for (src, dst) in x.data().chunks(c).zip(y.chunks_mut(c)) {
            let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - max).exp();
                total += *d;
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        let y = Rc::new(Array::new(&[r, c], y));
        let saved = Rc::clone(&y);
        self.tape.record((*y).clone(), &[self], move |g, _| {
            let mut d = vec![0.0; r * c];
            for ((yr, gr), dr) in saved.data().chunks(c).zip(g.data().chunks(c)).zip(d.chunks_mut(c)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *o = yv * (gv - dot);
                }
            }
            vec![Some(Array::new(&[r, c], d))]
        })
    }

    /// Layer normalization over the last axis of a 2-D array.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Var<'t> {
        let x = self.value();
        let gm = gamma.value();
        let bt = beta.value();
        let (r, c) = dims2(&x);
        assert_eq!(gm.len(), c);
        assert_eq!(bt.len(), c);
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut y = vec![0.0; r * c];
        for i in 0..r {
            let row = &x.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                y[i * c + j] = h * gm.data()[j] + bt.data()[j];
            }
        }
        self.tape
            .record(Array::new(&[r, c], y), &[self, gamma, beta], move |g, mask| {
                let gd = g.data();
                let mut dx = vec![0.0; r * c];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for i in 0..r {
                    let gr = &gd[i * c..(i + 1) * c];
                    let hr = &xhat[i * c..(i + 1) * c];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..c {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                        let dh = gr[j] * gm.data()[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh /= c as f64;
                    mean_dh_h /= c as f64;
                    for j in 0..c {
                        let dh = gr[j] * gm.data()[j];
                        dx[i * c + j] = inv_std[i] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                vec![
                    mask[0].then(|| Array::new(&[r, c], dx)),
                    mask[1].then(|| Array::new(&[c], dgamma)),
                    mask[2].then(|| Array::new(&[c], dbeta)),
                ]
            })
    }

    /// 2-D convolution of a `[Cin, H, W]` map with `[Cout, Cin / groups, k, k]`
    /// weights, symmetric zero padding, and an optional `[Cout]` bias.
    pub fn conv2d(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Var<'t> {
        let x = self.value();
        let w = weight.value();
        let geom = ConvGeom::new(x.shape(), w.shape(), stride, pad, groups);
        let ConvGeom {
            cout, ho, wo, ..
        } = geom;
        let cols = geom.im2col(x.data());
        let cout_g = cout / groups;
        let krows = geom.krows();
        let mut out = vec![0.0; cout * ho * wo];
        for gi in 0..groups {
            gemm(
                cout_g,
                krows,
                ho * wo,
                &w.data()[gi * cout_g * krows..(gi + 1) * cout_g * krows],
                false,
                &cols[gi * krows * ho * wo..(gi + 1) * krows * ho * wo],
                false,
                0.0,
                &mut out[gi * cout_g * ho * wo..(gi + 1) * cout_g * ho * wo],
            );
        }
        if let Some(b) = bias {
            let b = b.value();
            assert_eq!(b.len(), cout);
            for (o, bv) in out.chunks_mut(ho * wo).zip(b.data()) {
                for v in o {
                    *v += bv;
                }
            }
        }
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let out = Array::new(&[cout, ho, wo], out);
        self.tape.record(out, &parents, move |g, mask| {
            let gd = g.data();
            let plane = ho * wo;
            let dx = mask[0].then(|| {
                let mut dcols = vec![0.0; cols.len()];
                for gi in 0..groups {
                    gemm(
                        krows,
                        cout_g,
                        plane,
                        &w.data()[gi * cout_g * krows..(gi + 1) * cout_g * krows],
                        true,
                        &gd[gi * cout_g * plane..(gi + 1) * cout_g * plane],
                        false,
                        0.0,
                        &mut dcols[gi * krows * plane..(gi + 1) * krows * plane],
                    );
                }
                Array::new(&geom.input_shape(), geom.col2im(&dcols))
            });
            let dw = mask[1].then(|| {
                let mut dw = vec![0.0; w.len()];
                for gi in 0..groups {
                    gemm(
                        cout_g,
                        plane,
                        krows,
                        &gd[gi * cout_g * plane..(gi + 1) * cout_g * plane],
                        false,
                        &cols[gi * krows * plane..(gi + 1) * krows * plane],
                        true,
                        0.0,
                        &mut dw[gi * cout_g * krows..(gi + 1) * cout_g * krows],
                    );
                }
                Array::new(w.shape(), dw)
            });
            let mut grads = vec![dx, dw];
            if mask.len() == 3 {
                grads.push(mask[2].then(|| {
                    Array::new(&[cout], gd.chunks(plane).map(|c| c.iter().sum()).collect())
                }));
            }
            grads
        })
    }

    /// 2x2 max pooling with stride 2 on `[C, H, W]` (odd trailing rows/cols dropped).
    pub fn max_pool2(self) -> Var<'t> {
        let x = self.value();
        let (c, h, w) = dims3(&x);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; c * oh * ow];
        let mut arg = vec![0usize; c * oh * ow];
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for di in 0..2 {
                        for dj in 0..2 {
                            let idx = ch * h * w + (2 * i + di) * w + 2 * j + dj;
                            if x.data()[idx] > best {
                                best = x.data()[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ch * oh * ow + i * ow + j;
                    out[o] = best;
                    arg[o] = best_idx;
                }
            }
        }
        let in_shape = x.shape().to_vec();
        self.tape.record(Array::new(&[c, oh, ow], out), &[self], move |g, _| {
            let mut d = Array::zeros(&in_shape);
            for (gv, &idx) in g.data().iter().zip(&arg) {
                d.data_mut()[idx] += gv;
            }
            vec![Some(d)]
        })
    }

    /// Nearest-neighbour 2x upsampling of `[C, H, W]`.
    pub fn upsample2(self) -> Var<'t> {
        let x = self.value();
        let (c, h, w) = dims3(&x);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    out[ch * oh * ow + i * ow + j] = x.data()[ch * h * w + (i / 2) * w + j / 2];
                }
            }
        }
        self.tape.record(Array::new(&[c, oh, ow], out), &[self], move |g, _| {
            let mut d = vec![0.0; c * h * w];
            for ch in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        d[ch * h * w + (i / 2) * w + j / 2] += g.data()[ch * oh * ow + i * ow + j];
                    }
                }
            }
            vec![Some(Array::new(&[c, h, w], d))]
        })
    }

    /// Bilinear resize of `[C, H, W]` to `[C, out_h, out_w]` with half-pixel
    /// centers (the `align_corners = false` convention).
    pub fn resize_bilinear(self, out_h: usize, out_w: usize) -> Var<'t> {
        let x = self.value();
        let (c, h, w) = dims3(&x);
        if (h, w) == (out_h, out_w) {
            return self;
        }
        let rows = bilinear_taps(h, out_h);
        let cols = bilinear_taps(w, out_w);
        let mut out = vec![0.0; c * out_h * out_w];
        for ch in 0..c {
            let src = &x.data()[ch * h * w..(ch + 1) * h * w];
            for (i, &(r0, r1, wr)) in rows.iter().enumerate() {
                for (j, &(c0, c1, wc)) in cols.iter().enumerate() {
                    let top = src[r0 * w + c0] * (1.0 - wc) + src[r0 * w + c1] * wc;
                    let bot = src[r1 * w + c0] * (1.0 - wc) + src[r1 * w + c1] * wc;
                    out[ch * out_h * out_w + i * out_w + j] = top * (1.0 - wr) + bot * wr;
                }
            }
        }
        self.tape
            .record(Array::new(&[c, out_h, out_w], out), &[self], move |g, _| {
                let mut d = vec![0.0; c * h * w];
                for ch in 0..c {
                    let dst = &mut d[ch * h * w..(ch + 1) * h * w];
                    for (i, &(r0, r1, wr)) in rows.iter().enumerate() {
                        for (j, &(c0, c1, wc)) in cols.iter().enumerate() {
                            let gv = g.data()[ch * out_h * out_w + i * out_w + j];
                            dst[r0 * w + c0] += gv * (1.0 - wr) * (1.0 - wc);
                            dst[r0 * w + c1] += gv * (1.0 - wr) * wc;
                            dst[r1 * w + c0] += gv * wr * (1.0 - wc);
                            dst[r1 * w + c1] += gv * wr * wc;
                        }
                    }
                }
                vec![Some(Array::new(&[c, h, w], d))]
            })
    }

    /// Top-left `[C, h, w]` window of a `[C, H, W]` map.
    pub fn crop(self, h: usize, w: usize) -> Var<'t> {
        let x = self.value();
        let (c, ih, iw) = dims3(&x);
        assert!(h <= ih && w <= iw, "crop {h}x{w} larger than {ih}x{iw}");
        if (h, w) == (ih, iw) {
            return self;
        }
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for i in 0..h {
                let base = ch * ih * iw + i * iw;
                out.extend_from_slice(&x.data()[base..base + w]);
            }
        }
        self.tape.record(Array::new(&[c, h, w], out), &[self], move |g, _| {
            let mut d = vec![0.0; c * ih * iw];
            for ch in 0..c {
                for i in 0..h {
                    let base = ch * ih * iw + i * iw;
                    d[base..base + w].copy_from_slice(&g.data()[(ch * h + i) * w..(ch * h + i + 1) * w]);
                }
            }
            vec![Some(Array::new(&[c, ih, iw], d))]
        })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn dims2(a: &Array) -> (usize, usize) {
    assert_eq!(a.shape().len(), 2, "expected 2-D array, got {:?}", a.shape());
    (a.dim(0), a.dim(1))
}

fn dims3(a: &Array) -> (usize, usize, usize) {
    assert_eq!(a.shape().len(), 3, "expected [C, H, W], got {:?}", a.shape());
    (a.dim(0), a.dim(1), a.dim(2))
}

fn transpose_raw(r: usize, c: usize, src: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}

/// `(lower index, upper index, upper weight)` per output coordinate.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

#[derive(Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(x: &[usize], w: &[usize], stride: usize, pad: usize, groups: usize) -> Self {
        assert_eq!(x.len(), 3, "conv input must be [C, H, W], got {x:?}");
        assert_eq!(w.len(), 4, "conv weight must be [Cout, Cin/g, k, k], got {w:?}");
        let (cin, h, wd) = (x[0], x[1], x[2]);
        let (cout, cin_g, k) = (w[0], w[1], w[2]);
        assert_eq!(w[2], w[3], "square kernels only");
        assert!(groups >= 1 && cin % groups == 0 && cout % groups == 0);
        assert_eq!(cin_g * groups, cin, "weight expects {} input channels, got {cin}", cin_g * groups);
        assert!(h + 2 * pad >= k && wd + 2 * pad >= k, "input smaller than kernel");
        Self {
            cin,
            h,
            w: wd,
            cout,
            k,
            stride,
            pad,
            groups,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (wd + 2 * pad - k) / stride + 1,
        }
    }

    fn input_shape(&self) -> [usize; 3] {
        [self.cin, self.h, self.w]
    }

    fn krows(&self) -> usize {
        self.cin / self.groups * self.k * self.k
    }

    /// Rows ordered `(channel, ky, kx)`; columns are output pixels.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let plane = self.ho * self.wo;
        if self.k == 1 && self.stride == 1 && self.pad == 0 {
            return x.to_vec();
        }
        let mut cols = vec![0.0; self.cin * self.k * self.k * plane];
        for c in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src_row = &x[c * self.h * self.w + iy as usize * self.w..][..self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[oy * self.wo + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let plane = self.ho * self.wo;
        if self.k == 1 && self.stride == 1 && self.pad == 0 {
            return cols.to_vec();
        }
        let mut x = vec![0.0; self.cin * self.h * self.w];
        for c in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = c * self.h * self.w + iy as usize * self.w;
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                x[base + ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}
