//! Differentiable operations recorded on a [`Tape`].

use std::rc::Rc;

use super::tape::{Tape, Var};
use super::{matmul_raw, Result, Tensor, TensorError};

fn mismatch(msg: String) -> TensorError {
    TensorError::ShapeMismatch(msg)
}

fn check_index(idx: &[usize], len: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= len) {
        Some(&index) => Err(TensorError::IndexOutOfRange { index, len }),
        None => Ok(()),
    }
}

fn check_segments(seg: &[usize], nseg: usize) -> Result<()> {
    check_index(seg, nseg)?;
    if seg.windows(2).any(|w| w[0] > w[1]) {
        return Err(TensorError::InvalidArgument(
            "segment ids must be sorted".into(),
        ));
    }
    Ok(())
}

fn col_sums(g: &Tensor) -> Tensor {
    let (r, c) = (g.rows(), g.cols());
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    Tensor::row_vector(out)
}

/// Smooth approximation used for GELU.
#[derive(Debug, Clone, Copy)]
pub struct GeluApprox;

impl GeluApprox {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    const C: f64 = 0.044_715;

    pub fn value(x: f64) -> f64 {
        0.5 * x * (1.0 + (Self::K * (x + Self::C * x * x * x)).tanh())
    }

    pub fn derivative(x: f64) -> f64 {
        let t = (Self::K * (x + Self::C * x * x * x)).tanh();
        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * Self::K * (1.0 + 3.0 * Self::C * x * x)
    }
}

impl Tape {
    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() != sb.shape() {
            return Err(mismatch(format!(
                "{op}: {:?} vs {:?}",
                sa.shape(),
                sb.shape()
            )));
        }
        Ok(())
    }

    /// Elementwise map with derivative `df(x, y)`.
    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var {
        let x = self.value(a);
        let y = Rc::new(x.map(f));
        let y_keep = Rc::clone(&y);
        self.push((*y).clone(), &[a], move |g, s| {
            let data = x
                .data()
                .iter()
                .zip(y_keep.data())
                .zip(g.data())
                .map(|((&xv, &yv), &gv)| gv * df(xv, yv))
                .collect();
            s.accumulate(a, Tensor::new(x.shape().to_vec(), data).unwrap());
        })
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((n, k), (k2, m)) = (ta.dims()?, tb.dims()?);
        if k != k2 {
            return Err(mismatch(format!("matmul: {n}x{k} * {k2}x{m}")));
        }
        let out = Tensor::matrix(n, m, matmul_raw(ta.data(), n, k, tb.data(), m))?;
        Ok(self.push(out, &[a, b], move |g, s| {
            if s.wants(a) {
                let bt = tb.transpose();
                let d = matmul_raw(g.data(), n, m, bt.data(), k);
                s.accumulate(a, Tensor::matrix(n, k, d).unwrap());
            }
            if s.wants(b) {
                let at = ta.transpose();
                let d = matmul_raw(at.data(), k, n, g.data(), m);
                s.accumulate(b, Tensor::matrix(k, m, d).unwrap());
            }
        }))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, &[a, b], move |g, s| {
            s.accumulate(a, g.clone());
            s.accumulate(b, g.clone());
        }))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, &[a, b], move |g, s| {
            s.accumulate(a, g.clone());
            s.accumulate(b, g.map(|v| -v));
        }))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, &[a, b], move |g, s| {
            let prod = |t: &Tensor| {
                let d = g.data().iter().zip(t.data()).map(|(x, y)| x * y).collect();
                Tensor::new(t.shape().to_vec(), d).unwrap()
            };
            if s.wants(a) {
                s.accumulate(a, prod(&tb));
            }
            if s.wants(b) {
                s.accumulate(b, prod(&ta));
            }
        }))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, move |x| c * x, move |_, _| c)
    }

    /// Adds a `1 x m` row to every row of an `n x m` matrix.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let ((n, m), (r1, m2)) = (self.dims(a), self.dims(row));
        if r1 != 1 || m != m2 {
            return Err(mismatch(format!("add_row: {n}x{m} + {r1}x{m2}")));
        }
        let (ta, tr) = (self.value(a), self.value(row));
        let mut data = ta.data().to_vec();
        for i in 0..n {
            for (o, v) in data[i * m..(i + 1) * m].iter_mut().zip(tr.data()) {
                *o += v;
            }
        }
        Ok(
            self.push(Tensor::matrix(n, m, data)?, &[a, row], move |g, s| {
                s.accumulate(a, g.clone());
                if s.wants(row) {
                    s.accumulate(row, col_sums(g));
                }
            }),
        )
    }

    /// Multiplies every row of an `n x m` matrix elementwise by a `1 x m` row.
    pub fn mul_row(&self, a: Var, row: Var) -> Result<Var> {
        let ((n, m), (r1, m2)) = (self.dims(a), self.dims(row));
        if r1 != 1 || m != m2 {
            return Err(mismatch(format!("mul_row: {n}x{m} * {r1}x{m2}")));
        }
        let (ta, tr) = (self.value(a), self.value(row));
        let mut data = ta.data().to_vec();
        for i in 0..n {
            for (o, v) in data[i * m..(i + 1) * m].iter_mut().zip(tr.data()) {
                *o *= v;
            }
        }
        Ok(
            self.push(Tensor::matrix(n, m, data)?, &[a, row], move |g, s| {
                if s.wants(a) {
                    let mut d = g.data().to_vec();
                    for i in 0..n {
                        for (o, v) in d[i * m..(i + 1) * m].iter_mut().zip(tr.data()) {
                            *o *= v;
                        }
                    }
                    s.accumulate(a, Tensor::matrix(n, m, d).unwrap());
                }
                if s.wants(row) {
                    let mut d = vec![0.0; m];
                    for i in 0..n {
                        for c in 0..m {
                            d[c] += g.get(i, c) * ta.get(i, c);
                        }
                    }
                    s.accumulate(row, Tensor::row_vector(d));
                }
            }),
        )
    }

    /// Scales row `i` of `x (n x m)` by `scale[i]` (`n x 1`).
    pub fn row_scale(&self, x: Var, scale: Var) -> Result<Var> {
        let ((n, m), (n2, c1)) = (self.dims(x), self.dims(scale));
        if n != n2 || c1 != 1 {
            return Err(mismatch(format!("row_scale: {n}x{m} by {n2}x{c1}")));
        }
        let (tx, ts) = (self.value(x), self.value(scale));
        let mut data = tx.data().to_vec();
        for i in 0..n {
            let f = ts.data()[i];
            data[i * m..(i + 1) * m].iter_mut().for_each(|v| *v *= f);
        }
        Ok(
            self.push(Tensor::matrix(n, m, data)?, &[x, scale], move |g, s| {
                if s.wants(x) {
                    let mut d = g.data().to_vec();
                    for i in 0..n {
                        let f = ts.data()[i];
                        d[i * m..(i + 1) * m].iter_mut().for_each(|v| *v *= f);
                    }
                    s.accumulate(x, Tensor::matrix(n, m, d).unwrap());
                }
                if s.wants(scale) {
                    let d = (0..n)
                        .map(|i| g.row(i).iter().zip(tx.row(i)).map(|(a, b)| a * b).sum())
                        .collect();
                    s.accumulate(scale, Tensor::col_vector(d));
                }
            }),
        )
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let dims: Vec<_> = parts.iter().map(|&p| self.dims(p)).collect();
        let n = dims.first().map_or(0, |d| d.0);
        if parts.is_empty() || dims.iter().any(|d| d.0 != n) {
            return Err(mismatch(format!("concat_cols: {dims:?}")));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for v in &vals {
                data.extend_from_slice(v.row(i));
            }
        }
        let parts = parts.to_vec();
        Ok(self.push(
            Tensor::matrix(n, total, data)?,
            &parts.clone(),
            move |g, s| {
                let mut off = 0;
                for (&p, &(_, w)) in parts.iter().zip(&dims) {
                    if s.wants(p) {
                        let mut d = Vec::with_capacity(n * w);
                        for i in 0..n {
                            d.extend_from_slice(&g.row(i)[off..off + w]);
                        }
                        s.accumulate(p, Tensor::matrix(n, w, d).unwrap());
                    }
                    off += w;
                }
            },
        ))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let dims: Vec<_> = parts.iter().map(|&p| self.dims(p)).collect();
        let m = dims.first().map_or(0, |d| d.1);
        if parts.is_empty() || dims.iter().any(|d| d.1 != m) {
            return Err(mismatch(format!("concat_rows: {dims:?}")));
        }
        let total: usize = dims.iter().map(|d| d.0).sum();
        let mut data = Vec::with_capacity(total * m);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let parts = parts.to_vec();
        Ok(self.push(
            Tensor::matrix(total, m, data)?,
            &parts.clone(),
            move |g, s| {
                let mut off = 0;
                for (&p, &(r, _)) in parts.iter().zip(&dims) {
                    if s.wants(p) {
                        let d = g.data()[off * m..(off + r) * m].to_vec();
                        s.accumulate(p, Tensor::matrix(r, m, d).unwrap());
                    }
                    off += r;
                }
            },
        ))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.dims(a);
        if start > end || end > n {
            return Err(mismatch(format!("slice_rows {start}..{end} of {n} rows")));
        }
        let data = self.value(a).data()[start * m..end * m].to_vec();
        Ok(
            self.push(Tensor::matrix(end - start, m, data)?, &[a], move |g, s| {
                let mut d = vec![0.0; n * m];
                d[start * m..end * m].copy_from_slice(g.data());
                s.accumulate(a, Tensor::matrix(n, m, d).unwrap());
            }),
        )
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// ELU with unit scale.
    pub fn elu(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x > 0.0 { x } else { x.exp_m1() },
            |x, y| if x > 0.0 { 1.0 } else { y + 1.0 },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, a: Var) -> Var {
        self.unary(a, GeluApprox::value, |x, _| GeluApprox::derivative(x))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, |_, y| y)
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, f64::ln, |x, _| 1.0 / x)
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&self, a: Var) -> Var {
        let t = self.value(a);
        let total = t.data().iter().sum();
        self.push(Tensor::scalar(total), &[a], move |g, s| {
            let gv = g.item();
            s.accumulate(a, t.map(|_| gv));
        })
    }

    /// Column means, `n x m -> 1 x m`.
    pub fn mean_rows(&self, a: Var) -> Result<Var> {
        let n = self.dims(a).0;
        self.segment_mean_rows(a, &vec![0; n], 1)
    }

    /// Column maxima, `n x m -> 1 x m`.
    pub fn max_rows(&self, a: Var) -> Result<Var> {
        let n = self.dims(a).0;
        self.segment_max_rows(a, &vec![0; n], 1)
    }

    /// Per-segment column means; `seg[i]` is the segment of row `i`.
    pub fn segment_mean_rows(&self, a: Var, seg: &[usize], nseg: usize) -> Result<Var> {
        let (n, m) = self.dims(a);
        if seg.len() != n {
            return Err(mismatch(format!("segment ids: {} for {n} rows", seg.len())));
        }
        check_index(seg, nseg)?;
        let mut counts = vec![0usize; nseg];
        seg.iter().for_each(|&k| counts[k] += 1);
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(TensorError::EmptySegment(k));
        }
        let t = self.value(a);
        let mut out = vec![0.0; nseg * m];
        for i in 0..n {
            let k = seg[i];
            for c in 0..m {
                out[k * m + c] += t.get(i, c) / counts[k] as f64;
            }
        }
        let seg = seg.to_vec();
        Ok(self.push(Tensor::matrix(nseg, m, out)?, &[a], move |g, s| {
            let mut d = vec![0.0; n * m];
            for i in 0..n {
                let k = seg[i];
                for c in 0..m {
                    d[i * m + c] = g.get(k, c) / counts[k] as f64;
                }
            }
            s.accumulate(a, Tensor::matrix(n, m, d).unwrap());
        }))
    }

    /// Per-segment column maxima; the first maximal row receives the gradient.
    pub fn segment_max_rows(&self, a: Var, seg: &[usize], nseg: usize) -> Result<Var> {
        let (n, m) = self.dims(a);
        if seg.len() != n {
            return Err(mismatch(format!("segment ids: {} for {n} rows", seg.len())));
        }
        check_index(seg, nseg)?;
        let t = self.value(a);
        let mut arg = vec![usize::MAX; nseg * m];
        for i in 0..n {
            let k = seg[i];
            for c in 0..m {
                let slot = &mut arg[k * m + c];
                if *slot == usize::MAX || t.get(i, c) > t.get(*slot, c) {
                    *slot = i;
                }
            }
        }
        if let Some(p) = arg.iter().position(|&r| r == usize::MAX) {
            return Err(TensorError::EmptySegment(p / m.max(1)));
        }
        let out = arg
            .iter()
            .enumerate()
            .map(|(p, &r)| t.get(r, p % m))
            .collect();
        Ok(self.push(Tensor::matrix(nseg, m, out)?, &[a], move |g, s| {
            let mut d = vec![0.0; n * m];
            for (p, &r) in arg.iter().enumerate() {
                d[r * m + p % m] += g.data()[p];
            }
            s.accumulate(a, Tensor::matrix(n, m, d).unwrap());
        }))
    }

    /// Rows `idx[0], idx[1], ...` of `a`.
    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = self.dims(a);
        check_index(idx, n)?;
        let t = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let idx = idx.to_vec();
        Ok(
            self.push(Tensor::matrix(idx.len(), m, data)?, &[a], move |g, s| {
                let mut d = vec![0.0; n * m];
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..m {
                        d[i * m + c] += g.get(r, c);
                    }
                }
                s.accumulate(a, Tensor::matrix(n, m, d).unwrap());
            }),
        )
    }

    /// Softmax of a column of scores within each segment. Segment ids must be
    /// sorted; segments with no entries produce no output and are counted
    /// in [`Tape::empty_segment_count`].
    pub fn softmax_segmented(&self, values: Var, seg: &[usize], nseg: usize) -> Result<Var> {
        let (e, c) = self.dims(values);
        if c != 1 || seg.len() != e {
            return Err(mismatch(format!(
                "softmax_segmented: {e}x{c} scores with {} segment ids",
                seg.len()
            )));
        }
        check_segments(seg, nseg)?;
        let mut bounds = vec![0usize; nseg + 1];
        seg.iter().for_each(|&k| bounds[k + 1] += 1);
        for k in 0..nseg {
            bounds[k + 1] += bounds[k];
        }
        let empty = (0..nseg).filter(|&k| bounds[k] == bounds[k + 1]).count();
        if empty > 0 {
            self.note_empty_segments(empty);
        }

        let x = self.value(values);
        let mut y = vec![0.0; e];
        for k in 0..nseg {
            let span = bounds[k]..bounds[k + 1];
            if span.is_empty() {
                continue;
            }
            let mx = x.data()[span.clone()]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for p in span.clone() {
                y[p] = (x.data()[p] - mx).exp();
                z += y[p];
            }
            y[span].iter_mut().for_each(|v| *v /= z);
        }
        let y = Rc::new(Tensor::col_vector(y));
        let y_keep = Rc::clone(&y);
        Ok(self.push((*y).clone(), &[values], move |g, s| {
            let mut d = vec![0.0; e];
            for k in 0..nseg {
                let span = bounds[k]..bounds[k + 1];
                let dot: f64 = span.clone().map(|p| y_keep.data()[p] * g.data()[p]).sum();
                for p in span {
                    d[p] = y_keep.data()[p] * (g.data()[p] - dot);
                }
            }
            s.accumulate(values, Tensor::col_vector(d));
        }))
    }

    /// Sparse-dense product: `out[i] = sum over edges (i, j) of w_e * x[j]`.
    /// `weights` is `E x 1`, one entry per `(row, col)` pair.
    pub fn spmm(&self, pairs: Rc<[(usize, usize)]>, weights: Var, x: Var) -> Result<Var> {
        let (n, m) = self.dims(x);
        let (e, c) = self.dims(weights);
        if c != 1 || e != pairs.len() {
            return Err(mismatch(format!(
                "spmm: {e}x{c} weights for {} pairs",
                pairs.len()
            )));
        }
        for &(r, col) in pairs.iter() {
            check_index(&[r, col], n)?;
        }
        let (tw, tx) = (self.value(weights), self.value(x));
        let mut out = vec![0.0; n * m];
        for (p, &(r, col)) in pairs.iter().enumerate() {
            let w = tw.data()[p];
            for k in 0..m {
                out[r * m + k] += w * tx.get(col, k);
            }
        }
        Ok(
            self.push(Tensor::matrix(n, m, out)?, &[weights, x], move |g, s| {
                if s.wants(x) {
                    let mut d = vec![0.0; n * m];
                    for (p, &(r, col)) in pairs.iter().enumerate() {
                        let w = tw.data()[p];
                        for k in 0..m {
                            d[col * m + k] += w * g.get(r, k);
                        }
                    }
                    s.accumulate(x, Tensor::matrix(n, m, d).unwrap());
                }
                if s.wants(weights) {
                    let d = pairs
                        .iter()
                        .map(|&(r, col)| g.row(r).iter().zip(tx.row(col)).map(|(a, b)| a * b).sum())
                        .collect();
                    s.accumulate(weights, Tensor::col_vector(d));
                }
            }),
        )
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&self, a: Var) -> Result<Var> {
        let (n, m) = self.dims(a);
        let t = self.value(a);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = t.row(i);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for c in 0..m {
                out[i * m + c] = row[c] - lse;
            }
        }
        let y = Rc::new(Tensor::matrix(n, m, out)?);
        let y_keep = Rc::clone(&y);
        Ok(self.push((*y).clone(), &[a], move |g, s| {
            let mut d = vec![0.0; n * m];
            for i in 0..n {
                let gs: f64 = g.row(i).iter().sum();
                for c in 0..m {
                    d[i * m + c] = g.get(i, c) - y_keep.get(i, c).exp() * gs;
                }
            }
            s.accumulate(a, Tensor::matrix(n, m, d).unwrap());
        }))
    }

    /// Per-row normalisation over features with affine `gain`, `bias` (`1 x m`).
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (n, m) = self.dims(x);
        if self.dims(gain) != (1, m) || self.dims(bias) != (1, m) {
            return Err(mismatch(format!("layer_norm: affine params must be 1x{m}")));
        }
        let tx = self.value(x);
        let mut xhat = vec![0.0; n * m];
        let mut inv_std = vec![0.0; n];
        for i in 0..n {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
            inv_std[i] = 1.0 / (var + eps).sqrt();
            for c in 0..m {
                xhat[i * m + c] = (row[c] - mean) * inv_std[i];
            }
        }
        let xhat = Rc::new(Tensor::matrix(n, m, xhat)?);
        let normed = self.push((*xhat).clone(), &[x], move |g, s| {
            let mut d = vec![0.0; n * m];
            for i in 0..n {
                let gr = g.row(i);
                let hr = xhat.row(i);
                let mg = gr.iter().sum::<f64>() / m as f64;
                let mgh = gr.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                for c in 0..m {
                    d[i * m + c] = inv_std[i] * (gr[c] - mg - hr[c] * mgh);
                }
            }
            s.accumulate(x, Tensor::matrix(n, m, d).unwrap());
        });
        let scaled = self.mul_row(normed, gain)?;
        self.add_row(scaled, bias)
    }

    /// Per-feature normalisation over rows using the statistics of this
    /// batch. Returns the output with the batch mean and biased variance.
    pub fn batch_norm_train(
        &self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (n, m) = self.dims(x);
        if self.dims(gain) != (1, m) || self.dims(bias) != (1, m) || n == 0 {
            return Err(mismatch(format!(
                "batch_norm: {n}x{m} with 1x{m} affine params"
            )));
        }
        let tx = self.value(x);
        let mut mean = vec![0.0; m];
        let mut var = vec![0.0; m];
        for i in 0..n {
            for c in 0..m {
                mean[c] += tx.get(i, c) / n as f64;
            }
        }
        for i in 0..n {
            for c in 0..m {
                var[c] += (tx.get(i, c) - mean[c]).powi(2) / n as f64;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * m];
        for i in 0..n {
            for c in 0..m {
                xhat[i * m + c] = (tx.get(i, c) - mean[c]) * inv_std[c];
            }
        }
        let xhat = Rc::new(Tensor::matrix(n, m, xhat)?);
        let normed = self.push((*xhat).clone(), &[x], move |g, s| {
            let mut d = vec![0.0; n * m];
            for c in 0..m {
                let mg = (0..n).map(|i| g.get(i, c)).sum::<f64>() / n as f64;
                let mgh = (0..n).map(|i| g.get(i, c) * xhat.get(i, c)).sum::<f64>() / n as f64;
                for i in 0..n {
                    d[i * m + c] = inv_std[c] * (g.get(i, c) - mg - xhat.get(i, c) * mgh);
                }
            }
            s.accumulate(x, Tensor::matrix(n, m, d).unwrap());
        });
        let scaled = self.mul_row(normed, gain)?;
        Ok((self.add_row(scaled, bias)?, mean, var))
    }

    /// Mean negative log-likelihood of `targets` under row log-probabilities.
    pub fn nll_mean(&self, log_probs: Var, targets: &[usize]) -> Result<Var> {
        let (b, c) = self.dims(log_probs);
        if targets.len() != b || b == 0 {
            return Err(mismatch(format!(
                "nll: {} targets for {b} rows",
                targets.len()
            )));
        }
        check_index(targets, c)?;
        let t = self.value(log_probs);
        let loss = -targets
            .iter()
            .enumerate()
            .map(|(i, &k)| t.get(i, k))
            .sum::<f64>()
            / b as f64;
        let targets = targets.to_vec();
        Ok(self.push(Tensor::scalar(loss), &[log_probs], move |g, s| {
            let mut d = vec![0.0; b * c];
            for (i, &k) in targets.iter().enumerate() {
                d[i * c + k] = -g.item() / b as f64;
            }
            s.accumulate(log_probs, Tensor::matrix(b, c, d).unwrap());
        }))
    }
}
