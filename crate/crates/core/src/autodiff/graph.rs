use std::sync::Arc;

use rand::Rng;

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Handle to a record in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Forward-pass mode. Only dropout looks at it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Group assignment for segment-wise softmax and normalization.
///
/// Entry `e` of `ids` names the segment of row `e`; ids must lie in
/// `0..count`. Cloning is cheap.
#[derive(Clone, Debug)]
pub struct Segments {
    ids: Arc<[usize]>,
    count: usize,
}

impl Segments {
    pub fn new(ids: impl Into<Arc<[usize]>>, count: usize) -> Result<Self> {
        let ids = ids.into();
        if let Some(&bad) = ids.iter().find(|&&s| s >= count) {
            return Err(Error::invalid(format!(
                "segment id {bad} out of range for {count} segments"
            )));
        }
        Ok(Self { ids, count })
    }

    /// Every row in one segment.
    pub fn single(len: usize) -> Self {
        Self {
            ids: vec![0; len].into(),
            count: 1,
        }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Index list shared between the forward record and its backward rule.
pub type Indices = Arc<[usize]>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Indices),
    ScatterAddRows(Var, Indices),
    RepeatCols(Var, usize),
    BlockSum(Var, usize),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Log(Var),
    Sqrt(Var),
    SoftmaxRows(Var),
    SegmentSoftmax(Var, Segments),
    SegmentNormalize(Var, Segments),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Dropout(Var, Matrix),
    Sum(Var),
    Mean(Var),
    WeightedBce {
        probs: Var,
        labels: Vec<f64>,
        w_pos: f64,
    },
}

struct Record {
    value: Matrix,
    op: Op,
}

/// Append-only record of a computation over dense matrices.
///
/// Every operator appends one record whose parents are earlier records, so
/// append order is a topological order. [`Graph::backward`] sweeps it in
/// reverse and fills a gradient buffer for every record up to the loss.
#[derive(Default)]
pub struct Graph {
    records: Vec<Record>,
    grads: Vec<Matrix>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.records[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.records[v.0].value.shape()
    }

    /// Gradient buffer of `v`, populated by the last [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.records.push(Record { value, op });
        Var(self.records.len() - 1)
    }

    /// Registers an input: a trainable parameter or a constant.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn row_operand(&self, op: &'static str, a: Var, row: Var) -> Result<()> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(Error::shape(
                op,
                format!("row operand {sr:?} does not broadcast over {sa:?}"),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a 1×c row (a bias) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_operand("add_row", a, row)?;
        let mut out = self.value(a).clone();
        let r = self.value(row).as_slice().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .as_slice()
            .iter()
            .zip(self.value(b).as_slice())
            .map(|(x, y)| x * y)
            .collect();
        let (r, c) = self.shape(a);
        Ok(self.push(Matrix::new(r, c, data)?, Op::Mul(a, b)))
    }

    /// Multiplies every row of `a` elementwise by a 1×c row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_operand("mul_row", a, row)?;
        let mut out = self.value(a).clone();
        let r = self.value(row).as_slice().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o *= b;
            }
        }
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no operands"));
        };
        let rows = self.shape(first).0;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return Err(Error::shape(
                "concat_cols",
                format!("row counts differ: {rows} vs {}", self.shape(bad).0),
            ));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(Matrix::new(rows, cols, data)?, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start + len > cols {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} out of {cols}", start + len),
            ));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows * len);
        for i in 0..rows {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        Ok(self.push(Matrix::new(rows, len, data)?, Op::SliceCols(a, start)))
    }

    /// Row `k` of the output is row `idx[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: &Indices) -> Result<Var> {
        let rows = self.shape(a).0;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(
                "gather_rows",
                format!("index {bad} out of {rows} rows"),
            ));
        }
        let out = self.value(a).select_rows(idx);
        Ok(self.push(out, Op::GatherRows(a, idx.clone())))
    }

    /// Adds row `k` of `a` into output row `idx[k]`; output has `n_out` rows.
    /// Accumulation runs in increasing `k`.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &Indices, n_out: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if idx.len() != rows {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("{} indices for {rows} rows", idx.len()),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("target {bad} out of {n_out} rows"),
            ));
        }
        let src = self.value(a);
        let mut out = Matrix::zeros(n_out, cols);
        for (k, &t) in idx.iter().enumerate() {
            for (o, v) in out.row_mut(t).iter_mut().zip(src.row(k)) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::ScatterAddRows(a, idx.clone())))
    }

    /// Repeats each column `times` times in place: r×c → r×(c·times).
    pub fn repeat_cols(&mut self, a: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::invalid("repeat_cols needs times >= 1"));
        }
        let (rows, cols) = self.shape(a);
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows * cols * times);
        for i in 0..rows {
            for &v in src.row(i) {
                data.extend(std::iter::repeat_n(v, times));
            }
        }
        Ok(self.push(Matrix::new(rows, cols * times, data)?, Op::RepeatCols(a, times)))
    }

    /// Sums contiguous blocks of `width` columns: r×(c·width) → r×c.
    pub fn block_sum(&mut self, a: Var, width: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if width == 0 || cols % width != 0 {
            return Err(Error::shape(
                "block_sum",
                format!("{cols} columns not divisible into blocks of {width}"),
            ));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows * cols / width);
        for i in 0..rows {
            data.extend(src.row(i).chunks(width).map(|c| c.iter().sum::<f64>()));
        }
        Ok(self.push(Matrix::new(rows, cols / width, data)?, Op::BlockSum(a, width)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).as_slice().iter().any(|&x| x <= 0.0) {
            return Err(Error::invalid("log of a non-positive entry"));
        }
        let out = self.value(a).map(f64::ln);
        Ok(self.push(out, Op::Log(a)))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).as_slice().iter().any(|&x| x <= 0.0) {
            return Err(Error::invalid("sqrt of a non-positive entry"));
        }
        let out = self.value(a).map(f64::sqrt);
        Ok(self.push(out, Op::Sqrt(a)))
    }

    /// Softmax over each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Softmax over the rows of each segment, independently per column.
    pub fn segment_softmax(&mut self, a: Var, segments: &Segments) -> Result<Var> {
        let out = segment_softmax_values(self.value(a), segments)?;
        Ok(self.push(out, Op::SegmentSoftmax(a, segments.clone())))
    }

    /// Divides each entry by its segment's column total. Inputs must be positive.
    pub fn segment_normalize(&mut self, a: Var, segments: &Segments) -> Result<Var> {
        let x = self.value(a);
        check_segment_rows("segment_normalize", x, segments)?;
        let totals = segment_totals(x, segments);
        let mut out = x.clone();
        let cols = out.cols();
        for (e, &s) in segments.ids().iter().enumerate() {
            let t = &totals[s * cols..(s + 1) * cols];
            for (v, total) in out.row_mut(e).iter_mut().zip(t) {
                *v /= total;
            }
        }
        Ok(self.push(out, Op::SegmentNormalize(a, segments.clone())))
    }

    /// Row-wise layer normalization with the biased variance estimator.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::invalid(format!("layer_norm eps must be > 0, got {eps}")));
        }
        self.row_operand("layer_norm gain", x, gain)?;
        self.row_operand("layer_norm bias", x, bias)?;
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let istd = 1.0 / (var + eps).sqrt();
            for (h, v) in xhat.row_mut(i).iter_mut().zip(row) {
                *h = (v - mean) * istd;
            }
            inv_std.push(istd);
        }
        let g = self.value(gain).as_slice();
        let b = self.value(bias).as_slice();
        let mut out = xhat.clone();
        for i in 0..rows {
            for ((o, gj), bj) in out.row_mut(i).iter_mut().zip(g).zip(b) {
                *o = *o * gj + bj;
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Inverted dropout. Eval mode and `rate == 0` return `a` unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let (r, c) = self.shape(a);
        let mask_data: Vec<f64> = (0..r * c)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = Matrix::new(r, c, mask_data)?;
        let out = Matrix::new(
            r,
            c,
            self.value(a)
                .as_slice()
                .iter()
                .zip(mask.as_slice())
                .map(|(x, m)| x * m)
                .collect(),
        )?;
        Ok(self.push(out, Op::Dropout(a, mask)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).as_slice().iter().sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::invalid("mean of an empty matrix"));
        }
        let m = v.as_slice().iter().sum::<f64>() / v.len() as f64;
        Ok(self.push(Matrix::scalar(m), Op::Mean(a)))
    }

    /// Mean class-weighted binary cross-entropy of an n×1 probability
    /// column against 0/1 labels. Probabilities are clamped to
    /// `[PROB_CLAMP, 1 - PROB_CLAMP]`; clamped entries pass no gradient.
    pub fn weighted_bce(&mut self, probs: Var, labels: &[f64], w_pos: f64) -> Result<Var> {
        let p = self.value(probs);
        if p.cols() != 1 || p.rows() != labels.len() {
            return Err(Error::shape(
                "weighted_bce",
                format!("probabilities {:?} vs {} labels", p.shape(), labels.len()),
            ));
        }
        let loss = weighted_bce_value(p.as_slice(), labels, w_pos)?;
        Ok(self.push(
            Matrix::scalar(loss),
            Op::WeightedBce {
                probs,
                labels: labels.to_vec(),
                w_pos,
            },
        ))
    }

    /// Reverse sweep from a 1×1 `loss`. Gradients accumulate additively over
    /// fan-out, in decreasing record order.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {:?}", self.shape(loss)),
            ));
        }
        let end = loss.0 + 1;
        let mut grads: Vec<Matrix> = self.records[..end]
            .iter()
            .map(|r| Matrix::zeros(r.value.rows(), r.value.cols()))
            .collect();
        grads[loss.0] = Matrix::scalar(1.0);
        for i in (0..end).rev() {
            let (before, rest) = grads.split_at_mut(i);
            let g = &rest[0];
            self.propagate(i, g, before);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Matrix]) {
        let rec = &self.records[i];
        let val = |v: Var| &self.records[v.0].value;
        match &rec.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                grads[a.0].add_assign(&g.matmul_nt(val(*b)));
                grads[b.0].add_assign(&val(*a).matmul_tn(g));
            }
            Op::Add(a, b) => {
                grads[a.0].add_assign(g);
                grads[b.0].add_assign(g);
            }
            Op::AddRow(a, row) => {
                grads[a.0].add_assign(g);
                let gr = grads[row.0].as_mut_slice();
                for r in 0..g.rows() {
                    for (acc, v) in gr.iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                accumulate_zip(&mut grads[a.0], g, bv, |g, y| g * y);
                accumulate_zip(&mut grads[b.0], g, av, |g, x| g * x);
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (val(*a), val(*row));
                let gr = grads[row.0].as_mut_slice();
                for r in 0..g.rows() {
                    for ((acc, gv), x) in gr.iter_mut().zip(g.row(r)).zip(av.row(r)) {
                        *acc += gv * x;
                    }
                }
                let ga = &mut grads[a.0];
                for r in 0..g.rows() {
                    for ((acc, gv), w) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(rv.as_slice())
                    {
                        *acc += gv * w;
                    }
                }
            }
            Op::Scale(a, f) => {
                for (acc, gv) in grads[a.0].as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *acc += gv * f;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols();
                    let gp = &mut grads[p.0];
                    for r in 0..g.rows() {
                        for (acc, gv) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                            *acc += gv;
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let w = g.cols();
                let ga = &mut grads[a.0];
                for r in 0..g.rows() {
                    for (acc, gv) in ga.row_mut(r)[*start..start + w].iter_mut().zip(g.row(r)) {
                        *acc += gv;
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                let ga = &mut grads[a.0];
                for (k, &src) in idx.iter().enumerate() {
                    for (acc, gv) in ga.row_mut(src).iter_mut().zip(g.row(k)) {
                        *acc += gv;
                    }
                }
            }
            Op::ScatterAddRows(a, idx) => {
                let ga = &mut grads[a.0];
                for (k, &t) in idx.iter().enumerate() {
                    for (acc, gv) in ga.row_mut(k).iter_mut().zip(g.row(t)) {
                        *acc += gv;
                    }
                }
            }
            Op::RepeatCols(a, times) => {
                let ga = &mut grads[a.0];
                for r in 0..g.rows() {
                    for (acc, block) in ga.row_mut(r).iter_mut().zip(g.row(r).chunks(*times)) {
                        *acc += block.iter().sum::<f64>();
                    }
                }
            }
            Op::BlockSum(a, width) => {
                let ga = &mut grads[a.0];
                for r in 0..g.rows() {
                    for (block, gv) in ga.row_mut(r).chunks_mut(*width).zip(g.row(r)) {
                        for acc in block {
                            *acc += gv;
                        }
                    }
                }
            }
            Op::Relu(a) => {
                accumulate_zip(&mut grads[a.0], g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 });
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                accumulate_zip(&mut grads[a.0], g, val(*a), |g, x| if x > 0.0 { g } else { s * g });
            }
            Op::Sigmoid(a) => {
                accumulate_zip(&mut grads[a.0], g, &rec.value, |g, y| g * y * (1.0 - y));
            }
            Op::Log(a) => {
                accumulate_zip(&mut grads[a.0], g, val(*a), |g, x| g / x);
            }
            Op::Sqrt(a) => {
                accumulate_zip(&mut grads[a.0], g, &rec.value, |g, y| g * 0.5 / y);
            }
            Op::SoftmaxRows(a) => {
                let y = &rec.value;
                let ga = &mut grads[a.0];
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner = dot(yr, gr);
                    for ((acc, yv), gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *acc += yv * (gv - inner);
                    }
                }
            }
            Op::SegmentSoftmax(a, segs) => {
                let y = &rec.value;
                let cols = y.cols();
                let inner = segment_weighted_totals(g, y, segs);
                let ga = &mut grads[a.0];
                for (e, &s) in segs.ids().iter().enumerate() {
                    let inn = &inner[s * cols..(s + 1) * cols];
                    for (((acc, yv), gv), iv) in ga.row_mut(e).iter_mut().zip(y.row(e)).zip(g.row(e)).zip(inn) {
                        *acc += yv * (gv - iv);
                    }
                }
            }
            Op::SegmentNormalize(a, segs) => {
                let y = &rec.value;
                let cols = y.cols();
                let totals = segment_totals(val(*a), segs);
                let inner = segment_weighted_totals(g, y, segs);
                let ga = &mut grads[a.0];
                for (e, &s) in segs.ids().iter().enumerate() {
                    let range = s * cols..(s + 1) * cols;
                    for (((acc, gv), iv), tv) in ga
                        .row_mut(e)
                        .iter_mut()
                        .zip(g.row(e))
                        .zip(&inner[range.clone()])
                        .zip(&totals[range])
                    {
                        *acc += (gv - iv) / tv;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gain_v = val(*gain).as_slice();
                let cols = xhat.cols() as f64;
                {
                    let gg = grads[gain.0].as_mut_slice();
                    for r in 0..g.rows() {
                        for ((acc, gv), h) in gg.iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *acc += gv * h;
                        }
                    }
                }
                {
                    let gb = grads[bias.0].as_mut_slice();
                    for r in 0..g.rows() {
                        for (acc, gv) in gb.iter_mut().zip(g.row(r)) {
                            *acc += gv;
                        }
                    }
                }
                let gx = &mut grads[x.0];
                for r in 0..g.rows() {
                    let dxhat: Vec<f64> = g.row(r).iter().zip(gain_v).map(|(a, b)| a * b).collect();
                    let h = xhat.row(r);
                    let mean_d = dxhat.iter().sum::<f64>() / cols;
                    let mean_dh = dot(&dxhat, h) / cols;
                    for ((acc, d), hv) in gx.row_mut(r).iter_mut().zip(&dxhat).zip(h) {
                        *acc += inv_std[r] * (d - mean_d - hv * mean_dh);
                    }
                }
            }
            Op::Dropout(a, mask) => {
                accumulate_zip(&mut grads[a.0], g, mask, |g, m| g * m);
            }
            Op::Sum(a) => {
                let gv = g.item();
                for acc in grads[a.0].as_mut_slice() {
                    *acc += gv;
                }
            }
            Op::Mean(a) => {
                let gv = g.item() / val(*a).len() as f64;
                for acc in grads[a.0].as_mut_slice() {
                    *acc += gv;
                }
            }
            Op::WeightedBce {
                probs,
                labels,
                w_pos,
            } => {
                let gv = g.item() / labels.len() as f64;
                let p = val(*probs).as_slice();
                for ((acc, &pi), &y) in grads[probs.0].as_mut_slice().iter_mut().zip(p).zip(labels) {
                    if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pi) {
                        *acc += -gv * (w_pos * y / pi - (1.0 - y) / (1.0 - pi));
                    }
                }
            }
        }
    }
}

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean weighted binary cross-entropy on plain slices.
pub fn weighted_bce_value(probs: &[f64], labels: &[f64], w_pos: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::shape(
            "weighted_bce",
            format!("{} probabilities vs {} labels", probs.len(), labels.len()),
        ));
    }
    if probs.is_empty() {
        return Err(Error::invalid("weighted_bce over zero samples"));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(w_pos * y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / probs.len() as f64)
}

fn accumulate_zip(acc: &mut Matrix, g: &Matrix, other: &Matrix, f: impl Fn(f64, f64) -> f64) {
    for ((a, &gv), &o) in acc.as_mut_slice().iter_mut().zip(g.as_slice()).zip(other.as_slice()) {
        *a += f(gv, o);
    }
}

fn check_segment_rows(op: &'static str, x: &Matrix, segments: &Segments) -> Result<()> {
    if x.rows() != segments.len() {
        return Err(Error::shape(
            op,
            format!("{} rows vs {} segment ids", x.rows(), segments.len()),
        ));
    }
    Ok(())
}

/// Per-segment, per-column totals in segment-major layout.
fn segment_totals(x: &Matrix, segments: &Segments) -> Vec<f64> {
    let cols = x.cols();
    let mut totals = vec![0.0; segments.count() * cols];
    for (e, &s) in segments.ids().iter().enumerate() {
        for (t, v) in totals[s * cols..(s + 1) * cols].iter_mut().zip(x.row(e)) {
            *t += v;
        }
    }
    totals
}

fn segment_weighted_totals(g: &Matrix, y: &Matrix, segments: &Segments) -> Vec<f64> {
    let cols = y.cols();
    let mut totals = vec![0.0; segments.count() * cols];
    for (e, &s) in segments.ids().iter().enumerate() {
        for ((t, gv), yv) in totals[s * cols..(s + 1) * cols].iter_mut().zip(g.row(e)).zip(y.row(e)) {
            *t += gv * yv;
        }
    }
    totals
}

/// Segment softmax on plain matrices, with per-segment max subtraction.
pub fn segment_softmax_values(x: &Matrix, segments: &Segments) -> Result<Matrix> {
    check_segment_rows("segment_softmax", x, segments)?;
    let cols = x.cols();
    let mut maxes = vec![f64::NEG_INFINITY; segments.count() * cols];
    for (e, &s) in segments.ids().iter().enumerate() {
        for (m, &v) in maxes[s * cols..(s + 1) * cols].iter_mut().zip(x.row(e)) {
            *m = m.max(v);
        }
    }
    let mut out = x.clone();
    for (e, &s) in segments.ids().iter().enumerate() {
        for (v, m) in out.row_mut(e).iter_mut().zip(&maxes[s * cols..(s + 1) * cols]) {
            *v = (*v - m).exp();
        }
    }
    let totals = segment_totals(&out, segments);
    for (e, &s) in segments.ids().iter().enumerate() {
        for (v, t) in out.row_mut(e).iter_mut().zip(&totals[s * cols..(s + 1) * cols]) {
            *v /= t;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn segment_softmax_examples() {
        let s = Segments::new(vec![0], 1).unwrap();
        let out = segment_softmax_values(&Matrix::column(&[7.3]), &s).unwrap();
        assert_eq!(out.as_slice(), &[1.0]);

        let s = Segments::single(3);
        let out = segment_softmax_values(&Matrix::column(&[1.0, 1.0, 1.0]), &s).unwrap();
        for &v in out.as_slice() {
            assert!(close(v, 1.0 / 3.0, 1e-15));
        }

        // exp(0) : exp(ln 2) = 1 : 2
        let s = Segments::single(2);
        let out = segment_softmax_values(&Matrix::column(&[0.0, 2f64.ln()]), &s).unwrap();
        assert!(close(out.get(0, 0), 1.0 / 3.0, 1e-15));
        assert!(close(out.get(1, 0), 2.0 / 3.0, 1e-15));
    }

    #[test]
    fn segment_softmax_edge_cases() {
        let s = Segments::new(Vec::<usize>::new(), 0).unwrap();
        let out = segment_softmax_values(&Matrix::zeros(0, 1), &s).unwrap();
        assert!(out.is_empty());
        let s = Segments::single(3);
        assert!(segment_softmax_values(&Matrix::column(&[1.0, 2.0]), &s).is_err());
        assert!(Segments::new(vec![0, 2], 2).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = Graph::new();
        let x = g.leaf(Matrix::from_rows(&[[1.0, 1.0, 1.0]]).unwrap());
        let gain = g.leaf(Matrix::filled(1, 3, 1.0));
        let bias = g.leaf(Matrix::zeros(1, 3));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert_eq!(g.value(y).as_slice(), &[0.0, 0.0, 0.0]);

        let x = g.leaf(Matrix::from_rows(&[[1.0, 3.0]]).unwrap());
        let gain = g.leaf(Matrix::filled(1, 2, 1.0));
        let bias = g.leaf(Matrix::zeros(1, 2));
        let y = g.layer_norm(x, gain, bias, 1e-300).unwrap();
        assert!(close(g.value(y).get(0, 0), -1.0, 1e-12));
        assert!(close(g.value(y).get(0, 1), 1.0, 1e-12));

        let x = g.leaf(Matrix::from_rows(&[[1.0, 5.0, -2.0]]).unwrap());
        let gain = g.leaf(Matrix::zeros(1, 3));
        let bias = g.leaf(Matrix::row_vector(&[0.5, -1.0, 2.0]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert_eq!(g.value(y).as_slice(), &[0.5, -1.0, 2.0]);

        assert!(g.layer_norm(x, gain, bias, 0.0).is_err());
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let x = g.leaf(Matrix::filled(4, 4, 2.0));
        assert_eq!(g.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap(), x);
        assert_eq!(g.dropout(x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert!(g.dropout(x, 1.0, Mode::Train, &mut rng).is_err());

        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::new();
            let x = g.leaf(Matrix::filled(8, 8, 2.0));
            let y = g.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
            g.value(y).clone()
        };
        let a = draw(7);
        assert_eq!(a, draw(7));
        assert!(a.as_slice().iter().all(|&v| v == 0.0 || v == 4.0));
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new();
        let x = g.leaf(Matrix::scalar(2.0));
        let y = g.leaf(Matrix::scalar(5.0));
        let p = g.mul(x, y).unwrap();
        g.backward(p).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 5.0);
        assert_eq!(g.grad(y).unwrap().item(), 2.0);

        let mut g = Graph::new();
        let x = g.leaf(Matrix::scalar(-3.7));
        g.backward(x).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 1.0);

        let mut g = Graph::new();
        let x = g.leaf(Matrix::scalar(0.0));
        let s = g.sigmoid(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 0.5 * (1.0 - 0.5));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Matrix::zeros(2, 1));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Matrix::scalar(3.0));
        let y = g.add(x, x).unwrap();
        let z = g.mul(y, x).unwrap();
        g.backward(z).unwrap();
        // z = 2x², dz/dx = 4x
        assert_eq!(g.grad(x).unwrap().item(), 12.0);
        for i in 0..g.len() {
            let v = Var(i);
            assert_eq!(g.grad(v).unwrap().shape(), g.shape(v));
        }
    }

    #[test]
    fn weighted_bce_examples() {
        let ln2 = 2f64.ln();
        assert!(close(weighted_bce_value(&[0.5], &[1.0], 1.0).unwrap(), ln2, 1e-15));
        assert!(close(weighted_bce_value(&[0.5], &[1.0], 2.0).unwrap(), 2.0 * ln2, 1e-15));
        assert!(weighted_bce_value(&[0.5, 0.2], &[1.0], 1.0).is_err());
        // clamp keeps log finite
        assert!(weighted_bce_value(&[0.0, 1.0], &[1.0, 0.0], 3.0).unwrap().is_finite());
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.leaf(Matrix::zeros(2, 3));
        let b = g.leaf(Matrix::zeros(2, 2));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(g.add(a, b).is_err());
        assert!(g.block_sum(a, 2).is_err());
        assert!(g.slice_cols(a, 2, 2).is_err());
    }
}
