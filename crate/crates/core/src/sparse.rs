//! ELLPACK storage, precision-tagged vectors and the SpMV/AXPY-family kernels.
//!
//! All kernels run through an [`Exec`], which carries the arithmetic policy
//! and accumulates a compulsory-traffic model: every array a kernel touches
//! is counted once at its storage width. Column indices are 32-bit.

use std::io::{BufRead, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::precision::{
    mul_add_fp16_value, value_to_bits, widen_table, ArithmeticPolicy, Fp16, Precision, Real,
};

const INDEX_BYTES: u64 = 4;

/// A dense vector stored in one of the three formats.
#[derive(Debug, Clone, PartialEq)]
pub enum PVector {
    Fp16(Vec<Fp16>),
    Fp32(Vec<f32>),
    Fp64(Vec<f64>),
}

macro_rules! each_vec {
    ($v:expr, |$x:ident| $body:expr) => {
        match $v {
            PVector::Fp16($x) => $body,
            PVector::Fp32($x) => $body,
            PVector::Fp64($x) => $body,
        }
    };
}

macro_rules! map_pair {
    ($op:expr, $a:expr, $b:expr, |$x:ident, $y:ident| $body:expr) => {
        match ($a, $b) {
            (PVector::Fp16($x), PVector::Fp16($y)) => PVector::Fp16($body),
            (PVector::Fp32($x), PVector::Fp32($y)) => PVector::Fp32($body),
            (PVector::Fp64($x), PVector::Fp64($y)) => PVector::Fp64($body),
            (a, b) => {
                return Err(Error::PrecisionMismatch {
                    op: $op,
                    expected: a.precision(),
                    found: b.precision(),
                })
            }
        }
    };
}

impl PVector {
    pub fn zeros(len: usize, precision: Precision) -> Self {
        match precision {
            Precision::Fp16 => PVector::Fp16(vec![Fp16::ZERO; len]),
            Precision::Fp32 => PVector::Fp32(vec![0.0; len]),
            Precision::Fp64 => PVector::Fp64(vec![0.0; len]),
        }
    }

    /// Rounds each value to `precision`.
    pub fn from_f64(values: &[f64], precision: Precision, policy: ArithmeticPolicy) -> Self {
        match precision {
            Precision::Fp16 => PVector::Fp16(convert(values, policy)),
            Precision::Fp32 => PVector::Fp32(convert(values, policy)),
            Precision::Fp64 => PVector::Fp64(values.to_vec()),
        }
    }

    pub fn precision(&self) -> Precision {
        match self {
            PVector::Fp16(_) => Precision::Fp16,
            PVector::Fp32(_) => Precision::Fp32,
            PVector::Fp64(_) => Precision::Fp64,
        }
    }

    pub fn len(&self) -> usize {
        each_vec!(self, |x| x.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> f64 {
        each_vec!(self, |x| x[i].to_f64())
    }

    /// Exact widening of every entry.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        each_vec!(self, |x| x.iter().map(|v| v.to_f64()).collect())
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match self {
            PVector::Fp64(x) => Some(x),
            _ => None,
        }
    }

    pub fn is_all_finite(&self) -> bool {
        each_vec!(self, |x| x.iter().all(|v| v.is_finite()))
    }

    pub fn count_nonzero(&self) -> usize {
        each_vec!(self, |x| x.iter().filter(|v| v.to_f64() != 0.0).count())
    }

    fn value_bytes(&self) -> u64 {
        (self.len() * self.precision().bytes_per_value()) as u64
    }
}

fn convert<T: Real>(values: &[f64], policy: ArithmeticPolicy) -> Vec<T> {
    values.iter().map(|&v| T::from_f64(v, policy)).collect()
}

/// ELLPACK matrix: `row_width` (value, column) slots per row, row-major.
///
/// Padding slots hold a zero value and point at the row's own index (clamped
/// to the last column for rectangular matrices), so kernels read them
/// without branching.
#[derive(Debug, Clone, PartialEq)]
pub struct EllMatrix {
    n_rows: usize,
    n_cols: usize,
    row_width: usize,
    col_index: Vec<u32>,
    values: PVector,
}

impl EllMatrix {
    /// Builds an FP64 matrix from per-row `(column, value)` lists.
    ///
    /// Entries are sorted by column. `row_width` defaults to the longest row.
    pub fn from_rows(
        n_cols: usize,
        rows: &[Vec<(usize, f64)>],
        row_width: Option<usize>,
    ) -> Result<Self> {
        let longest = rows.iter().map(Vec::len).max().unwrap_or(0);
        let row_width = row_width.unwrap_or(longest);
        if row_width < longest {
            return Err(Error::InvalidProblem(format!(
                "row width {row_width} is smaller than the longest row ({longest})"
            )));
        }
        if n_cols > u32::MAX as usize {
            return Err(Error::InvalidProblem(
                "too many columns for 32-bit indices".into(),
            ));
        }
        let mut col_index = Vec::with_capacity(rows.len() * row_width);
        let mut values = Vec::with_capacity(rows.len() * row_width);
        for (i, row) in rows.iter().enumerate() {
            let mut row = row.clone();
            row.sort_by_key(|&(c, _)| c);
            for &(c, v) in &row {
                if c >= n_cols {
                    return Err(Error::DimensionMismatch {
                        op: "EllMatrix::from_rows",
                        expected: n_cols,
                        found: c,
                    });
                }
                col_index.push(c as u32);
                values.push(v);
            }
            let pad = Self::sentinel(i, n_cols);
            for _ in row.len()..row_width {
                col_index.push(pad);
                values.push(0.0);
            }
        }
        Ok(Self {
            n_rows: rows.len(),
            n_cols,
            row_width,
            col_index,
            values: PVector::Fp64(values),
        })
    }

    fn sentinel(row: usize, n_cols: usize) -> u32 {
        row.min(n_cols.saturating_sub(1)) as u32
    }

    pub fn from_dense(dense: &[Vec<f64>]) -> Result<Self> {
        let n_cols = dense.first().map_or(0, Vec::len);
        let rows: Vec<Vec<(usize, f64)>> = dense
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| (j, *v))
                    .collect()
            })
            .collect();
        Self::from_rows(n_cols, &rows, None)
    }

    pub fn identity(n: usize) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
        Self::from_rows(n, &rows, Some(1)).expect("identity is well formed")
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row_width(&self) -> usize {
        self.row_width
    }

    pub fn precision(&self) -> Precision {
        self.values.precision()
    }

    pub fn col_index(&self) -> &[u32] {
        &self.col_index
    }

    pub fn values(&self) -> &PVector {
        &self.values
    }

    /// Slots of one row as widened `(column, value)` pairs, padding included.
    pub fn row_slots(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let start = row * self.row_width;
        (start..start + self.row_width)
            .map(move |k| (self.col_index[k] as usize, self.values.get(k)))
    }

    /// Entry `(row, col)`, summing duplicate slots.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.row_slots(row)
            .filter(|&(c, _)| c == col)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in dense.iter_mut().enumerate() {
            for (c, v) in self.row_slots(i) {
                row[c] += v;
            }
        }
        dense
    }

    /// Diagonal entries, widened.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .to_f64_vec()
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Explicit transpose in FP64; padding slots are dropped.
    pub fn transpose(&self) -> Result<Self> {
        let mut rows = vec![Vec::new(); self.n_cols];
        for i in 0..self.n_rows {
            let start = i * self.row_width;
            for k in start..start + self.row_width {
                let v = self.values.get(k);
                if v != 0.0 {
                    rows[self.col_index[k] as usize].push((i, v));
                }
            }
        }
        Self::from_rows(self.n_rows, &rows, None)
    }

    /// Rounds the stored values to `target`; structure is unchanged.
    pub fn cast(&self, target: Precision, policy: ArithmeticPolicy) -> Self {
        let values = if target == self.precision() {
            self.values.clone()
        } else {
            PVector::from_f64(&self.values.to_f64_vec(), target, policy)
        };
        Self {
            values,
            col_index: self.col_index.clone(),
            ..*self
        }
    }

    /// Text dump: a header line `ELL rows cols row_width precision`, then one
    /// line per row of `column value` pairs covering every slot.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "ELL {} {} {} {}",
            self.n_rows,
            self.n_cols,
            self.row_width,
            self.precision()
        )?;
        for i in 0..self.n_rows {
            let line: Vec<String> = self
                .row_slots(i)
                .map(|(c, v)| format!("{c} {v:?}"))
                .collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty input".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "ELL" {
            return Err(Error::Parse(format!("bad header `{header}`")));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("`{s}`: {e}")))
        };
        let (n_rows, n_cols, row_width) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        let precision: Precision = fields[4].parse().map_err(Error::Parse)?;
        let mut col_index = Vec::with_capacity(n_rows * row_width);
        let mut values = Vec::with_capacity(n_rows * row_width);
        for i in 0..n_rows {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing row {i}")))??;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 2 * row_width {
                return Err(Error::Parse(format!("row {i}: expected {row_width} slots")));
            }
            for pair in toks.chunks_exact(2) {
                let c = num(pair[0])?;
                if c >= n_cols {
                    return Err(Error::Parse(format!("row {i}: column {c} out of range")));
                }
                let v: f64 = pair[1]
                    .parse()
                    .map_err(|e| Error::Parse(format!("`{}`: {e}", pair[1])))?;
                col_index.push(c as u32);
                values.push(v);
            }
        }
        let policy = ArithmeticPolicy {
            flush_subnormals_to_zero: false,
            flush_f32_subnormals_to_zero: false,
            ..ArithmeticPolicy::default()
        };
        Ok(Self {
            n_rows,
            n_cols,
            row_width,
            col_index,
            values: PVector::from_f64(&values, precision, policy),
        })
    }
}

/// Bytes and flops attributed to a group of kernel calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TrafficCounter {
    /// All bytes read, value and index arrays alike.
    pub bytes_read: u64,
    pub bytes_written: u64,
    /// The part of `bytes_read` spent on column indices.
    pub index_bytes_read: u64,
    pub flops: u64,
}

impl TrafficCounter {
    /// Floating-point payload moved: everything except index reads.
    pub fn value_bytes(&self) -> u64 {
        self.bytes_read + self.bytes_written - self.index_bytes_read
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_read + self.bytes_written
    }

    pub fn accumulate(&mut self, other: &TrafficCounter) {
        self.bytes_read += other.bytes_read;
        self.bytes_written += other.bytes_written;
        self.index_bytes_read += other.index_bytes_read;
        self.flops += other.flops;
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// Accumulator format of binary16 SpMV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Accumulation {
    /// Round every partial sum to binary16.
    #[default]
    Fp16,
    /// Accumulate in binary32 and round the row result once.
    Fp32,
}

/// Where kernel traffic is attributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Section {
    /// Outer refinement work in FP64.
    #[default]
    Outer,
    /// Work done on a multigrid level.
    Level(usize),
}

/// Kernel executor: arithmetic settings plus traffic bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct Exec {
    pub policy: ArithmeticPolicy,
    pub fp16_accumulation: Accumulation,
    /// Check every kernel output for non-finite entries.
    pub validate: bool,
    total: TrafficCounter,
    outer: TrafficCounter,
    levels: Vec<TrafficCounter>,
    section: Section,
}

impl Exec {
    pub fn new(policy: ArithmeticPolicy) -> Self {
        Self {
            policy,
            ..Self::default()
        }
    }

    pub fn with_accumulation(mut self, acc: Accumulation) -> Self {
        self.fp16_accumulation = acc;
        self
    }

    pub fn with_validation(mut self, validate: bool) -> Self {
        self.validate = validate;
        self
    }

    pub fn traffic(&self) -> &TrafficCounter {
        &self.total
    }

    pub fn outer_traffic(&self) -> &TrafficCounter {
        &self.outer
    }

    /// Per-level traffic, index 0 is the coarsest level.
    pub fn level_traffic(&self) -> &[TrafficCounter] {
        &self.levels
    }

    pub fn reset_traffic(&mut self) {
        self.total.reset();
        self.outer.reset();
        self.levels.clear();
    }

    pub fn section(&self) -> Section {
        self.section
    }

    /// Sets the attribution target and returns the previous one.
    pub fn set_section(&mut self, section: Section) -> Section {
        std::mem::replace(&mut self.section, section)
    }

    fn record(&mut self, read: u64, written: u64, index: u64, flops: u64) {
        let t = TrafficCounter {
            bytes_read: read + index,
            bytes_written: written,
            index_bytes_read: index,
            flops,
        };
        self.total.accumulate(&t);
        match self.section {
            Section::Outer => self.outer.accumulate(&t),
            Section::Level(l) => {
                if self.levels.len() <= l {
                    self.levels.resize(l + 1, TrafficCounter::default());
                }
                self.levels[l].accumulate(&t);
            }
        }
    }

    fn checked(&self, op: &'static str, v: PVector) -> Result<PVector> {
        if self.validate && !v.is_all_finite() {
            return Err(Error::NonFinite { op });
        }
        Ok(v)
    }

    /// `y = A x` in the matrix precision.
    pub fn spmv(&mut self, a: &EllMatrix, x: &PVector) -> Result<PVector> {
        const OP: &str = "spmv";
        if x.len() != a.n_cols {
            return Err(Error::DimensionMismatch {
                op: OP,
                expected: a.n_cols,
                found: x.len(),
            });
        }
        let policy = self.policy;
        let (n, w) = (a.n_rows, a.row_width);
        let cols = &a.col_index;
        let y = match (&a.values, x, self.fp16_accumulation) {
            (PVector::Fp16(v), PVector::Fp16(x), Accumulation::Fp32) => {
                PVector::Fp16(spmv_fp16_wide(n, v, cols, w, x, policy))
            }
            (PVector::Fp16(v), PVector::Fp16(x), Accumulation::Fp16) => {
                PVector::Fp16(spmv_fp16(n, v, cols, w, x, policy))
            }
            (values, x, _) => {
                map_pair!(OP, values, x, |v, x| spmv_kernel(n, v, cols, w, x, policy))
            }
        };
        let bpv = a.precision().bytes_per_value() as u64;
        let slots = (a.n_rows * w) as u64;
        self.record(
            slots * bpv + x.value_bytes(),
            y.value_bytes(),
            slots * INDEX_BYTES,
            2 * slots,
        );
        self.checked(OP, y)
    }

    /// `y + alpha x`, with `alpha` rounded to the vectors' precision.
    pub fn axpy(&mut self, alpha: f64, x: &PVector, y: &PVector) -> Result<PVector> {
        const OP: &str = "axpy";
        check_len(OP, x, y)?;
        let policy = self.policy;
        let out = match (x, y) {
            (PVector::Fp16(x), PVector::Fp16(y)) => PVector::Fp16(axpy_fp16(alpha, x, y, policy)),
            _ => map_pair!(OP, x, y, |x, y| axpy_kernel(alpha, x, y, policy)),
        };
        self.record(
            x.value_bytes() + y.value_bytes(),
            out.value_bytes(),
            0,
            2 * x.len() as u64,
        );
        self.checked(OP, out)
    }

    /// `b - A x` (an SpMV followed by an AXPY).
    pub fn residual(&mut self, a: &EllMatrix, x: &PVector, b: &PVector) -> Result<PVector> {
        let ax = self.spmv(a, x)?;
        self.axpy(-1.0, &ax, b)
    }

    /// Component-wise product.
    pub fn vec_multiply(&mut self, a: &PVector, b: &PVector) -> Result<PVector> {
        const OP: &str = "vec_multiply";
        check_len(OP, a, b)?;
        let policy = self.policy;
        let out = map_pair!(OP, a, b, |a, b| a
            .iter()
            .zip(b)
            .map(|(&p, &q)| p.mul(q, policy))
            .collect());
        self.record(
            a.value_bytes() + b.value_bytes(),
            out.value_bytes(),
            0,
            a.len() as u64,
        );
        self.checked(OP, out)
    }

    /// `round_target(x_i / scale)`.
    pub fn cast_vector(&mut self, x: &PVector, target: Precision, scale: f64) -> Result<PVector> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidScale(scale));
        }
        self.convert(x, target, Scaling::Divide(scale))
    }

    /// `round_target(x_i * factor)`; used to undo a residual scaling.
    pub fn cast_vector_mul(
        &mut self,
        x: &PVector,
        target: Precision,
        factor: f64,
    ) -> Result<PVector> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidScale(factor));
        }
        self.convert(x, target, Scaling::Multiply(factor))
    }

    fn convert(&mut self, x: &PVector, target: Precision, scaling: Scaling) -> Result<PVector> {
        let policy = self.policy;
        let out = if target == x.precision() && scaling.is_identity() {
            x.clone()
        } else {
            let wide: Vec<f64> =
                each_vec!(x, |x| x.iter().map(|v| scaling.apply(v.to_f64())).collect());
            PVector::from_f64(&wide, target, policy)
        };
        let flops = if scaling.is_identity() {
            0
        } else {
            x.len() as u64
        };
        self.record(x.value_bytes(), out.value_bytes(), 0, flops);
        self.checked("cast_vector", out)
    }

    /// Dot product accumulated in FP64, sequential order.
    pub fn dot(&mut self, x: &PVector, y: &PVector) -> Result<f64> {
        const OP: &str = "dot";
        check_len(OP, x, y)?;
        let s = match (x, y) {
            (PVector::Fp16(x), PVector::Fp16(y)) => dot_kernel(x, y),
            (PVector::Fp32(x), PVector::Fp32(y)) => dot_kernel(x, y),
            (PVector::Fp64(x), PVector::Fp64(y)) => dot_kernel(x, y),
            (a, b) => {
                return Err(Error::PrecisionMismatch {
                    op: OP,
                    expected: a.precision(),
                    found: b.precision(),
                })
            }
        };
        self.record(x.value_bytes() + y.value_bytes(), 0, 0, 2 * x.len() as u64);
        Ok(s)
    }

    /// Euclidean norm accumulated in FP64.
    pub fn norm2(&mut self, x: &PVector) -> f64 {
        let s = each_vec!(x, |v| dot_kernel(v, v));
        self.record(x.value_bytes(), 0, 0, 2 * x.len() as u64);
        s.sqrt()
    }

    /// Fused outer update: `u += alpha c` and `r -= alpha A c` in one pass.
    ///
    /// `r`, `u` and `A` are FP64; `c` may be stored in any precision and is
    /// widened on read.
    pub fn update_residuum_correction(
        &mut self,
        r: &mut PVector,
        u: &mut PVector,
        a: &EllMatrix,
        c: &PVector,
        alpha: f64,
    ) -> Result<()> {
        const OP: &str = "update_residuum_correction";
        if let Some(found) = [r.precision(), u.precision(), a.precision()]
            .into_iter()
            .find(|&p| p != Precision::Fp64)
        {
            return Err(Error::PrecisionMismatch {
                op: OP,
                expected: Precision::Fp64,
                found,
            });
        }
        let (PVector::Fp64(r), PVector::Fp64(u), PVector::Fp64(vals)) = (r, u, &a.values) else {
            unreachable!("precisions checked above")
        };
        for (len, expected) in [
            (r.len(), a.n_rows),
            (u.len(), a.n_rows),
            (c.len(), a.n_cols),
        ] {
            if len != expected {
                return Err(Error::DimensionMismatch {
                    op: OP,
                    expected,
                    found: len,
                });
            }
        }
        let policy = self.policy;
        each_vec!(c, |c| fused_update(
            r,
            u,
            vals,
            &a.col_index,
            a.row_width,
            c,
            alpha,
            policy
        ));
        let slots = (a.n_rows * a.row_width) as u64;
        let n = a.n_rows as u64;
        self.record(
            slots * 8 + c.value_bytes() + 16 * n,
            16 * n,
            slots * INDEX_BYTES,
            2 * slots + 4 * n,
        );
        if self.validate && !(r.iter().all(|v| v.is_finite()) && u.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite { op: OP });
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Scaling {
    Divide(f64),
    Multiply(f64),
}

impl Scaling {
    fn is_identity(self) -> bool {
        matches!(self, Scaling::Divide(s) | Scaling::Multiply(s) if s == 1.0)
    }

    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Scaling::Divide(s) => v / s,
            Scaling::Multiply(s) => v * s,
        }
    }
}

fn check_len(op: &'static str, x: &PVector, y: &PVector) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            op,
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(())
}

/// Runs the slot loop of four rows at a time so their independent
/// accumulation chains overlap; each row still sums its slots in order.
#[inline(always)]
fn ell_rows<A: Copy, R>(
    n: usize,
    w: usize,
    zero: A,
    slot: impl Fn(A, usize) -> A,
    finish: impl Fn(A) -> R,
) -> Vec<R> {
    const B: usize = 4;
    let mut out = Vec::with_capacity(n);
    let blocks = if w == 0 { 0 } else { n / B };
    for blk in 0..blocks {
        let base = blk * B * w;
        let mut acc = [zero; B];
        for k in 0..w {
            for (r, a) in acc.iter_mut().enumerate() {
                *a = slot(*a, base + r * w + k);
            }
        }
        out.extend(acc.into_iter().map(&finish));
    }
    for row in blocks * B..n {
        let acc = (row * w..(row + 1) * w).fold(zero, &slot);
        out.push(finish(acc));
    }
    out
}

fn spmv_kernel<T: Real>(
    n: usize,
    vals: &[T],
    cols: &[u32],
    w: usize,
    x: &[T],
    policy: ArithmeticPolicy,
) -> Vec<T> {
    ell_rows(
        n,
        w,
        T::ZERO,
        |acc, k| vals[k].mul_add(x[cols[k] as usize], acc, policy),
        |acc| acc,
    )
}

/// Same result as `spmv_kernel::<Fp16>`; the running sum is kept as an exact
/// binary64 copy of its binary16 value.
fn spmv_fp16(
    n: usize,
    vals: &[Fp16],
    cols: &[u32],
    w: usize,
    x: &[Fp16],
    policy: ArithmeticPolicy,
) -> Vec<Fp16> {
    let table = widen_table();
    let xw: Vec<f64> = x.iter().map(|v| table[v.to_bits() as usize]).collect();
    ell_rows(
        n,
        w,
        0.0f64,
        |acc, k| {
            mul_add_fp16_value(
                table[vals[k].to_bits() as usize],
                xw[cols[k] as usize],
                acc,
                policy,
            )
        },
        |acc| Fp16::from_bits(value_to_bits(acc)),
    )
}

fn spmv_fp16_wide(
    n: usize,
    vals: &[Fp16],
    cols: &[u32],
    w: usize,
    x: &[Fp16],
    policy: ArithmeticPolicy,
) -> Vec<Fp16> {
    let table = widen_table();
    ell_rows(
        n,
        w,
        0.0f32,
        |acc, k| {
            let (a, xj) = (
                table[vals[k].to_bits() as usize] as f32,
                table[x[cols[k] as usize].to_bits() as usize] as f32,
            );
            Real::mul_add(a, xj, acc, policy)
        },
        |acc| Fp16::from_f64(acc as f64, policy),
    )
}

fn axpy_fp16(alpha: f64, x: &[Fp16], y: &[Fp16], policy: ArithmeticPolicy) -> Vec<Fp16> {
    let table = widen_table();
    let alpha = Fp16::from_f64(alpha, policy).to_f64();
    x.iter()
        .zip(y)
        .map(|(xi, yi)| {
            let v = mul_add_fp16_value(
                alpha,
                table[xi.to_bits() as usize],
                table[yi.to_bits() as usize],
                policy,
            );
            Fp16::from_bits(value_to_bits(v))
        })
        .collect()
}

fn axpy_kernel<T: Real>(alpha: f64, x: &[T], y: &[T], policy: ArithmeticPolicy) -> Vec<T> {
    let alpha = T::from_f64(alpha, policy);
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| alpha.mul_add(xi, yi, policy))
        .collect()
}

fn dot_kernel<T: Real>(x: &[T], y: &[T]) -> f64 {
    x.iter()
        .zip(y)
        .fold(0.0f64, |acc, (a, b)| a.to_f64().mul_add(b.to_f64(), acc))
}

#[allow(clippy::too_many_arguments)]
fn fused_update<T: Real>(
    r: &mut [f64],
    u: &mut [f64],
    vals: &[f64],
    cols: &[u32],
    w: usize,
    c: &[T],
    alpha: f64,
    policy: ArithmeticPolicy,
) {
    for i in 0..r.len() {
        let row = i * w..(i + 1) * w;
        let ac = vals[row.clone()]
            .iter()
            .zip(&cols[row])
            .fold(0.0f64, |acc, (&a, &j)| {
                Real::mul_add(a, c[j as usize].to_f64(), acc, policy)
            });
        r[i] = Real::mul_add(-alpha, ac, r[i], policy);
        u[i] = Real::mul_add(alpha, c[i].to_f64(), u[i], policy);
    }
}
