//! Sparse k-nearest-neighbor prior affinity graph built in closed form from
//! latent features.
//!
//! Each column of the affinity solves a simplex-constrained problem whose
//! KKT conditions admit an exact solution: with the column's non-self squared
//! distances sorted ascending as `m_1 <= ... <= m_{k+1} <= ...`, the first
//! `k` neighbors get weight `(m_{k+1} - m_i) / (k m_{k+1} - sum_{p<=k} m_p)`
//! and the smoothing weight is `lambda = (k m_{k+1} - sum_{p<=k} m_p) / 2`.
//! Columns are independent, so construction parallelizes with no shared
//! state. A quadratic-program oracle (exact simplex projection) cross-checks
//! the closed form in tests and never feeds the production path.

use crate::error::UdllError;
use crate::par;
use crate::tensor::Tensor;
use crate::Result;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

/// One column of the pairwise squared-distance matrix.
#[derive(Clone, Debug)]
pub struct DistanceColumn {
    /// `values[i] = ||z_i - z_j||^2` for the source column `j`.
    pub values: Vec<f64>,
    /// The column index `j`; excluded from neighbor candidacy.
    pub source_index: usize,
}

/// Solved affinity column: sparse weights plus the per-column smoothing weight.
#[derive(Clone, Debug)]
pub struct SolvedColumn {
    /// `(neighbor index, weight)` pairs sorted by index, weights summing to 1.
    pub entries: Vec<(usize, f64)>,
    pub lambda: f64,
    /// True when the first `k+1` distances were all equal and the closed form
    /// degenerated to 0/0; the column fell back to uniform `1/k` weights.
    pub degenerate: bool,
}

/// Sparse column-stochastic affinity over `n` nodes, `k` neighbors per column.
#[derive(Clone, Debug)]
pub struct PriorGraph {
    pub n: usize,
    pub k: usize,
    /// `columns[j]` holds the nonzeros of column `j`, sorted by row index.
    pub columns: Vec<Vec<(usize, f64)>>,
    /// Smoothing weight chosen per column; empty for graphs loaded from disk
    /// (the serialized format carries weights only).
    pub lambda_per_column: Vec<f64>,
    /// Columns that hit the degenerate uniform fallback.
    pub degenerate_columns: Vec<usize>,
}

/// Symmetric matrix of squared Euclidean distances between the columns of
/// `features` (`[dim, n]`, one column per sample).
pub fn pairwise_sqdist(features: &Tensor) -> Result<Tensor> {
    if features.shape().len() != 2 {
        return Err(UdllError::Shape {
            op: "pairwise_sqdist",
            detail: format!("expected [dim, n], got {:?}", features.shape()),
        });
    }
    if !features.all_finite() {
        return Err(UdllError::NonFinite("pairwise_sqdist input".into()));
    }
    let dim = features.rows();
    let n = features.cols();
    // transpose once so each sample is a contiguous row
    let mut rows = vec![0.0; n * dim];
    for d in 0..dim {
        for i in 0..n {
            rows[i * dim + d] = features.get2(d, i);
        }
    }
    let mut out = Tensor::zeros(&[n, n]);
    par::fill_chunks(out.data_mut(), n.max(1), |i, chunk| {
        if i >= n {
            return;
        }
        let zi = &rows[i * dim..(i + 1) * dim];
        for (j, slot) in chunk.iter_mut().enumerate() {
            let zj = &rows[j * dim..(j + 1) * dim];
            let mut acc = 0.0;
            for (a, b) in zi.iter().zip(zj) {
                let d = a - b;
                acc += d * d;
            }
            *slot = acc;
        }
    });
    Ok(out)
}

/// Closed-form solution for one affinity column.
pub fn solve_column(distances: &DistanceColumn, k: usize) -> Result<SolvedColumn> {
    let n = distances.values.len();
    if distances.source_index >= n {
        return Err(UdllError::Param(format!(
            "solve_column: source index {} out of range for n = {n}",
            distances.source_index
        )));
    }
    if k < 1 || k + 2 > n {
        return Err(UdllError::Param(format!(
            "solve_column: k = {k} must satisfy 1 <= k <= n - 2 (n = {n})"
        )));
    }
    // non-self candidates; stable sort keeps ties in ascending index order
    let mut cand: Vec<(usize, f64)> = distances
        .values
        .iter()
        .copied()
        .enumerate()
        .filter(|&(i, _)| i != distances.source_index)
        .collect();
    cand.sort_by(|a, b| a.1.total_cmp(&b.1));

    let fence = cand[k].1; // (k+1)-th smallest distance
    let head_sum: f64 = cand[..k].iter().map(|&(_, m)| m).sum();
    let denom = k as f64 * fence - head_sum;
    let lambda = denom / 2.0;

    let mut entries: Vec<(usize, f64)>;
    let degenerate = denom <= fence * 1e-12;
    if degenerate {
        let w = 1.0 / k as f64;
        entries = cand[..k].iter().map(|&(i, _)| (i, w)).collect();
    } else {
        entries = cand[..k]
            .iter()
            .map(|&(i, m)| (i, (fence - m) / denom))
            .collect();
    }
    entries.sort_by_key(|&(i, _)| i);
    Ok(SolvedColumn {
        entries,
        lambda,
        degenerate,
    })
}

/// Exact Euclidean projection of `v` onto the probability simplex, by sort
/// and threshold.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (p, &u) in sorted.iter().enumerate() {
        cum += u;
        let candidate = (cum - 1.0) / (p + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    v.iter().map(|&u| (u - theta).max(0.0)).collect()
}

/// Reference solver for one column: projects `-m / (2 lambda)` onto the
/// simplex over the non-self indices. Test oracle only; the production path
/// is [`solve_column`].
pub fn qp_oracle_column(distances: &DistanceColumn, lambda: f64) -> Result<Vec<f64>> {
    if lambda <= 0.0 {
        return Err(UdllError::Param(format!(
            "qp_oracle_column: lambda must be positive, got {lambda}"
        )));
    }
    let n = distances.values.len();
    let mut idx = Vec::with_capacity(n - 1);
    let mut target = Vec::with_capacity(n - 1);
    for (i, &m) in distances.values.iter().enumerate() {
        if i != distances.source_index {
            idx.push(i);
            target.push(-m / (2.0 * lambda));
        }
    }
    let projected = project_to_simplex(&target);
    let mut out = vec![0.0; n];
    for (&i, &w) in idx.iter().zip(projected.iter()) {
        out[i] = w;
    }
    Ok(out)
}

/// Builds the full prior graph, one independent column per sample.
pub fn build_prior_graph(features: &Tensor, k: usize) -> Result<PriorGraph> {
    let n = features.cols();
    if n < k + 2 {
        return Err(UdllError::Param(format!(
            "build_prior_graph: need n >= k + 2 (n = {n}, k = {k})"
        )));
    }
    let dist = pairwise_sqdist(features)?;
    let solved: Vec<Result<SolvedColumn>> = par::map_indexed(n, |j| {
        let values = (0..n).map(|i| dist.get2(i, j)).collect();
        solve_column(
            &DistanceColumn {
                values,
                source_index: j,
            },
            k,
        )
    });
    let mut columns = Vec::with_capacity(n);
    let mut lambda_per_column = Vec::with_capacity(n);
    let mut degenerate_columns = Vec::new();
    for (j, res) in solved.into_iter().enumerate() {
        let col = res?;
        if col.degenerate {
            degenerate_columns.push(j);
        }
        lambda_per_column.push(col.lambda);
        columns.push(col.entries);
    }
    Ok(PriorGraph {
        n,
        k,
        columns,
        lambda_per_column,
        degenerate_columns,
    })
}

impl PriorGraph {
    /// Dense `[n, n]` copy; entry `(i, j)` is the weight of row `i` in
    /// column `j` (each column sums to one).
    pub fn to_dense(&self) -> Tensor {
        let mut dense = Tensor::zeros(&[self.n, self.n]);
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, w) in col {
                dense.data_mut()[i * self.n + j] = w;
            }
        }
        dense
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        self.columns[j].iter().map(|&(_, w)| w).sum()
    }

    /// Serializes as text: header `UDLL-GRAPH n k`, then one `j i weight`
    /// line per nonzero with 17-significant-digit weights.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = String::new();
        writeln!(buf, "UDLL-GRAPH {} {}", self.n, self.k).expect("string write");
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, w) in col {
                writeln!(buf, "{j} {i} {w:.16e}").expect("string write");
            }
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| UdllError::Data("graph file is empty".into()))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "UDLL-GRAPH" {
            return Err(UdllError::Data(format!(
                "bad graph header: expected `UDLL-GRAPH n k`, got `{header}`"
            )));
        }
        let n: usize = parts[1]
            .parse()
            .map_err(|_| UdllError::Data(format!("bad node count `{}`", parts[1])))?;
        let k: usize = parts[2]
            .parse()
            .map_err(|_| UdllError::Data(format!("bad neighbor count `{}`", parts[2])))?;
        let mut columns = vec![Vec::new(); n];
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(UdllError::Data(format!(
                    "graph line {}: expected `j i weight`, got `{line}`",
                    lineno + 2
                )));
            }
            let j: usize = fields[0]
                .parse()
                .map_err(|_| UdllError::Data(format!("graph line {}: bad j", lineno + 2)))?;
            let i: usize = fields[1]
                .parse()
                .map_err(|_| UdllError::Data(format!("graph line {}: bad i", lineno + 2)))?;
            let w: f64 = fields[2]
                .parse()
                .map_err(|_| UdllError::Data(format!("graph line {}: bad weight", lineno + 2)))?;
            if j >= n || i >= n {
                return Err(UdllError::Data(format!(
                    "graph line {}: index out of range (n = {n})",
                    lineno + 2
                )));
            }
            if i == j {
                return Err(UdllError::Data(format!(
                    "graph line {}: self-edge {i} -> {i} not allowed",
                    lineno + 2
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(UdllError::Data(format!(
                    "graph line {}: weight must be finite and nonnegative, got {w}",
                    lineno + 2
                )));
            }
            columns[j].push((i, w));
        }
        for col in &mut columns {
            col.sort_by_key(|&(i, _)| i);
        }
        Ok(PriorGraph {
            n,
            k,
            columns,
            lambda_per_column: Vec::new(),
            degenerate_columns: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(file)
    }
}
