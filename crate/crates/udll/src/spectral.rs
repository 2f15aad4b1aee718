//! From a learned coefficient matrix to cluster labels: post-process into a
//! symmetric affinity, form the normalized Laplacian, embed with the
//! smallest eigenvectors (dense cyclic Jacobi), row-normalize, and run
//! seeded k-means.
//!
//! The Jacobi solver is dense and O(n^3) per sweep; fine up to a few
//! thousand nodes, slow but still correct beyond that.

use crate::error::UdllError;
use crate::metrics::LabelVector;
use crate::par;
use crate::tensor::Tensor;
use crate::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Knobs for [`postprocess_affinity`] and [`spectral_cluster`].
#[derive(Clone, Copy, Debug)]
pub struct ClusterOptions {
    /// Keep only the `top_q` largest entries per column of `|W|` before
    /// symmetrization; 0 keeps everything.
    pub top_q: usize,
    /// Independent k-means restarts; the lowest-inertia run wins.
    pub restarts: usize,
    /// Lloyd iteration cap per restart.
    pub kmeans_max_iter: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            top_q: 0,
            restarts: 10,
            kmeans_max_iter: 300,
        }
    }
}

/// Symmetric nonnegative affinity with zero diagonal, max entry scaled to 1.
#[derive(Clone, Debug)]
pub struct SymmetricAffinity {
    pub matrix: Tensor,
    pub options: ClusterOptions,
}

/// Entrywise |W|, zero diagonal, optional per-column top-q truncation.
/// This runs before symmetrization so the sparsity budget applies to the
/// raw coefficient columns.
pub(crate) fn abs_truncated(w: &Tensor, top_q: usize) -> Tensor {
    let n = w.rows();
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                m.set2(i, j, w.get2(i, j).abs());
            }
        }
    }
    if top_q > 0 && top_q < n {
        for j in 0..n {
            let mut col: Vec<(usize, f64)> = (0..n).map(|i| (i, m.get2(i, j))).collect();
            // largest first; ties keep the lower row index
            col.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for &(i, _) in &col[top_q..] {
                m.set2(i, j, 0.0);
            }
        }
    }
    m
}

/// EDSC-style cleanup of a coefficient matrix: absolute value, zero
/// diagonal, optional top-q per column, symmetrize, scale to max entry 1.
pub fn postprocess_affinity(w: &Tensor, options: ClusterOptions) -> Result<SymmetricAffinity> {
    if w.shape().len() != 2 || w.rows() != w.cols() {
        return Err(UdllError::Shape {
            op: "postprocess_affinity",
            detail: format!("expected a square matrix, got {:?}", w.shape()),
        });
    }
    let n = w.rows();
    let truncated = abs_truncated(w, options.top_q);
    let mut sym = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            sym.set2(i, j, 0.5 * (truncated.get2(i, j) + truncated.get2(j, i)));
        }
    }
    let max = sym.max_abs();
    if max == 0.0 {
        return Err(UdllError::Data(
            "affinity is identically zero; nothing to cluster".into(),
        ));
    }
    Ok(SymmetricAffinity {
        matrix: sym.scale(1.0 / max),
        options,
    })
}

/// `L = I - D^{-1/2} S D^{-1/2}` with isolated vertices (zero degree) given
/// identity rows/columns; returns the flagged isolated indices.
pub fn normalized_laplacian(s: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if s.shape().len() != 2 || s.rows() != s.cols() {
        return Err(UdllError::Shape {
            op: "normalized_laplacian",
            detail: format!("expected a square matrix, got {:?}", s.shape()),
        });
    }
    let n = s.rows();
    let mut degree = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            let v = s.get2(i, j);
            if v < 0.0 {
                return Err(UdllError::Param(format!(
                    "normalized_laplacian: negative affinity at ({i}, {j})"
                )));
            }
            acc += v;
        }
        degree[i] = acc;
    }
    let isolated: Vec<usize> = (0..n).filter(|&i| degree[i] == 0.0).collect();
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut l = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let off = -inv_sqrt[i] * s.get2(i, j) * inv_sqrt[j];
            l.set2(i, j, if i == j { 1.0 + off } else { off });
        }
    }
    Ok((l, isolated))
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.
/// Returns eigenvalues ascending with matching eigenvector columns.
pub fn jacobi_eigen(matrix: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    const MAX_SWEEPS: usize = 64;
    if matrix.shape().len() != 2 || matrix.rows() != matrix.cols() {
        return Err(UdllError::Shape {
            op: "jacobi_eigen",
            detail: format!("expected a square matrix, got {:?}", matrix.shape()),
        });
    }
    let n = matrix.rows();
    let mut a = matrix.data().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob = frob_norm(&a);
    let tol = if frob > 0.0 { frob * 1e-14 } else { 0.0 };
    let mut residual = off_diagonal_norm(&a, n);
    let mut converged = residual <= tol;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, n, p, q);
            }
        }
        residual = off_diagonal_norm(&a, n);
        converged = residual <= tol;
    }
    if !converged {
        return Err(UdllError::NoConvergence {
            residual: residual / frob.max(f64::MIN_POSITIVE),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]).then(i.cmp(&j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors.data_mut()[row * n + col] = v[row * n + src];
        }
    }
    Ok((eigenvalues, vectors))
}

fn frob_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[i * n + j] * a[i * n + j];
            }
        }
    }
    acc.sqrt()
}

fn rotate(a: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = a[p * n + q];
    if apq == 0.0 {
        return;
    }
    let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
    let t = if theta >= 0.0 {
        1.0 / (theta + (theta * theta + 1.0).sqrt())
    } else {
        -1.0 / (-theta + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let app = a[p * n + p];
    let aqq = a[q * n + q];
    a[p * n + p] = app - t * apq;
    a[q * n + q] = aqq + t * apq;
    a[p * n + q] = 0.0;
    a[q * n + p] = 0.0;
    for r in 0..n {
        if r != p && r != q {
            let arp = a[r * n + p];
            let arq = a[r * n + q];
            a[r * n + p] = c * arp - s * arq;
            a[p * n + r] = a[r * n + p];
            a[r * n + q] = s * arp + c * arq;
            a[q * n + r] = a[r * n + q];
        }
    }
    for r in 0..n {
        let vrp = v[r * n + p];
        let vrq = v[r * n + q];
        v[r * n + p] = c * vrp - s * vrq;
        v[r * n + q] = s * vrp + c * vrq;
    }
}

/// Coordinates from the `k` smallest eigenvectors, rows normalized to unit
/// length.
#[derive(Clone, Debug)]
pub struct SpectralEmbedding {
    /// `[n, k]`, one row per sample.
    pub coordinates: Tensor,
    /// The `k` eigenvalues used, ascending.
    pub eigenvalues: Vec<f64>,
    /// Rows that were exactly zero before normalization (left zero).
    pub zero_rows: Vec<usize>,
    /// True when the spectrum gives no gap after the k-th eigenvalue.
    pub degenerate_spectrum: bool,
}

pub fn spectral_embed(laplacian: &Tensor, k: usize) -> Result<SpectralEmbedding> {
    if k < 2 {
        return Err(UdllError::Param(format!(
            "spectral_embed: need k >= 2 clusters, got {k}"
        )));
    }
    let n = laplacian.rows();
    if k > n {
        return Err(UdllError::Param(format!(
            "spectral_embed: k = {k} exceeds n = {n}"
        )));
    }
    let (eigenvalues, vectors) = jacobi_eigen(laplacian)?;
    let mut coordinates = Tensor::zeros(&[n, k]);
    for row in 0..n {
        for col in 0..k {
            coordinates.set2(row, col, vectors.get2(row, col));
        }
    }
    let mut zero_rows = Vec::new();
    for row in 0..n {
        let norm: f64 = (0..k)
            .map(|c| coordinates.get2(row, c).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            zero_rows.push(row);
        } else {
            for c in 0..k {
                let v = coordinates.get2(row, c) / norm;
                coordinates.set2(row, c, v);
            }
        }
    }
    let degenerate_spectrum = k < n && (eigenvalues[k] - eigenvalues[k - 1]).abs() < 1e-12;
    Ok(SpectralEmbedding {
        coordinates,
        eigenvalues: eigenvalues[..k].to_vec(),
        zero_rows,
        degenerate_spectrum,
    })
}

/// Lloyd's algorithm with k-means++ seeding; best of `restarts` runs by
/// inertia, fully deterministic for a fixed seed.
pub fn kmeans(points: &Tensor, clusters: usize, seed: u64, restarts: usize) -> Result<Vec<usize>> {
    let n = points.rows();
    if clusters == 0 || n < clusters {
        return Err(UdllError::Param(format!(
            "kmeans: need 1 <= clusters <= n (clusters = {clusters}, n = {n})"
        )));
    }
    let restarts = restarts.max(1);
    let runs: Vec<(f64, Vec<usize>)> = par::map_indexed(restarts, |r| {
        let run_seed = seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        lloyd_run(points, clusters, run_seed, 300)
    });
    let mut best = 0usize;
    for r in 1..runs.len() {
        if runs[r].0 < runs[best].0 {
            best = r;
        }
    }
    Ok(runs.into_iter().nth(best).expect("at least one run").1)
}

fn lloyd_run(points: &Tensor, k: usize, seed: u64, max_iter: usize) -> (f64, Vec<usize>) {
    let n = points.rows();
    let dim = points.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plusplus_init(points, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0; n];
    for _ in 0..max_iter {
        // assignment
        let mut changed = false;
        for i in 0..n {
            let row = &points.data()[i * dim..(i + 1) * dim];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
                let d = sqdist(row, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
            dists[i] = best_d;
        }
        // update
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            let row = &points.data()[i * dim..(i + 1) * dim];
            for (s, &v) in sums[labels[i] * dim..(labels[i] + 1) * dim]
                .iter_mut()
                .zip(row)
            {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an emptied cluster at the farthest point
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]))
                    .expect("n >= 1");
                centroids[c * dim..(c + 1) * dim]
                    .copy_from_slice(&points.data()[far * dim..(far + 1) * dim]);
                changed = true;
            } else {
                for d in 0..dim {
                    centroids[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    // final assignment pass so labels and inertia match the last centroids
    let mut inertia = 0.0;
    for i in 0..n {
        let row = &points.data()[i * dim..(i + 1) * dim];
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
            let d = sqdist(row, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels[i] = best;
        inertia += best_d;
    }
    (inertia, labels)
}

fn plusplus_init(points: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.rows();
    let dim = points.cols();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&points.data()[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sqdist(&points.data()[i * dim..(i + 1) * dim], &centroids[..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(&points.data()[chosen * dim..(chosen + 1) * dim]);
        let newc = &centroids[start..start + dim];
        for i in 0..n {
            let d = sqdist(&points.data()[i * dim..(i + 1) * dim], newc);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Whole pipeline: post-process `w`, build the normalized Laplacian, embed,
/// and k-means the rows into `clusters` labels.
pub fn spectral_cluster(
    w: &Tensor,
    clusters: usize,
    options: ClusterOptions,
    seed: u64,
) -> Result<LabelVector> {
    let affinity = postprocess_affinity(w, options)?;
    let (laplacian, _isolated) = normalized_laplacian(&affinity.matrix)?;
    let embedding = spectral_embed(&laplacian, clusters)?;
    let labels = kmeans(&embedding.coordinates, clusters, seed, options.restarts)?;
    LabelVector::new(labels, clusters)
}
