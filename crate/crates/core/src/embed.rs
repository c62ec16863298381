//! Laplacian Eigenmaps: kNN graph construction, graph Laplacian, and a
//! dense Jacobi eigensolver for the 2D spectral embedding.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// exp(-d^2 / (2 sigma^2)) with sigma = median kNN distance.
    Heat,
    Binary,
}

/// Symmetric weighted kNN graph.
#[derive(Debug, Clone)]
pub struct NeighborGraph<F: Scalar> {
    pub n: usize,
    pub k: usize,
    /// Each undirected edge stored once with i < j; w > 0.
    pub edges: Vec<(usize, usize, F)>,
}

impl<F: Scalar> NeighborGraph<F> {
    pub fn edge_set(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self.edges.iter().map(|&(i, j, _)| (i, j)).collect();
        e.sort_unstable();
        e
    }
}

/// 2D embedding from the 2nd and 3rd smallest generalized eigenpairs.
#[derive(Debug, Clone)]
pub struct Embedding2D<F: Scalar> {
    pub coords: Vec<[F; 2]>,
    pub eigenvalues: [F; 2],
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

fn pairwise_dist2<F: Scalar>(points: &Tensor<F>) -> (usize, usize, Vec<F>) {
    let n = points.shape()[0];
    let d = points.shape()[1];
    let data = points.data();
    let mut dist2 = vec![F::zero(); n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = F::zero();
            for t in 0..d {
                let diff = data[i * d + t] - data[j * d + t];
                acc += diff * diff;
            }
            dist2[i * n + j] = acc;
            dist2[j * n + i] = acc;
        }
    }
    (n, d, dist2)
}

/// Euclidean kNN graph, symmetrized by union. Disconnected graphs are
/// repaired by adding the shortest inter-component edge until connected.
pub fn knn_graph<F: Scalar>(points: &Tensor<F>, k: usize, mode: WeightMode) -> Result<NeighborGraph<F>> {
    let shape = points.shape();
    if shape.len() != 2 {
        return Err(Error::shape(format!("knn_graph expects [n, d], got {shape:?}")));
    }
    let n = shape[0];
    if k == 0 || k >= n {
        return Err(Error::contract(format!("knn_graph requires n > k >= 1, got n={n}, k={k}")));
    }
    let (_, _, dist2) = pairwise_dist2(points);

    // kNN selection per point.
    let mut selected: Vec<(usize, usize)> = Vec::with_capacity(n * k);
    let mut knn_d2: Vec<F> = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            dist2[i * n + a]
                .partial_cmp(&dist2[i * n + b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(k) {
            selected.push((i.min(j), i.max(j)));
            knn_d2.push(dist2[i * n + j]);
        }
    }
    selected.sort_unstable();
    selected.dedup();

    // Heat bandwidth: median of the kNN distances.
    let mut dists: Vec<F> = knn_d2.iter().map(|&d2| d2.sqrt()).collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let sigma = dists[dists.len() / 2];

    let weight = |d2: F| -> F {
        match mode {
            WeightMode::Binary => F::one(),
            WeightMode::Heat => {
                if sigma > F::zero() {
                    (-d2 / (F::from_f64_lossy(2.0) * sigma * sigma)).exp()
                } else {
                    F::one()
                }
            }
        }
    };

    let mut edges: Vec<(usize, usize, F)> = selected
        .iter()
        .map(|&(i, j)| (i, j, weight(dist2[i * n + j])))
        .collect();

    // Connectivity repair.
    let mut ds = DisjointSet::new(n);
    let mut components = n;
    for &(i, j, _) in &edges {
        if ds.union(i, j) {
            components -= 1;
        }
    }
    while components > 1 {
        let mut best: Option<(usize, usize, F)> = None;
        for i in 0..n {
            for j in (i + 1)..n {
                if ds.find(i) == ds.find(j) {
                    continue;
                }
                let d2 = dist2[i * n + j];
                if best.map(|(_, _, bd)| d2 < bd).unwrap_or(true) {
                    best = Some((i, j, d2));
                }
            }
        }
        let (i, j, d2) = best.expect("components > 1 implies a crossing pair");
        edges.push((i, j, weight(d2)));
        ds.union(i, j);
        components -= 1;
    }
    edges.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    Ok(NeighborGraph { n, k, edges })
}

/// Dense L = D - W and the degree diagonal; errors on disconnected input.
pub fn graph_laplacian<F: Scalar>(g: &NeighborGraph<F>) -> Result<(Vec<F>, Vec<F>)> {
    let n = g.n;
    let mut ds = DisjointSet::new(n);
    let mut components = n;
    for &(i, j, _) in &g.edges {
        if ds.union(i, j) {
            components -= 1;
        }
    }
    if components != 1 {
        return Err(Error::contract(format!(
            "graph_laplacian: graph has {components} components"
        )));
    }
    let mut lap = vec![F::zero(); n * n];
    let mut deg = vec![F::zero(); n];
    for &(i, j, w) in &g.edges {
        lap[i * n + j] = lap[i * n + j] - w;
        lap[j * n + i] = lap[j * n + i] - w;
        deg[i] += w;
        deg[j] += w;
    }
    for i in 0..n {
        lap[i * n + i] = deg[i];
    }
    Ok((lap, deg))
}

/// Cyclic Jacobi eigendecomposition of a symmetric dense matrix.
///
/// Returns (eigenvalues, eigenvectors) with eigenvectors stored as columns
/// of a row-major n x n matrix, unsorted.
pub fn jacobi_eigen<F: Scalar>(a: &[F], n: usize) -> Result<(Vec<F>, Vec<F>)> {
    const MAX_SWEEPS: usize = 100;
    let mut m = a.to_vec();
    let mut v = vec![F::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = F::one();
    }
    let off = |m: &[F]| -> F {
        let mut s = F::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[i * n + j] * m[i * n + j];
            }
        }
        s.sqrt()
    };
    let frob = {
        let mut s = F::zero();
        for x in &m {
            s += *x * *x;
        }
        s.sqrt()
    };
    let tol = F::from_f64_lossy(1e-14) * frob.max(F::from_f64_lossy(1e-300));
    for sweep in 0..MAX_SWEEPS {
        if off(&m) <= tol {
            let eigvals = (0..n).map(|i| m[i * n + i]).collect();
            return Ok((eigvals, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol / F::from_f64_lossy((n * n) as f64) {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (F::from_f64_lossy(2.0) * apq);
                let t = {
                    let sign = if theta >= F::zero() { F::one() } else { -F::one() };
                    sign / (theta.abs() + (theta * theta + F::one()).sqrt())
                };
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = m[i * n + p];
                    let aiq = m[i * n + q];
                    m[i * n + p] = c * aip - s * aiq;
                    m[i * n + q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = m[p * n + j];
                    let aqj = m[q * n + j];
                    m[p * n + j] = c * apj - s * aqj;
                    m[q * n + j] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
        if sweep == MAX_SWEEPS - 1 {
            return Err(Error::Convergence(format!(
                "jacobi_eigen: off-diagonal norm {:?} above tolerance after {MAX_SWEEPS} sweeps (n={n})",
                off(&m).to_f64_lossy()
            )));
        }
    }
    unreachable!()
}

/// Eigenvectors for the 2nd and 3rd smallest generalized eigenvalues of
/// L v = lambda D v, solved via the D-normalized Laplacian.
pub fn smallest_generalized_eigenvectors<F: Scalar>(
    lap: &[F],
    deg: &[F],
    n: usize,
) -> Result<Embedding2D<F>> {
    if n < 3 {
        return Err(Error::contract(format!(
            "need at least 3 points for a 2D embedding, got {n}"
        )));
    }
    if deg.iter().any(|&d| d <= F::zero()) {
        return Err(Error::contract("degree matrix must be positive".to_string()));
    }
    let dsqrt_inv: Vec<F> = deg.iter().map(|&d| F::one() / d.sqrt()).collect();
    let mut norm = vec![F::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            norm[i * n + j] = dsqrt_inv[i] * lap[i * n + j] * dsqrt_inv[j];
        }
    }
    let (eigvals, eigvecs) = jacobi_eigen(&norm, n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigvals[a].partial_cmp(&eigvals[b]).unwrap_or(std::cmp::Ordering::Equal));
    // Skip the constant eigenvector at lambda = 0.
    let picked = [order[1], order[2]];
    let mut coords = vec![[F::zero(); 2]; n];
    let mut lambdas = [F::zero(); 2];
    for (c, &col) in picked.iter().enumerate() {
        lambdas[c] = eigvals[col];
        let mut vec_c: Vec<F> = (0..n).map(|i| dsqrt_inv[i] * eigvecs[i * n + col]).collect();
        // Sign convention: first nonzero coordinate positive.
        if let Some(&first) = vec_c.iter().find(|&&x| x != F::zero()) {
            if first < F::zero() {
                for x in &mut vec_c {
                    *x = -*x;
                }
            }
        }
        // Residual check: ||L v - lambda D v|| <= 1e-8 ||L v|| + 1e-12.
        let mut lv = vec![F::zero(); n];
        for i in 0..n {
            let mut acc = F::zero();
            for j in 0..n {
                acc += lap[i * n + j] * vec_c[j];
            }
            lv[i] = acc;
        }
        let mut res2 = F::zero();
        let mut lv2 = F::zero();
        for i in 0..n {
            let r = lv[i] - lambdas[c] * deg[i] * vec_c[i];
            res2 += r * r;
            lv2 += lv[i] * lv[i];
        }
        let bound = F::from_f64_lossy(1e-8) * lv2.sqrt() + F::from_f64_lossy(1e-12);
        if res2.sqrt() > bound {
            return Err(Error::Convergence(format!(
                "generalized eigenpair residual {:?} exceeds {:?}",
                res2.sqrt().to_f64_lossy(),
                bound.to_f64_lossy()
            )));
        }
        for i in 0..n {
            coords[i][c] = vec_c[i];
        }
    }
    Ok(Embedding2D { coords, eigenvalues: lambdas })
}

/// Full pipeline: points [n, d] -> 2D coordinates.
pub fn embed_points<F: Scalar>(points: &Tensor<F>, k: usize, mode: WeightMode) -> Result<Embedding2D<F>> {
    let g = knn_graph(points, k, mode)?;
    let (lap, deg) = graph_laplacian(&g)?;
    smallest_generalized_eigenvectors(&lap, &deg, g.n)
}

/// Joint embedding of training latents and trace points; rows 0..n_train
/// are the training points, the rest the trace.
pub fn embed_with_trace<F: Scalar>(
    train_mus: &Tensor<F>,
    trace_mus: Option<&Tensor<F>>,
    k: usize,
    mode: WeightMode,
) -> Result<Embedding2D<F>> {
    let joint = match trace_mus {
        None => train_mus.clone(),
        Some(tr) => {
            if tr.shape().len() != 2 || tr.shape()[1] != train_mus.shape()[1] {
                return Err(Error::shape(format!(
                    "trace dims {:?} incompatible with train {:?}",
                    tr.shape(),
                    train_mus.shape()
                )));
            }
            let mut data = train_mus.data().to_vec();
            data.extend_from_slice(tr.data());
            Tensor::from_vec(
                vec![train_mus.shape()[0] + tr.shape()[0], train_mus.shape()[1]],
                data,
            )?
        }
    };
    embed_points(&joint, k, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn points(rows: &[&[f64]]) -> Tensor<f64> {
        let d = rows[0].len();
        Tensor::from_vec(
            vec![rows.len(), d],
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn collinear_chain() {
        let p = points(&[&[0.0], &[1.0], &[2.0]]);
        let g = knn_graph(&p, 1, WeightMode::Binary).unwrap();
        assert_eq!(g.edge_set(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn full_k_gives_complete_graph() {
        let p = points(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let g = knn_graph(&p, 3, WeightMode::Heat).unwrap();
        assert_eq!(g.edges.len(), 6);
    }

    #[test]
    fn distant_clusters_connected_only_by_repair() {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for i in 0..6 {
            rows.push(vec![i as f64 * 0.01, 0.0]);
        }
        for i in 0..6 {
            rows.push(vec![1000.0 + i as f64 * 0.01, 0.0]);
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let g = knn_graph(&points(&refs), 2, WeightMode::Heat).unwrap();
        let crossing: Vec<_> = g
            .edges
            .iter()
            .filter(|&&(i, j, _)| (i < 6) != (j < 6))
            .collect();
        assert_eq!(crossing.len(), 1, "exactly one repair edge expected");
    }

    #[test]
    fn duplicate_points_get_unit_weight() {
        let p = points(&[&[1.0, 2.0], &[1.0, 2.0], &[5.0, 5.0]]);
        let g = knn_graph(&p, 1, WeightMode::Heat).unwrap();
        let w01 = g.edges.iter().find(|&&(i, j, _)| i == 0 && j == 1).unwrap().2;
        assert_eq!(w01, 1.0);
    }

    #[test]
    fn path_graph_laplacian_by_hand() {
        let g = NeighborGraph::<f64> {
            n: 3,
            k: 1,
            edges: vec![(0, 1, 1.0), (1, 2, 1.0)],
        };
        let (lap, deg) = graph_laplacian(&g).unwrap();
        assert_eq!(lap, vec![1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(deg, vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn laplacian_rows_sum_to_zero_and_psd() {
        let p = points(&[&[0.0, 0.0], &[1.0, 0.3], &[0.2, 1.0], &[1.4, 1.4], &[0.6, 0.6]]);
        let g = knn_graph(&p, 2, WeightMode::Heat).unwrap();
        let (lap, _) = graph_laplacian(&g).unwrap();
        for i in 0..5 {
            let row: f64 = lap[i * 5..(i + 1) * 5].iter().sum();
            assert!(row.abs() < 1e-12);
        }
        let mut rng = crate::rng::derive(3, crate::rng::Stream::Split, 0, 0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let mut quad = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    quad += x[i] * lap[i * 5 + j] * x[j];
                }
            }
            assert!(quad >= -1e-10);
        }
    }

    #[test]
    fn laplacian_rejects_disconnected() {
        let g = NeighborGraph::<f64> {
            n: 4,
            k: 1,
            edges: vec![(0, 1, 1.0), (2, 3, 1.0)],
        };
        assert!(graph_laplacian(&g).is_err());
    }

    #[test]
    fn constant_vector_is_in_kernel() {
        let p = points(&[&[0.0], &[1.0], &[2.5], &[3.0], &[5.0]]);
        let g = knn_graph(&p, 2, WeightMode::Heat).unwrap();
        let (lap, deg) = graph_laplacian(&g).unwrap();
        let emb = smallest_generalized_eigenvectors(&lap, &deg, 5).unwrap();
        // The two returned eigenvalues exclude the zero mode.
        assert!(emb.eigenvalues[0] > 1e-10);
        // D-orthogonality to the constant vector.
        for c in 0..2 {
            let dot: f64 = (0..5).map(|i| deg[i] * emb.coords[i][c]).sum();
            assert!(dot.abs() < 1e-6, "{dot}");
        }
    }

    #[test]
    fn permutation_equivariance() {
        let base = [&[0.0, 0.1][..], &[1.0, 0.2], &[2.0, 0.1], &[3.3, 0.4], &[4.1, 0.0], &[5.2, 0.3]];
        let p = points(&base);
        let perm = [3usize, 1, 5, 0, 4, 2];
        let permuted: Vec<&[f64]> = perm.iter().map(|&i| base[i]).collect();
        let q = points(&permuted);
        let a = embed_points(&p, 2, WeightMode::Heat).unwrap();
        let b = embed_points(&q, 2, WeightMode::Heat).unwrap();
        for (new_row, &old_row) in perm.iter().enumerate() {
            for c in 0..2 {
                assert!(
                    (a.coords[old_row][c].abs() - b.coords[new_row][c].abs()).abs() < 1e-8,
                    "row {new_row} col {c}"
                );
            }
        }
    }

    #[test]
    fn rotation_invariance_of_graph() {
        // A rigid rotation of inputs leaves pairwise distances, hence the
        // edge set, unchanged.
        let base = [&[0.0, 0.1][..], &[1.0, 0.2], &[2.0, 0.1], &[3.3, 0.4], &[4.1, 0.0], &[5.2, 0.3]];
        let p = points(&base);
        let (s, c) = (0.6f64.sin(), 0.6f64.cos());
        let rotated: Vec<Vec<f64>> = base
            .iter()
            .map(|r| vec![c * r[0] - s * r[1], s * r[0] + c * r[1]])
            .collect();
        let refs: Vec<&[f64]> = rotated.iter().map(|r| r.as_slice()).collect();
        let q = points(&refs);
        let ga = knn_graph(&p, 2, WeightMode::Heat).unwrap();
        let gb = knn_graph(&q, 2, WeightMode::Heat).unwrap();
        assert_eq!(ga.edge_set(), gb.edge_set());
    }

    #[test]
    fn two_gaussian_clusters_separate() {
        let mut rng = crate::rng::derive(11, crate::rng::Stream::Split, 1, 0);
        let d = 5usize;
        let n_per = 40usize;
        let mut data = Vec::new();
        for i in 0..2 * n_per {
            let center = if i < n_per { 0.0 } else { 10.0 };
            for _ in 0..d {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                data.push(center + g);
            }
        }
        let p = Tensor::from_vec(vec![2 * n_per, d], data).unwrap();
        let emb = embed_points(&p, 6, WeightMode::Heat).unwrap();
        // Nearest-centroid agreement >= 99%.
        let centroid = |range: std::ops::Range<usize>| -> [f64; 2] {
            let mut acc = [0.0; 2];
            for i in range.clone() {
                acc[0] += emb.coords[i][0];
                acc[1] += emb.coords[i][1];
            }
            [acc[0] / n_per as f64, acc[1] / n_per as f64]
        };
        let c0 = centroid(0..n_per);
        let c1 = centroid(n_per..2 * n_per);
        let mut agree = 0usize;
        for (i, xy) in emb.coords.iter().enumerate() {
            let d0 = (xy[0] - c0[0]).powi(2) + (xy[1] - c0[1]).powi(2);
            let d1 = (xy[0] - c1[0]).powi(2) + (xy[1] - c1[1]).powi(2);
            let pred = if d1 < d0 { 1 } else { 0 };
            if pred == usize::from(i >= n_per) {
                agree += 1;
            }
        }
        assert!(agree as f64 >= 0.99 * (2 * n_per) as f64, "{agree}/80");
    }

    #[test]
    fn empty_trace_equals_plain_embedding() {
        let p = points(&[&[0.0, 0.1], &[1.0, 0.2], &[2.0, 0.1], &[3.3, 0.4], &[4.1, 0.0]]);
        let a = embed_points(&p, 2, WeightMode::Heat).unwrap();
        let b = embed_with_trace(&p, None, 2, WeightMode::Heat).unwrap();
        for i in 0..5 {
            assert_eq!(a.coords[i], b.coords[i]);
        }
    }
}
