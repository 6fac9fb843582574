//! Spectral initialization: simultaneous iteration for symmetric
//! eigendecomposition, a column-sampled Monte Carlo SVD over the augmented
//! matrix [[0, Aᵀ], [A, 0]], and the positive/negative-part community
//! construction that turns singular triplets into IBG factors.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{IbgError, Result};
use crate::graph::DirectedGraphSignal;
use crate::ibg::{logit, IbgFactors};

/// Square sparse matrix with both row and column access.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    n: usize,
    rows: Vec<Vec<(u32, f64)>>,
    cols: Vec<Vec<(u32, f64)>>,
}

impl SparseMatrix {
    pub fn from_triplets(n: usize, entries: &[(u32, u32, f64)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); n];
        let mut cols = vec![Vec::new(); n];
        for &(i, j, v) in entries {
            if i as usize >= n || j as usize >= n {
                return Err(IbgError::Shape(format!(
                    "entry ({i},{j}) out of range for {n}x{n}"
                )));
            }
            rows[i as usize].push((j, v));
            cols[j as usize].push((i, v));
        }
        Ok(Self { n, rows, cols })
    }

    pub fn from_graph(graph: &DirectedGraphSignal) -> Self {
        let n = graph.num_nodes();
        let mut rows = vec![Vec::new(); n];
        let mut cols = vec![Vec::new(); n];
        for (i, j) in graph.edges() {
            rows[i as usize].push((j, 1.0));
            cols[j as usize].push((i, 1.0));
        }
        Self { n, rows, cols }
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Matvec access to the implicit 2N x 2N augmented matrix B = [[0, Aᵀ], [A, 0]].
/// Stacking convention: the top block indexes right singular vectors, the
/// bottom block left singular vectors (B [ψ; φ] = [Aᵀφ; Aψ]).
pub struct Augmented<'a> {
    a: &'a SparseMatrix,
}

impl<'a> Augmented<'a> {
    pub fn new(a: &'a SparseMatrix) -> Self {
        Self { a }
    }

    pub fn dim(&self) -> usize {
        2 * self.a.n
    }

    /// Exact product y = B x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.a.n;
        y.iter_mut().for_each(|v| *v = 0.0);
        // Top: Aᵀ (bottom of x); bottom: A (top of x).
        for i in 0..n {
            for &(j, v) in &self.a.rows[i] {
                y[i + n] += v * x[j as usize];
                y[j as usize] += v * x[i + n];
            }
        }
    }

    /// Column c of B accumulated into y with weight w * x[c].
    fn add_column(&self, c: usize, w: f64, y: &mut [f64]) {
        let n = self.a.n;
        if c < n {
            // B[:, c] lives in the bottom block: A[:, c].
            for &(r, v) in &self.a.cols[c] {
                y[r as usize + n] += w * v;
            }
        } else {
            // B[:, c] lives in the top block: row (c - n) of A.
            for &(j, v) in &self.a.rows[c - n] {
                y[j as usize] += w * v;
            }
        }
    }

    /// Monte Carlo product over `samples` columns drawn uniformly with
    /// replacement, rescaled by 2N/samples for unbiasedness. `samples == 2N`
    /// together with `exact` short-circuits to the exact product.
    pub fn matvec_sampled(
        &self,
        x: &[f64],
        y: &mut [f64],
        samples: usize,
        exact: bool,
        rng: &mut impl Rng,
    ) {
        if exact {
            self.matvec(x, y);
            return;
        }
        let dim = self.dim();
        y.iter_mut().for_each(|v| *v = 0.0);
        let scale = dim as f64 / samples as f64;
        for _ in 0..samples {
            let c = rng.gen_range(0..dim);
            if x[c] != 0.0 {
                self.add_column(c, scale * x[c], y);
            }
        }
    }
}

fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Modified Gram-Schmidt QR of the columns of Q in place. Columns that
/// collapse numerically are replaced by fresh random directions.
fn orthonormalize(q: &mut Array2<f64>, rng: &mut impl Rng) {
    let (dim, m) = q.dim();
    for j in 0..m {
        loop {
            for prev in 0..j {
                let dot: f64 = (0..dim).map(|i| q[[i, prev]] * q[[i, j]]).sum();
                for i in 0..dim {
                    q[[i, j]] -= dot * q[[i, prev]];
                }
            }
            let norm: f64 = (0..dim).map(|i| q[[i, j]] * q[[i, j]]).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for i in 0..dim {
                    q[[i, j]] /= norm;
                }
                break;
            }
            let fresh = random_unit(dim, rng);
            for i in 0..dim {
                q[[i, j]] = fresh[i];
            }
        }
    }
}

/// Simultaneous iteration for the top-M eigenpairs of a symmetric operator
/// given by `matvec`. Returns (eigenvalues as Rayleigh quotients, Q).
pub fn simultaneous_iteration_eig(
    matvec: &dyn Fn(&[f64], &mut [f64]),
    dim: usize,
    m: usize,
    iters: usize,
    seed: u64,
) -> Result<(Vec<f64>, Array2<f64>)> {
    if m == 0 || m > dim {
        return Err(IbgError::Validation(format!(
            "need 1 <= M <= dim, got M={m}, dim={dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = Array2::from_shape_fn((dim, m), |_| rng.sample::<f64, _>(StandardNormal));
    orthonormalize(&mut q, &mut rng);
    let mut z = vec![0.0; dim];
    let mut col = vec![0.0; dim];
    for _ in 0..iters {
        let mut next = Array2::zeros((dim, m));
        for j in 0..m {
            for i in 0..dim {
                col[i] = q[[i, j]];
            }
            matvec(&col, &mut z);
            for i in 0..dim {
                next[[i, j]] = z[i];
            }
        }
        q = next;
        orthonormalize(&mut q, &mut rng);
    }
    let mut lambda = vec![0.0; m];
    for j in 0..m {
        for i in 0..dim {
            col[i] = q[[i, j]];
        }
        matvec(&col, &mut z);
        lambda[j] = (0..dim).map(|i| col[i] * z[i]).sum();
    }
    Ok((lambda, q))
}

/// Singular triplets of a square matrix: σ_1 ≥ … ≥ σ_M ≥ 0 with unit left
/// vectors φ (columns) and right vectors ψ.
#[derive(Debug, Clone)]
pub struct SvdTriplets {
    pub sigma: Vec<f64>,
    pub phi: Array2<f64>,
    pub psi: Array2<f64>,
    /// Spread of the repeated σ extractions; large values signal that the
    /// sampled iteration has not settled.
    pub sigma_spread: Vec<f64>,
}

/// Number of extraction repeats averaged for each σ estimate.
const SIGMA_EXTRACTION_REPEATS: usize = 8;

/// Monte Carlo SVD via simultaneous iteration on the shifted augmented
/// matrix. `sample_ratio` = 1 uses exact products; below 1, each iteration
/// draws ceil(2N * ratio) columns uniformly with replacement.
pub fn mc_svd(
    a: &SparseMatrix,
    m: usize,
    iters: usize,
    sample_ratio: f64,
    seed: u64,
) -> Result<SvdTriplets> {
    if !(sample_ratio > 0.0 && sample_ratio <= 1.0) {
        return Err(IbgError::Validation(format!(
            "sample_ratio must be in (0, 1], got {sample_ratio}"
        )));
    }
    let n = a.dim();
    let b = Augmented::new(a);
    let dim = b.dim();
    if m == 0 || m > n {
        return Err(IbgError::Validation(format!(
            "need 1 <= M <= N, got M={m}, N={n}"
        )));
    }
    let exact = sample_ratio >= 1.0;
    let samples = ((dim as f64 * sample_ratio).ceil() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Stage 1: power iteration for the spectral radius estimate. The final
    // Rayleigh quotient uses the exact product; the ± pairing of the
    // augmented spectrum can stall the quotient below σ1, so the product
    // norm backs it up.
    let mut q1 = random_unit(dim, &mut rng);
    let mut z = vec![0.0; dim];
    for _ in 0..iters {
        b.matvec_sampled(&q1, &mut z, samples, exact, &mut rng);
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-300 {
            break;
        }
        for i in 0..dim {
            q1[i] = z[i] / norm;
        }
    }
    b.matvec(&q1, &mut z);
    let rayleigh: f64 = q1.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
    let prod_norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    let shift = rayleigh.abs().max(prod_norm);

    // Stage 2: simultaneous iteration on B + shift * I with fresh column
    // samples every iteration.
    let mut q = Array2::from_shape_fn((dim, m), |_| rng.sample::<f64, _>(StandardNormal));
    orthonormalize(&mut q, &mut rng);
    let mut col = vec![0.0; dim];
    for _ in 0..iters {
        let mut next = Array2::zeros((dim, m));
        for j in 0..m {
            for i in 0..dim {
                col[i] = q[[i, j]];
            }
            b.matvec_sampled(&col, &mut z, samples, exact, &mut rng);
            for i in 0..dim {
                next[[i, j]] = z[i] + shift * col[i];
            }
        }
        q = next;
        orthonormalize(&mut q, &mut rng);
    }

    // Stage 3: σ_j = Q_jᵀ B Q_j with the unshifted (sampled) matrix,
    // averaged over repeated draws.
    let mut sigma = vec![0.0; m];
    let mut spread = vec![0.0; m];
    for j in 0..m {
        for i in 0..dim {
            col[i] = q[[i, j]];
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut acc = 0.0;
        for _ in 0..SIGMA_EXTRACTION_REPEATS {
            b.matvec_sampled(&col, &mut z, samples, exact, &mut rng);
            let est: f64 = col.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
            acc += est;
            lo = lo.min(est);
            hi = hi.max(est);
        }
        sigma[j] = (acc / SIGMA_EXTRACTION_REPEATS as f64).max(0.0);
        spread[j] = hi - lo;
    }

    // Split into blocks and unit-normalize; exact eigenvectors carry norm
    // 1/sqrt(2) per block.
    let mut phi = Array2::zeros((n, m));
    let mut psi = Array2::zeros((n, m));
    for j in 0..m {
        let mut pn = 0.0;
        let mut sn = 0.0;
        for i in 0..n {
            sn += q[[i, j]] * q[[i, j]];
            pn += q[[i + n, j]] * q[[i + n, j]];
        }
        let (pn, sn) = (pn.sqrt(), sn.sqrt());
        for i in 0..n {
            if sn > 1e-12 {
                psi[[i, j]] = q[[i, j]] / sn;
            }
            if pn > 1e-12 {
                phi[[i, j]] = q[[i + n, j]] / pn;
            }
        }
    }

    // Order by descending σ.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap());
    let sigma_sorted: Vec<f64> = order.iter().map(|&j| sigma[j]).collect();
    let spread_sorted: Vec<f64> = order.iter().map(|&j| spread[j]).collect();
    let mut phi_sorted = Array2::zeros((n, m));
    let mut psi_sorted = Array2::zeros((n, m));
    for (new, &old) in order.iter().enumerate() {
        phi_sorted.column_mut(new).assign(&phi.column(old));
        psi_sorted.column_mut(new).assign(&psi.column(old));
    }

    Ok(SvdTriplets {
        sigma: sigma_sorted,
        phi: phi_sorted,
        psi: psi_sorted,
        sigma_spread: spread_sorted,
    })
}

fn split_parts(v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pos: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    let neg: Vec<f64> = v.iter().map(|&x| (-x).max(0.0)).collect();
    (pos, neg)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// Affiliations (in [0,1]) and magnitudes before the logit map; the signed
/// sum over the four communities of one triplet equals σ φ ψᵀ exactly.
pub fn init_affiliations(triplets: &SvdTriplets, k: usize) -> Result<(Array2<f64>, Array2<f64>, Array1<f64>)> {
    if k == 0 || k % 4 != 0 {
        return Err(IbgError::Validation(format!(
            "K must be a positive multiple of 4, got {k}"
        )));
    }
    let needed = k / 4;
    if needed > triplets.sigma.len() {
        return Err(IbgError::Validation(format!(
            "K/4 = {needed} triplets requested, only {} available",
            triplets.sigma.len()
        )));
    }
    let n = triplets.phi.nrows();
    let mut u = Array2::zeros((n, k));
    let mut v = Array2::zeros((n, k));
    let mut r = Array1::zeros(k);
    for t in 0..needed {
        let sigma = triplets.sigma[t];
        let phi: Vec<f64> = triplets.phi.column(t).to_vec();
        let psi: Vec<f64> = triplets.psi.column(t).to_vec();
        let (pp, pm) = split_parts(&phi);
        let (sp, sm) = split_parts(&psi);
        // C = σ φ ψᵀ = σ (φ⁺ - φ⁻)(ψ⁺ - ψ⁻)ᵀ, one community per product
        // with the sign carried by r.
        let parts: [(&[f64], &[f64], f64); 4] = [
            (&pp, &sp, 1.0),
            (&pp, &sm, -1.0),
            (&pm, &sp, -1.0),
            (&pm, &sm, 1.0),
        ];
        for (c, (uu, vv, sign)) in parts.iter().enumerate() {
            let col = 4 * t + c;
            let nu = inf_norm(uu);
            let nv = inf_norm(vv);
            if nu <= 0.0 || nv <= 0.0 || sigma <= 0.0 {
                // Zero part: inert community.
                continue;
            }
            for i in 0..n {
                u[[i, col]] = uu[i] / nu;
                v[[i, col]] = vv[i] / nv;
            }
            r[col] = sign * sigma * nu * nv;
        }
    }
    Ok((u, v, r))
}

/// IBG factors from singular triplets: affiliations through the clamped
/// inverse sigmoid, features zeroed.
pub fn init_from_svd(triplets: &SvdTriplets, k: usize, d: usize) -> Result<IbgFactors> {
    let (u, v, r) = init_affiliations(triplets, k)?;
    Ok(IbgFactors {
        ulogit: u.mapv(logit),
        vlogit: v.mapv(logit),
        r,
        f: Array2::zeros((k, d)),
        b: Array2::zeros((k, d)),
    })
}

/// Convenience wrapper: spectral initialization straight from a graph.
pub fn svd_init(
    graph: &DirectedGraphSignal,
    k: usize,
    iters: usize,
    sample_ratio: f64,
    seed: u64,
) -> Result<IbgFactors> {
    if k == 0 || k % 4 != 0 {
        return Err(IbgError::Validation(format!(
            "K must be a positive multiple of 4, got {k}"
        )));
    }
    let a = SparseMatrix::from_graph(graph);
    let triplets = mc_svd(&a, k / 4, iters, sample_ratio, seed)?;
    init_from_svd(&triplets, k, graph.feature_dim())
}
