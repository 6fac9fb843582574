//! Directed graph-signals: sparse adjacency in CSR form plus a dense
//! node-feature matrix with entries in [-1,1].

use ndarray::{Array1, Array2};
use rand::distributions::Bernoulli;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{IbgError, Result};

/// Train/validation/test node masks. Masks must be disjoint; nodes may be
/// in no split at all.
#[derive(Debug, Clone)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train.len() != n || self.val.len() != n || self.test.len() != n {
            return Err(IbgError::Shape(format!(
                "mask length mismatch: expected {n} nodes"
            )));
        }
        for i in 0..n {
            let c = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if c > 1 {
                return Err(IbgError::Validation(format!(
                    "node {i} appears in more than one mask"
                )));
            }
        }
        Ok(())
    }
}

/// A directed graph with N nodes, a deduplicated edge set held in CSR form,
/// and an N x D feature matrix. Immutable once built; safe to share across
/// readers.
#[derive(Debug, Clone)]
pub struct DirectedGraphSignal {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    x: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    pub masks: Option<Masks>,
}

impl DirectedGraphSignal {
    /// Build from an edge list. Edges are sorted and deduplicated; node ids
    /// must be dense in 0..n.
    pub fn new(n: usize, mut edges: Vec<(u32, u32)>, x: Array2<f64>) -> Result<Self> {
        if x.nrows() != n {
            return Err(IbgError::Shape(format!(
                "signal has {} rows, graph has {} nodes",
                x.nrows(),
                n
            )));
        }
        for &(s, d) in &edges {
            if s as usize >= n || d as usize >= n {
                return Err(IbgError::Validation(format!(
                    "edge ({s},{d}) out of range for {n} nodes"
                )));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let mut row_ptr = vec![0usize; n + 1];
        for &(s, _) in &edges {
            row_ptr[s as usize + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = edges.iter().map(|&(_, d)| d).collect();
        Ok(Self {
            n,
            row_ptr,
            cols,
            x,
            labels: None,
            masks: None,
        })
    }

    /// Graph with no features (zero-width signal).
    pub fn from_edges(n: usize, edges: Vec<(u32, u32)>) -> Result<Self> {
        Self::new(n, edges, Array2::zeros((n, 0)))
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.cols.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn signal(&self) -> &Array2<f64> {
        &self.x
    }

    /// Replace the signal matrix (entries are expected to be in [-1,1]).
    pub fn set_signal(&mut self, x: Array2<f64>) -> Result<()> {
        if x.nrows() != self.n {
            return Err(IbgError::Shape(format!(
                "signal has {} rows, graph has {} nodes",
                x.nrows(),
                self.n
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(IbgError::Validation("non-finite signal entry".into()));
        }
        self.x = x;
        Ok(())
    }

    /// Out-neighbors of node `i`, sorted ascending.
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Dyad lookup by binary search on the sorted neighbor slice.
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&(j as u32)).is_ok()
    }

    /// Iterate all edges in (src, dst) sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .map(move |&j| (i as u32, j))
        })
    }

    /// Dense adjacency; test and oracle paths only.
    pub fn dense_adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for (i, j) in self.edges() {
            a[[i as usize, j as usize]] = 1.0;
        }
        a
    }

    pub fn set_labels(&mut self, labels: Vec<usize>) -> Result<()> {
        if labels.len() != self.n {
            return Err(IbgError::Shape(format!(
                "labels have {} entries, graph has {} nodes",
                labels.len(),
                self.n
            )));
        }
        self.labels = Some(labels);
        Ok(())
    }

    pub fn set_masks(&mut self, masks: Masks) -> Result<()> {
        masks.validate(self.n)?;
        self.masks = Some(masks);
        Ok(())
    }
}

/// Per-column affine min-max rescale to [-1,1]; constant columns map to 0.
pub fn normalize_signal(x: &mut Array2<f64>) {
    for mut col in x.columns_mut() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in col.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi > lo {
            let mid = 0.5 * (hi + lo);
            let half = 0.5 * (hi - lo);
            col.mapv_inplace(|v| (v - mid) / half);
        } else {
            col.fill(0.0);
        }
    }
}

/// Stochastic block model specification for synthetic directed graphs.
#[derive(Debug, Clone)]
pub struct SbmSpec {
    pub block_sizes: Vec<usize>,
    /// Directed edge probabilities between block pairs, row = source block.
    pub probs: Array2<f64>,
    /// Per-block feature means, one row per block.
    pub means: Array2<f64>,
    pub noise: f64,
    pub seed: u64,
    pub self_loops: bool,
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        let b = self.block_sizes.len();
        if b == 0 || self.block_sizes.iter().any(|&s| s == 0) {
            return Err(IbgError::Validation("empty block in SBM spec".into()));
        }
        if self.probs.nrows() != b || self.probs.ncols() != b {
            return Err(IbgError::Shape(format!(
                "probability matrix must be {b}x{b}"
            )));
        }
        if self.probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(IbgError::Validation("edge probability outside [0,1]".into()));
        }
        if self.means.nrows() != b {
            return Err(IbgError::Shape(format!("means matrix must have {b} rows")));
        }
        if self.noise < 0.0 {
            return Err(IbgError::Validation("negative noise scale".into()));
        }
        Ok(())
    }
}

/// Sample a directed SBM graph-signal. Each ordered dyad (i,j) with i != j
/// (and i == j when `self_loops` is set) is drawn independently with its
/// block-pair probability. Deterministic per seed.
pub fn generate_sbm(spec: &SbmSpec) -> Result<DirectedGraphSignal> {
    spec.validate()?;
    let n: usize = spec.block_sizes.iter().sum();
    let d = spec.means.ncols();
    let mut block_of = Vec::with_capacity(n);
    for (b, &sz) in spec.block_sizes.iter().enumerate() {
        block_of.extend(std::iter::repeat(b).take(sz));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut edges = Vec::new();
    let b = spec.block_sizes.len();
    let dists: Vec<Vec<Option<Bernoulli>>> = (0..b)
        .map(|bi| {
            (0..b)
                .map(|bj| {
                    let p = spec.probs[[bi, bj]];
                    if p > 0.0 {
                        Some(Bernoulli::new(p).unwrap())
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            if i == j && !spec.self_loops {
                continue;
            }
            if let Some(dist) = &dists[block_of[i]][block_of[j]] {
                if dist.sample(&mut rng) {
                    edges.push((i as u32, j as u32));
                }
            }
        }
    }

    let noise = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let mut x = Array2::zeros((n, d));
    for i in 0..n {
        for jd in 0..d {
            let v = spec.means[[block_of[i], jd]] + spec.noise * noise.sample(&mut rng);
            x[[i, jd]] = v.clamp(-1.0, 1.0);
        }
    }

    let mut g = DirectedGraphSignal::new(n, edges, x)?;
    g.set_labels(block_of)?;
    Ok(g)
}

/// Planted block indicator vectors of an SBM spec, one column per block.
pub fn block_indicators(spec: &SbmSpec) -> Array2<f64> {
    let n: usize = spec.block_sizes.iter().sum();
    let mut ind = Array2::zeros((n, spec.block_sizes.len()));
    let mut row = 0;
    for (b, &sz) in spec.block_sizes.iter().enumerate() {
        for _ in 0..sz {
            ind[[row, b]] = 1.0;
            row += 1;
        }
    }
    ind
}

/// Pearson correlation between two vectors; 0 when either is constant.
pub fn correlation(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        num += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    num / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dedup_and_sorted_edges() {
        let g = DirectedGraphSignal::from_edges(3, vec![(1, 2), (0, 1), (0, 1)]).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
        assert!(g.has_edge(0, 1));
        assert!(!g.has_edge(1, 0));
    }

    #[test]
    fn out_of_range_edge_rejected() {
        assert!(DirectedGraphSignal::from_edges(2, vec![(0, 2)]).is_err());
    }

    #[test]
    fn normalize_affine_rescale() {
        let mut x = array![[0.0], [5.0], [10.0]];
        normalize_signal(&mut x);
        assert_eq!(x, array![[-1.0], [0.0], [1.0]]);
    }

    #[test]
    fn normalize_constant_column_is_zero() {
        let mut x = array![[7.0], [7.0], [7.0]];
        normalize_signal(&mut x);
        assert_eq!(x, array![[0.0], [0.0], [0.0]]);
    }

    #[test]
    fn normalize_identity_on_normalized() {
        let mut x = array![[-1.0], [1.0]];
        normalize_signal(&mut x);
        assert_eq!(x, array![[-1.0], [1.0]]);
    }

    fn two_block_spec(p_in: f64, p_out: f64) -> SbmSpec {
        SbmSpec {
            block_sizes: vec![50, 50],
            probs: array![[p_in, p_out], [p_out, p_in]],
            means: array![[0.5], [-0.5]],
            noise: 0.1,
            seed: 7,
            self_loops: false,
        }
    }

    #[test]
    fn sbm_zero_probability_empty() {
        let mut spec = two_block_spec(0.0, 0.0);
        spec.noise = 0.0;
        let g = generate_sbm(&spec).unwrap();
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn sbm_probability_one_complete() {
        let spec = SbmSpec {
            block_sizes: vec![3],
            probs: array![[1.0]],
            means: array![[0.0]],
            noise: 0.0,
            seed: 0,
            self_loops: false,
        };
        let g = generate_sbm(&spec).unwrap();
        assert_eq!(g.num_edges(), 6);
    }

    #[test]
    fn sbm_deterministic_per_seed() {
        let spec = two_block_spec(0.2, 0.02);
        let g1 = generate_sbm(&spec).unwrap();
        let g2 = generate_sbm(&spec).unwrap();
        assert_eq!(g1.edges().collect::<Vec<_>>(), g2.edges().collect::<Vec<_>>());
        assert_eq!(g1.signal(), g2.signal());
    }

    #[test]
    fn sbm_within_block_density_in_binomial_band() {
        // 2 blocks of 50, p_in = 0.2: within-block dyads = 2 * 50 * 49 = 4900.
        // 3-sigma band around the binomial mean.
        let spec = two_block_spec(0.2, 0.02);
        let g = generate_sbm(&spec).unwrap();
        let labels = g.labels.clone().unwrap();
        let within = g
            .edges()
            .filter(|&(i, j)| labels[i as usize] == labels[j as usize])
            .count() as f64;
        let trials = 4900.0f64;
        let mean = trials * 0.2;
        let sigma = (trials * 0.2 * 0.8).sqrt();
        assert!(
            (within - mean).abs() <= 3.0 * sigma,
            "within-block edges {within} outside 3-sigma band around {mean}"
        );
    }

    #[test]
    fn masks_disjointness_enforced() {
        let masks = Masks {
            train: vec![true, false],
            val: vec![true, false],
            test: vec![false, false],
        };
        assert!(masks.validate(2).is_err());
    }
}
