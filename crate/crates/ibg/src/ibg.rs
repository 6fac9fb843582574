//! The intersecting block graph model C = U diag(r) Vᵀ, P = UF + VB, its
//! densifying loss in naive and restructured forms, analytic gradients and
//! the full-batch fitter.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamParams, AdamState};
use crate::error::{IbgError, Result};
use crate::graph::DirectedGraphSignal;
use crate::norms::{self, DensifyWeights};

/// Logit clamp keeping sigmoid gradients finite at the extremes.
pub const LOGIT_CLAMP: f64 = 30.0;
/// Dense materialization guard for test-only O(N²) paths.
pub const DENSE_GUARD_N: usize = 5000;

pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    1.0 / (1.0 + (-x).exp())
}

/// Derivative of sigmoid(clamp(x)) with respect to x; zero outside the clamp.
pub fn sigmoid_grad(x: f64) -> f64 {
    if x.abs() >= LOGIT_CLAMP {
        0.0
    } else {
        let s = sigmoid(x);
        s * (1.0 - s)
    }
}

/// Inverse sigmoid with the affiliation clamped to [1e-6, 1-1e-6] first.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// IBG factor set. Affiliations are stored as logits; U and V are derived
/// sigmoid views.
#[derive(Debug, Clone, PartialEq)]
pub struct IbgFactors {
    pub ulogit: Array2<f64>,
    pub vlogit: Array2<f64>,
    pub r: Array1<f64>,
    pub f: Array2<f64>,
    pub b: Array2<f64>,
}

impl IbgFactors {
    pub fn zeros(n: usize, k: usize, d: usize) -> Self {
        Self {
            ulogit: Array2::zeros((n, k)),
            vlogit: Array2::zeros((n, k)),
            r: Array1::zeros(k),
            f: Array2::zeros((k, d)),
            b: Array2::zeros((k, d)),
        }
    }

    pub fn random(n: usize, k: usize, d: usize, rng: &mut impl Rng) -> Self {
        Self {
            ulogit: Array2::from_shape_fn((n, k), |_| rng.gen_range(-1.0..1.0)),
            vlogit: Array2::from_shape_fn((n, k), |_| rng.gen_range(-1.0..1.0)),
            r: Array1::from_shape_fn(k, |_| rng.gen_range(-0.5..0.5)),
            f: Array2::zeros((k, d)),
            b: Array2::zeros((k, d)),
        }
    }

    pub fn n(&self) -> usize {
        self.ulogit.nrows()
    }

    pub fn k(&self) -> usize {
        self.ulogit.ncols()
    }

    pub fn d(&self) -> usize {
        self.f.ncols()
    }

    pub fn u(&self) -> Array2<f64> {
        self.ulogit.mapv(sigmoid)
    }

    pub fn v(&self) -> Array2<f64> {
        self.vlogit.mapv(sigmoid)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k) = self.ulogit.dim();
        if k == 0 {
            return Err(IbgError::Validation("K must be at least 1".into()));
        }
        if self.vlogit.dim() != (n, k)
            || self.r.len() != k
            || self.f.nrows() != k
            || self.b.dim() != self.f.dim()
        {
            return Err(IbgError::Shape("inconsistent factor shapes".into()));
        }
        let finite = self.ulogit.iter().all(|v| v.is_finite())
            && self.vlogit.iter().all(|v| v.is_finite())
            && self.r.iter().all(|v| v.is_finite())
            && self.f.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite());
        if !finite {
            return Err(IbgError::Validation("non-finite factor entry".into()));
        }
        Ok(())
    }

    /// Grow the rank by one inert community: zero magnitude, zero features,
    /// random affiliation column. Leaves the realized C and P unchanged.
    pub fn append_zero_community(&mut self, rng: &mut impl Rng) {
        let n = self.n();
        let d = self.d();
        let ucol = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0));
        let vcol = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0));
        self.ulogit.push_column(ucol.column(0)).unwrap();
        self.vlogit.push_column(vcol.column(0)).unwrap();
        let mut r = self.r.to_vec();
        r.push(0.0);
        self.r = Array1::from(r);
        self.f.push_row(Array1::zeros(d).view()).unwrap();
        self.b.push_row(Array1::zeros(d).view()).unwrap();
    }

    /// Dense C = U diag(r) Vᵀ and P = UF + VB; test and oracle paths only.
    pub fn synthesize(&self) -> Result<(Array2<f64>, Array2<f64>)> {
        let n = self.n();
        if n > DENSE_GUARD_N {
            return Err(IbgError::SizeGuard(format!(
                "dense synthesis limited to N <= {DENSE_GUARD_N}, got {n}"
            )));
        }
        let u = self.u();
        let v = self.v();
        let ur = &u * &self.r.view().insert_axis(Axis(0));
        let c = ur.dot(&v.t());
        let p = u.dot(&self.f) + v.dot(&self.b);
        Ok((c, p))
    }
}

/// Loss weights and optimizer settings for fitting.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub k: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamParams,
}

impl FitConfig {
    pub fn new(k: usize, gamma: f64) -> Self {
        Self {
            k,
            gamma,
            alpha: 0.5,
            beta: 0.5,
            lr: 0.03,
            epochs: 500,
            seed: 0,
            adam: AdamParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(IbgError::Validation("K must be at least 1".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(IbgError::Validation("gamma must be positive".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || (self.alpha + self.beta - 1.0).abs() > 1e-12 {
            return Err(IbgError::Validation(
                "alpha and beta must be nonnegative and sum to 1".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(IbgError::Validation("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn weights(&self, graph: &DirectedGraphSignal) -> Result<DensifyWeights> {
        norms::densify_weights(graph.num_nodes(), graph.num_edges(), self.gamma)
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub factors: IbgFactors,
    /// Loss per epoch; entry 0 is the initialization loss.
    pub loss_trace: Vec<f64>,
    pub graph_term: f64,
    pub signal_term: f64,
    pub wall_time_s: f64,
}

/// Gradient bundle with respect to the logits (sigmoid already chained).
#[derive(Debug, Clone)]
pub struct Grads {
    pub ulogit: Array2<f64>,
    pub vlogit: Array2<f64>,
    pub r: Array1<f64>,
    pub f: Array2<f64>,
    pub b: Array2<f64>,
}

/// Exact O(N²) loss: alpha (1+gamma) ||A - C||²_{F;Q_A} + beta ||X - P||²_F.
/// Oracle for `loss_efficient`.
pub fn loss_naive(graph: &DirectedGraphSignal, f: &IbgFactors, cfg: &FitConfig) -> Result<f64> {
    cfg.validate()?;
    let w = cfg.weights(graph)?;
    let (c, p) = f.synthesize()?;
    let graph_term = cfg.alpha
        * (1.0 + cfg.gamma)
        * norms::weighted_frobenius_sq_residual(graph, &c, &w)?;
    let signal_term = if cfg.beta > 0.0 && graph.feature_dim() > 0 {
        cfg.beta * norms::signal_frobenius_sq(&(graph.signal() - &p))
    } else {
        0.0
    };
    Ok(graph_term + signal_term)
}

/// Edge-score helper: s_ij = U_i diag(r) V_jᵀ per edge, in edge order.
fn edge_scores(graph: &DirectedGraphSignal, u: &Array2<f64>, v: &Array2<f64>, r: &Array1<f64>) -> Vec<f64> {
    let k = r.len();
    let mut s = Vec::with_capacity(graph.num_edges());
    for (i, j) in graph.edges() {
        let (i, j) = (i as usize, j as usize);
        let mut acc = 0.0;
        for kk in 0..k {
            acc += u[[i, kk]] * r[kk] * v[[j, kk]];
        }
        s.push(acc);
    }
    s
}

/// Graph and signal loss terms in O(K²N + KE + NKD), never touching an N x N
/// buffer.
pub fn loss_terms(graph: &DirectedGraphSignal, f: &IbgFactors, cfg: &FitConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    f.validate()?;
    let w = cfg.weights(graph)?;
    let e_count = graph.num_edges() as f64;

    let u = f.u();
    let v = f.v();
    let gu = u.t().dot(&u);
    let gv = v.t().dot(&v);
    let k = f.k();

    // Σ_ij s_ij² = Σ_{k,l} r_k r_l Gu[k,l] Gv[k,l].
    let mut trace_term = 0.0;
    for a in 0..k {
        for b in 0..k {
            trace_term += f.r[a] * f.r[b] * gu[[a, b]] * gv[[a, b]];
        }
    }

    let scores = edge_scores(graph, &u, &v, &f.r);
    let sum_s: f64 = scores.iter().sum();
    let sum_s2: f64 = scores.iter().map(|s| s * s).sum();

    let graph_term =
        cfg.alpha * (1.0 + (w.e * trace_term - 2.0 * sum_s + (1.0 - w.e) * sum_s2) / e_count);

    let signal_term = if cfg.beta > 0.0 && graph.feature_dim() > 0 {
        let p = u.dot(&f.f) + v.dot(&f.b);
        cfg.beta * norms::signal_frobenius_sq(&(graph.signal() - &p))
    } else {
        0.0
    };
    Ok((graph_term, signal_term))
}

/// Restructured loss equal to `loss_naive` to 1e-10 relative.
pub fn loss_efficient(graph: &DirectedGraphSignal, f: &IbgFactors, cfg: &FitConfig) -> Result<f64> {
    let (g, s) = loss_terms(graph, f, cfg)?;
    Ok(g + s)
}

/// Loss value together with analytic gradients of `loss_efficient`.
pub fn loss_and_grads(
    graph: &DirectedGraphSignal,
    fac: &IbgFactors,
    cfg: &FitConfig,
) -> Result<(f64, Grads)> {
    cfg.validate()?;
    fac.validate()?;
    let w = cfg.weights(graph)?;
    let n = fac.n();
    let k = fac.k();
    let d = fac.d();
    let e_count = graph.num_edges() as f64;
    let c1 = cfg.alpha / e_count;

    let u = fac.u();
    let v = fac.v();
    let gu = u.t().dot(&u);
    let gv = v.t().dot(&v);

    let mut trace_term = 0.0;
    for a in 0..k {
        for b in 0..k {
            trace_term += fac.r[a] * fac.r[b] * gu[[a, b]] * gv[[a, b]];
        }
    }

    // Edge accumulators: me[i,:] = Σ_{j in N(i)} ((1-e) s_ij - 1) V_j, and
    // mev[j,:] the transposed counterpart over in-edges; dr collects
    // ((1-e) s_ij - 1) u_ik v_jk per community.
    let mut me = Array2::<f64>::zeros((n, k));
    let mut mev = Array2::<f64>::zeros((n, k));
    let mut dr_edges = Array1::<f64>::zeros(k);
    let mut sum_s = 0.0;
    let mut sum_s2 = 0.0;
    for (i, j) in graph.edges() {
        let (i, j) = (i as usize, j as usize);
        let mut s = 0.0;
        for kk in 0..k {
            s += u[[i, kk]] * fac.r[kk] * v[[j, kk]];
        }
        sum_s += s;
        sum_s2 += s * s;
        let wgt = (1.0 - w.e) * s - 1.0;
        for kk in 0..k {
            me[[i, kk]] += wgt * v[[j, kk]];
            mev[[j, kk]] += wgt * u[[i, kk]];
            dr_edges[kk] += wgt * u[[i, kk]] * v[[j, kk]];
        }
    }

    let loss_graph =
        cfg.alpha * (1.0 + (w.e * trace_term - 2.0 * sum_s + (1.0 - w.e) * sum_s2) / e_count);

    // dU = 2 c1 (e U R Gv + Me) R, dV = 2 c1 (e V R Gu + Me') R.
    let r_diag = &fac.r.view().insert_axis(Axis(0));
    let mut du = (&(&u * r_diag).dot(&gv) * w.e + &me) * (2.0 * c1);
    let mut dv = (&(&v * r_diag).dot(&gu) * w.e + &mev) * (2.0 * c1);
    du = &du * r_diag;
    dv = &dv * r_diag;

    let mut dr = Array1::<f64>::zeros(k);
    for kk in 0..k {
        let mut gsum = 0.0;
        for ll in 0..k {
            gsum += fac.r[ll] * gu[[kk, ll]] * gv[[kk, ll]];
        }
        dr[kk] = 2.0 * c1 * (w.e * gsum + dr_edges[kk]);
    }

    let mut df = Array2::<f64>::zeros((k, d));
    let mut db = Array2::<f64>::zeros((k, d));
    let mut loss_signal = 0.0;
    if cfg.beta > 0.0 && d > 0 {
        let c2 = cfg.beta / (n * d) as f64;
        let pres = u.dot(&fac.f) + v.dot(&fac.b) - graph.signal();
        loss_signal = c2 * pres.iter().map(|x| x * x).sum::<f64>();
        df = u.t().dot(&pres) * (2.0 * c2);
        db = v.t().dot(&pres) * (2.0 * c2);
        du += &(pres.dot(&fac.f.t()) * (2.0 * c2));
        dv += &(pres.dot(&fac.b.t()) * (2.0 * c2));
    }

    // Chain through the clamped sigmoid.
    let du_logit = &du * &fac.ulogit.mapv(sigmoid_grad);
    let dv_logit = &dv * &fac.vlogit.mapv(sigmoid_grad);

    Ok((
        loss_graph + loss_signal,
        Grads {
            ulogit: du_logit,
            vlogit: dv_logit,
            r: dr,
            f: df,
            b: db,
        },
    ))
}

struct FitState {
    u: AdamState,
    v: AdamState,
    r: AdamState,
    f: AdamState,
    b: AdamState,
}

impl FitState {
    fn new(n: usize, k: usize, d: usize) -> Self {
        Self {
            u: AdamState::new(n * k),
            v: AdamState::new(n * k),
            r: AdamState::new(k),
            f: AdamState::new(k * d),
            b: AdamState::new(k * d),
        }
    }

    fn apply(&mut self, p: &AdamParams, fac: &mut IbgFactors, g: &Grads) {
        self.u.step_array2(p, &mut fac.ulogit, &g.ulogit);
        self.v.step_array2(p, &mut fac.vlogit, &g.vlogit);
        self.r.step_array1(p, &mut fac.r, &g.r);
        self.f.step_array2(p, &mut fac.f, &g.f);
        self.b.step_array2(p, &mut fac.b, &g.b);
    }
}

/// Full-batch fit with the adaptive-moment optimizer. Returns the best
/// factors seen over the run, so the final loss never exceeds the initial
/// one. Deterministic per seed.
pub fn fit_full(
    graph: &DirectedGraphSignal,
    cfg: &FitConfig,
    init: Option<IbgFactors>,
) -> Result<FitResult> {
    cfg.validate()?;
    let start = Instant::now();
    let n = graph.num_nodes();
    let d = graph.feature_dim();
    let mut fac = match init {
        Some(f) => {
            f.validate()?;
            if f.n() != n || f.k() != cfg.k || f.d() != d {
                return Err(IbgError::Shape(format!(
                    "init factors are ({}, {}, {}), expected ({n}, {}, {d})",
                    f.n(),
                    f.k(),
                    f.d(),
                    cfg.k
                )));
            }
            f
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            IbgFactors::random(n, cfg.k, d, &mut rng)
        }
    };

    let adam = AdamParams {
        lr: cfg.lr,
        ..cfg.adam
    };
    let mut state = FitState::new(n, cfg.k, d);
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let init_loss = loss_efficient(graph, &fac, cfg)?;
    trace.push(init_loss);
    let mut best = fac.clone();
    let mut best_loss = init_loss;

    for epoch in 0..cfg.epochs {
        let (loss, grads) = loss_and_grads(graph, &fac, cfg)?;
        if !loss.is_finite() {
            return Err(IbgError::Diverged { step: epoch, loss });
        }
        state.apply(&adam, &mut fac, &grads);
        let after = loss_efficient(graph, &fac, cfg)?;
        if !after.is_finite() {
            return Err(IbgError::Diverged {
                step: epoch + 1,
                loss: after,
            });
        }
        trace.push(after);
        if after < best_loss {
            best_loss = after;
            best = fac.clone();
        }
    }

    let (graph_term, signal_term) = loss_terms(graph, &best, cfg)?;
    Ok(FitResult {
        factors: best,
        loss_trace: trace,
        graph_term,
        signal_term,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Warm-started best losses (and the factors achieving them) for ranks
/// 1..=k_max, minimized over restarts. Each rank reuses the previous rank's
/// factors with one inert community appended, so within a restart the loss
/// sequence is non-increasing by construction.
pub fn best_fits_sequence(
    graph: &DirectedGraphSignal,
    k_max: usize,
    cfg: &FitConfig,
    restarts: usize,
) -> Result<(Vec<f64>, Vec<IbgFactors>)> {
    if k_max == 0 || restarts == 0 {
        return Err(IbgError::Validation("k_max and restarts must be >= 1".into()));
    }
    let mut best = vec![f64::INFINITY; k_max];
    let mut best_factors: Vec<Option<IbgFactors>> = vec![None; k_max];
    for restart in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(restart as u64 * 7919));
        let mut fac: Option<IbgFactors> = None;
        for k in 1..=k_max {
            let mut kcfg = cfg.clone();
            kcfg.k = k;
            kcfg.seed = cfg.seed ^ (restart as u64) << 32 | k as u64;
            if let Some(f) = &mut fac {
                f.append_zero_community(&mut rng);
            }
            let res = fit_full(graph, &kcfg, fac.take())?;
            let loss = loss_efficient(graph, &res.factors, &kcfg)?;
            if loss < best[k - 1] {
                best[k - 1] = loss;
                best_factors[k - 1] = Some(res.factors.clone());
            }
            fac = Some(res.factors);
        }
    }
    // Enforce the running minimum across restart mixing: a rank-k optimum
    // padded with an inert community is a valid rank-(k+1) candidate.
    for k in 1..k_max {
        if best[k] > best[k - 1] {
            best[k] = best[k - 1];
            let mut padded = best_factors[k - 1].clone().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xabcd ^ k as u64);
            padded.append_zero_community(&mut rng);
            best_factors[k] = Some(padded);
        }
    }
    Ok((best, best_factors.into_iter().map(|f| f.unwrap()).collect()))
}

/// Best observed losses for ranks 1..=k_max.
pub fn best_loss_sequence(
    graph: &DirectedGraphSignal,
    k_max: usize,
    cfg: &FitConfig,
    restarts: usize,
) -> Result<Vec<f64>> {
    Ok(best_fits_sequence(graph, k_max, cfg, restarts)?.0)
}

/// η̂_k = (1+δ) times the best observed rank-k loss.
pub fn eta_sequence(
    graph: &DirectedGraphSignal,
    k_max: usize,
    cfg: &FitConfig,
    restarts: usize,
    delta: f64,
) -> Result<Vec<f64>> {
    if delta < 0.0 {
        return Err(IbgError::Validation("delta must be nonnegative".into()));
    }
    let losses = best_loss_sequence(graph, k_max, cfg, restarts)?;
    Ok(losses.into_iter().map(|l| (1.0 + delta) * l).collect())
}

pub fn eta_estimate(
    graph: &DirectedGraphSignal,
    k: usize,
    cfg: &FitConfig,
    restarts: usize,
    delta: f64,
) -> Result<f64> {
    Ok(eta_sequence(graph, k, cfg, restarts, delta)?[k - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_graph(n: usize, density: f64, d: usize, seed: u64) -> DirectedGraphSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n as u32 {
            for j in 0..n as u32 {
                if rng.gen_bool(density) {
                    edges.push((i, j));
                }
            }
        }
        if edges.is_empty() {
            edges.push((0, (n as u32 - 1).max(1) % n as u32));
        }
        let mut g = DirectedGraphSignal::from_edges(n, edges).unwrap();
        if d > 0 {
            let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
            g.set_signal(x).unwrap();
        }
        g
    }

    fn random_factors(n: usize, k: usize, d: usize, seed: u64) -> IbgFactors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = IbgFactors::random(n, k, d, &mut rng);
        f.f = Array2::from_shape_fn((k, d), |_| rng.gen_range(-0.5..0.5));
        f.b = Array2::from_shape_fn((k, d), |_| rng.gen_range(-0.5..0.5));
        f
    }

    #[test]
    fn synthesize_zero_factors() {
        let f = IbgFactors::zeros(4, 2, 1);
        let (c, p) = f.synthesize().unwrap();
        assert_eq!(c, Array2::zeros((4, 4)));
        assert_eq!(p, Array2::zeros((4, 1)));
    }

    #[test]
    fn synthesize_single_full_block() {
        let mut f = IbgFactors::zeros(3, 1, 0);
        f.ulogit.fill(LOGIT_CLAMP);
        f.vlogit.fill(LOGIT_CLAMP);
        f.r[0] = 0.7;
        let (c, _) = f.synthesize().unwrap();
        for v in c.iter() {
            assert!((v - 0.7).abs() < 1e-10);
        }
    }

    #[test]
    fn synthesize_matches_loop_oracle() {
        let f = random_factors(6, 3, 2, 11);
        let (c, p) = f.synthesize().unwrap();
        let u = f.u();
        let v = f.v();
        for i in 0..6 {
            for j in 0..6 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += f.r[k] * u[[i, k]] * v[[j, k]];
                }
                assert!((c[[i, j]] - s).abs() < 1e-12);
            }
            for dd in 0..2 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += u[[i, k]] * f.f[[k, dd]] + v[[i, k]] * f.b[[k, dd]];
                }
                assert!((p[[i, dd]] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_zero_factors_closed_form() {
        // r = 0, F = B = 0 gives alpha + beta ||X||²_F.
        let g = random_graph(12, 0.3, 2, 21);
        let mut f = random_factors(12, 3, 2, 22);
        f.r.fill(0.0);
        f.f.fill(0.0);
        f.b.fill(0.0);
        let cfg = FitConfig::new(3, 1.0);
        let expected = cfg.alpha + cfg.beta * norms::signal_frobenius_sq(g.signal());
        let naive = loss_naive(&g, &f, &cfg).unwrap();
        let eff = loss_efficient(&g, &f, &cfg).unwrap();
        assert!((naive - expected).abs() < 1e-12);
        assert!((eff - expected).abs() < 1e-12);
    }

    /// Block factors with hard logits that exactly reproduce their own graph.
    fn planted_instance(seed: u64) -> (DirectedGraphSignal, IbgFactors, FitConfig) {
        let n = 10;
        let k = 2;
        let mut f = IbgFactors::zeros(n, k, 1);
        f.ulogit.fill(-LOGIT_CLAMP);
        f.vlogit.fill(-LOGIT_CLAMP);
        for i in 0..5 {
            f.ulogit[[i, 0]] = LOGIT_CLAMP;
            f.vlogit[[i + 5, 0]] = LOGIT_CLAMP;
            f.ulogit[[i + 5, 1]] = LOGIT_CLAMP;
            f.vlogit[[i, 1]] = LOGIT_CLAMP;
        }
        f.r = array![1.0, 1.0];
        let mut edges = Vec::new();
        for i in 0..5u32 {
            for j in 5..10u32 {
                edges.push((i, j));
                edges.push((j, i));
            }
        }
        let mut g = DirectedGraphSignal::from_edges(n, edges).unwrap();
        // Signal that the factors also reproduce exactly: X = UF + VB.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        f.f = Array2::from_shape_fn((k, 1), |_| rng.gen_range(-0.4..0.4));
        f.b = Array2::from_shape_fn((k, 1), |_| rng.gen_range(-0.4..0.4));
        let (_, p) = f.synthesize().unwrap();
        g.set_signal(p).unwrap();
        (g, f, FitConfig::new(k, 1.0))
    }

    #[test]
    fn loss_perfect_fit_is_zero() {
        let (g, f, cfg) = planted_instance(31);
        assert!(loss_naive(&g, &f, &cfg).unwrap() < 1e-20);
        assert!(loss_efficient(&g, &f, &cfg).unwrap() < 1e-20);
    }

    #[test]
    fn loss_beta_zero_ignores_signal_factors() {
        let g = random_graph(10, 0.3, 2, 41);
        let mut f = random_factors(10, 2, 2, 42);
        let mut cfg = FitConfig::new(2, 1.0);
        cfg.alpha = 1.0;
        cfg.beta = 0.0;
        let l1 = loss_efficient(&g, &f, &cfg).unwrap();
        f.f.fill(3.0);
        f.b.fill(-2.0);
        let l2 = loss_efficient(&g, &f, &cfg).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn efficient_matches_naive() {
        for seed in 0..8u64 {
            let n = 8 + (seed as usize % 3) * 20;
            let g = random_graph(n, 0.1 + 0.05 * seed as f64 % 0.4, 2, 100 + seed);
            let f = random_factors(n, 4, 2, 200 + seed);
            let cfg = FitConfig::new(4, 0.5 + seed as f64 * 0.3);
            let naive = loss_naive(&g, &f, &cfg).unwrap();
            let eff = loss_efficient(&g, &f, &cfg).unwrap();
            assert!(
                (naive - eff).abs() / naive <= 1e-10,
                "seed {seed}: naive {naive} vs efficient {eff}"
            );
        }
    }

    #[test]
    fn efficient_matches_hand_sum_k1() {
        // 3 nodes, edges (0,1) and (1,2), K = 1.
        let g = DirectedGraphSignal::from_edges(3, vec![(0, 1), (1, 2)]).unwrap();
        let mut f = IbgFactors::zeros(3, 1, 0);
        f.ulogit = array![[0.2], [-0.3], [0.1]];
        f.vlogit = array![[-0.1], [0.4], [0.5]];
        f.r[0] = 0.8;
        let mut cfg = FitConfig::new(1, 1.0);
        cfg.alpha = 1.0;
        cfg.beta = 0.0;
        let u: Vec<f64> = f.ulogit.iter().map(|&x| sigmoid(x)).collect();
        let v: Vec<f64> = f.vlogit.iter().map(|&x| sigmoid(x)).collect();
        let w = norms::densify_weights(3, 2, 1.0).unwrap();
        let mut hand = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let s = 0.8 * u[i] * v[j];
                let a = if (i, j) == (0, 1) || (i, j) == (1, 2) { 1.0 } else { 0.0 };
                hand += (a - s).powi(2) * w.q(a == 1.0);
            }
        }
        hand *= (1.0 + 1.0) * w.mu;
        let eff = loss_efficient(&g, &f, &cfg).unwrap();
        assert!((eff - hand).abs() < 1e-12);
    }

    #[test]
    fn loss_permutation_invariant() {
        let g = random_graph(9, 0.3, 2, 51);
        let f = random_factors(9, 4, 2, 52);
        let cfg = FitConfig::new(4, 1.0);
        let base = loss_efficient(&g, &f, &cfg).unwrap();
        let perm = [2usize, 0, 3, 1];
        let mut pf = f.clone();
        for (new, &old) in perm.iter().enumerate() {
            pf.ulogit.column_mut(new).assign(&f.ulogit.column(old));
            pf.vlogit.column_mut(new).assign(&f.vlogit.column(old));
            pf.r[new] = f.r[old];
            pf.f.row_mut(new).assign(&f.f.row(old));
            pf.b.row_mut(new).assign(&f.b.row(old));
        }
        let permuted = loss_efficient(&g, &pf, &cfg).unwrap();
        assert!((base - permuted).abs() <= 1e-12 * base.max(1.0));
    }

    fn finite_diff_check(g: &DirectedGraphSignal, f: &IbgFactors, cfg: &FitConfig) -> f64 {
        let h = 1e-5;
        let (_, grads) = loss_and_grads(g, f, cfg).unwrap();
        let mut max_rel: f64 = 0.0;
        let mut check = |analytic: f64, perturb: &mut dyn FnMut(&mut IbgFactors, f64)| {
            let mut fp = f.clone();
            perturb(&mut fp, h);
            let lp = loss_naive(g, &fp, cfg).unwrap();
            let mut fm = f.clone();
            perturb(&mut fm, -h);
            let lm = loss_naive(g, &fm, cfg).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let scale = analytic.abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max((analytic - fd).abs() / scale);
        };
        let (n, k) = f.ulogit.dim();
        let d = f.d();
        for idx in 0..(n * k).min(12) {
            let (i, kk) = (idx / k, idx % k);
            check(grads.ulogit[[i, kk]], &mut |f, h| f.ulogit[[i, kk]] += h);
            check(grads.vlogit[[i, kk]], &mut |f, h| f.vlogit[[i, kk]] += h);
        }
        for kk in 0..k {
            check(grads.r[kk], &mut |f, h| f.r[kk] += h);
        }
        for kk in 0..k {
            for dd in 0..d {
                check(grads.f[[kk, dd]], &mut |f, h| f.f[[kk, dd]] += h);
                check(grads.b[[kk, dd]], &mut |f, h| f.b[[kk, dd]] += h);
            }
        }
        max_rel
    }

    #[test]
    fn grads_match_finite_differences() {
        for seed in 0..6u64 {
            let g = random_graph(8, 0.3, 2, 300 + seed);
            let f = random_factors(8, 3, 2, 400 + seed);
            let cfg = FitConfig::new(3, 1.0);
            let err = finite_diff_check(&g, &f, &cfg);
            assert!(err <= 1e-6, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn grads_zero_at_perfect_fit() {
        let (g, f, cfg) = planted_instance(61);
        let (_, grads) = loss_and_grads(&g, &f, &cfg).unwrap();
        let max = grads
            .ulogit
            .iter()
            .chain(grads.vlogit.iter())
            .chain(grads.r.iter())
            .chain(grads.f.iter())
            .chain(grads.b.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(max <= 1e-10, "max gradient {max}");
    }

    #[test]
    fn grads_beta_zero_kills_feature_grads() {
        let g = random_graph(8, 0.3, 2, 71);
        let f = random_factors(8, 3, 2, 72);
        let mut cfg = FitConfig::new(3, 1.0);
        cfg.alpha = 1.0;
        cfg.beta = 0.0;
        let (_, grads) = loss_and_grads(&g, &f, &cfg).unwrap();
        assert!(grads.f.iter().all(|&v| v == 0.0));
        assert!(grads.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fit_recovers_planted_factorization() {
        let (g, _, mut cfg) = planted_instance(81);
        cfg.epochs = 1200;
        cfg.lr = 0.05;
        cfg.seed = 3;
        let res = fit_full(&g, &cfg, None).unwrap();
        let final_loss = *res.loss_trace.last().unwrap();
        assert!(final_loss <= 1e-4, "final loss {final_loss}");
    }

    #[test]
    fn fit_zero_epochs_echoes_init() {
        let g = random_graph(10, 0.3, 1, 91);
        let cfg = FitConfig {
            epochs: 0,
            ..FitConfig::new(2, 1.0)
        };
        let res = fit_full(&g, &cfg, None).unwrap();
        assert_eq!(res.loss_trace.len(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = IbgFactors::random(10, 2, 1, &mut rng);
        assert_eq!(res.factors, init);
    }

    #[test]
    fn fit_deterministic_per_seed() {
        let g = random_graph(12, 0.25, 1, 101);
        let mut cfg = FitConfig::new(3, 1.0);
        cfg.epochs = 40;
        cfg.seed = 9;
        let r1 = fit_full(&g, &cfg, None).unwrap();
        let r2 = fit_full(&g, &cfg, None).unwrap();
        assert_eq!(r1.loss_trace, r2.loss_trace);
        assert_eq!(r1.factors, r2.factors);
    }

    #[test]
    fn fit_final_loss_not_above_initial() {
        let g = random_graph(15, 0.2, 2, 111);
        let mut cfg = FitConfig::new(4, 1.0);
        cfg.epochs = 60;
        let res = fit_full(&g, &cfg, None).unwrap();
        let final_loss = loss_efficient(&g, &res.factors, &cfg).unwrap();
        assert!(final_loss <= res.loss_trace[0] + 1e-15);
    }

    #[test]
    fn eta_sequence_monotone() {
        let g = random_graph(12, 0.3, 1, 121);
        let mut cfg = FitConfig::new(1, 1.0);
        cfg.epochs = 80;
        let eta = eta_sequence(&g, 5, &cfg, 2, 0.3).unwrap();
        for k in 1..eta.len() {
            assert!(
                eta[k] <= eta[k - 1] + 1e-12,
                "eta not monotone at k={}: {} > {}",
                k + 1,
                eta[k],
                eta[k - 1]
            );
        }
    }

    #[test]
    fn eta_delta_zero_is_best_loss() {
        let g = random_graph(10, 0.3, 1, 131);
        let mut cfg = FitConfig::new(1, 1.0);
        cfg.epochs = 30;
        let losses = best_loss_sequence(&g, 3, &cfg, 2).unwrap();
        let eta = eta_sequence(&g, 3, &cfg, 2, 0.0).unwrap();
        assert_eq!(losses, eta);
    }

    #[test]
    fn eta_low_rank_target_reaches_near_zero() {
        let (g, _, mut cfg) = planted_instance(141);
        cfg.epochs = 800;
        cfg.lr = 0.05;
        let eta = eta_sequence(&g, 4, &cfg, 2, 0.3).unwrap();
        assert!(eta[3] <= 1e-2, "eta_4 = {}", eta[3]);
    }
}
