//! Certified fitting: sample a rank, estimate the best achievable losses at
//! that rank and the next one, and accept when the loss gap passes the
//! closed-form certificate. An accepted run carries a deterministic cut
//! similarity bound.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{IbgError, Result};
use crate::graph::DirectedGraphSignal;
use crate::ibg::{self, FitConfig, IbgFactors};
use crate::norms;

/// Closed-form certificate quantities.
#[derive(Debug, Clone, Copy)]
pub struct CertificateBounds {
    /// sqrt(delta/(1+delta) + R (1+delta)/K); the acceptance threshold for
    /// the loss-gap statistic.
    pub slack_term: f64,
    /// sqrt(alpha (1+gamma)) + sqrt(beta); multiplies the loss-gap statistic
    /// in the deterministic cut bound.
    pub det_coefficient: f64,
    /// sqrt(2+gamma); multiplies the slack term in the probabilistic bound.
    pub overall_coefficient: f64,
    /// overall_coefficient * slack_term.
    pub prob_bound: f64,
}

pub fn certificate_bounds(
    delta: f64,
    r_factor: usize,
    k: usize,
    gamma: f64,
    alpha: f64,
    beta: f64,
) -> Result<CertificateBounds> {
    if delta < 0.0 {
        return Err(IbgError::Validation("delta must be nonnegative".into()));
    }
    if r_factor == 0 || k == 0 || k % r_factor != 0 {
        return Err(IbgError::Validation(format!(
            "need R >= 1 dividing K, got R={r_factor}, K={k}"
        )));
    }
    if alpha < 0.0 || beta < 0.0 || (alpha + beta - 1.0).abs() > 1e-12 {
        return Err(IbgError::Validation(
            "alpha and beta must be nonnegative and sum to 1".into(),
        ));
    }
    if !(gamma >= 0.0) {
        return Err(IbgError::Validation("gamma must be nonnegative".into()));
    }
    let slack_term =
        (delta / (1.0 + delta) + r_factor as f64 * (1.0 + delta) / k as f64).sqrt();
    let det_coefficient = (alpha * (1.0 + gamma)).sqrt() + beta.sqrt();
    let overall_coefficient = (2.0 + gamma).sqrt();
    Ok(CertificateBounds {
        slack_term,
        det_coefficient,
        overall_coefficient,
        prob_bound: overall_coefficient * slack_term,
    })
}

/// Loss-gap statistic sqrt(eta_m - eta_{m+1}/(1+delta)); nonnegative
/// whenever the eta sequence is non-increasing.
pub fn gap_statistic(eta_m: f64, eta_m1: f64, delta: f64) -> f64 {
    (eta_m - eta_m1 / (1.0 + delta)).max(0.0).sqrt()
}

/// Acceptance rule for one sampled rank.
pub fn accepts(eta_m: f64, eta_m1: f64, delta: f64, bounds: &CertificateBounds) -> bool {
    gap_statistic(eta_m, eta_m1, delta) <= bounds.slack_term
}

#[derive(Debug, Clone)]
pub struct CertifyConfig {
    pub k: usize,
    pub r_factor: usize,
    pub delta: f64,
    pub restarts: usize,
    pub max_attempts: usize,
    pub fit: FitConfig,
}

impl CertifyConfig {
    pub fn new(k: usize, fit: FitConfig) -> Self {
        Self {
            k,
            r_factor: 2,
            delta: 0.3,
            restarts: 3,
            max_attempts: 10,
            fit,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub k: usize,
    pub r_factor: usize,
    pub delta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub m: usize,
    pub eta_m: f64,
    pub eta_m1: f64,
    /// det_coefficient * gap_statistic: the certified cut-similarity bound.
    pub det_bound: f64,
    pub prob_bound: f64,
    pub accepted: bool,
    pub attempts: usize,
}

/// Sample ranks until one passes the certificate or attempts run out. The
/// eta sequence is estimated once up to K+1 by nested warm-started fits and
/// shared across attempts.
pub fn run_certified_fit(
    graph: &DirectedGraphSignal,
    cfg: &CertifyConfig,
) -> Result<(CertificateReport, IbgFactors)> {
    cfg.fit.validate()?;
    let bounds = certificate_bounds(
        cfg.delta,
        cfg.r_factor,
        cfg.k,
        cfg.fit.gamma,
        cfg.fit.alpha,
        cfg.fit.beta,
    )?;
    if cfg.max_attempts == 0 {
        return Err(IbgError::Validation("max_attempts must be >= 1".into()));
    }

    let (losses, factors_by_rank) =
        ibg::best_fits_sequence(graph, cfg.k + 1, &cfg.fit, cfg.restarts)?;
    let eta: Vec<f64> = losses.iter().map(|l| (1.0 + cfg.delta) * l).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.fit.seed ^ 0x9e3779b97f4a7c15);
    let mut last_m = 1;
    let mut accepted = false;
    let mut attempts = 0;
    for _ in 0..cfg.max_attempts {
        attempts += 1;
        let m = rng.gen_range(1..=cfg.k);
        last_m = m;
        if accepts(eta[m - 1], eta[m], cfg.delta, &bounds) {
            accepted = true;
            break;
        }
    }

    let m = last_m;
    let report = CertificateReport {
        k: cfg.k,
        r_factor: cfg.r_factor,
        delta: cfg.delta,
        gamma: cfg.fit.gamma,
        alpha: cfg.fit.alpha,
        beta: cfg.fit.beta,
        m,
        eta_m: eta[m - 1],
        eta_m1: eta[m],
        det_bound: bounds.det_coefficient * gap_statistic(eta[m - 1], eta[m], cfg.delta),
        prob_bound: bounds.prob_bound,
        accepted,
        attempts,
    };
    Ok((report, factors_by_rank[m - 1].clone()))
}

#[derive(Debug, Clone, Copy)]
pub struct CutBoundCheck {
    pub similarity: f64,
    pub bound: f64,
    pub margin: f64,
    pub holds: bool,
}

/// Exact (brute-force) densifying cut similarity of the fitted factors
/// against the certified bound. Tiny graphs only.
pub fn verify_cut_bound(
    graph: &DirectedGraphSignal,
    factors: &IbgFactors,
    report: &CertificateReport,
) -> Result<CutBoundCheck> {
    if graph.num_nodes() > 12 {
        return Err(IbgError::SizeGuard(format!(
            "cut bound verification limited to N <= 12, got {}",
            graph.num_nodes()
        )));
    }
    let (c, p) = factors.synthesize()?;
    let p = if graph.feature_dim() == 0 {
        Array2::zeros((graph.num_nodes(), 0))
    } else {
        p
    };
    let similarity = norms::densifying_cut_similarity(
        graph,
        &c,
        &p,
        report.gamma,
        report.alpha,
        report.beta,
    )?;
    let margin = report.det_bound - similarity;
    Ok(CutBoundCheck {
        similarity,
        bound: report.det_bound,
        margin,
        holds: margin >= 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_worked_example() {
        let b = certificate_bounds(0.0, 2, 8, 0.0, 0.5, 0.5).unwrap();
        assert!((b.slack_term - 0.5).abs() < 1e-12);
        assert!((b.prob_bound - 0.5 * 2.0f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn bounds_large_delta_exceeds_one() {
        let b = certificate_bounds(1e9, 1, 4, 1.0, 0.5, 0.5).unwrap();
        assert!(b.slack_term >= 1.0);
    }

    #[test]
    fn bounds_vanish_with_large_k() {
        let b = certificate_bounds(0.0, 2, 2_000_000, 1.0, 0.5, 0.5).unwrap();
        assert!(b.slack_term < 1.1e-3);
    }

    #[test]
    fn bounds_reject_bad_inputs() {
        assert!(certificate_bounds(-0.1, 2, 8, 1.0, 0.5, 0.5).is_err());
        assert!(certificate_bounds(0.3, 3, 8, 1.0, 0.5, 0.5).is_err());
        assert!(certificate_bounds(0.3, 2, 8, 1.0, 0.7, 0.7).is_err());
    }

    #[test]
    fn flat_tail_always_accepts_at_delta_zero() {
        let b = certificate_bounds(0.0, 2, 8, 1.0, 0.5, 0.5).unwrap();
        assert!(accepts(0.37, 0.37, 0.0, &b));
        assert_eq!(gap_statistic(0.37, 0.37, 0.0), 0.0);
    }

    #[test]
    fn tiny_k_is_vacuous() {
        // K = R = 1 pushes the threshold to at least 1, the scale of the
        // whole loss, so any gap passes.
        let b = certificate_bounds(0.3, 1, 1, 1.0, 0.5, 0.5).unwrap();
        assert!(b.slack_term >= 1.0);
        assert!(accepts(1.0, 0.0, 0.3, &b));
    }

    #[test]
    fn det_bound_monotone_in_gap() {
        let b = certificate_bounds(0.3, 2, 8, 1.0, 0.5, 0.5).unwrap();
        let lo = b.det_coefficient * gap_statistic(0.5, 0.4, 0.3);
        let hi = b.det_coefficient * gap_statistic(0.7, 0.4, 0.3);
        assert!(hi > lo);
    }

    fn planted_graph() -> DirectedGraphSignal {
        let mut edges = Vec::new();
        for i in 0..5u32 {
            for j in 5..10u32 {
                edges.push((i, j));
                edges.push((j, i));
            }
        }
        DirectedGraphSignal::from_edges(10, edges).unwrap()
    }

    #[test]
    fn planted_low_rank_accepts() {
        let g = planted_graph();
        let mut fit = FitConfig::new(1, 1.0);
        fit.alpha = 1.0;
        fit.beta = 0.0;
        fit.epochs = 400;
        fit.lr = 0.05;
        fit.seed = 1;
        let cfg = CertifyConfig {
            k: 8,
            r_factor: 2,
            delta: 0.3,
            restarts: 2,
            max_attempts: 6,
            fit,
        };
        let (report, factors) = run_certified_fit(&g, &cfg).unwrap();
        assert!(report.accepted, "report: {report:?}");
        assert!(report.attempts <= 6);
        assert_eq!(factors.k(), report.m);
        let check = verify_cut_bound(&g, &factors, &report).unwrap();
        assert!(check.bound >= 0.0);
    }

    #[test]
    fn verify_cut_bound_size_guard() {
        let g = DirectedGraphSignal::from_edges(13, vec![(0, 1)]).unwrap();
        let f = IbgFactors::zeros(13, 2, 0);
        let report = CertificateReport {
            k: 4,
            r_factor: 2,
            delta: 0.3,
            gamma: 1.0,
            alpha: 1.0,
            beta: 0.0,
            m: 2,
            eta_m: 0.5,
            eta_m1: 0.4,
            det_bound: 0.5,
            prob_bound: 0.9,
            accepted: true,
            attempts: 1,
        };
        assert!(matches!(
            verify_cut_bound(&g, &f, &report),
            Err(IbgError::SizeGuard(_))
        ));
    }

    #[test]
    fn perfect_fit_bound_holds() {
        // Factors that reproduce the planted bipartite graph exactly give a
        // zero similarity, below any bound.
        let g = planted_graph();
        let mut f = IbgFactors::zeros(10, 2, 0);
        f.ulogit.fill(-crate::ibg::LOGIT_CLAMP);
        f.vlogit.fill(-crate::ibg::LOGIT_CLAMP);
        for i in 0..5 {
            f.ulogit[[i, 0]] = crate::ibg::LOGIT_CLAMP;
            f.vlogit[[i + 5, 0]] = crate::ibg::LOGIT_CLAMP;
            f.ulogit[[i + 5, 1]] = crate::ibg::LOGIT_CLAMP;
            f.vlogit[[i, 1]] = crate::ibg::LOGIT_CLAMP;
        }
        f.r = ndarray::arr1(&[1.0, 1.0]);
        let report = CertificateReport {
            k: 8,
            r_factor: 2,
            delta: 0.3,
            gamma: 1.0,
            alpha: 1.0,
            beta: 0.0,
            m: 2,
            eta_m: 0.1,
            eta_m1: 0.05,
            det_bound: 0.4,
            prob_bound: 0.9,
            accepted: true,
            attempts: 1,
        };
        let check = verify_cut_bound(&g, &f, &report).unwrap();
        assert!(check.similarity < 1e-9);
        assert!(check.holds);
    }
}
