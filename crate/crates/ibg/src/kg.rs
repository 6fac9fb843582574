//! Knowledge-graph completion: relation-indexed block scoring over shared
//! entity affiliations, margin loss with negative sampling, and filtered
//! ranking evaluation.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamParams, AdamState};
use crate::error::{IbgError, Result};
use crate::ibg::{sigmoid, sigmoid_grad};

pub type Triple = (u32, u32, u32);

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    pub n_entities: usize,
    pub n_relations: usize,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    train_set: HashSet<Triple>,
    /// Dyads (h, t) carrying at least one train relation; the weight q is 1
    /// on these and e elsewhere.
    train_dyads: HashSet<(u32, u32)>,
    /// All known positives across splits, for filtered ranking.
    all_set: HashSet<Triple>,
}

impl KnowledgeGraph {
    pub fn new(
        n_entities: usize,
        n_relations: usize,
        mut train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        for &(h, r, t) in train.iter().chain(valid.iter()).chain(test.iter()) {
            if h as usize >= n_entities || t as usize >= n_entities {
                return Err(IbgError::Validation(format!(
                    "entity id out of range in triple ({h},{r},{t})"
                )));
            }
            if r as usize >= n_relations {
                return Err(IbgError::Validation(format!(
                    "relation id out of range in triple ({h},{r},{t})"
                )));
            }
        }
        train.sort_unstable();
        train.dedup();
        if train.is_empty() {
            return Err(IbgError::Validation("empty train triple set".into()));
        }
        let train_set: HashSet<Triple> = train.iter().copied().collect();
        let train_dyads = train.iter().map(|&(h, _, t)| (h, t)).collect();
        let all_set = train
            .iter()
            .chain(valid.iter())
            .chain(test.iter())
            .copied()
            .collect();
        Ok(Self {
            n_entities,
            n_relations,
            train,
            valid,
            test,
            train_set,
            train_dyads,
            all_set,
        })
    }

    pub fn num_train(&self) -> usize {
        self.train.len()
    }

    pub fn is_train_positive(&self, t: &Triple) -> bool {
        self.train_set.contains(t)
    }

    pub fn is_known_positive(&self, t: &Triple) -> bool {
        self.all_set.contains(t)
    }

    pub fn has_train_dyad(&self, h: u32, t: u32) -> bool {
        self.train_dyads.contains(&(h, t))
    }

    /// Non-edge weight e and the per-dyad normalizer Z = (1+gamma) E / N².
    pub fn weights(&self, gamma: f64) -> Result<(f64, f64)> {
        if !(gamma > 0.0) {
            return Err(IbgError::Validation("gamma must be positive".into()));
        }
        let n2 = (self.n_entities * self.n_entities) as f64;
        let density = self.num_train() as f64 / n2;
        if density >= 1.0 {
            return Err(IbgError::Degenerate("train set saturates all dyads".into()));
        }
        let e = gamma * density / (1.0 - density);
        let z = (1.0 + gamma) * self.num_train() as f64 / n2;
        Ok((e, z))
    }
}

/// Load "head relation tail" text files, mapping string names to dense ids
/// in first-seen order across train, then valid, then test.
pub fn load_triple_files(
    train: &Path,
    valid: Option<&Path>,
    test: Option<&Path>,
) -> Result<(KnowledgeGraph, Vec<String>, Vec<String>)> {
    let mut entities: BTreeMap<String, u32> = BTreeMap::new();
    let mut relations: BTreeMap<String, u32> = BTreeMap::new();
    let mut ent_names = Vec::new();
    let mut rel_names = Vec::new();
    let mut read = |path: &Path| -> Result<Vec<Triple>> {
        let mut out = Vec::new();
        for (idx, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            let trimmed = line.split('#').next().unwrap_or("").trim();
            if trimmed.is_empty() {
                continue;
            }
            let toks: Vec<&str> = trimmed.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(IbgError::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    msg: "expected 'head relation tail'".into(),
                });
            }
            let mut ent = |name: &str| -> u32 {
                *entities.entry(name.to_string()).or_insert_with(|| {
                    ent_names.push(name.to_string());
                    ent_names.len() as u32 - 1
                })
            };
            let h = ent(toks[0]);
            let t = ent(toks[2]);
            let r = *relations.entry(toks[1].to_string()).or_insert_with(|| {
                rel_names.push(toks[1].to_string());
                rel_names.len() as u32 - 1
            });
            out.push((h, r, t));
        }
        Ok(out)
    };
    let train_t = read(train)?;
    let valid_t = valid.map(&mut read).transpose()?.unwrap_or_default();
    let test_t = test.map(&mut read).transpose()?.unwrap_or_default();
    let kg = KnowledgeGraph::new(ent_names.len(), rel_names.len(), train_t, valid_t, test_t)?;
    Ok((kg, ent_names, rel_names))
}

/// Entity affiliations plus a community-relation magnitude matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct IbgeFactors {
    pub ulogit: Array2<f64>,
    pub vlogit: Array2<f64>,
    /// K x R relation magnitudes.
    pub m: Array2<f64>,
}

impl IbgeFactors {
    pub fn random(n: usize, k: usize, r: usize, rng: &mut impl Rng) -> Self {
        Self {
            ulogit: Array2::from_shape_fn((n, k), |_| rng.gen_range(-1.0..1.0)),
            vlogit: Array2::from_shape_fn((n, k), |_| rng.gen_range(-1.0..1.0)),
            m: Array2::from_shape_fn((k, r), |_| rng.gen_range(-0.1..0.1)),
        }
    }

    pub fn k(&self) -> usize {
        self.ulogit.ncols()
    }

    /// Soft block score s = Σ_k u_{η,k} m_{k,ρ} v_{τ,k}.
    pub fn block_score(&self, h: u32, r: u32, t: u32) -> f64 {
        let (h, r, t) = (h as usize, r as usize, t as usize);
        (0..self.k())
            .map(|k| {
                sigmoid(self.ulogit[[h, k]]) * self.m[[k, r]] * sigmoid(self.vlogit[[t, k]])
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct IbgeConfig {
    pub k: usize,
    pub gamma: f64,
    /// Margin of the ranking loss.
    pub margin: f64,
    /// Negatives per positive.
    pub neg_samples: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for IbgeConfig {
    fn default() -> Self {
        Self {
            k: 20,
            gamma: 1.0,
            margin: 1.0,
            neg_samples: 64,
            lr: 0.05,
            epochs: 250,
            batch: 512,
            seed: 0,
        }
    }
}

/// Weighted squared-residual distance of one dyad-relation query:
/// d = q_{η,τ} (δ - s)² / Z with δ = 1 for a true triple and 0 otherwise.
pub fn score(f: &IbgeFactors, kg: &KnowledgeGraph, gamma: f64, triple: Triple, is_true: bool) -> Result<f64> {
    let (e, z) = kg.weights(gamma)?;
    let (h, _, t) = triple;
    let q = if kg.has_train_dyad(h, t) { 1.0 } else { e };
    let s = f.block_score(triple.0, triple.1, triple.2);
    let delta = if is_true { 1.0 } else { 0.0 };
    Ok(q * (delta - s) * (delta - s) / z)
}

/// Margin loss from already-computed distances:
/// L = -log sigmoid(margin - d_pos) - (1/zeta) Σ log sigmoid(d_neg - margin).
pub fn margin_loss_value(d_pos: f64, d_negs: &[f64], margin: f64) -> f64 {
    let zeta = d_negs.len().max(1) as f64;
    let ls = |x: f64| {
        // log sigmoid, stable at both tails.
        if x >= 0.0 {
            -(1.0 + (-x).exp()).ln()
        } else {
            x - (1.0 + x.exp()).ln()
        }
    };
    -ls(margin - d_pos) - d_negs.iter().map(|&d| ls(d - margin)).sum::<f64>() / zeta
}

#[derive(Debug, Clone)]
pub struct IbgeGrads {
    pub ulogit: Array2<f64>,
    pub vlogit: Array2<f64>,
    pub m: Array2<f64>,
}

impl IbgeGrads {
    fn zeros(f: &IbgeFactors) -> Self {
        Self {
            ulogit: Array2::zeros(f.ulogit.dim()),
            vlogit: Array2::zeros(f.vlogit.dim()),
            m: Array2::zeros(f.m.dim()),
        }
    }
}

/// Accumulate dL/d(params) for one query given dL/dd. delta is the score
/// target of the query (1 for positives, 0 for negatives).
fn accumulate_score_grad(
    f: &IbgeFactors,
    kg: &KnowledgeGraph,
    e: f64,
    z: f64,
    triple: Triple,
    delta: f64,
    dl_dd: f64,
    g: &mut IbgeGrads,
) {
    let (h, r, t) = (triple.0 as usize, triple.1 as usize, triple.2 as usize);
    let q = if kg.has_train_dyad(triple.0, triple.2) {
        1.0
    } else {
        e
    };
    let s = f.block_score(triple.0, triple.1, triple.2);
    // d = q (delta - s)² / Z, so dd/ds = 2 q (s - delta) / Z.
    let dd_ds = 2.0 * q * (s - delta) / z;
    let c = dl_dd * dd_ds;
    for k in 0..f.k() {
        let u = sigmoid(f.ulogit[[h, k]]);
        let v = sigmoid(f.vlogit[[t, k]]);
        let m = f.m[[k, r]];
        g.ulogit[[h, k]] += c * m * v * sigmoid_grad(f.ulogit[[h, k]]);
        g.vlogit[[t, k]] += c * m * u * sigmoid_grad(f.vlogit[[t, k]]);
        g.m[[k, r]] += c * u * v;
    }
}

/// Loss and dense gradients for one positive and its negatives.
pub fn margin_loss(
    f: &IbgeFactors,
    kg: &KnowledgeGraph,
    cfg: &IbgeConfig,
    positive: Triple,
    negatives: &[Triple],
) -> Result<(f64, IbgeGrads)> {
    let mut g = IbgeGrads::zeros(f);
    let loss = margin_loss_into(f, kg, cfg, positive, negatives, &mut g)?;
    Ok((loss, g))
}

fn margin_loss_into(
    f: &IbgeFactors,
    kg: &KnowledgeGraph,
    cfg: &IbgeConfig,
    positive: Triple,
    negatives: &[Triple],
    g: &mut IbgeGrads,
) -> Result<f64> {
    if negatives.is_empty() {
        return Err(IbgError::Validation("need at least one negative".into()));
    }
    let (e, z) = kg.weights(cfg.gamma)?;
    let d_pos = score(f, kg, cfg.gamma, positive, true)?;
    let d_negs: Vec<f64> = negatives
        .iter()
        .map(|&n| score(f, kg, cfg.gamma, n, false))
        .collect::<Result<_>>()?;
    let loss = margin_loss_value(d_pos, &d_negs, cfg.margin);

    // dL/dd_pos = sigmoid(d_pos - margin); dL/dd_neg = -(1/zeta) sigmoid(margin - d_neg).
    let zeta = negatives.len() as f64;
    accumulate_score_grad(
        f,
        kg,
        e,
        z,
        positive,
        1.0,
        sigmoid(d_pos - cfg.margin),
        g,
    );
    for (neg, &d) in negatives.iter().zip(d_negs.iter()) {
        accumulate_score_grad(f, kg, e, z, *neg, 0.0, -sigmoid(cfg.margin - d) / zeta, g);
    }
    Ok(loss)
}

/// Corrupt head or tail (coin flip) with a uniform entity, rejecting known
/// train positives. Falls back to the last candidate if rejection keeps
/// failing (saturated tiny graphs).
pub fn negative_sample(
    kg: &KnowledgeGraph,
    positive: Triple,
    zeta: usize,
    rng: &mut impl Rng,
) -> Vec<Triple> {
    let mut out = Vec::with_capacity(zeta);
    for _ in 0..zeta {
        let mut candidate = positive;
        for _attempt in 0..100 {
            let ent = rng.gen_range(0..kg.n_entities as u32);
            candidate = if rng.gen_bool(0.5) {
                (ent, positive.1, positive.2)
            } else {
                (positive.0, positive.1, ent)
            };
            if !kg.is_train_positive(&candidate) {
                break;
            }
        }
        out.push(candidate);
    }
    out
}

/// Ranking metrics over eval triples, replacing heads and tails.
#[derive(Debug, Clone, Copy)]
pub struct RankingMetrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits10: f64,
    pub queries: usize,
}

/// Candidates are ranked by ascending distance as positives; ties place the
/// true entity last. `filtered` removes candidates that are known positives
/// in any split.
pub fn evaluate_ranking(
    f: &IbgeFactors,
    kg: &KnowledgeGraph,
    gamma: f64,
    eval: &[Triple],
    filtered: bool,
) -> Result<RankingMetrics> {
    let mut rr = 0.0;
    let mut h1 = 0usize;
    let mut h10 = 0usize;
    let mut queries = 0usize;
    for &(h, r, t) in eval {
        for head_side in [true, false] {
            let true_d = score(f, kg, gamma, (h, r, t), true)?;
            let mut rank = 1usize;
            for cand in 0..kg.n_entities as u32 {
                let triple = if head_side { (cand, r, t) } else { (h, r, cand) };
                if (head_side && cand == h) || (!head_side && cand == t) {
                    continue;
                }
                if filtered && kg.is_known_positive(&triple) {
                    continue;
                }
                let d = score(f, kg, gamma, triple, true)?;
                if d <= true_d {
                    rank += 1;
                }
            }
            rr += 1.0 / rank as f64;
            if rank == 1 {
                h1 += 1;
            }
            if rank <= 10 {
                h10 += 1;
            }
            queries += 1;
        }
    }
    if queries == 0 {
        return Err(IbgError::Validation("no evaluation triples".into()));
    }
    Ok(RankingMetrics {
        mrr: rr / queries as f64,
        hits1: h1 as f64 / queries as f64,
        hits10: h10 as f64 / queries as f64,
        queries,
    })
}

/// Margin-based training with negative sampling; deterministic per seed.
/// Updates are applied per mini-batch of positives.
pub fn train(kg: &KnowledgeGraph, cfg: &IbgeConfig) -> Result<(IbgeFactors, Vec<f64>)> {
    if cfg.k == 0 || cfg.neg_samples == 0 || !(cfg.margin > 0.0) || cfg.batch == 0 {
        return Err(IbgError::Validation(
            "need K >= 1, neg_samples >= 1, margin > 0, batch >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut f = IbgeFactors::random(kg.n_entities, cfg.k, kg.n_relations, &mut rng);
    let adam = AdamParams {
        lr: cfg.lr,
        ..AdamParams::default()
    };
    let mut st_u = AdamState::new(f.ulogit.len());
    let mut st_v = AdamState::new(f.vlogit.len());
    let mut st_m = AdamState::new(f.m.len());

    let mut order: Vec<usize> = (0..kg.train.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut g = IbgeGrads::zeros(&f);
            for &idx in chunk {
                let pos = kg.train[idx];
                let negs = negative_sample(kg, pos, cfg.neg_samples, &mut rng);
                epoch_loss += margin_loss_into(&f, kg, cfg, pos, &negs, &mut g)?;
            }
            let inv = 1.0 / chunk.len() as f64;
            g.ulogit *= inv;
            g.vlogit *= inv;
            g.m *= inv;
            st_u.step_array2(&adam, &mut f.ulogit, &g.ulogit);
            st_v.step_array2(&adam, &mut f.vlogit, &g.vlogit);
            st_m.step_array2(&adam, &mut f.m, &g.m);
        }
        let mean = epoch_loss / kg.train.len() as f64;
        if !mean.is_finite() {
            return Err(IbgError::Diverged {
                step: trace.len(),
                loss: mean,
            });
        }
        trace.push(mean);
    }
    Ok((f, trace))
}

/// Versioned text format mirroring the IBG factor files.
pub fn save_ibge(f: &IbgeFactors, gamma: f64, margin: f64, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(File::create(path)?);
    writeln!(w, "IBGE v1")?;
    writeln!(
        w,
        "N {} K {} R {}",
        f.ulogit.nrows(),
        f.k(),
        f.m.ncols()
    )?;
    writeln!(w, "gamma {gamma:.16e} margin {margin:.16e}")?;
    writeln!(w, "U'")?;
    for row in f.ulogit.rows() {
        crate::io::write_row(&mut w, row.iter().copied())?;
    }
    writeln!(w, "V'")?;
    for row in f.vlogit.rows() {
        crate::io::write_row(&mut w, row.iter().copied())?;
    }
    writeln!(w, "M")?;
    for row in f.m.rows() {
        crate::io::write_row(&mut w, row.iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct LoadedIbge {
    pub factors: IbgeFactors,
    pub gamma: f64,
    pub margin: f64,
}

pub fn load_ibge(path: &Path) -> Result<LoadedIbge> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| IbgError::Format(format!("truncated file, expected {what}")))
    };
    if next("header")?.trim() != "IBGE v1" {
        return Err(IbgError::Format("expected 'IBGE v1' header".into()));
    }
    let dims = next("dimensions")?;
    let toks: Vec<&str> = dims.split_whitespace().collect();
    if toks.len() != 6 || toks[0] != "N" || toks[2] != "K" || toks[4] != "R" {
        return Err(IbgError::Format("expected 'N n K k R r'".into()));
    }
    let parse_usize = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| IbgError::Format(format!("bad integer '{s}'")))
    };
    let (n, k, r) = (parse_usize(toks[1])?, parse_usize(toks[3])?, parse_usize(toks[5])?);
    let hyper = next("hyperparameters")?;
    let toks: Vec<&str> = hyper.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "gamma" || toks[2] != "margin" {
        return Err(IbgError::Format("expected 'gamma g margin m'".into()));
    }
    let parse_f64 = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| IbgError::Format(format!("bad number '{s}'")))
    };
    let (gamma, margin) = (parse_f64(toks[1])?, parse_f64(toks[3])?);
    let mut block = |label: &str, rows: usize, cols: usize| -> Result<Array2<f64>> {
        if next(label)?.trim() != label {
            return Err(IbgError::Format(format!("expected '{label}' block")));
        }
        let mut out = Array2::zeros((rows, cols));
        for i in 0..rows {
            let line = next(&format!("{label} row {i}"))?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != cols {
                return Err(IbgError::Format(format!(
                    "{label} row {i}: expected {cols} values, got {}",
                    vals.len()
                )));
            }
            for (j, v) in vals.iter().enumerate() {
                out[[i, j]] = v
                    .parse()
                    .map_err(|_| IbgError::Format(format!("bad number '{v}'")))?;
            }
        }
        Ok(out)
    };
    let factors = IbgeFactors {
        ulogit: block("U'", n, k)?,
        vlogit: block("V'", n, k)?,
        m: block("M", k, r)?,
    };
    Ok(LoadedIbge {
        factors,
        gamma,
        margin,
    })
}
