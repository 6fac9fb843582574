//! Graph signal processing on frozen IBG factors and the two-branch node
//! classifier with hand-written reverse-mode gradients.
//!
//! Layer update, source branch: Hs <- ReLU(Theta1s(Hs) + Theta2s(V B));
//! target branch mirrors it with U F. The final representation is the sum
//! of the two branches, optionally combined across layers before readout.

use ndarray::{Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamParams, AdamState};
use crate::error::{IbgError, Result};
use crate::graph::{DirectedGraphSignal, Masks};
use crate::ibg::IbgFactors;

/// W† X through the regularized normal equations (WᵀW + εI)⁻¹ Wᵀ X.
pub fn analysis(x: &Array2<f64>, w: &Array2<f64>) -> Result<Array2<f64>> {
    if x.nrows() != w.nrows() {
        return Err(IbgError::Shape(format!(
            "analysis: {} signal rows vs {} affiliation rows",
            x.nrows(),
            w.nrows()
        )));
    }
    let mut gram = w.t().dot(w);
    for i in 0..gram.nrows() {
        gram[[i, i]] += 1e-8;
    }
    let rhs = w.t().dot(x);
    cholesky_solve(&gram, &rhs)
}

/// W G; projection back to node space.
pub fn synthesis(g: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    w.dot(g)
}

/// Ratio of largest to smallest pivot of the Cholesky factor of WᵀW + εI;
/// large values flag effective rank deficiency.
pub fn gram_condition(w: &Array2<f64>) -> f64 {
    let mut gram = w.t().dot(w);
    for i in 0..gram.nrows() {
        gram[[i, i]] += 1e-8;
    }
    match cholesky(&gram) {
        Ok(l) => {
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for i in 0..l.nrows() {
                lo = lo.min(l[[i, i]]);
                hi = hi.max(l[[i, i]]);
            }
            (hi / lo).powi(2)
        }
        Err(_) => f64::INFINITY,
    }
}

fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(IbgError::Degenerate(
                        "Cholesky pivot not positive; matrix numerically singular".into(),
                    ));
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(a: &Array2<f64>, rhs: &Array2<f64>) -> Result<Array2<f64>> {
    let l = cholesky(a)?;
    let n = a.nrows();
    let cols = rhs.ncols();
    let mut y = rhs.clone();
    // Forward substitution L y = rhs.
    for c in 0..cols {
        for i in 0..n {
            let mut s = y[[i, c]];
            for k in 0..i {
                s -= l[[i, k]] * y[[k, c]];
            }
            y[[i, c]] = s / l[[i, i]];
        }
        // Back substitution Lᵀ x = y.
        for i in (0..n).rev() {
            let mut s = y[[i, c]];
            for k in i + 1..n {
                s -= l[[k, i]] * y[[k, c]];
            }
            y[[i, c]] = s / l[[i, i]];
        }
    }
    Ok(y)
}

/// Node transform: a plain linear map or the DeepSets pair
/// H W1 + (1/N) 1 1ᵀ H W2.
#[derive(Debug, Clone)]
pub enum Theta {
    Linear(Array2<f64>),
    DeepSets(Array2<f64>, Array2<f64>),
}

impl Theta {
    fn apply(&self, h: &Array2<f64>) -> Array2<f64> {
        match self {
            Theta::Linear(w) => h.dot(w),
            Theta::DeepSets(w1, w2) => {
                let n = h.nrows() as f64;
                let mean = h.sum_axis(Axis(0)) / n;
                let mut out = h.dot(w1);
                let shift = mean.dot(w2);
                for mut row in out.rows_mut() {
                    row += &shift;
                }
                out
            }
        }
    }

    /// Returns (d_input, parameter gradient with matching variant).
    fn backward(&self, h: &Array2<f64>, d_out: &Array2<f64>) -> (Array2<f64>, Theta) {
        match self {
            Theta::Linear(w) => (d_out.dot(&w.t()), Theta::Linear(h.t().dot(d_out))),
            Theta::DeepSets(w1, w2) => {
                let n = h.nrows() as f64;
                let mean = h.sum_axis(Axis(0)) / n;
                let d_sum = d_out.sum_axis(Axis(0));
                let dw1 = h.t().dot(d_out);
                let dw2 = mean
                    .insert_axis(Axis(1))
                    .dot(&d_sum.clone().insert_axis(Axis(0)));
                let mut dh = d_out.dot(&w1.t());
                let shift = d_sum.dot(&w2.t()) / n;
                for mut row in dh.rows_mut() {
                    row += &shift;
                }
                (dh, Theta::DeepSets(dw1, dw2))
            }
        }
    }

    fn zeros_like(&self) -> Theta {
        match self {
            Theta::Linear(w) => Theta::Linear(Array2::zeros(w.dim())),
            Theta::DeepSets(w1, w2) => {
                Theta::DeepSets(Array2::zeros(w1.dim()), Array2::zeros(w2.dim()))
            }
        }
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        match self {
            Theta::Linear(w) => vec![w],
            Theta::DeepSets(w1, w2) => vec![w1, w2],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            Theta::Linear(w) => vec![w],
            Theta::DeepSets(w1, w2) => vec![w1, w2],
        }
    }
}

/// Jumping-knowledge combination of the per-layer representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Jk {
    None,
    Max,
    Cat,
}

#[derive(Debug, Clone)]
pub struct IbgnnLayer {
    pub t1s: Theta,
    pub t2s: Theta,
    pub t1t: Theta,
    pub t2t: Theta,
    /// Target community features, K x d_in of this layer.
    pub f: Array2<f64>,
    /// Source community features.
    pub b: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct IbgnnModel {
    pub layers: Vec<IbgnnLayer>,
    pub readout: Array2<f64>,
    pub residual: bool,
    pub jk: Jk,
}

#[derive(Debug, Clone)]
pub struct NnConfig {
    pub layers: usize,
    pub hidden: usize,
    pub classes: usize,
    pub deepsets: bool,
    pub residual: bool,
    pub jk: Jk,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for NnConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 32,
            classes: 2,
            deepsets: false,
            residual: false,
            jk: Jk::None,
            dropout: 0.0,
            lr: 0.01,
            epochs: 200,
            seed: 0,
        }
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-s..s))
}

impl IbgnnModel {
    pub fn new(cfg: &NnConfig, input_dim: usize, k: usize) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden == 0 || cfg.classes < 2 {
            return Err(IbgError::Validation(
                "need layers >= 1, hidden >= 1, classes >= 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(IbgError::Validation("dropout must be in [0, 1)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut layers = Vec::with_capacity(cfg.layers);
        let theta = |din: usize, dout: usize, rng: &mut ChaCha8Rng| {
            if cfg.deepsets {
                Theta::DeepSets(glorot(din, dout, rng), glorot(din, dout, rng))
            } else {
                Theta::Linear(glorot(din, dout, rng))
            }
        };
        for l in 0..cfg.layers {
            let din = if l == 0 { input_dim } else { cfg.hidden };
            let dout = cfg.hidden;
            layers.push(IbgnnLayer {
                t1s: theta(din, dout, &mut rng),
                t2s: theta(din, dout, &mut rng),
                t1t: theta(din, dout, &mut rng),
                t2t: theta(din, dout, &mut rng),
                f: glorot(k, din, &mut rng),
                b: glorot(k, din, &mut rng),
            });
        }
        let readout_in = match cfg.jk {
            Jk::Cat => cfg.hidden * cfg.layers,
            _ => cfg.hidden,
        };
        Ok(Self {
            layers,
            readout: glorot(readout_in, cfg.classes, &mut rng),
            residual: cfg.residual,
            jk: cfg.jk,
        })
    }
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    hs: Vec<Array2<f64>>,
    ht: Vec<Array2<f64>>,
    zs: Vec<Array2<f64>>,
    zt: Vec<Array2<f64>>,
    masks_s: Vec<Option<Array2<f64>>>,
    masks_t: Vec<Option<Array2<f64>>>,
    combined: Array2<f64>,
    /// For JK max: which layer won each (node, feature) slot.
    argmax: Option<Array2<usize>>,
    pub logits: Array2<f64>,
}

/// Forward pass. `dropout_rng` enables inverted dropout on the hidden
/// activations; pass `None` for evaluation.
pub fn forward(
    model: &IbgnnModel,
    x: &Array2<f64>,
    u: &Array2<f64>,
    v: &Array2<f64>,
    dropout: f64,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardCache> {
    let n = x.nrows();
    if u.nrows() != n || v.nrows() != n {
        return Err(IbgError::Shape("affiliation row count mismatch".into()));
    }
    let l = model.layers.len();
    let mut hs = vec![x.clone()];
    let mut ht = vec![x.clone()];
    let mut zs = Vec::with_capacity(l);
    let mut zt = Vec::with_capacity(l);
    let mut masks_s: Vec<Option<Array2<f64>>> = Vec::with_capacity(l);
    let mut masks_t: Vec<Option<Array2<f64>>> = Vec::with_capacity(l);
    let mut rng = dropout_rng;

    for layer in &model.layers {
        let ms = v.dot(&layer.b);
        let mt = u.dot(&layer.f);
        let z_s = layer.t1s.apply(hs.last().unwrap()) + layer.t2s.apply(&ms);
        let z_t = layer.t1t.apply(ht.last().unwrap()) + layer.t2t.apply(&mt);
        let mut a_s = z_s.mapv(|x| x.max(0.0));
        let mut a_t = z_t.mapv(|x| x.max(0.0));
        if model.residual && hs.last().unwrap().ncols() == a_s.ncols() {
            a_s += hs.last().unwrap();
            a_t += ht.last().unwrap();
        }
        let (m_s, m_t) = if dropout > 0.0 {
            if let Some(r) = rng.as_deref_mut() {
                let keep = 1.0 - dropout;
                let sample = |r: &mut ChaCha8Rng| {
                    Array2::from_shape_fn(a_s.dim(), |_| {
                        if r.gen_bool(keep) {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                };
                let ms_ = sample(r);
                let mt_ = sample(r);
                a_s = &a_s * &ms_;
                a_t = &a_t * &mt_;
                (Some(ms_), Some(mt_))
            } else {
                (None, None)
            }
        } else {
            (None, None)
        };
        zs.push(z_s);
        zt.push(z_t);
        masks_s.push(m_s);
        masks_t.push(m_t);
        hs.push(a_s);
        ht.push(a_t);
    }

    // Combine per-layer sums Hs + Ht.
    let per_layer: Vec<Array2<f64>> = (1..=l).map(|i| &hs[i] + &ht[i]).collect();
    let (combined, argmax) = match model.jk {
        Jk::None => (per_layer[l - 1].clone(), None),
        Jk::Cat => {
            let views: Vec<_> = per_layer.iter().map(|m| m.view()).collect();
            (ndarray::concatenate(Axis(1), &views).unwrap(), None)
        }
        Jk::Max => {
            let (n, w) = per_layer[0].dim();
            let mut best = per_layer[0].clone();
            let mut arg = Array2::<usize>::zeros((n, w));
            for (li, m) in per_layer.iter().enumerate().skip(1) {
                for i in 0..n {
                    for j in 0..w {
                        if m[[i, j]] > best[[i, j]] {
                            best[[i, j]] = m[[i, j]];
                            arg[[i, j]] = li;
                        }
                    }
                }
            }
            (best, Some(arg))
        }
    };
    let logits = combined.dot(&model.readout);
    Ok(ForwardCache {
        hs,
        ht,
        zs,
        zt,
        masks_s,
        masks_t,
        combined,
        argmax,
        logits,
    })
}

pub struct NnGrads {
    pub layers: Vec<IbgnnLayer>,
    pub readout: Array2<f64>,
}

/// Reverse-mode gradients for all parameters given d(loss)/d(logits).
/// ReLU takes subgradient 0 at 0.
pub fn backward(
    model: &IbgnnModel,
    cache: &ForwardCache,
    u: &Array2<f64>,
    v: &Array2<f64>,
    d_logits: &Array2<f64>,
) -> NnGrads {
    let l = model.layers.len();
    let d_readout = cache.combined.t().dot(d_logits);
    let d_combined = d_logits.dot(&model.readout.t());

    // Distribute the combined gradient onto the per-layer sums.
    let width = model.layers.last().unwrap().t1s.params()[0].ncols();
    let n = cache.hs[0].nrows();
    let mut d_per_layer: Vec<Array2<f64>> = (0..l).map(|_| Array2::zeros((n, width))).collect();
    match model.jk {
        Jk::None => d_per_layer[l - 1] = d_combined,
        Jk::Cat => {
            for li in 0..l {
                d_per_layer[li].assign(&d_combined.slice(ndarray::s![.., li * width..(li + 1) * width]));
            }
        }
        Jk::Max => {
            let arg = cache.argmax.as_ref().unwrap();
            for i in 0..n {
                for j in 0..width {
                    d_per_layer[arg[[i, j]]][[i, j]] += d_combined[[i, j]];
                }
            }
        }
    }

    let mut grads: Vec<IbgnnLayer> = model
        .layers
        .iter()
        .map(|layer| IbgnnLayer {
            t1s: layer.t1s.zeros_like(),
            t2s: layer.t2s.zeros_like(),
            t1t: layer.t1t.zeros_like(),
            t2t: layer.t2t.zeros_like(),
            f: Array2::zeros(layer.f.dim()),
            b: Array2::zeros(layer.b.dim()),
        })
        .collect();

    let mut d_hs: Array2<f64> = Array2::zeros((n, width));
    let mut d_ht: Array2<f64> = Array2::zeros((n, width));
    for li in (0..l).rev() {
        d_hs += &d_per_layer[li];
        d_ht += &d_per_layer[li];
        let layer = &model.layers[li];

        let mut da_s = d_hs.clone();
        let mut da_t = d_ht.clone();
        if let Some(m) = &cache.masks_s[li] {
            da_s = &da_s * m;
        }
        if let Some(m) = &cache.masks_t[li] {
            da_t = &da_t * m;
        }
        let residual_here = model.residual && cache.hs[li].ncols() == width;
        let dz_s = &da_s * &cache.zs[li].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
        let dz_t = &da_t * &cache.zt[li].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });

        let (dh_prev_s, g1s) = layer.t1s.backward(&cache.hs[li], &dz_s);
        let (dms, g2s) = layer.t2s.backward(&v.dot(&layer.b), &dz_s);
        let (dh_prev_t, g1t) = layer.t1t.backward(&cache.ht[li], &dz_t);
        let (dmt, g2t) = layer.t2t.backward(&u.dot(&layer.f), &dz_t);

        grads[li].t1s = g1s;
        grads[li].t2s = g2s;
        grads[li].t1t = g1t;
        grads[li].t2t = g2t;
        grads[li].b = v.t().dot(&dms);
        grads[li].f = u.t().dot(&dmt);

        let mut next_d_hs = dh_prev_s;
        let mut next_d_ht = dh_prev_t;
        if residual_here {
            next_d_hs += &da_s;
            next_d_ht += &da_t;
        }
        d_hs = next_d_hs;
        d_ht = next_d_ht;
    }

    NnGrads {
        layers: grads,
        readout: d_readout,
    }
}

/// Softmax cross-entropy over masked rows; returns (mean loss, d_logits).
pub fn softmax_ce(
    logits: &Array2<f64>,
    labels: &[usize],
    mask: &[bool],
) -> Result<(f64, Array2<f64>)> {
    let (n, c) = logits.dim();
    if labels.len() != n || mask.len() != n {
        return Err(IbgError::Shape("label/mask length mismatch".into()));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(IbgError::Validation("empty training mask".into()));
    }
    let mut loss = 0.0;
    let mut d = Array2::<f64>::zeros((n, c));
    let scale = 1.0 / count as f64;
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        if labels[i] >= c {
            return Err(IbgError::Validation(format!(
                "label {} out of range for {c} classes",
                labels[i]
            )));
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss -= ((exps[labels[i]] / z).max(1e-300)).ln() * scale;
        for j in 0..c {
            d[[i, j]] = (exps[j] / z - if j == labels[i] { 1.0 } else { 0.0 }) * scale;
        }
    }
    Ok((loss, d))
}

fn accuracy(logits: &Array2<f64>, labels: &[usize], mask: &[bool]) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for i in 0..logits.nrows() {
        if !mask[i] {
            continue;
        }
        total += 1;
        let row = logits.row(i);
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == labels[i] {
            hit += 1;
        }
    }
    if total == 0 {
        f64::NAN
    } else {
        hit as f64 / total as f64
    }
}

#[derive(Debug, Clone)]
pub struct NnMetrics {
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub loss_trace: Vec<f64>,
}

struct ModelAdam {
    layers: Vec<Vec<AdamState>>,
    readout: AdamState,
}

fn theta_states(t: &Theta) -> Vec<AdamState> {
    t.params().iter().map(|w| AdamState::new(w.len())).collect()
}

fn step_theta(states: &mut [AdamState], p: &AdamParams, t: &mut Theta, g: &Theta) {
    for ((st, w), gw) in states
        .iter_mut()
        .zip(t.params_mut())
        .zip(g.params())
    {
        st.step_array2(p, w, gw);
    }
}

/// Train the classifier on frozen factors. Model selection by validation
/// accuracy; deterministic per seed.
pub fn train_node_classifier(
    graph: &DirectedGraphSignal,
    factors: &IbgFactors,
    cfg: &NnConfig,
    masks: &Masks,
) -> Result<(NnMetrics, IbgnnModel)> {
    let labels = graph
        .labels
        .as_ref()
        .ok_or_else(|| IbgError::Validation("training requires node labels".into()))?;
    masks.validate(graph.num_nodes())?;
    let x = graph.signal();
    if x.ncols() == 0 {
        return Err(IbgError::Validation("training requires node features".into()));
    }
    if x.iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
        return Err(IbgError::Validation(
            "signal entries must lie in [-1, 1]".into(),
        ));
    }
    if labels.iter().any(|&l| l >= cfg.classes) {
        return Err(IbgError::Validation("label outside class range".into()));
    }

    let u = factors.u();
    let v = factors.v();
    let mut model = IbgnnModel::new(cfg, x.ncols(), factors.k())?;
    let adam = AdamParams {
        lr: cfg.lr,
        ..AdamParams::default()
    };
    let mut opt = ModelAdam {
        layers: model
            .layers
            .iter()
            .map(|l| {
                let mut v = Vec::new();
                v.extend(theta_states(&l.t1s));
                v.extend(theta_states(&l.t2s));
                v.extend(theta_states(&l.t1t));
                v.extend(theta_states(&l.t2t));
                v.push(AdamState::new(l.f.len()));
                v.push(AdamState::new(l.b.len()));
                v
            })
            .collect(),
        readout: AdamState::new(model.readout.len()),
    };
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);

    let mut best_val = f64::NEG_INFINITY;
    let mut best_model = model.clone();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let cache = forward(&model, x, &u, &v, cfg.dropout, Some(&mut drop_rng))?;
        let (loss, d_logits) = softmax_ce(&cache.logits, labels, &masks.train)?;
        if !loss.is_finite() {
            return Err(IbgError::Diverged {
                step: trace.len(),
                loss,
            });
        }
        trace.push(loss);
        let grads = backward(&model, &cache, &u, &v, &d_logits);
        for (li, (layer, grad)) in model.layers.iter_mut().zip(grads.layers.iter()).enumerate() {
            let states = &mut opt.layers[li];
            let mut cursor = 0;
            let advance = |states: &mut Vec<AdamState>,
                               t: &mut Theta,
                               g: &Theta,
                               cursor: &mut usize| {
                let n = t.params().len();
                step_theta(&mut states[*cursor..*cursor + n], &adam, t, g);
                *cursor += n;
            };
            advance(states, &mut layer.t1s, &grad.t1s, &mut cursor);
            advance(states, &mut layer.t2s, &grad.t2s, &mut cursor);
            advance(states, &mut layer.t1t, &grad.t1t, &mut cursor);
            advance(states, &mut layer.t2t, &grad.t2t, &mut cursor);
            states[cursor].step_array2(&adam, &mut layer.f, &grad.f);
            states[cursor + 1].step_array2(&adam, &mut layer.b, &grad.b);
        }
        opt.readout.step_array2(&adam, &mut model.readout, &grads.readout);

        let eval = forward(&model, x, &u, &v, 0.0, None)?;
        let val = accuracy(&eval.logits, labels, &masks.val);
        if val > best_val {
            best_val = val;
            best_model = model.clone();
        }
    }

    let eval = forward(&best_model, x, &u, &v, 0.0, None)?;
    let metrics = NnMetrics {
        train_acc: accuracy(&eval.logits, labels, &masks.train),
        val_acc: accuracy(&eval.logits, labels, &masks.val),
        test_acc: accuracy(&eval.logits, labels, &masks.test),
        loss_trace: trace,
    };
    Ok((metrics, best_model))
}
