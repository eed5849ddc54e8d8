//! Joint training of networks and codes, and frozen-network code fitting.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{model_forward, ForwardOptions, ModelState};
use crate::objectives::{total_objective, CentroidPrior, LossBatch, LossRecord, LossWeights};
use crate::rng::{tags, CounterRng};
use crate::shape_data::SampleArchive;
use crate::tape::{Tape, Var};

pub const CLIP_NORM: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_instances: usize,
    pub points_per_instance: usize,
    pub lr: f64,
    pub seed: u64,
    /// Upper bound on contact points appended to each instance batch.
    pub max_contact_points: usize,
    /// Epoch interval of the checkpoint callback; 0 disables it.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_instances: 12,
            points_per_instance: 16384,
            lr: 1e-3,
            seed: 0,
            max_contact_points: 2048,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_instances == 0 || self.points_per_instance == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch_instances, points_per_instance and lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub lr: f64,
    pub preset: LossWeights,
    pub missing_categories: Vec<usize>,
    pub points_per_instance: usize,
    pub max_contact_points: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 800,
            lr: 1e-2,
            preset: LossWeights::reconstruction(),
            missing_categories: Vec::new(),
            points_per_instance: 16384,
            max_contact_points: 2048,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.points_per_instance == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("iterations, points_per_instance and lr must be positive".into()));
        }
        self.preset.validate()
    }
}

/// Per-instance, per-category latent codes; `codes[i]` is `m×code_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeBank {
    pub ids: Vec<String>,
    pub codes: Vec<Array2<f64>>,
}

impl CodeBank {
    pub fn get(&self, id: &str) -> Option<&Array2<f64>> {
        self.ids.iter().position(|x| x == id).map(|i| &self.codes[i])
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Mean Euclidean norm of all category codes.
    pub fn mean_code_norm(&self) -> f64 {
        let norms: Vec<f64> = self
            .codes
            .iter()
            .flat_map(|c| c.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect::<Vec<_>>())
            .collect();
        norms.iter().sum::<f64>() / norms.len().max(1) as f64
    }
}

/// I.i.d. `N(0, 0.01²)` codes; instance `i` draws from its own stream.
pub fn init_codes(ids: &[String], m: usize, code_dim: usize, seed: u64) -> CodeBank {
    let codes = (0..ids.len())
        .map(|i| {
            let mut rng = CounterRng::stream(seed, &[tags::CODES, i as u64]);
            Array2::from_shape_fn((m, code_dim), |_| 0.01 * rng.normal())
        })
        .collect();
    CodeBank {
        ids: ids.to_vec(),
        codes,
    }
}

/// Adam over a list of tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            ndarray::Zip::from(&mut **p)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

/// Scales `grads` so their joint norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Array2<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * s);
        }
    }
    norm
}

/// Draws rows of an archive without replacement, reshuffling when exhausted.
#[derive(Clone, Debug)]
pub struct PointSampler {
    n_surface: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: CounterRng,
}

impl PointSampler {
    pub fn new(archive: &SampleArchive, rng: CounterRng) -> Self {
        let total = archive.n_surface() + archive.n_free();
        let mut s = PointSampler {
            n_surface: archive.n_surface(),
            order: (0..total).collect(),
            cursor: total,
            rng,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.rng.shuffle(&mut self.order);
        self.cursor = 0;
    }

    /// `(surface indices, free indices)` of the next `k` rows.
    pub fn draw(&mut self, k: usize) -> (Vec<usize>, Vec<usize>) {
        let k = k.min(self.order.len());
        let mut surface = Vec::new();
        let mut free = Vec::new();
        for _ in 0..k {
            if self.cursor == self.order.len() {
                self.reshuffle();
            }
            let i = self.order[self.cursor];
            self.cursor += 1;
            if i < self.n_surface {
                surface.push(i);
            } else {
                free.push(i - self.n_surface);
            }
        }
        (surface, free)
    }

    /// Up to `cap` contact free indices of `archive`.
    pub fn contacts(&mut self, archive: &SampleArchive, cap: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = archive.contacts.iter().map(|c| c.free_index as usize).collect();
        if idx.len() > cap {
            self.rng.shuffle(&mut idx);
            idx.truncate(cap);
            idx.sort_unstable();
        }
        idx
    }
}

/// Gradients of one instance objective.
struct InstanceGrads {
    params: Option<Vec<Array2<f64>>>,
    codes: Array2<f64>,
    terms: BTreeMap<String, f64>,
}

fn code_rows(tape: &Tape, codes: &Array2<f64>, trainable: bool) -> Vec<Var> {
    codes
        .rows()
        .into_iter()
        .map(|r| {
            let row = r.to_owned().insert_axis(Axis(0));
            if trainable {
                tape.leaf(row)
            } else {
                tape.constant(row)
            }
        })
        .collect()
}

/// Contact candidates for missing categories: rows where some present
/// category's ground truth and some missing category's prediction are both
/// below `eps_c`.
fn recovery_contacts(batch: &mut LossBatch, s_prime: &Array2<f64>, eps_c: f64) {
    if batch.missing.is_empty() {
        return;
    }
    let m = batch.m();
    let mut by_row: BTreeMap<usize, Vec<usize>> = batch.contacts.drain(..).collect();
    for i in 0..batch.len() {
        let present: Vec<usize> = (0..m)
            .filter(|j| !batch.missing.contains(j) && batch.gt[[i, *j]] < eps_c)
            .collect();
        let missing: Vec<usize> = batch.missing.iter().copied().filter(|&j| s_prime[[i, j]] < eps_c).collect();
        if present.is_empty() || missing.is_empty() {
            continue;
        }
        let entry = by_row.entry(i).or_default();
        for j in present.into_iter().chain(missing) {
            if !entry.contains(&j) {
                entry.push(j);
            }
        }
        entry.sort_unstable();
    }
    batch.contacts = by_row.into_iter().filter(|(_, g)| g.len() >= 2).collect();
}

fn instance_step(
    state: &ModelState,
    codes: &Array2<f64>,
    batch: &mut LossBatch,
    weights: &LossWeights,
    prior: &CentroidPrior,
    train_params: bool,
    eps_c: f64,
) -> Result<InstanceGrads> {
    let tape = Tape::new();
    let bound = state.bind(&tape, train_params);
    let cv = code_rows(&tape, codes, true);
    let p = tape.constant(batch.points.clone());
    let out = model_forward(&tape, state, &bound, &cv, p, ForwardOptions::default())?;
    if !batch.missing.is_empty() {
        let sp = tape.value(out.s_prime).clone();
        recovery_contacts(batch, &sp, eps_c);
    }
    let obj = total_objective(&tape, &out, &cv, batch, weights, prior)?;
    let terms = obj.breakdown(&tape);
    let mut grads = tape.backward(obj.total);
    let params = train_params.then(|| {
        bound
            .vars
            .iter()
            .zip(&state.tensors)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Array2::zeros(t.dim())))
            .collect()
    });
    let mut code_grad = Array2::zeros(codes.dim());
    for (j, &v) in cv.iter().enumerate() {
        if let Some(g) = grads.take(v) {
            code_grad.row_mut(j).assign(&g.row(0));
        }
    }
    Ok(InstanceGrads {
        params,
        codes: code_grad,
        terms,
    })
}

fn mean_terms(parts: &[BTreeMap<String, f64>]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for p in parts {
        for (k, v) in p {
            *out.entry(k.clone()).or_insert(0.0) += v / parts.len() as f64;
        }
    }
    out
}

/// Joint optimization of all network parameters and the batch members'
/// codes. On a non-finite loss the state and bank keep their last finite
/// values and [`Error::Diverged`] is returned.
pub fn train(
    archives: &[SampleArchive],
    state: &mut ModelState,
    bank: &mut CodeBank,
    config: &TrainConfig,
    weights: &LossWeights,
    prior: &CentroidPrior,
    mut on_epoch: impl FnMut(usize, &ModelState, &CodeBank) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    config.validate()?;
    weights.validate()?;
    if archives.len() != bank.len() {
        return Err(Error::Config(format!("{} archives but {} codes", archives.len(), bank.len())));
    }
    let shapes: Vec<(usize, usize)> = state.tensors.iter().map(|t| t.dim()).collect();
    let mut adam = Adam::new(config.lr, &shapes);
    let mut code_adam: Vec<Adam> = bank.codes.iter().map(|c| Adam::new(config.lr, &[c.dim()])).collect();
    let mut samplers: Vec<PointSampler> = archives
        .iter()
        .enumerate()
        .map(|(i, a)| PointSampler::new(a, CounterRng::stream(config.seed, &[tags::BATCH, i as u64])))
        .collect();
    let missing: Vec<Vec<usize>> = archives.iter().map(|a| a.missing_categories()).collect();
    let mut order_rng = CounterRng::stream(config.seed, &[tags::BATCH, u64::MAX]);
    let mut history = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..archives.len()).collect();
        order_rng.shuffle(&mut order);
        for members in order.chunks(config.batch_instances) {
            let mut batches: Vec<LossBatch> = members
                .iter()
                .map(|&i| {
                    let (s, mut f) = samplers[i].draw(config.points_per_instance);
                    f.extend(samplers[i].contacts(&archives[i], config.max_contact_points));
                    LossBatch::gather(&archives[i], &s, &f, &missing[i])
                })
                .collect();
            let results = members
                .par_iter()
                .zip(batches.par_iter_mut())
                .map(|(&i, batch)| {
                    instance_step(state, &bank.codes[i], batch, weights, prior, true, archives[i].eps_c as f64)
                })
                .collect::<Result<Vec<_>>>()?;
            let b = members.len() as f64;
            let terms = mean_terms(&results.iter().map(|r| r.terms.clone()).collect::<Vec<_>>());
            let total = terms["total"];
            if !total.is_finite() {
                return Err(Error::Diverged { step, loss: total });
            }
            let mut pgrads: Vec<Array2<f64>> = shapes.iter().map(|&s| Array2::zeros(s)).collect();
            let mut cgrads: Vec<Array2<f64>> = Vec::with_capacity(members.len());
            for r in &results {
                for (acc, g) in pgrads.iter_mut().zip(r.params.as_ref().expect("training gradients")) {
                    acc.scaled_add(1.0 / b, g);
                }
                cgrads.push(&r.codes / b);
            }
            let finite = pgrads.iter().chain(&cgrads).all(|g| g.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::Diverged { step, loss: f64::NAN });
            }
            {
                let mut all: Vec<&mut Array2<f64>> = pgrads.iter_mut().chain(cgrads.iter_mut()).collect();
                clip_global_norm(&mut all, CLIP_NORM);
            }
            let mut params: Vec<&mut Array2<f64>> = state.tensors.iter_mut().collect();
            adam.update(&mut params, &pgrads);
            for (&i, g) in members.iter().zip(&cgrads) {
                code_adam[i].update(&mut [&mut bank.codes[i]], std::slice::from_ref(g));
            }
            history.push(LossRecord { step, terms });
            step += 1;
        }
        log::debug!("epoch {epoch} loss {}", history.last().map_or(f64::NAN, |r| r.terms["total"]));
        if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
            on_epoch(epoch, state, bank)?;
        }
    }
    Ok(history)
}

/// Result of a frozen-network fit.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub codes: Array2<f64>,
    pub history: Vec<LossRecord>,
}

fn fit_codes(
    state: &ModelState,
    archive: &SampleArchive,
    config: &FitConfig,
    initial: Array2<f64>,
    missing: &[usize],
    prior: &CentroidPrior,
) -> Result<FitResult> {
    config.validate()?;
    let mut codes = initial;
    let mut adam = Adam::new(config.lr, &[codes.dim()]);
    let mut sampler = PointSampler::new(archive, CounterRng::stream(config.seed, &[tags::BATCH]));
    let mut history = Vec::with_capacity(config.iterations);
    for step in 0..config.iterations {
        let (s, mut f) = sampler.draw(config.points_per_instance);
        f.extend(sampler.contacts(archive, config.max_contact_points));
        let mut batch = LossBatch::gather(archive, &s, &f, missing);
        let r = instance_step(state, &codes, &mut batch, &config.preset, prior, false, archive.eps_c as f64)?;
        let total = r.terms["total"];
        if !total.is_finite() || r.codes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step, loss: total });
        }
        let mut g = r.codes;
        clip_global_norm(&mut [&mut g], CLIP_NORM);
        adam.update(&mut [&mut codes], &[g]);
        history.push(LossRecord { step, terms: r.terms });
    }
    Ok(FitResult { codes, history })
}

fn zero_prior(m: usize) -> CentroidPrior {
    CentroidPrior {
        centroids: vec![[0.0; 3]; m],
    }
}

/// Codes for an unseen instance with every network parameter frozen.
/// `initial` defaults to `N(0, 0.01²)` draws.
pub fn fit_latent(
    state: &ModelState,
    archive: &SampleArchive,
    config: &FitConfig,
    initial: Option<Array2<f64>>,
) -> Result<FitResult> {
    let m = state.config.m;
    let initial = initial.unwrap_or_else(|| {
        init_codes(&["fit".to_string()], m, state.config.code_dim, config.seed)
            .codes
            .remove(0)
    });
    let missing = archive.missing_categories();
    fit_codes(state, archive, config, initial, &missing, &zero_prior(m))
}

/// Fits all codes of an instance whose archive lacks the categories in
/// `config.missing_categories` (or has no ground truth for them). Missing
/// codes start at zero.
pub fn recover_missing(state: &ModelState, archive: &SampleArchive, config: &FitConfig) -> Result<FitResult> {
    let m = state.config.m;
    let mut missing = archive.missing_categories();
    for &j in &config.missing_categories {
        if j >= m {
            return Err(Error::Categories(format!("missing category {j} out of range")));
        }
        if !missing.contains(&j) {
            missing.push(j);
        }
    }
    missing.sort_unstable();
    if missing.len() == m {
        return Err(Error::Categories("every category is missing".into()));
    }
    let masked = archive.masked(&missing);
    let mut initial = init_codes(&["fit".to_string()], m, state.config.code_dim, config.seed)
        .codes
        .remove(0);
    for &j in &missing {
        initial.row_mut(j).fill(0.0);
    }
    fit_codes(state, &masked, config, initial, &missing, &zero_prior(m))
}
