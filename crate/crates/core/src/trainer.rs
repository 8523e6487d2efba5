//! Joint training of the autoencoder, surrogate and student.
//!
//! Each step minimizes
//! `w_rec * BCE(x_hat, x) + w_pred * pred + w_distill * MSE(y_s, y_soft)`
//! where `x_hat = decode(encode(x))`, `pred` compares the surrogate's output
//! on `x_hat` with the Monte-Carlo labels, and the student sees a detached
//! latent and a detached teacher spread. After every Adam step the
//! surrogate's constrained tensors are clamped at zero.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::tape::PROB_EPS;
use crate::autograd::{adam_step, AdamState, Bound, Params, Reduction, Tape, Tensor, Var};
use crate::dataset::{TrainingCorpus, TrainingPair};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::{Architecture, AttentionNorm, MessageGraph, ModelBundle, Surrogate};
use crate::seeds::derive_seed;

/// Supervision for the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// BCE between `tau` and the per-node infection frequencies.
    #[default]
    PerNode,
    /// MSE between `sum(tau)` and the scalar spread.
    Scalar,
}

/// Network sizes, independent of the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub encoder_widths: Vec<usize>,
    pub heads: usize,
    pub head_dim: usize,
    pub attention: AttentionNorm,
    pub student_widths: Vec<usize>,
    pub xi: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        let a = Architecture::standard(1);
        ModelShape {
            encoder_widths: a.encoder_widths,
            heads: a.heads,
            head_dim: a.head_dim,
            attention: a.attention,
            student_widths: a.student_widths,
            xi: a.xi,
        }
    }
}

impl ModelShape {
    pub fn for_graph(&self, node_count: usize) -> Architecture {
        Architecture {
            node_count,
            encoder_widths: self.encoder_widths.clone(),
            heads: self.heads,
            head_dim: self.head_dim,
            attention: self.attention,
            student_widths: self.student_widths.clone(),
            xi: self.xi,
        }
    }
}

/// Optional per-network learning rates overriding [`TrainConfig::lr`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrOverrides {
    pub encoder: Option<f64>,
    pub decoder: Option<f64>,
    pub surrogate: Option<f64>,
    pub student: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_overrides: LrOverrides,
    pub w_rec: f64,
    pub w_pred: f64,
    pub w_distill: f64,
    pub target: TargetMode,
    /// Feed the surrogate the raw seed vector instead of the reconstruction.
    pub raw_surrogate_input: bool,
    pub rng_seed: u64,
    pub model: ModelShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 32,
            lr: 1e-3,
            lr_overrides: LrOverrides::default(),
            w_rec: 1.0,
            w_pred: 1.0,
            w_distill: 1.0,
            target: TargetMode::PerNode,
            raw_surrogate_input: false,
            rng_seed: 0,
            model: ModelShape::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [
            Some(self.lr),
            self.lr_overrides.encoder,
            self.lr_overrides.decoder,
            self.lr_overrides.surrogate,
            self.lr_overrides.student,
        ];
        if lrs.iter().flatten().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        let w = [self.w_rec, self.w_pred, self.w_distill];
        if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::invalid("at least one loss weight must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        Ok(())
    }
}

/// Loss components averaged over the samples of one epoch (unweighted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub reconstruction: f64,
    pub prediction: f64,
    pub distillation: f64,
}

/// How well a bundle fits a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    /// Per-element BCE between `decode(encode(x))` and `x`.
    pub reconstruction_bce: f64,
    /// ROC AUC of reconstructed probabilities against seed membership.
    pub reconstruction_auc: f64,
    /// Mean absolute error of the surrogate's soft spread on binary seeds.
    pub surrogate_spread_mae: f64,
    /// Mean absolute error of the student on encoded seeds.
    pub student_spread_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
    pub fit: FitMetrics,
    /// Smallest constrained surrogate entry after the last step.
    pub min_constrained_param: f64,
    pub steps: usize,
}

/// Prediction loss of one sample: per-node BCE (averaged over nodes) or the
/// squared error of the soft spread.
pub fn pred_loss(mode: TargetMode, tau: &[f64], y_soft: f64, pair: &TrainingPair) -> Result<f64> {
    match mode {
        TargetMode::PerNode => {
            if pair.node_frequency.is_empty() {
                return Err(Error::invalid("per-node targets need node frequencies"));
            }
            if pair.node_frequency.len() != tau.len() {
                return Err(Error::ShapeMismatch {
                    op: "pred_loss",
                    left: vec![tau.len()],
                    right: vec![pair.node_frequency.len()],
                });
            }
            Ok(binary_cross_entropy(tau, &pair.node_frequency))
        }
        TargetMode::Scalar => Ok((y_soft - pair.spread).powi(2)),
    }
}

/// Mean BCE with the same clamping as the tape's loss.
pub fn binary_cross_entropy(p: &[f64], t: &[f64]) -> f64 {
    let total: f64 = p
        .iter()
        .zip(t)
        .map(|(&x, &t)| {
            let x = x.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(t * x.ln() + (1.0 - t) * (1.0 - x).ln())
        })
        .sum();
    total / p.len() as f64
}

/// ROC AUC of `scores` for binary `labels`, with tied scores counted half.
/// Returns 0.5 when one class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Average 1-based rank of the tie group.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return 0.5;
    }
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

struct Batch {
    x: Tensor,
    freq: Arc<Tensor>,
    spread: Arc<Tensor>,
}

fn make_batch(pairs: &[&TrainingPair], n: usize, need_freq: bool) -> Result<Batch> {
    let mut xs = Vec::with_capacity(pairs.len() * n);
    let mut freq = Vec::with_capacity(if need_freq { pairs.len() * n } else { 0 });
    for p in pairs {
        xs.extend(p.seeds.to_f64());
        if need_freq {
            if p.node_frequency.len() != n {
                return Err(Error::invalid("per-node targets need node frequencies"));
            }
            freq.extend_from_slice(&p.node_frequency);
        }
    }
    let freq = if need_freq {
        Tensor::column(freq)
    } else {
        Tensor::zeros(0, 1)
    };
    Ok(Batch {
        x: Tensor::matrix(pairs.len(), n, xs)?,
        freq: Arc::new(freq),
        spread: Arc::new(Tensor::column(pairs.iter().map(|p| p.spread).collect())),
    })
}

struct LossVars {
    total: Var,
    rec: Var,
    pred: Option<Var>,
    distill: Option<Var>,
}

fn record_loss(
    tape: &mut Tape,
    bundle: &ModelBundle,
    bounds: [&Bound; 4],
    mg: &MessageGraph,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<LossVars> {
    let [be, bd, bs, bl] = bounds;
    let b = batch.x.rows();
    let n = batch.x.cols();
    let x = tape.constant(batch.x.clone());
    let z = bundle.encoder.forward(tape, be, x)?;
    let x_hat = bundle.decoder.forward(tape, bd, z)?;
    let rec = tape.bce_loss(x_hat, Arc::new(batch.x.clone()), Reduction::Mean)?;

    let mut terms: Vec<(Var, f64)> = vec![(rec, cfg.w_rec)];
    let (mut pred, mut distill) = (None, None);
    if cfg.w_pred > 0.0 || cfg.w_distill > 0.0 {
        let input = if cfg.raw_surrogate_input {
            tape.constant(Tensor::column(batch.x.data().to_vec()))
        } else {
            tape.reshape(x_hat, b * n, 1)?
        };
        let tau = bundle.surrogate.forward(tape, bs, mg, input)?;
        let y_soft = Surrogate::soft_spread(tape, mg, tau)?;
        if cfg.w_pred > 0.0 {
            let p = match cfg.target {
                TargetMode::PerNode => tape.bce_loss(tau, batch.freq.clone(), Reduction::Mean)?,
                TargetMode::Scalar => tape.mse_loss(y_soft, batch.spread.clone(), Reduction::Mean)?,
            };
            pred = Some(p);
            terms.push((p, cfg.w_pred));
        }
        let z_detached = tape.detach(z);
        let y_s = bundle.student.forward(tape, bl, z_detached)?;
        let teacher = Arc::new(tape.value(y_soft).clone());
        let d = tape.mse_loss(y_s, teacher, Reduction::Mean)?;
        distill = Some(d);
        terms.push((d, cfg.w_distill));
    }
    let mut total: Option<Var> = None;
    for (v, w) in terms {
        if w == 0.0 {
            continue;
        }
        let scaled = tape.scale(v, w);
        total = Some(match total {
            None => scaled,
            Some(t) => tape.add(t, scaled)?,
        });
    }
    let total = total.ok_or_else(|| Error::Config("every loss weight is zero".into()))?;
    Ok(LossVars {
        total,
        rec,
        pred,
        distill,
    })
}

/// Records the weighted training loss of `pairs` on `tape`, with the four
/// parameter groups bound in encoder, decoder, surrogate, student order.
/// The distillation target is the teacher's value, held constant.
pub fn batch_loss(
    tape: &mut Tape,
    bundle: &ModelBundle,
    bounds: [&Bound; 4],
    graph: &Graph,
    pairs: &[&TrainingPair],
    cfg: &TrainConfig,
) -> Result<Var> {
    let n = graph.node_count();
    let batch = make_batch(pairs, n, cfg.target == TargetMode::PerNode && cfg.w_pred > 0.0)?;
    let mg = MessageGraph::new(graph, pairs.len());
    Ok(record_loss(tape, bundle, bounds, &mg, &batch, cfg)?.total)
}

struct StepOutput {
    total: f64,
    rec: f64,
    pred: f64,
    distill: f64,
}

/// Trainer state: bundle, optimizers and cached message graphs.
pub struct Trainer<'g> {
    graph: &'g Graph,
    pub bundle: ModelBundle,
    cfg: TrainConfig,
    opt: [AdamState; 4],
    message_graphs: HashMap<usize, MessageGraph>,
    steps: usize,
}

impl<'g> Trainer<'g> {
    pub fn new(graph: &'g Graph, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let arch = cfg.model.for_graph(graph.node_count());
        let bundle = ModelBundle::init(arch, graph, derive_seed(cfg.rng_seed, 1))?;
        Ok(Self::from_bundle(graph, bundle, cfg))
    }

    /// Continues training an existing bundle with fresh optimizer state.
    pub fn from_bundle(graph: &'g Graph, bundle: ModelBundle, cfg: TrainConfig) -> Self {
        let opt = [
            AdamState::for_params(&bundle.encoder.params),
            AdamState::for_params(&bundle.decoder.params),
            AdamState::for_params(&bundle.surrogate.params),
            AdamState::for_params(&bundle.student.params),
        ];
        Trainer {
            graph,
            bundle,
            cfg,
            opt,
            message_graphs: HashMap::new(),
            steps: 0,
        }
    }

    fn lrs(&self) -> [f64; 4] {
        let o = &self.cfg.lr_overrides;
        [o.encoder, o.decoder, o.surrogate, o.student].map(|x| x.unwrap_or(self.cfg.lr))
    }

    fn step(&mut self, batch: &Batch) -> Result<StepOutput> {
        let b = batch.x.rows();
        let cfg = &self.cfg;
        let mg = self
            .message_graphs
            .entry(b)
            .or_insert_with(|| MessageGraph::new(self.graph, b));
        let bundle = &self.bundle;

        let mut tape = Tape::new();
        let be = bundle.encoder.params.bind(&mut tape, true);
        let bd = bundle.decoder.params.bind(&mut tape, true);
        let bs = bundle.surrogate.params.bind(&mut tape, true);
        let bl = bundle.student.params.bind(&mut tape, true);
        let vars = record_loss(&mut tape, bundle, [&be, &bd, &bs, &bl], mg, batch, cfg)?;
        let total = vars.total;
        let pred_value = vars.pred.map_or(0.0, |v| tape.value(v).item());
        let distill_value = vars.distill.map_or(0.0, |v| tape.value(v).item());
        let rec = vars.rec;
        let total_value = tape.value(total).item();
        let rec_value = tape.value(rec).item();
        if !total_value.is_finite() {
            return Err(Error::NonFinite {
                stage: "training step",
                index: self.steps,
            });
        }
        let grads = tape.backward(total)?;
        let lrs = self.lrs();
        let bounds = [&be, &bd, &bs, &bl];
        let bundle = &mut self.bundle;
        let groups: [&mut Params; 4] = [
            &mut bundle.encoder.params,
            &mut bundle.decoder.params,
            &mut bundle.surrogate.params,
            &mut bundle.student.params,
        ];
        for (i, params) in groups.into_iter().enumerate() {
            let g = bounds[i].grads(&grads);
            adam_step(&mut params.tensors_mut(), &g, &mut self.opt[i], lrs[i]);
        }
        bundle.surrogate.project();
        self.steps += 1;
        Ok(StepOutput {
            total: total_value,
            rec: rec_value,
            pred: pred_value,
            distill: distill_value,
        })
    }

    /// One pass over `corpus` in an order shuffled by `rng`.
    pub fn epoch(&mut self, corpus: &TrainingCorpus, epoch: usize, rng: &mut ChaCha8Rng) -> Result<EpochLoss> {
        let n = self.graph.node_count();
        let need_freq = self.cfg.target == TargetMode::PerNode && (self.cfg.w_pred > 0.0);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(rng);
        let mut sums = [0.0f64; 4];
        for chunk in order.chunks(self.cfg.batch_size) {
            let pairs: Vec<&TrainingPair> = chunk.iter().map(|&i| &corpus.pairs[i]).collect();
            let batch = make_batch(&pairs, n, need_freq)?;
            let out = self.step(&batch).map_err(|e| match e {
                Error::NonFinite { stage, .. } => Error::NonFinite { stage, index: epoch },
                other => other,
            })?;
            let w = chunk.len() as f64;
            sums[0] += w * out.total;
            sums[1] += w * out.rec;
            sums[2] += w * out.pred;
            sums[3] += w * out.distill;
        }
        let m = corpus.len() as f64;
        Ok(EpochLoss {
            epoch,
            total: sums[0] / m,
            reconstruction: sums[1] / m,
            prediction: sums[2] / m,
            distillation: sums[3] / m,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Trains a fresh bundle on `corpus`. Deterministic for a fixed
/// `cfg.rng_seed`.
pub fn train(graph: &Graph, corpus: &TrainingCorpus, cfg: &TrainConfig) -> Result<(ModelBundle, TrainReport)> {
    train_with(graph, corpus, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    graph: &Graph,
    corpus: &TrainingCorpus,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<(ModelBundle, TrainReport)> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("training corpus has no pairs".into()));
    }
    corpus.check_graph(graph)?;
    let mut trainer = Trainer::new(graph, cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, 2));
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let loss = trainer.epoch(corpus, e, &mut rng)?;
        on_epoch(&loss);
        epochs.push(loss);
    }
    let steps = trainer.steps();
    let mut bundle = trainer.bundle;
    let fit = evaluate_fit(&bundle, graph, corpus)?;
    bundle.manifest = serde_json::json!({
        "train_config": cfg,
        "corpus_pairs": corpus.len(),
        "diffusion": corpus.spec,
        "fit": fit,
    });
    let report = TrainReport {
        epochs,
        fit,
        min_constrained_param: bundle.surrogate.min_constrained(),
        steps,
    };
    Ok((bundle, report))
}

/// Reconstruction and spread-prediction quality of `bundle` on `corpus`.
pub fn evaluate_fit(bundle: &ModelBundle, graph: &Graph, corpus: &TrainingCorpus) -> Result<FitMetrics> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("cannot evaluate on an empty corpus".into()));
    }
    let n = graph.node_count();
    let chunk = 64;
    let mut bce_sum = 0.0;
    let mut scores = Vec::with_capacity(corpus.len() * n);
    let mut labels = Vec::with_capacity(corpus.len() * n);
    let mut sur_err = 0.0;
    let mut stu_err = 0.0;
    for pairs in corpus.pairs.chunks(chunk) {
        let xs: Vec<f64> = pairs.iter().flat_map(|p| p.seeds.to_f64()).collect();
        let z = bundle.encode_batch(pairs.len(), xs.clone())?;
        let x_hat = bundle.decode_batch(pairs.len(), z.data().to_vec())?;
        bce_sum += binary_cross_entropy(x_hat.data(), &xs) * xs.len() as f64;
        scores.extend_from_slice(x_hat.data());
        labels.extend(xs.iter().map(|&v| v == 1.0));
        let mg = MessageGraph::new(graph, pairs.len());
        let soft = bundle.surrogate_soft_batch(&mg, &xs)?;
        let student = bundle.student.eval(pairs.len(), z.into_data())?;
        for (i, p) in pairs.iter().enumerate() {
            sur_err += (soft[i] - p.spread).abs();
            stu_err += (student.data()[i] - p.spread).abs();
        }
    }
    let m = corpus.len() as f64;
    Ok(FitMetrics {
        reconstruction_bce: bce_sum / (m * n as f64),
        reconstruction_auc: roc_auc(&scores, &labels),
        surrogate_spread_mae: sur_err / m,
        student_spread_mae: stu_err / m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_corpus, CorpusRecipe, SeedSampling};
    use crate::diffusion::DiffusionSpec;
    use crate::graph::erdos_renyi;
    use crate::seeds::SeedVector;

    fn tiny_shape() -> ModelShape {
        ModelShape {
            encoder_widths: vec![16, 8],
            heads: 2,
            head_dim: 4,
            attention: AttentionNorm::DegreeGate,
            student_widths: vec![8],
            xi: 0.5,
        }
    }

    fn tiny_setup(sets: usize) -> (Graph, TrainingCorpus, TrainConfig) {
        let g = erdos_renyi(24, 60, 3).unwrap();
        let recipe = CorpusRecipe {
            fractions: vec![0.1, 0.2],
            sets_per_fraction: sets,
            rounds: 20,
            sampling: SeedSampling::Uniform,
            rng_seed: 4,
        };
        let c = build_corpus(&g, &DiffusionSpec::Ic, &recipe).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 8,
            model: tiny_shape(),
            rng_seed: 5,
            ..TrainConfig::default()
        };
        (g, c, cfg)
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.validate().unwrap();
        c.w_rec = 0.0;
        c.w_pred = 0.0;
        c.w_distill = 0.0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            w_pred: -1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn pred_loss_minimum_is_target_entropy() {
        let freq = vec![1.0, 0.25, 0.0, 0.5];
        let pair = TrainingPair {
            seeds: SeedVector::from_indices(4, &[0]).unwrap(),
            spread: freq.iter().sum(),
            node_frequency: freq.clone(),
        };
        let got = pred_loss(TargetMode::PerNode, &freq, 0.0, &pair).unwrap();
        let entropy = |p: f64| {
            if p == 0.0 || p == 1.0 {
                0.0
            } else {
                -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
            }
        };
        let expected: f64 = freq.iter().map(|&p| entropy(p)).sum::<f64>() / 4.0;
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
        assert_eq!(pred_loss(TargetMode::Scalar, &freq, 1.75, &pair).unwrap(), 0.0);
        let bare = TrainingPair {
            node_frequency: Vec::new(),
            ..pair
        };
        assert!(pred_loss(TargetMode::PerNode, &freq, 0.0, &bare).is_err());
    }

    #[test]
    fn auc_matches_pairwise_count() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4];
        let labels = [false, true, false, true, false];
        let mut wins = 0.0;
        let mut total = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                if labels[i] && !labels[j] {
                    total += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        assert!((roc_auc(&scores, &labels) - wins / total).abs() < 1e-12);
        assert_eq!(roc_auc(&[0.3, 0.2], &[true, true]), 0.5);
    }

    #[test]
    fn training_keeps_surrogate_nonnegative_and_is_reproducible() {
        let (g, c, cfg) = tiny_setup(8);
        let mut mins = Vec::new();
        let mut trainer = Trainer::new(&g, cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for e in 0..3 {
            let loss = trainer.epoch(&c, e, &mut rng).unwrap();
            assert!(loss.total.is_finite());
            mins.push(trainer.bundle.surrogate.min_constrained());
        }
        assert!(mins.iter().all(|&m| m >= 0.0));
        let (a, ra) = train(&g, &c, &cfg).unwrap();
        let (b, rb) = train(&g, &c, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.steps, 4 * 2);
    }

    #[test]
    fn distillation_does_not_touch_the_teacher() {
        let (g, c, cfg) = tiny_setup(4);
        let cfg = TrainConfig {
            w_rec: 0.0,
            w_pred: 0.0,
            w_distill: 1.0,
            epochs: 2,
            ..cfg
        };
        let before = Trainer::new(&g, cfg.clone()).unwrap().bundle;
        let (after, _) = train(&g, &c, &cfg).unwrap();
        assert_eq!(before.surrogate.params, after.surrogate.params);
        assert_eq!(before.encoder.params, after.encoder.params);
        assert_ne!(before.student.params, after.student.params);
    }

    #[test]
    fn scalar_mode_and_raw_input_train() {
        let (g, c, cfg) = tiny_setup(4);
        for (target, raw) in [(TargetMode::Scalar, false), (TargetMode::PerNode, true)] {
            let cfg = TrainConfig {
                target,
                raw_surrogate_input: raw,
                epochs: 2,
                ..cfg.clone()
            };
            let (_, r) = train(&g, &c, &cfg).unwrap();
            assert!(r.epochs.iter().all(|e| e.total.is_finite()));
        }
    }

    #[test]
    fn divergence_reports_the_epoch() {
        let (g, c, cfg) = tiny_setup(4);
        let cfg = TrainConfig {
            epochs: 3,
            ..cfg
        };
        let mut trainer = Trainer::new(&g, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        trainer.epoch(&c, 0, &mut rng).unwrap();
        trainer.bundle.surrogate.params.get_mut("out.b").unwrap().data_mut()[0] = f64::NAN;
        let err = trainer.epoch(&c, 1, &mut rng).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }), "{err}");
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let (g, mut c, cfg) = tiny_setup(2);
        c.pairs.clear();
        assert!(matches!(train(&g, &c, &cfg), Err(Error::EmptyInput(_))));
    }
}
