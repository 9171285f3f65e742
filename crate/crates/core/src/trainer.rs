//! Mean-teacher training loop with appearance-swapped views, cuboid-mixed
//! structure consistency and the M1..M5 ablation ladder.
//!
//! All inputs are z-normalized on entry. Amplitude-swapped views are used as
//! produced, without renormalizing.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::ControlFlow;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fourier::amplitude_swap;
use crate::losses::{
    appearance_consistency, mse_consistency, seg_loss, soft_dice_loss, structure_consistency,
    total_loss, LossValue,
};
use crate::metrics::{aggregate, dsc, DscReport, Subset, VolumeDsc};
use crate::model::{backward_into, forward, init_params, ForwardCache, NetConfig, ParamVector};
use crate::perturb::{blend, pseudo_label, sample_cuboid, CuboidMask};
use crate::sched::{adam_step, ema_update, poly_lr, ramp_lambda, AdamState, ScheduleConfig};
use crate::volume::{one_hot, Dims, LabelMap, ProbMap, Volume, znormalize};

/// Source samples per batch.
pub const SOURCE_PER_BATCH: usize = 2;
/// Target samples per batch.
pub const TARGET_PER_BATCH: usize = 2;

/// Which loss terms are active. Each mode adds one term to the previous:
/// M1 source dice, M2 dice on style-swapped sources, M3 consistency of the
/// student on target views, M4 the dual term on swapped target views, M5
/// structure consistency on cuboid-mixed views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ablation {
    M1,
    M2,
    M3,
    M4,
    M5,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [Self::M1, Self::M2, Self::M3, Self::M4, Self::M5];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::M1 => "M1",
            Self::M2 => "M2",
            Self::M3 => "M3",
            Self::M4 => "M4",
            Self::M5 => "M5",
        }
    }

    pub fn seg_on_swapped(self) -> bool {
        self >= Self::M2
    }

    pub fn app_on_target(self) -> bool {
        self >= Self::M3
    }

    pub fn app_on_swapped(self) -> bool {
        self >= Self::M4
    }

    pub fn structure(self) -> bool {
        self >= Self::M5
    }

    pub fn uses_teacher(self) -> bool {
        self.app_on_target()
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or(Error::InvalidConfig("ablation must be one of M1..M5"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub beta: f64,
    pub epochs: usize,
    /// Seeds batch sampling, pairing and masks. Network init uses `net.seed`.
    pub seed: u64,
    pub ablation: Ablation,
    /// `epochs_total` and `t_max` are overwritten from `epochs` and the
    /// dataset sizes; see [`Trainer::schedule`].
    pub schedule: ScheduleConfig,
    pub net: NetConfig,
    /// The loop is always sequential with a fixed reduction order, so runs
    /// are reproducible regardless of this flag.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            epochs: 100,
            seed: 0,
            ablation: Ablation::M5,
            schedule: ScheduleConfig::default(),
            net: NetConfig {
                hidden: 8,
                classes: 4,
                seed: 0,
            },
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidBeta(self.beta));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive"));
        }
        self.net.validate()?;
        ScheduleConfig {
            epochs_total: self.epochs,
            ..self.schedule
        }
        .validate()
    }
}

/// Mean per-item losses of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub l_seg: f64,
    pub l_app: f64,
    pub l_str: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochEval {
    pub epoch: usize,
    pub report: DscReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    /// Student DSC on the validation set after each epoch, when supplied.
    pub evals: Vec<EpochEval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub student: ParamVector,
    pub teacher: ParamVector,
    pub log: TrainLog,
}

/// Labeled volume with an identifier for reports.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub name: String,
    pub volume: Volume,
    pub labels: LabelMap,
    pub subset: Option<Subset>,
}

/// State passed to the per-epoch hook.
pub struct EpochEnd<'a> {
    /// Zero-based index of the epoch that just finished.
    pub epoch: usize,
    pub student: &'a ParamVector,
    pub teacher: &'a ParamVector,
    pub log: &'a TrainLog,
}

pub struct Trainer {
    cfg: TrainConfig,
    schedule: ScheduleConfig,
    dims: Dims,
    source: Vec<Volume>,
    labels: Vec<ProbMap>,
    target: Vec<Volume>,
    student: ParamVector,
    teacher: ParamVector,
    adam: AdamState,
    rng: ChaCha8Rng,
    step: usize,
    log: TrainLog,
}

/// Random choices of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDraws {
    /// Target whose amplitude restyles source item `i`.
    pub style_for_source: [usize; 2],
    /// Source whose amplitude restyles target item `j`.
    pub style_for_target: [usize; 2],
    /// Cuboid shared by the original and swapped target pair (M5 only).
    pub mask: Option<CuboidMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub l_seg: f64,
    pub l_app: f64,
    pub l_str: f64,
    pub l_total: f64,
    pub grad: ParamVector,
}

/// Forward caches of student passes paired with the loss gradient slot they
/// feed, in the order produced by [`total_loss`].
struct ItemPasses {
    caches: Vec<ForwardCache>,
    seg: LossValue,
    app: LossValue,
    structure: LossValue,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, source: &[(Volume, LabelMap)], target: &[Volume]) -> Result<Self> {
        cfg.validate()?;
        if source.is_empty() {
            return Err(Error::EmptyDataset("source"));
        }
        if target.is_empty() {
            return Err(Error::EmptyDataset("target"));
        }
        let dims = source[0].0.dims();
        let classes = cfg.net.classes;
        let mut labels = Vec::with_capacity(source.len());
        for (v, y) in source {
            dims.check_same(&v.dims())?;
            dims.check_same(&y.dims())?;
            labels.push(one_hot(y, classes)?);
        }
        for v in target {
            dims.check_same(&v.dims())?;
        }
        if cfg.ablation.structure() {
            // Fail before training rather than at the first structure step.
            sample_cuboid(dims, &mut ChaCha8Rng::seed_from_u64(0))?;
        }
        let steps_per_epoch = source.len().max(target.len()).div_ceil(SOURCE_PER_BATCH);
        let total = cfg.epochs * steps_per_epoch;
        let schedule = ScheduleConfig {
            epochs_total: cfg.epochs,
            t_max: total.saturating_sub(1),
            ..cfg.schedule
        };
        let student = init_params(&cfg.net);
        Ok(Self {
            cfg,
            schedule,
            dims,
            source: source.iter().map(|(v, _)| znormalize(v)).collect(),
            labels,
            target: target.iter().map(znormalize).collect(),
            teacher: student.clone(),
            adam: AdamState::new(student.len()),
            student,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            step: 0,
            log: TrainLog::default(),
        })
    }

    /// Schedule with `epochs_total = epochs` and `t_max` the last step index.
    pub fn schedule(&self) -> &ScheduleConfig {
        &self.schedule
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.source.len().max(self.target.len()).div_ceil(SOURCE_PER_BATCH)
    }

    pub fn student(&self) -> &ParamVector {
        &self.student
    }

    pub fn teacher(&self) -> &ParamVector {
        &self.teacher
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn into_trained(self) -> Trained {
        Trained {
            student: self.student,
            teacher: self.teacher,
            log: self.log,
        }
    }

    /// Index order for one epoch: the larger set is permuted (both when the
    /// sizes tie) and topped up to a whole number of batches; the smaller set
    /// is drawn with replacement.
    fn epoch_order(&mut self, n: usize, larger: bool) -> Vec<usize> {
        let slots = self.steps_per_epoch() * SOURCE_PER_BATCH;
        if larger {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut self.rng);
            while order.len() < slots {
                order.push(self.rng.gen_range(0..n));
            }
            order
        } else {
            (0..slots).map(|_| self.rng.gen_range(0..n)).collect()
        }
    }

    /// Runs one epoch and returns its zero-based index.
    pub fn run_epoch(&mut self) -> Result<usize> {
        let epoch = self.step / self.steps_per_epoch();
        let (ns, nt) = (self.source.len(), self.target.len());
        let src = self.epoch_order(ns, ns >= nt);
        let tgt = self.epoch_order(nt, nt >= ns);
        for b in 0..self.steps_per_epoch() {
            let s = [src[2 * b], src[2 * b + 1]];
            let t = [tgt[2 * b], tgt[2 * b + 1]];
            self.step_on(epoch, s, t)?;
        }
        Ok(epoch)
    }

    /// Draws the in-batch style pairing and, in M5, the shared cuboid.
    pub fn draw(&mut self) -> Result<StepDraws> {
        let mut style_for_source = [0usize, 1];
        style_for_source.shuffle(&mut self.rng);
        let mut style_for_target = [0usize, 1];
        style_for_target.shuffle(&mut self.rng);
        let mask = if self.cfg.ablation.structure() {
            Some(sample_cuboid(self.dims, &mut self.rng)?)
        } else {
            None
        };
        Ok(StepDraws {
            style_for_source,
            style_for_target,
            mask,
        })
    }

    /// One optimization step on explicit source and target indices.
    pub fn step_on(&mut self, epoch: usize, src: [usize; 2], tgt: [usize; 2]) -> Result<StepRecord> {
        let step = self.step;
        let lr = poly_lr(epoch, &self.schedule);
        let lambda = ramp_lambda(step, &self.schedule);
        let draws = self.draw()?;
        let batch = self.batch_loss(&self.student, src, tgt, &draws, lambda)?;
        let record = StepRecord {
            step,
            epoch,
            lr,
            lambda,
            l_seg: batch.l_seg,
            l_app: batch.l_app,
            l_str: batch.l_str,
            l_total: batch.l_total,
        };
        if !record.l_total.is_finite() {
            return Err(Error::NonFiniteLoss(record));
        }
        adam_step(self.student.values_mut(), batch.grad.values(), &mut self.adam, lr)?;
        ema_update(&mut self.teacher, &self.student, self.schedule.ema_alpha)?;
        self.step += 1;
        self.log.records.push(record);
        Ok(record)
    }

    /// Batch-mean loss terms and the gradient of the total with respect to
    /// `student`, with the current teacher as the constant target network.
    pub fn batch_loss(
        &self,
        student: &ParamVector,
        src: [usize; 2],
        tgt: [usize; 2],
        draws: &StepDraws,
        lambda: f64,
    ) -> Result<BatchLoss> {
        self.batch_loss_traced(student, src, tgt, draws, lambda, None)
    }

    /// As [`Self::batch_loss`], optionally appending the ReLU pattern of every
    /// student forward pass to `trace`.
    fn batch_loss_traced(
        &self,
        student: &ParamVector,
        src: [usize; 2],
        tgt: [usize; 2],
        draws: &StepDraws,
        lambda: f64,
        mut trace: Option<&mut Vec<bool>>,
    ) -> Result<BatchLoss> {
        let beta = self.cfg.beta;
        let mode = self.cfg.ablation;
        let xs = src.map(|i| &self.source[i]);
        let xt = tgt.map(|i| &self.target[i]);

        let mut xtfs: Vec<Volume> = Vec::new();
        let mut teacher_t: Vec<ProbMap> = Vec::new();
        let mut teacher_tfs: Vec<ProbMap> = Vec::new();
        if mode.uses_teacher() {
            for j in 0..TARGET_PER_BATCH {
                let v = amplitude_swap(xt[j], xs[draws.style_for_target[j]], beta)?;
                teacher_t.push(forward(&self.teacher, xt[j]).0);
                teacher_tfs.push(forward(&self.teacher, &v).0);
                xtfs.push(v);
            }
        }

        let mut items = Vec::with_capacity(SOURCE_PER_BATCH);
        for i in 0..SOURCE_PER_BATCH {
            let mut caches = Vec::new();
            let (p_s, c_s) = forward(student, xs[i]);
            caches.push(c_s);
            let seg = if mode.seg_on_swapped() {
                let x_sft = amplitude_swap(xs[i], xt[draws.style_for_source[i]], beta)?;
                let (p_sft, c_sft) = forward(student, &x_sft);
                caches.push(c_sft);
                seg_loss(&p_s, &p_sft, &self.labels[src[i]])?
            } else {
                soft_dice_loss(&p_s, &self.labels[src[i]])?
            };

            let app = if mode.app_on_swapped() {
                let (f_xt, c_t) = forward(student, xt[i]);
                let (f_xtfs, c_tfs) = forward(student, &xtfs[i]);
                caches.push(c_t);
                caches.push(c_tfs);
                appearance_consistency(&f_xt, &f_xtfs, &teacher_t[i], &teacher_tfs[i])?
            } else if mode.app_on_target() {
                let (f_xt, c_t) = forward(student, xt[i]);
                caches.push(c_t);
                mse_consistency(&f_xt, &teacher_tfs[i])?
            } else {
                LossValue::none()
            };

            let structure = match &draws.mask {
                Some(m) if mode.structure() => {
                    let o = 1 - i;
                    let xt_sp = blend(xt[i], xt[o], m)?;
                    let xtfs_sp = blend(&xtfs[i], &xtfs[o], m)?;
                    let pseudo_t = pseudo_label(&teacher_tfs[i], &teacher_tfs[o], m)?;
                    let pseudo_tfs = pseudo_label(&teacher_t[i], &teacher_t[o], m)?;
                    let (f_sp, c_sp) = forward(student, &xt_sp);
                    let (f_fs_sp, c_fs_sp) = forward(student, &xtfs_sp);
                    caches.push(c_sp);
                    caches.push(c_fs_sp);
                    structure_consistency(&f_sp, &f_fs_sp, &pseudo_t, &pseudo_tfs)?
                }
                _ => LossValue::none(),
            };
            items.push(ItemPasses {
                caches,
                seg,
                app,
                structure,
            });
        }

        let scale = 1.0 / SOURCE_PER_BATCH as f64;
        let (mut l_seg, mut l_app, mut l_str) = (0.0, 0.0, 0.0);
        let mut grad = ParamVector::zeros(student.layout());
        for item in items {
            l_seg += scale * item.seg.value;
            l_app += scale * item.app.value;
            l_str += scale * item.structure.value;
            if let Some(t) = trace.as_deref_mut() {
                item.caches.iter().for_each(|c| t.extend(c.relu_pattern()));
            }
            let total = total_loss(item.seg, item.app, item.structure, lambda);
            debug_assert_eq!(total.grads.len(), item.caches.len());
            for (cache, mut g) in item.caches.iter().zip(total.grads) {
                g.iter_mut().for_each(|v| *v *= scale);
                backward_into(student, cache, &g, &mut grad)?;
            }
        }
        Ok(BatchLoss {
            l_seg,
            l_app,
            l_str,
            l_total: l_seg + lambda * (l_app + l_str),
            grad,
        })
    }
}

/// Trains for `cfg.epochs` epochs.
pub fn train(cfg: TrainConfig, source: &[(Volume, LabelMap)], target: &[Volume]) -> Result<Trained> {
    train_with(cfg, source, target, None, |_| ControlFlow::Continue(()))
}

/// Trains with optional per-epoch validation of the student and a hook that
/// runs after every epoch and may stop training early.
pub fn train_with(
    cfg: TrainConfig,
    source: &[(Volume, LabelMap)],
    target: &[Volume],
    validation: Option<&[EvalCase]>,
    mut on_epoch: impl FnMut(EpochEnd<'_>) -> ControlFlow<()>,
) -> Result<Trained> {
    let mut trainer = Trainer::new(cfg, source, target)?;
    for _ in 0..cfg.epochs {
        let epoch = trainer.run_epoch()?;
        if let Some(cases) = validation {
            let report = evaluate(&trainer.student, cases)?;
            trainer.log.evals.push(EpochEval { epoch, report });
        }
        let flow = on_epoch(EpochEnd {
            epoch,
            student: &trainer.student,
            teacher: &trainer.teacher,
            log: &trainer.log,
        });
        if flow.is_break() {
            break;
        }
    }
    Ok(trainer.into_trained())
}

/// DSC report of the network on z-normalized copies of the cases.
pub fn evaluate(params: &ParamVector, cases: &[EvalCase]) -> Result<DscReport> {
    evaluate_with(cases, params.layout().classes, |case| {
        Ok(forward(params, &znormalize(&case.volume)).0)
    })
}

/// DSC report of an arbitrary predictor, via argmax of its probabilities.
pub fn evaluate_with(
    cases: &[EvalCase],
    classes: usize,
    mut predict: impl FnMut(&EvalCase) -> Result<ProbMap>,
) -> Result<DscReport> {
    let mut volumes = Vec::with_capacity(cases.len());
    for case in cases {
        let probs = predict(case)?;
        case.labels.dims().check_same(&probs.dims())?;
        if probs.classes() != classes {
            return Err(Error::SizeMismatch {
                expected: classes,
                actual: probs.classes(),
            });
        }
        volumes.push(VolumeDsc {
            name: case.name.clone(),
            subset: case.subset,
            per_class: dsc(&probs.argmax(), &case.labels, classes)?,
        });
    }
    aggregate(volumes)
}

/// Builds evaluation cases named `{prefix}000`, `{prefix}001`, ...
pub fn eval_cases(prefix: &str, data: impl IntoIterator<Item = (Volume, LabelMap, Option<Subset>)>) -> Vec<EvalCase> {
    data.into_iter()
        .enumerate()
        .map(|(i, (volume, labels, subset))| EvalCase {
            name: alloc::format!("{prefix}{i:03}"),
            volume,
            labels,
            subset,
        })
        .collect()
}
