//! The continual training loop.
//!
//! Each step computes, on the current batch, the self-supervised loss on the
//! slow embeddings of both views and the first alignment loss (MMD between
//! the fast head applied to the fast and slow final-block features). From
//! the second domain on, a replay minibatch drawn from memory is resumed
//! from the replay layer; it contributes the same alignment loss on memory
//! and a second MMD between the fused memory features and the fused current
//! features. Everything is summed into one objective, backpropagated once,
//! and applied by SGD. Finally the batch's replay-layer activations are
//! offered to the buffer.
//!
//! No function in this module accepts labels.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{make_views, AugmentationPolicy, DomainStream};
use crate::error::{Error, Result};
use crate::losses::{mmd, mmd_median, ssl_objective, SslLoss, VicReg, VicRegWeights};
use crate::networks::{sgd_update, BoundNet, DualNet};
use crate::replay::{stack_view_a, stack_view_b, BufferMode, LatentPair, ReplayBuffer};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs_per_domain: usize,
    /// Extra self-supervised-only epochs on the first domain, after which
    /// the blocks below the replay layer are frozen.
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Heavy-ball momentum; 0 gives plain SGD.
    pub momentum: f64,
    /// Rescales the gradient of all trainable parameters to at most this
    /// global L2 norm.
    pub grad_clip: Option<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub vicreg: VicRegWeights,
    pub buffer_capacity: usize,
    pub sample_size: usize,
    pub buffer_mode: BufferMode,
    /// Memory entries drawn per step; defaults to `batch_size`.
    pub replay_batch_size: Option<usize>,
    /// Also applies the self-supervised loss to the two stored views of
    /// each replayed memory. Off by default.
    pub ssl_on_memory: bool,
    pub augmentation: AugmentationPolicy,
    /// Set programmatically; not part of configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_per_domain: 40,
            pretrain_epochs: 20,
            batch_size: 32,
            learning_rate: 0.05,
            weight_decay: 1e-4,
            momentum: 0.0,
            grad_clip: Some(5.0),
            alpha1: 1.0,
            alpha2: 1.0,
            // The invariance term sums over embedding dimensions, so λ = 25
            // per dimension becomes 25/32 for the default 32-wide embedding.
            vicreg: VicRegWeights {
                lambda: 25.0 / 32.0,
                ..VicRegWeights::default()
            },
            buffer_capacity: 512,
            sample_size: 8,
            buffer_mode: BufferMode::Fill,
            replay_batch_size: None,
            ssl_on_memory: false,
            augmentation: AugmentationPolicy::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size < 2 {
            problems.push("batch_size must be at least 2".to_string());
        }
        if self.epochs_per_domain == 0 {
            problems.push("epochs_per_domain must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push("learning_rate must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            problems.push("weight_decay must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            problems.push("momentum must lie in [0, 1)".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                problems.push("grad_clip must be positive".into());
            }
        }
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            problems.push("alpha1 and alpha2 must be nonnegative".into());
        }
        if self.buffer_capacity == 0 {
            problems.push("buffer_capacity must be positive".into());
        }
        if self.sample_size == 0 {
            problems.push("sample_size must be positive".into());
        }
        if self.replay_batch_size == Some(0) {
            problems.push("replay_batch_size must be positive".into());
        }
        if let Err(e) = self.vicreg.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.augmentation.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Parameter(problems.join("; ")))
        }
    }

    pub fn replay_batch(&self) -> usize {
        self.replay_batch_size.unwrap_or(self.batch_size)
    }
}

/// What gets optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Self-supervised + both alignment losses with latent replay.
    Lleda,
    /// Self-supervised loss only, no memory; `freeze` keeps the
    /// post-pretraining freeze of the lower blocks.
    SslOnly { freeze: bool },
}

impl Method {
    /// Sequential fine-tuning baseline.
    pub const FINETUNE: Method = Method::SslOnly { freeze: false };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// 1-based.
    pub domain_index: usize,
    pub step: usize,
    pub l_ssl: f64,
    pub l_da1_data: f64,
    pub l_da1_mem: f64,
    pub l_da2: f64,
    /// Self-supervised loss on replayed memories; 0 unless enabled.
    pub l_ssl_mem: f64,
    pub total: f64,
    pub buffer_size: usize,
}

impl StepReport {
    pub fn is_finite(&self) -> bool {
        [
            self.l_ssl,
            self.l_da1_data,
            self.l_da1_mem,
            self.l_da2,
            self.l_ssl_mem,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Loss terms of one step as tape variables. Memory terms are `None` when
/// no memory was replayed, in which case they are absent from the graph.
pub struct StepLosses<'t, T: Scalar> {
    pub total: Var<'t, T>,
    pub l_ssl: Var<'t, T>,
    pub l_da1_data: Option<Var<'t, T>>,
    pub l_da1_mem: Option<Var<'t, T>>,
    pub l_da2: Option<Var<'t, T>>,
    pub l_ssl_mem: Option<Var<'t, T>>,
    /// Replay-layer activations of view a and view b (slow, fast).
    pub latents_a: (Var<'t, T>, Var<'t, T>),
    pub latents_b: (Var<'t, T>, Var<'t, T>),
}

/// Loss weights used by [`step_objective`].
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    /// Skip both alignment terms (self-supervised loss only).
    pub ssl_only: bool,
    /// Add the self-supervised loss on memory view pairs when available.
    pub ssl_on_memory: bool,
    pub bandwidths: Bandwidths,
}

/// Kernel bandwidths of the MMD terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidths {
    /// `{σ/2, σ, 2σ}` with σ the median pairwise distance of each pair of
    /// batches, recomputed for every term.
    Median,
    /// `{σ/2, σ, 2σ}` for a fixed σ.
    Fixed(f64),
}

impl Bandwidths {
    fn mmd<'t, T: Scalar>(self, source: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Bandwidths::Median => mmd_median(source, target),
            Bandwidths::Fixed(s) => mmd(
                source,
                target,
                &[T::lit(0.5 * s), T::lit(s), T::lit(2.0 * s)],
            ),
        }
    }
}

/// Replay minibatch latents on the tape: slow and fast view-a latents and,
/// optionally, the matching view-b latents.
#[derive(Clone, Copy)]
pub struct MemoryBatch<'t, T: Scalar> {
    pub s_a: Var<'t, T>,
    pub d_a: Var<'t, T>,
    pub view_b: Option<(Var<'t, T>, Var<'t, T>)>,
}

/// Builds the per-step objective on `bound`'s tape.
///
/// `memory` holds the stacked replay-layer latents of the replay minibatch.
pub fn step_objective<'t, T: Scalar>(
    bound: &BoundNet<'t, T>,
    view_a: Var<'t, T>,
    view_b: Var<'t, T>,
    memory: Option<MemoryBatch<'t, T>>,
    weights: ObjectiveWeights,
    ssl: &dyn SslLoss<T>,
) -> Result<StepLosses<'t, T>> {
    let fa = bound.forward_full(view_a)?;
    let fb = bound.forward_full(view_b)?;
    let l_ssl = ssl_objective(&[(fa.ssl_embedding, fb.ssl_embedding)], ssl)?;
    let mut losses = StepLosses {
        total: l_ssl,
        l_ssl,
        l_da1_data: None,
        l_da1_mem: None,
        l_da2: None,
        l_ssl_mem: None,
        latents_a: (fa.s_latent, fa.d_latent),
        latents_b: (fb.s_latent, fb.d_latent),
    };
    if weights.ssl_only {
        return Ok(losses);
    }
    let a1 = T::lit(weights.alpha1);
    let a2 = T::lit(weights.alpha2);

    let bw = weights.bandwidths;
    let da1 = bw.mmd(bound.project_fast(fa.d4)?, bound.project_fast(fa.s4)?)?;
    losses.l_da1_data = Some(da1);
    let mut total = l_ssl.add(da1.scale(a1))?;

    if let Some(mem) = memory {
        let fm = bound.forward_from_latent(mem.s_a, mem.d_a)?;
        let da1_mem = bw.mmd(bound.project_fast(fm.d4)?, bound.project_fast(fm.s4)?)?;
        let da2 = bw.mmd(fm.da_feature, fa.da_feature)?;
        total = total.add(da1_mem.scale(a1))?.add(da2.scale(a2))?;
        losses.l_da1_mem = Some(da1_mem);
        losses.l_da2 = Some(da2);
        if let (true, Some((s_b, d_b))) = (weights.ssl_on_memory, mem.view_b) {
            let fmb = bound.forward_from_latent(s_b, d_b)?;
            let l = ssl_objective(&[(fm.ssl_embedding, fmb.ssl_embedding)], ssl)?;
            total = total.add(l)?;
            losses.l_ssl_mem = Some(l);
        }
    }
    losses.total = total;
    Ok(losses)
}

/// `p ← p − lr·(g + weight_decay·p)` for every parameter not marked frozen.
pub fn sgd_step<T: Scalar>(
    params: &mut [(&mut Tensor<T>, bool)],
    grads: &[Tensor<T>],
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for ((p, frozen), g) in params.iter_mut().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::dim("sgd_step", p.shape(), g.shape()));
        }
        if !*frozen {
            sgd_update(p, g, lr, weight_decay);
        }
    }
    Ok(())
}

/// Per-step reports plus a snapshot of the network after each domain.
pub struct SequenceRun<T> {
    pub reports: Vec<StepReport>,
    pub checkpoints: Vec<DualNet<T>>,
}

type MemoryTensors<T> = ((Tensor<T>, Tensor<T>), Option<(Tensor<T>, Tensor<T>)>);

pub struct Trainer<T: Scalar> {
    cfg: TrainConfig,
    method: Method,
    ssl: Box<dyn SslLoss<T>>,
    rng: Rng,
    step: usize,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: TrainConfig, method: Method) -> Result<Self> {
        cfg.validate()?;
        let ssl = Box::new(VicReg::new(cfg.vicreg)?);
        let rng = Rng::new(cfg.seed ^ 0x7472_6169_6e00);
        Ok(Self {
            cfg,
            method,
            ssl,
            rng,
            step: 0,
            velocity: Vec::new(),
        })
    }

    /// Replaces the self-supervised criterion.
    pub fn with_ssl_loss(mut self, loss: Box<dyn SslLoss<T>>) -> Self {
        self.ssl = loss;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// A buffer configured from this trainer's settings.
    pub fn new_buffer(&self) -> Result<ReplayBuffer<T>> {
        ReplayBuffer::new(
            self.cfg.buffer_capacity,
            self.cfg.buffer_mode,
            Rng::new(self.cfg.seed ^ 0x6d65_6d6f_7279),
        )
    }

    fn weights(&self, ssl_only: bool) -> ObjectiveWeights {
        ObjectiveWeights {
            alpha1: self.cfg.alpha1,
            alpha2: self.cfg.alpha2,
            ssl_only: ssl_only || matches!(self.method, Method::SslOnly { .. }),
            ssl_on_memory: self.cfg.ssl_on_memory,
            bandwidths: Bandwidths::Median,
        }
    }

    /// Self-supervised-only update without memory (the pretraining stage).
    pub fn pretrain_step(
        &mut self,
        net: &mut DualNet<T>,
        view_a: &Tensor<T>,
        view_b: &Tensor<T>,
        buffer_size: usize,
    ) -> Result<StepReport> {
        self.update(net, None, view_a, view_b, 1, true, buffer_size)
            .map(|(r, _)| r)
    }

    /// One continual-learning step on the current domain's batch.
    pub fn train_step(
        &mut self,
        net: &mut DualNet<T>,
        buf: &mut ReplayBuffer<T>,
        view_a: &Tensor<T>,
        view_b: &Tensor<T>,
        domain_index: usize,
    ) -> Result<StepReport> {
        if domain_index < 1 {
            return Err(Error::Parameter("domain_index is 1-based".into()));
        }
        let lleda = matches!(self.method, Method::Lleda);
        let memory = if lleda && domain_index > 1 && !buf.is_empty() {
            let picks = buf.sample(self.cfg.replay_batch())?;
            let a = stack_view_a(&picks)?;
            let b = if self.cfg.ssl_on_memory {
                Some(stack_view_b(&picks)?)
            } else {
                None
            };
            Some((a, b))
        } else {
            None
        };
        let (mut report, latents) =
            self.update(net, memory, view_a, view_b, domain_index, false, buf.len())?;
        if lleda {
            let [s_a, d_a, s_b, d_b] = latents;
            let pairs = LatentPair::from_batch(&s_a, &s_b, &d_a, &d_b, domain_index as u32)?;
            buf.add_batch(pairs, self.cfg.sample_size)?;
            report.buffer_size = buf.len();
        }
        Ok(report)
    }

    #[allow(clippy::too_many_arguments)]
    fn update(
        &mut self,
        net: &mut DualNet<T>,
        memory: Option<MemoryTensors<T>>,
        view_a: &Tensor<T>,
        view_b: &Tensor<T>,
        domain_index: usize,
        ssl_only: bool,
        buffer_size: usize,
    ) -> Result<(StepReport, [Tensor<T>; 4])> {
        self.step += 1;
        let tape = Tape::new();
        let bound = net.bind(&tape);
        let a = tape.constant(view_a.clone());
        let b = tape.constant(view_b.clone());
        let mem = memory.map(|((s, d), b)| MemoryBatch {
            s_a: tape.constant(s),
            d_a: tape.constant(d),
            view_b: b.map(|(s, d)| (tape.constant(s), tape.constant(d))),
        });
        let losses = step_objective(&bound, a, b, mem, self.weights(ssl_only), &*self.ssl)?;

        let val = |v: Option<Var<'_, T>>| -> Result<f64> {
            v.map_or(Ok(0.0), |v| v.item().map(|x| x.as_f64()))
        };
        let report = StepReport {
            domain_index,
            step: self.step,
            l_ssl: losses.l_ssl.item()?.as_f64(),
            l_da1_data: val(losses.l_da1_data)?,
            l_da1_mem: val(losses.l_da1_mem)?,
            l_da2: val(losses.l_da2)?,
            l_ssl_mem: val(losses.l_ssl_mem)?,
            total: losses.total.item()?.as_f64(),
            buffer_size,
        };
        if !report.is_finite() {
            return Err(Error::Divergence(Box::new(report)));
        }
        let grads = tape.backward(losses.total)?;
        let grads: Vec<Tensor<T>> = bound.vars().iter().map(|&v| grads.wrt(v)).collect();
        let latents = [
            (*losses.latents_a.0.value()).clone(),
            (*losses.latents_a.1.value()).clone(),
            (*losses.latents_b.0.value()).clone(),
            (*losses.latents_b.1.value()).clone(),
        ];
        self.apply(net, grads)?;
        Ok((report, latents))
    }

    fn apply(&mut self, net: &mut DualNet<T>, mut grads: Vec<Tensor<T>>) -> Result<()> {
        let mut params: Vec<(&mut Tensor<T>, bool)> = net
            .params_mut()
            .into_iter()
            .map(|(info, p)| (p, info.frozen))
            .collect();
        if let Some(limit) = self.cfg.grad_clip {
            let norm = params
                .iter()
                .zip(&grads)
                .filter(|((_, frozen), _)| !frozen)
                .flat_map(|(_, g)| g.data())
                .map(|v| v.as_f64() * v.as_f64())
                .sum::<f64>()
                .sqrt();
            if norm > limit {
                let k = T::lit(limit / norm);
                for g in grads.iter_mut() {
                    *g = g.map(|v| v * k);
                }
            }
        }
        let (lr, wd, m) = (
            self.cfg.learning_rate,
            self.cfg.weight_decay,
            self.cfg.momentum,
        );
        if m == 0.0 {
            return sgd_step(&mut params, &grads, lr, wd);
        }
        if self.velocity.len() != grads.len() {
            self.velocity = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        }
        let (m, wd) = (T::lit(m), T::lit(wd));
        for (((p, frozen), g), v) in params.iter_mut().zip(&grads).zip(&mut self.velocity) {
            if *frozen {
                continue;
            }
            for ((vv, gg), pp) in v.data_mut().iter_mut().zip(g.data()).zip(p.data()) {
                *vv = m * *vv + *gg + wd * *pp;
            }
            sgd_update(p, v, lr, 0.0);
        }
        Ok(())
    }

    fn views(&mut self, batch: &Tensor<f32>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (a, b) = make_views(batch, &self.cfg.augmentation, &mut self.rng)?;
        Ok((a.cast(), b.cast()))
    }

    /// Runs the whole domain sequence: self-supervised pretraining on the
    /// first domain, the freeze (unless the method opts out), then
    /// `epochs_per_domain` epochs of [`Trainer::train_step`] per domain.
    pub fn train_sequence(
        &mut self,
        net: &mut DualNet<T>,
        buf: &mut ReplayBuffer<T>,
        stream: &mut DomainStream,
        on_step: &mut dyn FnMut(&StepReport) -> Result<()>,
    ) -> Result<SequenceRun<T>> {
        let mut run = SequenceRun {
            reports: Vec::new(),
            checkpoints: Vec::new(),
        };
        let freeze = match self.method {
            Method::Lleda => true,
            Method::SslOnly { freeze } => freeze,
        };
        while let Some(idx) = stream.advance() {
            let domain_index = idx + 1;
            if domain_index == 1 {
                for _ in 0..self.cfg.pretrain_epochs {
                    for batch in stream
                        .current()?
                        .batches(self.cfg.batch_size, &mut self.rng)?
                    {
                        let (a, b) = self.views(&batch)?;
                        let r = self.pretrain_step(net, &a, &b, buf.len())?;
                        on_step(&r)?;
                        run.reports.push(r);
                    }
                }
                if freeze {
                    net.freeze_below_replay();
                }
            }
            for _ in 0..self.cfg.epochs_per_domain {
                for batch in stream
                    .current()?
                    .batches(self.cfg.batch_size, &mut self.rng)?
                {
                    let (a, b) = self.views(&batch)?;
                    let r = self.train_step(net, buf, &a, &b, domain_index)?;
                    on_step(&r)?;
                    run.reports.push(r);
                }
            }
            run.checkpoints.push(net.clone());
        }
        Ok(run)
    }
}
