//! The dual encoder: a slow self-supervised stack and a fast
//! domain-adaptation stack with identical block layout, a replay split
//! point, and one projector head each.
//!
//! Parameters live in [`DualNet`] as plain tensors. For every step they are
//! registered on a fresh [`Tape`] through [`DualNet::bind`], which yields a
//! [`BoundNet`] whose forward passes build the graph. Frozen parameters are
//! registered as constants, so no gradient ever reaches them.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::codec::{decode_tensor, encode_tensor, Reader};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub input_dim: usize,
    /// Output width of each block, bottom to top.
    pub widths: Vec<usize>,
    /// 1-based index of the block whose output is stored for replay.
    pub replay_index: usize,
    pub projector_hidden: usize,
    pub projector_out: usize,
    /// Also freeze the slow stack below the replay layer.
    pub freeze_slow: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_dim: 256,
            widths: vec![128, 64, 64, 64],
            replay_index: 1,
            projector_hidden: 64,
            projector_out: 32,
            freeze_slow: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.widths.contains(&0) {
            return Err(Error::Parameter("layer widths must be positive".into()));
        }
        if self.widths.len() < 2 {
            return Err(Error::Parameter("need at least two blocks".into()));
        }
        if self.replay_index < 1 || self.replay_index >= self.widths.len() {
            return Err(Error::Parameter(format!(
                "replay_index {} must lie in 1..{}",
                self.replay_index,
                self.widths.len()
            )));
        }
        if self.projector_hidden == 0 || self.projector_out == 0 {
            return Err(Error::Parameter("projector widths must be positive".into()));
        }
        Ok(())
    }

    pub fn latent_width(&self) -> usize {
        self.widths[self.replay_index - 1]
    }

    pub fn feature_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `[in × out]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform fan-in scaled weights (He bound `√(6/fan_in)`), zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        Self {
            weight: rng.uniform_tensor(&[fan_in, fan_out], -bound, bound),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlockStack<T> {
    /// Affine + ReLU blocks, bottom to top.
    pub blocks: Vec<Linear<T>>,
    pub replay_index: usize,
    pub frozen_below_replay: bool,
}

impl<T: Scalar> EncoderBlockStack<T> {
    fn init(cfg: &NetConfig, rng: &mut Rng) -> Self {
        let mut fan_in = cfg.input_dim;
        let blocks = cfg
            .widths
            .iter()
            .map(|&w| {
                let l = Linear::init(fan_in, w, rng);
                fan_in = w;
                l
            })
            .collect();
        Self {
            blocks,
            replay_index: cfg.replay_index,
            frozen_below_replay: false,
        }
    }

    /// Whether block `index` (1-based) is excluded from updates.
    pub fn is_frozen(&self, index: usize) -> bool {
        self.frozen_below_replay && index <= self.replay_index
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projector<T> {
    pub hidden: Linear<T>,
    pub out: Linear<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Slow,
    Fast,
    SlowProjector,
    FastProjector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Manifest entry describing one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub role: Role,
    /// 1-based block (or projector layer) index.
    pub block: usize,
    pub kind: ParamKind,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualNet<T> {
    pub slow: EncoderBlockStack<T>,
    pub fast: EncoderBlockStack<T>,
    pub slow_projector: Projector<T>,
    pub fast_projector: Projector<T>,
    config: NetConfig,
}

impl<T: Scalar> DualNet<T> {
    pub fn new(config: NetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let feat = config.feature_width();
        let proj = |rng: &mut Rng| Projector {
            hidden: Linear::init(feat, config.projector_hidden, rng),
            out: Linear::init(config.projector_hidden, config.projector_out, rng),
        };
        let slow_projector = proj(rng);
        let fast_projector = proj(rng);
        Ok(Self {
            slow: EncoderBlockStack::init(&config, rng),
            fast: EncoderBlockStack::init(&config, rng),
            slow_projector,
            fast_projector,
            config,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Marks blocks `1..=replay_index` of the fast stack (and of the slow
    /// stack unless `freeze_slow` is off) as frozen.
    pub fn freeze_below_replay(&mut self) {
        self.fast.frozen_below_replay = true;
        if self.config.freeze_slow {
            self.slow.frozen_below_replay = true;
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.fast.frozen_below_replay
    }

    /// Every parameter in canonical order with its manifest entry.
    pub fn params(&self) -> Vec<(ParamInfo, &Tensor<T>)> {
        let mut out = Vec::new();
        for (role, stack) in [(Role::Slow, &self.slow), (Role::Fast, &self.fast)] {
            for (i, l) in stack.blocks.iter().enumerate() {
                let frozen = stack.is_frozen(i + 1);
                push_linear(&mut out, role, i + 1, frozen, l);
            }
        }
        for (role, p) in [
            (Role::SlowProjector, &self.slow_projector),
            (Role::FastProjector, &self.fast_projector),
        ] {
            push_linear(&mut out, role, 1, false, &p.hidden);
            push_linear(&mut out, role, 2, false, &p.out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(ParamInfo, &mut Tensor<T>)> {
        let mut out = Vec::new();
        let slow_frozen: Vec<bool> = (1..=self.slow.blocks.len())
            .map(|i| self.slow.is_frozen(i))
            .collect();
        let fast_frozen: Vec<bool> = (1..=self.fast.blocks.len())
            .map(|i| self.fast.is_frozen(i))
            .collect();
        for (role, stack, frozen) in [
            (Role::Slow, &mut self.slow, slow_frozen),
            (Role::Fast, &mut self.fast, fast_frozen),
        ] {
            for (i, l) in stack.blocks.iter_mut().enumerate() {
                push_linear_mut(&mut out, role, i + 1, frozen[i], l);
            }
        }
        for (role, p) in [
            (Role::SlowProjector, &mut self.slow_projector),
            (Role::FastProjector, &mut self.fast_projector),
        ] {
            push_linear_mut(&mut out, role, 1, false, &mut p.hidden);
            push_linear_mut(&mut out, role, 2, false, &mut p.out);
        }
        out
    }

    /// Checksum over the parameters matching `select`.
    pub fn checksum_where(&self, select: impl Fn(&ParamInfo) -> bool) -> u64 {
        self.params()
            .into_iter()
            .filter(|(info, _)| select(info))
            .fold(0u64, |h, (_, t)| h.rotate_left(7) ^ t.checksum())
    }

    pub fn checksum(&self) -> u64 {
        self.checksum_where(|_| true)
    }

    /// Registers every parameter on `tape`; frozen ones as constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundNet<'t, T> {
        let vars = self
            .params()
            .into_iter()
            .map(|(info, t)| tape.leaf(t.clone(), !info.frozen))
            .collect::<Vec<_>>();
        self.assemble(vars)
    }

    /// Registers every parameter as a constant (inference only).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> BoundNet<'t, T> {
        let vars = self
            .params()
            .into_iter()
            .map(|(_, t)| tape.constant(t.clone()))
            .collect::<Vec<_>>();
        self.assemble(vars)
    }

    /// Builds a [`BoundNet`] from caller-owned variables in canonical order.
    pub fn bind_vars<'t>(&self, vars: &[Var<'t, T>]) -> Result<BoundNet<'t, T>> {
        let params = self.params();
        if vars.len() != params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter variables, got {}",
                params.len(),
                vars.len()
            )));
        }
        for ((_, t), v) in params.iter().zip(vars) {
            if t.shape() != v.shape().as_slice() {
                return Err(Error::dim("bind_vars", t.shape(), &v.shape()));
            }
        }
        Ok(self.assemble(vars.to_vec()))
    }

    fn assemble<'t>(&self, vars: Vec<Var<'t, T>>) -> BoundNet<'t, T> {
        let b = self.slow.blocks.len();
        let mut it = vars
            .chunks_exact(2)
            .map(|c| BoundLinear { w: c[0], b: c[1] });
        let slow = it.by_ref().take(b).collect();
        let fast = it.by_ref().take(b).collect();
        let slow_projector = [it.next().unwrap(), it.next().unwrap()];
        let fast_projector = [it.next().unwrap(), it.next().unwrap()];
        BoundNet {
            slow,
            fast,
            slow_projector,
            fast_projector,
            replay_index: self.config.replay_index,
            input_dim: self.config.input_dim,
            vars,
        }
    }

    /// One SGD step with L2 weight decay on every unfrozen parameter.
    pub fn apply_gradients(
        &mut self,
        bound: &BoundNet<'_, T>,
        grads: &Gradients<T>,
        lr: f64,
        weight_decay: f64,
    ) {
        let updates: Vec<Option<Tensor<T>>> =
            bound.vars.iter().map(|&v| grads.get(v).cloned()).collect();
        for ((info, p), g) in self.params_mut().into_iter().zip(updates) {
            if info.frozen {
                continue;
            }
            let g = g.unwrap_or_else(|| Tensor::zeros(p.shape()));
            sgd_update(p, &g, lr, weight_decay);
        }
    }

    /// Forward pass from raw inputs with all parameters treated as constants.
    pub fn infer(&self, x: &Tensor<T>) -> Result<ForwardValues<T>> {
        let tape = Tape::new();
        let bound = self.bind_frozen(&tape);
        let out = bound.forward_full(tape.constant(x.clone()))?;
        Ok(out.values())
    }

    /// Final-block outputs of both stacks, no projectors.
    pub fn encode(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let tape = Tape::new();
        let bound = self.bind_frozen(&tape);
        let x = tape.constant(x.clone());
        let s = bound.run_stack(&bound.slow, x, 0)?;
        let d = bound.run_stack(&bound.fast, x, 0)?;
        Ok(((*s.value()).clone(), (*d.value()).clone()))
    }

    pub fn save_checkpoint(&self) -> Vec<u8> {
        let manifest = CheckpointManifest {
            config: self.config.clone(),
            params: self.params().into_iter().map(|(i, _)| i).collect(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params() {
            encode_tensor(t, &mut out);
        }
        out
    }

    pub fn load_checkpoint(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let at = r.position();
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(at, format!("unsupported version {version}")));
        }
        let len = r.u32("manifest length")? as usize;
        let at = r.position();
        let manifest: CheckpointManifest = serde_json::from_slice(r.take(len, "manifest")?)
            .map_err(|e| Error::format(at, format!("bad manifest: {e}")))?;
        manifest
            .config
            .validate()
            .map_err(|e| Error::format(at, e.to_string()))?;
        let mut net = DualNet::new(manifest.config.clone(), &mut Rng::new(0))?;
        if manifest.params.iter().any(|p| p.frozen) {
            net.freeze_below_replay();
        }
        let expected: Vec<ParamInfo> = net.params().into_iter().map(|(i, _)| i).collect();
        if expected != manifest.params {
            return Err(Error::format(
                at,
                "manifest does not match the network layout",
            ));
        }
        for (_, p) in net.params_mut() {
            let at = r.position();
            let t = decode_tensor::<T>(&mut r)?;
            if t.shape() != p.shape() {
                return Err(Error::format(
                    at,
                    format!("parameter shape {:?}, expected {:?}", t.shape(), p.shape()),
                ));
            }
            *p = t;
        }
        if !r.is_empty() {
            return Err(Error::format(
                r.position(),
                "trailing bytes after checkpoint",
            ));
        }
        Ok(net)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LLCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    config: NetConfig,
    params: Vec<ParamInfo>,
}

fn push_linear<'a, T>(
    out: &mut Vec<(ParamInfo, &'a Tensor<T>)>,
    role: Role,
    block: usize,
    frozen: bool,
    l: &'a Linear<T>,
) {
    for (kind, t) in [(ParamKind::Weight, &l.weight), (ParamKind::Bias, &l.bias)] {
        out.push((
            ParamInfo {
                role,
                block,
                kind,
                frozen,
            },
            t,
        ));
    }
}

fn push_linear_mut<'a, T>(
    out: &mut Vec<(ParamInfo, &'a mut Tensor<T>)>,
    role: Role,
    block: usize,
    frozen: bool,
    l: &'a mut Linear<T>,
) {
    let Linear { weight, bias } = l;
    for (kind, t) in [(ParamKind::Weight, weight), (ParamKind::Bias, bias)] {
        out.push((
            ParamInfo {
                role,
                block,
                kind,
                frozen,
            },
            t,
        ));
    }
}

/// `p ← p − lr·(g + weight_decay·p)`.
pub fn sgd_update<T: Scalar>(p: &mut Tensor<T>, g: &Tensor<T>, lr: f64, weight_decay: f64) {
    debug_assert_eq!(p.shape(), g.shape());
    let lr = T::lit(lr);
    let wd = T::lit(weight_decay);
    for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
        *pv = *pv - lr * (gv + wd * *pv);
    }
}

#[derive(Clone, Copy)]
pub struct BoundLinear<'t, T: Scalar> {
    pub w: Var<'t, T>,
    pub b: Var<'t, T>,
}

impl<'t, T: Scalar> BoundLinear<'t, T> {
    pub fn forward(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(self.w)?.add_row(self.b)
    }
}

/// A [`DualNet`] whose parameters are registered on a tape.
pub struct BoundNet<'t, T: Scalar> {
    pub slow: Vec<BoundLinear<'t, T>>,
    pub fast: Vec<BoundLinear<'t, T>>,
    pub slow_projector: [BoundLinear<'t, T>; 2],
    pub fast_projector: [BoundLinear<'t, T>; 2],
    replay_index: usize,
    input_dim: usize,
    vars: Vec<Var<'t, T>>,
}

/// Everything one forward pass produces, as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutputs<'t, T: Scalar> {
    pub s_latent: Var<'t, T>,
    pub d_latent: Var<'t, T>,
    pub s4: Var<'t, T>,
    pub d4: Var<'t, T>,
    /// `d4 ⊗ s4`
    pub d4_fused: Var<'t, T>,
    pub ssl_embedding: Var<'t, T>,
    /// Fast head applied to `d4_fused`.
    pub da_feature: Var<'t, T>,
}

/// [`ForwardOutputs`] detached from the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardValues<T> {
    pub s_latent: Tensor<T>,
    pub d_latent: Tensor<T>,
    pub s4: Tensor<T>,
    pub d4: Tensor<T>,
    pub d4_fused: Tensor<T>,
    pub ssl_embedding: Tensor<T>,
    pub da_feature: Tensor<T>,
}

impl<'t, T: Scalar> ForwardOutputs<'t, T> {
    pub fn values(&self) -> ForwardValues<T> {
        let v = |x: Var<'t, T>| (*x.value()).clone();
        ForwardValues {
            s_latent: v(self.s_latent),
            d_latent: v(self.d_latent),
            s4: v(self.s4),
            d4: v(self.d4),
            d4_fused: v(self.d4_fused),
            ssl_embedding: v(self.ssl_embedding),
            da_feature: v(self.da_feature),
        }
    }
}

impl<'t, T: Scalar> BoundNet<'t, T> {
    /// Parameter variables in canonical order.
    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    /// Runs blocks `from+1 ..= to` (1-based, inclusive upper bound).
    fn run_blocks(
        &self,
        blocks: &[BoundLinear<'t, T>],
        mut x: Var<'t, T>,
        from: usize,
        to: usize,
    ) -> Result<Var<'t, T>> {
        for block in &blocks[from..to] {
            x = block.forward(x)?.relu();
        }
        Ok(x)
    }

    /// Runs a stack from block `from+1` to the top.
    pub fn run_stack(
        &self,
        blocks: &[BoundLinear<'t, T>],
        x: Var<'t, T>,
        from: usize,
    ) -> Result<Var<'t, T>> {
        self.run_blocks(blocks, x, from, blocks.len())
    }

    pub fn project(head: &[BoundLinear<'t, T>; 2], x: Var<'t, T>) -> Result<Var<'t, T>> {
        head[1].forward(head[0].forward(x)?.relu())
    }

    pub fn project_slow(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Self::project(&self.slow_projector, x)
    }

    pub fn project_fast(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Self::project(&self.fast_projector, x)
    }

    fn check_width(&self, op: &'static str, x: Var<'t, T>, width: usize) -> Result<()> {
        let s = x.shape();
        if s.len() != 2 || s[1] != width {
            return Err(Error::dim(
                op,
                &s,
                &[s.first().copied().unwrap_or(0), width],
            ));
        }
        Ok(())
    }

    pub fn forward_full(&self, x: Var<'t, T>) -> Result<ForwardOutputs<'t, T>> {
        self.check_width("forward_full", x, self.input_dim)?;
        let r = self.replay_index;
        let s_latent = self.run_blocks(&self.slow, x, 0, r)?;
        let d_latent = self.run_blocks(&self.fast, x, 0, r)?;
        self.forward_upper(s_latent, d_latent)
    }

    /// Resumes both stacks above the replay layer from stored activations.
    pub fn forward_from_latent(
        &self,
        s_latent: Var<'t, T>,
        d_latent: Var<'t, T>,
    ) -> Result<ForwardOutputs<'t, T>> {
        let width = self.slow[self.replay_index - 1].w.shape()[1];
        self.check_width("forward_from_latent", s_latent, width)?;
        self.check_width("forward_from_latent", d_latent, width)?;
        if s_latent.shape() != d_latent.shape() {
            return Err(Error::dim(
                "forward_from_latent",
                &s_latent.shape(),
                &d_latent.shape(),
            ));
        }
        self.forward_upper(s_latent, d_latent)
    }

    fn forward_upper(
        &self,
        s_latent: Var<'t, T>,
        d_latent: Var<'t, T>,
    ) -> Result<ForwardOutputs<'t, T>> {
        let r = self.replay_index;
        let s4 = self.run_stack(&self.slow, s_latent, r)?;
        let d4 = self.run_stack(&self.fast, d_latent, r)?;
        let d4_fused = d4.mul(s4)?;
        Ok(ForwardOutputs {
            s_latent,
            d_latent,
            s4,
            d4,
            d4_fused,
            ssl_embedding: self.project_slow(s4)?,
            da_feature: self.project_fast(d4_fused)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> NetConfig {
        NetConfig {
            input_dim: 6,
            widths: vec![5, 4, 4, 3],
            replay_index: 1,
            projector_hidden: 4,
            projector_out: 2,
            freeze_slow: true,
        }
    }

    #[test]
    fn config_validation() {
        assert!(NetConfig::default().validate().is_ok());
        let mut c = small_cfg();
        c.replay_index = 4;
        assert!(c.validate().is_err());
        c.replay_index = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn shapes_have_batch_leading_extent() {
        let cfg = NetConfig {
            input_dim: 20,
            widths: vec![32, 32, 32, 32],
            ..NetConfig::default()
        };
        let net = DualNet::<f32>::new(cfg, &mut Rng::new(3)).unwrap();
        let x = Rng::new(4).normal_tensor(&[16, 20], 1.0);
        let out = net.infer(&x).unwrap();
        for t in [
            &out.s_latent,
            &out.d_latent,
            &out.s4,
            &out.d4,
            &out.d4_fused,
            &out.ssl_embedding,
            &out.da_feature,
        ] {
            assert_eq!(t.shape()[0], 16);
        }
        assert_eq!(out.d4_fused.shape(), out.s4.shape());
        assert_eq!(out.d4.shape(), out.s4.shape());
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let net = DualNet::<f64>::new(small_cfg(), &mut Rng::new(1)).unwrap();
        assert!(matches!(
            net.infer(&Tensor::zeros(&[2, 7])),
            Err(Error::Dimension { .. })
        ));
        let tape = Tape::new();
        let b = net.bind(&tape);
        let bad = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(b.forward_from_latent(bad, bad).is_err());
    }

    #[test]
    fn unit_fast_output_makes_fuse_an_identity() {
        let mut net = DualNet::<f64>::new(small_cfg(), &mut Rng::new(9)).unwrap();
        let top = net.fast.blocks.last_mut().unwrap();
        top.weight = Tensor::zeros(top.weight.shape());
        top.bias = Tensor::ones(top.bias.shape());
        let x = Rng::new(2).normal_tensor(&[5, 6], 1.0);
        let out = net.infer(&x).unwrap();
        assert_eq!(out.d4, Tensor::ones(&[5, 3]));
        assert_eq!(out.d4_fused, out.s4);
    }

    #[test]
    fn freezing_marks_lower_blocks_only() {
        let mut net = DualNet::<f32>::new(small_cfg(), &mut Rng::new(1)).unwrap();
        assert!(net.params().iter().all(|(i, _)| !i.frozen));
        net.freeze_below_replay();
        for (info, _) in net.params() {
            let lower = matches!(info.role, Role::Slow | Role::Fast) && info.block == 1;
            assert_eq!(info.frozen, lower, "{info:?}");
        }
        let mut cfg = small_cfg();
        cfg.freeze_slow = false;
        let mut net = DualNet::<f32>::new(cfg, &mut Rng::new(1)).unwrap();
        net.freeze_below_replay();
        assert!(!net.slow.is_frozen(1));
        assert!(net.fast.is_frozen(1));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut net = DualNet::<f64>::new(small_cfg(), &mut Rng::new(5)).unwrap();
        net.freeze_below_replay();
        let tape = Tape::new();
        let bound = net.bind(&tape);
        let x = tape.constant(Rng::new(6).normal_tensor(&[4, 6], 1.0));
        let out = bound.forward_full(x).unwrap();
        let loss = out
            .da_feature
            .square()
            .sum()
            .add(out.ssl_embedding.square().sum())
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        for ((info, _), &v) in net.params().iter().zip(bound.vars()) {
            if info.frozen {
                assert!(grads.get(v).is_none());
                assert!(grads.wrt(v).data().iter().all(|&g| g == 0.0));
            }
        }
    }

    #[test]
    fn sgd_update_examples() {
        let mut p = Tensor::<f64>::scalar(1.0);
        sgd_update(&mut p, &Tensor::scalar(1.0), 0.1, 0.0);
        assert!((p.item().unwrap() - 0.9).abs() < 1e-15);
        let mut p = Tensor::<f64>::scalar(1.0);
        sgd_update(&mut p, &Tensor::scalar(0.0), 0.1, 0.1);
        assert!((p.item().unwrap() - 0.99).abs() < 1e-15);
        let mut p = Tensor::<f64>::scalar(1.0);
        sgd_update(&mut p, &Tensor::scalar(5.0), 0.0, 0.1);
        assert_eq!(p.item().unwrap(), 1.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut net = DualNet::<f32>::new(small_cfg(), &mut Rng::new(11)).unwrap();
        net.freeze_below_replay();
        let bytes = net.save_checkpoint();
        let back = DualNet::<f32>::load_checkpoint(&bytes).unwrap();
        assert_eq!(back, net);
        assert!(DualNet::<f32>::load_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
