//! Linear-probe evaluation of frozen representations, sequence metrics and
//! the sequential fine-tuning baseline.

use serde::{Deserialize, Serialize};

use crate::data::{DomainSource, DomainStream, EvalAccess};
use crate::error::{Error, Result};
use crate::networks::DualNet;
use crate::replay::ReplayBuffer;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};
use crate::trainer::{Method, StepReport, TrainConfig, Trainer};

/// Which final-block features the probe sees. Projector heads are never
/// part of the representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    #[default]
    Slow,
    Fast,
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeOptions {
    pub representation: Representation,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Share of each evaluation set used to fit the probe.
    pub train_fraction: f64,
    /// Set programmatically; not part of configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            representation: Representation::Slow,
            iterations: 500,
            learning_rate: 0.1,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl ProbeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Parameter("train_fraction must lie in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) || self.iterations == 0 {
            return Err(Error::Parameter(
                "probe learning_rate and iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// 1-based domain the probe was fitted and tested on.
    pub domain_index: usize,
    /// 1-based checkpoint the representation came from.
    pub after_domain: usize,
    pub accuracy: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    /// `accuracy[t][d]`: checkpoint after domain `t+1` probed on domain
    /// `d+1`, for `d ≤ t`.
    pub accuracy: Vec<Vec<f64>>,
    pub average: f64,
    pub forgetting: Vec<f64>,
}

impl SequenceMetrics {
    pub fn from_matrix(accuracy: Vec<Vec<f64>>) -> Result<Self> {
        let t = accuracy.len();
        if t == 0 {
            return Err(Error::Contract("empty accuracy matrix".into()));
        }
        for (i, row) in accuracy.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::Contract(format!(
                    "row {} has {} cells, expected {}",
                    i + 1,
                    row.len(),
                    i + 1
                )));
            }
        }
        let last = &accuracy[t - 1];
        let average = last.iter().sum::<f64>() / t as f64;
        let forgetting = (0..t)
            .map(|d| {
                let peak = accuracy[d..]
                    .iter()
                    .map(|row| row[d])
                    .fold(f64::NEG_INFINITY, f64::max);
                peak - last[d]
            })
            .collect();
        Ok(Self {
            accuracy,
            average,
            forgetting,
        })
    }

    pub fn num_domains(&self) -> usize {
        self.accuracy.len()
    }

    /// Square CSV with one row per checkpoint; undefined cells are empty.
    pub fn to_csv(&self) -> String {
        let t = self.accuracy.len();
        let mut out = String::from("after_domain");
        for d in 1..=t {
            out.push_str(&format!(",domain_{d}"));
        }
        out.push('\n');
        for (i, row) in self.accuracy.iter().enumerate() {
            out.push_str(&(i + 1).to_string());
            for d in 0..t {
                out.push(',');
                if let Some(a) = row.get(d) {
                    out.push_str(&format!("{a:.6}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Balanced train/test index split: each class contributes
/// `round(train_fraction · count)` items to the training side.
pub fn stratified_split(
    labels: &[usize],
    train_fraction: f64,
    rng: &mut Rng,
) -> (Vec<usize>, Vec<usize>) {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut idx in by_class {
        rng.shuffle(&mut idx);
        let k = ((idx.len() as f64) * train_fraction).round() as usize;
        let k = k.min(idx.len());
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn standardize(train: &Tensor<f64>, x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (n, d) = train.dims2("probe")?;
    let (m, dx) = x.dims2("probe")?;
    if d != dx {
        return Err(Error::dim("probe", train.shape(), x.shape()));
    }
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for i in 0..n {
        for (j, v) in train.row(i).iter().enumerate() {
            mean[j] += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    for i in 0..n {
        for (j, v) in train.row(i).iter().enumerate() {
            sq[j] += (v - mean[j]).powi(2);
        }
    }
    let std: Vec<f64> = sq.iter().map(|s| (s / n as f64).sqrt().max(1e-8)).collect();
    let mut out = Vec::with_capacity(m * d);
    for i in 0..m {
        out.extend(
            x.row(i)
                .iter()
                .enumerate()
                .map(|(j, v)| (v - mean[j]) / std[j]),
        );
    }
    Tensor::new(vec![m, d], out)
}

/// Row-wise softmax in place.
fn softmax_rows(logits: &mut Tensor<f64>) {
    let c = logits.shape()[1];
    for row in logits.data_mut().chunks_exact_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Fits a multinomial logistic regression on standardized `train_reps` by
/// full-batch gradient descent and reports its accuracy on `test_reps`.
pub fn linear_probe(
    train_reps: &Tensor<f64>,
    train_labels: &[usize],
    test_reps: &Tensor<f64>,
    test_labels: &[usize],
    opts: &ProbeOptions,
) -> Result<ProbeResult> {
    let (n, d) = train_reps.dims2("linear_probe")?;
    let (m, _) = test_reps.dims2("linear_probe")?;
    if train_labels.len() != n {
        return Err(Error::dim("linear_probe", &[n], &[train_labels.len()]));
    }
    if test_labels.len() != m {
        return Err(Error::dim("linear_probe", &[m], &[test_labels.len()]));
    }
    let first = train_labels.first().copied();
    if first.is_none() || train_labels.iter().all(|&l| Some(l) == first) {
        return Err(Error::DegenerateLabels(format!(
            "{n} training labels contain fewer than two classes"
        )));
    }
    let classes = train_labels
        .iter()
        .chain(test_labels)
        .copied()
        .max()
        .unwrap_or(0)
        + 1;
    let x = standardize(train_reps, train_reps)?;
    let xt = standardize(train_reps, test_reps)?;

    let mut w = Tensor::<f64>::zeros(&[d, classes]);
    let mut b = vec![0.0; classes];
    let lr = opts.learning_rate;
    for _ in 0..opts.iterations {
        let mut p = x.matmul(&w)?;
        for row in p.data_mut().chunks_exact_mut(classes) {
            row.iter_mut().zip(&b).for_each(|(v, bb)| *v += bb);
        }
        softmax_rows(&mut p);
        // p ← (softmax − onehot) / n
        for (row, &y) in p.data_mut().chunks_exact_mut(classes).zip(train_labels) {
            row[y] -= 1.0;
            row.iter_mut().for_each(|v| *v /= n as f64);
        }
        let gw = x.matmul_tn(&p)?;
        for (wv, g) in w.data_mut().iter_mut().zip(gw.data()) {
            *wv -= lr * g;
        }
        for row in p.data().chunks_exact(classes) {
            for (bb, g) in b.iter_mut().zip(row) {
                *bb -= lr * g;
            }
        }
    }

    let logits = xt.matmul(&w)?;
    let correct = logits
        .data()
        .chunks_exact(classes)
        .zip(test_labels)
        .filter(|(row, &y)| {
            let pred = row
                .iter()
                .zip(&b)
                .map(|(v, bb)| v + bb)
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, v)| {
                    if v > best.1 {
                        (k, v)
                    } else {
                        best
                    }
                })
                .0;
            pred == y
        })
        .count();
    Ok(ProbeResult {
        domain_index: 0,
        after_domain: 0,
        accuracy: if m == 0 {
            0.0
        } else {
            correct as f64 / m as f64
        },
        n_test: m,
    })
}

/// Probe input features of `images` under `net`, as `f64`.
pub fn representations<T: Scalar>(
    net: &DualNet<T>,
    images: &Tensor<f32>,
    which: Representation,
) -> Result<Tensor<f64>> {
    let (s4, d4) = net.encode(&images.cast())?;
    let (s4, d4) = (s4.cast::<f64>(), d4.cast::<f64>());
    match which {
        Representation::Slow => Ok(s4),
        Representation::Fast => Ok(d4),
        Representation::Concat => {
            let (n, w) = s4.dims2("representations")?;
            let mut out = Vec::with_capacity(2 * n * w);
            for i in 0..n {
                out.extend_from_slice(s4.row(i));
                out.extend_from_slice(d4.row(i));
            }
            Tensor::new(vec![n, 2 * w], out)
        }
    }
}

/// Probes checkpoint `after_domain` (1-based) on one labelled evaluation set.
pub fn probe_domain<T: Scalar>(
    net: &DualNet<T>,
    eval_set: &DomainSource,
    domain_index: usize,
    after_domain: usize,
    opts: &ProbeOptions,
) -> Result<ProbeResult> {
    let access = EvalAccess::for_evaluation();
    let labels = eval_set
        .labels()
        .ok_or_else(|| Error::Contract(format!("evaluation set {domain_index} is unlabelled")))?
        .reveal(&access);
    let mut rng = Rng::new(opts.seed ^ (domain_index as u64).wrapping_mul(0x9e37_79b9));
    let (train, test) = stratified_split(labels, opts.train_fraction, &mut rng);
    let reps = representations(net, &eval_set.to_tensor()?, opts.representation)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let mut r = linear_probe(
        &reps.select_rows(&train)?,
        &pick(&train),
        &reps.select_rows(&test)?,
        &pick(&test),
        opts,
    )?;
    r.domain_index = domain_index;
    r.after_domain = after_domain;
    Ok(r)
}

/// Fills the lower-triangular accuracy matrix from one checkpoint per
/// completed domain.
pub fn evaluate_sequence<T: Scalar>(
    checkpoints: &[DualNet<T>],
    eval_sets: &[DomainSource],
    opts: &ProbeOptions,
) -> Result<SequenceMetrics> {
    opts.validate()?;
    if checkpoints.len() != eval_sets.len() {
        return Err(Error::Contract(format!(
            "{} checkpoints for {} domains",
            checkpoints.len(),
            eval_sets.len()
        )));
    }
    let mut matrix = Vec::with_capacity(checkpoints.len());
    for (t, net) in checkpoints.iter().enumerate() {
        let row = eval_sets[..=t]
            .iter()
            .enumerate()
            .map(|(d, set)| probe_domain(net, set, d + 1, t + 1, opts).map(|r| r.accuracy))
            .collect::<Result<Vec<_>>>()?;
        matrix.push(row);
    }
    SequenceMetrics::from_matrix(matrix)
}

/// Trains `net` by plain sequential self-supervised fine-tuning (no memory,
/// no alignment losses, no freezing) and evaluates it like LLEDA.
pub fn finetune_baseline<T: Scalar>(
    mut net: DualNet<T>,
    stream: &mut DomainStream,
    eval_sets: &[DomainSource],
    cfg: &TrainConfig,
    opts: &ProbeOptions,
    on_step: &mut dyn FnMut(&StepReport) -> Result<()>,
) -> Result<(SequenceMetrics, Vec<StepReport>, Vec<DualNet<T>>)> {
    let mut trainer = Trainer::<T>::new(cfg.clone(), Method::FINETUNE)?;
    let mut buf: ReplayBuffer<T> = trainer.new_buffer()?;
    let run = trainer.train_sequence(&mut net, &mut buf, stream, on_step)?;
    let metrics = evaluate_sequence(&run.checkpoints, eval_sets, opts)?;
    Ok((metrics, run.reports, run.checkpoints))
}
