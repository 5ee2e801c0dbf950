//! Structural properties of the per-step procedure and the domain sequence.

use std::cell::Cell;
use std::rc::Rc;

use lleda_core::losses::ssl_objective;
use lleda_core::networks::Role;
use lleda_core::trainer::{step_objective, Bandwidths, MemoryBatch, ObjectiveWeights};
use lleda_core::{
    generate_domain, DomainSource, DomainStream, DualNet, Error, Method, NetConfig, Result, Rng,
    SslLoss, StepReport, SyntheticDomainSpec, Tape, Tensor, TrainConfig, Trainer, Transform, Var,
    VicReg, VicRegWeights,
};

fn domains(n: usize) -> Vec<DomainSource> {
    let transforms = [
        Transform::Identity,
        Transform::Rotate(45.0),
        Transform::PixelPermute(17),
    ];
    (0..n)
        .map(|i| {
            generate_domain(&SyntheticDomainSpec {
                sample_seed: 100 + i as u64,
                n_samples: 64,
                transform: transforms[i % 3].clone(),
                ..SyntheticDomainSpec::default()
            })
            .unwrap()
        })
        .collect()
}

fn small_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs_per_domain: 2,
        pretrain_epochs: 1,
        batch_size: 16,
        buffer_capacity: 64,
        seed,
        ..TrainConfig::default()
    }
}

fn net(seed: u64) -> DualNet<f32> {
    DualNet::new(NetConfig::default(), &mut Rng::new(seed)).unwrap()
}

fn frozen_checksum(net: &DualNet<f32>) -> u64 {
    net.checksum_where(|p| p.frozen)
}

/// Latents stored before 500 steps still reproduce the full forward pass
/// bit for bit afterwards.
#[test]
fn replay_reproduces_forward_full_after_training() {
    let mut net = net(1);
    net.freeze_below_replay();
    let cfg = TrainConfig {
        buffer_capacity: 100,
        sample_size: 100,
        replay_batch_size: Some(32),
        ssl_on_memory: true,
        ..small_cfg(1)
    };
    let mut trainer = Trainer::<f32>::new(cfg, Method::Lleda).unwrap();
    let mut buf = trainer.new_buffer().unwrap();
    let mut rng = Rng::new(2);
    let probe_inputs = rng.uniform_tensor::<f32>(&[100, 256], 0.0, 1.0);
    let other = rng.uniform_tensor::<f32>(&[100, 256], 0.0, 1.0);
    trainer
        .train_step(&mut net, &mut buf, &probe_inputs, &other, 1)
        .unwrap();
    assert_eq!(buf.len(), 100);
    let frozen_before = frozen_checksum(&net);
    let before = net.checksum();

    for step in 0..499 {
        let a = rng.uniform_tensor::<f32>(&[32, 256], 0.0, 1.0);
        let b = rng.uniform_tensor::<f32>(&[32, 256], 0.0, 1.0);
        let r = trainer
            .train_step(&mut net, &mut buf, &a, &b, 2 + step / 250)
            .unwrap();
        assert!(r.l_da2 > 0.0);
    }
    assert_eq!(frozen_checksum(&net), frozen_before);
    assert_ne!(net.checksum(), before, "upper layers must have trained");

    let entries: Vec<_> = buf.entries().iter().collect();
    let s = Tensor::stack_rows(entries.iter().map(|e| e.s_latent_a.data())).unwrap();
    let d = Tensor::stack_rows(entries.iter().map(|e| e.d_latent_a.data())).unwrap();
    let tape = Tape::new();
    let bound = net.bind_frozen(&tape);
    let full = bound
        .forward_full(tape.constant(probe_inputs))
        .unwrap()
        .values();
    let replayed = bound
        .forward_from_latent(tape.constant(s), tape.constant(d))
        .unwrap()
        .values();
    assert_eq!(replayed, full);
}

#[test]
fn freezing_keeps_lower_blocks_bit_identical() {
    let mut net = net(3);
    let cfg = small_cfg(3);
    let mut trainer = Trainer::<f32>::new(cfg, Method::Lleda).unwrap();
    let mut buf = trainer.new_buffer().unwrap();
    let mut stream = DomainStream::new(domains(2)).unwrap();
    let lower = |n: &DualNet<f32>| {
        n.checksum_where(|p| p.block <= 1 && matches!(p.role, Role::Slow | Role::Fast))
    };
    let mut snapshots = Vec::new();
    let run = trainer
        .train_sequence(&mut net, &mut buf, &mut stream, &mut |_| Ok(()))
        .unwrap();
    for c in &run.checkpoints {
        snapshots.push(lower(c));
        assert!(c.is_frozen());
    }
    assert_eq!(snapshots[0], snapshots[1]);
    assert_ne!(run.checkpoints[0].checksum(), run.checkpoints[1].checksum());
}

#[test]
fn first_domain_has_no_memory_terms() {
    let mut net = net(4);
    net.freeze_below_replay();
    let mut trainer = Trainer::<f32>::new(small_cfg(4), Method::Lleda).unwrap();
    let mut buf = trainer.new_buffer().unwrap();
    let mut rng = Rng::new(5);
    for _ in 0..6 {
        let a = rng.uniform_tensor::<f32>(&[16, 256], 0.0, 1.0);
        let b = rng.uniform_tensor::<f32>(&[16, 256], 0.0, 1.0);
        let r = trainer.train_step(&mut net, &mut buf, &a, &b, 1).unwrap();
        // the buffer is non-empty from the second step on, yet unused
        assert_eq!(r.l_da1_mem, 0.0);
        assert_eq!(r.l_da2, 0.0);
        assert_eq!(r.l_ssl_mem, 0.0);
        assert_eq!(r.total as f32, (r.l_ssl as f32) + (r.l_da1_data as f32));
    }
    assert!(!buf.is_empty());
    let a = rng.uniform_tensor::<f32>(&[16, 256], 0.0, 1.0);
    let r = trainer
        .train_step(&mut net, &mut buf, &a, &a.clone(), 2)
        .unwrap();
    assert!(r.l_da1_mem > 0.0 && r.l_da2 > 0.0);
}

/// Without memory the objective's graph has no path to any replayed latent;
/// with memory it has.
#[test]
fn memory_terms_are_absent_from_the_graph_without_memory() {
    let cfg = NetConfig {
        input_dim: 8,
        widths: vec![6, 5, 4],
        ..NetConfig::default()
    };
    let net = DualNet::<f64>::new(cfg, &mut Rng::new(6)).unwrap();
    let vic = VicReg::default();
    let weights = ObjectiveWeights {
        alpha1: 1.0,
        alpha2: 1.0,
        ssl_only: false,
        ssl_on_memory: true,
        bandwidths: Bandwidths::Median,
    };
    let mut rng = Rng::new(7);
    let tape = Tape::new();
    let bound = net.bind(&tape);
    let a = tape.constant(rng.uniform_tensor(&[5, 8], 0.0, 1.0));
    let b = tape.constant(rng.uniform_tensor(&[5, 8], 0.0, 1.0));
    let mem: Vec<Var<'_, f64>> = (0..4)
        .map(|_| tape.param(rng.uniform_tensor(&[5, 6], 0.0, 1.0)))
        .collect();

    let without = step_objective(&bound, a, b, None, weights, &vic).unwrap();
    assert!(without.l_da1_mem.is_none() && without.l_da2.is_none());
    for &m in &mem {
        assert!(!tape.depends_on(without.total, m));
    }
    let grads = tape.backward(without.total).unwrap();
    assert!(mem.iter().all(|&m| grads.get(m).is_none()));

    let memory = MemoryBatch {
        s_a: mem[0],
        d_a: mem[1],
        view_b: Some((mem[2], mem[3])),
    };
    let with = step_objective(&bound, a, b, Some(memory), weights, &vic).unwrap();
    for &m in &mem[..3] {
        assert!(tape.depends_on(with.total, m));
    }
    // the self-supervised memory term only runs the slow network
    assert!(!tape.depends_on(with.total, mem[3]));
}

/// With both alignment weights at zero, LLEDA retraces self-supervised
/// training with the same freeze step for step.
#[test]
fn zero_alignment_weights_reproduce_ssl_training() {
    let cfg = TrainConfig {
        alpha1: 0.0,
        alpha2: 0.0,
        ssl_on_memory: false,
        ..small_cfg(8)
    };
    let run = |method: Method| {
        let mut net = net(8);
        let mut trainer = Trainer::<f32>::new(cfg.clone(), method).unwrap();
        let mut buf = trainer.new_buffer().unwrap();
        let mut stream = DomainStream::new(domains(3)).unwrap();
        let mut nets = Vec::new();
        let r = trainer
            .train_sequence(&mut net, &mut buf, &mut stream, &mut |_| Ok(()))
            .unwrap();
        nets.extend(r.checkpoints.iter().map(|c| c.checksum()));
        (r.reports, nets, buf.len())
    };
    let (lleda, lleda_nets, lleda_buf) = run(Method::Lleda);
    let (ssl, ssl_nets, _) = run(Method::SslOnly { freeze: true });
    assert!(lleda_buf > 0, "LLEDA still fills its buffer");
    assert_eq!(lleda.len(), ssl.len());
    for (x, y) in lleda.iter().zip(&ssl) {
        assert_eq!(x.l_ssl.to_bits(), y.l_ssl.to_bits(), "step {}", x.step);
        assert_eq!(x.total.to_bits(), y.total.to_bits(), "step {}", x.step);
    }
    assert!(lleda.iter().any(|r| r.l_da2 > 0.0));
    assert_eq!(lleda_nets, ssl_nets);
}

#[test]
fn sequence_is_deterministic() {
    let run = |seed: u64| {
        let mut net = net(seed);
        let mut trainer = Trainer::<f32>::new(small_cfg(seed), Method::Lleda).unwrap();
        let mut buf = trainer.new_buffer().unwrap();
        let mut stream = DomainStream::new(domains(2)).unwrap();
        let mut seen: Vec<StepReport> = Vec::new();
        let r = trainer
            .train_sequence(&mut net, &mut buf, &mut stream, &mut |s| {
                seen.push(s.clone());
                Ok(())
            })
            .unwrap();
        assert_eq!(seen, r.reports);
        (r.reports, net.checksum(), buf.save())
    };
    let a = run(9);
    assert_eq!(a, run(9));
    assert_ne!(a.1, run(10).1);
}

#[test]
fn step_callback_can_abort() {
    let mut net = net(11);
    let mut trainer = Trainer::<f32>::new(small_cfg(11), Method::Lleda).unwrap();
    let mut buf = trainer.new_buffer().unwrap();
    let mut stream = DomainStream::new(domains(2)).unwrap();
    let mut calls = 0;
    let r = trainer.train_sequence(&mut net, &mut buf, &mut stream, &mut |_| {
        calls += 1;
        if calls == 3 {
            Err(Error::Contract("stop".into()))
        } else {
            Ok(())
        }
    });
    assert!(matches!(r, Err(Error::Contract(_))));
    assert_eq!(calls, 3);
}

#[test]
fn past_domains_are_sealed() {
    let mut stream = DomainStream::new(domains(3)).unwrap();
    assert_eq!(stream.advance(), Some(0));
    assert!(stream.domain(0).unwrap().labels().is_none());
    assert!(stream.domain(1).is_err());
    assert_eq!(stream.advance(), Some(1));
    assert!(matches!(stream.domain(0), Err(Error::SealedDomain(0))));
    assert_eq!(stream.advance(), Some(2));
    assert_eq!(stream.advance(), None);
    assert!(matches!(stream.domain(2), Err(Error::SealedDomain(2))));
}

#[test]
fn divergence_is_reported_before_any_update() {
    let cfg = TrainConfig {
        learning_rate: 1e6,
        grad_clip: None,
        ..small_cfg(12)
    };
    let mut net = net(12);
    let mut trainer = Trainer::<f32>::new(cfg, Method::Lleda).unwrap();
    let mut buf = trainer.new_buffer().unwrap();
    let mut stream = DomainStream::new(domains(1)).unwrap();
    let mut last = None;
    let result = trainer.train_sequence(&mut net, &mut buf, &mut stream, &mut |r| {
        last = Some(r.clone());
        Ok(())
    });
    let Err(Error::Divergence(report)) = result else {
        panic!("expected divergence");
    };
    assert!(!report.is_finite());
    assert!(last.unwrap().step + 1 == report.step);
}

struct CountingLoss {
    calls: Rc<Cell<usize>>,
}

impl SslLoss<f32> for CountingLoss {
    fn name(&self) -> &str {
        "counting"
    }

    fn compute<'t>(&self, z_i: Var<'t, f32>, z_j: Var<'t, f32>) -> Result<Var<'t, f32>> {
        self.calls.set(self.calls.get() + 1);
        Ok(z_i.sub(z_j)?.square().mean())
    }
}

#[test]
fn self_supervised_loss_is_pluggable() {
    let calls = Rc::new(Cell::new(0));
    let mut trainer = Trainer::<f32>::new(small_cfg(13), Method::FINETUNE)
        .unwrap()
        .with_ssl_loss(Box::new(CountingLoss {
            calls: calls.clone(),
        }));
    let mut net = net(13);
    let mut buf = trainer.new_buffer().unwrap();
    let mut rng = Rng::new(14);
    let a = rng.uniform_tensor::<f32>(&[16, 256], 0.0, 1.0);
    let b = rng.uniform_tensor::<f32>(&[16, 256], 0.0, 1.0);
    let r = trainer.train_step(&mut net, &mut buf, &a, &b, 1).unwrap();
    assert_eq!(calls.get(), 1);
    assert!(buf.is_empty());

    let tape = Tape::<f32>::new();
    let z = tape.constant(a.clone());
    let w = tape.constant(b.clone());
    let stub = CountingLoss {
        calls: calls.clone(),
    };
    let one = ssl_objective(&[(z, w)], &stub).unwrap().item().unwrap();
    assert_eq!(calls.get(), 2);
    assert!(one > 0.0 && r.l_ssl > 0.0);
    let vic = VicReg::new(VicRegWeights::default()).unwrap();
    assert_eq!(SslLoss::<f32>::name(&vic), "vicreg");
}
