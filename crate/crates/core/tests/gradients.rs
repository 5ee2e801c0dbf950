//! Finite-difference checks of every differentiable operation at f64.

use lleda_core::autodiff::{elementwise, matmul, rbf_kernel, reduce, ElementwiseOp, ReduceOp};
use lleda_core::gradcheck::{grad_check, GradCheckReport};
use lleda_core::losses::{covariance, invariance, variance};
use lleda_core::networks::NetConfig;
use lleda_core::trainer::{step_objective, Bandwidths, MemoryBatch, ObjectiveWeights};
use lleda_core::{mmd, vicreg, DualNet, Result, Rng, Tape, Tensor, Var, VicReg, VicRegWeights};

const SEEDS: u64 = 20;
const EPS: f64 = 1e-5;
const PRIMITIVE_TOL: f64 = 1e-6;
const COMPOSITE_TOL: f64 = 1e-4;

fn assert_passed(what: &str, seed: u64, r: &GradCheckReport) {
    assert!(r.passed, "{what} seed {seed}: {r:?}");
    assert!(r.elements_checked > 0);
}

/// Reduces a non-scalar output to a scalar with fixed random weights, so
/// that every output element contributes to the checked gradient.
fn contract<'t>(tape: &'t Tape<f64>, out: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let w = Rng::new(seed ^ 0xfeed).normal_tensor::<f64>(&out.shape(), 1.0);
    Ok(out.mul(tape.constant(w))?.sum())
}

#[test]
fn matmul_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed);
        let (m, k, n) = (2 + rng.below(4), 1 + rng.below(5), 1 + rng.below(4));
        let a = rng.normal_tensor(&[m, k], 1.0);
        let b = rng.normal_tensor(&[k, n], 1.0);
        let r = grad_check(
            |t, v| contract(t, matmul(v[0], v[1])?, seed),
            &[a, b],
            EPS,
            PRIMITIVE_TOL,
        )
        .unwrap();
        assert_passed("matmul", seed, &r);
    }
}

#[test]
fn elementwise_gradients() {
    let ops = [ElementwiseOp::Add, ElementwiseOp::Sub, ElementwiseOp::Mul];
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed);
        let shape = [1 + rng.below(4), 1 + rng.below(4)];
        let a = rng.normal_tensor(&shape, 1.0);
        let b = rng.normal_tensor(&shape, 1.0);
        for op in ops {
            let r = grad_check(
                |t, v| contract(t, elementwise(v[0], v[1], op)?, seed),
                &[a.clone(), b.clone()],
                EPS,
                PRIMITIVE_TOL,
            )
            .unwrap();
            assert_passed(&format!("{op:?}"), seed, &r);
        }
    }
}

#[test]
fn unary_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed);
        let shape = [2 + rng.below(3), 1 + rng.below(4)];
        let x = rng.normal_tensor::<f64>(&shape, 1.0);
        // keep relu inputs away from the kink and sqrt inputs positive
        let x = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let pos = x.map(|v| v.abs() + 0.5);
        let row = rng.normal_tensor::<f64>(&[shape[1]], 1.0);
        let checks: Vec<(&str, GradCheckReport)> = vec![
            (
                "relu",
                grad_check(
                    |t, v| contract(t, v[0].relu(), seed),
                    std::slice::from_ref(&x),
                    EPS,
                    PRIMITIVE_TOL,
                ),
            ),
            (
                "exp",
                grad_check(
                    |t, v| contract(t, v[0].exp(), seed),
                    std::slice::from_ref(&x),
                    EPS,
                    PRIMITIVE_TOL,
                ),
            ),
            (
                "square",
                grad_check(
                    |t, v| contract(t, v[0].square(), seed),
                    std::slice::from_ref(&x),
                    EPS,
                    PRIMITIVE_TOL,
                ),
            ),
            (
                "sqrt",
                grad_check(
                    |t, v| contract(t, v[0].sqrt()?, seed),
                    std::slice::from_ref(&pos),
                    EPS,
                    PRIMITIVE_TOL,
                ),
            ),
            (
                "scale_shift_neg",
                grad_check(
                    |t, v| contract(t, v[0].scale(1.7).add_scalar(-0.3).neg(), seed),
                    std::slice::from_ref(&x),
                    EPS,
                    PRIMITIVE_TOL,
                ),
            ),
            (
                "transpose",
                grad_check(
                    |t, v| contract(t, v[0].transpose()?, seed),
                    std::slice::from_ref(&x),
                    EPS,
                    PRIMITIVE_TOL,
                ),
            ),
            (
                "add_row",
                grad_check(
                    |t, v| contract(t, v[0].add_row(v[1])?, seed),
                    &[x.clone(), row.clone()],
                    EPS,
                    PRIMITIVE_TOL,
                ),
            ),
            (
                "pairwise_sq_dist",
                grad_check(
                    |t, v| contract(t, v[0].pairwise_sq_dist(v[1])?, seed),
                    &[x.clone(), pos.clone()],
                    EPS,
                    PRIMITIVE_TOL,
                ),
            ),
        ]
        .into_iter()
        .map(|(n, r)| (n, r.unwrap()))
        .collect();
        for (name, r) in &checks {
            assert_passed(name, seed, r);
        }
    }
}

#[test]
fn reduce_gradients() {
    let cases = [
        (ReduceOp::Sum, None),
        (ReduceOp::Sum, Some(0)),
        (ReduceOp::Sum, Some(1)),
        (ReduceOp::Mean, None),
        (ReduceOp::Mean, Some(0)),
        (ReduceOp::Mean, Some(1)),
        (ReduceOp::VarPerDim, None),
    ];
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed);
        let shape = [2 + rng.below(5), 1 + rng.below(4)];
        let x = rng.normal_tensor::<f64>(&shape, 1.0);
        for (op, axis) in cases {
            let r = grad_check(
                |t, v| contract(t, reduce(v[0], op, axis)?, seed),
                std::slice::from_ref(&x),
                EPS,
                PRIMITIVE_TOL,
            )
            .unwrap();
            assert_passed(&format!("{op:?} {axis:?}"), seed, &r);
        }
    }
}

#[test]
fn rbf_kernel_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed);
        let d = 1 + rng.below(4);
        let (n, m) = (1 + rng.below(5), 1 + rng.below(5));
        let x = rng.normal_tensor(&[n, d], 1.0);
        let y = rng.normal_tensor(&[m, d], 1.0);
        let bw = [0.5 + rng.uniform(), 2.0];
        let r = grad_check(
            |t, v| contract(t, rbf_kernel(v[0], v[1], &bw)?, seed),
            &[x, y],
            EPS,
            PRIMITIVE_TOL,
        )
        .unwrap();
        assert_passed("rbf_kernel", seed, &r);
    }
}

#[test]
fn mmd_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed);
        let d = 1 + rng.below(6);
        let (n, m) = (2 + rng.below(8), 2 + rng.below(8));
        let x = rng.normal_tensor(&[n, d], 1.0);
        let y = rng.normal_tensor(&[m, d], 1.5);
        let s = 0.5 + 2.0 * rng.uniform();
        let bw = [0.5 * s, s, 2.0 * s];
        let r = grad_check(|_, v| mmd(v[0], v[1], &bw), &[x, y], EPS, PRIMITIVE_TOL).unwrap();
        assert_passed("mmd", seed, &r);
    }
}

#[test]
fn vicreg_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed);
        let (n, d) = (3 + rng.below(6), 2 + rng.below(4));
        // a mix of dimensions below and above the variance target
        let scale = Tensor::new(vec![d], (0..d).map(|j| 0.3 + 0.8 * j as f64).collect()).unwrap();
        let spread = |t: Tensor<f64>| {
            let mut t = t;
            for i in 0..n {
                for j in 0..d {
                    t.data_mut()[i * d + j] *= scale.data()[j];
                }
            }
            t
        };
        let zi = spread(rng.normal_tensor(&[n, d], 1.0));
        let zj = spread(rng.normal_tensor(&[n, d], 1.0));
        let w = VicRegWeights::default();
        let inputs = [zi, zj];
        let checks = [
            (
                "invariance",
                grad_check(|_, v| invariance(v[0], v[1]), &inputs, EPS, PRIMITIVE_TOL),
            ),
            (
                "variance",
                grad_check(
                    |_, v| variance(v[0], w.gamma),
                    &inputs[..1],
                    EPS,
                    PRIMITIVE_TOL,
                ),
            ),
            (
                "covariance",
                grad_check(|_, v| covariance(v[0]), &inputs[..1], EPS, PRIMITIVE_TOL),
            ),
            (
                "vicreg",
                grad_check(|_, v| vicreg(v[0], v[1], &w), &inputs, EPS, COMPOSITE_TOL),
            ),
        ];
        for (name, r) in checks {
            assert_passed(name, seed, &r.unwrap());
        }
    }
}

struct Batch {
    view_a: Tensor<f64>,
    view_b: Tensor<f64>,
    memory: Vec<Tensor<f64>>,
    weights: ObjectiveWeights,
}

fn step_total<'t>(
    net: &DualNet<f64>,
    batch: &Batch,
    vic: &VicReg,
    tape: &'t Tape<f64>,
    v: &[Var<'t, f64>],
) -> Result<Var<'t, f64>> {
    let bound = net.bind_vars(v)?;
    let c = |t: &Tensor<f64>| tape.constant(t.clone());
    let m = &batch.memory;
    let memory = MemoryBatch {
        s_a: c(&m[0]),
        d_a: c(&m[1]),
        view_b: Some((c(&m[2]), c(&m[3]))),
    };
    let l = step_objective(
        &bound,
        c(&batch.view_a),
        c(&batch.view_b),
        Some(memory),
        batch.weights,
        vic,
    )?;
    assert!(l.l_da1_mem.is_some() && l.l_da2.is_some() && l.l_ssl_mem.is_some());
    Ok(l.total)
}

fn two_block_net(seed: u64) -> DualNet<f64> {
    let cfg = NetConfig {
        input_dim: 6,
        widths: vec![5, 4],
        replay_index: 1,
        projector_hidden: 4,
        projector_out: 3,
        freeze_slow: true,
    };
    let mut rng = Rng::new(seed);
    let mut net = DualNet::new(cfg, &mut rng).unwrap();
    // zero biases put dead-unit pre-activations exactly on the relu kink
    for (_, p) in net.params_mut() {
        if p.rank() == 1 {
            let noise = rng.normal_tensor::<f64>(p.shape(), 0.3);
            p.add_assign(&noise);
        }
    }
    net
}

/// The full per-step objective, differentiated with respect to every
/// parameter of a two-block network, the inputs' latents held fixed.
#[test]
fn composite_step_objective_gradients() {
    let vic = VicReg::new(VicRegWeights {
        lambda: 25.0 / 3.0,
        ..VicRegWeights::default()
    })
    .unwrap();
    for seed in 0..SEEDS {
        let net = two_block_net(seed);
        let mut rng = Rng::new(seed ^ 0xabc);
        let n = 6;
        let batch = Batch {
            view_a: rng.uniform_tensor(&[n, 6], 0.0, 1.0),
            view_b: rng.uniform_tensor(&[n, 6], 0.0, 1.0),
            memory: (0..4)
                .map(|_| rng.uniform_tensor(&[n, 5], 0.0, 1.0))
                .collect(),
            weights: ObjectiveWeights {
                alpha1: 0.7,
                alpha2: 1.3,
                ssl_only: false,
                ssl_on_memory: true,
                bandwidths: Bandwidths::Fixed(1.5),
            },
        };
        let params: Vec<Tensor<f64>> = net.params().into_iter().map(|(_, t)| t.clone()).collect();
        let r = grad_check(
            |t, v| step_total(&net, &batch, &vic, t, v),
            &params,
            EPS,
            COMPOSITE_TOL,
        )
        .unwrap();
        assert_passed("step objective", seed, &r);
    }
}
