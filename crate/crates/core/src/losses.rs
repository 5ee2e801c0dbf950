//! Training objectives: the VICReg self-supervised loss, the kernel MMD
//! used for both domain-alignment terms, and the [`SslLoss`] seam that lets
//! another self-supervised criterion replace VICReg.

use serde::{Deserialize, Serialize};

use crate::autodiff::{rbf_kernel, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Added under the square root of the per-dimension variance.
pub const VICREG_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VicRegWeights {
    /// Invariance weight.
    pub lambda: f64,
    /// Variance weight.
    pub mu: f64,
    /// Covariance weight.
    pub nu: f64,
    /// Target standard deviation of each embedding dimension.
    pub gamma: f64,
}

impl Default for VicRegWeights {
    fn default() -> Self {
        Self {
            lambda: 25.0,
            mu: 25.0,
            nu: 1.0,
            gamma: 1.0,
        }
    }
}

impl VicRegWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda, self.mu, self.nu, self.gamma];
        if all.iter().any(|w| !w.is_finite()) {
            return Err(Error::Parameter("vicreg weights must be finite".into()));
        }
        if self.lambda < 0.0 || self.mu < 0.0 || self.nu < 0.0 {
            return Err(Error::Parameter(
                "vicreg weights must be nonnegative".into(),
            ));
        }
        if self.lambda == 0.0 && self.mu == 0.0 && self.nu == 0.0 {
            return Err(Error::Parameter(
                "at least one of lambda, mu, nu must be positive".into(),
            ));
        }
        if self.gamma <= 0.0 {
            return Err(Error::Parameter("vicreg gamma must be positive".into()));
        }
        Ok(())
    }
}

fn check_pair<T: Scalar>(op: &'static str, z_i: Var<'_, T>, z_j: Var<'_, T>) -> Result<usize> {
    let (si, sj) = (z_i.shape(), z_j.shape());
    if si.len() != 2 || si != sj {
        return Err(Error::dim(op, &si, &sj));
    }
    if si[0] < 2 {
        return Err(Error::InsufficientSamples {
            op,
            needed: 2,
            got: si[0],
        });
    }
    Ok(si[0])
}

/// Mean squared row distance, `(1/n) Σ_k ‖z_i[k] − z_j[k]‖²`.
pub fn invariance<'t, T: Scalar>(z_i: Var<'t, T>, z_j: Var<'t, T>) -> Result<Var<'t, T>> {
    let n = check_pair("invariance", z_i, z_j)?;
    Ok(z_i
        .sub(z_j)?
        .square()
        .sum()
        .scale(T::one() / T::lit(n as f64)))
}

/// Hinge on the per-dimension standard deviation, averaged over dimensions.
pub fn variance<'t, T: Scalar>(z: Var<'t, T>, gamma: f64) -> Result<Var<'t, T>> {
    check_pair("variance", z, z)?;
    let std = z.var_axis(0)?.add_scalar(T::lit(VICREG_EPS)).sqrt()?;
    Ok(std.neg().add_scalar(T::lit(gamma)).relu().mean())
}

/// Sum of squared off-diagonal covariance entries divided by the dimension.
pub fn covariance<'t, T: Scalar>(z: Var<'t, T>) -> Result<Var<'t, T>> {
    let n = check_pair("covariance", z, z)?;
    let d = z.shape()[1];
    let centered = z.add_row(z.mean_axis(0)?.neg())?;
    let cov = centered
        .transpose()?
        .matmul(centered)?
        .scale(T::one() / T::lit((n - 1) as f64));
    let mut mask = Tensor::ones(&[d, d]);
    for k in 0..d {
        mask.data_mut()[k * d + k] = T::zero();
    }
    let off = cov.square().mul(z.tape().constant(mask))?;
    Ok(off.sum().scale(T::one() / T::lit(d as f64)))
}

/// The five VICReg sub-terms, unweighted.
pub struct VicRegTerms<'t, T: Scalar> {
    pub invariance: Var<'t, T>,
    pub variance_i: Var<'t, T>,
    pub variance_j: Var<'t, T>,
    pub covariance_i: Var<'t, T>,
    pub covariance_j: Var<'t, T>,
}

pub fn vicreg_terms<'t, T: Scalar>(
    z_i: Var<'t, T>,
    z_j: Var<'t, T>,
    gamma: f64,
) -> Result<VicRegTerms<'t, T>> {
    Ok(VicRegTerms {
        invariance: invariance(z_i, z_j)?,
        variance_i: variance(z_i, gamma)?,
        variance_j: variance(z_j, gamma)?,
        covariance_i: covariance(z_i)?,
        covariance_j: covariance(z_j)?,
    })
}

/// `λ·s(z_i, z_j) + μ·[v(z_i) + v(z_j)] + ν·[c(z_i) + c(z_j)]`.
pub fn vicreg<'t, T: Scalar>(
    z_i: Var<'t, T>,
    z_j: Var<'t, T>,
    w: &VicRegWeights,
) -> Result<Var<'t, T>> {
    w.validate()?;
    let t = vicreg_terms(z_i, z_j, w.gamma)?;
    let var = t.variance_i.add(t.variance_j)?.scale(T::lit(w.mu));
    let cov = t.covariance_i.add(t.covariance_j)?.scale(T::lit(w.nu));
    t.invariance.scale(T::lit(w.lambda)).add(var)?.add(cov)
}

/// A self-supervised criterion over one pair of embedding batches.
pub trait SslLoss<T: Scalar> {
    fn name(&self) -> &str;

    fn compute<'t>(&self, z_i: Var<'t, T>, z_j: Var<'t, T>) -> Result<Var<'t, T>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VicReg {
    pub weights: VicRegWeights,
}

impl VicReg {
    pub fn new(weights: VicRegWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Self { weights })
    }
}

impl<T: Scalar> SslLoss<T> for VicReg {
    fn name(&self) -> &str {
        "vicreg"
    }

    fn compute<'t>(&self, z_i: Var<'t, T>, z_j: Var<'t, T>) -> Result<Var<'t, T>> {
        vicreg(z_i, z_j, &self.weights)
    }
}

/// Sum of `loss` over every view pair of the minibatch.
pub fn ssl_objective<'t, T: Scalar>(
    views: &[(Var<'t, T>, Var<'t, T>)],
    loss: &dyn SslLoss<T>,
) -> Result<Var<'t, T>> {
    let mut total: Option<Var<'t, T>> = None;
    for &(z_i, z_j) in views {
        let l = loss.compute(z_i, z_j)?;
        total = Some(match total {
            None => l,
            Some(acc) => acc.add(l)?,
        });
    }
    total.ok_or_else(|| Error::Contract("ssl_objective needs at least one view pair".into()))
}

/// Biased (V-statistic) squared MMD between two batches under the
/// multi-bandwidth Gaussian kernel, self-pairs included.
pub fn mmd<'t, T: Scalar>(
    source: Var<'t, T>,
    target: Var<'t, T>,
    bandwidths: &[T],
) -> Result<Var<'t, T>> {
    let (ss, ts) = (source.shape(), target.shape());
    if ss.len() != 2 || ts.len() != 2 {
        return Err(Error::dim("mmd", &ss, &ts));
    }
    if ss[0] == 0 || ts[0] == 0 {
        return Err(Error::InsufficientSamples {
            op: "mmd",
            needed: 1,
            got: ss[0].min(ts[0]),
        });
    }
    if ss[1] != ts[1] {
        return Err(Error::dim("mmd", &ss, &ts));
    }
    // order-free means make the value exactly symmetric and invariant to
    // row permutations
    let k_ss = rbf_kernel(source, source, bandwidths)?.mean_sorted();
    let k_st = rbf_kernel(source, target, bandwidths)?.mean_sorted();
    let k_tt = rbf_kernel(target, target, bandwidths)?.mean_sorted();
    k_ss.add(k_tt)?.sub(k_st.scale(T::lit(2.0)))
}

/// Median pairwise distance of the joined batch, or 1 when it is zero.
pub fn median_distance<T: Scalar>(source: &Tensor<T>, target: &Tensor<T>) -> f64 {
    let rows: Vec<&[T]> = (0..source.shape()[0])
        .map(|i| source.row(i))
        .chain((0..target.shape()[0]).map(|j| target.row(j)))
        .collect();
    let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            let d2: f64 = rows[a]
                .iter()
                .zip(rows[b])
                .map(|(&x, &y)| {
                    let d = x.as_f64() - y.as_f64();
                    d * d
                })
                .sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let mid = dists.len() / 2;
    let med = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    // zero median: the batch is (mostly) a single point, any scale works
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

/// `{σ/2, σ, 2σ}` around the median-heuristic scale.
pub fn median_bandwidths<T: Scalar>(source: &Tensor<T>, target: &Tensor<T>) -> Vec<T> {
    let s = median_distance(source, target);
    vec![T::lit(0.5 * s), T::lit(s), T::lit(2.0 * s)]
}

/// [`mmd`] with bandwidths from the median heuristic on the current values.
/// The bandwidths are treated as constants by the backward pass.
pub fn mmd_median<'t, T: Scalar>(source: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    let bw = median_bandwidths(&source.value(), &target.value());
    mmd(source, target, &bw)
}

/// Convenience for evaluating `mmd` on plain tensors.
pub fn mmd_value<T: Scalar>(source: &Tensor<T>, target: &Tensor<T>, bandwidths: &[T]) -> Result<T> {
    let tape = Tape::new();
    let s = tape.constant(source.clone());
    let t = tape.constant(target.clone());
    mmd(s, t, bandwidths)?.item()
}
