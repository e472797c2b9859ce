//! Self-checks: finite-difference gradients, a naive-loop forward oracle,
//! the residual identity and brute-force metric oracles.

pub mod gradient;
pub mod metric_oracle;
pub mod naive;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{biam_forward, classify_regions, latent_forward};
use crate::ops::Mode;
use crate::tensor::Tensor;

pub use gradient::{end_to_end_check, gradient_suite, perturbed_params, tiny_config, EndToEnd, TINY_CLASSES};
pub use metric_oracle::{metric_oracle_suite, MetricOracleReport};
pub use naive::{naive_forward, NaiveOutput};

pub const GRADIENT_TOLERANCE: f64 = 1e-5;
pub const ORACLE_TOLERANCE: f64 = 1e-6;
pub const METRIC_TOLERANCE: f64 = 1e-12;
pub const ORACLE_SEEDS: u64 = 10;

fn max_diff(a: &[f64], b: impl IntoIterator<Item = f64>) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Largest elementwise gap between the library forward pass and
/// [`naive_forward`] over `e_f`, the response maps and the scores, in both
/// batch-norm modes.
pub fn oracle_equivalence(seed: u64) -> Result<f64> {
    let cfg = tiny_config(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(1));
    let params = perturbed_params(&cfg, &mut rng)?;
    let region = Tensor::randn(&[cfg.h, cfg.w, cfg.d_r], 1.0, &mut rng);
    let global = Tensor::randn(&[cfg.d_g], 1.0, &mut rng);
    let attributes = Tensor::randn(&[TINY_CLASSES, cfg.d_a], 1.0, &mut rng);
    let mut worst = 0.0f64;
    for mode in [Mode::Eval, Mode::Train] {
        let e_f = biam_forward(&region, &global, &params, mode)?;
        let maps = classify_regions(&e_f, &params.attr_proj, &attributes, cfg.topk, cfg.pool)?;
        let naive = naive_forward(&params, &region, &global, &attributes, mode)?;
        worst = worst
            .max(max_diff(e_f.data(), naive.enriched.concat()))
            .max(max_diff(maps.maps.data(), naive.maps.concat()))
            .max(max_diff(maps.scores.data(), naive.scores.iter().copied()));
    }
    Ok(worst)
}

/// Residual-identity gaps with the attention output, region refinement,
/// scene projection and scene convolution zeroed:
/// `(|e_f − c_f([h_r; h_r])|, |e_f − h_r|)`, the second with `c_f` set to
/// average the two halves. Both should be exactly zero.
pub fn residual_identity(seed: u64) -> Result<(f64, f64)> {
    let cfg = tiny_config(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11ce);
    let mut p = perturbed_params(&cfg, &mut rng)?;
    let zero = |t: &mut Tensor<f64>| *t = Tensor::zeros(t.shape());
    zero(&mut p.out_proj);
    zero(&mut p.context_in.weight);
    zero(&mut p.context_in.bias);
    zero(&mut p.context_out.weight);
    zero(&mut p.context_out.bias);
    zero(&mut p.scene_proj);
    zero(&mut p.scene_conv.kernel);
    zero(&mut p.scene_conv.bias);
    zero(&mut p.scene_norm.beta);
    zero(&mut p.scene_norm.running_mean);
    let region = Tensor::randn(&[cfg.h, cfg.w, cfg.d_r], 1.0, &mut rng);
    let global = Tensor::randn(&[cfg.d_g], 1.0, &mut rng);
    let mut fused_gap = 0.0f64;
    let mut identity_gap = 0.0f64;
    for mode in [Mode::Eval, Mode::Train] {
        let latent = latent_forward(&region, &p, mode)?;
        let doubled = Tensor::concat_channels(&[&latent, &latent])?.as_matrix();
        let expected = crate::ops::add(&crate::ops::matmul(&doubled, &p.fuse.weight)?, &p.fuse.bias)?;
        let e_f = biam_forward(&region, &global, &p, mode)?;
        fused_gap = fused_gap.max(e_f.as_matrix().max_abs_diff(&expected)?);

        let mut avg = p.clone();
        let d = cfg.d_r;
        let mut w = vec![0.0; 2 * d * d];
        for c in 0..d {
            w[c * d + c] = 0.5;
            w[(d + c) * d + c] = 0.5;
        }
        avg.fuse.weight = Tensor::from_vec(&[2 * d, d], w)?;
        zero(&mut avg.fuse.bias);
        let e_f = biam_forward(&region, &global, &avg, mode)?;
        identity_gap = identity_gap.max(e_f.max_abs_diff(&latent)?);
    }
    Ok((fused_gap, identity_gap))
}

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn below(name: impl Into<String>, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: value < tolerance || (tolerance == 0.0 && value == 0.0),
            value,
            tolerance,
            detail: detail.into(),
        }
    }

    fn failed(name: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Self {
            name: name.into(),
            passed: false,
            value: f64::NAN,
            tolerance: f64::NAN,
            detail: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }
}

/// Runs the gradient suite, the forward oracle over [`ORACLE_SEEDS`] seeds,
/// the residual identity and the metric oracles, in 64-bit.
pub fn run_suite(seed: u64) -> VerifyReport {
    let mut checks = Vec::new();
    match gradient_suite(seed) {
        Ok(reports) => checks.extend(reports.into_iter().map(|r| {
            CheckResult::below(
                format!("grad/{}", r.op),
                r.max_rel_error,
                GRADIENT_TOLERANCE,
                format!("{} coordinates", r.coordinates),
            )
        })),
        Err(e) => checks.push(CheckResult::failed("grad", e)),
    }
    let oracle: Result<f64> = (0..ORACLE_SEEDS).try_fold(0.0f64, |m, s| Ok(m.max(oracle_equivalence(seed + s)?)));
    checks.push(match oracle {
        Ok(v) => CheckResult::below("oracle/forward", v, ORACLE_TOLERANCE, format!("{ORACLE_SEEDS} seeds, max abs diff")),
        Err(e) => CheckResult::failed("oracle/forward", e),
    });
    checks.push(match residual_identity(seed) {
        Ok((fused, identity)) => CheckResult::below(
            "invariant/residual_identity",
            fused.max(identity),
            0.0,
            format!("e_f vs c_f([h;h]) {fused:e}, averaged e_f vs h_r {identity:e}"),
        ),
        Err(e) => CheckResult::failed("invariant/residual_identity", e),
    });
    checks.push(match metric_oracle_suite() {
        Ok(r) => CheckResult::below(
            "oracle/metrics",
            r.max_abs_diff,
            METRIC_TOLERANCE,
            format!("{} comparisons", r.cases),
        ),
        Err(e) => CheckResult::failed("oracle/metrics", e),
    });
    VerifyReport { checks }
}
