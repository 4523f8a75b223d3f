//! Monte-Carlo self-checks of the sketching library, runnable from the CLI.

use std::fmt;

use anyhow::bail;
use rand::Rng;
use vjpsketch::analysis::{analytic_distortion, estimate_distortion, variance_decomposition_check, LinearChain, MIN_DRAWS};
use vjpsketch::autodiff::{backward, BackwardMode, MlpModel};
use vjpsketch::budget::{correlated_exact_r_sample, pstar_from_weights, WeightVector};
use vjpsketch::rng::{stream, LANE_DIAGNOSTICS};
use vjpsketch::sketch::LowRankSketcher;
use vjpsketch::stats::{BandCheck, MatrixStats, RunningStats};
use vjpsketch::{Budget, DenseMatrix, GradBatch, SketchKind, SketchOperatorSpec};

/// Deliberate defects for checking that the suites catch them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Skip the `1/p` rescale of kept units.
    DropRescale,
}

#[derive(Debug, Clone)]
pub struct DiagnosticsConfig {
    pub n_draws: usize,
    pub seed: u64,
    pub k_sigma: f64,
    pub fault: Fault,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig { n_draws: 20_000, seed: 0, k_sigma: 4.0, fault: Fault::None }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub expected: f64,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<40} measured={:<12.6e} expected={:<12.6e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.expected,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct DiagnosticsReport {
    pub checks: Vec<CheckResult>,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Inclusion frequencies of the exact-`r` sampler against its marginals.
pub fn sampler_marginals(cfg: &DiagnosticsConfig) -> anyhow::Result<CheckResult> {
    let w = WeightVector::new(vec![4.0, 1.0, 1.0, 2.0, 3.0, 0.5])?;
    let alloc = pstar_from_weights(&w, 3)?;
    let p = alloc.probabilities();
    let mut rng = stream(cfg.seed, LANE_DIAGNOSTICS, 0);
    let mut counts = vec![0usize; p.len()];
    let mut wrong_size = 0usize;
    for _ in 0..cfg.n_draws {
        let s = correlated_exact_r_sample(&alloc, &mut rng);
        wrong_size += usize::from(s.len() != 3);
        s.indices().iter().for_each(|&i| counts[i] += 1);
    }
    let n = cfg.n_draws as f64;
    let worst = p
        .iter()
        .zip(&counts)
        .map(|(&pi, &c)| {
            let sd = (pi * (1.0 - pi) / n).sqrt();
            let diff = (c as f64 / n - pi).abs();
            if sd > 0.0 { diff / sd } else if diff == 0.0 { 0.0 } else { f64::INFINITY }
        })
        .fold(0.0, f64::max);
    Ok(CheckResult {
        name: "sampler/exact_r_marginals".into(),
        passed: wrong_size == 0 && worst <= cfg.k_sigma,
        measured: worst,
        expected: cfg.k_sigma,
        detail: format!("worst |z| of inclusion frequency, {wrong_size} draws of wrong size"),
    })
}

/// Small MLP instance shared by the unbiasedness suite.
pub struct MlpInstance {
    pub model: MlpModel,
    pub x: DenseMatrix,
    pub labels: Vec<u8>,
}

impl MlpInstance {
    /// `dims` from input to classes, `batch` random inputs and labels.
    pub fn random(dims: &[usize], batch: usize, seed: u64) -> anyhow::Result<Self> {
        let model = MlpModel::init(dims, seed)?;
        let mut rng = stream(seed, LANE_DIAGNOSTICS, 1);
        let x = uniform(batch, dims[0], &mut rng);
        let classes = *dims.last().unwrap() as u8;
        let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        Ok(MlpInstance { model, x, labels })
    }
}

/// Per-layer band checks of the Monte-Carlo mean of `(dX, dW)` under `spec`
/// on every layer. `dX` of layer `l > 0` is the gradient handed to layer `l-1`.
pub fn mlp_unbiasedness(
    inst: &MlpInstance,
    spec: SketchOperatorSpec,
    n_draws: usize,
    seed: u64,
    k_sigma: f64,
    fault: Fault,
) -> anyhow::Result<Vec<(String, BandCheck)>> {
    let mut model = inst.model.clone();
    let n_layers = model.layers().len();
    model.set_sketch(&(0..n_layers).collect::<Vec<_>>(), Some(spec))?;
    let cache = model.forward(&inst.x)?;
    let exact = backward(&model, &cache, &inst.labels, BackwardMode::Exact)?;
    let mut dw: Vec<MatrixStats> = exact.grads.iter().map(|g| MatrixStats::new(g.dw.rows(), g.dw.cols())).collect();
    let mut dx: Vec<MatrixStats> = exact.output_grads.iter().map(|g| MatrixStats::new(g.rows(), g.cols())).collect();
    for step in 0..n_draws as u64 {
        let mode = match fault {
            Fault::None => BackwardMode::Sketched { seed, step },
            Fault::DropRescale => BackwardMode::SketchedUnscaled { seed, step },
        };
        let s = backward(&model, &cache, &inst.labels, mode)?;
        for l in 0..n_layers {
            dw[l].push(&s.grads[l].dw);
            if l + 1 < n_layers {
                dx[l].push(&s.output_grads[l]);
            }
        }
    }
    let mut out = Vec::new();
    for l in 0..n_layers {
        out.push((format!("layer{l}/dW"), dw[l].band_check(&exact.grads[l].dw, k_sigma)));
        if l + 1 < n_layers {
            out.push((format!("layer{}/dX", l + 1), dx[l].band_check(&exact.output_grads[l], k_sigma)));
        }
    }
    Ok(out)
}

/// Every sketch kind at `p = 0.5` on a random 3-layer MLP.
pub fn unbiasedness_suite(cfg: &DiagnosticsConfig) -> anyhow::Result<Vec<CheckResult>> {
    let inst = MlpInstance::random(&[6, 10, 10, 4], 5, cfg.seed)?;
    let mut results = Vec::new();
    for kind in SketchKind::ALL.into_iter().filter(|&k| k != SketchKind::ExactIdentity) {
        let spec = SketchOperatorSpec::new(kind, Budget::Fraction(0.5));
        let checks = mlp_unbiasedness(&inst, spec, cfg.n_draws, cfg.seed, cfg.k_sigma, cfg.fault)?;
        let worst = checks.iter().map(|(_, c)| c.worst_z).fold(0.0, f64::max);
        let failed: Vec<&str> = checks.iter().filter(|(_, c)| !c.passed()).map(|(n, _)| n.as_str()).collect();
        let entries: usize = checks.iter().map(|(_, c)| c.entries).sum();
        results.push(CheckResult {
            name: format!("unbiasedness/{}", spec.label()),
            passed: failed.is_empty(),
            measured: worst,
            expected: cfg.k_sigma,
            detail: if failed.is_empty() {
                format!("worst |z| over {entries} entries")
            } else {
                format!("biased blocks: {}", failed.join(" "))
            },
        });
    }
    Ok(results)
}

/// Closed-form vs Monte-Carlo distortion, and the rank-constrained sketch
/// never exceeding the diagonal one.
pub fn distortion_suite(cfg: &DiagnosticsConfig) -> anyhow::Result<Vec<CheckResult>> {
    let mut rng = stream(cfg.seed, LANE_DIAGNOSTICS, 2);
    let j = uniform(5, 8, &mut rng);
    let g = GradBatch::from_columns(uniform(8, 6, &mut rng));
    let mut results = Vec::new();
    for spec in [
        SketchOperatorSpec::new(SketchKind::DiagonalSketch, Budget::Count(3)).with_correlated(false),
        SketchOperatorSpec::new(SketchKind::RankConstrainedSketch, Budget::Count(3)),
    ] {
        let r = estimate_distortion(&j, &g, &spec, cfg.n_draws, &mut rng)?;
        let analytic = r.analytic.expect("closed form exists");
        results.push(CheckResult {
            name: format!("distortion/{}", spec.label()),
            passed: r.agrees(cfg.k_sigma) == Some(true),
            measured: r.mc_mean,
            expected: analytic,
            detail: format!("se {:.3e}, z {:.2}", r.mc_std_error, r.z_score().unwrap_or(0.0)),
        });
    }
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..50 {
        let j = uniform(5, 8, &mut rng);
        let g = GradBatch::from_columns(uniform(8, 6, &mut rng));
        for r in 1..=8 {
            let ds = analytic_distortion(&j, &g, &SketchOperatorSpec::new(SketchKind::DiagonalSketch, Budget::Count(r)).with_correlated(false))?
                .expect("independent DS has a closed form");
            let rcs = analytic_distortion(&j, &g, &SketchOperatorSpec::new(SketchKind::RankConstrainedSketch, Budget::Count(r)))?
                .expect("RCS has a closed form");
            worst_gap = worst_gap.max(rcs - ds * (1.0 + 1e-9));
        }
    }
    results.push(CheckResult {
        name: "distortion/rcs_le_ds".into(),
        passed: worst_gap <= 1e-12,
        measured: worst_gap,
        expected: 0.0,
        detail: "max of RCS − DS over 50 instances and all budgets".into(),
    });
    Ok(results)
}

/// Variance propagation identity on chains of two and three nodes.
pub fn decomposition_suite(cfg: &DiagnosticsConfig) -> anyhow::Result<Vec<CheckResult>> {
    let mut rng = stream(cfg.seed, LANE_DIAGNOSTICS, 3);
    let mut results = Vec::new();
    for len in [2usize, 3] {
        let dims: Vec<usize> = [6, 5, 7, 4][..=len].to_vec();
        let weights: Vec<DenseMatrix> = dims.windows(2).map(|d| uniform(d[0], d[1], &mut rng)).collect();
        let kinds = [SketchKind::ProxyL1, SketchKind::PerColumn, SketchKind::DiagonalSketch];
        let sketches = kinds[..len].iter().map(|&k| SketchOperatorSpec::new(k, Budget::Fraction(0.5))).collect();
        let chain = LinearChain::new(weights, sketches)?;
        let seed = uniform(4, dims[0], &mut rng);
        let report = variance_decomposition_check(&chain, &seed, cfg.n_draws, &mut rng)?;
        for (l, level) in report.levels.iter().enumerate() {
            let z = if level.residual.std_error() > 0.0 { level.residual.mean() / level.residual.std_error() } else { 0.0 };
            results.push(CheckResult {
                name: format!("decomposition/chain{len}/node{l}"),
                passed: level.holds(cfg.k_sigma),
                measured: level.lhs.mean(),
                expected: level.local.mean() + level.propagated.mean(),
                detail: format!("residual z {z:.2}"),
            });
        }
    }
    Ok(results)
}

/// Expected error of the optimal unbiased rank-2 sketch of `diag(3, 2, 1)`.
pub fn lowrank_check(cfg: &DiagnosticsConfig) -> anyhow::Result<CheckResult> {
    let m = DenseMatrix::from_diag(&[3.0, 2.0, 1.0]);
    let sketcher = LowRankSketcher::new(&m, 2)?;
    let mut rng = stream(cfg.seed, LANE_DIAGNOSTICS, 4);
    let mut err = RunningStats::new();
    for _ in 0..cfg.n_draws {
        err.push(sketcher.draw(&mut rng).sub(&m).frobenius_sq());
    }
    let expected = sketcher.expected_sq_error();
    Ok(CheckResult {
        name: "lowrank/diag_3_2_1".into(),
        passed: (err.mean() - expected).abs() <= cfg.k_sigma * err.std_error(),
        measured: err.mean(),
        expected,
        detail: format!("se {:.3e}", err.std_error()),
    })
}

pub fn run_diagnostics(cfg: &DiagnosticsConfig) -> anyhow::Result<DiagnosticsReport> {
    if cfg.n_draws < MIN_DRAWS {
        bail!("n_draws = {} is below the minimum of {MIN_DRAWS}", cfg.n_draws);
    }
    let mut checks = vec![sampler_marginals(cfg)?, lowrank_check(cfg)?];
    checks.extend(unbiasedness_suite(cfg)?);
    checks.extend(distortion_suite(cfg)?);
    checks.extend(decomposition_suite(cfg)?);
    Ok(DiagnosticsReport { checks })
}
