use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::{Adam, Binder, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{points_to_tensor, ContextPlan, Point, Rotation};
use crate::nets::Classifier;
use crate::seeding;

/// Largest per-point noise scale.
pub const SIGMA_CAP: f64 = 0.08;
/// Smallest per-point noise scale.
pub const SIGMA_MIN: f64 = 1e-4;
/// `½·ln(2πe)`, the entropy offset of a one-dimensional Gaussian.
pub const HALF_LOG_2PIE: f64 = 1.418_938_533_204_672_7;

/// Per-point isotropic noise scales and their entropies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaField {
    sigma: Vec<f64>,
}

impl SigmaField {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::Count("empty sigma field".into()));
        }
        if let Some((i, s)) = sigma
            .iter()
            .enumerate()
            .find(|(_, s)| !(**s >= SIGMA_MIN && **s <= SIGMA_CAP))
        {
            return Err(Error::Contract(format!(
                "sigma[{i}] = {s} outside [{SIGMA_MIN}, {SIGMA_CAP}]"
            )));
        }
        Ok(SigmaField { sigma })
    }

    /// Field from log-scales, clamped into `[SIGMA_MIN, SIGMA_CAP]`. A
    /// log-scale at or beyond a bound maps to that bound exactly.
    pub fn from_log(rho: &[f64]) -> Result<Self> {
        let (lo, hi) = (SIGMA_MIN.ln(), SIGMA_CAP.ln());
        Self::new(
            rho.iter()
                .map(|&r| {
                    if r >= hi {
                        SIGMA_CAP
                    } else if r <= lo {
                        SIGMA_MIN
                    } else {
                        r.exp()
                    }
                })
                .collect(),
        )
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// `H_i = ln σ_i + ½·ln(2πe)` per point.
    pub fn entropies(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s.ln() + HALF_LOG_2PIE).collect()
    }

    /// `H(X') = Σ_i H_i`.
    pub fn total_entropy(&self) -> f64 {
        self.entropies().iter().sum()
    }
}

/// How the σ optimization is run and calibrated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigmaOptConfig {
    /// The target distance is `target_factor × inherent variance`.
    pub target_factor: f64,
    /// Fixed target distance, overriding the inherent-variance policy.
    pub target_distance: Option<f64>,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Budget of λ evaluations, both bounds included.
    pub max_evals: usize,
    /// Relative tolerance on the achieved distance.
    pub tolerance: f64,
    pub lr: f64,
    pub steps: usize,
    /// Monte-Carlo noise draws per optimizer step.
    pub mc_samples: usize,
    /// Baseline noise for the inherent variance.
    pub sigma0: f64,
    pub variance_samples: usize,
    /// Starting σ of the bound evaluations. By default the uniform σ that
    /// meets the target to first order, `σ₀·√(T/v₀)`.
    pub init_sigma: Option<f64>,
    /// Noise draws for the achieved-distance estimate after each evaluation.
    pub eval_samples: usize,
}

impl Default for SigmaOptConfig {
    fn default() -> Self {
        SigmaOptConfig {
            target_factor: 2.0,
            target_distance: None,
            lambda_lo: 1e-3,
            lambda_hi: 1e3,
            max_evals: 12,
            tolerance: 0.1,
            lr: 0.01,
            steps: 300,
            mc_samples: 8,
            sigma0: 0.01,
            variance_samples: 64,
            init_sigma: None,
            eval_samples: 32,
        }
    }
}

impl SigmaOptConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("target_factor", self.target_factor),
            ("lambda_lo", self.lambda_lo),
            ("lambda_hi", self.lambda_hi),
            ("tolerance", self.tolerance),
            ("lr", self.lr),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Contract(format!("sigma config `{name}` = {v} must be positive")));
        }
        if self.sigma0 < 0.0 {
            return Err(Error::Contract("sigma config `sigma0` must be ≥ 0".into()));
        }
        if self.tolerance >= 1.0 || self.lambda_lo >= self.lambda_hi {
            return Err(Error::Contract("sigma config needs tolerance < 1 and lambda_lo < lambda_hi".into()));
        }
        if self.max_evals < 2 || self.steps == 0 || self.mc_samples == 0 || self.eval_samples == 0 {
            return Err(Error::Contract("sigma config counts must allow ≥ 2 evaluations and ≥ 1 step/sample".into()));
        }
        if let Some(s) = self.init_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Contract(format!("sigma config `init_sigma` = {s} must be positive")));
            }
        }
        if let Some(t) = self.target_distance {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Contract(format!("target distance {t} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }
}

/// One λ tried by the calibration search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaEval {
    pub lambda: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SigmaOutcome {
    pub field: SigmaField,
    pub lambda: f64,
    /// Achieved expected squared feature distance at `field`.
    pub distance: f64,
    pub target: f64,
    pub inherent_variance: f64,
    pub evals: Vec<LambdaEval>,
}

/// The tapped feature of a cloud, optionally rotated before the network,
/// with contexts frozen by a plan.
pub struct Probe<'a> {
    pub model: &'a Classifier,
    pub plan: &'a ContextPlan,
    pub points: Tensor,
    pub rotation: Option<Rotation>,
}

impl<'a> Probe<'a> {
    pub fn new(model: &'a Classifier, plan: &'a ContextPlan, points: &[Point]) -> Self {
        Probe {
            model,
            plan,
            points: points_to_tensor(points),
            rotation: None,
        }
    }

    pub fn rotated(mut self, rotation: Rotation) -> Self {
        self.rotation = Some(rotation);
        self
    }

    fn n(&self) -> usize {
        self.points.dims2().1
    }

    fn tap<'g>(&self, binder: &Binder<'_, 'g>, x: Var<'g>) -> Result<Var<'g>> {
        let g = binder.graph();
        let x = match &self.rotation {
            Some(r) => g.constant(r.to_tensor()).matmul(x)?,
            None => x,
        };
        Ok(self.model.forward(binder, x, self.plan)?.tap)
    }

    /// Feature of the unperturbed cloud.
    pub fn clean(&self) -> Result<Vec<f64>> {
        let g = Graph::new();
        let binder = Binder::new(self.model.params(), &g, false);
        Ok(self.tap(&binder, g.constant(self.points.clone()))?.to_vec())
    }

    /// `‖h(X + δ) − f‖²` for an explicit perturbation `[3 × n]`.
    pub fn distance(&self, clean: &[f64], delta: &[f64]) -> Result<f64> {
        let data: Vec<f64> = self.points.data().iter().zip(delta).map(|(a, d)| a + d).collect();
        let g = Graph::new();
        let binder = Binder::new(self.model.params(), &g, false);
        let x = g.constant(Tensor::matrix(3, self.n(), data)?);
        let f = self.tap(&binder, x)?.to_vec();
        Ok(f.iter().zip(clean).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    /// Squared feature distance under noise `σ ⊙ u` and its gradient in `ρ = ln σ`.
    fn distance_grad(&self, clean: &[f64], rho: &[f64], u: &Tensor) -> Result<(f64, Vec<f64>)> {
        let g = Graph::new();
        let binder = Binder::new(self.model.params(), &g, false);
        let rho_v = g.input(Tensor::vector(rho.to_vec()));
        let delta = g.constant(u.clone()).scale_columns(rho_v.exp())?;
        let x = g.constant(self.points.clone()).add(delta)?;
        let diff = self.tap(&binder, x)?.sub(g.constant(Tensor::vector(clean.to_vec())))?;
        let d = diff.square().sum();
        let grads = g.backward(d)?;
        Ok((d.item(), grads.tensor(rho_v).into_data()))
    }
}

fn normal_tensor(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::matrix(3, n, (0..3 * n).map(|_| rng.sample(StandardNormal)).collect()).expect("3 × n")
}

/// Mean of `‖h(X + σ₀·u) − h(X)‖²` over standard normal `u`.
pub fn inherent_variance(probe: &Probe<'_>, sigma0: f64, samples: usize, seed: u64) -> Result<f64> {
    if sigma0 < 0.0 {
        return Err(Error::Contract(format!("sigma0 {sigma0} must be ≥ 0")));
    }
    if samples == 0 {
        return Err(Error::Count("inherent variance needs at least one sample".into()));
    }
    let clean = probe.clean()?;
    let mut rng = seeding::stream(seed, 0, "inherent-variance");
    let mut total = 0.0;
    for _ in 0..samples {
        let u = normal_tensor(&mut rng, probe.n());
        let delta: Vec<f64> = u.data().iter().map(|v| v * sigma0).collect();
        total += probe.distance(&clean, &delta)?;
    }
    Ok(total / samples as f64)
}

struct Evaluated {
    lambda: f64,
    distance: f64,
    rho: Vec<f64>,
}

/// First λ tried: the optimum for any linear feature.
const LAMBDA_START: f64 = 0.5;

/// Maximizes `Σ ln σ_i − λ·(n/T)·E‖h(X + σ⊙u) − f‖²` over `ρ = ln σ` for
/// each λ tried, searching λ so the achieved distance lands within tolerance
/// of the target `T`. Measuring the distance in units of `T/n` makes λ
/// dimensionless: for any linear feature the target is met at λ = ½.
///
/// The search starts at λ = ½ and walks outward by the `1/λ` scaling of the
/// distance until the target is bracketed, never leaving
/// `[lambda_lo, lambda_hi]`; then it narrows the bracket by alternating
/// log-log secant and log-bisection steps. A distance still above the target
/// at `lambda_hi` is a calibration error; one below it with every σ capped
/// (or at `lambda_lo`) is accepted, since no larger field is allowed. Each
/// evaluation warm-starts from the nearest λ evaluated so far. If the budget
/// runs out, the candidate closest to the target is returned.
pub fn optimize_sigma(probe: &Probe<'_>, config: &SigmaOptConfig, seed: u64) -> Result<SigmaOutcome> {
    config.validate()?;
    let n = probe.n();
    let clean = probe.clean()?;
    let inherent = inherent_variance(probe, config.sigma0, config.variance_samples, seed)?;
    let target = config.target_distance.unwrap_or(config.target_factor * inherent);
    let within = |d: f64| (d - target).abs() <= config.tolerance * target;
    let (rho_lo, rho_hi) = (SIGMA_MIN.ln(), SIGMA_CAP.ln());

    // the achieved-distance estimate reuses one noise set for every λ so the
    // search sees a smooth function of σ; it starts with the draws behind the
    // inherent variance, so the initial uniform σ meets the target exactly
    // on linear features
    let eval_noise: Vec<Tensor> = {
        let mut rng = seeding::stream(seed, 0, "inherent-variance");
        (0..config.eval_samples).map(|_| normal_tensor(&mut rng, n)).collect()
    };
    let mut step_rng = seeding::stream(seed, 0, "sigma-steps");

    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::Calibration(format!("target distance {target:e} must be positive")));
    }
    let average_from = config.steps - (config.steps / 2).max(1);

    let run = |lambda: f64, start: &[f64], rng: &mut ChaCha8Rng| -> Result<Evaluated> {
        let mut rho = start.to_vec();
        let mut adam = Adam::new(config.lr, n);
        let scale = lambda * n as f64 / (target * config.mc_samples as f64);
        let mut sum = vec![0.0; n];
        let mut lo_seen = vec![f64::INFINITY; n];
        let mut hi_seen = vec![f64::NEG_INFINITY; n];
        for step in 0..config.steps {
            let mut grad = vec![-1.0; n];
            for _ in 0..config.mc_samples {
                let u = normal_tensor(rng, n);
                let (_, g) = probe.distance_grad(&clean, &rho, &u)?;
                for (acc, v) in grad.iter_mut().zip(&g) {
                    *acc += scale * v;
                }
            }
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericGuard("non-finite gradient in sigma optimization".into()));
            }
            adam.step(&mut rho, &grad);
            for r in &mut rho {
                *r = r.clamp(rho_lo, rho_hi);
            }
            if step >= average_from {
                for i in 0..n {
                    sum[i] += rho[i];
                    lo_seen[i] = lo_seen[i].min(rho[i]);
                    hi_seen[i] = hi_seen[i].max(rho[i]);
                }
            }
        }
        // iterate averaging over the final half; a point pinned to one
        // value throughout keeps it exactly so clamped σ stay on the bound
        let window = (config.steps - average_from) as f64;
        let rho: Vec<f64> = (0..n)
            .map(|i| if lo_seen[i] == hi_seen[i] { lo_seen[i] } else { sum[i] / window })
            .collect();
        let sigma = SigmaField::from_log(&rho)?;
        let mut distance = 0.0;
        for u in &eval_noise {
            let delta: Vec<f64> = (0..3 * n).map(|i| u.data()[i] * sigma.sigma()[i % n]).collect();
            distance += probe.distance(&clean, &delta)?;
        }
        Ok(Evaluated {
            lambda,
            distance: distance / eval_noise.len() as f64,
            rho,
        })
    };

    let finish = |e: &Evaluated, evals: &[Evaluated]| -> Result<SigmaOutcome> {
        Ok(SigmaOutcome {
            field: SigmaField::from_log(&e.rho)?,
            lambda: e.lambda,
            distance: e.distance,
            target,
            inherent_variance: inherent,
            evals: evals
                .iter()
                .map(|e| LambdaEval {
                    lambda: e.lambda,
                    distance: e.distance,
                })
                .collect(),
        })
    };

    let mut evals: Vec<Evaluated> = Vec::with_capacity(config.max_evals);
    let init_sigma = config.init_sigma.unwrap_or(if inherent > 0.0 {
        config.sigma0 * (target / inherent).sqrt()
    } else {
        0.02
    });
    let init = vec![init_sigma.ln().clamp(rho_lo, rho_hi); n];
    let (lambda_lo, lambda_hi) = (config.lambda_lo, config.lambda_hi);

    // bracket in ln λ: distance above target at `a`, at or below at `b`
    let (mut a, mut b): (Option<usize>, Option<usize>) = (None, None);
    let mut lambda = LAMBDA_START.clamp(lambda_lo, lambda_hi);
    while evals.len() < config.max_evals {
        let start = evals
            .iter()
            .min_by(|x, y| {
                (x.lambda.ln() - lambda.ln())
                    .abs()
                    .total_cmp(&(y.lambda.ln() - lambda.ln()).abs())
            })
            .map_or_else(|| init.clone(), |e| e.rho.clone());
        let e = run(lambda, &start, &mut step_rng)?;
        let (d, capped) = (e.distance, e.rho.iter().all(|&r| r == rho_hi));
        evals.push(e);
        let idx = evals.len() - 1;
        // below the target with every σ on the cap (or λ on its lower
        // bound) nothing larger is reachable: the cap binds
        if within(d) || (d <= target && (capped || lambda <= lambda_lo)) {
            return finish(&evals[idx], &evals);
        }
        if d > target {
            if lambda >= lambda_hi {
                return Err(Error::Calibration(format!(
                    "target distance {target:.6e} unreachable: λ = {lambda_hi} still gives {d:.6e}"
                )));
            }
            a = Some(idx);
        } else {
            b = Some(idx);
        }
        lambda = match (a, b) {
            (Some(a), Some(b)) => {
                let (la, lb) = (evals[a].lambda.ln(), evals[b].lambda.ln());
                let (da, db) = (evals[a].distance, evals[b].distance);
                let secant = (evals.len() % 2 == 1 && da > 0.0 && db > 0.0 && da != db).then(|| {
                    let t = (target.ln() - da.ln()) / (db.ln() - da.ln());
                    // keep secant steps inside the bracket interior
                    la + t.clamp(0.05, 0.95) * (lb - la)
                });
                secant.unwrap_or(0.5 * (la + lb)).exp()
            }
            // one-sided: the distance scales like 1/λ for linear features;
            // step at least a factor of two so the bracket closes quickly
            (Some(_), None) => (lambda * (d / target).max(2.0)).min(lambda_hi),
            (None, _) => {
                let ratio = if d > 0.0 { (d / target).min(0.5) } else { 0.5 };
                (lambda * ratio).max(lambda_lo)
            }
        };
    }
    let best = evals
        .iter()
        .filter(|e| e.distance > 0.0)
        .min_by(|x, y| {
            (x.distance / target).ln().abs().total_cmp(&(y.distance / target).ln().abs())
        })
        .unwrap_or(&evals[evals.len() - 1]);
    finish(best, &evals)
}
