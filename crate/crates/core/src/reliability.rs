//! Closed-form system reliability under crash and Byzantine LP failures,
//! with and without the distinct-LP placement constraint, plus a Monte
//! Carlo placement oracle that validates the formulas and a replication-
//! level selector.
//!
//! All combinatorics run in log space: binomial coefficients at the
//! interesting sizes overflow u64, and the `[...]^N` exponentiations with
//! N up to 10^6 would otherwise underflow to zero spuriously. Results are
//! exact 1.0 inside the tolerance thresholds by construction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::{majority_threshold, EntityId, FailureModel, InstanceId};
use crate::replication::place_instances;

#[derive(Debug, Error, PartialEq)]
pub enum ReliabilityError {
    #[error("replicas M={m} must satisfy 1 <= M <= L={l}")]
    ReplicasOutOfRange { m: u32, l: u32 },
    #[error("failed LPs X={x} must be at most L={l}")]
    FailuresExceedLps { x: u32, l: u32 },
    #[error("a query needs at least one LP and one entity")]
    EmptySystem,
    #[error("survivor count k={k} must be at most M={m}")]
    SurvivorsOutOfRange { k: u32, m: u32 },
    #[error("failure rate and duration must be finite and non-negative")]
    InvalidRate,
    #[error("required replication M={required} exceeds available LPs L={l}")]
    Unsatisfiable { required: u64, l: u32 },
    #[error("Monte Carlo runs need at least one trial")]
    NoTrials,
    #[error("Monte Carlo runs are limited to u32 entities (got {n})")]
    TooManyEntitiesForMonteCarlo { n: u64 },
}

/// The (L, N, M, X) tuple every reliability formula is evaluated at:
/// `lps` LPs of which `failed` crash, `entities` entities replicated
/// `replicas` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReliabilityQuery {
    pub lps: u32,
    pub entities: u64,
    pub replicas: u32,
    pub failed: u32,
}

impl ReliabilityQuery {
    pub fn new(lps: u32, entities: u64, replicas: u32, failed: u32) -> Self {
        ReliabilityQuery { lps, entities, replicas, failed }
    }

    fn validate_common(&self) -> Result<(), ReliabilityError> {
        if self.lps == 0 || self.entities == 0 {
            return Err(ReliabilityError::EmptySystem);
        }
        if self.failed > self.lps {
            return Err(ReliabilityError::FailuresExceedLps { x: self.failed, l: self.lps });
        }
        Ok(())
    }

    /// Bounds for the constrained formulas: additionally 1 <= M <= L.
    pub fn validate(&self) -> Result<(), ReliabilityError> {
        self.validate_common()?;
        if self.replicas == 0 || self.replicas > self.lps {
            return Err(ReliabilityError::ReplicasOutOfRange { m: self.replicas, l: self.lps });
        }
        Ok(())
    }

    /// Bounds for the unconstrained (with-replacement) formula, where
    /// M may exceed L.
    pub fn validate_unconstrained(&self) -> Result<(), ReliabilityError> {
        self.validate_common()?;
        if self.replicas == 0 {
            return Err(ReliabilityError::ReplicasOutOfRange { m: self.replicas, l: self.lps });
        }
        Ok(())
    }
}

/// Per-LP failure rate `lambda` and run duration `t`, in matching units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureRate {
    pub lambda: f64,
    pub t: f64,
}

impl FailureRate {
    pub fn new(lambda: f64, t: f64) -> Self {
        FailureRate { lambda, t }
    }

    /// Convenience: rate from a mean time to failure.
    pub fn from_mttf(mttf: f64, t: f64) -> Self {
        FailureRate { lambda: 1.0 / mttf, t }
    }

    fn validate(&self) -> Result<(), ReliabilityError> {
        if !(self.lambda.is_finite() && self.t.is_finite()) || self.lambda < 0.0 || self.t < 0.0 {
            return Err(ReliabilityError::InvalidRate);
        }
        Ok(())
    }
}

/// Which survival rule applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Crash,
    Byzantine,
}

impl From<&FailureModel> for ModelKind {
    fn from(model: &FailureModel) -> Self {
        match model {
            FailureModel::CrashTolerant { .. } => ModelKind::Crash,
            FailureModel::ByzantineTolerant { .. } => ModelKind::Byzantine,
        }
    }
}

/// Natural log of the binomial coefficient C(n, k); negative infinity
/// when the coefficient is zero. Exact to ~1e-15 relative: a sum of at
/// most n/2 log terms, no Stirling approximation.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    let mut acc = 0.0f64;
    for i in 1..=k {
        acc += ((n - k + i) as f64).ln() - (i as f64).ln();
    }
    acc
}

fn pmf_unchecked(q: &ReliabilityQuery, k: u32) -> f64 {
    let (l, x, m) = (q.lps as u64, q.failed as u64, q.replicas as u64);
    let k = k as u64;
    // C(X, M-k) * C(L-X, k) / C(L, M); the guards (k > L-X or M-k > X)
    // fall out of ln_choose returning -inf.
    if m < k {
        return 0.0;
    }
    (ln_choose(x, m - k) + ln_choose(l - x, k) - ln_choose(l, m)).exp()
}

/// Probability that exactly `k` of an entity's M instances survive when
/// X of L LPs crash, under constrained placement (the without-replacement
/// urn).
pub fn surviving_pmf(q: &ReliabilityQuery, k: u32) -> Result<f64, ReliabilityError> {
    q.validate()?;
    if k > q.replicas {
        return Err(ReliabilityError::SurvivorsOutOfRange { k, m: q.replicas });
    }
    Ok(pmf_unchecked(q, k))
}

/// System reliability under the crash model with constrained placement:
/// exactly 1 while X < M, then `[1 - C(X,M)/C(L,M)]^N`.
pub fn r_crash(q: &ReliabilityQuery) -> Result<f64, ReliabilityError> {
    q.validate()?;
    if q.failed < q.replicas {
        return Ok(1.0);
    }
    let ln_ratio = ln_choose(q.failed as u64, q.replicas as u64)
        - ln_choose(q.lps as u64, q.replicas as u64);
    let per_entity_loss = ln_ratio.exp();
    Ok(power_of_complement(per_entity_loss, q.entities))
}

/// System reliability under the Byzantine model: exactly 1 while
/// X < ceil((M+1)/2), then the per-entity majority-survival probability
/// raised to N. The summation stops at M because the pmf vanishes above
/// it.
pub fn r_byzantine(q: &ReliabilityQuery) -> Result<f64, ReliabilityError> {
    q.validate()?;
    let threshold = majority_threshold(q.replicas);
    if q.failed < threshold {
        return Ok(1.0);
    }
    // Whichever sum is smaller carries better relative precision.
    let head: f64 = (0..threshold).map(|k| pmf_unchecked(q, k)).sum();
    let ln_base = if head > 0.5 {
        let tail: f64 = (threshold..=q.replicas).map(|k| pmf_unchecked(q, k)).sum();
        tail.ln()
    } else {
        (-head).ln_1p()
    };
    Ok((q.entities as f64 * ln_base.min(0.0)).exp().clamp(0.0, 1.0))
}

/// System reliability under the crash model *without* the placement
/// constraint (the with-replacement urn): `[1 - (X/L)^M]^N`. Strictly
/// below 1 for any X >= 1 because all replicas of an entity may land on
/// one crashed LP.
pub fn r_crash_unconstrained(q: &ReliabilityQuery) -> Result<f64, ReliabilityError> {
    q.validate_unconstrained()?;
    if q.failed == 0 {
        return Ok(1.0);
    }
    let ln_p_all_dead = q.replicas as f64 * (q.failed as f64 / q.lps as f64).ln();
    Ok(power_of_complement(ln_p_all_dead.exp(), q.entities))
}

// (1 - loss)^n via ln_1p, stable for loss near 0 and near 1.
fn power_of_complement(loss: f64, n: u64) -> f64 {
    let ln_base = (-loss).ln_1p().min(0.0);
    (n as f64 * ln_base).exp().clamp(0.0, 1.0)
}

/// Probability that none of `l` LPs fails for the whole run: the
/// series-system law `e^(-L * lambda * t)`.
pub fn series_reliability(l: u32, rate: FailureRate) -> Result<f64, ReliabilityError> {
    rate.validate()?;
    Ok((-(l as f64) * rate.lambda * rate.t).exp())
}

/// Expected number of LP failures over the run: `L * lambda * t`.
pub fn expected_failures(l: u32, rate: FailureRate) -> Result<f64, ReliabilityError> {
    rate.validate()?;
    Ok(l as f64 * rate.lambda * rate.t)
}

/// Smallest replication degree whose reliability is exactly 1 at the
/// expected failure count `X = floor(L * lambda * t)`:
/// crash model `M = floor(X) + 1` (equivalently the smallest integer
/// exceeding L*lambda*t), Byzantine model the smallest M whose majority
/// threshold exceeds `floor(X)`, i.e. `M = max(1, 2*floor(X))`.
pub fn min_replication(
    kind: ModelKind,
    l: u32,
    rate: FailureRate,
) -> Result<u32, ReliabilityError> {
    let expected = expected_failures(l, rate)?;
    let floor_x = expected.floor();
    let required: u64 = match kind {
        ModelKind::Crash => floor_x as u64 + 1,
        ModelKind::Byzantine => ((2.0 * floor_x) as u64).max(1),
    };
    if required > l as u64 {
        return Err(ReliabilityError::Unsatisfiable { required, l });
    }
    Ok(required as u32)
}

/// Monte Carlo estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

impl McEstimate {
    /// Absolute deviation from `reference` measured in standard errors;
    /// infinite when stderr is zero and the values differ.
    pub fn sigmas_from(&self, reference: f64) -> f64 {
        let diff = (self.estimate - reference).abs();
        if diff == 0.0 {
            0.0
        } else if self.stderr == 0.0 {
            f64::INFINITY
        } else {
            diff / self.stderr
        }
    }
}

/// Independent placement oracle for the closed forms. Every trial places
/// all N x M instances (with or without the constraint), crashes a
/// uniform random X-subset of LPs and checks the survival rule. Trials
/// draw from per-trial ChaCha streams derived from one seed, so the
/// result is independent of any batching or parallel split of the trial
/// range.
pub fn monte_carlo_reliability(
    q: &ReliabilityQuery,
    constrained: bool,
    kind: ModelKind,
    trials: u64,
    seed: u64,
) -> Result<McEstimate, ReliabilityError> {
    if constrained {
        q.validate()?;
    } else {
        q.validate_unconstrained()?;
    }
    if trials == 0 {
        return Err(ReliabilityError::NoTrials);
    }
    let entities: u32 = q
        .entities
        .try_into()
        .map_err(|_| ReliabilityError::TooManyEntitiesForMonteCarlo { n: q.entities })?;
    let threshold = match kind {
        ModelKind::Crash => 1,
        ModelKind::Byzantine => majority_threshold(q.replicas),
    };

    let mut successes = 0u64;
    let mut crashed = vec![false; q.lps as usize];
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial + 1);

        let placement = place_instances(entities, q.replicas, q.lps, &mut rng, constrained)
            .expect("query bounds were validated");
        crashed.iter_mut().for_each(|c| *c = false);
        for lp in rand::seq::index::sample(&mut rng, q.lps as usize, q.failed as usize) {
            crashed[lp] = true;
        }

        let survived = (0..entities).all(|e| {
            let mut alive = 0u32;
            for r in 0..q.replicas {
                let lp = placement.lp_of(InstanceId::new(EntityId(e), r));
                if !crashed[lp.0 as usize] {
                    alive += 1;
                    if alive >= threshold {
                        return true;
                    }
                }
            }
            false
        });
        if survived {
            successes += 1;
        }
    }

    let estimate = successes as f64 / trials as f64;
    let stderr = (estimate * (1.0 - estimate) / trials as f64).sqrt();
    Ok(McEstimate { estimate, stderr })
}
