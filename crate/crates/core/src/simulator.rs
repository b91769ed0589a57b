//! Exact-event Monte Carlo for the controlled surplus process.
//!
//! Between claims the surplus moves with slope `p[q(1 + η) - η]`; at a claim
//! it drops by `q U` and the elapsed-time clock resets. Ruin is the first
//! time the surplus is strictly negative, whether reached by a claim or by a
//! negative drift crossing zero between claims.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::model::{ModelParams, Policy, State};

/// Paths per parallel work item; fixed so that work splitting never depends
/// on the thread count.
const CHUNK: u64 = 4096;
/// Sub-steps per inter-claim gap for state-dependent retention.
const FLOW_STEPS_PER_GAP: f64 = 20.0;

/// Source of uniform draws in the open interval `(0, 1)`.
pub trait UniformSource {
    fn next_open01(&mut self) -> f64;
}

/// Counter-based stream for one path, keyed by `(seed, path index)`.
pub struct PathStream(ChaCha8Rng);

impl PathStream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        PathStream(rng)
    }
}

impl UniformSource for PathStream {
    #[inline]
    fn next_open01(&mut self) -> f64 {
        // midpoint of one of 2^53 equal cells: never 0 or 1
        ((self.0.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

/// Replays a fixed list of draws; panics when exhausted.
pub struct ScriptedStream {
    draws: Vec<f64>,
    at: usize,
}

impl ScriptedStream {
    pub fn new(draws: Vec<f64>) -> Self {
        ScriptedStream { draws, at: 0 }
    }
}

impl UniformSource for ScriptedStream {
    fn next_open01(&mut self) -> f64 {
        let u = self.draws[self.at];
        self.at += 1;
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Start,
    Claim,
    Ruin,
    Horizon,
    /// Stopped early at or above the barrier, where survival is certain
    /// for a policy that cedes everything.
    Barrier,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Start => "start",
            EventKind::Claim => "claim",
            EventKind::Ruin => "ruin",
            EventKind::Horizon => "horizon",
            EventKind::Barrier => "barrier",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathEvent {
    pub kind: EventKind,
    pub t: f64,
    /// Surplus after the event.
    pub x: f64,
    /// Elapsed time since the last claim, after the event.
    pub w: f64,
    /// Retention applied (claims only).
    pub q: Option<f64>,
    pub claim_size: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    pub ruined: bool,
    pub ruin_time: Option<f64>,
    pub n_claims: usize,
    /// State when the path stopped: at ruin, at the stop time, or at the
    /// barrier when stopping early.
    pub final_state: State,
    pub events: Vec<PathEvent>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimOptions {
    /// Declare survival as soon as the surplus reaches the barrier. Exact
    /// for policies that retain nothing at and above the barrier.
    pub early_stop: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateCI {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: u64,
    pub seed: u64,
}

impl EstimateCI {
    pub fn from_counts(survived: u64, n_paths: u64, seed: u64) -> Self {
        let mean = survived as f64 / n_paths as f64;
        EstimateCI {
            mean,
            std_error: (mean * (1.0 - mean) / n_paths as f64).sqrt(),
            n_paths,
            seed,
        }
    }
}

pub fn simulate_path<R: UniformSource>(
    params: &ModelParams,
    policy: &Policy,
    init: &State,
    stream: &mut R,
    opts: SimOptions,
) -> Result<PathRecord> {
    let mut events = Vec::new();
    let mut rec = run_path(params, policy, init, params.horizon, stream, opts, Some(&mut events))?;
    rec.events = events;
    Ok(rec)
}

/// Like [`simulate_path`] but stops at time `stop <= T` instead of the
/// horizon; no events are recorded.
pub fn simulate_until<R: UniformSource>(
    params: &ModelParams,
    policy: &Policy,
    init: &State,
    stop: f64,
    stream: &mut R,
) -> Result<PathRecord> {
    if !(stop >= init.s && stop <= params.horizon) {
        return domain(format!("stop time {stop} outside [{}, {}]", init.s, params.horizon));
    }
    run_path(params, policy, init, stop, stream, SimOptions::default(), None)
}

/// Simulates one path; `start` must lie in `[0, T]` with `0 <= w <= s` and
/// nonnegative surplus.
fn run_path<R: UniformSource>(
    params: &ModelParams,
    policy: &Policy,
    init: &State,
    horizon: f64,
    stream: &mut R,
    opts: SimOptions,
    mut log: Option<&mut Vec<PathEvent>>,
) -> Result<PathRecord> {
    if !(0.0..=params.horizon).contains(&init.s) || !(init.w >= 0.0 && init.w <= init.s) || !(init.x >= 0.0) {
        return domain(format!(
            "initial state ({}, {}, {}) outside the closed domain",
            init.s, init.x, init.w
        ));
    }
    let flow_step = policy.flow_step();
    let (mut t, mut x, mut w) = (init.s, init.x, init.w);
    let mut n_claims = 0;
    let push = |log: &mut Option<&mut Vec<PathEvent>>, e: PathEvent| {
        if let Some(l) = log.as_deref_mut() {
            l.push(e);
        }
    };
    push(&mut log, PathEvent { kind: EventKind::Start, t, x, w, q: None, claim_size: None });

    let finish = |t: f64, x: f64, w: f64, n_claims: usize, ruin_time: Option<f64>| PathRecord {
        ruined: ruin_time.is_some(),
        ruin_time,
        n_claims,
        final_state: State::new(t, x, w),
        events: Vec::new(),
    };

    loop {
        if opts.early_stop && x >= params.barrier_unchecked(t) {
            push(&mut log, PathEvent { kind: EventKind::Barrier, t, x, w, q: None, claim_size: None });
            return Ok(finish(t, x, w, n_claims, None));
        }
        let gap = params.hazard.sample_interarrival(w, stream.next_open01())?;
        let claim_at = t + gap;
        let seg_end = claim_at.min(horizon);

        // deterministic flow on [t, seg_end]
        let n_sub = match flow_step {
            None => 1,
            Some(h) => {
                let h = h.min((seg_end - t) / FLOW_STEPS_PER_GAP);
                if h > 0.0 { ((seg_end - t) / h).ceil().max(1.0) as usize } else { 1 }
            }
        };
        let t0 = t;
        let w0 = w;
        let span = seg_end - t0;
        for m in 0..n_sub {
            let a = t0 + span * (m as f64 / n_sub as f64);
            let b = if m + 1 == n_sub { seg_end } else { t0 + span * ((m + 1) as f64 / n_sub as f64) };
            let q = policy.evaluate(&State::new(a, x, w0 + (a - t0)));
            let slope = params.drift(q);
            let mut x_end = x + slope * (b - a);
            if q == 0.0 && params.on_or_above_barrier(a, x) {
                // riding the barrier: the drift matches its slope exactly
                x_end = x_end.max(params.barrier_unchecked(b));
            }
            if x_end < 0.0 {
                let hit = a + x / (-slope);
                if hit >= b {
                    // reaches zero exactly at the end of the step, up to rounding
                    x = 0.0;
                    continue;
                }
                push(&mut log, PathEvent {
                    kind: EventKind::Ruin,
                    t: hit,
                    x: 0.0,
                    w: w0 + (hit - t0),
                    q: None,
                    claim_size: None,
                });
                return Ok(finish(hit, 0.0, w0 + (hit - t0), n_claims, Some(hit)));
            }
            x = x_end;
        }
        t = seg_end;
        w = w0 + span;

        if claim_at >= horizon {
            push(&mut log, PathEvent { kind: EventKind::Horizon, t: horizon, x, w, q: None, claim_size: None });
            return Ok(finish(horizon, x, w, n_claims, None));
        }

        let q = policy.evaluate(&State::new(t, x, w));
        let size = params.claims.sample(stream.next_open01())?;
        x -= q * size;
        w = 0.0;
        n_claims += 1;
        if x < 0.0 {
            push(&mut log, PathEvent { kind: EventKind::Claim, t, x, w, q: Some(q), claim_size: Some(size) });
            push(&mut log, PathEvent { kind: EventKind::Ruin, t, x, w, q: None, claim_size: None });
            return Ok(finish(t, x, w, n_claims, Some(t)));
        }
        push(&mut log, PathEvent { kind: EventKind::Claim, t, x, w, q: Some(q), claim_size: Some(size) });
    }
}

/// Survival indicator of path `index` under the `(seed, index)` stream.
pub fn path_survives(
    params: &ModelParams,
    policy: &Policy,
    init: &State,
    seed: u64,
    index: u64,
    opts: SimOptions,
) -> Result<bool> {
    let mut stream = PathStream::new(seed, index);
    Ok(!run_path(params, policy, init, params.horizon, &mut stream, opts, None)?.ruined)
}

/// Bernoulli estimate of the survival probability from `init`.
pub fn estimate_survival(
    params: &ModelParams,
    policy: &Policy,
    init: &State,
    n_paths: u64,
    seed: u64,
) -> Result<EstimateCI> {
    estimate_survival_with(params, policy, init, n_paths, seed, SimOptions::default())
}

pub fn estimate_survival_with(
    params: &ModelParams,
    policy: &Policy,
    init: &State,
    n_paths: u64,
    seed: u64,
    opts: SimOptions,
) -> Result<EstimateCI> {
    let survived = count_paths(n_paths, |index| path_survives(params, policy, init, seed, index, opts))?;
    Ok(EstimateCI::from_counts(survived, n_paths, seed))
}

/// Runs `n_paths` independent trials in fixed-size chunks and counts the
/// successes; the total is independent of scheduling.
pub fn count_paths<F>(n_paths: u64, trial: F) -> Result<u64>
where
    F: Fn(u64) -> Result<bool> + Sync,
{
    if n_paths == 0 {
        return domain("n_paths must be >= 1");
    }
    let chunks = n_paths.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n_paths);
            let mut hits = 0u64;
            for index in lo..hi {
                hits += trial(index)? as u64;
            }
            Ok(hits)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

/// Sum and sum of squares of `f(index)` over `0..n_paths`, with the same
/// chunking as [`count_paths`]. Chunks are summed sequentially and chunk sums
/// are combined in index order, so the result is reproducible bit for bit.
pub fn sum_paths<F>(n_paths: u64, f: F) -> Result<(f64, f64)>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    if n_paths == 0 {
        return domain("n_paths must be >= 1");
    }
    let chunks = n_paths.div_ceil(CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n_paths);
            let mut sum = 0.0;
            let mut sq = 0.0;
            for index in lo..hi {
                let v = f(index)?;
                sum += v;
                sq += v * v;
            }
            Ok((sum, sq))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(partial.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1)))
}
