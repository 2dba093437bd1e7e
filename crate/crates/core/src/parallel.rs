//! Execution plans for the ray-tracing and summation phases.
//!
//! Every plan produces bit-identical fields: per-observer accumulators are
//! always folded in ascending global beam index, across chunks and across
//! split subtasks alike.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::beamtrace::{trace, Atmosphere, BeamPath, LaunchGrid, SourceSpec, TraceConfig, TraceError};
use crate::gbs::{accumulate, beam_contribution, FieldResult, GbsError, GbsParams, WorkCount};
use crate::scene::{Scene, Vec3};

pub const DEFAULT_SPLIT_THRESHOLD: usize = 4096;

/// Safety factor applied to the measured size of one traced ray.
pub const PER_RAY_SAFETY: f64 = 1.5;

pub const TIMING_CSV_HEADER: &str =
    "mode,workers,rays,observers,chunks,rt_s,gbs_s,total_s,rt_share,gbs_share,speedup";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Gbs(#[from] GbsError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error("invalid execution plan: {0}")]
    Plan(String),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChunkError {
    #[error("per-ray size must be positive")]
    ZeroPerRay,
    #[error("memory budget {budget} B cannot hold one ray of {per_ray} B")]
    BudgetTooSmall { budget: usize, per_ray: usize },
    #[error("chunk sizes sum to {sum}, expected {total}")]
    SizeMismatch { sum: usize, total: usize },
    #[error("empty chunk at position {0}")]
    EmptyChunk(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Sequential,
    Flat,
    Dynamic,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Sequential, Mode::Flat, Mode::Dynamic];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Sequential => "seq",
            Mode::Flat => "flat",
            Mode::Dynamic => "dyn",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seq" | "sequential" => Ok(Mode::Sequential),
            "flat" => Ok(Mode::Flat),
            "dyn" | "dynamic" => Ok(Mode::Dynamic),
            other => Err(format!("unknown mode '{other}' (expected seq, flat or dyn)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecPlan {
    pub mode: Mode,
    pub workers: usize,
    /// Beams per observer task above which a summation task splits.
    pub split_threshold: usize,
    /// `None` means no memory bound (a single chunk).
    pub memory_budget: Option<usize>,
}

impl ExecPlan {
    pub fn new(mode: Mode, workers: usize) -> Self {
        ExecPlan {
            mode,
            workers,
            split_threshold: DEFAULT_SPLIT_THRESHOLD,
            memory_budget: None,
        }
    }

    pub fn sequential() -> Self {
        ExecPlan::new(Mode::Sequential, 1)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.workers == 0 {
            return Err(PipelineError::Plan("workers must be at least 1".into()));
        }
        if self.split_threshold == 0 {
            return Err(PipelineError::Plan("split threshold must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    pub chunk_sizes: Vec<usize>,
}

impl ChunkPlan {
    pub fn single(total: usize) -> Self {
        ChunkPlan {
            chunk_sizes: if total == 0 { vec![] } else { vec![total] },
        }
    }

    pub fn from_sizes(sizes: Vec<usize>, total: usize) -> Result<Self, ChunkError> {
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(ChunkError::EmptyChunk(i));
        }
        let sum: usize = sizes.iter().sum();
        if sum != total {
            return Err(ChunkError::SizeMismatch { sum, total });
        }
        Ok(ChunkPlan { chunk_sizes: sizes })
    }

    /// `n` chunks whose sizes differ by at most one.
    pub fn even(total: usize, n: usize) -> Self {
        let n = n.clamp(1, total.max(1));
        let (q, r) = (total / n, total % n);
        let sizes = (0..n).map(|i| q + usize::from(i < r)).filter(|&s| s > 0).collect();
        ChunkPlan { chunk_sizes: sizes }
    }

    pub fn n_chunks(&self) -> usize {
        self.chunk_sizes.len()
    }

    pub fn total(&self) -> usize {
        self.chunk_sizes.iter().sum()
    }

    /// Global ray index ranges, in order.
    pub fn ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.chunk_sizes
            .iter()
            .map(|&n| {
                let r = start..start + n;
                start += n;
                r
            })
            .collect()
    }
}

/// Greedy chunking: full chunks of `floor(budget / per_ray_bytes)` rays, the
/// remainder last.
pub fn plan_chunks(total_rays: usize, memory_budget: usize, per_ray_bytes: usize) -> Result<ChunkPlan, ChunkError> {
    if per_ray_bytes == 0 {
        return Err(ChunkError::ZeroPerRay);
    }
    let cap = memory_budget / per_ray_bytes;
    if cap == 0 {
        return Err(ChunkError::BudgetTooSmall {
            budget: memory_budget,
            per_ray: per_ray_bytes,
        });
    }
    let mut sizes = vec![cap; total_rays / cap];
    if total_rays % cap > 0 {
        sizes.push(total_rays % cap);
    }
    Ok(ChunkPlan { chunk_sizes: sizes })
}

/// Measured per-ray memory estimate: footprint of one traced path times the
/// safety factor.
pub fn per_ray_bytes(path: &BeamPath) -> usize {
    (path.footprint_bytes() as f64 * PER_RAY_SAFETY).ceil() as usize
}

/// A set of independent tasks, each made of `units(task)` ordered units of
/// work. Running a unit range yields a part; parts of one task are merged in
/// ascending range order.
pub trait Workload: Sync {
    type Part: Send;
    type Output: Send;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn units(&self, task: usize) -> usize;

    /// Runs the units `range` of `task`.
    fn run(&self, task: usize, range: Range<usize>) -> Self::Part;

    fn merge(&self, task: usize, parts: Vec<Self::Part>) -> Self::Output;

    fn run_whole(&self, task: usize) -> Self::Output {
        let part = self.run(task, 0..self.units(task));
        self.merge(task, vec![part])
    }
}

pub fn run_sequential<W: Workload>(work: &W) -> Vec<W::Output> {
    (0..work.len()).map(|t| work.run_whole(t)).collect()
}

/// Static partition: the task range is cut into `workers` contiguous blocks,
/// one per worker, each processed to completion.
pub fn run_flat<W: Workload>(work: &W, workers: usize, pool: &rayon::ThreadPool) -> Vec<W::Output> {
    let n = work.len();
    if n == 0 {
        return Vec::new();
    }
    let block = n.div_ceil(workers.max(1));
    let mut out: Vec<Option<W::Output>> = (0..n).map(|_| None).collect();
    pool.install(|| {
        out.par_chunks_mut(block).enumerate().for_each(|(b, slots)| {
            for (i, slot) in slots.iter_mut().enumerate() {
                *slot = Some(work.run_whole(b * block + i));
            }
        });
    });
    out.into_iter().map(|o| o.expect("every task ran")).collect()
}

/// Recursive task splitting: the task range is halved until single tasks
/// remain, and tasks with more than `split_threshold` units are cut into unit
/// subranges. Idle workers steal pending halves and subranges.
pub fn run_dynamic<W: Workload>(work: &W, split_threshold: usize, pool: &rayon::ThreadPool) -> Vec<W::Output> {
    let n = work.len();
    let mut out: Vec<Option<W::Output>> = (0..n).map(|_| None).collect();
    pool.install(|| dynamic_range(work, split_threshold.max(1), 0, &mut out));
    out.into_iter().map(|o| o.expect("every task ran")).collect()
}

fn dynamic_range<W: Workload>(work: &W, threshold: usize, offset: usize, slots: &mut [Option<W::Output>]) {
    match slots.len() {
        0 => {}
        1 => {
            let task = offset;
            let units = work.units(task);
            slots[0] = Some(if units > threshold {
                let pieces: Vec<Range<usize>> = (0..units)
                    .step_by(threshold)
                    .map(|s| s..(s + threshold).min(units))
                    .collect();
                let parts = pieces.into_par_iter().map(|r| work.run(task, r)).collect();
                work.merge(task, parts)
            } else {
                work.run_whole(task)
            });
        }
        len => {
            let (left, right) = slots.split_at_mut(len / 2);
            rayon::join(
                || dynamic_range(work, threshold, offset, left),
                || dynamic_range(work, threshold, offset + len / 2, right),
            );
        }
    }
}

/// Runs `work` under `plan`, using `pool` for the parallel modes.
pub fn execute<W: Workload>(work: &W, plan: &ExecPlan, pool: Option<&rayon::ThreadPool>) -> Vec<W::Output> {
    match (plan.mode, pool) {
        (Mode::Flat, Some(pool)) => run_flat(work, plan.workers, pool),
        (Mode::Dynamic, Some(pool)) => run_dynamic(work, plan.split_threshold, pool),
        _ => run_sequential(work),
    }
}

pub fn build_pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?)
}

/// Ray tracing over one chunk of launch indices: one task per ray.
pub struct TraceWork<'a> {
    pub scene: &'a Scene,
    pub source: &'a SourceSpec,
    pub grid: &'a LaunchGrid,
    pub cfg: &'a TraceConfig,
    pub atmosphere: &'a Atmosphere,
    pub rays: Range<usize>,
}

impl Workload for TraceWork<'_> {
    type Part = Result<BeamPath, TraceError>;
    type Output = Result<BeamPath, TraceError>;

    fn len(&self) -> usize {
        self.rays.len()
    }

    fn units(&self, _task: usize) -> usize {
        1
    }

    fn run(&self, task: usize, _range: Range<usize>) -> Self::Part {
        let launch = self.grid.launch(self.rays.start + task);
        trace(self.scene, self.source, &launch, self.cfg, self.atmosphere)
    }

    fn merge(&self, _task: usize, mut parts: Vec<Self::Part>) -> Self::Output {
        parts.pop().expect("one part per ray")
    }
}

/// Partial summation result over a beam range.
pub enum SumPart {
    /// Accumulator folded from the observer's running sum.
    Folded(Vec<Complex64>),
    /// Per-beam weighted contributions, `None` where the beam did not reach.
    Values(Vec<Option<Vec<Complex64>>>),
}

/// Summation of one chunk of beams at every observer: one task per observer,
/// one unit per beam. Running sums from earlier chunks seed the fold.
pub struct SumWork<'a> {
    pub observers: &'a [Vec3],
    pub paths: &'a [BeamPath],
    pub params: &'a GbsParams,
    /// Observer-major running sums, `observers.len() × n_freq`.
    pub running: &'a [Complex64],
}

impl SumWork<'_> {
    fn seed(&self, task: usize) -> Vec<Complex64> {
        let nf = self.params.n_freq();
        self.running[task * nf..(task + 1) * nf].to_vec()
    }
}

impl Workload for SumWork<'_> {
    type Part = Result<(SumPart, WorkCount), GbsError>;
    type Output = Result<(Vec<Complex64>, WorkCount), GbsError>;

    fn len(&self) -> usize {
        self.observers.len()
    }

    fn units(&self, _task: usize) -> usize {
        self.paths.len()
    }

    fn run(&self, task: usize, beams: Range<usize>) -> Self::Part {
        let observer = &self.observers[task];
        let mut work = WorkCount::default();
        if beams.start == 0 {
            let mut acc = self.seed(task);
            accumulate(observer, &self.paths[beams], self.params, &mut acc, &mut work)?;
            return Ok((SumPart::Folded(acc), work));
        }
        let mut values = Vec::with_capacity(beams.len());
        for path in &self.paths[beams] {
            let mut v = vec![Complex64::new(0.0, 0.0); self.params.n_freq()];
            let any = beam_contribution(observer, path, self.params, &mut v, &mut work)?;
            values.push(any.then_some(v));
        }
        Ok((SumPart::Values(values), work))
    }

    fn merge(&self, task: usize, parts: Vec<Self::Part>) -> Self::Output {
        let mut acc = self.seed(task);
        let mut total = WorkCount::default();
        for part in parts {
            let (part, work) = part?;
            total += work;
            match part {
                SumPart::Folded(a) => acc = a,
                SumPart::Values(values) => {
                    for v in values.into_iter().flatten() {
                        for (a, x) in acc.iter_mut().zip(&v) {
                            *a += *x;
                        }
                    }
                }
            }
        }
        Ok((acc, total))
    }
}

/// Wall-clock split of one pipeline run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTimings {
    pub rt_seconds: f64,
    pub gbs_seconds: f64,
    pub total_seconds: f64,
    pub rt_share: f64,
    pub gbs_share: f64,
    pub speedup_vs_baseline: Option<f64>,
}

impl PhaseTimings {
    pub fn from_durations(rt: Duration, gbs: Duration, total: Duration) -> Self {
        let total_s = total.as_secs_f64().max(rt.as_secs_f64() + gbs.as_secs_f64());
        let share = |d: Duration| if total_s > 0.0 { d.as_secs_f64() / total_s } else { 0.0 };
        PhaseTimings {
            rt_seconds: rt.as_secs_f64(),
            gbs_seconds: gbs.as_secs_f64(),
            total_seconds: total_s,
            rt_share: share(rt),
            gbs_share: share(gbs),
            speedup_vs_baseline: None,
        }
    }

    pub fn with_baseline(mut self, baseline_total_seconds: f64) -> Self {
        if self.total_seconds > 0.0 {
            self.speedup_vs_baseline = Some(baseline_total_seconds / self.total_seconds);
        }
        self
    }

    pub fn csv_row(&self, mode: Mode, workers: usize, rays: usize, observers: usize, chunks: usize) -> String {
        format!(
            "{mode},{workers},{rays},{observers},{chunks},{:.6},{:.6},{:.6},{:.4},{:.4},{}",
            self.rt_seconds,
            self.gbs_seconds,
            self.total_seconds,
            self.rt_share,
            self.gbs_share,
            self.speedup_vs_baseline.map_or(String::new(), |s| format!("{s:.4}")),
        )
    }
}

/// Times a closure on the monotonic clock.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, Duration) {
    let start = Instant::now();
    let r = f();
    (r, start.elapsed())
}

/// Inputs of one pipeline run.
pub struct Pipeline<'a> {
    pub scene: &'a Scene,
    pub source: &'a SourceSpec,
    pub grid: &'a LaunchGrid,
    pub cfg: &'a TraceConfig,
    pub atmosphere: &'a Atmosphere,
    pub observers: &'a [Vec3],
    pub params: &'a GbsParams,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub field: FieldResult,
    pub timings: PhaseTimings,
    pub work: WorkCount,
    pub chunks: ChunkPlan,
}

impl Pipeline<'_> {
    /// Per-ray memory estimate from tracing the first launch.
    pub fn measure_per_ray_bytes(&self) -> Result<usize, PipelineError> {
        let path = trace(self.scene, self.source, &self.grid.launch(0), self.cfg, self.atmosphere)?;
        Ok(per_ray_bytes(&path))
    }

    /// Chunk plan implied by the plan's memory budget.
    pub fn chunk_plan(&self, plan: &ExecPlan) -> Result<ChunkPlan, PipelineError> {
        let total = self.grid.len();
        match plan.memory_budget {
            None => Ok(ChunkPlan::single(total)),
            Some(budget) => Ok(plan_chunks(total, budget, self.measure_per_ray_bytes()?)?),
        }
    }

    pub fn run(&self, plan: &ExecPlan) -> Result<PipelineOutput, PipelineError> {
        let chunks = self.chunk_plan(plan)?;
        self.run_chunked(plan, &chunks)
    }

    /// Per chunk: trace its rays, then fold their contributions into the
    /// per-observer running sums. SPL is finalised after the last chunk.
    pub fn run_chunked(&self, plan: &ExecPlan, chunks: &ChunkPlan) -> Result<PipelineOutput, PipelineError> {
        plan.validate()?;
        self.grid.validate()?;
        self.cfg.validate()?;
        if chunks.total() != self.grid.len() {
            return Err(ChunkError::SizeMismatch {
                sum: chunks.total(),
                total: self.grid.len(),
            }
            .into());
        }
        let start = Instant::now();
        let pool = match plan.mode {
            Mode::Sequential => None,
            _ => Some(build_pool(plan.workers)?),
        };
        let nf = self.params.n_freq();
        let mut running = vec![Complex64::new(0.0, 0.0); self.observers.len() * nf];
        let mut work = WorkCount::default();
        let (mut rt, mut gbs) = (Duration::ZERO, Duration::ZERO);

        for rays in chunks.ranges() {
            let tw = TraceWork {
                scene: self.scene,
                source: self.source,
                grid: self.grid,
                cfg: self.cfg,
                atmosphere: self.atmosphere,
                rays,
            };
            let (paths, dt) = measure(|| execute(&tw, plan, pool.as_ref()));
            rt += dt;
            let paths = paths.into_iter().collect::<Result<Vec<_>, _>>()?;

            let sw = SumWork {
                observers: self.observers,
                paths: &paths,
                params: self.params,
                running: &running,
            };
            let (sums, dt) = measure(|| execute(&sw, plan, pool.as_ref()));
            gbs += dt;
            let mut next = Vec::with_capacity(running.len());
            for s in sums {
                let (acc, w) = s?;
                next.extend(acc);
                work += w;
            }
            running = next;
        }

        let field = FieldResult::from_pressure(running, self.source.frequencies.clone(), self.params.calibration);
        let timings = PhaseTimings::from_durations(rt, gbs, start.elapsed());
        Ok(PipelineOutput {
            field,
            timings,
            work,
            chunks: chunks.clone(),
        })
    }
}

/// Traces every ray of `grid` under `plan`, in launch order.
pub fn trace_all(
    scene: &Scene,
    source: &SourceSpec,
    grid: &LaunchGrid,
    cfg: &TraceConfig,
    atmosphere: &Atmosphere,
    plan: &ExecPlan,
) -> Result<Vec<BeamPath>, PipelineError> {
    plan.validate()?;
    grid.validate()?;
    cfg.validate()?;
    let pool = match plan.mode {
        Mode::Sequential => None,
        _ => Some(build_pool(plan.workers)?),
    };
    let tw = TraceWork {
        scene,
        source,
        grid,
        cfg,
        atmosphere,
        rays: 0..grid.len(),
    };
    Ok(execute(&tw, plan, pool.as_ref()).into_iter().collect::<Result<Vec<_>, _>>()?)
}

/// Sums already traced paths at every observer under `plan`. Returns the
/// observer-major pressures.
pub fn sum_paths(
    observers: &[Vec3],
    paths: &[BeamPath],
    params: &GbsParams,
    plan: &ExecPlan,
) -> Result<(Vec<Complex64>, WorkCount), PipelineError> {
    plan.validate()?;
    let pool = match plan.mode {
        Mode::Sequential => None,
        _ => Some(build_pool(plan.workers)?),
    };
    let running = vec![Complex64::new(0.0, 0.0); observers.len() * params.n_freq()];
    let sw = SumWork {
        observers,
        paths,
        params,
        running: &running,
    };
    let mut out = Vec::with_capacity(running.len());
    let mut work = WorkCount::default();
    for r in execute(&sw, plan, pool.as_ref()) {
        let (acc, w) = r?;
        out.extend(acc);
        work += w;
    }
    Ok((out, work))
}

/// Synthetic workload with prescribed per-task costs, each unit a fixed
/// amount of arithmetic. Used to compare static and dynamic scheduling.
pub struct SkewedWork {
    pub costs: Vec<usize>,
    pub unit_iterations: u32,
}

impl SkewedWork {
    /// `n` unit-cost tasks with every `every`-th one `heavy` times as costly.
    pub fn new(n: usize, base: usize, heavy: usize, every: usize, unit_iterations: u32) -> Self {
        let costs = (0..n)
            .map(|i| if every > 0 && i % every == 0 { base * heavy } else { base })
            .collect();
        SkewedWork { costs, unit_iterations }
    }

    /// Ratio of the largest to the median task cost.
    pub fn skew(&self) -> f64 {
        let mut c = self.costs.clone();
        c.sort_unstable();
        if c.is_empty() {
            return 0.0;
        }
        *c.last().unwrap() as f64 / c[c.len() / 2] as f64
    }

    fn unit(&self, task: usize, unit: usize) -> u64 {
        let mut x = (task as u64) << 32 | unit as u64 | 1;
        for _ in 0..self.unit_iterations {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
        }
        x
    }
}

impl Workload for SkewedWork {
    type Part = u64;
    type Output = u64;

    fn len(&self) -> usize {
        self.costs.len()
    }

    fn units(&self, task: usize) -> usize {
        self.costs[task]
    }

    fn run(&self, task: usize, range: Range<usize>) -> u64 {
        range.fold(0u64, |acc, u| acc.wrapping_add(self.unit(task, u)))
    }

    fn merge(&self, _task: usize, parts: Vec<u64>) -> u64 {
        parts.into_iter().fold(0u64, u64::wrapping_add)
    }
}
