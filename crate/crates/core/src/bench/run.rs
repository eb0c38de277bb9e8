//! Timed runs: size sweeps and partition ablations.

use std::time::Instant;

use crate::analysis::{affinity_memory_model, flops, optimal_partition, Method};
use crate::attention::{dense_sa_forward, downsampled_sa_forward, AttentionParams, Fuse};
use crate::bench::report::{AblateRow, CostRow};
use crate::error::{IssaError, Result};
use crate::interlaced::{build_partition, issa_forward, issa_forward_short_first, IssaParams};
use crate::rng::Rng;
use crate::tensor::{random_feature_map, FeatureMap};

/// Partitions to try for the interlaced methods.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Partitions {
    /// One partition per size, chosen by [`optimal_partition`].
    Auto,
    List(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub sizes: Vec<(usize, usize)>,
    pub channels: usize,
    pub batch: usize,
    pub partitions: Partitions,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub reps: usize,
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![(16, 16), (32, 32), (64, 64)],
            channels: 64,
            batch: 1,
            partitions: Partitions::Auto,
            methods: vec![Method::Sa, Method::Issa],
            seed: 0,
            reps: 5,
            warmup: 2,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(IssaError::param("repetitions must be >= 1"));
        }
        if self.batch == 0 || self.channels == 0 || !self.channels.is_multiple_of(2) {
            return Err(IssaError::param(format!(
                "batch must be >= 1 and channels even and >= 2, got batch {} channels {}",
                self.batch, self.channels
            )));
        }
        Ok(())
    }
}

/// Parses `HxW` or a bare `N` meaning `NxN`.
pub fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let bad = || IssaError::Parse(format!("expected N or HxW, got '{s}'"));
    let (a, b) = s.split_once('x').unwrap_or((s, s));
    let a = a.trim().parse().map_err(|_| bad())?;
    let b = b.trim().parse().map_err(|_| bad())?;
    Ok((a, b))
}

/// Parses a comma-separated list of [`parse_pair`] items; empty input is an
/// empty list.
pub fn parse_pairs(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(parse_pair).collect()
}

pub fn parse_partitions(s: &str) -> Result<Partitions> {
    if s.trim() == "auto" {
        Ok(Partitions::Auto)
    } else {
        parse_pairs(s).map(Partitions::List)
    }
}

pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse()).collect()
}

/// One workload to time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub method: Method,
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Ignored unless the method is partitioned.
    pub partition: (usize, usize),
}

fn median(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Runs `warmup` untimed then `reps` timed forward passes on seeded random
/// input. Every timed pass is also FLOP-counted; they must agree.
pub fn run_one(spec: RunSpec, seed: u64, reps: usize, warmup: usize) -> Result<CostRow> {
    if reps == 0 {
        return Err(IssaError::param("repetitions must be >= 1"));
    }
    let RunSpec {
        method,
        batch: n,
        channels: c,
        height: h,
        width: w,
        ..
    } = spec;
    let (ph, pw) = if method.is_partitioned() { spec.partition } else { (0, 0) };
    let model = method.flops_model(h, w, c, ph, pw)?;
    let affinity = affinity_memory_model(h, w, ph, pw, method)?;

    let root = Rng::new(seed);
    let x = random_feature_map(n, c, h, w, &mut root.split(1))?;
    let forward: Box<dyn Fn(&FeatureMap) -> Result<FeatureMap>> = match method {
        Method::Sa => {
            let p = AttentionParams::random(c, &mut root.split(2))?;
            Box::new(move |x| dense_sa_forward(x, &p, Fuse::Residual))
        }
        Method::SaDown(f) => {
            let p = AttentionParams::random(c, &mut root.split(2))?;
            Box::new(move |x| downsampled_sa_forward(x, &p, f))
        }
        Method::Issa | Method::IssaShortFirst => {
            let part = build_partition(h, w, ph, pw)?;
            let p = IssaParams::random(c, part, Fuse::Residual, &mut root.split(3))?;
            if method == Method::Issa {
                Box::new(move |x| issa_forward(x, &p))
            } else {
                Box::new(move |x| issa_forward_short_first(x, &p))
            }
        }
    };

    for _ in 0..warmup {
        forward(&x)?;
    }
    let mut times = Vec::with_capacity(reps);
    let mut counted = None;
    for _ in 0..reps {
        let start = Instant::now();
        let (out, flops) = flops::measure(|| forward(&x));
        times.push(start.elapsed().as_nanos() as u64);
        out?;
        if counted.is_some_and(|prev| prev != flops) {
            return Err(IssaError::Integrity(format!(
                "FLOP count changed between repetitions of {method}"
            )));
        }
        counted = Some(flops);
    }
    Ok(CostRow {
        method: method.to_string(),
        n,
        c,
        h,
        w,
        ph,
        pw,
        model_flops: model * n as u64,
        counted_flops: counted.unwrap_or(0),
        affinity_elements: affinity * n as u64,
        wall_time_ns: median(times),
        reps,
    })
}

/// Every compatible (size, method, partition) combination, in that nesting
/// order. Incompatible combinations are skipped with a logged warning.
pub fn plan(config: &BenchConfig) -> Vec<RunSpec> {
    let mut runs = Vec::new();
    for &(h, w) in &config.sizes {
        for &method in &config.methods {
            let base = RunSpec {
                method,
                batch: config.batch,
                channels: config.channels,
                height: h,
                width: w,
                partition: (0, 0),
            };
            if !method.is_partitioned() {
                if let Method::SaDown(f) = method {
                    if f == 0 || h % f != 0 || w % f != 0 {
                        log::warn!("skipping {method} at {h}x{w}: factor does not divide the map");
                        continue;
                    }
                }
                runs.push(base);
                continue;
            }
            let parts = match &config.partitions {
                Partitions::Auto => vec![optimal_partition(h, w)],
                Partitions::List(list) => list.clone(),
            };
            for (ph, pw) in parts {
                if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
                    log::warn!("skipping {method} at {h}x{w}: partition {ph}x{pw} does not divide the map");
                    continue;
                }
                runs.push(RunSpec {
                    partition: (ph, pw),
                    ..base
                });
            }
        }
    }
    runs
}

/// Runs every planned configuration.
pub fn sweep(config: &BenchConfig) -> Result<Vec<CostRow>> {
    config.validate()?;
    plan(config)
        .into_iter()
        .map(|spec| run_one(spec, config.seed, config.reps, config.warmup))
        .collect()
}

/// Interlaced method over every `(p_h, p_w)` in `grid × grid` dividing the
/// map. Rows attaining the minimum model cost are flagged optimal.
pub fn ablate(
    (h, w): (usize, usize),
    grid: &[usize],
    config: &BenchConfig,
) -> Result<Vec<AblateRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for &ph in grid {
        for &pw in grid {
            if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
                log::warn!("skipping partition {ph}x{pw}: does not divide {h}x{w}");
                continue;
            }
            let spec = RunSpec {
                method: Method::Issa,
                batch: config.batch,
                channels: config.channels,
                height: h,
                width: w,
                partition: (ph, pw),
            };
            rows.push(run_one(spec, config.seed, config.reps, config.warmup)?);
        }
    }
    let best = rows.iter().map(|r| r.model_flops).min();
    Ok(rows
        .into_iter()
        .map(|cost| AblateRow {
            optimal: Some(cost.model_flops) == best,
            cost,
        })
        .collect())
}
