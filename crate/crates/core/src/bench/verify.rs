//! The invariant suite behind `issa-bench verify`.

use std::fmt;

use crate::analysis::{
    apply_effective, connectivity_jacobian, flops, gradient_check_issa, gradient_check_sa,
    issa_flops_model, materialize_effective_matrix_ordered, optimal_partition, sa_flops_model,
    downsampled_flops_model, StageSelector,
};
use crate::attention::{dense_sa_forward, downsampled_sa_forward, AttentionParams, Fuse};
use crate::capture;
use crate::error::Result;
use crate::fault::{self, Fault};
use crate::interlaced::{
    build_partition, issa_forward_ordered, long_range_pass, IssaParams, PartitionSpec, StageOrder,
};
use crate::rng::Rng;
use crate::tensor::{random_feature_map, FeatureMap, Matrix};

const ORACLE_TOL: f64 = 1e-10;
const ROW_SUM_TOL: f64 = 1e-12;
const NONZERO_TOL: f64 = 1e-12;
const SUPPORT_TOL: f64 = 1e-14;
const GRAD_TOL: f64 = 1e-5;

/// Grids the structural checks run on: `(H, W, P_h, P_w)`.
const GRIDS: [(usize, usize, usize, usize); 2] = [(4, 4, 2, 2), (6, 6, 2, 3)];

/// Outcome of one property.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub tolerance: String,
    pub worst: f64,
    pub passed: bool,
    pub detail: Option<String>,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<26} tolerance {:<14} worst {:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.tolerance,
            self.worst
        )?;
        if let Some(d) = &self.detail {
            for line in d.lines() {
                write!(f, "\n     {line}")?;
            }
        }
        Ok(())
    }
}

fn below(name: &'static str, tol: f64, worst: f64) -> Check {
    Check {
        name,
        tolerance: format!("<= {tol:e}"),
        worst,
        passed: worst <= tol,
        detail: None,
    }
}

fn exact(name: &'static str, mismatches: usize, detail: Option<String>) -> Check {
    Check {
        name,
        tolerance: "exact".into(),
        worst: mismatches as f64,
        passed: mismatches == 0,
        detail: if mismatches == 0 { None } else { detail },
    }
}

fn setup(seed: u64, (h, w, ph, pw): (usize, usize, usize, usize), c: usize) -> Result<(FeatureMap, IssaParams)> {
    let rng = Rng::new(seed);
    let x = random_feature_map(1, c, h, w, &mut rng.split(1))?;
    let p = IssaParams::random(c, build_partition(h, w, ph, pw)?, Fuse::None, &mut rng.split(2))?;
    Ok((x, p))
}

fn check_partitions() -> Result<Check> {
    let mut bad = 0;
    for (h, w, ph, pw) in [(4, 4, 2, 2), (6, 6, 2, 3), (4, 1, 2, 1), (8, 8, 2, 4), (3, 5, 1, 5), (6, 4, 6, 1)] {
        let s = build_partition(h, w, ph, pw)?;
        let ok = |m: &crate::interlaced::Permutation, size: usize, group: &dyn Fn(usize) -> usize| {
            m.is_consistent()
                && m.len() == h * w
                && m.as_slice().iter().enumerate().all(|(slot, &p)| group(p) == slot / size)
        };
        if !ok(s.long_index_map(), s.long_group_size(), &|p| s.long_group_of(p)) {
            bad += 1;
        }
        if !ok(s.short_index_map(), s.short_group_size(), &|p| s.short_group_of(p)) {
            bad += 1;
        }
    }
    Ok(exact("partition-bijection", bad, None))
}

/// Nonzeros of `a` (original coordinates) linking positions in different groups.
fn cross_group_nonzeros(a: &Matrix, group: impl Fn(usize) -> usize) -> usize {
    let n = a.rows();
    (0..n * n)
        .filter(|&k| group(k / n) != group(k % n) && a.get(k / n, k % n) != 0.0)
        .count()
}

fn check_affinities() -> Result<Vec<Check>> {
    let mut row_err: f64 = 0.0;
    let mut off_block = 0;
    for grid in GRIDS {
        for seed in 0..10 {
            let (x, p) = setup(seed, grid, 4)?;
            let (out, captured) = capture::capture(|| issa_forward_ordered(&x, &p, StageOrder::LongFirst));
            out?;
            for (label, a) in &captured {
                row_err = row_err.max(a.max_row_sum_error());
                off_block += a.off_block_nonzeros(&a.to_dense_permuted());
                let dense = a.to_dense_original();
                off_block += match label {
                    capture::StageLabel::Long => cross_group_nonzeros(&dense, |i| p.spec.long_group_of(i)),
                    _ => cross_group_nonzeros(&dense, |i| p.spec.short_group_of(i)),
                };
            }
        }
    }
    Ok(vec![
        below("row-sums", ROW_SUM_TOL, row_err),
        exact("block-sparsity", off_block, None),
    ])
}

fn check_oracle(name: &'static str, order: StageOrder) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for grid in GRIDS {
        for seed in 0..10 {
            let (x, p) = setup(100 + seed, grid, 4)?;
            let eff = materialize_effective_matrix_ordered(&x, &p, order)?;
            let via_matrix = apply_effective(&eff, &x, &p)?;
            worst = worst.max(issa_forward_ordered(&x, &p, order)?.max_abs_diff(&via_matrix));
        }
    }
    Ok(below(name, ORACLE_TOL, worst))
}

/// `#` for entries above `tol`, `.` otherwise; one line per output position.
pub fn support_pattern(jac: &Matrix, tol: f64) -> String {
    (0..jac.rows())
        .map(|i| {
            jac.row(i)
                .iter()
                .map(|&v| if v > tol { '#' } else { '.' })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn check_connectivity(name: &'static str, order: StageOrder) -> Result<Check> {
    let mut smallest = f64::INFINITY;
    let mut detail = None;
    for (i, grid) in GRIDS.into_iter().enumerate() {
        let (x, p) = setup(200 + i as u64, grid, 4)?;
        let jac = connectivity_jacobian(&x, &p, StageSelector::Both(order))?;
        let m = jac.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
        if m <= NONZERO_TOL && detail.is_none() {
            detail = Some(format!(
                "{}x{} p={}x{}: zero sensitivities (. = zero)\n{}",
                grid.0,
                grid.1,
                grid.2,
                grid.3,
                support_pattern(&jac, NONZERO_TOL)
            ));
        }
        smallest = smallest.min(m);
    }
    Ok(Check {
        name,
        tolerance: format!("min > {NONZERO_TOL:e}"),
        worst: smallest,
        passed: smallest > NONZERO_TOL,
        detail,
    })
}

fn check_support(name: &'static str, selector: StageSelector) -> Result<Check> {
    let mut outside: f64 = 0.0;
    let mut inside = f64::INFINITY;
    for (i, grid) in GRIDS.into_iter().enumerate() {
        let (x, p) = setup(300 + i as u64, grid, 4)?;
        let jac = connectivity_jacobian(&x, &p, selector)?;
        let spec: &PartitionSpec = &p.spec;
        let group = |k: usize| match selector {
            StageSelector::LongOnly => spec.long_group_of(k),
            _ => spec.short_group_of(k),
        };
        let m = jac.rows();
        for r in 0..m {
            for c in 0..m {
                let v = jac.get(r, c);
                if group(r) == group(c) {
                    inside = inside.min(v);
                } else {
                    outside = outside.max(v);
                }
            }
        }
    }
    Ok(Check {
        name,
        tolerance: format!("out <= {SUPPORT_TOL:e}"),
        worst: outside,
        passed: outside <= SUPPORT_TOL && inside > NONZERO_TOL,
        detail: (inside <= NONZERO_TOL).then(|| format!("in-group minimum {inside:.3e}")),
    })
}

fn check_gradients() -> Result<Vec<Check>> {
    let mut sa: f64 = 0.0;
    let mut issa: f64 = 0.0;
    let mut where_sa = String::new();
    let mut where_issa = String::new();
    for seed in 0..4u64 {
        let rng = Rng::new(400 + seed);
        let c = 2 + 2 * (seed as usize % 2);
        let (h, w, ph, pw) = if seed < 2 { (2, 2, 2, 1) } else { (4, 4, 2, 2) };
        let x = random_feature_map(1, c, h, w, &mut rng.split(1))?;
        let u = random_feature_map(1, c, h, w, &mut rng.split(2))?;
        let fuse = if seed % 2 == 0 { Fuse::None } else { Fuse::Residual };
        let p = AttentionParams::random(c, &mut rng.split(3))?;
        let g = gradient_check_sa(&x, &p, &u, fuse)?;
        if g.worst > sa {
            sa = g.worst;
            where_sa = format!("seed {} block {}", 400 + seed, g.block);
        }
        let ip = IssaParams::random(c, build_partition(h, w, ph, pw)?, fuse, &mut rng.split(4))?;
        let order = if seed < 2 { StageOrder::LongFirst } else { StageOrder::ShortFirst };
        for order in [order, StageOrder::LongFirst] {
            let g = gradient_check_issa(&x, &ip, &u, order)?;
            if g.worst > issa {
                issa = g.worst;
                where_issa = format!("seed {} block {}", 400 + seed, g.block);
            }
        }
    }
    let mut a = below("gradient-sa", GRAD_TOL, sa);
    let mut b = below("gradient-issa", GRAD_TOL, issa);
    if !a.passed {
        a.detail = Some(where_sa);
    }
    if !b.passed {
        b.detail = Some(where_issa);
    }
    Ok(vec![a, b])
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

fn check_counters() -> Result<Vec<Check>> {
    let (mut sa, mut issa, mut down) = (0, 0, 0);
    let mut first_bad = None;
    for h in [4, 8, 16] {
        for w in [4, 8, 16] {
            for c in [4, 8] {
                let rng = Rng::new((h * 100 + w * 10 + c) as u64);
                let x = random_feature_map(1, c, h, w, &mut rng.split(1))?;
                let p = AttentionParams::random(c, &mut rng.split(2))?;
                let (out, n) = flops::measure(|| dense_sa_forward(&x, &p, Fuse::Residual));
                out?;
                if n != sa_flops_model(h, w, c)? {
                    sa += 1;
                    first_bad.get_or_insert(format!("sa {h}x{w} c={c}"));
                }
                let (out, n) = flops::measure(|| downsampled_sa_forward(&x, &p, 2));
                out?;
                if n != downsampled_flops_model(h, w, c, 2)? {
                    down += 1;
                    first_bad.get_or_insert(format!("sa-down2 {h}x{w} c={c}"));
                }
                for ph in divisors(h) {
                    for pw in divisors(w) {
                        let ip = IssaParams::random(c, build_partition(h, w, ph, pw)?, Fuse::Residual, &mut rng.split(3))?;
                        for order in [StageOrder::LongFirst, StageOrder::ShortFirst] {
                            let (out, n) = flops::measure(|| issa_forward_ordered(&x, &ip, order));
                            out?;
                            if n != issa_flops_model(h, w, c, ph, pw)? {
                                issa += 1;
                                first_bad.get_or_insert(format!("issa {h}x{w} c={c} p={ph}x{pw}"));
                            }
                        }
                    }
                }
            }
        }
    }
    let d = first_bad.map(|s| format!("first mismatch: {s}"));
    Ok(vec![
        exact("counter-model-sa", sa, d.clone()),
        exact("counter-model-issa", issa, d.clone()),
        exact("counter-model-sa-down2", down, d),
    ])
}

fn check_minimizer() -> Result<Check> {
    let mut bad = 0;
    for s in [16usize, 64, 128] {
        let mut best = (u64::MAX, 0);
        for ph in divisors(s) {
            for pw in divisors(s) {
                let cost = issa_flops_model(s, s, 512, ph, pw)?;
                if cost < best.0 {
                    best = (cost, ph * pw);
                }
            }
        }
        let (ph, pw) = optimal_partition(s, s);
        if best.1 != s || ph * pw != s {
            bad += 1;
        }
    }
    Ok(exact("minimizer", bad, None))
}

fn check_cost_curve() -> Result<Check> {
    let mut bad = 0;
    let mut prev = 0.0;
    for s in [16usize, 32, 64, 128] {
        let (ph, pw) = optimal_partition(s, s);
        let ratio = sa_flops_model(s, s, 512)? as f64 / issa_flops_model(s, s, 512, ph, pw)? as f64;
        if ratio <= prev {
            bad += 1;
        }
        prev = ratio;
    }
    // past the crossover every non-trivial partition with P <= M/2 is cheaper
    for s in [32usize, 64] {
        let m = s * s;
        for ph in divisors(s) {
            for pw in divisors(s) {
                let p = ph * pw;
                if (2..=m / 2).contains(&p) && issa_flops_model(s, s, 64, ph, pw)? >= sa_flops_model(s, s, 64)? {
                    bad += 1;
                }
            }
        }
    }
    Ok(exact("cost-curve", bad, None))
}

fn check_dense_limit() -> Result<Check> {
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let (x, p) = setup(500 + seed, (4, 4, 1, 1), 4)?;
        let a = long_range_pass(&x, &p.long_stage, &p.spec)?;
        let b = dense_sa_forward(&x, &p.long_stage, Fuse::None)?;
        worst = worst.max(a.max_abs_diff(&b));
    }
    Ok(below("dense-limit", 1e-12, worst))
}

fn failed(name: &'static str, e: impl fmt::Display) -> Check {
    Check {
        name,
        tolerance: "-".into(),
        worst: f64::NAN,
        passed: false,
        detail: Some(format!("error: {e}")),
    }
}

fn collect(checks: &mut Vec<Check>, names: &[&'static str], result: Result<Vec<Check>>) {
    match result {
        Ok(cs) => checks.extend(cs),
        Err(e) => checks.extend(names.iter().map(|n| failed(n, &e))),
    }
}

/// Runs every property with `fault` injected. A property whose computation
/// errors out is reported as failed.
pub fn verify(fault: Fault) -> Vec<Check> {
    fault::with_fault(fault, || {
        let mut checks = Vec::new();
        let c = &mut checks;
        collect(c, &["partition-bijection"], check_partitions().map(|x| vec![x]));
        collect(c, &["row-sums", "block-sparsity"], check_affinities());
        for (name, order) in [
            ("oracle-long-first", StageOrder::LongFirst),
            ("oracle-short-first", StageOrder::ShortFirst),
        ] {
            collect(c, &[name], check_oracle(name, order).map(|x| vec![x]));
        }
        for (name, order) in [
            ("connectivity-long-first", StageOrder::LongFirst),
            ("connectivity-short-first", StageOrder::ShortFirst),
        ] {
            collect(c, &[name], check_connectivity(name, order).map(|x| vec![x]));
        }
        for (name, sel) in [
            ("long-only-support", StageSelector::LongOnly),
            ("short-only-support", StageSelector::ShortOnly),
        ] {
            collect(c, &[name], check_support(name, sel).map(|x| vec![x]));
        }
        collect(c, &["gradient-sa", "gradient-issa"], check_gradients());
        collect(
            c,
            &["counter-model-sa", "counter-model-issa", "counter-model-sa-down2"],
            check_counters(),
        );
        collect(c, &["minimizer"], check_minimizer().map(|x| vec![x]));
        collect(c, &["cost-curve"], check_cost_curve().map(|x| vec![x]));
        collect(c, &["dense-limit"], check_dense_limit().map(|x| vec![x]));
        checks
    })
}
