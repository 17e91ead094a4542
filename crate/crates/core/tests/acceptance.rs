//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so
//! the lines are printed even when everything passes.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use emc_core::analysis::{power_iteration, stationary, structure, theorem1_identity_check};
use emc_core::censor::{a_hit_distribution_check, censored_matrix, exact_hit_deviation, restrict, CensorSet};
use emc_core::emc::{build_emc, lemma1_report, MarginalMode, ScheduleSource};
use emc_core::oracle::{history_gap, joint_table, trajectory_sum, DEFAULT_CAP};
use emc_core::process::{ModelKind, ProcessModel};
use emc_core::scenarios::{scenario, SCENARIO_NAMES};
use emc_core::state::{ProbDist, StochasticMatrix};
use emc_core::verify::{estimator_errors, verify_scenario, VerifyOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenarios() -> Vec<(&'static str, ProcessModel)> {
    SCENARIO_NAMES.iter().map(|&s| (s, scenario(s).unwrap())).collect()
}

fn m(rows: Vec<Vec<f64>>) -> StochasticMatrix {
    StochasticMatrix::strict(rows).unwrap()
}

fn within_time(start: Instant, limit: Duration, what: &str) -> std::result::Result<(), String> {
    let took = start.elapsed();
    if took > limit {
        Err(format!("{what} took {took:?}, limit {limit:?}"))
    } else {
        Ok(())
    }
}

/// Exact one-step matrices of every scenario (each time slice) and the
/// matrices the scenarios are built from.
fn scenario_matrices() -> Vec<(String, StochasticMatrix)> {
    let mut out = Vec::new();
    for (name, model) in scenarios() {
        let chain = build_emc(&model, 8, DEFAULT_CAP).unwrap();
        for (t, p) in chain.schedule().matrices().iter().enumerate() {
            out.push((format!("{name} P_{t}"), p.clone()));
        }
        match model.kind() {
            ModelKind::Memoryless { matrix } => out.push((format!("{name} matrix"), matrix.clone())),
            ModelKind::Reinforced { base, .. } => out.push((format!("{name} base"), base.clone())),
            ModelKind::RegimeSwitch { regime_matrices, .. } => {
                for (r, p) in regime_matrices.iter().enumerate() {
                    out.push((format!("{name} regime {r}"), p.clone()));
                }
            }
            _ => {}
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    for (name, model) in scenarios() {
        let start = Instant::now();
        let r = lemma1_report(&model, 8, MarginalMode::Exact, DEFAULT_CAP).map_err(|e| e.to_string())?;
        within_time(start, Duration::from_secs(5), name)?;
        if r.max_tv > 1e-9 {
            return Err(format!("{name}: max TV {:.3e} > 1e-9", r.max_tv));
        }
        worst = worst.max(r.max_tv);
    }
    Ok(format!(
        "max TV {worst:.3e} <= 1e-9 over {} scenarios, T = 8",
        SCENARIO_NAMES.len()
    ))
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for (name, model) in scenarios() {
        let start = Instant::now();
        let chain = build_emc(&model, 8, DEFAULT_CAP).map_err(|e| e.to_string())?;
        let marginals = chain.propagate_all(8).map_err(|e| e.to_string())?;
        for (t, d) in marginals.iter().enumerate() {
            for a in 0..model.n() {
                let s =
                    trajectory_sum(chain.initial(), chain.schedule(), t, a, DEFAULT_CAP).map_err(|e| e.to_string())?;
                worst = worst.max((s - d.weights()[a]).abs());
            }
        }
        within_time(start, Duration::from_secs(5), name)?;
    }
    if worst > 1e-9 {
        return Err(format!("max deviation {worst:.3e} > 1e-9"));
    }
    Ok(format!("max |sum − product| {worst:.3e} <= 1e-9"))
}

fn criterion_3() -> Outcome {
    let joint = joint_table(&scenario("secondorder").unwrap(), 3, DEFAULT_CAP).unwrap();
    let mut found = None;
    for t in 1..3 {
        let g = history_gap(&joint, t).unwrap();
        if g.gap >= 0.5 && g.witness.is_some() {
            found = Some((t, g.gap));
            break;
        }
    }
    let (t, gap) = found.ok_or("secondorder: no gap >= 0.5 with witness for t <= 3")?;
    let mut memoryless = 0;
    for (name, model) in scenarios() {
        if let ModelKind::Memoryless { .. } = model.kind() {
            memoryless += 1;
            let joint = joint_table(&model, 8, DEFAULT_CAP).unwrap();
            for t in 1..8 {
                let g = history_gap(&joint, t).unwrap().gap;
                if g != 0.0 {
                    return Err(format!("{name}: gap {g:e} at t = {t}"));
                }
            }
        }
    }
    Ok(format!(
        "secondorder gap {gap:.4} at t = {t} with witness; {memoryless} memoryless scenario(s) gap = 0"
    ))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let model = scenario("reinforced").unwrap();
    let r = lemma1_report(
        &model,
        10,
        MarginalMode::MonteCarlo {
            samples: 100_000,
            seed: 0,
        },
        DEFAULT_CAP,
    )
    .map_err(|e| e.to_string())?;
    within_time(start, Duration::from_secs(60), "reinforced")?;
    if r.schedule_source != ScheduleSource::Exact {
        return Err("schedule was not exact".into());
    }
    if r.max_tv > 0.02 {
        return Err(format!("max TV {:.4} > 0.02", r.max_tv));
    }
    Ok(format!(
        "reinforced, N = 100000, T = 10: max TV {:.4} <= 0.02",
        r.max_tv
    ))
}

fn criterion_5() -> Outcome {
    let model = scenario("secondorder-stationary").unwrap();
    let r = theorem1_identity_check(&model, 8, DEFAULT_CAP).map_err(|e| e.to_string())?;
    if r.deviation > 1e-9 {
        return Err(format!("deviation {:.3e} > 1e-9", r.deviation));
    }
    Ok(format!(
        "secondorder-stationary: max deviation {:.3e} <= 1e-9",
        r.deviation
    ))
}

fn criterion_6() -> Outcome {
    let pi = stationary(&m(vec![vec![0.9, 0.1], vec![0.2, 0.8]])).unwrap();
    let known = (pi.weights()[0] - 2.0 / 3.0)
        .abs()
        .max((pi.weights()[1] - 1.0 / 3.0).abs());
    if known > 1e-10 {
        return Err(format!("markov2 pi {:?}", pi.weights()));
    }
    let doubly = [
        m(vec![vec![0.2, 0.5, 0.3], vec![0.5, 0.1, 0.4], vec![0.3, 0.4, 0.3]]),
        m(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
        m(vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.4, 0.1, 0.2, 0.3],
            vec![0.3, 0.4, 0.1, 0.2],
            vec![0.2, 0.3, 0.4, 0.1],
        ]),
        m(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]),
    ];
    for p in &doubly {
        let err = stationary(p).unwrap().max_abs_diff(&ProbDist::uniform(p.n())).unwrap();
        if err > 1e-10 {
            return Err(format!("doubly stochastic matrix off uniform by {err:e}"));
        }
    }
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (name, p) in scenario_matrices() {
        let s = structure(&p);
        if s.is_primitive() {
            count += 1;
            let direct = stationary(&p).unwrap();
            let pow = power_iteration(&p);
            let d = direct.max_abs_diff(&pow.pi).unwrap();
            if d > 1e-9 {
                return Err(format!("{name}: direct vs power {d:e}"));
            }
            worst = worst.max(d);
        }
    }
    Ok(format!(
        "markov2 off by {known:.1e}; {} doubly stochastic uniform; direct vs power {worst:.1e} over {count} aperiodic matrices",
        doubly.len()
    ))
}

fn random_sparse(rng: &mut ChaCha8Rng, n: usize) -> StochasticMatrix {
    let rows = (0..n)
        .map(|_| {
            let mut w: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.4) {
                        rng.random_range(0.1..1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            if w.iter().all(|&x| x == 0.0) {
                w[rng.random_range(0..n)] = 1.0;
            }
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        })
        .collect();
    StochasticMatrix::strict(rows).unwrap()
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 1..=6 {
        let rows = (0..n)
            .map(|_| {
                let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect()
            })
            .collect();
        let s = structure(&m(rows));
        if !(s.irreducible && s.certificate == Some(1)) {
            return Err(format!("positive {n}x{n}: {s:?}"));
        }
    }
    let id = structure(&StochasticMatrix::identity(3));
    if id.irreducible {
        return Err("identity reported irreducible".into());
    }
    let cyc = structure(&m(vec![vec![0.0, 1.0], vec![1.0, 0.0]]));
    if !(cyc.irreducible && cyc.periods == vec![Some(2), Some(2)] && !cyc.aperiodic) {
        return Err(format!("two-cycle: {cyc:?}"));
    }
    let mut certified = 0;
    let mut pool: Vec<StochasticMatrix> = scenario_matrices().into_iter().map(|(_, p)| p).collect();
    for i in 0..300 {
        pool.push(random_sparse(&mut rng, 2 + i % 6));
    }
    for p in &pool {
        if let Some(k) = structure(p).certificate {
            certified += 1;
            if p.pow(k as u64).rows().iter().flatten().any(|&x| x <= 0.0) {
                return Err(format!("certificate k = {k} unsound"));
            }
        }
    }
    Ok(format!(
        "positive/identity/two-cycle as expected; {certified} certificates sound out of {} matrices",
        pool.len()
    ))
}

fn criterion_8() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (name, p) in scenario_matrices() {
        if !structure(&p).irreducible {
            continue;
        }
        let pi = stationary(&p).unwrap();
        for a in CensorSet::all_nonempty(p.n()) {
            cases += 1;
            let c = censored_matrix(&p, &a).map_err(|e| format!("{name}: {e}"))?;
            let lhs = stationary(&c.matrix).unwrap();
            worst = worst.max(lhs.max_abs_diff(&restrict(&pi, &a).unwrap()).unwrap());
            for (_, tv) in exact_hit_deviation(&p, &a, 10).unwrap() {
                worst = worst.max(tv);
            }
        }
    }
    if worst > 1e-9 {
        return Err(format!("max deviation {worst:e} > 1e-9"));
    }
    Ok(format!("{cases} (matrix, A) pairs, max deviation {worst:.1e} <= 1e-9"))
}

fn criterion_9() -> Outcome {
    let model = scenario("secondorder-stationary").unwrap();
    let mut worst: f64 = 0.0;
    for s in 0..2 {
        let a = CensorSet::new([s], 2).unwrap();
        let r = a_hit_distribution_check(&model, &a, 5, 50_000, 0, DEFAULT_CAP).map_err(|e| e.to_string())?;
        if r.per_hit.len() != 5 || r.max_tv > 0.02 {
            return Err(format!("A = {:?}: max TV {:.4}", r.a, r.max_tv));
        }
        worst = worst.max(r.max_tv);
    }
    Ok(format!(
        "secondorder-stationary, |A| = 1, N = 50000, 5 hits: max TV {worst:.4} <= 0.02 (|A| = 1 makes every hit law a point mass)"
    ))
}

fn criterion_10() -> Outcome {
    let errors = estimator_errors(&scenario("markov2").unwrap(), 0).map_err(|e| e.to_string())?;
    let text = errors
        .iter()
        .map(|(n, e)| format!("{n}: {e:.5}"))
        .collect::<Vec<_>>()
        .join(", ");
    if errors.windows(2).any(|w| w[1].1 > w[0].1) {
        return Err(format!("median errors increase: {text}"));
    }
    Ok(format!("median max-entry errors nonincreasing ({text})"))
}

fn criterion_11() -> Outcome {
    let opts = VerifyOptions {
        seed: 11,
        ..VerifyOptions::default()
    };
    for name in SCENARIO_NAMES {
        let a = serde_json::to_string(&verify_scenario(name, &opts).map_err(|e| e.to_string())?).unwrap();
        let b = serde_json::to_string(&verify_scenario(name, &opts).map_err(|e| e.to_string())?).unwrap();
        if a != b {
            return Err(format!("{name}: reports differ"));
        }
    }
    Ok(format!(
        "{} verify reports byte-identical across reruns",
        SCENARIO_NAMES.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("marginal equality, exact", criterion_1),
        ("trajectory summation", criterion_2),
        ("history-dependence witness", criterion_3),
        ("marginal equality, sampled", criterion_4),
        ("stationary-offset identity", criterion_5),
        ("stationary solver", criterion_6),
        ("structure checks", criterion_7),
        ("censoring, exact Markov case", criterion_8),
        ("censoring, non-Markov sampled case", criterion_9),
        ("estimator consistency", criterion_10),
        ("determinism", criterion_11),
    ];
    let mut failed = 0;
    for (i, (title, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS criterion {:>2} ({title}): {msg} [{secs:.2}s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {:>2} ({title}): {msg} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
