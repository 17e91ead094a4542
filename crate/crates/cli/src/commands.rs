use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use emc_core::analysis::{convergence_profile, stationary, stationary_report, structure, LIMIT_TOL};
use emc_core::censor::{a_hit_distribution_check, censored_matrix, conditional_on, exact_hit_deviation, CensorSet};
use emc_core::emc::{build_emc, estimate_homogeneous, estimate_schedule, lemma1_report, MarginalMode, EXACT_TV_TOL};
use emc_core::oracle::{first_order_matrix, history_gap, joint_table, marginal, max_exact_horizon, GAP_NOISE_FLOOR};
use emc_core::process::{build_model, sample_ensemble, ModelSpec, ProcessModel, TrajectoryEnsemble};
use emc_core::scenarios::{scenario, SCENARIO_NAMES};
use emc_core::state::{LabeledDist, LabeledMatrix, ProbDist, StateSpace, StochasticMatrix};
use emc_core::verify::{verify_matrix, verify_scenario, VerifyOptions, VerifyReport};
use emc_core::EmcError;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{Command, Mode, RunConfig};
use crate::output::Status;
use crate::CliError;

const MODULE: &str = "cli";

/// Largest horizon tried when deriving a model's exact one-step matrix.
const EXACT_MATRIX_HORIZON: usize = 8;

pub struct Done {
    pub report: Value,
    /// `(file name, contents)` pairs written next to the bundle.
    pub artifacts: Vec<(String, String)>,
    pub status: Status,
}

fn ok(report: Value, artifacts: Vec<(String, String)>) -> Done {
    Done {
        report,
        artifacts,
        status: Status {
            code: 0,
            outcome: "ok",
            message: None,
        },
    }
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report serializes")
}

fn pretty<T: serde::Serialize>(x: &T) -> String {
    let mut s = serde_json::to_string_pretty(x).expect("artifact serializes");
    s.push('\n');
    s
}

fn hypothesis(message: impl Into<String>) -> CliError {
    CliError::Core(EmcError::Hypothesis {
        module: MODULE,
        message: message.into(),
    })
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path.to_path_buf(), e))
}

pub fn run(config: &RunConfig) -> Result<Done, CliError> {
    match config.command {
        Command::Simulate => simulate(config),
        Command::Oracle => oracle(config),
        Command::Emc => emc(config),
        Command::Estimate => estimate(config),
        Command::Analyze => analyze(config),
        Command::Censor => censor(config),
        Command::Verify => verify(config),
    }
}

fn load_model(config: &RunConfig) -> Result<ProcessModel, CliError> {
    match (&config.model, &config.scenario) {
        (Some(path), _) => Ok(build_model(&ModelSpec::from_json(&read(path)?)?)?),
        (None, Some(name)) => Ok(scenario(name)?),
        (None, None) => Err(CliError::usage(format!(
            "{} needs --model <file> or --scenario <name> (one of {})",
            config.command.name(),
            SCENARIO_NAMES.join(", ")
        ))),
    }
}

fn horizon(config: &RunConfig) -> Result<usize, CliError> {
    config
        .horizon
        .ok_or_else(|| CliError::usage(format!("{} needs --horizon", config.command.name())))
}

fn samples(config: &RunConfig) -> Result<usize, CliError> {
    config
        .samples
        .ok_or_else(|| CliError::usage(format!("{} needs --samples", config.command.name())))
}

/// The model's exact one-step matrix, which must not vary in time.
fn exact_matrix(model: &ProcessModel, cap: u64) -> Result<StochasticMatrix, CliError> {
    let t = max_exact_horizon(model.n(), cap, EXACT_MATRIX_HORIZON)
        .filter(|&t| t >= 1)
        .ok_or(EmcError::Size {
            module: MODULE,
            required: (model.n() as u128).pow(2),
            cap,
            hint: "; raise --cap",
        })?;
    let chain = build_emc(model, t, cap)?;
    if !chain.schedule().is_homogeneous() {
        return Err(hypothesis(format!(
            "the model's exact one-step matrices vary over t <= {t}; use `oracle` for the per-time schedule or `estimate` for a pooled matrix"
        )));
    }
    Ok(chain.schedule().at(0).expect("homogeneous").clone())
}

/// Matrix from `--matrix`, otherwise the model's exact matrix.
fn matrix_source(
    config: &RunConfig,
) -> Result<(StateSpace, StochasticMatrix, Option<ProcessModel>, &'static str), CliError> {
    match &config.matrix {
        Some(path) => {
            let m = LabeledMatrix::from_json(&read(path)?)?;
            Ok((m.labels, m.rows, None, "matrix file"))
        }
        None => {
            let model = load_model(config)?;
            let p = exact_matrix(&model, config.cap)?;
            Ok((model.space().clone(), p, Some(model), "exact"))
        }
    }
}

fn simulate(config: &RunConfig) -> Result<Done, CliError> {
    let model = load_model(config)?;
    let ens = sample_ensemble(&model, horizon(config)?, samples(config)?, config.seed)?;
    let report = json!({
        "fingerprint": ens.fingerprint,
        "labels": ens.labels,
        "horizon": ens.horizon,
        "count": ens.len(),
        "master_seed": ens.master_seed,
        "ensemble": "ensemble.jsonl",
    });
    Ok(ok(report, vec![("ensemble.jsonl".into(), ens.to_jsonl())]))
}

fn oracle(config: &RunConfig) -> Result<Done, CliError> {
    let model = load_model(config)?;
    let t_max = horizon(config)?;
    let joint = joint_table(&model, t_max, config.cap)?;
    let marginals = (0..=t_max)
        .map(|t| Ok(json!({"t": t, "weights": marginal(&joint, t)?})))
        .collect::<Result<Vec<_>, EmcError>>()?;
    let schedule = (0..t_max)
        .map(|t| {
            let m = first_order_matrix(&joint, t)?;
            Ok(json!({"t": t, "matrix": m.matrix, "flagged": m.flagged}))
        })
        .collect::<Result<Vec<_>, EmcError>>()?;
    let gaps = (0..t_max)
        .map(|t| history_gap(&joint, t))
        .collect::<Result<Vec<_>, _>>()?;
    let max_gap = gaps.iter().map(|g| g.gap).fold(0.0, f64::max);
    let report = json!({
        "labels": model.space(),
        "horizon": t_max,
        "total_mass": joint.total_mass(),
        "marginals": marginals,
        "schedule": schedule,
        "history_gaps": gaps,
        "max_history_gap": max_gap,
        "gap_noise_floor": GAP_NOISE_FLOOR,
        "joint_table": "joint.csv",
    });
    Ok(ok(report, vec![("joint.csv".into(), joint.to_csv(model.space()))]))
}

fn emc(config: &RunConfig) -> Result<Done, CliError> {
    let model = load_model(config)?;
    let t = horizon(config)?;
    let mode = match config.mode {
        Mode::Exact => MarginalMode::Exact,
        Mode::MonteCarlo => MarginalMode::MonteCarlo {
            samples: samples(config)?,
            seed: config.seed,
        },
    };
    let report = lemma1_report(&model, t, mode, config.cap)?;
    let mut csv = String::from("t,tv\n");
    for r in &report.rows {
        csv.push_str(&format!("{},{}\n", r.t, emc_core::state::format_full(r.tv)));
    }
    let mut artifacts = vec![("lemma1.csv".to_string(), csv)];
    match build_emc(&model, t, config.cap) {
        Ok(chain) => artifacts.push((
            "emc_model.json".into(),
            chain.to_model(model.space().clone())?.to_spec().to_json_pretty() + "\n",
        )),
        Err(EmcError::Size { .. }) => {}
        Err(e) => return Err(e.into()),
    }
    let mut value = to_value(&report);
    value["exact_tolerance"] = json!(EXACT_TV_TOL);
    Ok(ok(value, artifacts))
}

fn estimate(config: &RunConfig) -> Result<Done, CliError> {
    let path = config
        .input
        .as_ref()
        .ok_or_else(|| CliError::usage("estimate needs --input <ensemble.jsonl>"))?;
    let file = File::open(path).map_err(|e| CliError::io(path.clone(), e))?;
    let ens = TrajectoryEnsemble::from_jsonl(BufReader::new(file))?;
    let pooled = estimate_homogeneous(&ens, config.smoothing)?;
    let schedule = estimate_schedule(&ens, config.smoothing)?;
    let transitions: u64 = pooled.counts.iter().flatten().sum();
    let report = json!({
        "source": "estimated",
        "labels": ens.labels,
        "trajectories": ens.len(),
        "transitions": transitions,
        "smoothing": config.smoothing,
        "homogeneous": pooled,
        "schedule": schedule,
        "estimated_matrix": "estimated_matrix.json",
    });
    let matrix = LabeledMatrix::new(ens.labels.clone(), pooled.matrix)?;
    Ok(ok(report, vec![("estimated_matrix.json".into(), pretty(&matrix))]))
}

fn analyze(config: &RunConfig) -> Result<Done, CliError> {
    let (space, p, model, source) = matrix_source(config)?;
    let shape = structure(&p);
    let stationary = if shape.irreducible {
        Some(stationary_report(&p)?)
    } else {
        None
    };
    let mut artifacts = Vec::new();
    let profile = if shape.is_primitive() {
        let initial = model
            .as_ref()
            .map_or_else(|| ProbDist::uniform(p.n()), |m| m.initial().clone());
        let profile = convergence_profile(&initial, &p, horizon(config)?)?;
        artifacts.push(("convergence.csv".to_string(), profile.to_csv()));
        Some(profile)
    } else {
        None
    };
    let ergodic = profile.as_ref().is_some_and(|pr| pr.limit_reached);
    let report = json!({
        "source": source,
        "labels": space,
        "matrix": p,
        "structure": shape,
        "stationary": stationary,
        "convergence": profile.as_ref().map(|pr| json!({
            "initial": if model.is_some() { "model initial law" } else { "uniform" },
            "t_max": pr.rows.len() - 1,
            "final_tv": pr.final_tv,
            "limit_tol": LIMIT_TOL,
            "limit_reached": pr.limit_reached,
            "profile": "convergence.csv",
        })),
        "ergodic": ergodic,
    });
    let mut done = ok(report, artifacts);
    if config.require_ergodic && !ergodic {
        done.status = Status {
            code: 2,
            outcome: "not_ergodic",
            message: Some(format!(
                "analyze: chain is not ergodic (irreducible {}, aperiodic {}, limit reached {})",
                shape.irreducible,
                shape.aperiodic,
                profile.is_some_and(|pr| pr.limit_reached)
            )),
        };
    }
    Ok(done)
}

fn censor(config: &RunConfig) -> Result<Done, CliError> {
    let labels = config
        .censor
        .as_ref()
        .ok_or_else(|| CliError::usage("censor needs --censor <label,label,...>"))?;
    let (space, p, model, source) = matrix_source(config)?;
    let a = CensorSet::from_labels(&space, labels)?;
    let censored = censored_matrix(&p, &a)?;
    let pi = stationary(&p)?;
    let pi_a = conditional_on(&pi, &a)?;
    let parent = match model {
        Some(m) => m,
        None => ProcessModel::memoryless(space.clone(), ProbDist::uniform(p.n()), p.clone())?,
    };
    let hits = config.hits.unwrap_or(5);
    let check = a_hit_distribution_check(&parent, &a, hits, samples(config)?, config.seed, config.cap)?;
    let exact = if parent.is_markov() {
        Some(
            exact_hit_deviation(&p, &a, hits)?
                .into_iter()
                .map(|(k, tv)| json!({"k": k, "tv": tv}))
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let a_space = StateSpace::new(a.members().iter().map(|&s| space.label(s).expect("in range")))?;
    let report = json!({
        "source": source,
        "A": check.a,
        "censored": censored,
        "pi": pi,
        "pi_A": pi_a,
        "hit_check": check,
        "exact_hits": exact,
        "exact_tolerance": emc_core::censor::EXACT_TOL,
        "censored_matrix": "censored_matrix.json",
        "pi_A_file": "pi_a.json",
    });
    let artifacts = vec![
        (
            "censored_matrix.json".into(),
            pretty(&LabeledMatrix::new(a_space, censored.matrix)?),
        ),
        ("pi_a.json".into(), pretty(&LabeledDist::new(space, pi_a)?)),
    ];
    Ok(ok(report, artifacts))
}

/// Matrix file read without validation, so that a damaged file is reported
/// by a failing check rather than rejected.
#[derive(Deserialize)]
struct RawMatrix {
    rows: Vec<Vec<f64>>,
}

fn verify(config: &RunConfig) -> Result<Done, CliError> {
    let opts = VerifyOptions {
        seed: config.seed,
        samples: config.samples,
        cap: config.cap,
    };
    let targets: Vec<&str> = match config.scenario.as_deref() {
        None | Some("all") => SCENARIO_NAMES.to_vec(),
        Some(name) => vec![name],
    };
    if config.model.is_some() {
        return Err(CliError::usage("verify runs on built-in scenarios; use --scenario"));
    }
    let mut reports: Vec<VerifyReport> = targets
        .iter()
        .map(|s| verify_scenario(s, &opts))
        .collect::<Result<_, _>>()?;
    if let Some(path) = &config.matrix {
        let raw: RawMatrix = serde_json::from_str(&read(path)?).map_err(|e| {
            CliError::Core(EmcError::Validation {
                module: MODULE,
                message: format!("matrix file {}: {e}", path.display()),
            })
        })?;
        reports.push(verify_matrix(&path.display().to_string(), &raw.rows));
    }
    let failures: Vec<String> = reports
        .iter()
        .flat_map(|r| r.failures().map(move |c| format!("{}/{}", r.target, c.name)))
        .collect();
    for r in &reports {
        for c in &r.checks {
            println!(
                "{} {}/{} value {:e} ({:?} {:e})",
                if c.passed { "PASS" } else { "FAIL" },
                r.target,
                c.name,
                c.value,
                c.relation,
                c.tolerance
            );
        }
    }
    let report = json!({ "targets": reports, "failures": failures });
    let mut done = ok(report, Vec::new());
    if !failures.is_empty() {
        done.status = Status {
            code: 4,
            outcome: "verification_failed",
            message: Some(format!("failing checks: {}", failures.join(", "))),
        };
    }
    Ok(done)
}
