use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use srsi::exec::Execution;
use srsi::gp::checkpoint::Checkpoint;
use srsi::input_model::{build_posterior, map_joint};
use srsi::procedure::{self, evaluate, oracle_for, write_run_dir, ProcedureError, RunConfig, RunResult, Variant};
use srsi::riskset::{estimate_risk_set, RiskSetEstimate};
use srsi::simulators::replicate_batch;
use srsi::stats::StreamTag;

use crate::spec::{ConfigError, Spec, DEFAULT_ALPHAS, DEFAULT_BENCHMARK_RUNS, DEFAULT_DELTAS};
use crate::GlobalArgs;

/// 2 for anything the user can fix in the spec or flags, 1 otherwise.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<ProcedureError>() {
        Some(ProcedureError::Config(_)) => 2,
        _ => 1,
    }
}

fn load(path: &Path) -> Result<Spec> {
    let spec = Spec::load(path)?;
    spec.check_files()?;
    Ok(spec)
}

fn out_dir(g: &GlobalArgs, spec: &Spec) -> PathBuf {
    g.out.clone().unwrap_or_else(|| spec.output_dir())
}

fn run_config(g: &GlobalArgs, spec: &Spec, variant: Option<&str>) -> Result<RunConfig> {
    let mut config = spec.run_config()?;
    if let Some(v) = variant {
        config.variant = Variant::parse(v).ok_or_else(|| ConfigError {
            path: spec.path.clone(),
            line: None,
            message: format!("unknown variant {v:?} (srsi, srsi-m, srsi-v, nmc)"),
        })?;
    }
    if let Some(s) = g.seed {
        config.seed = s;
    }
    if let Some(b) = g.budget_override {
        config.budget = Some(b);
        config.checkpoints.retain(|&c| c <= b);
        if spec.file.run.max_iterations.is_none() {
            config.max_iterations = None;
        }
    }
    if config.variant == Variant::Nmc && config.budget.is_none() {
        return Err(spec.error("budget", "the nmc variant needs a replication budget").into());
    }
    spec.validate_run(&config)?;
    if let Some(w) = config.alpha_warning() {
        eprintln!("warning: {w}");
    }
    Ok(config)
}

fn print_summary(result: &RunResult) {
    let e = &result.estimate;
    println!(
        "{} seed {}: xhat = {}, {} replications, {} iterations",
        result.variant.as_str(),
        result.seed,
        result.labels[result.xhat],
        result.total_replications,
        result.iterations
    );
    println!("{:>10} {:>10} {:>8} {:>12}", "solution", "prob", "in set", "replications");
    for (x, label) in result.labels.iter().enumerate() {
        let mark = if x == result.xhat {
            "xhat"
        } else if e.included[x] {
            "yes"
        } else {
            ""
        };
        println!("{:>10} {:>10.4} {:>8} {:>12}", label, e.prob[x], mark, result.frequencies[x]);
    }
    let members: Vec<&str> = e.members().iter().map(|&x| result.labels[x].as_str()).collect();
    println!("risk set (alpha = {}, delta = {}): {{{}}}", e.alpha, e.delta, members.join(", "));
}

pub fn run(g: &GlobalArgs, spec_path: &Path, variant: Option<&str>) -> Result<()> {
    let spec = load(spec_path)?;
    let config = run_config(g, &spec, variant)?;
    let problem = spec.problem(config.seed)?;
    let dir = out_dir(g, &spec).join(format!("{}-seed{}", config.variant.as_str(), config.seed));
    let result = match procedure::run(&config, problem.as_dyn(), Execution::default()) {
        Ok(r) => r,
        Err(ProcedureError::Simulation {
            source,
            checkpoint: Some(cp),
        }) => {
            fs::create_dir_all(&dir)?;
            let path = dir.join("checkpoint.srsi");
            cp.save(&path)?;
            return Err(anyhow!(source).context(format!("simulation failed; state saved to {}", path.display())));
        }
        Err(e) => return Err(e.into()),
    };
    write_run_dir(&dir, &result)?;
    fs::copy(&spec.path, dir.join("spec.toml")).with_context(|| format!("copying spec to {}", dir.display()))?;
    print_summary(&result);
    eprintln!("finished in {:.1} s; output in {}", result.elapsed.as_secs_f64(), dir.display());
    Ok(())
}

struct SeedOutcome {
    seed: u64,
    /// (variant, budget, estimate, oracle)
    rows: Vec<(Variant, u64, RiskSetEstimate, Option<RiskSetEstimate>)>,
}

pub fn benchmark(g: &GlobalArgs, spec_path: &Path) -> Result<()> {
    let spec = load(spec_path)?;
    let bench = &spec.file.benchmark;
    let base = spec.run_config()?;
    let mut budgets = match g.budget_override {
        Some(b) => vec![b],
        None => bench.budgets.clone(),
    };
    budgets.extend(base.budget.filter(|_| g.budget_override.is_none()));
    budgets.sort_unstable();
    budgets.dedup();
    let Some(&top) = budgets.last() else {
        return Err(spec.error("budgets", "benchmark needs at least one budget").into());
    };
    let variants = match &bench.variants {
        Some(vs) => vs
            .iter()
            .map(|v| Variant::parse(v).ok_or_else(|| spec.error("variants", format!("unknown variant {v:?}"))))
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![Variant::Srsi, Variant::Nmc],
    };
    let runs = bench.runs.unwrap_or(DEFAULT_BENCHMARK_RUNS);
    let first = g.seed.or(bench.first_seed).unwrap_or(1);
    let configs = variants
        .iter()
        .map(|&variant| {
            let c = RunConfig {
                variant,
                budget: Some(top),
                checkpoints: budgets.clone(),
                max_iterations: spec.file.run.max_iterations,
                ..base.clone()
            };
            spec.validate_run(&c)?;
            Ok(c)
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    if let Some(w) = base.alpha_warning() {
        eprintln!("warning: {w}");
    }

    let seeds: Vec<u64> = (first..first + runs).collect();
    let outcomes = seeds
        .par_iter()
        .map(|&seed| -> Result<SeedOutcome> {
            let problem = spec.problem(seed)?;
            let mut rows = Vec::new();
            for c in &configs {
                let config = RunConfig { seed, ..c.clone() };
                let result = procedure::run(&config, problem.as_dyn(), Execution::Sequential)
                    .with_context(|| format!("{} seed {seed}", config.variant.as_str()))?;
                let oracle = oracle_for(problem.as_dyn(), &result.models, result.xhat, config.alpha, config.delta);
                info!("{} seed {seed} done", config.variant.as_str());
                if result.snapshots.len() < budgets.len() {
                    warn!(
                        "{} seed {seed} stopped after {} replications, before every budget was reached",
                        config.variant.as_str(),
                        result.total_replications
                    );
                }
                for s in &result.snapshots {
                    rows.push((config.variant, s.budget, s.estimate.clone(), oracle.clone()));
                }
            }
            Ok(SeedOutcome { seed, rows })
        })
        .collect::<Result<Vec<_>>>()?;

    let dir = out_dir(g, &spec);
    fs::create_dir_all(&dir)?;
    let mut w = csv::Writer::from_path(dir.join("runs.csv"))?;
    w.write_record(["variant", "seed", "budget", "xhat", "set_size", "members", "misclassified"])?;
    for o in &outcomes {
        for (v, budget, est, oracle) in &o.rows {
            let members: Vec<String> = est.members().iter().map(|m| m.to_string()).collect();
            let wrong = oracle.as_ref().map(|or| est.misclassified(or).to_string()).unwrap_or_default();
            w.write_record([
                v.as_str().to_string(),
                o.seed.to_string(),
                budget.to_string(),
                est.xhat.to_string(),
                est.len().to_string(),
                members.join(" "),
                wrong,
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    w.write_record(["variant", "budget", "runs", "inclusion", "identification", "misclassification"])?;
    println!("{:>8} {:>8} {:>5} {:>10} {:>15} {:>18}", "variant", "budget", "runs", "inclusion", "identification", "misclassification");
    for &v in &variants {
        for &b in &budgets {
            let pairs: Vec<(&RiskSetEstimate, &RiskSetEstimate)> = outcomes
                .iter()
                .flat_map(|o| o.rows.iter())
                .filter(|(rv, rb, _, _)| *rv == v && *rb == b)
                .filter_map(|(_, _, est, oracle)| oracle.as_ref().map(|or| (est, or)))
                .collect();
            if pairs.is_empty() {
                continue;
            }
            let m = evaluate(pairs);
            w.write_record([
                v.as_str().to_string(),
                b.to_string(),
                m.runs.to_string(),
                m.inclusion.to_string(),
                m.identification.to_string(),
                m.misclassification.to_string(),
            ])?;
            println!(
                "{:>8} {:>8} {:>5} {:>10.3} {:>15.3} {:>18.3}",
                v.as_str(),
                b,
                m.runs,
                m.inclusion,
                m.identification,
                m.misclassification
            );
        }
    }
    w.flush()?;
    eprintln!("output in {}", dir.display());
    Ok(())
}

/// Labels from a `frequencies.csv` written next to the checkpoint.
fn neighbor_labels(checkpoint: &Path) -> Option<Vec<String>> {
    let path = checkpoint.parent()?.join("frequencies.csv");
    let mut r = csv::Reader::from_path(path).ok()?;
    r.records().map(|rec| rec.ok()?.get(1).map(str::to_string)).collect()
}

pub fn reclassify(
    g: &GlobalArgs,
    checkpoint: &Path,
    spec_path: Option<&Path>,
    alphas: Option<Vec<f64>>,
    deltas: Option<Vec<f64>>,
) -> Result<()> {
    let spec = spec_path.map(load).transpose()?;
    let grid = spec.as_ref().map(|s| s.file.reclassify.clone()).unwrap_or_default();
    let alphas = alphas.or(grid.alphas).unwrap_or_else(|| DEFAULT_ALPHAS.to_vec());
    let deltas = deltas.or(grid.deltas).unwrap_or_else(|| DEFAULT_DELTAS.to_vec());
    let bad = |msg: String| ConfigError {
        path: spec_path.unwrap_or(checkpoint).to_path_buf(),
        line: None,
        message: msg,
    };
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(bad(format!("alpha must lie in (0, 1), got {a}")).into());
    }
    if let Some(d) = deltas.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(bad(format!("delta must be finite and non-negative, got {d}")).into());
    }
    if !checkpoint.is_file() {
        return Err(bad(format!("checkpoint not found: {}", checkpoint.display())).into());
    }
    let cp = Checkpoint::load(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let labels = neighbor_labels(checkpoint)
        .filter(|l| l.len() == cp.header.num_solutions)
        .unwrap_or_else(|| (0..cp.header.num_solutions).map(|x| x.to_string()).collect());
    let xhat = cp.header.xhat;

    let sink: Box<dyn Write> = match &g.out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            Box::new(BufWriter::new(fs::File::create(p)?))
        }
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["delta", "alpha", "set_size", "members"])?;
    for &delta in &deltas {
        let base = estimate_risk_set(&cp, xhat, 0.5, delta, Execution::default());
        for &alpha in &alphas {
            let est = RiskSetEstimate::from_probs(base.prob.clone(), xhat, alpha, delta);
            let members: Vec<&str> = est.members().iter().map(|&x| labels[x].as_str()).collect();
            w.write_record([delta.to_string(), alpha.to_string(), est.len().to_string(), members.join(" ")])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn simulate(g: &GlobalArgs, spec_path: &Path, solution: &str, reps: usize) -> Result<()> {
    let spec = load(spec_path)?;
    let config = spec.run_config()?;
    let seed = g.seed.unwrap_or(config.seed);
    let x = spec.solution_index("solution", solution)?;
    let problem = spec.problem(seed)?;
    let p = problem.as_dyn();
    let kappa = |d: &srsi::input_model::ObservationSet| vec![config.kappa; d.support_size()];
    let posteriors = p
        .data()
        .iter()
        .map(|d| build_posterior(d, &kappa(d)))
        .collect::<Result<Vec<_>, _>>()?;
    let model = map_joint(&posteriors)?;
    let y = replicate_batch(p, x, &model, seed, StreamTag::Replication, x as u64, 0, reps, Execution::default())?;
    let mut out = io::stdout().lock();
    for v in y {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

pub fn gen_data(g: &GlobalArgs, spec_path: &Path) -> Result<()> {
    let spec = load(spec_path)?;
    let seed = g.seed.or(spec.file.run.seed).unwrap_or(1);
    let recipe = spec.data_recipe()?;
    let data = srsi::simulators::generate_real_world_data(&recipe, seed)?;
    let dir = out_dir(g, &spec);
    fs::create_dir_all(&dir)?;
    let names: &[&str] = match recipe {
        srsi::simulators::DataRecipe::Mm1k { .. } => &["interarrival.txt", "service.txt"],
        srsi::simulators::DataRecipe::Ambulance { ref frequency_map, .. } => {
            let mut w = BufWriter::new(fs::File::create(dir.join("frequency_map.csv"))?);
            for (n, c) in frequency_map.iter().enumerate() {
                writeln!(w, "{},{c}", n + 1)?;
            }
            w.flush()?;
            &["calls.csv"]
        }
    };
    for (set, name) in data.iter().zip(names) {
        let mut w = BufWriter::new(fs::File::create(dir.join(name))?);
        for obs in &set.raw_observations {
            let line: Vec<String> = obs.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()?;
        println!("{}", dir.join(name).display());
    }
    Ok(())
}
