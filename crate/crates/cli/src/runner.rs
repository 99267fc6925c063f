//! Executes a scenario: one job per (sweep point, trial), dispatched to a
//! bounded worker pool and written back in job order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gshf_core::algorithms::regret_metrics;
use gshf_core::analysis::{coverage_coefficient, offline_certificate};
use gshf_core::policy::{average_reward_gap, expected_kl, multistep_rso, EtaLadder, ProposalMode};
use gshf_core::rng::substream;
use gshf_core::{
    fit_pessimistic_dpo, generate_instance, offline_gshf, online_gshf, sequential_online, BanditInstance, BoundReport,
    GshfOption, TabularPolicy,
};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::designs::behavior_policy;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, JsonLines, Manifest, TableWriter};
use crate::scenario::{AlgorithmKind, Scenario, SweepPoint};

/// Column order of `metrics.csv`. Fields that do not apply to an algorithm are empty.
pub const METRIC_COLUMNS: [&str; 23] = [
    "manifest_hash",
    "scenario",
    "algorithm",
    "point",
    "trial",
    "batch_size",
    "iterations",
    "n_off",
    "beta_constant",
    "ladder_steps",
    "suboptimality",
    "min_suboptimality",
    "value",
    "optimal_value",
    "kl_to_pi0",
    "regret",
    "average_regret",
    "beta",
    "lambda",
    "mle_converged",
    "acceptance_min",
    "acceptance_product",
    "samples",
];

#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct MetricRow {
    pub manifest_hash: String,
    pub scenario: String,
    pub algorithm: String,
    pub point: usize,
    pub trial: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub n_off: usize,
    pub beta_constant: f64,
    pub ladder_steps: Option<usize>,
    pub suboptimality: Option<f64>,
    pub min_suboptimality: Option<f64>,
    pub value: Option<f64>,
    pub optimal_value: Option<f64>,
    pub kl_to_pi0: Option<f64>,
    pub regret: Option<f64>,
    pub average_regret: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub mle_converged: Option<bool>,
    pub acceptance_min: Option<f64>,
    pub acceptance_product: Option<f64>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub row: MetricRow,
    pub reports: Vec<BoundReport>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Worker count; 0 uses all cores.
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest_hash: String,
    pub rows: usize,
    pub failures: Vec<String>,
}

#[derive(Serialize)]
struct ReportLine<'a> {
    manifest_hash: &'a str,
    point: usize,
    trial: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a BoundReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

pub fn build_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))
}

fn manifest_for(scenario: &Scenario, master: u64) -> Manifest {
    let mut config = scenario.config.clone();
    config.seed = master;
    config.output = None;
    let mut manifest = Manifest::new("run", &config.name, master, serde_json::to_value(&config).expect("config serializes"));
    let instance_path = match &scenario.config.instance.file {
        Some(file) => {
            manifest
                .inputs
                .insert(file.display().to_string(), scenario.instance_digest.clone().unwrap_or_default());
            "fixed instance file".to_string()
        }
        None => {
            let seed = scenario.config.instance.seed.unwrap_or(master);
            format!("substream({seed}, [trial])")
        }
    };
    manifest.seed_paths = BTreeMap::from([
        ("instance".to_string(), instance_path),
        ("trial".to_string(), format!("substream({master}, [point, trial])")),
    ]);
    manifest.files = vec!["metrics.csv".into(), "reports.jsonl".into()];
    manifest
}

/// Instance used by `trial`.
pub fn trial_instance(scenario: &Scenario, master: u64, trial: usize) -> CliResult<BanditInstance> {
    if let Some(inst) = &scenario.fixed_instance {
        return Ok(inst.clone());
    }
    let spec = scenario.config.instance_spec().expect("validated generator");
    let seed = scenario.config.instance.seed.unwrap_or(master);
    Ok(generate_instance(&spec, &mut substream(seed, &[trial as u64]))?)
}

/// Runs a single job. Pure in `(scenario, master, point, trial)`.
pub fn run_trial(scenario: &Scenario, master: u64, point: SweepPoint, trial: usize) -> CliResult<TrialOutput> {
    let config = &scenario.config;
    let instance = trial_instance(scenario, master, trial)?;
    let mut rng = substream(master, &[point.index as u64, trial as u64]);
    let mut cfg = config.resolved_config(point, &instance);
    cfg.seed = rng.random();

    let mut row = MetricRow {
        scenario: config.name.clone(),
        algorithm: config.algorithm.kind.name().into(),
        point: point.index,
        trial,
        batch_size: point.batch_size,
        iterations: point.iterations,
        n_off: point.n_off,
        beta_constant: point.beta_constant,
        ladder_steps: point.ladder_steps,
        optimal_value: Some(instance.optimal_value()),
        ..MetricRow::default()
    };
    let mut reports = Vec::new();
    let record_policy = |row: &mut MetricRow, pi: &TabularPolicy| -> CliResult<()> {
        row.value = Some(instance.evaluate_value(pi)?);
        row.suboptimality = Some(instance.suboptimality(pi)?);
        row.kl_to_pi0 = Some(expected_kl(pi, instance.pi0(), instance.d0())?);
        Ok(())
    };

    match config.algorithm.kind {
        AlgorithmKind::Offline => {
            let behavior = behavior_policy(config.data.behavior, &instance);
            let data = instance.sample_comparisons(&behavior, point.n_off, &mut rng)?;
            let (pi, diag) = offline_gshf(&data, &instance, &cfg)?;
            record_policy(&mut row, &pi)?;
            row.beta = Some(diag.beta);
            row.lambda = Some(diag.lambda);
            row.mle_converged = Some(diag.mle.converged);
            row.samples = Some(data.len());
            reports.push(offline_certificate(&pi, &data, &instance, &diag)?);
        }
        AlgorithmKind::Dpo => {
            let behavior = behavior_policy(config.data.behavior, &instance);
            let data = instance.sample_comparisons(&behavior, point.n_off, &mut rng)?;
            let (pi, rep) = fit_pessimistic_dpo(&data, &instance, &cfg)?;
            record_policy(&mut row, &pi)?;
            row.beta = Some(rep.beta);
            row.lambda = Some(cfg.lambda);
            row.mle_converged = Some(rep.converged);
            row.samples = Some(data.len());
            let mut opt2 = cfg.clone();
            opt2.option = GshfOption::II;
            let (reference, _) = offline_gshf(&data, &instance, &opt2)?;
            reports.push(BoundReport::new("dpo_matches_option_ii", pi.max_total_variation(&reference), 1e-3));
        }
        AlgorithmKind::Online | AlgorithmKind::Hybrid => {
            let data = if config.algorithm.kind == AlgorithmKind::Hybrid {
                let behavior = behavior_policy(config.data.behavior, &instance);
                instance.sample_comparisons(&behavior, point.n_off, &mut rng)?
            } else {
                Vec::new()
            };
            let traj = online_gshf(&instance, &data, &cfg, &mut rng)?;
            let metrics = regret_metrics(&traj, &instance);
            record_policy(&mut row, traj.output_policy())?;
            row.min_suboptimality = Some(traj.min_suboptimality());
            row.regret = Some(metrics.regret);
            row.average_regret = Some(metrics.average_regret);
            row.beta = Some(traj.beta);
            row.lambda = Some(traj.lambda);
            row.mle_converged = Some(traj.records.iter().all(|r| r.mle_converged));
            row.samples = Some(data.len() + point.batch_size * point.iterations);
            for r in &traj.records {
                reports.push(BoundReport::new("confidence_set", r.pi_star_kl, r.pi_star_bonus).with("t", r.t as f64));
            }
            let mut previous = f64::INFINITY;
            for r in &traj.records {
                reports.push(
                    BoundReport::new("coverage_bonus_non_increasing", r.coverage_bonus, previous).with("t", r.t as f64),
                );
                previous = r.coverage_bonus;
            }
            if !data.is_empty() {
                let total = point.batch_size * point.iterations;
                let (_, report) = coverage_coefficient(
                    &data,
                    &instance.optimal_policy(),
                    &cfg.reference.resolve(&instance)?,
                    &instance,
                    0.5,
                    total,
                    cfg.lambda,
                )?;
                reports.push(report);
            }
        }
        AlgorithmKind::Sequential => {
            let (traj, metrics) = sequential_online(&instance, &cfg, &mut rng)?;
            record_policy(&mut row, traj.output_policy())?;
            row.min_suboptimality = Some(traj.min_suboptimality());
            row.regret = Some(metrics.regret);
            row.average_regret = Some(metrics.average_regret);
            row.beta = Some(traj.beta);
            row.lambda = Some(traj.lambda);
            row.mle_converged = Some(traj.records.iter().all(|r| r.mle_converged));
            row.samples = Some(point.iterations);
        }
        AlgorithmKind::Rso => {
            let eta = instance.eta();
            let rewards = instance.true_rewards();
            let steps = match point.ladder_steps {
                Some(n) => n,
                None => {
                    let gap = average_reward_gap(&rewards, instance.pi0(), instance.d0(), eta);
                    gshf_core::policy::recommended_steps(gap, eta)
                }
            };
            row.ladder_steps = Some(steps);
            let ladder = EtaLadder::linear_inverse(eta, steps)?;
            let budget = config.algorithm.budget;
            let outcome = multistep_rso(instance.pi0(), &rewards, &ladder, budget, ProposalMode::Exact, &mut rng)?;
            let mut per_step = vec![0.0; steps];
            for r in &outcome.reports {
                per_step[r.step - 1] += r.acceptance_rate.unwrap_or(0.0) / instance.num_contexts() as f64;
                let expected = r.expected_rate();
                let sigma = (expected * (1.0 - expected) / r.candidates as f64).sqrt();
                reports.push(
                    BoundReport::new("rso_rate_within_4_sigma", (r.acceptance_rate.unwrap_or(0.0) - expected).abs(), 4.0 * sigma)
                        .with("step", r.step as f64)
                        .with("context", r.context as f64)
                        .with("expected", expected),
                );
            }
            row.acceptance_min = Some(outcome.min_acceptance());
            row.acceptance_product = Some(per_step.iter().product());
            row.samples = Some(outcome.samples.iter().map(Vec::len).sum());
        }
    }
    Ok(TrialOutput { row, reports })
}

fn resolve_out(scenario: &Scenario, opts: &RunOptions) -> PathBuf {
    opts.out
        .clone()
        .or_else(|| scenario.config.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&scenario.config.name))
}

/// Runs `config_path` and writes `manifest.json`, `metrics.csv` and
/// `reports.jsonl`. Failed jobs are logged to the reports file after all
/// successful rows are flushed; the summary lists them.
pub fn run_scenario(config_path: &Path, opts: &RunOptions) -> CliResult<RunSummary> {
    let scenario = Scenario::load(config_path)?;
    run_loaded(&scenario, opts)
}

pub fn run_loaded(scenario: &Scenario, opts: &RunOptions) -> CliResult<RunSummary> {
    let master = opts.seed.unwrap_or(scenario.config.seed);
    let out_dir = resolve_out(scenario, opts);
    ensure_dir(&out_dir)?;
    let manifest = manifest_for(scenario, master);
    let hash = manifest.write(&out_dir)?;

    let jobs: Vec<(SweepPoint, usize)> = scenario
        .config
        .points()
        .into_iter()
        .flat_map(|p| (0..scenario.config.trials).map(move |t| (p, t)))
        .collect();
    let pool = build_pool(opts.jobs)?;
    let results: Vec<CliResult<TrialOutput>> =
        pool.install(|| jobs.par_iter().map(|&(p, t)| run_trial(scenario, master, p, t)).collect());

    let mut metrics = TableWriter::create(&out_dir.join("metrics.csv"))?;
    let mut reports = JsonLines::create(&out_dir.join("reports.jsonl"))?;
    let mut rows = 0;
    let mut failures = Vec::new();
    for (&(point, trial), result) in jobs.iter().zip(&results) {
        match result {
            Ok(out) => {
                let mut row = out.row.clone();
                row.manifest_hash = hash.clone();
                metrics.row(&row)?;
                rows += 1;
                for r in &out.reports {
                    reports.line(&ReportLine { manifest_hash: &hash, point: point.index, trial, report: Some(r), error: None })?;
                }
            }
            Err(e) => {
                let msg = e.to_string();
                reports.line(&ReportLine { manifest_hash: &hash, point: point.index, trial, report: None, error: Some(&msg) })?;
                failures.push(format!("point {} trial {trial}: {msg}", point.index));
            }
        }
    }
    if rows == 0 {
        // Keep the header so the file is still a valid table.
        drop(metrics);
        let mut w = csv::Writer::from_path(out_dir.join("metrics.csv")).map_err(|e| CliError::Runtime(e.to_string()))?;
        w.write_record(METRIC_COLUMNS).map_err(|e| CliError::Runtime(e.to_string()))?;
        w.flush().map_err(CliError::io(out_dir.join("metrics.csv")))?;
    } else {
        metrics.finish()?;
    }
    reports.finish()?;
    Ok(RunSummary { out_dir, manifest_hash: hash, rows, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_the_documented_columns() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(MetricRow::default()).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRIC_COLUMNS.join(","));
    }
}
