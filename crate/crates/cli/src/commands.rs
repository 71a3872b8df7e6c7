use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use guardrl::guardian::{
    empirical_coverage, fit_kde_guardian, fit_knn_guardian, fit_psos, Guardian, GuardianModel,
};
use guardrl::mdp::{
    read_dataset_csv, write_dataset_csv, CmdpSpec, DatasetMetadata, InitialStates, OfflineDataset, Policy, Split,
    TransitionModel,
};
use guardrl::metrics::{
    acp, aggregate_reports, air, build_report, default_concordance_epsilon, mcr, mortality_estimate, ood_visit_rate,
    MetricsReport, SeedMetrics,
};
use guardrl::models::{CostRules, KnnConfig, KnnTransitionModel, RewardRule};
use guardrl::policy::{
    guarded_rollouts, train_guarded, train_penalty, write_training_log, ConstraintEstimates, DualState,
    GaussianPolicy, GuardedEcmdp, TrainMode,
};
use guardrl::rng::{self, tag};
use guardrl::synthetic::{generate_dataset, BehaviorPolicy, SyntheticClinicalCmdp};
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_bytes, read_manifest, read_stamped, read_stamped_as, sha256_hex, stamped_json, Outputs};
use crate::config::{GuardianSection, RunConfig, Simulator};
use crate::error::{CliError, CliResult};

pub const DATASET: &str = "dataset.csv";
pub const DATASET_META: &str = "dataset.meta.json";
pub const ENV: &str = "env.json";
pub const GUARDIAN: &str = "guardian.json";
pub const CALIBRATION: &str = "guardian_calibration.json";
pub const MODEL: &str = "model.json";

pub fn policy_file(seed: u64) -> String {
    format!("policy_seed{seed}.json")
}

pub fn report_file(seed: u64) -> String {
    format!("report_seed{seed}.json")
}

pub struct Ctx {
    pub config: RunConfig,
    pub config_sha256: String,
    pub quiet: bool,
}

impl Ctx {
    pub fn new(config: RunConfig, quiet: bool) -> Self {
        let config_sha256 = config.sha256();
        Ctx { config, config_sha256, quiet }
    }

    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn out(&self) -> &Path {
        &self.config.output_dir
    }

    fn outputs(&self, command: &str) -> Outputs {
        Outputs::new(self.out(), command, &self.config_sha256)
    }

    /// The synthetic environment with the generation noise level applied.
    fn env(&self) -> Option<SyntheticClinicalCmdp> {
        self.config.env.as_ref().map(|e| SyntheticClinicalCmdp {
            sigma_env: e.generation.sigma_env,
            ..e.dynamics.clone().unwrap_or_default()
        })
    }
}

/// Loaded dataset plus the SHA-256 of its CSV bytes.
struct Data {
    ds: OfflineDataset,
    sha256: String,
}

fn load_dataset(ctx: &Ctx) -> CliResult<Data> {
    let (csv_path, meta_path) = match &ctx.config.dataset_path {
        Some(p) => {
            let mut meta = p.as_os_str().to_owned();
            meta.push(".meta.json");
            (p.clone(), PathBuf::from(meta))
        }
        None => (ctx.out().join(DATASET), ctx.out().join(DATASET_META)),
    };
    let bytes = read_bytes(&csv_path)?;
    let sha256 = sha256_hex(&bytes);
    if let Some(expected) = &ctx.config.dataset_sha256 {
        if !expected.eq_ignore_ascii_case(&sha256) {
            return Err(CliError::Data(format!(
                "{} has SHA-256 {sha256}, config expects {expected}",
                csv_path.display()
            )));
        }
    }
    if ctx.config.dataset_path.is_none() {
        if let Some(entry) = read_manifest(ctx.out())?.get(DATASET) {
            if entry.sha256 != sha256 {
                return Err(CliError::Data(format!("{} does not match the manifest", csv_path.display())));
            }
        }
    }
    let meta = if meta_path.exists() {
        // Sidecars written by gen-data carry provenance; hand-written ones may not.
        let mut value: serde_json::Value =
            serde_json::from_slice(&read_bytes(&meta_path)?).map_err(CliError::data)?;
        if let Some(map) = value.as_object_mut() {
            map.remove("provenance");
        }
        let m: DatasetMetadata = serde_json::from_value(value).map_err(CliError::data)?;
        Some(m)
    } else {
        None
    };
    let ds = read_dataset_csv(bytes.as_slice(), meta.as_ref())?;
    Ok(Data { ds, sha256 })
}

fn split_nonempty(ds: &OfflineDataset, split: Split) -> CliResult<OfflineDataset> {
    let part = ds.split(split);
    if part.num_samples() == 0 {
        return Err(CliError::Data(format!("the {} split is empty", split.as_str())));
    }
    Ok(part)
}

/// Evenly strided subsample of at most `max` points.
fn stride(points: Vec<Vec<f64>>, max: Option<usize>) -> Vec<Vec<f64>> {
    match max {
        Some(max) if points.len() > max => (0..max).map(|i| points[i * points.len() / max].clone()).collect(),
        _ => points,
    }
}

fn inputs<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn check_input(file: &str, provenance: &BTreeMap<String, String>, name: &str, sha: &str) -> CliResult<()> {
    match provenance.get(name) {
        Some(h) if h == sha => Ok(()),
        Some(_) => Err(CliError::Model(format!("{file} was built from a different {name}; rerun the earlier stages"))),
        None => Err(CliError::Model(format!("{file} does not record {name} as an input"))),
    }
}

pub fn gen_data(ctx: &Ctx) -> CliResult<()> {
    let section = ctx
        .config
        .env
        .as_ref()
        .ok_or_else(|| CliError::Config("gen-data needs an env section".into()))?;
    let env = ctx.env().expect("env section present");
    let behavior = BehaviorPolicy::standard(&env);
    ctx.log(format!("generating {} trajectories", section.generation.n_trajectories));
    let ds = generate_dataset(&env, &behavior, &section.generation)?;
    let env = env.with_support_oracle(&behavior, section.generation.horizon, section.support_seed)?;
    let mut csv = Vec::new();
    write_dataset_csv(&ds, &mut csv)?;
    let sha = sha256_hex(&csv);
    let mut out = ctx.outputs("gen-data");
    let prov = out.provenance(BTreeMap::new());
    out.add(DATASET_META, stamped_json(&DatasetMetadata::of(&ds), &out.provenance(inputs([(DATASET, &sha)])))?);
    out.add(ENV, stamped_json(&env, &prov)?);
    out.add(DATASET, csv);
    out.commit()
}

#[derive(Serialize)]
struct Calibration {
    #[serde(rename = "type")]
    kind: &'static str,
    n_fit: usize,
    train_coverage: f64,
    val_coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<serde_json::Value>,
}

pub fn fit_guardian(ctx: &Ctx) -> CliResult<()> {
    let data = load_dataset(ctx)?;
    let train = split_nonempty(&data.ds, Split::Train)?;
    let max_points = match &ctx.config.guardian {
        GuardianSection::Psos { max_points, .. } | GuardianSection::Kde { max_points, .. } => *max_points,
        GuardianSection::Knn { .. } => None,
    };
    let points = stride(train.standardized_points(), max_points);
    ctx.log(format!("fitting guardian on {} points", points.len()));
    let (model, details) = match &ctx.config.guardian {
        GuardianSection::Psos { d, alpha_c, solver, .. } => {
            let c = fit_psos(&points, *d, *alpha_c, &solver.clone().unwrap_or_default())?;
            let report = serde_json::to_value(&c.fit_report).map_err(|e| CliError::Internal(e.to_string()))?;
            (GuardianModel::Psos(c), Some(report))
        }
        GuardianSection::Kde { alpha, h, .. } => {
            let g = fit_kde_guardian(&points, *alpha, h.map(|h| vec![h; points[0].len()]))?;
            let details = serde_json::json!({ "outlier_fraction": g.outlier_fraction() });
            (GuardianModel::Kde(g), Some(details))
        }
        GuardianSection::Knn { k, alpha, calibration_fraction, seed } => {
            (GuardianModel::Knn(fit_knn_guardian(&points, *alpha, *k, *calibration_fraction, *seed)?), None)
        }
    };
    let val = data.ds.split(Split::Val);
    let val_coverage = if val.num_samples() > 0 {
        Some(empirical_coverage(&model, &val.standardized_points())?)
    } else {
        None
    };
    let calibration = Calibration {
        kind: model.kind(),
        n_fit: points.len(),
        train_coverage: empirical_coverage(&model, &points)?,
        val_coverage,
        details,
    };
    let guardian = Guardian::new(data.ds.standardization.clone(), model)?;
    let mut out = ctx.outputs("fit-guardian");
    let prov = out.provenance(inputs([(DATASET, &data.sha256)]));
    out.add(GUARDIAN, stamped_json(&guardian, &prov)?);
    out.add(CALIBRATION, stamped_json(&calibration, &prov)?);
    out.commit()
}

/// The fitted kNN model is rebuilt from the dataset, so the artifact holds
/// its hyperparameters, the rules and the dataset identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub knn: KnnConfig,
    pub reward: RewardRule,
    pub costs: CostRules,
    pub dataset_sha256: String,
    pub records: usize,
}

pub fn fit_model(ctx: &Ctx) -> CliResult<()> {
    let data = load_dataset(ctx)?;
    let train = split_nonempty(&data.ds, Split::Train)?;
    let env = ctx.env();
    let m = &ctx.config.model;
    let reward = m
        .reward
        .clone()
        .or_else(|| env.as_ref().map(|e| e.reward.clone()))
        .ok_or_else(|| CliError::Config("model.reward is required without an env section".into()))?;
    let costs = m
        .costs
        .clone()
        .or_else(|| env.as_ref().map(|e| e.costs.clone()))
        .ok_or_else(|| CliError::Config("model.costs is required without an env section".into()))?;
    reward.validate(data.ds.state_dim)?;
    costs.validate(data.ds.state_dim)?;
    if costs.len() != ctx.config.train.cost_thresholds.len() {
        return Err(CliError::Config(format!(
            "{} cost rules but {} cost thresholds",
            costs.len(),
            ctx.config.train.cost_thresholds.len()
        )));
    }
    let model = KnnTransitionModel::fit(&train, m.knn())?;
    ctx.log(format!("kNN model over {} records", model.len()));
    let artifact =
        ModelArtifact { knn: m.knn(), reward, costs, dataset_sha256: data.sha256.clone(), records: model.len() };
    let mut out = ctx.outputs("fit-model");
    let prov = out.provenance(inputs([(DATASET, &data.sha256)]));
    out.add(MODEL, stamped_json(&artifact, &prov)?);
    out.commit()
}

/// Everything downstream of the fitted artifacts, checked against the dataset.
struct Fitted {
    data: Data,
    guardian: Guardian,
    guardian_sha256: String,
    model: ModelArtifact,
    model_sha256: String,
}

fn load_fitted(ctx: &Ctx) -> CliResult<Fitted> {
    let data = load_dataset(ctx)?;
    let gpath = ctx.out().join(GUARDIAN);
    let guardian_sha256 = sha256_hex(&read_bytes(&gpath)?);
    let (gprov, gbody) = read_stamped(&gpath)?;
    check_input(GUARDIAN, &gprov.inputs, DATASET, &data.sha256)?;
    let guardian = Guardian::from_json(&gbody)?;
    let mpath = ctx.out().join(MODEL);
    let model_sha256 = sha256_hex(&read_bytes(&mpath)?);
    let (mprov, model): (_, ModelArtifact) = read_stamped_as(&mpath)?;
    check_input(MODEL, &mprov.inputs, DATASET, &data.sha256)?;
    Ok(Fitted { data, guardian, guardian_sha256, model, model_sha256 })
}

impl Fitted {
    fn ecmdp(&self, ctx: &Ctx, initial: &OfflineDataset) -> CliResult<GuardedEcmdp> {
        let train = split_nonempty(&self.data.ds, Split::Train)?;
        let dynamics = KnnTransitionModel::fit(&train, self.model.knn)?;
        GuardedEcmdp::new(
            dynamics,
            self.model.reward.clone(),
            self.model.costs.clone(),
            self.guardian.clone(),
            spec(ctx, initial),
        )
        .map_err(Into::into)
    }
}

fn spec(ctx: &Ctx, initial: &OfflineDataset) -> CmdpSpec {
    let t = &ctx.config.train;
    CmdpSpec {
        gamma: t.gamma,
        horizon: t.horizon,
        cost_thresholds: t.cost_thresholds.clone(),
        ood_threshold: t.ood_threshold,
        initial_states: InitialStates::Empirical { states: initial.initial_states() },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub feasible: bool,
    pub best_iteration: usize,
    pub estimates: ConstraintEstimates,
    pub dual: Option<DualState>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seeds: Vec<SeedSummary>,
}

pub fn train(ctx: &Ctx) -> CliResult<()> {
    let fitted = load_fitted(ctx)?;
    let train = split_nonempty(&fitted.data.ds, Split::Train)?;
    let ecmdp = fitted.ecmdp(ctx, &train)?;
    let t = &ctx.config.train;
    let mut out = ctx.outputs("train");
    let prov = out.provenance(inputs([(GUARDIAN, &fitted.guardian_sha256), (MODEL, &fitted.model_sha256)]));
    let mut seeds = Vec::new();
    for &seed in &t.seeds {
        let init = GaussianPolicy::behavior_cloning(&train, t.architecture, seed)?;
        let config = t.train_config(seed);
        let result = match config.mode {
            TrainMode::HardConstraint => train_guarded(&ecmdp, &init, &config)?,
            TrainMode::RewardPenalty { .. } => train_penalty(&ecmdp, &init, &config)?,
        };
        ctx.log(format!(
            "seed {seed}: feasible {} V_r {:.4} V_ood {:.4}",
            result.feasible, result.estimates.reward.estimate, result.estimates.ood.estimate
        ));
        out.add(policy_file(seed), stamped_json(&result.policy, &prov)?);
        let mut log = Vec::new();
        write_training_log(&result.log, &mut log)?;
        out.add(format!("train_log_seed{seed}.jsonl"), log);
        seeds.push(SeedSummary {
            seed,
            feasible: result.feasible,
            best_iteration: result.best_iteration,
            estimates: result.estimates,
            dual: result.dual,
        });
    }
    let infeasible: Vec<u64> = seeds.iter().filter(|s| !s.feasible).map(|s| s.seed).collect();
    out.add("train_summary.json", stamped_json(&TrainSummary { seeds }, &prov)?);
    out.commit()?;
    if infeasible.is_empty() {
        Ok(())
    } else {
        Err(CliError::Infeasible(format!("no feasible iterate for seeds {infeasible:?}")))
    }
}

/// Metrics of one policy: MCR, AIR and ACP on the test split; ME, rewards
/// and OOD visits from rollouts started at test initial states.
#[allow(clippy::too_many_arguments)]
fn evaluate<P, M>(
    ctx: &Ctx,
    policy: &P,
    seed: u64,
    test: &OfflineDataset,
    epsilon: f64,
    simulator: &M,
    fitted: &Fitted,
    guarded: &GuardedEcmdp,
) -> CliResult<SeedMetrics>
where
    P: Policy,
    M: TransitionModel + Clone,
{
    let e = &ctx.config.eval;
    let ec = e.eval_config();
    let eval_seed = rng::derive(e.seed, tag::EVAL, seed);
    let sequences: Vec<Vec<Vec<f64>>> = test
        .trajectories
        .iter()
        .map(|t| t.samples.iter().map(|s| policy.mean_action(&s.state)).collect())
        .collect();
    let spec = guarded.spec.clone();
    let (n, m) = (test.state_dim, test.action_dim);
    let sim = GuardedEcmdp::new(
        simulator.clone(),
        fitted.model.reward.clone(),
        fitted.model.costs.clone(),
        Guardian::accept_all(n, m),
        spec.clone(),
    )?;
    let cumulative_rewards = guarded_rollouts(&sim, policy, e.n_rollouts, rng::derive(eval_seed, tag::ROLLOUT, 0))?
        .iter()
        .map(|t| t.rewards.iter().sum())
        .collect();
    Ok(SeedMetrics {
        seed,
        mcr: mcr(policy, test, epsilon)?,
        air: air(policy, test, &ec)?,
        me: mortality_estimate(policy, simulator, &spec, e.n_rollouts, eval_seed)?,
        acp: acp(&sequences),
        ood_visit_rate: ood_visit_rate(policy, guarded, e.n_rollouts, rng::derive(eval_seed, tag::ROLLOUT, 1))?,
        cumulative_rewards,
    })
}

pub fn eval(ctx: &Ctx) -> CliResult<()> {
    let fitted = load_fitted(ctx)?;
    let test = split_nonempty(&fitted.data.ds, Split::Test)?;
    let train = split_nonempty(&fitted.data.ds, Split::Train)?;
    let ec = ctx.config.eval.eval_config();
    ec.validate(test.state_dim)?;
    let epsilon = match ec.concordance_epsilon {
        Some(e) => e,
        None => default_concordance_epsilon(&test)?,
    };
    let guarded = fitted.ecmdp(ctx, &test)?;
    let env = match ctx.config.eval.simulator {
        Simulator::Model => None,
        Simulator::TrueEnv => Some(ctx.env().ok_or_else(|| CliError::Config("true_env needs an env section".into()))?),
    };
    let run = |p: &GaussianPolicy, seed: u64| -> CliResult<SeedMetrics> {
        match &env {
            Some(env) => evaluate(ctx, p, seed, &test, epsilon, env, &fitted, &guarded),
            None => evaluate(ctx, p, seed, &test, epsilon, &guarded.dynamics, &fitted, &guarded),
        }
    };

    let mut out = ctx.outputs("eval");
    let mut learned = Vec::new();
    let mut baseline = Vec::new();
    let mut policy_hashes = BTreeMap::new();
    for &seed in &ctx.config.train.seeds {
        let name = policy_file(seed);
        let path = ctx.out().join(&name);
        let sha = sha256_hex(&read_bytes(&path)?);
        let (prov, body) = read_stamped(&path)?;
        check_input(&name, &prov.inputs, GUARDIAN, &fitted.guardian_sha256)?;
        check_input(&name, &prov.inputs, MODEL, &fitted.model_sha256)?;
        let policy = GaussianPolicy::from_json(&body)?;
        let metrics = run(&policy, seed)?;
        ctx.log(format!("seed {seed}: ME {:.4} OOD {:.4} MCR {:.4}", metrics.me, metrics.ood_visit_rate, metrics.mcr));
        let report = build_report(std::slice::from_ref(&metrics), epsilon, &ec)?;
        let prov = out.provenance(inputs([(DATASET, &fitted.data.sha256), (name.as_str(), &sha)]));
        out.add(report_file(seed), stamped_json(&report, &prov)?);
        learned.push(metrics);
        policy_hashes.insert(name, sha);

        let bc = GaussianPolicy::behavior_cloning(&train, ctx.config.train.architecture, seed)?;
        baseline.push(run(&bc, seed)?);
    }
    let mut all_inputs = policy_hashes;
    all_inputs.insert(DATASET.into(), fitted.data.sha256.clone());
    let prov = out.provenance(all_inputs);
    out.add("report.json", stamped_json(&build_report(&learned, epsilon, &ec)?, &prov)?);
    let prov = out.provenance(inputs([(DATASET, &fitted.data.sha256)]));
    out.add("report_behavior.json", stamped_json(&build_report(&baseline, epsilon, &ec)?, &prov)?);
    out.commit()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub reports: Vec<String>,
    pub rows: Vec<guardrl::metrics::AggregateRow>,
}

/// Aggregate per-seed reports: `paths`, or every `report_seed*.json` in the
/// output directory when empty.
pub fn report(out_dir: &Path, paths: &[PathBuf], config_sha256: &str) -> CliResult<()> {
    let named: Vec<(String, PathBuf)> = if paths.is_empty() {
        let mut found: Vec<(String, PathBuf)> = std::fs::read_dir(out_dir)
            .map_err(|e| CliError::Data(format!("cannot list {}: {e}", out_dir.display())))?
            .filter_map(|entry| {
                let path = entry.ok()?.path();
                let name = path.file_name()?.to_str()?.to_string();
                (name.starts_with("report_seed") && name.ends_with(".json")).then_some((name, path))
            })
            .collect();
        found.sort_by(|a, b| seed_order(&a.0).cmp(&seed_order(&b.0)));
        found
    } else {
        paths.iter().map(|p| (p.display().to_string(), p.clone())).collect()
    };
    if named.is_empty() {
        return Err(CliError::Data(format!("no report_seed*.json in {}", out_dir.display())));
    }
    let mut reports = Vec::new();
    let mut hashes = BTreeMap::new();
    for (name, path) in &named {
        hashes.insert(name.clone(), sha256_hex(&read_bytes(path)?));
        let (_, r): (_, MetricsReport) = read_stamped_as(path).map_err(|e| CliError::Data(e.to_string()))?;
        reports.push(r);
    }
    let rows = aggregate_reports(&reports);

    let mut table = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["n_reports".to_string()];
    let mut values = vec![reports.len().to_string()];
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in &rows {
        header.push(row.metric.clone());
        header.push(format!("{}_sd", row.metric));
        values.push(fmt(row.mean));
        values.push(fmt(row.sd));
    }
    table.write_record(&header).map_err(CliError::data)?;
    table.write_record(&values).map_err(CliError::data)?;

    let mut per_seed = csv::Writer::from_writer(Vec::new());
    per_seed
        .write_record(["report", "seed", "MCR", "AIR", "ME", "ACP", "OOD", "mean_reward"])
        .map_err(CliError::data)?;
    for ((name, _), r) in named.iter().zip(&reports) {
        for s in &r.per_seed {
            per_seed
                .write_record([
                    name.clone(),
                    s.seed.to_string(),
                    s.mcr.to_string(),
                    fmt(s.air),
                    s.me.to_string(),
                    fmt(s.acp_scalar),
                    s.ood_visit_rate.to_string(),
                    s.mean_reward.to_string(),
                ])
                .map_err(CliError::data)?;
        }
    }

    let mut out = Outputs::new(out_dir, "report", config_sha256);
    let prov = out.provenance(hashes);
    let summary = Summary { reports: named.iter().map(|(n, _)| n.clone()).collect(), rows };
    out.add("summary.json", stamped_json(&summary, &prov)?);
    out.add("summary.csv", table.into_inner().map_err(CliError::data)?);
    out.add("per_seed.csv", per_seed.into_inner().map_err(CliError::data)?);
    out.commit()
}

/// `report_seed12.json` sorts after `report_seed3.json`.
fn seed_order(name: &str) -> (Option<u64>, String) {
    let seed = name.strip_prefix("report_seed").and_then(|s| s.strip_suffix(".json")).and_then(|s| s.parse().ok());
    (seed, name.to_string())
}

/// Every stage in order; gen-data only with an env section.
pub fn run_all(ctx: &Ctx) -> CliResult<()> {
    if ctx.config.env.is_some() {
        gen_data(ctx)?;
    }
    fit_guardian(ctx)?;
    fit_model(ctx)?;
    train(ctx)?;
    eval(ctx)?;
    report(ctx.out(), &[], &ctx.config_sha256)
}
