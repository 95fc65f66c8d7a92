use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use cloudcast_core::autodiff::Fault;
use cloudcast_core::cells::{CellKind, CloudArchitecture, CloudNet};
use cloudcast_core::checkpoint;
use cloudcast_core::gradcheck::{run_suite, SUITE_TOLERANCE};
use cloudcast_core::report::{aggregate_report, horizon_errors_csv, samples_to_csv, SampleResult, SkillReport};
use cloudcast_core::solar::{NetKind, SolarNet, SolarNetSpec, SolarSearchSpace};
use cloudcast_core::training::{grid_search_cloud, history_csv, CloudGrid, TrainError, TrialOutcome};
use cloudcast_pipeline::cloud::{forecast_frames, train_cloud_model, CloudForecasts, CloudTrainSpec};
use cloudcast_pipeline::experiment::{derive_seed, run_experiment, ExperimentConfig, SPLIT_RATIOS};
use cloudcast_pipeline::solar::{by_site, search_solar_net, train_solar_net};
use cloudcast_pipeline::{
    build_samples, daylight_origins, generate_fleet, load_fleet, run_benchmark, save_fleet, split_chronological, Fleet,
    Lineage, PersistenceForecaster, PipelineError, PowerForecaster, Scenario, SolarBank, SolarExample, Split,
    SynthConfig,
};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::dump::read_samples;
use crate::error::CliError;
use crate::manifest::{input_hash, FileHash, OutputDir};
use crate::{RunOpts, DEFAULT_SEED};

const SOLAR_SEED_FAMILY: u64 = 100;

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    (serde_json::to_string_pretty(value).expect("value serializes") + "\n").into_bytes()
}

fn to_value<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("value serializes")
}

fn rel_name(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

fn load_data(data: &Path) -> Result<(Fleet, Split, FileHash), CliError> {
    let fleet = load_fleet(data)?;
    let split = split_chronological(&daylight_origins(&fleet), SPLIT_RATIOS)?;
    Ok((fleet, split, input_hash(data)?))
}

fn write_report(out: &mut OutputDir, samples: &[SampleResult], report: &SkillReport, dump: bool) -> Result<(), CliError> {
    out.write("report.csv", report.to_csv().as_bytes())?;
    out.write("report.txt", report.to_text().as_bytes())?;
    out.write("horizon_errors.csv", horizon_errors_csv(samples).as_bytes())?;
    if dump {
        out.write("samples.csv", samples_to_csv(samples).as_bytes())?;
    }
    Ok(())
}

pub fn generate(config: &Path, run: &RunOpts) -> Result<(), CliError> {
    let mut cfg: SynthConfig = read_config(config)?;
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let fleet = generate_fleet(&cfg)?;
    let mut out = OutputDir::create(&run.out)?;
    for path in save_fleet(&fleet, out.root())? {
        out.record(&rel_name(&run.out, &path));
    }
    out.write("synth_config.json", &pretty(&cfg))?;
    out.finish("generate", to_value(&cfg), cfg.seed, vec![input_hash(config)?])?;
    println!(
        "generated {} sites x {} frames ({}x{}) into {}",
        fleet.sites.len(),
        fleet.frames.len(),
        cfg.height,
        cfg.width,
        run.out.display()
    );
    Ok(())
}

fn parse_cell(cell: &str) -> Result<CellKind, CliError> {
    CellKind::parse(cell)
        .filter(|k| *k != CellKind::Identity)
        .ok_or_else(|| CliError::config(format!("unknown cell {cell:?}; expected convlstm, cbam or sa")))
}

fn into_train_error(e: PipelineError) -> TrainError {
    match e {
        PipelineError::Training { source, .. } => source,
        other => TrainError::Config(other.to_string()),
    }
}

fn cloud_metadata(spec: &CloudTrainSpec, seed: u64) -> serde_json::Value {
    json!({ "kind": "cloud", "arch": spec.arch, "spec": spec, "seed": seed })
}

pub fn train_cloud(data: &Path, cell: &str, spec: Option<&Path>, grid: bool, run: &RunOpts) -> Result<(), CliError> {
    let kind = parse_cell(cell)?;
    let spec: CloudTrainSpec = match spec {
        Some(path) => read_config(path)?,
        None => ExperimentConfig::desk()
            .clouds
            .into_iter()
            .find(|c| c.arch.cell == kind)
            .expect("desk config covers every cell"),
    };
    if spec.arch.cell != kind {
        return Err(CliError::config(format!("spec is for {} but --cell is {cell}", spec.arch.cell.as_str())));
    }
    let seed = run.seed.unwrap_or(DEFAULT_SEED);
    let (fleet, split, data_hash) = load_data(data)?;
    let mut out = OutputDir::create(&run.out)?;
    let id = spec.id();

    let (best_spec, net, history) = if grid {
        let trained = Mutex::new(BTreeMap::new());
        let result = grid_search_cloud(&CloudGrid::table(), run.jobs, |point, trial| {
            let mut s = spec.clone();
            s.arch.layers = point.layers;
            s.arch.hidden = point.hidden;
            s.batch_size = point.batch_size;
            let (net, outcome) = train_cloud_model(&s, &fleet, &split.train, &split.val, seed.wrapping_add(trial as u64))
                .map_err(into_train_error)?;
            let n_params = net.params().numel();
            let val_loss = outcome.best_val_loss;
            trained.lock().expect("grid lock").insert(trial, (s, net, outcome.history));
            Ok(TrialOutcome { val_loss, n_params })
        })
        .map_err(|e| CliError::from(e).context(format!("{id} grid search")))?;
        out.write(&format!("cloud_{id}_grid.json"), (result.to_json() + "\n").as_bytes())?;
        let best = result.best();
        println!(
            "grid: {} candidates, best layers={} hidden={} batch={} val_loss={:.6}",
            result.trials.len(),
            best.spec.layers,
            best.spec.hidden,
            best.spec.batch_size,
            best.val_loss
        );
        trained.into_inner().expect("grid lock").remove(&best.trial).expect("every trial stored")
    } else {
        let (net, outcome) = train_cloud_model(&spec, &fleet, &split.train, &split.val, seed)?;
        (spec.clone(), net, outcome.history)
    };

    let bytes = checkpoint::encode(net.params(), &cloud_metadata(&best_spec, seed));
    out.write(&format!("cloud_{id}.ckpt"), &bytes)?;
    out.write(&format!("cloud_{id}_history.csv"), history_csv(&history).as_bytes())?;
    let config = json!({ "cell": id, "spec": best_spec, "grid": grid, "jobs": run.jobs });
    out.finish_as(&format!("run_train_cloud_{id}.json"), "train-cloud", config, seed, vec![data_hash])?;
    let best = history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    println!("trained {id}: {} epochs, best val loss {best:.6}", history.len());
    Ok(())
}

fn parse_net(net: &str) -> Result<NetKind, CliError> {
    NetKind::parse(net).ok_or_else(|| CliError::config(format!("unknown net {net:?}; expected mlp, cnn1d or lstm")))
}

fn parse_lineage(lineage: &str) -> Result<Lineage, CliError> {
    Lineage::parse(lineage)
        .ok_or_else(|| CliError::config(format!("unknown lineage {lineage:?}; expected with_clouds or no_clouds")))
}

fn solar_file(kind: NetKind, lineage: Lineage, site: &str) -> String {
    format!("solar_{kind}_{lineage}_{site}.ckpt")
}

#[allow(clippy::too_many_arguments)]
pub fn train_solar(
    data: &Path,
    net: &str,
    lineage: &str,
    trials: usize,
    space: Option<&Path>,
    spec: Option<&Path>,
    run: &RunOpts,
) -> Result<(), CliError> {
    let kind = parse_net(net)?;
    let lineage = parse_lineage(lineage)?;
    let fixed: Option<SolarNetSpec> = spec.map(read_config).transpose()?;
    let space_override: Option<SolarSearchSpace> = space.map(read_config).transpose()?;
    if fixed.as_ref().is_some_and(|s| s.kind != kind) || space_override.as_ref().is_some_and(|s| s.kind != kind) {
        return Err(CliError::config(format!("configuration is not for a {kind} net")));
    }
    if trials == 0 {
        return Err(CliError::config("--trials must be at least 1"));
    }
    let seed = run.seed.unwrap_or(DEFAULT_SEED);
    let (fleet, split, data_hash) = load_data(data)?;
    let train = build_samples(&fleet, &split.train)?;
    let val = build_samples(&fleet, &split.val)?;
    let train_by_site = by_site(&train, fleet.sites.len());
    let val_by_site = by_site(&val, fleet.sites.len());

    let mut out = OutputDir::create(&run.out)?;
    let mut searches = Vec::new();
    for (i, site) in fleet.sites.iter().enumerate() {
        let cap = site.capacity_kw;
        let tr: Vec<SolarExample> = train_by_site[i].iter().map(|s| SolarExample::from_sample(s, cap)).collect();
        let va: Vec<SolarExample> = val_by_site[i].iter().map(|s| SolarExample::from_sample(s, cap)).collect();
        let site_seed = derive_seed(seed, SOLAR_SEED_FAMILY, i as u64);
        let fail = |e: TrainError| CliError::from(e).context(format!("site {}", site.id));
        let trained = match &fixed {
            Some(spec) => train_solar_net(spec, lineage, &tr, &va, site_seed).map_err(fail)?.0,
            None => {
                let space = space_override.clone().unwrap_or_else(|| SolarSearchSpace::table(kind, tr.len()));
                let (result, net) =
                    search_solar_net(&space, trials, lineage, &tr, &va, site_seed, run.jobs).map_err(fail)?;
                let ranked: serde_json::Value = serde_json::from_str(&result.to_json()).expect("search json parses");
                searches.push(json!({ "site": site.id, "search": ranked }));
                net
            }
        };
        let meta = json!({ "kind": "solar", "spec": trained.spec(), "lineage": lineage, "site": site.id });
        out.write(&solar_file(kind, lineage, &site.id), &checkpoint::encode(trained.params(), &meta))?;
        println!("site {}: {:?}", site.id, trained.spec());
    }
    if fixed.is_none() {
        out.write(&format!("search_{kind}_{lineage}.json"), &pretty(&searches))?;
    }
    let config = json!({
        "net": kind,
        "lineage": lineage,
        "trials": trials,
        "space": space_override,
        "spec": fixed,
        "jobs": run.jobs,
    });
    let manifest = format!("run_train_solar_{kind}_{lineage}.json");
    out.finish_as(&manifest, "train-solar", config, seed, vec![data_hash])?;
    Ok(())
}

fn parse_list(list: &str) -> Vec<&str> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn load_cloud_model(dir: &Path, id: &str, inputs: &mut Vec<FileHash>) -> Result<CloudNet<f64>, CliError> {
    let path = dir.join(format!("cloud_{id}.ckpt"));
    if !path.exists() && id == CellKind::Identity.as_str() {
        return Ok(CloudNet::new(CloudArchitecture::identity(), 0)?);
    }
    let (params, meta) = checkpoint::load::<f64>(&path)?;
    let arch: CloudArchitecture = serde_json::from_value(meta["arch"].clone())
        .map_err(|e| CliError::config(format!("{}: architecture metadata: {e}", path.display())))?;
    inputs.push(input_hash(&path)?);
    Ok(CloudNet::from_params(arch, &params)?)
}

fn load_bank(dir: &Path, fleet: &Fleet, kind: NetKind, lineage: Lineage, inputs: &mut Vec<FileHash>) -> Result<SolarBank, CliError> {
    let mut nets = Vec::new();
    for site in &fleet.sites {
        let path = dir.join(solar_file(kind, lineage, &site.id));
        let (params, meta) = checkpoint::load::<f64>(&path)?;
        let spec: SolarNetSpec = serde_json::from_value(meta["spec"].clone())
            .map_err(|e| CliError::config(format!("{}: spec metadata: {e}", path.display())))?;
        inputs.push(input_hash(&path)?);
        nets.push(SolarNet::from_params(spec, lineage.with_clouds(), &params)?);
    }
    Ok(SolarBank::new(kind, lineage, nets)?)
}

pub fn evaluate(data: &Path, checkpoints: &Path, scenarios: &str, nets: &str, run: &RunOpts) -> Result<(), CliError> {
    let scenarios = parse_list(scenarios)
        .into_iter()
        .map(Scenario::parse)
        .collect::<Result<Vec<_>, _>>()?;
    let nets = parse_list(nets);
    if scenarios.is_empty() || nets.is_empty() {
        return Err(CliError::config("at least one scenario and one net are required"));
    }
    let (fleet, split, data_hash) = load_data(data)?;
    let test = build_samples(&fleet, &split.test)?;
    let mut inputs = vec![data_hash];

    let mut forecasts: Vec<CloudForecasts> = Vec::new();
    for scenario in &scenarios {
        if let Scenario::ForecastedClouds(id) = scenario {
            if forecasts.iter().any(|f| f.model_id == *id) {
                continue;
            }
            let net = load_cloud_model(checkpoints, id, &mut inputs)?;
            forecasts.push(forecast_frames(&net, id, &fleet, &split.test)?);
        }
    }

    let mut banks = Vec::new();
    let mut with_persistence = false;
    for &name in &nets {
        if name == "persistence" {
            with_persistence = true;
            continue;
        }
        let kind = parse_net(name)?;
        for lineage in [Lineage::WithClouds, Lineage::NoClouds] {
            if scenarios.iter().any(|s| s.uses_clouds() == lineage.with_clouds()) {
                banks.push(load_bank(checkpoints, &fleet, kind, lineage, &mut inputs)?);
            }
        }
    }
    let mut models: Vec<&dyn PowerForecaster> = banks.iter().map(|b| b as &dyn PowerForecaster).collect();
    if with_persistence {
        models.push(&PersistenceForecaster);
    }
    let output = run_benchmark(&fleet, &test, &scenarios, &models, &forecasts, run.jobs)?;

    let mut out = OutputDir::create(&run.out)?;
    write_report(&mut out, &output.samples, &output.report, true)?;
    let config = json!({
        "scenarios": scenarios.iter().map(Scenario::name).collect::<Vec<_>>(),
        "nets": nets,
        "jobs": run.jobs,
    });
    out.finish("evaluate", config, run.seed.unwrap_or(DEFAULT_SEED), inputs)?;
    print!("{}", output.report.to_text());
    Ok(())
}

pub fn report(samples: &Path, out_dir: &Path) -> Result<(), CliError> {
    let samples_hash = input_hash(samples)?;
    let results = read_samples(samples)?;
    if results.is_empty() {
        return Err(CliError::config(format!("{} holds no samples", samples.display())));
    }
    let report = aggregate_report(&results).map_err(|e| CliError::config(e.to_string()))?;
    let mut out = OutputDir::create(out_dir)?;
    write_report(&mut out, &results, &report, false)?;
    out.finish("report", json!({ "samples": results.len() }), 0, vec![samples_hash])?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn experiment(config: Option<&Path>, preset: &str, run: &RunOpts) -> Result<(), CliError> {
    let (mut cfg, inputs) = match config {
        Some(path) => (read_config::<ExperimentConfig>(path)?, vec![input_hash(path)?]),
        None => match preset {
            "desk" => (ExperimentConfig::desk(), Vec::new()),
            "smoke" => (ExperimentConfig::smoke(), Vec::new()),
            other => return Err(CliError::config(format!("unknown preset {other:?}; expected desk or smoke"))),
        },
    };
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    cfg.jobs = run.jobs;
    let started = Instant::now();
    let (fleet, result) = run_experiment(&cfg)?;

    let mut out = OutputDir::create(&run.out)?;
    let data_dir = run.out.join("data");
    for path in save_fleet(&fleet, &data_dir)? {
        out.record(&rel_name(&run.out, &path));
    }
    for (name, bytes) in result.checkpoints(&fleet) {
        out.write(&format!("checkpoints/{name}.ckpt"), &bytes)?;
    }
    for c in &result.clouds {
        out.write(&format!("cloud_{}_history.csv", c.id), history_csv(&c.history).as_bytes())?;
    }
    out.write("cloud_ssim.csv", result.cloud_ssim_table().as_bytes())?;
    out.write("class_shares.json", &pretty(&result.shares))?;
    out.write("split.json", &pretty(&result.split))?;
    write_report(&mut out, &result.benchmark.samples, &result.benchmark.report, true)?;
    out.write("experiment_config.json", &pretty(&cfg))?;
    out.finish("experiment", to_value(&cfg), cfg.seed, inputs)?;

    print!("{}", result.cloud_ssim_table());
    print!("{}", result.benchmark.report.to_text());
    println!("finished in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

pub fn gradcheck(inject_fault: bool, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let fault = if inject_fault { Fault::FlipTanhBackward } else { Fault::None };
    let started = Instant::now();
    let entries = run_suite(seed, fault).map_err(|e| CliError::failure(e.to_string()))?;
    for e in &entries {
        println!("{:<22} {:>10.3e}  {}", e.name, e.max_error, if e.passed() { "ok" } else { "FAIL" });
    }
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect();
    println!(
        "{} checks, {} failed, tolerance {SUITE_TOLERANCE:e}, {:.1}s",
        entries.len(),
        failed.len(),
        started.elapsed().as_secs_f64()
    );
    if let Some(dir) = out {
        let mut outdir = OutputDir::create(dir)?;
        outdir.write("gradcheck.json", &pretty(&entries))?;
        outdir.finish("gradcheck", json!({ "inject_fault": inject_fault }), seed, Vec::new())?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::failure(format!("gradient check failed for {}", failed.join(", "))))
    }
}
