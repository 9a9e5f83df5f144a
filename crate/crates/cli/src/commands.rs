use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use voltshm::detection::{detection_experiment, Condition, DetectionReport};
use voltshm::montecarlo::{
    ensemble_convergence, identify_realization, run_ensemble, simulate_realization,
    RealizationData, RealizationResult,
};
use voltshm::plant::PlantParams;
use voltshm::volterra::{fit_pole_relations, PoleRelationFit, PoleRelations};
use voltshm::{EnsembleConfig, ModelEnsemble, StochasticPlantSpec, TimeSeries};

use crate::config::{severity_label, ConditionId};
use crate::output::{write_json, write_text, Staged};
use crate::{CliError, Context};

pub const SIGNALS_DIR: &str = "signals";
pub const ENSEMBLES_DIR: &str = "ensembles";
pub const CONVERGENCE_DIR: &str = "convergence";
pub const REPORT_DIR: &str = "report";
pub const ROC_DIR: &str = "roc";
pub const RELATIONS_FILE: &str = "relations.json";
pub const FIT_RELATIONS_FILE: &str = "fit_relations.csv";
const MANIFEST_FILE: &str = "manifest.json";
const PARAMS_FILE: &str = "params.json";

/// Everything a command needs after validation, resolved before any file is
/// written.
struct Plan {
    spec: StochasticPlantSpec,
    conditions: Vec<ConditionId>,
    n: usize,
}

fn plan(ctx: &Context) -> Result<Plan, CliError> {
    Ok(Plan {
        spec: ctx.config.plant_spec()?,
        conditions: ctx.config.conditions(),
        n: ctx.n_realizations(),
    })
}

fn condition_spec(spec: &StochasticPlantSpec, c: ConditionId) -> StochasticPlantSpec {
    spec.with_alpha(c.severity())
}

fn progress(msg: impl AsRef<str>) {
    eprintln!("voltshm: {}", msg.as_ref());
}

#[derive(Debug, Serialize, Deserialize)]
struct SignalManifest {
    created_unix_s: u64,
    seed: u64,
    n_realizations: usize,
    snr_db: Option<f64>,
    spec: StochasticPlantSpec,
    conditions: Vec<SignalCondition>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SignalCondition {
    name: String,
    severity: f64,
    base_seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RealizationParams {
    index: usize,
    params: Option<PlantParams>,
    failure: Option<String>,
}

fn low_name(i: usize) -> String {
    format!("y_low_{i}.csv")
}

fn high_name(i: usize) -> String {
    format!("y_high_{i}.csv")
}

/// Writes `signals/<condition>/` for every condition: the two excitation
/// records once (`u_low.csv`, `u_high.csv`), the measured responses per
/// realization, and `params.json` with the drawn plant parameters.
pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let plan = plan(ctx)?;
    // Relations do not affect simulation.
    let relations = PoleRelations::reference();
    let staged = Staged::new(&ctx.out, SIGNALS_DIR)?;
    let root = staged.dir()?.to_path_buf();
    let mut manifest_conditions = Vec::new();
    for &c in &plan.conditions {
        let cfg = ctx.config.ensemble_config(c, plan.n, relations);
        cfg.validate()?;
        let spec = condition_spec(&plan.spec, c);
        let dir = root.join(c.name());
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        progress(format!("simulating {} ({} realizations)", c.name(), plan.n));
        ctx.config
            .setup
            .low_input()?
            .write_csv(&dir.join("u_low.csv"))?;
        ctx.config
            .setup
            .high_input()?
            .write_csv(&dir.join("u_high.csv"))?;
        let params = (0..plan.n)
            .into_par_iter()
            .map(|i| match simulate_realization(&spec, &cfg, i) {
                Ok(d) => {
                    d.y_low.write_csv(&dir.join(low_name(i)))?;
                    d.y_high.write_csv(&dir.join(high_name(i)))?;
                    Ok(RealizationParams {
                        index: i,
                        params: Some(d.params),
                        failure: None,
                    })
                }
                Err(e) => Ok(RealizationParams {
                    index: i,
                    params: None,
                    failure: Some(e.to_string()),
                }),
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        write_json(&dir.join(PARAMS_FILE), &params)?;
        manifest_conditions.push(SignalCondition {
            name: c.name(),
            severity: c.severity(),
            base_seed: cfg.base_seed,
        });
    }
    let manifest = SignalManifest {
        created_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        seed: ctx.config.seed,
        n_realizations: plan.n,
        snr_db: ctx.config.snr_db,
        spec: plan.spec,
        conditions: manifest_conditions,
    };
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    let done = staged.commit()?;
    progress(format!("wrote {}", done.display()));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct RelationsRecord {
    /// `config` when given in the configuration, `fitted` otherwise.
    source: String,
    relations: PoleRelations,
    fit: Option<PoleRelationFit>,
}

fn resolve_relations(
    ctx: &Context,
    spec: &StochasticPlantSpec,
) -> Result<RelationsRecord, CliError> {
    match ctx.config.relations {
        Some(relations) => Ok(RelationsRecord {
            source: "config".into(),
            relations,
            fit: None,
        }),
        None => {
            progress("fitting pole relations on the nominal plant");
            let fit = fit_pole_relations(
                &spec.nominal,
                &ctx.config.setup,
                &PoleRelations::reference(),
            )?;
            Ok(RelationsRecord {
                source: "fitted".into(),
                relations: fit.relations,
                fit: Some(fit),
            })
        }
    }
}

/// Reads one condition's simulated records back, checking they were produced
/// under the current configuration.
fn identify_from_signals(
    signals: &Path,
    manifest: &SignalManifest,
    c: ConditionId,
    spec: &StochasticPlantSpec,
    cfg: &EnsembleConfig,
) -> Result<ModelEnsemble, CliError> {
    let dir = signals.join(c.name());
    let Some(entry) = manifest.conditions.iter().find(|m| m.name == c.name()) else {
        return Err(CliError::Missing {
            what: format!("signals for {}", c.name()),
            paths: vec![dir],
        });
    };
    if entry.base_seed != cfg.base_seed {
        return Err(CliError::Config(format!(
            "signals for {} were simulated with another seed; rerun simulate",
            c.name()
        )));
    }
    let params: Vec<RealizationParams> = read_json(&dir.join(PARAMS_FILE))?;
    let u_low = TimeSeries::read_csv(&dir.join("u_low.csv"))?;
    let u_high = TimeSeries::read_csv(&dir.join("u_high.csv"))?;
    let results: Vec<voltshm::Result<RealizationResult>> = params
        .par_iter()
        .map(|p| {
            let Some(params) = p.params else {
                return Err(voltshm::Error::Validation(format!(
                    "simulation failed: {}",
                    p.failure.as_deref().unwrap_or("unknown")
                )));
            };
            let data = RealizationData {
                params,
                u_low: u_low.clone(),
                y_low: TimeSeries::read_csv(&dir.join(low_name(p.index)))?,
                u_high: u_high.clone(),
                y_high: TimeSeries::read_csv(&dir.join(high_name(p.index)))?,
            };
            let (modal, model) = identify_realization(&data, cfg)?;
            Ok(RealizationResult {
                index: p.index,
                params,
                modal,
                model,
            })
        })
        .collect();
    Ok(ModelEnsemble::from_results(*spec, *cfg, results)?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_manifest(ctx: &Context, n: usize) -> Result<SignalManifest, CliError> {
    let path = ctx.out.join(SIGNALS_DIR).join(MANIFEST_FILE);
    if !path.exists() {
        return Err(CliError::Missing {
            what: "simulated signals (run `simulate` first or pass --inline)".into(),
            paths: vec![path],
        });
    }
    let m: SignalManifest = read_json(&path)?;
    if m.n_realizations != n || m.snr_db != ctx.config.snr_db {
        return Err(CliError::Config(format!(
            "{} was produced with {} realizations at SNR {:?}; this run expects {n} at {:?}",
            path.display(),
            m.n_realizations,
            m.snr_db,
            ctx.config.snr_db
        )));
    }
    Ok(m)
}

/// `n,kernel1,kernel2_diag,kernel3_diag`
pub fn convergence_csv(ensemble: &ModelEnsemble) -> Result<String, CliError> {
    let curves = [
        ensemble_convergence(ensemble, 1)?,
        ensemble_convergence(ensemble, 2)?,
        ensemble_convergence(ensemble, 3)?,
    ];
    let mut out = String::from("n,kernel1,kernel2_diag,kernel3_diag\n");
    for n in 0..curves[0].len() {
        out += &format!(
            "{},{},{},{}\n",
            n + 1,
            curves[0][n],
            curves[1][n],
            curves[2][n]
        );
    }
    Ok(out)
}

/// Identifies all conditions and writes `ensembles/`, `convergence/` and
/// `relations.json`. Returns the ensembles in condition order.
fn identify_all(ctx: &Context, plan: &Plan, inline: bool) -> Result<Vec<ModelEnsemble>, CliError> {
    let manifest = if inline {
        None
    } else {
        Some(load_manifest(ctx, plan.n)?)
    };
    let relations = resolve_relations(ctx, &plan.spec)?;
    for &c in &plan.conditions {
        ctx.config
            .ensemble_config(c, plan.n, relations.relations)
            .validate()?;
    }
    let ens_stage = Staged::new(&ctx.out, ENSEMBLES_DIR)?;
    let conv_stage = Staged::new(&ctx.out, CONVERGENCE_DIR)?;
    let rel_stage = Staged::new(&ctx.out, RELATIONS_FILE)?;
    let mut ensembles = Vec::with_capacity(plan.conditions.len());
    for &c in &plan.conditions {
        let cfg = ctx.config.ensemble_config(c, plan.n, relations.relations);
        let spec = condition_spec(&plan.spec, c);
        progress(format!(
            "identifying {} ({} realizations)",
            c.name(),
            plan.n
        ));
        let ensemble = match &manifest {
            None => run_ensemble(&spec, &cfg)?,
            Some(m) => identify_from_signals(&ctx.out.join(SIGNALS_DIR), m, c, &spec, &cfg)?,
        };
        if !ensemble.failures.is_empty() {
            progress(format!(
                "{}: {} realizations failed",
                c.name(),
                ensemble.failures.len()
            ));
        }
        ensemble.save(&ens_stage.dir()?.join(c.name()))?;
        write_text(
            &conv_stage.dir()?.join(format!("{}.csv", c.name())),
            &convergence_csv(&ensemble)?,
        )?;
        ensembles.push(ensemble);
    }
    write_json(rel_stage.path(), &relations)?;
    ens_stage.commit()?;
    conv_stage.commit()?;
    rel_stage.commit()?;
    Ok(ensembles)
}

pub fn identify(ctx: &Context, inline: bool) -> Result<(), CliError> {
    let plan = plan(ctx)?;
    identify_all(ctx, &plan, inline)?;
    progress(format!("wrote {}", ctx.out.join(ENSEMBLES_DIR).display()));
    Ok(())
}

fn load_ensembles(ctx: &Context, plan: &Plan) -> Result<Vec<ModelEnsemble>, CliError> {
    let root = ctx.out.join(ENSEMBLES_DIR);
    let missing: Vec<PathBuf> = plan
        .conditions
        .iter()
        .filter(|c| !root.join(c.name()).join("ensemble.json").exists())
        .flat_map(|c| ModelEnsemble::expected_paths(&root.join(c.name())))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Missing {
            what: "model ensembles (run `identify` first)".into(),
            paths: missing,
        });
    }
    plan.conditions
        .iter()
        .map(|c| Ok(ModelEnsemble::load(&root.join(c.name()))?))
        .collect()
}

fn run_detection(ctx: &Context, ensembles: &[ModelEnsemble]) -> Result<DetectionReport, CliError> {
    let (train, rest) = ensembles
        .split_first()
        .expect("conditions start with the references");
    let (test, damaged) = rest
        .split_first()
        .expect("conditions start with the references");
    if ensembles
        .iter()
        .any(|e| e.config.setup != train.config.setup)
    {
        return Err(CliError::Config(
            "ensembles were identified with different setups".into(),
        ));
    }
    let conditions: Vec<Condition<'_>> = ctx
        .config
        .severities
        .iter()
        .zip(damaged)
        .map(|(&severity, ensemble)| Condition { severity, ensemble })
        .collect();
    let probe = train.config.setup.high_input()?;
    progress("computing damage indexes");
    Ok(detection_experiment(
        train,
        test,
        &conditions,
        &ctx.config.kinds,
        &ctx.config.betas,
        Some(&probe),
    )?)
}

fn write_report(ctx: &Context, report: &DetectionReport) -> Result<(), CliError> {
    let staged = Staged::new(&ctx.out, REPORT_DIR)?;
    report.write(staged.dir()?)?;
    staged.commit()?;
    Ok(())
}

/// `kind,severity,auc`
pub fn auc_csv(report: &DetectionReport) -> String {
    let mut out = String::from("kind,severity,auc\n");
    for idx in &report.indexes {
        for c in &idx.conditions {
            out += &format!(
                "{},{},{}\n",
                idx.kind,
                severity_label(c.severity),
                c.roc.auc
            );
        }
    }
    out
}

fn write_roc(ctx: &Context, report: &DetectionReport) -> Result<(), CliError> {
    let staged = Staged::new(&ctx.out, ROC_DIR)?;
    let dir = staged.dir()?;
    for idx in &report.indexes {
        let text = report.roc_csv(idx.kind).unwrap_or_default();
        write_text(&dir.join(format!("roc_{}.csv", idx.kind)), &text)?;
    }
    write_text(&dir.join("auc.csv"), &auc_csv(report))?;
    staged.commit()?;
    Ok(())
}

pub fn detect(ctx: &Context) -> Result<(), CliError> {
    let plan = plan(ctx)?;
    let ensembles = load_ensembles(ctx, &plan)?;
    let report = run_detection(ctx, &ensembles)?;
    write_report(ctx, &report)?;
    progress(format!("wrote {}", ctx.out.join(REPORT_DIR).display()));
    Ok(())
}

pub fn roc(ctx: &Context) -> Result<(), CliError> {
    let plan = plan(ctx)?;
    let ensembles = load_ensembles(ctx, &plan)?;
    let report = run_detection(ctx, &ensembles)?;
    write_roc(ctx, &report)?;
    progress(format!("wrote {}", ctx.out.join(ROC_DIR).display()));
    Ok(())
}

/// Identification (simulated in memory), detection and ROC over the whole
/// condition grid.
pub fn reproduce_paper(ctx: &Context) -> Result<(), CliError> {
    let plan = plan(ctx)?;
    let ensembles = identify_all(ctx, &plan, true)?;
    let report = run_detection(ctx, &ensembles)?;
    write_report(ctx, &report)?;
    write_roc(ctx, &report)?;
    progress(format!("wrote {}", ctx.out.display()));
    Ok(())
}

/// Fits the pole relations on the nominal plant at α = 1 and at every
/// configured severity, starting from the tabulated row where one exists.
/// Writes `fit_relations.csv`.
pub fn fit_relations(ctx: &Context) -> Result<(), CliError> {
    let spec = ctx.config.plant_spec()?;
    let mut alphas = vec![1.0];
    alphas.extend(ctx.config.severities.iter().copied().filter(|&a| a != 1.0));
    let staged = Staged::new(&ctx.out, FIT_RELATIONS_FILE)?;
    progress(format!(
        "fitting pole relations at {} severities",
        alphas.len()
    ));
    let fits = alphas
        .par_iter()
        .map(|&a| {
            let table = PoleRelations::tabulated(a);
            let start = table.unwrap_or_else(PoleRelations::reference);
            let fit = fit_pole_relations(&spec.nominal.with_alpha(a), &ctx.config.setup, &start)?;
            Ok((a, table, fit))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut out = String::from(
        "alpha,p1,p2,p3,p4,objective,initial_objective,evaluations,converged,table_p1,table_p2,table_p3,table_p4\n",
    );
    for (a, table, fit) in fits {
        let r = fit.relations;
        let t = table
            .map(|t| t.to_array().map(|v| v.to_string()).join(","))
            .unwrap_or_else(|| ",,,".into());
        out += &format!(
            "{},{},{},{},{},{},{},{},{},{t}\n",
            severity_label(a),
            r.p1,
            r.p2,
            r.p3,
            r.p4,
            fit.objective,
            fit.initial_objective,
            fit.evaluations,
            fit.converged
        );
    }
    write_text(staged.path(), &out)?;
    let done = staged.commit()?;
    progress(format!("wrote {}", done.display()));
    Ok(())
}
