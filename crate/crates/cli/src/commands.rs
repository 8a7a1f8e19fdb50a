use std::path::{Path, PathBuf};

use fpscm::data::Dataset;
use fpscm::fip::{train_mse, FipModel};
use fpscm::io::{read_bundle, read_json, write_file, write_json, write_metadataset, Manifest};
use fpscm::metrics::{cf_eval, f1_directed, ks_statistic, tos, CfEvalConfig, ScoreReport, ScoreRow};
use fpscm::scm::{reparameterize_standard, Permutation};
use fpscm::synth::{make_metadataset, standard_scm_of, Preset};
use fpscm::to::{infer_to, infer_to_voting, resume_to, train_to, ToEncoderParams, ToTrainState};
use fpscm::{CoreError, Result};
use serde_json::json;

use crate::config::RunConfig;

pub const TO_CKPT: &str = "to.ckpt";
pub const FIP_CKPT: &str = "fip.ckpt";
pub const RESOLVED_CONFIG: &str = "config.ini";

fn write_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    write_file(&out.join(RESOLVED_CONFIG), cfg.to_ini().as_bytes())
}

fn write_report(out: &Path, name: &str, report: &ScoreReport) -> Result<()> {
    write_file(&out.join(format!("{name}.json")), report.to_json().as_bytes())?;
    write_file(&out.join(format!("{name}.csv")), report.to_csv().as_bytes())
}

/// Samples a metadataset and writes its bundles and manifest under `out`.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let preset = Preset::by_name(&cfg.gen.preset)?;
    let datasets = make_metadataset(&preset, &cfg.gen.dims, cfg.gen.count, cfg.gen.samples, cfg.seed, cfg.gen.standardize)?;
    let manifest = write_metadataset(out, &datasets, Some(&preset.name), cfg.seed)?;
    write_config(out, cfg)?;
    Ok(manifest)
}

fn load_manifest(path: &Path) -> Result<Vec<Dataset>> {
    read_json::<Manifest>(path)?.load_all(path)
}

fn mean_tos(params: &ToEncoderParams, datasets: &[Dataset], chunk: usize) -> Result<ScoreReport> {
    let rows = datasets
        .iter()
        .map(|ds| {
            let p = infer_with(params, ds, chunk)?;
            Ok(ScoreRow {
                id: ds.provenance.id.clone(),
                value: tos(&p, &ds.truth()?.dag)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreReport::new("tos", rows))
}

fn infer_with(params: &ToEncoderParams, ds: &Dataset, chunk: usize) -> Result<Permutation> {
    let x = ds.raw_x();
    if chunk > 0 && x.rows() > chunk {
        infer_to_voting(params, &x, chunk)
    } else {
        infer_to(params, &x)
    }
}

/// Trains the ordering model on every dataset of a manifest. With `resume`
/// an existing checkpoint in `out` is continued up to the configured epochs.
pub fn train_to_cmd(cfg: &RunConfig, manifest: &Path, out: &Path, resume: bool) -> Result<ToTrainState> {
    let datasets = load_manifest(manifest)?;
    for ds in &datasets {
        ds.truth().map_err(|_| CoreError::Data(format!("dataset '{}' lacks truth.dag needed for training", ds.provenance.id)))?;
    }
    let mut train = cfg.to_train.clone();
    train.seed = cfg.seed;
    let ckpt = out.join(TO_CKPT);
    let state = if resume && ckpt.exists() {
        resume_to(ToTrainState::load(&ckpt)?, &datasets, &train)?
    } else {
        train_to(ToEncoderParams::init(&cfg.to_encoder, cfg.seed)?, &datasets, &train)?
    };
    state.save(&ckpt)?;
    let report = mean_tos(&state.params, &datasets, 0)?;
    write_report(out, "train_tos", &report)?;
    let metrics = json!({
        "epochs": state.epochs_done(),
        "optimizer_steps": state.adam.step_count(),
        "curve": state.curve,
        "train_tos": report.summary(),
    });
    write_json(&out.join("metrics.json"), &metrics)?;
    write_config(out, cfg)?;
    Ok(state)
}

/// Where the ordering used to train the transformer comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ToSource {
    /// The dataset's ground-truth ordering.
    Truth,
    /// A JSON array of node indices, parents first.
    PermFile(PathBuf),
    /// Inferred by a trained ordering model.
    Checkpoint(PathBuf),
}

pub fn resolve_ordering(source: &ToSource, ds: &Dataset, chunk: usize) -> Result<Permutation> {
    let p = match source {
        ToSource::Truth => ds
            .truth()
            .map_err(|_| CoreError::Data(format!("dataset '{}' lacks truth.order", ds.provenance.id)))?
            .order
            .clone(),
        ToSource::PermFile(path) => Permutation::new(read_json::<Vec<usize>>(path)?)?,
        ToSource::Checkpoint(path) => infer_with(&ToEncoderParams::load(path)?, ds, chunk)?,
    };
    if p.len() != ds.d() {
        return Err(CoreError::Argument(format!("ordering has {} nodes, dataset {}", p.len(), ds.d())));
    }
    Ok(p)
}

/// Fits the transformer under an ordering and reports its curve, test loss
/// and, when the truth is known, ordering TOS and graph F1.
pub fn train_fip_cmd(cfg: &RunConfig, dataset: &Path, source: &ToSource, chunk: usize, out: &Path) -> Result<FipModel> {
    let ds = read_bundle(dataset)?;
    let perm = resolve_ordering(source, &ds, chunk)?;
    let outcome = train_mse(&ds, &perm, &cfg.fip.model(ds.d()), &cfg.fip_train, cfg.seed)?;
    let model = outcome.model;
    model.save(&out.join(FIP_CKPT))?;
    let graph = model.extract_graph(&ds, cfg.fip.tau, Some(cfg.eval.graph_rows))?;
    let (tos_value, f1) = match &ds.truth {
        Some(t) => (Some(tos(&perm, &t.dag)?), Some(f1_directed(&graph.dag, &t.dag)?)),
        None => (None, None),
    };
    let report = json!({
        "dataset": ds.provenance.id,
        "ordering": perm.map(),
        "ordering_tos": tos_value,
        "graph_f1": f1,
        "tau": cfg.fip.tau,
        "edges": graph.dag.edges(),
        "test_loss": outcome.test_loss,
        "steps": outcome.steps,
        "curve": outcome.curve,
    });
    write_json(&out.join("report.json"), &report)?;
    write_config(out, cfg)?;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Graph,
    Counterfactual,
    Generation,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Graph => "graph",
            Task::Counterfactual => "counterfactual",
            Task::Generation => "generation",
        }
    }
}

pub fn parse_tasks(list: &str) -> Result<Vec<Task>> {
    let tasks = list
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| match t {
            "graph" => Ok(Task::Graph),
            "counterfactual" => Ok(Task::Counterfactual),
            "generation" => Ok(Task::Generation),
            other => Err(CoreError::Argument(format!(
                "unknown task '{other}'; expected graph, counterfactual or generation"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    if tasks.is_empty() {
        return Err(CoreError::Argument("no evaluation task given".into()));
    }
    Ok(tasks)
}

/// Scores a trained model on one dataset; each task writes `<task>.json`
/// and `<task>.csv` under `out`.
pub fn eval_cmd(cfg: &RunConfig, ckpt: &Path, dataset: &Path, tasks: &[Task], out: &Path) -> Result<Vec<(Task, ScoreReport)>> {
    if tasks.is_empty() {
        return Err(CoreError::Argument("no evaluation task given".into()));
    }
    let model = FipModel::load(ckpt)?;
    let ds = read_bundle(dataset)?;
    if ds.d() != model.d() {
        return Err(CoreError::Argument(format!("model has {} nodes, dataset {}", model.d(), ds.d())));
    }
    let id = ds.provenance.id.clone();
    let missing = |field: &str, task: Task| CoreError::Data(format!("task '{}' needs {field}, absent in dataset '{id}'", task.name()));
    let mut reports = Vec::new();
    for &task in tasks {
        let report = match task {
            Task::Graph => {
                let truth = ds.truth.as_ref().ok_or_else(|| missing("truth.dag", task))?;
                let g = model.extract_graph(&ds, cfg.fip.tau, Some(cfg.eval.graph_rows))?;
                ScoreReport::new(
                    "f1",
                    vec![ScoreRow {
                        id: id.clone(),
                        value: f1_directed(&g.dag, &truth.dag)?,
                    }],
                )
            }
            Task::Counterfactual => {
                let truth = ds.truth.as_ref().ok_or_else(|| missing("truth.scm", task))?;
                if truth.scm.is_none() {
                    return Err(missing("truth.scm (simulator access)", task));
                }
                let scm = reparameterize_standard(&standard_scm_of(&ds)?, &truth.order)?;
                let cf = CfEvalConfig {
                    n_interventions: cfg.eval.n_interventions,
                    per_intervention: cfg.eval.per_intervention,
                    reference_samples: cfg.eval.reference_samples,
                    seed: cfg.seed,
                };
                cf_eval(&scm, &model, &cf, None)?
            }
            Task::Generation => {
                let q = model.estimate_noise_quantiles(&ds)?;
                let generated = model.generate(&q, cfg.eval.generate_samples, cfg.seed)?;
                let x = ds.raw_x();
                let rows = (0..ds.d())
                    .map(|j| {
                        Ok(ScoreRow {
                            id: format!("node{j}"),
                            value: ks_statistic(&generated.x.column(j), &x.column(j))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                ScoreReport::new("ks", rows)
            }
        };
        write_report(out, task.name(), &report)?;
        reports.push((task, report));
    }
    write_config(out, cfg)?;
    Ok(reports)
}
