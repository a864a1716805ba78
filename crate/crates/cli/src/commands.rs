use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dcrnn::autodiff::Checkpoint;
use dcrnn::data::{
    chronological_split, fit_zscore, forecast_inputs, load_series, make_windows, parse_timestamp,
    SpeedSeries, SplitRanges, SynthConfig, WindowConfig,
};
use dcrnn::dcgru::Gate;
use dcrnn::dconv::filter_response;
use dcrnn::graph::{build_adjacency, read_distances, read_node_ids};
use dcrnn::metrics::{write_report, HorizonMetrics};
use dcrnn::seq2seq::{forecast_samples, TemporalMode};
use dcrnn::{DenseMatrix, Error, Model, ModelConfig, WeightedDigraph, ZScore};

use crate::config::{DataSection, RunConfig};
use crate::error::with_path;
use crate::{CliError, GateArg, StackArg};

const DEFAULT_HORIZONS: [usize; 3] = [3, 6, 12];

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn flush(mut w: impl Write) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::Core(e.into()))
}

pub fn build_graph(distances: &Path, nodes: &Path, kappa: f64, out: &Path) -> Result<(), CliError> {
    let records = read_distances(distances).map_err(with_path(distances))?;
    let ids = read_node_ids(nodes).map_err(with_path(nodes))?;
    let graph = build_adjacency(&records, &ids, kappa)?;
    graph.save(out).map_err(with_path(out))?;
    println!("nodes={}", graph.n_nodes());
    println!("edges={}", graph.weights().nnz());
    if let Some(k) = graph.kernel() {
        println!("sigma={}", k.sigma);
    }
    Ok(())
}

fn load_graph_file(path: &Path) -> Result<WeightedDigraph, CliError> {
    WeightedDigraph::load(path).map_err(with_path(path))
}

pub fn synth(
    graph: &Path,
    steps: usize,
    seed: u64,
    lambda: f64,
    noise: f64,
    out: &Path,
) -> Result<(), CliError> {
    let graph = load_graph_file(graph)?;
    let cfg = SynthConfig {
        steps,
        seed,
        lambda,
        noise_std: noise,
        ..SynthConfig::default()
    };
    let series = dcrnn::data::synth_diffusion(&graph, &cfg)?;
    series.save(out).map_err(with_path(out))?;
    println!("steps={}", series.n_steps());
    println!("nodes={}", series.n_nodes());
    Ok(())
}

fn load_graph(data: &DataSection) -> Result<WeightedDigraph, CliError> {
    match (&data.graph, &data.distances, &data.nodes) {
        (Some(g), _, _) => load_graph_file(g),
        (None, Some(d), Some(n)) => {
            let records = read_distances(d).map_err(with_path(d))?;
            let ids = read_node_ids(n).map_err(with_path(n))?;
            Ok(build_adjacency(&records, &ids, data.kappa)?)
        }
        _ => Err(CliError::Config(
            "data needs `graph`, or `distances` together with `nodes`".into(),
        )),
    }
}

/// Graph, series with columns in graph node order, and split.
struct Dataset {
    graph: WeightedDigraph,
    series: SpeedSeries,
    split: SplitRanges,
    windows: WindowConfig,
}

fn load_dataset(cfg: &RunConfig, model: &ModelConfig) -> Result<Dataset, CliError> {
    let graph = load_graph(&cfg.data)?;
    let path = cfg
        .data
        .series
        .as_ref()
        .ok_or_else(|| CliError::Config("data.series is required".into()))?;
    let series = load_series(path, cfg.data.sentinel())
        .map_err(with_path(path))?
        .select_nodes(graph.node_ids())?;
    let [tr, va, te] = cfg.data.split;
    let split =
        chronological_split(series.n_steps(), tr, va, te).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Dataset {
        graph,
        series,
        split,
        windows: WindowConfig {
            history: model.history,
            horizon: model.horizon,
            time_of_day: cfg.data.time_of_day,
        },
    })
}

pub fn train(config: &Path, overrides: &[String], output_dir: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config, overrides)?;
    if let Some(dir) = output_dir {
        cfg.data.output_dir = dir;
    }
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let ds = load_dataset(&cfg, &model_cfg)?;
    let z = fit_zscore(&ds.series, ds.split.train.clone())?;
    let train_set = make_windows(&ds.series, &z, &ds.windows, ds.split.train.clone());
    let val_set = make_windows(&ds.series, &z, &ds.windows, ds.split.val.clone());
    if train_set.is_empty() {
        return Err(CliError::Input(format!(
            "training split of {} steps is shorter than history + horizon",
            ds.split.train.len()
        )));
    }

    let dir = &cfg.data.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut model = Model::new(model_cfg, &ds.graph, train_cfg.seed)?;
    println!("epoch,train_loss,val_loss,lr,epsilon");
    let report = dcrnn::seq2seq::train(&mut model, &train_set, &val_set, &train_cfg, |e| {
        println!(
            "{},{},{},{},{}",
            e.epoch, e.train_loss, e.val_loss, e.lr, e.epsilon
        );
    })?;

    let trace_path = dir.join("train_report.csv");
    let mut w = create(&trace_path)?;
    report.write_trace(&mut w)?;
    flush(w)?;
    let ckpt_path = dir.join("best.ckpt");
    model
        .to_checkpoint(Some(&z))
        .save(&ckpt_path)
        .map_err(with_path(&ckpt_path))?;
    eprintln!(
        "trained {} epochs ({} iterations) in {:.2}s; best epoch {} with validation MAE {}",
        report.epochs.len(),
        report.iterations,
        report.wall_clock_secs,
        report.best_epoch,
        report.best_val_loss()
    );
    Ok(())
}

/// Differences between the configured model and a checkpoint's metadata,
/// one `key: config X, checkpoint Y` per line.
fn config_diff(cfg: &ModelConfig, ck: &Checkpoint) -> Option<String> {
    let lines: Vec<String> = cfg
        .to_metadata()
        .into_iter()
        .filter_map(|(k, v)| match ck.metadata.get(&k) {
            Some(c) if *c == v => None,
            Some(c) => Some(format!("{k}: config {v}, checkpoint {c}")),
            None => Some(format!("{k}: config {v}, checkpoint missing")),
        })
        .collect();
    (!lines.is_empty()).then(|| lines.join("\n"))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(with_path(path))
}

fn checkpoint_zscore(ck: &Checkpoint) -> Result<Option<ZScore>, CliError> {
    let get = |k: &str| ck.metadata.get(k).and_then(|v| v.parse::<f64>().ok());
    match (get("zscore.mean"), get("zscore.std")) {
        (Some(mean), Some(std)) => Ok(Some(ZScore::new(mean, std)?)),
        _ => Ok(None),
    }
}

/// Config, dataset, restored model and normalization for `eval`/`predict`.
fn restore(
    config: &Path,
    overrides: &[String],
    checkpoint: &Path,
) -> Result<(Dataset, Model, ZScore), CliError> {
    let cfg = RunConfig::load(config, overrides)?;
    let model_cfg = cfg.model_config()?;
    let ck = load_checkpoint(checkpoint)?;
    if let Some(diff) = config_diff(&model_cfg, &ck) {
        return Err(
            Error::CheckpointMismatch(format!("model config differs from checkpoint\n{diff}")).into(),
        );
    }
    let ds = load_dataset(&cfg, &model_cfg)?;
    let mut model = Model::new(model_cfg, &ds.graph, 0)?;
    model.load_checkpoint(&ck)?;
    let z = match checkpoint_zscore(&ck)? {
        Some(z) => z,
        None => fit_zscore(&ds.series, ds.split.train.clone())?,
    };
    Ok((ds, model, z))
}

fn check_horizons(horizons: &[usize], max: usize) -> Result<(), CliError> {
    match horizons.iter().find(|&&h| h == 0 || h > max) {
        Some(h) => Err(CliError::Input(format!("horizon {h} outside 1..={max}"))),
        None => Ok(()),
    }
}

fn print_report(rows: &[HorizonMetrics], minutes_per_step: usize) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    write_report(&mut w, rows, minutes_per_step)?;
    flush(w)
}

pub fn eval_model(
    config: &Path,
    overrides: &[String],
    checkpoint: &Path,
    horizons: Option<Vec<usize>>,
) -> Result<(), CliError> {
    let minutes = RunConfig::load(config, overrides)?.data.minutes_per_step;
    let (ds, model, z) = restore(config, overrides, checkpoint)?;
    let horizons = horizons.unwrap_or_else(|| DEFAULT_HORIZONS.to_vec());
    check_horizons(&horizons, model.config().horizon)?;
    let test_set = make_windows(&ds.series, &z, &ds.windows, ds.split.test.clone());
    if test_set.is_empty() {
        return Err(CliError::Input(format!(
            "test split of {} steps is shorter than history + horizon",
            ds.split.test.len()
        )));
    }
    let forecasts = forecast_samples(&model, &test_set, 64)?;
    let n = ds.series.n_nodes();
    let mut rows = Vec::new();
    for &h in &horizons {
        let mut truth = Vec::with_capacity(n * test_set.len());
        let mut pred = Vec::with_capacity(truth.capacity());
        let mut mask = Vec::with_capacity(truth.capacity());
        for (s, sample) in test_set.iter().enumerate() {
            let t = sample.start + ds.windows.history + h - 1;
            for i in 0..n {
                truth.push(ds.series.values.get(t, i));
                pred.push(z.invert(forecasts[h - 1].get(i, s)));
                mask.push(ds.series.observed(t, i));
            }
        }
        rows.push(HorizonMetrics::compute(h, &truth, &pred, &mask)?);
    }
    print_report(&rows, minutes)
}

pub fn eval_files(truth: &Path, prediction: &Path, horizons: Option<Vec<usize>>) -> Result<(), CliError> {
    let pred = load_series(prediction, None).map_err(with_path(prediction))?;
    let truth = load_series(truth, Some(dcrnn::data::DEFAULT_MISSING_SENTINEL))
        .map_err(with_path(truth))?
        .select_nodes(&pred.node_ids)?;
    let horizons = horizons.unwrap_or_else(|| (1..=pred.n_steps()).collect());
    check_horizons(&horizons, pred.n_steps())?;
    let n = pred.n_nodes();
    let mut rows = Vec::new();
    for &h in &horizons {
        let ts = pred.timestamps[h - 1];
        let t = truth.step_at(ts).ok_or_else(|| {
            CliError::Input(format!(
                "prediction timestamp {} is not in the truth series",
                dcrnn::data::format_timestamp(ts)
            ))
        })?;
        let truth_row = truth.values.row(t);
        let pred_row = pred.values.row(h - 1);
        let mask: Vec<bool> = (0..n)
            .map(|i| truth.observed(t, i) && pred.observed(h - 1, i))
            .collect();
        rows.push(HorizonMetrics::compute(h, truth_row, pred_row, &mask)?);
    }
    let minutes = match truth.interval_secs() {
        s if s > 0 => (s / 60) as usize,
        _ => 5,
    };
    print_report(&rows, minutes)
}

fn parse_step(series: &SpeedSeries, at: &str) -> Result<usize, CliError> {
    if let Ok(step) = at.parse::<usize>() {
        return Ok(step);
    }
    let ts = parse_timestamp(at)
        .ok_or_else(|| CliError::Input(format!("--at `{at}` is neither a step nor a timestamp")))?;
    let next = series.timestamps.last().map(|&l| l + series.interval_secs());
    series
        .step_at(ts)
        .or_else(|| (Some(ts) == next).then_some(series.n_steps()))
        .ok_or_else(|| CliError::Input(format!("timestamp `{at}` is not a step of the series")))
}

pub fn predict(
    config: &Path,
    overrides: &[String],
    checkpoint: &Path,
    at: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (ds, model, z) = restore(config, overrides, checkpoint)?;
    let step = parse_step(&ds.series, at)?;
    let inputs = forecast_inputs(&ds.series, &z, &ds.windows, step)?;
    let frames = model.forecast(&inputs.inputs, &inputs.aux)?;
    let n = ds.series.n_nodes();
    let mut values = DenseMatrix::zeros(frames.len(), n);
    for (t, f) in frames.iter().enumerate() {
        for i in 0..n {
            values.set(t, i, z.invert(f.get(i, 0)));
        }
    }
    let forecast = SpeedSeries::dense(ds.series.node_ids.clone(), inputs.timestamps, values)?;
    match out {
        Some(path) => forecast.save(path).map_err(with_path(path))?,
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            forecast.write(&mut w)?;
            flush(w)?;
        }
    }
    Ok(())
}

pub struct FilterRequest {
    pub checkpoint: PathBuf,
    pub node: String,
    pub graph: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub stack: StackArg,
    pub layer: usize,
    pub gate: GateArg,
    pub input: usize,
    pub output: usize,
}

pub fn export_filter(req: &FilterRequest) -> Result<(), CliError> {
    let graph = match (&req.graph, &req.config) {
        (Some(g), _) => load_graph_file(g)?,
        (None, Some(c)) => load_graph(&RunConfig::load(c, &[])?.data)?,
        (None, None) => return Err(CliError::Input("export-filter needs --graph or --config".into())),
    };
    let ck = load_checkpoint(&req.checkpoint)?;
    let model = Model::from_checkpoint(&ck, &graph)?;
    let center = graph
        .node_index(&req.node)
        .ok_or_else(|| Error::UnknownNode(req.node.clone()))?;
    let out_of_range = |count: usize| CliError::Input(format!("layer {} outside 0..{count}", req.layer));
    let params = if model.config().temporal_mode == TemporalMode::Dcnn {
        let stages = model.feedforward_layers();
        let count = stages.len();
        stages
            .into_iter()
            .nth(req.layer)
            .ok_or_else(|| out_of_range(count))?
    } else {
        let (enc, dec) = model.recurrent_layers();
        let layers = match req.stack {
            StackArg::Encoder => enc,
            StackArg::Decoder => dec,
        };
        let gate = match req.gate {
            GateArg::Reset => Gate::Reset,
            GateArg::Update => Gate::Update,
            GateArg::Candidate => Gate::Candidate,
        };
        layers
            .get(req.layer)
            .ok_or_else(|| out_of_range(layers.len()))?
            .gate_layer(model.params(), gate)
    };
    let weights = filter_response(model.supports(), &params, req.input, req.output, center)?;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let io = |e: std::io::Error| CliError::Core(e.into());
    writeln!(w, "node_id,weight").map_err(io)?;
    for (id, v) in graph.node_ids().iter().zip(&weights) {
        writeln!(w, "{id},{v}").map_err(io)?;
    }
    flush(w)
}
