//! Command implementations. Each returns the run directory it wrote.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use bundlenas_core::checkpoint::Model;
use bundlenas_core::data::{generate, kmeans_anchors, save_dataset, Sample};
use bundlenas_core::head::{Anchor, NUM_ANCHORS};
use bundlenas_core::hw::{estimate_fpga, estimate_gpu, make_tiling_plan, HwEstimate};
use bundlenas_core::quant::{quantize_network, InferenceGraph};
use bundlenas_core::scoring::{iou, leaderboard, BoundingBox, TeamResult};
use bundlenas_core::search::{run_search, Evaluator, FpgaLatency, GpuLatency, LatencyModel, Surrogate, TinyTrainer};
use bundlenas_core::train::{evaluate_with, mean, train};
use bundlenas_core::{instantiate, Network};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::{self, *};
use crate::{prepare_run_dir, usage, Command, RESOLVED_CONFIG};

/// Anchor k-means iterations.
const KMEANS_ITERATIONS: usize = 50;

pub fn dispatch(cmd: &Command) -> Result<PathBuf> {
    let common = cmd.common();
    let base = config_dir(&common.config);
    let out = common.out.as_deref();
    match cmd {
        Command::GenData { count, seed, .. } => {
            let mut cfg: GenDataConfig = config::load(&common.config)?;
            if let Some(c) = count {
                cfg.dataset.count = *c;
            }
            if let Some(s) = seed {
                cfg.dataset.seed = *s;
            }
            gen_data(cfg, out)
        }
        Command::Train { genome, epochs, seed, .. } => {
            let mut cfg: TrainCmdConfig = config::load(&common.config)?;
            resolve_genome(&mut cfg.genome, &mut cfg.genome_file, &base, genome.as_deref())?;
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(s) = seed {
                cfg.train.seed = *s;
                cfg.init_seed = *s;
            }
            cfg.data.resolve(&base)?;
            train_cmd(cfg, out)
        }
        Command::Eval { checkpoint, .. } => {
            let mut cfg: EvalCmdConfig = config::load(&common.config)?;
            resolve_checkpoint(&mut cfg.checkpoint, &base, checkpoint.as_deref());
            cfg.data.resolve(&base)?;
            eval_cmd(cfg, out)
        }
        Command::Quantize { checkpoint, .. } => {
            let mut cfg: QuantizeCmdConfig = config::load(&common.config)?;
            resolve_checkpoint(&mut cfg.checkpoint, &base, checkpoint.as_deref());
            cfg.data.resolve(&base)?;
            quantize_cmd(cfg, out)
        }
        Command::Estimate { genome, .. } => {
            let mut cfg: EstimateCmdConfig = config::load(&common.config)?;
            resolve_genome(&mut cfg.genome, &mut cfg.genome_file, &base, genome.as_deref())?;
            estimate_cmd(cfg, out)
        }
        Command::Score { .. } => {
            let mut cfg: ScoreCmdConfig = config::load(&common.config)?;
            cfg.results_dir = absolutize(&base, &cfg.results_dir);
            cfg.ground_truth = absolutize(&base, &cfg.ground_truth);
            score_cmd(cfg, out)
        }
        Command::Search { iterations, seed, workers, .. } => {
            let mut cfg: SearchCmdConfig = config::load(&common.config)?;
            if let Some(i) = iterations {
                if cfg.swarm.epoch_schedule.len() != *i {
                    cfg.swarm.epoch_schedule.clear();
                }
                cfg.swarm.iterations = *i;
            }
            if let Some(s) = seed {
                cfg.swarm.seed = *s;
            }
            if let EvaluatorConfig::TinyTrainer(t) = &mut cfg.evaluator {
                t.data.resolve(&base)?;
            }
            search_cmd(cfg, out, *workers)
        }
    }
}

fn resolve_checkpoint(path: &mut PathBuf, base: &Path, over: Option<&Path>) {
    *path = match over {
        Some(p) => absolutize(&std::env::current_dir().unwrap_or_default(), p),
        None => absolutize(base, path),
    };
}

fn usage_check<E: std::fmt::Display>(r: std::result::Result<(), E>) -> Result<()> {
    r.map_err(|e| usage(e.to_string()))
}

/// Creates the run directory and writes the resolved config into it.
fn start_run<T: Serialize>(command: &str, out: Option<&Path>, cfg: &T) -> Result<PathBuf> {
    let text = to_toml(cfg)?;
    let dir = prepare_run_dir(command, out)?;
    write(&dir.join(RESOLVED_CONFIG), text.as_bytes())?;
    Ok(dir)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn anchors_for(given: Option<[Anchor; NUM_ANCHORS]>, train: &[Sample]) -> Result<[Anchor; NUM_ANCHORS]> {
    match given {
        Some(a) => Ok(a),
        None => {
            let boxes: Vec<BoundingBox> = train.iter().map(|s| s.gt).collect();
            kmeans_anchors(&boxes, KMEANS_ITERATIONS).context("fitting anchor priors")
        }
    }
}

fn gen_data(cfg: GenDataConfig, out: Option<&Path>) -> Result<PathBuf> {
    usage_check(cfg.dataset.validate())?;
    let data = generate(&cfg.dataset)?;
    let dir = start_run("gen-data", out, &cfg)?;
    save_dataset(&data, &dir.join("dataset"))?;
    let ratios: Vec<f64> = data.iter().map(|s| s.gt.area()).collect();
    let small = ratios.iter().filter(|&&r| r < 0.09).count() as f64 / ratios.len().max(1) as f64;
    let summary = format!("images,fraction_below_0.09,mean_area_ratio\n{},{},{}\n", data.len(), small, mean(&ratios));
    write(&dir.join("summary.csv"), summary.as_bytes())?;
    Ok(dir)
}

fn train_cmd(mut cfg: TrainCmdConfig, out: Option<&Path>) -> Result<PathBuf> {
    let genome = cfg.genome.clone().expect("resolved");
    usage_check(cfg.train.validate())?;
    instantiate(&genome, cfg.input).map_err(|e| usage(e.to_string()))?;
    let (train_set, val_set) = cfg.data.load()?;
    check_image_size(&train_set, cfg.input)?;
    if cfg.train.epochs > 0 && train_set.is_empty() {
        bail!("training split is empty");
    }
    let anchors = anchors_for(cfg.anchors, &train_set)?;
    cfg.anchors = Some(anchors);
    let dir = start_run("train", out, &cfg)?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let mut net = Network::init(&genome, cfg.input, anchors, &mut rng)?;
    let history = train(&mut net, &train_set, &val_set, &cfg.train, |m| {
        eprintln!("epoch {} loss {:.4} val_iou {}", m.epoch, m.train_loss, m.val_iou.map_or("-".into(), |v| format!("{v:.4}")));
    })?;
    let mut csv = String::from("epoch,train_loss,val_iou\n");
    for m in &history {
        let _ = writeln!(csv, "{},{},{}", m.epoch, m.train_loss, m.val_iou.map_or(String::new(), |v| v.to_string()));
    }
    write(&dir.join("metrics.csv"), csv.as_bytes())?;
    let final_iou = history.last().and_then(|m| m.val_iou);
    let summary = format!(
        "epochs,param_count,final_val_iou\n{},{},{}\n",
        history.len(),
        net.param_count(),
        final_iou.map_or(String::new(), |v| v.to_string())
    );
    write(&dir.join("summary.csv"), summary.as_bytes())?;
    Model::Float(net).save(&dir.join("model.bnas"))?;
    Ok(dir)
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn eval_cmd(cfg: EvalCmdConfig, out: Option<&Path>) -> Result<PathBuf> {
    let model = load_model(&cfg.checkpoint)?;
    let data = cfg.subset.pick(&cfg.data)?;
    if data.is_empty() {
        bail!("evaluation set is empty");
    }
    check_image_size(&data, model.input_shape())?;
    let dir = start_run("eval", out, &cfg)?;
    let ious = evaluate_with(&data, |x| model.predict(x))?;
    let mut csv = String::from("image_id,iou\n");
    for (s, v) in data.iter().zip(&ious) {
        let _ = writeln!(csv, "{},{}", s.id, v);
    }
    write(&dir.join("ious.csv"), csv.as_bytes())?;
    let kind = match model {
        Model::Float(_) => "float",
        Model::Quantized(_) => "quantized",
    };
    let summary = format!("images,mean_iou,model\n{},{},{}\n", ious.len(), mean(&ious), kind);
    write(&dir.join("summary.csv"), summary.as_bytes())?;
    Ok(dir)
}

fn quantize_cmd(cfg: QuantizeCmdConfig, out: Option<&Path>) -> Result<PathBuf> {
    if cfg.schemes.is_empty() {
        return Err(usage("at least one quantization scheme is required"));
    }
    for s in &cfg.schemes {
        usage_check(s.validate())?;
    }
    let net = match load_model(&cfg.checkpoint)? {
        Model::Float(n) => n,
        Model::Quantized(_) => bail!("{} is already quantized", cfg.checkpoint.display()),
    };
    let (train_set, val_set) = cfg.data.load()?;
    let calib: Vec<_> = train_set.iter().take(cfg.calibration_images).map(|s| s.image.clone()).collect();
    if calib.is_empty() {
        bail!("no calibration images (training split is empty or calibration_images = 0)");
    }
    if val_set.is_empty() {
        bail!("validation split is empty");
    }
    check_image_size(&val_set, net.input_shape())?;
    let dir = start_run("quantize", out, &cfg)?;

    let float_iou = mean(&evaluate_with(&val_set, |x| net.predict(x))?);
    let graph = InferenceGraph::from_network(&net)?.fold_bn()?;
    let mut csv = String::from("scheme,fm_bits,w_bits,float_iou,quant_iou,delta\n");
    for (i, scheme) in cfg.schemes.iter().enumerate() {
        let q = quantize_network(&graph, scheme, &calib)?;
        let quant_iou = mean(&evaluate_with(&val_set, |x| q.predict(x))?);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            i + 1,
            scheme.fm_bits,
            scheme.w_bits,
            float_iou,
            quant_iou,
            quant_iou - float_iou
        );
        Model::Quantized(q).save(&dir.join(format!("model-fm{}-w{}.bnas", scheme.fm_bits, scheme.w_bits)))?;
    }
    write(&dir.join("report.csv"), csv.as_bytes())?;
    Ok(dir)
}

fn estimate_cmd(cfg: EstimateCmdConfig, out: Option<&Path>) -> Result<PathBuf> {
    let genome = cfg.genome.clone().expect("resolved");
    let spec = instantiate(&genome, cfg.input).map_err(|e| usage(e.to_string()))?;
    let est: HwEstimate = match cfg.device {
        Device::Fpga => {
            usage_check(cfg.fpga.validate())?;
            usage_check(cfg.quant.validate())?;
            let plan = make_tiling_plan(cfg.input, cfg.batch).map_err(|e| usage(e.to_string()))?;
            estimate_fpga(&spec, &cfg.quant, &plan, &cfg.fpga)?
        }
        Device::Gpu => {
            usage_check(cfg.gpu.validate())?;
            estimate_gpu(&spec, &cfg.gpu)?
        }
    };
    let dir = start_run("estimate", out, &cfg)?;
    let mut csv = String::from("index,kind,bundle,macs,load,conv3,conv1,pool,writeback,bottleneck\n");
    for l in &est.layers {
        let c = &l.cycles;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            l.index,
            l.kind,
            l.bundle.map_or_else(|| "head".to_string(), |b| b.to_string()),
            l.macs,
            c.load,
            c.conv3,
            c.conv1,
            c.pool,
            c.writeback,
            l.bottleneck
        );
    }
    write(&dir.join("layers.csv"), csv.as_bytes())?;
    let summary = format!(
        "latency_ms,latency_per_image_ms,cycles,dsp_used,bram_bytes_used,bottleneck,feasible,weight_bytes_per_image\n{},{},{},{},{},{},{},{}\n",
        est.latency_ms,
        est.latency_per_image_ms,
        est.cycles,
        est.dsp_used,
        est.bram_bytes_used,
        est.bottleneck,
        est.feasible,
        est.weight_bytes_per_image
    );
    write(&dir.join("summary.csv"), summary.as_bytes())?;
    Ok(dir)
}

#[derive(Debug, Deserialize)]
struct BoxRow {
    image_id: String,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Debug, Deserialize)]
struct EnergyRow {
    team: String,
    energy_joules: f64,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| anyhow!("{}: record {}: {e}", path.display(), i + 1)))
        .collect()
}

fn read_boxes(path: &Path) -> Result<BTreeMap<String, BoundingBox>> {
    let mut out = BTreeMap::new();
    for (i, r) in read_rows::<BoxRow>(path)?.into_iter().enumerate() {
        let b = BoundingBox::new(r.x_min, r.y_min, r.x_max, r.y_max)
            .map_err(|e| anyhow!("{}: record {}: {e}", path.display(), i + 1))?;
        if out.insert(r.image_id.clone(), b).is_some() {
            bail!("{}: duplicate image id {}", path.display(), r.image_id);
        }
    }
    Ok(out)
}

fn score_cmd(cfg: ScoreCmdConfig, out: Option<&Path>) -> Result<PathBuf> {
    let gt = read_boxes(&cfg.ground_truth)?;
    if gt.is_empty() {
        bail!("{}: no ground-truth boxes", cfg.ground_truth.display());
    }
    let energy_path = cfg.results_dir.join("energy.csv");
    let energies = read_rows::<EnergyRow>(&energy_path)?;
    if energies.is_empty() {
        bail!("{}: no teams", energy_path.display());
    }
    let mut teams = Vec::with_capacity(energies.len());
    for e in energies {
        let path = cfg.results_dir.join(format!("{}.csv", e.team));
        let pred = read_boxes(&path)?;
        if let Some(extra) = pred.keys().find(|k| !gt.contains_key(*k)) {
            bail!("{}: image {extra} is not in the ground truth", path.display());
        }
        let ious = gt
            .iter()
            .map(|(id, g)| {
                let p = pred.get(id).ok_or_else(|| anyhow!("{}: missing image {id}", path.display()))?;
                Ok(iou(p, g)?)
            })
            .collect::<Result<Vec<f64>>>()?;
        teams.push(TeamResult { team_id: e.team, ious, energy_joules: e.energy_joules });
    }
    let rows = leaderboard(&teams, cfg.track)?;
    let dir = start_run("score", out, &cfg)?;
    let mut csv = String::from("rank,team,r_iou,es,ts\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{},{},{}", i + 1, r.team, r.r_iou, r.es, r.ts);
    }
    write(&dir.join("leaderboard.csv"), csv.as_bytes())?;
    Ok(dir)
}

fn search_cmd(mut cfg: SearchCmdConfig, out: Option<&Path>, workers: usize) -> Result<PathBuf> {
    cfg.validate()?;
    let input = cfg.swarm.bounds.input;
    let evaluator: Box<dyn Evaluator> = match &mut cfg.evaluator {
        EvaluatorConfig::Surrogate(s) => Box::new(Surrogate {
            peak: s.peak.clone(),
            bounds: cfg.swarm.bounds.clone(),
            ceiling: s.ceiling,
            width_weight: s.width_weight,
            pool_weight: s.pool_weight,
            noise: s.noise,
        }),
        EvaluatorConfig::TinyTrainer(t) => {
            let (train_set, val_set) = t.data.load()?;
            check_image_size(&train_set, input)?;
            if train_set.is_empty() || val_set.is_empty() {
                bail!("tiny-trainer needs non-empty training and validation splits");
            }
            let anchors = anchors_for(t.anchors, &train_set)?;
            t.anchors = Some(anchors);
            Box::new(TinyTrainer {
                train: Arc::new(train_set),
                val: Arc::new(val_set),
                input,
                anchors,
                config: t.train.clone(),
            })
        }
    };
    let latency: Box<dyn LatencyModel> = match &cfg.latency {
        LatencyConfig::Fpga(f) => Box::new(FpgaLatency {
            target: f.target.clone(),
            scheme: f.quant,
            batch: f.batch,
            input,
        }),
        LatencyConfig::Gpu(g) => Box::new(GpuLatency { target: g.target.clone(), input }),
    };
    let dir = start_run("search", out, &cfg)?;
    let report = run_search(&cfg.swarm, evaluator.as_ref(), latency.as_ref(), workers)?;
    write(&dir.join("report.json"), report.to_json()?.as_bytes())?;
    write(&dir.join("candidates.csv"), report.to_csv().as_bytes())?;
    write(&dir.join("pareto.csv"), report.pareto_csv().as_bytes())?;
    let mut trace = String::from("iteration,group,bundle_id,best_fitness,best_accuracy,best_latency_ms\n");
    for it in &report.iterations {
        for g in &it.group_bests {
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(
                trace,
                "{},{},{},{},{},{}",
                it.iteration,
                g.group,
                g.bundle_id,
                opt(g.fitness),
                opt(g.accuracy),
                g.latency_ms
            );
        }
    }
    write(&dir.join("group_best.csv"), trace.as_bytes())?;
    if let Some(best) = &report.best {
        write(&dir.join("best_genome.toml"), best.genome.to_toml()?.as_bytes())?;
    }
    Ok(dir)
}
