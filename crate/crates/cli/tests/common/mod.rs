#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn bundlenas(args: &[&str], cwd: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_bundlenas"))
        .args(args)
        .current_dir(cwd)
        .env_remove("BUNDLENAS_OUTPUT_ROOT")
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Runs `cmd` with `config`, then again from the resolved config it wrote,
/// and checks both run directories are byte-identical.
pub fn run_twice(cmd: &str, config: &Path, cwd: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    try_run_twice(cmd, config, cwd, extra).unwrap_or_else(|e| panic!("{e}"))
}

pub fn try_run_twice(cmd: &str, config: &Path, cwd: &Path, extra: &[&str]) -> Result<(PathBuf, PathBuf), String> {
    let stem = config.file_stem().unwrap().to_string_lossy();
    let first = cwd.join(format!("{cmd}-{stem}-a"));
    let second = cwd.join(format!("{cmd}-{stem}-b"));
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", first.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = bundlenas(&args, cwd);
    if o.code != 0 {
        return Err(format!("{cmd} failed: {}", o.stderr));
    }
    let resolved = first.join("config.toml");
    let o = bundlenas(&[cmd, "--config", resolved.to_str().unwrap(), "--out", second.to_str().unwrap()], cwd);
    if o.code != 0 {
        return Err(format!("{cmd} rerun failed: {}", o.stderr));
    }
    let diff = differences(&first, &second);
    if !diff.is_empty() {
        return Err(format!("{cmd} rerun differs in {diff:?}"));
    }
    Ok((first, second))
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Lists files that differ between two run directories; empty when identical.
pub fn differences(a: &Path, b: &Path) -> Vec<String> {
    let (fa, fb) = (files(a), files(b));
    if fa != fb {
        return vec![format!("file sets differ: {fa:?} vs {fb:?}")];
    }
    fa.iter()
        .filter(|f| fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap())
        .map(|f| f.display().to_string())
        .collect()
}

pub const GENOME: &str = r#"
bundle_id = 0
fv1 = [8, 16, 24]
fv2 = [true, true, false]
activation = "relu6"
"#;

/// Small synthetic data block at 32x64.
pub fn data_block(count: usize) -> String {
    format!(
        r#"
[data]
val_fraction = 0.25
split_seed = 3

[data.synthetic]
count = {count}
height = 32
width = 64
seed = 5
"#
    )
}

pub fn train_config(epochs: usize) -> String {
    format!(
        r#"
genome_file = "genome.toml"

[input]
c = 3
h = 32
w = 64

[train]
epochs = {epochs}
batch_size = 4
{}"#,
        data_block(24)
    )
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

pub const SEARCH: &str = r#"
[swarm]
bundles = [0, 2]
particles = 6
iterations = 4
alpha = -0.01
target_latency_ms = 1.0
seed = 11

[swarm.bounds]
depth_min = 3
depth_max = 3
max_pools = 2

[swarm.bounds.input]
c = 3
h = 32
w = 64

[evaluator.surrogate.peak]
bundle_id = 0
fv1 = [48, 96, 48]
fv2 = [true, false, true]

[latency.fpga]
batch = 1
"#;

/// Runs every subcommand twice (second time from the resolved config) at
/// toy scale under `dir`; returns each command's outcome.
pub fn reproducibility_cases(dir: &Path) -> Vec<(&'static str, Result<(), String>)> {
    let mut out = Vec::new();
    let g = write(dir, "g.toml", "[dataset]\ncount = 6\nheight = 16\nwidth = 32\nseed = 4\n");
    out.push(("gen-data", try_run_twice("gen-data", &g, dir, &[]).map(|_| ())));

    write(dir, "genome.toml", GENOME);
    let t = write(dir, "train.toml", &train_config(1));
    let trained = try_run_twice("train", &t, dir, &[]);
    out.push(("train", trained.as_ref().map(|_| ()).map_err(Clone::clone)));
    let ckpt = match trained {
        Ok((run, _)) => run.join("model.bnas"),
        Err(_) => dir.join("missing.bnas"),
    };
    let e = write(dir, "eval.toml", &format!("checkpoint = {:?}\n{}", ckpt.to_str().unwrap(), data_block(24)));
    out.push(("eval", try_run_twice("eval", &e, dir, &[]).map(|_| ())));
    let q = write(
        dir,
        "quantize.toml",
        &format!("checkpoint = {:?}\ncalibration_images = 4\n{}", ckpt.to_str().unwrap(), data_block(24)),
    );
    out.push(("quantize", try_run_twice("quantize", &q, dir, &[]).map(|_| ())));

    let est = write(dir, "estimate.toml", "genome_file = \"genome.toml\"\nbatch = 4\n[input]\nc = 3\nh = 32\nw = 64\n");
    out.push(("estimate", try_run_twice("estimate", &est, dir, &[]).map(|_| ())));

    let res = dir.join("results");
    fs::create_dir_all(&res).unwrap();
    write(&res, "gt.csv", "image_id,x_min,y_min,x_max,y_max\na,0,0,0.5,0.5\nb,0.2,0.2,0.6,0.9\n");
    write(&res, "x.csv", "image_id,x_min,y_min,x_max,y_max\na,0,0,0.4,0.5\nb,0.3,0.2,0.6,0.8\n");
    write(&res, "y.csv", "image_id,x_min,y_min,x_max,y_max\na,0.1,0,0.5,0.5\nb,0.2,0.2,0.6,0.9\n");
    write(&res, "energy.csv", "team,energy_joules\nx,3.0\ny,1.25\n");
    let s = write(dir, "score.toml", "results_dir = \"results\"\nground_truth = \"results/gt.csv\"\ntrack = \"gpu\"\n");
    out.push(("score", try_run_twice("score", &s, dir, &[]).map(|_| ())));

    let sr = write(dir, "search.toml", SEARCH);
    out.push(("search", try_run_twice("search", &sr, dir, &[]).map(|_| ())));
    out
}
