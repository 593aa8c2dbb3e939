use std::path::PathBuf;

use clap::Args;
use dermseg::profile::{measure_latency, record_and_compare, BenchRecord, CompareMode};

use crate::common::{load_model, resolve_config, usage};
use crate::ModelArgs;

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Presets to measure (repeatable; default egan-toy and mgan-toy).
    #[arg(long = "preset")]
    presets: Vec<String>,
    /// Config files to measure (repeatable).
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Generator weights; only with a single model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Timed forward passes per model (at least 30).
    #[arg(long, default_value_t = 30)]
    runs: usize,
    #[arg(long, default_value = "bench")]
    baseline_dir: PathBuf,
    /// Store these measurements as the baseline.
    #[arg(long, conflicts_with_all = ["accept", "no_compare"])]
    init: bool,
    /// Take changed parameter counts as the new baseline.
    #[arg(long, conflicts_with = "no_compare")]
    accept: bool,
    /// Report only; skip the baseline comparison.
    #[arg(long)]
    no_compare: bool,
}

pub fn run(a: BenchArgs, threads: usize) -> anyhow::Result<bool> {
    let mut models: Vec<ModelArgs> = a
        .presets
        .iter()
        .map(|p| ModelArgs {
            preset: Some(p.clone()),
            config: None,
            overrides: a.overrides.clone(),
        })
        .chain(a.configs.iter().map(|c| ModelArgs {
            preset: None,
            config: Some(c.clone()),
            overrides: a.overrides.clone(),
        }))
        .collect();
    if models.is_empty() {
        for p in ["egan-toy", "mgan-toy"] {
            models.push(ModelArgs {
                preset: Some(p.into()),
                config: None,
                overrides: a.overrides.clone(),
            });
        }
    }
    if a.checkpoint.is_some() && models.len() != 1 {
        return Err(usage("--checkpoint needs exactly one model"));
    }
    let mode = if a.init {
        CompareMode::Init
    } else if a.accept {
        CompareMode::Accept
    } else {
        CompareMode::Check
    };
    println!("model\tinput\tthreads\tparams\tmedian_ms\tfps\tverdict");
    let mut ok = true;
    let mut fps = Vec::new();
    for m in &models {
        let (cfg, _) = resolve_config(m, None)?;
        let g = load_model(&cfg, a.checkpoint.as_deref())?;
        let input = cfg.generator.input_size[0];
        let ms = measure_latency(&g, input, a.runs, cfg.train.seed)?;
        let rec = BenchRecord::new(&cfg.name, input, threads, ms, g.param_count());
        let verdict = if a.no_compare {
            "-".to_string()
        } else {
            let v = record_and_compare(&rec, &a.baseline_dir, mode).map_err(|e| match e {
                dermseg::Error::MissingBaseline(p) => {
                    anyhow::anyhow!("no baseline at {}; run `bench --init` first", p.display())
                }
                e => e.into(),
            })?;
            ok &= v.passed;
            let status = if v.passed { "PASS" } else { "FAIL" };
            if v.reasons.is_empty() {
                status.to_string()
            } else {
                format!("{status} ({})", v.reasons.join("; "))
            }
        };
        println!(
            "{}\t{}\t{}\t{}\t{:.3}\t{:.2}\t{}",
            rec.model, rec.input, rec.threads, rec.params, rec.median_ms, rec.fps, verdict
        );
        fps.push((rec.model.clone(), rec.fps));
    }
    if let [(a_name, a_fps), (b_name, b_fps)] = fps.as_slice() {
        println!("throughput {b_name}/{a_name}: {:.2}x", b_fps / a_fps);
    }
    Ok(ok)
}
