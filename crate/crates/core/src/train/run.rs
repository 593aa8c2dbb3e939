//! The training loop: batching, validation, checkpoints, history and resume.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, batch, load_dataset, resize_nearest, split, synth_generate, Augmentation, Dataset, LoadReport, Sample};
use crate::error::{Error, Result};
use crate::metrics::{confusion, mean_scores, scores_at, MetricsRecord};
use crate::models::{read_weights, write_weights, ModelGraph};
use crate::nn::{ParamRole, ParamStore};
use crate::tensor::Tensor;
use crate::train::{gan_step, DataConfig, GanState, OptimState, Precision, RunConfig, StepReport};

pub const HISTORY_FILE: &str = "history.tsv";
pub const TIMING_FILE: &str = "timing.tsv";
pub const CONFIG_FILE: &str = "config.toml";
pub const STATE_FILE: &str = "state.toml";
pub const BEST_FILE: &str = "best.lgc";
pub const LAST_FILE: &str = "last.lgc";

pub const HISTORY_HEADER: &str =
    "step\tepoch\tlr_g\tlr_d\tdice_loss\tsmoothing_loss\tcombined_loss\tadv_loss\td_loss\tval_dice\tval_jaccard";
const TIMING_HEADER: &str = "step\tg_ms\td_ms\tstep_ms\teval_ms";

const AUGMENT_SALT: u64 = 0x6175_676d;
const EVAL_BATCH: usize = 16;

#[derive(Clone, Debug, Default)]
pub struct LoopOptions {
    /// Continue from `state.toml` and `last.lgc` in the output directory if present.
    pub resume: bool,
    /// Stop (with a checkpoint) once this many steps are done.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub step: usize,
    pub best_dice: f64,
    pub best_step: usize,
    pub g_opt_step: usize,
    pub d_opt_step: usize,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: usize,
    pub best_dice: f64,
    pub best_step: usize,
    /// Validation scores of the final weights.
    pub final_val: Option<MetricsRecord>,
    pub out_dir: PathBuf,
}

/// Load (or synthesize) the data described by `cfg`, resize to `input` when
/// needed and split into train and validation sets.
pub fn prepare_data(cfg: &DataConfig, input: [usize; 2]) -> Result<(Dataset, Dataset, LoadReport)> {
    let (mut all, report) = match &cfg.root {
        Some(root) => load_dataset(Path::new(root), cfg.layout, false)?,
        None => (synth_generate(&cfg.synth)?, LoadReport::default()),
    };
    let target = match cfg.resize {
        Some(s) => (s, s),
        None => (input[0], input[1]),
    };
    for s in all.iter_mut() {
        if (s.height(), s.width()) != target {
            *s = resize_nearest(s, target)?;
        }
    }
    let (train, val) = split(&all, cfg.val_fraction, cfg.split_seed)?;
    Ok((train, val, report))
}

/// Per-image scores of `model` on `samples`, in input order.
pub fn evaluate(model: &ModelGraph, samples: &[Sample], threshold: f64) -> Result<Vec<(String, MetricsRecord)>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, y) = batch(&refs)?;
        let p = model.predict(&x)?;
        for (i, s) in chunk.iter().enumerate() {
            let c = confusion(&p.batch_item(i)?, &y.batch_item(i)?, threshold)?;
            out.push((s.id.clone(), scores_at(&c, threshold)));
        }
    }
    Ok(out)
}

fn mean_record(rows: &[(String, MetricsRecord)], threshold: f64) -> Option<MetricsRecord> {
    let recs: Vec<MetricsRecord> = rows.iter().map(|(_, r)| r.clone()).collect();
    let [dice, jaccard, accuracy, sensitivity, specificity] = mean_scores(&recs)?;
    Some(MetricsRecord {
        dice,
        jaccard,
        accuracy,
        sensitivity,
        specificity,
        threshold,
        degenerate: recs.iter().any(|r| r.degenerate),
    })
}

impl GanState {
    /// Fresh models and optimizers for `cfg`; the discriminator seed is offset
    /// from the generator seed.
    pub fn init(cfg: &RunConfig, steps_per_epoch: usize) -> Result<Self> {
        let t = &cfg.train;
        let mut g = ModelGraph::generator(&cfg.generator, t.seed)?;
        let mut d = ModelGraph::discriminator(&cfg.discriminator, t.seed.wrapping_add(1))?;
        let d_updates = t.max_steps * t.g_steps * t.d_steps;
        let mut g_opt = OptimState::from_config(&t.generator_optim, &g.store, steps_per_epoch, t.max_steps * t.g_steps);
        let mut d_opt = OptimState::from_config(&t.discriminator_optim, &d.store, steps_per_epoch, d_updates);
        if t.precision == Precision::F32 {
            g.store.round_to_f32();
            d.store.round_to_f32();
            g_opt.round_to_f32();
            d_opt.round_to_f32();
        }
        Ok(Self { g, d, g_opt, d_opt })
    }

    /// Everything needed to resume, flattened into one store with prefixed names.
    pub fn checkpoint_store(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for (prefix, store) in [("generator", &self.g.store), ("discriminator", &self.d.store)] {
            for (_, p) in store.iter() {
                out.add(format!("{prefix}/{}", p.name), p.value.clone(), p.role);
            }
        }
        for (prefix, opt, store) in [("g_opt", &self.g_opt, &self.g.store), ("d_opt", &self.d_opt, &self.d.store)] {
            for (id, p) in store.iter() {
                if let Some((m, v)) = opt.moments(id) {
                    out.add(format!("{prefix}/m/{}", p.name), m.clone(), ParamRole::Buffer);
                    out.add(format!("{prefix}/v/{}", p.name), v.clone(), ParamRole::Buffer);
                }
            }
        }
        out
    }

    /// Inverse of [`GanState::checkpoint_store`].
    pub fn restore(&mut self, ckpt: &ParamStore) -> Result<()> {
        let fetch = |name: String| -> Result<Tensor> {
            ckpt.find(&name)
                .map(|id| ckpt.value(id).clone())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))
        };
        for (prefix, store) in [("generator", &mut self.g.store), ("discriminator", &mut self.d.store)] {
            let ids: Vec<_> = store.ids().collect();
            for id in ids {
                let name = format!("{prefix}/{}", store.get(id).name);
                store.set(id, fetch(name)?)?;
            }
        }
        for (prefix, opt, store) in [("g_opt", &mut self.g_opt, &self.g.store), ("d_opt", &mut self.d_opt, &self.d.store)] {
            let names: Vec<String> = store.iter().map(|(_, p)| p.name.clone()).collect();
            for (i, (m, v)) in opt.moments_mut() {
                *m = fetch(format!("{prefix}/m/{}", names[i]))?;
                *v = fetch(format!("{prefix}/v/{}", names[i]))?;
            }
        }
        Ok(())
    }
}

fn save_store(path: &Path, store: &ParamStore) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write_weights(BufWriter::new(fs::File::create(&tmp)?), store)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Load generator weights from a `best.lgc`-style file.
pub fn load_generator(path: &Path, model: &mut ModelGraph) -> Result<()> {
    read_weights(std::io::BufReader::new(fs::File::open(path)?), &mut model.store)
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn history_row(step: usize, epoch: usize, r: &StepReport, val: Option<&MetricsRecord>) -> String {
    let (vd, vj) = val.map_or((String::new(), String::new()), |v| (fmt(v.dice), fmt(v.jaccard)));
    [
        step.to_string(),
        epoch.to_string(),
        fmt(r.lr_g),
        fmt(r.lr_d),
        fmt(r.dice),
        fmt(r.smoothing),
        fmt(r.combined),
        fmt(r.adversarial),
        fmt(r.discriminator),
        vd,
        vj,
    ]
    .join("\t")
}

/// Keep the header and rows whose step is at most `step`.
fn truncate_table(path: &Path, header: &str, step: usize) -> Result<String> {
    let mut out = format!("{header}\n");
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines().skip(1) {
            let s: Option<usize> = line.split('\t').next().and_then(|v| v.parse().ok());
            if s.is_some_and(|s| s <= step) {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

fn open_table(path: &Path, header: &str, resume_step: Option<usize>) -> Result<BufWriter<fs::File>> {
    let content = match resume_step {
        Some(s) => truncate_table(path, header, s)?,
        None => format!("{header}\n"),
    };
    fs::write(path, content)?;
    Ok(BufWriter::new(fs::OpenOptions::new().append(true).open(path)?))
}

/// Sample order of one epoch: a pure function of the seed and epoch index.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn step_batch(train: &[Sample], cfg: &RunConfig, step: usize, steps_per_epoch: usize) -> Result<(Tensor, Tensor)> {
    let t = &cfg.train;
    let epoch = step / steps_per_epoch;
    let k = step % steps_per_epoch;
    let order = epoch_order(train.len(), t.seed, epoch);
    let idx = &order[k * t.batch_size..((k + 1) * t.batch_size).min(train.len())];
    if t.augment {
        let mut rng = ChaCha8Rng::seed_from_u64(t.seed ^ AUGMENT_SALT);
        rng.set_stream(step as u64);
        let samples: Vec<Sample> = idx.iter().map(|&i| augment(&train[i], &Augmentation::random(&mut rng))).collect();
        batch(&samples.iter().collect::<Vec<_>>())
    } else {
        batch(&idx.iter().map(|&i| &train[i]).collect::<Vec<_>>())
    }
}

fn write_state(out: &Path, st: &LoopState) -> Result<()> {
    let text = toml::to_string(st).map_err(|e| Error::Config(e.to_string()))?;
    let tmp = out.join("state.tmp");
    fs::write(&tmp, text)?;
    fs::rename(tmp, out.join(STATE_FILE))?;
    Ok(())
}

fn read_state(out: &Path) -> Result<Option<LoopState>> {
    let path = out.join(STATE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map(Some).map_err(|e| Error::Config(e.to_string()))
}

/// Train `cfg` on `train`, validating on `val`, writing artifacts to `out`.
pub fn train_loop(cfg: &RunConfig, train: &[Sample], val: &[Sample], out: &Path, opts: &LoopOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidSpec("empty training set".into()));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml()?)?;
    let t = &cfg.train;
    let steps_per_epoch = train.len().div_ceil(t.batch_size);
    let mut state = GanState::init(cfg, steps_per_epoch)?;

    let mut ls = LoopState {
        step: 0,
        best_dice: f64::NEG_INFINITY,
        best_step: 0,
        g_opt_step: 0,
        d_opt_step: 0,
    };
    let mut resumed = None;
    if opts.resume {
        if let Some(saved) = read_state(out)? {
            let mut ckpt = state.checkpoint_store();
            read_weights(std::io::BufReader::new(fs::File::open(out.join(LAST_FILE))?), &mut ckpt)?;
            state.restore(&ckpt)?;
            state.g_opt.step = saved.g_opt_step;
            state.d_opt.step = saved.d_opt_step;
            log::info!("resuming {} at step {}", cfg.name, saved.step);
            resumed = Some(saved.step);
            ls = saved;
        }
    }
    let mut history = open_table(&out.join(HISTORY_FILE), HISTORY_HEADER, resumed)?;
    let mut timing = open_table(&out.join(TIMING_FILE), TIMING_HEADER, resumed)?;

    let checkpoint = |state: &GanState, ls: &mut LoopState| -> Result<()> {
        ls.g_opt_step = state.g_opt.step;
        ls.d_opt_step = state.d_opt.step;
        save_store(&out.join(LAST_FILE), &state.checkpoint_store())?;
        write_state(out, ls)
    };

    if resumed.is_none() {
        let rows = evaluate(&state.g, val, t.threshold)?;
        ls.best_dice = mean_record(&rows, t.threshold).map_or(0.0, |m| m.dice);
        save_store(&out.join(BEST_FILE), &state.g.store)?;
        checkpoint(&state, &mut ls)?;
    }

    let stop = opts.stop_after.map_or(t.max_steps, |s| s.min(t.max_steps));
    let mut last_val = None;
    while ls.step < stop {
        let t0 = Instant::now();
        let (x, y) = step_batch(train, cfg, ls.step, steps_per_epoch)?;
        let report = match gan_step(&mut state, &x, &y, t) {
            Ok(r) => r,
            Err(e) => {
                history.flush()?;
                timing.flush()?;
                return Err(e);
            }
        };
        let epoch = ls.step / steps_per_epoch;
        ls.step += 1;
        let step_ms = t0.elapsed().as_secs_f64() * 1e3;

        let t1 = Instant::now();
        let val_rec = if ls.step % t.eval_every.max(1) == 0 || ls.step == t.max_steps {
            let rows = evaluate(&state.g, val, t.threshold)?;
            let m = mean_record(&rows, t.threshold);
            if let Some(m) = &m {
                if m.dice > ls.best_dice {
                    ls.best_dice = m.dice;
                    ls.best_step = ls.step;
                    save_store(&out.join(BEST_FILE), &state.g.store)?;
                }
                log::info!(
                    "{} step {} combined {:.4} val dice {:.4} (best {:.4} @ {})",
                    cfg.name,
                    ls.step,
                    report.combined,
                    m.dice,
                    ls.best_dice,
                    ls.best_step
                );
            }
            last_val = m.clone();
            m
        } else {
            None
        };
        let eval_ms = t1.elapsed().as_secs_f64() * 1e3;

        writeln!(history, "{}", history_row(ls.step, epoch, &report, val_rec.as_ref()))?;
        writeln!(timing, "{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}", ls.step, report.g_ms, report.d_ms, step_ms, eval_ms)?;
        if ls.step % t.checkpoint_every.max(1) == 0 || ls.step == stop {
            history.flush()?;
            timing.flush()?;
            checkpoint(&state, &mut ls)?;
        }
    }
    history.flush()?;
    timing.flush()?;
    Ok(TrainSummary {
        steps: ls.step,
        best_dice: ls.best_dice,
        best_step: ls.best_step,
        final_val: last_val,
        out_dir: out.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_is_a_permutation_and_varies_by_epoch() {
        let a = epoch_order(20, 1, 0);
        let b = epoch_order(20, 1, 1);
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..20).collect::<Vec<_>>());
        assert_ne!(a, b);
        assert_eq!(a, epoch_order(20, 1, 0));
    }

    #[test]
    fn truncate_keeps_rows_up_to_step() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.tsv");
        fs::write(&p, "step\tx\n1\ta\n2\tb\n3\tc\n").unwrap();
        assert_eq!(truncate_table(&p, "step\tx", 2).unwrap(), "step\tx\n1\ta\n2\tb\n");
    }
}
