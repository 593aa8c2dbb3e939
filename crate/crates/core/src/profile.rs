//! Forward-latency measurement and per-machine baseline tracking.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::ModelGraph;
use crate::tensor::Tensor;

/// Latency may grow by at most this factor against the baseline.
pub const REGRESSION_LIMIT: f64 = 1.25;
pub const WARMUP_RUNS: usize = 5;
pub const MIN_TIMED_RUNS: usize = 30;

const HEADER: &str = "model\tinput\tthreads\tmedian_ms\tfps\tparams\tfingerprint\ttimestamp";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub model: String,
    pub input: usize,
    pub threads: usize,
    pub median_ms: f64,
    pub fps: f64,
    pub params: usize,
    pub fingerprint: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl BenchRecord {
    pub fn new(model: &str, input: usize, threads: usize, median_ms: f64, params: usize) -> Self {
        Self {
            model: model.to_string(),
            input,
            threads,
            median_ms,
            fps: 1000.0 / median_ms,
            params,
            fingerprint: machine_fingerprint(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    fn key(&self) -> (&str, usize, usize) {
        (&self.model, self.input, self.threads)
    }

    fn to_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.4}\t{:.3}\t{}\t{}\t{}",
            self.model, self.input, self.threads, self.median_ms, self.fps, self.params, self.fingerprint, self.timestamp
        )
    }

    fn from_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(Error::Format(format!("bench row has {} fields", f.len())));
        }
        let bad = |what: &str| Error::Format(format!("bench row: bad {what}"));
        Ok(Self {
            model: f[0].to_string(),
            input: f[1].parse().map_err(|_| bad("input"))?,
            threads: f[2].parse().map_err(|_| bad("threads"))?,
            median_ms: f[3].parse().map_err(|_| bad("median_ms"))?,
            fps: f[4].parse().map_err(|_| bad("fps"))?,
            params: f[5].parse().map_err(|_| bad("params"))?,
            fingerprint: f[6].to_string(),
            timestamp: f[7].parse().map_err(|_| bad("timestamp"))?,
        })
    }
}

/// Median of per-image forward latencies in milliseconds, after warmup.
pub fn measure_latency(model: &ModelGraph, input: usize, runs: usize, seed: u64) -> Result<f64> {
    let x = Tensor::uniform(vec![1, 3, input, input], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    for _ in 0..WARMUP_RUNS {
        model.predict(&x)?;
    }
    let mut times = Vec::with_capacity(runs.max(MIN_TIMED_RUNS));
    for _ in 0..runs.max(MIN_TIMED_RUNS) {
        let t = Instant::now();
        model.predict(&x)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(&mut times))
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// CPU model, logical CPU count and architecture, reduced to a file-name-safe slug.
pub fn machine_fingerprint() -> String {
    let cpu = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_else(|| "unknown-cpu".to_string());
    let n = std::thread::available_parallelism().map_or(1, |n| n.get());
    let raw = format!("{}-{}-{}cpu", std::env::consts::ARCH, cpu, n);
    let mut slug = String::with_capacity(raw.len());
    for c in raw.chars() {
        if c.is_ascii_alphanumeric() {
            slug.push(c.to_ascii_lowercase());
        } else if !slug.ends_with('-') {
            slug.push('-');
        }
    }
    slug.trim_matches('-').to_string()
}

pub fn baseline_path(dir: &Path, fingerprint: &str) -> PathBuf {
    dir.join(format!("{fingerprint}.tsv"))
}

pub fn read_baselines(path: &Path) -> Result<Vec<BenchRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines().skip(1).filter(|l| !l.trim().is_empty()).map(BenchRecord::from_row).collect()
}

pub fn write_baselines(path: &Path, rows: &[BenchRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut s = format!("{HEADER}\n");
    for r in rows {
        s.push_str(&r.to_row());
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CompareMode {
    #[default]
    Check,
    /// Write the current record as the baseline.
    Init,
    /// Check latency, but take a changed parameter count as the new baseline.
    Accept,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub passed: bool,
    pub baseline: Option<BenchRecord>,
    /// current / baseline median latency.
    pub latency_ratio: Option<f64>,
    pub reasons: Vec<String>,
}

/// Compare `current` against the stored baseline for its fingerprint under `dir`.
pub fn record_and_compare(current: &BenchRecord, dir: &Path, mode: CompareMode) -> Result<Verdict> {
    let path = baseline_path(dir, &current.fingerprint);
    let mut rows = if path.exists() { read_baselines(&path)? } else { Vec::new() };
    let pos = rows.iter().position(|r| r.key() == current.key());
    if mode == CompareMode::Init {
        match pos {
            Some(i) => rows[i] = current.clone(),
            None => rows.push(current.clone()),
        }
        write_baselines(&path, &rows)?;
        return Ok(Verdict {
            passed: true,
            baseline: None,
            latency_ratio: None,
            reasons: vec!["baseline initialized".into()],
        });
    }
    let Some(i) = pos else {
        return Err(Error::MissingBaseline(path));
    };
    let base = rows[i].clone();
    let ratio = current.median_ms / base.median_ms;
    let mut reasons = Vec::new();
    let mut passed = true;
    if ratio > REGRESSION_LIMIT {
        passed = false;
        reasons.push(format!(
            "latency {:.3} ms is {:.0}% above baseline {:.3} ms",
            current.median_ms,
            (ratio - 1.0) * 100.0,
            base.median_ms
        ));
    }
    if current.params != base.params {
        if mode == CompareMode::Accept {
            reasons.push(format!("param count {} -> {} accepted", base.params, current.params));
            rows[i] = current.clone();
            write_baselines(&path, &rows)?;
        } else {
            passed = false;
            reasons.push(format!("param count changed {} -> {}", base.params, current.params));
        }
    }
    Ok(Verdict {
        passed,
        baseline: Some(base),
        latency_ratio: Some(ratio),
        reasons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ms: f64, params: usize) -> BenchRecord {
        let mut r = BenchRecord::new("m", 64, 1, ms, params);
        r.fingerprint = "test-machine".into();
        r
    }

    #[test]
    fn fps_is_inverse_latency() {
        let r = rec(8.0, 10);
        assert!((r.fps - 125.0).abs() < 1e-12);
    }

    #[test]
    fn init_then_identical_rerun_passes() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            record_and_compare(&rec(10.0, 5), dir.path(), CompareMode::Check),
            Err(Error::MissingBaseline(_))
        ));
        assert!(record_and_compare(&rec(10.0, 5), dir.path(), CompareMode::Init).unwrap().passed);
        assert!(record_and_compare(&rec(10.0, 5), dir.path(), CompareMode::Check).unwrap().passed);
        assert!(record_and_compare(&rec(12.4, 5), dir.path(), CompareMode::Check).unwrap().passed);
        assert!(!record_and_compare(&rec(12.6, 5), dir.path(), CompareMode::Check).unwrap().passed);
    }

    #[test]
    fn param_change_fails_until_accepted() {
        let dir = tempfile::tempdir().unwrap();
        record_and_compare(&rec(10.0, 5), dir.path(), CompareMode::Init).unwrap();
        assert!(!record_and_compare(&rec(10.0, 6), dir.path(), CompareMode::Check).unwrap().passed);
        assert!(record_and_compare(&rec(10.0, 6), dir.path(), CompareMode::Accept).unwrap().passed);
        assert!(record_and_compare(&rec(10.0, 6), dir.path(), CompareMode::Check).unwrap().passed);
    }

    #[test]
    fn rows_round_trip() {
        let r = rec(3.25, 42);
        assert_eq!(BenchRecord::from_row(&r.to_row()).unwrap().params, 42);
        assert!(machine_fingerprint().chars().all(|c| c.is_ascii_alphanumeric() || c == '-'));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
