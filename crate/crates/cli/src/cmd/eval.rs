use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use dermseg::data::{load_gray, load_mask};
use dermseg::metrics::{confusion, report_tsv, scores_at, MetricsRecord};

use crate::common::{image_files, stem};

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Predicted masks or probability maps (grayscale PNG).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth masks; `<id>_segmentation.png` pairs with `<id>.png`.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Fail when any file lacks a partner or cannot be scored.
    #[arg(long)]
    strict: bool,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn pair_id(p: &Path) -> String {
    let s = stem(p);
    s.strip_suffix("_segmentation").map(str::to_string).unwrap_or(s)
}

fn index(dir: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    Ok(image_files(dir)?.into_iter().map(|p| (pair_id(&p), p)).collect())
}

pub fn run(a: EvalArgs) -> anyhow::Result<bool> {
    let preds = index(&a.pred)?;
    let truths = index(&a.truth)?;
    let mut problems = Vec::new();
    for id in truths.keys().filter(|id| !preds.contains_key(*id)) {
        problems.push(format!("{id}: no prediction"));
    }
    let mut rows: Vec<(String, MetricsRecord)> = Vec::new();
    for (id, p) in &preds {
        let Some(t) = truths.get(id) else {
            problems.push(format!("{id}: no ground truth"));
            continue;
        };
        let scored = load_gray(p)
            .and_then(|pred| load_mask(t).and_then(|truth| confusion(&pred, &truth, a.threshold)));
        match scored {
            Ok(c) => rows.push((id.clone(), scores_at(&c, a.threshold))),
            Err(e) => problems.push(format!("{id}: {e}")),
        }
    }
    for p in &problems {
        log::warn!("excluded {p}");
    }
    let report = report_tsv(&rows);
    print!("{report}");
    if let Some(out) = &a.out {
        fs::write(out, &report)?;
    }
    Ok(!(a.strict && !problems.is_empty()))
}
