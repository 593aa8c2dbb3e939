use clap::Args;
use dermseg::gradcheck::{corruptible_labels, registry, report_table, run_case, SuiteConfig};

use crate::common::usage;

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Random draws per op.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Only run ops whose name contains this.
    #[arg(long)]
    only: Option<String>,
    /// Test hook: perturb the backward pass of every node with this label.
    #[arg(long)]
    corrupt: Option<String>,
}

pub fn run(a: GradcheckArgs) -> anyhow::Result<bool> {
    let corrupt = match &a.corrupt {
        None => None,
        Some(l) => Some(corruptible_labels().into_iter().find(|k| k == l).ok_or_else(|| {
            usage(format!("unknown label {l:?}; known: {}", corruptible_labels().join(", ")))
        })?),
    };
    let cfg = SuiteConfig {
        seeds: a.seeds,
        corrupt,
        ..SuiteConfig::default()
    };
    let cases: Vec<_> = registry()
        .into_iter()
        .filter(|c| a.only.as_deref().is_none_or(|o| c.name.contains(o)))
        .collect();
    if cases.is_empty() {
        return Err(usage("no op matches --only"));
    }
    let outcomes: Vec<_> = cases.iter().map(|c| run_case(c, &cfg)).collect();
    print!("{}", report_table(&outcomes));
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        println!("all {} ops within {:e}", outcomes.len(), cfg.tolerance);
        Ok(true)
    } else {
        println!("FAILED: {}", failed.join(", "));
        Ok(false)
    }
}
