//! `ebmkit verify`: run the finite-grid verification suite and report one
//! pass/fail line per case.

use crate::config::RunConfig;
use crate::{CmdResult, Outcome};

use super::out_dir;

pub const HELP: &str = "\
ebmkit verify [--cases a,b,...] [--out-dir DIR]

  Cases: tv-hellinger, conjugate-posterior, stability-curve,
         evidence-continuity, mh-kernel, gibbs-kernel, ula-bias
  (default: all). CSV reports are written to the output directory.
  Exit code 1 when any case fails.";

pub fn run(cfg: &RunConfig) -> CmdResult {
    let dir = out_dir(cfg)?;
    let cases: Vec<String> = cfg
        .str_opt("cases")
        .map(|s| {
            s.split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect()
        })
        .unwrap_or_default();
    cfg.finish()?;
    let results = ebmkit::verify::run_report(&cases, Some(&dir))?;
    let mut failures = 0;
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("{tag} {} - {}", r.name, r.detail);
        if !r.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        Ok(Outcome::CheckFailed(format!(
            "{failures} verification case(s) failed"
        )))
    } else {
        println!("all {} cases passed", results.len());
        Ok(Outcome::Success)
    }
}
