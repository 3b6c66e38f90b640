//! `ebmkit export-potentials`: per-filter potential curves and kernels.

use ebmkit::foe::FoeModel;
use ebmkit::image::Image;
use ebmkit::io::{write_csv, write_pgm, PgmDepth};

use crate::config::RunConfig;
use crate::{CmdResult, Outcome};

use super::out_dir;

pub const HELP: &str = "\
ebmkit export-potentials --model FILE [--out-dir DIR]

  Writes potentials_<j>.csv (columns x, f; 501 samples over [-nu, nu]) and
  kernel_<j>.pgm (min-max normalized taps) for every filter j.";

pub fn run(cfg: &RunConfig) -> CmdResult {
    let model = FoeModel::load(cfg.require_str("model")?)?;
    let dir = out_dir(cfg)?;
    cfg.finish()?;
    let nu = model.nu();
    let filters = model.bank().build_filters();
    for (j, (potential, kernel)) in model.potentials().iter().zip(&filters).enumerate() {
        let rows = (0..501).map(|i| {
            let x = -nu + 2.0 * nu * i as f64 / 500.0;
            let (phi, _, _) = potential.eval_unchecked(x);
            vec![x, phi]
        });
        write_csv(dir.join(format!("potentials_{j}.csv")), &["x", "f"], rows)?;
        // Min-max normalized kernel; a constant kernel renders mid-gray.
        let lo = kernel.taps().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = kernel.taps().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let data: Vec<f64> = kernel
            .taps()
            .iter()
            .map(|t| {
                if hi > lo {
                    (t - lo) / (hi - lo)
                } else {
                    0.5
                }
            })
            .collect();
        let img = Image::new(kernel.size(), kernel.size(), data)?;
        write_pgm(dir.join(format!("kernel_{j}.pgm")), &img, PgmDepth::Eight)?;
    }
    println!(
        "exported {} potentials and kernels to {}",
        filters.len(),
        dir.display()
    );
    Ok(Outcome::Success)
}
