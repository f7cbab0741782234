//! `scan synth` — generate the synthetic dataset and print its shape.

use std::fs;
use std::path::Path;

use scan_core::data::generate_synthetic;
use scan_core::error::{Result, ScanError};

use crate::config::RunConfig;

pub fn run(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let occupied = fs::read_dir(out)
            .map_err(|e| ScanError::io(out, e))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(ScanError::config(format!(
                "{} is not empty (pass --force to overwrite)",
                out.display()
            )));
        }
    }
    let summary = generate_synthetic(&cfg.synth_config(), out)?;
    println!("wrote {} files to {}", summary.files_written, out.display());
    println!("{:<12} {:<6} {:>12} {:>8}", "class", "split", "sub-clusters", "samples");
    for (name, split, subclusters, samples) in &summary.classes {
        println!("{name:<12} {:<6} {subclusters:>12} {samples:>8}", split.as_str());
    }
    Ok(())
}
