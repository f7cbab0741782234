//! `scan analyze` — cluster quality on the base split, feature
//! discriminability on the novel split, and embedding dumps.

use std::fs;
use std::path::{Path, PathBuf};

use scan_core::analysis::{discriminability, group_by_class};
use scan_core::cluster::{assign_nearest, cluster_error_rate};
use scan_core::data::tensor_file::write_tensor_file_f64;
use scan_core::data::{load_split, LoadedSplit, Split};
use scan_core::error::{Result, ScanError};
use scan_core::tensor::Tensor;

use crate::checkpoint::{load_checkpoint, LoadedCheckpoint};
use crate::commands::{embed_normalized, ensure_overwritable, Stage};

#[derive(Debug)]
pub struct AnalyzeArgs {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    pub out: Option<PathBuf>,
    pub force: bool,
}

pub fn run(args: &AnalyzeArgs) -> Result<()> {
    let mut loaded = load_checkpoint(&args.ckpt)?;
    let out_dir = args.out.clone().unwrap_or_else(|| args.ckpt.clone());
    fs::create_dir_all(&out_dir).map_err(|e| ScanError::io(&out_dir, e))?;
    let manifest = args.data.join("manifest.csv");

    let base = load_split(&manifest, Split::Base)?;
    let base_features = embed_normalized(
        &loaded.model,
        &mut loaded.arena,
        &base.data,
        loaded.run_cfg.batch_size,
        Stage::Projected,
    )?;
    report_clusters(&loaded, &base, &base_features)?;

    let novel = load_split(&manifest, Split::Novel)?;
    let novel_features = embed_normalized(
        &loaded.model,
        &mut loaded.arena,
        &novel.data,
        loaded.run_cfg.batch_size,
        Stage::Backbone,
    )?;
    let by_class = group_by_class(&novel_features, &novel.class_indices)?;
    let report = discriminability(&by_class)?;
    println!("novel-split discriminability ({} classes):", novel.n_classes());
    println!("  d_inter = {:.6}", report.d_inter);
    println!("  d_intra = {:.6}", report.d_intra);
    match report.phi {
        Some(phi) => println!("  phi     = {phi:.6}"),
        None => println!("  phi     = undefined (d_intra = 0)"),
    }

    dump_embeddings(&out_dir, "base_projected", &base, &base_features, args.force)?;
    dump_embeddings(&out_dir, "novel_backbone", &novel, &novel_features, args.force)?;
    println!("embeddings written to {}", out_dir.display());
    Ok(())
}

fn report_clusters(
    loaded: &LoadedCheckpoint,
    base: &LoadedSplit,
    features: &Tensor,
) -> Result<()> {
    let Some(banks) = &loaded.banks else {
        println!("checkpoint has no clustering branch state; skipping the cluster report");
        return Ok(());
    };
    let assigned = assign_nearest(features, banks.cluster_centroids())?;
    let error = cluster_error_rate(&assigned, &base.class_indices)?;
    println!("base-split cluster error rate = {error:.4}");
    let mut occupancy = vec![0usize; banks.n_clusters()];
    for &s in &assigned {
        occupancy[s] += 1;
    }
    println!("cluster occupancy ({} samples):", assigned.len());
    let scale = (occupancy.iter().max().copied().unwrap_or(1).max(1) + 39) / 40;
    for (s, &count) in occupancy.iter().enumerate() {
        println!("  cluster {s:>3}: {count:>6} {}", "#".repeat(count / scale.max(1)));
    }
    Ok(())
}

/// One SCT1 tensor plus a row-aligned CSV of ids and labels.
fn dump_embeddings(
    out_dir: &Path,
    stem: &str,
    split: &LoadedSplit,
    features: &Tensor,
    force: bool,
) -> Result<()> {
    let tensor_path = out_dir.join(format!("{stem}.sct"));
    let csv_path = out_dir.join(format!("{stem}.csv"));
    ensure_overwritable(&tensor_path, force)?;
    ensure_overwritable(&csv_path, force)?;
    write_tensor_file_f64(&tensor_path, features)?;
    let mut csv = String::from("row,path,class,subcluster\n");
    for i in 0..split.len() {
        let sub = split.subcluster_ids[i].map_or(String::new(), |s| s.to_string());
        csv.push_str(&format!(
            "{i},{},{},{sub}\n",
            split.paths[i], split.class_names[split.class_indices[i]]
        ));
    }
    fs::write(&csv_path, csv).map_err(|e| ScanError::io(&csv_path, e))
}
