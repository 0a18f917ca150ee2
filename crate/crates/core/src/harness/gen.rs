use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::augment::{points_tensor, SceneSample};
use crate::error::Result;
use crate::geometry::format_boxes;
use crate::synth::generate_scene;
use crate::tensor::{save_tensor, Tensor};

use super::config::RunConfig;
use super::report::{EnvStamp, RunReport};

pub const GEN_MANIFEST: &str = "manifest.txt";
pub const DEPTH_EDGES_FILE: &str = "depth_edges.bflt";
/// Manifest placeholder for a scene without points.
pub const EMPTY: &str = "-";
pub const GEN_COLUMNS: [&str; 3] = ["index", "points", "boxes"];

fn write_scene(dir: &Path, stem: &str, s: &SceneSample) -> Result<[String; 4]> {
    let mut names = [
        format!("{stem}.points.bflt"),
        format!("{stem}.image.bflt"),
        format!("{stem}.depth.bflt"),
        format!("{stem}.boxes.txt"),
    ];
    if s.points.is_empty() {
        names[0] = EMPTY.into();
    } else {
        save_tensor(dir.join(&names[0]), &points_tensor(&s.points)?)?;
    }
    save_tensor(dir.join(&names[1]), &s.image)?;
    save_tensor(dir.join(&names[2]), s.depth.probs())?;
    fs::write(dir.join(&names[3]), format_boxes(&s.boxes))?;
    Ok(names)
}

/// Writes `gen.count` scenes starting at `gen.first_index` into `out`.
///
/// Per scene: a point tensor (`N × (3 + C)`), image features, depth probabilities and a box file.
/// The manifest lists `index points image depth boxes n_points` per line; shared depth bin edges go to
/// `depth_edges.bflt`. A scene without points lists `-` in place of its point file.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    cfg.validate()?;
    let synth = cfg.synth_config();
    let first = cfg.gen.first_index;
    fs::create_dir_all(out)?;
    let scenes: Vec<(u64, SceneSample)> = (first..first + cfg.gen.count as u64)
        .into_par_iter()
        .map(|i| generate_scene(&synth, i).map(|s| (i, s)))
        .collect::<Result<_>>()?;
    let edges = synth.bin_edges();
    save_tensor(out.join(DEPTH_EDGES_FILE), &Tensor::new(&[edges.len()], edges)?)?;

    let mut manifest = String::from("# index points image depth boxes n_points\n");
    let mut report = RunReport::new("gen", EnvStamp::new("f64", cfg.seed, "none"), &GEN_COLUMNS);
    for (i, s) in &scenes {
        let [p, img, d, b] = write_scene(out, &format!("scene_{i:06}"), s)?;
        let _ = writeln!(manifest, "{i} {p} {img} {d} {b} {}", s.points.len());
        report.push_row(vec![*i as f64, s.points.len() as f64, s.boxes.len() as f64])?;
    }
    fs::write(out.join(GEN_MANIFEST), manifest)?;
    report.set("scenes", scenes.len() as f64);
    report.set("objects", scenes.iter().map(|(_, s)| s.boxes.len()).sum::<usize>() as f64);
    report.validate()?;
    Ok(report)
}
