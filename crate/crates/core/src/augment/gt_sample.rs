use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{box_to_anchor, format_boxes, parse_boxes, AnchorBev, BevGridSpec, Box3D, LidarPoint};
use crate::tensor::{load_tensor_as, save_tensor, seeded_rng, Tensor};

use super::scene::{DepthPatch, SceneSample};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 10;
pub const BANK_MANIFEST: &str = "manifest.txt";

/// One ground-truth object available for pasting.
#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry {
    pub name: String,
    pub points: Vec<LidarPoint>,
    pub bbox: Box3D,
    pub patch: DepthPatch,
}

/// Pastes `k` bank objects at their recorded poses.
///
/// A candidate whose anchor overlaps any anchor already in the scene (or that misses the grid) is redrawn,
/// up to ten draws per insertion; an insertion that exhausts its draws is skipped. Each accepted object
/// appends its points and box and queues its patch with `instance_id` set to the new box index.
pub fn gt_sample(scene: &SceneSample, bank: &[BankEntry], k: usize, grid: &BevGridSpec, seed: u64) -> Result<SceneSample> {
    if k == 0 {
        return Ok(scene.clone());
    }
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let mut rng = seeded_rng(seed);
    let mut out = scene.clone();
    let mut anchors: Vec<AnchorBev> = out.boxes.iter().filter_map(|b| box_to_anchor(b, grid).ok()).collect();
    for _ in 0..k {
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let entry = &bank[rng.random_range(0..bank.len())];
            let Ok(anchor) = box_to_anchor(&entry.bbox, grid) else { continue };
            if anchors.iter().any(|a| a.overlaps(&anchor)) {
                continue;
            }
            anchors.push(anchor);
            let mut patch = entry.patch.clone();
            patch.instance_id = out.boxes.len() as u32;
            out.boxes.push(entry.bbox);
            out.points.extend(entry.points.iter().cloned());
            out.patches.push(patch);
            break;
        }
    }
    Ok(out)
}

/// `N × (3 + C)` rows of `x y z feature…`.
pub fn points_tensor(points: &[LidarPoint]) -> Result<Tensor<f64>> {
    let c = points.first().map(|p| p.feature.len()).ok_or_else(|| Error::Validation("bank entry has no points".into()))?;
    let mut data = Vec::with_capacity(points.len() * (3 + c));
    for p in points {
        if p.feature.len() != c {
            return Err(Error::Dimension("bank points disagree on feature length".into()));
        }
        data.extend([p.x, p.y, p.z]);
        data.extend_from_slice(&p.feature);
    }
    Tensor::new(&[points.len(), 3 + c], data)
}

pub fn tensor_points(t: &Tensor<f64>) -> Result<Vec<LidarPoint>> {
    let (n, w) = t.dims2()?;
    if w < 3 {
        return Err(Error::Format(format!("point tensor needs at least 3 columns, has {w}")));
    }
    Ok((0..n)
        .map(|i| {
            let r = t.row(i);
            LidarPoint { x: r[0], y: r[1], z: r[2], feature: r[3..].to_vec() }
        })
        .collect())
}

/// Writes `<name>.points.bflt`, `<name>.box.txt`, `<name>.patch.bflt` per entry and a manifest line per entry:
/// `name points box patch top left depth`.
pub fn save_bank(dir: impl AsRef<Path>, bank: &[BankEntry]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("# name points box patch top left depth\n");
    for e in bank {
        if e.name.is_empty() || e.name.contains(char::is_whitespace) {
            return Err(Error::Validation(format!("bank name {:?} must be a single token", e.name)));
        }
        let (pf, bf, tf) = (format!("{}.points.bflt", e.name), format!("{}.box.txt", e.name), format!("{}.patch.bflt", e.name));
        save_tensor(dir.join(&pf), &points_tensor(&e.points)?)?;
        fs::write(dir.join(&bf), format_boxes(&[e.bbox]))?;
        save_tensor(dir.join(&tf), &e.patch.pixels)?;
        manifest.push_str(&format!(
            "{} {pf} {bf} {tf} {} {} {:?}\n",
            e.name, e.patch.rect.top, e.patch.rect.left, e.patch.depth
        ));
    }
    fs::write(dir.join(BANK_MANIFEST), manifest)?;
    Ok(())
}

pub fn load_bank(dir: impl AsRef<Path>) -> Result<Vec<BankEntry>> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(BANK_MANIFEST))?;
    let mut bank = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = |what: &str| Error::Format(format!("bank manifest line {}: {what}", lineno + 1));
        if f.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let boxes = parse_boxes(&fs::read_to_string(dir.join(f[2]))?)?;
        let [bbox] = boxes[..] else { return Err(bad("box file must hold exactly one box")) };
        let top = f[4].parse().map_err(|_| bad("top"))?;
        let left = f[5].parse().map_err(|_| bad("left"))?;
        let depth = f[6].parse().map_err(|_| bad("depth"))?;
        let patch = DepthPatch::new(top, left, depth, load_tensor_as(dir.join(f[3]))?, bank.len() as u32)?;
        bank.push(BankEntry { name: f[0].to_string(), points: tensor_points(&load_tensor_as(dir.join(f[1]))?)?, bbox, patch });
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DepthDistribution, RowCamera};

    fn grid() -> BevGridSpec {
        BevGridSpec { origin_x: 0.0, origin_y: -20.0, cell_size: 0.5, height: 80, width: 80, channels: 2 }
    }

    fn empty_scene() -> SceneSample {
        let probs = Tensor::full(&[1, 8, 4], 0.25);
        SceneSample {
            points: Vec::new(),
            image: Tensor::zeros(&[1, 8, 2]),
            depth: DepthDistribution::new(probs, DepthDistribution::uniform_edges(1.0, 41.0, 4)).unwrap(),
            camera: RowCamera { x: 0.0, y: 0.0, heading: 0.0, fov: 1.5, columns: 8 },
            boxes: Vec::new(),
            patches: Vec::new(),
        }
    }

    fn entry(i: usize, x: f64, y: f64) -> BankEntry {
        let bbox = Box3D::new([x, y, 0.0], [4.0, 2.0, 1.5], 0.3 * i as f64, (i % 3) as u32).unwrap();
        let points = (0..5).map(|j| LidarPoint { x: x + 0.1 * j as f64, y, z: 0.0, feature: vec![i as f64, j as f64] }).collect();
        let patch = DepthPatch::new(0, i as i64, bbox.range(), Tensor::full(&[1, 2, 2], i as f64), 0).unwrap();
        BankEntry { name: format!("obj{i}"), points, bbox, patch }
    }

    fn bank() -> Vec<BankEntry> {
        (0..12).map(|i| entry(i, 5.0 + 2.5 * i as f64, -15.0 + 2.7 * i as f64)).collect()
    }

    #[test]
    fn zero_insertions_leave_scene_alone() {
        let s = empty_scene();
        assert_eq!(gt_sample(&s, &[], 0, &grid(), 1).unwrap(), s);
    }

    #[test]
    fn single_insertion_into_empty_scene() {
        let out = gt_sample(&empty_scene(), &bank(), 1, &grid(), 4).unwrap();
        assert_eq!(out.boxes.len(), 1);
        assert_eq!(out.points.len(), 5);
        assert_eq!(out.patches.len(), 1);
        let src = bank().into_iter().find(|e| e.bbox == out.boxes[0]).unwrap();
        assert_eq!(out.points, src.points);
    }

    #[test]
    fn empty_bank_is_an_error() {
        assert!(matches!(gt_sample(&empty_scene(), &[], 2, &grid(), 0), Err(Error::EmptyBank)));
    }

    #[test]
    fn inserted_anchors_never_overlap() {
        let g = grid();
        for seed in 0..40 {
            let out = gt_sample(&empty_scene(), &bank(), 8, &g, seed).unwrap();
            let anchors: Vec<AnchorBev> = out.boxes.iter().map(|b| box_to_anchor(b, &g).unwrap()).collect();
            for i in 0..anchors.len() {
                for j in i + 1..anchors.len() {
                    let (a, b) = (anchors[i], anchors[j]);
                    let disjoint = a.max_u < b.min_u || b.max_u < a.min_u || a.max_v < b.min_v || b.max_v < a.min_v;
                    assert!(disjoint, "seed {seed}: boxes {i} and {j} share cells");
                }
            }
            let ids: Vec<u32> = out.patches.iter().map(|p| p.instance_id).collect();
            assert_eq!(ids, (0..out.boxes.len() as u32).collect::<Vec<_>>());
        }
    }

    #[test]
    fn bank_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = bank();
        save_bank(dir.path(), &b).unwrap();
        let loaded = load_bank(dir.path()).unwrap();
        assert_eq!(loaded.len(), b.len());
        for (x, y) in b.iter().zip(&loaded) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.points, y.points);
            assert_eq!(x.bbox, y.bbox);
            assert_eq!(x.patch.pixels, y.patch.pixels);
            assert_eq!(x.patch.depth, y.patch.depth);
            assert_eq!(x.patch.rect, y.patch.rect);
        }
        let manifest = fs::read_to_string(dir.path().join(BANK_MANIFEST)).unwrap();
        assert!(manifest.lines().nth(1).unwrap().starts_with("obj0 obj0.points.bflt obj0.box.txt obj0.patch.bflt 0 0 "));
    }
}
