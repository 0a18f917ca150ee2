use bevlab_core::augment::{cutmix_composite, global_augment, gt_sample, load_bank, save_bank, GlobalAug};
use bevlab_core::clfm::{clfm_forward, ClfmConfig, ClfmParams};
use bevlab_core::geometry::{box_to_anchor, BevGridSpec};
use bevlab_core::harness::{init_encoders, RunConfig};
use bevlab_core::icd::{icd_pipeline, mean_positive_similarity, retrieval_accuracy, Denominator, Temperature};
use bevlab_core::synth::{generate_scene, object_bank, teacher_encode};
use bevlab_core::tensor::{normal_tensor, seeded_rng, Tensor};

#[test]
fn banked_objects_paste_and_composite() {
    let cfg = RunConfig::default();
    let synth = cfg.synth_config();
    let donor = generate_scene(&synth, 3).unwrap();
    let bank = object_bank(&donor, "donor").unwrap();
    assert!(!bank.is_empty());

    let dir = tempfile::tempdir().unwrap();
    save_bank(dir.path(), &bank).unwrap();
    let bank = load_bank(dir.path()).unwrap();

    let base = generate_scene(&synth, 4).unwrap();
    let out = gt_sample(&base, &bank, 3, &cfg.grid, 9).unwrap();
    assert!(out.boxes.len() >= base.boxes.len());
    assert_eq!(out.patches.len(), out.boxes.len() - base.boxes.len());
    let anchors: Vec<_> = out.boxes.iter().map(|b| box_to_anchor(b, &cfg.grid).unwrap()).collect();
    for (i, a) in anchors.iter().enumerate().skip(base.boxes.len()) {
        assert!(anchors[..i].iter().all(|b| !a.overlaps(b)));
    }

    let (img, mask) = cutmix_composite(&out.image, &out.patches).unwrap();
    assert_eq!(img.shape(), out.image.shape());
    for p in &out.patches {
        assert!(mask.ids.contains(&Some(p.instance_id)) || out.patches.iter().any(|q| q.depth < p.depth));
    }
}

#[test]
fn teacher_maps_align_with_themselves() {
    let cfg = RunConfig::default();
    let scene = generate_scene(&cfg.synth_config(), 0).unwrap();
    let (teacher, _) = init_encoders(&cfg);
    let t = teacher_encode(&scene, &teacher, &cfg.grid).unwrap();
    let out = icd_pipeline(&t, &t, &scene.boxes, &cfg.grid, 6, Temperature::from_tau(0.5), Denominator::IncludePositive)
        .unwrap();
    assert_eq!(out.instances(), scene.boxes.len());
    assert!((mean_positive_similarity(&out.similarity) - 1.0).abs() < 1e-12);
    assert_eq!(retrieval_accuracy(&out.similarity), 1.0);
    assert!(out.loss.is_finite());
}

#[test]
fn global_augment_keeps_generated_scene_shape() {
    let cfg = RunConfig::default();
    let scene = generate_scene(&cfg.synth_config(), 1).unwrap();
    let out = global_augment(&scene, &GlobalAug::sample(5)).unwrap();
    assert_eq!(out.points.len(), scene.points.len());
    assert_eq!(out.boxes.len(), scene.boxes.len());
    assert_eq!(out.image, scene.image);
}

#[test]
fn saved_fusion_weights_reproduce_output() {
    let grid = BevGridSpec { height: 6, width: 7, channels: 8, ..BevGridSpec::default() };
    let mut rng = seeded_rng(2);
    let x: Tensor<f32> = normal_tensor(&grid.shape(), 1.0, &mut rng);
    let y: Tensor<f32> = normal_tensor(&grid.shape(), 1.0, &mut rng);
    let params = ClfmParams::<f32>::init(ClfmConfig::default(), &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    params.save_bundle(dir.path()).unwrap();
    let loaded = ClfmParams::<f32>::load_bundle(dir.path()).unwrap();
    assert_eq!(clfm_forward(&x, &y, &params).unwrap(), clfm_forward(&x, &y, &loaded).unwrap());
}
