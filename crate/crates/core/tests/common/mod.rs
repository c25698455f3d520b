#![allow(dead_code)]

use std::sync::Arc;

use plant_doctor::config::RunConfig;
use plant_doctor::ingest::MemorySource;
use plant_doctor::pipeline::{Analysis, Pipeline};
use plant_doctor::synthetic::{
    DamageBlob, LeafSpec, OracleDetector, OracleSegmenter, Scene, SceneSpec,
};

pub const SIZE: u32 = 400;

pub fn leaf(id: u32, start: [f64; 2], velocity: [f64; 2]) -> LeafSpec {
    let tint = (id * 23 % 60) as u8;
    LeafSpec {
        id,
        axes: [26.0 + (id % 3) as f64 * 3.0, 18.0 + (id % 4) as f64 * 2.0],
        color: [40 + tint / 2, 120 + tint, 40],
        start,
        velocity,
        positions: None,
        damage: vec![
            DamageBlob {
                center: [0.35, -0.2],
                radius: 2.5 + (id % 5) as f64,
                color: [130, 85, 45],
            },
            DamageBlob {
                center: [-0.4, 0.3],
                radius: 1.5 + (id % 2) as f64 * 2.0,
                color: [210, 200, 160],
            },
        ],
        occlusions: vec![],
        confidence: None,
    }
}

pub fn base_spec(frame_count: usize, leaves: Vec<LeafSpec>) -> SceneSpec {
    SceneSpec {
        seed: 7,
        frame_count,
        width: SIZE,
        height: SIZE,
        fps: 3.0,
        background: [38, 34, 30],
        blur_radius: 0,
        blurred_frames: vec![],
        leaves,
    }
}

/// Ten leaves on a 5x2 grid drifting together, always fully in frame.
pub fn clean_scene() -> SceneSpec {
    let leaves = (0..10)
        .map(|i| {
            let col = (i % 5) as f64;
            let row = (i / 5) as f64;
            leaf(i + 1, [40.0 + col * 76.0, 70.0 + row * 160.0], [0.4, 1.2])
        })
        .collect();
    base_spec(30, leaves)
}

pub fn blurred_scene() -> SceneSpec {
    let mut s = clean_scene();
    s.blur_radius = 1;
    s.blurred_frames = (0..30).filter(|f| f % 5 == 2).collect();
    s
}

/// One leaf hidden for `hidden` frames in the middle of its path.
pub fn occlusion_scene(hidden: usize) -> SceneSpec {
    let mut l = leaf(1, [40.0, 160.0], [6.0, 0.0]);
    l.occlusions = vec![[12, 12 + hidden - 1]];
    base_spec(12 + hidden + 12, vec![l])
}

pub fn oracle_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.ingest.target_size = SIZE;
    c
}

pub fn run(spec: &SceneSpec, config: &RunConfig) -> Analysis {
    let scene = Arc::new(Scene::new(spec.clone()).expect("valid scene"));
    let frames: Vec<_> = scene.render().into_iter().map(|(img, _)| img).collect();
    let det = OracleDetector::new(scene.clone());
    let seg = OracleSegmenter::new(scene);
    Pipeline::new(config, &det, &seg)
        .expect("valid config")
        .run(MemorySource::new(frames))
        .expect("pipeline runs")
}

/// Number of times the leaf→track association changes along each track.
pub fn id_switches(spec: &SceneSpec, analysis: &Analysis) -> usize {
    let scene = Scene::new(spec.clone()).unwrap();
    let mut leaf_of_track = std::collections::BTreeMap::new();
    let mut track_of_leaf = std::collections::BTreeMap::new();
    let mut switches = 0;
    for h in &analysis.tracks {
        for &(f, bbox) in &h.observations {
            let truth = scene.truth(f);
            let Some(t) = truth
                .boxes
                .iter()
                .max_by(|a, b| a.bbox.iou(&bbox).total_cmp(&b.bbox.iou(&bbox)))
            else {
                continue;
            };
            if let Some(prev) = leaf_of_track.insert(h.id, t.leaf_id) {
                if prev != t.leaf_id {
                    switches += 1;
                }
            }
            if let Some(prev) = track_of_leaf.insert((t.leaf_id, f), h.id) {
                if prev != h.id {
                    switches += 1;
                }
            }
        }
    }
    let mut per_leaf: std::collections::BTreeMap<u32, std::collections::BTreeSet<u64>> =
        Default::default();
    for ((leaf, _), track) in track_of_leaf {
        per_leaf.entry(leaf).or_default().insert(track);
    }
    switches + per_leaf.values().map(|s| s.len() - 1).sum::<usize>()
}
