mod support;

use rand::Rng;

use semmap::geometry::{Intrinsics, Point3, Pose};
use semmap::sim::world::{Extents, LabeledBox, World};
use semmap::sim::Scene;
use semmap::vocab::LabelVocabulary;

fn random_world(r: &mut impl Rng) -> World {
    let vocab = LabelVocabulary::standard();
    let objects: Vec<String> = vocab
        .labels()
        .iter()
        .filter(|l| l.group == semmap::vocab::LabelGroup::Object)
        .map(|l| l.name.clone())
        .collect();
    let mut boxes = Vec::new();
    for _ in 0..r.random_range(1..12) {
        let (x, y) = (r.random_range(0.0..9.0), r.random_range(0.0..9.0));
        let z = if r.random_bool(0.7) { 0.0 } else { r.random_range(0.0..1.5) };
        boxes.push(LabeledBox {
            label: objects[r.random_range(0..objects.len())].clone(),
            min: [x, y, z],
            max: [x + r.random_range(0.1..1.0), y + r.random_range(0.1..1.0), z + r.random_range(0.1..1.5)],
        });
    }
    World {
        name: "random".into(),
        extents: Extents {
            min: [0.0, 0.0],
            max: [10.0, 10.0],
        },
        wall_height: 2.5,
        walls: vec![
            semmap::sim::world::Wall { min: [0.0, 0.0], max: [10.0, 0.1] },
            semmap::sim::world::Wall { min: [0.0, 9.9], max: [10.0, 10.0] },
            semmap::sim::world::Wall { min: [0.0, 0.0], max: [0.1, 10.0] },
        ],
        boxes,
        floor_regions: vec![],
        spawn_points: vec![],
        queries: None,
    }
}

fn inside_any(world: &World, p: [f64; 3]) -> bool {
    let inside = |min: [f64; 3], max: [f64; 3]| (0..3).all(|a| p[a] >= min[a] - 0.05 && p[a] <= max[a] + 0.05);
    world.boxes.iter().any(|b| inside(b.min, b.max))
        || world
            .walls
            .iter()
            .any(|w| inside([w.min[0], w.min[1], 0.0], [w.max[0], w.max[1], world.wall_height]))
}

/// Depth equals the slab-method oracle at every pixel, for upright and
/// tilted cameras.
#[test]
fn depth_matches_ray_box_oracle() {
    let mut r = support::rng(5);
    let k = Intrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480).unwrap().scaled(80, 60).unwrap();
    let mut worst = 0.0f64;
    let mut labels_checked = 0;
    for scene_i in 0..40 {
        let world = random_world(&mut r);
        let vocab = LabelVocabulary::standard();
        let eye = loop {
            let e = [r.random_range(0.5..9.5), r.random_range(0.5..9.5), r.random_range(0.2..2.0)];
            if !inside_any(&world, e) {
                break e;
            }
        };
        let heading = r.random_range(0.0..std::f64::consts::TAU);
        let upright = Pose::upright_camera(Point3::new(eye[0], eye[1], eye[2]), heading);
        let pose = if scene_i % 2 == 0 {
            upright
        } else {
            // pitch the camera down about its own x axis
            let a: f64 = r.random_range(0.05..0.6);
            let (s, c) = a.sin_cos();
            let pitch = [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]];
            let ru = upright.rotation();
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = (0..3).map(|t| ru[i][t] * pitch[t][j]).sum();
                }
            }
            Pose::new(m, upright.translation()).unwrap()
        };
        let scene = Scene::new(world.clone(), vocab.clone()).unwrap();
        let frame = scene.render(&pose, &k);
        let expected = support::render_oracle(&world, pose.rotation(), eye, &k);
        for (i, (d, hit)) in expected.iter().enumerate() {
            let got = frame.depth.values()[i] as f64;
            worst = worst.max((got - d).abs());
            if let Some(b) = hit {
                let (u, v) = ((i % k.width as usize) as u32, (i / k.width as usize) as u32);
                assert_eq!(
                    vocab.name(frame.labels.get(u, v)),
                    world.boxes[*b].label,
                    "scene {scene_i} pixel ({u},{v})"
                );
                labels_checked += 1;
            }
        }
    }
    assert!(worst <= 1e-6, "worst depth error {worst}");
    assert!(labels_checked > 1000);
}

#[test]
fn facing_a_wall_one_meter_away() {
    let world = World {
        name: "wall".into(),
        extents: Extents {
            min: [0.0, 0.0],
            max: [5.0, 5.0],
        },
        wall_height: 2.5,
        walls: vec![semmap::sim::world::Wall { min: [3.0, 0.0], max: [3.2, 5.0] }],
        boxes: vec![],
        floor_regions: vec![],
        spawn_points: vec![],
        queries: None,
    };
    let scene = Scene::new(world, LabelVocabulary::standard()).unwrap();
    let k = Intrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480).unwrap().scaled(160, 120).unwrap();
    let pose = Pose::upright_camera(Point3::new(2.0, 2.5, 0.6), 0.0);
    let f = scene.render(&pose, &k);
    assert_eq!(f.depth.get(80, 60), 1.0);
    // looking away from the wall toward open space beyond the extents
    let pose = Pose::upright_camera(Point3::new(2.0, 2.5, 0.6), std::f64::consts::PI);
    let f = scene.render(&pose, &k);
    assert_eq!(f.depth.get(80, 40), 0.0);
}

#[test]
fn box_in_view_is_labeled() {
    let world = World {
        name: "box".into(),
        extents: Extents {
            min: [0.0, 0.0],
            max: [6.0, 6.0],
        },
        wall_height: 2.5,
        walls: vec![],
        boxes: vec![LabeledBox {
            label: "sink".into(),
            min: [3.0, 2.5, 0.0],
            max: [3.5, 3.5, 1.2],
        }],
        floor_regions: vec![],
        spawn_points: vec![],
        queries: None,
    };
    let vocab = LabelVocabulary::standard();
    let scene = Scene::new(world.clone(), vocab.clone()).unwrap();
    let k = Intrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480).unwrap().scaled(160, 120).unwrap();
    let pose = Pose::upright_camera(Point3::new(1.0, 3.0, 0.6), 0.0);
    let f = scene.render(&pose, &k);
    assert_eq!(vocab.name(f.labels.get(80, 60)), "sink");
    let oracle = support::render_oracle(&world, pose.rotation(), [1.0, 3.0, 0.6], &k);
    assert!((f.depth.get(80, 60) as f64 - oracle[60 * 160 + 80].0).abs() < 1e-6);
    assert_eq!(f.depth.get(80, 60), 2.0);
}
