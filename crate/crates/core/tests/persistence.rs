mod support;

use std::io::Write;
use std::sync::Arc;

use rand::Rng;

use semmap::embedding::{SyntheticConfig, SyntheticProvider};
use semmap::feature_map::{meta_path, FeatureMap, MapMeta};
use semmap::geometry::{DepthImage, Intrinsics, Point3, Pose};
use semmap::image::LabelImage;
use semmap::mapper::{Mapper, MapperConfig, Observation};
use semmap::obslog::{replay, LogReader, LogSettings, LogWriter};
use semmap::vocab::LabelVocabulary;
use semmap::Error;

fn random_map(seed: u64, n: usize, d: usize) -> FeatureMap {
    let mut r = support::rng(seed);
    let mut m = FeatureMap::new(d).unwrap();
    for i in 0..n {
        let p = Point3::new(r.random_range(-9.0..9.0), r.random_range(-9.0..9.0), r.random_range(0.0..2.0f64));
        m.insert(p, (i / 7) as u32, r.random_range(-2..=1), &support::random_unit(&mut r, d)).unwrap();
    }
    m
}

fn same_map(a: &FeatureMap, b: &FeatureMap) {
    assert_eq!((a.len(), a.dim(), a.frame_count()), (b.len(), b.dim(), b.frame_count()));
    for i in 0..a.len() {
        assert_eq!(a.entry(i), b.entry(i));
        assert_eq!(a.feature(i), b.feature(i));
    }
}

fn meta(dim: usize) -> MapMeta {
    let text = format!(r#"{{"provider": {{"kind": "synthetic", "dim": {dim}, "image_size": 56}}, "scales": [1, 0, -1], "frames": 3}}"#);
    serde_json::from_str(&text).unwrap()
}

#[test]
fn map_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (n, d) in [(0, 4), (1, 512), (1_500, 64)] {
        let m = random_map(n as u64, n, d);
        let path = dir.path().join(format!("m{n}.map"));
        m.save(&path, Some(&meta(d))).unwrap();
        // header 17 bytes, then 20 + 4d per record
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 17 + n as u64 * (20 + 4 * d as u64));
        let (back, mt) = FeatureMap::load(&path).unwrap();
        same_map(&m, &back);
        assert_eq!(mt.unwrap(), meta(d));
    }
}

#[test]
fn corrupt_maps_are_rejected_with_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let m = random_map(3, 10, 8);
    let path = dir.path().join("a.map");
    m.save(&path, None).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(FeatureMap::load(&path), Err(Error::Format { offset: 0, .. })));

    std::fs::write(&path, &good[..good.len() - 3]).unwrap();
    let err = FeatureMap::load(&path).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");

    std::fs::write(&path, &good[..10]).unwrap();
    assert!(FeatureMap::load(&path).is_err());

    let mut extra = good.clone();
    extra.push(0);
    std::fs::write(&path, &extra).unwrap();
    assert!(FeatureMap::load(&path).is_err());

    // a record whose feature is all zeros
    let mut zero = good.clone();
    let rec = 17 + 20;
    zero[rec..rec + 32].fill(0);
    std::fs::write(&path, &zero).unwrap();
    let err = FeatureMap::load(&path).unwrap_err();
    assert!(err.to_string().contains("record 0"), "{err}");

    // streaming read of a truncated buffer reports the record offset
    let err = FeatureMap::read_from(&mut &good[..17 + 52 + 5], None).unwrap_err();
    assert!(matches!(err, Error::Format { offset: 69, .. }), "{err}");

    // sidecar with the wrong dimension
    std::fs::write(&path, &good).unwrap();
    std::fs::write(meta_path(&path), serde_json::to_string(&meta(16)).unwrap()).unwrap();
    assert!(matches!(FeatureMap::load(&path), Err(Error::Config(_))));
    std::fs::write(meta_path(&path), "{").unwrap();
    assert!(matches!(FeatureMap::load(&path), Err(Error::Json { .. })));
}

fn test_frame(r: &mut impl Rng, k: &Intrinsics, vocab: &LabelVocabulary) -> (Pose, DepthImage, LabelImage) {
    let pose = Pose::upright_camera(Point3::new(r.random_range(0.0..5.0), r.random_range(0.0..5.0), 0.6), r.random_range(0.0..6.0));
    let n = k.pixel_count();
    let depth = DepthImage::new(k.width, k.height, (0..n).map(|_| r.random_range(0.5..4.0)).collect()).unwrap();
    let ids = (0..n).map(|i| (i / 7000) as u16 % vocab.len() as u16).collect();
    (pose, depth, LabelImage::new(k.width, k.height, ids).unwrap())
}

fn provider(vocab: &LabelVocabulary) -> Arc<SyntheticProvider> {
    Arc::new(SyntheticProvider::new(SyntheticConfig::default(), vocab.clone()).unwrap())
}

#[test]
fn ten_full_frames_give_250_entries_and_blank_frames_none() {
    let vocab = LabelVocabulary::standard();
    let k = Intrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480).unwrap();
    let mut mapper = Mapper::new(provider(&vocab), MapperConfig::default()).unwrap();
    let mut r = support::rng(4);
    for f in 0..10 {
        let (pose, depth, labels) = test_frame(&mut r, &k, &vocab);
        let stats = mapper.process(&Observation::with_labels(f, &pose, &k, &depth, &labels), None).unwrap();
        assert_eq!((stats.patches, stats.inserted), (25, 25));
    }
    assert_eq!(mapper.map().len(), 250);
    assert_eq!(mapper.map().frame_count(), 10);

    let (pose, _, labels) = test_frame(&mut r, &k, &vocab);
    let blank = DepthImage::new(640, 480, vec![0.0; k.pixel_count()]).unwrap();
    let stats = mapper.process(&Observation::with_labels(10, &pose, &k, &blank, &labels), None).unwrap();
    assert_eq!(stats.inserted, 0);
    assert_eq!(mapper.map().len(), 250);
}

#[test]
fn log_replay_reproduces_the_online_map() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = LabelVocabulary::standard();
    let k = Intrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480).unwrap().scaled(160, 120).unwrap();
    let cfg = MapperConfig {
        base_size: Some(56),
        ..MapperConfig::default()
    };
    let mut online = Mapper::new(provider(&vocab), cfg.clone()).unwrap();
    let mut log = LogWriter::create(dir.path(), &vocab).unwrap();
    log.write_settings(&LogSettings {
        provider: Default::default(),
        scales: cfg.scales.clone(),
    })
    .unwrap();
    let mut r = support::rng(8);
    for f in [0u32, 1, 5, 9] {
        let (pose, depth, labels) = test_frame(&mut r, &k, &vocab);
        online.process(&Observation::with_labels(f, &pose, &k, &depth, &labels), None).unwrap();
        log.append(f, &pose, &k, &depth, &labels).unwrap();
    }
    let (pose, depth, labels) = test_frame(&mut r, &k, &vocab);
    assert!(log.append(9, &pose, &k, &depth, &labels).is_err());
    log.finish().unwrap();

    let reader = LogReader::open(dir.path()).unwrap();
    assert_eq!(reader.records.len(), 4);
    assert_eq!(reader.settings.as_ref().unwrap().scales, vec![1, 0, -1]);
    let mut offline = Mapper::new(provider(&reader.vocabulary), cfg).unwrap();
    assert_eq!(replay(&reader, &mut offline).unwrap(), 4);
    same_map(online.map(), offline.map());
}

#[test]
fn broken_logs_name_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = LabelVocabulary::standard();
    let k = Intrinsics::new(40.0, 40.0, 40.0, 30.0, 80, 60).unwrap();
    let mut log = LogWriter::create(dir.path(), &vocab).unwrap();
    let mut r = support::rng(1);
    for f in [3u32, 4, 7] {
        let (pose, depth, labels) = test_frame(&mut r, &k, &vocab);
        log.append(f, &pose, &k, &depth, &labels).unwrap();
    }
    log.finish().unwrap();

    // truncated depth payload for frame 4
    let dp = dir.path().join("depth_000004.f32");
    let bytes = std::fs::read(&dp).unwrap();
    std::fs::write(&dp, &bytes[..bytes.len() - 4]).unwrap();
    let reader = LogReader::open(dir.path()).unwrap();
    let mut mapper = Mapper::new(provider(&vocab), MapperConfig { base_size: Some(20), ..Default::default() }).unwrap();
    let err = replay(&reader, &mut mapper).unwrap_err();
    assert!(err.to_string().contains("frame 4"), "{err}");
    assert!(reader.load(&reader.records[0]).is_ok());

    // label id outside the vocabulary
    let lp = dir.path().join("labels_000007.u16");
    let mut bytes = std::fs::read(&lp).unwrap();
    bytes[0..2].copy_from_slice(&u16::MAX.to_le_bytes());
    std::fs::write(&lp, &bytes).unwrap();
    let err = reader.load(&reader.records[2]).err().unwrap();
    assert!(err.to_string().contains("frame 7"), "{err}");

    // ids going backwards in the index
    let ip = dir.path().join(semmap::obslog::INDEX_FILE);
    let lines: Vec<String> = std::fs::read_to_string(&ip).unwrap().lines().map(String::from).collect();
    let mut f = std::fs::File::create(&ip).unwrap();
    writeln!(f, "{}\n{}", lines[1], lines[0]).unwrap();
    drop(f);
    let err = LogReader::open(dir.path()).err().unwrap();
    assert!(err.to_string().contains("frame 3"), "{err}");

    // a pose that is not rigid
    let mut rec: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    rec["pose"][0] = 3.0.into();
    std::fs::write(&ip, format!("{rec}\n")).unwrap();
    let reader = LogReader::open(dir.path()).unwrap();
    let err = reader.load(&reader.records[0]).err().unwrap();
    assert!(err.to_string().contains("frame 3"), "{err}");
}
