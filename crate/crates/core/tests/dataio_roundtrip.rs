use std::fs;

use tcbp::dataio::{
    decode_feature_file, encode_feature_file, generate_synthetic, load_manifest, read_feature_file, size_histogram,
    synthesize, write_feature_file, Split, SynthConfig,
};
use tcbp::{Error, Exec, FeatureMap, Modality};

fn small_cfg(seed: u64) -> SynthConfig {
    SynthConfig {
        n_train: 40,
        n_val: 10,
        n_test: 10,
        modalities: vec![(Modality::A, 3), (Modality::I, 5), (Modality::S, 4)],
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn generated_dataset_loads_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg(7);
    let manifest = generate_synthetic(&cfg, dir.path()).unwrap();
    let parsed = load_manifest(&manifest).unwrap();
    assert_eq!(parsed.scenes.len(), 60);
    let loaded = parsed.load_scenes(None, Exec::Parallel).unwrap();
    assert_eq!(loaded, synthesize(&cfg).unwrap());

    let train = parsed.load_scenes(Some(Split::Train), Exec::Sequential).unwrap();
    assert_eq!(train.len(), 40);
    assert!(train.iter().all(|s| s.split == Split::Train));

    // Text features repeat one column across every segment.
    for scene in &loaded {
        for clip in scene.clips() {
            let s = clip.get(Modality::S).unwrap();
            for k in 1..s.segments() {
                assert_eq!(s.column(k), s.column(0));
            }
        }
    }
}

#[test]
fn split_histograms_follow_the_proportions() {
    let scenes = synthesize(&SynthConfig { n_train: 1784, n_val: 0, n_test: 0, ..small_cfg(1) }).unwrap();
    let hist = size_histogram(&scenes);
    let want = [(2, 958), (3, 472), (4, 203), (5, 100), (6, 51)];
    for (m, n) in want {
        assert_eq!(hist[&m], n, "size {m}");
    }
}

#[test]
fn generation_is_reproducible_byte_for_byte() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = generate_synthetic(&small_cfg(3), a.path()).unwrap();
    let mb = generate_synthetic(&small_cfg(3), b.path()).unwrap();
    assert_eq!(fs::read(&ma).unwrap(), fs::read(&mb).unwrap());
    let manifest = load_manifest(&ma).unwrap();
    for clip in manifest.scenes.iter().flat_map(|s| &s.clips) {
        for rel in clip.features.values() {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());
        }
    }
    let other = tempfile::tempdir().unwrap();
    let mc = generate_synthetic(&small_cfg(4), other.path()).unwrap();
    let first = &load_manifest(&mc).unwrap().scenes[0].clips[0];
    let rel = first.features.values().next().unwrap();
    assert_ne!(fs::read(other.path().join(rel)).ok(), fs::read(a.path().join(rel)).ok());
}

#[test]
fn feature_files_detect_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.mmfe");
    let map = FeatureMap::from_fn(3, 4, |i, s| (i * 4 + s) as f64 * 0.25).unwrap();
    write_feature_file(&path, Modality::P, &map).unwrap();
    assert_eq!(read_feature_file(&path).unwrap(), (Modality::P, map.clone()));

    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(decode_feature_file(&bytes, &path), Err(Error::Checksum { .. })));

    let good = encode_feature_file(Modality::P, &map);
    assert!(matches!(decode_feature_file(&good[..good.len() - 3], &path), Err(Error::Format { .. })));
    assert!(read_feature_file(&dir.path().join("missing.mmfe")).is_err());
}

fn manifest_error(text: &str) -> Error {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    fs::write(&path, text).unwrap();
    load_manifest(&path).unwrap_err()
}

#[test]
fn manifest_errors_carry_line_numbers() {
    let clip = |id: &str| format!(r#"{{"clip_id":"{id}","t_full":4,"features":{{"A":"a.mmfe"}}}}"#);
    let scene = |id: &str, n: usize| {
        let clips: Vec<String> = (0..n).map(|k| clip(&format!("{id}_{k}"))).collect();
        format!(r#"{{"scene_id":"{id}","split":"train","clips":[{}]}}"#, clips.join(","))
    };

    let one_clip = format!("{}\n\n{}\n", scene("a", 2), scene("b", 1));
    match manifest_error(&one_clip) {
        Error::Manifest { line, detail } => {
            assert_eq!(line, 3);
            assert!(detail.contains("scene size out of range"), "{detail}");
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(manifest_error(&format!("{}\n", scene("a", 7))), Error::Manifest { line: 1, .. }));
    assert!(matches!(
        manifest_error(&format!("{}\n{}\n", scene("a", 2), scene("a", 3))),
        Error::Manifest { line: 2, .. }
    ));
    assert!(matches!(manifest_error("{not json}\n"), Error::Manifest { line: 1, .. }));
    assert!(matches!(
        manifest_error(r#"{"scene_id":"a","split":"train","clips":[],"extra":1}"#),
        Error::Manifest { line: 1, .. }
    ));
}

#[test]
fn missing_manifest_is_an_io_error() {
    assert!(matches!(load_manifest(std::path::Path::new("/nonexistent/m.jsonl")), Err(Error::Io { .. })));
}
