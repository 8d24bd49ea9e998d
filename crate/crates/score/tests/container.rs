use std::fs;
use std::path::Path;

use pa_core::synth::{generate_synthetic_dataset, SynthSpec};
use pa_core::{Dataset, Error};
use pa_score::container::{load_container, read_manifest, write_container, MANIFEST_FILE};
use proptest::prelude::*;

fn small(seed: u64) -> Dataset {
    let mut spec = SynthSpec::suppression_benchmark(seed);
    spec.images = 6;
    spec.grid = [4, 5];
    spec.channels = 8;
    spec.layers = vec![5, 11];
    spec.pseudo.iter_mut().for_each(|p| p.blob = [2, 2]);
    spec.defect.blob = [1, 2];
    generate_synthetic_dataset(&spec).unwrap().dataset
}

fn bits(ds: &Dataset) -> Vec<u32> {
    let mut out = Vec::new();
    for img in &ds.images {
        for g in &img.layers {
            out.extend(g.as_slice().iter().map(|v| v.to_bits()));
        }
        for t in &img.class_tokens {
            out.extend(t.iter().map(|v| v.to_bits()));
        }
    }
    out.extend(
        ds.text
            .positive
            .iter()
            .chain(&ds.text.negative)
            .map(|v| v.to_bits()),
    );
    out
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small(1);
    write_container(&ds, dir.path()).unwrap();
    let back = load_container(dir.path()).unwrap();
    assert_eq!(bits(&back), bits(&ds));
    assert_eq!(back, ds);
}

#[test]
fn empty_dataset_is_refused_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = small(2);
    ds.manifest.image_records.clear();
    ds.images.clear();
    ds.masks.clear();
    let target = dir.path().join("c");
    assert!(write_container(&ds, &target).is_err());
    assert!(!target.exists());
}

#[test]
fn escaping_paths_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = small(3);
    ds.manifest.image_records[0].blob = "../outside.bin".into();
    assert!(write_container(&ds, &dir.path().join("c")).is_err());
}

fn written(seed: u64) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_container(&small(seed), dir.path()).unwrap();
    dir
}

fn edit_manifest(root: &Path, f: impl FnOnce(&mut serde_json::Value)) {
    let path = root.join(MANIFEST_FILE);
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    f(&mut v);
    fs::write(path, serde_json::to_string(&v).unwrap()).unwrap();
}

#[test]
fn named_errors_for_common_corruptions() {
    let dir = written(4);
    fs::remove_file(dir.path().join("features/img_002.bin")).unwrap();
    match load_container(dir.path()) {
        Err(Error::Format { blob, .. }) => assert_eq!(blob, "features/img_002.bin"),
        other => panic!("{other:?}"),
    }

    let dir = written(4);
    let blob = dir.path().join("features/img_001.bin");
    let mut bytes = fs::read(&blob).unwrap();
    bytes.pop();
    fs::write(&blob, bytes).unwrap();
    assert!(matches!(
        load_container(dir.path()),
        Err(Error::Format { .. })
    ));

    let dir = written(4);
    let blob = dir.path().join("features/img_000.bin");
    let mut bytes = fs::read(&blob).unwrap();
    bytes[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&blob, bytes).unwrap();
    match load_container(dir.path()) {
        Err(Error::Data {
            image_id, layer, ..
        }) => assert_eq!((image_id.as_str(), layer), ("img_000", 5)),
        other => panic!("{other:?}"),
    }

    let dir = written(4);
    edit_manifest(dir.path(), |v| v["layers"] = serde_json::json!([11, 5]));
    assert!(matches!(load_container(dir.path()), Err(Error::Schema(_))));

    let dir = written(4);
    edit_manifest(dir.path(), |v| {
        v["image_records"][1]["image_id"] = "img_000".into()
    });
    assert!(matches!(load_container(dir.path()), Err(Error::Schema(_))));

    let dir = written(4);
    edit_manifest(dir.path(), |v| {
        v.as_object_mut().unwrap().remove("channels");
    });
    assert!(matches!(read_manifest(dir.path()), Err(Error::Schema(_))));

    let dir = written(4);
    fs::write(dir.path().join("masks/img_003.png"), b"not a png").unwrap();
    assert!(matches!(
        load_container(dir.path()),
        Err(Error::Format { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Random byte damage anywhere in the container never panics; it either
    /// still loads (damage confined to feature values that stay finite) or
    /// fails with a named error.
    #[test]
    fn fuzzed_containers_never_crash(
        file in 0usize..4,
        offset in any::<prop::sample::Index>(),
        value in any::<u8>(),
        truncate in any::<bool>(),
    ) {
        let dir = written(5);
        let rel = ["manifest.json", "features/img_000.bin", "text.bin", "masks/img_001.png"][file];
        let path = dir.path().join(rel);
        let mut bytes = fs::read(&path).unwrap();
        let at = offset.index(bytes.len());
        if truncate {
            bytes.truncate(at);
        } else {
            bytes[at] = value;
        }
        fs::write(&path, &bytes).unwrap();
        if let Ok(ds) = load_container(dir.path()) {
            prop_assert!(ds.validate().is_ok());
        }
    }
}
