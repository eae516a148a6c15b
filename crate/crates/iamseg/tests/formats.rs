use std::path::Path;

use iamseg::checkpoint::{decode_tensor, encode_tensor, load_checkpoint, save_checkpoint};
use iamseg::dataset::{build_coco, generate_scenes, load_coco, load_samples, validate_coco};
use iamseg::json::{parse_str, to_canonical_string};
use iamseg::pnm;
use iamseg::Error;
use iamseg_core::data::{AnnotateOptions, CocoDataset, GeneratorConfig};
use iamseg_core::model::{Model, ModelConfig};
use iamseg_core::Tensor;
use proptest::prelude::*;

#[test]
fn ppm_header_and_bytes() {
    let bytes = pnm::encode_ppm(2, 1, &[1, 2, 3, 4, 5, 6]);
    assert_eq!(bytes, b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06");
    let r = pnm::decode(Path::new("x.ppm"), &bytes).unwrap();
    assert_eq!((r.width, r.height, r.channels), (2, 1, 3));
    assert_eq!(r.samples, vec![1, 2, 3, 4, 5, 6]);
}

#[test]
fn pgm16_is_big_endian() {
    let bytes = pnm::encode_pgm16(2, 1, &[0x0102, 0xfffe]);
    assert!(bytes.ends_with(&[0x01, 0x02, 0xff, 0xfe]));
    let r = pnm::decode(Path::new("x.pgm"), &bytes).unwrap();
    assert_eq!(r.samples, vec![0x0102, 0xfffe]);
    assert_eq!(r.max_value, 65535);
}

#[test]
fn pnm_header_comments_are_skipped() {
    let r = pnm::decode(Path::new("c.pgm"), b"P5\n# made by hand\n1 1\n255\n\x07").unwrap();
    assert_eq!(r.samples, vec![7]);
}

#[test]
fn truncated_raster_is_rejected() {
    let err = pnm::decode(Path::new("t.ppm"), b"P6\n2 2\n255\n\x00\x00").unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
}

proptest! {
    #[test]
    fn tensor_files_round_trip(shape in prop::collection::vec(1usize..4, 0..4), seed in any::<u64>()) {
        let mut s = seed;
        let t = Tensor::from_fn(&shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            f64::from_bits(s >> 2) - 1.0
        });
        let back = decode_tensor(Path::new("t"), &encode_tensor(&t)).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }
}

#[test]
fn tensor_file_layout() {
    let t = Tensor::from_vec(&[1, 2], vec![1.0, -2.0]).unwrap();
    let b = encode_tensor(&t);
    assert_eq!(&b[..5], b"TNSR1");
    assert_eq!(&b[5..9], &2u32.to_le_bytes());
    assert_eq!(&b[9..13], &1u32.to_le_bytes());
    assert_eq!(&b[13..17], &2u32.to_le_bytes());
    assert_eq!(&b[17..25], &1.0f64.to_le_bytes());
    assert_eq!(b.len(), 33);
    assert!(decode_tensor(Path::new("t"), &b[..32]).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        seed: 5,
        ..ModelConfig::default()
    };
    let model = Model::init(&cfg).unwrap();
    save_checkpoint(dir.path(), &model).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back.cfg, model.cfg);
    for ((na, a), (nb, b)) in model.params.iter().zip(back.params.iter()) {
        assert_eq!(na, nb);
        assert_eq!(a.shape(), b.shape());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn checkpoint_with_a_foreign_architecture_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::init(&ModelConfig::default()).unwrap();
    save_checkpoint(dir.path(), &model).unwrap();
    let manifest = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, text.replace("\"mask_dim\": 16", "\"mask_dim\": 8")).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}

#[test]
fn canonical_json_sorts_keys_and_ends_with_newline() {
    let v: serde_json::Value = serde_json::from_str(r#"{"b": 1, "a": {"d": 0.1, "c": [1.5e-7, 2]}}"#).unwrap();
    let s = to_canonical_string(&v).unwrap();
    assert_eq!(s, "{\n  \"a\": {\n    \"c\": [\n      1.5e-7,\n      2\n    ],\n    \"d\": 0.1\n  },\n  \"b\": 1\n}\n");
}

#[test]
fn parse_errors_report_the_byte_offset() {
    let text = "{\n  \"images\": [],\n  \"annotations\": [,]\n}";
    let err = parse_str::<CocoDataset>(Path::new("bad.json"), text).unwrap_err();
    match err {
        Error::Json { offset, .. } => assert_eq!(&text[offset..offset + 1], ","),
        e => panic!("unexpected {e}"),
    }
}

fn small_dataset(dir: &Path, seed: u64) -> CocoDataset {
    let samples = generate_scenes(&GeneratorConfig::ambiguous(), seed, 6).unwrap();
    build_coco(&samples, dir, &AnnotateOptions::default()).unwrap()
}

#[test]
fn built_datasets_validate_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 4);
    assert!(validate_coco(&dir.path().join("annotations.json")).unwrap().is_empty());
    assert_eq!(load_coco(&dir.path().join("annotations.json")).unwrap(), ds);
    let (_, samples) = load_samples(dir.path()).unwrap();
    let original = generate_scenes(&GeneratorConfig::ambiguous(), 4, 6).unwrap();
    assert_eq!(samples, original);
}

#[test]
fn building_twice_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_dataset(a.path(), 9);
    small_dataset(b.path(), 9);
    for f in ["annotations.json", "rgb/000001.ppm", "depth/000003.pgm"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn mutated_area_is_reported_with_its_id() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = small_dataset(dir.path(), 2);
    ds.annotations[1].area += 10.0;
    let id = ds.annotations[1].id;
    let path = dir.path().join("mutated.json");
    iamseg::json::write_canonical(&path, &ds).unwrap();
    let v = validate_coco(&path).unwrap();
    assert_eq!(v.len(), 1);
    assert!(v[0].starts_with(&format!("annotation {id}:")), "{v:?}");
}
