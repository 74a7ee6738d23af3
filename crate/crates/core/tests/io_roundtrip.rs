use std::fs;

use proptest::prelude::*;
use tempfile::tempdir;

use defence_core::io::{
    load_frame, load_mask_sequence, load_scene_spec, load_sequence, load_soft_mask, read_flow,
    save_frame, save_mask_sequence, save_sequence, save_soft_mask, sequence_path, write_flow,
    FRAME_PREFIX,
};
use defence_core::synth::{generate_scene, SceneSpec};
use defence_core::{Error, FenceMask, FlowField, Frame, SoftMask};

#[test]
fn sequences_round_trip_in_index_order() {
    let dir = tempdir().unwrap();
    let spec = SceneSpec {
        width: 20,
        height: 14,
        frame_count: 12,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec).unwrap();
    save_sequence(&scene.fenced_frames, dir.path().join("frames")).unwrap();
    save_mask_sequence(&scene.masks, dir.path().join("masks")).unwrap();

    let frames = load_sequence(dir.path().join("frames")).unwrap();
    assert_eq!(frames.len(), 12);
    for (a, b) in frames.iter().zip(&scene.fenced_frames) {
        let worst = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-12);
    }
    assert_eq!(
        load_mask_sequence(dir.path().join("masks")).unwrap(),
        scene.masks
    );
}

#[test]
fn gaps_and_empty_directories_are_reported() {
    let dir = tempdir().unwrap();
    assert!(matches!(
        load_sequence(dir.path()),
        Err(Error::MissingFrames { .. })
    ));

    let frame = Frame::filled(4, 3, [0.2, 0.4, 0.6]).unwrap();
    for i in [0, 1, 3] {
        save_frame(&frame, sequence_path(dir.path(), FRAME_PREFIX, i)).unwrap();
    }
    // Unrelated files are ignored.
    fs::write(dir.path().join("notes.txt"), "x").unwrap();
    match load_sequence(dir.path()) {
        Err(Error::NonContiguousIndices { missing, .. }) => assert_eq!(missing, 2),
        other => panic!("expected a gap error, got {other:?}"),
    }
}

#[test]
fn soft_masks_keep_eight_bit_precision() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("soft.png");
    let scores: Vec<f64> = (0..256).map(|i| i as f64 / 255.0).collect();
    let soft = SoftMask::new(16, 16, scores).unwrap();
    save_soft_mask(&soft, &path).unwrap();
    let back = load_soft_mask(&path).unwrap();
    for (a, b) in soft.as_slice().iter().zip(back.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn flow_files_round_trip_and_reject_damage() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("f.flo");
    let u: Vec<f64> = (0..30).map(|i| i as f64 * 0.25 - 3.0).collect();
    let v: Vec<f64> = (0..30).map(|i| (i % 7) as f64 * -0.5).collect();
    let flow = FlowField::new(6, 5, u, v).unwrap();
    write_flow(&path, &flow).unwrap();
    assert_eq!(read_flow(&path).unwrap(), flow);

    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(read_flow(&path), Err(Error::TruncatedFile { .. })));

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    fs::write(&path, &bad).unwrap();
    assert!(matches!(read_flow(&path), Err(Error::BadMagic(_))));
}

#[test]
fn scene_files_report_the_offending_line() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("bad.scene");
    fs::write(&path, "width = 32\nheight = 24\nfence.colour = 1, 1, 1\n").unwrap();
    match load_scene_spec(&path) {
        Err(Error::Config { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn decode_errors_name_the_file() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("frame.png");
    fs::write(&path, b"not a png").unwrap();
    match load_frame(&path) {
        Err(Error::Decode { path: p, .. }) => assert_eq!(p, path),
        other => panic!("expected a decode error, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn png_quantisation_is_within_half_a_level(values in prop::collection::vec(0.0f64..=1.0, 3 * 6 * 5)) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.png");
        let frame = Frame::new(6, 5, values).unwrap();
        save_frame(&frame, &path).unwrap();
        let back = load_frame(&path).unwrap();
        for (a, b) in frame.as_slice().iter().zip(back.as_slice()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        // A second pass is lossless.
        save_frame(&back, &path).unwrap();
        prop_assert_eq!(load_frame(&path).unwrap(), back);
    }

    #[test]
    fn binary_masks_round_trip_exactly(bits in prop::collection::vec(any::<bool>(), 7 * 4)) {
        let dir = tempdir().unwrap();
        let mask = FenceMask::new(7, 4, bits).unwrap();
        save_mask_sequence(std::slice::from_ref(&mask), dir.path()).unwrap();
        prop_assert_eq!(&load_mask_sequence(dir.path()).unwrap()[0], &mask);
    }
}
