use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

use defence_core::io::{load_mask_sequence, save_mask_sequence};
use defence_core::refine::morph_close;
use defence_core::FenceMask;

const SCENE: &str = "\
width = 48
height = 32
frame_count = 5
background.kind = smooth_noise
background.seed = 4
background_motion = 2, 0
fence_motion = 0, 0
fence.pattern = diamond
fence.wire_width = 2
fence.cell_size = 14
rng_seed = 1
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defence"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth_scene(dir: &Path, text: &str) -> Output {
    let spec = dir.join("scene.txt");
    fs::write(&spec, text).unwrap();
    run(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.join("scene").to_str().unwrap(),
    ])
}

fn record(out: &str, name: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{name}\t")))
        .unwrap_or_else(|| panic!("no {name} record in {out:?}"))
        .to_string()
}

#[test]
fn missing_flag_is_a_usage_error() {
    let dir = tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = run(&["refine-masks", "--frames", d, "--out", d]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("--soft-masks"));
    assert_eq!(run(&["defence", "--jobs", "0"]).status.code(), Some(2));
}

#[test]
fn synth_then_eval_against_itself_is_perfect() {
    let dir = tempdir().unwrap();
    let o = synth_scene(dir.path(), SCENE);
    assert!(o.status.success(), "{}", stderr(&o));
    let scene = dir.path().join("scene");
    for sub in ["frames", "clean", "masks"] {
        assert_eq!(fs::read_dir(scene.join(sub)).unwrap().count(), 5);
    }
    let masks = scene.join("masks");
    let o = run(&[
        "eval",
        "--result",
        scene.join("clean").to_str().unwrap(),
        "--truth",
        scene.join("clean").to_str().unwrap(),
        "--masks",
        masks.to_str().unwrap(),
        "--pred-masks",
        masks.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(record(&out, "psnr"), "inf");
    assert_eq!(record(&out, "psnr_fence"), "inf");
    for name in ["precision", "recall", "f_measure"] {
        assert_eq!(record(&out, name), "1.000000");
    }
}

#[test]
fn thick_wires_are_rejected_before_writing() {
    let dir = tempdir().unwrap();
    let bad = SCENE.replace("fence.cell_size = 14", "fence.cell_size = 4");
    let o = synth_scene(dir.path(), &bad);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cell"), "{}", stderr(&o));
    assert!(!dir.path().join("scene").exists());
}

#[test]
fn defence_improves_the_fence_region_and_is_deterministic() {
    let dir = tempdir().unwrap();
    assert!(synth_scene(dir.path(), SCENE).status.success());
    let scene = dir.path().join("scene");
    let s = |p: &str| scene.join(p).to_str().unwrap().to_string();
    let defence = |out: &str, jobs: &str| {
        run(&[
            "defence",
            "--frames",
            &s("frames"),
            "--soft-masks",
            &s("masks"),
            "--out",
            &s(out),
            "--n",
            "4",
            "--m",
            "4",
            "--lambda-flow",
            "0.02",
            "--lambda-fusion",
            "0.0005",
            "--jobs",
            jobs,
        ])
    };
    let o = defence("out_a", "1");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("frame 2:"));
    assert!(defence("out_b", "3").status.success());
    for i in 0..5 {
        let name = format!("frame_{i:05}.png");
        assert_eq!(
            fs::read(scene.join("out_a").join(&name)).unwrap(),
            fs::read(scene.join("out_b").join(&name)).unwrap()
        );
    }

    let eval = |result: &str| {
        let o = run(&[
            "eval",
            "--result",
            &s(result),
            "--truth",
            &s("clean"),
            "--masks",
            &s("masks"),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        record(&stdout(&o), "psnr_fence").parse::<f64>().unwrap()
    };
    let before = eval("frames");
    let after = eval("out_a");
    assert!(after > before + 10.0, "{before} -> {after}");
}

#[test]
fn single_frame_has_no_neighbours() {
    let dir = tempdir().unwrap();
    let one = SCENE.replace("frame_count = 5", "frame_count = 1");
    assert!(synth_scene(dir.path(), &one).status.success());
    let scene = dir.path().join("scene");
    let s = |p: &str| scene.join(p).to_str().unwrap().to_string();
    let o = run(&[
        "defence",
        "--frames",
        &s("frames"),
        "--soft-masks",
        &s("masks"),
        "--out",
        &s("out"),
        "--n",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("neighbo"), "{}", stderr(&o));
    assert!(!scene.join("out").exists());
}

#[test]
fn empty_masks_pass_frames_through() {
    let dir = tempdir().unwrap();
    assert!(synth_scene(dir.path(), SCENE).status.success());
    let scene = dir.path().join("scene");
    let zeros = vec![FenceMask::empty(48, 32); 5];
    save_mask_sequence(&zeros, scene.join("zeros")).unwrap();
    let s = |p: &str| scene.join(p).to_str().unwrap().to_string();
    let o = run(&[
        "defence",
        "--frames",
        &s("frames"),
        "--soft-masks",
        &s("zeros"),
        "--out",
        &s("out"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for i in 0..5 {
        let name = format!("frame_{i:05}.png");
        assert_eq!(
            fs::read(scene.join("frames").join(&name)).unwrap(),
            fs::read(scene.join("out").join(&name)).unwrap()
        );
    }
}

#[test]
fn refine_without_neighbours_closes_each_mask() {
    let dir = tempdir().unwrap();
    assert!(synth_scene(dir.path(), SCENE).status.success());
    let scene = dir.path().join("scene");
    let s = |p: &str| scene.join(p).to_str().unwrap().to_string();
    let o = run(&[
        "refine-masks",
        "--frames",
        &s("frames"),
        "--soft-masks",
        &s("masks"),
        "--out",
        &s("refined"),
        "--m",
        "0",
        "--mu",
        "0.5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let truth = load_mask_sequence(scene.join("masks")).unwrap();
    let refined = load_mask_sequence(scene.join("refined")).unwrap();
    assert_eq!(refined.len(), truth.len());
    for (r, t) in refined.iter().zip(&truth) {
        assert_eq!(r, &morph_close(t, 1, 1));
    }
}

#[test]
fn bad_mu_fails_before_reading() {
    let dir = tempdir().unwrap();
    let d = dir.path().join("nowhere");
    let d = d.to_str().unwrap();
    let o = run(&[
        "refine-masks",
        "--frames",
        d,
        "--soft-masks",
        d,
        "--out",
        d,
        "--mu",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mu"), "{}", stderr(&o));
}
