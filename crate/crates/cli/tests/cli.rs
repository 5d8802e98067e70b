use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use motionseg::lidar_io::{generate_synthetic_sequence, load_sequence, LabelRemap, SyntheticConfig};
use motionseg::network::NetworkConfig;
use motionseg::pipeline::{ModelConfig, MosModel};
use motionseg::point_refine::PointHeadConfig;
use motionseg::projection::{build_range_image, ProjectionConfig};
use motionseg::residual::{build_residual_stack, decode_stack};
use tempfile::TempDir;

const EXIT_CONFIG: i32 = 2;
const EXIT_IO: i32 = 3;
const EXIT_NUMERIC: i32 = 4;

fn motionseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motionseg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = motionseg(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn model_config() -> ModelConfig {
    ModelConfig {
        projection: ProjectionConfig::with_size(16, 64),
        network: NetworkConfig::tiny(16, 64),
        point_head: PointHeadConfig {
            voxel_size: 0.5,
            hidden: 8,
            ..PointHeadConfig::lite()
        },
    }
}

/// A dataset with a street sequence `00` for training, `01` for validation,
/// a mover-free sequence `02`, and the run configuration in `toy.toml`.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth", "--out", "data", "--seq", "00", "--frames", "8", "--rows", "16", "--cols", "64",
        ],
    );
    ok(
        d,
        &[
            "synth", "--out", "data", "--seq", "01", "--frames", "5", "--rows", "16", "--cols", "64",
        ],
    );
    let mut empty = SyntheticConfig::street(4, 16, 64);
    empty.movers.clear();
    fs::write(d.join("empty.toml"), empty.to_toml()).unwrap();
    ok(d, &["synth", "--out", "data", "--seq", "02", "--scene", "empty.toml"]);

    let mut run = toml::Table::new();
    run.insert(
        "data".into(),
        toml::toml! {
            root = "data"
            train = ["00"]
            val = ["01"]
            test = ["01"]
        }
        .into(),
    );
    run.insert("model".into(), toml::Value::try_from(model_config()).unwrap());
    run.insert(
        "train".into(),
        toml::toml! {
            stage1_epochs = 2
            stage2_epochs = 2
        }
        .into(),
    );
    fs::write(d.join("toy.toml"), toml::to_string(&run).unwrap()).unwrap();
    dir
}

/// Path → contents for every file below `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in fs::read_dir(&p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn u32_at(b: &[u8], o: usize) -> usize {
    u32::from_le_bytes(b[o..o + 4].try_into().unwrap()) as usize
}

#[test]
fn project_writes_one_image_and_index_map_per_frame() {
    let dir = workspace();
    let d = dir.path();
    ok(
        d,
        &[
            "project",
            "--config",
            "toy.toml",
            "--seq",
            "00",
            "--out",
            "out",
            "--preview",
            "--residuals",
        ],
    );
    let seq = load_sequence(d.join("data"), "00", &LabelRemap::default()).unwrap();
    let proj = model_config().projection;
    let (h, w) = (proj.height, proj.width);
    for l in 0..seq.len() {
        let frame = seq.frame(l);
        let stem = format!("{:06}", frame.cloud.frame_id);
        let expected = build_range_image(&frame.cloud, &proj);

        let range = fs::read(d.join(format!("out/00/range/{stem}.bin"))).unwrap();
        assert_eq!(&range[..8], b"MOSRIMG1");
        assert_eq!((u32_at(&range, 8), u32_at(&range, 12), u32_at(&range, 16)), (h, w, 5));
        let values: Vec<f32> = range[20..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(values, expected.channels);

        let index = fs::read(d.join(format!("out/00/index/{stem}.bin"))).unwrap();
        assert_eq!(&index[..8], b"MOSIDX01");
        assert_eq!(index.len(), 20 + 4 * h * w);
        for (pix, c) in index[20..].chunks_exact(4).enumerate() {
            let v = i32::from_le_bytes(c.try_into().unwrap());
            assert_eq!(v, expected.index_map[pix].map_or(-1, |i| i as i32));
        }

        let png = fs::read(d.join(format!("out/00/preview/{stem}.png"))).unwrap();
        assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
        assert!(d.join(format!("out/00/preview/{stem}_res.png")).exists());

        let res = decode_stack(&fs::read(d.join(format!("out/00/residuals/{stem}.res"))).unwrap()).unwrap();
        let n_res = model_config().network.n_res;
        assert_eq!(res, build_residual_stack(&seq, l, n_res, &proj).unwrap());
    }
    let names: Vec<_> = fs::read_dir(d.join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names, ["00"]);
}

#[test]
fn project_without_preview_writes_no_pngs() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["project", "--config", "toy.toml", "--seq", "01", "--out", "out"]);
    assert!(!d.join("out/01/preview").exists());
    assert_eq!(fs::read_dir(d.join("out/01/range")).unwrap().count(), 5);
}

#[test]
fn missing_sequence_leaves_no_partial_output() {
    let dir = workspace();
    let d = dir.path();
    let out = motionseg(d, &["project", "--config", "toy.toml", "--seq", "42", "--out", "out"]);
    assert_eq!(code(&out), EXIT_IO);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    let leftovers: Vec<_> = fs::read_dir(d.join("out"))
        .map(|r| r.map(|e| e.unwrap().file_name()).collect())
        .unwrap_or_default();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn train_all_writes_both_checkpoints_and_a_json_log() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["train", "--config", "toy.toml", "--out", "run"]);
    assert_eq!(MosModel::load(&d.join("run/stage1.ckpt")).unwrap().stage, 1);
    assert_eq!(MosModel::load(&d.join("run/stage2.ckpt")).unwrap().stage, 2);
    let log = fs::read_to_string(d.join("run/train.jsonl")).unwrap();
    let stages: Vec<u64> = log
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["stage"]
                .as_u64()
                .unwrap()
        })
        .collect();
    assert_eq!(stages, [1, 1, 2, 2]);
}

#[test]
fn stage_two_without_stage_one_is_a_config_error() {
    let dir = workspace();
    let d = dir.path();
    let out = motionseg(d, &["train", "--config", "toy.toml", "--out", "run", "--stage", "2"]);
    assert_eq!(code(&out), EXIT_CONFIG);
    assert!(!d.join("run").exists());
}

#[test]
fn stage_two_accepts_an_explicit_checkpoint() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["train", "--config", "toy.toml", "--out", "a", "--stage", "1"]);
    assert!(!d.join("a/stage2.ckpt").exists());
    ok(
        d,
        &[
            "train",
            "--config",
            "toy.toml",
            "--out",
            "b",
            "--stage",
            "2",
            "--checkpoint",
            "a/stage1.ckpt",
        ],
    );
    assert!(d.join("b/stage2.ckpt").exists());
}

#[test]
fn equal_seeds_give_identical_logs_and_checkpoints() {
    let dir = workspace();
    let d = dir.path();
    for run in ["a", "b", "c"] {
        let seed = if run == "c" { "8" } else { "7" };
        ok(d, &["train", "--config", "toy.toml", "--out", run, "--seed", seed]);
    }
    let read = |p: &str| fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/train.jsonl"), read("b/train.jsonl"));
    assert_eq!(read("a/stage2.ckpt"), read("b/stage2.ckpt"));
    assert_ne!(read("a/train.jsonl"), read("c/train.jsonl"));
}

#[test]
fn resume_skips_completed_stages() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["train", "--config", "toy.toml", "--out", "run"]);
    let log = fs::read_to_string(d.join("run/train.jsonl")).unwrap();
    let out = ok(d, &["train", "--config", "toy.toml", "--out", "run", "--resume"]);
    assert!(stdout(&out).contains("nothing to do"));
    assert_eq!(fs::read_to_string(d.join("run/train.jsonl")).unwrap(), log);

    fs::remove_file(d.join("run/stage2.ckpt")).unwrap();
    ok(d, &["train", "--config", "toy.toml", "--out", "run", "--resume"]);
    let resumed = fs::read_to_string(d.join("run/train.jsonl")).unwrap();
    assert!(resumed.starts_with(&log));
    let stage2_lines = log.lines().filter(|l| l.contains("\"stage\":2")).collect::<Vec<_>>();
    assert!(resumed.ends_with(&format!("{}\n", stage2_lines.join("\n"))));
    assert!(d.join("run/stage2.ckpt").exists());
}

#[test]
fn commands_leave_their_inputs_untouched() {
    let dir = workspace();
    let d = dir.path();
    let data = snapshot(&d.join("data"));
    let config = fs::read(d.join("toy.toml")).unwrap();
    ok(
        d,
        &[
            "project",
            "--config",
            "toy.toml",
            "--seq",
            "00",
            "--out",
            "out",
            "--preview",
            "--residuals",
        ],
    );
    ok(
        d,
        &["train", "--config", "toy.toml", "--out", "run", "--cache", "cache"],
    );
    let ckpt = fs::read(d.join("run/stage2.ckpt")).unwrap();
    ok(
        d,
        &[
            "eval",
            "--config",
            "toy.toml",
            "--checkpoint",
            "run/stage2.ckpt",
            "--head",
            "image,point",
        ],
    );
    ok(
        d,
        &[
            "bench",
            "--checkpoint",
            "run/stage2.ckpt",
            "--points",
            "200",
            "--iters",
            "1",
            "--warmup",
            "0",
        ],
    );
    assert_eq!(snapshot(&d.join("data")), data);
    assert_eq!(fs::read(d.join("toy.toml")).unwrap(), config);
    assert_eq!(fs::read(d.join("run/stage2.ckpt")).unwrap(), ckpt);
    assert!(d.join("cache/00").is_dir());
}

#[test]
fn cached_residuals_do_not_change_training() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["train", "--config", "toy.toml", "--out", "a"]);
    ok(d, &["train", "--config", "toy.toml", "--out", "b", "--cache", "cache"]);
    ok(d, &["train", "--config", "toy.toml", "--out", "c", "--cache", "cache"]);
    let read = |p: &str| fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/train.jsonl"), read("b/train.jsonl"));
    assert_eq!(read("a/train.jsonl"), read("c/train.jsonl"));
}

#[test]
fn eval_reports_the_ablation_modes_side_by_side() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["train", "--config", "toy.toml", "--out", "run"]);
    let out = ok(
        d,
        &[
            "eval",
            "--config",
            "toy.toml",
            "--checkpoint",
            "run/stage2.ckpt",
            "--seq",
            "00,01",
            "--head",
            "image",
            "--head",
            "point",
            "--post",
            "none,knn",
            "--csv",
            "eval.csv",
            "--report",
            "eval.txt",
            "--preview",
            "viz",
        ],
    );
    let text = stdout(&out);
    assert_eq!(text, fs::read_to_string(d.join("eval.txt")).unwrap());
    let header = text.lines().nth(1).unwrap();
    assert_eq!(
        header.split_whitespace().collect::<Vec<_>>(),
        ["mode", "00", "01", "all"]
    );
    let modes: Vec<&str> = text
        .lines()
        .skip(3)
        .filter_map(|l| l.split_whitespace().next())
        .collect();
    assert_eq!(&modes[..3], ["image", "image+knn", "point"]);

    let csv = fs::read_to_string(d.join("eval.csv")).unwrap();
    assert!(csv.starts_with("mode,sequence,frame,tp,fp,fn,tn,iou,note\n"));
    for mode in ["image", "image+knn", "point"] {
        let rows: Vec<&str> = csv.lines().filter(|l| l.starts_with(&format!("{mode},"))).collect();
        assert_eq!(rows.len(), 8 + 5 + 2 + 1, "{mode}");
        assert!(rows.iter().any(|r| r.starts_with(&format!("{mode},all,all,"))));
        assert_eq!(fs::read_dir(d.join("viz").join(mode)).unwrap().count(), 13);
    }
}

#[test]
fn point_head_with_knn_alone_is_rejected() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["train", "--config", "toy.toml", "--out", "run"]);
    let out = motionseg(
        d,
        &[
            "eval",
            "--config",
            "toy.toml",
            "--checkpoint",
            "run/stage2.ckpt",
            "--head",
            "point",
            "--post",
            "knn",
        ],
    );
    assert_eq!(code(&out), EXIT_CONFIG);
}

/// A checkpoint whose both heads answer `Static` everywhere.
fn all_static_checkpoint(path: &Path) {
    let mut model = MosModel::new(model_config(), 0).unwrap();
    for p in model.store.iter_mut() {
        if p.name == "net2d.head.w" || p.name == "point_head.fuse.w" {
            p.value.data_mut().fill(0.0);
        }
        if p.name == "net2d.head.b" || p.name == "point_head.fuse.b" {
            p.value.data_mut().copy_from_slice(&[10.0, -10.0]);
        }
    }
    model.stage = 2;
    model.save(path).unwrap();
}

#[test]
fn mover_free_frames_score_one_with_an_annotation() {
    let dir = workspace();
    let d = dir.path();
    all_static_checkpoint(&d.join("static.ckpt"));
    let out = ok(
        d,
        &[
            "eval",
            "--config",
            "toy.toml",
            "--checkpoint",
            "static.ckpt",
            "--seq",
            "02",
            "--head",
            "image,point",
            "--csv",
            "e.csv",
        ],
    );
    let text = stdout(&out);
    assert!(text.contains("100.0*"), "{text}");
    assert!(text.contains("no-movers"), "{text}");
    let csv = fs::read_to_string(d.join("e.csv")).unwrap();
    for line in csv.lines().skip(1) {
        assert!(line.ends_with(",1.000000,no-movers"), "{line}");
    }
}

#[test]
fn missing_labels_are_an_io_error() {
    let dir = workspace();
    let d = dir.path();
    all_static_checkpoint(&d.join("static.ckpt"));
    fs::remove_dir_all(d.join("data/sequences/01/labels")).unwrap();
    let out = motionseg(
        d,
        &[
            "eval",
            "--config",
            "toy.toml",
            "--checkpoint",
            "static.ckpt",
            "--seq",
            "01",
        ],
    );
    assert_eq!(code(&out), EXIT_IO);
    assert!(String::from_utf8_lossy(&out.stderr).contains("labels"));
}

#[test]
fn bench_reports_every_stage() {
    let dir = workspace();
    let d = dir.path();
    ok(
        d,
        &[
            "bench", "--config", "toy.toml", "--points", "3000", "--iters", "1", "--warmup", "0", "--csv", "b.csv",
        ],
    );
    let csv = fs::read_to_string(d.join("b.csv")).unwrap();
    let stages: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        stages,
        ["projection", "residuals", "forward v1", "forward v2", "forward v2-Lite"]
    );
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0));
        assert_eq!(v[1], v[2], "a single iteration has min = max");
    }
}

#[test]
fn bench_survives_an_empty_frame() {
    let dir = workspace();
    let d = dir.path();
    let out = ok(
        d,
        &[
            "bench", "--config", "toy.toml", "--points", "0", "--iters", "1", "--warmup", "0",
        ],
    );
    assert!(stdout(&out).contains("forward v2-Lite"));
}

#[test]
fn bench_rejects_zero_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let out = motionseg(dir.path(), &["bench", "--points", "10", "--iters", "0"]);
    assert_eq!(code(&out), EXIT_CONFIG);
}

#[test]
fn exit_codes_separate_config_io_and_numeric_faults() {
    let dir = workspace();
    let d = dir.path();
    assert_eq!(code(&motionseg(d, &["frobnicate"])), EXIT_CONFIG);
    assert_eq!(
        code(&motionseg(d, &["train", "--out", "r", "--stage", "3"])),
        EXIT_CONFIG
    );

    fs::write(d.join("typo.toml"), "[train]\nstage1_epoch = 3\n").unwrap();
    assert_eq!(
        code(&motionseg(d, &["train", "--config", "typo.toml", "--out", "r"])),
        EXIT_CONFIG
    );
    fs::write(d.join("neg.toml"), "[train.sgd]\nlr = -1.0\n").unwrap();
    assert_eq!(
        code(&motionseg(d, &["train", "--config", "neg.toml", "--out", "r"])),
        EXIT_CONFIG
    );

    assert_eq!(
        code(&motionseg(d, &["train", "--config", "nope.toml", "--out", "r"])),
        EXIT_IO
    );
    fs::write(d.join("junk.ckpt"), b"not a checkpoint").unwrap();
    let out = motionseg(d, &["eval", "--config", "toy.toml", "--checkpoint", "junk.ckpt"]);
    assert_eq!(code(&out), EXIT_IO);

    let toy = fs::read_to_string(d.join("toy.toml")).unwrap();
    fs::write(
        d.join("huge.toml"),
        toy.replace("stage1_epochs = 2", "stage1_epochs = 3\nsgd = { lr = 1e30 }"),
    )
    .unwrap();
    let out = motionseg(d, &["train", "--config", "huge.toml", "--out", "r", "--stage", "1"]);
    assert_eq!(code(&out), EXIT_NUMERIC, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_refuses_to_overwrite_without_force() {
    let dir = workspace();
    let d = dir.path();
    let before = snapshot(&d.join("data/sequences/00"));
    let out = motionseg(d, &["synth", "--out", "data", "--seq", "00", "--frames", "3"]);
    assert_eq!(code(&out), EXIT_CONFIG);
    assert_eq!(snapshot(&d.join("data/sequences/00")), before);
    ok(
        d,
        &[
            "synth", "--out", "data", "--seq", "00", "--frames", "3", "--rows", "16", "--cols", "64", "--force",
        ],
    );
    assert_eq!(fs::read_dir(d.join("data/sequences/00/velodyne")).unwrap().count(), 3);
}

#[test]
fn synth_matches_the_library_generator() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth", "--out", "data", "--seq", "05", "--frames", "3", "--rows", "8", "--cols", "32",
        ],
    );
    let mut cfg = SyntheticConfig::street(3, 8, 32);
    cfg.sequence_id = "05".into();
    let expected = generate_synthetic_sequence(&cfg).unwrap();
    let loaded = load_sequence(d.join("data"), "05", &LabelRemap::default()).unwrap();
    for (a, b) in expected.frames().iter().zip(loaded.frames()) {
        assert_eq!(a.cloud, b.cloud);
        assert_eq!(a.labels, b.labels);
        assert!((a.pose.translation - b.pose.translation).norm() < 1e-9);
    }
}
