use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dpromp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpromp")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = dpromp(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workspace { _dir: dir, root }
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.root.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn dataset(&self, family: &str, phase_mode: &str, image: bool) -> PathBuf {
        let cfg = self.write(
            &format!("gen_{family}_{phase_mode}.toml"),
            &format!(
                "schema_version = 1\nseed = 3\n[generate]\nfamily = \"{family}\"\ndemos = 12\npoints = 15\nphase_mode = \"{phase_mode}\"\nimage = {image}\n"
            ),
        );
        let out = self.path(&format!("{family}_{phase_mode}.csv"));
        ok(&["dataset-gen", "--config", s(&cfg), "--out", s(&out)]);
        out
    }

    fn train(&self, dataset: &Path, kind: &str, epochs: usize, out: &str) -> PathBuf {
        let cfg = self.write(
            &format!("{out}.toml"),
            &format!(
                "schema_version = 1\nseed = 1\nmodel_kind = \"{kind}\"\n[dataset]\npath = \"{}\"\n[training]\nepochs = {epochs}\nhidden = 8\nlatent_dim = 3\nlearning_rate = 0.003\n",
                s(dataset)
            ),
        );
        let dir = self.path(out);
        ok(&["train", "--config", s(&cfg), "--out", s(&dir)]);
        dir
    }
}

#[test]
fn train_writes_checkpoint_and_one_trace_row_per_epoch() {
    let ws = Workspace::new();
    let ds = ws.dataset("sine", "linear", false);
    let dir = ws.train(&ds, "deep_promp", 7, "run");
    let trace = fs::read_to_string(dir.join("loss_trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "epoch,loss");
    assert_eq!(lines.len(), 8);
    assert!(lines[7].starts_with("7,"));
    let ckpt = fs::read_to_string(dir.join("model.json")).unwrap();
    assert!(ckpt.contains("\"dpromp-checkpoint\""));
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let ws = Workspace::new();
    let ds = ws.dataset("sine", "linear", false);
    let a = ws.train(&ds, "deep_promp", 5, "a");
    let b = ws.train(&ds, "deep_promp", 5, "b");
    for f in ["loss_trace.csv", "model.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn invalid_config_exits_with_2_and_lists_keys() {
    let ws = Workspace::new();
    let cfg =
        ws.write("bad.toml", "schema_version = 1\nmodel_kind = \"deep_promp\"\nbogus = 1\n[training]\nepochs = -3\n");
    let out = dpromp(&["train", "--config", s(&cfg), "--out", s(&ws.path("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["bogus", "dataset", "training.epochs"] {
        assert!(err.contains(needle), "{needle} missing from {err}");
    }
}

#[test]
fn missing_files_exit_with_4() {
    let ws = Workspace::new();
    let out = dpromp(&["train", "--config", s(&ws.path("nope.toml")), "--out", s(&ws.path("o"))]);
    assert_eq!(out.status.code(), Some(4));
    let cfg = ws.write(
        "c.toml",
        &format!("schema_version = 1\nmodel_kind = \"promp\"\n[dataset]\npath = \"{}\"\n", s(&ws.path("absent.csv"))),
    );
    let out = dpromp(&["train", "--config", s(&cfg), "--out", s(&ws.path("o"))]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn eval_reports_all_modes_and_marks_unsupported_ones() {
    let ws = Workspace::new();
    let ds = ws.dataset("sine", "linear", true);
    let deep = ws.train(&ds, "deep_promp", 3, "deep");
    let promp = ws.train(&ds, "promp", 1, "promp");
    let report = ws.path("deep.csv");
    ok(&["eval", "--checkpoint", s(&deep.join("model.json")), "--dataset", s(&ds), "--out", s(&report)]);
    let text = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model,mode,mse,log10_mse,seed,epochs,demos,dataset_sha256");
    for (line, mode) in lines[1..].iter().zip(["via_point", "low_dim", "image_like", "low+image", "aggregate"]) {
        assert!(line.starts_with(&format!("deep_promp,{mode},")), "{line}");
        assert!(!line.contains("NA"));
        assert!(line.contains(",3,12,"));
    }
    let out = ok(&[
        "eval",
        "--checkpoint",
        s(&promp.join("model.json")),
        "--dataset",
        s(&ds),
        "--mode",
        "via_point,image_like",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("promp,image_like,NA,NA"));
    assert!(text.contains("promp,aggregate,NA,NA"));
    assert!(!text.contains("promp,via_point,NA"));
}

#[test]
fn eval_rejects_unknown_mode() {
    let ws = Workspace::new();
    let ds = ws.dataset("sine", "linear", false);
    let m = ws.train(&ds, "promp", 1, "p");
    let out = dpromp(&["eval", "--checkpoint", s(&m.join("model.json")), "--dataset", s(&ds), "--mode", "telepathy"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cnmp_checkpoint_can_be_trained_and_evaluated() {
    let ws = Workspace::new();
    let ds = ws.dataset("sine", "linear", false);
    let m = ws.train(&ds, "vae_cnmp_indep", 2, "c");
    let out = ok(&["eval", "--checkpoint", s(&m.join("model.json")), "--dataset", s(&ds), "--mode", "via_point"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("vae_cnmp_indep,via_point,"));
}

#[test]
fn motion_commands_write_csv_and_plots() {
    let ws = Workspace::new();
    let ds = ws.dataset("sine", "linear", false);
    let ckpt = ws.train(&ds, "deep_promp", 2, "m").join("model.json");
    let via = ws.write("via.csv", "t,y0\n0.0,0.5\n0.5,1.0\n");
    let via2 = ws.write("via2.csv", "t,y0\n1.0,-0.5\n");
    let c = s(&ckpt);

    ok(&[
        "generate",
        "--checkpoint",
        c,
        "--samples",
        "11",
        "--out",
        s(&ws.path("g.csv")),
        "--plot",
        s(&ws.path("g.svg")),
    ]);
    let g = fs::read_to_string(ws.path("g.csv")).unwrap();
    assert_eq!(g.lines().count(), 12);
    assert!(g.starts_with("t,y0\n0.0,"));
    assert!(fs::read_to_string(ws.path("g.svg")).unwrap().contains("<polyline"));

    ok(&[
        "condition",
        "--checkpoint",
        c,
        "--via",
        s(&via),
        "--context",
        "params=1,0,0",
        "--k",
        "4",
        "--out",
        s(&ws.path("c.csv")),
    ]);
    let cond = fs::read_to_string(ws.path("c.csv")).unwrap();
    assert!(cond.starts_with("t,mean_y0,var_y0\n"));

    ok(&[
        "blend",
        "--checkpoint",
        c,
        "--via1",
        s(&via),
        "--via2",
        s(&via2),
        "--omega",
        "ramp",
        "--out",
        s(&ws.path("b.csv")),
    ]);
    let b = fs::read_to_string(ws.path("b.csv")).unwrap();
    assert!(b.starts_with("t,omega,y0\n0.0,1.0,"));

    ok(&["refine", "--checkpoint", c, "--targets", s(&via), "--steps", "5", "--k", "4", "--out", s(&ws.path("r"))]);
    let trace = fs::read_to_string(ws.path("r/refine_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 7);
    let obj: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(obj.windows(2).all(|w| w[1] <= w[0]));
    assert!(ws.path("r/refined.csv").exists());
}

#[test]
fn motion_command_usage_errors_exit_with_2() {
    let ws = Workspace::new();
    let ds = ws.dataset("sine", "linear", false);
    let ckpt = ws.train(&ds, "deep_promp", 1, "m").join("model.json");
    let promp = ws.train(&ds, "promp", 1, "p").join("model.json");
    let via = ws.write("via.csv", "t,y0\n0.2,0.5\n");
    let o = ws.path("x.csv");
    let cases: Vec<Vec<&str>> = vec![
        vec!["condition", "--checkpoint", s(&ckpt), "--out", s(&o)],
        vec!["blend", "--checkpoint", s(&ckpt), "--via1", s(&via), "--via2", s(&via), "--omega", "1.5", "--out", s(&o)],
        vec!["generate", "--checkpoint", s(&promp), "--out", s(&o)],
        vec!["generate", "--checkpoint", s(&ckpt), "--periods", "2", "--out", s(&o)],
        vec!["refine", "--checkpoint", s(&ckpt), "--targets", s(&via), "--init", "nowhere", "--out", s(&o)],
    ];
    for args in cases {
        assert_eq!(dpromp(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn rhythmic_generate_repeats_rows_across_periods() {
    let ws = Workspace::new();
    let ds = ws.dataset("sine", "rhythmic", false);
    let ckpt = ws.train(&ds, "deep_promp", 2, "r").join("model.json");
    let out = ws.path("g.csv");
    ok(&["generate", "--checkpoint", s(&ckpt), "--samples", "21", "--periods", "2", "--out", s(&out)]);
    let rows: Vec<Vec<String>> =
        fs::read_to_string(&out).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 21);
    for i in 0..=10 {
        assert_eq!(rows[i][1..], rows[i + 10][1..], "row {i}");
    }
}

#[test]
fn dataset_gen_is_deterministic_and_seed_overridable() {
    let ws = Workspace::new();
    let cfg = ws.write("g.toml", "schema_version = 1\n[generate]\nfamily = \"bimodal\"\ndemos = 5\npoints = 9\n");
    let p = |n: &str| ws.path(n);
    ok(&["dataset-gen", "--config", s(&cfg), "--out", s(&p("a.csv"))]);
    ok(&["dataset-gen", "--config", s(&cfg), "--out", s(&p("b.csv"))]);
    ok(&["dataset-gen", "--config", s(&cfg), "--seed", "9", "--out", s(&p("c.csv"))]);
    let a = fs::read(p("a.csv")).unwrap();
    assert_eq!(a, fs::read(p("b.csv")).unwrap());
    assert_ne!(a, fs::read(p("c.csv")).unwrap());
}
