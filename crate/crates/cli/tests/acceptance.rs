//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Positional arguments filter criteria by substring,
//! e.g. `cargo test -p taugru-cli --test acceptance -- prop1 determinism`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::time::Instant;

use taugru::verify::{self, BatteryReport};

const BIN: &str = env!("CARGO_BIN_EXE_taugru");

fn presets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    fn error(detail: impl Into<String>) -> Self {
        Self::new(false, detail)
    }
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("TAU_RNN_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn taugru")
}

fn stderr_tail(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr);
    text.lines().last().unwrap_or("").to_string()
}

/// Rows of a CSV with a header line, keyed by column name.
fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty csv")?.split(',').collect();
    Ok(lines
        .map(|l| {
            header
                .iter()
                .zip(l.split(','))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect()
        })
        .collect())
}

fn num(row: &BTreeMap<String, String>, key: &str) -> Result<f64, String> {
    row.get(key)
        .ok_or_else(|| format!("missing column {key}"))?
        .parse()
        .map_err(|e| format!("column {key}: {e}"))
}

fn train_preset(cfg: &str, dir: &Path) -> Result<(f64, Vec<BTreeMap<String, String>>), String> {
    let path = presets().join(cfg);
    let out = run(&["train", path.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()], &[]);
    if !out.status.success() {
        return Err(format!("train exited {:?}: {}", out.status.code(), stderr_tail(&out)));
    }
    let stem = cfg.trim_end_matches(".cfg");
    let results = read_csv(&dir.join(format!("{stem}.results.csv")))?;
    let metric = num(results.first().ok_or("no result row")?, "test_metric")?;
    Ok((metric, read_csv(&dir.join(format!("{stem}.epochs.csv")))?))
}

fn dde_preset(cfg: &str, limit: f64, dir: &Path) -> Outcome {
    match train_preset(cfg, dir) {
        Ok((mse, epochs)) => Outcome::new(
            mse <= limit && epochs.len() == 400,
            format!("test MSE {mse:.4e} (limit {limit:.1e}), {} epoch rows", epochs.len()),
        ),
        Err(e) => Outcome::error(e),
    }
}

fn adding(dir: &Path) -> Outcome {
    let limit = 0.05;
    match train_preset("adding.cfg", dir) {
        Ok((final_mse, epochs)) => {
            let first = epochs.iter().find_map(|r| {
                let rmse = num(r, "test_rmse").ok()?;
                (rmse * rmse < limit).then(|| (num(r, "epoch").unwrap_or(f64::NAN), rmse * rmse))
            });
            match first {
                Some((epoch, mse)) if epoch <= 100.0 => Outcome::new(
                    true,
                    format!("test MSE {mse:.4e} < {limit} at epoch {epoch}, final {final_mse:.4e} (baseline 0.1667)"),
                ),
                _ => Outcome::new(
                    false,
                    format!("test MSE never below {limit} in {} epochs, final {final_mse:.4e}", epochs.len()),
                ),
            }
        }
        Err(e) => Outcome::error(e),
    }
}

fn ablation_task(cfg: &str, dir: &Path) -> Result<(bool, String), String> {
    let path = presets().join(cfg);
    let out = run(&["ablate", path.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()], &[]);
    if !out.status.success() {
        return Err(format!("ablate exited {:?}: {}", out.status.code(), stderr_tail(&out)));
    }
    let rows = read_csv(&dir.join(format!("{}.results.csv", cfg.trim_end_matches(".cfg"))))?;
    let metric = |name: &str| -> Result<f64, String> {
        let row = rows
            .iter()
            .find(|r| r.get("name").map(String::as_str) == Some(name))
            .ok_or_else(|| format!("no {name} row"))?;
        num(row, "test_metric")
    };
    let full = metric("tau-gru")?;
    let mut ok = true;
    let mut parts = vec![format!("tau-gru {full:.3e}")];
    for other in ["alpha0", "beta0", "simple-delay-gru"] {
        let v = metric(other)?;
        ok &= full <= v;
        parts.push(format!("{other} {v:.3e}{}", if full <= v { "" } else { " (beats full)" }));
    }
    Ok((ok, parts.join(", ")))
}

fn ablation(dir: &Path) -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for (label, cfg) in [("mackey-glass", "mackey_glass_ablation.cfg"), ("enso", "enso_ablation.cfg")] {
        match ablation_task(cfg, dir) {
            Ok((ok, d)) => {
                pass &= ok;
                details.push(format!("{label}: {d}"));
            }
            Err(e) => {
                pass = false;
                details.push(format!("{label}: {e}"));
            }
        }
    }
    Outcome::new(pass, format!("median of 8 seeds; {}", details.join("; ")))
}

fn battery(name: &str, min_trials: usize) -> Outcome {
    let Some(b) = verify::batteries().iter().find(|b| b.name() == name) else {
        return Outcome::error(format!("battery {name} not registered"));
    };
    match b.run(0) {
        Ok(report) => {
            let BatteryReport { trials, .. } = report;
            let enough = trials >= min_trials;
            let mut detail = report.line();
            if !enough {
                detail.push_str(&format!(" (needs >= {min_trials} trials)"));
            }
            Outcome::new(report.passed() && enough, detail)
        }
        Err(e) => Outcome::error(e.to_string()),
    }
}

const BATTERIES: [&str; 7] = [
    "gradients",
    "prop1",
    "state-bound",
    "grad-bound",
    "lipschitz",
    "convergence",
    "fixed-points",
];

fn registry_matches() -> Outcome {
    let registered: Vec<&str> = verify::batteries().iter().map(|b| b.name()).collect();
    let mut sorted = registered.clone();
    sorted.sort_unstable();
    let mut expected = BATTERIES.to_vec();
    expected.sort_unstable();
    Outcome::new(sorted == expected, format!("registered: {}", registered.join(", ")))
}

/// Every file in `dir` except manifests, with the wall-clock column of
/// epoch CSVs blanked.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).expect("read out dir") {
        let path = entry.expect("dir entry").path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.ends_with(".manifest.json") {
            continue;
        }
        let bytes = std::fs::read(&path).expect("read output");
        let bytes = if name.ends_with(".epochs.csv") {
            String::from_utf8_lossy(&bytes)
                .lines()
                .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string() + "\n")
                .collect::<String>()
                .into_bytes()
        } else {
            bytes
        };
        files.insert(name, bytes);
    }
    files
}

const TINY: &str = "task = mackey-glass\ncell = tau-gru\nhidden = 4\ntau = 3\nlr = 0.01\nepochs = 3\n\
seed = 5\nn_train = 3\nn_test = 2\nbatch_size = 2\nseeds = 3\nablation = tau-gru, alpha0, simple-delay-gru\n\
tau_sweep = 0, 2\n";

fn determinism(root: &Path) -> Outcome {
    let cfg = root.join("tiny.cfg");
    std::fs::write(&cfg, TINY).expect("write tiny config");
    let cfg = cfg.to_str().unwrap().to_string();
    let attempt = |dir: &Path, threads: &str| -> Result<(BTreeMap<String, Vec<u8>>, Vec<u8>), String> {
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        let d = dir.to_str().unwrap();
        let env = [("TAU_RNN_THREADS", threads)];
        let commands: Vec<Vec<String>> = vec![
            vec!["gen-data".into(), "enso".into(), "--seed".into(), "1".into(), "--n".into(), "3".into(), "--out".into(), format!("{d}/enso.csv")],
            vec!["gen-data".into(), "mackey-glass".into(), "--seed".into(), "2".into(), "--n".into(), "2".into(), "--out".into(), format!("{d}/mg.csv")],
            vec!["gen-data".into(), "adding".into(), "--seed".into(), "3".into(), "--n".into(), "50".into(), "--N".into(), "40".into(), "--out".into(), format!("{d}/adding.csv")],
            vec!["train".into(), cfg.clone(), "--out-dir".into(), d.into(), "--svg".into()],
            vec!["ablate".into(), cfg.clone(), "--out-dir".into(), d.into(), "--svg".into()],
            vec!["seed-spread".into(), cfg.clone(), "--out-dir".into(), d.into()],
        ];
        for args in &commands {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let out = run(&args, &env);
            if !out.status.success() {
                return Err(format!("{} exited {:?}: {}", args[0], out.status.code(), stderr_tail(&out)));
            }
        }
        let verify = run(&["verify", "prop1", "--seed", "3"], &env);
        if !verify.status.success() {
            return Err("verify prop1 failed".into());
        }
        Ok((snapshot(dir), verify.stdout))
    };
    let runs = [("a", "1"), ("b", "1"), ("c", "3")]
        .iter()
        .map(|(name, threads)| attempt(&root.join(name), threads))
        .collect::<Result<Vec<_>, _>>();
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return Outcome::error(e),
    };
    let differing: Vec<String> = runs[0]
        .0
        .iter()
        .filter(|(name, bytes)| runs[1..].iter().any(|r| r.0.get(*name) != Some(*bytes)))
        .map(|(name, _)| name.clone())
        .collect();
    let same_keys = runs[1..].iter().all(|r| r.0.keys().eq(runs[0].0.keys()));
    let verify_same = runs[1..].iter().all(|r| r.1 == runs[0].1);
    let epochs_ok = runs[0]
        .0
        .get("tiny.epochs.csv")
        .is_some_and(|b| String::from_utf8_lossy(b).lines().count() == 4);
    Outcome::new(
        differing.is_empty() && same_keys && verify_same && epochs_ok,
        if differing.is_empty() && same_keys && verify_same {
            format!(
                "{} output files byte-identical across 3 runs (1 and 3 threads), wall-clock column and manifests excluded",
                runs[0].0.len()
            )
        } else {
            format!("differing outputs: {differing:?}, same file set {same_keys}, verify stdout equal {verify_same}")
        },
    )
}

fn config_errors(root: &Path) -> Outcome {
    let bad = root.join("no_lr.cfg");
    std::fs::write(&bad, TINY.replace("lr = 0.01\n", "")).expect("write config");
    let out = run(&["train", bad.to_str().unwrap(), "--out-dir", root.to_str().unwrap()], &[]);
    let msg = String::from_utf8_lossy(&out.stderr).into_owned();
    let threads = run(&["verify", "prop1"], &[("TAU_RNN_THREADS", "zero")]);
    let pass = out.status.code() == Some(2) && msg.contains("missing keys: lr") && threads.status.code() == Some(2);
    Outcome::new(
        pass,
        format!(
            "missing lr -> exit {:?} ({}), bad TAU_RNN_THREADS -> exit {:?}",
            out.status.code(),
            msg.trim(),
            threads.status.code()
        ),
    )
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path().to_path_buf();
    let dir = |name: &str| {
        let d = root.join(name);
        std::fs::create_dir_all(&d).expect("create dir");
        d
    };

    type Check<'a> = (&'a str, Box<dyn Fn() -> Outcome + 'a>);
    let checks: Vec<Check> = vec![
        ("battery registry", Box::new(registry_matches)),
        ("gradient correctness", Box::new(|| battery("gradients", 10))),
        ("closed-form linear gradients", Box::new(|| battery("prop1", 1))),
        ("state bound", Box::new(|| battery("state-bound", 1000))),
        ("gradient-norm bound", Box::new(|| battery("grad-bound", 500))),
        ("lipschitz bound", Box::new(|| battery("lipschitz", 100))),
        ("integrator order", Box::new(|| battery("convergence", 2))),
        ("fixed points", Box::new(|| battery("fixed-points", 2))),
        ("determinism", Box::new(|| determinism(&dir("determinism")))),
        ("config errors", Box::new(|| config_errors(&dir("config")))),
        ("mackey-glass preset", Box::new(|| dde_preset("mackey_glass.cfg", 3.0e-3, &dir("mg")))),
        ("enso preset", Box::new(|| dde_preset("enso.cfg", 4.0e-3, &dir("enso")))),
        ("adding task", Box::new(|| adding(&dir("adding")))),
        ("ablation ordering", Box::new(|| ablation(&dir("ablation")))),
    ];

    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in &checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = check();
        ran += 1;
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
