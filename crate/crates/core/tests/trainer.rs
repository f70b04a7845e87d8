use std::path::Path;

use saclab::config::RunConfig;
use saclab::nn::Checkpoint;
use saclab::trainer::{Phase, Trainer, METRICS_HEADER};
use saclab::Error;

fn config(dir: &Path, extra: &[&str]) -> RunConfig {
    let mut o: Vec<String> = [
        "agent.hidden=[16,16]",
        "wm.hidden=[16,16]",
        "nlf.hidden=[8,8]",
        "trainer.batch_size=16",
        "trainer.warmup_steps=100",
        "trainer.total_steps=600",
        "trainer.log_every=100",
        "trainer.eval_every=300",
        "eval.k=2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    o.push(format!("io.out_dir={}", dir.display()));
    o.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::load(None, &o).unwrap()
}

fn metrics(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("metrics.csv")).unwrap()
}

/// Checkpoints agree on every tensor and on the manifest apart from output paths.
fn assert_same_state(a: &Path, b: &Path) {
    let load = |d: &Path| {
        let ck = Checkpoint::load(&d.join("checkpoint.sacl")).unwrap();
        let mut man: serde_json::Value = serde_json::from_str(&ck.manifest).unwrap();
        man["config"].as_object_mut().unwrap().remove("io");
        (ck.entries, man)
    };
    let (ea, ma) = load(a);
    let (eb, mb) = load(b);
    assert!(ea == eb, "checkpoint tensors differ");
    assert_eq!(ma, mb);
}

#[test]
fn warmup_only_run_makes_no_updates() {
    let d = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(config(d.path(), &["trainer.total_steps=50", "trainer.log_every=10", "trainer.eval_every=50"])).unwrap();
    t.enable_trace();
    let s = t.run().unwrap();
    assert_eq!(s.steps, 50);
    assert_eq!(t.buffer.len(), 50);
    assert!(t.trace().unwrap().is_empty());
    assert_eq!(t.wm_opt.step_count, 0);
    let m = metrics(d.path());
    let lines: Vec<&str> = m.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 6);
    // no losses before the first update
    assert_eq!(lines[1].split(',').nth(2), Some(""));
    assert!(!lines[5].split(',').nth(7).unwrap().is_empty());
}

#[test]
fn update_phases_run_in_order() {
    let d = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(config(d.path(), &["trainer.updates_per_step=2"])).unwrap();
    t.enable_trace();
    for _ in 0..103 {
        t.step_once().unwrap();
    }
    let once = [Phase::Nlf, Phase::Wm, Phase::Q, Phase::Policy, Phase::Alpha, Phase::Targets];
    let tr = t.trace().unwrap();
    // steps 100, 101, 102 each update twice
    assert_eq!(tr.len(), 3 * 2 * once.len());
    for c in tr.chunks(once.len()) {
        assert_eq!(c, once);
    }
}

#[test]
fn identical_configs_give_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let sa = Trainer::new(config(a.path(), &[])).unwrap().run().unwrap();
    let sb = Trainer::new(config(b.path(), &[])).unwrap().run().unwrap();
    assert_eq!(metrics(a.path()), metrics(b.path()));
    assert_eq!(sa.final_roa, sb.final_roa);
    assert_eq!(metrics(a.path()).lines().count(), 7);
    assert_same_state(a.path(), b.path());
}

#[test]
fn zero_beta_matches_plain_sac() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    Trainer::new(config(a.path(), &["agent.mode.kind=sac"])).unwrap().run().unwrap();
    Trainer::new(config(b.path(), &["agent.mode.kind=sacla", "agent.mode.beta=0.0"])).unwrap().run().unwrap();
    assert_eq!(metrics(a.path()), metrics(b.path()));
    let c = tempfile::tempdir().unwrap();
    Trainer::new(config(c.path(), &["agent.mode.kind=sacla"])).unwrap().run().unwrap();
    assert_ne!(metrics(a.path()), metrics(c.path()));
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    Trainer::new(config(a.path(), &[])).unwrap().run().unwrap();
    Trainer::new(config(b.path(), &["trainer.total_steps=300"])).unwrap().run().unwrap();
    // a stray row past the checkpoint must be dropped on resume
    let mut m = metrics(b.path());
    m.push_str("400,1,2,3,4,5,6,,\n");
    std::fs::write(b.path().join("metrics.csv"), m).unwrap();
    let ck = Checkpoint::load(&b.path().join("checkpoint.sacl")).unwrap();
    let mut t = Trainer::from_checkpoint(config(b.path(), &[]), &ck).unwrap();
    assert_eq!(t.step_count(), 300);
    t.run().unwrap();
    assert_eq!(metrics(a.path()), metrics(b.path()));
    assert_same_state(a.path(), b.path());
}

#[test]
fn resume_rejects_a_different_trajectory() {
    let d = tempfile::tempdir().unwrap();
    Trainer::new(config(d.path(), &["trainer.total_steps=300"])).unwrap().run().unwrap();
    let ck = Checkpoint::load(&d.path().join("checkpoint.sacl")).unwrap();
    let err = Trainer::from_checkpoint(config(d.path(), &["trainer.seed=5"]), &ck).err().unwrap();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(config(d.path(), &["trainer.total_steps=300"])).unwrap();
    t.run().unwrap();
    let first = d.path().join("checkpoint.sacl");
    let loaded = Trainer::load(&first).unwrap();
    let second = d.path().join("again.sacl");
    loaded.save_checkpoint(&second).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    assert_eq!(loaded.buffer.len(), t.buffer.len());
    assert_eq!(loaded.evaluate().unwrap(), t.evaluate().unwrap());
}

#[test]
fn corrupt_checkpoints_are_format_errors() {
    let d = tempfile::tempdir().unwrap();
    let t = Trainer::new(config(d.path(), &["trainer.total_steps=50"])).unwrap();
    let bytes = t.checkpoint().unwrap().to_bytes().unwrap();
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        let e = Checkpoint::from_bytes(&bytes[..cut]).err().unwrap();
        assert!(matches!(e, Error::Format(_)), "cut {cut}: {e}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    let p = d.path().join("trunc.sacl");
    std::fs::write(&p, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(Trainer::load(&p), Err(Error::Format(_))));
}

#[test]
fn non_finite_parameters_abort_with_a_diagnostic_row() {
    let d = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(config(d.path(), &[])).unwrap();
    for (_, p) in t.wm.net.params.iter_mut() {
        p.data.iter_mut().for_each(|v| *v = f32::NAN);
    }
    let err = t.run().err().unwrap();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
    let m = metrics(d.path());
    let last = m.lines().last().unwrap();
    assert_eq!(last.split(',').next(), Some(t.step_count().to_string().as_str()));
    assert!(m.lines().count() >= 2);
}

#[test]
fn off_cadence_total_adds_a_final_row() {
    let d = tempfile::tempdir().unwrap();
    let s = Trainer::new(config(d.path(), &["trainer.total_steps=350"])).unwrap().run().unwrap();
    let m = metrics(d.path());
    let steps: Vec<&str> = m.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["100", "200", "300", "350"]);
    assert!((0.0..=100.0).contains(&s.final_roa));
}
