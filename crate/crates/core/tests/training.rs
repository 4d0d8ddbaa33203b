use v2g_core::eval::{compare, EvalOptions, Policy};
use v2g_core::ppo::{train, Checkpoint, PpoConfig, Trainer};
use v2g_core::presets;

fn cfg(episodes: u64) -> PpoConfig {
    PpoConfig {
        episodes,
        hidden: vec![16, 16],
        actors: 4,
        ..PpoConfig::desk()
    }
}

#[test]
fn checkpoint_file_drives_evaluation() {
    let spec = presets::baseload_spec(20);
    let mut saved = Vec::new();
    let (report, ck) = train(&spec, &cfg(40), &mut |c| {
        saved.push(c.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(report.records.len(), 40);
    assert_eq!(saved.last().unwrap(), &ck);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);

    let a = compare(&Policy::from_checkpoint(&ck).unwrap(), &spec, 3, EvalOptions::default()).unwrap();
    let b = compare(&Policy::from_checkpoint(&back).unwrap(), &spec, 3, EvalOptions::default()).unwrap();
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.policy.soc_violations, 0);
}

#[test]
fn resume_continues_the_episode_count() {
    let spec = presets::baseload_spec(20);
    let (_, ck) = train(&spec, &cfg(16), &mut |_| Ok(())).unwrap();
    let mut t = Trainer::resume(spec, cfg(32), &ck).unwrap();
    assert_eq!(t.episode(), 16);
    let report = t.run(&mut |_| Ok(()), None, &mut |_| {}).unwrap();
    assert_eq!(report.records.first().unwrap().episode, 16);
    assert_eq!(t.episode(), 32);
}
