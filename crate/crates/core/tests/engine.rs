use histmatch::models::toy::ToyModel;
use histmatch::smc::{run, NullSink, SmcConfig, StopReason};

#[test]
fn toy_run_shrinks() {
    let cfg = SmcConfig { particles: 1000, training: 30, max_waves: 4, ..Default::default() };
    let out = run(&ToyModel, &ToyModel::space(), &cfg, &mut NullSink).unwrap();
    assert_eq!(out.stop, StopReason::MaxWaves);
    assert_eq!(out.summaries.len(), 5);
    assert_eq!(out.simulations, 30 * 5);
    for s in &out.summaries[1..] {
        eprintln!("{:?} {:.3} {:?}", s.cutoff, s.survivor_fraction, s.moves.as_ref().map(|m| (m.p_acc, m.repeats)));
        assert_eq!(s.ess, s.survivors as f64);
    }
    assert!(out.particles.iter().all(|t| out.chain.is_non_implausible(t).accepted));
}

#[test]
fn zero_waves() {
    let cfg = SmcConfig { particles: 200, training: 20, max_waves: 0, ..Default::default() };
    let out = run(&ToyModel, &ToyModel::space(), &cfg, &mut NullSink).unwrap();
    assert_eq!(out.summaries.len(), 1);
    assert!(out.chain.is_empty());
}

