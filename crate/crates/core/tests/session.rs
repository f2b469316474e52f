use embagg_core::config::{Assignment, DeploymentConfig};
use embagg_core::transport::{DeliverySchedule, MsgType, SchedulePolicy};

fn cfg(n: usize, t: usize, d: usize, entities: usize, seed: u64) -> DeploymentConfig {
    let mut c = DeploymentConfig::new(n, t, d, Assignment::Random { entities, density: 0.6 }).insecure();
    c.seed = seed;
    c
}

#[test]
fn small_session_matches_oracle() {
    let dep = cfg(3, 1, 2, 3, 7).deployment().unwrap();
    let out = dep.run_simulated(DeliverySchedule::default()).unwrap();
    assert_eq!(out.rounds.len(), 1);
    assert!(out.rounds[0].matches_oracle);
}

#[test]
fn schedules_do_not_change_results() {
    let dep = cfg(5, 2, 3, 4, 3).deployment().unwrap();
    let a = dep.run_simulated(DeliverySchedule { seed: 1, policy: SchedulePolicy::FifoRandom }).unwrap();
    let b = dep.run_simulated(DeliverySchedule { seed: 2, policy: SchedulePolicy::FifoRandom }).unwrap();
    let c = dep.run_simulated(DeliverySchedule { seed: 0, policy: SchedulePolicy::RoundRobin }).unwrap();
    assert_eq!(a.rounds[0].clients, b.rounds[0].clients);
    assert_eq!(a.rounds[0].clients, c.rounds[0].clients);
    assert_eq!(a.transcript.canonical_frames(), b.transcript.canonical_frames());
    assert_eq!(a.transcript.canonical_frames(), c.transcript.canonical_frames());
    assert!(a.rounds[0].matches_oracle);
}

#[test]
fn same_seeds_same_transcript_hash() {
    let dep = cfg(3, 1, 2, 3, 11).deployment().unwrap();
    let s = DeliverySchedule { seed: 5, policy: SchedulePolicy::FifoRandom };
    assert_eq!(dep.run_simulated(s).unwrap().transcript.digest(), dep.run_simulated(s).unwrap().transcript.digest());
}

#[test]
fn share_upload_count_is_n_squared() {
    let dep = cfg(3, 1, 2, 2, 1).deployment().unwrap();
    let out = dep.run_simulated(DeliverySchedule::default()).unwrap();
    let uploads = out.transcript.entries.iter().filter(|e| e.msg.msg_type == MsgType::ShareUpload).count();
    // N(N-1) relayed plus N kept locally.
    assert_eq!(uploads, 9);
}

#[test]
fn multi_round_with_updates() {
    let mut c = cfg(3, 1, 2, 3, 4);
    c.rounds = 3;
    c.update = embagg_core::protocol::update::UpdateKind::RandomWalk { step: 0.1, limit: 1.0 };
    let out = c.deployment().unwrap().run_simulated(DeliverySchedule::default()).unwrap();
    assert_eq!(out.rounds.len(), 3);
    assert!(out.rounds.iter().all(|r| r.matches_oracle));
    assert_ne!(out.rounds[0].inputs, out.rounds[2].inputs);
}

#[test]
fn zero_rounds_reports_union() {
    let mut c = cfg(3, 1, 2, 3, 4);
    c.rounds = 0;
    let out = c.deployment().unwrap().run_simulated(DeliverySchedule::default()).unwrap();
    assert!(out.rounds.is_empty());
    assert!(!out.union.is_empty());
}

#[test]
fn loopback_tcp_matches_simulator() {
    let dep = cfg(3, 1, 2, 3, 9).deployment().unwrap();
    let sim = dep.run_simulated(DeliverySchedule::default()).unwrap();
    let tcp = dep.run_loopback(Default::default()).unwrap();
    assert_eq!(sim.rounds[0].clients, tcp.rounds[0].clients);
    assert_eq!(sim.transcript.canonical_frames(), tcp.transcript.canonical_frames());
}
