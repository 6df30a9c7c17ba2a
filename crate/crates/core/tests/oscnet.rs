use corpusnil_core::oscnet::*;
use corpusnil_core::seed;
use rand::Rng;

fn random_action(rng: &mut seed::Rng) -> ControlAction {
    let mut a = ControlAction::default();
    for _ in 0..rng.random_range(0..6) {
        a.activate.insert(rng.random_range(0..N_OSC));
    }
    for _ in 0..rng.random_range(0..3) {
        a.mute.insert(rng.random_range(0..N_OSC));
    }
    for _ in 0..rng.random_range(0..4) {
        a.volume_targets
            .insert(rng.random_range(0..N_OSC), rng.random_range(0.0..1.0));
    }
    for _ in 0..rng.random_range(0..2) {
        a.glissandi.insert(
            rng.random_range(0..N_OSC),
            Glissando {
                target: rng.random_range(30.0..2000.0),
                rate: rng.random_range(0.0..500.0),
            },
        );
    }
    a.feedback_delta = match rng.random_range(0..3) {
        0 => Some(FeedbackDelta::Global(rng.random_range(0.0..3.0))),
        1 => Some(FeedbackDelta::Sparse(
            (0..4)
                .map(|_| GainDelta {
                    i: rng.random_range(0..N_OSC),
                    j: rng.random_range(0..N_OSC),
                    delta: rng.random_range(-2.0..2.0),
                })
                .collect(),
        )),
        _ => None,
    };
    a
}

/// Render `secs` of audio with a random action every 100 ms.
fn stress(secs: f64, seed_value: u64) -> (Vec<f32>, OscNetwork) {
    let config = OscConfig {
        seed: seed_value,
        ..OscConfig::default()
    };
    let mut net = OscNetwork::new(config).unwrap();
    let mut rng = seed::rng(seed::derive(seed_value, "actions"));
    let block = (0.1 * net.config().sample_rate) as usize;
    let mut audio = Vec::new();
    for _ in 0..(secs / 0.1) as usize {
        net.apply(&random_action(&mut rng)).unwrap();
        audio.extend(net.render(block).samples);
        assert_eq!(net.oscillators().len(), N_OSC);
    }
    (audio, net)
}

#[test]
fn stress_render_is_bounded_and_finite() {
    let (audio, _) = stress(10.0, 1);
    assert!(audio.iter().all(|s| s.is_finite() && (-1.0..=1.0).contains(s)));
    assert!(audio.iter().any(|&s| s != 0.0));
}

#[test]
fn same_seed_gives_identical_audio() {
    let (a, _) = stress(3.0, 5);
    let (b, _) = stress(3.0, 5);
    let (c, _) = stress(3.0, 6);
    assert_eq!(
        a.iter().map(|s| s.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|s| s.to_bits()).collect::<Vec<_>>()
    );
    assert_ne!(a, c);
}

#[test]
fn muting_everything_settles_to_digital_silence() {
    let (_, mut net) = stress(2.0, 9);
    net.apply(&ControlAction::mute_all()).unwrap();
    let settle = (2.0 * net.config().slew_time * net.config().sample_rate) as usize + 1;
    net.render(settle);
    assert_eq!(net.active_count(), 0);
    let tail = net.render(4800);
    assert!(tail.samples.iter().all(|&s| s == 0.0));
}

#[test]
fn invalid_actions_leave_the_network_untouched() {
    let mut net = OscNetwork::new(OscConfig::default()).unwrap();
    let before = net.snapshot();
    let bad = ControlAction {
        volume_targets: [(N_OSC, 0.5)].into(),
        ..Default::default()
    };
    assert!(net.apply(&bad).is_err());
    assert_eq!(net.snapshot(), before);
}
