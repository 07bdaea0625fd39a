mod common;

use std::sync::OnceLock;

use gpmpc::classifier::{
    init_belief, safety_certificate, update_belief, ClassifierConfig, ObservationWindow,
};
use gpmpc::driver::{Intention, ModelSet, TimedPosition};
use gpmpc::synth::{generate, GeneratorParams};

fn models() -> &'static ModelSet {
    static M: OnceLock<ModelSet> = OnceLock::new();
    M.get_or_init(|| common::small_model_set(6, 60, 21))
}

struct StreamResult {
    first_likely: Vec<Intention>,
    identified_at: Option<usize>,
    true_pruned: bool,
    certificates_monotone: bool,
}

fn classify(intention: Intention, index: u64, seed: u64) -> (StreamResult, Option<usize>) {
    let cfg = ClassifierConfig::default();
    let g = generate(intention, index, seed, &GeneratorParams::default()).unwrap();
    let mut belief = init_belief(cfg.epsilon).unwrap();
    let mut window = ObservationWindow::new(cfg.window).unwrap();
    let mut first_likely = Vec::new();
    let mut identified_at = None;
    let mut last_cert = f64::INFINITY;
    let mut monotone = true;
    for (k, s) in g.trajectory.samples.iter().enumerate() {
        window
            .push(TimedPosition {
                t: s.t,
                px: s.px,
                py: s.py,
            })
            .unwrap();
        let next = update_belief(&belief, &window, models(), cfg.lambda);
        for i in Intention::ALL {
            assert!(
                !next.is_likely(i) || belief.is_likely(i),
                "pruned intention re-entered"
            );
        }
        assert!(!next.likely_set().is_empty());
        assert!((next.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        belief = next;
        if k == 0 {
            first_likely = belief.likely_set();
        }
        if identified_at.is_none() && belief.likely_set() == [intention] {
            identified_at = Some(k);
        }
        let c = safety_certificate(&belief, 0.01);
        monotone &= c <= last_cert;
        last_cert = c;
    }
    let onset = g.turn_interval.and_then(|(a, _)| g.index_at_arc_length(a));
    (
        StreamResult {
            first_likely,
            identified_at,
            true_pruned: !belief.is_likely(intention),
            certificates_monotone: monotone,
        },
        onset,
    )
}

#[test]
fn east_approach_prunes_left_turn_at_the_first_update() {
    for index in 0..5 {
        let (r, onset) = classify(Intention::TurnRight, index, 30);
        assert!(
            !r.first_likely.contains(&Intention::TurnLeft),
            "{:?}",
            r.first_likely
        );
        let id = r.identified_at.expect("right turn identified");
        assert!(
            id >= onset.unwrap(),
            "identified at {id} before onset {onset:?}"
        );
        assert!(r.certificates_monotone);
    }
}

#[test]
fn true_intention_is_rarely_pruned() {
    let streams = 510;
    let mut pruned = 0;
    let mut identified = 0;
    for s in 0..streams {
        let intention = Intention::ALL[s % 3];
        let (r, _) = classify(intention, (s / 3) as u64, 1000 + s as u64);
        pruned += r.true_pruned as usize;
        identified += r.identified_at.is_some() as usize;
    }
    let rate = pruned as f64 / streams as f64;
    assert!(
        rate <= ClassifierConfig::default().epsilon,
        "true intention pruned in {rate}"
    );
    assert!(
        identified as f64 >= 0.9 * streams as f64,
        "identified {identified}"
    );
}
