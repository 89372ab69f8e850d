use amu_core::metrics::{superiority, zero_shot_accuracy};
use amu_core::store::sample_few_shot;
use amu_core::synth::{generate, SynthSpec};
use amu_core::{SplitTag, TrainConfig};

fn zero_shot_at(spec: &SynthSpec) -> f64 {
    let b = generate(spec).unwrap();
    zero_shot_accuracy(&b.clip, &b.head, &b.clip.indices_with_tag(SplitTag::Test)).unwrap()
}

#[test]
fn overwhelming_clip_noise_gives_chance_zero_shot() {
    let spec = SynthSpec { clip_noise: 1e4, test_per_class: 100, ..SynthSpec::default() };
    let chance = 1.0 / spec.classes as f64;
    for seed in 0..3 {
        let acc = zero_shot_at(&SynthSpec { seed, ..spec });
        assert!((acc - chance).abs() <= 0.05, "seed {seed}: zero-shot {acc}");
    }
}

#[test]
fn noiseless_aux_view_is_perfectly_separable() {
    let spec = SynthSpec { aux_noise: 1e-6, ..SynthSpec::default() };
    let b = generate(&spec).unwrap();
    let task = sample_few_shot(&b.clip, 4, 0).unwrap();
    let sup = superiority(&b.aux, &task, &TrainConfig::default()).unwrap();
    assert!(sup >= 0.99, "superiority {sup}");
}

#[test]
fn zero_shot_accuracy_falls_as_clip_noise_grows() {
    let mut last = f64::INFINITY;
    for noise in [0.5, 2.0, 4.0, 8.0] {
        let mean: f64 = (0..3)
            .map(|seed| zero_shot_at(&SynthSpec { seed, clip_noise: noise, ..SynthSpec::default() }))
            .sum::<f64>()
            / 3.0;
        assert!(mean < last, "noise {noise}: {mean} after {last}");
        last = mean;
    }
}

#[test]
fn generation_is_a_pure_function_of_the_spec() {
    let spec = SynthSpec { seed: 9, confidence_link: 0.5, ..SynthSpec::default() };
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    assert_eq!(a.clip, b.clip);
    assert_eq!(a.aux, b.aux);
    assert_eq!(a.head, b.head);
    let c = generate(&SynthSpec { seed: 10, ..spec }).unwrap();
    assert_ne!(a.clip, c.clip);
}
