use fedvlp::environment::{advance, default_environment, ScenarioKind, ScenarioSpec};
use fedvlp::optics::{los_gain, nlos_gain, Vec3};
use fedvlp::sensing::{powers_at, recompute_powers, LocalDataset, Sample};
use proptest::prelude::*;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

fn sample(round: u32, tag: f64) -> Sample {
    Sample {
        powers: vec![tag],
        coordinate: Vec3::new(tag, 0.0, 0.0),
        round_collected: round,
    }
}

#[test]
fn channel_table_matches_direct_gains() {
    let env = default_environment();
    let table = env.channel_model().unwrap();
    for p in [
        Vec3::new(0.3, 4.1, 0.0),
        Vec3::new(2.5, 2.5, 0.85),
        Vec3::new(4.9, 0.2, 1.7),
    ] {
        let gains = table.gains(p).unwrap();
        for (led, g) in env.leds.iter().zip(&gains) {
            assert_eq!(
                g.los.to_bits(),
                los_gain(led, p, &env.pd).unwrap().to_bits()
            );
            assert_eq!(
                g.nlos.to_bits(),
                nlos_gain(led, p, &env.pd, &env.patches)
                    .unwrap()
                    .gain
                    .to_bits()
            );
        }
    }
}

#[test]
fn blacked_out_led_reads_only_the_noise_floor() {
    let base = default_environment();
    let spec = ScenarioSpec::of(ScenarioKind::LedBlackout);
    let env = advance(&base, &spec, 5);
    let channel = env.channel_model().unwrap();
    let dark = spec.blackout_leds(&base)[0];
    let p = powers_at(&env, &channel, Vec3::new(1.0, 3.0, 0.0), 0, &[]).unwrap();
    let floor = env.noise.variance(env.pd.area_m2, 0.0);
    assert_eq!(p[dark], floor);
    assert!(p.iter().enumerate().all(|(i, &w)| i == dark || w > floor));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // The default room is symmetric under x -> L - x, which maps LED column
    // ix to 3 - ix.
    #[test]
    fn mirror_symmetry(x in 0.05..4.95f64, y in 0.05..4.95f64, z in 0.0..2.0f64) {
        let env = default_environment();
        let channel = env.channel_model().unwrap();
        let a = powers_at(&env, &channel, Vec3::new(x, y, z), 0, &[]).unwrap();
        let b = powers_at(&env, &channel, Vec3::new(5.0 - x, y, z), 0, &[]).unwrap();
        for iy in 0..4 {
            for ix in 0..4 {
                prop_assert!(close(a[iy * 4 + ix], b[iy * 4 + 3 - ix], 1e-12));
            }
        }
    }

    #[test]
    fn ambient_light_only_raises_power(x in 0.0..5.0f64, y in 0.0..5.0f64, t in 1u32..200) {
        let base = default_environment();
        let spec = ScenarioSpec::of(ScenarioKind::AmbientDrift);
        let pos = Vec3::new(x, y, 0.0);
        let channel = base.channel_model().unwrap();
        let before = powers_at(&advance(&base, &spec, t - 1), &channel, pos, 0, &[]).unwrap();
        let after = powers_at(&advance(&base, &spec, t), &channel, pos, 0, &[]).unwrap();
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(a > b);
        }
    }

    // The squared photocurrent scales with emitted power squared, and the shot
    // term with emitted power, so subtracting the noise floor of each leaves a
    // ratio close to P(t)^2.
    #[test]
    fn aging_scales_the_signal_quadratically(x in 0.0..5.0f64, y in 0.0..5.0f64, t in 0u32..300) {
        let base = default_environment();
        let spec = ScenarioSpec::of(ScenarioKind::DeviceAging);
        let aged = advance(&base, &spec, t);
        let pos = Vec3::new(x, y, 0.0);
        let channel = base.channel_model().unwrap();
        let p0 = powers_at(&base, &channel, pos, 0, &[]).unwrap();
        let pt = powers_at(&aged, &channel, pos, 0, &[]).unwrap();
        let ratio = spec.aged_power(t) * spec.aged_power(t);
        let gains = channel.gains(pos).unwrap();
        for i in 0..16 {
            let i0 = base.pd.responsivity_a_per_w * base.leds[i].emit_power_w * gains[i].total();
            let it = aged.pd.responsivity_a_per_w * aged.leds[i].emit_power_w * gains[i].total();
            let s0 = p0[i] - base.noise.variance(base.pd.area_m2, i0);
            let st = pt[i] - aged.noise.variance(aged.pd.area_m2, it);
            prop_assert!(close(st, s0 * ratio, 1e-6), "led {i}: {st} vs {}", s0 * ratio);
        }
    }

    #[test]
    fn recomputed_powers_are_bit_identical(x in 0.0..5.0f64, y in 0.0..5.0f64, z in 0.0..2.0f64, t in 0u32..50) {
        let base = default_environment();
        let spec = ScenarioSpec {
            stack: vec![ScenarioKind::AmbientDrift, ScenarioKind::DeviceAging],
            ..ScenarioSpec::of(ScenarioKind::LedBlackout)
        };
        let env = advance(&base, &spec, t);
        let coordinate = Vec3::new(x, y, z);
        let powers = powers_at(&env, &env.channel_model().unwrap(), coordinate, 0, &[]).unwrap();
        let s = Sample { powers: powers.clone(), coordinate, round_collected: t };
        let again = recompute_powers(&env, &s).unwrap();
        prop_assert_eq!(powers.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        again.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn refresh_respects_capacity_and_evicts_oldest(
        capacity in 1usize..40,
        frac in 0.0..=1.0f64,
        fresh_n in 0usize..40,
    ) {
        let fresh_n = fresh_n.min(capacity);
        let mut ds = LocalDataset::new(0, capacity);
        ds.fill((0..capacity).map(|i| sample(0, i as f64)).collect()).unwrap();
        ds.refresh((0..fresh_n).map(|i| sample(1, 100.0 + i as f64)).collect(), frac).unwrap();
        prop_assert_eq!(ds.len(), capacity);
        let added = ((frac * capacity as f64).round() as usize).min(fresh_n);
        let new: Vec<f64> = ds.samples.iter().filter(|s| s.round_collected == 1).map(|s| s.powers[0]).collect();
        prop_assert_eq!(new, (0..added).map(|i| 100.0 + i as f64).collect::<Vec<_>>());
        // survivors of round 0 are the newest-inserted ones, in order
        let old: Vec<f64> = ds.samples.iter().filter(|s| s.round_collected == 0).map(|s| s.powers[0]).collect();
        prop_assert_eq!(old, (added..capacity).map(|i| i as f64).collect::<Vec<_>>());
    }
}
