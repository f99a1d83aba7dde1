use edgelearn::channel::{
    complex_noise, compute_alpha, downlink_decode, downlink_transmit, pack, sample_channel,
    snr_to_noise_var, unpack, uplink_transmit, uplink_transmit_with_noise, ChannelRealization,
    FronthaulSignal, Pathloss,
};
use edgelearn::nn::{block_powers, projection_forward, PowerMode};
use edgelearn::rng::{stream, Purpose};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

const DRAWS: usize = 20_000;

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

#[test]
fn rayleigh_power_and_pathloss_variance() {
    let mut rng = stream(1, Purpose::Channel, &[]);
    let p = mean((0..DRAWS).flat_map(|_| {
        sample_channel(&mut rng, 2, None)
            .unwrap()
            .magnitude()
            .into_iter()
            .map(|m| m * m)
    }));
    assert!((p - 1.0).abs() < 0.03, "E|h|^2 = {p}");

    let pl = Pathloss {
        distance: 10.0,
        exponent: 2.7,
    };
    let p = mean((0..DRAWS).flat_map(|_| {
        sample_channel(&mut rng, 2, Some(pl))
            .unwrap()
            .magnitude()
            .into_iter()
            .map(|m| m * m)
    }));
    let expected = 10f64.powf(-2.7);
    assert!((p / expected - 1.0).abs() < 0.05, "{p} vs {expected}");
}

#[test]
fn rayleigh_magnitude_mean() {
    let mut rng = stream(2, Purpose::Channel, &[]);
    let m = mean((0..DRAWS).map(|_| sample_channel(&mut rng, 1, None).unwrap().magnitude()[0]));
    let expected = std::f64::consts::PI.sqrt() / 2.0;
    assert!((m / expected - 1.0).abs() < 0.02, "E|h| = {m}");
}

#[test]
fn uplink_noise_variance_matches_snr() {
    let mut rng = stream(3, Purpose::UplinkNoise, &[]);
    let var = snr_to_noise_var(5.0);
    let ch = ChannelRealization::from_coefficients(vec![Complex64::new(0.3, -1.1); 4])
        .with_noise(var, 0.0);
    let s = FronthaulSignal::new(vec![0.5, -0.2, 0.1, 0.0, 0.3, 0.7, -0.4, 0.2]).unwrap();
    let clean = uplink_transmit_with_noise(&s, &ch, &[Complex64::new(0.0, 0.0); 4]).unwrap();
    let mut acc = 0.0;
    for _ in 0..DRAWS {
        let y = uplink_transmit(&s, &ch, &mut rng).unwrap();
        acc += y
            .real()
            .iter()
            .zip(clean.real())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    // Four complex blocks per draw, so each draw contributes 4 sigma^2 in expectation.
    let empirical = acc / (4 * DRAWS) as f64;
    assert!((empirical / var - 1.0).abs() < 0.03, "{empirical} vs {var}");
}

#[test]
fn downlink_decoded_noise_is_scaled_by_alpha() {
    let mut rng = stream(4, Purpose::DownlinkNoise, &[]);
    let var = 0.1;
    let h = vec![Complex64::new(-0.4, 0.9), Complex64::new(1.2, 0.2)];
    let ch = ChannelRealization::from_coefficients(h.clone()).with_noise(0.0, var);
    let m = pack(&[2.0, -1.0, 0.5, 3.0]).unwrap();
    let alpha = compute_alpha(&[&m], 1.0, PowerMode::PerBlock, 0).unwrap();
    let phase = ch.phase();
    let target: Vec<f64> = unpack(
        &m.iter()
            .zip(&h)
            .map(|(mj, hj)| mj * hj.norm())
            .collect::<Vec<_>>(),
    );
    let mut acc = 0.0;
    for _ in 0..DRAWS {
        let y = downlink_transmit(&m, &ch, alpha, &mut rng).unwrap();
        let d = downlink_decode(&y, &phase, alpha).unwrap();
        acc += d
            .real()
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    let empirical = acc / (2 * DRAWS) as f64;
    let expected = var / (alpha * alpha);
    assert!(
        (empirical / expected - 1.0).abs() < 0.03,
        "{empirical} vs {expected}"
    );
}

#[test]
fn uplink_is_phase_invariant_at_fixed_noise() {
    let mut rng = stream(5, Purpose::Channel, &[]);
    let ch = sample_channel(&mut rng, 3, None).unwrap();
    let noise = complex_noise(&mut rng, 3, 0.2);
    let s = FronthaulSignal::new(vec![0.1, 0.4, -0.3, 0.2, -0.6, 0.5]).unwrap();
    let y0 = uplink_transmit_with_noise(&s, &ch, &noise).unwrap();
    for _ in 0..100 {
        let theta: f64 = rng.random_range(-3.0..3.0);
        let rotated = ChannelRealization::from_coefficients(
            ch.coefficients()
                .iter()
                .map(|h| h * Complex64::from_polar(1.0, theta))
                .collect(),
        );
        let y = uplink_transmit_with_noise(&s, &rotated, &noise).unwrap();
        for (a, b) in y.real().iter().zip(y0.real()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

fn signal(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

proptest! {
    #[test]
    fn pack_unpack_roundtrip(v in (1usize..8).prop_flat_map(|h| signal(2 * h))) {
        prop_assert_eq!(unpack(&pack(&v).unwrap()), v);
    }

    #[test]
    fn projection_respects_budget(v in (1usize..8).prop_flat_map(|h| signal(2 * h)), budget in 0.01f64..4.0) {
        let per = projection_forward(&v, budget, PowerMode::PerBlock).unwrap();
        for p in block_powers(&per).unwrap() {
            prop_assert!(p <= budget + 1e-12);
        }
        let sum = projection_forward(&v, budget, PowerMode::Sum).unwrap();
        prop_assert!(sum.iter().map(|x| x * x).sum::<f64>() <= budget + 1e-12);
    }

    #[test]
    fn downlink_power_is_feasible(
        msgs in prop::collection::vec(signal(6), 1..5),
        power in 0.1f64..3.0,
    ) {
        let packed: Vec<Vec<Complex64>> = msgs.iter().map(|m| pack(m).unwrap()).collect();
        let refs: Vec<&[Complex64]> = packed.iter().map(Vec::as_slice).collect();
        let mut sum_power = 0.0;
        for (i, m) in packed.iter().enumerate() {
            let a = compute_alpha(&refs, power, PowerMode::PerBlock, i).unwrap();
            for c in m {
                prop_assert!((a * c).norm_sqr() <= power * (1.0 + 1e-12));
            }
            let a = compute_alpha(&refs, power, PowerMode::Sum, i).unwrap();
            sum_power += m.iter().map(|c| (a * c).norm_sqr()).sum::<f64>();
        }
        prop_assert!(sum_power <= power * (1.0 + 1e-12));
    }

    #[test]
    fn noiseless_downlink_decodes_to_effective_channel(
        m in signal(6),
        h in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 3),
    ) {
        let h: Vec<Complex64> = h.into_iter().map(|(a, b)| Complex64::new(a, b + 1e-3)).collect();
        let ch = ChannelRealization::from_coefficients(h);
        let packed = pack(&m).unwrap();
        let alpha = compute_alpha(&[&packed], 1.0, PowerMode::PerBlock, 0).unwrap();
        let mut rng = stream(0, Purpose::DownlinkNoise, &[]);
        let y = downlink_transmit(&packed, &ch, alpha, &mut rng).unwrap();
        let d = downlink_decode(&y, &ch.phase(), alpha).unwrap();
        for ((got, mj), hj) in d.real().iter().zip(&m).zip(ch.effective_diag()) {
            prop_assert!((got - hj * mj).abs() <= 1e-9 * (1.0 + (hj * mj).abs()));
        }
    }
}
