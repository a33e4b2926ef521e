use pcsc_core::channel::{
    noise_components, normalize_power, sample_training_snr, snr_to_sigma2, transmit, ChannelSpec,
    SymbolFrame,
};
use pcsc_tensor::Graph;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn awgn_noise_statistics_at_10_db() {
    let n = 1_000_000;
    let w = noise_components(&ChannelSpec::awgn(10.0, 42), 0, n);
    let (re, im): (Vec<f64>, Vec<f64>) = w.chunks(2).map(|c| (c[0], c[1])).unzip();
    let power = w.iter().map(|x| x * x).sum::<f64>() / n as f64;
    assert!((power - 0.1).abs() < 0.001, "complex variance {power}");
    let se = (0.05f64 / n as f64).sqrt();
    for comp in [re, im] {
        let mean = comp.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs 3se {}", 3.0 * se);
    }
}

#[test]
fn noise_streams_are_uncorrelated() {
    let n = 50_000;
    let spec = ChannelSpec::awgn(0.0, 9);
    let a = noise_components(&spec, 0, n);
    let b = noise_components(&spec, 1, n);
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    let r = dot / (na * nb).sqrt();
    assert!(r.abs() < 0.01, "correlation {r}");
}

#[test]
fn training_snr_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut v: Vec<f64> = (0..10_000).map(|_| sample_training_snr(&mut rng)).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    assert!((9.5..=10.5).contains(&mean));
    v.sort_by(f64::total_cmp);
    assert!(v[0] >= 0.0 && v[v.len() - 1] <= 20.0);
    let n = v.len() as f64;
    let ks = v
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = x / 20.0;
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // Asymptotic 1% critical value of the one-sample KS statistic.
    assert!(ks < 1.628 / n.sqrt(), "KS statistic {ks}");

    let mut again = ChaCha8Rng::seed_from_u64(5);
    let mut first = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        assert_eq!(sample_training_snr(&mut again), sample_training_snr(&mut first));
    }
}

fn gradient_through(spec: &ChannelSpec) -> (Vec<f64>, Vec<f64>) {
    let g = Graph::<f64>::new();
    let x = g.param(random(1, 24), &[2, 6, 2]).unwrap();
    let frame = SymbolFrame::new(&g, x).unwrap();
    let lax = ChannelSpec {
        strict: false,
        ..*spec
    };
    let y = transmit(&g, &frame, &lax, &[3, 4]).unwrap();
    let t = random(2, 24);
    let tv = g.constant(t.clone(), &[2, 6, 2]).unwrap();
    let loss = g.mse(y.symbols, tv).unwrap();
    let grads = g.backward(loss).unwrap();
    // d mse / dY, computed by hand from the received values.
    let dy = g
        .to_vec(y.symbols)
        .iter()
        .zip(&t)
        .map(|(y, t)| 2.0 * (y - t) / 24.0)
        .collect();
    (grads.get(x).unwrap().to_vec(), dy)
}

#[test]
fn awgn_gradient_is_identity() {
    let (gx, dy) = gradient_through(&ChannelSpec::awgn(5.0, 1));
    for (a, b) in gx.iter().zip(&dy) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn equalized_fading_gradient_is_identity() {
    let (gx, dy) = gradient_through(&ChannelSpec::flat_fading(5.0, 0.6, 0.8, 1));
    for (a, b) in gx.iter().zip(&dy) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn transmission_is_seed_deterministic() {
    let run = |seed| {
        let g = Graph::<f64>::new();
        let x = g.constant(random(3, 40), &[2, 10, 2]).unwrap();
        let f = normalize_power(&g, &SymbolFrame::new(&g, x).unwrap()).unwrap();
        let y = transmit(&g, &f, &ChannelSpec::awgn(3.0, seed), &[0, 1]).unwrap();
        g.to_vec(y.symbols)
    };
    assert_eq!(run(11), run(11));
    assert_ne!(run(11), run(12));
}

#[test]
fn batching_does_not_change_noise() {
    let spec = ChannelSpec::awgn(3.0, 8);
    let g = Graph::<f64>::new();
    let data = random(4, 40);
    let x = g.constant(data.clone(), &[2, 10, 2]).unwrap();
    let f = normalize_power(&g, &SymbolFrame::new(&g, x).unwrap()).unwrap();
    let both = g.to_vec(transmit(&g, &f, &spec, &[7, 8]).unwrap().symbols);
    let x1 = g.constant(data[20..].to_vec(), &[1, 10, 2]).unwrap();
    let f1 = normalize_power(&g, &SymbolFrame::new(&g, x1).unwrap()).unwrap();
    let alone = g.to_vec(transmit(&g, &f1, &spec, &[8]).unwrap().symbols);
    for (a, b) in both[20..].iter().zip(&alone) {
        assert!((a - b).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn normalized_frames_have_unit_power(seed in any::<u64>(), b in 1usize..4, n in 1usize..20) {
        let g = Graph::<f64>::new();
        let x = g.constant(random(seed, b * n * 2), &[b, n, 2]).unwrap();
        let f = normalize_power(&g, &SymbolFrame::new(&g, x).unwrap()).unwrap();
        for p in f.measured_power(&g) {
            prop_assert!((p - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sigma2_matches_decibel_definition(snr in -10.0f64..40.0) {
        let s = snr_to_sigma2(snr);
        prop_assert!((-10.0 * s.log10() - snr).abs() < 1e-9);
    }
}
