use aonlab_core::channel::{Backend, Caps, ChannelInstance, ImplicitSupport};
use aonlab_core::prior::{DiscretePrior, SignalVector};
use aonlab_core::rng::StreamKey;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// Every k-subset with every sign pattern, as dense vectors of norm one.
fn dense_support(p: usize, k: usize, signed: bool) -> Vec<Vec<f64>> {
    let amp = 1.0 / (k as f64).sqrt();
    let mut out = Vec::new();
    for mask in 0u32..(1 << p) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let idx: Vec<usize> = (0..p).filter(|i| mask >> i & 1 == 1).collect();
        for s in 0..if signed { 1u32 << k } else { 1 } {
            let mut v = vec![0.0; p];
            for (j, &i) in idx.iter().enumerate() {
                v[i] = if s >> j & 1 == 1 { -amp } else { amp };
            }
            out.push(v);
        }
    }
    out
}

fn outer_power(v: &[f64], d: u32) -> Vec<f64> {
    let mut t = vec![1.0];
    for _ in 0..d {
        t = t.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
    }
    t
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn to_dense(x: &SignalVector) -> Vec<f64> {
    let mut v = vec![0.0; x.dim()];
    for (i, a) in x.entries() {
        v[i] = a;
    }
    v
}

#[test]
fn implicit_walk_matches_dense_posterior() {
    let cases = [
        (DiscretePrior::bernoulli(7, 2, 2).unwrap(), 7, 2, false),
        (DiscretePrior::bernoulli(6, 3, 3).unwrap(), 6, 3, false),
        (DiscretePrior::bernoulli_rademacher(5, 2, 2).unwrap(), 5, 2, true),
        (DiscretePrior::bernoulli_rademacher(5, 2, 3).unwrap(), 5, 2, true),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for (prior, p, k, signed) in cases {
        let d = prior.order();
        let implicit = ImplicitSupport::new(prior, 1 << 20, 1 << 20).unwrap();
        let support: Vec<Vec<f64>> = dense_support(p, k, signed).iter().map(|v| outer_power(v, d)).collect();
        for _ in 0..5 {
            let x = prior.sample_signal(&mut rng);
            let xt = outer_power(&to_dense(&x), d);
            let z: Vec<f64> = (0..xt.len()).map(|_| rng.sample(StandardNormal)).collect();
            let lambdas = [0.0, 0.8, 6.0, 30.0];
            let got = implicit.evaluate(&x, &z, &lambdas, true).unwrap();
            for (o, &lambda) in got.iter().zip(&lambdas) {
                let theta = lambda.sqrt();
                let y: Vec<f64> = xt.iter().zip(&z).map(|(s, n)| theta * s + n).collect();
                let scores: Vec<f64> = support.iter().map(|s| theta * dot(s, &y)).collect();
                let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = scores.iter().map(|s| (s - top).exp()).sum();
                let log_z = top + total.ln() - (support.len() as f64).ln() - 0.5 * lambda;
                let mut mean = vec![0.0; xt.len()];
                for (s, sc) in support.iter().zip(&scores) {
                    let w = (sc - top).exp() / total;
                    mean.iter_mut().zip(s).for_each(|(m, v)| *m += w * v);
                }
                let tol = 1e-9 * (1.0 + lambda);
                assert!((o.log_z - log_z).abs() < tol, "{prior:?} λ={lambda}: {} vs {log_z}", o.log_z);
                assert!((o.u_true - dot(&xt, &y)).abs() < tol);
                assert!((o.noise_true - dot(&xt, &z)).abs() < 1e-9);
                assert!((o.norm_sq - dot(&mean, &mean)).abs() < 1e-9);
                assert!((o.overlap_true - dot(&mean, &xt)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn dense_projection_matches_gram_path() {
    let prior = DiscretePrior::bernoulli(6, 2, 2).unwrap();
    let inst = ChannelInstance::with_backend(prior, 3.0, Backend::Gram, &Caps::default()).unwrap();
    let vectors: Vec<Vec<f64>> = inst.gram().unwrap().support.iter().map(to_dense).collect();
    let mut sorted = vectors.clone();
    let mut want_set = dense_support(6, 2, false);
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    want_set.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(sorted, want_set);
    let support: Vec<Vec<f64>> = vectors.iter().map(|v| outer_power(v, 2)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let obs = inst.sample_dense(&mut rng, 1 << 12).unwrap();
        let u = inst.project_dense(&obs.y).unwrap();
        let want: Vec<f64> = support.iter().map(|s| dot(s, &obs.y)).collect();
        for (a, b) in u.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let j = obs.true_index.unwrap();
        assert_eq!(to_dense(&inst.gram().unwrap().support[j]), to_dense(&obs.signal));
    }
}

#[test]
fn projected_noise_has_gram_covariance() {
    let prior = DiscretePrior::bernoulli_rademacher(4, 2, 3).unwrap();
    let inst = ChannelInstance::with_backend(prior, 0.0, Backend::Gram, &Caps::default()).unwrap();
    let g = inst.gram().unwrap();
    let m = g.support.len();
    let n = 40_000;
    let key = StreamKey::named(3, "covariance");
    let draws: Vec<Vec<f64>> = (0..n).map(|i| inst.sample_projections(&mut key.stream(i)).unwrap().u).collect();
    for a in 0..m {
        for b in (a..m).step_by(7) {
            let c: f64 = draws.iter().map(|u| u[a] * u[b]).sum::<f64>() / n as f64;
            // SE of a product of unit-variance normals is at most √2/√n.
            assert!((c - g.gram[(a, b)]).abs() < 5.0 * (2.0 / n as f64).sqrt(), "({a},{b}) {c} vs {}", g.gram[(a, b)]);
        }
    }
}

#[test]
fn common_random_numbers_across_snr() {
    let prior = DiscretePrior::orthogonal(32, 1).unwrap();
    let inst = ChannelInstance::new(prior, 0.0, &Caps::default()).unwrap();
    let key = StreamKey::named(8, "crn");
    let both = inst.trial(&[1.0, 4.0], &mut key.stream(0), true).unwrap();
    let single = inst.trial(&[4.0], &mut key.stream(0), true).unwrap();
    assert_eq!(both[1], single[0]);
    assert_eq!(both[0].noise_true, both[1].noise_true);
}
