//! Quick numerical self-checks run by the `selftest` subcommand.

use std::f64::consts::PI;

use asc_core::fourier::{fft3, ifft3, low_freq_mask};
use asc_core::losses::{mse_consistency, soft_dice_loss};
use asc_core::model::{backward, forward, gradient_check, init_params, NetConfig, ParamVector};
use asc_core::perturb::sample_cuboid;
use asc_core::sched::ema_update;
use asc_core::volume::one_hot;
use asc_core::{Dims, LabelMap, ProbMap, Volume};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Suite {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

fn random_volume(dims: Dims, rng: &mut ChaCha8Rng) -> Volume {
    Volume::from_fn(dims, |_, _, _| rng.gen_range(-1.0..1.0))
}

fn fft_round_trip(rng: &mut ChaCha8Rng) -> Suite {
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let v = random_volume(Dims::cube(16), rng);
        let (back, _) = ifft3(&fft3(&v));
        for (a, b) in v.data().iter().zip(back.data()) {
            worst = worst.max((a - b).abs() as f64);
        }
    }
    Suite::new("fft-round-trip", worst < 1e-5, format!("max error {worst:.2e} over 10 volumes of 16^3"))
}

fn dft(v: &Volume) -> Vec<Complex64> {
    let d = v.dims();
    let mut out = vec![Complex64::new(0.0, 0.0); d.len()];
    for (k, slot) in out.iter_mut().enumerate() {
        let (u, p, q) = d.coords(k);
        for (n, &x) in v.data().iter().enumerate() {
            let (z, y, w) = d.coords(n);
            let angle = -2.0 * PI * ((u * z) as f64 / d.d as f64 + (p * y) as f64 / d.h as f64 + (q * w) as f64 / d.w as f64);
            *slot += Complex64::from_polar(x as f64, angle);
        }
    }
    out
}

fn dft_oracle(rng: &mut ChaCha8Rng) -> Suite {
    let mut worst = 0.0f64;
    for dims in [Dims::new(4, 3, 2), Dims::new(1, 4, 4), Dims::cube(3)] {
        let v = random_volume(dims, rng);
        let fast = fft3(&v);
        for (a, b) in fast.data().iter().zip(dft(&v)) {
            worst = worst.max((a - b).norm());
        }
    }
    Suite::new("dft-oracle", worst < 1e-8, format!("max deviation {worst:.2e}"))
}

fn gradients(rng: &mut ChaCha8Rng) -> Suite {
    let dims = Dims::cube(4);
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let p = init_params(&NetConfig::new(2, 2, seed).expect("valid net"));
        let x = random_volume(dims, rng);
        let labels = LabelMap::new(dims, (0..dims.len()).map(|_| rng.gen_range(0..2u8)).collect()).expect("sized");
        let y = one_hot(&labels, 2).expect("labels in range");
        let target = forward(&init_params(&NetConfig::new(2, 2, seed + 100).expect("valid net")), &x).0;
        let losses: [&dyn Fn(&ProbMap) -> (f64, Vec<f64>); 2] = [
            &|pr| {
                let l = soft_dice_loss(pr, &y).expect("shapes match");
                (l.value, l.grads[0].clone())
            },
            &|pr| {
                let l = mse_consistency(pr, &target).expect("shapes match");
                (l.value, l.grads[0].clone())
            },
        ];
        for loss in losses {
            let (probs, cache) = forward(&p, &x);
            let analytic = backward(&p, &cache, &loss(&probs).1).expect("cache matches");
            let check = gradient_check(&p, &analytic, |q: &ParamVector| {
                let (pr, c) = forward(q, &x);
                (loss(&pr).0, c.relu_pattern())
            });
            worst = worst.max(check.max_rel_error);
        }
    }
    Suite::new("gradient-check", worst < 1e-3, format!("max relative error {worst:.2e}"))
}

fn mask_fraction(rng: &mut ChaCha8Rng) -> Suite {
    let box_size = low_freq_mask(Dims::cube(144), 0.1).map(|m| m.cardinality()).unwrap_or(0);
    let dims = Dims::cube(24);
    let mut bad = 0;
    for _ in 0..1000 {
        match sample_cuboid(dims, rng) {
            Ok(m) if m.is_contained() && (0.20..=0.55).contains(&m.fraction()) => {}
            _ => bad += 1,
        }
    }
    Suite::new(
        "mask-fraction",
        box_size == 24389 && bad == 0,
        format!("low-frequency box {box_size} at 144^3, {bad} of 1000 cuboids out of bounds"),
    )
}

fn ema_contraction(rng: &mut ChaCha8Rng) -> Suite {
    let layout = NetConfig::new(2, 2, 0).expect("valid net").layout();
    let draw = |rng: &mut ChaCha8Rng| {
        ParamVector::from_values(layout, (0..layout.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .expect("sized")
    };
    let student = draw(rng);
    let mut teacher = draw(rng);
    let dist = |t: &ParamVector| {
        t.values().iter().zip(student.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let d0 = dist(&teacher);
    let mut worst = 0.0f64;
    for k in 1..=10 {
        ema_update(&mut teacher, &student, 0.99).expect("same layout");
        let expected = 0.99f64.powi(k) * d0;
        worst = worst.max((dist(&teacher) - expected).abs() / expected);
    }
    Suite::new("ema-contraction", worst < 1e-6, format!("max relative deviation {worst:.2e}"))
}

pub fn run_all(seed: u64) -> Vec<Suite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        fft_round_trip(&mut rng),
        dft_oracle(&mut rng),
        gradients(&mut rng),
        mask_fraction(&mut rng),
        ema_contraction(&mut rng),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for s in run_all(0) {
            assert!(s.passed, "{}: {}", s.name, s.detail);
        }
    }
}
