//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.
//!
//! Run alone with `cargo test -p vaemm --test acceptance`.

use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vaemm::cli::{cmd_enhance, cmd_synth, EnhanceArgs, SynthArgs};
use vaemm::io::scene_files;
use vaemm::metrics::sdr;
use vaemm::mh::{mh_sample, LatentSamples, MhConfig};
use vaemm::models::{LatentGaussian, ModelBundle};
use vaemm::nmf::{is_divergence, noise_variance, update_h, update_w, NmfParams};
use vaemm::spectral::{istft, stft, AudioSignal, ComplexSpectrogram, StftParams};
use vaemm::synth::{grid_posterior_oracle, toy_bundle, GridSpec, SceneSpec, SyntheticScene, ToyBundleSpec};
use vaemm::vem::{
    assemble_power, compute_eta, compute_gamma, e_step_alpha, e_step_s, log_rz, run, Component, FramePosterior,
    Mode, VemConfig,
};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn timed(limit_s: u64, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let ok = within(elapsed, limit_s);
    Outcome::new(
        out.passed && ok,
        format!("{}; {:.1} s (limit {limit_s} s)", out.detail, elapsed.as_secs_f64()),
    )
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

// 1
fn stft_round_trip() -> Outcome {
    let params = StftParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..16_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let signal = AudioSignal::new(x, 16_000).unwrap();
        let y = istft(&stft(&signal, &params).unwrap(), 16_000).unwrap();
        let err: f64 = signal.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).powi(2)).sum();
        let norm: f64 = signal.samples.iter().map(|a| a * a).sum();
        if y.len() != signal.len() {
            return Outcome::new(false, format!("length {} after synthesis of {}", y.len(), signal.len()));
        }
        worst = worst.max((err / norm).sqrt());
    }
    Outcome::new(worst < 1e-10, format!("worst relative L2 error {worst:.2e} over 100 signals"))
}

// 2
fn mh_correctness() -> Outcome {
    let retained = 100_000;
    let burn_in = 1_000;
    // Long-run configuration: proposal variance 2.4² times the target variance.
    let config = |var: f64| MhConfig {
        n_iters: burn_in + retained,
        burn_in,
        epsilon: 2.4 * 2.4 * var,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let normal = mh_sample(|z| -0.5 * z[0] * z[0], &[0.0], &config(1.0), &mut rng).unwrap();
    let xs: Vec<f64> = normal.samples.iter().map(|z| z[0]).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    let mut ok = mean.abs() < 0.05 && (0.9..=1.1).contains(&var);
    let mut detail = format!("standard normal mean {mean:.4} var {var:.4}; TV");

    for t in 0..5u64 {
        let bundle = toy_bundle(&ToyBundleSpec {
            latent: 1,
            visual: 1,
            freq: 8,
            prior_std: 0.5,
            seed: 20 + t,
            ..ToyBundleSpec::default()
        })
        .unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(200 + t);
        let m: Vec<Complex64> = (0..8)
            .map(|_| Complex64::new(r.random_range(-1.5..1.5), r.random_range(-1.5..1.5)))
            .collect();
        let nu: Vec<f64> = (0..8).map(|_| r.random_range(0.0..0.2)).collect();
        let v = [r.random_range(-1.0..1.0)];
        let pi_n = r.random_range(0.0..1.0);
        let target = |z: f64| log_rz(&bundle, &m, &nu, &v, pi_n, &[z]).unwrap();
        let oracle = grid_posterior_oracle(target, GridSpec::default()).unwrap();
        let run = mh_sample(|z| target(z[0]), &[0.0], &config(oracle.variance), &mut r).unwrap();
        let samples: Vec<f64> = run.samples.iter().map(|z| z[0]).collect();
        let tv = oracle.tv_distance(&samples, 50);
        ok &= tv < 0.05;
        detail += &format!(" {tv:.3}");
    }
    Outcome::new(ok, detail)
}

// 3
fn nmf_monotonicity() -> Outcome {
    let mut worst_rise = f64::NEG_INFINITY;
    let mut worst_fixed: f64 = 0.0;
    for rank in [1, 2, 4, 8] {
        for p in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * rank as u64 + p);
            let v = Array2::from_shape_simple_fn((64, 32), || rng.random::<f64>() * 5.0);
            let mut params = NmfParams::random(64, 32, rank, &mut rng);
            let mut prev = is_divergence(&v, &noise_variance(&params)).unwrap();
            for _ in 0..100 {
                for step in [update_h, update_w] {
                    params = step(&params, &v).unwrap();
                    let d = is_divergence(&v, &noise_variance(&params)).unwrap();
                    worst_rise = worst_rise.max(d - prev);
                    prev = d;
                }
            }
            let truth = NmfParams::random(64, 32, rank, &mut rng);
            let exact = noise_variance(&truth);
            let h = update_h(&truth, &exact).unwrap();
            let w = update_w(&truth, &exact).unwrap();
            for (a, b) in h.h.iter().zip(&truth.h).chain(w.w.iter().zip(&truth.w)) {
                worst_fixed = worst_fixed.max((a - b).abs() / b);
            }
        }
    }
    Outcome::new(
        worst_rise <= 1e-10 && worst_fixed <= 1e-12,
        format!("largest divergence step {worst_rise:.2e}, fixed-point deviation {worst_fixed:.2e}"),
    )
}

// Direct-formula oracles for the E-steps.
fn oracle_eta(bundle: &ModelBundle, rows: &[Vec<f64>], v: &[f64], audio: bool) -> Vec<f64> {
    let mut eta = vec![0.0; bundle.n_bins()];
    for z in rows {
        let var = if audio {
            bundle.decode_a(z).unwrap()
        } else {
            bundle.decode_av(z, v).unwrap()
        };
        for (e, s) in eta.iter_mut().zip(var) {
            *e += 1.0 / s / rows.len() as f64;
        }
    }
    eta
}

fn oracle_alpha(bundle: &ModelBundle, rows: &[Vec<f64>], v: &[f64], power: &[f64], pi: f64) -> f64 {
    let speech = |var: Vec<f64>| -> f64 {
        var.iter()
            .zip(power)
            .map(|(s, p)| -(std::f64::consts::PI * s).ln() - p / s)
            .sum()
    };
    let prior = bundle.prior_av(v).unwrap();
    let mut diff = 0.0;
    for z in rows {
        diff += speech(bundle.decode_a(z).unwrap()) + LatentGaussian::standard(z.len()).log_density(z)
            - speech(bundle.decode_av(z, v).unwrap())
            - prior.log_density(z);
    }
    1.0 / (1.0 + (-(diff / rows.len() as f64 + (pi / (1.0 - pi)).ln())).exp())
}

// 4
fn e_step_oracles() -> Outcome {
    let tol = 1e-9;
    let mut failures = Vec::new();
    let f = 16;
    let params = StftParams::for_bins(f).unwrap();
    for state in 0..100u64 {
        let bundle = toy_bundle(&ToyBundleSpec {
            seed: 300 + state,
            prior_std: 0.5,
            ..ToyBundleSpec::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(state);
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..2).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let samples = LatentSamples::from_rows(&rows).unwrap();
        let v: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<Complex64> = (0..f)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let noise: Vec<f64> = (0..f).map(|_| rng.random_range(0.05..2.0)).collect();
        let pi_n = rng.random_range(0.0..1.0);
        let pi = rng.random_range(0.05..0.95);

        let eta_a = compute_eta(&bundle, &samples, Some(&v), Component::Audio).unwrap();
        let eta_av = compute_eta(&bundle, &samples, Some(&v), Component::AudioVisual).unwrap();
        let want_a = oracle_eta(&bundle, &rows, &v, true);
        let want_av = oracle_eta(&bundle, &rows, &v, false);
        if !(0..f).all(|i| close(eta_a[i], want_a[i], tol) && close(eta_av[i], want_av[i], tol)) {
            failures.push(format!("eta@{state}"));
        }

        let gamma = compute_gamma(Some(&eta_a), Some(&eta_av), pi_n);
        let want_gamma: Vec<f64> = (0..f)
            .map(|i| 1.0 / (pi_n * want_a[i] + (1.0 - pi_n) * want_av[i]))
            .collect();
        if !(0..f).all(|i| close(gamma[i], want_gamma[i], tol)) {
            failures.push(format!("gamma@{state}"));
        }

        let (m, nu) = e_step_s(&x, &gamma, &noise);
        let ok_s = (0..f).all(|i| {
            let g = want_gamma[i];
            let denom = g + noise[i];
            let want_m = Complex64::new(g * x[i].re / denom, g * x[i].im / denom);
            close(m[i].re, want_m.re, tol) && close(m[i].im, want_m.im, tol) && close(nu[i], g * noise[i] / denom, tol)
        });
        if !ok_s {
            failures.push(format!("speech@{state}"));
        }

        let pi_post = e_step_alpha(&bundle, &samples, &v, &m, &nu, pi).unwrap();
        let power: Vec<f64> = (0..f).map(|i| m[i].re * m[i].re + m[i].im * m[i].im + nu[i]).collect();
        if !close(pi_post, oracle_alpha(&bundle, &rows, &v, &power, pi), tol) {
            failures.push(format!("alpha@{state}"));
        }

        let frames: Vec<FramePosterior> = (0..3)
            .map(|k| FramePosterior {
                m: m.iter().map(|c| c * (k as f64 + 0.5)).collect(),
                nu: nu.iter().map(|n| n * (k + 1) as f64).collect(),
                pi_n,
                z_samples: samples.clone(),
                gamma: gamma.clone(),
                eta_a: Some(eta_a.clone()),
                eta_av: Some(eta_av.clone()),
                acceptance: 0.0,
            })
            .collect();
        let xs = Array2::from_shape_fn((f, 3), |(i, k)| x[i] * (1.0 + k as f64));
        let spec = ComplexSpectrogram::from_values(xs.clone(), params).unwrap();
        let power = assemble_power(&spec, &frames);
        let ok_v = (0..f).all(|i| {
            (0..3).all(|k| {
                let d = xs[[i, k]] - frames[k].m[i];
                close(power[[i, k]], d.re * d.re + d.im * d.im + frames[k].nu[i], tol)
            })
        });
        if !ok_v {
            failures.push(format!("V@{state}"));
        }
    }
    Outcome::new(
        failures.is_empty(),
        if failures.is_empty() {
            "eta, gamma, speech, switch and V match on 100 states".to_string()
        } else {
            format!("mismatches: {}", failures.join(" "))
        },
    )
}

fn scene_config(seed: u64, mode: Mode, iters: usize) -> VemConfig {
    VemConfig {
        n_vem_iters: iters,
        nmf_rank: 2,
        seed,
        mode,
        ..VemConfig::default()
    }
}

// 5
fn degenerate_reduction() -> Outcome {
    let mut ok = true;
    for seed in 0..2u64 {
        let scene = SceneSpec {
            seed,
            ..SceneSpec::default()
        }
        .build()
        .unwrap();
        for (mode, pin) in [(Mode::AudioOnly, 1.0), (Mode::AudioVisual, 0.0)] {
            let dedicated = run(&scene.mixture, Some(&scene.visuals), &scene.bundle, &scene_config(seed, mode, 30)).unwrap();
            let pinned_config = VemConfig {
                pinned_pi: Some(pin),
                ..scene_config(seed, Mode::Mix, 30)
            };
            let pinned = run(&scene.mixture, Some(&scene.visuals), &scene.bundle, &pinned_config).unwrap();
            ok &= dedicated.enhanced.values == pinned.enhanced.values && dedicated.trace == pinned.trace;
        }
    }
    Outcome::new(ok, "pinned mix vs dedicated a and av, 2 scenes, 30 iterations, exact equality")
}

struct SceneRun {
    seed: u64,
    scene: SyntheticScene,
    sdr_in: f64,
    /// Output SDR for mix, av, a.
    sdr_out: [f64; 3],
    pi_n: Vec<f64>,
    q: Vec<f64>,
}

const ITERS: usize = 200;
const SEEDS: u64 = 10;

fn run_scene(seed: u64, corrupt: bool, reuse_audio: Option<f64>) -> SceneRun {
    let scene = SceneSpec {
        seed,
        corrupt: corrupt.then_some(1.0 / 3.0),
        ..SceneSpec::default()
    }
    .build()
    .unwrap();
    let to_signal = |s: &ComplexSpectrogram| istft(s, 16_000).unwrap();
    let clean = to_signal(&scene.clean);
    let sdr_in = sdr(&clean, &to_signal(&scene.mixture)).unwrap();
    let mut sdr_out = [0.0; 3];
    let mut pi_n = Vec::new();
    let mut q = Vec::new();
    for (k, mode) in [Mode::Mix, Mode::AudioVisual, Mode::AudioOnly].into_iter().enumerate() {
        if let (Mode::AudioOnly, Some(value)) = (mode, reuse_audio) {
            sdr_out[k] = value;
            continue;
        }
        let out = run(&scene.mixture, Some(&scene.visuals), &scene.bundle, &scene_config(seed, mode, ITERS)).unwrap();
        sdr_out[k] = sdr(&clean, &to_signal(&out.enhanced)).unwrap();
        if mode == Mode::Mix {
            pi_n = out.pi_n();
            q = out.trace.iter().map(|t| t.q).collect();
        }
    }
    SceneRun {
        seed,
        scene,
        sdr_in,
        sdr_out,
        pi_n,
        q,
    }
}

// 6
fn mixture_recovery(runs: &[SceneRun]) -> Outcome {
    let mut ordered = 0;
    let mut accuracy = 0.0;
    let mut sums = [0.0; 3];
    for r in runs {
        let (mut pc, mut nc, mut pk, mut nk, mut tp, mut tn) = (0.0, 0, 0.0, 0, 0, 0);
        for (p, corrupted) in r.pi_n.iter().zip(&r.scene.mask) {
            if *corrupted {
                pc += p;
                nc += 1;
                tp += usize::from(*p > 0.5);
            } else {
                pk += p;
                nk += 1;
                tn += usize::from(*p <= 0.5);
            }
        }
        ordered += usize::from(pc / nc as f64 > pk / nk as f64);
        accuracy += 0.5 * (tp as f64 / nc as f64 + tn as f64 / nk as f64) / runs.len() as f64;
        for (s, o) in sums.iter_mut().zip(r.sdr_out) {
            *s += o / runs.len() as f64;
        }
    }
    let ok = ordered >= 9 && accuracy >= 0.8 && sums[0] >= sums[1] && sums[0] >= sums[2];
    Outcome::new(
        ok,
        format!(
            "corrupted > clean switch posterior in {ordered}/10, balanced accuracy {accuracy:.3}, mean SDR mix {:.2} av {:.2} a {:.2} dB",
            sums[0], sums[1], sums[2]
        ),
    )
}

// 7
fn enhancement_sanity(runs: &[SceneRun]) -> Outcome {
    let mut deltas = [0.0; 3];
    for r in runs {
        for (d, o) in deltas.iter_mut().zip(r.sdr_out) {
            *d += (o - r.sdr_in) / runs.len() as f64;
        }
    }
    let worst: Vec<f64> = (0..3)
        .map(|k| runs.iter().map(|r| r.sdr_out[k] - r.sdr_in).fold(f64::INFINITY, f64::min))
        .collect();
    let ok = deltas.iter().all(|d| *d > 0.0) && deltas[1] >= deltas[2];
    Outcome::new(
        ok,
        format!(
            "mean SDR delta mix {:.2} av {:.2} a {:.2} dB (worst seed {:.2} {:.2} {:.2})",
            deltas[0], deltas[1], deltas[2], worst[0], worst[1], worst[2]
        ),
    )
}

// 8
fn q_trend(runs: &[SceneRun]) -> Outcome {
    let mut good = 0;
    for r in runs {
        let average: Vec<f64> = r.q[..ITERS / 2].windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        good += usize::from(average.windows(2).all(|w| w[1] >= w[0]));
    }
    Outcome::new(good >= 9, format!("moving average non-decreasing in {good}/10 runs"))
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

// 9
fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    cmd_synth(&SynthArgs::new(&scene)).unwrap();
    let enhance = |name: &str, threads: usize| {
        let out = dir.path().join(name);
        let mut args = EnhanceArgs::new(scene.join(scene_files::MIXTURE), scene.join(scene_files::MODEL), out.join("enhanced.wav"));
        args.visual = Some(scene.join(scene_files::VISUAL));
        args.iters = 20;
        args.nmf_rank = 2;
        args.seed = 4;
        args.threads = Some(threads);
        let files = cmd_enhance(&args).unwrap();
        [files.wav, files.spectrogram, files.frame_pi, files.diagnostics].map(|p| read(&p))
    };
    let first = enhance("one", 1);
    let again = enhance("again", 1);
    let eight = enhance("eight", 8);
    Outcome::new(
        first == again && first == eight,
        "WAV, spectrogram, pi_n and diagnostics identical across repeat and 1 vs 8 threads",
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, outcome: Outcome| {
        println!("{} {name}: {}", if outcome.passed { "PASS" } else { "FAIL" }, outcome.detail);
        results.push((name, outcome));
    };
    report("1 STFT round trip", timed(5, stft_round_trip));
    report("2 MH correctness", timed(60, mh_correctness));
    report("3 NMF monotonicity", timed(30, nmf_monotonicity));
    report("4 E-step oracles", timed(10, e_step_oracles));
    report("5 degenerate reduction", degenerate_reduction());

    let start = Instant::now();
    let corrupted: Vec<SceneRun> = (0..SEEDS).map(|seed| run_scene(seed, true, None)).collect();
    let corrupted_time = start.elapsed();
    let recovery = mixture_recovery(&corrupted);
    report(
        "6 mixture recovery",
        Outcome::new(
            recovery.passed && within(corrupted_time, 600),
            format!("{}; {:.0} s (limit 600 s)", recovery.detail, corrupted_time.as_secs_f64()),
        ),
    );

    // Mode a ignores the visuals, so its runs on the same mixtures are reused.
    let start = Instant::now();
    let clean: Vec<SceneRun> = corrupted
        .iter()
        .map(|r| run_scene(r.seed, false, Some(r.sdr_out[2])))
        .collect();
    let clean_time = start.elapsed();
    let sanity = enhancement_sanity(&clean);
    report(
        "7 enhancement sanity",
        Outcome::new(
            sanity.passed && within(clean_time, 300),
            format!("{}; {:.0} s (limit 300 s)", sanity.detail, clean_time.as_secs_f64()),
        ),
    );
    report("8 objective trend", q_trend(&corrupted));
    report("9 reproducibility", reproducibility());

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.passed).map(|(n, _)| *n).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
