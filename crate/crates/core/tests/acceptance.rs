//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::f64::consts::PI;

use pulsemech::condition::{
    analytic_variance, decoherence_envelope, full_sequence_variance, gaussian_update,
    ideal_estimator_samples, post_select, run_train, uncertainty_product, Conditioning, Estimator,
    GaussianState, LinearConversion, ModeTerm, PulseSchedule, Selection, TrainSetup,
};
use pulsemech::mechsim::{sample_thermal_state, RngStream};
use pulsemech::params::{
    derive_beta, derive_chi, effective_temperature, presets, sigma_m, thermal_width, MechMode,
};
use pulsemech::runner::config::TransductionModel;
use pulsemech::runner::{self, ExperimentConfig, Preset};
use pulsemech::stats::{bootstrap_se, variance};
use pulsemech::tomography::{
    fwhm_contour, inverse_radon, project, Axis, GridSpec, MarginalSet, Projections, ReconOptions,
};
use pulsemech::transduce::Transducer;
use rand::Rng;

fn report(name: &str, ok: bool, detail: String) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn config(p: Preset) -> (ExperimentConfig, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::preset(p);
    c.output_dir = dir.path().to_path_buf();
    (c, dir)
}

#[test]
fn beta_from_device_parameters() {
    let beta = derive_beta(&presets::cavity()).unwrap();
    // 2 g0 / kappa with g0 = 25 MHz, kappa = 20.4 GHz.
    let oracle = 2.0 * 25e6 / 20.4e9;
    let ok = (beta - oracle).abs() < 1e-15 && (beta - 2.451e-3).abs() < 5e-7 && (beta - 2.5e-3).abs() < 1e-4;
    report("beta", ok, format!("{beta:.6e} (oracle {oracle:.6e})"));
}

#[test]
fn chi_and_imprecision() {
    let chi = derive_chi(&presets::cavity(), &presets::pulse()).unwrap();
    let oracle = 8.0 * (0.013 * 0.35 * 0.013 * 2e6_f64).sqrt() * 25e6 / 20.4e9;
    let sm = sigma_m(chi);
    let ok = (chi - oracle).abs() < 1e-12 && (chi - 0.107).abs() <= 0.005 && (sm - 9.4).abs() < 0.1;
    report("chi", ok, format!("chi = {chi:.4} (oracle {oracle:.4}), sigma_m = {sm:.2}"));
}

#[test]
fn thermal_width_two_modes() {
    let modes = presets::tomography_modes(0.0);
    let s = thermal_width(&modes).unwrap();
    // Independent oracle: n_th = 1 / (exp(hbar w / kT) - 1) per mode.
    let (hbar, kb) = (1.054_571_817e-34, 1.380_649e-23);
    let oracle: f64 = [3.1081e6, 3.2280e6]
        .iter()
        .map(|f: &f64| {
            let n = 1.0 / ((hbar * 2.0 * PI * f / (kb * 3.2)).exp() - 1.0);
            2.0 * n + 1.0
        })
        .sum::<f64>()
        .sqrt();
    let ok = (s - 290.0).abs() <= 3.0 && (s / oracle - 1.0).abs() < 2e-3;
    report("sigma_th", ok, format!("{s:.2} x_zpf (oracle {oracle:.2})"));
}

#[test]
fn thermal_histogram_and_calibration_fit() {
    let (mut c, _dir) = config(Preset::Thermal);
    c.trains = 200_000;
    let r = runner::thermal(&c).unwrap();
    let a = r.truth_scale_a;
    let peaks_ok = r
        .histogram_peaks
        .iter()
        .zip([-0.5 * a, 0.5 * a])
        .all(|(p, t)| (p - t).abs() <= r.bin_width);
    let ok = peaks_ok && r.sigma_delta_rel_err.abs() < 0.02 && r.scale_a_rel_err.abs() < 0.02;
    report(
        "thermal histogram",
        ok,
        format!(
            "peaks {:?} (bin {:.4}), sigma_delta err {:+.3}%, A err {:+.3}%",
            r.histogram_peaks,
            r.bin_width,
            100.0 * r.sigma_delta_rel_err,
            100.0 * r.scale_a_rel_err
        ),
    );
}

#[test]
fn post_selection_retention() {
    let c = ExperimentConfig::preset(Preset::Tomography);
    let phys = c.physical().unwrap();
    let setup = TrainSetup {
        modes: &phys.modes,
        transducer: phys.transducer,
        noise_sd: phys.noise_sd,
        conversion: LinearConversion { gain: phys.beta },
        beta: phys.beta,
    };
    let schedule = PulseSchedule::new(1.5 * PI, Conditioning::TwoPulse).unwrap();
    let samples: Vec<_> = (0..200_000u64)
        .map(|k| {
            let mut rng = RngStream::for_train(11, 9, 0, k);
            let s = sample_thermal_state(&phys.modes, 0.05, &mut rng).unwrap();
            run_train(k, s, &schedule, &setup, &mut rng).unwrap().1
        })
        .collect();
    // Per quadrature: X from the last two preparation pulses, Y from the first two.
    let (_, x) = post_select(&samples, Selection::Conditioning(Conditioning::OnePulse), 0.31).unwrap();
    let swapped: Vec<_> = samples
        .iter()
        .map(|s| {
            let mut t = s.clone();
            t.h_prep = [s.h_prep[2], s.h_prep[3], s.h_prep[0], s.h_prep[1]];
            t.lower_branch = [s.lower_branch[2], s.lower_branch[3], s.lower_branch[0], s.lower_branch[1]];
            t
        })
        .collect();
    let (_, y) = post_select(&swapped, Selection::Conditioning(Conditioning::OnePulse), 0.31).unwrap();
    let ok = [&x, &y]
        .iter()
        .all(|s| (s.retention - 0.33).abs() <= 0.03 && s.wrong_branch_fraction <= 5e-4);
    report(
        "post-selection",
        ok,
        format!(
            "retention X {:.4}, Y {:.4}; wrong branch X {:.2e}, Y {:.2e}",
            x.retention, y.retention, x.wrong_branch_fraction, y.wrong_branch_fraction
        ),
    );
}

#[test]
fn noise_floor_ratios() {
    let (c, _dir) = config(Preset::NoiseFloor);
    assert_eq!(c.trains, 100_000);
    let r = runner::noise_floor(&c).unwrap();
    let row = &r.rows[0];
    let ratio_ok = (row.conditional_ratio / 1.75f64.sqrt() - 1.0).abs() < 0.02
        && (row.nonconditional_ratio / 1.25f64.sqrt() - 1.0).abs() < 0.02;

    // Shot noise scaled to 8.8 x_zpf through the photon number.
    let (mut c2, _dir2) = config(Preset::NoiseFloor);
    let sm = c2.physical().unwrap().sigma_m;
    c2.pulse.n_photons *= (sm / 8.8).powi(2);
    let r2 = runner::noise_floor(&c2).unwrap();
    let row2 = &r2.rows[0];
    let worked_ok = (row2.conditional_width / 11.67 - 1.0).abs() < 0.02
        && (row2.nonconditional_width / 9.92 - 1.0).abs() < 0.02
        && (row2.corrected_from_conditional / 8.8 - 1.0).abs() < 0.02
        && (row2.corrected_from_nonconditional / 8.8 - 1.0).abs() < 0.02
        && (11.67 / 1.75f64.sqrt() / 8.8 - 1.0).abs() < 0.02
        && (9.92 / 1.25f64.sqrt() / 8.8 - 1.0).abs() < 0.02;
    report(
        "noise floor",
        ratio_ok && worked_ok,
        format!(
            "ratios {:.4}, {:.4} (expect {:.4}, {:.4}); at 8.8: widths {:.2}, {:.2} -> {:.2}, {:.2}",
            row.conditional_ratio,
            row.nonconditional_ratio,
            1.75f64.sqrt(),
            1.25f64.sqrt(),
            row2.conditional_width,
            row2.nonconditional_width,
            row2.corrected_from_conditional,
            row2.corrected_from_nonconditional
        ),
    );
}

#[test]
fn oracle_equivalence() {
    let trains = 20_000;
    let n_th = 50.0;
    let one = vec![MechMode::new(1.0, 1.0, n_th).unwrap()];
    let two = vec![MechMode::new(1.0, 1.0, n_th).unwrap(), MechMode::new(1.0386, 1.0, 0.8 * n_th).unwrap()];
    let near = vec![MechMode::new(1.0, 1.0, n_th).unwrap(), MechMode::new(1.0, 1.0, 0.8 * n_th).unwrap()];
    let cases: [(&str, Estimator, &Vec<MechMode>); 7] = [
        ("diff/1", Estimator::Diff, &one),
        ("one-pulse/1", Estimator::OnePulse, &one),
        ("diff/2", Estimator::Diff, &two),
        ("one-pulse/2", Estimator::OnePulse, &two),
        ("two-pulse/1", Estimator::TwoPulse, &one),
        ("two-pulse/2", Estimator::TwoPulse, &two),
        ("two-pulse-near/2", Estimator::TwoPulseNearDegenerate, &near),
    ];
    let mut worst: (f64, String) = (0.0, String::new());
    let mut fails = Vec::new();
    let mut checked = 0;
    for (ci, (name, kind, modes)) in cases.iter().enumerate() {
        let terms = ModeTerm::from_modes(modes);
        for gt in [0.0, 0.01, 1.0] {
            // gamma = Gamma / 2 = 0.5, so t = 2 gamma_t.
            let t = gt / modes[0].dephasing_rate();
            for k in 0..17 {
                let theta = k as f64 * PI / 8.0;
                let want = analytic_variance(*kind, theta, t, &terms);
                // One stream per formula: points along theta and gamma_t share
                // random numbers, so a formula error shows as a coherent offset.
                let seed = 1000 + ci as u64;
                let xs = ideal_estimator_samples(*kind, theta, t, modes, trains, seed).unwrap();
                let got = variance(&xs);
                let se = bootstrap_se(&xs, 200, seed, variance).unwrap();
                checked += 1;
                let ok = (got - want).abs() <= 3.0 * se || (want.abs() < 1e-9 && got.abs() < 1e-9);
                let z = if want.abs() > 1e-9 && se > 0.0 { (got - want).abs() / se } else { 0.0 };
                if ok && z > worst.0 {
                    worst = (z, format!("{name} gt={gt} k={k}"));
                }
                if !ok {
                    fails.push(format!("{name} gt={gt} theta={k}pi/8: {got:.4} vs {want:.4} (se {se:.4})"));
                }
            }
        }
    }

    // Full-sequence formula against the simulated pulse train (linear, noise-free).
    let m2 = MechMode::new(2.0 * PI * 3.2280e6, 0.0, 60.0).unwrap();
    let m1 = MechMode::new(2.0 * PI * 3.1081e6, 0.0, 60.0).unwrap();
    let modes = vec![m1, m2];
    let beta = 2.451e-3;
    let setup = TrainSetup {
        modes: &modes,
        transducer: Transducer::Linear { beta },
        noise_sd: 0.0,
        conversion: LinearConversion { gain: beta },
        beta,
    };
    for k in 0..17 {
        let theta = PI + k as f64 * PI / 16.0;
        let schedule = PulseSchedule::new(theta, Conditioning::TwoPulse).unwrap();
        let xs: Vec<f64> = (0..trains as u64)
            .map(|n| {
                let mut rng = RngStream::for_train(77, 1, k, n);
                let s = sample_thermal_state(&modes, 0.05, &mut rng).unwrap();
                run_train(n, s, &schedule, &setup, &mut rng).unwrap().1.s_cond
            })
            .collect();
        let want = full_sequence_variance(theta, m2.omega / m1.omega, m2.quadrature_variance());
        let got = variance(&xs);
        let se = bootstrap_se(&xs, 200, 500 + k as u64, variance).unwrap();
        checked += 1;
        if (got - want).abs() > 3.0 * se {
            fails.push(format!("full sequence theta={:.4}pi: {got:.3} vs {want:.3} (se {se:.3})", theta / PI));
        }
    }
    report(
        "oracle equivalence",
        fails.is_empty(),
        format!("{} of {checked} points outside 3 SE {:?}; largest passing z {:.2} at {}", fails.len(), fails, worst.0, worst.1),
    );
}

#[test]
fn width_versus_angle_overlay() {
    let (mut c, _dir) = config(Preset::Tomography);
    c.transduction.model = TransductionModel::Linear;
    c.selection.postselect = false;
    c.trains = 100_000;
    c.tomography.write_samples = false;
    let r = runner::tomo(&c).unwrap();
    let phys = c.physical().unwrap();
    let nf2 = 1.75 / (phys.chi * phys.chi);
    let (m1, m2) = (phys.modes[0], phys.modes[1]);
    let mut worst = 0.0_f64;
    let mut min_width = f64::INFINITY;
    let mut fails = Vec::new();
    for row in r.widths.iter().filter(|w| w.conditioning == "two-pulse" && w.selection == "all") {
        let overlay = (full_sequence_variance(row.theta, m2.omega / m1.omega, m2.quadrature_variance()) + nf2).sqrt();
        let z = (row.sample_sd - overlay).abs() / row.mc_width_se;
        worst = worst.max(z);
        if z > 3.0 {
            fails.push(format!("{:.3}pi: {:.2} vs {:.2}", row.theta_over_pi, row.sample_sd, overlay));
        }
        min_width = min_width.min(row.sample_sd);
    }
    let rel = min_width / 58.0 - 1.0;
    report(
        "width overlay",
        fails.is_empty() && rel.abs() <= 0.20,
        format!("max |z| {worst:.2} {fails:?}; minimum width {min_width:.2} ({:+.1}% vs 58)", 100.0 * rel),
    );
}

#[test]
fn width_to_temperature() {
    let t = effective_temperature(71.5, 2.0 * PI * 3.1081e6).unwrap();
    report("temperature mapping", (t / 0.380 - 1.0).abs() < 0.05, format!("{:.1} mK", t * 1e3));
}

#[test]
fn decoherence_envelope_and_rate() {
    let (c, _dir) = config(Preset::Decoherence);
    assert_eq!(c.trains, 1000);
    let r = runner::decoherence(&c).unwrap();
    let mut fails = Vec::new();
    for row in &r.rows {
        let floor_env = (row.envelope.powi(2) + row.noise_floor.powi(2)).sqrt();
        if (row.mc_width - row.analytic_width).abs() > 3.0 * row.mc_width_se {
            fails.push(format!("n={} {:+}ns: {:.2} vs {:.2}", row.n, row.offset_ns, row.mc_width, row.analytic_width));
        }
        if row.mc_width + 3.0 * row.mc_width_se < floor_env {
            fails.push(format!("n={} below envelope", row.n));
        }
    }
    // Where the two modes rephase the width sits on the envelope.
    let omega = 2.0 * PI * 3.090e6;
    let n_th = c.physical().unwrap().modes[0].n_th;
    let mut rephase = Vec::new();
    for row in r.rows.iter().filter(|r| r.offset_ns == 0.0 && [27, 54, 81].contains(&r.n)) {
        let env = decoherence_envelope(row.theta / omega, 2.0 * PI * 400.0, n_th).unwrap();
        let target = (env * env + row.noise_floor.powi(2)).sqrt();
        rephase.push((row.n, row.mc_width, target));
        if (row.mc_width / target - 1.0).abs() > 0.15 {
            fails.push(format!("rephasing n={} width {:.2} vs envelope {:.2}", row.n, row.mc_width, target));
        }
    }
    let fit = r.fit.as_ref().expect("rate fit");
    report(
        "decoherence",
        fails.is_empty() && fit.rel_err.abs() <= 0.15,
        format!(
            "Gamma/2pi fit {:.1} Hz vs {:.0} ({:+.1}%), rephasing {:?}, {:?}",
            fit.gamma_fit_hz,
            fit.gamma_true_hz,
            100.0 * fit.rel_err,
            rephase,
            fails
        ),
    );
}

#[test]
fn gaussian_update_bound() {
    let mut rng = RngStream::new(4242, 0);
    let mut fails = 0;
    let mut min_product = f64::INFINITY;
    for k in 0..1000 {
        // Physical detection: eta_out <= eta_in, so the ratio is at least one;
        // weak measurements (chi <= 1) are also drawn with any ratio.
        let (chi, rho) = if k % 2 == 0 {
            (rng.rng().random_range(1e-3..5.0), rng.rng().random_range(1.0..10.0))
        } else {
            (rng.rng().random_range(1e-3..1.0), rng.rng().random_range(1e-3..1.0))
        };
        let a: f64 = rng.rng().random_range(0.5..500.0);
        let b: f64 = rng.rng().random_range(0.5..500.0);
        let c: f64 = rng.rng().random_range(-0.99..0.99) * (a * b).sqrt();
        let prior = GaussianState {
            mean: [rng.normal() * 10.0, rng.normal() * 10.0],
            cov: [[a, c], [c, b]],
        };
        let post = gaussian_update(&prior, rng.normal() * 20.0, chi, rho, rng.normal()).unwrap();
        let u = uncertainty_product(chi, rho);
        min_product = min_product.min(u);
        if u.is_nan() || u < 1.0 - 1e-12 || !post.is_psd(1e-9) {
            fails += 1;
        }
    }
    report(
        "gaussian update",
        fails == 0,
        format!("{fails} of 1000 draws violate; smallest product {min_product:.4}"),
    );
}

fn ellipse_mean_diameter(cov: [[f64; 2]; 2]) -> f64 {
    // Half-maximum contour of a Gaussian: x^T C^-1 x = 2 ln 2.
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let inv = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
    let rays = 180;
    (0..rays)
        .map(|k| {
            let phi = PI * k as f64 / rays as f64;
            let (s, c) = phi.sin_cos();
            let q = inv[0][0] * c * c + 2.0 * inv[0][1] * s * c + inv[1][1] * s * s;
            2.0 * (2.0 * 2f64.ln() / q).sqrt()
        })
        .sum::<f64>()
        / rays as f64
}

fn principal(cov: [[f64; 2]; 2]) -> [f64; 2] {
    let m = 0.5 * (cov[0][0] + cov[1][1]);
    let r = (0.25 * (cov[0][0] - cov[1][1]).powi(2) + cov[0][1] * cov[1][0]).sqrt();
    [(m - r).sqrt(), (m + r).sqrt()]
}

fn rotated(a: f64, b: f64, phi: f64) -> [[f64; 2]; 2] {
    let (s, c) = phi.sin_cos();
    let off = (a * a - b * b) * s * c;
    [[a * a * c * c + b * b * s * s, off], [off, a * a * s * s + b * b * c * c]]
}

#[test]
fn tomography_of_known_gaussians() {
    // Nine distinct angles, and the measurement grid (nine angles, eight distinct).
    let angle_sets: [(&str, Vec<f64>); 2] = [
        ("k/9", (0..9).map(|k| k as f64 * PI / 9.0).collect()),
        ("grid", (0..9).map(|k| PI + k as f64 * PI / 8.0).collect()),
    ];
    // Thermal, conditional-like, rotated, and a more strongly squeezed state.
    let states = [
        rotated(290.2, 290.2, 0.0),
        rotated(46.6, 92.5, 0.0),
        rotated(50.0, 90.0, PI / 5.0),
        rotated(30.0, 80.0, 0.0),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (set_name, angles) in &angle_sets {
        for (si, cov) in states.iter().enumerate() {
            let truth = principal(*cov);
            let half = 4.0 * truth[1];
            let step = half / 40.0;
            let grid = GridSpec { half_width: half, step };
            let axis = Axis::symmetric(half * 2f64.sqrt() + step, step).unwrap();
            // Sampled marginals, as the pipeline sees them.
            let mut set = MarginalSet::default();
            let mut rng = RngStream::new(9000 + si as u64, 0);
            let l = [cov[0][0].sqrt(), cov[1][0] / cov[0][0].sqrt()];
            let l22 = (cov[1][1] - l[1] * l[1]).sqrt();
            for &a in angles {
                let (s, c) = a.sin_cos();
                let xs = (0..100_000)
                    .map(|_| {
                        let (z1, z2) = (rng.normal(), rng.normal());
                        let (x, p) = (l[0] * z1, l[1] * z1 + l22 * z2);
                        x * c + p * s
                    })
                    .collect();
                set.push(a, xs);
            }
            for (label, proj) in [
                ("analytic", Projections::gaussian(angles, axis, *cov)),
                ("sampled", set.bin(half * 2f64.sqrt() + step, step).unwrap()),
            ] {
                let d = inverse_radon(&proj, &grid, &ReconOptions::default()).unwrap();
                let fit = d.gaussian_fit(0.1).unwrap().principal_sds();
                let s0 = fit[0] / truth[0] - 1.0;
                let s1 = fit[1] / truth[1] - 1.0;
                let fw = fwhm_contour(&d).unwrap().mean_fwhm / ellipse_mean_diameter(*cov) - 1.0;
                let back = project(&d, angles, proj.axis);
                let rp = back
                    .fitted_sds()
                    .unwrap()
                    .iter()
                    .zip(proj.fitted_sds().unwrap())
                    .map(|(a, b)| (a / b - 1.0).abs())
                    .fold(0.0, f64::max);
                let pass = s0.abs() < 0.05 && s1.abs() < 0.05 && fw.abs() < 0.05 && rp < 0.05;
                ok &= pass;
                lines.push(format!(
                    "{set_name} state {si} {label}: sigma {:+.2}%/{:+.2}%, fwhm {:+.2}%, reprojection {:.2}%",
                    100.0 * s0,
                    100.0 * s1,
                    100.0 * fw,
                    100.0 * rp
                ));
            }
        }
    }
    report("tomography", ok, lines.join("; "));
}
