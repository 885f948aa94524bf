//! Acceptance suite: one check per numbered criterion, one line of output
//! each. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p evkit-cli --test acceptance -- 1 13`.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use evkit::dist::{gev_cdf, gev_quantile, gpd_cdf, gpd_quantile, sample_gevr, sample_gpd};
use evkit::estimation::{fit_gevr_mle, Method};
use evkit::gof_gevr::{ed_eta, entropy_differences, score_test_multiplier, score_test_parametric};
use evkit::inference::{profile_likelihood_ci, semiparametric_bootstrap, ProfileData, Target};
use evkit::rng::{derive_seed, rng_from_seed};
use evkit::sequential::{
    forward_stop, select_r, select_threshold, strong_stop, unadjusted_stop, RTest, StoppingRule, ThresholdOptions,
    ThresholdTest,
};
use evkit::simkit::{
    dropping_threshold_grid, gen_beta_gpd_splice, gen_r_selection_design, quantile_threshold_grid, run_experiment,
    ExcessLaw, RfaTruth, SchemeSpec, Subject, SubjectTest,
};
use evkit::{GevParams, GpdParams, NullTable};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn gev(mu: f64, sigma: f64, xi: f64) -> GevParams {
    GevParams::new(mu, sigma, xi).unwrap()
}

fn rate(scheme: SchemeSpec, test: SubjectTest, reps: usize, seed: u64) -> (f64, f64) {
    let s = run_experiment(&scheme, &Subject::Test { test }, reps, 0.05, seed).unwrap();
    let row = s.rows.iter().find(|r| r.metric == "rejection_rate").unwrap();
    (row.value, row.mc_error)
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 { v[n / 2] as f64 } else { (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0 }
}

fn c1() -> Verdict {
    let start = Instant::now();
    let target = (-(-1f64).exp()).exp();
    let mut worst = Vec::new();
    let mut pass = true;
    for e in 4..=12 {
        for sign in [1.0, -1.0] {
            let xi = sign * 10f64.powi(-e);
            let d = (gev_cdf(1.0, &gev(0.0, 1.0, xi)) - target).abs();
            if d >= 1e-6 {
                pass = false;
                worst.push(format!("xi={xi:e}: {d:.3e}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 1.0;
    let detail = if worst.is_empty() {
        format!("all deviations < 1e-6 in {secs:.3}s")
    } else {
        format!("deviation >= 1e-6 at {}; {secs:.3}s", worst.join(", "))
    };
    verdict(pass, detail)
}

fn c2() -> Verdict {
    let (r, se) = rate(SchemeSpec::PureGevr { n: 100, r: 5, gev: gev(0.0, 1.0, 0.25) }, SubjectTest::Ed, 2000, 2);
    verdict((0.04..=0.07).contains(&r), format!("ED size {} (se {}), want [4.0%, 7.0%]", pct(r), pct(se)))
}

fn c3() -> Verdict {
    let (r, se) =
        rate(SchemeSpec::PureGevr { n: 100, r: 5, gev: gev(0.0, 1.0, 0.0) }, SubjectTest::ScoreParametric { bootstrap: 199 }, 500, 3);
    verdict((0.03..=0.08).contains(&r), format!("parametric score size {} (se {}), want [3.0%, 8.0%]", pct(r), pct(se)))
}

fn c4() -> Verdict {
    let s = sample_gevr(1000, 5, &gev(0.0, 1.0, 0.25), &mut rng_from_seed(4)).unwrap();
    let t0 = Instant::now();
    let pb = score_test_parametric(&s, 1000, 40);
    let t_pb = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let mb = score_test_multiplier(&s, 1000, 41);
    let t_mb = t0.elapsed().as_secs_f64();
    let ratio = t_pb / t_mb;
    let (r, se) =
        rate(SchemeSpec::PureGevr { n: 200, r: 5, gev: gev(0.0, 1.0, 0.25) }, SubjectTest::ScoreMultiplier { bootstrap: 1000 }, 1000, 4);
    let pass = pb.is_ok() && mb.is_ok() && ratio >= 50.0 && (0.035..=0.085).contains(&r);
    verdict(
        pass,
        format!(
            "parametric {t_pb:.2}s vs multiplier {t_mb:.3}s ({ratio:.0}x, want >= 50x); multiplier size {} (se {}), want [3.5%, 8.5%]",
            pct(r),
            pct(se)
        ),
    )
}

fn c5() -> Verdict {
    let (r, _) = rate(SchemeSpec::KumgevContam { n: 100, gev: gev(0.0, 1.0, 0.0), a: 2.0, b: 2.0 }, SubjectTest::Ed, 500, 5);
    verdict(r >= 0.95, format!("ED power {}, want >= 95%", pct(r)))
}

fn c6() -> Verdict {
    let gamma = SchemeSpec::Excesses { n: 100, law: ExcessLaw::Gamma { shape: 2.0, scale: 1.0 } };
    let (g, _) = rate(gamma, SubjectTest::Ad, 1000, 61);
    let (s, _) = rate(SchemeSpec::PureGpd { n: 100, gpd: GpdParams::new(1.0, 0.25).unwrap() }, SubjectTest::Ad, 1000, 62);
    let ln = SchemeSpec::Excesses { n: 400, law: ExcessLaw::LogNormal { mu: 0.0, sigma: 1.0 } };
    let (l, _) = rate(ln, SubjectTest::Ad, 1000, 63);
    let pass = (g - 0.647).abs() <= 0.06 && (s - 0.052).abs() <= 0.02 && l >= 0.90;
    verdict(
        pass,
        format!("Gamma(2,1) {} (want 64.7% +- 6), GPD size {} (want 5.2% +- 2), LogNormal n=400 {} (want >= 90%)", pct(g), pct(s), pct(l)),
    )
}

fn c7() -> Verdict {
    let laws = [
        ExcessLaw::Gamma { shape: 2.0, scale: 1.0 },
        ExcessLaw::LogNormal { mu: 0.0, sigma: 1.0 },
        ExcessLaw::Weibull { scale: 1.0, shape: 0.75 },
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, law) in laws.into_iter().enumerate() {
        let label = law.label();
        let scheme = SchemeSpec::Excesses { n: 200, law };
        let seed = 70 + i as u64;
        let r: Vec<(f64, f64)> =
            [SubjectTest::Ad, SubjectTest::Cvm, SubjectTest::Moran, SubjectTest::Rao].iter().map(|&t| rate(scheme.clone(), t, 1000, seed)).collect();
        // b does not beat a by more than twice the standard error of the difference
        let geq = |a: (f64, f64), b: (f64, f64)| a.0 >= b.0 - 2.0 * (a.1 * a.1 + b.1 * b.1).sqrt();
        let ok = geq(r[0], r[1]) && geq(r[1], r[2]) && geq(r[1], r[3]);
        pass &= ok;
        parts.push(format!("{label}: AD {} CVM {} Moran {} Rao {}", pct(r[0].0), pct(r[1].0), pct(r[2].0), pct(r[3].0)));
    }
    verdict(pass, parts.join("; "))
}

fn c8() -> Verdict {
    let table = NullTable::default_table().unwrap();
    let opts = ThresholdOptions::new(table);
    let probs: Vec<f64> = (1..=10).map(|i| 0.05 * i as f64).collect();
    let reps = 1000u64;
    let (mut strong05, mut strong10, mut any05, mut seq05, mut used) = (0, 0, 0, 0, 0);
    for k in 0..reps {
        let y = sample_gpd(1000, &GpdParams::new(1.0, 0.25).unwrap(), &mut rng_from_seed(derive_seed(8, k)));
        let grid = quantile_threshold_grid(&y, &probs).unwrap();
        let Ok(sel) = select_threshold(&y, &grid, ThresholdTest::AndersonDarling, StoppingRule::StrongStop, 0.05, &opts) else { continue };
        let p = &sel.selection.raw_p;
        if p.len() < probs.len() {
            continue;
        }
        used += 1;
        strong05 += (strong_stop(p, 0.05).unwrap() > 0) as usize;
        strong10 += (strong_stop(p, 0.10).unwrap() > 0) as usize;
        any05 += p.iter().any(|&v| v <= 0.05) as usize;
        seq05 += (unadjusted_stop(p, 0.05) > 0) as usize;
    }
    let f = |c: usize| c as f64 / used as f64;
    let (s5, s10, u5) = (f(strong05), f(strong10), f(any05));
    let pass = used as u64 >= reps * 9 / 10 && (s5 - 0.05).abs() <= 0.05 && (s10 - 0.10).abs() <= 0.05 && u5 >= 0.075;
    verdict(
        pass,
        format!(
            "StrongStop FWER {} at 0.05, {} at 0.10; unadjusted FWER {} at 0.05 (first-acceptance {}); {used} complete runs",
            pct(s5),
            pct(s10),
            pct(u5),
            pct(f(seq05))
        ),
    )
}

fn c9() -> Verdict {
    let table = NullTable::default_table().unwrap();
    let opts = ThresholdOptions::new(table);
    let (mut fs, mut none, mut ss) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..200u64 {
        let y = gen_beta_gpd_splice(500, 500, derive_seed(9, k)).unwrap();
        let grid = dropping_threshold_grid(&y, 50, 15).unwrap();
        let Ok(sel) = select_threshold(&y, &grid, ThresholdTest::AndersonDarling, StoppingRule::ForwardStop, 0.05, &opts) else { continue };
        let p = &sel.selection.raw_p;
        fs.push(forward_stop(p, 0.05).unwrap());
        none.push(unadjusted_stop(p, 0.05));
        ss.push(strong_stop(p, 0.05).unwrap());
    }
    let (a, b, c) = (median(fs), median(none), median(ss));
    let pass = (a - 33.0).abs() <= 3.0 && (b - 29.0).abs() <= 3.0 && (c - 22.0).abs() <= 3.0;
    verdict(pass, format!("median rejections ForwardStop {a} (want 33), none {b} (want 29), StrongStop {c} (want 22), each +- 3"))
}

fn c10() -> Verdict {
    let reps = 200u64;
    let mut chosen = Vec::new();
    for k in 0..reps {
        let s = gen_r_selection_design(100, &gev(0.0, 1.0, 0.25), derive_seed(10, k)).unwrap();
        if let Ok(sel) = select_r(&s, 6, RTest::EntropyDifference, StoppingRule::ForwardStop, 0.05, 199, derive_seed(11, k)) {
            chosen.push(sel.chosen_r);
        }
    }
    let n = chosen.len() as f64;
    let eq4 = chosen.iter().filter(|&&r| r == 4).count() as f64 / n;
    let le4 = chosen.iter().filter(|&&r| r <= 4).count() as f64 / n;
    let hist: Vec<String> = (0..=6).map(|r| format!("{r}:{}", chosen.iter().filter(|&&c| c == r).count())).collect();
    verdict(
        (0.15..=0.35).contains(&eq4) && le4 >= 0.90,
        format!("P(r=4) {} (want [15%, 35%]), P(r<=4) {} (want >= 90%); counts {}", pct(eq4), pct(le4), hist.join(" ")),
    )
}

fn c11() -> Verdict {
    let mut pass = true;
    let (mut fail_mle, mut fail_mps) = (0.0, 0.0);
    let mut cells = Vec::new();
    for n in [10, 25] {
        for phi in [None, Some(6.0), Some(20.0)] {
            let s = run_experiment(
                &SchemeSpec::GaussianCopulaSites { m: 10, n, phi },
                &Subject::Estimators { methods: vec![Method::Mle, Method::Mps] },
                200,
                0.05,
                derive_seed(111, n as u64 * 100 + phi.map_or(0, |p: f64| p as u64)),
            )
            .unwrap();
            let g = |m: &str, k: &str| s.get(m, k).unwrap();
            let (gm, gp) = (g("mle", "trimmed_rmse_beta_gamma0"), g("mps", "trimmed_rmse_beta_gamma0"));
            let (xm, xp) = (g("mle", "trimmed_rmse_beta_xi0"), g("mps", "trimmed_rmse_beta_xi0"));
            fail_mle += g("mle", "failures");
            fail_mps += g("mps", "failures");
            let ok = gp <= 1.05 * gm && xp <= 1.05 * xm;
            pass &= ok;
            let dep = phi.map_or("indep".to_string(), |p| format!("phi={p}"));
            cells.push(format!("n={n} {dep}: gamma0 {gp:.4}/{gm:.4} xi0 {xp:.4}/{xm:.4}{}", if ok { "" } else { " (!)" }));
        }
    }
    pass &= fail_mle >= fail_mps;
    verdict(pass, format!("MPS/MLE trimmed RMSE {}; failures MLE {fail_mle} MPS {fail_mps}", cells.join("; ")))
}

fn c12() -> Verdict {
    let mut bad: Vec<String> = Vec::new();
    let mut rng = rng_from_seed(12);
    // rows of simulated GEV_r samples
    for k in 0..200u64 {
        let xi = -0.5 + (k % 11) as f64 * 0.1;
        let s = sample_gevr(50, 1 + (k % 10) as usize, &gev(0.0, 1.0, xi), &mut rng).unwrap();
        if !s.rows().all(|r| r.windows(2).all(|w| w[0] > w[1])) {
            bad.push(format!("non-decreasing row at xi={xi}"));
        }
    }
    // quantile / cdf round trips
    let mut worst: f64 = 0.0;
    for xi in [-0.5, -0.1, 0.0, 1e-9, 0.3, 0.9] {
        for i in 1..1000 {
            let u = i as f64 / 1000.0;
            let g = gev(1.0, 2.0, xi);
            worst = worst.max((gev_cdf(gev_quantile(u, &g).unwrap(), &g) - u).abs());
            let h = GpdParams::new(2.0, xi).unwrap();
            worst = worst.max((gpd_cdf(gpd_quantile(u, &h).unwrap(), &h) - u).abs());
        }
    }
    if worst >= 1e-10 {
        bad.push(format!("round trip error {worst:e}"));
    }
    // stopping rule fixtures
    let a = 0.05f64;
    let fixtures = [
        (forward_stop(&[0.0; 4], a).unwrap(), 4),
        (forward_stop(&[1.0 - (-a).exp(); 5], a).unwrap(), 5),
        (forward_stop(&[0.9], a).unwrap(), 0),
        (strong_stop(&[0.04], a).unwrap(), 1),
        (strong_stop(&[0.06], a).unwrap(), 0),
        (strong_stop(&[0.01, 0.04], a).unwrap(), 1),
        (strong_stop(&[1.0; 3], a).unwrap(), 0),
        (unadjusted_stop(&[0.01, 0.02], a), 2),
        (unadjusted_stop(&[0.2, 0.01], a), 0),
        (unadjusted_stop(&[0.01, 0.2, 0.01], a), 1),
    ];
    for (i, (got, want)) in fixtures.iter().enumerate() {
        if got != want {
            bad.push(format!("stopping fixture {i}: {got} != {want}"));
        }
    }
    // nested profile intervals
    let s = sample_gevr(80, 3, &gev(10.0, 2.0, -0.2), &mut rng_from_seed(121)).unwrap();
    let f = fit_gevr_mle(&s, None).unwrap();
    for t in [Target::Shape, Target::ReturnLevel { period: 50.0 }] {
        let lo = profile_likelihood_ci(ProfileData::Gevr(&s), &f, &t, 0.90).unwrap();
        let hi = profile_likelihood_ci(ProfileData::Gevr(&s), &f, &t, 0.95).unwrap();
        let nested = match (lo.ci_low, lo.ci_high, hi.ci_low, hi.ci_high) {
            (Some(a), Some(b), Some(c), Some(d)) => c <= a && b <= d,
            _ => false,
        };
        if !nested {
            bad.push(format!("profile intervals for {t:?} not nested"));
        }
    }
    // bootstrap determinism
    let truth = RfaTruth::generate(4, 12, 122);
    let spec = truth.spec().unwrap();
    let y = truth.simulate(Some(6.0), 123).unwrap();
    let b1 = semiparametric_bootstrap(&y, &spec, Method::Mps, 10, 7).unwrap();
    let b2 = semiparametric_bootstrap(&y, &spec, Method::Mps, 10, 7).unwrap();
    if b1.replicates != b2.replicates {
        bad.push("bootstrap not reproducible".into());
    }
    // mean of the entropy differences
    let mut eta_notes = Vec::new();
    for r in [2usize, 5, 10] {
        for xi in [-0.25, 0.0, 0.25] {
            let th = gev(0.0, 1.0, xi);
            let s = sample_gevr(20_000, r, &th, &mut rng_from_seed(derive_seed(124, (r * 10) as u64 + (xi * 100.0 + 50.0) as u64))).unwrap();
            let d = entropy_differences(&s, &th).unwrap();
            let n = d.len() as f64;
            let m = d.iter().sum::<f64>() / n;
            let se = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
            let z = (m - ed_eta(r, &th)) / se;
            eta_notes.push(format!("{z:+.1}"));
            if z.abs() > 3.0 {
                bad.push(format!("E[D_{r}] at xi={xi} off by {z:.1} SE"));
            }
        }
    }
    let detail = if bad.is_empty() {
        format!("rows, round trips (max {worst:.1e}), rule fixtures, nesting, bootstrap, E[D_r] z-scores {}", eta_notes.join(" "))
    } else {
        bad.join("; ")
    };
    verdict(bad.is_empty(), detail)
}

fn golden_runs(out: &Path) -> Vec<(&'static str, Vec<String>)> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden");
    let daily = data.join("daily.csv").display().to_string();
    let annual = data.join("annual.csv").display().to_string();
    let o = |m: &str| out.join(m).display().to_string();
    vec![
        ("r", vec!["select-r".into(), daily.clone(), "--out".into(), o("r"), "--rmax".into(), "4".into(), "--seed".into(), "7".into()]),
        ("t", vec!["select-threshold".into(), daily, "--out".into(), o("t"), "--seed".into(), "7".into()]),
        ("g", vec!["rfa-fit".into(), annual, "--out".into(), o("g"), "--seed".into(), "7".into()]),
    ]
}

fn c13() -> Verdict {
    let expected = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden/expected");
    let out: PathBuf = std::env::temp_dir().join(format!("evkit-golden-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&out);
    let mut bad = Vec::new();
    let mut files = 0;
    for (mode, args) in golden_runs(&out) {
        let st = Command::new(env!("CARGO_BIN_EXE_evkit")).args(&args).output().unwrap();
        if !st.status.success() {
            bad.push(format!("{mode}: exit {:?}: {}", st.status.code(), String::from_utf8_lossy(&st.stderr).trim()));
            continue;
        }
        let mut names: Vec<_> = std::fs::read_dir(expected.join(mode)).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            files += 1;
            let want = std::fs::read(expected.join(mode).join(&name)).unwrap();
            match std::fs::read(out.join(mode).join(&name)) {
                Ok(got) if got == want => {}
                Ok(_) => bad.push(format!("{mode}/{} differs", name.to_string_lossy())),
                Err(e) => bad.push(format!("{mode}/{}: {e}", name.to_string_lossy())),
            }
        }
    }
    let _ = std::fs::remove_dir_all(&out);
    if bad.is_empty() {
        verdict(true, format!("{files} output CSVs byte-identical to the pinned copies"))
    } else {
        verdict(false, bad.join("; "))
    }
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Verdict); 13] =
        [(1, c1), (2, c2), (3, c3), (4, c4), (5, c5), (6, c6), (7, c7), (8, c8), (9, c9), (10, c10), (11, c11), (12, c12), (13, c13)];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let v = check();
        println!("criterion {n:>2}: {} ({:.0}s) {}", if v.pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64(), v.detail);
        if !v.pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
