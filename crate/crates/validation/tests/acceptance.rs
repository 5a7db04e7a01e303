//! End-to-end acceptance run: one line per criterion, nonzero exit if any fails.
//!
//! Run alone with `cargo test -p ftn-validation --test acceptance`. The `ftn` binary is
//! (re)built into the same target directory before the checks start.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ftn_core::analysis::{autocorr_taps, risi_variance, to_db};
use ftn_core::equalizer::{detect, sequence_metric, Constellation, TrellisConfig};
use ftn_core::pswf::{PswfBasis, PswfConfig};
use ftn_core::pulse::{Pulse, PulseFile, REFERENCE_ALPHAS_T07_L2};
use ftn_core::quadrature::GaussLegendre;
use ftn_core::simulator::{q_function, SimConfig, Simulator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = Result<String, String>;

/// Name, runtime limit in seconds, check.
type Criterion = (&'static str, u64, fn(&Ctx) -> Check);

struct Ctx {
    dir: PathBuf,
    bin: PathBuf,
}

/// Builds `ftn` with the profile this harness was built with and returns its path.
fn build_cli() -> Result<PathBuf, String> {
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    // target/<profile>/deps/acceptance-<hash>
    let profile_dir = exe.parent().and_then(Path::parent).ok_or("unexpected test layout")?;
    let target_dir = profile_dir.parent().ok_or("unexpected test layout")?;
    let profile = profile_dir.file_name().and_then(|n| n.to_str()).ok_or("unexpected test layout")?;
    let profile = if profile == "debug" { "dev" } else { profile };
    let status = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "-p", "ftn-cli", "--bin", "ftn", "--profile", profile, "--target-dir"])
        .arg(target_dir)
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err("building ftn failed".into());
    }
    Ok(profile_dir.join(format!("ftn{}", std::env::consts::EXE_SUFFIX)))
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn ftn(&self, args: &[&str]) -> Result<(), String> {
        let o = Command::new(&self.bin)
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if o.status.success() {
            Ok(())
        } else {
            Err(format!("ftn {}: {}", args.join(" "), String::from_utf8_lossy(&o.stderr).trim()))
        }
    }

    fn json(&self, name: &str) -> Result<Value, String> {
        let text = fs::read_to_string(self.path(name)).map_err(|e| format!("{name}: {e}"))?;
        serde_json::from_str(&text).map_err(|e| format!("{name}: {e}"))
    }

    fn csv(&self, name: &str) -> Result<Vec<HashMap<String, String>>, String> {
        let text = fs::read_to_string(self.path(name)).map_err(|e| format!("{name}: {e}"))?;
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let header: Vec<String> = lines.next().ok_or("empty csv")?.split(',').map(String::from).collect();
        Ok(lines
            .map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect())
            .collect())
    }
}

fn field(row: &HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or(f64::NAN)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn wilson(errors: f64, n: f64, z: f64) -> (f64, f64) {
    let phat = errors / n;
    let denom = 1.0 + z * z / n;
    let centre = (phat + z * z / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rrc_oobe(ctx: &Ctx) -> Check {
    let mut detail = Vec::new();
    let mut ok = true;
    for (beta, lo, hi) in [("0.1", 4.0e-4, 4.8e-4), ("0.2", 8.5e-5, 10.5e-5)] {
        let out = ctx.path(&format!("rrc{beta}.json"));
        ctx.ftn(&["rrc", "--beta", beta, "--ts", "15", "--out", p(&out)])?;
        let oobe = ctx.json(&format!("rrc{beta}.report.json"))?["oobe"].as_f64().ok_or("no oobe")?;
        ok &= (lo..=hi).contains(&oobe);
        detail.push(format!("beta={beta} eps={oobe:.4e}"));
    }
    ensure(ok, detail.join(", "))
}

fn pswf_suite(_: &Ctx) -> Check {
    let b = PswfBasis::build(PswfConfig::new(15.0, 36)).map_err(|e| e.to_string())?;
    let (lam, q) = (b.eigenvalues(), b.complements());
    let monotone = (1..b.len()).all(|i| lam[i - 1] > lam[i] || (lam[i - 1] == lam[i] && q[i - 1] < q[i]));

    let gl = GaussLegendre::new(512);
    let vals: Vec<Vec<f64>> = (0..b.len())
        .map(|i| gl.nodes().iter().map(|&x| b.eval_normalized(i, x)).collect())
        .collect();
    let mut ortho = 0.0f64;
    for i in 0..b.len() {
        for j in 0..=i {
            let g: f64 = (0..gl.len()).map(|k| gl.weights()[k] * vals[i][k] * vals[j][k]).sum();
            ortho = ortho.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let integral = (0..b.len()).map(|i| b.integral_equation_residual(i)).fold(0.0, f64::max);
    let trace: f64 = lam.iter().sum();
    ensure(
        monotone && ortho < 1e-8 && integral < 1e-6 && (trace - 15.0).abs() < 1e-6,
        format!(
            "strictly decreasing={monotone}, orthonormality {ortho:.1e}, integral eq {integral:.1e}, trace-15 {:.1e}",
            trace - 15.0
        ),
    )
}

fn table_pulse() -> Result<(f64, f64, f64), String> {
    let raw: f64 = REFERENCE_ALPHAS_T07_L2.iter().map(|a| a * a).sum();
    let norm = raw.sqrt();
    let alphas: Vec<f64> = REFERENCE_ALPHAS_T07_L2.iter().map(|a| a / norm).collect();
    let basis = Arc::new(PswfBasis::build(PswfConfig::new(15.0, 22)).map_err(|e| e.to_string())?);
    let pulse = Pulse::pswf(basis, &alphas, 15.0, 0.5).map_err(|e| e.to_string())?;
    let taps = autocorr_taps(&pulse, 0.7).map_err(|e| e.to_string())?;
    Ok((raw, pulse.oobe().oobe, risi_variance(&taps, 2)))
}

fn table_regression(ctx: &Ctx) -> Check {
    let (norm2, oobe, table_obj) = table_pulse()?;
    ctx.ftn(&["optimize", "--t", "0.7", "--l", "2", "--epsilon", "4.4e-4", "--n", "22", "--out", p(&ctx.path("opt22.json"))])?;
    let obj = ctx.json("opt22.result.json")?["objective"].as_f64().ok_or("no objective")?;
    ensure(
        (norm2 - 1.0).abs() < 1e-4 && (oobe / 4.4e-4 - 1.0).abs() <= 0.05 && obj <= table_obj * (1.0 + 1e-3),
        format!(
            "table |sum a^2 - 1| = {:.1e}, table eps = {oobe:.4e}, table {:.3} dB, optimizer {:.3} dB",
            (norm2 - 1.0).abs(),
            to_db(table_obj),
            to_db(obj)
        ),
    )
}

fn headline_gap(ctx: &Ctx) -> Check {
    let file: PulseFile =
        serde_json::from_str(&fs::read_to_string(ctx.path("opt22.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let opt = file.to_pulse().map_err(|e| e.to_string())?;
    let rrc = Pulse::truncated_rrc(0.1, 0.5, 15.0).map_err(|e| e.to_string())?;
    let v = |pl: &Pulse| -> Result<f64, String> {
        Ok(to_db(risi_variance(&autocorr_taps(pl, 0.7).map_err(|e| e.to_string())?, 2)))
    };
    let (o, r) = (v(&opt)?, v(&rrc)?);
    let gap = r - o;
    ensure(
        gap >= 25.0 && (gap - 32.0).abs() <= 4.0,
        format!("RRC {r:.2} dB, optimized {o:.2} dB, gap {gap:.2} dB"),
    )
}

fn sweep_ordering(ctx: &Ctx) -> Check {
    let grid = "0.5,0.6,0.7,0.8,0.9,1.0,1.1";
    let out = ctx.path("sweep.csv");
    ctx.ftn(&["risi-sweep", "--t-grid", grid, "--l", "0,1,2,4", "--rrc-beta", "0.1", "--optimized", "--out", p(&out)])?;
    let rows = ctx.csv("sweep.csv")?;
    let lookup = |id: &str, t: f64, l: f64| -> f64 {
        rows.iter()
            .find(|r| r["pulse_id"] == id && field(r, "T") == t && field(r, "L") == l)
            .map(|r| field(r, "sigma2_risi"))
            .unwrap_or(f64::NAN)
    };
    let mut ordered = true;
    let mut worst_gap = 0.0f64;
    for t in [0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1] {
        for l in [0.0, 1.0, 2.0, 4.0] {
            let (o, r) = (lookup("optimized", t, l), lookup("rrc_beta0.1", t, l));
            ordered &= o <= r;
            if l == 0.0 && t >= 0.9 {
                worst_gap = worst_gap.max(to_db(r) - to_db(o));
            }
        }
    }

    ctx.ftn(&["risi-sweep", "--t-grid", "0.61", "--l", "1", "--optimized", "--out", p(&ctx.path("t061.csv"))])?;
    let at061 = field(&ctx.csv("t061.csv")?[0], "sigma2_risi_db");
    ctx.ftn(&["risi-sweep", "--t-grid", "0.61", "--l", "1", "--optimized", "--full", "--out", p(&ctx.path("t061f.csv"))])?;
    let at061_full = field(&ctx.csv("t061f.csv")?[0], "sigma2_risi_db");

    ensure(
        ordered && worst_gap < 2.0 && at061 <= -14.0,
        format!(
            "optimized <= RRC everywhere: {ordered}; max L=0 gap (T>=0.9) {worst_gap:.2} dB; \
             (T=0.61, L=1) {at061:.3} dB [asymmetric optimum {at061_full:.3} dB]"
        ),
    )
}

fn n_convergence(ctx: &Ctx) -> Check {
    ctx.ftn(&["optimize", "--t", "0.7", "--l", "2", "--n", "30", "--out", p(&ctx.path("opt30.json"))])?;
    let o22 = ctx.json("opt22.result.json")?["objective_db"].as_f64().ok_or("no objective")?;
    let o30 = ctx.json("opt30.result.json")?["objective_db"].as_f64().ok_or("no objective")?;
    let gain = o22 - o30;
    ensure(gain < 0.1, format!("N=22 {o22:.3} dB, N=30 {o30:.3} dB, improvement {gain:.4} dB"))
}

fn equalizer_oracle(_: &Ctx) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7E57);
    let shapes: [(usize, &[usize]); 4] = [(2, &[0, 1, 2, 3, 4]), (4, &[0, 1, 2]), (8, &[0, 1]), (16, &[0, 1])];
    let mut mismatches = 0;
    for instance in 0..200 {
        let (m, depths) = shapes[rng.random_range(0..shapes.len())];
        let depth = depths[rng.random_range(0..depths.len())];
        let bits = m.trailing_zeros() as usize;
        let max_block = (14 / bits).min(14);
        let block = rng.random_range((depth + 1).min(max_block)..=max_block);
        let constellation = Constellation::pam(m).map_err(|e| e.to_string())?;

        let cfg = if instance % 2 == 0 {
            let t = rng.random_range(0.5..1.1);
            let pulse = Pulse::truncated_rrc(rng.random_range(0.05..0.5), 0.5, 15.0).map_err(|e| e.to_string())?;
            let taps = autocorr_taps(&pulse, t).map_err(|e| e.to_string())?;
            TrellisConfig::from_isi_taps(depth, constellation.clone(), &taps, block)
        } else {
            let mut taps = vec![1.0];
            taps.extend((0..depth.max(1)).map(|_| rng.random_range(-0.4..0.4)));
            TrellisConfig::new(depth, constellation.clone(), &taps, block)
        }
        .map_err(|e| e.to_string())?;

        let h = cfg.taps().to_vec();
        let sent: Vec<usize> = (0..block).map(|_| rng.random_range(0..m)).collect();
        let obs: Vec<f64> = (0..block)
            .map(|k| {
                let mut y = 0.0;
                for (j, &s) in sent.iter().enumerate() {
                    let lag = k.abs_diff(j);
                    if lag < h.len() {
                        y += h[lag] * constellation.point(s);
                    }
                }
                y + rng.random_range(-0.8..0.8)
            })
            .collect();

        let got = detect(&cfg, &obs).map_err(|e| e.to_string())?;
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        let mut seq = vec![0; block];
        for code in 0..m.pow(block as u32) {
            let mut c = code;
            for k in (0..block).rev() {
                seq[k] = c % m;
                c /= m;
            }
            let v = sequence_metric(&cfg, &obs, &seq);
            if v > best.1 {
                best = (seq.clone(), v);
            }
        }
        if got != best.0 {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, format!("{mismatches} mismatches in 200 instances"))
}

fn ber_sanity(ctx: &Ctx) -> Check {
    let out = ctx.path("sanity.csv");
    ctx.ftn(&[
        "ber", "--rrc-beta", "0.1", "--ts", "41", "--t", "1.1", "--l", "0", "--ebn0", "4,6,8", "--seed", "7",
        "--out", p(&out),
    ])?;
    let mut ok = true;
    let mut detail = Vec::new();
    for row in ctx.csv("sanity.csv")? {
        let (db, ber, bits, errors) = (field(&row, "ebn0_db"), field(&row, "ber"), field(&row, "bits"), field(&row, "errors"));
        let q = q_function((2.0 * 10f64.powf(db / 10.0)).sqrt());
        let z = (ber - q) / (q * (1.0 - q) / bits).sqrt();
        ok &= errors >= 400.0 && z.abs() < 3.0;
        detail.push(format!("{db} dB z={z:+.2} ({errors} errors)"));
    }
    ensure(ok && detail.len() == 3, detail.join(", "))
}

fn error_floor_and_ordering(ctx: &Ctx) -> Check {
    ctx.ftn(&[
        "ber", "--rrc-beta", "0.1", "--t", "0.7", "--l", "2", "--ebn0", "8,11,14,17,20", "--max-errors", "2000",
        "--seed", "3", "--out", p(&ctx.path("floor.csv")),
    ])?;
    let floor = ctx.csv("floor.csv")?;
    let (a, b) = (&floor[floor.len() - 2], &floor[floor.len() - 1]);
    let se = |r: &HashMap<String, String>| {
        let (ber, n) = (field(r, "ber"), field(r, "bits"));
        ber * (1.0 - ber) / n
    };
    let delta = field(b, "ber") - field(a, "ber");
    let sigma = (se(a) + se(b)).sqrt();
    let floor_ok = delta.abs() <= 2.0 * sigma;

    let grid = "6,8,10,12,14";
    ctx.ftn(&[
        "ber", "--pulse", p(&ctx.path("opt22.json")), "--t", "0.7", "--l", "2", "--ebn0", grid, "--bits", "20000000",
        "--seed", "5", "--out", p(&ctx.path("opt_l2.csv")),
    ])?;
    ctx.ftn(&[
        "ber", "--rrc-beta", "0.1", "--t", "0.7", "--l", "7", "--ebn0", grid, "--bits", "20000000", "--seed", "5",
        "--out", p(&ctx.path("rrc_l7.csv")),
    ])?;
    let last = |name: &str| -> Result<(f64, f64), String> {
        let rows = ctx.csv(name)?;
        let r = rows.last().ok_or("empty")?;
        Ok((field(r, "errors"), field(r, "bits")))
    };
    let (oe, on) = last("opt_l2.csv")?;
    let (re, rn) = last("rrc_l7.csv")?;
    let (olo, ohi) = wilson(oe, on, 1.96);
    let (rlo, rhi) = wilson(re, rn, 1.96);
    let ordering_ok = oe / on < re / rn && ohi < rlo;
    ensure(
        floor_ok && ordering_ok,
        format!(
            "(a) RRC L=2 17->20 dB change {delta:+.2e} vs 2 sigma {:.2e}; \
             (b) 14 dB: optimized L=2 {:.2e} [{olo:.1e}, {ohi:.1e}] vs RRC L=7 {:.2e} [{rlo:.1e}, {rhi:.1e}]",
            2.0 * sigma,
            oe / on,
            re / rn
        ),
    )
}

fn cross_model(ctx: &Ctx) -> Check {
    let file: PulseFile =
        serde_json::from_str(&fs::read_to_string(ctx.path("opt22.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let pulse = file.to_pulse().map_err(|e| e.to_string())?;
    let mut c = SimConfig::new(pulse, 0.7, 2);
    c.master_seed = 21;
    c.max_bits = 1_000_000;
    c.max_errors = u64::MAX;
    let s = Simulator::new(c).map_err(|e| e.to_string())?;
    let d = s.simulate_point(8.0).map_err(|e| e.to_string())?;
    let w = s.waveform_point(8.0, d.blocks).map_err(|e| e.to_string())?;
    let se = (d.std_error().powi(2) + w.std_error().powi(2)).sqrt();
    let z = (d.ber - w.ber) / se;

    let n0 = s.n0(8.0);
    let cov = s.waveform_noise_autocov(8.0, 100_000, 3, 9);
    let scale = 0.5 * n0 * s.taps().at(0);
    let worst = cov
        .iter()
        .enumerate()
        .map(|(l, c)| (c - 0.5 * n0 * s.taps().at(l as i64)).abs() / scale)
        .fold(0.0, f64::max);
    ensure(
        z.abs() < 3.0 && worst < 0.05,
        format!(
            "8 dB discrete {:.3e} vs waveform {:.3e} (z={z:+.2}); autocovariance max deviation {:.2}% of (N0/2)h(0)",
            d.ber,
            w.ber,
            100.0 * worst
        ),
    )
}

fn main() {
    let dir = std::env::temp_dir().join(format!("ftn-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("scratch dir");
    let bin = match build_cli() {
        Ok(b) => b,
        Err(e) => {
            println!("[FAIL] could not build the ftn binary: {e}");
            std::process::exit(1);
        }
    };
    let ctx = Ctx { dir, bin };

    let criteria: [Criterion; 10] = [
        ("RRC out-of-band energy", 10, rrc_oobe),
        ("PSWF basis suite", 30, pswf_suite),
        ("reference pulse regression", 300, table_regression),
        ("32 dB residual-ISI reduction", 300, headline_gap),
        ("sweep ordering", 1800, sweep_ordering),
        ("basis-size convergence", 600, n_convergence),
        ("equalizer vs exhaustive search", 120, equalizer_oracle),
        ("near-Nyquist BER", 600, ber_sanity),
        ("error floor and 4 vs 128 states", 7200, error_floor_and_ordering),
        ("discrete vs waveform model", 1200, cross_model),
    ];

    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check(&ctx);
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*limit);
        let (ok, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "[{}] {:>2}. {name}: {detail} ({:.1} s{})",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64(),
            if in_time { String::new() } else { format!(", limit {limit} s") }
        );
    }
    let _ = fs::remove_dir_all(&ctx.dir);
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
