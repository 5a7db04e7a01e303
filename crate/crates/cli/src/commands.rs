use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ftn_core::analysis::{autocorr_taps, gram_stack_for, risi_variance, to_db};
use ftn_core::equalizer::Constellation;
use ftn_core::optimizer::{solve, solve_with_gram, DesignProblem, RestartRecord};
use ftn_core::pswf::{PswfBasis, PswfConfig};
use ftn_core::pulse::{DesignParams, Pulse, PulseFile, PulseMetadata};
use ftn_core::simulator::{SimConfig, Simulator};
use ftn_core::FtnError;
use serde::Serialize;

use crate::error::CliError;
use crate::output::{db_field, digest, manifest_path, sibling, unix_now, num, write_atomic, write_json, Csv, Manifest};
use crate::{BerArgs, OptimizeArgs, PswfArgs, RrcArgs, SweepArgs};

const TOOL: &str = "ftn";
const VERSION: &str = env!("CARGO_PKG_VERSION");

fn created_by() -> String {
    format!("{TOOL} {VERSION}")
}

struct Run {
    started: f64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn start() -> Self {
        Self {
            started: unix_now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Writes `<primary>.manifest.json` covering every input and output of the run.
    fn finish<A: Serialize>(self, args: &A, w: f64, seed: Option<u64>) -> Result<(), CliError> {
        let primary = self.outputs.first().cloned().expect("every command writes an output");
        let mut parameters = serde_json::to_value(args).map_err(|e| CliError::Format(e.to_string()))?;
        if let Some(map) = parameters.as_object_mut() {
            map.insert("two_w".into(), serde_json::json!(2.0 * w));
        }
        let manifest = Manifest {
            tool: TOOL,
            version: VERSION,
            command: std::env::args().collect(),
            parameters,
            master_seed: seed,
            inputs: self.inputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
            outputs: self.outputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
            started_unix: self.started,
            finished_unix: unix_now(),
        };
        write_json(&manifest_path(&primary), &manifest)
    }
}

fn read_pulse(path: &Path) -> Result<Pulse, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file: PulseFile =
        serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    Ok(file.to_pulse()?)
}

fn write_pulse(path: &Path, pulse: &Pulse, params: DesignParams) -> Result<(), CliError> {
    let file = PulseFile::from_pulse(
        pulse,
        PulseMetadata {
            created_by: created_by(),
            design_params: params,
        },
    );
    write_json(path, &file)
}

fn pulse_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pulse".into())
}

pub fn pswf(a: &PswfArgs) -> Result<(), CliError> {
    let mut run = Run::start();
    let basis = PswfBasis::build(PswfConfig::new(a.c, a.n))?;
    write_json(&a.out, &basis.export())?;
    let csv_path = sibling(&a.out, "csv");
    let mut csv = Csv::new(&["i", "lambda", "one_minus_lambda"]);
    for (i, (l, q)) in basis.eigenvalues().iter().zip(basis.complements()).enumerate() {
        csv.row(&[i.to_string(), num(*l), num(*q)]);
    }
    let sum: f64 = basis.eigenvalues().iter().sum();
    csv.comment(&format!("sum_lambda,{}", num(sum)));
    write_atomic(&csv_path, csv.as_bytes())?;
    println!("{} functions, sum of eigenvalues {sum}", basis.len());
    run.outputs = vec![a.out.clone(), csv_path];
    run.finish(a, 0.5, None)
}

#[derive(Debug, Serialize)]
struct RrcReport {
    kind: &'static str,
    beta: f64,
    ts: f64,
    w: f64,
    energy: f64,
    in_band_energy: f64,
    oobe: f64,
}

pub fn rrc(a: &RrcArgs, w: f64) -> Result<(), CliError> {
    let mut run = Run::start();
    let pulse = Pulse::truncated_rrc(a.beta, w, a.ts)?;
    let spectrum = pulse.oobe();
    let report = RrcReport {
        kind: pulse.kind_name(),
        beta: a.beta,
        ts: a.ts,
        w,
        energy: pulse.energy(),
        in_band_energy: spectrum.in_band_energy,
        oobe: spectrum.oobe,
    };
    write_pulse(&a.out, &pulse, DesignParams::default())?;
    let report_path = sibling(&a.out, "report.json");
    write_json(&report_path, &report)?;
    println!("{}", serde_json::to_string(&report).map_err(|e| CliError::Format(e.to_string()))?);
    run.outputs = vec![a.out.clone(), report_path];
    run.finish(a, w, None)
}

#[derive(Debug, Serialize)]
struct OptimizeReport {
    objective: f64,
    objective_db: f64,
    kkt_residual: f64,
    constraint_residuals: (f64, f64),
    restarts: usize,
    seed: u64,
    best_restart_index: usize,
    restart_log: Vec<RestartRecord>,
}

fn design_basis(ts: f64, w: f64, n: usize) -> Result<Arc<PswfBasis>, CliError> {
    Ok(Arc::new(PswfBasis::build(PswfConfig::new(2.0 * ts * w, n))?))
}

pub fn optimize(a: &OptimizeArgs, w: f64) -> Result<(), CliError> {
    let mut run = Run::start();
    let basis = design_basis(a.ts, w, a.n)?;
    let mut problem = DesignProblem::new(basis.clone(), a.n, a.ts, a.t_mod, a.depth, a.epsilon);
    problem.restarts = a.restarts;
    problem.seed = a.seed;
    problem.even_only = !a.full;
    let result = solve(&problem)?;
    let pulse = Pulse::pswf(basis, &result.alphas, a.ts, w)?;
    write_pulse(
        &a.out,
        &pulse,
        DesignParams {
            t_mod: Some(a.t_mod),
            depth: Some(a.depth),
            epsilon: Some(a.epsilon),
        },
    )?;
    let report = OptimizeReport {
        objective: result.objective,
        objective_db: to_db(result.objective),
        kkt_residual: result.kkt_residual,
        constraint_residuals: result.constraint_residuals,
        restarts: result.restarts_used,
        seed: a.seed,
        best_restart_index: result.best_restart_index,
        restart_log: result.restart_log,
    };
    let report_path = sibling(&a.out, "result.json");
    write_json(&report_path, &report)?;
    println!(
        "sigma2_risi = {:e} ({:.3} dB), kkt residual {:e}",
        report.objective, report.objective_db, report.kkt_residual
    );
    run.outputs = vec![a.out.clone(), report_path];
    run.finish(a, w, Some(a.seed))
}

pub fn risi_sweep(a: &SweepArgs, w: f64) -> Result<(), CliError> {
    let mut run = Run::start();
    if a.rrc_beta.is_empty() && a.pulses.is_empty() && !a.optimized {
        return Err(CliError::Usage(
            "nothing to sweep: give --rrc-beta, --pulse or --optimized".into(),
        ));
    }
    let mut sources: Vec<(String, Pulse)> = Vec::new();
    for &beta in &a.rrc_beta {
        sources.push((format!("rrc_beta{beta}"), Pulse::truncated_rrc(beta, w, a.ts)?));
    }
    for path in &a.pulses {
        sources.push((pulse_id(path), read_pulse(path)?));
        run.inputs.push(path.clone());
    }

    let mut csv = Csv::new(&["pulse_id", "T", "L", "l_max", "sigma2_risi", "sigma2_risi_db"]);
    let mut push = |id: &str, t: f64, l: usize, l_max: usize, v: f64| {
        csv.row(&[
            id.to_string(),
            num(t),
            l.to_string(),
            l_max.to_string(),
            num(v),
            db_field(to_db(v)),
        ]);
    };
    for (id, pulse) in &sources {
        for &t in &a.t_grid {
            let taps = autocorr_taps(pulse, t)?;
            for &l in &a.depths {
                push(id, t, l, taps.l_max(), risi_variance(&taps, l));
            }
        }
    }
    if a.optimized {
        let basis = design_basis(a.ts, w, a.n)?;
        for &t in &a.t_grid {
            let mut problem = DesignProblem::new(basis.clone(), a.n, a.ts, t, 0, a.epsilon);
            problem.restarts = a.restarts;
            problem.seed = a.seed;
            problem.even_only = !a.full;
            let gram = gram_stack_for(&basis, &problem.active_indices(), t, a.ts)?;
            for &l in &a.depths {
                problem.depth = l;
                let r = solve_with_gram(&problem, &gram)?;
                push("optimized", t, l, gram.l_max(), r.objective);
            }
        }
    }
    write_atomic(&a.out, csv.as_bytes())?;
    println!("wrote {}", a.out.display());
    run.outputs = vec![a.out.clone()];
    run.finish(a, w, a.optimized.then_some(a.seed))
}

pub fn ber(a: &BerArgs, w: f64) -> Result<(), CliError> {
    let mut run = Run::start();
    let (id, pulse) = match (&a.pulse, a.rrc_beta) {
        (Some(path), _) => {
            run.inputs.push(path.clone());
            (pulse_id(path), read_pulse(path)?)
        }
        (None, Some(beta)) => (format!("rrc_beta{beta}"), Pulse::truncated_rrc(beta, w, a.ts)?),
        (None, None) => return Err(CliError::Usage("give --pulse or --rrc-beta".into())),
    };
    let constellation = Constellation::pam(a.m)?;
    let mut config = SimConfig::new(pulse, a.t_mod, a.depth);
    config.constellation = constellation;
    config.ebn0_db = a.ebn0.clone();
    config.max_bits = a.bits;
    config.max_errors = a.max_errors;
    config.block_len = a.block_len;
    config.master_seed = a.seed;
    let result = Simulator::new(config)?.run()?;
    if result.points.iter().any(|p| p.bits_sent == 0) {
        return Err(FtnError::InvalidConfig("no bits simulated".into()).into());
    }

    let mut csv = Csv::new(&["ebn0_db", "ber", "bits", "errors", "blocks", "pulse_id", "T", "L", "M", "seed"]);
    for p in &result.points {
        csv.row(&[
            num(p.ebn0_db),
            num(p.ber),
            p.bits_sent.to_string(),
            p.bit_errors.to_string(),
            p.blocks.to_string(),
            id.clone(),
            num(a.t_mod),
            a.depth.to_string(),
            a.m.to_string(),
            a.seed.to_string(),
        ]);
        println!("{:>6} dB  ber {:.4e}  ({} errors / {} bits)", p.ebn0_db, p.ber, p.bit_errors, p.bits_sent);
    }
    write_atomic(&a.out, csv.as_bytes())?;
    let detail = sibling(&a.out, "json");
    write_json(&detail, &result)?;
    run.outputs = vec![a.out.clone(), detail];
    run.finish(a, w, Some(a.seed))
}
