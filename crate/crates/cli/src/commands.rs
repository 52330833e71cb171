//! The `run`, `gold-standard` and `geweke` subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use adaptrunc::ccv::{CcvPrior, ScalePrior};
use adaptrunc::diagnostics::{gold_standard_run, geweke_test, GewekeReport};
use adaptrunc::dpm::{DpmConfig, DpmModel, MixtureState, NormalMixtureHyper, Truncation};
use adaptrunc::lmm::{LmmConfig, LmmData, LmmModel, LmmPriors};
use adaptrunc::numeric::sample_log_categorical;
use adaptrunc::random_measures::{BetaStickParams, StickKind};
use adaptrunc::smc::{self, SmcOutput};
use adaptrunc::ts::{TsConfig, TsData, TsModel, TsPriors};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde_json::{json, Map, Value};

use crate::config::{ModelKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::models::{build, probe_moments, AnyModel, Reported};
use crate::output::{write_json, Cell, Table};

/// Result of a completed `run`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub stop_index: usize,
    pub converged: bool,
    pub out_dir: PathBuf,
}

fn prepare(config: &RunConfig) -> CliResult<PathBuf> {
    if let Some(threads) = config.threads {
        // the global pool can only be configured once per process
        if rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_err() {
            log::warn!("thread pool already initialised; ignoring threads = {threads}");
        }
    }
    let dir = PathBuf::from(&config.out);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("effective_config.toml"), config.to_toml()?)?;
    Ok(dir)
}

pub fn run_command(config: &RunConfig) -> CliResult<RunOutcome> {
    config.validate()?;
    let dir = prepare(config)?;
    match build(config, None)? {
        AnyModel::Dpm(m) => run_model(&m, config, &dir),
        AnyModel::Nrmii(m) => run_model(&m, config, &dir),
        AnyModel::Lmm(m) => run_model(&m, config, &dir),
        AnyModel::Ts(m) => run_model(&m, config, &dir),
    }
}

fn run_model<M: Reported>(model: &M, config: &RunConfig, dir: &Path) -> CliResult<RunOutcome> {
    let smc_config = config.smc_config()?;
    let start = Instant::now();
    let output = smc::run(model, &smc_config)?;
    let wall = start.elapsed().as_secs_f64();
    info!(
        "stopped at R = {} (converged: {}) after {wall:.2} s",
        output.stop_index, output.converged
    );

    write_trace(&output, &dir.join("ess_trace.csv"))?;
    let mut summary = Map::new();
    summary.insert("model".into(), json!(config.model.name()));
    summary.insert("truncation".into(), json!(config.truncation.name()));
    summary.insert("seed".into(), json!(config.seed));
    summary.insert("particles".into(), json!(config.particles));
    summary.insert("epsilon".into(), json!(config.epsilon));
    summary.insert("threshold".into(), json!(smc_config.threshold()));
    summary.insert("stop_index".into(), json!(output.stop_index));
    summary.insert("converged".into(), json!(output.converged));
    summary.insert("resamples".into(), json!(output.trace.iter().filter(|r| r.resampled).count()));
    summary.insert("final_ess".into(), json!(output.system.ess()?));
    summary.insert(
        "final_mean_atoms".into(),
        json!(output.trace.last().map_or(f64::NAN, |r| r.mean_atoms)),
    );
    summary.insert("hyperparameters".into(), Value::Object(probe_moments(model, &output.system)?));
    model.write_outputs(&output.system, config, dir, &mut summary)?;
    write_json(&dir.join("summary.json"), &Value::Object(summary))?;
    write_json(&dir.join("timing.json"), &json!({ "wall_time_seconds": wall }))?;
    if config.snapshot {
        write_snapshot(model, &output, &dir.join("particles.csv"))?;
    }
    Ok(RunOutcome {
        stop_index: output.stop_index,
        converged: output.converged,
        out_dir: dir.to_path_buf(),
    })
}

fn write_trace<S>(output: &SmcOutput<S>, path: &Path) -> CliResult<()> {
    let mut table = Table::new(&["iteration", "ess", "discrepancy", "resampled", "mean_atoms"]);
    for row in &output.trace {
        table.row(&[
            Cell::Int(row.iteration as u64),
            Cell::Num(row.ess),
            Cell::Num(row.discrepancy),
            Cell::Int(row.resampled as u64),
            Cell::Num(row.mean_atoms),
        ]);
    }
    table.write(path)
}

fn write_snapshot<M: Reported>(model: &M, output: &SmcOutput<M::State>, path: &Path) -> CliResult<()> {
    let names = model.probe_names();
    let mut header = vec!["particle", "log_weight", "log_likelihood", "truncation"];
    header.extend(names.iter().map(String::as_str));
    let mut table = Table::new(&header);
    for (i, p) in output.system.particles.iter().enumerate() {
        let mut cells = vec![
            Cell::Int(i as u64),
            Cell::Num(p.log_weight),
            Cell::Num(p.log_likelihood),
            Cell::Int(model.truncation_size(&p.state) as u64),
        ];
        cells.extend(model.probes(&p.state).into_iter().map(Cell::Num));
        table.row(&cells);
    }
    table.write(path)
}

/// Long fixed-truncation MCMC run with batch-means standard errors.
pub fn gold_standard_command(config: &RunConfig) -> CliResult<PathBuf> {
    config.validate()?;
    let dir = prepare(config)?;
    match build(config, config.gold.atoms)? {
        AnyModel::Dpm(m) => gold_model(&m, config, &dir)?,
        AnyModel::Nrmii(m) => gold_model(&m, config, &dir)?,
        AnyModel::Lmm(m) => gold_model(&m, config, &dir)?,
        AnyModel::Ts(m) => gold_model(&m, config, &dir)?,
    }
    Ok(dir)
}

fn gold_model<M: Reported>(model: &M, config: &RunConfig, dir: &Path) -> CliResult<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let state = model.initial_state(&mut rng)?;
    let grid = model.density_grid(config);
    let gold = gold_standard_run(
        model,
        state,
        config.gold.burn_in,
        config.gold.iterations,
        config.gold.batches,
        |s| model.probes(s),
        &grid,
        &mut rng,
    )?;
    let mut probes = Map::new();
    for (k, name) in model.probe_names().iter().enumerate() {
        probes.insert(
            name.clone(),
            json!({ "mean": gold.means[k], "std_error": gold.std_errors[k] }),
        );
    }
    let summary = json!({
        "model": config.model.name(),
        "truncation": config.truncation.name(),
        "seed": config.seed,
        "iterations": gold.iterations,
        "burn_in": config.gold.burn_in,
        "batches": config.gold.batches,
        "probes": probes,
    });
    write_json(&dir.join("gold_summary.json"), &summary)?;
    if !gold.grid.is_empty() {
        let mut table = Table::new(&["y", "density", "std_error"]);
        for ((x, d), se) in gold.grid.iter().zip(&gold.density).zip(&gold.density_se) {
            table.row(&[Cell::Num(*x), Cell::Num(*d), Cell::Num(*se)]);
        }
        table.write(&dir.join("gold_density.csv"))?;
    }
    Ok(())
}

/// Joint-distribution check of the model's MCMC kernel on a small synthetic
/// problem with proper priors.
pub fn geweke_command(config: &RunConfig) -> CliResult<GewekeReport> {
    config.validate()?;
    let dir = prepare(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (samples, thin) = (config.geweke.samples, config.geweke.thin);
    let report = match config.model {
        ModelKind::Dpm | ModelKind::Pym => mixture_geweke(config, samples, thin, &mut rng)?,
        ModelKind::Lmm => lmm_geweke(samples, thin, &mut rng)?,
        ModelKind::Ts => ts_geweke(samples, thin, &mut rng)?,
        ModelKind::Nrmii => {
            return Err(CliError::Config(
                "geweke is available for models dpm, pym, lmm and ts".into(),
            ))
        }
    };
    let value = json!({
        "model": config.model.name(),
        "samples": samples,
        "thin": thin,
        "seed": config.seed,
        "names": report.names,
        "ks_statistics": report.ks_statistics,
        "p_values": report.p_values,
        "min_p_value": report.min_p_value(),
    });
    write_json(&dir.join("geweke.json"), &value)?;
    Ok(report)
}

fn proper_block(scale: f64) -> CliResult<CcvPrior> {
    let mut prior = CcvPrior::new(ScalePrior::inverse_gamma(3.0, scale)?);
    prior.mass_shape = 3.0;
    prior.mass_rate = 3.0;
    Ok(prior)
}

fn mixture_geweke(config: &RunConfig, samples: usize, thin: usize, rng: &mut ChaCha8Rng) -> CliResult<GewekeReport> {
    let kind = if config.model == ModelKind::Pym {
        StickKind::PoissonDirichlet
    } else {
        StickKind::DirichletProcess
    };
    let truncation = match config.truncation {
        crate::config::TruncationKind::Sb => Truncation::Sb,
        _ => Truncation::Rsb,
    };
    let atoms = 4;
    let model = DpmModel::new(
        vec![0.0; 5],
        NormalMixtureHyper::new(0.0, 4.0, 3.0, 1.0)?,
        DpmConfig {
            truncation,
            kind,
            initial_atoms: atoms,
            ..DpmConfig::default()
        },
    )?;
    let prior = |rng: &mut ChaCha8Rng| -> adaptrunc::Result<(MixtureState, Vec<f64>)> {
        let mut state = model.prior_state(atoms, rng)?;
        state.mass = Exp1.sample(rng);
        if kind == StickKind::PoissonDirichlet {
            state.discount = rng.random::<f64>();
        }
        let params = BetaStickParams::new(kind, state.mass, state.discount)?;
        state.sticks = (1..=atoms).map(|j| params.sample_stick(j, rng)).collect();
        if truncation == Truncation::Sb {
            state.sticks[atoms - 1] = 1.0;
        }
        state.atoms = (0..atoms).map(|_| model.hyper.sample_atom(rng)).collect();
        let log_p: Vec<f64> = model.weights(&state)?.iter().map(|p| p.ln()).collect();
        for s in state.alloc.iter_mut() {
            *s = sample_log_categorical(&log_p, rng)?;
        }
        let data = simulate_mixture(&state, rng);
        Ok((state, data))
    };
    let mut names = vec!["v1", "mass"];
    if kind == StickKind::PoissonDirichlet {
        names.push("discount");
    }
    Ok(geweke_test(
        &names,
        prior,
        |s, d: &Vec<f64>, rng| DpmModel { data: d.clone(), ..model.clone() }.sweep(s, rng),
        |s, rng| Ok(simulate_mixture(s, rng)),
        |s| {
            let mut v = vec![s.sticks[0], s.mass];
            if kind == StickKind::PoissonDirichlet {
                v.push(s.discount);
            }
            v
        },
        samples,
        thin,
        rng,
    )?)
}

fn simulate_mixture(state: &MixtureState, rng: &mut ChaCha8Rng) -> Vec<f64> {
    state
        .alloc
        .iter()
        .map(|&s| {
            let z: f64 = StandardNormal.sample(rng);
            state.atoms[s].mean + state.atoms[s].var.sqrt() * z
        })
        .collect()
}

fn lmm_geweke(samples: usize, thin: usize, rng: &mut ChaCha8Rng) -> CliResult<GewekeReport> {
    let y = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
    let x = vec![vec![vec![1.0], vec![1.0]], vec![vec![1.0], vec![0.5]]];
    let priors = LmmPriors {
        eps: proper_block(2.0)?,
        gam: proper_block(2.0)?,
        beta_precision: 1.0,
    };
    let model = LmmModel::new(LmmData::new(y, x)?, priors, LmmConfig { initial_atoms: 3 })?;
    Ok(geweke_test(
        &["a_eps", "var_eps", "mass_eps", "a_gam", "var_gam", "beta"],
        |rng: &mut ChaCha8Rng| {
            let s = model.prior_state(3, rng)?;
            let d = model.simulate_responses(&s, rng)?;
            Ok((s, d))
        },
        |s, d: &LmmData, rng| LmmModel { data: d.clone(), ..model.clone() }.sweep(s, rng),
        |s, rng| model.simulate_responses(s, rng),
        |s| vec![s.eps.a, s.eps.var, s.eps.mass, s.gam.a, s.gam.var, s.beta[0]],
        samples,
        thin,
        rng,
    )?)
}

fn ts_geweke(samples: usize, thin: usize, rng: &mut ChaCha8Rng) -> CliResult<GewekeReport> {
    let priors = TsPriors {
        eps: proper_block(2.0)?,
        trend: CcvPrior::new(ScalePrior::inverse_gamma(3.0, 0.5)?),
        alpha1_var: 1.0,
    };
    let model = TsModel::new(TsData::new(vec![0.0; 4])?, priors, TsConfig { initial_atoms: 3 })?;
    Ok(geweke_test(
        &["a_alpha", "var_alpha", "mass_alpha", "a_eps", "var_eps"],
        |rng: &mut ChaCha8Rng| {
            let s = model.prior_state(3, rng)?;
            let d = model.simulate_series(&s, rng)?;
            Ok((s, d))
        },
        |s, d: &TsData, rng| TsModel { data: d.clone(), ..model.clone() }.sweep(s, rng),
        |s, rng| model.simulate_series(s, rng),
        |s| vec![s.a_alpha, s.var_alpha, s.mass_alpha, s.eps.a, s.eps.var],
        samples,
        thin,
        rng,
    )?)
}
