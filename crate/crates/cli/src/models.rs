//! Model construction from a configuration and per-model reporting.

use std::path::Path;

use adaptrunc::datasets::{self, standardize};
use adaptrunc::dpm::{predictive_density, DpmConfig, DpmModel, NormalMixtureHyper, Truncation};
use adaptrunc::lmm::{lmm_summaries, load_grouped_csv, LmmConfig, LmmModel, LmmPriors};
use adaptrunc::nrmii::{NrmiiConfig, NrmiiModel};
use adaptrunc::numeric::linspace;
use adaptrunc::random_measures::{GammaProcess, LevelScheme, StickKind};
use adaptrunc::smc::{ParticleSystem, SmcModel};
use adaptrunc::ts::{ts_summaries, TsConfig, TsModel, TsPriors};
use serde_json::{json, Map, Value};

use crate::config::{ModelKind, PriorConfig, RunConfig, ScaleSpec, SchemeKind, TruncationKind};
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table};

/// What the commands need from a model beyond the SMC contract.
pub trait Reported: SmcModel {
    fn probe_names(&self) -> Vec<String>;

    fn probes(&self, state: &Self::State) -> Vec<f64>;

    /// Grid for predictive densities; empty when the model has none.
    fn density_grid(&self, _config: &RunConfig) -> Vec<f64> {
        Vec::new()
    }

    /// Writes the model's density files and adds its own entries to the
    /// summary.
    fn write_outputs(
        &self,
        system: &ParticleSystem<Self::State>,
        config: &RunConfig,
        dir: &Path,
        summary: &mut Map<String, Value>,
    ) -> CliResult<()>;
}

pub enum AnyModel {
    Dpm(DpmModel),
    Nrmii(NrmiiModel<GammaProcess>),
    Lmm(LmmModel),
    Ts(TsModel),
}

fn named_series(name: &str) -> Option<Vec<f64>> {
    match name {
        "galaxy" => Some(datasets::galaxy_scaled()),
        "nile" => Some(datasets::nile()),
        _ => None,
    }
}

fn load_series(data: Option<&str>, default: &str) -> CliResult<Vec<f64>> {
    let name = data.unwrap_or(default);
    match named_series(name) {
        Some(values) => Ok(values),
        None => datasets::load_column(Path::new(name)).map_err(|source| CliError::Read {
            path: name.to_string(),
            source,
        }),
    }
}

fn hyper(prior: &PriorConfig, data: &[f64]) -> CliResult<NormalMixtureHyper> {
    Ok(match (prior.mu0, prior.sigma2, prior.alpha, prior.beta) {
        (Some(m), Some(s), Some(a), Some(b)) => NormalMixtureHyper::new(m, s, a, b)?,
        _ => NormalMixtureHyper::from_data(data)?,
    })
}

/// Builds the configured model. `fixed` replaces the initial number of
/// atoms (or of expected jumps under the compound-Poisson truncation).
pub fn build(config: &RunConfig, fixed: Option<usize>) -> CliResult<AnyModel> {
    let prior = &config.prior;
    let atoms = fixed.unwrap_or(config.initial_atoms);
    match config.model {
        ModelKind::Dpm | ModelKind::Pym => {
            let data = load_series(config.data.as_deref(), "galaxy")?;
            let truncation = match config.truncation {
                TruncationKind::Rsb => Truncation::Rsb,
                TruncationKind::Sb => Truncation::Sb,
                TruncationKind::Fk => Truncation::Fk,
                TruncationKind::Cpp => return Err(CliError::Config("cpp needs model \"nrmii\"".into())),
            };
            let kind = if config.model == ModelKind::Pym {
                StickKind::PoissonDirichlet
            } else {
                StickKind::DirichletProcess
            };
            let dpm = DpmConfig {
                truncation,
                kind,
                mass: prior.mass,
                discount: prior.discount,
                initial_atoms: atoms,
                fixed_variance: prior.fixed_variance,
            };
            let hyper = hyper(prior, &data)?;
            Ok(AnyModel::Dpm(DpmModel::new(data, hyper, dpm)?))
        }
        ModelKind::Nrmii => {
            let data = load_series(config.data.as_deref(), "galaxy")?;
            let scheme = match config.scheme {
                SchemeKind::OneAtom => LevelScheme::OneAtom,
                SchemeKind::Geometric => LevelScheme::Geometric { xi: config.xi },
            };
            let levy = GammaProcess::new(prior.mass.unwrap_or(1.0))?;
            let nrmii = NrmiiConfig {
                scheme,
                initial_expected_atoms: fixed.map_or(config.initial_expected_atoms, |n| n as f64),
            };
            let hyper = hyper(prior, &data)?;
            Ok(AnyModel::Nrmii(NrmiiModel::new(data, hyper, levy, nrmii)?))
        }
        ModelKind::Lmm => {
            let path = config
                .data
                .as_deref()
                .ok_or_else(|| CliError::Config("model \"lmm\" needs a data path".into()))?;
            let data = load_grouped_csv(path).map_err(|source| CliError::Read {
                path: path.to_string(),
                source,
            })?;
            let defaults = LmmPriors::default();
            let priors = LmmPriors {
                eps: PriorConfig::block_prior(prior.eps_scale, ScaleSpec::FoldedT { nu: 1.0, a: 0.01 })?,
                gam: PriorConfig::block_prior(prior.gam_scale, ScaleSpec::FoldedT { nu: 1.0, a: 1.0 })?,
                beta_precision: prior.beta_precision.unwrap_or(defaults.beta_precision),
            };
            Ok(AnyModel::Lmm(LmmModel::new(data, priors, LmmConfig { initial_atoms: atoms })?))
        }
        ModelKind::Ts => {
            let raw = load_series(config.data.as_deref(), "nile")?;
            let data = adaptrunc::ts::TsData::new(standardize(&raw)?)?;
            let defaults = TsPriors::default();
            let priors = TsPriors {
                eps: PriorConfig::block_prior(prior.eps_scale, ScaleSpec::FoldedT { nu: 1.0, a: 1.0 })?,
                trend: PriorConfig::block_prior(prior.trend_scale, ScaleSpec::FoldedT { nu: 1.0, a: 0.01 })?,
                alpha1_var: prior.alpha1_var.unwrap_or(defaults.alpha1_var),
            };
            Ok(AnyModel::Ts(TsModel::new(data, priors, TsConfig { initial_atoms: atoms })?))
        }
    }
}

/// Weighted mean and standard deviation of each probe.
pub fn probe_moments<M: Reported>(model: &M, system: &ParticleSystem<M::State>) -> CliResult<Map<String, Value>> {
    let weights = system.normalized_weights()?;
    let names = model.probe_names();
    let values: Vec<Vec<f64>> = system.particles.iter().map(|p| model.probes(&p.state)).collect();
    let mut out = Map::new();
    for (k, name) in names.iter().enumerate() {
        let mean: f64 = values.iter().zip(&weights).map(|(v, w)| w * v[k]).sum();
        let var: f64 = values.iter().zip(&weights).map(|(v, w)| w * (v[k] - mean).powi(2)).sum();
        out.insert(name.clone(), json!({ "mean": mean, "sd": var.sqrt() }));
    }
    Ok(out)
}

fn weighted_mean<S: Clone + Send + Sync>(system: &ParticleSystem<S>, f: impl Fn(&S) -> f64) -> CliResult<f64> {
    let weights = system.normalized_weights()?;
    Ok(system.particles.iter().zip(&weights).map(|(p, w)| w * f(&p.state)).sum())
}

/// `[floor(min - r/10), ceil(max + r/10)]` for data range `r`, unless the
/// configuration fixes an end.
fn data_grid(data: &[f64], config: &RunConfig) -> Vec<f64> {
    let min = data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.1 * (max - min);
    let lo = config.grid.lo.unwrap_or((min - pad).floor());
    let hi = config.grid.hi.unwrap_or((max + pad).ceil());
    linspace(lo, hi, config.grid.points)
}

fn centred_grid(sd: f64, config: &RunConfig) -> Vec<f64> {
    let half = 4.0 * sd.max(1e-12);
    linspace(config.grid.lo.unwrap_or(-half), config.grid.hi.unwrap_or(half), config.grid.points)
}

fn write_curve(path: &Path, x_name: &str, grid: &[f64], density: &[f64]) -> CliResult<()> {
    let mut table = Table::new(&[x_name, "density"]);
    for (x, d) in grid.iter().zip(density) {
        table.row(&[Cell::Num(*x), Cell::Num(*d)]);
    }
    table.write(path)
}

impl Reported for DpmModel {
    fn probe_names(&self) -> Vec<String> {
        let mut names = vec!["mass".to_string()];
        if self.config.kind == StickKind::PoissonDirichlet {
            names.push("discount".into());
        }
        names.extend(["atoms".to_string(), "occupied".to_string()]);
        names
    }

    fn probes(&self, state: &Self::State) -> Vec<f64> {
        let mut values = vec![state.mass];
        if self.config.kind == StickKind::PoissonDirichlet {
            values.push(state.discount);
        }
        let occupied = state.counts().iter().filter(|&&c| c > 0).count();
        values.extend([state.len() as f64, occupied as f64]);
        values
    }

    fn density_grid(&self, config: &RunConfig) -> Vec<f64> {
        data_grid(&self.data, config)
    }

    fn write_outputs(
        &self,
        system: &ParticleSystem<Self::State>,
        config: &RunConfig,
        dir: &Path,
        _summary: &mut Map<String, Value>,
    ) -> CliResult<()> {
        let grid = self.density_grid(config);
        let density = predictive_density(self, system, &grid)?;
        write_curve(&dir.join("density_predictive.csv"), "y", &grid, &density)
    }
}

impl Reported for NrmiiModel<GammaProcess> {
    fn probe_names(&self) -> Vec<String> {
        ["v", "total_jump", "atoms", "occupied"].map(String::from).to_vec()
    }

    fn probes(&self, state: &Self::State) -> Vec<f64> {
        let occupied = state.counts().iter().filter(|&&c| c > 0).count();
        vec![
            state.v,
            state.jumps.iter().sum(),
            state.jumps.len() as f64,
            occupied as f64,
        ]
    }

    fn density_grid(&self, config: &RunConfig) -> Vec<f64> {
        data_grid(&self.data, config)
    }

    fn write_outputs(
        &self,
        system: &ParticleSystem<Self::State>,
        config: &RunConfig,
        dir: &Path,
        _summary: &mut Map<String, Value>,
    ) -> CliResult<()> {
        let grid = self.density_grid(config);
        let density = predictive_density(self, system, &grid)?;
        write_curve(&dir.join("density_predictive.csv"), "y", &grid, &density)
    }
}

impl Reported for LmmModel {
    fn probe_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["a_eps", "var_eps", "mass_eps", "atoms_eps", "a_gam", "var_gam", "mass_gam", "atoms_gam"]
            .map(String::from)
            .to_vec();
        names.extend(self.data.regressors.iter().map(|r| format!("beta_{r}")));
        names
    }

    fn probes(&self, state: &Self::State) -> Vec<f64> {
        let mut values = vec![
            state.eps.a,
            state.eps.var,
            state.eps.mass,
            state.eps.len() as f64,
            state.gam.a,
            state.gam.var,
            state.gam.mass,
            state.gam.len() as f64,
        ];
        values.extend(&state.beta);
        values
    }

    fn write_outputs(
        &self,
        system: &ParticleSystem<Self::State>,
        config: &RunConfig,
        dir: &Path,
        summary: &mut Map<String, Value>,
    ) -> CliResult<()> {
        let grid_eps = centred_grid(weighted_mean(system, |s| s.eps.var)?.sqrt(), config);
        let grid_gam = centred_grid(weighted_mean(system, |s| s.gam.var)?.sqrt(), config);
        let s = lmm_summaries(system, &grid_eps, &grid_gam)?;
        write_curve(&dir.join("density_eps.csv"), "x", &grid_eps, &s.f_eps)?;
        write_curve(&dir.join("density_gamma.csv"), "x", &grid_gam, &s.f_gam)?;

        let mut table = Table::new(&["coefficient", "x", "density"]);
        let mut coefficients = Vec::new();
        for (name, m) in self.data.regressors.iter().zip(&s.beta) {
            for (x, d) in m.grid.iter().zip(&m.density) {
                table.row(&[Cell::Text(name), Cell::Num(*x), Cell::Num(*d)]);
            }
            coefficients.push(json!({
                "name": name,
                "mean": m.mean,
                "sd": m.sd,
                "q025": m.q025,
                "median": m.median,
                "q975": m.q975,
            }));
        }
        table.write(&dir.join("density_beta.csv"))?;
        summary.insert("coefficients".into(), Value::Array(coefficients));
        Ok(())
    }
}

impl Reported for TsModel {
    fn probe_names(&self) -> Vec<String> {
        ["a_eps", "var_eps", "mass_eps", "atoms", "a_alpha", "var_alpha", "mass_alpha", "clusters"]
            .map(String::from)
            .to_vec()
    }

    fn probes(&self, state: &Self::State) -> Vec<f64> {
        vec![
            state.eps.a,
            state.eps.var,
            state.eps.mass,
            state.truncation() as f64,
            state.a_alpha,
            state.var_alpha,
            state.mass_alpha,
            state.clusters() as f64,
        ]
    }

    fn write_outputs(
        &self,
        system: &ParticleSystem<Self::State>,
        config: &RunConfig,
        dir: &Path,
        summary: &mut Map<String, Value>,
    ) -> CliResult<()> {
        let grid_nu = centred_grid(weighted_mean(system, |s| s.var_alpha)?.sqrt(), config);
        let grid_eps = centred_grid(weighted_mean(system, |s| s.eps.var)?.sqrt(), config);
        let s = ts_summaries(system, &grid_nu, &grid_eps)?;
        write_curve(&dir.join("density_increment.csv"), "x", &grid_nu, &s.nu_density)?;
        write_curve(&dir.join("density_eps.csv"), "x", &grid_eps, &s.eps_density)?;

        let mut trend = Table::new(&["t", "q025", "median", "q975"]);
        for t in 0..s.alpha_median.len() {
            trend.row(&[
                Cell::Int(t as u64 + 1),
                Cell::Num(s.alpha_q025[t]),
                Cell::Num(s.alpha_median[t]),
                Cell::Num(s.alpha_q975[t]),
            ]);
        }
        trend.write(&dir.join("trend.csv"))?;

        let mut transition = Table::new(&["previous", "current", "density"]);
        for (i, row) in s.transition.iter().enumerate() {
            for (j, d) in row.iter().enumerate() {
                transition.row(&[Cell::Num(grid_eps[i]), Cell::Num(grid_eps[j]), Cell::Num(*d)]);
            }
        }
        transition.write(&dir.join("density_transition.csv"))?;
        summary.insert("series_length".into(), json!(s.alpha_median.len()));
        Ok(())
    }
}
