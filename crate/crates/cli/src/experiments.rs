//! Grid sweeps over the synthetic studies.
//!
//! Every (grid point, repetition) pair gets its own seed derived from the
//! master seed, so results do not depend on execution order.

use std::thread;

use eigenfed::estimators::{self, AggregateSolution};
use eigenfed::federation::{self, Aggregator, FederationError, Topology};
use eigenfed::linalg::{self, Matrix};
use eigenfed::metrics::{bound_simplified, subspace_dist2};
use eigenfed::models::{self, derive_seed, stream, NodeDataset};
use eigenfed::{Error, SubspaceEstimate};

use crate::config::{EstimatorTag, Experiment, ExperimentConfig, ModelSpec};

/// Seed stream reserved for grid points; keeps them apart from the model streams.
const GRID_STREAM: u64 = 0x100;

/// One CSV row: the swept value, one median per estimator, and the rate for
/// `bound-check`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep: f64,
    pub values: Vec<f64>,
    pub theo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub experiment: Experiment,
    pub sweep_name: &'static str,
    pub estimators: Vec<EstimatorTag>,
    pub squared: bool,
    pub repetitions: usize,
    pub master_seed: u64,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec![self.sweep_name.to_string()];
        h.extend(self.estimators.iter().map(|e| e.tag().to_string()));
        if self.experiment == Experiment::BoundCheck {
            h.push("theo".to_string());
        }
        h
    }
}

/// Fully specified grid point.
#[derive(Debug, Clone)]
struct GridPoint {
    sweep: f64,
    d: usize,
    r: usize,
    m: usize,
    n: usize,
    source: Source,
}

#[derive(Debug, Clone)]
enum Source {
    Gaussian(ModelSpec),
    Atoms { k: usize },
    Sensing { tau_mult: f64, noise_sd: f64 },
}

fn grid(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    let (d, r0, m0) = (cfg.d, cfg.r[0], cfg.m[0]);
    let point = |sweep: f64, r: usize, m: usize, n: usize, source: Source| GridPoint {
        sweep,
        d,
        r,
        m,
        n,
        source,
    };
    let model = || cfg.model.clone().expect("validated: model present");
    let single_r_star = |spec: ModelSpec, r_star: f64| match spec {
        ModelSpec::M2 { delta, .. } => ModelSpec::M2 {
            delta,
            r_star: vec![r_star],
        },
        other => other,
    };
    match cfg.experiment {
        Experiment::SynthPca | Experiment::BoundCheck => cfg
            .n
            .iter()
            .map(|&n| point(n as f64, r0, m0, n, Source::Gaussian(model())))
            .collect(),
        Experiment::VaryM => cfg
            .m
            .iter()
            .zip(&cfg.n)
            .map(|(&m, &n)| point(m as f64, r0, m, n, Source::Gaussian(model())))
            .collect(),
        Experiment::IntdimSweep => {
            let ModelSpec::M2 { r_star, .. } = model() else {
                unreachable!("validated: intdim-sweep uses m2")
            };
            r_star
                .iter()
                .map(|&rs| point(rs, r0, m0, cfg.n[0], Source::Gaussian(single_r_star(model(), rs))))
                .collect()
        }
        Experiment::FixedRankSweep => cfg
            .r
            .iter()
            .map(|&r| point(r as f64, r, m0, cfg.n[0], Source::Gaussian(model())))
            .collect(),
        Experiment::Nongauss => cfg
            .n
            .iter()
            .map(|&n| point(n as f64, r0, m0, n, Source::Atoms { k: cfg.k.expect("validated") }))
            .collect(),
        Experiment::Quadsense => cfg
            .i
            .iter()
            .map(|&i| {
                let source = Source::Sensing {
                    tau_mult: cfg.tau_mult,
                    noise_sd: cfg.noise_sd,
                };
                point(i as f64, r0, m0, i * r0 * d, source)
            })
            .collect(),
    }
}

fn spectral_model(spec: &ModelSpec, d: usize, r: usize) -> Result<models::SpectralModel, Error> {
    match spec {
        ModelSpec::M1 {
            lambda_lo,
            lambda_hi,
            delta,
        } => models::model_m1(d, r, *lambda_lo, *lambda_hi, *delta),
        ModelSpec::M2 { delta, r_star } => models::model_m2(d, r, *delta, r_star[0]),
    }
}

/// Local data of one repetition and the subspace it should recover.
struct Trial {
    truth: SubspaceEstimate,
    datasets: Vec<NodeDataset>,
}

fn build_trial(p: &GridPoint, seed: u64) -> Result<Trial, Error> {
    match &p.source {
        Source::Gaussian(spec) => {
            let model = spectral_model(spec, p.d, p.r)?.with_basis_seed(derive_seed(seed, stream::BASIS, 0));
            let (x, truth) = models::realize_matrix(&model)?;
            let datasets = models::gaussian_nodes(&x, p.m, p.n, seed)?;
            Ok(Trial { truth, datasets })
        }
        Source::Atoms { k } => {
            let atoms = models::discrete_uniform_atoms(*k, p.d, derive_seed(seed, stream::ATOMS, 0))?;
            let (truth, _) = linalg::top_eigenspace(&models::atoms_second_moment(&atoms), p.r)?;
            let datasets = models::atom_nodes(&atoms, p.m, p.n, seed)?;
            Ok(Trial { truth, datasets })
        }
        Source::Sensing { tau_mult, noise_sd } => {
            let inst = models::sensing_instance(p.d, p.r, p.m * p.n, *tau_mult, *noise_sd, seed)?;
            let datasets = (0..p.m)
                .map(|i| {
                    let dn = models::sensing_surrogate(&inst, i * p.n..(i + 1) * p.n)?;
                    Ok(NodeDataset::from_matrix(i, dn, p.n))
                })
                .collect::<Result<Vec<_>, Error>>()?;
            Ok(Trial {
                truth: inst.x_sharp,
                datasets,
            })
        }
    }
}

/// Errors that abort a whole run.
#[derive(Debug)]
pub enum RunError {
    Io(std::io::Error),
    Transport(FederationError),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Io(e) => write!(f, "i/o error: {e}"),
            Self::Transport(e) => write!(f, "federation failure: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

/// Runs one estimator through the in-process federation. `Ok(None)` marks a
/// degenerate aggregate or a failed computation, reported as NaN.
fn run_estimator(
    tag: EstimatorTag,
    trial: &Trial,
    r: usize,
    cfg: &ExperimentConfig,
) -> Result<Option<SubspaceEstimate>, RunError> {
    let mats: Vec<&Matrix> = trial.datasets.iter().map(|d| &d.local_matrix).collect();
    let m = mats.len();
    let topology = Topology::in_process(m).with_timeout(cfg.timeout);
    let work = |i: usize| estimators::solve_local(i, mats[i], r);
    let outcome: Result<AggregateSolution, FederationError> = match tag {
        // The central estimator pools raw data; it is the non-distributed baseline.
        EstimatorTag::Erm => estimators::central_estimator(&trial.datasets, r).map_err(FederationError::from),
        EstimatorTag::One | EstimatorTag::Fix => {
            federation::run_one_shot(&topology, &work, Aggregator::Procrustes { reference_index: 0 }).map(|(a, _)| a)
        }
        EstimatorTag::Itr => federation::run_parallel_align(&topology, &work, cfg.n_iter).map(|(a, _)| a),
        EstimatorTag::Rot => federation::run_one_shot(&topology, &work, Aggregator::ProjectorAverage).map(|(a, _)| a),
        EstimatorTag::Nve => federation::run_one_shot(&topology, &work, Aggregator::Naive).map(|(a, _)| a),
    };
    match outcome {
        Ok(agg) => {
            if agg.is_degenerate() {
                log::warn!("{}: degenerate aggregate, reporting NaN", tag.tag());
            }
            Ok(agg.estimate)
        }
        Err(FederationError::Compute(e)) => {
            log::warn!("{}: computation failed ({e}), reporting NaN", tag.tag());
            Ok(None)
        }
        Err(e) => Err(RunError::Transport(e)),
    }
}

fn median(xs: &[f64]) -> f64 {
    if xs.iter().any(|x| x.is_nan()) {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn run_repetition(p: &GridPoint, seed: u64, cfg: &ExperimentConfig) -> Result<Vec<f64>, RunError> {
    let trial = match build_trial(p, seed) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("grid point {}: sampling failed ({e}), reporting NaN", p.sweep);
            return Ok(vec![f64::NAN; cfg.estimators.len()]);
        }
    };
    let squared = cfg.experiment.squared();
    cfg.estimators
        .iter()
        .map(|&tag| {
            Ok(match run_estimator(tag, &trial, p.r, cfg)? {
                Some(est) => {
                    let d = subspace_dist2(&est, &trial.truth).map_err(|e| RunError::Transport(e.into()))?;
                    if squared {
                        d * d
                    } else {
                        d
                    }
                }
                None => f64::NAN,
            })
        })
        .collect()
}

fn theo(p: &GridPoint) -> Option<f64> {
    match &p.source {
        Source::Gaussian(spec) => {
            let model = spectral_model(spec, p.d, p.r).ok()?;
            Some(bound_simplified(model.intdim(), p.n as f64, p.m as f64, model.delta))
        }
        _ => None,
    }
}

/// Runs every grid point for `cfg.repetitions` seeds and reduces by median.
/// Repetitions of a grid point run concurrently.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable, RunError> {
    let points = grid(cfg);
    let mut rows = Vec::with_capacity(points.len());
    for (gi, p) in points.iter().enumerate() {
        log::info!(
            "{} point {}/{}: {} = {}",
            cfg.experiment.tag(),
            gi + 1,
            points.len(),
            cfg.experiment.sweep_name(),
            p.sweep
        );
        let per_rep: Vec<Vec<f64>> = thread::scope(|s| {
            let handles: Vec<_> = (0..cfg.repetitions)
                .map(|rep| {
                    let seed = derive_seed(cfg.master_seed, GRID_STREAM + gi as u64, rep as u64);
                    s.spawn(move || run_repetition(p, seed, cfg))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("repetition thread panicked"))
                .collect::<Result<_, _>>()
        })?;
        let values = (0..cfg.estimators.len())
            .map(|j| median(&per_rep.iter().map(|v| v[j]).collect::<Vec<_>>()))
            .collect();
        let theo = if cfg.experiment == Experiment::BoundCheck {
            theo(p)
        } else {
            None
        };
        rows.push(ResultRow {
            sweep: p.sweep,
            values,
            theo,
        });
    }
    Ok(ResultTable {
        experiment: cfg.experiment,
        sweep_name: cfg.experiment.sweep_name(),
        estimators: cfg.estimators.clone(),
        squared: cfg.experiment.squared(),
        repetitions: cfg.repetitions,
        master_seed: cfg.master_seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RawConfig;

    fn cfg(text: &str) -> ExperimentConfig {
        RawConfig::parse(text).unwrap().build().unwrap()
    }

    #[test]
    fn median_propagates_nan() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[1.0, f64::NAN]).is_nan());
    }

    #[test]
    fn grid_has_one_row_per_point() {
        let c = cfg("[experiment]\nname = quadsense\nd = 20\nr = 2\nm = 3\ni = 1, 2, 4\n");
        let g = grid(&c);
        assert_eq!(g.iter().map(|p| p.n).collect::<Vec<_>>(), vec![40, 80, 160]);
        let c = cfg("[experiment]\nname = intdim-sweep\nd = 30\nr = 2\nm = 3\nn = 60\n[model]\ndelta = 0.1\nr_star = 4, 6, 10\n");
        assert_eq!(grid(&c).len(), 3);
    }

    #[test]
    fn quadsense_naive_column_is_poor() {
        let c = cfg("[experiment]\nname = quadsense\nd = 40\nr = 2\nm = 6\ni = 4\nrepetitions = 3\nn_iter = 5\n");
        let t = run_experiment(&c).unwrap();
        let row = &t.rows[0];
        assert_eq!(t.header(), vec!["i", "erm", "itr", "nve"]);
        assert!(row.values[1] < row.values[2], "{row:?}");
    }
}
