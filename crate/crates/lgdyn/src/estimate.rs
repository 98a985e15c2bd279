//! Real-coded genetic algorithm for parameter calibration against recorded
//! trajectories.
//!
//! The tracking objective is the sum of the absolute x and y trajectory
//! errors at the command-trace sample times. The GA uses elitism, blend
//! crossover and tournament-selected Gaussian mutation with a linearly
//! decaying step; every random draw happens while the offspring genomes are
//! generated, so evaluations may run in parallel without perturbing the
//! random stream and results are bitwise reproducible per seed.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::simulate::{simulate_maneuver, CommandTrace, ManeuverOptions, SimResult};
use crate::statespace::{evaluate_model, StateSpaceModel};
use crate::symexpr::ParamEnv;

/// Relative improvement below which a generation counts as stalled.
pub const STALL_RELATIVE_IMPROVEMENT: f64 = 1e-6;

/// Genetic-algorithm settings. Defaults follow the calibration setup:
/// population 100, at most 100 generations, crossover fraction 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub crossover_fraction: f64,
    pub elite_count: usize,
    /// Mutation sigma as a fraction of each variable's range; decays
    /// linearly over the generations.
    pub mutation_sigma_fraction: f64,
    pub stall_generations: usize,
    pub seed: u64,
    pub parallel_evaluations: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 100,
            max_generations: 100,
            crossover_fraction: 0.5,
            elite_count: 2,
            mutation_sigma_fraction: 0.1,
            stall_generations: 25,
            seed: 0,
            parallel_evaluations: true,
        }
    }
}

/// Per-variable search box.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GaError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(GaError::BadBounds {
                detail: "bounds must be non-empty and of equal length".to_string(),
            });
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l < h) {
                return Err(GaError::BadBounds {
                    detail: format!("variable {i}: lower bound {l} must be below upper bound {h}"),
                });
            }
        }
        Ok(Bounds { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn clip(&self, genome: &mut [f64]) {
        for (g, (l, h)) in genome.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *g = g.clamp(*l, *h);
        }
    }
}

/// Invalid GA configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum GaError {
    BadBounds { detail: String },
    BadConfig { detail: String },
}

impl fmt::Display for GaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GaError::BadBounds { detail } => write!(f, "bad bounds: {detail}"),
            GaError::BadConfig { detail } => write!(f, "bad GA config: {detail}"),
        }
    }
}

impl std::error::Error for GaError {}

/// Best/mean objective of one generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenStat {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
}

/// Outcome of a GA run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub best_params: Vec<f64>,
    pub best_objective: f64,
    pub history: Vec<GenStat>,
    pub generations_run: usize,
    pub seed: u64,
}

/// Runs the genetic algorithm on `objective` over `bounds`.
///
/// Each generation copies the `elite_count` best individuals, fills
/// `crossover_fraction` of the remainder by blend crossover of
/// tournament-selected parents (per-gene uniform on the parent interval
/// extended by 25% of its width, clipped to bounds) and the rest by Gaussian
/// mutation of tournament-selected parents with a linearly decaying sigma.
/// Terminates at `max_generations` or after `stall_generations` without
/// relative improvement of at least 1e-6.
pub fn run_ga<F>(
    config: &GaConfig,
    bounds: &Bounds,
    objective: F,
) -> Result<EstimationResult, GaError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if config.population_size < 4 {
        return Err(GaError::BadConfig {
            detail: format!(
                "population_size must be at least 4, got {}",
                config.population_size
            ),
        });
    }
    if !(0.0..=1.0).contains(&config.crossover_fraction) {
        return Err(GaError::BadConfig {
            detail: format!(
                "crossover_fraction must lie in [0, 1], got {}",
                config.crossover_fraction
            ),
        });
    }
    if config.elite_count > config.population_size {
        return Err(GaError::BadConfig {
            detail: "elite_count exceeds population_size".to_string(),
        });
    }

    let dim = bounds.dim();
    let pop_size = config.population_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut population: Vec<Vec<f64>> = (0..pop_size)
        .map(|_| {
            (0..dim)
                .map(|g| rng.random_range(bounds.lo[g]..bounds.hi[g]))
                .collect()
        })
        .collect();
    let mut fitness = evaluate_all(&population, &objective, config.parallel_evaluations);

    let mut history: Vec<GenStat> = Vec::new();
    let mut best_params = Vec::new();
    let mut best_objective = f64::INFINITY;
    let mut stall = 0usize;
    let mut generations_run = 0usize;

    for gen in 1..=config.max_generations {
        generations_run = gen;
        // Rank by objective; ties break on index for determinism.
        let mut order: Vec<usize> = (0..pop_size).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));

        let gen_best = fitness[order[0]];
        let finite: Vec<f64> = fitness.iter().copied().filter(|v| v.is_finite()).collect();
        let mean = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        if gen_best < best_objective {
            let improvement = if best_objective.is_finite() {
                (best_objective - gen_best) / best_objective.abs().max(1e-300)
            } else {
                f64::INFINITY
            };
            best_objective = gen_best;
            best_params = population[order[0]].clone();
            if improvement >= STALL_RELATIVE_IMPROVEMENT {
                stall = 0;
            } else {
                stall += 1;
            }
        } else {
            stall += 1;
        }
        history.push(GenStat {
            generation: gen,
            best: best_objective,
            mean,
        });

        if gen == config.max_generations || stall >= config.stall_generations {
            break;
        }

        // Breed the next generation. All random draws happen here, before
        // any evaluation, so the random stream does not depend on the
        // evaluation schedule.
        let n_offspring = pop_size - config.elite_count;
        let n_cross = (config.crossover_fraction * n_offspring as f64).round() as usize;
        let sigma_scale =
            config.mutation_sigma_fraction * (1.0 - gen as f64 / config.max_generations as f64);

        let tournament = |rng: &mut ChaCha8Rng| -> usize {
            let i = rng.random_range(0..pop_size);
            let j = rng.random_range(0..pop_size);
            if fitness[j].total_cmp(&fitness[i]).then(j.cmp(&i)) == std::cmp::Ordering::Less {
                j
            } else {
                i
            }
        };

        let mut next: Vec<Vec<f64>> = order[..config.elite_count]
            .iter()
            .map(|&i| population[i].clone())
            .collect();
        for k in 0..n_offspring {
            let child = if k < n_cross {
                let p1 = tournament(&mut rng);
                let p2 = tournament(&mut rng);
                let mut child = vec![0.0; dim];
                for g in 0..dim {
                    let (a, b) = (population[p1][g], population[p2][g]);
                    let (lo, hi) = (a.min(b), a.max(b));
                    let gap = hi - lo;
                    child[g] = rng.random_range(lo - 0.25 * gap..=hi + 0.25 * gap);
                }
                child
            } else {
                let p = tournament(&mut rng);
                let mut child = population[p].clone();
                for g in 0..dim {
                    let sigma = sigma_scale * (bounds.hi[g] - bounds.lo[g]);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    child[g] += sigma * z;
                }
                child
            };
            let mut child = child;
            bounds.clip(&mut child);
            next.push(child);
        }

        population = next;
        fitness = evaluate_all(&population, &objective, config.parallel_evaluations);
    }

    Ok(EstimationResult {
        best_params,
        best_objective,
        history,
        generations_run,
        seed: config.seed,
    })
}

fn evaluate_all<F>(population: &[Vec<f64>], objective: &F, parallel: bool) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if parallel {
        population.par_iter().map(|g| objective(g)).collect()
    } else {
        population.iter().map(|g| objective(g)).collect()
    }
}

/// Sum of absolute x and y deviations between a simulated trajectory and a
/// reference, both sampled on the same time grid.
pub fn tracking_objective(sim_xy: &[(f64, f64)], ref_x: &[f64], ref_y: &[f64]) -> f64 {
    assert_eq!(sim_xy.len(), ref_x.len());
    assert_eq!(sim_xy.len(), ref_y.len());
    sim_xy
        .iter()
        .zip(ref_x.iter().zip(ref_y))
        .map(|((sx, sy), (rx, ry))| (rx - sx).abs() + (ry - sy).abs())
        .sum()
}

/// Calibration problem for the robot model: the symbolic model plus every
/// binding except the calibrated variables (shared wheel damping, chassis
/// yaw damping, voltage coefficient).
pub struct TrackingProblem<'a> {
    pub model: &'a StateSpaceModel,
    pub base_env: ParamEnv,
    pub trace: &'a CommandTrace,
    pub ref_x: Vec<f64>,
    pub ref_y: Vec<f64>,
    pub dt: f64,
    pub v_channel: usize,
    pub omega_channel: usize,
}

impl TrackingProblem<'_> {
    /// Simulates the maneuver at the candidate parameters and returns the
    /// tracking objective; failed simulations (unstable step sizes at
    /// extreme parameters) score +infinity so the GA culls them.
    pub fn objective(&self, genome: &[f64]) -> f64 {
        let [b_common, b_h, c_gain] = genome else {
            return f64::INFINITY;
        };
        match self.simulate(*b_common, *b_h, *c_gain) {
            Ok(sim) => {
                let at_ref = sim.resampled(&self.trace.times());
                let xy: Vec<(f64, f64)> = at_ref.poses.iter().map(|p| (p.x, p.y)).collect();
                tracking_objective(&xy, &self.ref_x, &self.ref_y)
            }
            Err(_) => f64::INFINITY,
        }
    }

    /// One maneuver simulation at explicit calibration parameters.
    pub fn simulate(
        &self,
        b_common: f64,
        b_h: f64,
        c_gain: f64,
    ) -> Result<SimResult, crate::simulate::SimError> {
        let mut env = self.base_env.clone();
        for name in ["B_RL", "B_FL", "B_FR", "B_RR"] {
            env.bind(name, b_common);
        }
        env.bind("B_H", b_h);
        let numeric =
            evaluate_model(self.model, &env).map_err(|_| crate::simulate::SimError::NotFinite)?;
        simulate_maneuver(
            &numeric,
            c_gain,
            self.trace,
            self.dt,
            self.v_channel,
            self.omega_channel,
            &ManeuverOptions::default(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_config(seed: u64) -> (GaConfig, Bounds) {
        let config = GaConfig {
            population_size: 60,
            max_generations: 80,
            seed,
            parallel_evaluations: false,
            ..GaConfig::default()
        };
        let bounds = Bounds::new(vec![-5.0, -5.0, -5.0], vec![5.0, 5.0, 5.0]).unwrap();
        (config, bounds)
    }

    fn sphere(target: &[f64]) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
        move |x: &[f64]| {
            x.iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        }
    }

    #[test]
    fn recovers_sphere_optimum() {
        let target = [1.2, -2.3, 0.7];
        let (config, bounds) = sphere_config(42);
        let result = run_ga(&config, &bounds, sphere(&target)).unwrap();
        for (got, want) in result.best_params.iter().zip(&target) {
            assert!((got - want).abs() < 1e-2, "{got} vs {want}");
        }
    }

    #[test]
    fn best_objective_history_is_non_increasing() {
        let target = [0.5, 0.5, -1.0];
        let (config, bounds) = sphere_config(7);
        let result = run_ga(&config, &bounds, sphere(&target)).unwrap();
        for pair in result.history.windows(2) {
            assert!(pair[1].best <= pair[0].best);
        }
    }

    #[test]
    fn full_elitism_freezes_the_population() {
        let config = GaConfig {
            population_size: 10,
            elite_count: 10,
            max_generations: 5,
            stall_generations: 100,
            seed: 3,
            parallel_evaluations: false,
            ..GaConfig::default()
        };
        let bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let result = run_ga(&config, &bounds, |x: &[f64]| x[0]).unwrap();
        // With the whole population copied each generation the best value
        // after generation 1 never changes.
        let first = result.history[0].best;
        for stat in &result.history {
            assert_eq!(stat.best, first);
        }
    }

    #[test]
    fn identical_seeds_give_identical_results() {
        let target = [2.0, -1.0, 0.0];
        let (config, bounds) = sphere_config(99);
        let r1 = run_ga(&config, &bounds, sphere(&target)).unwrap();
        let r2 = run_ga(&config, &bounds, sphere(&target)).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn parallel_and_serial_evaluation_agree_bitwise() {
        let target = [2.0, -1.0, 0.0];
        let (mut config, bounds) = sphere_config(1234);
        config.parallel_evaluations = false;
        let serial = run_ga(&config, &bounds, sphere(&target)).unwrap();
        config.parallel_evaluations = true;
        let parallel = run_ga(&config, &bounds, sphere(&target)).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn all_evaluated_genomes_respect_bounds() {
        use std::sync::Mutex;
        let seen = Mutex::new(Vec::new());
        let bounds = Bounds::new(vec![1.0, -2.0], vec![2.0, -1.0]).unwrap();
        let config = GaConfig {
            population_size: 20,
            max_generations: 15,
            seed: 5,
            parallel_evaluations: false,
            ..GaConfig::default()
        };
        let _ = run_ga(&config, &bounds, |x: &[f64]| {
            seen.lock().unwrap().push(x.to_vec());
            x.iter().sum()
        })
        .unwrap();
        for genome in seen.lock().unwrap().iter() {
            assert!(genome[0] >= 1.0 && genome[0] <= 2.0);
            assert!(genome[1] >= -2.0 && genome[1] <= -1.0);
        }
    }

    #[test]
    fn infinite_objectives_are_culled_not_fatal() {
        let bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let config = GaConfig {
            population_size: 16,
            max_generations: 30,
            seed: 11,
            parallel_evaluations: false,
            ..GaConfig::default()
        };
        // Half the domain is poisoned.
        let result = run_ga(&config, &bounds, |x: &[f64]| {
            if x[0] < 0.5 {
                f64::INFINITY
            } else {
                (x[0] - 0.8) * (x[0] - 0.8)
            }
        })
        .unwrap();
        assert!(result.best_objective < 1e-3);
        assert!((result.best_params[0] - 0.8).abs() < 0.05);
    }

    #[test]
    fn shifted_reference_costs_the_shift_per_sample() {
        let xy: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.0)).collect();
        let ref_x: Vec<f64> = (0..10).map(|i| i as f64 + 0.05).collect();
        let ref_y = vec![0.0; 10];
        let obj = tracking_objective(&xy, &ref_x, &ref_y);
        assert!((obj - 10.0 * 0.05).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let bad_pop = GaConfig {
            population_size: 2,
            ..GaConfig::default()
        };
        assert!(run_ga(&bad_pop, &bounds, |_: &[f64]| 0.0).is_err());
        assert!(Bounds::new(vec![1.0], vec![1.0]).is_err());
        let bad_frac = GaConfig {
            crossover_fraction: 1.5,
            ..GaConfig::default()
        };
        assert!(run_ga(&bad_frac, &bounds, |_: &[f64]| 0.0).is_err());
    }
}
