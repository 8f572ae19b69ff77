//! Exact event-by-event simulation of TMAP lives and Markovian binary trees,
//! encoding into life vectors, and aggregation into global rates.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{GlobalRates, RateBasis, RateRow};
use crate::likelihood::{LifeVector, LifeVectorSample, CENSORED, DEATH};
use crate::model::TmapModel;
use crate::rng::{stream, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Ages at which children were born, increasing.
    pub births: Vec<f64>,
    /// Age at death, `f64::INFINITY` if alive at the horizon.
    pub death: f64,
    /// Phase occupied at death or at the horizon.
    pub final_phase: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Hidden(usize),
    Birth(usize),
    Death,
}

/// Per-phase holding rates and cumulative event tables.
#[derive(Debug, Clone)]
pub struct Simulator {
    alpha_cdf: Vec<f64>,
    total: Vec<f64>,
    events: Vec<Vec<(f64, Event)>>,
}

impl Simulator {
    pub fn new(model: &TmapModel) -> Result<Self> {
        model.ensure_valid()?;
        let n = model.n();
        let mut total = vec![0.0; n];
        let mut events = vec![Vec::new(); n];
        for i in 0..n {
            let mut acc = 0.0;
            let mut push = |rate: f64, e: Event, list: &mut Vec<(f64, Event)>| {
                if rate > 0.0 {
                    acc += rate;
                    list.push((acc, e));
                }
            };
            for j in 0..n {
                if j != i {
                    push(model.d0()[(i, j)], Event::Hidden(j), &mut events[i]);
                }
                push(model.d1()[(i, j)], Event::Birth(j), &mut events[i]);
            }
            push(model.death()[i], Event::Death, &mut events[i]);
            total[i] = acc;
        }
        let mut acc = 0.0;
        let alpha_cdf = model
            .alpha()
            .iter()
            .map(|a| {
                acc += a;
                acc
            })
            .collect();
        Ok(Simulator {
            alpha_cdf,
            total,
            events,
        })
    }

    fn initial_phase<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.alpha_cdf.last().copied().unwrap_or(1.0);
        self.alpha_cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.alpha_cdf.len() - 1)
    }

    /// Simulates one life from age 0 until death or age `horizon`.
    pub fn trajectory<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> Trajectory {
        let phase = self.initial_phase(rng);
        self.run(phase, horizon, rng, |_| {})
    }

    fn run<R: Rng + ?Sized>(
        &self,
        mut phase: usize,
        horizon: f64,
        rng: &mut R,
        mut on_birth: impl FnMut(f64),
    ) -> Trajectory {
        let mut t = 0.0;
        let mut births = Vec::new();
        loop {
            let rate = self.total[phase];
            if rate <= 0.0 {
                // absorbing-free phase with no events: lives forever
                return Trajectory {
                    births,
                    death: f64::INFINITY,
                    final_phase: phase,
                };
            }
            let hold: f64 = Exp1.sample(rng);
            t += hold / rate;
            if t >= horizon {
                return Trajectory {
                    births,
                    death: f64::INFINITY,
                    final_phase: phase,
                };
            }
            let u = rng.random::<f64>() * rate;
            let list = &self.events[phase];
            let e = list
                .iter()
                .find(|(c, _)| u < *c)
                .unwrap_or_else(|| list.last().unwrap())
                .1;
            match e {
                Event::Hidden(j) => phase = j,
                Event::Birth(j) => {
                    births.push(t);
                    on_birth(t);
                    phase = j;
                }
                Event::Death => {
                    return Trajectory {
                        births,
                        death: t,
                        final_phase: phase,
                    }
                }
            }
        }
    }
}

pub fn simulate_trajectory<R: Rng + ?Sized>(model: &TmapModel, horizon: f64, rng: &mut R) -> Result<Trajectory> {
    if !(horizon > 0.0) {
        return Err(Error::structural("horizon must be positive"));
    }
    Ok(Simulator::new(model)?.trajectory(horizon, rng))
}

fn class_count(horizon: f64, l: f64) -> Result<usize> {
    if !(l > 0.0 && l.is_finite() && horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::structural("class length and horizon must be positive"));
    }
    let c = horizon / l;
    let r = c.round();
    if (c - r).abs() > 1e-9 * c.max(1.0) || r < 1.0 {
        return Err(Error::structural(format!(
            "horizon {horizon} is not a whole number of classes of length {l}"
        )));
    }
    Ok(r as usize)
}

/// Class containing age `t` under right-closed intervals `(jl, (j+1)l]`
/// (used for deaths; age 0 falls in class 0).
fn death_class(t: f64, l: f64) -> usize {
    ((t / l).ceil() as usize).saturating_sub(1)
}

/// Counts births per class `[jl, (j+1)l)`; a death in class `j` ends the
/// vector after `j + 1` counts with `-1`; survivors get `T / l` counts.
pub fn encode_life_vector(traj: &Trajectory, l: f64, horizon: f64) -> Result<LifeVector> {
    let classes = class_count(horizon, l)?;
    let last = if traj.death.is_finite() && traj.death <= horizon {
        Some(death_class(traj.death, l).min(classes - 1))
    } else {
        None
    };
    let len = last.map_or(classes, |j| j + 1);
    let mut counts = vec![0i32; len];
    for &b in &traj.births {
        let j = (b / l).floor() as usize;
        if j < len {
            counts[j] += 1;
        }
    }
    if last.is_some() {
        counts.push(DEATH);
    }
    LifeVector::new(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of individuals `N`.
    pub individuals: usize,
    /// Observation horizon `T`.
    pub horizon: f64,
    pub class_length: f64,
    pub seed: u64,
    /// Probability of replacing each observed count by `-2`.
    pub censoring: f64,
}

impl SimConfig {
    pub fn new(individuals: usize, horizon: f64, class_length: f64, seed: u64) -> Self {
        SimConfig {
            individuals,
            horizon,
            class_length,
            seed,
            censoring: 0.0,
        }
    }

    fn check(&self) -> Result<()> {
        if self.individuals == 0 {
            return Err(Error::structural("need at least one individual"));
        }
        if !(0.0..=1.0).contains(&self.censoring) {
            return Err(Error::structural("censoring probability must lie in [0, 1]"));
        }
        class_count(self.horizon, self.class_length).map(|_| ())
    }
}

/// Trajectories for `N` independent individuals on stream `(seed, replicate)`.
pub fn simulate_trajectories(model: &TmapModel, cfg: &SimConfig, replicate: u64) -> Result<Vec<Trajectory>> {
    cfg.check()?;
    let sim = Simulator::new(model)?;
    let mut rng = stream(cfg.seed, &[tag::SAMPLE, replicate]);
    Ok((0..cfg.individuals)
        .map(|_| sim.trajectory(cfg.horizon, &mut rng))
        .collect())
}

/// Encodes trajectories as a sample, applying censoring from its own stream.
pub fn encode_sample(trajs: &[Trajectory], cfg: &SimConfig, replicate: u64) -> Result<LifeVectorSample> {
    cfg.check()?;
    let vectors = trajs
        .iter()
        .map(|t| encode_life_vector(t, cfg.class_length, cfg.horizon))
        .collect::<Result<Vec<_>>>()?;
    let sample = LifeVectorSample::new(vectors, cfg.class_length)?;
    if cfg.censoring > 0.0 {
        let mut rng = stream(cfg.seed, &[tag::CENSOR, replicate]);
        censor(&sample, cfg.censoring, &mut rng)
    } else {
        Ok(sample)
    }
}

/// Simulates and encodes one life-vector sample.
pub fn simulate_sample(model: &TmapModel, cfg: &SimConfig, replicate: u64) -> Result<LifeVectorSample> {
    let trajs = simulate_trajectories(model, cfg, replicate)?;
    encode_sample(&trajs, cfg, replicate)
}

/// Masks each count entry independently with probability `c`.
pub fn censor<R: Rng + ?Sized>(sample: &LifeVectorSample, c: f64, rng: &mut R) -> Result<LifeVectorSample> {
    let vectors = sample
        .vectors()
        .iter()
        .map(|v| {
            let e = v
                .entries()
                .iter()
                .map(|&x| if x >= 0 && rng.random::<f64>() < c { CENSORED } else { x })
                .collect();
            LifeVector::new(e)
        })
        .collect::<Result<Vec<_>>>()?;
    LifeVectorSample::new(vectors, sample.class_length())
}

/// Per-class death probability and mean births from a sample, using only
/// individuals with an observed count in the class. Rows are per class.
pub fn aggregate_rates(sample: &LifeVectorSample) -> Result<GlobalRates> {
    let classes = sample
        .vectors()
        .iter()
        .map(|v| v.len() - usize::from(v.died()))
        .max()
        .unwrap_or(0);
    let mut entering = vec![0usize; classes];
    let mut dying = vec![0usize; classes];
    let mut births = vec![0f64; classes];
    let mut births_sq = vec![0f64; classes];
    for v in sample.vectors() {
        let e = v.entries();
        for (x, &k) in e.iter().enumerate() {
            if k < 0 {
                continue;
            }
            entering[x] += 1;
            births[x] += k as f64;
            births_sq[x] += (k as f64).powi(2);
            if e.get(x + 1) == Some(&DEATH) {
                dying[x] += 1;
            }
        }
    }
    let rows = (0..classes)
        .map(|x| {
            let n = entering[x] as f64;
            if entering[x] == 0 {
                return RateRow::default();
            }
            let mean = births[x] / n;
            let se = if entering[x] > 1 {
                let var = ((births_sq[x] - n * mean * mean) / (n - 1.0)).max(0.0);
                Some((var / n).sqrt())
            } else {
                Some(0.0)
            };
            RateRow {
                fertility: Some(mean),
                mortality: Some(dying[x] as f64 / n),
                count: Some(n),
                fertility_se: se,
            }
        })
        .collect::<Vec<_>>();
    if rows.iter().all(|r| r.count.is_none()) {
        // everything censored: keep the shape, no values
        return Ok(GlobalRates {
            class_length: sample.class_length(),
            basis: RateBasis::PerClass,
            rows,
        });
    }
    GlobalRates::new(sample.class_length(), RateBasis::PerClass, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeCaps {
    /// Individuals born but not yet simulated; reaching it counts as survival.
    pub max_population: usize,
    /// Absolute time; anyone alive then counts as survival.
    pub max_time: f64,
}

impl Default for TreeCaps {
    fn default() -> Self {
        TreeCaps {
            max_population: 10_000,
            max_time: 200.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeOutcome {
    Extinct,
    PopulationCap,
    TimeCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyTree {
    pub outcome: TreeOutcome,
    /// Individuals simulated, founder included.
    pub individuals: usize,
    pub last_event: f64,
}

impl FamilyTree {
    pub fn extinct(&self) -> bool {
        self.outcome == TreeOutcome::Extinct
    }
}

impl Simulator {
    /// Grows the tree breadth-first from one newborn founder.
    pub fn family_tree<R: Rng + ?Sized>(&self, caps: &TreeCaps, rng: &mut R) -> FamilyTree {
        let mut pending: VecDeque<f64> = VecDeque::from([0.0]);
        let mut individuals = 0;
        let mut last_event: f64 = 0.0;
        while let Some(born) = pending.pop_front() {
            individuals += 1;
            let phase = self.initial_phase(rng);
            let traj = self.run(phase, caps.max_time - born, rng, |_| {});
            for b in &traj.births {
                pending.push_back(born + b);
            }
            if !traj.death.is_finite() {
                return FamilyTree {
                    outcome: TreeOutcome::TimeCap,
                    individuals,
                    last_event: caps.max_time,
                };
            }
            last_event = last_event.max(born + traj.death);
            if pending.len() >= caps.max_population {
                return FamilyTree {
                    outcome: TreeOutcome::PopulationCap,
                    individuals,
                    last_event,
                };
            }
        }
        FamilyTree {
            outcome: TreeOutcome::Extinct,
            individuals,
            last_event,
        }
    }
}

pub fn simulate_family_tree<R: Rng + ?Sized>(model: &TmapModel, caps: &TreeCaps, rng: &mut R) -> Result<FamilyTree> {
    if caps.max_population == 0 || !(caps.max_time > 0.0) {
        return Err(Error::structural("tree caps must be positive"));
    }
    Ok(Simulator::new(model)?.family_tree(caps, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionEstimate {
    pub trees: usize,
    pub extinct: usize,
    pub frequency: f64,
    pub standard_error: f64,
}

/// Fraction of `trees` independent family trees that die out.
pub fn extinction_frequency(model: &TmapModel, trees: usize, caps: &TreeCaps, seed: u64) -> Result<ExtinctionEstimate> {
    if trees == 0 {
        return Err(Error::structural("need at least one tree"));
    }
    let sim = Simulator::new(model)?;
    let mut rng = stream(seed, &[tag::TREES]);
    let extinct = (0..trees)
        .filter(|_| sim.family_tree(caps, &mut rng).extinct())
        .count();
    let f = extinct as f64 / trees as f64;
    Ok(ExtinctionEstimate {
        trees,
        extinct,
        frequency: f,
        standard_error: (f * (1.0 - f) / trees as f64).sqrt(),
    })
}
