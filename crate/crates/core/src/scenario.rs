//! Synthetic crowd-sensing worlds: a road grid, users with power-law
//! abilities placed on it, Poisson arrivals, and the model that turns an
//! effort bid into the set of points a submission covers.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bidding::{AbilityDistribution, BidError};
use crate::coverage::{build_manhattan_grid, AoiGrid, CoverageError, PointId, SensingProfile, UserId};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Grid(#[from] CoverageError),
    #[error(transparent)]
    Ability(#[from] BidError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario file: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub avenues: usize,
    pub streets: usize,
    pub avenue_len_m: f64,
    pub street_len_m: f64,
    pub spacing_m: f64,
}

impl Default for GridConfig {
    /// Three avenues of 1135 m and three streets of 319 m at 1 m spacing.
    fn default() -> Self {
        GridConfig { avenues: 3, streets: 3, avenue_len_m: 1135.0, street_len_m: 319.0, spacing_m: 1.0 }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<AoiGrid, CoverageError> {
        build_manhattan_grid(self.avenues, self.streets, self.avenue_len_m, self.street_len_m, self.spacing_m)
    }
}

/// Physical sensing range of a user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RangeModel {
    /// Every user senses `meters` around itself.
    Fixed { meters: f64 },
    /// Ability mapped affinely onto `[min_m, max_m]`.
    Affine { min_m: f64, max_m: f64 },
}

impl Default for RangeModel {
    fn default() -> Self {
        RangeModel::Affine { min_m: 3.0, max_m: 10.0 }
    }
}

impl RangeModel {
    pub fn range_for(&self, ability: f64) -> f64 {
        match *self {
            RangeModel::Fixed { meters } => meters,
            RangeModel::Affine { min_m, max_m } => min_m + (max_m - min_m) * ability.clamp(0.0, 1.0),
        }
    }

    pub fn max_range(&self) -> f64 {
        match *self {
            RangeModel::Fixed { meters } => meters,
            RangeModel::Affine { max_m, .. } => max_m,
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let ok = match *self {
            RangeModel::Fixed { meters } => meters >= 0.0 && meters.is_finite(),
            RangeModel::Affine { min_m, max_m } => min_m >= 0.0 && max_m >= min_m && max_m.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(format!("bad sensing range model {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    /// Arrivals per time step.
    pub rate: f64,
    /// Number of time steps.
    pub horizon: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub grid: GridConfig,
    /// Registered users; only those arriving before the horizon take part.
    pub users: usize,
    pub ability_exponent: f64,
    pub range: RangeModel,
    pub arrival_rate: f64,
    pub horizon: u64,
    /// Meters walked per unit of effort.
    pub walk_scale_m: f64,
    /// Error scale at zero effort.
    pub noise_scale: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            grid: GridConfig::default(),
            users: 200,
            ability_exponent: 0.5,
            range: RangeModel::default(),
            arrival_rate: 2.0,
            horizon: 256,
            walk_scale_m: 100.0,
            noise_scale: 1.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        AbilityDistribution::new(self.ability_exponent)?;
        self.range.validate()?;
        if !(self.arrival_rate > 0.0) || !self.arrival_rate.is_finite() {
            return Err(ScenarioError::Invalid(format!("arrival rate {} must be positive", self.arrival_rate)));
        }
        if !(self.walk_scale_m >= 0.0) || !(self.noise_scale > 0.0) {
            return Err(ScenarioError::Invalid("walk scale must be >= 0 and noise scale > 0".into()));
        }
        Ok(())
    }

    pub fn arrival_process(&self) -> ArrivalProcess {
        ArrivalProcess { rate: self.arrival_rate, horizon: self.horizon }
    }
}

/// Grid plus a precomputed neighborhood table for coverage lookups.
#[derive(Debug)]
pub struct SensingField {
    grid: AoiGrid,
    max_range_m: f64,
    // (neighbor, squared distance in meters) within max_range_m, per point
    near: Vec<Vec<(PointId, f64)>>,
}

impl SensingField {
    pub fn new(grid: AoiGrid, max_range_m: f64) -> Self {
        let near = (0..grid.len() as PointId)
            .map(|p| {
                let (x0, y0) = (grid.points()[p as usize].x, grid.points()[p as usize].y);
                grid.within_radius(p, max_range_m)
                    .into_iter()
                    .map(|q| {
                        let pt = &grid.points()[q as usize];
                        (q, (pt.x - x0).powi(2) + (pt.y - y0).powi(2))
                    })
                    .collect()
            })
            .collect();
        SensingField { grid, max_range_m, near }
    }

    pub fn grid(&self) -> &AoiGrid {
        &self.grid
    }

    pub fn max_range_m(&self) -> f64 {
        self.max_range_m
    }

    fn within(&self, p: PointId, range_m: f64, out: &mut Vec<PointId>) {
        let r2 = range_m * range_m + 1e-9;
        if range_m <= self.max_range_m {
            out.extend(self.near[p as usize].iter().filter(|(_, d2)| *d2 <= r2).map(|(q, _)| *q));
        } else {
            out.extend(self.grid.within_radius(p, range_m));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    /// Behavior ability in `(0, 1]`.
    pub ability: f64,
    pub sensing_range_m: f64,
    pub location: PointId,
    /// Arrival time step in `1..=T`.
    pub arrival: u64,
    /// Seed of the user's private walk stream.
    pub walk_seed: u64,
    /// Unit-mean exponential draw shared by every mechanism's error model.
    pub error_draw: f64,
}

/// Inverse-CDF ability draws `u^(1/c)` with `u` uniform on `(0, 1]`.
pub fn sample_abilities<R: Rng + ?Sized>(n: usize, c: f64, rng: &mut R) -> Result<Vec<f64>, ScenarioError> {
    let dist = AbilityDistribution::new(c)?;
    Ok((0..n).map(|_| dist.quantile(1.0 - rng.random::<f64>())).collect())
}

/// Poisson arrival times, mapped to integer steps `ceil(t)` in `1..=T`, sorted.
pub fn generate_arrivals<R: Rng + ?Sized>(process: &ArrivalProcess, rng: &mut R) -> Vec<u64> {
    let mut out = Vec::new();
    if process.horizon == 0 {
        return out;
    }
    let gap = Exp::new(process.rate).expect("positive arrival rate");
    let horizon = process.horizon as f64;
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t > horizon {
            break;
        }
        out.push((t.ceil() as u64).max(1));
    }
    out
}

/// Per-submission measurement error with standard deviation `noise / (1 + e)`:
/// an exponential variate, so it is nonnegative with mean equal to its spread.
pub fn measurement_error<R: Rng + ?Sized>(effort: f64, noise_scale: f64, rng: &mut R) -> f64 {
    let draw: f64 = Exp1.sample(rng);
    scaled_error(effort, noise_scale, draw)
}

/// Error for a fixed unit-exponential draw.
pub fn scaled_error(effort: f64, noise_scale: f64, draw: f64) -> f64 {
    draw * noise_scale / (1.0 + effort.max(0.0))
}

/// Points covered by a user who walks `walk_scale_m * effort` meters along
/// the roads from its location, sensing everything within its range.
///
/// The walk keeps going straight, reverses at dead ends, and at crossings
/// takes the least recently visited branch; remaining ties consume the rng.
/// A longer walk extends a shorter one with the same rng stream, so coverage
/// never shrinks as effort grows.
pub fn realize_profile<R: Rng + ?Sized>(
    user: &User,
    effort: f64,
    field: &SensingField,
    walk_scale_m: f64,
    rng: &mut R,
) -> SensingProfile {
    let grid = field.grid();
    let spacing = grid.spacing_m();
    let cap = 20 * grid.len().max(1);
    let steps = ((walk_scale_m * effort.max(0.0)) / spacing + 1e-9).floor();
    let steps = if steps.is_finite() { (steps as usize).min(cap) } else { cap };

    let mut last_visit: HashMap<PointId, usize> = HashMap::new();
    let mut current = user.location;
    let mut prev: Option<PointId> = None;
    last_visit.insert(current, 0);
    let mut options = Vec::with_capacity(4);
    for step in 1..=steps {
        options.clear();
        options.extend(grid.road_neighbors(current).filter(|&q| Some(q) != prev));
        if options.is_empty() {
            match prev {
                Some(p) => options.push(p),
                None => break,
            }
        }
        let oldest = options.iter().map(|q| last_visit.get(q).map_or(-1, |&s| s as i64)).min().unwrap();
        options.retain(|q| last_visit.get(q).map_or(-1, |&s| s as i64) == oldest);
        let next = if options.len() == 1 { options[0] } else { options[rng.random_range(0..options.len())] };
        prev = Some(current);
        current = next;
        last_visit.insert(current, step);
    }

    let mut visited: Vec<PointId> = last_visit.into_keys().collect();
    visited.sort_unstable();
    let mut covered = Vec::new();
    for p in visited {
        field.within(p, user.sensing_range_m, &mut covered);
    }
    SensingProfile::new(covered)
}

/// A generated world, reproducible from `(config, seed)`.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub users: Vec<User>,
    field: Arc<SensingField>,
}

/// Keyed sub-streams of one seed.
fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const ABILITY_STREAM: u64 = 1;
const ARRIVAL_STREAM: u64 = 2;
const PLACEMENT_STREAM: u64 = 3;

impl Scenario {
    /// Builds the field for a config; share it across scenarios with the same grid.
    pub fn field_for(config: &ScenarioConfig) -> Result<Arc<SensingField>, ScenarioError> {
        Ok(Arc::new(SensingField::new(config.grid.build()?, config.range.max_range())))
    }

    pub fn generate(config: &ScenarioConfig, seed: u64) -> Result<Scenario, ScenarioError> {
        let field = Self::field_for(config)?;
        Self::generate_in(config, seed, field)
    }

    /// Generates users on an existing field built from the same grid config.
    pub fn generate_in(config: &ScenarioConfig, seed: u64, field: Arc<SensingField>) -> Result<Scenario, ScenarioError> {
        config.validate()?;
        if field.grid().is_empty() {
            return Err(ScenarioError::Invalid("empty grid".into()));
        }
        let mut arrivals = generate_arrivals(&config.arrival_process(), &mut stream(seed, ARRIVAL_STREAM));
        arrivals.truncate(config.users);
        let abilities = sample_abilities(arrivals.len(), config.ability_exponent, &mut stream(seed, ABILITY_STREAM))?;
        let mut place = stream(seed, PLACEMENT_STREAM);
        let m = field.grid().len() as u32;
        let users = arrivals
            .into_iter()
            .zip(abilities)
            .enumerate()
            .map(|(k, (arrival, ability))| User {
                id: UserId(k as u32),
                ability,
                sensing_range_m: config.range.range_for(ability),
                location: place.random_range(0..m),
                arrival,
                walk_seed: place.random(),
                error_draw: Exp1.sample(&mut place),
            })
            .collect();
        Ok(Scenario { config: config.clone(), seed, users, field })
    }

    pub fn field(&self) -> &Arc<SensingField> {
        &self.field
    }

    pub fn grid(&self) -> &AoiGrid {
        self.field.grid()
    }

    /// Users as arrivals, in arrival order.
    pub fn arrivals(&self) -> Vec<crate::mechanism::Arrival> {
        self.users
            .iter()
            .map(|u| crate::mechanism::Arrival { user: u.id, time: u.arrival, ability: u.ability })
            .collect()
    }

    pub fn user(&self, id: UserId) -> Option<&User> {
        self.users.get(id.0 as usize).filter(|u| u.id == id)
    }

    /// Profile of `id` at `effort`, using the user's private walk stream.
    pub fn profile(&self, id: UserId, effort: f64) -> SensingProfile {
        let user = self.user(id).expect("user belongs to the scenario");
        let mut rng = ChaCha8Rng::seed_from_u64(user.walk_seed);
        realize_profile(user, effort, &self.field, self.config.walk_scale_m, &mut rng)
    }

    pub fn quality_error(&self, id: UserId, effort: f64) -> f64 {
        let user = self.user(id).expect("user belongs to the scenario");
        scaled_error(effort, self.config.noise_scale, user.error_draw)
    }

    /// Writes the scenario as TOML: config, seed and every user.
    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        let file = ScenarioFile { seed: self.seed, config: self.config.clone(), users: self.users.clone() };
        toml::to_string(&file).map_err(|e| ScenarioError::Format(e.to_string()))
    }

    /// Restores a scenario written by [`Scenario::to_toml`].
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Format(e.to_string()))?;
        file.config.validate()?;
        let field = Self::field_for(&file.config)?;
        let m = field.grid().len() as u32;
        for (k, u) in file.users.iter().enumerate() {
            if u.id.0 as usize != k || u.location >= m {
                return Err(ScenarioError::Format(format!("user entry {k} is inconsistent with the grid")));
            }
        }
        Ok(Scenario { config: file.config, seed: file.seed, users: file.users, field })
    }
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    seed: u64,
    config: ScenarioConfig,
    users: Vec<User>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_field(len: f64, range: f64) -> SensingField {
        SensingField::new(build_manhattan_grid(1, 0, len, 0.0, 1.0).unwrap(), range)
    }

    fn user_at(location: PointId, range: f64) -> User {
        User {
            id: UserId(0),
            ability: 0.5,
            sensing_range_m: range,
            location,
            arrival: 1,
            walk_seed: 7,
            error_draw: 1.0,
        }
    }

    #[test]
    fn ability_inverse_cdf() {
        let d = AbilityDistribution::new(0.5).unwrap();
        assert_eq!(d.quantile(0.25), 0.0625);
        assert_eq!(d.quantile(1.0), 1.0);
    }

    #[test]
    fn zero_effort_covers_range_only() {
        let field = line_field(50.0, 10.0);
        let u = user_at(20, 3.0);
        let p = realize_profile(&u, 0.0, &field, 100.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(p.len(), 7);
        assert_eq!(p.covered(), &[17, 18, 19, 20, 21, 22, 23]);
    }

    #[test]
    fn profiles_grow_with_effort() {
        let field = SensingField::new(build_manhattan_grid(2, 2, 60.0, 40.0, 1.0).unwrap(), 10.0);
        let u = user_at(5, 4.0);
        let mut prev = SensingProfile::empty();
        for k in 0..40 {
            let e = k as f64 * 0.05;
            let p = realize_profile(&u, e, &field, 100.0, &mut ChaCha8Rng::seed_from_u64(u.walk_seed));
            assert!(prev.is_subset_of(&p), "effort {e}");
            prev = p;
        }
        assert!(prev.len() > 100);
    }

    #[test]
    fn same_inputs_same_profile() {
        let field = SensingField::new(build_manhattan_grid(2, 2, 60.0, 40.0, 1.0).unwrap(), 10.0);
        let u = user_at(33, 5.0);
        let a = realize_profile(&u, 0.7, &field, 100.0, &mut ChaCha8Rng::seed_from_u64(3));
        let b = realize_profile(&u, 0.7, &field, 100.0, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn arrivals_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(generate_arrivals(&ArrivalProcess { rate: 2.0, horizon: 0 }, &mut rng).is_empty());
        let a = generate_arrivals(&ArrivalProcess { rate: 2.0, horizon: 10 }, &mut ChaCha8Rng::seed_from_u64(9));
        let b = generate_arrivals(&ArrivalProcess { rate: 2.0, horizon: 10 }, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|&t| (1..=10).contains(&t)));
    }

    #[test]
    fn error_model_limits() {
        assert_eq!(scaled_error(0.0, 2.0, 1.5), 3.0);
        assert!(scaled_error(1e12, 2.0, 1.5) < 1e-11);
    }

    #[test]
    fn default_world_builds() {
        let s = Scenario::generate(&ScenarioConfig::default(), 11).unwrap();
        assert_eq!(s.grid().len(), 4353);
        assert_eq!(s.users.len(), 200);
        for u in &s.users {
            assert!(u.ability > 0.0 && u.ability <= 1.0);
            assert!((3.0..=10.0).contains(&u.sensing_range_m));
            assert!((u.location as usize) < 4353);
            assert!((1..=256).contains(&u.arrival));
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ScenarioConfig {
            grid: GridConfig { avenues: 2, streets: 2, avenue_len_m: 40.0, street_len_m: 30.0, spacing_m: 1.0 },
            users: 12,
            ..ScenarioConfig::default()
        };
        let s = Scenario::generate(&cfg, 5).unwrap();
        let back = Scenario::from_toml(&s.to_toml().unwrap()).unwrap();
        assert_eq!(back.users, s.users);
        assert_eq!(back.config, s.config);
        assert_eq!(back.profile(UserId(3), 0.4), s.profile(UserId(3), 0.4));
    }
}
