//! Point-coverage utility over an AoI road grid.
//!
//! The area of interest is a set of discrete points laid out along road
//! lines. A user's submission covers a subset of those points and the value
//! of a set of users is the number of distinct points they cover together.
//! That value is monotone and submodular, which the greedy threshold learner
//! relies on.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense point identifier in `[0, m)`.
pub type PointId = u32;

/// Identifier of a crowd-sensing participant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CoverageError {
    #[error("profile of user {user} references point {point} outside a grid of {m} points")]
    InvalidProfile { user: UserId, point: PointId, m: usize },
    #[error("user {0} is already a member of the selection")]
    DuplicateMember(UserId),
    #[error("invalid grid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed grid table at line {line}: {reason}")]
    Table { line: usize, reason: String },
    #[error("grid table i/o: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub id: PointId,
    /// Meters.
    pub x: f64,
    /// Meters.
    pub y: f64,
}

/// A discretized area of interest.
#[derive(Clone, Debug)]
pub struct AoiGrid {
    points: Vec<GridPoint>,
    lattice: Vec<(i32, i32)>,
    index: HashMap<(i32, i32), PointId>,
    spacing_m: f64,
    pub avenues: usize,
    pub streets: usize,
    pub avenue_length_points: usize,
    pub street_length_points: usize,
    pub intersection_count: usize,
}

impl AoiGrid {
    fn from_lattice(
        cells: Vec<(i32, i32)>,
        spacing_m: f64,
        avenues: usize,
        streets: usize,
        avenue_length_points: usize,
        street_length_points: usize,
        intersection_count: usize,
    ) -> Self {
        let mut index = HashMap::with_capacity(cells.len());
        let mut points = Vec::with_capacity(cells.len());
        for (k, &(ix, iy)) in cells.iter().enumerate() {
            let id = k as PointId;
            index.insert((ix, iy), id);
            points.push(GridPoint { id, x: ix as f64 * spacing_m, y: iy as f64 * spacing_m });
        }
        AoiGrid {
            points,
            lattice: cells,
            index,
            spacing_m,
            avenues,
            streets,
            avenue_length_points,
            street_length_points,
            intersection_count,
        }
    }

    /// Number of points `m`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }

    pub fn spacing_m(&self) -> f64 {
        self.spacing_m
    }

    pub fn point(&self, id: PointId) -> Option<&GridPoint> {
        self.points.get(id as usize)
    }

    /// Integer lattice coordinates of a point, in units of the grid spacing.
    pub fn lattice_of(&self, id: PointId) -> (i32, i32) {
        self.lattice[id as usize]
    }

    pub fn at_lattice(&self, ix: i32, iy: i32) -> Option<PointId> {
        self.index.get(&(ix, iy)).copied()
    }

    /// Road neighbors of a point: lattice points one spacing step away.
    /// Order is fixed: east, north, west, south.
    pub fn road_neighbors(&self, id: PointId) -> impl Iterator<Item = PointId> + '_ {
        let (ix, iy) = self.lattice_of(id);
        [(1, 0), (0, 1), (-1, 0), (0, -1)]
            .into_iter()
            .filter_map(move |(dx, dy)| self.at_lattice(ix + dx, iy + dy))
    }

    /// All points within `radius_m` (Euclidean) of `id`, including `id`.
    pub fn within_radius(&self, id: PointId, radius_m: f64) -> Vec<PointId> {
        let (ix, iy) = self.lattice_of(id);
        let reach = (radius_m / self.spacing_m).floor().max(0.0) as i32;
        let r2 = (radius_m / self.spacing_m).powi(2) + 1e-9;
        let mut out = Vec::new();
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                if ((dx * dx + dy * dy) as f64) <= r2 {
                    if let Some(p) = self.at_lattice(ix + dx, iy + dy) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }

    /// Writes the `id,x,y` point table.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<(), CoverageError> {
        let io = |e: std::io::Error| CoverageError::Io(e.to_string());
        writeln!(w, "id,x,y").map_err(io)?;
        for p in &self.points {
            writeln!(w, "{},{:.3},{:.3}", p.id, p.x, p.y).map_err(io)?;
        }
        Ok(())
    }

    /// Reads an `id,x,y` table. Coordinates must sit on a lattice with the
    /// given spacing; ids must be dense and in order. Road counts are not
    /// recoverable from a point table and are left at zero.
    pub fn read_table<R: BufRead>(r: R, spacing_m: f64) -> Result<AoiGrid, CoverageError> {
        if !(spacing_m > 0.0) {
            return Err(CoverageError::InvalidConfig("spacing must be positive".into()));
        }
        let mut cells = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| CoverageError::Io(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("id")) {
                continue;
            }
            let bad = |reason: &str| CoverageError::Table { line: n + 1, reason: reason.to_string() };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(bad("expected three fields"));
            }
            let id: usize = fields[0].trim().parse().map_err(|_| bad("bad id"))?;
            if id != cells.len() {
                return Err(bad("ids must be dense and ascending"));
            }
            let x: f64 = fields[1].trim().parse().map_err(|_| bad("bad x"))?;
            let y: f64 = fields[2].trim().parse().map_err(|_| bad("bad y"))?;
            let ix = (x / spacing_m).round();
            let iy = (y / spacing_m).round();
            if (ix * spacing_m - x).abs() > 1e-3 || (iy * spacing_m - y).abs() > 1e-3 {
                return Err(bad("coordinate off the lattice"));
            }
            cells.push((ix as i32, iy as i32));
        }
        let mut seen = std::collections::HashSet::new();
        for (k, c) in cells.iter().enumerate() {
            if !seen.insert(*c) {
                return Err(CoverageError::Table { line: k + 2, reason: "duplicate coordinate".into() });
            }
        }
        Ok(AoiGrid::from_lattice(cells, spacing_m, 0, 0, 0, 0, 0))
    }
}

/// Positions of `count` lines spread evenly inside `[0, extent)`.
fn line_offsets(count: usize, extent: usize) -> Vec<i32> {
    (0..count).map(|k| (((k + 1) * extent) / (count + 1)) as i32).collect()
}

/// Builds a Manhattan-style grid: avenues run west-east, streets run
/// south-north, and every avenue crosses every street once.
///
/// Each road is discretized at `spacing_m`, so an avenue holds
/// `floor(avenue_len_m / spacing_m)` points. Shared crossing points are
/// stored once.
pub fn build_manhattan_grid(
    avenues: usize,
    streets: usize,
    avenue_len_m: f64,
    street_len_m: f64,
    spacing_m: f64,
) -> Result<AoiGrid, CoverageError> {
    if !(spacing_m > 0.0) || !spacing_m.is_finite() {
        return Err(CoverageError::InvalidConfig("spacing must be positive".into()));
    }
    if avenues == 0 && streets == 0 {
        return Err(CoverageError::InvalidConfig("grid needs at least one road".into()));
    }
    let per_avenue = if avenues > 0 { (avenue_len_m / spacing_m + 1e-9).floor() as usize } else { 0 };
    let per_street = if streets > 0 { (street_len_m / spacing_m + 1e-9).floor() as usize } else { 0 };
    if avenues > 0 && per_avenue == 0 {
        return Err(CoverageError::InvalidConfig("avenue shorter than one spacing".into()));
    }
    if streets > 0 && per_street == 0 {
        return Err(CoverageError::InvalidConfig("street shorter than one spacing".into()));
    }

    let avenue_y = line_offsets(avenues, per_street.max(1));
    let street_x = line_offsets(streets, per_avenue.max(1));

    let mut cells = Vec::with_capacity(avenues * per_avenue + streets * per_street);
    let mut taken = std::collections::HashSet::new();
    for &y in &avenue_y {
        for x in 0..per_avenue as i32 {
            if taken.insert((x, y)) {
                cells.push((x, y));
            }
        }
    }
    let mut intersections = 0;
    for &x in &street_x {
        for y in 0..per_street as i32 {
            if taken.insert((x, y)) {
                cells.push((x, y));
            } else {
                intersections += 1;
            }
        }
    }
    Ok(AoiGrid::from_lattice(cells, spacing_m, avenues, streets, per_avenue, per_street, intersections))
}

/// Points covered by one user's submission.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensingProfile {
    covered: Vec<PointId>,
}

impl SensingProfile {
    pub fn new(points: impl IntoIterator<Item = PointId>) -> Self {
        let mut covered: Vec<PointId> = points.into_iter().collect();
        covered.sort_unstable();
        covered.dedup();
        SensingProfile { covered }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn covered(&self) -> &[PointId] {
        &self.covered
    }

    pub fn len(&self) -> usize {
        self.covered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covered.is_empty()
    }

    pub fn contains(&self, p: PointId) -> bool {
        self.covered.binary_search(&p).is_ok()
    }

    pub fn is_subset_of(&self, other: &SensingProfile) -> bool {
        self.covered.iter().all(|&p| other.contains(p))
    }

    /// Checks the profile against a grid of `m` points.
    pub fn validate(&self, user: UserId, m: usize) -> Result<(), CoverageError> {
        match self.covered.last() {
            Some(&p) if p as usize >= m => Err(CoverageError::InvalidProfile { user, point: p, m }),
            _ => Ok(()),
        }
    }
}

/// A set of users together with their sensing profiles.
#[derive(Clone, Debug, Default)]
pub struct Selection {
    members: Vec<UserId>,
    profiles: BTreeMap<UserId, SensingProfile>,
}

impl Selection {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, user: UserId, profile: SensingProfile) -> Result<(), CoverageError> {
        if self.profiles.contains_key(&user) {
            return Err(CoverageError::DuplicateMember(user));
        }
        self.members.push(user);
        self.profiles.insert(user, profile);
        Ok(())
    }

    pub fn members(&self) -> &[UserId] {
        &self.members
    }

    pub fn contains(&self, user: UserId) -> bool {
        self.profiles.contains_key(&user)
    }

    pub fn profile(&self, user: UserId) -> Option<&SensingProfile> {
        self.profiles.get(&user)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn validate(&self, m: usize) -> Result<(), CoverageError> {
        for (&u, p) in &self.profiles {
            p.validate(u, m)?;
        }
        Ok(())
    }

    fn covered_set(&self, m: usize) -> CoveredSet {
        let mut set = CoveredSet::new(m);
        for u in &self.members {
            set.insert(&self.profiles[u]);
        }
        set
    }
}

/// `U(S) = |union of covered points|`.
pub fn utility(sel: &Selection, grid: &AoiGrid) -> Result<usize, CoverageError> {
    sel.validate(grid.len())?;
    Ok(sel.covered_set(grid.len()).count())
}

/// `U_i(S) = U(S + i) - U(S)`.
pub fn marginal_utility(
    user: UserId,
    profile: &SensingProfile,
    sel: &Selection,
    grid: &AoiGrid,
) -> Result<usize, CoverageError> {
    if sel.contains(user) {
        return Err(CoverageError::DuplicateMember(user));
    }
    sel.validate(grid.len())?;
    profile.validate(user, grid.len())?;
    Ok(sel.covered_set(grid.len()).marginal(profile))
}

/// Bitmap of covered points, maintained incrementally by the greedy loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoveredSet {
    words: Vec<u64>,
    m: usize,
    count: usize,
}

impl CoveredSet {
    pub fn new(m: usize) -> Self {
        CoveredSet { words: vec![0; m.div_ceil(64)], m, count: 0 }
    }

    pub fn universe(&self) -> usize {
        self.m
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn contains(&self, p: PointId) -> bool {
        let p = p as usize;
        p < self.m && self.words[p / 64] & (1 << (p % 64)) != 0
    }

    /// Points of `profile` not yet covered. Points outside the universe are ignored.
    pub fn marginal(&self, profile: &SensingProfile) -> usize {
        profile
            .covered()
            .iter()
            .filter(|&&p| (p as usize) < self.m && !self.contains(p))
            .count()
    }

    /// Adds `profile`; returns the number of newly covered points.
    pub fn insert(&mut self, profile: &SensingProfile) -> usize {
        let mut added = 0;
        for &p in profile.covered() {
            let p = p as usize;
            if p >= self.m {
                continue;
            }
            let (w, b) = (p / 64, 1u64 << (p % 64));
            if self.words[w] & b == 0 {
                self.words[w] |= b;
                added += 1;
            }
        }
        self.count += added;
        added
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn line_grid(m: usize) -> AoiGrid {
        build_manhattan_grid(1, 0, m as f64, 0.0, 1.0).unwrap()
    }

    /// Naive set-union reference.
    fn union_size(profiles: &[&SensingProfile]) -> usize {
        profiles.iter().flat_map(|p| p.covered().iter().copied()).collect::<BTreeSet<_>>().len()
    }

    #[test]
    fn empty_selection_has_zero_utility() {
        assert_eq!(utility(&Selection::new(), &line_grid(3)).unwrap(), 0);
    }

    #[test]
    fn overlapping_pair_covers_union() {
        let grid = line_grid(3);
        let mut sel = Selection::new();
        let a = SensingProfile::new([0, 1]);
        let b = SensingProfile::new([1, 2]);
        sel.insert(UserId(1), a.clone()).unwrap();
        sel.insert(UserId(2), b.clone()).unwrap();
        assert_eq!(utility(&sel, &grid).unwrap(), union_size(&[&a, &b]));
        assert_eq!(utility(&sel, &grid).unwrap(), 3);
    }

    #[test]
    fn out_of_range_point_is_rejected() {
        let grid = line_grid(3);
        let mut sel = Selection::new();
        sel.insert(UserId(1), SensingProfile::new([0, 3])).unwrap();
        assert!(matches!(utility(&sel, &grid), Err(CoverageError::InvalidProfile { point: 3, .. })));
    }

    #[test]
    fn marginal_examples() {
        let grid = line_grid(3);
        let mut sel = Selection::new();
        assert_eq!(marginal_utility(UserId(9), &SensingProfile::new([0, 1, 2]), &sel, &grid).unwrap(), 3);
        sel.insert(UserId(1), SensingProfile::new([0, 1])).unwrap();
        assert_eq!(marginal_utility(UserId(2), &SensingProfile::new([1, 2]), &sel, &grid).unwrap(), 1);
        assert_eq!(marginal_utility(UserId(2), &SensingProfile::empty(), &sel, &grid).unwrap(), 0);
        assert_eq!(
            marginal_utility(UserId(1), &SensingProfile::new([2]), &sel, &grid),
            Err(CoverageError::DuplicateMember(UserId(1)))
        );
    }

    #[test]
    fn grid_counts() {
        let g = build_manhattan_grid(3, 3, 1135.0, 319.0, 1.0).unwrap();
        assert_eq!(g.len(), 4353);
        assert_eq!(g.intersection_count, 9);
        assert_eq!(g.len(), 3 * 1135 + 3 * 319 - g.intersection_count);

        let line = build_manhattan_grid(1, 0, 10.0, 0.0, 1.0).unwrap();
        assert_eq!(line.len(), 10);

        let small = build_manhattan_grid(2, 2, 5.0, 5.0, 1.0).unwrap();
        assert_eq!(small.len(), 16);
        assert_eq!(small.intersection_count, 4);
    }

    #[test]
    fn zero_spacing_is_invalid() {
        assert!(matches!(build_manhattan_grid(1, 1, 5.0, 5.0, 0.0), Err(CoverageError::InvalidConfig(_))));
    }

    #[test]
    fn ids_are_dense_and_coordinates_unique() {
        let g = build_manhattan_grid(3, 2, 40.0, 20.0, 2.0).unwrap();
        let mut coords = BTreeSet::new();
        for (k, p) in g.points().iter().enumerate() {
            assert_eq!(p.id as usize, k);
            assert!(coords.insert(((p.x * 10.0) as i64, (p.y * 10.0) as i64)));
        }
    }

    #[test]
    fn radius_on_straight_road() {
        let g = line_grid(20);
        assert_eq!(g.within_radius(10, 3.0).len(), 7);
        assert_eq!(g.within_radius(0, 3.0).len(), 4);
    }

    #[test]
    fn table_round_trip() {
        let g = build_manhattan_grid(2, 2, 7.0, 5.0, 1.0).unwrap();
        let mut buf = Vec::new();
        g.write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,x,y\n0,"));
        let back = AoiGrid::read_table(buf.as_slice(), 1.0).unwrap();
        assert_eq!(back.points(), g.points());
    }

    #[test]
    fn covered_set_tracks_marginals() {
        let mut set = CoveredSet::new(130);
        let a = SensingProfile::new([0, 64, 129]);
        assert_eq!(set.marginal(&a), 3);
        assert_eq!(set.insert(&a), 3);
        assert_eq!(set.marginal(&SensingProfile::new([0, 1])), 1);
        assert_eq!(set.count(), 3);
    }
}
