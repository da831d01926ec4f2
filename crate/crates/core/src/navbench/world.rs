use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NavError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitialBelief {
    KnownStart,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Cells per section side.
    pub section_dim: usize,
    /// Sections per room side.
    pub room_dim: usize,
    /// Rooms per building side.
    pub building_dim: usize,
    pub num_buildings: usize,
    pub kernel_sigma: f64,
    pub initial_belief: InitialBelief,
    /// Seeds door placement.
    pub seed: u64,
}

impl EnvConfig {
    pub fn new(dims: (usize, usize, usize), sigma: f64, initial_belief: InitialBelief, seed: u64) -> Self {
        Self {
            section_dim: dims.0,
            room_dim: dims.1,
            building_dim: dims.2,
            num_buildings: 2,
            kernel_sigma: sigma,
            initial_belief,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), NavError> {
        if self.section_dim == 0 || self.room_dim == 0 || self.building_dim == 0 || self.num_buildings == 0 {
            return Err(NavError::InvalidConfig("all dimensions must be at least 1".into()));
        }
        if !(self.kernel_sigma > 0.0 && self.kernel_sigma.is_finite()) {
            return Err(NavError::InvalidConfig(format!("kernel sigma {} must be positive", self.kernel_sigma)));
        }
        Ok(())
    }

    pub fn room_side(&self) -> usize {
        self.section_dim * self.room_dim
    }

    pub fn building_side(&self) -> usize {
        self.room_side() * self.building_dim
    }

    pub fn n_cells(&self) -> usize {
        self.building_side() * self.building_side() * self.num_buildings
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.section_dim, self.room_dim, self.building_dim)
    }
}

/// One row of the configuration table: experiment set and configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigRow {
    pub set: u8,
    pub config: EnvConfig,
}

/// The three experiment sets: sigma sweeps with known and uniform start, then
/// a size sweep at sigma 0.2.
pub fn table2(world_seed: u64) -> Vec<ConfigRow> {
    let sigmas = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
    let mut rows = Vec::new();
    for (set, init) in [(1, InitialBelief::KnownStart), (2, InitialBelief::Uniform)] {
        for &s in &sigmas {
            rows.push(ConfigRow { set, config: EnvConfig::new((2, 2, 2), s, init, world_seed) });
        }
    }
    for dims in [(2, 2, 2), (3, 2, 2), (3, 3, 2), (3, 3, 3)] {
        rows.push(ConfigRow { set: 3, config: EnvConfig::new(dims, 0.2, InitialBelief::KnownStart, world_seed) });
    }
    rows
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dir {
    Up,
    Down,
    Left,
    Right,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::Up, Dir::Down, Dir::Left, Dir::Right];

    pub fn name(self) -> &'static str {
        match self {
            Dir::Up => "up",
            Dir::Down => "down",
            Dir::Left => "left",
            Dir::Right => "right",
        }
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Dir::Up => (0, 1),
            Dir::Down => (0, -1),
            Dir::Left => (-1, 0),
            Dir::Right => (1, 0),
        }
    }

    fn relation(self) -> &'static str {
        match self {
            Dir::Up => "is_above",
            Dir::Down => "is_below",
            Dir::Left => "is_at_left",
            Dir::Right => "is_at_right",
        }
    }
}

/// Buildings side by side along x; cell `c` sits at `(c % width, c / width)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    pub config: EnvConfig,
    pub width: usize,
    pub height: usize,
    /// Blocked edges between adjacent cells, as `(lower index, higher index)`.
    pub walls: BTreeSet<(usize, usize)>,
    /// Open edges crossing a room or building frame.
    pub doors: BTreeSet<(usize, usize)>,
}

fn edge(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl GridWorld {
    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn xy(&self, c: usize) -> (usize, usize) {
        (c % self.width, c / self.width)
    }

    fn offset(&self, c: usize, dx: isize, dy: isize) -> Option<usize> {
        let (x, y) = self.xy(c);
        let nx = x.checked_add_signed(dx).filter(|&v| v < self.width)?;
        let ny = y.checked_add_signed(dy).filter(|&v| v < self.height)?;
        Some(self.cell(nx, ny))
    }

    /// Cell reached by moving one step, if the edge is open.
    pub fn step(&self, c: usize, d: Dir) -> Option<usize> {
        let (dx, dy) = d.delta();
        self.offset(c, dx, dy).filter(|&n| !self.walls.contains(&edge(c, n)))
    }

    pub fn open_neighbors(&self, c: usize) -> Vec<usize> {
        Dir::ALL.iter().filter_map(|&d| self.step(c, d)).collect()
    }

    pub fn is_open(&self, a: usize, b: usize) -> bool {
        self.open_neighbors(a).contains(&b)
    }

    pub fn section_of(&self, c: usize) -> (usize, usize) {
        let (x, y) = self.xy(c);
        (x / self.config.section_dim, y / self.config.section_dim)
    }

    pub fn room_of(&self, c: usize) -> (usize, usize) {
        let (x, y) = self.xy(c);
        (x / self.config.room_side(), y / self.config.room_side())
    }

    pub fn building_of(&self, c: usize) -> usize {
        self.xy(c).0 / self.config.building_side()
    }

    pub fn cells_of_building(&self, b: usize) -> Vec<usize> {
        (0..self.n_cells()).filter(|&c| self.building_of(c) == b).collect()
    }

    pub fn cell_label(&self, c: usize) -> String {
        let (x, y) = self.xy(c);
        format!("c{x}_{y}")
    }

    pub fn section_label(&self, c: usize) -> String {
        let (x, y) = self.section_of(c);
        format!("s{x}_{y}")
    }

    pub fn room_label(&self, c: usize) -> String {
        let (x, y) = self.room_of(c);
        format!("r{x}_{y}")
    }

    pub fn building_label(&self, c: usize) -> String {
        format!("b{}", self.building_of(c))
    }

    /// Whether the observation kernel at `c` reaches offset `(dx, dy)`: the
    /// target exists and some axis-aligned path of length `|dx| + |dy|` to it is open.
    pub fn kernel_reaches(&self, c: usize, dx: isize, dy: isize) -> Option<usize> {
        let target = self.offset(c, dx, dy)?;
        let open = |a: usize, b: Option<usize>| b.filter(|&b| !self.walls.contains(&edge(a, b)));
        let reachable = match (dx, dy) {
            (0, 0) => true,
            (_, 0) | (0, _) => open(c, Some(target)).is_some(),
            _ => {
                let via_x = open(c, self.offset(c, dx, 0)).and_then(|m| open(m, Some(target)));
                let via_y = open(c, self.offset(c, 0, dy)).and_then(|m| open(m, Some(target)));
                via_x.is_some() || via_y.is_some()
            }
        };
        reachable.then_some(target)
    }
}

/// `exp(-(dx² + dy²) / 2σ²)` on the 3×3 offsets, normalized; indexed `[dy + 1][dx + 1]`.
pub fn kernel_weights(sigma: f64) -> [[f64; 3]; 3] {
    let mut w = [[0.0; 3]; 3];
    let mut total = 0.0;
    for (j, row) in w.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let (dx, dy) = (i as f64 - 1.0, j as f64 - 1.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    w
}

const KERNEL_RELATIONS: [(&str, isize, isize); 9] = [
    ("obs_center", 0, 0),
    ("obs_n", 0, 1),
    ("obs_s", 0, -1),
    ("obs_e", 1, 0),
    ("obs_w", -1, 0),
    ("obs_ne", 1, 1),
    ("obs_nw", -1, 1),
    ("obs_se", 1, -1),
    ("obs_sw", -1, -1),
];

/// Builds the walls and doors for `cfg`.
pub fn generate_world(cfg: &EnvConfig) -> Result<GridWorld, NavError> {
    cfg.validate()?;
    let side = cfg.building_side();
    let mut world = GridWorld {
        config: cfg.clone(),
        width: side * cfg.num_buildings,
        height: side,
        walls: BTreeSet::new(),
        doors: BTreeSet::new(),
    };
    // Frame edges grouped by the pair of regions they separate.
    let mut frames: BTreeMap<(String, String), Vec<(usize, usize)>> = BTreeMap::new();
    for c in 0..world.n_cells() {
        for d in [Dir::Right, Dir::Up] {
            let Some(n) = world.offset(c, d.delta().0, d.delta().1) else { continue };
            let key = if world.building_of(c) != world.building_of(n) {
                (world.building_label(c), world.building_label(n))
            } else if world.room_of(c) != world.room_of(n) {
                (world.room_label(c), world.room_label(n))
            } else {
                continue;
            };
            frames.entry(key).or_default().push(edge(c, n));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for edges in frames.values() {
        let door = *edges.choose(&mut rng).expect("frames are nonempty");
        world.doors.insert(door);
        world.walls.extend(edges.iter().copied().filter(|&e| e != door));
    }
    Ok(world)
}

/// Breadth-first distance over open edges.
pub fn shortest_path(world: &GridWorld, from: usize, to: usize) -> Result<usize, NavError> {
    let n = world.n_cells();
    if from >= n || to >= n {
        return Err(NavError::Unreachable(from, to));
    }
    let mut dist = vec![usize::MAX; n];
    dist[from] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        if c == to {
            return Ok(dist[c]);
        }
        for m in world.open_neighbors(c) {
            if dist[m] == usize::MAX {
                dist[m] = dist[c] + 1;
                queue.push_back(m);
            }
        }
    }
    Err(NavError::Unreachable(from, to))
}

/// General and specific knowledge documents describing `world`.
pub fn knowledge_base_text(world: &GridWorld) -> (String, String) {
    let w = kernel_weights(world.config.kernel_sigma);
    let mut g = String::new();
    g.push_str("# navigation skill of a wheeled robot on a grid\nmodule navigation\nvar robot_loc\n");
    for d in Dir::ALL {
        writeln!(g, "action {} modifies robot_loc", d.name()).unwrap();
    }
    g.push_str("rel current_cell vv over robot_loc\n");
    for d in Dir::ALL {
        writeln!(g, "rel {} vv over robot_loc", d.relation()).unwrap();
    }
    for d in Dir::ALL {
        writeln!(g, "rel blocked_{} vv over robot_loc", d.name()).unwrap();
    }
    for (rel, _, _) in KERNEL_RELATIONS {
        writeln!(g, "rel {rel} vo over robot_loc").unwrap();
    }
    for d in Dir::ALL {
        writeln!(g, "trans {} rel current_cell 0.1", d.name()).unwrap();
        writeln!(g, "trans {} rel {} 0.9", d.name(), d.relation()).unwrap();
    }
    for d in Dir::ALL {
        for (rel, dx, dy) in KERNEL_RELATIONS {
            let p = w[(dy + 1) as usize][(dx + 1) as usize];
            writeln!(g, "obs {} rel {rel} {p}", d.name()).unwrap();
        }
    }
    g.push_str("hier over robot_loc\n");
    for d in Dir::ALL {
        writeln!(g, "exec-forbid {0} when blocked_{0}", d.name()).unwrap();
    }

    let n = world.n_cells();
    let cells: Vec<String> = (0..n).map(|c| world.cell_label(c)).collect();
    let mut s = String::new();
    writeln!(s, "values robot_loc {}", cells.join(" ")).unwrap();
    writeln!(s, "observations robot_loc {}", cells.join(" ")).unwrap();
    let mut abstract_ids: Vec<String> = Vec::new();
    let mut hpairs: Vec<(String, String)> = Vec::new();
    let mut seen = BTreeSet::new();
    let levels: [&dyn Fn(usize) -> String; 4] = [
        &|c| world.cell_label(c),
        &|c| world.section_label(c),
        &|c| world.room_label(c),
        &|c| world.building_label(c),
    ];
    for k in 1..levels.len() {
        for c in 0..n {
            let (child, parent) = (levels[k - 1](c), levels[k](c));
            if seen.insert(parent.clone()) {
                abstract_ids.push(parent.clone());
            }
            if seen.insert(format!("{child}->{parent}")) {
                hpairs.push((child, parent));
            }
        }
    }
    writeln!(s, "abstract {}", abstract_ids.join(" ")).unwrap();
    for c in 0..n {
        writeln!(s, "pair current_cell {0} {0}", cells[c]).unwrap();
    }
    for d in Dir::ALL {
        for c in 0..n {
            if let Some(m) = world.step(c, d) {
                writeln!(s, "pair {} {} {}", d.relation(), cells[c], cells[m]).unwrap();
            }
        }
    }
    for d in Dir::ALL {
        for c in 0..n {
            if world.step(c, d).is_none() {
                writeln!(s, "pair blocked_{} {1} {1}", d.name(), cells[c]).unwrap();
            }
        }
    }
    for (rel, dx, dy) in KERNEL_RELATIONS {
        for c in 0..n {
            if let Some(t) = world.kernel_reaches(c, dx, dy) {
                writeln!(s, "pair {rel} {} {}", cells[c], cells[t]).unwrap();
            }
        }
    }
    for (child, parent) in hpairs {
        writeln!(s, "hpair {child} {parent}").unwrap();
    }
    (g, s)
}
