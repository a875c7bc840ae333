//! Food heightfield over the bowl interior.
//!
//! Each 5 mm cell stores food mass in grams; its surface height follows
//! from the density. Cells outside the bowl circle are not stored.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::perception::food::{BowlGeometry, FoodCloud};

/// Grams per cubic meter of yogurt-like food.
pub const DEFAULT_DENSITY: f64 = 1.03e6;

/// A raised bump of food, heights in meters, bowl-frame center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mound {
    pub center: [f64; 2],
    pub radius: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoodSpec {
    /// Flat layer height, meters.
    #[serde(default)]
    pub uniform_height: f64,
    #[serde(default)]
    pub mounds: Vec<Mound>,
    #[serde(default = "default_cell")]
    pub cell_size: f64,
    #[serde(default = "default_density")]
    pub density: f64,
}

fn default_cell() -> f64 {
    0.005
}

fn default_density() -> f64 {
    DEFAULT_DENSITY
}

impl Default for FoodSpec {
    fn default() -> Self {
        Self {
            uniform_height: 0.015,
            mounds: Vec::new(),
            cell_size: default_cell(),
            density: default_density(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodField {
    pub cell_size: f64,
    pub density: f64,
    /// Bowl-frame horizontal cell centers.
    pub centers: Vec<[f64; 2]>,
    /// Grams per cell.
    pub mass: Vec<f64>,
}

/// How a utensil removes food.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoopParams {
    /// Footprint radius around the site, meters.
    pub footprint: f64,
    /// Fraction of each footprint cell's mass taken before the cap.
    pub fraction: f64,
    /// Soft capacity, grams; the take never exceeds it.
    pub capacity: f64,
}

impl FoodField {
    pub fn empty(radius: f64, cell_size: f64, density: f64) -> Self {
        let n = (2.0 * radius / cell_size).ceil() as i64;
        let mut centers = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let x = -radius + (i as f64 + 0.5) * cell_size;
                let y = -radius + (j as f64 + 0.5) * cell_size;
                if x * x + y * y <= radius * radius {
                    centers.push([x, y]);
                }
            }
        }
        let mass = vec![0.0; centers.len()];
        Self { cell_size, density, centers, mass }
    }

    pub fn from_spec(spec: &FoodSpec, bowl: &BowlGeometry) -> Self {
        let mut f = Self::empty(bowl.radius(), spec.cell_size, spec.density);
        let max_h = bowl.guard_height;
        for k in 0..f.centers.len() {
            let [x, y] = f.centers[k];
            let mut h = spec.uniform_height;
            for m in &spec.mounds {
                let d2 = (x - m.center[0]).powi(2) + (y - m.center[1]).powi(2);
                h += m.height * (-d2 / (m.radius * m.radius)).exp();
            }
            f.mass[k] = h.clamp(0.0, max_h) * f.grams_per_meter();
        }
        f
    }

    /// Grams corresponding to one meter of height in one cell.
    pub fn grams_per_meter(&self) -> f64 {
        self.density * self.cell_size * self.cell_size
    }

    pub fn height(&self, k: usize) -> f64 {
        self.mass[k] / self.grams_per_meter()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn nearest_cell(&self, local: &Vec3) -> Option<usize> {
        self.centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, (c[0] - local.x).powi(2) + (c[1] - local.y).powi(2)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
    }

    /// Surface height under a bowl-frame location, or 0 off the grid.
    pub fn surface_at(&self, local: &Vec3) -> f64 {
        let half = 0.5 * self.cell_size;
        self.centers
            .iter()
            .position(|c| (c[0] - local.x).abs() <= half && (c[1] - local.y).abs() <= half)
            .map_or(0.0, |k| self.height(k))
    }

    /// Removes food around a bowl-frame site; returns the grams taken.
    ///
    /// The raw take is `fraction` of every footprint cell. It is passed
    /// through `C(1 - exp(-raw/C))`, which stays below capacity `C` and is
    /// strictly increasing, so repeated scoops at one site strictly shrink.
    pub fn scoop(&mut self, local: &Vec3, radius: f64, params: &ScoopParams) -> f64 {
        if local.x * local.x + local.y * local.y > radius * radius {
            return 0.0;
        }
        let cells: Vec<usize> = (0..self.centers.len())
            .filter(|&k| {
                let c = self.centers[k];
                (c[0] - local.x).powi(2) + (c[1] - local.y).powi(2) <= params.footprint * params.footprint
            })
            .collect();
        let raw: f64 = cells.iter().map(|&k| params.fraction * self.mass[k]).sum();
        if raw <= 0.0 {
            return 0.0;
        }
        let taken = params.capacity * (1.0 - (-raw / params.capacity).exp());
        let scale = taken / raw;
        let mut moved = 0.0;
        for &k in &cells {
            let dm = params.fraction * self.mass[k] * scale;
            self.mass[k] -= dm;
            moved += dm;
        }
        moved
    }

    /// Deposits grams into the cell nearest a bowl-frame location.
    pub fn deposit(&mut self, local: &Vec3, grams: f64) {
        if let Some(k) = self.nearest_cell(local) {
            self.mass[k] += grams;
        }
    }

    /// One world-frame point per nonempty cell at its surface center, with
    /// isotropic Gaussian noise.
    pub fn render_cloud<R: Rng>(&self, bowl: &BowlGeometry, noise_sigma: f64, rng: &mut R) -> FoodCloud {
        let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
        let mut points = Vec::new();
        for k in 0..self.centers.len() {
            if self.mass[k] <= 0.0 {
                continue;
            }
            let [x, y] = self.centers[k];
            let mut p = bowl.to_world(&Vec3::new(x, y, self.height(k)));
            if noise_sigma > 0.0 {
                p += Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
            }
            points.push(p);
        }
        FoodCloud { points, bowl: *bowl }
    }
}
