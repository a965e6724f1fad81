//! Spatial model of where each command type is issued inside the airport
//! airspace. Addressed planes are drawn from their command's mixture,
//! everything else from the broad background. Greeting carries no spatial
//! signal: its mixture is the background itself.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CommandLabelSet, CommandType};

/// Airspace bounding box: 200 km x 200 km x 20 km centered on the airport.
pub const AIRSPACE_HALF_XY: f64 = 100_000.0;
pub const AIRSPACE_Z_MAX: f64 = 20_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub components: Vec<GaussianComponent>,
}

impl Mixture {
    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let comp = &self.components[rng.random_range(0..self.components.len())];
        sample_in_box(comp, rng)
    }
}

fn sample_in_box(comp: &GaussianComponent, rng: &mut ChaCha8Rng) -> [f64; 3] {
    for _ in 0..64 {
        let mut p = [0.0; 3];
        for axis in 0..3 {
            let normal = Normal::new(comp.mean[axis], comp.std[axis]).expect("positive std");
            p[axis] = normal.sample(rng);
        }
        if inside_box(p) {
            return p;
        }
    }
    // pathological component, clamp the last draw
    let mut p = comp.mean;
    p[0] = p[0].clamp(-AIRSPACE_HALF_XY, AIRSPACE_HALF_XY);
    p[1] = p[1].clamp(-AIRSPACE_HALF_XY, AIRSPACE_HALF_XY);
    p[2] = p[2].clamp(0.0, AIRSPACE_Z_MAX);
    p
}

pub fn inside_box(p: [f64; 3]) -> bool {
    p[0].abs() <= AIRSPACE_HALF_XY && p[1].abs() <= AIRSPACE_HALF_XY && (0.0..=AIRSPACE_Z_MAX).contains(&p[2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionModel {
    pub commands: BTreeMap<CommandType, Mixture>,
    pub background: Mixture,
}

impl RegionModel {
    /// Command regions over a generic airport: ground operations near the
    /// origin, approach corridors at low altitude, en-route maneuvers in
    /// rings further out and higher up.
    pub fn default_regions() -> Self {
        let ring = |radius: f64, z: f64, std_xy: f64, std_z: f64| -> Mixture {
            let components = (0..8)
                .map(|k| {
                    let angle = k as f64 * std::f64::consts::FRAC_PI_4;
                    GaussianComponent {
                        mean: [radius * angle.cos(), radius * angle.sin(), z],
                        std: [std_xy, std_xy, std_z],
                    }
                })
                .collect();
            Mixture { components }
        };
        let background = Mixture {
            components: vec![GaussianComponent {
                mean: [0.0, 0.0, 7_000.0],
                std: [45_000.0, 45_000.0, 4_000.0],
            }],
        };
        let mut commands = BTreeMap::new();
        commands.insert(
            CommandType::Taxi,
            Mixture {
                components: vec![
                    GaussianComponent { mean: [-1_500.0, 800.0, 250.0], std: [1_000.0, 1_000.0, 100.0] },
                    GaussianComponent { mean: [1_500.0, -800.0, 250.0], std: [1_000.0, 1_000.0, 100.0] },
                ],
            },
        );
        commands.insert(
            CommandType::Clearing,
            Mixture {
                components: vec![
                    GaussianComponent { mean: [6_000.0, 0.0, 600.0], std: [4_000.0, 1_500.0, 250.0] },
                    GaussianComponent { mean: [-6_000.0, 0.0, 600.0], std: [4_000.0, 1_500.0, 250.0] },
                ],
            },
        );
        commands.insert(
            CommandType::Ils,
            Mixture {
                components: vec![
                    GaussianComponent { mean: [12_000.0, 0.0, 2_000.0], std: [6_000.0, 1_800.0, 450.0] },
                    GaussianComponent { mean: [-12_000.0, 0.0, 2_000.0], std: [6_000.0, 1_800.0, 450.0] },
                ],
            },
        );
        commands.insert(CommandType::Vertical, ring(40_000.0, 5_000.0, 8_000.0, 1_400.0));
        commands.insert(CommandType::Horizontal, ring(65_000.0, 8_000.0, 10_000.0, 1_900.0));
        commands.insert(CommandType::Greeting, background.clone());
        RegionModel { commands, background }
    }

    pub fn mixture(&self, command: CommandType) -> &Mixture {
        &self.commands[&command]
    }

    /// Position of an addressed plane: uniform over the given commands'
    /// mixtures. An empty set means no spatial signal (background).
    pub fn sample_position(&self, commands: &CommandLabelSet, rng: &mut ChaCha8Rng) -> [f64; 3] {
        if commands.is_empty() {
            return self.background.sample(rng);
        }
        let picked: Vec<CommandType> = commands.iter().copied().collect();
        let cmd = picked[rng.random_range(0..picked.len())];
        self.mixture(cmd).sample(rng)
    }

    pub fn sample_background(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        self.background.sample(rng)
    }
}
